#include <doctest.h>

#include <cmarl/environment.hpp>
#include <cmarl/geometry.hpp>
#include <cmarl/metrics.hpp>

#include <cmath>
#include <random>

using namespace cmarl::env;
using cmarl::geom::BinaryMask;
using cmarl::geom::BoundingBox;
using cmarl::geom::Contour;

namespace {

FeatureGrid ramp_grid(int w, int h) {
    FeatureGrid g(w, h, 1);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) g.at(0, r, c) = static_cast<double>(c);
    return g;
}

BinaryMask disc_mask(int size, double cx, double cy, double rad) {
    BinaryMask m(size, size);
    for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
            const double dx = c + 0.5 - cx, dy = r + 0.5 - cy;
            m.set(c, r, dx * dx + dy * dy < rad * rad);
        }
    return m;
}

FeatureGrid mask_grid(const BinaryMask& m) {
    FeatureGrid g(m.width, m.height, 4);
    for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) g.at(0, r, c) = m.at(c, r) ? 0.8 : 0.2;
    return g;
}

EpisodeState disc_episode(int size = 48) {
    const BinaryMask gt = disc_mask(size, size / 2.0, size / 2.0, size / 3.0);
    const BoundingBox box{size / 2.0 - size / 3.0, size / 2.0 - size / 3.0,
                          size / 2.0 + size / 3.0, size / 2.0 + size / 3.0};
    EnvConfig cfg;
    Contour init = cmarl::geom::uniform_resample(cmarl::geom::octagon_from_bbox(box), 32);
    return EpisodeState(std::move(init), gt, mask_grid(gt), cfg);
}

}  // namespace

TEST_SUITE("environment") {

TEST_CASE("bilinear sampling reproduces a linear ramp exactly") {
    const FeatureGrid g = ramp_grid(16, 16);
    CHECK(g.sample(0, 3.25, 7.9) == doctest::Approx(3.25).epsilon(1e-12));
    CHECK(g.sample(0, 0.0, 0.0) == doctest::Approx(0.0));
    CHECK(g.sample(0, 14.5, 2.0) == doctest::Approx(14.5));
}

TEST_CASE("bilinear sampling clamps at the border") {
    const FeatureGrid g = ramp_grid(8, 8);
    CHECK(g.sample(0, -5.0, 3.0) == doctest::Approx(0.0));
    CHECK(g.sample(0, 50.0, 3.0) == doctest::Approx(7.0));
    CHECK(g.sample(0, 3.0, -9.0) == doctest::Approx(3.0));
}

TEST_CASE("sinusoidal embedding layout and bounds") {
    CHECK_THROWS(sinusoidal_embed({1.0, 2.0}, 6));
    const auto e = sinusoidal_embed({3.0, -1.5}, 8);
    REQUIRE(e.size() == 8);
    for (double v : e) CHECK(std::abs(v) <= 1.0);
    CHECK(e[0] == doctest::Approx(std::sin(3.0)));
    CHECK(e[1] == doctest::Approx(std::cos(3.0)));
    CHECK(e[4] == doctest::Approx(std::sin(-1.5)));
}

TEST_CASE("local features are all channels over the 5x5 lattice") {
    const FeatureGrid g = ramp_grid(32, 32);
    const auto f = extract_local_features(g, 10.0, 12.0, 4.0);
    REQUIRE(f.size() == 25);
    CHECK(f[0] == doctest::Approx(6.0));   // (x-r, y-r)
    CHECK(f[12] == doctest::Approx(10.0));  // center
    CHECK(f[24] == doctest::Approx(14.0));
}

TEST_CASE("clamp_action caps the norm and keeps direction") {
    const Vec2 a = clamp_action({30.0, 40.0}, 25.0);
    CHECK(std::hypot(a.x, a.y) == doctest::Approx(25.0));
    CHECK(a.x / a.y == doctest::Approx(30.0 / 40.0));
    const Vec2 b = clamp_action({3.0, -4.0}, 25.0);
    CHECK(b.x == 3.0);
    CHECK(b.y == -4.0);
}

TEST_CASE("build_states wires cyclic neighbors and flattens to the declared width") {
    EpisodeState ep = disc_episode();
    const auto states = build_states(ep);
    REQUIRE(states.size() == ep.contour.size());
    const auto flat = states[0].flatten(48.0, 48.0);
    CHECK(flat.size() == 2 + 25 * 4 + 4 * 8);
    CHECK(flat[0] == doctest::Approx(states[0].coords.x / 48.0));
    CHECK(states[0].local_features.size() == 100);
    CHECK(states[0].neighbor_embed.size() == 32);
}

TEST_CASE("zero actions leave metric rewards at zero") {
    EpisodeState ep = disc_episode();
    const std::vector<Vec2> zeros(ep.contour.size(), Vec2{0.0, 0.0});
    const auto before = ep.contour.points();
    const StepResult res = step(ep, zeros);
    CHECK(res.r_region == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(res.r_boundary == doctest::Approx(0.0).epsilon(1e-12));
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(ep.contour[i].x == before[i].x);
        CHECK(ep.contour[i].y == before[i].y);
    }
}

TEST_CASE("reward streams telescope to the net metric change") {
    EpisodeState ep = disc_episode();
    const double miou0 = ep.prev_miou, mboundf0 = ep.prev_mboundf;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 2.0);
    double sum_region = 0.0, sum_boundary = 0.0;
    for (int t = 0; t < ep.config.horizon; ++t) {
        std::vector<Vec2> acts(ep.contour.size());
        for (auto& a : acts) a = {nd(rng), nd(rng)};
        const StepResult res = step(ep, acts);
        sum_region += res.r_region;
        sum_boundary += res.r_boundary;
        if (t + 1 == ep.config.horizon) {
            CHECK(res.done);
            CHECK(sum_region ==
                  doctest::Approx(ep.config.weights.w1 * (res.miou - miou0)).epsilon(1e-9));
            CHECK(sum_boundary ==
                  doctest::Approx(ep.config.weights.w2 * (res.mboundf - mboundf0))
                      .epsilon(1e-9));
        }
    }
}

TEST_CASE("cooperation reward is never positive and vanishes on coincident agents") {
    EpisodeState ep = disc_episode();
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0.0, 3.0);
    std::vector<Vec2> acts(ep.contour.size());
    for (auto& a : acts) a = {nd(rng), nd(rng)};
    const StepResult res = step(ep, acts);
    CHECK(res.r_coop_mean <= 0.0);

    const BinaryMask gt = disc_mask(32, 16, 16, 8);
    EnvConfig cfg;
    Contour degenerate({{10.0, 10.0}, {10.0, 10.0}, {10.0, 10.0}, {10.0, 10.0}});
    EpisodeState ep2(std::move(degenerate), gt, mask_grid(gt), cfg);
    const StepResult res2 = step(ep2, std::vector<Vec2>(4, Vec2{0.0, 0.0}));
    CHECK(res2.r_coop_mean == 0.0);
}

TEST_CASE("post-step displacement never exceeds delta") {
    EpisodeState ep = disc_episode();
    const auto before = ep.contour.points();
    std::vector<Vec2> wild(ep.contour.size(), Vec2{100.0, -70.0});
    step(ep, wild);
    for (std::size_t i = 0; i < before.size(); ++i) {
        const double moved = cmarl::geom::dist(before[i], ep.contour[i]);
        CHECK(moved <= ep.config.delta + 1e-12);
    }
}

TEST_CASE("rewards are translation equivariant") {
    const int size = 48;
    auto run = [size](double off) {
        const BinaryMask gt = disc_mask(size, 20.0 + off, 20.0 + off, 9.0);
        const BoundingBox box{11.0 + off, 11.0 + off, 29.0 + off, 29.0 + off};
        EnvConfig cfg;
        Contour init =
            cmarl::geom::uniform_resample(cmarl::geom::octagon_from_bbox(box), 24);
        EpisodeState ep(std::move(init), gt, mask_grid(gt), cfg);
        std::vector<Vec2> acts(24, Vec2{1.5, -0.5});
        return step(ep, acts);
    };
    const StepResult a = run(0.0), b = run(7.0);
    CHECK(a.r_region == doctest::Approx(b.r_region).epsilon(1e-12));
    CHECK(a.r_boundary == doctest::Approx(b.r_boundary).epsilon(1e-12));
    CHECK(a.r_coop_mean == doctest::Approx(b.r_coop_mean).epsilon(1e-12));
}

TEST_CASE("reward_init scores the box region against the mask") {
    const BinaryMask gt = disc_mask(32, 16, 16, 10);
    const BoundingBox box{6, 6, 26, 26};
    const double r = reward_init(box, gt, {});
    CHECK(r > 0.0);
    CHECK(r <= 0.5);
    const BinaryMask box_mask = cmarl::geom::rasterize(
        Contour({{6, 6}, {26, 6}, {26, 26}, {6, 26}}), 32, 32);
    CHECK(r == doctest::Approx(0.5 * cmarl::metrics::dice(box_mask, gt)));
}

TEST_CASE("step rejects malformed actions") {
    EpisodeState ep = disc_episode();
    CHECK_THROWS(step(ep, std::vector<Vec2>(3, Vec2{0, 0})));
    std::vector<Vec2> bad(ep.contour.size(), Vec2{0, 0});
    bad[0].x = std::nan("");
    CHECK_THROWS(step(ep, bad));
}

TEST_CASE("run_episode records one trace entry per step and is deterministic") {
    auto policy = [](const std::vector<AgentState>& states) {
        std::vector<Vec2> acts(states.size());
        for (std::size_t i = 0; i < states.size(); ++i)
            acts[i] = {std::sin(static_cast<double>(i)), std::cos(static_cast<double>(i))};
        return acts;
    };
    const EpisodeResult r1 = run_episode(disc_episode(), policy, true);
    const EpisodeResult r2 = run_episode(disc_episode(), policy, true);
    REQUIRE(r1.trace.entries.size() == 5);
    CHECK(r1.report.mdice == r2.report.mdice);
    for (std::size_t i = 0; i < r1.final_contour.size(); ++i) {
        CHECK(r1.final_contour[i].x == r2.final_contour[i].x);
        CHECK(r1.final_contour[i].y == r2.final_contour[i].y);
    }

    const EpisodeResult z = run_episode(
        disc_episode(),
        [](const std::vector<AgentState>& s) { return std::vector<Vec2>(s.size()); }, false);
    CHECK(z.trace.entries.empty());
}

}  // TEST_SUITE
