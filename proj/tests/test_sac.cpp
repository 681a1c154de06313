#include <doctest.h>

#include <cmarl/checkpoint.hpp>
#include <cmarl/sac.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace cmarl::sac;
using cmarl::diff::Tensor;
namespace fs = std::filesystem;

namespace {

SacConfig tiny_config() {
    SacConfig cfg;
    cfg.d_h = 4;
    cfg.layers = 1;
    cfg.window = 4;
    cfg.head_hidden = 6;
    cfg.critic_hidden = 6;
    cfg.k_neighbors = 2;
    cfg.embed_dim = 4;
    cfg.n_points = 8;
    cfg.horizon_t = 2;
    cfg.batch_k = 8;
    cfg.epochs = 1;
    cfg.seed = 3;
    return cfg;
}

Transition make_transition(std::mt19937_64& rng, std::size_t dim, bool terminal) {
    std::normal_distribution<double> nd;
    Transition t;
    t.s.resize(dim);
    t.s_next.resize(dim);
    for (auto& v : t.s) v = nd(rng);
    for (auto& v : t.s_next) v = nd(rng);
    t.ax = nd(rng);
    t.ay = nd(rng);
    t.r = nd(rng);
    t.terminal = terminal;
    return t;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    return p;
}

std::string build_tiny_corpus(const std::string& name) {
    const auto dir = fresh_dir(name);
    return cmarl::synth::build_corpus(6, {cmarl::synth::ShapeKind::Ellipse}, 48, 21,
                                      dir.string());
}

std::vector<std::string> log_lines(const std::string& path) {
    std::ifstream in(path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(line);
    return lines;
}

}  // namespace

TEST_SUITE("sac") {

TEST_CASE("replay buffer evicts oldest entries first") {
    ReplayBuffer buf(4, 9);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 6; ++i) {
        Transition t = make_transition(rng, 3, false);
        t.r = static_cast<double>(i);
        buf.push(std::move(t));
    }
    CHECK(buf.size() == 4);
    const auto batch = buf.sample(64);
    for (const Transition* t : batch) CHECK(t->r >= 2.0);  // 0 and 1 evicted
}

TEST_CASE("replay sampling is seed deterministic and samples with replacement") {
    std::mt19937_64 rng(2);
    ReplayBuffer a(16, 77), b(16, 77);
    for (int i = 0; i < 3; ++i) {
        const Transition t = make_transition(rng, 2, false);
        a.push(t);
        b.push(t);
    }
    const auto ba = a.sample(8), bb = b.sample(8);
    REQUIRE(ba.size() == 8);  // k > size works via replacement
    for (std::size_t i = 0; i < 8; ++i) CHECK(ba[i]->r == bb[i]->r);
}

TEST_CASE("adaptive entropy coefficient") {
    CHECK(eram_alpha(0.2, 0.5, 0.0) == doctest::Approx(0.2));
    CHECK(eram_alpha(0.2, 0.5, 2.0) == doctest::Approx(0.1));
    CHECK(eram_alpha(0.4, 1.0, 3.0) == doctest::Approx(0.1));
    CHECK_THROWS(eram_alpha(0.0, 0.5, 1.0));
    CHECK_THROWS(eram_alpha(0.2, -0.1, 1.0));
    CHECK_THROWS(eram_alpha(0.2, 0.5, -1.0));
}

TEST_CASE("cosine schedule hits both endpoints and the midpoint mean") {
    CHECK(cosine_lr(1e-3, 1e-5, 0, 100) == doctest::Approx(1e-3));
    CHECK(cosine_lr(1e-3, 1e-5, 100, 100) == doctest::Approx(1e-5));
    CHECK(cosine_lr(1e-3, 1e-5, 50, 100) == doctest::Approx((1e-3 + 1e-5) / 2.0));
    CHECK(cosine_lr(1e-3, 1e-5, 40, 100) > cosine_lr(1e-3, 1e-5, 60, 100));
}

TEST_CASE("config files roundtrip and unknown keys are rejected") {
    SacConfig cfg = tiny_config();
    cfg.gamma_discount = 0.9;
    cfg.lr_start = 0.25;
    cfg.demo_period = 4;
    cfg.explore_period = 8;
    const auto dir = fresh_dir("cmarl_sac_cfg");
    fs::create_directories(dir);
    const std::string path = (dir / "c.cfg").string();
    cfg.write(path);
    const SacConfig back = SacConfig::parse_file(path);
    CHECK(back.gamma_discount == cfg.gamma_discount);
    CHECK(back.lr_start == cfg.lr_start);
    CHECK(back.d_h == cfg.d_h);
    CHECK(back.n_points == cfg.n_points);
    CHECK(back.seed == cfg.seed);
    CHECK(back.demo_period == cfg.demo_period);
    CHECK(back.explore_period == cfg.explore_period);

    std::ofstream(path, std::ios::app) << "mystery_knob = 7\n";
    CHECK_THROWS_AS((void)SacConfig::parse_file(path), std::invalid_argument);
    CHECK_THROWS((void)SacConfig::parse_file((dir / "absent.cfg").string()));
    fs::remove_all(dir);
}

TEST_CASE("state width follows the feature layout") {
    const SacConfig cfg;  // defaults
    CHECK(cfg.state_dim() == 2 + 25 * 4 + 4 * 8);
    SacConfig t = tiny_config();
    CHECK(t.state_dim() == 2 + 25 * 4 + 2 * 4);
}

TEST_CASE("terminal targets reduce to the reward") {
    SacConfig cfg = tiny_config();
    Trainer tr(cfg);
    std::mt19937_64 rng(5);
    std::vector<Transition> owned;
    std::vector<const Transition*> batch;
    for (int i = 0; i < 4; ++i)
        owned.push_back(make_transition(rng, cfg.state_dim(), i % 2 == 0));
    for (const auto& t : owned) batch.push_back(&t);
    const TargetBatch tb = compute_target(batch, tr, 0.1, rng);
    REQUIRE(tb.y.rows() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        if (owned[i].terminal) CHECK(tb.y.at(i, 0) == owned[i].r);
}

TEST_CASE("checkpoints roundtrip and reject a different architecture") {
    SacConfig cfg = tiny_config();
    Trainer tr(cfg);
    const auto dir = fresh_dir("cmarl_sac_ckpt");
    fs::create_directories(dir);
    const std::string path = (dir / "ck.bin").string();
    tr.save_checkpoint(path, 7);

    Trainer other(cfg);
    // Same architecture, different seed: parameters differ before loading.
    other.cfg.seed = 99;
    Trainer fresh(other.cfg);
    CHECK(fresh.actor.head.w1.data() != tr.actor.head.w1.data());
    const int epoch = fresh.load_checkpoint(path, true);
    CHECK(epoch == 7);
    CHECK(fresh.actor.head.w1.data() == tr.actor.head.w1.data());
    CHECK(fresh.critics.q1.w1.data() == tr.critics.q1.w1.data());
    CHECK(fresh.critics.target2.w3.data() == tr.critics.target2.w3.data());

    SacConfig wide = tiny_config();
    wide.embed_dim = 8;  // changes state_dim
    Trainer mismatch(wide);
    CHECK_THROWS_AS(mismatch.load_checkpoint(path, false), cmarl::diff::CheckpointError);
    fs::remove_all(dir);
}

TEST_CASE("training produces artifacts, a log, and per-episode returns") {
    const std::string manifest_path = build_tiny_corpus("cmarl_sac_train");
    const auto manifest = cmarl::synth::load_manifest(manifest_path);
    SacConfig cfg = tiny_config();
    cfg.epochs = 2;
    const auto out = fresh_dir("cmarl_sac_out");
    const TrainResult res = train(cfg, manifest, out.string());
    const int train_shapes = 4;  // 6 shapes, eval split rounds up to 2
    CHECK(res.episodes == cfg.epochs * train_shapes);
    CHECK(res.episode_returns.size() == static_cast<std::size_t>(res.episodes));
    CHECK(fs::exists(out / "resolved.cfg"));
    CHECK(fs::exists(res.checkpoint_path));
    const auto lines = log_lines(res.log_path);
    REQUIRE(lines.size() == 3);  // header + one row per epoch
    CHECK(lines[0] == "epoch,miou,mdice,mboundf,alpha_mean,critic_loss,policy_loss");
    CHECK(lines[1].rfind("1,", 0) == 0);
    CHECK(lines[2].rfind("2,", 0) == 0);

    SUBCASE("resume continues the log without duplicate epochs") {
        SacConfig more = cfg;
        more.epochs = 3;
        const TrainResult res2 = train(more, manifest, out.string(), true);
        CHECK(res2.episodes == train_shapes);  // only the one remaining epoch
        const auto lines2 = log_lines(res2.log_path);
        REQUIRE(lines2.size() == 4);
        CHECK(lines2[3].rfind("3,", 0) == 0);
    }

    SUBCASE("evaluation and the baseline stay inside metric bounds") {
        EvalOptions opts;
        const auto rep = evaluate(res.checkpoint_path, cfg, manifest, opts);
        CHECK(rep.mdice >= 0.0);
        CHECK(rep.mdice <= 1.0);
        CHECK(rep.miou <= rep.mdice);
        const auto base = baseline_report(cfg, manifest, opts);
        CHECK(base.mdice > 0.0);
        CHECK(base.mdice <= 1.0);
    }
    fs::remove_all(out);
    fs::remove_all(fs::path(manifest_path).parent_path());
}

TEST_CASE("warmup episodes update the critic but leave the actor untouched") {
    const std::string manifest_path = build_tiny_corpus("cmarl_sac_warm");
    const auto manifest = cmarl::synth::load_manifest(manifest_path);
    SacConfig cfg = tiny_config();
    cfg.warmup_episodes = 1000;  // covers every episode of the run
    const auto out = fresh_dir("cmarl_sac_warm_out");
    const TrainResult res = train(cfg, manifest, out.string());
    const auto trained = cmarl::diff::load_tensors(res.checkpoint_path);
    Trainer fresh(cfg);
    CHECK(trained.at("actor.head.w1").data() == fresh.actor.head.w1.data());
    CHECK(trained.at("actor.head.b2").data() == fresh.actor.head.b2.data());
    CHECK(trained.at("critic1.w1").data() != fresh.critics.q1.w1.data());
    fs::remove_all(out);
    fs::remove_all(fs::path(manifest_path).parent_path());
}

TEST_CASE("demonstration interleave episodes still update the actor") {
    const std::string manifest_path = build_tiny_corpus("cmarl_sac_demo");
    const auto manifest = cmarl::synth::load_manifest(manifest_path);
    SacConfig cfg = tiny_config();
    cfg.demo_period = 1;  // every episode scripted, actor updates regardless
    const auto out = fresh_dir("cmarl_sac_demo_out");
    const TrainResult res = train(cfg, manifest, out.string());
    const auto trained = cmarl::diff::load_tensors(res.checkpoint_path);
    Trainer fresh(cfg);
    CHECK(trained.at("actor.head.w1").data() != fresh.actor.head.w1.data());
    fs::remove_all(out);
    fs::remove_all(fs::path(manifest_path).parent_path());
}

TEST_CASE("zero learning rate trains without touching the weights") {
    const std::string manifest_path = build_tiny_corpus("cmarl_sac_lr0");
    const auto manifest = cmarl::synth::load_manifest(manifest_path);
    SacConfig cfg = tiny_config();
    cfg.lr_start = 0.0;
    cfg.lr_end = 0.0;
    const auto out = fresh_dir("cmarl_sac_lr0_out");
    const TrainResult res = train(cfg, manifest, out.string());
    const auto trained = cmarl::diff::load_tensors(res.checkpoint_path);
    Trainer fresh(cfg);
    const auto dir = fresh_dir("cmarl_sac_lr0_ref");
    fs::create_directories(dir);
    const std::string ref_path = (dir / "ref.bin").string();
    fresh.save_checkpoint(ref_path, 0);
    const auto ref = cmarl::diff::load_tensors(ref_path);
    for (const auto& [name, tensor] : ref) {
        if (name.rfind("meta.", 0) == 0) continue;
        REQUIRE(trained.count(name) == 1);
        CHECK(trained.at(name).data() == tensor.data());
    }
    fs::remove_all(out);
    fs::remove_all(dir);
    fs::remove_all(fs::path(manifest_path).parent_path());
}

}  // TEST_SUITE
