#include <cmarl/environment.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace cmarl::env {

FeatureGrid::FeatureGrid(int w, int h, int c) : width(w), height(h), channels(c) {
    if (w < 1 || h < 1 || c < 1) throw std::invalid_argument("FeatureGrid: bad dims");
    values.assign(static_cast<std::size_t>(w) * h * c, 0.0);
}

double FeatureGrid::sample(int ch, double x, double y) const {
    const double gx = std::clamp(x, 0.0, static_cast<double>(width - 1));
    const double gy = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const int x0 = static_cast<int>(std::floor(gx));
    const int y0 = static_cast<int>(std::floor(gy));
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double fx = gx - x0;
    const double fy = gy - y0;
    const double v00 = at(ch, y0, x0), v01 = at(ch, y0, x1);
    const double v10 = at(ch, y1, x0), v11 = at(ch, y1, x1);
    return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
}

std::vector<double> AgentState::flatten(double image_w, double image_h) const {
    std::vector<double> out;
    out.reserve(2 + local_features.size() + neighbor_embed.size());
    out.push_back(coords.x / image_w);
    out.push_back(coords.y / image_h);
    out.insert(out.end(), local_features.begin(), local_features.end());
    out.insert(out.end(), neighbor_embed.begin(), neighbor_embed.end());
    return out;
}

EpisodeState::EpisodeState(Contour c, BinaryMask gt, FeatureGrid grid, EnvConfig cfg)
    : contour(std::move(c)), gt_mask(std::move(gt)), feature_grid(std::move(grid)),
      config(cfg) {
    const BinaryMask pred = geom::rasterize(contour, gt_mask.width, gt_mask.height);
    prev_miou = metrics::iou(pred, gt_mask);
    prev_mboundf = metrics::boundf(pred, gt_mask);
}

std::vector<double> sinusoidal_embed(Vec2 coords, int dim) {
    if (dim <= 0 || dim % 4 != 0)
        throw std::invalid_argument("sinusoidal_embed: dim must be divisible by 4");
    const int pairs = dim / 4;  // sin/cos pairs per axis
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(dim));
    for (double v : {coords.x, coords.y}) {
        for (int k = 0; k < pairs; ++k) {
            const double omega =
                std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(pairs));
            out.push_back(std::sin(v * omega));
            out.push_back(std::cos(v * omega));
        }
    }
    return out;
}

std::vector<double> extract_local_features(const FeatureGrid& grid, double x, double y,
                                           double r) {
    if (r <= 0.0) throw std::invalid_argument("extract_local_features: r must be > 0");
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(grid.channels) * 25);
    for (int ch = 0; ch < grid.channels; ++ch) {
        for (int iy = 0; iy < 5; ++iy) {
            for (int ix = 0; ix < 5; ++ix) {
                const double sx = x - r + 2.0 * r * ix / 4.0;
                const double sy = y - r + 2.0 * r * iy / 4.0;
                out.push_back(grid.sample(ch, sx, sy));
            }
        }
    }
    return out;
}

std::vector<AgentState> build_states(const EpisodeState& ep, int k_neighbors, int embed_dim) {
    if (k_neighbors <= 0 || k_neighbors % 2 != 0)
        throw std::invalid_argument("build_states: k_neighbors must be positive and even");
    const std::size_t n = ep.contour.size();
    std::vector<AgentState> states;
    states.reserve(n);
    const int half = k_neighbors / 2;
    for (std::size_t i = 0; i < n; ++i) {
        AgentState s;
        s.coords = ep.contour[i];
        s.local_features = extract_local_features(ep.feature_grid, s.coords.x, s.coords.y,
                                                  ep.config.feature_radius);
        s.neighbor_embed.reserve(static_cast<std::size_t>(k_neighbors) * embed_dim);
        // Relative offsets, predecessors nearest-first then successors.
        for (int d = 1; d <= half; ++d) {
            const Vec2 off = ep.contour.cyclic(static_cast<long long>(i) - d) - s.coords;
            const auto e = sinusoidal_embed(off, embed_dim);
            s.neighbor_embed.insert(s.neighbor_embed.end(), e.begin(), e.end());
        }
        for (int d = 1; d <= half; ++d) {
            const Vec2 off = ep.contour.cyclic(static_cast<long long>(i) + d) - s.coords;
            const auto e = sinusoidal_embed(off, embed_dim);
            s.neighbor_embed.insert(s.neighbor_embed.end(), e.begin(), e.end());
        }
        states.push_back(std::move(s));
    }
    return states;
}

std::vector<AgentState> build_states(const EpisodeState& ep) {
    return build_states(ep, ep.config.k_neighbors, ep.config.embed_dim);
}

Vec2 clamp_action(Vec2 a, double delta) {
    const double n = geom::norm(a);
    if (n <= delta) return a;
    return (delta / n) * a;
}

double reward_init(const BoundingBox& init_box, const BinaryMask& gt, const RewardWeights& w) {
    std::vector<Vec2> box_pts = {{init_box.x_min, init_box.y_min},
                                 {init_box.x_max, init_box.y_min},
                                 {init_box.x_max, init_box.y_max},
                                 {init_box.x_min, init_box.y_max}};
    const BinaryMask box_mask = geom::rasterize(Contour(std::move(box_pts)), gt.width, gt.height);
    return w.w0 * metrics::dice(box_mask, gt);
}

StepResult step(EpisodeState& ep, const std::vector<Vec2>& actions) {
    const std::size_t n = ep.contour.size();
    if (actions.size() != n) throw std::invalid_argument("step: action count mismatch");
    if (ep.t >= ep.config.horizon) throw std::logic_error("step: episode already done");
    for (const auto& a : actions)
        if (!std::isfinite(a.x) || !std::isfinite(a.y))
            throw std::invalid_argument("step: NaN action");

    const double W = ep.gt_mask.width, H = ep.gt_mask.height;
    std::vector<Vec2> moved(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2 a = clamp_action(actions[i], ep.config.delta);
        Vec2 p = ep.contour[i] + a;
        p.x = std::clamp(p.x, 0.0, W);
        p.y = std::clamp(p.y, 0.0, H);
        moved[i] = p;
    }
    ep.contour = Contour(moved);  // re-normalizes orientation

    const BinaryMask pred = geom::rasterize(ep.contour, ep.gt_mask.width, ep.gt_mask.height);
    StepResult res;
    res.miou = metrics::iou(pred, ep.gt_mask);
    res.mdice = metrics::dice(pred, ep.gt_mask);
    res.mboundf = metrics::boundf(pred, ep.gt_mask);

    const RewardWeights& w = ep.config.weights;
    res.r_region = w.w1 * (res.miou - ep.prev_miou);
    res.r_boundary = w.w2 * (res.mboundf - ep.prev_mboundf);

    const int half = ep.config.k_neighbors / 2;
    res.rewards.resize(n);
    double coop_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double disparity = 0.0;
        for (int d = 1; d <= half; ++d) {
            for (int sgn : {-1, 1}) {
                const long long j =
                    (static_cast<long long>(i) + sgn * d % static_cast<long long>(n) +
                     static_cast<long long>(n)) %
                    static_cast<long long>(n);
                const Vec2 q = moved[static_cast<std::size_t>(j)];
                const Vec2 dv = moved[i] - q;
                disparity += dv.x * dv.x + dv.y * dv.y;
            }
        }
        const double r_coop = -w.w3 * disparity;
        coop_sum += r_coop;
        res.rewards[i] = res.r_region + res.r_boundary + r_coop;
        if (ep.t == 0) res.rewards[i] += ep.init_reward;
    }
    res.r_coop_mean = coop_sum / static_cast<double>(n);

    ep.prev_miou = res.miou;
    ep.prev_mboundf = res.mboundf;
    ep.t += 1;
    res.done = (ep.t == ep.config.horizon);
    return res;
}

EpisodeResult run_episode(EpisodeState ep, const PolicyFn& policy, bool record) {
    Trace trace;
    trace.width = ep.gt_mask.width;
    trace.height = ep.gt_mask.height;
    StepResult last;
    for (int t = 0; t < ep.config.horizon; ++t) {
        const auto states = build_states(ep);
        const auto actions = policy(states);
        last = step(ep, actions);
        if (record) {
            trace.entries.push_back({ep.contour, last.miou, last.mdice, last.mboundf,
                                     last.r_region, last.r_boundary, last.r_coop_mean});
        }
    }
    const BinaryMask pred = geom::rasterize(ep.contour, ep.gt_mask.width, ep.gt_mask.height);
    EpisodeResult result{ep.contour, metrics::report({pred}, {ep.gt_mask}), std::move(trace)};
    return result;
}

}  // namespace cmarl::env
