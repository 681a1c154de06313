#include <cmarl/policy.hpp>

#include <cmath>
#include <stdexcept>

namespace cmarl::policy {

using namespace cmarl::diff;

namespace {

double inf_norm(const Tensor& m) {
    double worst = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) row += std::abs(m.at(i, j));
        worst = std::max(worst, row);
    }
    return worst;
}

}  // namespace

SsmBranchParams SsmBranchParams::init(std::size_t d_h, std::size_t d_in, std::size_t d_out,
                                      std::mt19937_64& rng) {
    SsmBranchParams p;
    p.A = randn({d_h, d_h}, rng, 1.0);
    const double n = inf_norm(p.A);
    if (n > 0.0) {
        for (auto& v : p.A.data()) v *= 0.7 / n;  // keep the decay proxy below 1
    }
    p.B = randn({d_h, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
    p.C_out = randn({d_out, d_h}, rng, 1.0 / std::sqrt(static_cast<double>(d_h)));
    p.D_skip = randn({d_out, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
    return p;
}

FusionParams FusionParams::init(std::size_t d_h, int window, std::mt19937_64& rng) {
    FusionParams f;
    const double s = 1.0 / std::sqrt(static_cast<double>(d_h));
    f.wq = randn({d_h, d_h}, rng, s);
    f.wk = randn({d_h, d_h}, rng, s);
    f.wv = randn({d_h, d_h}, rng, s);
    f.gamma = Tensor::scalar(0.1);
    f.window = window;
    return f;
}

HeadParams HeadParams::init(std::size_t d_in, std::size_t hidden, std::mt19937_64& rng) {
    HeadParams h;
    h.w1 = randn({d_in, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
    h.b1 = Tensor::zeros({hidden});
    h.w2 = randn({hidden, 4}, rng, 0.01);
    // Log-sigma bias starts low so the initial policy is near-identity:
    // sub-pixel exploration noise keeps early rollouts coherent and the
    // value targets at metric scale instead of runaway-scatter scale.
    h.b2 = Tensor({4}, {0.0, 0.0, -4.0, -4.0});
    return h;
}

PolicyParams PolicyParams::init(const PolicyConfig& cfg, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    PolicyParams p;
    p.cfg = cfg;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        const std::size_t d_in = l == 0 ? cfg.state_dim : cfg.d_h;
        LayerParams layer;
        layer.fwd = SsmBranchParams::init(cfg.d_h, d_in, cfg.d_h, rng);
        layer.bwd = SsmBranchParams::init(cfg.d_h, d_in, cfg.d_h, rng);
        layer.fusion = FusionParams::init(cfg.d_h, cfg.window, rng);
        p.layers.push_back(std::move(layer));
    }
    p.head = HeadParams::init(cfg.d_h, cfg.head_hidden, rng);
    return p;
}

void PolicyParams::visit(const std::function<void(const std::string&, Tensor&)>& fn) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".";
        for (auto dir : {std::make_pair("fwd.", &layers[l].fwd),
                         std::make_pair("bwd.", &layers[l].bwd)}) {
            fn(pre + dir.first + "A", dir.second->A);
            fn(pre + dir.first + "B", dir.second->B);
            fn(pre + dir.first + "C_out", dir.second->C_out);
            fn(pre + dir.first + "D_skip", dir.second->D_skip);
        }
        fn(pre + "fusion.wq", layers[l].fusion.wq);
        fn(pre + "fusion.wk", layers[l].fusion.wk);
        fn(pre + "fusion.wv", layers[l].fusion.wv);
        fn(pre + "fusion.gamma", layers[l].fusion.gamma);
    }
    fn("head.w1", head.w1);
    fn("head.b1", head.b1);
    fn("head.w2", head.w2);
    fn("head.b2", head.b2);
}

ScanOut ss2d_scan(const Var& x, SsmBranchParams& p, ScanDirection dir, Tape& tape,
                  const Var& bias) {
    const std::size_t n = x->value.rows();
    const std::size_t d_h = p.A.rows();
    const Var a_t = transpose(tape.param(p.A));
    const Var b_t = transpose(tape.param(p.B));
    const Var c_t = transpose(tape.param(p.C_out));
    const Var d_t = transpose(tape.param(p.D_skip));

    std::vector<Var> hs(n), ys(n);
    Var h_prev = constant(Tensor::zeros({1, d_h}));
    for (std::size_t step = 0; step < n; ++step) {
        const std::size_t t = dir == ScanDirection::Forward ? step : n - 1 - step;
        const Var x_t = slice(x, 0, t, 1);
        Var h = add(matmul(h_prev, a_t), matmul(x_t, b_t));
        if (bias) h = add(h, slice(bias, 0, t, 1));
        hs[t] = h;
        ys[t] = add(matmul(h, c_t), matmul(x_t, d_t));
        h_prev = h;
    }
    return {concat(ys, 0), concat(hs, 0)};
}

Var bchfm_fuse(const Var& h_fwd, const Var& h_bwd, FusionParams& f, Tape& tape) {
    if (!h_fwd->value.same_shape(h_bwd->value))
        throw std::invalid_argument("bchfm_fuse: shape mismatch");
    const std::size_t n = h_fwd->value.rows();
    const std::size_t d_h = h_fwd->value.cols();
    const std::size_t w = static_cast<std::size_t>(f.window);
    if (w < 1) throw std::invalid_argument("bchfm_fuse: window must be >= 1");

    auto pad = [&](const Var& h) {
        if (n % w == 0) return h;
        std::vector<Var> parts = {h};
        const Var last = slice(h, 0, n - 1, 1);
        for (std::size_t k = 0; k < w - n % w; ++k) parts.push_back(last);
        return concat(parts, 0);
    };
    const Var hf = pad(h_fwd);
    const Var hb = pad(h_bwd);
    const std::size_t total = hf->value.rows();

    const Var wq = tape.param(f.wq);
    const Var wk = tape.param(f.wk);
    const Var wv = tape.param(f.wv);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d_h));

    auto cross = [&](const Var& q_seq, const Var& kv_seq) {
        const Var q = matmul(q_seq, wq);
        const Var k = matmul(kv_seq, wk);
        const Var v = matmul(kv_seq, wv);
        const Var scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
        return matmul(softmax(scores, 1), v);
    };

    std::vector<Var> fused;
    for (std::size_t start = 0; start < total; start += w) {
        const Var hf_w = slice(hf, 0, start, w);
        const Var hb_w = slice(hb, 0, start, w);
        fused.push_back(add(cross(hf_w, hb_w), cross(hb_w, hf_w)));
    }
    Var out = concat(fused, 0);
    if (total != n) out = slice(out, 0, 0, n);
    return out;
}

Var layer_forward(const Var& x, LayerParams& layer, Tape& tape) {
    const auto pass1_fwd = ss2d_scan(x, layer.fwd, ScanDirection::Forward, tape);
    const auto pass1_bwd = ss2d_scan(x, layer.bwd, ScanDirection::Backward, tape);
    const Var fused = bchfm_fuse(pass1_fwd.h, pass1_bwd.h, layer.fusion, tape);
    const Var bias = mul_scalar_var(fused, tape.param(layer.fusion.gamma));
    const auto pass2_fwd = ss2d_scan(x, layer.fwd, ScanDirection::Forward, tape, bias);
    const auto pass2_bwd = ss2d_scan(x, layer.bwd, ScanDirection::Backward, tape, bias);
    return scale(add(pass2_fwd.y, pass2_bwd.y), 0.5);
}

PolicyOut head_forward(const Var& x, HeadParams& head, Tape& tape) {
    const Var hidden = tanh_op(add(matmul(x, tape.param(head.w1)), tape.param(head.b1)));
    const Var out = add(matmul(hidden, tape.param(head.w2)), tape.param(head.b2));
    const Var mu = slice(out, 1, 0, 2);
    const Var logsig = clamp_op(slice(out, 1, 2, 2), -5.0, 2.0);
    return {mu, exp_op(logsig)};
}

namespace {

void check_finite(const Tensor& states) {
    for (double v : states.data())
        if (!std::isfinite(v)) throw std::invalid_argument("policy: non-finite state entry");
}

}  // namespace

PolicyOut policy_forward(const Tensor& states, PolicyParams& p, Tape& tape) {
    check_finite(states);
    Var x = constant(states);
    for (auto& layer : p.layers) x = layer_forward(x, layer, tape);
    return head_forward(x, p.head, tape);
}

PolicyOut policy_forward_single(const Tensor& states, PolicyParams& p, Tape& tape) {
    check_finite(states);
    Var x = constant(states);
    for (auto& layer : p.layers) {
        // Length-1 sequences: A never enters and window padding collapses the
        // attention to a plain W_V projection, so everything is row-parallel.
        const Var h_f = matmul(x, transpose(tape.param(layer.fwd.B)));
        const Var h_b = matmul(x, transpose(tape.param(layer.bwd.B)));
        const Var wv = tape.param(layer.fusion.wv);
        const Var fused = add(matmul(h_f, wv), matmul(h_b, wv));
        const Var bias = mul_scalar_var(fused, tape.param(layer.fusion.gamma));
        const Var h2_f = add(h_f, bias);
        const Var h2_b = add(h_b, bias);
        const Var y_f = add(matmul(h2_f, transpose(tape.param(layer.fwd.C_out))),
                            matmul(x, transpose(tape.param(layer.fwd.D_skip))));
        const Var y_b = add(matmul(h2_b, transpose(tape.param(layer.bwd.C_out))),
                            matmul(x, transpose(tape.param(layer.bwd.D_skip))));
        x = scale(add(y_f, y_b), 0.5);
    }
    return head_forward(x, p.head, tape);
}

SquashedSample squashed_sample(const Var& mu, const Var& sigma, const Tensor& noise,
                               double delta) {
    const Var eps = constant(noise);
    const Var u = add(mu, mul(sigma, eps));
    const Var squashed = tanh_op(u);
    const Var action = scale(squashed, delta);

    // log N(u; mu, sigma) with (u - mu)/sigma == eps held fixed.
    const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
    Tensor eps_term = noise;
    for (auto& v : eps_term.data()) v = -0.5 * v * v - half_log_2pi;
    Var logp = add(constant(eps_term), neg(log_op(sigma)));
    // Change of variables: subtract log(delta * (1 - tanh^2 u)), with
    // log(1 - tanh^2 u) = 2 (log 2 - u - softplus(-2u)).
    const Var log_jac =
        add_scalar(scale(add(neg(u), neg(softplus(scale(u, -2.0)))), 2.0),
                   2.0 * std::log(2.0) + std::log(delta));
    logp = sub(logp, log_jac);
    return {action, sum_axis(logp, 1)};
}

SampledActions sample_action(const Tensor& mu, const Tensor& sigma, double delta,
                             std::mt19937_64& rng) {
    Tensor noise = Tensor::zeros(mu.shape());
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : noise.data()) v = nd(rng);
    Tape tape;
    const auto s = squashed_sample(constant(mu), constant(sigma), noise, delta);
    return {s.action->value, s.logpi->value, std::move(noise)};
}

Tensor deterministic_action(const Tensor& mu, double delta) {
    Tensor a = mu;
    for (auto& v : a.data()) v = delta * std::tanh(v);
    return a;
}

double squashed_log_density(double a, double mu, double sigma, double delta) {
    const double t = a / delta;
    const double u = std::atanh(t);
    const double z = (u - mu) / sigma;
    const double log_normal = -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2.0 * M_PI);
    return log_normal - std::log(delta * (1.0 - t * t));
}

Tensor states_to_matrix(const std::vector<env::AgentState>& states, double image_w,
                        double image_h) {
    if (states.empty()) throw std::invalid_argument("states_to_matrix: empty");
    const auto first = states[0].flatten(image_w, image_h);
    Tensor m = Tensor::zeros({states.size(), first.size()});
    for (std::size_t i = 0; i < states.size(); ++i) {
        const auto row = states[i].flatten(image_w, image_h);
        if (row.size() != first.size())
            throw std::invalid_argument("states_to_matrix: ragged state vectors");
        for (std::size_t j = 0; j < row.size(); ++j) m.at(i, j) = row[j];
    }
    return m;
}

}  // namespace cmarl::policy
