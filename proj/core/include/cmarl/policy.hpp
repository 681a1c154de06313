#pragma once

#include <cmarl/diffcore.hpp>
#include <cmarl/environment.hpp>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace cmarl::policy {

using diff::Tape;
using diff::Tensor;
using diff::Var;

/// One direction of the linear state-space recurrence
/// h_t = A h_{t-1} + B x_t, y_t = C_out h_t + D_skip x_t.
/// The output/skip matrices are renamed from C/D to avoid clashing with the
/// consistency index.
struct SsmBranchParams {
    Tensor A;       // d_h x d_h, scaled so its inf-norm proxy stays < 1 at init
    Tensor B;       // d_h x d_in
    Tensor C_out;   // d_out x d_h
    Tensor D_skip;  // d_out x d_in

    static SsmBranchParams init(std::size_t d_h, std::size_t d_in, std::size_t d_out,
                                std::mt19937_64& rng);
};

struct FusionParams {
    Tensor wq, wk, wv;  // d_h x d_h, shared across directions
    Tensor gamma;       // scalar gate
    int window = 8;

    static FusionParams init(std::size_t d_h, int window, std::mt19937_64& rng);
};

struct LayerParams {
    SsmBranchParams fwd;
    SsmBranchParams bwd;
    FusionParams fusion;
};

struct HeadParams {
    Tensor w1, b1;  // d_h x hidden, hidden
    Tensor w2, b2;  // hidden x 4, 4  (mu_x, mu_y, logsig_x, logsig_y)

    static HeadParams init(std::size_t d_in, std::size_t hidden, std::mt19937_64& rng);
};

struct PolicyConfig {
    std::size_t state_dim = 134;
    std::size_t d_h = 16;
    std::size_t layers = 3;
    int window = 8;
    std::size_t head_hidden = 32;
};

struct PolicyParams {
    PolicyConfig cfg;
    std::vector<LayerParams> layers;
    HeadParams head;

    static PolicyParams init(const PolicyConfig& cfg, std::uint64_t seed);
    void visit(const std::function<void(const std::string&, Tensor&)>& fn);
};

enum class ScanDirection { Forward, Backward };

struct ScanOut {
    Var y;  // N x d_out
    Var h;  // N x d_h, in original index order
};

/// bias (optional, N x d_h, original index order) is added into the
/// recurrence at every step: h_t = A h_{t-1} + B x_t + bias_t.
ScanOut ss2d_scan(const Var& x, SsmBranchParams& p, ScanDirection dir, Tape& tape,
                  const Var& bias = nullptr);

/// Windowed cross-attention between the two hidden-state sequences; the last
/// window is padded by repeating the final row when the window does not
/// divide N.
Var bchfm_fuse(const Var& h_fwd, const Var& h_bwd, FusionParams& f, Tape& tape);

/// Two-pass gated layer: independent bidirectional scans produce the hidden
/// sequences, their fusion is re-injected as a gated per-step bias into a
/// second pair of scans, and the layer output is the mean of the two
/// second-pass outputs.
Var layer_forward(const Var& x, LayerParams& layer, Tape& tape);

struct PolicyOut {
    Var mu;     // N x 2
    Var sigma;  // N x 2, exp(clamp(logsig, -5, 2))
};

/// Shared tanh-MLP action head over the final hidden sequence.
PolicyOut head_forward(const Var& x, HeadParams& head, Tape& tape);

/// Full actor over the agent sequence (rows of `states`).
PolicyOut policy_forward(const Tensor& states, PolicyParams& p, Tape& tape);

/// Batched forward where every row is treated as its own length-1 sequence.
/// Exactly equals running policy_forward on each row separately.
PolicyOut policy_forward_single(const Tensor& states, PolicyParams& p, Tape& tape);

struct SquashedSample {
    Var action;  // N x 2, delta * tanh(u)
    Var logpi;   // N
};

/// Reparameterized tanh-squashed Gaussian with change-of-variables
/// correction; `noise` is the frozen standard-normal draw.
SquashedSample squashed_sample(const Var& mu, const Var& sigma, const Tensor& noise,
                               double delta);

struct SampledActions {
    Tensor actions;  // N x 2
    Tensor logpi;    // N
    Tensor noise;    // N x 2
};

SampledActions sample_action(const Tensor& mu, const Tensor& sigma, double delta,
                             std::mt19937_64& rng);

Tensor deterministic_action(const Tensor& mu, double delta);

/// Closed-form density of the squashed Gaussian at action a in (-delta, delta),
/// one dimension. Used as the quadrature oracle's integrand.
double squashed_log_density(double a, double mu, double sigma, double delta);

/// Flatten agent states into the policy input matrix (N x state_dim).
Tensor states_to_matrix(const std::vector<env::AgentState>& states, double image_w,
                        double image_h);

}  // namespace cmarl::policy
