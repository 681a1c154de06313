#pragma once

#include <cmarl/critic.hpp>
#include <cmarl/diffcore.hpp>
#include <cmarl/environment.hpp>
#include <cmarl/metrics.hpp>
#include <cmarl/policy.hpp>
#include <cmarl/synthdata.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cmarl::sac {

using diff::Tensor;
using diff::Var;

struct Transition {
    std::vector<double> s;       // flattened agent state
    double ax = 0.0, ay = 0.0;   // executed (clamped) displacement
    double r = 0.0;
    std::vector<double> s_next;
    bool terminal = false;
};

/// Ring buffer with FIFO eviction and seeded uniform sampling.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity, std::uint64_t seed);

    void push(Transition t);
    std::size_t size() const { return store_.size(); }
    std::vector<const Transition*> sample(std::size_t k);

  private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Transition> store_;
    std::mt19937_64 rng_;
};

struct SacConfig {
    double gamma_discount = 0.99;
    double tau = 0.005;
    int batch_k = 128;
    double alpha0 = 0.2;
    double beta = 0.5;
    double lambda1 = 0.1;
    double lambda2 = 0.5;
    double w0 = 0.5;
    double w1 = 1.0;
    double w2 = 1.5;
    double w3 = 0.1;
    double delta = 25.0;
    int n_points = 128;
    int horizon_t = 5;
    int epochs = 200;
    double lr_start = 1e-4;
    double lr_end = 1e-6;
    std::int64_t replay_capacity = 1000000;
    std::uint64_t seed = 0;
    int d_h = 16;
    int layers = 3;
    int window = 8;
    int head_hidden = 32;
    int critic_hidden = 64;
    int k_neighbors = 4;
    int embed_dim = 8;
    double feature_radius = 4.0;
    int update_rounds = 1;
    double weight_decay = 0.0;
    double train_shift_frac = 0.0;
    double train_scale_frac = 0.0;
    int warmup_episodes = 0;
    double actor_lr_scale = 1.0;
    int demo_period = 0;
    int explore_period = 0;

    /// Line-oriented "key = value" pairs, '#' comments. Unknown keys rejected.
    static SacConfig parse_file(const std::string& path);
    void set(const std::string& key, const std::string& value);
    void write(const std::string& path) const;

    std::size_t state_dim(int grid_channels = 4) const;
    env::EnvConfig env_config() const;
    policy::PolicyConfig policy_config(int grid_channels = 4) const;
};

/// alpha = alpha0 / (1 + beta * C).
double eram_alpha(double alpha0, double beta, double c_index);

/// Cosine decay from lr_start to lr_end over total steps.
double cosine_lr(double lr_start, double lr_end, std::int64_t step, std::int64_t total);

struct Trainer {
    SacConfig cfg;
    policy::PolicyParams actor;
    critic::TwinCritics critics;
    diff::AdamW actor_opt;
    diff::AdamW critic_opt;

    explicit Trainer(const SacConfig& cfg);

    void save_checkpoint(const std::string& path, int epoch);
    /// Returns the stored epoch; throws diff::CheckpointError on mismatch.
    int load_checkpoint(const std::string& path, bool with_optimizer);
};

struct TargetBatch {
    Tensor y;  // K x 1
};

TargetBatch compute_target(const std::vector<const Transition*>& batch, Trainer& tr,
                           double alpha, std::mt19937_64& rng);

struct CriticLosses {
    Var l1, l2;
};

CriticLosses critic_loss(const std::vector<const Transition*>& batch, const Tensor& y,
                         Trainer& tr, diff::Tape& tape);

Var policy_loss(const std::vector<const Transition*>& batch, Trainer& tr, double alpha,
                std::mt19937_64& rng, diff::Tape& tape);

struct TrainResult {
    int episodes = 0;
    std::vector<double> episode_returns;  // mean per-agent return per episode
    std::string checkpoint_path;
    std::string log_path;
};

/// Surfaced when a loss or parameter goes non-finite; carries the offending
/// update index.
struct NanAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

TrainResult train(const SacConfig& cfg, const synth::Manifest& manifest,
                  const std::string& out_dir, bool resume = false);

struct EvalOptions {
    int n_points = 0;   // 0: take from config
    int horizon = 0;    // 0: take from config
    double shift_frac = 0.0;
    double scale_frac = 0.0;
    std::uint64_t perturb_seed = 0;
    bool trace = false;
    std::string trace_dir;
};

metrics::MetricReport evaluate(const std::string& checkpoint_path, const SacConfig& cfg,
                               const synth::Manifest& manifest, const EvalOptions& opts);

/// Metrics of the raw octagon initialization (no evolution steps).
metrics::MetricReport baseline_report(const SacConfig& cfg, const synth::Manifest& manifest,
                                      const EvalOptions& opts);

}  // namespace cmarl::sac
