#pragma once

#include <cmarl/geometry.hpp>
#include <cmarl/metrics.hpp>

#include <functional>
#include <optional>
#include <vector>

namespace cmarl::env {

using geom::BinaryMask;
using geom::BoundingBox;
using geom::Contour;
using geom::Vec2;

/// Dense C x H x W real-valued feature channels. Values sit at integer grid
/// coordinates; bilinear sampling interpolates array indices directly and
/// clamps to the border.
struct FeatureGrid {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<double> values;  // [c][row][col]

    FeatureGrid() = default;
    FeatureGrid(int w, int h, int c);

    double at(int ch, int row, int col) const {
        return values[(static_cast<std::size_t>(ch) * height + row) * width + col];
    }
    double& at(int ch, int row, int col) {
        return values[(static_cast<std::size_t>(ch) * height + row) * width + col];
    }
    double sample(int ch, double x, double y) const;  // bilinear, border clamp
};

/// Per-agent composite state: coordinates, local feature vector, neighbor
/// positional embeddings.
struct AgentState {
    Vec2 coords;
    std::vector<double> local_features;
    std::vector<double> neighbor_embed;

    /// Fixed-length policy/critic input: coords normalized by the image
    /// extent, then features, then embeddings.
    std::vector<double> flatten(double image_w, double image_h) const;
};

struct RewardWeights {
    double w0 = 0.5;
    double w1 = 1.0;
    double w2 = 1.5;
    double w3 = 0.1;
};

struct EnvConfig {
    int k_neighbors = 4;      // cyclic, half predecessors, half successors
    int embed_dim = 8;        // per-neighbor sinusoidal embedding length
    double feature_radius = 4.0;
    double delta = 25.0;      // max step size
    int horizon = 5;          // evolution iterations T
    RewardWeights weights;
};

struct EpisodeState {
    Contour contour;
    BinaryMask gt_mask;
    FeatureGrid feature_grid;
    EnvConfig config;
    int t = 0;
    double prev_miou = 0.0;
    double prev_mboundf = 0.0;
    double init_reward = 0.0;  // w0 * Dice(init box region, gt), emitted at t = 0

    EpisodeState(Contour c, BinaryMask gt, FeatureGrid grid, EnvConfig cfg);
};

struct StepResult {
    std::vector<double> rewards;
    bool done = false;
    double miou = 0.0;
    double mdice = 0.0;
    double mboundf = 0.0;
    double r_region = 0.0;
    double r_boundary = 0.0;
    double r_coop_mean = 0.0;
};

struct TraceEntry {
    Contour contour;
    double miou = 0.0, mdice = 0.0, mboundf = 0.0;
    double r_region = 0.0, r_boundary = 0.0, r_coop_mean = 0.0;
};

struct Trace {
    int width = 0, height = 0;
    std::vector<TraceEntry> entries;
};

struct EpisodeResult {
    Contour final_contour;
    metrics::MetricReport report;
    Trace trace;
};

/// Interleaved sin/cos encoding with geometric frequency ladder base 10000,
/// dim/2 entries per axis, x half then y half. dim must be divisible by 4.
std::vector<double> sinusoidal_embed(Vec2 coords, int dim);

/// Bilinear sampling of all channels at a 5x5 lattice spanning
/// [x-r, x+r] x [y-r, y+r], channels concatenated (F = 25 * C).
std::vector<double> extract_local_features(const FeatureGrid& grid, double x, double y, double r);

std::vector<AgentState> build_states(const EpisodeState& ep, int k_neighbors, int embed_dim);
std::vector<AgentState> build_states(const EpisodeState& ep);

/// L2 clamp onto the delta ball.
Vec2 clamp_action(Vec2 a, double delta);

double reward_init(const BoundingBox& init_box, const BinaryMask& gt, const RewardWeights& w);

StepResult step(EpisodeState& ep, const std::vector<Vec2>& actions);

/// Action source: maps the agent states of the current contour to one
/// displacement per agent.
using PolicyFn = std::function<std::vector<Vec2>(const std::vector<AgentState>&)>;

EpisodeResult run_episode(EpisodeState ep, const PolicyFn& policy, bool record);

}  // namespace cmarl::env
