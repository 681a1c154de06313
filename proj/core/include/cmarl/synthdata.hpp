#pragma once

#include <cmarl/environment.hpp>
#include <cmarl/geometry.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace cmarl::synth {

using geom::BinaryMask;
using geom::BoundingBox;

enum class ShapeKind { Ellipse, Star, Blob };

std::string kind_name(ShapeKind k);
ShapeKind kind_from_name(const std::string& name);

struct ShapeSpec {
    ShapeKind kind = ShapeKind::Ellipse;
    int size = 64;
    std::uint64_t seed = 0;
    double noise_sigma = 0.05;
    int blur_radius = 1;
};

struct Shape {
    BinaryMask gt_mask;
    BoundingBox gt_bbox;  // tight pixel box of the mask
};

/// Deterministic per seed; the mask is a single hole-free 8-connected
/// component of at least 64 pixels (regenerated with the next sub-seed
/// otherwise).
Shape generate_shape(const ShapeSpec& spec);

/// Rendered intensity (0.8 inside, 0.2 outside) + Gaussian noise + box blur;
/// channels: intensity, d/dx, d/dy, gradient magnitude (central differences
/// of the noisy render, no ground-truth leakage).
env::FeatureGrid make_feature_grid(const BinaryMask& gt_mask, const ShapeSpec& spec);

struct CorpusEntry {
    int id = 0;
    ShapeKind kind = ShapeKind::Ellipse;
    std::uint64_t seed = 0;
    std::string mask_path;  // relative to the manifest directory
    std::string grid_path;
    BoundingBox bbox;
    std::string split;  // "train" | "eval"
};

struct Manifest {
    std::string dir;
    std::vector<CorpusEntry> entries;
};

/// Writes masks and grids under out_dir plus manifest.csv; 80/20 train/eval
/// split by seed-stable hashing. Returns the manifest path.
std::string build_corpus(int count, const std::vector<ShapeKind>& mix, int size,
                         std::uint64_t seed, const std::string& out_dir,
                         double noise_sigma = 0.05, int blur_radius = 1);

Manifest load_manifest(const std::string& manifest_path);

void save_mask_pgm(const BinaryMask& mask, const std::string& path);
BinaryMask load_mask_pgm(const std::string& path);
void save_grid(const env::FeatureGrid& grid, const std::string& path);
env::FeatureGrid load_grid(const std::string& path);

// Flood-fill utilities, also used as test oracles.
int connected_components_8(const BinaryMask& mask);
bool has_holes(const BinaryMask& mask);  // 4-connected background fill from the border

}  // namespace cmarl::synth
