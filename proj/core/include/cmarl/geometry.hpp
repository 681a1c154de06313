#pragma once

#include <cstdint>
#include <vector>

namespace cmarl::geom {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
double norm(Vec2 a);
double dist(Vec2 a, Vec2 b);

/// Ordered closed polygon of contour points in continuous image coordinates.
/// Construction validates N >= 3 and finiteness, and normalizes the winding
/// to counter-clockwise (signed shoelace area >= 0) keeping the first point
/// in place.
class Contour {
  public:
    explicit Contour(std::vector<Vec2> points);

    std::size_t size() const { return points_.size(); }
    const Vec2& operator[](std::size_t i) const { return points_[i]; }
    const std::vector<Vec2>& points() const { return points_; }

    // Cyclic access, i may be any index; wraps modulo N.
    const Vec2& cyclic(long long i) const;

  private:
    std::vector<Vec2> points_;
};

/// Dense H x W boolean grid. Pixel (c, r) covers the unit square
/// [c, c+1) x [r, r+1); its center sits at (c + 0.5, r + 0.5).
struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;  // row-major, height * width

    BinaryMask() = default;
    BinaryMask(int w, int h);

    bool at(int c, int r) const { return bits[static_cast<std::size_t>(r) * width + c] != 0; }
    void set(int c, int r, bool v) { bits[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0; }
    bool in_bounds(int c, int r) const { return c >= 0 && c < width && r >= 0 && r < height; }
    std::size_t count() const;
    bool empty_mask() const { return count() == 0; }
};

struct BoundingBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    bool valid() const;
};

/// Weights of the contour consistency index.
struct ConsistencyWeights {
    double lambda1 = 0.1;
    double lambda2 = 0.5;
};

double signed_shoelace_area(const std::vector<Vec2>& pts);

/// |signed shoelace sum| / 2. Degenerate contours give 0.
double shoelace_area(const Contour& contour);

/// Even-odd scanline fill: a pixel is set iff its center lies inside the
/// polygon under the even-odd rule. Pixels outside the grid are clipped.
BinaryMask rasterize(const Contour& contour, int width, int height);

/// Menger curvature of (p_{i-1}, p_i, p_{i+1}) with cyclic indexing:
/// kappa = 4 * triangle_area / (|ab| * |bc| * |ac|). Zero for collinear or
/// coincident points.
double curvature(const Contour& contour, std::size_t i);

/// C = lambda1 * Var({d_{i,i+1}}) + lambda2 * Var({kappa_i}), population
/// variance, distances include the closing edge.
double consistency_index(const Contour& contour, const ConsistencyWeights& w);

/// Octagon from the box edge quartile points (corners cut), CCW.
Contour octagon_from_bbox(const BoundingBox& b);

/// n points at equal arc-length spacing along the closed polyline, first
/// output point at arc length 0 (the input's first vertex).
Contour uniform_resample(const Contour& contour, std::size_t n);

/// Random bbox jitter: center shifted by uniform(-shift_frac, +shift_frac)
/// per axis times (width, height); extents scaled by
/// (1 + uniform(-scale_frac, +scale_frac)) per axis. Deterministic per seed.
BoundingBox perturb_bbox(const BoundingBox& b, double shift_frac, double scale_frac,
                         std::uint64_t seed);

}  // namespace cmarl::geom
