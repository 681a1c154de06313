#include <cmarl/geometry.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace cmarl::geom {

double norm(Vec2 a) { return std::hypot(a.x, a.y); }
double dist(Vec2 a, Vec2 b) { return norm(a - b); }

Contour::Contour(std::vector<Vec2> points) : points_(std::move(points)) {
    if (points_.size() < 3) throw std::invalid_argument("Contour: need at least 3 points");
    for (const auto& p : points_) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y))
            throw std::invalid_argument("Contour: non-finite coordinate");
    }
    if (signed_shoelace_area(points_) < 0.0) {
        // Reverse the cycle keeping the start vertex in place.
        std::reverse(points_.begin() + 1, points_.end());
    }
}

const Vec2& Contour::cyclic(long long i) const {
    const long long n = static_cast<long long>(points_.size());
    long long m = i % n;
    if (m < 0) m += n;
    return points_[static_cast<std::size_t>(m)];
}

BinaryMask::BinaryMask(int w, int h) : width(w), height(h) {
    if (w < 1 || h < 1) throw std::invalid_argument("BinaryMask: dims must be >= 1");
    bits.assign(static_cast<std::size_t>(w) * h, 0);
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::accumulate(bits.begin(), bits.end(), std::size_t{0}));
}

bool BoundingBox::valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min < x_max && y_min < y_max;
}

double signed_shoelace_area(const std::vector<Vec2>& pts) {
    double s = 0.0;
    const std::size_t n = pts.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Vec2& a = pts[i];
        const Vec2& b = pts[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    return 0.5 * s;
}

double shoelace_area(const Contour& contour) {
    return std::abs(signed_shoelace_area(contour.points()));
}

BinaryMask rasterize(const Contour& contour, int width, int height) {
    BinaryMask mask(width, height);
    const auto& pts = contour.points();
    const std::size_t n = pts.size();
    std::vector<double> xs;
    for (int r = 0; r < height; ++r) {
        const double y = r + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < n; ++i) {
            const Vec2& a = pts[i];
            const Vec2& b = pts[(i + 1) % n];
            if ((a.y <= y) != (b.y <= y)) {
                xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            // Fill centers c + 0.5 in [xs[k], xs[k+1]); nudge the ceil-based
            // bounds so the comparisons are exactly the half-open ones.
            int c0 = static_cast<int>(std::ceil(xs[k] - 0.5));
            while (c0 - 1 + 0.5 >= xs[k]) --c0;
            while (c0 + 0.5 < xs[k]) ++c0;
            int c1 = static_cast<int>(std::ceil(xs[k + 1] - 0.5));
            while (c1 - 1 + 0.5 >= xs[k + 1]) --c1;
            while (c1 + 0.5 < xs[k + 1]) ++c1;
            c0 = std::max(c0, 0);
            c1 = std::min(c1, width);
            for (int c = c0; c < c1; ++c) mask.set(c, r, true);
        }
    }
    return mask;
}

double curvature(const Contour& contour, std::size_t i) {
    const long long ii = static_cast<long long>(i);
    const Vec2& a = contour.cyclic(ii - 1);
    const Vec2& b = contour.cyclic(ii);
    const Vec2& c = contour.cyclic(ii + 1);
    const double ab = dist(a, b);
    const double bc = dist(b, c);
    const double ac = dist(a, c);
    if (ab == 0.0 || bc == 0.0 || ac == 0.0) return 0.0;
    const double twice_area =
        std::abs((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
    return 2.0 * twice_area / (ab * bc * ac);
}

namespace {
double population_variance(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s / static_cast<double>(v.size());
}
}  // namespace

double consistency_index(const Contour& contour, const ConsistencyWeights& w) {
    const std::size_t n = contour.size();
    std::vector<double> dists(n), kappas(n);
    for (std::size_t i = 0; i < n; ++i) {
        dists[i] = dist(contour[i], contour.cyclic(static_cast<long long>(i) + 1));
        kappas[i] = curvature(contour, i);
    }
    return w.lambda1 * population_variance(dists) + w.lambda2 * population_variance(kappas);
}

Contour octagon_from_bbox(const BoundingBox& b) {
    if (!b.valid()) throw std::invalid_argument("octagon_from_bbox: invalid box");
    const double w = b.width(), h = b.height();
    const double x0 = b.x_min, y0 = b.y_min, x1 = b.x_max, y1 = b.y_max;
    // Quartile points along each edge, corners cut, CCW.
    std::vector<Vec2> pts = {
        {x0 + 0.25 * w, y0}, {x0 + 0.75 * w, y0},
        {x1, y0 + 0.25 * h}, {x1, y0 + 0.75 * h},
        {x0 + 0.75 * w, y1}, {x0 + 0.25 * w, y1},
        {x0, y0 + 0.75 * h}, {x0, y0 + 0.25 * h},
    };
    return Contour(std::move(pts));
}

Contour uniform_resample(const Contour& contour, std::size_t n) {
    if (n < 3) throw std::invalid_argument("uniform_resample: n must be >= 3");
    const auto& pts = contour.points();
    const std::size_t m = pts.size();
    std::vector<double> cum(m + 1, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        cum[i + 1] = cum[i] + dist(pts[i], pts[(i + 1) % m]);
    const double perimeter = cum[m];
    std::vector<Vec2> out(n);
    if (perimeter == 0.0) {
        std::fill(out.begin(), out.end(), pts[0]);
        return Contour(std::move(out));
    }
    std::size_t seg = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double target = perimeter * static_cast<double>(k) / static_cast<double>(n);
        while (seg + 1 < m && cum[seg + 1] <= target) ++seg;
        const double seg_len = cum[seg + 1] - cum[seg];
        const double t = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
        const Vec2& a = pts[seg];
        const Vec2& b = pts[(seg + 1) % m];
        out[k] = a + t * (b - a);
    }
    return Contour(std::move(out));
}

BoundingBox perturb_bbox(const BoundingBox& b, double shift_frac, double scale_frac,
                         std::uint64_t seed) {
    if (!b.valid()) throw std::invalid_argument("perturb_bbox: invalid box");
    if (std::abs(shift_frac) > 0.5 || std::abs(scale_frac) >= 0.5)
        throw std::invalid_argument("perturb_bbox: parameters out of range");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> shift_u(-shift_frac, shift_frac);
    std::uniform_real_distribution<double> scale_u(-scale_frac, scale_frac);
    const double w = b.width(), h = b.height();
    double cx = 0.5 * (b.x_min + b.x_max);
    double cy = 0.5 * (b.y_min + b.y_max);
    if (shift_frac > 0.0) {
        cx += shift_u(rng) * w;
        cy += shift_u(rng) * h;
    }
    double nw = w, nh = h;
    if (scale_frac > 0.0) {
        nw = w * (1.0 + scale_u(rng));
        nh = h * (1.0 + scale_u(rng));
    }
    if (nw <= 0.0 || nh <= 0.0)
        throw std::invalid_argument("perturb_bbox: non-positive extent");
    return {cx - 0.5 * nw, cy - 0.5 * nh, cx + 0.5 * nw, cy + 0.5 * nh};
}

}  // namespace cmarl::geom
