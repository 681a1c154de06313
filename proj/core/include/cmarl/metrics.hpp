#pragma once

#include <cmarl/geometry.hpp>

#include <iosfwd>
#include <vector>

namespace cmarl::metrics {

using geom::BinaryMask;

struct ObjectScores {
    double iou = 0.0;
    double dice = 0.0;
    double boundf = 0.0;
};

/// Per-object scores plus their arithmetic means.
struct MetricReport {
    double miou = 0.0;
    double mdice = 0.0;
    double mboundf = 0.0;
    std::vector<ObjectScores> per_object;

    /// One CSV row per object plus an aggregate row:
    /// object_id, iou, dice, boundf.
    void write_csv(std::ostream& os) const;
};

/// |pred & gt| / |pred | gt|; 1.0 when both masks are empty.
double iou(const BinaryMask& pred, const BinaryMask& gt);

/// 2 |pred & gt| / (|pred| + |gt|); 1.0 when both masks are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

/// Inner boundary: set pixels with at least one 8-neighbor unset or lying on
/// the grid border.
BinaryMask boundary_pixels(const BinaryMask& mask);

/// Chebyshev dilation by radius n (square structuring element of side 2n+1).
BinaryMask dilate_chebyshev(const BinaryMask& mask, int radius);

/// Boundary F-score: for n = 1..5 dilate each boundary map by a Chebyshev
/// disk of radius n and take the Dice of the dilated maps; average the five.
double boundf(const BinaryMask& pred, const BinaryMask& gt);

MetricReport report(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts);

}  // namespace cmarl::metrics
