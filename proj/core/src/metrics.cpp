#include <cmarl/metrics.hpp>

#include <algorithm>
#include <ostream>
#include <stdexcept>

namespace cmarl::metrics {

namespace {
void check_dims(const BinaryMask& a, const BinaryMask& b, const char* op) {
    if (a.width != b.width || a.height != b.height)
        throw std::invalid_argument(std::string(op) + ": mask dimension mismatch");
}
}  // namespace

double iou(const BinaryMask& pred, const BinaryMask& gt) {
    check_dims(pred, gt, "iou");
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
        inter += (a && b) ? 1 : 0;
        uni += (a || b) ? 1 : 0;
    }
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    check_dims(pred, gt, "dice");
    std::size_t inter = 0, total = 0;
    for (std::size_t i = 0; i < pred.bits.size(); ++i) {
        const bool a = pred.bits[i] != 0, b = gt.bits[i] != 0;
        inter += (a && b) ? 1 : 0;
        total += (a ? 1 : 0) + (b ? 1 : 0);
    }
    if (total == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(total);
}

BinaryMask boundary_pixels(const BinaryMask& mask) {
    BinaryMask out(mask.width, mask.height);
    for (int r = 0; r < mask.height; ++r) {
        for (int c = 0; c < mask.width; ++c) {
            if (!mask.at(c, r)) continue;
            bool boundary = false;
            for (int dr = -1; dr <= 1 && !boundary; ++dr) {
                for (int dc = -1; dc <= 1 && !boundary; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const int nc = c + dc, nr = r + dr;
                    if (!mask.in_bounds(nc, nr) || !mask.at(nc, nr)) boundary = true;
                }
            }
            if (boundary) out.set(c, r, true);
        }
    }
    return out;
}

BinaryMask dilate_chebyshev(const BinaryMask& mask, int radius) {
    BinaryMask out(mask.width, mask.height);
    for (int r = 0; r < mask.height; ++r) {
        for (int c = 0; c < mask.width; ++c) {
            if (!mask.at(c, r)) continue;
            const int r0 = std::max(0, r - radius), r1 = std::min(mask.height - 1, r + radius);
            const int c0 = std::max(0, c - radius), c1 = std::min(mask.width - 1, c + radius);
            for (int rr = r0; rr <= r1; ++rr)
                for (int cc = c0; cc <= c1; ++cc) out.set(cc, rr, true);
        }
    }
    return out;
}

double boundf(const BinaryMask& pred, const BinaryMask& gt) {
    check_dims(pred, gt, "boundf");
    const BinaryMask bp = boundary_pixels(pred);
    const BinaryMask bg = boundary_pixels(gt);
    double acc = 0.0;
    for (int n = 1; n <= 5; ++n) {
        acc += dice(dilate_chebyshev(bp, n), dilate_chebyshev(bg, n));
    }
    return acc / 5.0;
}

MetricReport report(const std::vector<BinaryMask>& preds, const std::vector<BinaryMask>& gts) {
    if (preds.empty() || preds.size() != gts.size())
        throw std::invalid_argument("report: empty or mismatched lists");
    MetricReport rep;
    rep.per_object.reserve(preds.size());
    for (std::size_t i = 0; i < preds.size(); ++i) {
        ObjectScores s;
        s.iou = iou(preds[i], gts[i]);
        s.dice = dice(preds[i], gts[i]);
        s.boundf = boundf(preds[i], gts[i]);
        rep.per_object.push_back(s);
        rep.miou += s.iou;
        rep.mdice += s.dice;
        rep.mboundf += s.boundf;
    }
    const double n = static_cast<double>(preds.size());
    rep.miou /= n;
    rep.mdice /= n;
    rep.mboundf /= n;
    return rep;
}

void MetricReport::write_csv(std::ostream& os) const {
    os << "object_id,iou,dice,boundf\n";
    for (std::size_t i = 0; i < per_object.size(); ++i) {
        os << i << ',' << per_object[i].iou << ',' << per_object[i].dice << ','
           << per_object[i].boundf << '\n';
    }
    os << "aggregate," << miou << ',' << mdice << ',' << mboundf << '\n';
}

}  // namespace cmarl::metrics
