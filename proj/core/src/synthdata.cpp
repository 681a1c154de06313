#include <cmarl/synthdata.hpp>

#include <cmarl/checkpoint.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cmarl::synth {

namespace fs = std::filesystem;
using geom::Contour;
using geom::Vec2;

std::string kind_name(ShapeKind k) {
    switch (k) {
        case ShapeKind::Ellipse: return "ellipse";
        case ShapeKind::Star: return "star";
        case ShapeKind::Blob: return "blob";
    }
    return "ellipse";
}

ShapeKind kind_from_name(const std::string& name) {
    if (name == "ellipse") return ShapeKind::Ellipse;
    if (name == "star") return ShapeKind::Star;
    if (name == "blob") return ShapeKind::Blob;
    throw std::invalid_argument("unknown shape kind: " + name);
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::vector<Vec2> shape_polygon(const ShapeSpec& spec, std::mt19937_64& rng) {
    const double s = spec.size;
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const double cx = s * (0.35 + 0.30 * u01(rng));
    const double cy = s * (0.35 + 0.30 * u01(rng));
    std::vector<Vec2> pts;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    switch (spec.kind) {
        case ShapeKind::Ellipse: {
            // Elongated and rotated, so the axis-aligned bounding box (and
            // with it the octagon initialization) stays deliberately loose.
            const double a = s * (0.20 + 0.10 * u01(rng));
            const double b = a * (0.30 + 0.15 * u01(rng));
            const double rot = std::numbers::pi * u01(rng);
            const double cr = std::cos(rot), sr = std::sin(rot);
            for (int i = 0; i < 256; ++i) {
                const double th = two_pi * i / 256.0;
                const double ex = a * std::cos(th), ey = b * std::sin(th);
                pts.push_back({cx + cr * ex - sr * ey, cy + sr * ex + cr * ey});
            }
            break;
        }
        case ShapeKind::Star: {
            const int k = 5 + static_cast<int>(u01(rng) * 5.0) % 5;  // 5..9 points
            const double r_out = s * (0.15 + 0.15 * u01(rng));
            const double ratio = 0.4 + 0.3 * u01(rng);
            const double phase = two_pi * u01(rng);
            for (int j = 0; j < 2 * k; ++j) {
                const double r = (j % 2 == 0) ? r_out : r_out * ratio;
                const double th = phase + std::numbers::pi * j / k;
                pts.push_back({cx + r * std::cos(th), cy + r * std::sin(th)});
            }
            break;
        }
        case ShapeKind::Blob: {
            const double r0 = s * (0.15 + 0.13 * u01(rng));
            double amp[5], phi[5];
            for (int m = 0; m < 5; ++m) {
                amp[m] = -0.15 + 0.30 * u01(rng);
                phi[m] = two_pi * u01(rng);
            }
            for (int i = 0; i < 256; ++i) {
                const double th = two_pi * i / 256.0;
                double r = 1.0;
                for (int m = 0; m < 5; ++m) r += amp[m] * std::cos((m + 2) * th + phi[m]);
                r *= r0;
                pts.push_back({cx + r * std::cos(th), cy + r * std::sin(th)});
            }
            break;
        }
    }
    return pts;
}

}  // namespace

int connected_components_8(const BinaryMask& mask) {
    std::vector<std::uint8_t> seen(mask.bits.size(), 0);
    int comps = 0;
    std::vector<std::pair<int, int>> stack;
    for (int r = 0; r < mask.height; ++r) {
        for (int c = 0; c < mask.width; ++c) {
            if (!mask.at(c, r) || seen[static_cast<std::size_t>(r) * mask.width + c]) continue;
            ++comps;
            stack.push_back({c, r});
            seen[static_cast<std::size_t>(r) * mask.width + c] = 1;
            while (!stack.empty()) {
                auto [cc, cr] = stack.back();
                stack.pop_back();
                for (int dr = -1; dr <= 1; ++dr)
                    for (int dc = -1; dc <= 1; ++dc) {
                        const int nc = cc + dc, nr = cr + dr;
                        if (!mask.in_bounds(nc, nr) || !mask.at(nc, nr)) continue;
                        auto& s = seen[static_cast<std::size_t>(nr) * mask.width + nc];
                        if (!s) {
                            s = 1;
                            stack.push_back({nc, nr});
                        }
                    }
            }
        }
    }
    return comps;
}

bool has_holes(const BinaryMask& mask) {
    std::vector<std::uint8_t> reached(mask.bits.size(), 0);
    std::vector<std::pair<int, int>> stack;
    auto push = [&](int c, int r) {
        if (!mask.in_bounds(c, r) || mask.at(c, r)) return;
        auto& s = reached[static_cast<std::size_t>(r) * mask.width + c];
        if (!s) {
            s = 1;
            stack.push_back({c, r});
        }
    };
    for (int c = 0; c < mask.width; ++c) {
        push(c, 0);
        push(c, mask.height - 1);
    }
    for (int r = 0; r < mask.height; ++r) {
        push(0, r);
        push(mask.width - 1, r);
    }
    while (!stack.empty()) {
        auto [c, r] = stack.back();
        stack.pop_back();
        push(c - 1, r);
        push(c + 1, r);
        push(c, r - 1);
        push(c, r + 1);
    }
    for (int r = 0; r < mask.height; ++r)
        for (int c = 0; c < mask.width; ++c)
            if (!mask.at(c, r) && !reached[static_cast<std::size_t>(r) * mask.width + c])
                return true;
    return false;
}

Shape generate_shape(const ShapeSpec& spec) {
    if (spec.size < 32) throw std::invalid_argument("generate_shape: size must be >= 32");
    for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
        std::mt19937_64 rng(splitmix64(spec.seed + attempt * 0x51ed2701ULL) ^
                            static_cast<std::uint64_t>(spec.kind));
        const auto pts = shape_polygon(spec, rng);
        BinaryMask mask = geom::rasterize(Contour(pts), spec.size, spec.size);
        if (mask.count() < 64) continue;
        if (connected_components_8(mask) != 1 || has_holes(mask)) continue;
        int min_c = spec.size, min_r = spec.size, max_c = -1, max_r = -1;
        for (int r = 0; r < mask.height; ++r)
            for (int c = 0; c < mask.width; ++c)
                if (mask.at(c, r)) {
                    min_c = std::min(min_c, c);
                    min_r = std::min(min_r, r);
                    max_c = std::max(max_c, c);
                    max_r = std::max(max_r, r);
                }
        BoundingBox box{static_cast<double>(min_c), static_cast<double>(min_r),
                        static_cast<double>(max_c + 1), static_cast<double>(max_r + 1)};
        return {std::move(mask), box};
    }
    throw std::runtime_error("generate_shape: could not produce a valid mask");
}

env::FeatureGrid make_feature_grid(const BinaryMask& gt_mask, const ShapeSpec& spec) {
    const int w = gt_mask.width, h = gt_mask.height;
    std::vector<double> intensity(static_cast<std::size_t>(w) * h);
    std::mt19937_64 rng(splitmix64(spec.seed ^ 0xfeedface1234ULL));
    std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            double v = gt_mask.at(c, r) ? 0.8 : 0.2;
            if (spec.noise_sigma > 0.0) v += noise(rng);
            intensity[static_cast<std::size_t>(r) * w + c] = v;
        }
    if (spec.blur_radius > 0) {
        const int b = spec.blur_radius;
        std::vector<double> blurred(intensity.size());
        for (int r = 0; r < h; ++r)
            for (int c = 0; c < w; ++c) {
                double acc = 0.0;
                int cnt = 0;
                for (int dr = -b; dr <= b; ++dr)
                    for (int dc = -b; dc <= b; ++dc) {
                        const int nr = r + dr, nc = c + dc;
                        if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                        acc += intensity[static_cast<std::size_t>(nr) * w + nc];
                        ++cnt;
                    }
                blurred[static_cast<std::size_t>(r) * w + c] = acc / cnt;
            }
        intensity.swap(blurred);
    }
    env::FeatureGrid grid(w, h, 4);
    auto iv = [&](int c, int r) {
        c = std::clamp(c, 0, w - 1);
        r = std::clamp(r, 0, h - 1);
        return intensity[static_cast<std::size_t>(r) * w + c];
    };
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            const double dx = 0.5 * (iv(c + 1, r) - iv(c - 1, r));
            const double dy = 0.5 * (iv(c, r + 1) - iv(c, r - 1));
            grid.at(0, r, c) = iv(c, r);
            grid.at(1, r, c) = dx;
            grid.at(2, r, c) = dy;
            grid.at(3, r, c) = std::sqrt(dx * dx + dy * dy);
        }
    return grid;
}

void save_mask_pgm(const BinaryMask& mask, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_mask_pgm: cannot open " + path);
    os << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
    for (auto b : mask.bits) os.put(b ? static_cast<char>(255) : 0);
    if (!os) throw std::runtime_error("save_mask_pgm: write failed " + path);
}

BinaryMask load_mask_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_mask_pgm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxv = 0;
    is >> magic >> w >> h >> maxv;
    if (magic != "P5" || w < 1 || h < 1) throw std::runtime_error("load_mask_pgm: bad header");
    is.get();  // single whitespace after maxval
    BinaryMask mask(w, h);
    for (auto& b : mask.bits) b = is.get() > 127 ? 1 : 0;
    if (!is) throw std::runtime_error("load_mask_pgm: truncated " + path);
    return mask;
}

void save_grid(const env::FeatureGrid& grid, const std::string& path) {
    diff::Tensor t({static_cast<std::size_t>(grid.channels),
                    static_cast<std::size_t>(grid.height),
                    static_cast<std::size_t>(grid.width)},
                   grid.values);
    diff::save_tensors(path, {{"grid", std::move(t)}});
}

env::FeatureGrid load_grid(const std::string& path) {
    auto named = diff::load_tensors(path);
    auto it = named.find("grid");
    if (it == named.end() || it->second.rank() != 3)
        throw std::runtime_error("load_grid: missing grid tensor in " + path);
    const auto& sh = it->second.shape();
    env::FeatureGrid grid(static_cast<int>(sh[2]), static_cast<int>(sh[1]),
                          static_cast<int>(sh[0]));
    grid.values = it->second.data();
    return grid;
}

std::string build_corpus(int count, const std::vector<ShapeKind>& mix, int size,
                         std::uint64_t seed, const std::string& out_dir, double noise_sigma,
                         int blur_radius) {
    if (count < 1) throw std::invalid_argument("build_corpus: count must be >= 1");
    if (mix.empty()) throw std::invalid_argument("build_corpus: empty kind mix");
    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "masks", ec);
    fs::create_directories(fs::path(out_dir) / "grids", ec);
    if (ec) throw std::runtime_error("build_corpus: cannot create " + out_dir);

    // Seed-stable exact 80/20 split: rank ids by hash, top fifth goes to eval.
    std::vector<std::pair<std::uint64_t, int>> ranked(count);
    for (int i = 0; i < count; ++i)
        ranked[i] = {splitmix64(seed ^ (0xabcd0000ULL + static_cast<std::uint64_t>(i))), i};
    std::sort(ranked.begin(), ranked.end());
    const int eval_count = (count + 4) / 5;
    std::vector<std::uint8_t> is_eval(count, 0);
    for (int i = 0; i < eval_count; ++i) is_eval[ranked[i].second] = 1;

    const std::string manifest_path = (fs::path(out_dir) / "manifest.csv").string();
    std::ofstream mf(manifest_path, std::ios::trunc);
    if (!mf) throw std::runtime_error("build_corpus: cannot open " + manifest_path);
    mf << "id,kind,seed,mask_path,grid_path,x_min,y_min,x_max,y_max,split\n";
    for (int i = 0; i < count; ++i) {
        ShapeSpec spec;
        spec.kind = mix[static_cast<std::size_t>(i) % mix.size()];
        spec.size = size;
        spec.seed = splitmix64(seed + 0x1000ULL * static_cast<std::uint64_t>(i));
        spec.noise_sigma = noise_sigma;
        spec.blur_radius = blur_radius;
        const Shape shape = generate_shape(spec);
        const env::FeatureGrid grid = make_feature_grid(shape.gt_mask, spec);
        char name[64];
        std::snprintf(name, sizeof(name), "shape_%05d", i);
        const std::string mask_rel = std::string("masks/") + name + ".pgm";
        const std::string grid_rel = std::string("grids/") + name + ".ten";
        save_mask_pgm(shape.gt_mask, (fs::path(out_dir) / mask_rel).string());
        save_grid(grid, (fs::path(out_dir) / grid_rel).string());
        mf << i << ',' << kind_name(spec.kind) << ',' << spec.seed << ',' << mask_rel << ','
           << grid_rel << ',' << shape.gt_bbox.x_min << ',' << shape.gt_bbox.y_min << ','
           << shape.gt_bbox.x_max << ',' << shape.gt_bbox.y_max << ','
           << (is_eval[i] ? "eval" : "train") << '\n';
    }
    if (!mf) throw std::runtime_error("build_corpus: manifest write failed");
    return manifest_path;
}

Manifest load_manifest(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw std::runtime_error("load_manifest: cannot open " + manifest_path);
    Manifest m;
    m.dir = fs::path(manifest_path).parent_path().string();
    std::string line;
    std::getline(is, line);  // header
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        CorpusEntry e;
        std::getline(ss, field, ',');
        e.id = std::stoi(field);
        std::getline(ss, field, ',');
        e.kind = kind_from_name(field);
        std::getline(ss, field, ',');
        e.seed = std::stoull(field);
        std::getline(ss, e.mask_path, ',');
        std::getline(ss, e.grid_path, ',');
        std::getline(ss, field, ',');
        e.bbox.x_min = std::stod(field);
        std::getline(ss, field, ',');
        e.bbox.y_min = std::stod(field);
        std::getline(ss, field, ',');
        e.bbox.x_max = std::stod(field);
        std::getline(ss, field, ',');
        e.bbox.y_max = std::stod(field);
        std::getline(ss, e.split, ',');
        m.entries.push_back(std::move(e));
    }
    return m;
}

}  // namespace cmarl::synth
