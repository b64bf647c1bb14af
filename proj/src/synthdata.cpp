#include "gatn/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gatn/errors.hpp"
#include "gatn/rng.hpp"

namespace gatn {
namespace {

constexpr double kBaseShade = 0.5;
// Contrast energy of a glyph relative to the base shade. Rim and interior
// shades are solved per class so every glyph matches the base shade in mean
// and adds the same second moment, whatever its rim fraction.
constexpr double kGlyphContrastEnergy = 0.05;
constexpr int kNoiseCell = 16;

struct GlyphStyle {
    double rim_shade;
    double interior_shade;
    double rim_ratio;
};

GlyphStyle style_for_class(int klass) {
    const double ratio = 0.1 * (klass + 1);
    const double frac = ratio * (2.0 - ratio); // rim area fraction of the disk
    const double a = std::sqrt(kGlyphContrastEnergy * (1.0 - frac) / frac);
    const double b = std::sqrt(kGlyphContrastEnergy * frac / (1.0 - frac));
    return {kBaseShade - a, kBaseShade + b, ratio};
}

double smooth01(double x) { return std::clamp(x, 0.0, 1.0); }

void add_value_noise(Tensor4& img, Rng& rng) {
    const int hw = img.h();
    const int grid = hw / kNoiseCell + 2;
    std::vector<double> lattice(static_cast<std::size_t>(grid) * grid);
    for (int c = 0; c < img.c(); ++c) {
        for (auto& v : lattice) v = rng.uniform(-0.05, 0.05);
        for (int i = 0; i < hw; ++i) {
            const double gy = static_cast<double>(i) / kNoiseCell;
            const int y0 = static_cast<int>(gy);
            const double wy = gy - y0;
            for (int j = 0; j < hw; ++j) {
                const double gx = static_cast<double>(j) / kNoiseCell;
                const int x0 = static_cast<int>(gx);
                const double wx = gx - x0;
                const double v00 = lattice[static_cast<std::size_t>(y0) * grid + x0];
                const double v01 = lattice[static_cast<std::size_t>(y0) * grid + x0 + 1];
                const double v10 = lattice[static_cast<std::size_t>(y0 + 1) * grid + x0];
                const double v11 = lattice[static_cast<std::size_t>(y0 + 1) * grid + x0 + 1];
                const double top = v00 + (v01 - v00) * wx;
                const double bot = v10 + (v11 - v10) * wx;
                img(0, c, i, j) += top + (bot - top) * wy;
            }
        }
    }
}

// Soft elliptical bumps; amplitude symmetric around zero so the clutter is
// mean-free. None of them carries a rim.
void add_distractors(Tensor4& img, Rng& rng, int count) {
    const int hw = img.h();
    for (int d = 0; d < count; ++d) {
        const double cy = rng.uniform(0.0, hw);
        const double cx = rng.uniform(0.0, hw);
        const double a = rng.uniform(6.0, 15.0);
        const double aspect = rng.uniform(1.5, 3.5);
        const double b = a / aspect;
        const double theta = rng.uniform(0.0, M_PI);
        const double amp = rng.uniform(-0.06, 0.06);
        const double ct = std::cos(theta), st = std::sin(theta);
        const int r = static_cast<int>(std::ceil(a)) + 1;
        const int i0 = std::max(0, static_cast<int>(cy) - r);
        const int i1 = std::min(hw - 1, static_cast<int>(cy) + r);
        const int j0 = std::max(0, static_cast<int>(cx) - r);
        const int j1 = std::min(hw - 1, static_cast<int>(cx) + r);
        for (int i = i0; i <= i1; ++i) {
            for (int j = j0; j <= j1; ++j) {
                const double dy = i - cy, dx = j - cx;
                const double u = (dx * ct + dy * st) / a;
                const double v = (-dx * st + dy * ct) / b;
                const double q = u * u + v * v;
                if (q >= 1.0) continue;
                const double w = (1.0 - q) * (1.0 - q);
                for (int c = 0; c < img.c(); ++c) img(0, c, i, j) += amp * w;
            }
        }
    }
}

void add_pixel_noise(Tensor4& img, Rng& rng, double amplitude) {
    for (Eigen::Index i = 0; i < img.size(); ++i) {
        img.data[i] += rng.uniform(-amplitude, amplitude);
    }
}

bool boxes_intersect(const InstanceBox& a, const InstanceBox& b, int gap) {
    return a.row0 - gap < b.row1 && b.row0 - gap < a.row1 &&
           a.col0 - gap < b.col1 && b.col0 - gap < a.col1;
}

void draw_glyph(Tensor4& img, int cy, int cx, int radius, const GlyphStyle& style,
                const double* tint) {
    const double rim_inner = radius * (1.0 - style.rim_ratio);
    const int hw = img.h();
    const int i0 = std::max(0, cy - radius - 1), i1 = std::min(hw - 1, cy + radius + 1);
    const int j0 = std::max(0, cx - radius - 1), j1 = std::min(hw - 1, cx + radius + 1);
    for (int i = i0; i <= i1; ++i) {
        for (int j = j0; j <= j1; ++j) {
            const double d = std::hypot(i - cy, j - cx);
            const double cover = smooth01(radius + 0.5 - d); // 1px anti-alias
            if (cover <= 0.0) continue;
            const double rim_blend = smooth01(d - (rim_inner - 0.5));
            const double shade =
                style.interior_shade + (style.rim_shade - style.interior_shade) * rim_blend;
            for (int c = 0; c < img.c(); ++c) {
                const double v = shade + tint[c];
                img(0, c, i, j) += (v - img(0, c, i, j)) * cover;
            }
        }
    }
}

} // namespace

SynthSample gen_sample(std::uint64_t seed, int klass, const SynthConfig& cfg) {
    if (klass < 0 || klass >= cfg.num_classes) {
        throw UsageError("gen_sample: class " + std::to_string(klass) +
                         " out of range for " + std::to_string(cfg.num_classes));
    }
    const int hw = cfg.image_size;
    Rng bg_rng(mix_seed(seed, 0x6b67'6421ULL));
    Rng fg_rng(mix_seed(seed, 0x676c'7966ULL));

    SynthSample sample;
    sample.seed = seed;
    sample.label = klass;
    sample.image = Tensor4::constant(1, 3, hw, hw, kBaseShade);

    add_value_noise(sample.image, bg_rng);
    add_distractors(sample.image, bg_rng,
                    static_cast<int>(std::lround(4.0 * cfg.clutter_density)));

    const GlyphStyle style = style_for_class(klass);
    const int radius_cap = (hw - 5) / 2; // placement needs radius + 2 of margin
    if (std::min(cfg.glyph_radius_min, radius_cap) < 3) {
        throw UsageError("gen_sample: image size " + std::to_string(hw) +
                         " is too small for the configured glyphs");
    }
    const int want = fg_rng.uniform_int(cfg.min_instances, cfg.max_instances);
    for (int g = 0; g < want; ++g) {
        const int radius = std::min(
            fg_rng.uniform_int(cfg.glyph_radius_min, cfg.glyph_radius_max), radius_cap);
        double tint[3];
        for (double& t : tint) t = fg_rng.uniform(-0.02, 0.02);
        bool placed = false;
        for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
            const int cy = fg_rng.uniform_int(radius + 2, hw - radius - 3);
            const int cx = fg_rng.uniform_int(radius + 2, hw - radius - 3);
            InstanceBox box{cy - radius, cx - radius, cy + radius + 1, cx + radius + 1, 0.0};
            bool clear = true;
            for (const auto& other : sample.gt_boxes) {
                if (boxes_intersect(box, other, 2)) {
                    clear = false;
                    break;
                }
            }
            if (!clear) continue;
            draw_glyph(sample.image, cy, cx, radius, style, tint);
            sample.gt_boxes.push_back(box);
            placed = true;
        }
    }

    add_pixel_noise(sample.image, bg_rng, cfg.noise_amplitude);
    sample.image.data = sample.image.data.cwiseMax(0.0).cwiseMin(1.0);
    return sample;
}

std::vector<SynthSample> gen_dataset(int n_per_class, std::uint64_t base_seed,
                                     const SynthConfig& cfg) {
    if (n_per_class < 1) throw UsageError("gen_dataset: n_per_class must be >= 1");
    std::vector<SynthSample> out;
    out.reserve(static_cast<std::size_t>(n_per_class) * cfg.num_classes);
    for (int klass = 0; klass < cfg.num_classes; ++klass) {
        for (int i = 0; i < n_per_class; ++i) {
            const std::uint64_t seed =
                base_seed + static_cast<std::uint64_t>(klass) * n_per_class +
                static_cast<std::uint64_t>(i);
            out.push_back(gen_sample(seed, klass, cfg));
        }
    }
    return out;
}

} // namespace gatn
