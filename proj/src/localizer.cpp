#include "gatn/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gatn/errors.hpp"

namespace gatn {

BinaryMask threshold_mask(const Tensor4& omega, double tau) {
    if (omega.n() != 1 || omega.c() != 1) {
        throw ShapeError("threshold_mask: expected a single (1,1,h,w) map");
    }
    if (tau <= 0.0 || tau >= 1.0) {
        throw UsageError("threshold_mask: tau must lie in (0,1)");
    }
    const int h = omega.h(), w = omega.w();
    BinaryMask mask(h, w);
    const double peak = omega.data.maxCoeff();
    if (peak <= 0.0) {
        mask.setConstant(false);
        return mask;
    }
    const double cut = tau * peak;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) mask(i, j) = omega(0, 0, i, j) >= cut;
    }
    return mask;
}

ComponentSet connected_components(const BinaryMask& mask, int min_component_area) {
    const int h = static_cast<int>(mask.rows());
    const int w = static_cast<int>(mask.cols());
    ComponentSet out;
    out.labels = Eigen::ArrayXXi::Constant(h, w, -1);

    Eigen::ArrayXXi raw = Eigen::ArrayXXi::Constant(h, w, -1);
    std::vector<InstanceBox> raw_boxes;
    std::vector<int> areas;
    std::vector<std::pair<int, int>> stack;

    for (int si = 0; si < h; ++si) {
        for (int sj = 0; sj < w; ++sj) {
            if (!mask(si, sj) || raw(si, sj) >= 0) continue;
            const int id = static_cast<int>(raw_boxes.size());
            InstanceBox box{si, sj, si + 1, sj + 1, 0.0};
            int area = 0;
            stack.assign(1, {si, sj});
            raw(si, sj) = id;
            while (!stack.empty()) {
                auto [i, j] = stack.back();
                stack.pop_back();
                ++area;
                box.row0 = std::min(box.row0, i);
                box.col0 = std::min(box.col0, j);
                box.row1 = std::max(box.row1, i + 1);
                box.col1 = std::max(box.col1, j + 1);
                const int di[4] = {-1, 1, 0, 0};
                const int dj[4] = {0, 0, -1, 1};
                for (int d = 0; d < 4; ++d) {
                    const int ni = i + di[d], nj = j + dj[d];
                    if (ni < 0 || ni >= h || nj < 0 || nj >= w) continue;
                    if (!mask(ni, nj) || raw(ni, nj) >= 0) continue;
                    raw(ni, nj) = id;
                    stack.push_back({ni, nj});
                }
            }
            raw_boxes.push_back(box);
            areas.push_back(area);
        }
    }

    // Drop small components, relabel the survivors. The scan order above
    // already yields boxes sorted by (row0 of first pixel); re-sort to pin
    // the documented (row0, col0) order.
    std::vector<int> keep;
    for (int id = 0; id < static_cast<int>(raw_boxes.size()); ++id) {
        if (areas[static_cast<std::size_t>(id)] >= min_component_area) keep.push_back(id);
    }
    std::sort(keep.begin(), keep.end(), [&](int a, int b) {
        const InstanceBox& ba = raw_boxes[static_cast<std::size_t>(a)];
        const InstanceBox& bb = raw_boxes[static_cast<std::size_t>(b)];
        if (ba.row0 != bb.row0) return ba.row0 < bb.row0;
        return ba.col0 < bb.col0;
    });
    std::vector<int> remap(raw_boxes.size(), -1);
    for (int new_id = 0; new_id < static_cast<int>(keep.size()); ++new_id) {
        remap[static_cast<std::size_t>(keep[static_cast<std::size_t>(new_id)])] = new_id;
        out.boxes.push_back(raw_boxes[static_cast<std::size_t>(keep[static_cast<std::size_t>(new_id)])]);
    }
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            if (raw(i, j) >= 0) out.labels(i, j) = remap[static_cast<std::size_t>(raw(i, j))];
        }
    }
    return out;
}

std::vector<InstanceBox> select_top_k(const ComponentSet& components,
                                      const Tensor4& omega, int k) {
    if (k < 1) throw UsageError("select_top_k: k must be >= 1");
    const int h = omega.h(), w = omega.w();
    if (components.boxes.empty()) {
        InstanceBox whole{0, 0, h, w, 0.0};
        whole.score = omega.data.sum();
        return {whole};
    }
    std::vector<InstanceBox> scored = components.boxes;
    for (auto& b : scored) b.score = 0.0;
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            const int id = components.labels(i, j);
            if (id >= 0) scored[static_cast<std::size_t>(id)].score += omega(0, 0, i, j);
        }
    }
    std::stable_sort(scored.begin(), scored.end(), [](const InstanceBox& a, const InstanceBox& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.area() != b.area()) return a.area() > b.area();
        if (a.row0 != b.row0) return a.row0 < b.row0;
        return a.col0 < b.col0;
    });
    if (static_cast<int>(scored.size()) > k) scored.resize(static_cast<std::size_t>(k));
    return scored;
}

InstanceBox map_box_to_image(const InstanceBox& box, int map_h, int map_w,
                             int image_h, int image_w) {
    if (map_h < 1 || map_w < 1 || image_h < 1 || image_w < 1) {
        throw UsageError("map_box_to_image: dimensions must be positive");
    }
    auto scale_floor = [](int v, int num, int den) {
        return static_cast<int>((static_cast<std::int64_t>(v) * num) / den);
    };
    auto scale_ceil = [](int v, int num, int den) {
        return static_cast<int>((static_cast<std::int64_t>(v) * num + den - 1) / den);
    };
    InstanceBox out;
    out.row0 = std::clamp(scale_floor(box.row0, image_h, map_h), 0, image_h - 1);
    out.col0 = std::clamp(scale_floor(box.col0, image_w, map_w), 0, image_w - 1);
    out.row1 = std::clamp(scale_ceil(box.row1, image_h, map_h), out.row0 + 1, image_h);
    out.col1 = std::clamp(scale_ceil(box.col1, image_w, map_w), out.col0 + 1, image_w);
    out.score = box.score;
    return out;
}

Tensor4 resize_bilinear(const Tensor4& image, const InstanceBox& pixel_box,
                        int out_h, int out_w) {
    const int src_h = pixel_box.height(), src_w = pixel_box.width();
    if (src_h <= 0 || src_w <= 0) {
        throw UsageError("resize_bilinear: degenerate box " + std::to_string(pixel_box.row0) +
                         "," + std::to_string(pixel_box.col0) + "," +
                         std::to_string(pixel_box.row1) + "," + std::to_string(pixel_box.col1));
    }
    if (pixel_box.row0 < 0 || pixel_box.col0 < 0 || pixel_box.row1 > image.h() ||
        pixel_box.col1 > image.w()) {
        throw ShapeError("resize_bilinear: box extends outside the image");
    }
    Tensor4 out(image.n(), image.c(), out_h, out_w);
    const double sy = static_cast<double>(src_h) / out_h;
    const double sx = static_cast<double>(src_w) / out_w;
    for (int item = 0; item < image.n(); ++item) {
        for (int c = 0; c < image.c(); ++c) {
            for (int oi = 0; oi < out_h; ++oi) {
                double fy = (oi + 0.5) * sy - 0.5;
                fy = std::clamp(fy, 0.0, static_cast<double>(src_h - 1));
                const int y0 = static_cast<int>(fy);
                const int y1 = std::min(y0 + 1, src_h - 1);
                const double wy = fy - y0;
                for (int oj = 0; oj < out_w; ++oj) {
                    double fx = (oj + 0.5) * sx - 0.5;
                    fx = std::clamp(fx, 0.0, static_cast<double>(src_w - 1));
                    const int x0 = static_cast<int>(fx);
                    const int x1 = std::min(x0 + 1, src_w - 1);
                    const double wx = fx - x0;
                    const double v00 = image(item, c, pixel_box.row0 + y0, pixel_box.col0 + x0);
                    const double v01 = image(item, c, pixel_box.row0 + y0, pixel_box.col0 + x1);
                    const double v10 = image(item, c, pixel_box.row0 + y1, pixel_box.col0 + x0);
                    const double v11 = image(item, c, pixel_box.row0 + y1, pixel_box.col0 + x1);
                    const double top = v00 + (v01 - v00) * wx;
                    const double bot = v10 + (v11 - v10) * wx;
                    out(item, c, oi, oj) = top + (bot - top) * wy;
                }
            }
        }
    }
    return out;
}

Tensor4 crop_resize(const Tensor4& image, const InstanceBox& pixel_box, int out) {
    return resize_bilinear(image, pixel_box, out, out);
}

std::vector<InstanceBox> localize(const Tensor4& omega, const LocalizerConfig& cfg) {
    BinaryMask mask = threshold_mask(omega, cfg.rel_threshold);
    ComponentSet comps = connected_components(mask, cfg.min_component_area);
    return select_top_k(comps, omega, cfg.top_k);
}

} // namespace gatn
