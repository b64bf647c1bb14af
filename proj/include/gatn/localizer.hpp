#pragma once

#include <vector>

#include <Eigen/Dense>

#include "gatn/tensor.hpp"

namespace gatn {

// Inclusive-exclusive bounding box; coordinates are attention-map cells or
// image pixels depending on context. score is the attention mass of the
// connected component the box came from.
struct InstanceBox {
    int row0 = 0, col0 = 0, row1 = 0, col1 = 0;
    double score = 0.0;

    int height() const { return row1 - row0; }
    int width() const { return col1 - col0; }
    int area() const { return height() * width(); }
    bool operator==(const InstanceBox& o) const {
        return row0 == o.row0 && col0 == o.col0 && row1 == o.row1 && col1 == o.col1;
    }
};

struct LocalizerConfig {
    double rel_threshold = 0.5; // tau, fraction of max(Omega)
    int top_k = 4;
    int patch_size = 96;
    int min_component_area = 2;
};

using BinaryMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// mask(i,j) = Omega(i,j) >= tau * max(Omega); all-zero when max(Omega) <= 0.
BinaryMask threshold_mask(const Tensor4& omega, double tau);

// 4-connected components with tight boxes, ordered by (row0, col0).
// labels(i,j) is the index into boxes, or -1 off the kept components.
struct ComponentSet {
    std::vector<InstanceBox> boxes;
    Eigen::ArrayXXi labels;
};
ComponentSet connected_components(const BinaryMask& mask, int min_component_area);

// Scores each component by the attention mass over its own pixels, sorts by
// (score desc, area desc, row0, col0) and keeps at most k. An empty input
// falls back to one box covering the whole map.
std::vector<InstanceBox> select_top_k(const ComponentSet& components,
                                      const Tensor4& omega, int k);

// Scales map-cell coordinates to pixels, rounding outward and clamping.
InstanceBox map_box_to_image(const InstanceBox& box, int map_h, int map_w,
                             int image_h, int image_w);

// Bilinear resample of a crop, half-pixel-center convention:
// src = (dst + 0.5) * (crop_len / out_len) - 0.5, clamped to the crop.
Tensor4 resize_bilinear(const Tensor4& image, const InstanceBox& pixel_box,
                        int out_h, int out_w);
Tensor4 crop_resize(const Tensor4& image, const InstanceBox& pixel_box, int out);

// threshold -> components -> top-k on one attention map (map coordinates).
std::vector<InstanceBox> localize(const Tensor4& omega, const LocalizerConfig& cfg);

} // namespace gatn
