#pragma once

#include <cstdint>
#include <vector>

#include "gatn/localizer.hpp"
#include "gatn/tensor.hpp"

namespace gatn {

struct SynthConfig {
    int num_classes = 4;
    int image_size = 128; // H = W
    int min_instances = 1;
    int max_instances = 4;
    int glyph_radius_min = 8; // >= 4 so the detail survives downsampling
    int glyph_radius_max = 14;
    double clutter_density = 1.0; // distractor count = round(4 * density)
    double noise_amplitude = 0.04;
};

struct SynthSample {
    Tensor4 image; // (1,3,H,W), values in [0,1]
    int label = 0;
    std::vector<InstanceBox> gt_boxes; // pixel coordinates, pairwise disjoint
    std::uint64_t seed = 0;
};

// One image: class-agnostic background (low-frequency value noise, distractor
// blobs, pixel noise) plus 1..max_instances vesicle glyphs. The class decides
// the glyph rim thickness ratio (0.1, 0.2, ... per class); rim and interior
// shades are balanced so the glyphs leave the global mean and variance alone.
SynthSample gen_sample(std::uint64_t seed, int klass, const SynthConfig& cfg);

// Balanced dataset; sample seeds are base_seed + class*n_per_class + index,
// so disjoint base ranges give disjoint splits.
std::vector<SynthSample> gen_dataset(int n_per_class, std::uint64_t base_seed,
                                     const SynthConfig& cfg);

} // namespace gatn
