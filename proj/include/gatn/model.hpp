#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gatn/attention.hpp"
#include "gatn/localizer.hpp"
#include "gatn/tape.hpp"
#include "gatn/tensor.hpp"

namespace gatn {

struct BackboneConfig {
    std::vector<int> stage_channels{8, 16, 32, 64};
    int input_size = 96; // must be divisible by 2^stages
};

struct ModelConfig {
    int num_classes = 4;
    BackboneConfig global_backbone;
    BackboneConfig instance_backbone;
    AttentionConfig attention;
    LocalizerConfig localizer;

    int global_feature_dim() const { return global_backbone.stage_channels.back(); }
    int instance_feature_dim() const { return instance_backbone.stage_channels.back(); }
    int fusion_feature_dim() const {
        return global_feature_dim() + localizer.top_k * instance_feature_dim();
    }
    // throws UsageError when stage arithmetic leaves a degenerate map
    void validate() const;
};

struct ParamTensor {
    std::string name;
    Tensor4 value;
    Tensor4 grad; // same shape, accumulated by the training loop
};

// Named parameter collection; iteration order is construction order and fixes
// the checkpoint layout.
class ModelParams {
public:
    ParamTensor& add(std::string name, Tensor4 value);
    ParamTensor& at(std::size_t i) { return params_[i]; }
    const ParamTensor& at(std::size_t i) const { return params_[i]; }
    ParamTensor* find(const std::string& name);
    const ParamTensor* find(const std::string& name) const;
    std::size_t size() const { return params_.size(); }
    std::int64_t scalar_count() const;
    void zero_grads();

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<ParamTensor> params_;
};

// Fan-in uniform kernels/weights, zero biases; layout:
// global.stage*.{kernel,bias}, attn.block{1,2}.{kernel,bias},
// instance.stage*.{kernel,bias}, head.global.{weight,bias},
// head.fusion.{weight,bias}.
ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed);

// Stack of [3x3 conv, stride 2, pad 1, ReLU] stages. stage_params holds
// (kernel, bias) ids per stage.
VarId backbone_forward(Tape& t, VarId image,
                       std::span<const std::pair<VarId, VarId>> stage_params);

enum class ForwardMode { full, global_only };

struct ForwardOutput {
    Eigen::VectorXd logits_global; // Y_g
    Eigen::VectorXd logits_fusion; // Y_f (zeros in global_only mode)
    AttentionOutput attention;
    std::vector<InstanceBox> boxes; // attention-map coordinates
};

struct ForwardVars {
    VarId logits_global;
    VarId logits_fusion; // invalid in global_only mode
    VarId global_features; // backbone output X feeding the attention module
    AttentionVars attention;
    std::vector<InstanceBox> boxes;
};

// Registers every parameter as a tape leaf; the result is index-aligned with
// the ModelParams iteration order.
std::vector<VarId> bind_params(Tape& t, const ModelParams& params);

// Full two-branch pass over one image (n = 1):
// downsample -> global backbone -> attention -> Y_g; localize on Omega, crop
// patches at full resolution, shared instance backbone per patch, zero-pad to
// top_k features, concat with the global feature -> Y_f.
ForwardVars forward_on_tape(Tape& t, const Tensor4& image_full,
                            std::span<const VarId> param_ids, const ModelParams& params,
                            const ModelConfig& cfg, ForwardMode mode = ForwardMode::full);

ForwardOutput forward(const Tensor4& image_full, const ModelParams& params,
                      const ModelConfig& cfg, ForwardMode mode = ForwardMode::full);

// argmax of softmax(Y_f) (Y_g in global_only mode); ties break low.
std::pair<int, Eigen::VectorXd> predict(const Tensor4& image_full,
                                        const ModelParams& params, const ModelConfig& cfg,
                                        ForwardMode mode = ForwardMode::full);

Eigen::VectorXd softmax(const Eigen::VectorXd& logits);
int argmax_lowest(const Eigen::VectorXd& v);

// Checkpoint: magic "GATN", u32 version=1, u32 array count, then per array
// u32 name length, name bytes, u32 rank, u32 dims, f64 values; all
// little-endian. Round-trips bit-exact.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

} // namespace gatn
