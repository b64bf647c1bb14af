#include "gatn/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "gatn/errors.hpp"
#include "gatn/rng.hpp"

namespace gatn {
namespace {

Tensor4 fanin_uniform(int out_c, int in_c, int kh, int kw, Rng& rng) {
    Tensor4 t(out_c, in_c, kh, kw);
    const double bound = std::sqrt(1.0 / (static_cast<double>(in_c) * kh * kw));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(-bound, bound);
    return t;
}

// variance 2/fan_in; keeps activation scale flat through the ReLU stages
Tensor4 relu_fanin_uniform(int out_c, int in_c, int kh, int kw, Rng& rng) {
    Tensor4 t(out_c, in_c, kh, kw);
    const double bound = std::sqrt(6.0 / (static_cast<double>(in_c) * kh * kw));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(-bound, bound);
    return t;
}

void add_backbone(ModelParams& params, const std::string& prefix,
                  const std::vector<int>& stages, int in_channels, Rng& rng) {
    int c_in = in_channels;
    for (std::size_t s = 0; s < stages.size(); ++s) {
        const int c_out = stages[s];
        params.add(prefix + ".stage" + std::to_string(s) + ".kernel",
                   relu_fanin_uniform(c_out, c_in, 3, 3, rng));
        params.add(prefix + ".stage" + std::to_string(s) + ".bias",
                   Tensor4(1, c_out, 1, 1));
        c_in = c_out;
    }
}

struct ParamIndex {
    std::vector<std::pair<VarId, VarId>> global_stages;   // (kernel, bias)
    std::vector<std::pair<VarId, VarId>> instance_stages;
    VarId attn_k1, attn_b1, attn_k2, attn_b2;
    VarId head_g_w, head_g_b, head_f_w, head_f_b;
};

// ids are index-aligned with the construction order in init_model_params
ParamIndex index_params(const ModelParams& params, std::span<const VarId> ids,
                        const ModelConfig& cfg) {
    ParamIndex ix;
    std::size_t at = 0;
    auto take = [&](const char* what) {
        if (at >= ids.size()) throw UsageError(std::string("model: missing parameter ") + what);
        return ids[at++];
    };
    for (std::size_t s = 0; s < cfg.global_backbone.stage_channels.size(); ++s) {
        VarId k = take("global kernel");
        VarId b = take("global bias");
        ix.global_stages.push_back({k, b});
    }
    ix.attn_k1 = take("attn k1");
    ix.attn_b1 = take("attn b1");
    ix.attn_k2 = take("attn k2");
    ix.attn_b2 = take("attn b2");
    for (std::size_t s = 0; s < cfg.instance_backbone.stage_channels.size(); ++s) {
        VarId k = take("instance kernel");
        VarId b = take("instance bias");
        ix.instance_stages.push_back({k, b});
    }
    ix.head_g_w = take("head.global.weight");
    ix.head_g_b = take("head.global.bias");
    ix.head_f_w = take("head.fusion.weight");
    ix.head_f_b = take("head.fusion.bias");
    if (at != params.size()) throw UsageError("model: parameter count mismatch");
    return ix;
}

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw IoError("checkpoint: truncated file " + path);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

void ModelConfig::validate() const {
    for (const auto* bb : {&global_backbone, &instance_backbone}) {
        if (bb->stage_channels.empty()) {
            throw UsageError("model config: a backbone needs at least one stage");
        }
        const int total_stride = 1 << bb->stage_channels.size();
        if (bb->input_size % total_stride != 0) {
            throw ShapeError("model config: input size " + std::to_string(bb->input_size) +
                             " is not divisible by the total stride " +
                             std::to_string(total_stride));
        }
    }
    const int map = global_backbone.input_size >>
                    static_cast<int>(global_backbone.stage_channels.size());
    if (map < 3) {
        throw UsageError("model config: the attention map would be " + std::to_string(map) +
                         "x" + std::to_string(map) + ", needs at least 3x3");
    }
    if (num_classes < 2) throw UsageError("model config: need at least two classes");
    if (localizer.patch_size != instance_backbone.input_size) {
        throw UsageError("model config: patch size must equal the instance input size");
    }
}

ParamTensor& ModelParams::add(std::string name, Tensor4 value) {
    ParamTensor p;
    p.grad = Tensor4(value.n(), value.c(), value.h(), value.w());
    p.value = std::move(value);
    p.name = std::move(name);
    params_.push_back(std::move(p));
    return params_.back();
}

ParamTensor* ModelParams::find(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

const ParamTensor* ModelParams::find(const std::string& name) const {
    for (const auto& p : params_) {
        if (p.name == name) return &p;
    }
    return nullptr;
}

std::int64_t ModelParams::scalar_count() const {
    std::int64_t total = 0;
    for (const auto& p : params_) total += p.value.size();
    return total;
}

void ModelParams::zero_grads() {
    for (auto& p : params_) p.grad.data.setZero();
}

ModelParams init_model_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(mix_seed(seed, 0x70617261'6dULL));
    ModelParams params;
    add_backbone(params, "global", cfg.global_backbone.stage_channels, 3, rng);
    const int c = cfg.global_feature_dim();
    params.add("attn.block1.kernel", fanin_uniform(c, c, 3, 3, rng));
    params.add("attn.block1.bias", Tensor4(1, c, 1, 1));
    params.add("attn.block2.kernel", fanin_uniform(c, c, 3, 3, rng));
    params.add("attn.block2.bias", Tensor4(1, c, 1, 1));
    add_backbone(params, "instance", cfg.instance_backbone.stage_channels, 3, rng);
    params.add("head.global.weight",
               fanin_uniform(cfg.num_classes, cfg.global_feature_dim(), 1, 1, rng));
    params.add("head.global.bias", Tensor4(1, cfg.num_classes, 1, 1));
    params.add("head.fusion.weight",
               fanin_uniform(cfg.num_classes, cfg.fusion_feature_dim(), 1, 1, rng));
    params.add("head.fusion.bias", Tensor4(1, cfg.num_classes, 1, 1));
    return params;
}

VarId backbone_forward(Tape& t, VarId image,
                       std::span<const std::pair<VarId, VarId>> stage_params) {
    const Tensor4& img = t.value(image);
    const int total_stride = 1 << stage_params.size();
    if (img.h() % total_stride != 0 || img.w() % total_stride != 0) {
        throw ShapeError("backbone: input " + std::to_string(img.h()) + "x" +
                         std::to_string(img.w()) + " is not divisible by the stride " +
                         std::to_string(total_stride));
    }
    // images arrive in [0,1]; center on mid-gray so the first stage responds
    // to structure instead of brightness
    VarId x = add_scaled(t, image,
                         t.leaf(Tensor4::constant(img.n(), img.c(), img.h(), img.w(), 0.5)),
                         1.0, -1.0);
    const ConvSpec spec{2, 1, 1};
    for (const auto& [kernel, bias] : stage_params) {
        x = relu(t, conv2d(t, x, kernel, bias, spec));
    }
    return x;
}

std::vector<VarId> bind_params(Tape& t, const ModelParams& params) {
    std::vector<VarId> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(t.leaf(p.value));
    return ids;
}

ForwardVars forward_on_tape(Tape& t, const Tensor4& image_full,
                            std::span<const VarId> param_ids, const ModelParams& params,
                            const ModelConfig& cfg, ForwardMode mode) {
    if (image_full.n() != 1 || image_full.c() != 3) {
        throw ShapeError("forward: expected one (1,3,H,W) image");
    }
    const ParamIndex ix = index_params(params, param_ids, cfg);

    // global branch on the downsampled image
    const InstanceBox whole{0, 0, image_full.h(), image_full.w(), 0.0};
    Tensor4 down = crop_resize(image_full, whole, cfg.global_backbone.input_size);
    VarId image = t.leaf(std::move(down));
    VarId x = backbone_forward(t, image, ix.global_stages);
    ForwardVars out;
    out.global_features = x;
    out.attention = gated_attention(t, x, ix.attn_k1, ix.attn_b1, ix.attn_k2, ix.attn_b2,
                                    cfg.attention);
    VarId global_feat = global_avg_pool(t, x);
    out.logits_global = linear(t, global_feat, ix.head_g_w, ix.head_g_b);
    if (mode == ForwardMode::global_only) {
        out.logits_fusion = VarId{};
        return out;
    }

    // instance branch: localize on Omega, crop at full resolution
    const Tensor4& omega = t.value(out.attention.attention_map);
    out.boxes = localize(omega, cfg.localizer);
    std::vector<VarId> features{global_feat};
    const int k = cfg.localizer.top_k;
    for (std::size_t b = 0; b < out.boxes.size() && b < static_cast<std::size_t>(k); ++b) {
        const InstanceBox pixel_box = map_box_to_image(out.boxes[b], omega.h(), omega.w(),
                                                       image_full.h(), image_full.w());
        Tensor4 patch = crop_resize(image_full, pixel_box, cfg.localizer.patch_size);
        VarId patch_id = t.leaf(std::move(patch));
        VarId feat = global_avg_pool(t, backbone_forward(t, patch_id, ix.instance_stages));
        features.push_back(feat);
    }
    while (features.size() < static_cast<std::size_t>(k) + 1) {
        features.push_back(t.leaf(Tensor4(1, cfg.instance_feature_dim(), 1, 1)));
    }
    VarId fusion_feat = concat_channels(t, features);
    out.logits_fusion = linear(t, fusion_feat, ix.head_f_w, ix.head_f_b);
    return out;
}

ForwardOutput forward(const Tensor4& image_full, const ModelParams& params,
                      const ModelConfig& cfg, ForwardMode mode) {
    Tape t;
    std::vector<VarId> ids = bind_params(t, params);
    ForwardVars vars = forward_on_tape(t, image_full, ids, params, cfg, mode);

    ForwardOutput out;
    out.logits_global = to_vector(t.value(vars.logits_global));
    out.logits_fusion = vars.logits_fusion.valid()
                            ? to_vector(t.value(vars.logits_fusion))
                            : Eigen::VectorXd::Zero(cfg.num_classes);
    out.attention.semantic_map = t.value(vars.attention.semantic_map);
    out.attention.aggregated_map = t.value(vars.attention.aggregated_map);
    out.attention.attention_map = t.value(vars.attention.attention_map);
    out.attention.gates = to_matrix(t.value(vars.attention.gates));
    out.boxes = vars.boxes;
    return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::ArrayXd z = logits.array() - logits.maxCoeff();
    z = z.exp();
    return (z / z.sum()).matrix();
}

int argmax_lowest(const Eigen::VectorXd& v) {
    int best = 0;
    for (int i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

std::pair<int, Eigen::VectorXd> predict(const Tensor4& image_full,
                                        const ModelParams& params, const ModelConfig& cfg,
                                        ForwardMode mode) {
    ForwardOutput out = forward(image_full, params, cfg, mode);
    const Eigen::VectorXd& logits =
        mode == ForwardMode::global_only ? out.logits_global : out.logits_fusion;
    Eigen::VectorXd probs = softmax(logits);
    return {argmax_lowest(probs), probs};
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot open " + path + " for writing");
    out.write("GATN", 4);
    write_u32(out, 1);
    write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        write_u32(out, static_cast<std::uint32_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u32(out, 4);
        for (int d : {p.value.n(), p.value.c(), p.value.h(), p.value.w()}) {
            write_u32(out, static_cast<std::uint32_t>(d));
        }
        out.write(reinterpret_cast<const char*>(p.value.data.data()),
                  static_cast<std::streamsize>(p.value.size() * 8));
    }
    if (!out) throw IoError("checkpoint: short write to " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "GATN", 4) != 0) {
        throw IoError("bad checkpoint magic in " + path);
    }
    const std::uint32_t version = read_u32(in, path);
    if (version != 1) {
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint32_t count = read_u32(in, path);
    ModelParams params;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len)) {
            throw IoError("checkpoint: truncated name in " + path);
        }
        const std::uint32_t rank = read_u32(in, path);
        if (rank != 4) throw IoError("checkpoint: unsupported rank in " + path);
        int dims[4];
        for (int& d : dims) d = static_cast<int>(read_u32(in, path));
        Tensor4 value(dims[0], dims[1], dims[2], dims[3]);
        in.read(reinterpret_cast<char*>(value.data.data()),
                static_cast<std::streamsize>(value.size() * 8));
        if (in.gcount() != static_cast<std::streamsize>(value.size() * 8)) {
            throw IoError("checkpoint: truncated values in " + path);
        }
        params.add(std::move(name), std::move(value));
    }
    return params;
}

} // namespace gatn
