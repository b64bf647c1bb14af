#include "gatn/attention.hpp"

#include <cmath>

#include "gatn/errors.hpp"

namespace gatn {
namespace {

Tensor4 fanin_uniform_kernel(int out_c, int in_c, int k, Rng& rng) {
    Tensor4 t(out_c, in_c, k, k);
    const double bound = std::sqrt(1.0 / (static_cast<double>(in_c) * k * k));
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(-bound, bound);
    return t;
}

} // namespace

AttentionParams init_attention_params(int channels, Rng& rng) {
    AttentionParams p;
    p.block1_kernel = fanin_uniform_kernel(channels, channels, 3, rng);
    p.block1_bias = Tensor4(1, channels, 1, 1);
    p.block2_kernel = fanin_uniform_kernel(channels, channels, 3, rng);
    p.block2_bias = Tensor4(1, channels, 1, 1);
    return p;
}

std::pair<VarId, VarId> semantic_map(Tape& t, VarId x, VarId block1_kernel,
                                     VarId block1_bias, VarId block2_kernel,
                                     VarId block2_bias, const AttentionConfig& cfg) {
    if (cfg.dilation_rates[0] < 1 || cfg.dilation_rates[1] < 1) {
        throw UsageError("attention: dilation rates must be strictly positive");
    }
    auto spec_for = [&](int rate, VarId kernel) {
        const int k = t.value(kernel).h();
        return ConvSpec{1, rate, rate * (k - 1) / 2};
    };
    VarId h1 = relu(t, conv2d(t, x, block1_kernel, block1_bias,
                              spec_for(cfg.dilation_rates[0], block1_kernel)));
    VarId h2 = relu(t, conv2d(t, h1, block2_kernel, block2_bias,
                              spec_for(cfg.dilation_rates[1], block2_kernel)));
    VarId m = channel_sum(t, h2);
    VarId s = spatial_softmax(t, m);
    return {s, m};
}

VarId channel_gates(Tape& t, VarId x, VarId s) {
    return relu(t, tanh_act(t, channel_dot(t, x, s)));
}

VarId attention_map(Tape& t, VarId x, VarId gates) {
    return gated_channel_avg(t, x, gates);
}

AttentionVars gated_attention(Tape& t, VarId x, VarId block1_kernel, VarId block1_bias,
                              VarId block2_kernel, VarId block2_bias,
                              const AttentionConfig& cfg) {
    AttentionVars out;
    auto [s, m] = semantic_map(t, x, block1_kernel, block1_bias, block2_kernel,
                               block2_bias, cfg);
    out.semantic_map = s;
    out.aggregated_map = m;
    out.gates = channel_gates(t, x, s);
    out.attention_map = attention_map(t, x, out.gates);
    return out;
}

AttentionOutput gated_attention(const Tensor4& x, const AttentionParams& params,
                                const AttentionConfig& cfg) {
    Tape t;
    VarId xid = t.leaf(x);
    VarId k1 = t.leaf(params.block1_kernel);
    VarId b1 = t.leaf(params.block1_bias);
    VarId k2 = t.leaf(params.block2_kernel);
    VarId b2 = t.leaf(params.block2_bias);
    AttentionVars vars = gated_attention(t, xid, k1, b1, k2, b2, cfg);

    AttentionOutput out;
    out.semantic_map = t.value(vars.semantic_map);
    out.aggregated_map = t.value(vars.aggregated_map);
    out.attention_map = t.value(vars.attention_map);
    out.gates = to_matrix(t.value(vars.gates));
    return out;
}

} // namespace gatn
