#pragma once

#include <array>
#include <utility>

#include <Eigen/Dense>

#include "gatn/rng.hpp"
#include "gatn/tape.hpp"
#include "gatn/tensor.hpp"

namespace gatn {

struct AttentionConfig {
    std::array<int, 2> dilation_rates{2, 4};
    int hidden_channels = 0;   // channel count preserved through the dilated blocks
    double gate_epsilon = 0.0; // reserved
};

// Two dilated 3x3 conv blocks, channel count preserved. Kernels are fan-in
// uniform, biases zero.
struct AttentionParams {
    Tensor4 block1_kernel, block1_bias;
    Tensor4 block2_kernel, block2_bias;
};
AttentionParams init_attention_params(int channels, Rng& rng);

struct AttentionVars {
    VarId semantic_map;   // S, (n,1,h,w), sums to 1 per item
    VarId aggregated_map; // M, (n,1,h,w), pre-softmax channel sum
    VarId gates;          // (n,C,1,1), each in [0,1)
    VarId attention_map;  // Omega, (n,1,h,w)
};

// Dilated blocks (conv+ReLU twice), channel sum, spatial softmax. Returns
// {S, M}. Padding is dilation*(k-1)/2 so the spatial extent is preserved.
std::pair<VarId, VarId> semantic_map(Tape& t, VarId x, VarId block1_kernel,
                                     VarId block1_bias, VarId block2_kernel,
                                     VarId block2_bias, const AttentionConfig& cfg);

// gate_k = ReLU(tanh(<channel k of X, S>)); the correspondence is the inner
// product of the flattened channel with the flattened semantic map.
VarId channel_gates(Tape& t, VarId x, VarId s);

// Omega(i,j) = (1/C) * sum_k gate_k * X(k,i,j)
VarId attention_map(Tape& t, VarId x, VarId gates);

AttentionVars gated_attention(Tape& t, VarId x, VarId block1_kernel, VarId block1_bias,
                              VarId block2_kernel, VarId block2_bias,
                              const AttentionConfig& cfg);

// Value-level convenience: runs the composition on a private tape.
struct AttentionOutput {
    Tensor4 semantic_map;
    Eigen::MatrixXd gates; // (n, C)
    Tensor4 attention_map;
    Tensor4 aggregated_map;
};
AttentionOutput gated_attention(const Tensor4& x, const AttentionParams& params,
                                const AttentionConfig& cfg);

} // namespace gatn
