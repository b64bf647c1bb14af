#pragma once

#include <Eigen/Dense>

#include "gatn/tensor.hpp"

namespace gatn {

struct ConvSpec {
    int stride = 1;
    int dilation = 1;
    int padding = 0;
};

int conv_out_extent(int in, int kernel, const ConvSpec& spec);

// Cross-correlation with zero padding. kernel dims are (out_c, in_c, kh, kw),
// bias has out_c entries. Backward rules accumulate (+=) into the grad slots
// so a value feeding several ops sums its contributions.
Tensor4 conv2d_fwd(const Tensor4& input, const Tensor4& kernel,
                   const Eigen::VectorXd& bias, const ConvSpec& spec);
void conv2d_bwd(const Tensor4& input, const Tensor4& kernel, const ConvSpec& spec,
                const Tensor4& grad_out, Tensor4* grad_input, Tensor4* grad_kernel,
                Eigen::VectorXd* grad_bias);

Tensor4 relu_fwd(const Tensor4& x);
void relu_bwd(const Tensor4& x, const Tensor4& grad_out, Tensor4& grad_x);

Tensor4 tanh_fwd(const Tensor4& x);
void tanh_bwd(const Tensor4& y, const Tensor4& grad_out, Tensor4& grad_x);

// Per batch item, softmax over the (h,w) plane of a single-channel map.
Tensor4 spatial_softmax_fwd(const Tensor4& m);
void spatial_softmax_bwd(const Tensor4& s, const Tensor4& grad_out, Tensor4& grad_m);

Tensor4 channel_sum_fwd(const Tensor4& x);
void channel_sum_bwd(const Dims4& x_dims, const Tensor4& grad_out, Tensor4& grad_x);

// Mean over spatial positions, (n,c,h,w) -> (n,c,1,1).
Tensor4 global_avg_pool_fwd(const Tensor4& x);
void global_avg_pool_bwd(const Dims4& x_dims, const Tensor4& grad_out, Tensor4& grad_x);

// x:(n,d,1,1)  weight:(k,d,1,1)  bias:(1,k,1,1)  ->  (n,k,1,1), x*W^T + b.
Tensor4 linear_fwd(const Tensor4& x, const Tensor4& weight, const Tensor4& bias);
void linear_bwd(const Tensor4& x, const Tensor4& weight, const Tensor4& grad_out,
                Tensor4& grad_x, Tensor4& grad_weight, Tensor4& grad_bias);

// Correspondence of each channel with a single-channel map:
// out(n,k) = sum_ij X(n,k,i,j) * s(n,0,i,j), shape (n,C,1,1).
Tensor4 channel_dot_fwd(const Tensor4& x, const Tensor4& s);
void channel_dot_bwd(const Tensor4& x, const Tensor4& s, const Tensor4& grad_out,
                     Tensor4& grad_x, Tensor4& grad_s);

// Gate-weighted channel average: out(n,0,i,j) = (1/C) sum_k g(n,k) X(n,k,i,j).
Tensor4 gated_channel_avg_fwd(const Tensor4& x, const Tensor4& gates);
void gated_channel_avg_bwd(const Tensor4& x, const Tensor4& gates, const Tensor4& grad_out,
                           Tensor4& grad_x, Tensor4& grad_gates);

} // namespace gatn
