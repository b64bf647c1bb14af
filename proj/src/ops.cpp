#include "gatn/ops.hpp"

#include <string>

#include "gatn/errors.hpp"

namespace gatn {
namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

// Unfolds one batch item into a (in_c*kh*kw) x (oh*ow) patch matrix,
// zero-filled where taps land in the padding.
void im2col(const Tensor4& in, int item, int kh, int kw, const ConvSpec& cs,
            int oh, int ow, RowMat& col) {
    const int ci = in.c(), h = in.h(), w = in.w();
    col.setZero();
    int q = 0;
    for (int c = 0; c < ci; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++q) {
                double* dst = col.data() + static_cast<std::int64_t>(q) * oh * ow;
                const double* src = in.data.data() + in.index(item, c, 0, 0);
                for (int oi = 0; oi < oh; ++oi) {
                    const int ih = oi * cs.stride - cs.padding + ki * cs.dilation;
                    if (ih < 0 || ih >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int iw = oj * cs.stride - cs.padding + kj * cs.dilation;
                        if (iw < 0 || iw >= w) continue;
                        dst[oi * ow + oj] = src[ih * w + iw];
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch-matrix gradient back onto the input grid.
void col2im_add(const RowMat& col, int item, int kh, int kw, const ConvSpec& cs,
                int oh, int ow, Tensor4& grad_in) {
    const int ci = grad_in.c(), h = grad_in.h(), w = grad_in.w();
    int q = 0;
    for (int c = 0; c < ci; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj, ++q) {
                const double* src = col.data() + static_cast<std::int64_t>(q) * oh * ow;
                double* dst = grad_in.data.data() + grad_in.index(item, c, 0, 0);
                for (int oi = 0; oi < oh; ++oi) {
                    const int ih = oi * cs.stride - cs.padding + ki * cs.dilation;
                    if (ih < 0 || ih >= h) continue;
                    for (int oj = 0; oj < ow; ++oj) {
                        const int iw = oj * cs.stride - cs.padding + kj * cs.dilation;
                        if (iw < 0 || iw >= w) continue;
                        dst[ih * w + iw] += src[oi * ow + oj];
                    }
                }
            }
        }
    }
}

void check_conv_args(const Tensor4& input, const Tensor4& kernel,
                     Eigen::Index bias_len, const ConvSpec& spec) {
    require(kernel.c() == input.c(),
            "conv2d: channel axis mismatch, input has " + std::to_string(input.c()) +
                " channels but kernel expects " + std::to_string(kernel.c()));
    require(kernel.h() % 2 == 1 && kernel.w() % 2 == 1,
            "conv2d: kernel axes kh,kw must be odd, got " + std::to_string(kernel.h()) +
                "x" + std::to_string(kernel.w()));
    require(bias_len == kernel.n(),
            "conv2d: bias axis has " + std::to_string(bias_len) + " entries, kernel has " +
                std::to_string(kernel.n()) + " output channels");
    require(spec.stride >= 1 && spec.dilation >= 1 && spec.padding >= 0,
            "conv2d: stride/dilation must be >= 1 and padding >= 0");
    require(conv_out_extent(input.h(), kernel.h(), spec) >= 1,
            "conv2d: height axis collapses to an empty output");
    require(conv_out_extent(input.w(), kernel.w(), spec) >= 1,
            "conv2d: width axis collapses to an empty output");
}

} // namespace

int conv_out_extent(int in, int kernel, const ConvSpec& spec) {
    return (in + 2 * spec.padding - spec.dilation * (kernel - 1) - 1) / spec.stride + 1;
}

Tensor4 conv2d_fwd(const Tensor4& input, const Tensor4& kernel,
                   const Eigen::VectorXd& bias, const ConvSpec& spec) {
    check_conv_args(input, kernel, bias.size(), spec);
    const int kh = kernel.h(), kw = kernel.w();
    const int oh = conv_out_extent(input.h(), kh, spec);
    const int ow = conv_out_extent(input.w(), kw, spec);
    const int co = kernel.n();
    const Eigen::Index q = static_cast<Eigen::Index>(input.c()) * kh * kw;
    const Eigen::Index p = static_cast<Eigen::Index>(oh) * ow;

    Tensor4 out(input.n(), co, oh, ow);
    auto kmat = as_rows(kernel, co, q);
    RowMat col(q, p);
    for (int item = 0; item < input.n(); ++item) {
        im2col(input, item, kh, kw, spec, oh, ow, col);
        Eigen::Map<RowMat> omat(out.data.data() + out.index(item, 0, 0, 0), co, p);
        omat.noalias() = kmat * col;
        omat.colwise() += bias;
    }
    return out;
}

void conv2d_bwd(const Tensor4& input, const Tensor4& kernel, const ConvSpec& spec,
                const Tensor4& grad_out, Tensor4* grad_input, Tensor4* grad_kernel,
                Eigen::VectorXd* grad_bias) {
    const int kh = kernel.h(), kw = kernel.w();
    const int oh = grad_out.h(), ow = grad_out.w();
    const int co = kernel.n();
    const Eigen::Index q = static_cast<Eigen::Index>(input.c()) * kh * kw;
    const Eigen::Index p = static_cast<Eigen::Index>(oh) * ow;

    auto kmat = as_rows(kernel, co, q);
    RowMat col(q, p);
    RowMat col_grad(q, p);
    for (int item = 0; item < input.n(); ++item) {
        Eigen::Map<const RowMat> gmat(grad_out.data.data() + grad_out.index(item, 0, 0, 0),
                                      co, p);
        if (grad_bias) *grad_bias += gmat.rowwise().sum();
        if (grad_kernel || grad_input) im2col(input, item, kh, kw, spec, oh, ow, col);
        if (grad_kernel) {
            Eigen::Map<RowMat> gk(grad_kernel->data.data(), co, q);
            gk.noalias() += gmat * col.transpose();
        }
        if (grad_input) {
            col_grad.noalias() = kmat.transpose() * gmat;
            col2im_add(col_grad, item, kh, kw, spec, oh, ow, *grad_input);
        }
    }
}

Tensor4 relu_fwd(const Tensor4& x) {
    Tensor4 out = x;
    out.data = x.data.max(0.0);
    return out;
}

void relu_bwd(const Tensor4& x, const Tensor4& grad_out, Tensor4& grad_x) {
    // subgradient at exactly 0 is 0
    grad_x.data += (x.data > 0.0).select(grad_out.data, 0.0);
}

Tensor4 tanh_fwd(const Tensor4& x) {
    Tensor4 out = x;
    out.data = x.data.tanh();
    return out;
}

void tanh_bwd(const Tensor4& y, const Tensor4& grad_out, Tensor4& grad_x) {
    grad_x.data += grad_out.data * (1.0 - y.data.square());
}

Tensor4 spatial_softmax_fwd(const Tensor4& m) {
    require(m.c() == 1, "spatial_softmax: channel axis must be 1, got " +
                            std::to_string(m.c()));
    const Eigen::Index plane = static_cast<Eigen::Index>(m.h()) * m.w();
    Tensor4 out = m;
    for (int item = 0; item < m.n(); ++item) {
        auto seg = out.data.segment(item * plane, plane);
        seg = (seg - seg.maxCoeff()).exp();
        seg /= seg.sum();
    }
    return out;
}

void spatial_softmax_bwd(const Tensor4& s, const Tensor4& grad_out, Tensor4& grad_m) {
    const Eigen::Index plane = static_cast<Eigen::Index>(s.h()) * s.w();
    for (int item = 0; item < s.n(); ++item) {
        auto sv = s.data.segment(item * plane, plane);
        auto gv = grad_out.data.segment(item * plane, plane);
        const double dot = (sv * gv).sum();
        grad_m.data.segment(item * plane, plane) += sv * (gv - dot);
    }
}

Tensor4 channel_sum_fwd(const Tensor4& x) {
    const Eigen::Index plane = static_cast<Eigen::Index>(x.h()) * x.w();
    Tensor4 out(x.n(), 1, x.h(), x.w());
    for (int item = 0; item < x.n(); ++item) {
        auto acc = out.data.segment(item * plane, plane);
        for (int c = 0; c < x.c(); ++c) {
            acc += x.data.segment(x.index(item, c, 0, 0), plane);
        }
    }
    return out;
}

void channel_sum_bwd(const Dims4& x_dims, const Tensor4& grad_out, Tensor4& grad_x) {
    const Eigen::Index plane = static_cast<Eigen::Index>(x_dims.h) * x_dims.w;
    for (int item = 0; item < x_dims.n; ++item) {
        auto g = grad_out.data.segment(item * plane, plane);
        for (int c = 0; c < x_dims.c; ++c) {
            grad_x.data.segment(grad_x.index(item, c, 0, 0), plane) += g;
        }
    }
}

Tensor4 global_avg_pool_fwd(const Tensor4& x) {
    require(x.h() >= 1 && x.w() >= 1, "global_avg_pool: empty spatial axes");
    const Eigen::Index plane = static_cast<Eigen::Index>(x.h()) * x.w();
    Tensor4 out(x.n(), x.c(), 1, 1);
    for (Eigen::Index row = 0; row < static_cast<Eigen::Index>(x.n()) * x.c(); ++row) {
        out.data[row] = x.data.segment(row * plane, plane).mean();
    }
    return out;
}

void global_avg_pool_bwd(const Dims4& x_dims, const Tensor4& grad_out, Tensor4& grad_x) {
    const Eigen::Index plane = static_cast<Eigen::Index>(x_dims.h) * x_dims.w;
    const double inv = 1.0 / static_cast<double>(plane);
    for (Eigen::Index row = 0; row < static_cast<Eigen::Index>(x_dims.n) * x_dims.c; ++row) {
        grad_x.data.segment(row * plane, plane) += grad_out.data[row] * inv;
    }
}

Tensor4 linear_fwd(const Tensor4& x, const Tensor4& weight, const Tensor4& bias) {
    require(x.h() == 1 && x.w() == 1 && weight.h() == 1 && weight.w() == 1,
            "linear: operands must be flat (h = w = 1)");
    require(weight.c() == x.c(), "linear: feature axis mismatch, input has " +
                                     std::to_string(x.c()) + ", weight expects " +
                                     std::to_string(weight.c()));
    require(bias.size() == weight.n(), "linear: bias axis has " +
                                           std::to_string(bias.size()) + " entries for " +
                                           std::to_string(weight.n()) + " outputs");
    const int n = x.n(), d = x.c(), k = weight.n();
    Tensor4 out(n, k, 1, 1);
    auto xm = as_rows(x, n, d);
    auto wm = as_rows(weight, k, d);
    auto bm = Eigen::Map<const Eigen::VectorXd>(bias.data.data(), k);
    auto om = as_rows(out, n, k);
    om.noalias() = xm * wm.transpose();
    om.rowwise() += bm.transpose();
    return out;
}

void linear_bwd(const Tensor4& x, const Tensor4& weight, const Tensor4& grad_out,
                Tensor4& grad_x, Tensor4& grad_weight, Tensor4& grad_bias) {
    const int n = x.n(), d = x.c(), k = weight.n();
    auto xm = as_rows(x, n, d);
    auto wm = as_rows(weight, k, d);
    auto gm = as_rows(grad_out, n, k);
    as_rows(grad_x, n, d).noalias() += gm * wm;
    as_rows(grad_weight, k, d).noalias() += gm.transpose() * xm;
    Eigen::Map<Eigen::VectorXd>(grad_bias.data.data(), k) += gm.colwise().sum();
}

Tensor4 channel_dot_fwd(const Tensor4& x, const Tensor4& s) {
    require(s.c() == 1, "channel_dot: map must have a single channel");
    require(s.n() == x.n() && s.h() == x.h() && s.w() == x.w(),
            "channel_dot: spatial axes of the map do not match the features");
    const Eigen::Index plane = static_cast<Eigen::Index>(x.h()) * x.w();
    Tensor4 out(x.n(), x.c(), 1, 1);
    for (int item = 0; item < x.n(); ++item) {
        Eigen::Map<const RowMat> xm(x.data.data() + x.index(item, 0, 0, 0), x.c(), plane);
        Eigen::Map<const Eigen::VectorXd> sv(s.data.data() + s.index(item, 0, 0, 0), plane);
        Eigen::Map<Eigen::VectorXd> ov(out.data.data() + out.index(item, 0, 0, 0), x.c());
        ov.noalias() = xm * sv;
    }
    return out;
}

void channel_dot_bwd(const Tensor4& x, const Tensor4& s, const Tensor4& grad_out,
                     Tensor4& grad_x, Tensor4& grad_s) {
    const Eigen::Index plane = static_cast<Eigen::Index>(x.h()) * x.w();
    for (int item = 0; item < x.n(); ++item) {
        Eigen::Map<const RowMat> xm(x.data.data() + x.index(item, 0, 0, 0), x.c(), plane);
        Eigen::Map<const Eigen::VectorXd> sv(s.data.data() + s.index(item, 0, 0, 0), plane);
        Eigen::Map<const Eigen::VectorXd> gv(grad_out.data.data() + grad_out.index(item, 0, 0, 0),
                                             x.c());
        Eigen::Map<RowMat> gxm(grad_x.data.data() + grad_x.index(item, 0, 0, 0), x.c(), plane);
        Eigen::Map<Eigen::VectorXd> gsv(grad_s.data.data() + grad_s.index(item, 0, 0, 0), plane);
        gxm.noalias() += gv * sv.transpose();
        gsv.noalias() += xm.transpose() * gv;
    }
}

Tensor4 gated_channel_avg_fwd(const Tensor4& x, const Tensor4& gates) {
    require(gates.n() == x.n() && gates.c() == x.c() && gates.h() == 1 && gates.w() == 1,
            "gated_channel_avg: gate axis does not match the channel axis");
    const Eigen::Index plane = static_cast<Eigen::Index>(x.h()) * x.w();
    const double inv_c = 1.0 / static_cast<double>(x.c());
    Tensor4 out(x.n(), 1, x.h(), x.w());
    for (int item = 0; item < x.n(); ++item) {
        Eigen::Map<const RowMat> xm(x.data.data() + x.index(item, 0, 0, 0), x.c(), plane);
        Eigen::Map<const Eigen::VectorXd> gv(gates.data.data() + gates.index(item, 0, 0, 0),
                                             x.c());
        Eigen::Map<Eigen::VectorXd> ov(out.data.data() + out.index(item, 0, 0, 0), plane);
        ov.noalias() = inv_c * (xm.transpose() * gv);
    }
    return out;
}

void gated_channel_avg_bwd(const Tensor4& x, const Tensor4& gates, const Tensor4& grad_out,
                           Tensor4& grad_x, Tensor4& grad_gates) {
    const Eigen::Index plane = static_cast<Eigen::Index>(x.h()) * x.w();
    const double inv_c = 1.0 / static_cast<double>(x.c());
    for (int item = 0; item < x.n(); ++item) {
        Eigen::Map<const RowMat> xm(x.data.data() + x.index(item, 0, 0, 0), x.c(), plane);
        Eigen::Map<const Eigen::VectorXd> gv(gates.data.data() + gates.index(item, 0, 0, 0),
                                             x.c());
        Eigen::Map<const Eigen::VectorXd> go(grad_out.data.data() + grad_out.index(item, 0, 0, 0),
                                             plane);
        Eigen::Map<RowMat> gxm(grad_x.data.data() + grad_x.index(item, 0, 0, 0), x.c(), plane);
        Eigen::Map<Eigen::VectorXd> ggv(grad_gates.data.data() + grad_gates.index(item, 0, 0, 0),
                                        x.c());
        gxm.noalias() += inv_c * (gv * go.transpose());
        ggv.noalias() += inv_c * (xm * go);
    }
}

} // namespace gatn
