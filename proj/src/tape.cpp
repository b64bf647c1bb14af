#include "gatn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "gatn/errors.hpp"

namespace gatn {

std::size_t Tape::check(VarId id) const {
    if (!id.valid() || static_cast<std::size_t>(id.index) >= nodes_.size()) {
        throw UsageError("tape: unknown value id " + std::to_string(id.index) +
                         " (backward before forward?)");
    }
    return static_cast<std::size_t>(id.index);
}

VarId Tape::leaf(Tensor4 value) {
    return push(std::move(value), {}, nullptr, "leaf");
}

VarId Tape::push(Tensor4 value, std::initializer_list<VarId> inputs,
                 std::function<void(Tape&)> backprop, const char* op_name) {
    Node node;
    node.grad = Tensor4(value.n(), value.c(), value.h(), value.w());
    node.value = std::move(value);
    int i = 0;
    for (VarId in : inputs) node.inputs[static_cast<std::size_t>(i++)] = in;
    node.backprop = std::move(backprop);
    node.op_name = op_name;
    nodes_.push_back(std::move(node));
    return VarId{static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tape::backward(VarId scalar_output) {
    const std::size_t last = check(scalar_output);
    if (nodes_[last].value.size() != 1) {
        throw UsageError("tape: backward target must be scalar, has " +
                         std::to_string(nodes_[last].value.size()) + " values");
    }
    for (Node& n : nodes_) n.grad.data.setZero();
    nodes_[last].grad.data[0] = 1.0;
    for (std::size_t i = last + 1; i-- > 0;) {
        if (nodes_[i].backprop) nodes_[i].backprop(*this);
    }
}

// --- recorded ops ------------------------------------------------------------

VarId conv2d(Tape& t, VarId input, VarId kernel, VarId bias, const ConvSpec& spec) {
    const Tensor4& b = t.value(bias);
    if (b.n() != 1 || b.h() != 1 || b.w() != 1) {
        throw ShapeError("conv2d: bias must be a flat (1,c,1,1) tensor");
    }
    Eigen::Map<const Eigen::VectorXd> bv(b.data.data(), b.size());
    Tensor4 out = conv2d_fwd(t.value(input), t.value(kernel), bv, spec);
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {input, kernel, bias},
                  [input, kernel, bias, spec, id](Tape& tp) {
                      Tensor4& gb = tp.grad(bias);
                      Eigen::Map<Eigen::VectorXd> gbv(gb.data.data(), gb.size());
                      Eigen::VectorXd gb_acc = Eigen::VectorXd::Zero(gb.size());
                      conv2d_bwd(tp.value(input), tp.value(kernel), spec, tp.grad(id),
                                 &tp.grad(input), &tp.grad(kernel), &gb_acc);
                      gbv += gb_acc;
                  },
                  "conv2d");
}

VarId relu(Tape& t, VarId x) {
    Tensor4 out = relu_fwd(t.value(x));
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {x},
                  [x, id](Tape& tp) { relu_bwd(tp.value(x), tp.grad(id), tp.grad(x)); },
                  "relu");
}

VarId tanh_act(Tape& t, VarId x) {
    Tensor4 out = tanh_fwd(t.value(x));
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {x},
                  [x, id](Tape& tp) { tanh_bwd(tp.value(id), tp.grad(id), tp.grad(x)); },
                  "tanh");
}

VarId spatial_softmax(Tape& t, VarId m) {
    Tensor4 out = spatial_softmax_fwd(t.value(m));
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {m},
                  [m, id](Tape& tp) {
                      spatial_softmax_bwd(tp.value(id), tp.grad(id), tp.grad(m));
                  },
                  "spatial_softmax");
}

VarId channel_sum(Tape& t, VarId x) {
    Tensor4 out = channel_sum_fwd(t.value(x));
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {x},
                  [x, id](Tape& tp) {
                      channel_sum_bwd(tp.value(x).dims, tp.grad(id), tp.grad(x));
                  },
                  "channel_sum");
}

VarId global_avg_pool(Tape& t, VarId x) {
    Tensor4 out = global_avg_pool_fwd(t.value(x));
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {x},
                  [x, id](Tape& tp) {
                      global_avg_pool_bwd(tp.value(x).dims, tp.grad(id), tp.grad(x));
                  },
                  "global_avg_pool");
}

VarId linear(Tape& t, VarId x, VarId weight, VarId bias) {
    Tensor4 out = linear_fwd(t.value(x), t.value(weight), t.value(bias));
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {x, weight, bias},
                  [x, weight, bias, id](Tape& tp) {
                      linear_bwd(tp.value(x), tp.value(weight), tp.grad(id), tp.grad(x),
                                 tp.grad(weight), tp.grad(bias));
                  },
                  "linear");
}

VarId channel_dot(Tape& t, VarId x, VarId s) {
    Tensor4 out = channel_dot_fwd(t.value(x), t.value(s));
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {x, s},
                  [x, s, id](Tape& tp) {
                      channel_dot_bwd(tp.value(x), tp.value(s), tp.grad(id), tp.grad(x),
                                      tp.grad(s));
                  },
                  "channel_dot");
}

VarId gated_channel_avg(Tape& t, VarId x, VarId gates) {
    Tensor4 out = gated_channel_avg_fwd(t.value(x), t.value(gates));
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {x, gates},
                  [x, gates, id](Tape& tp) {
                      gated_channel_avg_bwd(tp.value(x), tp.value(gates), tp.grad(id),
                                            tp.grad(x), tp.grad(gates));
                  },
                  "gated_channel_avg");
}

VarId sum_all(Tape& t, VarId x) {
    Tensor4 out(1, 1, 1, 1);
    out.data[0] = t.value(x).data.sum();
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {x},
                  [x, id](Tape& tp) { tp.grad(x).data += tp.grad(id).data[0]; },
                  "sum_all");
}

VarId add_scaled(Tape& t, VarId a, VarId b, double alpha, double beta) {
    const Tensor4& av = t.value(a);
    const Tensor4& bv = t.value(b);
    if (!av.same_dims(bv)) throw ShapeError("add_scaled: operand dims differ");
    Tensor4 out = av;
    out.data = alpha * av.data + beta * bv.data;
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {a, b},
                  [a, b, alpha, beta, id](Tape& tp) {
                      tp.grad(a).data += alpha * tp.grad(id).data;
                      tp.grad(b).data += beta * tp.grad(id).data;
                  },
                  "add_scaled");
}

VarId concat_channels(Tape& t, std::span<const VarId> parts) {
    if (parts.empty()) throw UsageError("concat_channels: nothing to concatenate");
    int total = 0;
    for (VarId p : parts) {
        const Tensor4& v = t.value(p);
        if (v.n() != 1 || v.h() != 1 || v.w() != 1) {
            throw ShapeError("concat_channels: parts must be flat (1,d,1,1) tensors");
        }
        total += v.c();
    }
    Tensor4 out(1, total, 1, 1);
    Eigen::Index off = 0;
    for (VarId p : parts) {
        const Tensor4& v = t.value(p);
        out.data.segment(off, v.size()) = v.data;
        off += v.size();
    }
    std::vector<VarId> owned(parts.begin(), parts.end());
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {},
                  [owned = std::move(owned), id](Tape& tp) {
                      Eigen::Index at = 0;
                      for (VarId p : owned) {
                          Tensor4& g = tp.grad(p);
                          g.data += tp.grad(id).data.segment(at, g.size());
                          at += g.size();
                      }
                  },
                  "concat_channels");
}

double grad_check(const std::function<VarId(Tape&, VarId)>& f, const Tensor4& x,
                  double epsilon) {
    if (epsilon <= 0.0) throw UsageError("grad_check: epsilon must be positive");

    Tensor4 analytic;
    {
        Tape t;
        VarId xid = t.leaf(x);
        VarId out = f(t, xid);
        if (t.value(out).size() != 1) {
            throw UsageError("grad_check: f must be scalar-valued");
        }
        t.backward(out);
        analytic = t.grad(xid);
    }

    double max_rel = 0.0;
    Tensor4 probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        probe.data[i] = x.data[i] + epsilon;
        double f_plus;
        {
            Tape t;
            f_plus = t.value(f(t, t.leaf(probe))).data[0];
        }
        probe.data[i] = x.data[i] - epsilon;
        double f_minus;
        {
            Tape t;
            f_minus = t.value(f(t, t.leaf(probe))).data[0];
        }
        probe.data[i] = x.data[i];
        const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
        const double a = analytic.data[i];
        const double rel = std::abs(a - numeric) /
                           std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

} // namespace gatn
