#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gatn/ops.hpp"
#include "gatn/tensor.hpp"

namespace gatn {

struct VarId {
    std::int32_t index = -1;
    bool valid() const { return index >= 0; }
};

// Eager op recorder. Every op computes its value immediately and appends one
// entry holding the op name, its input ids and a closure with the
// vector-Jacobian rule. backward() replays the entries in exact reverse order
// of recording, accumulating gradients additively.
class Tape {
public:
    VarId leaf(Tensor4 value);
    VarId push(Tensor4 value, std::initializer_list<VarId> inputs,
               std::function<void(Tape&)> backprop, const char* op_name);

    const Tensor4& value(VarId id) const { return nodes_[check(id)].value; }
    Tensor4& grad(VarId id) { return nodes_[check(id)].grad; }
    const Tensor4& grad(VarId id) const { return nodes_[check(id)].grad; }

    // Seeds d(out)/d(out) = 1 and sweeps the tape back to front. The target
    // must hold a single value (a scalar-valued computation).
    void backward(VarId scalar_output);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor4 value;
        Tensor4 grad;
        std::array<VarId, 4> inputs{};
        std::function<void(Tape&)> backprop; // empty for leaves
        const char* op_name = "leaf";
    };

    std::size_t check(VarId id) const;
    std::vector<Node> nodes_;
};

// --- ops recorded on a tape ------------------------------------------------

VarId conv2d(Tape& t, VarId input, VarId kernel, VarId bias, const ConvSpec& spec);
VarId relu(Tape& t, VarId x);
VarId tanh_act(Tape& t, VarId x);
VarId spatial_softmax(Tape& t, VarId m);
VarId channel_sum(Tape& t, VarId x);
VarId global_avg_pool(Tape& t, VarId x);
VarId linear(Tape& t, VarId x, VarId weight, VarId bias);
VarId channel_dot(Tape& t, VarId x, VarId s);
VarId gated_channel_avg(Tape& t, VarId x, VarId gates);
VarId sum_all(Tape& t, VarId x);
// alpha*a + beta*b over same-shaped tensors
VarId add_scaled(Tape& t, VarId a, VarId b, double alpha, double beta);
// concatenates (1,d_i,1,1) feature vectors along the channel axis
VarId concat_channels(Tape& t, std::span<const VarId> parts);

// Compares the tape gradient of f (a scalar-valued function of one tensor,
// deterministic) against central differences, coordinate by coordinate.
// Returns max over coordinates of |a - n| / max(|a|, |n|, 1e-8).
double grad_check(const std::function<VarId(Tape&, VarId)>& f, const Tensor4& x,
                  double epsilon);

} // namespace gatn
