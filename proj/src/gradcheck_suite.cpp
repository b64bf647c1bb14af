#include "gatn/gradcheck_suite.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "gatn/attention.hpp"
#include "gatn/model.hpp"
#include "gatn/rng.hpp"
#include "gatn/synthdata.hpp"
#include "gatn/tape.hpp"
#include "gatn/training.hpp"

namespace gatn {
namespace {

constexpr double kEps = 1e-5;
constexpr double kOpThreshold = 1e-4;
constexpr double kComposedThreshold = 1e-3;

Tensor4 random_tensor(int n, int c, int h, int w, Rng& rng, double lo = -1.0,
                      double hi = 1.0) {
    Tensor4 t(n, c, h, w);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(lo, hi);
    return t;
}

// uniform on [-1,-band] U [band,1]; keeps ReLU inputs away from the kink
Tensor4 random_banded(int n, int c, int h, int w, Rng& rng, double band = 1e-2) {
    Tensor4 t(n, c, h, w);
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        const double mag = rng.uniform(band, 1.0);
        t.data[i] = rng.uniform() < 0.5 ? -mag : mag;
    }
    return t;
}

// scalarizes a (n,1,h,w) map against fixed weights so the pullback is
// non-uniform
VarId weighted_plane_sum(Tape& t, VarId map, const Tensor4& weights) {
    VarId w = t.leaf(weights);
    return sum_all(t, channel_dot(t, w, map));
}

struct Check {
    std::string name;
    double threshold;
    std::function<double()> run;
};

std::vector<Check> build_checks(bool negative_control) {
    std::vector<Check> checks;
    auto add = [&](std::string name, double threshold, std::function<double()> run) {
        checks.push_back({std::move(name), threshold, std::move(run)});
    };

    // conv2d: dilation 2, padded, multi-channel
    {
        Rng rng(11);
        const Tensor4 input = random_tensor(2, 3, 6, 5, rng);
        const Tensor4 kernel = random_tensor(4, 3, 3, 3, rng);
        const Tensor4 bias = random_tensor(1, 4, 1, 1, rng);
        const ConvSpec spec{1, 2, 2};
        add("conv2d.input", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId x) {
                    return sum_all(t, conv2d(t, x, t.leaf(kernel), t.leaf(bias), spec));
                },
                input, kEps);
        });
        add("conv2d.kernel", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId k) {
                    return sum_all(t, conv2d(t, t.leaf(input), k, t.leaf(bias), spec));
                },
                kernel, kEps);
        });
        add("conv2d.bias", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId b) {
                    return sum_all(t, conv2d(t, t.leaf(input), t.leaf(kernel), b, spec));
                },
                bias, kEps);
        });
        add("conv2d.strided", kOpThreshold, [=] {
            const ConvSpec strided{2, 1, 1};
            return grad_check(
                [&](Tape& t, VarId x) {
                    return sum_all(t, conv2d(t, x, t.leaf(kernel), t.leaf(bias), strided));
                },
                input, kEps);
        });
    }

    {
        Rng rng(12);
        const Tensor4 x = random_banded(2, 3, 4, 4, rng);
        const Tensor4 w = random_tensor(2, 1, 4, 4, rng);
        add("relu", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return sum_all(t, channel_dot(t, relu(t, in), t.leaf(w)));
                },
                x, kEps);
        });
    }
    {
        Rng rng(13);
        const Tensor4 x = random_tensor(2, 2, 3, 4, rng);
        add("tanh", kOpThreshold, [=] {
            return grad_check([&](Tape& t, VarId in) { return sum_all(t, tanh_act(t, in)); },
                              x, kEps);
        });
    }
    {
        Rng rng(14);
        const Tensor4 x = random_tensor(2, 1, 4, 5, rng);
        const Tensor4 w = random_tensor(2, 1, 4, 5, rng);
        add("spatial_softmax", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return weighted_plane_sum(t, spatial_softmax(t, in), w);
                },
                x, kEps);
        });
    }
    {
        Rng rng(15);
        const Tensor4 x = random_tensor(2, 4, 3, 3, rng);
        const Tensor4 w = random_tensor(2, 1, 3, 3, rng);
        add("channel_sum", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return weighted_plane_sum(t, channel_sum(t, in), w);
                },
                x, kEps);
        });
    }
    {
        Rng rng(16);
        const Tensor4 x = random_tensor(2, 5, 3, 4, rng);
        const Tensor4 w = random_tensor(3, 5, 1, 1, rng);
        const Tensor4 b = random_tensor(1, 3, 1, 1, rng);
        add("global_avg_pool", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return sum_all(t, linear(t, global_avg_pool(t, in), t.leaf(w), t.leaf(b)));
                },
                x, kEps);
        });
    }
    {
        Rng rng(17);
        const Tensor4 x = random_tensor(3, 4, 1, 1, rng);
        const Tensor4 w = random_tensor(2, 4, 1, 1, rng);
        const Tensor4 b = random_tensor(1, 2, 1, 1, rng);
        add("linear.input", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return sum_all(t, linear(t, in, t.leaf(w), t.leaf(b)));
                },
                x, kEps);
        });
        add("linear.weight", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return sum_all(t, linear(t, t.leaf(x), in, t.leaf(b)));
                },
                w, kEps);
        });
        add("linear.bias", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return sum_all(t, linear(t, t.leaf(x), t.leaf(w), in));
                },
                b, kEps);
        });
    }
    {
        Rng rng(18);
        const Tensor4 x = random_tensor(2, 4, 3, 4, rng);
        const Tensor4 s = random_tensor(2, 1, 3, 4, rng);
        add("channel_dot.features", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) { return sum_all(t, channel_dot(t, in, t.leaf(s))); },
                x, kEps);
        });
        add("channel_dot.map", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) { return sum_all(t, channel_dot(t, t.leaf(x), in)); },
                s, kEps);
        });
    }
    {
        Rng rng(19);
        const Tensor4 x = random_tensor(2, 4, 3, 4, rng);
        Tensor4 gates = random_tensor(2, 4, 1, 1, rng, 0.05, 0.95);
        const Tensor4 w = random_tensor(2, 1, 3, 4, rng);
        add("gated_channel_avg.features", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return weighted_plane_sum(t, gated_channel_avg(t, in, t.leaf(gates)), w);
                },
                x, kEps);
        });
        add("gated_channel_avg.gates", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return weighted_plane_sum(t, gated_channel_avg(t, t.leaf(x), in), w);
                },
                gates, kEps);
        });
    }
    {
        Rng rng(20);
        const Tensor4 logits = random_tensor(1, 5, 1, 1, rng);
        add("cross_entropy", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) { return cross_entropy(t, in, 2); }, logits, kEps);
        });
    }

    // composed gated attention: sum(Omega) against features and block weights
    {
        Rng rng(21);
        const AttentionConfig acfg{{2, 4}, 6, 0.0};
        const Tensor4 x = random_tensor(1, 6, 5, 5, rng);
        Rng prng(22);
        const AttentionParams ap = init_attention_params(6, prng);
        auto omega_sum = [acfg](Tape& t, VarId xid, VarId k1, VarId b1, VarId k2, VarId b2) {
            AttentionVars v = gated_attention(t, xid, k1, b1, k2, b2, acfg);
            return sum_all(t, v.attention_map);
        };
        add("attention.features", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return omega_sum(t, in, t.leaf(ap.block1_kernel), t.leaf(ap.block1_bias),
                                     t.leaf(ap.block2_kernel), t.leaf(ap.block2_bias));
                },
                x, kEps);
        });
        add("attention.block1.kernel", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return omega_sum(t, t.leaf(x), in, t.leaf(ap.block1_bias),
                                     t.leaf(ap.block2_kernel), t.leaf(ap.block2_bias));
                },
                ap.block1_kernel, kEps);
        });
        add("attention.block1.bias", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return omega_sum(t, t.leaf(x), t.leaf(ap.block1_kernel), in,
                                     t.leaf(ap.block2_kernel), t.leaf(ap.block2_bias));
                },
                ap.block1_bias, kEps);
        });
        add("attention.block2.kernel", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return omega_sum(t, t.leaf(x), t.leaf(ap.block1_kernel),
                                     t.leaf(ap.block1_bias), in, t.leaf(ap.block2_bias));
                },
                ap.block2_kernel, kEps);
        });
        add("attention.block2.bias", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    return omega_sum(t, t.leaf(x), t.leaf(ap.block1_kernel),
                                     t.leaf(ap.block1_bias), t.leaf(ap.block2_kernel), in);
                },
                ap.block2_bias, kEps);
        });
    }

    // composed two-branch model at toy size, every parameter group
    {
        ModelConfig cfg;
        cfg.num_classes = 2;
        cfg.global_backbone = {{4, 8}, 32};
        cfg.instance_backbone = {{4, 8}, 16};
        cfg.localizer.top_k = 2;
        cfg.localizer.patch_size = 16;
        cfg.attention.hidden_channels = 8;

        SynthConfig scfg;
        scfg.image_size = 48;
        scfg.glyph_radius_min = 6;
        scfg.glyph_radius_max = 9;
        scfg.max_instances = 2;
        const SynthSample sample = gen_sample(404, 1, scfg);
        const ModelParams params = init_model_params(cfg, 405);
        const double lambda = 0.6;

        for (std::size_t g = 0; g < params.size(); ++g) {
            const std::string name = "model." + params.at(g).name;
            add(name, kComposedThreshold, [=] {
                auto f = [&](Tape& t, VarId x) {
                    std::vector<VarId> ids;
                    ids.reserve(params.size());
                    for (std::size_t i = 0; i < params.size(); ++i) {
                        ids.push_back(i == g ? x : t.leaf(params.at(i).value));
                    }
                    ForwardVars v = forward_on_tape(t, sample.image, ids, params, cfg,
                                                    ForwardMode::full);
                    return multi_task_loss(t, v.logits_global, v.logits_fusion, 1, lambda);
                };
                return grad_check(f, params.at(g).value, kEps);
            });
        }
    }

    if (negative_control) {
        // identity pullback instead of the ReLU mask; the checker must flag it
        Rng rng(23);
        const Tensor4 x = random_banded(1, 2, 3, 3, rng);
        add("negative_control.corrupted_relu", kOpThreshold, [=] {
            return grad_check(
                [&](Tape& t, VarId in) {
                    Tensor4 out = relu_fwd(t.value(in));
                    VarId id{static_cast<std::int32_t>(t.size())};
                    VarId bad = t.push(std::move(out), {in},
                                       [in, id](Tape& tp) {
                                           tp.grad(in).data += tp.grad(id).data;
                                       },
                                       "corrupted_relu");
                    return sum_all(t, bad);
                },
                x, kEps);
        });
    }

    return checks;
}

bool name_matches(const std::string& name, const std::vector<std::string>& only) {
    if (only.empty()) return true;
    for (const auto& o : only) {
        if (name == o || name.rfind(o + ".", 0) == 0) return true;
    }
    return false;
}

} // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const std::vector<std::string>& only,
                                                 bool negative_control) {
    std::vector<GradCheckResult> results;
    for (const auto& check : build_checks(negative_control)) {
        if (!name_matches(check.name, only)) continue;
        GradCheckResult r;
        r.name = check.name;
        r.threshold = check.threshold;
        r.max_rel_error = check.run();
        r.pass = r.max_rel_error < check.threshold;
        results.push_back(std::move(r));
    }
    return results;
}

std::vector<std::string> gradcheck_op_names() {
    std::vector<std::string> names;
    for (const auto& check : build_checks(false)) names.push_back(check.name);
    return names;
}

} // namespace gatn
