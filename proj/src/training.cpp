#include "gatn/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "gatn/errors.hpp"
#include "gatn/rng.hpp"

namespace gatn {
namespace {

void rasterize(const std::vector<InstanceBox>& boxes, int h, int w,
               std::vector<std::uint8_t>& grid) {
    grid.assign(static_cast<std::size_t>(h) * w, 0);
    for (const auto& b : boxes) {
        const int r0 = std::clamp(b.row0, 0, h), r1 = std::clamp(b.row1, 0, h);
        const int c0 = std::clamp(b.col0, 0, w), c1 = std::clamp(b.col1, 0, w);
        for (int i = r0; i < r1; ++i) {
            for (int j = c0; j < c1; ++j) grid[static_cast<std::size_t>(i) * w + j] = 1;
        }
    }
}

int intersect_area(const InstanceBox& a, const InstanceBox& b) {
    const int h = std::max(0, std::min(a.row1, b.row1) - std::max(a.row0, b.row0));
    const int w = std::max(0, std::min(a.col1, b.col1) - std::max(a.col0, b.col0));
    return h * w;
}

std::vector<InstanceBox> to_pixel_boxes(const std::vector<InstanceBox>& map_boxes,
                                        int map_h, int map_w, int img_h, int img_w) {
    std::vector<InstanceBox> out;
    out.reserve(map_boxes.size());
    for (const auto& b : map_boxes) {
        out.push_back(map_box_to_image(b, map_h, map_w, img_h, img_w));
    }
    return out;
}

} // namespace

double cross_entropy(const Eigen::VectorXd& logits, int label) {
    if (label < 0 || label >= logits.size()) {
        throw UsageError("cross_entropy: label " + std::to_string(label) +
                         " out of range for " + std::to_string(logits.size()) + " classes");
    }
    const double peak = logits.maxCoeff();
    const double lse = peak + std::log((logits.array() - peak).exp().sum());
    return lse - logits[label];
}

VarId cross_entropy(Tape& t, VarId logits, int label) {
    const Tensor4& z = t.value(logits);
    if (z.n() != 1 || z.h() != 1 || z.w() != 1) {
        throw ShapeError("cross_entropy: logits must be a flat (1,k,1,1) tensor");
    }
    Tensor4 out(1, 1, 1, 1);
    out.data[0] = cross_entropy(to_vector(z), label);
    VarId id{static_cast<std::int32_t>(t.size())};
    return t.push(std::move(out), {logits},
                  [logits, label, id](Tape& tp) {
                      const Tensor4& zv = tp.value(logits);
                      Eigen::ArrayXd p = zv.data - zv.data.maxCoeff();
                      p = p.exp();
                      p /= p.sum();
                      p[label] -= 1.0;
                      tp.grad(logits).data += tp.grad(id).data[0] * p;
                  },
                  "cross_entropy");
}

double multi_task_loss(const Eigen::VectorXd& y_g, const Eigen::VectorXd& y_f,
                       int label, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw UsageError("multi_task_loss: lambda must lie in [0,1]");
    }
    return lambda * cross_entropy(y_g, label) + (1.0 - lambda) * cross_entropy(y_f, label);
}

VarId multi_task_loss(Tape& t, VarId y_g, VarId y_f, int label, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) {
        throw UsageError("multi_task_loss: lambda must lie in [0,1]");
    }
    VarId ce_g = cross_entropy(t, y_g, label);
    VarId ce_f = cross_entropy(t, y_f, label);
    return add_scaled(t, ce_g, ce_f, lambda, 1.0 - lambda);
}

double lambda_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw UsageError("lambda_schedule: epoch must be >= 0");
    const double value = cfg.lambda0 - cfg.lambda_step * (epoch / cfg.lambda_every);
    return std::max(cfg.lambda_floor, value);
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
    if (epoch < 0) throw UsageError("lr_schedule: epoch must be >= 0");
    const int k = epoch / cfg.lr_decay_every;
    if (k == 0) return cfg.lr0;
    // lr0 / (1/factor)^k instead of lr0 * factor^k: reciprocals of decimal
    // factors snap to exact integers, so 0.05 decays to exactly 0.005.
    return cfg.lr0 / std::pow(1.0 / cfg.lr_decay_factor, static_cast<double>(k));
}

SgdState make_sgd_state(const ModelParams& params) {
    SgdState state;
    state.velocity.reserve(params.size());
    for (const auto& p : params) {
        state.velocity.push_back(Eigen::ArrayXd::Zero(p.value.size()));
    }
    return state;
}

void sgd_step(ModelParams& params, SgdState& state, double lr, double momentum) {
    if (state.velocity.size() != params.size()) {
        throw ShapeError("sgd_step: velocity state does not match the parameter set");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        ParamTensor& p = params.at(i);
        Eigen::ArrayXd& v = state.velocity[i];
        if (v.size() != p.grad.size()) {
            throw ShapeError("sgd_step: shape mismatch on " + p.name);
        }
        v = momentum * v + p.grad.data;
        p.value.data -= lr * v;
    }
}

double union_iou(const std::vector<InstanceBox>& a, const std::vector<InstanceBox>& b,
                 int h, int w) {
    std::vector<std::uint8_t> ga, gb;
    rasterize(a, h, w, ga);
    rasterize(b, h, w, gb);
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < ga.size(); ++i) {
        inter += (ga[i] & gb[i]);
        uni += (ga[i] | gb[i]);
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double coverage_fraction(const std::vector<InstanceBox>& gt,
                         const std::vector<InstanceBox>& picked) {
    if (gt.empty()) return 1.0;
    int covered = 0;
    for (const auto& g : gt) {
        int best = 0;
        for (const auto& p : picked) best = std::max(best, intersect_area(g, p));
        if (2 * best > g.area()) ++covered;
    }
    return static_cast<double>(covered) / static_cast<double>(gt.size());
}

std::string metrics_json_line(const EpochMetrics& m) {
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["lambda"] = m.lambda;
    j["lr"] = m.lr;
    j["loss"] = m.loss;
    j["acc"] = m.accuracy;
    if (m.loc_iou.has_value()) {
        j["loc_iou"] = *m.loc_iou;
    } else {
        j["loc_iou"] = nullptr;
    }
    return j.dump();
}

TrainResult train(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                  std::ostream* metrics_jsonl) {
    if (data.empty()) throw UsageError("train: dataset is empty");
    mcfg.validate();
    for (const auto& s : data) {
        if (s.label < 0 || s.label >= mcfg.num_classes) {
            throw UsageError("train: label " + std::to_string(s.label) +
                             " out of range for " + std::to_string(mcfg.num_classes) +
                             " classes");
        }
    }
    const ForwardMode mode = tcfg.global_only ? ForwardMode::global_only : ForwardMode::full;

    TrainResult result;
    result.params = init_model_params(mcfg, mix_seed(tcfg.seed, 0x696e6974ULL));
    SgdState state = make_sgd_state(result.params);

    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
        const double lambda = tcfg.global_only ? 1.0 : lambda_schedule(epoch, tcfg);
        const double lr = lr_schedule(epoch, tcfg);
        Rng shuffle_rng(mix_seed(tcfg.seed, 0x7368756666ULL + static_cast<std::uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        double iou_sum = 0.0;
        int iou_count = 0;
        int correct = 0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tcfg.batch_size));
            const double inv_batch = 1.0 / static_cast<double>(stop - start);
            result.params.zero_grads();
            for (std::size_t at = start; at < stop; ++at) {
                const SynthSample& sample = data[static_cast<std::size_t>(order[at])];
                Tape t;
                std::vector<VarId> ids = bind_params(t, result.params);
                ForwardVars vars = forward_on_tape(t, sample.image, ids, result.params, mcfg, mode);
                VarId loss = tcfg.global_only
                                 ? cross_entropy(t, vars.logits_global, sample.label)
                                 : multi_task_loss(t, vars.logits_global, vars.logits_fusion,
                                                   sample.label, lambda);
                t.backward(loss);
                for (std::size_t i = 0; i < result.params.size(); ++i) {
                    result.params.at(i).grad.data += inv_batch * t.grad(ids[i]).data;
                }

                loss_sum += t.value(loss).data[0];
                const Eigen::VectorXd logits = to_vector(
                    t.value(tcfg.global_only ? vars.logits_global : vars.logits_fusion));
                if (argmax_lowest(logits) == sample.label) ++correct;
                if (!tcfg.global_only && !sample.gt_boxes.empty()) {
                    const Tensor4& omega = t.value(vars.attention.attention_map);
                    const auto picked = to_pixel_boxes(vars.boxes, omega.h(), omega.w(),
                                                       sample.image.h(), sample.image.w());
                    iou_sum += union_iou(picked, sample.gt_boxes, sample.image.h(),
                                         sample.image.w());
                    ++iou_count;
                }
            }
            sgd_step(result.params, state, lr, tcfg.momentum);
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.lambda = lambda;
        em.lr = lr;
        em.loss = loss_sum / static_cast<double>(data.size());
        em.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
        if (iou_count > 0) em.loc_iou = iou_sum / iou_count;
        result.log.push_back(em);
        if (metrics_jsonl) *metrics_jsonl << metrics_json_line(em) << '\n';
    }
    return result;
}

Metrics evaluate(const Dataset& data, const ModelParams& params, const ModelConfig& cfg,
                 bool global_only) {
    Metrics m;
    m.per_class_accuracy = Eigen::VectorXd::Zero(cfg.num_classes);
    if (data.empty()) return m;
    Eigen::VectorXd totals = Eigen::VectorXd::Zero(cfg.num_classes);
    const ForwardMode mode = global_only ? ForwardMode::global_only : ForwardMode::full;

    int correct = 0;
    double iou_sum = 0.0;
    int iou_count = 0;
    for (const auto& sample : data) {
        ForwardOutput out = forward(sample.image, params, cfg, mode);
        const Eigen::VectorXd& logits = global_only ? out.logits_global : out.logits_fusion;
        const int pred = argmax_lowest(logits);
        totals[sample.label] += 1.0;
        if (pred == sample.label) {
            ++correct;
            m.per_class_accuracy[sample.label] += 1.0;
        }
        if (!global_only && !sample.gt_boxes.empty()) {
            const Tensor4& omega = out.attention.attention_map;
            const auto picked = to_pixel_boxes(out.boxes, omega.h(), omega.w(),
                                               sample.image.h(), sample.image.w());
            iou_sum += union_iou(picked, sample.gt_boxes, sample.image.h(), sample.image.w());
            ++iou_count;
        }
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    for (int k = 0; k < cfg.num_classes; ++k) {
        if (totals[k] > 0) m.per_class_accuracy[k] /= totals[k];
    }
    if (iou_count == static_cast<int>(data.size()) && iou_count > 0) {
        m.mean_loc_iou = iou_sum / iou_count;
    }
    return m;
}

} // namespace gatn
