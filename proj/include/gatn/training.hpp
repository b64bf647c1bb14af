#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "gatn/model.hpp"
#include "gatn/synthdata.hpp"

namespace gatn {

struct TrainConfig {
    int epochs = 60;
    int batch_size = 16;
    double lr0 = 0.05;
    int lr_decay_every = 50;
    double lr_decay_factor = 0.1;
    double lambda0 = 1.0;
    double lambda_step = 0.1;
    int lambda_every = 20;
    double lambda_floor = 0.1;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    bool global_only = false; // ablation: lambda pinned to 1, fusion branch off
};

struct Metrics {
    double accuracy = 0.0;
    Eigen::VectorXd per_class_accuracy;
    std::optional<double> mean_loc_iou; // synthetic data only
};

struct EpochMetrics {
    int epoch = 0;
    double lambda = 0.0;
    double lr = 0.0;
    double loss = 0.0;
    double accuracy = 0.0;
    std::optional<double> loc_iou;
};

// -log softmax(logits)[label], via log-sum-exp.
double cross_entropy(const Eigen::VectorXd& logits, int label);
VarId cross_entropy(Tape& t, VarId logits, int label);

// lambda * CE(Y_g) + (1 - lambda) * CE(Y_f)
double multi_task_loss(const Eigen::VectorXd& y_g, const Eigen::VectorXd& y_f,
                       int label, double lambda);
VarId multi_task_loss(Tape& t, VarId y_g, VarId y_f, int label, double lambda);

// max(floor, lambda0 - step * floor(epoch / every))
double lambda_schedule(int epoch, const TrainConfig& cfg);
// lr0 * factor^floor(epoch / every); the power is applied as a division by
// the reciprocal so decimal factors stay exact (0.05 -> 0.005 at one decay).
double lr_schedule(int epoch, const TrainConfig& cfg);

struct SgdState {
    std::vector<Eigen::ArrayXd> velocity; // aligned with ModelParams order
};
SgdState make_sgd_state(const ModelParams& params);
// v <- momentum*v + g; w <- w - lr*v, reading g from the params' grad slots.
void sgd_step(ModelParams& params, SgdState& state, double lr, double momentum);

using Dataset = std::vector<SynthSample>;

struct TrainResult {
    ModelParams params;
    std::vector<EpochMetrics> log;
};

// Deterministic mini-batch loop: per-epoch Fisher-Yates shuffle from a seed
// derived from (cfg.seed, epoch); per-sample forward/backward with the
// scheduled lambda; SGD update per batch with the scheduled lr. Emits one
// metrics line per epoch to metrics_jsonl when given.
TrainResult train(const Dataset& data, const ModelConfig& mcfg, const TrainConfig& tcfg,
                  std::ostream* metrics_jsonl = nullptr);

Metrics evaluate(const Dataset& data, const ModelParams& params, const ModelConfig& cfg,
                 bool global_only = false);

// IoU of the unions of two box sets rasterized on an h x w grid.
double union_iou(const std::vector<InstanceBox>& a, const std::vector<InstanceBox>& b,
                 int h, int w);

// Fraction of gt boxes with more than half their area inside one picked box.
double coverage_fraction(const std::vector<InstanceBox>& gt,
                         const std::vector<InstanceBox>& picked);

std::string metrics_json_line(const EpochMetrics& m);

} // namespace gatn
