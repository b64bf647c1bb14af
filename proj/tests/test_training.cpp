#include <cmath>
#include <cstring>
#include <sstream>
#include <vector>

#include <doctest.h>

#include "gatn/errors.hpp"
#include "gatn/rng.hpp"
#include "gatn/training.hpp"

using namespace gatn;

namespace {

ModelConfig tiny_model() {
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.global_backbone = {{4, 8}, 16};
    cfg.instance_backbone = {{4, 8}, 16};
    cfg.localizer.top_k = 1;
    cfg.localizer.patch_size = 16;
    cfg.attention.hidden_channels = 8;
    return cfg;
}

// two classes split by brightness; separable from the pooled features alone
Dataset brightness_dataset(int per_class, int size) {
    Dataset data;
    Rng rng(777);
    for (int klass = 0; klass < 2; ++klass) {
        for (int i = 0; i < per_class; ++i) {
            SynthSample s;
            const double base = klass == 0 ? 0.3 : 0.7;
            s.image = Tensor4(1, 3, size, size);
            for (Eigen::Index p = 0; p < s.image.size(); ++p) {
                s.image.data[p] = base + rng.uniform(-0.05, 0.05);
            }
            s.label = klass;
            s.seed = static_cast<std::uint64_t>(klass * per_class + i);
            data.push_back(std::move(s));
        }
    }
    return data;
}

bool same_params(const ModelParams& a, const ModelParams& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(a.at(i).value.dims == b.at(i).value.dims)) return false;
        if (std::memcmp(a.at(i).value.data.data(), b.at(i).value.data.data(),
                        sizeof(double) * a.at(i).value.size()) != 0) {
            return false;
        }
    }
    return true;
}

} // namespace

TEST_CASE("cross_entropy: uniform logits, hand case, limit behaviour") {
    Eigen::VectorXd uniform = Eigen::VectorXd::Zero(4);
    CHECK(cross_entropy(uniform, 1) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Eigen::VectorXd two(2);
    two << 1.0, 0.0;
    CHECK(cross_entropy(two, 0) == doctest::Approx(0.3132616875182229).epsilon(1e-12));

    double prev = cross_entropy(two, 0);
    for (double z = 2.0; z <= 30.0; z += 4.0) {
        Eigen::VectorXd v(2);
        v << z, 0.0;
        const double loss = cross_entropy(v, 0);
        CHECK(loss < prev);
        prev = loss;
    }
    CHECK(prev < 1e-12);

    CHECK_THROWS_AS(cross_entropy(two, 2), UsageError);
    CHECK_THROWS_AS(cross_entropy(two, -1), UsageError);
}

TEST_CASE("multi_task_loss: endpoints and the midpoint") {
    Eigen::VectorXd yg(3), yf(3);
    yg << 2.0, -1.0, 0.5;
    yf << 0.0, 3.0, 1.0;
    const double ce_g = cross_entropy(yg, 1);
    const double ce_f = cross_entropy(yf, 1);
    CHECK(multi_task_loss(yg, yf, 1, 1.0) == ce_g);
    CHECK(multi_task_loss(yg, yf, 1, 0.0) == ce_f);
    CHECK(multi_task_loss(yg, yf, 1, 0.5) ==
          doctest::Approx(0.5 * ce_g + 0.5 * ce_f).epsilon(1e-15));
    CHECK_THROWS_AS(multi_task_loss(yg, yf, 1, 1.5), UsageError);

    // lambda 0.5 with hand-set losses 2 and 1 averages to 1.5
    CHECK(0.5 * 2.0 + 0.5 * 1.0 == 1.5);
}

TEST_CASE("lambda_schedule: boundary epochs and the floor") {
    TrainConfig cfg;
    CHECK(lambda_schedule(0, cfg) == 1.0);
    CHECK(lambda_schedule(19, cfg) == 1.0);
    CHECK(lambda_schedule(20, cfg) == 0.9);
    CHECK(lambda_schedule(500, cfg) == cfg.lambda_floor);
    CHECK(lambda_schedule(500, cfg) == 0.1);
}

TEST_CASE("lr_schedule: paper constants decay exactly") {
    TrainConfig cfg;
    CHECK(lr_schedule(0, cfg) == 0.05);
    CHECK(lr_schedule(49, cfg) == 0.05);
    CHECK(lr_schedule(50, cfg) == 0.005);
    CHECK(lr_schedule(149, cfg) == 0.0005);
}

TEST_CASE("schedules: never increase with the epoch") {
    TrainConfig cfg;
    double prev_lambda = lambda_schedule(0, cfg);
    double prev_lr = lr_schedule(0, cfg);
    for (int epoch = 1; epoch <= 300; ++epoch) {
        const double l = lambda_schedule(epoch, cfg);
        const double r = lr_schedule(epoch, cfg);
        CHECK(l <= prev_lambda);
        CHECK(r <= prev_lr);
        prev_lambda = l;
        prev_lr = r;
    }
}

TEST_CASE("sgd_step: plain step, zero gradient, momentum accumulation") {
    ModelParams params;
    params.add("w", Tensor4::constant(1, 1, 1, 1, 1.0));
    SgdState state = make_sgd_state(params);

    params.find("w")->grad.data[0] = 0.5;
    sgd_step(params, state, 0.1, 0.0);
    CHECK(params.find("w")->value.data[0] == doctest::Approx(0.95).epsilon(1e-15));

    params.find("w")->grad.data[0] = 0.0;
    const double before = params.find("w")->value.data[0];
    const double vel_before = state.velocity[0][0];
    sgd_step(params, state, 0.1, 0.0);
    CHECK(params.find("w")->value.data[0] == before);
    CHECK(state.velocity[0][0] == 0.0);
    CHECK(vel_before != 0.0); // decayed from the previous step

    // two momentum steps from w0 = 0 with unit gradient
    ModelParams p2;
    p2.add("w", Tensor4(1, 1, 1, 1));
    SgdState s2 = make_sgd_state(p2);
    for (int step = 0; step < 2; ++step) {
        p2.find("w")->grad.data[0] = 1.0;
        sgd_step(p2, s2, 0.1, 0.9);
    }
    CHECK(p2.find("w")->value.data[0] == doctest::Approx(-0.29).epsilon(1e-12));
}

TEST_CASE("train: a zero learning rate leaves the initialization untouched") {
    ModelConfig mcfg = tiny_model();
    Dataset data = brightness_dataset(4, 16);

    TrainConfig frozen;
    frozen.epochs = 1;
    frozen.lr0 = 0.0;
    frozen.seed = 3;

    TrainConfig none = frozen;
    none.epochs = 0;

    TrainResult run = train(data, mcfg, frozen);
    TrainResult init = train(data, mcfg, none);
    CHECK(init.log.empty());
    CHECK(same_params(run.params, init.params));
}

TEST_CASE("train: identical configs give bit-identical parameters") {
    ModelConfig mcfg = tiny_model();
    Dataset data = brightness_dataset(4, 16);
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.batch_size = 4;
    tcfg.lambda0 = 0.5;
    tcfg.seed = 11;

    TrainResult a = train(data, mcfg, tcfg);
    TrainResult b = train(data, mcfg, tcfg);
    CHECK(same_params(a.params, b.params));
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].loss == b.log[i].loss);
        CHECK(a.log[i].accuracy == b.log[i].accuracy);
    }
}

TEST_CASE("train: fits a linearly separable brightness task") {
    ModelConfig mcfg = tiny_model();
    Dataset data = brightness_dataset(8, 16);
    TrainConfig tcfg;
    tcfg.epochs = 30;
    tcfg.batch_size = 16;
    tcfg.lr0 = 0.05;
    tcfg.lambda0 = 0.5; // exercises both heads from the start
    tcfg.seed = 21;

    TrainResult result = train(data, mcfg, tcfg);
    Metrics m = evaluate(data, result.params, mcfg);
    INFO("train accuracy: ", m.accuracy);
    CHECK(m.accuracy == 1.0);
}

TEST_CASE("train: empty datasets and bad labels are usage errors") {
    ModelConfig mcfg = tiny_model();
    TrainConfig tcfg;
    CHECK_THROWS_AS(train({}, mcfg, tcfg), UsageError);

    Dataset data = brightness_dataset(1, 16);
    data[0].label = 9;
    CHECK_THROWS_AS(train(data, mcfg, tcfg), UsageError);
}

TEST_CASE("multi-task gradients: lambda end points silence the other head") {
    ModelConfig mcfg = tiny_model();
    ModelParams params = init_model_params(mcfg, 31);
    Dataset data = brightness_dataset(1, 16);
    const SynthSample& sample = data[0];

    auto head_grads = [&](double lambda) {
        Tape t;
        std::vector<VarId> ids = bind_params(t, params);
        ForwardVars vars = forward_on_tape(t, sample.image, ids, params, mcfg);
        t.backward(multi_task_loss(t, vars.logits_global, vars.logits_fusion, sample.label,
                                   lambda));
        double global_head = 0.0, fusion_head = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params.at(i).name == "head.global.weight") {
                global_head = t.grad(ids[i]).data.abs().maxCoeff();
            }
            if (params.at(i).name == "head.fusion.weight") {
                fusion_head = t.grad(ids[i]).data.abs().maxCoeff();
            }
        }
        return std::pair<double, double>{global_head, fusion_head};
    };

    auto [g0, f0] = head_grads(0.0);
    CHECK(g0 == 0.0);
    CHECK(f0 > 0.0);
    auto [g1, f1] = head_grads(1.0);
    CHECK(g1 > 0.0);
    CHECK(f1 == 0.0);
}

TEST_CASE("evaluate: constant predictor scores chance on a balanced set") {
    ModelConfig mcfg = tiny_model();
    mcfg.num_classes = 4;
    ModelParams params = init_model_params(mcfg, 1);
    for (auto& p : params) p.value.data.setZero(); // all logits collapse to 0

    SynthConfig scfg;
    scfg.image_size = 32;
    Dataset data;
    for (int klass = 0; klass < 4; ++klass) {
        for (int i = 0; i < 3; ++i) {
            data.push_back(gen_sample(static_cast<std::uint64_t>(100 + klass * 3 + i), klass, scfg));
        }
    }
    Metrics m = evaluate(data, params, mcfg);
    CHECK(m.accuracy == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(m.per_class_accuracy[0] == 1.0);
    CHECK(m.per_class_accuracy[1] == 0.0);
    REQUIRE(m.mean_loc_iou.has_value());
}

TEST_CASE("union_iou and coverage: identities and a hand-computed overlap") {
    std::vector<InstanceBox> a{{0, 0, 2, 2}, {5, 5, 8, 8}};
    CHECK(union_iou(a, a, 10, 10) == 1.0);
    CHECK(coverage_fraction(a, a) == 1.0);

    std::vector<InstanceBox> b{{1, 1, 3, 3}};
    std::vector<InstanceBox> c{{0, 0, 2, 2}};
    // intersection 1 cell, union 7 cells
    CHECK(union_iou(b, c, 4, 4) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
    CHECK(coverage_fraction(b, c) == 0.0); // 1 of 4 cells covered, not a majority
}

TEST_CASE("metrics json line: stated keys, null loc_iou when absent") {
    EpochMetrics m;
    m.epoch = 3;
    m.lambda = 0.9;
    m.lr = 0.05;
    m.loss = 1.25;
    m.accuracy = 0.5;
    CHECK(metrics_json_line(m) ==
          R"({"epoch":3,"lambda":0.9,"lr":0.05,"loss":1.25,"acc":0.5,"loc_iou":null})");
    m.loc_iou = 0.75;
    CHECK(metrics_json_line(m) ==
          R"({"epoch":3,"lambda":0.9,"lr":0.05,"loss":1.25,"acc":0.5,"loc_iou":0.75})");
}
