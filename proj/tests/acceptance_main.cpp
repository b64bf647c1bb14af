// Acceptance suite: one line per criterion, nonzero exit on any failure.
// Heavy criteria (three full training runs) sit at the end; pass a substring
// argument to run a subset, e.g. "./gatn_acceptance schedule oracle".

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gatn/attention.hpp"
#include "gatn/gradcheck_suite.hpp"
#include "gatn/localizer.hpp"
#include "gatn/model.hpp"
#include "gatn/rng.hpp"
#include "gatn/synthdata.hpp"
#include "gatn/training.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] %-28s %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void report_skip(const std::string& name, const std::string& detail) {
    std::printf("[ -- ] %-28s %s\n", name.c_str(), detail.c_str());
}

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

gatn::Tensor4 random_tensor(int n, int c, int h, int w, gatn::Rng& rng) {
    gatn::Tensor4 t(n, c, h, w);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(-1.0, 1.0);
    return t;
}

// --- criteria ----------------------------------------------------------------

void criterion_gradients() {
    const auto start = Clock::now();
    const auto results = gatn::run_gradcheck_suite();
    bool pass = !results.empty();
    double worst_op = 0.0, worst_model = 0.0;
    for (const auto& r : results) {
        pass = pass && r.pass;
        if (r.name.rfind("model.", 0) == 0) {
            worst_model = std::max(worst_model, r.max_rel_error);
        } else {
            worst_op = std::max(worst_op, r.max_rel_error);
        }
    }
    const double elapsed = seconds_since(start);
    pass = pass && elapsed < 120.0;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "%zu checks, ops max %.2e (<1e-4), composed max %.2e (<1e-3), %.1fs (<120s)",
                  results.size(), worst_op, worst_model, elapsed);
    report("gradient-suite", pass, detail);
}

void criterion_attention_oracle() {
    const auto start = Clock::now();
    gatn::Rng rng(20240);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = rng.uniform_int(1, 2);
        const int c = rng.uniform_int(2, 8);
        const int h = rng.uniform_int(3, 6);
        const int w = rng.uniform_int(3, 6);
        gatn::AttentionConfig cfg{{2, 4}, c, 0.0};
        gatn::AttentionParams params = gatn::init_attention_params(c, rng);
        gatn::Tensor4 x = random_tensor(n, c, h, w, rng);

        gatn::AttentionOutput got = gatn::gated_attention(x, params, cfg);
        oracles::NaiveAttention want = oracles::naive_gated_attention(x, params, cfg);
        worst = std::max(worst,
                         (got.semantic_map.data - want.semantic_map.data).abs().maxCoeff());
        worst = std::max(worst,
                         (got.attention_map.data - want.attention_map.data).abs().maxCoeff());
        worst = std::max(worst, (got.gates - want.gates).cwiseAbs().maxCoeff());
    }
    const double elapsed = seconds_since(start);
    const bool pass = worst <= 1e-10 && elapsed < 10.0;
    char detail[120];
    std::snprintf(detail, sizeof(detail),
                  "100 random inputs, max |impl - naive| %.2e (<=1e-10), %.2fs (<10s)", worst,
                  elapsed);
    report("attention-oracle", pass, detail);
}

void criterion_schedules() {
    gatn::TrainConfig cfg;
    const bool pass = gatn::lambda_schedule(0, cfg) == 1.0 &&
                      gatn::lambda_schedule(20, cfg) == 0.9 &&
                      gatn::lr_schedule(0, cfg) == 0.05 &&
                      gatn::lr_schedule(50, cfg) == 0.005;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "lambda(0)=%.17g lambda(20)=%.17g lr(0)=%.17g lr(50)=%.17g (exact)",
                  gatn::lambda_schedule(0, cfg), gatn::lambda_schedule(20, cfg),
                  gatn::lr_schedule(0, cfg), gatn::lr_schedule(50, cfg));
    report("schedule-fidelity", pass, detail);
}

void criterion_degenerate() {
    gatn::ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.global_backbone = {{4, 8}, 32};
    cfg.instance_backbone = {{4, 8}, 16};
    cfg.localizer.top_k = 2;
    cfg.localizer.patch_size = 16;
    gatn::ModelParams params = gatn::init_model_params(cfg, 7);
    for (auto& p : params) p.value.data.setZero();
    gatn::SynthConfig scfg;
    scfg.image_size = 64;
    const gatn::SynthSample sample = gatn::gen_sample(3, 1, scfg);

    bool pass = false;
    std::string detail = "all-zero attention map";
    try {
        gatn::ForwardOutput out = gatn::forward(sample.image, params, cfg);
        const int mh = out.attention.attention_map.h();
        const int mw = out.attention.attention_map.w();
        pass = out.attention.attention_map.data.abs().maxCoeff() == 0.0 &&
               out.boxes.size() == 1 && out.boxes[0] == gatn::InstanceBox{0, 0, mh, mw} &&
               out.logits_fusion.allFinite();
        detail = "fallback whole-map box, finite Y_f";
    } catch (const std::exception& e) {
        detail = std::string("threw: ") + e.what();
    }
    report("degenerate-handling", pass, detail);
}

void criterion_determinism() {
    const fs::path base = "/tmp/gatn_acceptance_det";
    fs::remove_all(base);
    fs::create_directories(base);
    const std::string flags =
        " train --num-classes 2 --input-size 16 --global-stages 4,8 --instance-stages 4,8"
        " --patch-size 16 --top-k 1 --image-size 32 --classes 2 --per-class 3"
        " --epochs 2 --batch-size 4 --lambda0 0.5 --seed 17 --out ";
    const std::string quiet = " >/dev/null 2>&1";
    const int rc1 = std::system((std::string(GATN_CLI_PATH) + flags + (base / "a").string() + quiet).c_str());
    const int rc2 = std::system((std::string(GATN_CLI_PATH) + flags + (base / "b").string() + quiet).c_str());

    auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    const std::string ck_a = slurp(base / "a" / "checkpoint.gatn");
    const std::string ck_b = slurp(base / "b" / "checkpoint.gatn");

    bool roundtrip = false;
    if (!ck_a.empty()) {
        gatn::ModelParams loaded = gatn::load_checkpoint((base / "a" / "checkpoint.gatn").string());
        gatn::save_checkpoint(loaded, (base / "resaved.gatn").string());
        roundtrip = slurp(base / "resaved.gatn") == ck_a;
    }
    const bool pass = rc1 == 0 && rc2 == 0 && !ck_a.empty() && ck_a == ck_b && roundtrip;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "two runs byte-identical (%zu bytes), reload+resave byte-identical",
                  ck_a.size());
    report("determinism", pass, detail);
}

struct SeedOutcome {
    double full_acc = 0.0;
    double global_acc = 0.0;
    double mean_iou = 0.0;
    double coverage = 0.0;
    double first_epoch_loss = 0.0;
    double fifth_epoch_loss = 0.0;
    double minutes = 0.0;
};

SeedOutcome run_seed(int run_index) {
    const auto start = Clock::now();
    gatn::SynthConfig scfg; // desk defaults: K=4, 128x128
    const std::uint64_t data_base = 100000 + static_cast<std::uint64_t>(run_index) * 1000;
    const gatn::Dataset train_set = gatn::gen_dataset(50, data_base, scfg);          // 200
    const gatn::Dataset test_set = gatn::gen_dataset(20, data_base + 200, scfg);     // 80

    gatn::ModelConfig mcfg; // desk defaults: 96 input, stages (8,16,32,64), k=4
    gatn::TrainConfig tcfg; // desk defaults: 60 epochs, lr 0.05, lambda from 1.0
    tcfg.seed = static_cast<std::uint64_t>(run_index + 1);

    SeedOutcome outcome;
    gatn::TrainResult full = gatn::train(train_set, mcfg, tcfg);
    outcome.first_epoch_loss = full.log.front().loss;
    outcome.fifth_epoch_loss = full.log[4].loss;
    gatn::Metrics m = gatn::evaluate(test_set, full.params, mcfg);
    outcome.full_acc = m.accuracy;
    outcome.mean_iou = m.mean_loc_iou.value_or(0.0);

    double covered = 0.0;
    for (const auto& sample : test_set) {
        gatn::ForwardOutput out = gatn::forward(sample.image, full.params, mcfg);
        std::vector<gatn::InstanceBox> picked;
        for (const auto& b : out.boxes) {
            picked.push_back(gatn::map_box_to_image(b, out.attention.attention_map.h(),
                                                    out.attention.attention_map.w(),
                                                    sample.image.h(), sample.image.w()));
        }
        covered += gatn::coverage_fraction(sample.gt_boxes, picked);
    }
    outcome.coverage = covered / static_cast<double>(test_set.size());

    gatn::TrainConfig gcfg = tcfg;
    gcfg.global_only = true;
    gatn::TrainResult global_only = gatn::train(train_set, mcfg, gcfg);
    outcome.global_acc =
        gatn::evaluate(test_set, global_only.params, mcfg, /*global_only=*/true).accuracy;

    outcome.minutes = seconds_since(start) / 60.0;
    return outcome;
}

void criteria_end_to_end() {
    std::vector<SeedOutcome> outcomes;
    for (int run = 0; run < 3; ++run) {
        outcomes.push_back(run_seed(run));
        std::printf("  seed %d: full %.3f global %.3f iou %.3f coverage %.3f (%.1f min)\n",
                    run + 1, outcomes.back().full_acc, outcomes.back().global_acc,
                    outcomes.back().mean_iou, outcomes.back().coverage,
                    outcomes.back().minutes);
        std::fflush(stdout);
    }

    double mean_acc = 0.0, worst_minutes = 0.0;
    int ablation_wins = 0, loc_wins = 0, loss_drops = 0;
    for (const auto& o : outcomes) {
        mean_acc += o.full_acc / 3.0;
        worst_minutes = std::max(worst_minutes, o.minutes);
        if (o.full_acc >= o.global_acc) ++ablation_wins;
        if (o.mean_iou >= 0.30 && o.coverage >= 0.60) ++loc_wins;
        if (o.fifth_epoch_loss < o.first_epoch_loss) ++loss_drops;
    }

    char detail[200];
    std::snprintf(detail, sizeof(detail),
                  "mean test accuracy %.3f (>=0.90), slowest run %.1f min (<30)", mean_acc,
                  worst_minutes);
    report("synthetic-end-to-end", mean_acc >= 0.90 && worst_minutes < 30.0, detail);

    std::snprintf(detail, sizeof(detail), "full >= global-only on %d of 3 seeds (>=2)",
                  ablation_wins);
    report("ablation-direction", ablation_wins >= 2, detail);

    std::snprintf(detail, sizeof(detail),
                  "IoU>=0.30 and coverage>=0.60 on %d of 3 seeds (>=2)", loc_wins);
    report("localization-concordance", loc_wins >= 2, detail);

    std::snprintf(detail, sizeof(detail),
                  "epoch-5 loss below epoch-1 loss on %d of 3 seeds (info)", loss_drops);
    std::printf("  note: %s\n", detail);
}

} // namespace

int main(int argc, char** argv) {
    std::vector<std::string> filters;
    for (int i = 1; i < argc; ++i) filters.emplace_back(argv[i]);
    auto wanted = [&](const char* name) {
        if (filters.empty()) return true;
        for (const auto& f : filters) {
            if (std::string(name).find(f) != std::string::npos) return true;
        }
        return false;
    };

    report_skip("headline-accuracy",
                "not reproducible at desk scale (private data, pretrained backbones); "
                "property-based criteria below substitute");

    if (wanted("gradient")) criterion_gradients();
    if (wanted("oracle")) criterion_attention_oracle();
    if (wanted("schedule")) criterion_schedules();
    if (wanted("degenerate")) criterion_degenerate();
    if (wanted("determinism")) criterion_determinism();
    if (wanted("end-to-end") || wanted("ablation") || wanted("localization")) {
        criteria_end_to_end();
    }

    if (g_failures == 0) {
        std::printf("acceptance: all criteria passed\n");
        return 0;
    }
    std::printf("acceptance: %d criteria FAILED\n", g_failures);
    return 1;
}
