#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gatn/errors.hpp"
#include "gatn/gradcheck_suite.hpp"
#include "gatn/image_io.hpp"
#include "gatn/localizer.hpp"
#include "gatn/model.hpp"
#include "gatn/synthdata.hpp"
#include "gatn/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitVerification = 3;

std::string sample_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%05d", index);
    return buf;
}

void add_synth_flags(CLI::App* cmd, gatn::SynthConfig& cfg) {
    cmd->add_option("--classes", cfg.num_classes, "number of classes")
        ->capture_default_str();
    cmd->add_option("--image-size", cfg.image_size, "generated image height/width")
        ->capture_default_str();
    cmd->add_option("--min-instances", cfg.min_instances, "fewest glyphs per image")
        ->capture_default_str();
    cmd->add_option("--max-instances", cfg.max_instances, "most glyphs per image")
        ->capture_default_str();
    cmd->add_option("--radius-min", cfg.glyph_radius_min, "smallest glyph radius")
        ->capture_default_str();
    cmd->add_option("--radius-max", cfg.glyph_radius_max, "largest glyph radius")
        ->capture_default_str();
    cmd->add_option("--clutter", cfg.clutter_density, "distractor density")
        ->capture_default_str();
    cmd->add_option("--noise", cfg.noise_amplitude, "per-pixel noise amplitude")
        ->capture_default_str();
}

// the instance backbone consumes the cropped patches, so its input size
// follows --patch-size
void sync_model_config(gatn::ModelConfig& cfg) {
    cfg.instance_backbone.input_size = cfg.localizer.patch_size;
    cfg.attention.hidden_channels = cfg.global_backbone.stage_channels.back();
}

void add_model_flags(CLI::App* cmd, gatn::ModelConfig& cfg) {
    cmd->add_option("--num-classes", cfg.num_classes, "class count")
        ->capture_default_str();
    cmd->add_option("--input-size", cfg.global_backbone.input_size,
                    "downsampled input to the global branch")
        ->capture_default_str();
    cmd->add_option("--global-stages", cfg.global_backbone.stage_channels,
                    "global backbone stage channels")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--instance-stages", cfg.instance_backbone.stage_channels,
                    "instance backbone stage channels")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--dilations", cfg.attention.dilation_rates,
                    "dilation rates of the two attention blocks")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--tau", cfg.localizer.rel_threshold,
                    "relative attention threshold in (0,1)")
        ->capture_default_str();
    cmd->add_option("--top-k", cfg.localizer.top_k, "instance patches per image")
        ->capture_default_str();
    cmd->add_option("--patch-size", cfg.localizer.patch_size, "instance patch size")
        ->capture_default_str();
    cmd->add_option("--min-area", cfg.localizer.min_component_area,
                    "smallest kept component, in attention cells")
        ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, gatn::TrainConfig& cfg) {
    cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str();
    cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size")
        ->capture_default_str();
    cmd->add_option("--lr0", cfg.lr0, "initial learning rate")->capture_default_str();
    cmd->add_option("--lr-decay-every", cfg.lr_decay_every, "epochs between lr decays")
        ->capture_default_str();
    cmd->add_option("--lr-decay-factor", cfg.lr_decay_factor, "lr decay multiplier")
        ->capture_default_str();
    cmd->add_option("--lambda0", cfg.lambda0, "initial loss weight")->capture_default_str();
    cmd->add_option("--lambda-step", cfg.lambda_step, "loss weight decrement")
        ->capture_default_str();
    cmd->add_option("--lambda-every", cfg.lambda_every, "epochs between decrements")
        ->capture_default_str();
    cmd->add_option("--lambda-floor", cfg.lambda_floor, "lowest loss weight")
        ->capture_default_str();
    cmd->add_option("--momentum", cfg.momentum, "SGD momentum")->capture_default_str();
    cmd->add_option("--seed", cfg.seed, "training seed")->capture_default_str();
    cmd->add_flag("--global-only", cfg.global_only,
                  "ablation: train and predict with the global branch only");
}

void setup_config_file(CLI::App* cmd) {
    cmd->set_config("--config", "", "flat key = value file, # comments");
    cmd->allow_config_extras(false);
}

void log_effective_config(CLI::App* cmd) {
    std::string flat = cmd->config_to_str(true, false);
    std::cerr << "[" << cmd->get_name() << "] effective config:\n" << flat;
}

// --- dataset directory layout ----------------------------------------------
// <dir>/sample_#####.ppm, sample_#####.boxes.txt (one "r0 c0 r1 c1" per
// line), manifest.jsonl with {"image","label","seed","boxes"} per line.

void write_dataset_dir(const std::vector<gatn::SynthSample>& samples, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    std::ofstream manifest(dir / "manifest.jsonl");
    if (!manifest) throw gatn::IoError("synth: cannot write manifest in " + dir.string());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        const std::string stem = sample_stem(static_cast<int>(i));
        gatn::write_ppm(s.image, (dir / (stem + ".ppm")).string());
        std::ofstream boxes(dir / (stem + ".boxes.txt"));
        ordered_json jboxes = ordered_json::array();
        for (const auto& b : s.gt_boxes) {
            boxes << b.row0 << ' ' << b.col0 << ' ' << b.row1 << ' ' << b.col1 << '\n';
            jboxes.push_back({b.row0, b.col0, b.row1, b.col1});
        }
        ordered_json line;
        line["image"] = stem + ".ppm";
        line["label"] = s.label;
        line["seed"] = s.seed;
        line["boxes"] = jboxes;
        manifest << line.dump() << '\n';
    }
}

gatn::Dataset load_dataset_dir(const fs::path& dir) {
    std::ifstream manifest(dir / "manifest.jsonl");
    if (!manifest) {
        throw gatn::IoError("dataset: cannot open " + (dir / "manifest.jsonl").string());
    }
    gatn::Dataset data;
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        ordered_json j = ordered_json::parse(line, nullptr, false);
        if (j.is_discarded()) throw gatn::IoError("dataset: malformed manifest line");
        gatn::SynthSample s;
        s.image = gatn::read_ppm((dir / j.at("image").get<std::string>()).string());
        s.label = j.at("label").get<int>();
        s.seed = j.value("seed", 0ULL);
        for (const auto& b : j.value("boxes", ordered_json::array())) {
            s.gt_boxes.push_back(
                {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>(), 0.0});
        }
        data.push_back(std::move(s));
    }
    if (data.empty()) throw gatn::IoError("dataset: empty manifest in " + dir.string());
    return data;
}

struct DataFlags {
    std::string data_dir;
    std::uint64_t data_seed = 7;
    int per_class = 50;
};

void add_data_flags(CLI::App* cmd, DataFlags& flags, gatn::SynthConfig& scfg) {
    cmd->add_option("--data", flags.data_dir,
                    "dataset directory (from the synth command); omit to generate in-memory");
    cmd->add_option("--data-seed", flags.data_seed, "base seed for in-memory generation")
        ->capture_default_str();
    cmd->add_option("--per-class", flags.per_class, "samples per class when generating")
        ->capture_default_str();
    add_synth_flags(cmd, scfg);
}

gatn::Dataset resolve_dataset(const DataFlags& flags, const gatn::SynthConfig& scfg) {
    if (!flags.data_dir.empty()) return load_dataset_dir(flags.data_dir);
    return gatn::gen_dataset(flags.per_class, flags.data_seed, scfg);
}

// --- subcommands -------------------------------------------------------------

int cmd_synth(const gatn::SynthConfig& scfg, int per_class, std::uint64_t seed,
              const std::string& out_dir) {
    if (scfg.num_classes < 1) throw gatn::UsageError("synth: --classes must be >= 1");
    if (per_class < 1) throw gatn::UsageError("synth: --per-class must be >= 1");
    const auto samples = gatn::gen_dataset(per_class, seed, scfg);
    write_dataset_dir(samples, out_dir);
    std::cout << "wrote " << samples.size() << " samples to " << out_dir << "\n";
    return kExitOk;
}

int cmd_train(gatn::ModelConfig mcfg, const gatn::TrainConfig& tcfg,
              const DataFlags& data_flags, const gatn::SynthConfig& scfg,
              const std::string& out_dir) {
    sync_model_config(mcfg);
    mcfg.validate();
    const gatn::Dataset data = resolve_dataset(data_flags, scfg);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
    if (!metrics) throw gatn::IoError("train: cannot write metrics in " + out_dir);
    gatn::TrainResult result = gatn::train(data, mcfg, tcfg, &metrics);
    const std::string ckpt = (fs::path(out_dir) / "checkpoint.gatn").string();
    gatn::save_checkpoint(result.params, ckpt);
    std::cout << "checkpoint: " << ckpt << "\n";
    if (!result.log.empty()) {
        std::cout << "final: " << gatn::metrics_json_line(result.log.back()) << "\n";
    }
    return kExitOk;
}

int cmd_eval(gatn::ModelConfig mcfg, const std::string& checkpoint,
             const DataFlags& data_flags, const gatn::SynthConfig& scfg,
             const std::string& boxes_out, bool global_only) {
    sync_model_config(mcfg);
    mcfg.validate();
    const gatn::ModelParams params = gatn::load_checkpoint(checkpoint);
    const gatn::Dataset data = resolve_dataset(data_flags, scfg);
    const gatn::Metrics m = gatn::evaluate(data, params, mcfg, global_only);

    if (!boxes_out.empty()) {
        std::error_code ec;
        fs::create_directories(boxes_out, ec);
        for (std::size_t i = 0; i < data.size(); ++i) {
            gatn::ForwardOutput out = gatn::forward(data[i].image, params, mcfg);
            std::ofstream f(fs::path(boxes_out) /
                            ("boxes_" + sample_stem(static_cast<int>(i)).substr(7) + ".txt"));
            for (const auto& b : out.boxes) {
                char line[128];
                std::snprintf(line, sizeof(line), "%d %d %d %d %.17g\n", b.row0, b.col0,
                              b.row1, b.col1, b.score);
                f << line;
            }
        }
    }

    ordered_json j;
    j["accuracy"] = m.accuracy;
    j["per_class"] = std::vector<double>(m.per_class_accuracy.data(),
                                         m.per_class_accuracy.data() + m.per_class_accuracy.size());
    if (m.mean_loc_iou.has_value()) {
        j["mean_loc_iou"] = *m.mean_loc_iou;
    } else {
        j["mean_loc_iou"] = nullptr;
    }
    std::cout << j.dump() << "\n";
    return kExitOk;
}

int cmd_visualize(gatn::ModelConfig mcfg, const std::string& checkpoint,
                  const std::string& image_path, std::int64_t synth_seed, int synth_class,
                  const gatn::SynthConfig& scfg, const std::string& out_dir) {
    sync_model_config(mcfg);
    mcfg.validate();
    const gatn::ModelParams params = gatn::load_checkpoint(checkpoint);
    gatn::Tensor4 image;
    if (!image_path.empty()) {
        image = gatn::read_ppm(image_path);
    } else {
        image = gatn::gen_sample(static_cast<std::uint64_t>(synth_seed), synth_class, scfg).image;
    }

    gatn::Tape tape;
    std::vector<gatn::VarId> ids = gatn::bind_params(tape, params);
    gatn::ForwardVars vars =
        gatn::forward_on_tape(tape, image, ids, params, mcfg, gatn::ForwardMode::full);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    const fs::path out(out_dir);
    const gatn::InstanceBox whole_map{0, 0, tape.value(vars.attention.semantic_map).h(),
                                      tape.value(vars.attention.semantic_map).w(), 0.0};
    auto upsample = [&](const gatn::Tensor4& map) {
        return gatn::normalize_minmax(
            gatn::resize_bilinear(map, whole_map, image.h(), image.w()));
    };

    gatn::write_pgm(upsample(tape.value(vars.attention.semantic_map)),
                    (out / "semantic.pgm").string());
    gatn::write_pgm(upsample(tape.value(vars.attention.attention_map)),
                    (out / "attention.pgm").string());

    const Eigen::MatrixXd gates = gatn::to_matrix(tape.value(vars.attention.gates));
    std::ofstream gate_file(out / "gates.txt");
    if (!gate_file) throw gatn::IoError("visualize: cannot write " + (out / "gates.txt").string());
    int lowest = 0, highest = 0;
    for (int k = 0; k < gates.cols(); ++k) {
        char line[64];
        std::snprintf(line, sizeof(line), "%.17g\n", gates(0, k));
        gate_file << line;
        if (gates(0, k) < gates(0, lowest)) lowest = k;
        if (gates(0, k) > gates(0, highest)) highest = k;
    }

    const gatn::Tensor4& feats = tape.value(vars.global_features);
    auto channel_panel = [&](int k) {
        gatn::Tensor4 map(1, 1, feats.h(), feats.w());
        for (int i = 0; i < feats.h(); ++i) {
            for (int j = 0; j < feats.w(); ++j) map(0, 0, i, j) = feats(0, k, i, j);
        }
        return upsample(map);
    };
    gatn::write_pgm(channel_panel(lowest), (out / "channel_low.pgm").string());
    gatn::write_pgm(channel_panel(highest), (out / "channel_high.pgm").string());
    std::cout << "wrote heatmaps to " << out_dir << "\n";
    return kExitOk;
}

int cmd_gradcheck(const std::vector<std::string>& only, bool negative_control) {
    const auto results = gatn::run_gradcheck_suite(only, negative_control);
    if (results.empty()) {
        throw gatn::UsageError("gradcheck: no checks match the requested op filter");
    }
    bool all_pass = true;
    for (const auto& r : results) {
        std::printf("%-32s max_rel_err %.3e threshold %.0e %s\n", r.name.c_str(),
                    r.max_rel_error, r.threshold, r.pass ? "PASS" : "FAIL");
        all_pass = all_pass && r.pass;
    }
    return all_pass ? kExitOk : kExitVerification;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"gated-attention multi-instance classification"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset on disk");
    gatn::SynthConfig synth_cfg;
    int synth_per_class = 50;
    std::uint64_t synth_seed = 7;
    std::string synth_out;
    add_synth_flags(synth, synth_cfg);
    synth->add_option("--per-class", synth_per_class, "samples per class")
        ->capture_default_str();
    synth->add_option("--seed", synth_seed, "base seed")->capture_default_str();
    synth->add_option("--out", synth_out, "output directory")->required();
    setup_config_file(synth);

    // train
    auto* train = app.add_subcommand("train", "train a model");
    gatn::ModelConfig train_mcfg;
    gatn::TrainConfig train_tcfg;
    gatn::SynthConfig train_scfg;
    DataFlags train_data;
    std::string train_out = "run";
    add_model_flags(train, train_mcfg);
    add_train_flags(train, train_tcfg);
    add_data_flags(train, train_data, train_scfg);
    train->add_option("--out", train_out, "output directory for checkpoint + metrics")
        ->capture_default_str();
    setup_config_file(train);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    gatn::ModelConfig eval_mcfg;
    gatn::SynthConfig eval_scfg;
    DataFlags eval_data;
    std::string eval_checkpoint;
    std::string eval_boxes_out;
    bool eval_global_only = false;
    add_model_flags(eval, eval_mcfg);
    add_data_flags(eval, eval_data, eval_scfg);
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint path")->required();
    eval->add_option("--boxes-out", eval_boxes_out,
                     "directory for per-image box files: row0 col0 row1 col1 score");
    eval->add_flag("--global-only", eval_global_only, "score the global branch only");
    setup_config_file(eval);

    // visualize
    auto* viz = app.add_subcommand("visualize", "export attention heatmaps for one image");
    gatn::ModelConfig viz_mcfg;
    gatn::SynthConfig viz_scfg;
    std::string viz_checkpoint, viz_image, viz_out = "viz";
    std::int64_t viz_seed = 0;
    int viz_class = 0;
    add_model_flags(viz, viz_mcfg);
    add_synth_flags(viz, viz_scfg);
    viz->add_option("--checkpoint", viz_checkpoint, "checkpoint path")->required();
    viz->add_option("--image", viz_image, "input PPM (P6) image");
    viz->add_option("--synth-seed", viz_seed, "generate the input from this seed instead");
    viz->add_option("--synth-class", viz_class, "class for the generated input")
        ->capture_default_str();
    viz->add_option("--out", viz_out, "output directory")->capture_default_str();
    setup_config_file(viz);

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::vector<std::string> gradcheck_ops;
    bool gradcheck_negative = false;
    gradcheck->add_option("--op", gradcheck_ops, "check only the named op(s)");
    gradcheck->add_flag("--negative-control", gradcheck_negative,
                        "include a corrupted backward that must be flagged");
    setup_config_file(gradcheck);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) {
            log_effective_config(synth);
            return cmd_synth(synth_cfg, synth_per_class, synth_seed, synth_out);
        }
        if (train->parsed()) {
            log_effective_config(train);
            return cmd_train(train_mcfg, train_tcfg, train_data, train_scfg, train_out);
        }
        if (eval->parsed()) {
            log_effective_config(eval);
            return cmd_eval(eval_mcfg, eval_checkpoint, eval_data, eval_scfg, eval_boxes_out,
                            eval_global_only);
        }
        if (viz->parsed()) {
            log_effective_config(viz);
            return cmd_visualize(viz_mcfg, viz_checkpoint, viz_image, viz_seed, viz_class,
                                 viz_scfg, viz_out);
        }
        if (gradcheck->parsed()) {
            return cmd_gradcheck(gradcheck_ops, gradcheck_negative);
        }
    } catch (const gatn::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const gatn::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const gatn::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
