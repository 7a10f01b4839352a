// resformer: train / evaluate / predict / synth

#include "resformer/trainer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <map>

using namespace resformer;

namespace {

int fail(const std::string& kind, const std::string& message, const std::vector<std::string>& items = {}) {
    std::cerr << "error: " << kind << ": " << message << '\n';
    for (const auto& i : items) std::cerr << "  - " << i << '\n';
    return 1;
}

TrainConfig resolve_config(const std::string& config_file, const std::map<std::string, std::string>& overrides) {
    TrainConfig cfg;
    if (!config_file.empty()) {
        std::ifstream in(config_file);
        if (!in) throw std::runtime_error("cannot open config file " + config_file);
        cfg = nlohmann::json::parse(in).get<TrainConfig>();
    }
    for (const auto& [key, value] : overrides) apply_override(cfg, key, value);
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-task ResFormer U-Net: joint image classification and segmentation"};
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "Train a model; writes best.ckpt, last.ckpt and metrics.jsonl");
    std::string config_file;
    bool print_config = false;
    std::map<std::string, std::string> overrides;
    train->add_option("--config", config_file, "JSON run configuration (flags below override it)");
    train->add_flag("--print_config", print_config, "Print the resolved configuration and exit");
    for (const auto& key : config_keys()) {
        train->add_option_function<std::string>(
            "--" + key, [&overrides, key](const std::string& v) { overrides[key] = v; }, "Override '" + key + "'");
    }

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on a dataset split");
    std::string eval_ckpt, eval_data, eval_output, eval_dump;
    EvaluateOptions eval_opt;
    evaluate->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--data", eval_data, "Split directory (manifest.json, labels.csv, images/, masks/)")
        ->required()
        ->check(CLI::ExistingDirectory);
    evaluate->add_option("--batch_size", eval_opt.batch_size, "Evaluation batch size")->check(CLI::PositiveNumber);
    evaluate->add_flag("--per_image", eval_opt.per_image, "Average DSC/JI per image instead of pooling pixel counts");
    evaluate->add_option("--output", eval_output, "Also write the report as JSON to this file");
    evaluate->add_option("--dump_dir", eval_dump, "Write predicted masks and class probabilities here");

    // predict
    auto* predict = app.add_subcommand("predict", "Predict mask and label probabilities for one image");
    std::string pred_ckpt, pred_image, pred_out = ".";
    bool pred_npy = false;
    predict->add_option("--checkpoint", pred_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    predict->add_option("--image", pred_image, "Input image")->required()->check(CLI::ExistingFile);
    predict->add_option("--out_dir", pred_out, "Output directory")->capture_default_str();
    predict->add_flag("--npy", pred_npy, "Also write per-pixel class probabilities as <stem>_probs.npy");

    // synth
    auto* synth = app.add_subcommand("synth", "Generate a synthetic lesion dataset split");
    std::string synth_out, synth_split = "train";
    int synth_count = 16, synth_size = 32, synth_classes = 2;
    std::uint64_t synth_seed = 0;
    synth->add_option("--out", synth_out, "Output split directory")->required();
    synth->add_option("--split", synth_split, "Split name recorded in the manifest")->capture_default_str();
    synth->add_option("--count", synth_count, "Number of samples")->capture_default_str()->check(CLI::NonNegativeNumber);
    synth->add_option("--size", synth_size, "Image height and width")->capture_default_str()->check(CLI::PositiveNumber);
    synth->add_option("--n_classes", synth_classes, "Foreground classes (1..3)")->capture_default_str()->check(CLI::Range(1, 3));
    synth->add_option("--seed", synth_seed, "Random seed")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) {
            const TrainConfig cfg = resolve_config(config_file, overrides);
            if (print_config) {
                nlohmann::json j;
                to_json(j, cfg);
                std::cout << j.dump(2) << '\n';
                return 0;
            }
            const TrainSummary s = run_training(cfg, &std::cout);
            std::cout << "best epoch " << s.best_epoch << " val_loss=" << s.best_val_loss;
            if (!s.best_checkpoint.empty()) std::cout << " -> " << s.best_checkpoint.string();
            std::cout << '\n';
        } else if (*evaluate) {
            eval_opt.dump_dir = eval_dump;
            const Evaluation ev = run_evaluation(eval_ckpt, eval_data, eval_opt);
            std::cout << format_report(ev.report);
            if (!eval_output.empty()) {
                nlohmann::json j = ev.report;
                j["loss"] = ev.loss;
                std::ofstream(eval_output) << j.dump(2) << '\n';
            }
        } else if (*predict) {
            const Prediction p = run_prediction(pred_ckpt, pred_image, pred_out, pred_npy);
            std::cout << "mask " << p.mask.cols << "x" << p.mask.rows << ", class probabilities:";
            for (double v : p.cls_probs) std::cout << ' ' << v;
            std::cout << '\n';
        } else if (*synth) {
            const auto samples = synth_generate(Rng(synth_seed), synth_count, synth_size, synth_size, synth_classes);
            write_dataset(samples, synth_out, synth_split, synth_classes);
            std::cout << "wrote " << samples.size() << " samples to " << synth_out << '\n';
        }
    } catch (const DatasetError& e) {
        const std::string what = e.what();
        return fail("dataset", what.substr(0, what.find('\n')), e.items());
    } catch (const CheckpointError& e) {
        return fail("checkpoint", e.what());
    } catch (const TrainingError& e) {
        return fail("training", e.what());
    } catch (const nlohmann::json::exception& e) {
        return fail("config", e.what());
    } catch (const std::invalid_argument& e) {
        return fail("invalid argument", e.what());
    } catch (const std::exception& e) {
        return fail("runtime", e.what());
    }
    return 0;
}
