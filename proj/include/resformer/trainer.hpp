#pragma once

#include "resformer/checkpoint.hpp"
#include "resformer/data.hpp"
#include "resformer/metrics.hpp"
#include "resformer/model.hpp"
#include "resformer/optim.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace resformer {

/// Which outputs are trained. Single-task runs skip the other head entirely.
enum class Task { Both, Classification, Segmentation };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct TrainConfig {
    ModelConfig model;
    int batch_size = 8;
    double lr = 0.003;
    int epochs = 100;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double weight_decay = 1e-4;
    double eps = 1e-8;
    std::uint64_t seed = 0;
    double lambda_cls = 0.25;
    double lambda_seg = 1.0;
    Task task = Task::Both;
    bool augment = true;
    // Inverse-frequency class weights from the training labels; uniform otherwise.
    bool class_weighting = true;
    std::string precision = "float32";
    std::string checkpoint_dir;  // empty: no files written
    std::string train_dir;
    std::string val_dir;  // empty: validate on the training split

    void validate() const;
    AdamWConfig optimizer() const { return {lr, beta1, beta2, eps, weight_decay}; }
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Sets one field by its JSON name ("lr", "model.variant", ...). The value is
/// parsed as JSON when possible and taken as a string otherwise.
void apply_override(TrainConfig& c, const std::string& key, const std::string& value);
/// Every overridable key, nested model keys as "model.<name>".
std::vector<std::string> config_keys();

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    std::optional<double> micro_accuracy;
    double mean_dsc = 0;
    bool improved = false;
};

std::string format_epoch(const EpochRecord& r, int epochs);
nlohmann::json epoch_json(const EpochRecord& r);

struct Evaluation {
    double loss = 0;  // mean task loss per sample
    ConfusionCounts confusion;
    MicroMetrics micro;
    SegOverlapMetrics seg;
    std::map<std::string, double> report;
    // Filled when predictions are kept: sigmoid scores [n] and argmax masks per sample.
    std::vector<std::vector<double>> cls_probs;
    std::vector<cv::Mat> pred_masks;
};

struct EvalOptions {
    int batch_size = 8;
    Task task = Task::Both;
    LossWeights weights;
    bool keep_predictions = false;
    // Average per-image DSC/JI instead of pooling pixel counts.
    bool per_image = false;
};

/// Eval-mode pass over `samples` (already at model input size).
template <typename S>
Evaluation evaluate_samples(MtlModel<S>& model, const std::vector<Sample>& samples, const EvalOptions& opt);

/// Task-restricted loss on one batch; unused terms stay undefined.
template <typename S>
LossTerms<S> task_loss(MtlModel<S>& model, const Batch<S>& batch, Task task, const LossWeights& w, Mode mode);

/// Parameters the optimizer updates for `task`.
template <typename S>
std::vector<NamedParameter<S>> trainable_parameters(MtlModel<S>& model, Task task);

struct TrainSummary {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_val_loss = 0;
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
};

/// Model initialized from cfg.seed.
template <typename S>
MtlModel<S> make_model(const TrainConfig& cfg);

/// Trains `model` in place. Samples must already be at the model input size.
/// With a checkpoint directory, writes best.ckpt, last.ckpt and metrics.jsonl.
template <typename S>
TrainSummary train_model(MtlModel<S>& model, const TrainConfig& cfg, const std::vector<Sample>& train,
                         const std::vector<Sample>& val, std::ostream* log);

/// Loads the splits named in the config and trains at its precision.
TrainSummary run_training(const TrainConfig& cfg, std::ostream* log);

/// Loads a split, resizes it to the model input size.
std::vector<Sample> load_split(const std::filesystem::path& split_dir, const ModelConfig& model);

struct EvaluateOptions {
    int batch_size = 8;
    bool per_image = false;
    // Writes masks/<name>.png and cls_probs.csv when set.
    std::filesystem::path dump_dir;
};

Evaluation run_evaluation(const std::filesystem::path& checkpoint, const std::filesystem::path& split_dir,
                          const EvaluateOptions& opt);

struct Prediction {
    cv::Mat mask;                    // argmax label map at model input size
    std::vector<double> cls_probs;   // sigmoid score per class
    std::vector<float> pixel_probs;  // [n+1, H, W]
};

template <typename S>
Prediction predict_sample(MtlModel<S>& model, const cv::Mat& image);

/// Writes <stem>_mask.png, <stem>_probs.csv and, if asked, <stem>_probs.npy into out_dir.
Prediction run_prediction(const std::filesystem::path& checkpoint, const std::filesystem::path& image_file,
                          const std::filesystem::path& out_dir, bool write_npy);

/// Minimal little-endian float32 .npy writer.
void write_npy(const std::filesystem::path& file, std::span<const float> values, const std::vector<Index>& shape);

}  // namespace resformer
