#include "resformer/trainer.hpp"

#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

namespace fs = std::filesystem;

namespace resformer {

std::string to_string(Task t) {
    switch (t) {
        case Task::Classification: return "cls";
        case Task::Segmentation: return "seg";
        default: return "both";
    }
}

Task task_from_string(const std::string& s) {
    if (s == "both") return Task::Both;
    if (s == "cls") return Task::Classification;
    if (s == "seg") return Task::Segmentation;
    throw std::invalid_argument("unknown task '" + s + "' (expected both, cls or seg)");
}

void TrainConfig::validate() const {
    model.validate();
    optimizer().validate();
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (lambda_cls < 0 || lambda_seg < 0) throw std::invalid_argument("loss weights must be >= 0");
    if (precision != "float32" && precision != "float64") throw std::invalid_argument("precision must be float32 or float64");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"model", c.model},
                       {"batch_size", c.batch_size},
                       {"lr", c.lr},
                       {"epochs", c.epochs},
                       {"beta1", c.beta1},
                       {"beta2", c.beta2},
                       {"weight_decay", c.weight_decay},
                       {"eps", c.eps},
                       {"seed", c.seed},
                       {"lambda_cls", c.lambda_cls},
                       {"lambda_seg", c.lambda_seg},
                       {"task", to_string(c.task)},
                       {"augment", c.augment},
                       {"class_weighting", c.class_weighting},
                       {"precision", c.precision},
                       {"checkpoint_dir", c.checkpoint_dir},
                       {"train_dir", c.train_dir},
                       {"val_dir", c.val_dir}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    const TrainConfig d;
    nlohmann::json known;
    to_json(known, d);
    for (const auto& [key, _] : j.items())
        if (!known.contains(key)) throw std::invalid_argument("unknown config key '" + key + "'");
    c.model = j.contains("model") ? j.at("model").get<ModelConfig>() : d.model;
    c.batch_size = j.value("batch_size", d.batch_size);
    c.lr = j.value("lr", d.lr);
    c.epochs = j.value("epochs", d.epochs);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    c.eps = j.value("eps", d.eps);
    c.seed = j.value("seed", d.seed);
    c.lambda_cls = j.value("lambda_cls", d.lambda_cls);
    c.lambda_seg = j.value("lambda_seg", d.lambda_seg);
    c.task = task_from_string(j.value("task", to_string(d.task)));
    c.augment = j.value("augment", d.augment);
    c.class_weighting = j.value("class_weighting", d.class_weighting);
    c.precision = j.value("precision", d.precision);
    c.checkpoint_dir = j.value("checkpoint_dir", d.checkpoint_dir);
    c.train_dir = j.value("train_dir", d.train_dir);
    c.val_dir = j.value("val_dir", d.val_dir);
}

std::vector<std::string> config_keys() {
    nlohmann::json j;
    to_json(j, TrainConfig{});
    std::vector<std::string> keys;
    for (const auto& [key, value] : j.items()) {
        if (key == "model")
            for (const auto& [mk, _] : value.items()) keys.push_back("model." + mk);
        else
            keys.push_back(key);
    }
    return keys;
}

void apply_override(TrainConfig& c, const std::string& key, const std::string& value) {
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
        parsed = value;
    }
    nlohmann::json j;
    to_json(j, c);
    nlohmann::json* slot = &j;
    std::string leaf = key;
    if (key.rfind("model.", 0) == 0) {
        slot = &j["model"];
        leaf = key.substr(6);
    }
    if (!slot->contains(leaf)) throw std::invalid_argument("unknown config key '" + key + "'");
    // Path-like fields are strings even if the text happens to parse as JSON.
    if ((*slot)[leaf].is_string()) parsed = value;
    (*slot)[leaf] = parsed;
    try {
        c = j.get<TrainConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("bad value '" + value + "' for " + key + ": " + e.what());
    }
}

std::string format_epoch(const EpochRecord& r, int epochs) {
    char buf[256];
    char acc[32] = "n/a";
    if (r.micro_accuracy) std::snprintf(acc, sizeof acc, "%.4f", *r.micro_accuracy);
    std::snprintf(buf, sizeof buf, "epoch %d/%d train_loss=%.6f val_loss=%.6f micro_acc=%s mean_dsc=%.4f%s", r.epoch, epochs,
                  r.train_loss, r.val_loss, acc, r.mean_dsc, r.improved ? " *" : "");
    return buf;
}

nlohmann::json epoch_json(const EpochRecord& r) {
    return {{"epoch", r.epoch},
            {"train_loss", r.train_loss},
            {"val_loss", r.val_loss},
            {"micro_accuracy", r.micro_accuracy ? nlohmann::json(*r.micro_accuracy) : nlohmann::json()},
            {"mean_dsc", r.mean_dsc},
            {"improved", r.improved}};
}

// ---------------------------------------------------------------- loss and evaluation

template <typename S>
LossTerms<S> task_loss(MtlModel<S>& model, const Batch<S>& batch, Task task, const LossWeights& w, Mode mode) {
    if (task == Task::Both) return combined_loss(model_forward(batch.images, model, mode), batch.cls_labels, batch.seg_onehot, w);
    const EncoderOutput<S> enc = encoder_forward(batch.images, model.encoder, model.config, mode);
    LossTerms<S> t;
    if (task == Task::Classification) {
        const Tensor<S> logits = classification_head(enc.features[2], enc.features[3], model.cls_head);
        t.classification = weighted_multilabel_loss(logits, batch.cls_labels, w.class_weights);
        t.total = scale(t.classification, S(w.lambda_cls));
    } else {
        const Tensor<S> probs = segmentation_head(decoder_forward(enc, model.decoder, mode), model.seg_head);
        t.segmentation = dice_loss(probs, batch.seg_onehot);
        t.total = scale(t.segmentation, S(w.lambda_seg));
    }
    return t;
}

template <typename S>
std::vector<NamedParameter<S>> trainable_parameters(MtlModel<S>& model, Task task) {
    std::vector<NamedParameter<S>> out;
    for (auto& p : parameters_of<S>(model)) {
        const bool seg_only = p.name.rfind("decoder.", 0) == 0 || p.name.rfind("seg_head.", 0) == 0;
        const bool cls_only = p.name.rfind("cls_head.", 0) == 0;
        if ((task == Task::Classification && seg_only) || (task == Task::Segmentation && cls_only)) continue;
        out.push_back(p);
    }
    return out;
}

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

template <typename S>
void argmax_masks(const Tensor<S>& probs, std::vector<cv::Mat>& out) {
    const Index B = probs.dim(0), K = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
    const auto p = probs.values();
    for (Index b = 0; b < B; ++b) {
        cv::Mat m(static_cast<int>(H), static_cast<int>(W), CV_8UC1);
        for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x) {
                Index best = 0;
                S best_v = p[static_cast<std::size_t>(((b * K) * H + y) * W + x)];
                for (Index k = 1; k < K; ++k) {
                    const S v = p[static_cast<std::size_t>(((b * K + k) * H + y) * W + x)];
                    if (v > best_v) {
                        best_v = v;
                        best = k;
                    }
                }
                m.at<std::uint8_t>(static_cast<int>(y), static_cast<int>(x)) = static_cast<std::uint8_t>(best);
            }
        out.push_back(std::move(m));
    }
}

std::span<const std::uint8_t> mask_span(const cv::Mat& m) {
    return {m.ptr<std::uint8_t>(), static_cast<std::size_t>(m.total())};
}

}  // namespace

template <typename S>
Evaluation evaluate_samples(MtlModel<S>& model, const std::vector<Sample>& samples, const EvalOptions& opt) {
    if (samples.empty()) throw std::invalid_argument("evaluation split is empty");
    NoGradGuard no_grad;
    const int n = static_cast<int>(model.config.n_classes);
    Evaluation ev;
    ev.confusion = ConfusionCounts(static_cast<std::size_t>(n));
    SegOverlapAccumulator acc(n, opt.per_image ? SegOverlapAccumulator::Aggregation::PerImage
                                                 : SegOverlapAccumulator::Aggregation::Pooled);
    double loss_sum = 0;
    const auto order = iota_indices(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(opt.batch_size)) {
        const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(opt.batch_size), samples.size() - start);
        const std::span<const std::size_t> idx(order.data() + start, count);
        const Batch<S> batch = make_batch<S>(samples, idx, n);
        const MtlOutput<S> out = model_forward(batch.images, model, Mode::Eval);

        LossTerms<S> terms;
        if (opt.task == Task::Both) {
            terms = combined_loss(out, batch.cls_labels, batch.seg_onehot, opt.weights);
        } else if (opt.task == Task::Classification) {
            terms.total = scale(weighted_multilabel_loss(out.cls_logits, batch.cls_labels, opt.weights.class_weights), S(opt.weights.lambda_cls));
        } else {
            terms.total = scale(dice_loss(out.seg_probs, batch.seg_onehot), S(opt.weights.lambda_seg));
        }
        loss_sum += static_cast<double>(terms.total.item()) * static_cast<double>(count);

        std::vector<double> scores;
        for (S z : out.cls_logits.values()) scores.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(z))));
        std::vector<int> labels;
        for (std::size_t i : idx) labels.insert(labels.end(), samples[i].labels.begin(), samples[i].labels.end());
        ev.confusion += confusion_from_predictions(scores, labels, static_cast<std::size_t>(n));

        std::vector<cv::Mat> masks;
        argmax_masks(out.seg_probs, masks);
        for (std::size_t b = 0; b < count; ++b) acc.add(mask_span(samples[idx[b]].mask), mask_span(masks[b]));
        if (opt.keep_predictions) {
            for (std::size_t b = 0; b < count; ++b)
                ev.cls_probs.emplace_back(scores.begin() + static_cast<std::ptrdiff_t>(b * n),
                                          scores.begin() + static_cast<std::ptrdiff_t>((b + 1) * n));
            for (auto& m : masks) ev.pred_masks.push_back(std::move(m));
        }
    }
    ev.loss = loss_sum / static_cast<double>(samples.size());
    ev.micro = classification_micro_metrics(ev.confusion);
    ev.seg = acc.result();
    ev.report = metrics_report(ev.micro, ev.seg);
    return ev;
}

// ---------------------------------------------------------------- training

template <typename S>
MtlModel<S> make_model(const TrainConfig& cfg) {
    cfg.model.validate();
    Rng rng(cfg.seed);
    return MtlModel<S>(cfg.model, rng);
}

namespace {

// Stream keys under the run seed; model init draws from the unsplit seed.
constexpr std::uint64_t kShuffleStream = 1;
constexpr std::uint64_t kAugmentStream = 2;

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    auto v = iota_indices(n);
    for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
    return v;
}

LossWeights loss_weights_for(const TrainConfig& cfg, const std::vector<Sample>& train) {
    LossWeights w;
    w.lambda_cls = cfg.lambda_cls;
    w.lambda_seg = cfg.lambda_seg;
    if (cfg.class_weighting) {
        std::vector<Index> positives(static_cast<std::size_t>(cfg.model.n_classes), 0);
        for (const auto& s : train)
            for (std::size_t c = 0; c < positives.size(); ++c) positives[c] += s.labels[c];
        w.class_weights = inverse_frequency_weights(positives, static_cast<Index>(train.size()));
    }
    return w;
}

}  // namespace

template <typename S>
TrainSummary train_model(MtlModel<S>& model, const TrainConfig& cfg, const std::vector<Sample>& train,
                         const std::vector<Sample>& val, std::ostream* log) {
    cfg.validate();
    if (train.empty()) throw TrainingError("training split is empty");
    const int n = static_cast<int>(cfg.model.n_classes);
    for (const auto& s : train)
        if (s.height() != cfg.model.input_height || s.width() != cfg.model.input_width)
            throw TrainingError("sample " + s.name + " is not at the model input size");
    const std::vector<Sample>& val_set = val.empty() ? train : val;
    const LossWeights weights = loss_weights_for(cfg, train);

    AdamW<S> optimizer(trainable_parameters(model, cfg.task), cfg.optimizer());
    const Rng root(cfg.seed);
    const Rng shuffle_root = root.split(kShuffleStream);
    const Rng augment_root = root.split(kAugmentStream);

    TrainSummary summary;
    summary.best_val_loss = std::numeric_limits<double>::infinity();
    const bool write = !cfg.checkpoint_dir.empty();
    const fs::path dir = cfg.checkpoint_dir;
    std::ofstream metrics;
    nlohmann::json snapshot;
    to_json(snapshot, cfg);
    if (write) {
        fs::create_directories(dir);
        metrics.open(dir / "metrics.jsonl", std::ios::trunc);
        std::ofstream(dir / "config.json") << snapshot.dump(2) << '\n';
    }

    EvalOptions eval_opt{cfg.batch_size, cfg.task, weights, false, false};
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng = shuffle_root.split(static_cast<std::uint64_t>(epoch));
        const Rng epoch_aug = augment_root.split(static_cast<std::uint64_t>(epoch));
        const auto order = shuffled(train.size(), shuffle_rng);

        double loss_sum = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - start);
            std::vector<Sample> picked;
            picked.reserve(count);
            for (std::size_t k = 0; k < count; ++k) {
                const std::size_t i = order[start + k];
                if (cfg.augment) {
                    Rng r = epoch_aug.split(i);
                    picked.push_back(augment(train[i], r, n));
                } else {
                    picked.push_back(train[i]);
                }
            }
            const auto idx = iota_indices(count);
            const Batch<S> batch = make_batch<S>(picked, idx, n);
            const LossTerms<S> terms = task_loss(model, batch, cfg.task, weights, Mode::Train);
            const double loss = static_cast<double>(terms.total.item());
            if (!std::isfinite(loss))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                                    std::to_string(start) + "; lower lr or check the data");
            backward(terms.total);
            optimizer.step();
            optimizer.zero_grad();
            loss_sum += loss * static_cast<double>(count);
        }

        const Evaluation ev = evaluate_samples(model, val_set, eval_opt);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train.size());
        rec.val_loss = ev.loss;
        rec.micro_accuracy = ev.micro.accuracy;
        rec.mean_dsc = ev.seg.mean_dsc;
        if (!std::isfinite(rec.val_loss)) throw TrainingError("non-finite validation loss at epoch " + std::to_string(epoch));
        rec.improved = rec.val_loss < summary.best_val_loss;
        if (rec.improved) {
            summary.best_val_loss = rec.val_loss;
            summary.best_epoch = epoch;
        }
        summary.history.push_back(rec);

        if (write) {
            const CheckpointMeta meta{cfg.model, epoch, summary.best_val_loss, dtype_name<S>(), snapshot};
            if (rec.improved) {
                summary.best_checkpoint = dir / "best.ckpt";
                save_checkpoint(summary.best_checkpoint, model, &optimizer, meta);
            }
            summary.last_checkpoint = dir / "last.ckpt";
            save_checkpoint(summary.last_checkpoint, model, &optimizer, meta);
            metrics << epoch_json(rec).dump() << '\n';
            metrics.flush();
        }
        if (log) *log << format_epoch(rec, cfg.epochs) << std::endl;
    }
    return summary;
}

std::vector<Sample> load_split(const fs::path& split_dir, const ModelConfig& model) {
    const DatasetManifest manifest = read_manifest(split_dir);
    if (manifest.n_classes != model.n_classes)
        throw DatasetError("class count mismatch", {split_dir.string() + " has " + std::to_string(manifest.n_classes) +
                                                    " classes, model expects " + std::to_string(model.n_classes)});
    std::vector<Sample> out;
    for (const auto& s : load_dataset(manifest))
        out.push_back(preprocess(s, static_cast<int>(model.input_height), static_cast<int>(model.input_width)));
    return out;
}

namespace {

template <typename S>
TrainSummary run_training_as(const TrainConfig& cfg, std::ostream* log) {
    if (cfg.train_dir.empty()) throw std::invalid_argument("train_dir is required");
    const auto train = load_split(cfg.train_dir, cfg.model);
    const auto val = cfg.val_dir.empty() ? std::vector<Sample>{} : load_split(cfg.val_dir, cfg.model);
    if (!cfg.val_dir.empty() && val.empty()) throw TrainingError("validation split " + cfg.val_dir + " is empty");
    MtlModel<S> model = make_model<S>(cfg);
    if (log)
        *log << "model: " << to_string(cfg.model.variant) << ", " << parameter_count<S>(model) << " parameters, "
             << dtype_name<S>() << "; train " << train.size() << " samples, val "
             << (val.empty() ? std::string("= train") : std::to_string(val.size())) << std::endl;
    return train_model(model, cfg, train, val, log);
}

template <typename S>
Evaluation run_evaluation_as(const fs::path& checkpoint, const CheckpointMeta& meta, const fs::path& split_dir,
                             const EvaluateOptions& opt) {
    Rng rng(0);
    MtlModel<S> model(meta.model, rng);
    load_checkpoint(checkpoint, model);
    const auto samples = load_split(split_dir, meta.model);
    EvalOptions eo;
    eo.batch_size = opt.batch_size;
    eo.keep_predictions = !opt.dump_dir.empty();
    eo.per_image = opt.per_image;
    if (meta.train_config.is_object()) {
        const TrainConfig tc = meta.train_config.get<TrainConfig>();
        eo.task = tc.task;
        eo.weights.lambda_cls = tc.lambda_cls;
        eo.weights.lambda_seg = tc.lambda_seg;
    }
    Evaluation ev = evaluate_samples(model, samples, eo);
    if (!opt.dump_dir.empty()) {
        fs::create_directories(opt.dump_dir / "masks");
        std::ofstream csv(opt.dump_dir / "cls_probs.csv");
        csv << "filename";
        for (Index c = 1; c <= meta.model.n_classes; ++c) csv << ",class_" << c;
        csv << '\n';
        char buf[32];
        for (std::size_t i = 0; i < samples.size(); ++i) {
            write_mask(ev.pred_masks[i], opt.dump_dir / "masks" / (samples[i].name + ".png"));
            csv << samples[i].name << ".png";
            for (double p : ev.cls_probs[i]) {
                std::snprintf(buf, sizeof buf, "%.17g", p);
                csv << ',' << buf;
            }
            csv << '\n';
        }
    }
    return ev;
}

}  // namespace

TrainSummary run_training(const TrainConfig& cfg, std::ostream* log) {
    cfg.validate();
    return cfg.precision == "float64" ? run_training_as<double>(cfg, log) : run_training_as<float>(cfg, log);
}

Evaluation run_evaluation(const fs::path& checkpoint, const fs::path& split_dir, const EvaluateOptions& opt) {
    const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
    return meta.dtype == "float64" ? run_evaluation_as<double>(checkpoint, meta, split_dir, opt)
                                   : run_evaluation_as<float>(checkpoint, meta, split_dir, opt);
}

// ---------------------------------------------------------------- prediction

template <typename S>
Prediction predict_sample(MtlModel<S>& model, const cv::Mat& image) {
    NoGradGuard no_grad;
    Sample s;
    s.image = image;
    s.mask = cv::Mat::zeros(image.rows, image.cols, CV_8UC1);
    s.labels.assign(static_cast<std::size_t>(model.config.n_classes), 0);
    const Sample resized = preprocess(s, static_cast<int>(model.config.input_height), static_cast<int>(model.config.input_width));
    const std::vector<Sample> one{resized};
    const std::size_t idx[1] = {0};
    const Batch<S> batch = make_batch<S>(one, idx, static_cast<int>(model.config.n_classes));
    const MtlOutput<S> out = model_forward(batch.images, model, Mode::Eval);
    Prediction p;
    for (S z : out.cls_logits.values()) p.cls_probs.push_back(1.0 / (1.0 + std::exp(-static_cast<double>(z))));
    for (S v : out.seg_probs.values()) p.pixel_probs.push_back(static_cast<float>(v));
    std::vector<cv::Mat> masks;
    argmax_masks(out.seg_probs, masks);
    p.mask = masks.front();
    return p;
}

namespace {
template <typename S>
Prediction predict_as(const fs::path& checkpoint, const CheckpointMeta& meta, const cv::Mat& image) {
    Rng rng(0);
    MtlModel<S> model(meta.model, rng);
    load_checkpoint(checkpoint, model);
    return predict_sample(model, image);
}
}  // namespace

void write_npy(const fs::path& file, std::span<const float> values, const std::vector<Index>& shape) {
    std::string dims;
    for (Index d : shape) dims += std::to_string(d) + ", ";
    if (shape.size() > 1) dims.erase(dims.size() - 2);
    else if (!shape.empty()) dims.pop_back();
    std::string header = "{'descr': '<f4', 'fortran_order': False, 'shape': (" + dims + "), }";
    // Magic (6) + version (2) + length (2) + header must be a multiple of 64.
    const std::size_t total = 10 + header.size() + 1;
    header.append((64 - total % 64) % 64, ' ');
    header += '\n';
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    const unsigned char magic[8] = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
    out.write(reinterpret_cast<const char*>(magic), 8);
    const std::uint16_t len = static_cast<std::uint16_t>(header.size());
    out.write(reinterpret_cast<const char*>(&len), 2);
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
}

Prediction run_prediction(const fs::path& checkpoint, const fs::path& image_file, const fs::path& out_dir, bool write_probs_npy) {
    const CheckpointMeta meta = read_checkpoint_meta(checkpoint);
    const cv::Mat image = read_image(image_file);
    Prediction p = meta.dtype == "float64" ? predict_as<double>(checkpoint, meta, image) : predict_as<float>(checkpoint, meta, image);
    fs::create_directories(out_dir);
    const std::string stem = image_file.stem().string();
    write_mask(p.mask, out_dir / (stem + "_mask.png"));
    std::ofstream csv(out_dir / (stem + "_probs.csv"));
    csv << "filename";
    for (std::size_t c = 1; c <= p.cls_probs.size(); ++c) csv << ",class_" << c;
    csv << '\n' << image_file.filename().string();
    char buf[32];
    for (double v : p.cls_probs) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        csv << ',' << buf;
    }
    csv << '\n';
    if (write_probs_npy)
        write_npy(out_dir / (stem + "_probs.npy"), p.pixel_probs,
                  {meta.model.n_classes + 1, meta.model.input_height, meta.model.input_width});
    return p;
}

#define RESFORMER_TRAINER_INSTANTIATE(S)                                                                              \
    template LossTerms<S> task_loss<S>(MtlModel<S>&, const Batch<S>&, Task, const LossWeights&, Mode);             \
    template std::vector<NamedParameter<S>> trainable_parameters<S>(MtlModel<S>&, Task);                           \
    template Evaluation evaluate_samples<S>(MtlModel<S>&, const std::vector<Sample>&, const EvalOptions&);         \
    template MtlModel<S> make_model<S>(const TrainConfig&);                                                        \
    template TrainSummary train_model<S>(MtlModel<S>&, const TrainConfig&, const std::vector<Sample>&,             \
                                         const std::vector<Sample>&, std::ostream*);                               \
    template Prediction predict_sample<S>(MtlModel<S>&, const cv::Mat&);

RESFORMER_TRAINER_INSTANTIATE(float)
RESFORMER_TRAINER_INSTANTIATE(double)

}  // namespace resformer
