#include "resformer/trainer.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace resformer;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir = fs::temp_directory_path() / (std::string("resformer_") + info->test_suite_name() + "_" + info->name());
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }
    fs::path dir;
};

TrainConfig tiny_run() {
    TrainConfig c;
    c.model = ModelConfig::tiny();
    c.batch_size = 4;
    c.epochs = 2;
    return c;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename S>
ParameterCollector<S> collect(MtlModel<S>& m) {
    ParameterCollector<S> c;
    m.visit(c, "");
    return c;
}

template <typename S>
bool same_state(MtlModel<S>& a, MtlModel<S>& b) {
    auto ca = collect(a), cb = collect(b);
    if (ca.params.size() != cb.params.size() || ca.buffers.size() != cb.buffers.size()) return false;
    for (std::size_t i = 0; i < ca.params.size(); ++i) {
        const auto va = ca.params[i].tensor.values(), vb = cb.params[i].tensor.values();
        if (ca.params[i].name != cb.params[i].name || !std::equal(va.begin(), va.end(), vb.begin(), vb.end())) return false;
    }
    for (std::size_t i = 0; i < ca.buffers.size(); ++i)
        if (*ca.buffers[i].values != *cb.buffers[i].values) return false;
    return true;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(RESFORMER_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

ClassCounts pooled(const ConfusionCounts& c) {
    ClassCounts t;
    for (const auto& k : c.classes) t += k;
    return t;
}

std::vector<double> vals(const Tensor<double>& t) { return {t.values().begin(), t.values().end()}; }

Parameter<double> scalar_param(double v) {
    Parameter<double> p(Shape{1}, v);
    p.set_requires_grad(true);
    return p;
}

std::vector<NamedParameter<double>> one(const Parameter<double>& p) { return {NamedParameter<double>{"p", p}}; }

}  // namespace

// ---------------------------------------------------------------- AdamW

TEST(AdamW, ZeroGradientWithoutDecayIsNoOp) {
    Rng rng(1);
    auto p = resformer::testing::random_leaf({3, 4}, rng);
    const auto before = vals(p);
    AdamW<double> opt(one(p), AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
    for (int i = 0; i < 5; ++i) opt.step();
    EXPECT_EQ(vals(p), before);
}

TEST(AdamW, MatchesScalarRecurrence) {
    const double lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.05;
    auto p = scalar_param(0.7);
    AdamW<double> opt(one(p), AdamWConfig{lr, b1, b2, eps, wd});
    const double grads[5] = {0.3, -1.2, 0.05, 2.0, -0.4};
    long double x = 0.7L, m = 0, v = 0;
    for (int t = 1; t <= 5; ++t) {
        p.mutable_grad()[0] = grads[t - 1];
        opt.step();
        opt.zero_grad();
        const long double g = grads[t - 1];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const long double mh = m / (1 - std::pow((long double)b1, t)), vh = v / (1 - std::pow((long double)b2, t));
        x = x - lr * (mh / (std::sqrt(vh) + eps) + wd * x);
        EXPECT_NEAR(p[0], static_cast<double>(x), 1e-10) << "step " << t;
    }
    EXPECT_EQ(opt.steps(), 5);
}

TEST(AdamW, DecayShrinksUnderZeroGradient) {
    auto p = scalar_param(2.0);
    AdamW<double> opt(one(p), AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.5});
    opt.step();
    EXPECT_DOUBLE_EQ(p[0], 2.0 - 0.1 * 0.5 * 2.0);
    opt.step();
    EXPECT_LT(p[0], 1.9);
    EXPECT_GT(p[0], 0.0);
}

TEST(AdamW, RejectsBadHyperparameters) {
    auto p = scalar_param(1.0);
    EXPECT_THROW(AdamW<double>(one(p), AdamWConfig{-1.0, 0.9, 0.999, 1e-8, 0.0}), std::invalid_argument);
    EXPECT_THROW(AdamW<double>(one(p), AdamWConfig{0.1, 1.0, 0.999, 1e-8, 0.0}), std::invalid_argument);
}

// ---------------------------------------------------------------- config

TEST(Config, JsonRoundTripAndOverrides) {
    TrainConfig c = tiny_run();
    apply_override(c, "lr", "0.001");
    apply_override(c, "model.variant", "parallel");
    apply_override(c, "task", "seg");
    apply_override(c, "checkpoint_dir", "123");
    apply_override(c, "augment", "false");
    EXPECT_EQ(c.lr, 0.001);
    EXPECT_EQ(c.model.variant, Variant::Parallel);
    EXPECT_EQ(c.task, Task::Segmentation);
    EXPECT_EQ(c.checkpoint_dir, "123");
    EXPECT_FALSE(c.augment);

    nlohmann::json j;
    to_json(j, c);
    nlohmann::json back;
    to_json(back, j.get<TrainConfig>());
    EXPECT_EQ(j, back);
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
    TrainConfig c;
    EXPECT_THROW(apply_override(c, "learning_rate", "0.1"), std::invalid_argument);
    EXPECT_THROW(apply_override(c, "model.depth", "3"), std::invalid_argument);
    EXPECT_THROW(apply_override(c, "task", "detect"), std::invalid_argument);
    EXPECT_THROW(apply_override(c, "batch_size", "\"four\""), std::invalid_argument);
    EXPECT_THROW(nlohmann::json::parse(R"({"epochs": 3, "momentum": 0.9})").get<TrainConfig>(), std::invalid_argument);
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    // Every advertised key accepts its own current value.
    c = TrainConfig{};
    nlohmann::json j;
    to_json(j, c);
    for (const auto& k : config_keys()) {
        const auto& v = k.rfind("model.", 0) == 0 ? j["model"][k.substr(6)] : j[k];
        EXPECT_NO_THROW(apply_override(c, k, v.is_string() ? v.get<std::string>() : v.dump())) << k;
    }
}

// ---------------------------------------------------------------- task selection

TEST(TaskLoss, ZeroClassificationWeightGivesZeroHeadGradient) {
    TrainConfig cfg = tiny_run();
    auto model = make_model<double>(cfg);
    const auto samples = synth_generate(Rng(2), 2, 32, 32, 2);
    const std::size_t idx[2] = {0, 1};
    const auto batch = make_batch<double>(samples, idx, 2);
    LossWeights w;
    w.lambda_cls = 0.0;
    const auto terms = task_loss(model, batch, Task::Both, w, Mode::Train);
    backward(terms.total);
    double cls_grad = 0, seg_grad = 0;
    for (auto& p : parameters_of<double>(model)) {
        double s = 0;
        for (double g : p.tensor.grad()) s += std::abs(g);
        (p.name.rfind("cls_head.", 0) == 0 ? cls_grad : seg_grad) += s;
    }
    EXPECT_EQ(cls_grad, 0.0);
    EXPECT_GT(seg_grad, 0.0);
}

TEST(TaskLoss, SingleTaskSelectsParameters) {
    TrainConfig cfg = tiny_run();
    auto model = make_model<float>(cfg);
    const auto all = parameters_of<float>(model);
    const auto cls = trainable_parameters(model, Task::Classification);
    const auto seg = trainable_parameters(model, Task::Segmentation);
    EXPECT_EQ(trainable_parameters(model, Task::Both).size(), all.size());
    for (const auto& p : cls) EXPECT_TRUE(p.name.rfind("decoder.", 0) != 0 && p.name.rfind("seg_head.", 0) != 0) << p.name;
    for (const auto& p : seg) EXPECT_NE(p.name.rfind("cls_head.", 0), 0u) << p.name;
    EXPECT_EQ(seg.size() + 4, all.size());
    EXPECT_LT(cls.size(), all.size());
}

// ---------------------------------------------------------------- checkpoints

using Checkpoint = TempDir;

TEST_F(Checkpoint, RoundTripRestoresEverything) {
    TrainConfig cfg = tiny_run();
    cfg.epochs = 1;
    cfg.checkpoint_dir = (dir / "run").string();
    const auto data = synth_generate(Rng(3), 8, 32, 32, 2);
    auto model = make_model<float>(cfg);
    const auto summary = train_model(model, cfg, data, {}, nullptr);
    ASSERT_TRUE(fs::exists(summary.last_checkpoint));

    TrainConfig other = cfg;
    other.seed = 99;
    auto restored = make_model<float>(other);
    EXPECT_FALSE(same_state(model, restored));
    AdamW<float> opt(trainable_parameters(restored, cfg.task), cfg.optimizer());
    const auto meta = load_checkpoint(summary.last_checkpoint, restored, &opt);
    EXPECT_EQ(meta.epoch, 1);
    EXPECT_EQ(meta.dtype, "float32");
    EXPECT_EQ(meta.train_config.get<TrainConfig>().seed, cfg.seed);
    EXPECT_TRUE(same_state(model, restored));
    EXPECT_EQ(opt.steps(), 2);

    const Evaluation a = evaluate_samples(model, data, {});
    const Evaluation b = evaluate_samples(restored, data, {});
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.report, b.report);

    // Saving the restored state reproduces the file byte for byte.
    save_checkpoint(dir / "again.ckpt", restored, &opt, meta);
    EXPECT_TRUE(file_bytes(dir / "again.ckpt") == file_bytes(summary.last_checkpoint));
}

TEST_F(Checkpoint, ShapeMismatchAndCorruptionAreReported) {
    TrainConfig cfg = tiny_run();
    auto model = make_model<float>(cfg);
    save_checkpoint<float>(dir / "m.ckpt", model, nullptr, CheckpointMeta{cfg.model, 0, 0.0, "float32", nlohmann::json()});
    TrainConfig wide = cfg;
    wide.model.cls_hidden = 16;
    auto other = make_model<float>(wide);
    EXPECT_THROW(load_checkpoint(dir / "m.ckpt", other), CheckpointError);

    auto bytes = file_bytes(dir / "m.ckpt");
    std::ofstream(dir / "cut.ckpt", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
    EXPECT_THROW(load_checkpoint(dir / "cut.ckpt", model), CheckpointError);
    std::ofstream(dir / "junk.ckpt", std::ios::binary) << "not a checkpoint";
    EXPECT_THROW(read_checkpoint_meta(dir / "junk.ckpt"), CheckpointError);
}

TEST_F(Checkpoint, DoubleCheckpointLoadsIntoFloat) {
    TrainConfig cfg = tiny_run();
    auto d = make_model<double>(cfg);
    save_checkpoint<double>(dir / "d.ckpt", d, nullptr, CheckpointMeta{cfg.model, 0, 0.0, "float64", nlohmann::json()});
    auto f = make_model<float>(cfg);
    load_checkpoint(dir / "d.ckpt", f);
    auto pd = parameters_of<double>(d);
    auto pf = parameters_of<float>(f);
    ASSERT_EQ(pd.size(), pf.size());
    for (std::size_t i = 0; i < pd.size(); ++i)
        for (Index k = 0; k < pd[i].tensor.numel(); ++k) ASSERT_EQ(pf[i].tensor[k], static_cast<float>(pd[i].tensor[k]));
}

// ---------------------------------------------------------------- evaluation

TEST(Evaluation, IsRepeatable) {
    TrainConfig cfg = tiny_run();
    auto model = make_model<float>(cfg);
    const auto data = synth_generate(Rng(4), 6, 32, 32, 2);
    EvalOptions opt;
    opt.batch_size = 4;
    const Evaluation a = evaluate_samples(model, data, opt);
    const Evaluation b = evaluate_samples(model, data, opt);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.report, b.report);
    // Batching does not change per-sample results in eval mode.
    opt.batch_size = 1;
    const Evaluation c = evaluate_samples(model, data, opt);
    EXPECT_NEAR(a.loss, c.loss, 1e-5);
    EXPECT_EQ(a.confusion, c.confusion);
}

TEST(Evaluation, AllNegativeModelHasZeroSensitivity) {
    TrainConfig cfg = tiny_run();
    auto model = make_model<float>(cfg);
    for (auto& p : parameters_of<float>(model)) {
        if (p.name.rfind("cls_head.fc2", 0) == 0 || p.name.rfind("seg_head.", 0) == 0)
            for (float& v : p.tensor.mutable_values()) v = 0.0f;
        if (p.name == "cls_head.fc2.bias")
            for (float& v : p.tensor.mutable_values()) v = -10.0f;
        if (p.name == "seg_head.conv.bias") p.tensor.mutable_values()[0] = 10.0f;
    }
    const auto data = synth_generate(Rng(5), 6, 32, 32, 2);
    const Evaluation ev = evaluate_samples(model, data, {});
    ASSERT_TRUE(ev.micro.sensitivity.has_value());
    EXPECT_EQ(*ev.micro.sensitivity, 0.0);
    EXPECT_EQ(*ev.micro.specificity, 1.0);
    EXPECT_EQ(pooled(ev.confusion).tp + pooled(ev.confusion).fp, 0);
    for (double d : ev.seg.dsc) EXPECT_EQ(d, 0.0);
}

using Dump = TempDir;

TEST_F(Dump, DumpedPredictionsReproduceReport) {
    TrainConfig cfg = tiny_run();
    cfg.epochs = 3;
    cfg.augment = false;
    cfg.checkpoint_dir = (dir / "run").string();
    const auto data = synth_generate(Rng(6), 8, 32, 32, 2);
    write_dataset(data, dir / "val", "val", 2);
    auto model = make_model<float>(cfg);
    const auto summary = train_model(model, cfg, data, {}, nullptr);

    EvaluateOptions opt;
    opt.dump_dir = dir / "dump";
    const Evaluation ev = run_evaluation(summary.last_checkpoint, dir / "val", opt);

    // Recompute pooled overlap and micro counts from the files alone.
    std::vector<std::int64_t> inter(2, 0), gt(2, 0), pr(2, 0);
    std::ifstream csv(dir / "dump" / "cls_probs.csv");
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, "filename,class_1,class_2");
    std::int64_t tp = 0, tn = 0, fp = 0, fn = 0;
    for (const auto& s : data) {
        const cv::Mat pred = read_mask(dir / "dump" / "masks" / (s.name + ".png"));
        for (int r = 0; r < pred.rows; ++r)
            for (int c = 0; c < pred.cols; ++c) {
                const int g = s.mask.at<std::uint8_t>(r, c), p = pred.at<std::uint8_t>(r, c);
                if (g > 0) ++gt[g - 1];
                if (p > 0) ++pr[p - 1];
                if (g > 0 && g == p) ++inter[g - 1];
            }
        ASSERT_TRUE(std::getline(csv, line));
        std::stringstream row(line);
        std::string cell;
        std::getline(row, cell, ',');
        EXPECT_EQ(cell, s.name + ".png");
        for (int k = 0; k < 2; ++k) {
            std::getline(row, cell, ',');
            const bool pos = std::stod(cell) >= 0.5, y = s.labels[static_cast<std::size_t>(k)] == 1;
            (pos ? (y ? tp : fp) : (y ? fn : tn)) += 1;
        }
    }
    for (int k = 0; k < 2; ++k) {
        const double expect = gt[k] + pr[k] == 0 ? 1.0 : 2.0 * double(inter[k]) / double(gt[k] + pr[k]);
        EXPECT_DOUBLE_EQ(ev.report.at("dsc_class" + std::to_string(k + 1)), expect);
    }
    EXPECT_DOUBLE_EQ(ev.report.at("micro_accuracy"), double(tp + tn) / double(tp + tn + fp + fn));
    EXPECT_EQ(pooled(ev.confusion).tp, tp);
    EXPECT_EQ(pooled(ev.confusion).fn, fn);
}

// ---------------------------------------------------------------- prediction

using Predict = TempDir;

TEST_F(Predict, NpyArgmaxMatchesMask) {
    TrainConfig cfg = tiny_run();
    auto model = make_model<float>(cfg);
    save_checkpoint<float>(dir / "m.ckpt", model, nullptr, CheckpointMeta{cfg.model, 0, 0.0, "float32", nlohmann::json()});
    const auto data = synth_generate(Rng(7), 1, 48, 40, 2);
    write_dataset(data, dir / "split", "test", 2);
    const fs::path image = dir / "split" / "images" / (data[0].name + ".png");

    const Prediction p = run_prediction(dir / "m.ckpt", image, dir / "out", true);
    const std::string stem = image.stem().string();
    const cv::Mat mask = read_mask(dir / "out" / (stem + "_mask.png"));
    EXPECT_EQ(mask.rows, 32);
    EXPECT_EQ(mask.cols, 32);
    double lo, hi;
    cv::minMaxLoc(mask, &lo, &hi);
    EXPECT_LE(hi, 2.0);

    const std::string npy = file_bytes(dir / "out" / (stem + "_probs.npy"));
    ASSERT_EQ(npy.substr(1, 5), "NUMPY");
    const std::size_t header_len = static_cast<unsigned char>(npy[8]) | (static_cast<unsigned char>(npy[9]) << 8);
    const std::string header = npy.substr(10, header_len);
    EXPECT_EQ((10 + header_len) % 64, 0u);
    EXPECT_NE(header.find("'shape': (3, 32, 32)"), std::string::npos) << header;
    ASSERT_EQ(npy.size(), 10 + header_len + 3 * 32 * 32 * sizeof(float));
    std::vector<float> probs(3 * 32 * 32);
    std::memcpy(probs.data(), npy.data() + 10 + header_len, probs.size() * sizeof(float));
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
            const std::size_t at = static_cast<std::size_t>(y * 32 + x);
            float sum = 0;
            int best = 0;
            for (int k = 0; k < 3; ++k) {
                sum += probs[k * 1024 + at];
                if (probs[k * 1024 + at] > probs[best * 1024 + at]) best = k;
            }
            EXPECT_NEAR(sum, 1.0f, 1e-5f);
            ASSERT_EQ(mask.at<std::uint8_t>(y, x), best) << y << "," << x;
        }
    EXPECT_EQ(p.cls_probs.size(), 2u);
    EXPECT_TRUE(fs::exists(dir / "out" / (stem + "_probs.csv")));
}

// ---------------------------------------------------------------- training

using Training = TempDir;

TEST_F(Training, SameSeedGivesIdenticalRuns) {
    const auto data = synth_generate(Rng(8), 6, 32, 32, 2);
    // Same output directory each time: the path is part of the stored config.
    auto run = [&](const std::string& keep, std::uint64_t seed) {
        TrainConfig cfg = tiny_run();
        cfg.seed = seed;
        cfg.checkpoint_dir = (dir / "run").string();
        auto model = make_model<float>(cfg);
        std::ostringstream log;
        train_model(model, cfg, data, {}, &log);
        fs::rename(dir / "run", dir / keep);
        return log.str();
    };
    const std::string a = run("a", 5), b = run("b", 5), c = run("c", 6);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    for (const char* f : {"last.ckpt", "best.ckpt", "metrics.jsonl"}) {
        EXPECT_TRUE(file_bytes(dir / "a" / f) == file_bytes(dir / "b" / f)) << f;
        EXPECT_FALSE(file_bytes(dir / "a" / f) == file_bytes(dir / "c" / f)) << f;
    }
}

TEST_F(Training, WritesArtifactsAndTracksBest) {
    TrainConfig cfg = tiny_run();
    cfg.epochs = 3;
    cfg.checkpoint_dir = (dir / "run").string();
    auto model = make_model<float>(cfg);
    const auto s = train_model(model, cfg, synth_generate(Rng(9), 4, 32, 32, 2), {}, nullptr);
    ASSERT_EQ(s.history.size(), 3u);
    double best = s.history[0].val_loss;
    for (const auto& r : s.history) best = std::min(best, r.val_loss);
    EXPECT_EQ(s.best_val_loss, best);
    EXPECT_EQ(s.history[static_cast<std::size_t>(s.best_epoch - 1)].val_loss, best);
    EXPECT_EQ(read_checkpoint_meta(s.best_checkpoint).epoch, s.best_epoch);
    std::ifstream metrics(dir / "run" / "metrics.jsonl");
    int lines = 0;
    for (std::string l; std::getline(metrics, l); ++lines) EXPECT_TRUE(nlohmann::json::parse(l).contains("mean_dsc"));
    EXPECT_EQ(lines, 3);
    EXPECT_TRUE(fs::exists(dir / "run" / "config.json"));
}

TEST(TrainingErrors, RejectsBadInputs) {
    TrainConfig cfg = tiny_run();
    auto model = make_model<float>(cfg);
    EXPECT_THROW(train_model(model, cfg, {}, {}, nullptr), TrainingError);
    EXPECT_THROW(train_model(model, cfg, synth_generate(Rng(1), 2, 48, 48, 2), {}, nullptr), TrainingError);
    auto poisoned = synth_generate(Rng(1), 4, 32, 32, 2);
    poisoned[2].image.at<cv::Vec3f>(5, 5)[1] = std::numeric_limits<float>::quiet_NaN();
    EXPECT_THROW(train_model(model, cfg, poisoned, {}, nullptr), TrainingError);
}

// ---------------------------------------------------------------- command line

using Cli = TempDir;

TEST_F(Cli, ExitCodes) {
    const std::string d = dir.string();
    EXPECT_EQ(run_cli("synth --out " + d + "/train --count 4 --size 32 --seed 1"), 0);
    EXPECT_EQ(run_cli("train --model.channels '[8,16,32,64]' --model.heads '[1,2,4,8]' --model.window_size 4 "
                      "--model.decoder_channels '[32,16,8]' --model.cls_hidden 32 --model.input_height 32 "
                      "--model.input_width 32 --model.n_classes 2 --epochs 1 --batch_size 4 --train_dir " + d + "/train --checkpoint_dir " + d + "/run"),
              0);
    EXPECT_EQ(run_cli("evaluate --checkpoint " + d + "/run/last.ckpt --data " + d + "/train --output " + d + "/r.json"), 0);
    EXPECT_TRUE(nlohmann::json::parse(std::ifstream(dir / "r.json")).contains("mean_ji"));
    EXPECT_EQ(run_cli("predict --checkpoint " + d + "/run/last.ckpt --image " + d + "/train/images/00000.png --out_dir " + d +
                      "/pred"),
              0);
    EXPECT_TRUE(fs::exists(dir / "pred" / "00000_mask.png"));

    EXPECT_NE(run_cli(""), 0);
    EXPECT_NE(run_cli("train --no_such_flag 1"), 0);
    EXPECT_EQ(run_cli("train --train_dir " + d + "/missing --epochs 1"), 1);
    EXPECT_EQ(run_cli("train --lr -1 --train_dir " + d + "/train"), 1);
    EXPECT_NE(run_cli("evaluate --checkpoint " + d + "/none.ckpt --data " + d + "/train"), 0);
    std::ofstream(dir / "bad.ckpt") << "garbage";
    EXPECT_EQ(run_cli("evaluate --checkpoint " + d + "/bad.ckpt --data " + d + "/train"), 1);
}
