#include "resformer/data.hpp"

#include "resformer/heads.hpp"

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

namespace fs = std::filesystem;

namespace resformer {

namespace {

std::string join_lines(const std::string& head, const std::vector<std::string>& items) {
    std::string s = head;
    for (const auto& i : items) s += "\n  " + i;
    return s;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    return out;
}

}  // namespace

DatasetError::DatasetError(const std::string& what, std::vector<std::string> items)
    : std::runtime_error(join_lines(what, items)), items_(std::move(items)) {}

std::vector<int> labels_from_mask(const cv::Mat& mask, int n_classes) {
    std::vector<int> labels(static_cast<std::size_t>(n_classes), 0);
    for (int y = 0; y < mask.rows; ++y) {
        const auto* row = mask.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.cols; ++x)
            if (row[x] > 0 && row[x] <= n_classes) labels[row[x] - 1] = 1;
    }
    return labels;
}

std::string consistency_problem(const Sample& s, int n_classes) {
    if (s.mask.type() != CV_8UC1) return "mask is not single-channel 8-bit";
    if (s.image.rows != s.mask.rows || s.image.cols != s.mask.cols) return "image and mask sizes differ";
    if (static_cast<int>(s.labels.size()) != n_classes) return "label row has " + std::to_string(s.labels.size()) + " entries";
    double lo = 0, hi = 0;
    cv::minMaxLoc(s.mask, &lo, &hi);
    if (hi > n_classes) return "mask contains label " + std::to_string(static_cast<int>(hi)) + " > " + std::to_string(n_classes);
    const auto derived = labels_from_mask(s.mask, n_classes);
    for (int c = 0; c < n_classes; ++c)
        if (derived[static_cast<std::size_t>(c)] != s.labels[static_cast<std::size_t>(c)])
            return "label for class " + std::to_string(c + 1) + " is " + std::to_string(s.labels[static_cast<std::size_t>(c)]) +
                   " but the mask says " + std::to_string(derived[static_cast<std::size_t>(c)]);
    return {};
}

// ---------------------------------------------------------------- file I/O

cv::Mat read_image(const fs::path& file) {
    cv::Mat bgr = cv::imread(file.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) throw std::runtime_error("cannot decode image " + file.string());
    cv::Mat rgb, out;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    rgb.convertTo(out, CV_32FC3, 1.0 / 255.0);
    return out;
}

namespace {
void write_image(const cv::Mat& image, const fs::path& file) {
    cv::Mat u8, bgr;
    image.convertTo(u8, CV_8UC3, 255.0);
    cv::cvtColor(u8, bgr, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(file.string(), bgr)) throw std::runtime_error("cannot write " + file.string());
}
}  // namespace

void write_mask(const cv::Mat& mask, const fs::path& file) {
    if (mask.type() != CV_8UC1) throw std::invalid_argument("mask must be CV_8UC1");
    if (!cv::imwrite(file.string(), mask)) throw std::runtime_error("cannot write " + file.string());
}

cv::Mat read_mask(const fs::path& file) {
    cv::Mat m = cv::imread(file.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw std::runtime_error("cannot decode mask " + file.string());
    if (m.type() != CV_8UC1) throw std::runtime_error("mask " + file.string() + " is not a single-channel 8-bit PNG");
    return m;
}

DatasetManifest read_manifest(const fs::path& split_dir) {
    const fs::path manifest_file = split_dir / "manifest.json";
    std::ifstream in(manifest_file);
    if (!in) throw DatasetError("cannot open manifest", {manifest_file.string()});
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DatasetError("malformed manifest", {manifest_file.string() + ": " + e.what()});
    }
    DatasetManifest m;
    m.root = split_dir;
    m.split = j.value("split", "");
    m.n_classes = j.at("n_classes").get<int>();
    for (const auto& e : j.at("entries")) m.entries.push_back({e.at("image").get<std::string>(), e.at("mask").get<std::string>(), {}});

    const fs::path csv_file = split_dir / "labels.csv";
    std::ifstream csv(csv_file);
    if (!csv) throw DatasetError("cannot open label table", {csv_file.string()});
    std::map<std::string, std::vector<int>> rows;
    std::vector<std::string> problems;
    std::string line;
    std::getline(csv, line);  // header
    int line_no = 1;
    while (std::getline(csv, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (static_cast<int>(cells.size()) != m.n_classes + 1) {
            problems.push_back("labels.csv line " + std::to_string(line_no) + ": expected " + std::to_string(m.n_classes + 1) +
                               " columns");
            continue;
        }
        std::vector<int> labels;
        for (std::size_t c = 1; c < cells.size(); ++c) {
            if (cells[c] != "0" && cells[c] != "1")
                problems.push_back("labels.csv line " + std::to_string(line_no) + ": label '" + cells[c] + "' is not 0 or 1");
            labels.push_back(cells[c] == "1" ? 1 : 0);
        }
        rows[cells[0]] = std::move(labels);
    }
    for (auto& e : m.entries) {
        const std::string key = fs::path(e.image).filename().string();
        auto it = rows.find(key);
        if (it == rows.end())
            problems.push_back(e.image + ": no row in labels.csv");
        else
            e.labels = it->second;
    }
    if (!problems.empty()) throw DatasetError("invalid dataset at " + split_dir.string(), problems);
    return m;
}

std::vector<Sample> load_dataset(const DatasetManifest& manifest) {
    std::vector<Sample> samples;
    std::vector<std::string> problems;
    for (const auto& e : manifest.entries) {
        const fs::path image_file = manifest.root / e.image;
        const fs::path mask_file = manifest.root / e.mask;
        if (!fs::exists(image_file)) {
            problems.push_back(e.image + ": missing image file");
            continue;
        }
        if (!fs::exists(mask_file)) {
            problems.push_back(e.mask + ": missing mask file");
            continue;
        }
        try {
            Sample s;
            s.name = fs::path(e.image).stem().string();
            s.image = read_image(image_file);
            s.mask = read_mask(mask_file);
            s.labels = e.labels;
            if (auto p = consistency_problem(s, manifest.n_classes); !p.empty())
                problems.push_back(e.image + ": " + p);
            else
                samples.push_back(std::move(s));
        } catch (const std::exception& ex) {
            problems.push_back(e.image + ": " + ex.what());
        }
    }
    if (!problems.empty()) throw DatasetError("dataset " + manifest.root.string() + " failed to load", problems);
    return samples;
}

DatasetManifest write_dataset(const std::vector<Sample>& samples, const fs::path& split_dir, const std::string& split,
                              int n_classes) {
    fs::create_directories(split_dir / "images");
    fs::create_directories(split_dir / "masks");
    DatasetManifest m{split_dir, split, n_classes, {}};
    nlohmann::json entries = nlohmann::json::array();
    std::ofstream csv(split_dir / "labels.csv");
    csv << "filename";
    for (int c = 1; c <= n_classes; ++c) csv << ",class_" << c;
    csv << '\n';
    for (const auto& s : samples) {
        const std::string file = s.name + ".png";
        write_image(s.image, split_dir / "images" / file);
        write_mask(s.mask, split_dir / "masks" / file);
        m.entries.push_back({"images/" + file, "masks/" + file, s.labels});
        entries.push_back({{"image", "images/" + file}, {"mask", "masks/" + file}});
        csv << file;
        for (int l : s.labels) csv << ',' << l;
        csv << '\n';
    }
    nlohmann::json j = {{"format", "resformer-dataset"}, {"version", 1}, {"split", split}, {"n_classes", n_classes},
                        {"entries", entries}};
    std::ofstream(split_dir / "manifest.json") << j.dump(2) << '\n';
    return m;
}

// ---------------------------------------------------------------- transforms

Sample preprocess(const Sample& s, int height, int width) {
    if (height < 16 || width < 16 || height % 16 != 0 || width % 16 != 0)
        throw std::invalid_argument("target size must be a positive multiple of 16");
    Sample out;
    out.name = s.name;
    out.labels = s.labels;
    if (s.height() == height && s.width() == width) {
        out.image = s.image.clone();
        out.mask = s.mask.clone();
        return out;
    }
    cv::resize(s.image, out.image, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    cv::resize(s.mask, out.mask, cv::Size(width, height), 0, 0, cv::INTER_NEAREST);
    out.labels = labels_from_mask(out.mask, static_cast<int>(s.labels.size()));
    return out;
}

AugmentDraws draw_augmentation(Rng& rng) {
    AugmentDraws d;
    d.hflip = rng.bernoulli(0.5);
    d.vflip = rng.bernoulli(0.5);
    d.rotate = rng.bernoulli(0.5);
    d.angle_deg = rng.uniform(-kMaxRotationDeg, kMaxRotationDeg);
    return d;
}

Sample apply_augmentation(const Sample& s, const AugmentDraws& d, int n_classes) {
    Sample out;
    out.name = s.name;
    out.image = s.image.clone();
    out.mask = s.mask.clone();
    if (d.hflip) {
        cv::flip(out.image, out.image, 1);
        cv::flip(out.mask, out.mask, 1);
    }
    if (d.vflip) {
        cv::flip(out.image, out.image, 0);
        cv::flip(out.mask, out.mask, 0);
    }
    if (d.rotate && d.angle_deg != 0.0) {
        const cv::Point2f center(static_cast<float>(out.image.cols - 1) / 2.f, static_cast<float>(out.image.rows - 1) / 2.f);
        const cv::Mat rot = cv::getRotationMatrix2D(center, d.angle_deg, 1.0);
        cv::Mat img, msk;
        cv::warpAffine(out.image, img, rot, out.image.size(), cv::INTER_LINEAR, cv::BORDER_REPLICATE);
        cv::warpAffine(out.mask, msk, rot, out.mask.size(), cv::INTER_NEAREST, cv::BORDER_CONSTANT, cv::Scalar(0));
        cv::min(cv::max(img, 0.0), 1.0, out.image);
        out.mask = msk;
    }
    out.labels = labels_from_mask(out.mask, n_classes);
    return out;
}

Sample augment(const Sample& s, Rng& rng, int n_classes) { return apply_augmentation(s, draw_augmentation(rng), n_classes); }

// ---------------------------------------------------------------- synthetic data

Index rasterize_ellipse(cv::Mat& mask, double cx, double cy, double a, double b, double theta, std::uint8_t label) {
    const double c = std::cos(theta), s = std::sin(theta);
    Index painted = 0;
    for (int y = 0; y < mask.rows; ++y) {
        auto* row = mask.ptr<std::uint8_t>(y);
        for (int x = 0; x < mask.cols; ++x) {
            const double dx = x - cx, dy = y - cy;
            const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
            if (u * u + v * v <= 1.0) {
                row[x] = label;
                ++painted;
            }
        }
    }
    return painted;
}

namespace {

// Mean colour per class; class 0 is unused.
constexpr float kClassColour[4][3] = {{0, 0, 0}, {0.90f, 0.30f, 0.30f}, {0.30f, 0.85f, 0.35f}, {0.35f, 0.40f, 0.95f}};

float class_texture(int cls, int x, int y) {
    switch (cls) {
        case 2: return 0.08f * static_cast<float>(std::sin(0.9 * (x + y)));
        case 3: return ((x / 3 + y / 3) % 2) ? 0.06f : -0.06f;
        default: return 0.f;
    }
}

}  // namespace

Sample synth_sample(Rng& rng, int height, int width, int n_classes, std::span<const int> classes) {
    if (n_classes < 1 || n_classes > 3) throw std::invalid_argument("synthetic data supports 1..3 classes");
    // Low-frequency background: coarse random grid upsampled bilinearly.
    const int gh = std::max(2, height / 8 + 1), gw = std::max(2, width / 8 + 1);
    cv::Mat coarse(gh, gw, CV_32FC3);
    for (int y = 0; y < gh; ++y)
        for (int x = 0; x < gw; ++x) {
            const float base = static_cast<float>(rng.uniform(0.25, 0.45));
            coarse.at<cv::Vec3f>(y, x) = cv::Vec3f(base, base * 0.95f, base * 0.9f);
        }
    Sample s;
    cv::resize(coarse, s.image, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
    s.mask = cv::Mat::zeros(height, width, CV_8UC1);
    const double side = std::min(height, width);
    for (int cls : classes) {
        if (cls < 1 || cls > n_classes) throw std::invalid_argument("class index out of range");
        const double a = rng.uniform(0.12, 0.25) * side, b = rng.uniform(0.12, 0.25) * side;
        const double cx = rng.uniform(0.25, 0.75) * (width - 1), cy = rng.uniform(0.25, 0.75) * (height - 1);
        rasterize_ellipse(s.mask, cx, cy, a, b, rng.uniform(0.0, std::numbers::pi), static_cast<std::uint8_t>(cls));
    }
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            auto& px = s.image.at<cv::Vec3f>(y, x);
            const int cls = s.mask.at<std::uint8_t>(y, x);
            if (cls > 0)
                for (int ch = 0; ch < 3; ++ch) px[ch] = kClassColour[cls][ch] + class_texture(cls, x, y);
            for (int ch = 0; ch < 3; ++ch) px[ch] += static_cast<float>(0.02 * rng.normal());
        }
    // Quantize through the same conversions as write/read so the in-memory
    // sample equals its PNG bit for bit.
    cv::Mat u8;
    s.image.convertTo(u8, CV_8UC3, 255.0);
    u8.convertTo(s.image, CV_32FC3, 1.0 / 255.0);
    s.labels = labels_from_mask(s.mask, n_classes);
    return s;
}

std::vector<Sample> synth_generate(const Rng& rng, int count, int height, int width, int n_classes) {
    std::vector<Sample> out;
    out.reserve(static_cast<std::size_t>(std::max(count, 0)));
    for (int i = 0; i < count; ++i) {
        Rng r = rng.split(static_cast<std::uint64_t>(i));
        std::vector<int> classes;
        for (int c = 1; c <= n_classes; ++c)
            if (r.bernoulli(0.5)) classes.push_back(c);
        Sample s = synth_sample(r, height, width, n_classes, classes);
        char name[32];
        std::snprintf(name, sizeof name, "%05d", i);
        s.name = name;
        out.push_back(std::move(s));
    }
    return out;
}

template <typename S>
Batch<S> make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices, int n_classes) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty batch");
    const int H = samples[indices[0]].height(), W = samples[indices[0]].width();
    const Index B = static_cast<Index>(indices.size());
    Batch<S> batch;
    batch.images = Tensor<S>(Shape{B, 3, H, W});
    batch.cls_labels = Tensor<S>(Shape{B, n_classes});
    batch.masks.resize(static_cast<std::size_t>(B * H * W));
    auto img = batch.images.mutable_values();
    auto lab = batch.cls_labels.mutable_values();
    for (Index b = 0; b < B; ++b) {
        const Sample& s = samples[indices[static_cast<std::size_t>(b)]];
        if (s.height() != H || s.width() != W) throw std::invalid_argument("make_batch: samples differ in size");
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const auto& px = s.image.at<cv::Vec3f>(y, x);
                for (int c = 0; c < 3; ++c) img[static_cast<std::size_t>(((b * 3 + c) * H + y) * W + x)] = S(px[c]);
                batch.masks[static_cast<std::size_t>((b * H + y) * W + x)] = s.mask.at<std::uint8_t>(y, x);
            }
        for (int c = 0; c < n_classes; ++c) lab[static_cast<std::size_t>(b * n_classes + c)] = S(s.labels[static_cast<std::size_t>(c)]);
    }
    batch.seg_onehot = one_hot<S>(batch.masks, B, H, W, n_classes + 1);
    return batch;
}

template Batch<float> make_batch<float>(const std::vector<Sample>&, std::span<const std::size_t>, int);
template Batch<double> make_batch<double>(const std::vector<Sample>&, std::span<const std::size_t>, int);

}  // namespace resformer
