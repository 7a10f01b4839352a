#pragma once

#include "resformer/rng.hpp"
#include "resformer/tensor.hpp"

#include <opencv2/core.hpp>

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace resformer {

/// One image with its segmentation mask and image-level labels.
struct Sample {
    std::string name;
    cv::Mat image;            // CV_32FC3, RGB, values in [0, 1]
    cv::Mat mask;             // CV_8UC1, 0 = background, 1..n = classes
    std::vector<int> labels;  // n binary entries

    int height() const { return image.rows; }
    int width() const { return image.cols; }
};

/// label[c-1] == 1 iff class c occupies at least one mask pixel.
std::vector<int> labels_from_mask(const cv::Mat& mask, int n_classes);

/// Empty when the sample is consistent, otherwise a description of the problem.
std::string consistency_problem(const Sample& s, int n_classes);

/// Raised by dataset I/O with one line per offending entry.
class DatasetError : public std::runtime_error {
public:
    DatasetError(const std::string& what, std::vector<std::string> items);
    const std::vector<std::string>& items() const { return items_; }

private:
    std::vector<std::string> items_;
};

struct ManifestEntry {
    std::string image;  // relative to the split root
    std::string mask;
    std::vector<int> labels;
};

/// A split directory: images/, masks/, labels.csv and manifest.json.
struct DatasetManifest {
    std::filesystem::path root;
    std::string split;
    int n_classes = 0;
    std::vector<ManifestEntry> entries;
};

/// Reads manifest.json and joins label rows from labels.csv by image filename.
DatasetManifest read_manifest(const std::filesystem::path& split_dir);
std::vector<Sample> load_dataset(const DatasetManifest& manifest);
/// Writes samples as 8-bit RGB / single-channel index PNGs plus labels.csv and manifest.json.
DatasetManifest write_dataset(const std::vector<Sample>& samples, const std::filesystem::path& split_dir,
                              const std::string& split, int n_classes);

cv::Mat read_image(const std::filesystem::path& file);
void write_mask(const cv::Mat& mask, const std::filesystem::path& file);
cv::Mat read_mask(const std::filesystem::path& file);

/// Bilinear image resize and nearest-neighbor mask resize.
Sample preprocess(const Sample& s, int height, int width);

struct AugmentDraws {
    bool hflip = false;
    bool vflip = false;
    bool rotate = false;
    double angle_deg = 0;
};

inline constexpr double kMaxRotationDeg = 15.0;

AugmentDraws draw_augmentation(Rng& rng);
/// Applies identical geometry to image and mask; labels are recomputed from the mask.
Sample apply_augmentation(const Sample& s, const AugmentDraws& draws, int n_classes);
Sample augment(const Sample& s, Rng& rng, int n_classes);

/// Paints an ellipse (semi-axes a, b, rotation theta) with `label`; returns the painted pixel count.
Index rasterize_ellipse(cv::Mat& mask, double cx, double cy, double a, double b, double theta, std::uint8_t label);

/// Smooth-noise background plus one ellipse per listed class (1-based).
Sample synth_sample(Rng& rng, int height, int width, int n_classes, std::span<const int> classes);
/// `count` samples; each class appears with probability 0.5. Sample i draws
/// from rng.split(i), so results do not depend on generation order.
std::vector<Sample> synth_generate(const Rng& rng, int count, int height, int width, int n_classes);

/// Network-ready batch.
template <typename S>
struct Batch {
    Tensor<S> images;      // [B, 3, H, W]
    Tensor<S> cls_labels;  // [B, n]
    Tensor<S> seg_onehot;  // [B, n+1, H, W]
    std::vector<int> masks;  // [B, H, W]
};

template <typename S>
Batch<S> make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices, int n_classes);

}  // namespace resformer
