#pragma once

#include "resformer/model.hpp"
#include "resformer/optim.hpp"

#include <json.hpp>

#include <filesystem>
#include <limits>
#include <string>

namespace resformer {

/// Everything in a checkpoint except the tensor payload.
struct CheckpointMeta {
    ModelConfig model;
    std::int64_t epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::string dtype;            // "float32" or "float64"
    nlohmann::json train_config;  // snapshot of the run configuration, may be null
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename S>
std::string dtype_name();

/// File layout: 8-byte magic "RSFCKPT1", little-endian u64 header length, a
/// JSON header, then the raw tensor payload at the offsets the header lists.
/// Parameters, batch-norm buffers and (if given) optimizer moments are stored.
template <typename S>
void save_checkpoint(const std::filesystem::path& file, MtlModel<S>& model, const AdamW<S>* optimizer,
                     const CheckpointMeta& meta);

/// Header only; use it to build a model of the right shape before load_checkpoint().
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& file);

/// Restores tensors into an already-constructed model (and optimizer, if
/// given). Every stored name must match exactly. Stored values of the other
/// precision are converted.
template <typename S>
CheckpointMeta load_checkpoint(const std::filesystem::path& file, MtlModel<S>& model, AdamW<S>* optimizer = nullptr);

}  // namespace resformer
