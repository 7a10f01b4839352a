#pragma once

#include "resformer/blocks.hpp"

#include <json.hpp>

#include <array>
#include <string>
#include <vector>

namespace resformer {

/// How the residual conv block and the Swin block are combined per level.
enum class Variant { Sequential, Parallel };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

/// Architectural hyperparameters of the multi-task network.
struct ModelConfig {
    Variant variant = Variant::Sequential;
    std::array<Index, 4> channels{64, 128, 256, 512};
    std::array<Index, 4> heads{2, 4, 8, 16};
    Index window_size = 8;
    // Negative selects window_size / 2.
    Index shift = -1;
    std::vector<Index> dilation_rates{6, 12, 18};
    // Output widths of the three conv decoder levels (deepest first).
    std::array<Index, 3> decoder_channels{256, 128, 64};
    Index cls_hidden = 256;
    Index n_classes = 3;
    Index input_height = 224;
    Index input_width = 224;
    Index in_channels = 3;
    bool use_dfe = true;
    bool use_position_bias = true;

    /// Scaled-down widths for desk-scale experiments and gradient checks.
    static ModelConfig tiny();

    WindowConfig window() const { return {window_size, shift < 0 ? window_size / 2 : shift}; }
    /// Throws std::invalid_argument naming the first violated constraint.
    void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace resformer
