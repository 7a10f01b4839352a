#include "resformer/config.hpp"

#include <stdexcept>

namespace resformer {

std::string to_string(Variant v) { return v == Variant::Sequential ? "sequential" : "parallel"; }

Variant variant_from_string(const std::string& s) {
    if (s == "sequential") return Variant::Sequential;
    if (s == "parallel") return Variant::Parallel;
    throw std::invalid_argument("unknown variant '" + s + "' (expected sequential or parallel)");
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.channels = {8, 16, 32, 64};
    c.heads = {1, 2, 4, 8};
    c.window_size = 4;
    c.decoder_channels = {32, 16, 8};
    c.cls_hidden = 32;
    c.n_classes = 2;
    c.input_height = 32;
    c.input_width = 32;
    return c;
}

void ModelConfig::validate() const {
    for (std::size_t i = 0; i < 4; ++i) {
        if (channels[i] < 1) throw std::invalid_argument("channels must be positive");
        if (heads[i] < 1 || channels[i] % heads[i] != 0)
            throw std::invalid_argument("level " + std::to_string(i + 1) + ": heads (" + std::to_string(heads[i]) +
                                        ") must divide channels (" + std::to_string(channels[i]) + ")");
    }
    for (Index d : decoder_channels)
        if (d < 1) throw std::invalid_argument("decoder channels must be positive");
    window().validate();
    if (dilation_rates.empty()) throw std::invalid_argument("at least one dilation rate is required");
    for (Index d : dilation_rates)
        if (d < 1) throw std::invalid_argument("dilation rates must be >= 1");
    if (n_classes < 1) throw std::invalid_argument("n_classes must be >= 1");
    if (cls_hidden < 1) throw std::invalid_argument("cls_hidden must be >= 1");
    if (in_channels < 1) throw std::invalid_argument("in_channels must be >= 1");
    if (input_height < 16 || input_height % 16 != 0 || input_width < 16 || input_width % 16 != 0)
        throw std::invalid_argument("input size must be a positive multiple of 16, got " + std::to_string(input_height) +
                                    "x" + std::to_string(input_width));
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"variant", to_string(c.variant)},
                       {"channels", c.channels},
                       {"heads", c.heads},
                       {"window_size", c.window_size},
                       {"shift", c.shift},
                       {"dilation_rates", c.dilation_rates},
                       {"decoder_channels", c.decoder_channels},
                       {"cls_hidden", c.cls_hidden},
                       {"n_classes", c.n_classes},
                       {"input_height", c.input_height},
                       {"input_width", c.input_width},
                       {"in_channels", c.in_channels},
                       {"use_dfe", c.use_dfe},
                       {"use_position_bias", c.use_position_bias}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.variant = variant_from_string(j.value("variant", to_string(d.variant)));
    c.channels = j.value("channels", d.channels);
    c.heads = j.value("heads", d.heads);
    c.window_size = j.value("window_size", d.window_size);
    c.shift = j.value("shift", Index(-1));
    c.dilation_rates = j.value("dilation_rates", d.dilation_rates);
    c.decoder_channels = j.value("decoder_channels", d.decoder_channels);
    c.cls_hidden = j.value("cls_hidden", d.cls_hidden);
    c.n_classes = j.value("n_classes", d.n_classes);
    c.input_height = j.value("input_height", d.input_height);
    c.input_width = j.value("input_width", d.input_width);
    c.in_channels = j.value("in_channels", d.in_channels);
    c.use_dfe = j.value("use_dfe", d.use_dfe);
    c.use_position_bias = j.value("use_position_bias", d.use_position_bias);
}

}  // namespace resformer
