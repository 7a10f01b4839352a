#pragma once

#include "resformer/config.hpp"
#include "resformer/decoder.hpp"
#include "resformer/encoder.hpp"
#include "resformer/heads.hpp"

namespace resformer {

/// Shared encoder feeding a classification head and a segmentation decoder.
template <typename S>
struct MtlModel {
    ModelConfig config;
    Encoder<S> encoder;
    Decoder<S> decoder;
    ClassificationHead<S> cls_head;
    SegmentationHead<S> seg_head;

    MtlModel() = default;
    MtlModel(const ModelConfig& cfg, Rng& rng)
        : config(cfg),
          encoder(cfg, rng),
          decoder(cfg, rng),
          cls_head(cfg.channels[2] + cfg.channels[3], cfg.cls_hidden, cfg.n_classes, rng),
          seg_head(cfg.decoder_channels[2], cfg.n_classes, rng) {}

    template <typename V>
    void visit(V& v, const std::string& prefix) {
        encoder.visit(v, scoped(prefix, "encoder"));
        decoder.visit(v, scoped(prefix, "decoder"));
        cls_head.visit(v, scoped(prefix, "cls_head"));
        seg_head.visit(v, scoped(prefix, "seg_head"));
    }
};

/// One forward pass producing both task outputs for images [B, 3, H, W].
template <typename S>
MtlOutput<S> model_forward(const Tensor<S>& images, MtlModel<S>& model, Mode mode) {
    const EncoderOutput<S> enc = encoder_forward(images, model.encoder, model.config, mode);
    MtlOutput<S> out;
    out.cls_logits = classification_head(enc.features[2], enc.features[3], model.cls_head);
    out.seg_probs = segmentation_head(decoder_forward(enc, model.decoder, mode), model.seg_head);
    return out;
}

}  // namespace resformer
