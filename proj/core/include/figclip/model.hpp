#pragma once

#include <memory>
#include <optional>
#include <set>
#include <string>

#include "figclip/contextualizer.hpp"
#include "figclip/encoders.hpp"
#include "figclip/lora.hpp"
#include "figclip/tape.hpp"

namespace figclip {

struct ModelConfig {
    EncoderDims backbone;           // image backbone Phi_I (frozen, LoRA-injectable)
    size_t vc_blocks = 6;
    size_t vc_heads = 4;
    size_t p_max = 5;
    size_t t_max = 4;
    bool vc_enabled = true;
    std::set<std::string> lora_targets{"q", "k", "v"};
    size_t lora_rank = 64;
    bool lora_text = false;         // route text through a LoRA-injectable frozen transformer
    bool normalize = true;
    double fixed_scale = 0.0;       // > 0 pins the logit scale; 0 => learnable exp(tau)
    uint64_t seed = 0;
    Precision precision = Precision::f32;
};

// The trainable unit: frozen image backbone + frozen text embedder + video
// contextualizer + LoRA factors + logit scale, all sharing one ParamStore.
class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    const TransformerEncoder& backbone() const { return backbone_; }
    const TextEncoder& text() const { return *text_; }
    const VideoContextualizer& vc() const { return *vc_; }
    bool vc_enabled() const { return vc_ != nullptr; }
    const AdapterSet& image_adapters() const { return image_adapters_; }
    const AdapterSet& text_adapters() const { return text_adapters_; }
    bool is_merged() const { return merged_; }

    TapeSession session(bool grad_enabled) { return TapeSession(params_, cfg_.precision, grad_enabled); }

    // Frame token grid -> [d] node; gradients reach only live LoRA factors.
    NodeId encode_frame(TapeSession& s, const Tensor& grid) const;
    Tensor encode_frame_tensor(const Tensor& grid) const;  // no-grad convenience

    Tensor embed_text(const std::string& prompt) const;
    NodeId embed_text_node(TapeSession& s, const std::string& prompt) const;

    NodeId logit_scale_node(TapeSession& s) const;
    void clamp_logit_scale();  // scale <= 100

    // Copy with every adapter folded into its frozen target; throws
    // AlreadyMerged on a second merge.
    Model merged() const;

    // Raw f32 bytes of every frozen parameter, for frozen-discipline checks.
    std::string frozen_parameter_bytes() const;

    std::vector<std::string> frozen_names() const;

private:
    ModelConfig cfg_;
    ParamStore params_;
    TransformerEncoder backbone_;
    std::unique_ptr<TextEncoder> text_;
    std::unique_ptr<VideoContextualizer> vc_;
    AdapterSet image_adapters_;
    AdapterSet text_adapters_;
    bool merged_ = false;
};

// Maximum logit scale (CLIP convention); tau is clamped to ln of this.
inline constexpr double kMaxLogitScale = 100.0;
inline constexpr double kInitTau = 2.6592600369327783;  // ln(1/0.07)

}  // namespace figclip
