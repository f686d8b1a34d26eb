#include "figclip/model.hpp"

#include <cmath>

#include "figclip/errors.hpp"

namespace figclip {

Model::Model(ModelConfig cfg)
    : cfg_(std::move(cfg)), backbone_("backbone", cfg_.backbone) {
    backbone_.init_params(params_, cfg_.seed, /*frozen=*/true);
    EncoderDims text_dims = cfg_.backbone;
    text_dims.input_dim = cfg_.backbone.dim;
    text_ = std::make_unique<TextEncoder>(
        cfg_.lora_text ? TextEncoder::Mode::transformer : TextEncoder::Mode::hash_linear, text_dims);
    text_->init_params(params_, cfg_.seed);
    if (cfg_.vc_enabled) {
        vc_ = std::make_unique<VideoContextualizer>(cfg_.backbone.dim, cfg_.p_max, cfg_.t_max, cfg_.vc_blocks,
                                                    cfg_.vc_heads);
        vc_->init_params(params_, cfg_.seed);
    }
    if (cfg_.lora_rank > 0 && !cfg_.lora_targets.empty()) {
        image_adapters_ = inject_lora(params_, backbone_.adaptable_weights(), cfg_.lora_targets, cfg_.lora_rank,
                                      derive_seed(cfg_.seed, 0x10afU));
        if (cfg_.lora_text)
            text_adapters_ = inject_lora(params_, text_->adaptable_weights(), cfg_.lora_targets, cfg_.lora_rank,
                                         derive_seed(cfg_.seed, 0x10bfU));
    }
    if (cfg_.fixed_scale <= 0.0) {
        Tensor tau({1});
        tau.data[0] = kInitTau;
        tau.round_to(cfg_.precision);
        params_.add("loss.tau", std::move(tau), /*frozen=*/false);
    }
    for (auto& [name, p] : params_.raw()) p.tensor.round_to(cfg_.precision);
}

NodeId Model::encode_frame(TapeSession& s, const Tensor& grid) const {
    NodeId tokens = s.tape().constant(grid);
    return backbone_.forward(s, tokens, image_adapters_.empty() ? nullptr : &image_adapters_, cfg_.normalize);
}

Tensor Model::encode_frame_tensor(const Tensor& grid) const {
    TapeSession s(const_cast<ParamStore&>(params_), cfg_.precision, /*grad_enabled=*/false);
    return s.tape().value(encode_frame(s, grid));
}

Tensor Model::embed_text(const std::string& prompt) const {
    return text_->embed(params_, prompt, cfg_.normalize);
}

NodeId Model::embed_text_node(TapeSession& s, const std::string& prompt) const {
    return text_->embed_node(s, prompt, text_adapters_.empty() ? nullptr : &text_adapters_, cfg_.normalize);
}

NodeId Model::logit_scale_node(TapeSession& s) const {
    if (cfg_.fixed_scale > 0.0) {
        Tensor t({1});
        t.data[0] = cfg_.fixed_scale;
        return s.tape().constant(std::move(t));
    }
    return s.tape().exp(s.param("loss.tau"));
}

void Model::clamp_logit_scale() {
    if (cfg_.fixed_scale > 0.0) return;
    Tensor& tau = params_.get("loss.tau").tensor;
    const double max_tau = std::log(kMaxLogitScale);
    if (tau.data[0] > max_tau) tau.data[0] = quantize(max_tau, cfg_.precision);
}

Model Model::merged() const {
    if (merged_) throw AlreadyMerged("adapters were already merged into this model");
    ModelConfig cfg = cfg_;
    cfg.lora_rank = 0;
    cfg.lora_targets.clear();
    Model out(cfg);
    ParamStore folded = merge_adapters(params_, image_adapters_);
    if (!text_adapters_.empty()) folded = merge_adapters(folded, text_adapters_);
    // The merged store has exactly the parameter set of an adapter-free model.
    out.params_.import_tensors(folded.export_tensors());
    for (auto& [name, p] : out.params_.raw()) p.tensor.round_to(cfg.precision);
    out.merged_ = true;
    return out;
}

std::vector<std::string> Model::frozen_names() const {
    std::vector<std::string> out;
    for (const auto& [name, p] : params_.raw())
        if (p.frozen) out.push_back(name);
    return out;
}

std::string Model::frozen_parameter_bytes() const {
    std::string bytes;
    for (const auto& [name, p] : params_.raw()) {
        if (!p.frozen) continue;
        bytes += name;
        bytes.push_back('\0');
        for (double v : p.tensor.data) {
            const float f = static_cast<float>(v);
            const char* raw = reinterpret_cast<const char*>(&f);
            bytes.append(raw, sizeof(f));
        }
    }
    return bytes;
}

}  // namespace figclip
