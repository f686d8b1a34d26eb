#include "figclip/optim.hpp"

#include <cmath>

namespace figclip {

void AdamW::step(ParamStore& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params.raw()) {
        if (p.frozen) continue;
        if (p.tensor.grad.empty()) continue;
        auto mit = m_.find(name);
        if (mit == m_.end()) {
            mit = m_.emplace(name, Tensor::zeros(p.tensor.shape)).first;
            v_.emplace(name, Tensor::zeros(p.tensor.shape));
        }
        Tensor& m = mit->second;
        Tensor& v = v_.at(name);
        for (size_t i = 0; i < p.tensor.numel(); ++i) {
            const double g = p.tensor.grad[i];
            m.data[i] = quantize(cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g, precision_);
            v.data[i] = quantize(cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g * g, precision_);
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            const double upd = mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.tensor.data[i];
            p.tensor.data[i] = quantize(p.tensor.data[i] - cfg_.lr * upd, precision_);
        }
        p.tensor.zero_grad();
    }
}

std::map<std::string, Tensor> AdamW::export_state() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : m_) out.emplace("optim.m." + name, t);
    for (const auto& [name, t] : v_) out.emplace("optim.v." + name, t);
    Tensor step({1});
    step.data[0] = static_cast<double>(step_);
    out.emplace("optim.step", std::move(step));
    return out;
}

void AdamW::import_state(const std::map<std::string, Tensor>& state, const ParamStore& params) {
    m_.clear();
    v_.clear();
    step_ = 0;
    for (const auto& [key, t] : state) {
        if (key == "optim.step") {
            step_ = static_cast<uint64_t>(t.data.at(0));
        } else if (key.rfind("optim.m.", 0) == 0) {
            m_.emplace(key.substr(8), t);
        } else if (key.rfind("optim.v.", 0) == 0) {
            v_.emplace(key.substr(8), t);
        }
    }
    for (const auto& [name, t] : m_) {
        const Parameter& p = params.get(name);
        if (p.tensor.shape != t.shape)
            throw FormatError("optimizer state for " + name + " has shape " + Tensor::shape_str(t.shape) +
                              ", parameter is " + Tensor::shape_str(p.tensor.shape));
    }
}

}  // namespace figclip
