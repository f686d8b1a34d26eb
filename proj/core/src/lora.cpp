#include "figclip/lora.hpp"

#include <algorithm>

#include "figclip/errors.hpp"
#include "figclip/rng.hpp"

namespace figclip {

void AdapterSet::add(LoraAdapter a) {
    if (by_target_.count(a.target)) throw ValidationError("adapter already attached to " + a.target);
    by_target_.emplace(a.target, std::move(a));
}

const LoraAdapter* AdapterSet::find(const std::string& target) const {
    auto it = by_target_.find(target);
    return it == by_target_.end() ? nullptr : &it->second;
}

const std::set<std::string>& known_weight_types() {
    static const std::set<std::string> kinds{"q", "k", "v", "o", "fc", "proj"};
    return kinds;
}

AdapterSet inject_lora(ParamStore& store, const std::vector<AdaptableWeight>& weights,
                       const std::set<std::string>& targets, size_t rank, uint64_t seed) {
    if (rank == 0) throw ValidationError("LoRA rank must be positive");
    for (const auto& t : targets)
        if (!known_weight_types().count(t)) throw UnknownTarget("unknown LoRA weight type: " + t);

    AdapterSet out;
    for (const auto& w : weights) {
        if (!targets.count(w.type)) continue;
        const Parameter& frozen = store.get(w.name);
        if (!frozen.frozen) throw ValidationError("LoRA target " + w.name + " is not frozen");
        if (rank > std::min(w.d_out, w.d_in))
            throw ValidationError("rank " + std::to_string(rank) + " exceeds min dim of " + w.name);
        LoraAdapter a;
        a.target = w.name;
        a.rank = rank;
        a.scaling = 1.0;
        Rng rng(derive_seed(seed, fnv1a64(w.name.data(), w.name.size())));
        store.add(a.a_name(), Tensor::gaussian({w.d_out, rank}, 0.02, rng), /*frozen=*/false);
        store.add(a.b_name(), Tensor::zeros({w.d_in, rank}), /*frozen=*/false);
        out.add(std::move(a));
    }
    return out;
}

NodeId lora_linear(TapeSession& s, NodeId x, const std::string& weight_name, const LoraAdapter* adapter) {
    NodeId y = s.tape().matmul(x, s.param_transposed(weight_name));
    if (!adapter) return y;
    NodeId xb = s.tape().matmul(x, s.param(adapter->b_name()));         // [S, r]
    NodeId delta = s.tape().matmul(xb, s.param_transposed(adapter->a_name()));  // [S, d_out]
    if (adapter->scaling != 1.0) delta = s.tape().scale(delta, adapter->scaling);
    return s.tape().add(y, delta);
}

ParamStore merge_adapters(const ParamStore& store, const AdapterSet& adapters) {
    ParamStore out;
    for (const auto& [name, p] : store.raw()) {
        bool is_adapter_factor = false;
        for (const auto& [target, a] : adapters.all())
            if (name == a.a_name() || name == a.b_name()) is_adapter_factor = true;
        if (is_adapter_factor) continue;
        out.add(name, p.tensor, p.frozen);
    }
    for (const auto& [target, a] : adapters.all()) {
        const Tensor& A = store.get(a.a_name()).tensor;
        const Tensor& B = store.get(a.b_name()).tensor;
        Tensor& W = out.get(target).tensor;
        const size_t d_out = W.shape[0], d_in = W.shape[1], r = a.rank;
        for (size_t i = 0; i < d_out; ++i)
            for (size_t j = 0; j < d_in; ++j) {
                double acc = 0.0;
                for (size_t k = 0; k < r; ++k) acc += A.data[i * r + k] * B.data[j * r + k];
                W.data[i * d_in + j] += a.scaling * acc;
            }
    }
    return out;
}

size_t lora_param_count(const ParamStore& store, const AdapterSet& adapters) {
    size_t n = 0;
    for (const auto& [target, a] : adapters.all())
        n += store.get(a.a_name()).tensor.numel() + store.get(a.b_name()).tensor.numel();
    return n;
}

}  // namespace figclip
