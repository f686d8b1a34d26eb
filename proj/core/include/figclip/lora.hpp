#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "figclip/tape.hpp"

namespace figclip {

// Rank-r factor pair bound to a named frozen weight W [d_out, d_in]:
//   W* = W + scaling * A . B^T,  A [d_out, r], B [d_in, r].
// A and B live in the ParamStore as "<target>.lora.A" / "<target>.lora.B".
struct LoraAdapter {
    std::string target;
    size_t rank = 0;
    double scaling = 1.0;

    std::string a_name() const { return target + ".lora.A"; }
    std::string b_name() const { return target + ".lora.B"; }
};

class AdapterSet {
public:
    void add(LoraAdapter a);
    const LoraAdapter* find(const std::string& target) const;
    bool empty() const { return by_target_.empty(); }
    size_t size() const { return by_target_.size(); }
    const std::map<std::string, LoraAdapter>& all() const { return by_target_; }

private:
    std::map<std::string, LoraAdapter> by_target_;
};

// A frozen weight that may carry an adapter; published by encoders.
struct AdaptableWeight {
    std::string name;  // parameter name, e.g. "backbone.block0.attn.q"
    std::string type;  // one of q k v o fc proj
    size_t d_out = 0;
    size_t d_in = 0;
};

const std::set<std::string>& known_weight_types();

// One adapter per matching weight. A is seeded Gaussian (std 0.02), B is
// zero, so the effective weight equals W at step 0; scaling is 1. Throws
// UnknownTarget for a target outside {q,k,v,o,fc,proj} and ValidationError
// when rank exceeds min(d_out, d_in) of a matched weight.
AdapterSet inject_lora(ParamStore& store, const std::vector<AdaptableWeight>& weights,
                       const std::set<std::string>& targets, size_t rank, uint64_t seed);

// y = x . W^T + scaling * (x . B) . A^T without materializing W*; adapter may
// be null (plain frozen linear).
NodeId lora_linear(TapeSession& s, NodeId x, const std::string& weight_name, const LoraAdapter* adapter);

// Folds every adapter into its target (W += scaling * A . B^T) in a copy of
// the store; the adapter parameters are dropped from the copy. The input
// store is untouched.
ParamStore merge_adapters(const ParamStore& store, const AdapterSet& adapters);

// Trainable element count of the adapters (sum over targets of r*(d_out+d_in)).
size_t lora_param_count(const ParamStore& store, const AdapterSet& adapters);

}  // namespace figclip
