#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "figclip/tape.hpp"
#include "figclip/tensor.hpp"

namespace figclip {

struct AdamWConfig {
    double lr = 1e-6;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam with bias correction. One moment slot pair per
// trainable parameter; frozen parameters are never touched. All state is
// rounded to the working precision after each step so checkpoints (f32)
// round-trip exactly in f32 mode.
class AdamW {
public:
    AdamW(AdamWConfig cfg, Precision precision) : cfg_(cfg), precision_(precision) {}

    const AdamWConfig& config() const { return cfg_; }
    uint64_t step_count() const { return step_; }

    // Applies one update using Parameter.tensor.grad, then clears the grads.
    void step(ParamStore& params);

    // Moment state under "optim.m.<name>" / "optim.v.<name>" plus "optim.step",
    // so resume produces bitwise-identical trajectories.
    std::map<std::string, Tensor> export_state() const;
    void import_state(const std::map<std::string, Tensor>& state, const ParamStore& params);

private:
    AdamWConfig cfg_;
    Precision precision_;
    std::map<std::string, Tensor> m_;
    std::map<std::string, Tensor> v_;
    uint64_t step_ = 0;
};

}  // namespace figclip
