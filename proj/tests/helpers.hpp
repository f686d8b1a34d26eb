#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "figclip/annotations.hpp"
#include "figclip/rng.hpp"
#include "figclip/tape.hpp"

namespace figtest {

using namespace figclip;

// The running example of the event template: verb walk with four roles.
inline EventAnnotation walk_event() {
    EventAnnotation ev;
    ev.event_id = "walk_ev";
    ev.verb = "walk";
    ev.roles = {{"walker", "man with short hair wearing collared shirt"},
                {"direction", "forward"},
                {"manner", "slowly"},
                {"scene", "apartment"}};
    ev.start_s = 0.0;
    ev.end_s = 2.0;
    ev.frame_refs = {FrameRef{"emb:0"}};
    return ev;
}

inline Tensor random_tensor(std::vector<size_t> shape, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return Tensor::gaussian(std::move(shape), scale, rng);
}

struct FdWorst {
    double rel = 0.0;
    double abs_err = 0.0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::string name;
};

// Central-difference gradient oracle over named store parameters. `build`
// must assemble a [1] loss from a fresh session; it runs once for the
// analytic pass and twice per probed coordinate. Returns the max relative
// error. max_coords = 0 probes every coordinate.
inline double fd_max_rel_err(ParamStore& store, const std::vector<std::string>& names,
                             const std::function<NodeId(TapeSession&)>& build,
                             size_t max_coords = 0, uint64_t coord_seed = 1234, double h = 1e-5,
                             FdWorst* worst_out = nullptr) {
    for (const auto& n : names) store.get(n).tensor.zero_grad();
    {
        TapeSession s(store, Precision::f64, /*grad_enabled=*/true);
        NodeId loss = build(s);
        s.backward(loss);
        s.harvest_grads();
    }
    auto value_at = [&]() {
        TapeSession s(store, Precision::f64, /*grad_enabled=*/false);
        return s.tape().value(build(s)).data[0];
    };

    double worst = 0.0;
    Rng rng(coord_seed);
    for (const auto& name : names) {
        Tensor& t = store.get(name).tensor;
        std::vector<size_t> coords;
        if (max_coords == 0 || t.numel() <= max_coords) {
            coords.resize(t.numel());
            for (size_t i = 0; i < t.numel(); ++i) coords[i] = i;
        } else {
            for (size_t i = 0; i < max_coords; ++i) coords.push_back(rng.uniform_below(t.numel()));
        }
        for (size_t c : coords) {
            const double orig = t.data[c];
            t.data[c] = orig + h;
            const double fp = value_at();
            t.data[c] = orig - h;
            const double fm = value_at();
            t.data[c] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double analytic = t.grad.empty() ? 0.0 : t.grad[c];
            // Central differences carry ~1e-10 absolute roundoff at h=1e-5, so
            // coordinates with vanishing gradients are judged against a 1e-5
            // floor; rel < 1e-4 there still demands 1e-9 absolute agreement.
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-5});
            if (rel > worst) {
                worst = rel;
                if (worst_out) *worst_out = {rel, std::abs(analytic - numeric), analytic, numeric, name};
            }
        }
    }
    return worst;
}

}  // namespace figtest
