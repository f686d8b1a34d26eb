#include "doctest.h"
#include "figclip/encoders.hpp"
#include "figclip/lora.hpp"
#include "figclip/model.hpp"
#include "helpers.hpp"

using namespace figclip;

namespace {

EncoderDims tiny_dims() { return EncoderDims{8, 8, 4, 2, 2, 4}; }

ModelConfig tiny_model_config(std::set<std::string> targets, size_t rank) {
    ModelConfig mc;
    mc.backbone = tiny_dims();
    mc.vc_blocks = 2;
    mc.p_max = 2;
    mc.t_max = 2;
    mc.lora_targets = std::move(targets);
    mc.lora_rank = rank;
    mc.seed = 5;
    mc.precision = Precision::f32;
    return mc;
}

}  // namespace

TEST_CASE("effective forward on the worked 2x2 example") {
    // W = I2, A = [[1],[0]], B = [[0],[1]] -> W* = [[1,1],[0,1]]
    ParamStore store;
    store.add("w", Tensor({2, 2}, {1, 0, 0, 1}), true);
    store.add("w.lora.A", Tensor({2, 1}, {1, 0}), false);
    store.add("w.lora.B", Tensor({2, 1}, {0, 1}), false);
    LoraAdapter a{"w", 1, 1.0};

    TapeSession s(store, Precision::f64, false);
    NodeId x = s.tape().constant(Tensor({2, 2}, {1, 0, 0, 1}));  // identity input, rows = x^T
    const Tensor& y = s.tape().value(lora_linear(s, x, "w", &a));
    // y = x . (W*)^T ; with x = I this is (W*)^T = [[1,0],[1,1]]
    CHECK(y.at2(0, 0) == 1.0);
    CHECK(y.at2(0, 1) == 0.0);
    CHECK(y.at2(1, 0) == 1.0);
    CHECK(y.at2(1, 1) == 1.0);
}

TEST_CASE("absent adapter reduces to the plain frozen linear") {
    ParamStore store;
    store.add("w", Tensor({2, 2}, {2, 0, 0, 3}), true);
    TapeSession s(store, Precision::f64, false);
    NodeId x = s.tape().constant(Tensor({1, 2}, {1, 1}));
    const Tensor& y = s.tape().value(lora_linear(s, x, "w", nullptr));
    CHECK(y.at2(0, 0) == 2.0);
    CHECK(y.at2(0, 1) == 3.0);
}

TEST_CASE("injection validates targets and rank") {
    ParamStore store;
    TransformerEncoder enc("backbone", tiny_dims());
    enc.init_params(store, 3, true);
    CHECK_THROWS_AS(inject_lora(store, enc.adaptable_weights(), {"q", "bogus"}, 2, 0), UnknownTarget);
    CHECK_THROWS_AS(inject_lora(store, enc.adaptable_weights(), {"q"}, 9, 0), ValidationError);  // r > min(8,8)
    AdapterSet ok = inject_lora(store, enc.adaptable_weights(), {"q", "k", "v"}, 4, 0);
    CHECK(ok.size() == 6);  // 3 weight types x 2 blocks
}

TEST_CASE("trainable parameter count matches the analytic formula") {
    ParamStore store;
    TransformerEncoder enc("backbone", tiny_dims());
    enc.init_params(store, 3, true);
    const size_t r = 4, d = 8, blocks = 2;
    AdapterSet adapters = inject_lora(store, enc.adaptable_weights(), {"q", "k", "v"}, r, 0);
    CHECK(lora_param_count(store, adapters) == blocks * 3 * (d * r + d * r));
}

TEST_CASE("step-0 identity and merge equivalence across target sets and ranks") {
    const std::vector<std::set<std::string>> target_sets{
        {"q", "k", "v"}, {"q", "k", "v", "o"}, {"q", "k", "v", "o", "fc", "proj"}};
    for (const auto& targets : target_sets) {
        for (size_t rank : {1u, 4u, 8u}) {  // toy backbone caps rank at min(d_out,d_in) = 8
            ModelConfig mc = tiny_model_config(targets, rank);
            Model model(mc);
            Tensor grid = figtest::random_tensor({4, 8}, 1000 + rank);
            grid.round_to(Precision::f32);

            // step-0: adapted equals frozen bitwise
            ModelConfig frozen_cfg = mc;
            frozen_cfg.lora_rank = 0;
            frozen_cfg.lora_targets.clear();
            Model frozen(frozen_cfg);
            CHECK(model.encode_frame_tensor(grid).data == frozen.encode_frame_tensor(grid).data);

            // nudge the factors, then check merged vs live
            Rng rng(17);
            for (const auto& [target, a] : model.image_adapters().all()) {
                Tensor& b = model.params().get(a.b_name()).tensor;
                b = Tensor::gaussian(b.shape, 0.05, rng);
                b.round_to(Precision::f32);
            }
            Model merged = model.merged();
            Tensor live = model.encode_frame_tensor(grid);
            Tensor folded = merged.encode_frame_tensor(grid);
            double max_abs = 0.0;
            for (size_t i = 0; i < live.numel(); ++i)
                max_abs = std::max(max_abs, std::abs(live.data[i] - folded.data[i]));
            CHECK(max_abs < 1e-6);
        }
    }
}

TEST_CASE("merging zero-B adapters is a forward no-op") {
    Model model(tiny_model_config({"q", "k", "v"}, 4));
    Model merged = model.merged();
    Tensor grid = figtest::random_tensor({4, 8}, 2);
    grid.round_to(Precision::f32);
    CHECK(model.encode_frame_tensor(grid).data == merged.encode_frame_tensor(grid).data);
}

TEST_CASE("double merge raises AlreadyMerged") {
    Model model(tiny_model_config({"q"}, 2));
    Model merged = model.merged();
    CHECK_THROWS_AS(merged.merged(), AlreadyMerged);
}

TEST_CASE("gradients reach A and B factors, not frozen weights") {
    ParamStore store;
    TransformerEncoder enc("backbone", tiny_dims());
    enc.init_params(store, 3, true);
    AdapterSet adapters = inject_lora(store, enc.adaptable_weights(), {"q"}, 2, 9);
    Rng rng(3);
    for (const auto& [target, a] : adapters.all())
        store.get(a.b_name()).tensor = Tensor::gaussian(store.get(a.b_name()).tensor.shape, 0.05, rng);

    TapeSession s(store, Precision::f64, true);
    NodeId out = enc.forward(s, s.tape().constant(figtest::random_tensor({4, 8}, 6)), &adapters);
    s.backward(s.tape().mean_all(out));
    s.harvest_grads();
    bool any_nonzero = false;
    for (const auto& [target, a] : adapters.all()) {
        for (double g : store.get(a.a_name()).tensor.grad) any_nonzero = any_nonzero || g != 0.0;
        for (double g : store.get(a.b_name()).tensor.grad) any_nonzero = any_nonzero || g != 0.0;
    }
    CHECK(any_nonzero);
    CHECK(store.get(enc.weight_name(0, "q")).tensor.grad.empty());  // frozen: no grad buffer
}
