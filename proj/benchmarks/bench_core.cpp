#include <benchmark/benchmark.h>

#include "figclip/encoders.hpp"
#include "figclip/losses.hpp"
#include "figclip/negatives.hpp"
#include "figclip/prompting.hpp"
#include "figclip/rng.hpp"
#include "figclip/tape.hpp"

using namespace figclip;

namespace {

Tensor random_tensor(std::vector<size_t> shape, uint64_t seed) {
    Rng rng(seed);
    return Tensor::gaussian(std::move(shape), 1.0, rng);
}

void bm_matmul(benchmark::State& state) {
    const size_t n = static_cast<size_t>(state.range(0));
    Tensor a = random_tensor({n, n}, 1);
    Tensor b = random_tensor({n, n}, 2);
    for (auto _ : state) {
        Tape t(Precision::f64, /*grad_enabled=*/false);
        benchmark::DoNotOptimize(t.value(t.matmul(t.constant(a), t.constant(b))).data.data());
    }
    state.SetItemsProcessed(static_cast<int64_t>(state.iterations()) * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(16)->Arg(64)->Arg(128);

void bm_backbone_forward(benchmark::State& state) {
    EncoderDims dims{64, 64, 16, 4, 4, 4};
    ParamStore store;
    TransformerEncoder enc("backbone", dims);
    enc.init_params(store, 1, true);
    Tensor grid = random_tensor({16, 64}, 3);
    for (auto _ : state) {
        TapeSession s(store, Precision::f32, /*grad_enabled=*/false);
        benchmark::DoNotOptimize(s.tape().value(enc.forward(s, s.tape().constant(grid), nullptr)).data.data());
    }
}
BENCHMARK(bm_backbone_forward);

void bm_backbone_train_step(benchmark::State& state) {
    EncoderDims dims{64, 64, 16, 4, 4, 4};
    ParamStore store;
    TransformerEncoder enc("backbone", dims);
    enc.init_params(store, 1, true);
    AdapterSet adapters = inject_lora(store, enc.adaptable_weights(), {"q", "k", "v"}, 64, 2);
    Tensor grid = random_tensor({16, 64}, 3);
    for (auto _ : state) {
        TapeSession s(store, Precision::f32, /*grad_enabled=*/true);
        NodeId out = enc.forward(s, s.tape().constant(grid), &adapters);
        NodeId loss = s.tape().mean_all(out);
        s.backward(loss);
        benchmark::DoNotOptimize(loss);
    }
}
BENCHMARK(bm_backbone_train_step);

void bm_info_nce(benchmark::State& state) {
    const size_t n = static_cast<size_t>(state.range(0));
    ParamStore store;
    Tensor q = random_tensor({n, 64}, 5);
    Tensor k = random_tensor({n, 64}, 6);
    for (auto _ : state) {
        TapeSession s(store, Precision::f64, false);
        NodeId loss = info_nce(s, s.tape().constant(q), s.tape().constant(k), std::nullopt, 0,
                               s.tape().constant(Tensor({1}, {14.0})));
        benchmark::DoNotOptimize(s.tape().value(loss).data[0]);
    }
}
BENCHMARK(bm_info_nce)->Arg(20)->Arg(100);

void bm_render_prompt(benchmark::State& state) {
    EventAnnotation ev;
    ev.event_id = "e";
    ev.verb = "walk";
    ev.roles = {{"walker", "man with short hair wearing collared shirt"},
                {"direction", "forward"},
                {"manner", "slowly"},
                {"scene", "apartment"}};
    ev.start_s = 0;
    ev.end_s = 1;
    ev.frame_refs = {FrameRef{"emb:0"}};
    for (auto _ : state) benchmark::DoNotOptimize(render_event_prompt(ev).text.data());
}
BENCHMARK(bm_render_prompt);

void bm_verb_role_negatives(benchmark::State& state) {
    EventAnnotation ev;
    ev.event_id = "e";
    ev.verb = "walk";
    ev.roles = {{"walker", "man"}, {"direction", "forward"}, {"manner", "slowly"}, {"scene", "apartment"}};
    ev.start_s = 0;
    ev.end_s = 1;
    ev.frame_refs = {FrameRef{"emb:0"}};
    std::vector<VerbEntry> pool{{"jog", {"jogger", "direction", "manner", "scene"}},
                                {"look", {"looker", "thing looked at", "manner", "scene"}},
                                {"bow", {"bower", "bowed to", "manner", "scene"}}};
    uint64_t seed = 0;
    for (auto _ : state) benchmark::DoNotOptimize(make_verb_role_negatives(ev, pool, 4, seed++).size());
}
BENCHMARK(bm_verb_role_negatives);

}  // namespace
