#include <cmath>

#include "doctest.h"
#include "figclip/optim.hpp"
#include "figclip/tape.hpp"
#include "helpers.hpp"

using namespace figclip;
using figtest::fd_max_rel_err;
using figtest::random_tensor;

namespace {

// One scratch parameter per input tensor so the shared FD harness drives
// every op the same way.
ParamStore scratch(const std::vector<std::pair<std::string, Tensor>>& inputs) {
    ParamStore store;
    for (const auto& [name, t] : inputs) store.add(name, t, /*frozen=*/false);
    return store;
}

}  // namespace

TEST_CASE("softmax of a zero vector is uniform") {
    Tape t(Precision::f64);
    NodeId x = t.constant(Tensor::zeros({5}));
    const Tensor& y = t.value(t.softmax(x, 0));
    for (double v : y.data) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("l2_normalize yields unit norm for nonzero vectors") {
    Tape t(Precision::f64);
    NodeId x = t.constant(random_tensor({7}, 42));
    const Tensor& y = t.value(t.l2_normalize(x, 0));
    double ss = 0.0;
    for (double v : y.data) ss += v * v;
    CHECK(std::sqrt(ss) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("shape errors name both shapes") {
    Tape t(Precision::f64);
    NodeId a = t.constant(Tensor::zeros({2, 3}));
    NodeId b = t.constant(Tensor::zeros({3, 3}));
    CHECK_THROWS_AS(t.add(a, b), ShapeError);
    CHECK_THROWS_WITH_AS(t.matmul(b, b) && t.matmul(a, a), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("every core op matches central finite differences") {
    for (uint64_t seed : {1u, 2u, 3u}) {
        // gelu after the op keeps the reduction sensitive to every output slot
        auto check1 = [&](const char* what, const Tensor& x,
                          const std::function<NodeId(Tape&, NodeId)>& op) {
            ParamStore store = scratch({{"x", x}});
            double err = fd_max_rel_err(store, {"x"}, [&](TapeSession& s) {
                NodeId y = op(s.tape(), s.param("x"));
                return s.tape().mean_all(s.tape().gelu(y));
            });
            INFO(what << " seed " << seed);
            CHECK(err < 1e-4);
        };

        Tensor m34 = random_tensor({3, 4}, seed);
        Tensor v4 = random_tensor({4}, seed + 10);

        check1("gelu", m34, [](Tape& t, NodeId x) { return t.gelu(x); });
        check1("scale", m34, [](Tape& t, NodeId x) { return t.scale(x, -1.3); });
        check1("transpose", m34, [](Tape& t, NodeId x) { return t.transpose(x); });
        check1("softmax_rows", m34, [](Tape& t, NodeId x) { return t.softmax(x, 1); });
        check1("l2_normalize_rows", m34, [](Tape& t, NodeId x) { return t.l2_normalize(x, 1); });
        check1("logsumexp_rows", m34, [](Tape& t, NodeId x) { return t.stack_rows({t.logsumexp_rows(x)}); });
        check1("mean_axis1", m34, [](Tape& t, NodeId x) { return t.stack_rows({t.mean(x, 1)}); });
        check1("slice", m34, [](Tape& t, NodeId x) { return t.slice(x, 1, 1, 2); });
        check1("exp", m34, [](Tape& t, NodeId x) { return t.exp(x); });
        check1("softmax_vec", v4, [](Tape& t, NodeId x) { return t.stack_rows({t.softmax(x, 0)}); });

        {
            Tensor pos = m34;
            for (double& v : pos.data) v = std::abs(v) + 0.5;
            check1("log", pos, [](Tape& t, NodeId x) { return t.log(x); });
        }

        {
            ParamStore store = scratch({{"a", random_tensor({3, 4}, seed)},
                                        {"b", random_tensor({4, 2}, seed + 1)}});
            double err = fd_max_rel_err(store, {"a", "b"}, [](TapeSession& s) {
                return s.tape().mean_all(s.tape().gelu(s.tape().matmul(s.param("a"), s.param("b"))));
            });
            CHECK(err < 1e-4);
        }
        {
            ParamStore store = scratch({{"a", random_tensor({3, 4}, seed)},
                                        {"b", random_tensor({3, 4}, seed + 1)}});
            double err = fd_max_rel_err(store, {"a", "b"}, [](TapeSession& s) {
                NodeId both = s.tape().add(s.param("a"), s.param("b"));
                NodeId diff = s.tape().sub(both, s.tape().scale(s.param("b"), 0.4));
                return s.tape().mean_all(s.tape().gelu(diff));
            });
            CHECK(err < 1e-4);
        }
        {
            ParamStore store = scratch({{"x", random_tensor({3, 4}, seed)},
                                        {"v", random_tensor({4}, seed + 2)}});
            double err = fd_max_rel_err(store, {"x", "v"}, [](TapeSession& s) {
                return s.tape().mean_all(s.tape().gelu(s.tape().add_rowvec(s.param("x"), s.param("v"))));
            });
            CHECK(err < 1e-4);
        }
        {
            ParamStore store = scratch({{"x", random_tensor({3, 4}, seed)},
                                        {"gamma", random_tensor({4}, seed + 3)},
                                        {"beta", random_tensor({4}, seed + 4)}});
            double err = fd_max_rel_err(store, {"x", "gamma", "beta"}, [](TapeSession& s) {
                NodeId ln = s.tape().layer_norm(s.param("x"), s.param("gamma"), s.param("beta"));
                return s.tape().mean_all(s.tape().gelu(ln));
            });
            CHECK(err < 1e-4);
        }
        {
            ParamStore store = scratch({{"x", random_tensor({3, 4}, seed)},
                                        {"s", Tensor({1}, {0.8})}});
            double err = fd_max_rel_err(store, {"x", "s"}, [](TapeSession& s) {
                return s.tape().mean_all(s.tape().gelu(s.tape().mul_scalar(s.param("x"), s.param("s"))));
            });
            CHECK(err < 1e-4);
        }
        {
            ParamStore store = scratch({{"a", random_tensor({2, 4}, seed)},
                                        {"b", random_tensor({3, 4}, seed + 5)},
                                        {"c", random_tensor({2, 3}, seed + 6)}});
            double err = fd_max_rel_err(store, {"a", "b", "c"}, [](TapeSession& s) {
                Tape& t = s.tape();
                NodeId rows = t.concat({s.param("a"), s.param("b")}, 0);        // [5,4]
                NodeId cols = t.concat({t.slice(rows, 0, 0, 2), s.param("c")}, 1);  // [2,7]
                return t.mean_all(t.gelu(cols));
            });
            CHECK(err < 1e-4);
        }
        {
            ParamStore store = scratch({{"q", random_tensor({3, 4}, seed)},
                                        {"hn", random_tensor({6, 4}, seed + 7)}});
            double err = fd_max_rel_err(store, {"q", "hn"}, [](TapeSession& s) {
                NodeId dots = s.tape().rowwise_block_dots(s.param("q"), s.param("hn"), 2);
                return s.tape().mean_all(s.tape().gelu(dots));
            });
            CHECK(err < 1e-4);
        }
        {
            ParamStore store = scratch({{"x", random_tensor({3, 3}, seed)}});
            double err = fd_max_rel_err(store, {"x"}, [](TapeSession& s) {
                NodeId d = s.tape().diag(s.param("x"));
                return s.tape().mean_all(s.tape().gelu(s.tape().stack_rows({d})));
            });
            CHECK(err < 1e-4);
        }
        {
            ParamStore store = scratch({{"a", random_tensor({4}, seed)},
                                        {"b", random_tensor({4}, seed + 8)}});
            double err = fd_max_rel_err(store, {"a", "b"}, [](TapeSession& s) {
                Tape& t = s.tape();
                NodeId stacked = t.stack_rows({s.param("a"), s.param("b"), s.param("a")});
                return t.mean_all(t.gelu(t.mean(stacked, 0)));
            });
            CHECK(err < 1e-4);
        }
    }
}

TEST_CASE("shared parameters accumulate gradient across uses") {
    ParamStore store;
    store.add("w", Tensor({1}, {0.7}), false);
    TapeSession s(store, Precision::f64, true);
    NodeId w = s.param("w");
    NodeId w2 = s.param("w");
    CHECK(w == w2);  // one leaf per parameter per session
    NodeId sum = s.tape().add(w, w2);
    s.backward(s.tape().mean_all(sum));
    s.harvest_grads();
    CHECK(store.get("w").tensor.grad[0] == doctest::Approx(2.0));
}

TEST_CASE("f32 tape rounds every op result to float precision") {
    Tape t(Precision::f32);
    NodeId a = t.leaf(Tensor({3}, {0.1, 1.7, -2.3}), false);
    NodeId y = t.exp(t.gelu(a));
    for (double v : t.value(y).data) CHECK(v == static_cast<double>(static_cast<float>(v)));
}

TEST_CASE("adamw hand-evaluated single step") {
    ParamStore store;
    store.add("p", Tensor({1}, {1.0}), false);
    store.get("p").tensor.ensure_grad();
    store.get("p").tensor.grad[0] = 1.0;
    AdamW opt(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0}, Precision::f64);
    opt.step(store);
    // bias-corrected mhat = 1, vhat = 1 -> p = 1 - 0.1 * 1/(1 + 1e-8)
    CHECK(store.get("p").tensor.data[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adamw leaves parameters alone with zero gradient and zero decay") {
    ParamStore store;
    store.add("p", Tensor({1}, {2.5}), false);
    store.get("p").tensor.ensure_grad();
    AdamW opt(AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.0}, Precision::f64);
    opt.step(store);
    CHECK(store.get("p").tensor.data[0] == 2.5);
}

TEST_CASE("adamw never touches frozen parameters") {
    ParamStore store;
    store.add("w", Tensor({2}, {1.0, -1.0}), true);
    store.get("w").tensor.ensure_grad();
    store.get("w").tensor.grad = {5.0, 5.0};
    AdamW opt(AdamWConfig{}, Precision::f32);
    opt.step(store);
    CHECK(store.get("w").tensor.data[0] == 1.0);
    CHECK(store.get("w").tensor.data[1] == -1.0);
}

TEST_CASE("adamw state round-trips through export/import") {
    ParamStore store;
    store.add("p", Tensor({2}, {1.0, 2.0}), false);
    AdamW opt(AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0.01}, Precision::f32);
    for (int i = 0; i < 3; ++i) {
        store.get("p").tensor.ensure_grad();
        store.get("p").tensor.grad = {0.3, -0.2};
        opt.step(store);
    }
    auto state = opt.export_state();
    AdamW fresh(AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0.01}, Precision::f32);
    fresh.import_state(state, store);
    CHECK(fresh.step_count() == 3);

    ParamStore copy1, copy2;
    copy1.add("p", store.get("p").tensor, false);
    copy2.add("p", store.get("p").tensor, false);
    copy1.get("p").tensor.ensure_grad();
    copy1.get("p").tensor.grad = {0.1, 0.1};
    copy2.get("p").tensor.ensure_grad();
    copy2.get("p").tensor.grad = {0.1, 0.1};
    opt.step(copy1);
    fresh.step(copy2);
    CHECK(copy1.get("p").tensor.data == copy2.get("p").tensor.data);
}
