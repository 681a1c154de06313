#include <doctest.h>

#include <cmarl/checkpoint.hpp>
#include <cmarl/diffcore.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace cmarl::diff;

TEST_SUITE("diffcore") {

TEST_CASE("tensor shape bookkeeping") {
    Tensor t = Tensor::zeros({3, 4});
    CHECK(t.rows() == 3);
    CHECK(t.cols() == 4);
    CHECK(t.size() == 12);
    t.at(2, 1) = 5.0;
    CHECK(t[2 * 4 + 1] == 5.0);
    CHECK_THROWS(Tensor({2, 2}, {1.0, 2.0, 3.0}));
}

TEST_CASE("matmul forward and gradient") {
    std::mt19937_64 rng(1);
    Tensor a = randn({3, 4}, rng, 1.0), b = randn({4, 2}, rng, 1.0);
    const double err = grad_check(
        [&](Tape& t) { return sum_all(matmul(t.param(a), t.param(b))); }, {&a, &b}, 1e-5);
    CHECK(err < 1e-6);
    Tape t;
    const Var m = matmul(t.param(a), t.param(b));
    double manual = 0.0;
    for (std::size_t k = 0; k < 4; ++k) manual += a.at(1, k) * b.at(k, 0);
    CHECK(m->value.at(1, 0) == doctest::Approx(manual));
}

TEST_CASE("broadcast add distributes the gradient across rows") {
    std::mt19937_64 rng(2);
    Tensor a = randn({5, 3}, rng, 1.0), b = randn({3}, rng, 1.0);
    const double err = grad_check(
        [&](Tape& t) { return sum_all(tanh_op(add(t.param(a), t.param(b)))); }, {&a, &b},
        1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("elementwise op gradients") {
    std::mt19937_64 rng(3);
    Tensor a = randn({4, 4}, rng, 0.8), b = randn({4, 4}, rng, 0.8);
    auto build = [&](Tape& t) {
        const Var va = t.param(a), vb = t.param(b);
        const Var x = mul(va, vb);
        const Var y = divide(softplus(x), add_scalar(exp_op(scale(vb, 0.3)), 1.5));
        const Var z = sub(log_op(add_scalar(mul(y, y), 1.0)), neg(tanh_op(va)));
        return mean_all(z);
    };
    CHECK(grad_check(build, {&a, &b}, 1e-5) < 1e-6);
}

TEST_CASE("softmax rows are normalized and differentiable") {
    std::mt19937_64 rng(4);
    Tensor a = randn({3, 5}, rng, 1.5);
    Tape t;
    const Var s = softmax(t.param(a), 1);
    for (std::size_t r = 0; r < 3; ++r) {
        double sum = 0.0;
        for (std::size_t c = 0; c < 5; ++c) sum += s->value.at(r, c);
        CHECK(sum == doctest::Approx(1.0));
    }
    CHECK(grad_check([&](Tape& tp) { return sum_all(mul(softmax(tp.param(a), 1),
                                                        tp.param(a))); },
                     {&a}, 1e-5) < 1e-6);
}

TEST_CASE("concat and slice invert each other") {
    std::mt19937_64 rng(5);
    Tensor a = randn({2, 3}, rng, 1.0), b = randn({2, 2}, rng, 1.0);
    Tape t;
    const Var cat = concat({t.param(a), t.param(b)}, 1);
    CHECK(cat->value.cols() == 5);
    const Var back = slice(cat, 1, 0, 3);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(back->value.at(r, c) == a.at(r, c));
    CHECK(grad_check([&](Tape& tp) {
              return sum_all(mul(concat({tp.param(a), tp.param(b)}, 1),
                                 concat({tp.param(a), tp.param(b)}, 1)));
          },
          {&a, &b}, 1e-5) < 1e-6);
}

TEST_CASE("minimum routes ties to the first argument") {
    Tensor a({2}, {1.0, 3.0}), b({2}, {1.0, 2.0});
    Tape t;
    const Var m = minimum(t.param(a), t.param(b));
    backward(sum_all(m));
    CHECK(t.grad_of(a)->data()[0] == 1.0);  // tie
    CHECK(t.grad_of(b)->data()[0] == 0.0);
    CHECK(t.grad_of(a)->data()[1] == 0.0);
    CHECK(t.grad_of(b)->data()[1] == 1.0);
}

TEST_CASE("clamp passes gradient only inside the range") {
    Tensor a({3}, {-2.0, 0.25, 2.0});
    Tape t;
    backward(sum_all(clamp_op(t.param(a), -1.0, 1.0)));
    const auto& g = t.grad_of(a)->data();
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 1.0);
    CHECK(g[2] == 0.0);
}

TEST_CASE("reductions and axis variants") {
    Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
    Tape t;
    CHECK(sum_all(t.param(a))->value[0] == 21.0);
    CHECK(mean_all(t.param(a))->value[0] == doctest::Approx(3.5));
    const Var s0 = sum_axis(t.param(a), 0);
    CHECK(s0->value.size() == 3);
    CHECK(s0->value[0] == 5.0);
    const Var m1 = mean_axis(t.param(a), 1);
    CHECK(m1->value.size() == 2);
    CHECK(m1->value[1] == doctest::Approx(5.0));
}

TEST_CASE("backward requires a scalar loss and clears stale gradients") {
    Tensor a({2}, {1.0, 2.0});
    Tape t;
    CHECK_THROWS(backward(t.param(a)));
    const Var l1 = sum_all(mul(t.param(a), t.param(a)));
    backward(l1);
    const double g0 = t.grad_of(a)->data()[0];
    Tape t2;
    backward(sum_all(mul(t2.param(a), t2.param(a))));
    CHECK(t2.grad_of(a)->data()[0] == doctest::Approx(g0));
}

TEST_CASE("tape memoizes leaves per tensor") {
    Tensor a({2}, {1.0, 2.0});
    Tape t;
    CHECK(t.param(a) == t.param(a));
    CHECK(t.grad_of(a) == nullptr);  // no backward yet
}

TEST_CASE("deep chain backward does not overflow the stack") {
    Tensor a({1}, {0.5});
    Tape t;
    Var x = t.param(a);
    for (int i = 0; i < 30000; ++i) x = add_scalar(scale(x, 0.9999), 1e-6);
    backward(sum_all(x));
    CHECK(t.grad_of(a) != nullptr);
    CHECK(std::isfinite(t.grad_of(a)->data()[0]));
}

TEST_CASE("adamw first step moves against the gradient, decay is decoupled") {
    Tensor p({2}, {1.0, -1.0});
    Tensor g({2}, {0.5, -0.25});
    AdamW opt(0.9, 0.999, 1e-8, 0.0);
    opt.step(0.1, {{"p", &p, &g}});
    // Bias-corrected first step is lr * g / (|g| + eps) in the limit.
    CHECK(p[0] == doctest::Approx(1.0 - 0.1).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(-1.0 + 0.1).epsilon(1e-4));

    Tensor q({1}, {2.0});
    AdamW decay(0.9, 0.999, 1e-8, 0.1);
    decay.step(0.5, {{"q", &q, nullptr}});
    CHECK(q[0] == doctest::Approx(2.0 * (1.0 - 0.5 * 0.1)));
}

TEST_CASE("adamw state survives a visit/restore roundtrip") {
    std::mt19937_64 rng(6);
    Tensor p = randn({3}, rng, 1.0), g = randn({3}, rng, 1.0);
    AdamW opt;
    opt.step(0.01, {{"p", &p, &g}});
    std::map<std::string, Tensor> state;
    opt.visit_state([&state](const std::string& n, Tensor& t) { state.emplace(n, t); });
    CHECK(!state.empty());
    Tensor p2 = p;
    AdamW opt2;
    opt2.restore_state(state);
    Tensor pa = p, pb = p;
    opt.step(0.01, {{"p", &pa, &g}});
    opt2.step(0.01, {{"p", &pb, &g}});
    for (std::size_t i = 0; i < 3; ++i) CHECK(pa[i] == pb[i]);
}

TEST_CASE("checkpoint roundtrip is bit exact") {
    namespace fs = std::filesystem;
    std::mt19937_64 rng(7);
    const std::string path = (fs::temp_directory_path() / "cmarl_ckpt_test.bin").string();
    std::vector<std::pair<std::string, Tensor>> items = {
        {"a", randn({3, 4}, rng, 1.0)}, {"b", randn({7}, rng, 0.5)},
        {"c", Tensor::scalar(42.0)}};
    save_tensors(path, items);
    const auto loaded = load_tensors(path);
    REQUIRE(loaded.size() == 3);
    for (const auto& [name, t] : items) {
        const auto it = loaded.find(name);
        REQUIRE(it != loaded.end());
        REQUIRE(it->second.shape() == t.shape());
        REQUIRE(it->second.data() == t.data());
    }
    fs::remove(path);
}

TEST_CASE("checkpoint load rejects garbage") {
    namespace fs = std::filesystem;
    const std::string path = (fs::temp_directory_path() / "cmarl_ckpt_bad.bin").string();
    std::ofstream(path, std::ios::binary) << "not a checkpoint";
    CHECK_THROWS_AS((void)load_tensors(path), CheckpointError);
    CHECK_THROWS_AS((void)load_tensors(path + ".missing"), CheckpointError);
    fs::remove(path);
}

}  // TEST_SUITE
