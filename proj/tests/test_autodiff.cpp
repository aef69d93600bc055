#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "grad_check.hpp"
#include "scenegen/ops.hpp"
#include "scenegen/optim.hpp"
#include "scenegen/tensor.hpp"

using namespace scenegen;
using namespace scenegen::num;

TEST_CASE("sum of squares gradient is 2x") {
    Tensor x = Tensor::from_data({1}, {3.0f}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = sum_all(mul(x, x));
        tape.backward(loss);
    }
    CHECK(x.grad_vec()[0] == doctest::Approx(6.0f).epsilon(1e-6));
}

TEST_CASE("constant function has zero gradient") {
    Tensor x = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f}, true);
    Tensor c = Tensor::from_data({1}, {4.0f});
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = sum_all(c); // does not depend on x
        tape.backward(loss);
    }
    CHECK_FALSE(x.has_grad());
    x.zero_grad();
    for (float g : x.grad_vec()) CHECK(g == 0.0f);
}

TEST_CASE("reused tensors accumulate gradient") {
    // f(x) = sum(x*x + x) -> df/dx = 2x + 1
    Tensor x = Tensor::from_data({3}, {1.0f, -0.5f, 2.0f}, true);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = sum_all(add(mul(x, x), x));
        tape.backward(loss);
    }
    for (int i = 0; i < 3; ++i) {
        CHECK(x.grad_vec()[i] == doctest::Approx(2.0f * x.data()[i] + 1.0f).epsilon(1e-5));
    }
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    Tape tape;
    TapeScope scope(tape);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
}

TEST_CASE("export guard refuses tensors on an active tape") {
    Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
    CHECK_NOTHROW(require_no_grad("export", x)); // no tape active
    Tape tape;
    TapeScope scope(tape);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(require_no_grad("export", y), UnsupportedOperationError);
}

namespace {

// Double-precision reference of the 10-parameter, 3-layer tanh MLP used
// below; packing order w1[2] b1 w2[2] b2[2] w3[2] b3.
double mlp_reference(const std::vector<float>& p, const std::vector<double>& x) {
    const double h1 = std::tanh(x[0] * p[0] + x[1] * p[1] + p[2]);
    const double h2a = std::tanh(h1 * p[3] + p[5]);
    const double h2b = std::tanh(h1 * p[4] + p[6]);
    return h2a * p[7] + h2b * p[8] + p[9];
}

} // namespace

TEST_CASE("3-layer MLP backward matches central finite differences") {
    Rng rng(7);
    std::vector<float> packed(10);
    for (float& v : packed) v = rng.gaussian();
    const std::vector<double> input = {0.7, -1.3};

    // autodiff route, float32
    Tensor x = Tensor::from_data({1, 2}, {0.7f, -1.3f});
    Tensor w1 = Tensor::from_data({2, 1}, {packed[0], packed[1]}, true);
    Tensor b1 = Tensor::from_data({1}, {packed[2]}, true);
    Tensor w2 = Tensor::from_data({1, 2}, {packed[3], packed[4]}, true);
    Tensor b2 = Tensor::from_data({2}, {packed[5], packed[6]}, true);
    Tensor w3 = Tensor::from_data({2, 1}, {packed[7], packed[8]}, true);
    Tensor b3 = Tensor::from_data({1}, {packed[9]}, true);

    Tape tape;
    {
        TapeScope scope(tape);
        Tensor h1 = tanh_op(add_bias(matmul(x, w1), b1));
        Tensor h2 = tanh_op(add_bias(matmul(h1, w2), b2));
        Tensor out = add_bias(matmul(h2, w3), b3);
        Tensor loss = sum_all(out);
        tape.backward(loss);
    }
    std::vector<float> backward;
    for (const Tensor* t : {&w1, &b1, &w2, &b2, &w3, &b3}) {
        backward.insert(backward.end(), t->grad_vec().begin(), t->grad_vec().end());
    }

    // independent oracle: central differences on the double-precision forward
    auto f = [&](const std::vector<float>& p) { return mlp_reference(p, input); };
    const std::vector<float> fd = finite_difference_gradient(f, packed, 1e-3f);

    REQUIRE(backward.size() == 10);
    for (size_t i = 0; i < 10; ++i) {
        CHECK(gradcheck::rel_err(backward[i], fd[i]) < 1e-4);
    }
}

TEST_CASE("finite differences on x^2 give 6 at x=3") {
    auto f = [](const std::vector<float>& p) {
        return static_cast<double>(p[0]) * p[0];
    };
    const std::vector<float> g = finite_difference_gradient(f, {3.0f}, 1e-3f);
    CHECK(std::abs(g[0] - 6.0) < 1e-5);
}

TEST_CASE("finite differences on a constant are zero") {
    auto f = [](const std::vector<float>&) { return 2.5; };
    const std::vector<float> g = finite_difference_gradient(f, {1.0f, -2.0f, 0.0f}, 1e-3f);
    for (float v : g) CHECK(v == 0.0f);
}

namespace {

double cross_entropy_reference(const std::vector<float>& logits, int rows, int cols,
                               const std::vector<int>& targets) {
    double total = 0.0;
    for (int i = 0; i < rows; ++i) {
        double maxv = logits[static_cast<size_t>(i) * cols];
        for (int j = 1; j < cols; ++j) {
            maxv = std::max(maxv, static_cast<double>(logits[static_cast<size_t>(i) * cols + j]));
        }
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) {
            denom += std::exp(static_cast<double>(logits[static_cast<size_t>(i) * cols + j]) - maxv);
        }
        total += std::log(denom) -
                 (static_cast<double>(logits[static_cast<size_t>(i) * cols + targets[static_cast<size_t>(i)]]) - maxv);
    }
    return total / rows;
}

} // namespace

TEST_CASE("cross entropy backward matches double-precision finite differences") {
    Rng rng(11);
    const int rows = 3, cols = 5;
    Tensor logits = Tensor::randn({rows, cols}, rng, 1.0f, true);
    const std::vector<int> targets = {4, 0, 2};

    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = softmax_cross_entropy(logits, targets);
        tape.backward(loss);
    }
    auto f = [&](const std::vector<float>& p) {
        return cross_entropy_reference(p, rows, cols, targets);
    };
    const std::vector<float> fd = finite_difference_gradient(f, logits.values(), 1e-3f);
    for (size_t i = 0; i < fd.size(); ++i) {
        CHECK(gradcheck::rel_err(logits.grad_vec()[i], fd[i]) < 1e-4);
    }
}

TEST_CASE("cross entropy values") {
    SUBCASE("uniform logits over 8 classes give ln 8") {
        Tensor logits = Tensor::full({3, 8}, 0.7f);
        Tensor loss = softmax_cross_entropy(logits, {0, 3, 7});
        CHECK(loss.item() == doctest::Approx(std::log(8.0)).epsilon(1e-6));
    }
    SUBCASE("saturated correct prediction is almost free") {
        Tensor logits = Tensor::from_data({1, 3}, {1000.0f, 0.0f, 0.0f});
        CHECK(softmax_cross_entropy(logits, {0}).item() < 1e-6f);
    }
    SUBCASE("matches the 64-bit reference on random logits") {
        Rng rng(3);
        for (int trial = 0; trial < 20; ++trial) {
            const int rows = 4, cols = 9;
            Tensor logits = Tensor::randn({rows, cols}, rng, 3.0f);
            std::vector<int> targets;
            for (int i = 0; i < rows; ++i) targets.push_back(rng.uniform_int(0, cols - 1));
            const double reference = cross_entropy_reference(logits.values(), rows, cols, targets);
            CHECK(std::abs(softmax_cross_entropy(logits, targets).item() - reference) < 1e-5);
        }
    }
    SUBCASE("non-negative, ln V only for constant rows") {
        Rng rng(5);
        for (int trial = 0; trial < 50; ++trial) {
            Tensor logits = Tensor::randn({2, 6}, rng, 2.0f);
            const float value = softmax_cross_entropy(logits, {1, 4}).item();
            CHECK(value >= 0.0f);
        }
        Tensor constant = Tensor::full({2, 6}, -1.3f);
        CHECK(softmax_cross_entropy(constant, {0, 5}).item() ==
              doctest::Approx(std::log(6.0)).epsilon(1e-6));
    }
    SUBCASE("target out of range is rejected") {
        Tensor logits = Tensor::full({1, 4}, 0.0f);
        CHECK_THROWS_AS(softmax_cross_entropy(logits, {4}), std::invalid_argument);
    }
}

TEST_CASE("gradient suite over every primitive") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        CHECK(gradcheck::primitive_suite_worst(seed) < 1e-3);
    }
}

TEST_CASE("adam") {
    SUBCASE("zero gradients leave parameters unchanged and advance t") {
        Rng rng(1);
        Tensor p = Tensor::randn({4}, rng, 1.0f, true);
        const std::vector<float> before = p.values();
        Adam opt({p}, {});
        opt.zero_grad();
        opt.step();
        CHECK(opt.t() == 1);
        CHECK(p.values() == before);
    }
    SUBCASE("constant unit gradient steps by about lr") {
        Tensor p = Tensor::from_data({1}, {0.0f}, true);
        AdamConfig cfg;
        cfg.lr = 0.01f;
        Adam opt({p}, cfg);
        float prev = p.item();
        for (int step = 0; step < 200; ++step) {
            p.zero_grad();
            p.grad()[0] = 1.0f;
            opt.step();
            const float delta = prev - p.item();
            prev = p.item();
            if (step > 10) CHECK(delta == doctest::Approx(cfg.lr).epsilon(0.02));
        }
    }
    SUBCASE("identical seeds give bitwise-identical trajectories") {
        auto run = [](uint64_t seed) {
            Rng rng(seed);
            Tensor w = Tensor::randn({3, 3}, rng, 0.5f, true);
            Tensor target = Tensor::randn({2, 3}, rng, 1.0f);
            Tensor x = Tensor::randn({2, 3}, rng, 1.0f);
            Adam opt({w}, {});
            for (int step = 0; step < 25; ++step) {
                opt.zero_grad();
                Tape tape;
                TapeScope scope(tape);
                Tensor loss = mse_loss(matmul(x, w), target);
                tape.backward(loss);
                opt.step();
            }
            return w.values();
        };
        const std::vector<float> a = run(99);
        const std::vector<float> b = run(99);
        CHECK(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
    }
}

TEST_CASE("forward passes are deterministic") {
    Rng rng(17);
    Tensor a = Tensor::randn({4, 6}, rng, 1.0f);
    Tensor b = Tensor::randn({6, 3}, rng, 1.0f);
    Tensor c1 = matmul(a, b);
    Tensor c2 = matmul(a, b);
    CHECK(std::memcmp(c1.data(), c2.data(), sizeof(float) * c1.numel()) == 0);
}
