#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "oracles.hpp"
#include "qvit/tensor.hpp"

using namespace qvit;

namespace {

Tensor vec(std::vector<double> v, bool rg = false) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v), rg);
}

void expect_values(const Tensor& t, const std::vector<double>& expected, double tol) {
    ASSERT_EQ(t.size(), expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(t[i], expected[i], tol) << "index " << i;
}

}  // namespace

// ----------------------------------------------------------------------------
// Forward examples
// ----------------------------------------------------------------------------

TEST(Affine, DiagonalWeight) {
    auto tape = Tape::inference();
    auto out = affine(tape, vec({1, 0}), Tensor({2, 2}, {2, 0, 0, 3}), vec({0, 0}));
    expect_values(out, {2, 0}, 0);
}

TEST(Affine, ZeroInputReturnsBias) {
    auto tape = Tape::inference();
    auto out = affine(tape, vec({0, 0}), Tensor({2, 2}, {7, -3, 0.5, 11}), vec({5, -1}));
    expect_values(out, {5, -1}, 0);
}

TEST(Affine, HandMultiply) {
    auto tape = Tape::inference();
    auto out = affine(tape, vec({1, 2}), Tensor({2, 2}, {1, 1, 2, -1}), vec({1, 1}));
    expect_values(out, {4, 1}, 0);
}

TEST(Affine, BroadcastsOverLeadingAxes) {
    auto tape = Tape::inference();
    auto out = affine(tape, Tensor({2, 2}, {1, 2, 0, 0}), Tensor({2, 2}, {1, 1, 2, -1}), vec({1, 1}));
    EXPECT_EQ(out.shape(), (Shape{2, 2}));
    expect_values(out, {4, 1, 1, 1}, 0);
}

TEST(Affine, ShapeMismatchNamesBothShapes) {
    auto tape = Tape::inference();
    try {
        affine(tape, vec({1, 2, 3}), Tensor({2, 2}, {1, 1, 2, -1}), vec({1, 1}));
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        std::string msg = e.what();
        EXPECT_NE(msg.find("[3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[2x2]"), std::string::npos) << msg;
    }
}

TEST(Relu, Examples) {
    auto tape = Tape::inference();
    expect_values(relu(tape, vec({-1, 0, 2})), {0, 0, 2}, 0);
    expect_values(relu(tape, vec({-3, -0.1, -7})), {0, 0, 0}, 0);
    expect_values(relu(tape, vec({0.5})), {0.5}, 0);
}

TEST(Relu, SubgradientAtZeroIsZero) {
    Tape tape;
    auto x = vec({0.0, 1.0}, true);
    auto g = tape.backward(sum(tape, relu(tape, x))).get(x);
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[1], 1.0);
}

TEST(Gelu, Examples) {
    auto tape = Tape::inference();
    EXPECT_EQ(gelu(tape, vec({0}))[0], 0.0);
    EXPECT_NEAR(gelu(tape, vec({10}))[0], 10.0, 1e-9);
    // Φ(1) from standard normal tables.
    EXPECT_NEAR(gelu(tape, vec({1}))[0], 0.8413447460685429, 1e-12);
}

TEST(Softmax, Examples) {
    auto tape = Tape::inference();
    expect_values(softmax(tape, vec({0, 0})), {0.5, 0.5}, 1e-15);
    expect_values(softmax(tape, vec({1000, 1000})), {0.5, 0.5}, 1e-15);
    expect_values(softmax(tape, vec({std::log(1.0), std::log(2.0), std::log(3.0)})), {1.0 / 6, 2.0 / 6, 3.0 / 6}, 1e-15);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> shift(-50, 50);
    for (int trial = 0; trial < 100; ++trial) {
        auto tape = Tape::inference();
        auto z = oracle::random_tensor(rng, {3, 5}, false, -20, 20);
        const double c = shift(rng);
        std::vector<double> shifted(z.values().begin(), z.values().end());
        for (auto& v : shifted) v += c;
        auto y = softmax(tape, z);
        auto ys = softmax(tape, Tensor({3, 5}, shifted));
        for (std::size_t r = 0; r < 3; ++r) {
            double total = 0;
            for (std::size_t j = 0; j < 5; ++j) {
                total += y[r * 5 + j];
                EXPECT_GT(y[r * 5 + j], 0.0);
                EXPECT_LT(y[r * 5 + j], 1.0);
            }
            EXPECT_NEAR(total, 1.0, 1e-12);
        }
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], ys[i], 1e-12);
    }
}

TEST(LayerNorm, Examples) {
    auto tape = Tape::inference();
    auto ones2 = vec({1, 1}), zeros2 = vec({0, 0});
    expect_values(layer_norm(tape, vec({3, 3, 3, 3}), vec({1, 1, 1, 1}), vec({0, 0, 0, 0})), {0, 0, 0, 0}, 0);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    expect_values(layer_norm(tape, vec({1, -1}), ones2, zeros2), {expected, -expected}, 1e-15);
    EXPECT_NEAR(expected, 0.999995, 1e-6);
    expect_values(layer_norm(tape, vec({4, -2}), zeros2, vec({7, 7})), {7, 7}, 0);
}

TEST(LayerNorm, NormalizedSliceStatistics) {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        auto tape = Tape::inference();
        const std::size_t d = 8;
        auto x = oracle::random_tensor(rng, {4, d}, false, -10, 10);
        auto y = layer_norm(tape, x, Tensor::full({d}, 1.0), Tensor::zeros({d}));
        for (std::size_t r = 0; r < 4; ++r) {
            double mu = 0, var = 0;
            for (std::size_t j = 0; j < d; ++j) mu += y[r * d + j];
            mu /= d;
            for (std::size_t j = 0; j < d; ++j) var += (y[r * d + j] - mu) * (y[r * d + j] - mu);
            var /= d;
            EXPECT_LT(std::abs(mu), 1e-10);
            EXPECT_NEAR(var, 1.0, 1e-4);
        }
    }
}

TEST(CrossEntropy, Examples) {
    auto tape = Tape::inference();
    const std::vector<int> zero{0}, zeros{0, 0};
    EXPECT_NEAR(cross_entropy(tape, Tensor({1, 2}, {1, 0}), zero).item(), 0.0, 1e-15);
    EXPECT_NEAR(cross_entropy(tape, Tensor({1, 2}, {0.5, 0.5}), zero).item(), std::log(2.0), 1e-15);
    auto probs = Tensor({2, 2}, {0.5, 0.5, 0.5, 0.5});
    EXPECT_NEAR(cross_entropy(tape, probs, zeros, Reduction::sum).item(), 2 * std::log(2.0), 1e-15);
    EXPECT_NEAR(cross_entropy(tape, probs, zeros, Reduction::mean).item(), std::log(2.0), 1e-15);
    // Clamped at 1e-12 when the labelled class has probability zero.
    EXPECT_NEAR(cross_entropy(tape, Tensor({1, 2}, {0, 1}), zero).item(), -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, LogitsMatchProbabilityForm) {
    auto tape = Tape::inference();
    auto logits = Tensor({2, 3}, {0.3, -1.2, 2.0, 5.0, 5.0, -3.0});
    const std::vector<int> labels{2, 0};
    auto fused = cross_entropy_logits(tape, logits, labels, Reduction::mean).item();
    auto explicit_form = cross_entropy(tape, softmax(tape, logits), labels, Reduction::mean).item();
    EXPECT_NEAR(fused, explicit_form, 1e-14);
}

TEST(CrossEntropy, InvalidLabelIsRangeError) {
    auto tape = Tape::inference();
    const std::vector<int> bad{2}, neg{-1};
    EXPECT_THROW(cross_entropy(tape, Tensor({1, 2}, {0.5, 0.5}), bad), RangeError);
    EXPECT_THROW(cross_entropy_logits(tape, Tensor({1, 2}, {0.5, 0.5}), neg), RangeError);
}

TEST(ShapeOps, ConcatSplitRoundTrip) {
    auto tape = Tape::inference();
    auto a = Tensor({2, 1}, {1, 2}), b = Tensor({2, 2}, {3, 4, 5, 6});
    auto c = concat(tape, {a, b}, 1);
    expect_values(c, {1, 3, 4, 2, 5, 6}, 0);
    auto parts = split(tape, c, {1, 2}, 1);
    expect_values(parts[0], {1, 2}, 0);
    expect_values(parts[1], {3, 4, 5, 6}, 0);
    EXPECT_EQ(parts[1].shape(), (Shape{2, 2}));
}

TEST(ShapeOps, TransposeTwiceIsIdentityAndMean) {
    auto tape = Tape::inference();
    auto x = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
    auto xt = transpose(tape, x);
    EXPECT_EQ(xt.shape(), (Shape{3, 2}));
    expect_values(xt, {1, 4, 2, 5, 3, 6}, 0);
    expect_values(transpose(tape, xt), {1, 2, 3, 4, 5, 6}, 0);
    EXPECT_EQ(mean(tape, vec({2, 4})).item(), 3.0);
}

TEST(ShapeOps, MismatchesAreDimensionErrors) {
    auto tape = Tape::inference();
    EXPECT_THROW(add(tape, vec({1, 2}), vec({1, 2, 3})), DimensionError);
    EXPECT_THROW(mul(tape, vec({1, 2}), Tensor({2, 1}, {1, 2})), DimensionError);
    EXPECT_THROW(reshape(tape, vec({1, 2, 3}), {2, 2}), DimensionError);
    EXPECT_THROW(matmul(tape, Tensor({2, 3}, std::vector<double>(6)), Tensor({2, 3}, std::vector<double>(6))),
                 DimensionError);
    EXPECT_THROW(concat(tape, {Tensor({2, 1}, {1, 2}), Tensor({3, 1}, {1, 2, 3})}, 1), DimensionError);
    EXPECT_THROW(split(tape, vec({1, 2, 3}), {1, 1}, 0), DimensionError);
    EXPECT_THROW(Tensor({2, 2}, {1, 2, 3}), DimensionError);
}

// ----------------------------------------------------------------------------
// Backward
// ----------------------------------------------------------------------------

TEST(Backward, SumOfAffineGivesOuterProduct) {
    Tape tape;
    auto w = Tensor::parameter({2, 3}, {1, 2, 3, 4, 5, 6});
    auto b = Tensor::parameter({2}, {0, 0});
    auto x = vec({0.5, -1, 2});
    auto grads = tape.backward(sum(tape, affine(tape, x, w, b)));
    // d/dW_ij Σ_i (Wx)_i = x_j for every row
    expect_values(Tensor({2, 3}, grads.get(w)), {0.5, -1, 2, 0.5, -1, 2}, 0);
    expect_values(Tensor({2}, grads.get(b)), {1, 1}, 0);
}

TEST(Backward, DetachedTensorReceivesNoGradient) {
    Tape tape;
    auto x = vec({1, 2}, true);
    auto frozen = x.detach();
    auto loss = sum(tape, add(tape, mul(tape, x, x), frozen));
    auto grads = tape.backward(loss);
    EXPECT_TRUE(grads.contains(x));
    EXPECT_FALSE(grads.contains(frozen));
    expect_values(Tensor({2}, grads.get(frozen)), {0, 0}, 0);
}

TEST(Backward, ReusedTensorAccumulates) {
    Tape tape;
    auto x = vec({3, -2}, true);
    auto g = tape.backward(sum(tape, mul(tape, x, x))).get(x);
    expect_values(Tensor({2}, g), {6, -4}, 0);
}

TEST(Backward, ChainMatchesFiniteDifferences) {
    std::mt19937_64 rng(3);
    auto w = oracle::random_tensor(rng, {4, 3});
    auto b = oracle::random_tensor(rng, {4});
    auto x = oracle::random_tensor(rng, {2, 3}, false);
    auto f = [&](Tape& t) { return sum(t, gelu(t, affine(t, x, w, b))); };
    for (auto p : {w, b}) {
        auto report = finite_diff_check(f, p, 1e-5);
        EXPECT_LT(report.max_abs_error, 1e-7);
    }
}

TEST(Backward, SecondCallWithoutResetIsError) {
    Tape tape;
    auto x = vec({1, 2}, true);
    auto loss = sum(tape, mul(tape, x, x));
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), ContractError);
    tape.reset();
    auto loss2 = sum(tape, mul(tape, x, x));
    EXPECT_NO_THROW(tape.backward(loss2));
}

TEST(Backward, NonScalarLossIsContractError) {
    Tape tape;
    auto x = vec({1, 2}, true);
    EXPECT_THROW(tape.backward(mul(tape, x, x)), ContractError);
}

TEST(Backward, InferenceTapeRecordsNothing) {
    auto tape = Tape::inference();
    auto x = vec({1, 2}, true);
    auto loss = sum(tape, mul(tape, x, x));
    EXPECT_EQ(tape.size(), 0u);
    EXPECT_FALSE(loss.requires_grad());
}

// ----------------------------------------------------------------------------
// finite_diff_check
// ----------------------------------------------------------------------------

TEST(FiniteDiff, QuadraticIsExact) {
    auto p = vec({0.3, -1.5, 2.0, 4.0}, true);
    auto report = finite_diff_check([&](Tape& t) { return sum(t, mul(t, p, p)); }, p, 1e-3);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(report.autodiff[i], 2 * p[i], 1e-15);
    EXPECT_LT(report.max_abs_error, 1e-9);
}

TEST(FiniteDiff, CrossEntropySoftmaxAffine) {
    std::mt19937_64 rng(5);
    auto w = oracle::random_tensor(rng, {3, 4});
    auto b = oracle::random_tensor(rng, {3});
    auto x = oracle::random_tensor(rng, {5, 4}, false);
    const std::vector<int> labels{0, 2, 1, 1, 0};
    auto f = [&](Tape& t) { return cross_entropy(t, softmax(t, affine(t, x, w, b)), labels, Reduction::mean); };
    EXPECT_LT(finite_diff_check(f, w, 1e-5).max_rel_error, 1e-6);
    EXPECT_LT(finite_diff_check(f, b, 1e-5).max_rel_error, 1e-6);
}

TEST(FiniteDiff, ZeroStepIsError) {
    auto p = vec({1.0}, true);
    EXPECT_THROW(finite_diff_check([&](Tape& t) { return sum(t, p); }, p, 0.0), ContractError);
}

// ----------------------------------------------------------------------------
// Property: every op's backward rule agrees with central differences.
// ----------------------------------------------------------------------------

namespace {

struct OpCase {
    const char* name;
    // Builds the op output from tensors created by `make`; all inputs require grad.
    std::function<std::pair<std::vector<Tensor>, std::function<Tensor(Tape&)>>(std::mt19937_64&)> make;
};

Tensor weighted_sum(Tape& t, const Tensor& y, const Tensor& w) { return sum(t, mul(t, y, w)); }

std::vector<OpCase> op_cases() {
    using oracle::random_tensor;
    using Built = std::pair<std::vector<Tensor>, std::function<Tensor(Tape&)>>;
    std::vector<OpCase> cases;
    auto unary = [](const char* name, std::function<Tensor(Tape&, const Tensor&)> op, Shape shape, double lo = -2,
                    double hi = 2) {
        return OpCase{name, [=](std::mt19937_64& rng) -> Built {
                          auto x = random_tensor(rng, shape, true, lo, hi);
                          auto probe = Tape::inference();
                          auto y0 = op(probe, x);
                          auto w = random_tensor(rng, y0.shape(), false);
                          return {{x}, [=](Tape& t) { return weighted_sum(t, op(t, x), w); }};
                      }};
    };
    cases.push_back(unary("relu", [](Tape& t, const Tensor& x) { return relu(t, x); }, {3, 4}, 0.05, 2));
    cases.push_back(unary("relu_neg", [](Tape& t, const Tensor& x) { return relu(t, x); }, {3, 4}, -2, -0.05));
    cases.push_back(unary("gelu", [](Tape& t, const Tensor& x) { return gelu(t, x); }, {3, 4}));
    cases.push_back(unary("softmax", [](Tape& t, const Tensor& x) { return softmax(t, x); }, {3, 4}));
    cases.push_back(unary("scale", [](Tape& t, const Tensor& x) { return scale(t, x, -1.7); }, {5}));
    cases.push_back(unary("transpose", [](Tape& t, const Tensor& x) { return transpose(t, x); }, {3, 2}));
    cases.push_back(unary("reshape", [](Tape& t, const Tensor& x) { return reshape(t, x, {2, 3}); }, {6}));
    cases.push_back(unary("slice", [](Tape& t, const Tensor& x) { return slice(t, x, 1, 1, 2); }, {3, 4}));
    cases.push_back(unary("mean", [](Tape& t, const Tensor& x) { return mean(t, x); }, {3, 4}));
    cases.push_back(unary("sum", [](Tape& t, const Tensor& x) { return sum(t, x); }, {7}));
    cases.push_back(OpCase{"add", [](std::mt19937_64& rng) -> Built {
                               auto a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 3});
                               auto w = random_tensor(rng, {2, 3}, false);
                               return {{a, b}, [=](Tape& t) { return weighted_sum(t, add(t, a, b), w); }};
                           }});
    cases.push_back(OpCase{"mul", [](std::mt19937_64& rng) -> Built {
                               auto a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 3});
                               auto w = random_tensor(rng, {2, 3}, false);
                               return {{a, b}, [=](Tape& t) { return weighted_sum(t, mul(t, a, b), w); }};
                           }});
    cases.push_back(OpCase{"matmul", [](std::mt19937_64& rng) -> Built {
                               auto a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {3, 4});
                               auto w = random_tensor(rng, {2, 4}, false);
                               return {{a, b}, [=](Tape& t) { return weighted_sum(t, matmul(t, a, b), w); }};
                           }});
    cases.push_back(OpCase{"concat", [](std::mt19937_64& rng) -> Built {
                               auto a = random_tensor(rng, {2, 3}), b = random_tensor(rng, {2, 1});
                               auto w0 = random_tensor(rng, {2, 4}, false), w1 = random_tensor(rng, {4, 2}, false);
                               return {{a, b}, [=](Tape& t) {
                                           auto c = concat(t, {a, b}, 1);
                                           auto d = concat(t, {transpose(t, a), transpose(t, b)}, 0);
                                           return add(t, weighted_sum(t, c, w0), weighted_sum(t, d, w1));
                                       }};
                           }});
    cases.push_back(OpCase{"affine", [](std::mt19937_64& rng) -> Built {
                               // Positive operands: no gradient element cancels to the FD noise floor.
                               auto x = random_tensor(rng, {2, 3, 4}, true, 0.1, 1),
                                    w = random_tensor(rng, {5, 4}, true, 0.1, 1), b = random_tensor(rng, {5});
                               auto r = random_tensor(rng, {2, 3, 5}, false, 0.5, 1.5);
                               return {{x, w, b}, [=](Tape& t) { return weighted_sum(t, affine(t, x, w, b), r); }};
                           }});
    cases.push_back(OpCase{"bias_add", [](std::mt19937_64& rng) -> Built {
                               auto x = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4});
                               auto r = random_tensor(rng, {3, 4}, false);
                               return {{x, b}, [=](Tape& t) { return weighted_sum(t, bias_add(t, x, b), r); }};
                           }});
    cases.push_back(OpCase{"layer_norm", [](std::mt19937_64& rng) -> Built {
                               auto x = random_tensor(rng, {3, 5}, true, -3, 3), g = random_tensor(rng, {5}),
                                    b = random_tensor(rng, {5});
                               auto r = random_tensor(rng, {3, 5}, false);
                               return {{x, g, b}, [=](Tape& t) { return weighted_sum(t, layer_norm(t, x, g, b), r); }};
                           }});
    cases.push_back(OpCase{"cross_entropy", [](std::mt19937_64& rng) -> Built {
                               auto z = random_tensor(rng, {4, 3}, true, -2, 2);
                               std::vector<int> labels{0, 2, 1, 2};
                               return {{z}, [=](Tape& t) {
                                           return cross_entropy(t, softmax(t, z), labels, Reduction::sum);
                                       }};
                           }});
    cases.push_back(OpCase{"cross_entropy_logits", [](std::mt19937_64& rng) -> Built {
                               auto z = random_tensor(rng, {4, 3}, true, -2, 2);
                               std::vector<int> labels{1, 0, 1, 2};
                               return {{z}, [=](Tape& t) {
                                           return cross_entropy_logits(t, z, labels, Reduction::mean);
                                       }};
                           }});
    return cases;
}

}  // namespace

TEST(GradientProperty, EveryOpMatchesCentralDifferencesOver100Seeds) {
    for (const auto& c : op_cases()) {
        double worst = 0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            std::mt19937_64 rng(seed);
            auto [inputs, f] = c.make(rng);
            for (auto& in : inputs) worst = std::max(worst, finite_diff_check(f, in, 1e-5, 1e-8).max_rel_error);
        }
        EXPECT_LT(worst, 1e-6) << c.name;
    }
}
