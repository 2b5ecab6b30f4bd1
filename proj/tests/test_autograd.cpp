// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#include "test_support.hpp"

#include "csipred/autograd.hpp"
#include "csipred/tensor.hpp"

#include <doctest.h>

using namespace csipred;
using csipred::testing::check_gradients;
using csipred::testing::random_projection;
using csipred::testing::random_tensor;
using V = ad::Var<double>;

namespace {

V leaf(Shape s, Rng& rng, double scale = 1.0) { return ad::leaf(random_tensor<double>(std::move(s), rng, scale), true); }

void expect_grad_ok(std::vector<std::pair<std::string, V>> leaves, const std::function<V()>& out,
                    double tol = 1e-6) {
    const auto r = check_gradients(std::move(leaves), [&] { return random_projection(out(), 99); });
    INFO(r.worst);
    CHECK(r.max_rel_error < tol);
}

}  // namespace

TEST_CASE("tensor indexing is row-major") {
    Tensor<double> t({2, 3, 4});
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
    CHECK(t(1, 2, 3) == 23.0);
    CHECK(t(0, 1, 0) == 4.0);
    CHECK(t.dim(-1) == 4);
    CHECK_THROWS_AS(t.reshaped({5, 5}), std::invalid_argument);
}

TEST_CASE("tensor permute matches index mapping and inverts") {
    Rng rng(1);
    const auto x = random_tensor<double>({2, 3, 4}, rng);
    const auto y = permute(x, {2, 0, 1});
    CHECK(y.shape() == Shape{4, 2, 3});
    for (Index a = 0; a < 2; ++a)
        for (Index b = 0; b < 3; ++b)
            for (Index c = 0; c < 4; ++c) CHECK(y(c, a, b) == x(a, b, c));
    CHECK(permute(y, inverse_permutation({2, 0, 1})) == x);
}

TEST_CASE("no graph is recorded under NoGradGuard") {
    Rng rng(2);
    auto a = leaf({3}, rng);
    ad::NoGradGuard guard;
    const auto b = ad::mul(a, a);
    CHECK_FALSE(b.requires_grad());
}

TEST_CASE("backward on a non-scalar output is rejected") {
    Rng rng(3);
    auto a = leaf({3}, rng);
    CHECK_THROWS_AS(ad::backward(ad::relu(a)), std::invalid_argument);
}

TEST_CASE("gradients accumulate across shared uses") {
    auto a = ad::leaf(Tensor<double>::from({2}, {1.5, -2.0}), true);
    ad::backward(ad::sum(ad::add(a, a)));
    CHECK(a.grad()[0] == doctest::Approx(2.0));
    CHECK(a.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("element-wise op gradients") {
    Rng rng(4);
    auto a = leaf({2, 3}, rng), b = leaf({2, 3}, rng);
    expect_grad_ok({{"a", a}, {"b", b}}, [&] { return ad::add(a, b); });
    expect_grad_ok({{"a", a}, {"b", b}}, [&] { return ad::sub(a, b); });
    expect_grad_ok({{"a", a}, {"b", b}}, [&] { return ad::mul(a, b); });
    expect_grad_ok({{"a", a}}, [&] { return ad::scale(a, 2.5); });
    expect_grad_ok({{"a", a}}, [&] { return ad::add_scalar(a, -0.5); });
    expect_grad_ok({{"a", a}}, [&] { return ad::sigmoid(a); });
    expect_grad_ok({{"a", a}}, [&] { return ad::tanh(a); });
    expect_grad_ok({{"a", a}}, [&] { return ad::gelu(a); });
    expect_grad_ok({{"a", a}}, [&] { return ad::relu(a); });
}

TEST_CASE("broadcast op gradients") {
    Rng rng(5);
    auto x = leaf({2, 3, 4}, rng), y = leaf({3, 4}, rng), w = leaf({2, 3}, rng);
    expect_grad_ok({{"x", x}, {"y", y}}, [&] { return ad::add_trailing(x, y); });
    expect_grad_ok({{"x", x}, {"w", w}}, [&] { return ad::mul_leading(x, w); });
    CHECK_THROWS_AS(ad::add_trailing(x, w), std::invalid_argument);
}

TEST_CASE("shape op gradients") {
    Rng rng(6);
    auto x = leaf({2, 3, 4}, rng), z = leaf({2, 1, 4}, rng);
    expect_grad_ok({{"x", x}}, [&] { return ad::reshape(x, {6, 4}); });
    expect_grad_ok({{"x", x}}, [&] { return ad::permute(x, {1, 2, 0}); });
    expect_grad_ok({{"x", x}}, [&] { return ad::slice(x, 1, 1, 2); });
    expect_grad_ok({{"x", x}}, [&] { return ad::slice(x, 2, 1, 3); });
    expect_grad_ok({{"x", x}, {"z", z}}, [&] { return ad::concat<double>({x, z, x}, 1); });
}

TEST_CASE("slice and concat are consistent") {
    Rng rng(7);
    auto x = leaf({2, 5, 3}, rng);
    const auto parts = std::vector<V>{ad::slice(x, 1, 0, 2), ad::slice(x, 1, 2, 3)};
    CHECK(ad::concat(parts, 1).value() == x.value());
}

TEST_CASE("linear, bmm and softmax gradients") {
    Rng rng(8);
    auto x = leaf({2, 3, 4}, rng), w = leaf({5, 4}, rng), b = leaf({5}, rng);
    expect_grad_ok({{"x", x}, {"w", w}, {"b", b}}, [&] { return ad::linear(x, w, b); });
    expect_grad_ok({{"x", x}, {"w", w}}, [&] { return ad::linear(x, w, V()); });

    auto p = leaf({3, 2, 4}, rng), q = leaf({3, 4, 5}, rng), r = leaf({3, 5, 4}, rng);
    expect_grad_ok({{"p", p}, {"q", q}}, [&] { return ad::bmm(p, q); });
    expect_grad_ok({{"p", p}, {"r", r}}, [&] { return ad::bmm(p, r, true); });

    auto s = leaf({2, 4, 4}, rng);
    expect_grad_ok({{"s", s}}, [&] { return ad::softmax(s); });
    expect_grad_ok({{"s", s}}, [&] { return ad::softmax(s, true); });
}

TEST_CASE("causal softmax zeroes future keys and rows sum to one") {
    Rng rng(9);
    auto s = leaf({1, 4, 4}, rng);
    const auto p = ad::softmax(s, true).value();
    for (Index i = 0; i < 4; ++i) {
        double row = 0.0;
        for (Index j = 0; j < 4; ++j) {
            if (j > i) CHECK(p(0, i, j) == 0.0);
            row += p(0, i, j);
        }
        CHECK(row == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("layer norm normalises and has correct gradients") {
    Rng rng(10);
    auto x = leaf({3, 6}, rng, 3.0), g = leaf({6}, rng), b = leaf({6}, rng);
    const auto ones = ad::constant(Tensor<double>::constant({6}, 1.0));
    const auto zeros = ad::constant(Tensor<double>::zeros({6}));
    const auto y = ad::layer_norm(x, ones, zeros).value();
    for (Index r = 0; r < 3; ++r) {
        const auto row = y.matrix(6).row(r);
        CHECK(row.mean() == doctest::Approx(0.0).epsilon(1e-12));
        CHECK((row.array() - row.mean()).square().mean() == doctest::Approx(1.0).epsilon(1e-4));
    }
    expect_grad_ok({{"x", x}, {"g", g}, {"b", b}}, [&] { return ad::layer_norm(x, g, b); });
}

TEST_CASE("conv2d, pooling and projection gradients") {
    Rng rng(11);
    auto x = leaf({2, 3, 5, 6}, rng), w = leaf({4, 3, 3, 3}, rng), b = leaf({4}, rng);
    expect_grad_ok({{"x", x}, {"w", w}, {"b", b}}, [&] { return ad::conv2d(x, w, b, 1); });
    expect_grad_ok({{"x", x}}, [&] { return ad::adaptive_avg_pool2d(x, 3, 4); });
    const auto filters = random_tensor<double>({3, 30}, rng);
    expect_grad_ok({{"x", x}}, [&] { return ad::channel_project(ad::reshape(x, {2, 3, 30}), filters); });
    expect_grad_ok({{"x", x}}, [&] { return ad::mean_last(x); });
}

TEST_CASE("same-padded conv keeps the spatial size") {
    Rng rng(12);
    auto x = leaf({1, 2, 4, 7}, rng), w = leaf({5, 2, 3, 3}, rng);
    CHECK(ad::conv2d(x, w, V(), 1).shape() == Shape{1, 5, 4, 7});
}

TEST_CASE("adaptive pooling uses floor/ceil bins") {
    // 5 -> 3 bins: [0,2), [1,4), [3,5)
    Tensor<double> x({1, 1, 1, 5});
    for (Index i = 0; i < 5; ++i) x[i] = static_cast<double>(i);
    const auto y = ad::adaptive_avg_pool2d(ad::constant(x), 1, 3).value();
    CHECK(y[0] == doctest::Approx(0.5));
    CHECK(y[1] == doctest::Approx(2.0));
    CHECK(y[2] == doctest::Approx(3.5));
}

TEST_CASE("1x1 convolution equals a point-wise linear map") {
    Rng rng(13);
    const auto x = random_tensor<double>({2, 3, 4, 5}, rng);
    const auto w = random_tensor<double>({6, 3}, rng);
    const auto b = random_tensor<double>({6}, rng);
    const auto conv = ad::conv2d(ad::constant(x), ad::constant(w.reshaped({6, 3, 1, 1})), ad::constant(b), 0).value();
    // channels-last linear, then back to channels-first
    const auto xl = ad::permute(ad::constant(x), {0, 2, 3, 1});
    const auto lin = ad::permute(ad::linear(xl, ad::constant(w), ad::constant(b)), {0, 3, 1, 2}).value();
    CHECK((conv.data() - lin.data()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("nmse loss value and gradient") {
    Rng rng(14);
    auto p = leaf({2, 3}, rng);
    const auto t = random_tensor<double>({2, 3}, rng);
    const double expected = (p.value().data() - t.data()).squaredNorm() / t.data().squaredNorm();
    CHECK(ad::nmse_loss(p, t).value()[0] == doctest::Approx(expected).epsilon(1e-14));
    const auto r = check_gradients({{"p", p}}, [&] { return ad::nmse_loss(p, t); });
    CHECK(r.max_rel_error < 1e-6);
    CHECK_THROWS_AS(ad::nmse_loss(p, Tensor<double>::zeros({2, 3})), std::invalid_argument);
}
