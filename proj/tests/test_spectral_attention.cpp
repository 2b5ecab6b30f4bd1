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

#include "csipred/spectral_attention.hpp"

#include <doctest.h>

#include <set>

using namespace csipred;
using testing::random_tensor;

namespace {

MscaParams<double> zero_params(Index channels, Index groups, Index reduction) {
    MscaParams<double> p;
    const Index hidden = channels / reduction;
    p.fc1_weight = ad::leaf(Tensor<double>::zeros({hidden, channels}), true);
    p.fc1_bias = ad::leaf(Tensor<double>::zeros({hidden}), true);
    p.fc2_weight = ad::leaf(Tensor<double>::zeros({channels, hidden}), true);
    p.fc2_bias = ad::leaf(Tensor<double>::zeros({channels}), true);
    p.groups = groups;
    p.reduction = reduction;
    return p;
}

DctBasisSet<double> zigzag_set(Index n, Index h, Index w) {
    return DctBasisSet<double>(h, w, select_frequencies(n, h, w, FrequencySelection::ZigzagLow));
}

}  // namespace

TEST_CASE("DC basis is all ones") {
    CHECK(dct_basis(0, 0, 7, 7) == Eigen::MatrixXd::Ones(7, 7));
}

TEST_CASE("first vertical basis on a 2x2 grid") {
    const auto f = dct_basis(1, 0, 2, 2);
    const double r = std::sqrt(0.5);
    CHECK(f(0, 0) == doctest::Approx(r).epsilon(1e-12));
    CHECK(f(0, 1) == doctest::Approx(r).epsilon(1e-12));
    CHECK(f(1, 0) == doctest::Approx(-r).epsilon(1e-12));
    CHECK(f(1, 1) == doctest::Approx(-r).epsilon(1e-12));
    CHECK_THROWS_AS(dct_basis(2, 0, 2, 2), std::out_of_range);
    CHECK_THROWS_AS(dct_basis(0, -1, 2, 2), std::out_of_range);
}

TEST_CASE("DC and first harmonic are orthogonal on any grid") {
    for (Index h : {2, 3, 5, 7})
        for (Index w : {1, 4, 7}) CHECK(std::abs(dct_project(dct_basis(0, 0, h, w), dct_basis(1, 0, h, w))) < 1e-12);
}

TEST_CASE("projection examples") {
    CHECK(dct_project(Eigen::MatrixXd::Ones(7, 7), dct_basis(0, 0, 7, 7)) == doctest::Approx(49.0));
    CHECK(dct_project(dct_basis(1, 0, 2, 2), dct_basis(1, 0, 2, 2)) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(std::abs(dct_project(Eigen::MatrixXd::Ones(7, 7), dct_basis(1, 0, 7, 7))) < 1e-12);
    CHECK_THROWS_AS(dct_project(Eigen::MatrixXd::Ones(3, 3), dct_basis(0, 0, 2, 2)), std::invalid_argument);
}

TEST_CASE("DC projection equals area times mean") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd q = Eigen::MatrixXd::Random(5, 6) * 3.0;
        CHECK(dct_project(q, dct_basis(0, 0, 5, 6)) == doctest::Approx(30.0 * q.mean()).epsilon(1e-13));
    }
}

TEST_CASE("all 7x7 bases are mutually orthogonal") {
    const auto order = zigzag_order(7, 7);
    double worst = 0.0;
    for (std::size_t a = 0; a < order.size(); ++a)
        for (std::size_t b = a + 1; b < order.size(); ++b)
            worst = std::max(worst, std::abs(dct_project(dct_basis(order[a].u, order[a].v, 7, 7),
                                                         dct_basis(order[b].u, order[b].v, 7, 7))));
    CHECK(worst < 1e-9);
}

TEST_CASE("zigzag selection") {
    using F = FrequencyIndex;
    CHECK(select_frequencies(1, 7, 7, FrequencySelection::ZigzagLow) == std::vector<F>{{0, 0}});
    CHECK(select_frequencies(4, 7, 7, FrequencySelection::ZigzagLow) == std::vector<F>{{0, 0}, {0, 1}, {1, 0}, {2, 0}});
    const auto all = select_frequencies(49, 7, 7, FrequencySelection::ZigzagLow);
    CHECK(std::set<F>(all.begin(), all.end()).size() == 49);
    CHECK(all.back() == F{6, 6});
    CHECK_THROWS_AS(select_frequencies(50, 7, 7, FrequencySelection::ZigzagLow), std::invalid_argument);
}

TEST_CASE("explicit frequency list is validated") {
    using F = FrequencyIndex;
    const std::vector<F> ok{{2, 3}, {0, 0}};
    CHECK(select_frequencies(2, 7, 7, FrequencySelection::ExplicitList, ok) == ok);
    CHECK_THROWS_AS(select_frequencies(2, 7, 7, FrequencySelection::ExplicitList, {{1, 1}, {1, 1}}),
                    std::invalid_argument);
    CHECK_THROWS_AS(select_frequencies(1, 7, 7, FrequencySelection::ExplicitList, {{7, 0}}), std::out_of_range);
    CHECK_THROWS_AS(DctBasisSet<double>(4, 4, {{0, 1}, {0, 1}}), std::invalid_argument);
}

TEST_CASE("zero input gives zero output and half weights") {
    Rng rng(2);
    auto p = msca_init<double>(8, 4, 2, rng);
    const auto basis = zigzag_set(4, 3, 3);
    const auto x = ad::constant(Tensor<double>::zeros({2, 8, 4, 4}));
    CHECK(msca_descriptor(x, basis).value().data().cwiseAbs().maxCoeff() == 0.0);
    const auto w = attention_weights(msca_descriptor(x, basis), p).value();
    for (Index i = 0; i < w.size(); ++i) CHECK(w[i] == 0.5);
    CHECK(msca_forward(x, p, basis).value().data().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("zero FC parameters halve the input") {
    Rng rng(3);
    const auto p = zero_params(8, 4, 4);
    const auto x = ad::constant(random_tensor<double>({2, 8, 5, 6}, rng));
    const auto y = msca_forward(x, p, zigzag_set(4, 3, 3)).value();
    CHECK(y.data() == (0.5 * x.value().data()).eval());
}

TEST_CASE("paper-size shapes") {
    Rng rng(4);
    auto p = msca_init<float>(128, 32, 16, rng);
    CHECK(p.fc1_weight.shape() == Shape{8, 128});
    CHECK(p.fc2_weight.shape() == Shape{128, 8});
    const DctBasisSet<float> basis(7, 7, select_frequencies(32, 7, 7, FrequencySelection::ZigzagLow));
    const auto x = ad::constant(random_tensor<float>({1, 128, 32, 64}, rng));
    CHECK(msca_descriptor(x, basis).shape() == Shape{1, 128});
    CHECK(msca_forward(x, p, basis).shape() == Shape{1, 128, 32, 64});
}

TEST_CASE("init is deterministic and validates shapes") {
    Rng a(5), b(5), c(6);
    const auto pa = msca_init<double>(16, 4, 4, a);
    const auto pb = msca_init<double>(16, 4, 4, b);
    CHECK(pa.fc1_weight.value() == pb.fc1_weight.value());
    CHECK(pa.fc2_weight.value() == pb.fc2_weight.value());
    CHECK(pa.fc1_bias.value().data().cwiseAbs().maxCoeff() == 0.0);
    CHECK(msca_init<double>(16, 4, 4, c).fc1_weight.value() != pa.fc1_weight.value());
    CHECK_THROWS_AS(msca_init<double>(16, 4, 32, c), std::invalid_argument);
    CHECK_THROWS_AS(msca_init<double>(18, 4, 2, c), std::invalid_argument);
}

TEST_CASE("registered parameters are only the two FC layers") {
    Rng rng(7);
    ParameterSet<double> params;
    msca_init<double>(16, 4, 4, rng, &params, "m");
    CHECK(params.entries().size() == 4);
    CHECK(params.total_count() == 16 * 4 + 4 + 4 * 16 + 16);
}

TEST_CASE("output is bounded by the input") {
    Rng rng(8);
    auto p = msca_init<double>(8, 2, 2, rng);
    const auto x = ad::constant(random_tensor<double>({3, 8, 4, 5}, rng, 10.0));
    const auto basis = zigzag_set(2, 4, 4);
    const auto w = attention_weights(msca_descriptor(x, basis), p).value();
    CHECK(w.data().minCoeff() > 0.0);
    CHECK(w.data().maxCoeff() < 1.0);
    const auto y = msca_forward(x, p, basis).value();
    CHECK((y.data().cwiseAbs().array() <= x.value().data().cwiseAbs().array()).all());
}

TEST_CASE("descriptor is permutation equivariant within a group") {
    Rng rng(9);
    const Index channels = 8, groups = 2, per_group = channels / groups;
    const auto x = random_tensor<double>({1, channels, 4, 4}, rng);
    const auto basis = zigzag_set(groups, 4, 4);
    // swap channels 4 and 6, both inside group 1
    auto xp = x;
    for (Index i = 0; i < 16; ++i) std::swap(xp[4 * 16 + i], xp[6 * 16 + i]);
    const auto d = msca_descriptor(ad::constant(x), basis).value();
    const auto dp = msca_descriptor(ad::constant(xp), basis).value();
    CHECK(dp[4] == doctest::Approx(d[6]).epsilon(1e-14));
    CHECK(dp[6] == doctest::Approx(d[4]).epsilon(1e-14));
    for (Index c : {0, 1, 2, 3, 5, 7}) CHECK(dp[c] == d[c]);
    CHECK(per_group == 4);
}

TEST_CASE("gradients through the attention block") {
    Rng rng(10);
    auto p = msca_init<double>(8, 4, 2, rng);
    auto x = ad::leaf(random_tensor<double>({2, 8, 4, 4}, rng), true);
    const auto basis = zigzag_set(4, 3, 3);
    const auto r = testing::check_gradients(
        {{"x", x}, {"fc1.w", p.fc1_weight}, {"fc1.b", p.fc1_bias}, {"fc2.w", p.fc2_weight}, {"fc2.b", p.fc2_bias}},
        [&] { return testing::random_projection(msca_forward(x, p, basis), 3); });
    INFO(r.worst);
    CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("GAP attention equals DC attention scaled by the pooled area") {
    Rng rng(11);
    auto p = msca_init<double>(8, 4, 2, rng);
    const auto x = ad::constant(random_tensor<double>({2, 8, 5, 6}, rng));
    const auto gap = gap_attention_forward(x, p, 3, 3).value();
    const auto dc = msca_forward(x, p, DctBasisSet<double>::repeated_dc(4, 3, 3, 1.0 / 9.0)).value();
    CHECK((gap.data() - dc.data()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("group count mismatch is rejected") {
    Rng rng(12);
    auto p = msca_init<double>(8, 4, 2, rng);
    const auto x = ad::constant(random_tensor<double>({1, 8, 4, 4}, rng));
    CHECK_THROWS_AS(msca_forward(x, p, zigzag_set(2, 3, 3)), std::invalid_argument);
    const auto y = ad::constant(random_tensor<double>({1, 6, 4, 4}, rng));
    CHECK_THROWS_AS(msca_forward(y, p, zigzag_set(4, 3, 3)), std::invalid_argument);
}
