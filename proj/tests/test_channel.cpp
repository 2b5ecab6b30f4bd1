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

#include "csipred/channel.hpp"
#include "csipred/dataset.hpp"

#include <doctest.h>

#include <Eigen/SVD>

using namespace csipred;
using cd = std::complex<double>;

namespace {

SystemConfig one_by_one() {
    SystemConfig sys;
    sys.n_bs = 1;
    sys.n_ue = 1;
    return sys;
}

RaySet single_ray(cd gain, double delay, double doppler) {
    RaySet set;
    Ray r;
    r.gain = gain;
    r.delay = delay;
    r.doppler = doppler;
    set.rays.push_back(r);
    return set;
}

}  // namespace

TEST_CASE("array response at boresight is all ones") {
    for (double phi : {0.0, 0.7, -2.0}) {
        const auto a = array_response(0.0, phi, 4);
        CHECK(a.size() == 4);
        for (Index m = 0; m < 4; ++m) CHECK(std::abs(a[m] - cd(1.0, 0.0)) < 1e-15);
    }
}

TEST_CASE("array response end-fire pair alternates sign") {
    const auto a = array_response(kPi / 2, 0.0, 2);
    CHECK(std::abs(a[0] - cd(1.0, 0.0)) < 1e-15);
    CHECK(std::abs(a[1] - cd(-1.0, 0.0)) < 1e-12);
}

TEST_CASE("array response entries are unit modulus") {
    Rng rng(3);
    std::uniform_real_distribution<double> u(-kPi, kPi);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = array_response(u(rng), u(rng), 8);
        CHECK((a.cwiseAbs().array() - 1.0).abs().maxCoeff() < 1e-14);
    }
    CHECK_THROWS_AS(array_response(0.1, 0.1, 0), std::invalid_argument);
}

TEST_CASE("single static ray gives a unit channel") {
    const auto sys = one_by_one();
    const auto rays = single_ray(1.0, 0.0, 0.0);
    for (double t : {0.0, 1e-3, 0.5})
        for (double f : {1e9, 2.4e9}) CHECK(std::abs(evaluate_channel(rays, t, f, sys)(0, 0) - cd(1.0, 0.0)) < 1e-15);
}

TEST_CASE("half-cycle delay flips the sign") {
    const auto sys = one_by_one();
    const double f = 2.4e9;
    const auto h = evaluate_channel(single_ray(1.0, 1.0 / (2.0 * f), 0.0), 0.0, f, sys)(0, 0);
    CHECK(std::abs(h - cd(-1.0, 0.0)) < 1e-9);
}

TEST_CASE("half-cycle Doppler rotation flips the sign") {
    const auto sys = one_by_one();
    const auto h = evaluate_channel(single_ray(1.0, 0.0, 100.0), 5e-3, 2.4e9, sys)(0, 0);
    CHECK(std::abs(h - cd(-1.0, 0.0)) < 1e-12);
}

TEST_CASE("Doppler for motion along the arrival direction") {
    // broadside arrival along +x with UE moving at 50 km/h along +x
    const Eigen::Vector3d v = (50.0 / 3.6) * unit_direction(kPi / 2, 0.0);
    const double nu = doppler_shift(v, kPi / 2, 0.0, 2.4e9);
    CHECK(nu == doctest::Approx(50.0 / 3.6 * 2.4e9 / 3e8).epsilon(1e-12));
    CHECK(nu == doctest::Approx(111.111).epsilon(1e-4));
}

TEST_CASE("zero velocity gives zero Doppler on every ray") {
    Rng rng(11);
    const auto rays = sample_ray_set(uma_nlos_preset(), 0.0, 2.4e9, rng);
    CHECK(rays.rays.size() == 400);
    for (const auto& r : rays.rays) CHECK(r.doppler == 0.0);
}

TEST_CASE("Doppler scales linearly with velocity") {
    Rng rng(12);
    auto rays = sample_ray_set(umi_nlos_preset(), 30.0, 2.4e9, rng);
    const auto before = rays;
    rays.velocity *= 2.5;
    refresh_doppler(rays, 2.4e9);
    for (std::size_t i = 0; i < rays.rays.size(); ++i)
        CHECK(rays.rays[i].doppler == doctest::Approx(2.5 * before.rays[i].doppler).epsilon(1e-12));
}

TEST_CASE("ray sampling is deterministic and rejects negative velocity") {
    Rng a(99), b(99);
    const auto ra = sample_ray_set(uma_nlos_preset(), 20.0, 2.4e9, a);
    const auto rb = sample_ray_set(uma_nlos_preset(), 20.0, 2.4e9, b);
    REQUIRE(ra.rays.size() == rb.rays.size());
    for (std::size_t i = 0; i < ra.rays.size(); ++i) {
        CHECK(ra.rays[i].gain == rb.rays[i].gain);
        CHECK(ra.rays[i].delay == rb.rays[i].delay);
        CHECK(ra.rays[i].doppler == rb.rays[i].doppler);
    }
    Rng c(1);
    CHECK_THROWS_AS(sample_ray_set(uma_nlos_preset(), -1.0, 2.4e9, c), std::invalid_argument);
}

TEST_CASE("ray delays are non-negative and mean total power is one") {
    Rng rng(5);
    double total = 0.0, min_delay = 0.0;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) {
        const auto rays = sample_ray_set(uma_nlos_preset(), 10.0, 2.4e9, rng);
        for (const auto& r : rays.rays) {
            min_delay = std::min(min_delay, r.delay);
            total += std::norm(r.gain);
        }
    }
    CHECK(min_delay >= 0.0);
    CHECK(std::abs(total / draws - 1.0) < 0.05);
}

TEST_CASE("presets differ and validate") {
    const auto uma = uma_nlos_preset(), umi = umi_nlos_preset();
    CHECK(uma.delay_spread != umi.delay_spread);
    CHECK_NOTHROW(uma.validate());
    CHECK(preset_by_name("umi-nlos").name == umi.name);
    CHECK_THROWS_AS(preset_by_name("rural"), std::invalid_argument);
    auto bad = uma;
    bad.delay_spread = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("a single ray yields a rank-one channel") {
    Rng rng(21);
    auto rays = sample_ray_set(testing::single_ray_preset(), 40.0, 2.4e9, rng);
    const auto h = evaluate_channel(rays, 3e-3, 2.41e9, SystemConfig::paper());
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(h);
    const auto s = svd.singularValues();
    CHECK(s[1] / s[0] < 1e-10);
}

TEST_CASE("frequency dependence is a pure delay phase") {
    Rng rng(22);
    auto rays = sample_ray_set(testing::single_ray_preset(), 0.0, 2.4e9, rng);
    rays.rays[0].delay = 37e-9;
    const auto sys = SystemConfig::paper();
    const double f1 = 2.4e9, f2 = 2.4012e9;
    const auto h1 = evaluate_channel(rays, 0.0, f1, sys);
    const auto h2 = evaluate_channel(rays, 0.0, f2, sys);
    const cd expected = std::exp(cd(0.0, -2.0 * kPi * (f2 - f1) * 37e-9));
    for (Index i = 0; i < h1.size(); ++i) CHECK(std::abs(h2.data()[i] / h1.data()[i] - expected) < 1e-10);
}

TEST_CASE("default realization shape and seed dependence") {
    const auto sys = SystemConfig::paper();
    const auto a = generate_realization(sys, uma_nlos_preset(), 30.0, 1);
    const auto b = generate_realization(sys, uma_nlos_preset(), 30.0, 2);
    CHECK(a.h.shape() == Shape{30, 12, 4, 4});
    CHECK(a.h.data().allFinite());
    CHECK(a.h != b.h);
    CHECK(generate_realization(sys, uma_nlos_preset(), 30.0, 1).h == a.h);
}

TEST_CASE("zero velocity realization is constant in time") {
    const auto sys = SystemConfig::paper();
    const auto r = generate_realization(sys, umi_nlos_preset(), 0.0, 8);
    const Index per_step = r.h.size() / r.h.dim(0);
    double max_var = 0.0;
    for (Index j = 0; j < per_step; ++j) {
        double mean = 0.0, sq = 0.0;
        for (Index t = 0; t < r.h.dim(0); ++t) {
            const double m = std::abs(std::complex<double>(r.h[t * per_step + j]));
            mean += m;
            sq += m * m;
        }
        mean /= static_cast<double>(r.h.dim(0));
        max_var = std::max(max_var, sq / static_cast<double>(r.h.dim(0)) - mean * mean);
    }
    CHECK(max_var < 1e-12);
    for (Index t = 1; t < r.h.dim(0); ++t)
        for (Index j = 0; j < per_step; ++j)
            CHECK(std::abs(r.h[t * per_step + j] - r.h[j]) < 1e-9);
}

TEST_CASE("reciprocity is a plain transpose") {
    Eigen::Matrix2cd h;
    h << cd(1, 1), cd(0, 0), cd(2, 0), cd(3, 0);
    Eigen::Matrix2cd expected;
    expected << cd(1, 1), cd(2, 0), cd(0, 0), cd(3, 0);
    CHECK(apply_reciprocity(h) == expected);
    CHECK(apply_reciprocity(apply_reciprocity(h)) == h);
    const Eigen::MatrixXcd big = Eigen::MatrixXcd::Random(4, 4);
    CHECK(apply_reciprocity(big).rows() == 4);
    CHECK(apply_reciprocity(apply_reciprocity(big)) == big);
}

TEST_CASE("observation noise power follows the SNR") {
    Rng sig(1), rng(2);
    CsiTensor h({100000});
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (Index i = 0; i < h.size(); ++i) h[i] = {n(sig), n(sig)};
    const auto y = add_observation_noise(h, 0.0, rng);
    const double ratio = (y.data() - h.data()).squaredNorm() / h.data().squaredNorm();
    CHECK(ratio > 0.95);
    CHECK(ratio < 1.05);

    Rng again(2);
    CHECK(add_observation_noise(h, 0.0, again) == y);
    CHECK(add_observation_noise(h, kNoiselessSnr, rng) == h);
    CHECK_THROWS_AS(add_observation_noise(h, std::nan(""), rng), std::invalid_argument);
}

TEST_CASE("least-squares estimation") {
    Rng rng(4);
    const Eigen::MatrixXcd h = Eigen::MatrixXcd::Random(4, 4);
    const auto id = transmit_pilots(h, Eigen::MatrixXcd::Identity(4, 4), 0.0, rng);
    CHECK((ls_estimate(id) - h).cwiseAbs().maxCoeff() < 1e-14);

    // scaled DFT pilots, T_p = 8
    Eigen::MatrixXcd x(4, 8);
    for (Index r = 0; r < 4; ++r)
        for (Index c = 0; c < 8; ++c) x(r, c) = 1.7 * std::exp(cd(0.0, 2.0 * kPi * r * c / 8.0));
    CHECK((ls_estimate(transmit_pilots(h, x, 0.0, rng)) - h).cwiseAbs().maxCoeff() < 1e-10);

    const Eigen::MatrixXcd short_pilots = Eigen::MatrixXcd::Random(4, 3);
    CHECK_THROWS_AS(ls_estimate(transmit_pilots(h, short_pilots, 0.0, rng)), std::invalid_argument);
    Eigen::MatrixXcd degenerate = Eigen::MatrixXcd::Zero(4, 6);
    degenerate.row(0).setOnes();
    CHECK_THROWS_AS(ls_estimate(transmit_pilots(h, degenerate, 0.0, rng)), std::invalid_argument);
}

TEST_CASE("dataset sizes for the two profiles") {
    const auto paper = DatasetProfile::paper();
    CHECK(static_cast<Index>(paper.velocities_kmh.size()) * paper.samples_per_velocity.at(Split::Train) == 10400);
    CHECK(paper.velocities_kmh.front() == 0.0);
    CHECK(paper.velocities_kmh.back() == 60.0);

    const auto spec = testing::small_spec(uma_nlos_preset(), {0.0, 30.0}, 8, 0, 0, 3);
    testing::TempDir dir("chan");
    build_dataset(dir.path(), spec);
    const auto split = load_split(dir.path(), Split::Train);
    CHECK(split.size() == 16);
    CHECK(load_manifest(dir.path()).get_doubles("velocities_kmh") == std::vector<double>{0.0, 30.0});
}
