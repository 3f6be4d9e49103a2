// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "tcdfern/csi.hpp"
#include "tcdfern/errors.hpp"
#include "test_support.hpp"

using namespace tcdfern;
using csi::AmplitudeFrame;

namespace {

AmplitudeFrame column(std::vector<double> v) {
  const int q = static_cast<int>(v.size());
  return AmplitudeFrame(q, 1, std::move(v));
}

}  // namespace

TEST_SUITE("csi") {
  TEST_CASE("amplitude is the complex magnitude") {
    csi::CsiFrame f(1, 0, 3, 1);
    f.at(0, 0) = {3.0, 4.0};
    f.at(1, 0) = {0.0, 0.0};
    f.at(2, 0) = {-2.0, 0.0};
    const auto a = csi::amplitude_of(f);
    CHECK(a.at(0, 0) == 5.0);
    CHECK(a.at(1, 0) == 0.0);
    CHECK(a.at(2, 0) == 2.0);
  }

  TEST_CASE("non-finite CSI names the entry") {
    csi::CsiFrame f(1, 12, 4, 2);
    f.at(3, 1) = {std::numeric_limits<double>::quiet_NaN(), 0.0};
    try {
      (void)csi::amplitude_of(f);
      FAIL("expected DataIntegrityError");
    } catch (const DataIntegrityError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("t=12") != std::string::npos);
      CHECK(msg.find("q=4") != std::string::npos);
      CHECK(msg.find("k=2") != std::string::npos);
    }
  }

  TEST_CASE("normalize examples") {
    auto n = csi::normalize_frame(column({2, 4, 6}));
    CHECK(n.values() == std::vector<double>{0.0, 0.5, 1.0});
    n = csi::normalize_frame(column({1, 3, 2, 5}));
    CHECK(n.values() == std::vector<double>{0.0, 0.5, 0.25, 1.0});

    csi::NormalizeStats stats;
    n = csi::normalize_frame(column({7, 7, 7}), &stats);
    CHECK(n.values() == std::vector<double>{0.5, 0.5, 0.5});
    CHECK(stats.degenerate_columns == 1);
  }

  TEST_CASE("normalize needs two subcarriers") {
    CHECK_THROWS_AS(csi::normalize_frame(column({1.0})), StructuralError);
  }

  TEST_CASE("normalize range, shift/scale invariance and column independence") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const int q = 2 + static_cast<int>(rng() % 60);
      const int k = 1 + static_cast<int>(rng() % 5);
      const double spread = std::pow(10.0, uniform(rng, -3.0, 3.0));
      AmplitudeFrame a(q, k, testing::random_vector(rng, static_cast<std::size_t>(q) * k, 0.0, spread));
      const auto n = csi::normalize_frame(a);
      for (double v : n.values()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
      }

      // Affine images of the normalized frame normalize back to it.
      const double alpha = uniform(rng, 0.1, 10.0), beta = uniform(rng, -5.0, 5.0);
      std::vector<double> moved = n.values();
      for (auto& v : moved) v = alpha * v + beta;
      const auto again = csi::normalize_frame(AmplitudeFrame(q, k, moved));
      for (std::size_t i = 0; i < moved.size(); ++i) REQUIRE(again.values()[i] == doctest::Approx(n.values()[i]).epsilon(1e-12));

      // Permuting antenna-pair columns commutes with normalization.
      std::vector<int> perm(static_cast<std::size_t>(k));
      for (int i = 0; i < k; ++i) perm[static_cast<std::size_t>(i)] = i;
      std::shuffle(perm.begin(), perm.end(), rng);
      AmplitudeFrame permuted(q, k);
      for (int c = 0; c < k; ++c)
        for (int r = 0; r < q; ++r) permuted.at(r, c) = a.at(r, perm[static_cast<std::size_t>(c)]);
      const auto np = csi::normalize_frame(permuted);
      for (int c = 0; c < k; ++c)
        for (int r = 0; r < q; ++r) REQUIRE(np.at(r, c) == n.at(r, perm[static_cast<std::size_t>(c)]));
    }
  }

  TEST_CASE("header validation") {
    csi::StreamHeader h;
    CHECK(h.frame_size() == 224);
    CHECK(h.sample_rate == 10.0);
    h.validate();
    h.subcarriers = 0;
    CHECK_THROWS_AS(h.validate(), StructuralError);
  }
}
