// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <vector>

#include "doctest.h"
#include "tcdfern/das.hpp"
#include "tcdfern/errors.hpp"
#include "test_support.hpp"

using namespace tcdfern;
using csi::NormalizedFrame;

namespace {

std::vector<NormalizedFrame> random_stream(Rng& rng, std::size_t length, int q, int k) {
  std::vector<NormalizedFrame> s;
  for (std::size_t i = 0; i < length; ++i) s.push_back(testing::random_normalized(rng, q, k));
  return s;
}

}  // namespace

TEST_SUITE("das") {
  TEST_CASE("ast examples") {
    const NormalizedFrame a(2, 1, {0.2, 0.5});
    const NormalizedFrame b(2, 1, {0.5, 0.1});
    const auto d = das::ast(a, b);
    CHECK(d.values()[0] == doctest::Approx(0.3));
    CHECK(d.values()[1] == doctest::Approx(-0.4));
    const auto same = das::ast(a, a);
    for (double v : same.values()) CHECK(v == 0.0);
    const auto ones = das::ast(NormalizedFrame(2, 2, {0, 0, 0, 0}), NormalizedFrame(2, 2, {1, 1, 1, 1}));
    for (double v : ones.values()) CHECK(v == 1.0);
    CHECK_THROWS_AS(das::ast(a, NormalizedFrame(1, 2, {0, 0})), StructuralError);
  }

  TEST_CASE("flatten keeps subcarriers fastest within an antenna pair") {
    // rows are subcarriers, columns antenna pairs: [[a, c], [b, d]]
    NormalizedFrame f(2, 2);
    f.at(0, 0) = 1;  // a
    f.at(1, 0) = 2;  // b
    f.at(0, 1) = 3;  // c
    f.at(1, 1) = 4;  // d
    CHECK(das::flatten_frame(f) == std::vector<double>{1, 2, 3, 4});
    CHECK(das::flatten_frame(NormalizedFrame(1, 1, {0.7})) == std::vector<double>{0.7});

    NormalizedFrame g(3, 2);
    for (int k = 0; k < 2; ++k)
      for (int q = 0; q < 3; ++q) g.at(q, k) = 10 * k + q;
    CHECK(das::flatten_frame(g) == std::vector<double>{0, 1, 2, 10, 11, 12});
  }

  TEST_CASE("fusion examples") {
    das::WindowMatrix w(3, 4);
    for (int c = 0; c < 4; ++c) w.at(0, c) = 1.0;
    const double row1[] = {0.2, -0.2, 0.4, -0.4};
    for (int c = 0; c < 4; ++c) w.at(1, c) = row1[c];
    const auto m = das::subcarrier_fusion(w);
    CHECK(m[0] == 1.0);
    CHECK(m[1] == doctest::Approx(0.0));
    CHECK(m[2] == 0.0);

    das::WindowMatrix v(1, 3);
    v.values = {0.1, 0.2, 0.3};
    CHECK(das::subcarrier_fusion(v)[0] == doctest::Approx(0.2));
  }

  TEST_CASE("fusion bound and linearity") {
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
      das::WindowMatrix w(7, 13);
      w.values = testing::random_vector(rng, w.values.size());
      const auto m = das::subcarrier_fusion(w);
      const double alpha = uniform(rng, -3.0, 3.0);
      das::WindowMatrix scaled = w;
      for (auto& x : scaled.values) x *= alpha;
      const auto ms = das::subcarrier_fusion(scaled);
      for (int r = 0; r < w.rows; ++r) {
        double bound = 0.0;
        for (double x : w.row(r)) bound = std::max(bound, std::abs(x));
        REQUIRE(std::abs(m[static_cast<std::size_t>(r)]) <= bound);
        REQUIRE(ms[static_cast<std::size_t>(r)] == doctest::Approx(alpha * m[static_cast<std::size_t>(r)]).epsilon(1e-12));
      }
    }
  }

  TEST_CASE("window counts") {
    Rng rng(1);
    const int tau = 6;
    CHECK(das::make_samples(random_stream(rng, tau + 1, 4, 2), tau, 1).size() == 1);
    CHECK(das::make_samples(random_stream(rng, tau + 10, 4, 2), tau, 1).size() == 10);
    CHECK(das::make_samples(random_stream(rng, tau + 10, 4, 2), tau, 3).size() == 4);

    das::WindowingStats stats;
    CHECK(das::make_samples(random_stream(rng, tau, 4, 2), tau, 1, std::nullopt, 1, 0, &stats).empty());
    CHECK(stats.short_streams == 1);
  }

  TEST_CASE("constant stream has zero motion and identical rows") {
    const NormalizedFrame f(3, 2, {0.1, 0.9, 0.4, 0.0, 1.0, 0.5});
    const std::vector<NormalizedFrame> stream(8, f);
    const auto samples = das::make_samples(stream, 5, 1);
    REQUIRE(samples.size() == 3);
    for (const auto& s : samples) {
      for (double m : s.moving) CHECK(m == 0.0);
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 6; ++c) CHECK(s.spatial.at(r, c) == f.values()[static_cast<std::size_t>(c)]);
    }
  }

  TEST_CASE("window consistency and shift consistency") {
    Rng rng(21);
    const int tau = 8;
    const auto stream = random_stream(rng, 40, 5, 3);
    const auto samples = das::make_samples(stream, tau, 1, 2, 1, 100);
    REQUIRE(samples.size() == 40 - tau);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      const auto last = s.spatial.row(tau - 1);
      REQUIRE(std::equal(last.begin(), last.end(), s.last_spatial.begin(), s.last_spatial.end()));
      REQUIRE(s.end_tick == 100 + tau + static_cast<std::int64_t>(i));
      REQUIRE(s.label == 2);
      if (i + 1 < samples.size()) {
        const auto& n = samples[i + 1];
        for (int r = 0; r + 1 < tau; ++r) {
          const auto a = s.spatial.row(r + 1), b = n.spatial.row(r);
          REQUIRE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
          REQUIRE(s.moving[static_cast<std::size_t>(r + 1)] == n.moving[static_cast<std::size_t>(r)]);
        }
      }
    }
  }

  TEST_CASE("moving vector is the fused AST of the window's ticks") {
    Rng rng(3);
    const int tau = 4;
    const auto stream = random_stream(rng, 10, 3, 2);
    const auto samples = das::make_samples(stream, tau, 2);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::size_t end = tau + 2 * i;
      for (int r = 0; r < tau; ++r) {
        const std::size_t t = end - tau + 1 + static_cast<std::size_t>(r);
        const auto d = das::ast(stream[t - 1], stream[t]).values();
        double mean = 0.0;
        for (double x : d) mean += x;
        mean /= static_cast<double>(d.size());
        CHECK(samples[i].moving[static_cast<std::size_t>(r)] == doctest::Approx(mean).epsilon(1e-14));
      }
    }
  }

  TEST_CASE("reference is the mean of at most max_count vectors") {
    const std::vector<std::vector<double>> v{{0, 1}, {2, 3}, {4, 5}};
    CHECK(das::reference_spatial(v).values == std::vector<double>{2, 3});
    CHECK(das::reference_spatial(v, 2).values == std::vector<double>{1, 2});
    CHECK_THROWS_AS(das::reference_spatial(std::vector<std::vector<double>>{}), StructuralError);
  }

  TEST_CASE("sample set windows match make_samples") {
    Rng rng(8);
    const int tau = 5;
    const auto a = random_stream(rng, 23, 4, 2);
    const auto b = random_stream(rng, 12, 4, 2);
    das::SampleSet set(tau, 8);
    CHECK(set.add_stream(a, 1, 0, 1, 2) == das::make_samples(a, tau, 2).size());
    CHECK(set.add_stream(b, 1, 500, 3, 2) == das::make_samples(b, tau, 2).size());
    set.set_reference(1, das::reference_spatial(set.empty_room_vectors(1, 100)));

    const auto ref_a = das::make_samples(a, tau, 2, 1, 1, 0);
    const auto ref_b = das::make_samples(b, tau, 2, 3, 1, 500);
    std::vector<das::DasSample> all(ref_a);
    all.insert(all.end(), ref_b.begin(), ref_b.end());
    REQUIRE(set.size() == all.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
      const auto s = set.sample(i);
      CHECK(s.spatial.values == all[i].spatial.values);
      CHECK(s.moving == all[i].moving);
      CHECK(s.last_spatial == all[i].last_spatial);
      CHECK(s.label == all[i].label);
      CHECK(s.end_tick == all[i].end_tick);
    }

    std::vector<std::size_t> idx{0, set.size() - 1};
    const auto batch = set.batch(idx);
    const auto direct = das::assemble_batch(std::vector<das::DasSample>{all.front(), all.back()}, set.reference(1));
    CHECK(batch.spatial == direct.spatial);
    CHECK(batch.moving == direct.moving);
    CHECK(batch.last_spatial == direct.last_spatial);
    CHECK(batch.references == direct.references);
    CHECK(batch.labels == std::vector<int>{0, 2});
  }
}
