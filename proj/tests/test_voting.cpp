// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <array>
#include <vector>

#include "doctest.h"
#include "tcdfern/errors.hpp"
#include "tcdfern/voting.hpp"
#include "test_support.hpp"

using namespace tcdfern;
using voting::PairPrediction;
using voting::RoomProbability;

namespace {

PairPrediction random_prediction(Rng& rng, int pair) {
  PairPrediction p{pair, {}};
  double total = 0.0;
  for (auto& v : p.probs) total += (v = uniform(rng, 0.0, 1.0));
  for (auto& v : p.probs) v /= total;
  return p;
}

void check_pv(const RoomProbability& r, double a, double b) {
  CHECK(r.pv[0] == doctest::Approx(a).epsilon(1e-15));
  CHECK(r.pv[1] == doctest::Approx(b).epsilon(1e-15));
}

}  // namespace

TEST_SUITE("voting") {
  TEST_CASE("merge examples") {
    const PairPrediction uniform{1, {0.25, 0.25, 0.25, 0.25}};
    const PairPrediction skewed{1, {0.7, 0.1, 0.1, 0.1}};
    check_pv(voting::merge_rx(uniform), 0.5, 0.5);
    check_pv(voting::merge_rx(skewed), 0.8, 0.2);
    check_pv(voting::merge_rx({1, {0, 0, 1, 0}}), 0.0, 1.0);
    check_pv(voting::merge_tx(skewed), 0.8, 0.2);
    check_pv(voting::merge_tx({1, {0, 1, 0, 0}}), 0.0, 1.0);
    check_pv(voting::merge_tx(uniform), 0.5, 0.5);
  }

  TEST_CASE("merge rejects non-simplex input") {
    CHECK_THROWS_AS(voting::merge_rx({1, {0.5, 0.5, 0.5, 0.0}}), DataIntegrityError);
    CHECK_THROWS_AS(voting::merge_tx({1, {-0.1, 0.6, 0.3, 0.2}}), DataIntegrityError);
  }

  TEST_CASE("vote examples") {
    const std::vector<RoomProbability> two{{1, {0.6, 0.4}}, {1, {0.2, 0.8}}};
    check_pv(voting::vote_tx(two), 0.4, 0.6);
    const std::vector<RoomProbability> one{{1, {0.3, 0.7}}};
    CHECK(voting::vote_tx(one).pv == one[0].pv);
    CHECK_THROWS_AS(voting::vote_tx(std::vector<RoomProbability>{}), StructuralError);
  }

  TEST_CASE("decide examples and tie rule") {
    CHECK(voting::decide({1, {0.3, 0.7}}).occupied);
    CHECK_FALSE(voting::decide({1, {0.7, 0.3}}).occupied);
    const auto tie = voting::decide({1, {0.5, 0.5}});
    CHECK(tie.occupied);
    CHECK(tie.confidence == 0.5);
  }

  TEST_CASE("predict_rooms counts and degenerate single pair") {
    Rng rng(4);
    const auto topo = voting::Topology::star(2);
    CHECK(topo.room_count() == 3);
    const std::vector<PairPrediction> preds{random_prediction(rng, 2), random_prediction(rng, 1)};
    const auto rooms = voting::predict_rooms(preds, topo);
    REQUIRE(rooms.size() == 3);
    CHECK(rooms[0].room_id == 1);
    CHECK(rooms[1].room_id == 2);
    CHECK(rooms[2].room_id == 3);

    const std::vector<PairPrediction> single{{1, {0.1, 0.2, 0.3, 0.4}}};
    const auto r2 = voting::predict_rooms(single, voting::Topology::star(1));
    REQUIRE(r2.size() == 2);
    const auto tx = voting::decide(voting::merge_tx(single[0]));
    CHECK(r2[0].occupied == tx.occupied);
    CHECK(r2[0].confidence == tx.confidence);
  }

  TEST_CASE("topology violations") {
    voting::Topology t;
    CHECK_THROWS_AS(t.validate(), StructuralError);
    t.rx_room_of_pair = {{1, 2}, {2, 2}};
    CHECK_THROWS_AS(t.validate(), StructuralError);
    t.rx_room_of_pair = {{1, 1}};
    CHECK_THROWS_AS(t.validate(), StructuralError);
    const std::vector<PairPrediction> preds{{1, {0.25, 0.25, 0.25, 0.25}}};
    CHECK_THROWS_AS(voting::predict_rooms(preds, voting::Topology::star(2)), StructuralError);
  }

  TEST_CASE("merge conservation, vote symmetry and decision scale invariance") {
    Rng rng(99);
    for (int trial = 0; trial < 500; ++trial) {
      const auto p = random_prediction(rng, 1);
      const auto& o = p.probs;
      const auto rx = voting::merge_rx(p);
      const auto tx = voting::merge_tx(p);
      REQUIRE(rx.pv[0] + rx.pv[1] == (o[0] + o[1]) + (o[2] + o[3]));
      REQUIRE(tx.pv[0] + tx.pv[1] == (o[0] + o[2]) + (o[1] + o[3]));
      REQUIRE(rx.pv[0] + rx.pv[1] == doctest::Approx(1.0).epsilon(1e-12));

      const int P = 1 + static_cast<int>(rng() % 6);
      std::vector<RoomProbability> merged;
      for (int i = 0; i < P; ++i) merged.push_back(voting::merge_tx(random_prediction(rng, i + 1)));
      const auto voted = voting::vote_tx(merged);
      auto shuffled = merged;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      REQUIRE(voting::vote_tx(shuffled).pv == voted.pv);
      REQUIRE(voted.pv[0] + voted.pv[1] == doctest::Approx(1.0).epsilon(1e-12));

      const std::vector<RoomProbability> same(static_cast<std::size_t>(P), merged[0]);
      REQUIRE(voting::vote_tx(same).pv == merged[0].pv);

      // Scale every pair's probabilities, renormalize, decide again.
      const auto topo = voting::Topology::star(P);
      std::vector<PairPrediction> preds, rescaled;
      const double c = uniform(rng, 0.01, 100.0);
      for (int i = 0; i < P; ++i) {
        preds.push_back(random_prediction(rng, i + 1));
        PairPrediction s = preds.back();
        double total = 0.0;
        for (auto& v : s.probs) total += (v *= c);
        for (auto& v : s.probs) v /= total;
        rescaled.push_back(s);
      }
      const auto a = voting::predict_rooms(preds, topo);
      const auto b = voting::predict_rooms(rescaled, topo);
      REQUIRE(a.size() == static_cast<std::size_t>(P + 1));
      for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].occupied == b[i].occupied);
        REQUIRE(a[i].confidence >= 0.5 - 1e-12);
        REQUIRE(a[i].confidence <= 1.0);
      }
    }
  }

  TEST_CASE("smoother takes the majority of the last decisions") {
    voting::DecisionSmoother s(3);
    CHECK(s.push({2, true, 0.9}).occupied);
    CHECK(s.push({2, false, 0.9}).occupied);   // 1 of 2, tie counts as occupied
    CHECK_FALSE(s.push({2, false, 0.9}).occupied);
    CHECK_FALSE(s.push({2, true, 0.9}).occupied);
    CHECK(s.push({3, true, 0.6}).occupied);    // rooms are independent
  }
}
