#include <doctest.h>

#include <cmath>
#include <map>

#include "kerntune/knobs.hpp"
#include "kerntune/rng.hpp"

using namespace kerntune;

namespace {

KnobSpace one_knob(std::vector<double> values,
                   KnobKind kind = KnobKind::InstructionFraction) {
  KnobSpace s;
  s.knobs.push_back({"K", kind, std::move(values)});
  if (kind != KnobKind::InstructionFraction)
    s.knobs.push_back({"ADD", KnobKind::InstructionFraction, {1.0}});
  return s;
}

}  // namespace

TEST_CASE("default space ships the stock knob lists") {
  KnobSpace s = KnobSpace::default_space();
  s.validate();
  CHECK(s.dim() == 16);
  int fraction_knobs = 0;
  for (const auto& k : s.knobs)
    if (k.kind == KnobKind::InstructionFraction) ++fraction_knobs;
  CHECK(fraction_knobs == 10);
  CHECK(s.find("MEM_SIZE")->values.size() == 11);
  CHECK(s.find("MEM_SIZE")->values.front() == 2);
  CHECK(s.find("MEM_SIZE")->values.back() == 2048);
  CHECK(s.find("MEM_STRIDE")->values.front() == 8);
  CHECK(s.find("MEM_STRIDE")->values.back() == 64);
  CHECK(s.find("MEM_TEMP1")->values.back() == 512);
  CHECK(s.find("B_PATTERN")->values.front() == doctest::Approx(0.1));
  CHECK(s.find("ADD")->values == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
}

TEST_CASE("knob validation rejects malformed definitions") {
  KnobDef empty{"X", KnobKind::Scalar, {}};
  CHECK_THROWS_AS(empty.validate(), std::invalid_argument);
  KnobDef unsorted{"X", KnobKind::Scalar, {2, 1}};
  CHECK_THROWS_AS(unsorted.validate(), std::invalid_argument);
  KnobDef nonpos{"X", KnobKind::InstructionFraction, {0, 1}};
  CHECK_THROWS_AS(nonpos.validate(), std::invalid_argument);

  KnobSpace dup;
  dup.knobs.push_back({"A", KnobKind::InstructionFraction, {1}});
  dup.knobs.push_back({"A", KnobKind::InstructionFraction, {1}});
  CHECK_THROWS_AS(dup.validate(), std::invalid_argument);

  KnobSpace no_fraction;
  no_fraction.knobs.push_back({"A", KnobKind::Scalar, {1}});
  CHECK_THROWS_AS(no_fraction.validate(), std::invalid_argument);
}

TEST_CASE("random_point with a single-value knob always lands on it") {
  KnobSpace s = one_knob({5.0});
  for (uint64_t seed : {0ull, 1ull, 99ull})
    CHECK(random_point(s, seed).pos == std::vector<double>{0.0});
}

TEST_CASE("random_point is deterministic for a fixed seed") {
  KnobSpace s;
  for (int i = 0; i < 17; ++i)
    s.knobs.push_back({"K" + std::to_string(i), KnobKind::InstructionFraction,
                       {1, 2, 3, 4, 5}});
  CHECK(random_point(s, 7) == random_point(s, 7));
  CHECK(random_point(s, 7) != random_point(s, 8));
}

TEST_CASE("random_point draws indices uniformly") {
  // 10,000 draws over a 10-value knob: every frequency within 3 sigma.
  KnobSpace s = one_knob({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  std::map<int, int> freq;
  for (int seed = 0; seed < 10000; ++seed)
    freq[static_cast<int>(random_point(s, seed).pos[0])]++;
  double sigma = std::sqrt(10000 * 0.1 * 0.9);
  for (int idx = 0; idx < 10; ++idx)
    CHECK(std::abs(freq[idx] - 1000.0) <= 3 * sigma);
}

TEST_CASE("snap rounds to the nearest index with ties to the lower one") {
  KnobSpace s = KnobSpace::default_space();
  KnobPoint p = random_point(s, 1);

  p.pos[s.index_of("MEM_STRIDE")] = 0.0;
  CHECK(snap(p, s).at("MEM_STRIDE") == 8);

  p.pos[s.index_of("ADD")] = 2.5;  // tie: index 2
  CHECK(snap(p, s).at("ADD") == 3);

  p.pos[s.index_of("MEM_SIZE")] = 9.7;  // index 10
  CHECK(snap(p, s).at("MEM_SIZE") == 2048);
}

TEST_CASE("snap of random points recovers the drawn indices") {
  KnobSpace s = KnobSpace::default_space();
  for (uint64_t seed = 0; seed < 50; ++seed) {
    KnobPoint p = random_point(s, seed);
    std::vector<int> idx = snap_indices(p, s);
    for (size_t i = 0; i < p.pos.size(); ++i)
      CHECK(static_cast<double>(idx[i]) == p.pos[i]);
  }
}

TEST_CASE("snap always yields values from the knob lists") {
  KnobSpace s = KnobSpace::default_space();
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    KnobPoint p;
    for (const auto& k : s.knobs)
      p.pos.push_back(rng.next_double() * (k.size() - 1));
    KnobConfig c = snap(p, s);
    REQUIRE(c.items.size() == s.dim());
    for (const auto& k : s.knobs) {
      double v = c.at(k.name);
      bool member = false;
      for (double lv : k.values) member |= lv == v;
      CHECK(member);
    }
  }
}

TEST_CASE("perturb clamps at the index bounds") {
  KnobSpace s = one_knob({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  KnobPoint p{{3.0}};
  CHECK(perturb(p, s, 0, +1).pos[0] == 4.0);
  KnobPoint zero{{0.0}};
  CHECK(perturb(zero, s, 0, -1).pos[0] == 0.0);
  KnobPoint top{{9.0}};
  CHECK(perturb(top, s, 0, +1).pos[0] == 9.0);
}

TEST_CASE("perturb at an interior coordinate has an inverse") {
  KnobSpace s = one_knob({1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  KnobPoint p{{4.5}};
  CHECK(perturb(perturb(p, s, 0, +1.25), s, 0, -1.25) == p);
}

TEST_CASE("perturb rejects an out-of-range dimension") {
  KnobSpace s = one_knob({1, 2});
  KnobPoint p{{0.0}};
  CHECK_THROWS_AS(perturb(p, s, 5, 1.0), std::out_of_range);
}

TEST_CASE("snap(perturb) changes at most the perturbed assignment") {
  KnobSpace s = KnobSpace::default_space();
  Rng rng(1234);
  for (int trial = 0; trial < 200; ++trial) {
    KnobPoint p = random_point(s, trial);
    size_t dim = rng.next_index(s.dim());
    double delta = rng.next_double() * 4.0 - 2.0;
    KnobConfig before = snap(p, s);
    KnobConfig after = snap(perturb(p, s, dim, delta), s);
    for (size_t i = 0; i < s.dim(); ++i) {
      if (i == dim) continue;
      CHECK(before.items[i] == after.items[i]);
    }
  }
}

TEST_CASE("distance is the max coordinate gap") {
  CHECK(distance(KnobPoint{{1, 2}}, KnobPoint{{1, 2}}) == 0.0);
  CHECK(distance(KnobPoint{{0, 0}}, KnobPoint{{1, 3}}) == 3.0);
  CHECK_THROWS_AS(distance(KnobPoint{{1}}, KnobPoint{{1, 2}}),
                  std::invalid_argument);
}

TEST_CASE("distance satisfies the metric axioms") {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    KnobPoint a, b, c;
    for (int i = 0; i < 5; ++i) {
      a.pos.push_back(rng.next_double() * 10);
      b.pos.push_back(rng.next_double() * 10);
      c.pos.push_back(rng.next_double() * 10);
    }
    CHECK(distance(a, b) >= 0.0);
    CHECK(distance(a, b) == distance(b, a));
    CHECK(distance(a, c) <= distance(a, b) + distance(b, c) + 1e-12);
    CHECK(distance(a, a) == 0.0);
  }
}

TEST_CASE("instruction_profile normalizes the fraction weights") {
  KnobSpace s = KnobSpace::default_space();

  SUBCASE("uniform weights give a uniform distribution") {
    KnobConfig c;
    for (const auto& k : s.knobs) c.items.emplace_back(k.name, k.values[0]);
    double total = 0.0;
    for (const auto& [name, frac] : instruction_profile(c, s)) {
      CHECK(frac == doctest::Approx(0.1));
      total += frac;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("ADD=10, MUL=10 and eight knobs at 1 give 10/28") {
    KnobConfig c;
    for (const auto& k : s.knobs) {
      double v = k.values[0];
      if (k.name == "ADD" || k.name == "MUL") v = 10;
      c.items.emplace_back(k.name, v);
    }
    auto prof = instruction_profile(c, s);
    for (const auto& [name, frac] : prof) {
      if (name == "ADD" || name == "MUL")
        CHECK(frac == doctest::Approx(10.0 / 28.0).epsilon(1e-12));
      else
        CHECK(frac == doctest::Approx(1.0 / 28.0).epsilon(1e-12));
    }
  }

  SUBCASE("a single instruction knob takes the whole distribution") {
    KnobSpace single = one_knob({3.0});
    KnobConfig c;
    c.items.emplace_back("K", 3.0);
    auto prof = instruction_profile(c, single);
    REQUIRE(prof.size() == 1);
    CHECK(prof[0].second == 1.0);
  }
}

TEST_CASE("knob space JSON round trip") {
  KnobSpace s = KnobSpace::default_space();
  KnobSpace back = KnobSpace::from_json(s.to_json());
  REQUIRE(back.dim() == s.dim());
  for (size_t i = 0; i < s.dim(); ++i) {
    CHECK(back.knobs[i].name == s.knobs[i].name);
    CHECK(back.knobs[i].kind == s.knobs[i].kind);
    CHECK(back.knobs[i].values == s.knobs[i].values);
  }
}
