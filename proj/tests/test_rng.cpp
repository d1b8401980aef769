#include <cmath>
#include <set>
#include <vector>

#include "dbl/rng.hpp"
#include "doctest.h"

using dbl::RandomSource;

TEST_CASE("same seed and label reproduce the exact draw sequence") {
  RandomSource a(42, "train");
  RandomSource b(42, "train");
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  RandomSource c(42, "train");
  RandomSource d(42, "train");
  for (int i = 0; i < 100; ++i) {
    CHECK(c.uniform() == d.uniform());
    CHECK(c.normal() == d.normal());
  }
}

TEST_CASE("different labels and seeds give different streams") {
  RandomSource a(42, "train");
  RandomSource b(42, "eval");
  RandomSource c(43, "train");
  int same_ab = 0, same_ac = 0;
  for (int i = 0; i < 64; ++i) {
    auto va = a.next_u64();
    if (va == b.next_u64()) ++same_ab;
    if (va == c.next_u64()) ++same_ac;
  }
  CHECK(same_ab == 0);
  CHECK(same_ac == 0);
}

TEST_CASE("derived streams are independent of parent consumption") {
  RandomSource root(7, "root");
  RandomSource child_before = root.stream("sub");
  for (int i = 0; i < 50; ++i) root.next_u64();
  RandomSource child_after = root.stream("sub");
  for (int i = 0; i < 20; ++i) CHECK(child_before.next_u64() == child_after.next_u64());

  RandomSource s0 = root.stream("epoch", 0);
  RandomSource s1 = root.stream("epoch", 1);
  CHECK(s0.next_u64() != s1.next_u64());
}

TEST_CASE("uniform stays in [0,1) and in custom bounds") {
  RandomSource r(1, "u");
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    double v = r.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(lo < 0.01);   // actually fills the range
  CHECK(hi > 0.99);
  for (int i = 0; i < 1000; ++i) {
    float v = r.uniform(-2.f, 3.f);
    CHECK(v >= -2.f);
    CHECK(v < 3.f);
  }
}

TEST_CASE("normal matches N(0,1) moments on a large sample") {
  RandomSource r(9, "n");
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    double v = r.normal();
    s += v;
    s2 += v * v;
  }
  double m = s / n;
  double var = s2 / n - m * m;
  // std error of mean = 1/sqrt(n) ~ 0.0032; allow 4 sigma
  CHECK(std::abs(m) < 0.013);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("below(n) covers all residues") {
  RandomSource r(3, "b");
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 500; ++i) {
    auto v = r.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("fill helpers match scalar draws") {
  RandomSource a(5, "f");
  RandomSource b(5, "f");
  std::vector<float> buf(64);
  a.fill_uniform(buf);
  for (auto v : buf) CHECK(v == b.uniform());
  std::vector<float> nbuf(33);
  a.fill_normal(nbuf);
  for (auto v : nbuf) CHECK(v == b.normal());
}
