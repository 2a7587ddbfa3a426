#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "scribda/grid.hpp"
#include "scribda/tensor_io.hpp"
#include "test_util.hpp"

using namespace scribda;

TEST_CASE("one_hot embeds labels at simplex vertices") {
  LabelMap m(1, 2, std::vector<int>{0, 1});
  SoftLabeling p = one_hot(m, 2);
  CHECK(p.at(0, 0, 0) == 1.0);
  CHECK(p.at(0, 0, 1) == 0.0);
  CHECK(p.at(0, 1, 0) == 0.0);
  CHECK(p.at(0, 1, 1) == 1.0);
  p.check_simplex();

  LabelMap single(1, 1, std::vector<int>{0});
  SoftLabeling q = one_hot(single, 1);
  CHECK(q.at(0, 0, 0) == 1.0);

  LabelMap round(2, 2, std::vector<int>{0, 1, 1, 0});
  const LabelMap back = argmax_labeling(one_hot(round, 3));
  CHECK(back.labels == round.labels);
}

TEST_CASE("one_hot rejects out-of-range labels") {
  LabelMap m(1, 2, std::vector<int>{0, 2});
  CHECK_THROWS_AS(one_hot(m, 2), DomainError);
}

TEST_CASE("argmax_labeling picks maxima with low-index tie-break") {
  SoftLabeling p(1, 1, 2, 0.0);
  p.at(0, 0, 0) = 0.9;
  p.at(0, 0, 1) = 0.1;
  CHECK(argmax_labeling(p).at(0, 0) == 0);

  SoftLabeling tie(1, 1, 2, 0.5);
  CHECK(argmax_labeling(tie).at(0, 0) == 0);
}

TEST_CASE("argmax inverts one_hot on random maps") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> lab(0, 3);
  for (int trial = 0; trial < 100; ++trial) {
    LabelMap m(8, 8, 0);
    for (int& v : m.labels) v = lab(rng);
    CHECK(argmax_labeling(one_hot(m, 4)).labels == m.labels);
  }
}

TEST_CASE("full_mask labels every pixel consistently") {
  LabelMap m(2, 2, std::vector<int>{0, 1, 1, 0});
  const ScribbleMask s = full_mask(m);
  CHECK(s.labeled_count() == 4);
  CHECK(s.labeled_count() == m.pixels());
  for (int k = 0; k < 4; ++k) CHECK(s.entries[k] == m.labels[k]);
}

TEST_CASE("simplex check rejects invalid vectors") {
  SoftLabeling p(1, 1, 2, 0.6);
  CHECK_THROWS_AS(p.check_simplex(), DomainError);
  SoftLabeling neg(1, 1, 2, 0.0);
  neg.at(0, 0, 0) = 1.5;
  neg.at(0, 0, 1) = -0.5;
  CHECK_THROWS_AS(neg.check_simplex(), DomainError);
}

TEST_CASE("tg round trips every container") {
  testutil::TempDir dir("tgio");
  std::mt19937_64 rng(3);

  TensorGrid g = testutil::random_grid(rng, 5, 7, 3);
  save_grid(dir.str() + "/g.tg", g);
  const TensorGrid g2 = load_grid(dir.str() + "/g.tg");
  CHECK(g2.height == 5);
  CHECK(g2.width == 7);
  CHECK(g2.channels == 3);
  CHECK(g2.data == g.data);

  LabelMap m(3, 4, 0);
  for (int& v : m.labels) v = static_cast<int>(rng() % 3);
  save_labels(dir.str() + "/m.tg", m);
  CHECK(load_labels(dir.str() + "/m.tg").labels == m.labels);

  ScribbleMask s(3, 4);
  s.at(0, 0) = 1;
  s.at(2, 3) = 0;
  save_scribbles(dir.str() + "/s.tg", s);
  const ScribbleMask s2 = load_scribbles(dir.str() + "/s.tg");
  CHECK(s2.entries == s.entries);
  CHECK(s2.labeled_count() == 2);

  SoftLabeling p = testutil::random_soft(rng, 4, 4, 2);
  save_soft(dir.str() + "/p.tg", p);
  CHECK(load_soft(dir.str() + "/p.tg").probs == p.probs);
}

TEST_CASE("tg reader rejects corrupt headers") {
  testutil::TempDir dir("tgbad");
  {
    std::ofstream os(dir.str() + "/bad.tg", std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_AS(read_tg(dir.str() + "/bad.tg"), IoError);
  CHECK_THROWS_AS(read_tg(dir.str() + "/missing.tg"), IoError);
}
