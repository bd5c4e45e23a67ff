// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "uniqseg/losses.hpp"
#include "uniqseg/rng.hpp"

using namespace uniqseg;
using nn::Graph;
using nn::Tensor;

TEST_CASE("focal: frozen hand-computed scalars and limits") {
  // Single pixel at p = 0.5: 0.9 * 0.5^2.5 * ln2 and 0.1 * 0.5^2.5 * ln2.
  Tensor<double> z({1}), t0({1}), t1({1});
  t1[0] = 1.0;
  CHECK(loss::focal_loss(z, t0, 0.1, 2.5) == doctest::Approx(0.11027).epsilon(1e-4));
  CHECK(loss::focal_loss(z, t1, 0.1, 2.5) == doctest::Approx(0.012253).epsilon(1e-4));

  // p -> 0 with target 0: the negative branch vanishes.
  Tensor<double> zneg({1});
  zneg[0] = -40.0;
  CHECK(loss::focal_loss(zneg, t0, 0.1, 2.5) < 1e-12);

  // Shape mismatch is a contract error.
  Tensor<double> z2({2});
  CHECK_THROWS_AS(loss::focal_loss(z2, t0, 0.1, 2.5), ContractError);
}

TEST_CASE("dice: frozen examples and range") {
  // probs == binary target -> 0 (within the eps-induced slack).
  BinaryMask m(2, 2);
  m.set(0, 0, true);
  m.set(1, 1, true);
  Tensor<double> exact({2, 2});
  exact[0] = 1.0;
  exact[3] = 1.0;
  CHECK(loss::dice_loss(exact, m, 1e-6) == doctest::Approx(0.0).epsilon(1e-6));

  // probs = 0.5 over 4 pixels vs all-ones mask: 1 - 4/5 = 0.2.
  BinaryMask ones(2, 2);
  for (int i = 0; i < 4; ++i) ones.set(i / 2, i % 2, true);
  Tensor<double> half({2, 2});
  for (int i = 0; i < 4; ++i) half[i] = 0.5;
  CHECK(loss::dice_loss(half, ones, 1e-6) == doctest::Approx(0.2).epsilon(1e-6));

  // Disjoint supports: loss ~ 1.
  BinaryMask left(2, 2);
  left.set(0, 0, true);
  Tensor<double> right({2, 2});
  right[3] = 1.0;
  CHECK(loss::dice_loss(right, left, 1e-6) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("classification loss: uniform, perfect and empty-scene cases") {
  Graph<double> g;
  int n = 3, classes = 4;

  // Uniform logits: every row's CE is ln(C+1) = ln 5 regardless of weights.
  Tensor<double> uniform({n, classes + 1});
  auto zu = g.leaf(uniform, false);
  matching::Assignment as;
  as.pairs = {{0, 0}, {1, 1}};
  as.unmatched = {2};
  auto lu = loss::classification_loss(g, zu, as, std::vector<int>{2, 3}, 0.1);
  CHECK(g.value(lu)[0] == doctest::Approx(std::log(5.0)).epsilon(1e-9));

  // Perfect one-hot logits drive the loss to ~0.
  Tensor<double> sharp({n, classes + 1});
  sharp.at(0, 2) = 50.0;
  sharp.at(1, 3) = 50.0;
  sharp.at(2, 0) = 50.0;
  auto zs = g.leaf(sharp, false);
  auto ls = loss::classification_loss(g, zs, as, std::vector<int>{2, 3}, 0.1);
  CHECK(g.value(ls)[0] < 1e-12);

  // K = 0: only "no object" terms (weighting cancels in the mean).
  matching::Assignment empty;
  empty.unmatched = {0, 1, 2};
  auto le = loss::classification_loss(g, zu, empty, std::vector<int>{}, 0.1);
  CHECK(g.value(le)[0] == doctest::Approx(std::log(5.0)).epsilon(1e-9));

  // Label out of range.
  matching::Assignment bad;
  bad.pairs = {{0, 0}};
  CHECK_THROWS_AS(loss::classification_loss(g, zu, bad, std::vector<int>{9}, 0.1),
                  ContractError);
}

TEST_CASE("intra mask loss: perfect, empty, and the dice composition case") {
  Graph<double> g;
  BinaryMask ones(2, 2);
  for (int i = 0; i < 4; ++i) ones.set(i / 2, i % 2, true);

  // Logits 0 -> probs 0.5 vs all-ones target: mean dice = 0.2.
  Tensor<double> logits({2, 2, 2});
  auto z = g.leaf(logits, false);
  matching::Assignment as;
  as.pairs = {{0, 0}};
  as.unmatched = {1};
  auto l = loss::intra_mask_loss(g, z, as, {ones}, 1e-6);
  CHECK(g.value(l)[0] == doctest::Approx(0.2).epsilon(1e-6));

  // Perfect prediction: strongly positive logits inside, negative outside.
  Tensor<double> sharp({2, 2, 2});
  for (int i = 0; i < 4; ++i) sharp[i] = 50.0;
  auto zs = g.leaf(sharp, false);
  auto lp = loss::intra_mask_loss(g, zs, as, {ones}, 1e-6);
  CHECK(g.value(lp)[0] < 1e-6);

  // No matches -> 0 by the empty-mean convention.
  matching::Assignment none;
  none.unmatched = {0, 1};
  auto le = loss::intra_mask_loss(g, z, none, {}, 1e-6);
  CHECK(g.value(le)[0] == 0.0);
}

TEST_CASE("inter mask loss: empty memory, exclusion, pinned scalar") {
  Graph<double> g;
  loss::LossConfig lc;

  Tensor<double> filters({1, 3});  // 2 feature dims + bias, all zero
  auto f = g.leaf(filters, false);

  membank::Snapshot<double> empty;
  auto le = loss::inter_mask_loss(g, f, empty, "me", lc);
  CHECK(g.value(le)[0] == 0.0);

  // Memory holding only same-scene pixels contributes nothing.
  membank::Snapshot<double> own;
  own.embeddings = Tensor<double>({2, 2});
  own.embeddings.fill(3.0);
  own.provenance = {{"me", 1, 1, 0}, {"me", 2, 1, 0}};
  auto lo = loss::inter_mask_loss(g, f, own, "me", lc);
  CHECK(g.value(lo)[0] == 0.0);

  // One query, one foreign pixel, logit 0 (p = 0.5), focal(0.1, 2.5).
  membank::Snapshot<double> foreign;
  foreign.embeddings = Tensor<double>({1, 2});
  foreign.embeddings.fill(1.0);
  foreign.provenance = {{"other", 1, 1, 0}};
  auto lf = loss::inter_mask_loss(g, f, foreign, "me", lc);
  CHECK(g.value(lf)[0] == doctest::Approx(0.11027).epsilon(1e-4));

  // All pair logits strongly negative: perfect mismatch, loss ~ 0.
  Tensor<double> avoid({1, 3});
  avoid.at(0, 0) = -30.0;
  avoid.at(0, 1) = -30.0;
  avoid.at(0, 2) = -30.0;
  auto fa = g.leaf(avoid, false);
  auto la = loss::inter_mask_loss(g, fa, foreign, "me", lc);
  CHECK(g.value(la)[0] < 1e-12);

  // Embedding length mismatch is a contract error.
  Tensor<double> wide({1, 5});
  auto fw = g.leaf(wide, false);
  CHECK_THROWS_AS(loss::inter_mask_loss(g, fw, foreign, "me", lc), ContractError);
}

TEST_CASE("inter mask loss: all four kinds are finite and ordered sanely") {
  Graph<double> g;
  Tensor<double> filters({2, 3});
  filters.at(0, 2) = 1.0;   // bias 1 -> p ~ 0.73 on zero embeddings
  filters.at(1, 2) = -1.0;  // bias -1 -> p ~ 0.27
  auto f = g.leaf(filters, false);
  membank::Snapshot<double> snap;
  snap.embeddings = Tensor<double>({3, 2});
  snap.provenance = {{"a", 1, 1, 0}, {"b", 1, 2, 0}, {"c", 2, 1, 0}};

  for (auto kind : {loss::InterLossKind::Focal, loss::InterLossKind::L1, loss::InterLossKind::L2,
                    loss::InterLossKind::CrossEntropy}) {
    loss::LossConfig lc;
    lc.inter_loss_kind = kind;
    auto l = loss::inter_mask_loss(g, f, snap, "me", lc);
    CHECK(std::isfinite(g.value(l)[0]));
    CHECK(g.value(l)[0] > 0.0);
  }
}

TEST_CASE("equivariance loss: hand-unrolled 2x2 hflip oracle") {
  Graph<double> g;
  Tensor<double> fm({1, 2, 2});
  fm[0] = 1.0;
  fm[1] = 2.0;
  fm[2] = 3.0;
  fm[3] = 4.0;
  auto fmv = g.leaf(fm, false);

  Tensor<double> filters({1, 2});
  filters.at(0, 0) = 1.0;  // weight 1, bias 0
  auto fv = g.leaf(filters, false);

  BinaryMask m(2, 2);
  m.set(0, 0, true);

  geo::TransformSpec flip;
  flip.kind = geo::TransformKind::HFlip;
  BinaryMask tm = geo::apply_to_mask(flip, m, 1);
  REQUIRE(tm.get(0, 1));

  matching::Assignment as;
  as.pairs = {{0, 0}};
  auto l = loss::equivariance_loss(g, fv, fmv, flip, 1, as, {&tm}, 1e-6);

  // Hand unroll: decode(q, hflip(fm)) = [[2,1],[4,3]]; dice of sigmoid vs
  // the flipped target, all in naive arithmetic.
  double p[4] = {1.0 / (1.0 + std::exp(-2.0)), 1.0 / (1.0 + std::exp(-1.0)),
                 1.0 / (1.0 + std::exp(-4.0)), 1.0 / (1.0 + std::exp(-3.0))};
  double inter = p[1];  // target has a single pixel at (0,1)
  double psq = p[0] * p[0] + p[1] * p[1] + p[2] * p[2] + p[3] * p[3];
  double expect = 1.0 - (2.0 * inter + 1e-6) / (psq + 1.0 + 1e-6);
  CHECK(g.value(l)[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("equivariance loss: identity transform collapses to the intra loss") {
  Graph<double> g;
  Rng rng(8);
  Tensor<double> fm({3, 4, 4});
  for (std::size_t i = 0; i < fm.size(); ++i) fm[i] = rng.uniform(-1, 1);
  Tensor<double> filters({2, 4});
  for (std::size_t i = 0; i < filters.size(); ++i) filters[i] = rng.uniform(-1, 1);
  auto fmv = g.leaf(fm, false);
  auto fv = g.leaf(filters, false);

  BinaryMask m(4, 4);
  for (int i = 0; i < 5; ++i) m.set(i, i % 4, true);
  matching::Assignment as;
  as.pairs = {{0, 0}};
  as.unmatched = {1};

  auto decoded = g.decode_queries(fv, fmv);
  auto intra = loss::intra_mask_loss(g, decoded, as, {m}, 1e-6);

  geo::TransformSpec ident;
  auto equi = loss::equivariance_loss(g, fv, fmv, ident, 1, as, {&m}, 1e-6);
  CHECK(g.value(intra)[0] == g.value(equi)[0]);  // literal float equality
}

TEST_CASE("total objective: arithmetic, lambda=0 reduction, divergence") {
  Graph<double> g;
  auto scalar = [&g](double v) {
    Tensor<double> t({1});
    t[0] = v;
    return g.leaf(t, false);
  };
  loss::LossConfig lc;
  lc.lambda_equi = 3.0;
  loss::LossReport report;
  auto total = loss::total_objective(g, scalar(0.5), scalar(0.2), scalar(0.1), scalar(0.3), lc,
                                     report);
  CHECK(g.value(total)[0] == doctest::Approx(1.7).epsilon(1e-12));
  CHECK(report.total == doctest::Approx(1.7).epsilon(1e-12));

  lc.lambda_equi = 0.0;
  auto reduced = loss::total_objective(g, scalar(0.5), scalar(0.2), scalar(0.1), scalar(9.9), lc,
                                       report);
  CHECK(g.value(reduced)[0] == doctest::Approx(0.8).epsilon(1e-12));

  auto nan = scalar(std::numeric_limits<double>::quiet_NaN());
  CHECK_THROWS_AS(loss::total_objective(g, nan, scalar(0), scalar(0), scalar(0), lc, report),
                  DivergenceError);
}

TEST_CASE("loss ranges: finite over logits in [-50, 50]") {
  Rng rng(123);
  Graph<double> g;
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> z({3, 3});
    Tensor<double> t({3, 3});
    for (int i = 0; i < 9; ++i) {
      z[i] = rng.uniform(-50.0, 50.0);
      t[i] = rng.uniform_u32(2);
    }
    double f = loss::focal_loss(z, t, 0.1, 2.5);
    CHECK(std::isfinite(f));
    CHECK(f >= 0.0);

    BinaryMask m(3, 3);
    for (int i = 0; i < 9; ++i)
      if (t[i] > 0.5) m.set(i / 3, i % 3, true);
    Tensor<double> probs({3, 3});
    for (int i = 0; i < 9; ++i) probs[i] = nn::stable_sigmoid(z[i]);
    double d = loss::dice_loss(probs, m, 1e-6);
    CHECK(std::isfinite(d));
    CHECK(d >= 0.0);
    CHECK(d <= 1.0);
  }
}
