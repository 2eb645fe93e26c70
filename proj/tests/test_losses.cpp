// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "refseg/losses.hpp"
#include "refseg/rng.hpp"

using namespace refseg;
using Eigen::VectorXd;

namespace {

// inputs conditioned to keep central differences valid: clear max gap and
// ratios away from clips and histogram bin boundaries
struct Batch {
  std::vector<VectorXd> a, m;
};

Batch random_batch(Rng& rng, int nsamples, int cells, const AmcrConfig& cfg) {
  Batch b;
  while ((int)b.a.size() < nsamples) {
    VectorXd a(cells), m(cells);
    for (int i = 0; i < cells; ++i) {
      a(i) = rng.real(0.02, 1.0);
      m(i) = rng.chance(0.45) ? 1.0 : 0.0;
    }
    if (m.sum() < 1.0) m(0) = 1.0;
    // reject near-ties at the max (the normalizer is a hard max)
    Eigen::Index am;
    double mx = a.maxCoeff(&am);
    double second = -1;
    for (int i = 0; i < cells; ++i)
      if (i != am) second = std::max(second, a(i));
    if (mx - second < 1e-2) continue;
    // reject ratios near the clip bounds or near a histogram bin edge
    double n_soft = 0;
    for (int i = 0; i < cells; ++i) n_soft += 1.0 / (1.0 + std::exp(-cfg.temp * (a(i) / mx - cfg.rho)));
    double r = n_soft / m.sum();
    if (r < 0.05 || r > 0.95) continue;
    double t = r * cfg.hist_bins - 0.5;
    if (std::abs(t - std::round(t)) < 0.05) continue;
    b.a.push_back(a);
    b.m.push_back(m);
  }
  return b;
}

}  // namespace

TEST_CASE("amcr gradient matches central finite differences") {
  AmcrConfig cfg;
  Rng rng(2024);
  const double h = 1e-4;
  for (int trial = 0; trial < 20; ++trial) {
    Batch b = random_batch(rng, 4, 64, cfg);
    AmcrResult res = amcr_loss(b.a, b.m, cfg, true);
    for (size_t s = 0; s < b.a.size(); ++s) {
      for (int i = 0; i < 64; i += 3) {  // stride keeps the test fast
        auto ap = b.a, am = b.a;
        ap[s](i) += h;
        am[s](i) -= h;
        double fd = (amcr_loss(ap, b.m, cfg).total - amcr_loss(am, b.m, cfg).total) / (2 * h);
        double an = res.grad_a[s](i);
        double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        CHECK(std::abs(fd - an) / denom <= 1e-4);
      }
    }
  }
}

TEST_CASE("amcr extremes: localization 0 inside, 1 per sample outside") {
  AmcrConfig cfg;
  std::vector<VectorXd> a(3), m(3);
  for (int b = 0; b < 3; ++b) {
    a[b] = VectorXd::Zero(64);
    m[b] = VectorXd::Zero(64);
    for (int i = 0; i < 20; ++i) m[b](i) = 1.0;
    for (int i = 0; i < 20; ++i) a[b](i) = 0.3 + 0.01 * i;  // all mass inside
  }
  AmcrResult inside = amcr_loss(a, m, cfg);
  CHECK(std::abs(inside.localization) <= 1e-9);

  for (int b = 0; b < 3; ++b) {
    a[b].setZero();
    for (int i = 20; i < 50; ++i) a[b](i) = 0.2;  // all mass outside
  }
  AmcrResult outside = amcr_loss(a, m, cfg);
  CHECK(std::abs(outside.localization - 3.0) <= 1e-9);
}

TEST_CASE("amcr half mass inside gives localization one half") {
  AmcrConfig cfg;
  std::vector<VectorXd> a(1), m(1);
  a[0] = VectorXd::Zero(4);
  m[0] = VectorXd::Zero(4);
  m[0](0) = 1.0;
  a[0](0) = 0.25;
  a[0](1) = 0.25;
  AmcrResult r = amcr_loss(a, m, cfg);
  CHECK(r.localization == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("amcr localization is invariant to positive rescaling") {
  AmcrConfig cfg;
  Rng rng(5);
  Batch b = random_batch(rng, 3, 64, cfg);
  double base = amcr_loss(b.a, b.m, cfg).localization;
  for (double c : {0.5, 2.0, 17.0}) {
    auto scaled = b.a;
    for (auto& v : scaled) v *= c;
    CHECK(amcr_loss(scaled, b.m, cfg).localization == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("amcr decreases when mass moves into the mask holding n(A) fixed") {
  AmcrConfig cfg;
  Rng rng(9);
  Batch b = random_batch(rng, 2, 64, cfg);
  double prev = amcr_loss(b.a, b.m, cfg).total;
  // swapping a larger outside value with a smaller inside value preserves the
  // value multiset (so n(A), max(A), sum(A) and the KL term are unchanged)
  for (int step = 0; step < 6; ++step) {
    int best_in = -1, best_out = -1;
    for (int i = 0; i < 64; ++i) {
      if (b.m[0](i) > 0.5 && (best_in < 0 || b.a[0](i) < b.a[0](best_in))) best_in = i;
      if (b.m[0](i) < 0.5 && (best_out < 0 || b.a[0](i) > b.a[0](best_out))) best_out = i;
    }
    if (b.a[0](best_out) <= b.a[0](best_in)) break;
    std::swap(b.a[0](best_in), b.a[0](best_out));
    double cur = amcr_loss(b.a, b.m, cfg).total;
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("amcr error and degenerate handling") {
  AmcrConfig cfg;
  std::vector<VectorXd> a(1), m(1);
  a[0] = VectorXd::Zero(16);
  m[0] = VectorXd::Ones(16);
  CHECK_THROWS_AS(amcr_loss(a, m, cfg), Error);  // sum(A)=0

  a[0].setConstant(0.1);
  m[0].setZero();  // empty mask: localization 0, no Q entry
  AmcrResult r = amcr_loss(a, m, cfg);
  CHECK(r.localization == 0.0);
  CHECK(r.kl == 0.0);

  std::vector<VectorXd> bad_m(1, VectorXd::Ones(9));
  CHECK_THROWS_AS(amcr_loss(a, bad_m, cfg), Error);
}

TEST_CASE("downsample_mask uses the half-area rule") {
  BinaryMask m(16, 16);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 16; ++x) m.set(x, y);  // top half filled
  VectorXd d = downsample_mask(m, 4);           // 4x4 cells
  for (int gy = 0; gy < 4; ++gy)
    for (int gx = 0; gx < 4; ++gx) CHECK(d(gy * 4 + gx) == (gy < 2 ? 1.0 : 0.0));

  // exactly half the cell -> counted as mask
  BinaryMask half(4, 4);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) half.set(x, y);
  VectorXd dh = downsample_mask(half, 1);
  CHECK(dh(0) == 1.0);
}

TEST_CASE("ce_loss analytic cases and oracle") {
  // one-hot with large margin -> loss ~ 0
  nn::Mat logits(4, 66);
  std::vector<int> targets = {3, 10, 64, 65};
  logits.setZero();
  for (int i = 0; i < 4; ++i) logits(i, targets[(size_t)i]) = 50.f;
  CHECK(ce_loss(logits, targets) == doctest::Approx(0.0).epsilon(1e-6));

  // uniform logits -> ln(V)
  logits.setConstant(0.37f);
  CHECK(ce_loss(logits, targets) == doctest::Approx(std::log(66.0)).epsilon(1e-6));

  // random case against a direct per-token log-softmax summation
  Rng rng(77);
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index v = 0; v < logits.cols(); ++v) logits(i, v) = (float)rng.real(-3, 3);
  double want = 0;
  for (int i = 0; i < 4; ++i) {
    double z = 0;
    for (int v = 0; v < 66; ++v) z += std::exp((double)logits(i, v));
    want += -std::log(std::exp((double)logits(i, targets[(size_t)i])) / z);
  }
  want /= 4;
  CHECK(ce_loss(logits, targets) == doctest::Approx(want).epsilon(1e-6));

  std::vector<uint8_t> none(4, 0);
  CHECK_THROWS_AS(ce_loss(logits, targets, &none), Error);
}

TEST_CASE("ce_backward matches finite differences of ce_loss") {
  Rng rng(78);
  nn::Mat logits(3, 8);
  for (Eigen::Index i = 0; i < logits.size(); ++i) logits.data()[i] = (float)rng.real(-2, 2);
  std::vector<int> targets = {1, 5, 7};
  nn::Mat d = ce_backward(logits, targets);
  for (int i = 0; i < 3; ++i)
    for (int v = 0; v < 8; ++v) {
      nn::Mat lp = logits, lm = logits;
      lp(i, v) += 1e-3f;
      lm(i, v) -= 1e-3f;
      double fd = (ce_loss(lp, targets) - ce_loss(lm, targets)) / 2e-3;
      CHECK(d(i, v) == doctest::Approx(fd).epsilon(5e-3));
    }
}

TEST_CASE("total_loss and weakly_supervised_loss arithmetic") {
  CHECK(total_loss(2.0, 0.5, 0.4) == doctest::Approx(2.2).epsilon(1e-12));
  CHECK(total_loss(1.7, 0.9, 0.0) == 1.7);
  CHECK(total_loss(1.7, 0.0, 0.4) == 1.7);
  CHECK_THROWS_AS(total_loss(std::nan(""), 0.0, 0.1), Error);

  CHECK(weakly_supervised_loss(1.0, 2.0, 0.9) == doctest::Approx(2.8).epsilon(1e-12));
  CHECK(weakly_supervised_loss(1.5, std::nullopt, 0.95) == 1.5);
  CHECK(weakly_supervised_loss(1.0, 1.0, 1.0) == 2.0);
  CHECK_THROWS_AS(weakly_supervised_loss(1.0, 1.0, 0.5), Error);
  CHECK_THROWS_AS(weakly_supervised_loss(1.0, 1.0, 1.2), Error);

  // exact linearity in the weighting arguments
  for (double g : {0.9, 0.925, 0.95, 1.0}) {
    double l = weakly_supervised_loss(0.7, 1.3, g);
    CHECK(l == 0.7 + g * 1.3);
  }
}
