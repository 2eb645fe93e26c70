// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "refseg/geometry.hpp"
#include "refseg/nn.hpp"

namespace refseg {

struct AmcrConfig {
  double psi = 0.001;      // collapse-reduction balance
  double lambda = 0.4;     // weight of the regularizer in the total loss
  double rho = 0.5;        // attended-cell threshold as a fraction of max(A)
  double temp = 50.0;      // sigmoid steepness of the soft count
  int hist_bins = 10;      // batch histogram resolution for the KL estimate
  double eps = 1e-6;       // ratio clip floor and Laplace smoothing
};

struct AmcrResult {
  double total = 0.0;
  double localization = 0.0;  // sum over the batch, in [0, N]
  double kl = 0.0;            // KL(U || Q) over the batch ratio histogram
  std::vector<Eigen::VectorXd> grad_a;  // dtotal/dA per sample (when requested)
};

// Attention-mask consistency loss over a batch of flattened attention maps
// and masks on the same grid. Localization: sum_b (1 - sum(A.*M)/sum(A)).
// Collapse reduction: psi * KL(U || Q) where Q_b = clip(n(A_b)/sum(M_b), eps, 1),
// n(A) is a soft count of cells with A >= rho*max(A), and the KL is taken
// between a discretized Uniform(0,1) and the soft histogram of the Q ratios.
// Samples with an empty mask contribute 0 localization and are skipped in Q.
// Throws when shapes differ or any sample has sum(A) == 0.
AmcrResult amcr_loss(const std::vector<Eigen::VectorXd>& attn,
                     const std::vector<Eigen::VectorXd>& mask, const AmcrConfig& cfg,
                     bool want_grad = false);

// Mask downsampled to the attention grid: cell true when at least half of its
// area is masked.
Eigen::VectorXd downsample_mask(const BinaryMask& mask, int grid);

// Mean token-level cross entropy over non-padding positions (log-softmax in
// double). valid==nullptr means every position counts.
double ce_loss(const nn::Mat& logits, const std::vector<int>& targets,
               const std::vector<uint8_t>* valid = nullptr);

// dlogits for the mean cross entropy above.
nn::Mat ce_backward(const nn::Mat& logits, const std::vector<int>& targets,
                    const std::vector<uint8_t>* valid = nullptr);

// L_total = L_CE + lambda * L_AMCR
double total_loss(double ce, double amcr, double lambda);

// L = L_gt + gamma * L_pseudo; absent terms are 0. gamma must lie within
// the schedule bounds [gamma0, gamma_max].
double weakly_supervised_loss(std::optional<double> loss_gt, std::optional<double> loss_pseudo,
                              double gamma, double gamma0 = 0.9, double gamma_max = 1.0);

}  // namespace refseg
