// SPDX-License-Identifier: Apache-2.0
#include "refseg/losses.hpp"

#include <cmath>

namespace refseg {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

AmcrResult amcr_loss(const std::vector<Eigen::VectorXd>& attn,
                     const std::vector<Eigen::VectorXd>& mask, const AmcrConfig& cfg,
                     bool want_grad) {
  const size_t n = attn.size();
  if (mask.size() != n) throw_error(Errc::dim_mismatch, "amcr_loss: batch size mismatch");
  AmcrResult res;
  if (want_grad) {
    res.grad_a.resize(n);
    for (size_t b = 0; b < n; ++b) {
      res.grad_a[b].resize(attn[b].size());
      res.grad_a[b].setZero();
    }
  }
  if (n == 0) return res;

  struct PerSample {
    double v = 0, u = 0;           // sum A, sum A.*M
    double m_sum = 0;
    double max_a = 0;
    Eigen::Index argmax = 0;
    Eigen::VectorXd sig;           // soft indicator per cell
    double n_soft = 0;
    double ratio = 0;              // clipped n/sum(M)
    bool in_hist = false;
    bool clipped = false;
  };
  std::vector<PerSample> ps(n);

  // localization + per-sample soft counts
  for (size_t b = 0; b < n; ++b) {
    if (attn[b].size() != mask[b].size())
      throw_error(Errc::dim_mismatch, "amcr_loss: attention/mask grid mismatch");
    PerSample& s = ps[b];
    s.v = attn[b].sum();
    if (!(s.v > 0.0))
      throw_error(Errc::run, "amcr_loss: attention mass is zero (collapsed upstream)");
    s.u = attn[b].cwiseProduct(mask[b]).sum();
    s.m_sum = mask[b].sum();
    if (s.m_sum > 0.0) res.localization += 1.0 - s.u / s.v;

    s.max_a = attn[b].maxCoeff(&s.argmax);
    s.sig.resize(attn[b].size());
    for (Eigen::Index i = 0; i < attn[b].size(); ++i)
      s.sig(i) = sigmoid(cfg.temp * (attn[b](i) / s.max_a - cfg.rho));
    s.n_soft = s.sig.sum();
    if (s.m_sum > 0.0) {
      s.in_hist = true;
      double raw = s.n_soft / s.m_sum;
      s.ratio = std::clamp(raw, cfg.eps, 1.0);
      s.clipped = raw < cfg.eps || raw > 1.0;
    }
  }

  // soft histogram of the ratios over [0,1]
  const int nb = cfg.hist_bins;
  Eigen::VectorXd hist(nb);
  hist.setZero();
  struct BinW {
    int k0 = -1, k1 = -1;
    double dw_dr = 0;  // weight derivative for (k1 gains, k0 loses)
  };
  std::vector<BinW> binw(n);
  int n_in_hist = 0;
  for (size_t b = 0; b < n; ++b) {
    if (!ps[b].in_hist) continue;
    ++n_in_hist;
    double t = ps[b].ratio * nb - 0.5;
    if (t <= 0.0) {
      hist(0) += 1.0;
    } else if (t >= nb - 1) {
      hist(nb - 1) += 1.0;
    } else {
      int k0 = static_cast<int>(std::floor(t));
      double w = t - k0;
      hist(k0) += 1.0 - w;
      hist(k0 + 1) += w;
      binw[b] = {k0, k0 + 1, double(nb)};
    }
  }

  double kl = 0.0;
  Eigen::VectorXd dkl_dh(nb);
  dkl_dh.setZero();
  if (n_in_hist > 0) {
    const double z = double(n_in_hist) + nb * cfg.eps;
    const double u_k = 1.0 / nb;
    for (int k = 0; k < nb; ++k) {
      double q = (hist(k) + cfg.eps) / z;
      kl += u_k * std::log(u_k / q);
      dkl_dh(k) = -u_k / q / z;
    }
  }
  res.kl = kl;
  res.total = res.localization + cfg.psi * kl;

  if (!want_grad) return res;

  for (size_t b = 0; b < n; ++b) {
    const PerSample& s = ps[b];
    Eigen::VectorXd& g = res.grad_a[b];
    // localization
    if (s.m_sum > 0.0) {
      double inv_v = 1.0 / s.v;
      for (Eigen::Index i = 0; i < g.size(); ++i)
        g(i) += s.u * inv_v * inv_v - mask[b](i) * inv_v;
    }
    // collapse reduction through the soft count
    if (!s.in_hist || s.clipped || binw[b].k0 < 0) continue;
    double dkl_dr = (dkl_dh(binw[b].k1) - dkl_dh(binw[b].k0)) * binw[b].dw_dr;
    double dr_dn = 1.0 / s.m_sum;
    double coeff = cfg.psi * dkl_dr * dr_dn;
    double sum_sig_a = 0.0;
    for (Eigen::Index i = 0; i < g.size(); ++i) {
      double sp = s.sig(i) * (1.0 - s.sig(i)) * cfg.temp;
      g(i) += coeff * sp / s.max_a;
      sum_sig_a += sp * attn[b](i);
    }
    // the max cell also moves the normalizer
    g(s.argmax) += coeff * (-sum_sig_a / (s.max_a * s.max_a));
  }
  return res;
}

Eigen::VectorXd downsample_mask(const BinaryMask& mask, int grid) {
  if (grid <= 0 || mask.width % grid != 0 || mask.height % grid != 0)
    throw_error(Errc::dim_mismatch, "downsample_mask: grid must divide mask dimensions");
  int cw = mask.width / grid, ch = mask.height / grid;
  Eigen::VectorXd out(grid * grid);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      int count = 0;
      for (int y = gy * ch; y < (gy + 1) * ch; ++y)
        for (int x = gx * cw; x < (gx + 1) * cw; ++x) count += mask.at(x, y) ? 1 : 0;
      out(gy * grid + gx) = (2 * count >= cw * ch) ? 1.0 : 0.0;
    }
  return out;
}

double ce_loss(const nn::Mat& logits, const std::vector<int>& targets,
               const std::vector<uint8_t>* valid) {
  if (static_cast<size_t>(logits.rows()) != targets.size())
    throw_error(Errc::dim_mismatch, "ce_loss: logits/targets length mismatch");
  double sum = 0.0;
  int n_valid = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (valid && !(*valid)[static_cast<size_t>(i)]) continue;
    ++n_valid;
    double mx = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index v = 0; v < logits.cols(); ++v) z += std::exp(double(logits(i, v)) - mx);
    int t = targets[static_cast<size_t>(i)];
    if (t < 0 || t >= logits.cols()) throw_error(Errc::run, "ce_loss: target out of vocabulary");
    sum += std::log(z) - (double(logits(i, t)) - mx);
  }
  if (n_valid == 0) throw_error(Errc::run, "ce_loss: all positions padded");
  return sum / n_valid;
}

nn::Mat ce_backward(const nn::Mat& logits, const std::vector<int>& targets,
                    const std::vector<uint8_t>* valid) {
  nn::Mat d(logits.rows(), logits.cols());
  d.setZero();
  int n_valid = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    if (!valid || (*valid)[static_cast<size_t>(i)]) ++n_valid;
  if (n_valid == 0) throw_error(Errc::run, "ce_backward: all positions padded");
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    if (valid && !(*valid)[static_cast<size_t>(i)]) continue;
    double mx = logits.row(i).maxCoeff();
    double z = 0.0;
    for (Eigen::Index v = 0; v < logits.cols(); ++v) z += std::exp(double(logits(i, v)) - mx);
    for (Eigen::Index v = 0; v < logits.cols(); ++v) {
      double p = std::exp(double(logits(i, v)) - mx) / z;
      double onehot = v == targets[static_cast<size_t>(i)] ? 1.0 : 0.0;
      d(i, v) = static_cast<float>((p - onehot) / n_valid);
    }
  }
  return d;
}

double total_loss(double ce, double amcr, double lambda) {
  if (!std::isfinite(ce) || !std::isfinite(amcr))
    throw_error(Errc::run, "total_loss: non-finite loss component");
  return ce + lambda * amcr;
}

double weakly_supervised_loss(std::optional<double> loss_gt, std::optional<double> loss_pseudo,
                              double gamma, double gamma0, double gamma_max) {
  if (gamma < gamma0 || gamma > gamma_max)
    throw_error(Errc::run, "weakly_supervised_loss: gamma outside the schedule range");
  double gt = loss_gt.value_or(0.0);
  double ps = loss_pseudo.value_or(0.0);
  return gt + gamma * ps;
}

}  // namespace refseg
