// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "refseg/error.hpp"
#include "refseg/rng.hpp"

namespace refseg::nn {

template <typename S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using RowT = Eigen::Matrix<S, 1, Eigen::Dynamic>;
template <typename S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Mat = MatT<float>;
using Row = RowT<float>;
using Vec = VecT<float>;

// ---------------------------------------------------------------------------
// flat parameter storage with named views; gradients share the layout

class ParamStore {
public:
  struct Entry {
    std::string name;
    size_t offset = 0;
    int rows = 0, cols = 0;
  };

  // registration happens once, at model construction
  void add(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw_error(Errc::run, "ParamStore: duplicate name " + name);
    Entry e{name, data_.size(), rows, cols};
    index_[name] = entries_.size();
    entries_.push_back(e);
    data_.resize(data_.size() + static_cast<size_t>(rows) * cols, 0.f);
  }

  Eigen::Map<Mat> param(const std::string& name) { return map_in(data_, name); }
  bool has(const std::string& name) const { return index_.count(name) != 0; }

  // view of an external buffer with this store's layout (gradient buffers)
  Eigen::Map<Mat> map_in(std::vector<float>& buf, const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw_error(Errc::run, "ParamStore: unknown name " + name);
    const Entry& e = entries_[it->second];
    return Eigen::Map<Mat>(buf.data() + e.offset, e.rows, e.cols);
  }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }
  const std::vector<Entry>& entries() const { return entries_; }
  size_t size() const { return data_.size(); }

private:
  std::vector<float> data_;
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

// ---------------------------------------------------------------------------
// primitives; backward functions accumulate into their d* outputs

template <typename S>
MatT<S> linear_fwd(const MatT<S>& x, const MatT<S>& w, const MatT<S>& b) {
  return (x * w).rowwise() + RowT<S>(b.row(0));
}

template <typename S, typename DW, typename DB>
void linear_bwd(const MatT<S>& x, const MatT<S>& w, const MatT<S>& dy, MatT<S>& dx_add,
                Eigen::MatrixBase<DW> const& dw_add, Eigen::MatrixBase<DB> const& db_add) {
  dx_add.noalias() += dy * w.transpose();
  const_cast<Eigen::MatrixBase<DW>&>(dw_add).noalias() += x.transpose() * dy;
  const_cast<Eigen::MatrixBase<DB>&>(db_add).row(0) += dy.colwise().sum();
}

template <typename S>
struct LnCache {
  MatT<S> xhat;
  VecT<S> inv_std;
};

template <typename S>
MatT<S> layernorm_fwd(const MatT<S>& x, const MatT<S>& g, const MatT<S>& b, LnCache<S>* cache) {
  const S eps = S(1e-5);
  MatT<S> out(x.rows(), x.cols());
  cache->xhat.resize(x.rows(), x.cols());
  cache->inv_std.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    S mean = x.row(i).mean();
    RowT<S> centered = x.row(i).array() - mean;
    S var = centered.squaredNorm() / S(x.cols());
    S inv = S(1) / std::sqrt(var + eps);
    cache->inv_std(i) = inv;
    cache->xhat.row(i) = centered * inv;
    out.row(i) = cache->xhat.row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
  return out;
}

template <typename S, typename DG, typename DB>
void layernorm_bwd(const MatT<S>& dy, const MatT<S>& g, const LnCache<S>& cache, MatT<S>& dx_add,
                   Eigen::MatrixBase<DG> const& dg_add, Eigen::MatrixBase<DB> const& db_add) {
  const S n = S(dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    RowT<S> dxhat = dy.row(i).cwiseProduct(g.row(0));
    S m1 = dxhat.mean();
    S m2 = dxhat.cwiseProduct(cache.xhat.row(i)).mean();
    dx_add.row(i) += cache.inv_std(i) * (dxhat.array() - m1 - cache.xhat.row(i).array() * m2).matrix();
    const_cast<Eigen::MatrixBase<DG>&>(dg_add).row(0) += dy.row(i).cwiseProduct(cache.xhat.row(i));
    const_cast<Eigen::MatrixBase<DB>&>(db_add).row(0) += dy.row(i);
    (void)n;
  }
}

// numerically stable per-row softmax; rows with every entry masked to -inf are
// not expected here
template <typename S>
MatT<S> softmax_rows(const MatT<S>& scores) {
  MatT<S> p(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    S mx = scores.row(i).maxCoeff();
    RowT<S> e = (scores.row(i).array() - mx).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

template <typename S>
MatT<S> softmax_rows_bwd(const MatT<S>& p, const MatT<S>& dp) {
  MatT<S> ds(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    S dot = p.row(i).cwiseProduct(dp.row(i)).sum();
    ds.row(i) = p.row(i).cwiseProduct((dp.row(i).array() - dot).matrix());
  }
  return ds;
}

template <typename S>
MatT<S> gelu_fwd(const MatT<S>& x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  return x.unaryExpr([c](S v) {
    S t = std::tanh(c * (v + S(0.044715) * v * v * v));
    return S(0.5) * v * (S(1) + t);
  });
}

template <typename S>
MatT<S> gelu_bwd(const MatT<S>& x, const MatT<S>& dy) {
  const S c = S(0.7978845608028654);
  MatT<S> dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    S v = x.data()[i];
    S u = c * (v + S(0.044715) * v * v * v);
    S t = std::tanh(u);
    S sech2 = S(1) - t * t;
    S du = c * (S(1) + S(3) * S(0.044715) * v * v);
    dx.data()[i] = dy.data()[i] * (S(0.5) * (S(1) + t) + S(0.5) * v * sech2 * du);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// multi-head attention over row-major (tokens x dim) activations

template <typename S>
struct MhaCache {
  MatT<S> q_in, kv_in;        // inputs
  MatT<S> q, k, v;            // projections
  std::vector<MatT<S>> probs;  // per-head feature softmax (Tq x Tk)
  std::vector<MatT<S>> scores; // per-head masked scores, kept for map extraction
  MatT<S> concat;             // pre-output-projection
};

struct MhaMasks {
  bool causal = false;
  const std::vector<uint8_t>* key_valid = nullptr;  // per key token; nullptr = all valid
};

template <typename S>
struct MhaParamRefs {
  Eigen::Map<MatT<S>> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
MatT<S> mha_fwd(const MatT<S>& q_in, const MatT<S>& kv_in, const MhaParamRefs<S>& p, int heads,
                const MhaMasks& masks, MhaCache<S>* cache) {
  const Eigen::Index tq = q_in.rows(), tk = kv_in.rows(), d = q_in.cols();
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  cache->q_in = q_in;
  cache->kv_in = kv_in;
  cache->q = linear_fwd<S>(q_in, MatT<S>(p.wq), MatT<S>(p.bq));
  cache->k = linear_fwd<S>(kv_in, MatT<S>(p.wk), MatT<S>(p.bk));
  cache->v = linear_fwd<S>(kv_in, MatT<S>(p.wv), MatT<S>(p.bv));
  cache->probs.assign(heads, {});
  cache->scores.assign(heads, {});
  cache->concat.resize(tq, d);
  for (int h = 0; h < heads; ++h) {
    auto qh = cache->q.middleCols(h * dh, dh);
    auto kh = cache->k.middleCols(h * dh, dh);
    auto vh = cache->v.middleCols(h * dh, dh);
    MatT<S> sc = qh * kh.transpose() * scale;
    if (masks.causal)
      for (Eigen::Index i = 0; i < tq; ++i)
        for (Eigen::Index j = i + 1; j < tk; ++j) sc(i, j) = S(-1e30);
    if (masks.key_valid)
      for (Eigen::Index j = 0; j < tk; ++j)
        if (!(*masks.key_valid)[static_cast<size_t>(j)])
          for (Eigen::Index i = 0; i < tq; ++i) sc(i, j) = S(-1e30);
    cache->scores[h] = sc;
    cache->probs[h] = softmax_rows<S>(sc);
    cache->concat.middleCols(h * dh, dh).noalias() = cache->probs[h] * vh;
  }
  return linear_fwd<S>(cache->concat, MatT<S>(p.wo), MatT<S>(p.bo));
}

// dscores_extra, when non-null, holds per-head additive score gradients from
// paths outside the feature softmax (the cross-attention map).
template <typename S>
struct MhaGradRefs {
  Eigen::Map<MatT<S>> dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo;
};

template <typename S>
void mha_bwd(const MatT<S>& dy, const MhaParamRefs<S>& p, const MhaGradRefs<S>& g, int heads,
             const MhaCache<S>& cache, MatT<S>& dq_in_add, MatT<S>& dkv_in_add,
             const std::vector<MatT<S>>* dscores_extra = nullptr) {
  const Eigen::Index tq = cache.q_in.rows(), tk = cache.kv_in.rows(), d = cache.q_in.cols();
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(S(dh));

  MatT<S> dconcat(tq, d);
  dconcat.setZero();
  linear_bwd<S>(cache.concat, MatT<S>(p.wo), dy, dconcat, g.dwo, g.dbo);

  MatT<S> dq(tq, d), dk(tk, d), dv(tk, d);
  dq.setZero();
  dk.setZero();
  dv.setZero();
  for (int h = 0; h < heads; ++h) {
    auto qh = cache.q.middleCols(h * dh, dh);
    auto kh = cache.k.middleCols(h * dh, dh);
    auto vh = cache.v.middleCols(h * dh, dh);
    MatT<S> doh = dconcat.middleCols(h * dh, dh);
    MatT<S> dp = doh * vh.transpose();
    dv.middleCols(h * dh, dh).noalias() = cache.probs[h].transpose() * doh;
    MatT<S> ds = softmax_rows_bwd<S>(cache.probs[h], dp);
    if (dscores_extra) ds += (*dscores_extra)[static_cast<size_t>(h)];
    dq.middleCols(h * dh, dh).noalias() = ds * kh * scale;
    dk.middleCols(h * dh, dh).noalias() = ds.transpose() * qh * scale;
  }
  linear_bwd<S>(cache.q_in, MatT<S>(p.wq), dq, dq_in_add, g.dwq, g.dbq);
  linear_bwd<S>(cache.kv_in, MatT<S>(p.wk), dk, dkv_in_add, g.dwk, g.dbk);
  linear_bwd<S>(cache.kv_in, MatT<S>(p.wv), dv, dkv_in_add, g.dwv, g.dbv);
}

// ---------------------------------------------------------------------------
// initialization

inline void xavier_init(Eigen::Map<Mat> m, Rng& rng) {
  float a = std::sqrt(6.0f / float(m.rows() + m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<float>(rng.real(-a, a));
}

inline void uniform_init(Eigen::Map<Mat> m, Rng& rng, float a) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<float>(rng.real(-a, a));
}

}  // namespace refseg::nn
