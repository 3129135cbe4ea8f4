#pragma once

// Straight-line reference implementations used as test oracles. Nothing here
// calls into the library's numeric code; loops over plain indices only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mmda/config.hpp"

namespace oracle {

using mmda::Matrix;
using mmda::ScoreRecord;

inline Matrix softmax(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    double mx = s(r, 0);
    for (Eigen::Index c = 1; c < s.cols(); ++c) mx = std::max(mx, s(r, c));
    double z = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) z += std::exp(s(r, c) - mx);
    for (Eigen::Index c = 0; c < s.cols(); ++c) out(r, c) = std::exp(s(r, c) - mx) / z;
  }
  return out;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out = Matrix::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < b.cols(); ++j)
      for (Eigen::Index k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

inline Matrix cols(const Matrix& m, Eigen::Index start, Eigen::Index n) {
  Matrix out(m.rows(), n);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < n; ++c) out(r, c) = m(r, start + c);
  return out;
}

/// softmax(q k^T s) v
inline Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v, double s) {
  Matrix logits(q.rows(), k.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < k.rows(); ++j) {
      double dot = 0.0;
      for (Eigen::Index c = 0; c < q.cols(); ++c) dot += q(i, c) * k(j, c);
      logits(i, j) = dot * s;
    }
  return matmul(softmax(logits), v);
}

/// Differential attention of one sample: (softmax(Q1 K1^T s) - lambda softmax(Q2 K2^T s)) V.
inline Matrix differential_attention(const Matrix& x, const Matrix& wq1, const Matrix& wq2, const Matrix& wk1,
                                     const Matrix& wk2, const Matrix& wv, double lambda, double s) {
  const Matrix v = matmul(x, wv);
  Matrix a = attention(matmul(x, wq1), matmul(x, wk1), v, s);
  const Matrix b = attention(matmul(x, wq2), matmul(x, wk2), v, s);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) -= lambda * b(i, j);
  return a;
}

/// Elementwise evaluation of the paired head on one sample.
inline Matrix paired_head(const Matrix& x, const Matrix& x_pair, const Matrix& wq, const Matrix& wk, const Matrix& wv,
                          double lambda, int embed_dim) {
  const Eigen::Index n = x.rows(), nd = x.cols(), dk = wq.cols() / 2, dv = wv.cols();
  Matrix joint(n, 2 * nd);
  for (Eigen::Index r = 0; r < n; ++r)
    for (Eigen::Index c = 0; c < nd; ++c) {
      joint(r, c) = x(r, c);
      joint(r, nd + c) = x_pair(r, c);
    }
  const Matrix qq = matmul(joint, wq), kk = matmul(joint, wk), v = matmul(joint, wv);
  const double s = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  Matrix a(n, n), a2(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      double d1 = 0.0, d2 = 0.0;
      for (Eigen::Index c = 0; c < dk; ++c) {
        d1 += qq(i, c) * kk(j, c);
        d2 += qq(i, dk + c) * kk(j, dk + c);
      }
      a(i, j) = d1 * s;
      a2(i, j) = d2 * s;
    }
  a = softmax(a);
  a2 = softmax(a2);
  Matrix out = Matrix::Zero(n, dv);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index c = 0; c < dv; ++c)
      for (Eigen::Index j = 0; j < n; ++j) out(i, c) += (a(i, j) - lambda * a2(i, j)) * v(j, c);
  return out;
}

/// Vanilla multi-head self-attention over one sample with per-head
/// (wq, wk, wv) acting on n_d features; heads concatenated on features.
struct MhsaHead {
  Matrix wq, wk, wv;
};

inline Matrix mhsa(const Matrix& x, const std::vector<MhsaHead>& heads, double s) {
  std::vector<Matrix> outs;
  Eigen::Index width = 0;
  for (const auto& h : heads) {
    outs.push_back(attention(matmul(x, h.wq), matmul(x, h.wk), matmul(x, h.wv), s));
    width += outs.back().cols();
  }
  Matrix out(x.rows(), width);
  Eigen::Index c0 = 0;
  for (const auto& o : outs) {
    for (Eigen::Index r = 0; r < o.rows(); ++r)
      for (Eigen::Index c = 0; c < o.cols(); ++c) out(r, c0 + c) = o(r, c);
    c0 += o.cols();
  }
  return out;
}

inline double gelu(double x) {
  const double k = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

struct Mlp {
  Matrix w1, b1, w2, b2;
};

inline Mlp mlp_of(const mmda::Mlp& m) { return {m.w1.value, m.b1.value, m.w2.value, m.b2.value}; }

inline std::vector<double> apply(const Mlp& m, const std::vector<double>& x) {
  const auto n = static_cast<Eigen::Index>(x.size());
  std::vector<double> h(static_cast<std::size_t>(m.w1.cols())), out(static_cast<std::size_t>(m.w2.cols()));
  for (Eigen::Index j = 0; j < m.w1.cols(); ++j) {
    double acc = m.b1(0, j);
    for (Eigen::Index i = 0; i < n; ++i) acc += x[static_cast<std::size_t>(i)] * m.w1(i, j);
    h[static_cast<std::size_t>(j)] = gelu(acc);
  }
  for (Eigen::Index j = 0; j < m.w2.cols(); ++j) {
    double acc = m.b2(0, j);
    for (Eigen::Index i = 0; i < m.w2.rows(); ++i) acc += h[static_cast<std::size_t>(i)] * m.w2(i, j);
    out[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

/// Two-pass U-shaped stack on one row: adapt[i-1] is Adapt_i, remap[i] is Remap_i.
inline std::vector<std::vector<double>> two_pass(const std::vector<double>& v0, const std::vector<Mlp>& adapt,
                                                 const std::vector<Mlp>& remap) {
  const std::size_t d = adapt.size();
  std::vector<std::vector<double>> v{v0};
  for (std::size_t i = 1; i <= d; ++i) v.push_back(oracle::apply(adapt[i - 1], v[i - 1]));
  std::vector<std::vector<double>> vp(d + 1);
  vp[d] = v[d];
  for (std::size_t k = d; k-- > 0;) {
    const auto r = oracle::apply(remap[k], vp[k + 1]);
    vp[k] = v[k];
    for (std::size_t c = 0; c < r.size(); ++c) vp[k][c] += r[c];
  }
  return vp;
}

/// Mixture of experts on one row: softmax gate, keep top-k (ties to lower
/// index), renormalize, weighted sum of the kept experts.
inline std::vector<double> moe(const std::vector<Mlp>& experts, const Matrix& gate, int top_k,
                               const std::vector<double>& x) {
  const auto n = static_cast<std::size_t>(gate.cols());
  std::vector<double> logits(n, 0.0);
  for (std::size_t e = 0; e < n; ++e)
    for (std::size_t i = 0; i < x.size(); ++i) logits[e] += x[i] * gate(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e));
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(n);
  double z = 0.0;
  for (std::size_t e = 0; e < n; ++e) z += p[e] = std::exp(logits[e] - mx);
  for (auto& v : p) v /= z;
  std::vector<bool> keep(n, false);
  for (int k = 0; k < top_k; ++k) {
    std::size_t best = n;
    for (std::size_t e = 0; e < n; ++e)
      if (!keep[e] && (best == n || p[e] > p[best])) best = e;
    keep[best] = true;
  }
  double kept = 0.0;
  for (std::size_t e = 0; e < n; ++e)
    if (keep[e]) kept += p[e];
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t e = 0; e < n; ++e) {
    if (!keep[e]) continue;
    const auto y = oracle::apply(experts[e], x);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += p[e] / kept * y[c];
  }
  return out;
}

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::vector<double> row(const Matrix& m, Eigen::Index r) {
  std::vector<double> out(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c) out[static_cast<std::size_t>(c)] = m(r, c);
  return out;
}

/// -[y log q + (1 - y) log(1 - q)] with both log arguments floored at delta.
inline double bce(double q, double y, double delta = 1e-6) {
  return -(y * std::log(std::max(q, delta)) + (1.0 - y) * std::log(std::max(1.0 - q, delta)));
}

inline double smooth(double y, double eps) { return y * (1.0 - eps) + (1.0 - y) * eps; }

/// Pairwise AUC: live should score lower (score is p(spoof)); ties count 1/2.
inline double auc(const std::vector<ScoreRecord>& r) {
  double wins = 0.0;
  double pairs = 0.0;
  for (const auto& a : r) {
    if (a.label != mmda::kLive) continue;
    for (const auto& b : r) {
      if (b.label != mmda::kSpoof) continue;
      pairs += 1.0;
      if (a.score < b.score) wins += 1.0;
      else if (a.score == b.score) wins += 0.5;
    }
  }
  return wins / pairs;
}

struct Rates {
  double far, frr;
};

/// Accept as live iff score <= tau.
inline Rates rates(const std::vector<ScoreRecord>& r, double tau) {
  double live = 0, spoof = 0, false_accept = 0, false_reject = 0;
  for (const auto& x : r) {
    if (x.label == mmda::kLive) {
      live += 1;
      if (x.score > tau) false_reject += 1;
    } else {
      spoof += 1;
      if (x.score <= tau) false_accept += 1;
    }
  }
  return {false_accept / spoof, false_reject / live};
}

inline double hter(const std::vector<ScoreRecord>& r, double tau) {
  const auto e = rates(r, tau);
  return 0.5 * (e.far + e.frr);
}

/// Scans midpoints of sorted distinct scores (or the lone score) and keeps the
/// first threshold minimizing |FAR - FRR|.
inline double eer_threshold(const std::vector<ScoreRecord>& r) {
  std::vector<double> s;
  for (const auto& x : r) s.push_back(x.score);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  std::vector<double> cand;
  if (s.size() == 1) cand.push_back(s[0]);
  for (std::size_t i = 0; i + 1 < s.size(); ++i) cand.push_back(0.5 * (s[i] + s[i + 1]));
  double best = cand[0], best_gap = 2.0;
  for (double t : cand) {
    const auto e = rates(r, t);
    const double gap = std::abs(e.far - e.frr);
    if (gap < best_gap - 1e-12) {
      best_gap = gap;
      best = t;
    }
  }
  return best;
}

/// Central finite difference of f with respect to every entry of `m`.
inline Matrix numeric_grad(Matrix& m, const std::function<double()>& f, double h = 1e-4) {
  Matrix g(m.rows(), m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const double keep = m(r, c);
      m(r, c) = keep + h;
      const double up = f();
      m(r, c) = keep - h;
      const double down = f();
      m(r, c) = keep;
      g(r, c) = (up - down) / (2.0 * h);
    }
  return g;
}

/// max |a - n| / max(1e-5, |a| + |n|) over entries.
inline double relative_error(const Matrix& analytic, const Matrix& numeric) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max(1e-5, std::abs(a) + std::abs(n)));
  }
  return worst;
}

}  // namespace oracle
