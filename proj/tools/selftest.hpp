#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mmda/config.hpp"

namespace mmda::selftest {

struct Check {
  std::string name;
  std::function<bool()> run;
};

inline Matrix softmax_reference(const Matrix& s) {
  Matrix out(s.rows(), s.cols());
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    double z = 0.0;
    for (Eigen::Index c = 0; c < s.cols(); ++c) z += std::exp(s(r, c) - mx);
    for (Eigen::Index c = 0; c < s.cols(); ++c) out(r, c) = std::exp(s(r, c) - mx) / z;
  }
  return out;
}

inline bool attention_degenerates() {
  Rng rng(11);
  const int nd = 4, dk = 2, dv = 2, n = 3;
  const Matrix x = gaussian_matrix(rng, n, nd, 1.0);
  MD2AHead h{Parameter(gaussian_matrix(rng, 2 * nd, 2 * dk, 0.5)), Parameter(gaussian_matrix(rng, 2 * nd, 2 * dk, 0.5)),
             Parameter(gaussian_matrix(rng, 2 * nd, dv, 0.5))};
  PairedBatch p;
  Matrix joint(n, 2 * nd);
  joint << x, x;
  p.joint_tokens = {joint};
  p.pair_index = {0};
  const Matrix got = md2a_head(p, h, 0.0, nd).front();
  const Matrix q = joint * h.w_q.value.leftCols(dk), k = joint * h.w_k.value.leftCols(dk);
  const Matrix want = softmax_reference(q * k.transpose() / std::sqrt(double(nd))) * (joint * h.w_v.value);
  return (got - want).cwiseAbs().maxCoeff() < 1e-9;
}

inline bool rows_sum_to_one_minus_lambda() {
  Rng rng(12);
  const int nd = 4;
  const RowVector token = gaussian_matrix(rng, 1, nd, 1.0);
  Matrix x(3, nd);
  for (int r = 0; r < 3; ++r) x.row(r) = token;
  MD2AHead h{Parameter(gaussian_matrix(rng, 2 * nd, 4, 0.5)), Parameter(gaussian_matrix(rng, 2 * nd, 4, 0.5)),
             Parameter(gaussian_matrix(rng, 2 * nd, 2, 0.5))};
  PairedBatch p;
  Matrix joint(3, 2 * nd);
  joint << x, x;
  p.joint_tokens = {joint};
  p.pair_index = {0};
  const double lambda = 0.3;
  const Matrix out = md2a_head(p, h, lambda, nd).front();
  const RowVector v = joint.row(0) * h.w_v.value;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if ((out.row(r) - (1.0 - lambda) * v).cwiseAbs().maxCoeff() > 1e-9) return false;
  }
  return true;
}

inline bool alignment_analytic_points() {
  Tape tape;
  Vector ones = Vector::Ones(1);
  const double at_zero = alignment_loss_from_distances(tape.constant(Matrix::Zero(1, 1)), ones, 0.0, Reduction::kMean, 1e-6).scalar();
  const double at_half =
      alignment_loss_from_distances(tape.constant(Matrix::Constant(1, 1, 0.5)), ones, 0.0, Reduction::kMean, 1e-6).scalar();
  return std::abs(at_zero) < 1e-12 && std::abs(at_half - std::log(2.0)) < 1e-12;
}

inline bool metric_fixed_points() {
  std::vector<ScoreRecord> r = {{0.1, kLive, "a", kAllPresent}, {0.2, kLive, "a", kAllPresent},
                                {0.3, kSpoof, "a", kAllPresent}, {0.4, kSpoof, "a", kAllPresent}};
  if (auc(r) != 1.0) return false;
  if (hter(r, eer_threshold(r)) != 0.0) return false;
  for (auto& rec : r) rec.score = -rec.score;
  return auc(r) == 0.0;
}

inline bool two_pass_boundaries() {
  // depth 2 with scalar maps: v1 = 2 v0, v2 = 2 v1, v'2 = v2, v'1 = v1 + (v'2 + 1), v'0 = v0 + (v'1 + 1)
  Tape tape;
  const auto layers = udsa_two_pass(
      tape.constant(Matrix::Ones(1, 1)), 2, [](int, Var x) { return ad::scale(x, 2.0); },
      [](int, Var x) { return ad::add_scalar(x, 1.0); });
  return layers.size() == 3 && layers[2].scalar() == 4.0 && layers[1].scalar() == 7.0 && layers[0].scalar() == 9.0;
}

inline bool tensor_round_trip() {
  RawTensor t;
  t.dtype = DType::kFloat32;
  t.dims = {2, 3};
  t.values = {0.5, -1.0, 2.25, 3.0, 0.0, 1e-3};
  std::stringstream buf;
  write_tensor(buf, t);
  const RawTensor back = read_tensor(buf);
  for (std::size_t i = 0; i < t.values.size(); ++i) {
    if (back.values[i] != static_cast<double>(static_cast<float>(t.values[i]))) return false;
  }
  return back.dims == t.dims && back.dtype == t.dtype;
}

inline std::vector<Check> checks() {
  return {{"md2a degenerates to attention at lambda=0", attention_degenerates},
          {"md2a rows sum to 1-lambda", rows_sum_to_one_minus_lambda},
          {"alignment loss analytic points", alignment_analytic_points},
          {"metric fixed points", metric_fixed_points},
          {"u-dsa two-pass boundaries", two_pass_boundaries},
          {"tensor round trip", tensor_round_trip}};
}

/// Runs every check, printing one line each; returns the failure count.
inline int run(std::ostream& out) {
  int failures = 0;
  for (const auto& c : checks()) {
    bool ok = false;
    try {
      ok = c.run();
    } catch (const std::exception& e) {
      out << "  exception: " << e.what() << '\n';
    }
    out << (ok ? "ok   " : "FAIL ") << c.name << '\n';
    if (!ok) ++failures;
  }
  return failures;
}

}  // namespace mmda::selftest
