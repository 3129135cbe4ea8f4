#pragma once

// Soft alignment of visual embeddings to a frozen text representation space.
//
//   d_i     = min_j (1 - cos(v_i, t_j))
//   L_align = -mean( y_i log(1 - d_i) + (1 - y_i) log d_i )
//   L_cls   = -mean over visual and text rows of ( y log(1 - p) + (1 - y) log p )
//   L_RS2   = L_cls + L_align
//
// p is the classifier's probability of SPOOF and y = 1 marks live, so both
// literal forms decrease for correct predictions. Targets are label-smoothed:
// y -> y (1 - eps) + (1 - y) eps.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mmda/autodiff.hpp"
#include "mmda/core_types.hpp"

namespace mmda {

enum class DistanceMode { kNearestAny, kNearestOwnClass };
enum class AlignmentVariant { kVanilla, kSmooth, kRs2 };
enum class Reduction { kMean, kSum };

inline DistanceMode parse_distance_mode(const std::string& s) {
  if (s == "nearest_any") return DistanceMode::kNearestAny;
  if (s == "nearest_own_class") return DistanceMode::kNearestOwnClass;
  throw ConfigError("rs2.distance_mode: unknown value '" + s + "'");
}

inline AlignmentVariant parse_variant(const std::string& s) {
  if (s == "vanilla") return AlignmentVariant::kVanilla;
  if (s == "smooth") return AlignmentVariant::kSmooth;
  if (s == "rs2") return AlignmentVariant::kRs2;
  throw ConfigError("rs2.variant: unknown value '" + s + "'");
}

inline Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::kMean;
  if (s == "sum") return Reduction::kSum;
  throw ConfigError("rs2.reduction: unknown value '" + s + "'");
}

inline std::string to_string(DistanceMode m) {
  return m == DistanceMode::kNearestAny ? "nearest_any" : "nearest_own_class";
}

inline std::string to_string(AlignmentVariant v) {
  switch (v) {
    case AlignmentVariant::kVanilla: return "vanilla";
    case AlignmentVariant::kSmooth: return "smooth";
    case AlignmentVariant::kRs2: return "rs2";
  }
  return "?";
}

inline std::string to_string(Reduction r) { return r == Reduction::kMean ? "mean" : "sum"; }

struct RS2Config {
  double label_smoothing = 0.1;
  DistanceMode distance_mode = DistanceMode::kNearestOwnClass;
  AlignmentVariant variant = AlignmentVariant::kRs2;
  Reduction reduction = Reduction::kMean;
  double clamp_delta = 1e-6;

  /// Smoothing actually applied; the vanilla variant uses hard targets.
  double effective_smoothing() const {
    return variant == AlignmentVariant::kVanilla ? 0.0 : label_smoothing;
  }
  bool uses_classifier() const { return variant == AlignmentVariant::kRs2; }
};

inline void validate(const RS2Config& c) {
  if (!(c.label_smoothing >= 0.0 && c.label_smoothing < 0.5)) {
    throw ConfigError("rs2.label_smoothing must lie in [0, 0.5)");
  }
  if (!(c.clamp_delta > 0.0 && c.clamp_delta < 0.5)) throw ConfigError("rs2 clamp delta must lie in (0, 0.5)");
}

struct TextConstrainedClassifier {
  Parameter w;  // n_d x 1
  Parameter b;  // 1 x 1
};

inline TextConstrainedClassifier make_classifier(int embed_dim) {
  return {Parameter(Matrix::Zero(embed_dim, 1)), Parameter(Matrix::Zero(1, 1))};
}

inline double smooth_target(double y, double eps) { return y * (1.0 - eps) + (1.0 - y) * eps; }

/// Whether text row j is a candidate for a sample with label `own_class`.
inline bool text_row_selected(const TextSpace& t, Eigen::Index j, DistanceMode mode, int own_class) {
  return mode == DistanceMode::kNearestAny || t.class_of[static_cast<std::size_t>(j)] == own_class;
}

/// Index of the text row at minimum cosine distance; ties keep the lower index.
inline Eigen::Index nearest_text_index(const RowVector& v, const TextSpace& t, DistanceMode mode, int own_class) {
  const double vn = v.norm();
  if (!(vn > 0.0) || !std::isfinite(vn)) throw NumericError("min_cosine_distance: zero-norm or non-finite embedding");
  Eigen::Index best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < t.embeddings.rows(); ++j) {
    if (!text_row_selected(t, j, mode, own_class)) continue;
    const double d = 1.0 - v.dot(t.embeddings.row(j)) / (vn * t.embeddings.row(j).norm());
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (best < 0) throw ValidationError("min_cosine_distance: no text rows for the requested class");
  return best;
}

inline double min_cosine_distance(const RowVector& v, const TextSpace& t, DistanceMode mode = DistanceMode::kNearestAny,
                                  int own_class = kLive) {
  const Eigen::Index j = nearest_text_index(v, t, mode, own_class);
  const double d = 1.0 - v.dot(t.embeddings.row(j)) / (v.norm() * t.embeddings.row(j).norm());
  return std::clamp(d, 0.0, 2.0);
}

/// Per-row min cosine distance, B x 1, differentiable through the arg-min row.
inline Var min_cosine_distance_rows(Var v, const TextSpace& t, DistanceMode mode, const std::vector<int>& labels) {
  const Eigen::Index b = v.rows();
  if (static_cast<std::size_t>(b) != labels.size()) throw ShapeError("min_cosine_distance_rows: label count");
  if (v.cols() != t.embeddings.cols()) throw ShapeError("min_cosine_distance_rows: width differs from text space");
  Matrix out(b, 1);
  Matrix dd = Matrix::Zero(b, v.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const RowVector vi = v.value().row(i);
    const Eigen::Index j = nearest_text_index(vi, t, mode, labels[static_cast<std::size_t>(i)]);
    const RowVector tj = t.embeddings.row(j);
    const double vn = vi.norm(), tn = tj.norm();
    const double dot = vi.dot(tj);
    out(i, 0) = 1.0 - dot / (vn * tn);
    // d/dv [1 - v.t / (|v||t|)] = -t / (|v||t|) + (v.t) v / (|v|^3 |t|)
    dd.row(i) = -tj / (vn * tn) + dot * vi / (vn * vn * vn * tn);
  }
  return v.tape()->record(std::move(out), {v}, [v, dd](Tape& t, int self) {
    t.grad(v.id()) += (dd.array().colwise() * t.grad(self).col(0).array()).matrix();
  });
}

inline Var reduce(Var per_row, Reduction r) { return r == Reduction::kMean ? ad::mean(per_row) : ad::sum(per_row); }

/// Alignment targets: the literal label in nearest_any mode; in
/// nearest_own_class mode every sample should sit close to its own class's
/// captions, so the target is "aligned" (1) for both classes.
inline Vector alignment_targets(const std::vector<int>& labels, const RS2Config& cfg) {
  Vector t(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = cfg.distance_mode == DistanceMode::kNearestAny ? labels[i] : 1.0;
    t(static_cast<Eigen::Index>(i)) = smooth_target(y, cfg.effective_smoothing());
  }
  return t;
}

/// Eq.-4 style loss from precomputed distances and raw (unsmoothed) targets.
inline Var alignment_loss_from_distances(Var d, const Vector& targets, double eps, Reduction r, double delta) {
  Vector smoothed = targets.unaryExpr([eps](double y) { return smooth_target(y, eps); });
  return reduce(ad::binary_xent(ad::add_scalar(ad::scale(d, -1.0), 1.0), smoothed, delta), r);
}

inline Var alignment_loss(Var v, const std::vector<int>& labels, const TextSpace& t, const RS2Config& cfg) {
  Var d = min_cosine_distance_rows(v, t, cfg.distance_mode, labels);
  const Vector targets = alignment_targets(labels, cfg);
  return reduce(ad::binary_xent(ad::add_scalar(ad::scale(d, -1.0), 1.0), targets, cfg.clamp_delta), cfg.reduction);
}

/// Spoof probability of every row of `e`.
inline Var spoof_probability(Var e, Var w, Var b) {
  Var logits = ad::add_row(ad::matmul(e, w), b);
  return ad::sigmoid(logits);
}

inline Var classification_loss(Var v, const std::vector<int>& labels, const TextSpace& t, Var w, Var b,
                               const RS2Config& cfg) {
  Tape& tape = *v.tape();
  Var all = ad::concat_rows({v, tape.constant(t.embeddings)});
  Vector y(all.rows());
  for (std::size_t i = 0; i < labels.size(); ++i) y(static_cast<Eigen::Index>(i)) = labels[i];
  for (std::size_t j = 0; j < t.class_of.size(); ++j) {
    y(static_cast<Eigen::Index>(labels.size() + j)) = t.class_of[j];
  }
  const double eps = cfg.effective_smoothing();
  y = y.unaryExpr([eps](double yy) { return smooth_target(yy, eps); });
  Var live_prob = ad::add_scalar(ad::scale(spoof_probability(all, w, b), -1.0), 1.0);
  return reduce(ad::binary_xent(live_prob, y, cfg.clamp_delta), cfg.reduction);
}

struct RS2Terms {
  Var total;
  Var l_cls;
  Var l_align;
};

inline RS2Terms rs2_loss(Var v, const std::vector<int>& labels, const TextSpace& t, Var w, Var b,
                         const RS2Config& cfg) {
  Tape& tape = *v.tape();
  RS2Terms out;
  out.l_align = alignment_loss(v, labels, t, cfg);
  out.l_cls = cfg.uses_classifier() ? classification_loss(v, labels, t, w, b, cfg)
                                    : tape.constant(Matrix::Zero(1, 1));
  out.total = ad::add(out.l_cls, out.l_align);
  return out;
}

struct RS2Values {
  double total = 0.0;
  double l_cls = 0.0;
  double l_align = 0.0;
};

inline RS2Values rs2_loss(const EmbeddingBatch& v, const TextSpace& t, const TextConstrainedClassifier& clf,
                          const RS2Config& cfg) {
  Tape tape;
  auto terms = rs2_loss(tape.constant(v.pooled), v.labels, t, tape.constant(clf.w.value), tape.constant(clf.b.value),
                        cfg);
  return {terms.total.scalar(), terms.l_cls.scalar(), terms.l_align.scalar()};
}

/// Zero-shot spoof score from the text space alone: maps the gap between the
/// best spoof-caption and best live-caption cosine similarity into [0, 1].
inline double text_space_spoof_score(const RowVector& v, const TextSpace& t) {
  const double vn = v.norm();
  if (!(vn > 0.0)) throw NumericError("text_space_spoof_score: zero-norm embedding");
  double best_live = -1.0, best_spoof = -1.0;
  for (Eigen::Index j = 0; j < t.embeddings.rows(); ++j) {
    const double c = v.dot(t.embeddings.row(j)) / (vn * t.embeddings.row(j).norm());
    double& slot = t.class_of[static_cast<std::size_t>(j)] == kLive ? best_live : best_spoof;
    slot = std::max(slot, c);
  }
  return std::clamp(0.5 + 0.25 * (best_spoof - best_live), 0.0, 1.0);
}

}  // namespace mmda
