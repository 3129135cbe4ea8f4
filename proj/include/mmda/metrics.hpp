#pragma once

// Biometric metrics over p(spoof) scores. A sample is accepted as live when
// score <= tau and rejected as spoof when score > tau.
//   FAR = spoof samples accepted / spoof samples
//   FRR = live samples rejected  / live samples

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include "mmda/core_types.hpp"

namespace mmda {

struct ScoreRecord {
  double score = 0.0;  // probability of spoof
  int label = kLive;
  std::string domain;
  ModalityMask modality_mask = kAllPresent;
};

namespace detail {
inline std::pair<std::size_t, std::size_t> class_counts(const std::vector<ScoreRecord>& records, const char* op) {
  std::size_t live = 0, spoof = 0;
  for (const auto& r : records) {
    if (!std::isfinite(r.score)) throw NumericError(std::string(op) + ": non-finite score");
    (r.label == kLive ? live : spoof) += 1;
  }
  if (live == 0 || spoof == 0) throw ValidationError(std::string(op) + ": both classes must be present");
  return {live, spoof};
}
}  // namespace detail

/// Probability that a random live sample looks more live (lower spoof score)
/// than a random spoof sample; ties count one half. Rank-sum formulation.
inline double auc(const std::vector<ScoreRecord>& records) {
  const auto [n_live, n_spoof] = detail::class_counts(records, "auc");
  std::vector<std::pair<double, int>> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.emplace_back(r.score, r.label);
  std::sort(sorted.begin(), sorted.end());
  // Average ranks (1-based, doubled to stay integral) of spoof samples in
  // ascending score order give the count of (live, spoof) pairs where the
  // spoof score is higher.
  std::int64_t doubled_rank_sum = 0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j].first == sorted[i].first) ++j;
    const std::int64_t doubled_avg_rank = static_cast<std::int64_t>(i + 1 + j);  // 2 * (i+1 + j)/2
    for (std::size_t k = i; k < j; ++k) {
      if (sorted[k].second != kLive) doubled_rank_sum += doubled_avg_rank;
    }
    i = j;
  }
  const auto ns = static_cast<std::int64_t>(n_spoof);
  const std::int64_t doubled_u = doubled_rank_sum - ns * (ns + 1);
  return (static_cast<double>(doubled_u) / 2.0) / (static_cast<double>(n_live) * static_cast<double>(n_spoof));
}

struct ErrorRates {
  std::size_t false_accepts = 0;
  std::size_t false_rejects = 0;
  std::size_t n_live = 0;
  std::size_t n_spoof = 0;

  double far() const { return static_cast<double>(false_accepts) / static_cast<double>(n_spoof); }
  double frr() const { return static_cast<double>(false_rejects) / static_cast<double>(n_live); }
  double hter() const { return (far() + frr()) / 2.0; }
};

inline ErrorRates error_rates(const std::vector<ScoreRecord>& records, double tau) {
  const auto [n_live, n_spoof] = detail::class_counts(records, "hter");
  ErrorRates e;
  e.n_live = n_live;
  e.n_spoof = n_spoof;
  for (const auto& r : records) {
    if (r.label == kLive && r.score > tau) ++e.false_rejects;
    if (r.label != kLive && r.score <= tau) ++e.false_accepts;
  }
  return e;
}

inline double hter(const std::vector<ScoreRecord>& records, double tau) { return error_rates(records, tau).hter(); }

/// Candidate thresholds: midpoints of consecutive distinct scores, or the
/// score itself when all scores coincide.
inline std::vector<double> candidate_thresholds(const std::vector<ScoreRecord>& records) {
  std::vector<double> s;
  s.reserve(records.size());
  for (const auto& r : records) s.push_back(r.score);
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  if (s.size() == 1) return s;
  std::vector<double> mids;
  mids.reserve(s.size() - 1);
  for (std::size_t i = 0; i + 1 < s.size(); ++i) mids.push_back(0.5 * (s[i] + s[i + 1]));
  return mids;
}

/// Threshold minimizing |FAR - FRR| over the candidates; ties go to the
/// smaller threshold. The comparison is done on integer cross-products so no
/// rounding can reorder candidates.
inline double eer_threshold(const std::vector<ScoreRecord>& records) {
  const auto [n_live, n_spoof] = detail::class_counts(records, "eer_threshold");
  std::vector<std::pair<double, int>> sorted;
  for (const auto& r : records) sorted.emplace_back(r.score, r.label);
  std::sort(sorted.begin(), sorted.end());
  const auto candidates = candidate_thresholds(records);
  const auto nl = static_cast<std::int64_t>(n_live), ns = static_cast<std::int64_t>(n_spoof);
  std::int64_t best_gap = -1;
  double best_tau = candidates.front();
  std::size_t cursor = 0;
  std::int64_t live_below = 0, spoof_below = 0;  // counts with score <= tau
  for (double tau : candidates) {
    while (cursor < sorted.size() && sorted[cursor].first <= tau) {
      (sorted[cursor].second == kLive ? live_below : spoof_below) += 1;
      ++cursor;
    }
    const std::int64_t far_num = spoof_below;        // over ns
    const std::int64_t frr_num = nl - live_below;    // over nl
    const std::int64_t gap = std::llabs(far_num * nl - frr_num * ns);
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      best_tau = tau;
    }
  }
  return best_tau;
}

}  // namespace mmda
