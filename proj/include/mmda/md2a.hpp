#pragma once

// Modality-domain joint differential attention.
//
// Every sample is paired with a sample of the same domain; the feature-axis
// concatenation [x | x_pair] is projected once per head and split into two
// query/key halves. The attention map of the second half estimates the noise
// shared within the domain and is subtracted from the first:
//
//   out = (softmax(Q K^T s) - lambda * softmax(Q' K'^T s)) V,  s = 1/sqrt(n_d)

#include <cassert>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "mmda/autodiff.hpp"
#include "mmda/core_types.hpp"
#include "mmda/rng.hpp"

namespace mmda {

enum class PairingMode { kUniform, kSelfOnly, kDistinctOnly };

inline PairingMode parse_pairing(const std::string& s) {
  if (s == "uniform") return PairingMode::kUniform;
  if (s == "self_only") return PairingMode::kSelfOnly;
  if (s == "distinct_only") return PairingMode::kDistinctOnly;
  throw ConfigError("md2a.pairing: unknown value '" + s + "'");
}

inline std::string pairing_name(PairingMode m) {
  switch (m) {
    case PairingMode::kUniform: return "uniform";
    case PairingMode::kSelfOnly: return "self_only";
    case PairingMode::kDistinctOnly: return "distinct_only";
  }
  return "?";
}

struct PairedBatch {
  std::vector<Matrix> joint_tokens;  // B entries of N_tok x 2 n_d
  std::vector<int> pair_index;
};

/// Chooses a same-domain partner for every sample. Candidates must also share
/// the sample's token count so the feature-axis concatenation is defined.
/// Domains with a single eligible sample self-pair in every mode.
inline std::vector<int> choose_pairs(const std::vector<std::string>& domains,
                                     const std::vector<Eigen::Index>& token_counts, std::uint64_t seed,
                                     PairingMode mode) {
  const auto b = domains.size();
  std::map<std::pair<std::string, Eigen::Index>, std::vector<int>> groups;
  for (std::size_t i = 0; i < b; ++i) groups[{domains[i], token_counts[i]}].push_back(static_cast<int>(i));
  Rng rng(derive_seed(seed, 0x9a1e));
  std::vector<int> pairs(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto& group = groups[{domains[i], token_counts[i]}];
    const int self = static_cast<int>(i);
    if (mode == PairingMode::kSelfOnly || group.size() == 1) {
      pairs[i] = self;
    } else if (mode == PairingMode::kUniform) {
      pairs[i] = group[rng.index(group.size())];
    } else {
      const auto pos = static_cast<std::size_t>(std::find(group.begin(), group.end(), self) - group.begin());
      auto drawn = rng.index(group.size() - 1);
      if (drawn >= pos) ++drawn;
      const int pick = group[drawn];
      pairs[i] = pick;
    }
  }
#ifndef NDEBUG
  for (std::size_t i = 0; i < b; ++i) assert(domains[static_cast<std::size_t>(pairs[i])] == domains[i]);
#endif
  return pairs;
}

inline std::vector<Eigen::Index> token_counts(const std::vector<Matrix>& tokens) {
  std::vector<Eigen::Index> counts;
  counts.reserve(tokens.size());
  for (const auto& t : tokens) counts.push_back(t.rows());
  return counts;
}

inline PairedBatch batch_reorganize(const EmbeddingBatch& emb, std::uint64_t rng_seed,
                                    PairingMode mode = PairingMode::kUniform) {
  PairedBatch out;
  out.pair_index = choose_pairs(emb.domains, token_counts(emb.tokens), rng_seed, mode);
  for (std::size_t i = 0; i < emb.size(); ++i) {
    const Matrix& x = emb.tokens[i];
    const Matrix& xp = emb.tokens[static_cast<std::size_t>(out.pair_index[i])];
    Matrix joint(x.rows(), 2 * x.cols());
    joint << x, xp;
    out.joint_tokens.push_back(std::move(joint));
  }
  return out;
}

struct MD2AConfig {
  int embed_dim = 64;
  int n_heads = 4;
  double lambda = 0.5;
  bool learnable_lambda = false;
  PairingMode pairing = PairingMode::kUniform;
  bool enabled = true;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  int head_dim() const { return embed_dim / n_heads; }
};

inline void validate(const MD2AConfig& c) {
  if (c.embed_dim <= 0 || c.n_heads <= 0) throw ConfigError("md2a: dimensions must be positive");
  if (c.embed_dim % c.n_heads != 0) {
    throw ConfigError("md2a.n_heads must divide n_d (" + std::to_string(c.embed_dim) + " % " +
                      std::to_string(c.n_heads) + " != 0)");
  }
  if (!std::isfinite(c.lambda) || c.lambda < 0.0) throw ConfigError("md2a.lambda must be finite and >= 0");
}

struct MD2AHead {
  Parameter w_q;  // 2 n_d x 2 d_k
  Parameter w_k;  // 2 n_d x 2 d_k
  Parameter w_v;  // 2 n_d x d_v
};

struct MD2AParams {
  MD2AConfig config;
  std::vector<MD2AHead> heads;
  Parameter lambda;  // 1 x 1
  Parameter bn_gamma;
  Parameter bn_beta;
  RowVector running_mean;
  RowVector running_var;
};

inline MD2AParams make_md2a(const MD2AConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  MD2AParams p;
  p.config = cfg;
  const int nd = cfg.embed_dim, dk = cfg.head_dim();
  const double stddev = 1.0 / std::sqrt(2.0 * nd);
  for (int h = 0; h < cfg.n_heads; ++h) {
    Rng rng(derive_seed(seed, 0xa77e, h));
    MD2AHead head;
    head.w_q = Parameter(gaussian_matrix(rng, 2 * nd, 2 * dk, stddev));
    head.w_k = Parameter(gaussian_matrix(rng, 2 * nd, 2 * dk, stddev));
    head.w_v = Parameter(gaussian_matrix(rng, 2 * nd, dk, stddev));
    p.heads.push_back(std::move(head));
  }
  p.lambda = Parameter(Matrix::Constant(1, 1, cfg.lambda));
  p.bn_gamma = Parameter(Matrix::Ones(1, nd));
  p.bn_beta = Parameter(Matrix::Zero(1, nd));
  p.running_mean = RowVector::Zero(nd);
  p.running_var = RowVector::Ones(nd);
  return p;
}

/// Stacked token rows of a batch plus the row offset of every sample.
struct StackedTokens {
  Var rows;
  std::vector<Eigen::Index> offsets;  // B + 1 entries
};

inline std::vector<Eigen::Index> row_offsets(const std::vector<Matrix>& tokens) {
  std::vector<Eigen::Index> off{0};
  for (const auto& t : tokens) off.push_back(off.back() + t.rows());
  return off;
}

inline Matrix stack_rows(const std::vector<Matrix>& tokens) {
  const auto off = row_offsets(tokens);
  const auto cols = tokens.empty() ? 0 : tokens.front().cols();
  Matrix out(off.back(), cols);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.middleRows(off[i], tokens[i].rows()) = tokens[i];
  }
  return out;
}

/// Builds [x | x_pair] for stacked rows.
inline Var joint_rows(const StackedTokens& x, const std::vector<int>& pair_index) {
  std::vector<Var> partners;
  partners.reserve(pair_index.size());
  for (std::size_t i = 0; i < pair_index.size(); ++i) {
    const auto j = static_cast<std::size_t>(pair_index[i]);
    const auto n = x.offsets[i + 1] - x.offsets[i];
    if (x.offsets[j + 1] - x.offsets[j] != n) throw ShapeError("paired samples differ in token count");
    partners.push_back(ad::slice_rows(x.rows, x.offsets[j], n));
  }
  return ad::concat_cols({x.rows, ad::concat_rows(partners)});
}

/// One head over stacked joint rows; returns stacked (sum N) x d_v rows.
inline Var md2a_head(Var joint, const std::vector<Eigen::Index>& offsets, Var w_q, Var w_k, Var w_v, Var lambda,
                     int embed_dim) {
  if (joint.cols() != 2 * static_cast<Eigen::Index>(embed_dim)) {
    throw ShapeError("md2a_head: joint width must equal 2 n_d");
  }
  if (!joint.value().allFinite()) throw NumericError("md2a_head: non-finite input");
  const Eigen::Index dk = w_q.cols() / 2;
  const double s = 1.0 / std::sqrt(static_cast<double>(embed_dim));
  Var qq = ad::matmul(joint, w_q);
  Var kk = ad::matmul(joint, w_k);
  Var v = ad::matmul(joint, w_v);
  std::vector<Var> outs;
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    const auto start = offsets[i], n = offsets[i + 1] - offsets[i];
    Var qi = ad::slice_rows(qq, start, n);
    Var ki = ad::slice_rows(kk, start, n);
    Var vi = ad::slice_rows(v, start, n);
    Var a = ad::softmax_rows(ad::scale(ad::matmul_nt(ad::slice_cols(qi, 0, dk), ad::slice_cols(ki, 0, dk)), s));
    Var a2 = ad::softmax_rows(ad::scale(ad::matmul_nt(ad::slice_cols(qi, dk, dk), ad::slice_cols(ki, dk, dk)), s));
    outs.push_back(ad::matmul(ad::sub(a, ad::scalar_mul(lambda, a2)), vi));
  }
  return ad::concat_rows(outs);
}

/// Value-only evaluation of one head on a PairedBatch.
inline std::vector<Matrix> md2a_head(const PairedBatch& paired, const MD2AHead& head, double lambda, int embed_dim) {
  Tape tape;
  const auto offsets = row_offsets(paired.joint_tokens);
  Var out = md2a_head(tape.constant(stack_rows(paired.joint_tokens)), offsets, tape.constant(head.w_q.value),
                      tape.constant(head.w_k.value), tape.constant(head.w_v.value),
                      tape.constant(Matrix::Constant(1, 1, lambda)), embed_dim);
  std::vector<Matrix> result;
  for (std::size_t i = 0; i + 1 < offsets.size(); ++i) {
    result.push_back(out.value().middleRows(offsets[i], offsets[i + 1] - offsets[i]));
  }
  return result;
}

struct MD2AForward {
  Var tokens;  // stacked output rows, same shape as the input rows
  Var pooled;  // B x n_d
  std::vector<int> pair_index;
};

/// Full block: pairing, all heads, concatenation, batch norm, residual from
/// the sample's own tokens, mean pooling. In training mode with B > 1 the
/// batch statistics are used and the running statistics updated.
inline MD2AForward md2a_block(Tape& tape, const StackedTokens& x, const std::vector<std::string>& domains,
                              MD2AParams& params, std::uint64_t pairing_seed, bool training) {
  const auto& cfg = params.config;
  MD2AForward fwd;
  if (!cfg.enabled) {
    fwd.tokens = x.rows;
    fwd.pooled = ad::block_mean_rows(x.rows, x.offsets);
    fwd.pair_index.resize(domains.size());
    for (std::size_t i = 0; i < domains.size(); ++i) fwd.pair_index[i] = static_cast<int>(i);
    return fwd;
  }
  if (x.rows.cols() != cfg.embed_dim) throw ShapeError("md2a_block: token width differs from n_d");
  std::vector<Eigen::Index> counts;
  for (std::size_t i = 0; i + 1 < x.offsets.size(); ++i) counts.push_back(x.offsets[i + 1] - x.offsets[i]);
  fwd.pair_index = choose_pairs(domains, counts, pairing_seed, cfg.pairing);
  Var joint = joint_rows(x, fwd.pair_index);
  Var lambda = cfg.learnable_lambda ? tape.param(params.lambda) : tape.constant(params.lambda.value);
  std::vector<Var> heads;
  for (auto& h : params.heads) {
    heads.push_back(md2a_head(joint, x.offsets, tape.param(h.w_q), tape.param(h.w_k), tape.param(h.w_v), lambda,
                              cfg.embed_dim));
  }
  Var cat = ad::concat_cols(heads);
  Var gamma = tape.param(params.bn_gamma);
  Var beta = tape.param(params.bn_beta);
  Var normed;
  if (training && domains.size() > 1) {
    auto bn = ad::batch_norm_train(cat, gamma, beta, cfg.bn_eps);
    const double n = static_cast<double>(cat.rows());
    const RowVector unbiased = n > 1 ? RowVector(bn.batch_var * (n / (n - 1.0))) : bn.batch_var;
    params.running_mean = (1.0 - cfg.bn_momentum) * params.running_mean + cfg.bn_momentum * bn.batch_mean;
    params.running_var = (1.0 - cfg.bn_momentum) * params.running_var + cfg.bn_momentum * unbiased;
    normed = bn.out;
  } else {
    normed = ad::batch_norm_eval(cat, gamma, beta, params.running_mean, params.running_var, cfg.bn_eps);
  }
  fwd.tokens = ad::add(normed, x.rows);
  fwd.pooled = ad::block_mean_rows(fwd.tokens, x.offsets);
  return fwd;
}

/// Value-only block over an EmbeddingBatch.
inline EmbeddingBatch md2a_block(const EmbeddingBatch& emb, MD2AParams& params, std::uint64_t pairing_seed,
                                 bool training) {
  Tape tape;
  StackedTokens x{tape.constant(stack_rows(emb.tokens)), row_offsets(emb.tokens)};
  auto fwd = md2a_block(tape, x, emb.domains, params, pairing_seed, training);
  EmbeddingBatch out;
  for (std::size_t i = 0; i < emb.size(); ++i) {
    out.tokens.push_back(fwd.tokens.value().middleRows(x.offsets[i], x.offsets[i + 1] - x.offsets[i]));
  }
  out.pooled = mean_pool(out.tokens, emb.dim());
  out.labels = emb.labels;
  out.domains = emb.domains;
  return out;
}

/// Concatenates present modalities along the token axis in RGB, DEPTH, IR order.
inline EmbeddingBatch fuse_modalities(const std::map<ModalityKind, EmbeddingBatch>& per_modality,
                                      const std::vector<ModalityMask>& present) {
  if (per_modality.empty()) throw ValidationError("fuse_modalities: no modality embeddings");
  const auto b = present.size();
  const auto& any = per_modality.begin()->second;
  const auto dim = any.dim();
  EmbeddingBatch out;
  out.labels = any.labels;
  out.domains = any.domains;
  for (const auto& [m, e] : per_modality) {
    if (e.size() != b) throw ShapeError("fuse_modalities: batch size mismatch for " + std::string(modality_name(m)));
    if (e.dim() != dim) throw ShapeError("fuse_modalities: embedding width mismatch");
  }
  for (std::size_t i = 0; i < b; ++i) {
    std::vector<const Matrix*> parts;
    Eigen::Index rows = 0;
    for (auto m : kAllModalities) {  // std::map order is already ModalityKind order
      if (!present[i][index_of(m)]) continue;
      auto it = per_modality.find(m);
      if (it == per_modality.end() || it->second.tokens[i].rows() == 0) {
        throw ValidationError("fuse_modalities: modality " + std::string(modality_name(m)) +
                              " flagged present but has no tokens");
      }
      parts.push_back(&it->second.tokens[i]);
      rows += parts.back()->rows();
    }
    if (parts.empty()) throw ValidationError("fuse_modalities: sample " + std::to_string(i) + " has no modality");
    Matrix fused(rows, dim);
    Eigen::Index at = 0;
    for (const Matrix* p : parts) {
      fused.middleRows(at, p->rows()) = *p;
      at += p->rows();
    }
    out.tokens.push_back(std::move(fused));
  }
  out.pooled = mean_pool(out.tokens, dim);
  return out;
}

}  // namespace mmda
