#pragma once

// U-shaped dual space adaptation.
//
// Forward (shallow -> deep):   v_i  = Adapt_i(v_{i-1}),        i = 1..d, v_0 = input
// Backward (deep -> shallow):  v'_d = v_d
//                              v'_i = v_i + Remap_i(v'_{i+1}), i = d-1..0
//
// Every v'_i lives in the input space, is aligned with the text space during
// training, and is a candidate early-exit layer at inference.

#include <cmath>
#include <string>
#include <vector>

#include "mmda/autodiff.hpp"
#include "mmda/metrics.hpp"
#include "mmda/rs2.hpp"

namespace mmda {

enum class AdapterKind { kDense, kMoe };

inline AdapterKind parse_adapter_kind(const std::string& s) {
  if (s == "dense") return AdapterKind::kDense;
  if (s == "moe") return AdapterKind::kMoe;
  throw ConfigError("udsa.adapter_kind: unknown value '" + s + "'");
}

inline std::string to_string(AdapterKind k) { return k == AdapterKind::kDense ? "dense" : "moe"; }

/// affine -> GELU -> affine, square in n_d.
struct Mlp {
  Parameter w1, b1, w2, b2;

  Var apply(Tape& tape, Var x) {
    Var h = ad::gelu(ad::add_row(ad::matmul(x, tape.param(w1)), tape.param(b1)));
    return ad::add_row(ad::matmul(h, tape.param(w2)), tape.param(b2));
  }
};

inline Mlp make_mlp(int dim, Rng& rng, double gain = 1.0) {
  const double stddev = gain / std::sqrt(static_cast<double>(dim));
  return Mlp{Parameter(gaussian_matrix(rng, dim, dim, stddev)), Parameter(Matrix::Zero(1, dim)),
             Parameter(gaussian_matrix(rng, dim, dim, stddev)), Parameter(Matrix::Zero(1, dim))};
}

/// Softmax-gated mixture of MLP experts; only the top-k gate entries are kept
/// and renormalized to sum to one.
inline Var moe_adapt(Tape& tape, Var x, std::vector<Mlp>& experts, Parameter& gate, int top_k) {
  const int n = static_cast<int>(experts.size());
  if (n < 1 || top_k < 1 || top_k > n) throw ConfigError("moe_adapt: need 1 <= top_k <= n_experts");
  if (gate.value.cols() != n) throw ShapeError("moe_adapt: gate width differs from expert count");
  Var weights = ad::topk_renormalize(ad::softmax_rows(ad::matmul(x, tape.param(gate))), top_k);
  Var out;
  for (int e = 0; e < n; ++e) {
    Var term = ad::mul_col(ad::slice_cols(weights, e, 1), experts[static_cast<std::size_t>(e)].apply(tape, x));
    out = e == 0 ? term : ad::add(out, term);
  }
  return out;
}

struct Adapter {
  AdapterKind kind = AdapterKind::kDense;
  std::vector<Mlp> experts;  // one entry when dense
  Parameter gate;            // n_d x n_experts, moe only
  int top_k = 1;

  Var apply(Tape& tape, Var x) {
    if (kind == AdapterKind::kDense) return experts.front().apply(tape, x);
    return moe_adapt(tape, x, experts, gate, top_k);
  }
};

struct UDSAConfig {
  int depth = 7;
  AdapterKind adapter_kind = AdapterKind::kDense;
  int n_experts = 4;
  int top_k = 2;
};

inline void validate(const UDSAConfig& c) {
  if (c.depth < 0) throw ConfigError("udsa.depth must be >= 0");
  if (c.adapter_kind == AdapterKind::kMoe && (c.n_experts < 2 || c.top_k < 1 || c.top_k > c.n_experts)) {
    throw ConfigError("udsa: moe needs n_experts >= 2 and 1 <= top_k <= n_experts");
  }
}

struct UDSAParams {
  UDSAConfig config;
  std::vector<Adapter> adapt;  // adapt[i - 1] is Adapt_i, i = 1..d
  std::vector<Mlp> remap;      // remap[i] is Remap_i, i = 0..d-1
};

inline UDSAParams make_udsa(const UDSAConfig& cfg, int dim, std::uint64_t seed) {
  validate(cfg);
  UDSAParams p;
  p.config = cfg;
  for (int i = 1; i <= cfg.depth; ++i) {
    Rng rng(derive_seed(seed, 0xada9, i));
    Adapter a;
    a.kind = cfg.adapter_kind;
    const int n = cfg.adapter_kind == AdapterKind::kMoe ? cfg.n_experts : 1;
    for (int e = 0; e < n; ++e) a.experts.push_back(make_mlp(dim, rng));
    if (cfg.adapter_kind == AdapterKind::kMoe) {
      a.gate = Parameter(gaussian_matrix(rng, dim, n, 0.1));
      a.top_k = cfg.top_k;
    }
    p.adapt.push_back(std::move(a));
  }
  for (int i = 0; i < cfg.depth; ++i) {
    Rng rng(derive_seed(seed, 0x4e3a, i));
    p.remap.push_back(make_mlp(dim, rng, 0.5));
  }
  return p;
}

/// Generic two-pass evaluation; `adapt(i, x)` and `remap(i, x)` supply the
/// layer maps. Returns v'_0 .. v'_d.
template <typename AdaptFn, typename RemapFn>
std::vector<Var> udsa_two_pass(Var v0, int depth, AdaptFn&& adapt, RemapFn&& remap) {
  if (depth < 0) throw ConfigError("udsa depth must be >= 0");
  std::vector<Var> v{v0};
  for (int i = 1; i <= depth; ++i) {
    v.push_back(adapt(i, v.back()));
    if (!v.back().value().allFinite()) throw NumericError("udsa: non-finite output of Adapt at layer " + std::to_string(i));
  }
  std::vector<Var> vp(static_cast<std::size_t>(depth) + 1);
  vp[static_cast<std::size_t>(depth)] = v[static_cast<std::size_t>(depth)];
  for (int i = depth - 1; i >= 0; --i) {
    const auto ui = static_cast<std::size_t>(i);
    vp[ui] = ad::add(v[ui], remap(i, vp[ui + 1]));
    if (!vp[ui].value().allFinite()) throw NumericError("udsa: non-finite output of Remap at layer " + std::to_string(i));
  }
  return vp;
}

inline std::vector<Var> udsa_forward(Tape& tape, Var v0, UDSAParams& params) {
  return udsa_two_pass(
      v0, params.config.depth,
      [&](int i, Var x) { return params.adapt[static_cast<std::size_t>(i - 1)].apply(tape, x); },
      [&](int i, Var x) { return params.remap[static_cast<std::size_t>(i)].apply(tape, x); });
}

/// Value-only forward over pooled embeddings.
inline std::vector<Matrix> udsa_forward(const Matrix& v0, UDSAParams& params) {
  Tape tape;
  std::vector<Matrix> out;
  for (const auto& v : udsa_forward(tape, tape.constant(v0), params)) out.push_back(v.value());
  return out;
}

struct PerLayerLoss {
  Var total;  // l_cls + l_align, each averaged over layers
  Var l_cls;
  Var l_align;
};

inline PerLayerLoss per_layer_rs2(const std::vector<Var>& vprimes, const std::vector<int>& labels, const TextSpace& t,
                                  Var w, Var b, const RS2Config& cfg) {
  if (vprimes.empty()) throw ValidationError("per_layer_rs2: no layers");
  Var cls, align;
  for (std::size_t i = 0; i < vprimes.size(); ++i) {
    auto terms = rs2_loss(vprimes[i], labels, t, w, b, cfg);
    cls = i == 0 ? terms.l_cls : ad::add(cls, terms.l_cls);
    align = i == 0 ? terms.l_align : ad::add(align, terms.l_align);
  }
  const double inv = 1.0 / static_cast<double>(vprimes.size());
  PerLayerLoss out;
  out.l_cls = ad::scale(cls, inv);
  out.l_align = ad::scale(align, inv);
  out.total = ad::add(out.l_cls, out.l_align);
  return out;
}

/// Dev-set HTER (at each layer's own EER threshold) for every layer.
inline std::vector<double> layer_hters(const std::vector<std::vector<ScoreRecord>>& dev_scores) {
  std::vector<double> out;
  for (const auto& records : dev_scores) {
    if (records.empty()) throw ValidationError("select_exit_layer: empty score set");
    out.push_back(hter(records, eer_threshold(records)));
  }
  return out;
}

/// Arg-min of per-layer values; ties resolve to the shallowest layer.
inline int argmin_shallow(const std::vector<double>& values) {
  if (values.empty()) throw ValidationError("select_exit_layer: no layers");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

inline int select_exit_layer(const std::vector<std::vector<ScoreRecord>>& dev_scores) {
  return argmin_shallow(layer_hters(dev_scores));
}

}  // namespace mmda
