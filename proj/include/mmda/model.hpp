#pragma once

// End-to-end model: frozen encoders -> modality fusion -> joint differential
// attention -> U-shaped adaptation stack -> text-constrained classifier.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mmda/backbone.hpp"
#include "mmda/md2a.hpp"
#include "mmda/rs2.hpp"
#include "mmda/udsa.hpp"

namespace mmda {

struct ModelConfig {
  BackboneConfig backbone;
  MD2AConfig md2a;
  UDSAConfig udsa;
  RS2Config rs2;
};

/// A capture after the frozen encoders: fused tokens of its present modalities.
struct EncodedSample {
  std::string sample_id;
  std::string domain;
  int label = kLive;
  ModalityMask mask = kAllPresent;
  Matrix tokens;  // N_tok x n_d
};

inline std::vector<EncodedSample> encode_dataset(const std::vector<BatchSample>& samples,
                                                 const FrozenEncoderParams& backbone) {
  const Batch batch = make_batch(samples);
  std::map<ModalityKind, EmbeddingBatch> per_modality;
  std::vector<ModalityMask> masks;
  for (const auto& s : batch.samples) masks.push_back(s.present);
  for (auto m : kAllModalities) {
    bool any = false;
    for (const auto& mask : masks) any = any || mask[index_of(m)];
    if (any) per_modality.emplace(m, encode_visual(batch, m, backbone, /*allow_absent=*/true));
  }
  EmbeddingBatch fused = fuse_modalities(per_modality, masks);
  std::vector<EncodedSample> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch.samples[i];
    out.push_back({s.sample_id, s.domain, s.label, s.present, std::move(fused.tokens[i])});
  }
  return out;
}

struct Model {
  ModelConfig config;
  FrozenEncoderParams backbone;
  TextSpace text;
  MD2AParams md2a;
  UDSAParams udsa;
  TextConstrainedClassifier classifier;
};

inline Model make_model(const ModelConfig& cfg, const CaptionSet& captions, std::uint64_t seed) {
  if (cfg.md2a.embed_dim != cfg.backbone.embed_dim) throw ConfigError("md2a width must equal backbone.embed_dim");
  validate(cfg.rs2);
  Model m;
  m.config = cfg;
  m.backbone = make_frozen_encoders(cfg.backbone);
  m.text = encode_text(captions, m.backbone);
  validate_text_space(m.text);
  m.md2a = make_md2a(cfg.md2a, derive_seed(seed, 0x3d2a));
  m.udsa = make_udsa(cfg.udsa, cfg.backbone.embed_dim, derive_seed(seed, 0x0d5a));
  m.classifier = make_classifier(cfg.backbone.embed_dim);
  return m;
}

struct NamedParameter {
  std::string name;
  Parameter* param;
};

/// Every parameter the optimizer updates, in a fixed order. The frozen
/// encoders are plain matrices and never appear here.
inline std::vector<NamedParameter> trainable_parameters(Model& m) {
  std::vector<NamedParameter> out;
  auto add = [&out](std::string name, Parameter& p) { out.push_back({std::move(name), &p}); };
  if (m.config.md2a.enabled) {
    for (std::size_t h = 0; h < m.md2a.heads.size(); ++h) {
      const std::string base = "md2a.head" + std::to_string(h) + ".";
      add(base + "w_q", m.md2a.heads[h].w_q);
      add(base + "w_k", m.md2a.heads[h].w_k);
      add(base + "w_v", m.md2a.heads[h].w_v);
    }
    add("md2a.bn_gamma", m.md2a.bn_gamma);
    add("md2a.bn_beta", m.md2a.bn_beta);
    if (m.config.md2a.learnable_lambda) add("md2a.lambda", m.md2a.lambda);
  }
  auto add_mlp = [&add](const std::string& base, Mlp& mlp) {
    add(base + ".w1", mlp.w1);
    add(base + ".b1", mlp.b1);
    add(base + ".w2", mlp.w2);
    add(base + ".b2", mlp.b2);
  };
  for (std::size_t i = 0; i < m.udsa.adapt.size(); ++i) {
    auto& a = m.udsa.adapt[i];
    const std::string base = "udsa.adapt" + std::to_string(i + 1);
    for (std::size_t e = 0; e < a.experts.size(); ++e) add_mlp(base + ".expert" + std::to_string(e), a.experts[e]);
    if (a.kind == AdapterKind::kMoe) add(base + ".gate", a.gate);
  }
  for (std::size_t i = 0; i < m.udsa.remap.size(); ++i) add_mlp("udsa.remap" + std::to_string(i), m.udsa.remap[i]);
  if (m.config.rs2.uses_classifier()) {
    add("classifier.w", m.classifier.w);
    add("classifier.b", m.classifier.b);
  }
  return out;
}

struct ForwardPass {
  std::vector<Var> layers;  // v'_0 .. v'_d
  std::vector<int> pair_index;
};

inline ForwardPass forward(Tape& tape, Model& m, const std::vector<const EncodedSample*>& batch,
                           std::uint64_t pairing_seed, bool training) {
  if (batch.empty()) throw ValidationError("forward: empty batch");
  std::vector<Matrix> tokens;
  std::vector<std::string> domains;
  for (const auto* s : batch) {
    if (s->tokens.cols() != m.config.backbone.embed_dim) {
      throw ValidationError("sample '" + s->sample_id + "' embedding width does not match the model");
    }
    tokens.push_back(s->tokens);
    domains.push_back(s->domain);
  }
  StackedTokens x{tape.constant(stack_rows(tokens)), row_offsets(tokens)};
  auto attn = md2a_block(tape, x, domains, m.md2a, pairing_seed, training);
  ForwardPass out;
  out.layers = udsa_forward(tape, attn.pooled, m.udsa);
  out.pair_index = std::move(attn.pair_index);
  return out;
}

inline std::vector<int> labels_of(const std::vector<const EncodedSample*>& batch) {
  std::vector<int> y;
  for (const auto* s : batch) y.push_back(s->label);
  return y;
}

/// p(spoof) for every layer and sample: from the classifier when it is
/// trained, otherwise from the text space alone.
inline std::vector<std::vector<double>> layer_scores(Tape& tape, Model& m, const std::vector<Var>& layers) {
  std::vector<std::vector<double>> out;
  for (const auto& layer : layers) {
    std::vector<double> scores(static_cast<std::size_t>(layer.rows()));
    if (m.config.rs2.uses_classifier()) {
      Var p = spoof_probability(layer, tape.constant(m.classifier.w.value), tape.constant(m.classifier.b.value));
      for (Eigen::Index i = 0; i < layer.rows(); ++i) scores[static_cast<std::size_t>(i)] = p.value()(i, 0);
    } else {
      for (Eigen::Index i = 0; i < layer.rows(); ++i) {
        scores[static_cast<std::size_t>(i)] = text_space_spoof_score(layer.value().row(i), m.text);
      }
    }
    out.push_back(std::move(scores));
  }
  return out;
}

}  // namespace mmda
