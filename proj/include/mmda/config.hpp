#pragma once

// Run configuration: one JSON document, layered defaults < file < flags.
// Flags mirror keys as --section.key=value.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmda/backbone.hpp"
#include "mmda/protocol.hpp"
#include "mmda/synthdata.hpp"

namespace mmda {

using nlohmann::json;

inline json default_run_config() {
  return json::parse(R"({
    "seed": 0,
    "data": {"n_live": 40, "n_spoof": 40, "image_size": 32, "spoof_strength": 0.6,
             "modality_noise": [0.03, 0.03, 0.03], "shift_scale": 1.0,
             "artifact_cells": 0, "artifact_amplitude": 0.0, "artifact_flicker": 0.0},
    "backbone": {"embed_dim": 64, "patch_size": 8, "text_buckets": 2048},
    "captions": {"group": 0, "file": ""},
    "md2a": {"enabled": true, "lambda": 0.5, "n_heads": 4, "learnable_lambda": false, "pairing": "uniform"},
    "rs2": {"variant": "rs2", "label_smoothing": 0.1, "distance_mode": "nearest_own_class", "reduction": "mean"},
    "udsa": {"depth": 7, "adapter_kind": "dense", "n_experts": 4, "top_k": 2, "exit": "auto"},
    "train": {"lr": 0.001, "weight_decay": 0.001, "epochs": 10, "batch_size": 24, "clip_grad": true, "clip_norm": 1.0},
    "protocol": {"name": "P1", "domains": ["W-like", "C-like", "P-like", "S-like"], "train_domains": [],
                 "test_domains": [], "missing": ["DEPTH", "IR"], "threshold": "dev_eer", "dev_fraction": 0.1}
  })");
}

namespace detail {

inline void merge_into(json& base, const json& overlay, const std::string& prefix) {
  if (!overlay.is_object()) throw ConfigError("config: '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : overlay.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!base.contains(key)) throw ConfigError("config: unknown key '" + path + "'");
    if (base[key].is_object()) {
      merge_into(base[key], value, path);
    } else {
      const bool numeric_ok = base[key].is_number() && value.is_number();
      if (base[key].type() != value.type() && !numeric_ok) {
        throw ConfigError("config: key '" + path + "' has the wrong type");
      }
      base[key] = value;
    }
  }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace detail

/// Applies one "section.key=value" override.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("config flag '" + assignment + "' lacks '=value'");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json* node = &cfg;
  const auto parts = detail::split(key, '.');
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) throw ConfigError("config: unknown key '" + key + "'");
    node = &(*node)[parts[i]];
  }
  if (node->is_object()) throw ConfigError("config: key '" + key + "' names a section");
  json value;
  if (node->is_string()) {
    value = text;
  } else if (node->is_array() && !text.empty() && text.front() != '[') {
    value = json::array();
    for (const auto& item : detail::split(text, ',')) {
      try {
        value.push_back(json::parse(item));
      } catch (const json::exception&) {
        value.push_back(item);
      }
    }
  } else {
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      throw ConfigError("config: cannot parse value for '" + key + "'");
    }
  }
  const bool numeric_ok = node->is_number() && value.is_number();
  if (node->type() != value.type() && !numeric_ok) throw ConfigError("config: key '" + key + "' has the wrong type");
  *node = value;
}

/// defaults < file (if non-empty) < overrides < MMDA_SEED.
inline json load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  json cfg = default_run_config();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    json file;
    try {
      in >> file;
    } catch (const json::exception& e) {
      throw ConfigError("config file " + path + ": " + e.what());
    }
    detail::merge_into(cfg, file, "");
  }
  for (const auto& o : overrides) apply_override(cfg, o);
  if (const char* env = std::getenv("MMDA_SEED"); env != nullptr && *env != '\0') {
    try {
      cfg["seed"] = std::stoull(env);
    } catch (const std::exception&) {
      throw ConfigError("MMDA_SEED is not an unsigned integer");
    }
  }
  return cfg;
}

inline std::string config_hash(const json& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash_string(cfg.dump())));
  return buf;
}

inline std::set<ModalityKind> parse_modality_set(const json& arr, const std::string& key) {
  std::set<ModalityKind> out;
  for (const auto& item : arr) {
    try {
      out.insert(parse_modality(item.get<std::string>()));
    } catch (const Error&) {
      throw ConfigError(key + ": unknown modality '" + item.get<std::string>() + "'");
    }
  }
  return out;
}

inline GeneratorConfig generator_config(const json& cfg) {
  const auto& d = cfg.at("data");
  GeneratorConfig g;
  g.n_live = d.at("n_live").get<int>();
  g.n_spoof = d.at("n_spoof").get<int>();
  g.image_size = d.at("image_size").get<int>();
  g.spoof_signature_strength = d.at("spoof_strength").get<double>();
  const auto noise = d.at("modality_noise").get<std::vector<double>>();
  if (noise.size() != kModalityCount) throw ConfigError("data.modality_noise needs three entries");
  for (std::size_t i = 0; i < kModalityCount; ++i) g.modality_noise_sigma[i] = noise[i];
  validate(g);
  return g;
}

/// Default domain presets with the configured shift scale applied.
inline std::vector<DomainSpec> domain_specs(const json& cfg) {
  const double scale = cfg.at("data").at("shift_scale").get<double>();
  if (scale < 0.0) throw ConfigError("data.shift_scale must be >= 0");
  auto specs = default_domains(cfg.at("seed").get<std::uint64_t>());
  for (auto& s : specs) {
    for (auto& sh : s.shift) {
      sh.offset *= scale;
      sh.tilt *= scale;
      sh.radial *= scale;
    }
    for (auto& g : s.sensor_gain) g = 1.0 + scale * (g - 1.0);
    s.noise_sigma *= scale;
    s.artifact_cells = cfg.at("data").at("artifact_cells").get<int>();
    s.artifact_amplitude = cfg.at("data").at("artifact_amplitude").get<double>();
    s.artifact_flicker = cfg.at("data").at("artifact_flicker").get<double>();
    validate(s);
  }
  return specs;
}

inline CaptionSet captions_from(const json& cfg) {
  const auto& c = cfg.at("captions");
  const auto file = c.at("file").get<std::string>();
  if (!file.empty()) return load_captions(file);
  return default_captions(c.at("group").get<int>());
}

inline ExperimentConfig experiment_config(const json& cfg) {
  ExperimentConfig e;
  e.seed = cfg.at("seed").get<std::uint64_t>();
  const auto& b = cfg.at("backbone");
  e.model.backbone.embed_dim = b.at("embed_dim").get<int>();
  e.model.backbone.patch_size = b.at("patch_size").get<int>();
  e.model.backbone.text_buckets = b.at("text_buckets").get<int>();
  e.model.backbone.image_height = e.model.backbone.image_width = cfg.at("data").at("image_size").get<int>();
  e.model.backbone.seed = derive_seed(e.seed, 0xbb);
  const auto& m = cfg.at("md2a");
  e.model.md2a.embed_dim = e.model.backbone.embed_dim;
  e.model.md2a.enabled = m.at("enabled").get<bool>();
  e.model.md2a.lambda = m.at("lambda").get<double>();
  e.model.md2a.n_heads = m.at("n_heads").get<int>();
  e.model.md2a.learnable_lambda = m.at("learnable_lambda").get<bool>();
  e.model.md2a.pairing = parse_pairing(m.at("pairing").get<std::string>());
  validate(e.model.md2a);
  const auto& r = cfg.at("rs2");
  e.model.rs2.variant = parse_variant(r.at("variant").get<std::string>());
  e.model.rs2.label_smoothing = r.at("label_smoothing").get<double>();
  e.model.rs2.distance_mode = parse_distance_mode(r.at("distance_mode").get<std::string>());
  e.model.rs2.reduction = parse_reduction(r.at("reduction").get<std::string>());
  validate(e.model.rs2);
  const auto& u = cfg.at("udsa");
  e.model.udsa.depth = u.at("depth").get<int>();
  e.model.udsa.adapter_kind = parse_adapter_kind(u.at("adapter_kind").get<std::string>());
  e.model.udsa.n_experts = u.at("n_experts").get<int>();
  e.model.udsa.top_k = u.at("top_k").get<int>();
  validate(e.model.udsa);
  const auto& t = cfg.at("train");
  e.train.lr = t.at("lr").get<double>();
  e.train.weight_decay = t.at("weight_decay").get<double>();
  e.train.epochs = t.at("epochs").get<int>();
  e.train.batch_size = t.at("batch_size").get<int>();
  e.train.clip_grad = t.at("clip_grad").get<bool>();
  e.train.clip_norm = t.at("clip_norm").get<double>();
  e.train.seed = derive_seed(e.seed, 0x7a);
  validate(e.train);
  e.captions = captions_from(cfg);
  return e;
}

inline ProtocolConfig protocol_config(const json& cfg) {
  const auto& p = cfg.at("protocol");
  ProtocolConfig pc;
  pc.protocol = parse_protocol(p.at("name").get<std::string>());
  pc.domains = p.at("domains").get<std::vector<std::string>>();
  pc.train_domains = p.at("train_domains").get<std::vector<std::string>>();
  pc.test_domains = p.at("test_domains").get<std::vector<std::string>>();
  pc.missing = parse_modality_set(p.at("missing"), "protocol.missing");
  pc.threshold = parse_threshold(p.at("threshold").get<std::string>());
  pc.exit = parse_exit(cfg.at("udsa").at("exit").get<std::string>());
  pc.dev_fraction = p.at("dev_fraction").get<double>();
  if (!(pc.dev_fraction > 0.0 && pc.dev_fraction < 1.0)) throw ConfigError("protocol.dev_fraction must lie in (0, 1)");
  std::set<std::string> known;
  for (const auto& d : default_domains(0)) known.insert(d.name);
  auto check = [&](const std::vector<std::string>& names, const std::string& key, const std::set<std::string>& pool) {
    for (const auto& n : names) {
      if (pool.count(n) == 0) throw ConfigError(key + ": unknown domain '" + n + "'");
    }
  };
  check(pc.domains, "protocol.domains", known);
  const std::set<std::string> listed(pc.domains.begin(), pc.domains.end());
  check(pc.train_domains, "protocol.train_domains", listed);
  check(pc.test_domains, "protocol.test_domains", listed);
  if (!pc.exit.automatic && pc.exit.fixed_layer > cfg.at("udsa").at("depth").get<int>()) {
    throw ConfigError("udsa.exit: fixed layer exceeds udsa.depth");
  }
  return pc;
}

}  // namespace mmda
