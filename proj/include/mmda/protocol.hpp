#pragma once

// Cross-domain protocols:
//   P1 leave-one-domain-out ("CPS->W" ...), plus an average row;
//   P2 P1 under test-time missing modalities, one row per missing scenario;
//   P3 limited sources, two domains in and two out ("CW->PS", "PS->CW").

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmda/metrics.hpp"
#include "mmda/trainer.hpp"
#include "mmda/udsa.hpp"

namespace mmda {

enum class ProtocolKind { kLeaveOneOut, kMissing, kLimited };
enum class ThresholdRule { kDevEer, kTestEer };

inline ProtocolKind parse_protocol(const std::string& s) {
  if (s == "P1" || s == "P1_LOO") return ProtocolKind::kLeaveOneOut;
  if (s == "P2" || s == "P2_MISSING") return ProtocolKind::kMissing;
  if (s == "P3" || s == "P3_LIMITED") return ProtocolKind::kLimited;
  throw ConfigError("protocol.name: unknown protocol '" + s + "'");
}

inline std::string to_string(ProtocolKind p) {
  switch (p) {
    case ProtocolKind::kLeaveOneOut: return "P1_LOO";
    case ProtocolKind::kMissing: return "P2_MISSING";
    case ProtocolKind::kLimited: return "P3_LIMITED";
  }
  return "?";
}

inline ThresholdRule parse_threshold(const std::string& s) {
  if (s == "dev_eer") return ThresholdRule::kDevEer;
  if (s == "test_eer") return ThresholdRule::kTestEer;
  throw ConfigError("protocol.threshold: unknown value '" + s + "'");
}

/// Exit-layer rule: automatic dev selection, or a fixed layer.
struct ExitRule {
  bool automatic = true;
  int fixed_layer = 0;
};

inline ExitRule parse_exit(const std::string& s) {
  if (s == "auto") return {};
  if (s.rfind("fixed:", 0) == 0) {
    try {
      std::size_t used = 0;
      const int layer = std::stoi(s.substr(6), &used);
      if (used == s.size() - 6 && layer >= 0) return {false, layer};
    } catch (const std::exception&) {
    }
  }
  throw ConfigError("udsa.exit: expected 'auto' or 'fixed:<i>', got '" + s + "'");
}

inline std::string to_string(const ExitRule& e) {
  return e.automatic ? "auto" : "fixed:" + std::to_string(e.fixed_layer);
}

struct ProtocolConfig {
  ProtocolKind protocol = ProtocolKind::kLeaveOneOut;
  std::vector<std::string> domains;        // every domain taking part, in report order
  std::vector<std::string> train_domains;  // P3 first source pair
  std::vector<std::string> test_domains;   // P3 first target pair
  std::set<ModalityKind> missing = {ModalityKind::kDepth, ModalityKind::kIr};  // P2 scenario pool
  ThresholdRule threshold = ThresholdRule::kDevEer;
  ExitRule exit;
  double dev_fraction = 0.1;
};

struct Subprotocol {
  std::string name;
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::set<ModalityKind> missing;
  std::string group;  // P2 scenario this row averages into
};

inline std::string domain_letters(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) out += n.empty() ? '?' : n[0];
  return out;
}

inline std::string missing_label(const std::set<ModalityKind>& missing) {
  std::string out = "Missing ";
  bool first = true;
  for (auto m : missing) {
    if (!first) out += '&';
    out += modality_name(m).substr(0, 1);
    first = false;
  }
  return out;
}

inline void check_disjoint(const std::vector<std::string>& train, const std::vector<std::string>& test) {
  for (const auto& t : test) {
    if (std::find(train.begin(), train.end(), t) != train.end()) {
      throw ValidationError("protocol: domain '" + t + "' is in both train and test sets");
    }
  }
  if (train.empty() || test.empty()) throw ValidationError("protocol: train and test domain sets must be non-empty");
}

/// Non-empty subsets of `pool`, singletons first, in modality order.
inline std::vector<std::set<ModalityKind>> missing_scenarios(const std::set<ModalityKind>& pool) {
  std::vector<ModalityKind> items(pool.begin(), pool.end());
  std::vector<std::set<ModalityKind>> out;
  const std::size_t n = items.size();
  for (std::size_t size = 1; size <= n; ++size) {
    for (std::uint32_t bits = 1; bits < (1u << n); ++bits) {
      if (static_cast<std::size_t>(__builtin_popcount(bits)) != size) continue;
      std::set<ModalityKind> s;
      for (std::size_t i = 0; i < n; ++i)
        if (bits & (1u << i)) s.insert(items[i]);
      out.push_back(s);
    }
  }
  return out;
}

inline std::vector<Subprotocol> enumerate_subprotocols(const ProtocolConfig& cfg) {
  if (cfg.domains.size() < 2) throw ValidationError("protocol: needs at least two domains");
  std::vector<Subprotocol> out;
  auto loo = [&](const std::set<ModalityKind>& missing, const std::string& group) {
    for (const auto& held : cfg.domains) {
      Subprotocol s;
      for (const auto& d : cfg.domains)
        if (d != held) s.train.push_back(d);
      s.test = {held};
      s.missing = missing;
      s.group = group;
      s.name = domain_letters(s.train) + "->" + domain_letters(s.test);
      if (!group.empty()) s.name = group + " " + s.name;
      out.push_back(std::move(s));
    }
  };
  switch (cfg.protocol) {
    case ProtocolKind::kLeaveOneOut:
      loo({}, "");
      break;
    case ProtocolKind::kMissing:
      if (cfg.missing.empty() || cfg.missing.size() >= kModalityCount) {
        throw ValidationError("protocol.missing must name one or two modalities");
      }
      for (const auto& scenario : missing_scenarios(cfg.missing)) loo(scenario, missing_label(scenario));
      break;
    case ProtocolKind::kLimited: {
      auto train = cfg.train_domains, test = cfg.test_domains;
      if (train.empty() && test.empty() && cfg.domains.size() == 4) {
        train = {cfg.domains[1], cfg.domains[0]};
        test = {cfg.domains[2], cfg.domains[3]};
      }
      for (int flip = 0; flip < 2; ++flip) {
        Subprotocol s;
        s.train = flip == 0 ? train : test;
        s.test = flip == 0 ? test : train;
        s.name = domain_letters(s.train) + "->" + domain_letters(s.test);
        out.push_back(std::move(s));
      }
      break;
    }
  }
  for (const auto& s : out) {
    check_disjoint(s.train, s.test);
    for (const auto& d : s.train) {
      if (std::find(cfg.domains.begin(), cfg.domains.end(), d) == cfg.domains.end()) {
        throw ValidationError("protocol: unknown domain '" + d + "'");
      }
    }
    for (const auto& d : s.test) {
      if (std::find(cfg.domains.begin(), cfg.domains.end(), d) == cfg.domains.end()) {
        throw ValidationError("protocol: unknown domain '" + d + "'");
      }
    }
  }
  return out;
}

/// Stratified (domain, label) split; returns {train, dev}.
inline std::pair<std::vector<BatchSample>, std::vector<BatchSample>> stratified_dev_split(
    const std::vector<BatchSample>& samples, double fraction, std::uint64_t seed) {
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < samples.size(); ++i) strata[{samples[i].domain, samples[i].label}].push_back(i);
  std::vector<bool> to_dev(samples.size(), false);
  for (auto& [key, idx] : strata) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return samples[a].sample_id < samples[b].sample_id; });
    const auto order = shuffled_indices(idx.size(), derive_seed(seed, hash_string(key.first), key.second));
    std::size_t n_dev = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(idx.size())));
    if (n_dev == 0 && idx.size() >= 2 && fraction > 0.0) n_dev = 1;
    for (std::size_t k = 0; k < n_dev; ++k) to_dev[idx[order[k]]] = true;
  }
  std::pair<std::vector<BatchSample>, std::vector<BatchSample>> out;
  for (std::size_t i = 0; i < samples.size(); ++i) (to_dev[i] ? out.second : out.first).push_back(samples[i]);
  return out;
}

struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  CaptionSet captions;
  std::uint64_t seed = 0;
};

struct TrainedModel {
  Model model;
  TrainState state;
  std::vector<BatchSample> dev;
};

inline std::vector<BatchSample> select_domains(const std::map<std::string, std::vector<BatchSample>>& datasets,
                                               const std::vector<std::string>& names) {
  std::vector<BatchSample> out;
  for (const auto& n : names) {
    auto it = datasets.find(n);
    if (it == datasets.end()) throw ValidationError("protocol: no dataset for domain '" + n + "'");
    out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

inline TrainedModel train_on_domains(const ExperimentConfig& exp, const std::map<std::string, std::vector<BatchSample>>& datasets,
                                     const std::vector<std::string>& train_domains, double dev_fraction) {
  auto [train_set, dev_set] = stratified_dev_split(select_domains(datasets, train_domains), dev_fraction,
                                                   derive_seed(exp.seed, 0xde5));
  TrainedModel out{make_model(exp.model, exp.captions, exp.seed), {}, std::move(dev_set)};
  const auto encoded = encode_dataset(train_set, out.model.backbone);
  out.state = train(out.model, encoded, exp.train);
  return out;
}

struct SubprotocolResult {
  std::string name;
  std::string group;
  double hter = 0.0;
  double auc = 0.0;
  double tau = 0.0;
  int exit_layer = 0;
  std::vector<double> dev_layer_hter;
};

inline SubprotocolResult score_subprotocol(TrainedModel& trained, const Subprotocol& sub, const ProtocolConfig& cfg,
                                           const std::map<std::string, std::vector<BatchSample>>& datasets,
                                           std::uint64_t seed) {
  Model& model = trained.model;
  SubprotocolResult r;
  r.name = sub.name;
  r.group = sub.group;
  auto prepare = [&](const std::vector<BatchSample>& s) {
    return encode_dataset(sub.missing.empty() ? s : apply_missing_mask(s, sub.missing), model.backbone);
  };
  const auto dev_layers = evaluate_layers(model, prepare(trained.dev), seed);
  r.dev_layer_hter = layer_hters(dev_layers);
  if (cfg.exit.automatic) {
    r.exit_layer = argmin_shallow(r.dev_layer_hter);
  } else {
    if (cfg.exit.fixed_layer > model.config.udsa.depth) {
      throw ConfigError("udsa.exit: fixed layer " + std::to_string(cfg.exit.fixed_layer) + " exceeds depth " +
                        std::to_string(model.config.udsa.depth));
    }
    r.exit_layer = cfg.exit.fixed_layer;
  }
  const auto test_layers = evaluate_layers(model, prepare(select_domains(datasets, sub.test)), seed);
  const auto& test = test_layers[static_cast<std::size_t>(r.exit_layer)];
  r.tau = cfg.threshold == ThresholdRule::kDevEer ? eer_threshold(dev_layers[static_cast<std::size_t>(r.exit_layer)])
                                                  : eer_threshold(test);
  r.hter = hter(test, r.tau);
  r.auc = auc(test);
  return r;
}

struct ReportRow {
  std::string subprotocol;
  double hter = 0.0;
  double auc = 0.0;
  double tau = std::numeric_limits<double>::quiet_NaN();
  int exit_layer = -1;  // -1 when the row aggregates several models
};

struct ProtocolReport {
  std::string protocol;
  std::string config_hash;
  std::vector<ReportRow> rows;  // table rows, last one is "Average"
  std::vector<SubprotocolResult> details;
};

/// Cache key of the model trained on `train`.
inline std::string training_key(const std::vector<std::string>& train) {
  std::string key;
  for (const auto& d : train) key += d + "|";
  return key;
}

/// `cache` maps training_key(train domains) to a trained model; missing
/// entries are trained and inserted.
inline ProtocolReport run_protocol(const ProtocolConfig& cfg, const ExperimentConfig& exp,
                                   const std::map<std::string, std::vector<BatchSample>>& datasets,
                                   std::map<std::string, TrainedModel>* cache = nullptr) {
  const auto subs = enumerate_subprotocols(cfg);
  std::map<std::string, TrainedModel> local;
  auto& models = cache != nullptr ? *cache : local;
  ProtocolReport report;
  report.protocol = to_string(cfg.protocol);
  for (const auto& sub : subs) {
    const auto key = training_key(sub.train);
    auto it = models.find(key);
    if (it == models.end()) it = models.emplace(key, train_on_domains(exp, datasets, sub.train, cfg.dev_fraction)).first;
    report.details.push_back(score_subprotocol(it->second, sub, cfg, datasets, exp.seed));
  }
  if (cfg.protocol == ProtocolKind::kMissing) {
    std::vector<std::string> groups;
    for (const auto& d : report.details)
      if (std::find(groups.begin(), groups.end(), d.group) == groups.end()) groups.push_back(d.group);
    for (const auto& g : groups) {
      ReportRow row{g, 0.0, 0.0};
      int n = 0;
      for (const auto& d : report.details) {
        if (d.group != g) continue;
        row.hter += d.hter;
        row.auc += d.auc;
        ++n;
      }
      row.hter /= n;
      row.auc /= n;
      report.rows.push_back(row);
    }
  } else {
    for (const auto& d : report.details) report.rows.push_back({d.name, d.hter, d.auc, d.tau, d.exit_layer});
  }
  ReportRow avg{"Average", 0.0, 0.0};
  for (const auto& r : report.rows) {
    avg.hter += r.hter;
    avg.auc += r.auc;
  }
  avg.hter /= static_cast<double>(report.rows.size());
  avg.auc /= static_cast<double>(report.rows.size());
  report.rows.push_back(avg);
  return report;
}

inline std::string format_fixed(double v, int digits) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline std::string report_csv(const ProtocolReport& r) {
  std::ostringstream out;
  out << "# protocol=" << r.protocol << " config_hash=" << r.config_hash << '\n';
  out << "subprotocol,HTER%,AUC%,tau,exit_layer\n";
  for (const auto& row : r.rows) {
    out << row.subprotocol << ',' << format_fixed(100.0 * row.hter, 2) << ',' << format_fixed(100.0 * row.auc, 2) << ','
        << format_fixed(row.tau, 6) << ',' << (row.exit_layer >= 0 ? std::to_string(row.exit_layer) : "") << '\n';
  }
  return out.str();
}

inline nlohmann::json report_json(const ProtocolReport& r) {
  nlohmann::json j;
  j["protocol"] = r.protocol;
  j["config_hash"] = r.config_hash;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json e{{"subprotocol", row.subprotocol}, {"hter", row.hter}, {"auc", row.auc}};
    e["tau"] = std::isnan(row.tau) ? nlohmann::json(nullptr) : nlohmann::json(row.tau);
    e["exit_layer"] = row.exit_layer >= 0 ? nlohmann::json(row.exit_layer) : nlohmann::json(nullptr);
    rows.push_back(e);
  }
  j["rows"] = rows;
  nlohmann::json details = nlohmann::json::array();
  for (const auto& d : r.details) {
    details.push_back({{"subprotocol", d.name}, {"group", d.group}, {"hter", d.hter}, {"auc", d.auc}, {"tau", d.tau},
                       {"exit_layer", d.exit_layer}, {"dev_layer_hter", d.dev_layer_hter}});
  }
  j["details"] = details;
  return j;
}

inline ProtocolReport report_from_json(const nlohmann::json& j) {
  ProtocolReport r;
  r.protocol = j.at("protocol").get<std::string>();
  r.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& e : j.at("rows")) {
    ReportRow row;
    row.subprotocol = e.at("subprotocol").get<std::string>();
    row.hter = e.at("hter").get<double>();
    row.auc = e.at("auc").get<double>();
    if (!e.at("tau").is_null()) row.tau = e.at("tau").get<double>();
    if (!e.at("exit_layer").is_null()) row.exit_layer = e.at("exit_layer").get<int>();
    r.rows.push_back(row);
  }
  return r;
}

}  // namespace mmda
