#pragma once

// AdamW training loop, evaluation, and single-file checkpoints.
//
// All randomness is drawn from streams derived from (seed, epoch) for the
// shuffle and (seed, global step) for pairing, so a run resumed from an
// epoch-boundary checkpoint replays the uninterrupted run exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmda/model.hpp"
#include "mmda/metrics.hpp"
#include "mmda/synthdata.hpp"
#include "mmda/tensor_io.hpp"

namespace mmda {

struct TrainConfig {
  double lr = 1e-3;
  double weight_decay = 1e-3;
  int epochs = 10;
  int batch_size = 24;
  std::uint64_t seed = 0;
  bool clip_grad = true;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

inline void validate(const TrainConfig& c) {
  if (!(c.lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (c.weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (c.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(c.clip_norm > 0.0)) throw ConfigError("train.clip_norm must be > 0");
}

struct StepLog {
  int step = 0;
  int epoch = 0;
  double total = 0.0;
  double l_cls = 0.0;
  double l_align = 0.0;
};

struct TrainState {
  int epoch = 0;   // completed epochs
  int step = 0;    // completed optimizer steps
  std::map<std::string, Matrix> adam_m;
  std::map<std::string, Matrix> adam_v;
  std::vector<StepLog> history;  // steps run by this process
};

/// Decoupled weight decay Adam:
///   m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
///   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
inline void adamw_step(const std::vector<NamedParameter>& params, TrainState& state, const TrainConfig& cfg) {
  const int t = state.step + 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (const auto& [name, p] : params) {
    auto& m = state.adam_m[name];
    auto& v = state.adam_v[name];
    if (m.size() == 0) m = Matrix::Zero(p->value.rows(), p->value.cols());
    if (v.size() == 0) v = Matrix::Zero(p->value.rows(), p->value.cols());
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * p->grad;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * p->grad.cwiseProduct(p->grad);
    const Matrix update = (m / bc1).array() / ((v / bc2).array().sqrt() + cfg.adam_eps);
    p->value -= cfg.lr * (update + cfg.weight_decay * p->value);
  }
}

inline double global_grad_norm(const std::vector<NamedParameter>& params) {
  double acc = 0.0;
  for (const auto& np : params) acc += np.param->grad.squaredNorm();
  return std::sqrt(acc);
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  return order;
}

inline std::uint64_t pairing_seed_for_step(std::uint64_t seed, int step) { return derive_seed(seed, 0x5e9, step); }
inline std::uint64_t eval_pairing_seed(std::uint64_t seed) { return derive_seed(seed, 0xe7a1); }

using EpochCallback = std::function<void(const TrainState&)>;

/// Trains from `state` up to cfg.epochs completed epochs.
inline TrainState train(Model& model, const std::vector<EncodedSample>& data, const TrainConfig& cfg,
                        TrainState state = {}, const EpochCallback& on_epoch = {}) {
  validate(cfg);
  if (data.empty() && cfg.epochs > state.epoch) throw ValidationError("train: empty dataset");
  auto params = trainable_parameters(model);
  state.history.clear();
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const auto order = shuffled_indices(data.size(), derive_seed(cfg.seed, 0xe90c, epoch));
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const EncodedSample*> batch;
      for (std::size_t k = start; k < stop; ++k) batch.push_back(&data[order[k]]);
      for (auto& np : params) np.param->zero_grad();
      Tape tape;
      auto fwd = forward(tape, model, batch, pairing_seed_for_step(cfg.seed, state.step), /*training=*/true);
      auto loss = per_layer_rs2(fwd.layers, labels_of(batch), model.text, tape.param(model.classifier.w),
                                tape.param(model.classifier.b), model.config.rs2);
      const double total = loss.total.scalar();
      if (!std::isfinite(total)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(state.step));
      }
      tape.backward(loss.total);
      if (cfg.clip_grad) {
        const double norm = global_grad_norm(params);
        if (!std::isfinite(norm)) {
          throw NumericError("non-finite gradient at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(state.step));
        }
        if (norm > cfg.clip_norm) {
          for (auto& np : params) np.param->grad *= cfg.clip_norm / norm;
        }
      }
      adamw_step(params, state, cfg);
      state.history.push_back({state.step, epoch, total, loss.l_cls.scalar(), loss.l_align.scalar()});
      ++state.step;
    }
    state.epoch = epoch + 1;
    if (on_epoch) on_epoch(state);
  }
  return state;
}

/// Eval-mode scores of every layer: records[layer][sample].
inline std::vector<std::vector<ScoreRecord>> evaluate_layers(Model& model, const std::vector<EncodedSample>& data,
                                                             std::uint64_t seed) {
  if (data.empty()) throw ValidationError("evaluate: empty dataset");
  std::vector<const EncodedSample*> batch;
  for (const auto& s : data) batch.push_back(&s);
  Tape tape;
  tape.set_grad_enabled(false);
  auto fwd = forward(tape, model, batch, eval_pairing_seed(seed), /*training=*/false);
  auto scores = layer_scores(tape, model, fwd.layers);
  std::vector<std::vector<ScoreRecord>> out;
  for (const auto& layer : scores) {
    std::vector<ScoreRecord> records;
    for (std::size_t i = 0; i < data.size(); ++i) {
      records.push_back({layer[i], data[i].label, data[i].domain, data[i].mask});
    }
    out.push_back(std::move(records));
  }
  return out;
}

inline std::vector<ScoreRecord> evaluate(Model& model, const std::vector<BatchSample>& samples,
                                         const std::set<ModalityKind>& missing, int exit_layer, std::uint64_t seed) {
  if (exit_layer < 0 || exit_layer > model.config.udsa.depth) {
    throw ValidationError("evaluate: exit layer " + std::to_string(exit_layer) + " outside [0, depth]");
  }
  const auto masked = missing.empty() ? samples : apply_missing_mask(samples, missing);
  const auto encoded = encode_dataset(masked, model.backbone);
  return evaluate_layers(model, encoded, seed)[static_cast<std::size_t>(exit_layer)];
}

// ---------------------------------------------------------------------------
// Checkpoints: "MMDACKPT", u64 header length, JSON header, then one raw
// float64 tensor per name listed in header["tensors"].

inline constexpr char kCheckpointMagic[8] = {'M', 'M', 'D', 'A', 'C', 'K', 'P', 'T'};

inline RawTensor matrix_tensor(const Matrix& m) {
  RawTensor t;
  t.dtype = DType::kFloat64;
  t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
  t.values.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) t.values.push_back(m(r, c));
  return t;
}

inline Matrix tensor_matrix(const RawTensor& t) {
  if (t.dims.size() != 2) throw ShapeError("checkpoint tensor must have rank 2");
  Matrix m(t.dims[0], t.dims[1]);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t.values[static_cast<std::size_t>(r * m.cols() + c)];
  return m;
}

/// Named tensors of a model's full mutable state (parameters and buffers).
inline std::vector<std::pair<std::string, Matrix*>> model_tensors(Model& m) {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (auto& np : trainable_parameters(m)) out.emplace_back("param/" + np.name, &np.param->value);
  return out;
}

struct CheckpointMeta {
  nlohmann::json config;
  std::string config_hash;
};

inline void save_checkpoint(const std::string& path, Model& model, const TrainState& state, const CheckpointMeta& meta) {
  std::vector<std::pair<std::string, Matrix>> tensors;
  for (auto& [name, mat] : model_tensors(model)) tensors.emplace_back(name, *mat);
  Matrix mean = model.md2a.running_mean;
  Matrix var = model.md2a.running_var;
  tensors.emplace_back("buffer/md2a.running_mean", mean);
  tensors.emplace_back("buffer/md2a.running_var", var);
  tensors.emplace_back("buffer/md2a.lambda", model.md2a.lambda.value);
  for (const auto& np : trainable_parameters(model)) {
    auto it = state.adam_m.find(np.name);
    if (it == state.adam_m.end()) continue;
    tensors.emplace_back("adam_m/" + np.name, it->second);
    tensors.emplace_back("adam_v/" + np.name, state.adam_v.at(np.name));
  }
  nlohmann::json header;
  header["format"] = "mmda-checkpoint/1";
  header["config"] = meta.config;
  header["config_hash"] = meta.config_hash;
  header["epoch"] = state.epoch;
  header["step"] = state.step;
  header["rng"] = {{"scheme", "derived-per-step"}, {"seed", meta.config.value("seed", 0)}};
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, _] : tensors) names.push_back(name);
  header["tensors"] = names;
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, 8);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), 8);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, mat] : tensors) write_tensor(out, matrix_tensor(mat));
  if (!out) throw IoError("failed writing checkpoint " + path);
}

struct LoadedCheckpoint {
  nlohmann::json header;
  std::map<std::string, Matrix> tensors;
};

inline LoadedCheckpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || !std::equal(magic, magic + 8, kCheckpointMagic)) throw IoError("not a checkpoint: " + path);
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError("truncated checkpoint header: " + path);
  LoadedCheckpoint ck;
  try {
    ck.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header: " + std::string(e.what()));
  }
  for (const auto& name : ck.header.at("tensors")) ck.tensors[name.get<std::string>()] = tensor_matrix(read_tensor(in));
  return ck;
}

/// Restores model state and optimizer state; shapes must match the model.
inline TrainState restore_checkpoint(const LoadedCheckpoint& ck, Model& model) {
  auto fetch = [&ck](const std::string& name, Eigen::Index rows, Eigen::Index cols) -> const Matrix& {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw ValidationError("checkpoint lacks tensor '" + name + "'");
    if (it->second.rows() != rows || it->second.cols() != cols) {
      throw ValidationError("checkpoint tensor '" + name + "' has shape " + std::to_string(it->second.rows()) + "x" +
                            std::to_string(it->second.cols()) + ", model expects " + std::to_string(rows) + "x" +
                            std::to_string(cols));
    }
    return it->second;
  };
  for (auto& [name, mat] : model_tensors(model)) *mat = fetch(name, mat->rows(), mat->cols());
  const auto nd = static_cast<Eigen::Index>(model.config.backbone.embed_dim);
  model.md2a.running_mean = fetch("buffer/md2a.running_mean", 1, nd).row(0);
  model.md2a.running_var = fetch("buffer/md2a.running_var", 1, nd).row(0);
  model.md2a.lambda.value = fetch("buffer/md2a.lambda", 1, 1);
  TrainState state;
  state.epoch = ck.header.at("epoch").get<int>();
  state.step = ck.header.at("step").get<int>();
  for (const auto& np : trainable_parameters(model)) {
    if (ck.tensors.count("adam_m/" + np.name) == 0) continue;
    state.adam_m[np.name] = fetch("adam_m/" + np.name, np.param->value.rows(), np.param->value.cols());
    state.adam_v[np.name] = fetch("adam_v/" + np.name, np.param->value.rows(), np.param->value.cols());
  }
  for (auto& np : trainable_parameters(model)) np.param->zero_grad();
  return state;
}

}  // namespace mmda
