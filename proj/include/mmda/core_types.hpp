#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mmda/error.hpp"
#include "mmda/rng.hpp"

namespace mmda {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class ModalityKind : int { kRgb = 0, kDepth = 1, kIr = 2 };

inline constexpr std::size_t kModalityCount = 3;
inline constexpr std::array<ModalityKind, kModalityCount> kAllModalities = {
    ModalityKind::kRgb, ModalityKind::kDepth, ModalityKind::kIr};

inline constexpr std::size_t index_of(ModalityKind m) { return static_cast<std::size_t>(m); }

inline constexpr int channels_of(ModalityKind m) { return m == ModalityKind::kRgb ? 3 : 1; }

inline std::string_view modality_name(ModalityKind m) {
  switch (m) {
    case ModalityKind::kRgb: return "RGB";
    case ModalityKind::kDepth: return "DEPTH";
    case ModalityKind::kIr: return "IR";
  }
  return "?";
}

inline ModalityKind parse_modality(std::string_view name) {
  if (name == "RGB" || name == "rgb" || name == "R") return ModalityKind::kRgb;
  if (name == "DEPTH" || name == "depth" || name == "D") return ModalityKind::kDepth;
  if (name == "IR" || name == "ir" || name == "I") return ModalityKind::kIr;
  throw ValidationError("unknown modality '" + std::string(name) + "'");
}

/// Presence flags indexed by ModalityKind.
using ModalityMask = std::array<bool, kModalityCount>;

inline constexpr ModalityMask kAllPresent = {true, true, true};

inline std::string mask_string(const ModalityMask& mask) {
  std::string out;
  for (auto m : kAllModalities) {
    if (!mask[index_of(m)]) continue;
    if (!out.empty()) out += '+';
    out += modality_name(m);
  }
  return out;
}

inline constexpr int kLive = 1;
inline constexpr int kSpoof = 0;

/// Row-major H x W x C image with float32 pixels.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, 0.0f) {}

  bool empty() const { return pixels.empty(); }
  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  friend bool operator==(const Image&, const Image&) = default;
};

struct BatchSample {
  std::array<Image, kModalityCount> images;
  ModalityMask present = {false, false, false};
  std::string domain;
  int label = kLive;
  std::string sample_id;

  const Image& image(ModalityKind m) const { return images[index_of(m)]; }
  Image& image(ModalityKind m) { return images[index_of(m)]; }
  bool has(ModalityKind m) const { return present[index_of(m)]; }

  friend bool operator==(const BatchSample&, const BatchSample&) = default;
};

/// Checks the per-sample invariants; returns the shared (H, W).
inline std::pair<int, int> validate_sample(const BatchSample& s) {
  if (s.label != kLive && s.label != kSpoof) {
    throw ValidationError("sample '" + s.sample_id + "' has label outside {0,1}");
  }
  int h = -1, w = -1;
  bool any = false;
  for (auto m : kAllModalities) {
    if (!s.has(m)) continue;
    any = true;
    const Image& img = s.image(m);
    if (img.channels != channels_of(m)) {
      throw ShapeError("sample '" + s.sample_id + "' modality " + std::string(modality_name(m)) +
                       " has " + std::to_string(img.channels) + " channels");
    }
    if (img.pixels.size() != static_cast<std::size_t>(img.height) * img.width * img.channels) {
      throw ShapeError("sample '" + s.sample_id + "' pixel buffer does not match its shape");
    }
    if (h < 0) {
      h = img.height;
      w = img.width;
    } else if (img.height != h || img.width != w) {
      throw ShapeError("sample '" + s.sample_id + "' modalities disagree on H x W");
    }
    for (float p : img.pixels) {
      if (!(p >= 0.0f && p <= 1.0f)) {
        throw ValidationError("sample '" + s.sample_id + "' has pixel outside [0, 1]");
      }
    }
  }
  if (!any) throw ValidationError("sample '" + s.sample_id + "' has no present modality");
  return {h, w};
}

/// A validated, id-ordered batch with interned domain labels.
struct Batch {
  std::vector<BatchSample> samples;
  std::vector<std::string> domain_names;  // sorted, unique
  std::vector<int> domain_index;          // per sample, into domain_names
  int height = 0;
  int width = 0;

  std::size_t size() const { return samples.size(); }
};

inline Batch make_batch(std::vector<BatchSample> samples) {
  if (samples.empty()) throw ValidationError("make_batch: empty sample list");
  Batch batch;
  bool first = true;
  for (const auto& s : samples) {
    auto [h, w] = validate_sample(s);
    if (first) {
      batch.height = h;
      batch.width = w;
      first = false;
    } else if (h != batch.height || w != batch.width) {
      throw ShapeError("make_batch: mixed image sizes (" + std::to_string(batch.height) + "x" +
                       std::to_string(batch.width) + " vs " + std::to_string(h) + "x" +
                       std::to_string(w) + ")");
    }
  }
  std::stable_sort(samples.begin(), samples.end(),
                   [](const BatchSample& a, const BatchSample& b) { return a.sample_id < b.sample_id; });
  for (const auto& s : samples) batch.domain_names.push_back(s.domain);
  std::sort(batch.domain_names.begin(), batch.domain_names.end());
  batch.domain_names.erase(std::unique(batch.domain_names.begin(), batch.domain_names.end()),
                           batch.domain_names.end());
  for (const auto& s : samples) {
    auto it = std::lower_bound(batch.domain_names.begin(), batch.domain_names.end(), s.domain);
    batch.domain_index.push_back(static_cast<int>(it - batch.domain_names.begin()));
  }
  batch.samples = std::move(samples);
  return batch;
}

/// Token embeddings per sample plus their mean-pooled summary.
///
/// Token counts may differ between samples only when their presence masks
/// differ; every token row has the same width n_d.
struct EmbeddingBatch {
  std::vector<Matrix> tokens;  // B entries of N_tok x n_d
  Matrix pooled;               // B x n_d
  std::vector<int> labels;
  std::vector<std::string> domains;

  std::size_t size() const { return tokens.size(); }
  Eigen::Index dim() const { return pooled.cols(); }
};

inline Matrix mean_pool(const std::vector<Matrix>& tokens, Eigen::Index dim) {
  Matrix pooled(static_cast<Eigen::Index>(tokens.size()), dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    pooled.row(static_cast<Eigen::Index>(i)) = tokens[i].colwise().mean();
  }
  return pooled;
}

inline double pooled_inconsistency(const EmbeddingBatch& e) {
  double worst = 0.0;
  for (std::size_t i = 0; i < e.tokens.size(); ++i) {
    RowVector mean = e.tokens[i].colwise().mean();
    worst = std::max(worst, (e.pooled.row(static_cast<Eigen::Index>(i)) - mean).cwiseAbs().maxCoeff());
  }
  return worst;
}

inline void validate_embedding_batch(const EmbeddingBatch& e) {
  const auto b = e.tokens.size();
  if (b == 0) throw ValidationError("embedding batch is empty");
  if (e.labels.size() != b || e.domains.size() != b || static_cast<std::size_t>(e.pooled.rows()) != b) {
    throw ShapeError("embedding batch fields disagree on batch size");
  }
  const auto dim = e.pooled.cols();
  if (dim <= 0) throw ShapeError("embedding width must be positive");
  for (const auto& t : e.tokens) {
    if (t.cols() != dim || t.rows() == 0) throw ShapeError("token matrix width differs from n_d");
  }
  if (pooled_inconsistency(e) >= 1e-6) throw NumericError("pooled embedding is not the token mean");
}

inline Matrix gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, stddev);
  return m;
}

struct CaptionSet {
  std::vector<std::string> live_captions;
  std::vector<std::string> spoof_captions;
};

struct TextSpace {
  Matrix embeddings;        // M x n_d
  std::vector<int> class_of;  // kLive or kSpoof per row

  Eigen::Index size() const { return embeddings.rows(); }
};

inline void validate_text_space(const TextSpace& t) {
  if (t.embeddings.rows() == 0) throw ValidationError("text space is empty");
  if (static_cast<std::size_t>(t.embeddings.rows()) != t.class_of.size()) {
    throw ShapeError("text space class vector length differs from row count");
  }
  if (!t.embeddings.allFinite()) throw NumericError("text space has non-finite entries");
  bool live = false, spoof = false;
  for (int c : t.class_of) {
    if (c == kLive) live = true;
    else if (c == kSpoof) spoof = true;
    else throw ValidationError("text class outside {0,1}");
  }
  if (!live || !spoof) throw ValidationError("text space must contain both classes");
}

}  // namespace mmda
