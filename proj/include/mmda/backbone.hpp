#pragma once

// Frozen toy encoders standing in for a pretrained vision-language model.
// Visual: per-modality linear patch projection, a prepended embedding token
// (mean of the patch projections), learned-free positional embeddings, then
// per-token centering and L2 normalization. Text: hashed character trigram
// counts through a frozen random projection, L2 normalized.

#include <array>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "mmda/core_types.hpp"
#include "mmda/rng.hpp"
#include "mmda/tensor_io.hpp"

namespace mmda {

struct BackboneConfig {
  int embed_dim = 64;
  int patch_size = 8;
  int image_height = 32;
  int image_width = 32;
  int text_buckets = 2048;
  std::uint64_t seed = 7;

  int tokens_per_modality() const {
    return (image_height / patch_size) * (image_width / patch_size) + 1;
  }
};

struct FrozenEncoderParams {
  BackboneConfig config;
  std::array<Matrix, kModalityCount> patch_proj;  // (P*P*C) x n_d
  Matrix pos_embed;                               // N_tok x n_d
  Matrix text_hash_proj;                          // V_hash x n_d

  /// Canonical byte image, used to verify the encoders stay frozen.
  std::string serialize() const {
    std::ostringstream out(std::ios::binary);
    auto put = [&out](const Matrix& m) {
      RawTensor t;
      t.dtype = DType::kFloat64;
      t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
      t.values.resize(static_cast<std::size_t>(m.size()));
      for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
          t.values[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
      write_tensor(out, t);
    };
    for (const auto& p : patch_proj) put(p);
    put(pos_embed);
    put(text_hash_proj);
    return out.str();
  }
};

inline FrozenEncoderParams make_frozen_encoders(const BackboneConfig& cfg) {
  if (cfg.embed_dim <= 0 || cfg.patch_size <= 0 || cfg.text_buckets <= 0) {
    throw ValidationError("backbone dimensions must be positive");
  }
  if (cfg.image_height % cfg.patch_size != 0 || cfg.image_width % cfg.patch_size != 0) {
    throw ShapeError("image size " + std::to_string(cfg.image_height) + "x" +
                     std::to_string(cfg.image_width) + " not divisible by patch size " +
                     std::to_string(cfg.patch_size));
  }
  FrozenEncoderParams p;
  p.config = cfg;
  for (auto m : kAllModalities) {
    Rng rng(derive_seed(cfg.seed, 1, index_of(m)));
    const int fan_in = cfg.patch_size * cfg.patch_size * channels_of(m);
    p.patch_proj[index_of(m)] = gaussian_matrix(rng, fan_in, cfg.embed_dim, 1.0 / std::sqrt(fan_in));
  }
  Rng pos_rng(derive_seed(cfg.seed, 2));
  p.pos_embed = gaussian_matrix(pos_rng, cfg.tokens_per_modality(), cfg.embed_dim, 0.5);
  Rng text_rng(derive_seed(cfg.seed, 3));
  p.text_hash_proj = gaussian_matrix(text_rng, cfg.text_buckets, cfg.embed_dim, 1.0);
  return p;
}

/// Centers a row and scales it to unit L2 norm.
inline RowVector center_and_normalize(const RowVector& x) {
  RowVector c = x.array() - x.mean();
  const double n = c.norm();
  if (!(n > 1e-12)) throw NumericError("token collapsed to zero after centering");
  return c / n;
}

/// Tokens of one present modality of one sample: N_tok x n_d.
inline Matrix encode_image(const Image& img, ModalityKind m, const FrozenEncoderParams& params) {
  const auto& cfg = params.config;
  const int P = cfg.patch_size;
  if (img.height % P != 0 || img.width % P != 0) {
    throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     " not divisible by patch size " + std::to_string(P));
  }
  if (img.channels != channels_of(m)) throw ShapeError("channel count does not match modality");
  const int gh = img.height / P, gw = img.width / P;
  const int n_tok = gh * gw + 1;
  if (n_tok != params.pos_embed.rows()) {
    throw ShapeError("image grid does not match the encoder's positional table");
  }
  const Matrix& proj = params.patch_proj[index_of(m)];
  Matrix patches(gh * gw, P * P * img.channels);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      Eigen::Index col = 0;
      const Eigen::Index row = py * gw + px;
      for (int y = 0; y < P; ++y)
        for (int x = 0; x < P; ++x)
          for (int c = 0; c < img.channels; ++c)
            patches(row, col++) = img.at(py * P + y, px * P + x, c);
    }
  }
  Matrix content(n_tok, cfg.embed_dim);
  content.bottomRows(gh * gw) = patches * proj;
  content.row(0) = content.bottomRows(gh * gw).colwise().mean();
  content += params.pos_embed;
  for (Eigen::Index r = 0; r < content.rows(); ++r) {
    content.row(r) = center_and_normalize(content.row(r));
  }
  return content;
}

/// Encodes one modality for every sample of a batch. Samples lacking the
/// modality are rejected unless `allow_absent`, in which case they get an
/// empty (0 x n_d) token matrix and a zero pooled row.
inline EmbeddingBatch encode_visual(const Batch& batch, ModalityKind m, const FrozenEncoderParams& params,
                                    bool allow_absent = false) {
  EmbeddingBatch out;
  const int dim = params.config.embed_dim;
  out.pooled = Matrix::Zero(static_cast<Eigen::Index>(batch.size()), dim);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch.samples[i];
    if (!s.has(m)) {
      if (!allow_absent) {
        throw ValidationError("sample '" + s.sample_id + "' lacks modality " + std::string(modality_name(m)));
      }
      out.tokens.emplace_back(0, dim);
    } else {
      out.tokens.push_back(encode_image(s.image(m), m, params));
      out.pooled.row(static_cast<Eigen::Index>(i)) = out.tokens.back().colwise().mean();
    }
    out.labels.push_back(s.label);
    out.domains.push_back(s.domain);
  }
  return out;
}

inline std::size_t trigram_bucket(std::string_view tri, int buckets) {
  return static_cast<std::size_t>(hash_string(tri) % static_cast<std::uint64_t>(buckets));
}

inline RowVector encode_caption(const std::string& caption, const FrozenEncoderParams& params) {
  if (caption.empty()) throw ValidationError("empty caption");
  std::string text = " ";
  for (unsigned char c : caption) text += static_cast<char>(std::tolower(c));
  text += ' ';
  Eigen::RowVectorXd counts = Eigen::RowVectorXd::Zero(params.config.text_buckets);
  for (std::size_t i = 0; i + 3 <= text.size(); ++i) {
    counts(static_cast<Eigen::Index>(trigram_bucket(std::string_view(text).substr(i, 3), params.config.text_buckets))) += 1.0;
  }
  RowVector e = counts * params.text_hash_proj;
  const double n = e.norm();
  if (!(n > 0.0)) throw NumericError("caption embedding has zero norm");
  return e / n;
}

inline TextSpace encode_text(const CaptionSet& captions, const FrozenEncoderParams& params) {
  if (captions.live_captions.empty() || captions.spoof_captions.empty()) {
    throw ValidationError("caption set needs at least one live and one spoof caption");
  }
  TextSpace t;
  const auto m = captions.live_captions.size() + captions.spoof_captions.size();
  t.embeddings.resize(static_cast<Eigen::Index>(m), params.config.embed_dim);
  Eigen::Index row = 0;
  for (const auto& c : captions.live_captions) {
    t.embeddings.row(row++) = encode_caption(c, params);
    t.class_of.push_back(kLive);
  }
  for (const auto& c : captions.spoof_captions) {
    t.embeddings.row(row++) = encode_caption(c, params);
    t.class_of.push_back(kSpoof);
  }
  return t;
}

/// Parses "live:<text>" / "spoof:<text>" lines; blank lines and lines
/// starting with '#' are skipped.
inline CaptionSet parse_captions(std::istream& in) {
  CaptionSet set;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto take = [&](std::string_view prefix, std::vector<std::string>& dst) {
      if (line.rfind(prefix, 0) != 0) return false;
      std::string body = line.substr(prefix.size());
      const auto first = body.find_first_not_of(' ');
      body = first == std::string::npos ? std::string() : body.substr(first);
      if (body.empty()) throw ValidationError("empty caption on line " + std::to_string(lineno));
      dst.push_back(std::move(body));
      return true;
    };
    if (!take("live:", set.live_captions) && !take("spoof:", set.spoof_captions)) {
      throw ValidationError("caption line " + std::to_string(lineno) + " lacks a live:/spoof: prefix");
    }
  }
  return set;
}

inline CaptionSet load_captions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open caption file " + path);
  return parse_captions(in);
}

/// Built-in caption groups; group 0 is the default representation space.
inline CaptionSet default_captions(int group = 0) {
  static const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> groups = {
      {{"This is an example of a real face", "This is a bonafide face", "This is a real face",
        "This is how a real face looks like", "A photo of a real face"},
       {"This is an example of a spoof face", "This is an example of an attack face",
        "This is not a real face", "This is how a spoof face looks like", "A printout shown to be a spoof face"}},
      {{"a live person in front of the camera"}, {"a printed photo held up to the camera"}},
      {{"genuine face with natural depth"}, {"flat replayed face on a screen"}},
      {{"real skin under infrared light", "a living human face"}, {"paper mask under infrared light", "a fake face artifact"}},
      {{"authentic user"}, {"presentation attack"}},
      {{"bonafide sample", "live capture of a person"}, {"spoof sample", "attack capture of an artifact"}},
      {{"a real human face with three dimensional shape"}, {"a two dimensional copy of a face"}},
      {{"this face is alive"}, {"this face is a mask"}},
      {{"warm living face", "a person blinking"}, {"cold synthetic face", "a static image of a person"}},
      {{"legitimate face access"}, {"fraudulent face access"}},
  };
  if (group < 0 || group >= static_cast<int>(groups.size())) {
    throw ValidationError("caption group out of range: " + std::to_string(group));
  }
  return CaptionSet{groups[static_cast<std::size_t>(group)].first, groups[static_cast<std::size_t>(group)].second};
}

inline int caption_group_count() { return 10; }

}  // namespace mmda
