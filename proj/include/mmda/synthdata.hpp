#pragma once

// Procedural multimodal face captures with controllable domain shift and
// modality noise.
//
// Live captures: textured RGB face, a dome-shaped depth map, warm IR face.
// Spoof captures share the RGB model but have a flattened depth dome and an
// attenuated IR response, both scaled by spoof_signature_strength.
// A domain then applies per-modality sensor gain, an additive low-frequency
// bias (offset, horizontal tilt, radial bowl) and Gaussian noise.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "mmda/core_types.hpp"
#include "mmda/rng.hpp"

namespace mmda {

/// Additive low-frequency bias for one modality.
struct ModalityShift {
  double offset = 0.0;
  double tilt = 0.0;    // times the horizontal coordinate in [-1, 1]
  double radial = 0.0;  // times (1 - r^2) clipped at zero, r the radius from center

  friend bool operator==(const ModalityShift&, const ModalityShift&) = default;
};

struct DomainSpec {
  std::string name;
  std::array<ModalityShift, kModalityCount> shift{};
  double noise_sigma = 0.0;
  std::array<double, kModalityCount> sensor_gain = {1.0, 1.0, 1.0};
  // Fixed-pattern sensor artifacts: striped patches at domain-specific grid
  // cells, with a per-capture random amplitude in artifact_amplitude * [1 - f, 1 + f].
  int artifact_cells = 0;
  double artifact_amplitude = 0.0;
  double artifact_flicker = 0.0;
  std::uint64_t seed = 0;
};

struct GeneratorConfig {
  int n_live = 40;
  int n_spoof = 40;
  int image_size = 32;
  double spoof_signature_strength = 0.6;
  std::array<double, kModalityCount> modality_noise_sigma = {0.03, 0.03, 0.03};
};

inline void validate(const DomainSpec& d) {
  if (d.name.empty()) throw ValidationError("domain name must be non-empty");
  if (!(d.noise_sigma >= 0.0 && d.noise_sigma < 1.0)) {
    throw ValidationError("domain '" + d.name + "': noise_sigma must lie in [0, 1)");
  }
  if (d.artifact_cells < 0 || d.artifact_amplitude < 0.0 || d.artifact_flicker < 0.0 || d.artifact_flicker > 1.0) {
    throw ValidationError("domain '" + d.name + "': artifact settings out of range");
  }
  for (double g : d.sensor_gain) {
    if (!(g > 0.0)) throw ValidationError("domain '" + d.name + "': sensor_gain must be positive");
  }
}

inline void validate(const GeneratorConfig& c) {
  if (c.n_live < 0 || c.n_spoof < 0) throw ValidationError("sample counts must be non-negative");
  if (c.image_size <= 0) throw ValidationError("image size must be positive");
  if (c.spoof_signature_strength < 0.0) throw ValidationError("spoof_signature_strength must be >= 0");
  for (double s : c.modality_noise_sigma) {
    if (!(s >= 0.0 && s < 1.0)) throw ValidationError("modality noise sigma must lie in [0, 1)");
  }
}

/// Four presets standing in for the four-dataset benchmark; the shifts are
/// chosen so that absolute depth/IR levels overlap across domains.
inline std::vector<DomainSpec> default_domains(std::uint64_t seed) {
  auto make = [seed](std::string name, std::uint64_t tag, ModalityShift rgb, ModalityShift depth, ModalityShift ir,
                     double noise, std::array<double, 3> gain) {
    DomainSpec d;
    d.name = std::move(name);
    d.shift = {rgb, depth, ir};
    d.noise_sigma = noise;
    d.sensor_gain = gain;
    d.seed = derive_seed(seed, tag);
    return d;
  };
  return {
      make("W-like", 1, {0.05, 0.02, 0.0}, {0.10, 0.05, 0.22}, {0.10, 0.0, 0.0}, 0.03, {1.0, 1.0, 1.3}),
      make("C-like", 2, {-0.05, -0.03, 0.0}, {0.0, -0.05, -0.12}, {-0.05, 0.05, 0.0}, 0.04, {0.9, 1.1, 0.75}),
      make("P-like", 3, {0.0, 0.05, 0.05}, {-0.05, 0.0, 0.08}, {0.0, -0.05, 0.05}, 0.02, {1.1, 0.9, 1.1}),
      make("S-like", 4, {0.08, 0.0, -0.05}, {0.05, 0.03, -0.2}, {0.15, 0.0, -0.05}, 0.05, {0.8, 1.2, 0.85}),
  };
}

namespace detail {

struct FaceLayout {
  double cx, cy, rx, ry;
  // normalized elliptical radius; < 1 inside the face
  double rho(double u, double v) const {
    const double a = (u - cx) / rx, b = (v - cy) / ry;
    return std::sqrt(a * a + b * b);
  }
};

inline double smooth_mask(double rho) {
  // 1 inside, 0 outside, smooth edge around rho = 1
  return 1.0 / (1.0 + std::exp((rho - 1.0) * 12.0));
}

struct Blob {
  double x, y, s, amp;
};

struct ArtifactCell {
  int modality, row, col;
  bool vertical;
  double period;
};

constexpr int kArtifactGrid = 4;

// Cell layout is a property of the domain, identical for every capture.
inline std::vector<ArtifactCell> artifact_layout(const DomainSpec& spec) {
  std::vector<ArtifactCell> cells;
  Rng rng(derive_seed(spec.seed, 0xa7f));
  for (int m = 0; m < static_cast<int>(kModalityCount); ++m) {
    for (int k = 0; k < spec.artifact_cells; ++k) {
      const int idx = static_cast<int>(rng.index(kArtifactGrid * kArtifactGrid));
      cells.push_back({m, idx / kArtifactGrid, idx % kArtifactGrid, rng.uniform() < 0.5, rng.uniform(2.0, 4.0)});
    }
  }
  return cells;
}

}  // namespace detail

/// Generates one capture; the stream is derived from (domain seed, sample id).
inline BatchSample generate_sample(const DomainSpec& spec, const GeneratorConfig& cfg, int label,
                                   const std::string& sample_id) {
  using detail::Blob;
  Rng rng(derive_seed(spec.seed, hash_string(sample_id)));
  const int n = cfg.image_size;
  const double strength = label == kLive ? 0.0 : cfg.spoof_signature_strength;

  detail::FaceLayout face{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0.5, 0.65),
                          rng.uniform(0.6, 0.78)};
  const std::array<double, 3> skin = {rng.uniform(0.45, 0.7), rng.uniform(0.3, 0.5), rng.uniform(0.25, 0.4)};
  const std::array<double, 3> background = {rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)};
  std::vector<Blob> texture;
  for (int i = 0; i < 4; ++i) {
    texture.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.15, 0.4), rng.uniform(-0.12, 0.12)});
  }
  const double dome = 0.35 * (1.0 - std::min(strength, 1.0)) * rng.uniform(0.85, 1.15);
  const double plane_tilt = label == kLive ? 0.0 : strength * rng.uniform(-0.08, 0.08);
  const double ir_face = 0.45 * (1.0 - 0.6 * std::min(strength, 1.0)) * rng.uniform(0.85, 1.15);
  std::vector<Blob> warm;
  for (int i = 0; i < 2; ++i) {
    warm.push_back({face.cx + rng.uniform(-0.3, 0.3), face.cy + rng.uniform(-0.3, 0.3), rng.uniform(0.12, 0.25),
                    ir_face * rng.uniform(0.2, 0.5)});
  }

  const auto artifacts = detail::artifact_layout(spec);
  std::vector<double> artifact_amp;
  for (std::size_t k = 0; k < artifacts.size(); ++k) {
    artifact_amp.push_back(spec.artifact_amplitude * rng.uniform(1.0 - spec.artifact_flicker, 1.0 + spec.artifact_flicker));
  }
  std::vector<double> artifact_field(kModalityCount * static_cast<std::size_t>(n * n), 0.0);
  const int cell = std::max(1, n / detail::kArtifactGrid);
  for (std::size_t k = 0; k < artifacts.size(); ++k) {
    const auto& a = artifacts[k];
    for (int y = a.row * cell; y < std::min(n, (a.row + 1) * cell); ++y) {
      for (int x = a.col * cell; x < std::min(n, (a.col + 1) * cell); ++x) {
        const double t = (a.vertical ? x : y) * 2.0 * 3.14159265358979323846 / a.period;
        artifact_field[static_cast<std::size_t>((a.modality * n + y) * n + x)] += artifact_amp[k] * (0.5 + 0.5 * std::sin(t));
      }
    }
  }

  BatchSample s;
  s.sample_id = sample_id;
  s.domain = spec.name;
  s.label = label;
  s.present = kAllPresent;
  for (auto m : kAllModalities) s.image(m) = Image(n, n, channels_of(m));

  auto blob_sum = [](const std::vector<Blob>& blobs, double u, double v) {
    double acc = 0.0;
    for (const auto& b : blobs) {
      const double dx = u - b.x, dy = v - b.y;
      acc += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.s * b.s));
    }
    return acc;
  };
  auto shifted = [&](ModalityKind m, double clean, int py, int px, double u, double v) {
    const auto& sh = spec.shift[index_of(m)];
    const double r2 = u * u + v * v;
    double x = spec.sensor_gain[index_of(m)] * clean + sh.offset + sh.tilt * u + sh.radial * std::max(0.0, 1.0 - r2);
    x += artifact_field[static_cast<std::size_t>((static_cast<int>(index_of(m)) * n + py) * n + px)];
    x += rng.normal(0.0, spec.noise_sigma) + rng.normal(0.0, cfg.modality_noise_sigma[index_of(m)]);
    return static_cast<float>(std::clamp(x, 0.0, 1.0));
  };

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double u = -1.0 + 2.0 * (x + 0.5) / n;
      const double v = -1.0 + 2.0 * (y + 0.5) / n;
      const double rho = face.rho(u, v);
      const double inside = detail::smooth_mask(rho);
      const double tex = blob_sum(texture, u, v);
      for (int c = 0; c < 3; ++c) {
        const double clean = inside * skin[static_cast<std::size_t>(c)] +
                             (1.0 - inside) * background[static_cast<std::size_t>(c)] + tex;
        s.image(ModalityKind::kRgb).at(y, x, c) = shifted(ModalityKind::kRgb, clean, y, x, u, v);
      }
      const double depth_clean = 0.2 + inside * (0.25 + dome * std::max(0.0, 1.0 - rho * rho)) + plane_tilt * u;
      s.image(ModalityKind::kDepth).at(y, x, 0) = shifted(ModalityKind::kDepth, depth_clean, y, x, u, v);
      const double ir_clean = 0.15 + inside * ir_face + blob_sum(warm, u, v) * inside;
      s.image(ModalityKind::kIr).at(y, x, 0) = shifted(ModalityKind::kIr, ir_clean, y, x, u, v);
    }
  }
  return s;
}

inline std::string make_sample_id(const std::string& domain, int label, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", index);
  return domain + (label == kLive ? "_live_" : "_spoof_") + buf;
}

inline std::vector<BatchSample> generate_domain(const DomainSpec& spec, const GeneratorConfig& cfg) {
  validate(spec);
  validate(cfg);
  std::vector<BatchSample> out;
  out.reserve(static_cast<std::size_t>(cfg.n_live + cfg.n_spoof));
  for (int i = 0; i < cfg.n_live; ++i) out.push_back(generate_sample(spec, cfg, kLive, make_sample_id(spec.name, kLive, i)));
  for (int i = 0; i < cfg.n_spoof; ++i) {
    out.push_back(generate_sample(spec, cfg, kSpoof, make_sample_id(spec.name, kSpoof, i)));
  }
  return out;
}

/// Clears the listed modalities (flags and tensors) from every sample.
inline std::vector<BatchSample> apply_missing_mask(std::vector<BatchSample> samples, const std::set<ModalityKind>& missing) {
  if (missing.size() >= kModalityCount) throw ValidationError("apply_missing_mask: cannot drop every modality");
  for (auto& s : samples) {
    for (auto m : missing) {
      s.present[index_of(m)] = false;
      s.image(m) = Image();
    }
    bool any = false;
    for (bool p : s.present) any = any || p;
    if (!any) throw ValidationError("apply_missing_mask: sample '" + s.sample_id + "' would have no modality");
  }
  return samples;
}

}  // namespace mmda
