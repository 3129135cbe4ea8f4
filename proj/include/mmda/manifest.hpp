#pragma once

// Dataset manifests: a JSON index plus one raw tensor file per present
// modality, paths relative to the manifest's directory.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmda/core_types.hpp"
#include "mmda/tensor_io.hpp"

namespace mmda {

inline constexpr const char* kManifestFormat = "mmda-manifest/1";
inline constexpr const char* kManifestFile = "manifest.json";

inline RawTensor image_to_tensor(const Image& img) {
  RawTensor t;
  t.dtype = DType::kFloat32;
  t.dims = {static_cast<std::uint32_t>(img.height), static_cast<std::uint32_t>(img.width),
            static_cast<std::uint32_t>(img.channels)};
  t.values.assign(img.pixels.begin(), img.pixels.end());
  return t;
}

inline Image tensor_to_image(const RawTensor& t) {
  if (t.dims.size() != 3) throw ShapeError("image tensor must have rank 3");
  Image img(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
  for (std::size_t i = 0; i < t.values.size(); ++i) img.pixels[i] = static_cast<float>(t.values[i]);
  return img;
}

inline std::string tensor_filename(const BatchSample& s, ModalityKind m) {
  return s.sample_id + "_" + std::string(modality_name(m)) + ".mmt";
}

/// Writes samples and a manifest into `dir`. `extra` is merged into the
/// manifest's top level (config hash, generator settings, ...).
inline void write_manifest(const std::filesystem::path& dir, const std::vector<BatchSample>& samples,
                           const nlohmann::json& extra = nlohmann::json::object()) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& s : samples) {
    validate_sample(s);
    nlohmann::json mods = nlohmann::json::object();
    for (auto m : kAllModalities) {
      if (!s.has(m)) continue;
      const std::string name = tensor_filename(s, m);
      write_tensor_file((dir / name).string(), image_to_tensor(s.image(m)));
      mods[std::string(modality_name(m))] = name;
    }
    entries.push_back({{"sample_id", s.sample_id},
                       {"domain", s.domain},
                       {"label", s.label},
                       {"modalities", mods}});
  }
  nlohmann::json doc = extra;
  doc["format"] = kManifestFormat;
  doc["samples"] = entries;
  std::ofstream out(dir / kManifestFile, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in " + dir.string());
  out << doc.dump(2) << '\n';
}

inline nlohmann::json read_manifest_json(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestFile);
  if (!in) throw IoError("missing manifest in " + dir.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  if (doc.value("format", "") != kManifestFormat) {
    throw IoError("unsupported manifest format in " + dir.string());
  }
  return doc;
}

inline std::vector<BatchSample> read_manifest(const std::filesystem::path& dir) {
  const auto doc = read_manifest_json(dir);
  std::vector<BatchSample> samples;
  for (const auto& e : doc.at("samples")) {
    BatchSample s;
    s.sample_id = e.at("sample_id").get<std::string>();
    s.domain = e.at("domain").get<std::string>();
    s.label = e.at("label").get<int>();
    for (const auto& [key, path] : e.at("modalities").items()) {
      const auto m = parse_modality(key);
      s.images[index_of(m)] = tensor_to_image(read_tensor_file((dir / path.get<std::string>()).string()));
      s.present[index_of(m)] = true;
    }
    validate_sample(s);
    samples.push_back(std::move(s));
  }
  return samples;
}

}  // namespace mmda
