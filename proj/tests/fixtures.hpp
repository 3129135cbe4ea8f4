#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include "mmda/config.hpp"
#include "oracles.hpp"

namespace fixture {

inline mmda::BatchSample random_sample(mmda::Rng& rng, const std::string& id, const std::string& domain, int label,
                                       int size = 16) {
  mmda::BatchSample s;
  s.sample_id = id;
  s.domain = domain;
  s.label = label;
  s.present = mmda::kAllPresent;
  for (auto m : mmda::kAllModalities) {
    mmda::Image img(size, size, mmda::channels_of(m));
    for (auto& p : img.pixels) p = static_cast<float>(rng.uniform());
    s.image(m) = img;
  }
  return s;
}

inline mmda::EmbeddingBatch random_embeddings(mmda::Rng& rng, const std::vector<std::string>& domains, int n_tok,
                                              int dim) {
  mmda::EmbeddingBatch e;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    e.tokens.push_back(mmda::gaussian_matrix(rng, n_tok, dim, 1.0));
    e.labels.push_back(static_cast<int>(i % 2));
    e.domains.push_back(domains[i]);
  }
  e.pooled = mmda::mean_pool(e.tokens, dim);
  return e;
}

using GradOp = std::function<mmda::Var(mmda::Tape&, const std::vector<mmda::Var>&)>;

// Relative error between tape gradients and central differences of
// sum(op(inputs) * R) for a fixed random weighting R.
inline double gradcheck(std::vector<mmda::Parameter>& inputs, const GradOp& op, std::uint64_t seed = 3) {
  mmda::Rng rng(seed);
  mmda::Matrix weights;
  auto loss = [&]() {
    mmda::Tape tape;
    std::vector<mmda::Var> vars;
    for (auto& p : inputs) vars.push_back(tape.param(p));
    mmda::Var out = op(tape, vars);
    if (weights.size() == 0) weights = mmda::gaussian_matrix(rng, out.rows(), out.cols(), 1.0);
    return out.value().cwiseProduct(weights).sum();
  };
  loss();
  for (auto& p : inputs) p.zero_grad();
  {
    mmda::Tape tape;
    std::vector<mmda::Var> vars;
    for (auto& p : inputs) vars.push_back(tape.param(p));
    mmda::Var out = op(tape, vars);
    tape.backward(mmda::ad::sum(mmda::ad::hadamard(out, tape.constant(weights))));
  }
  double worst = 0.0;
  for (auto& p : inputs) {
    const mmda::Matrix numeric = oracle::numeric_grad(p.value, [&] { return loss(); });
    worst = std::max(worst, oracle::relative_error(p.grad, numeric));
  }
  return worst;
}

/// Unique scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("mmda_" + tag + "_" + std::to_string(mmda::hash_string(tag + std::to_string(counter()++))));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
  std::filesystem::path path_;
};

}  // namespace fixture
