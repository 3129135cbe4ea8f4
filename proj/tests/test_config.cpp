#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>

#include "fixtures.hpp"

using namespace mmda;

namespace {

// Sets MMDA_SEED for the lifetime of the guard.
class SeedEnv {
 public:
  explicit SeedEnv(const char* value) { ::setenv("MMDA_SEED", value, 1); }
  ~SeedEnv() { ::unsetenv("MMDA_SEED"); }
};

}  // namespace

TEST(Config, DefaultsBuildValidObjects) {
  const auto cfg = load_run_config("", {});
  const auto exp = experiment_config(cfg);
  EXPECT_EQ(exp.model.backbone.embed_dim, 64);
  EXPECT_EQ(exp.model.udsa.depth, 7);
  EXPECT_EQ(exp.model.md2a.lambda, 0.5);
  EXPECT_EQ(exp.model.rs2.label_smoothing, 0.1);
  EXPECT_EQ(exp.train.lr, 1e-3);
  EXPECT_EQ(protocol_config(cfg).protocol, ProtocolKind::kLeaveOneOut);
}

TEST(Config, OverridesOfEveryKind) {
  const auto cfg = load_run_config("", {"md2a.lambda=0.25", "udsa.adapter_kind=moe", "md2a.enabled=false",
                                        "protocol.missing=IR", "protocol.train_domains=W-like,C-like", "seed=9"});
  EXPECT_EQ(cfg["md2a"]["lambda"], 0.25);
  EXPECT_EQ(cfg["udsa"]["adapter_kind"], "moe");
  EXPECT_EQ(cfg["md2a"]["enabled"], false);
  EXPECT_EQ(cfg["protocol"]["missing"], json::array({"IR"}));
  EXPECT_EQ(cfg["protocol"]["train_domains"], json::array({"W-like", "C-like"}));
  EXPECT_EQ(cfg["seed"], 9);
}

TEST(Config, UnknownKeyNamesTheKey) {
  try {
    load_run_config("", {"md2a.lamda=0.3"});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("md2a.lamda"), std::string::npos);
  }
  EXPECT_THROW(load_run_config("", {"md2a.lambda"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"md2a.lambda=abc"}), ConfigError);
  EXPECT_THROW(load_run_config("", {"md2a=1"}), ConfigError);
}

TEST(Config, FileLayerSitsBetweenDefaultsAndFlags) {
  fixture::TempDir dir("config");
  const auto path = (dir.path() / "run.json").string();
  std::ofstream(path) << R"({"md2a": {"lambda": 0.9, "n_heads": 2}, "train": {"epochs": 3}})";
  const auto cfg = load_run_config(path, {"md2a.lambda=0.1"});
  EXPECT_EQ(cfg["md2a"]["lambda"], 0.1);
  EXPECT_EQ(cfg["md2a"]["n_heads"], 2);
  EXPECT_EQ(cfg["train"]["epochs"], 3);
  std::ofstream(path) << R"({"train": {"epoch": 3}})";
  EXPECT_THROW(load_run_config(path, {}), ConfigError);
  EXPECT_THROW(load_run_config((dir.path() / "missing.json").string(), {}), IoError);
}

TEST(Config, SeedFromEnvironmentWins) {
  SeedEnv env("42");
  const auto cfg = load_run_config("", {"seed=7"});
  EXPECT_EQ(cfg["seed"], 42);
}

TEST(Config, MalformedSeedEnvironment) {
  SeedEnv env("forty-two");
  EXPECT_THROW(load_run_config("", {}), ConfigError);
}

TEST(Config, HashIsStableAndSensitive) {
  const auto a = load_run_config("", {"md2a.lambda=0.3"});
  const auto b = load_run_config("", {"md2a.lambda=0.3"});
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  EXPECT_NE(config_hash(a), config_hash(load_run_config("", {"md2a.lambda=0.4"})));
  EXPECT_NE(config_hash(a), config_hash(load_run_config("", {"md2a.lambda=0.3", "seed=1"})));
}

TEST(Config, UnknownDomainNamesTheKey) {
  const auto cfg = load_run_config("", {"protocol.train_domains=X-like"});
  try {
    protocol_config(cfg);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("protocol.train_domains"), std::string::npos) << e.what();
  }
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_THROW(experiment_config(load_run_config("", {"md2a.n_heads=3"})), ConfigError);
  EXPECT_THROW(experiment_config(load_run_config("", {"rs2.variant=fancy"})), ConfigError);
  EXPECT_THROW(experiment_config(load_run_config("", {"train.lr=0"})), ConfigError);
  EXPECT_THROW(protocol_config(load_run_config("", {"udsa.exit=fixed:9"})), ConfigError);
  EXPECT_THROW(protocol_config(load_run_config("", {"protocol.missing=THERMAL"})), ConfigError);
  EXPECT_THROW(protocol_config(load_run_config("", {"protocol.dev_fraction=1.0"})), ConfigError);
}

TEST(Config, ShiftScaleZeroRemovesDomainShift) {
  const auto specs = domain_specs(load_run_config("", {"data.shift_scale=0"}));
  for (const auto& s : specs) {
    for (const auto& sh : s.shift) EXPECT_EQ(sh, ModalityShift{});
    for (double g : s.sensor_gain) EXPECT_EQ(g, 1.0);
    EXPECT_EQ(s.noise_sigma, 0.0);
  }
}
