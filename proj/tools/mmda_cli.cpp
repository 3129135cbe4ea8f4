// mmda: synthetic data generation, training, protocol evaluation, reporting.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mmda/config.hpp"
#include "mmda/manifest.hpp"
#include "selftest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmda;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
};

// Turns leftover "--section.key=value" arguments into config overrides.
std::vector<std::string> collect_overrides(const std::vector<std::string>& extras) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const auto& a = extras[i];
    if (a.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + a + "'");
    std::string body = a.substr(2);
    if (body.find('=') == std::string::npos) {
      if (i + 1 >= extras.size()) throw ConfigError("flag '" + a + "' needs a value");
      body += "=" + extras[++i];
    }
    out.push_back(body);
  }
  return out;
}

json load_config(const Common& c) { return load_run_config(c.config_path, c.overrides); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::map<std::string, std::vector<BatchSample>> generate_all(const json& cfg) {
  const auto gen = generator_config(cfg);
  std::map<std::string, std::vector<BatchSample>> out;
  for (const auto& spec : domain_specs(cfg)) out[spec.name] = generate_domain(spec, gen);
  return out;
}

// Reads the manifests under `data_dir`, or generates in memory when empty.
std::map<std::string, std::vector<BatchSample>> load_datasets(const json& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return generate_all(cfg);
  std::map<std::string, std::vector<BatchSample>> out;
  for (const auto& name : cfg.at("protocol").at("domains")) {
    const auto n = name.get<std::string>();
    out[n] = read_manifest(fs::path(data_dir) / n);
  }
  return out;
}

int cmd_gen_data(const Common& c, const std::string& out_dir) {
  const auto cfg = load_config(c);
  const auto hash = config_hash(cfg);
  const auto gen = generator_config(cfg);
  for (const auto& spec : domain_specs(cfg)) {
    const auto samples = generate_domain(spec, gen);
    write_manifest(fs::path(out_dir) / spec.name, samples,
                   {{"config_hash", hash}, {"domain", spec.name}, {"seed", cfg.at("seed")}});
    std::cout << spec.name << ": " << samples.size() << " samples\n";
  }
  write_text(fs::path(out_dir) / "config.json", cfg.dump(2) + "\n");
  std::cout << "config_hash " << hash << '\n';
  return 0;
}

std::vector<std::string> training_domains(const json& cfg) {
  const auto pc = protocol_config(cfg);
  return pc.train_domains.empty() ? pc.domains : pc.train_domains;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& out_dir, const std::string& resume) {
  const auto cfg = load_config(c);
  const auto hash = config_hash(cfg);
  const auto exp = experiment_config(cfg);
  const auto pc = protocol_config(cfg);
  const auto datasets = load_datasets(cfg, data_dir);
  auto [train_set, dev_set] = stratified_dev_split(select_domains(datasets, training_domains(cfg)), pc.dev_fraction,
                                                   derive_seed(exp.seed, 0xde5));
  Model model = make_model(exp.model, exp.captions, exp.seed);
  TrainState state;
  if (!resume.empty()) state = restore_checkpoint(read_checkpoint(resume), model);
  ensure_dir(out_dir);
  const fs::path ckpt = fs::path(out_dir) / "checkpoint.mmck";
  const fs::path loss_csv = fs::path(out_dir) / "loss.csv";
  const bool append = !resume.empty() && fs::exists(loss_csv);
  std::ofstream log(loss_csv, append ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write " + loss_csv.string());
  if (!append) log << "# config_hash=" << hash << "\nstep,epoch,total,l_cls,l_align\n";
  const auto encoded = encode_dataset(train_set, model.backbone);
  train(model, encoded, exp.train, state, [&](const TrainState& s) {
    double sum = 0.0;
    int n = 0;
    char buf[160];
    for (const auto& h : s.history) {
      if (h.epoch != s.epoch - 1) continue;
      std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g\n", h.step, h.epoch, h.total, h.l_cls, h.l_align);
      log << buf;
      sum += h.total;
      ++n;
    }
    log.flush();
    save_checkpoint(ckpt.string(), model, s, {cfg, hash});
    std::cout << "epoch " << s.epoch << " mean loss " << (n > 0 ? sum / n : 0.0) << '\n';
  });
  if (exp.train.epochs <= state.epoch) save_checkpoint(ckpt.string(), model, state, {cfg, hash});
  std::cout << "checkpoint " << ckpt.string() << " config_hash " << hash << '\n';
  return 0;
}

int cmd_eval(const Common& c, const std::string& data_dir, const std::string& out_dir, const std::string& checkpoint) {
  const auto cfg = load_config(c);
  const auto hash = config_hash(cfg);
  const auto exp = experiment_config(cfg);
  const auto pc = protocol_config(cfg);
  const auto datasets = load_datasets(cfg, data_dir);
  std::map<std::string, TrainedModel> cache;
  if (!checkpoint.empty()) {
    if (!fs::exists(checkpoint)) throw IoError("checkpoint not found: " + checkpoint);
    const auto ck = read_checkpoint(checkpoint);
    for (const auto& sub : enumerate_subprotocols(pc)) {
      const auto key = training_key(sub.train);
      if (cache.count(key) != 0) continue;
      TrainedModel tm{make_model(exp.model, exp.captions, exp.seed), {}, {}};
      tm.state = restore_checkpoint(ck, tm.model);
      tm.dev = stratified_dev_split(select_domains(datasets, sub.train), pc.dev_fraction, derive_seed(exp.seed, 0xde5))
                   .second;
      cache.emplace(key, std::move(tm));
    }
  }
  auto report = run_protocol(pc, exp, datasets, &cache);
  report.config_hash = hash;
  ensure_dir(out_dir);
  const std::string stem = "report_" + report.protocol;
  write_text(fs::path(out_dir) / (stem + ".json"), report_json(report).dump(2) + "\n");
  write_text(fs::path(out_dir) / (stem + ".csv"), report_csv(report));
  std::cout << report_csv(report);
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path, bool force) {
  std::vector<ProtocolReport> reports;
  for (const auto& path : inputs) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw IoError("malformed report " + path + ": " + e.what());
    }
    reports.push_back(report_from_json(j));
  }
  for (const auto& r : reports) {
    if (r.config_hash != reports.front().config_hash && !force) {
      throw ValidationError("config hash mismatch: " + reports.front().config_hash + " vs " + r.config_hash +
                            " (use --force to aggregate anyway)");
    }
  }
  std::ostringstream out;
  out << "# config_hash=" << reports.front().config_hash << (force ? " (forced)" : "") << '\n';
  out << "protocol,subprotocol,HTER%,AUC%,tau,exit_layer\n";
  for (const auto& r : reports) {
    const auto csv = report_csv(r);
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // comment
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) out << r.protocol << ',' << line << '\n';
  }
  if (out_path.empty()) {
    std::cout << out.str();
  } else {
    write_text(out_path, out.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmda: multimodal face anti-spoofing domain generalization toolkit"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON config file");
    sub->allow_extras();
  };

  std::string out_dir, data_dir, resume, checkpoint, report_out;
  std::vector<std::string> report_inputs;
  bool force = false;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic domains");
  add_common(gen);
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model on the configured training domains");
  add_common(tr);
  tr->add_option("--data", data_dir, "Directory written by gen-data (generated in memory if omitted)");
  tr->add_option("--out", out_dir, "Output directory")->required();
  tr->add_option("--resume", resume, "Checkpoint to continue from");

  auto* ev = app.add_subcommand("eval", "Run the configured protocol and write reports");
  add_common(ev);
  ev->add_option("--data", data_dir, "Directory written by gen-data (generated in memory if omitted)");
  ev->add_option("--out", out_dir, "Output directory")->required();
  ev->add_option("--checkpoint", checkpoint, "Evaluate this model instead of training per subprotocol");

  auto* rep = app.add_subcommand("report", "Aggregate report JSON files into one CSV table");
  rep->add_option("inputs", report_inputs, "report_*.json files")->required();
  rep->add_option("--out", report_out, "Output CSV (stdout if omitted)");
  rep->add_flag("--force", force, "Aggregate even when config hashes differ");

  auto* st = app.add_subcommand("selftest", "Run the analytic invariant checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (auto* sub : {gen, tr, ev}) {
      if (sub->parsed()) common.overrides = collect_overrides(sub->remaining());
    }
    if (gen->parsed()) return cmd_gen_data(common, out_dir);
    if (tr->parsed()) return cmd_train(common, data_dir, out_dir, resume);
    if (ev->parsed()) return cmd_eval(common, data_dir, out_dir, checkpoint);
    if (rep->parsed()) return cmd_report(report_inputs, report_out, force);
    if (st->parsed()) {
      const int failures = selftest::run(std::cout);
      if (failures > 0) throw ValidationError(std::to_string(failures) + " selftest check(s) failed");
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "MMDA-E" << e.numeric_code() << ": " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "MMDA-E" << static_cast<int>(ErrorCode::kValidation) << ": " << e.what() << '\n';
    return 1;
  }
  return 0;
}
