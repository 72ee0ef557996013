// Command-line front end for training, protecting, attacking and evaluating
// quantized GIN models. Exit codes: 0 ok, 2 configuration error, 3 I/O error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "crossfire/harness.hpp"

namespace fs = std::filesystem;
using namespace crossfire;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
};

void add_common(CLI::App* sub, CommonOptions& o, bool needs_config) {
  auto* c = sub->add_option("--config", o.config, "JSON configuration file");
  if (needs_config) c->required();
  sub->add_option("--seed", o.seed, "Override the configuration seed");
  sub->add_option("--out", o.out, "Output directory")->capture_default_str();
}

ExperimentConfig resolve_config(const CommonOptions& o) {
  ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  validate(c);
  return c;
}

fs::path out_dir(const CommonOptions& o) {
  std::error_code ec;
  fs::create_directories(o.out, ec);
  if (ec) throw IoError("cannot create output directory '" + o.out + "': " + ec.message());
  return o.out;
}

void save_state(const fs::path& dir, const DefendedModel& d) {
  save_model(dir / "model.bin", d.model);
  if (d.vault) {
    write_file(dir / "ledger.bin", encode_ledger(d.vault->ledger()));
    write_file(dir / "registry.bin", encode_registry(d.vault->registry()));
  }
  if (d.radar) write_file(dir / "radar.bin", encode_radar(*d.radar));
  if (d.neuropots) write_file(dir / "neuropots.bin", encode_neuropots(*d.neuropots));
}

DefendedModel load_state(const fs::path& dir, DefenseKind kind) {
  DefendedModel d;
  d.kind = kind;
  switch (kind) {
    case DefenseKind::kNone: break;
    case DefenseKind::kCrossfire:
      d.vault = SealedVault(decode_ledger(read_file(dir / "ledger.bin")), decode_registry(read_file(dir / "registry.bin")));
      break;
    case DefenseKind::kRadar: d.radar = decode_radar(read_file(dir / "radar.bin")); break;
    case DefenseKind::kNeuropots: d.neuropots = decode_neuropots(read_file(dir / "neuropots.bin")); break;
  }
  return d;
}

int cmd_train(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto dir = out_dir(o);
  const PreparedRun run = prepare_run(cfg, 0);
  save_model(dir / "model.bin", run.model);
  nlohmann::ordered_json j;
  j["seed"] = run.seed;
  j["epoch_losses"] = run.epoch_losses;
  j["test_quality"] = model_quality(run.model, run.dataset, run.split.test, cfg.metric);
  write_text(dir / "train.json", j.dump(2) + "\n");
  std::printf("trained: test quality %.4f, final loss %.4f\n", j["test_quality"].get<double>(),
              run.epoch_losses.back());
  return kExitOk;
}

int cmd_protect(const CommonOptions& o, const std::string& model_path) {
  const auto cfg = resolve_config(o);
  const auto dir = out_dir(o);
  PreparedRun run = prepare_data(cfg, 0);
  run.model = load_model(model_path);
  const DefendedModel d = apply_defense(cfg, run);
  save_state(dir, d);
  std::printf("protected with %s: test quality %.4f -> %.4f\n", to_string(cfg.defense.kind).c_str(),
              model_quality(run.model, run.dataset, run.split.test, cfg.metric),
              model_quality(d.model, run.dataset, run.split.test, cfg.metric));
  return kExitOk;
}

int cmd_attack(const CommonOptions& o, const std::string& model_path) {
  const auto cfg = resolve_config(o);
  const auto dir = out_dir(o);
  PreparedRun run = prepare_data(cfg, 0);
  GinModel model = load_model(model_path);
  const double before = model_quality(model, run.dataset, run.split.test, cfg.metric);
  const AttackTrace trace = run_attack(cfg, run, model);
  save_model(dir / "attacked.bin", model);
  std::ostringstream jsonl;
  write_trace_jsonl(trace, jsonl);
  write_text(dir / "trace.jsonl", jsonl.str());
  std::printf("%s: %zu flips, test quality %.4f -> %.4f\n", to_string(cfg.attack.kind).c_str(), trace.flips.size(),
              before, model_quality(model, run.dataset, run.split.test, cfg.metric));
  return kExitOk;
}

int cmd_defend(const CommonOptions& o, const std::string& model_path, const std::string& state_dir) {
  const auto cfg = resolve_config(o);
  const auto dir = out_dir(o);
  GinModel model = load_model(model_path);
  const DefendedModel d = load_state(state_dir, cfg.defense.kind);
  const DefenseOutcome outcome = run_defense(d, model, {});
  save_model(dir / "repaired.bin", model);
  nlohmann::ordered_json j;
  j["defense"] = to_string(cfg.defense.kind);
  j["attack_detected"] = outcome.attack_detected;
  if (d.vault) j["verified"] = verify(model, d.vault->ledger());
  if (fs::exists(fs::path(state_dir) / "model.bin")) {
    j["matches_protected"] = same_layer_digests(model, load_model(fs::path(state_dir) / "model.bin"));
  }
  write_text(dir / "defense.json", j.dump(2) + "\n");
  std::printf("%s\n", j.dump().c_str());
  return kExitOk;
}

int cmd_experiment(const CommonOptions& o) {
  const auto cfg = resolve_config(o);
  const auto dir = out_dir(o);
  const auto recs = run_experiment(cfg);
  write_report(dir / "records", recs);
  write_csv(recs, std::cout);
  return kExitOk;
}

int cmd_reliability(const CommonOptions& o, int trials) {
  ReliabilityConfig rc;
  rc.trials = trials;
  if (o.seed) rc.seed = *o.seed;
  const auto dir = out_dir(o);
  const auto rows = reliability_study(rc);
  std::ostringstream csv;
  write_reliability_csv(rows, csv);
  write_text(dir / "reliability.csv", csv.str());
  std::cout << csv.str();
  return kExitOk;
}

int cmd_overhead(const CommonOptions& o, int reps) {
  OverheadStudyConfig oc;
  oc.repetitions = reps;
  if (o.seed) oc.seed = *o.seed;
  const auto dir = out_dir(o);
  const auto rows = overhead_study(oc);
  std::ostringstream csv;
  write_overhead_csv(rows, csv);
  write_text(dir / "overhead.csv", csv.str());
  std::cout << csv.str();
  return kExitOk;
}

int cmd_sweep(const CommonOptions& o) {
  const auto bytes = read_file(o.config);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  SweepGrid grid = grid_from_json(j);
  if (o.seed) grid.base.seed = *o.seed;
  const auto dir = out_dir(o);
  std::ostringstream csv;
  write_csv(sweep(grid), csv);
  write_text(dir / "sweep.csv", csv.str());
  std::cout << csv.str();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bit-flip attack and defense laboratory for quantized GINs"};
  app.require_subcommand(1);

  CommonOptions train_o, protect_o, attack_o, defend_o, exp_o, rel_o, ovh_o, sweep_o;
  std::string protect_model, attack_model, defend_model, defend_state;
  int rel_trials = 100, ovh_reps = 20;

  auto* train = app.add_subcommand("train", "Synthesize the dataset and train a quantized GIN");
  add_common(train, train_o, false);
  auto* protect = app.add_subcommand("protect", "Protect a trained model with the configured defense");
  add_common(protect, protect_o, false);
  protect->add_option("--model", protect_model, "Trained model file")->required();
  auto* attack = app.add_subcommand("attack", "Run the configured bit-flip attack on a model");
  add_common(attack, attack_o, false);
  attack->add_option("--model", attack_model, "Deployed model file")->required();
  auto* defend = app.add_subcommand("defend", "Detect and repair an attacked model");
  add_common(defend, defend_o, false);
  defend->add_option("--model", defend_model, "Attacked model file")->required();
  defend->add_option("--state", defend_state, "Directory written by 'protect'")->required();
  auto* experiment = app.add_subcommand("experiment", "Train, protect, attack and repair; write records");
  add_common(experiment, exp_o, false);
  auto* reliability = app.add_subcommand("reliability", "Digest-size reliability study");
  add_common(reliability, rel_o, false);
  reliability->add_option("--trials", rel_trials, "Trials per cell")->capture_default_str();
  auto* overhead = app.add_subcommand("overhead", "Hashing vs. inference cost and storage overhead");
  add_common(overhead, ovh_o, false);
  overhead->add_option("--reps", ovh_reps, "Timed repetitions per cell")->capture_default_str();
  auto* sweep_cmd = app.add_subcommand("sweep", "Grid sweep with per-cell aggregation");
  add_common(sweep_cmd, sweep_o, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*train) return cmd_train(train_o);
    if (*protect) return cmd_protect(protect_o, protect_model);
    if (*attack) return cmd_attack(attack_o, attack_model);
    if (*defend) return cmd_defend(defend_o, defend_model, defend_state);
    if (*experiment) return cmd_experiment(exp_o);
    if (*reliability) return cmd_reliability(rel_o, rel_trials);
    if (*overhead) return cmd_overhead(ovh_o, ovh_reps);
    if (*sweep_cmd) return cmd_sweep(sweep_o);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitOk;
}
