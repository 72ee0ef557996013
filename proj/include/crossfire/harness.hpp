#pragma once

/**
 * @file harness.hpp
 * @brief Experiment engine: configuration, attack x defense runs, the digest
 * reliability and overhead studies, grid sweeps and CSV/JSON reports.
 *
 * Every random stream is derived from the configuration seed, so reports are
 * byte-identical across reruns. Wall-clock timings are only recorded when
 * `record_timing` is set.
 */

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <functional>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "crossfire/attacks.hpp"
#include "crossfire/baselines.hpp"
#include "crossfire/crossfire.hpp"
#include "crossfire/gin.hpp"
#include "crossfire/graph.hpp"
#include "crossfire/serialize.hpp"
#include "crossfire/train.hpp"

namespace crossfire {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// ---------------------------------------------------------------------------
// Configuration

enum class AttackKind { kNone, kPbfa, kIbfaL1, kIbfaKl };
enum class DefenseKind { kNone, kCrossfire, kNeuropots, kRadar };

inline std::string to_string(AttackKind a) {
  switch (a) {
    case AttackKind::kNone: return "none";
    case AttackKind::kPbfa: return "pbfa";
    case AttackKind::kIbfaL1: return "ibfa-l1";
    case AttackKind::kIbfaKl: return "ibfa-kl";
  }
  return "?";
}

inline std::string to_string(DefenseKind d) {
  switch (d) {
    case DefenseKind::kNone: return "none";
    case DefenseKind::kCrossfire: return "crossfire";
    case DefenseKind::kNeuropots: return "neuropots";
    case DefenseKind::kRadar: return "radar";
  }
  return "?";
}

inline std::optional<AttackKind> parse_attack_kind(const std::string& s) {
  for (auto k : {AttackKind::kNone, AttackKind::kPbfa, AttackKind::kIbfaL1, AttackKind::kIbfaKl})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

inline std::optional<DefenseKind> parse_defense_kind(const std::string& s) {
  for (auto k : {DefenseKind::kNone, DefenseKind::kCrossfire, DefenseKind::kNeuropots, DefenseKind::kRadar})
    if (to_string(k) == s) return k;
  return std::nullopt;
}

struct DatasetConfig {
  TaskKind task = TaskKind::kDegreeProfile;
  int graphs = 600;
  int min_nodes = 5;
  int max_nodes = 35;
  double test_fraction = 0.25;
};

struct ModelConfig {
  int hidden = 16;
  int layers = 5;
  double eps = 0.0;
  double init_gain = 0.1;
};

struct TrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  int batch_size = 32;
  double l1 = 0.01;
};

struct AttackConfig {
  AttackKind kind = AttackKind::kPbfa;
  int flips = 15;
  int candidates_k = 10;
  CandidateScope scope = CandidateScope::kPerLayer;
  int batch_size = 32;
  int pair_pool = 10;
};

struct DefenseConfig {
  DefenseKind kind = DefenseKind::kCrossfire;
  double p = 0.1;
  double gamma = 2.0;
  double lambda = 1.1;
  double prune = 0.75;
  int cross_digest = 2;
  bool dynamic_digest = false;
  int max_digest = 8;
  int gradient_batches = 10;
  int gradient_batch_size = 32;
  int radar_group = 16;
  int radar_bits = 2;
  RadarChecksum radar_checksum = RadarChecksum::kFold;
  HoneypotSelection neuropots_selection = HoneypotSelection::kRandom;

  CrossfireConfig crossfire() const {
    return {prune, p, gamma, lambda, static_cast<std::size_t>(cross_digest), dynamic_digest,
            static_cast<std::size_t>(max_digest)};
  }
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int repetitions = 1;
  QualityMetric metric = QualityMetric::kAuroc;
  bool record_timing = false;
  /// Allow values outside the standard experiment grids.
  bool off_grid = false;
  DatasetConfig dataset;
  ModelConfig model;
  TrainConfig train;
  AttackConfig attack;
  DefenseConfig defense;
};

inline const std::vector<int> kFlipGrid{5, 15, 25, 35, 45, 55};
inline const std::vector<double> kHoneypotGrid{0.01, 0.05, 0.1};
inline const std::vector<double> kGammaGrid{1.33, 1.66, 2.0};

namespace detail {

inline void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

inline bool on_grid(double v, const std::vector<double>& grid) {
  return std::any_of(grid.begin(), grid.end(), [v](double g) { return std::abs(v - g) < 1e-12; });
}

}  // namespace detail

/// Throws ConfigError naming the first offending field.
inline void validate(const ExperimentConfig& c) {
  using detail::require;
  require(c.repetitions >= 1, "repetitions", "must be >= 1");
  const auto& d = c.dataset;
  require(d.graphs >= 20, "dataset.graphs", "must be >= 20");
  require(d.min_nodes >= 3, "dataset.min_nodes", "must be >= 3");
  require(d.max_nodes >= d.min_nodes, "dataset.max_nodes", "must be >= dataset.min_nodes");
  require(d.test_fraction > 0.0 && d.test_fraction < 1.0, "dataset.test_fraction", "must be in (0,1)");
  require(c.model.hidden >= 1, "model.hidden", "must be >= 1");
  require(c.model.layers >= 1, "model.layers", "must be >= 1");
  require(std::isfinite(c.model.eps), "model.eps", "must be finite");
  require(c.model.init_gain > 0.0, "model.init_gain", "must be > 0");
  require(c.train.epochs >= 0, "train.epochs", "must be >= 0");
  require(c.train.lr > 0.0, "train.lr", "must be > 0");
  require(c.train.batch_size >= 1, "train.batch_size", "must be >= 1");
  require(c.train.l1 >= 0.0, "train.l1", "must be >= 0");
  const auto& a = c.attack;
  require(a.flips >= 0, "attack.flips", "must be >= 0");
  require(a.candidates_k >= 1, "attack.candidates_k", "must be >= 1");
  require(a.batch_size >= 1, "attack.batch_size", "must be >= 1");
  require(a.pair_pool >= 2, "attack.pair_pool", "must be >= 2");
  const auto& f = c.defense;
  require(f.p > 0.0 && f.p <= 1.0, "defense.p", "must be in (0,1]");
  require(f.gamma >= 1.0, "defense.gamma", "must be >= 1");
  require(f.lambda >= 1.0, "defense.lambda", "must be >= 1");
  require(f.prune >= 0.0 && f.prune < 1.0, "defense.prune", "must be in [0,1)");
  require(f.cross_digest >= 1 && f.cross_digest <= 64, "defense.cross_digest", "must be in [1,64]");
  require(f.max_digest >= 1 && f.max_digest <= 64, "defense.max_digest", "must be in [1,64]");
  require(f.gradient_batches >= 1, "defense.gradient_batches", "must be >= 1");
  require(f.gradient_batch_size >= 1, "defense.gradient_batch_size", "must be >= 1");
  require(f.radar_group >= 1, "defense.radar_group", "must be >= 1");
  require(f.radar_bits == 2 || f.radar_bits == 3, "defense.radar_bits", "must be 2 or 3");
  if (c.off_grid) return;
  if (a.kind != AttackKind::kNone) {
    require(std::find(kFlipGrid.begin(), kFlipGrid.end(), a.flips) != kFlipGrid.end(), "attack.flips",
            "must be one of 5,15,...,55 (set off_grid to override)");
  }
  require(detail::on_grid(f.p, kHoneypotGrid), "defense.p", "must be one of 0.01, 0.05, 0.1 (set off_grid to override)");
  require(detail::on_grid(f.gamma, kGammaGrid), "defense.gamma",
          "must be one of 1.33, 1.66, 2.0 (set off_grid to override)");
  require(std::abs(f.lambda - 1.1) < 1e-12, "defense.lambda", "must be 1.1 (set off_grid to override)");
  require(std::abs(f.prune - 0.75) < 1e-12, "defense.prune", "must be 0.75 (set off_grid to override)");
  require(f.radar_group == 16 && f.radar_bits == 2, "defense.radar_group",
          "radar must use 16-weight groups with 2-bit signatures (set off_grid to override)");
}

namespace detail {

class FieldReader {
 public:
  FieldReader(const nlohmann::json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  template <class T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  template <class E, class Parse>
  void read_enum(const char* key, E& out, Parse parse) {
    std::string s;
    if (auto it = obj_.find(key); it != obj_.end()) {
      read(key, s);
      const auto v = parse(s);
      if (!v) throw ConfigError(field(key) + ": unknown value '" + s + "'");
      out = *v;
    } else {
      seen_.insert(key);
    }
  }

  FieldReader child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    static const nlohmann::json empty = nlohmann::json::object();
    return FieldReader(it == obj_.end() ? empty : *it, field(key));
  }

  void finish() const {
    for (const auto& [k, v] : obj_.items()) {
      if (!seen_.count(k)) throw ConfigError(field(k.c_str()) + ": unknown field");
    }
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const nlohmann::json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
std::optional<E> parse_or_null(const std::function<E(const std::string&)>& f, const std::string& s) {
  try {
    return f(s);
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  detail::FieldReader root(j, "");
  root.read("seed", c.seed);
  root.read("repetitions", c.repetitions);
  root.read("record_timing", c.record_timing);
  root.read("off_grid", c.off_grid);
  root.read_enum("metric", c.metric, [](const std::string& s) -> std::optional<QualityMetric> {
    if (s == "auroc") return QualityMetric::kAuroc;
    if (s == "ap") return QualityMetric::kAp;
    return std::nullopt;
  });

  auto ds = root.child("dataset");
  ds.read_enum("task", c.dataset.task, [](const std::string& s) {
    return detail::parse_or_null<TaskKind>(parse_task_kind, s);
  });
  ds.read("graphs", c.dataset.graphs);
  ds.read("min_nodes", c.dataset.min_nodes);
  ds.read("max_nodes", c.dataset.max_nodes);
  ds.read("test_fraction", c.dataset.test_fraction);
  ds.finish();

  auto md = root.child("model");
  md.read("hidden", c.model.hidden);
  md.read("layers", c.model.layers);
  md.read("eps", c.model.eps);
  md.read("init_gain", c.model.init_gain);
  md.finish();

  auto tr = root.child("train");
  tr.read("epochs", c.train.epochs);
  tr.read("lr", c.train.lr);
  tr.read("batch_size", c.train.batch_size);
  tr.read("l1", c.train.l1);
  tr.finish();

  auto at = root.child("attack");
  at.read_enum("kind", c.attack.kind, parse_attack_kind);
  at.read("flips", c.attack.flips);
  at.read("candidates_k", c.attack.candidates_k);
  at.read_enum("scope", c.attack.scope, [](const std::string& s) -> std::optional<CandidateScope> {
    if (s == "global") return CandidateScope::kGlobal;
    if (s == "per-layer") return CandidateScope::kPerLayer;
    return std::nullopt;
  });
  at.read("batch_size", c.attack.batch_size);
  at.read("pair_pool", c.attack.pair_pool);
  at.finish();

  auto df = root.child("defense");
  df.read_enum("kind", c.defense.kind, parse_defense_kind);
  df.read("p", c.defense.p);
  df.read("gamma", c.defense.gamma);
  df.read("lambda", c.defense.lambda);
  df.read("prune", c.defense.prune);
  df.read("cross_digest", c.defense.cross_digest);
  df.read("dynamic_digest", c.defense.dynamic_digest);
  df.read("max_digest", c.defense.max_digest);
  df.read("gradient_batches", c.defense.gradient_batches);
  df.read("gradient_batch_size", c.defense.gradient_batch_size);
  df.read("radar_group", c.defense.radar_group);
  df.read("radar_bits", c.defense.radar_bits);
  df.read_enum("radar_checksum", c.defense.radar_checksum, [](const std::string& s) {
    return detail::parse_or_null<RadarChecksum>(parse_radar_checksum, s);
  });
  df.read_enum("neuropots_selection", c.defense.neuropots_selection, [](const std::string& s) {
    return detail::parse_or_null<HoneypotSelection>(parse_honeypot_selection, s);
  });
  df.finish();

  root.finish();
  validate(c);
  return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  return {
      {"seed", c.seed},
      {"repetitions", c.repetitions},
      {"metric", c.metric == QualityMetric::kAuroc ? "auroc" : "ap"},
      {"record_timing", c.record_timing},
      {"off_grid", c.off_grid},
      {"dataset",
       {{"task", to_string(c.dataset.task)},
        {"graphs", c.dataset.graphs},
        {"min_nodes", c.dataset.min_nodes},
        {"max_nodes", c.dataset.max_nodes},
        {"test_fraction", c.dataset.test_fraction}}},
      {"model",
       {{"hidden", c.model.hidden}, {"layers", c.model.layers}, {"eps", c.model.eps}, {"init_gain", c.model.init_gain}}},
      {"train",
       {{"epochs", c.train.epochs}, {"lr", c.train.lr}, {"batch_size", c.train.batch_size}, {"l1", c.train.l1}}},
      {"attack",
       {{"kind", to_string(c.attack.kind)},
        {"flips", c.attack.flips},
        {"candidates_k", c.attack.candidates_k},
        {"scope", c.attack.scope == CandidateScope::kGlobal ? "global" : "per-layer"},
        {"batch_size", c.attack.batch_size},
        {"pair_pool", c.attack.pair_pool}}},
      {"defense",
       {{"kind", to_string(c.defense.kind)},
        {"p", c.defense.p},
        {"gamma", c.defense.gamma},
        {"lambda", c.defense.lambda},
        {"prune", c.defense.prune},
        {"cross_digest", c.defense.cross_digest},
        {"dynamic_digest", c.defense.dynamic_digest},
        {"max_digest", c.defense.max_digest},
        {"gradient_batches", c.defense.gradient_batches},
        {"gradient_batch_size", c.defense.gradient_batch_size},
        {"radar_group", c.defense.radar_group},
        {"radar_bits", c.defense.radar_bits},
        {"radar_checksum", to_string(c.defense.radar_checksum)},
        {"neuropots_selection", to_string(c.defense.neuropots_selection)}}},
  };
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_config_text(std::string(bytes.begin(), bytes.end()));
}

// ---------------------------------------------------------------------------
// Seeds and parallelism

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(base) ^ splitmix64(stream + 0x51ed270b27ULL));
}

/// Worker count from CROSSFIRE_THREADS (default 1).
inline unsigned thread_count() {
  const char* env = std::getenv("CROSSFIRE_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw ConfigError("CROSSFIRE_THREADS: must be an integer in [1,1024]");
  return static_cast<unsigned>(v);
}

/// Runs fn(i) for i in [0, n) on up to thread_count() workers; results keep index order.
template <class Fn>
auto parallel_map(std::size_t n, Fn fn) -> std::vector<decltype(fn(std::size_t{0}))> {
  using R = decltype(fn(std::size_t{0}));
  std::vector<std::optional<R>> slots(n);
  const unsigned workers = std::min<std::size_t>(thread_count(), std::max<std::size_t>(n, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (workers <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// ---------------------------------------------------------------------------
// Experiment

struct ExperimentRecord {
  std::uint64_t seed = 0;
  std::string dataset;
  std::string attack;
  int flips = 0;
  std::string defense;
  double p = 0.0;
  double gamma = 0.0;
  double quality_pre = 0.0;
  double quality_attack = 0.0;
  double quality_repair = 0.0;
  bool attack_detected = false;
  double flip_detect_ratio = 0.0;
  bool reconstructed = false;
  double t_attack_ms = 0.0;
  double t_defense_ms = 0.0;

  friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

/// Dataset, split and trained model for one repetition.
struct PreparedRun {
  std::uint64_t seed = 0;
  Dataset dataset;
  Split split;
  GinModel model;
  std::vector<double> epoch_losses;
};

inline std::uint64_t repetition_seed(const ExperimentConfig& c, int rep) {
  return derive_seed(c.seed, static_cast<std::uint64_t>(rep));
}

inline Dataset make_dataset(const ExperimentConfig& c, std::uint64_t run_seed) {
  TaskSpec spec;
  spec.kind = c.dataset.task;
  spec.min_nodes = c.dataset.min_nodes;
  spec.max_nodes = c.dataset.max_nodes;
  return synth_dataset(derive_seed(run_seed, 1), c.dataset.graphs, spec);
}

/// Dataset and split only; the caller supplies the model.
inline PreparedRun prepare_data(const ExperimentConfig& c, int rep) {
  PreparedRun r;
  r.seed = repetition_seed(c, rep);
  r.dataset = make_dataset(c, r.seed);
  r.split = train_test_split(r.dataset.size(), c.dataset.test_fraction, derive_seed(r.seed, 2));
  return r;
}

inline PreparedRun prepare_run(const ExperimentConfig& c, int rep) {
  PreparedRun r = prepare_data(c, rep);
  GinSpec spec;
  spec.input_dim = r.dataset.feature_dim;
  spec.hidden = c.model.hidden;
  spec.layers = c.model.layers;
  spec.tasks = r.dataset.num_tasks;
  spec.eps = c.model.eps;
  spec.init_gain = c.model.init_gain;
  const GinModel init = random_gin(spec, derive_seed(r.seed, 3));
  TrainOptions opts;
  opts.epochs = c.train.epochs;
  opts.lr = c.train.lr;
  opts.batch_size = c.train.batch_size;
  opts.l1 = c.train.l1;
  opts.seed = derive_seed(r.seed, 4);
  auto trained = train_ste(init, r.dataset, r.split.train, opts);
  r.model = std::move(trained.model);
  r.epoch_losses = std::move(trained.epoch_losses);
  return r;
}

/// Deployed model plus whichever defense state protects it.
struct DefendedModel {
  DefenseKind kind = DefenseKind::kNone;
  GinModel model;
  std::optional<SealedVault> vault;
  std::optional<RadarState> radar;
  std::optional<NeuropotsState> neuropots;
};

inline std::vector<GraphBatch> defense_batches(const ExperimentConfig& c, const PreparedRun& run) {
  std::mt19937_64 rng(derive_seed(run.seed, 5));
  return sample_batches(run.dataset, run.split.train, c.defense.gradient_batches, c.defense.gradient_batch_size, rng,
                        false);
}

inline DefendedModel apply_defense(const ExperimentConfig& c, const PreparedRun& run) {
  DefendedModel d;
  d.kind = c.defense.kind;
  d.model = run.model;
  switch (c.defense.kind) {
    case DefenseKind::kNone: break;
    case DefenseKind::kCrossfire: {
      const auto batches = defense_batches(c, run);
      auto p = crossfire_protect(run.model, batches, c.defense.crossfire());
      d.model = std::move(p.model);
      d.vault = std::move(p.vault);
      break;
    }
    case DefenseKind::kNeuropots: {
      std::vector<GraphBatch> batches;
      if (c.defense.neuropots_selection == HoneypotSelection::kActivationRank) batches = defense_batches(c, run);
      d.neuropots = neuropots_protect(d.model, c.defense.p, c.defense.gamma, c.defense.neuropots_selection,
                                      derive_seed(run.seed, 6), batches);
      break;
    }
    case DefenseKind::kRadar:
      d.radar = radar_protect(d.model, static_cast<std::size_t>(c.defense.radar_group), c.defense.radar_bits,
                              c.defense.radar_checksum);
      break;
  }
  return d;
}

/// Mutates `model` with the configured attack; returns the committed flips.
inline AttackTrace run_attack(const ExperimentConfig& c, const PreparedRun& run, GinModel& model) {
  AttackBudget budget;
  budget.max_flips = c.attack.flips;
  budget.candidates_k = c.attack.candidates_k;
  budget.scope = c.attack.scope;
  std::mt19937_64 rng(derive_seed(run.seed, 7));
  switch (c.attack.kind) {
    case AttackKind::kNone: return {};
    case AttackKind::kPbfa: {
      const auto b = sample_batches(run.dataset, run.split.train, 1, c.attack.batch_size, rng, true).front();
      return pbfa(model, b, b.labels, budget);
    }
    case AttackKind::kIbfaL1:
    case AttackKind::kIbfaKl: {
      const LossKind div = c.attack.kind == AttackKind::kIbfaL1 ? LossKind::kL1 : LossKind::kKl;
      const auto pool = sample_batches(run.dataset, run.split.train, c.attack.pair_pool, c.attack.batch_size, rng, false);
      const auto [i, j] = ibfa_select_pair(model, pool, div);
      return ibfa(model, pool[i], pool[j], budget, div);
    }
  }
  return {};
}

struct DefenseOutcome {
  bool attack_detected = false;
  std::size_t flips_detected = 0;
};

/// Runs detection/repair on `model` and counts which committed flips it flagged.
inline DefenseOutcome run_defense(const DefendedModel& d, GinModel& model, std::span<const BitFlipEvent> flips) {
  DefenseOutcome out;
  switch (d.kind) {
    case DefenseKind::kNone: break;
    case DefenseKind::kCrossfire: {
      const auto report = reconstruct(model, *d.vault);
      out.attack_detected = report.attack_detected;
      std::vector<CellRef> flagged = report.flagged_cells;
      std::sort(flagged.begin(), flagged.end());
      for (const auto& f : flips) {
        out.flips_detected += std::binary_search(flagged.begin(), flagged.end(), CellRef{f.layer, f.row, f.col});
      }
      break;
    }
    case DefenseKind::kNeuropots: {
      const auto report = neuropots_detect_and_refresh(model, *d.neuropots);
      out.attack_detected = report.attack_detected();
      for (const auto& f : flips) out.flips_detected += report.cell_flagged({f.layer, f.row, f.col});
      break;
    }
    case DefenseKind::kRadar: {
      const auto report = radar_detect_and_zero(model, *d.radar);
      out.attack_detected = report.attack_detected();
      for (const auto& f : flips) {
        const auto g = radar_group_of(model.weight(f.layer), f.row, f.col, d.radar->group_size);
        out.flips_detected += report.group_flagged(f.layer, g);
      }
      break;
    }
  }
  return out;
}

/// Ground truth: every 4-byte layer digest equals the pristine model's.
inline bool same_layer_digests(const GinModel& a, const GinModel& b) {
  if (a.num_layers() != b.num_layers()) return false;
  for (std::size_t l = 0; l < a.num_layers(); ++l) {
    if (layer_digest(a.weight(l)) != layer_digest(b.weight(l))) return false;
  }
  return true;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

inline ExperimentRecord run_prepared(const ExperimentConfig& c, const PreparedRun& run) {
  ExperimentRecord rec;
  rec.seed = run.seed;
  rec.dataset = to_string(c.dataset.task);
  rec.attack = to_string(c.attack.kind);
  rec.flips = c.attack.kind == AttackKind::kNone ? 0 : c.attack.flips;
  rec.defense = to_string(c.defense.kind);
  rec.p = c.defense.p;
  rec.gamma = c.defense.gamma;

  const DefendedModel defended = apply_defense(c, run);
  const GinModel& pristine = defended.model;
  auto quality = [&](const GinModel& m) { return model_quality(m, run.dataset, run.split.test, c.metric); };
  rec.quality_pre = quality(pristine);

  GinModel deployed = pristine;
  auto t0 = std::chrono::steady_clock::now();
  const AttackTrace trace = run_attack(c, run, deployed);
  if (c.record_timing) rec.t_attack_ms = elapsed_ms(t0);
  rec.flips = static_cast<int>(trace.flips.size());
  rec.quality_attack = quality(deployed);

  t0 = std::chrono::steady_clock::now();
  const DefenseOutcome outcome = run_defense(defended, deployed, trace.flips);
  if (c.record_timing) rec.t_defense_ms = elapsed_ms(t0);
  rec.attack_detected = outcome.attack_detected;
  rec.flip_detect_ratio =
      trace.flips.empty() ? 1.0 : static_cast<double>(outcome.flips_detected) / static_cast<double>(trace.flips.size());
  rec.reconstructed = same_layer_digests(deployed, pristine);
  rec.quality_repair = quality(deployed);
  return rec;
}

inline std::vector<ExperimentRecord> run_experiment(const ExperimentConfig& c) {
  validate(c);
  return parallel_map(static_cast<std::size_t>(c.repetitions),
                      [&](std::size_t r) { return run_prepared(c, prepare_run(c, static_cast<int>(r))); });
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepGrid {
  ExperimentConfig base;
  std::vector<AttackKind> attacks;
  std::vector<int> flips;
  std::vector<DefenseKind> defenses;
  std::vector<double> ps;
  std::vector<double> gammas;

  /// Empty axes fall back to the base configuration's value.
  std::vector<ExperimentConfig> cells() const {
    auto or_base = [](auto v, auto b) { return v.empty() ? decltype(v){b} : v; };
    std::vector<ExperimentConfig> out;
    for (auto a : or_base(attacks, base.attack.kind))
      for (auto f : or_base(flips, base.attack.flips))
        for (auto d : or_base(defenses, base.defense.kind))
          for (auto p : or_base(ps, base.defense.p))
            for (auto g : or_base(gammas, base.defense.gamma)) {
              ExperimentConfig c = base;
              c.attack.kind = a;
              c.attack.flips = f;
              c.defense.kind = d;
              c.defense.p = p;
              c.defense.gamma = g;
              out.push_back(c);
            }
    return out;
  }
};

inline SweepGrid grid_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("sweep: expected an object");
  for (const auto& [k, v] : j.items()) {
    if (k != "base" && k != "grid") throw ConfigError(k + ": unknown field");
  }
  SweepGrid g;
  g.base = config_from_json(j.value("base", nlohmann::json::object()));
  const auto grid = j.value("grid", nlohmann::json::object());
  if (!grid.is_object()) throw ConfigError("grid: expected an object");
  auto list = [&](const char* key) {
    auto it = grid.find(key);
    if (it == grid.end()) return nlohmann::json::array();
    if (!it->is_array()) throw ConfigError(std::string("grid.") + key + ": expected an array");
    return *it;
  };
  for (const auto& [k, v] : grid.items()) {
    if (k != "attack" && k != "flips" && k != "defense" && k != "p" && k != "gamma") {
      throw ConfigError("grid." + k + ": unknown field");
    }
  }
  try {
    for (const auto& v : list("attack")) {
      const auto a = parse_attack_kind(v.get<std::string>());
      if (!a) throw ConfigError("grid.attack: unknown value '" + v.get<std::string>() + "'");
      g.attacks.push_back(*a);
    }
    for (const auto& v : list("defense")) {
      const auto d = parse_defense_kind(v.get<std::string>());
      if (!d) throw ConfigError("grid.defense: unknown value '" + v.get<std::string>() + "'");
      g.defenses.push_back(*d);
    }
    for (const auto& v : list("flips")) g.flips.push_back(v.get<int>());
    for (const auto& v : list("p")) g.ps.push_back(v.get<double>());
    for (const auto& v : list("gamma")) g.gammas.push_back(v.get<double>());
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("grid: wrong element type");
  }
  for (const auto& c : g.cells()) validate(c);
  return g;
}

inline ExperimentRecord aggregate(std::span<const ExperimentRecord> recs) {
  if (recs.empty()) throw std::invalid_argument("aggregate: no records");
  ExperimentRecord m = recs.front();
  const double n = static_cast<double>(recs.size());
  auto mean = [&](auto field) {
    double s = 0;
    for (const auto& r : recs) s += static_cast<double>(field(r));
    return s / n;
  };
  m.quality_pre = mean([](const auto& r) { return r.quality_pre; });
  m.quality_attack = mean([](const auto& r) { return r.quality_attack; });
  m.quality_repair = mean([](const auto& r) { return r.quality_repair; });
  m.flip_detect_ratio = mean([](const auto& r) { return r.flip_detect_ratio; });
  m.t_attack_ms = mean([](const auto& r) { return r.t_attack_ms; });
  m.t_defense_ms = mean([](const auto& r) { return r.t_defense_ms; });
  return m;
}

/// Per-cell mean over repetitions; booleans become rates.
struct AggregateRow {
  ExperimentRecord first;  // identifying columns and means of numeric fields
  double attack_detected_rate = 0.0;
  double reconstructed_rate = 0.0;
  int repetitions = 0;
};

inline AggregateRow aggregate_row(std::span<const ExperimentRecord> recs) {
  AggregateRow row;
  row.first = aggregate(recs);
  row.first.seed = recs.front().seed;
  row.repetitions = static_cast<int>(recs.size());
  for (const auto& r : recs) {
    row.attack_detected_rate += r.attack_detected;
    row.reconstructed_rate += r.reconstructed;
  }
  row.attack_detected_rate /= static_cast<double>(recs.size());
  row.reconstructed_rate /= static_cast<double>(recs.size());
  return row;
}

struct SweepResult {
  std::vector<AggregateRow> rows;
  std::uint64_t seed = 0;
};

inline SweepResult sweep(const SweepGrid& grid) {
  const auto cells = grid.cells();
  for (const auto& c : cells) validate(c);
  const int reps = grid.base.repetitions;
  const auto runs = parallel_map(static_cast<std::size_t>(reps),
                                 [&](std::size_t r) { return prepare_run(grid.base, static_cast<int>(r)); });
  const auto n = cells.size() * static_cast<std::size_t>(reps);
  const auto records = parallel_map(n, [&](std::size_t i) {
    return run_prepared(cells[i / static_cast<std::size_t>(reps)], runs[i % static_cast<std::size_t>(reps)]);
  });
  SweepResult out;
  out.seed = grid.base.seed;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    out.rows.push_back(aggregate_row(std::span(records).subspan(c * static_cast<std::size_t>(reps),
                                                                 static_cast<std::size_t>(reps))));
    out.rows.back().first.seed = grid.base.seed;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

inline const std::vector<std::string> kReportColumns{
    "seed",           "dataset",       "attack",          "flips",           "defense",
    "p",              "gamma",         "quality_pre",     "quality_attack",  "quality_repair",
    "attack_detected", "flip_detect_ratio", "reconstructed", "t_attack_ms",   "t_defense_ms"};

inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

/// The record as it reads back from a report: numeric fields rounded to 6 significant digits.
inline ExperimentRecord canonical(ExperimentRecord r) {
  auto round6 = [](double v) { return std::strtod(fmt6(v).c_str(), nullptr); };
  for (double* f : {&r.p, &r.gamma, &r.quality_pre, &r.quality_attack, &r.quality_repair, &r.flip_detect_ratio,
                    &r.t_attack_ms, &r.t_defense_ms}) {
    *f = round6(*f);
  }
  return r;
}

namespace detail {

inline std::vector<std::string> record_cells(const ExperimentRecord& r, double detected, double reconstructed) {
  return {std::to_string(r.seed), r.dataset,  r.attack,     std::to_string(r.flips), r.defense,
          fmt6(r.p),              fmt6(r.gamma), fmt6(r.quality_pre), fmt6(r.quality_attack), fmt6(r.quality_repair),
          fmt6(detected),         fmt6(r.flip_detect_ratio), fmt6(reconstructed), fmt6(r.t_attack_ms),
          fmt6(r.t_defense_ms)};
}

inline void write_row(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
  os << '\n';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, const std::string& column) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw FormatError("report: bad number in column " + column + ": '" + s + "'");
  return v;
}

}  // namespace detail

inline void write_csv(std::span<const ExperimentRecord> recs, std::ostream& os) {
  detail::write_row(os, kReportColumns);
  for (const auto& r : recs) detail::write_row(os, detail::record_cells(r, r.attack_detected, r.reconstructed));
}

/// Sweep rows: boolean columns hold the rate over repetitions.
inline void write_csv(const SweepResult& s, std::ostream& os) {
  detail::write_row(os, kReportColumns);
  for (const auto& r : s.rows) {
    detail::write_row(os, detail::record_cells(r.first, r.attack_detected_rate, r.reconstructed_rate));
  }
}

inline std::vector<ExperimentRecord> read_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("report: missing header");
  if (detail::split_csv_line(line) != kReportColumns) throw FormatError("report: unexpected header");
  std::vector<ExperimentRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto c = detail::split_csv_line(line);
    if (c.size() != kReportColumns.size()) throw FormatError("report: wrong column count");
    auto num = [&](std::size_t i) { return detail::parse_number(c[i], kReportColumns[i]); };
    ExperimentRecord r;
    r.seed = std::stoull(c[0]);
    r.dataset = c[1];
    r.attack = c[2];
    r.flips = static_cast<int>(num(3));
    r.defense = c[4];
    r.p = num(5);
    r.gamma = num(6);
    r.quality_pre = num(7);
    r.quality_attack = num(8);
    r.quality_repair = num(9);
    r.attack_detected = num(10) != 0.0;
    r.flip_detect_ratio = num(11);
    r.reconstructed = num(12) != 0.0;
    r.t_attack_ms = num(13);
    r.t_defense_ms = num(14);
    out.push_back(std::move(r));
  }
  return out;
}

inline nlohmann::ordered_json to_json(std::span<const ExperimentRecord> recs) {
  auto arr = nlohmann::ordered_json::array();
  auto num = [](double v) { return std::strtod(fmt6(v).c_str(), nullptr); };
  for (const auto& r : recs) {
    nlohmann::ordered_json o;
    o["seed"] = r.seed;
    o["dataset"] = r.dataset;
    o["attack"] = r.attack;
    o["flips"] = r.flips;
    o["defense"] = r.defense;
    o["p"] = num(r.p);
    o["gamma"] = num(r.gamma);
    o["quality_pre"] = num(r.quality_pre);
    o["quality_attack"] = num(r.quality_attack);
    o["quality_repair"] = num(r.quality_repair);
    o["attack_detected"] = r.attack_detected;
    o["flip_detect_ratio"] = num(r.flip_detect_ratio);
    o["reconstructed"] = r.reconstructed;
    o["t_attack_ms"] = num(r.t_attack_ms);
    o["t_defense_ms"] = num(r.t_defense_ms);
    arr.push_back(std::move(o));
  }
  return arr;
}

inline std::vector<ExperimentRecord> records_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("report: expected a JSON array");
  std::vector<ExperimentRecord> out;
  try {
    for (const auto& o : j) {
      ExperimentRecord r;
      r.seed = o.at("seed").get<std::uint64_t>();
      r.dataset = o.at("dataset").get<std::string>();
      r.attack = o.at("attack").get<std::string>();
      r.flips = o.at("flips").get<int>();
      r.defense = o.at("defense").get<std::string>();
      r.p = o.at("p").get<double>();
      r.gamma = o.at("gamma").get<double>();
      r.quality_pre = o.at("quality_pre").get<double>();
      r.quality_attack = o.at("quality_attack").get<double>();
      r.quality_repair = o.at("quality_repair").get<double>();
      r.attack_detected = o.at("attack_detected").get<bool>();
      r.flip_detect_ratio = o.at("flip_detect_ratio").get<double>();
      r.reconstructed = o.at("reconstructed").get<bool>();
      r.t_attack_ms = o.at("t_attack_ms").get<double>();
      r.t_defense_ms = o.at("t_defense_ms").get<double>();
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  return out;
}

/// Writes `<stem>.csv` and `<stem>.json`.
inline void write_report(const std::filesystem::path& stem, std::span<const ExperimentRecord> recs) {
  std::ostringstream csv;
  write_csv(recs, csv);
  auto p = stem;
  write_text(p.replace_extension(".csv"), csv.str());
  write_text(p.replace_extension(".json"), to_json(recs).dump(2) + "\n");
}

/// Quality relative to the pre-attack value, in percent.
struct NormalizedQuality {
  double attack_pct = 0.0;
  double repair_pct = 0.0;
};

inline NormalizedQuality normalize_quality(const ExperimentRecord& r) {
  if (!(r.quality_pre > 0.0)) throw std::domain_error("normalize_quality: pre-attack quality must be positive");
  return {100.0 * r.quality_attack / r.quality_pre, 100.0 * r.quality_repair / r.quality_pre};
}

// ---------------------------------------------------------------------------
// Reliability study

struct ReliabilityConfig {
  std::vector<std::size_t> sizes{100, 200, 300, 400, 500, 600, 700, 800, 900, 1000};
  std::vector<int> flips{1, 5, 10};
  std::vector<std::size_t> digests{1, 2, 3};
  int trials = 100;
  std::uint64_t seed = 0;
};

struct ReliabilityRow {
  std::size_t size = 0;
  int flips = 0;
  std::size_t digest = 0;
  int trials = 0;
  int misses = 0;        // flip sets whose digest still matched
  int false_alarms = 0;  // digest changed without any flip
  double miss_rate() const { return trials ? static_cast<double>(misses) / trials : 0.0; }
};

inline QuantTensor random_int8_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  QuantTensor t(rows, cols, 1.0, -128, 127);
  auto v = t.values();
  for (std::size_t i = 0; i < v.size(); i += 8) {
    const std::uint64_t r = rng();
    for (std::size_t b = 0; b < 8 && i + b < v.size(); ++b) v[i + b] = static_cast<std::int8_t>(r >> (8 * b));
  }
  return t;
}

/// `count` distinct random (cell, bit) positions applied in sequence.
inline std::vector<BitFlipEvent> random_flips(QuantTensor& t, int count, std::mt19937_64& rng) {
  std::set<std::pair<std::size_t, int>> used;
  std::uniform_int_distribution<std::size_t> cell(0, t.size() - 1);
  std::uniform_int_distribution<int> bit(0, 7);
  std::vector<BitFlipEvent> out;
  while (static_cast<int>(out.size()) < count) {
    const auto c = cell(rng);
    const int b = bit(rng);
    if (!used.emplace(c, b).second) continue;
    out.push_back(flip_bit(t, c / t.cols(), c % t.cols(), b));
  }
  return out;
}

/// Digest of the whole matrix at each digest size, mutated vs. original.
inline std::vector<ReliabilityRow> reliability_study(const ReliabilityConfig& cfg) {
  std::vector<ReliabilityRow> rows;
  for (auto n : cfg.sizes) {
    for (int k : cfg.flips) {
      const auto base = rows.size();
      for (auto d : cfg.digests) rows.push_back({n, k, d, cfg.trials, 0, 0});
      std::mt19937_64 rng(derive_seed(cfg.seed, (static_cast<std::uint64_t>(n) << 8) ^ static_cast<std::uint64_t>(k)));
      for (int t = 0; t < cfg.trials; ++t) {
        QuantTensor w = random_int8_tensor(n, n, rng);
        std::vector<std::vector<std::uint8_t>> before;
        for (auto d : cfg.digests) before.push_back(Blake2b::digest(w.bytes(), d));
        random_flips(w, k, rng);
        for (std::size_t i = 0; i < cfg.digests.size(); ++i) {
          const bool same = Blake2b::digest(w.bytes(), cfg.digests[i]) == before[i];
          if (k > 0 && same) ++rows[base + i].misses;
          if (k == 0 && !same) ++rows[base + i].false_alarms;
        }
      }
    }
  }
  return rows;
}

inline void write_reliability_csv(std::span<const ReliabilityRow> rows, std::ostream& os) {
  os << "size,flips,digest,trials,misses,false_alarms,miss_rate\n";
  for (const auto& r : rows) {
    os << r.size << ',' << r.flips << ',' << r.digest << ',' << r.trials << ',' << r.misses << ',' << r.false_alarms
       << ',' << fmt6(r.miss_rate()) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Overhead study

struct OverheadStudyConfig {
  std::vector<std::size_t> sizes{64, 128, 256, 512, 1024};
  std::vector<std::size_t> digests{1, 2, 3};
  int batch = 32;
  std::vector<int> nodes{5, 10};
  int repetitions = 20;
  int warmup = 2;
  std::uint64_t seed = 0;
};

struct OverheadRow {
  std::size_t size = 0;
  std::size_t digest = 0;
  int nodes = 0;
  std::size_t storage_bytes = 0;
  double storage_ratio = 0.0;
  double hash_ms = 0.0;   // median ledger build time
  double layer_ms = 0.0;  // median INT8 A*X*W^T time
};

template <class Fn>
double median_ms(int reps, int warmup, Fn fn) {
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> t;
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(elapsed_ms(t0));
  }
  std::sort(t.begin(), t.end());
  const auto m = t.size() / 2;
  return t.size() % 2 ? t[m] : 0.5 * (t[m - 1] + t[m]);
}

/// Reference INT8 message-passing layer: (A X) W^T with 32-bit accumulation.
inline std::vector<std::int32_t> int8_graph_layer(const std::vector<std::vector<int>>& adj,
                                                  const std::vector<std::int8_t>& x, const QuantTensor& w) {
  const std::size_t n_nodes = adj.size();
  const std::size_t in = w.cols();
  const std::size_t out_dim = w.rows();
  std::vector<std::int32_t> ax(n_nodes * in, 0);
  for (std::size_t v = 0; v < n_nodes; ++v)
    for (int u : adj[v])
      for (std::size_t j = 0; j < in; ++j) ax[v * in + j] += x[static_cast<std::size_t>(u) * in + j];
  std::vector<std::int32_t> out(n_nodes * out_dim, 0);
  for (std::size_t v = 0; v < n_nodes; ++v)
    for (std::size_t o = 0; o < out_dim; ++o) {
      std::int32_t acc = 0;
      for (std::size_t j = 0; j < in; ++j) acc += ax[v * in + j] * w(o, j);
      out[v * out_dim + o] = acc;
    }
  return out;
}

inline std::vector<OverheadRow> overhead_study(const OverheadStudyConfig& cfg) {
  std::vector<OverheadRow> rows;
  std::mt19937_64 rng(cfg.seed);
  for (auto n : cfg.sizes) {
    const QuantTensor w = random_int8_tensor(n, n, rng);
    for (int nodes : cfg.nodes) {
      const std::size_t total = static_cast<std::size_t>(cfg.batch) * static_cast<std::size_t>(nodes);
      std::vector<std::vector<int>> adj(total);
      std::uniform_int_distribution<int> pick(0, nodes - 1);
      for (int g = 0; g < cfg.batch; ++g) {
        const int off = g * nodes;
        for (int v = 1; v < nodes; ++v) {
          const int u = std::uniform_int_distribution<int>(0, v - 1)(rng);
          adj[static_cast<std::size_t>(off + v)].push_back(off + u);
          adj[static_cast<std::size_t>(off + u)].push_back(off + v);
        }
      }
      std::vector<std::int8_t> x(total * n);
      for (auto& v : x) v = static_cast<std::int8_t>(rng());
      volatile std::int64_t sink = 0;
      const double layer = median_ms(cfg.repetitions, cfg.warmup, [&] { sink = sink + int8_graph_layer(adj, x, w)[0]; });
      for (auto d : cfg.digests) {
        OverheadRow r;
        r.size = n;
        r.digest = d;
        r.nodes = nodes;
        r.storage_bytes = hash_storage_bytes(n, n, d);
        r.storage_ratio = static_cast<double>(r.storage_bytes) / static_cast<double>(n * n);
        r.hash_ms = median_ms(cfg.repetitions, cfg.warmup, [&] { sink = sink + build_layer_ledger(w, d).rows; });
        r.layer_ms = layer;
        rows.push_back(r);
      }
    }
  }
  return rows;
}

inline void write_overhead_csv(std::span<const OverheadRow> rows, std::ostream& os) {
  os << "size,digest,nodes,storage_bytes,storage_ratio,hash_ms,layer_ms\n";
  for (const auto& r : rows) {
    os << r.size << ',' << r.digest << ',' << r.nodes << ',' << r.storage_bytes << ',' << fmt6(r.storage_ratio) << ','
       << fmt6(r.hash_ms) << ',' << fmt6(r.layer_ms) << '\n';
  }
}

}  // namespace crossfire
