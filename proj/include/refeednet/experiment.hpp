#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refeednet/checkpoint.hpp"
#include "refeednet/persist.hpp"

namespace refeednet {

enum class ExperimentGroup { G1, G2, G3Analog };

inline const char* to_string(ExperimentGroup g) {
  switch (g) {
    case ExperimentGroup::G1: return "g1";
    case ExperimentGroup::G2: return "g2";
    case ExperimentGroup::G3Analog: return "g3-analog";
  }
  return "?";
}

inline std::optional<ExperimentGroup> parse_group(std::string_view s) {
  if (s == "g1" || s == "g1-analog") return ExperimentGroup::G1;
  if (s == "g2" || s == "g2-analog") return ExperimentGroup::G2;
  if (s == "g3" || s == "g3-analog") return ExperimentGroup::G3Analog;
  return std::nullopt;
}

struct ExperimentConfig {
  ExperimentGroup group = ExperimentGroup::G1;
  std::uint64_t seed = 42;
  double q = 0.7;
  int epochs = 10;
  std::size_t batch_size = 10;
  double learning_rate = 0.05;
  double online_learning_rate = 0.1;
  // Target corpus: 4 x 100 = 400 images.
  std::size_t target_per_class = 100;
  // Shifted test and retest sets: 4 x 48 = 192 images each.
  std::size_t shifted_per_class = 48;
  PretrainConfig pretrain;
};

inline const std::vector<double>& g1_fractions() {
  static const std::vector<double> f{0.9, 0.8, 0.75, 0.7, 0.6, 0.5};
  return f;
}

inline const std::vector<double>& cross_fractions() {
  static const std::vector<double> f{0.9, 0.75, 0.5};
  return f;
}

struct ExperimentData {
  MicroCnn pretrained;
  double pretrain_accuracy = 0.0;
  Dataset target;
  Dataset shifted_test;
  Dataset shifted_retest;
};

inline Architecture architecture_for(ExperimentGroup g) {
  return g == ExperimentGroup::G3Analog ? deep_architecture() : default_architecture();
}

inline ExperimentData prepare_experiment(const ExperimentConfig& cfg) {
  ExperimentData d;
  PretrainConfig pc = cfg.pretrain;
  pc.seed = mix_seed(cfg.seed, 0x9e7a);
  pc.architecture = architecture_for(cfg.group);
  auto pr = pretrain_source(pc);
  d.pretrained = std::move(pr.model);
  d.pretrain_accuracy = pr.heldout_accuracy;
  d.target = synth_dataset(cfg.target_per_class, mix_seed(cfg.seed, 0x7a59), Domain::Target);
  if (cfg.group != ExperimentGroup::G1) {
    d.shifted_test = synth_dataset(cfg.shifted_per_class, mix_seed(cfg.seed, 0x7e57), Domain::Shifted);
    d.shifted_retest = synth_dataset(cfg.shifted_per_class, mix_seed(cfg.seed, 0x2e7e), Domain::Shifted);
  }
  return d;
}

inline TrainConfig experiment_train_config(const ExperimentConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.learning_rate = cfg.learning_rate;
  tc.seed = mix_seed(cfg.seed, 0x7c);
  return tc;
}

/// Split sweep on the target corpus: validation accuracy per training fraction.
inline nlohmann::json run_g1(const ExperimentConfig& cfg, const ExperimentData& d) {
  const TrainConfig tc = experiment_train_config(cfg);
  nlohmann::json rows = nlohmann::json::array();
  for (double f : g1_fractions()) {
    auto [tr, va] = split(d.target, {f, mix_seed(cfg.seed, 0x5b)});
    auto res = train(prepare_transfer(d.pretrained, mix_seed(cfg.seed, 0x4ead)), tr, va, tc);
    rows.push_back({{"train_fraction", f},
                    {"train_size", tr.size()},
                    {"val_size", va.size()},
                    {"val_accuracy", evaluate(res.model, va).accuracy}});
  }
  return rows;
}

/// Cross-domain rows (train on target, test on shifted) followed by the
/// reFeed row at a 0.75 split.
inline nlohmann::json run_cross(const ExperimentConfig& cfg, const ExperimentData& d) {
  const TrainConfig tc = experiment_train_config(cfg);
  nlohmann::json rows = nlohmann::json::array();
  const char* names[] = {"i", "ii", "iii"};
  std::size_t k = 0;
  for (double f : cross_fractions()) {
    auto [tr, va] = split(d.target, {f, mix_seed(cfg.seed, 0x0ff1)});
    auto res = train(prepare_transfer(d.pretrained, mix_seed(cfg.seed, 0x4ead)), tr, va, tc);
    rows.push_back({{"row", names[k++]},
                    {"train_fraction", f},
                    {"train_size", tr.size()},
                    {"refeed", false},
                    {"val_accuracy", evaluate(res.model, va).accuracy},
                    {"test_accuracy", evaluate(res.model, d.shifted_test).accuracy}});
  }

  Algorithm1Options opts;
  opts.offline_train_fraction = 0.75;
  opts.retrain.learning_rate = cfg.online_learning_rate;
  const auto r = algorithm1_execute(d.pretrained, d.target, d.shifted_test, d.shifted_retest, {cfg.q}, tc, opts);
  nlohmann::json row{{"row", "iv"},
                     {"train_fraction", 0.75},
                     {"train_size", r.offline_train_size},
                     {"refeed", true},
                     {"misclassified", r.misclassified},
                     {"stack_capacity", r.stack.capacity()},
                     {"stack_size", r.stack_size_after_sweep},
                     {"retrained", r.retrained},
                     {"retrain_train_size", r.retrain_train_size},
                     {"retrain_val_size", r.retrain_val_size}};
  row.update(metrics_json(r.metrics, 1));
  row.erase("rounds");
  rows.push_back(row);
  return rows;
}

/// Runs one experiment group. The output is a pure function of `cfg`.
inline nlohmann::json run_experiment(const ExperimentConfig& cfg) {
  validate(QoeConfig{cfg.q});
  const ExperimentData d = prepare_experiment(cfg);
  nlohmann::json out;
  out["group"] = to_string(cfg.group);
  out["seed"] = cfg.seed;
  out["q"] = cfg.q;
  out["epochs"] = cfg.epochs;
  out["batch_size"] = cfg.batch_size;
  out["architecture"] = architecture_json(d.pretrained)["layers"];
  out["pretrain_accuracy"] = d.pretrain_accuracy;
  out["target_size"] = d.target.size();
  if (cfg.group == ExperimentGroup::G1) {
    out["rows"] = run_g1(cfg, d);
  } else {
    out["test_size"] = d.shifted_test.size();
    out["retest_size"] = d.shifted_retest.size();
    out["rows"] = run_cross(cfg, d);
  }
  return out;
}

}  // namespace refeednet
