#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "refeednet/augment.hpp"
#include "refeednet/corpus.hpp"
#include "refeednet/model.hpp"
#include "refeednet/synth.hpp"

namespace refeednet {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 10;
  double learning_rate = 0.05;
  std::uint64_t seed = 42;
  // Per-sample random horizontal reflection and translation of up to
  // max_shift pixels.
  bool augment = true;
  int max_shift = 1;
};

inline void validate(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
  if (cfg.batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate))
    throw Error(ErrorKind::InvalidConfig, "learning_rate must be > 0");
  if (cfg.max_shift < 0) throw Error(ErrorKind::InvalidConfig, "max_shift must be >= 0");
}

struct EpochStats {
  double train_loss = 0.0;
  std::optional<double> val_accuracy;
  std::size_t samples = 0;
  std::size_t batches = 0;
};

struct TrainResult {
  MicroCnn model;
  std::vector<EpochStats> history;
};

struct Evaluation {
  double accuracy = 0.0;
  std::vector<bool> correct;
  std::vector<int> predicted;

  std::size_t correct_count() const {
    return static_cast<std::size_t>(std::count(correct.begin(), correct.end(), true));
  }
};

inline double accuracy_of(const std::vector<bool>& correct) {
  if (correct.empty()) throw Error(ErrorKind::EmptyDataset, "accuracy of an empty set");
  return static_cast<double>(std::count(correct.begin(), correct.end(), true)) / static_cast<double>(correct.size());
}

/// Argmax accuracy (ties to the lowest class index); per-image results keep
/// the input order.
inline Evaluation evaluate(const MicroCnn& m, const Dataset& test) {
  if (test.empty()) throw Error(ErrorKind::EmptyDataset, "evaluation set is empty");
  Evaluation ev;
  ev.correct.reserve(test.size());
  ev.predicted.reserve(test.size());
  for (const auto& item : test) {
    const int p = argmax(forward(m, item.pixels));
    ev.predicted.push_back(p);
    ev.correct.push_back(p == index_of(item.label));
  }
  ev.accuracy = accuracy_of(ev.correct);
  return ev;
}

/// Mini-batch SGD for exactly cfg.epochs epochs. Sample order and
/// augmentation are drawn from cfg.seed alone.
inline TrainResult train(MicroCnn model, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
  validate(cfg);
  if (train_set.empty()) throw Error(ErrorKind::EmptyDataset, "training set is empty");
  TrainResult result;
  std::vector<std::size_t> order(train_set.size());
  std::vector<LabeledImage> batch;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng(mix_seed(cfg.seed, 0xe90c0000ULL + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span(order));

    EpochStats stats;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) {
        const LabeledImage& src = train_set[order[k]];
        if (!cfg.augment) {
          batch.push_back(src);
          continue;
        }
        Tensor px = rng.uniform() < 0.5 ? reflect_h(src.pixels) : src.pixels;
        const int dx = cfg.max_shift ? rng.between(-cfg.max_shift, cfg.max_shift) : 0;
        const int dy = cfg.max_shift ? rng.between(-cfg.max_shift, cfg.max_shift) : 0;
        if (dx || dy) px = translate(px, dx, dy);
        batch.push_back({std::move(px), src.label, src.source_id});
      }
      const auto lg = loss_and_gradients(model, batch);
      if (!std::isfinite(lg.loss))
        throw Error(ErrorKind::InvalidConfig, "training diverged (non-finite loss); lower the learning rate");
      apply_sgd(model, lg.gradients, cfg.learning_rate);
      loss_sum += lg.loss * static_cast<double>(batch.size());
      stats.samples += batch.size();
      ++stats.batches;
    }
    stats.train_loss = loss_sum / static_cast<double>(stats.samples);
    if (!val_set.empty()) stats.val_accuracy = evaluate(model, val_set).accuracy;
    result.history.push_back(stats);
  }
  result.model = std::move(model);
  return result;
}

struct PretrainConfig {
  std::uint64_t seed = 42;
  std::size_t per_class = 150;
  Architecture architecture = default_architecture();
  TrainConfig train{15, 10, 0.1, 42, true, 1};
};

struct PretrainResult {
  MicroCnn model;
  double heldout_accuracy = 0.0;
  std::vector<EpochStats> history;
};

/// Trains the whole network (nothing frozen) on the synthetic source domain.
/// The returned base stands in for a network pre-trained on a large corpus.
inline PretrainResult pretrain_source(const PretrainConfig& cfg) {
  const std::uint64_t family = mix_seed(cfg.seed, 0x50c5ce);
  const Dataset data = synth_dataset(cfg.per_class, family, Domain::Source);
  const Dataset heldout = synth_dataset(std::max<std::size_t>(cfg.per_class / 4, 1), mix_seed(family, 1), Domain::Source);
  MicroCnn model = unfreeze_all(build_model(cfg.architecture, cfg.seed));
  TrainConfig tc = cfg.train;
  tc.seed = mix_seed(cfg.seed, 0x7a1);
  auto tr = train(std::move(model), data, Dataset{}, tc);
  PretrainResult out;
  out.heldout_accuracy = evaluate(tr.model, heldout).accuracy;
  out.model = std::move(tr.model);
  out.history = std::move(tr.history);
  return out;
}

/// Transfer learning setup: freeze the base and attach a fresh random head.
inline MicroCnn prepare_transfer(const MicroCnn& pretrained, std::uint64_t seed) {
  return freeze_base(reinit_head(pretrained, seed));
}

}  // namespace refeednet
