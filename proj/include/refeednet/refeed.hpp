#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "refeednet/train.hpp"

namespace refeednet {

/// Bounded LIFO of (image, true label) pairs awaiting retraining. Pushing
/// onto a full stack evicts the oldest (bottom) entry. Duplicates are kept.
class ReFeedStack {
 public:
  struct Entry {
    LabeledImage item;
    // Push ordinal: value of total_pushed() just before this entry was pushed.
    std::uint64_t pushed_at = 0;

    friend bool operator==(const Entry&, const Entry&) = default;
  };

  explicit ReFeedStack(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw Error(ErrorKind::InvalidConfig, "stack capacity must be >= 1");
  }

  /// Returns the number of entries evicted (0 or 1).
  std::size_t push(LabeledImage item) {
    std::size_t evicted = 0;
    if (entries_.size() == capacity_) {
      entries_.pop_front();
      ++evicted_;
      evicted = 1;
    }
    entries_.push_back({std::move(item), total_pushed_++});
    return evicted;
  }

  std::optional<LabeledImage> pop() {
    if (entries_.empty()) return std::nullopt;
    LabeledImage top = std::move(entries_.back().item);
    entries_.pop_back();
    return top;
  }

  const LabeledImage& top() const {
    if (entries_.empty()) throw Error(ErrorKind::NotFound, "top of an empty stack");
    return entries_.back().item;
  }

  void reset() { entries_.clear(); }

  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  std::size_t capacity() const noexcept { return capacity_; }
  std::uint64_t total_pushed() const noexcept { return total_pushed_; }
  std::uint64_t evicted() const noexcept { return evicted_; }

  // Bottom to top.
  const std::deque<Entry>& entries() const noexcept { return entries_; }

  // Contents bottom to top as a dataset.
  Dataset contents() const {
    Dataset d;
    for (const auto& e : entries_) d.add(e.item);
    return d;
  }

  // Rebuilds state from persisted entries (bottom to top).
  void restore(std::deque<Entry> entries, std::uint64_t total_pushed, std::uint64_t evicted) {
    while (entries.size() > capacity_) entries.pop_front();
    entries_ = std::move(entries);
    total_pushed_ = total_pushed;
    evicted_ = evicted;
  }

 private:
  std::size_t capacity_;
  std::deque<Entry> entries_;
  std::uint64_t total_pushed_ = 0;
  std::uint64_t evicted_ = 0;
};

/// Default stack capacity: ceil(10% of the offline training corpus).
inline std::size_t default_stack_capacity(std::size_t offline_size) {
  return std::max<std::size_t>(1, (offline_size + 9) / 10);
}

struct QoeConfig {
  double q = 0.7;
};

inline void validate(const QoeConfig& qoe) {
  if (!(qoe.q >= 0.0 && qoe.q <= 1.0)) throw Error(ErrorKind::InvalidConfig, "QoE threshold must lie in [0,1]");
}

/// Mean prediction accuracy meets the QoE threshold (P >= Q).
inline bool qoe_satisfied(double accuracy, double q) {
  if (!(accuracy >= 0.0 && accuracy <= 1.0)) throw Error(ErrorKind::Range, "accuracy outside [0,1]");
  return accuracy >= q;
}

inline bool qoe_satisfied(const std::vector<bool>& per_image_correct, double q) {
  return qoe_satisfied(accuracy_of(per_image_correct), q);
}

/// Absolute accuracy improvement |pf - p0|. Scale-agnostic: fractions in,
/// fraction out; percentages in, percentage points out.
inline double gain_factor(double p0, double pf) { return std::fabs(pf - p0); }

/// Multiplicative improvement pf / p0.
inline double gain(double p0, double pf) {
  if (!(p0 > 0.0)) throw Error(ErrorKind::UndefinedGain, "gain is undefined for an initial accuracy of 0");
  return pf / p0;
}

struct GainMetrics {
  double p0 = 0.0;
  std::optional<double> pf;
  std::optional<double> r;
  std::optional<double> gain;
  double q = 0.7;

  friend bool operator==(const GainMetrics&, const GainMetrics&) = default;
};

inline GainMetrics make_metrics(double p0, std::optional<double> pf, double q) {
  GainMetrics m;
  m.p0 = p0;
  m.q = q;
  if (pf) {
    m.pf = pf;
    m.r = gain_factor(p0, *pf);
    m.gain = gain(p0, *pf);
  }
  return m;
}

/// gain * p0 - (r + p0). Zero when pf >= p0; -2r after a regression, since
/// r takes the absolute difference.
inline double relationship_residual(const GainMetrics& m) {
  if (!m.pf) throw Error(ErrorKind::InvalidConfig, "relationship residual needs a final accuracy");
  const double R = gain(m.p0, *m.pf);
  const double r = gain_factor(m.p0, *m.pf);
  return R * m.p0 - (r + m.p0);
}

/// Throws a protocol error when any source_id appears in both sets.
inline void require_disjoint(const Dataset& a, const Dataset& b, const char* what) {
  std::set<std::string> ids;
  for (const auto& it : a) ids.insert(it.source_id);
  for (const auto& it : b)
    if (ids.count(it.source_id))
      throw Error(ErrorKind::Protocol, std::string(what) + " shares image '" + it.source_id + "'");
}

/// Stratified split that falls back to "everything trains" when the set is
/// too small for both sides to be non-empty.
inline std::pair<Dataset, Dataset> split_or_all(const Dataset& d, const SplitSpec& spec) {
  if (d.size() < 2) return {d, Dataset{}};
  try {
    return split(d, spec);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateSplit) throw;
    return {d, Dataset{}};
  }
}

struct RetrainOptions {
  double train_fraction = 0.75;
  // Online phase trains on the stack alone unless this is set.
  bool mix_original = false;
  // Falls back to the offline learning rate when unset.
  std::optional<double> learning_rate = 0.1;
};

struct RetrainOutcome {
  MicroCnn model;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  std::vector<EpochStats> history;
};

/// Online phase: fine-tunes the (non-frozen) head on the stack contents split
/// train/validation, without touching the stack.
inline RetrainOutcome retrain_from_stack(const MicroCnn& model, const ReFeedStack& stack, const TrainConfig& cfg,
                                         const RetrainOptions& opts, const Dataset& original = {}) {
  auto [tr, va] = split_or_all(stack.contents(), {opts.train_fraction, mix_seed(cfg.seed, 0x0a1e)});
  RetrainOutcome out;
  out.train_size = tr.size();
  out.val_size = va.size();
  if (opts.mix_original)
    for (const auto& it : original) tr.add(it);
  TrainConfig online = cfg;
  online.seed = mix_seed(cfg.seed, 0x0b11e);
  if (opts.learning_rate) online.learning_rate = *opts.learning_rate;
  auto res = train(model, tr, va, online);
  out.model = std::move(res.model);
  out.history = std::move(res.history);
  return out;
}

struct Algorithm1Options {
  double offline_train_fraction = 0.75;
  // Defaults to default_stack_capacity(|offline_train|).
  std::optional<std::size_t> capacity;
  // Replace the incoming head with a fresh random one before offline training.
  bool fresh_head = true;
  RetrainOptions retrain;
};

struct Algorithm1Result {
  MicroCnn model;
  GainMetrics metrics;
  ReFeedStack stack{1};
  std::vector<EpochStats> offline_history;
  std::vector<EpochStats> online_history;
  std::size_t offline_train_size = 0;
  std::size_t misclassified = 0;
  std::size_t stack_size_after_sweep = 0;
  std::size_t retrain_train_size = 0;
  std::size_t retrain_val_size = 0;
  bool retrained = false;
};

/// Offline transfer training, a validation sweep that pushes every
/// misclassified test image onto the stack, and one online retraining round
/// from the stack when the initial accuracy falls below the QoE threshold.
/// The final accuracy is measured on `retest`, which must be disjoint from
/// `test`.
inline Algorithm1Result algorithm1_execute(const MicroCnn& model, const Dataset& offline_train, const Dataset& test,
                                           const Dataset& retest, const QoeConfig& qoe, const TrainConfig& cfg,
                                           const Algorithm1Options& opts = {}) {
  validate(qoe);
  validate(cfg);
  if (offline_train.empty() || test.empty() || retest.empty())
    throw Error(ErrorKind::EmptyDataset, "offline, test and retest sets must be non-empty");
  require_disjoint(test, retest, "retest set");

  Algorithm1Result out;
  out.stack = ReFeedStack(opts.capacity.value_or(default_stack_capacity(offline_train.size())));

  // Offline training of the head on top of the frozen base.
  MicroCnn m = freeze_base(opts.fresh_head ? reinit_head(model, mix_seed(cfg.seed, 0x4ead)) : model);
  auto [tr, va] = split_or_all(offline_train, {opts.offline_train_fraction, mix_seed(cfg.seed, 0x0ff1)});
  out.offline_train_size = tr.size();
  auto offline = train(std::move(m), tr, va, cfg);
  m = std::move(offline.model);
  out.offline_history = std::move(offline.history);

  // Validation sweep.
  const Evaluation sweep = evaluate(m, test);
  for (std::size_t i = 0; i < test.size(); ++i)
    if (!sweep.correct[i]) {
      out.stack.push(test[i]);
      ++out.misclassified;
    }
  out.stack_size_after_sweep = out.stack.size();
  const double p0 = sweep.accuracy;

  if (qoe_satisfied(p0, qoe.q) || out.stack.empty()) {
    out.metrics = make_metrics(p0, std::nullopt, qoe.q);
    out.model = std::move(m);
    return out;
  }

  // Online retraining from the stack.
  auto online = retrain_from_stack(m, out.stack, cfg, opts.retrain, tr);
  out.retrain_train_size = online.train_size;
  out.retrain_val_size = online.val_size;
  out.online_history = std::move(online.history);
  out.model = std::move(online.model);
  out.retrained = true;
  const double pf = evaluate(out.model, retest).accuracy;
  out.stack.reset();
  out.metrics = make_metrics(p0, pf, qoe.q);
  return out;
}

}  // namespace refeednet
