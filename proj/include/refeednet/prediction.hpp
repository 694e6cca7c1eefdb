#pragma once

#include <unistd.h>

#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "refeednet/pnm.hpp"
#include "refeednet/refeed.hpp"

namespace refeednet {

enum class ReviewStatus { Unreviewed, Confirmed, Corrected };

inline const char* to_string(ReviewStatus s) {
  switch (s) {
    case ReviewStatus::Unreviewed: return "unreviewed";
    case ReviewStatus::Confirmed: return "confirmed";
    case ReviewStatus::Corrected: return "corrected";
  }
  return "?";
}

inline std::optional<ReviewStatus> parse_review_status(std::string_view s) {
  for (ReviewStatus r : {ReviewStatus::Unreviewed, ReviewStatus::Confirmed, ReviewStatus::Corrected})
    if (s == to_string(r)) return r;
  return std::nullopt;
}

struct PredictionRecord {
  std::uint64_t id = 0;
  std::string image_ref;
  TrafficClass predicted = TrafficClass::Empty;
  std::array<double, kClassCount> probabilities{};
  std::int64_t created_at = 0;  // milliseconds since the Unix epoch
  ReviewStatus review = ReviewStatus::Unreviewed;
  std::optional<TrafficClass> corrected_label;

  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

inline nlohmann::json to_json(const PredictionRecord& r) {
  return {{"id", r.id},
          {"image_ref", r.image_ref},
          {"predicted", to_string(r.predicted)},
          {"probabilities", r.probabilities},
          {"created_at", r.created_at},
          {"review", to_string(r.review)},
          {"corrected_label", r.corrected_label ? nlohmann::json(to_string(*r.corrected_label)) : nlohmann::json()}};
}

inline TrafficClass class_from_json(const nlohmann::json& j) {
  const auto c = parse_class(j.get<std::string>());
  if (!c) throw Error(ErrorKind::Validation, "unknown traffic class " + j.dump());
  return *c;
}

inline PredictionRecord record_from_json(const nlohmann::json& j) {
  PredictionRecord r;
  r.id = j.at("id").get<std::uint64_t>();
  r.image_ref = j.at("image_ref").get<std::string>();
  r.predicted = class_from_json(j.at("predicted"));
  r.probabilities = j.at("probabilities").get<std::array<double, kClassCount>>();
  r.created_at = j.at("created_at").get<std::int64_t>();
  const auto st = parse_review_status(j.at("review").get<std::string>());
  if (!st) throw Error(ErrorKind::Validation, "unknown review status");
  r.review = *st;
  if (!j.at("corrected_label").is_null()) r.corrected_label = class_from_json(j.at("corrected_label"));
  return r;
}

struct Verdict {
  ReviewStatus status = ReviewStatus::Confirmed;
  std::optional<TrafficClass> label;

  static Verdict confirmed() { return {ReviewStatus::Confirmed, std::nullopt}; }
  static Verdict corrected(TrafficClass c) { return {ReviewStatus::Corrected, c}; }
};

inline std::int64_t now_millis() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

/// Append-only log of prediction records with their frames.
///
/// When opened on a directory, every state change is appended to
/// `records.jsonl` as the full updated record (the last line for an id wins
/// on replay) and frames are kept as `images/<id>.pgm|ppm`. Appends are
/// flushed and fsync'd before the call returns.
class RecordStore {
 public:
  using Clock = std::function<std::int64_t()>;

  RecordStore() : clock_(now_millis) {}
  explicit RecordStore(Clock clock) : clock_(std::move(clock)) {}

  explicit RecordStore(std::filesystem::path dir, Clock clock = now_millis)
      : dir_(std::move(dir)), clock_(std::move(clock)) {
    std::error_code ec;
    std::filesystem::create_directories(*dir_ / "images", ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + (*dir_ / "images").string() + ": " + ec.message());
    replay();
  }

  PredictionRecord create(const Tensor& frame, TrafficClass predicted, const std::array<double, kClassCount>& probs,
                          std::string image_ref = {}) {
    std::lock_guard lock(mu_);
    PredictionRecord r;
    r.id = next_id_++;
    r.predicted = predicted;
    r.probabilities = probs;
    r.created_at = clock_();
    if (dir_) {
      char name[40];
      std::snprintf(name, sizeof name, "images/%08llu.%s", static_cast<unsigned long long>(r.id),
                    frame.shape()[2] == 1 ? "pgm" : "ppm");
      r.image_ref = name;
      write_pnm(*dir_ / r.image_ref, frame);
      frames_[r.id] = read_pnm(*dir_ / r.image_ref);
    } else {
      r.image_ref = image_ref.empty() ? "frame:" + std::to_string(r.id) : std::move(image_ref);
      frames_[r.id] = frame;
    }
    index_[r.id] = records_.size();
    records_.push_back(r);
    append_log(r);
    return r;
  }

  /// Applies a review verdict. Returns the record and whether its status
  /// changed; re-submitting the verdict already applied is a no-op.
  std::pair<PredictionRecord, bool> review(std::uint64_t id, const Verdict& v) {
    std::lock_guard lock(mu_);
    PredictionRecord& r = find(id);
    if (v.status == ReviewStatus::Unreviewed) throw Error(ErrorKind::Validation, "verdict must be confirmed or corrected");
    if (v.status == ReviewStatus::Corrected) {
      if (!v.label) throw Error(ErrorKind::Validation, "a correction needs a label");
      if (*v.label == r.predicted)
        throw Error(ErrorKind::Validation, "corrected label equals the predicted label");
    }
    if (r.review != ReviewStatus::Unreviewed) {
      const bool same = r.review == v.status && (v.status == ReviewStatus::Confirmed || r.corrected_label == v.label);
      if (same) return {r, false};
      throw Error(ErrorKind::Conflict, "record " + std::to_string(id) + " already " + to_string(r.review));
    }
    r.review = v.status;
    if (v.status == ReviewStatus::Corrected) r.corrected_label = v.label;
    append_log(r);
    return {r, true};
  }

  PredictionRecord get(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    return const_cast<RecordStore*>(this)->find(id);
  }

  Tensor frame(std::uint64_t id) const {
    std::lock_guard lock(mu_);
    auto it = frames_.find(id);
    if (it == frames_.end()) throw Error(ErrorKind::NotFound, "no frame for record " + std::to_string(id));
    return it->second;
  }

  /// Records in creation order, optionally filtered by status.
  std::vector<PredictionRecord> list(std::optional<ReviewStatus> status = std::nullopt,
                                     std::size_t limit = static_cast<std::size_t>(-1)) const {
    std::lock_guard lock(mu_);
    std::vector<PredictionRecord> out;
    for (const auto& r : records_) {
      if (out.size() >= limit) break;
      if (!status || r.review == *status) out.push_back(r);
    }
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return records_.size();
  }

  std::size_t count(ReviewStatus s) const {
    std::lock_guard lock(mu_);
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [s](const auto& r) { return r.review == s; }));
  }

  const std::optional<std::filesystem::path>& directory() const { return dir_; }

 private:
  PredictionRecord& find(std::uint64_t id) {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error(ErrorKind::NotFound, "no record with id " + std::to_string(id));
    return records_[it->second];
  }

  void append_log(const PredictionRecord& r) {
    if (!dir_) return;
    const auto path = *dir_ / "records.jsonl";
    FILE* f = std::fopen(path.c_str(), "ab");
    if (!f) throw Error(ErrorKind::Io, "cannot append to " + path.string());
    const std::string line = to_json(r).dump() + "\n";
    const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 &&
                    ::fsync(fileno(f)) == 0;
    std::fclose(f);
    if (!ok) throw Error(ErrorKind::Io, "failed writing " + path.string());
  }

  void replay() {
    const auto path = *dir_ / "records.jsonl";
    std::ifstream in(path);
    if (!in) return;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      PredictionRecord r;
      try {
        r = record_from_json(nlohmann::json::parse(line));
      } catch (const std::exception& e) {
        throw Error(ErrorKind::Format, path.string() + " line " + std::to_string(lineno) + ": " + e.what());
      }
      auto it = index_.find(r.id);
      if (it == index_.end()) {
        if (r.id < next_id_)
          throw Error(ErrorKind::Format, path.string() + " line " + std::to_string(lineno) + ": ids out of order");
        index_[r.id] = records_.size();
        records_.push_back(r);
        next_id_ = r.id + 1;
        frames_[r.id] = read_pnm(*dir_ / r.image_ref);
      } else {
        records_[it->second] = r;
      }
    }
  }

  std::optional<std::filesystem::path> dir_;
  Clock clock_;
  mutable std::mutex mu_;
  std::vector<PredictionRecord> records_;
  std::map<std::uint64_t, std::size_t> index_;
  std::map<std::uint64_t, Tensor> frames_;
  std::uint64_t next_id_ = 1;
};

/// Classifies `frame` and appends an unreviewed record.
inline PredictionRecord predict_and_store(const MicroCnn& model, RecordStore& store, const Tensor& frame,
                                          std::string image_ref = {}) {
  const auto probs = forward(model, frame);
  std::array<double, kClassCount> p{};
  std::copy(probs.begin(), probs.end(), p.begin());
  return store.create(frame, class_from_index(argmax(probs)), p, std::move(image_ref));
}

struct CorrectionOutcome {
  PredictionRecord record;
  bool changed = false;
  bool pushed = false;
};

/// Reviews a record; a new correction pushes (frame, corrected label) onto
/// the prediction-side stack.
inline CorrectionOutcome apply_correction(RecordStore& store, ReFeedStack& prediction_stack, std::uint64_t id,
                                          const Verdict& verdict) {
  auto [rec, changed] = store.review(id, verdict);
  CorrectionOutcome out{rec, changed, false};
  if (changed && rec.review == ReviewStatus::Corrected) {
    prediction_stack.push({store.frame(id), *rec.corrected_label, rec.image_ref});
    out.pushed = true;
  }
  return out;
}

struct TransferReport {
  std::size_t moved = 0;
  std::size_t evicted = 0;
};

/// Moves every prediction-side entry onto the training stack, bottom first,
/// so the relative LIFO order is preserved. Overflow evicts the destination's
/// oldest entries.
inline TransferReport transfer_corrections(ReFeedStack& prediction_stack, ReFeedStack& training_stack) {
  TransferReport rep;
  for (const auto& e : prediction_stack.entries()) {
    rep.evicted += training_stack.push(e.item);
    ++rep.moved;
  }
  prediction_stack.reset();
  return rep;
}

struct CycleOptions {
  // Retrain/revalidate rounds before giving up on reaching the QoE threshold.
  int max_rounds = 1;
  RetrainOptions retrain;
};

struct CycleResult {
  MicroCnn model;
  std::optional<GainMetrics> metrics;
  int rounds = 0;
  bool deployed = false;
  std::string status;
};

/// One continuous-learning cycle: fine-tune the head on the training stack,
/// re-validating on `retest` after each round until the QoE threshold is met
/// or max_rounds is reached. The new model is kept only if it beats the
/// incoming one on `retest` (ties keep the incoming model). The stack is
/// emptied whenever retraining ran.
inline CycleResult continuous_cycle(const MicroCnn& model, ReFeedStack& training_stack, const Dataset& retest,
                                    const QoeConfig& qoe, const TrainConfig& cfg, const CycleOptions& opts = {}) {
  validate(qoe);
  validate(cfg);
  CycleResult out;
  out.model = model;
  if (training_stack.empty()) {
    out.status = "stack empty";
    return out;
  }
  if (retest.empty()) throw Error(ErrorKind::EmptyDataset, "retest set is empty");
  if (opts.max_rounds < 1) throw Error(ErrorKind::InvalidConfig, "max_rounds must be >= 1");
  require_disjoint(training_stack.contents(), retest, "retest set");

  const double p0 = evaluate(model, retest).accuracy;
  MicroCnn candidate = freeze_base(model);
  double pf = p0;
  for (int round = 1; round <= opts.max_rounds; ++round) {
    TrainConfig rc = cfg;
    rc.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(round));
    candidate = retrain_from_stack(candidate, training_stack, rc, opts.retrain).model;
    pf = evaluate(candidate, retest).accuracy;
    out.rounds = round;
    if (qoe_satisfied(pf, qoe.q)) break;
  }
  training_stack.reset();
  out.metrics = make_metrics(p0, pf, qoe.q);
  out.deployed = pf > p0;
  if (out.deployed) out.model = std::move(candidate);
  out.status = out.deployed ? "deployed" : "rolled back";
  return out;
}

}  // namespace refeednet
