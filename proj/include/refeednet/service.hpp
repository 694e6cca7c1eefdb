#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "httplib.h"
#include "refeednet/checkpoint.hpp"
#include "refeednet/persist.hpp"
#include "refeednet/prediction.hpp"

namespace refeednet {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path data_dir;
  double q = 0.7;
  // Corrections per automatic continuous cycle.
  std::optional<int> auto_cycle_every;
  int max_rounds = 5;
  std::size_t stack_capacity = 40;
  // When set, every endpoint requires "Authorization: Bearer <token>".
  std::optional<std::string> token;
  TrainConfig train;
};

inline void validate(const ServiceConfig& c) {
  if (c.port < 0 || c.port > 65535) throw Error(ErrorKind::InvalidConfig, "port outside 0..65535");
  if (!(c.q >= 0.0 && c.q <= 1.0)) throw Error(ErrorKind::InvalidConfig, "q must lie in [0,1]");
  if (c.auto_cycle_every && *c.auto_cycle_every < 1) throw Error(ErrorKind::InvalidConfig, "auto_cycle_every must be >= 1");
  if (c.max_rounds < 1) throw Error(ErrorKind::InvalidConfig, "max_rounds must be >= 1");
  if (c.stack_capacity < 1) throw Error(ErrorKind::InvalidConfig, "stack_capacity must be >= 1");
  if (c.data_dir.empty()) throw Error(ErrorKind::InvalidConfig, "data directory not set");
}

/// Files inside the data directory.
struct DataLayout {
  std::filesystem::path root;
  std::filesystem::path checkpoint() const { return root / "model.rfn"; }
  std::filesystem::path model_meta() const { return root / "model.json"; }
  std::filesystem::path prediction_stack() const { return root / "prediction_stack.jsonl"; }
  std::filesystem::path training_stack() const { return root / "training_stack.jsonl"; }
  std::filesystem::path metrics_log() const { return root / "metrics.jsonl"; }
  std::filesystem::path retest_dir() const { return root / "retest"; }
  std::filesystem::path ui_dir() const { return root / "ui"; }
};

struct BootstrapReport {
  bool wrote_model = false;
  bool wrote_retest = false;
  double pretrain_accuracy = 0.0;
  double transfer_accuracy = 0.0;
};

/// Fills in a missing checkpoint (source pretraining plus transfer onto a
/// synthetic target corpus) and a missing retest corpus (shifted domain),
/// leaving existing files alone.
inline BootstrapReport bootstrap_data_dir(const std::filesystem::path& dir, std::uint64_t seed,
                                          std::size_t retest_per_class = 48) {
  const DataLayout layout{dir};
  BootstrapReport rep;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create data directory " + dir.string());
  if (!std::filesystem::exists(layout.checkpoint(), ec)) {
    PretrainConfig pc;
    pc.seed = mix_seed(seed, 0x9e7a);
    auto pr = pretrain_source(pc);
    rep.pretrain_accuracy = pr.heldout_accuracy;
    const Dataset target = synth_dataset(100, mix_seed(seed, 0x7a59), Domain::Target);
    auto [tr, va] = split(target, {0.75, mix_seed(seed, 0x0ff1)});
    TrainConfig tc;
    tc.seed = mix_seed(seed, 0x7c);
    auto res = train(prepare_transfer(pr.model, mix_seed(seed, 0x4ead)), tr, va, tc);
    rep.transfer_accuracy = evaluate(res.model, va).accuracy;
    save_checkpoint_file(res.model, layout.checkpoint());
    rep.wrote_model = true;
  }
  if (!std::filesystem::exists(layout.retest_dir(), ec)) {
    save_dir(synth_dataset(retest_per_class, mix_seed(seed, 0x2e7e), Domain::Shifted), layout.retest_dir());
    rep.wrote_retest = true;
  }
  return rep;
}

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

inline int http_status_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Conflict: return 409;
    case ErrorKind::Validation:
    case ErrorKind::InputShape:
    case ErrorKind::Format:
    case ErrorKind::Range:
      return 422;
    default:
      return 500;
  }
}

inline ApiResponse error_response(int status, const std::string& reason) {
  return {status, {{"error", reason}}};
}

/// Prediction/review/retraining state behind the HTTP endpoints. Every
/// mutation is persisted under the data directory before the call returns,
/// so a killed process restarts into the same records, stacks and model.
class ReviewService {
 public:
  explicit ReviewService(ServiceConfig cfg)
      : cfg_(std::move(cfg)), layout_{cfg_.data_dir},
        prediction_stack_(cfg_.stack_capacity), training_stack_(cfg_.stack_capacity) {
    validate(cfg_);
    std::error_code ec;
    std::filesystem::create_directories(layout_.root, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create data directory " + layout_.root.string());
    load_state();
  }

  ~ReviewService() {
    if (worker_.joinable()) worker_.join();
  }

  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  const ServiceConfig& config() const { return cfg_; }

  std::shared_ptr<const MicroCnn> model() const {
    std::lock_guard lock(model_mu_);
    return model_;
  }

  ApiResponse list_records(std::optional<std::string> status, std::optional<std::size_t> limit) const {
    std::optional<ReviewStatus> st;
    if (status) {
      st = parse_review_status(*status);
      if (!st) return error_response(422, "unknown status '" + *status + "'");
    }
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : records_->list(st, limit.value_or(static_cast<std::size_t>(-1)))) arr.push_back(to_json(r));
    return {200, arr};
  }

  ApiResponse review(std::uint64_t id, const nlohmann::json& body) {
    if (!body.is_object() || !body.contains("verdict") || !body["verdict"].is_string())
      return error_response(422, "body must be {verdict, label?}");
    Verdict v;
    const std::string verdict = body["verdict"].get<std::string>();
    if (verdict == "confirmed") {
      v = Verdict::confirmed();
    } else if (verdict == "corrected") {
      if (!body.contains("label") || !body["label"].is_string()) return error_response(422, "corrected verdict needs a label");
      const auto c = parse_class(body["label"].get<std::string>());
      if (!c) return error_response(422, "unknown label '" + body["label"].get<std::string>() + "'");
      v = Verdict::corrected(*c);
    } else {
      return error_response(422, "verdict must be 'confirmed' or 'corrected'");
    }

    bool cycle_started = false;
    CorrectionOutcome out;
    {
      std::lock_guard lock(state_mu_);
      out = apply_correction(*records_, prediction_stack_, id, v);
      if (out.pushed) {
        save_stack(prediction_stack_, layout_.prediction_stack());
        ++corrections_since_cycle_;
      }
      if (out.pushed && cfg_.auto_cycle_every && corrections_since_cycle_ >= *cfg_.auto_cycle_every) {
        cycle_started = !start_cycle_locked();
      }
    }
    nlohmann::json body_out = to_json(out.record);
    body_out["cycle_started"] = cycle_started;
    return {200, body_out};
  }

  ApiResponse retrain() {
    std::lock_guard lock(state_mu_);
    if (auto reason = start_cycle_locked()) return error_response(409, *reason);
    return {202, {{"status", "started"}, {"cycle", cycles_started_}}};
  }

  ApiResponse metrics() const {
    std::lock_guard lock(state_mu_);
    nlohmann::json j = metrics_json(current_, cfg_.q, rounds_);
    j["busy"] = busy_.load();
    j["cycles"] = history_.size();
    j["history"] = history_;
    j["prediction_stack"] = prediction_stack_.size();
    j["training_stack"] = training_stack_.size();
    return {200, j};
  }

  ApiResponse model_info() const {
    auto m = model();
    std::lock_guard lock(state_mu_);
    return {200,
            {{"architecture", architecture_json(*m)},
             {"checksum", model_checksum(*m)},
             {"deployed_at", deployed_at_}}};
  }

  ApiResponse predict(std::span<const std::uint8_t> image_bytes) {
    Tensor frame;
    auto m = model();
    try {
      frame = resize_nearest(decode_pnm(image_bytes), m->input_shape);
    } catch (const Error& e) {
      return error_response(422, e.what());
    }
    return {200, to_json(predict_and_store(*m, *records_, frame))};
  }

  /// Raw pixmap bytes for an image stored beside the record log.
  std::optional<std::vector<std::uint8_t>> image_bytes(const std::string& name) const {
    static const std::regex safe("[A-Za-z0-9._-]+");
    if (!std::regex_match(name, safe)) return std::nullopt;
    const auto path = layout_.root / "images" / name;
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) return std::nullopt;
    return read_file_bytes(path);
  }

  bool busy() const { return busy_.load(); }

  void wait_idle() {
    std::unique_lock lock(worker_mu_);
    if (worker_.joinable()) worker_.join();
  }

  std::size_t prediction_stack_size() const {
    std::lock_guard lock(state_mu_);
    return prediction_stack_.size();
  }

  std::size_t training_stack_size() const {
    std::lock_guard lock(state_mu_);
    return training_stack_.size();
  }

  ReFeedStack prediction_stack() const {
    std::lock_guard lock(state_mu_);
    return prediction_stack_;
  }

  const RecordStore& records() const { return *records_; }

 private:
  void load_state() {
    try {
      model_ = std::make_shared<const MicroCnn>(load_checkpoint_file(layout_.checkpoint()));
    } catch (const Error& e) {
      throw Error(e.kind(), "cannot load checkpoint " + layout_.checkpoint().string() + ": " + e.what());
    }
    records_ = std::make_unique<RecordStore>(layout_.root);
    const ImageResolver resolve = [this](const std::string& ref) { return read_pnm(layout_.root / ref); };
    prediction_stack_ = load_stack(layout_.prediction_stack(), cfg_.stack_capacity, resolve);
    training_stack_ = load_stack(layout_.training_stack(), cfg_.stack_capacity, resolve);

    std::ifstream meta(layout_.model_meta());
    if (meta) {
      try {
        deployed_at_ = nlohmann::json::parse(meta).at("deployed_at");
      } catch (const std::exception& e) {
        throw Error(ErrorKind::Format, "corrupt " + layout_.model_meta().string() + ": " + e.what());
      }
    }
    std::ifstream hist(layout_.metrics_log());
    std::string line;
    while (hist && std::getline(hist, line)) {
      if (line.empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        rounds_ += j.at("rounds").get<int>();
        if (!j.at("p0").is_null()) {
          GainMetrics g;
          g.p0 = j.at("p0").get<double>();
          if (!j.at("pf").is_null()) g = make_metrics(g.p0, j.at("pf").get<double>(), j.at("q").get<double>());
          g.q = j.at("q").get<double>();
          current_ = g;
        }
        history_.push_back(std::move(j));
      } catch (const std::exception& e) {
        throw Error(ErrorKind::Format, "corrupt " + layout_.metrics_log().string() + ": " + e.what());
      }
    }
    cycles_started_ = history_.size();

    LoadReport rep;
    std::error_code ec;
    if (std::filesystem::is_directory(layout_.retest_dir(), ec)) retest_ = load_dir(layout_.retest_dir(), model_->input_shape, &rep);
  }

  // Starts a background cycle. Returns the refusal reason, or nullopt when
  // the cycle started. Caller holds state_mu_.
  std::optional<std::string> start_cycle_locked() {
    if (busy_.load()) return "busy";
    if (prediction_stack_.empty() && training_stack_.empty()) return "stack empty";
    if (retest_.empty()) return "no retest set";
    std::unique_lock wlock(worker_mu_, std::try_to_lock);
    if (!wlock.owns_lock()) return "busy";
    if (worker_.joinable()) worker_.join();

    transfer_corrections(prediction_stack_, training_stack_);
    save_stack(training_stack_, layout_.training_stack());
    save_stack(prediction_stack_, layout_.prediction_stack());
    corrections_since_cycle_ = 0;
    busy_ = true;
    const std::uint64_t cycle = ++cycles_started_;
    worker_ = std::thread([this, cycle, stack = training_stack_]() mutable { run_cycle(cycle, std::move(stack)); });
    return std::nullopt;
  }

  void run_cycle(std::uint64_t cycle, ReFeedStack stack) {
    CycleResult res;
    std::string failure;
    try {
      TrainConfig tc = cfg_.train;
      tc.seed = mix_seed(cfg_.train.seed, cycle);
      CycleOptions opts;
      opts.max_rounds = cfg_.max_rounds;
      res = continuous_cycle(*model(), stack, retest_, {cfg_.q}, tc, opts);
    } catch (const std::exception& e) {
      failure = e.what();
    }

    std::lock_guard lock(state_mu_);
    try {
      nlohmann::json entry = metrics_json(res.metrics, cfg_.q, res.rounds);
      entry["cycle"] = cycle;
      entry["status"] = failure.empty() ? res.status : "failed: " + failure;
      entry["deployed"] = res.deployed;
      if (failure.empty()) {
        if (res.deployed) {
          save_checkpoint_file(res.model, layout_.checkpoint());
          deployed_at_ = now_millis();
          write_file_atomic(layout_.model_meta(), nlohmann::json{{"deployed_at", deployed_at_}}.dump());
          std::lock_guard mlock(model_mu_);
          model_ = std::make_shared<const MicroCnn>(std::move(res.model));
        }
        training_stack_.reset();
        save_stack(training_stack_, layout_.training_stack());
        if (res.metrics) current_ = res.metrics;
        rounds_ += res.rounds;
      }
      append_history(entry);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "cycle %llu: failed to persist results: %s\n", static_cast<unsigned long long>(cycle), e.what());
    }
    busy_ = false;
  }

  void append_history(const nlohmann::json& entry) {
    history_.push_back(entry);
    std::ofstream out(layout_.metrics_log(), std::ios::app);
    out << entry.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorKind::Io, "cannot append to " + layout_.metrics_log().string());
  }

  ServiceConfig cfg_;
  DataLayout layout_;

  mutable std::mutex model_mu_;
  std::shared_ptr<const MicroCnn> model_;

  mutable std::mutex state_mu_;
  std::unique_ptr<RecordStore> records_;
  ReFeedStack prediction_stack_;
  ReFeedStack training_stack_;
  Dataset retest_;
  std::optional<GainMetrics> current_;
  int rounds_ = 0;
  nlohmann::json history_ = nlohmann::json::array();
  nlohmann::json deployed_at_;
  int corrections_since_cycle_ = 0;
  std::uint64_t cycles_started_ = 0;

  std::mutex worker_mu_;
  std::thread worker_;
  std::atomic<bool> busy_{false};
};

/// HTTP front end for ReviewService.
class HttpServer {
 public:
  explicit HttpServer(ReviewService& service) : service_(service) {
    // SO_REUSEADDR only: SO_REUSEPORT would let a second server share a busy port.
    server_.set_socket_options([](socket_t sock) {
      int yes = 1;
      ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char*>(&yes), sizeof yes);
    });
    routes();
  }

  ~HttpServer() { stop(); }

  /// Binds and starts serving on a background thread. Port 0 picks a free
  /// port. Throws Io when the address cannot be bound.
  int start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
      bound = server_.bind_to_any_port(host);
    } else if (!server_.bind_to_port(host, port)) {
      bound = -1;
    }
    if (bound < 0) throw Error(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  /// Serves on the calling thread until stop() is called.
  void run(const std::string& host, int port) {
    if (!server_.bind_to_port(host, port))
      throw Error(ErrorKind::Io, "cannot bind " + host + ":" + std::to_string(port) + " (port in use?)");
    server_.listen_after_bind();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  static void reply(httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  template <typename F>
  auto guarded(F&& f) {
    return [this, f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
      if (const auto& token = service_.config().token) {
        if (req.get_header_value("Authorization") != "Bearer " + *token) {
          reply(res, error_response(401, "missing or invalid token"));
          return;
        }
      }
      try {
        f(req, res);
      } catch (const Error& e) {
        reply(res, error_response(http_status_for(e.kind()), e.what()));
      } catch (const std::exception& e) {
        reply(res, error_response(500, e.what()));
      }
    };
  }

  void routes() {
    server_.Get("/records", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> status;
      std::optional<std::size_t> limit;
      if (req.has_param("status")) status = req.get_param_value("status");
      if (req.has_param("limit")) {
        try {
          limit = static_cast<std::size_t>(std::stoul(req.get_param_value("limit")));
        } catch (const std::exception&) {
          reply(res, error_response(422, "limit must be a non-negative integer"));
          return;
        }
      }
      reply(res, service_.list_records(status, limit));
    }));
    server_.Post(R"(/records/(\d+)/review)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded()) {
        reply(res, error_response(400, "malformed JSON body"));
        return;
      }
      reply(res, service_.review(std::stoull(req.matches[1].str()), body));
    }));
    server_.Post(R"(/records/([^/]+)/review)", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, error_response(404, "no such record"));
    }));
    server_.Get("/metrics", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, service_.metrics());
    }));
    server_.Post("/retrain", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, service_.retrain());
    }));
    server_.Get("/model", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, service_.model_info());
    }));
    server_.Post("/predict", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(req.body.data());
      reply(res, service_.predict(std::span(p, req.body.size())));
    }));
    server_.Get(R"(/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::string name = req.matches[1].str();
      if (name.rfind("images/", 0) == 0) name = name.substr(7);
      const auto bytes = service_.image_bytes(name);
      if (!bytes) {
        reply(res, error_response(404, "no such image"));
        return;
      }
      res.set_content(std::string(bytes->begin(), bytes->end()),
                      name.ends_with(".ppm") ? "image/x-portable-pixmap" : "image/x-portable-graymap");
    }));
    const auto ui = service_.config().data_dir / "ui";
    std::error_code ec;
    if (std::filesystem::is_directory(ui, ec)) server_.set_mount_point("/ui", ui.string());
  }

  ReviewService& service_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace refeednet
