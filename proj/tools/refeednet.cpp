// refeednet command-line tool: corpora, training, evaluation, experiments
// and the review service. JSON goes to stdout, logs to stderr.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "refeednet/experiment.hpp"
#include "refeednet/service.hpp"

namespace {

using namespace refeednet;

const Shape kInputShape{32, 32, 1};

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void emit(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

void log_seed(std::uint64_t seed) { std::cerr << "seed: " << seed << std::endl; }

nlohmann::json history_json(const std::vector<EpochStats>& h) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : h)
    arr.push_back({{"train_loss", e.train_loss}, {"val_accuracy", optional_json(e.val_accuracy)}, {"samples", e.samples}});
  return arr;
}

Domain domain_or_throw(const std::string& s) {
  const auto d = parse_domain(s);
  if (!d) throw Error(ErrorKind::Validation, "unknown domain '" + s + "'");
  return *d;
}

struct Options {
  std::string out;
  std::string data;
  std::string model;
  std::string pretrained;
  std::string image;
  std::string domain = "target";
  std::string group = "g1";
  std::string host = "127.0.0.1";
  std::string token;
  std::size_t per_class = 100;
  double split = 0.75;
  int epochs = 10;
  std::size_t batch = 10;
  double lr = 0.05;
  double q = 0.7;
  std::uint64_t seed = 42;
  int port = 8080;
  int auto_cycle = 0;
  int max_rounds = 5;
  std::size_t capacity = 40;
  bool no_timestamps = false;
};

int cmd_synth(const Options& o) {
  log_seed(o.seed);
  const Domain dom = domain_or_throw(o.domain);
  const Dataset d = synth_dataset(o.per_class, o.seed, dom);
  save_dir(d, o.out);
  std::cerr << "wrote " << d.size() << " images to " << o.out << std::endl;
  emit({{"out", o.out}, {"domain", to_string(dom)}, {"per_class", o.per_class}, {"files", d.size()}, {"seed", o.seed}});
  return 0;
}

int cmd_train(const Options& o) {
  log_seed(o.seed);
  LoadReport rep;
  const Dataset data = load_dir(o.data, kInputShape, &rep);
  std::cerr << "loaded " << rep.loaded << " images (" << rep.skipped << " skipped)" << std::endl;

  MicroCnn base;
  if (!o.pretrained.empty()) {
    base = load_checkpoint_file(o.pretrained);
  } else {
    std::cerr << "pretraining on the synthetic source domain" << std::endl;
    PretrainConfig pc;
    pc.seed = mix_seed(o.seed, 0x9e7a);
    base = pretrain_source(pc).model;
  }
  auto [tr, va] = split(data, {o.split, mix_seed(o.seed, 0x0ff1)});
  TrainConfig tc;
  tc.epochs = o.epochs;
  tc.batch_size = o.batch;
  tc.learning_rate = o.lr;
  tc.seed = mix_seed(o.seed, 0x7c);
  auto res = train(prepare_transfer(base, mix_seed(o.seed, 0x4ead)), tr, va, tc);
  save_checkpoint_file(res.model, o.model);
  emit({{"model", o.model},
        {"checksum", model_checksum(res.model)},
        {"train_size", tr.size()},
        {"val_size", va.size()},
        {"val_accuracy", evaluate(res.model, va).accuracy},
        {"history", history_json(res.history)},
        {"seed", o.seed}});
  return 0;
}

int cmd_eval(const Options& o) {
  validate(QoeConfig{o.q});
  const MicroCnn m = load_checkpoint_file(o.model);
  const Dataset data = load_dir(o.data, m.input_shape);
  const Evaluation ev = evaluate(m, data);
  nlohmann::json confusion = nlohmann::json::object();
  for (TrafficClass t : kAllClasses) {
    nlohmann::json row = nlohmann::json::object();
    for (TrafficClass p : kAllClasses) row[to_string(p)] = 0;
    confusion[to_string(t)] = row;
  }
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto& cell = confusion[to_string(data[i].label)][to_string(class_from_index(ev.predicted[i]))];
    cell = cell.get<int>() + 1;
  }
  emit({{"accuracy", ev.accuracy},
        {"correct", ev.correct_count()},
        {"total", data.size()},
        {"q", o.q},
        {"qoe_satisfied", qoe_satisfied(ev.accuracy, o.q)},
        {"confusion", confusion}});
  return 0;
}

int cmd_experiment(const Options& o) {
  log_seed(o.seed);
  const auto g = parse_group(o.group);
  if (!g) throw Error(ErrorKind::Validation, "unknown group '" + o.group + "'");
  ExperimentConfig cfg;
  cfg.group = *g;
  cfg.seed = o.seed;
  cfg.q = o.q;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch;
  const auto started = now_millis();
  nlohmann::json out = run_experiment(cfg);
  if (!o.no_timestamps) {
    out["started_at"] = started;
    out["finished_at"] = now_millis();
  }
  emit(out);
  return 0;
}

int cmd_predict(const Options& o) {
  const MicroCnn m = load_checkpoint_file(o.model);
  const Tensor frame = resize_nearest(read_pnm(o.image), m.input_shape);
  RecordStore::Clock clock = o.no_timestamps ? RecordStore::Clock([] { return std::int64_t{0}; }) : RecordStore::Clock(now_millis);
  RecordStore store(o.data, clock);
  emit(to_json(predict_and_store(m, store, frame, o.image)));
  return 0;
}

int cmd_serve(Options o) {
  log_seed(o.seed);
  if (o.data.empty())
    if (const char* env = std::getenv("REFEEDNET_DATA")) o.data = env;
  if (o.data.empty()) throw Error(ErrorKind::Validation, "no data directory (--data or REFEEDNET_DATA)");
  if (!o.model.empty()) {
    const MicroCnn m = load_checkpoint_file(o.model);
    std::filesystem::create_directories(o.data);
    save_checkpoint_file(m, DataLayout{o.data}.checkpoint());
  }
  const auto boot = bootstrap_data_dir(o.data, o.seed);
  if (boot.wrote_model)
    std::cerr << "initialized model (source held-out " << boot.pretrain_accuracy << ", target val "
              << boot.transfer_accuracy << ")" << std::endl;
  if (boot.wrote_retest) std::cerr << "initialized retest corpus" << std::endl;

  ServiceConfig sc;
  sc.host = o.host;
  sc.port = o.port;
  sc.data_dir = o.data;
  sc.q = o.q;
  if (o.auto_cycle > 0) sc.auto_cycle_every = o.auto_cycle;
  sc.max_rounds = o.max_rounds;
  sc.stack_capacity = o.capacity;
  if (!o.token.empty()) sc.token = o.token;
  sc.train.epochs = o.epochs;
  sc.train.batch_size = o.batch;
  sc.train.seed = o.seed;
  ReviewService service(sc);
  HttpServer server(service);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "listening on " << o.host << ":" << o.port << std::endl;
  server.run(o.host, o.port);
  service.wait_idle();
  g_server = nullptr;
  std::cerr << "stopped" << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"refeednet: QoE-gated retraining from a stack of misclassified images"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus in directory-per-class layout");
  synth->add_option("--out", o.out, "output directory")->required();
  synth->add_option("--per-class", o.per_class, "images per class")->check(CLI::PositiveNumber);
  synth->add_option("--domain", o.domain, "source|target|shifted");
  synth->add_option("--seed", o.seed);

  auto* trn = app.add_subcommand("train", "transfer-train a classifier head on a corpus");
  trn->add_option("--data", o.data, "corpus directory")->required();
  trn->add_option("--model", o.model, "output checkpoint")->required();
  trn->add_option("--pretrained", o.pretrained, "checkpoint supplying the frozen base");
  trn->add_option("--split", o.split, "training fraction");
  trn->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  trn->add_option("--batch", o.batch)->check(CLI::PositiveNumber);
  trn->add_option("--lr", o.lr);
  trn->add_option("--seed", o.seed);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
  ev->add_option("--data", o.data, "corpus directory")->required();
  ev->add_option("--model", o.model, "checkpoint")->required();
  ev->add_option("--q", o.q, "QoE threshold");

  auto* exp = app.add_subcommand("experiment", "run a desk-scale experiment group");
  exp->add_option("--group", o.group, "g1|g2|g3-analog");
  exp->add_option("--seed", o.seed);
  exp->add_option("--q", o.q, "QoE threshold");
  exp->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  exp->add_option("--batch", o.batch)->check(CLI::PositiveNumber);
  exp->add_flag("--no-timestamps", o.no_timestamps, "omit wall-clock fields");

  auto* srv = app.add_subcommand("serve", "run the review service");
  srv->add_option("--data", o.data, "data directory (default: $REFEEDNET_DATA)");
  srv->add_option("--model", o.model, "checkpoint to deploy into the data directory");
  srv->add_option("--host", o.host);
  srv->add_option("--port", o.port)->check(CLI::Range(0, 65535));
  srv->add_option("--q", o.q, "QoE threshold");
  srv->add_option("--auto-cycle", o.auto_cycle, "start a cycle every N corrections (0: manual only)");
  srv->add_option("--max-rounds", o.max_rounds)->check(CLI::PositiveNumber);
  srv->add_option("--capacity", o.capacity, "stack capacity")->check(CLI::PositiveNumber);
  srv->add_option("--token", o.token, "require this bearer token");
  srv->add_option("--epochs", o.epochs)->check(CLI::PositiveNumber);
  srv->add_option("--batch", o.batch)->check(CLI::PositiveNumber);
  srv->add_option("--seed", o.seed);

  auto* pred = app.add_subcommand("predict", "classify an image and append a record");
  pred->add_option("--model", o.model, "checkpoint")->required();
  pred->add_option("--data", o.data, "record store directory")->required();
  pred->add_option("--image", o.image, "PGM/PPM image")->required();
  pred->add_flag("--no-timestamps", o.no_timestamps, "record created_at as 0");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code_for(ErrorKind::Validation);
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*trn) return cmd_train(o);
    if (*ev) return cmd_eval(o);
    if (*exp) return cmd_experiment(o);
    if (*srv) return cmd_serve(o);
    if (*pred) return cmd_predict(o);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code_for(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code_for(ErrorKind::Io);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return exit_code_for(ErrorKind::Validation);
  }
  return 0;
}
