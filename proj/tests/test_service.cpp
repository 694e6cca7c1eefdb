#include <gtest/gtest.h>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <fstream>
#include <thread>

#include "refeednet/service.hpp"
#include "support.hpp"

using namespace refeednet;
using namespace testing_support;
using nlohmann::json;

namespace {

void seed_data_dir(const std::filesystem::path& dir, std::uint64_t seed = 1) {
  std::filesystem::create_directories(dir);
  save_checkpoint_file(freeze_base(build_model(seed)), DataLayout{dir}.checkpoint());
  save_dir(synth_dataset(3, 77, Domain::Shifted), DataLayout{dir}.retest_dir());
}

ServiceConfig config_for(const std::filesystem::path& dir) {
  ServiceConfig c;
  c.data_dir = dir;
  c.port = 0;
  c.train.epochs = 2;
  c.max_rounds = 1;
  return c;
}

std::string frame_bytes(TrafficClass c, std::uint64_t seed) {
  const auto b = encode_pnm(synth_scene(c, seed, Domain::Shifted).pixels);
  return std::string(b.begin(), b.end());
}

// A label that differs from the record's prediction.
std::string other_label(const json& rec) {
  return rec["predicted"] == "Jam" ? "Empty" : "Jam";
}

json body_of(const httplib::Result& r) { return json::parse(r->body); }

void wait_until_idle(httplib::Client& cli) {
  for (int i = 0; i < 600; ++i) {
    auto r = cli.Get("/metrics");
    if (r && !body_of(r)["busy"].get<bool>()) return;
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
  FAIL() << "service stayed busy";
}

struct Running {
  explicit Running(ServiceConfig cfg) : service(std::move(cfg)), http(service) {
    port = http.start("127.0.0.1", 0);
  }
  ReviewService service;
  HttpServer http;
  int port = 0;
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

}  // namespace

TEST(Service, FreshMetricsAreEmpty) {
  TempDir dir("svc");
  seed_data_dir(dir.path());
  Running s(config_for(dir.path()));
  auto cli = s.client();
  auto r = cli.Get("/metrics");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  const json m = body_of(r);
  EXPECT_TRUE(m["p0"].is_null());
  EXPECT_TRUE(m["pf"].is_null());
  EXPECT_EQ(m["q"], 0.7);
  EXPECT_EQ(m["rounds"], 0);
  EXPECT_EQ(m["history"].size(), 0u);
}

TEST(Service, UnknownRecordIs404AndEmptyRetrainIs409) {
  TempDir dir("svc");
  seed_data_dir(dir.path());
  Running s(config_for(dir.path()));
  auto cli = s.client();
  auto r = cli.Post("/records/12345/review", R"({"verdict":"confirmed"})", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
  r = cli.Post("/records/abc/review", R"({"verdict":"confirmed"})", "application/json");
  EXPECT_EQ(r->status, 404);
  r = cli.Post("/retrain", "", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 409);
  EXPECT_EQ(body_of(r)["error"], "stack empty");
}

TEST(Service, PredictListReviewAndImages) {
  TempDir dir("svc");
  seed_data_dir(dir.path());
  Running s(config_for(dir.path()));
  auto cli = s.client();
  std::vector<json> recs;
  for (std::uint64_t i = 0; i < 4; ++i) {
    auto r = cli.Post("/predict", frame_bytes(kAllClasses[i], i), "image/x-portable-graymap");
    ASSERT_TRUE(r);
    ASSERT_EQ(r->status, 200) << r->body;
    recs.push_back(body_of(r));
  }
  EXPECT_EQ(recs[3]["id"], 4);
  auto bad = cli.Post("/predict", "not an image", "application/octet-stream");
  EXPECT_EQ(bad->status, 422);

  auto list = cli.Get("/records?status=unreviewed&limit=3");
  ASSERT_EQ(list->status, 200);
  EXPECT_EQ(body_of(list).size(), 3u);
  EXPECT_EQ(cli.Get("/records?status=bogus")->status, 422);

  const std::string ref = recs[0]["image_ref"];
  auto img = cli.Get("/" + ref);
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(img->body.substr(0, 2), "P5");
  EXPECT_EQ(cli.Get("/images/..%2Fmodel.rfn")->status, 404);

  const std::string path = "/records/" + std::to_string(recs[0]["id"].get<int>()) + "/review";
  auto r = cli.Post(path, json{{"verdict", "corrected"}}.dump(), "application/json");
  EXPECT_EQ(r->status, 422);
  r = cli.Post(path, json{{"verdict", "corrected"}, {"label", "Gridlock"}}.dump(), "application/json");
  EXPECT_EQ(r->status, 422);
  r = cli.Post(path, json{{"verdict", "corrected"}, {"label", recs[0]["predicted"]}}.dump(), "application/json");
  EXPECT_EQ(r->status, 422);
  r = cli.Post(path, "{oops", "application/json");
  EXPECT_EQ(r->status, 400);

  const json fix{{"verdict", "corrected"}, {"label", other_label(recs[0])}};
  r = cli.Post(path, fix.dump(), "application/json");
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(body_of(r)["review"], "corrected");
  EXPECT_EQ(body_of(r)["cycle_started"], false);
  EXPECT_EQ(s.service.prediction_stack_size(), 1u);

  // Retried with the same verdict: idempotent.
  r = cli.Post(path, fix.dump(), "application/json");
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(s.service.prediction_stack_size(), 1u);
  r = cli.Post(path, R"({"verdict":"confirmed"})", "application/json");
  EXPECT_EQ(r->status, 409);

  auto model = cli.Get("/model");
  ASSERT_EQ(model->status, 200);
  const json mj = body_of(model);
  EXPECT_EQ(mj["checksum"], model_checksum(*s.service.model()));
  EXPECT_EQ(mj["architecture"]["base_boundary"], 6);
  EXPECT_TRUE(mj["deployed_at"].is_null());
}

TEST(Service, ManualRetrainRunsACycle) {
  TempDir dir("svc");
  seed_data_dir(dir.path());
  auto cfg = config_for(dir.path());
  cfg.train.epochs = 8;
  Running s(cfg);
  auto cli = s.client();
  for (std::uint64_t i = 0; i < 8; ++i) {
    const json rec = body_of(cli.Post("/predict", frame_bytes(kAllClasses[i % 4], 50 + i), "image/x-portable-graymap"));
    const json fix{{"verdict", "corrected"}, {"label", other_label(rec)}};
    ASSERT_EQ(cli.Post("/records/" + std::to_string(rec["id"].get<int>()) + "/review", fix.dump(), "application/json")->status, 200);
  }
  EXPECT_EQ(s.service.prediction_stack_size(), 8u);
  auto r = cli.Post("/retrain", "", "application/json");
  ASSERT_EQ(r->status, 202);
  auto busy = cli.Post("/retrain", "", "application/json");
  EXPECT_EQ(busy->status, 409);
  wait_until_idle(cli);
  const json m = body_of(cli.Get("/metrics"));
  EXPECT_FALSE(m["p0"].is_null());
  EXPECT_FALSE(m["pf"].is_null());
  EXPECT_EQ(m["rounds"], 1);
  ASSERT_EQ(m["history"].size(), 1u);
  EXPECT_EQ(m["history"][0]["cycle"], 1);
  EXPECT_EQ(m["prediction_stack"], 0);
  EXPECT_EQ(m["training_stack"], 0);
  EXPECT_EQ(m["gain"], m["history"][0]["gain"]);
  const bool deployed = m["history"][0]["deployed"];
  EXPECT_EQ(deployed, m["pf"].get<double>() > m["p0"].get<double>());
  EXPECT_EQ(body_of(cli.Get("/model"))["deployed_at"].is_null(), !deployed);
}

TEST(Service, NthCorrectionStartsCycle) {
  TempDir dir("svc");
  seed_data_dir(dir.path());
  auto cfg = config_for(dir.path());
  cfg.auto_cycle_every = 3;
  Running s(cfg);
  auto cli = s.client();
  std::vector<bool> started;
  for (std::uint64_t i = 0; i < 3; ++i) {
    const json rec = body_of(cli.Post("/predict", frame_bytes(kAllClasses[i], 90 + i), "image/x-portable-graymap"));
    const json fix{{"verdict", "corrected"}, {"label", other_label(rec)}};
    auto r = cli.Post("/records/" + std::to_string(rec["id"].get<int>()) + "/review", fix.dump(), "application/json");
    ASSERT_EQ(r->status, 200);
    started.push_back(body_of(r)["cycle_started"]);
  }
  EXPECT_EQ(started, (std::vector<bool>{false, false, true}));
  wait_until_idle(cli);
  EXPECT_EQ(body_of(cli.Get("/metrics"))["history"].size(), 1u);
}

TEST(Service, TokenIsEnforcedWhenConfigured) {
  TempDir dir("svc");
  seed_data_dir(dir.path());
  auto cfg = config_for(dir.path());
  cfg.token = "s3cret";
  Running s(cfg);
  auto cli = s.client();
  EXPECT_EQ(cli.Get("/metrics")->status, 401);
  httplib::Headers h{{"Authorization", "Bearer s3cret"}};
  EXPECT_EQ(cli.Get("/metrics", h)->status, 200);
}

TEST(Service, PortInUseIsStartupError) {
  TempDir dir("svc");
  seed_data_dir(dir.path());
  Running first(config_for(dir.path()));
  ReviewService second(config_for(dir.path()));
  HttpServer http(second);
  try {
    http.start("127.0.0.1", first.port);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
}

TEST(Service, CorruptStateRefusesToStart) {
  {
    TempDir dir("svc");
    seed_data_dir(dir.path());
    auto bytes = read_file_bytes(DataLayout{dir.path()}.checkpoint());
    bytes[bytes.size() / 2] ^= 1;
    write_file_bytes(DataLayout{dir.path()}.checkpoint(), bytes);
    EXPECT_THROW(ReviewService{config_for(dir.path())}, Error);
  }
  {
    TempDir dir("svc");
    seed_data_dir(dir.path());
    std::ofstream(DataLayout{dir.path()}.metrics_log()) << "{\"p0\":\n";
    EXPECT_THROW(ReviewService{config_for(dir.path())}, Error);
  }
  {
    TempDir dir("svc");
    seed_data_dir(dir.path());
    std::ofstream(DataLayout{dir.path()}.prediction_stack()) << "{\"source_id\":\"images/none.pgm\",\"class\":\"Jam\",\"pushed_at\":0}\n";
    EXPECT_THROW(ReviewService{config_for(dir.path())}, Error);
  }
  {
    TempDir dir("svc");
    EXPECT_THROW(ReviewService{config_for(dir.path())}, Error);
  }
  ServiceConfig bad;
  bad.data_dir = "/tmp/x";
  bad.q = 1.5;
  EXPECT_THROW(validate(bad), Error);
  bad.q = 0.7;
  bad.auto_cycle_every = 0;
  EXPECT_THROW(validate(bad), Error);
}

TEST(Service, KillBetweenRequestsThenRestart) {
  TempDir dir("crash");
  seed_data_dir(dir.path(), 9);
  int fds[2];
  ASSERT_EQ(::pipe(fds), 0);
  const pid_t child = ::fork();
  ASSERT_GE(child, 0);
  if (child == 0) {
    ::close(fds[0]);
    auto cfg = config_for(dir.path());
    ReviewService svc(cfg);
    HttpServer http(svc);
    const int port = http.start("127.0.0.1", 0);
    (void)!::write(fds[1], &port, sizeof port);
    for (;;) ::pause();
  }
  ::close(fds[1]);
  int port = 0;
  ASSERT_EQ(::read(fds[0], &port, sizeof port), static_cast<ssize_t>(sizeof port));
  ::close(fds[0]);
  httplib::Client cli("127.0.0.1", port);

  // Cycle once so a deployed model (or a rollback) is part of the state.
  std::vector<json> recs;
  for (std::uint64_t i = 0; i < 10; ++i) {
    auto r = cli.Post("/predict", frame_bytes(kAllClasses[i % 4], 300 + i), "image/x-portable-graymap");
    ASSERT_TRUE(r);
    recs.push_back(body_of(r));
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const json fix{{"verdict", "corrected"}, {"label", other_label(recs[i])}};
    ASSERT_EQ(cli.Post("/records/" + std::to_string(recs[i]["id"].get<int>()) + "/review", fix.dump(), "application/json")->status, 200);
  }
  ASSERT_EQ(cli.Post("/retrain", "", "application/json")->status, 202);
  wait_until_idle(cli);
  for (std::size_t i = 4; i < 10; ++i) {
    const json v = i % 2 ? json{{"verdict", "confirmed"}} : json{{"verdict", "corrected"}, {"label", other_label(recs[i])}};
    ASSERT_EQ(cli.Post("/records/" + std::to_string(recs[i]["id"].get<int>()) + "/review", v.dump(), "application/json")->status, 200);
  }
  const json records_before = body_of(cli.Get("/records"));
  const json metrics_before = body_of(cli.Get("/metrics"));
  const json model_before = body_of(cli.Get("/model"));

  ::kill(child, SIGKILL);
  int status = 0;
  ::waitpid(child, &status, 0);
  ASSERT_TRUE(WIFSIGNALED(status));

  ReviewService restarted(config_for(dir.path()));
  json records_after = json::array();
  for (const auto& r : restarted.records().list()) records_after.push_back(to_json(r));
  EXPECT_EQ(records_after, records_before);
  const json metrics_after = restarted.metrics().body;
  EXPECT_EQ(metrics_after["prediction_stack"], metrics_before["prediction_stack"]);
  EXPECT_EQ(metrics_after["prediction_stack"], 3);
  EXPECT_EQ(metrics_after["history"], metrics_before["history"]);
  EXPECT_EQ(metrics_after["pf"], metrics_before["pf"]);
  EXPECT_EQ(restarted.model_info().body, model_before);

  // The restored stack holds the corrected frames, newest on top.
  const ReFeedStack stack = restarted.prediction_stack();
  ASSERT_EQ(stack.size(), 3u);
  EXPECT_EQ(stack.top().source_id, recs[8]["image_ref"]);
  EXPECT_EQ(stack.top().pixels, restarted.records().frame(recs[8]["id"].get<std::uint64_t>()));
  EXPECT_EQ(to_string(stack.top().label), other_label(recs[8]));
}

TEST(Service, BootstrapFillsMissingFiles) {
  TempDir dir("boot");
  seed_data_dir(dir.path());
  const auto before = read_file_bytes(DataLayout{dir.path()}.checkpoint());
  const auto rep = bootstrap_data_dir(dir.path(), 1);
  EXPECT_FALSE(rep.wrote_model);
  EXPECT_FALSE(rep.wrote_retest);
  EXPECT_EQ(read_file_bytes(DataLayout{dir.path()}.checkpoint()), before);
}
