#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "latchange/http_server.hpp"
#include "latchange/service.hpp"
#include "latchange/synthetic.hpp"
#include "test_util.hpp"

namespace latchange::service {
namespace {

Request req(std::string method, std::string path, std::map<std::string, std::string> q = {}, std::string body = {}) {
  return {std::move(method), std::move(path), std::move(q), std::move(body)};
}

nlohmann::json body_of(const Response& r) { return nlohmann::json::parse(r.body); }

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    fx_ = synthetic::cluster_fixture();
    manifest_ = synthetic::write_with_images(fx_.pair, dir_.path(), "cluster");
    ServiceOptions opts;
    opts.session_dir = dir_.path();
    opts.max_sessions = 2;
    core_ = std::make_unique<ServiceCore>(opts);
  }

  std::string create() {
    const auto r = core_->handle(req("POST", "/sessions", {}, R"({"manifest_path":"cluster.json"})"));
    EXPECT_EQ(r.status, 201) << r.body;
    return body_of(r)["session_id"].get<std::string>();
  }

  testutil::TempDir dir_{"service"};
  synthetic::ClusterFixture fx_;
  std::filesystem::path manifest_;
  std::unique_ptr<ServiceCore> core_;
};

TEST_F(ServiceTest, CreateAndSummarise) {
  const auto r = core_->handle(req("POST", "/sessions", {}, R"({"manifest_path":"cluster.json"})"));
  ASSERT_EQ(r.status, 201);
  const auto j = body_of(r);
  EXPECT_EQ(j["n_t"], 8);
  EXPECT_EQ(j["n_t1"], 8);
  EXPECT_EQ(j["candidates"], 16);
  EXPECT_EQ(j["image_size"], nlohmann::json::array({64, 64}));
  const auto got = core_->handle(req("GET", "/sessions/" + j["session_id"].get<std::string>()));
  EXPECT_EQ(got.status, 200);
}

TEST_F(ServiceTest, ChangesMatchLibrary) {
  const std::string id = create();
  const auto r = core_->handle(req("GET", "/sessions/" + id + "/changes", {{"mode", "threshold"}, {"angle", "155"}}));
  ASSERT_EQ(r.status, 200) << r.body;
  const auto j = nlohmann::ordered_json::parse(r.body);
  LoadOptions load{ProposalFilter{}};
  const auto want = bitemporal_latent_match(load_session(manifest_, load), MatchConfig{});
  EXPECT_EQ(j["count"], want.size());
  EXPECT_EQ(j["changes"].dump(), changes_json(want).dump());
  EXPECT_EQ(j["threshold_deg"], 155.0);

  const auto all = body_of(core_->handle(req("GET", "/sessions/" + id + "/changes", {{"angle", "0"}})));
  EXPECT_EQ(all["count"], 16);
  const auto none = body_of(core_->handle(req("GET", "/sessions/" + id + "/changes", {{"angle", "180"}})));
  EXPECT_EQ(none["count"], 0);
  const auto topk = body_of(core_->handle(req("GET", "/sessions/" + id + "/changes", {{"mode", "topk"}, {"k", "3"}})));
  EXPECT_EQ(topk["count"], 3);
  EXPECT_TRUE(topk["threshold_deg"].is_null());
}

TEST_F(ServiceTest, BadParametersAre400) {
  const std::string id = create();
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + id + "/changes", {{"mode", "best"}})).status, 400);
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + id + "/changes", {{"angle", "200"}})).status, 400);
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + id + "/changes", {{"angle", "abc"}})).status, 400);
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + id + "/changes", {{"mode", "topk"}, {"k", "0"}})).status, 400);
  EXPECT_EQ(core_->handle(req("POST", "/sessions/" + id + "/query", {}, R"({"points":[]})")).status, 400);
  EXPECT_EQ(core_->handle(req("POST", "/sessions", {}, "not json")).status, 400);
  EXPECT_EQ(core_->handle(req("POST", "/sessions", {}, R"({"manifest_path":"missing.json"})")).status, 400);
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + id + "/overlay", {{"ids", "x1"}})).status, 400);
}

TEST_F(ServiceTest, UnknownThingsAre404) {
  EXPECT_EQ(core_->handle(req("GET", "/sessions/nope/changes")).status, 404);
  EXPECT_EQ(core_->handle(req("GET", "/elsewhere")).status, 404);
  const std::string id = create();
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + id + "/overlay", {{"ids", "999"}})).status, 404);
}

TEST_F(ServiceTest, GeometryProblemsAre422) {
  const std::string id = create();
  const auto r = core_->handle(
      req("POST", "/sessions/" + id + "/query", {}, R"({"points":[{"x":63,"y":40,"t":"T1"}],"semantic_angle":45})"));
  // (63, 40) lies in no mask; the nearest centroid is within 50 px, so it still resolves.
  EXPECT_EQ(r.status, 200) << r.body;

  write_tensor_archive(EmbeddingGrid({8, 8, 16}, 1.0f), dir_ / "cluster.post.act");
  EXPECT_EQ(core_->handle(req("POST", "/sessions", {}, R"({"manifest_path":"cluster.json"})")).status, 422);
}

TEST_F(ServiceTest, PointQuerySelectsClass) {
  const std::string id = create();
  nlohmann::json body;
  body["semantic_angle"] = 45;
  for (const auto& p : fx_.a_points) body["points"].push_back({{"x", p.x}, {"y", p.y}, {"t", "T1"}});
  const auto r = core_->handle(req("POST", "/sessions/" + id + "/query", {}, body.dump()));
  ASSERT_EQ(r.status, 200) << r.body;
  std::set<std::int64_t> got;
  const auto j = body_of(r);
  for (const auto& c : j["changes"]) got.insert(c["id"].get<std::int64_t>());
  EXPECT_EQ(got, std::set<std::int64_t>(fx_.a_ids.begin(), fx_.a_ids.end()));
}

TEST_F(ServiceTest, ImagesArePng) {
  const std::string id = create();
  for (auto path : {"/overlay", "/latent"}) {
    const auto r = core_->handle(req("GET", "/sessions/" + id + path, {{"time", "T1"}, {"ids", "0,T0:10"}}));
    ASSERT_EQ(r.status, 200) << r.body;
    EXPECT_EQ(r.content_type, "image/png");
    EXPECT_EQ(r.body.substr(1, 3), "PNG");
  }
}

TEST_F(ServiceTest, LruEvictionAndDelete) {
  const std::string a = create();
  const std::string b = create();
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + a)).status, 200);  // a becomes most recent
  const std::string c = create();
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + b)).status, 404);
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + a)).status, 200);
  EXPECT_EQ(core_->handle(req("DELETE", "/sessions/" + c)).status, 204);
  EXPECT_EQ(core_->handle(req("GET", "/sessions/" + c)).status, 404);
}

TEST(ServiceStatus, ErrorKindMapping) {
  EXPECT_EQ(status_for(ErrorKind::format), 400);
  EXPECT_EQ(status_for(ErrorKind::not_found), 404);
  EXPECT_EQ(status_for(ErrorKind::unresolvable_point), 422);
  EXPECT_EQ(status_for(ErrorKind::invariant), 500);
}

TEST(ServiceLatency, ChangesUnder50msFor2000Candidates) {
  synthetic::Rng rng(3);
  synthetic::RandomPairParams p;
  p.min_image = 128;
  p.max_image = 128;
  p.max_proposals = 1000;
  synthetic::Pair pair;
  do pair = synthetic::random_pair(rng, p);
  while (pair.proposals[0].size() + pair.proposals[1].size() < 1500);
  ServiceCore core;
  const auto state = core.add_session(pair.session());
  ASSERT_LE(state->candidates.size(), 2000u);
  for (const char* mode : {"threshold", "topk", "auto"}) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = core.handle(req("GET", "/sessions/" + state->id + "/changes", {{"mode", mode}, {"angle", "60"}}));
    const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    ASSERT_EQ(r.status, 200);
    EXPECT_LT(ms, 50.0) << mode;
  }
}

TEST(HttpBinding, ServesOverLoopback) {
  testutil::TempDir dir("http");
  const auto fx = synthetic::cluster_fixture();
  synthetic::write_with_images(fx.pair, dir.path(), "c");
  ServiceOptions opts;
  opts.session_dir = dir.path();
  ServiceCore core(opts);
  httplib::Server server;
  install_routes(server, core);
  const int port = bind_server(server, "127.0.0.1", 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto created = cli.Post("/sessions", R"({"manifest_path":"c.json"})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const auto id = nlohmann::json::parse(created->body)["session_id"].get<std::string>();
  auto changes = cli.Get("/sessions/" + id + "/changes?mode=threshold&angle=155");
  ASSERT_TRUE(changes);
  EXPECT_EQ(changes->status, 200);
  EXPECT_EQ(changes->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(nlohmann::json::parse(changes->body)["count"], 12);
  auto missing = cli.Get("/sessions/zzz/changes");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  httplib::Server other;
  EXPECT_THROW(bind_server(other, "127.0.0.1", port), Error);

  server.stop();
  th.join();
}

}  // namespace
}  // namespace latchange::service
