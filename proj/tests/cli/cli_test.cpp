#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "latchange/http_server.hpp"
#include "latchange/latchange.hpp"
#include "latchange/synthetic.hpp"
#include "test_util.hpp"

namespace latchange {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string quote(const std::string& s) { return "'" + s + "'"; }

Run run(const testutil::TempDir& dir, const std::string& args, const std::string& env = "") {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = env + " " + quote(LATCHANGE_CLI_PATH) + " " + args + " >" + quote(out.string()) + " 2>" +
                          quote(err.string());
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

std::vector<nlohmann::json> read_jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  return out;
}

std::set<std::int64_t> ids_of(const fs::path& p) {
  std::set<std::int64_t> s;
  for (const auto& j : read_jsonl(p)) s.insert(j["id"].get<std::int64_t>());
  return s;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    fx_ = synthetic::cluster_fixture();
    manifest_ = synthetic::write_with_images(fx_.pair, dir_.path(), "cluster");
  }
  std::string m() const { return "--manifest " + quote(manifest_.string()); }
  std::string out(const std::string& sub) const { return "--out " + quote((dir_ / sub).string()); }

  testutil::TempDir dir_{"cli"};
  synthetic::ClusterFixture fx_;
  fs::path manifest_;
};

TEST_F(CliTest, HelpExitsZeroEverywhere) {
  for (const char* sub : {"", "detect", "query", "eval", "baseline", "export-labels", "probe", "serve", "synth"}) {
    const auto r = run(dir_, std::string(sub) + " --help");
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("Usage"), std::string::npos) << sub;
  }
  EXPECT_EQ(run(dir_, "").code, 2);
  EXPECT_EQ(run(dir_, "frobnicate").code, 2);
}

TEST_F(CliTest, DetectThresholdWritesSortedProposalsAndMap) {
  const auto r = run(dir_, "detect " + m() + " --mode threshold --angle 155 " + out("a"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("candidates=16 kept=12"), std::string::npos) << r.err;
  const auto lines = read_jsonl(dir_ / "a" / "cluster.jsonl");
  ASSERT_EQ(lines.size(), 12u);
  for (std::size_t i = 1; i < lines.size(); ++i) EXPECT_GE(lines[i - 1]["score"], lines[i]["score"]);
  const ChangeMap map = read_change_map_png(dir_ / "a" / "cluster.png");
  EXPECT_EQ(map.size(), (ImageSize{64, 64}));
  EXPECT_EQ(map.at(10, 10), 1);
  EXPECT_EQ(map.at(25, 5), 0);

  ASSERT_EQ(run(dir_, "detect " + m() + " --mode threshold --angle 155 " + out("b")).code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "cluster.jsonl"), slurp(dir_ / "b" / "cluster.jsonl"));
  EXPECT_EQ(slurp(dir_ / "a" / "cluster.png"), slurp(dir_ / "b" / "cluster.png"));
}

TEST_F(CliTest, DetectUsageErrors) {
  EXPECT_EQ(run(dir_, "detect " + m() + " --mode topk --k 0 " + out("x")).code, 2);
  EXPECT_EQ(run(dir_, "detect " + m() + " --angle 181 " + out("x")).code, 2);
  EXPECT_EQ(run(dir_, "detect --manifest /nonexistent.json").code, 2);
  write_file_bytes(dir_ / "broken.json", "{\"image_size\":[64,64]}");
  const auto r = run(dir_, "detect --manifest " + quote((dir_ / "broken.json").string()) + " " + out("x"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("manifest"), std::string::npos);
}

TEST_F(CliTest, DetectModesAndOverrides) {
  auto r = run(dir_, "detect " + m() + " --mode topk --k 3 " + out("k"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_jsonl(dir_ / "k" / "cluster.jsonl").size(), 3u);
  r = run(dir_, "detect " + m() + " --mode auto " + out("auto"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_jsonl(dir_ / "auto" / "cluster.jsonl").size(), 12u);
  // Fixture stability is 0.97: a 0.98 override for the named dataset filters everything.
  r = run(dir_, "detect " + m() + " --stability-override xview2=0.98 --dataset xview2 " + out("o"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("candidates=0 kept=0"), std::string::npos) << r.err;
  r = run(dir_, "detect " + m() + " --stability-override xview2=0.98 --dataset second " + out("o"));
  EXPECT_NE(r.err.find("candidates=16"), std::string::npos) << r.err;
  EXPECT_EQ(run(dir_, "detect " + m() + " --stability-override bogus " + out("o")).code, 2);
}

TEST_F(CliTest, ConfigFileFromEnvironment) {
  write_file_bytes(dir_ / "cfg.toml", "[detect]\nangle = 0\n");
  const auto r = run(dir_, "detect " + m() + " " + out("cfg"), "LATCHANGE_CONFIG=" + quote((dir_ / "cfg.toml").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("kept=16"), std::string::npos) << r.err;
}

TEST_F(CliTest, QueryFiltersByClass) {
  const auto& p = fx_.a_points[0];
  const std::string pt = " --point " + std::to_string(p.x) + "," + std::to_string(p.y) + ",T1";
  auto r = run(dir_, "query " + m() + pt + " --semantic-angle 45 " + out("q1"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(ids_of(dir_ / "q1" / "cluster.jsonl"), std::set<std::int64_t>(fx_.a_ids.begin(), fx_.a_ids.end()));
  r = run(dir_, "query " + m() + pt + pt + pt + " --semantic-angle 45 " + out("q3"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir_ / "q1" / "cluster.jsonl"), slurp(dir_ / "q3" / "cluster.jsonl"));
  EXPECT_EQ(run(dir_, "query " + m() + " --point 1,2 " + out("qx")).code, 2);
}

TEST(CliQuery, UnresolvablePoint) {
  testutil::TempDir dir("cli_unres");
  synthetic::Pair pair;
  pair.image_size = {256, 256};
  pair.grids = {EmbeddingGrid({8, 8, 4}, 1.0f), EmbeddingGrid({8, 8, 4}, 1.0f)};
  pair.proposals[0] = {{1, synthetic::rect_mask({256, 256}, {{0, 0, 4, 4}}), 0.9, 0.9, Time::t0, std::nullopt}};
  pair.proposals[1] = {{2, synthetic::rect_mask({256, 256}, {{0, 0, 4, 4}}), 0.9, 0.9, Time::t1, std::nullopt}};
  pair.write(dir.path(), "p");
  const auto r = run(dir, "query --manifest " + quote((dir / "p.json").string()) + " --point 250,250,T0 --angle 0 --out " +
                              quote((dir / "o").string()));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unresolvable point"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("nearest centroid"), std::string::npos) << r.err;
}

void write_masks(const fs::path& p, const std::vector<RleMask>& masks, const std::vector<double>& scores = {}) {
  std::vector<ChangeProposal> v;
  for (std::size_t i = 0; i < masks.size(); ++i)
    v.push_back({masks[i], Time::t0, scores.empty() ? 1.0 : scores[i], 180.0, static_cast<std::int64_t>(i)});
  write_file_bytes(p, format_changes(v));
}

TEST(CliEval, PixelAndInstanceReports) {
  testutil::TempDir dir("cli_eval");
  for (const char* d : {"gt", "pred", "empty", "gt_inst", "pred_inst", "pred_inst2"}) fs::create_directories(dir / d);
  ChangeMap g({4, 4}, 0);
  g.at(1, 1) = g.at(2, 2) = 1;
  write_change_map_png(g, dir / "gt" / "a.png");
  write_change_map_png(g, dir / "pred" / "a.png");

  auto r = run(dir, "eval --level pixel --pred " + quote((dir / "pred").string()) + " --gt " + quote((dir / "gt").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("pixel f1 1.0000"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("100.0"), std::string::npos) << r.out;

  auto span = [](int x0, int x1) { return synthetic::rect_mask({1, 100}, {{0, x0, 1, x1}}); };
  write_masks(dir / "gt_inst" / "a.jsonl", {span(0, 10), span(50, 70)});
  write_masks(dir / "pred_inst" / "a.jsonl", {span(0, 6), span(50, 69), span(0, 4)}, {0.9, 0.8, 0.7});
  write_masks(dir / "pred_inst2" / "a.jsonl", {span(0, 6), span(50, 68), span(0, 4)}, {0.9, 0.8, 0.7});
  r = run(dir, "eval --level instance --pred " + quote((dir / "pred_inst").string()) + " --gt " +
                   quote((dir / "gt_inst").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("ar 0.6500"), std::string::npos) << r.out;
  r = run(dir, "eval --level instance --pred " + quote((dir / "pred_inst2").string()) + " --gt " +
                   quote((dir / "gt_inst").string()));
  EXPECT_NE(r.out.find("ar 0.6000"), std::string::npos) << r.out;

  // Empty prediction directory: everything counts as missed.
  r = run(dir, "eval --level pixel --pred " + quote((dir / "empty").string()) + " --gt " + quote((dir / "gt").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("pixel f1 0.0000"), std::string::npos) << r.out;
  r = run(dir, "eval --level instance --pred " + quote((dir / "empty").string()) + " --gt " +
                   quote((dir / "gt_inst").string()) + " --report " + quote((dir / "rep.json").string()));
  EXPECT_NE(r.out.find("ar 0.0000"), std::string::npos) << r.out;
  EXPECT_EQ(nlohmann::json::parse(slurp(dir / "rep.json"))["instance"]["ar"], 0.0);

  // Explicit lists of different length.
  write_change_map_png(g, dir / "gt" / "b.png");
  r = run(dir, "eval --level pixel --pred " + quote((dir / "pred" / "a.png").string()) + " --gt " +
                   quote((dir / "gt" / "a.png").string()) + " " + quote((dir / "gt" / "b.png").string()));
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, Baselines) {
  EXPECT_EQ(run(dir_, "baseline --method magic " + m() + " " + out("bl")).code, 2);
  auto r = run(dir_, "baseline --method mask-match " + m() + " " + out("mm"));
  ASSERT_EQ(r.code, 0) << r.err;
  // Every fixture proposal has an identical-footprint partner at the other time.
  EXPECT_TRUE(read_jsonl(dir_ / "mm" / "cluster.jsonl").empty());
  r = run(dir_, "baseline --method cva-match " + m() + " " + out("cm"));
  ASSERT_EQ(r.code, 0) << r.err;
  std::set<std::int64_t> want(fx_.a_ids.begin(), fx_.a_ids.end());
  want.insert(fx_.b_ids.begin(), fx_.b_ids.end());
  EXPECT_EQ(ids_of(dir_ / "cm" / "cluster.jsonl"), want);
  r = run(dir_, "baseline --method cva --on-images " + m() + " " + out("ci"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "ci" / "cluster.png"));

  testutil::TempDir same("cli_nochange");
  const auto path = synthetic::no_change_pair().write(same.path(), "n");
  r = run(same, "baseline --method cva --manifest " + quote((same / "n.json").string()) + " --out " +
                    quote((same / "o").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  const ChangeMap map = read_change_map_png(same / "o" / "n.png");
  for (auto v : map.pixels()) ASSERT_EQ(v, 0);
}

TEST(CliExport, SkipsCorruptPairs) {
  testutil::TempDir dir("cli_export");
  const fs::path in = dir / "in";
  synthetic::cluster_fixture().pair.write(in, "a");
  synthetic::no_change_pair().write(in, "b");
  synthetic::cluster_fixture(9).pair.write(in, "c");
  write_file_bytes(in / "c.post.act", "garbage");
  auto r = run(dir, "export-labels --manifests " + quote(in.string()) + " --out " + quote((dir / "out").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "out" / "a.png"));
  EXPECT_TRUE(fs::exists(dir / "out" / "b.png"));
  EXPECT_FALSE(fs::exists(dir / "out" / "c.png"));
  const auto summary = nlohmann::json::parse(slurp(dir / "out" / "summary.json"));
  ASSERT_EQ(summary["pairs"].size(), 2u);
  EXPECT_EQ(summary["pairs"][1]["name"], "b");
  EXPECT_EQ(summary["pairs"][1]["coverage"], 0.0);
  EXPECT_GT(summary["pairs"][0]["coverage"].get<double>(), 0.0);
  EXPECT_EQ(summary["failed"].size(), 1u);

  testutil::TempDir bad("cli_export_bad");
  write_file_bytes(bad / "x.json", "{}");
  EXPECT_EQ(run(bad, "export-labels --manifests " + quote(bad.path().string()) + " --out " +
                         quote((bad / "o").string())).code,
            2);
}

TEST_F(CliTest, Probe) {
  auto r = run(dir_, "probe " + m() + " --pca --out " + quote((dir_ / "pca.png").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_rgb_image(dir_ / "pca.png").size, (ImageSize{16, 16}));
  r = run(dir_, "probe " + m() + " --time T1 --query 0 --top-n 2 --out " + quote((dir_ / "rank.jsonl").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ranked = read_jsonl(dir_ / "rank.jsonl");
  ASSERT_EQ(ranked.size(), 2u);
  // Same-class objects first; their mutual order follows fixture noise.
  EXPECT_EQ((std::set<std::int64_t>{ranked[0]["id"], ranked[1]["id"]}), (std::set<std::int64_t>{1, 2}));
  r = run(dir_, "probe " + m() + " --time T1 --query 0 --cross --top-n 1 --out " + quote((dir_ / "x.jsonl").string()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(run(dir_, "probe " + m() + " --query 77 --out " + quote((dir_ / "y.jsonl").string())).code, 2);
}

TEST_F(CliTest, ServeOnOccupiedPortExits2) {
  httplib::Server blocker;
  const int port = service::bind_server(blocker, "127.0.0.1", 0);
  const auto r = run(dir_, "serve --host 127.0.0.1 --port " + std::to_string(port));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("cannot bind"), std::string::npos) << r.err;
}

TEST(CliSynth, WritesLoadableFixtures) {
  testutil::TempDir dir("cli_synth");
  for (const char* kind : {"cluster", "random", "no-change"}) {
    const auto r = run(dir, std::string("synth --kind ") + kind + " --images --stem " + kind + " --out " +
                                quote(dir.path().string()));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NO_THROW(load_session(dir / (std::string(kind) + ".json")));
  }
}

}  // namespace
}  // namespace latchange
