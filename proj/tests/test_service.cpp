#include <doctest.h>

#include <httplib.h>

#include <algorithm>
#include <condition_variable>
#include <set>
#include <mutex>

#include "helpers.hpp"
#include "polarcast/dataio.hpp"
#include "polarcast/service.hpp"

using namespace polarcast;
using nlohmann::json;
using testutil::TempDir;

namespace {

std::vector<Window> service_windows() {
  SynthConfig sc;
  sc.n_defined = 40;
  sc.n_undecidable = 10;
  sc.window_len = 32;
  sc.seed = 21;
  return make_windows(synth_generate(sc).traces, {16, 16}).windows;
}

ServiceConfig service_cfg(const TempDir& d) {
  ServiceConfig c;
  c.port = 0;
  c.journal_path = d / "flags.jsonl";
  c.som.rows = 2;
  c.som.cols = 2;
  c.som.epochs = 2;
  c.dataset_id = "unit";
  return c;
}

std::string flag_body(const std::string& id, const std::string& reason, const std::string& label = "") {
  json j{{"trace_id", id}, {"reason", reason}, {"author", "tester"}};
  if (!label.empty()) j["corrected_label"] = label;
  return j.dump();
}

std::set<std::string> mapped_ids(const ReviewService& s) {
  std::set<std::string> ids;
  const auto map = s.som_map();
  for (const auto& node : map.body["nodes"])
    for (const auto& id : node["member_ids"]) ids.insert(id.get<std::string>());
  return ids;
}

}  // namespace

TEST_CASE("min-max decimation keeps extrema and the point budget") {
  Rng rng(2);
  for (std::size_t n : {10u, 512u, 513u, 1000u, 4001u}) {
    std::vector<float> x(n);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    const auto d = decimate_minmax(x, 512);
    CHECK(d.size() <= 512);
    CHECK(*std::max_element(d.begin(), d.end()) == *std::max_element(x.begin(), x.end()));
    CHECK(*std::min_element(d.begin(), d.end()) == *std::min_element(x.begin(), x.end()));
    if (n <= 512) CHECK(d == x);
  }
  // a spike anywhere survives, and decimated_index points at its bucket
  for (std::size_t spike : {0u, 1u, 499u, 2999u}) {
    std::vector<float> x(3000, 0.0f);
    x[spike] = 5.0f;
    const auto d = decimate_minmax(x, 512);
    const auto at = decimated_index(x.size(), 512, spike);
    CHECK((d[at] == 5.0f || d[at + 1] == 5.0f));
  }
  CHECK(decimated_index(100, 512, 37) == 37);
  CHECK_THROWS(decimate_minmax(std::vector<float>(10), 1));
}

TEST_CASE("map is unavailable until a SOM exists") {
  TempDir d("svc-nosom");
  ReviewService s(service_cfg(d), service_windows(), 16);
  CHECK(s.health().status == 200);
  CHECK(s.health().body["som_id"].is_null());
  CHECK(s.som_map().status == 404);
  CHECK(s.som_node_waveforms(0, 0, std::nullopt).status == 404);
  CHECK(s.ensemble_histograms("all", "undecidable").status == 404);
}

TEST_CASE("flag validation and lifecycle") {
  TempDir d("svc-flags");
  const auto windows = service_windows();
  ReviewService s(service_cfg(d), windows, 16);
  const auto id = windows[3].trace_id;

  auto r = s.post_flag("{nope");
  CHECK(r.status == 400);
  r = s.post_flag(json{{"reason", "bogus"}}.dump());
  CHECK(r.status == 400);
  CHECK(r.body["fields"].contains("trace_id"));
  CHECK(r.body["fields"].contains("reason"));
  CHECK(s.post_flag(flag_body(id, "mislabeled")).status == 400);
  CHECK(s.post_flag(flag_body(id, "ambiguous", "up")).status == 400);
  CHECK(s.post_flag(flag_body(id, "mislabeled", "sideways")).body["fields"].contains("corrected_label"));
  CHECK(s.post_flag(flag_body("no-such-trace", "ambiguous")).status == 404);
  CHECK(s.flags().empty());

  r = s.post_flag(flag_body(id, "mislabeled", "down"));
  CHECK(r.status == 201);
  CHECK(r.body["corrected_label"] == "down");
  CHECK(s.get_flags().body["count"] == 1);
  // re-flagging replaces
  CHECK(s.post_flag(flag_body(id, "ambiguous")).status == 201);
  CHECK(s.flags().find(id)->reason == FlagReason::Ambiguous);

  CHECK(s.delete_flag(id).status == 200);
  CHECK(s.delete_flag(id).status == 404);
  CHECK(s.post_flag(flag_body(id, "mislabeled", "up")).status == 201);
  CHECK(s.flags().find(id)->corrected_label == Polarity::Up);
}

TEST_CASE("journal replay restores flags after a restart") {
  TempDir d("svc-replay");
  const auto windows = service_windows();
  FlagSet before;
  std::uint64_t digest = 0;
  {
    ReviewService s(service_cfg(d), windows, 16);
    for (std::size_t i = 0; i < 10; ++i) s.post_flag(flag_body(windows[i].trace_id, "ambiguous"));
    s.delete_flag(windows[4].trace_id);
    before = s.flags();
    digest = s.state_digest();
  }
  ReviewService again(service_cfg(d), windows, 16);
  CHECK(again.flags() == before);
  CHECK(again.state_digest() == digest);
}

TEST_CASE("cycle job: 202, 409 while running, then done and the flagged trace is gone") {
  TempDir d("svc-cycle");
  const auto windows = service_windows();
  auto cfg = service_cfg(d);
  std::mutex mu;
  std::condition_variable cv;
  bool started = false, release = false;
  cfg.on_cycle_start = [&] {
    std::unique_lock lock(mu);
    started = true;
    cv.notify_all();
    cv.wait(lock, [&] { return release; });
  };
  ReviewService s(cfg, windows, 16);
  const auto flagged = windows[0].trace_id;
  REQUIRE(s.post_flag(flag_body(flagged, "ambiguous")).status == 201);

  const auto first = s.post_cycle();
  REQUIRE(first.status == 202);
  const auto job = first.body["job_id"].get<std::uint64_t>();
  {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return started; });
  }
  CHECK(s.get_job(job).body["status"] == "running");
  CHECK(s.post_cycle().status == 409);
  {
    std::lock_guard lock(mu);
    release = true;
  }
  cv.notify_all();
  s.wait_idle();
  const auto done = s.get_job(job);
  CHECK(done.body["status"] == "done");
  CHECK(done.body["result"]["cycle"] == 1);
  CHECK(s.get_job(999).status == 404);

  const auto ids = mapped_ids(s);
  CHECK(ids.size() == windows.size() - 1);
  CHECK_FALSE(ids.count(flagged));
  CHECK(s.health().body["cycle"] == 1);

  // reads do not move the state
  const auto digest = s.state_digest();
  s.som_map();
  s.get_flags();
  s.som_node_waveforms(0, 0, 3);
  s.get_job(job);
  s.health();
  CHECK(s.state_digest() == digest);

  // the cycle is journaled too
  s.stop();
  CHECK(FlagJournal::replay(cfg.journal_path).cycle() == 1);
}

TEST_CASE("node waveforms honour the limit and report labels") {
  TempDir d("svc-node");
  const auto windows = service_windows();
  ReviewService s(service_cfg(d), windows, 16);
  SomConfig sc;
  sc.rows = 1;
  sc.cols = 1;
  sc.epochs = 1;
  s.set_som(som_train(std::span<const Window>(windows), sc));
  CHECK(s.som_map().body["nodes"][0]["count"] == windows.size());
  auto r = s.som_node_waveforms(0, 0, 5);
  CHECK(r.status == 200);
  CHECK(r.body["returned"] == 5);
  CHECK(r.body["waveforms"].size() == 5);
  CHECK(r.body["p_index"] == 16);
  CHECK(s.som_node_waveforms(0, 0, std::nullopt).body["returned"] == 20);
  CHECK(s.som_node_waveforms(3, 0, 1).status == 404);

  const auto id = r.body["waveforms"][0]["trace_id"].get<std::string>();
  s.post_flag(flag_body(id, "mislabeled", "up"));
  const auto after = s.som_node_waveforms(0, 0, 5);
  CHECK(after.body["waveforms"][0]["flagged"] == true);
  CHECK(after.body["waveforms"][0]["label"] == "up");
}

TEST_CASE("ensemble histogram and audit endpoints") {
  TempDir d("svc-ens");
  const auto windows = service_windows();
  ReviewService s(service_cfg(d), windows, 16);
  Network net(testutil::tiny_arch());
  Registry reg;
  reg.arch = testutil::tiny_arch();
  for (std::size_t m = 0; m < 2; ++m) {
    RegistryEntry e;
    e.setting = Setting::parse("sgd-nodrop-complete");
    e.member = m;
    e.params = net.init_params(m);
    reg.entries.push_back(e);
  }
  s.set_ensemble(reg, {{"undecidable", windows}});

  auto h = s.ensemble_histograms("all", "undecidable");
  REQUIRE(h.status == 200);
  CHECK(h.body["models"] == 2);
  std::size_t total = 0;
  for (const auto& c : h.body["counts"]) total += c.get<std::size_t>();
  CHECK(total == windows.size());
  CHECK(s.ensemble_histograms("bad", "undecidable").status == 400);
  CHECK(s.ensemble_histograms("all", "nowhere").status == 404);

  auto a = s.audit_extremal("left", 3, "all", "undecidable", 1);
  CHECK(a.status == 200);
  CHECK(a.body["returned"].get<std::size_t>() <= 3);
  CHECK(s.audit_extremal("middle", 3, "all", "undecidable", 1).status == 400);
}

TEST_CASE("HTTP round trip and port conflicts") {
  TempDir d("svc-http");
  const auto windows = service_windows();
  ReviewService s(service_cfg(d), windows, 16);
  s.bind();
  REQUIRE(s.port() > 0);
  s.start();

  httplib::Client cli("127.0.0.1", s.port());
  auto res = cli.Get("/health");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(json::parse(res->body)["dataset"] == "unit");

  res = cli.Post("/flags", flag_body(windows[2].trace_id, "ambiguous"), "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  res = cli.Post("/flags", "[]", "application/json");
  REQUIRE(res);
  CHECK(res->status == 400);
  CHECK(json::parse(res->body).contains("error"));

  res = cli.Get("/flags");
  REQUIRE(res);
  CHECK(json::parse(res->body)["count"] == 1);
  res = cli.Delete("/flags/" + windows[2].trace_id);
  REQUIRE(res);
  CHECK(res->status == 200);

  res = cli.Post("/cycle");
  REQUIRE(res);
  CHECK(res->status == 202);
  s.wait_idle();
  res = cli.Get("/jobs/" + std::to_string(json::parse(res->body)["job_id"].get<int>()));
  REQUIRE(res);
  CHECK(json::parse(res->body)["status"] == "done");
  res = cli.Get("/som/map");
  REQUIRE(res);
  CHECK(res->status == 200);
  res = cli.Get("/som/node/0/0/waveforms?limit=abc");
  REQUIRE(res);
  CHECK(res->status == 400);
  res = cli.Get("/nowhere");
  REQUIRE(res);
  CHECK(res->status == 404);

  auto cfg = service_cfg(d);
  cfg.journal_path = d / "other.jsonl";
  cfg.port = s.port();
  ReviewService clash(cfg, windows, 16);
  CHECK_THROWS_AS(clash.bind(), std::runtime_error);
  s.stop();
}
