#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "polarcast/dataio.hpp"
#include "polarcast/somclean.hpp"

using namespace polarcast;
using testutil::TempDir;

namespace {

Window win(const std::string& id, Polarity p, std::vector<float> v) { return {std::move(v), id, p}; }

std::vector<Window> two_blobs(std::size_t per_blob, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Window> out;
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const bool up = i < per_blob;
    std::vector<float> v(6);
    for (auto& x : v) x = static_cast<float>((up ? 1.0 : -1.0) + 0.05 * rng.normal());
    out.push_back(win("w" + std::to_string(i), up ? Polarity::Up : Polarity::Down, v));
  }
  return out;
}

FlagSet flags_of(std::initializer_list<std::pair<std::string, std::optional<Polarity>>> items) {
  FlagSet s;
  for (const auto& [id, corr] : items) {
    FlagEntry e;
    e.trace_id = id;
    e.reason = corr ? FlagReason::Mislabeled : FlagReason::Ambiguous;
    e.corrected_label = corr;
    s.upsert(e);
  }
  return s;
}

}  // namespace

TEST_CASE("initial sigma defaults to half the larger grid side") {
  SomConfig c;
  c.rows = 4;
  c.cols = 10;
  CHECK(c.initial_sigma() == 5.0);
  c.sigma0 = 1.5;
  CHECK(c.initial_sigma() == 1.5);
}

TEST_CASE("bmu prefers the lowest row-major node on ties") {
  SOMap som;
  som.rows = 2;
  som.cols = 2;
  som.dim = 1;
  som.prototypes = {5.0f, 1.0f, -1.0f, 1.0f};
  const std::vector<float> x{0.0f};
  CHECK(bmu_index(som, x) == 1);
  CHECK(bmu(som, x) == GridPos{0, 1});
  const std::vector<float> y{4.0f};
  CHECK(bmu_index(som, y) == 0);
}

TEST_CASE("som training is seeded and separates two blobs") {
  const auto data = two_blobs(40, 1);
  SomConfig c;
  c.rows = 3;
  c.cols = 3;
  c.epochs = 10;
  c.seed = 4;
  const auto a = som_train(std::span<const Window>(data), c);
  const auto b = som_train(std::span<const Window>(data), c);
  CHECK(a == b);
  CHECK(a.trained_epochs == 10);
  const auto views = views_of(data);
  CHECK(quantization_error(a, views) < 0.5);

  const auto report = assign_clusters(a, data);
  std::size_t total = 0;
  for (const auto& node : report.nodes) {
    total += node.count();
    if (node.count() == 0) {
      CHECK_FALSE(node.purity.has_value());
      CHECK_FALSE(majority_purity(node).has_value());
    } else {
      CHECK(*majority_purity(node) == 1.0);
    }
  }
  CHECK(total == data.size());
  CHECK(bmu_batch(a, views, ExecMode::Parallel) == bmu_batch(a, views, ExecMode::Reference));
}

TEST_CASE("cluster report means and purity") {
  SOMap som;
  som.rows = 1;
  som.cols = 2;
  som.dim = 2;
  som.prototypes = {0, 0, 10, 10};
  std::vector<Window> w{win("a", Polarity::Up, {1, 1}), win("b", Polarity::Down, {-1, 3}),
                        win("c", Polarity::Up, {0, 2}), win("d", Polarity::Down, {9, 9})};
  const auto r = assign_clusters(som, w);
  REQUIRE(r.nodes.size() == 2);
  CHECK(r.nodes[0].member_ids == std::vector<std::string>{"a", "b", "c"});
  CHECK(r.nodes[0].member_indices == std::vector<std::size_t>{0, 1, 2});
  CHECK(*r.nodes[0].purity == doctest::Approx(2.0 / 3.0));
  CHECK(*majority_purity(r.nodes[0]) == doctest::Approx(2.0 / 3.0));
  CHECK(r.nodes[0].mean[0] == doctest::Approx(0.0));
  CHECK(r.nodes[0].mean[1] == doctest::Approx(2.0));
  CHECK(*r.nodes[1].purity == 0.0);
  CHECK(*majority_purity(r.nodes[1]) == 1.0);
}

TEST_CASE("apply_flags modes") {
  std::vector<Window> w{win("a", Polarity::Up, {1}), win("b", Polarity::Down, {1}),
                        win("c", Polarity::Up, {1}), win("d", Polarity::Down, {1})};
  const auto flags = flags_of({{"b", Polarity::Up}, {"c", std::nullopt}, {"zz", Polarity::Down}});

  const auto removed = apply_flags(w, flags, FlagMode::Remove);
  REQUIRE(removed.windows.size() == 2);
  CHECK(removed.windows[0].trace_id == "a");
  CHECK(removed.windows[1].trace_id == "d");
  CHECK(removed.unknown_ids == std::vector<std::string>{"zz"});

  const auto corrected = apply_flags(w, flags, FlagMode::Correct);
  REQUIRE(corrected.windows.size() == 3);
  CHECK(corrected.windows[1].trace_id == "b");
  CHECK(corrected.windows[1].label == Polarity::Up);
  CHECK(corrected.windows[2].trace_id == "d");

  std::vector<Trace> traces(2);
  traces[0].id = "a";
  traces[1].id = "b";
  traces[1].label = Polarity::Down;
  std::vector<std::string> unknown;
  const auto t = apply_flags(traces, flags, FlagMode::Correct, &unknown);
  REQUIRE(t.size() == 2);
  CHECK(t[1].label == Polarity::Up);
  CHECK(unknown.size() == 2);
}

TEST_CASE("cleaning cycle drops flagged windows and bumps the counter") {
  const auto data = two_blobs(10, 2);
  SomConfig c;
  c.rows = 2;
  c.cols = 2;
  c.epochs = 3;
  FlagSet flags = flags_of({{"w0", std::nullopt}, {"w15", Polarity::Up}});
  const auto r = cleaning_cycle(data, flags, c);
  CHECK(flags.cycle() == 1);
  CHECK(r.remaining.size() == 18);
  std::set<std::string> seen;
  for (const auto& node : r.report.nodes) seen.insert(node.member_ids.begin(), node.member_ids.end());
  CHECK(seen.size() == 18);
  CHECK_FALSE(seen.count("w0"));
  CHECK_FALSE(seen.count("w15"));

  FlagSet everything;
  for (const auto& w : data) {
    FlagEntry e;
    e.trace_id = w.trace_id;
    everything.upsert(e);
  }
  CHECK_THROWS_AS(cleaning_cycle(data, everything, c), DataError);
  CHECK(everything.cycle() == 0);
}

TEST_CASE("som save/load is exact") {
  TempDir d("som");
  const auto data = two_blobs(5, 3);
  SomConfig c;
  c.rows = 2;
  c.cols = 3;
  c.epochs = 2;
  c.decay = SomDecay::Constant;
  const auto som = som_train(std::span<const Window>(data), c);
  save_som(d / "s", som);
  CHECK(load_som(d / "s") == som);
  CHECK_THROWS(load_som(d / "nope"));
}
