#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <set>

#include "helpers.hpp"
#include "polarcast/dataio.hpp"
#include "polarcast/ensemble.hpp"

using namespace polarcast;
using testutil::TempDir;

namespace {

// independent binning: count edges at or below v
std::size_t oracle_bin(double v, std::size_t bins) {
  if (v >= 1.0) return bins - 1;
  std::size_t b = 0;
  for (std::size_t i = 1; i < bins; ++i)
    if (static_cast<double>(i) / static_cast<double>(bins) <= v) b = i;
  return b;
}

GridData tiny_grid_data() {
  SynthConfig sc;
  sc.n_defined = 60;
  sc.n_undecidable = 0;
  sc.window_len = 32;
  sc.seed = 12;
  const auto windows = make_windows(synth_generate(sc).traces, {16, 16}).windows;
  GridData g;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (i < 40)
      g.complete.train.push_back(windows[i]);
    else if (i < 50)
      g.complete.val.push_back(windows[i]);
    else
      g.test_complete.push_back(windows[i]);
  }
  g.complete.train = augment_flip(g.complete.train);
  g.cleaned = g.complete;
  g.test_cleaned = g.test_complete;
  return g;
}

TrainConfig quick() {
  TrainConfig c;
  c.batch_size = 16;
  c.max_epochs = 2;
  c.patience = 1;
  return c;
}

}  // namespace

TEST_CASE("histogram binning matches the edge oracle") {
  Rng rng(1);
  std::vector<double> v{0.0, 1.0, 0.025, 0.05, 0.975, 0.5, std::nextafter(0.025, 0.0), std::nextafter(1.0, 0.0)};
  for (int i = 0; i < 5000; ++i) v.push_back(rng.uniform());
  for (std::size_t bins : {40u, 7u, 1u}) {
    const auto h = histogram(v, bins);
    REQUIRE(h.counts.size() == bins);
    REQUIRE(h.edges.size() == bins + 1);
    CHECK(h.edges.front() == 0.0);
    CHECK(h.edges.back() == 1.0);
    std::vector<std::size_t> expected(bins, 0);
    for (double x : v) ++expected[oracle_bin(x, bins)];
    CHECK(h.counts == expected);
    CHECK(h.n_total == v.size());
  }
}

TEST_CASE("histogram rejects out-of-range input") {
  CHECK_THROWS(histogram(std::vector<double>{0.5, 1.0000001}));
  CHECK_THROWS(histogram(std::vector<double>{-1e-12}));
  CHECK_THROWS(histogram(std::vector<double>{std::numeric_limits<double>::quiet_NaN()}));
  CHECK_THROWS(histogram(std::vector<double>{0.5}, 0));
}

TEST_CASE("uncertainty metrics") {
  // 40 bins: first, last, and [0.4, 0.6] = bins 16..23
  std::vector<double> v{0.0, 0.01, 0.99, 1.0, 0.4, 0.45, 0.5999, 0.6, 0.3, 0.7};
  const auto h = histogram(v);
  const auto m = uncertainty_metrics(h);
  CHECK(m.extremal_mass == doctest::Approx(0.4));
  CHECK(m.central_mass == doctest::Approx(0.3));  // 0.6 sits in bin 24
  double ent = 0;
  for (auto c : h.counts)
    if (c) {
      const double p = static_cast<double>(c) / 10.0;
      ent -= p * std::log(p);
    }
  CHECK(m.entropy == doctest::Approx(ent / std::log(40.0)));

  std::vector<double> uniform;
  for (int i = 0; i < 40; ++i) uniform.push_back((i + 0.5) / 40.0);
  CHECK(uncertainty_metrics(histogram(uniform)).entropy == doctest::Approx(1.0));
  CHECK(uncertainty_metrics(histogram(std::vector<double>(9, 0.5))).entropy == 0.0);
  CHECK_THROWS(uncertainty_metrics(histogram(std::vector<double>{})));
}

TEST_CASE("flatness comparison") {
  UncertaintyMetrics a{0.5, 0.1, 0.4}, b{0.3, 0.1, 0.6};
  const auto c = compare_flatness(a, b);
  CHECK(c.lower_extremal == Flatter::B);
  CHECK(c.higher_central == Flatter::Tie);
  CHECK(c.higher_entropy == Flatter::B);
  CHECK_FALSE(c.describe().empty());
}

TEST_CASE("mean of members is order independent") {
  Rng rng(3);
  std::vector<std::vector<double>> members(7, std::vector<double>(50));
  for (auto& m : members)
    for (auto& x : m) x = rng.uniform();
  const auto ref = mean_of_members(members);
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(members);
    const auto again = mean_of_members(members);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::memcmp(&ref[i], &again[i], sizeof(double)) == 0);
  }
  for (std::size_t i = 0; i < ref.size(); ++i) {
    long double s = 0;
    for (const auto& m : members) s += m[i];
    CHECK(ref[i] == doctest::Approx(static_cast<double>(s / 7)).epsilon(1e-14));
  }
  CHECK_THROWS(mean_of_members(std::vector<std::vector<double>>{}));
}

TEST_CASE("extremal audit sampling") {
  std::vector<double> p;
  std::vector<std::string> ids;
  for (int i = 0; i < 100; ++i) {
    p.push_back(i < 30 ? 0.001 : (i < 40 ? 0.999 : 0.5));
    ids.push_back("t" + std::to_string(i));
  }
  const auto left = audit_extremal_bins(p, ids, ExtremalBin::Left, 10, 5);
  CHECK(left.size() == 10);
  std::set<std::string> uniq;
  for (const auto& a : left) {
    uniq.insert(a.trace_id);
    CHECK(a.prediction == 0.001);
  }
  CHECK(uniq.size() == 10);
  CHECK(audit_extremal_bins(p, ids, ExtremalBin::Left, 10, 5).front().trace_id == left.front().trace_id);
  CHECK(audit_extremal_bins(p, ids, ExtremalBin::Right, 400, 5).size() == 10);

  bool differs = false;
  const auto other = audit_extremal_bins(p, ids, ExtremalBin::Left, 10, 6);
  for (std::size_t i = 0; i < 10; ++i) differs = differs || other[i].trace_id != left[i].trace_id;
  CHECK(differs);
  CHECK_THROWS(audit_extremal_bins(p, std::span<const std::string>(ids).first(5), ExtremalBin::Left, 1, 0));
}

TEST_CASE("member seeds") {
  CHECK(member_seed(100, 0, 7, 0) == 100);
  CHECK(member_seed(100, 2, 7, 3) == 117);
}

TEST_CASE("grid training, selectors and registry round trip") {
  const auto data = tiny_grid_data();
  SettingsGrid grid;
  grid.settings = {Setting::parse("sgd-nodrop-complete"), Setting::parse("adam-dropout-cleaned")};
  grid.models_per_setting = 2;
  const auto reg = train_grid(testutil::tiny_arch(), grid, data, quick(), 50);
  REQUIRE(reg.entries.size() == 4);
  CHECK(reg.entries[3].seed == 53);
  CHECK(reg.select("all").size() == 4);
  CHECK(reg.select("sgd-nodrop-complete").size() == 2);
  CHECK(reg.select("*-dropout-*").size() == 2);
  CHECK(reg.select("adam-*-cleaned#1").size() == 1);
  CHECK(reg.select("adam-*-cleaned#1").front()->member == 1);
  CHECK(reg.select("sgd-dropout-complete").empty());
  CHECK_THROWS(reg.select("nonsense"));
  REQUIRE(reg.summaries.size() == 2);
  CHECK(reg.summaries[0].acc_complete.has_value());
  CHECK(reg.summaries[0].complete);

  // same seeds, same models, regardless of grid scheduling
  const auto par = train_grid(testutil::tiny_arch(), grid, data, quick(), 50, ExecMode::Parallel);
  for (std::size_t i = 0; i < 4; ++i) CHECK(par.entries[i].params == reg.entries[i].params);

  TempDir d("registry");
  save_registry(d.path, reg);
  const auto back = load_registry(d.path);
  REQUIRE(back.entries.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.entries[i].params == reg.entries[i].params);
    CHECK(back.entries[i].setting == reg.entries[i].setting);
    CHECK(back.entries[i].acc_complete == reg.entries[i].acc_complete);
  }
  const auto tables = format_accuracy_tables(back);
  CHECK(tables.find("Training on complete dataset") != std::string::npos);
  CHECK(tables.find("Training on cleaned dataset") != std::string::npos);

  // one member per setting: no spread to report
  grid.models_per_setting = 1;
  const auto single = train_grid(testutil::tiny_arch(), grid, data, quick(), 50);
  CHECK_FALSE(single.summaries[0].acc_complete.has_value());
}

TEST_CASE("ensemble mean prediction and correction count against direct evaluation") {
  const auto data = tiny_grid_data();
  SettingsGrid grid;
  grid.settings = {Setting::parse("sgd-nodrop-complete")};
  grid.models_per_setting = 3;
  const auto reg = train_grid(testutil::tiny_arch(), grid, data, quick(), 7);
  const Network net(testutil::tiny_arch());
  const auto models = reg.params_of("all");
  const auto mean = predict_mean(net, models, data.test_complete);
  REQUIRE(mean.size() == data.test_complete.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double s = 0;
    for (const auto& m : models) s += net.predict(m, data.test_complete[i].values);
    CHECK(mean[i] == doctest::Approx(s / 3).epsilon(1e-12));
  }

  FlagSet flags;
  for (std::size_t i = 0; i < 6; ++i) {
    FlagEntry e;
    e.trace_id = data.test_complete[i].trace_id;
    e.reason = FlagReason::Mislabeled;
    e.corrected_label = i % 2 ? Polarity::Up : Polarity::Down;
    flags.upsert(e);
  }
  const auto rate = mislabel_correction_rate(net, models, data.test_complete, flags);
  CHECK(rate.n_flags == 6);
  REQUIRE(rate.per_model_counts.size() == 3);
  double total = 0;
  for (std::size_t m = 0; m < 3; ++m) {
    std::size_t expected = 0;
    for (std::size_t i = 0; i < 6; ++i)
      expected += predicted_class(net.predict(models[m], data.test_complete[i].values)) ==
                  *flags.find(data.test_complete[i].trace_id)->corrected_label;
    CHECK(rate.per_model_counts[m] == expected);
    total += static_cast<double>(expected);
  }
  CHECK(rate.mean_count == doctest::Approx(total / 3));
  CHECK(rate.mean_fraction == doctest::Approx(total / 18));

  FlagEntry amb;
  amb.trace_id = data.test_complete[7].trace_id;
  flags.upsert(amb);
  CHECK_THROWS(mislabel_correction_rate(net, models, data.test_complete, flags));
}

TEST_CASE("histogram artifacts") {
  const auto h = histogram(std::vector<double>{0.0, 0.3, 0.31, 1.0});
  const auto m = uncertainty_metrics(h);
  const auto j = histogram_json(h, m, "ens");
  const auto back = histogram_from_json(j);
  CHECK(back.counts == h.counts);
  CHECK(back.edges == h.edges);
  CHECK(back.n_total == 4);
  const auto csv = histogram_csv(h);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 41);
  CHECK(csv.rfind("bin_lower,bin_upper,count", 0) == 0);
  const auto svg = histogram_svg(h, "a <b>");
  CHECK(svg.find("<svg") != std::string::npos);
  CHECK(svg.find("a <b>") == std::string::npos);
}
