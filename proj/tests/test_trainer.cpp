#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "helpers.hpp"
#include "polarcast/checkpoint.hpp"
#include "polarcast/dataio.hpp"
#include "polarcast/trainer.hpp"

using namespace polarcast;
using testutil::TempDir;

namespace {

struct Toy {
  std::vector<Window> train, val;
};

Toy toy_data(std::size_t n, std::uint64_t seed) {
  SynthConfig sc;
  sc.n_defined = n;
  sc.n_undecidable = 0;
  sc.window_len = 32;
  sc.seed = seed;
  const auto traces = synth_generate(sc).traces;
  const auto windows = make_windows(traces, {16, 16}).windows;
  Toy t;
  for (std::size_t i = 0; i < windows.size(); ++i) (i % 5 == 0 ? t.val : t.train).push_back(windows[i]);
  t.train = augment_flip(t.train);
  return t;
}

TrainConfig quick_cfg() {
  TrainConfig c;
  c.batch_size = 16;
  c.max_epochs = 3;
  c.patience = 2;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("setting names round-trip and accept other separators") {
  for (const auto& s : all_settings()) CHECK(Setting::parse(s.name()) == s);
  const Setting s = Setting::parse("sgdxnodropxcleaned");
  CHECK(s.optimizer == OptimizerKind::SGD);
  CHECK_FALSE(s.dropout);
  CHECK(s.variant == DatasetVariant::SomCleaned);
  CHECK(Setting::parse("adam/dropout/complete").name() == "adam-dropout-complete");
  CHECK_THROWS(Setting::parse("rmsprop-dropout-complete"));
  CHECK_THROWS(Setting::parse("sgd-dropout"));
}

TEST_CASE("all_settings order") {
  const auto s = all_settings();
  CHECK(s[0].name() == "sgd-nodrop-complete");
  CHECK(s[1].name() == "sgd-dropout-complete");
  CHECK(s[2].name() == "adam-nodrop-complete");
  CHECK(s[3].name() == "adam-dropout-complete");
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(s[i].variant == DatasetVariant::Complete);
    CHECK(s[i + 4].variant == DatasetVariant::SomCleaned);
    CHECK(s[i + 4].optimizer == s[i].optimizer);
    CHECK(s[i + 4].dropout == s[i].dropout);
  }
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS(c.validate());
  c = {};
  c.learning_rate = -1;
  CHECK_THROWS(c.validate());
  c = {};
  c.patience = 0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("early stopping: improvement is strict") {
  EarlyStopping es(2, 10);
  CHECK(es.observe(1.0));
  CHECK_FALSE(es.observe(1.0));  // equal is not better
  CHECK_FALSE(es.should_stop());
  CHECK_FALSE(es.observe(1.5));
  CHECK(es.should_stop());
  CHECK(es.reason() == StopReason::Patience);
  CHECK(es.best_epoch() == 1);

  EarlyStopping cap(5, 3);
  for (double v : {3.0, 2.0, 1.0}) cap.observe(v);
  CHECK(cap.should_stop());
  CHECK(cap.reason() == StopReason::MaxEpochs);
  CHECK(cap.best_epoch() == 3);
}

TEST_CASE("training is deterministic and exec-mode independent") {
  const auto d = toy_data(60, 3);
  auto cfg = quick_cfg();
  cfg.dropout_enabled = true;
  const auto a = train(testutil::tiny_arch(), {d.train, d.val}, cfg);
  const auto b = train(testutil::tiny_arch(), {d.train, d.val}, cfg);
  cfg.exec = ExecMode::Parallel;
  const auto c = train(testutil::tiny_arch(), {d.train, d.val}, cfg);
  CHECK(a.best == b.best);
  CHECK(a.best == c.best);
  REQUIRE(a.record.epochs.size() == c.record.epochs.size());
  for (std::size_t i = 0; i < a.record.epochs.size(); ++i)
    CHECK(a.record.epochs[i].val_loss == c.record.epochs[i].val_loss);

  cfg.seed = 8;
  CHECK_FALSE(train(testutil::tiny_arch(), {d.train, d.val}, cfg).best == a.best);
}

TEST_CASE("each epoch visits a permutation of the training set") {
  const auto d = toy_data(40, 4);
  std::vector<std::vector<std::string>> orders;
  TrainHooks hooks;
  hooks.on_epoch_order = [&](std::size_t, std::span<const Window* const> order) {
    std::vector<std::string> ids;
    for (const auto* w : order) ids.push_back(w->trace_id);
    orders.push_back(ids);
  };
  train(testutil::tiny_arch(), {d.train, d.val}, quick_cfg(), hooks);
  REQUIRE(orders.size() >= 2);
  std::vector<std::string> expected;
  for (const auto& w : d.train) expected.push_back(w.trace_id);
  std::sort(expected.begin(), expected.end());
  for (auto o : orders) {
    std::sort(o.begin(), o.end());
    CHECK(o == expected);
  }
  CHECK(orders[0] != orders[1]);
}

TEST_CASE("best snapshot is returned, not the last epoch") {
  const auto d = toy_data(40, 5);
  auto cfg = quick_cfg();
  cfg.max_epochs = 5;
  cfg.patience = 3;
  std::vector<ModelParams> seen;
  TrainHooks hooks;
  const std::vector<double> scripted{0.9, 0.4, 0.6, 0.7, 0.8};
  hooks.val_loss_override = [&](std::size_t epoch, const ModelParams&) -> std::optional<double> {
    return scripted.at(epoch - 1);
  };
  hooks.on_epoch_end = [&](std::size_t, const ModelParams& p) { seen.push_back(p); };
  const auto r = train(testutil::tiny_arch(), {d.train, d.val}, cfg, hooks);
  CHECK(r.record.best_epoch == 2);
  CHECK(r.record.stop_reason == StopReason::Patience);
  CHECK(r.record.epochs.size() == 5);
  REQUIRE(seen.size() == 5);
  CHECK(r.best == seen[1]);
  CHECK_FALSE(r.best == seen[4]);
}

TEST_CASE("non-finite gradients leave parameters untouched") {
  Network net(testutil::tiny_arch());
  auto params = net.init_params(1);
  const auto before = params;
  Gradients g = net.zero_gradients();
  g.tensors[0][0] = std::numeric_limits<double>::quiet_NaN();
  auto sgd = make_sgd_state(params);
  CHECK_THROWS_AS(sgd_step(params, g, sgd, 0.01, 0.8), NonFiniteGradient);
  CHECK(params == before);
  auto adam = make_adam_state(params);
  g.tensors[1][0] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(adam_step(params, g, adam, {}), NonFiniteGradient);
  CHECK(params == before);
}

TEST_CASE("evaluate and mean_accuracy") {
  Network net(testutil::tiny_arch());
  const auto params = net.init_params(2);
  const auto d = toy_data(30, 6);
  const auto e = evaluate(net, params, d.val);
  std::size_t correct = 0, total = 0;
  for (const auto& row : e.confusion)
    for (auto c : row) total += c;
  correct = e.confusion[0][0] + e.confusion[1][1];
  CHECK(total == d.val.size());
  CHECK(e.accuracy == doctest::Approx(static_cast<double>(correct) / static_cast<double>(total)));

  const std::vector<double> acc{0.9, 0.95, 1.0};
  const auto ms = mean_accuracy(acc);
  CHECK(ms.mean == doctest::Approx(0.95));
  CHECK(ms.std == doctest::Approx(0.05));
  CHECK(predicted_class(0.5) == Polarity::Up);
  CHECK(predicted_class(0.4999) == Polarity::Down);
}

TEST_CASE("checkpoint round trip and failure modes") {
  TempDir d("ckpt");
  Network net(testutil::tiny_arch());
  const auto params = net.init_params(9);
  CheckpointMeta meta{testutil::tiny_arch(), 9, "adam-dropout-cleaned", 4, 0.25};
  save_checkpoint(d / "m", params, meta);
  const auto back = load_checkpoint(d / "m");
  CHECK(back.params == params);
  CHECK(params_digest(back.params) == params_digest(params));
  CHECK(back.meta.arch == meta.arch);
  CHECK(back.meta.setting == meta.setting);
  CHECK(back.meta.epoch == 4);
  CHECK(hex_digest(params_digest(params)).size() == 16);

  CHECK_THROWS(load_checkpoint(d / "missing"));
  // truncate a tensor file
  std::filesystem::path victim;
  for (const auto& e : std::filesystem::directory_iterator(d / "m"))
    if (e.path().extension() == ".f32") victim = e.path();
  std::filesystem::resize_file(victim, std::filesystem::file_size(victim) - 4);
  CHECK_THROWS(load_checkpoint(d / "m"));
}
