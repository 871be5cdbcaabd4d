#include "polarcast/trainer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include "polarcast/rng.hpp"

namespace polarcast {

// ---------------------------------------------------------------------------
// Settings
// ---------------------------------------------------------------------------

std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::SGD ? "sgd" : "adam"; }

std::string_view to_string(DatasetVariant v) {
  return v == DatasetVariant::Complete ? "complete" : "cleaned";
}

std::string_view to_string(StopReason r) {
  return r == StopReason::Patience ? "patience" : "max_epochs";
}

std::string Setting::name() const {
  return std::string(to_string(optimizer)) + (dropout ? "-dropout-" : "-nodrop-") +
         std::string(to_string(variant));
}

Setting Setting::parse(std::string_view text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lc == 'x' || lc == '-' || lc == '/' || lc == ':' || lc == '_') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(lc);
    }
  }
  parts.push_back(cur);
  if (parts.size() != 3)
    throw std::invalid_argument("setting '" + std::string(text) +
                                "' must look like {sgd|adam}x{dropout|nodrop}x{complete|cleaned}");
  Setting s;
  if (parts[0] == "sgd")
    s.optimizer = OptimizerKind::SGD;
  else if (parts[0] == "adam")
    s.optimizer = OptimizerKind::ADAM;
  else
    throw std::invalid_argument("unknown optimizer '" + parts[0] + "'");
  if (parts[1] == "dropout")
    s.dropout = true;
  else if (parts[1] == "nodrop")
    s.dropout = false;
  else
    throw std::invalid_argument("unknown dropout flag '" + parts[1] + "'");
  if (parts[2] == "complete")
    s.variant = DatasetVariant::Complete;
  else if (parts[2] == "cleaned")
    s.variant = DatasetVariant::SomCleaned;
  else
    throw std::invalid_argument("unknown dataset variant '" + parts[2] + "'");
  return s;
}

std::array<Setting, 8> all_settings() {
  std::array<Setting, 8> out;
  std::size_t i = 0;
  for (auto variant : {DatasetVariant::Complete, DatasetVariant::SomCleaned})
    for (auto opt : {OptimizerKind::SGD, OptimizerKind::ADAM})
      for (bool drop : {false, true}) out[i++] = {opt, drop, variant};
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be at least 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw std::invalid_argument("ADAM betas must be in [0, 1)");
  if (!(adam_epsilon > 0.0)) throw std::invalid_argument("adam_epsilon must be positive");
}

void TrainConfig::apply(const Setting& s) {
  optimizer = s.optimizer;
  dropout_enabled = s.dropout;
  dataset_variant = s.variant;
}

// ---------------------------------------------------------------------------
// Early stopping
// ---------------------------------------------------------------------------

EarlyStopping::EarlyStopping(std::size_t patience, std::size_t max_epochs)
    : patience_(patience), max_epochs_(max_epochs) {}

bool EarlyStopping::observe(double val_loss) {
  ++epochs_;
  if (best_epoch_ == 0 || val_loss < best_loss_) {
    // NaN never compares lower, so a NaN first epoch still seeds the best.
    if (best_epoch_ == 0 || !std::isnan(val_loss)) {
      best_loss_ = val_loss;
      best_epoch_ = epochs_;
      since_best_ = 0;
      return true;
    }
  }
  ++since_best_;
  return false;
}

bool EarlyStopping::should_stop() const {
  return since_best_ >= patience_ || epochs_ >= max_epochs_;
}

StopReason EarlyStopping::reason() const {
  return since_best_ >= patience_ ? StopReason::Patience : StopReason::MaxEpochs;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

Evaluation evaluate(const Network& net, const ModelParams& params, std::span<const Window> windows,
                    ExecMode mode) {
  if (windows.empty()) throw DataError("cannot evaluate on an empty set");
  for (const auto& w : windows)
    if (!is_defined(w.label))
      throw DataError("evaluate needs defined labels ('" + w.trace_id + "' is undecidable)");
  Evaluation ev;
  ev.predictions = predict_batch(net, params, windows, mode);
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const Polarity truth = windows[i].label;
    const Polarity pred = predicted_class(ev.predictions[i]);
    ev.confusion[truth == Polarity::Up ? 0 : 1][pred == Polarity::Up ? 0 : 1]++;
    if (truth == pred) ++correct;
    loss += bce_loss(ev.predictions[i], target_of(truth));
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(windows.size());
  ev.mean_loss = loss / static_cast<double>(windows.size());
  return ev;
}

MeanStd mean_accuracy(std::span<const double> accuracies) {
  if (accuracies.size() < 2) throw std::invalid_argument("mean_accuracy needs at least 2 records");
  const double n = static_cast<double>(accuracies.size());
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  const double mean = sum / n;
  double ss = 0.0;
  for (double a : accuracies) ss += (a - mean) * (a - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

TrainResult train(const ArchConfig& arch_in, const TrainData& data, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();
  if (data.train.empty()) throw DataError("training split is empty");
  if (data.val.empty()) throw DataError("validation split is empty");

  ArchConfig arch = arch_in;
  arch.dropout_enabled = cfg.dropout_enabled;
  const Network net(arch);

  ModelParams params = net.init_params(derive_seed(cfg.seed, 0x1417));
  TrainResult result;
  result.best = params;

  SgdState sgd = make_sgd_state(params);
  AdamState adam = make_adam_state(params);
  const AdamHyper adam_h{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon};

  GradientWorkspace ws(net);
  Gradients grads = net.zero_gradients();

  std::vector<const Window*> order;
  order.reserve(data.train.size());
  for (const auto& w : data.train) order.push_back(&w);
  Rng shuffler(derive_seed(cfg.seed, 0x5401));

  EarlyStopping stopper(cfg.patience, cfg.max_epochs);
  const std::size_t n = order.size();

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffler.shuffle(order);
    if (hooks.on_epoch_order) hooks.on_epoch_order(epoch, order);

    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++step) {
      const std::size_t end = std::min(n, begin + cfg.batch_size);
      std::span<const Window* const> batch(order.data() + begin, end - begin);
      const std::uint64_t mask_seed = derive_seed(cfg.seed, 0xd70, epoch, step);
      loss_sum += batch_gradients(net, params, batch, mask_seed, cfg.exec, ws, grads);
      seen += batch.size();
      grads.scale(1.0 / static_cast<double>(batch.size()));
      try {
        if (cfg.optimizer == OptimizerKind::SGD)
          sgd_step(params, grads, sgd, cfg.learning_rate, cfg.momentum);
        else
          adam_step(params, grads, adam, adam_h);
      } catch (const NonFiniteGradient& e) {
        rec.diagnostic = "epoch aborted at step " + std::to_string(step) + ": " + e.what();
        break;
      }
    }
    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;

    const Evaluation val = evaluate(net, params, data.val, cfg.exec);
    rec.val_accuracy = val.accuracy;
    rec.val_loss = val.mean_loss;
    if (hooks.val_loss_override)
      if (auto v = hooks.val_loss_override(epoch, params)) rec.val_loss = *v;

    if (stopper.observe(rec.val_loss)) result.best = params;
    result.record.epochs.push_back(rec);
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, params);
    if (stopper.should_stop()) break;
  }

  result.record.best_epoch = stopper.best_epoch();
  result.record.best_val_loss = stopper.best_loss();
  result.record.stop_reason = stopper.reason();
  return result;
}

}  // namespace polarcast
