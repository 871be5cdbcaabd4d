#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "polarcast/netcore.hpp"
#include "polarcast/optim.hpp"
#include "polarcast/parallel.hpp"
#include "polarcast/types.hpp"

namespace polarcast {

enum class OptimizerKind { SGD, ADAM };
enum class DatasetVariant { Complete, SomCleaned };

// One cell of the {optimizer} x {dropout} x {dataset} grid.
struct Setting {
  OptimizerKind optimizer = OptimizerKind::SGD;
  bool dropout = false;
  DatasetVariant variant = DatasetVariant::Complete;

  // Canonical form "sgd-dropout-complete"; parse() also accepts 'x', '/',
  // ':' and '_' as separators ("sgdxnodropxcleaned").
  std::string name() const;
  static Setting parse(std::string_view text);
  bool operator==(const Setting&) const = default;
};

// The eight settings, complete-data sessions first, then cleaned; within each
// block SGD before ADAM and no-dropout before dropout.
std::array<Setting, 8> all_settings();

std::string_view to_string(OptimizerKind k);
std::string_view to_string(DatasetVariant v);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::SGD;
  double learning_rate = 0.01;  // reported usable range [0.007, 0.015]
  double momentum = 0.8;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 0.01;
  std::size_t batch_size = 512;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  bool dropout_enabled = false;
  DatasetVariant dataset_variant = DatasetVariant::Complete;
  std::uint64_t seed = 0;
  // Reference forces serial execution; both modes give identical results.
  ExecMode exec = ExecMode::Reference;

  void validate() const;
  Setting setting() const { return {optimizer, dropout_enabled, dataset_variant}; }
  void apply(const Setting& s);
};

enum class StopReason { Patience, MaxEpochs };
std::string_view to_string(StopReason r);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  std::string diagnostic;  // set when the epoch was aborted
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  StopReason stop_reason = StopReason::MaxEpochs;
};

// Patience rule on validation loss. "Improved" means strictly below the best
// value seen so far.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, std::size_t max_epochs);

  // Records the next epoch's validation loss; returns true when it improved.
  bool observe(double val_loss);
  bool should_stop() const;
  StopReason reason() const;

  std::size_t epochs_seen() const { return epochs_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_, max_epochs_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  double best_loss_ = 0.0;
};

struct TrainData {
  std::span<const Window> train;  // already flip-augmented
  std::span<const Window> val;
};

struct TrainHooks {
  // When set and returning a value, replaces the computed validation loss.
  std::function<std::optional<double>(std::size_t epoch, const ModelParams&)> val_loss_override;
  std::function<void(std::size_t epoch, const ModelParams&)> on_epoch_end;
  // Sees the shuffled training order of each epoch.
  std::function<void(std::size_t epoch, std::span<const Window* const>)> on_epoch_order;
};

struct TrainResult {
  ModelParams best;  // best-validation snapshot, never simply the last epoch
  TrainRecord record;
};

// The architecture's dropout flag is taken from cfg.dropout_enabled.
TrainResult train(const ArchConfig& arch, const TrainData& data, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

struct Evaluation {
  double accuracy = 0.0;
  // confusion[true][predicted], index 0 = Up, 1 = Down
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  std::vector<double> predictions;
  double mean_loss = 0.0;
};

// Predicted class is Up when p >= 0.5.
Evaluation evaluate(const Network& net, const ModelParams& params,
                    std::span<const Window> windows, ExecMode mode = ExecMode::Reference);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
};

MeanStd mean_accuracy(std::span<const double> accuracies);

inline Polarity predicted_class(double p) { return p >= 0.5 ? Polarity::Up : Polarity::Down; }

}  // namespace polarcast
