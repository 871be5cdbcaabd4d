#include "polarcast/json_io.hpp"

#include <fstream>

namespace polarcast {

using nlohmann::json;

namespace {

// Reads `key` into `out` only when present.
template <typename T>
void opt(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) it->get_to(out);
}

}  // namespace

void to_json(json& j, const ArchConfig& a) {
  j = json{{"window_len", a.window_len},
           {"conv_channels", a.conv_channels},
           {"kernel_size", a.kernel_size},
           {"pool_every_block", a.pool_every_block},
           {"dense_widths", a.dense_widths},
           {"dropout_enabled", a.dropout_enabled},
           {"dropout_rate", a.dropout_rate}};
}

void from_json(const json& j, ArchConfig& a) {
  opt(j, "window_len", a.window_len);
  opt(j, "conv_channels", a.conv_channels);
  opt(j, "kernel_size", a.kernel_size);
  opt(j, "pool_every_block", a.pool_every_block);
  opt(j, "dense_widths", a.dense_widths);
  opt(j, "dropout_enabled", a.dropout_enabled);
  opt(j, "dropout_rate", a.dropout_rate);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"optimizer", to_string(c.optimizer)},
           {"learning_rate", c.learning_rate},
           {"momentum", c.momentum},
           {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},
           {"adam_epsilon", c.adam_epsilon},
           {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},
           {"patience", c.patience},
           {"dropout_enabled", c.dropout_enabled},
           {"dataset_variant", to_string(c.dataset_variant)},
           {"seed", c.seed}};
}

void from_json(const json& j, TrainConfig& c) {
  if (auto it = j.find("optimizer"); it != j.end())
    c.optimizer = it->get<std::string>() == "adam" ? OptimizerKind::ADAM : OptimizerKind::SGD;
  opt(j, "learning_rate", c.learning_rate);
  opt(j, "momentum", c.momentum);
  opt(j, "adam_beta1", c.adam_beta1);
  opt(j, "adam_beta2", c.adam_beta2);
  opt(j, "adam_epsilon", c.adam_epsilon);
  opt(j, "batch_size", c.batch_size);
  opt(j, "max_epochs", c.max_epochs);
  opt(j, "patience", c.patience);
  opt(j, "dropout_enabled", c.dropout_enabled);
  if (auto it = j.find("dataset_variant"); it != j.end())
    c.dataset_variant = it->get<std::string>() == "cleaned" ? DatasetVariant::SomCleaned
                                                            : DatasetVariant::Complete;
  opt(j, "seed", c.seed);
}

void to_json(json& j, const TrainRecord& r) {
  json epochs = json::array();
  for (const auto& e : r.epochs) {
    json je{{"epoch", e.epoch},
            {"train_loss", e.train_loss},
            {"val_loss", e.val_loss},
            {"val_accuracy", e.val_accuracy}};
    if (!e.diagnostic.empty()) je["diagnostic"] = e.diagnostic;
    epochs.push_back(std::move(je));
  }
  j = json{{"epochs", std::move(epochs)},
           {"best_epoch", r.best_epoch},
           {"best_val_loss", r.best_val_loss},
           {"stop_reason", to_string(r.stop_reason)}};
}

void from_json(const json& j, TrainRecord& r) {
  r.epochs.clear();
  for (const auto& je : j.at("epochs")) {
    EpochRecord e;
    je.at("epoch").get_to(e.epoch);
    je.at("train_loss").get_to(e.train_loss);
    je.at("val_loss").get_to(e.val_loss);
    je.at("val_accuracy").get_to(e.val_accuracy);
    opt(je, "diagnostic", e.diagnostic);
    r.epochs.push_back(std::move(e));
  }
  j.at("best_epoch").get_to(r.best_epoch);
  j.at("best_val_loss").get_to(r.best_val_loss);
  r.stop_reason = j.at("stop_reason").get<std::string>() == "patience" ? StopReason::Patience
                                                                        : StopReason::MaxEpochs;
}

void to_json(json& j, const SynthConfig& c) {
  j = json{{"n_defined", c.n_defined},         {"n_undecidable", c.n_undecidable},
           {"n_mislabeled", c.n_mislabeled},   {"snr_defined", c.snr_defined},
           {"snr_ambiguous", c.snr_ambiguous}, {"window_len", c.window_len},
           {"sampling_rate", c.sampling_rate}, {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
  opt(j, "n_defined", c.n_defined);
  opt(j, "n_undecidable", c.n_undecidable);
  opt(j, "n_mislabeled", c.n_mislabeled);
  opt(j, "snr_defined", c.snr_defined);
  opt(j, "snr_ambiguous", c.snr_ambiguous);
  opt(j, "window_len", c.window_len);
  opt(j, "sampling_rate", c.sampling_rate);
  opt(j, "seed", c.seed);
}

void to_json(json& j, const SplitSpec& s) {
  j = json{{"train_frac", s.train_frac},
           {"val_frac", s.val_frac},
           {"test_frac", s.test_frac},
           {"seed", s.seed}};
}

void from_json(const json& j, SplitSpec& s) {
  opt(j, "train_frac", s.train_frac);
  opt(j, "val_frac", s.val_frac);
  opt(j, "test_frac", s.test_frac);
  opt(j, "seed", s.seed);
}

void to_json(json& j, const WindowSpec& w) {
  j = json{{"pre", w.pre}, {"post", w.post}, {"normalization", "maxabs"}};
}

void from_json(const json& j, WindowSpec& w) {
  opt(j, "pre", w.pre);
  opt(j, "post", w.post);
}

void to_json(json& j, const SomConfig& c) {
  j = json{{"rows", c.rows},
           {"cols", c.cols},
           {"epochs", c.epochs},
           {"alpha0", c.alpha0},
           {"sigma0", c.sigma0},
           {"decay", c.decay == SomDecay::Constant ? "constant" : "exponential"},
           {"seed", c.seed}};
}

void from_json(const json& j, SomConfig& c) {
  opt(j, "rows", c.rows);
  opt(j, "cols", c.cols);
  opt(j, "epochs", c.epochs);
  opt(j, "alpha0", c.alpha0);
  opt(j, "sigma0", c.sigma0);
  if (auto it = j.find("decay"); it != j.end())
    c.decay = it->get<std::string>() == "constant" ? SomDecay::Constant : SomDecay::Exponential;
  opt(j, "seed", c.seed);
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

}  // namespace polarcast
