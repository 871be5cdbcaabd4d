#pragma once

// Settings-grid training, ensemble aggregation and the histogram-based
// uncertainty analytics.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "polarcast/flags.hpp"
#include "polarcast/netcore.hpp"
#include "polarcast/parallel.hpp"
#include "polarcast/trainer.hpp"

namespace polarcast {

// ---------------------------------------------------------------------------
// Grid training and the model registry
// ---------------------------------------------------------------------------

struct SettingsGrid {
  std::vector<Setting> settings = [] {
    auto a = all_settings();
    return std::vector<Setting>(a.begin(), a.end());
  }();
  std::size_t models_per_setting = 7;
};

// Training inputs for one dataset variant.
struct VariantData {
  std::vector<Window> train;  // flip-augmented
  std::vector<Window> val;
};

struct GridData {
  VariantData complete;
  VariantData cleaned;
  // Shared by every setting.
  std::vector<Window> test_complete;
  std::vector<Window> test_cleaned;
};

struct RegistryEntry {
  Setting setting;
  std::size_t member = 0;  // index within its setting
  std::uint64_t seed = 0;
  ModelParams params;
  TrainRecord record;
  double acc_complete = 0.0;
  double acc_cleaned = 0.0;
  std::uint64_t digest = 0;
};

struct SettingSummary {
  Setting setting;
  std::size_t trained = 0;
  bool complete = true;
  std::vector<std::string> failures;
  std::optional<MeanStd> acc_complete;  // none when fewer than 2 members
  std::optional<MeanStd> acc_cleaned;
};

struct Registry {
  ArchConfig arch;
  std::vector<RegistryEntry> entries;
  std::vector<SettingSummary> summaries;

  // Selector grammar: "all", a setting name ("sgd-dropout-complete"), or a
  // setting name with one wildcard field ("*-dropout-*", "sgd-*-complete"),
  // optionally suffixed with "#k" to pick member k.
  std::vector<const RegistryEntry*> select(std::string_view selector) const;
  std::vector<ModelParams> params_of(std::string_view selector) const;
};

// Seed of member i of setting s: base_seed + s * models_per_setting + i.
std::uint64_t member_seed(std::uint64_t base_seed, std::size_t setting_index,
                          std::size_t models_per_setting, std::size_t member);

// Trains models_per_setting models for each setting. Members train
// concurrently when grid_exec is Parallel (each member itself runs serially).
// A failing member marks its setting incomplete; the grid carries on.
Registry train_grid(const ArchConfig& arch, const SettingsGrid& grid, const GridData& data,
                    const TrainConfig& base, std::uint64_t base_seed,
                    ExecMode grid_exec = ExecMode::Reference);

// registry.json + one checkpoint directory per member.
void save_registry(const std::filesystem::path& dir, const Registry& reg);
Registry load_registry(const std::filesystem::path& dir);

// Tables-style text report: mean +/- std per setting on both test sets.
std::string format_accuracy_tables(const Registry& reg);

// ---------------------------------------------------------------------------
// Aggregation and histograms
// ---------------------------------------------------------------------------

// Per-window arithmetic mean of member predictions. Member values are sorted
// and Kahan-summed, so the result does not depend on model order.
std::vector<double> predict_mean(const Network& net, std::span<const ModelParams> models,
                                 std::span<const Window> windows,
                                 ExecMode mode = ExecMode::Reference);

// Same reduction over precomputed member predictions (member-major).
std::vector<double> mean_of_members(std::span<const std::vector<double>> member_predictions);

inline constexpr std::size_t kHistogramBins = 40;

struct PredictionHistogram {
  std::size_t bin_count = kHistogramBins;
  std::vector<double> edges;          // bin_count + 1 uniform edges over [0, 1]
  std::vector<std::size_t> counts;
  std::size_t n_total = 0;
};

// Bin i is [i/bins, (i+1)/bins); the last bin is closed at 1. Throws on values
// outside [0, 1] or NaN.
PredictionHistogram histogram(std::span<const double> predictions,
                              std::size_t bins = kHistogramBins);

struct UncertaintyMetrics {
  double extremal_mass = 0.0;  // first + last bin
  double central_mass = 0.0;   // bins covering [central_lo, central_hi]
  double entropy = 0.0;        // normalized by ln(bins)
};

UncertaintyMetrics uncertainty_metrics(const PredictionHistogram& h, double central_lo = 0.4,
                                       double central_hi = 0.6);

enum class Flatter { A, B, Tie };

struct FlatnessComparison {
  Flatter lower_extremal = Flatter::Tie;
  Flatter higher_central = Flatter::Tie;
  Flatter higher_entropy = Flatter::Tie;

  std::string describe() const;
};

FlatnessComparison compare_flatness(const UncertaintyMetrics& a, const UncertaintyMetrics& b);

enum class ExtremalBin { Left, Right };

struct AuditItem {
  std::string trace_id;
  double prediction = 0.0;
};

// Seeded uniform sample (without replacement) of k ids whose prediction falls
// in the first or last histogram bin; all of them when fewer than k.
std::vector<AuditItem> audit_extremal_bins(std::span<const double> predictions,
                                           std::span<const std::string> ids, ExtremalBin side,
                                           std::size_t k, std::uint64_t seed,
                                           std::size_t bins = kHistogramBins);

struct CorrectionRate {
  std::size_t n_flags = 0;
  std::vector<std::size_t> per_model_counts;
  double mean_count = 0.0;
  double mean_fraction = 0.0;
};

// For each model, counts flagged traces whose thresholded prediction equals
// the corrected label. Every flag must carry a corrected label and be present
// in `windows`.
CorrectionRate mislabel_correction_rate(const Network& net, std::span<const ModelParams> models,
                                        std::span<const Window> windows, const FlagSet& flags,
                                        ExecMode mode = ExecMode::Reference);

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

nlohmann::json histogram_json(const PredictionHistogram& h, const UncertaintyMetrics& m,
                              std::string_view label);
PredictionHistogram histogram_from_json(const nlohmann::json& j);

// Header row, then one "bin_lower,bin_upper,count" line per bin.
std::string histogram_csv(const PredictionHistogram& h);
// Self-contained bar chart.
std::string histogram_svg(const PredictionHistogram& h, std::string_view title);

}  // namespace polarcast
