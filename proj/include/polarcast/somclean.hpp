#pragma once

// Online Kohonen SOM over normalized windows, cluster reports for human
// review, and the flag/retrain cleaning cycle.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polarcast/flags.hpp"
#include "polarcast/parallel.hpp"
#include "polarcast/types.hpp"

namespace polarcast {

enum class SomDecay { Exponential, Constant };

struct SomConfig {
  std::size_t rows = 10;
  std::size_t cols = 10;
  std::size_t epochs = 20;
  double alpha0 = 0.5;
  double sigma0 = 0.0;  // <= 0 selects max(rows, cols) / 2
  SomDecay decay = SomDecay::Exponential;
  std::uint64_t seed = 0;

  double initial_sigma() const;
};

struct GridPos {
  std::size_t row = 0, col = 0;
  bool operator==(const GridPos&) const = default;
};

struct SOMap {
  std::size_t rows = 0, cols = 0, dim = 0;
  std::vector<float> prototypes;  // node-major, rows*cols*dim
  std::size_t trained_epochs = 0;
  double alpha0 = 0.0, sigma0 = 0.0;
  SomDecay decay = SomDecay::Exponential;

  std::size_t nodes() const { return rows * cols; }
  std::span<const float> prototype(std::size_t node) const {
    return {prototypes.data() + node * dim, dim};
  }
  GridPos position(std::size_t node) const { return {node / cols, node % cols}; }
  bool operator==(const SOMap&) const = default;
};

using SampleView = std::span<const float>;

std::vector<SampleView> views_of(std::span<const Window> windows);

// Prototypes start as seeded random samples; each epoch visits the samples
// in a seeded shuffled order and applies
//   w_j += alpha(t) * exp(-d^2(j, bmu) / (2 sigma(t)^2)) * (x - w_j)
// with alpha(t) = alpha0 exp(-t/T), sigma(t) = sigma0 exp(-t/T), t the global
// sample counter and T the total number of updates.
SOMap som_train(std::span<const SampleView> samples, const SomConfig& cfg);
SOMap som_train(std::span<const Window> windows, const SomConfig& cfg);

// Returns the lowest row-major node among the nearest prototypes.
std::size_t bmu_index(const SOMap& som, SampleView x);
GridPos bmu(const SOMap& som, SampleView x);

std::vector<std::size_t> bmu_batch(const SOMap& som, std::span<const SampleView> samples,
                                   ExecMode mode = ExecMode::Reference);

// Mean Euclidean distance from each sample to its BMU prototype.
double quantization_error(const SOMap& som, std::span<const SampleView> samples);

struct NodeCluster {
  GridPos pos;
  std::vector<std::string> member_ids;
  std::vector<std::size_t> member_indices;  // into the assigned window list
  std::optional<double> purity;             // Up fraction; empty node -> none
  std::vector<double> mean;                 // length dim (zeros for empty nodes)

  std::size_t count() const { return member_ids.size(); }
};

struct ClusterReport {
  std::size_t rows = 0, cols = 0;
  std::vector<NodeCluster> nodes;  // row-major
};

ClusterReport assign_clusters(const SOMap& som, std::span<const Window> windows,
                              ExecMode mode = ExecMode::Reference);

// Majority-label purity max(f, 1 - f) of a node; none for empty nodes.
std::optional<double> majority_purity(const NodeCluster& node);

enum class FlagMode { Remove, Correct };

struct ApplyFlagsResult {
  std::vector<Window> windows;
  std::vector<std::string> unknown_ids;  // flagged ids absent from the dataset
};

// Remove drops every flagged item. Correct relabels Mislabeled entries with
// their corrected label and drops Ambiguous ones. Order is preserved.
ApplyFlagsResult apply_flags(std::span<const Window> dataset, const FlagSet& flags, FlagMode mode);
std::vector<Trace> apply_flags(std::span<const Trace> dataset, const FlagSet& flags, FlagMode mode,
                               std::vector<std::string>* unknown_ids = nullptr);

struct CycleResult {
  SOMap som;
  ClusterReport report;
  std::vector<Window> remaining;
};

// Removes flagged windows, retrains the SOM on what is left, and bumps the
// flag set's cycle counter. Throws DataError when every window is flagged.
CycleResult cleaning_cycle(std::span<const Window> dataset, FlagSet& flags, const SomConfig& cfg);

// manifest.json + prototypes.f32
void save_som(const std::filesystem::path& dir, const SOMap& som);
SOMap load_som(const std::filesystem::path& dir);

}  // namespace polarcast
