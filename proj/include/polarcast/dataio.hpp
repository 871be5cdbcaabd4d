#pragma once

// Dataset ingestion, synthetic generation, windowing, splitting and flip
// augmentation. Everything here produces immutable values that can be shared
// read-only between concurrent trainers.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "polarcast/types.hpp"

namespace polarcast {

// ---------------------------------------------------------------------------
// Real data
// ---------------------------------------------------------------------------

// Maps metadata column names and polarity strings onto Trace fields. Nothing
// about the source table layout is hard-coded.
struct ColumnMapping {
  std::string id_column = "trace_name";
  std::string polarity_column = "trace_polarity";
  std::string p_arrival_column = "trace_P_arrival_sample";
  std::string sampling_rate_column = "sampling_rate";
  // Used when the sampling-rate column is absent.
  double default_sampling_rate = 100.0;
  std::map<std::string, Polarity> polarity_values = {
      {"positive", Polarity::Up},
      {"negative", Polarity::Down},
      {"undecidable", Polarity::Undecidable},
  };
};

struct RowIssue {
  std::size_t row = 0;  // 1-based data row (header excluded)
  std::string trace_id;
  std::string reason;
};

struct LoadReport {
  std::size_t rows = 0;
  std::size_t loaded = 0;
  std::vector<RowIssue> skipped;
};

struct LoadResult {
  std::vector<Trace> traces;
  LoadReport report;
};

// Reads a waveform container plus its CSV metadata table.
//
// The container is a directory holding one raw little-endian float32 file per
// trace, named `<trace id>.f32`. Hierarchical containers (HDF5 and friends)
// plug in by implementing WaveformSource.
class WaveformSource {
 public:
  virtual ~WaveformSource() = default;
  // Empty result means the key is absent.
  virtual std::vector<float> fetch(const std::string& trace_id) const = 0;
};

class RawDirectorySource final : public WaveformSource {
 public:
  explicit RawDirectorySource(std::filesystem::path dir);
  std::vector<float> fetch(const std::string& trace_id) const override;

 private:
  std::filesystem::path dir_;
};

LoadResult load_dataset(const std::filesystem::path& container_path,
                        const std::filesystem::path& metadata_path,
                        const ColumnMapping& mapping = {});

LoadResult load_dataset(const WaveformSource& source,
                        const std::filesystem::path& metadata_path,
                        const ColumnMapping& mapping = {});

// Writes traces in the layout load_dataset reads (waveforms/ + metadata.csv),
// using the default column names of `mapping`.
void save_dataset(const std::filesystem::path& dir, std::span<const Trace> traces,
                  const ColumnMapping& mapping = {});

std::vector<float> read_f32_file(const std::filesystem::path& path);
void write_f32_file(const std::filesystem::path& path, std::span<const float> values);

// Minimal RFC-4180 style CSV reader (quoted fields, embedded commas/quotes).
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::size_t n_defined = 1000;
  std::size_t n_undecidable = 500;
  std::size_t n_mislabeled = 0;
  double snr_defined = 20.0;
  double snr_ambiguous = 1.0;
  std::size_t window_len = 400;
  double sampling_rate = 100.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthResult {
  std::vector<Trace> traces;  // defined traces first, then undecidable ones
  std::vector<std::string> mislabeled_ids;
  // Label each trace's waveform actually carries (differs from Trace::label
  // exactly on the mislabeled ids).
  std::map<std::string, Polarity> true_labels;
};

// Traces are 2*window_len samples long with the P arrival at index
// window_len, so any pre/post split with pre + post == window_len fits.
SynthResult synth_generate(const SynthConfig& cfg);

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

enum class NormMode { MaxAbs };

struct WindowSpec {
  std::size_t pre = 160;
  std::size_t post = 240;
  NormMode mode = NormMode::MaxAbs;

  std::size_t length() const { return pre + post; }
};

// Throws DataError when the window falls outside the trace or the window is
// all zeros.
Window window_trace(const Trace& t, const WindowSpec& spec);

std::vector<float> normalize(std::span<const float> values, NormMode mode = NormMode::MaxAbs);

struct WindowingResult {
  std::vector<Window> windows;
  std::vector<RowIssue> excluded;
};

// Windows every trace; failures are excluded and reported, not fatal.
WindowingResult make_windows(std::span<const Trace> traces, const WindowSpec& spec);

// ---------------------------------------------------------------------------
// Split and augmentation
// ---------------------------------------------------------------------------

struct SplitSpec {
  double train_frac = 0.88;
  double val_frac = 0.064;
  double test_frac = 0.056;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SplitSizes {
  std::size_t train = 0, val = 0, test = 0;
};

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec);

template <typename T>
struct Partition {
  std::vector<T> train, val, test;
};

// Deterministic shuffle by seed; val/test sizes are floor(n*frac), the
// remainder goes to train. Only defined-polarity traces are accepted.
Partition<Trace> split(std::span<const Trace> traces, const SplitSpec& spec);

// Splits indices only; the building block for split().
Partition<std::size_t> split_indices(std::size_t n, const SplitSpec& spec);

// Returns originals followed by their negated, label-flipped copies.
std::vector<Window> augment_flip(std::span<const Window> train);

}  // namespace polarcast
