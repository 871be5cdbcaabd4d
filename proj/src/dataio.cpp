#include "polarcast/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_map>

#include "polarcast/rng.hpp"

namespace polarcast {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Raw float32 I/O
// ---------------------------------------------------------------------------

namespace {

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

std::vector<float> read_f32_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (bytes % sizeof(float) != 0)
    throw DataError(path.string() + ": size is not a multiple of 4 bytes");
  std::vector<float> values(bytes / sizeof(float));
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("short read on " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : values) v = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(v)));
  }
  return values;
}

void write_f32_file(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  if constexpr (std::endian::native == std::endian::big) {
    for (float v : values) {
      const std::uint32_t le = byteswap32(std::bit_cast<std::uint32_t>(v));
      out.write(reinterpret_cast<const char*>(&le), sizeof le);
    }
  } else {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  }
  if (!out) throw DataError("write failed on " + path.string());
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open metadata " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  std::size_t i = 0;
  // Skip a UTF-8 BOM.
  if (text.size() >= 3 && text.compare(0, 3, "\xEF\xBB\xBF") == 0) i = 3;
  for (; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        any = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        any = true;
        break;
      case '\r':
        break;
      case '\n':
        if (any || !field.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        row.clear();
        field.clear();
        any = false;
        break;
      default:
        field.push_back(c);
        any = true;
    }
  }
  if (quoted) throw DataError(path.string() + ": unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

bool parse_size(const std::string& s, std::size_t& out) {
  if (s.empty()) return false;
  // INSTANCE stores picks as floats ("1234.0").
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || !std::isfinite(v) || v < 0.0) return false;
  if (v != std::floor(v)) return false;
  out = static_cast<std::size_t>(v);
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

RawDirectorySource::RawDirectorySource(fs::path dir) : dir_(std::move(dir)) {
  if (!fs::is_directory(dir_))
    throw DataError("waveform container " + dir_.string() + " is not a directory");
}

std::vector<float> RawDirectorySource::fetch(const std::string& trace_id) const {
  const fs::path p = dir_ / (trace_id + ".f32");
  if (!fs::exists(p)) return {};
  return read_f32_file(p);
}

LoadResult load_dataset(const fs::path& container_path, const fs::path& metadata_path,
                        const ColumnMapping& mapping) {
  RawDirectorySource source(container_path);
  return load_dataset(source, metadata_path, mapping);
}

LoadResult load_dataset(const WaveformSource& source, const fs::path& metadata_path,
                        const ColumnMapping& mapping) {
  if (!fs::exists(metadata_path))
    throw DataError("metadata file " + metadata_path.string() + " not found");
  const auto rows = read_csv(metadata_path);
  if (rows.empty()) throw DataError(metadata_path.string() + ": missing header row");

  const auto& header = rows.front();
  auto column = [&](const std::string& name, bool required) -> std::ptrdiff_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      if (required)
        throw DataError(metadata_path.string() + ": missing column '" + name + "'");
      return -1;
    }
    return it - header.begin();
  };
  const auto id_col = column(mapping.id_column, true);
  const auto pol_col = column(mapping.polarity_column, true);
  const auto p_col = column(mapping.p_arrival_column, true);
  const auto sr_col = column(mapping.sampling_rate_column, false);

  LoadResult result;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    ++result.report.rows;
    auto cell = [&](std::ptrdiff_t c) -> std::string {
      return (c >= 0 && static_cast<std::size_t>(c) < row.size()) ? row[c] : std::string{};
    };
    const std::string id = cell(id_col);
    auto skip = [&](std::string reason) {
      result.report.skipped.push_back({r, id, std::move(reason)});
    };
    if (id.empty()) {
      skip("empty trace id");
      continue;
    }
    const auto pol = mapping.polarity_values.find(cell(pol_col));
    if (pol == mapping.polarity_values.end()) {
      skip("unmapped polarity '" + cell(pol_col) + "'");
      continue;
    }
    std::size_t p_arrival = 0;
    if (!parse_size(cell(p_col), p_arrival)) {
      skip("missing or invalid P-arrival sample");
      continue;
    }
    double sr = mapping.default_sampling_rate;
    if (sr_col >= 0 && !cell(sr_col).empty()) {
      char* end = nullptr;
      const std::string s = cell(sr_col);
      sr = std::strtod(s.c_str(), &end);
      if (end == s.c_str() || !(sr > 0.0)) {
        skip("invalid sampling rate '" + s + "'");
        continue;
      }
    }
    Trace t;
    t.id = id;
    t.samples = source.fetch(id);
    if (t.samples.empty()) {
      skip("trace key absent from container");
      continue;
    }
    t.sampling_rate = sr;
    t.p_arrival = p_arrival;
    t.label = pol->second;
    t.source = TraceSource::Real;
    if (t.p_arrival >= t.samples.size()) {
      skip("P-arrival beyond trace end");
      continue;
    }
    result.traces.push_back(std::move(t));
    ++result.report.loaded;
  }
  return result;
}

void save_dataset(const fs::path& dir, std::span<const Trace> traces, const ColumnMapping& mapping) {
  fs::create_directories(dir / "waveforms");
  auto polarity_string = [&](Polarity p) -> std::string {
    for (const auto& [name, value] : mapping.polarity_values)
      if (value == p) return name;
    return std::string(to_string(p));
  };
  std::ofstream meta(dir / "metadata.csv", std::ios::trunc);
  if (!meta) throw DataError("cannot write " + (dir / "metadata.csv").string());
  meta << mapping.id_column << ',' << mapping.polarity_column << ',' << mapping.p_arrival_column
       << ',' << mapping.sampling_rate_column << '\n';
  char rate[64];
  for (const auto& t : traces) {
    write_f32_file(dir / "waveforms" / (t.id + ".f32"), t.samples);
    std::snprintf(rate, sizeof rate, "%.17g", t.sampling_rate);
    meta << csv_escape(t.id) << ',' << polarity_string(t.label) << ',' << t.p_arrival << ','
         << rate << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

void SynthConfig::validate() const {
  if (n_mislabeled > n_defined)
    throw DataError("n_mislabeled (" + std::to_string(n_mislabeled) + ") exceeds n_defined (" +
                    std::to_string(n_defined) + ")");
  if (!(snr_defined > 0.0) || !(snr_ambiguous > 0.0)) throw DataError("SNRs must be positive");
  if (window_len < 2) throw DataError("window_len must be at least 2");
  if (!(sampling_rate > 0.0)) throw DataError("sampling_rate must be positive");
}

namespace {

std::string synth_id(char kind, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn-%c%06zu", kind, i);
  return buf;
}

// Unit-variance noise everywhere; a damped oscillation of amplitude `amp`
// starting at the arrival. `rise` > 0 gives an emergent onset.
std::vector<float> synth_waveform(Rng& rng, std::size_t len, std::size_t p, double fs,
                                  double amp, double sign, double rise) {
  const double freq = rng.uniform(2.0, 6.0);
  const double decay = rng.uniform(0.25, 0.8);
  std::vector<float> s(len);
  for (std::size_t i = 0; i < len; ++i) {
    double v = rng.normal();
    if (i >= p) {
      const double t = static_cast<double>(i - p) / fs;
      double env = std::exp(-t / decay);
      if (rise > 0.0) env *= 1.0 - std::exp(-t / rise);
      v += sign * amp * env * std::sin(2.0 * std::numbers::pi * freq * t);
    }
    s[i] = static_cast<float>(v);
  }
  return s;
}

}  // namespace

SynthResult synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  SynthResult out;
  const std::size_t len = 2 * cfg.window_len;
  const std::size_t p = cfg.window_len;
  out.traces.reserve(cfg.n_defined + cfg.n_undecidable);

  Rng rng(derive_seed(cfg.seed, 1));
  for (std::size_t i = 0; i < cfg.n_defined; ++i) {
    Trace t;
    t.id = synth_id('d', i);
    t.label = rng.bernoulli(0.5) ? Polarity::Up : Polarity::Down;
    const double sign = t.label == Polarity::Up ? 1.0 : -1.0;
    const double amp = cfg.snr_defined * rng.uniform(0.7, 1.3);
    t.samples = synth_waveform(rng, len, p, cfg.sampling_rate, amp, sign, 0.0);
    t.sampling_rate = cfg.sampling_rate;
    t.p_arrival = p;
    t.source = TraceSource::Synthetic;
    out.true_labels.emplace(t.id, t.label);
    out.traces.push_back(std::move(t));
  }

  // Label noise: invert labels (never waveforms) of a seeded subset.
  std::vector<std::size_t> order(cfg.n_defined);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng pick(derive_seed(cfg.seed, 2));
  pick.shuffle(order);
  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.n_mislabeled));
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t idx : chosen) {
    auto& t = out.traces[idx];
    t.label = flip(t.label);
    out.mislabeled_ids.push_back(t.id);
  }

  Rng urng(derive_seed(cfg.seed, 3));
  for (std::size_t i = 0; i < cfg.n_undecidable; ++i) {
    Trace t;
    t.id = synth_id('u', i);
    t.label = Polarity::Undecidable;
    const double sign = urng.bernoulli(0.5) ? 1.0 : -1.0;
    const double amp = cfg.snr_ambiguous * urng.uniform(0.7, 1.3);
    const double rise = urng.uniform(0.05, 0.3);
    t.samples = synth_waveform(urng, len, p, cfg.sampling_rate, amp, sign, rise);
    t.sampling_rate = cfg.sampling_rate;
    t.p_arrival = p;
    t.source = TraceSource::Synthetic;
    out.true_labels.emplace(t.id, Polarity::Undecidable);
    out.traces.push_back(std::move(t));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Windowing
// ---------------------------------------------------------------------------

std::vector<float> normalize(std::span<const float> values, NormMode mode) {
  if (values.empty()) throw DataError("cannot normalize an empty vector");
  switch (mode) {
    case NormMode::MaxAbs: {
      float peak = 0.0f;
      for (float v : values) {
        if (!std::isfinite(v)) throw DataError("non-finite sample");
        peak = std::max(peak, std::fabs(v));
      }
      if (peak == 0.0f) throw DataError("all-zero window cannot be normalized");
      std::vector<float> out(values.size());
      for (std::size_t i = 0; i < values.size(); ++i) out[i] = values[i] / peak;
      return out;
    }
  }
  throw DataError("unknown normalization mode");
}

Window window_trace(const Trace& t, const WindowSpec& spec) {
  if (t.p_arrival < spec.pre || t.p_arrival + spec.post > t.samples.size())
    throw DataError("window [p-" + std::to_string(spec.pre) + ", p+" + std::to_string(spec.post) +
                    ") exceeds bounds of trace '" + t.id + "'");
  std::span<const float> slice(t.samples.data() + (t.p_arrival - spec.pre), spec.length());
  Window w;
  w.values = normalize(slice, spec.mode);
  w.trace_id = t.id;
  w.label = t.label;
  return w;
}

WindowingResult make_windows(std::span<const Trace> traces, const WindowSpec& spec) {
  WindowingResult out;
  out.windows.reserve(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i) {
    try {
      out.windows.push_back(window_trace(traces[i], spec));
    } catch (const DataError& e) {
      out.excluded.push_back({i + 1, traces[i].id, e.what()});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Split / augmentation
// ---------------------------------------------------------------------------

void SplitSpec::validate() const {
  if (!(train_frac > 0.0 && val_frac > 0.0 && test_frac > 0.0))
    throw DataError("split fractions must all be positive");
  if (std::fabs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
    throw DataError("split fractions must sum to 1");
}

SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  spec.validate();
  if (n < 3) throw DataError("need at least 3 traces to split");
  // The epsilon absorbs representation error (e.g. 1000 * 0.056).
  auto part = [n](double frac) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * frac + 1e-9));
  };
  SplitSizes s;
  s.val = part(spec.val_frac);
  s.test = part(spec.test_frac);
  s.train = n - s.val - s.test;
  return s;
}

Partition<std::size_t> split_indices(std::size_t n, const SplitSpec& spec) {
  const SplitSizes sizes = split_sizes(n, spec);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(spec.seed, 0x5b117));
  rng.shuffle(order);
  Partition<std::size_t> p;
  auto first = order.begin();
  p.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes.train));
  first += static_cast<std::ptrdiff_t>(sizes.train);
  p.val.assign(first, first + static_cast<std::ptrdiff_t>(sizes.val));
  first += static_cast<std::ptrdiff_t>(sizes.val);
  p.test.assign(first, order.end());
  return p;
}

Partition<Trace> split(std::span<const Trace> traces, const SplitSpec& spec) {
  for (const auto& t : traces)
    if (!is_defined(t.label))
      throw DataError("split accepts defined-polarity traces only ('" + t.id + "' is undecidable)");
  const auto idx = split_indices(traces.size(), spec);
  Partition<Trace> out;
  for (auto i : idx.train) out.train.push_back(traces[i]);
  for (auto i : idx.val) out.val.push_back(traces[i]);
  for (auto i : idx.test) out.test.push_back(traces[i]);
  return out;
}

std::vector<Window> augment_flip(std::span<const Window> train) {
  std::vector<Window> out;
  out.reserve(2 * train.size());
  for (const auto& w : train) {
    if (!is_defined(w.label))
      throw DataError("flip augmentation is undefined for undecidable window '" + w.trace_id + "'");
    out.push_back(w);
  }
  for (const auto& w : train) {
    Window f;
    f.values.resize(w.values.size());
    for (std::size_t i = 0; i < w.values.size(); ++i) f.values[i] = -w.values[i];
    f.trace_id = w.trace_id + ":flip";
    f.label = flip(w.label);
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace polarcast
