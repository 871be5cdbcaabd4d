#include "polarcast/somclean.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <type_traits>

#include "polarcast/dataio.hpp"
#include "polarcast/json_io.hpp"
#include "polarcast/rng.hpp"

namespace polarcast {

double SomConfig::initial_sigma() const {
  return sigma0 > 0.0 ? sigma0 : static_cast<double>(std::max(rows, cols)) / 2.0;
}

std::vector<SampleView> views_of(std::span<const Window> windows) {
  std::vector<SampleView> v;
  v.reserve(windows.size());
  for (const auto& w : windows) v.emplace_back(w.values);
  return v;
}

namespace {

double squared_distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

}  // namespace

std::size_t bmu_index(const SOMap& som, SampleView x) {
  if (x.size() != som.dim) throw ShapeError("sample length does not match SOM prototype length");
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t n = 0; n < som.nodes(); ++n) {
    const double d = squared_distance(som.prototype(n), x);
    if (d < best_d) {
      best_d = d;
      best = n;
    }
  }
  return best;
}

GridPos bmu(const SOMap& som, SampleView x) { return som.position(bmu_index(som, x)); }

std::vector<std::size_t> bmu_batch(const SOMap& som, std::span<const SampleView> samples,
                                   ExecMode mode) {
  std::vector<std::size_t> out(samples.size());
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  if (mode == ExecMode::Parallel) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = bmu_index(som, samples[i]);
  } else {
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = bmu_index(som, samples[i]);
  }
  return out;
}

double quantization_error(const SOMap& som, std::span<const SampleView> samples) {
  if (samples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& x : samples) total += std::sqrt(squared_distance(som.prototype(bmu_index(som, x)), x));
  return total / static_cast<double>(samples.size());
}

SOMap som_train(std::span<const SampleView> samples, const SomConfig& cfg) {
  if (samples.empty()) throw DataError("cannot train a SOM on an empty set");
  if (cfg.rows == 0 || cfg.cols == 0) throw DataError("SOM grid dimensions must be positive");
  const std::size_t dim = samples.front().size();
  if (dim == 0) throw DataError("SOM samples must be non-empty");
  for (const auto& s : samples)
    if (s.size() != dim) throw ShapeError("SOM samples have inconsistent lengths");

  SOMap som;
  som.rows = cfg.rows;
  som.cols = cfg.cols;
  som.dim = dim;
  som.alpha0 = cfg.alpha0;
  som.sigma0 = cfg.initial_sigma();
  som.decay = cfg.decay;
  som.prototypes.resize(som.nodes() * dim);

  Rng rng(derive_seed(cfg.seed, 0x50a));
  for (std::size_t n = 0; n < som.nodes(); ++n) {
    const auto& src = samples[rng.index(samples.size())];
    std::copy(src.begin(), src.end(), som.prototypes.begin() + static_cast<std::ptrdiff_t>(n * dim));
  }

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const double total = static_cast<double>(cfg.epochs * samples.size());
  std::size_t t = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t idx : order) {
      const SampleView x = samples[idx];
      const std::size_t winner = bmu_index(som, x);
      const double frac = cfg.decay == SomDecay::Exponential ? std::exp(-static_cast<double>(t) / total) : 1.0;
      const double alpha = som.alpha0 * frac;
      const double sigma = som.sigma0 * frac;
      const double two_s2 = 2.0 * sigma * sigma;
      const GridPos w = som.position(winner);
      for (std::size_t n = 0; n < som.nodes(); ++n) {
        const GridPos p = som.position(n);
        const double dr = static_cast<double>(p.row) - static_cast<double>(w.row);
        const double dc = static_cast<double>(p.col) - static_cast<double>(w.col);
        const double d2 = dr * dr + dc * dc;
        double h;
        if (d2 == 0.0)
          h = 1.0;
        else if (two_s2 > 0.0)
          h = std::exp(-d2 / two_s2);
        else
          h = 0.0;
        const double step = alpha * h;
        if (step == 0.0) continue;
        float* proto = som.prototypes.data() + n * dim;
        for (std::size_t i = 0; i < dim; ++i) {
          const double cur = proto[i];
          proto[i] = static_cast<float>(cur + step * (static_cast<double>(x[i]) - cur));
        }
      }
      ++t;
    }
    ++som.trained_epochs;
  }
  return som;
}

SOMap som_train(std::span<const Window> windows, const SomConfig& cfg) {
  const auto views = views_of(windows);
  return som_train(views, cfg);
}

ClusterReport assign_clusters(const SOMap& som, std::span<const Window> windows, ExecMode mode) {
  const auto views = views_of(windows);
  const auto winners = bmu_batch(som, views, mode);
  ClusterReport r;
  r.rows = som.rows;
  r.cols = som.cols;
  r.nodes.resize(som.nodes());
  for (std::size_t n = 0; n < som.nodes(); ++n) {
    r.nodes[n].pos = som.position(n);
    r.nodes[n].mean.assign(som.dim, 0.0);
  }
  std::vector<std::size_t> ups(som.nodes(), 0);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    auto& node = r.nodes[winners[i]];
    node.member_ids.push_back(windows[i].trace_id);
    node.member_indices.push_back(i);
    if (windows[i].label == Polarity::Up) ++ups[winners[i]];
    for (std::size_t d = 0; d < som.dim; ++d) node.mean[d] += windows[i].values[d];
  }
  for (std::size_t n = 0; n < som.nodes(); ++n) {
    auto& node = r.nodes[n];
    if (node.count() == 0) continue;
    const double c = static_cast<double>(node.count());
    for (auto& v : node.mean) v /= c;
    node.purity = static_cast<double>(ups[n]) / c;
  }
  return r;
}

std::optional<double> majority_purity(const NodeCluster& node) {
  if (!node.purity) return std::nullopt;
  return std::max(*node.purity, 1.0 - *node.purity);
}

namespace {

template <typename Item>
const std::string& id_of(const Item& item) {
  if constexpr (std::is_same_v<Item, Trace>)
    return item.id;
  else
    return item.trace_id;
}

template <typename Item>
std::vector<Item> apply_flags_impl(std::span<const Item> dataset, const FlagSet& flags,
                                   FlagMode mode, std::vector<std::string>* unknown) {
  std::vector<Item> out;
  out.reserve(dataset.size());
  std::set<std::string> seen;
  for (const auto& item : dataset) {
    const FlagEntry* f = flags.find(id_of(item));
    if (!f) {
      out.push_back(item);
      continue;
    }
    seen.insert(f->trace_id);
    if (mode == FlagMode::Correct && f->reason == FlagReason::Mislabeled) {
      Item copy = item;
      copy.label = *f->corrected_label;
      out.push_back(std::move(copy));
    }
  }
  if (unknown) {
    unknown->clear();
    for (const auto& [id, e] : flags.entries())
      if (!seen.count(id)) unknown->push_back(id);
  }
  return out;
}

}  // namespace

ApplyFlagsResult apply_flags(std::span<const Window> dataset, const FlagSet& flags, FlagMode mode) {
  ApplyFlagsResult r;
  r.windows = apply_flags_impl(dataset, flags, mode, &r.unknown_ids);
  return r;
}

std::vector<Trace> apply_flags(std::span<const Trace> dataset, const FlagSet& flags, FlagMode mode,
                               std::vector<std::string>* unknown_ids) {
  return apply_flags_impl(dataset, flags, mode, unknown_ids);
}

CycleResult cleaning_cycle(std::span<const Window> dataset, FlagSet& flags, const SomConfig& cfg) {
  CycleResult r;
  r.remaining = apply_flags(dataset, flags, FlagMode::Remove).windows;
  if (r.remaining.empty()) throw DataError("every trace is flagged; nothing left to cluster");
  r.som = som_train(std::span<const Window>(r.remaining), cfg);
  r.report = assign_clusters(r.som, r.remaining);
  flags.set_cycle(flags.cycle() + 1);
  return r;
}

void save_som(const std::filesystem::path& dir, const SOMap& som) {
  std::filesystem::create_directories(dir);
  write_f32_file(dir / "prototypes.f32", som.prototypes);
  nlohmann::json m{{"format", "polarcast-som"},
                   {"version", 1},
                   {"rows", som.rows},
                   {"cols", som.cols},
                   {"dim", som.dim},
                   {"trained_epochs", som.trained_epochs},
                   {"alpha0", som.alpha0},
                   {"sigma0", som.sigma0},
                   {"decay", som.decay == SomDecay::Exponential ? "exponential" : "constant"},
                   {"prototypes", "prototypes.f32"}};
  write_json_file(dir / "manifest.json", m);
}

SOMap load_som(const std::filesystem::path& dir) {
  const auto m = read_json_file(dir / "manifest.json");
  if (m.value("format", "") != "polarcast-som") throw DataError(dir.string() + ": not a SOM checkpoint");
  SOMap som;
  m.at("rows").get_to(som.rows);
  m.at("cols").get_to(som.cols);
  m.at("dim").get_to(som.dim);
  m.at("trained_epochs").get_to(som.trained_epochs);
  m.at("alpha0").get_to(som.alpha0);
  m.at("sigma0").get_to(som.sigma0);
  som.decay = m.value("decay", "exponential") == "constant" ? SomDecay::Constant : SomDecay::Exponential;
  som.prototypes = read_f32_file(dir / m.value("prototypes", "prototypes.f32"));
  if (som.prototypes.size() != som.rows * som.cols * som.dim)
    throw DataError(dir.string() + ": prototype blob size mismatch");
  return som;
}

}  // namespace polarcast
