#include "polarcast/ensemble.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_map>

#include "polarcast/checkpoint.hpp"
#include "polarcast/json_io.hpp"
#include "polarcast/rng.hpp"

namespace polarcast {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

namespace {

struct SelectorPattern {
  std::optional<OptimizerKind> optimizer;
  std::optional<bool> dropout;
  std::optional<DatasetVariant> variant;
  std::optional<std::size_t> member;

  bool matches(const RegistryEntry& e) const {
    if (optimizer && e.setting.optimizer != *optimizer) return false;
    if (dropout && e.setting.dropout != *dropout) return false;
    if (variant && e.setting.variant != *variant) return false;
    if (member && e.member != *member) return false;
    return true;
  }
};

SelectorPattern parse_selector(std::string_view selector) {
  SelectorPattern p;
  std::string body(selector);
  if (auto hash = body.find('#'); hash != std::string::npos) {
    p.member = static_cast<std::size_t>(std::stoul(body.substr(hash + 1)));
    body.resize(hash);
  }
  if (body == "all" || body.empty()) return p;
  std::vector<std::string> parts;
  std::string cur;
  for (char c : body) {
    const char lc = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lc == 'x' || lc == '-' || lc == '/' || lc == ':' || lc == '_') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(lc);
    }
  }
  parts.push_back(cur);
  if (parts.size() != 3) throw std::invalid_argument("bad model selector '" + std::string(selector) + "'");
  if (parts[0] != "*") p.optimizer = Setting::parse(parts[0] + "-nodrop-complete").optimizer;
  if (parts[1] != "*") p.dropout = Setting::parse("sgd-" + parts[1] + "-complete").dropout;
  if (parts[2] != "*") p.variant = Setting::parse("sgd-nodrop-" + parts[2]).variant;
  return p;
}

std::string member_dir_name(const RegistryEntry& e) {
  return e.setting.name() + "-" + std::to_string(e.member);
}

}  // namespace

std::vector<const RegistryEntry*> Registry::select(std::string_view selector) const {
  const SelectorPattern p = parse_selector(selector);
  std::vector<const RegistryEntry*> out;
  for (const auto& e : entries)
    if (p.matches(e)) out.push_back(&e);
  return out;
}

std::vector<ModelParams> Registry::params_of(std::string_view selector) const {
  std::vector<ModelParams> out;
  for (const auto* e : select(selector)) out.push_back(e->params);
  return out;
}

std::uint64_t member_seed(std::uint64_t base_seed, std::size_t setting_index,
                          std::size_t models_per_setting, std::size_t member) {
  return base_seed + setting_index * models_per_setting + member;
}

Registry train_grid(const ArchConfig& arch, const SettingsGrid& grid, const GridData& data,
                    const TrainConfig& base, std::uint64_t base_seed, ExecMode grid_exec) {
  struct Job {
    std::size_t setting_index, member;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < grid.settings.size(); ++s)
    for (std::size_t m = 0; m < grid.models_per_setting; ++m) jobs.push_back({s, m});

  std::vector<std::optional<RegistryEntry>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());

  auto run_job = [&](std::size_t j) {
    const Job job = jobs[j];
    const Setting setting = grid.settings[job.setting_index];
    TrainConfig cfg = base;
    cfg.apply(setting);
    cfg.seed = member_seed(base_seed, job.setting_index, grid.models_per_setting, job.member);
    if (grid_exec == ExecMode::Parallel) cfg.exec = ExecMode::Reference;
    const VariantData& vd =
        setting.variant == DatasetVariant::Complete ? data.complete : data.cleaned;
    try {
      TrainResult r = train(arch, {vd.train, vd.val}, cfg);
      ArchConfig member_arch = arch;
      member_arch.dropout_enabled = setting.dropout;
      const Network net(member_arch);
      RegistryEntry e;
      e.setting = setting;
      e.member = job.member;
      e.seed = cfg.seed;
      if (!data.test_complete.empty())
        e.acc_complete = evaluate(net, r.best, data.test_complete, cfg.exec).accuracy;
      if (!data.test_cleaned.empty())
        e.acc_cleaned = evaluate(net, r.best, data.test_cleaned, cfg.exec).accuracy;
      e.digest = params_digest(r.best);
      e.params = std::move(r.best);
      e.record = std::move(r.record);
      results[j] = std::move(e);
    } catch (const std::exception& ex) {
      errors[j] = ex.what();
    }
  };

  const auto n = static_cast<std::ptrdiff_t>(jobs.size());
  if (grid_exec == ExecMode::Parallel) {
#pragma omp parallel for schedule(dynamic, 1)
    for (std::ptrdiff_t j = 0; j < n; ++j) run_job(static_cast<std::size_t>(j));
  } else {
    for (std::ptrdiff_t j = 0; j < n; ++j) run_job(static_cast<std::size_t>(j));
  }

  Registry reg;
  reg.arch = arch;
  reg.arch.dropout_enabled = false;
  for (std::size_t s = 0; s < grid.settings.size(); ++s) {
    SettingSummary sum;
    sum.setting = grid.settings[s];
    std::vector<double> acc_c, acc_k;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].setting_index != s) continue;
      if (results[j]) {
        ++sum.trained;
        acc_c.push_back(results[j]->acc_complete);
        acc_k.push_back(results[j]->acc_cleaned);
        reg.entries.push_back(std::move(*results[j]));
      } else {
        sum.complete = false;
        sum.failures.push_back("member " + std::to_string(jobs[j].member) + ": " + errors[j]);
      }
    }
    if (acc_c.size() >= 2) {
      sum.acc_complete = mean_accuracy(acc_c);
      sum.acc_cleaned = mean_accuracy(acc_k);
    }
    reg.summaries.push_back(std::move(sum));
  }
  return reg;
}

void save_registry(const fs::path& dir, const Registry& reg) {
  fs::create_directories(dir / "models");
  json entries = json::array();
  for (const auto& e : reg.entries) {
    const std::string sub = member_dir_name(e);
    ArchConfig a = reg.arch;
    a.dropout_enabled = e.setting.dropout;
    save_checkpoint(dir / "models" / sub, e.params,
                    {a, e.seed, e.setting.name(), e.record.best_epoch, e.record.best_val_loss});
    json rec = e.record;
    write_json_file(dir / "models" / sub / "train_record.json", rec);
    entries.push_back({{"setting", e.setting.name()},
                       {"member", e.member},
                       {"seed", e.seed},
                       {"dir", "models/" + sub},
                       {"acc_complete", e.acc_complete},
                       {"acc_cleaned", e.acc_cleaned},
                       {"digest", hex_digest(e.digest)}});
  }
  json summaries = json::array();
  for (const auto& s : reg.summaries) {
    json js{{"setting", s.setting.name()},
            {"trained", s.trained},
            {"complete", s.complete},
            {"failures", s.failures}};
    auto ms = [](const std::optional<MeanStd>& v) -> json {
      if (!v) return nullptr;
      return json{{"mean", v->mean}, {"std", v->std}};
    };
    js["acc_complete_test"] = ms(s.acc_complete);
    js["acc_cleaned_test"] = ms(s.acc_cleaned);
    summaries.push_back(std::move(js));
  }
  write_json_file(dir / "registry.json",
                  json{{"format", "polarcast-registry"},
                       {"arch", reg.arch},
                       {"entries", std::move(entries)},
                       {"summaries", std::move(summaries)}});
}

Registry load_registry(const fs::path& dir) {
  const json j = read_json_file(dir / "registry.json");
  if (j.value("format", "") != "polarcast-registry")
    throw DataError(dir.string() + ": not a model registry");
  Registry reg;
  j.at("arch").get_to(reg.arch);
  for (const auto& je : j.at("entries")) {
    RegistryEntry e;
    e.setting = Setting::parse(je.at("setting").get<std::string>());
    je.at("member").get_to(e.member);
    je.at("seed").get_to(e.seed);
    je.at("acc_complete").get_to(e.acc_complete);
    je.at("acc_cleaned").get_to(e.acc_cleaned);
    const fs::path sub = dir / je.at("dir").get<std::string>();
    Checkpoint ck = load_checkpoint(sub);
    e.params = std::move(ck.params);
    e.digest = params_digest(e.params);
    if (hex_digest(e.digest) != je.at("digest").get<std::string>())
      throw DataError(sub.string() + ": parameter digest mismatch");
    if (fs::exists(sub / "train_record.json"))
      read_json_file(sub / "train_record.json").get_to(e.record);
    reg.entries.push_back(std::move(e));
  }
  for (const auto& js : j.value("summaries", json::array())) {
    SettingSummary s;
    s.setting = Setting::parse(js.at("setting").get<std::string>());
    js.at("trained").get_to(s.trained);
    js.at("complete").get_to(s.complete);
    s.failures = js.value("failures", std::vector<std::string>{});
    auto ms = [](const json& v) -> std::optional<MeanStd> {
      if (v.is_null()) return std::nullopt;
      return MeanStd{v.at("mean").get<double>(), v.at("std").get<double>()};
    };
    s.acc_complete = ms(js.value("acc_complete_test", json()));
    s.acc_cleaned = ms(js.value("acc_cleaned_test", json()));
    reg.summaries.push_back(std::move(s));
  }
  return reg;
}

std::string format_accuracy_tables(const Registry& reg) {
  auto cell = [](const std::optional<MeanStd>& v) {
    if (!v) return std::string("n/a");
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f+/-%.2f", 100.0 * v->mean, 100.0 * v->std);
    return std::string(buf);
  };
  auto find = [&](const Setting& s) -> const SettingSummary* {
    for (const auto& sum : reg.summaries)
      if (sum.setting == s) return &sum;
    return nullptr;
  };
  std::ostringstream os;
  for (auto variant : {DatasetVariant::Complete, DatasetVariant::SomCleaned}) {
    os << "Training on " << (variant == DatasetVariant::Complete ? "complete" : "cleaned")
       << " dataset\n";
    char line[160];
    std::snprintf(line, sizeof line, "%-6s %-16s %-18s %-18s\n", "", "test set", "no dropout",
                  "dropout");
    os << line;
    for (auto opt : {OptimizerKind::SGD, OptimizerKind::ADAM}) {
      const SettingSummary* nd = find({opt, false, variant});
      const SettingSummary* dr = find({opt, true, variant});
      for (int test = 0; test < 2; ++test) {
        auto pick = [&](const SettingSummary* s) {
          if (!s) return std::string("-");
          return cell(test == 0 ? s->acc_complete : s->acc_cleaned);
        };
        std::snprintf(line, sizeof line, "%-6s %-16s %-18s %-18s\n",
                      test == 0 ? std::string(to_string(opt)).c_str() : "",
                      test == 0 ? "complete" : "cleaned", pick(nd).c_str(), pick(dr).c_str());
        os << line;
      }
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

std::vector<double> mean_of_members(std::span<const std::vector<double>> members) {
  if (members.empty()) throw std::invalid_argument("ensemble needs at least one member");
  const std::size_t n = members.front().size();
  for (const auto& m : members)
    if (m.size() != n) throw ShapeError("member prediction lists differ in length");
  std::vector<double> out(n);
  std::vector<double> column(members.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t m = 0; m < members.size(); ++m) column[m] = members[m][i];
    std::sort(column.begin(), column.end());
    double sum = 0.0, comp = 0.0;
    for (double v : column) {
      const double y = v - comp;
      const double t = sum + y;
      comp = (t - sum) - y;
      sum = t;
    }
    out[i] = sum / static_cast<double>(members.size());
  }
  return out;
}

std::vector<double> predict_mean(const Network& net, std::span<const ModelParams> models,
                                 std::span<const Window> windows, ExecMode mode) {
  if (models.empty()) throw std::invalid_argument("ensemble needs at least one member");
  std::vector<std::vector<double>> members;
  members.reserve(models.size());
  for (const auto& m : models) members.push_back(predict_batch(net, m, windows, mode));
  return mean_of_members(members);
}

namespace {

std::size_t bin_of(double v, const std::vector<double>& edges) {
  const std::size_t bins = edges.size() - 1;
  if (v >= 1.0) return bins - 1;
  auto b = static_cast<std::size_t>(v * static_cast<double>(bins));
  b = std::min(b, bins - 1);
  if (b > 0 && v < edges[b]) --b;
  if (b + 1 < bins && v >= edges[b + 1]) ++b;
  return b;
}

std::vector<double> uniform_edges(std::size_t bins) {
  std::vector<double> e(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) e[i] = static_cast<double>(i) / static_cast<double>(bins);
  return e;
}

}  // namespace

PredictionHistogram histogram(std::span<const double> predictions, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  PredictionHistogram h;
  h.bin_count = bins;
  h.edges = uniform_edges(bins);
  h.counts.assign(bins, 0);
  for (double v : predictions) {
    if (!(v >= 0.0 && v <= 1.0))
      throw DataError("prediction " + std::to_string(v) + " outside [0, 1]");
    ++h.counts[bin_of(v, h.edges)];
  }
  h.n_total = predictions.size();
  return h;
}

UncertaintyMetrics uncertainty_metrics(const PredictionHistogram& h, double central_lo,
                                       double central_hi) {
  if (h.n_total == 0) throw std::invalid_argument("histogram is empty");
  const double n = static_cast<double>(h.n_total);
  const double bins = static_cast<double>(h.bin_count);
  UncertaintyMetrics m;
  m.extremal_mass =
      static_cast<double>(h.counts.front() + (h.bin_count > 1 ? h.counts.back() : 0)) / n;
  const auto lo = static_cast<std::size_t>(std::lround(central_lo * bins));
  const auto hi = static_cast<std::size_t>(std::lround(central_hi * bins));
  std::size_t central = 0;
  for (std::size_t i = lo; i < hi && i < h.bin_count; ++i) central += h.counts[i];
  m.central_mass = static_cast<double>(central) / n;
  double ent = 0.0;
  for (auto c : h.counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    ent -= p * std::log(p);
  }
  m.entropy = h.bin_count > 1 ? ent / std::log(bins) : 0.0;
  return m;
}

FlatnessComparison compare_flatness(const UncertaintyMetrics& a, const UncertaintyMetrics& b) {
  auto lower = [](double x, double y) { return x < y ? Flatter::A : (y < x ? Flatter::B : Flatter::Tie); };
  auto higher = [](double x, double y) { return x > y ? Flatter::A : (y > x ? Flatter::B : Flatter::Tie); };
  return {lower(a.extremal_mass, b.extremal_mass), higher(a.central_mass, b.central_mass),
          higher(a.entropy, b.entropy)};
}

std::string FlatnessComparison::describe() const {
  auto name = [](Flatter f) {
    return f == Flatter::A ? "A" : (f == Flatter::B ? "B" : "tie");
  };
  return std::string("lower extremal mass: ") + name(lower_extremal) +
         "; higher central mass: " + name(higher_central) + "; higher entropy: " + name(higher_entropy);
}

std::vector<AuditItem> audit_extremal_bins(std::span<const double> predictions,
                                           std::span<const std::string> ids, ExtremalBin side,
                                           std::size_t k, std::uint64_t seed, std::size_t bins) {
  if (predictions.size() != ids.size()) throw ShapeError("predictions and ids differ in length");
  const auto edges = uniform_edges(bins);
  const std::size_t target = side == ExtremalBin::Left ? 0 : bins - 1;
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < predictions.size(); ++i)
    if (bin_of(predictions[i], edges) == target) pool.push_back(i);
  const std::size_t take = std::min(k, pool.size());
  Rng rng(derive_seed(seed, 0xa0d17));
  for (std::size_t i = 0; i < take; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
  pool.resize(take);
  std::sort(pool.begin(), pool.end());
  std::vector<AuditItem> out;
  out.reserve(take);
  for (auto i : pool) out.push_back({ids[i], predictions[i]});
  return out;
}

CorrectionRate mislabel_correction_rate(const Network& net, std::span<const ModelParams> models,
                                        std::span<const Window> windows, const FlagSet& flags,
                                        ExecMode mode) {
  if (flags.empty()) throw std::invalid_argument("correction rate needs at least one flag");
  if (models.empty()) throw std::invalid_argument("correction rate needs at least one model");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < windows.size(); ++i) index.emplace(windows[i].trace_id, i);

  std::vector<Window> flagged;
  std::vector<Polarity> corrected;
  for (const auto& [id, e] : flags.entries()) {
    if (!e.corrected_label)
      throw std::invalid_argument("flag '" + id + "' has no corrected label");
    auto it = index.find(id);
    if (it == index.end()) throw DataError("flagged trace '" + id + "' not in the window set");
    flagged.push_back(windows[it->second]);
    corrected.push_back(*e.corrected_label);
  }

  CorrectionRate r;
  r.n_flags = flagged.size();
  for (const auto& params : models) {
    const auto p = predict_batch(net, params, flagged, mode);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (predicted_class(p[i]) == corrected[i]) ++hits;
    r.per_model_counts.push_back(hits);
  }
  double total = 0.0;
  for (auto c : r.per_model_counts) total += static_cast<double>(c);
  r.mean_count = total / static_cast<double>(models.size());
  r.mean_fraction = r.mean_count / static_cast<double>(r.n_flags);
  return r;
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

json histogram_json(const PredictionHistogram& h, const UncertaintyMetrics& m,
                    std::string_view label) {
  return json{{"label", label},
              {"bin_count", h.bin_count},
              {"edges", h.edges},
              {"counts", h.counts},
              {"n_total", h.n_total},
              {"metrics",
               {{"extremal_mass", m.extremal_mass},
                {"central_mass", m.central_mass},
                {"entropy", m.entropy}}}};
}

PredictionHistogram histogram_from_json(const json& j) {
  PredictionHistogram h;
  j.at("bin_count").get_to(h.bin_count);
  j.at("edges").get_to(h.edges);
  j.at("counts").get_to(h.counts);
  j.at("n_total").get_to(h.n_total);
  if (h.counts.size() != h.bin_count || h.edges.size() != h.bin_count + 1)
    throw DataError("histogram JSON has inconsistent bin counts");
  return h;
}

std::string histogram_csv(const PredictionHistogram& h) {
  std::ostringstream os;
  os << "bin_lower,bin_upper,count\n";
  char buf[96];
  for (std::size_t i = 0; i < h.bin_count; ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%zu\n", h.edges[i], h.edges[i + 1], h.counts[i]);
    os << buf;
  }
  return os.str();
}

std::string histogram_svg(const PredictionHistogram& h, std::string_view title) {
  constexpr double width = 800, height = 320, margin = 40;
  const double plot_w = width - 2 * margin, plot_h = height - 2 * margin;
  std::size_t peak = 1;
  for (auto c : h.counts) peak = std::max(peak, c);
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << margin << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">";
  for (char c : title) {
    if (c == '<') os << "&lt;";
    else if (c == '&') os << "&amp;";
    else os << c;
  }
  os << " (n=" << h.n_total << ")</text>\n";
  const double bar_w = plot_w / static_cast<double>(h.bin_count);
  char buf[200];
  for (std::size_t i = 0; i < h.bin_count; ++i) {
    const double bh = plot_h * static_cast<double>(h.counts[i]) / static_cast<double>(peak);
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" fill=\"#4a7ab5\"/>\n",
                  margin + bar_w * static_cast<double>(i), margin + plot_h - bh, bar_w * 0.9, bh);
    os << buf;
  }
  std::snprintf(buf, sizeof buf,
                "<line x1=\"%.0f\" y1=\"%.0f\" x2=\"%.0f\" y2=\"%.0f\" stroke=\"black\"/>\n", margin,
                margin + plot_h, margin + plot_w, margin + plot_h);
  os << buf;
  for (double tick : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.2f\" y=\"%.0f\" font-family=\"sans-serif\" font-size=\"11\" "
                  "text-anchor=\"middle\">%.2f</text>\n",
                  margin + plot_w * tick, height - 14, tick);
    os << buf;
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace polarcast
