// polarcast command line. Every subcommand accepts --config FILE (JSON);
// explicit flags win over the file, the file wins over built-in defaults.

#include <csignal>
#include <cstring>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "polarcast/checkpoint.hpp"
#include "polarcast/dataio.hpp"
#include "polarcast/ensemble.hpp"
#include "polarcast/json_io.hpp"
#include "polarcast/pipeline.hpp"
#include "polarcast/service.hpp"
#include "polarcast/somclean.hpp"
#include "polarcast/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace polarcast;

namespace {

struct AppConfig {
  ArchConfig arch;
  TrainConfig train;
  SynthConfig synth;
  SplitSpec split;
  WindowSpec window;
  SomConfig som;
  std::size_t models_per_setting = 7;
  std::uint64_t base_seed = 0;
};

AppConfig load_config(const std::string& path) {
  AppConfig c;
  if (path.empty()) return c;
  const json j = read_json_file(path);
  if (j.contains("arch")) j["arch"].get_to(c.arch);
  if (j.contains("train")) j["train"].get_to(c.train);
  if (j.contains("synth")) j["synth"].get_to(c.synth);
  if (j.contains("split")) j["split"].get_to(c.split);
  if (j.contains("window")) j["window"].get_to(c.window);
  if (j.contains("som")) j["som"].get_to(c.som);
  if (j.contains("models_per_setting")) j["models_per_setting"].get_to(c.models_per_setting);
  if (j.contains("base_seed")) j["base_seed"].get_to(c.base_seed);
  return c;
}

// --config has to be known before the other options get their defaults.
std::string find_config(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--config") == 0 && i + 1 < argc) return argv[i + 1];
    if (std::strncmp(argv[i], "--config=", 9) == 0) return argv[i] + 9;
  }
  return {};
}

std::vector<Trace> load_traces(const fs::path& dir) {
  auto r = load_dataset(dir / "waveforms", dir / "metadata.csv");
  if (!r.report.skipped.empty())
    std::cerr << "skipped " << r.report.skipped.size() << " of " << r.report.rows << " rows\n";
  return std::move(r.traces);
}

FlagSet load_flags(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw DataError("flag journal " + path + " does not exist");
  return FlagJournal::replay(path);
}

PreparedData prepare_from(const fs::path& data, const AppConfig& c) {
  const auto traces = load_traces(data);
  auto p = prepare(traces, c.window, c.split);
  if (!p.excluded.empty()) std::cerr << "excluded " << p.excluded.size() << " traces at windowing\n";
  return p;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

std::vector<Window> pick_set(const PreparedData& p, const std::string& name) {
  if (name == "undecidable") return p.undecidable;
  if (name == "test") return p.defined.test;
  throw std::invalid_argument("unknown data set '" + name + "' (undecidable|test)");
}

ExtremalBin parse_bin(const std::string& s) {
  if (s == "left") return ExtremalBin::Left;
  if (s == "right") return ExtremalBin::Right;
  throw std::invalid_argument("--bin must be left or right");
}

ReviewService* g_service = nullptr;
extern "C" void on_signal(int) {
  if (g_service) g_service->interrupt();
}

void add_arch_options(CLI::App* cmd, AppConfig& c) {
  cmd->add_option("--conv-channels", c.arch.conv_channels, "Five conv channel counts");
  cmd->add_option("--dense-width", c.arch.dense_widths[0], "Hidden dense width");
  cmd->add_option("--kernel", c.arch.kernel_size, "Conv kernel size (odd)");
}

void add_data_options(CLI::App* cmd, AppConfig& c) {
  cmd->add_option("--pre", c.window.pre, "Samples before the P arrival");
  cmd->add_option("--post", c.window.post, "Samples from the P arrival on");
  cmd->add_option("--split-seed", c.split.seed, "Train/val/test shuffle seed");
}

void add_train_options(CLI::App* cmd, AppConfig& c) {
  cmd->add_option("--lr", c.train.learning_rate, "Learning rate");
  cmd->add_option("--batch", c.train.batch_size, "Batch size");
  cmd->add_option("--max-epochs", c.train.max_epochs, "Epoch cap");
  cmd->add_option("--patience", c.train.patience, "Early-stopping patience");
}

}  // namespace

int main(int argc, char** argv) {
  AppConfig c;
  try {
    c = load_config(find_config(argc, argv));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }

  CLI::App app{"polarcast: first-motion polarity CNN ensembles and SOM-assisted cleaning"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON config (flags > file > defaults)");
  app.fallthrough();

  std::string data, out, flags_path, setting_name = "sgd-nodrop-complete", registry;
  std::uint64_t seed = 0;
  bool parallel = false;

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", out, "Output dataset directory")->required();
  synth->add_option("--n-defined", c.synth.n_defined);
  synth->add_option("--n-undecidable", c.synth.n_undecidable);
  synth->add_option("--n-mislabeled", c.synth.n_mislabeled);
  synth->add_option("--snr", c.synth.snr_defined);
  synth->add_option("--snr-ambiguous", c.synth.snr_ambiguous);
  synth->add_option("--trace-half", c.synth.window_len, "Half trace length; P arrival index");
  synth->add_option("--seed", c.synth.seed);

  // ingest
  std::string container, metadata;
  ColumnMapping cols;
  auto* ingest = app.add_subcommand("ingest", "Import waveforms + metadata into a dataset directory");
  ingest->add_option("--container", container, "Directory of <trace id>.f32 files")->required();
  ingest->add_option("--metadata", metadata, "Metadata CSV")->required();
  ingest->add_option("--out", out)->required();
  ingest->add_option("--id-column", cols.id_column);
  ingest->add_option("--polarity-column", cols.polarity_column);
  ingest->add_option("--p-column", cols.p_arrival_column);
  ingest->add_option("--rate-column", cols.sampling_rate_column);

  // split
  auto* split_cmd = app.add_subcommand("split", "Write the train/val/test id lists");
  split_cmd->add_option("--data", data)->required();
  split_cmd->add_option("--out", out, "Output JSON file")->required();
  add_data_options(split_cmd, c);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one model");
  train_cmd->add_option("--data", data)->required();
  train_cmd->add_option("--out", out, "Checkpoint directory")->required();
  train_cmd->add_option("--setting", setting_name, "e.g. sgd-dropout-complete");
  train_cmd->add_option("--seed", seed);
  train_cmd->add_option("--flags", flags_path, "Flag journal defining the cleaned variant");
  train_cmd->add_flag("--parallel", parallel, "OpenMP batch kernels");
  add_data_options(train_cmd, c);
  add_arch_options(train_cmd, c);
  add_train_options(train_cmd, c);

  // train-grid (also reachable as "ensemble train-grid")
  auto grid_opts = [&](CLI::App* cmd) {
    cmd->add_option("--data", data)->required();
    cmd->add_option("--out", out, "Registry directory")->required();
    cmd->add_option("--flags", flags_path, "Flag journal defining the cleaned variant");
    cmd->add_option("--models-per-setting", c.models_per_setting);
    cmd->add_option("--base-seed", c.base_seed);
    cmd->add_flag("--parallel", parallel, "Train members concurrently");
    add_data_options(cmd, c);
    add_arch_options(cmd, c);
    add_train_options(cmd, c);
  };
  auto* grid_cmd = app.add_subcommand("train-grid", "Train the 8-setting model grid");
  grid_opts(grid_cmd);

  // som
  auto* som_cmd = app.add_subcommand("som", "Train a SOM on the unflagged defined windows");
  som_cmd->add_option("--data", data)->required();
  som_cmd->add_option("--out", out, "SOM directory")->required();
  som_cmd->add_option("--flags", flags_path);
  som_cmd->add_option("--rows", c.som.rows);
  som_cmd->add_option("--cols", c.som.cols);
  som_cmd->add_option("--epochs", c.som.epochs);
  som_cmd->add_option("--seed", c.som.seed);
  add_data_options(som_cmd, c);

  // serve
  ServiceConfig scfg;
  std::string som_dir;
  auto* serve = app.add_subcommand("serve", "Run the review HTTP service");
  serve->add_option("--data", data)->required();
  serve->add_option("--journal", scfg.journal_path, "Flag journal (created if missing)");
  serve->add_option("--som", som_dir, "SOM checkpoint to start from");
  serve->add_option("--registry", registry, "Model registry for histograms and audits");
  serve->add_option("--host", scfg.host);
  serve->add_option("--port", scfg.port);
  add_data_options(serve, c);

  // ensemble
  auto* ens = app.add_subcommand("ensemble", "Ensemble analytics");
  ens->require_subcommand(1);
  auto* ens_grid = ens->add_subcommand("train-grid", "Train the 8-setting model grid");
  grid_opts(ens_grid);

  std::string selector = "all", set_name = "undecidable";
  auto* hist = ens->add_subcommand("hist", "40-bin histogram of the ensemble mean");
  hist->add_option("--registry", registry)->required();
  hist->add_option("--dataset", data, "Dataset directory")->required();
  hist->add_option("--models", selector, "Model selector");
  hist->add_option("--data,--set", set_name, "undecidable|test")
      ->check(CLI::IsMember({"undecidable", "test"}));
  hist->add_option("--out", out, "Output prefix (.json, .csv, .svg)")->required();
  add_data_options(hist, c);

  std::string file_a, file_b;
  auto* compare = ens->add_subcommand("compare", "Compare two histogram JSON files");
  compare->add_option("a", file_a)->required();
  compare->add_option("b", file_b)->required();

  std::string bin = "right";
  std::size_t k = 400;
  std::uint64_t audit_seed = 0;
  auto audit_opts = [&](CLI::App* cmd) {
    cmd->add_option("--registry", registry)->required();
    cmd->add_option("--dataset", data, "Dataset directory")->required();
    cmd->add_option("--models", selector);
    cmd->add_option("--data,--set", set_name, "undecidable|test")
        ->check(CLI::IsMember({"undecidable", "test"}));
    cmd->add_option("--bin", bin, "left|right");
    cmd->add_option("-k", k);
    cmd->add_option("--seed", audit_seed);
    cmd->add_option("--out", out, "Output JSON (stdout when omitted)");
    add_data_options(cmd, c);
  };
  auto* ens_audit = ens->add_subcommand("audit", "Sample extremal-bin windows for manual audit");
  audit_opts(ens_audit);
  auto* audit = app.add_subcommand("audit", "Same as ensemble audit");
  audit_opts(audit);

  CLI11_PARSE(app, argc, argv);

  try {
    c.arch.window_len = c.window.length();

    if (*synth) {
      const auto r = synth_generate(c.synth);
      save_dataset(out, r.traces);
      json truth = json::object();
      for (const auto& [id, label] : r.true_labels)
        if (label != Polarity::Undecidable) truth[id] = to_string(label);
      write_json_file(fs::path(out) / "synth.json",
                      json{{"config", c.synth}, {"mislabeled_ids", r.mislabeled_ids}, {"true_labels", truth}});
      FlagJournal journal(fs::path(out) / "oracle_flags.jsonl");
      const FlagSet oracle = oracle_flags(r);
      for (const auto& [id, e] : oracle.entries())
        journal.append({JournalRecord::Op::Flag, e, 0});
      std::cout << "wrote " << r.traces.size() << " traces (" << r.mislabeled_ids.size()
                << " mislabeled) to " << out << '\n';
    } else if (*ingest) {
      auto r = load_dataset(fs::path(container), fs::path(metadata), cols);
      save_dataset(out, r.traces);
      json skipped = json::array();
      for (const auto& s : r.report.skipped)
        skipped.push_back({{"row", s.row}, {"trace_id", s.trace_id}, {"reason", s.reason}});
      std::cout << json{{"rows", r.report.rows}, {"loaded", r.report.loaded}, {"skipped", skipped}}.dump(2)
                << '\n';
    } else if (*split_cmd) {
      const auto p = prepare_from(data, c);
      auto ids = [](const std::vector<Window>& w) {
        std::vector<std::string> v;
        for (const auto& x : w) v.push_back(x.trace_id);
        return v;
      };
      write_json_file(out, json{{"split", c.split},
                                {"window", c.window},
                                {"train", ids(p.defined.train)},
                                {"val", ids(p.defined.val)},
                                {"test", ids(p.defined.test)},
                                {"undecidable", ids(p.undecidable)}});
      std::cout << "train " << p.defined.train.size() << ", val " << p.defined.val.size()
                << ", test " << p.defined.test.size() << '\n';
    } else if (*train_cmd) {
      const auto p = prepare_from(data, c);
      const auto g = make_grid_data(p, load_flags(flags_path));
      TrainConfig cfg = c.train;
      cfg.apply(Setting::parse(setting_name));
      cfg.seed = seed;
      cfg.exec = parallel ? ExecMode::Parallel : ExecMode::Reference;
      const auto& vd = cfg.dataset_variant == DatasetVariant::Complete ? g.complete : g.cleaned;
      const auto r = train(c.arch, {vd.train, vd.val}, cfg);
      ArchConfig a = c.arch;
      a.dropout_enabled = cfg.dropout_enabled;
      save_checkpoint(out, r.best, {a, seed, cfg.setting().name(), r.record.best_epoch, r.record.best_val_loss});
      write_json_file(fs::path(out) / "train_record.json", r.record);
      const Network net(a);
      const double acc_c = evaluate(net, r.best, g.test_complete, cfg.exec).accuracy;
      const double acc_k = evaluate(net, r.best, g.test_cleaned, cfg.exec).accuracy;
      std::cout << cfg.setting().name() << " seed " << seed << ": best epoch "
                << r.record.best_epoch << ", stop " << to_string(r.record.stop_reason)
                << ", test acc complete " << acc_c << ", cleaned " << acc_k << '\n';
    } else if (*grid_cmd || *ens_grid) {
      const auto p = prepare_from(data, c);
      const auto flags = load_flags(flags_path);
      if (flags.empty()) std::cerr << "no flags given: the cleaned variant equals the complete one\n";
      SettingsGrid grid;
      grid.models_per_setting = c.models_per_setting;
      const auto reg = train_grid(c.arch, grid, make_grid_data(p, flags), c.train, c.base_seed,
                                  parallel ? ExecMode::Parallel : ExecMode::Reference);
      save_registry(out, reg);
      const auto tables = format_accuracy_tables(reg);
      write_text(fs::path(out) / "tables.txt", tables);
      std::cout << tables;
      for (const auto& s : reg.summaries)
        for (const auto& f : s.failures) std::cerr << s.setting.name() << ": " << f << '\n';
    } else if (*som_cmd) {
      const auto p = prepare_from(data, c);
      std::vector<Window> all = p.defined.train;
      all.insert(all.end(), p.defined.val.begin(), p.defined.val.end());
      all.insert(all.end(), p.defined.test.begin(), p.defined.test.end());
      FlagSet flags = load_flags(flags_path);
      const auto r = cleaning_cycle(all, flags, c.som);
      save_som(out, r.som);
      json nodes = json::array();
      for (const auto& n : r.report.nodes)
        nodes.push_back({{"row", n.pos.row},
                         {"col", n.pos.col},
                         {"count", n.count()},
                         {"purity", n.purity ? json(*n.purity) : json(nullptr)},
                         {"member_ids", n.member_ids}});
      write_json_file(fs::path(out) / "report.json",
                      json{{"rows", r.report.rows}, {"cols", r.report.cols}, {"nodes", nodes}});
      const auto views = views_of(r.remaining);
      std::cout << "SOM " << c.som.rows << "x" << c.som.cols << " on " << r.remaining.size()
                << " windows, quantization error " << quantization_error(r.som, views) << '\n';
    } else if (*serve) {
      const auto p = prepare_from(data, c);
      std::vector<Window> all = p.defined.train;
      all.insert(all.end(), p.defined.val.begin(), p.defined.val.end());
      all.insert(all.end(), p.defined.test.begin(), p.defined.test.end());
      scfg.som = c.som;
      scfg.dataset_id = fs::path(data).filename().string();
      ReviewService svc(scfg, std::move(all), c.window.pre);
      if (!som_dir.empty()) svc.set_som(load_som(som_dir));
      if (!registry.empty())
        svc.set_ensemble(load_registry(registry),
                         {{"undecidable", p.undecidable}, {"test", p.defined.test}});
      svc.bind();
      g_service = &svc;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "listening on http://" << scfg.host << ":" << svc.port() << std::endl;
      svc.run();
      svc.stop();
      g_service = nullptr;
    } else if (*hist) {
      const auto p = prepare_from(data, c);
      const auto reg = load_registry(registry);
      const auto models = reg.params_of(selector);
      if (models.empty()) throw std::invalid_argument("no models match '" + selector + "'");
      const Network net(reg.arch);
      const auto preds = predict_mean(net, models, pick_set(p, set_name));
      const auto h = histogram(preds);
      const auto m = uncertainty_metrics(h);
      const std::string label = selector + " on " + set_name;
      write_json_file(out + ".json", histogram_json(h, m, label));
      write_text(out + ".csv", histogram_csv(h));
      write_text(out + ".svg", histogram_svg(h, label));
      std::cout << label << ": " << models.size() << " models, extremal " << m.extremal_mass
                << ", central " << m.central_mass << ", entropy " << m.entropy << '\n';
    } else if (*compare) {
      auto metrics = [](const std::string& f) {
        return uncertainty_metrics(histogram_from_json(read_json_file(f)));
      };
      const auto cmp = compare_flatness(metrics(file_a), metrics(file_b));
      std::cout << "A = " << file_a << "\nB = " << file_b << '\n' << cmp.describe() << '\n';
    } else if (*ens_audit || *audit) {
      const auto p = prepare_from(data, c);
      const auto reg = load_registry(registry);
      const auto models = reg.params_of(selector);
      if (models.empty()) throw std::invalid_argument("no models match '" + selector + "'");
      const auto windows = pick_set(p, set_name);
      const auto preds = predict_mean(Network(reg.arch), models, windows);
      std::vector<std::string> ids;
      for (const auto& w : windows) ids.push_back(w.trace_id);
      json items = json::array();
      for (const auto& it : audit_extremal_bins(preds, ids, parse_bin(bin), k, audit_seed))
        items.push_back({{"trace_id", it.trace_id}, {"prediction", it.prediction}});
      const json doc{{"bin", bin}, {"models", selector}, {"set", set_name}, {"items", items}};
      if (out.empty())
        std::cout << doc.dump(2) << '\n';
      else
        write_json_file(out, doc);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
