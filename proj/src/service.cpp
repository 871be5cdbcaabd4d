#include "polarcast/service.hpp"

#include <algorithm>
#include <stdexcept>

#include <httplib.h>

#include "polarcast/rng.hpp"

namespace polarcast {

using nlohmann::json;

std::string_view to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Queued: return "queued";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
    case JobStatus::Failed: return "failed";
  }
  return "unknown";
}

std::vector<float> decimate_minmax(std::span<const float> x, std::size_t max_points) {
  if (max_points < 2) throw std::invalid_argument("decimation needs at least 2 points");
  if (x.size() <= max_points) return {x.begin(), x.end()};
  const std::size_t n = x.size(), buckets = max_points / 2;
  std::vector<float> out;
  out.reserve(2 * buckets);
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t lo = b * n / buckets, hi = (b + 1) * n / buckets;
    std::size_t imin = lo, imax = lo;
    for (std::size_t i = lo + 1; i < hi; ++i) {
      if (x[i] < x[imin]) imin = i;
      if (x[i] > x[imax]) imax = i;
    }
    out.push_back(x[std::min(imin, imax)]);
    out.push_back(x[std::max(imin, imax)]);
  }
  return out;
}

std::size_t decimated_index(std::size_t n, std::size_t max_points, std::size_t index) {
  if (n <= max_points) return index;
  const std::size_t buckets = max_points / 2;
  std::size_t b = index * buckets / n;
  while (b + 1 < buckets && (b + 1) * n / buckets <= index) ++b;
  while (b > 0 && b * n / buckets > index) --b;
  return 2 * b;
}

namespace {

Response error(int status, std::string message, json fields = nullptr) {
  json body{{"error", std::move(message)}};
  if (!fields.is_null()) body["fields"] = std::move(fields);
  return {status, std::move(body)};
}

json entry_json(const FlagEntry& e) {
  json j{{"trace_id", e.trace_id},
         {"reason", to_string(e.reason)},
         {"cycle", e.cycle},
         {"author", e.author},
         {"timestamp", e.timestamp},
         {"meta", e.meta}};
  j["corrected_label"] = e.corrected_label ? json(to_string(*e.corrected_label)) : json(nullptr);
  return j;
}

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  void u64(std::uint64_t v) { bytes(&v, sizeof v); }
  void str(const std::string& s) {
    bytes(s.data(), s.size());
    u64(s.size());
  }
};

}  // namespace

ReviewService::ReviewService(ServiceConfig cfg, std::vector<Window> windows, std::size_t p_index)
    : cfg_(std::move(cfg)), windows_(std::move(windows)), p_index_(p_index) {
  for (std::size_t i = 0; i < windows_.size(); ++i)
    if (!index_.emplace(windows_[i].trace_id, i).second)
      throw DataError("duplicate trace id '" + windows_[i].trace_id + "'");
  const auto records = FlagJournal::read(cfg_.journal_path);
  flags_ = fold(records);
  journal_records_ = records.size();
  journal_ = std::make_unique<FlagJournal>(cfg_.journal_path);
  const std::size_t n = std::max<std::size_t>(1, cfg_.workers);
  for (std::size_t i = 0; i < n; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ReviewService::~ReviewService() {
  try {
    stop();
  } catch (...) {
  }
}

void ReviewService::set_som(SOMap som) {
  std::lock_guard w(writer_mu_);
  std::unique_lock lock(state_mu_);
  som_ = std::move(som);
  ++som_id_;
  recluster_locked();
}

void ReviewService::recluster_locked() {
  clustered_ = apply_flags(windows_, flags_, FlagMode::Remove).windows;
  report_ = assign_clusters(*som_, clustered_);
}

void ReviewService::set_ensemble(Registry reg, std::map<std::string, std::vector<Window>> datasets) {
  std::unique_lock lock(state_mu_);
  registry_ = std::move(reg);
  datasets_ = std::move(datasets);
}

Polarity ReviewService::current_label(const Window& w) const {
  const FlagEntry* f = flags_.find(w.trace_id);
  if (f && f->corrected_label) return *f->corrected_label;
  return w.label;
}

Response ReviewService::health() const {
  std::shared_lock lock(state_mu_);
  return {200, json{{"status", "ok"},
                    {"dataset", cfg_.dataset_id},
                    {"windows", windows_.size()},
                    {"cycle", flags_.cycle()},
                    {"som_id", som_ ? json(som_id_) : json(nullptr)}}};
}

Response ReviewService::som_map() const {
  std::shared_lock lock(state_mu_);
  if (!som_) return error(404, "no SOM has been trained or loaded yet; POST /cycle to train one");
  json nodes = json::array();
  for (const auto& node : report_.nodes) {
    std::vector<float> mean(node.mean.begin(), node.mean.end());
    nodes.push_back({{"row", node.pos.row},
                     {"col", node.pos.col},
                     {"count", node.count()},
                     {"purity", node.purity ? json(*node.purity) : json(nullptr)},
                     {"majority_purity", node.purity ? json(*majority_purity(node)) : json(nullptr)},
                     {"mean", decimate_minmax(mean, cfg_.max_points)},
                     {"member_ids", node.member_ids}});
  }
  return {200, json{{"dataset", cfg_.dataset_id},
                    {"som_id", som_id_},
                    {"cycle", flags_.cycle()},
                    {"rows", report_.rows},
                    {"cols", report_.cols},
                    {"window_len", som_->dim},
                    {"p_index", decimated_index(som_->dim, cfg_.max_points, p_index_)},
                    {"nodes", std::move(nodes)}}};
}

Response ReviewService::som_node_waveforms(std::size_t row, std::size_t col,
                                           std::optional<std::size_t> limit) const {
  std::shared_lock lock(state_mu_);
  if (!som_) return error(404, "no SOM has been trained or loaded yet");
  if (row >= report_.rows || col >= report_.cols)
    return error(404, "node (" + std::to_string(row) + ", " + std::to_string(col) +
                          ") is outside the " + std::to_string(report_.rows) + "x" +
                          std::to_string(report_.cols) + " grid");
  const auto& node = report_.nodes[row * report_.cols + col];
  const std::size_t k = std::min(limit.value_or(cfg_.default_limit), node.count());
  json waves = json::array();
  for (std::size_t i = 0; i < k; ++i) {
    const Window& w = clustered_[node.member_indices[i]];
    waves.push_back({{"trace_id", w.trace_id},
                     {"label", to_string(current_label(w))},
                     {"flagged", flags_.contains(w.trace_id)},
                     {"values", decimate_minmax(w.values, cfg_.max_points)}});
  }
  const std::size_t n = som_->dim;
  return {200, json{{"row", row},
                    {"col", col},
                    {"count", node.count()},
                    {"returned", k},
                    {"p_index", decimated_index(n, cfg_.max_points, p_index_)},
                    {"waveforms", std::move(waves)}}};
}

Response ReviewService::get_flags() const {
  std::shared_lock lock(state_mu_);
  json list = json::array();
  for (const auto& [id, e] : flags_.entries()) list.push_back(entry_json(e));
  return {200, json{{"cycle", flags_.cycle()}, {"count", flags_.size()}, {"flags", std::move(list)}}};
}

Response ReviewService::post_flag(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    return error(400, std::string("body is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) return error(400, "body must be a JSON object");

  json fields = json::object();
  FlagEntry e;
  if (!j.contains("trace_id") || !j["trace_id"].is_string() || j["trace_id"].get<std::string>().empty())
    fields["trace_id"] = "required non-empty string";
  else
    e.trace_id = j["trace_id"].get<std::string>();

  if (!j.contains("reason") || !j["reason"].is_string()) {
    fields["reason"] = "required, one of \"mislabeled\", \"ambiguous\"";
  } else {
    try {
      e.reason = flag_reason_from_string(j["reason"].get<std::string>());
    } catch (const DataError&) {
      fields["reason"] = "must be \"mislabeled\" or \"ambiguous\"";
    }
  }

  const bool has_label = j.contains("corrected_label") && !j["corrected_label"].is_null();
  if (has_label) {
    if (!j["corrected_label"].is_string()) {
      fields["corrected_label"] = "must be \"up\", \"down\" or \"undecidable\"";
    } else {
      try {
        e.corrected_label = polarity_from_string(j["corrected_label"].get<std::string>());
      } catch (const DataError&) {
        fields["corrected_label"] = "must be \"up\", \"down\" or \"undecidable\"";
      }
    }
  }
  if (!fields.contains("reason") && !fields.contains("corrected_label")) {
    if (e.reason == FlagReason::Mislabeled && !has_label)
      fields["corrected_label"] = "required when reason is \"mislabeled\"";
    if (e.reason == FlagReason::Ambiguous && has_label)
      fields["corrected_label"] = "not allowed when reason is \"ambiguous\"";
  }

  if (j.contains("author")) {
    if (j["author"].is_string())
      e.author = j["author"].get<std::string>();
    else
      fields["author"] = "must be a string";
  }
  if (j.contains("meta")) {
    bool ok = j["meta"].is_object();
    if (ok)
      for (const auto& [k, v] : j["meta"].items()) ok = ok && v.is_string();
    if (ok)
      e.meta = j["meta"].get<std::map<std::string, std::string>>();
    else
      fields["meta"] = "must be an object of strings";
  }
  if (!fields.empty()) return error(400, "invalid flag", std::move(fields));
  if (!index_.count(e.trace_id)) return error(404, "unknown trace_id '" + e.trace_id + "'");

  std::lock_guard w(writer_mu_);
  std::unique_lock lock(state_mu_);
  e.cycle = flags_.cycle();
  e.timestamp = utc_timestamp();
  journal_->append({JournalRecord::Op::Flag, e, 0});
  ++journal_records_;
  flags_.upsert(e);
  return {201, entry_json(e)};
}

Response ReviewService::delete_flag(const std::string& trace_id) {
  std::lock_guard w(writer_mu_);
  std::unique_lock lock(state_mu_);
  if (!flags_.contains(trace_id)) return error(404, "trace '" + trace_id + "' is not flagged");
  JournalRecord r;
  r.op = JournalRecord::Op::Unflag;
  r.entry.trace_id = trace_id;
  r.entry.timestamp = utc_timestamp();
  journal_->append(r);
  ++journal_records_;
  flags_.erase(trace_id);
  return {200, json{{"trace_id", trace_id}, {"removed", true}}};
}

Response ReviewService::post_cycle() {
  std::shared_ptr<Job> job;
  {
    std::lock_guard lock(jobs_mu_);
    if (active_cycle_) {
      const auto s = active_cycle_->status.load();
      if (s == JobStatus::Queued || s == JobStatus::Running)
        return error(409, "cleaning cycle job " + std::to_string(active_cycle_->id) +
                              " is still " + std::string(to_string(s)));
    }
    {
      std::lock_guard q(queue_mu_);
      if (stopping_) return error(503, "service is shutting down");
      if (queue_.size() >= cfg_.max_queued_jobs) return error(503, "job queue is full");
      job = std::make_shared<Job>();
      job->id = next_job_++;
      job->kind = "cycle";
      jobs_[job->id] = job;
      active_cycle_ = job;
      queue_.push_back(job);
    }
  }
  queue_cv_.notify_one();
  return {202, json{{"job_id", job->id}, {"status", "queued"}}};
}

Response ReviewService::get_job(std::uint64_t id) const {
  std::shared_ptr<Job> job;
  {
    std::lock_guard lock(jobs_mu_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return error(404, "unknown job " + std::to_string(id));
    job = it->second;
  }
  const JobStatus s = job->status.load(std::memory_order_acquire);
  json body{{"id", job->id}, {"kind", job->kind}, {"status", to_string(s)}};
  if (s == JobStatus::Done) body["result"] = job->result;
  if (s == JobStatus::Failed) body["error"] = job->error;
  return {200, std::move(body)};
}

void ReviewService::worker_loop() {
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock q(queue_mu_);
      queue_cv_.wait(q, [this] { return stopping_ || !queue_.empty(); });
      if (queue_.empty()) return;
      job = queue_.front();
      queue_.pop_front();
      ++busy_;
    }
    run_cycle(job);
    {
      std::lock_guard q(queue_mu_);
      --busy_;
    }
    idle_cv_.notify_all();
  }
}

void ReviewService::run_cycle(const std::shared_ptr<Job>& job) {
  job->status.store(JobStatus::Running, std::memory_order_release);
  try {
    if (cfg_.on_cycle_start) cfg_.on_cycle_start();
    FlagSet snapshot;
    {
      std::shared_lock lock(state_mu_);
      snapshot = flags_;
    }
    CycleResult r = cleaning_cycle(windows_, snapshot, cfg_.som);
    const auto views = views_of(r.remaining);
    const double qe = quantization_error(r.som, views);

    std::lock_guard w(writer_mu_);
    std::unique_lock lock(state_mu_);
    const std::uint64_t cycle = flags_.cycle() + 1;
    JournalRecord rec;
    rec.op = JournalRecord::Op::Cycle;
    rec.cycle = cycle;
    rec.entry.timestamp = utc_timestamp();
    journal_->append(rec);
    ++journal_records_;
    flags_.set_cycle(cycle);
    som_ = std::move(r.som);
    ++som_id_;
    // Flags posted while the SOM was training must not show up in the map.
    recluster_locked();
    job->result = json{{"cycle", cycle},
                       {"som_id", som_id_},
                       {"clustered", clustered_.size()},
                       {"quantization_error", qe}};
    job->status.store(JobStatus::Done, std::memory_order_release);
  } catch (const std::exception& e) {
    job->error = e.what();
    job->status.store(JobStatus::Failed, std::memory_order_release);
  }
}

void ReviewService::wait_idle() {
  std::unique_lock q(queue_mu_);
  idle_cv_.wait(q, [this] { return queue_.empty() && busy_ == 0; });
}

std::vector<double> ReviewService::ensemble_predictions(const std::string& selector,
                                                        const std::vector<Window>& windows) const {
  const auto models = registry_->params_of(selector);
  if (models.empty()) return {};
  const Network net(registry_->arch);
  return predict_mean(net, models, windows);
}

Response ReviewService::ensemble_histograms(const std::string& selector,
                                            const std::string& data) const {
  std::shared_lock lock(state_mu_);
  if (!registry_) return error(404, "no ensemble registry is loaded");
  auto it = datasets_.find(data);
  if (it == datasets_.end()) return error(404, "unknown data set '" + data + "'");
  std::vector<double> preds;
  try {
    preds = ensemble_predictions(selector, it->second);
  } catch (const std::invalid_argument& e) {
    return error(400, e.what(), json{{"selector", e.what()}});
  }
  if (preds.empty() && !it->second.empty())
    return error(404, "no models match selector '" + selector + "'");
  const auto h = histogram(preds);
  json body = histogram_json(h, uncertainty_metrics(h), selector + " on " + data);
  body["selector"] = selector;
  body["data"] = data;
  body["models"] = registry_->select(selector).size();
  return {200, std::move(body)};
}

Response ReviewService::audit_extremal(const std::string& bin, std::size_t k,
                                       const std::string& selector, const std::string& data,
                                       std::optional<std::uint64_t> seed) const {
  ExtremalBin side;
  if (bin == "left")
    side = ExtremalBin::Left;
  else if (bin == "right")
    side = ExtremalBin::Right;
  else
    return error(400, "invalid query", json{{"bin", "must be \"left\" or \"right\""}});

  std::shared_lock lock(state_mu_);
  if (!registry_) return error(404, "no ensemble registry is loaded");
  auto it = datasets_.find(data);
  if (it == datasets_.end()) return error(404, "unknown data set '" + data + "'");
  const auto& windows = it->second;
  std::vector<double> preds;
  try {
    preds = ensemble_predictions(selector, windows);
  } catch (const std::invalid_argument& e) {
    return error(400, e.what(), json{{"selector", e.what()}});
  }
  if (preds.empty() && !windows.empty())
    return error(404, "no models match selector '" + selector + "'");
  std::vector<std::string> ids;
  ids.reserve(windows.size());
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    ids.push_back(windows[i].trace_id);
    pos.emplace(windows[i].trace_id, i);
  }
  const auto items = audit_extremal_bins(preds, ids, side, k, seed.value_or(cfg_.audit_seed));
  json out = json::array();
  for (const auto& item : items) {
    const Window& w = windows[pos.at(item.trace_id)];
    const FlagEntry* f = flags_.find(w.trace_id);
    out.push_back({{"trace_id", item.trace_id},
                   {"prediction", item.prediction},
                   {"label", to_string(f && f->corrected_label ? *f->corrected_label : w.label)},
                   {"flagged", f != nullptr},
                   {"values", decimate_minmax(w.values, cfg_.max_points)}});
  }
  const std::size_t n = windows.empty() ? 0 : windows.front().values.size();
  return {200, json{{"bin", bin},
                    {"selector", selector},
                    {"data", data},
                    {"k", k},
                    {"returned", items.size()},
                    {"p_index", decimated_index(n, cfg_.max_points, p_index_)},
                    {"items", std::move(out)}}};
}

std::uint64_t ReviewService::state_digest() const {
  Fnv f;
  {
    std::shared_lock lock(state_mu_);
    f.u64(flags_.digest());
    f.u64(journal_records_);
    f.u64(som_id_);
    if (som_) f.bytes(som_->prototypes.data(), som_->prototypes.size() * sizeof(float));
    for (const auto& node : report_.nodes)
      for (const auto& id : node.member_ids) f.str(id);
  }
  std::lock_guard lock(jobs_mu_);
  for (const auto& [id, job] : jobs_) {
    f.u64(id);
    f.u64(static_cast<std::uint64_t>(job->status.load()));
  }
  return f.h;
}

FlagSet ReviewService::flags() const {
  std::shared_lock lock(state_mu_);
  return flags_;
}

// ---------------------------------------------------------------------------
// HTTP
// ---------------------------------------------------------------------------

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

std::optional<std::uint64_t> parse_uint(const std::string& s) {
  if (s.empty() || s.size() > 19) return std::nullopt;
  std::uint64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return v;
}

}  // namespace

void ReviewService::install_routes() {
  auto& s = *server_;
  auto guard = [](auto fn) {
    return [fn](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, fn(req));
      } catch (const std::exception& e) {
        send(res, error(500, e.what()));
      }
    };
  };
  auto query = [](const httplib::Request& req, const char* key, std::string def) {
    return req.has_param(key) ? req.get_param_value(key) : def;
  };

  s.Get("/health", guard([this](const httplib::Request&) { return health(); }));
  s.Get("/som/map", guard([this](const httplib::Request&) { return som_map(); }));
  s.Get(R"(/som/node/(\d+)/(\d+)/waveforms)", guard([this](const httplib::Request& req) {
          std::optional<std::size_t> limit;
          if (req.has_param("limit")) {
            auto v = parse_uint(req.get_param_value("limit"));
            if (!v) return error(400, "invalid query", json{{"limit", "must be a non-negative integer"}});
            limit = *v;
          }
          const auto r = parse_uint(req.matches[1]), c = parse_uint(req.matches[2]);
          if (!r || !c) return error(404, "unknown node");
          return som_node_waveforms(*r, *c, limit);
        }));
  s.Get("/flags", guard([this](const httplib::Request&) { return get_flags(); }));
  s.Post("/flags", guard([this](const httplib::Request& req) { return post_flag(req.body); }));
  s.Delete(R"(/flags/(.+))", guard([this](const httplib::Request& req) {
             return delete_flag(req.matches[1]);
           }));
  s.Post("/cycle", guard([this](const httplib::Request&) { return post_cycle(); }));
  s.Get(R"(/jobs/(\d+))", guard([this](const httplib::Request& req) {
          auto id = parse_uint(req.matches[1]);
          if (!id) return error(404, "unknown job");
          return get_job(*id);
        }));
  s.Get("/ensemble/histograms", guard([this, query](const httplib::Request& req) {
          return ensemble_histograms(query(req, "selector", "all"),
                                     query(req, "data", "undecidable"));
        }));
  s.Get("/audit/extremal", guard([this, query](const httplib::Request& req) {
          json fields = json::object();
          std::size_t k = 400;
          if (req.has_param("k")) {
            auto v = parse_uint(req.get_param_value("k"));
            if (v) k = *v;
            else fields["k"] = "must be a non-negative integer";
          }
          std::optional<std::uint64_t> seed;
          if (req.has_param("seed")) {
            seed = parse_uint(req.get_param_value("seed"));
            if (!seed) fields["seed"] = "must be a non-negative integer";
          }
          if (!req.has_param("bin")) fields["bin"] = "required, \"left\" or \"right\"";
          if (!fields.empty()) return error(400, "invalid query", fields);
          return audit_extremal(req.get_param_value("bin"), k, query(req, "selector", "all"),
                                query(req, "data", "undecidable"), seed);
        }));
  s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(json{{"error", "no route for " + req.method + " " + req.path}}.dump(),
                      "application/json");
    }
  });
}

void ReviewService::bind() {
  server_ = std::make_unique<httplib::Server>();
  // httplib's default adds SO_REUSEPORT, which lets a second instance share
  // the port silently. A busy port has to fail here instead.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof yes);
  });
  install_routes();
  if (cfg_.port == 0) {
    bound_port_ = server_->bind_to_any_port(cfg_.host);
    if (bound_port_ < 0) throw std::runtime_error("cannot bind any port on " + cfg_.host);
  } else {
    if (!server_->bind_to_port(cfg_.host, cfg_.port))
      throw std::runtime_error("cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port) +
                               " (port busy?)");
    bound_port_ = cfg_.port;
  }
}

void ReviewService::start() {
  if (!server_) bind();
  server_thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void ReviewService::run() {
  if (!server_) bind();
  server_->listen_after_bind();
}

void ReviewService::interrupt() {
  if (server_) server_->stop();
}

void ReviewService::stop() {
  if (stopped_) return;
  stopped_ = true;
  if (server_) server_->stop();
  if (server_thread_.joinable()) server_thread_.join();
  {
    std::lock_guard q(queue_mu_);
    stopping_ = true;
  }
  queue_cv_.notify_all();
  for (auto& t : workers_)
    if (t.joinable()) t.join();
  if (journal_) journal_->flush();
}

}  // namespace polarcast
