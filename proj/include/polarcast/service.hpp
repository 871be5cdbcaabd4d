#pragma once

// Local HTTP/JSON facade over the cleaning loop. Every endpoint is also a
// plain method returning {status, body}, so the logic can be exercised
// without sockets.
//
//   GET    /health
//   GET    /som/map
//   GET    /som/node/{r}/{c}/waveforms?limit=K
//   GET    /flags
//   POST   /flags            {trace_id, reason, corrected_label?, author?, meta?}
//   DELETE /flags/{trace_id}
//   POST   /cycle
//   GET    /jobs/{id}
//   GET    /ensemble/histograms?selector=S&data=D
//   GET    /audit/extremal?bin=left|right&k=N&selector=S&data=D&seed=X

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "polarcast/ensemble.hpp"
#include "polarcast/flags.hpp"
#include "polarcast/somclean.hpp"

namespace httplib {
class Server;
}

namespace polarcast {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8765;  // 0 picks a free port
  std::filesystem::path journal_path = "flags.jsonl";
  SomConfig som;
  std::size_t workers = 1;
  std::size_t max_queued_jobs = 8;
  std::size_t max_points = 512;  // per transported waveform
  std::size_t default_limit = 20;
  std::uint64_t audit_seed = 0;
  std::string dataset_id = "dataset";
  // Test hook, runs on the worker at the start of every cycle job.
  std::function<void()> on_cycle_start;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

enum class JobStatus { Queued, Running, Done, Failed };
std::string_view to_string(JobStatus s);

// Min-max decimation: the trace is cut into max_points/2 equal buckets and
// each bucket contributes its minimum and maximum in time order. Inputs that
// already fit are returned unchanged.
std::vector<float> decimate_minmax(std::span<const float> x, std::size_t max_points);
// Position of original sample `index` in the decimated output.
std::size_t decimated_index(std::size_t n, std::size_t max_points, std::size_t index);

class ReviewService {
 public:
  // `p_index` is the P-arrival position inside every window (WindowSpec::pre).
  // The flag journal is replayed before anything else happens.
  ReviewService(ServiceConfig cfg, std::vector<Window> windows, std::size_t p_index);
  ~ReviewService();

  ReviewService(const ReviewService&) = delete;
  ReviewService& operator=(const ReviewService&) = delete;

  // Installs a SOM (e.g. a loaded checkpoint) and clusters the unflagged windows.
  void set_som(SOMap som);
  // Ensemble artifacts: a registry plus named window sets ("undecidable", "test").
  void set_ensemble(Registry reg, std::map<std::string, std::vector<Window>> datasets);

  Response health() const;
  Response som_map() const;
  Response som_node_waveforms(std::size_t row, std::size_t col, std::optional<std::size_t> limit) const;
  Response get_flags() const;
  Response post_flag(const std::string& body);
  Response delete_flag(const std::string& trace_id);
  Response post_cycle();
  Response get_job(std::uint64_t id) const;
  Response ensemble_histograms(const std::string& selector, const std::string& data) const;
  Response audit_extremal(const std::string& bin, std::size_t k, const std::string& selector,
                          const std::string& data, std::optional<std::uint64_t> seed) const;

  // Hash over flags, cycle, SOM, cluster report and job table.
  std::uint64_t state_digest() const;
  FlagSet flags() const;
  // Blocks until no job is queued or running.
  void wait_idle();

  // HTTP. bind() throws std::runtime_error when the port is taken.
  void bind();
  int port() const { return bound_port_; }
  void start();   // serve on a background thread (after bind)
  void run();     // serve on the calling thread (after bind)
  void stop();    // stop serving, drain jobs, flush the journal
  // Only unblocks run(); safe to call from a signal handler context.
  void interrupt();

 private:
  struct Job {
    std::uint64_t id = 0;
    std::string kind;
    std::atomic<JobStatus> status{JobStatus::Queued};
    std::string error;
    nlohmann::json result;
  };

  void install_routes();
  void worker_loop();
  void run_cycle(const std::shared_ptr<Job>& job);
  void recluster_locked();
  std::vector<double> ensemble_predictions(const std::string& selector,
                                           const std::vector<Window>& windows) const;
  Polarity current_label(const Window& w) const;

  ServiceConfig cfg_;
  std::vector<Window> windows_;
  std::map<std::string, std::size_t> index_;
  std::size_t p_index_ = 0;

  mutable std::shared_mutex state_mu_;
  std::mutex writer_mu_;  // serializes every mutation of flags + journal
  FlagSet flags_;
  std::unique_ptr<FlagJournal> journal_;
  std::size_t journal_records_ = 0;
  std::optional<SOMap> som_;
  std::uint64_t som_id_ = 0;
  ClusterReport report_;
  std::vector<Window> clustered_;

  std::optional<Registry> registry_;
  std::map<std::string, std::vector<Window>> datasets_;

  mutable std::mutex jobs_mu_;
  std::map<std::uint64_t, std::shared_ptr<Job>> jobs_;
  std::uint64_t next_job_ = 1;
  std::shared_ptr<Job> active_cycle_;

  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::condition_variable idle_cv_;
  std::deque<std::shared_ptr<Job>> queue_;
  std::size_t busy_ = 0;
  bool stopping_ = false;
  std::vector<std::thread> workers_;

  std::unique_ptr<httplib::Server> server_;
  std::thread server_thread_;
  int bound_port_ = 0;
  bool stopped_ = false;
};

}  // namespace polarcast
