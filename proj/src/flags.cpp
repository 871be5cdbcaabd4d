#include "polarcast/flags.hpp"

#include <chrono>
#include <ctime>
#include <iterator>

#include <json.hpp>

namespace polarcast {

using nlohmann::json;

std::string_view to_string(FlagReason r) {
  return r == FlagReason::Mislabeled ? "mislabeled" : "ambiguous";
}

FlagReason flag_reason_from_string(std::string_view s) {
  if (s == "mislabeled") return FlagReason::Mislabeled;
  if (s == "ambiguous") return FlagReason::Ambiguous;
  throw DataError("unknown flag reason '" + std::string(s) + "'");
}

void FlagEntry::validate() const {
  if (trace_id.empty()) throw DataError("flag needs a trace_id");
  if (reason == FlagReason::Mislabeled && !corrected_label)
    throw DataError("mislabeled flag for '" + trace_id + "' needs a corrected_label");
  if (reason == FlagReason::Ambiguous && corrected_label)
    throw DataError("ambiguous flag for '" + trace_id + "' must not carry a corrected_label");
}

void FlagSet::upsert(FlagEntry e) {
  e.validate();
  auto id = e.trace_id;
  entries_.insert_or_assign(std::move(id), std::move(e));
}

bool FlagSet::erase(const std::string& trace_id) { return entries_.erase(trace_id) > 0; }

const FlagEntry* FlagSet::find(const std::string& trace_id) const {
  auto it = entries_.find(trace_id);
  return it == entries_.end() ? nullptr : &it->second;
}

namespace {

json entry_json(const FlagEntry& e) {
  json j{{"trace_id", e.trace_id},
         {"reason", to_string(e.reason)},
         {"cycle", e.cycle},
         {"author", e.author},
         {"timestamp", e.timestamp},
         {"meta", e.meta}};
  if (e.corrected_label) j["corrected_label"] = to_string(*e.corrected_label);
  return j;
}

}  // namespace

std::uint64_t FlagSet::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  for (const auto& [id, e] : entries_) mix(entry_json(e).dump());
  mix(std::to_string(cycle_));
  return h;
}

std::string to_json_line(const JournalRecord& r) {
  json j;
  switch (r.op) {
    case JournalRecord::Op::Flag:
      j = entry_json(r.entry);
      j["op"] = "flag";
      break;
    case JournalRecord::Op::Unflag:
      j = json{{"op", "unflag"},
               {"trace_id", r.entry.trace_id},
               {"author", r.entry.author},
               {"timestamp", r.entry.timestamp}};
      break;
    case JournalRecord::Op::Cycle:
      j = json{{"op", "cycle"}, {"cycle", r.cycle}, {"timestamp", r.entry.timestamp}};
      break;
  }
  return j.dump();
}

JournalRecord parse_journal_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed journal line: ") + e.what());
  }
  JournalRecord r;
  const std::string op = j.value("op", "");
  if (op == "flag") {
    r.op = JournalRecord::Op::Flag;
    auto& e = r.entry;
    e.trace_id = j.value("trace_id", "");
    e.reason = flag_reason_from_string(j.value("reason", ""));
    if (j.contains("corrected_label"))
      e.corrected_label = polarity_from_string(j["corrected_label"].get<std::string>());
    e.cycle = j.value("cycle", std::uint64_t{0});
    e.author = j.value("author", "");
    e.timestamp = j.value("timestamp", "");
    if (j.contains("meta")) e.meta = j["meta"].get<std::map<std::string, std::string>>();
    e.validate();
  } else if (op == "unflag") {
    r.op = JournalRecord::Op::Unflag;
    r.entry.trace_id = j.value("trace_id", "");
    r.entry.author = j.value("author", "");
    r.entry.timestamp = j.value("timestamp", "");
  } else if (op == "cycle") {
    r.op = JournalRecord::Op::Cycle;
    r.cycle = j.value("cycle", std::uint64_t{0});
    r.entry.timestamp = j.value("timestamp", "");
  } else {
    throw DataError("unknown journal op '" + op + "'");
  }
  return r;
}

void apply(FlagSet& set, const JournalRecord& r) {
  switch (r.op) {
    case JournalRecord::Op::Flag:
      set.upsert(r.entry);
      break;
    case JournalRecord::Op::Unflag:
      set.erase(r.entry.trace_id);
      break;
    case JournalRecord::Op::Cycle:
      set.set_cycle(r.cycle);
      break;
  }
}

FlagSet fold(std::span<const JournalRecord> records) {
  FlagSet s;
  for (const auto& r : records) apply(s, r);
  return s;
}

namespace {

// Offset just past the last newline; a process killed mid-append leaves an
// unterminated tail after it.
std::uintmax_t complete_prefix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return 0;
  const std::string text{std::istreambuf_iterator<char>(in), {}};
  const auto nl = text.rfind('\n');
  return nl == std::string::npos ? 0 : nl + 1;
}

}  // namespace

FlagJournal::FlagJournal(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  if (std::filesystem::exists(path_)) {
    const auto keep = complete_prefix(path_);
    if (keep != std::filesystem::file_size(path_)) std::filesystem::resize_file(path_, keep);
  }
  out_.open(path_, std::ios::app);
  if (!out_) throw DataError("cannot open flag journal " + path_.string());
}

void FlagJournal::append(const JournalRecord& r) {
  const std::string line = to_json_line(r);
  std::lock_guard lock(mu_);
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw DataError("failed to append to " + path_.string());
}

void FlagJournal::flush() {
  std::lock_guard lock(mu_);
  out_.flush();
}

std::vector<JournalRecord> FlagJournal::read(const std::filesystem::path& path) {
  std::vector<JournalRecord> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) return out;  // no journal yet == empty history
  const std::string text{std::istreambuf_iterator<char>(in), {}};
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;  // torn final append, never acknowledged
    if (nl > pos) out.push_back(parse_journal_line(text.substr(pos, nl - pos)));
    pos = nl + 1;
  }
  return out;
}

FlagSet FlagJournal::replay(const std::filesystem::path& path) {
  const auto records = read(path);
  return fold(records);
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

}  // namespace polarcast
