#pragma once

// Analyst flags and their append-only JSON-lines journal.
//
// Journal schema, one JSON object per line:
//
//   {"op":"flag", "trace_id":str, "reason":"mislabeled"|"ambiguous",
//    "corrected_label":"up"|"down"|"undecidable" (mislabeled only),
//    "cycle":int, "author":str, "timestamp":str, "meta":{str:str}}
//   {"op":"unflag", "trace_id":str, "author":str, "timestamp":str}
//   {"op":"cycle", "cycle":int, "timestamp":str}
//
// The current FlagSet is the left fold of the journal: a later "flag" for the
// same id replaces the earlier one, "unflag" removes it, "cycle" sets the
// cycle counter.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polarcast/types.hpp"

namespace polarcast {

enum class FlagReason { Mislabeled, Ambiguous };

std::string_view to_string(FlagReason r);
FlagReason flag_reason_from_string(std::string_view s);

struct FlagEntry {
  std::string trace_id;
  FlagReason reason = FlagReason::Ambiguous;
  std::optional<Polarity> corrected_label;  // present iff reason == Mislabeled
  std::uint64_t cycle = 0;
  std::string author;
  std::string timestamp;
  std::map<std::string, std::string> meta;

  void validate() const;
  bool operator==(const FlagEntry&) const = default;
};

class FlagSet {
 public:
  // Inserts or replaces. Throws DataError when the entry is invalid.
  void upsert(FlagEntry e);
  bool erase(const std::string& trace_id);

  bool contains(const std::string& trace_id) const { return entries_.count(trace_id) > 0; }
  const FlagEntry* find(const std::string& trace_id) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::map<std::string, FlagEntry>& entries() const { return entries_; }

  std::uint64_t cycle() const { return cycle_; }
  void set_cycle(std::uint64_t c) { cycle_ = c; }

  // FNV-1a over the canonical serialization (entries sorted by id, then the
  // cycle counter).
  std::uint64_t digest() const;

  bool operator==(const FlagSet&) const = default;

 private:
  std::map<std::string, FlagEntry> entries_;
  std::uint64_t cycle_ = 0;
};

struct JournalRecord {
  enum class Op { Flag, Unflag, Cycle };
  Op op = Op::Flag;
  FlagEntry entry;         // Flag: full entry; Unflag: trace_id/author/timestamp
  std::uint64_t cycle = 0; // Cycle only
};

std::string to_json_line(const JournalRecord& r);
JournalRecord parse_journal_line(const std::string& line);

void apply(FlagSet& set, const JournalRecord& r);
FlagSet fold(std::span<const JournalRecord> records);

// Thread-safe append-only journal file. Every append is flushed before the
// call returns.
class FlagJournal {
 public:
  explicit FlagJournal(std::filesystem::path path);

  void append(const JournalRecord& r);
  void flush();
  const std::filesystem::path& path() const { return path_; }

  static std::vector<JournalRecord> read(const std::filesystem::path& path);
  static FlagSet replay(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
  std::mutex mu_;
  std::ofstream out_;
};

std::string utc_timestamp();

}  // namespace polarcast
