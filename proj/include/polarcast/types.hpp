#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace polarcast {

enum class Polarity { Up, Down, Undecidable };

enum class TraceSource { Real, Synthetic };

// Thrown when input data violates a precondition (bad file, bad config, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown on tensor shape / architecture mismatches.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string_view to_string(Polarity p);
Polarity polarity_from_string(std::string_view s);  // "up" | "down" | "undecidable"
Polarity flip(Polarity p);                           // Up <-> Down
inline bool is_defined(Polarity p) { return p != Polarity::Undecidable; }
inline double target_of(Polarity p) { return p == Polarity::Up ? 1.0 : 0.0; }

std::string_view to_string(TraceSource s);

// Raw labeled waveform (vertical component).
struct Trace {
  std::string id;
  std::vector<float> samples;
  double sampling_rate = 100.0;
  std::size_t p_arrival = 0;
  Polarity label = Polarity::Undecidable;
  TraceSource source = TraceSource::Real;

  void validate() const;
};

// Fixed-length normalized model input anchored on the P arrival.
struct Window {
  std::vector<float> values;
  std::string trace_id;
  Polarity label = Polarity::Undecidable;
};

}  // namespace polarcast
