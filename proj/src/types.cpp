#include "polarcast/types.hpp"

namespace polarcast {

std::string_view to_string(Polarity p) {
  switch (p) {
    case Polarity::Up:
      return "up";
    case Polarity::Down:
      return "down";
    case Polarity::Undecidable:
      return "undecidable";
  }
  return "undecidable";
}

Polarity polarity_from_string(std::string_view s) {
  if (s == "up") return Polarity::Up;
  if (s == "down") return Polarity::Down;
  if (s == "undecidable") return Polarity::Undecidable;
  throw DataError("unknown polarity '" + std::string(s) + "'");
}

Polarity flip(Polarity p) {
  switch (p) {
    case Polarity::Up:
      return Polarity::Down;
    case Polarity::Down:
      return Polarity::Up;
    case Polarity::Undecidable:
      break;
  }
  throw DataError("cannot flip an undecidable polarity");
}

std::string_view to_string(TraceSource s) {
  return s == TraceSource::Real ? "real" : "synthetic";
}

void Trace::validate() const {
  if (samples.empty()) throw DataError("trace '" + id + "' has no samples");
  if (p_arrival >= samples.size())
    throw DataError("trace '" + id + "' has p_arrival outside its samples");
  if (!(sampling_rate > 0.0))
    throw DataError("trace '" + id + "' has non-positive sampling rate");
}

}  // namespace polarcast
