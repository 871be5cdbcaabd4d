#pragma once

// Glue from traces to training inputs: window, split, build the cleaned
// variant from a flag set, flip-augment the training parts.

#include <span>
#include <vector>

#include "polarcast/dataio.hpp"
#include "polarcast/ensemble.hpp"
#include "polarcast/flags.hpp"

namespace polarcast {

struct PreparedData {
  Partition<Window> defined;         // train is not augmented yet
  std::vector<Window> undecidable;
  std::vector<RowIssue> excluded;    // traces that failed windowing
};

// Defined-polarity traces are windowed and split; undecidable ones are
// windowed and kept aside as out-of-distribution probes.
PreparedData prepare(std::span<const Trace> traces, const WindowSpec& window,
                     const SplitSpec& split);

// complete = everything; cleaned = flagged traces removed from train, val and
// test. Training parts are flip-augmented.
GridData make_grid_data(const PreparedData& data, const FlagSet& flags);

// Flags every planted mislabel of a synthetic set with its true label, i.e.
// what a perfect analyst would produce.
FlagSet oracle_flags(const SynthResult& synth, std::string_view author = "oracle");

}  // namespace polarcast
