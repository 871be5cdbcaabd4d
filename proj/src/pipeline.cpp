#include "polarcast/pipeline.hpp"

#include "polarcast/somclean.hpp"

namespace polarcast {

PreparedData prepare(std::span<const Trace> traces, const WindowSpec& window,
                     const SplitSpec& split_spec) {
  std::vector<Trace> defined, undecidable;
  for (const auto& t : traces) (is_defined(t.label) ? defined : undecidable).push_back(t);

  PreparedData out;
  auto dw = make_windows(defined, window);
  auto uw = make_windows(undecidable, window);
  out.excluded = std::move(dw.excluded);
  out.excluded.insert(out.excluded.end(), uw.excluded.begin(), uw.excluded.end());
  out.undecidable = std::move(uw.windows);

  const auto parts = split_indices(dw.windows.size(), split_spec);
  auto take = [&](const std::vector<std::size_t>& idx) {
    std::vector<Window> v;
    v.reserve(idx.size());
    for (auto i : idx) v.push_back(dw.windows[i]);
    return v;
  };
  out.defined.train = take(parts.train);
  out.defined.val = take(parts.val);
  out.defined.test = take(parts.test);
  return out;
}

GridData make_grid_data(const PreparedData& data, const FlagSet& flags) {
  GridData g;
  const auto& d = data.defined;
  g.complete.train = augment_flip(d.train);
  g.complete.val = d.val;
  g.test_complete = d.test;
  auto clean = [&](const std::vector<Window>& w) {
    return apply_flags(w, flags, FlagMode::Remove).windows;
  };
  g.cleaned.train = augment_flip(clean(d.train));
  g.cleaned.val = clean(d.val);
  g.test_cleaned = clean(d.test);
  return g;
}

FlagSet oracle_flags(const SynthResult& synth, std::string_view author) {
  FlagSet flags;
  for (const auto& id : synth.mislabeled_ids) {
    FlagEntry e;
    e.trace_id = id;
    e.reason = FlagReason::Mislabeled;
    e.corrected_label = synth.true_labels.at(id);
    e.author = author;
    flags.upsert(std::move(e));
  }
  return flags;
}

}  // namespace polarcast
