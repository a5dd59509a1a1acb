#pragma once

#include "ntpbias/corpus.hpp"
#include "ntpbias/io.hpp"
#include "ntpbias/optim.hpp"
#include "ntpbias/regpath.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ntpbias {

struct ReportInputs {
  const ContextTable* table = nullptr;
  std::optional<std::vector<TraceRow>> trace;
  std::optional<std::vector<RegPathPoint>> regpath;
  /// Required final corrected alignment of the trace.
  double align_threshold = 0.9;
  /// Random decoders drawn for the sampled invariants.
  int samples = 50;
  std::uint64_t seed = 0;
};

struct ReportCheck {
  std::string name;
  /// "pass", "fail" or "skip"; skipped checks do not apply to the inputs.
  std::string verdict;
  std::string detail;
};

struct Report {
  std::vector<ReportCheck> checks;
  Json summary;
  /// Plot-ready CSV of the decay of CE - entropy along W* + gamma W^mm (empty when not applicable).
  std::string decay_csv;

  bool passed() const;
  Json to_json() const;
};

/// Evaluates the invariant suite on a table and, when given, a training trace and regularization path.
Report build_report(const ReportInputs& in);

}  // namespace ntpbias
