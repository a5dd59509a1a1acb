#pragma once

#include "ntpbias/corpus.hpp"
#include "ntpbias/feasibility.hpp"
#include "ntpbias/optim.hpp"
#include "ntpbias/regpath.hpp"
#include "ntpbias/subspace.hpp"
#include "ntpbias/svm.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace ntpbias {

using Json = nlohmann::ordered_json;

/// Raised for unreadable or malformed input files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a, as 16 lowercase hex digits.
std::string content_hash(std::string_view bytes);
/// Hash of the canonical table JSON.
std::string table_hash(const ContextTable& table);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

/// Finite doubles render exactly (shortest round-trip form); NaN and infinities become null.
Json number(double x);
double number_from(const Json& j);

Json decoder_to_json(const Decoder& w);
Decoder decoder_from_json(const Json& j);

/// JSON lines: header {"V":..,"T":..} then one {"tokens":[..]} per sequence, ids 1-based.
/// A non-null meta object is added to the header line.
std::string corpus_to_jsonl(const Corpus& corpus, const Json& meta = nullptr);
Corpus corpus_from_jsonl(const std::string& text);

Json table_to_json(const ContextTable& table);
ContextTable table_from_json(const Json& j);

Json basis_to_json(const SubspaceBasis& basis);

struct Analysis {
  bool compatible = false;
  double residual = 0.0;
  int dim_f = 0;
  bool separable = false;
  SvmStatus separability_status = SvmStatus::kUndecided;
  int rank_h = 0;
  int d = 0;
  int m = 0;
  double entropy = 0.0;
  bool overparameterized = false;
};

Json analysis_to_json(const Analysis& a);

Json svm_to_json(const SvmSolution& s);
Json wstar_to_json(const CompatibilityResult& r);

/// Header: iter,ce,ce_gap,norm,align_raw,align_corrected,subspace_dist,grad_norm. Floats as %.17g.
std::string trace_to_csv(const std::vector<TraceRow>& rows);
std::vector<TraceRow> trace_from_csv(const std::string& text);

std::string regpath_to_csv(const std::vector<RegPathPoint>& points);
/// Reads the scalar columns back; decoders are not stored in the CSV.
std::vector<RegPathPoint> regpath_from_csv(const std::string& text);

Json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});

/// %.17g, with nan/inf spelled out.
std::string format_double(double x);

}  // namespace ntpbias
