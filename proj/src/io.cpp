#include "ntpbias/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace ntpbias {

namespace {

constexpr const char* kTraceHeader = "iter,ce,ce_gap,norm,align_raw,align_corrected,subspace_dist,grad_norm";

Json vector_to_json(const Eigen::VectorXd& x) {
  Json arr = Json::array();
  for (Eigen::Index i = 0; i < x.size(); ++i) arr.push_back(number(x(i)));
  return arr;
}

Eigen::VectorXd vector_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("expected an array of numbers");
  Eigen::VectorXd x(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) x(static_cast<Eigen::Index>(i)) = number_from(j[i]);
  return x;
}

std::vector<Token> tokens_from_json(const Json& j, int vocab_size) {
  if (!j.is_array()) throw FormatError("expected an array of token ids");
  std::vector<Token> out;
  out.reserve(j.size());
  for (const auto& t : j) {
    if (!t.is_number_integer()) throw FormatError("token ids must be integers");
    const long v = t.get<long>();
    if (vocab_size > 0 && (v < 1 || v > vocab_size)) throw FormatError("token id " + std::to_string(v) + " out of range");
    out.push_back(static_cast<Token>(v - 1));
  }
  return out;
}

Json tokens_to_json(const std::vector<Token>& tokens) {
  Json arr = Json::array();
  for (Token t : tokens) arr.push_back(t + 1);
  return arr;
}

template <typename T>
T required(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad field '") + key + "': " + e.what());
  }
}

}  // namespace

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string table_hash(const ContextTable& table) { return content_hash(table_to_json(table).dump()); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  out << contents;
  if (!out) throw FormatError("failed writing '" + path + "'");
}

Json number(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}

double number_from(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!j.is_number()) throw FormatError("expected a number");
  return j.get<double>();
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

Json decoder_to_json(const Decoder& w) {
  Json rows = Json::array();
  for (Eigen::Index v = 0; v < w.rows(); ++v) rows.push_back(vector_to_json(w.row(v).transpose()));
  return rows;
}

Decoder decoder_from_json(const Json& j) {
  if (!j.is_array() || j.empty()) throw FormatError("decoder must be a nonempty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Decoder w(j.size(), cols);
  for (std::size_t v = 0; v < j.size(); ++v) {
    const Eigen::VectorXd row = vector_from_json(j[v]);
    if (static_cast<std::size_t>(row.size()) != cols) throw FormatError("decoder rows differ in length");
    w.row(static_cast<Eigen::Index>(v)) = row.transpose();
  }
  return w;
}

std::string corpus_to_jsonl(const Corpus& corpus, const Json& meta) {
  Json header = Json{{"V", corpus.vocab_size}, {"T", corpus.seq_len}};
  if (!meta.is_null()) header["meta"] = meta;
  std::string out = header.dump() + "\n";
  for (const auto& seq : corpus.sequences) out += Json{{"tokens", tokens_to_json(seq)}}.dump() + "\n";
  return out;
}

Corpus corpus_from_jsonl(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  Corpus corpus;
  bool have_header = false;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("corpus line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!have_header) {
      corpus.vocab_size = required<int>(j, "V");
      corpus.seq_len = required<int>(j, "T");
      have_header = true;
      continue;
    }
    if (!j.contains("tokens")) throw FormatError("corpus line " + std::to_string(line_no) + ": missing 'tokens'");
    corpus.sequences.push_back(tokens_from_json(j["tokens"], corpus.vocab_size));
  }
  if (!have_header) throw FormatError("corpus has no header line");
  try {
    corpus.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid corpus: ") + e.what());
  }
  return corpus;
}

Json table_to_json(const ContextTable& table) {
  Json contexts = Json::array();
  for (const auto& c : table.contexts) {
    Json jc = Json::object();
    jc["pi"] = number(c.prior);
    jc["support"] = tokens_to_json(c.support);
    Json probs = Json::array();
    for (double p : c.probs) probs.push_back(number(p));
    jc["probs"] = probs;
    jc["embedding"] = vector_to_json(c.embedding);
    if (c.tokens) jc["tokens"] = tokens_to_json(*c.tokens);
    contexts.push_back(jc);
  }
  Json j = Json::object();
  j["V"] = table.vocab_size;
  j["d"] = table.embed_dim;
  j["mode"] = to_string(table.mode);
  j["contexts"] = contexts;
  if (!table.position_entropies.empty()) {
    Json h = Json::array();
    for (double x : table.position_entropies) h.push_back(number(x));
    j["position_entropies"] = h;
  }
  return j;
}

ContextTable table_from_json(const Json& j) {
  ContextTable table;
  table.vocab_size = required<int>(j, "V");
  table.embed_dim = required<int>(j, "d");
  if (j.contains("mode")) {
    try {
      table.mode = table_mode_from_string(j["mode"].get<std::string>());
    } catch (const std::exception& e) {
      throw FormatError(std::string("bad field 'mode': ") + e.what());
    }
  }
  if (!j.contains("contexts") || !j["contexts"].is_array()) throw FormatError("missing array 'contexts'");
  for (const auto& jc : j["contexts"]) {
    DistinctContext c;
    if (!jc.contains("pi")) throw FormatError("context missing 'pi'");
    c.prior = number_from(jc["pi"]);
    if (!jc.contains("support")) throw FormatError("context missing 'support'");
    c.support = tokens_from_json(jc["support"], table.vocab_size);
    if (!jc.contains("probs")) throw FormatError("context missing 'probs'");
    const Eigen::VectorXd probs = vector_from_json(jc["probs"]);
    c.probs.assign(probs.data(), probs.data() + probs.size());
    if (!jc.contains("embedding")) throw FormatError("context missing 'embedding'");
    c.embedding = vector_from_json(jc["embedding"]);
    if (jc.contains("tokens")) c.tokens = tokens_from_json(jc["tokens"], table.vocab_size);
    table.contexts.push_back(std::move(c));
  }
  if (j.contains("position_entropies")) {
    const Eigen::VectorXd h = vector_from_json(j["position_entropies"]);
    table.position_entropies.assign(h.data(), h.data() + h.size());
  }
  try {
    table.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("invalid table: ") + e.what());
  }
  return table;
}

Json basis_to_json(const SubspaceBasis& basis) {
  Json rows = Json::array();
  for (int i = 0; i < basis.dim(); ++i) rows.push_back(vector_to_json(basis.vectors().col(i)));
  Json j = Json::object();
  j["V"] = basis.vocab_size();
  j["d"] = basis.embed_dim();
  j["dim_f"] = basis.dim();
  j["drop_tol"] = basis.drop_tol();
  j["basis"] = rows;
  return j;
}

Json analysis_to_json(const Analysis& a) {
  Json j = Json::object();
  j["compatible"] = a.compatible;
  j["residual"] = number(a.residual);
  j["dim_f"] = a.dim_f;
  j["separable"] = a.separable;
  j["separability_status"] = to_string(a.separability_status);
  j["rank_H"] = a.rank_h;
  j["d"] = a.d;
  j["m"] = a.m;
  j["entropy"] = number(a.entropy);
  j["overparameterized"] = a.overparameterized;
  return j;
}

Json svm_to_json(const SvmSolution& s) {
  Json j = Json::object();
  j["status"] = to_string(s.status);
  j["norm"] = number(s.norm);
  j["margin_normalized"] = number(s.margin_normalized);
  j["kkt_residual"] = number(s.kkt_residual);
  j["converged"] = s.converged;
  j["iterations"] = s.iterations;
  Json active = Json::array();
  for (const auto& [ctx, tok] : s.active_constraints) active.push_back(Json::array({ctx, tok + 1}));
  j["active_constraints"] = active;
  j["W"] = s.w_mm.size() > 0 ? decoder_to_json(s.w_mm) : Json::array();
  if (s.certificate) j["certificate"] = vector_to_json(*s.certificate);
  return j;
}

Json wstar_to_json(const CompatibilityResult& r) {
  Json j = Json::object();
  j["compatible"] = r.compatible;
  j["residual"] = number(r.residual);
  j["residual_abs"] = number(r.residual_abs);
  j["equations"] = r.equations;
  j["norm"] = number(r.w_star.norm());
  j["W"] = decoder_to_json(r.w_star);
  return j;
}

std::string trace_to_csv(const std::vector<TraceRow>& rows) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.iter);
    for (double x : {r.ce, r.ce_gap, r.norm, r.align_raw, r.align_corrected, r.subspace_dist, r.grad_norm}) {
      out += ',';
      out += format_double(x);
    }
    out += '\n';
  }
  return out;
}

std::vector<TraceRow> trace_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty trace file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kTraceHeader) throw FormatError("unexpected trace header '" + line + "'");
  std::vector<TraceRow> rows;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) throw FormatError("trace line " + std::to_string(line_no) + ": expected 8 columns");
    TraceRow r;
    try {
      r.iter = std::stol(cells[0]);
      double* fields[] = {&r.ce, &r.ce_gap, &r.norm, &r.align_raw, &r.align_corrected, &r.subspace_dist, &r.grad_norm};
      for (int i = 0; i < 7; ++i) *fields[i] = std::stod(cells[i + 1]);
    } catch (const std::exception&) {
      throw FormatError("trace line " + std::to_string(line_no) + ": malformed number");
    }
    rows.push_back(r);
  }
  return rows;
}

std::string regpath_to_csv(const std::vector<RegPathPoint>& points) {
  std::string out = "bound,norm,alignment,subspace_dist,ce,ce_gap,log_multiplier,iterations,converged,interior\n";
  for (const auto& p : points) {
    for (double x : {p.bound, p.norm, p.alignment, p.subspace_dist, p.ce, p.ce_gap, p.log_multiplier}) {
      out += format_double(x);
      out += ',';
    }
    out += std::to_string(p.iterations) + ',' + (p.converged ? "1" : "0") + ',' + (p.interior ? "1" : "0") + '\n';
  }
  return out;
}

std::vector<RegPathPoint> regpath_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty regularization path file");
  std::vector<RegPathPoint> out;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 10) throw FormatError("regpath line " + std::to_string(line_no) + ": expected 10 columns");
    RegPathPoint p;
    try {
      double* fields[] = {&p.bound, &p.norm, &p.alignment, &p.subspace_dist, &p.ce, &p.ce_gap, &p.log_multiplier};
      for (int i = 0; i < 7; ++i) *fields[i] = std::stod(cells[i]);
      p.iterations = std::stol(cells[7]);
      p.converged = cells[8] == "1";
      p.interior = cells[9] == "1";
    } catch (const std::exception&) {
      throw FormatError("regpath line " + std::to_string(line_no) + ": malformed number");
    }
    out.push_back(p);
  }
  return out;
}

Json train_config_to_json(const TrainConfig& c) {
  Json j = Json::object();
  j["algo"] = to_string(c.algo);
  j["eta"] = c.eta;
  j["iters"] = c.iters;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["init"] = to_string(c.init);
  j["init_seed"] = c.init_seed;
  j["record_every"] = c.record_every;
  j["allow_large_step"] = c.allow_large_step;
  return j;
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  try {
    if (j.contains("algo")) c.algo = algorithm_from_string(j["algo"].get<std::string>());
    if (j.contains("eta")) c.eta = j["eta"].get<double>();
    if (j.contains("iters")) c.iters = j["iters"].get<long>();
    if (j.contains("beta1")) c.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) c.beta2 = j["beta2"].get<double>();
    if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
    if (j.contains("init")) c.init = init_from_string(j["init"].get<std::string>());
    if (j.contains("init_seed")) c.init_seed = j["init_seed"].get<std::uint64_t>();
    if (j.contains("record_every")) c.record_every = j["record_every"].get<long>();
    if (j.contains("allow_large_step")) c.allow_large_step = j["allow_large_step"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad train config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("bad train config: ") + e.what());
  }
  return c;
}

}  // namespace ntpbias
