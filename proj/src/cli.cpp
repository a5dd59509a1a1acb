#include "ntpbias/cli.hpp"

#include "ntpbias/corpus.hpp"
#include "ntpbias/feasibility.hpp"
#include "ntpbias/metrics.hpp"
#include "ntpbias/optim.hpp"
#include "ntpbias/regpath.hpp"
#include "ntpbias/report.hpp"
#include "ntpbias/subspace.hpp"
#include "ntpbias/svm.hpp"

#include "CLI11.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>

namespace ntpbias::cli {

namespace {

struct Param {
  std::string key;
  Json def;
  std::string help;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
};

using Handler = std::function<int(const Json& cfg, Io& io)>;

struct Command {
  std::string name;
  std::string help;
  std::vector<Param> params;
  Handler run;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvariantFailure : public std::runtime_error {
 public:
  InvariantFailure(const std::string& what, Json failed) : std::runtime_error(what), failed(std::move(failed)) {}
  Json failed;
};

std::string flag_name(const std::string& key) {
  std::string s = "--" + key;
  for (auto& ch : s) {
    if (ch == '_') ch = '-';
  }
  return s;
}

// ---- parameter tables ----

std::vector<Param> generate_params() {
  return {
      {"contexts", 50, "number of distinct contexts m"},
      {"dim", 60, "embedding dimension d"},
      {"vocab", 10, "vocabulary size V"},
      {"support", 6, "support size S of every context (S < V)"},
      {"samples", 5000, "number of sequences n"},
      {"seq_len", 0, "sequence length T (0 picks the smallest T with V^(T-1) >= m)"},
      {"seed", 0, "generator seed"},
      {"embed_std", nullptr, "embedding entry stddev (default 1/sqrt(d))"},
      {"out_corpus", "corpus.jsonl", "corpus output path"},
      {"out_table", "ground_truth.json", "ground-truth table output path"},
  };
}

std::vector<Param> aggregate_params() {
  return {
      {"corpus", "", "corpus input path"},
      {"mode", "fixed-length", "fixed-length or autoregressive"},
      {"embeddings_from", "", "table whose contexts carry tokens; embeddings are looked up there"},
      {"embed_dim", 0, "dimension of seeded embeddings (when no lookup table is given)"},
      {"embed_seed", 0, "seed of seeded embeddings"},
      {"embed_std", nullptr, "stddev of seeded embeddings (default 1/sqrt(d))"},
      {"out", "table.json", "table output path"},
  };
}

std::vector<Param> analyze_params() {
  return {
      {"table", "", "table input path"},
      {"tol", 1e-8, "relative residual threshold for compatibility"},
      {"out", "", "analysis output path (stdout when empty)"},
  };
}

std::vector<Param> solve_params() {
  return {
      {"table", "", "table input path"},
      {"tol", 1e-8, "margin program tolerance"},
      {"max_iters", 1000000, "margin program iteration cap"},
      {"out", "solution.json", "solution output path"},
  };
}

std::vector<Param> train_params() {
  return {
      {"table", "", "table input path"},
      {"algo", "gd", "gd, ngd or adam"},
      {"eta", 0.5, "step size"},
      {"iters", 10000, "number of iterations"},
      {"beta1", 0.9, "Adam first-moment decay"},
      {"beta2", 0.99, "Adam second-moment decay"},
      {"epsilon", 1e-8, "Adam denominator offset"},
      {"init", "zero", "zero or lecun (N(0, 1/d) entries)"},
      {"init_seed", 0, "seed of the lecun initialization"},
      {"record_every", 10, "trace cadence"},
      {"allow_large_step", false, "permit gd steps above 1/(2 L_est)"},
      {"out", "trace.csv", "trace CSV output path"},
      {"out_meta", "", "run metadata path (default: <out>.meta.json)"},
  };
}

std::vector<Param> regpath_params() {
  return {
      {"table", "", "table input path"},
      {"bounds", "2,4,8,16,32,64,128,256", "comma-separated increasing radii"},
      {"method", "ridge-newton", "ridge-newton or projected-gradient"},
      {"budget", 200000, "per-radius budget (gradient steps or multiplier evaluations)"},
      {"tol", 1e-8, "projected-gradient stopping tolerance"},
      {"out", "regpath.csv", "path CSV output path"},
      {"out_meta", "", "run metadata path (default: <out>.meta.json)"},
  };
}

std::vector<Param> report_params() {
  return {
      {"table", "", "table input path"},
      {"trace", "", "trace CSV (optional)"},
      {"regpath", "", "regularization path CSV (optional)"},
      {"align_threshold", 0.9, "required final corrected alignment of the trace"},
      {"check_draws", 50, "random decoders per sampled invariant"},
      {"check_seed", 0, "seed of the sampled invariants"},
      {"out_dir", "report", "directory for report.json and plot CSVs"},
  };
}

std::vector<Param> pipeline_params() {
  std::vector<Param> ps = generate_params();
  ps.erase(std::remove_if(ps.begin(), ps.end(), [](const Param& p) { return p.key.rfind("out", 0) == 0; }), ps.end());
  for (const auto& p : train_params()) {
    if (p.key != "table" && p.key.rfind("out", 0) != 0) ps.push_back(p);
  }
  ps.push_back({"mode", "fixed-length", "aggregation mode"});
  ps.push_back({"bounds", "2,4,8,16,32,64,128,256", "regularization path radii"});
  ps.push_back({"method", "ridge-newton", "regularization path method"});
  ps.push_back({"budget", 200000, "regularization path budget"});
  ps.push_back({"align_threshold", 0.9, "report alignment threshold"});
  ps.push_back({"skip_regpath", false, "do not compute the regularization path"});
  ps.push_back({"out_dir", "run", "output directory"});
  return ps;
}

// ---- helpers ----

Json meta_for(const std::string& command, const Json& cfg, const Json& inputs) {
  Json m = Json::object();
  m["command"] = command;
  m["config"] = cfg;
  m["inputs"] = inputs;
  return m;
}

Json hashed_input(const std::string& path, const std::string& contents) {
  return Json{{"path", path}, {"hash", content_hash(contents)}};
}

std::string require_path(const Json& cfg, const char* key) {
  const std::string p = cfg[key].get<std::string>();
  if (p.empty()) throw UsageError(std::string("missing required ") + flag_name(key));
  return p;
}

struct LoadedTable {
  ContextTable table;
  std::string contents;
};

LoadedTable load_table(const std::string& path) {
  LoadedTable lt;
  lt.contents = read_file(path);
  Json j;
  try {
    j = Json::parse(lt.contents);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("table '" + path + "': " + e.what());
  }
  lt.table = table_from_json(j);
  return lt;
}

std::optional<double> optional_number(const Json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::vector<double> parse_bounds(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw UsageError("bad radius '" + cell + "' in --bounds");
    }
  }
  if (out.empty()) throw UsageError("--bounds is empty");
  return out;
}

std::string meta_path(const Json& cfg) {
  const std::string p = cfg["out_meta"].get<std::string>();
  return p.empty() ? cfg["out"].get<std::string>() + ".meta.json" : p;
}

// ---- commands ----

int cmd_generate(const Json& cfg, Io& io) {
  GenerateOptions o;
  o.num_contexts = cfg["contexts"].get<int>();
  o.embed_dim = cfg["dim"].get<int>();
  o.vocab_size = cfg["vocab"].get<int>();
  o.support_size = cfg["support"].get<int>();
  o.num_samples = cfg["samples"].get<int>();
  o.seq_len = cfg["seq_len"].get<int>();
  o.seed = cfg["seed"].get<std::uint64_t>();
  o.embed_std = optional_number(cfg["embed_std"]);
  const GeneratedData data = generate_corpus(o);
  const Json meta = meta_for("generate", cfg, Json::array());
  write_file(cfg["out_corpus"].get<std::string>(), corpus_to_jsonl(data.corpus, meta));
  Json table = table_to_json(data.ground_truth);
  table["meta"] = meta;
  write_file(cfg["out_table"].get<std::string>(), table.dump(1) + "\n");
  io.out << Json{{"corpus", cfg["out_corpus"]},
                 {"table", cfg["out_table"]},
                 {"sequences", data.corpus.sequences.size()},
                 {"seq_len", data.corpus.seq_len},
                 {"contexts", data.ground_truth.num_contexts()}}
                .dump()
         << "\n";
  return kOk;
}

int cmd_aggregate(const Json& cfg, Io& io) {
  const std::string corpus_path = require_path(cfg, "corpus");
  const std::string corpus_text = read_file(corpus_path);
  const Corpus corpus = corpus_from_jsonl(corpus_text);
  Json inputs = Json::array({hashed_input(corpus_path, corpus_text)});
  const std::string lookup = cfg["embeddings_from"].get<std::string>();
  std::optional<Embedder> embedder;
  if (!lookup.empty()) {
    const LoadedTable src = load_table(lookup);
    inputs.push_back(hashed_input(lookup, src.contents));
    embedder = Embedder::from_table(src.table);
  } else {
    const int d = cfg["embed_dim"].get<int>();
    if (d < 1) throw UsageError("seeded embeddings need --embed-dim >= 1 (or use --embeddings-from)");
    const double stddev = optional_number(cfg["embed_std"]).value_or(1.0 / std::sqrt(static_cast<double>(d)));
    embedder = Embedder::seeded(d, cfg["embed_seed"].get<std::uint64_t>(), stddev);
  }
  const TableMode mode = table_mode_from_string(cfg["mode"].get<std::string>());
  const ContextTable table =
      mode == TableMode::kFixedLength ? aggregate(corpus, *embedder) : aggregate_autoregressive(corpus, *embedder);
  Json j = table_to_json(table);
  j["meta"] = meta_for("aggregate", cfg, inputs);
  write_file(cfg["out"].get<std::string>(), j.dump(1) + "\n");
  io.out << Json{{"table", cfg["out"]}, {"contexts", table.num_contexts()}, {"entropy", number(entropy(table))}}.dump()
         << "\n";
  return kOk;
}

Analysis analyze_table(const ContextTable& table, double tol, const SubspaceBasis& basis, const SvmSolution& svm) {
  Analysis a;
  const CompatibilityResult comp = solve_wstar(table, tol);
  const OverparamCheck over = overparam_check(table);
  a.compatible = comp.compatible;
  a.residual = comp.residual;
  a.dim_f = basis.dim();
  a.separability_status = svm.status;
  a.separable = svm.status == SvmStatus::kOptimal;
  a.rank_h = over.rank_h;
  a.d = table.embed_dim;
  a.m = table.num_contexts();
  a.entropy = entropy(table);
  a.overparameterized = over.satisfied;
  return a;
}

int cmd_analyze(const Json& cfg, Io& io) {
  const std::string path = require_path(cfg, "table");
  const LoadedTable lt = load_table(path);
  const SubspaceBasis basis = build_basis(lt.table);
  const SvmSolution svm = solve_svm(lt.table, basis);
  Json j = analysis_to_json(analyze_table(lt.table, cfg["tol"].get<double>(), basis, svm));
  j["meta"] = meta_for("analyze", cfg, Json::array({hashed_input(path, lt.contents)}));
  const std::string out = cfg["out"].get<std::string>();
  if (out.empty()) {
    io.out << j.dump() << "\n";
  } else {
    write_file(out, j.dump(1) + "\n");
    io.out << Json{{"analysis", out}, {"separable", j["separable"]}, {"compatible", j["compatible"]}}.dump() << "\n";
  }
  return kOk;
}

int cmd_solve(const Json& cfg, Io& io) {
  const std::string path = require_path(cfg, "table");
  const LoadedTable lt = load_table(path);
  const SubspaceBasis basis = build_basis(lt.table);
  MarginProgramOptions opts;
  opts.tol = cfg["tol"].get<double>();
  opts.max_iters = cfg["max_iters"].get<long>();
  const SvmSolution svm = solve_svm(lt.table, basis, opts);
  const CompatibilityResult comp = solve_wstar(lt.table);
  Json j = svm_to_json(svm);
  j["w_star"] = wstar_to_json(comp);
  j["meta"] = meta_for("solve", cfg, Json::array({hashed_input(path, lt.contents)}));
  write_file(cfg["out"].get<std::string>(), j.dump(1) + "\n");
  io.out << Json{{"solution", cfg["out"]},
                 {"status", to_string(svm.status)},
                 {"norm", number(svm.norm)},
                 {"wstar_norm", number(comp.w_star.norm())},
                 {"compatible", comp.compatible}}
                .dump()
         << "\n";
  return kOk;
}

struct RefsBundle {
  SubspaceBasis basis;
  References refs;
};

RefsBundle make_refs(const ContextTable& table) {
  RefsBundle b;
  b.basis = build_basis(table);
  const CompatibilityResult comp = solve_wstar(table);
  if (comp.compatible) b.refs.w_star = comp.w_star;
  const SvmSolution svm = solve_svm(table, b.basis);
  if (svm.status == SvmStatus::kOptimal) b.refs.w_mm = svm.w_mm;
  return b;
}

int cmd_train(const Json& cfg, Io& io) {
  const std::string path = require_path(cfg, "table");
  const LoadedTable lt = load_table(path);
  TrainConfig tc;
  tc.algo = algorithm_from_string(cfg["algo"].get<std::string>());
  tc.eta = cfg["eta"].get<double>();
  tc.iters = cfg["iters"].get<long>();
  tc.beta1 = cfg["beta1"].get<double>();
  tc.beta2 = cfg["beta2"].get<double>();
  tc.epsilon = cfg["epsilon"].get<double>();
  tc.init = init_from_string(cfg["init"].get<std::string>());
  tc.init_seed = cfg["init_seed"].get<std::uint64_t>();
  tc.record_every = cfg["record_every"].get<long>();
  tc.allow_large_step = cfg["allow_large_step"].get<bool>();
  RefsBundle rb = make_refs(lt.table);
  rb.refs.basis = &rb.basis;
  const TrainTrace trace = train(lt.table, tc, rb.refs);
  write_file(cfg["out"].get<std::string>(), trace_to_csv(trace.rows));
  Json meta = meta_for("train", cfg, Json::array({hashed_input(path, lt.contents)}));
  meta["resolved_train_config"] = train_config_to_json(trace.config);
  meta["table_hash"] = trace.table_hash;
  meta["entropy"] = number(trace.entropy);
  meta["smoothness_estimate"] = number(smoothness_estimate(lt.table));
  meta["final_W"] = decoder_to_json(trace.final_w);
  write_file(meta_path(cfg), meta.dump(1) + "\n");
  const TraceRow& last = trace.rows.back();
  io.out << Json{{"trace", cfg["out"]},
                 {"final_ce_gap", number(last.ce_gap)},
                 {"final_norm", number(last.norm)},
                 {"final_align_corrected", number(last.align_corrected)},
                 {"final_subspace_dist", number(last.subspace_dist)}}
                .dump()
         << "\n";
  return kOk;
}

int cmd_regpath(const Json& cfg, Io& io) {
  const std::string path = require_path(cfg, "table");
  const LoadedTable lt = load_table(path);
  RegPathOptions opts;
  opts.method = regpath_method_from_string(cfg["method"].get<std::string>());
  opts.budget = cfg["budget"].get<long>();
  opts.tol = cfg["tol"].get<double>();
  RefsBundle rb = make_refs(lt.table);
  rb.refs.basis = &rb.basis;
  const std::vector<RegPathPoint> pts = regpath(lt.table, parse_bounds(cfg["bounds"].get<std::string>()), opts, rb.refs);
  write_file(cfg["out"].get<std::string>(), regpath_to_csv(pts));
  Json meta = meta_for("regpath", cfg, Json::array({hashed_input(path, lt.contents)}));
  Json decoders = Json::array();
  for (const auto& p : pts) decoders.push_back({{"bound", p.bound}, {"W", decoder_to_json(p.w)}});
  meta["solutions"] = decoders;
  write_file(meta_path(cfg), meta.dump(1) + "\n");
  bool all_converged = true;
  for (const auto& p : pts) all_converged = all_converged && p.converged;
  io.out << Json{{"regpath", cfg["out"]},
                 {"points", pts.size()},
                 {"all_converged", all_converged},
                 {"final_alignment", number(pts.back().alignment)}}
                .dump()
         << "\n";
  return kOk;
}

int cmd_report(const Json& cfg, Io& io) {
  const std::string path = require_path(cfg, "table");
  const LoadedTable lt = load_table(path);
  Json inputs = Json::array({hashed_input(path, lt.contents)});
  ReportInputs in;
  in.table = &lt.table;
  in.align_threshold = cfg["align_threshold"].get<double>();
  in.samples = cfg["check_draws"].get<int>();
  in.seed = cfg["check_seed"].get<std::uint64_t>();
  const std::string trace_path = cfg["trace"].get<std::string>();
  if (!trace_path.empty()) {
    const std::string text = read_file(trace_path);
    inputs.push_back(hashed_input(trace_path, text));
    in.trace = trace_from_csv(text);
  }
  const std::string regpath_path = cfg["regpath"].get<std::string>();
  if (!regpath_path.empty()) {
    const std::string text = read_file(regpath_path);
    inputs.push_back(hashed_input(regpath_path, text));
    in.regpath = regpath_from_csv(text);
  }
  const Report rep = build_report(in);
  const std::filesystem::path dir = cfg["out_dir"].get<std::string>();
  std::filesystem::create_directories(dir);
  Json j = rep.to_json();
  Json files = Json::object();
  write_file((dir / "basis.json").string(), basis_to_json(build_basis(lt.table)).dump(1) + "\n");
  files["basis"] = (dir / "basis.json").string();
  if (!rep.decay_csv.empty()) {
    write_file((dir / "decay.csv").string(), rep.decay_csv);
    files["decay"] = (dir / "decay.csv").string();
  }
  if (in.trace) {
    write_file((dir / "trace.csv").string(), trace_to_csv(*in.trace));
    files["trace"] = (dir / "trace.csv").string();
  }
  if (in.regpath) {
    write_file((dir / "regpath.csv").string(), regpath_to_csv(*in.regpath));
    files["regpath"] = (dir / "regpath.csv").string();
  }
  j["files"] = files;
  j["meta"] = meta_for("report", cfg, inputs);
  write_file((dir / "report.json").string(), j.dump(1) + "\n");
  io.out << j.dump() << "\n";
  if (!rep.passed()) {
    Json failed = Json::array();
    for (const auto& c : rep.checks) {
      if (c.verdict == "fail") failed.push_back(c.name);
    }
    throw InvariantFailure("report found failing invariants", failed);
  }
  return kOk;
}

Json subset(const Json& cfg, const std::vector<Param>& params) {
  Json out = Json::object();
  for (const auto& p : params) out[p.key] = cfg.contains(p.key) ? cfg[p.key] : p.def;
  return out;
}

int cmd_pipeline(const Json& cfg, Io& io) {
  const std::filesystem::path dir = cfg["out_dir"].get<std::string>();
  std::filesystem::create_directories(dir);
  auto at = [&](const char* name) { return (dir / name).string(); };

  Json g = subset(cfg, generate_params());
  g["out_corpus"] = at("corpus.jsonl");
  g["out_table"] = at("ground_truth.json");
  cmd_generate(g, io);

  Json a = subset(cfg, aggregate_params());
  a["corpus"] = at("corpus.jsonl");
  a["embeddings_from"] = at("ground_truth.json");
  a["out"] = at("table.json");
  cmd_aggregate(a, io);

  Json an = subset(cfg, analyze_params());
  an["table"] = at("table.json");
  an["out"] = at("analysis.json");
  cmd_analyze(an, io);

  Json s = subset(cfg, solve_params());
  s["table"] = at("table.json");
  s["out"] = at("solution.json");
  cmd_solve(s, io);

  Json t = subset(cfg, train_params());
  t["table"] = at("table.json");
  t["out"] = at("trace.csv");
  t["out_meta"] = at("train.json");
  cmd_train(t, io);

  const bool with_regpath = !cfg["skip_regpath"].get<bool>();
  if (with_regpath) {
    Json r = subset(cfg, regpath_params());
    r["table"] = at("table.json");
    r["out"] = at("regpath.csv");
    r["out_meta"] = at("regpath.json");
    cmd_regpath(r, io);
  }

  Json rp = subset(cfg, report_params());
  rp["table"] = at("table.json");
  rp["trace"] = at("trace.csv");
  rp["regpath"] = with_regpath ? at("regpath.csv") : "";
  rp["out_dir"] = at("report");
  return cmd_report(rp, io);
}

std::vector<Command> commands() {
  return {
      {"generate", "sample a synthetic corpus and its ground-truth table", generate_params(), cmd_generate},
      {"aggregate", "reduce a corpus to its distinct-context table", aggregate_params(), cmd_aggregate},
      {"analyze", "decide compatibility and separability of a table", analyze_params(), cmd_analyze},
      {"solve", "compute W* and the max-margin direction W^mm", solve_params(), cmd_solve},
      {"train", "train the decoder and record a diagnostic trace", train_params(), cmd_train},
      {"regpath", "compute the norm-constrained CE minimizers", regpath_params(), cmd_regpath},
      {"report", "check invariants on a table, trace and path", report_params(), cmd_report},
      {"pipeline", "generate, aggregate, analyze, solve, train, regpath and report in one run", pipeline_params(),
       cmd_pipeline},
  };
}

// Converts a flag string according to the type of the parameter's default.
Json convert(const Param& p, const std::string& raw) {
  try {
    std::size_t used = 0;
    if (p.def.is_number_unsigned() || p.def.is_number_integer()) {
      const long long v = std::stoll(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      if (v < 0) throw std::invalid_argument(raw);
      return v;
    }
    if (p.def.is_number_float() || p.def.is_null()) {
      const double v = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
      return v;
    }
  } catch (const std::exception&) {
    throw UsageError("invalid value '" + raw + "' for " + flag_name(p.key));
  }
  return raw;
}

void check_config_type(const Param& p, const Json& v) {
  bool ok = true;
  if (p.def.is_boolean()) ok = v.is_boolean();
  else if (p.def.is_string()) ok = v.is_string();
  else if (p.def.is_number_integer() || p.def.is_number_unsigned()) ok = v.is_number_integer() && v.get<long long>() >= 0;
  else ok = v.is_number() || v.is_null();
  if (!ok) throw UsageError("config value for '" + p.key + "' has the wrong type");
}

void emit_error(std::ostream& err, const std::string& type, const std::string& message, const Json& extra = nullptr) {
  Json e = {{"type", type}, {"message", message}};
  if (!extra.is_null()) e["failed"] = extra;
  err << Json{{"error", e}}.dump() << "\n";
}

}  // namespace

Json preset(const std::string& name) {
  if (name == "appA") {
    return {{"contexts", 50}, {"dim", 60},     {"vocab", 10},   {"support", 6},
            {"samples", 5000}, {"embed_std", 1.0}, {"algo", "gd"}, {"eta", 0.5},
            {"iters", 10000}, {"allow_large_step", true}};
  }
  if (name == "fig1-2d") {
    return {{"contexts", 3}, {"dim", 2},     {"vocab", 5},   {"support", 3},
            {"samples", 3000}, {"algo", "gd"}, {"eta", 0.5}, {"iters", 10000},
            {"allow_large_step", true}};
  }
  throw UsageError("unknown preset '" + name + "' (expected appA or fig1-2d)");
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const std::vector<Command> cmds = commands();
  CLI::App app{"Distinct-context next-token prediction: feasibility, max-margin and implicit-bias experiments",
               "ntpbias"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  struct Slots {
    std::map<std::string, std::string> raw;
    std::map<std::string, bool> flags;
    std::string preset;
    std::string config;
  };
  std::vector<Slots> slots(cmds.size());
  std::vector<CLI::App*> subs;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    CLI::App* sub = app.add_subcommand(cmds[i].name, cmds[i].help);
    sub->add_option("--preset", slots[i].preset, "parameter preset: appA or fig1-2d");
    sub->add_option("--config", slots[i].config, "JSON file of parameters (keys as flag names with underscores)");
    for (const auto& p : cmds[i].params) {
      const std::string name = flag_name(p.key);
      if (p.def.is_boolean()) {
        slots[i].flags[p.key] = false;
        sub->add_flag(name + ",!--no-" + name.substr(2), slots[i].flags[p.key], p.help);
      } else {
        std::string help = p.help;
        if (!p.def.is_null()) help += " [default: " + (p.def.is_string() ? p.def.get<std::string>() : p.def.dump()) + "]";
        sub->add_option(name, slots[i].raw[p.key], help);
      }
    }
    subs.push_back(sub);
  }

  std::vector<const char*> argv{"ntpbias"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    emit_error(err, "usage", e.what());
    return kUsage;
  }

  Io io{out, err};
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    if (!subs[i]->parsed()) continue;
    const Command& cmd = cmds[i];
    try {
      Json cfg = Json::object();
      for (const auto& p : cmd.params) cfg[p.key] = p.def;
      if (!slots[i].preset.empty()) {
        const Json values = preset(slots[i].preset);
        for (const auto& [k, v] : values.items()) {
          if (cfg.contains(k)) cfg[k] = v;
        }
      }
      if (!slots[i].config.empty()) {
        const std::string text = read_file(slots[i].config);
        Json user;
        try {
          user = Json::parse(text);
        } catch (const nlohmann::json::parse_error& e) {
          throw FormatError("config '" + slots[i].config + "': " + e.what());
        }
        if (!user.is_object()) throw UsageError("config file must hold a JSON object");
        for (const auto& [k, v] : user.items()) {
          const auto it = std::find_if(cmd.params.begin(), cmd.params.end(), [&](const Param& p) { return p.key == k; });
          if (it == cmd.params.end()) throw UsageError("unknown config key '" + k + "' for " + cmd.name);
          check_config_type(*it, v);
          cfg[k] = v;
        }
      }
      for (const auto& p : cmd.params) {
        if (subs[i]->get_option(flag_name(p.key))->count() == 0) continue;
        cfg[p.key] = p.def.is_boolean() ? Json(slots[i].flags[p.key]) : convert(p, slots[i].raw[p.key]);
      }
      if (!slots[i].preset.empty()) cfg["preset"] = slots[i].preset;
      return cmd.run(cfg, io);
    } catch (const InvariantFailure& e) {
      emit_error(err, "invariant_failure", e.what(), e.failed);
      return kInvariantFailed;
    } catch (const UsageError& e) {
      emit_error(err, "usage", e.what());
      return kUsage;
    } catch (const FormatError& e) {
      emit_error(err, "input", e.what());
      return kUsage;
    } catch (const std::invalid_argument& e) {
      emit_error(err, "invalid_argument", e.what());
      return kUsage;
    } catch (const nlohmann::json::exception& e) {
      emit_error(err, "config", e.what());
      return kUsage;
    } catch (const TrainingDiverged& e) {
      emit_error(err, "diverged", e.what(), Json{{"iteration", e.iteration()}});
      return kFailure;
    } catch (const std::exception& e) {
      emit_error(err, "runtime", e.what());
      return kFailure;
    }
  }
  emit_error(err, "usage", "no subcommand given");
  return kUsage;
}

}  // namespace ntpbias::cli
