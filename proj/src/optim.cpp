#include "ntpbias/optim.hpp"

#include "ntpbias/io.hpp"
#include "ntpbias/metrics.hpp"
#include "ntpbias/parallel.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <limits>
#include <random>

namespace ntpbias {

namespace {

constexpr int kContextsPerChunk = 64;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool all_finite(const Decoder& w) { return w.allFinite(); }

}  // namespace

std::string to_string(Algorithm algo) {
  switch (algo) {
    case Algorithm::kGd: return "gd";
    case Algorithm::kNgd: return "ngd";
    case Algorithm::kAdam: return "adam";
  }
  return "gd";
}

Algorithm algorithm_from_string(const std::string& s) {
  if (s == "gd") return Algorithm::kGd;
  if (s == "ngd") return Algorithm::kNgd;
  if (s == "adam") return Algorithm::kAdam;
  throw std::invalid_argument("unknown algorithm '" + s + "' (expected gd, ngd or adam)");
}

std::string to_string(Init init) { return init == Init::kZero ? "zero" : "lecun"; }

Init init_from_string(const std::string& s) {
  if (s == "zero") return Init::kZero;
  if (s == "lecun") return Init::kLecun;
  throw std::invalid_argument("unknown init '" + s + "' (expected zero or lecun)");
}

void TrainConfig::validate(const ContextTable& table) const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw std::invalid_argument("eta must be positive and finite");
  if (iters < 0) throw std::invalid_argument("iters must be nonnegative");
  if (record_every < 1) throw std::invalid_argument("record_every must be at least 1");
  if (algo == Algorithm::kAdam) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw std::invalid_argument("Adam betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
  }
  if (algo == Algorithm::kGd && !allow_large_step) {
    const double limit = 1.0 / (2.0 * smoothness_estimate(table));
    if (eta > limit) {
      throw std::invalid_argument("gd step " + std::to_string(eta) + " exceeds 1/(2 L_est) = " +
                                  std::to_string(limit) + "; set allow_large_step to override");
    }
  }
}

void TrainTrace::validate() const {
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i > 0 && rows[i].iter <= rows[i - 1].iter) throw std::logic_error("trace iterations not increasing");
    if (rows[i].ce < entropy - 1e-10) {
      throw std::logic_error("ce below entropy at iteration " + std::to_string(rows[i].iter));
    }
  }
}

Decoder grad_ce(const Decoder& w, const ContextTable& table) {
  const int m = table.num_contexts();
  const int vocab = table.vocab_size;
  const int d = table.embed_dim;
  if (w.rows() != vocab || w.cols() != d) throw std::invalid_argument("decoder shape does not match table");
  const std::size_t chunks = (m + kContextsPerChunk - 1) / kContextsPerChunk;
  std::vector<Decoder> partial(chunks);
  parallel_chunks(chunks, worker_count(), [&](std::size_t chunk) {
    Decoder acc = Decoder::Zero(vocab, d);
    const int begin = static_cast<int>(chunk) * kContextsPerChunk;
    const int end = std::min(m, begin + kContextsPerChunk);
    for (int j = begin; j < end; ++j) {
      const auto& c = table.contexts[j];
      Eigen::VectorXd r = softmax(w * c.embedding);
      for (std::size_t i = 0; i < c.support.size(); ++i) r(c.support[i]) -= c.probs[i];
      acc.noalias() += (c.prior * r) * c.embedding.transpose();
    }
    partial[chunk] = std::move(acc);
  });
  Decoder g = Decoder::Zero(vocab, d);
  for (const auto& p : partial) g += p;
  return g;
}

Decoder hessian_apply(const Decoder& w, const Decoder& u, const ContextTable& table) {
  Decoder out = Decoder::Zero(w.rows(), w.cols());
  for (const auto& c : table.contexts) {
    const Eigen::VectorXd q = softmax(w * c.embedding);
    const Eigen::VectorXd a = u * c.embedding;
    const Eigen::VectorXd t = q.cwiseProduct(a) - q * q.dot(a);
    out.noalias() += (c.prior * t) * c.embedding.transpose();
  }
  return out;
}

double smoothness_estimate(const ContextTable& table) {
  const int d = table.embed_dim;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& c : table.contexts) cov.noalias() += c.prior * c.embedding * c.embedding.transpose();
  if (d == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().maxCoeff();
}

Decoder initial_decoder(const ContextTable& table, Init init, std::uint64_t seed) {
  Decoder w = Decoder::Zero(table.vocab_size, table.embed_dim);
  if (init == Init::kLecun) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(table.embed_dim)));
    for (Eigen::Index v = 0; v < w.rows(); ++v) {
      for (Eigen::Index k = 0; k < w.cols(); ++k) w(v, k) = normal(rng);
    }
  }
  return w;
}

namespace {

TraceRow make_row(long iter, const Decoder& w, double grad_norm, const ContextTable& table, const References& refs) {
  TraceRow row;
  row.iter = iter;
  row.ce = ce(w, table);
  row.ce_gap = ce_gap(w, table);
  row.norm = w.norm();
  row.grad_norm = grad_norm;
  row.align_raw = kNaN;
  row.align_corrected = kNaN;
  row.subspace_dist = kNaN;
  if (refs.w_mm && refs.w_mm->norm() > 0.0) {
    if (row.norm > 0.0) row.align_raw = alignment(w, *refs.w_mm);
    if (refs.w_star) {
      const Decoder corrected = w - *refs.w_star;
      if (corrected.norm() > 0.0) row.align_corrected = alignment(corrected, *refs.w_mm);
    }
  }
  if (refs.w_star && refs.basis != nullptr) row.subspace_dist = subspace_distance(w, *refs.w_star, *refs.basis);
  return row;
}

}  // namespace

TrainTrace train(const ContextTable& table, const TrainConfig& config, const References& refs) {
  config.validate(table);
  TrainTrace trace;
  trace.config = config;
  trace.entropy = entropy(table);
  trace.table_hash = table_hash(table);

  Decoder w = initial_decoder(table, config.init, config.init_seed);
  Decoder m1 = Decoder::Zero(w.rows(), w.cols());
  Decoder m2 = Decoder::Zero(w.rows(), w.cols());
  double b1_pow = 1.0;
  double b2_pow = 1.0;

  for (long k = 0;; ++k) {
    const Decoder g = grad_ce(w, table);
    if (!all_finite(g)) throw TrainingDiverged(k, "non-finite gradient");
    const double g_norm = g.norm();
    if (k == 0 || k % config.record_every == 0 || k == config.iters) {
      TraceRow row = make_row(k, w, g_norm, table, refs);
      if (!std::isfinite(row.ce)) throw TrainingDiverged(k, "non-finite loss");
      if (row.ce < trace.entropy - 1e-10) {
        throw std::logic_error("ce below entropy at iteration " + std::to_string(k));
      }
      trace.rows.push_back(row);
    }
    if (k == config.iters) break;

    switch (config.algo) {
      case Algorithm::kGd:
        w -= config.eta * g;
        break;
      case Algorithm::kNgd:
        if (g_norm > 0.0) w -= (config.eta / g_norm) * g;
        break;
      case Algorithm::kAdam: {
        m1 = config.beta1 * m1 + (1.0 - config.beta1) * g;
        m2 = config.beta2 * m2 + (1.0 - config.beta2) * g.cwiseAbs2();
        b1_pow *= config.beta1;
        b2_pow *= config.beta2;
        const Decoder m_hat = m1 / (1.0 - b1_pow);
        const Decoder v_hat = m2 / (1.0 - b2_pow);
        w.array() -= config.eta * m_hat.array() / (v_hat.array().sqrt() + config.epsilon);
        break;
      }
    }
    if (!all_finite(w)) throw TrainingDiverged(k + 1, "non-finite iterate");
  }
  trace.final_w = w;
  return trace;
}

}  // namespace ntpbias
