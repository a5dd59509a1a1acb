#pragma once

#include "ntpbias/corpus.hpp"
#include "ntpbias/subspace.hpp"
#include "ntpbias/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ntpbias {

enum class Algorithm { kGd, kNgd, kAdam };
enum class Init { kZero, kLecun };

std::string to_string(Algorithm algo);
Algorithm algorithm_from_string(const std::string& s);
std::string to_string(Init init);
Init init_from_string(const std::string& s);

struct TrainConfig {
  Algorithm algo = Algorithm::kGd;
  double eta = 0.5;
  long iters = 10000;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
  Init init = Init::kZero;
  std::uint64_t init_seed = 0;
  long record_every = 10;
  /// Permits GD step sizes above 1/(2 L_est).
  bool allow_large_step = false;

  /// Throws std::invalid_argument on eta <= 0, a GD step above 1/(2 L_est) without override,
  /// or nonsensical Adam constants.
  void validate(const ContextTable& table) const;
};

struct TraceRow {
  long iter = 0;
  double ce = 0.0;
  double ce_gap = 0.0;
  double norm = 0.0;
  double align_raw = 0.0;
  double align_corrected = 0.0;
  double subspace_dist = 0.0;
  double grad_norm = 0.0;
};

struct TrainTrace {
  std::vector<TraceRow> rows;
  TrainConfig config;
  double entropy = 0.0;
  std::string table_hash;
  Decoder final_w;

  /// Throws std::logic_error unless iters are strictly increasing and ce >= entropy - 1e-10 in every row.
  void validate() const;
};

/// Optional reference solutions; missing ones produce NaN columns.
struct References {
  std::optional<Decoder> w_star;
  std::optional<Decoder> w_mm;
  const SubspaceBasis* basis = nullptr;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(long iteration, const std::string& what)
      : std::runtime_error(what + " at iteration " + std::to_string(iteration)), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

/// sum_j pi_j (softmax(W h_j) - p_j) h_j^T. Reduction order is fixed, so the result does not
/// depend on NTP_BIAS_THREADS.
Decoder grad_ce(const Decoder& w, const ContextTable& table);

/// Hessian-vector product of CE at W applied to direction U.
Decoder hessian_apply(const Decoder& w, const Decoder& u, const ContextTable& table);

/// 1/2 lambda_max(sum_j pi_j h_j h_j^T): the logit-space Hessian of each context is at most I/2.
double smoothness_estimate(const ContextTable& table);

Decoder initial_decoder(const ContextTable& table, Init init, std::uint64_t seed);

/// Runs GD, normalized GD or Adam and records diagnostics at iteration 0, every record_every
/// iterations and at the last iteration.
TrainTrace train(const ContextTable& table, const TrainConfig& config, const References& refs = {});

}  // namespace ntpbias
