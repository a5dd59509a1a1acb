#pragma once

#include "ntpbias/types.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ntpbias {

/// Token sequences of a fixed length over a vocabulary of size V.
struct Corpus {
  std::vector<TokenSeq> sequences;
  int vocab_size = 0;
  int seq_len = 0;
  std::uint64_t seed = 0;
  std::string generator;

  /// Throws std::invalid_argument when a sequence has the wrong length or a token is out of range.
  void validate() const;
};

/// One distinct context: its embedding, empirical prior and sparse next-token distribution.
struct DistinctContext {
  std::optional<TokenSeq> tokens;
  Eigen::VectorXd embedding;
  double prior = 0.0;
  std::vector<Token> support;  // sorted, strictly increasing
  std::vector<double> probs;   // aligned with support

  int support_size() const { return static_cast<int>(support.size()); }
  /// Anchor token min(S_j).
  Token anchor() const { return support.front(); }
  bool in_support(Token z) const;
  /// p_{j,z}; zero off support.
  double prob_of(Token z) const;
  std::vector<Token> off_support(int vocab_size) const;
};

enum class TableMode { kFixedLength, kAutoregressive };

std::string to_string(TableMode mode);
TableMode table_mode_from_string(const std::string& s);

/// Aggregated dataset: one entry per distinct context.
struct ContextTable {
  int vocab_size = 0;
  int embed_dim = 0;
  std::vector<DistinctContext> contexts;
  TableMode mode = TableMode::kFixedLength;
  /// Per-prefix-length entropies H_t (autoregressive tables only; diagnostic).
  std::vector<double> position_entropies;

  int num_contexts() const { return static_cast<int>(contexts.size()); }

  /// Throws std::invalid_argument unless all table invariants hold.
  void validate() const;

  /// d x m matrix with the embeddings as columns.
  Eigen::MatrixXd embedding_matrix() const;
  /// m x V matrix of p_{j,z}, zero off support.
  Eigen::MatrixXd dense_probs() const;
  int total_support() const;
  bool one_hot() const;
};

/// Maps a context token sequence to its embedding.
class Embedder {
 public:
  using Fn = std::function<Eigen::VectorXd(std::span<const Token>)>;

  Embedder(int dim, Fn fn) : dim_(dim), fn_(std::move(fn)) {}

  /// Gaussian N(0, stddev^2) entries, seeded by (seed, tokens). Independent of call order.
  static Embedder seeded(int dim, std::uint64_t seed, double stddev);
  /// Exact lookup; throws std::out_of_range for unknown contexts.
  static Embedder lookup(int dim, std::map<TokenSeq, Eigen::VectorXd> table);
  /// Lookup built from a table whose contexts carry their tokens.
  static Embedder from_table(const ContextTable& table);

  int dim() const { return dim_; }
  Eigen::VectorXd operator()(std::span<const Token> context) const;

 private:
  int dim_;
  Fn fn_;
};

struct GenerateOptions {
  int num_contexts = 50;  // m
  int embed_dim = 60;     // d
  int vocab_size = 10;    // V
  int support_size = 6;   // S
  int num_samples = 5000; // n
  int seq_len = 0;        // T; 0 picks the smallest T with V^(T-1) >= m
  std::uint64_t seed = 0;
  /// Embedding entry stddev; defaults to 1/sqrt(d).
  std::optional<double> embed_std;
};

struct GeneratedData {
  Corpus corpus;
  ContextTable ground_truth;
};

/// Smallest T >= 2 such that V^(T-1) >= m.
int minimal_seq_len(int vocab_size, int num_contexts);

/// Random contexts, uniform S-subsets, Dirichlet(1) next-token laws, n samples with uniform context choice.
GeneratedData generate_corpus(const GenerateOptions& opts);

/// Distinct-context table of the fixed-length objective: context = first T-1 tokens, target = last.
ContextTable aggregate(const Corpus& corpus, const Embedder& embedder);

/// Flattens every prefix length t in [1, T-1] into one table with priors divided by (T-1).
ContextTable aggregate_autoregressive(const Corpus& corpus, const Embedder& embedder);

struct TableSpec {
  int vocab_size = 0;
  int embed_dim = 0;
  std::vector<std::vector<Token>> supports;
  std::vector<std::vector<double>> probs;
  std::vector<double> priors;  // empty means uniform
  std::vector<Eigen::VectorXd> embeddings;  // empty means seeded N(0, 1/d)
  std::uint64_t seed = 0;
};

/// Builds a table directly from its parameters, bypassing sampling.
ContextTable synthesize_table(const TableSpec& spec);

/// Random table with uniform S-subsets and Dirichlet(1) laws; used by tests and experiments.
ContextTable random_table(int m, int d, int vocab_size, int support_size, std::uint64_t seed,
                          std::optional<double> embed_std = std::nullopt);

}  // namespace ntpbias
