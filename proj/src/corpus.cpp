#include "ntpbias/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

namespace ntpbias {

namespace {

constexpr double kSimplexTol = 1e-12;

std::uint64_t fnv1a(std::uint64_t h, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) {
    h ^= (x >> (8 * i)) & 0xffu;
    h *= 0x100000001b3ull;
  }
  return h;
}

Eigen::VectorXd gaussian_vector(int dim, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, stddev);
  Eigen::VectorXd h(dim);
  for (int k = 0; k < dim; ++k) h(k) = normal(rng);
  return h;
}

std::vector<double> dirichlet_ones(int k, std::mt19937_64& rng) {
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& x : p) {
    // exponential draws can underflow to 0; keep the law strictly positive
    do { x = expo(rng); } while (x <= 0.0);
    total += x;
  }
  for (auto& x : p) x /= total;
  return p;
}

std::vector<Token> random_subset(int vocab_size, int size, std::mt19937_64& rng) {
  std::vector<Token> all(vocab_size);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<Token> out(all.begin(), all.begin() + size);
  std::sort(out.begin(), out.end());
  return out;
}

double entropy_of_counts(const std::vector<int>& counts, double total) {
  double h = 0.0;
  for (int c : counts) {
    if (c > 0) {
      const double p = c / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

DistinctContext context_from_counts(const TokenSeq& tokens, const std::vector<int>& counts, int occurrences,
                                    double prior, const Embedder& embedder) {
  DistinctContext ctx;
  ctx.tokens = tokens;
  ctx.prior = prior;
  for (Token z = 0; z < static_cast<Token>(counts.size()); ++z) {
    if (counts[z] > 0) {
      ctx.support.push_back(z);
      ctx.probs.push_back(static_cast<double>(counts[z]) / occurrences);
    }
  }
  ctx.embedding = embedder(tokens);
  return ctx;
}

}  // namespace

void Corpus::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("corpus: vocab_size must be positive");
  if (seq_len < 2) throw std::invalid_argument("corpus: sequence length must be at least 2");
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    const auto& s = sequences[i];
    if (static_cast<int>(s.size()) != seq_len) {
      throw std::invalid_argument("corpus: sequence " + std::to_string(i) + " has length " +
                                  std::to_string(s.size()) + ", expected " + std::to_string(seq_len));
    }
    for (Token z : s) {
      if (z < 0 || z >= vocab_size) {
        throw std::invalid_argument("corpus: token out of range in sequence " + std::to_string(i));
      }
    }
  }
}

bool DistinctContext::in_support(Token z) const { return std::binary_search(support.begin(), support.end(), z); }

double DistinctContext::prob_of(Token z) const {
  auto it = std::lower_bound(support.begin(), support.end(), z);
  if (it == support.end() || *it != z) return 0.0;
  return probs[static_cast<std::size_t>(it - support.begin())];
}

std::vector<Token> DistinctContext::off_support(int vocab_size) const {
  std::vector<Token> out;
  out.reserve(vocab_size - support.size());
  for (Token v = 0; v < vocab_size; ++v) {
    if (!in_support(v)) out.push_back(v);
  }
  return out;
}

std::string to_string(TableMode mode) {
  return mode == TableMode::kAutoregressive ? "autoregressive" : "fixed-length";
}

TableMode table_mode_from_string(const std::string& s) {
  if (s == "fixed-length") return TableMode::kFixedLength;
  if (s == "autoregressive") return TableMode::kAutoregressive;
  throw std::invalid_argument("unknown table mode '" + s + "'");
}

void ContextTable::validate() const {
  if (vocab_size < 2) throw std::invalid_argument("table: vocab_size must be at least 2");
  if (embed_dim < 1) throw std::invalid_argument("table: embed_dim must be positive");
  if (contexts.empty()) throw std::invalid_argument("table: no contexts");
  double prior_sum = 0.0;
  bool some_sparse = false;
  for (std::size_t j = 0; j < contexts.size(); ++j) {
    const auto& c = contexts[j];
    const std::string where = "table: context " + std::to_string(j) + ": ";
    if (c.embedding.size() != embed_dim) throw std::invalid_argument(where + "embedding has wrong dimension");
    if (!c.embedding.allFinite()) throw std::invalid_argument(where + "embedding has non-finite entries");
    if (!(c.prior > 0.0)) throw std::invalid_argument(where + "prior must be positive");
    if (c.support.empty() || c.support.size() != c.probs.size()) {
      throw std::invalid_argument(where + "support and probs must be nonempty and aligned");
    }
    double psum = 0.0;
    for (std::size_t i = 0; i < c.support.size(); ++i) {
      if (c.support[i] < 0 || c.support[i] >= vocab_size) throw std::invalid_argument(where + "token out of range");
      if (i > 0 && c.support[i] <= c.support[i - 1]) throw std::invalid_argument(where + "support not sorted/unique");
      if (!(c.probs[i] > 0.0)) throw std::invalid_argument(where + "probabilities must be positive on support");
      psum += c.probs[i];
    }
    if (std::abs(psum - 1.0) > kSimplexTol) throw std::invalid_argument(where + "probabilities do not sum to 1");
    prior_sum += c.prior;
    if (c.support_size() < vocab_size) some_sparse = true;
  }
  if (std::abs(prior_sum - 1.0) > kSimplexTol) throw std::invalid_argument("table: priors do not sum to 1");
  if (!some_sparse) throw std::invalid_argument("table: every context has full support (need some S_j < V)");
}

Eigen::MatrixXd ContextTable::embedding_matrix() const {
  Eigen::MatrixXd h(embed_dim, num_contexts());
  for (int j = 0; j < num_contexts(); ++j) h.col(j) = contexts[j].embedding;
  return h;
}

Eigen::MatrixXd ContextTable::dense_probs() const {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(num_contexts(), vocab_size);
  for (int j = 0; j < num_contexts(); ++j) {
    const auto& c = contexts[j];
    for (std::size_t i = 0; i < c.support.size(); ++i) p(j, c.support[i]) = c.probs[i];
  }
  return p;
}

int ContextTable::total_support() const {
  int total = 0;
  for (const auto& c : contexts) total += c.support_size();
  return total;
}

bool ContextTable::one_hot() const {
  return std::all_of(contexts.begin(), contexts.end(), [](const auto& c) { return c.support_size() == 1; });
}

Embedder Embedder::seeded(int dim, std::uint64_t seed, double stddev) {
  if (dim < 1) throw std::invalid_argument("embedder: dim must be positive");
  return Embedder(dim, [dim, seed, stddev](std::span<const Token> context) {
    std::uint64_t h = fnv1a(0xcbf29ce484222325ull, seed);
    h = fnv1a(h, context.size());
    for (Token z : context) h = fnv1a(h, static_cast<std::uint64_t>(z));
    std::seed_seq seq{static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::mt19937_64 rng(seq);
    return gaussian_vector(dim, stddev, rng);
  });
}

Embedder Embedder::lookup(int dim, std::map<TokenSeq, Eigen::VectorXd> table) {
  for (const auto& [k, v] : table) {
    if (v.size() != dim) throw std::invalid_argument("embedder: lookup entry has wrong dimension");
  }
  return Embedder(dim, [t = std::move(table)](std::span<const Token> context) {
    auto it = t.find(TokenSeq(context.begin(), context.end()));
    if (it == t.end()) throw std::out_of_range("embedder: context not found in lookup table");
    return it->second;
  });
}

Embedder Embedder::from_table(const ContextTable& table) {
  std::map<TokenSeq, Eigen::VectorXd> entries;
  for (const auto& c : table.contexts) {
    if (!c.tokens) throw std::invalid_argument("embedder: table context has no tokens");
    entries.emplace(*c.tokens, c.embedding);
  }
  return lookup(table.embed_dim, std::move(entries));
}

Eigen::VectorXd Embedder::operator()(std::span<const Token> context) const {
  Eigen::VectorXd h = fn_(context);
  if (h.size() != dim_) throw std::logic_error("embedder returned a vector of the wrong dimension");
  return h;
}

int minimal_seq_len(int vocab_size, int num_contexts) {
  int t = 2;
  double reachable = vocab_size;
  while (reachable < num_contexts) {
    reachable *= vocab_size;
    ++t;
  }
  return t;
}

GeneratedData generate_corpus(const GenerateOptions& o) {
  if (o.num_contexts < 1) throw std::invalid_argument("generate: m must be at least 1");
  if (o.embed_dim < 1) throw std::invalid_argument("generate: d must be at least 1");
  if (o.vocab_size < 2) throw std::invalid_argument("generate: V must be at least 2");
  if (o.support_size < 1 || o.support_size >= o.vocab_size) {
    throw std::invalid_argument("generate: need 1 <= S < V (not all tokens may follow every context)");
  }
  if (o.num_samples < o.num_contexts) throw std::invalid_argument("generate: need n >= m");
  const int seq_len = o.seq_len == 0 ? minimal_seq_len(o.vocab_size, o.num_contexts) : o.seq_len;
  if (seq_len < 2) throw std::invalid_argument("generate: T must be at least 2");
  if (std::pow(static_cast<double>(o.vocab_size), seq_len - 1) < o.num_contexts) {
    throw std::invalid_argument("generate: V^(T-1) < m, cannot form m distinct contexts");
  }
  const double stddev = o.embed_std.value_or(1.0 / std::sqrt(static_cast<double>(o.embed_dim)));

  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<Token> token_dist(0, o.vocab_size - 1);

  std::set<TokenSeq> seen;
  std::vector<TokenSeq> context_tokens;
  while (static_cast<int>(context_tokens.size()) < o.num_contexts) {
    TokenSeq ctx(seq_len - 1);
    for (auto& z : ctx) z = token_dist(rng);
    if (seen.insert(ctx).second) context_tokens.push_back(std::move(ctx));
  }

  GeneratedData out;
  auto& truth = out.ground_truth;
  truth.vocab_size = o.vocab_size;
  truth.embed_dim = o.embed_dim;
  truth.mode = TableMode::kFixedLength;
  for (int j = 0; j < o.num_contexts; ++j) {
    DistinctContext c;
    c.tokens = context_tokens[j];
    c.embedding = gaussian_vector(o.embed_dim, stddev, rng);
    c.prior = 1.0 / o.num_contexts;
    c.support = random_subset(o.vocab_size, o.support_size, rng);
    c.probs = dirichlet_ones(o.support_size, rng);
    truth.contexts.push_back(std::move(c));
  }

  auto& corpus = out.corpus;
  corpus.vocab_size = o.vocab_size;
  corpus.seq_len = seq_len;
  corpus.seed = o.seed;
  corpus.generator = "uniform-context/dirichlet1";
  corpus.sequences.reserve(o.num_samples);
  std::uniform_int_distribution<int> ctx_dist(0, o.num_contexts - 1);
  for (int i = 0; i < o.num_samples; ++i) {
    const auto& c = truth.contexts[ctx_dist(rng)];
    std::discrete_distribution<int> next(c.probs.begin(), c.probs.end());
    TokenSeq seq = *c.tokens;
    seq.push_back(c.support[next(rng)]);
    corpus.sequences.push_back(std::move(seq));
  }
  return out;
}

ContextTable aggregate(const Corpus& corpus, const Embedder& embedder) {
  if (corpus.sequences.empty()) throw std::invalid_argument("aggregate: empty corpus");
  corpus.validate();
  // ordered map: the table order is a function of the multiset of sequences only
  std::map<TokenSeq, std::vector<int>> counts;
  for (const auto& s : corpus.sequences) {
    TokenSeq ctx(s.begin(), s.end() - 1);
    auto [it, inserted] = counts.try_emplace(std::move(ctx));
    if (inserted) it->second.assign(corpus.vocab_size, 0);
    ++it->second[s.back()];
  }
  const double n = static_cast<double>(corpus.sequences.size());
  ContextTable table;
  table.vocab_size = corpus.vocab_size;
  table.embed_dim = embedder.dim();
  table.mode = TableMode::kFixedLength;
  for (const auto& [ctx, cnt] : counts) {
    const int occurrences = std::accumulate(cnt.begin(), cnt.end(), 0);
    table.contexts.push_back(context_from_counts(ctx, cnt, occurrences, occurrences / n, embedder));
  }
  return table;
}

ContextTable aggregate_autoregressive(const Corpus& corpus, const Embedder& embedder) {
  if (corpus.sequences.empty()) throw std::invalid_argument("aggregate: empty corpus");
  if (corpus.seq_len < 2) throw std::invalid_argument("aggregate: autoregressive mode needs T >= 2");
  corpus.validate();
  const int positions = corpus.seq_len - 1;
  const double n = static_cast<double>(corpus.sequences.size());
  ContextTable table;
  table.vocab_size = corpus.vocab_size;
  table.embed_dim = embedder.dim();
  table.mode = TableMode::kAutoregressive;
  for (int t = 1; t <= positions; ++t) {
    std::map<TokenSeq, std::vector<int>> counts;
    for (const auto& s : corpus.sequences) {
      auto [it, inserted] = counts.try_emplace(TokenSeq(s.begin(), s.begin() + t));
      if (inserted) it->second.assign(corpus.vocab_size, 0);
      ++it->second[s[t]];
    }
    double h_t = 0.0;
    for (const auto& [ctx, cnt] : counts) {
      const int occurrences = std::accumulate(cnt.begin(), cnt.end(), 0);
      h_t += (occurrences / n) * entropy_of_counts(cnt, occurrences);
      table.contexts.push_back(context_from_counts(ctx, cnt, occurrences, occurrences / n / positions, embedder));
    }
    table.position_entropies.push_back(h_t);
  }
  return table;
}

ContextTable synthesize_table(const TableSpec& spec) {
  const std::size_t m = spec.supports.size();
  if (m == 0) throw std::invalid_argument("synthesize: no contexts");
  if (spec.probs.size() != m) throw std::invalid_argument("synthesize: probs/supports size mismatch");
  if (!spec.priors.empty() && spec.priors.size() != m) throw std::invalid_argument("synthesize: priors size mismatch");
  if (!spec.embeddings.empty() && spec.embeddings.size() != m) {
    throw std::invalid_argument("synthesize: embeddings size mismatch");
  }
  std::mt19937_64 rng(spec.seed);
  const double stddev = 1.0 / std::sqrt(static_cast<double>(std::max(spec.embed_dim, 1)));
  ContextTable table;
  table.vocab_size = spec.vocab_size;
  table.embed_dim = spec.embed_dim;
  for (std::size_t j = 0; j < m; ++j) {
    DistinctContext c;
    c.support = spec.supports[j];
    c.probs = spec.probs[j];
    c.prior = spec.priors.empty() ? 1.0 / static_cast<double>(m) : spec.priors[j];
    c.embedding = spec.embeddings.empty() ? gaussian_vector(spec.embed_dim, stddev, rng) : spec.embeddings[j];
    table.contexts.push_back(std::move(c));
  }
  table.validate();
  return table;
}

ContextTable random_table(int m, int d, int vocab_size, int support_size, std::uint64_t seed,
                          std::optional<double> embed_std) {
  if (support_size < 1 || support_size > vocab_size) throw std::invalid_argument("random_table: bad support size");
  std::mt19937_64 rng(seed);
  const double stddev = embed_std.value_or(1.0 / std::sqrt(static_cast<double>(d)));
  std::uniform_real_distribution<double> prior_weight(0.5, 1.5);
  TableSpec spec;
  spec.vocab_size = vocab_size;
  spec.embed_dim = d;
  double total = 0.0;
  for (int j = 0; j < m; ++j) {
    spec.supports.push_back(random_subset(vocab_size, support_size, rng));
    spec.probs.push_back(dirichlet_ones(support_size, rng));
    spec.embeddings.push_back(gaussian_vector(d, stddev, rng));
    spec.priors.push_back(prior_weight(rng));
    total += spec.priors.back();
  }
  for (auto& p : spec.priors) p /= total;
  // renormalize exactly enough that the simplex check cannot trip on rounding
  spec.priors.back() = 1.0 - std::accumulate(spec.priors.begin(), spec.priors.end() - 1, 0.0);
  if (support_size == vocab_size) {
    // keep the standing sparsity assumption: drop one token from the first context
    auto& p0 = spec.probs[0];
    spec.supports[0].pop_back();
    p0.pop_back();
    const double s = std::accumulate(p0.begin(), p0.end(), 0.0);
    for (auto& x : p0) x /= s;
  }
  return synthesize_table(spec);
}

}  // namespace ntpbias
