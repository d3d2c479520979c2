#pragma once

/**
 * Expansion backends.
 *
 * ExpansionBackend is the one seam between the search engine and whatever
 * generates children: it receives the assembled batch and returns `width`
 * children per row. Two implementations ship here and in http_backend.hpp.
 *
 * SyntheticEnv is a deterministic reasoning environment with enumerable
 * ground truth. A planted "golden" child index exists at every depth;
 * children on the golden prefix score in [golden_base, golden_base +
 * golden_range), everything else in [noise_base, noise_base + noise_range).
 * Terminal reward is (longest golden prefix of the path) / depth, so the
 * full-depth golden leaf scores exactly 1.0. Every quantity is a pure
 * function of (seed, path): batch composition cannot affect any row's
 * output, and brute_force_best can enumerate the whole tree.
 *
 * Rows carry their identity in-band: the first token of each generated
 * chunk encodes the child index (token id 1 + index), so the environment
 * recovers the path of a row from its token sequence alone and keeps no
 * per-node state. expand() also validates the batch padding invariants,
 * which makes the streamline contracts executable at every cycle.
 */

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "dpts/core.hpp"
#include "dpts/errors.hpp"
#include "dpts/mix.hpp"
#include "dpts/streamline.hpp"

namespace dpts {

class ExpansionBackend {
public:
  virtual ~ExpansionBackend() = default;
  virtual BatchOutput expand(const BatchInput& batch, int width, int mini_step) = 0;
};

struct EnvConfig {
  std::uint64_t seed = 0;
  int width = 4;             // must match Config::width of the run
  int depth = 8;             // terminal depth D
  double term_prob = 0.0;    // per-node early-termination probability, in [0,1)
  double conf_golden_base = 0.75;
  double conf_golden_range = 0.2;
  double conf_noise_base = 0.1;
  double conf_noise_range = 0.6;
  int prompt_len = 3;

  void validate() const {
    if (width < 1) throw InvalidConfig("env width must be >= 1");
    if (depth < 1) throw InvalidConfig("env depth must be >= 1");
    if (term_prob < 0.0 || term_prob >= 1.0) throw InvalidConfig("term_prob must be in [0,1)");
    if (prompt_len < 1) throw InvalidConfig("prompt_len must be >= 1");
    auto in_unit = [](double lo, double range) {
      return lo >= 0.0 && range >= 0.0 && lo + range <= 1.0;
    };
    if (!in_unit(conf_golden_base, conf_golden_range) ||
        !in_unit(conf_noise_base, conf_noise_range)) {
      throw InvalidConfig("confidence bands must stay within [0,1]");
    }
  }
};

struct BestPath {
  std::vector<int> path;  // child indices from the root
  double reward = 0.0;
};

class SyntheticEnv : public ExpansionBackend {
public:
  SyntheticEnv(const EnvConfig& env, TokenId pad_token, int cache_dim)
      : env_(env), pad_token_(pad_token), cache_dim_(cache_dim) {
    env_.validate();
    if (cache_dim_ < 1) throw InvalidConfig("cache_dim must be >= 1");
    root_hash_ = avalanche64(env_.seed);
    prompt_.reserve(static_cast<std::size_t>(env_.prompt_len));
    for (int i = 0; i < env_.prompt_len; ++i) {
      prompt_.push_back(body_token(mix64(mix64(root_hash_, kPromptSalt), i)));
    }
  }

  SyntheticEnv(const SyntheticEnv&) = delete;
  SyntheticEnv& operator=(const SyntheticEnv&) = delete;

  const EnvConfig& env() const { return env_; }
  const TokenSeq& prompt() const { return prompt_; }

  // Planted optimal child index at depth d (1-based).
  int golden_child(int d) const {
    return static_cast<int>(mix64(mix64(root_hash_, kGoldenSalt), d) %
                            static_cast<std::uint64_t>(env_.width));
  }

  int golden_prefix_len(std::span<const int> path) const {
    int len = 0;
    for (std::size_t i = 0; i < path.size(); ++i) {
      if (path[i] != golden_child(static_cast<int>(i) + 1)) break;
      ++len;
    }
    return len;
  }

  bool on_golden_prefix(std::span<const int> path) const {
    return golden_prefix_len(path) == static_cast<int>(path.size());
  }

  double confidence_of(std::span<const int> path) const {
    const double u = unit_interval(mix64(hash_path(root_hash_, path), kConfSalt));
    if (on_golden_prefix(path)) return env_.conf_golden_base + env_.conf_golden_range * u;
    return env_.conf_noise_base + env_.conf_noise_range * u;
  }

  bool is_terminal(std::span<const int> path) const {
    if (path.empty()) return false;  // the prompt itself never terminates
    if (static_cast<int>(path.size()) >= env_.depth) return true;
    const double u = unit_interval(mix64(hash_path(root_hash_, path), kTermSalt));
    return u < env_.term_prob;
  }

  double reward_of(std::span<const int> path) const {
    return static_cast<double>(golden_prefix_len(path)) / static_cast<double>(env_.depth);
  }

  // The chunk a child appends: the first token encodes the child index
  // (id 1 + index); the rest are pseudo-random body tokens.
  TokenSeq tokens_of(std::span<const int> path, int mini_step) const {
    TokenSeq out;
    out.reserve(static_cast<std::size_t>(mini_step));
    out.push_back(static_cast<TokenId>(1 + path.back()));
    const std::uint64_t h = mix64(hash_path(root_hash_, path), kTokenSalt);
    for (int k = 1; k < mini_step; ++k) {
      out.push_back(body_token(mix64(h, k)));
    }
    return out;
  }

  KvSegment cells_of(std::span<const int> path, int mini_step) const {
    KvSegment seg;
    seg.cells.reserve(static_cast<std::size_t>(mini_step));
    const std::uint64_t h = mix64(hash_path(root_hash_, path), kCellSalt);
    for (int k = 0; k < mini_step; ++k) {
      const std::uint64_t ch = mix64(h, k);
      CacheCell cell(static_cast<std::size_t>(cache_dim_));
      for (int d = 0; d < cache_dim_; ++d) {
        // components in [0.25, 1): a produced cell is never the zero cell
        cell[static_cast<std::size_t>(d)] =
            static_cast<float>(0.25 + 0.75 * unit_interval(mix64(ch, d)));
      }
      seg.cells.push_back(std::move(cell));
    }
    return seg;
  }

  BatchOutput expand(const BatchInput& batch, int width, int mini_step) override {
    if (width != env_.width) {
      throw InvalidConfig("backend width mismatch: engine asked for " + std::to_string(width) +
                          ", environment has " + std::to_string(env_.width));
    }
    if (mini_step < 1) throw InvalidConfig("mini_step must be >= 1");

    BatchOutput out;
    out.rows.resize(batch.rows());
    for_each_row(batch.rows(), [&](std::size_t r) {
      const std::vector<int> path = decode_row(batch, r, mini_step);
      out.rows[r] = expand_path(path, mini_step);
    });
    return out;
  }

  // Children of one decoded path, identical to what expand() computes for
  // the corresponding batch row.
  std::vector<ChildOutput> expand_path(std::vector<int> path, int mini_step) const {
    std::vector<ChildOutput> row;
    row.reserve(static_cast<std::size_t>(env_.width));
    for (int j = 0; j < env_.width; ++j) {
      path.push_back(j);
      ChildOutput child;
      child.tokens = tokens_of(path, mini_step);
      child.kv = cells_of(path, mini_step);
      child.confidence = confidence_of(path);
      child.terminated = is_terminal(path);
      if (child.terminated) child.terminal_reward = reward_of(path);
      row.push_back(std::move(child));
      path.pop_back();
    }
    return row;
  }

  std::uint64_t leaf_bound() const {
    return static_cast<std::uint64_t>(std::pow(static_cast<double>(env_.width),
                                               static_cast<double>(env_.depth)));
  }

  // Number of parallel evaluation threads to use for multi-row batches;
  // set to 1 to force sequential evaluation (output is identical either way).
  void set_row_threads(unsigned n) { row_threads_ = n == 0 ? 1 : n; }

private:
  static constexpr std::uint64_t kGoldenSalt = 0x676f6c64656e5f31ull;
  static constexpr std::uint64_t kConfSalt = 0x636f6e665f5f5f32ull;
  static constexpr std::uint64_t kTermSalt = 0x7465726d5f5f5f33ull;
  static constexpr std::uint64_t kTokenSalt = 0x746f6b656e5f5f34ull;
  static constexpr std::uint64_t kCellSalt = 0x63656c6c5f5f5f35ull;
  static constexpr std::uint64_t kPromptSalt = 0x70726f6d70745f36ull;

  TokenId body_token(std::uint64_t h) const {
    TokenId tok = static_cast<TokenId>(env_.width) + 1 +
                  static_cast<TokenId>(h % 0x100000ull);
    if (tok == pad_token_) ++tok;
    return tok;
  }

  /**
   * Recovers the child-index path of a row and validates the streamline
   * contract on the way: rectangular shape, pure padding, pure interior,
   * cell count matching generated-token count, and a non-terminal path.
   */
  std::vector<int> decode_row(const BatchInput& batch, std::size_t r, int mini_step) const {
    const std::size_t kv_cols = batch.kv_cols();
    const std::size_t seq_cols = batch.seq_cols();
    if (batch.kv[r].size() != kv_cols || batch.seq[r].size() != seq_cols) {
      throw ProtocolViolation("ragged batch row");
    }
    if (batch.kv_valid[r] > kv_cols || batch.seq_valid[r] > seq_cols) {
      throw ProtocolViolation("valid length exceeds batch width");
    }

    const std::size_t kv_pad = kv_cols - batch.kv_valid[r];
    for (std::size_t i = 0; i < kv_cols; ++i) {
      const bool padded = i < kv_pad;
      if (padded != is_zero_cell(batch.kv[r][i])) {
        throw ProtocolViolation(padded ? "padded KV cell is not the zero cell"
                                       : "zero cell inside the valid KV region");
      }
    }
    for (std::size_t i = 0; i < seq_cols; ++i) {
      const bool padded = i >= batch.seq_valid[r];
      if (padded != (batch.seq[r][i] == pad_token_)) {
        throw ProtocolViolation(padded ? "padded token is not the pad token"
                                       : "pad token inside the valid sequence");
      }
    }

    if (batch.seq_valid[r] < prompt_.size()) {
      throw ProtocolViolation("row sequence shorter than the environment prompt");
    }
    for (std::size_t i = 0; i < prompt_.size(); ++i) {
      if (batch.seq[r][i] != prompt_[i]) {
        throw ProtocolViolation("row prompt does not match the environment prompt");
      }
    }

    const std::size_t generated = batch.seq_valid[r] - prompt_.size();
    if (batch.kv_valid[r] != generated) {
      throw ProtocolViolation("KV chain length does not match generated token count");
    }
    if (generated % static_cast<std::size_t>(mini_step) != 0) {
      throw ProtocolViolation("generated tokens are not whole mini-step chunks");
    }

    const std::size_t depth = generated / static_cast<std::size_t>(mini_step);
    std::vector<int> path;
    path.reserve(depth);
    for (std::size_t d = 0; d < depth; ++d) {
      const TokenId marker = batch.seq[r][prompt_.size() + d * static_cast<std::size_t>(mini_step)];
      if (marker < 1 || marker > static_cast<TokenId>(env_.width)) {
        throw ProtocolViolation("chunk marker token out of range");
      }
      path.push_back(static_cast<int>(marker) - 1);
    }
    if (is_terminal(path)) {
      throw ProtocolViolation("expanding a terminated path");
    }
    return path;
  }

  // Evaluates fn(r) for every row, using a small worker pool when the batch
  // is wide enough to pay for it. Rows write disjoint slots, so the result
  // is identical to the sequential order. A throwing row aborts the batch;
  // the lowest-index error is rethrown on the calling thread.
  void for_each_row(std::size_t rows, const std::function<void(std::size_t)>& fn) {
    const unsigned hw = row_threads_ ? row_threads_ : std::thread::hardware_concurrency();
    if (rows < 2 || hw < 2) {
      for (std::size_t r = 0; r < rows; ++r) fn(r);
      return;
    }
    ensure_pool(hw - 1);

    std::mutex err_mu;
    std::exception_ptr error;
    std::size_t err_row = rows;
    const std::function<void(std::size_t)> guarded = [&](std::size_t r) {
      try {
        fn(r);
      } catch (...) {
        std::lock_guard lk(err_mu);
        if (r < err_row) {
          err_row = r;
          error = std::current_exception();
        }
      }
    };
    pool_run(rows, guarded);
    if (error) std::rethrow_exception(error);
  }

  struct PoolJob {
    const std::function<void(std::size_t)>* fn = nullptr;
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> done{0};
    std::size_t total = 0;
  };

  void ensure_pool(unsigned workers) {
    std::call_once(pool_once_, [this, workers] {
      for (unsigned i = 0; i < workers; ++i) {
        pool_threads_.emplace_back([this] { worker_loop(); });
      }
    });
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    while (true) {
      PoolJob* job = nullptr;
      {
        std::unique_lock lk(pool_mu_);
        pool_cv_.wait(lk, [&] { return pool_stop_ || job_gen_ != seen; });
        if (pool_stop_) return;
        seen = job_gen_;
        job = job_;
        if (job) ++active_;
      }
      if (!job) continue;
      drain_rows(job);
      {
        std::lock_guard lk(pool_mu_);
        --active_;
      }
      pool_done_cv_.notify_all();
    }
  }

  static void drain_rows(PoolJob* job) {
    while (true) {
      const std::size_t r = job->next.fetch_add(1);
      if (r >= job->total) return;
      (*job->fn)(r);
      job->done.fetch_add(1);
    }
  }

  void pool_run(std::size_t rows, const std::function<void(std::size_t)>& fn) {
    PoolJob job;
    job.fn = &fn;
    job.total = rows;
    {
      std::lock_guard lk(pool_mu_);
      job_ = &job;
      ++job_gen_;
    }
    pool_cv_.notify_all();
    drain_rows(&job);
    // The job lives on this stack frame: wait until every worker that
    // entered it has left before returning.
    std::unique_lock lk(pool_mu_);
    pool_done_cv_.wait(lk, [&] { return job.done.load() == job.total && active_ == 0; });
    job_ = nullptr;
  }

public:
  ~SyntheticEnv() override {
    {
      std::lock_guard lk(pool_mu_);
      pool_stop_ = true;
    }
    pool_cv_.notify_all();
    for (std::thread& t : pool_threads_) t.join();
  }

private:
  EnvConfig env_;
  TokenId pad_token_;
  int cache_dim_;
  std::uint64_t root_hash_ = 0;
  TokenSeq prompt_;

  unsigned row_threads_ = 0;  // 0 = hardware_concurrency
  std::once_flag pool_once_;
  std::vector<std::thread> pool_threads_;
  std::mutex pool_mu_;
  std::condition_variable pool_cv_;
  std::condition_variable pool_done_cv_;
  PoolJob* job_ = nullptr;
  std::uint64_t job_gen_ = 0;
  unsigned active_ = 0;
  bool pool_stop_ = false;
};

/**
 * Ground-truth oracle: enumerates every root-to-terminal path depth-first
 * and returns the maximum reward with the lexicographically smallest
 * achieving path. Guarded by width^depth <= 1e6.
 */
inline BestPath brute_force_best(const SyntheticEnv& env) {
  if (env.leaf_bound() > 1000000ull) {
    throw LimitExceeded("environment too large to enumerate");
  }
  BestPath best;
  best.reward = -1.0;
  std::vector<int> path;
  // Depth-first in child order: the first path achieving a given reward is
  // the lexicographically smallest one, so only strict improvements replace.
  std::function<void()> walk = [&] {
    if (env.is_terminal(path)) {
      const double r = env.reward_of(path);
      if (r > best.reward) {
        best.reward = r;
        best.path = path;
      }
      return;
    }
    for (int j = 0; j < env.env().width; ++j) {
      path.push_back(j);
      walk();
      path.pop_back();
    }
  };
  walk();
  return best;
}

}  // namespace dpts
