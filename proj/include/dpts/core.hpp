#pragma once

/**
 * Core domain types for dynamic parallel tree search.
 *
 * A run owns one Tree (arena of nodes keyed by creation-ordered ids), one
 * CandidatePool (the ranked reservoir of generated-but-unexpanded nodes)
 * and one ParallelQueue (the nodes expanded together in the next batched
 * generation cycle). A node is always in at most one of pool/queue, and
 * its Mode tells which container it may legally occupy:
 *
 *   Candidate  -> pool only
 *   Exploit    -> queue only
 *   Explore    -> queue only
 *   Stopped    -> retired after expansion (or demoted), never expanded again
 *   Terminated -> carries a reward, never expanded again
 *
 * Each node stores only the KV cache cells for the tokens *it* appended;
 * full chains are rebuilt by ancestor concatenation (see streamline.hpp).
 */

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <vector>

#include "dpts/errors.hpp"

namespace dpts {

using NodeId = std::uint32_t;
using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// One cache cell per generated token; fixed dimension per run
// (Config::cache_dim). The all-zero cell is reserved for batch padding and
// is never produced by a backend for a real token.
using CacheCell = std::vector<float>;

struct KvSegment {
  std::vector<CacheCell> cells;

  std::size_t size() const { return cells.size(); }
  bool empty() const { return cells.empty(); }
};

inline CacheCell zero_cell(int dim) { return CacheCell(static_cast<std::size_t>(dim), 0.0f); }

inline bool is_zero_cell(const CacheCell& c) {
  return std::all_of(c.begin(), c.end(), [](float v) { return v == 0.0f; });
}

enum class Mode { Candidate, Exploit, Explore, Stopped, Terminated };

struct Node {
  NodeId id = 0;
  std::optional<NodeId> parent;
  double confidence = 0.0;          // prior confidence in [0,1], backend-supplied
  KvSegment kv;                     // cells for tokens appended at this node only
  TokenSeq seq;                     // full token path from the root prompt
  Mode mode = Mode::Candidate;
  std::uint32_t depth = 0;
  std::optional<double> reward;     // set exactly once, iff mode == Terminated
};

struct Budget {
  std::uint64_t max_expansions = std::numeric_limits<std::uint64_t>::max();
  double max_wall_seconds = std::numeric_limits<double>::infinity();
};

struct Config {
  int width = 4;                 // children per expansion
  int depth_max = 16;            // hard depth limit per path
  int mini_step = 100;           // token budget of one expansion
  int max_tokens = 2048;         // hard token limit per path
  double p = 0.5;                // exploit proportion of the parallel queue
  double lambda_es = 0.7;
  double lambda_ds = 0.7;
  int t_star = 5;                // threshold switch after this many terminated paths
  TokenId pad_token = 0;
  int cache_dim = 4;
  int parallel_cap = 8;          // upper clamp on the adaptive queue size
  Budget budget;
  std::uint64_t seed = 0;

  void validate() const {
    if (width < 1) throw InvalidConfig("width must be >= 1");
    if (depth_max < 1) throw InvalidConfig("depth_max must be >= 1");
    if (mini_step < 1) throw InvalidConfig("mini_step must be >= 1");
    if (max_tokens < 1) throw InvalidConfig("max_tokens must be >= 1");
    if (p < 0.0 || p > 1.0) throw InvalidConfig("p must be in [0,1]");
    if (lambda_es < 0.0) throw InvalidConfig("lambda_es must be >= 0");
    if (lambda_ds < 0.0) throw InvalidConfig("lambda_ds must be >= 0");
    if (t_star < 1) throw InvalidConfig("t_star must be >= 1");
    if (pad_token < 0) throw InvalidConfig("pad_token must be >= 0");
    if (cache_dim < 1) throw InvalidConfig("cache_dim must be >= 1");
    if (parallel_cap < 1) throw InvalidConfig("parallel_cap must be >= 1");
  }
};

// Simulated memory model driving the adaptive queue size. o_peak is the
// peak cost observed during the previous generation cycle; the scheduler
// refreshes it as max(o_init, (batch cells + live tree cells) * cell_cost).
struct MemoryModel {
  double o_max = 1.0e6;
  double o_init = 0.0;
  double o_peak = 0.0;
  double cell_cost = 1.0;
};

// Confidence history of expanded nodes plus the terminated-path count,
// the inputs of the transition-threshold formula.
struct ThresholdState {
  std::vector<double> history;
  int t = 0;
};

// ============================================================================
// CandidatePool
// ============================================================================

/**
 * Ranked reservoir of unexpanded Candidate nodes, ordered by descending
 * confidence with ascending NodeId as the tie-break so that extraction
 * order is reproducible.
 */
class CandidatePool {
public:
  struct Entry {
    double confidence;
    NodeId id;
    bool operator<(const Entry& other) const {
      if (confidence != other.confidence) return confidence > other.confidence;
      return id < other.id;
    }
  };

  void insert(NodeId id, double confidence) { entries_.insert({confidence, id}); }

  bool erase(NodeId id, double confidence) { return entries_.erase({confidence, id}) > 0; }

  bool contains(NodeId id, double confidence) const {
    return entries_.count({confidence, id}) > 0;
  }

  // Removes and returns up to k entries in (confidence desc, id asc) order.
  std::vector<NodeId> take_top(std::size_t k) {
    std::vector<NodeId> out;
    out.reserve(std::min(k, entries_.size()));
    while (out.size() < k && !entries_.empty()) {
      auto it = entries_.begin();
      out.push_back(it->id);
      entries_.erase(it);
    }
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

private:
  std::set<Entry> entries_;
};

// ============================================================================
// ParallelQueue
// ============================================================================

// Ordered list of the nodes expanded together in the next cycle. Row order
// of the assembled batch is exactly this order. Size is capped by the
// adaptive queue size; the scheduler enforces the cap.
class ParallelQueue {
public:
  void push(NodeId id) { entries_.push_back(id); }
  void clear() { entries_.clear(); }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  NodeId operator[](std::size_t i) const { return entries_[i]; }

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<NodeId>& entries() { return entries_; }
  const std::vector<NodeId>& entries() const { return entries_; }

private:
  std::vector<NodeId> entries_;
};

// ============================================================================
// Tree
// ============================================================================

/**
 * Arena of nodes. Ids are assigned in creation order starting at 0 (the
 * root) and never reused; children lists preserve creation order.
 */
class Tree {
public:
  /**
   * Creates the root from the prompt and registers it in the pool.
   * The root's confidence is pinned to 1.0; it is always expanded first.
   */
  Node& create_root(const TokenSeq& prompt, const Config& config, CandidatePool& pool) {
    config.validate();
    if (!nodes_.empty()) throw InvalidInput("tree already has a root");
    if (prompt.empty()) throw InvalidInput("prompt must be non-empty");
    for (TokenId t : prompt) {
      if (t == config.pad_token) throw InvalidInput("prompt contains the pad token");
    }
    pad_token_ = config.pad_token;
    cache_dim_ = config.cache_dim;

    Node root;
    root.id = 0;
    root.confidence = 1.0;
    root.seq = prompt;
    root.mode = Mode::Candidate;
    root.depth = 0;
    nodes_.push_back(std::move(root));
    children_.emplace_back();
    pool.insert(0, 1.0);
    return nodes_.front();
  }

  /**
   * Appends a child under `parent`: seq is the parent's seq plus `tokens`,
   * with one cache cell per token. The child starts as a Candidate; whether
   * it enters the pool or the queue is the scheduler's call.
   */
  Node& add_child(NodeId parent, TokenSeq tokens, KvSegment cells, double confidence) {
    if (parent >= nodes_.size()) throw NotFound("unknown parent node");
    if (tokens.size() != cells.size()) {
      throw InvalidInput("token count must equal cache cell count");
    }
    if (confidence < 0.0 || confidence > 1.0) {
      throw InvalidInput("confidence must be in [0,1]");
    }
    for (const CacheCell& c : cells.cells) {
      if (static_cast<int>(c.size()) != cache_dim_) {
        throw InvalidInput("cache cell dimension mismatch");
      }
    }

    const Node& par = nodes_[parent];
    Node child;
    child.id = static_cast<NodeId>(nodes_.size());
    child.parent = parent;
    child.confidence = confidence;
    child.seq.reserve(par.seq.size() + tokens.size());
    child.seq = par.seq;
    child.seq.insert(child.seq.end(), tokens.begin(), tokens.end());
    child.kv = std::move(cells);
    child.mode = Mode::Candidate;
    child.depth = par.depth + 1;
    nodes_.push_back(std::move(child));
    children_.emplace_back();
    children_[parent].push_back(nodes_.back().id);
    return nodes_.back();
  }

  // Ancestors of `id` in root-first order; empty for the root.
  std::vector<NodeId> ancestors(NodeId id) const {
    const Node* n = &node(id);
    std::vector<NodeId> out;
    out.reserve(n->depth);
    while (n->parent) {
      out.push_back(*n->parent);
      n = &nodes_[*n->parent];
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  Node& node(NodeId id) {
    if (id >= nodes_.size()) throw NotFound("unknown node id");
    return nodes_[id];
  }
  const Node& node(NodeId id) const {
    if (id >= nodes_.size()) throw NotFound("unknown node id");
    return nodes_[id];
  }

  const std::vector<NodeId>& children(NodeId id) const {
    if (id >= children_.size()) throw NotFound("unknown node id");
    return children_[id];
  }

  bool contains(NodeId id) const { return id < nodes_.size(); }
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  TokenId pad_token() const { return pad_token_; }
  int cache_dim() const { return cache_dim_; }

  // Total cache cells currently held by live nodes (the simulated memory
  // model's notion of resident cache).
  std::size_t live_cells() const {
    std::size_t total = 0;
    for (const Node& n : nodes_) total += n.kv.size();
    return total;
  }

private:
  std::vector<Node> nodes_;
  std::vector<std::vector<NodeId>> children_;
  TokenId pad_token_ = 0;
  int cache_dim_ = 1;
};

}  // namespace dpts
