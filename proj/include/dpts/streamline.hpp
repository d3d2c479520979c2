#pragma once

/**
 * Parallelism streamline: turns a parallel queue of nodes with uneven path
 * lengths into one rectangular batch and turns backend outputs back into
 * tree nodes.
 *
 * Conventions, deliberately asymmetric:
 *   - KV chains are LEFT-padded with all-zero cells,
 *   - token sequences are RIGHT-padded with the pad token.
 * Valid-length vectors (kv_valid / seq_valid) record the original lengths,
 * so either convention is recoverable bit-exactly; no attention mask is
 * modeled.
 *
 * Eviction drops cache cells of finished subtrees (terminated/stopped
 * leaves, and internal nodes whose whole subtree is finished) while keeping
 * token sequences, which metrics still need.
 */

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "dpts/core.hpp"
#include "dpts/errors.hpp"

namespace dpts {

struct BatchInput {
  std::vector<std::vector<CacheCell>> kv;  // rows x L_kv, left-padded with zero cells
  std::vector<TokenSeq> seq;               // rows x L_seq, right-padded with pad_token
  std::vector<std::size_t> kv_valid;       // per-row valid KV length
  std::vector<std::size_t> seq_valid;      // per-row valid sequence length
  std::vector<NodeId> row_nodes;           // per-row source node

  std::size_t rows() const { return row_nodes.size(); }
  std::size_t kv_cols() const { return kv.empty() ? 0 : kv.front().size(); }
  std::size_t seq_cols() const { return seq.empty() ? 0 : seq.front().size(); }
};

// One generated child: the new tokens, one cache cell per token, a prior
// confidence, and optionally a terminal reward (present iff terminated).
struct ChildOutput {
  TokenSeq tokens;
  KvSegment kv;
  double confidence = 0.0;
  bool terminated = false;
  std::optional<double> terminal_reward;
};

struct BatchOutput {
  std::vector<std::vector<ChildOutput>> rows;  // rows x width
};

// Child node freshly inserted by partition_outputs, with the backend's
// termination verdict still attached (reward assignment happens later, in
// the scheduler's collect step).
struct NewChild {
  NodeId id;
  bool backend_terminated = false;
  std::optional<double> terminal_reward;
};

// Full KV chain for a node: segment cells of [root, ..., parent, node]
// concatenated root-first. Length equals the tokens appended along the path.
inline std::vector<CacheCell> materialize_kv_chain(const Tree& tree, NodeId id) {
  std::vector<NodeId> chain = tree.ancestors(id);
  chain.push_back(id);
  std::vector<CacheCell> out;
  for (NodeId n : chain) {
    const KvSegment& seg = tree.node(n).kv;
    out.insert(out.end(), seg.cells.begin(), seg.cells.end());
  }
  return out;
}

/**
 * Builds the rectangular batch for the queue, one row per entry in queue
 * order. KV rows are materialized chains left-padded to the longest chain;
 * sequence rows are full seqs right-padded to the longest seq.
 */
inline BatchInput assemble_batch(const Tree& tree, const ParallelQueue& queue,
                                 TokenId pad_token) {
  if (queue.empty()) throw EmptyBatch("cannot assemble an empty queue");

  BatchInput batch;
  const std::size_t rows = queue.size();
  batch.kv.reserve(rows);
  batch.seq.reserve(rows);
  batch.kv_valid.reserve(rows);
  batch.seq_valid.reserve(rows);
  batch.row_nodes.assign(queue.begin(), queue.end());

  std::size_t l_kv = 0;
  std::size_t l_seq = 0;
  for (NodeId id : queue) {
    batch.kv.push_back(materialize_kv_chain(tree, id));
    batch.seq.push_back(tree.node(id).seq);
    batch.kv_valid.push_back(batch.kv.back().size());
    batch.seq_valid.push_back(batch.seq.back().size());
    l_kv = std::max(l_kv, batch.kv_valid.back());
    l_seq = std::max(l_seq, batch.seq_valid.back());
  }

  const CacheCell pad_cell = zero_cell(tree.cache_dim());
  for (std::size_t r = 0; r < rows; ++r) {
    batch.kv[r].insert(batch.kv[r].begin(), l_kv - batch.kv_valid[r], pad_cell);
    batch.seq[r].insert(batch.seq[r].end(), l_seq - batch.seq_valid[r], pad_token);
  }
  return batch;
}

// Strips the padding of one row; inverse of assemble_batch for that row.
inline std::pair<std::vector<CacheCell>, TokenSeq> departition(const BatchInput& batch,
                                                               std::size_t row) {
  if (row >= batch.rows()) throw NotFound("batch row out of range");
  const std::size_t kv_pad = batch.kv_cols() - batch.kv_valid[row];
  std::vector<CacheCell> cells(batch.kv[row].begin() + static_cast<std::ptrdiff_t>(kv_pad),
                               batch.kv[row].end());
  TokenSeq seq(batch.seq[row].begin(),
               batch.seq[row].begin() + static_cast<std::ptrdiff_t>(batch.seq_valid[row]));
  return {std::move(cells), std::move(seq)};
}

/**
 * Inserts the backend's outputs into the tree: width children per queue row,
 * in (row, child) order. Children carry the backend confidence; termination
 * verdicts are passed through on the returned records, not applied here.
 */
inline std::vector<NewChild> partition_outputs(Tree& tree, const BatchOutput& batch_out,
                                               const ParallelQueue& queue, int width) {
  if (batch_out.rows.size() != queue.size()) {
    throw ProtocolViolation("backend returned " + std::to_string(batch_out.rows.size()) +
                            " rows for a queue of " + std::to_string(queue.size()));
  }
  std::vector<NewChild> out;
  out.reserve(queue.size() * static_cast<std::size_t>(width));
  for (std::size_t r = 0; r < queue.size(); ++r) {
    const auto& row = batch_out.rows[r];
    if (row.size() != static_cast<std::size_t>(width)) {
      throw ProtocolViolation("backend returned " + std::to_string(row.size()) +
                              " children in a row, expected " + std::to_string(width));
    }
    for (const ChildOutput& c : row) {
      if (c.terminated != c.terminal_reward.has_value()) {
        throw ProtocolViolation("terminal_reward must be present iff terminated");
      }
      Node& child = tree.add_child(queue[r], c.tokens, c.kv, c.confidence);
      out.push_back({child.id, c.terminated, c.terminal_reward});
    }
  }
  return out;
}

/**
 * Frees cache cells of dead subtrees: terminated/stopped leaves and internal
 * nodes all of whose descendants are terminated or stopped. Sequences are
 * kept. Idempotent; returns the number of cells freed. Never touches a node
 * on a path to a live (candidate/exploit/explore) leaf.
 */
inline std::size_t evict_caches(Tree& tree) {
  const std::size_t n = tree.size();
  if (n == 0) return 0;

  // subtree_dead[i]: node i and everything under it is Terminated or
  // Stopped. Children have larger ids, so one reverse pass is a post-order
  // traversal.
  std::vector<char> subtree_dead(n, 1);
  for (std::size_t i = n; i-- > 0;) {
    const NodeId id = static_cast<NodeId>(i);
    const Mode m = tree.node(id).mode;
    if (m != Mode::Terminated && m != Mode::Stopped) {
      subtree_dead[i] = 0;
      continue;
    }
    for (NodeId c : tree.children(id)) {
      if (!subtree_dead[c]) {
        subtree_dead[i] = 0;
        break;
      }
    }
  }

  std::size_t freed = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!subtree_dead[i]) continue;
    Node& node = tree.node(static_cast<NodeId>(i));
    freed += node.kv.size();
    node.kv.cells.clear();
    node.kv.cells.shrink_to_fit();
  }
  return freed;
}

}  // namespace dpts
