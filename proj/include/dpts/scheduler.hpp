#pragma once

/**
 * The control loop of dynamic parallel tree search.
 *
 * One cycle:
 *   1. size the queue from the memory model (adaptive parallelism),
 *   2. refill the queue from the candidate pool, splitting refills into
 *      exploit/explore by the proportion p,
 *   3. compute the transition thresholds from the history so far,
 *   4. assemble the batch, expand it through the backend, partition the
 *      outputs into child nodes,
 *   5. collect rewards: terminal children retire with a reward, the rest
 *      join the pool; expanded parents feed the threshold history,
 *   6. transition: each parent either hands its queue slot to its best
 *      child (continue / deep seek) or is early-stopped,
 *   7. evict caches of finished subtrees and refresh the peak-memory
 *      estimate.
 *
 * The loop ends when the expansion budget or wall clock runs out, or when
 * queue and pool are both empty. With an unlimited budget on a finite
 * environment every candidate is eventually expanded, so the returned
 * best reward is the global maximum.
 *
 * Threshold semantics: while at most t_star paths have terminated the
 * threshold is lambda * mean(history); afterwards it is max(history),
 * independent of lambda. The root's pinned confidence of 1.0 enters the
 * history when the root is expanded, so past t_star the max-based branch
 * stops every lineage whose children score below 1.0 and the search decays
 * into pool-ranked best-first expansion.
 */

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dpts/backend.hpp"
#include "dpts/core.hpp"
#include "dpts/errors.hpp"
#include "dpts/streamline.hpp"
#include "dpts/trace.hpp"

namespace dpts {

struct TransitionThresholds {
  double theta_es = 0.0;
  double theta_ds = 0.0;
};

struct TerminatedPath {
  NodeId node = 0;
  double reward = 0.0;
  std::uint32_t total_tokens = 0;  // generated tokens on the path
};

struct RunResult {
  std::optional<NodeId> best;
  std::optional<double> best_reward;
  std::vector<TerminatedPath> terminated_paths;
  std::uint32_t cycles = 0;
  StopReason stop_reason = StopReason::PoolDrained;
  std::optional<std::string> error;  // set iff stop_reason == BackendFailure
};

struct RunOutput {
  RunResult result;
  RunTrace trace;
};

// Ablation switches mirroring the framework's components: adaptive
// parallelism, the search (exploit/explore split) mechanism, and the
// transition (early stop / deep seek) mechanism.
struct Toggles {
  bool adaptive_parallelism = true;  // off: queue size pinned to 1
  bool search_mechanism = true;      // off: every refill becomes Exploit
  bool transition_mechanism = true;  // off: best child always continues, no events
};

/**
 * Adaptive queue size: headroom over the cost of the previous cycle,
 * floored and clamped to [1, cap]. Before the first measurement (or when
 * the denominator degenerates) the cap is returned.
 */
inline int compute_queue_size(const MemoryModel& mem, int cap) {
  if (cap < 1) throw InvalidConfig("parallel cap must be >= 1");
  if (mem.o_max < mem.o_init) throw InvalidConfig("o_max must be >= o_init");
  if (mem.o_peak <= mem.o_init) return cap;
  const double ratio = (mem.o_max - mem.o_init) / (mem.o_peak - mem.o_init);
  const double floored = std::floor(ratio);
  if (floored <= 1.0) return 1;
  if (floored >= static_cast<double>(cap)) return cap;
  return static_cast<int>(floored);
}

// Transition threshold over the expanded-node history; see the header
// comment for the t_star switch. Empty history yields 0.
inline double compute_threshold(const ThresholdState& state, double lambda, int t_star) {
  if (state.history.empty()) return 0.0;
  if (state.t <= t_star) {
    const double mean = std::accumulate(state.history.begin(), state.history.end(), 0.0) /
                        static_cast<double>(state.history.size());
    return lambda * mean;
  }
  return *std::max_element(state.history.begin(), state.history.end());
}

/**
 * Refills the queue up to tau_p from the top of the pool. Taken nodes
 * become Exploit while the exploit count is below p * tau_p, Explore
 * afterwards. A full queue or an empty pool leaves the queue unchanged.
 */
inline void search(Tree& tree, ParallelQueue& queue, int tau_p, CandidatePool& pool, double p,
                   bool all_exploit = false) {
  if (tau_p < 1) throw InvalidConfig("tau_p must be >= 1");
  int exploit_count = 0;
  for (NodeId id : queue) {
    if (tree.node(id).mode == Mode::Exploit) ++exploit_count;
  }
  if (queue.size() >= static_cast<std::size_t>(tau_p)) return;

  const std::vector<NodeId> taken =
      pool.take_top(static_cast<std::size_t>(tau_p) - queue.size());
  for (NodeId id : taken) {
    Node& n = tree.node(id);
    if (all_exploit || static_cast<double>(exploit_count) < p * static_cast<double>(tau_p)) {
      n.mode = Mode::Exploit;
      ++exploit_count;
    } else {
      n.mode = Mode::Explore;
    }
    queue.push(id);
  }
}

namespace detail {

// Best non-terminated child by confidence, ties to the smaller id.
inline std::optional<NodeId> best_live_child(const Tree& tree, NodeId parent) {
  std::optional<NodeId> best;
  for (NodeId c : tree.children(parent)) {
    const Node& child = tree.node(c);
    if (child.mode == Mode::Terminated) continue;
    if (!best || child.confidence > tree.node(*best).confidence) best = c;
  }
  return best;
}

}  // namespace detail

/**
 * Applies the transition step to every queue entry: the parent always
 * leaves the queue (retiring as Stopped); its best live child is promoted
 * into the queue as Exploit when it clears the threshold matching the
 * parent's mode. Emitted events: Continue (exploit parent, promoted),
 * DeepSeek (explore parent, promoted), EarlyStop (exploit parent, no
 * promotion). An explore parent whose child falls short, or a parent with
 * only terminated children, leaves silently.
 */
inline std::vector<TransitionEvent> transition(Tree& tree, ParallelQueue& queue,
                                               CandidatePool& pool,
                                               const TransitionThresholds& thresholds,
                                               std::uint32_t cycle = 0) {
  std::vector<TransitionEvent> events;
  ParallelQueue next;
  for (NodeId id : queue) {
    Node& parent = tree.node(id);
    const Mode parent_mode = parent.mode;
    parent.mode = Mode::Stopped;

    const std::optional<NodeId> best = detail::best_live_child(tree, id);
    if (!best) continue;  // every child terminated; nothing to hand over

    Node& child = tree.node(*best);
    const double threshold =
        parent_mode == Mode::Exploit ? thresholds.theta_es : thresholds.theta_ds;
    if (child.confidence > threshold) {
      pool.erase(child.id, child.confidence);
      child.mode = Mode::Exploit;
      next.push(child.id);
      events.push_back({cycle,
                        parent_mode == Mode::Explore ? TransitionKind::DeepSeek
                                                     : TransitionKind::Continue,
                        child.id});
    } else if (parent_mode == Mode::Exploit) {
      events.push_back({cycle, TransitionKind::EarlyStop, id});
    }
  }
  queue = std::move(next);
  return events;
}

// Ablated transition: no thresholds, no events. The best live child always
// continues in its parent's slot; nothing is ever early-stopped.
inline void transition_disabled(Tree& tree, ParallelQueue& queue, CandidatePool& pool) {
  ParallelQueue next;
  for (NodeId id : queue) {
    Node& parent = tree.node(id);
    parent.mode = Mode::Stopped;
    const std::optional<NodeId> best = detail::best_live_child(tree, id);
    if (!best) continue;
    Node& child = tree.node(*best);
    pool.erase(child.id, child.confidence);
    child.mode = Mode::Exploit;
    next.push(child.id);
  }
  queue = std::move(next);
}

/**
 * Termination and pool intake for freshly partitioned children. A child
 * terminates when the backend says so, or when it hits the depth or token
 * limits; it then gets its reward (backend terminal_reward, or 0.0 when the
 * engine forced the cut) and bumps state.t. Everything else joins the pool.
 * Finally each expanded parent's confidence is appended to state.history.
 *
 * Generated-token counts are measured against the root prompt recorded in
 * the tree. Returns one TerminatedEvent per termination, path_index
 * already assigned.
 */
inline std::vector<TerminatedEvent> reward_and_collect(Tree& tree,
                                                       const std::vector<NewChild>& children,
                                                       const ParallelQueue& expanded,
                                                       CandidatePool& pool,
                                                       ThresholdState& state,
                                                       const Config& config,
                                                       std::uint32_t cycle = 0) {
  std::vector<TerminatedEvent> events;
  const std::size_t prompt_len = tree.node(0).seq.size();
  for (const NewChild& nc : children) {
    Node& child = tree.node(nc.id);
    const bool depth_cut = child.depth >= static_cast<std::uint32_t>(config.depth_max);
    const bool token_cut = child.seq.size() >= static_cast<std::size_t>(config.max_tokens);
    if (nc.backend_terminated && !nc.terminal_reward) {
      throw ProtocolViolation("terminated child is missing its terminal reward");
    }
    if (nc.backend_terminated || depth_cut || token_cut) {
      child.mode = Mode::Terminated;
      child.reward = nc.terminal_reward.value_or(0.0);
      state.t += 1;
      TerminatedEvent ev;
      ev.cycle = cycle;
      ev.node = child.id;
      ev.parent = child.parent;
      ev.reward = *child.reward;
      ev.path_tokens = static_cast<std::uint32_t>(child.seq.size() - prompt_len);
      ev.path_index = static_cast<std::uint32_t>(state.t);
      events.push_back(ev);
    } else {
      pool.insert(child.id, child.confidence);
    }
  }
  for (NodeId id : expanded) {
    state.history.push_back(tree.node(id).confidence);
  }
  return events;
}

/**
 * Full search run. The prompt seeds the root; for the synthetic backend it
 * must be the environment's own prompt. Backend failures abort with the
 * partial trace and stop_reason = BackendFailure.
 */
inline RunOutput run(const Config& config, ExpansionBackend& backend, MemoryModel memory,
                     const TokenSeq& prompt, const Toggles& toggles = {},
                     std::string algorithm = "dpts") {
  config.validate();
  if (memory.o_max < memory.o_init) throw InvalidConfig("o_max must be >= o_init");

  RunOutput out;
  out.trace.algorithm = std::move(algorithm);
  out.trace.seed = config.seed;
  out.trace.config = config;

  Tree tree;
  CandidatePool pool;
  ParallelQueue queue;
  ThresholdState state;
  tree.create_root(prompt, config, pool);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed_seconds = [&start] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  std::uint64_t expansions = 0;
  std::uint32_t cycle = 0;
  int last_tau = -1;

  while (true) {
    if (expansions >= config.budget.max_expansions) {
      out.result.stop_reason = StopReason::BudgetExhausted;
      break;
    }
    if (elapsed_seconds() >= config.budget.max_wall_seconds) {
      out.result.stop_reason = StopReason::WallClock;
      break;
    }
    if (queue.empty() && pool.empty()) {
      out.result.stop_reason = StopReason::PoolDrained;
      break;
    }
    ++cycle;

    int tau_p = toggles.adaptive_parallelism ? compute_queue_size(memory, config.parallel_cap) : 1;
    const std::uint64_t remaining = config.budget.max_expansions - expansions;
    if (remaining < static_cast<std::uint64_t>(tau_p)) tau_p = static_cast<int>(remaining);
    if (tau_p != last_tau) {
      out.trace.events.push_back(QueueResizedEvent{cycle, static_cast<std::uint32_t>(tau_p)});
      last_tau = tau_p;
    }

    // If the adaptive size shrank below the carried-over queue, demote the
    // weakest entries back to the pool so the cap holds.
    while (queue.size() > static_cast<std::size_t>(tau_p)) {
      std::size_t drop = 0;
      for (std::size_t i = 1; i < queue.size(); ++i) {
        const Node& a = tree.node(queue[i]);
        const Node& b = tree.node(queue[drop]);
        if (a.confidence < b.confidence ||
            (a.confidence == b.confidence && a.id > b.id)) {
          drop = i;
        }
      }
      Node& demoted = tree.node(queue[drop]);
      demoted.mode = Mode::Candidate;
      pool.insert(demoted.id, demoted.confidence);
      queue.entries().erase(queue.entries().begin() + static_cast<std::ptrdiff_t>(drop));
    }

    search(tree, queue, tau_p, pool, config.p, !toggles.search_mechanism);
    if (queue.empty()) {
      out.result.stop_reason = StopReason::PoolDrained;
      break;
    }

    TransitionThresholds thresholds{compute_threshold(state, config.lambda_es, config.t_star),
                                    compute_threshold(state, config.lambda_ds, config.t_star)};

    BatchInput batch = assemble_batch(tree, queue, config.pad_token);
    BatchOutput batch_out;
    try {
      batch_out = backend.expand(batch, config.width, config.mini_step);
    } catch (const Error& e) {
      out.result.stop_reason = StopReason::BackendFailure;
      out.result.error = e.what();
      break;
    }
    const std::vector<NewChild> children = partition_outputs(tree, batch_out, queue, config.width);

    for (std::size_t r = 0; r < queue.size(); ++r) {
      const Node& n = tree.node(queue[r]);
      std::uint32_t new_tokens = 0;
      for (const ChildOutput& c : batch_out.rows[r]) {
        new_tokens += static_cast<std::uint32_t>(c.tokens.size());
      }
      out.trace.events.push_back(
          ExpandedEvent{cycle, n.id, n.parent, n.mode, n.confidence, new_tokens});
    }
    expansions += queue.size();

    const std::vector<TerminatedEvent> terminated =
        reward_and_collect(tree, children, queue, pool, state, config, cycle);
    for (const TerminatedEvent& ev : terminated) {
      out.trace.events.push_back(ev);
      out.result.terminated_paths.push_back({ev.node, ev.reward, ev.path_tokens});
    }

    if (toggles.transition_mechanism) {
      for (const TransitionEvent& ev : transition(tree, queue, pool, thresholds, cycle)) {
        out.trace.events.push_back(ev);
      }
    } else {
      transition_disabled(tree, queue, pool);
    }

    const std::size_t batch_cells = batch.rows() * batch.kv_cols();
    const std::size_t live = tree.live_cells();
    evict_caches(tree);
    memory.o_peak = std::max(
        memory.o_init, static_cast<double>(batch_cells + live) * memory.cell_cost);
  }

  out.result.cycles = cycle;
  for (std::size_t i = 0; i < out.result.terminated_paths.size(); ++i) {
    const TerminatedPath& tp = out.result.terminated_paths[i];
    if (!out.result.best_reward || tp.reward > *out.result.best_reward) {
      out.result.best_reward = tp.reward;
      out.result.best = tp.node;
    }
  }
  return out;
}

}  // namespace dpts
