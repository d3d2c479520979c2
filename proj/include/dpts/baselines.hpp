#pragma once

/**
 * Baseline search algorithms over the same backend, streamline and trace
 * schema as the main engine, so every metric is computable for every
 * algorithm and rewards are directly comparable.
 *
 *   mcts_run       classical UCT: select (unvisited first, then the UCT
 *                  score), expand through the backend, roll out along
 *                  max-confidence children to termination, backpropagate.
 *                  Fully-explored subtrees are marked exhausted so finite
 *                  environments terminate without a budget.
 *   best_of_n_run  n seeded rollouts sampling children proportionally to
 *                  confidence; the tree is shared so re-visited prefixes
 *                  are not re-expanded.
 *   beam_run       level-synchronous expansion of the whole beam in one
 *                  batch, keeping the top beam_k children by confidence.
 *   exhaustive_run wraps the brute-force oracle and materializes its best
 *                  path so the result carries real node ids and a trace.
 *
 * Every expansion (one backend row) counts against the same budget, which
 * is what makes "matched expansion budget" comparisons meaningful.
 */

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dpts/backend.hpp"
#include "dpts/core.hpp"
#include "dpts/errors.hpp"
#include "dpts/scheduler.hpp"
#include "dpts/streamline.hpp"
#include "dpts/trace.hpp"

namespace dpts {

enum class Algorithm { Dpts, Mcts, BestOfN, Beam, Exhaustive };

inline const char* to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Dpts: return "dpts";
    case Algorithm::Mcts: return "mcts";
    case Algorithm::BestOfN: return "best_of_n";
    case Algorithm::Beam: return "beam";
    case Algorithm::Exhaustive: return "exhaustive";
  }
  return "?";
}

struct BaselineConfig {
  Algorithm algorithm = Algorithm::Mcts;
  int n = 64;                        // rollouts for best-of-n
  int beam_k = 16;                   // beam width
  double uct_c = 1.4142135623730951; // sqrt(2)
  double time_limit_seconds = 120.0;
  // Adaptive parallel generation for mcts: select up to the memory-driven
  // queue size of distinct leaves per cycle and expand them as one batch.
  bool adaptive_parallel = false;
  MemoryModel memory;

  void validate() const {
    if (n < 1) throw InvalidConfig("best-of-n sample count must be >= 1");
    if (beam_k < 1) throw InvalidConfig("beam width must be >= 1");
    if (uct_c < 0.0) throw InvalidConfig("uct_c must be >= 0");
    if (time_limit_seconds <= 0.0) throw InvalidConfig("time limit must be positive");
  }
};

namespace detail {

// Shared run state for the baselines: tree, trace, budget accounting and
// the expand-one-node / expand-a-level primitives.
class BaselineRun {
public:
  BaselineRun(const Config& config, ExpansionBackend& backend, const TokenSeq& prompt,
              double wall_limit, std::string algorithm)
      : config_(config), backend_(backend), wall_limit_(wall_limit),
        start_(std::chrono::steady_clock::now()) {
    config_.validate();
    out_.trace.algorithm = std::move(algorithm);
    out_.trace.seed = config_.seed;
    out_.trace.config = config_;
    CandidatePool scratch;
    tree_.create_root(prompt, config_, scratch);
  }

  Tree& tree() { return tree_; }
  RunOutput& output() { return out_; }
  std::uint32_t cycle = 0;

  bool budget_left() const { return expansions_ < config_.budget.max_expansions; }

  bool wall_left() const {
    const double e =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    return e < wall_limit_;
  }

  // True when the run should stop; sets the stop reason.
  bool out_of_budget() {
    if (!budget_left()) {
      out_.result.stop_reason = StopReason::BudgetExhausted;
      return true;
    }
    if (!wall_left()) {
      out_.result.stop_reason = StopReason::WallClock;
      return true;
    }
    return false;
  }

  std::uint64_t remaining_budget() const { return config_.budget.max_expansions - expansions_; }

  /**
   * Expands a list of nodes as one batch; emits expanded events and returns
   * the ids of the created children in (row, child) order. Terminal
   * children get their mode and reward immediately; whether they count as a
   * terminated *path* differs per algorithm: beam records every terminal
   * hypothesis right away (record_terminals), mcts/best-of-n record a path
   * only when a trajectory lands on the terminal node (record_terminal).
   * Returns nullopt on backend failure (stop reason recorded).
   */
  std::optional<std::vector<NodeId>> expand_nodes(const std::vector<NodeId>& nodes,
                                                  bool record_terminals) {
    ParallelQueue queue;
    for (NodeId id : nodes) queue.push(id);
    BatchInput batch = assemble_batch(tree_, queue, config_.pad_token);
    BatchOutput batch_out;
    try {
      batch_out = backend_.expand(batch, config_.width, config_.mini_step);
    } catch (const Error& e) {
      out_.result.stop_reason = StopReason::BackendFailure;
      out_.result.error = e.what();
      return std::nullopt;
    }
    const std::vector<NewChild> children =
        partition_outputs(tree_, batch_out, queue, config_.width);
    expansions_ += nodes.size();

    for (std::size_t r = 0; r < queue.size(); ++r) {
      Node& n = tree_.node(queue[r]);
      std::uint32_t new_tokens = 0;
      for (const ChildOutput& c : batch_out.rows[r]) {
        new_tokens += static_cast<std::uint32_t>(c.tokens.size());
      }
      out_.trace.events.push_back(
          ExpandedEvent{cycle, n.id, n.parent, Mode::Exploit, n.confidence, new_tokens});
      n.mode = Mode::Stopped;
    }

    std::vector<NodeId> ids;
    ids.reserve(children.size());
    for (const NewChild& nc : children) {
      Node& child = tree_.node(nc.id);
      const bool depth_cut = child.depth >= static_cast<std::uint32_t>(config_.depth_max);
      const bool token_cut = child.seq.size() >= static_cast<std::size_t>(config_.max_tokens);
      if (nc.backend_terminated && !nc.terminal_reward) {
        throw ProtocolViolation("terminated child is missing its terminal reward");
      }
      if (nc.backend_terminated || depth_cut || token_cut) {
        child.mode = Mode::Terminated;
        child.reward = nc.terminal_reward.value_or(0.0);
        if (record_terminals) record_terminal(child.id);
      }
      ids.push_back(nc.id);
    }
    return ids;
  }

  std::optional<std::vector<NodeId>> expand_node(NodeId id, bool record_terminals = false) {
    return expand_nodes(std::vector<NodeId>{id}, record_terminals);
  }

  // Marks the arrival of a trajectory at a terminal node; every node yields
  // at most one terminated path no matter how often it is reached.
  void record_terminal(NodeId id) {
    const Node& node = tree_.node(id);
    if (recorded_.size() < tree_.size()) recorded_.resize(tree_.size(), 0);
    if (recorded_[id]) return;
    recorded_[id] = 1;
    TerminatedEvent ev;
    ev.cycle = cycle;
    ev.node = id;
    ev.parent = node.parent;
    ev.reward = *node.reward;
    ev.path_tokens = static_cast<std::uint32_t>(node.seq.size() - tree_.node(0).seq.size());
    ev.path_index = static_cast<std::uint32_t>(out_.result.terminated_paths.size() + 1);
    out_.trace.events.push_back(ev);
    out_.result.terminated_paths.push_back({id, ev.reward, ev.path_tokens});
  }

  RunOutput finish() {
    out_.result.cycles = cycle;
    for (const TerminatedPath& tp : out_.result.terminated_paths) {
      if (!out_.result.best_reward || tp.reward > *out_.result.best_reward) {
        out_.result.best_reward = tp.reward;
        out_.result.best = tp.node;
      }
    }
    return std::move(out_);
  }

private:
  Config config_;
  ExpansionBackend& backend_;
  double wall_limit_;
  std::chrono::steady_clock::time_point start_;
  Tree tree_;
  RunOutput out_;
  std::uint64_t expansions_ = 0;
  std::vector<char> recorded_;
};

inline double effective_wall_limit(const Config& config, const BaselineConfig& baseline) {
  return std::min(baseline.time_limit_seconds, config.budget.max_wall_seconds);
}

}  // namespace detail

/**
 * Monte Carlo tree search with UCT selection
 * (mean value + uct_c * sqrt(ln(parent visits) / visits), unvisited
 * children treated as +inf, ties to the smaller id) and max-confidence
 * rollouts. One iteration = select, expand, roll out from the first
 * unvisited child, backpropagate the terminal reward along the whole path.
 *
 * With adaptive_parallel set, each cycle selects up to the memory-driven
 * queue size of distinct leaves (virtual visits keep the selections apart),
 * expands them as one batch through the streamline and rolls each out.
 * That is the parallelized baseline: same policy, batched generation.
 */
inline RunOutput mcts_run(const Config& config, const BaselineConfig& baseline,
                          ExpansionBackend& backend, const TokenSeq& prompt) {
  baseline.validate();
  detail::BaselineRun run(config, backend, prompt,
                          detail::effective_wall_limit(config, baseline),
                          baseline.adaptive_parallel ? "mcts_ap" : "mcts");
  Tree& tree = run.tree();
  MemoryModel memory = baseline.memory;

  std::vector<std::uint64_t> visits(1, 0);
  std::vector<double> value(1, 0.0);
  std::vector<char> exhausted(1, 0);
  std::map<NodeId, std::uint64_t> virtual_visits;  // within-cycle selection marks
  auto grow = [&] {
    visits.resize(tree.size(), 0);
    value.resize(tree.size(), 0.0);
    exhausted.resize(tree.size(), 0);
  };

  auto is_terminal = [&](NodeId id) { return tree.node(id).mode == Mode::Terminated; };
  auto is_expanded = [&](NodeId id) { return !tree.children(id).empty(); };
  auto seen = [&](NodeId id) {
    const auto it = virtual_visits.find(id);
    return visits[id] + (it == virtual_visits.end() ? 0 : it->second);
  };

  // Exhausted = nothing left to learn below: terminal, or expanded with
  // every child exhausted.
  auto update_exhausted_upward = [&](const std::vector<NodeId>& path) {
    for (std::size_t i = path.size(); i-- > 0;) {
      const NodeId id = path[i];
      if (is_terminal(id)) {
        exhausted[id] = 1;
        continue;
      }
      if (!is_expanded(id)) break;
      bool all = true;
      for (NodeId c : tree.children(id)) {
        if (!exhausted[c]) {
          all = false;
          break;
        }
      }
      if (!all) break;
      exhausted[id] = 1;
    }
  };

  // Within-cycle selections count as zero-reward virtual visits (virtual
  // loss), steering parallel selections apart.
  auto select_child = [&](NodeId parent) -> std::optional<NodeId> {
    std::optional<NodeId> pick;
    double best_score = -1.0;
    for (NodeId c : tree.children(parent)) {
      if (exhausted[c]) continue;
      if (seen(c) == 0) return c;  // unvisited first, ids ascend in order
      const double mean = value[c] / static_cast<double>(seen(c));
      const double explore = baseline.uct_c *
                             std::sqrt(std::log(static_cast<double>(seen(parent))) /
                                       static_cast<double>(seen(c)));
      const double score = mean + explore;
      if (!pick || score > best_score) {
        pick = c;
        best_score = score;
      }
    }
    return pick;
  };

  auto backprop = [&](const std::vector<NodeId>& path, double reward) {
    for (NodeId id : path) {
      visits[id] += 1;
      value[id] += reward;
    }
  };

  // Follows max-confidence children from `r` to a terminal node, expanding
  // on the way; returns false when the run must stop.
  auto rollout = [&](NodeId r, std::vector<NodeId> path) -> bool {
    while (!is_terminal(r)) {
      if (run.out_of_budget()) return false;
      if (!is_expanded(r)) {
        if (!run.expand_node(r)) return false;
        grow();
      }
      NodeId next = tree.children(r).front();
      for (NodeId c : tree.children(r)) {
        if (tree.node(c).confidence > tree.node(next).confidence) next = c;
      }
      r = next;
      path.push_back(r);
    }
    run.record_terminal(r);
    backprop(path, *tree.node(r).reward);
    update_exhausted_upward(path);
    return true;
  };

  while (true) {
    grow();
    if (exhausted[0]) {
      run.output().result.stop_reason = StopReason::PoolDrained;
      break;
    }
    if (run.out_of_budget()) break;
    ++run.cycle;

    std::uint64_t slots = 1;
    if (baseline.adaptive_parallel) {
      slots = static_cast<std::uint64_t>(
          compute_queue_size(memory, config.parallel_cap));
      slots = std::min(slots, run.remaining_budget());
    }

    // Selection: up to `slots` distinct unexpanded leaves. Virtual visits
    // steer later selections away from paths already taken this cycle.
    virtual_visits.clear();
    std::vector<NodeId> to_expand;
    std::vector<std::vector<NodeId>> paths;
    for (std::uint64_t k = 0; k < slots; ++k) {
      if (exhausted[0]) break;
      std::vector<NodeId> path{0};
      NodeId cur = 0;
      bool dead_end = false;
      while (is_expanded(cur) && !is_terminal(cur)) {
        const std::optional<NodeId> next = select_child(cur);
        if (!next) {  // children all exhausted; settle the flag and move on
          update_exhausted_upward(path);
          dead_end = true;
          break;
        }
        cur = *next;
        path.push_back(cur);
      }
      if (dead_end) continue;

      if (is_terminal(cur)) {  // a terminal visit consumes the slot
        run.record_terminal(cur);
        backprop(path, *tree.node(cur).reward);
        update_exhausted_upward(path);
        continue;
      }
      if (std::find(to_expand.begin(), to_expand.end(), cur) != to_expand.end()) {
        break;  // no further distinct leaf reachable this cycle
      }
      to_expand.push_back(cur);
      paths.push_back(path);
      for (NodeId id : path) ++virtual_visits[id];
    }
    if (to_expand.empty()) continue;

    std::size_t batch_chain_cells = 0;
    const std::size_t prompt_len = tree.node(0).seq.size();
    for (NodeId id : to_expand) {
      batch_chain_cells += tree.node(id).seq.size() - prompt_len;
    }
    if (!run.expand_nodes(to_expand, /*record_terminals=*/false)) return run.finish();
    grow();

    // Rollout from the first (unvisited) child of each expanded leaf.
    bool stopped = false;
    for (std::size_t i = 0; i < to_expand.size() && !stopped; ++i) {
      std::vector<NodeId> path = paths[i];
      const NodeId entry = tree.children(to_expand[i]).front();
      path.push_back(entry);
      stopped = !rollout(entry, std::move(path));
    }
    if (stopped) break;

    if (baseline.adaptive_parallel) {
      memory.o_peak = std::max(
          memory.o_init,
          static_cast<double>(batch_chain_cells + tree.live_cells()) * memory.cell_cost);
    }
  }
  return run.finish();
}

/**
 * n independent seeded rollouts; each step samples a child with probability
 * proportional to confidence. Prefixes shared between rollouts are expanded
 * only once.
 */
inline RunOutput best_of_n_run(const Config& config, const BaselineConfig& baseline,
                               ExpansionBackend& backend, const TokenSeq& prompt) {
  baseline.validate();
  detail::BaselineRun run(config, backend, prompt,
                          detail::effective_wall_limit(config, baseline), "best_of_n");
  Tree& tree = run.tree();
  std::mt19937_64 rng(config.seed);
  auto next_unit = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  bool stopped = false;
  for (int i = 0; i < baseline.n && !stopped; ++i) {
    ++run.cycle;
    NodeId cur = 0;
    while (true) {
      if (tree.node(cur).mode == Mode::Terminated) {
        run.record_terminal(cur);
        break;
      }
      if (tree.children(cur).empty()) {
        if (run.out_of_budget()) {
          stopped = true;
          break;
        }
        if (!run.expand_node(cur)) return run.finish();
      }
      const auto& kids = tree.children(cur);
      double total = 0.0;
      for (NodeId c : kids) total += tree.node(c).confidence;
      const double u = next_unit();
      NodeId picked = kids.back();
      if (total > 0.0) {
        double acc = 0.0;
        for (NodeId c : kids) {
          acc += tree.node(c).confidence / total;
          if (u < acc) {
            picked = c;
            break;
          }
        }
      } else {
        picked = kids[static_cast<std::size_t>(u * static_cast<double>(kids.size()))];
      }
      cur = picked;
    }
  }
  return run.finish();
}

/**
 * Level-synchronous beam search: the whole beam expands as one batch, all
 * children compete, the top beam_k by confidence (ties by id) survive.
 * Terminated children leave the beam and are recorded.
 */
inline RunOutput beam_run(const Config& config, const BaselineConfig& baseline,
                          ExpansionBackend& backend, const TokenSeq& prompt) {
  baseline.validate();
  detail::BaselineRun run(config, backend, prompt,
                          detail::effective_wall_limit(config, baseline), "beam");
  Tree& tree = run.tree();

  std::vector<NodeId> beam{0};
  while (!beam.empty()) {
    if (run.out_of_budget()) break;
    if (beam.size() > run.remaining_budget()) {
      beam.resize(static_cast<std::size_t>(run.remaining_budget()));
    }
    ++run.cycle;
    const std::optional<std::vector<NodeId>> children =
        run.expand_nodes(beam, /*record_terminals=*/true);
    if (!children) return run.finish();

    std::vector<NodeId> live;
    for (NodeId c : *children) {
      if (tree.node(c).mode != Mode::Terminated) live.push_back(c);
    }
    std::sort(live.begin(), live.end(), [&](NodeId a, NodeId b) {
      const double ca = tree.node(a).confidence;
      const double cb = tree.node(b).confidence;
      if (ca != cb) return ca > cb;
      return a < b;
    });
    if (live.size() > static_cast<std::size_t>(baseline.beam_k)) {
      for (std::size_t i = static_cast<std::size_t>(baseline.beam_k); i < live.size(); ++i) {
        tree.node(live[i]).mode = Mode::Stopped;  // pruned, never expanded
      }
      live.resize(static_cast<std::size_t>(baseline.beam_k));
    }
    beam = std::move(live);
  }
  if (beam.empty()) run.output().result.stop_reason = StopReason::PoolDrained;
  return run.finish();
}

/**
 * Wraps the brute-force oracle: enumerates the environment, then
 * materializes the optimal path through the normal streamline so the
 * result carries real node ids and the trace schema holds.
 */
inline RunOutput exhaustive_run(const Config& config, SyntheticEnv& env) {
  const BestPath best = brute_force_best(env);
  detail::BaselineRun run(config, env, env.prompt(),
                          config.budget.max_wall_seconds, "exhaustive");
  Tree& tree = run.tree();

  NodeId cur = 0;
  for (int step : best.path) {
    ++run.cycle;
    const std::optional<std::vector<NodeId>> children = run.expand_node(cur);
    if (!children) return run.finish();
    cur = (*children)[static_cast<std::size_t>(step)];
  }
  if (tree.node(cur).mode == Mode::Terminated) run.record_terminal(cur);
  RunOutput out = run.finish();
  out.result.stop_reason = StopReason::PoolDrained;
  return out;
}

}  // namespace dpts
