#pragma once

/**
 * Diagnostics computed from a RunTrace. Everything here is a pure function
 * of the trace: no access to the tree or the backend, so exported traces
 * can be re-analyzed offline.
 *
 * Definitions:
 *   focus of a cycle    the highest-confidence node expanded in that cycle
 *                       (ties to the smaller id); with one expansion per
 *                       cycle this is just that node
 *   switch              consecutive cycle focuses f, f' where f' is not a
 *                       descendant of f
 *   best leaf           the terminated node with the maximum reward,
 *                       earliest path_index on ties
 *   best path           ancestors-or-self of the best leaf
 *   suboptimal exp.     an expansion of a node off the best path
 *   es/ds ratio         early-stop / deep-seek events per expansion
 */

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dpts/errors.hpp"
#include "dpts/trace.hpp"

namespace dpts::metrics {

struct SwitchCounts {
  std::uint64_t total = 0;
  std::uint64_t best_to_suboptimal = 0;
};

struct WasteStats {
  std::uint64_t total_tokens = 0;
  std::uint64_t best_path_tokens = 0;
  double wasted_token_ratio = 0.0;
  std::uint64_t total_expansions = 0;
  std::uint64_t suboptimal_expansions = 0;
  double suboptimal_expansion_ratio = 0.0;
};

struct BestPathIndices {
  std::uint32_t earliest = 0;
  std::uint32_t shortest = 0;
};

struct TransitionRatios {
  std::uint64_t es_count = 0;
  std::uint64_t ds_count = 0;
  double es_ratio = 0.0;
  double ds_ratio = 0.0;
};

struct MetricsSummary {
  std::uint64_t total_tokens = 0;
  std::uint64_t best_path_tokens = 0;
  double wasted_token_ratio = 0.0;
  std::uint64_t total_expansions = 0;
  std::uint64_t suboptimal_expansions = 0;
  double suboptimal_expansion_ratio = 0.0;
  std::uint64_t total_switches = 0;
  std::uint64_t best_to_suboptimal_switches = 0;
  std::optional<std::uint32_t> earliest_best_index;
  std::optional<std::uint32_t> shortest_best_index;
  std::uint64_t es_count = 0;
  std::uint64_t ds_count = 0;
  double es_ratio = 0.0;
  double ds_ratio = 0.0;
  // Per cycle with a non-empty queue: (exploit fraction, explore fraction).
  std::vector<std::pair<double, double>> exploit_explore_proportion_per_cycle;
};

namespace detail {

// Parent links and event slices pulled out of a trace once.
struct TraceIndex {
  std::vector<const ExpandedEvent*> expansions;    // in event order
  std::vector<const TerminatedEvent*> terminated;  // in event order
  std::uint64_t es_events = 0;
  std::uint64_t ds_events = 0;
  std::unordered_map<NodeId, NodeId> parent;  // child -> parent (root absent)

  explicit TraceIndex(const RunTrace& trace) {
    for (const TraceEvent& ev : trace.events) {
      if (const auto* e = std::get_if<ExpandedEvent>(&ev)) {
        expansions.push_back(e);
        if (e->parent) parent.emplace(e->node, *e->parent);
      } else if (const auto* t = std::get_if<TerminatedEvent>(&ev)) {
        terminated.push_back(t);
        if (t->parent) parent.emplace(t->node, *t->parent);
      } else if (const auto* tr = std::get_if<TransitionEvent>(&ev)) {
        if (tr->kind == TransitionKind::EarlyStop) ++es_events;
        if (tr->kind == TransitionKind::DeepSeek) ++ds_events;
      }
    }
  }

  const TerminatedEvent* best_leaf() const {
    const TerminatedEvent* best = nullptr;
    for (const TerminatedEvent* t : terminated) {
      if (!best || t->reward > best->reward) best = t;  // earliest index wins ties
    }
    return best;
  }

  // Ancestors-or-self of the best leaf; empty when nothing terminated.
  std::unordered_set<NodeId> best_path_set() const {
    std::unordered_set<NodeId> out;
    const TerminatedEvent* best = best_leaf();
    if (!best) return out;
    NodeId cur = best->node;
    out.insert(cur);
    auto it = parent.find(cur);
    while (it != parent.end()) {
      cur = it->second;
      out.insert(cur);
      it = parent.find(cur);
    }
    return out;
  }

  bool is_descendant_of(NodeId node, NodeId anc) const {
    auto it = parent.find(node);
    while (it != parent.end()) {
      if (it->second == anc) return true;
      it = parent.find(it->second);
    }
    return false;
  }

  // One focus node per cycle that expanded anything.
  std::vector<const ExpandedEvent*> cycle_focuses() const {
    std::vector<const ExpandedEvent*> out;
    for (const ExpandedEvent* e : expansions) {
      if (!out.empty() && out.back()->cycle == e->cycle) {
        const ExpandedEvent* f = out.back();
        if (e->confidence > f->confidence ||
            (e->confidence == f->confidence && e->node < f->node)) {
          out.back() = e;
        }
      } else {
        out.push_back(e);
      }
    }
    return out;
  }
};

}  // namespace detail

inline SwitchCounts switch_counts(const RunTrace& trace) {
  const detail::TraceIndex idx(trace);
  if (idx.expansions.empty()) throw EmptyTrace("trace has no expansions");

  const std::unordered_set<NodeId> best_path = idx.best_path_set();
  const std::vector<const ExpandedEvent*> focuses = idx.cycle_focuses();

  SwitchCounts out;
  for (std::size_t i = 1; i < focuses.size(); ++i) {
    const NodeId prev = focuses[i - 1]->node;
    const NodeId next = focuses[i]->node;
    if (idx.is_descendant_of(next, prev)) continue;
    ++out.total;
    if (best_path.count(prev) && !best_path.count(next)) ++out.best_to_suboptimal;
  }
  return out;
}

inline WasteStats waste_stats(const RunTrace& trace) {
  const detail::TraceIndex idx(trace);
  if (idx.terminated.empty()) throw NoBestPath("no terminated path in trace");

  const std::unordered_set<NodeId> best_path = idx.best_path_set();
  WasteStats out;
  for (const ExpandedEvent* e : idx.expansions) {
    out.total_tokens += e->new_tokens;
    ++out.total_expansions;
    if (best_path.count(e->node)) {
      out.best_path_tokens += e->new_tokens;
    } else {
      ++out.suboptimal_expansions;
    }
  }
  if (out.total_tokens > 0) {
    out.wasted_token_ratio =
        1.0 - static_cast<double>(out.best_path_tokens) / static_cast<double>(out.total_tokens);
  }
  if (out.total_expansions > 0) {
    out.suboptimal_expansion_ratio = static_cast<double>(out.suboptimal_expansions) /
                                     static_cast<double>(out.total_expansions);
  }
  return out;
}

inline BestPathIndices best_path_indices(const RunTrace& trace) {
  const detail::TraceIndex idx(trace);
  if (idx.terminated.empty()) throw NoBestPath("no terminated path in trace");

  double best_reward = idx.best_leaf()->reward;
  BestPathIndices out;
  std::uint32_t shortest_tokens = 0;
  bool have = false;
  for (const TerminatedEvent* t : idx.terminated) {
    if (t->reward != best_reward) continue;
    if (!have) {
      out.earliest = t->path_index;
      out.shortest = t->path_index;
      shortest_tokens = t->path_tokens;
      have = true;
      continue;
    }
    if (t->path_tokens < shortest_tokens) {  // earlier index wins token ties
      shortest_tokens = t->path_tokens;
      out.shortest = t->path_index;
    }
  }
  return out;
}

inline TransitionRatios transition_ratios(const RunTrace& trace) {
  const detail::TraceIndex idx(trace);
  TransitionRatios out;
  out.es_count = idx.es_events;
  out.ds_count = idx.ds_events;
  if (!idx.expansions.empty()) {
    const double n = static_cast<double>(idx.expansions.size());
    out.es_ratio = static_cast<double>(out.es_count) / n;
    out.ds_ratio = static_cast<double>(out.ds_count) / n;
  }
  return out;
}

// Lenient roll-up of all metrics for one run; undefined pieces (no
// termination, no expansions) come back zero/empty instead of throwing.
inline MetricsSummary summarize(const RunTrace& trace) {
  MetricsSummary s;
  const detail::TraceIndex idx(trace);
  s.total_expansions = idx.expansions.size();

  const TransitionRatios tr = transition_ratios(trace);
  s.es_count = tr.es_count;
  s.ds_count = tr.ds_count;
  s.es_ratio = tr.es_ratio;
  s.ds_ratio = tr.ds_ratio;

  if (!idx.expansions.empty()) {
    const SwitchCounts sw = switch_counts(trace);
    s.total_switches = sw.total;
    s.best_to_suboptimal_switches = sw.best_to_suboptimal;
  }
  if (!idx.terminated.empty()) {
    const WasteStats ws = waste_stats(trace);
    s.total_tokens = ws.total_tokens;
    s.best_path_tokens = ws.best_path_tokens;
    s.wasted_token_ratio = ws.wasted_token_ratio;
    s.suboptimal_expansions = ws.suboptimal_expansions;
    s.suboptimal_expansion_ratio = ws.suboptimal_expansion_ratio;
    const BestPathIndices bp = best_path_indices(trace);
    s.earliest_best_index = bp.earliest;
    s.shortest_best_index = bp.shortest;
  } else {
    for (const ExpandedEvent* e : idx.expansions) s.total_tokens += e->new_tokens;
    s.suboptimal_expansions = s.total_expansions;
    s.suboptimal_expansion_ratio = s.total_expansions > 0 ? 1.0 : 0.0;
    s.wasted_token_ratio = s.total_tokens > 0 ? 1.0 : 0.0;
  }

  // Exploit/explore composition per expanding cycle.
  std::uint32_t cur_cycle = 0;
  std::uint64_t exploit = 0, explore = 0;
  bool open = false;
  auto flush = [&] {
    if (!open) return;
    const double n = static_cast<double>(exploit + explore);
    s.exploit_explore_proportion_per_cycle.emplace_back(
        static_cast<double>(exploit) / n, static_cast<double>(explore) / n);
    exploit = explore = 0;
  };
  for (const ExpandedEvent* e : idx.expansions) {
    if (open && e->cycle != cur_cycle) flush();
    cur_cycle = e->cycle;
    open = true;
    if (e->mode == Mode::Explore) ++explore; else ++exploit;
  }
  flush();
  return s;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

inline void export_trace(const RunTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write trace file: " + path);
  out << trace_to_json(trace).dump(2) << '\n';
  if (!out) throw IoError("failed writing trace file: " + path);
}

inline RunTrace load_trace(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read trace file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed trace json: ") + e.what());
  }
  return trace_from_json(j);
}

// One CSV row of the benchmark output.
struct SummaryRow {
  std::string algorithm;
  std::uint64_t seed = 0;
  std::optional<double> best_reward;
  MetricsSummary metrics;
  double wall_ms = 0.0;
  bool failed = false;   // metrics cells stay empty in the CSV
  std::string error;     // diagnostic only, not exported
};

inline constexpr const char* kSummaryCsvHeader =
    "algorithm,seed,best_reward,total_expansions,total_tokens,best_path_tokens,"
    "waste_ratio,subopt_expansion_ratio,switches,best_to_subopt_switches,"
    "earliest_best_index,shortest_best_index,es_ratio,ds_ratio,wall_ms";

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline std::string summary_row_csv(const SummaryRow& row) {
  std::string s = row.algorithm + "," + std::to_string(row.seed) + ",";
  if (row.failed) {
    for (int i = 0; i < 12; ++i) s += ",";
    s += format_double(row.wall_ms);
    return s;
  }
  const MetricsSummary& m = row.metrics;
  s += row.best_reward ? format_double(*row.best_reward) : "";
  s += "," + std::to_string(m.total_expansions);
  s += "," + std::to_string(m.total_tokens);
  s += "," + std::to_string(m.best_path_tokens);
  s += "," + format_double(m.wasted_token_ratio);
  s += "," + format_double(m.suboptimal_expansion_ratio);
  s += "," + std::to_string(m.total_switches);
  s += "," + std::to_string(m.best_to_suboptimal_switches);
  s += ",";
  s += m.earliest_best_index ? std::to_string(*m.earliest_best_index) : "";
  s += ",";
  s += m.shortest_best_index ? std::to_string(*m.shortest_best_index) : "";
  s += "," + format_double(m.es_ratio);
  s += "," + format_double(m.ds_ratio);
  s += "," + format_double(row.wall_ms);
  return s;
}

// Writes (or appends) summary rows. The header goes in only when the file
// is created fresh.
inline void export_summary(const std::vector<SummaryRow>& rows, const std::string& path,
                           bool append = false) {
  bool need_header = true;
  if (append) {
    std::ifstream probe(path, std::ios::binary);
    if (probe && probe.peek() != std::ifstream::traits_type::eof()) need_header = false;
  }
  std::ofstream out(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!out) throw IoError("cannot write summary file: " + path);
  if (need_header) out << kSummaryCsvHeader << '\n';
  for (const SummaryRow& row : rows) out << summary_row_csv(row) << '\n';
  if (!out) throw IoError("failed writing summary file: " + path);
}

}  // namespace dpts::metrics
