#pragma once

/**
 * Command implementations behind the CLI binary. Each command is an
 * ordinary function over streams and returns the process exit code:
 * 0 success, 2 configuration/input error, 3 backend error. The binary in
 * tools/ only parses arguments and dispatches here, so tests drive the
 * exact same code paths without spawning processes.
 */

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dpts/backend.hpp"
#include "dpts/bench.hpp"
#include "dpts/config_file.hpp"
#include "dpts/errors.hpp"
#include "dpts/http_backend.hpp"
#include "dpts/metrics.hpp"
#include "dpts/scheduler.hpp"
#include "dpts/trace.hpp"

namespace dpts::cli {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

// Runs one search with the configured backend; prints the outcome and
// optionally writes the trace.
inline int cmd_run(const CommonArgs& args, const std::optional<std::string>& trace_path,
                   std::ostream& out, std::ostream& err) {
  cfg::CliConfig cli;
  try {
    cli = cfg::load(args.config_path, args.overrides);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }

  RunOutput ro;
  try {
    if (cli.backend_kind == cfg::BackendKind::Synthetic) {
      SyntheticEnv env(cli.env, cli.engine.pad_token, cli.engine.cache_dim);
      ro = run(cli.engine, env, cli.memory, env.prompt());
    } else {
      HttpBackend backend(cli.http, cli.engine.cache_dim, cli.engine.pad_token);
      ro = run(cli.engine, backend, cli.memory, cli.prompt);
    }
  } catch (const Error& e) {
    err << "run error: " << e.what() << "\n";
    return 3;
  }

  if (ro.result.stop_reason == StopReason::BackendFailure) {
    err << "backend error: " << ro.result.error.value_or("unknown") << "\n";
    return 3;
  }

  const metrics::MetricsSummary summary = metrics::summarize(ro.trace);
  out << "stop_reason " << to_string(ro.result.stop_reason) << "\n";
  out << "cycles " << ro.result.cycles << "\n";
  out << "expansions " << summary.total_expansions << "\n";
  out << "total_tokens " << summary.total_tokens << "\n";
  out << "terminated_paths " << ro.result.terminated_paths.size() << "\n";
  if (ro.result.best_reward) {
    out << "best_reward " << metrics::format_double(*ro.result.best_reward) << "\n";
    out << "best_node " << *ro.result.best << "\n";
  } else {
    out << "best_reward none\n";
  }

  if (trace_path) {
    try {
      metrics::export_trace(ro.trace, *trace_path);
      out << "trace " << *trace_path << "\n";
    } catch (const Error& e) {
      err << "trace write error: " << e.what() << "\n";
      return 2;
    }
  }
  return 0;
}

// Runs the configured benchmark grid and appends rows to the summary CSV.
inline int cmd_bench(const CommonArgs& args, const std::optional<std::string>& out_path,
                     std::optional<int> workers, std::ostream& out, std::ostream& err) {
  cfg::CliConfig cli;
  try {
    cli = cfg::load(args.config_path, args.overrides);
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  }
  if (!cli.bench_section_present) {
    err << "config error: [bench] section is required for bench\n";
    return 2;
  }

  std::vector<metrics::SummaryRow> rows;
  try {
    rows = bench::run_bench(cli, workers.value_or(0));
  } catch (const Error& e) {
    err << "bench error: " << e.what() << "\n";
    return 3;
  }

  const std::string path = out_path.value_or("bench.csv");
  try {
    metrics::export_summary(rows, path, /*append=*/true);
  } catch (const Error& e) {
    err << "output error: " << e.what() << "\n";
    return 2;
  }

  std::size_t failures = 0;
  for (const metrics::SummaryRow& row : rows) {
    if (row.failed) {
      ++failures;
      err << "row failed: " << row.algorithm << " seed " << row.seed << ": " << row.error
          << "\n";
    }
  }
  out << "rows " << rows.size() << "\n";
  out << "failures " << failures << "\n";
  out << "out " << path << "\n";
  return (!rows.empty() && failures == rows.size()) ? 3 : 0;
}

namespace detail {

struct TraceNodeInfo {
  std::optional<NodeId> parent;
  double confidence = 0.0;
  std::optional<Mode> expanded_mode;
  std::optional<double> reward;
  std::optional<std::uint32_t> path_index;
};

inline void print_tree(std::ostream& out, NodeId id,
                       const std::map<NodeId, TraceNodeInfo>& nodes,
                       const std::map<NodeId, std::vector<NodeId>>& children, int indent) {
  const TraceNodeInfo& info = nodes.at(id);
  out << std::string(static_cast<std::size_t>(indent) * 2, ' ') << "#" << id;
  out << " conf=" << metrics::format_double(info.confidence);
  if (info.reward) {
    out << " reward=" << metrics::format_double(*info.reward) << " path_index="
        << *info.path_index;
  } else if (info.expanded_mode) {
    out << " " << to_string(*info.expanded_mode);
  }
  out << "\n";
  auto it = children.find(id);
  if (it == children.end()) return;
  for (NodeId c : it->second) print_tree(out, c, nodes, children, indent + 1);
}

}  // namespace detail

// Prints a per-cycle summary and the indented search tree of a trace file.
inline int cmd_trace(const std::string& trace_path, std::ostream& out, std::ostream& err) {
  RunTrace trace;
  try {
    trace = metrics::load_trace(trace_path);
  } catch (const Error& e) {
    err << "trace error: " << e.what() << "\n";
    return 2;
  }

  struct CycleStats {
    std::uint32_t tau_p = 0;
    std::uint32_t expanded = 0, exploit = 0, explore = 0;
    std::uint32_t terminated = 0, es = 0, ds = 0, cont = 0;
  };
  std::map<std::uint32_t, CycleStats> cycles;
  std::map<NodeId, detail::TraceNodeInfo> nodes;
  std::map<NodeId, std::vector<NodeId>> children;

  std::uint32_t tau = 0;
  for (const TraceEvent& ev : trace.events) {
    if (const auto* q = std::get_if<QueueResizedEvent>(&ev)) {
      tau = q->tau_p;
      cycles[q->cycle].tau_p = tau;
    } else if (const auto* e = std::get_if<ExpandedEvent>(&ev)) {
      CycleStats& cs = cycles[e->cycle];
      if (cs.tau_p == 0) cs.tau_p = tau;
      ++cs.expanded;
      if (e->mode == Mode::Explore) ++cs.explore; else ++cs.exploit;
      detail::TraceNodeInfo& info = nodes[e->node];
      info.parent = e->parent;
      info.confidence = e->confidence;
      info.expanded_mode = e->mode;
      if (e->parent && !nodes.count(*e->parent)) nodes[*e->parent] = {};
      if (e->parent) {
        auto& sibs = children[*e->parent];
        if (std::find(sibs.begin(), sibs.end(), e->node) == sibs.end()) {
          sibs.push_back(e->node);
        }
      }
    } else if (const auto* t = std::get_if<TerminatedEvent>(&ev)) {
      CycleStats& cs = cycles[t->cycle];
      if (cs.tau_p == 0) cs.tau_p = tau;
      ++cs.terminated;
      detail::TraceNodeInfo& info = nodes[t->node];
      info.parent = t->parent;
      info.reward = t->reward;
      info.path_index = t->path_index;
      if (t->parent && !nodes.count(*t->parent)) nodes[*t->parent] = {};
      if (t->parent) {
        auto& sibs = children[*t->parent];
        if (std::find(sibs.begin(), sibs.end(), t->node) == sibs.end()) {
          sibs.push_back(t->node);
        }
      }
    } else if (const auto* tr = std::get_if<TransitionEvent>(&ev)) {
      CycleStats& cs = cycles[tr->cycle];
      if (cs.tau_p == 0) cs.tau_p = tau;
      if (tr->kind == TransitionKind::EarlyStop) ++cs.es;
      else if (tr->kind == TransitionKind::DeepSeek) ++cs.ds;
      else ++cs.cont;
    }
  }

  out << "algorithm " << trace.algorithm << ", seed " << trace.seed << ", events "
      << trace.events.size() << "\n";
  out << std::left << std::setw(7) << "cycle" << std::setw(7) << "tau_p" << std::setw(10)
      << "expanded" << std::setw(9) << "exploit" << std::setw(9) << "explore" << std::setw(11)
      << "terminated" << std::setw(5) << "es" << std::setw(5) << "ds" << std::setw(9)
      << "continue" << "\n";
  for (const auto& [cycle, cs] : cycles) {
    out << std::left << std::setw(7) << cycle << std::setw(7) << cs.tau_p << std::setw(10)
        << cs.expanded << std::setw(9) << cs.exploit << std::setw(9) << cs.explore
        << std::setw(11) << cs.terminated << std::setw(5) << cs.es << std::setw(5) << cs.ds
        << std::setw(9) << cs.cont << "\n";
  }

  if (nodes.count(0)) {
    for (auto& [id, kids] : children) std::sort(kids.begin(), kids.end());
    out << "tree:\n";
    detail::print_tree(out, 0, nodes, children, 1);
  }
  return 0;
}

}  // namespace dpts::cli
