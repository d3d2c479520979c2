#pragma once

/**
 * Append-only run trace. Every search algorithm in this project emits the
 * same four event kinds, so every metric is computable for every algorithm:
 *
 *   expanded      one per queue row per cycle (node, its mode, tokens added)
 *   terminated    one per path termination, with the 1-based path_index
 *   transition    early-stop / deep-seek / continue decisions
 *   queue_resized adaptive queue size changes
 *
 * Terminated events carry the parent id as well: terminated leaves are never
 * expanded, and without the link metrics could not reconstruct the best
 * path's ancestry from the trace alone.
 *
 * Serialization is nlohmann::json with sorted object keys, so a fixed trace
 * always produces identical bytes.
 */

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "dpts/core.hpp"
#include "dpts/errors.hpp"

namespace dpts {

enum class TransitionKind { EarlyStop, DeepSeek, Continue };

enum class StopReason { BudgetExhausted, PoolDrained, WallClock, BackendFailure };

struct ExpandedEvent {
  std::uint32_t cycle = 0;
  NodeId node = 0;
  std::optional<NodeId> parent;
  Mode mode = Mode::Exploit;
  double confidence = 0.0;
  std::uint32_t new_tokens = 0;  // tokens generated by this expansion (all children)
};

struct TransitionEvent {
  std::uint32_t cycle = 0;
  TransitionKind kind = TransitionKind::Continue;
  NodeId node = 0;  // early stop: the stopped parent; deep seek / continue: the promoted child
};

struct TerminatedEvent {
  std::uint32_t cycle = 0;
  NodeId node = 0;
  std::optional<NodeId> parent;
  double reward = 0.0;
  std::uint32_t path_tokens = 0;  // generated tokens on the path (prompt excluded)
  std::uint32_t path_index = 0;   // 1-based order of termination within the run
};

struct QueueResizedEvent {
  std::uint32_t cycle = 0;
  std::uint32_t tau_p = 0;
};

using TraceEvent =
    std::variant<ExpandedEvent, TransitionEvent, TerminatedEvent, QueueResizedEvent>;

struct RunTrace {
  std::string algorithm = "dpts";
  std::uint64_t seed = 0;
  Config config;
  std::vector<TraceEvent> events;
};

// ---------------------------------------------------------------------------
// String mappings
// ---------------------------------------------------------------------------

inline const char* to_string(Mode m) {
  switch (m) {
    case Mode::Candidate: return "candidate";
    case Mode::Exploit: return "exploit";
    case Mode::Explore: return "explore";
    case Mode::Stopped: return "stopped";
    case Mode::Terminated: return "terminated";
  }
  return "?";
}

inline Mode mode_from_string(const std::string& s) {
  if (s == "candidate") return Mode::Candidate;
  if (s == "exploit") return Mode::Exploit;
  if (s == "explore") return Mode::Explore;
  if (s == "stopped") return Mode::Stopped;
  if (s == "terminated") return Mode::Terminated;
  throw InvalidInput("unknown mode: " + s);
}

inline const char* to_string(TransitionKind k) {
  switch (k) {
    case TransitionKind::EarlyStop: return "early_stop";
    case TransitionKind::DeepSeek: return "deep_seek";
    case TransitionKind::Continue: return "continue";
  }
  return "?";
}

inline TransitionKind transition_kind_from_string(const std::string& s) {
  if (s == "early_stop") return TransitionKind::EarlyStop;
  if (s == "deep_seek") return TransitionKind::DeepSeek;
  if (s == "continue") return TransitionKind::Continue;
  throw InvalidInput("unknown transition kind: " + s);
}

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::BudgetExhausted: return "budget_exhausted";
    case StopReason::PoolDrained: return "pool_drained";
    case StopReason::WallClock: return "wall_clock";
    case StopReason::BackendFailure: return "backend_failure";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json config_to_json(const Config& c) {
  nlohmann::json j;
  j["width"] = c.width;
  j["depth_max"] = c.depth_max;
  j["mini_step"] = c.mini_step;
  j["max_tokens"] = c.max_tokens;
  j["p"] = c.p;
  j["lambda_es"] = c.lambda_es;
  j["lambda_ds"] = c.lambda_ds;
  j["t_star"] = c.t_star;
  j["pad_token"] = c.pad_token;
  j["cache_dim"] = c.cache_dim;
  j["parallel_cap"] = c.parallel_cap;
  if (c.budget.max_expansions != std::numeric_limits<std::uint64_t>::max()) {
    j["max_expansions"] = c.budget.max_expansions;
  }
  if (c.budget.max_wall_seconds != std::numeric_limits<double>::infinity()) {
    j["max_wall_seconds"] = c.budget.max_wall_seconds;
  }
  j["seed"] = c.seed;
  return j;
}

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  c.width = j.at("width").get<int>();
  c.depth_max = j.at("depth_max").get<int>();
  c.mini_step = j.at("mini_step").get<int>();
  c.max_tokens = j.at("max_tokens").get<int>();
  c.p = j.at("p").get<double>();
  c.lambda_es = j.at("lambda_es").get<double>();
  c.lambda_ds = j.at("lambda_ds").get<double>();
  c.t_star = j.at("t_star").get<int>();
  c.pad_token = j.at("pad_token").get<TokenId>();
  c.cache_dim = j.at("cache_dim").get<int>();
  c.parallel_cap = j.at("parallel_cap").get<int>();
  if (j.contains("max_expansions")) {
    c.budget.max_expansions = j.at("max_expansions").get<std::uint64_t>();
  }
  if (j.contains("max_wall_seconds")) {
    c.budget.max_wall_seconds = j.at("max_wall_seconds").get<double>();
  }
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json event_to_json(const TraceEvent& ev) {
  nlohmann::json j;
  if (const auto* e = std::get_if<ExpandedEvent>(&ev)) {
    j["type"] = "expanded";
    j["cycle"] = e->cycle;
    j["node"] = e->node;
    if (e->parent) j["parent"] = *e->parent; else j["parent"] = nullptr;
    j["mode"] = to_string(e->mode);
    j["confidence"] = e->confidence;
    j["new_tokens"] = e->new_tokens;
  } else if (const auto* t = std::get_if<TransitionEvent>(&ev)) {
    j["type"] = "transition";
    j["cycle"] = t->cycle;
    j["kind"] = to_string(t->kind);
    j["node"] = t->node;
  } else if (const auto* t = std::get_if<TerminatedEvent>(&ev)) {
    j["type"] = "terminated";
    j["cycle"] = t->cycle;
    j["node"] = t->node;
    if (t->parent) j["parent"] = *t->parent; else j["parent"] = nullptr;
    j["reward"] = t->reward;
    j["path_tokens"] = t->path_tokens;
    j["path_index"] = t->path_index;
  } else if (const auto* q = std::get_if<QueueResizedEvent>(&ev)) {
    j["type"] = "queue_resized";
    j["cycle"] = q->cycle;
    j["tau_p"] = q->tau_p;
  }
  return j;
}

inline TraceEvent event_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  auto opt_parent = [&j]() -> std::optional<NodeId> {
    if (!j.contains("parent") || j.at("parent").is_null()) return std::nullopt;
    return j.at("parent").get<NodeId>();
  };
  if (type == "expanded") {
    ExpandedEvent e;
    e.cycle = j.at("cycle").get<std::uint32_t>();
    e.node = j.at("node").get<NodeId>();
    e.parent = opt_parent();
    e.mode = mode_from_string(j.at("mode").get<std::string>());
    e.confidence = j.at("confidence").get<double>();
    e.new_tokens = j.at("new_tokens").get<std::uint32_t>();
    return e;
  }
  if (type == "transition") {
    TransitionEvent t;
    t.cycle = j.at("cycle").get<std::uint32_t>();
    t.kind = transition_kind_from_string(j.at("kind").get<std::string>());
    t.node = j.at("node").get<NodeId>();
    return t;
  }
  if (type == "terminated") {
    TerminatedEvent t;
    t.cycle = j.at("cycle").get<std::uint32_t>();
    t.node = j.at("node").get<NodeId>();
    t.parent = opt_parent();
    t.reward = j.at("reward").get<double>();
    t.path_tokens = j.at("path_tokens").get<std::uint32_t>();
    t.path_index = j.at("path_index").get<std::uint32_t>();
    return t;
  }
  if (type == "queue_resized") {
    QueueResizedEvent q;
    q.cycle = j.at("cycle").get<std::uint32_t>();
    q.tau_p = j.at("tau_p").get<std::uint32_t>();
    return q;
  }
  throw InvalidInput("unknown trace event type: " + type);
}

inline nlohmann::json trace_to_json(const RunTrace& trace) {
  nlohmann::json j;
  j["algorithm"] = trace.algorithm;
  j["seed"] = trace.seed;
  j["config"] = config_to_json(trace.config);
  nlohmann::json events = nlohmann::json::array();
  for (const TraceEvent& ev : trace.events) events.push_back(event_to_json(ev));
  j["events"] = std::move(events);
  return j;
}

inline RunTrace trace_from_json(const nlohmann::json& j) {
  RunTrace trace;
  trace.algorithm = j.value("algorithm", std::string("dpts"));
  trace.seed = j.at("seed").get<std::uint64_t>();
  trace.config = config_from_json(j.at("config"));
  for (const nlohmann::json& ev : j.at("events")) {
    trace.events.push_back(event_from_json(ev));
  }
  return trace;
}

}  // namespace dpts
