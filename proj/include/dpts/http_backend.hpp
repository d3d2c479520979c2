#pragma once

/**
 * HTTP expansion backend: a client for an external generation service.
 *
 * Wire protocol (JSON, UTF-8), POST {endpoint}/expand:
 *   request  { "width": w, "max_new_tokens": mini_step,
 *              "rows": [ { "node_id": int, "tokens": [int, ...] }, ... ] }
 *   response { "rows": [ { "children": [ { "tokens": [int, ...],
 *              "confidence": float, "terminated": bool,
 *              "terminal_reward": float|null } x w ] }, ... ] }
 *   errors   HTTP status >= 400 with { "error": string }
 *
 * Row tokens are the de-padded valid sequence; the server keeps whatever
 * generation cache it wants on its side. The engine still needs cache
 * cells for its local chain bookkeeping, so this client synthesizes a
 * deterministic non-zero placeholder cell per returned token.
 *
 * Retries apply to transport failures only (connect/read errors), never to
 * well-formed error responses.
 */

#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "dpts/backend.hpp"
#include "dpts/core.hpp"
#include "dpts/errors.hpp"
#include "dpts/mix.hpp"
#include "dpts/streamline.hpp"

namespace dpts {

struct HttpBackendConfig {
  std::string endpoint;  // scheme://host:port
  double timeout_seconds = 5.0;
  int max_retries = 2;
  std::string auth_token;  // optional bearer token
};

class HttpBackend : public ExpansionBackend {
public:
  HttpBackend(HttpBackendConfig config, int cache_dim, TokenId pad_token)
      : config_(std::move(config)), cache_dim_(cache_dim), pad_token_(pad_token),
        client_(config_.endpoint.empty() ? "http://invalid" : config_.endpoint) {
    if (config_.endpoint.empty()) throw InvalidConfig("http backend endpoint is empty");
    if (config_.max_retries < 0) throw InvalidConfig("max_retries must be >= 0");
    if (config_.timeout_seconds <= 0.0) throw InvalidConfig("timeout must be positive");
    const auto timeout = std::chrono::milliseconds(
        static_cast<long long>(config_.timeout_seconds * 1000.0));
    client_.set_connection_timeout(timeout);
    client_.set_read_timeout(timeout);
    client_.set_write_timeout(timeout);
    client_.set_keep_alive(true);
  }

  BatchOutput expand(const BatchInput& batch, int width, int mini_step) override {
    nlohmann::json req;
    req["width"] = width;
    req["max_new_tokens"] = mini_step;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      nlohmann::json row;
      row["node_id"] = batch.row_nodes[r];
      row["tokens"] = nlohmann::json(TokenSeq(
          batch.seq[r].begin(),
          batch.seq[r].begin() + static_cast<std::ptrdiff_t>(batch.seq_valid[r])));
      rows.push_back(std::move(row));
    }
    req["rows"] = std::move(rows);

    const std::string body = post_with_retries(req.dump());
    return parse_response(body, batch.rows(), width, mini_step);
  }

private:
  std::string post_with_retries(const std::string& body) {
    httplib::Headers headers;
    if (!config_.auth_token.empty()) {
      headers.emplace("Authorization", "Bearer " + config_.auth_token);
    }

    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      httplib::Result res = client_.Post("/expand", headers, body, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;  // transport failure: retry
      }
      if (res->status >= 200 && res->status < 300) return res->body;
      // A well-formed error response is final, no retry.
      std::string message = "backend returned status " + std::to_string(res->status);
      try {
        const nlohmann::json j = nlohmann::json::parse(res->body);
        if (j.contains("error")) message += ": " + j.at("error").get<std::string>();
      } catch (const nlohmann::json::exception&) {
      }
      throw BackendError(res->status, message);
    }
    throw BackendUnavailable("backend unreachable after " +
                             std::to_string(config_.max_retries + 1) + " attempts: " +
                             last_error);
  }

  BatchOutput parse_response(const std::string& body, std::size_t expect_rows, int width,
                             int mini_step) const {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolViolation(std::string("backend response is not valid json: ") + e.what());
    }
    if (!j.contains("rows") || !j.at("rows").is_array()) {
      throw ProtocolViolation("backend response has no rows array");
    }
    const nlohmann::json& rows = j.at("rows");
    if (rows.size() != expect_rows) {
      throw ProtocolViolation("backend returned " + std::to_string(rows.size()) +
                              " rows, expected " + std::to_string(expect_rows));
    }

    BatchOutput out;
    out.rows.reserve(expect_rows);
    for (const nlohmann::json& row : rows) {
      if (!row.contains("children") || !row.at("children").is_array()) {
        throw ProtocolViolation("backend row has no children array");
      }
      const nlohmann::json& children = row.at("children");
      if (children.size() != static_cast<std::size_t>(width)) {
        throw ProtocolViolation("backend returned " + std::to_string(children.size()) +
                                " children, expected " + std::to_string(width));
      }
      std::vector<ChildOutput> parsed;
      parsed.reserve(children.size());
      for (const nlohmann::json& c : children) parsed.push_back(parse_child(c, mini_step));
      out.rows.push_back(std::move(parsed));
    }
    return out;
  }

  ChildOutput parse_child(const nlohmann::json& c, int mini_step) const {
    ChildOutput child;
    try {
      child.tokens = c.at("tokens").get<TokenSeq>();
      child.confidence = c.at("confidence").get<double>();
      child.terminated = c.at("terminated").get<bool>();
      if (c.contains("terminal_reward") && !c.at("terminal_reward").is_null()) {
        child.terminal_reward = c.at("terminal_reward").get<double>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ProtocolViolation(std::string("malformed child record: ") + e.what());
    }
    if (child.tokens.size() > static_cast<std::size_t>(mini_step)) {
      throw ProtocolViolation("child has more tokens than max_new_tokens");
    }
    for (TokenId t : child.tokens) {
      if (t == pad_token_) throw ProtocolViolation("child tokens contain the pad token");
      if (t < 0) throw ProtocolViolation("negative token id");
    }
    if (child.confidence < 0.0 || child.confidence > 1.0) {
      throw ProtocolViolation("confidence out of [0,1]");
    }
    if (child.terminated != child.terminal_reward.has_value()) {
      throw ProtocolViolation("terminal_reward must be present iff terminated");
    }
    if (child.terminal_reward &&
        (*child.terminal_reward < 0.0 || *child.terminal_reward > 1.0)) {
      throw ProtocolViolation("terminal_reward out of [0,1]");
    }

    // Local placeholder cells, one per token: the server owns the real
    // cache, the engine only needs non-zero cells of the right shape.
    child.kv.cells.reserve(child.tokens.size());
    for (std::size_t i = 0; i < child.tokens.size(); ++i) {
      const std::uint64_t h =
          mix64(mix64(kCellSeed, static_cast<std::uint64_t>(child.tokens[i])), i);
      CacheCell cell(static_cast<std::size_t>(cache_dim_));
      for (int d = 0; d < cache_dim_; ++d) {
        cell[static_cast<std::size_t>(d)] =
            static_cast<float>(0.25 + 0.75 * unit_interval(mix64(h, d)));
      }
      child.kv.cells.push_back(std::move(cell));
    }
    return child;
  }

  static constexpr std::uint64_t kCellSeed = 0x687474705f6b7631ull;

  HttpBackendConfig config_;
  int cache_dim_;
  TokenId pad_token_;
  httplib::Client client_;  // reused across calls, keep-alive
};

}  // namespace dpts
