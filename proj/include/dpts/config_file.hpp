#pragma once

/**
 * Run configuration file: INI-style sections [engine], [memory], [env],
 * [backend], [bench]. Unknown sections or keys fail fast; missing keys
 * take the defaults of the underlying structs. Command-line overrides use
 * dotted keys ("engine.lambda_es=0.7") and are applied after the file.
 *
 * List values are comma-separated; seed ranges accept "a..b" (inclusive)
 * or a single value. '#' and ';' start comments.
 */

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dpts/backend.hpp"
#include "dpts/baselines.hpp"
#include "dpts/core.hpp"
#include "dpts/errors.hpp"
#include "dpts/http_backend.hpp"

namespace dpts::cfg {

enum class BackendKind { Synthetic, Http };

struct BenchSettings {
  std::vector<std::string> algorithms{"dpts", "mcts", "best_of_n", "beam"};
  std::uint64_t seed_begin = 0;
  std::uint64_t seed_end = 9;  // inclusive
  std::vector<double> lambda_es_grid;  // empty: engine value only
  std::vector<double> lambda_ds_grid;
  std::vector<std::string> ablations;  // of: baseline, ap, ap_s, ap_t, ap_s_t
  int workers = 1;
  int bon_n = 64;
  int beam_k = 16;
  double uct_c = 1.4142135623730951;
  double time_limit_seconds = 120.0;
};

struct CliConfig {
  Config engine;
  TokenSeq prompt{5, 9, 9};  // used by the http backend; synthetic runs use the env prompt
  MemoryModel memory{/*o_max=*/100000.0, /*o_init=*/0.0, /*o_peak=*/0.0, /*cell_cost=*/1.0};
  EnvConfig env;
  BackendKind backend_kind = BackendKind::Synthetic;
  HttpBackendConfig http;
  BenchSettings bench;
  bool bench_section_present = false;

  BaselineConfig baseline(Algorithm algo) const {
    BaselineConfig b;
    b.algorithm = algo;
    b.n = bench.bon_n;
    b.beam_k = bench.beam_k;
    b.uct_c = bench.uct_c;
    b.time_limit_seconds = bench.time_limit_seconds;
    return b;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw InvalidConfig("bad integer for " + key + ": '" + v + "'");
  }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw InvalidConfig("bad integer for " + key + ": '" + v + "'");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw InvalidConfig("bad number for " + key + ": '" + v + "'");
  }
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::vector<double> parse_double_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const std::string& item : split_list(v)) out.push_back(parse_double(key, item));
  return out;
}

inline TokenSeq parse_token_list(const std::string& key, const std::string& v) {
  TokenSeq out;
  for (const std::string& item : split_list(v)) {
    out.push_back(static_cast<TokenId>(parse_int(key, item)));
  }
  return out;
}

inline void parse_seed_range(const std::string& v, std::uint64_t& begin, std::uint64_t& end) {
  const std::size_t dots = v.find("..");
  if (dots == std::string::npos) {
    begin = end = parse_u64("bench.seeds", v);
    return;
  }
  begin = parse_u64("bench.seeds", trim(v.substr(0, dots)));
  end = parse_u64("bench.seeds", trim(v.substr(dots + 2)));
  if (end < begin) throw InvalidConfig("bench.seeds range is reversed: '" + v + "'");
}

// Applies one key of one section; throws InvalidConfig on unknown keys.
inline void apply_key(CliConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value) {
  const std::string full = section + "." + key;
  if (section == "engine") {
    if (key == "width") cfg.engine.width = parse_int(full, value);
    else if (key == "depth_max") cfg.engine.depth_max = parse_int(full, value);
    else if (key == "mini_step") cfg.engine.mini_step = parse_int(full, value);
    else if (key == "max_tokens") cfg.engine.max_tokens = parse_int(full, value);
    else if (key == "p") cfg.engine.p = parse_double(full, value);
    else if (key == "lambda_es") cfg.engine.lambda_es = parse_double(full, value);
    else if (key == "lambda_ds") cfg.engine.lambda_ds = parse_double(full, value);
    else if (key == "t_star") cfg.engine.t_star = parse_int(full, value);
    else if (key == "pad_token") cfg.engine.pad_token = static_cast<TokenId>(parse_int(full, value));
    else if (key == "cache_dim") cfg.engine.cache_dim = parse_int(full, value);
    else if (key == "parallel_cap") cfg.engine.parallel_cap = parse_int(full, value);
    else if (key == "max_expansions") cfg.engine.budget.max_expansions = parse_u64(full, value);
    else if (key == "max_wall_seconds") cfg.engine.budget.max_wall_seconds = parse_double(full, value);
    else if (key == "seed") cfg.engine.seed = parse_u64(full, value);
    else if (key == "prompt") cfg.prompt = parse_token_list(full, value);
    else throw InvalidConfig("unknown key: " + full);
  } else if (section == "memory") {
    if (key == "o_max") cfg.memory.o_max = parse_double(full, value);
    else if (key == "o_init") cfg.memory.o_init = parse_double(full, value);
    else if (key == "cell_cost") cfg.memory.cell_cost = parse_double(full, value);
    else throw InvalidConfig("unknown key: " + full);
  } else if (section == "env") {
    if (key == "depth") cfg.env.depth = parse_int(full, value);
    else if (key == "term_prob") cfg.env.term_prob = parse_double(full, value);
    else if (key == "conf_golden_base") cfg.env.conf_golden_base = parse_double(full, value);
    else if (key == "conf_golden_range") cfg.env.conf_golden_range = parse_double(full, value);
    else if (key == "conf_noise_base") cfg.env.conf_noise_base = parse_double(full, value);
    else if (key == "conf_noise_range") cfg.env.conf_noise_range = parse_double(full, value);
    else if (key == "prompt_len") cfg.env.prompt_len = parse_int(full, value);
    else throw InvalidConfig("unknown key: " + full);
  } else if (section == "backend") {
    if (key == "type") {
      if (value == "synthetic") cfg.backend_kind = BackendKind::Synthetic;
      else if (value == "http") cfg.backend_kind = BackendKind::Http;
      else throw InvalidConfig("backend.type must be synthetic or http, got '" + value + "'");
    } else if (key == "endpoint") cfg.http.endpoint = value;
    else if (key == "timeout_seconds") cfg.http.timeout_seconds = parse_double(full, value);
    else if (key == "max_retries") cfg.http.max_retries = parse_int(full, value);
    else if (key == "auth_token") cfg.http.auth_token = value;
    else throw InvalidConfig("unknown key: " + full);
  } else if (section == "bench") {
    cfg.bench_section_present = true;
    if (key == "algorithms") cfg.bench.algorithms = split_list(value);
    else if (key == "seeds") parse_seed_range(value, cfg.bench.seed_begin, cfg.bench.seed_end);
    else if (key == "lambda_es_grid") cfg.bench.lambda_es_grid = parse_double_list(full, value);
    else if (key == "lambda_ds_grid") cfg.bench.lambda_ds_grid = parse_double_list(full, value);
    else if (key == "ablations") cfg.bench.ablations = split_list(value);
    else if (key == "workers") cfg.bench.workers = parse_int(full, value);
    else if (key == "bon_n") cfg.bench.bon_n = parse_int(full, value);
    else if (key == "beam_k") cfg.bench.beam_k = parse_int(full, value);
    else if (key == "uct_c") cfg.bench.uct_c = parse_double(full, value);
    else if (key == "time_limit_seconds") cfg.bench.time_limit_seconds = parse_double(full, value);
    else throw InvalidConfig("unknown key: " + full);
  } else {
    throw InvalidConfig("unknown section: [" + section + "]");
  }
}

}  // namespace detail

// Keeps the environment aligned with the engine: shared seed and width.
inline void finalize(CliConfig& cfg) {
  cfg.env.width = cfg.engine.width;
  cfg.env.seed = cfg.engine.seed;
  cfg.engine.validate();
  cfg.env.validate();
}

inline CliConfig parse_config_text(const std::string& text) {
  CliConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw InvalidConfig("line " + std::to_string(line_no) + ": unterminated section header");
      }
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section != "engine" && section != "memory" && section != "env" &&
          section != "backend" && section != "bench") {
        throw InvalidConfig("unknown section: [" + section + "]");
      }
      if (section == "bench") cfg.bench_section_present = true;
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidConfig("line " + std::to_string(line_no) + ": expected key = value");
    }
    if (section.empty()) {
      throw InvalidConfig("line " + std::to_string(line_no) + ": key outside any section");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    detail::apply_key(cfg, section, key, value);
  }
  return cfg;
}

inline CliConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

// One dotted override, e.g. "engine.lambda_es=0.7".
inline void apply_override(CliConfig& cfg, const std::string& spec) {
  const std::size_t eq = spec.find('=');
  if (eq == std::string::npos) throw InvalidConfig("override must be section.key=value: " + spec);
  const std::string dotted = detail::trim(spec.substr(0, eq));
  const std::string value = detail::trim(spec.substr(eq + 1));
  const std::size_t dot = dotted.find('.');
  if (dot == std::string::npos) throw InvalidConfig("override must be section.key=value: " + spec);
  detail::apply_key(cfg, dotted.substr(0, dot), dotted.substr(dot + 1), value);
}

inline CliConfig load(const std::string& path, const std::vector<std::string>& overrides) {
  CliConfig cfg = parse_config_file(path);
  for (const std::string& o : overrides) apply_override(cfg, o);
  finalize(cfg);
  return cfg;
}

}  // namespace dpts::cfg
