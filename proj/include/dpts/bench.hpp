#pragma once

/**
 * Benchmark sweeps: the cartesian grid of (algorithm x seed x ablation /
 * lambda grid point), one summary row per run. Ablation tags select which
 * engine components stay on:
 *
 *   baseline   queue pinned to 1, refills all exploit, children always continue
 *   ap         adaptive parallelism only
 *   ap_s       + search (exploit/explore split)
 *   ap_t       + transition (early stop / deep seek)
 *   ap_s_t     the full engine
 *
 * Grid points run independently (optionally across workers); rows come
 * back in grid order so repeated sweeps produce identical output apart
 * from wall_ms.
 */

#include <chrono>
#include <cstdint>
#include <future>
#include <string>
#include <vector>

#include "dpts/backend.hpp"
#include "dpts/baselines.hpp"
#include "dpts/config_file.hpp"
#include "dpts/core.hpp"
#include "dpts/errors.hpp"
#include "dpts/http_backend.hpp"
#include "dpts/metrics.hpp"
#include "dpts/scheduler.hpp"

namespace dpts::bench {

struct GridPoint {
  std::string label;
  Algorithm algorithm = Algorithm::Dpts;
  Toggles toggles;
  bool mcts_adaptive_parallel = false;
  double lambda_es = 0.7;
  double lambda_ds = 0.7;
  std::uint64_t seed = 0;
};

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "dpts") return Algorithm::Dpts;
  if (s == "mcts" || s == "mcts_ap") return Algorithm::Mcts;
  if (s == "best_of_n" || s == "bon") return Algorithm::BestOfN;
  if (s == "beam") return Algorithm::Beam;
  if (s == "exhaustive") return Algorithm::Exhaustive;
  throw InvalidConfig("unknown algorithm: " + s);
}

inline Toggles toggles_for_ablation(const std::string& tag) {
  if (tag.empty() || tag == "ap_s_t") return {true, true, true};
  if (tag == "baseline") return {false, false, false};
  if (tag == "ap") return {true, false, false};
  if (tag == "ap_s") return {true, true, false};
  if (tag == "ap_t") return {true, false, true};
  throw InvalidConfig("unknown ablation tag: " + tag);
}

inline std::vector<GridPoint> build_grid(const cfg::CliConfig& cli) {
  std::vector<GridPoint> grid;
  const std::vector<double> les =
      cli.bench.lambda_es_grid.empty() ? std::vector<double>{cli.engine.lambda_es}
                                       : cli.bench.lambda_es_grid;
  const std::vector<double> lds =
      cli.bench.lambda_ds_grid.empty() ? std::vector<double>{cli.engine.lambda_ds}
                                       : cli.bench.lambda_ds_grid;
  const bool lambda_labels =
      !cli.bench.lambda_es_grid.empty() || !cli.bench.lambda_ds_grid.empty();
  const std::vector<std::string> ablations =
      cli.bench.ablations.empty() ? std::vector<std::string>{""} : cli.bench.ablations;

  for (const std::string& name : cli.bench.algorithms) {
    const Algorithm algo = algorithm_from_string(name);
    for (std::uint64_t seed = cli.bench.seed_begin; seed <= cli.bench.seed_end; ++seed) {
      if (algo != Algorithm::Dpts) {
        GridPoint p;
        p.label = name;
        p.algorithm = algo;
        p.mcts_adaptive_parallel = name == "mcts_ap";
        p.lambda_es = cli.engine.lambda_es;
        p.lambda_ds = cli.engine.lambda_ds;
        p.seed = seed;
        grid.push_back(std::move(p));
        continue;
      }
      for (const std::string& tag : ablations) {
        for (double le : les) {
          for (double ld : lds) {
            GridPoint p;
            p.algorithm = Algorithm::Dpts;
            p.toggles = toggles_for_ablation(tag);
            p.lambda_es = le;
            p.lambda_ds = ld;
            p.seed = seed;
            p.label = tag.empty() ? "dpts" : "dpts_" + tag;
            if (lambda_labels) {
              // ';' keeps the label a single CSV cell
              p.label += "[les=" + metrics::format_double(le) +
                         ";lds=" + metrics::format_double(ld) + "]";
            }
            grid.push_back(std::move(p));
          }
        }
      }
    }
  }
  return grid;
}

// Runs one grid point to completion and summarizes its trace. Failures are
// captured on the row rather than thrown, so one bad point cannot sink a
// sweep.
inline metrics::SummaryRow run_grid_point(const cfg::CliConfig& cli, const GridPoint& point) {
  metrics::SummaryRow row;
  row.algorithm = point.label;
  row.seed = point.seed;

  Config engine = cli.engine;
  engine.seed = point.seed;
  engine.lambda_es = point.lambda_es;
  engine.lambda_ds = point.lambda_ds;
  EnvConfig env_cfg = cli.env;
  env_cfg.seed = point.seed;
  env_cfg.width = engine.width;

  const auto t0 = std::chrono::steady_clock::now();
  try {
    RunOutput out;
    if (cli.backend_kind == cfg::BackendKind::Synthetic) {
      SyntheticEnv env(env_cfg, engine.pad_token, engine.cache_dim);
      const TokenSeq prompt = env.prompt();
      switch (point.algorithm) {
        case Algorithm::Dpts:
          out = run(engine, env, cli.memory, prompt, point.toggles, point.label);
          break;
        case Algorithm::Mcts: {
          BaselineConfig bc = cli.baseline(Algorithm::Mcts);
          bc.adaptive_parallel = point.mcts_adaptive_parallel;
          bc.memory = cli.memory;
          out = mcts_run(engine, bc, env, prompt);
          break;
        }
        case Algorithm::BestOfN:
          out = best_of_n_run(engine, cli.baseline(Algorithm::BestOfN), env, prompt);
          break;
        case Algorithm::Beam:
          out = beam_run(engine, cli.baseline(Algorithm::Beam), env, prompt);
          break;
        case Algorithm::Exhaustive:
          out = exhaustive_run(engine, env);
          break;
      }
    } else {
      if (point.algorithm == Algorithm::Exhaustive) {
        throw InvalidConfig("exhaustive search needs the synthetic backend");
      }
      HttpBackend backend(cli.http, engine.cache_dim, engine.pad_token);
      switch (point.algorithm) {
        case Algorithm::Dpts:
          out = run(engine, backend, cli.memory, cli.prompt, point.toggles, point.label);
          break;
        case Algorithm::Mcts: {
          BaselineConfig bc = cli.baseline(Algorithm::Mcts);
          bc.adaptive_parallel = point.mcts_adaptive_parallel;
          bc.memory = cli.memory;
          out = mcts_run(engine, bc, backend, cli.prompt);
          break;
        }
        case Algorithm::BestOfN:
          out = best_of_n_run(engine, cli.baseline(Algorithm::BestOfN), backend, cli.prompt);
          break;
        case Algorithm::Beam:
          out = beam_run(engine, cli.baseline(Algorithm::Beam), backend, cli.prompt);
          break;
        case Algorithm::Exhaustive:
          break;  // unreachable
      }
    }
    if (out.result.stop_reason == StopReason::BackendFailure) {
      row.failed = true;
      row.error = out.result.error.value_or("backend failure");
    } else {
      row.best_reward = out.result.best_reward;
      row.metrics = metrics::summarize(out.trace);
    }
  } catch (const Error& e) {
    row.failed = true;
    row.error = e.what();
  }
  row.wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

inline std::vector<metrics::SummaryRow> run_bench(const cfg::CliConfig& cli, int workers = 0) {
  const std::vector<GridPoint> grid = build_grid(cli);
  std::vector<metrics::SummaryRow> rows(grid.size());
  if (workers <= 0) workers = cli.bench.workers;
  if (workers < 1) workers = 1;

  if (workers == 1 || grid.size() <= 1) {
    for (std::size_t i = 0; i < grid.size(); ++i) rows[i] = run_grid_point(cli, grid[i]);
    return rows;
  }

  std::vector<std::future<void>> futures;
  futures.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&, w] {
      for (std::size_t i = static_cast<std::size_t>(w); i < grid.size();
           i += static_cast<std::size_t>(workers)) {
        rows[i] = run_grid_point(cli, grid[i]);
      }
    }));
  }
  for (std::future<void>& f : futures) f.get();
  return rows;
}

}  // namespace dpts::bench
