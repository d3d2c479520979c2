#include <catch2/catch_amalgamated.hpp>

#include <span>
#include <vector>

#include "dpts/backend.hpp"
#include "dpts/core.hpp"
#include "dpts/streamline.hpp"
#include "test_support.hpp"

using namespace dpts;

namespace {

constexpr int kMiniStep = 4;

EnvConfig small_env(std::uint64_t seed, int width = 2, int depth = 3, double term = 0.0) {
  EnvConfig e;
  e.seed = seed;
  e.width = width;
  e.depth = depth;
  e.term_prob = term;
  return e;
}

// Grows the tree along `path` using the environment's own chunks and
// returns the node at the end of the path.
NodeId grow_path(Tree& tree, const SyntheticEnv& env, std::span<const int> path) {
  NodeId cur = 0;
  std::vector<int> prefix;
  for (int step : path) {
    prefix.push_back(step);
    bool found = false;
    for (NodeId c : tree.children(cur)) {
      if (tree.node(c).seq[env.prompt().size() +
                           (prefix.size() - 1) * static_cast<std::size_t>(kMiniStep)] ==
          TokenId(1 + step)) {
        cur = c;
        found = true;
        break;
      }
    }
    if (found) continue;
    const Node& child = tree.add_child(cur, env.tokens_of(prefix, kMiniStep),
                                       env.cells_of(prefix, kMiniStep),
                                       env.confidence_of(prefix));
    cur = child.id;
  }
  return cur;
}

struct EnvFixture {
  Config cfg;
  SyntheticEnv env;
  Tree tree;
  CandidatePool pool;

  explicit EnvFixture(const EnvConfig& e) : env(e, 0, 3) {
    cfg.width = e.width;
    cfg.mini_step = kMiniStep;
    cfg.cache_dim = 3;
    tree.create_root(env.prompt(), cfg, pool);
  }

  BatchInput batch_for(std::vector<std::vector<int>> paths) {
    ParallelQueue queue;
    for (const auto& p : paths) queue.push(grow_path(tree, env, p));
    return assemble_batch(tree, queue, cfg.pad_token);
  }
};

}  // namespace

TEST_CASE("synthetic expansion is deterministic") {
  EnvFixture fx(small_env(17));
  const BatchInput batch = fx.batch_for({{}, {0}, {1, 0}});

  EnvConfig e2 = small_env(17);
  SyntheticEnv env2(e2, 0, 3);
  const BatchOutput a = fx.env.expand(batch, 2, kMiniStep);
  const BatchOutput b = env2.expand(batch, 2, kMiniStep);
  REQUIRE(a.rows.size() == b.rows.size());
  for (std::size_t r = 0; r < a.rows.size(); ++r) {
    for (std::size_t j = 0; j < a.rows[r].size(); ++j) {
      CHECK(a.rows[r][j].tokens == b.rows[r][j].tokens);
      CHECK(a.rows[r][j].confidence == b.rows[r][j].confidence);
      CHECK(a.rows[r][j].terminated == b.rows[r][j].terminated);
      CHECK(a.rows[r][j].kv.cells == b.rows[r][j].kv.cells);
    }
  }
}

TEST_CASE("batch composition never changes a row's output") {
  EnvFixture fx(small_env(23, 3, 4));
  const BatchInput together = fx.batch_for({{}, {1}, {2, 0}, {0, 0, 1}});
  const BatchOutput joint = fx.env.expand(together, 3, kMiniStep);

  for (std::size_t r = 0; r < together.rows(); ++r) {
    ParallelQueue solo_queue;
    solo_queue.push(together.row_nodes[r]);
    const BatchInput solo = assemble_batch(fx.tree, solo_queue, fx.cfg.pad_token);
    const BatchOutput alone = fx.env.expand(solo, 3, kMiniStep);
    REQUIRE(alone.rows.size() == 1);
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(alone.rows[0][j].tokens == joint.rows[r][j].tokens);
      CHECK(alone.rows[0][j].confidence == joint.rows[r][j].confidence);
      CHECK(alone.rows[0][j].kv.cells == joint.rows[r][j].kv.cells);
    }
  }
}

TEST_CASE("parallel row evaluation matches sequential") {
  EnvFixture fx(small_env(29, 4, 5));
  const BatchInput batch = fx.batch_for({{}, {0}, {1}, {2, 1}, {3, 0, 2}});

  EnvConfig e2 = small_env(29, 4, 5);
  SyntheticEnv seq_env(e2, 0, 3);
  seq_env.set_row_threads(1);

  const BatchOutput par = fx.env.expand(batch, 4, kMiniStep);
  const BatchOutput seq = seq_env.expand(batch, 4, kMiniStep);
  REQUIRE(par.rows.size() == seq.rows.size());
  for (std::size_t r = 0; r < par.rows.size(); ++r) {
    for (std::size_t j = 0; j < par.rows[r].size(); ++j) {
      CHECK(par.rows[r][j].tokens == seq.rows[r][j].tokens);
      CHECK(par.rows[r][j].kv.cells == seq.rows[r][j].kv.cells);
    }
  }
}

TEST_CASE("golden children dominate their siblings") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    EnvConfig e = small_env(seed, 4, 6);
    SyntheticEnv env(e, 0, 2);
    std::vector<int> golden;
    for (int d = 1; d <= e.depth; ++d) {
      const int g = env.golden_child(d);
      // confidence of the golden child at this depth
      golden.push_back(g);
      const double gc = env.confidence_of(golden);
      CHECK(gc >= 0.75);
      CHECK(gc < 0.95);
      for (int j = 0; j < e.width; ++j) {
        if (j == g) continue;
        golden.back() = j;
        const double sibling = env.confidence_of(golden);
        CHECK(sibling < gc);
        CHECK(sibling >= 0.1);
        CHECK(sibling < 0.7);
        golden.back() = g;
      }
    }
  }
}

TEST_CASE("reward extends monotonically along the golden prefix") {
  EnvConfig e = small_env(5, 3, 6);
  SyntheticEnv env(e, 0, 2);
  std::vector<int> path;
  double prev = env.reward_of(path);
  for (int d = 1; d <= e.depth; ++d) {
    path.push_back(env.golden_child(d));
    const double r = env.reward_of(path);
    CHECK(r >= prev);
    prev = r;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("synthetic expansion validates the batch") {
  EnvFixture fx(small_env(31));
  SECTION("width mismatch") {
    const BatchInput batch = fx.batch_for({{}});
    CHECK_THROWS_AS(fx.env.expand(batch, 3, kMiniStep), InvalidConfig);
  }
  SECTION("non-zero cell in a padded slot") {
    BatchInput batch = fx.batch_for({{}, {0, 1}});
    REQUIRE(batch.kv_valid[0] == 0);  // root row is fully padded
    batch.kv[0][0][1] = 0.25f;
    CHECK_THROWS_AS(fx.env.expand(batch, 2, kMiniStep), ProtocolViolation);
  }
  SECTION("padded token that is not the pad token") {
    BatchInput batch = fx.batch_for({{}, {0, 1}});
    batch.seq[0].back() = 42;
    CHECK_THROWS_AS(fx.env.expand(batch, 2, kMiniStep), ProtocolViolation);
  }
  SECTION("pad token inside the valid region") {
    BatchInput batch = fx.batch_for({{0}});
    batch.seq[0][batch.seq_valid[0] - 1] = fx.cfg.pad_token;
    CHECK_THROWS_AS(fx.env.expand(batch, 2, kMiniStep), ProtocolViolation);
  }
  SECTION("expanding a terminal-depth path") {
    const BatchInput batch = fx.batch_for({{0, 1, 0}});  // depth == 3 == D
    CHECK_THROWS_AS(fx.env.expand(batch, 2, kMiniStep), ProtocolViolation);
  }
  SECTION("foreign prompt") {
    BatchInput batch = fx.batch_for({{0}});
    batch.seq[0][0] += 1;
    CHECK_THROWS_AS(fx.env.expand(batch, 2, kMiniStep), ProtocolViolation);
  }
}

TEST_CASE("terminal children carry rewards, live ones do not") {
  EnvFixture fx(small_env(37, 2, 2));
  const BatchInput batch = fx.batch_for({{0}});  // children land on depth == D
  const BatchOutput out = fx.env.expand(batch, 2, kMiniStep);
  for (const ChildOutput& c : out.rows[0]) {
    CHECK(c.terminated);
    REQUIRE(c.terminal_reward.has_value());
    CHECK(*c.terminal_reward >= 0.0);
    CHECK(*c.terminal_reward <= 1.0);
    CHECK(c.tokens.size() == kMiniStep);
    CHECK(c.kv.size() == c.tokens.size());
  }

  const BatchInput root_batch = fx.batch_for({{}});
  const BatchOutput root_out = fx.env.expand(root_batch, 2, kMiniStep);
  for (const ChildOutput& c : root_out.rows[0]) {
    CHECK_FALSE(c.terminated);  // term_prob 0 and depth 1 < D
    CHECK_FALSE(c.terminal_reward.has_value());
  }
}

TEST_CASE("brute_force_best finds the planted optimum") {
  SECTION("term_prob 0 yields the golden leaf at reward 1") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      EnvConfig e = small_env(seed, 2, 4);
      SyntheticEnv env(e, 0, 2);
      const BestPath best = brute_force_best(env);
      CHECK(best.reward == 1.0);
      REQUIRE(best.path.size() == 4);
      for (int d = 1; d <= 4; ++d) CHECK(best.path[d - 1] == env.golden_child(d));
    }
  }
  SECTION("depth-1 case agrees with direct evaluation of the rules") {
    EnvConfig e = small_env(123, 2, 1);
    SyntheticEnv env(e, 0, 2);
    const std::vector<int> left{0};
    const std::vector<int> right{1};
    const double r_left = env.reward_of(left);
    const double r_right = env.reward_of(right);
    const BestPath best = brute_force_best(env);
    CHECK(best.reward == std::max(r_left, r_right));
    // lexicographically smallest achiever
    if (r_left >= r_right) CHECK(best.path == left);
    else CHECK(best.path == right);
  }
  SECTION("guard rejects oversized environments") {
    EnvConfig e = small_env(1, 4, 12);  // 4^12 > 1e6
    SyntheticEnv env(e, 0, 2);
    CHECK_THROWS_AS(brute_force_best(env), LimitExceeded);
  }
}

TEST_CASE("early termination respects the probability draw") {
  EnvConfig e = small_env(7, 2, 12, 0.3);
  SyntheticEnv env(e, 0, 2);
  int terminal = 0, live = 0;
  std::vector<int> path;
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      for (int c = 0; c < 2; ++c) {
        path = {a, b, c};
        env.is_terminal(path) ? ++terminal : ++live;
      }
    }
  }
  CHECK(terminal + live == 8);
  // with term_prob 0 the same paths never terminate below D
  EnvConfig e0 = small_env(7, 2, 12, 0.0);
  SyntheticEnv env0(e0, 0, 2);
  for (int a = 0; a < 2; ++a) {
    CHECK_FALSE(env0.is_terminal(std::vector<int>{a}));
  }
}
