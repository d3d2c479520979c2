#include <catch2/catch_amalgamated.hpp>

#include "dpts/core.hpp"
#include "dpts/streamline.hpp"
#include "test_support.hpp"

using namespace dpts;

namespace {

// Root + two-link chain with known cell counts.
struct Chain {
  Tree tree;
  CandidatePool pool;
  Config cfg;
  NodeId a = 0, b = 0;

  Chain() {
    cfg.cache_dim = 2;
    tree.create_root({1, 2}, cfg, pool);
    testsup::Gen g(11);
    a = tree.add_child(0, {10, 11}, testsup::random_cells(g, 2, 2), 0.9).id;
    b = tree.add_child(a, {12, 13, 14}, testsup::random_cells(g, 3, 2), 0.8).id;
  }
};

}  // namespace

TEST_CASE("materialize_kv_chain concatenates root-first") {
  Chain c;
  CHECK(materialize_kv_chain(c.tree, 0).empty());

  const auto chain_a = materialize_kv_chain(c.tree, c.a);
  const auto chain_b = materialize_kv_chain(c.tree, c.b);
  REQUIRE(chain_a.size() == 2);
  REQUIRE(chain_b.size() == 5);
  // a's cells first, then b's, bit for bit
  CHECK(std::equal(chain_a.begin(), chain_a.end(), chain_b.begin()));
  CHECK(chain_b[2] == c.tree.node(c.b).kv.cells[0]);
  CHECK(chain_b[4] == c.tree.node(c.b).kv.cells[2]);

  CHECK_THROWS_AS(materialize_kv_chain(c.tree, 77), NotFound);
}

TEST_CASE("assemble_batch pads KV left and sequences right") {
  Chain c;
  ParallelQueue queue;
  queue.push(c.b);  // kv chain 5, seq 2+5=7
  queue.push(c.a);  // kv chain 2, seq 2+2=4

  const BatchInput batch = assemble_batch(c.tree, queue, c.cfg.pad_token);
  REQUIRE(batch.rows() == 2);
  CHECK(batch.kv_cols() == 5);
  CHECK(batch.seq_cols() == 7);
  CHECK(batch.kv_valid == std::vector<std::size_t>{5, 2});
  CHECK(batch.seq_valid == std::vector<std::size_t>{7, 4});
  CHECK(batch.row_nodes == std::vector<NodeId>{c.b, c.a});

  // row 1: 3 leading zero cells, 3 trailing pad tokens
  for (int i = 0; i < 3; ++i) CHECK(is_zero_cell(batch.kv[1][static_cast<std::size_t>(i)]));
  CHECK_FALSE(is_zero_cell(batch.kv[1][3]));
  for (std::size_t i = 4; i < 7; ++i) CHECK(batch.seq[1][i] == c.cfg.pad_token);
  CHECK(batch.seq[1][3] != c.cfg.pad_token);
}

TEST_CASE("assemble_batch degenerate cases") {
  Chain c;
  SECTION("single row needs no padding") {
    ParallelQueue queue;
    queue.push(c.a);
    const BatchInput batch = assemble_batch(c.tree, queue, c.cfg.pad_token);
    CHECK(batch.kv_cols() == batch.kv_valid[0]);
    CHECK(batch.seq_cols() == batch.seq_valid[0]);
  }
  SECTION("empty queue is rejected") {
    ParallelQueue queue;
    CHECK_THROWS_AS(assemble_batch(c.tree, queue, c.cfg.pad_token), EmptyBatch);
  }
}

TEST_CASE("departition inverts assemble_batch") {
  Chain c;
  ParallelQueue queue;
  queue.push(c.b);
  queue.push(c.a);
  queue.push(0);
  const BatchInput batch = assemble_batch(c.tree, queue, c.cfg.pad_token);

  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto [cells, seq] = departition(batch, r);
    CHECK(cells == materialize_kv_chain(c.tree, queue[r]));
    CHECK(seq == c.tree.node(queue[r]).seq);
  }
  CHECK_THROWS_AS(departition(batch, 3), NotFound);
}

namespace {

// Fabricated backend output with exact shapes; tokens/cells from the seeded
// generator.
BatchOutput fake_output(testsup::Gen& g, std::size_t rows, int width, int mini_step, int dim,
                        TokenId pad) {
  BatchOutput out;
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<ChildOutput> row;
    for (int j = 0; j < width; ++j) {
      ChildOutput c;
      const int n = g.int_range(1, mini_step);
      c.tokens = testsup::random_tokens(g, n, pad);
      c.kv = testsup::random_cells(g, n, dim);
      c.confidence = g.unit();
      row.push_back(std::move(c));
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace

TEST_CASE("partition_outputs fans children out row-major") {
  Chain c;
  ParallelQueue queue;
  queue.push(c.a);
  queue.push(c.b);
  testsup::Gen g(21);

  BatchOutput out = fake_output(g, 2, 2, 4, 2, c.cfg.pad_token);
  out.rows[0][1].tokens = {30, 31, 32, 33};  // mini_step-sized child
  out.rows[0][1].kv = testsup::random_cells(g, 4, 2);

  const std::vector<NewChild> created = partition_outputs(c.tree, out, queue, 2);
  REQUIRE(created.size() == 4);
  CHECK(c.tree.node(created[0].id).parent == c.a);
  CHECK(c.tree.node(created[1].id).parent == c.a);
  CHECK(c.tree.node(created[2].id).parent == c.b);
  CHECK(c.tree.node(created[3].id).parent == c.b);

  // a full mini-step child carries one cell per token
  const Node& full = c.tree.node(created[1].id);
  CHECK(full.kv.size() == 4);
  CHECK(full.seq.size() == c.tree.node(c.a).seq.size() + 4);
}

TEST_CASE("partition_outputs rejects contract violations") {
  Chain c;
  ParallelQueue queue;
  queue.push(c.a);
  queue.push(c.b);
  testsup::Gen g(22);

  SECTION("row count mismatch") {
    const BatchOutput out = fake_output(g, 3, 2, 4, 2, c.cfg.pad_token);
    CHECK_THROWS_AS(partition_outputs(c.tree, out, queue, 2), ProtocolViolation);
  }
  SECTION("child count mismatch") {
    BatchOutput out = fake_output(g, 2, 2, 4, 2, c.cfg.pad_token);
    out.rows[1].pop_back();
    CHECK_THROWS_AS(partition_outputs(c.tree, out, queue, 2), ProtocolViolation);
  }
  SECTION("reward without termination flag") {
    BatchOutput out = fake_output(g, 2, 2, 4, 2, c.cfg.pad_token);
    out.rows[0][0].terminal_reward = 0.5;
    CHECK_THROWS_AS(partition_outputs(c.tree, out, queue, 2), ProtocolViolation);
  }
}

TEST_CASE("evict_caches frees only finished subtrees") {
  SECTION("terminated leaf, idempotent") {
    Chain c;
    c.tree.node(c.b).mode = Mode::Terminated;
    c.tree.node(c.b).reward = 0.5;
    CHECK(evict_caches(c.tree) == 3);
    CHECK(c.tree.node(c.b).kv.empty());
    CHECK_FALSE(c.tree.node(c.b).seq.empty());  // sequences survive eviction
    CHECK(evict_caches(c.tree) == 0);
  }
  SECTION("internal node with a live descendant keeps its cells") {
    Chain c;  // b is a live candidate leaf under a
    c.tree.node(c.a).mode = Mode::Stopped;
    CHECK(evict_caches(c.tree) == 0);
    CHECK(c.tree.node(c.a).kv.size() == 2);
  }
  SECTION("fully finished chain frees everything below the root") {
    Chain c;
    c.tree.node(c.a).mode = Mode::Terminated;
    c.tree.node(c.a).reward = 0.1;
    c.tree.node(c.b).mode = Mode::Terminated;
    c.tree.node(c.b).reward = 0.2;
    CHECK(evict_caches(c.tree) == 5);  // 2 cells of a + 3 cells of b
  }
}

TEST_CASE("streamline invariants hold on random trees") {
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    auto rt = testsup::make_random_tree(seed, 4, 16, 8);
    testsup::Gen g(seed * 31 + 7);

    // random queue: a shuffled subset of nodes
    ParallelQueue queue;
    for (const NodeId id : rt.all) {
      if (g.unit() < 0.4) queue.push(id);
    }
    if (queue.empty()) queue.push(0);

    const BatchInput batch = assemble_batch(rt.tree, queue, rt.config.pad_token);

    // rectangularity
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      REQUIRE(batch.kv[r].size() == batch.kv_cols());
      REQUIRE(batch.seq[r].size() == batch.seq_cols());
    }
    // padding purity: padded positions are exactly pad / zero, interior never
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      const std::size_t kv_pad = batch.kv_cols() - batch.kv_valid[r];
      for (std::size_t i = 0; i < batch.kv_cols(); ++i) {
        REQUIRE(is_zero_cell(batch.kv[r][i]) == (i < kv_pad));
      }
      for (std::size_t i = 0; i < batch.seq_cols(); ++i) {
        REQUIRE((batch.seq[r][i] == rt.config.pad_token) == (i >= batch.seq_valid[r]));
      }
    }
    // round trip, bit-exact
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      const auto [cells, seq] = departition(batch, r);
      REQUIRE(cells == materialize_kv_chain(rt.tree, queue[r]));
      REQUIRE(seq == rt.tree.node(queue[r]).seq);
    }
    // conservation under partition
    ParallelQueue leaves;
    for (const NodeId id : rt.all) {
      if (rt.tree.children(id).empty() && leaves.size() < 4) leaves.push(id);
    }
    BatchOutput out;
    for (std::size_t r = 0; r < leaves.size(); ++r) {
      std::vector<ChildOutput> row;
      for (int j = 0; j < 2; ++j) {
        ChildOutput co;
        const int n = g.int_range(1, 8);
        co.tokens = testsup::random_tokens(g, n, rt.config.pad_token);
        co.kv = testsup::random_cells(g, n, rt.config.cache_dim);
        co.confidence = g.unit();
        row.push_back(std::move(co));
      }
      out.rows.push_back(std::move(row));
    }
    for (const NewChild& nc : partition_outputs(rt.tree, out, leaves, 2)) {
      const Node& child = rt.tree.node(nc.id);
      const Node& parent = rt.tree.node(*child.parent);
      REQUIRE(child.seq.size() == parent.seq.size() + child.kv.size());
      REQUIRE(materialize_kv_chain(rt.tree, child.id).size() ==
              materialize_kv_chain(rt.tree, parent.id).size() + child.kv.size());
    }
  }
}

TEST_CASE("eviction never strips a path to a live node") {
  auto rt = testsup::make_random_tree(42, 3, 6, 4);
  testsup::Gen g(99);
  // randomly finish some leaves
  for (const NodeId id : rt.all) {
    Node& n = rt.tree.node(id);
    if (rt.tree.children(id).empty() && g.unit() < 0.5) {
      n.mode = Mode::Terminated;
      n.reward = g.unit();
    }
  }
  evict_caches(rt.tree);
  for (const NodeId id : rt.all) {
    const Node& n = rt.tree.node(id);
    if (n.mode != Mode::Candidate) continue;
    if (!rt.tree.children(id).empty()) continue;
    // live candidate leaf: every ancestor still holds its cells
    for (const NodeId anc : rt.tree.ancestors(id)) {
      if (anc == 0) continue;  // the root never has cells
      CHECK_FALSE(rt.tree.node(anc).kv.empty());
    }
    CHECK_FALSE(rt.tree.node(id).kv.empty());
  }
}
