#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sortlab/task.hpp"

using namespace sortlab;

namespace {

// Builds the reference/prompt for a chosen start value and plan, mirroring
// the Task invariants by direct application of the affine maps.
Task fixed_task(const Vocab& vocab, int x0, const std::vector<int>& plan_ops) {
    Task t;
    t.task_id = "fixed";
    t.chain_length = static_cast<int>(plan_ops.size());
    int v = x0;
    for (int op : plan_ops) {
        v = vocab.ops[static_cast<size_t>(op)].apply(v, vocab.modulus);
        t.plan.push_back(vocab.op_token(op));
        t.reference.push_back(vocab.op_token(op));
        t.reference.push_back(vocab.value_token(v));
    }
    t.reference.push_back(vocab.eos);
    t.prompt = {vocab.bos, vocab.value_token(x0), vocab.sep, vocab.value_token(v), vocab.sep};
    return t;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("vocab token ranges are dense and disjoint") {
    const Vocab v = default_vocab();
    REQUIRE(v.size() == 17 + 5 + 6);
    for (TokenId t = 0; t < v.size(); ++t) {
        const int memberships = (v.is_value(t) ? 1 : 0) + (v.is_op(t) ? 1 : 0) +
                                (v.classify(t) == TokenClass::special ? 1 : 0);
        REQUIRE(memberships == 1);
    }
    REQUIRE_THROWS_AS(make_vocab(4, {AffineOp{1, 1}, AffineOp{1, 2}}), std::invalid_argument);
    REQUIRE_THROWS_AS(make_vocab(17, {AffineOp{1, 1}}), std::invalid_argument);
}

TEST_CASE("op descriptor parsing") {
    REQUIRE(parse_op("+2").apply(3, 17) == 5);
    REQUIRE(parse_op("x3").apply(5, 17) == 15);
    REQUIRE(parse_op("*3").apply(6, 17) == 1);  // 18 mod 17
    REQUIRE_THROWS_AS(parse_op("foo"), std::invalid_argument);
}

TEST_CASE("hand-checked chain: x0=3, plan [+2, x3] mod 17") {
    const Vocab v = make_vocab(17, {parse_op("+2"), parse_op("x3")});
    const Task t = fixed_task(v, 3, {0, 1});
    REQUIRE(t.reference == std::vector<TokenId>{v.op_token(0), v.value_token(5), v.op_token(1),
                                                v.value_token(15), v.eos});
    REQUIRE(t.target_value(v) == 15);
    REQUIRE(verify(v, t, t.reference).value == 1);
}

TEST_CASE("identity op fixes the value at K=1") {
    const Vocab v = make_vocab(17, {AffineOp{1, 0}, parse_op("+1")});
    const Task t = fixed_task(v, 4, {0});
    REQUIRE(t.reference == std::vector<TokenId>{v.op_token(0), v.value_token(4), v.eos});
    REQUIRE(t.target_value(v) == 4);
}

TEST_CASE("generated tasks satisfy their invariants") {
    const Vocab v = default_vocab();
    RngStream rng(123, "tasks");
    for (int i = 0; i < 200; ++i) {
        const int k = 1 + static_cast<int>(rng.next_below(5));
        const Task t = generate_task(v, k, rng);
        REQUIRE(t.chain_length == k);
        REQUIRE(t.reference.size() == static_cast<size_t>(2 * k + 1));
        REQUIRE(t.plan.size() == static_cast<size_t>(k));
        // plan equals the op subsequence of the reference
        for (int j = 0; j < k; ++j) REQUIRE(t.plan[static_cast<size_t>(j)] == t.reference[static_cast<size_t>(2 * j)]);
        // chain arithmetic is consistent and the reference verifies
        REQUIRE(verify(v, t, t.reference).value == 1);
        REQUIRE(count_valid_plans(v, t) >= 1);
    }
}

TEST_CASE("same seed and arguments give a bit-identical task") {
    const Vocab v = default_vocab();
    RngStream a(42, "gen", 7);
    RngStream b(42, "gen", 7);
    const Task ta = generate_task(v, 4, a);
    const Task tb = generate_task(v, 4, b);
    REQUIRE(ta.task_id == tb.task_id);
    REQUIRE(ta.prompt == tb.prompt);
    REQUIRE(ta.reference == tb.reference);
    REQUIRE(ta.plan == tb.plan);
}

TEST_CASE("verify totalizes over malformed responses") {
    const Vocab v = make_vocab(17, {parse_op("+2"), parse_op("x3")});
    const Task t = fixed_task(v, 3, {0, 1});

    REQUIRE(verify(v, t, {v.op_token(0), v.value_token(5), v.op_token(1), v.value_token(15), v.eos}).value == 1);
    // wrong final value
    REQUIRE(verify(v, t, {v.op_token(0), v.value_token(5), v.op_token(1), v.value_token(14), v.eos}).value == 0);
    // empty, truncated, missing EOS, swapped op/value, trailing garbage, wrong K
    REQUIRE(verify(v, t, {}).value == 0);
    REQUIRE(verify(v, t, {v.op_token(0), v.value_token(5)}).value == 0);
    REQUIRE(verify(v, t, {v.op_token(0), v.value_token(5), v.op_token(1), v.value_token(15)}).value == 0);
    REQUIRE(verify(v, t, {v.value_token(5), v.op_token(0), v.op_token(1), v.value_token(15), v.eos}).value == 0);
    REQUIRE(verify(v, t, {v.op_token(0), v.value_token(5), v.op_token(1), v.value_token(15), v.eos, v.eos}).value == 0);
    REQUIRE(verify(v, t, {v.op_token(1), v.value_token(9), v.eos}).value == 0);
    // intermediate value inconsistent even though the final matches
    REQUIRE(verify(v, t, {v.op_token(0), v.value_token(6), v.op_token(1), v.value_token(15), v.eos}).value == 0);
}

TEST_CASE("verify is pure") {
    const Vocab v = default_vocab();
    RngStream rng(5, "pure");
    const Task t = generate_task(v, 3, rng);
    const auto r1 = verify(v, t, t.reference);
    const auto r2 = verify(v, t, t.reference);
    REQUIRE(r1.value == r2.value);
}

TEST_CASE("count_valid_plans exact cases") {
    {
        const Vocab v = make_vocab(17, {parse_op("+2"), parse_op("x3")});
        const Task t = fixed_task(v, 3, {0});  // target 5; x3 gives 9
        REQUIRE(count_valid_plans(v, t) == 1);
    }
    {
        const Vocab v = make_vocab(17, {parse_op("+0"), parse_op("x1")});  // two identity encodings
        const Task t = fixed_task(v, 4, {0});
        REQUIRE(count_valid_plans(v, t) == 2);
    }
    {
        const Vocab v = default_vocab();
        RngStream rng(9, "guard");
        Task t = generate_task(v, 3, rng);
        t.chain_length = 11;  // 5^11 > 1e7
        REQUIRE_THROWS_AS(count_valid_plans(v, t), std::invalid_argument);
    }
}

TEST_CASE("task set JSONL round trip is bit-exact") {
    const Vocab v = default_vocab();
    RngStream rng(77, "jsonl");
    std::vector<Task> tasks;
    for (int i = 0; i < 25; ++i) tasks.push_back(generate_task(v, 1 + i % 5, rng));

    const auto dir = std::filesystem::temp_directory_path() / "sortlab_task_io";
    std::filesystem::create_directories(dir);
    const std::string p1 = (dir / "tasks_a.jsonl").string();
    const std::string p2 = (dir / "tasks_b.jsonl").string();
    save_tasks_jsonl(p1, tasks);
    const std::vector<Task> loaded = load_tasks_jsonl(p1);
    save_tasks_jsonl(p2, loaded);
    REQUIRE(read_file(p1) == read_file(p2));
    REQUIRE(loaded.size() == tasks.size());
    for (size_t i = 0; i < tasks.size(); ++i) {
        REQUIRE(loaded[i].task_id == tasks[i].task_id);
        REQUIRE(loaded[i].prompt == tasks[i].prompt);
        REQUIRE(loaded[i].reference == tasks[i].reference);
        REQUIRE(loaded[i].plan == tasks[i].plan);
        REQUIRE(loaded[i].chain_length == tasks[i].chain_length);
    }
}
