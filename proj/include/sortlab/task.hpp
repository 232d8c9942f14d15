#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sortlab/rng.hpp"
#include "sortlab/vocab.hpp"

namespace sortlab {

struct Reward {
    int value = 0;  // 0 or 1, nothing else
};

// One synthetic reasoning task. The prompt encodes start and target value,
// the reference is the verified op/value trace, and the plan is the op
// subsequence of the reference (the ground-truth outline, known by
// construction).
struct Task {
    std::string task_id;
    std::vector<TokenId> prompt;     // BOS x0 SEP target SEP
    std::vector<TokenId> reference;  // OP_1 v_1 ... OP_K v_K EOS
    std::vector<TokenId> plan;       // OP_1 ... OP_K
    int chain_length = 0;

    int start_value(const Vocab& v) const { return v.value_of(prompt[1]); }
    int target_value(const Vocab& v) const { return v.value_of(prompt[3]); }
};

inline Task generate_task(const Vocab& vocab, int chain_length, RngStream& rng) {
    if (chain_length < 1) throw std::invalid_argument("chain_length must be >= 1");
    Task t;
    t.chain_length = chain_length;
    const int x0 = static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab.modulus)));
    int v = x0;
    for (int i = 0; i < chain_length; ++i) {
        const int op = static_cast<int>(rng.next_below(static_cast<uint64_t>(vocab.n_ops())));
        v = vocab.ops[op].apply(v, vocab.modulus);
        t.plan.push_back(vocab.op_token(op));
        t.reference.push_back(vocab.op_token(op));
        t.reference.push_back(vocab.value_token(v));
    }
    t.reference.push_back(vocab.eos);
    t.prompt = {vocab.bos, vocab.value_token(x0), vocab.sep, vocab.value_token(v), vocab.sep};

    char buf[20];
    std::snprintf(buf, sizeof(buf), "t%016llx",
                  static_cast<unsigned long long>(rng.next_u64()));
    t.task_id = buf;
    return t;
}

// Outcome-only verification: 1 iff the response is exactly K alternating
// (op, value) steps ending in EOS, arithmetically consistent, and landing on
// the prompt's target. Anything malformed is reward 0, never an error.
inline Reward verify(const Vocab& vocab, const Task& task, const std::vector<TokenId>& response) {
    const int K = task.chain_length;
    if (static_cast<int>(response.size()) != 2 * K + 1) return {0};
    if (response.back() != vocab.eos) return {0};
    int v = task.start_value(vocab);
    for (int i = 0; i < K; ++i) {
        const TokenId op_tok = response[2 * i];
        const TokenId val_tok = response[2 * i + 1];
        if (!vocab.is_op(op_tok) || !vocab.is_value(val_tok)) return {0};
        v = vocab.ops[vocab.op_index_of(op_tok)].apply(v, vocab.modulus);
        if (vocab.value_of(val_tok) != v) return {0};
    }
    return {v == task.target_value(vocab) ? 1 : 0};
}

// Exact count of op sequences mapping x0 to the target, by enumeration.
// Diagnostic for task hardness; the generating plan guarantees >= 1.
inline int64_t count_valid_plans(const Vocab& vocab, const Task& task) {
    const int K = task.chain_length;
    const double space = std::pow(static_cast<double>(vocab.n_ops()), K);
    if (space > 1e7) throw std::invalid_argument("plan space too large to enumerate");
    const int x0 = task.start_value(vocab);
    const int target = task.target_value(vocab);

    int64_t count = 0;
    std::vector<int> choice(K, 0);
    for (;;) {
        int v = x0;
        for (int i = 0; i < K; ++i) v = vocab.ops[choice[i]].apply(v, vocab.modulus);
        if (v == target) ++count;
        int pos = K - 1;
        while (pos >= 0 && ++choice[pos] == vocab.n_ops()) choice[pos--] = 0;
        if (pos < 0) break;
    }
    return count;
}

// ---- task set JSON Lines I/O (bit-exact round trip) ----

inline nlohmann::ordered_json task_to_json(const Task& t) {
    return nlohmann::ordered_json{{"task_id", t.task_id},
                                  {"prompt", t.prompt},
                                  {"reference", t.reference},
                                  {"plan", t.plan},
                                  {"K", t.chain_length}};
}

inline Task task_from_json(const nlohmann::json& j) {
    Task t;
    t.task_id = j.at("task_id").get<std::string>();
    t.prompt = j.at("prompt").get<std::vector<TokenId>>();
    t.reference = j.at("reference").get<std::vector<TokenId>>();
    t.plan = j.at("plan").get<std::vector<TokenId>>();
    t.chain_length = j.at("K").get<int>();
    return t;
}

inline void save_tasks_jsonl(const std::string& path, const std::vector<Task>& tasks) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    for (const auto& t : tasks) out << task_to_json(t).dump() << "\n";
}

inline std::vector<Task> load_tasks_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<Task> tasks;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        tasks.push_back(task_from_json(nlohmann::json::parse(line)));
    }
    return tasks;
}

}  // namespace sortlab
