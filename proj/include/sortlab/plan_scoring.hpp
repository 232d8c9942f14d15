#pragma once

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sortlab/policy.hpp"
#include "sortlab/repair_buffer.hpp"
#include "sortlab/vocab.hpp"

namespace sortlab {

enum class PlanMode { oracle, corrupted, self_extract };

struct PlanSource {
    PlanMode mode = PlanMode::oracle;
    double corruption_rate = 0.0;  // corrupted mode only
    bool stochastic_extract = false;

    static PlanSource oracle() { return {PlanMode::oracle, 0.0, false}; }
    static PlanSource corrupted(double gamma_c) { return {PlanMode::corrupted, gamma_c, false}; }
    static PlanSource self_extract(bool stochastic = false) {
        return {PlanMode::self_extract, 0.0, stochastic};
    }
};

inline PlanMode parse_plan_mode(const std::string& s) {
    if (s == "oracle") return PlanMode::oracle;
    if (s == "corrupted") return PlanMode::corrupted;
    if (s == "self_extract") return PlanMode::self_extract;
    throw std::invalid_argument("unknown plan source: " + s);
}

inline std::string plan_mode_name(PlanMode m) {
    switch (m) {
        case PlanMode::oracle: return "oracle";
        case PlanMode::corrupted: return "corrupted";
        case PlanMode::self_extract: return "self_extract";
    }
    return "?";
}

// Produce the conditioning plan for one buffered entry: the oracle plan
// verbatim, a token-corrupted copy (replacement only, so positions stay
// aligned), or K op tokens the policy extracts from the reference.
inline std::vector<TokenId> make_plan(const Vocab& vocab, const BufferEntry& entry,
                                      const PlanSource& source, const Policy& policy,
                                      RngStream& rng) {
    switch (source.mode) {
        case PlanMode::oracle:
            return entry.plan;
        case PlanMode::corrupted: {
            std::vector<TokenId> plan = entry.plan;
            for (auto& tok : plan) {
                if (rng.next_double() < source.corruption_rate)
                    tok = vocab.op_token(static_cast<int>(rng.next_below(
                        static_cast<uint64_t>(vocab.n_ops()))));
            }
            return plan;
        }
        case PlanMode::self_extract: {
            std::vector<TokenId> ctx_seq;
            ctx_seq.push_back(vocab.extract);
            ctx_seq.insert(ctx_seq.end(), entry.reference.begin(), entry.reference.end());
            ctx_seq.push_back(vocab.sep);
            Context ctx = policy.context_of(ctx_seq);
            const TokenId lo = vocab.op_token(0);
            const TokenId hi = vocab.op_token(vocab.n_ops() - 1) + 1;
            std::vector<TokenId> plan;
            const size_t k = entry.plan.size();
            for (size_t i = 0; i < k; ++i) {
                const TokenId t = source.stochastic_extract
                                      ? policy.sample_in_range(ctx, lo, hi, rng)
                                      : policy.argmax_in_range(ctx, lo, hi);
                plan.push_back(t);
                ctx.push(t);
            }
            return plan;
        }
    }
    throw std::logic_error("unreachable");
}

// Base prefix is the problem alone; the teacher prefix wraps the plan in
// delimiters behind it. An absent plan degenerates to the base prefix.
inline std::pair<std::vector<TokenId>, std::vector<TokenId>> build_prefixes(
    const Vocab& vocab, const std::vector<TokenId>& prompt,
    const std::vector<TokenId>* plan) {
    if (prompt.empty() || prompt.back() != vocab.sep)
        throw std::invalid_argument("prompt must end with SEP");
    std::vector<TokenId> teacher = prompt;
    if (plan != nullptr) {
        teacher.push_back(vocab.plan_begin);
        teacher.insert(teacher.end(), plan->begin(), plan->end());
        teacher.push_back(vocab.plan_end);
    }
    return {prompt, teacher};
}

// Per reference token: both conditional probabilities, the salience
// log-ratio, and the token class. Log-probs are carried so weights
// exponentiate exactly once.
struct TokenScoreRow {
    int position = 0;
    TokenId token = 0;
    TokenClass token_class = TokenClass::value;
    double lp_base = 0.0;
    double lp_plan = 0.0;
    double p_base = 0.0;
    double p_plan = 0.0;
    double salience_hat = 0.0;  // lp_plan - lp_base
};

// Practical SORT weight family: (p_base)^(1-beta) * (p_plan)^beta, detached.
// beta=0 is the DFT weight, beta=1 the plan-conditioned probability, and
// beta=1/2 their geometric mean.
inline double weight(const TokenScoreRow& row, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must be in [0,1]");
    return std::exp((1.0 - beta) * row.lp_base + beta * row.lp_plan);
}

struct ScoredReference {
    std::vector<TokenScoreRow> rows;
    std::vector<Policy::ScoredToken> base_path;     // gradient-bearing branch
    std::vector<Policy::ScoredToken> teacher_path;  // detached in all weighted losses
};

// Two reference-path evaluations under the same model; only the conditioning
// context differs. Gradients are taken from the base branch only.
inline ScoredReference score_reference(const Policy& policy,
                                       const std::vector<TokenId>& base_prefix,
                                       const std::vector<TokenId>& teacher_prefix,
                                       const std::vector<TokenId>& reference,
                                       const Vocab& vocab) {
    if (reference.empty()) throw std::invalid_argument("empty reference");
    ScoredReference out;
    out.base_path = policy.score_path(base_prefix, reference);
    out.teacher_path = policy.score_path(teacher_prefix, reference);
    out.rows.reserve(reference.size());
    for (size_t t = 0; t < reference.size(); ++t) {
        TokenScoreRow row;
        row.position = static_cast<int>(t);
        row.token = reference[t];
        row.token_class = vocab.classify(reference[t]);
        row.lp_base = out.base_path[t].log_prob;
        row.lp_plan = out.teacher_path[t].log_prob;
        row.p_base = std::exp(row.lp_base);
        row.p_plan = std::exp(row.lp_plan);
        row.salience_hat = row.lp_plan - row.lp_base;
        out.rows.push_back(row);
    }
    return out;
}

// Oracle-side scores: the same quantities under the uncorrupted plan. sigma
// is the ground-truth salience; omega_star the oracle token weight.
struct OracleScoreRow {
    int position = 0;
    double lp_base = 0.0;
    double lp_oracle = 0.0;
    double p_oracle_plan = 0.0;
    double sigma = 0.0;  // lp_oracle - lp_base
};

inline double omega_star(const OracleScoreRow& row, double beta) {
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must be in [0,1]");
    return std::exp((1.0 - beta) * row.lp_base + beta * row.lp_oracle);
}

inline std::vector<OracleScoreRow> oracle_rows(const Policy& policy,
                                               const std::vector<TokenId>& base_prefix,
                                               const std::vector<TokenId>& oracle_teacher_prefix,
                                               const std::vector<TokenId>& reference) {
    if (reference.empty()) throw std::invalid_argument("empty reference");
    const auto base = policy.score_path(base_prefix, reference);
    const auto teach = policy.score_path(oracle_teacher_prefix, reference);
    std::vector<OracleScoreRow> rows;
    rows.reserve(reference.size());
    for (size_t t = 0; t < reference.size(); ++t) {
        OracleScoreRow r;
        r.position = static_cast<int>(t);
        r.lp_base = base[t].log_prob;
        r.lp_oracle = teach[t].log_prob;
        r.p_oracle_plan = std::exp(r.lp_oracle);
        r.sigma = r.lp_oracle - r.lp_base;
        rows.push_back(r);
    }
    return rows;
}

inline const char* token_class_name(TokenClass c) {
    switch (c) {
        case TokenClass::value: return "value";
        case TokenClass::op: return "op";
        case TokenClass::special: return "special";
    }
    return "?";
}

// One JSONL object per reference token; consumed by the heatmap emitter.
inline void write_salience_rows(std::ostream& out, const std::string& task_id,
                                const std::vector<TokenScoreRow>& rows, double beta) {
    for (const auto& r : rows) {
        nlohmann::ordered_json j{{"task_id", task_id},
                                 {"t", r.position},
                                 {"token", r.token},
                                 {"token_class", token_class_name(r.token_class)},
                                 {"p_base", r.p_base},
                                 {"p_plan", r.p_plan},
                                 {"salience_hat", r.salience_hat},
                                 {"weight_beta", weight(r, beta)}};
        out << j.dump() << "\n";
    }
}

}  // namespace sortlab
