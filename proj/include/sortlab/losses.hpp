#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sortlab/plan_scoring.hpp"
#include "sortlab/policy.hpp"

namespace sortlab {

enum class LossKind { sft, sft_plan, dft, sort, oracle };

struct LossVariant {
    LossKind kind = LossKind::sort;
    double beta = 0.5;  // sort/oracle only
};

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "sft") return LossKind::sft;
    if (s == "sft_plan") return LossKind::sft_plan;
    if (s == "dft") return LossKind::dft;
    if (s == "sort") return LossKind::sort;
    if (s == "oracle") return LossKind::oracle;
    throw std::invalid_argument("unknown loss variant: " + s);
}

inline std::string loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::sft: return "sft";
        case LossKind::sft_plan: return "sft_plan";
        case LossKind::dft: return "dft";
        case LossKind::sort: return "sort";
        case LossKind::oracle: return "oracle";
    }
    return "?";
}

// One buffered entry scored for the auxiliary update: base and (when a plan
// is present) teacher evaluations, plus oracle-plan scores for the oracle
// variant.
struct ScoredEntry {
    BufferEntry entry;
    std::vector<TokenId> plan;  // conditioning plan actually used (may be empty for sft/dft)
    ScoredReference scored;
    std::vector<OracleScoreRow> oracle;
};

inline ScoredEntry score_entry(const Policy& policy, const Vocab& vocab, const BufferEntry& entry,
                               const std::vector<TokenId>& plan, bool with_oracle) {
    ScoredEntry se;
    se.entry = entry;
    se.plan = plan;
    const auto [base_prefix, teacher_prefix] =
        build_prefixes(vocab, entry.prompt, plan.empty() ? nullptr : &plan);
    se.scored = score_reference(policy, base_prefix, teacher_prefix, entry.reference, vocab);
    if (with_oracle) {
        const auto [bp, oracle_teacher] = build_prefixes(vocab, entry.prompt, &entry.plan);
        se.oracle = oracle_rows(policy, bp, oracle_teacher, entry.reference);
    }
    return se;
}

// Reference-path loss family:  -1/|S| * sum_t w_t * log p_t  with the weight
// and the gradient-bearing branch chosen by the variant. Weights are always
// detached; gradients come only from the scored log-probabilities.
inline std::pair<double, GradientVector> reference_loss_and_grad(
    const Policy& policy, const std::vector<ScoredEntry>& minibatch, const LossVariant& variant,
    bool loss_only = false) {
    if (variant.kind == LossKind::sort || variant.kind == LossKind::oracle) {
        if (!(variant.beta >= 0.0 && variant.beta <= 1.0))
            throw std::invalid_argument("beta must be in [0,1]");
    }
    size_t total = 0;
    for (const auto& se : minibatch) total += se.entry.reference.size();
    GradientVector grad(loss_only ? 0 : policy.layout().total, 0.0);
    if (total == 0) return {0.0, grad};
    const double inv_s = 1.0 / static_cast<double>(total);

    double loss = 0.0;
    for (const auto& se : minibatch) {
        const bool needs_plan = variant.kind == LossKind::sft_plan || variant.kind == LossKind::sort;
        if (needs_plan && se.plan.empty())
            throw std::logic_error("variant requires a conditioning plan");
        if (variant.kind == LossKind::oracle && se.oracle.size() != se.entry.reference.size())
            throw std::logic_error("oracle variant requires oracle rows");
        if (se.scored.rows.size() != se.entry.reference.size())
            throw std::logic_error("entry not scored");

        for (size_t t = 0; t < se.entry.reference.size(); ++t) {
            const TokenScoreRow& row = se.scored.rows[t];
            double w = 1.0;
            double lp = row.lp_base;
            const Policy::ScoredToken* branch = &se.scored.base_path[t];
            switch (variant.kind) {
                case LossKind::sft:
                    break;
                case LossKind::sft_plan:
                    lp = row.lp_plan;
                    branch = &se.scored.teacher_path[t];
                    break;
                case LossKind::dft:
                    w = std::exp(row.lp_base);
                    break;
                case LossKind::sort:
                    w = weight(row, variant.beta);
                    break;
                case LossKind::oracle:
                    w = omega_star(se.oracle[t], variant.beta);
                    break;
            }
            loss -= inv_s * w * lp;
            if (!loss_only && w != 0.0)
                policy.accumulate_log_prob_grad(branch->ctx, branch->token, -inv_s * w, grad);
        }
    }
    return {loss, grad};
}

// Verifies the per-token gradient identity: the sort contribution equals the
// dft contribution rescaled by (p_plan/p_base)^beta. Returns the max relative
// deviation over positions (exact up to rounding).
inline double per_token_gradient_rescaling_check(const Policy& policy, const ScoredEntry& se,
                                                 double beta) {
    double max_dev = 0.0;
    for (size_t t = 0; t < se.scored.rows.size(); ++t) {
        const TokenScoreRow& row = se.scored.rows[t];
        const GradientVector g = policy.log_prob_grad(se.scored.base_path[t].ctx,
                                                      se.scored.base_path[t].token);
        const double w_sort = weight(row, beta);
        const double w_dft = std::exp(row.lp_base);
        const double factor = std::exp(beta * row.salience_hat);
        double max_abs = 0.0, max_diff = 0.0;
        for (double gi : g) {
            const double a = w_sort * gi;
            const double b = factor * (w_dft * gi);
            max_abs = std::max(max_abs, std::abs(a));
            max_diff = std::max(max_diff, std::abs(a - b));
        }
        if (max_abs > 0.0) max_dev = std::max(max_dev, max_diff / max_abs);
    }
    return max_dev;
}

}  // namespace sortlab
