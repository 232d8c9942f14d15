#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "sortlab/losses.hpp"
#include "sortlab/plan_scoring.hpp"

namespace sortlab {

struct BoundTokenRecord {
    int t = 0;
    double actual_error = 0.0;
    double bound_value = 0.0;
    double delta_t = 0.0;
    double p_base = 0.0;
    double beta = 0.0;
};

struct BoundReport {
    size_t n_tokens = 0;
    size_t n_violations = 0;                       // tokens with actual > bound + slack
    double max_margin = std::numeric_limits<double>::infinity();  // min over tokens of bound - actual
    std::vector<BoundTokenRecord> tokens;
};

// Per-token regret bound in its empirically checkable form:
//   |w_beta - w*_beta| <= beta * delta_t * p_base^(1-beta),
// with delta_t = |log p_plan - log p_oracle_plan|. A violation beyond slack
// is an implementation bug, not a statistical event.
inline BoundReport check_per_token_bound(const std::vector<TokenScoreRow>& rows,
                                         const std::vector<OracleScoreRow>& oracle,
                                         double beta, double slack = 1e-9) {
    if (rows.size() != oracle.size()) throw std::logic_error("rows/oracle misaligned");
    BoundReport rep;
    rep.n_tokens = rows.size();
    for (size_t t = 0; t < rows.size(); ++t) {
        if (rows[t].position != oracle[t].position) throw std::logic_error("rows/oracle misaligned");
        BoundTokenRecord rec;
        rec.t = rows[t].position;
        rec.beta = beta;
        rec.p_base = rows[t].p_base;
        rec.delta_t = std::abs(rows[t].lp_plan - oracle[t].lp_oracle);
        rec.actual_error = std::abs(weight(rows[t], beta) - omega_star(oracle[t], beta));
        rec.bound_value = beta * rec.delta_t * std::pow(rows[t].p_base, 1.0 - beta);
        if (rec.actual_error > rec.bound_value + slack) ++rep.n_violations;
        rep.max_margin = std::min(rep.max_margin, rec.bound_value - rec.actual_error);
        rep.tokens.push_back(rec);
    }
    return rep;
}

struct AggregatedBoundReport {
    size_t n_tokens = 0;
    double gradient_distance = 0.0;     // || grad L_sort - grad L_oracle ||
    double per_token_sum_bound = 0.0;   // beta/|S| * sum delta_t p^(1-beta) ||grad log p||
    double coarse_bound = 0.0;          // beta * delta_max * G_hat
    double delta_max = 0.0;
    double g_hat = 0.0;                 // max ||grad log p_base|| over the minibatch
    size_t n_violations = 0;            // broken links in the inequality chain
};

// Aggregated Theorem-1 chain on one scored minibatch: the exact gradient
// distance, the per-token-sum bound, and the coarse length-independent bound,
// in that order.
inline AggregatedBoundReport check_aggregated_bound(const Policy& policy,
                                                    const std::vector<ScoredEntry>& minibatch,
                                                    double beta, double slack = 1e-9) {
    const auto [sort_loss, sort_grad] =
        reference_loss_and_grad(policy, minibatch, LossVariant{LossKind::sort, beta});
    const auto [oracle_loss, oracle_grad] =
        reference_loss_and_grad(policy, minibatch, LossVariant{LossKind::oracle, beta});
    (void)sort_loss;
    (void)oracle_loss;

    AggregatedBoundReport rep;
    double dist2 = 0.0;
    for (size_t i = 0; i < sort_grad.size(); ++i) {
        const double d = sort_grad[i] - oracle_grad[i];
        dist2 += d * d;
    }
    rep.gradient_distance = std::sqrt(dist2);

    size_t total = 0;
    for (const auto& se : minibatch) total += se.entry.reference.size();
    rep.n_tokens = total;
    if (total == 0) return rep;

    double sum = 0.0;
    for (const auto& se : minibatch) {
        for (size_t t = 0; t < se.scored.rows.size(); ++t) {
            const auto& row = se.scored.rows[t];
            const GradientVector g = policy.log_prob_grad(se.scored.base_path[t].ctx,
                                                          se.scored.base_path[t].token);
            double n2 = 0.0;
            for (double gi : g) n2 += gi * gi;
            const double gnorm = std::sqrt(n2);
            const double delta = std::abs(row.lp_plan - se.oracle[t].lp_oracle);
            sum += delta * std::pow(row.p_base, 1.0 - beta) * gnorm;
            rep.delta_max = std::max(rep.delta_max, delta);
            rep.g_hat = std::max(rep.g_hat, gnorm);
        }
    }
    rep.per_token_sum_bound = beta * sum / static_cast<double>(total);
    rep.coarse_bound = beta * rep.delta_max * rep.g_hat;
    if (rep.gradient_distance > rep.per_token_sum_bound + slack) ++rep.n_violations;
    if (rep.per_token_sum_bound > rep.coarse_bound + slack) ++rep.n_violations;
    return rep;
}

// Empirical analogs of the stability constants: gamma_hat from hidden-state
// displacement, L_hat from observed log-prob/hidden-state ratios, G_hat from
// score norms. Reported diagnostics, never assumed constants.
struct StabilityEstimate {
    double gamma_hat = 0.0;
    double l_hat = 0.0;
    double g_hat = 0.0;
    double delta_max = 0.0;
    size_t n_positions = 0;
};

inline StabilityEstimate estimate_stability(const Policy& policy, const Vocab& vocab,
                                            const std::vector<BufferEntry>& entries,
                                            double gamma_c, int probe_count, RngStream& rng) {
    if (probe_count < 1) throw std::invalid_argument("probe_count must be >= 1");
    StabilityEstimate est;
    const int n_probe = std::min<int>(probe_count, static_cast<int>(entries.size()));
    for (int e = 0; e < n_probe; ++e) {
        const BufferEntry& entry = entries[static_cast<size_t>(e)];
        const std::vector<TokenId> corrupted =
            make_plan(vocab, entry, PlanSource::corrupted(gamma_c), policy, rng);
        const auto [base_prefix, oracle_prefix] = build_prefixes(vocab, entry.prompt, &entry.plan);
        const auto [bp2, corrupted_prefix] = build_prefixes(vocab, entry.prompt, &corrupted);
        (void)bp2;

        const auto oracle_path = policy.score_path(oracle_prefix, entry.reference);
        const auto corr_path = policy.score_path(corrupted_prefix, entry.reference);
        const auto base_path = policy.score_path(base_prefix, entry.reference);

        for (size_t t = 0; t < entry.reference.size(); ++t) {
            const std::vector<double> h_o = policy.hidden_state(oracle_path[t].ctx);
            const std::vector<double> h_c = policy.hidden_state(corr_path[t].ctx);
            double d2 = 0.0;
            for (size_t i = 0; i < h_o.size(); ++i) {
                const double d = h_c[i] - h_o[i];
                d2 += d * d;
            }
            const double hdist = std::sqrt(d2);
            const double delta = std::abs(corr_path[t].log_prob - oracle_path[t].log_prob);
            est.gamma_hat = std::max(est.gamma_hat, hdist);
            est.delta_max = std::max(est.delta_max, delta);
            if (hdist > 0.0) est.l_hat = std::max(est.l_hat, delta / hdist);

            const GradientVector g =
                policy.log_prob_grad(base_path[t].ctx, base_path[t].token);
            double n2 = 0.0;
            for (double gi : g) n2 += gi * gi;
            est.g_hat = std::max(est.g_hat, std::sqrt(n2));
            ++est.n_positions;
        }
    }
    return est;
}

inline nlohmann::ordered_json bound_report_to_json(const BoundReport& rep, bool full) {
    nlohmann::ordered_json j{{"n_tokens", rep.n_tokens},
                             {"n_violations", rep.n_violations},
                             {"max_margin", rep.max_margin}};
    if (full) {
        auto arr = nlohmann::ordered_json::array();
        for (const auto& r : rep.tokens) {
            arr.push_back(nlohmann::ordered_json{{"t", r.t},
                                                 {"actual_error", r.actual_error},
                                                 {"bound_value", r.bound_value},
                                                 {"delta_t", r.delta_t},
                                                 {"p_base", r.p_base},
                                                 {"beta", r.beta}});
        }
        j["tokens"] = std::move(arr);
    }
    return j;
}

inline nlohmann::ordered_json aggregated_report_to_json(const AggregatedBoundReport& rep) {
    return nlohmann::ordered_json{{"n_tokens", rep.n_tokens},
                                  {"gradient_distance", rep.gradient_distance},
                                  {"per_token_sum_bound", rep.per_token_sum_bound},
                                  {"coarse_bound", rep.coarse_bound},
                                  {"delta_max", rep.delta_max},
                                  {"g_hat", rep.g_hat},
                                  {"n_violations", rep.n_violations}};
}

}  // namespace sortlab
