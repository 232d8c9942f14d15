#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sortlab/policy.hpp"

namespace sortlab {

struct ClipConfig {
    double eps_low = 0.2;
    double eps_high = 0.28;  // asymmetric band, no KL term
};

struct Rollout {
    std::vector<TokenId> tokens;
    std::vector<double> old_log_probs;  // captured at sampling time
};

struct RolloutGroup {
    std::string task_id;
    std::vector<TokenId> prompt;
    std::vector<Rollout> rollouts;
    std::vector<int> rewards;        // binary
    std::vector<double> advantages;  // normalized within the group
};

// Normalized group advantage A = (r - mean) / (pop_std + eps). Degenerate
// groups (all 0 or all 1) come out exactly zero because the numerator is
// already zero.
inline std::vector<double> compute_advantages(const std::vector<int>& rewards, double eps) {
    const size_t n = rewards.size();
    if (n < 2) throw std::invalid_argument("advantage group needs N >= 2");
    double mean = 0.0;
    for (int r : rewards) mean += r;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (int r : rewards) var += (r - mean) * (r - mean);
    var /= static_cast<double>(n);
    const double denom = std::sqrt(var) + eps;
    std::vector<double> adv(n);
    for (size_t i = 0; i < n; ++i) adv[i] = (rewards[i] - mean) / denom;
    return adv;
}

inline bool is_all_wrong(const RolloutGroup& group) {
    for (int r : group.rewards) {
        if (r != 0) return false;
    }
    return true;
}

// Clipped token-level surrogate, aggregated as a mean over every response
// token in the batch:  -1/T * sum min(rho*A, clip(rho, 1-eps_lo, 1+eps_hi)*A)
// with rho = exp(logp_cur - logp_old). Gradient flows through current
// log-probs only; zero-advantage tokens contribute an exactly zero gradient.
inline std::pair<double, GradientVector> grpo_loss_and_grad(const Policy& policy,
                                                            const std::vector<RolloutGroup>& groups,
                                                            const ClipConfig& clip) {
    size_t total_tokens = 0;
    for (const auto& g : groups) {
        if (g.advantages.size() != g.rollouts.size() || g.rewards.size() != g.rollouts.size())
            throw std::logic_error("rollout group not fully populated");
        for (const auto& r : g.rollouts) {
            if (r.old_log_probs.size() != r.tokens.size())
                throw std::logic_error("old_log_probs missing");
            total_tokens += r.tokens.size();
        }
    }
    GradientVector grad(policy.layout().total, 0.0);
    if (total_tokens == 0) return {0.0, grad};
    const double inv_t = 1.0 / static_cast<double>(total_tokens);

    double loss = 0.0;
    for (const auto& g : groups) {
        for (size_t n = 0; n < g.rollouts.size(); ++n) {
            const double adv = g.advantages[n];
            const auto& roll = g.rollouts[n];
            if (adv == 0.0) continue;  // Eq-collapse groups never touch the gradient
            Context ctx = policy.context_of(g.prompt);
            for (size_t t = 0; t < roll.tokens.size(); ++t) {
                const TokenId tok = roll.tokens[t];
                const double lp_cur = policy.log_probs(ctx)[static_cast<size_t>(tok)];
                const double rho = std::exp(lp_cur - roll.old_log_probs[t]);
                const double clipped = std::min(std::max(rho, 1.0 - clip.eps_low), 1.0 + clip.eps_high);
                const double unclipped_term = rho * adv;
                const double clipped_term = clipped * adv;
                const double term = std::min(unclipped_term, clipped_term);
                loss -= term * inv_t;
                // gradient of the active branch; the clipped branch is flat in rho
                double dterm_dlp = 0.0;
                if (unclipped_term <= clipped_term) {
                    dterm_dlp = rho * adv;
                } else if (rho > 1.0 - clip.eps_low && rho < 1.0 + clip.eps_high) {
                    dterm_dlp = rho * adv;
                }
                if (dterm_dlp != 0.0)
                    policy.accumulate_log_prob_grad(ctx, tok, -dterm_dlp * inv_t, grad);
                ctx.push(tok);
            }
        }
    }
    return {loss, grad};
}

}  // namespace sortlab
