#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sortlab/config.hpp"
#include "sortlab/grpo.hpp"
#include "sortlab/losses.hpp"
#include "sortlab/metrics.hpp"
#include "sortlab/optimizer.hpp"
#include "sortlab/plan_scoring.hpp"
#include "sortlab/policy.hpp"
#include "sortlab/repair_buffer.hpp"
#include "sortlab/task.hpp"

namespace sortlab {

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline BufferEntry entry_from_task(const Task& t, int64_t step = 0) {
    return BufferEntry{t.task_id, t.prompt, t.reference, t.plan, step};
}

// One rollout group for one prompt: N sampled responses, rewards, advantages,
// old log-probs captured at sampling time.
inline RolloutGroup collect_group(const Policy& policy, const Vocab& vocab, const Task& task,
                                  int n_rollouts, int max_len, double adv_eps, uint64_t seed,
                                  int64_t step, int prompt_idx, double* entropy_sum,
                                  int64_t* token_count) {
    RolloutGroup g;
    g.task_id = task.task_id;
    g.prompt = task.prompt;
    for (int n = 0; n < n_rollouts; ++n) {
        RngStream rng(seed, "rollout", static_cast<uint64_t>(step),
                      static_cast<uint64_t>(prompt_idx), static_cast<uint64_t>(n));
        Policy::SampleResult s = policy.sample_scored(task.prompt, max_len, vocab.eos, rng);
        if (entropy_sum) *entropy_sum += s.entropy_sum;
        if (token_count) *token_count += static_cast<int64_t>(s.tokens.size());
        g.rewards.push_back(verify(vocab, task, s.tokens).value);
        g.rollouts.push_back(Rollout{std::move(s.tokens), std::move(s.log_probs)});
    }
    g.advantages = compute_advantages(g.rewards, adv_eps);
    return g;
}

struct EvalResult {
    double accuracy = 0.0;           // avg@N over all (task, sample) pairs
    std::vector<int> pass_counts;    // per task
};

inline EvalResult evaluate(const Policy& policy, const Vocab& vocab,
                           const std::vector<Task>& tasks, int n_eval, uint64_t seed,
                           int max_len) {
    EvalResult r;
    int64_t passes = 0;
    for (size_t i = 0; i < tasks.size(); ++i) {
        int count = 0;
        for (int n = 0; n < n_eval; ++n) {
            RngStream rng(seed, "eval", static_cast<uint64_t>(i), static_cast<uint64_t>(n));
            const auto resp = policy.sample_response(tasks[i].prompt, max_len, vocab.eos, rng);
            count += verify(vocab, tasks[i], resp).value;
        }
        r.pass_counts.push_back(count);
        passes += count;
    }
    if (!tasks.empty())
        r.accuracy = static_cast<double>(passes) / (static_cast<double>(tasks.size()) * n_eval);
    return r;
}

struct TrainOutcome {
    std::string metrics_path;
    std::string final_checkpoint;
    int64_t sort_updates = 0;
    double final_mean_reward = 0.0;
    int final_all_wrong_count = 0;
};

namespace detail {

inline void dump_offending_batch(const std::string& out_dir, const std::vector<Task>& tasks,
                                 const std::vector<RolloutGroup>& groups, int64_t step) {
    std::ofstream out(out_dir + "/abort_dump.jsonl", std::ios::binary);
    for (size_t i = 0; i < groups.size(); ++i) {
        nlohmann::ordered_json j{{"step", step},
                                 {"task", task_to_json(tasks[i])},
                                 {"rewards", groups[i].rewards},
                                 {"advantages", groups[i].advantages}};
        auto resp = nlohmann::ordered_json::array();
        for (const auto& r : groups[i].rollouts) resp.push_back(r.tokens);
        j["responses"] = std::move(resp);
        out << j.dump() << "\n";
    }
}

}  // namespace detail

// Interleaved optimization: one GRPO update per step, zero-reward prompts
// buffered, and at most one auxiliary reference update per step once the
// buffer can fill a minibatch. Fully deterministic given the config seed.
inline TrainOutcome train(const TrainConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    const Vocab vocab = cfg.make_vocab_from_config();

    Policy policy(vocab.size(), cfg.window, cfg.embed_dim, cfg.hidden_dim, vocab.bos);
    if (cfg.init_checkpoint.empty()) {
        RngStream init_rng(cfg.seed, "init");
        policy.init_uniform(init_rng);
    } else {
        policy = Policy::load_checkpoint(cfg.init_checkpoint, vocab.bos);
        if (policy.vocab_size() != vocab.size() || policy.window_size() != cfg.window)
            throw std::invalid_argument("init checkpoint incompatible with config");
    }
    Optimizer opt(parse_optimizer(cfg.optimizer), policy.layout().total);
    RepairBuffer buffer(static_cast<size_t>(cfg.batch_aux),
                        static_cast<size_t>(cfg.buffer_capacity));
    const ClipConfig clip{cfg.eps_low, cfg.eps_high};
    const bool aux_enabled = cfg.loss_variant != "grpo_only";
    LossVariant variant;
    if (aux_enabled) variant = LossVariant{parse_loss_kind(cfg.loss_variant), cfg.beta};

    // Fixed held-out probe references for the periodic SFT-path diagnostic.
    std::vector<ScoredEntry> probe_template;
    {
        RngStream probe_rng(cfg.seed, "probe");
        for (int i = 0; i < 32; ++i) {
            const int k = cfg.k_min + static_cast<int>(probe_rng.next_below(
                              static_cast<uint64_t>(cfg.k_max - cfg.k_min + 1)));
            Task t = generate_task(vocab, k, probe_rng);
            ScoredEntry se;
            se.entry = entry_from_task(t);
            probe_template.push_back(std::move(se));
        }
    }

    MetricsWriter metrics(out_dir + "/metrics.jsonl");
    int64_t sort_updates = 0;
    TrainOutcome outcome;
    outcome.metrics_path = out_dir + "/metrics.jsonl";

    for (int64_t step = 1; step <= cfg.total_steps; ++step) {
        const auto t0 = std::chrono::steady_clock::now();

        std::vector<Task> tasks;
        std::vector<RolloutGroup> groups;
        MetricsRecord rec;
        rec.step = step;

        // Numerical failure anywhere in the step aborts with a post-mortem
        // dump of the offending batch.
        try {
            RngStream task_rng(cfg.seed, "task", static_cast<uint64_t>(step));
            for (int i = 0; i < cfg.batch_rl; ++i) {
                const int k = cfg.k_min + static_cast<int>(task_rng.next_below(
                                  static_cast<uint64_t>(cfg.k_max - cfg.k_min + 1)));
                tasks.push_back(generate_task(vocab, k, task_rng));
            }

            double entropy_sum = 0.0;
            int64_t token_count = 0;
            int64_t reward_sum = 0;
            groups.reserve(tasks.size());
            for (size_t i = 0; i < tasks.size(); ++i) {
                groups.push_back(collect_group(policy, vocab, tasks[i], cfg.n_rollouts,
                                               cfg.max_response_len, cfg.adv_epsilon, cfg.seed,
                                               step, static_cast<int>(i), &entropy_sum,
                                               &token_count));
                for (int r : groups.back().rewards) reward_sum += r;
            }

            const auto [grpo_loss, grpo_grad] = grpo_loss_and_grad(policy, groups, clip);
            if (!std::isfinite(grpo_loss) || !all_finite(grpo_grad))
                throw std::runtime_error("non-finite GRPO loss/gradient");
            opt.apply_update(policy.params(), grpo_grad, cfg.learning_rate);

            int all_wrong = 0;
            for (size_t i = 0; i < groups.size(); ++i) {
                if (!is_all_wrong(groups[i])) continue;
                ++all_wrong;
                if (cfg.dedupe_buffer) {
                    bool present = false;
                    for (const auto& e : buffer.entries()) {
                        if (e.task_id == tasks[i].task_id) {
                            present = true;
                            break;
                        }
                    }
                    if (present) continue;
                }
                buffer.enqueue(entry_from_task(tasks[i], step));
            }

            rec.mean_reward = static_cast<double>(reward_sum) /
                              (static_cast<double>(cfg.batch_rl) * cfg.n_rollouts);
            rec.all_wrong_count = all_wrong;
            rec.mean_response_length = static_cast<double>(token_count) /
                                       (static_cast<double>(cfg.batch_rl) * cfg.n_rollouts);
            rec.mean_token_entropy =
                token_count > 0 ? entropy_sum / static_cast<double>(token_count) : 0.0;
            rec.grpo_loss = grpo_loss;

            if (aux_enabled && buffer.ready()) {
                RngStream aux_rng(cfg.seed, "aux", static_cast<uint64_t>(step));
                const std::vector<BufferEntry> batch = buffer.sample_and_remove(aux_rng);
                PlanSource source;
                if (cfg.plan_source == "oracle") {
                    source = PlanSource::oracle();
                } else if (cfg.plan_source == "corrupted") {
                    source = PlanSource::corrupted(cfg.gamma_c);
                } else {
                    source = PlanSource::self_extract(cfg.stochastic_extract);
                }
                std::vector<ScoredEntry> minibatch;
                minibatch.reserve(batch.size());
                for (size_t e = 0; e < batch.size(); ++e) {
                    RngStream plan_rng(cfg.seed, "plan", static_cast<uint64_t>(step),
                                       static_cast<uint64_t>(e));
                    const std::vector<TokenId> plan =
                        make_plan(vocab, batch[e], source, policy, plan_rng);
                    minibatch.push_back(score_entry(policy, vocab, batch[e], plan,
                                                    variant.kind == LossKind::oracle));
                }
                const auto [sort_loss, sort_grad] =
                    reference_loss_and_grad(policy, minibatch, variant);
                if (!std::isfinite(sort_loss) || !all_finite(sort_grad))
                    throw std::runtime_error("non-finite auxiliary loss/gradient");
                opt.apply_update(policy.params(), sort_grad, cfg.learning_rate);
                ++sort_updates;
                rec.sort_loss = sort_loss;
            }
        } catch (const std::runtime_error& e) {
            detail::dump_offending_batch(out_dir, tasks, groups, step);
            throw std::runtime_error(std::string(e.what()) + " at step " + std::to_string(step) +
                                     " (offending batch dumped to " + out_dir +
                                     "/abort_dump.jsonl)");
        }

        if (step % 10 == 0) {
            std::vector<ScoredEntry> probe = probe_template;
            for (auto& se : probe) {
                const auto [bp, tp] = build_prefixes(vocab, se.entry.prompt, nullptr);
                se.scored = score_reference(policy, bp, tp, se.entry.reference, vocab);
            }
            rec.sft_path_loss =
                reference_loss_and_grad(policy, probe, LossVariant{LossKind::sft, 0.0}, true).first;
        }

        rec.buffer_size = static_cast<int64_t>(buffer.size());
        rec.sort_updates_so_far = sort_updates;
        if (cfg.measure_wall_time) {
            rec.wall_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
        }
        metrics.append(rec);

        if (step % cfg.save_every == 0) {
            policy.save_checkpoint(out_dir + "/ckpt_" + std::to_string(step) + ".bin", step);
        }
        if (step == cfg.total_steps) {
            outcome.final_mean_reward = rec.mean_reward;
            outcome.final_all_wrong_count = rec.all_wrong_count;
        }
    }

    outcome.final_checkpoint = out_dir + "/ckpt_final.bin";
    policy.save_checkpoint(outcome.final_checkpoint, cfg.total_steps);
    outcome.sort_updates = sort_updates;
    return outcome;
}

// ---- reference pretraining (used to build plan-aware but plan-blind policies) ----

struct PretrainOptions {
    int steps = 1500;
    int batch = 32;
    double lr = 1e-2;
    double teacher_prob = 0.5;  // fraction of examples scored under the teacher prefix
    uint64_t seed = 7;
    int k_min = 5;
    int k_max = 5;
    bool ops_under_teacher = true;  // supervise op tokens when the plan is in context
    bool ops_under_base = false;    // supervise op tokens from the problem alone
};

// Cross-entropy on reference paths with a supervision mask: value tokens and
// EOS are always supervised (arithmetic continuation), op tokens per the
// flags. With ops supervised only under the teacher prefix the policy learns
// to compute and to read an in-context plan but is never trained to choose
// one from the problem alone; adding base-prefix op supervision yields a
// format-competent policy whose plan choice tracks the reference posterior.
inline void pretrain_reference(Policy& policy, const Vocab& vocab, const PretrainOptions& opts) {
    Optimizer opt(OptimizerKind::adam, policy.layout().total);
    for (int step = 1; step <= opts.steps; ++step) {
        RngStream rng(opts.seed, "pretrain", static_cast<uint64_t>(step));
        GradientVector grad(policy.layout().total, 0.0);
        int64_t supervised = 0;

        struct Item {
            std::vector<Policy::ScoredToken> path;
            std::vector<bool> mask;
        };
        std::vector<Item> items;
        for (int b = 0; b < opts.batch; ++b) {
            const int k = opts.k_min + static_cast<int>(rng.next_below(
                              static_cast<uint64_t>(opts.k_max - opts.k_min + 1)));
            const Task t = generate_task(vocab, k, rng);
            const bool teacher = rng.next_double() < opts.teacher_prob;
            const auto [bp, tp] = build_prefixes(vocab, t.prompt, teacher ? &t.plan : nullptr);
            Item item;
            item.path = policy.score_path(teacher ? tp : bp, t.reference);
            item.mask.resize(t.reference.size());
            for (size_t i = 0; i < t.reference.size(); ++i) {
                const bool is_op = vocab.is_op(t.reference[i]);
                item.mask[i] =
                    is_op ? (teacher ? opts.ops_under_teacher : opts.ops_under_base) : true;
                if (item.mask[i]) ++supervised;
            }
            items.push_back(std::move(item));
        }
        if (supervised == 0) continue;
        const double coeff = -1.0 / static_cast<double>(supervised);
        for (const auto& item : items) {
            for (size_t i = 0; i < item.path.size(); ++i) {
                if (!item.mask[i]) continue;
                policy.accumulate_log_prob_grad(item.path[i].ctx, item.path[i].token, coeff, grad);
            }
        }
        opt.apply_update(policy.params(), grad, opts.lr);
    }
}

// Greedy accuracy at value-token positions of reference paths (base prefix).
inline double value_token_accuracy(const Policy& policy, const Vocab& vocab,
                                   const std::vector<Task>& tasks) {
    int64_t hits = 0, total = 0;
    for (const auto& t : tasks) {
        Context ctx = policy.context_of(t.prompt);
        for (TokenId tok : t.reference) {
            if (vocab.is_value(tok)) {
                const std::vector<double> lg = policy.logits(ctx);
                TokenId best = 0;
                for (size_t z = 1; z < lg.size(); ++z) {
                    if (lg[z] > lg[static_cast<size_t>(best)]) best = static_cast<TokenId>(z);
                }
                hits += (best == tok) ? 1 : 0;
                ++total;
            }
            ctx.push(tok);
        }
    }
    return total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

}  // namespace sortlab
