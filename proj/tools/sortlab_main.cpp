// Command-line front end: task generation, training, evaluation, salience
// dumps + heatmaps, and the theory checks.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sortlab/config.hpp"
#include "sortlab/experiments.hpp"
#include "sortlab/heatmap.hpp"
#include "sortlab/losses.hpp"
#include "sortlab/metrics.hpp"
#include "sortlab/plan_scoring.hpp"
#include "sortlab/task.hpp"
#include "sortlab/theory.hpp"
#include "sortlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace sortlab;

namespace {

TrainConfig load_config_or_default(const std::string& path) {
    if (path.empty()) {
        TrainConfig c;
        c.validate();
        return c;
    }
    return TrainConfig::load(path);
}

PlanSource plan_source_from(const TrainConfig& cfg) {
    if (cfg.plan_source == "oracle") return PlanSource::oracle();
    if (cfg.plan_source == "corrupted") return PlanSource::corrupted(cfg.gamma_c);
    return PlanSource::self_extract(cfg.stochastic_extract);
}

int cmd_gen_tasks(const std::string& config_path, uint64_t seed, const std::string& out_dir,
                  int count) {
    const TrainConfig cfg = load_config_or_default(config_path);
    const Vocab vocab = cfg.make_vocab_from_config();
    fs::create_directories(out_dir);
    RngStream rng(seed, "gen-tasks");
    std::vector<Task> tasks;
    for (int i = 0; i < count; ++i) {
        const int k = cfg.k_min + static_cast<int>(rng.next_below(
                          static_cast<uint64_t>(cfg.k_max - cfg.k_min + 1)));
        tasks.push_back(generate_task(vocab, k, rng));
    }
    const std::string path = out_dir + "/tasks.jsonl";
    save_tasks_jsonl(path, tasks);
    std::cout << "wrote " << tasks.size() << " tasks to " << path << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, uint64_t seed, bool seed_set,
              const std::string& out_dir) {
    TrainConfig cfg = load_config_or_default(config_path);
    if (seed_set) cfg.seed = seed;
    const TrainOutcome out = train(cfg, out_dir);
    std::cout << "training done: " << cfg.total_steps << " steps, " << out.sort_updates
              << " auxiliary updates\n"
              << "final mean reward " << out.final_mean_reward << ", final all-wrong count "
              << out.final_all_wrong_count << "\n"
              << "metrics: " << out.metrics_path << "\n"
              << "checkpoint: " << out.final_checkpoint << "\n";
    return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt, const std::string& tasks_path,
             int n_eval, uint64_t seed, const std::string& out_dir) {
    const TrainConfig cfg = load_config_or_default(config_path);
    const Vocab vocab = cfg.make_vocab_from_config();
    const Policy policy = Policy::load_checkpoint(ckpt, vocab.bos);
    const std::vector<Task> tasks = load_tasks_jsonl(tasks_path);
    const EvalResult r = evaluate(policy, vocab, tasks, n_eval, seed, cfg.max_response_len);
    std::cout << "avg@" << n_eval << " accuracy over " << tasks.size() << " tasks: " << r.accuracy
              << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        nlohmann::ordered_json j{{"n_eval", n_eval}, {"accuracy", r.accuracy}};
        auto arr = nlohmann::ordered_json::array();
        for (size_t i = 0; i < tasks.size(); ++i)
            arr.push_back(nlohmann::ordered_json{{"task_id", tasks[i].task_id},
                                                 {"passes", r.pass_counts[i]}});
        j["per_task"] = std::move(arr);
        std::ofstream(out_dir + "/eval.json") << j.dump(2) << "\n";
        std::cout << "wrote " << out_dir << "/eval.json\n";
    }
    return 0;
}

int cmd_salience(const std::string& config_path, const std::string& ckpt,
                 const std::string& tasks_path, uint64_t seed, const std::string& out_dir,
                 int limit) {
    const TrainConfig cfg = load_config_or_default(config_path);
    const Vocab vocab = cfg.make_vocab_from_config();
    const Policy policy = Policy::load_checkpoint(ckpt, vocab.bos);
    std::vector<Task> tasks = load_tasks_jsonl(tasks_path);
    if (limit > 0 && static_cast<int>(tasks.size()) > limit)
        tasks.resize(static_cast<size_t>(limit));

    fs::create_directories(out_dir);
    const std::string dump_path = out_dir + "/salience.jsonl";
    {
        std::ofstream dump(dump_path, std::ios::binary);
        const PlanSource source = plan_source_from(cfg);
        for (size_t i = 0; i < tasks.size(); ++i) {
            const BufferEntry entry = entry_from_task(tasks[i]);
            RngStream rng(seed, "salience", static_cast<uint64_t>(i));
            const std::vector<TokenId> plan = make_plan(vocab, entry, source, policy, rng);
            const auto [bp, tp] = build_prefixes(vocab, entry.prompt, &plan);
            const ScoredReference scored =
                score_reference(policy, bp, tp, entry.reference, vocab);
            write_salience_rows(dump, entry.task_id, scored.rows, cfg.beta);
        }
    }
    const auto ids = emit_salience_heatmap(dump_path, out_dir, vocab);
    std::cout << "wrote " << dump_path << " and " << ids.size() << " heatmaps to " << out_dir
              << "\n";
    return 0;
}

int cmd_check_theory(const std::string& config_path, uint64_t seed, const std::string& out_dir,
                     bool full_report) {
    const TrainConfig cfg = load_config_or_default(config_path);
    const Vocab vocab = cfg.make_vocab_from_config();
    Policy policy(vocab.size(), cfg.window, cfg.embed_dim, cfg.hidden_dim, vocab.bos);
    RngStream init(seed, "init");
    policy.init_uniform(init, 0.3);

    RngStream task_rng(seed, "theory-tasks");
    std::vector<BufferEntry> entries;
    for (int i = 0; i < 32; ++i) {
        const int k = cfg.k_min + static_cast<int>(task_rng.next_below(
                          static_cast<uint64_t>(cfg.k_max - cfg.k_min + 1)));
        entries.push_back(entry_from_task(generate_task(vocab, k, task_rng)));
    }

    nlohmann::ordered_json report;
    bool all_ok = true;

    // per-token bound across corruption strengths
    for (double gamma_c : {0.1, 0.3, 0.5}) {
        size_t violations = 0, tokens = 0;
        nlohmann::ordered_json per_entry = nlohmann::ordered_json::array();
        for (size_t e = 0; e < entries.size(); ++e) {
            RngStream rng(seed, "corrupt", static_cast<uint64_t>(e),
                          static_cast<uint64_t>(gamma_c * 10));
            const auto plan =
                make_plan(vocab, entries[e], PlanSource::corrupted(gamma_c), policy, rng);
            const auto [bp, tp] = build_prefixes(vocab, entries[e].prompt, &plan);
            const auto [bp2, op] = build_prefixes(vocab, entries[e].prompt, &entries[e].plan);
            const auto scored = score_reference(policy, bp, tp, entries[e].reference, vocab);
            const auto orows = oracle_rows(policy, bp2, op, entries[e].reference);
            const BoundReport rep = check_per_token_bound(scored.rows, orows, cfg.beta);
            violations += rep.n_violations;
            tokens += rep.n_tokens;
            if (full_report) per_entry.push_back(bound_report_to_json(rep, true));
        }
        std::cout << "per-token bound  gamma_c=" << gamma_c << "  tokens=" << tokens
                  << "  violations=" << violations << (violations == 0 ? "  OK" : "  FAIL") << "\n";
        all_ok = all_ok && violations == 0;
        report["per_token_gamma_" + std::to_string(gamma_c)] =
            full_report ? per_entry
                        : nlohmann::ordered_json{{"tokens", tokens}, {"violations", violations}};
    }

    // aggregated chain on sampled minibatches
    {
        size_t violations = 0;
        nlohmann::ordered_json agg = nlohmann::ordered_json::array();
        for (int rep_i = 0; rep_i < 10; ++rep_i) {
            RngStream rng(seed, "agg", static_cast<uint64_t>(rep_i));
            std::vector<ScoredEntry> minibatch;
            for (int e = 0; e < 4; ++e) {
                const auto& entry = entries[static_cast<size_t>(rep_i * 3 + e) % entries.size()];
                const auto plan =
                    make_plan(vocab, entry, PlanSource::corrupted(0.3), policy, rng);
                minibatch.push_back(score_entry(policy, vocab, entry, plan, true));
            }
            const AggregatedBoundReport rep = check_aggregated_bound(policy, minibatch, cfg.beta);
            violations += rep.n_violations;
            agg.push_back(aggregated_report_to_json(rep));
        }
        std::cout << "aggregated bound chain  minibatches=10  violations=" << violations
                  << (violations == 0 ? "  OK" : "  FAIL") << "\n";
        all_ok = all_ok && violations == 0;
        report["aggregated"] = agg;
    }

    // stability diagnostics
    {
        RngStream rng(seed, "stability");
        const StabilityEstimate est = estimate_stability(policy, vocab, entries, 0.3, 16, rng);
        std::cout << "stability  gamma_hat=" << est.gamma_hat << "  L_hat=" << est.l_hat
                  << "  G_hat=" << est.g_hat << "  delta_max=" << est.delta_max << "\n";
        const bool lemma_ok = est.l_hat * est.gamma_hat + 1e-12 >= est.delta_max;
        std::cout << "lemma consequence  L_hat*gamma_hat >= delta_max  "
                  << (lemma_ok ? "OK" : "FAIL") << "\n";
        all_ok = all_ok && lemma_ok;
        report["stability"] = nlohmann::ordered_json{{"gamma_hat", est.gamma_hat},
                                                     {"l_hat", est.l_hat},
                                                     {"g_hat", est.g_hat},
                                                     {"delta_max", est.delta_max},
                                                     {"n_positions", est.n_positions}};
    }

    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(out_dir + "/theory_report.json") << report.dump(2) << "\n";
        std::cout << "wrote " << out_dir << "/theory_report.json\n";
    }
    return all_ok ? 0 : 1;
}

int cmd_study(const std::string& spec_path) {
    const StudySpec spec = StudySpec::load(spec_path);
    const StudyResult result = run_study(spec);
    std::cout << "study " << spec.name << " -> " << result.csv_path << "\n";
    for (const auto& s : result.summaries) {
        std::cout << "  " << s.arm << ": accuracy " << s.mean_accuracy << " +/- " << s.std_accuracy
                  << " (n=" << s.n << ")\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale GRPO + auxiliary reference repair laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt, tasks_path, spec_path;
    uint64_t seed = 1;
    int count = 256, n_eval = 16, limit = 8;
    bool full_report = false;

    auto* gen = app.add_subcommand("gen-tasks", "generate a task set as JSON Lines");
    gen->add_option("--config", config_path);
    gen->add_option("--seed", seed);
    gen->add_option("--out", out_dir)->required();
    gen->add_option("--count", count);

    auto* tr = app.add_subcommand("train", "run the interleaved training loop");
    tr->add_option("--config", config_path);
    auto* seed_opt = tr->add_option("--seed", seed);
    tr->add_option("--out", out_dir)->required();

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a task set");
    ev->add_option("--config", config_path);
    ev->add_option("--seed", seed);
    ev->add_option("--out", out_dir);
    ev->add_option("--ckpt", ckpt)->required();
    ev->add_option("--tasks", tasks_path)->required();
    ev->add_option("--n-eval", n_eval);

    auto* sal = app.add_subcommand("salience", "dump per-token salience and render heatmaps");
    sal->add_option("--config", config_path);
    sal->add_option("--seed", seed);
    sal->add_option("--out", out_dir)->required();
    sal->add_option("--ckpt", ckpt)->required();
    sal->add_option("--tasks", tasks_path)->required();
    sal->add_option("--limit", limit);

    auto* th = app.add_subcommand("check-theory", "verify the per-token and aggregated bounds");
    th->add_option("--config", config_path);
    th->add_option("--seed", seed);
    th->add_option("--out", out_dir);
    th->add_flag("--full-report", full_report);

    auto* st = app.add_subcommand("study", "run a sweep study from a spec file");
    st->add_option("--spec", spec_path)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_tasks(config_path, seed, out_dir, count);
        if (tr->parsed()) return cmd_train(config_path, seed, seed_opt->count() > 0, out_dir);
        if (ev->parsed()) return cmd_eval(config_path, ckpt, tasks_path, n_eval, seed, out_dir);
        if (sal->parsed()) return cmd_salience(config_path, ckpt, tasks_path, seed, out_dir, limit);
        if (th->parsed()) return cmd_check_theory(config_path, seed, out_dir, full_report);
        if (st->parsed()) return cmd_study(spec_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
