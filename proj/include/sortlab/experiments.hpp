#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sortlab/config.hpp"
#include "sortlab/metrics.hpp"
#include "sortlab/trainer.hpp"

namespace sortlab {

// Shortest round-trip decimal form, so result tables are byte-reproducible.
inline std::string fmt_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Kendall/Mann-Kendall trend statistic in [-1, 1]: S / (n(n-1)/2) with
// S = sum_{i<j} sgn(x_j - x_i). Constant series give 0, a strictly
// decreasing series gives -1.
inline double mann_kendall_tau(const std::vector<double>& xs) {
    const size_t n = xs.size();
    if (n < 2) return 0.0;
    int64_t s = 0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            if (xs[j] > xs[i]) ++s;
            else if (xs[j] < xs[i]) --s;
        }
    }
    return static_cast<double>(s) / (static_cast<double>(n) * (n - 1) / 2.0);
}

// One-sided exact sign test: P(X >= wins) for X ~ Binomial(wins+losses, 1/2).
// Ties are dropped by the caller.
inline double sign_test_p_value(int wins, int losses) {
    const int n = wins + losses;
    if (n == 0) return 1.0;
    // sum C(n,k)/2^n for k = wins..n, in log space
    double p = 0.0;
    for (int k = wins; k <= n; ++k) {
        double log_c = 0.0;
        for (int i = 0; i < k; ++i)
            log_c += std::log(static_cast<double>(n - i)) - std::log(static_cast<double>(i + 1));
        p += std::exp(log_c - n * std::log(2.0));
    }
    return std::min(p, 1.0);
}

// A scripted study: sweep one TrainConfig field over values x seeds, train
// and evaluate each arm, and aggregate a results table.
struct StudySpec {
    std::string name;
    TrainConfig base;
    std::string sweep_field;
    std::vector<std::string> sweep_values;
    std::vector<uint64_t> seeds;
    std::string out_dir;
    int n_eval = 16;
    int eval_tasks = 64;
    uint64_t eval_seed = 9001;

    static StudySpec load(const std::string& path) {
        KeyValueFile kv = KeyValueFile::parse_file(path);
        StudySpec s;
        s.name = kv.take_string("name", "study");
        const std::string base_path = kv.take_string("base_config", "");
        s.base = base_path.empty() ? TrainConfig{} : TrainConfig::load(base_path);
        s.sweep_field = kv.take_string("sweep_field", "");
        for (const auto& v : split_list(kv.take_string("sweep_values", ""))) s.sweep_values.push_back(v);
        for (const auto& v : split_list(kv.take_string("seeds", "1,2,3")))
            s.seeds.push_back(std::stoull(v));
        s.out_dir = kv.take_string("out_dir", "study_out");
        s.n_eval = static_cast<int>(kv.take_int("n_eval", s.n_eval));
        s.eval_tasks = static_cast<int>(kv.take_int("eval_tasks", s.eval_tasks));
        s.eval_seed = kv.take_u64("eval_seed", s.eval_seed);
        // anything left is a TrainConfig override applied to the base
        s.base = TrainConfig::from_kv(kv, s.base);
        kv.reject_leftovers("study");
        s.base.validate();
        if (s.sweep_field.empty() || s.sweep_values.empty())
            throw std::invalid_argument("study needs sweep_field and sweep_values");
        if (s.seeds.size() < 3)
            throw std::invalid_argument("comparative studies need >= 3 seeds");
        return s;
    }
};

struct StudyRow {
    std::string arm;
    uint64_t seed = 0;
    double accuracy = 0.0;
    double mean_reward_final = 0.0;
    int all_wrong_final = 0;
    bool failed = false;
    std::string metrics_path;
};

struct ArmSummary {
    std::string arm;
    double mean_accuracy = 0.0;
    double std_accuracy = 0.0;
    int n = 0;
};

struct StudyResult {
    std::vector<StudyRow> rows;
    std::vector<ArmSummary> summaries;
    std::string csv_path;
};

// TrainConfig fields that make a run arm: "loss_variant=sort" etc.
inline TrainConfig arm_config(const StudySpec& spec, const std::string& value, uint64_t seed) {
    TrainConfig cfg = spec.base;
    cfg.set_field(spec.sweep_field, value);
    cfg.seed = seed;
    return cfg;
}

// Held-out evaluation tasks, shared across every arm and seed of the study.
inline std::vector<Task> study_eval_tasks(const StudySpec& spec) {
    const Vocab vocab = spec.base.make_vocab_from_config();
    RngStream rng(spec.eval_seed, "study_eval");
    std::vector<Task> tasks;
    for (int i = 0; i < spec.eval_tasks; ++i) {
        const int k = spec.base.k_min + static_cast<int>(rng.next_below(
                          static_cast<uint64_t>(spec.base.k_max - spec.base.k_min + 1)));
        tasks.push_back(generate_task(vocab, k, rng));
    }
    return tasks;
}

inline void write_study_csv(const std::string& path, const std::vector<StudyRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "arm,seed,accuracy,mean_reward_final,all_wrong_final,failed\n";
    for (const auto& r : rows) {
        out << r.arm << "," << r.seed << "," << fmt_double(r.accuracy) << ","
            << fmt_double(r.mean_reward_final) << "," << r.all_wrong_final << ","
            << (r.failed ? "1" : "0") << "\n";
    }
}

inline StudyResult run_study(const StudySpec& spec) {
    std::filesystem::create_directories(spec.out_dir);
    const std::vector<Task> eval_tasks = study_eval_tasks(spec);
    const Vocab vocab = spec.base.make_vocab_from_config();

    StudyResult result;
    for (const auto& value : spec.sweep_values) {
        for (uint64_t seed : spec.seeds) {
            StudyRow row;
            row.arm = spec.sweep_field + "=" + value;
            row.seed = seed;
            const std::string run_dir =
                spec.out_dir + "/" + value + "_seed" + std::to_string(seed);
            try {
                const TrainConfig cfg = arm_config(spec, value, seed);
                const TrainOutcome out = train(cfg, run_dir);
                int64_t step = 0;
                const Policy policy = Policy::load_checkpoint(out.final_checkpoint, vocab.bos, &step);
                const EvalResult ev =
                    evaluate(policy, vocab, eval_tasks, spec.n_eval, spec.eval_seed,
                             cfg.max_response_len);
                row.accuracy = ev.accuracy;
                row.mean_reward_final = out.final_mean_reward;
                row.all_wrong_final = out.final_all_wrong_count;
                row.metrics_path = out.metrics_path;
            } catch (const std::exception&) {
                row.failed = true;
            }
            result.rows.push_back(row);
        }
    }

    std::map<std::string, std::vector<double>> by_arm;
    std::vector<std::string> arm_order;
    for (const auto& r : result.rows) {
        if (r.failed) continue;
        if (by_arm.find(r.arm) == by_arm.end()) arm_order.push_back(r.arm);
        by_arm[r.arm].push_back(r.accuracy);
    }
    for (const auto& arm : arm_order) {
        const auto& accs = by_arm[arm];
        ArmSummary s;
        s.arm = arm;
        s.n = static_cast<int>(accs.size());
        for (double a : accs) s.mean_accuracy += a;
        s.mean_accuracy /= s.n;
        for (double a : accs) s.std_accuracy += (a - s.mean_accuracy) * (a - s.mean_accuracy);
        s.std_accuracy = s.n > 1 ? std::sqrt(s.std_accuracy / (s.n - 1)) : 0.0;
        result.summaries.push_back(s);
    }

    result.csv_path = spec.out_dir + "/" + spec.name + ".csv";
    write_study_csv(result.csv_path, result.rows);
    return result;
}

// Per-arm all-wrong-count decay over training: initial vs final mean across
// seeds plus the Mann-Kendall trend of each run, averaged.
struct DecaySummary {
    std::string arm;
    double initial_mean = 0.0;
    double final_mean = 0.0;
    double mean_tau = 0.0;
    int n_runs = 0;
};

inline DecaySummary all_wrong_decay_report(const std::string& arm,
                                           const std::vector<std::string>& metrics_paths) {
    if (metrics_paths.empty()) throw std::invalid_argument("no metrics logs for arm " + arm);
    DecaySummary s;
    s.arm = arm;
    for (const auto& path : metrics_paths) {
        const auto recs = load_metrics_jsonl(path);
        if (recs.empty()) continue;
        std::vector<double> counts;
        counts.reserve(recs.size());
        for (const auto& r : recs) counts.push_back(static_cast<double>(r.all_wrong_count));
        s.initial_mean += counts.front();
        s.final_mean += counts.back();
        s.mean_tau += mann_kendall_tau(counts);
        ++s.n_runs;
    }
    if (s.n_runs > 0) {
        s.initial_mean /= s.n_runs;
        s.final_mean /= s.n_runs;
        s.mean_tau /= s.n_runs;
    }
    return s;
}

}  // namespace sortlab
