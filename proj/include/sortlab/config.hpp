#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sortlab/vocab.hpp"

namespace sortlab {

// Flat key/value config text (TOML-compatible scalars): `key = value`, `#`
// comments, double-quoted strings. Values stay as raw strings here; typed
// access happens at the consumer.
class KeyValueFile {
public:
    static KeyValueFile parse_text(const std::string& text) {
        KeyValueFile kv;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string stripped = strip_comment(line);
            const std::string t = trim(stripped);
            if (t.empty()) continue;
            const size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": expected key = value");
            std::string key = trim(t.substr(0, eq));
            std::string value = trim(t.substr(eq + 1));
            if (key.empty() || value.empty())
                throw std::invalid_argument("config line " + std::to_string(lineno) +
                                            ": empty key or value");
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"')
                value = value.substr(1, value.size() - 2);
            kv.values_[key] = value;
        }
        return kv;
    }

    static KeyValueFile parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        return parse_text(ss.str());
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string take_string(const std::string& key, std::string fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::string v = it->second;
        values_.erase(it);
        return v;
    }

    int64_t take_int(const std::string& key, int64_t fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string v = it->second;
        values_.erase(it);
        size_t pos = 0;
        const int64_t r = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("bad integer for " + key + ": " + v);
        return r;
    }

    uint64_t take_u64(const std::string& key, uint64_t fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string v = it->second;
        values_.erase(it);
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("bad integer for " + key + ": " + v);
        return r;
    }

    double take_double(const std::string& key, double fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string v = it->second;
        values_.erase(it);
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("bad number for " + key + ": " + v);
        return r;
    }

    bool take_bool(const std::string& key, bool fallback) {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const std::string v = it->second;
        values_.erase(it);
        if (v == "true") return true;
        if (v == "false") return false;
        throw std::invalid_argument("bad bool for " + key + ": " + v);
    }

    // Unknown keys are a hard error: call after consuming everything known.
    void reject_leftovers(const std::string& what) const {
        if (values_.empty()) return;
        std::string keys;
        for (const auto& [k, v] : values_) keys += (keys.empty() ? "" : ", ") + k;
        throw std::invalid_argument("unknown " + what + " keys: " + keys);
    }

    const std::map<std::string, std::string>& remaining() const { return values_; }

private:
    static std::string strip_comment(const std::string& s) {
        bool in_str = false;
        for (size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') in_str = !in_str;
            if (s[i] == '#' && !in_str) return s.substr(0, i);
        }
        return s;
    }

    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r");
        size_t b = s.find_last_not_of(" \t\r");
        if (a == std::string::npos) return "";
        return s.substr(a, b - a + 1);
    }

    std::map<std::string, std::string> values_;
};

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',' || c == ' ') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct TrainConfig {
    uint64_t seed = 1;

    // task world
    int modulus = 17;
    std::string op_set = "+1,+2,+3,x2,x3";
    int k_min = 3;
    int k_max = 5;

    // policy
    int window = 8;
    int embed_dim = 16;
    int hidden_dim = 64;

    // optimization
    int n_rollouts = 8;      // N per prompt
    int batch_rl = 32;       // B_rl
    int batch_aux = 8;       // B_aux
    double beta = 0.5;
    std::string plan_source = "self_extract";
    double gamma_c = 0.0;
    bool stochastic_extract = false;
    double learning_rate = 1e-2;
    std::string optimizer = "adam";
    double adv_epsilon = 1e-6;
    double eps_low = 0.2;
    double eps_high = 0.28;
    int max_response_len = 16;
    int total_steps = 500;
    int save_every = 50;
    std::string loss_variant = "sort";  // "grpo_only" disables the auxiliary update
    int buffer_capacity = 0;            // 0 = unbounded
    bool dedupe_buffer = false;
    bool measure_wall_time = false;     // off by default: keeps metrics logs byte-reproducible
    std::string init_checkpoint;        // optional starting parameters

    Vocab make_vocab_from_config() const {
        std::vector<AffineOp> ops;
        for (const auto& s : split_list(op_set)) ops.push_back(parse_op(s));
        return make_vocab(modulus, std::move(ops));
    }

    void validate() const {
        auto positive = [](int64_t v, const char* name) {
            if (v <= 0) throw std::invalid_argument(std::string(name) + " must be positive");
        };
        positive(modulus, "modulus");
        positive(k_min, "k_min");
        positive(k_max, "k_max");
        positive(window, "window");
        positive(embed_dim, "embed_dim");
        positive(hidden_dim, "hidden_dim");
        positive(n_rollouts, "n_rollouts");
        positive(batch_rl, "batch_rl");
        positive(batch_aux, "batch_aux");
        positive(max_response_len, "max_response_len");
        positive(total_steps, "total_steps");
        positive(save_every, "save_every");
        if (k_min > k_max) throw std::invalid_argument("k_min must be <= k_max");
        if (n_rollouts < 2) throw std::invalid_argument("n_rollouts must be >= 2");
        if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must be in [0,1]");
        if (!(eps_low > 0.0) || !(eps_high > 0.0))
            throw std::invalid_argument("clip epsilons must be positive");
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
        if (!(adv_epsilon > 0.0)) throw std::invalid_argument("adv_epsilon must be positive");
        if (!(gamma_c >= 0.0 && gamma_c <= 1.0))
            throw std::invalid_argument("gamma_c must be in [0,1]");
        if (buffer_capacity < 0) throw std::invalid_argument("buffer_capacity must be >= 0");
        parse_plan_mode_checked();
        if (loss_variant != "grpo_only") (void)parse_loss_variant_name(loss_variant);
        (void)make_vocab_from_config();
    }

    void parse_plan_mode_checked() const {
        if (plan_source != "oracle" && plan_source != "corrupted" && plan_source != "self_extract")
            throw std::invalid_argument("unknown plan source: " + plan_source);
    }

    static std::string parse_loss_variant_name(const std::string& s) {
        if (s == "sft" || s == "sft_plan" || s == "dft" || s == "sort" || s == "oracle") return s;
        throw std::invalid_argument("unknown loss variant: " + s);
    }

    static TrainConfig from_kv(KeyValueFile& kv) {
        TrainConfig base;
        return from_kv(kv, base);
    }

    static TrainConfig from_kv(KeyValueFile& kv, const TrainConfig& base) {
        TrainConfig c = base;
        c.seed = kv.take_u64("seed", c.seed);
        c.modulus = static_cast<int>(kv.take_int("modulus", c.modulus));
        c.op_set = kv.take_string("op_set", c.op_set);
        c.k_min = static_cast<int>(kv.take_int("k_min", c.k_min));
        c.k_max = static_cast<int>(kv.take_int("k_max", c.k_max));
        c.window = static_cast<int>(kv.take_int("window", c.window));
        c.embed_dim = static_cast<int>(kv.take_int("embed_dim", c.embed_dim));
        c.hidden_dim = static_cast<int>(kv.take_int("hidden_dim", c.hidden_dim));
        c.n_rollouts = static_cast<int>(kv.take_int("n_rollouts", c.n_rollouts));
        c.batch_rl = static_cast<int>(kv.take_int("batch_rl", c.batch_rl));
        c.batch_aux = static_cast<int>(kv.take_int("batch_aux", c.batch_aux));
        c.beta = kv.take_double("beta", c.beta);
        c.plan_source = kv.take_string("plan_source", c.plan_source);
        c.gamma_c = kv.take_double("gamma_c", c.gamma_c);
        c.stochastic_extract = kv.take_bool("stochastic_extract", c.stochastic_extract);
        c.learning_rate = kv.take_double("learning_rate", c.learning_rate);
        c.optimizer = kv.take_string("optimizer", c.optimizer);
        c.adv_epsilon = kv.take_double("adv_epsilon", c.adv_epsilon);
        c.eps_low = kv.take_double("eps_low", c.eps_low);
        c.eps_high = kv.take_double("eps_high", c.eps_high);
        c.max_response_len = static_cast<int>(kv.take_int("max_response_len", c.max_response_len));
        c.total_steps = static_cast<int>(kv.take_int("total_steps", c.total_steps));
        c.save_every = static_cast<int>(kv.take_int("save_every", c.save_every));
        c.loss_variant = kv.take_string("loss_variant", c.loss_variant);
        c.buffer_capacity = static_cast<int>(kv.take_int("buffer_capacity", c.buffer_capacity));
        c.dedupe_buffer = kv.take_bool("dedupe_buffer", c.dedupe_buffer);
        c.measure_wall_time = kv.take_bool("measure_wall_time", c.measure_wall_time);
        c.init_checkpoint = kv.take_string("init_checkpoint", c.init_checkpoint);
        return c;
    }

    static TrainConfig load(const std::string& path) {
        KeyValueFile kv = KeyValueFile::parse_file(path);
        TrainConfig c = from_kv(kv);
        kv.reject_leftovers("config");
        c.validate();
        return c;
    }

    static TrainConfig parse(const std::string& text) {
        KeyValueFile kv = KeyValueFile::parse_text(text);
        TrainConfig c = from_kv(kv);
        kv.reject_leftovers("config");
        c.validate();
        return c;
    }

    // Apply a single `key = value` override (used by study sweeps).
    void set_field(const std::string& key, const std::string& value) {
        KeyValueFile kv = KeyValueFile::parse_text(key + " = " + value);
        *this = from_kv(kv, *this);
        kv.reject_leftovers("override");
        validate();
    }
};

}  // namespace sortlab
