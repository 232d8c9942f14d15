#pragma once

#include <algorithm>
#include <bit>
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

using ParameterVector = std::vector<double>;
using GradientVector = std::vector<double>;

// Fixed-width conditioning window: the last W token ids, left-padded with BOS.
struct Context {
    std::vector<TokenId> window;

    static Context from_sequence(const std::vector<TokenId>& seq, int w, TokenId bos) {
        Context c;
        c.window.assign(static_cast<size_t>(w), bos);
        const int n = static_cast<int>(seq.size());
        const int take = std::min(n, w);
        for (int i = 0; i < take; ++i) c.window[static_cast<size_t>(w - take + i)] = seq[n - take + i];
        return c;
    }

    void push(TokenId t) {
        std::rotate(window.begin(), window.begin() + 1, window.end());
        window.back() = t;
    }
};

// Flat parameter layout: embed | w1 | b1 | w2 | b2. Ranges partition [0, P).
struct ParamLayout {
    int vocab = 0, window = 0, embed_dim = 0, hidden = 0;
    size_t embed_off = 0, w1_off = 0, b1_off = 0, w2_off = 0, b2_off = 0, total = 0;

    static ParamLayout make(int vocab, int window, int embed_dim, int hidden) {
        ParamLayout l;
        l.vocab = vocab;
        l.window = window;
        l.embed_dim = embed_dim;
        l.hidden = hidden;
        const size_t in = static_cast<size_t>(window) * embed_dim;
        l.embed_off = 0;
        l.w1_off = l.embed_off + static_cast<size_t>(vocab) * embed_dim;
        l.b1_off = l.w1_off + static_cast<size_t>(hidden) * in;
        l.w2_off = l.b1_off + static_cast<size_t>(hidden);
        l.b2_off = l.w2_off + static_cast<size_t>(vocab) * hidden;
        l.total = l.b2_off + static_cast<size_t>(vocab);
        return l;
    }

    size_t input_dim() const { return static_cast<size_t>(window) * embed_dim; }

    nlohmann::ordered_json to_json() const {
        return nlohmann::ordered_json{
            {"embed", {embed_off, w1_off}},   {"w1", {w1_off, b1_off}},
            {"b1", {b1_off, w2_off}},         {"w2", {w2_off, b2_off}},
            {"b2", {b2_off, total}}};
    }
};

// Window-embedding policy: embed each window token (dim d), concatenate, one
// tanh hidden layer, linear output head over the whole vocabulary. Small
// enough that every gradient is computed analytically and cross-checked
// against finite differences in the tests.
class Policy {
public:
    Policy(int vocab, int window, int embed_dim, int hidden, TokenId bos)
        : layout_(ParamLayout::make(vocab, window, embed_dim, hidden)), bos_(bos) {
        params_.assign(layout_.total, 0.0);
    }

    const ParamLayout& layout() const { return layout_; }
    ParameterVector& params() { return params_; }
    const ParameterVector& params() const { return params_; }
    int vocab_size() const { return layout_.vocab; }
    int window_size() const { return layout_.window; }
    TokenId bos() const { return bos_; }

    void init_uniform(RngStream& rng, double half_range = 0.05) {
        for (auto& p : params_) p = rng.next_uniform(-half_range, half_range);
    }

    Context context_of(const std::vector<TokenId>& seq) const {
        return Context::from_sequence(seq, layout_.window, bos_);
    }

    // Post-tanh hidden activation; this is the "decoder hidden state" used by
    // the stability diagnostics.
    std::vector<double> hidden_state(const Context& ctx) const {
        std::vector<double> x, h, logits;
        forward(ctx, x, h, logits);
        return h;
    }

    std::vector<double> logits(const Context& ctx) const {
        std::vector<double> x, h, out;
        forward(ctx, x, h, out);
        for (double v : out) {
            if (!std::isfinite(v)) throw std::runtime_error("non-finite logits");
        }
        return out;
    }

    // Log-softmax over the vocabulary, computed with a log-sum-exp shift so
    // finite parameters can never yield -inf.
    std::vector<double> log_probs(const Context& ctx) const {
        std::vector<double> lp = logits(ctx);
        const double lse = log_sum_exp(lp);
        for (double& v : lp) v -= lse;
        return lp;
    }

    double token_log_prob(const std::vector<TokenId>& prefix, TokenId token) const {
        return log_probs(context_of(prefix))[static_cast<size_t>(token)];
    }

    double entropy(const Context& ctx) const {
        const std::vector<double> lp = log_probs(ctx);
        double h = 0.0;
        for (double v : lp) h -= std::exp(v) * v;
        return h;
    }

    double mean_token_entropy(const std::vector<Context>& contexts) const {
        if (contexts.empty()) throw std::invalid_argument("no contexts");
        double sum = 0.0;
        for (const auto& c : contexts) sum += entropy(c);
        return sum / static_cast<double>(contexts.size());
    }

    struct SampleResult {
        std::vector<TokenId> tokens;     // excludes the prompt
        std::vector<double> log_probs;   // of each sampled token, at sampling time
        double entropy_sum = 0.0;        // summed over sampled positions
    };

    // Autoregressive categorical sampling until EOS or max_len.
    SampleResult sample_scored(const std::vector<TokenId>& prompt, int max_len, TokenId eos,
                               RngStream& rng) const {
        if (max_len < 1) throw std::invalid_argument("max_len must be >= 1");
        SampleResult r;
        Context ctx = context_of(prompt);
        for (int i = 0; i < max_len; ++i) {
            const std::vector<double> lp = log_probs(ctx);
            std::vector<double> probs(lp.size());
            for (size_t z = 0; z < lp.size(); ++z) probs[z] = std::exp(lp[z]);
            const int tok = rng.next_categorical(probs);
            r.tokens.push_back(static_cast<TokenId>(tok));
            r.log_probs.push_back(lp[static_cast<size_t>(tok)]);
            for (size_t z = 0; z < lp.size(); ++z) r.entropy_sum -= probs[z] * lp[z];
            if (tok == eos) break;
            ctx.push(static_cast<TokenId>(tok));
        }
        return r;
    }

    std::vector<TokenId> sample_response(const std::vector<TokenId>& prompt, int max_len,
                                         TokenId eos, RngStream& rng) const {
        return sample_scored(prompt, max_len, eos, rng).tokens;
    }

    // Greedy/stochastic generation restricted to a token id range [lo, hi).
    TokenId argmax_in_range(const Context& ctx, TokenId lo, TokenId hi) const {
        const std::vector<double> out = logits(ctx);
        TokenId best = lo;
        for (TokenId t = lo; t < hi; ++t) {
            if (out[static_cast<size_t>(t)] > out[static_cast<size_t>(best)]) best = t;
        }
        return best;
    }

    TokenId sample_in_range(const Context& ctx, TokenId lo, TokenId hi, RngStream& rng) const {
        const std::vector<double> out = logits(ctx);
        double mx = out[static_cast<size_t>(lo)];
        for (TokenId t = lo; t < hi; ++t) mx = std::max(mx, out[static_cast<size_t>(t)]);
        std::vector<double> w(static_cast<size_t>(hi - lo));
        for (TokenId t = lo; t < hi; ++t) w[static_cast<size_t>(t - lo)] = std::exp(out[static_cast<size_t>(t)] - mx);
        return lo + static_cast<TokenId>(rng.next_categorical(w));
    }

    // A scored path position: the log-probability plus everything needed to
    // materialize its gradient later (the conditioning window and the token).
    struct ScoredToken {
        double log_prob = 0.0;
        Context ctx;
        TokenId token = 0;
    };

    // Per-position log-probabilities of path tokens under prefix + preceding
    // path tokens. Gradient contributions are available per position through
    // accumulate_log_prob_grad on the stored (ctx, token) pairs.
    std::vector<ScoredToken> score_path(const std::vector<TokenId>& prefix,
                                        const std::vector<TokenId>& path) const {
        if (path.empty()) throw std::invalid_argument("empty path");
        std::vector<ScoredToken> out;
        out.reserve(path.size());
        Context ctx = context_of(prefix);
        for (TokenId tok : path) {
            ScoredToken st;
            st.ctx = ctx;
            st.token = tok;
            st.log_prob = log_probs(ctx)[static_cast<size_t>(tok)];
            out.push_back(std::move(st));
            ctx.push(tok);
        }
        return out;
    }

    // grad += coeff * d(log p(token | ctx))/d(params). Fixed accumulation
    // order keeps training bit-reproducible.
    void accumulate_log_prob_grad(const Context& ctx, TokenId token, double coeff,
                                  GradientVector& grad) const {
        const int V = layout_.vocab, H = layout_.hidden, D = layout_.embed_dim, W = layout_.window;
        const size_t in = layout_.input_dim();
        std::vector<double> x, h, lg;
        forward(ctx, x, h, lg);

        const double lse = log_sum_exp(lg);
        std::vector<double> dlogit(static_cast<size_t>(V));
        for (int i = 0; i < V; ++i) dlogit[static_cast<size_t>(i)] = -std::exp(lg[static_cast<size_t>(i)] - lse);
        dlogit[static_cast<size_t>(token)] += 1.0;

        const double* w1 = params_.data() + layout_.w1_off;
        const double* w2 = params_.data() + layout_.w2_off;
        double* g_embed = grad.data() + layout_.embed_off;
        double* g_w1 = grad.data() + layout_.w1_off;
        double* g_b1 = grad.data() + layout_.b1_off;
        double* g_w2 = grad.data() + layout_.w2_off;
        double* g_b2 = grad.data() + layout_.b2_off;

        std::vector<double> dh(static_cast<size_t>(H), 0.0);
        for (int i = 0; i < V; ++i) {
            const double di = coeff * dlogit[static_cast<size_t>(i)];
            if (di == 0.0) continue;
            g_b2[i] += di;
            const double* w2row = w2 + static_cast<size_t>(i) * H;
            double* gw2row = g_w2 + static_cast<size_t>(i) * H;
            for (int j = 0; j < H; ++j) {
                gw2row[j] += di * h[static_cast<size_t>(j)];
                dh[static_cast<size_t>(j)] += di * w2row[j];
            }
        }

        std::vector<double> dx(in, 0.0);
        for (int i = 0; i < H; ++i) {
            const double hp = 1.0 - h[static_cast<size_t>(i)] * h[static_cast<size_t>(i)];
            const double dpre = dh[static_cast<size_t>(i)] * hp;
            if (dpre == 0.0) continue;
            g_b1[i] += dpre;
            const double* w1row = w1 + static_cast<size_t>(i) * in;
            double* gw1row = g_w1 + static_cast<size_t>(i) * in;
            for (size_t j = 0; j < in; ++j) {
                gw1row[j] += dpre * x[j];
                dx[j] += dpre * w1row[j];
            }
        }

        // combine duplicate window tokens before the single add, so
        // accumulating into a running gradient is bitwise identical to
        // materializing this position's gradient and adding it
        for (int k = 0; k < W; ++k) {
            const TokenId tok = ctx.window[static_cast<size_t>(k)];
            bool seen = false;
            for (int k2 = 0; k2 < k; ++k2) seen = seen || ctx.window[static_cast<size_t>(k2)] == tok;
            if (seen) continue;
            double* ge = g_embed + static_cast<size_t>(tok) * D;
            for (int j = 0; j < D; ++j) {
                double s = dx[static_cast<size_t>(k) * D + static_cast<size_t>(j)];
                for (int k2 = k + 1; k2 < W; ++k2) {
                    if (ctx.window[static_cast<size_t>(k2)] == tok)
                        s += dx[static_cast<size_t>(k2) * D + static_cast<size_t>(j)];
                }
                ge[j] += s;
            }
        }
    }

    GradientVector log_prob_grad(const Context& ctx, TokenId token) const {
        GradientVector g(layout_.total, 0.0);
        accumulate_log_prob_grad(ctx, token, 1.0, g);
        return g;
    }

    // ---- checkpoint I/O: one JSON header line, then raw LE doubles ----

    void save_checkpoint(const std::string& path, int64_t step) const {
        static_assert(std::endian::native == std::endian::little, "LE host required");
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + path);
        nlohmann::ordered_json header{{"version", 1},
                                      {"layout", layout_.to_json()},
                                      {"V", layout_.vocab},
                                      {"W", layout_.window},
                                      {"d", layout_.embed_dim},
                                      {"hidden", layout_.hidden},
                                      {"step", step}};
        out << header.dump() << "\n";
        out.write(reinterpret_cast<const char*>(params_.data()),
                  static_cast<std::streamsize>(params_.size() * sizeof(double)));
    }

    static Policy load_checkpoint(const std::string& path, TokenId bos, int64_t* step_out = nullptr) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open " + path);
        std::string header_line;
        if (!std::getline(in, header_line)) throw std::runtime_error("corrupt checkpoint: " + path);
        nlohmann::json header;
        try {
            header = nlohmann::json::parse(header_line);
        } catch (const nlohmann::json::exception&) {
            throw std::runtime_error("corrupt checkpoint header: " + path);
        }
        Policy p(header.at("V").get<int>(), header.at("W").get<int>(), header.at("d").get<int>(),
                 header.at("hidden").get<int>(), bos);
        in.read(reinterpret_cast<char*>(p.params_.data()),
                static_cast<std::streamsize>(p.params_.size() * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(p.params_.size() * sizeof(double)))
            throw std::runtime_error("corrupt checkpoint payload: " + path);
        if (step_out) *step_out = header.at("step").get<int64_t>();
        return p;
    }

    static double log_sum_exp(const std::vector<double>& v) {
        const double mx = *std::max_element(v.begin(), v.end());
        double s = 0.0;
        for (double a : v) s += std::exp(a - mx);
        return mx + std::log(s);
    }

private:
    void forward(const Context& ctx, std::vector<double>& x, std::vector<double>& h,
                 std::vector<double>& out) const {
        const int V = layout_.vocab, H = layout_.hidden, D = layout_.embed_dim, W = layout_.window;
        const size_t in = layout_.input_dim();
        if (static_cast<int>(ctx.window.size()) != W) throw std::invalid_argument("bad context width");

        x.resize(in);
        const double* embed = params_.data() + layout_.embed_off;
        for (int k = 0; k < W; ++k) {
            const TokenId t = ctx.window[static_cast<size_t>(k)];
            if (t < 0 || t >= V) throw std::invalid_argument("token id out of range");
            const double* row = embed + static_cast<size_t>(t) * D;
            std::copy(row, row + D, x.begin() + static_cast<size_t>(k) * D);
        }

        h.resize(static_cast<size_t>(H));
        const double* w1 = params_.data() + layout_.w1_off;
        const double* b1 = params_.data() + layout_.b1_off;
        for (int i = 0; i < H; ++i) {
            const double* row = w1 + static_cast<size_t>(i) * in;
            double acc = b1[i];
            for (size_t j = 0; j < in; ++j) acc += row[j] * x[j];
            h[static_cast<size_t>(i)] = std::tanh(acc);
        }

        out.resize(static_cast<size_t>(V));
        const double* w2 = params_.data() + layout_.w2_off;
        const double* b2 = params_.data() + layout_.b2_off;
        for (int i = 0; i < V; ++i) {
            const double* row = w2 + static_cast<size_t>(i) * H;
            double acc = b2[i];
            for (int j = 0; j < H; ++j) acc += row[j] * h[static_cast<size_t>(j)];
            out[static_cast<size_t>(i)] = acc;
        }
    }

    ParamLayout layout_;
    ParameterVector params_;
    TokenId bos_;
};

}  // namespace sortlab
