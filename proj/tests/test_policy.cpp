#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sortlab/policy.hpp"
#include "sortlab/task.hpp"

using namespace sortlab;

namespace {

Policy small_policy(uint64_t seed, int window = 4, int d = 4, int hidden = 8) {
    const Vocab v = make_vocab(5, {parse_op("+1"), parse_op("x2")});  // V = 13
    Policy p(v.size(), window, d, hidden, v.bos);
    RngStream rng(seed, "init");
    p.init_uniform(rng, 0.3);
    return p;
}

Context random_ctx(const Policy& p, RngStream& rng) {
    Context c;
    for (int i = 0; i < p.window_size(); ++i)
        c.window.push_back(static_cast<TokenId>(rng.next_below(static_cast<uint64_t>(p.vocab_size()))));
    return c;
}

// Central-difference gradient of f at the policy's parameters.
template <typename F>
GradientVector finite_diff(Policy& p, F f, double h = 1e-5) {
    GradientVector g(p.layout().total, 0.0);
    for (size_t i = 0; i < p.params().size(); ++i) {
        const double orig = p.params()[i];
        p.params()[i] = orig + h;
        const double fp = f();
        p.params()[i] = orig - h;
        const double fm = f();
        p.params()[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

double rel_l2_error(const GradientVector& a, const GradientVector& b) {
    double d2 = 0.0, n2 = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        d2 += (a[i] - b[i]) * (a[i] - b[i]);
        n2 += b[i] * b[i];
    }
    return std::sqrt(d2) / std::max(std::sqrt(n2), 1e-300);
}

// Independent high-effort oracle: log-softmax from raw logits with
// compensated (Kahan) summation in long double.
double compensated_log_softmax(const std::vector<double>& logits, size_t idx) {
    long double mx = logits[0];
    for (double v : logits) mx = std::max<long double>(mx, v);
    long double sum = 0.0L, c = 0.0L;
    for (double v : logits) {
        const long double term = expl(static_cast<long double>(v) - mx);
        const long double y = term - c;
        const long double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return static_cast<double>(static_cast<long double>(logits[idx]) - mx - logl(sum));
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("zero parameters give the uniform distribution") {
    const Vocab v = default_vocab();
    Policy p(v.size(), 8, 16, 64, v.bos);
    const Context ctx = p.context_of({v.bos, v.value_token(3)});
    for (double lg : p.logits(ctx)) REQUIRE(lg == 0.0);
    const double lp = p.token_log_prob({v.value_token(3)}, v.value_token(7));
    REQUIRE(lp == Catch::Approx(-std::log(static_cast<double>(v.size()))).margin(1e-14));
}

TEST_CASE("logits ignore embedding rows of tokens absent from the context") {
    Policy p = small_policy(3);
    Context ctx;
    ctx.window = {0, 1, 2, 3};
    const std::vector<double> before = p.logits(ctx);
    // scramble rows of tokens 4.. (absent from ctx)
    const auto& l = p.layout();
    for (int tok = 4; tok < l.vocab; ++tok) {
        for (int j = 0; j < l.embed_dim; ++j)
            p.params()[l.embed_off + static_cast<size_t>(tok) * l.embed_dim + static_cast<size_t>(j)] += 5.0;
    }
    const std::vector<double> after = p.logits(ctx);
    for (size_t i = 0; i < before.size(); ++i) REQUIRE(before[i] == after[i]);
}

TEST_CASE("analytic single-logit Jacobian matches central differences") {
    Policy p = small_policy(11);
    RngStream rng(4, "ctx");
    const Context ctx = random_ctx(p, rng);
    const int probe_logit = 5;

    // test-local analytic backward through embed -> tanh hidden -> head
    const auto& l = p.layout();
    GradientVector analytic(l.total, 0.0);
    {
        const std::vector<double> h = p.hidden_state(ctx);
        std::vector<double> x(l.input_dim());
        for (int k = 0; k < l.window; ++k) {
            const double* row = p.params().data() + l.embed_off +
                                static_cast<size_t>(ctx.window[static_cast<size_t>(k)]) * l.embed_dim;
            std::copy(row, row + l.embed_dim, x.begin() + static_cast<size_t>(k) * l.embed_dim);
        }
        analytic[l.b2_off + probe_logit] = 1.0;
        for (int j = 0; j < l.hidden; ++j)
            analytic[l.w2_off + static_cast<size_t>(probe_logit) * l.hidden + static_cast<size_t>(j)] =
                h[static_cast<size_t>(j)];
        for (int i = 0; i < l.hidden; ++i) {
            const double dh = p.params()[l.w2_off + static_cast<size_t>(probe_logit) * l.hidden +
                                         static_cast<size_t>(i)];
            const double dpre = dh * (1.0 - h[static_cast<size_t>(i)] * h[static_cast<size_t>(i)]);
            analytic[l.b1_off + static_cast<size_t>(i)] = dpre;
            for (size_t j = 0; j < l.input_dim(); ++j) {
                analytic[l.w1_off + static_cast<size_t>(i) * l.input_dim() + j] = dpre * x[j];
            }
        }
        // embeddings via dx = W1^T dpre
        std::vector<double> dx(l.input_dim(), 0.0);
        for (int i = 0; i < l.hidden; ++i) {
            const double dh = p.params()[l.w2_off + static_cast<size_t>(probe_logit) * l.hidden +
                                         static_cast<size_t>(i)];
            const double dpre = dh * (1.0 - h[static_cast<size_t>(i)] * h[static_cast<size_t>(i)]);
            for (size_t j = 0; j < l.input_dim(); ++j)
                dx[j] += dpre * p.params()[l.w1_off + static_cast<size_t>(i) * l.input_dim() + j];
        }
        for (int k = 0; k < l.window; ++k) {
            for (int j = 0; j < l.embed_dim; ++j)
                analytic[l.embed_off +
                         static_cast<size_t>(ctx.window[static_cast<size_t>(k)]) * l.embed_dim +
                         static_cast<size_t>(j)] += dx[static_cast<size_t>(k) * l.embed_dim +
                                                       static_cast<size_t>(j)];
        }
    }

    const GradientVector fd =
        finite_diff(p, [&] { return p.logits(ctx)[probe_logit]; });
    REQUIRE(rel_l2_error(analytic, fd) < 1e-4);
}

TEST_CASE("token_log_prob normalizes and matches the compensated oracle") {
    Policy p = small_policy(21);
    RngStream rng(8, "ctx");
    for (int rep = 0; rep < 20; ++rep) {
        const Context ctx = random_ctx(p, rng);
        const std::vector<double> lp = p.log_probs(ctx);
        double sum = 0.0;
        for (double v : lp) {
            REQUIRE(v <= 0.0);
            sum += std::exp(v);
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));

        const std::vector<double> logits = p.logits(ctx);
        for (size_t i = 0; i < lp.size(); ++i)
            REQUIRE(lp[i] == Catch::Approx(compensated_log_softmax(logits, i)).margin(1e-12));
    }
}

TEST_CASE("token_log_prob gradient matches finite differences on random triples") {
    Policy p = small_policy(31);
    RngStream rng(17, "probe");
    int checked = 0;
    for (int rep = 0; rep < 100; ++rep) {
        // re-randomize parameters every few probes
        if (rep % 10 == 0) {
            RngStream r2(100 + static_cast<uint64_t>(rep), "reinit");
            p.init_uniform(r2, 0.4);
        }
        const Context ctx = random_ctx(p, rng);
        const TokenId tok = static_cast<TokenId>(rng.next_below(static_cast<uint64_t>(p.vocab_size())));
        const GradientVector g = p.log_prob_grad(ctx, tok);
        const GradientVector fd = finite_diff(
            p, [&] { return p.log_probs(ctx)[static_cast<size_t>(tok)]; });
        REQUIRE(rel_l2_error(g, fd) < 1e-4);
        ++checked;
    }
    REQUIRE(checked == 100);
}

TEST_CASE("log-space evaluation never produces -inf for finite parameters") {
    Policy p = small_policy(41);
    // push logits far apart
    for (auto& v : p.params()) v *= 50.0;
    RngStream rng(3, "ctx");
    for (int rep = 0; rep < 50; ++rep) {
        const Context ctx = random_ctx(p, rng);
        for (double lp : p.log_probs(ctx)) REQUIRE(std::isfinite(lp));
    }
}

TEST_CASE("sampling stops at EOS and is deterministic") {
    const Vocab v = default_vocab();
    Policy p(v.size(), 8, 16, 64, v.bos);
    // force probability ~1 on EOS
    p.params()[p.layout().b2_off + static_cast<size_t>(v.eos)] = 50.0;
    RngStream rng(1, "sample");
    const auto resp = p.sample_response({v.bos, v.value_token(1), v.sep}, 16, v.eos, rng);
    REQUIRE(resp == std::vector<TokenId>{v.eos});

    RngStream init(5, "init");
    p.init_uniform(init);
    RngStream a(9, "s", 0);
    RngStream b(9, "s", 0);
    REQUIRE(p.sample_response({v.bos}, 16, v.eos, a) == p.sample_response({v.bos}, 16, v.eos, b));
}

TEST_CASE("empirical sampling frequencies match softmax within 3 standard errors") {
    Policy p = small_policy(51);
    const std::vector<TokenId> prompt = {1, 2};
    const Context ctx = p.context_of(prompt);
    const std::vector<double> lp = p.log_probs(ctx);

    const int n = 100000;
    std::vector<int> counts(static_cast<size_t>(p.vocab_size()), 0);
    RngStream rng(13, "mc");
    for (int i = 0; i < n; ++i) {
        // draw only the first token of a fresh response
        RngStream draw(rng.next_u64());
        const auto resp = p.sample_response(prompt, 1, /*eos=*/12, draw);
        ++counts[static_cast<size_t>(resp[0])];
    }
    for (size_t z = 0; z < counts.size(); ++z) {
        const double prob = std::exp(lp[z]);
        const double freq = static_cast<double>(counts[z]) / n;
        const double se = std::sqrt(prob * (1.0 - prob) / n);
        REQUIRE(std::abs(freq - prob) <= 3.0 * se + 1e-9);
    }
}

TEST_CASE("score_path factorizes and exposes per-position gradients") {
    Policy p = small_policy(61);
    const std::vector<TokenId> prefix = {1, 3, 2};
    const std::vector<TokenId> path = {4, 0, 7, 2};

    const auto scored = p.score_path(prefix, path);
    REQUIRE(scored.size() == path.size());

    // length-1 path reduces to token_log_prob
    REQUIRE(p.score_path(prefix, {path[0]})[0].log_prob == p.token_log_prob(prefix, path[0]));

    // chain-product identity: sum of per-position log-probs equals the sum of
    // individual conditionals along the growing prefix
    double total = 0.0;
    std::vector<TokenId> grown = prefix;
    for (TokenId t : path) {
        total += p.token_log_prob(grown, t);
        grown.push_back(t);
    }
    double scored_total = 0.0;
    for (const auto& st : scored) scored_total += st.log_prob;
    REQUIRE(scored_total == Catch::Approx(total).margin(1e-15));

    // per-position gradients match finite differences
    for (const auto& st : scored) {
        const GradientVector g = p.log_prob_grad(st.ctx, st.token);
        const GradientVector fd = finite_diff(
            p, [&] { return p.log_probs(st.ctx)[static_cast<size_t>(st.token)]; });
        REQUIRE(rel_l2_error(g, fd) < 1e-4);
    }

    REQUIRE_THROWS_AS(p.score_path(prefix, {}), std::invalid_argument);
}

TEST_CASE("gradient accumulation is additive across positions") {
    Policy p = small_policy(71);
    const std::vector<TokenId> prefix = {2};
    const std::vector<TokenId> path = {5, 1, 9};
    const auto scored = p.score_path(prefix, path);

    GradientVector acc(p.layout().total, 0.0);
    for (const auto& st : scored) p.accumulate_log_prob_grad(st.ctx, st.token, 1.0, acc);

    GradientVector sum(p.layout().total, 0.0);
    for (const auto& st : scored) {
        const GradientVector g = p.log_prob_grad(st.ctx, st.token);
        for (size_t i = 0; i < sum.size(); ++i) sum[i] += g[i];
    }
    for (size_t i = 0; i < acc.size(); ++i) REQUIRE(acc[i] == sum[i]);
}

TEST_CASE("mean token entropy endpoints and oracle") {
    const Vocab v = default_vocab();
    Policy p(v.size(), 8, 16, 64, v.bos);
    const Context c1 = p.context_of({v.bos});
    const Context c2 = p.context_of({v.value_token(4), v.sep});

    // uniform distribution at zero parameters
    REQUIRE(p.mean_token_entropy({c1, c2}) ==
            Catch::Approx(std::log(static_cast<double>(v.size()))).margin(1e-12));

    // near-one-hot logits collapse the entropy
    Policy q(v.size(), 8, 16, 64, v.bos);
    q.params()[q.layout().b2_off + 3] = 50.0;
    for (int i = 0; i < v.size(); ++i) {
        if (i != 3) q.params()[q.layout().b2_off + static_cast<size_t>(i)] = -50.0;
    }
    REQUIRE(q.mean_token_entropy({c1}) < 1e-10);

    // brute-force average over contexts
    Policy r(v.size(), 4, 4, 8, v.bos);
    RngStream init(2, "init");
    r.init_uniform(init, 0.5);
    const Context d1 = r.context_of({1, 2, 3});
    const Context d2 = r.context_of({4});
    long double acc = 0.0L;
    for (const Context& c : {d1, d2}) {
        const auto lp = r.log_probs(c);
        long double h = 0.0L;
        for (double x : lp) h -= expl(static_cast<long double>(x)) * static_cast<long double>(x);
        acc += h;
    }
    REQUIRE(r.mean_token_entropy({d1, d2}) ==
            Catch::Approx(static_cast<double>(acc / 2.0L)).margin(1e-12));

    REQUIRE_THROWS_AS(p.mean_token_entropy({}), std::invalid_argument);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    const Vocab v = default_vocab();
    Policy p(v.size(), 8, 16, 64, v.bos);
    RngStream init(99, "init");
    p.init_uniform(init);

    const auto dir = std::filesystem::temp_directory_path() / "sortlab_ckpt";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "ckpt_1.bin").string();
    p.save_checkpoint(path, 123);

    int64_t step = 0;
    const Policy q = Policy::load_checkpoint(path, v.bos, &step);
    REQUIRE(step == 123);
    REQUIRE(q.params().size() == p.params().size());
    REQUIRE(std::memcmp(q.params().data(), p.params().data(),
                        p.params().size() * sizeof(double)) == 0);

    const std::string path2 = (dir / "ckpt_2.bin").string();
    q.save_checkpoint(path2, 123);
    REQUIRE(read_file(path) == read_file(path2));

    // corrupt header is a load error
    const std::string bad = (dir / "bad.bin").string();
    std::ofstream(bad, std::ios::binary) << "not json\n";
    REQUIRE_THROWS_AS(Policy::load_checkpoint(bad, v.bos), std::runtime_error);
}
