#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sortlab {

using TokenId = int32_t;

// Affine step v -> (a*v + b) mod M. Ops are identified by their position in
// the op set, so two ops with the same map are still distinct tokens.
struct AffineOp {
    int64_t mul = 1;
    int64_t add = 0;

    int apply(int v, int modulus) const {
        int64_t r = (mul * v + add) % modulus;
        if (r < 0) r += modulus;
        return static_cast<int>(r);
    }

    std::string text() const {
        if (mul == 1) return "+" + std::to_string(add);
        if (add == 0) return "x" + std::to_string(mul);
        return std::to_string(mul) + "v+" + std::to_string(add);
    }
};

// Parses "+k" or "xk" / "*k" descriptors.
inline AffineOp parse_op(const std::string& s) {
    if (s.size() < 2) throw std::invalid_argument("bad op descriptor: " + s);
    if (s[0] == '+') return AffineOp{1, std::stoll(s.substr(1))};
    if (s[0] == 'x' || s[0] == '*') return AffineOp{std::stoll(s.substr(1)), 0};
    throw std::invalid_argument("bad op descriptor: " + s);
}

enum class TokenClass { value, op, special };

// Dense token-id space: values [0,M), ops [M,M+n_ops), then the six specials.
struct Vocab {
    int modulus = 17;
    std::vector<AffineOp> ops;

    TokenId bos = -1, eos = -1, sep = -1, plan_begin = -1, plan_end = -1, extract = -1;

    int n_ops() const { return static_cast<int>(ops.size()); }
    int size() const { return modulus + n_ops() + 6; }

    TokenId value_token(int v) const { return static_cast<TokenId>(v); }
    TokenId op_token(int op_index) const { return static_cast<TokenId>(modulus + op_index); }

    bool is_value(TokenId t) const { return t >= 0 && t < modulus; }
    bool is_op(TokenId t) const { return t >= modulus && t < modulus + n_ops(); }

    int value_of(TokenId t) const { return static_cast<int>(t); }
    int op_index_of(TokenId t) const { return static_cast<int>(t) - modulus; }

    TokenClass classify(TokenId t) const {
        if (is_value(t)) return TokenClass::value;
        if (is_op(t)) return TokenClass::op;
        return TokenClass::special;
    }

    std::string token_text(TokenId t) const {
        if (is_value(t)) return std::to_string(value_of(t));
        if (is_op(t)) return ops[op_index_of(t)].text();
        if (t == bos) return "BOS";
        if (t == eos) return "EOS";
        if (t == sep) return "SEP";
        if (t == plan_begin) return "PB";
        if (t == plan_end) return "PE";
        if (t == extract) return "EXT";
        return "?";
    }
};

inline Vocab make_vocab(int modulus, std::vector<AffineOp> ops) {
    if (modulus < 5) throw std::invalid_argument("modulus must be >= 5");
    if (ops.size() < 2) throw std::invalid_argument("op set must contain >= 2 ops");
    Vocab v;
    v.modulus = modulus;
    v.ops = std::move(ops);
    TokenId base = static_cast<TokenId>(modulus + v.ops.size());
    v.bos = base + 0;
    v.eos = base + 1;
    v.sep = base + 2;
    v.plan_begin = base + 3;
    v.plan_end = base + 4;
    v.extract = base + 5;
    return v;
}

// Default task world: {+1,+2,+3,x2,x3} mod 17. 5^5 = 3125 plan candidates at
// K=5, which keeps untrained policies firmly in the all-wrong regime.
inline Vocab default_vocab() {
    return make_vocab(17, {AffineOp{1, 1}, AffineOp{1, 2}, AffineOp{1, 3},
                           AffineOp{2, 0}, AffineOp{3, 0}});
}

}  // namespace sortlab
