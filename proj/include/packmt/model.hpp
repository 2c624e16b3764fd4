#pragma once

// Encoder-decoder transformer (pre-layer-norm) over a named parameter store.
// Parameters carry a prunability flag derived from their name: attention,
// feed-forward and output-projection weight matrices are prunable; biases,
// layer-norm parameters and the embedding table are not.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "packmt/ops.hpp"
#include "packmt/tape.hpp"
#include "packmt/tensor.hpp"

namespace packmt {

struct ModelConfig {
    std::int64_t num_heads = 4;
    std::int64_t num_encoder_layers = 2;
    std::int64_t num_decoder_layers = 2;
    std::int64_t embed_dim = 64;
    std::int64_t ffn_dim = 128;
    double dropout = 0.1;
    std::int64_t vocab_size = 80;
    std::int64_t max_seq_len = 64;

    void validate() const {
        if (num_heads <= 0 || embed_dim <= 0 || ffn_dim <= 0 || vocab_size <= 0 || max_seq_len <= 0)
            throw ConfigError("model config: dimensions must be positive");
        if (num_encoder_layers < 0 || num_decoder_layers < 0)
            throw ConfigError("model config: layer counts must be non-negative");
        if (embed_dim % num_heads != 0)
            throw ConfigError("model config: embed_dim must be divisible by num_heads");
        if (dropout < 0.0 || dropout >= 1.0)
            throw ConfigError("model config: dropout must be in [0,1)");
    }

    bool operator==(const ModelConfig&) const = default;
};

// Attention/FFN weight matrices and the output projection are prunable.
inline bool prunable_by_name(const std::string& name) {
    if (name == "out.proj") return true;
    for (const char* suffix : {".wq", ".wk", ".wv", ".wo", ".w1", ".w2"}) {
        const std::size_t n = std::string(suffix).size();
        if (name.size() > n && name.compare(name.size() - n, n, suffix) == 0) return true;
    }
    return false;
}

template <typename T>
struct ParamEntry {
    std::string name;
    Tensor<T> tensor;
    bool prunable;
};

// Ordered name -> (tensor, prunable) association. Iteration order is the
// insertion order, which init_params keeps fixed, so serialization and
// reporting are stable.
template <typename T>
class ParamStore {
  public:
    void add(std::string name, Tensor<T> tensor) {
        if (index_.count(name)) throw ContractViolation("ParamStore: duplicate parameter '" + name + "'");
        index_[name] = entries_.size();
        const bool prunable = prunable_by_name(name);
        entries_.push_back(ParamEntry<T>{std::move(name), std::move(tensor), prunable});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractViolation("ParamStore: no parameter '" + name + "'");
        return entries_[it->second].tensor;
    }

    const Tensor<T>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ContractViolation("ParamStore: no parameter '" + name + "'");
        return entries_[it->second].tensor;
    }

    std::vector<ParamEntry<T>>& entries() { return entries_; }
    const std::vector<ParamEntry<T>>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& e : entries_) out.add(e.name, e.tensor.template cast<U>());
        return out;
    }

  private:
    std::vector<ParamEntry<T>> entries_;
    std::map<std::string, std::size_t> index_;
};

struct CensusRow {
    std::string name;
    std::int64_t elements;
    bool prunable;
};

struct Census {
    std::int64_t total = 0;
    std::int64_t prunable = 0;
    std::int64_t nonprunable = 0;
    std::vector<CensusRow> rows;
};

template <typename T>
Census param_census(const ParamStore<T>& params) {
    Census c;
    for (const auto& e : params.entries()) {
        c.rows.push_back(CensusRow{e.name, e.tensor.numel(), e.prunable});
        c.total += e.tensor.numel();
        (e.prunable ? c.prunable : c.nonprunable) += e.tensor.numel();
    }
    return c;
}

namespace detail {

// Every tensor draws from its own named stream, so initialization does not
// depend on construction order.
template <typename T>
void init_weight(ParamStore<T>& store, std::uint64_t seed, const std::string& name,
                 std::vector<std::int64_t> shape) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape));
    const double fan_in = static_cast<double>(t.shape[0]);
    const double fan_out = static_cast<double>(t.shape.back());
    auto rs = rng::stream(seed, "init." + name);
    fill_normal(t, rs, 0.0, std::sqrt(2.0 / (fan_in + fan_out)));
    store.add(name, std::move(t));
}

template <typename T>
void init_attention(ParamStore<T>& store, std::uint64_t seed, const std::string& prefix, std::int64_t d) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) init_weight(store, seed, prefix + "." + w, {d, d});
    for (const char* b : {"bq", "bk", "bv", "bo"}) store.add(prefix + "." + b, Tensor<T>::zeros({d}));
}

template <typename T>
void init_layer_norm(ParamStore<T>& store, const std::string& prefix, std::int64_t d) {
    store.add(prefix + ".g", Tensor<T>::full({d}, T(1)));
    store.add(prefix + ".b", Tensor<T>::zeros({d}));
}

template <typename T>
void init_ffn(ParamStore<T>& store, std::uint64_t seed, const std::string& prefix, std::int64_t d,
              std::int64_t f) {
    init_weight(store, seed, prefix + ".w1", {d, f});
    store.add(prefix + ".b1", Tensor<T>::zeros({f}));
    init_weight(store, seed, prefix + ".w2", {f, d});
    store.add(prefix + ".b2", Tensor<T>::zeros({d}));
}

// Fixed sinusoidal positional table, rows 0..max_len-1.
template <typename T>
Tensor<T> positional_table(std::int64_t max_len, std::int64_t d) {
    Tensor<T> t = Tensor<T>::zeros({max_len, d});
    for (std::int64_t p = 0; p < max_len; ++p)
        for (std::int64_t i = 0; i < d; i += 2) {
            const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            t[p * d + i] = static_cast<T>(std::sin(angle));
            if (i + 1 < d) t[p * d + i + 1] = static_cast<T>(std::cos(angle));
        }
    return t;
}

}  // namespace detail

template <typename T>
ParamStore<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ParamStore<T> store;
    const std::int64_t d = cfg.embed_dim, f = cfg.ffn_dim;

    Tensor<T> embed = Tensor<T>::zeros({cfg.vocab_size, d});
    auto rs = rng::stream(seed, "init.embed");
    fill_normal(embed, rs, 0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    store.add("embed", std::move(embed));

    for (std::int64_t l = 0; l < cfg.num_encoder_layers; ++l) {
        const std::string p = "enc." + std::to_string(l);
        detail::init_layer_norm(store, p + ".ln1", d);
        detail::init_attention(store, seed, p + ".attn", d);
        detail::init_layer_norm(store, p + ".ln2", d);
        detail::init_ffn(store, seed, p + ".ffn", d, f);
    }
    detail::init_layer_norm(store, "enc.final_ln", d);

    for (std::int64_t l = 0; l < cfg.num_decoder_layers; ++l) {
        const std::string p = "dec." + std::to_string(l);
        detail::init_layer_norm(store, p + ".ln1", d);
        detail::init_attention(store, seed, p + ".self", d);
        detail::init_layer_norm(store, p + ".ln2", d);
        detail::init_attention(store, seed, p + ".cross", d);
        detail::init_layer_norm(store, p + ".ln3", d);
        detail::init_ffn(store, seed, p + ".ffn", d, f);
    }
    detail::init_layer_norm(store, "dec.final_ln", d);

    detail::init_weight(store, seed, "out.proj", {d, cfg.vocab_size});
    return store;
}

// One batch of padded token rows. tgt_in is the bos-shifted decoder input;
// tgt_out is the reference the loss is computed against.
struct TokenBatch {
    std::int64_t batch = 0;
    std::int64_t src_len = 0;
    std::int64_t tgt_len = 0;
    std::vector<std::int32_t> src;
    std::vector<std::int32_t> tgt_in;
    std::vector<std::int32_t> tgt_out;
};

// Binds a parameter store onto one tape and exposes the forward graph
// builders. All forwards built through one instance share the same leaf
// slots, so gradients accumulate correctly across calls.
template <typename T>
class BoundModel {
  public:
    BoundModel(Tape<T>& tape, const ParamStore<T>& params, const ModelConfig& cfg) : tape_(tape), cfg_(cfg) {
        cfg_.validate();
        for (const auto& e : params.entries()) id_[e.name] = tape_.leaf(e.tensor, e.name);
        pos_table_ = tape_.constant(detail::positional_table<T>(cfg_.max_seq_len, cfg_.embed_dim));
    }

    // Encoder stack over the source tokens; returns the slot of the final
    // encoder states [B, Ls, d].
    int encode(const std::vector<std::int32_t>& src, std::int64_t batch, std::int64_t src_len,
               std::int32_t pad_id, bool train = false, rng::Stream* drop = nullptr) {
        check_lengths(src, batch, src_len);
        const int self_mask = tape_.constant(pad_mask(src, batch, src_len, src_len, pad_id, /*causal=*/false));
        int x = embed_tokens(src, batch, src_len, train, drop);
        for (std::int64_t l = 0; l < cfg_.num_encoder_layers; ++l) {
            const std::string p = "enc." + std::to_string(l);
            int h = layer_norm_p(x, p + ".ln1");
            h = attention(h, h, self_mask, p + ".attn", train, drop);
            x = ops::add(tape_, x, maybe_drop(h, train, drop));
            h = layer_norm_p(x, p + ".ln2");
            h = ffn(h, p + ".ffn");
            x = ops::add(tape_, x, maybe_drop(h, train, drop));
        }
        return layer_norm_p(x, "enc.final_ln");
    }

    // Decoder stack over the target prefix given encoder states; returns
    // the logits slot [B, Lt, vocab].
    int decode_logits(int enc_out, const std::vector<std::int32_t>& src, std::int64_t batch,
                      std::int64_t src_len, const std::vector<std::int32_t>& tgt_in, std::int64_t tgt_len,
                      std::int32_t pad_id, bool train = false, rng::Stream* drop = nullptr) {
        check_lengths(tgt_in, batch, tgt_len);
        const int self_mask = tape_.constant(pad_mask(tgt_in, batch, tgt_len, tgt_len, pad_id, /*causal=*/true));
        const int cross_mask = tape_.constant(pad_mask(src, batch, tgt_len, src_len, pad_id, /*causal=*/false));
        int x = embed_tokens(tgt_in, batch, tgt_len, train, drop);
        for (std::int64_t l = 0; l < cfg_.num_decoder_layers; ++l) {
            const std::string p = "dec." + std::to_string(l);
            int h = layer_norm_p(x, p + ".ln1");
            h = attention(h, h, self_mask, p + ".self", train, drop);
            x = ops::add(tape_, x, maybe_drop(h, train, drop));
            h = layer_norm_p(x, p + ".ln2");
            h = attention(h, enc_out, cross_mask, p + ".cross", train, drop);
            x = ops::add(tape_, x, maybe_drop(h, train, drop));
            h = layer_norm_p(x, p + ".ln3");
            h = ffn(h, p + ".ffn");
            x = ops::add(tape_, x, maybe_drop(h, train, drop));
        }
        x = layer_norm_p(x, "dec.final_ln");
        return ops::matmul(tape_, x, id("out.proj"));
    }

    // Full forward to per-position vocabulary logits [B, Lt, vocab].
    int logits(const TokenBatch& b, std::int32_t pad_id, bool train = false, rng::Stream* drop = nullptr) {
        const int enc = encode(b.src, b.batch, b.src_len, pad_id, train, drop);
        return decode_logits(enc, b.src, b.batch, b.src_len, b.tgt_in, b.tgt_len, pad_id, train, drop);
    }

    // Mean cross-entropy over non-pad target positions; scalar slot.
    int loss(const TokenBatch& b, std::int32_t pad_id, bool train = false, rng::Stream* drop = nullptr) {
        return ops::cross_entropy_mean(tape_, logits(b, pad_id, train, drop), b.tgt_out, pad_id);
    }

    Tape<T>& tape() { return tape_; }

  private:
    int id(const std::string& name) const {
        auto it = id_.find(name);
        if (it == id_.end()) throw ContractViolation("model: parameter store is missing '" + name + "'");
        return it->second;
    }

    void check_lengths(const std::vector<std::int32_t>& tokens, std::int64_t batch, std::int64_t len) const {
        if (len > cfg_.max_seq_len)
            throw ContractViolation("model: sequence length " + std::to_string(len) + " exceeds max_seq_len " +
                                    std::to_string(cfg_.max_seq_len));
        if (static_cast<std::int64_t>(tokens.size()) != batch * len)
            throw ContractViolation("model: token buffer does not match batch x len");
    }

    // Additive mask [B, Lq, Lk]: 0 where attendable, -1e9 on pad keys and,
    // when causal, on future positions.
    Tensor<T> pad_mask(const std::vector<std::int32_t>& keys, std::int64_t batch, std::int64_t lq,
                       std::int64_t lk, std::int32_t pad_id, bool causal) const {
        Tensor<T> m = Tensor<T>::zeros({batch, lq, lk});
        const T neg = static_cast<T>(-1e9);
        for (std::int64_t b = 0; b < batch; ++b)
            for (std::int64_t i = 0; i < lq; ++i)
                for (std::int64_t j = 0; j < lk; ++j) {
                    const bool pad = keys[static_cast<std::size_t>(b * lk + j)] == pad_id;
                    const bool future = causal && j > i;
                    if (pad || future) m[(b * lq + i) * lk + j] = neg;
                }
        return m;
    }

    int embed_tokens(const std::vector<std::int32_t>& tokens, std::int64_t batch, std::int64_t len,
                     bool train, rng::Stream* drop) {
        int x = ops::embedding(tape_, id("embed"), tokens);
        x = ops::reshape(tape_, x, {batch, len, cfg_.embed_dim});
        x = ops::scale(tape_, x, std::sqrt(static_cast<double>(cfg_.embed_dim)));
        x = ops::add_rows(tape_, x, pos_table_);
        return maybe_drop(x, train, drop);
    }

    int layer_norm_p(int x, const std::string& prefix) {
        return ops::layer_norm(tape_, x, id(prefix + ".g"), id(prefix + ".b"));
    }

    int linear(int x, const std::string& w, const std::string& b) {
        return ops::add_bias(tape_, ops::matmul(tape_, x, id(w)), id(b));
    }

    int maybe_drop(int x, bool train, rng::Stream* drop) {
        if (!train || cfg_.dropout == 0.0) return x;
        if (!drop) throw ContractViolation("model: train mode requires a dropout stream");
        return ops::dropout(tape_, x, cfg_.dropout, *drop);
    }

    // Scaled dot-product multi-head attention; q_in and kv_in are
    // [B, L, d] slots, mask is a [B, Lq, Lk] constant slot.
    int attention(int q_in, int kv_in, int mask, const std::string& prefix, bool train, rng::Stream* drop) {
        const std::int64_t hd = cfg_.embed_dim / cfg_.num_heads;
        int q = ops::split_heads(tape_, linear(q_in, prefix + ".wq", prefix + ".bq"), cfg_.num_heads);
        int k = ops::split_heads(tape_, linear(kv_in, prefix + ".wk", prefix + ".bk"), cfg_.num_heads);
        int v = ops::split_heads(tape_, linear(kv_in, prefix + ".wv", prefix + ".bv"), cfg_.num_heads);
        int scores = ops::scale(tape_, ops::matmul(tape_, q, k, /*trans_b=*/true),
                                1.0 / std::sqrt(static_cast<double>(hd)));
        scores = ops::add_attn_mask(tape_, scores, mask);
        int attn = ops::softmax(tape_, scores);
        attn = maybe_drop(attn, train, drop);
        int ctx = ops::merge_heads(tape_, ops::matmul(tape_, attn, v));
        return linear(ctx, prefix + ".wo", prefix + ".bo");
    }

    int ffn(int x, const std::string& prefix) {
        int h = ops::relu(tape_, linear(x, prefix + ".w1", prefix + ".b1"));
        return linear(h, prefix + ".w2", prefix + ".b2");
    }

    Tape<T>& tape_;
    ModelConfig cfg_;
    std::map<std::string, int> id_;
    int pos_table_;
};

// Batched greedy decode: the encoder runs once, the decoder re-runs over the
// growing prefix each step. Ties at the argmax resolve to the lowest token
// ID. Returns per-sentence emitted tokens, cut before the first eos.
template <typename T>
std::vector<std::vector<std::int32_t>> greedy_decode(const ParamStore<T>& params, const ModelConfig& cfg,
                                                     const std::vector<std::vector<std::int32_t>>& sources,
                                                     std::int32_t pad_id, std::int32_t bos_id,
                                                     std::int32_t eos_id, std::int64_t max_len) {
    if (max_len < 1) throw ContractViolation("greedy_decode: max_len must be >= 1");
    if (sources.empty()) return {};
    const std::int64_t B = static_cast<std::int64_t>(sources.size());
    std::int64_t src_len = 0;
    for (const auto& s : sources) src_len = std::max(src_len, static_cast<std::int64_t>(s.size()));
    std::vector<std::int32_t> src(static_cast<std::size_t>(B * src_len), pad_id);
    for (std::int64_t b = 0; b < B; ++b)
        std::copy(sources[static_cast<std::size_t>(b)].begin(), sources[static_cast<std::size_t>(b)].end(),
                  src.begin() + b * src_len);

    // The encoder runs once; each decode step then gets a fresh tape so the
    // per-step activation slots are released instead of accumulating.
    Tensor<T> enc_value;
    {
        Tape<T> tape;
        tape.recording = false;
        BoundModel<T> model(tape, params, cfg);
        enc_value = tape.value(model.encode(src, B, src_len, pad_id));
    }

    std::vector<std::int32_t> prefix(static_cast<std::size_t>(B), bos_id);
    std::vector<std::vector<std::int32_t>> out(static_cast<std::size_t>(B));
    std::vector<bool> done(static_cast<std::size_t>(B), false);
    for (std::int64_t step = 0; step < max_len; ++step) {
        const std::int64_t lt = step + 1;
        Tape<T> tape;
        tape.recording = false;
        BoundModel<T> model(tape, params, cfg);
        const int enc = tape.constant(enc_value);
        const int lg = model.decode_logits(enc, src, B, src_len, prefix, lt, pad_id);
        const auto& lv = tape.value(lg);
        const std::int64_t V = cfg.vocab_size;
        std::vector<std::int32_t> next(static_cast<std::size_t>(B));
        for (std::int64_t b = 0; b < B; ++b) {
            const T* row = lv.data.data() + (b * lt + (lt - 1)) * V;
            std::int32_t best = 0;
            for (std::int64_t j = 1; j < V; ++j)
                if (row[j] > row[best]) best = static_cast<std::int32_t>(j);
            next[static_cast<std::size_t>(b)] = best;
            if (!done[static_cast<std::size_t>(b)]) {
                if (best == eos_id)
                    done[static_cast<std::size_t>(b)] = true;
                else
                    out[static_cast<std::size_t>(b)].push_back(best);
            }
        }
        bool all_done = true;
        for (std::int64_t b = 0; b < B; ++b) all_done = all_done && done[static_cast<std::size_t>(b)];
        if (all_done) break;
        prefix.resize(static_cast<std::size_t>(B * (lt + 1)));
        // Re-pack the prefix rows from [B, lt] to [B, lt+1], widest row last
        // so the in-place shift never overwrites unread data.
        for (std::int64_t b = B - 1; b >= 0; --b) {
            for (std::int64_t j = lt - 1; j >= 0; --j)
                prefix[static_cast<std::size_t>(b * (lt + 1) + j)] = prefix[static_cast<std::size_t>(b * lt + j)];
            prefix[static_cast<std::size_t>(b * (lt + 1) + lt)] = next[static_cast<std::size_t>(b)];
        }
    }
    return out;
}

}  // namespace packmt
