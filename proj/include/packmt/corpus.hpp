#pragma once

// Synthetic multilingual parallel data. Each language is a seeded bijective
// cipher over a shared content vocabulary plus a windowed positional
// reordering rule; parallel pairs are English (identity) against one such
// language. Conflict mode (the default) gives every language its own
// permutation of the same target vocabulary so pairs compete for the shared
// parameters; disjoint mode assigns per-language target ranges for the
// non-conflicting ablation.

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "packmt/common.hpp"
#include "packmt/model.hpp"

namespace packmt {

// Token ID layout: specials, then content, then one control token per
// language (English first), contiguous above the content range.
struct VocabLayout {
    std::int32_t content_size = 68;
    std::int32_t num_languages = 9;  // English + 8 pair languages

    static constexpr std::int32_t pad = 0;
    static constexpr std::int32_t bos = 1;
    static constexpr std::int32_t eos = 2;
    static constexpr std::int32_t content_begin = 3;

    std::int32_t control_begin() const { return content_begin + content_size; }
    std::int32_t vocab_size() const { return control_begin() + num_languages; }

    // Language index 0 is English; pair k's language is index k.
    std::int32_t control_for(std::int32_t lang) const {
        if (lang < 0 || lang >= num_languages)
            throw ContractViolation("vocab: unknown language index " + std::to_string(lang));
        return control_begin() + lang;
    }

    bool is_content(std::int32_t id) const { return id >= content_begin && id < control_begin(); }
    bool is_control(std::int32_t id) const { return id >= control_begin() && id < vocab_size(); }

    bool operator==(const VocabLayout&) const = default;
};

// Prepends the control token for the target language and appends eos.
inline std::vector<std::int32_t> encode_source(const VocabLayout& v, const std::vector<std::int32_t>& content,
                                               std::int32_t target_lang) {
    std::vector<std::int32_t> out;
    out.reserve(content.size() + 2);
    out.push_back(v.control_for(target_lang));
    for (std::int32_t id : content) {
        if (!v.is_content(id)) throw ContractViolation("encode: token " + std::to_string(id) + " is not content");
        out.push_back(id);
    }
    out.push_back(VocabLayout::eos);
    return out;
}

// Strips specials and control tokens, keeping content only.
inline std::vector<std::int32_t> decode_strip(const VocabLayout& v, const std::vector<std::int32_t>& tokens) {
    std::vector<std::int32_t> out;
    for (std::int32_t id : tokens) {
        if (id < 0 || id >= v.vocab_size())
            throw ContractViolation("decode: token " + std::to_string(id) + " outside the vocabulary");
        if (v.is_content(id)) out.push_back(id);
    }
    return out;
}

// One synthetic language: a bijective permutation of the content vocabulary
// and a windowed positional reordering (window 1 = no reordering).
struct LanguageSpec {
    std::int32_t lang_id = 0;                // 1..N; English (0) is implicit identity
    std::vector<std::int32_t> cipher;        // relative content permutation
    std::vector<std::int32_t> window_perm;   // permutation of [0, window)
    std::int64_t reorder_window = 1;

    void validate(const VocabLayout& v) const {
        if (static_cast<std::int32_t>(cipher.size()) != v.content_size)
            throw ContractViolation("language: cipher size does not match the content vocabulary");
        std::vector<bool> seen(cipher.size(), false);
        for (std::int32_t c : cipher) {
            if (c < 0 || c >= static_cast<std::int32_t>(cipher.size()) || seen[static_cast<std::size_t>(c)])
                throw ContractViolation("language: cipher is not a bijection");
            seen[static_cast<std::size_t>(c)] = true;
        }
        if (reorder_window < 1 || static_cast<std::int64_t>(window_perm.size()) != reorder_window)
            throw ContractViolation("language: bad reorder window");
        std::vector<bool> wseen(window_perm.size(), false);
        for (std::int32_t p : window_perm) {
            if (p < 0 || p >= reorder_window || wseen[static_cast<std::size_t>(p)])
                throw ContractViolation("language: window permutation is not a bijection");
            wseen[static_cast<std::size_t>(p)] = true;
        }
    }

    // Applies the window permutation blockwise; a short tail block uses the
    // permutation filtered to its length, which stays bijective.
    std::vector<std::int32_t> reorder(const std::vector<std::int32_t>& s) const {
        if (reorder_window == 1) return s;
        std::vector<std::int32_t> out(s.size());
        for (std::size_t block = 0; block * reorder_window < s.size(); ++block) {
            const std::size_t begin = block * static_cast<std::size_t>(reorder_window);
            const std::size_t len = std::min(static_cast<std::size_t>(reorder_window), s.size() - begin);
            std::size_t slot = 0;
            for (std::int32_t p : window_perm) {
                if (static_cast<std::size_t>(p) >= len) continue;
                out[begin + slot] = s[begin + static_cast<std::size_t>(p)];
                ++slot;
            }
        }
        return out;
    }

    std::vector<std::int32_t> unreorder(const std::vector<std::int32_t>& s) const {
        if (reorder_window == 1) return s;
        std::vector<std::int32_t> out(s.size());
        for (std::size_t block = 0; block * reorder_window < s.size(); ++block) {
            const std::size_t begin = block * static_cast<std::size_t>(reorder_window);
            const std::size_t len = std::min(static_cast<std::size_t>(reorder_window), s.size() - begin);
            std::size_t slot = 0;
            for (std::int32_t p : window_perm) {
                if (static_cast<std::size_t>(p) >= len) continue;
                out[begin + static_cast<std::size_t>(p)] = s[begin + slot];
                ++slot;
            }
        }
        return out;
    }

    // base content (absolute ids) -> this language's sentence.
    std::vector<std::int32_t> apply(const VocabLayout& v, const std::vector<std::int32_t>& base) const {
        std::vector<std::int32_t> out;
        out.reserve(base.size());
        for (std::int32_t id : base) {
            if (!v.is_content(id)) throw ContractViolation("language: base token is not content");
            out.push_back(VocabLayout::content_begin + cipher[static_cast<std::size_t>(id - VocabLayout::content_begin)]);
        }
        return reorder(out);
    }

    std::vector<std::int32_t> invert(const VocabLayout& v, const std::vector<std::int32_t>& sentence) const {
        std::vector<std::int32_t> inverse_cipher(cipher.size());
        for (std::size_t i = 0; i < cipher.size(); ++i)
            inverse_cipher[static_cast<std::size_t>(cipher[i])] = static_cast<std::int32_t>(i);
        std::vector<std::int32_t> out;
        out.reserve(sentence.size());
        for (std::int32_t id : unreorder(sentence)) {
            if (!v.is_content(id)) throw ContractViolation("language: sentence token is not content");
            out.push_back(VocabLayout::content_begin +
                          inverse_cipher[static_cast<std::size_t>(id - VocabLayout::content_begin)]);
        }
        return out;
    }
};

struct CorpusConfig {
    std::vector<std::int64_t> train_sizes{8000, 6000, 4000, 3000, 2000, 1000, 700, 400};
    std::int64_t dev_size = 128;
    std::int64_t test_size = 128;
    std::int64_t probe_count = 64;
    bool conflict = true;
    std::int32_t content_size = 68;
    std::int64_t min_len = 4;
    std::int64_t max_len = 16;
    // Per-pair reorder windows; empty means the default cycle 2,3,4,...
    std::vector<std::int64_t> reorder_windows;

    void validate() const {
        if (train_sizes.empty()) throw ConfigError("corpus: need at least one pair");
        if (train_sizes.size() > 254) throw ConfigError("corpus: owner ids cap the pair count at 254");
        for (std::int64_t n : train_sizes)
            if (n <= 0) throw ConfigError("corpus: pair sizes must be positive");
        if (dev_size <= 0 || test_size <= 0 || probe_count <= 0)
            throw ConfigError("corpus: split sizes must be positive");
        if (min_len < 1 || max_len < min_len) throw ConfigError("corpus: bad sentence length range");
        if (content_size < 2) throw ConfigError("corpus: content vocabulary too small");
        if (!reorder_windows.empty() && reorder_windows.size() != train_sizes.size())
            throw ConfigError("corpus: reorder window list must match the pair count");
    }

    std::int32_t num_pairs() const { return static_cast<std::int32_t>(train_sizes.size()); }

    bool operator==(const CorpusConfig&) const = default;
};

enum class Split { train, dev, test, probes };

enum class Direction { en_to_xx, xx_to_en };

// One directed example: encoder input (control + content + eos) and the
// reference target content.
struct Example {
    std::vector<std::int32_t> src;
    std::vector<std::int32_t> tgt_content;
};

struct PairData {
    std::vector<std::vector<std::int32_t>> train, dev, test, probes;  // base sentences, absolute ids

    const std::vector<std::vector<std::int32_t>>& split(Split s) const {
        switch (s) {
            case Split::train: return train;
            case Split::dev: return dev;
            case Split::test: return test;
            default: return probes;
        }
    }
};

class Corpus {
  public:
    // Deterministic generation: every pair draws from its own named streams.
    static Corpus generate(CorpusConfig cfg, std::uint64_t seed) {
        cfg.validate();
        Corpus c;
        c.cfg_ = cfg;
        c.seed_ = seed;
        c.vocab_.content_size = cfg.content_size;
        c.vocab_.num_languages = cfg.num_pairs() + 1;
        const std::int32_t n_pairs = cfg.num_pairs();

        // In disjoint mode every language (including English) writes within
        // its own slice of the content range, so base sentences draw from a
        // reduced alphabet.
        const std::int32_t slice = cfg.conflict ? cfg.content_size : cfg.content_size / (n_pairs + 1);
        if (slice < 2) throw ConfigError("corpus: content vocabulary too small for disjoint mode");
        c.base_alphabet_ = slice;

        for (std::int32_t k = 1; k <= n_pairs; ++k) {
            LanguageSpec lang;
            lang.lang_id = k;
            auto rs = rng::stream(seed, "corpus.cipher." + std::to_string(k));
            if (cfg.conflict) {
                lang.cipher.resize(static_cast<std::size_t>(cfg.content_size));
                for (std::int32_t i = 0; i < cfg.content_size; ++i) lang.cipher[static_cast<std::size_t>(i)] = i;
                rs.shuffle(lang.cipher.begin(), lang.cipher.end());
            } else {
                // Identity outside the base alphabet; the base slice maps
                // into this language's own slice, permuted.
                lang.cipher.resize(static_cast<std::size_t>(cfg.content_size));
                for (std::int32_t i = 0; i < cfg.content_size; ++i) lang.cipher[static_cast<std::size_t>(i)] = i;
                std::vector<std::int32_t> targets(static_cast<std::size_t>(slice));
                for (std::int32_t i = 0; i < slice; ++i) targets[static_cast<std::size_t>(i)] = k * slice + i;
                rs.shuffle(targets.begin(), targets.end());
                for (std::int32_t i = 0; i < slice; ++i) {
                    lang.cipher[static_cast<std::size_t>(i)] = targets[static_cast<std::size_t>(i)];
                    lang.cipher[static_cast<std::size_t>(k * slice + i)] = i;  // keep it a bijection
                }
            }
            lang.reorder_window = cfg.reorder_windows.empty()
                                      ? 2 + ((k - 1) % 3)
                                      : cfg.reorder_windows[static_cast<std::size_t>(k - 1)];
            lang.window_perm.resize(static_cast<std::size_t>(lang.reorder_window));
            for (std::int32_t i = 0; i < lang.reorder_window; ++i) lang.window_perm[static_cast<std::size_t>(i)] = i;
            auto wrs = rng::stream(seed, "corpus.window." + std::to_string(k));
            wrs.shuffle(lang.window_perm.begin(), lang.window_perm.end());
            lang.validate(c.vocab_);
            c.langs_.push_back(std::move(lang));
        }

        for (std::int32_t k = 1; k <= n_pairs; ++k) {
            PairData pd;
            std::set<std::vector<std::int32_t>> seen;
            auto rs = rng::stream(seed, "corpus.sentences." + std::to_string(k));
            auto draw = [&](std::vector<std::vector<std::int32_t>>& into, std::int64_t count) {
                std::int64_t stale = 0;  // consecutive duplicate draws
                while (static_cast<std::int64_t>(into.size()) < count) {
                    const std::int64_t len =
                        cfg.min_len + static_cast<std::int64_t>(rs.below(static_cast<std::uint64_t>(cfg.max_len - cfg.min_len + 1)));
                    std::vector<std::int32_t> s;
                    s.reserve(static_cast<std::size_t>(len));
                    for (std::int64_t j = 0; j < len; ++j)
                        s.push_back(VocabLayout::content_begin +
                                    static_cast<std::int32_t>(rs.below(static_cast<std::uint64_t>(c.base_alphabet_))));
                    if (seen.insert(s).second) {
                        into.push_back(std::move(s));
                        stale = 0;
                    } else if (++stale > 100000) {
                        throw ConfigError("corpus: cannot draw enough distinct sentences for pair " + std::to_string(k));
                    }
                }
            };
            draw(pd.train, cfg.train_sizes[static_cast<std::size_t>(k - 1)]);
            draw(pd.dev, cfg.dev_size);
            draw(pd.test, cfg.test_size);
            draw(pd.probes, cfg.probe_count);
            c.pairs_.push_back(std::move(pd));
        }
        return c;
    }

    const VocabLayout& vocab() const { return vocab_; }
    const CorpusConfig& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    std::int32_t num_pairs() const { return cfg_.num_pairs(); }
    std::int32_t base_alphabet() const { return base_alphabet_; }

    const LanguageSpec& language(std::int32_t k) const {
        check_pair(k);
        return langs_[static_cast<std::size_t>(k - 1)];
    }

    const PairData& pair(std::int32_t k) const {
        check_pair(k);
        return pairs_[static_cast<std::size_t>(k - 1)];
    }

    // Directed example for pair k from a base sentence.
    Example directed(std::int32_t k, Direction dir, const std::vector<std::int32_t>& base) const {
        check_pair(k);
        const auto& lang = langs_[static_cast<std::size_t>(k - 1)];
        if (dir == Direction::en_to_xx) return Example{encode_source(vocab_, base, k), lang.apply(vocab_, base)};
        return Example{encode_source(vocab_, lang.apply(vocab_, base), 0), base};
    }

    // Zero-shot direction between two non-English languages: the source is
    // written in language `from` with the control token of language `to`.
    Example zero_shot(std::int32_t from, std::int32_t to, const std::vector<std::int32_t>& base) const {
        check_pair(from);
        check_pair(to);
        if (from == to) throw ContractViolation("zero_shot: languages must differ");
        const auto& lf = langs_[static_cast<std::size_t>(from - 1)];
        const auto& lt = langs_[static_cast<std::size_t>(to - 1)];
        return Example{encode_source(vocab_, lf.apply(vocab_, base), to), lt.apply(vocab_, base)};
    }

    // Internal state setters used by the corpus loader.
    static Corpus assemble(CorpusConfig cfg, std::uint64_t seed, VocabLayout vocab, std::int32_t base_alphabet,
                           std::vector<LanguageSpec> langs, std::vector<PairData> pairs) {
        Corpus c;
        c.cfg_ = std::move(cfg);
        c.seed_ = seed;
        c.vocab_ = vocab;
        c.base_alphabet_ = base_alphabet;
        c.langs_ = std::move(langs);
        c.pairs_ = std::move(pairs);
        for (const auto& l : c.langs_) l.validate(c.vocab_);
        if (c.langs_.size() != c.pairs_.size() || c.langs_.size() != c.cfg_.train_sizes.size())
            throw ContractViolation("corpus: inconsistent assembly");
        return c;
    }

  private:
    void check_pair(std::int32_t k) const {
        if (k < 1 || k > num_pairs()) throw ContractViolation("corpus: unknown pair " + std::to_string(k));
    }

    CorpusConfig cfg_;
    std::uint64_t seed_ = 0;
    VocabLayout vocab_;
    std::int32_t base_alphabet_ = 0;
    std::vector<LanguageSpec> langs_;
    std::vector<PairData> pairs_;
};

// w_i = (n_i / sum(n))^(1/T), normalized to sum to 1.
inline std::vector<double> temperature_weights(const std::vector<std::int64_t>& sizes, double temperature) {
    if (temperature <= 0.0) throw ContractViolation("temperature_weights: T must be positive");
    if (sizes.empty()) throw ContractViolation("temperature_weights: need at least one pair");
    double total = 0.0;
    for (std::int64_t n : sizes) {
        if (n <= 0) throw ContractViolation("temperature_weights: sizes must be positive");
        total += static_cast<double>(n);
    }
    std::vector<double> w;
    w.reserve(sizes.size());
    double norm = 0.0;
    for (std::int64_t n : sizes) {
        const double v = std::pow(static_cast<double>(n) / total, 1.0 / temperature);
        w.push_back(v);
        norm += v;
    }
    for (double& v : w) v /= norm;
    return w;
}

// Pads directed examples into one TokenBatch (bos-shifted decoder input,
// eos-terminated loss target).
inline TokenBatch build_batch(const std::vector<Example>& examples) {
    if (examples.empty()) throw ContractViolation("build_batch: empty batch");
    TokenBatch b;
    b.batch = static_cast<std::int64_t>(examples.size());
    for (const auto& e : examples) {
        b.src_len = std::max(b.src_len, static_cast<std::int64_t>(e.src.size()));
        b.tgt_len = std::max(b.tgt_len, static_cast<std::int64_t>(e.tgt_content.size()) + 1);
    }
    b.src.assign(static_cast<std::size_t>(b.batch * b.src_len), VocabLayout::pad);
    b.tgt_in.assign(static_cast<std::size_t>(b.batch * b.tgt_len), VocabLayout::pad);
    b.tgt_out.assign(static_cast<std::size_t>(b.batch * b.tgt_len), VocabLayout::pad);
    for (std::int64_t i = 0; i < b.batch; ++i) {
        const auto& e = examples[static_cast<std::size_t>(i)];
        std::copy(e.src.begin(), e.src.end(), b.src.begin() + i * b.src_len);
        b.tgt_in[static_cast<std::size_t>(i * b.tgt_len)] = VocabLayout::bos;
        std::copy(e.tgt_content.begin(), e.tgt_content.end(), b.tgt_in.begin() + i * b.tgt_len + 1);
        std::copy(e.tgt_content.begin(), e.tgt_content.end(), b.tgt_out.begin() + i * b.tgt_len);
        b.tgt_out[static_cast<std::size_t>(i * b.tgt_len + static_cast<std::int64_t>(e.tgt_content.size()))] =
            VocabLayout::eos;
    }
    return b;
}

// Temperature-sampled batch stream over a set of pairs. Each batch holds
// one pair and one direction; sentences are drawn with replacement, and the
// padded token footprint stays within max_tokens.
class BatchStream {
  public:
    BatchStream(const Corpus& corpus, std::vector<std::int32_t> pair_ids, Split split, double temperature,
                std::int64_t max_tokens, rng::Stream stream)
        : corpus_(corpus), pair_ids_(std::move(pair_ids)), split_(split), max_tokens_(max_tokens), rs_(stream) {
        if (pair_ids_.empty()) throw ContractViolation("batch stream: need at least one pair");
        std::vector<std::int64_t> sizes;
        for (std::int32_t k : pair_ids_) {
            if (corpus_.pair(k).split(split_).empty())
                throw ContractViolation("batch stream: empty split for pair " + std::to_string(k));
            sizes.push_back(static_cast<std::int64_t>(corpus_.pair(k).split(split_).size()));
        }
        weights_ = temperature_weights(sizes, temperature);
        const std::int64_t widest = corpus_.config().max_len + 2;  // control + content + eos
        if (max_tokens_ < widest)
            throw ContractViolation("batch stream: max_tokens below the longest possible sequence");
    }

    // Samples the pair, the direction, then fills the batch up to the token
    // budget counting the padded row width.
    TokenBatch next() {
        const std::int32_t k = pair_ids_[sample_pair_index()];
        const Direction dir = rs_.below(2) == 0 ? Direction::en_to_xx : Direction::xx_to_en;
        const auto& sentences = corpus_.pair(k).split(split_);
        std::vector<Example> batch;
        std::int64_t width = 0;
        while (true) {
            const auto& base = sentences[static_cast<std::size_t>(rs_.below(sentences.size()))];
            const Example e = corpus_.directed(k, dir, base);
            const std::int64_t w =
                std::max({width, static_cast<std::int64_t>(e.src.size()),
                          static_cast<std::int64_t>(e.tgt_content.size()) + 1});
            if ((static_cast<std::int64_t>(batch.size()) + 1) * w > max_tokens_ && !batch.empty()) break;
            width = w;
            batch.push_back(e);
            if ((static_cast<std::int64_t>(batch.size()) + 1) * width > max_tokens_) break;
        }
        last_pair_ = k;
        last_direction_ = dir;
        last_sentences_ = static_cast<std::int64_t>(batch.size());
        return build_batch(batch);
    }

    std::int32_t last_pair() const { return last_pair_; }
    Direction last_direction() const { return last_direction_; }
    std::int64_t last_sentences() const { return last_sentences_; }
    const std::vector<double>& weights() const { return weights_; }

  private:
    std::size_t sample_pair_index() {
        const double u = rs_.real01();
        double acc = 0.0;
        for (std::size_t i = 0; i < weights_.size(); ++i) {
            acc += weights_[i];
            if (u < acc) return i;
        }
        return weights_.size() - 1;
    }

    const Corpus& corpus_;
    std::vector<std::int32_t> pair_ids_;
    Split split_;
    std::int64_t max_tokens_;
    rng::Stream rs_;
    std::vector<double> weights_;
    std::int32_t last_pair_ = 0;
    Direction last_direction_ = Direction::en_to_xx;
    std::int64_t last_sentences_ = 0;
};

}  // namespace packmt
