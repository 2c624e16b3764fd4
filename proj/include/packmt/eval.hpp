#pragma once

// Scoring and verification: corpus BLEU (unsmoothed, reference-clipped,
// computed on token IDs), token accuracy, teacher-forced loss, per-direction
// evaluation through greedy decoding, zero-shot evaluation restricted to the
// shared owner set, and bitwise stability comparison over probe inputs.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "packmt/corpus.hpp"
#include "packmt/model.hpp"
#include "packmt/packing.hpp"

namespace packmt {

struct BleuScore {
    double value = 0.0;
    std::vector<double> precisions;  // modified n-gram precisions, n = 1..max_n
    double brevity_penalty = 0.0;
    std::int64_t hyp_len = 0;
    std::int64_t ref_len = 0;
};

// Corpus-level BLEU with reference-clipped n-gram counts and brevity penalty
// min(1, exp(1 - ref_len/hyp_len)). Zero anywhere -> score 0 (no smoothing).
// Token IDs must fit in 16 bits so n-grams pack into one 64-bit key.
inline BleuScore bleu(const std::vector<std::vector<std::int32_t>>& hyps,
                      const std::vector<std::vector<std::int32_t>>& refs, int max_n = 4) {
    if (hyps.empty()) throw ContractViolation("bleu: empty corpus");
    if (hyps.size() != refs.size()) throw ContractViolation("bleu: hypothesis/reference count mismatch");
    if (max_n < 1 || max_n > 4) throw ContractViolation("bleu: max_n must be in [1, 4]");

    auto check_ids = [](const std::vector<std::int32_t>& s) {
        for (std::int32_t id : s)
            if (id < 0 || id >= (1 << 16)) throw ContractViolation("bleu: token id " + std::to_string(id) + " out of range");
    };

    BleuScore out;
    out.precisions.assign(static_cast<std::size_t>(max_n), 0.0);
    std::vector<std::int64_t> matched(static_cast<std::size_t>(max_n), 0);
    std::vector<std::int64_t> total(static_cast<std::size_t>(max_n), 0);

    std::unordered_map<std::uint64_t, std::int64_t> hyp_counts, ref_counts;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        const auto& h = hyps[i];
        const auto& r = refs[i];
        check_ids(h);
        check_ids(r);
        out.hyp_len += static_cast<std::int64_t>(h.size());
        out.ref_len += static_cast<std::int64_t>(r.size());
        for (int n = 1; n <= max_n; ++n) {
            auto count_grams = [n](const std::vector<std::int32_t>& s,
                                   std::unordered_map<std::uint64_t, std::int64_t>& into) {
                into.clear();
                if (static_cast<int>(s.size()) < n) return;
                // A 4-gram of 16-bit ids fills the key exactly; shorter
                // n-grams leave the high bits zero. Each n keeps its own
                // maps, so there is no cross-order aliasing.
                for (std::size_t p = 0; p + static_cast<std::size_t>(n) <= s.size(); ++p) {
                    std::uint64_t key = 0;
                    for (int j = 0; j < n; ++j)
                        key = (key << 16) | static_cast<std::uint64_t>(s[p + static_cast<std::size_t>(j)]);
                    into[key] += 1;
                }
            };
            count_grams(h, hyp_counts);
            count_grams(r, ref_counts);
            for (const auto& [key, count] : hyp_counts) {
                total[static_cast<std::size_t>(n - 1)] += count;
                const auto it = ref_counts.find(key);
                if (it != ref_counts.end())
                    matched[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
            }
        }
    }

    bool any_zero = false;
    for (int n = 0; n < max_n; ++n) {
        out.precisions[static_cast<std::size_t>(n)] =
            total[static_cast<std::size_t>(n)] > 0
                ? static_cast<double>(matched[static_cast<std::size_t>(n)]) /
                      static_cast<double>(total[static_cast<std::size_t>(n)])
                : 0.0;
        if (out.precisions[static_cast<std::size_t>(n)] == 0.0) any_zero = true;
    }

    out.brevity_penalty =
        out.hyp_len == 0 ? 0.0
                         : std::min(1.0, std::exp(1.0 - static_cast<double>(out.ref_len) /
                                                            static_cast<double>(out.hyp_len)));
    if (!any_zero) {
        double log_sum = 0.0;
        for (double p : out.precisions) log_sum += std::log(p);
        out.value = out.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
    }
    return out;
}

// Argmax over the vocabulary per position, ties resolved to the lowest id.
template <typename T>
std::vector<std::int32_t> argmax_tokens(const Tensor<T>& logits) {
    const std::int64_t vocab = logits.shape.back();
    const std::int64_t rows = logits.numel() / vocab;
    std::vector<std::int32_t> out(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const T* p = logits.data.data() + r * vocab;
        std::int32_t best = 0;
        for (std::int64_t v = 1; v < vocab; ++v)
            if (p[v] > p[best]) best = static_cast<std::int32_t>(v);
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

struct TokenStats {
    std::int64_t correct = 0;
    std::int64_t total = 0;
    double loss_sum = 0.0;  // summed per-token cross-entropy

    double accuracy() const {
        if (total == 0) throw ContractViolation("token stats: no scored positions");
        return static_cast<double>(correct) / static_cast<double>(total);
    }
    double mean_loss() const {
        if (total == 0) throw ContractViolation("token stats: no scored positions");
        return loss_sum / static_cast<double>(total);
    }
};

// Teacher-forced scoring of one batch: argmax accuracy and summed
// cross-entropy over non-pad reference positions.
template <typename T>
TokenStats score_batch(const ParamStore<T>& params, const ModelConfig& cfg, const TokenBatch& batch,
                       std::int32_t pad_id = VocabLayout::pad) {
    Tape<T> tape;
    tape.recording = false;  // forward-only scoring
    BoundModel<T> model(tape, params, cfg);
    const int logits_id = model.logits(batch, pad_id);
    const int loss_id = ops::cross_entropy_mean(tape, logits_id, batch.tgt_out, pad_id);

    TokenStats stats;
    for (std::int32_t t : batch.tgt_out)
        if (t != pad_id) ++stats.total;
    const auto pred = argmax_tokens(tape.value(logits_id));
    for (std::size_t i = 0; i < batch.tgt_out.size(); ++i)
        if (batch.tgt_out[i] != pad_id && pred[i] == batch.tgt_out[i]) ++stats.correct;
    stats.loss_sum = static_cast<double>(tape.value(loss_id).data[0]) * static_cast<double>(stats.total);
    return stats;
}

namespace detail {

// Splits examples into row-bounded chunks so evaluation memory stays flat.
inline std::vector<std::vector<Example>> chunk_examples(const std::vector<Example>& examples,
                                                        std::int64_t rows_per_chunk = 64) {
    if (examples.empty()) throw ContractViolation("eval: empty example set");
    std::vector<std::vector<Example>> chunks;
    for (std::size_t i = 0; i < examples.size(); i += static_cast<std::size_t>(rows_per_chunk))
        chunks.emplace_back(examples.begin() + static_cast<std::ptrdiff_t>(i),
                            examples.begin() +
                                static_cast<std::ptrdiff_t>(std::min(i + static_cast<std::size_t>(rows_per_chunk),
                                                                     examples.size())));
    return chunks;
}

}  // namespace detail

template <typename T>
TokenStats score_examples(const ParamStore<T>& params, const ModelConfig& cfg, const std::vector<Example>& examples) {
    TokenStats stats;
    for (const auto& chunk : detail::chunk_examples(examples)) {
        const TokenStats s = score_batch(params, cfg, build_batch(chunk));
        stats.correct += s.correct;
        stats.total += s.total;
        stats.loss_sum += s.loss_sum;
    }
    return stats;
}

// Fraction of reference positions where the teacher-forced argmax matches.
template <typename T>
double token_accuracy(const ParamStore<T>& params, const ModelConfig& cfg, const std::vector<Example>& examples) {
    return score_examples(params, cfg, examples).accuracy();
}

struct DirectionEval {
    BleuScore bleu;
    double token_accuracy = 0.0;
    double loss = 0.0;
};

// Greedy-decodes every example and scores BLEU against the reference
// content, alongside teacher-forced accuracy and loss.
template <typename T>
DirectionEval evaluate_examples(const ParamStore<T>& params, const ModelConfig& cfg,
                                const std::vector<Example>& examples, std::int64_t max_decode_len = 0) {
    if (max_decode_len <= 0) {
        std::int64_t longest = 0;
        for (const auto& e : examples) longest = std::max(longest, static_cast<std::int64_t>(e.tgt_content.size()));
        max_decode_len = std::min<std::int64_t>(longest + 4, cfg.max_seq_len);
    }

    DirectionEval out;
    const TokenStats stats = score_examples(params, cfg, examples);
    out.token_accuracy = stats.accuracy();
    out.loss = stats.mean_loss();

    std::vector<std::vector<std::int32_t>> hyps, refs;
    for (const auto& chunk : detail::chunk_examples(examples)) {
        std::vector<std::vector<std::int32_t>> sources;
        sources.reserve(chunk.size());
        for (const auto& e : chunk) sources.push_back(e.src);
        auto decoded = greedy_decode(params, cfg, sources, VocabLayout::pad, VocabLayout::bos, VocabLayout::eos,
                                     max_decode_len);
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            hyps.push_back(std::move(decoded[i]));
            refs.push_back(chunk[i].tgt_content);
        }
    }
    out.bleu = bleu(hyps, refs);
    return out;
}

inline std::vector<Example> directed_split(const Corpus& corpus, std::int32_t pair, Direction dir, Split split) {
    std::vector<Example> out;
    for (const auto& base : corpus.pair(pair).split(split)) out.push_back(corpus.directed(pair, dir, base));
    return out;
}

struct PairEval {
    DirectionEval en_to_xx;
    DirectionEval xx_to_en;

    double mean_bleu() const { return 0.5 * (en_to_xx.bleu.value + xx_to_en.bleu.value); }
    double mean_loss() const { return 0.5 * (en_to_xx.loss + xx_to_en.loss); }
};

template <typename T>
PairEval evaluate_pair(const ParamStore<T>& params, const ModelConfig& cfg, const Corpus& corpus, std::int32_t pair,
                       Split split) {
    PairEval out;
    out.en_to_xx = evaluate_examples(params, cfg, directed_split(corpus, pair, Direction::en_to_xx, split));
    out.xx_to_en = evaluate_examples(params, cfg, directed_split(corpus, pair, Direction::xx_to_en, split));
    return out;
}

// Zero-shot direction xx->yy: decode through the shared owner set only.
// `full_params` is the unmasked store; the restriction happens here so a
// caller cannot accidentally leak pair-owned weights into the decode.
template <typename T>
DirectionEval zero_shot_eval(const ParamStore<T>& full_params, const OwnershipMask& mask, const ModelConfig& cfg,
                             const Corpus& corpus, std::int32_t from, std::int32_t to, Split split) {
    const ParamStore<T> shared = masked_view(full_params, mask, ActiveSet::zero_shot());
    std::vector<Example> examples;
    for (const auto& base : corpus.pair(from).split(split)) examples.push_back(corpus.zero_shot(from, to, base));
    return evaluate_examples(shared, cfg, examples);
}

// Decoded zero-shot outputs for every ordered language pair (from != to),
// keyed "from->to". Used for cross-checkpoint equality checks.
template <typename T>
std::map<std::string, std::vector<std::vector<std::int32_t>>> zero_shot_outputs(const ParamStore<T>& full_params,
                                                                                const OwnershipMask& mask,
                                                                                const ModelConfig& cfg,
                                                                                const Corpus& corpus, Split split) {
    const ParamStore<T> shared = masked_view(full_params, mask, ActiveSet::zero_shot());
    std::map<std::string, std::vector<std::vector<std::int32_t>>> out;
    for (std::int32_t from = 1; from <= corpus.num_pairs(); ++from) {
        for (std::int32_t to = 1; to <= corpus.num_pairs(); ++to) {
            if (from == to) continue;
            std::vector<std::vector<std::int32_t>> sources;
            std::int64_t longest = 0;
            for (const auto& base : corpus.pair(from).split(split)) {
                Example e = corpus.zero_shot(from, to, base);
                longest = std::max(longest, static_cast<std::int64_t>(e.tgt_content.size()));
                sources.push_back(std::move(e.src));
            }
            out[std::to_string(from) + "->" + std::to_string(to)] =
                greedy_decode(shared, cfg, sources, VocabLayout::pad, VocabLayout::bos, VocabLayout::eos,
                              std::min<std::int64_t>(longest + 4, cfg.max_seq_len));
        }
    }
    return out;
}

// Eval-mode logits for one batch; the foundation of bitwise stability checks.
template <typename T>
Tensor<T> probe_logits(const ParamStore<T>& params, const ModelConfig& cfg, const TokenBatch& batch,
                       std::int32_t pad_id = VocabLayout::pad) {
    Tape<T> tape;
    tape.recording = false;
    BoundModel<T> model(tape, params, cfg);
    return tape.value(model.logits(batch, pad_id));
}

// Named logit tensors captured at a moment in training; comparing two
// snapshots bitwise is the frozen-behavior verification.
template <typename T>
using LogitSnapshot = std::map<std::string, Tensor<T>>;

// Probe logits for pair t under its inference owner set and under the
// shared-only set, both directions. Keys are stable across runs.
template <typename T>
LogitSnapshot<T> snapshot_pair_logits(const ParamStore<T>& full_params, const OwnershipMask& mask,
                                      const ModelConfig& cfg, const Corpus& corpus, std::int32_t pair) {
    LogitSnapshot<T> snap;
    const ParamStore<T> inference = masked_view(full_params, mask, ActiveSet::inference(pair));
    const ParamStore<T> shared = masked_view(full_params, mask, ActiveSet::zero_shot());
    for (Direction dir : {Direction::en_to_xx, Direction::xx_to_en}) {
        std::vector<Example> examples;
        for (const auto& base : corpus.pair(pair).probes) examples.push_back(corpus.directed(pair, dir, base));
        const TokenBatch batch = build_batch(examples);
        const char* dname = dir == Direction::en_to_xx ? "en_xx" : "xx_en";
        snap["pair" + std::to_string(pair) + "." + dname + ".inference"] = probe_logits(inference, cfg, batch);
        snap["pair" + std::to_string(pair) + "." + dname + ".shared"] = probe_logits(shared, cfg, batch);
    }
    return snap;
}

struct StabilityResult {
    bool pass = true;
    double max_deviation = 0.0;
    std::string first_mismatch;  // empty when pass
};

// Bitwise comparison of two snapshots. Key sets must match exactly.
template <typename T>
StabilityResult stability_check(const LogitSnapshot<T>& before, const LogitSnapshot<T>& after) {
    if (before.size() != after.size()) throw ContractViolation("stability: snapshot key sets differ");
    StabilityResult r;
    for (const auto& [key, lhs] : before) {
        const auto it = after.find(key);
        if (it == after.end()) throw ContractViolation("stability: snapshot key missing: " + key);
        const Tensor<T>& rhs = it->second;
        if (lhs.shape != rhs.shape) throw ContractViolation("stability: shape mismatch at " + key);
        for (std::size_t i = 0; i < lhs.data.size(); ++i) {
            if (std::memcmp(&lhs.data[i], &rhs.data[i], sizeof(T)) != 0) {
                if (r.pass) r.first_mismatch = key;
                r.pass = false;
                r.max_deviation = std::max(
                    r.max_deviation, std::abs(static_cast<double>(lhs.data[i]) - static_cast<double>(rhs.data[i])));
            }
        }
    }
    return r;
}

// Cross-system summary per pair: mean-direction BLEU per system plus the
// adapted-vs-parent delta. Full-scale reference deltas are carried as fixed
// annotations next to the measured desk numbers.
struct InterferenceRow {
    std::int32_t pair = 0;
    std::map<std::string, double> bleu_by_system;  // averaged over both directions
    double delta_vs_parent = 0.0;                  // adapted - parent
    double param_fraction = 0.0;                   // fraction of prunable weights owned
};

struct InterferenceReport {
    std::vector<InterferenceRow> rows;
    // Published full-scale averages, kept as context rows beside desk runs.
    static constexpr double reference_delta_xx_en = 1.40;
    static constexpr double reference_delta_en_xx = 1.32;
};

inline InterferenceReport interference_report(const std::map<std::string, std::map<std::int32_t, PairEval>>& systems,
                                              const std::map<std::int32_t, double>& param_fraction) {
    if (!systems.count("parent") || !systems.count("adapted"))
        throw ContractViolation("interference report: needs 'parent' and 'adapted' systems");
    InterferenceReport report;
    for (const auto& [pair, parent_eval] : systems.at("parent")) {
        InterferenceRow row;
        row.pair = pair;
        for (const auto& [system, evals] : systems) {
            const auto it = evals.find(pair);
            if (it == evals.end()) throw ContractViolation("interference report: system '" + system +
                                                           "' missing pair " + std::to_string(pair));
            row.bleu_by_system[system] = it->second.mean_bleu();
        }
        row.delta_vs_parent = row.bleu_by_system.at("adapted") - parent_eval.mean_bleu();
        const auto pf = param_fraction.find(pair);
        row.param_fraction = pf == param_fraction.end() ? 0.0 : pf->second;
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace packmt
