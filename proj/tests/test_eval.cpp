#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "packmt/corpus.hpp"
#include "packmt/eval.hpp"
#include "packmt/model.hpp"

using namespace packmt;

namespace {

// Independent BLEU oracle: vector-keyed maps and direct loops, no bit
// packing. The production path must agree to 1e-12.
struct OracleBleu {
    double value = 0.0;
    std::array<double, 4> precisions{};
    double bp = 0.0;
    std::int64_t hyp_len = 0;
    std::int64_t ref_len = 0;
};

OracleBleu oracle_bleu(const std::vector<std::vector<std::int32_t>>& hyps,
                       const std::vector<std::vector<std::int32_t>>& refs) {
    OracleBleu o;
    std::array<std::int64_t, 4> matched{}, total{};
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        o.hyp_len += static_cast<std::int64_t>(hyps[i].size());
        o.ref_len += static_cast<std::int64_t>(refs[i].size());
        for (int n = 1; n <= 4; ++n) {
            std::map<std::vector<std::int32_t>, std::int64_t> hc, rc;
            for (std::size_t p = 0; p + static_cast<std::size_t>(n) <= hyps[i].size(); ++p)
                hc[std::vector<std::int32_t>(hyps[i].begin() + static_cast<std::ptrdiff_t>(p),
                                             hyps[i].begin() + static_cast<std::ptrdiff_t>(p) + n)] += 1;
            for (std::size_t p = 0; p + static_cast<std::size_t>(n) <= refs[i].size(); ++p)
                rc[std::vector<std::int32_t>(refs[i].begin() + static_cast<std::ptrdiff_t>(p),
                                             refs[i].begin() + static_cast<std::ptrdiff_t>(p) + n)] += 1;
            for (const auto& [gram, count] : hc) {
                total[static_cast<std::size_t>(n - 1)] += count;
                const auto it = rc.find(gram);
                if (it != rc.end()) matched[static_cast<std::size_t>(n - 1)] += std::min(count, it->second);
            }
        }
    }
    bool any_zero = false;
    for (int n = 0; n < 4; ++n) {
        o.precisions[static_cast<std::size_t>(n)] =
            total[static_cast<std::size_t>(n)] > 0 ? static_cast<double>(matched[static_cast<std::size_t>(n)]) /
                                                         static_cast<double>(total[static_cast<std::size_t>(n)])
                                                   : 0.0;
        if (o.precisions[static_cast<std::size_t>(n)] == 0.0) any_zero = true;
    }
    o.bp = o.hyp_len == 0
               ? 0.0
               : std::min(1.0, std::exp(1.0 - static_cast<double>(o.ref_len) / static_cast<double>(o.hyp_len)));
    if (!any_zero) {
        double s = 0.0;
        for (double p : o.precisions) s += std::log(p);
        o.value = o.bp * std::exp(s / 4.0);
    }
    return o;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.num_heads = 2;
    cfg.num_encoder_layers = 1;
    cfg.num_decoder_layers = 1;
    cfg.embed_dim = 16;
    cfg.ffn_dim = 32;
    cfg.dropout = 0.0;
    cfg.vocab_size = 80;
    cfg.max_seq_len = 32;
    return cfg;
}

}  // namespace

TEST_CASE("identity corpora score exactly 1") {
    std::vector<std::vector<std::int32_t>> sents{{3, 4, 5, 6, 7}, {9, 9, 8}, {10, 11, 12, 13}};
    const BleuScore b = bleu(sents, sents);
    CHECK(b.value == 1.0);
    CHECK(b.brevity_penalty == 1.0);
    for (double p : b.precisions) CHECK(p == 1.0);
    CHECK(b.hyp_len == b.ref_len);
}

TEST_CASE("degenerate repetition is clipped to zero") {
    // hyp "the the the the" vs ref "the cat sat": unigram 1/4, bigram 0.
    const BleuScore b = bleu({{5, 5, 5, 5}}, {{5, 6, 7}});
    REQUIRE(b.precisions.size() == 4);
    CHECK(b.precisions[0] == 0.25);
    CHECK(b.precisions[1] == 0.0);
    CHECK(b.value == 0.0);
    CHECK(b.brevity_penalty == 1.0);  // hyp is longer than ref
}

TEST_CASE("perfect precisions at half length hit the brevity penalty") {
    const BleuScore b = bleu({{1, 2, 3, 4}}, {{1, 2, 3, 4, 5, 6, 7, 8}});
    for (double p : b.precisions) CHECK(p == 1.0);
    CHECK(b.brevity_penalty == std::exp(-1.0));
    CHECK(b.value == std::exp(-1.0));
}

TEST_CASE("bleu matches the brute-force oracle on 200 random corpora") {
    auto rs = rng::stream(2024, "test.bleu.oracle");
    for (int corpus_i = 0; corpus_i < 200; ++corpus_i) {
        const std::size_t sentences = 1 + rs.below(20);
        std::vector<std::vector<std::int32_t>> hyps(sentences), refs(sentences);
        for (std::size_t i = 0; i < sentences; ++i) {
            const std::size_t hl = rs.below(9);       // empty hypotheses allowed
            const std::size_t rl = 1 + rs.below(8);
            for (std::size_t j = 0; j < hl; ++j) hyps[i].push_back(static_cast<std::int32_t>(rs.below(10)));
            for (std::size_t j = 0; j < rl; ++j) refs[i].push_back(static_cast<std::int32_t>(rs.below(10)));
        }
        const BleuScore got = bleu(hyps, refs);
        const OracleBleu want = oracle_bleu(hyps, refs);
        CHECK(std::abs(got.value - want.value) <= 1e-12);
        CHECK(std::abs(got.brevity_penalty - want.bp) <= 1e-12);
        for (int n = 0; n < 4; ++n)
            CHECK(std::abs(got.precisions[static_cast<std::size_t>(n)] -
                           want.precisions[static_cast<std::size_t>(n)]) <= 1e-12);
        CHECK(got.hyp_len == want.hyp_len);
        CHECK(got.ref_len == want.ref_len);
        CHECK(got.value >= 0.0);
        CHECK(got.value <= 1.0);
    }
}

TEST_CASE("replacing correct tokens never raises bleu") {
    const std::vector<std::int32_t> ref{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    double prev = 1.1;
    for (int k = 0; k <= 10; ++k) {
        std::vector<std::int32_t> hyp = ref;
        for (int j = 0; j < k; ++j) hyp[static_cast<std::size_t>(j)] = 99;
        const double v = bleu({hyp}, {ref}).value;
        CHECK(v <= prev + 1e-15);
        CHECK(v >= 0.0);
        prev = v;
    }
    CHECK(bleu({ref}, {ref}).value == 1.0);
}

TEST_CASE("bleu rejects malformed input") {
    CHECK_THROWS_AS(bleu({}, {}), ContractViolation);
    CHECK_THROWS_AS(bleu({{1}}, {{1}, {2}}), ContractViolation);
    CHECK_THROWS_AS(bleu({{1}}, {{1}}, 0), ContractViolation);
    CHECK_THROWS_AS(bleu({{1}}, {{1}}, 5), ContractViolation);
    CHECK_THROWS_AS(bleu({{1 << 16}}, {{1}}), ContractViolation);
    CHECK_THROWS_AS(bleu({{-1}}, {{1}}), ContractViolation);

    // Empty hypothesis side is a score of zero, not an error.
    const BleuScore b = bleu({{}}, {{1, 2}});
    CHECK(b.value == 0.0);
    CHECK(b.brevity_penalty == 0.0);
}

TEST_CASE("argmax breaks ties toward the lowest token id") {
    Tensor<float> logits({2, 3}, {0.5f, 0.5f, 0.1f, 0.0f, 1.0f, 1.0f});
    const auto ids = argmax_tokens(logits);
    CHECK(ids == std::vector<std::int32_t>{0, 1});
}

TEST_CASE("token stats reject empty accumulations") {
    TokenStats s;
    CHECK_THROWS_AS(s.accuracy(), ContractViolation);
    CHECK_THROWS_AS(s.mean_loss(), ContractViolation);
}

TEST_CASE("untrained model scores at chance accuracy") {
    const ModelConfig cfg = tiny_config();
    const ParamStore<float> params = init_params<float>(cfg, 321);

    CorpusConfig ccfg;
    ccfg.train_sizes = {600};
    ccfg.dev_size = 8;
    ccfg.test_size = 8;
    ccfg.probe_count = 4;
    const Corpus corpus = Corpus::generate(ccfg, 5);

    const auto examples = directed_split(corpus, 1, Direction::en_to_xx, Split::train);
    const TokenStats stats = score_examples(params, cfg, examples);
    REQUIRE(stats.total >= 5000);
    CHECK(std::abs(stats.accuracy() - 1.0 / 80.0) < 0.02);
    // Cross-entropy of an untrained model sits near log(vocab).
    CHECK(stats.mean_loss() > 3.0);
    CHECK(stats.mean_loss() < 6.5);
}

TEST_CASE("evaluate_examples wires decoding, accuracy and loss together") {
    const ModelConfig cfg = tiny_config();
    const ParamStore<float> params = init_params<float>(cfg, 77);

    CorpusConfig ccfg;
    ccfg.train_sizes = {40};
    ccfg.dev_size = 32;
    ccfg.test_size = 8;
    ccfg.probe_count = 4;
    const Corpus corpus = Corpus::generate(ccfg, 6);

    const auto examples = directed_split(corpus, 1, Direction::xx_to_en, Split::dev);
    const DirectionEval ev = evaluate_examples(params, cfg, examples);
    CHECK(ev.bleu.value >= 0.0);
    CHECK(ev.bleu.value <= 1.0);
    CHECK(ev.token_accuracy >= 0.0);
    CHECK(ev.token_accuracy <= 1.0);
    CHECK(ev.loss > 0.0);

    CHECK_THROWS_AS(evaluate_examples(params, cfg, std::vector<Example>{}), ContractViolation);
}

TEST_CASE("zero-shot evaluation is a pure function of shared weights") {
    const ModelConfig cfg = tiny_config();
    ParamStore<float> params = init_params<float>(cfg, 11);
    OwnershipMask mask = OwnershipMask::all_owned_by(params, 1);

    CorpusConfig ccfg;
    ccfg.train_sizes = {20, 20};
    ccfg.dev_size = 8;
    ccfg.test_size = 8;
    ccfg.probe_count = 4;
    const Corpus corpus = Corpus::generate(ccfg, 9);

    // Hand a slab of one tensor to pair owner 2 and scribble on it: the
    // zero-shot path must not notice.
    auto& owners = mask.at("enc.0.attn.wq");
    for (std::size_t i = 0; i < owners.size() / 2; ++i) owners[i] = 2;

    const auto before = zero_shot_outputs(params, mask, cfg, corpus, Split::probes);
    const DirectionEval ev_before = zero_shot_eval(params, mask, cfg, corpus, 1, 2, Split::probes);

    auto& w = params.at("enc.0.attn.wq");
    for (std::size_t i = 0; i < w.data.size() / 2; ++i) w.data[i] += 37.0f;

    const auto after = zero_shot_outputs(params, mask, cfg, corpus, Split::probes);
    const DirectionEval ev_after = zero_shot_eval(params, mask, cfg, corpus, 1, 2, Split::probes);

    REQUIRE(before.size() == 2);  // two pairs -> two ordered directions
    CHECK(before == after);
    CHECK(ev_before.bleu.value == ev_after.bleu.value);
    CHECK(ev_before.loss == ev_after.loss);

    CHECK_THROWS_AS(zero_shot_eval(params, mask, cfg, corpus, 1, 3, Split::probes), ContractViolation);
    CHECK_THROWS_AS(zero_shot_eval(params, mask, cfg, corpus, 1, 1, Split::probes), ContractViolation);
}

TEST_CASE("zero-shot grid enumerates n*(n-1) directions") {
    const ModelConfig cfg = tiny_config();
    const ParamStore<float> params = init_params<float>(cfg, 13);
    const OwnershipMask mask = OwnershipMask::all_owned_by(params, 1);

    CorpusConfig ccfg;
    ccfg.train_sizes = {10, 10, 10};
    ccfg.dev_size = 4;
    ccfg.test_size = 4;
    ccfg.probe_count = 2;
    const Corpus corpus = Corpus::generate(ccfg, 21);

    const auto grid = zero_shot_outputs(params, mask, cfg, corpus, Split::probes);
    CHECK(grid.size() == 6);
    CHECK(grid.count("1->2") == 1);
    CHECK(grid.count("3->2") == 1);
    CHECK(grid.count("2->2") == 0);
}

TEST_CASE("stability check is bitwise and catches single-weight corruption") {
    const ModelConfig cfg = tiny_config();
    ParamStore<float> params = init_params<float>(cfg, 3);
    const OwnershipMask mask = OwnershipMask::all_owned_by(params, 1);

    CorpusConfig ccfg;
    ccfg.train_sizes = {16};
    ccfg.dev_size = 4;
    ccfg.test_size = 4;
    ccfg.probe_count = 8;
    const Corpus corpus = Corpus::generate(ccfg, 31);

    const auto snap1 = snapshot_pair_logits(params, mask, cfg, corpus, 1);
    const auto snap2 = snapshot_pair_logits(params, mask, cfg, corpus, 1);
    const StabilityResult same = stability_check(snap1, snap2);
    CHECK(same.pass);
    CHECK(same.max_deviation == 0.0);
    CHECK(same.first_mismatch.empty());

    // Negative control: nudge one shared weight, logits must move.
    params.at("out.proj").data[5] += 0.25f;
    const auto snap3 = snapshot_pair_logits(params, mask, cfg, corpus, 1);
    const StabilityResult diff = stability_check(snap1, snap3);
    CHECK_FALSE(diff.pass);
    CHECK(diff.max_deviation > 0.0);
    CHECK_FALSE(diff.first_mismatch.empty());

    LogitSnapshot<float> truncated = snap1;
    truncated.erase(truncated.begin());
    CHECK_THROWS_AS(stability_check(snap1, truncated), ContractViolation);
}

TEST_CASE("interference report computes exact deltas and carries annotations") {
    PairEval a;
    a.en_to_xx.bleu.value = 0.50;
    a.xx_to_en.bleu.value = 0.40;
    PairEval b = a;
    b.en_to_xx.bleu.value = 0.60;
    b.xx_to_en.bleu.value = 0.46;

    std::map<std::string, std::map<std::int32_t, PairEval>> systems;
    systems["parent"] = {{1, a}, {2, a}};
    systems["adapted"] = {{1, b}, {2, a}};
    systems["pruned"] = {{1, a}, {2, a}};

    const InterferenceReport r = interference_report(systems, {{1, 0.125}, {2, 0.09375}});
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[0].pair == 1);
    CHECK(r.rows[0].delta_vs_parent == Catch::Approx(0.08).margin(1e-15));
    CHECK(r.rows[0].param_fraction == 0.125);
    CHECK(r.rows[1].delta_vs_parent == 0.0);  // adapted == parent -> exactly 0
    CHECK(r.rows[0].bleu_by_system.at("pruned") == Catch::Approx(0.45).margin(1e-15));

    CHECK(InterferenceReport::reference_delta_xx_en == 1.40);
    CHECK(InterferenceReport::reference_delta_en_xx == 1.32);

    systems.erase("parent");
    CHECK_THROWS_AS(interference_report(systems, {}), ContractViolation);
}
