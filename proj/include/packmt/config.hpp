#pragma once

// Experiment configuration: a strict JSON schema covering the corpus, the
// model preset, training hyperparameters, and the prune/adapt plan. Unknown
// keys are hard errors (a typoed ratio silently falling back to a default is
// the worst failure mode an experiment config can have), and the effective
// config — after preset defaulting — serializes back to JSON that re-parses
// to an equal structure, so every run log records exactly what ran.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "packmt/common.hpp"
#include "packmt/corpus.hpp"
#include "packmt/model.hpp"
#include "packmt/packing.hpp"
#include "packmt/pipeline.hpp"

namespace packmt {

enum class Preset { desk, paper };

inline std::string preset_name(Preset p) { return p == Preset::desk ? "desk" : "paper"; }

inline Preset preset_from_name(const std::string& s) {
    if (s == "desk") return Preset::desk;
    if (s == "paper") return Preset::paper;
    throw ConfigError("preset: expected \"desk\" or \"paper\", got \"" + s + "\"");
}

enum class OrderKind { descending, ascending, explicit_list };

struct ExperimentConfig {
    int schema_version = 1;
    std::uint64_t seed = 7;
    std::string out_dir = "run";
    Preset preset = Preset::desk;

    CorpusConfig corpus;

    double temperature = 5.0;
    std::int64_t max_tokens = 1024;

    double lr_max = 1e-3;
    std::int64_t warmup_steps = 400;

    std::int64_t multilingual_epochs = 30;
    std::int64_t base_retrain_epochs = 8;
    std::int64_t adapt_epochs = 15;
    std::int64_t pair_retrain_epochs = 6;

    double r1 = 0.5;
    double r2 = 0.75;
    bool equal_share = false;
    bool no_prune_last = false;

    OrderKind order_kind = OrderKind::descending;
    std::vector<std::int32_t> explicit_order;  // used when order_kind == explicit_list
    std::vector<std::int32_t> pairs;           // adapted subset; normalized to all pairs when omitted

    bool operator==(const ExperimentConfig&) const = default;

    // -- derived views -------------------------------------------------------

    ModelConfig model_config() const {
        ModelConfig m;
        if (preset == Preset::desk) {
            m.num_heads = 4;
            m.num_encoder_layers = 2;
            m.num_decoder_layers = 2;
            m.embed_dim = 64;
            m.ffn_dim = 128;
        } else {
            m.num_heads = 8;
            m.num_encoder_layers = 6;
            m.num_decoder_layers = 6;
            m.embed_dim = 512;
            m.ffn_dim = 2048;
        }
        m.dropout = 0.1;
        m.vocab_size = vocab().vocab_size();
        m.max_seq_len = 32;
        return m;
    }

    VocabLayout vocab() const { return VocabLayout{corpus.content_size, corpus.num_pairs() + 1}; }

    TrainSettings train_settings() const {
        TrainSettings s;
        s.schedule.lr_max = lr_max;
        s.schedule.warmup_steps = warmup_steps;
        s.max_tokens = max_tokens;
        s.temperature = temperature;
        s.seed = seed;
        return s;
    }

    // Adapted pairs in phase order. Size ordering breaks ties by pair id so
    // the result is unambiguous for configs with equal sizes.
    std::vector<std::int32_t> adapt_order() const {
        if (order_kind == OrderKind::explicit_list) return explicit_order;
        std::vector<std::int32_t> order = pairs;
        std::stable_sort(order.begin(), order.end(), [&](std::int32_t a, std::int32_t b) {
            const std::int64_t sa = corpus.train_sizes[static_cast<std::size_t>(a - 1)];
            const std::int64_t sb = corpus.train_sizes[static_cast<std::size_t>(b - 1)];
            if (sa != sb) return order_kind == OrderKind::descending ? sa > sb : sa < sb;
            return a < b;
        });
        return order;
    }

    // One second-stage prune ratio per adapted pair, in adapt_order() order.
    std::vector<double> pair_ratios() const {
        const std::size_t m = adapt_order().size();
        std::vector<double> ratios;
        if (equal_share) {
            ratios = equal_share_ratios(r1, static_cast<int>(m));
        } else {
            ratios.assign(m, r2);
        }
        if (no_prune_last && !ratios.empty()) ratios.back() = 0.0;
        return ratios;
    }

    PhasePlan phase_plan() const {
        return PhasePlan::standard(adapt_order(), multilingual_epochs, r1, base_retrain_epochs, adapt_epochs,
                                   pair_ratios(), pair_retrain_epochs);
    }

    void validate() const {
        if (schema_version != 1) throw ConfigError("schema_version: only version 1 is supported");
        corpus.validate();
        if (temperature <= 0.0) throw ConfigError("sampling.temperature: must be positive");
        if (max_tokens < corpus.max_len + 2)
            throw ConfigError("sampling.max_tokens: must cover one full sentence (max_len + 2)");
        if (lr_max <= 0.0) throw ConfigError("optimizer.lr_max: must be positive");
        if (warmup_steps < 1) throw ConfigError("optimizer.warmup_steps: must be positive");
        if (multilingual_epochs < 0 || base_retrain_epochs < 0 || adapt_epochs < 0 || pair_retrain_epochs < 0)
            throw ConfigError("epochs: counts must be non-negative");
        if (r1 < 0.0 || r1 >= 1.0) throw ConfigError("pruning.r1: ratio must be in [0, 1)");
        if (r2 < 0.0 || r2 >= 1.0) throw ConfigError("pruning.r2: ratio must be in [0, 1)");
        if (corpus.max_len + 2 > model_config().max_seq_len)
            throw ConfigError("corpus.max_len: sentences do not fit the model's max_seq_len");

        const std::int32_t n = corpus.num_pairs();
        if (pairs.empty()) throw ConfigError("pairs: adapted subset must not be empty");
        std::vector<std::int32_t> sorted = pairs;
        std::sort(sorted.begin(), sorted.end());
        if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
            throw ConfigError("pairs: duplicate pair id");
        for (std::int32_t k : sorted)
            if (k < 1 || k > n) throw ConfigError("pairs: pair " + std::to_string(k) + " is not declared (1.." + std::to_string(n) + ")");

        if (order_kind == OrderKind::explicit_list) {
            std::vector<std::int32_t> order_sorted = explicit_order;
            std::sort(order_sorted.begin(), order_sorted.end());
            if (order_sorted != sorted)
                throw ConfigError("order: explicit list must be a permutation of the adapted pairs");
        } else if (!explicit_order.empty()) {
            throw ConfigError("order: explicit list given but order kind is not a list");
        }
    }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::string& path,
                                std::initializer_list<const char*> allowed) {
    for (const auto& item : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) known = true;
        if (!known) throw ConfigError(path + "." + item.key() + ": unknown key");
    }
}

inline const nlohmann::json* find_field(const nlohmann::json& j, const char* key) {
    const auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

inline std::int64_t as_int(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ConfigError(path + ": expected an integer");
    return v.get<std::int64_t>();
}

inline double as_double(const nlohmann::json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + ": expected a number");
    return v.get<double>();
}

inline bool as_bool(const nlohmann::json& v, const std::string& path) {
    if (!v.is_boolean()) throw ConfigError(path + ": expected a boolean");
    return v.get<bool>();
}

inline std::string as_string(const nlohmann::json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path + ": expected a string");
    return v.get<std::string>();
}

template <typename T>
std::vector<T> as_int_list(const nlohmann::json& v, const std::string& path) {
    if (!v.is_array()) throw ConfigError(path + ": expected an array of integers");
    std::vector<T> out;
    for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(static_cast<T>(as_int(v[i], path + "[" + std::to_string(i) + "]")));
    return out;
}

}  // namespace detail

// Preset defaults. The desk preset is the test default; the paper preset
// keeps the original training recipe (transformer-base dimensions, 40/10/20/10
// epochs, lr 3e-4 with 4500 warmup steps).
inline ExperimentConfig default_config(Preset preset) {
    ExperimentConfig cfg;
    cfg.preset = preset;
    if (preset == Preset::paper) {
        cfg.lr_max = 3e-4;
        cfg.warmup_steps = 4500;
        cfg.multilingual_epochs = 40;
        cfg.base_retrain_epochs = 10;
        cfg.adapt_epochs = 20;
        cfg.pair_retrain_epochs = 10;
    }
    cfg.pairs.resize(static_cast<std::size_t>(cfg.corpus.num_pairs()));
    std::iota(cfg.pairs.begin(), cfg.pairs.end(), 1);
    return cfg;
}

inline ExperimentConfig parse_config(const nlohmann::json& j) {
    using detail::as_bool;
    using detail::as_double;
    using detail::as_int;
    using detail::as_int_list;
    using detail::as_string;
    using detail::find_field;
    using detail::reject_unknown_keys;

    if (!j.is_object()) throw ConfigError("config: top level must be an object");
    reject_unknown_keys(j, "config",
                        {"schema_version", "seed", "out_dir", "preset", "corpus", "sampling", "optimizer", "epochs",
                         "pruning", "order", "pairs"});

    // The preset seeds every default, so it is resolved before anything else.
    Preset preset = Preset::desk;
    if (const auto* v = find_field(j, "preset")) preset = preset_from_name(as_string(*v, "config.preset"));
    ExperimentConfig cfg = default_config(preset);
    bool pairs_given = false;

    if (const auto* v = find_field(j, "schema_version")) cfg.schema_version = static_cast<int>(as_int(*v, "config.schema_version"));
    if (const auto* v = find_field(j, "seed")) {
        const std::int64_t s = as_int(*v, "config.seed");
        if (s < 0) throw ConfigError("config.seed: must be non-negative");
        cfg.seed = static_cast<std::uint64_t>(s);
    }
    if (const auto* v = find_field(j, "out_dir")) cfg.out_dir = as_string(*v, "config.out_dir");

    if (const auto* c = find_field(j, "corpus")) {
        if (!c->is_object()) throw ConfigError("config.corpus: expected an object");
        reject_unknown_keys(*c, "config.corpus",
                            {"train_sizes", "dev_size", "test_size", "probe_count", "conflict", "content_size",
                             "min_len", "max_len", "reorder_windows"});
        if (const auto* v = find_field(*c, "train_sizes"))
            cfg.corpus.train_sizes = as_int_list<std::int64_t>(*v, "config.corpus.train_sizes");
        if (const auto* v = find_field(*c, "dev_size")) cfg.corpus.dev_size = as_int(*v, "config.corpus.dev_size");
        if (const auto* v = find_field(*c, "test_size")) cfg.corpus.test_size = as_int(*v, "config.corpus.test_size");
        if (const auto* v = find_field(*c, "probe_count")) cfg.corpus.probe_count = as_int(*v, "config.corpus.probe_count");
        if (const auto* v = find_field(*c, "conflict")) cfg.corpus.conflict = as_bool(*v, "config.corpus.conflict");
        if (const auto* v = find_field(*c, "content_size"))
            cfg.corpus.content_size = static_cast<std::int32_t>(as_int(*v, "config.corpus.content_size"));
        if (const auto* v = find_field(*c, "min_len")) cfg.corpus.min_len = as_int(*v, "config.corpus.min_len");
        if (const auto* v = find_field(*c, "max_len")) cfg.corpus.max_len = as_int(*v, "config.corpus.max_len");
        if (const auto* v = find_field(*c, "reorder_windows"))
            cfg.corpus.reorder_windows = as_int_list<std::int64_t>(*v, "config.corpus.reorder_windows");
    }

    if (const auto* s = find_field(j, "sampling")) {
        if (!s->is_object()) throw ConfigError("config.sampling: expected an object");
        reject_unknown_keys(*s, "config.sampling", {"temperature", "max_tokens"});
        if (const auto* v = find_field(*s, "temperature")) cfg.temperature = as_double(*v, "config.sampling.temperature");
        if (const auto* v = find_field(*s, "max_tokens")) cfg.max_tokens = as_int(*v, "config.sampling.max_tokens");
    }

    if (const auto* o = find_field(j, "optimizer")) {
        if (!o->is_object()) throw ConfigError("config.optimizer: expected an object");
        reject_unknown_keys(*o, "config.optimizer", {"lr_max", "warmup_steps"});
        if (const auto* v = find_field(*o, "lr_max")) cfg.lr_max = as_double(*v, "config.optimizer.lr_max");
        if (const auto* v = find_field(*o, "warmup_steps")) cfg.warmup_steps = as_int(*v, "config.optimizer.warmup_steps");
    }

    if (const auto* e = find_field(j, "epochs")) {
        if (!e->is_object()) throw ConfigError("config.epochs: expected an object");
        reject_unknown_keys(*e, "config.epochs", {"multilingual", "base_retrain", "adapt", "pair_retrain"});
        if (const auto* v = find_field(*e, "multilingual")) cfg.multilingual_epochs = as_int(*v, "config.epochs.multilingual");
        if (const auto* v = find_field(*e, "base_retrain")) cfg.base_retrain_epochs = as_int(*v, "config.epochs.base_retrain");
        if (const auto* v = find_field(*e, "adapt")) cfg.adapt_epochs = as_int(*v, "config.epochs.adapt");
        if (const auto* v = find_field(*e, "pair_retrain")) cfg.pair_retrain_epochs = as_int(*v, "config.epochs.pair_retrain");
    }

    if (const auto* p = find_field(j, "pruning")) {
        if (!p->is_object()) throw ConfigError("config.pruning: expected an object");
        reject_unknown_keys(*p, "config.pruning", {"r1", "r2", "equal_share", "no_prune_last"});
        if (const auto* v = find_field(*p, "r1")) cfg.r1 = as_double(*v, "config.pruning.r1");
        if (const auto* v = find_field(*p, "r2")) cfg.r2 = as_double(*v, "config.pruning.r2");
        if (const auto* v = find_field(*p, "equal_share")) cfg.equal_share = as_bool(*v, "config.pruning.equal_share");
        if (const auto* v = find_field(*p, "no_prune_last")) cfg.no_prune_last = as_bool(*v, "config.pruning.no_prune_last");
    }

    if (const auto* v = find_field(j, "pairs")) {
        cfg.pairs = as_int_list<std::int32_t>(*v, "config.pairs");
        pairs_given = true;
    }
    if (!pairs_given) {
        cfg.pairs.resize(static_cast<std::size_t>(cfg.corpus.num_pairs()));
        std::iota(cfg.pairs.begin(), cfg.pairs.end(), 1);
    }

    if (const auto* v = find_field(j, "order")) {
        if (v->is_string()) {
            const std::string s = as_string(*v, "config.order");
            if (s == "descending" || s == "desc") {
                cfg.order_kind = OrderKind::descending;
            } else if (s == "ascending" || s == "asc") {
                cfg.order_kind = OrderKind::ascending;
            } else {
                throw ConfigError("config.order: expected \"descending\", \"ascending\", or a pair list");
            }
        } else if (v->is_array()) {
            cfg.order_kind = OrderKind::explicit_list;
            cfg.explicit_order = as_int_list<std::int32_t>(*v, "config.order");
        } else {
            throw ConfigError("config.order: expected \"descending\", \"ascending\", or a pair list");
        }
    }

    cfg.validate();
    return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return parse_config(j);
}

// The fully defaulted config as JSON; parse_config(effective_json(c)) == c.
inline nlohmann::json effective_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["schema_version"] = cfg.schema_version;
    j["seed"] = cfg.seed;
    j["out_dir"] = cfg.out_dir;
    j["preset"] = preset_name(cfg.preset);
    j["corpus"] = {{"train_sizes", cfg.corpus.train_sizes},
                   {"dev_size", cfg.corpus.dev_size},
                   {"test_size", cfg.corpus.test_size},
                   {"probe_count", cfg.corpus.probe_count},
                   {"conflict", cfg.corpus.conflict},
                   {"content_size", cfg.corpus.content_size},
                   {"min_len", cfg.corpus.min_len},
                   {"max_len", cfg.corpus.max_len},
                   {"reorder_windows", cfg.corpus.reorder_windows}};
    j["sampling"] = {{"temperature", cfg.temperature}, {"max_tokens", cfg.max_tokens}};
    j["optimizer"] = {{"lr_max", cfg.lr_max}, {"warmup_steps", cfg.warmup_steps}};
    j["epochs"] = {{"multilingual", cfg.multilingual_epochs},
                   {"base_retrain", cfg.base_retrain_epochs},
                   {"adapt", cfg.adapt_epochs},
                   {"pair_retrain", cfg.pair_retrain_epochs}};
    j["pruning"] = {{"r1", cfg.r1}, {"r2", cfg.r2}, {"equal_share", cfg.equal_share}, {"no_prune_last", cfg.no_prune_last}};
    switch (cfg.order_kind) {
        case OrderKind::descending: j["order"] = "descending"; break;
        case OrderKind::ascending: j["order"] = "ascending"; break;
        case OrderKind::explicit_list: j["order"] = cfg.explicit_order; break;
    }
    j["pairs"] = cfg.pairs;
    return j;
}

// Stable fingerprint of the effective config, recorded in run logs so runs
// can be matched to the exact settings that produced them.
inline std::string config_hash(const ExperimentConfig& cfg) {
    const std::uint64_t h = rng::fnv1a64(effective_json(cfg).dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace packmt
