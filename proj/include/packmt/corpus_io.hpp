#pragma once

// Corpus persistence: per-pair, per-split TSV files (one sentence pair per
// line, tab-separated source/target, space-separated token IDs; the source
// carries the target-language control token) and a JSON manifest holding
// the vocabulary layout, per-language transforms, sizes, and seed.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "packmt/corpus.hpp"

namespace packmt {

namespace detail {

inline std::string ids_to_text(const std::vector<std::int32_t>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out.push_back(' ');
        out += std::to_string(ids[i]);
    }
    return out;
}

inline std::vector<std::int32_t> text_to_ids(const std::string& text, const std::string& where) {
    std::vector<std::int32_t> out;
    std::istringstream ss(text);
    std::string tok;
    while (ss >> tok) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(tok, &used);
            if (used != tok.size()) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw IoError("corpus: bad token '" + tok + "' in " + where);
        }
    }
    return out;
}

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
        default: return "probes";
    }
}

}  // namespace detail

inline std::string corpus_split_file(std::int32_t pair, Split split) {
    return "pair" + std::to_string(pair) + "." + detail::split_name(split) + ".tsv";
}

// Writes the manifest and one TSV per pair and split into `dir` (created if
// missing). Lines store the en->xx direction; the reverse direction is
// derived on load.
inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const VocabLayout& v = corpus.vocab();
    const CorpusConfig& cfg = corpus.config();

    nlohmann::json m;
    m["format"] = "packmt-corpus";
    m["version"] = 1;
    m["seed"] = corpus.seed();
    m["vocab"] = {{"content_size", v.content_size},
                  {"num_languages", v.num_languages},
                  {"content_begin", VocabLayout::content_begin},
                  {"control_begin", v.control_begin()},
                  {"vocab_size", v.vocab_size()}};
    m["config"] = {{"train_sizes", cfg.train_sizes},
                   {"dev_size", cfg.dev_size},
                   {"test_size", cfg.test_size},
                   {"probe_count", cfg.probe_count},
                   {"conflict", cfg.conflict},
                   {"content_size", cfg.content_size},
                   {"min_len", cfg.min_len},
                   {"max_len", cfg.max_len}};
    m["base_alphabet"] = corpus.base_alphabet();
    m["languages"] = nlohmann::json::array();
    for (std::int32_t k = 1; k <= corpus.num_pairs(); ++k) {
        const LanguageSpec& lang = corpus.language(k);
        m["languages"].push_back({{"lang_id", lang.lang_id},
                                  {"cipher", lang.cipher},
                                  {"reorder_window", lang.reorder_window},
                                  {"window_perm", lang.window_perm}});
    }

    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw IoError("corpus: cannot write " + (dir / "manifest.json").string());
    mf << m.dump(2) << "\n";
    mf.close();
    if (!mf) throw IoError("corpus: failed writing " + (dir / "manifest.json").string());

    for (std::int32_t k = 1; k <= corpus.num_pairs(); ++k) {
        for (Split s : {Split::train, Split::dev, Split::test, Split::probes}) {
            const std::filesystem::path path = dir / corpus_split_file(k, s);
            std::ofstream f(path);
            if (!f) throw IoError("corpus: cannot write " + path.string());
            for (const auto& base : corpus.pair(k).split(s)) {
                const Example e = corpus.directed(k, Direction::en_to_xx, base);
                f << detail::ids_to_text(e.src) << '\t' << detail::ids_to_text(e.tgt_content) << '\n';
            }
            f.close();
            if (!f) throw IoError("corpus: failed writing " + path.string());
        }
    }
}

// Rebuilds the corpus from disk and re-verifies every line: the stored
// target must equal the language transform of the recovered base sentence.
inline Corpus load_corpus(const std::filesystem::path& dir) {
    const std::filesystem::path mpath = dir / "manifest.json";
    std::ifstream mf(mpath);
    if (!mf) throw IoError("corpus: cannot read " + mpath.string());
    nlohmann::json m;
    try {
        mf >> m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corpus: bad manifest " + mpath.string() + ": " + e.what());
    }

    try {
        if (m.at("format").get<std::string>() != "packmt-corpus")
            throw IoError("corpus: " + mpath.string() + " is not a corpus manifest");
        if (m.at("version").get<int>() != 1)
            throw IoError("corpus: unsupported manifest version in " + mpath.string());

        CorpusConfig cfg;
        const auto& jc = m.at("config");
        cfg.train_sizes = jc.at("train_sizes").get<std::vector<std::int64_t>>();
        cfg.dev_size = jc.at("dev_size").get<std::int64_t>();
        cfg.test_size = jc.at("test_size").get<std::int64_t>();
        cfg.probe_count = jc.at("probe_count").get<std::int64_t>();
        cfg.conflict = jc.at("conflict").get<bool>();
        cfg.content_size = jc.at("content_size").get<std::int32_t>();
        cfg.min_len = jc.at("min_len").get<std::int64_t>();
        cfg.max_len = jc.at("max_len").get<std::int64_t>();
        cfg.validate();

        VocabLayout vocab;
        vocab.content_size = m.at("vocab").at("content_size").get<std::int32_t>();
        vocab.num_languages = m.at("vocab").at("num_languages").get<std::int32_t>();
        if (vocab.num_languages != cfg.num_pairs() + 1)
            throw IoError("corpus: manifest language count does not match pair count");

        std::vector<LanguageSpec> langs;
        for (const auto& jl : m.at("languages")) {
            LanguageSpec lang;
            lang.lang_id = jl.at("lang_id").get<std::int32_t>();
            lang.cipher = jl.at("cipher").get<std::vector<std::int32_t>>();
            lang.reorder_window = jl.at("reorder_window").get<std::int64_t>();
            lang.window_perm = jl.at("window_perm").get<std::vector<std::int32_t>>();
            lang.validate(vocab);
            langs.push_back(std::move(lang));
        }
        if (static_cast<std::int32_t>(langs.size()) != cfg.num_pairs())
            throw IoError("corpus: manifest lists " + std::to_string(langs.size()) + " languages, expected " +
                          std::to_string(cfg.num_pairs()));

        std::vector<PairData> pairs;
        for (std::int32_t k = 1; k <= cfg.num_pairs(); ++k) {
            const LanguageSpec& lang = langs[static_cast<std::size_t>(k - 1)];
            PairData pd;
            auto read_split = [&](Split s, std::int64_t expect) {
                const std::filesystem::path path = dir / corpus_split_file(k, s);
                std::ifstream f(path);
                if (!f) throw IoError("corpus: cannot read " + path.string());
                std::vector<std::vector<std::int32_t>> out;
                std::string line;
                std::int64_t lineno = 0;
                while (std::getline(f, line)) {
                    ++lineno;
                    if (line.empty()) continue;
                    const std::size_t tab = line.find('\t');
                    const std::string where = path.string() + ":" + std::to_string(lineno);
                    if (tab == std::string::npos) throw IoError("corpus: missing tab in " + where);
                    const auto src = detail::text_to_ids(line.substr(0, tab), where);
                    const auto tgt = detail::text_to_ids(line.substr(tab + 1), where);
                    if (src.size() < 2 || src.front() != vocab.control_for(k) || src.back() != VocabLayout::eos)
                        throw IoError("corpus: malformed source framing in " + where);
                    const std::vector<std::int32_t> base(src.begin() + 1, src.end() - 1);
                    for (std::int32_t id : base)
                        if (!vocab.is_content(id)) throw IoError("corpus: non-content source token in " + where);
                    if (lang.apply(vocab, base) != tgt)
                        throw IoError("corpus: target does not match the language transform in " + where);
                    out.push_back(base);
                }
                if (static_cast<std::int64_t>(out.size()) != expect)
                    throw IoError("corpus: " + path.string() + " holds " + std::to_string(out.size()) +
                                  " lines, manifest says " + std::to_string(expect));
                return out;
            };
            pd.train = read_split(Split::train, cfg.train_sizes[static_cast<std::size_t>(k - 1)]);
            pd.dev = read_split(Split::dev, cfg.dev_size);
            pd.test = read_split(Split::test, cfg.test_size);
            pd.probes = read_split(Split::probes, cfg.probe_count);
            pairs.push_back(std::move(pd));
        }

        return Corpus::assemble(std::move(cfg), m.at("seed").get<std::uint64_t>(), vocab,
                                m.at("base_alphabet").get<std::int32_t>(), std::move(langs), std::move(pairs));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("corpus: manifest " + mpath.string() + " is missing fields: " + e.what());
    }
}

}  // namespace packmt
