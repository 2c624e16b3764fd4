#pragma once

// Run-directory layout, evaluation artifacts, and report emission. Reports
// are tab-separated with fixed six-decimal formatting and fully determined
// by their inputs, so re-running `report` over unchanged artifacts and
// re-running a whole experiment with the same seed both produce byte-identical
// files.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "packmt/checkpoint.hpp"
#include "packmt/common.hpp"
#include "packmt/eval.hpp"
#include "packmt/packing.hpp"

namespace packmt {

// Canonical locations inside one run directory. Every subcommand resolves
// artifacts through this so producers and consumers cannot drift apart.
struct RunPaths {
    std::filesystem::path root;

    explicit RunPaths(std::filesystem::path r) : root(std::move(r)) {}

    std::filesystem::path config_file() const { return root / "config.json"; }
    std::filesystem::path run_log() const { return root / "run_log.json"; }
    std::filesystem::path corpus_dir() const { return root / "corpus"; }
    std::filesystem::path checkpoint_dir() const { return root / "checkpoints"; }
    std::filesystem::path checkpoint(const std::string& name) const { return checkpoint_dir() / (name + ".ckpt"); }
    std::filesystem::path snapshot_dir() const { return root / "snapshots"; }
    std::filesystem::path snapshot(std::int32_t pair) const {
        return snapshot_dir() / ("pair" + std::to_string(pair) + ".snap");
    }
    std::filesystem::path zero_shot_snapshot() const { return snapshot_dir() / "zero_shot.snap"; }
    std::filesystem::path eval_dir() const { return root / "evals"; }
    std::filesystem::path eval_file(const std::string& system) const { return eval_dir() / (system + ".json"); }
    std::filesystem::path zero_shot_file(const std::string& system) const {
        return eval_dir() / ("zero_shot." + system + ".json");
    }
    std::filesystem::path report_dir() const { return root / "reports"; }
    std::filesystem::path report_file(const std::string& name) const { return report_dir() / (name + ".tsv"); }
};

namespace detail {

// Fixed-width decimal so report bytes do not depend on locale or formatting
// defaults.
inline std::string fmt_f(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("report: cannot write " + tmp.string());
        f.write(text.data(), static_cast<std::streamsize>(text.size()));
        f.close();
        if (!f) throw IoError("report: failed writing " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing artifact: " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace detail

// -- evaluation artifacts -----------------------------------------------------

// Per-pair dev/test scores of one system (parent, pruned, adapted, ...).
using SystemEval = std::map<std::int32_t, PairEval>;

inline void save_system_eval(const SystemEval& eval, const std::string& system, const std::string& split,
                             const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "packmt-eval";
    j["version"] = 1;
    j["system"] = system;
    j["split"] = split;
    nlohmann::json pairs = nlohmann::json::object();
    for (const auto& [pair, pe] : eval) {
        const auto dir_json = [](const DirectionEval& d) {
            return nlohmann::json{{"bleu", d.bleu.value},
                                  {"brevity_penalty", d.bleu.brevity_penalty},
                                  {"token_accuracy", d.token_accuracy},
                                  {"loss", d.loss}};
        };
        pairs[std::to_string(pair)] = {{"en_xx", dir_json(pe.en_to_xx)}, {"xx_en", dir_json(pe.xx_to_en)}};
    }
    j["pairs"] = std::move(pairs);
    detail::write_text_file(path, j.dump(2) + "\n");
}

inline SystemEval load_system_eval(const std::filesystem::path& path) {
    const std::string text = detail::read_text_file(path);
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        if (j.at("format").get<std::string>() != "packmt-eval")
            throw IoError("eval artifact: bad format in " + path.string());
        SystemEval eval;
        for (const auto& item : j.at("pairs").items()) {
            const auto dir_from = [](const nlohmann::json& d) {
                DirectionEval out;
                out.bleu.value = d.at("bleu").get<double>();
                out.bleu.brevity_penalty = d.at("brevity_penalty").get<double>();
                out.token_accuracy = d.at("token_accuracy").get<double>();
                out.loss = d.at("loss").get<double>();
                return out;
            };
            PairEval pe;
            pe.en_to_xx = dir_from(item.value().at("en_xx"));
            pe.xx_to_en = dir_from(item.value().at("xx_en"));
            eval[std::stoi(item.key())] = pe;
        }
        return eval;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("eval artifact " + path.string() + ": " + e.what());
    }
}

// Zero-shot grid of one system: per xx->yy direction, corpus BLEU plus a
// checksum of the decoded token streams (cheap equality witness between
// systems without storing every hypothesis).
struct ZeroShotDirection {
    double bleu = 0.0;
    std::uint32_t outputs_crc32 = 0;

    bool operator==(const ZeroShotDirection&) const = default;
};

using ZeroShotEval = std::map<std::string, ZeroShotDirection>;  // key "from->to"

inline std::uint32_t outputs_crc32(const std::vector<std::vector<std::int32_t>>& outputs) {
    std::string bytes;
    for (const auto& seq : outputs) {
        io::put_u64le(bytes, seq.size());
        for (std::int32_t id : seq) io::put_u32le(bytes, static_cast<std::uint32_t>(id));
    }
    return io::crc32(bytes.data(), bytes.size());
}

inline void save_zero_shot_eval(const ZeroShotEval& eval, const std::string& system,
                                const std::filesystem::path& path) {
    nlohmann::json j;
    j["format"] = "packmt-zero-shot";
    j["version"] = 1;
    j["system"] = system;
    nlohmann::json dirs = nlohmann::json::object();
    for (const auto& [key, d] : eval) dirs[key] = {{"bleu", d.bleu}, {"outputs_crc32", d.outputs_crc32}};
    j["directions"] = std::move(dirs);
    detail::write_text_file(path, j.dump(2) + "\n");
}

inline ZeroShotEval load_zero_shot_eval(const std::filesystem::path& path) {
    const std::string text = detail::read_text_file(path);
    try {
        const nlohmann::json j = nlohmann::json::parse(text);
        if (j.at("format").get<std::string>() != "packmt-zero-shot")
            throw IoError("zero-shot artifact: bad format in " + path.string());
        ZeroShotEval eval;
        for (const auto& item : j.at("directions").items()) {
            ZeroShotDirection d;
            d.bleu = item.value().at("bleu").get<double>();
            d.outputs_crc32 = item.value().at("outputs_crc32").get<std::uint32_t>();
            eval[item.key()] = d;
        }
        return eval;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("zero-shot artifact " + path.string() + ": " + e.what());
    }
}

// -- report writers -----------------------------------------------------------

// Cross-system BLEU per pair with the adapted-vs-parent delta and the share
// of prunable parameters the pair owns. The published full-scale deltas ride
// along as comment lines for context.
inline void write_interference_table(const InterferenceReport& report, const std::filesystem::path& path) {
    std::string out;
    out += "# reference full-scale delta xx->en " + detail::fmt_f(InterferenceReport::reference_delta_xx_en) + "\n";
    out += "# reference full-scale delta en->xx " + detail::fmt_f(InterferenceReport::reference_delta_en_xx) + "\n";
    std::vector<std::string> systems;
    if (!report.rows.empty())
        for (const auto& [name, _] : report.rows.front().bleu_by_system) systems.push_back(name);
    out += "pair";
    for (const auto& s : systems) out += "\tbleu_" + s;
    out += "\tdelta_vs_parent\tparam_percent\n";
    for (const auto& row : report.rows) {
        out += std::to_string(row.pair);
        for (const auto& s : systems) out += "\t" + detail::fmt_f(row.bleu_by_system.at(s));
        out += "\t" + detail::fmt_f(row.delta_vs_parent);
        out += "\t" + detail::fmt_f(100.0 * row.param_fraction);
        out += "\n";
    }
    detail::write_text_file(path, out);
}

// Owner-level ledger plus the per-tensor breakdown. Expected fractions come
// from the prune schedule: the shared owner keeps 1-r1, and pair i in adapt
// order keeps (1 - ratio_i) of the pool left by its predecessors.
inline void write_capacity_ledger(const CapacityReport& report, double r1,
                                  const std::vector<std::int32_t>& adapt_order, const std::vector<double>& ratios,
                                  const std::filesystem::path& path) {
    if (adapt_order.size() != ratios.size())
        throw ContractViolation("capacity ledger: need one ratio per adapted pair");
    std::map<int, double> expected;  // by owner id
    expected[1] = 1.0 - r1;
    double pool = r1;
    for (std::size_t i = 0; i < adapt_order.size(); ++i) {
        expected[adapt_order[i] + 1] = pool * (1.0 - ratios[i]);
        pool *= ratios[i];
    }
    expected[0] = pool;

    std::string out;
    out += "scope\towner\trole\telements\tfraction\texpected_fraction\n";
    for (const auto& [owner, count] : report.owner_counts) {
        std::string role = owner == 0 ? "free" : owner == 1 ? "shared" : "pair" + std::to_string(owner - 1);
        out += "total\t" + std::to_string(owner) + "\t" + role + "\t" + std::to_string(count) + "\t" +
               detail::fmt_f(report.owner_fractions.at(owner)) + "\t";
        const auto it = expected.find(owner);
        out += it == expected.end() ? "-" : detail::fmt_f(it->second);
        out += "\n";
    }
    for (const auto& [tensor, owners] : report.per_tensor) {
        for (const auto& [owner, count] : owners) {
            std::string role = owner == 0 ? "free" : owner == 1 ? "shared" : "pair" + std::to_string(owner - 1);
            out += tensor + "\t" + std::to_string(owner) + "\t" + role + "\t" + std::to_string(count) + "\t-\t-\n";
        }
    }
    detail::write_text_file(path, out);
}

// One row per xx->yy direction; n pairs give n*(n-1) rows.
inline void write_zero_shot_grid(const ZeroShotEval& eval, const std::filesystem::path& path) {
    std::string out = "from\tto\tbleu\toutputs_crc32\n";
    for (const auto& [key, d] : eval) {
        const auto sep = key.find("->");
        if (sep == std::string::npos) throw ContractViolation("zero-shot grid: bad direction key " + key);
        out += key.substr(0, sep) + "\t" + key.substr(sep + 2) + "\t" + detail::fmt_f(d.bleu) + "\t" +
               std::to_string(d.outputs_crc32) + "\n";
    }
    detail::write_text_file(path, out);
}

// Plot data for adaptation quality: parent and pruned aggregate rows, then
// one row per adapted pair with the percentage of prunable parameters that
// pair owns on the x-axis and its BLEU delta against the parent on the y-axis.
inline void write_adaptation_plot(const SystemEval& parent, const SystemEval& pruned, const SystemEval& adapted,
                                  const std::vector<std::int32_t>& adapt_order,
                                  const std::map<std::int32_t, double>& param_fraction,
                                  const std::filesystem::path& path) {
    const auto mean_bleu = [](const SystemEval& s) {
        double sum = 0.0;
        for (const auto& [_, pe] : s) sum += pe.mean_bleu();
        return s.empty() ? 0.0 : sum / static_cast<double>(s.size());
    };

    std::string out = "label\torder_index\tpair\tparam_percent\tbleu\tdelta_vs_parent\n";
    const double parent_mean = mean_bleu(parent);
    out += "parent\t0\t0\t" + detail::fmt_f(0.0) + "\t" + detail::fmt_f(parent_mean) + "\t" + detail::fmt_f(0.0) + "\n";
    out += "pruned\t0\t0\t" + detail::fmt_f(0.0) + "\t" + detail::fmt_f(mean_bleu(pruned)) + "\t" +
           detail::fmt_f(mean_bleu(pruned) - parent_mean) + "\n";
    for (std::size_t i = 0; i < adapt_order.size(); ++i) {
        const std::int32_t pair = adapt_order[i];
        if (!adapted.count(pair) || !parent.count(pair))
            throw ContractViolation("adaptation plot: missing evaluation for pair " + std::to_string(pair));
        const double bleu = adapted.at(pair).mean_bleu();
        const double delta = bleu - parent.at(pair).mean_bleu();
        const auto pf = param_fraction.find(pair);
        out += "adapted\t" + std::to_string(i + 1) + "\t" + std::to_string(pair) + "\t" +
               detail::fmt_f(100.0 * (pf == param_fraction.end() ? 0.0 : pf->second)) + "\t" + detail::fmt_f(bleu) +
               "\t" + detail::fmt_f(delta) + "\n";
    }
    detail::write_text_file(path, out);
}

// -- run log ------------------------------------------------------------------

// Append-only JSON array; one entry per executed subcommand. The effective
// config is embedded verbatim so any run can be reproduced from its log.
inline void append_run_log(const std::filesystem::path& path, const std::string& command,
                           const nlohmann::json& effective_config, const std::string& config_hash,
                           double wall_seconds, const std::vector<PhaseEntry>& phases) {
    nlohmann::json log = nlohmann::json::array();
    if (std::filesystem::exists(path)) {
        try {
            log = nlohmann::json::parse(detail::read_text_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw IoError("run log " + path.string() + " is not valid JSON: " + e.what());
        }
        if (!log.is_array()) throw IoError("run log " + path.string() + " must be a JSON array");
    }
    nlohmann::json entry;
    entry["command"] = command;
    entry["config_hash"] = config_hash;
    entry["config"] = effective_config;
    entry["wall_seconds"] = wall_seconds;
    entry["phases"] = nlohmann::json::array();
    for (const auto& p : phases)
        entry["phases"].push_back({{"phase", p.phase},
                                   {"pair", p.pair},
                                   {"epochs", p.epochs},
                                   {"steps", p.steps},
                                   {"final_loss", p.final_loss}});
    log.push_back(std::move(entry));
    detail::write_text_file(path, log.dump(2) + "\n");
}

}  // namespace packmt
