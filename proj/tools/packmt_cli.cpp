// packmt command-line front end. Batch subcommands over one run directory:
//
//   gen-data           generate the synthetic corpus
//   train-mnmt         train the multilingual parent model
//   prune-base         magnitude-prune the parent and retrain the survivors
//   adapt              adapt language pairs into the freed parameters
//   finetune-baseline  full fine-tuning baseline per pair
//   eval               score every available checkpoint on the dev split
//   zero-shot          decode and score all xx->yy directions
//   verify             prove bit-stability and capacity bookkeeping
//   report             emit the delimiter-separated report files
//
// Exit codes: 0 success, 2 invalid config, 3 capacity exhaustion,
// 4 corrupted or missing checkpoint data, 1 anything else.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "packmt/checkpoint.hpp"
#include "packmt/config.hpp"
#include "packmt/corpus_io.hpp"
#include "packmt/eval.hpp"
#include "packmt/pipeline.hpp"
#include "packmt/report.hpp"

namespace {

using namespace packmt;

// Flag-level overrides applied on top of the (optional) config file.
struct Overrides {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::string preset;
    std::string order;
    std::string pairs;
    bool equal_share = false;
    bool no_prune_last = false;
};

std::vector<std::int32_t> parse_id_list(const std::string& text, const std::string& what) {
    std::vector<std::int32_t> out;
    std::string token;
    std::istringstream ss(text);
    while (std::getline(ss, token, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(token, &used);
            if (used != token.size()) throw std::invalid_argument(token);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError(what + ": expected comma-separated pair ids, got \"" + text + "\"");
        }
    }
    if (out.empty()) throw ConfigError(what + ": empty list");
    return out;
}

ExperimentConfig resolve_config(const Overrides& ov) {
    ExperimentConfig cfg;
    if (!ov.config_path.empty()) {
        std::ifstream f(ov.config_path);
        if (!f) throw ConfigError("config: cannot open " + ov.config_path);
        std::ostringstream ss;
        ss << f.rdbuf();
        cfg = parse_config_text(ss.str());
    } else {
        cfg = default_config(ov.preset.empty() ? Preset::desk : preset_from_name(ov.preset));
    }
    if (!ov.preset.empty()) cfg.preset = preset_from_name(ov.preset);
    if (!ov.out_dir.empty()) cfg.out_dir = ov.out_dir;
    if (ov.seed) cfg.seed = *ov.seed;
    if (!ov.pairs.empty()) cfg.pairs = parse_id_list(ov.pairs, "--pairs");
    if (!ov.order.empty()) {
        if (ov.order == "desc" || ov.order == "descending") {
            cfg.order_kind = OrderKind::descending;
            cfg.explicit_order.clear();
        } else if (ov.order == "asc" || ov.order == "ascending") {
            cfg.order_kind = OrderKind::ascending;
            cfg.explicit_order.clear();
        } else {
            cfg.order_kind = OrderKind::explicit_list;
            cfg.explicit_order = parse_id_list(ov.order, "--order");
        }
    }
    if (ov.equal_share) cfg.equal_share = true;
    if (ov.no_prune_last) cfg.no_prune_last = true;
    cfg.validate();
    return cfg;
}

Corpus load_run_corpus(const ExperimentConfig& cfg, const RunPaths& paths) {
    if (!std::filesystem::exists(paths.corpus_dir() / "manifest.json"))
        throw IoError("missing artifact: " + (paths.corpus_dir() / "manifest.json").string() +
                      " (run gen-data first)");
    Corpus corpus = load_corpus(paths.corpus_dir());
    if (!(corpus.config() == cfg.corpus) || corpus.seed() != cfg.seed)
        throw ConfigError("config does not match the corpus in " + paths.corpus_dir().string());
    return corpus;
}

Checkpoint load_run_checkpoint(const RunPaths& paths, const std::string& name) {
    const std::filesystem::path p = paths.checkpoint(name);
    if (!std::filesystem::exists(p))
        throw IoError("missing artifact: " + p.string() + " (run the producing subcommand first)");
    return load_checkpoint(p);
}

std::map<std::int32_t, std::vector<std::vector<std::int32_t>>> corpus_probes(const Corpus& corpus) {
    std::map<std::int32_t, std::vector<std::vector<std::int32_t>>> probes;
    for (std::int32_t k = 1; k <= corpus.num_pairs(); ++k) probes[k] = corpus.pair(k).probes;
    return probes;
}

Checkpoint make_checkpoint(const ExperimentConfig& cfg, const Corpus& corpus) {
    Checkpoint ckpt;
    ckpt.model = cfg.model_config();
    ckpt.vocab = cfg.vocab();
    ckpt.seed = cfg.seed;
    ckpt.probes = corpus_probes(corpus);
    return ckpt;
}

// -- subcommands (each returns the phase entries for the run log) -------------

std::vector<PhaseEntry> cmd_gen_data(const ExperimentConfig& cfg, const RunPaths& paths) {
    const Corpus corpus = Corpus::generate(cfg.corpus, cfg.seed);
    save_corpus(corpus, paths.corpus_dir());
    detail::write_text_file(paths.config_file(), effective_json(cfg).dump(2) + "\n");
    std::printf("gen-data: %d pairs, vocab %d, wrote %s\n", corpus.num_pairs(), corpus.vocab().vocab_size(),
                paths.corpus_dir().string().c_str());
    return {};
}

std::vector<PhaseEntry> cmd_train_mnmt(const ExperimentConfig& cfg, const RunPaths& paths) {
    const Corpus corpus = load_run_corpus(cfg, paths);
    const ModelConfig model_cfg = cfg.model_config();
    ParamStore<float> params = init_params<float>(model_cfg, cfg.seed);
    const PhaseOutcome outcome =
        train_multilingual(params, model_cfg, corpus, cfg.multilingual_epochs, cfg.train_settings());

    Checkpoint ckpt = make_checkpoint(cfg, corpus);
    ckpt.phase_log = {{"multilingual_train", 0, cfg.multilingual_epochs, outcome.steps, outcome.final_loss}};
    ckpt.params = std::move(params);
    std::filesystem::create_directories(paths.checkpoint_dir());
    save_checkpoint(ckpt, paths.checkpoint("multilingual"));
    std::printf("train-mnmt: %lld steps, final loss %.4f\n", static_cast<long long>(outcome.steps),
                outcome.final_loss);
    return ckpt.phase_log;
}

std::vector<PhaseEntry> cmd_prune_base(const ExperimentConfig& cfg, const RunPaths& paths) {
    const Corpus corpus = load_run_corpus(cfg, paths);
    Checkpoint ckpt = load_run_checkpoint(paths, "multilingual");
    if (!(ckpt.model == cfg.model_config())) throw ConfigError("config does not match the multilingual checkpoint");

    auto [outcome, mask] = base_prune_retrain(ckpt.params, cfg.model_config(), corpus, cfg.r1,
                                              cfg.base_retrain_epochs, cfg.train_settings());
    const PhaseEntry entry{"base_prune_retrain", 0, cfg.base_retrain_epochs, outcome.steps, outcome.final_loss};
    ckpt.phase_log.push_back(entry);
    ckpt.mask = std::move(mask);
    save_checkpoint(ckpt, paths.checkpoint("pruned_base"));
    std::printf("prune-base: r1 %.3f, %lld retrain steps, final loss %.4f\n", cfg.r1,
                static_cast<long long>(outcome.steps), outcome.final_loss);
    return {entry};
}

std::vector<PhaseEntry> cmd_adapt(const ExperimentConfig& cfg, const RunPaths& paths) {
    const Corpus corpus = load_run_corpus(cfg, paths);
    const ModelConfig model_cfg = cfg.model_config();
    const std::vector<std::int32_t> order = cfg.adapt_order();
    const std::vector<double> ratios = cfg.pair_ratios();

    // Resume from the longest already-adapted prefix of the order.
    std::size_t done = 0;
    for (std::size_t i = order.size(); i > 0; --i) {
        if (std::filesystem::exists(paths.checkpoint("adapted.pair" + std::to_string(order[i - 1])))) {
            done = i;
            break;
        }
    }
    Checkpoint ckpt = done == 0 ? load_run_checkpoint(paths, "pruned_base")
                                : load_run_checkpoint(paths, "adapted.pair" + std::to_string(order[done - 1]));
    if (!(ckpt.model == cfg.model_config())) throw ConfigError("config does not match the adapt checkpoint");
    const std::vector<std::int32_t> expected_prefix(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(done));
    if (ckpt.pair_order != expected_prefix)
        throw ConfigError("run directory was adapted with a different pair order; refusing to mix");

    std::vector<PhaseEntry> new_entries;
    std::filesystem::create_directories(paths.snapshot_dir());
    for (std::size_t i = done; i < order.size(); ++i) {
        const std::int32_t pair = order[i];
        const AdaptOutcome outcome = adapt_pair(ckpt.params, ckpt.mask, model_cfg, corpus, pair, cfg.adapt_epochs,
                                                ratios[i], cfg.pair_retrain_epochs, cfg.train_settings());
        const PhaseEntry stage_a{"pair_adapt", pair, cfg.adapt_epochs, outcome.stage_a.steps,
                                 outcome.stage_a.final_loss};
        const PhaseEntry stage_b{"pair_prune_retrain", pair, cfg.pair_retrain_epochs, outcome.stage_b.steps,
                                 outcome.stage_b.final_loss};
        for (const PhaseEntry& e : {stage_a, stage_b}) {
            new_entries.push_back(e);
            ckpt.phase_log.push_back(e);
        }
        ckpt.pair_order.push_back(pair);

        save_snapshot(snapshot_pair_logits(ckpt.params, ckpt.mask, model_cfg, corpus, pair), paths.snapshot(pair));
        save_checkpoint(ckpt, paths.checkpoint("adapted.pair" + std::to_string(pair)));
        std::printf("adapt: pair %d claimed %lld elements (ratio %.3f)\n", pair,
                    static_cast<long long>(outcome.claimed_elements), ratios[i]);
    }
    save_checkpoint(ckpt, paths.checkpoint("adapted"));
    return new_entries;
}

std::vector<PhaseEntry> cmd_finetune_baseline(const ExperimentConfig& cfg, const RunPaths& paths) {
    const Corpus corpus = load_run_corpus(cfg, paths);
    const Checkpoint parent = load_run_checkpoint(paths, "multilingual");
    if (!(parent.model == cfg.model_config())) throw ConfigError("config does not match the multilingual checkpoint");
    // Same per-pair budget as adaptation (both of its stages combined).
    const std::int64_t epochs = cfg.adapt_epochs + cfg.pair_retrain_epochs;

    std::vector<PhaseEntry> entries;
    SystemEval eval;
    for (const std::int32_t pair : cfg.pairs) {
        auto [outcome, tuned] = full_finetune_baseline(parent.params, cfg.model_config(), corpus, pair, epochs,
                                                       cfg.train_settings());
        entries.push_back({"full_finetune", pair, epochs, outcome.steps, outcome.final_loss});
        Checkpoint ckpt = make_checkpoint(cfg, corpus);
        ckpt.phase_log = parent.phase_log;
        ckpt.phase_log.push_back(entries.back());
        ckpt.params = std::move(tuned);
        save_checkpoint(ckpt, paths.checkpoint("fullft.pair" + std::to_string(pair)));
        eval[pair] = evaluate_pair(ckpt.params, cfg.model_config(), corpus, pair, Split::dev);
        std::printf("finetune-baseline: pair %d, %lld steps, final loss %.4f\n", pair,
                    static_cast<long long>(outcome.steps), outcome.final_loss);
    }
    save_system_eval(eval, "fullft", "dev", paths.eval_file("fullft"));
    return entries;
}

std::vector<PhaseEntry> cmd_eval(const ExperimentConfig& cfg, const RunPaths& paths) {
    const Corpus corpus = load_run_corpus(cfg, paths);
    const ModelConfig model_cfg = cfg.model_config();
    bool wrote = false;

    if (std::filesystem::exists(paths.checkpoint("multilingual"))) {
        const Checkpoint ckpt = load_run_checkpoint(paths, "multilingual");
        SystemEval eval;
        for (std::int32_t k = 1; k <= corpus.num_pairs(); ++k)
            eval[k] = evaluate_pair(ckpt.params, model_cfg, corpus, k, Split::dev);
        save_system_eval(eval, "parent", "dev", paths.eval_file("parent"));
        wrote = true;
    }
    if (std::filesystem::exists(paths.checkpoint("pruned_base"))) {
        const Checkpoint ckpt = load_run_checkpoint(paths, "pruned_base");
        SystemEval eval;
        for (std::int32_t k = 1; k <= corpus.num_pairs(); ++k)
            eval[k] = evaluate_pair(ckpt.params, model_cfg, corpus, k, Split::dev);
        save_system_eval(eval, "pruned", "dev", paths.eval_file("pruned"));
        wrote = true;
    }
    if (std::filesystem::exists(paths.checkpoint("adapted"))) {
        const Checkpoint ckpt = load_run_checkpoint(paths, "adapted");
        SystemEval eval;
        for (const std::int32_t k : ckpt.pair_order) {
            const ParamStore<float> view = masked_view(ckpt.params, ckpt.mask, ActiveSet::inference(k));
            eval[k] = evaluate_pair(view, model_cfg, corpus, k, Split::dev);
        }
        save_system_eval(eval, "adapted", "dev", paths.eval_file("adapted"));
        wrote = true;
    }
    if (!wrote) throw IoError("missing artifact: no checkpoints under " + paths.checkpoint_dir().string());
    std::printf("eval: wrote dev scores to %s\n", paths.eval_dir().string().c_str());
    return {};
}

ZeroShotEval zero_shot_grid(const ParamStore<float>& params, const OwnershipMask& mask, const ModelConfig& model_cfg,
                            const Corpus& corpus) {
    const auto outputs = zero_shot_outputs(params, mask, model_cfg, corpus, Split::dev);
    ZeroShotEval grid;
    for (const auto& [key, hyps] : outputs) {
        const auto sep = key.find("->");
        const std::int32_t from = std::stoi(key.substr(0, sep));
        const std::int32_t to = std::stoi(key.substr(sep + 2));
        std::vector<std::vector<std::int32_t>> refs;
        for (const auto& base : corpus.pair(from).split(Split::dev))
            refs.push_back(corpus.zero_shot(from, to, base).tgt_content);
        ZeroShotDirection d;
        d.bleu = bleu(hyps, refs).value;
        d.outputs_crc32 = outputs_crc32(hyps);
        grid[key] = d;
    }
    return grid;
}

std::vector<PhaseEntry> cmd_zero_shot(const ExperimentConfig& cfg, const RunPaths& paths) {
    const Corpus corpus = load_run_corpus(cfg, paths);
    const ModelConfig model_cfg = cfg.model_config();
    bool wrote = false;

    const auto emit = [&](const std::string& system, const Checkpoint& ckpt) {
        const OwnershipMask mask =
            ckpt.mask.entries().empty() ? OwnershipMask::all_owned_by(ckpt.params, 1) : ckpt.mask;
        save_zero_shot_eval(zero_shot_grid(ckpt.params, mask, model_cfg, corpus), system,
                            paths.zero_shot_file(system));
        wrote = true;
    };
    if (std::filesystem::exists(paths.checkpoint("multilingual")))
        emit("parent", load_run_checkpoint(paths, "multilingual"));
    if (std::filesystem::exists(paths.checkpoint("pruned_base")))
        emit("pruned", load_run_checkpoint(paths, "pruned_base"));
    if (std::filesystem::exists(paths.checkpoint("adapted"))) emit("adapted", load_run_checkpoint(paths, "adapted"));
    if (!wrote) throw IoError("missing artifact: no checkpoints under " + paths.checkpoint_dir().string());
    std::printf("zero-shot: wrote grids to %s\n", paths.eval_dir().string().c_str());
    return {};
}

std::vector<PhaseEntry> cmd_verify(const ExperimentConfig& cfg, const RunPaths& paths) {
    const Corpus corpus = load_run_corpus(cfg, paths);
    const Checkpoint ckpt = load_run_checkpoint(paths, "adapted");
    if (!(ckpt.vocab == corpus.vocab())) throw ConfigError("checkpoint vocabulary does not match the corpus");

    // Bit-stability: recompute every adapted pair's probe logits from the
    // final weights and compare with the snapshot taken when that pair's
    // phase completed.
    for (const std::int32_t pair : ckpt.pair_order) {
        const auto stored = load_snapshot(paths.snapshot(pair));
        const auto current = snapshot_pair_logits(ckpt.params, ckpt.mask, ckpt.model, corpus, pair);
        const StabilityResult r = stability_check(stored, current);
        if (!r.pass) {
            std::fprintf(stderr, "verify: pair %d drifted at %s (max deviation %.3g)\n", pair,
                         r.first_mismatch.c_str(), r.max_deviation);
            throw ContractViolation("stability check failed for pair " + std::to_string(pair));
        }
    }

    // Capacity bookkeeping: owner counts must match the exact floor
    // recurrence of the prune schedule on every tensor.
    const std::vector<double> ratios = cfg.pair_ratios();
    const std::vector<std::int32_t> order = cfg.adapt_order();
    if (order.size() < ckpt.pair_order.size() ||
        !std::equal(ckpt.pair_order.begin(), ckpt.pair_order.end(), order.begin()))
        throw ConfigError("config pair order does not match the adapted checkpoint");
    const CapacityReport cap = capacity_report(ckpt.mask);
    for (const auto& [tensor, owners] : cap.per_tensor) {
        const auto count_of = [&](int owner) {
            const auto it = owners.find(owner);
            return it == owners.end() ? std::int64_t{0} : it->second;
        };
        std::int64_t total = 0;
        for (const auto& [_, n] : owners) total += n;
        std::int64_t free = static_cast<std::int64_t>(static_cast<double>(total) * cfg.r1);
        std::int64_t shared = total - free;
        if (count_of(1) != shared)
            throw ContractViolation("capacity ledger: tensor " + tensor + " shared count " +
                                    std::to_string(count_of(1)) + " != expected " + std::to_string(shared));
        for (std::size_t i = 0; i < ckpt.pair_order.size(); ++i) {
            const std::int64_t kept = free - static_cast<std::int64_t>(static_cast<double>(free) * ratios[i]);
            if (count_of(ckpt.pair_order[i] + 1) != kept)
                throw ContractViolation("capacity ledger: tensor " + tensor + " pair " +
                                        std::to_string(ckpt.pair_order[i]) + " count mismatch");
            free -= kept;
        }
        if (count_of(0) != free)
            throw ContractViolation("capacity ledger: tensor " + tensor + " free count mismatch");
    }
    std::printf("verify: ok (%zu pairs bit-stable, capacity ledger exact)\n", ckpt.pair_order.size());
    return {};
}

std::vector<PhaseEntry> cmd_report(const ExperimentConfig& cfg, const RunPaths& paths) {
    std::vector<std::string> missing;
    const auto need = [&](const std::filesystem::path& p) {
        if (!std::filesystem::exists(p)) missing.push_back(p.string());
    };

    const bool has_adapted = std::filesystem::exists(paths.checkpoint("adapted"));
    need(paths.eval_file("parent"));
    need(paths.eval_file("pruned"));
    if (has_adapted) {
        need(paths.eval_file("adapted"));
        need(paths.zero_shot_file("adapted"));
    }
    if (!missing.empty()) {
        std::fprintf(stderr, "report: missing evaluations:\n");
        for (const auto& m : missing) std::fprintf(stderr, "  %s\n", m.c_str());
        throw IoError("report: " + std::to_string(missing.size()) + " artifact(s) absent");
    }

    const SystemEval parent = load_system_eval(paths.eval_file("parent"));
    const SystemEval pruned = load_system_eval(paths.eval_file("pruned"));
    std::filesystem::create_directories(paths.report_dir());

    // Capacity ledger from the furthest checkpoint that carries a mask.
    const Checkpoint ckpt = has_adapted ? load_run_checkpoint(paths, "adapted")
                                         : load_run_checkpoint(paths, "pruned_base");
    const CapacityReport cap = capacity_report(ckpt.mask);
    const std::vector<std::int32_t> order = cfg.adapt_order();
    std::vector<double> ratios = cfg.pair_ratios();
    if (order.size() < ckpt.pair_order.size() ||
        !std::equal(ckpt.pair_order.begin(), ckpt.pair_order.end(), order.begin()))
        throw ConfigError("config pair order does not match the adapted checkpoint");
    ratios.resize(ckpt.pair_order.size());
    write_capacity_ledger(cap, cfg.r1, ckpt.pair_order, ratios, paths.report_file("capacity"));

    std::map<std::int32_t, double> param_fraction;
    for (const std::int32_t k : ckpt.pair_order) {
        const auto it = cap.owner_fractions.find(k + 1);
        param_fraction[k] = it == cap.owner_fractions.end() ? 0.0 : it->second;
    }

    if (has_adapted) {
        const SystemEval adapted = load_system_eval(paths.eval_file("adapted"));
        // Systems are compared on the adapted pairs only.
        std::map<std::string, std::map<std::int32_t, PairEval>> systems;
        for (const auto& [k, pe] : adapted) {
            if (!parent.count(k) || !pruned.count(k))
                throw IoError("report: parent/pruned evaluations missing pair " + std::to_string(k));
            systems["parent"][k] = parent.at(k);
            systems["pruned"][k] = pruned.at(k);
            systems["adapted"][k] = pe;
        }
        if (std::filesystem::exists(paths.eval_file("fullft"))) {
            const SystemEval fullft = load_system_eval(paths.eval_file("fullft"));
            for (const auto& [k, _] : systems["adapted"])
                if (fullft.count(k)) systems["fullft"][k] = fullft.at(k);
            if (systems.count("fullft") && systems["fullft"].size() != systems["adapted"].size())
                systems.erase("fullft");  // partial baseline: leave it out of the table
        }
        write_interference_table(interference_report(systems, param_fraction), paths.report_file("interference"));
        write_zero_shot_grid(load_zero_shot_eval(paths.zero_shot_file("adapted")), paths.report_file("zero_shot"));
        write_adaptation_plot(parent, pruned, adapted, ckpt.pair_order, param_fraction,
                              paths.report_file("adaptation_plot"));
    } else {
        write_adaptation_plot(parent, pruned, {}, {}, {}, paths.report_file("adaptation_plot"));
    }
    std::printf("report: wrote %s\n", paths.report_dir().string().c_str());
    return {};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"parameter-free per-pair adaptation of a multilingual translation model"};
    app.require_subcommand(1);

    Overrides ov;
    app.add_option("--config", ov.config_path, "experiment config file (JSON)");
    app.add_option("--out", ov.out_dir, "run directory (overrides config out_dir)");
    std::int64_t seed_flag = -1;
    app.add_option("--seed", seed_flag, "global seed (overrides config)");
    app.add_option("--preset", ov.preset, "model preset: desk | paper")
        ->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--order", ov.order, "adaptation order: desc | asc | comma-separated pair ids");
    app.add_option("--pairs", ov.pairs, "subset of pair ids to adapt / fine-tune");
    app.add_flag("--equal-share", ov.equal_share, "give every adapted pair an equal parameter share");
    app.add_flag("--no-prune-last", ov.no_prune_last, "let the last adapted pair keep all remaining capacity");

    struct Command {
        std::string name;
        std::string help;
        std::vector<PhaseEntry> (*fn)(const ExperimentConfig&, const RunPaths&);
    };
    const std::vector<Command> commands = {
        {"gen-data", "generate the synthetic corpus for the run directory", cmd_gen_data},
        {"train-mnmt", "train the multilingual parent model", cmd_train_mnmt},
        {"prune-base", "magnitude-prune the parent at r1 and retrain the survivors", cmd_prune_base},
        {"adapt", "adapt every configured pair inside the freed capacity", cmd_adapt},
        {"finetune-baseline", "full per-pair fine-tune of the parent (overwrites shared weights)", cmd_finetune_baseline},
        {"eval", "score dev BLEU/loss for every checkpoint present", cmd_eval},
        {"zero-shot", "decode all xx->yy directions through the shared weights", cmd_zero_shot},
        {"verify", "re-derive probe logits and the capacity ledger; fail on any drift", cmd_verify},
        {"report", "write the TSV tables (interference, capacity, zero-shot, adaptation)", cmd_report}};
    for (const auto& c : commands) app.add_subcommand(c.name, c.help)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad invocation is a config error
    }

    try {
        if (seed_flag >= 0) ov.seed = static_cast<std::uint64_t>(seed_flag);
        const ExperimentConfig cfg = resolve_config(ov);
        const RunPaths paths(cfg.out_dir);
        std::filesystem::create_directories(paths.root);

        for (const auto& c : commands) {
            if (!app.get_subcommand(c.name)->parsed()) continue;
            const auto start = std::chrono::steady_clock::now();
            const std::vector<PhaseEntry> phases = c.fn(cfg, paths);
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            append_run_log(paths.run_log(), c.name, effective_json(cfg), config_hash(cfg), wall, phases);
        }
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "packmt: invalid config: %s\n", e.what());
        return 2;
    } catch (const CapacityError& e) {
        std::fprintf(stderr, "packmt: capacity exhausted: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "packmt: artifact error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "packmt: %s\n", e.what());
        return 1;
    }
}
