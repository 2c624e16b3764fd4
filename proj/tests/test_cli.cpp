#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "packmt/config.hpp"
#include "packmt/report.hpp"

using namespace packmt;

namespace {

std::filesystem::path fresh_dir(const std::string& tag) {
    const auto dir = std::filesystem::temp_directory_path() / ("packmt_cli_" + tag);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f << text;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// Exit status of the packmt binary for the given arguments.
int run_cli(const std::string& args) {
    const std::string cmd = std::string(PACKMT_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

const char* kTinyConfig = R"({
  "seed": 11,
  "corpus": {"train_sizes": [100, 80], "dev_size": 12, "test_size": 8, "probe_count": 4},
  "epochs": {"multilingual": 2, "base_retrain": 1, "adapt": 1, "pair_retrain": 1},
  "optimizer": {"lr_max": 2e-3, "warmup_steps": 20}
})";

}  // namespace

TEST_CASE("config defaults and preset values") {
    const ExperimentConfig desk = default_config(Preset::desk);
    CHECK(desk.multilingual_epochs == 30);
    CHECK(desk.base_retrain_epochs == 8);
    CHECK(desk.adapt_epochs == 15);
    CHECK(desk.pair_retrain_epochs == 6);
    CHECK(desk.r1 == 0.5);
    CHECK(desk.r2 == 0.75);
    CHECK(desk.temperature == 5.0);
    CHECK(desk.model_config().embed_dim == 64);
    CHECK(desk.model_config().num_encoder_layers == 2);
    CHECK(desk.model_config().vocab_size == 80);
    CHECK(desk.pairs == std::vector<std::int32_t>{1, 2, 3, 4, 5, 6, 7, 8});

    const ExperimentConfig paper = default_config(Preset::paper);
    CHECK(paper.multilingual_epochs == 40);
    CHECK(paper.base_retrain_epochs == 10);
    CHECK(paper.adapt_epochs == 20);
    CHECK(paper.pair_retrain_epochs == 10);
    CHECK(paper.lr_max == 3e-4);
    CHECK(paper.warmup_steps == 4500);
    CHECK(paper.model_config().embed_dim == 512);
    CHECK(paper.model_config().num_encoder_layers == 6);
}

TEST_CASE("config parsing is strict about keys, types, and ranges") {
    CHECK_NOTHROW(parse_config_text(R"({"seed": 3})"));
    CHECK_THROWS_AS(parse_config_text(R"({"sed": 3})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"corpus": {"train_size": [10]}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"pruning": {"r3": 0.5}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"seed": "seven"})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"seed": 3.5})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"(not json)"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"pruning": {"r1": 1.0}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"pruning": {"r2": -0.1}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"schema_version": 2})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"sampling": {"temperature": 0}})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"preset": "laptop"})"), ConfigError);

    // Orders and subsets may only reference declared pairs.
    CHECK_THROWS_AS(parse_config_text(R"({"pairs": [1, 9]})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"pairs": [1, 1]})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"pairs": []})"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(R"({"order": [1, 2]})"), ConfigError);  // not a permutation of all 8
    CHECK_THROWS_AS(parse_config_text(R"({"order": "sideways"})"), ConfigError);
    CHECK_NOTHROW(parse_config_text(R"({"pairs": [2, 1], "order": [1, 2]})"));
}

TEST_CASE("effective config round-trips and hashes are stable") {
    const ExperimentConfig a = default_config(Preset::desk);
    const ExperimentConfig b = parse_config(effective_json(a));
    CHECK(a == b);
    CHECK(config_hash(a) == config_hash(b));

    ExperimentConfig c = parse_config_text(R"({
        "preset": "paper",
        "seed": 99,
        "corpus": {"train_sizes": [50, 40, 30], "max_len": 12},
        "order": [3, 1, 2],
        "pruning": {"equal_share": true, "no_prune_last": true}
    })");
    const ExperimentConfig d = parse_config(effective_json(c));
    CHECK(c == d);
    CHECK(config_hash(c) != config_hash(a));
}

TEST_CASE("order and ratio derivation") {
    ExperimentConfig cfg = default_config(Preset::desk);
    cfg.corpus.train_sizes = {500, 900, 700};
    cfg.pairs = {1, 2, 3};

    cfg.order_kind = OrderKind::descending;
    CHECK(cfg.adapt_order() == std::vector<std::int32_t>{2, 3, 1});
    cfg.order_kind = OrderKind::ascending;
    CHECK(cfg.adapt_order() == std::vector<std::int32_t>{1, 3, 2});
    cfg.order_kind = OrderKind::explicit_list;
    cfg.explicit_order = {3, 1, 2};
    CHECK(cfg.adapt_order() == std::vector<std::int32_t>{3, 1, 2});

    // Ties break on pair id so the order is total.
    ExperimentConfig tie = default_config(Preset::desk);
    tie.corpus.train_sizes = {300, 300};
    tie.pairs = {1, 2};
    CHECK(tie.adapt_order() == std::vector<std::int32_t>{1, 2});

    cfg.order_kind = OrderKind::descending;
    cfg.explicit_order.clear();
    CHECK(cfg.pair_ratios() == std::vector<double>{0.75, 0.75, 0.75});
    cfg.no_prune_last = true;
    CHECK(cfg.pair_ratios() == std::vector<double>{0.75, 0.75, 0.0});
    cfg.equal_share = true;
    const std::vector<double> eq = cfg.pair_ratios();
    REQUIRE(eq.size() == 3);
    CHECK(eq[0] == Catch::Approx(2.0 / 3.0));
    CHECK(eq[1] == Catch::Approx(0.5));
    CHECK(eq[2] == 0.0);
}

TEST_CASE("system eval artifacts round-trip") {
    SystemEval eval;
    eval[1].en_to_xx.bleu.value = 0.25;
    eval[1].en_to_xx.bleu.brevity_penalty = 0.9;
    eval[1].en_to_xx.token_accuracy = 0.5;
    eval[1].en_to_xx.loss = 1.25;
    eval[1].xx_to_en.bleu.value = 0.5;
    eval[1].xx_to_en.loss = 0.75;
    eval[3].en_to_xx.loss = 2.0;

    const auto dir = fresh_dir("eval_roundtrip");
    save_system_eval(eval, "parent", "dev", dir / "parent.json");
    const SystemEval back = load_system_eval(dir / "parent.json");
    REQUIRE(back.size() == 2);
    CHECK(back.at(1).en_to_xx.bleu.value == 0.25);
    CHECK(back.at(1).en_to_xx.bleu.brevity_penalty == 0.9);
    CHECK(back.at(1).xx_to_en.bleu.value == 0.5);
    CHECK(back.at(1).mean_bleu() == Catch::Approx(0.375));
    CHECK(back.at(3).en_to_xx.loss == 2.0);

    CHECK_THROWS_AS(load_system_eval(dir / "absent.json"), IoError);
    write_file(dir / "bad.json", "{}");
    CHECK_THROWS_AS(load_system_eval(dir / "bad.json"), IoError);
}

TEST_CASE("adaptation plot with zero adapted pairs has only parent and pruned rows") {
    SystemEval parent, pruned;
    parent[1].en_to_xx.bleu.value = 0.4;
    parent[1].xx_to_en.bleu.value = 0.6;
    pruned[1].en_to_xx.bleu.value = 0.3;
    pruned[1].xx_to_en.bleu.value = 0.5;

    const auto dir = fresh_dir("plot_rows");
    write_adaptation_plot(parent, pruned, {}, {}, {}, dir / "plot.tsv");
    const std::string text = read_file(dir / "plot.tsv");
    CHECK(text == "label\torder_index\tpair\tparam_percent\tbleu\tdelta_vs_parent\n"
                  "parent\t0\t0\t0.000000\t0.500000\t0.000000\n"
                  "pruned\t0\t0\t0.000000\t0.400000\t-0.100000\n");
}

TEST_CASE("capacity ledger expected column follows the prune schedule") {
    OwnershipMask mask;
    // 16 elements: 8 shared, 4 to pair 1, 2 to pair 2, 2 free.
    std::vector<std::uint8_t> owners(16, 1);
    for (int i = 0; i < 4; ++i) owners[static_cast<std::size_t>(8 + i)] = 2;
    owners[12] = owners[13] = 3;
    owners[14] = owners[15] = 0;
    mask.add("w", std::move(owners));

    const auto dir = fresh_dir("ledger");
    write_capacity_ledger(capacity_report(mask), 0.5, {1, 2}, {0.5, 0.5}, dir / "capacity.tsv");
    const std::string text = read_file(dir / "capacity.tsv");
    CHECK(text.find("total\t1\tshared\t8\t0.500000\t0.500000\n") != std::string::npos);
    CHECK(text.find("total\t2\tpair1\t4\t0.250000\t0.250000\n") != std::string::npos);
    CHECK(text.find("total\t3\tpair2\t2\t0.125000\t0.125000\n") != std::string::npos);
    CHECK(text.find("total\t0\tfree\t2\t0.125000\t0.125000\n") != std::string::npos);
    CHECK(text.find("w\t1\tshared\t8\t-\t-\n") != std::string::npos);
}

TEST_CASE("cli rejects invalid configs with exit 2 before doing any work") {
    const auto dir = fresh_dir("cli_invalid");
    write_file(dir / "typo.json", R"({"prunning": {"r2": 0.5}})");
    CHECK(run_cli("--config " + (dir / "typo.json").string() + " gen-data") == 2);

    write_file(dir / "ratio.json", R"({"pruning": {"r2": 1.0}})");
    CHECK(run_cli("--config " + (dir / "ratio.json").string() + " adapt") == 2);
    CHECK(run_cli("--definitely-not-a-flag gen-data") == 2);
    CHECK_FALSE(std::filesystem::exists(dir / "run"));
}

TEST_CASE("cli pipeline: artifacts, verify, idempotent reports, resume") {
    const auto dir = fresh_dir("cli_chain");
    write_file(dir / "exp.json", kTinyConfig);
    const std::string base = "--config " + (dir / "exp.json").string() + " --out " + (dir / "run").string() + " ";

    // Commands depend on artifacts from earlier ones and say so.
    CHECK(run_cli(base + "train-mnmt") == 4);

    REQUIRE(run_cli(base + "gen-data") == 0);
    REQUIRE(run_cli(base + "train-mnmt") == 0);
    REQUIRE(run_cli(base + "prune-base") == 0);
    REQUIRE(run_cli(base + "adapt") == 0);
    REQUIRE(run_cli(base + "eval") == 0);
    REQUIRE(run_cli(base + "zero-shot") == 0);
    CHECK(run_cli(base + "verify") == 0);

    const RunPaths paths(dir / "run");
    CHECK(std::filesystem::exists(paths.checkpoint("multilingual")));
    CHECK(std::filesystem::exists(paths.checkpoint("adapted.pair1")));
    CHECK(std::filesystem::exists(paths.checkpoint("adapted")));
    CHECK(std::filesystem::exists(paths.snapshot(1)));
    CHECK(std::filesystem::exists(paths.snapshot(2)));

    // Zero-shot grid has n*(n-1) rows for n pairs.
    const ZeroShotEval grid = load_zero_shot_eval(paths.zero_shot_file("adapted"));
    CHECK(grid.size() == 2);

    // Reports regenerate byte-identically.
    REQUIRE(run_cli(base + "report") == 0);
    const std::string interference = read_file(paths.report_file("interference"));
    const std::string capacity = read_file(paths.report_file("capacity"));
    const std::string plot = read_file(paths.report_file("adaptation_plot"));
    REQUIRE(run_cli(base + "report") == 0);
    CHECK(read_file(paths.report_file("interference")) == interference);
    CHECK(read_file(paths.report_file("capacity")) == capacity);
    CHECK(read_file(paths.report_file("adaptation_plot")) == plot);

    // A finished run resumes as a no-op: the final checkpoint is untouched.
    const std::string adapted = read_file(paths.checkpoint("adapted"));
    REQUIRE(run_cli(base + "adapt") == 0);
    CHECK(read_file(paths.checkpoint("adapted")) == adapted);

    // The run log records one entry per command with the config hash.
    const nlohmann::json log = nlohmann::json::parse(read_file(paths.run_log()));
    REQUIRE(log.is_array());
    CHECK(log.size() >= 8);
    const ExperimentConfig cfg = parse_config(log.back().at("config"));
    CHECK(log.back().at("config_hash").get<std::string>() == config_hash(cfg));

    // Corrupting the adapted checkpoint turns verify into exit 4.
    const std::string bytes = read_file(paths.checkpoint("adapted"));
    write_file(paths.checkpoint("adapted"), bytes.substr(0, bytes.size() / 2));
    CHECK(run_cli(base + "verify") == 4);
}
