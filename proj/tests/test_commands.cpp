#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "riskrank/commands.hpp"
#include "riskrank/errors.hpp"
#include "support/synthetic.hpp"

using namespace riskrank;
using namespace riskrank::commands;

namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct PipelineFixture {
    fs::path root;
    synthetic::ToyPipeline toy;
    std::string labels_run, split_run;
    config::RunConfig base_config;

    PipelineFixture() {
        root = fs::temp_directory_path() / ("riskrank_cmd_" + std::to_string(::getpid()));
        fs::remove_all(root);
        fs::create_directories(root);
        toy = synthetic::make_toy_pipeline((root / "data").string(), 2024);

        base_config = make_config();
        labels_run = cmd_label(base_config, named("labels"));
        base_config.labels_csv = labels_run + "/labels.csv";
        base_config.snapshot["labels_csv"] = base_config.labels_csv;
        split_run = cmd_split(base_config, named("splits"));
        base_config.split_file = split_run + "/splits.json";
        base_config.snapshot["split_file"] = base_config.split_file;
    }

    ~PipelineFixture() { fs::remove_all(root); }

    config::RunConfig make_config() const {
        config::RunConfig cfg;
        cfg.corpus_jsonl = toy.corpus_path;
        cfg.returns_csv = toy.returns_path;
        cfg.output_dir = (root / "out").string();
        cfg.measure = riskmeasures::RiskMeasure::Std;
        cfg.loss = losses::LossKind::Triplet;
        cfg.max_sentences = 12;
        cfg.max_tokens = 18;
        cfg.embed_dim = 16;
        cfg.attn_dim = 16;
        cfg.heads = 2;
        cfg.ffn_width = 32;
        cfg.epochs = 2;
        cfg.batch_size = 6;
        cfg.encoder_lr = 0.02;
        cfg.head_lr = 0.02;
        cfg.seeds = {42};
        cfg.snapshot = {{"config_version", "1"}, {"synthetic", "fixture"}};
        return cfg;
    }

    static CommandOptions named(const std::string& name) {
        CommandOptions opts;
        opts.run_name = name;
        return opts;
    }
};

} // namespace

TEST_CASE("config parsing") {
    const std::string text = R"(
# pipeline settings
config_version = 1
corpus_jsonl = /tmp/c.jsonl
measure = kurt
loss = pairwise
seeds = 1, 2, 3
epochs = 4
margin = 0.25
)";
    const auto cfg = config::parse_config_text(text);
    CHECK(cfg.corpus_jsonl == "/tmp/c.jsonl");
    CHECK(cfg.measure == riskmeasures::RiskMeasure::Kurt);
    CHECK(cfg.loss == losses::LossKind::Pairwise);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(cfg.epochs == 4);
    CHECK(cfg.margin == 0.25);
    CHECK(cfg.batch_size == 8); // untouched default

    CHECK_THROWS_AS(config::parse_config_text("config_version = 1\nbogus_key = 2\n"), Error);
    CHECK_THROWS_AS(config::parse_config_text("epochs = 4\n"), Error); // missing version
    CHECK_THROWS_AS(config::parse_config_text("config_version = 2\n"), Error);
    CHECK_THROWS_AS(config::parse_config_text("config_version = 1\nepochs = x\n"), Error);
    CHECK_THROWS_AS(config::parse_config_text("config_version = 1\nepochs = 1\nepochs = 2\n"), Error);

    // Hash is insensitive to comments and spacing but sensitive to values.
    const auto cfg2 = config::parse_config_text("config_version=1\ncorpus_jsonl=/tmp/c.jsonl\n");
    const auto cfg3 = config::parse_config_text("config_version = 1\ncorpus_jsonl = /tmp/c.jsonl  # x\n");
    CHECK(cfg2.hash() == cfg3.hash());
    const auto cfg4 = config::parse_config_text("config_version = 1\ncorpus_jsonl = /tmp/d.jsonl\n");
    CHECK(cfg2.hash() != cfg4.hash());
}

TEST_CASE("label command plants the volatility bins") {
    PipelineFixture fx;

    const auto rows = read_labels_csv(fx.base_config.labels_csv);
    REQUIRE_FALSE(rows.empty());

    std::map<std::string, int> std_bins;
    for (const auto& row : rows) {
        if (row.measure == riskmeasures::RiskMeasure::Std) {
            std_bins[row.company_id + ":" + std::to_string(row.year)] = row.bin;
        }
    }
    // 10 companies x 6 years, all with enough observations.
    CHECK(std_bins.size() == 60);
    for (const auto& [key, bin] : fx.toy.expected_bins) {
        REQUIRE(std_bins.count(key) == 1);
        CHECK(std_bins[key] == bin);
    }

    SUBCASE("deterministic byte-identical output") {
        const std::string rerun = cmd_label(fx.base_config, PipelineFixture::named("labels2"));
        CHECK(slurp(rerun + "/labels.csv") == slurp(fx.labels_run + "/labels.csv"));
    }
}

TEST_CASE("split command emits one disjoint split per test year") {
    PipelineFixture fx;
    const auto splits = read_split_file(fx.base_config.split_file);
    REQUIRE(splits.size() == 1); // 2013..2018 with window 5
    CHECK(splits[0].test_year == 2018);
    CHECK(splits[0].train_years == std::vector<int>{2013, 2014, 2015, 2016, 2017});
    CHECK(splits[0].train_docs.size() == 50);
    CHECK(splits[0].test_docs.size() == 10);

    std::set<std::string> train(splits[0].train_docs.begin(), splits[0].train_docs.end());
    for (const auto& id : splits[0].test_docs) CHECK(train.count(id) == 0);
}

TEST_CASE("train, eval, explain, ablate round-trip") {
    PipelineFixture fx;

    const std::string train_run = cmd_train(fx.base_config, PipelineFixture::named("train"));
    const RunManifest manifest = RunManifest::load(train_run + "/manifest.json");
    REQUIRE(manifest.checkpoints.size() == 1);
    CHECK(manifest.checkpoints.count("2018:42") == 1);
    CHECK(fs::exists(manifest.checkpoints.at("2018:42")));
    CHECK(manifest.vocab_hash_by_year.count(2018) == 1);

    SUBCASE("manifest round-trips") {
        RunManifest reloaded = RunManifest::load(train_run + "/manifest.json");
        CHECK(reloaded == manifest);
        reloaded.save(train_run + "/manifest_copy.json");
        CHECK(slurp(train_run + "/manifest.json") == slurp(train_run + "/manifest_copy.json"));
    }

    SUBCASE("training never touches test-year documents") {
        const auto& trained = manifest.trained_doc_ids.at("2018:42");
        const auto splits = read_split_file(fx.base_config.split_file);
        const std::set<std::string> test_refs(splits[0].test_docs.begin(),
                                              splits[0].test_docs.end());
        const std::set<std::string> train_refs(splits[0].train_docs.begin(),
                                               splits[0].train_docs.end());
        CHECK_FALSE(trained.empty());
        for (const auto& ref : trained) {
            CHECK(test_refs.count(ref) == 0);
            CHECK(train_refs.count(ref) == 1);
            CHECK(ref.find(":2018") == std::string::npos);
        }
    }

    SUBCASE("determinism: retraining bit-identical, then eval reproduces reports") {
        const std::string train_run2 = cmd_train(fx.base_config, PipelineFixture::named("train2"));
        CHECK(slurp(train_run2 + "/checkpoint_2018_seed42.bin") ==
              slurp(train_run + "/checkpoint_2018_seed42.bin"));
        CHECK(slurp(train_run2 + "/loss_2018_seed42.csv") ==
              slurp(train_run + "/loss_2018_seed42.csv"));

        config::RunConfig eval_cfg = fx.base_config;
        eval_cfg.checkpoint_dir = train_run;
        const std::string eval_run = cmd_eval(eval_cfg, PipelineFixture::named("eval"));
        eval_cfg.checkpoint_dir = train_run2;
        const std::string eval_run2 = cmd_eval(eval_cfg, PipelineFixture::named("eval2"));
        CHECK(slurp(eval_run + "/report_2018_seed42.json") ==
              slurp(eval_run2 + "/report_2018_seed42.json"));
        CHECK(fs::exists(eval_run + "/summary.json"));

        SUBCASE("evaluation is read-only on the checkpoint") {
            const std::string before = slurp(train_run + "/checkpoint_2018_seed42.bin");
            cmd_eval(eval_cfg, PipelineFixture::named("eval3"));
            CHECK(slurp(train_run2 + "/checkpoint_2018_seed42.bin") == before);
        }
    }

    SUBCASE("explain emits clouds and requested heatmaps; unknown ids fail") {
        config::RunConfig explain_cfg = fx.base_config;
        explain_cfg.checkpoint_dir = train_run;
        CommandOptions opts = PipelineFixture::named("explain");
        opts.doc_ids = {"C03"};
        const std::string run = cmd_explain(explain_cfg, opts);
        CHECK(fs::exists(run + "/clouds_2018_seed42.json"));
        CHECK(fs::exists(run + "/heatmap_C03.json"));

        CommandOptions bad = PipelineFixture::named("explain_bad");
        bad.doc_ids = {"NOPE"};
        try {
            cmd_explain(explain_cfg, bad);
            FAIL("expected NotFound");
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::NotFound);
        }
    }

    SUBCASE("ablation CSV has one row per (k, variant)") {
        config::RunConfig ablate_cfg = fx.base_config;
        ablate_cfg.checkpoint_dir = train_run;
        CommandOptions opts = PipelineFixture::named("ablate");
        opts.k_grid = {0.0, 0.1, 0.3};
        const std::string run = cmd_ablate(ablate_cfg, opts);
        const std::string csv = slurp(run + "/ablation_2018.csv");
        std::size_t lines = 0;
        for (char c : csv) lines += c == '\n' ? 1 : 0;
        CHECK(lines == 1 + 6); // header + 3 ks x 2 variants

        // k=0 rows are identical for both variants.
        std::stringstream ss(csv);
        std::string header, row_attention, row_random;
        std::getline(ss, header);
        std::getline(ss, row_attention);
        std::getline(ss, row_random);
        CHECK(row_attention.substr(0, 2) == "0,");
        const auto metrics_of = [](const std::string& row) {
            return row.substr(row.find(',', row.find(',') + 1));
        };
        CHECK(metrics_of(row_attention) == metrics_of(row_random));
    }
}

TEST_CASE("eval comparison mode computes paired Cohen's d") {
    PipelineFixture fx;
    config::RunConfig cfg = fx.base_config;
    cfg.seeds = {42, 43};
    cfg.snapshot["seeds"] = "42,43";

    const std::string train_run = cmd_train(cfg, PipelineFixture::named("cmp_train"));
    cfg.checkpoint_dir = train_run;
    const std::string eval_a = cmd_eval(cfg, PipelineFixture::named("cmp_eval_a"));

    // A second model with one different hyperparameter.
    config::RunConfig cfg_b = cfg;
    cfg_b.head_lr = 0.005;
    cfg_b.snapshot["head_lr"] = "0.005";
    const std::string train_b = cmd_train(cfg_b, PipelineFixture::named("cmp_train_b"));
    cfg_b.checkpoint_dir = train_b;
    const std::string eval_b = cmd_eval(cfg_b, PipelineFixture::named("cmp_eval_b"));

    CommandOptions opts = PipelineFixture::named("cmp");
    opts.compare_a = eval_a;
    opts.compare_b = eval_b;
    const std::string run = cmd_eval(cfg, opts);
    CHECK(fs::exists(run + "/cohens_d.json"));

    SUBCASE("a run against itself is undefined") {
        CommandOptions self = PipelineFixture::named("cmp_self");
        self.compare_a = eval_a;
        self.compare_b = eval_a;
        const std::string self_run = cmd_eval(cfg, self);
        const std::string text = slurp(self_run + "/cohens_d.json");
        CHECK(text.find("null") != std::string::npos);
    }
}
