#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>
#include <unistd.h>

#include "skillnet/skillnet.hpp"

using namespace skillnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("skillnet-test-" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ExperimentConfig quick_config() {
    ExperimentConfig c;
    c.num_tasks = 6;
    c.examples_per_task = 32;
    c.train_steps = 60;
    c.eval_interval = 20;
    c.adaptation_steps = 20;
    c.few_shot_resamples = 1;
    c.num_heldout_tasks = 2;
    return c;
}

// Configuration whose world cannot be generated: every row equals {1, 1}.
ExperimentConfig impossible_config() {
    ExperimentConfig c = quick_config();
    c.num_tasks = 2;
    c.num_true_skills = 2;
    c.min_skills_per_task = 2;
    c.max_skills_per_task = 2;
    return c;
}

std::string config_key_error(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.key();
    }
    return "";
}

}  // namespace

// ---------------------------------------------------------------------------
// csv

TEST(Csv, DoublesRoundTrip) {
    Rng rng(1);
    for (int t = 0; t < 2000; ++t) {
        const double v = (rng.uniform() - 0.5) * std::pow(10.0, rng.uniform(-30, 30));
        EXPECT_EQ(std::strtod(csv::format_double(v).c_str(), nullptr), v);
    }
    EXPECT_EQ(csv::format_double(0.1), "0.1");
    EXPECT_EQ(csv::format_double(1.0), "1");
}

TEST(Csv, QuotingRoundTrip) {
    csv::Table t{{"a", "b,c", "d"}, {{"x", "he said \"hi\"", "multi\nline"}, {"", "1", "2"}}};
    const csv::Table back = csv::parse_table(csv::format_table(t));
    EXPECT_EQ(back.header, t.header);
    EXPECT_EQ(back.rows, t.rows);
    EXPECT_EQ(back.column("d"), 2u);
    EXPECT_THROW(back.column("zz"), LookupError);
    EXPECT_THROW(csv::parse_table("a,b\n1\n"), ShapeError);
}

// ---------------------------------------------------------------------------
// config

TEST(Config, EmptyObjectGivesDefaults) {
    const ExperimentConfig c = parse_config_text("{}");
    EXPECT_EQ(config_to_json(c), config_to_json(ExperimentConfig{}));
    EXPECT_EQ(c.num_skills, 4u);
    EXPECT_EQ(c.lr_z, 0.1);
}

TEST(Config, StrictKeysAndTypes) {
    EXPECT_EQ(config_key_error(R"({"lr_z": "fast"})"), "lr_z");
    EXPECT_EQ(config_key_error(R"({"learning_rate": 0.1})"), "learning_rate");
    EXPECT_EQ(config_key_error(R"({"num_skills": -1})"), "num_skills");
    EXPECT_EQ(config_key_error(R"({"num_skills": 2.5})"), "num_skills");
    EXPECT_EQ(config_key_error(R"({"k_shot": 33})"), "k_shot");
    EXPECT_EQ(config_key_error(R"({"sparsity": 1.0})"), "sparsity");
    EXPECT_EQ(config_key_error(R"({"model_kind": "mixture"})"), "model_kind");
    EXPECT_EQ(config_key_error(R"({"select_best_dev": 1})"), "select_best_dev");
    EXPECT_EQ(config_key_error("[1, 2]"), "<root>");
    EXPECT_EQ(config_key_error("{ not json"), "<root>");
    EXPECT_NO_THROW(parse_config_text(R"({"tau_final": null, "train_steps": null})"));
}

TEST(Config, ExpertTableMustMatchInventory) {
    std::string tasks;
    for (int i = 0; i < 9; ++i) tasks += std::string(i ? "," : "") + "\"task_0" + std::to_string(i) + "\": [" + std::to_string(i) + "]";
    const std::string nine = R"({"num_skills": 9, "expert_table": {"num_skills": 9, "tasks": {)" + tasks + "}}}";
    const ExperimentConfig c = parse_config_text(nine);
    ASSERT_TRUE(c.expert_table.has_value());
    EXPECT_EQ(c.expert_table->tasks.size(), 9u);
    const std::string mismatch = R"({"num_skills": 4, "expert_table": {"num_skills": 9, "tasks": {)" + tasks + "}}}";
    EXPECT_EQ(config_key_error(mismatch), "expert_table");
}

TEST(Config, JsonRoundTripAndHash) {
    ExperimentConfig c = quick_config();
    c.tau_final = 0.3;
    c.model_kind = ModelKind::private_;
    const ExperimentConfig back = config_from_json(config_to_json(c));
    EXPECT_EQ(config_to_json(back), config_to_json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));

    ExperimentConfig moved = c;
    moved.output_dir = "/elsewhere";
    moved.parallelism = 4;
    EXPECT_EQ(config_hash(moved), config_hash(c));
    ExperimentConfig reseeded = c;
    reseeded.seed = 1;
    EXPECT_NE(config_hash(reseeded), config_hash(c));
    EXPECT_EQ(config_hash(c).size(), 16u);
}

TEST(Config, DerivedTrainSteps) {
    ExperimentConfig c;
    c.train_steps.reset();
    c.epochs = 3;
    const Benchmark b = generate_synthetic_benchmark(benchmark_config(c));
    EXPECT_EQ(train_config(c, b.train_tasks).steps, steps_for_epochs(3, b.train_tasks, c.batch_size));
    c.train_steps = 77;
    c.tau_final = 0.5;
    const TrainConfig tc = train_config(c, b.train_tasks);
    EXPECT_EQ(tc.steps, 77u);
    EXPECT_EQ(tc.tau.at(77), 0.5);
}

TEST(Config, OutputRootPrecedence) {
    ExperimentConfig c;
    ::unsetenv(kOutputRootEnv);
    EXPECT_EQ(resolve_output_root(c, std::nullopt), fs::path("runs"));
    c.output_dir = "from_config";
    EXPECT_EQ(resolve_output_root(c, std::nullopt), fs::path("from_config"));
    ::setenv(kOutputRootEnv, "from_env", 1);
    EXPECT_EQ(resolve_output_root(c, std::nullopt), fs::path("from_env"));
    EXPECT_EQ(resolve_output_root(c, std::string("explicit")), fs::path("explicit"));
    ::unsetenv(kOutputRootEnv);
}

// ---------------------------------------------------------------------------
// runner

class Runner : public ::testing::Test {
  protected:
    static void SetUpTestSuite() {
        root_ = new fs::path(scratch("runner"));
        record_ = new RunRecord(run_experiment(quick_config(), RunOptions{*root_, false}));
    }
    static void TearDownTestSuite() {
        fs::remove_all(*root_);
        delete record_;
        delete root_;
    }
    static fs::path* root_;
    static RunRecord* record_;
};
fs::path* Runner::root_ = nullptr;
RunRecord* Runner::record_ = nullptr;

TEST_F(Runner, WritesEveryArtifact) {
    ASSERT_TRUE(record_->ok) << record_->error;
    EXPECT_EQ(record_->dir.filename().string(), run_id(quick_config()));
    for (const char* f : {"config.json", "history.csv", "curve.csv", "allocation_layer_0.json", "allocation_layer_0.csv",
                          "allocation_layer_1.json", "hierarchy_layer_0.json", "hierarchy_layer_0.txt", "skills.bin",
                          "skills.json", "summary.json", "timing.json"}) {
        EXPECT_TRUE(fs::exists(record_->dir / f)) << f;
    }
    const Json s = detail::read_json(record_->dir / "summary.json");
    EXPECT_EQ(s["status"], "ok");
    EXPECT_EQ(s["config_hash"], config_hash(quick_config()));
    EXPECT_EQ(s["allocation"].size(), 2u);
    EXPECT_EQ(s["few_shot"]["tasks"].size(), 2u);
    EXPECT_FALSE(s.contains("train_seconds"));
    EXPECT_EQ(csv::read_table((record_->dir / "history.csv").string()).rows.size(), 60u);
}

TEST_F(Runner, AllocationDocumentHardensLikeTheCsv) {
    const Json doc = detail::read_json(record_->dir / "allocation_layer_0.json");
    const AllocationDoc alloc = allocation_from_json(doc);
    const csv::Table t = csv::read_table((record_->dir / "allocation_layer_0.csv").string());
    ASSERT_EQ(t.rows.size(), alloc.hardened.rows());
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        EXPECT_EQ(t.rows[i][0], alloc.tasks[i]);
        for (std::size_t j = 0; j < alloc.hardened.cols(); ++j) EXPECT_EQ(t.rows[i][j + 1], alloc.hardened.at(i, j) ? "1" : "0");
    }
}

TEST_F(Runner, CheckpointRestoresTheTrainedModel) {
    const auto entries = load_checkpoint_file((record_->dir / "skills.bin").string());
    const ExperimentConfig c = quick_config();
    const Benchmark b = generate_synthetic_benchmark(benchmark_config(c));
    MultitaskModel m(model_spec(c), task_ids(b.train_tasks), 0);
    restore_checkpoint(m, entries);
    const TrainConfig tc = train_config(c, b.train_tasks);
    const EvalMetrics e = evaluate(m, b.train_tasks[0], tc.tau.at(tc.steps));
    const Json s = detail::read_json(record_->dir / "summary.json");
    EXPECT_EQ(e.loss, s["train_tasks_eval"]["tasks"]["task_00"]["loss"].get<double>());
}

TEST_F(Runner, ReuseSkipsFinishedRuns) {
    const RunRecord again = run_experiment(quick_config(), RunOptions{*root_, true});
    EXPECT_TRUE(again.ok);
    EXPECT_TRUE(again.reused);
    EXPECT_EQ(again.summary, record_->summary);
}

TEST_F(Runner, PlotDataRowCounts) {
    const fs::path out = *root_ / "plots";
    const PlotData data = emit_plot_data({record_->dir}, out);
    EXPECT_EQ(data.curves.rows.size(), 60u * plot_metrics().size());
    // Three metrics per layer plus recovery when the inventory covers the truth.
    EXPECT_EQ(data.sweep.rows.size(), 2u * 4u);
    EXPECT_EQ(csv::read_table((out / "curves.csv").string()).rows.size(), data.curves.rows.size());
    EXPECT_TRUE(fs::exists(out / "sweep_metrics.csv"));
    EXPECT_THROW(collect_plot_data({}), ContractError);
}

TEST(RunnerFailures, FailedRunWritesStatusAndStage) {
    const fs::path root = scratch("failure");
    const RunRecord r = run_experiment(impossible_config(), RunOptions{root, false});
    EXPECT_FALSE(r.ok);
    const Json s = detail::read_json(r.dir / "summary.json");
    EXPECT_EQ(s["status"], "failed");
    EXPECT_EQ(s["stage"], "generate");
    fs::remove_all(root);
}

TEST(RunnerBatches, SweepAndCompareTables) {
    const fs::path root = scratch("batches");
    ExperimentConfig c = quick_config();
    c.hidden_dim = 0;
    const BatchResult sweep = run_sweep(c, {2, 4}, RunOptions{root, false});
    EXPECT_TRUE(sweep.all_ok);
    const csv::Table st = csv::read_table(sweep.table_path.string());
    EXPECT_EQ(st.rows.size(), 2u);
    EXPECT_EQ(st.rows[0][st.column("num_skills")], "2");
    EXPECT_EQ(st.rows[0][st.column("cell_accuracy")], "");  // fewer learned than true skills
    EXPECT_NE(st.rows[1][st.column("cell_accuracy")], "");

    const BatchResult cmp = run_compare(c, {ModelKind::skilled, ModelKind::shared, ModelKind::hypernet}, RunOptions{root, false});
    EXPECT_TRUE(cmp.all_ok);
    const csv::Table ct = csv::read_table(cmp.table_path.string());
    EXPECT_EQ(ct.rows.size(), 3u);
    EXPECT_EQ(ct.rows[2][0], "hypernet");
    fs::remove_all(root);
}

// ---------------------------------------------------------------------------
// command line

class Cli : public ::testing::Test {
  protected:
    void SetUp() override {
        const char* bin = std::getenv("SKILLNET_CLI");
        if (bin == nullptr) GTEST_SKIP() << "SKILLNET_CLI not set";
        bin_ = bin;
        dir_ = scratch("cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    }
    void TearDown() override {
        if (!dir_.empty()) fs::remove_all(dir_);
    }
    int run(const std::string& args) {
        const std::string cmd = bin_ + " " + args + " > " + (dir_ / "stdout.txt").string() + " 2>&1";
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    fs::path write(const std::string& name, const std::string& text) {
        csv::write_file((dir_ / name).string(), text);
        return dir_ / name;
    }
    std::string output() { return csv::read_file((dir_ / "stdout.txt").string()); }

    std::string bin_;
    fs::path dir_;
};

TEST_F(Cli, ExitCodes) {
    const Json good = config_to_json(quick_config());
    const fs::path cfg = write("good.json", good.dump());
    EXPECT_EQ(run("run " + cfg.string() + " --output-root " + (dir_ / "runs").string()), 0) << output();
    EXPECT_EQ(run("run " + write("bad.json", R"({"lr_z": "fast"})").string()), 1);
    EXPECT_NE(output().find("lr_z"), std::string::npos);
    EXPECT_EQ(run("run " + (dir_ / "missing.json").string()), 1);
    EXPECT_EQ(run("frobnicate"), 1);
    const fs::path impossible = write("impossible.json", config_to_json(impossible_config()).dump());
    EXPECT_EQ(run("run " + impossible.string() + " --output-root " + (dir_ / "runs").string()), 2);
}

TEST_F(Cli, ExportHierarchyAndPlots) {
    const fs::path cfg = write("good.json", config_to_json(quick_config()).dump());
    ASSERT_EQ(run("run " + cfg.string() + " --output-root " + (dir_ / "runs").string()), 0);
    const fs::path run_dir = dir_ / "runs" / run_id(quick_config());
    EXPECT_EQ(run("export-hierarchy " + (run_dir / "allocation_layer_0.json").string() + " --out " + (dir_ / "h").string()), 0);
    const Json h = Json::parse(csv::read_file((dir_ / "h.json").string()));
    std::size_t tasks = 0;
    for (const auto& [key, names] : h.items()) tasks += names.size();
    EXPECT_EQ(tasks, quick_config().num_tasks);
    EXPECT_EQ(run("emit-plots " + run_dir.string() + " --out " + (dir_ / "plots").string()), 0);
    EXPECT_TRUE(fs::exists(dir_ / "plots" / "curves.csv"));
    EXPECT_EQ(run("sweep " + cfg.string() + " --grid S=0 --output-root " + (dir_ / "runs").string()), 1);
}
