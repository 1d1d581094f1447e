#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>

#include "anclaf/io.hpp"

using namespace anclaf;

namespace {

struct CliResult {
    int code = -1;
    std::string output;  // stdout and stderr
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = std::string(ANCLAF_CLI_PATH) + " " + args + " 2>&1";
    CliResult r;
    FILE* p = ::popen(cmd.c_str(), "r");
    if (!p) return r;
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
    const int status = ::pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        root_ = fs::temp_directory_path() / ("anclaf_cli_" + std::to_string(::getpid()));
        fs::remove_all(root_);
        fs::create_directories(root_);
        write_file_atomic(root_ / "tiny.json",
                          R"({"stage1_epochs": 1, "epochs_per_stage": 1, "curriculum": [2, 4, 8], "batch_size": 8})");
        const CliResult g = run_cli("gen-data --subjects 5 --frames 20 --seed 3 --out " + (root_ / "data").string());
        ASSERT_EQ(g.code, 0) << g.output;
        const CliResult t = run_cli("train --config " + (root_ / "tiny.json").string() + " --data " +
                              (root_ / "data").string() + " --fold 2 --quiet --out " + (root_ / "out").string());
        ASSERT_EQ(t.code, 0) << t.output;
    }
    static void TearDownTestSuite() { fs::remove_all(root_); }

    static std::string p(const std::string& rel) { return (root_ / rel).string(); }
    static fs::path root_;
};

fs::path Cli::root_;

}  // namespace

TEST_F(Cli, GenDataIsIdempotent) {
    const CliResult again = run_cli("gen-data --subjects 5 --frames 20 --seed 3 --out " + p("data2"));
    ASSERT_EQ(again.code, 0) << again.output;
    for (const char* f : {"manifest.json", "subject_0000.bin", "subject_0004.bin"})
        EXPECT_EQ(read_file(p(std::string("data/") + f)), read_file(p(std::string("data2/") + f))) << f;
    EXPECT_EQ(run_cli("gen-data --subjects 3 --out " + p("bad")).code, 2);
}

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run_cli("").code, 2);
    EXPECT_EQ(run_cli("bogus").code, 2);
    EXPECT_EQ(run_cli("gen-data").code, 2);  // missing --out
    EXPECT_EQ(run_cli("train --data " + p("data")).code, 2);
    EXPECT_EQ(run_cli("train --stage sideways --data " + p("data") + " --out " + p("x")).code, 2);

    write_file_atomic(p("broken.json"), "{\n  \"seed\": 1,\n  \"learning_rate\": oops\n}\n");
    const CliResult bad = run_cli("train --config " + p("broken.json") + " --data " + p("data") + " --out " + p("x"));
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.output.find("line 3"), std::string::npos) << bad.output;

    write_file_atomic(p("unknown.json"), R"({"sead": 1})");
    const CliResult unk = run_cli("train --config " + p("unknown.json") + " --data " + p("data") + " --out " + p("x"));
    EXPECT_EQ(unk.code, 2);
    EXPECT_NE(unk.output.find("sead"), std::string::npos) << unk.output;
}

TEST_F(Cli, RuntimeErrorsExitOne) {
    EXPECT_EQ(run_cli("eval --checkpoint " + p("nope.ckpt") + " --data " + p("data") + " --report " + p("r.json")).code,
              1);
    write_file_atomic(p("junk.ckpt"), "not a checkpoint");
    EXPECT_EQ(run_cli("eval --checkpoint " + p("junk.ckpt") + " --data " + p("data") + " --report " + p("r.json")).code,
              1);
    EXPECT_EQ(run_cli("train --data " + p("missing") + " --out " + p("x")).code, 1);
}

TEST_F(Cli, TrainWritesCheckpointsAndReports) {
    for (const char* f : {"anclaf.ckpt", "s2.ckpt", "s4.ckpt", "s8.ckpt", "sa2.ckpt", "sa4.ckpt", "sa8.ckpt",
                          "features.bin"})
        EXPECT_TRUE(fs::exists(p(std::string("out/fold2/") + f))) << f;
    EXPECT_TRUE(fs::exists(p("out/reports.json")));
    EXPECT_FALSE(fs::exists(p("out/summary.json")));  // only one fold ran
}

TEST_F(Cli, EvalReport) {
    const CliResult r = run_cli("eval --checkpoint " + p("out/fold2/s4.ckpt") + " --data " + p("data") + " --report " +
                          p("s4.json"));
    ASSERT_EQ(r.code, 0) << r.output;
    const auto j = nlohmann::json::parse(read_file(p("s4.json")));
    EXPECT_EQ(j.at("model"), "ANCLaF-S-4");
    EXPECT_EQ(j.at("fold"), 2);
    for (const char* k : {"valence", "arousal", "average"})
        for (const char* m : {"rmse", "cor", "ccc", "icc"}) EXPECT_TRUE(j.at(k).contains(m)) << k << "." << m;
}

TEST_F(Cli, TraceHasOneRowPerFrameAndAttentionColumns) {
    const CliResult r = run_cli("trace --checkpoint " + p("out/fold2/sa8.ckpt") + " --data " + p("data") +
                          " --subject 2 --out " + p("trace.csv"));
    ASSERT_EQ(r.code, 0) << r.output;
    std::size_t cols = 0;
    const auto rows = decode_trace_csv(read_file(p("trace.csv")), &cols);
    EXPECT_EQ(cols, 8u);
    ASSERT_EQ(rows.size(), 20u);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        ASSERT_EQ(rows[i].attention.size(), std::min<std::size_t>(i, 8));
        if (i == 0) continue;
        double s = 0;
        for (double w : rows[i].attention) s += w;
        EXPECT_NEAR(s, 1.0, 1e-6);
    }
    EXPECT_EQ(run_cli("trace --checkpoint " + p("out/fold2/sa8.ckpt") + " --data " + p("data") +
                      " --subject 99 --out " + p("t2.csv"))
                  .code,
              2);
}
