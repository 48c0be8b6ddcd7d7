#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
};

Result run(const std::string& args) {
    const std::string cmd = std::string(QVIT_BINARY) + " " + args + " 2>&1";
    Result r;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) return r;
    char buf[512];
    while (std::fgets(buf, sizeof buf, pipe)) r.out += buf;
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        root = fs::temp_directory_path() / ("qvit_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root);
        fs::create_directories(root);
        std::ofstream(root / "gen.json") << R"({"image_size": 20, "quark_sigma": 2.0, "gluon_sigma": 5.0})";
        std::ofstream(root / "tiny.json") << R"({
  "model": {"image_size": 20, "crop_size": 20, "patch_size": 10, "hidden_size": 4,
            "num_heads": 2, "num_blocks": 1},
  "train": {"epochs": 2, "batch_size": 8, "log_wall_time": false},
  "seed": 5
})";
    }
    void TearDown() override { fs::remove_all(root); }

    std::string p(const std::string& name) const { return (root / name).string(); }
    void make_data(const std::string& name, int n = 40) {
        ASSERT_EQ(run("generate --out " + p(name) + " --n " + std::to_string(n) + " --seed 4 --params " + p("gen.json") +
                      " --ratios 2,1,1")
                      .code,
                  0);
    }

    fs::path root;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitWithTwo) {
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("generate --n 10 --seed 1").code, 2);
    EXPECT_EQ(run("generate --out " + p("d") + " --n 11 --seed 1").code, 2);
    EXPECT_EQ(run("generate --out " + p("d") + " --n 10 --seed 1 --ratios 1,2").code, 2);
    EXPECT_EQ(run("eval --checkpoint " + p("missing") + " --data " + p("missing")).code, 2);
    EXPECT_EQ(run("params --config " + p("nope.json")).code, 2);
    EXPECT_EQ(run("--help").code, 0);
}

TEST_F(Cli, GenerateIsDeterministicAndRefusesToOverwrite) {
    make_data("a");
    make_data("b");
    for (const char* f : {"images.f32", "labels.u8", "manifest.json"})
        EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
    auto again = run("generate --out " + p("a") + " --n 40 --seed 4 --params " + p("gen.json"));
    EXPECT_EQ(again.code, 2);
    EXPECT_NE(again.out.find("--force"), std::string::npos);
    EXPECT_EQ(run("generate --out " + p("a") + " --n 40 --seed 9 --params " + p("gen.json") + " --ratios 2,1,1 --force").code, 0);
    EXPECT_NE(slurp(root / "a" / "images.f32"), slurp(root / "b" / "images.f32"));
}

TEST_F(Cli, ParamsReportsBothModes) {
    auto r = run("params");
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("5178"), std::string::npos);
    EXPECT_NE(r.out.find("3914"), std::string::npos);
    EXPECT_NE(r.out.find("4170"), std::string::npos);
    auto ci = run("params --config " + std::string(QVIT_SOURCE_DIR) + "/configs/ci.json");
    EXPECT_EQ(ci.code, 0);
    EXPECT_EQ(ci.out.find("4170"), std::string::npos);
}

TEST_F(Cli, GradcheckPassesAndDetectsInjectedFault) {
    auto ok = run("gradcheck --seed 3");
    EXPECT_EQ(ok.code, 0) << ok.out;
    EXPECT_NE(ok.out.find("gradcheck passed"), std::string::npos);
    auto bad = run("gradcheck --seed 3 --inject-fault");
    EXPECT_EQ(bad.code, 1);
    EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
}

TEST_F(Cli, TrainThenEvalWritesArtifacts) {
    make_data("data");
    auto tr = run("train --data " + p("data") + " --config " + p("tiny.json") + " --out " + p("run"));
    ASSERT_EQ(tr.code, 0) << tr.out;
    for (const char* f : {"metrics.csv", "summary.json", "config.json", "best/meta.json", "best/params.bin",
                          "checkpoints/epoch_001/params.bin", "checkpoints/epoch_002/meta.json"})
        EXPECT_TRUE(fs::exists(root / "run" / f)) << f;
    const auto csv = slurp(root / "run" / "metrics.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,train_auc,val_auc,lr,wall_time_s");

    auto ev = run("eval --checkpoint " + p("run/best") + " --data " + p("data") + " --split val --roc " + p("roc.csv") +
                  " --svg " + p("roc.svg"));
    ASSERT_EQ(ev.code, 0) << ev.out;
    EXPECT_NE(ev.out.find("auc "), std::string::npos);
    EXPECT_EQ(slurp(root / "roc.csv").substr(0, 6), "# auc=");
    EXPECT_NE(slurp(root / "roc.svg").find("<polyline"), std::string::npos);
    EXPECT_EQ(run("eval --checkpoint " + p("run/best") + " --data " + p("data") + " --split holdout").code, 2);

    EXPECT_EQ(run("train --data " + p("data") + " --config " + p("tiny.json") + " --out " + p("run")).code, 2);
}

TEST_F(Cli, TrainRunsAreByteIdentical) {
    make_data("data");
    ASSERT_EQ(run("train --data " + p("data") + " --config " + p("tiny.json") + " --out " + p("r1")).code, 0);
    ASSERT_EQ(run("train --data " + p("data") + " --config " + p("tiny.json") + " --out " + p("r2")).code, 0);
    EXPECT_EQ(slurp(root / "r1" / "metrics.csv"), slurp(root / "r2" / "metrics.csv"));
    for (const char* f : {"checkpoints/epoch_001/params.bin", "checkpoints/epoch_002/params.bin", "best/params.bin",
                          "best/meta.json"})
        EXPECT_EQ(slurp(root / "r1" / f), slurp(root / "r2" / f)) << f;
}

TEST_F(Cli, ConfigAndDataErrorsExitWithTwo) {
    make_data("data");
    std::ofstream(root / "bad.json") << R"({"model": {"hidden": 4}})";
    EXPECT_EQ(run("train --data " + p("data") + " --config " + p("bad.json") + " --out " + p("x")).code, 2);
    // full-size model against 20×20 images
    EXPECT_EQ(run("train --data " + p("data") + " --out " + p("y")).code, 2);
    fs::resize_file(root / "data" / "images.f32", 100);
    EXPECT_EQ(run("train --data " + p("data") + " --config " + p("tiny.json") + " --out " + p("z")).code, 2);
}
