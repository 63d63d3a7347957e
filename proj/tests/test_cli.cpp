#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "alignkt/numcore/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run cli(const std::string& args) {
    const std::string cmd = std::string(ALIGNKT_CLI_PATH) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, p)) r.output += buf;
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) { return alignkt::nc::detail::read_file(p.string()); }

class CliTest : public ::testing::Test {
protected:
    static fs::path dir;

    static void SetUpTestSuite() {
        // ctest may run these cases as concurrent processes
        dir = fs::temp_directory_path() / ("alignkt_cli_test_" + std::to_string(getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
        ASSERT_EQ(cli("synth --learners 20 --seed 3 --concepts 4 --exercises-per-concept 2 --min-len 6 --max-len 30 --out " +
                      (dir / "synth.csv").string())
                      .code,
                  0);
        ASSERT_EQ(cli("preprocess --input " + (dir / "synth.csv").string() + " --out " + (dir / "synth.cache").string() +
                      " --max-len 16")
                      .code,
                  0);
        std::ofstream(dir / "small.cfg") << "# tiny model\nd=8\nheads=2\nepochs=2\nbatch_size=4\nL=5\n";
        const auto r = cli("train --cache " + (dir / "synth.cache").string() + " --config " + (dir / "small.cfg").string() +
                           " --out " + (dir / "run").string());
        ASSERT_EQ(r.code, 0) << r.output;
    }

    static std::string cache() { return (dir / "synth.cache").string(); }
    static std::string ckpt() { return (dir / "run" / "model.ckpt").string(); }
};

fs::path CliTest::dir;

std::vector<std::vector<double>> read_matrix(const fs::path& p, std::string* header) {
    std::ifstream in(p);
    std::string line;
    std::getline(in, *header);
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        std::vector<double> row;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
        rows.push_back(row);
    }
    return rows;
}

}  // namespace

TEST_F(CliTest, SynthIsDeterministicAndRecordsRule) {
    ASSERT_EQ(cli("synth --learners 5 --seed 9 --rule mastered-after-k --k 3 --out " + (dir / "a.csv").string()).code, 0);
    ASSERT_EQ(cli("synth --learners 5 --seed 9 --rule mastered-after-k --k 3 --out " + (dir / "b.csv").string()).code, 0);
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
    EXPECT_NE(slurp(dir / "a.csv.json").find("\"mastered-after-k\""), std::string::npos);
    EXPECT_NE(cli("synth --learners 0 --out " + (dir / "c.csv").string()).code, 0);
}

TEST_F(CliTest, PreprocessSummaryAndDeterminism) {
    const auto out = (dir / "again.cache").string();
    const auto r = cli("preprocess --input " + (dir / "synth.csv").string() + " --out " + out + " --max-len 16");
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.output.find("N_c            4"), std::string::npos) << r.output;
    EXPECT_NE(r.output.find("avg length"), std::string::npos);
    EXPECT_EQ(slurp(out), slurp(cache()));
    EXPECT_EQ(slurp(out + ".json"), slurp(cache() + ".json"));
    EXPECT_NE(slurp(out + ".json").find("\"N_c\": 4"), std::string::npos);
}

TEST_F(CliTest, ParseFailuresExitWithParseCode) {
    std::ofstream(dir / "empty.csv").close();
    auto r = cli("preprocess --input " + (dir / "empty.csv").string() + " --out " + (dir / "x.cache").string());
    EXPECT_EQ(r.code, 3);
    std::ofstream(dir / "bad.csv") << "learner_id,order,exercise_id,concept_id,response\na,1,1,1,1\na,two,1,1,1\n";
    r = cli("preprocess --input " + (dir / "bad.csv").string() + " --out " + (dir / "x.cache").string());
    EXPECT_EQ(r.code, 3);
    EXPECT_NE(r.output.find("line 3"), std::string::npos) << r.output;
}

TEST_F(CliTest, UsageErrorsExitWithUsageCode) {
    EXPECT_EQ(cli("").code, 2);
    EXPECT_EQ(cli("frobnicate").code, 2);
    EXPECT_EQ(cli("eval --cache " + cache()).code, 2);
}

TEST_F(CliTest, UnknownConfigKeyListsValidKeys) {
    std::ofstream(dir / "bad.cfg") << "d=8\nwarmup=3\n";
    const auto r = cli("train --cache " + cache() + " --config " + (dir / "bad.cfg").string() + " --out " +
                       (dir / "never").string());
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.output.find("warmup"), std::string::npos);
    EXPECT_NE(r.output.find("lambda"), std::string::npos);
    EXPECT_NE(r.output.find("batch_size"), std::string::npos);
    EXPECT_EQ(cli("train --cache " + cache() + " --set heads=3 --out " + (dir / "never").string()).code, 4);
}

TEST_F(CliTest, TrainWritesArtifacts) {
    const auto run = dir / "run";
    EXPECT_TRUE(fs::exists(run / "model.ckpt"));
    const auto metrics = slurp(run / "metrics.csv");
    EXPECT_EQ(metrics.rfind("epoch,bce,cl_c,cl_s,total,auc,acc\n", 0), 0u);
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 3);
    const auto manifest = slurp(run / "run_manifest.json");
    for (const char* key : {"\"config\"", "\"sha256\"", "\"seed\"", "\"artifacts\"", "\"tau\""})
        EXPECT_NE(manifest.find(key), std::string::npos) << key;
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
    const auto r = cli("train --cache " + cache() + " --config " + (dir / "small.cfg").string() +
                       " --epochs 1 --set d=4 --out " + (dir / "override").string());
    ASSERT_EQ(r.code, 0) << r.output;
    const auto manifest = slurp(dir / "override" / "run_manifest.json");
    EXPECT_NE(manifest.find("\"epochs\": \"1\""), std::string::npos);
    EXPECT_NE(manifest.find("\"d\": \"4\""), std::string::npos);
}

TEST_F(CliTest, ManifestReproducesRun) {
    const auto r = cli("train --from-manifest " + (dir / "run" / "run_manifest.json").string() + " --out " +
                       (dir / "rerun").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_EQ(slurp(dir / "rerun" / "model.ckpt"), slurp(dir / "run" / "model.ckpt"));
    EXPECT_EQ(slurp(dir / "rerun" / "metrics.csv"), slurp(dir / "run" / "metrics.csv"));
}

TEST_F(CliTest, EvalPrintsMetrics) {
    const auto r = cli("eval --checkpoint " + ckpt() + " --cache " + cache());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("auc"), std::string::npos);
    EXPECT_NE(r.output.find("acc"), std::string::npos);
    EXPECT_EQ(r.output, cli("eval --checkpoint " + ckpt() + " --cache " + cache()).output);
}

TEST_F(CliTest, ExportStateBothModes) {
    std::string header;
    ASSERT_EQ(cli("export-state --checkpoint " + ckpt() + " --cache " + cache() +
                  " --learner L0000 --mode attention --out " + (dir / "att.csv").string())
                  .code,
              0);
    const auto att = read_matrix(dir / "att.csv", &header);
    EXPECT_EQ(header, "0,1,2,3");
    ASSERT_FALSE(att.empty());
    for (const auto& row : att) {
        ASSERT_EQ(row.size(), 4u);
        double s = 0.0;
        for (double v : row) s += v;
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
    ASSERT_EQ(cli("export-state --checkpoint " + ckpt() + " --cache " + cache() +
                  " --learner L0000 --mode readout --out " + (dir / "ro.csv").string())
                  .code,
              0);
    const auto ro = read_matrix(dir / "ro.csv", &header);
    EXPECT_EQ(ro.size(), att.size());
    for (const auto& row : ro)
        for (double v : row) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
    EXPECT_EQ(cli("export-state --checkpoint " + ckpt() + " --cache " + cache() + " --learner nobody --out " +
                  (dir / "n.csv").string())
                  .code,
              5);
    EXPECT_NE(cli("export-state --checkpoint " + ckpt() + " --cache " + cache() + " --learner L0000 --mode both --out " +
                  (dir / "n.csv").string())
                  .code,
              0);
}

TEST_F(CliTest, AblatePrintsTableLayout) {
    const auto r = cli("ablate --cache " + cache() + " --config " + (dir / "small.cfg").string() +
                       " --epochs 1 --variant=-T-M-CL --variant=-CL --label SYN --out " + (dir / "abl").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("Dataset"), std::string::npos);
    EXPECT_NE(r.output.find("-T-M-CL"), std::string::npos);
    EXPECT_NE(r.output.find("AlignKT"), std::string::npos);
    EXPECT_NE(r.output.find("SYN"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "abl" / "ablation.txt"));
    EXPECT_EQ(cli("ablate --cache " + cache() + " --variant=-M").code, 5);
}

TEST_F(CliTest, SingleClassDataHasUndefinedAuc) {
    const auto csv = (dir / "always.csv").string(), c = (dir / "always.cache").string();
    ASSERT_EQ(cli("synth --learners 10 --rule always-correct --min-len 4 --max-len 8 --out " + csv).code, 0);
    ASSERT_EQ(cli("preprocess --input " + csv + " --out " + c).code, 0);
    const auto r = cli("train --cache " + c + " --config " + (dir / "small.cfg").string() + " --epochs 1 --out " +
                       (dir / "always").string());
    EXPECT_EQ(r.code, 5);
    EXPECT_NE(r.output.find("auc: undefined"), std::string::npos) << r.output;
}
