#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite()
    {
        dir_ = fs::temp_directory_path() / "graphdps_cli_test";
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        std::ofstream(dir_ / "tiny.config") << "# smoke configuration\n"
                                               "seed = 5\n"
                                               "coarse_vertices = 60\n"
                                               "fine_vertices = 200\n"
                                               "electrodes = 8\n"
                                               "train_count = 4\n"
                                               "test_count = 2\n"
                                               "steps = 8\n"
                                               "hidden_dim = 4\n"
                                               "depth = 2\n"
                                               "time_embed_dim = 4\n"
                                               "knn_k = 4\n"
                                               "epochs = 2\n"
                                               "batch_size = 2\n"
                                               "eta = 0.05\n"
                                               "lambda = 0.001\n"
                                               "bench_count = 2\n"
                                               "bench_samplers = ddim,ddpm\n"
                                               "bench_regularizers = none,tik,gtik,tv\n"
                                               "output = "
                                            << (dir_ / "run").string() << "\n";
    }

    static Outcome run(const std::string& args)
    {
        const fs::path out = dir_ / "stdout.txt";
        const fs::path err = dir_ / "stderr.txt";
        const std::string cmd = std::string(GRAPHDPS_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    static std::string config() { return "-c " + (dir_ / "tiny.config").string(); }

    static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, ValidateExitsZero)
{
    const Outcome r = run("validate");
    EXPECT_EQ(r.code, 0) << r.out << r.err;
    EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
    EXPECT_NE(r.out.find("PASS reduction law"), std::string::npos) << r.out;
}

TEST_F(Cli, FullPipelineContracts)
{
    ASSERT_EQ(run("mesh " + config()).code, 0);
    ASSERT_EQ(run("gen " + config()).code, 0);
    ASSERT_EQ(run("train " + config()).code, 0);
    ASSERT_EQ(run("sample " + config() + " --sample_count 2").code, 0);
    const fs::path out = dir_ / "run";

    // Guidance switched off reproduces the unconditional sample of the same seed.
    const Outcome rec = run("reconstruct " + config() + " --measurement " + (out / "test" / "sample_0.meas").string() +
                        " --eta 0 --lambda 0 --output " + (dir_ / "plain").string() + " --checkpoint " +
                        (out / "checkpoint").string());
    ASSERT_EQ(rec.code, 0) << rec.err;
    auto body = [](const std::string& text) { return text.substr(text.find('\n') + 1); };
    EXPECT_EQ(body(slurp(dir_ / "plain" / "recon" / "x0.field")), body(slurp(out / "samples" / "sample_0000.field")));

    const Outcome guided = run("reconstruct " + config() + " --measurement " + (out / "test" / "sample_1.meas").string() +
                           " --truth " + (out / "test" / "sample_1.field").string());
    ASSERT_EQ(guided.code, 0) << guided.err;
    EXPECT_NE(slurp(out / "recon" / "metrics.csv").find("sample_1,"), std::string::npos);

    const Outcome bench = run("bench " + config() + " --threads 2");
    ASSERT_EQ(bench.code, 0) << bench.err;
    std::istringstream csv(slurp(out / "bench.csv"));
    std::string line;
    int rows = 0;
    while (std::getline(csv, line)) {
        rows += (!line.empty() && line[0] != '#' && line.rfind("sample_id", 0) != 0) ? 1 : 0;
    }
    EXPECT_EQ(rows, 2 * 2 * 4);  // samples x samplers x regularizers

    for (const fs::path& p : {out / "mesh" / "coarse.mesh", out / "mesh" / "fine.mesh", out / "train" / "manifest",
                              out / "train" / "sample_0.field", out / "test" / "sample_1.meas",
                              out / "checkpoint" / "config", out / "checkpoint" / "params.index",
                              out / "checkpoint" / "train_log.csv", out / "samples" / "sample_0001.field",
                              out / "recon" / "x0.field", out / "recon" / "run_log.csv", out / "bench.csv",
                              out / "bench.config"}) {
        EXPECT_EQ(slurp(p).rfind("# config_hash=", 0), 0u) << p;
    }
}

TEST_F(Cli, RerunOverwritesIdentically)
{
    const fs::path a = dir_ / "idem";
    const std::string args = "gen " + config() + " --output " + a.string();
    ASSERT_EQ(run(args).code, 0);
    const std::string first = slurp(a / "test" / "sample_0.meas") + slurp(a / "train" / "sample_3.field") +
                              slurp(a / "mesh" / "fine.mesh") + slurp(a / "gen.config");
    ASSERT_EQ(run(args).code, 0);
    EXPECT_EQ(first, slurp(a / "test" / "sample_0.meas") + slurp(a / "train" / "sample_3.field") +
                         slurp(a / "mesh" / "fine.mesh") + slurp(a / "gen.config"));
}

TEST_F(Cli, FailuresPrintMachineReadableErrorLine)
{
    std::ofstream(dir_ / "bad.config") << "seed = 1\n\nhidden_dimm = 3\n";
    const Outcome unknown = run("mesh -c " + (dir_ / "bad.config").string());
    EXPECT_NE(unknown.code, 0);
    EXPECT_EQ(unknown.err.rfind("ERROR config ", 0), 0u) << unknown.err;
    EXPECT_NE(unknown.err.find("bad.config:3"), std::string::npos) << unknown.err;
    EXPECT_NE(unknown.err.find("hidden_dimm"), std::string::npos) << unknown.err;

    const Outcome flag = run("mesh --no_such_key 3");
    EXPECT_NE(flag.code, 0);
    EXPECT_EQ(flag.err.rfind("ERROR usage ", 0), 0u) << flag.err;

    const Outcome value = run("mesh " + config() + " --electrodes many");
    EXPECT_NE(value.code, 0);
    EXPECT_EQ(value.err.rfind("ERROR config ", 0), 0u) << value.err;

    const Outcome missing = run("sample " + config() + " --checkpoint " + (dir_ / "nowhere").string());
    EXPECT_NE(missing.code, 0);
    EXPECT_EQ(missing.err.rfind("ERROR ", 0), 0u) << missing.err;
}
