#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "catch_amalgamated.hpp"
#include "gramreg/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("gramreg_" + tag + "_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = gramreg::run_cli(std::move(args), out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
    return out;
}

void make_data(const fs::path& dir, const std::string& views = "2") {
    const auto r = run({"gen-data", "--seed", "0", "--views", views, "--size", "16", "--classes",
                        "2", "--shapes-per-class", "10", "--out", dir.string()});
    REQUIRE(r.code == 0);
}

std::size_t count_lines(const std::string& s) {
    std::size_t n = 0;
    for (char c : s)
        if (c == '\n') ++n;
    return n;
}

}  // namespace

TEST_CASE("usage problems exit with code two") {
    CHECK(run({}).code == 2);
    CHECK(run({"no-such-command"}).code == 2);
    CHECK(run({"gen-data", "--seed", "1"}).code == 2);  // --out missing
    CHECK(run({"gen-data", "--out", "x", "--bogus"}).code == 2);
    CHECK(run({"eval", "--checkpoint", "a", "--data", "b", "--split", "weird"}).code == 2);
    CHECK(run({"gradcheck", "--layout", "weird"}).code == 2);
    CHECK(run({"gradcheck", "--trials", "0"}).code == 2);
    CHECK(run({"train", "--data", "x", "--out", "y", "--arch", "alexnet"}).code == 2);
    CHECK(run({"sweep", "--param", "density", "--values", "1", "--out", "z"}).code == 2);
    CHECK(run({"sweep", "--param", "lambda1", "--values", "", "--data", "d", "--out", "z"}).code ==
          2);
    CHECK(run({"sweep", "--param", "lambda1", "--values", "1e-3", "--out", "z"}).code == 2);

    const auto help = run({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("Usage") != std::string::npos);
    CHECK(help.out.find("gen-data") != std::string::npos);
}

TEST_CASE("dataset generation is byte-deterministic") {
    TempDir tmp("cli_gen");
    make_data(tmp.path / "a");
    make_data(tmp.path / "b");
    const auto a = tree_bytes(tmp.path / "a");
    const auto b = tree_bytes(tmp.path / "b");
    REQUIRE(a.size() == b.size());
    CHECK(a.size() > 20);  // images plus manifest plus meta
    CHECK(a == b);
}

TEST_CASE("repeated training runs write identical artifacts") {
    TempDir tmp("cli_train");
    make_data(tmp.path / "data");
    const std::vector<std::string> base = {"train",          "--arch", "mvcnn",
                                           "--data",         (tmp.path / "data").string(),
                                           "--epochs",       "2"};
    auto with_out = [&](const std::string& out) {
        auto args = base;
        args.push_back("--out");
        args.push_back((tmp.path / out).string());
        return args;
    };
    const auto r1 = run(with_out("run1"));
    REQUIRE(r1.code == 0);
    CHECK(r1.out.find("lambda1 = 0.001") != std::string::npos);
    CHECK(r1.out.find("final epoch 1") != std::string::npos);

    const auto r2 = run(with_out("run2"));
    REQUIRE(r2.code == 0);
    CHECK(slurp(tmp.path / "run1" / "loss.csv") == slurp(tmp.path / "run2" / "loss.csv"));
    CHECK(slurp(tmp.path / "run1" / "model.ckpt") == slurp(tmp.path / "run2" / "model.ckpt"));
    CHECK(slurp(tmp.path / "run1" / "train_config.cfg") ==
          slurp(tmp.path / "run2" / "train_config.cfg"));

    const std::string csv = slurp(tmp.path / "run1" / "loss.csv");
    CHECK(csv.rfind("epoch,step,lr,softmax,gram_cross,gram_l2,total\n", 0) == 0);
    CHECK(count_lines(csv) == 3);
}

TEST_CASE("evaluation is repeatable and writes the metric files") {
    TempDir tmp("cli_eval");
    make_data(tmp.path / "data");
    REQUIRE(run({"train", "--arch", "view-cnn", "--data", (tmp.path / "data").string(), "--out",
                 (tmp.path / "run").string(), "--epochs", "2"})
                .code == 0);

    const std::vector<std::string> args = {"eval",   "--checkpoint",
                                           (tmp.path / "run" / "model.ckpt").string(), "--data",
                                           (tmp.path / "data").string()};
    const auto r1 = run(args);
    REQUIRE(r1.code == 0);
    CHECK(r1.out.rfind("MAP=", 0) == 0);
    CHECK(r1.out.find(" AUC=") != std::string::npos);
    CHECK(fs::exists(tmp.path / "run" / "per_query.csv"));
    CHECK(fs::exists(tmp.path / "run" / "summary.csv"));
    CHECK(fs::exists(tmp.path / "run" / "pr_curve.csv"));
    CHECK(fs::exists(tmp.path / "run" / "eval_config.cfg"));

    const std::string summary = slurp(tmp.path / "run" / "summary.csv");
    const auto r2 = run(args);
    CHECK(r2.out == r1.out);
    CHECK(slurp(tmp.path / "run" / "summary.csv") == summary);

    const auto diag = run({"eval", "--checkpoint", (tmp.path / "run" / "model.ckpt").string(),
                           "--data", (tmp.path / "data").string(), "--split", "train", "--out",
                           (tmp.path / "diag").string()});
    CHECK(diag.code == 0);
    CHECK(fs::exists(tmp.path / "diag" / "summary.csv"));
}

TEST_CASE("artifact problems exit with code four") {
    TempDir tmp("cli_mismatch");
    make_data(tmp.path / "data");
    make_data(tmp.path / "data4", "4");
    REQUIRE(run({"train", "--arch", "mvcnn", "--data", (tmp.path / "data").string(), "--out",
                 (tmp.path / "run").string(), "--epochs", "1"})
                .code == 0);

    const auto wrong_views = run({"eval", "--checkpoint",
                                  (tmp.path / "run" / "model.ckpt").string(), "--data",
                                  (tmp.path / "data4").string()});
    CHECK(wrong_views.code == 4);
    CHECK(wrong_views.err.find("views per shape") != std::string::npos);

    CHECK(run({"eval", "--checkpoint", (tmp.path / "missing.ckpt").string(), "--data",
               (tmp.path / "data").string()})
              .code == 4);
    CHECK(run({"eval", "--checkpoint", (tmp.path / "run" / "loss.csv").string(), "--data",
               (tmp.path / "data").string()})
              .code == 4);
    CHECK(run({"train", "--data", (tmp.path / "nowhere").string(), "--out",
               (tmp.path / "x").string()})
              .code == 4);
}

TEST_CASE("divergent training exits with code three") {
    TempDir tmp("cli_diverge");
    make_data(tmp.path / "data");
    const auto r = run({"train", "--arch", "view-cnn", "--data", (tmp.path / "data").string(),
                        "--out", (tmp.path / "run").string(), "--epochs", "3", "--lr", "1e12"});
    CHECK(r.code == 3);
    CHECK(r.err.find("diverged at epoch") != std::string::npos);
}

TEST_CASE("gradient checks pass at their tolerances and report the worst error") {
    const auto fc = run({"gradcheck", "--layout", "fc", "--trials", "2"});
    CHECK(fc.code == 0);
    CHECK(fc.out.find("worst relative error") != std::string::npos);
    CHECK(run({"gradcheck", "--layout", "network", "--trials", "1"}).code == 0);

    const auto forced = run({"gradcheck", "--layout", "fc", "--trials", "1", "--tol", "1e-12"});
    CHECK(forced.code == 5);
    CHECK(forced.err.find("exceeds") != std::string::npos);
}

TEST_CASE("config files fill in defaults but flags win") {
    TempDir tmp("cli_config");
    make_data(tmp.path / "data");
    {
        std::ofstream cfg(tmp.path / "base.cfg");
        cfg << "# shared run defaults\nepochs = 3\nlambda1 = 0.005\n";
    }
    const auto r = run({"train", "--arch", "mvcnn", "--data", (tmp.path / "data").string(),
                        "--out", (tmp.path / "run").string(), "--config",
                        (tmp.path / "base.cfg").string(), "--lambda1", "0.002"});
    REQUIRE(r.code == 0);
    const std::string resolved = slurp(tmp.path / "run" / "train_config.cfg");
    CHECK(resolved.find("epochs = 3") != std::string::npos);
    CHECK(resolved.find("lambda1 = 0.002") != std::string::npos);
    CHECK(count_lines(slurp(tmp.path / "run" / "loss.csv")) == 4);

    {
        std::ofstream cfg(tmp.path / "bad.cfg");
        cfg << "volume = 11\n";
    }
    CHECK(run({"train", "--data", (tmp.path / "data").string(), "--out",
               (tmp.path / "x").string(), "--config", (tmp.path / "bad.cfg").string()})
              .code == 2);
}

TEST_CASE("a sweep writes one row per run plus an aggregate per value") {
    TempDir tmp("cli_sweep");
    make_data(tmp.path / "data");
    const std::vector<std::string> args = {
        "sweep",  "--param",  "lambda1",
        "--values", "0,1e-3",  "--seeds", "0,1",
        "--arch", "mvcnn",    "--data",  (tmp.path / "data").string(),
        "--out",  (tmp.path / "sw").string(), "--epochs", "1"};
    const auto r = run(args);
    REQUIRE(r.code == 0);

    const std::string csv = slurp(tmp.path / "sw" / "results.csv");
    CHECK(r.out == csv);
    CHECK(csv.rfind("kind,param,value,seed,map,auc,map_std,auc_std,status\n", 0) == 0);
    CHECK(count_lines(csv) == 1 + 4 + 2);
    CHECK(csv.find("run,lambda1,0,0,") != std::string::npos);
    CHECK(csv.find("run,lambda1,1e-3,1,") != std::string::npos);
    CHECK(csv.find("aggregate,lambda1,0,,") != std::string::npos);
    CHECK(csv.find("n=2") != std::string::npos);
    CHECK(csv.find("error:") == std::string::npos);
    CHECK(fs::exists(tmp.path / "sw" / "lambda1_1e-3" / "seed_1" / "model.ckpt"));
    CHECK(fs::exists(tmp.path / "sw" / "sweep_config.cfg"));

    const auto again = run({
        "sweep",  "--param",  "lambda1",
        "--values", "0,1e-3",  "--seeds", "0,1",
        "--arch", "mvcnn",    "--data",  (tmp.path / "data").string(),
        "--out",  (tmp.path / "sw_b").string(), "--epochs", "1"});
    REQUIRE(again.code == 0);
    CHECK(slurp(tmp.path / "sw_b" / "results.csv") == csv);
}

TEST_CASE("a views sweep regenerates the dataset per value") {
    TempDir tmp("cli_sweep_views");
    const auto r = run({"sweep", "--param", "views", "--values", "1,2", "--seeds", "0", "--arch",
                        "view-cnn", "--out", (tmp.path / "sw").string(), "--epochs", "1",
                        "--size", "16", "--classes", "2", "--shapes-per-class", "10"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(tmp.path / "sw" / "views_1" / "seed_0" / "data" / "manifest.csv"));
    CHECK(fs::exists(tmp.path / "sw" / "views_2" / "seed_0" / "data" / "manifest.csv"));
    const std::string csv = slurp(tmp.path / "sw" / "results.csv");
    CHECK(count_lines(csv) == 1 + 2 + 2);
    CHECK(csv.find("error:") == std::string::npos);
}

TEST_CASE("sweep records failing runs and keeps going") {
    TempDir tmp("cli_sweep_fail");
    make_data(tmp.path / "data");
    const auto r = run({"sweep", "--param", "lr", "--values", "1e12,1e-2", "--seeds", "0",
                        "--arch", "view-cnn", "--data", (tmp.path / "data").string(), "--out",
                        (tmp.path / "sw").string(), "--epochs", "2"});
    REQUIRE(r.code == 0);
    const std::string csv = slurp(tmp.path / "sw" / "results.csv");
    CHECK(csv.find("run,lr,1e12,0,,,,,error: loss diverged") != std::string::npos);
    CHECK(csv.find("aggregate,lr,1e12,,,,,,n=0") != std::string::npos);
    CHECK(csv.find("run,lr,1e-2,0,") != std::string::npos);
    CHECK(csv.find(",ok") != std::string::npos);
    CHECK(csv.find("n=1") != std::string::npos);
}
