#include "corwa/cli.hpp"
#include "corwa/experiment.hpp"
#include "corwa/io.hpp"

#include <doctest.h>

#include <filesystem>
#include <sstream>
#include <vector>

using namespace corwa;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = 0;
    std::string out, err;
};

Run run(std::vector<std::string> args) {
    args.insert(args.begin(), "corwa");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Run r;
    r.code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

/// Small double-integrator experiment in a fresh directory.
struct Workspace {
    fs::path dir;
    std::string config;

    explicit Workspace(const std::string& name) {
        dir = fs::temp_directory_path() / ("corwa_cli_" + name);
        fs::remove_all(dir);
        fs::create_directories(dir);
        ExperimentConfig c = ExperimentConfig::load(std::string(CORWA_SOURCE_DIR) + "/configs/double_integrator.json");
        c.cegis.training.dataset_size = 200;
        c.cegis.training.pretrain_epochs = 0;
        c.cegis.training.epochs = 5;
        c.simulation.rollouts = 2;
        c.output_dir = (dir / "run").string();
        config = (dir / "config.json").string();
        write_atomic(config, c.to_json().dump(2));
    }
    ~Workspace() { fs::remove_all(dir); }
    fs::path run_dir() const { return dir / "run"; }
};

int count_lines(const std::string& path) {
    const std::string text = read_file(path);
    return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
}

}  // namespace

TEST_CASE("cli argument errors") {
    CHECK(run({}).code != 0);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"train", "--bogus"}).code != 0);
    const auto missing = run({"train"});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("--config") != std::string::npos);
    CHECK(run({"train", "--config", "/nonexistent.json"}).code == 2);
}

TEST_CASE("cli report on an empty directory lists what is missing") {
    Workspace ws("report");
    const auto r = run({"report", "--out", ws.dir.string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("certificate.json") != std::string::npos);
}

TEST_CASE("cli train, verify, simulate") {
    Workspace ws("pipeline");
    const auto train = run({"train", "--config", ws.config, "--budget", "2", "--seed", "5"});
    REQUIRE(train.code == 0);
    const fs::path d = ws.run_dir();
    CHECK(fs::exists(d / "certificate.json"));
    // header plus one row per epoch
    CHECK(count_lines((d / "training_curve.csv").string()) == 3);
    CHECK(ExperimentConfig::load((d / "config.json").string()).seed == 5);

    const auto verify = run({"verify", "--config", ws.config, "--budget", "1"});
    CHECK(verify.code == 1);
    CHECK(fs::exists(d / "verification.json"));

    const auto sim = run({"simulate", "--config", ws.config, "--budget", "4"});
    CHECK(sim.code == 0);
    CHECK(fs::exists(d / "trajectory_001.csv"));
    CHECK(!fs::exists(d / "trajectory_002.csv"));
    // header plus 5 states of 2 agents
    CHECK(count_lines((d / "trajectory_000.csv").string()) == 11);
    CHECK(count_lines((d / "metrics.csv").string()) == 3);

    const auto rep = run({"report", "--config", ws.config});
    CHECK(rep.code == 0);
    CHECK(fs::exists(d / "contour_V.svg"));
    CHECK(fs::exists(d / "metrics_table.csv"));

    CHECK(run({"transfer", "--config", ws.config}).code == 2);
}

TEST_CASE("cli simulate without a certificate needs --nominal") {
    Workspace ws("nominal");
    CHECK(run({"simulate", "--config", ws.config, "--budget", "3"}).code == 2);
    CHECK(run({"simulate", "--config", ws.config, "--budget", "3", "--nominal"}).code == 0);
}
