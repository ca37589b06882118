#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "jetlab/artifacts.hpp"

// Exercises the installed binary end to end: exit codes, file contracts,
// refusal semantics. JETLAB_BIN is injected by the build.

namespace {

int run_cli(const std::string& args) {
    const std::string cmd = std::string(JETLAB_BIN) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

long count_data_lines(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::string line;
    long n = 0;
    while (std::getline(in, line))
        if (!line.empty() && line[0] != '#') ++n;
    return n;
}

std::string micro_flags(const std::filesystem::path& out) {
    std::ostringstream os;
    os << "--out " << out.string() << " --tag cli"
       << " --set dataset.n_per_class=100 --set dataset.seed=3"
       << " --set model.d_model=4 --set model.n_layers=1 --set model.n_heads=1"
       << " --set model.ff_dim=4 --set model.head_dims=[2]"
       << " --set train.epochs=1 --set train.batch_size=32 --set train.seeds=[1]";
    return os.str();
}

} // namespace

TEST_CASE("gen-data writes three split files with the right line counts") {
    testutil::TempDir tmp("cligen");
    REQUIRE(run_cli("gen-data " + micro_flags(tmp.path)) == 0);
    const auto data = tmp.path / "cli" / "data";
    REQUIRE(count_data_lines(data / "train.jsonl") == 120);
    REQUIRE(count_data_lines(data / "val.jsonl") == 40);
    REQUIRE(count_data_lines(data / "test.jsonl") == 40);

    // determinism: regenerate elsewhere, byte-identical files
    testutil::TempDir tmp2("cligen2");
    REQUIRE(run_cli("gen-data " + micro_flags(tmp2.path)) == 0);
    REQUIRE(jetlab::read_text_file(data / "train.jsonl") ==
            jetlab::read_text_file(tmp2.path / "cli" / "data" / "train.jsonl"));

    // refusal without --force, success with it
    REQUIRE(run_cli("gen-data " + micro_flags(tmp.path)) == 2);
    REQUIRE(run_cli("gen-data --force " + micro_flags(tmp.path)) == 0);
}

TEST_CASE("train records runs and refuses accidental overwrites") {
    testutil::TempDir tmp("clitrain");
    REQUIRE(run_cli("gen-data " + micro_flags(tmp.path)) == 0);
    REQUIRE(run_cli("train --variant unconstrained --jobs 1 " + micro_flags(tmp.path)) == 0);
    const auto rec = tmp.path / "cli" / "unconstrained" / "1" / "run_record.json";
    REQUIRE(std::filesystem::exists(rec));
    const auto j = jetlab::read_json_file(rec);
    REQUIRE(j["config"]["loss"]["lambda"].get<double>() == 0.0);

    REQUIRE(run_cli("train --variant unconstrained --jobs 1 " + micro_flags(tmp.path)) == 2);
    REQUIRE(run_cli("train --variant unconstrained --jobs 1 --force " + micro_flags(tmp.path)) == 0);
}

TEST_CASE("missing dataset yields an actionable data error") {
    testutil::TempDir tmp("clinodata");
    const int code = run_cli("train --variant unconstrained " + micro_flags(tmp.path));
    REQUIRE(code == 3);
}

TEST_CASE("analysis commands demand trained champions first") {
    testutil::TempDir tmp("clinochamp");
    REQUIRE(run_cli("gen-data " + micro_flags(tmp.path)) == 0);
    REQUIRE(run_cli("hessian " + micro_flags(tmp.path)) == 2);
    REQUIRE(run_cli("robustness " + micro_flags(tmp.path)) == 2);
}

TEST_CASE("report exit codes distinguish empty, partial and complete") {
    testutil::TempDir tmp("clireport");
    std::filesystem::create_directories(tmp.path / "void");
    REQUIRE(run_cli("report --dir " + (tmp.path / "void").string()) == 3);

    REQUIRE(run_cli("gen-data " + micro_flags(tmp.path)) == 0);
    REQUIRE(run_cli("train --variant both --jobs 1 " + micro_flags(tmp.path)) == 0);
    REQUIRE(run_cli("report --dir " + (tmp.path / "cli").string()) == 5); // partial
}

TEST_CASE("param-count and bad flags") {
    REQUIRE(run_cli("param-count") == 0);
    REQUIRE(run_cli("train --variant nonsense") == 2);
    REQUIRE(run_cli("gen-data --set train.epochs=0 --out /tmp/never --tag x") == 2);
}
