#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include "helpers.hpp"

// Black-box tests of the command-line binary. The harness exports the built
// binary's location via C2KD_CLI_PATH.

namespace fs = std::filesystem;
using Catch::Matchers::ContainsSubstring;
using nlohmann::json;

namespace {

std::string cli_path() {
    const char* p = std::getenv("C2KD_CLI_PATH");
    REQUIRE(p != nullptr);
    return p;
}

struct CliResult {
    int exit_code = -1;
    std::string output;  // stdout and stderr interleaved
};

CliResult run_cli(const std::string& args) {
    const std::string cmd = "'" + cli_path() + "' " + args + " 2>&1";
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    CliResult r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof(buf), pipe)) r.output.append(buf, n);
    const int status = ::pclose(pipe);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

// Trainable two-language experiment config, small enough for sub-second runs.
json tiny_config() {
    return json::parse(R"({
        "version": 1,
        "name": "cli",
        "data": {
            "synthetic": {
                "n_records": 20,
                "concept_dim": 4,
                "languages": [{"tag": "en", "sigma": 0.1}, {"tag": "xx", "sigma": 0.5}],
                "text_dim": 6,
                "video_dim": 6,
                "seed": 3
            },
            "split": {"train": 16, "test": 4, "seed": 7}
        },
        "model": {"embed_dim": 8},
        "teachers": {"count": 1},
        "train": {"epochs": 1, "languages": ["en", "xx"], "batch_size": 8, "alpha": 0.5, "lr": 0.001},
        "eval": {"ks": [1]}
    })");
}

void write_json(const fs::path& path, const json& j) {
    c2kd::detail::write_file_bytes(path.string(), j.dump(2) + "\n");
}

}  // namespace

TEST_CASE("cli help lists every subcommand") {
    const CliResult r = run_cli("--help");
    CHECK(r.exit_code == 0);
    for (const char* sub :
         {"gen-data", "train-teachers", "train-student", "evaluate", "sweep", "grad-check", "verify"})
        CHECK_THAT(r.output, ContainsSubstring(sub));
}

TEST_CASE("cli requires a subcommand") {
    const CliResult r = run_cli("");
    CHECK(r.exit_code != 0);
}

TEST_CASE("cli verify reports passing invariant checks") {
    const CliResult r = run_cli("verify");
    INFO(r.output);
    CHECK(r.exit_code == 0);
    CHECK_THAT(r.output, ContainsSubstring("PASS"));
    CHECK_THAT(r.output, !ContainsSubstring("FAIL"));
}

TEST_CASE("cli grad-check honors its tolerance flag") {
    const CliResult ok = run_cli("grad-check");
    INFO(ok.output);
    CHECK(ok.exit_code == 0);
    CHECK_THAT(ok.output, ContainsSubstring("PASS"));
    CHECK_THAT(ok.output, ContainsSubstring("max_rel_error"));

    const CliResult strict = run_cli("grad-check --tolerance 1e-12");
    CHECK(strict.exit_code != 0);
    CHECK_THAT(strict.output, ContainsSubstring("FAIL"));
}

TEST_CASE("cli pipeline stages build on each other") {
    testutil::TempDir dir("cli");
    const fs::path cfg = dir.path / "exp.json";
    const fs::path out = dir.path / "out";
    write_json(cfg, tiny_config());
    const std::string base = " --config '" + cfg.string() + "' --out '" + out.string() + "'";

    const CliResult gen = run_cli("gen-data" + base);
    INFO(gen.output);
    REQUIRE(gen.exit_code == 0);
    CHECK(fs::exists(out / "corpus.c2kc"));
    CHECK_THAT(gen.output, ContainsSubstring("complete, 2 artifacts"));

    const CliResult teach = run_cli("train-teachers" + base);
    REQUIRE(teach.exit_code == 0);
    CHECK(fs::exists(out / "teachers/teacher_0.c2km"));

    const CliResult stud = run_cli("train-student" + base);
    REQUIRE(stud.exit_code == 0);
    CHECK(fs::exists(out / "students/seed_1/student.c2km"));

    const CliResult eval = run_cli("evaluate" + base);
    INFO(eval.output);
    REQUIRE(eval.exit_code == 0);
    CHECK(fs::exists(out / "report.csv"));
    CHECK_THAT(eval.output, ContainsSubstring("R@1"));
    CHECK_THAT(eval.output, ContainsSubstring("avg"));
    CHECK_THAT(eval.output, ContainsSubstring("complete, 7 artifacts"));

    SECTION("csv format") {
        const CliResult csv = run_cli("evaluate" + base + " --format csv");
        REQUIRE(csv.exit_code == 0);
        CHECK_THAT(csv.output, ContainsSubstring("run,metric,en,xx,avg"));
    }
    SECTION("re-evaluation is idempotent") {
        const std::string manifest = c2kd::detail::read_file_bytes((out / "manifest.json").string());
        const CliResult again = run_cli("evaluate" + base);
        REQUIRE(again.exit_code == 0);
        CHECK(c2kd::detail::read_file_bytes((out / "manifest.json").string()) == manifest);
    }
    SECTION("seed override trains a different student directory") {
        const fs::path out2 = dir.path / "out2";
        const std::string alt = " --config '" + cfg.string() + "' --out '" + out2.string() + "'";
        const CliResult r = run_cli("train-student" + alt + " --seeds 5");
        REQUIRE(r.exit_code == 0);
        CHECK(fs::exists(out2 / "students/seed_5/student.c2km"));
        CHECK(!fs::exists(out2 / "students/seed_1"));
    }
}

TEST_CASE("cli rejects broken configs with a named field") {
    testutil::TempDir dir("clibad");
    json bad = tiny_config();
    bad["train"]["lr_decayy"] = 0.5;
    const fs::path cfg = dir.path / "bad.json";
    write_json(cfg, bad);
    const CliResult r =
        run_cli("evaluate --config '" + cfg.string() + "' --out '" + (dir.path / "out").string() + "'");
    CHECK(r.exit_code != 0);
    CHECK_THAT(r.output, ContainsSubstring("error:"));
    CHECK_THAT(r.output, ContainsSubstring("lr_decayy"));
}

TEST_CASE("cli refuses a missing config file") {
    const CliResult r = run_cli("evaluate --config /nonexistent/c2kd.json --out /tmp/c2kd_nowhere");
    CHECK(r.exit_code != 0);
    CHECK_THAT(r.output, ContainsSubstring("config"));
}

TEST_CASE("cli sweep joins cell reports") {
    testutil::TempDir dir("clisweep");
    json sweep;
    sweep["version"] = 1;
    sweep["base"] = tiny_config();
    json distill, plain;
    distill["name"] = "distill";
    plain["name"] = "plain";
    plain["overrides"]["train"]["alpha"] = 1.0;
    plain["overrides"]["teachers"]["count"] = 0;
    sweep["cells"] = json::array({distill, plain});
    const fs::path cfg = dir.path / "sweep.json";
    write_json(cfg, sweep);
    const fs::path out = dir.path / "swp";
    const CliResult r = run_cli("sweep --config '" + cfg.string() + "' --out '" + out.string() +
                                "' --jobs 2 --format csv");
    INFO(r.output);
    REQUIRE(r.exit_code == 0);
    CHECK(fs::exists(out / "sweep.csv"));
    CHECK(fs::exists(out / "distill/report.csv"));
    CHECK(fs::exists(out / "plain/report.csv"));
    CHECK_THAT(r.output, ContainsSubstring("cell,stat,metric"));
    CHECK_THAT(r.output, ContainsSubstring("distill,mean,R@1"));
    CHECK_THAT(r.output, ContainsSubstring("plain,mean,R@1"));
}
