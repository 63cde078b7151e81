#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include "helpers.hpp"

using namespace c2kd;
using Catch::Matchers::ContainsSubstring;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json minimal_config_json() {
    return json::parse(R"({
        "version": 1,
        "name": "tiny",
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
        "train": {"epochs": 1, "languages": ["en", "xx"]}
    })");
}

// Small but complete pipeline config: one teacher, one student seed.
ExperimentConfig tiny_experiment() {
    ExperimentConfig cfg;
    cfg.name = "pipeline";
    cfg.synthetic = testutil::small_spec(40);
    cfg.split = {32, 0, 8, 7};
    cfg.dims = testutil::small_dims(cfg.synthetic, 8);
    cfg.teachers.count = 1;
    cfg.teachers.seeds = {101};
    cfg.teachers.epochs = 1;
    cfg.train.languages = {"en", "xx"};
    cfg.train.batch_size = 8;
    cfg.train.lr = 1e-3;
    cfg.train.epochs = 1;
    cfg.train.alpha = 0.5;
    cfg.seeds = {1};
    cfg.eval.ks = {1, 5};
    cfg.eval.languages = {"en", "xx"};
    return cfg;
}

std::vector<std::string> artifact_paths(const Manifest& m) {
    std::vector<std::string> out;
    for (const auto& a : m.artifacts) out.push_back(a.path);
    return out;
}

}  // namespace

TEST_CASE("fnv-1a hashing matches the published test vectors") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(fnv1a64("hello") != fnv1a64("hellp"));
    CHECK(hex64(0) == "0000000000000000");
    CHECK(hex64(0xdeadbeefull) == "00000000deadbeef");
    CHECK(hex64(fnv1a64("")) == "cbf29ce484222325");
}

TEST_CASE("config parsing fills documented defaults") {
    const ExperimentConfig cfg = parse_experiment_config(minimal_config_json());
    CHECK(cfg.name == "tiny");
    CHECK(cfg.use_synthetic);
    CHECK(cfg.synthetic.n_records == 20);
    CHECK(cfg.synthetic.tokens_per_caption == 4);
    CHECK(cfg.synthetic.frames_per_video == 4);
    CHECK(cfg.split.n_train == 16);
    CHECK(cfg.split.n_val == 0);
    CHECK(cfg.split.n_test == 4);
    CHECK(cfg.dims.embed_dim == 32);
    CHECK(cfg.dims.video_attention == false);
    CHECK(cfg.train.batch_size == 32);
    CHECK(cfg.train.alpha == 1.0);
    CHECK(cfg.train.teacher_language == "en");
    CHECK(cfg.teachers.count == 0);
    CHECK(cfg.teachers.epochs == cfg.train.epochs);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1});
    CHECK(cfg.eval.ks == std::vector<std::size_t>{1, 5, 10});
    CHECK(cfg.eval.languages == cfg.train.languages);
}

TEST_CASE("teacher defaults and overrides") {
    json j = minimal_config_json();
    j["teachers"] = {{"count", 2}};
    j["train"]["alpha"] = 0.5;
    const ExperimentConfig cfg = parse_experiment_config(j);
    CHECK(cfg.teachers.seeds == std::vector<std::uint64_t>{101, 102});
    CHECK(cfg.teachers.epochs == 1);

    j["teachers"]["epochs"] = 3;
    j["teachers"]["seeds"] = {7, 8};
    const ExperimentConfig cfg2 = parse_experiment_config(j);
    CHECK(cfg2.teachers.seeds == std::vector<std::uint64_t>{7, 8});
    CHECK(cfg2.teachers.epochs == 3);
}

TEST_CASE("strict parsing rejects malformed configs with a field path") {
    auto expect_field = [](const json& j, const std::string& field) {
        try {
            parse_experiment_config(j);
            FAIL("expected ConfigError at " + field);
        } catch (const ConfigError& e) {
            CHECK(e.field == field);
        }
    };

    SECTION("unknown keys") {
        json j = minimal_config_json();
        j["train"]["lr_decayy"] = 0.5;
        expect_field(j, "train.lr_decayy");
        j = minimal_config_json();
        j["extra"] = 1;
        expect_field(j, "extra");
        j = minimal_config_json();
        j["data"]["synthetic"]["langauges"] = json::array();
        expect_field(j, "data.synthetic.langauges");
    }
    SECTION("version") {
        json j = minimal_config_json();
        j["version"] = 2;
        expect_field(j, "version");
        j.erase("version");
        expect_field(j, "version");
    }
    SECTION("data source exclusivity") {
        json j = minimal_config_json();
        j["data"]["corpus_path"] = "x.c2kc";
        expect_field(j, "data");
        j["data"].erase("corpus_path");
        j["data"].erase("synthetic");
        expect_field(j, "data");
    }
    SECTION("teacher seed list length") {
        json j = minimal_config_json();
        j["teachers"] = {{"count", 2}, {"seeds", {5}}};
        expect_field(j, "teachers.seeds");
    }
    SECTION("distillation needs teachers") {
        json j = minimal_config_json();
        j["train"]["alpha"] = 0.5;
        expect_field(j, "teachers.count");
    }
    SECTION("empty seed list") {
        json j = minimal_config_json();
        j["seeds"] = json::array();
        expect_field(j, "seeds");
    }
    SECTION("type errors") {
        json j = minimal_config_json();
        j["train"]["epochs"] = "three";
        expect_field(j, "train.epochs");
        j = minimal_config_json();
        j["train"]["languages"] = "en";
        expect_field(j, "train.languages");
    }
}

TEST_CASE("config files load with relative corpus paths resolved") {
    testutil::TempDir dir("cfg");
    SECTION("happy path") {
        detail::write_file_bytes((dir.path / "exp.json").string(), minimal_config_json().dump());
        const ExperimentConfig cfg = load_experiment_config(dir.path / "exp.json");
        CHECK(cfg.name == "tiny");
    }
    SECTION("relative corpus path") {
        json j = minimal_config_json();
        j["data"].erase("synthetic");
        j["data"]["corpus_path"] = "sub/corpus.c2kc";
        detail::write_file_bytes((dir.path / "exp.json").string(), j.dump());
        const ExperimentConfig cfg = load_experiment_config(dir.path / "exp.json");
        CHECK(!cfg.use_synthetic);
        CHECK(cfg.corpus_path == (dir.path / "sub/corpus.c2kc").string());
    }
    SECTION("invalid JSON") {
        detail::write_file_bytes((dir.path / "bad.json").string(), "{not json");
        CHECK_THROWS_WITH(load_experiment_config(dir.path / "bad.json"), ContainsSubstring("invalid JSON in"));
    }
}

TEST_CASE("resolved config snapshots are closed under reparsing") {
    const ExperimentConfig cfg = parse_experiment_config(minimal_config_json());
    const json resolved = resolved_config_json(cfg);
    const ExperimentConfig cfg2 = parse_experiment_config(resolved);
    CHECK(resolved_config_json(cfg2) == resolved);
}

TEST_CASE("experiment pipeline produces a complete hashed manifest") {
    const ExperimentConfig cfg = tiny_experiment();
    testutil::TempDir dir("exp");
    const ExperimentResult result = run_experiment(cfg, dir.path);

    CHECK(result.manifest.complete);
    const std::vector<std::string> expected{
        "config.resolved.json",
        "corpus.c2kc",
        "report.csv",
        "students/seed_1/history.csv",
        "students/seed_1/student.c2km",
        "teachers/history_0.csv",
        "teachers/teacher_0.c2km",
    };
    CHECK(artifact_paths(result.manifest) == expected);

    for (const auto& a : result.manifest.artifacts) {
        const std::string bytes = detail::read_file_bytes((dir.path / a.path).string());
        CHECK(a.bytes == bytes.size());
        CHECK(a.fnv1a64 == hex64(fnv1a64(bytes)));
    }

    const json manifest = json::parse(detail::read_file_bytes((dir.path / "manifest.json").string()));
    CHECK(manifest["complete"] == true);
    CHECK(manifest["artifacts"].size() == expected.size());

    SECTION("re-running reuses every artifact byte for byte") {
        const std::string before = detail::read_file_bytes((dir.path / "manifest.json").string());
        run_experiment(cfg, dir.path);
        CHECK(detail::read_file_bytes((dir.path / "manifest.json").string()) == before);
    }
    SECTION("a fresh directory reproduces identical hashes") {
        testutil::TempDir dir2("exp2");
        const ExperimentResult again = run_experiment(cfg, dir2.path);
        REQUIRE(again.manifest.artifacts.size() == result.manifest.artifacts.size());
        for (std::size_t i = 0; i < again.manifest.artifacts.size(); ++i) {
            CHECK(again.manifest.artifacts[i].path == result.manifest.artifacts[i].path);
            CHECK(again.manifest.artifacts[i].fnv1a64 == result.manifest.artifacts[i].fnv1a64);
        }
    }
    SECTION("deleted student artifacts are regenerated identically") {
        const std::string before = detail::read_file_bytes((dir.path / "manifest.json").string());
        fs::remove(dir.path / "students/seed_1/student.c2km");
        fs::remove(dir.path / "students/seed_1/history.csv");
        run_experiment(cfg, dir.path);
        CHECK(detail::read_file_bytes((dir.path / "manifest.json").string()) == before);
    }
    SECTION("a different config is refused until the directory is healed") {
        ExperimentConfig other = cfg;
        other.name = "renamed";
        CHECK_THROWS_WITH(run_experiment(other, dir.path), ContainsSubstring("fresh directory"));
        const json failed = json::parse(detail::read_file_bytes((dir.path / "manifest.json").string()));
        CHECK(failed["complete"] == false);
        CHECK(failed["failed_stage"] == "config");

        const ExperimentResult healed = run_experiment(cfg, dir.path);
        CHECK(healed.manifest.complete);
    }
}

TEST_CASE("experiment runs can stop after early stages") {
    const ExperimentConfig cfg = tiny_experiment();
    testutil::TempDir dir("staged");

    const ExperimentResult d = run_experiment(cfg, dir.path, RunStage::Data);
    CHECK(d.manifest.complete);
    CHECK(artifact_paths(d.manifest) == std::vector<std::string>{"config.resolved.json", "corpus.c2kc"});
    CHECK(d.report.runs.empty());

    const ExperimentResult t = run_experiment(cfg, dir.path, RunStage::Teachers);
    CHECK(t.manifest.artifacts.size() == 4);

    const ExperimentResult s = run_experiment(cfg, dir.path, RunStage::Students);
    CHECK(s.manifest.artifacts.size() == 6);

    const ExperimentResult full = run_experiment(cfg, dir.path);
    CHECK(full.manifest.artifacts.size() == 7);
    CHECK(full.manifest.complete);
    REQUIRE(full.report.runs.size() == 1);
}

TEST_CASE("failed stages are recorded in the manifest before rethrowing") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.split.n_test = 9;  // 32 + 9 != 40: the split cannot cover the corpus
    testutil::TempDir dir("fail");
    CHECK_THROWS_AS(run_experiment(cfg, dir.path), ParamError);
    const json manifest = json::parse(detail::read_file_bytes((dir.path / "manifest.json").string()));
    CHECK(manifest["complete"] == false);
    CHECK(manifest["failed_stage"] == "data");
    CHECK_THAT(manifest["error"].get<std::string>(), ContainsSubstring("does not cover"));
}

TEST_CASE("sweep plans merge overrides onto the base config") {
    json sweep;
    sweep["version"] = 1;
    sweep["base"] = minimal_config_json();
    json cool, hot;
    cool["name"] = "base";
    hot["name"] = "hot";
    hot["overrides"]["train"]["tau"] = 0.5;
    sweep["cells"] = json::array({cool, hot});
    const SweepPlan plan = parse_sweep_config(sweep);
    REQUIRE(plan.cells.size() == 2);
    CHECK(plan.cells[0].name == "base");
    CHECK(plan.cells[0].config.train.tau == 0.05);
    CHECK(plan.cells[1].config.train.tau == 0.5);
    CHECK(plan.cells[1].config.train.languages == std::vector<std::string>{"en", "xx"});

    SECTION("cell validation") {
        json bad = sweep;
        bad["cells"][1]["name"] = "base";
        CHECK_THROWS_WITH(parse_sweep_config(bad), ContainsSubstring("duplicate cell name"));
        bad = sweep;
        bad["cells"][0]["name"] = "has space";
        CHECK_THROWS_AS(parse_sweep_config(bad), ConfigError);
        bad = sweep;
        bad["cells"][1]["overrides"]["train"]["lr"] = -1.0;
        CHECK_THROWS_WITH(parse_sweep_config(bad), ContainsSubstring("cell 'hot':"));
        bad = sweep;
        bad["cells"] = json::array();
        CHECK_THROWS_AS(parse_sweep_config(bad), ConfigError);
    }
}

TEST_CASE("worker slot count respects jobs, cells and the thread cap") {
    ::unsetenv("C2KD_THREADS");
    CHECK(sweep_worker_slots(3, 10) == 3);
    CHECK(sweep_worker_slots(5, 2) == 2);
    CHECK(sweep_worker_slots(0, 100) >= 1);
    CHECK(sweep_worker_slots(1, 1) == 1);

    ::setenv("C2KD_THREADS", "2", 1);
    CHECK(sweep_worker_slots(8, 10) == 2);
    CHECK(sweep_worker_slots(1, 10) == 1);
    ::setenv("C2KD_THREADS", "junk", 1);
    CHECK(sweep_worker_slots(3, 10) == 3);  // unparsable cap is ignored
    ::unsetenv("C2KD_THREADS");
}

TEST_CASE("sweeps run every cell and join one csv") {
    json sweep;
    sweep["version"] = 1;
    sweep["base"] = minimal_config_json();
    sweep["base"]["eval"]["ks"] = json::array({1});  // the 4-record test split caps K
    json cool, hot;
    cool["name"] = "cool";
    hot["name"] = "hot";
    hot["overrides"]["train"]["tau"] = 0.5;
    sweep["cells"] = json::array({cool, hot});
    const SweepPlan plan = parse_sweep_config(sweep);
    testutil::TempDir dir("sweep");
    const SweepResult result = run_sweep(plan, dir.path, 1);
    CHECK(result.all_ok);
    REQUIRE(result.cells.size() == 2);
    CHECK(result.cells[0].ok);
    CHECK(result.cells[1].ok);

    CHECK(fs::exists(dir.path / "cool/report.csv"));
    CHECK(fs::exists(dir.path / "hot/report.csv"));
    const std::string csv = detail::read_file_bytes((dir.path / "sweep.csv").string());
    CHECK(csv.rfind("cell,stat,metric,en,xx,avg\n", 0) == 0);
    CHECK_THAT(csv, ContainsSubstring("cool,mean,R@1"));
    CHECK_THAT(csv, ContainsSubstring("hot,std,R@1"));

    const json manifest = json::parse(detail::read_file_bytes((dir.path / "manifest.json").string()));
    CHECK(manifest["complete"] == true);
}

TEST_CASE("a failing sweep cell is reported after the join") {
    json sweep;
    sweep["version"] = 1;
    sweep["base"] = minimal_config_json();
    sweep["base"]["eval"]["ks"] = json::array({1});  // the 4-record test split caps K
    json good, bad;
    good["name"] = "good";
    bad["name"] = "bad";
    bad["overrides"]["data"]["split"]["test"] = 5;
    sweep["cells"] = json::array({good, bad});
    const SweepPlan plan = parse_sweep_config(sweep);  // 16 + 5 != 20 fails at run time
    testutil::TempDir dir("sweepfail");
    CHECK_THROWS_WITH(run_sweep(plan, dir.path, 1), ContainsSubstring("sweep failed"));

    const std::string csv = detail::read_file_bytes((dir.path / "sweep.csv").string());
    CHECK_THAT(csv, ContainsSubstring("good,mean,R@1"));
    CHECK_THAT(csv, !ContainsSubstring("bad,mean"));
    const json manifest = json::parse(detail::read_file_bytes((dir.path / "manifest.json").string()));
    CHECK(manifest["complete"] == false);
    CHECK(manifest["failed_stage"] == "sweep");
    CHECK_THAT(manifest["error"].get<std::string>(), ContainsSubstring("bad"));
}
