#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <initializer_list>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "c2kd/data.hpp"
#include "c2kd/errors.hpp"
#include "c2kd/eval.hpp"
#include "c2kd/io.hpp"
#include "c2kd/train.hpp"

// Experiment plumbing: the versioned JSON config schema (strict — unknown
// fields are rejected with their path), the staged pipeline runner with its
// hashed artifact manifest, and the parallel sweep driver.

namespace c2kd {

inline constexpr int kConfigVersion = 1;

struct SplitSpec {
    std::size_t n_train = 0;
    std::size_t n_val = 0;
    std::size_t n_test = 0;
    std::uint64_t seed = 0;
};

struct TeacherSpec {
    std::size_t count = 0;
    std::vector<std::uint64_t> seeds;  // resolved to 101, 102, ... when omitted
    std::size_t epochs = 0;            // resolved to the student epoch count when omitted
};

struct EvalSpec {
    std::vector<std::size_t> ks = {1, 5, 10};
    std::vector<std::string> languages;  // empty = the training languages
};

struct ExperimentConfig {
    std::string name = "experiment";
    bool use_synthetic = true;
    std::string corpus_path;  // set when use_synthetic is false
    SyntheticSpec synthetic;
    SplitSpec split;
    EncoderDims dims;  // text_dim / video_dim are filled from the corpus at run time
    TeacherSpec teachers;
    TrainConfig train;
    std::vector<std::uint64_t> seeds = {1};
    EvalSpec eval;
};

// ---------------------------------------------------------------------------
// Strict JSON parsing
// ---------------------------------------------------------------------------

namespace detail {

using nlohmann::json;

inline std::string join_path(const std::string& base, const std::string& key) {
    return base.empty() ? key : base + "." + key;
}

inline void reject_unknown(const json& obj, const std::string& path,
                           std::initializer_list<const char*> allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("unknown field", join_path(path, it.key()));
    }
}

inline const json& expect_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError("expected an object", path);
    return j;
}

inline double as_number(const json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError("expected a number", path);
    return j.get<double>();
}

inline std::uint64_t as_uint(const json& j, const std::string& path) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
    throw ConfigError("expected a non-negative integer", path);
}

inline bool as_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) throw ConfigError("expected a boolean", path);
    return j.get<bool>();
}

inline std::string as_string(const json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError("expected a string", path);
    return j.get<std::string>();
}

inline const json* field(const json& obj, const char* key) {
    auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

inline const json& require(const json& obj, const std::string& path, const char* key) {
    const json* f = field(obj, key);
    if (!f) throw ConfigError("missing required field", join_path(path, key));
    return *f;
}

inline std::vector<std::uint64_t> as_uint_list(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError("expected an array", path);
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_uint(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline std::vector<std::string> as_string_list(const json& j, const std::string& path) {
    if (!j.is_array()) throw ConfigError("expected an array", path);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < j.size(); ++i)
        out.push_back(as_string(j[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

inline SyntheticSpec parse_synthetic(const json& j, const std::string& path) {
    expect_object(j, path);
    reject_unknown(j, path,
                   {"n_records", "concept_dim", "languages", "text_dim", "video_dim", "tokens_per_caption",
                    "frames_per_video", "video_noise", "token_noise", "language_map_jitter", "seed"});
    SyntheticSpec s;
    s.n_records = as_uint(require(j, path, "n_records"), join_path(path, "n_records"));
    s.concept_dim = as_uint(require(j, path, "concept_dim"), join_path(path, "concept_dim"));
    s.text_dim = as_uint(require(j, path, "text_dim"), join_path(path, "text_dim"));
    s.video_dim = as_uint(require(j, path, "video_dim"), join_path(path, "video_dim"));
    s.seed = as_uint(require(j, path, "seed"), join_path(path, "seed"));
    const json& langs = require(j, path, "languages");
    const std::string lpath = join_path(path, "languages");
    if (!langs.is_array() || langs.empty()) throw ConfigError("expected a non-empty array", lpath);
    s.languages.clear();
    for (std::size_t i = 0; i < langs.size(); ++i) {
        const std::string ipath = lpath + "[" + std::to_string(i) + "]";
        expect_object(langs[i], ipath);
        reject_unknown(langs[i], ipath, {"tag", "sigma"});
        LanguageNoise ln;
        ln.tag = as_string(require(langs[i], ipath, "tag"), join_path(ipath, "tag"));
        ln.sigma = as_number(require(langs[i], ipath, "sigma"), join_path(ipath, "sigma"));
        s.languages.push_back(std::move(ln));
    }
    if (const json* f = field(j, "tokens_per_caption")) s.tokens_per_caption = as_uint(*f, join_path(path, "tokens_per_caption"));
    if (const json* f = field(j, "frames_per_video")) s.frames_per_video = as_uint(*f, join_path(path, "frames_per_video"));
    if (const json* f = field(j, "video_noise")) s.video_noise = as_number(*f, join_path(path, "video_noise"));
    if (const json* f = field(j, "token_noise")) s.token_noise = as_number(*f, join_path(path, "token_noise"));
    if (const json* f = field(j, "language_map_jitter"))
        s.language_map_jitter = as_number(*f, join_path(path, "language_map_jitter"));
    s.validate();
    return s;
}

inline SplitSpec parse_split(const json& j, const std::string& path) {
    expect_object(j, path);
    reject_unknown(j, path, {"train", "val", "test", "seed"});
    SplitSpec s;
    s.n_train = as_uint(require(j, path, "train"), join_path(path, "train"));
    if (const json* f = field(j, "val")) s.n_val = as_uint(*f, join_path(path, "val"));
    s.n_test = as_uint(require(j, path, "test"), join_path(path, "test"));
    s.seed = as_uint(require(j, path, "seed"), join_path(path, "seed"));
    return s;
}

inline EncoderDims parse_model(const json* j, const std::string& path) {
    EncoderDims d;
    d.embed_dim = 32;  // desk-scale default; the paper-scale value is 512
    if (!j) return d;
    expect_object(*j, path);
    reject_unknown(*j, path,
                   {"embed_dim", "max_tokens", "max_frames", "video_attention", "attn_layers", "attn_heads",
                    "ff_dim"});
    if (const json* f = field(*j, "embed_dim")) d.embed_dim = as_uint(*f, join_path(path, "embed_dim"));
    if (const json* f = field(*j, "max_tokens")) d.max_tokens = as_uint(*f, join_path(path, "max_tokens"));
    if (const json* f = field(*j, "max_frames")) d.max_frames = as_uint(*f, join_path(path, "max_frames"));
    if (const json* f = field(*j, "video_attention")) d.video_attention = as_bool(*f, join_path(path, "video_attention"));
    if (const json* f = field(*j, "attn_layers")) d.attn_layers = as_uint(*f, join_path(path, "attn_layers"));
    if (const json* f = field(*j, "attn_heads")) d.attn_heads = as_uint(*f, join_path(path, "attn_heads"));
    if (const json* f = field(*j, "ff_dim")) d.ff_dim = as_uint(*f, join_path(path, "ff_dim"));
    if (d.embed_dim == 0) throw ConfigError("embed_dim must be positive", join_path(path, "embed_dim"));
    return d;
}

inline TrainConfig parse_train(const json& j, const std::string& path) {
    expect_object(j, path);
    reject_unknown(j, path,
                   {"tau", "tau_prime", "alpha", "pooler", "batch_size", "lr", "lr_decay", "epochs",
                    "languages", "setting", "objective", "teacher_language"});
    TrainConfig t;
    t.batch_size = 32;  // desk-scale default; the paper-scale value is 64
    if (const json* f = field(j, "tau")) t.tau = as_number(*f, join_path(path, "tau"));
    if (const json* f = field(j, "tau_prime")) t.tau_prime = as_number(*f, join_path(path, "tau_prime"));
    if (const json* f = field(j, "alpha")) t.alpha = as_number(*f, join_path(path, "alpha"));
    if (const json* f = field(j, "pooler")) t.pooler = pooler_from_string(as_string(*f, join_path(path, "pooler")));
    if (const json* f = field(j, "batch_size")) t.batch_size = as_uint(*f, join_path(path, "batch_size"));
    if (const json* f = field(j, "lr")) t.lr = as_number(*f, join_path(path, "lr"));
    if (const json* f = field(j, "lr_decay")) t.lr_decay = as_number(*f, join_path(path, "lr_decay"));
    t.epochs = as_uint(require(j, path, "epochs"), join_path(path, "epochs"));
    t.languages = as_string_list(require(j, path, "languages"), join_path(path, "languages"));
    if (const json* f = field(j, "setting")) t.setting = setting_from_string(as_string(*f, join_path(path, "setting")));
    if (const json* f = field(j, "objective"))
        t.objective = objective_from_string(as_string(*f, join_path(path, "objective")));
    if (const json* f = field(j, "teacher_language"))
        t.teacher_language = as_string(*f, join_path(path, "teacher_language"));
    t.validate();
    return t;
}

inline TeacherSpec parse_teachers(const json* j, const std::string& path, const TrainConfig& train) {
    TeacherSpec t;
    t.epochs = train.epochs;
    if (j) {
        expect_object(*j, path);
        reject_unknown(*j, path, {"count", "seeds", "epochs"});
        if (const json* f = field(*j, "count")) t.count = as_uint(*f, join_path(path, "count"));
        if (const json* f = field(*j, "seeds")) t.seeds = as_uint_list(*f, join_path(path, "seeds"));
        if (const json* f = field(*j, "epochs")) t.epochs = as_uint(*f, join_path(path, "epochs"));
    }
    if (t.seeds.empty())
        for (std::size_t i = 0; i < t.count; ++i) t.seeds.push_back(101 + i);
    if (t.seeds.size() != t.count)
        throw ConfigError("seeds list length " + std::to_string(t.seeds.size()) + " does not match count " +
                              std::to_string(t.count),
                          join_path(path, "seeds"));
    if (train.alpha < 1.0 && t.count == 0)
        throw ConfigError("alpha < 1 requires at least one teacher", join_path(path, "count"));
    return t;
}

inline EvalSpec parse_eval(const json* j, const std::string& path, const TrainConfig& train) {
    EvalSpec e;
    e.languages = train.languages;
    if (!j) return e;
    expect_object(*j, path);
    reject_unknown(*j, path, {"ks", "languages"});
    if (const json* f = field(*j, "ks")) {
        const auto ks = as_uint_list(*f, join_path(path, "ks"));
        e.ks.assign(ks.begin(), ks.end());
        if (e.ks.empty()) throw ConfigError("at least one K required", join_path(path, "ks"));
    }
    if (const json* f = field(*j, "languages")) {
        e.languages = as_string_list(*f, join_path(path, "languages"));
        if (e.languages.empty()) throw ConfigError("at least one language required", join_path(path, "languages"));
    }
    return e;
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    detail::expect_object(j, "");
    detail::reject_unknown(j, "", {"version", "name", "data", "model", "teachers", "train", "seeds", "eval"});
    const std::uint64_t version = detail::as_uint(detail::require(j, "", "version"), "version");
    if (version != static_cast<std::uint64_t>(kConfigVersion))
        throw ConfigError("unsupported config version " + std::to_string(version), "version");

    ExperimentConfig cfg;
    if (const auto* f = detail::field(j, "name")) cfg.name = detail::as_string(*f, "name");

    const nlohmann::json& data = detail::require(j, "", "data");
    detail::expect_object(data, "data");
    detail::reject_unknown(data, "data", {"corpus_path", "synthetic", "split"});
    const auto* corpus_path = detail::field(data, "corpus_path");
    const auto* synthetic = detail::field(data, "synthetic");
    if ((corpus_path == nullptr) == (synthetic == nullptr))
        throw ConfigError("exactly one of corpus_path and synthetic must be given", "data");
    if (corpus_path) {
        cfg.use_synthetic = false;
        cfg.corpus_path = detail::as_string(*corpus_path, "data.corpus_path");
    } else {
        cfg.synthetic = detail::parse_synthetic(*synthetic, "data.synthetic");
    }
    cfg.split = detail::parse_split(detail::require(data, "data", "split"), "data.split");

    cfg.train = detail::parse_train(detail::require(j, "", "train"), "train");
    cfg.dims = detail::parse_model(detail::field(j, "model"), "model");
    cfg.teachers = detail::parse_teachers(detail::field(j, "teachers"), "teachers", cfg.train);
    if (const auto* f = detail::field(j, "seeds")) {
        cfg.seeds = detail::as_uint_list(*f, "seeds");
        if (cfg.seeds.empty()) throw ConfigError("at least one run seed required", "seeds");
    }
    cfg.eval = detail::parse_eval(detail::field(j, "eval"), "eval", cfg.train);
    return cfg;
}

// Parses a config file; a relative data.corpus_path is resolved against the
// config file's directory.
inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file_bytes(path.string()));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON in ") + path.string() + ": " + e.what());
    }
    ExperimentConfig cfg = parse_experiment_config(j);
    if (!cfg.use_synthetic) {
        std::filesystem::path p = cfg.corpus_path;
        if (p.is_relative()) cfg.corpus_path = (path.parent_path() / p).string();
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Resolved-config snapshot
// ---------------------------------------------------------------------------

inline nlohmann::json resolved_config_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["version"] = kConfigVersion;
    j["name"] = cfg.name;
    nlohmann::json data;
    if (cfg.use_synthetic) {
        nlohmann::json s;
        s["n_records"] = cfg.synthetic.n_records;
        s["concept_dim"] = cfg.synthetic.concept_dim;
        nlohmann::json langs = nlohmann::json::array();
        for (const auto& l : cfg.synthetic.languages) langs.push_back({{"tag", l.tag}, {"sigma", l.sigma}});
        s["languages"] = langs;
        s["text_dim"] = cfg.synthetic.text_dim;
        s["video_dim"] = cfg.synthetic.video_dim;
        s["tokens_per_caption"] = cfg.synthetic.tokens_per_caption;
        s["frames_per_video"] = cfg.synthetic.frames_per_video;
        s["video_noise"] = cfg.synthetic.video_noise;
        s["token_noise"] = cfg.synthetic.token_noise;
        s["language_map_jitter"] = cfg.synthetic.language_map_jitter;
        s["seed"] = cfg.synthetic.seed;
        data["synthetic"] = s;
    } else {
        data["corpus_path"] = cfg.corpus_path;
    }
    data["split"] = {{"train", cfg.split.n_train}, {"val", cfg.split.n_val}, {"test", cfg.split.n_test},
                     {"seed", cfg.split.seed}};
    j["data"] = data;
    j["model"] = {{"embed_dim", cfg.dims.embed_dim},       {"max_tokens", cfg.dims.max_tokens},
                  {"max_frames", cfg.dims.max_frames},     {"video_attention", cfg.dims.video_attention},
                  {"attn_layers", cfg.dims.attn_layers},   {"attn_heads", cfg.dims.attn_heads},
                  {"ff_dim", cfg.dims.ff_dim}};
    j["teachers"] = {{"count", cfg.teachers.count}, {"seeds", cfg.teachers.seeds}, {"epochs", cfg.teachers.epochs}};
    j["train"] = {{"tau", cfg.train.tau},
                  {"tau_prime", cfg.train.tau_prime},
                  {"alpha", cfg.train.alpha},
                  {"pooler", to_string(cfg.train.pooler)},
                  {"batch_size", cfg.train.batch_size},
                  {"lr", cfg.train.lr},
                  {"lr_decay", cfg.train.lr_decay},
                  {"epochs", cfg.train.epochs},
                  {"languages", cfg.train.languages},
                  {"setting", to_string(cfg.train.setting)},
                  {"objective", to_string(cfg.train.objective)},
                  {"teacher_language", cfg.train.teacher_language}};
    j["seeds"] = cfg.seeds;
    j["eval"] = {{"ks", cfg.eval.ks}, {"languages", cfg.eval.languages}};
    return j;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[i] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

struct ArtifactEntry {
    std::string path;  // relative to the experiment directory
    std::uint64_t bytes = 0;
    std::string fnv1a64;
};

struct Manifest {
    bool complete = false;
    std::string failed_stage;
    std::string error;
    std::vector<ArtifactEntry> artifacts;

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["complete"] = complete;
        if (!complete) {
            j["failed_stage"] = failed_stage;
            j["error"] = error;
        }
        nlohmann::json arts = nlohmann::json::array();
        for (const auto& a : artifacts)
            arts.push_back({{"path", a.path}, {"bytes", a.bytes}, {"fnv1a64", a.fnv1a64}});
        j["artifacts"] = arts;
        return j;
    }
};

namespace detail {

// Hashes every listed path that exists under `root`, sorted by path.
inline std::vector<ArtifactEntry> hash_artifacts(const std::filesystem::path& root,
                                                 std::vector<std::string> paths) {
    std::sort(paths.begin(), paths.end());
    paths.erase(std::unique(paths.begin(), paths.end()), paths.end());
    std::vector<ArtifactEntry> out;
    for (const auto& rel : paths) {
        const std::filesystem::path p = root / rel;
        if (!std::filesystem::exists(p)) continue;
        const std::string bytes = read_file_bytes(p.string());
        out.push_back({rel, bytes.size(), hex64(fnv1a64(bytes))});
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Staged pipeline runner
// ---------------------------------------------------------------------------

// Pipeline stages in execution order; a run can be cut short after any of
// them (the CLI's gen-data / train-teachers / train-student subcommands).
enum class RunStage { Data, Teachers, Students, Eval };

struct ExperimentResult {
    std::filesystem::path out_dir;
    RetrievalReport report;  // empty unless the eval stage ran
    Manifest manifest;
};

// Executes generate/load -> teachers -> students -> eval, reusing any
// artifact already on disk. Throws on the first stage failure, after writing
// a manifest that marks the run incomplete; completed-stage artifacts stay.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                       RunStage upto = RunStage::Eval) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    ExperimentResult result;
    result.out_dir = out_dir;
    std::vector<std::string> artifacts;
    std::string stage = "config";

    auto finish_manifest = [&](bool ok) {
        result.manifest.complete = ok;
        result.manifest.artifacts = detail::hash_artifacts(out_dir, artifacts);
        detail::write_file_bytes((out_dir / "manifest.json").string(), result.manifest.to_json().dump(2) + "\n");
    };

    try {
        const std::string resolved = resolved_config_json(cfg).dump(2) + "\n";
        const fs::path cfg_path = out_dir / "config.resolved.json";
        if (fs::exists(cfg_path)) {
            if (detail::read_file_bytes(cfg_path.string()) != resolved)
                throw ConfigError("output directory " + out_dir.string() +
                                  " holds artifacts from a different configuration; use a fresh directory");
        } else {
            detail::write_file_bytes(cfg_path.string(), resolved);
        }
        artifacts.push_back("config.resolved.json");

        stage = "data";
        Corpus corpus;
        if (cfg.use_synthetic) {
            const fs::path corpus_path = out_dir / "corpus.c2kc";
            if (fs::exists(corpus_path)) {
                corpus = load_corpus(corpus_path.string());
            } else {
                corpus = generate_synthetic(cfg.synthetic);
                save_corpus(corpus, corpus_path.string());
            }
            artifacts.push_back("corpus.c2kc");
        } else {
            corpus = load_corpus(cfg.corpus_path);
        }
        const Split split = make_split(corpus, cfg.split.n_train, cfg.split.n_val, cfg.split.n_test,
                                       cfg.split.seed);
        EncoderDims dims = cfg.dims;
        dims.text_dim = corpus.text_dim;
        dims.video_dim = corpus.video_dim;
        if (upto == RunStage::Data) {
            finish_manifest(true);
            return result;
        }

        stage = "teachers";
        TeacherEnsemble ensemble;
        ensemble.pooler = cfg.train.pooler;
        const bool need_teachers = cfg.teachers.count > 0;
        if (need_teachers) {
            fs::create_directories(out_dir / "teachers");
            for (std::size_t i = 0; i < cfg.teachers.count; ++i) {
                const std::string ckpt_rel = "teachers/teacher_" + std::to_string(i) + ".c2km";
                const std::string hist_rel = "teachers/history_" + std::to_string(i) + ".csv";
                const fs::path ckpt = out_dir / ckpt_rel;
                if (fs::exists(ckpt)) {
                    ensemble.members.push_back(load_model(ckpt.string()));
                } else {
                    TrainConfig tc = cfg.train;
                    tc.alpha = 1.0;
                    tc.setting = TrainSetting::TranslateTrain;
                    tc.seed = cfg.teachers.seeds[i];
                    tc.epochs = cfg.teachers.epochs;
                    TrainResult r;
                    try {
                        r = train_model(corpus, split, dims, tc, nullptr);
                    } catch (const NumericError& e) {
                        throw NumericError("teacher " + std::to_string(i) + ": " + e.what());
                    }
                    r.model.frozen = true;
                    save_model(r.model, ckpt.string());
                    std::ostringstream hist;
                    write_history_csv(r.history, tc.training_languages(), hist);
                    detail::write_file_bytes((out_dir / hist_rel).string(), hist.str());
                    ensemble.members.push_back(std::move(r.model));
                }
                artifacts.push_back(ckpt_rel);
                artifacts.push_back(hist_rel);
            }
        }
        if (upto == RunStage::Teachers) {
            finish_manifest(true);
            return result;
        }

        stage = "students";
        std::vector<ModelParams> students;
        for (const std::uint64_t seed : cfg.seeds) {
            const std::string dir_rel = "students/seed_" + std::to_string(seed);
            const std::string ckpt_rel = dir_rel + "/student.c2km";
            const std::string hist_rel = dir_rel + "/history.csv";
            fs::create_directories(out_dir / dir_rel);
            const fs::path ckpt = out_dir / ckpt_rel;
            if (fs::exists(ckpt)) {
                students.push_back(load_model(ckpt.string()));
            } else {
                TrainConfig sc = cfg.train;
                sc.seed = seed;
                TrainResult r = train_student(corpus, split, dims, need_teachers ? &ensemble : nullptr, sc);
                save_model(r.model, ckpt.string());
                std::ostringstream hist;
                write_history_csv(r.history, sc.training_languages(), hist);
                detail::write_file_bytes((out_dir / hist_rel).string(), hist.str());
                students.push_back(std::move(r.model));
            }
            artifacts.push_back(ckpt_rel);
            artifacts.push_back(hist_rel);
        }
        if (upto == RunStage::Students) {
            finish_manifest(true);
            return result;
        }

        stage = "eval";
        std::vector<const ModelParams*> run_ptrs;
        run_ptrs.reserve(students.size());
        for (const auto& m : students) run_ptrs.push_back(&m);
        result.report = evaluate_retrieval(run_ptrs, corpus, split.test, cfg.eval.languages, cfg.eval.ks);
        std::ostringstream csv;
        report_csv(result.report, csv);
        detail::write_file_bytes((out_dir / "report.csv").string(), csv.str());
        artifacts.push_back("report.csv");

        finish_manifest(true);
        return result;
    } catch (const std::exception& e) {
        result.manifest.failed_stage = stage;
        result.manifest.error = e.what();
        finish_manifest(false);
        throw;
    }
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepCell {
    std::string name;
    ExperimentConfig config;
};

struct SweepPlan {
    std::vector<SweepCell> cells;
};

namespace detail {

inline bool safe_cell_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_')) return false;
    return true;
}

}  // namespace detail

// Sweep document: { version, base: <experiment config>, cells: [{name,
// overrides}] }. Overrides are RFC 7386 merge patches onto the base; every
// merged cell is validated up front so a typo fails before any work starts.
inline SweepPlan parse_sweep_config(const nlohmann::json& j) {
    detail::expect_object(j, "");
    detail::reject_unknown(j, "", {"version", "base", "cells"});
    const std::uint64_t version = detail::as_uint(detail::require(j, "", "version"), "version");
    if (version != static_cast<std::uint64_t>(kConfigVersion))
        throw ConfigError("unsupported sweep version " + std::to_string(version), "version");
    const nlohmann::json& base = detail::require(j, "", "base");
    detail::expect_object(base, "base");
    const nlohmann::json& cells = detail::require(j, "", "cells");
    if (!cells.is_array() || cells.empty()) throw ConfigError("expected a non-empty array", "cells");

    SweepPlan plan;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::string path = "cells[" + std::to_string(i) + "]";
        detail::expect_object(cells[i], path);
        detail::reject_unknown(cells[i], path, {"name", "overrides"});
        SweepCell cell;
        cell.name = detail::as_string(detail::require(cells[i], path, "name"), path + ".name");
        if (!detail::safe_cell_name(cell.name))
            throw ConfigError("cell name must be non-empty [A-Za-z0-9_-]", path + ".name");
        for (const auto& other : plan.cells)
            if (other.name == cell.name) throw ConfigError("duplicate cell name '" + cell.name + "'", path + ".name");
        nlohmann::json merged = base;
        if (const auto* ov = detail::field(cells[i], "overrides")) {
            detail::expect_object(*ov, path + ".overrides");
            merged.merge_patch(*ov);
        }
        try {
            cell.config = parse_experiment_config(merged);
        } catch (const ConfigError& e) {
            throw ConfigError("cell '" + cell.name + "': " + e.what(), e.field);
        }
        plan.cells.push_back(std::move(cell));
    }
    return plan;
}

inline SweepPlan load_sweep_config(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file_bytes(path.string()));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON in ") + path.string() + ": " + e.what());
    }
    return parse_sweep_config(j);
}

struct SweepCellResult {
    std::string name;
    bool ok = false;
    std::string error;
    RetrievalReport report;
};

struct SweepResult {
    std::filesystem::path out_dir;
    std::vector<SweepCellResult> cells;
    bool all_ok = false;
};

// Worker-slot count: the --jobs request (0 = hardware concurrency), capped
// by the C2KD_THREADS environment variable and the number of cells.
inline std::size_t sweep_worker_slots(std::size_t jobs, std::size_t n_cells) {
    std::size_t n = jobs != 0 ? jobs : std::max<std::size_t>(1, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("C2KD_THREADS")) {
        char* end = nullptr;
        const unsigned long long cap = std::strtoull(env, &end, 10);
        if (end && *end == '\0' && cap > 0) n = std::min<std::size_t>(n, cap);
    }
    return std::min(std::max<std::size_t>(1, n), std::max<std::size_t>(1, n_cells));
}

// Joined per-cell retrieval results, mean and std across each cell's seeds.
inline void sweep_csv(const std::vector<SweepCellResult>& cells, std::ostream& os) {
    const SweepCellResult* first = nullptr;
    for (const auto& c : cells)
        if (c.ok) {
            first = &c;
            break;
        }
    if (!first) return;
    os << "cell,stat,metric";
    for (const auto& l : first->report.languages) os << ',' << l;
    os << ",avg\n";
    for (const auto& c : cells) {
        if (!c.ok) continue;
        const auto& r = c.report;
        const auto mean_avg = r.mean_language_average();
        for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
            os << c.name << ",mean,R@" << r.ks[ki];
            for (const auto& l : r.languages) os << ',' << r.mean(l, ki);
            os << ',' << mean_avg[ki] << '\n';
        }
        for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
            os << c.name << ",std,R@" << r.ks[ki];
            for (const auto& l : r.languages) os << ',' << r.stddev(l, ki);
            double acc = 0.0;
            for (const auto& run : r.runs) {
                const double d = run.language_average()[ki] - mean_avg[ki];
                acc += d * d;
            }
            os << ',' << std::sqrt(acc / static_cast<double>(r.runs.size())) << '\n';
        }
    }
}

// Runs every cell (in parallel worker slots) into out_dir/<name>, then joins
// the completed reports into out_dir/sweep.csv and writes a top-level
// manifest. Throws after the join if any cell failed.
inline SweepResult run_sweep(const SweepPlan& plan, const std::filesystem::path& out_dir, std::size_t jobs = 0) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    SweepResult result;
    result.out_dir = out_dir;
    result.cells.resize(plan.cells.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= plan.cells.size()) return;
            SweepCellResult& r = result.cells[i];
            r.name = plan.cells[i].name;
            try {
                r.report = run_experiment(plan.cells[i].config, out_dir / plan.cells[i].name).report;
                r.ok = true;
            } catch (const std::exception& e) {
                r.ok = false;
                r.error = e.what();
            }
        }
    };
    const std::size_t slots = sweep_worker_slots(jobs, plan.cells.size());
    std::vector<std::thread> threads;
    threads.reserve(slots);
    for (std::size_t i = 0; i < slots; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    std::ostringstream csv;
    sweep_csv(result.cells, csv);
    detail::write_file_bytes((out_dir / "sweep.csv").string(), csv.str());

    Manifest manifest;
    std::vector<std::string> paths = {"sweep.csv"};
    for (const auto& c : plan.cells) paths.push_back(c.name + "/manifest.json");
    result.all_ok = true;
    std::string errors;
    for (const auto& c : result.cells)
        if (!c.ok) {
            result.all_ok = false;
            if (!errors.empty()) errors += "; ";
            errors += c.name + ": " + c.error;
        }
    manifest.complete = result.all_ok;
    if (!result.all_ok) {
        manifest.failed_stage = "sweep";
        manifest.error = errors;
    }
    manifest.artifacts = detail::hash_artifacts(out_dir, std::move(paths));
    detail::write_file_bytes((out_dir / "manifest.json").string(), manifest.to_json().dump(2) + "\n");

    if (!result.all_ok) throw std::runtime_error("sweep failed: " + errors);
    return result;
}

}  // namespace c2kd
