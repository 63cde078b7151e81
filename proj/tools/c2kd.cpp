// Command-line front end for the C2KD pipeline: corpus generation, teacher
// and student training, retrieval evaluation, ablation sweeps, gradient
// checking, and the library invariant suite.

#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "c2kd/c2kd.hpp"

namespace {

void apply_seed_override(c2kd::ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds) {
    if (!seeds.empty()) cfg.seeds = seeds;
}

void print_manifest_line(const c2kd::ExperimentResult& r) {
    std::cout << "wrote " << (r.out_dir / "manifest.json").string() << " ("
              << (r.manifest.complete ? "complete" : "incomplete") << ", " << r.manifest.artifacts.size()
              << " artifacts)\n";
}

// Full-objective gradient check at probe scale: both encoders, two
// languages, two frozen teachers, every pooler kind.
int run_grad_check(double step, double tolerance) {
    c2kd::SyntheticSpec spec;
    spec.n_records = 16;
    spec.concept_dim = 6;
    spec.languages = {{"en", 0.1}, {"xx", 0.4}};
    spec.text_dim = 10;
    spec.video_dim = 12;
    spec.seed = 99;
    const c2kd::Corpus corpus = c2kd::generate_synthetic(spec);
    const c2kd::Split split = c2kd::make_split(corpus, 16, 0, 0, 5);

    c2kd::EncoderDims dims;
    dims.text_dim = corpus.text_dim;
    dims.video_dim = corpus.video_dim;
    dims.embed_dim = 8;

    c2kd::TrainConfig cfg;
    cfg.languages = {"en", "xx"};
    cfg.batch_size = 4;
    cfg.alpha = 0.5;
    const auto batches = c2kd::epoch_batches(corpus, split.train, cfg.batch_size, cfg.languages, 3, 0);
    const c2kd::Batch& batch = batches.front();

    c2kd::TeacherEnsemble teachers;
    for (std::uint64_t s : {71ull, 72ull}) {
        c2kd::ModelParams t = c2kd::init_model(dims, s);
        t.frozen = true;
        teachers.members.push_back(std::move(t));
    }

    bool ok = true;
    for (c2kd::PoolerKind kind : {c2kd::PoolerKind::Mean, c2kd::PoolerKind::Max, c2kd::PoolerKind::Min,
                                  c2kd::PoolerKind::PerTeacher}) {
        cfg.pooler = kind;
        teachers.pooler = kind;
        c2kd::ModelParams model = c2kd::init_model(dims, 31);
        auto params = model.params();
        c2kd::Gradients grads = c2kd::Gradients::zeros_for(std::span<const c2kd::ParamRef>(params));
        c2kd::compute_batch_loss(model, batch, cfg, &teachers, &grads);
        const double err = c2kd::grad_check(
            std::span<const c2kd::ParamRef>(params),
            [&] { return c2kd::compute_batch_loss(model, batch, cfg, &teachers, nullptr).total; }, grads, step);
        const bool pass = err < tolerance;
        ok = ok && pass;
        std::cout << (pass ? "PASS" : "FAIL") << " pooler=" << c2kd::to_string(kind)
                  << " max_rel_error=" << err << "\n";
    }
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-lingual cross-modal distillation for multilingual text-video retrieval"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string format = "table";
    std::vector<std::uint64_t> seeds;
    std::size_t jobs = 0;
    double step = 1e-5;
    double tolerance = 1e-4;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "Experiment config JSON")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "Output directory")->required();
    };
    auto add_seeds = [&](CLI::App* sub) {
        sub->add_option("--seeds", seeds, "Run seeds, overriding the config")->delimiter(',');
    };
    auto add_format = [&](CLI::App* sub) {
        sub->add_option("--format", format, "Report output format")
            ->check(CLI::IsMember({"csv", "table"}));
    };

    CLI::App* gen = app.add_subcommand("gen-data", "Generate or load the corpus, write it plus a manifest");
    add_config(gen);
    CLI::App* teach = app.add_subcommand("train-teachers", "Run the pipeline up to the frozen teacher ensemble");
    add_config(teach);
    CLI::App* student = app.add_subcommand("train-student", "Run the pipeline up to the trained students");
    add_config(student);
    add_seeds(student);
    CLI::App* eval = app.add_subcommand("evaluate", "Run the full pipeline and print the retrieval report");
    add_config(eval);
    add_seeds(eval);
    add_format(eval);
    CLI::App* sweep = app.add_subcommand("sweep", "Run every sweep cell and join the reports");
    sweep->add_option("--config", config_path, "Sweep config JSON")->required()->check(CLI::ExistingFile);
    sweep->add_option("--out", out_dir, "Output directory")->required();
    sweep->add_option("--jobs", jobs, "Parallel worker slots (0 = hardware concurrency)");
    add_format(sweep);
    CLI::App* gradcheck = app.add_subcommand("grad-check", "Finite-difference check of the full objective");
    gradcheck->add_option("--step", step, "Central-difference step size");
    gradcheck->add_option("--tolerance", tolerance, "Maximum allowed relative error");
    CLI::App* verify = app.add_subcommand("verify", "Run the library invariant suite");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(gen)) {
            c2kd::ExperimentConfig cfg = c2kd::load_experiment_config(config_path);
            const auto r = c2kd::run_experiment(cfg, out_dir, c2kd::RunStage::Data);
            print_manifest_line(r);
        } else if (app.got_subcommand(teach)) {
            c2kd::ExperimentConfig cfg = c2kd::load_experiment_config(config_path);
            const auto r = c2kd::run_experiment(cfg, out_dir, c2kd::RunStage::Teachers);
            print_manifest_line(r);
        } else if (app.got_subcommand(student)) {
            c2kd::ExperimentConfig cfg = c2kd::load_experiment_config(config_path);
            apply_seed_override(cfg, seeds);
            const auto r = c2kd::run_experiment(cfg, out_dir, c2kd::RunStage::Students);
            print_manifest_line(r);
        } else if (app.got_subcommand(eval)) {
            c2kd::ExperimentConfig cfg = c2kd::load_experiment_config(config_path);
            apply_seed_override(cfg, seeds);
            const auto r = c2kd::run_experiment(cfg, out_dir, c2kd::RunStage::Eval);
            if (format == "csv")
                c2kd::report_csv(r.report, std::cout);
            else
                c2kd::report_table(r.report, std::cout);
            print_manifest_line(r);
        } else if (app.got_subcommand(sweep)) {
            const c2kd::SweepPlan plan = c2kd::load_sweep_config(config_path);
            const auto r = c2kd::run_sweep(plan, out_dir, jobs);
            if (format == "csv") {
                c2kd::sweep_csv(r.cells, std::cout);
            } else {
                for (const auto& cell : r.cells) {
                    std::cout << "[" << cell.name << "]\n";
                    c2kd::report_table(cell.report, std::cout);
                }
            }
            std::cout << "wrote " << (r.out_dir / "sweep.csv").string() << "\n";
        } else if (app.got_subcommand(gradcheck)) {
            return run_grad_check(step, tolerance);
        } else if (app.got_subcommand(verify)) {
            const auto checks = c2kd::run_verification();
            for (const auto& c : checks) {
                std::cout << (c.pass ? "PASS " : "FAIL ") << c.name;
                if (!c.pass) std::cout << ": " << c.detail;
                std::cout << "\n";
            }
            return c2kd::all_passed(checks) ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
