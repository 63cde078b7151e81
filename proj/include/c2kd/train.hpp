#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "c2kd/data.hpp"
#include "c2kd/distill.hpp"
#include "c2kd/errors.hpp"
#include "c2kd/kernel.hpp"
#include "c2kd/model.hpp"
#include "c2kd/objectives.hpp"
#include "c2kd/rng.hpp"

// Two-stage optimization pipeline: Adam with per-epoch exponential learning
// rate decay, teacher pretraining on the contrastive loss, then student
// training on the blended objective with frozen teachers.

namespace c2kd {

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

enum class TrainSetting { ZeroShot, TranslateTrain };

inline std::string to_string(TrainSetting s) {
    return s == TrainSetting::ZeroShot ? "zero-shot" : "translate-train";
}

inline TrainSetting setting_from_string(const std::string& s) {
    if (s == "zero-shot") return TrainSetting::ZeroShot;
    if (s == "translate-train") return TrainSetting::TranslateTrain;
    throw ConfigError("unknown training setting '" + s + "' (expected zero-shot/translate-train)");
}

// Distillation objective variants compared in the ablation sweep.
enum class DistillObjective { CrossEntropy, SmoothL1, SoftmaxSmoothL1 };

inline std::string to_string(DistillObjective o) {
    switch (o) {
        case DistillObjective::CrossEntropy: return "cross-entropy";
        case DistillObjective::SmoothL1: return "smooth-l1";
        case DistillObjective::SoftmaxSmoothL1: return "softmax-smooth-l1";
    }
    return "?";
}

inline DistillObjective objective_from_string(const std::string& s) {
    if (s == "cross-entropy") return DistillObjective::CrossEntropy;
    if (s == "smooth-l1") return DistillObjective::SmoothL1;
    if (s == "softmax-smooth-l1") return DistillObjective::SoftmaxSmoothL1;
    throw ConfigError("unknown distillation objective '" + s +
                      "' (expected cross-entropy/smooth-l1/softmax-smooth-l1)");
}

struct TrainConfig {
    double tau = 0.05;
    double tau_prime = 0.1;
    double alpha = 1.0;  // 1 = pure contrastive baseline
    PoolerKind pooler = PoolerKind::Min;
    std::size_t batch_size = 64;
    double lr = 1e-4;
    double lr_decay = 0.9;  // multiplicative, applied per epoch
    std::size_t epochs = 1;
    std::vector<std::string> languages;
    TrainSetting setting = TrainSetting::TranslateTrain;
    std::uint64_t seed = 0;
    DistillObjective objective = DistillObjective::CrossEntropy;
    // Captions the teachers score during distillation: a fixed language tag
    // (normally "en"), or "own" to score each student language's captions.
    std::string teacher_language = "en";

    void validate() const {
        if (!(tau > 0.0)) throw ConfigError("tau must be positive", "tau");
        if (!(tau_prime > 0.0)) throw ConfigError("tau_prime must be positive", "tau_prime");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0,1]", "alpha");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive", "lr");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0,1]", "lr_decay");
        if (batch_size < 2) throw ConfigError("batch_size must be >= 2", "batch_size");
        if (languages.empty()) throw ConfigError("at least one language required", "languages");
        if (alpha < 1.0 && setting == TrainSetting::ZeroShot)
            throw ConfigError("distillation (alpha < 1) requires the translate-train setting", "setting");
    }

    // Languages whose caption-video pairs enter the contrastive loss.
    std::vector<std::string> training_languages() const {
        if (setting == TrainSetting::ZeroShot) return {"en"};
        return languages;
    }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct OptimizerState {
    std::vector<Tensor2D> m;  // first moments, aligned with the parameter list
    std::vector<Tensor2D> v;  // second moments
    std::size_t step = 0;

    static OptimizerState zeros_for(std::span<const ParamRef> params) {
        OptimizerState s;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& p : params) {
            s.m.push_back(zeros_like(*p.tensor));
            s.v.push_back(zeros_like(*p.tensor));
        }
        return s;
    }
};

inline void adam_step(std::span<const ParamRef> params, const Gradients& grads, OptimizerState& state,
                      double lr_t) {
    if (!(lr_t > 0.0)) throw ParamError("adam_step: lr_t must be positive");
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ParamError("adam_step: parameter/gradient/state count mismatch");
    state.step += 1;
    const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor2D& g = grads[i];
        if (!g.all_finite())
            throw NumericError("adam_step: non-finite gradient for parameter '" + grads.records[i].param + "'");
        Tensor2D& theta = *params[i].tensor;
        if (!g.same_shape(theta))
            throw ShapeError("adam_step: gradient shape " + g.shape_str() + " vs parameter " +
                             theta.shape_str() + " for '" + grads.records[i].param + "'");
        Tensor2D& m = state.m[i];
        Tensor2D& v = state.v[i];
        for (std::size_t e = 0; e < g.data.size(); ++e) {
            m.data[e] = kAdamBeta1 * m.data[e] + (1.0 - kAdamBeta1) * g.data[e];
            v.data[e] = kAdamBeta2 * v.data[e] + (1.0 - kAdamBeta2) * g.data[e] * g.data[e];
            const double mhat = m.data[e] / bc1;
            const double vhat = v.data[e] / bc2;
            theta.data[e] -= lr_t * mhat / (std::sqrt(vhat) + kAdamEps);
        }
    }
}

// ---------------------------------------------------------------------------
// Step logging
// ---------------------------------------------------------------------------

struct StepLog {
    std::size_t step = 0;   // 1-based global step
    std::size_t epoch = 0;  // 0-based epoch index
    LossBreakdown loss;
};

struct TrainResult {
    ModelParams model;
    std::vector<StepLog> history;
};

inline void write_history_csv(const std::vector<StepLog>& history, const std::vector<std::string>& languages,
                              std::ostream& os) {
    os << "step,epoch";
    for (const auto& l : languages) os << ",nce_" << l;
    for (const auto& l : languages) os << ",c2kd_" << l;
    os << ",total\n";
    for (const auto& s : history) {
        os << s.step << ',' << s.epoch;
        auto find = [&](const std::string& lang) -> const LanguageLoss* {
            for (const auto& ll : s.loss.per_language)
                if (ll.language == lang) return &ll;
            return nullptr;
        };
        for (const auto& l : languages) {
            const LanguageLoss* ll = find(l);
            os << ',' << (ll ? ll->nce : 0.0);
        }
        for (const auto& l : languages) {
            const LanguageLoss* ll = find(l);
            os << ',' << (ll ? ll->c2kd : 0.0);
        }
        os << ',' << s.loss.total << '\n';
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace detail {

// Distillation loss and matching d(loss)/d(student scores) for one student
// matrix against one teacher matrix, under the configured objective.
inline double distill_pair(const SimilarityMatrix& student, const SimilarityMatrix& teacher,
                           const TrainConfig& cfg, Tensor2D& d_scores) {
    switch (cfg.objective) {
        case DistillObjective::CrossEntropy:
            d_scores += c2kd_loss_grad(student, teacher, cfg.tau_prime);
            return c2kd_loss(student, teacher, cfg.tau_prime);
        case DistillObjective::SmoothL1:
            d_scores += smooth_l1_distill_grad(student, teacher, false, cfg.tau_prime);
            return smooth_l1_distill(student, teacher, false, cfg.tau_prime);
        case DistillObjective::SoftmaxSmoothL1:
            d_scores += smooth_l1_distill_grad(student, teacher, true, cfg.tau_prime);
            return smooth_l1_distill(student, teacher, true, cfg.tau_prime);
    }
    throw ParamError("distill_pair: unhandled objective");
}

}  // namespace detail

// Full blended objective over one batch. With `grads` non-null the analytic
// parameter gradients are accumulated through both encoders; with null this
// is a pure forward pass (as used for finite-difference probing). Teachers
// are only evaluated when alpha < 1, so an alpha = 1 run is arithmetically
// identical to a teacher-free one.
inline LossBreakdown compute_batch_loss(const ModelParams& model, const Batch& batch, const TrainConfig& cfg,
                                        const TeacherEnsemble* teachers, Gradients* grads) {
    const std::vector<std::string> langs = cfg.training_languages();
    const bool use_distill = teachers != nullptr && cfg.alpha < 1.0;
    const bool backward = grads != nullptr;
    ModelGrads gv;
    if (backward) gv = ModelGrads::view(model, *grads);

    // Forward: shared video tower, one text pass per language.
    std::vector<VideoCache> vcaches;
    const Tensor2D video = embed_video_batch(batch.video_features(), model.video, backward ? &vcaches : nullptr);
    const auto ids = batch.ids();
    std::vector<std::vector<TextCache>> tcaches(langs.size());
    std::vector<SimilarityMatrix> s_lang;
    s_lang.reserve(langs.size());
    std::vector<Tensor2D> text_embs;
    text_embs.reserve(langs.size());
    for (std::size_t li = 0; li < langs.size(); ++li) {
        Tensor2D text =
            embed_text_batch(batch.text_features(langs[li]), model.text, backward ? &tcaches[li] : nullptr);
        s_lang.push_back(similarity_matrix(text, video, langs[li], ids));
        text_embs.push_back(std::move(text));
    }

    // Teacher matrices: scored once per batch when a single caption language
    // feeds every student language, per-language otherwise.
    std::vector<SimilarityMatrix> fixed_teacher_mats;
    SimilarityMatrix fixed_pooled;
    const bool per_teacher = use_distill && cfg.pooler == PoolerKind::PerTeacher;
    if (use_distill && cfg.teacher_language != "own") {
        fixed_teacher_mats = teacher_scores(batch, *teachers, cfg.teacher_language);
        if (!per_teacher) fixed_pooled = pool_teacher_matrices(fixed_teacher_mats, cfg.pooler);
    }

    LossBreakdown out;
    out.alpha = cfg.alpha;
    Tensor2D d_video(video.rows, video.cols);
    for (std::size_t li = 0; li < langs.size(); ++li) {
        const SimilarityMatrix& s = s_lang[li];
        LanguageLoss ll;
        ll.language = langs[li];
        ll.nce = nce_loss(s, cfg.tau);
        Tensor2D d_scores = nce_loss_grad(s, cfg.tau);
        d_scores *= cfg.alpha;
        if (use_distill) {
            Tensor2D d_distill(d_scores.rows, d_scores.cols);
            if (cfg.teacher_language == "own") {
                const auto own = teacher_scores(batch, *teachers, langs[li]);
                if (per_teacher) {
                    for (const auto& t : own) ll.c2kd += detail::distill_pair(s, t, cfg, d_distill);
                } else {
                    ll.c2kd = detail::distill_pair(s, pool_teacher_matrices(own, cfg.pooler), cfg, d_distill);
                }
            } else if (per_teacher) {
                for (const auto& t : fixed_teacher_mats) ll.c2kd += detail::distill_pair(s, t, cfg, d_distill);
            } else {
                ll.c2kd = detail::distill_pair(s, fixed_pooled, cfg, d_distill);
            }
            add_scaled(d_scores, d_distill, 1.0 - cfg.alpha);
        }
        out.nce += ll.nce;
        out.c2kd += ll.c2kd;
        out.per_language.push_back(std::move(ll));

        if (backward) {
            // d(scores) -> embeddings -> encoder parameters.
            const Tensor2D d_text = matmul(d_scores, video);
            add_scaled(d_video, matmul(transpose(d_scores), text_embs[li]), 1.0);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                Tensor2D d_emb(1, d_text.cols);
                for (std::size_t c = 0; c < d_text.cols; ++c) d_emb(0, c) = d_text(i, c);
                embed_text_vjp(model.text, tcaches[li][i], d_emb, gv.text);
            }
        }
    }
    if (backward) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            Tensor2D d_emb(1, d_video.cols);
            for (std::size_t c = 0; c < d_video.cols; ++c) d_emb(0, c) = d_video(i, c);
            embed_video_vjp(model.video, vcaches[i], d_emb, gv.video);
        }
    }
    out.total = cfg.alpha * out.nce + (1.0 - cfg.alpha) * out.c2kd;
    return out;
}

// Trains one model from scratch. `teachers` may be null (pure contrastive
// baseline); when alpha = 1 the teachers are never evaluated, so the
// trajectory is bitwise identical to a teacher-free run of the same seed.
inline TrainResult train_model(const Corpus& corpus, const Split& split, const EncoderDims& dims,
                               const TrainConfig& cfg, const TeacherEnsemble* teachers) {
    cfg.validate();
    const std::vector<std::string> langs = cfg.training_languages();
    for (const auto& l : langs)
        if (!corpus.has_language(l)) throw DataError("corpus has no language " + l);
    if (cfg.alpha < 1.0 && teachers == nullptr)
        throw ConfigError("alpha < 1 requires a teacher ensemble", "alpha");
    if (teachers != nullptr && cfg.alpha < 1.0) {
        teachers->validate();
        if (cfg.teacher_language != "own" && !corpus.has_language(cfg.teacher_language))
            throw DataError("corpus has no teacher language " + cfg.teacher_language);
    }

    TrainResult out;
    out.model = init_model(dims, derive_seed(cfg.seed, {13}));
    auto params = out.model.params();
    OptimizerState opt = OptimizerState::zeros_for(params);

    std::size_t global_step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr_t = cfg.lr * std::pow(cfg.lr_decay, static_cast<double>(epoch));
        const auto batches = epoch_batches(corpus, split.train, cfg.batch_size, langs, cfg.seed, epoch);
        for (const auto& batch : batches) {
            global_step += 1;
            Gradients grads = Gradients::zeros_for(std::span<const ParamRef>(params));
            StepLog log;
            log.step = global_step;
            log.epoch = epoch;
            log.loss = compute_batch_loss(out.model, batch, cfg, teachers, &grads);
            if (!std::isfinite(log.loss.total))
                throw NumericError("training diverged: non-finite loss at step " + std::to_string(global_step));
            adam_step(params, grads, opt, lr_t);
            out.history.push_back(std::move(log));
        }
    }
    return out;
}

// Stage one: M independently seeded contrastive runs, frozen on return.
inline TeacherEnsemble train_teachers(const Corpus& corpus, const Split& split, const EncoderDims& dims,
                                      const std::vector<TrainConfig>& teacher_configs,
                                      PoolerKind pooler = PoolerKind::Min) {
    if (teacher_configs.empty()) throw ParamError("train_teachers: at least one teacher config required");
    TeacherEnsemble ensemble;
    ensemble.pooler = pooler;
    ensemble.members.reserve(teacher_configs.size());
    for (std::size_t i = 0; i < teacher_configs.size(); ++i) {
        TrainConfig cfg = teacher_configs[i];
        cfg.alpha = 1.0;  // teachers are pure contrastive models
        try {
            TrainResult r = train_model(corpus, split, dims, cfg, nullptr);
            r.model.frozen = true;
            ensemble.members.push_back(std::move(r.model));
        } catch (const NumericError& e) {
            throw NumericError("teacher " + std::to_string(i) + ": " + e.what());
        }
    }
    return ensemble;
}

// Stage two: distillation-aware student run against the frozen ensemble.
inline TrainResult train_student(const Corpus& corpus, const Split& split, const EncoderDims& dims,
                                 const TeacherEnsemble* teachers, const TrainConfig& cfg) {
    return train_model(corpus, split, dims, cfg, teachers);
}

}  // namespace c2kd
