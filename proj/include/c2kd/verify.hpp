#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "c2kd/data.hpp"
#include "c2kd/distill.hpp"
#include "c2kd/eval.hpp"
#include "c2kd/kernel.hpp"
#include "c2kd/model.hpp"
#include "c2kd/objectives.hpp"
#include "c2kd/rng.hpp"
#include "c2kd/train.hpp"

// Self-contained invariant suite behind the `verify` subcommand: each check
// exercises one library-level guarantee on freshly generated random inputs
// and reports pass/fail with a diagnostic.

namespace c2kd {

struct VerifyCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace detail {

inline Tensor2D random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0) {
    Tensor2D t(rows, cols);
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

inline SimilarityMatrix random_similarity(std::size_t b, Rng& rng) {
    SimilarityMatrix s;
    s.scores = random_tensor(b, b, rng);
    return s;
}

// A small corpus + model + batch shared by the heavier checks.
struct VerifyFixture {
    Corpus corpus;
    Split split;
    EncoderDims dims;
    TrainConfig cfg;
    Batch batch;
    std::vector<Batch> batches;

    VerifyFixture() {
        SyntheticSpec spec;
        spec.n_records = 24;
        spec.concept_dim = 6;
        spec.languages = {{"en", 0.1}, {"xx", 0.4}};
        spec.text_dim = 10;
        spec.video_dim = 12;
        spec.seed = 99;
        corpus = generate_synthetic(spec);
        split = make_split(corpus, 16, 0, 8, 5);
        dims.text_dim = corpus.text_dim;
        dims.video_dim = corpus.video_dim;
        dims.embed_dim = 8;
        dims.video_attention = true;
        dims.attn_layers = 1;
        dims.attn_heads = 2;
        cfg.languages = {"en", "xx"};
        cfg.batch_size = 4;
        cfg.epochs = 1;
        cfg.lr = 1e-3;
        cfg.seed = 3;
        batches = epoch_batches(corpus, split.train, cfg.batch_size, cfg.languages, cfg.seed, 0);
        batch = batches.front();
    }
};

}  // namespace detail

inline std::vector<VerifyCheck> run_verification() {
    std::vector<VerifyCheck> checks;
    auto run = [&](const std::string& name, const std::function<std::string()>& body) {
        VerifyCheck c;
        c.name = name;
        try {
            c.detail = body();  // empty string = pass
            c.pass = c.detail.empty();
        } catch (const std::exception& e) {
            c.pass = false;
            c.detail = std::string("exception: ") + e.what();
        }
        checks.push_back(std::move(c));
    };

    run("softmax rows are a distribution", [] {
        Rng rng(1);
        for (int trial = 0; trial < 50; ++trial) {
            const Tensor2D x = detail::random_tensor(4, 7, rng, 3.0);
            const Tensor2D y = softmax_rows(x, 0.1);
            for (std::size_t r = 0; r < y.rows; ++r) {
                double sum = 0.0;
                for (std::size_t c = 0; c < y.cols; ++c) {
                    if (y(r, c) <= 0.0 || y(r, c) > 1.0) return std::string("entry outside (0,1]");
                    sum += y(r, c);
                }
                if (std::abs(sum - 1.0) > 1e-12)
                    return "row sum off by " + std::to_string(std::abs(sum - 1.0));
            }
        }
        return std::string();
    });

    run("l2 normalization yields unit rows", [] {
        Rng rng(2);
        for (int trial = 0; trial < 50; ++trial) {
            const Tensor2D y = l2_normalize_rows(detail::random_tensor(5, 9, rng, 2.0));
            for (std::size_t r = 0; r < y.rows; ++r)
                if (std::abs(row_norm(y, r) - 1.0) > 1e-12) return std::string("non-unit row after normalize");
        }
        return std::string();
    });

    run("contrastive loss equals one-hot cross entropy", [] {
        Rng rng(3);
        double worst = 0.0;
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t b = 2 + rng.uniform_index(7);
            const SimilarityMatrix s = detail::random_similarity(b, rng);
            for (double tau : {0.05, 0.1, 1.0})
                worst = std::max(worst,
                                 std::abs(nce_loss(s, tau) - cross_entropy_soft(one_hot_targets(b), s, tau)));
        }
        return worst < 1e-9 ? std::string() : "max deviation " + std::to_string(worst);
    });

    run("pooler ordering and identity laws", [] {
        Rng rng(4);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t m = 1 + rng.uniform_index(5);
            const std::size_t b = 2 + rng.uniform_index(7);
            std::vector<SimilarityMatrix> mats;
            for (std::size_t i = 0; i < m; ++i) mats.push_back(detail::random_similarity(b, rng));
            const auto mn = pool_teacher_matrices(mats, PoolerKind::Min);
            const auto me = pool_teacher_matrices(mats, PoolerKind::Mean);
            const auto mx = pool_teacher_matrices(mats, PoolerKind::Max);
            for (std::size_t e = 0; e < mn.scores.data.size(); ++e)
                if (!(mn.scores.data[e] <= me.scores.data[e] && me.scores.data[e] <= mx.scores.data[e]))
                    return std::string("min <= mean <= max violated");
            if (m == 1 && !(mn.scores == mats[0].scores && mx.scores == mats[0].scores))
                return std::string("single-teacher pooling is not the identity");
        }
        return std::string();
    });

    run("adam zero-gradient step leaves parameters fixed", [] {
        Rng rng(5);
        Tensor2D theta = detail::random_tensor(3, 3, rng);
        const Tensor2D before = theta;
        std::vector<ParamRef> params{{"theta", &theta}};
        Gradients g = Gradients::zeros_for(std::span<const ParamRef>(params));
        OptimizerState st = OptimizerState::zeros_for(std::span<const ParamRef>(params));
        adam_step(std::span<const ParamRef>(params), g, st, 1e-3);
        if (!(theta == before)) return std::string("parameters moved under zero gradient");
        if (st.step != 1) return std::string("step counter did not advance");
        return std::string();
    });

    run("adam descends a convex quadratic", [] {
        for (double lr : {1e-4, 1e-3, 1e-2}) {
            Tensor2D theta{{1.5}};
            std::vector<ParamRef> params{{"theta", &theta}};
            Gradients g = Gradients::zeros_for(std::span<const ParamRef>(params));
            OptimizerState st = OptimizerState::zeros_for(std::span<const ParamRef>(params));
            const double before = theta(0, 0) * theta(0, 0);
            g[0](0, 0) = 2.0 * theta(0, 0);
            adam_step(std::span<const ParamRef>(params), g, st, lr);
            if (!(theta(0, 0) * theta(0, 0) < before))
                return "no descent at lr " + std::to_string(lr);
        }
        return std::string();
    });

    run("checkpoint round-trips bitwise", [] {
        EncoderDims dims;
        dims.text_dim = 10;
        dims.video_dim = 12;
        dims.embed_dim = 8;
        dims.video_attention = true;
        dims.attn_layers = 1;
        dims.attn_heads = 2;
        ModelParams m = init_model(dims, 77);
        const std::string bytes = serialize_model(m);
        const ModelParams back = deserialize_model(bytes);
        return serialize_model(back) == bytes ? std::string() : std::string("re-serialization differs");
    });

    run("corpus round-trips bitwise", [] {
        SyntheticSpec spec;
        spec.n_records = 12;
        spec.concept_dim = 5;
        spec.languages = {{"en", 0.1}, {"xx", 0.5}};
        spec.text_dim = 7;
        spec.video_dim = 9;
        spec.seed = 11;
        const Corpus c = generate_synthetic(spec);
        const std::string bytes = serialize_corpus(c);
        return serialize_corpus(deserialize_corpus(bytes)) == bytes ? std::string()
                                                                    : std::string("re-serialization differs");
    });

    run("training is deterministic", [] {
        detail::VerifyFixture f;
        const TrainResult a = train_model(f.corpus, f.split, f.dims, f.cfg, nullptr);
        const TrainResult b = train_model(f.corpus, f.split, f.dims, f.cfg, nullptr);
        if (serialize_model(a.model) != serialize_model(b.model)) return std::string("final weights differ");
        if (a.history.size() != b.history.size()) return std::string("history lengths differ");
        for (std::size_t i = 0; i < a.history.size(); ++i)
            if (a.history[i].loss.total != b.history[i].loss.total) return std::string("loss histories differ");
        return std::string();
    });

    run("embeddings are unit vectors", [] {
        detail::VerifyFixture f;
        ModelParams m = init_model(f.dims, 123);
        const Tensor2D t = embed_text_batch(f.batch.text_features("en"), m.text);
        const Tensor2D v = embed_video_batch(f.batch.video_features(), m.video);
        for (std::size_t r = 0; r < t.rows; ++r)
            if (std::abs(row_norm(t, r) - 1.0) > 1e-9) return std::string("text row not unit");
        for (std::size_t r = 0; r < v.rows; ++r)
            if (std::abs(row_norm(v, r) - 1.0) > 1e-9) return std::string("video row not unit");
        return std::string();
    });

    run("analytic gradients match finite differences", [] {
        detail::VerifyFixture f;
        // Default encoder configuration: with the attention stack enabled
        // b_k has an identically-zero gradient (softmax rows are invariant
        // to key shifts), which the relative-error formula cannot grade.
        f.dims.video_attention = false;
        ModelParams model = init_model(f.dims, 31);
        TrainConfig cfg = f.cfg;
        cfg.alpha = 0.5;
        TeacherEnsemble teachers;
        teachers.pooler = PoolerKind::Min;
        for (std::uint64_t s : {71ull, 72ull}) {
            ModelParams t = init_model(f.dims, s);
            t.frozen = true;
            teachers.members.push_back(std::move(t));
        }
        cfg.pooler = PoolerKind::Min;
        auto params = model.params();
        Gradients grads = Gradients::zeros_for(std::span<const ParamRef>(params));
        compute_batch_loss(model, f.batch, cfg, &teachers, &grads);
        const double err = grad_check(
            std::span<const ParamRef>(params),
            [&] { return compute_batch_loss(model, f.batch, cfg, &teachers, nullptr).total; }, grads, 1e-5);
        return err < 1e-4 ? std::string() : "max relative error " + std::to_string(err);
    });

    run("recall is monotone in K and ranking matches brute force", [] {
        Rng rng(6);
        for (int trial = 0; trial < 50; ++trial) {
            const std::size_t n = 2 + rng.uniform_index(20);
            Tensor2D cands = l2_normalize_rows(detail::random_tensor(n, 6, rng));
            Tensor2D q = l2_normalize_rows(detail::random_tensor(1, 6, rng));
            const auto perm = rank_videos(q, cands);
            std::vector<double> scores(n);
            for (std::size_t i = 0; i < n; ++i) scores[i] = dot(q.row(0), cands.row(i), 6);
            for (std::size_t i = 0; i + 1 < n; ++i) {
                if (scores[perm[i]] < scores[perm[i + 1]]) return std::string("ranking not descending");
                if (scores[perm[i]] == scores[perm[i + 1]] && perm[i] > perm[i + 1])
                    return std::string("tie-break not by ascending index");
            }
            std::vector<std::vector<std::size_t>> rankings{perm};
            std::vector<std::size_t> gt{rng.uniform_index(n)};
            double prev = 0.0;
            for (std::size_t k = 1; k <= n; ++k) {
                const double r = recall_at_k(rankings, gt, k);
                if (r + 1e-12 < prev) return std::string("recall decreased with K");
                prev = r;
            }
            if (std::abs(prev - 100.0) > 1e-12) return std::string("R@N is not 100");
        }
        return std::string();
    });

    return checks;
}

inline bool all_passed(const std::vector<VerifyCheck>& checks) {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

}  // namespace c2kd
