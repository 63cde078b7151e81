#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "c2kd/errors.hpp"
#include "c2kd/kernel.hpp"
#include "c2kd/tensor.hpp"

// Batch losses over text-video similarity matrices: the contrastive loss,
// its soft-target cross-entropy generalization, the teacher distillation
// loss, the blended objective, and the regression-style distillation
// alternatives used for ablations.

namespace c2kd {

// B x B cosine similarities; entry (i, j) scores text i against video j.
struct SimilarityMatrix {
    Tensor2D scores;
    std::string language;
    std::vector<std::uint64_t> ids;

    std::size_t batch() const { return scores.rows; }
};

// Row-stochastic B x B target matrix.
struct TargetDistribution {
    Tensor2D p;

    void validate() const {
        for (std::size_t r = 0; r < p.rows; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < p.cols; ++c) {
                if (p(r, c) < 0.0 || p(r, c) > 1.0)
                    throw InputError("target distribution entry out of [0,1] at row " + std::to_string(r));
                sum += p(r, c);
            }
            if (std::abs(sum - 1.0) > 1e-9)
                throw InputError("target distribution row " + std::to_string(r) + " sums to " +
                                 std::to_string(sum));
        }
    }
};

inline TargetDistribution one_hot_targets(std::size_t batch) {
    TargetDistribution t{Tensor2D(batch, batch)};
    for (std::size_t i = 0; i < batch; ++i) t.p(i, i) = 1.0;
    return t;
}

// Soft targets: row-softmax of a (teacher) score matrix at temperature tau.
inline TargetDistribution soft_targets(const SimilarityMatrix& s, double tau) {
    return TargetDistribution{softmax_rows(s.scores, tau)};
}

// S = T V^T over row-normalized embedding matrices.
inline SimilarityMatrix similarity_matrix(const Tensor2D& text_embs, const Tensor2D& video_embs,
                                          std::string language = {}, std::vector<std::uint64_t> ids = {}) {
    if (text_embs.rows != video_embs.rows)
        throw ShapeError("similarity_matrix: batch sizes differ, " + std::to_string(text_embs.rows) +
                         " texts vs " + std::to_string(video_embs.rows) + " videos");
    if (text_embs.cols != video_embs.cols)
        throw ShapeError("similarity_matrix: embedding dims differ, " + text_embs.shape_str() + " vs " +
                         video_embs.shape_str());
    auto check_unit = [](const Tensor2D& m, const char* side) {
        for (std::size_t r = 0; r < m.rows; ++r) {
            const double n = row_norm(m, r);
            if (std::abs(n - 1.0) > 1e-6)
                throw InputError(std::string("similarity_matrix: ") + side + " row " + std::to_string(r) +
                                 " has norm " + std::to_string(n) + ", expected unit");
        }
    };
    check_unit(text_embs, "text");
    check_unit(video_embs, "video");
    return {matmul(text_embs, transpose(video_embs)), std::move(language), std::move(ids)};
}

namespace detail {

// Row-wise log-softmax of scores / tau, max-stabilized.
inline Tensor2D log_softmax_rows(const Tensor2D& s, double tau) {
    Tensor2D out(s.rows, s.cols);
    for (std::size_t r = 0; r < s.rows; ++r) {
        double mx = s(r, 0) / tau;
        for (std::size_t c = 1; c < s.cols; ++c) mx = std::max(mx, s(r, c) / tau);
        double sum = 0.0;
        for (std::size_t c = 0; c < s.cols; ++c) sum += std::exp(s(r, c) / tau - mx);
        const double lse = mx + std::log(sum);
        for (std::size_t c = 0; c < s.cols; ++c) out(r, c) = s(r, c) / tau - lse;
    }
    return out;
}

}  // namespace detail

// Contrastive loss, text -> video direction: the diagonal entry of each row
// is the positive, every other column the in-batch negative.
inline double nce_loss(const SimilarityMatrix& s, double tau) {
    if (!(tau > 0.0)) throw ParamError("nce_loss: temperature must be positive");
    const Tensor2D lsm = detail::log_softmax_rows(s.scores, tau);
    double loss = 0.0;
    for (std::size_t i = 0; i < s.batch(); ++i) loss -= lsm(i, i);
    return loss;
}

// d nce_loss / d scores = (Q - I) / tau with Q = softmax_rows(scores, tau).
inline Tensor2D nce_loss_grad(const SimilarityMatrix& s, double tau) {
    if (!(tau > 0.0)) throw ParamError("nce_loss_grad: temperature must be positive");
    Tensor2D g = softmax_rows(s.scores, tau);
    for (std::size_t i = 0; i < s.batch(); ++i) g(i, i) -= 1.0;
    g *= 1.0 / tau;
    return g;
}

// Cross entropy between an arbitrary row-stochastic target and the
// row-softmax of the scores. With one-hot targets this equals nce_loss.
inline double cross_entropy_soft(const TargetDistribution& p, const SimilarityMatrix& s, double tau) {
    if (!(tau > 0.0)) throw ParamError("cross_entropy_soft: temperature must be positive");
    if (!p.p.same_shape(s.scores))
        throw ShapeError("cross_entropy_soft: target " + p.p.shape_str() + " vs scores " + s.scores.shape_str());
    p.validate();
    const Tensor2D lsm = detail::log_softmax_rows(s.scores, tau);
    double loss = 0.0;
    for (std::size_t i = 0; i < lsm.data.size(); ++i) loss -= p.p.data[i] * lsm.data[i];
    return loss;
}

inline Tensor2D cross_entropy_soft_grad(const TargetDistribution& p, const SimilarityMatrix& s, double tau) {
    Tensor2D g = softmax_rows(s.scores, tau);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] = (g.data[i] - p.p.data[i]) / tau;
    return g;
}

// Distillation loss: cross entropy between the soft targets derived from the
// pooled teacher scores and the student's match distribution. One
// temperature parameterizes both sides; the teacher matrix carries no
// gradient.
inline double c2kd_loss(const SimilarityMatrix& student, const SimilarityMatrix& teacher_pooled,
                        double tau_prime) {
    if (student.batch() != teacher_pooled.batch())
        throw ShapeError("c2kd_loss: student batch " + std::to_string(student.batch()) + " vs teacher " +
                         std::to_string(teacher_pooled.batch()));
    return cross_entropy_soft(soft_targets(teacher_pooled, tau_prime), student, tau_prime);
}

inline Tensor2D c2kd_loss_grad(const SimilarityMatrix& student, const SimilarityMatrix& teacher_pooled,
                               double tau_prime) {
    if (student.batch() != teacher_pooled.batch())
        throw ShapeError("c2kd_loss_grad: batch mismatch");
    return cross_entropy_soft_grad(soft_targets(teacher_pooled, tau_prime), student, tau_prime);
}

struct LanguageLoss {
    std::string language;
    double nce = 0.0;
    double c2kd = 0.0;
};

struct LossBreakdown {
    double total = 0.0;
    double nce = 0.0;
    double c2kd = 0.0;
    std::vector<LanguageLoss> per_language;
    double alpha = 1.0;
};

// Blended objective over the per-language student matrices:
//   total = alpha * sum_l nce(S^l) + (1 - alpha) * sum_l c2kd(S^l, S')
// Per-language losses are summed, not averaged.
inline LossBreakdown combined_loss(const std::vector<SimilarityMatrix>& s_per_language,
                                   const SimilarityMatrix& teacher_pooled, double tau, double tau_prime,
                                   double alpha) {
    if (s_per_language.empty()) throw ParamError("combined_loss: at least one language matrix required");
    if (!(alpha >= 0.0 && alpha <= 1.0))
        throw ParamError("combined_loss: alpha must lie in [0,1], got " + std::to_string(alpha));
    LossBreakdown out;
    out.alpha = alpha;
    for (const auto& s : s_per_language) {
        LanguageLoss ll;
        ll.language = s.language;
        ll.nce = nce_loss(s, tau);
        ll.c2kd = c2kd_loss(s, teacher_pooled, tau_prime);
        out.nce += ll.nce;
        out.c2kd += ll.c2kd;
        out.per_language.push_back(std::move(ll));
    }
    out.total = alpha * out.nce + (1.0 - alpha) * out.c2kd;
    return out;
}

// Regression-style distillation used in the objective ablation: elementwise
// Smooth L1 between the two score matrices, averaged over entries. The
// quadratic/linear transition sits at |residual| = 1. When normalize_first
// is set both matrices are row-softmaxed at tau_prime before the residual.
inline double smooth_l1_distill(const SimilarityMatrix& student, const SimilarityMatrix& teacher_pooled,
                                bool normalize_first, double tau_prime = 0.1) {
    if (!student.scores.same_shape(teacher_pooled.scores))
        throw ShapeError("smooth_l1_distill: " + student.scores.shape_str() + " vs " +
                         teacher_pooled.scores.shape_str());
    const Tensor2D a = normalize_first ? softmax_rows(student.scores, tau_prime) : student.scores;
    const Tensor2D b = normalize_first ? softmax_rows(teacher_pooled.scores, tau_prime) : teacher_pooled.scores;
    double loss = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double r = std::abs(a.data[i] - b.data[i]);
        loss += r < 1.0 ? 0.5 * r * r : r - 0.5;
    }
    return loss / static_cast<double>(a.data.size());
}

inline Tensor2D smooth_l1_distill_grad(const SimilarityMatrix& student, const SimilarityMatrix& teacher_pooled,
                                       bool normalize_first, double tau_prime = 0.1) {
    if (!student.scores.same_shape(teacher_pooled.scores))
        throw ShapeError("smooth_l1_distill_grad: shape mismatch");
    const Tensor2D a = normalize_first ? softmax_rows(student.scores, tau_prime) : student.scores;
    const Tensor2D b = normalize_first ? softmax_rows(teacher_pooled.scores, tau_prime) : teacher_pooled.scores;
    const double inv_n = 1.0 / static_cast<double>(a.data.size());
    Tensor2D da(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double r = a.data[i] - b.data[i];
        da.data[i] = inv_n * std::clamp(r, -1.0, 1.0);
    }
    if (!normalize_first) return da;
    return softmax_rows_vjp(a, da, tau_prime);
}

}  // namespace c2kd
