#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "c2kd/data.hpp"
#include "c2kd/errors.hpp"
#include "c2kd/model.hpp"
#include "c2kd/objectives.hpp"

// Teacher ensemble: M frozen encoder pairs scoring the batch on English
// captions, and the elementwise pooler collapsing their M similarity
// matrices into one.

namespace c2kd {

enum class PoolerKind { Mean, Max, Min, PerTeacher };

inline std::string to_string(PoolerKind k) {
    switch (k) {
        case PoolerKind::Mean: return "mean";
        case PoolerKind::Max: return "max";
        case PoolerKind::Min: return "min";
        case PoolerKind::PerTeacher: return "per-teacher";
    }
    return "?";
}

inline PoolerKind pooler_from_string(const std::string& s) {
    if (s == "mean") return PoolerKind::Mean;
    if (s == "max") return PoolerKind::Max;
    if (s == "min") return PoolerKind::Min;
    if (s == "per-teacher") return PoolerKind::PerTeacher;
    throw ConfigError("unknown pooler kind '" + s + "' (expected mean/max/min/per-teacher)");
}

struct TeacherEnsemble {
    std::vector<ModelParams> members;
    PoolerKind pooler = PoolerKind::Mean;

    void validate() const {
        if (members.empty()) throw ParamError("teacher ensemble must have at least one member");
        for (std::size_t i = 0; i < members.size(); ++i)
            if (!members[i].frozen)
                throw ParamError("teacher " + std::to_string(i) + " is not frozen");
    }
};

// One English text-video similarity matrix per teacher, forward-only.
inline std::vector<SimilarityMatrix> teacher_scores(const Batch& batch, const TeacherEnsemble& ensemble,
                                                    const std::string& language = "en") {
    ensemble.validate();
    const auto captions = batch.text_features(language);  // throws DataError naming the record
    const auto videos = batch.video_features();
    std::vector<SimilarityMatrix> out;
    out.reserve(ensemble.members.size());
    for (const auto& teacher : ensemble.members) {
        Tensor2D text = embed_text_batch(captions, teacher.text);
        Tensor2D video = embed_video_batch(videos, teacher.video);
        out.push_back(similarity_matrix(text, video, language, batch.ids()));
    }
    return out;
}

// Elementwise reduction across the M teacher matrices. PerTeacher mode has
// no pooled matrix; the trainer applies the distillation loss to each
// teacher matrix and sums.
inline SimilarityMatrix pool_teacher_matrices(const std::vector<SimilarityMatrix>& matrices, PoolerKind kind) {
    if (matrices.empty()) throw ParamError("pool_teacher_matrices: empty teacher list");
    if (kind == PoolerKind::PerTeacher)
        throw ParamError("pool_teacher_matrices: per-teacher mode bypasses pooling");
    for (std::size_t i = 1; i < matrices.size(); ++i)
        if (!matrices[i].scores.same_shape(matrices[0].scores))
            throw ShapeError("pool_teacher_matrices: teacher " + std::to_string(i) + " has shape " +
                             matrices[i].scores.shape_str() + " vs " + matrices[0].scores.shape_str());
    SimilarityMatrix out = matrices[0];
    const double inv_m = 1.0 / static_cast<double>(matrices.size());
    // Mean sums in sorted value order so the result is bitwise independent
    // of the teacher list order, like Min/Max trivially are.
    std::vector<double> vals(matrices.size());
    for (std::size_t e = 0; e < out.scores.data.size(); ++e) {
        if (kind == PoolerKind::Mean) {
            for (std::size_t i = 0; i < matrices.size(); ++i) vals[i] = matrices[i].scores.data[e];
            std::sort(vals.begin(), vals.end());
            double acc = 0.0;
            for (double v : vals) acc += v;
            out.scores.data[e] = acc * inv_m;
            continue;
        }
        double acc = matrices[0].scores.data[e];
        for (std::size_t i = 1; i < matrices.size(); ++i) {
            const double v = matrices[i].scores.data[e];
            acc = kind == PoolerKind::Max ? std::max(acc, v) : std::min(acc, v);
        }
        out.scores.data[e] = acc;
    }
    return out;
}

}  // namespace c2kd
