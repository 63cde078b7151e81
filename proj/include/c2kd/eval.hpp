#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "c2kd/data.hpp"
#include "c2kd/errors.hpp"
#include "c2kd/model.hpp"
#include "c2kd/tensor.hpp"

// Text-to-video retrieval inference and metrics: cosine ranking, R@K, and
// cross-run aggregation into a per-language report.

namespace c2kd {

// Indices of `scores` sorted descending; equal scores keep ascending index
// order so rankings are deterministic.
inline std::vector<std::size_t> argsort_desc_stable(const std::vector<double>& scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

// Ranks the N candidate videos for one query by descending dot product.
inline std::vector<std::size_t> rank_videos(const Tensor2D& query_emb, const Tensor2D& video_embs) {
    if (video_embs.rows == 0) throw InputError("rank_videos: empty candidate set");
    if (query_emb.rows != 1 || query_emb.cols != video_embs.cols)
        throw ShapeError("rank_videos: query " + query_emb.shape_str() + " vs candidates " +
                         video_embs.shape_str());
    std::vector<double> scores(video_embs.rows);
    for (std::size_t i = 0; i < video_embs.rows; ++i)
        scores[i] = dot(query_emb.row(0), video_embs.row(i), video_embs.cols);
    return argsort_desc_stable(scores);
}

// Percentage of queries whose ground-truth candidate appears in the top K.
inline double recall_at_k(const std::vector<std::vector<std::size_t>>& rankings,
                          const std::vector<std::size_t>& ground_truth, std::size_t k) {
    if (rankings.size() != ground_truth.size())
        throw ParamError("recall_at_k: " + std::to_string(rankings.size()) + " rankings vs " +
                         std::to_string(ground_truth.size()) + " ground-truth entries");
    if (rankings.empty()) throw InputError("recall_at_k: no queries");
    if (k < 1) throw ParamError("recall_at_k: K must be >= 1");
    std::size_t hits = 0;
    for (std::size_t q = 0; q < rankings.size(); ++q) {
        const auto& r = rankings[q];
        if (k > r.size())
            throw ParamError("recall_at_k: K=" + std::to_string(k) + " exceeds " + std::to_string(r.size()) +
                             " candidates");
        if (ground_truth[q] >= r.size())
            throw InputError("recall_at_k: ground truth " + std::to_string(ground_truth[q]) +
                             " out of range for query " + std::to_string(q));
        for (std::size_t j = 0; j < k; ++j)
            if (r[j] == ground_truth[q]) {
                ++hits;
                break;
            }
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(rankings.size());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct LanguageRecalls {
    std::string language;
    std::vector<double> at_k;  // aligned with the report's K list
};

struct RunResult {
    std::vector<LanguageRecalls> per_language;

    const LanguageRecalls* find(const std::string& language) const {
        for (const auto& lr : per_language)
            if (lr.language == language) return &lr;
        return nullptr;
    }

    // Arithmetic mean over languages at each K.
    std::vector<double> language_average() const {
        if (per_language.empty()) return {};
        std::vector<double> avg(per_language[0].at_k.size(), 0.0);
        for (const auto& lr : per_language)
            for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += lr.at_k[i];
        for (double& v : avg) v /= static_cast<double>(per_language.size());
        return avg;
    }
};

struct RetrievalReport {
    std::vector<std::size_t> ks;
    std::vector<std::string> languages;
    std::vector<RunResult> runs;

    // Cross-run mean / population standard deviation for one language + K.
    double mean(const std::string& language, std::size_t k_index) const {
        double s = 0.0;
        for (const auto& r : runs) s += r.find(language)->at_k[k_index];
        return s / static_cast<double>(runs.size());
    }
    double stddev(const std::string& language, std::size_t k_index) const {
        const double mu = mean(language, k_index);
        double s = 0.0;
        for (const auto& r : runs) {
            const double d = r.find(language)->at_k[k_index] - mu;
            s += d * d;
        }
        return std::sqrt(s / static_cast<double>(runs.size()));
    }
    std::vector<double> mean_language_average() const {
        std::vector<double> avg(ks.size(), 0.0);
        for (const auto& r : runs) {
            const auto a = r.language_average();
            for (std::size_t i = 0; i < ks.size(); ++i) avg[i] += a[i];
        }
        for (double& v : avg) v /= static_cast<double>(runs.size());
        return avg;
    }
};

// Evaluates one trained model on one id set: every video embedded once, then
// each language's captions are ranked against the full candidate list.
inline RunResult evaluate_run(const ModelParams& model, const Corpus& corpus,
                              const std::vector<std::uint64_t>& eval_ids,
                              const std::vector<std::string>& languages,
                              const std::vector<std::size_t>& ks) {
    if (eval_ids.empty()) throw InputError("evaluate_run: empty evaluation split");
    if (languages.empty()) throw InputError("evaluate_run: no languages requested");
    if (ks.empty()) throw ParamError("evaluate_run: no K values requested");

    std::vector<const CorpusRecord*> records;
    records.reserve(eval_ids.size());
    for (auto id : eval_ids) records.push_back(&corpus.record_by_id(id));

    Tensor2D video_embs(records.size(), model.video.embed_dim);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const Tensor2D e = embed_video(records[i]->frames, model.video);
        std::copy(e.data.begin(), e.data.end(), video_embs.row(i));
    }

    RunResult out;
    for (const auto& lang : languages) {
        std::vector<std::vector<std::size_t>> rankings;
        rankings.reserve(records.size());
        std::vector<std::size_t> ground_truth;
        ground_truth.reserve(records.size());
        for (std::size_t i = 0; i < records.size(); ++i) {
            const Tensor2D* caption = records[i]->caption(lang);
            if (!caption)
                throw DataError("record " + std::to_string(records[i]->id) + " has no caption in language " +
                                lang);
            rankings.push_back(rank_videos(embed_text(*caption, model.text), video_embs));
            ground_truth.push_back(i);
        }
        LanguageRecalls lr;
        lr.language = lang;
        for (std::size_t k : ks) lr.at_k.push_back(recall_at_k(rankings, ground_truth, k));
        out.per_language.push_back(std::move(lr));
    }
    return out;
}

// Aggregates several trained runs (e.g. three seeds) into one report.
inline RetrievalReport evaluate_retrieval(const std::vector<const ModelParams*>& runs, const Corpus& corpus,
                                          const std::vector<std::uint64_t>& eval_ids,
                                          const std::vector<std::string>& languages,
                                          const std::vector<std::size_t>& ks = {1, 5, 10}) {
    if (runs.empty()) throw InputError("evaluate_retrieval: no runs provided");
    RetrievalReport report;
    report.ks = ks;
    report.languages = languages;
    for (const ModelParams* m : runs) report.runs.push_back(evaluate_run(*m, corpus, eval_ids, languages, ks));
    return report;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt_fixed(double v, int precision = 2) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(precision) << v;
    return ss.str();
}

}  // namespace detail

// One row per (run, K) plus mean and std rows; columns are languages + avg.
inline void report_csv(const RetrievalReport& r, std::ostream& os) {
    os << "run,metric";
    for (const auto& l : r.languages) os << ',' << l;
    os << ",avg\n";
    for (std::size_t run = 0; run < r.runs.size(); ++run) {
        const auto avg = r.runs[run].language_average();
        for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
            os << run << ",R@" << r.ks[ki];
            for (const auto& l : r.languages) os << ',' << r.runs[run].find(l)->at_k[ki];
            os << ',' << avg[ki] << '\n';
        }
    }
    const auto mean_avg = r.mean_language_average();
    for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
        os << "mean,R@" << r.ks[ki];
        for (const auto& l : r.languages) os << ',' << r.mean(l, ki);
        os << ',' << mean_avg[ki] << '\n';
    }
    for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
        os << "std,R@" << r.ks[ki];
        for (const auto& l : r.languages) os << ',' << r.stddev(l, ki);
        double acc = 0.0;
        for (const auto& run : r.runs) {
            const double d = run.language_average()[ki] - mean_avg[ki];
            acc += d * d;
        }
        os << ',' << std::sqrt(acc / static_cast<double>(r.runs.size())) << '\n';
    }
}

inline void report_table(const RetrievalReport& r, std::ostream& os) {
    const std::size_t w = 9;
    os << std::left << std::setw(10) << "metric";
    for (const auto& l : r.languages) os << std::right << std::setw(w) << l;
    os << std::right << std::setw(w) << "avg" << '\n';
    const auto mean_avg = r.mean_language_average();
    for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
        os << std::left << std::setw(10) << ("R@" + std::to_string(r.ks[ki]));
        for (const auto& l : r.languages)
            os << std::right << std::setw(w) << detail::fmt_fixed(r.mean(l, ki));
        os << std::right << std::setw(w) << detail::fmt_fixed(mean_avg[ki]) << '\n';
    }
    if (r.runs.size() > 1) {
        for (std::size_t ki = 0; ki < r.ks.size(); ++ki) {
            os << std::left << std::setw(10) << ("sd R@" + std::to_string(r.ks[ki]));
            for (const auto& l : r.languages)
                os << std::right << std::setw(w) << detail::fmt_fixed(r.stddev(l, ki));
            os << std::right << std::setw(w) << "" << '\n';
        }
    }
}

}  // namespace c2kd
