#pragma once

#include <cstdlib>
#include <filesystem>
#include <unistd.h>
#include <functional>
#include <string>
#include <vector>

#include "c2kd/c2kd.hpp"

// Shared fixtures for the unit tests: deterministic random inputs, a
// finite-difference probe for vjp checks, small synthetic corpora and a
// scratch-directory guard.

namespace testutil {

inline c2kd::Tensor2D random_tensor(std::size_t r, std::size_t c, c2kd::Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
    c2kd::Tensor2D t(r, c);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Random matrix with entries in [-1, 1], packaged as similarity scores.
inline c2kd::SimilarityMatrix random_scores(std::size_t b, c2kd::Rng& rng) {
    return {random_tensor(b, b, rng), "en", {}};
}

// Unit-row matrix of shape r x c.
inline c2kd::Tensor2D random_unit_rows(std::size_t r, std::size_t c, c2kd::Rng& rng) {
    c2kd::Tensor2D t = random_tensor(r, c, rng);
    return c2kd::l2_normalize_rows(t);
}

// Central-difference gradient of scalar_fn with respect to x, probing one
// entry at a time.
inline c2kd::Tensor2D numeric_grad(const std::function<double(const c2kd::Tensor2D&)>& scalar_fn,
                                   const c2kd::Tensor2D& x, double h = 1e-6) {
    c2kd::Tensor2D g(x.rows, x.cols);
    c2kd::Tensor2D probe = x;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        probe.data[i] = x.data[i] + h;
        const double fp = scalar_fn(probe);
        probe.data[i] = x.data[i] - h;
        const double fm = scalar_fn(probe);
        probe.data[i] = x.data[i];
        g.data[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

inline double max_abs_diff(const c2kd::Tensor2D& a, const c2kd::Tensor2D& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline double max_rel_diff(const c2kd::Tensor2D& a, const c2kd::Tensor2D& b, double floor = 1e-8) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const double rel = std::abs(a.data[i] - b.data[i]) /
                           std::max({std::abs(a.data[i]), std::abs(b.data[i]), floor});
        m = std::max(m, rel);
    }
    return m;
}

// Two-language synthetic corpus with noisier non-English captions.
inline c2kd::SyntheticSpec small_spec(std::size_t n_records, std::uint64_t seed = 7701) {
    c2kd::SyntheticSpec spec;
    spec.n_records = n_records;
    spec.concept_dim = 6;
    spec.languages = {{"en", 0.1}, {"xx", 0.5}};
    spec.text_dim = 10;
    spec.video_dim = 12;
    spec.tokens_per_caption = 3;
    spec.frames_per_video = 3;
    spec.seed = seed;
    return spec;
}

inline c2kd::EncoderDims small_dims(const c2kd::SyntheticSpec& spec, std::size_t embed = 8) {
    c2kd::EncoderDims dims;
    dims.text_dim = spec.text_dim;
    dims.video_dim = spec.video_dim;
    dims.embed_dim = embed;
    return dims;
}

// Scratch directory removed at scope exit.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path = std::filesystem::temp_directory_path() /
               ("c2kd_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    std::string str() const { return path.string(); }
};

}  // namespace testutil
