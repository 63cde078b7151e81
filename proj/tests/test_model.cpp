#include <cmath>

#include <catch2/catch_amalgamated.hpp>

#include "helpers.hpp"

using namespace c2kd;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;

namespace {

// Text head with hand-picked weights matching the numpy-evaluated fixture.
TextHead fixture_text_head() {
    TextHead h;
    h.in_dim = 3;
    h.embed_dim = 2;
    h.max_tokens = 40;
    h.w_proj = Tensor2D{{0.5, -0.3, 0.2}, {0.1, 0.4, -0.6}};
    h.b_proj = Tensor2D{{0.05, -0.1}};
    h.w_gate = Tensor2D{{0.7, 0.2}, {-0.3, 0.5}};
    h.b_gate = Tensor2D{{0.1, 0.0}};
    return h;
}

EncoderDims attention_dims() {
    EncoderDims dims;
    dims.text_dim = 6;
    dims.video_dim = 8;
    dims.embed_dim = 5;
    dims.video_attention = true;
    dims.attn_layers = 2;
    dims.attn_heads = 2;
    return dims;
}

}  // namespace

TEST_CASE("context_gate applies a multiplicative sigmoid gate") {
    SECTION("zero gate weights halve the input") {
        Tensor2D x{{0.4, -1.2, 3.0}};
        Tensor2D w(3, 3), b(1, 3);
        Tensor2D y = context_gate(x, w, b);
        for (std::size_t c = 0; c < 3; ++c) CHECK_THAT(y(0, c), WithinAbs(x(0, c) / 2.0, 1e-15));
    }
    SECTION("a saturated gate passes the input through") {
        Tensor2D x{{0.4, -1.2}};
        Tensor2D w(2, 2);
        Tensor2D b(1, 2, 50.0);
        Tensor2D y = context_gate(x, w, b);
        for (std::size_t c = 0; c < 2; ++c) CHECK_THAT(y(0, c), WithinAbs(x(0, c), 1e-12));
    }
    SECTION("fixed two-dimensional instance") {
        // Independently evaluated with numpy.
        Tensor2D x{{0.5, -1.0}};
        Tensor2D w{{0.3, -0.2}, {0.1, 0.4}};
        Tensor2D b{{0.05, -0.15}};
        Tensor2D y = context_gate(x, w, b);
        CHECK_THAT(y(0, 0), WithinAbs(0.299343830056226, 1e-14));
        CHECK_THAT(y(0, 1), WithinAbs(-0.37754066879814541, 1e-14));
    }
    SECTION("shape mismatch") {
        CHECK_THROWS_AS(context_gate(Tensor2D(1, 3), Tensor2D(2, 2), Tensor2D(1, 2)), ShapeError);
    }
}

TEST_CASE("embed_text pipeline") {
    const TextHead h = fixture_text_head();

    SECTION("fixed instance matches the hand-evaluated embedding") {
        Tensor2D tokens{{0.2, -0.1, 0.4}, {0.0, 0.3, -0.2}};
        Tensor2D e = embed_text(tokens, h);
        REQUIRE(e.rows == 1);
        REQUIRE(e.cols == 2);
        CHECK_THAT(e(0, 0), WithinAbs(0.67432756444182507, 1e-13));
        CHECK_THAT(e(0, 1), WithinAbs(-0.73843235020816644, 1e-13));
    }
    SECTION("mean pooling ignores duplication") {
        Tensor2D one{{0.2, -0.1, 0.4}};
        Tensor2D two{{0.2, -0.1, 0.4}, {0.2, -0.1, 0.4}};
        CHECK(testutil::max_abs_diff(embed_text(one, h), embed_text(two, h)) < 1e-15);
    }
    SECTION("sequences beyond max_tokens are truncated") {
        TextHead short_h = h;
        short_h.max_tokens = 2;
        Tensor2D three{{0.2, -0.1, 0.4}, {0.0, 0.3, -0.2}, {9.0, 9.0, 9.0}};
        Tensor2D two{{0.2, -0.1, 0.4}, {0.0, 0.3, -0.2}};
        CHECK(embed_text(three, short_h) == embed_text(two, short_h));
    }
    SECTION("input validation") {
        CHECK_THROWS_AS(embed_text(Tensor2D(0, 3), h), InputError);
        CHECK_THROWS_AS(embed_text(Tensor2D(2, 4), h), ShapeError);
    }
}

TEST_CASE("embeddings are unit vectors for random weights and inputs") {
    Rng rng(404);
    EncoderDims dims;
    dims.text_dim = 7;
    dims.video_dim = 6;
    dims.embed_dim = 9;
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        ModelParams m = init_model(dims, seed);
        for (int i = 0; i < 5; ++i) {
            const Tensor2D t = embed_text(testutil::random_tensor(4, 7, rng), m.text);
            const Tensor2D v = embed_video(testutil::random_tensor(3, 6, rng), m.video);
            CHECK_THAT(row_norm(t, 0), WithinAbs(1.0, 1e-10));
            CHECK_THAT(row_norm(v, 0), WithinAbs(1.0, 1e-10));
        }
    }
}

TEST_CASE("embed_video without attention reduces to the pooled projection path") {
    // Same weights in a text head and a video head must give the same
    // embedding for the same input sequence.
    const TextHead t = fixture_text_head();
    VideoHead v;
    v.in_dim = t.in_dim;
    v.embed_dim = t.embed_dim;
    v.use_attention = false;
    v.w_proj = t.w_proj;
    v.b_proj = t.b_proj;
    v.w_gate = t.w_gate;
    v.b_gate = t.b_gate;
    Tensor2D seq{{0.2, -0.1, 0.4}, {0.0, 0.3, -0.2}};
    CHECK(embed_text(seq, t) == embed_video(seq, v));
    CHECK_THROWS_AS(embed_video(Tensor2D(0, 3), v), InputError);
}

TEST_CASE("attention stack properties") {
    Rng rng(501);
    ModelParams m = init_model(attention_dims(), 42);
    REQUIRE(m.video.layers.size() == 2);

    SECTION("single-position sequences are well-defined") {
        const Tensor2D one = testutil::random_tensor(1, 8, rng);
        const Tensor2D e = embed_video(one, m.video);
        CHECK(e.all_finite());
        CHECK_THAT(row_norm(e, 0), WithinAbs(1.0, 1e-10));
    }
    SECTION("identical input rows produce identical output rows") {
        Tensor2D row = testutil::random_tensor(1, 8, rng);
        Tensor2D x(3, 8);
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 8; ++c) x(r, c) = row(0, c);
        const Tensor2D y = self_attention_block(x, m.video.layers[0], m.video.n_heads);
        for (std::size_t r = 1; r < 3; ++r)
            for (std::size_t c = 0; c < 8; ++c) CHECK_THAT(y(r, c), WithinAbs(y(0, c), 1e-12));
    }
    SECTION("no positional information: frame permutation leaves the embedding unchanged") {
        Tensor2D frames = testutil::random_tensor(5, 8, rng);
        Tensor2D permuted(5, 8);
        const std::size_t perm[5] = {3, 0, 4, 1, 2};
        for (std::size_t r = 0; r < 5; ++r)
            for (std::size_t c = 0; c < 8; ++c) permuted(r, c) = frames(perm[r], c);
        CHECK(testutil::max_abs_diff(embed_video(frames, m.video), embed_video(permuted, m.video)) < 1e-9);
    }
    SECTION("head count must divide the width") {
        EncoderDims bad = attention_dims();
        bad.attn_heads = 3;  // does not divide 8
        CHECK_THROWS_AS(init_model(bad, 1), ConfigError);
        CHECK_THROWS_AS(self_attention_block(Tensor2D(2, 8), m.video.layers[0], 3), ConfigError);
    }
}

TEST_CASE("attention gradients match finite differences") {
    // Loss: fixed random weighting of the video embedding entries. The
    // attention key biases cancel row-wise in the softmax, so their analytic
    // gradient is exactly zero while the central-difference probe returns
    // pure roundoff noise; the absolute fallback absorbs that.
    Rng rng(611);
    EncoderDims dims = attention_dims();
    dims.attn_layers = 1;
    ModelParams m = init_model(dims, 9);
    const Tensor2D frames = testutil::random_tensor(3, 8, rng);
    const Tensor2D w = testutil::random_tensor(1, 5, rng);

    auto loss = [&]() {
        const Tensor2D e = embed_video(frames, m.video);
        double s = 0.0;
        for (std::size_t c = 0; c < e.cols; ++c) s += w(0, c) * e(0, c);
        return s;
    };

    auto params = m.params();
    Gradients grads = Gradients::zeros_for(std::span<const ParamRef>(params));
    ModelGrads gv = ModelGrads::view(m, grads);
    VideoCache cache;
    embed_video(frames, m.video, &cache);
    embed_video_vjp(m.video, cache, w, gv.video);

    const double h = 1e-5;
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (params[p].name.rfind("video.", 0) != 0) continue;
        Tensor2D& theta = *params[p].tensor;
        for (std::size_t i = 0; i < theta.data.size(); ++i) {
            const double saved = theta.data[i];
            theta.data[i] = saved + h;
            const double lp = loss();
            theta.data[i] = saved - h;
            const double lm = loss();
            theta.data[i] = saved;
            const double numeric = (lp - lm) / (2.0 * h);
            const double a = grads[p].data[i];
            const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            const bool ok = rel < 1e-4 || std::abs(a - numeric) < 1e-7;
            if (!ok) {
                INFO(params[p].name << "[" << i << "] analytic=" << a << " numeric=" << numeric);
                CHECK(ok);
            }
        }
    }
}

TEST_CASE("initialization is seeded and deterministic") {
    EncoderDims dims;
    dims.text_dim = 5;
    dims.video_dim = 4;
    dims.embed_dim = 6;
    ModelParams a = init_model(dims, 77);
    ModelParams b = init_model(dims, 77);
    ModelParams c = init_model(dims, 78);
    CHECK(serialize_model(a) == serialize_model(b));
    CHECK(serialize_model(a) != serialize_model(c));
    // Uniform fan-in bound: |w| <= 1/sqrt(in_dim).
    const double bound = 1.0 / std::sqrt(5.0);
    for (double v : a.text.w_proj.data) CHECK(std::abs(v) <= bound);
    CHECK_THROWS_AS(init_model(EncoderDims{}, 1), ConfigError);
}

TEST_CASE("parameter names follow the visit order") {
    ModelParams m = init_model(attention_dims(), 3);
    auto params = m.params();
    REQUIRE(params.size() == 4 + 2 * 16 + 4);
    CHECK(params[0].name == "text.proj.w");
    CHECK(params[3].name == "text.gate.b");
    CHECK(params[4].name == "video.layer0.attn.wq");
    CHECK(params[20].name == "video.layer1.attn.wq");
    CHECK(params.back().name == "video.gate.b");
}

TEST_CASE("checkpoint round-trips bitwise") {
    for (bool attention : {false, true}) {
        EncoderDims dims;
        dims.text_dim = 5;
        dims.video_dim = 4;
        dims.embed_dim = 6;
        dims.video_attention = attention;
        dims.attn_layers = 1;
        dims.attn_heads = 2;
        ModelParams m = init_model(dims, 123);
        m.frozen = attention;  // exercise both flag values

        const std::string bytes = serialize_model(m);
        ModelParams back = deserialize_model(bytes);
        CHECK(back.frozen == m.frozen);
        CHECK(back.video.use_attention == attention);
        CHECK(serialize_model(back) == bytes);

        testutil::TempDir dir("ckpt");
        const std::string path = (dir.path / "m.c2km").string();
        save_model(m, path);
        ModelParams loaded = load_model(path);
        CHECK(serialize_model(loaded) == bytes);
    }
}

TEST_CASE("checkpoint format errors carry byte offsets") {
    EncoderDims dims;
    dims.text_dim = 3;
    dims.video_dim = 3;
    dims.embed_dim = 4;
    const std::string bytes = serialize_model(init_model(dims, 5));

    SECTION("bad magic") {
        std::string bad = bytes;
        bad[0] = 'X';
        try {
            deserialize_model(bad);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset == 0);
            CHECK_THAT(e.what(), ContainsSubstring("magic"));
        }
    }
    SECTION("bad version") {
        std::string bad = bytes;
        bad[4] = 9;
        try {
            deserialize_model(bad);
            FAIL("expected FormatError");
        } catch (const FormatError& e) {
            CHECK(e.offset == 4);
            CHECK_THAT(e.what(), ContainsSubstring("version"));
        }
    }
    SECTION("truncation") {
        CHECK_THROWS_AS(deserialize_model(bytes.substr(0, bytes.size() - 3)), FormatError);
        CHECK_THROWS_AS(deserialize_model(bytes.substr(0, 10)), FormatError);
        CHECK_THROWS_WITH(deserialize_model(bytes.substr(0, 10)), ContainsSubstring("truncated"));
    }
    SECTION("trailing bytes") {
        CHECK_THROWS_AS(deserialize_model(bytes + "x"), FormatError);
        CHECK_THROWS_WITH(deserialize_model(bytes + "x"), ContainsSubstring("trailing"));
    }
}
