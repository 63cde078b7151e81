#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "c2kd/errors.hpp"
#include "c2kd/io.hpp"
#include "c2kd/rng.hpp"
#include "c2kd/tensor.hpp"

// Corpus model, deterministic synthetic generation with controllable
// per-language translation noise, bit-exact binary serialization and
// seeded batching.

namespace c2kd {

// One video's frame features plus parallel per-language caption token
// features. Captions are stored in corpus language order; "en" is always
// present.
struct CorpusRecord {
    std::uint64_t id = 0;
    Tensor2D frames;  // T_v x D_v
    std::vector<std::pair<std::string, Tensor2D>> captions;

    const Tensor2D* caption(const std::string& language) const {
        for (const auto& [tag, feats] : captions)
            if (tag == language) return &feats;
        return nullptr;
    }
};

struct Corpus {
    std::vector<std::string> languages;
    std::size_t text_dim = 0;
    std::size_t video_dim = 0;
    std::vector<CorpusRecord> records;

    bool has_language(const std::string& tag) const {
        return std::find(languages.begin(), languages.end(), tag) != languages.end();
    }

    const CorpusRecord& record_by_id(std::uint64_t id) const {
        for (const auto& r : records)
            if (r.id == id) return r;
        throw DataError("no record with id " + std::to_string(id));
    }
};

// ---------------------------------------------------------------------------
// Synthetic corpus generation
// ---------------------------------------------------------------------------

struct LanguageNoise {
    std::string tag;
    double sigma = 0.0;  // translation-noise scale on the latent concept
};

// Generator contract: each record draws a latent concept z; video frames are
// a fixed random mixing of z plus frame noise; language-l captions mix a
// translation-corrupted latent z + sigma_l * noise plus per-token noise.
// English must carry the smallest sigma. Everything is a pure function of
// the master seed.
struct SyntheticSpec {
    std::size_t n_records = 0;
    std::size_t concept_dim = 0;
    std::vector<LanguageNoise> languages;
    std::size_t text_dim = 0;
    std::size_t video_dim = 0;
    std::size_t tokens_per_caption = 4;
    std::size_t frames_per_video = 4;
    double video_noise = 0.1;   // per-frame feature noise
    double token_noise = 0.1;   // per-token feature noise
    double language_map_jitter = 0.2;  // how far each language's mixing map strays from the shared one
    std::uint64_t seed = 0;

    void validate() const {
        if (n_records == 0 || concept_dim == 0 || text_dim == 0 || video_dim == 0 ||
            tokens_per_caption == 0 || frames_per_video == 0)
            throw ConfigError("synthetic spec: all counts and dims must be >= 1");
        if (languages.empty()) throw ConfigError("synthetic spec: at least one language required");
        double sigma_en = -1.0;
        for (const auto& l : languages) {
            if (l.sigma < 0.0) throw ConfigError("synthetic spec: negative noise for language " + l.tag);
            if (l.tag == "en") sigma_en = l.sigma;
        }
        if (sigma_en < 0.0) throw ConfigError("synthetic spec: language set must include en");
        for (const auto& l : languages)
            if (l.sigma < sigma_en)
                throw ConfigError("synthetic spec: sigma_en must be the smallest noise scale, but " + l.tag +
                                  " has " + std::to_string(l.sigma) + " < " + std::to_string(sigma_en));
        if (video_noise < 0.0 || token_noise < 0.0 || language_map_jitter < 0.0)
            throw ConfigError("synthetic spec: noise scales must be non-negative");
    }
};

namespace detail {

// Seed streams within one synthetic corpus.
inline constexpr std::uint64_t kStreamMixingMaps = 101;
inline constexpr std::uint64_t kStreamRecord = 102;

struct MixingMaps {
    Tensor2D video;                // D_v x D_c
    std::vector<Tensor2D> text;    // per language: D_t x D_c
};

// Entries scaled so mixed features have roughly unit variance.
inline Tensor2D draw_mixing(std::size_t out_dim, std::size_t concept_dim, Rng& rng) {
    Tensor2D m(out_dim, concept_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(concept_dim));
    for (double& v : m.data) v = scale * rng.normal();
    return m;
}

inline MixingMaps make_mixing_maps(const SyntheticSpec& spec) {
    Rng rng(derive_seed(spec.seed, {kStreamMixingMaps}));
    MixingMaps maps;
    maps.video = draw_mixing(spec.video_dim, spec.concept_dim, rng);
    Tensor2D shared = draw_mixing(spec.text_dim, spec.concept_dim, rng);
    const double g = spec.language_map_jitter;
    const double norm = 1.0 / std::sqrt(1.0 + g * g);
    for (std::size_t l = 0; l < spec.languages.size(); ++l) {
        Tensor2D jitter = draw_mixing(spec.text_dim, spec.concept_dim, rng);
        Tensor2D a(spec.text_dim, spec.concept_dim);
        for (std::size_t i = 0; i < a.data.size(); ++i)
            a.data[i] = (shared.data[i] + g * jitter.data[i]) * norm;
        maps.text.push_back(std::move(a));
    }
    return maps;
}

// Storage is 32-bit; quantize at generation time so a save/load round trip
// is value-exact against the in-memory corpus.
inline double to_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace detail

// Latents behind one record, re-derivable for analysis without regenerating
// features.
struct RecordLatents {
    std::vector<double> topic;                        // z, D_c
    std::vector<std::vector<double>> caption_latents; // per language: z + sigma_l * delta
};

inline RecordLatents record_latents(const SyntheticSpec& spec, std::size_t index) {
    Rng rng(derive_seed(spec.seed, {detail::kStreamRecord, index}));
    RecordLatents out;
    out.topic.resize(spec.concept_dim);
    for (double& v : out.topic) v = rng.normal();
    out.caption_latents.resize(spec.languages.size());
    for (std::size_t l = 0; l < spec.languages.size(); ++l) {
        auto& lat = out.caption_latents[l];
        lat.resize(spec.concept_dim);
        const double sigma = spec.languages[l].sigma;
        for (std::size_t c = 0; c < spec.concept_dim; ++c) lat[c] = out.topic[c] + sigma * rng.normal();
    }
    return out;
}

inline Corpus generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const detail::MixingMaps maps = detail::make_mixing_maps(spec);
    Corpus corpus;
    for (const auto& l : spec.languages) corpus.languages.push_back(l.tag);
    corpus.text_dim = spec.text_dim;
    corpus.video_dim = spec.video_dim;
    corpus.records.reserve(spec.n_records);

    for (std::size_t i = 0; i < spec.n_records; ++i) {
        const RecordLatents lat = record_latents(spec, i);
        // The record RNG continues past the latent draws; replay them so the
        // feature-noise stream starts at the same point.
        Rng rng(derive_seed(spec.seed, {detail::kStreamRecord, i}));
        for (std::size_t skip = 0; skip < spec.concept_dim * (1 + spec.languages.size()); ++skip) rng.normal();

        CorpusRecord rec;
        rec.id = i;
        rec.frames = Tensor2D(spec.frames_per_video, spec.video_dim);
        for (std::size_t t = 0; t < spec.frames_per_video; ++t)
            for (std::size_t d = 0; d < spec.video_dim; ++d) {
                double v = spec.video_noise * rng.normal();
                for (std::size_t c = 0; c < spec.concept_dim; ++c)
                    v += maps.video(d, c) * lat.topic[c];
                rec.frames(t, d) = detail::to_storage(v);
            }
        for (std::size_t l = 0; l < spec.languages.size(); ++l) {
            Tensor2D tokens(spec.tokens_per_caption, spec.text_dim);
            for (std::size_t t = 0; t < spec.tokens_per_caption; ++t)
                for (std::size_t d = 0; d < spec.text_dim; ++d) {
                    double v = spec.token_noise * rng.normal();
                    for (std::size_t c = 0; c < spec.concept_dim; ++c)
                        v += maps.text[l](d, c) * lat.caption_latents[l][c];
                    tokens(t, d) = detail::to_storage(v);
                }
            rec.captions.emplace_back(spec.languages[l].tag, std::move(tokens));
        }
        corpus.records.push_back(std::move(rec));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
//
// Magic "C2KC", then little-endian:
//   u16 version (= 1)
//   u32 record_count, u32 language_count, u32 text_dim, u32 video_dim
//   language table: per language u32 byte length + UTF-8 bytes
// then per record:
//   u64 id
//   u32 frame_count, frame_count * video_dim f32
//   per language in table order: u32 token_count, token_count * text_dim f32
// Features are 32-bit IEEE-754 little-endian; the loader upcasts to 64-bit.

inline constexpr char kCorpusMagic[4] = {'C', '2', 'K', 'C'};
inline constexpr std::uint16_t kCorpusVersion = 1;

inline std::string serialize_corpus(const Corpus& corpus) {
    std::string out;
    out.append(kCorpusMagic, 4);
    detail::put_u16(out, kCorpusVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(corpus.records.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(corpus.languages.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(corpus.text_dim));
    detail::put_u32(out, static_cast<std::uint32_t>(corpus.video_dim));
    for (const auto& tag : corpus.languages) {
        detail::put_u32(out, static_cast<std::uint32_t>(tag.size()));
        out.append(tag);
    }
    auto put_f32 = [&out](double v) {
        float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(out, bits);
    };
    for (const auto& rec : corpus.records) {
        detail::put_u64(out, rec.id);
        detail::put_u32(out, static_cast<std::uint32_t>(rec.frames.rows));
        for (double v : rec.frames.data) put_f32(v);
        for (std::size_t l = 0; l < corpus.languages.size(); ++l) {
            const Tensor2D* tokens = rec.caption(corpus.languages[l]);
            if (!tokens)
                throw DataError("record " + std::to_string(rec.id) + " is missing language " +
                                corpus.languages[l]);
            detail::put_u32(out, static_cast<std::uint32_t>(tokens->rows));
            for (double v : tokens->data) put_f32(v);
        }
    }
    return out;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    detail::write_file_bytes(path, serialize_corpus(corpus));
}

inline Corpus deserialize_corpus(const std::string& bytes) {
    detail::ByteReader r{bytes};
    r.need(4, "magic");
    if (std::memcmp(bytes.data(), kCorpusMagic, 4) != 0) throw FormatError("bad corpus magic", 0);
    r.pos = 4;
    const std::uint16_t version = r.u16("version");
    if (version != kCorpusVersion) throw FormatError("unsupported corpus version " + std::to_string(version), 4);
    Corpus corpus;
    const std::uint32_t n_records = r.u32("record_count");
    const std::uint32_t n_langs = r.u32("language_count");
    corpus.text_dim = r.u32("text_dim");
    corpus.video_dim = r.u32("video_dim");
    for (std::uint32_t l = 0; l < n_langs; ++l) {
        const std::uint32_t len = r.u32("language tag length");
        r.need(len, "language tag");
        corpus.languages.emplace_back(bytes.data() + r.pos, len);
        r.pos += len;
    }
    corpus.records.reserve(n_records);
    for (std::uint32_t i = 0; i < n_records; ++i) {
        CorpusRecord rec;
        rec.id = r.u64("record id");
        const std::uint32_t frames = r.u32("frame count");
        rec.frames = Tensor2D(frames, corpus.video_dim);
        for (double& v : rec.frames.data) v = static_cast<double>(r.f32("frame feature"));
        for (const auto& tag : corpus.languages) {
            const std::uint32_t tokens = r.u32("token count");
            Tensor2D feats(tokens, corpus.text_dim);
            for (double& v : feats.data) v = static_cast<double>(r.f32("token feature"));
            rec.captions.emplace_back(tag, std::move(feats));
        }
        corpus.records.push_back(std::move(rec));
    }
    if (r.pos != bytes.size()) throw FormatError("trailing bytes after corpus payload", r.pos);
    return corpus;
}

inline Corpus load_corpus(const std::string& path) {
    return deserialize_corpus(detail::read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Splits and batching
// ---------------------------------------------------------------------------

struct Split {
    std::vector<std::uint64_t> train;
    std::vector<std::uint64_t> val;
    std::vector<std::uint64_t> test;
};

// Seeded shuffle of all record ids, partitioned into the three sets. The
// counts must cover the corpus exactly.
inline Split make_split(const Corpus& corpus, std::size_t n_train, std::size_t n_val, std::size_t n_test,
                        std::uint64_t seed) {
    if (n_train + n_val + n_test != corpus.records.size())
        throw ParamError("make_split: " + std::to_string(n_train) + "+" + std::to_string(n_val) + "+" +
                         std::to_string(n_test) + " does not cover " + std::to_string(corpus.records.size()) +
                         " records");
    std::vector<std::uint64_t> ids;
    ids.reserve(corpus.records.size());
    for (const auto& r : corpus.records) ids.push_back(r.id);
    Rng rng(derive_seed(seed, {7}));
    rng.shuffle(ids);
    Split split;
    split.train.assign(ids.begin(), ids.begin() + n_train);
    split.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
    split.test.assign(ids.begin() + n_train + n_val, ids.end());
    return split;
}

// One training batch: indices into the corpus plus aligned feature views.
struct Batch {
    std::vector<const CorpusRecord*> records;

    std::size_t size() const { return records.size(); }

    std::vector<const Tensor2D*> video_features() const {
        std::vector<const Tensor2D*> out;
        out.reserve(records.size());
        for (const auto* r : records) out.push_back(&r->frames);
        return out;
    }

    std::vector<const Tensor2D*> text_features(const std::string& language) const {
        std::vector<const Tensor2D*> out;
        out.reserve(records.size());
        for (const auto* r : records) {
            const Tensor2D* feats = r->caption(language);
            if (!feats)
                throw DataError("record " + std::to_string(r->id) + " has no caption in language " + language);
            out.push_back(feats);
        }
        return out;
    }

    std::vector<std::uint64_t> ids() const {
        std::vector<std::uint64_t> out;
        out.reserve(records.size());
        for (const auto* r : records) out.push_back(r->id);
        return out;
    }
};

// Deterministic shuffled batches for one epoch. The final short batch is
// dropped so every contrastive loss sees the same batch context.
inline std::vector<Batch> epoch_batches(const Corpus& corpus, const std::vector<std::uint64_t>& split_ids,
                                        std::size_t batch_size, const std::vector<std::string>& languages,
                                        std::uint64_t shuffle_seed, std::size_t epoch) {
    if (batch_size < 2) throw ParamError("epoch_batches: batch size must be >= 2 for contrastive training");
    for (const auto& lang : languages)
        if (!corpus.has_language(lang)) throw DataError("corpus has no language " + lang);

    std::unordered_map<std::uint64_t, const CorpusRecord*> by_id;
    by_id.reserve(corpus.records.size());
    for (const auto& r : corpus.records) by_id.emplace(r.id, &r);

    std::vector<std::uint64_t> order = split_ids;
    Rng rng(derive_seed(shuffle_seed, {11, epoch}));
    rng.shuffle(order);

    std::vector<Batch> batches;
    batches.reserve(order.size() / batch_size);
    for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
        Batch b;
        b.records.reserve(batch_size);
        for (std::size_t i = 0; i < batch_size; ++i) {
            auto it = by_id.find(order[start + i]);
            if (it == by_id.end()) throw DataError("split id " + std::to_string(order[start + i]) + " not in corpus");
            const CorpusRecord* rec = it->second;
            for (const auto& lang : languages)
                if (!rec->caption(lang))
                    throw DataError("record " + std::to_string(rec->id) + " has no caption in language " + lang);
            b.records.push_back(rec);
        }
        batches.push_back(std::move(b));
    }
    return batches;
}

}  // namespace c2kd
