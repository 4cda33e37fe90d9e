#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "prunelab/common.hpp"
#include "prunelab/tensor.hpp"

namespace prunelab {

static_assert(std::endian::native == std::endian::little,
              "model serialization assumes a little-endian host");

// Reserved token ids. Everything below kNumSpecialTokens is control vocabulary.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kUnkId = 4;
inline constexpr int kNumSpecialTokens = 5;

inline constexpr double kRmsEps = 1e-5;
inline constexpr double kRopeBase = 10000.0;

struct ModelConfig {
    size_t vocab_size = 512;
    size_t d_model = 64;
    size_t n_heads = 4;
    size_t d_ff = 256;
    size_t n_layers = 8;
    size_t max_seq_len = 256;

    size_t head_dim() const { return d_model / n_heads; }

    void validate() const {
        if (vocab_size < 4) {
            throw std::invalid_argument("ModelConfig: vocab_size must be >= 4");
        }
        if (n_layers < 1) {
            throw std::invalid_argument("ModelConfig: n_layers must be >= 1");
        }
        if (n_heads < 1 || d_model % n_heads != 0) {
            throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
        }
        if (head_dim() % 2 != 0) {
            throw std::invalid_argument("ModelConfig: head dimension must be even");
        }
        if (d_ff < 1 || max_seq_len < 2) {
            throw std::invalid_argument("ModelConfig: invalid d_ff or max_seq_len");
        }
    }

    bool operator==(const ModelConfig&) const = default;
};

// Whitespace-token vocabulary with fixed control ids. Built from corpus text;
// unknown words map to <unk>.
struct Vocab {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> ids;

    static Vocab specials_only() {
        Vocab v;
        v.tokens = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};
        for (size_t i = 0; i < v.tokens.size(); ++i) {
            v.ids[v.tokens[i]] = static_cast<int>(i);
        }
        return v;
    }

    static Vocab build(const std::vector<std::string>& texts, size_t max_size) {
        Vocab v = specials_only();
        for (const std::string& text : texts) {
            for (const std::string& tok : split_whitespace(text)) {
                if (v.ids.emplace(tok, static_cast<int>(v.tokens.size())).second) {
                    v.tokens.push_back(tok);
                    if (v.tokens.size() > max_size) {
                        throw std::runtime_error("Vocab: corpus vocabulary exceeds model vocab_size");
                    }
                }
            }
        }
        return v;
    }

    bool empty() const { return tokens.size() <= static_cast<size_t>(kNumSpecialTokens); }
    size_t size() const { return tokens.size(); }

    int id(const std::string& tok) const {
        const auto it = ids.find(tok);
        return it == ids.end() ? kUnkId : it->second;
    }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> out;
        for (const std::string& tok : split_whitespace(text)) {
            out.push_back(id(tok));
        }
        return out;
    }

    std::string decode(const std::vector<int>& token_ids) const {
        std::vector<std::string> words;
        for (const int t : token_ids) {
            if (t >= kNumSpecialTokens && t < static_cast<int>(tokens.size())) {
                words.push_back(tokens[static_cast<size_t>(t)]);
            }
        }
        return join(words);
    }

    bool operator==(const Vocab& other) const { return tokens == other.tokens; }
};

template <typename T>
struct DecoderLayerT {
    Vec<T> attn_norm;  // pre-attention RMS norm gain
    Mat<T> wq, wk, wv, wo;
    Vec<T> mlp_norm;  // pre-MLP RMS norm gain
    Mat<T> w1, w2;    // d_ff x d_model and d_model x d_ff
};

// Decoder-only transformer with tied embedding/output head. layer_ids tracks
// each remaining layer's index in the model it was originally built with, so
// pruning provenance survives surgery and serialization.
template <typename T>
struct ModelT {
    ModelConfig config;
    Mat<T> embedding;  // vocab_size x d_model, also the output head
    std::vector<DecoderLayerT<T>> layers;
    Vec<T> final_norm;
    std::vector<size_t> layer_ids;
    Vocab vocab = Vocab::specials_only();
};

using TransformerModel = ModelT<float>;

struct ParamCount {
    size_t total = 0;
    size_t per_layer = 0;
    size_t non_layer = 0;
};

// Exact integer parameter accounting. total is linear in n_layers by
// construction: every decoder layer owns the same tensor shapes.
inline ParamCount param_count(const ModelConfig& cfg) {
    cfg.validate();
    ParamCount pc;
    const size_t d = cfg.d_model;
    pc.per_layer = 4 * d * d + 2 * d * cfg.d_ff + 2 * d;
    pc.non_layer = cfg.vocab_size * d + d;  // tied head counted once, plus final norm
    pc.total = pc.non_layer + cfg.n_layers * pc.per_layer;
    return pc;
}

template <typename T>
ModelT<T> init_model(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    ModelT<T> model;
    model.config = cfg;
    Rng rng(seed);

    const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double resid_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));

    const auto fill_gaussian = [&rng](Mat<T>& m, double std_dev) {
        for (T& v : m.data) {
            v = static_cast<T>(rng.next_gaussian() * std_dev);
        }
    };

    model.embedding = Mat<T>(cfg.vocab_size, cfg.d_model);
    fill_gaussian(model.embedding, emb_std);

    model.layers.resize(cfg.n_layers);
    for (DecoderLayerT<T>& layer : model.layers) {
        layer.attn_norm.assign(cfg.d_model, T(1));
        layer.wq = Mat<T>(cfg.d_model, cfg.d_model);
        layer.wk = Mat<T>(cfg.d_model, cfg.d_model);
        layer.wv = Mat<T>(cfg.d_model, cfg.d_model);
        layer.wo = Mat<T>(cfg.d_model, cfg.d_model);
        fill_gaussian(layer.wq, proj_std);
        fill_gaussian(layer.wk, proj_std);
        fill_gaussian(layer.wv, proj_std);
        fill_gaussian(layer.wo, proj_std * resid_scale);
        layer.mlp_norm.assign(cfg.d_model, T(1));
        layer.w1 = Mat<T>(cfg.d_ff, cfg.d_model);
        layer.w2 = Mat<T>(cfg.d_model, cfg.d_ff);
        fill_gaussian(layer.w1, proj_std);
        fill_gaussian(layer.w2, resid_scale / std::sqrt(static_cast<double>(cfg.d_ff)));
    }
    model.final_norm.assign(cfg.d_model, T(1));
    model.layer_ids.resize(cfg.n_layers);
    for (size_t i = 0; i < cfg.n_layers; ++i) {
        model.layer_ids[i] = i;
    }
    return model;
}

// Non-destructive layer surgery: returns a copy with the layer at `position`
// removed and provenance updated.
template <typename T>
ModelT<T> remove_layer(const ModelT<T>& model, size_t position) {
    if (position >= model.config.n_layers) {
        throw std::invalid_argument("remove_layer: position out of range");
    }
    if (model.config.n_layers < 2) {
        throw std::invalid_argument("remove_layer: cannot remove the last layer");
    }
    ModelT<T> out = model;
    out.layers.erase(out.layers.begin() + static_cast<ptrdiff_t>(position));
    out.layer_ids.erase(out.layer_ids.begin() + static_cast<ptrdiff_t>(position));
    out.config.n_layers -= 1;
    return out;
}

namespace detail {

template <typename T>
inline void rms_normalize(const T* x, const T* gain, size_t n, T* out) {
    T ss = dot(x, x, n);
    const T r = std::sqrt(ss / static_cast<T>(n) + static_cast<T>(kRmsEps));
    for (size_t i = 0; i < n; ++i) {
        out[i] = x[i] / r * gain[i];
    }
}

template <typename T>
inline T gelu(T x) {
    return x * T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2))));
}

// In-place rotary encoding of one d_model-wide row of head-concatenated
// vectors. cos_tab/sin_tab hold head_dim/2 entries for the current position.
template <typename T>
inline void apply_rope(T* row, size_t n_heads, size_t head_dim, const T* cos_tab,
                       const T* sin_tab) {
    for (size_t h = 0; h < n_heads; ++h) {
        T* v = row + h * head_dim;
        for (size_t i = 0; i < head_dim / 2; ++i) {
            const T a = v[2 * i];
            const T b = v[2 * i + 1];
            v[2 * i] = a * cos_tab[i] - b * sin_tab[i];
            v[2 * i + 1] = a * sin_tab[i] + b * cos_tab[i];
        }
    }
}

template <typename T>
inline void fill_rope_tables(size_t head_dim, size_t pos, T* cos_tab, T* sin_tab) {
    for (size_t i = 0; i < head_dim / 2; ++i) {
        const double freq =
            std::pow(kRopeBase, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
        const double angle = static_cast<double>(pos) * freq;
        cos_tab[i] = static_cast<T>(std::cos(angle));
        sin_tab[i] = static_cast<T>(std::sin(angle));
    }
}

}  // namespace detail

// Per-decode attention cache: post-rotary keys and values for every layer.
template <typename T>
struct KvCacheT {
    std::vector<Mat<T>> keys;
    std::vector<Mat<T>> values;
    size_t len = 0;

    explicit KvCacheT(const ModelConfig& cfg) {
        keys.assign(cfg.n_layers, Mat<T>(cfg.max_seq_len, cfg.d_model));
        values.assign(cfg.n_layers, Mat<T>(cfg.max_seq_len, cfg.d_model));
    }
};

using KvCache = KvCacheT<float>;

// Advance the cache by one token and return the next-token logits. This is the
// only inference kernel; full-sequence forward() feeds a fresh cache token by
// token, so incremental and from-scratch decoding agree bit for bit.
template <typename T>
Vec<T> forward_step(const ModelT<T>& model, KvCacheT<T>& cache, int token) {
    const ModelConfig& cfg = model.config;
    if (token < 0 || static_cast<size_t>(token) >= cfg.vocab_size) {
        throw std::invalid_argument("forward: token id out of range");
    }
    if (cache.len >= cfg.max_seq_len) {
        throw std::invalid_argument("forward: sequence exceeds max_seq_len");
    }
    if (cache.keys.size() != cfg.n_layers) {
        throw std::invalid_argument("forward: cache layer count does not match model");
    }
    const size_t d = cfg.d_model;
    const size_t hd = cfg.head_dim();
    const size_t pos = cache.len;
    const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));

    std::vector<T> cos_tab(hd / 2), sin_tab(hd / 2);
    detail::fill_rope_tables(hd, pos, cos_tab.data(), sin_tab.data());

    Vec<T> x(model.embedding.row(static_cast<size_t>(token)),
             model.embedding.row(static_cast<size_t>(token)) + d);
    Vec<T> normed(d), q(d), ctx(d), proj(d), hidden(cfg.d_ff);
    Vec<T> scores(pos + 1);

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const DecoderLayerT<T>& layer = model.layers[l];

        detail::rms_normalize(x.data(), layer.attn_norm.data(), d, normed.data());
        matvec(layer.wq, normed.data(), q.data());
        T* k_row = cache.keys[l].row(pos);
        T* v_row = cache.values[l].row(pos);
        matvec(layer.wk, normed.data(), k_row);
        matvec(layer.wv, normed.data(), v_row);
        detail::apply_rope(q.data(), cfg.n_heads, hd, cos_tab.data(), sin_tab.data());
        detail::apply_rope(k_row, cfg.n_heads, hd, cos_tab.data(), sin_tab.data());

        for (size_t h = 0; h < cfg.n_heads; ++h) {
            const T* qh = q.data() + h * hd;
            T max_score = std::numeric_limits<T>::lowest();
            for (size_t j = 0; j <= pos; ++j) {
                scores[j] = dot(qh, cache.keys[l].row(j) + h * hd, hd) * inv_sqrt_hd;
                max_score = std::max(max_score, scores[j]);
            }
            T denom = 0;
            for (size_t j = 0; j <= pos; ++j) {
                scores[j] = std::exp(scores[j] - max_score);
                denom += scores[j];
            }
            T* ch = ctx.data() + h * hd;
            std::fill(ch, ch + hd, T(0));
            for (size_t j = 0; j <= pos; ++j) {
                const T p = scores[j] / denom;
                const T* vh = cache.values[l].row(j) + h * hd;
                for (size_t i = 0; i < hd; ++i) {
                    ch[i] += p * vh[i];
                }
            }
        }
        matvec(layer.wo, ctx.data(), proj.data());
        for (size_t i = 0; i < d; ++i) {
            x[i] += proj[i];
        }

        detail::rms_normalize(x.data(), layer.mlp_norm.data(), d, normed.data());
        matvec(layer.w1, normed.data(), hidden.data());
        for (T& v : hidden) {
            v = detail::gelu(v);
        }
        matvec(layer.w2, hidden.data(), proj.data());
        for (size_t i = 0; i < d; ++i) {
            x[i] += proj[i];
        }
    }

    detail::rms_normalize(x.data(), model.final_norm.data(), d, normed.data());
    Vec<T> logits(cfg.vocab_size);
    for (size_t t = 0; t < cfg.vocab_size; ++t) {
        logits[t] = dot(model.embedding.row(t), normed.data(), d);
    }
    cache.len = pos + 1;
    return logits;
}

// Full-sequence forward: logits for every position, causal by construction.
template <typename T>
Mat<T> forward(const ModelT<T>& model, const std::vector<int>& tokens) {
    if (tokens.empty()) {
        throw std::invalid_argument("forward: empty token sequence");
    }
    if (tokens.size() > model.config.max_seq_len) {
        throw std::invalid_argument("forward: sequence exceeds max_seq_len");
    }
    KvCacheT<T> cache(model.config);
    Mat<T> logits(tokens.size(), model.config.vocab_size);
    for (size_t t = 0; t < tokens.size(); ++t) {
        Vec<T> row = forward_step(model, cache, tokens[t]);
        std::copy(row.begin(), row.end(), logits.row(t));
    }
    return logits;
}

struct DecodeConfig {
    size_t max_new_tokens = 64;
    double temperature = 0.0;  // 0 selects argmax decoding
    bool ignore_eos = false;   // benchmark mode: always decode max_new_tokens

    void validate() const {
        if (temperature < 0.0) {
            throw std::invalid_argument("DecodeConfig: temperature must be >= 0");
        }
        if (temperature > 0.0) {
            throw std::invalid_argument("DecodeConfig: sampling is not supported; use temperature 0");
        }
    }
};

template <typename T>
inline int argmax_lowest_id(const Vec<T>& logits) {
    int best = 0;
    for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[best]) {
            best = static_cast<int>(i);
        }
    }
    return best;
}

// Greedy decoding with the KV cache; ties resolve to the lowest token id.
// Stops at EOS (unless ignore_eos), max_new_tokens, or a full context window.
template <typename T>
std::vector<int> generate(const ModelT<T>& model, const std::vector<int>& prompt_ids,
                          const DecodeConfig& cfg) {
    cfg.validate();
    if (prompt_ids.empty()) {
        throw std::invalid_argument("generate: empty prompt");
    }
    if (prompt_ids.size() > model.config.max_seq_len) {
        throw std::invalid_argument("generate: overlength prompt");
    }
    KvCacheT<T> cache(model.config);
    Vec<T> logits;
    for (const int token : prompt_ids) {
        logits = forward_step(model, cache, token);
    }
    std::vector<int> out;
    out.reserve(cfg.max_new_tokens);
    for (size_t step = 0; step < cfg.max_new_tokens; ++step) {
        const int next = argmax_lowest_id(logits);
        out.push_back(next);
        if (next == kEosId && !cfg.ignore_eos) {
            break;
        }
        if (cache.len >= model.config.max_seq_len) {
            break;  // context window exhausted
        }
        logits = forward_step(model, cache, next);
    }
    return out;
}

template <typename T>
std::vector<std::vector<int>> generate_batch(const ModelT<T>& model,
                                             const std::vector<std::vector<int>>& prompts,
                                             const DecodeConfig& cfg) {
    std::vector<std::vector<int>> out;
    out.reserve(prompts.size());
    for (const std::vector<int>& prompt : prompts) {
        out.push_back(generate(model, prompt, cfg));
    }
    return out;
}

// ------------------------- translation prompting ---------------------------

struct PromptSpec {
    std::string source_lang;
    std::string target_lang;

    std::string render(const std::string& source_text) const {
        return "Translate the following text from " + source_lang + " to " + target_lang + ":\n" +
               source_text;
    }
};

// [bos] prompt+source tokens [sep]; everything before the separator is context.
inline std::vector<int> encode_context(const Vocab& vocab, const PromptSpec& spec,
                                       const std::string& source_text) {
    std::vector<int> ids{kBosId};
    for (const int t : vocab.encode(spec.render(source_text))) {
        ids.push_back(t);
    }
    ids.push_back(kSepId);
    return ids;
}

struct EncodedExample {
    std::vector<int> ids;      // [bos] context [sep] target [eos]
    size_t first_target = 0;   // index of the first target token in ids
};

inline EncodedExample encode_example(const Vocab& vocab, const PromptSpec& spec,
                                     const std::string& source_text,
                                     const std::string& target_text, size_t max_seq_len) {
    EncodedExample ex;
    ex.ids = encode_context(vocab, spec, source_text);
    ex.first_target = ex.ids.size();
    for (const int t : vocab.encode(target_text)) {
        ex.ids.push_back(t);
    }
    ex.ids.push_back(kEosId);
    if (ex.ids.size() > max_seq_len) {
        throw std::invalid_argument("encode_example: sequence exceeds max_seq_len");
    }
    return ex;
}

// Greedy translation of one source segment; nullopt when the prompt does not
// fit the context window.
template <typename T>
std::optional<std::string> translate(const ModelT<T>& model, const PromptSpec& spec,
                                     const std::string& source_text, const DecodeConfig& cfg) {
    const std::vector<int> context = encode_context(model.vocab, spec, source_text);
    if (context.size() >= model.config.max_seq_len) {
        return std::nullopt;
    }
    const std::vector<int> generated = generate(model, context, cfg);
    return model.vocab.decode(generated);
}

// ------------------------------ serialization ------------------------------
//
// Text preamble in fixed order, then raw little-endian float32 weights:
// embedding, then per layer (attn_norm, wq, wk, wv, wo, mlp_norm, w1, w2),
// then final_norm.

inline constexpr const char* kModelMagic = "prunelab-model v1";

namespace detail {

inline void write_tensor(std::ostream& out, const std::vector<float>& data) {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
}

inline void read_tensor(std::istream& in, std::vector<float>& data) {
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) {
        throw std::runtime_error("load_model: truncated weight payload");
    }
}

inline std::string expect_line(std::istream& in, const char* what) {
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error(std::string("load_model: missing ") + what);
    }
    return line;
}

inline size_t parse_field(const std::string& line, const std::string& key) {
    const std::string prefix = key + "=";
    if (line.rfind(prefix, 0) != 0) {
        throw std::runtime_error("load_model: expected field " + key + ", got: " + line);
    }
    return static_cast<size_t>(std::stoull(line.substr(prefix.size())));
}

}  // namespace detail

inline void serialize_model(const TransformerModel& model, std::ostream& out) {
    const ModelConfig& cfg = model.config;
    out << kModelMagic << "\n";
    out << "vocab_size=" << cfg.vocab_size << "\n";
    out << "d_model=" << cfg.d_model << "\n";
    out << "n_heads=" << cfg.n_heads << "\n";
    out << "d_ff=" << cfg.d_ff << "\n";
    out << "n_layers=" << cfg.n_layers << "\n";
    out << "max_seq_len=" << cfg.max_seq_len << "\n";
    out << "layer_ids=";
    for (size_t i = 0; i < model.layer_ids.size(); ++i) {
        out << (i ? "," : "") << model.layer_ids[i];
    }
    out << "\n";
    out << "tokens=" << model.vocab.tokens.size() << "\n";
    for (const std::string& tok : model.vocab.tokens) {
        out << tok << "\n";
    }
    out << "weights\n";
    detail::write_tensor(out, model.embedding.data);
    for (const auto& layer : model.layers) {
        detail::write_tensor(out, layer.attn_norm);
        detail::write_tensor(out, layer.wq.data);
        detail::write_tensor(out, layer.wk.data);
        detail::write_tensor(out, layer.wv.data);
        detail::write_tensor(out, layer.wo.data);
        detail::write_tensor(out, layer.mlp_norm);
        detail::write_tensor(out, layer.w1.data);
        detail::write_tensor(out, layer.w2.data);
    }
    detail::write_tensor(out, model.final_norm);
}

inline TransformerModel deserialize_model(std::istream& in) {
    const std::string magic = detail::expect_line(in, "magic");
    if (magic != kModelMagic) {
        throw std::runtime_error("load_model: unsupported format or version: " + magic);
    }
    ModelConfig cfg;
    cfg.vocab_size = detail::parse_field(detail::expect_line(in, "vocab_size"), "vocab_size");
    cfg.d_model = detail::parse_field(detail::expect_line(in, "d_model"), "d_model");
    cfg.n_heads = detail::parse_field(detail::expect_line(in, "n_heads"), "n_heads");
    cfg.d_ff = detail::parse_field(detail::expect_line(in, "d_ff"), "d_ff");
    cfg.n_layers = detail::parse_field(detail::expect_line(in, "n_layers"), "n_layers");
    cfg.max_seq_len = detail::parse_field(detail::expect_line(in, "max_seq_len"), "max_seq_len");
    cfg.validate();

    TransformerModel model;
    model.config = cfg;

    const std::string ids_line = detail::expect_line(in, "layer_ids");
    if (ids_line.rfind("layer_ids=", 0) != 0) {
        throw std::runtime_error("load_model: expected layer_ids line");
    }
    std::stringstream ids_stream(ids_line.substr(10));
    std::string item;
    while (std::getline(ids_stream, item, ',')) {
        if (!item.empty()) {
            model.layer_ids.push_back(static_cast<size_t>(std::stoull(item)));
        }
    }
    if (model.layer_ids.size() != cfg.n_layers) {
        throw std::runtime_error("load_model: layer_ids count does not match n_layers");
    }

    const size_t n_tokens = detail::parse_field(detail::expect_line(in, "tokens"), "tokens");
    model.vocab.tokens.clear();
    model.vocab.ids.clear();
    for (size_t i = 0; i < n_tokens; ++i) {
        const std::string tok = detail::expect_line(in, "vocab token");
        model.vocab.tokens.push_back(tok);
        model.vocab.ids[tok] = static_cast<int>(i);
    }
    if (detail::expect_line(in, "weights marker") != "weights") {
        throw std::runtime_error("load_model: expected weights marker");
    }

    const size_t d = cfg.d_model;
    model.embedding = Mat<float>(cfg.vocab_size, d);
    detail::read_tensor(in, model.embedding.data);
    model.layers.resize(cfg.n_layers);
    for (auto& layer : model.layers) {
        layer.attn_norm.assign(d, 0.f);
        layer.wq = Mat<float>(d, d);
        layer.wk = Mat<float>(d, d);
        layer.wv = Mat<float>(d, d);
        layer.wo = Mat<float>(d, d);
        layer.w1 = Mat<float>(cfg.d_ff, d);
        layer.w2 = Mat<float>(d, cfg.d_ff);
        layer.mlp_norm.assign(d, 0.f);
        detail::read_tensor(in, layer.attn_norm);
        detail::read_tensor(in, layer.wq.data);
        detail::read_tensor(in, layer.wk.data);
        detail::read_tensor(in, layer.wv.data);
        detail::read_tensor(in, layer.wo.data);
        detail::read_tensor(in, layer.mlp_norm);
        detail::read_tensor(in, layer.w1.data);
        detail::read_tensor(in, layer.w2.data);
    }
    model.final_norm.assign(d, 0.f);
    detail::read_tensor(in, model.final_norm);

    char extra;
    if (in.read(&extra, 1)) {
        throw std::runtime_error("load_model: trailing data after weight payload");
    }
    return model;
}

inline void save_model(const TransformerModel& model, const std::string& path) {
    std::ostringstream out(std::ios::binary);
    serialize_model(model, out);
    write_text_file(path, out.str());
}

inline TransformerModel load_model(const std::string& path) {
    std::istringstream in(read_text_file(path), std::ios::binary);
    return deserialize_model(in);
}

}  // namespace prunelab
