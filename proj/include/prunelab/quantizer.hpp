#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunelab/model.hpp"

namespace prunelab {

struct QuantConfig {
    size_t bits = 4;
    size_t group_size = 64;
    bool include_embeddings = false;

    void validate() const {
        if (bits != 4 && bits != 8) {
            throw std::invalid_argument("QuantConfig: bits must be 4 or 8");
        }
        if (group_size < 1) {
            throw std::invalid_argument("QuantConfig: group_size must be >= 1");
        }
    }
};

// Per-group affine parameters. Codes dequantize as offset + code * scale;
// offset is the group minimum, so code 0 reproduces the minimum exactly and a
// zero-range (constant) group stores scale 0 and round-trips exactly.
struct GroupMeta {
    float scale = 0.f;
    float offset = 0.f;
};

// Group-wise quantized matrix. Groups run over the flattened row-major data;
// the final group may be ragged. 4-bit codes pack two per byte (low nibble
// first), 8-bit codes take one byte each.
struct QuantizedTensor {
    size_t rows = 0;
    size_t cols = 0;
    size_t bits = 4;
    size_t group_size = 64;
    std::vector<GroupMeta> groups;
    std::vector<uint8_t> packed;

    size_t count() const { return rows * cols; }

    size_t payload_bytes() const {
        return packed.size() + groups.size() * sizeof(GroupMeta);
    }

    uint8_t code_at(size_t i) const {
        if (bits == 8) {
            return packed[i];
        }
        const uint8_t byte = packed[i / 2];
        return (i % 2 == 0) ? (byte & 0x0f) : (byte >> 4);
    }

    float value_at(size_t i) const {
        const GroupMeta& g = groups[i / group_size];
        return g.offset + static_cast<float>(code_at(i)) * g.scale;
    }
};

namespace detail {

inline void store_code(std::vector<uint8_t>& packed, size_t bits, size_t i, uint8_t code) {
    if (bits == 8) {
        packed[i] = code;
    } else if (i % 2 == 0) {
        packed[i / 2] = static_cast<uint8_t>((packed[i / 2] & 0xf0) | code);
    } else {
        packed[i / 2] = static_cast<uint8_t>((packed[i / 2] & 0x0f) | (code << 4));
    }
}

}  // namespace detail

inline QuantizedTensor quantize_tensor(const Mat<float>& w, const QuantConfig& cfg) {
    cfg.validate();
    QuantizedTensor qt;
    qt.rows = w.rows;
    qt.cols = w.cols;
    qt.bits = cfg.bits;
    qt.group_size = cfg.group_size;
    const size_t n = w.data.size();
    const size_t n_groups = (n + cfg.group_size - 1) / cfg.group_size;
    qt.groups.resize(n_groups);
    qt.packed.assign(cfg.bits == 8 ? n : (n + 1) / 2, 0);
    const double qmax = static_cast<double>((1u << cfg.bits) - 1);

    for (size_t g = 0; g < n_groups; ++g) {
        const size_t begin = g * cfg.group_size;
        const size_t end = std::min(begin + cfg.group_size, n);
        float lo = w.data[begin], hi = w.data[begin];
        for (size_t i = begin; i < end; ++i) {
            lo = std::min(lo, w.data[i]);
            hi = std::max(hi, w.data[i]);
        }
        GroupMeta& meta = qt.groups[g];
        meta.offset = lo;
        if (hi == lo) {
            meta.scale = 0.f;  // constant group: all codes 0, exact round-trip
            continue;
        }
        meta.scale = static_cast<float>((static_cast<double>(hi) - static_cast<double>(lo)) / qmax);
        const double scale = static_cast<double>(meta.scale);
        for (size_t i = begin; i < end; ++i) {
            const double u = static_cast<double>(w.data[i]) - static_cast<double>(lo);
            long code = std::lround(u / scale);
            code = std::clamp(code, 0L, static_cast<long>(qmax));
            detail::store_code(qt.packed, cfg.bits, i, static_cast<uint8_t>(code));
        }
    }
    return qt;
}

inline Mat<float> dequantize_tensor(const QuantizedTensor& qt) {
    Mat<float> w(qt.rows, qt.cols);
    for (size_t i = 0; i < w.data.size(); ++i) {
        w.data[i] = qt.value_at(i);
    }
    return w;
}

struct QuantizedLayer {
    Vec<float> attn_norm;
    QuantizedTensor wq, wk, wv, wo;
    Vec<float> mlp_norm;
    QuantizedTensor w1, w2;
};

// 4-bit (or 8-bit) model: all linear projections quantized group-wise, norms
// always full precision, embeddings full precision unless configured.
struct QuantizedModel {
    ModelConfig config;
    QuantConfig quant;
    Mat<float> embedding;                        // used when !quant.include_embeddings
    std::optional<QuantizedTensor> q_embedding;  // used when quant.include_embeddings
    std::vector<QuantizedLayer> layers;
    Vec<float> final_norm;
    std::vector<size_t> layer_ids;
    Vocab vocab = Vocab::specials_only();
};

inline QuantizedModel quantize_model(const TransformerModel& model, const QuantConfig& cfg) {
    cfg.validate();
    QuantizedModel qm;
    qm.config = model.config;
    qm.quant = cfg;
    if (cfg.include_embeddings) {
        qm.q_embedding = quantize_tensor(model.embedding, cfg);
    } else {
        qm.embedding = model.embedding;
    }
    qm.layers.reserve(model.layers.size());
    for (const DecoderLayerT<float>& layer : model.layers) {
        QuantizedLayer ql;
        ql.attn_norm = layer.attn_norm;
        ql.wq = quantize_tensor(layer.wq, cfg);
        ql.wk = quantize_tensor(layer.wk, cfg);
        ql.wv = quantize_tensor(layer.wv, cfg);
        ql.wo = quantize_tensor(layer.wo, cfg);
        ql.mlp_norm = layer.mlp_norm;
        ql.w1 = quantize_tensor(layer.w1, cfg);
        ql.w2 = quantize_tensor(layer.w2, cfg);
        qm.layers.push_back(std::move(ql));
    }
    qm.final_norm = model.final_norm;
    qm.layer_ids = model.layer_ids;
    qm.vocab = model.vocab;
    return qm;
}

namespace detail {

// y = W x with rows dequantized on use; scratch holds one decoded row.
inline void qmatvec(const QuantizedTensor& w, const float* x, float* y, float* scratch) {
    for (size_t r = 0; r < w.rows; ++r) {
        const size_t base = r * w.cols;
        for (size_t c = 0; c < w.cols; ++c) {
            scratch[c] = w.value_at(base + c);
        }
        y[r] = dot(scratch, x, w.cols);
    }
}

}  // namespace detail

// Quantized counterpart of forward_step: the same architecture with
// dequantize-on-use matrix multiplies.
inline Vec<float> quantized_forward_step(const QuantizedModel& model, KvCache& cache,
                                         int token) {
    const ModelConfig& cfg = model.config;
    if (token < 0 || static_cast<size_t>(token) >= cfg.vocab_size) {
        throw std::invalid_argument("forward: token id out of range");
    }
    if (cache.len >= cfg.max_seq_len) {
        throw std::invalid_argument("forward: sequence exceeds max_seq_len");
    }
    const size_t d = cfg.d_model;
    const size_t hd = cfg.head_dim();
    const size_t pos = cache.len;
    const float inv_sqrt_hd = 1.f / std::sqrt(static_cast<float>(hd));

    std::vector<float> cos_tab(hd / 2), sin_tab(hd / 2);
    detail::fill_rope_tables(hd, pos, cos_tab.data(), sin_tab.data());

    const auto embedding_row = [&](size_t t, float* out) {
        if (model.q_embedding) {
            const size_t base = t * d;
            for (size_t i = 0; i < d; ++i) {
            out[i] = model.q_embedding->value_at(base + i);
            }
        } else {
            std::copy(model.embedding.row(t), model.embedding.row(t) + d, out);
        }
    };

    Vec<float> x(d);
    embedding_row(static_cast<size_t>(token), x.data());
    Vec<float> normed(d), q(d), ctx(d), proj(d), hidden(cfg.d_ff);
    Vec<float> scratch(std::max(d, cfg.d_ff));
    Vec<float> scores(pos + 1);

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const QuantizedLayer& layer = model.layers[l];

        detail::rms_normalize(x.data(), layer.attn_norm.data(), d, normed.data());
        detail::qmatvec(layer.wq, normed.data(), q.data(), scratch.data());
        float* k_row = cache.keys[l].row(pos);
        float* v_row = cache.values[l].row(pos);
        detail::qmatvec(layer.wk, normed.data(), k_row, scratch.data());
        detail::qmatvec(layer.wv, normed.data(), v_row, scratch.data());
        detail::apply_rope(q.data(), cfg.n_heads, hd, cos_tab.data(), sin_tab.data());
        detail::apply_rope(k_row, cfg.n_heads, hd, cos_tab.data(), sin_tab.data());

        for (size_t h = 0; h < cfg.n_heads; ++h) {
            const float* qh = q.data() + h * hd;
            float max_score = std::numeric_limits<float>::lowest();
            for (size_t j = 0; j <= pos; ++j) {
                scores[j] = dot(qh, cache.keys[l].row(j) + h * hd, hd) * inv_sqrt_hd;
                max_score = std::max(max_score, scores[j]);
            }
            float denom = 0;
            for (size_t j = 0; j <= pos; ++j) {
                scores[j] = std::exp(scores[j] - max_score);
                denom += scores[j];
            }
            float* ch = ctx.data() + h * hd;
            std::fill(ch, ch + hd, 0.f);
            for (size_t j = 0; j <= pos; ++j) {
                const float p = scores[j] / denom;
                const float* vh = cache.values[l].row(j) + h * hd;
                for (size_t i = 0; i < hd; ++i) {
                    ch[i] += p * vh[i];
                }
            }
        }
        detail::qmatvec(layer.wo, ctx.data(), proj.data(), scratch.data());
        for (size_t i = 0; i < d; ++i) {
            x[i] += proj[i];
        }

        detail::rms_normalize(x.data(), layer.mlp_norm.data(), d, normed.data());
        detail::qmatvec(layer.w1, normed.data(), hidden.data(), scratch.data());
        for (float& v : hidden) {
            v = detail::gelu(v);
        }
        detail::qmatvec(layer.w2, hidden.data(), proj.data(), scratch.data());
        for (size_t i = 0; i < d; ++i) {
            x[i] += proj[i];
        }
    }

    detail::rms_normalize(x.data(), model.final_norm.data(), d, normed.data());
    Vec<float> logits(cfg.vocab_size);
    Vec<float> erow(d);
    for (size_t t = 0; t < cfg.vocab_size; ++t) {
        embedding_row(t, erow.data());
        logits[t] = dot(erow.data(), normed.data(), d);
    }
    cache.len = pos + 1;
    return logits;
}

inline Mat<float> quantized_forward(const QuantizedModel& model, const std::vector<int>& tokens) {
    if (tokens.empty()) {
        throw std::invalid_argument("forward: empty token sequence");
    }
    if (tokens.size() > model.config.max_seq_len) {
        throw std::invalid_argument("forward: sequence exceeds max_seq_len");
    }
    KvCache cache(model.config);
    Mat<float> logits(tokens.size(), model.config.vocab_size);
    for (size_t t = 0; t < tokens.size(); ++t) {
        Vec<float> row = quantized_forward_step(model, cache, tokens[t]);
        std::copy(row.begin(), row.end(), logits.row(t));
    }
    return logits;
}

inline std::vector<int> quantized_generate(const QuantizedModel& model,
                                           const std::vector<int>& prompt_ids,
                                           const DecodeConfig& cfg) {
    cfg.validate();
    if (prompt_ids.empty()) {
        throw std::invalid_argument("generate: empty prompt");
    }
    if (prompt_ids.size() > model.config.max_seq_len) {
        throw std::invalid_argument("generate: overlength prompt");
    }
    KvCache cache(model.config);
    Vec<float> logits;
    for (const int token : prompt_ids) {
        logits = quantized_forward_step(model, cache, token);
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
            break;
        }
        logits = quantized_forward_step(model, cache, next);
    }
    return out;
}

inline std::optional<std::string> quantized_translate(const QuantizedModel& model,
                                                      const PromptSpec& spec,
                                                      const std::string& source_text,
                                                      const DecodeConfig& cfg) {
    const std::vector<int> context = encode_context(model.vocab, spec, source_text);
    if (context.size() >= model.config.max_seq_len) {
        return std::nullopt;
    }
    return model.vocab.decode(quantized_generate(model, context, cfg));
}

// ----------------------------- memory report -------------------------------

struct MemoryReport {
    std::map<std::string, size_t> by_class;  // payload bytes per tensor class
    size_t total_bytes = 0;
    size_t fp32_equivalent_bytes = 0;  // 4 bytes per parameter

    double ratio() const {
        return fp32_equivalent_bytes == 0
                   ? 0.0
                   : static_cast<double>(total_bytes) / static_cast<double>(fp32_equivalent_bytes);
    }

    std::string to_string() const {
        std::ostringstream out;
        for (const auto& [cls, bytes] : by_class) {
            out << cls << ": " << bytes << " B\n";
        }
        out << "total: " << total_bytes << " B (" << format_double(
                   static_cast<double>(total_bytes) / (1024.0 * 1024.0), 3)
            << " MiB)\n";
        out << "fp32 equivalent: " << fp32_equivalent_bytes << " B\n";
        out << "ratio vs fp32: " << format_double(ratio(), 5) << "\n";
        return out.str();
    }
};

inline MemoryReport memory_report(const TransformerModel& model) {
    const ParamCount pc = param_count(model.config);
    MemoryReport report;
    report.by_class["embedding"] = model.config.vocab_size * model.config.d_model * 4;
    size_t layer_bytes = 0;
    size_t norm_bytes = model.config.d_model * 4;  // final norm
    for (const auto& layer : model.layers) {
        layer_bytes += (layer.wq.size() + layer.wk.size() + layer.wv.size() + layer.wo.size() +
                        layer.w1.size() + layer.w2.size()) *
                       4;
        norm_bytes += (layer.attn_norm.size() + layer.mlp_norm.size()) * 4;
    }
    report.by_class["layer_weights"] = layer_bytes;
    report.by_class["norms"] = norm_bytes;
    report.total_bytes = report.by_class["embedding"] + layer_bytes + norm_bytes;
    report.fp32_equivalent_bytes = pc.total * 4;
    return report;
}

inline MemoryReport memory_report(const QuantizedModel& model) {
    const ParamCount pc = param_count(model.config);
    MemoryReport report;
    size_t meta_bytes = 0;
    const auto add_qt = [&meta_bytes](const QuantizedTensor& qt) {
        meta_bytes += qt.groups.size() * sizeof(GroupMeta);
        return qt.packed.size();
    };
    if (model.q_embedding) {
        report.by_class["embedding"] = add_qt(*model.q_embedding);
    } else {
        report.by_class["embedding"] = model.embedding.size() * 4;
    }
    size_t layer_bytes = 0;
    size_t norm_bytes = model.final_norm.size() * 4;
    for (const auto& layer : model.layers) {
        layer_bytes += add_qt(layer.wq) + add_qt(layer.wk) + add_qt(layer.wv) + add_qt(layer.wo) +
                       add_qt(layer.w1) + add_qt(layer.w2);
        norm_bytes += (layer.attn_norm.size() + layer.mlp_norm.size()) * 4;
    }
    report.by_class["layer_weights"] = layer_bytes;
    report.by_class["norms"] = norm_bytes;
    report.by_class["quant_metadata"] = meta_bytes;
    report.total_bytes =
        report.by_class["embedding"] + layer_bytes + norm_bytes + meta_bytes;
    report.fp32_equivalent_bytes = pc.total * 4;
    return report;
}

// ----------------------------- serialization -------------------------------

inline constexpr const char* kQuantMagic = "prunelab-qmodel v1";

namespace detail {

inline void write_qtensor(std::ostream& out, const QuantizedTensor& qt) {
    out << "qtensor " << qt.rows << " " << qt.cols << " " << qt.bits << " " << qt.group_size
        << " " << qt.groups.size() << " " << qt.packed.size() << "\n";
    out.write(reinterpret_cast<const char*>(qt.groups.data()),
              static_cast<std::streamsize>(qt.groups.size() * sizeof(GroupMeta)));
    out.write(reinterpret_cast<const char*>(qt.packed.data()),
              static_cast<std::streamsize>(qt.packed.size()));
}

inline QuantizedTensor read_qtensor(std::istream& in) {
    const std::string header = expect_line(in, "qtensor header");
    std::istringstream hs(header);
    std::string tag;
    size_t n_groups = 0, n_packed = 0;
    QuantizedTensor qt;
    hs >> tag >> qt.rows >> qt.cols >> qt.bits >> qt.group_size >> n_groups >> n_packed;
    if (tag != "qtensor" || !hs) {
        throw std::runtime_error("load_quantized: bad qtensor header: " + header);
    }
    qt.groups.resize(n_groups);
    qt.packed.resize(n_packed);
    in.read(reinterpret_cast<char*>(qt.groups.data()),
            static_cast<std::streamsize>(n_groups * sizeof(GroupMeta)));
    in.read(reinterpret_cast<char*>(qt.packed.data()), static_cast<std::streamsize>(n_packed));
    if (!in) {
        throw std::runtime_error("load_quantized: truncated qtensor payload");
    }
    return qt;
}

}  // namespace detail

inline void serialize_quantized(const QuantizedModel& model, std::ostream& out) {
    const ModelConfig& cfg = model.config;
    out << kQuantMagic << "\n";
    out << "vocab_size=" << cfg.vocab_size << "\n";
    out << "d_model=" << cfg.d_model << "\n";
    out << "n_heads=" << cfg.n_heads << "\n";
    out << "d_ff=" << cfg.d_ff << "\n";
    out << "n_layers=" << cfg.n_layers << "\n";
    out << "max_seq_len=" << cfg.max_seq_len << "\n";
    out << "bits=" << model.quant.bits << "\n";
    out << "group_size=" << model.quant.group_size << "\n";
    out << "quant_embeddings=" << (model.quant.include_embeddings ? 1 : 0) << "\n";
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
    if (model.q_embedding) {
        detail::write_qtensor(out, *model.q_embedding);
    } else {
        detail::write_tensor(out, model.embedding.data);
    }
    for (const auto& layer : model.layers) {
        detail::write_tensor(out, layer.attn_norm);
        detail::write_qtensor(out, layer.wq);
        detail::write_qtensor(out, layer.wk);
        detail::write_qtensor(out, layer.wv);
        detail::write_qtensor(out, layer.wo);
        detail::write_tensor(out, layer.mlp_norm);
        detail::write_qtensor(out, layer.w1);
        detail::write_qtensor(out, layer.w2);
    }
    detail::write_tensor(out, model.final_norm);
}

inline QuantizedModel deserialize_quantized(std::istream& in) {
    if (detail::expect_line(in, "magic") != kQuantMagic) {
        throw std::runtime_error("load_quantized: unsupported format or version");
    }
    QuantizedModel model;
    ModelConfig& cfg = model.config;
    cfg.vocab_size = detail::parse_field(detail::expect_line(in, "vocab_size"), "vocab_size");
    cfg.d_model = detail::parse_field(detail::expect_line(in, "d_model"), "d_model");
    cfg.n_heads = detail::parse_field(detail::expect_line(in, "n_heads"), "n_heads");
    cfg.d_ff = detail::parse_field(detail::expect_line(in, "d_ff"), "d_ff");
    cfg.n_layers = detail::parse_field(detail::expect_line(in, "n_layers"), "n_layers");
    cfg.max_seq_len = detail::parse_field(detail::expect_line(in, "max_seq_len"), "max_seq_len");
    cfg.validate();
    model.quant.bits = detail::parse_field(detail::expect_line(in, "bits"), "bits");
    model.quant.group_size =
        detail::parse_field(detail::expect_line(in, "group_size"), "group_size");
    model.quant.include_embeddings =
        detail::parse_field(detail::expect_line(in, "quant_embeddings"), "quant_embeddings") != 0;
    model.quant.validate();

    const std::string ids_line = detail::expect_line(in, "layer_ids");
    if (ids_line.rfind("layer_ids=", 0) != 0) {
        throw std::runtime_error("load_quantized: expected layer_ids line");
    }
    std::stringstream ids_stream(ids_line.substr(10));
    std::string item;
    while (std::getline(ids_stream, item, ',')) {
        if (!item.empty()) {
            model.layer_ids.push_back(static_cast<size_t>(std::stoull(item)));
        }
    }
    if (model.layer_ids.size() != cfg.n_layers) {
        throw std::runtime_error("load_quantized: layer_ids count does not match n_layers");
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
        throw std::runtime_error("load_quantized: expected weights marker");
    }

    const size_t d = cfg.d_model;
    if (model.quant.include_embeddings) {
        model.q_embedding = detail::read_qtensor(in);
    } else {
        model.embedding = Mat<float>(cfg.vocab_size, d);
        detail::read_tensor(in, model.embedding.data);
    }
    model.layers.resize(cfg.n_layers);
    for (auto& layer : model.layers) {
        layer.attn_norm.assign(d, 0.f);
        detail::read_tensor(in, layer.attn_norm);
        layer.wq = detail::read_qtensor(in);
        layer.wk = detail::read_qtensor(in);
        layer.wv = detail::read_qtensor(in);
        layer.wo = detail::read_qtensor(in);
        layer.mlp_norm.assign(d, 0.f);
        detail::read_tensor(in, layer.mlp_norm);
        layer.w1 = detail::read_qtensor(in);
        layer.w2 = detail::read_qtensor(in);
    }
    model.final_norm.assign(d, 0.f);
    detail::read_tensor(in, model.final_norm);
    char extra;
    if (in.read(&extra, 1)) {
        throw std::runtime_error("load_quantized: trailing data after weight payload");
    }
    return model;
}

inline void save_quantized(const QuantizedModel& model, const std::string& path) {
    std::ostringstream out(std::ios::binary);
    serialize_quantized(model, out);
    write_text_file(path, out.str());
}

inline QuantizedModel load_quantized(const std::string& path) {
    std::istringstream in(read_text_file(path), std::ios::binary);
    return deserialize_quantized(in);
}

}  // namespace prunelab
