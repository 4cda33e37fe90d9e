#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "prunelab/common.hpp"
#include "prunelab/corpus.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/model.hpp"

namespace prunelab {

// Corpus-level metric injected into training/pruning; higher is better.
using CorpusScorer = std::function<double(const std::vector<std::string>& hypotheses,
                                          const std::vector<std::string>& references)>;

inline CorpusScorer make_chrf_scorer(ChrfConfig cfg = {}) {
    return [cfg](const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
        return chrf_pp(hyps, refs, cfg);
    };
}

struct TrainConfig {
    double learning_rate = 3e-4;  // desk-scale default; see reference_recipe()
    size_t batch_size = 16;
    size_t epochs = 3;
    size_t patience = 5;
    size_t eval_every = 50;
    uint64_t seed = 0;
    std::optional<size_t> max_steps;
    double grad_clip = 1.0;            // global-norm clip; 0 disables
    double beta1 = 0.9;                // Adam moment decay
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    DecodeConfig eval_decode{.max_new_tokens = 24};

    void validate() const {
        if (learning_rate < 0) {
            throw std::invalid_argument("TrainConfig: learning_rate must be >= 0");
        }
        if (batch_size < 1 || epochs < 1 || eval_every < 1) {
            throw std::invalid_argument("TrainConfig: batch_size, epochs, eval_every must be >= 1");
        }
        if (patience < 1) {
            throw std::invalid_argument("TrainConfig: patience must be >= 1");
        }
        if (max_steps && *max_steps < 1) {
            throw std::invalid_argument("TrainConfig: max_steps must be >= 1 when set");
        }
        eval_decode.validate();
    }
};

// The published fine-tuning recovery recipe, scaled for an 8B-parameter model:
// lr 2e-5, batch 8, 1 epoch, patience 5.
inline TrainConfig reference_recipe() {
    TrainConfig cfg;
    cfg.learning_rate = 2e-5;
    cfg.batch_size = 8;
    cfg.epochs = 1;
    cfg.patience = 5;
    return cfg;
}

struct TrainEval {
    size_t step = 0;
    double train_loss = 0.0;
    double dev_chrf_pp = 0.0;
};

struct TrainLog {
    std::vector<TrainEval> records;  // ordered by step
    bool stopped_early = false;
    size_t best_step = 0;
    double best_dev_chrf_pp = 0.0;
    std::string stop_reason;  // "patience" | "epochs" | "max_steps"

    std::string to_csv() const {
        std::ostringstream out;
        out << "step,train_loss,dev_chrf_pp\n";
        for (const TrainEval& r : records) {
            out << r.step << "," << format_double(r.train_loss) << ","
                << format_double(r.dev_chrf_pp) << "\n";
        }
        return out.str();
    }
};

// ------------------------------ gradients ----------------------------------

template <typename T>
struct LayerGradsT {
    Vec<T> attn_norm;
    Mat<T> wq, wk, wv, wo;
    Vec<T> mlp_norm;
    Mat<T> w1, w2;
};

template <typename T>
struct GradientsT {
    Mat<T> embedding;
    std::vector<LayerGradsT<T>> layers;
    Vec<T> final_norm;
};

template <typename T>
GradientsT<T> zero_gradients(const ModelT<T>& model) {
    const ModelConfig& cfg = model.config;
    GradientsT<T> g;
    g.embedding = Mat<T>(cfg.vocab_size, cfg.d_model);
    g.layers.resize(cfg.n_layers);
    for (auto& layer : g.layers) {
        layer.attn_norm.assign(cfg.d_model, T(0));
        layer.wq = Mat<T>(cfg.d_model, cfg.d_model);
        layer.wk = Mat<T>(cfg.d_model, cfg.d_model);
        layer.wv = Mat<T>(cfg.d_model, cfg.d_model);
        layer.wo = Mat<T>(cfg.d_model, cfg.d_model);
        layer.mlp_norm.assign(cfg.d_model, T(0));
        layer.w1 = Mat<T>(cfg.d_ff, cfg.d_model);
        layer.w2 = Mat<T>(cfg.d_model, cfg.d_ff);
    }
    g.final_norm.assign(cfg.d_model, T(0));
    return g;
}

// Visit every (parameter, gradient-slot) pair in a fixed order. Used by the
// optimizer, the global-norm clip, and the finite-difference harness.
template <typename T, typename Fn>
void for_each_param(ModelT<T>& model, GradientsT<T>& grads, Fn&& fn) {
    fn(model.embedding.data, grads.embedding.data);
    for (size_t l = 0; l < model.layers.size(); ++l) {
        auto& lm = model.layers[l];
        auto& lg = grads.layers[l];
        fn(lm.attn_norm, lg.attn_norm);
        fn(lm.wq.data, lg.wq.data);
        fn(lm.wk.data, lg.wk.data);
        fn(lm.wv.data, lg.wv.data);
        fn(lm.wo.data, lg.wo.data);
        fn(lm.mlp_norm, lg.mlp_norm);
        fn(lm.w1.data, lg.w1.data);
        fn(lm.w2.data, lg.w2.data);
    }
    fn(model.final_norm, grads.final_norm);
}

namespace detail {

// Activations recorded by the training forward pass, per layer, flattened over
// positions (seq_len rows of d_model / d_ff).
template <typename T>
struct LayerTape {
    Mat<T> x_in;        // residual stream entering the layer
    Mat<T> normed1;     // after pre-attention RMS norm
    Mat<T> q, k, v;     // q/k post-rotary
    std::vector<Vec<T>> probs;  // per position: n_heads * (pos+1) attention weights
    Mat<T> ctx;         // concatenated head outputs (input to wo)
    Mat<T> x_mid;       // residual stream after attention
    Mat<T> normed2;     // after pre-MLP RMS norm
    Mat<T> hidden_pre;  // w1 output before GELU
    Mat<T> hidden_post; // after GELU
};

template <typename T>
struct Tape {
    std::vector<LayerTape<T>> layers;
    Mat<T> x_final;   // residual stream entering the final norm
    Mat<T> normed_f;  // after final RMS norm
};

template <typename T>
inline T gelu_derivative(T x) {
    const T phi = std::exp(-x * x / T(2)) / std::sqrt(T(2) * static_cast<T>(M_PI));
    return T(0.5) * (T(1) + std::erf(x / std::sqrt(T(2)))) + x * phi;
}

// Forward pass over a whole sequence that mirrors forward_step op for op while
// recording every intermediate needed by the backward pass.
template <typename T>
Tape<T> training_forward(const ModelT<T>& model, const std::vector<int>& tokens) {
    const ModelConfig& cfg = model.config;
    const size_t n = tokens.size();
    const size_t d = cfg.d_model;
    const size_t hd = cfg.head_dim();
    const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));

    Tape<T> tape;
    tape.layers.resize(cfg.n_layers);
    for (auto& lt : tape.layers) {
        lt.x_in = Mat<T>(n, d);
        lt.normed1 = Mat<T>(n, d);
        lt.q = Mat<T>(n, d);
        lt.k = Mat<T>(n, d);
        lt.v = Mat<T>(n, d);
        lt.probs.resize(n);
        lt.ctx = Mat<T>(n, d);
        lt.x_mid = Mat<T>(n, d);
        lt.normed2 = Mat<T>(n, d);
        lt.hidden_pre = Mat<T>(n, cfg.d_ff);
        lt.hidden_post = Mat<T>(n, cfg.d_ff);
    }
    tape.x_final = Mat<T>(n, d);
    tape.normed_f = Mat<T>(n, d);

    std::vector<T> cos_tab(hd / 2), sin_tab(hd / 2);
    Mat<T> x(n, d);
    for (size_t p = 0; p < n; ++p) {
        const int tok = tokens[p];
        if (tok < 0 || static_cast<size_t>(tok) >= cfg.vocab_size) {
            throw std::invalid_argument("training_forward: token id out of range");
        }
        std::copy(model.embedding.row(static_cast<size_t>(tok)),
                  model.embedding.row(static_cast<size_t>(tok)) + d, x.row(p));
    }

    for (size_t l = 0; l < cfg.n_layers; ++l) {
        const DecoderLayerT<T>& layer = model.layers[l];
        LayerTape<T>& lt = tape.layers[l];
        std::copy(x.data.begin(), x.data.end(), lt.x_in.data.begin());

        for (size_t p = 0; p < n; ++p) {
            rms_normalize(lt.x_in.row(p), layer.attn_norm.data(), d, lt.normed1.row(p));
            matvec(layer.wq, lt.normed1.row(p), lt.q.row(p));
            matvec(layer.wk, lt.normed1.row(p), lt.k.row(p));
            matvec(layer.wv, lt.normed1.row(p), lt.v.row(p));
            fill_rope_tables(hd, p, cos_tab.data(), sin_tab.data());
            apply_rope(lt.q.row(p), cfg.n_heads, hd, cos_tab.data(), sin_tab.data());
            apply_rope(lt.k.row(p), cfg.n_heads, hd, cos_tab.data(), sin_tab.data());
        }
        for (size_t p = 0; p < n; ++p) {
            lt.probs[p].assign(cfg.n_heads * (p + 1), T(0));
            for (size_t h = 0; h < cfg.n_heads; ++h) {
                const T* qh = lt.q.row(p) + h * hd;
                T* pr = lt.probs[p].data() + h * (p + 1);
                T max_score = std::numeric_limits<T>::lowest();
                for (size_t j = 0; j <= p; ++j) {
                    pr[j] = dot(qh, lt.k.row(j) + h * hd, hd) * inv_sqrt_hd;
                    max_score = std::max(max_score, pr[j]);
                }
                T denom = 0;
                for (size_t j = 0; j <= p; ++j) {
                    pr[j] = std::exp(pr[j] - max_score);
                    denom += pr[j];
                }
                T* ch = lt.ctx.row(p) + h * hd;
                std::fill(ch, ch + hd, T(0));
                for (size_t j = 0; j <= p; ++j) {
                    pr[j] /= denom;
                    const T* vh = lt.v.row(j) + h * hd;
                    for (size_t i = 0; i < hd; ++i) {
                        ch[i] += pr[j] * vh[i];
                    }
                }
            }
            Vec<T> proj(d);
            matvec(layer.wo, lt.ctx.row(p), proj.data());
            for (size_t i = 0; i < d; ++i) {
                lt.x_mid.row(p)[i] = lt.x_in.row(p)[i] + proj[i];
            }
        }
        for (size_t p = 0; p < n; ++p) {
            rms_normalize(lt.x_mid.row(p), layer.mlp_norm.data(), d, lt.normed2.row(p));
            matvec(layer.w1, lt.normed2.row(p), lt.hidden_pre.row(p));
            for (size_t i = 0; i < cfg.d_ff; ++i) {
                lt.hidden_post.row(p)[i] = gelu(lt.hidden_pre.row(p)[i]);
            }
            Vec<T> proj(d);
            matvec(layer.w2, lt.hidden_post.row(p), proj.data());
            for (size_t i = 0; i < d; ++i) {
                x.row(p)[i] = lt.x_mid.row(p)[i] + proj[i];
            }
        }
    }
    std::copy(x.data.begin(), x.data.end(), tape.x_final.data.begin());
    for (size_t p = 0; p < n; ++p) {
        rms_normalize(tape.x_final.row(p), model.final_norm.data(), d, tape.normed_f.row(p));
    }
    return tape;
}

// d(loss)/d(x) and d(loss)/d(gain) for y_i = x_i * gain_i / r,
// r = sqrt(mean(x^2) + eps).
template <typename T>
inline void rms_backward(const T* x, const T* gain, const T* dy, size_t n, T* dx_acc,
                         T* dgain_acc) {
    const T ss = dot(x, x, n);
    const T r = std::sqrt(ss / static_cast<T>(n) + static_cast<T>(kRmsEps));
    T xg = 0;  // sum_i x_i * gain_i * dy_i
    for (size_t i = 0; i < n; ++i) {
        xg += x[i] * gain[i] * dy[i];
    }
    const T coef = xg / (static_cast<T>(n) * r * r * r);
    for (size_t i = 0; i < n; ++i) {
        dx_acc[i] += gain[i] * dy[i] / r - x[i] * coef;
        dgain_acc[i] += dy[i] * x[i] / r;
    }
}

}  // namespace detail

// Batch element: token sequence plus the index of the first supervised token.
// Loss is computed only on predictions of positions >= first_target.
using Batch = std::vector<EncodedExample>;

inline Batch make_batch(const Vocab& vocab, const PromptSpec& spec,
                        const std::vector<SegmentPair>& pairs, size_t max_seq_len) {
    Batch batch;
    batch.reserve(pairs.size());
    for (const SegmentPair& pair : pairs) {
        batch.push_back(encode_example(vocab, spec, pair.source, pair.target, max_seq_len));
    }
    return batch;
}

// Mean next-token cross-entropy over supervised positions plus gradients for
// every trainable tensor. Softmax/CE backward feeds a full reverse pass
// through the decoder stack; the embedding gradient is the sum of the tied
// output-head term and the input-lookup term.
template <typename T>
std::pair<T, GradientsT<T>> loss_and_gradients(const ModelT<T>& model, const Batch& batch) {
    const ModelConfig& cfg = model.config;
    if (batch.empty()) {
        throw std::invalid_argument("loss_and_gradients: empty batch");
    }
    size_t total_labels = 0;
    for (const EncodedExample& ex : batch) {
        if (ex.ids.size() > cfg.max_seq_len) {
            throw std::invalid_argument("loss_and_gradients: sequence exceeds max_seq_len");
        }
        if (ex.first_target < 1 || ex.first_target > ex.ids.size()) {
            throw std::invalid_argument("loss_and_gradients: invalid first_target");
        }
        total_labels += ex.ids.size() - ex.first_target;
    }
    if (total_labels == 0) {
        throw std::invalid_argument("loss_and_gradients: no target tokens");
    }

    const size_t d = cfg.d_model;
    const size_t hd = cfg.head_dim();
    const T inv_sqrt_hd = T(1) / std::sqrt(static_cast<T>(hd));
    const T inv_labels = T(1) / static_cast<T>(total_labels);

    GradientsT<T> grads = zero_gradients(model);
    T loss = 0;
    std::vector<T> cos_tab(hd / 2), sin_tab(hd / 2);

    for (const EncodedExample& ex : batch) {
        const size_t n = ex.ids.size();
        detail::Tape<T> tape = detail::training_forward(model, ex.ids);

        // CE over supervised predictions; d_normed_f collects head backward.
        Mat<T> d_normed_f(n, d);
        std::vector<T> probs(cfg.vocab_size);
        for (size_t p = 0; p + 1 < n; ++p) {
            if (p + 1 < ex.first_target) {
                continue;  // prediction of a context token: masked out
            }
            const int label = ex.ids[p + 1];
            const T* nf = tape.normed_f.row(p);
            T max_logit = std::numeric_limits<T>::lowest();
            for (size_t t = 0; t < cfg.vocab_size; ++t) {
                probs[t] = dot(model.embedding.row(t), nf, d);
                max_logit = std::max(max_logit, probs[t]);
            }
            T denom = 0;
            for (size_t t = 0; t < cfg.vocab_size; ++t) {
                probs[t] = std::exp(probs[t] - max_logit);
                denom += probs[t];
            }
            const T log_p = std::log(probs[static_cast<size_t>(label)] / denom);
            loss -= log_p * inv_labels;
            for (size_t t = 0; t < cfg.vocab_size; ++t) {
                T dl = probs[t] / denom;
                if (static_cast<int>(t) == label) {
                    dl -= T(1);
                }
                dl *= inv_labels;
                // head side of the tied embedding + backprop into normed_f
                const T* erow = model.embedding.row(t);
                T* egrad = grads.embedding.row(t);
                T* dnf = d_normed_f.row(p);
                for (size_t i = 0; i < d; ++i) {
                    egrad[i] += dl * nf[i];
                    dnf[i] += dl * erow[i];
                }
            }
        }

        // Final norm backward.
        Mat<T> dx(n, d);
        for (size_t p = 0; p < n; ++p) {
            detail::rms_backward(tape.x_final.row(p), model.final_norm.data(),
                                 d_normed_f.row(p), d, dx.row(p), grads.final_norm.data());
        }

        // Decoder stack backward, last layer first.
        for (size_t l = cfg.n_layers; l-- > 0;) {
            const DecoderLayerT<T>& layer = model.layers[l];
            detail::LayerTape<T>& lt = tape.layers[l];
            LayerGradsT<T>& lg = grads.layers[l];

            // MLP block: x_out = x_mid + w2 · gelu(w1 · rms(x_mid)).
            Mat<T> dx_mid(n, d);
            Vec<T> d_hidden(cfg.d_ff), d_normed2(d);
            for (size_t p = 0; p < n; ++p) {
                const T* dxp = dx.row(p);
                std::copy(dxp, dxp + d, dx_mid.row(p));  // residual branch
                outer_acc(lg.w2, dxp, lt.hidden_post.row(p));
                std::fill(d_hidden.begin(), d_hidden.end(), T(0));
                matvec_transpose_acc(layer.w2, dxp, d_hidden.data());
                for (size_t i = 0; i < cfg.d_ff; ++i) {
                    d_hidden[i] *= detail::gelu_derivative(lt.hidden_pre.row(p)[i]);
                }
                outer_acc(lg.w1, d_hidden.data(), lt.normed2.row(p));
                std::fill(d_normed2.begin(), d_normed2.end(), T(0));
                matvec_transpose_acc(layer.w1, d_hidden.data(), d_normed2.data());
                detail::rms_backward(lt.x_mid.row(p), layer.mlp_norm.data(), d_normed2.data(),
                                     d, dx_mid.row(p), lg.mlp_norm.data());
            }

            // Attention block: x_mid = x_in + wo · attn(rms(x_in)).
            Mat<T> dq(n, d), dk(n, d), dv(n, d), d_ctx(n, d);
            for (size_t p = 0; p < n; ++p) {
                outer_acc(lg.wo, dx_mid.row(p), lt.ctx.row(p));
                matvec_transpose_acc(layer.wo, dx_mid.row(p), d_ctx.row(p));
            }
            std::vector<T> d_probs;
            for (size_t p = 0; p < n; ++p) {
                for (size_t h = 0; h < cfg.n_heads; ++h) {
                    const T* dch = d_ctx.row(p) + h * hd;
                    const T* pr = lt.probs[p].data() + h * (p + 1);
                    d_probs.assign(p + 1, T(0));
                    T inner = 0;  // sum_j probs_j * d_probs_j for softmax backward
                    for (size_t j = 0; j <= p; ++j) {
                        d_probs[j] = dot(dch, lt.v.row(j) + h * hd, hd);
                        T* dvh = dv.row(j) + h * hd;
                        for (size_t i = 0; i < hd; ++i) {
                            dvh[i] += pr[j] * dch[i];
                        }
                        inner += pr[j] * d_probs[j];
                    }
                    const T* qh = lt.q.row(p) + h * hd;
                    T* dqh = dq.row(p) + h * hd;
                    for (size_t j = 0; j <= p; ++j) {
                        const T dscore = pr[j] * (d_probs[j] - inner) * inv_sqrt_hd;
                        const T* kh = lt.k.row(j) + h * hd;
                        T* dkh = dk.row(j) + h * hd;
                        for (size_t i = 0; i < hd; ++i) {
                            dqh[i] += dscore * kh[i];
                            dkh[i] += dscore * qh[i];
                        }
                    }
                }
            }
            // Undo the rotary encoding (inverse rotation), then project back.
            Mat<T> d_normed1(n, d);
            for (size_t p = 0; p < n; ++p) {
                detail::fill_rope_tables(hd, p, cos_tab.data(), sin_tab.data());
                for (T& c : sin_tab) {
                    c = -c;
                }
                detail::apply_rope(dq.row(p), cfg.n_heads, hd, cos_tab.data(), sin_tab.data());
                detail::apply_rope(dk.row(p), cfg.n_heads, hd, cos_tab.data(), sin_tab.data());
                for (T& c : sin_tab) {
                    c = -c;
                }
                outer_acc(lg.wq, dq.row(p), lt.normed1.row(p));
                outer_acc(lg.wk, dk.row(p), lt.normed1.row(p));
                outer_acc(lg.wv, dv.row(p), lt.normed1.row(p));
                matvec_transpose_acc(layer.wq, dq.row(p), d_normed1.row(p));
                matvec_transpose_acc(layer.wk, dk.row(p), d_normed1.row(p));
                matvec_transpose_acc(layer.wv, dv.row(p), d_normed1.row(p));
            }
            for (size_t p = 0; p < n; ++p) {
                std::copy(dx_mid.row(p), dx_mid.row(p) + d, dx.row(p));  // residual branch
                detail::rms_backward(lt.x_in.row(p), layer.attn_norm.data(), d_normed1.row(p),
                                     d, dx.row(p), lg.attn_norm.data());
            }
        }

        // Input-lookup side of the tied embedding.
        for (size_t p = 0; p < n; ++p) {
            T* egrad = grads.embedding.row(static_cast<size_t>(ex.ids[p]));
            const T* dxp = dx.row(p);
            for (size_t i = 0; i < d; ++i) {
                egrad[i] += dxp[i];
            }
        }
    }
    return {loss, std::move(grads)};
}

// ------------------------------- optimizer ---------------------------------

template <typename T>
struct AdamState {
    GradientsT<T> m;
    GradientsT<T> v;
    size_t t = 0;

    explicit AdamState(const ModelT<T>& model)
        : m(zero_gradients(model)), v(zero_gradients(model)) {}
};

template <typename T>
double global_grad_norm(const ModelT<T>& model, GradientsT<T>& grads) {
    double sq = 0.0;
    for_each_param(const_cast<ModelT<T>&>(model), grads, [&sq](auto& /*param*/, auto& grad) {
        for (const T g : grad) {
            sq += static_cast<double>(g) * static_cast<double>(g);
        }
    });
    return std::sqrt(sq);
}

template <typename T>
void adam_update(ModelT<T>& model, GradientsT<T>& grads, AdamState<T>& state,
                 const TrainConfig& cfg) {
    if (cfg.grad_clip > 0) {
        const double norm = global_grad_norm(model, grads);
        if (norm > cfg.grad_clip) {
            const T scale = static_cast<T>(cfg.grad_clip / norm);
            for_each_param(model, grads, [scale](auto& /*param*/, auto& grad) {
                for (T& g : grad) {
                    g *= scale;
                }
            });
        }
    }
    state.t += 1;
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T bc1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.t)));
    const T bc2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.t)));
    const T lr = static_cast<T>(cfg.learning_rate);
    const T eps = static_cast<T>(cfg.adam_eps);

    size_t tensor_idx = 0;
    GradientsT<T>* mm = &state.m;
    GradientsT<T>* vv = &state.v;
    // Walk m and v in lockstep with the parameters via flat tensor indexing.
    std::vector<std::vector<T>*> m_tensors, v_tensors;
    for_each_param(model, *mm, [&m_tensors](auto& /*param*/, auto& slot) {
        m_tensors.push_back(&slot);
    });
    for_each_param(model, *vv, [&v_tensors](auto& /*param*/, auto& slot) {
        v_tensors.push_back(&slot);
    });
    for_each_param(model, grads, [&](auto& param, auto& grad) {
        std::vector<T>& m = *m_tensors[tensor_idx];
        std::vector<T>& v = *v_tensors[tensor_idx];
        ++tensor_idx;
        for (size_t i = 0; i < param.size(); ++i) {
            const T g = grad[i];
            m[i] = b1 * m[i] + (T(1) - b1) * g;
            v[i] = b2 * v[i] + (T(1) - b2) * g * g;
            const T m_hat = m[i] / bc1;
            const T v_hat = v[i] / bc2;
            param[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    });
}

// ------------------------------ evaluation ---------------------------------

// Decode every dev source greedily and score hypotheses against references.
// This is the public decode+score path shared by training eval and pruning.
template <typename T>
double evaluate_model(const ModelT<T>& model, const std::vector<SegmentPair>& pairs,
                      const PromptSpec& spec, const DecodeConfig& dcfg,
                      const CorpusScorer& scorer) {
    if (pairs.empty()) {
        throw std::invalid_argument("evaluate_model: empty evaluation set");
    }
    std::vector<std::string> hyps, refs;
    hyps.reserve(pairs.size());
    refs.reserve(pairs.size());
    for (const SegmentPair& pair : pairs) {
        const std::optional<std::string> hyp = translate(model, spec, pair.source, dcfg);
        hyps.push_back(hyp.value_or(""));
        refs.push_back(pair.target);
    }
    return scorer(hyps, refs);
}

// ------------------------------- training ----------------------------------

// Next-token training with dev-metric early stopping. Evaluates at step 0 and
// every eval_every steps; stops once the dev score has failed to improve for
// `patience` consecutive evaluations, at the epoch budget, or at max_steps —
// whichever comes first (recorded in stop_reason). Returns the weights from
// the best evaluation, not the last.
template <typename T>
std::pair<ModelT<T>, TrainLog> train(const ModelT<T>& model,
                                     const std::vector<SegmentPair>& train_pairs,
                                     const std::vector<SegmentPair>& dev_pairs,
                                     const PromptSpec& spec, const TrainConfig& cfg,
                                     const CorpusScorer& scorer = make_chrf_scorer()) {
    cfg.validate();
    if (train_pairs.empty() || dev_pairs.empty()) {
        throw std::invalid_argument("train: empty train or dev set");
    }
    if (model.vocab.empty()) {
        throw std::invalid_argument("train: model has no vocabulary");
    }

    ModelT<T> current = model;
    ModelT<T> best = model;
    TrainLog log;
    AdamState<T> adam(current);
    Rng rng(cfg.seed);

    const size_t steps_per_epoch =
        (train_pairs.size() + cfg.batch_size - 1) / cfg.batch_size;
    size_t planned_steps = steps_per_epoch * cfg.epochs;
    std::string budget_reason = "epochs";
    if (cfg.max_steps && *cfg.max_steps < planned_steps) {
        planned_steps = *cfg.max_steps;
        budget_reason = "max_steps";
    }

    double best_score = -1.0;
    size_t evals_since_best = 0;
    double loss_accum = 0.0;
    size_t loss_count = 0;

    const auto run_eval = [&](size_t step, double train_loss) -> bool {
        const double score = evaluate_model(current, dev_pairs, spec, cfg.eval_decode, scorer);
        log.records.push_back({step, train_loss, score});
        if (score > best_score) {
            best_score = score;
            log.best_step = step;
            log.best_dev_chrf_pp = score;
            best = current;
            evals_since_best = 0;
        } else {
            evals_since_best += 1;
        }
        return evals_since_best >= cfg.patience;
    };

    // Step-0 baseline: loss on the first batch (no update) plus a dev eval.
    std::vector<size_t> order(train_pairs.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    shuffle(order, rng);
    {
        std::vector<SegmentPair> first;
        for (size_t i = 0; i < std::min(cfg.batch_size, order.size()); ++i) {
            first.push_back(train_pairs[order[i]]);
        }
        const Batch batch = make_batch(current.vocab, spec, first, current.config.max_seq_len);
        const auto [l0, g0] = loss_and_gradients(current, batch);
        if (run_eval(0, static_cast<double>(l0))) {
            log.stopped_early = true;
            log.stop_reason = "patience";
            return {std::move(best), std::move(log)};
        }
    }

    size_t step = 0;
    bool stopped = false;
    for (size_t epoch = 0; epoch < cfg.epochs && !stopped; ++epoch) {
        if (epoch > 0) {
            shuffle(order, rng);
        }
        for (size_t start = 0; start < order.size() && !stopped; start += cfg.batch_size) {
            std::vector<SegmentPair> chunk;
            for (size_t i = start; i < std::min(start + cfg.batch_size, order.size()); ++i) {
                chunk.push_back(train_pairs[order[i]]);
            }
            const Batch batch = make_batch(current.vocab, spec, chunk, current.config.max_seq_len);
            auto [loss, grads] = loss_and_gradients(current, batch);
            adam_update(current, grads, adam, cfg);
            step += 1;
            loss_accum += static_cast<double>(loss);
            loss_count += 1;

            const bool budget_done = step >= planned_steps;
            if (step % cfg.eval_every == 0 || budget_done) {
                const double mean_loss = loss_accum / static_cast<double>(loss_count);
                loss_accum = 0.0;
                loss_count = 0;
                if (run_eval(step, mean_loss)) {
                    log.stopped_early = true;
                    log.stop_reason = "patience";
                    stopped = true;
                    break;
                }
            }
            if (budget_done) {
                log.stop_reason = budget_reason;
                stopped = true;
            }
        }
    }
    if (log.stop_reason.empty()) {
        log.stop_reason = budget_reason;
    }
    return {std::move(best), std::move(log)};
}

}  // namespace prunelab
