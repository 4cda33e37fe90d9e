#pragma once

#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "prunelab/corpus.hpp"
#include "prunelab/model.hpp"
#include "prunelab/trainer.hpp"

namespace prunelab {

enum class TieBreak { lowest_index };

struct PruneConfig {
    size_t target_removals = 2;
    std::vector<SegmentPair> dev_pairs;
    TieBreak tie_break = TieBreak::lowest_index;
    bool parallel_candidates = false;
    bool finetune_between_steps = false;
    PromptSpec prompt;
    DecodeConfig decode{.max_new_tokens = 24};

    void validate(const ModelConfig& model_cfg) const {
        if (target_removals < 1 || target_removals >= model_cfg.n_layers) {
            throw std::invalid_argument(
                "PruneConfig: target_removals must satisfy 1 <= n < n_layers");
        }
        if (dev_pairs.empty()) {
            throw std::invalid_argument("PruneConfig: empty dev set");
        }
        decode.validate();
    }
};

struct PruneStep {
    std::map<size_t, double> candidate_scores;  // original layer index -> score
    size_t removed = 0;                         // original layer index
    double baseline_score = 0.0;                // score of the model before this step
};

struct PruneTrace {
    std::vector<PruneStep> steps;

    bool operator==(const PruneTrace& other) const {
        if (steps.size() != other.steps.size()) {
            return false;
        }
        for (size_t i = 0; i < steps.size(); ++i) {
            if (steps[i].candidate_scores != other.steps[i].candidate_scores ||
                steps[i].removed != other.steps[i].removed ||
                steps[i].baseline_score != other.steps[i].baseline_score) {
                return false;
            }
        }
        return true;
    }
};

// Score the model with each layer removed, one at a time. Keys are ORIGINAL
// layer indices (via layer_ids) so results stay comparable across pruning
// rounds. The input model is never modified.
template <typename T>
std::map<size_t, double> layer_importance(const ModelT<T>& model,
                                          const std::vector<SegmentPair>& dev_pairs,
                                          const PromptSpec& spec, const DecodeConfig& dcfg,
                                          const CorpusScorer& scorer,
                                          bool parallel_candidates = false) {
    if (model.config.n_layers < 2) {
        throw std::invalid_argument("layer_importance: model must have >= 2 layers");
    }
    if (dev_pairs.empty()) {
        throw std::invalid_argument("layer_importance: empty dev set");
    }
    const size_t n = model.config.n_layers;
    std::vector<double> scores(n, 0.0);
    const auto eval_candidate = [&](size_t position) {
        const ModelT<T> candidate = remove_layer(model, position);
        scores[position] = evaluate_model(candidate, dev_pairs, spec, dcfg, scorer);
    };
    if (parallel_candidates) {
        std::vector<std::thread> workers;
        workers.reserve(n);
        for (size_t pos = 0; pos < n; ++pos) {
            workers.emplace_back(eval_candidate, pos);
        }
        for (std::thread& w : workers) {
            w.join();
        }
    } else {
        for (size_t pos = 0; pos < n; ++pos) {
            eval_candidate(pos);
        }
    }
    // Deterministic reduce in original-index order regardless of completion order.
    std::map<size_t, double> by_original;
    for (size_t pos = 0; pos < n; ++pos) {
        by_original[model.layer_ids[pos]] = scores[pos];
    }
    return by_original;
}

// Optional between-steps recovery hook (off by default; final-only fine-tuning
// is the standard recipe).
template <typename T>
using FinetuneHook = std::function<ModelT<T>(const ModelT<T>&)>;

// Greedy iterative pruning: each round scores every remaining layer's removal
// and removes the argmax (ties -> lowest original index). The returned model
// is NOT fine-tuned; recovery is a separate stage.
template <typename T>
std::pair<ModelT<T>, PruneTrace> greedy_prune(const ModelT<T>& model, const PruneConfig& cfg,
                                              const CorpusScorer& scorer,
                                              const FinetuneHook<T>& finetune = nullptr) {
    cfg.validate(model.config);
    ModelT<T> current = model;
    PruneTrace trace;
    for (size_t round = 0; round < cfg.target_removals; ++round) {
        PruneStep step;
        step.baseline_score =
            evaluate_model(current, cfg.dev_pairs, cfg.prompt, cfg.decode, scorer);
        step.candidate_scores = layer_importance(current, cfg.dev_pairs, cfg.prompt, cfg.decode,
                                                 scorer, cfg.parallel_candidates);
        // std::map iterates in ascending original-index order, so keeping the
        // first strict maximum implements the lowest-index tie-break.
        bool have_best = false;
        double best_score = 0.0;
        size_t best_original = 0;
        for (const auto& [original_idx, score] : step.candidate_scores) {
            if (!have_best || score > best_score) {
                have_best = true;
                best_score = score;
                best_original = original_idx;
            }
        }
        step.removed = best_original;
        trace.steps.push_back(step);

        size_t position = 0;
        while (position < current.layer_ids.size() &&
               current.layer_ids[position] != best_original) {
            ++position;
        }
        current = remove_layer(current, position);
        if (cfg.finetune_between_steps && finetune) {
            current = finetune(current);
        }
    }
    return {std::move(current), std::move(trace)};
}

// Per-step candidate table sorted by original index, flagging the removal.
inline std::string importance_profile_report(const PruneTrace& trace) {
    if (trace.steps.empty()) {
        throw std::invalid_argument("importance_profile_report: empty trace");
    }
    std::ostringstream out;
    out << "| step | baseline | layer | score without layer | removed |\n";
    out << "|------|----------|-------|---------------------|---------|\n";
    for (size_t s = 0; s < trace.steps.size(); ++s) {
        const PruneStep& step = trace.steps[s];
        for (const auto& [original_idx, score] : step.candidate_scores) {
            out << "| " << (s + 1) << " | " << format_double(step.baseline_score, 2) << " | "
                << original_idx << " | " << format_double(score, 2) << " | "
                << (original_idx == step.removed ? "yes" : "") << " |\n";
        }
    }
    return out.str();
}

inline std::vector<size_t> removed_layers(const PruneTrace& trace) {
    std::vector<size_t> out;
    out.reserve(trace.steps.size());
    for (const PruneStep& step : trace.steps) {
        out.push_back(step.removed);
    }
    return out;
}

}  // namespace prunelab
