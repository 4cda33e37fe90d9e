#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "prunelab/common.hpp"

namespace prunelab {

struct ChrfConfig {
    int char_order = 6;
    int word_order = 2;
    double beta = 2.0;

    void validate() const {
        if (char_order < 1) {
            throw std::invalid_argument("ChrfConfig: char_order must be >= 1");
        }
        if (word_order < 0) {
            throw std::invalid_argument("ChrfConfig: word_order must be >= 0");
        }
        if (!(beta > 0.0)) {
            throw std::invalid_argument("ChrfConfig: beta must be positive");
        }
    }
};

struct MetricReport {
    double chrf_pp = 0.0;
    double bleu = 0.0;
    std::optional<double> semantic;
    size_t segment_count = 0;
};

// Deterministic pluggable scoring interfaces. Callables must be pure.
using SemanticScorer = std::function<double(const std::string& source, const std::string& target)>;
using LanguageClassifier =
    std::function<std::pair<std::string, double>(const std::string& text)>;

namespace detail {

// Counts of matched / hypothesis / reference n-grams for one order,
// accumulated over the whole corpus.
struct NgramStat {
    long long matched = 0;
    long long hyp_total = 0;
    long long ref_total = 0;
};

inline void count_char_ngrams(const std::string& stripped, int order,
                              std::unordered_map<std::string, long long>& counts) {
    if (order <= 0 || stripped.size() < static_cast<size_t>(order)) {
        return;
    }
    for (size_t i = 0; i + order <= stripped.size(); ++i) {
        ++counts[stripped.substr(i, static_cast<size_t>(order))];
    }
}

inline void count_word_ngrams(const std::vector<std::string>& words, int order,
                              std::unordered_map<std::string, long long>& counts) {
    if (order <= 0 || words.size() < static_cast<size_t>(order)) {
        return;
    }
    for (size_t i = 0; i + order <= words.size(); ++i) {
        std::string key = words[i];
        for (int k = 1; k < order; ++k) {
            key += '\x1f';
            key += words[i + k];
        }
        ++counts[key];
    }
}

inline void accumulate_overlap(const std::unordered_map<std::string, long long>& hyp,
                               const std::unordered_map<std::string, long long>& ref,
                               NgramStat& stat) {
    for (const auto& [gram, hyp_count] : hyp) {
        stat.hyp_total += hyp_count;
        const auto it = ref.find(gram);
        if (it != ref.end()) {
            stat.matched += std::min(hyp_count, it->second);
        }
    }
    for (const auto& [gram, ref_count] : ref) {
        stat.ref_total += ref_count;
    }
}

inline std::string strip_whitespace(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (const char c : text) {
        if (!std::isspace(static_cast<unsigned char>(c))) {
            out += c;
        }
    }
    return out;
}

inline void require_parallel(const std::vector<std::string>& hyp,
                             const std::vector<std::string>& ref, const char* op) {
    if (hyp.empty() || ref.empty()) {
        throw std::invalid_argument(std::string(op) + ": empty corpus");
    }
    if (hyp.size() != ref.size()) {
        throw std::invalid_argument(std::string(op) + ": hypothesis/reference length mismatch");
    }
}

}  // namespace detail

// Corpus-level chrF++. Character n-grams are taken over the segment with all
// whitespace removed (so they cross word boundaries); word n-grams over
// whitespace tokens. Precision and recall are averaged arithmetically across
// all active orders, then combined with a beta-weighted F-score. An order with
// no n-grams on either side is skipped; an order empty only on the reference
// side contributes zero.
inline double chrf_pp(const std::vector<std::string>& hypotheses,
                      const std::vector<std::string>& references, ChrfConfig cfg = {}) {
    cfg.validate();
    detail::require_parallel(hypotheses, references, "chrf_pp");

    const int total_orders = cfg.char_order + cfg.word_order;
    std::vector<detail::NgramStat> stats(static_cast<size_t>(total_orders));

    for (size_t seg = 0; seg < hypotheses.size(); ++seg) {
        const std::string hyp_stripped = detail::strip_whitespace(hypotheses[seg]);
        const std::string ref_stripped = detail::strip_whitespace(references[seg]);
        const std::vector<std::string> hyp_words = split_whitespace(hypotheses[seg]);
        const std::vector<std::string> ref_words = split_whitespace(references[seg]);

        for (int order = 1; order <= cfg.char_order; ++order) {
            std::unordered_map<std::string, long long> hyp_counts;
            std::unordered_map<std::string, long long> ref_counts;
            detail::count_char_ngrams(hyp_stripped, order, hyp_counts);
            detail::count_char_ngrams(ref_stripped, order, ref_counts);
            detail::accumulate_overlap(hyp_counts, ref_counts, stats[static_cast<size_t>(order - 1)]);
        }
        for (int order = 1; order <= cfg.word_order; ++order) {
            std::unordered_map<std::string, long long> hyp_counts;
            std::unordered_map<std::string, long long> ref_counts;
            detail::count_word_ngrams(hyp_words, order, hyp_counts);
            detail::count_word_ngrams(ref_words, order, ref_counts);
            detail::accumulate_overlap(hyp_counts, ref_counts,
                                       stats[static_cast<size_t>(cfg.char_order + order - 1)]);
        }
    }

    double precision_sum = 0.0;
    double recall_sum = 0.0;
    int active_orders = 0;
    for (const detail::NgramStat& stat : stats) {
        if (stat.ref_total == 0 && stat.hyp_total == 0) {
            continue;  // order not present in either corpus
        }
        ++active_orders;
        if (stat.hyp_total > 0) {
            precision_sum += static_cast<double>(stat.matched) / static_cast<double>(stat.hyp_total);
        }
        if (stat.ref_total > 0) {
            recall_sum += static_cast<double>(stat.matched) / static_cast<double>(stat.ref_total);
        }
    }
    if (active_orders == 0) {
        return 0.0;
    }
    const double precision = precision_sum / active_orders;
    const double recall = recall_sum / active_orders;
    if (precision + recall == 0.0) {
        return 0.0;
    }
    const double b2 = cfg.beta * cfg.beta;
    return 100.0 * (1.0 + b2) * precision * recall / (b2 * precision + recall);
}

// Corpus BLEU over whitespace tokens: modified precisions for n = 1..4,
// geometric mean, brevity penalty, no smoothing. Any empty precision bucket
// zeroes the score.
inline double bleu(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references) {
    detail::require_parallel(hypotheses, references, "bleu");

    constexpr int kMaxOrder = 4;
    long long matched[kMaxOrder] = {0, 0, 0, 0};
    long long total[kMaxOrder] = {0, 0, 0, 0};
    long long hyp_len = 0;
    long long ref_len = 0;

    for (size_t seg = 0; seg < hypotheses.size(); ++seg) {
        const std::vector<std::string> hyp_words = split_whitespace(hypotheses[seg]);
        const std::vector<std::string> ref_words = split_whitespace(references[seg]);
        hyp_len += static_cast<long long>(hyp_words.size());
        ref_len += static_cast<long long>(ref_words.size());

        for (int order = 1; order <= kMaxOrder; ++order) {
            std::unordered_map<std::string, long long> hyp_counts;
            std::unordered_map<std::string, long long> ref_counts;
            detail::count_word_ngrams(hyp_words, order, hyp_counts);
            detail::count_word_ngrams(ref_words, order, ref_counts);
            for (const auto& [gram, count] : hyp_counts) {
                total[order - 1] += count;
                const auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) {
                    matched[order - 1] += std::min(count, it->second);
                }
            }
        }
    }

    if (hyp_len == 0) {
        return 0.0;
    }
    double log_precision = 0.0;
    for (int order = 0; order < kMaxOrder; ++order) {
        if (matched[order] == 0 || total[order] == 0) {
            return 0.0;
        }
        log_precision +=
            std::log(static_cast<double>(matched[order]) / static_cast<double>(total[order]));
    }
    double brevity = 1.0;
    if (hyp_len < ref_len) {
        brevity = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
    }
    return 100.0 * brevity * std::exp(log_precision / kMaxOrder);
}

// Token-level F1 between the source and the inverse-transformed target.
// Stands in for a learned cross-lingual similarity model: a synthetic pair is
// perfect exactly when the target deciphers back to the source.
inline SemanticScorer
make_token_f1_scorer(std::function<std::string(const std::string&)> invert_target) {
    return [invert = std::move(invert_target)](const std::string& source,
                                               const std::string& target) -> double {
        const std::vector<std::string> src_tokens = split_whitespace(source);
        const std::vector<std::string> tgt_tokens = split_whitespace(invert(target));
        if (src_tokens.empty() || tgt_tokens.empty()) {
            return 0.0;
        }
        std::unordered_map<std::string, long long> src_counts;
        for (const std::string& tok : src_tokens) {
            ++src_counts[tok];
        }
        long long overlap = 0;
        std::unordered_map<std::string, long long> used;
        for (const std::string& tok : tgt_tokens) {
            const auto it = src_counts.find(tok);
            if (it != src_counts.end() && used[tok] < it->second) {
                ++used[tok];
                ++overlap;
            }
        }
        if (overlap == 0) {
            return 0.0;
        }
        const double precision = static_cast<double>(overlap) / static_cast<double>(tgt_tokens.size());
        const double recall = static_cast<double>(overlap) / static_cast<double>(src_tokens.size());
        return 2.0 * precision * recall / (precision + recall);
    };
}

// Case-based classifier for the synthetic language pairs: the source language
// is all lowercase, the cipher alphabet all uppercase. Confidence is the
// fraction of letters matching the winning side.
inline LanguageClassifier make_case_language_classifier(std::string lower_tag,
                                                        std::string upper_tag) {
    return [lower_tag = std::move(lower_tag),
            upper_tag = std::move(upper_tag)](const std::string& text) {
        long long lower = 0;
        long long upper = 0;
        for (const char c : text) {
            const auto uc = static_cast<unsigned char>(c);
            if (std::islower(uc)) {
                ++lower;
            } else if (std::isupper(uc)) {
                ++upper;
            }
        }
        if (lower + upper == 0) {
            return std::make_pair(std::string("unknown"), 0.0);
        }
        const double conf =
            static_cast<double>(std::max(lower, upper)) / static_cast<double>(lower + upper);
        return std::make_pair(lower >= upper ? lower_tag : upper_tag, conf);
    };
}

}  // namespace prunelab
