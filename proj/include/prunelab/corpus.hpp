#pragma once

#include <array>
#include <stdexcept>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prunelab/common.hpp"
#include "prunelab/metrics.hpp"

namespace prunelab {

enum class Origin { authentic, distilled, rewritten };

inline std::string origin_name(Origin o) {
    switch (o) {
        case Origin::authentic: return "authentic";
        case Origin::distilled: return "distilled";
        case Origin::rewritten: return "rewritten";
    }
    return "authentic";
}

inline Origin parse_origin(const std::string& name) {
    if (name == "authentic") return Origin::authentic;
    if (name == "distilled") return Origin::distilled;
    if (name == "rewritten") return Origin::rewritten;
    throw std::invalid_argument("unknown origin: " + name);
}

struct SegmentPair {
    std::string source;
    std::string target;
    Origin origin = Origin::authentic;
    std::optional<double> semantic_score;

    bool operator==(const SegmentPair& other) const {
        return source == other.source && target == other.target && origin == other.origin &&
               semantic_score == other.semantic_score;
    }
};

struct FilterConfig {
    size_t max_words = 200;
    double max_length_ratio = 1.5;
    double lang_id_threshold = 0.9;
    double semantic_threshold = 0.7;
    size_t test_size = 500;
    std::optional<size_t> sample_size;
    uint64_t seed = 0;

    void validate() const {
        if (max_length_ratio < 1.0) {
            throw std::invalid_argument("FilterConfig: max_length_ratio must be >= 1");
        }
        if (lang_id_threshold < 0.0 || lang_id_threshold > 1.0 || semantic_threshold < 0.0 ||
            semantic_threshold > 1.0) {
            throw std::invalid_argument("FilterConfig: thresholds must lie in [0, 1]");
        }
        if (test_size < 1) {
            throw std::invalid_argument("FilterConfig: test_size must be >= 1");
        }
    }
};

struct FilterStats {
    size_t input_count = 0;
    size_t removed_duplicates = 0;
    size_t removed_length = 0;
    size_t removed_ratio = 0;
    size_t removed_lang_id = 0;
    size_t removed_semantic = 0;
    size_t output_count = 0;

    bool balanced() const {
        return input_count == output_count + removed_duplicates + removed_length + removed_ratio +
                                  removed_lang_id + removed_semantic;
    }

    nlohmann::json to_json() const {
        return {{"input_count", input_count},
                {"removed_duplicates", removed_duplicates},
                {"removed_length", removed_length},
                {"removed_ratio", removed_ratio},
                {"removed_lang_id", removed_lang_id},
                {"removed_semantic", removed_semantic},
                {"output_count", output_count}};
    }

    std::string to_table() const {
        std::ostringstream out;
        out << "stage                removed\n";
        out << "-------------------  -------\n";
        out << "duplicates           " << removed_duplicates << "\n";
        out << "length cap           " << removed_length << "\n";
        out << "length ratio         " << removed_ratio << "\n";
        out << "language id          " << removed_lang_id << "\n";
        out << "semantic             " << removed_semantic << "\n";
        out << "-------------------  -------\n";
        out << "input  " << input_count << "  ->  output  " << output_count << "\n";
        return out.str();
    }
};

// ---------------------------------------------------------------------------
// Synthetic language pairs. The target language is a fixed bijective character
// cipher over the lowercase source alphabet (rot13, then uppercased), so a
// perfect translator exists in closed form and every pair can be inverted for
// oracle scoring.
// ---------------------------------------------------------------------------

enum class SynthTask { cipher, reverse_words };

inline SynthTask parse_task(const std::string& name) {
    if (name == "cipher") return SynthTask::cipher;
    if (name == "reverse_words") return SynthTask::reverse_words;
    throw std::invalid_argument("unknown task: " + name);
}

inline std::string task_name(SynthTask task) {
    return task == SynthTask::cipher ? "cipher" : "reverse_words";
}

inline std::string source_language() { return "English"; }

inline std::string target_language(SynthTask task) {
    return task == SynthTask::cipher ? "Cipher" : "Backcipher";
}

inline std::string cipher_encode(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (const char c : text) {
        if (c >= 'a' && c <= 'z') {
            out += static_cast<char>('A' + (c - 'a' + 13) % 26);
        } else {
            out += c;
        }
    }
    return out;
}

inline std::string cipher_decode(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    for (const char c : text) {
        if (c >= 'A' && c <= 'Z') {
            out += static_cast<char>('a' + (c - 'A' + 13) % 26);
        } else {
            out += c;
        }
    }
    return out;
}

inline std::string reverse_word_order(const std::string& text) {
    std::vector<std::string> words = split_whitespace(text);
    std::reverse(words.begin(), words.end());
    return join(words);
}

inline std::string apply_transform(SynthTask task, const std::string& source) {
    if (task == SynthTask::cipher) {
        return cipher_encode(source);
    }
    return cipher_encode(reverse_word_order(source));
}

inline std::string invert_transform(SynthTask task, const std::string& target) {
    if (task == SynthTask::cipher) {
        return cipher_decode(target);
    }
    return reverse_word_order(cipher_decode(target));
}

namespace detail {
inline const std::array<const char*, 48>& synth_vocabulary() {
    static const std::array<const char*, 48> words = {
        "the",   "a",     "and",   "of",     "to",    "in",     "on",     "with",
        "for",   "is",    "was",   "are",    "be",    "has",    "had",    "not",
        "it",    "he",    "she",   "they",   "we",    "you",    "this",   "that",
        "these", "those", "time",  "day",    "way",   "man",    "world",  "life",
        "hand",  "part",  "child", "eye",    "place", "work",   "week",   "case",
        "point", "group", "fact",  "number", "house", "moment", "night",  "water"};
    return words;
}
}  // namespace detail

// Deterministic toy parallel corpus: short sentences over a small closed word
// vocabulary, targets produced by the task transform.
inline std::vector<SegmentPair> generate_synthetic_corpus(uint64_t seed, size_t size,
                                                          SynthTask task) {
    if (size < 1) {
        throw std::invalid_argument("generate_synthetic_corpus: size must be >= 1");
    }
    const auto& words = detail::synth_vocabulary();
    Rng rng(seed);
    std::vector<SegmentPair> pairs;
    pairs.reserve(size);
    for (size_t i = 0; i < size; ++i) {
        const size_t length = 3 + static_cast<size_t>(rng.next_below(6));
        std::vector<std::string> sentence;
        sentence.reserve(length);
        for (size_t w = 0; w < length; ++w) {
            sentence.emplace_back(words[rng.next_below(words.size())]);
        }
        SegmentPair pair;
        pair.source = join(sentence);
        pair.target = apply_transform(task, pair.source);
        pair.origin = Origin::authentic;
        pairs.push_back(std::move(pair));
    }
    return pairs;
}

// Filtering pipeline. Stage order is fixed: duplicates, word-count cap, length
// ratio, language id, semantic similarity. Each removed pair is accounted to
// the first stage that rejects it.
inline std::pair<std::vector<SegmentPair>, FilterStats>
filter_corpus(const std::vector<SegmentPair>& pairs, const FilterConfig& cfg,
              const LanguageClassifier& lang_id, const SemanticScorer& scorer,
              const std::string& expected_source_lang, const std::string& expected_target_lang) {
    cfg.validate();
    FilterStats stats;
    stats.input_count = pairs.size();
    std::vector<SegmentPair> kept;
    kept.reserve(pairs.size());
    std::unordered_set<std::string> seen;
    seen.reserve(pairs.size());

    for (const SegmentPair& pair : pairs) {
        std::string key = pair.source;
        key += '\x1e';
        key += pair.target;
        if (!seen.insert(std::move(key)).second) {
            ++stats.removed_duplicates;
            continue;
        }
        const size_t src_words = word_count(pair.source);
        const size_t tgt_words = word_count(pair.target);
        if (src_words > cfg.max_words || tgt_words > cfg.max_words) {
            ++stats.removed_length;
            continue;
        }
        if (src_words == 0 || tgt_words == 0 ||
            static_cast<double>(std::max(src_words, tgt_words)) /
                    static_cast<double>(std::min(src_words, tgt_words)) >
                cfg.max_length_ratio) {
            ++stats.removed_ratio;
            continue;
        }
        const auto [src_lang, src_conf] = lang_id(pair.source);
        const auto [tgt_lang, tgt_conf] = lang_id(pair.target);
        if (src_lang != expected_source_lang || src_conf < cfg.lang_id_threshold ||
            tgt_lang != expected_target_lang || tgt_conf < cfg.lang_id_threshold) {
            ++stats.removed_lang_id;
            continue;
        }
        SegmentPair out = pair;
        out.semantic_score = scorer(pair.source, pair.target);
        if (*out.semantic_score < cfg.semantic_threshold) {
            ++stats.removed_semantic;
            continue;
        }
        kept.push_back(std::move(out));
    }
    stats.output_count = kept.size();
    return {std::move(kept), stats};
}

// Seeded shuffle split: the first test_size shuffled pairs become the test
// set; the rest (optionally sampled down to sample_size) become train.
inline std::pair<std::vector<SegmentPair>, std::vector<SegmentPair>>
split_corpus(const std::vector<SegmentPair>& pairs, const FilterConfig& cfg) {
    cfg.validate();
    if (pairs.size() <= cfg.test_size) {
        throw std::invalid_argument("split_corpus: corpus too small");
    }
    std::vector<size_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    Rng rng(cfg.seed);
    shuffle(order, rng);

    std::vector<SegmentPair> test;
    test.reserve(cfg.test_size);
    for (size_t i = 0; i < cfg.test_size; ++i) {
        test.push_back(pairs[order[i]]);
    }
    std::vector<SegmentPair> train;
    size_t train_count = pairs.size() - cfg.test_size;
    if (cfg.sample_size && *cfg.sample_size < train_count) {
        train_count = *cfg.sample_size;
    }
    train.reserve(train_count);
    for (size_t i = 0; i < train_count; ++i) {
        train.push_back(pairs[order[cfg.test_size + i]]);
    }
    return {std::move(train), std::move(test)};
}

// Picks the k highest-scoring pairs as the test split, ties broken by corpus
// order; the remainder keeps its original order.
inline std::pair<std::vector<SegmentPair>, std::vector<SegmentPair>>
select_top_semantic(const std::vector<SegmentPair>& pairs, size_t k, const SemanticScorer& scorer) {
    if (pairs.size() < k) {
        throw std::invalid_argument("select_top_semantic: fewer pairs than k");
    }
    std::vector<std::pair<double, size_t>> scored;
    scored.reserve(pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        scored.emplace_back(scorer(pairs[i].source, pairs[i].target), i);
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) {
            return a.first > b.first;
        }
        return a.second < b.second;
    });
    std::set<size_t> selected;
    std::vector<SegmentPair> test;
    test.reserve(k);
    for (size_t i = 0; i < k; ++i) {
        SegmentPair p = pairs[scored[i].second];
        p.semantic_score = scored[i].first;
        test.push_back(std::move(p));
        selected.insert(scored[i].second);
    }
    std::vector<SegmentPair> train;
    train.reserve(pairs.size() - k);
    for (size_t i = 0; i < pairs.size(); ++i) {
        if (!selected.count(i)) {
            train.push_back(pairs[i]);
        }
    }
    return {std::move(test), std::move(train)};
}

// --------------------------- JSONL serialization ---------------------------

inline nlohmann::json pair_to_json(const SegmentPair& pair) {
    nlohmann::json j = {{"source", pair.source},
                        {"target", pair.target},
                        {"origin", origin_name(pair.origin)}};
    if (pair.semantic_score) {
        j["semantic_score"] = *pair.semantic_score;
    } else {
        j["semantic_score"] = nullptr;
    }
    return j;
}

inline SegmentPair pair_from_json(const nlohmann::json& j) {
    SegmentPair pair;
    pair.source = j.at("source").get<std::string>();
    pair.target = j.at("target").get<std::string>();
    pair.origin = parse_origin(j.value("origin", "authentic"));
    if (j.contains("semantic_score") && !j["semantic_score"].is_null()) {
        pair.semantic_score = j["semantic_score"].get<double>();
    }
    return pair;
}

inline void write_jsonl(const std::string& path, const std::vector<SegmentPair>& pairs) {
    std::ostringstream out;
    for (const SegmentPair& pair : pairs) {
        out << pair_to_json(pair).dump() << "\n";
    }
    write_text_file(path, out.str());
}

inline std::vector<SegmentPair> read_jsonl(const std::string& path) {
    std::vector<SegmentPair> pairs;
    for (const std::string& line : read_lines(path)) {
        if (line.empty()) {
            continue;
        }
        pairs.push_back(pair_from_json(nlohmann::json::parse(line)));
    }
    return pairs;
}

// Default scorer/classifier wiring for a synthetic task.
inline SemanticScorer default_semantic_scorer(SynthTask task) {
    return make_token_f1_scorer(
        [task](const std::string& target) { return invert_transform(task, target); });
}

inline LanguageClassifier default_language_classifier(SynthTask task) {
    return make_case_language_classifier(source_language(), target_language(task));
}

}  // namespace prunelab
