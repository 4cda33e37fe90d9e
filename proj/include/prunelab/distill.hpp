#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "prunelab/corpus.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/model.hpp"

namespace prunelab {

struct KdConfig {
    double quality_threshold = 0.70;   // keep pairs scoring >= threshold
    bool dedup_against_authentic = true;
    size_t max_new_tokens = 24;

    void validate() const {
        if (quality_threshold < 0.0 || quality_threshold > 1.0) {
            throw std::invalid_argument("KdConfig: quality_threshold must be in [0,1]");
        }
        if (max_new_tokens < 1) {
            throw std::invalid_argument("KdConfig: max_new_tokens must be >= 1");
        }
    }
};

// A teacher: maps a source segment to a translation, or nullopt on decode
// failure. Both real models and oracle transforms wear this interface.
using Translator = std::function<std::optional<std::string>(const std::string&)>;

inline Translator make_model_translator(TransformerModel model, PromptSpec spec,
                                        DecodeConfig dcfg) {
    return [model = std::move(model), spec = std::move(spec), dcfg](const std::string& source) {
        return translate(model, spec, source, dcfg);
    };
}

// The exact task transform wrapped as a translator: a perfect teacher whose
// outputs equal the gold targets.
inline Translator make_oracle_translator(SynthTask task) {
    return [task](const std::string& source) -> std::optional<std::string> {
        return apply_transform(task, source);
    };
}

struct KdGeneration {
    std::vector<SegmentPair> pairs;  // origin = distilled
    size_t skipped = 0;              // decode failures

    nlohmann::json stats_json() const {
        return {{"generated", pairs.size()}, {"skipped", skipped}};
    }
};

// Teacher-translate every source; failures are skipped and counted, not fatal.
inline KdGeneration generate_kd_data(const Translator& teacher,
                                     const std::vector<std::string>& sources,
                                     const KdConfig& cfg) {
    cfg.validate();
    if (sources.empty()) {
        throw std::invalid_argument("generate_kd_data: empty source list");
    }
    KdGeneration out;
    out.pairs.reserve(sources.size());
    for (const std::string& source : sources) {
        const std::optional<std::string> target = teacher(source);
        if (!target || target->empty()) {
            out.skipped += 1;
            continue;
        }
        SegmentPair pair;
        pair.source = source;
        pair.target = *target;
        pair.origin = Origin::distilled;
        out.pairs.push_back(std::move(pair));
    }
    return out;
}

inline KdGeneration generate_kd_data(const TransformerModel& teacher, const PromptSpec& spec,
                                     const std::vector<std::string>& sources,
                                     const KdConfig& cfg) {
    DecodeConfig dcfg;
    dcfg.max_new_tokens = cfg.max_new_tokens;
    return generate_kd_data(make_model_translator(teacher, spec, dcfg), sources, cfg);
}

struct KdFilterStats {
    size_t input = 0;
    size_t dupes = 0;        // target exactly matches an authentic target
    size_t low_quality = 0;  // semantic score below threshold
    size_t kept = 0;

    bool balanced() const { return input == dupes + low_quality + kept; }

    nlohmann::json to_json() const {
        return {{"input", input}, {"dupes", dupes}, {"low_quality", low_quality}, {"kept", kept}};
    }
};

// Quality gate for KD output: drop exact target-side duplicates of authentic
// data, then drop pairs scoring below the threshold (0.70 itself is kept).
inline std::pair<std::vector<SegmentPair>, KdFilterStats> filter_kd_data(
    const std::vector<SegmentPair>& kd_pairs, const std::vector<SegmentPair>& authentic_pairs,
    const SemanticScorer& scorer, const KdConfig& cfg) {
    cfg.validate();
    std::unordered_set<std::string> authentic_targets;
    if (cfg.dedup_against_authentic) {
        for (const SegmentPair& pair : authentic_pairs) {
            authentic_targets.insert(pair.target);
        }
    }
    std::vector<SegmentPair> kept;
    KdFilterStats stats;
    stats.input = kd_pairs.size();
    for (const SegmentPair& pair : kd_pairs) {
        if (authentic_targets.count(pair.target) > 0) {
            stats.dupes += 1;
            continue;
        }
        const double score = scorer(pair.source, pair.target);
        if (score < cfg.quality_threshold) {
            stats.low_quality += 1;
            continue;
        }
        SegmentPair out = pair;
        out.semantic_score = score;
        kept.push_back(std::move(out));
    }
    stats.kept = kept.size();
    return {std::move(kept), stats};
}

// Concatenate authentic + KD data and shuffle with a fixed seed. Origin flags
// pass through so reports can count each data source.
inline std::vector<SegmentPair> mix_training_data(const std::vector<SegmentPair>& authentic,
                                                  const std::vector<SegmentPair>& kd_kept,
                                                  uint64_t seed) {
    if (authentic.empty()) {
        throw std::invalid_argument("mix_training_data: authentic data must be non-empty");
    }
    std::vector<SegmentPair> mixed;
    mixed.reserve(authentic.size() + kd_kept.size());
    mixed.insert(mixed.end(), authentic.begin(), authentic.end());
    mixed.insert(mixed.end(), kd_kept.begin(), kd_kept.end());
    Rng rng(seed);
    shuffle(mixed, rng);
    return mixed;
}

// ------------------------------- rewriting ---------------------------------

class RewriteError : public std::runtime_error {
  public:
    explicit RewriteError(const std::string& what) : std::runtime_error(what) {}
};

// External rewriting service: given a source segment and a draft target,
// produce a rewritten target. Implementations must return non-empty text or
// throw RewriteError.
class RewriterClient {
  public:
    virtual ~RewriterClient() = default;
    virtual std::string rewrite(const std::string& source, const std::string& draft_target,
                                const std::string& prompt_template, double temperature,
                                double top_p) = 0;
};

inline constexpr const char* kNewSourcePlaceholder = "{new_source_text}";
inline constexpr const char* kNewTargetPlaceholder = "{new_target_text}";

// Default instruction template for the dialect-rewriting service, with a fixed
// one-shot example block; {new_source_text}/{new_target_text} are substituted
// per pair.
inline constexpr const char* kDefaultRewriteTemplate =
    "I would like to convert a Standard Arabic text into Egyptian Arabic.\n"
    "Please generate the Egyptian Arabic version using a neutral, informative\n"
    "tone with slightly conversational phrasing, similar to the example below.\n"
    "The output should feel natural, like it's written for a general Egyptian\n"
    "audience but still accurate and clear. Do not add any commentary; just\n"
    "return the Egyptian Arabic version.\n"
    "\n"
    "English:\n"
    "<english_example>\n"
    "\n"
    "Standard Arabic:\n"
    "<standard_arabic_example>\n"
    "\n"
    "Egyptian Arabic:\n"
    "<egyptian_arabic_example>\n"
    "\n"
    "English:\n"
    "{new_source_text}\n"
    "\n"
    "Standard Arabic:\n"
    "{new_target_text}\n"
    "\n"
    "Egyptian Arabic:\n";

inline std::string render_rewrite_prompt(const std::string& prompt_template,
                                         const std::string& source,
                                         const std::string& draft_target) {
    const size_t src_pos = prompt_template.find(kNewSourcePlaceholder);
    const size_t tgt_pos = prompt_template.find(kNewTargetPlaceholder);
    if (src_pos == std::string::npos || tgt_pos == std::string::npos) {
        throw std::invalid_argument("rewrite template missing source/target placeholders");
    }
    std::string rendered = prompt_template;
    rendered.replace(rendered.find(kNewSourcePlaceholder),
                     std::string(kNewSourcePlaceholder).size(), source);
    rendered.replace(rendered.find(kNewTargetPlaceholder),
                     std::string(kNewTargetPlaceholder).size(), draft_target);
    return rendered;
}

// Deterministic in-process client for tests and offline runs: applies a fixed
// textual transform to the draft target.
class MockRewriter : public RewriterClient {
  public:
    using Transform = std::function<std::string(const std::string& source,
                                                const std::string& draft_target)>;

    explicit MockRewriter(Transform transform) : transform_(std::move(transform)) {}

    static MockRewriter identity() {
        return MockRewriter(
            [](const std::string&, const std::string& draft) { return draft; });
    }

    std::string rewrite(const std::string& source, const std::string& draft_target,
                        const std::string& prompt_template, double /*temperature*/,
                        double /*top_p*/) override {
        // Render to enforce the template contract even though the mock does
        // not consume the prompt.
        render_rewrite_prompt(prompt_template, source, draft_target);
        const std::string out = transform_(source, draft_target);
        if (out.empty()) {
            throw RewriteError("mock rewriter produced empty text");
        }
        return out;
    }

  private:
    Transform transform_;
};

struct RewriteResult {
    std::vector<SegmentPair> pairs;  // origin = rewritten, targets replaced
    size_t dropped_failures = 0;     // client errors
    size_t dropped_filtered = 0;     // post-pass rule filter

    nlohmann::json stats_json() const {
        return {{"rewritten", pairs.size()},
                {"dropped_failures", dropped_failures},
                {"dropped_filtered", dropped_filtered}};
    }
};

// Replace each pair's target with the client's rewrite. Failures drop the
// pair and are counted. A rule-based post-pass compares each rewritten target
// against the original source (length and length-ratio rules from
// FilterConfig); sources are never altered.
inline RewriteResult rewrite_corpus(const std::vector<SegmentPair>& pairs,
                                    RewriterClient& client, const std::string& prompt_template,
                                    double temperature = 0.3, double top_p = 1.0,
                                    const FilterConfig& post_rules = {}) {
    // Surface a bad template immediately rather than once per pair.
    render_rewrite_prompt(prompt_template, "", "");
    RewriteResult result;
    result.pairs.reserve(pairs.size());
    for (const SegmentPair& pair : pairs) {
        std::string rewritten;
        try {
            rewritten = client.rewrite(pair.source, pair.target, prompt_template, temperature,
                                       top_p);
        } catch (const RewriteError&) {
            result.dropped_failures += 1;
            continue;
        }
        if (rewritten.empty()) {
            result.dropped_failures += 1;
            continue;
        }
        const size_t src_words = word_count(pair.source);
        const size_t tgt_words = word_count(rewritten);
        const size_t longer = std::max(src_words, tgt_words);
        const size_t shorter = std::min(src_words, tgt_words);
        const bool too_long = tgt_words > post_rules.max_words;
        const bool bad_ratio =
            shorter == 0 || static_cast<double>(longer) / static_cast<double>(shorter) >
                                post_rules.max_length_ratio;
        if (too_long || bad_ratio) {
            result.dropped_filtered += 1;
            continue;
        }
        SegmentPair out = pair;
        out.target = rewritten;
        out.origin = Origin::rewritten;
        result.pairs.push_back(std::move(out));
    }
    return result;
}

}  // namespace prunelab
