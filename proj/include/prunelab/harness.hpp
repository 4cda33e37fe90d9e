#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunelab/corpus.hpp"
#include "prunelab/distill.hpp"
#include "prunelab/metrics.hpp"
#include "prunelab/model.hpp"
#include "prunelab/pruner.hpp"
#include "prunelab/quantizer.hpp"
#include "prunelab/trainer.hpp"

namespace prunelab {

struct ExperimentConfig {
    SynthTask task = SynthTask::cipher;
    size_t corpus_size = 20000;
    uint64_t corpus_seed = 0;
    FilterConfig filter;
    size_t dev_size = 128;  // dev set = first dev_size segments of the test split
    ModelConfig model;
    uint64_t model_seed = 0;
    TrainConfig train;
    TrainConfig finetune;
    std::vector<size_t> prune_targets{2, 4};  // layers to remove, strictly increasing
    bool prune_parallel = false;
    bool kd_enabled = false;
    KdConfig kd;
    uint64_t kd_mix_seed = 0;
    bool quant_enabled = false;
    QuantConfig quant;
    bool bench_enabled = true;
    size_t bench_repetitions = 3;
    size_t bench_prompts = 16;
    size_t bench_new_tokens = 32;
    std::string output_dir = "out";

    void validate() const {
        filter.validate();
        model.validate();
        train.validate();
        finetune.validate();
        kd.validate();
        quant.validate();
        if (corpus_size < 1 || dev_size < 1) {
            throw std::invalid_argument("ExperimentConfig: corpus_size and dev_size must be >= 1");
        }
        for (size_t i = 0; i < prune_targets.size(); ++i) {
            if (prune_targets[i] >= model.n_layers) {
                throw std::invalid_argument("ExperimentConfig: prune target must be < n_layers");
            }
            if (i > 0 && prune_targets[i] <= prune_targets[i - 1]) {
                throw std::invalid_argument(
                    "ExperimentConfig: prune targets must be strictly increasing");
            }
        }
        if (bench_enabled && (bench_repetitions < 3 || bench_prompts < 1 || bench_new_tokens < 1)) {
            throw std::invalid_argument(
                "ExperimentConfig: benchmarks need >= 3 repetitions and >= 1 prompt/token");
        }
        if (output_dir.empty()) {
            throw std::invalid_argument("ExperimentConfig: output_dir must be set");
        }
    }
};

// ------------------------- config file handling ----------------------------
//
// Flat key-value text with dotted section prefixes:
//   corpus.size = 20000
//   prune.targets = 2,4
// '#' starts a comment; blank lines are ignored. Every key can also be set
// from the command line as --set key=value.

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) {
        ++b;
    }
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) {
        --e;
    }
    return s.substr(b, e - b);
}

inline bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on" || value == "yes") {
        return true;
    }
    if (value == "false" || value == "0" || value == "off" || value == "no") {
        return false;
    }
    throw std::invalid_argument("config: bad boolean for " + key + ": " + value);
}

inline size_t parse_count(const std::string& key, const std::string& value) {
    try {
        return static_cast<size_t>(std::stoull(value));
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad count for " + key + ": " + value);
    }
}

inline double parse_real(const std::string& key, const std::string& value) {
    try {
        return std::stod(value);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: bad number for " + key + ": " + value);
    }
}

inline std::vector<size_t> parse_count_list(const std::string& key, const std::string& value) {
    std::vector<size_t> out;
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(parse_count(key, item));
        }
    }
    return out;
}

inline void apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& field,
                            const std::string& value) {
    if (field == "preset") {
        if (value == "reference") {
            cfg = reference_recipe();
        } else if (value == "desk") {
            cfg = TrainConfig{};
        } else {
            throw std::invalid_argument("config: unknown preset for " + key + ": " + value);
        }
    } else if (field == "learning_rate") {
        cfg.learning_rate = parse_real(key, value);
    } else if (field == "batch_size") {
        cfg.batch_size = parse_count(key, value);
    } else if (field == "epochs") {
        cfg.epochs = parse_count(key, value);
    } else if (field == "patience") {
        cfg.patience = parse_count(key, value);
    } else if (field == "eval_every") {
        cfg.eval_every = parse_count(key, value);
    } else if (field == "seed") {
        cfg.seed = parse_count(key, value);
    } else if (field == "max_steps") {
        cfg.max_steps = parse_count(key, value);
    } else if (field == "grad_clip") {
        cfg.grad_clip = parse_real(key, value);
    } else if (field == "eval_max_new_tokens") {
        cfg.eval_decode.max_new_tokens = parse_count(key, value);
    } else {
        throw std::invalid_argument("config: unknown key " + key);
    }
}

}  // namespace detail

inline void apply_config_key(ExperimentConfig& cfg, const std::string& key,
                             const std::string& value) {
    const size_t dot = key.find('.');
    if (dot == std::string::npos) {
        throw std::invalid_argument("config: keys use section.field form, got " + key);
    }
    const std::string section = key.substr(0, dot);
    const std::string field = key.substr(dot + 1);
    using detail::parse_bool;
    using detail::parse_count;
    using detail::parse_count_list;
    using detail::parse_real;

    if (section == "corpus") {
        if (field == "task") {
            cfg.task = parse_task(value);
        } else if (field == "size") {
            cfg.corpus_size = parse_count(key, value);
        } else if (field == "seed") {
            cfg.corpus_seed = parse_count(key, value);
        } else {
            throw std::invalid_argument("config: unknown key " + key);
        }
    } else if (section == "filter") {
        if (field == "max_words") {
            cfg.filter.max_words = parse_count(key, value);
        } else if (field == "max_length_ratio") {
            cfg.filter.max_length_ratio = parse_real(key, value);
        } else if (field == "lang_id_threshold") {
            cfg.filter.lang_id_threshold = parse_real(key, value);
        } else if (field == "semantic_threshold") {
            cfg.filter.semantic_threshold = parse_real(key, value);
        } else if (field == "test_size") {
            cfg.filter.test_size = parse_count(key, value);
        } else if (field == "sample_size") {
            cfg.filter.sample_size = parse_count(key, value);
        } else if (field == "seed") {
            cfg.filter.seed = parse_count(key, value);
        } else {
            throw std::invalid_argument("config: unknown key " + key);
        }
    } else if (section == "dev") {
        if (field == "size") {
            cfg.dev_size = parse_count(key, value);
        } else {
            throw std::invalid_argument("config: unknown key " + key);
        }
    } else if (section == "model") {
        if (field == "vocab_size") {
            cfg.model.vocab_size = parse_count(key, value);
        } else if (field == "d_model") {
            cfg.model.d_model = parse_count(key, value);
        } else if (field == "n_heads") {
            cfg.model.n_heads = parse_count(key, value);
        } else if (field == "d_ff") {
            cfg.model.d_ff = parse_count(key, value);
        } else if (field == "n_layers") {
            cfg.model.n_layers = parse_count(key, value);
        } else if (field == "max_seq_len") {
            cfg.model.max_seq_len = parse_count(key, value);
        } else if (field == "seed") {
            cfg.model_seed = parse_count(key, value);
        } else {
            throw std::invalid_argument("config: unknown key " + key);
        }
    } else if (section == "train") {
        detail::apply_train_key(cfg.train, key, field, value);
    } else if (section == "finetune") {
        detail::apply_train_key(cfg.finetune, key, field, value);
    } else if (section == "prune") {
        if (field == "targets") {
            cfg.prune_targets = parse_count_list(key, value);
        } else if (field == "parallel") {
            cfg.prune_parallel = parse_bool(key, value);
        } else {
            throw std::invalid_argument("config: unknown key " + key);
        }
    } else if (section == "kd") {
        if (field == "enabled") {
            cfg.kd_enabled = parse_bool(key, value);
        } else if (field == "quality_threshold") {
            cfg.kd.quality_threshold = parse_real(key, value);
        } else if (field == "dedup") {
            cfg.kd.dedup_against_authentic = parse_bool(key, value);
        } else if (field == "max_new_tokens") {
            cfg.kd.max_new_tokens = parse_count(key, value);
        } else if (field == "mix_seed") {
            cfg.kd_mix_seed = parse_count(key, value);
        } else {
            throw std::invalid_argument("config: unknown key " + key);
        }
    } else if (section == "quant") {
        if (field == "enabled") {
            cfg.quant_enabled = parse_bool(key, value);
        } else if (field == "bits") {
            cfg.quant.bits = parse_count(key, value);
        } else if (field == "group_size") {
            cfg.quant.group_size = parse_count(key, value);
        } else if (field == "include_embeddings") {
            cfg.quant.include_embeddings = parse_bool(key, value);
        } else {
            throw std::invalid_argument("config: unknown key " + key);
        }
    } else if (section == "bench") {
        if (field == "enabled") {
            cfg.bench_enabled = parse_bool(key, value);
        } else if (field == "repetitions") {
            cfg.bench_repetitions = parse_count(key, value);
        } else if (field == "prompts") {
            cfg.bench_prompts = parse_count(key, value);
        } else if (field == "new_tokens") {
            cfg.bench_new_tokens = parse_count(key, value);
        } else {
            throw std::invalid_argument("config: unknown key " + key);
        }
    } else if (section == "output") {
        if (field == "dir") {
            cfg.output_dir = value;
        } else {
            throw std::invalid_argument("config: unknown key " + key);
        }
    } else {
        throw std::invalid_argument("config: unknown section " + section);
    }
}

inline ExperimentConfig parse_experiment_config(const std::string& text) {
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = detail::trim(line);
        if (line.empty()) {
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) +
                                        ": expected key = value");
        }
        apply_config_key(cfg, detail::trim(line.substr(0, eq)),
                         detail::trim(line.substr(eq + 1)));
    }
    return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    return parse_experiment_config(read_text_file(path));
}

// ------------------------------ benchmarking -------------------------------

struct BenchmarkResult {
    std::string label;
    double wall_time_seconds = 0.0;  // median over repetitions, warm-up excluded
    double throughput = 0.0;         // generated tokens / median wall time
    size_t generated_tokens = 0;     // tokens per repetition
    size_t payload_bytes = 0;
    std::vector<double> rep_seconds;
    std::vector<size_t> rep_tokens;

    nlohmann::json to_json() const {
        return {{"label", label},
                {"wall_time_seconds", wall_time_seconds},
                {"throughput", throughput},
                {"generated_tokens", generated_tokens},
                {"payload_bytes", payload_bytes},
                {"rep_seconds", rep_seconds},
                {"rep_tokens", rep_tokens}};
    }
};

namespace detail {

inline double median(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

template <typename DecodeAll>
BenchmarkResult run_benchmark(const std::string& label, size_t payload_bytes,
                              const DecodeAll& decode_all, size_t repetitions) {
    if (repetitions < 3) {
        throw std::invalid_argument("benchmark_decode: repetitions must be >= 3");
    }
    BenchmarkResult result;
    result.label = label;
    result.payload_bytes = payload_bytes;
    decode_all();  // warm-up pass, excluded from timing
    for (size_t rep = 0; rep < repetitions; ++rep) {
        const auto start = std::chrono::steady_clock::now();
        const size_t tokens = decode_all();
        const auto stop = std::chrono::steady_clock::now();
        result.rep_seconds.push_back(std::chrono::duration<double>(stop - start).count());
        result.rep_tokens.push_back(tokens);
    }
    result.wall_time_seconds = median(result.rep_seconds);
    result.generated_tokens = result.rep_tokens.front();
    result.throughput =
        static_cast<double>(result.generated_tokens) / result.wall_time_seconds;
    return result;
}

}  // namespace detail

inline BenchmarkResult benchmark_decode(const TransformerModel& model,
                                        const std::vector<std::vector<int>>& prompts,
                                        const DecodeConfig& dcfg, size_t repetitions,
                                        const std::string& label = "model") {
    if (prompts.empty()) {
        throw std::invalid_argument("benchmark_decode: empty prompts");
    }
    const auto decode_all = [&]() {
        size_t tokens = 0;
        for (const auto& prompt : prompts) {
            tokens += generate(model, prompt, dcfg).size();
        }
        return tokens;
    };
    return detail::run_benchmark(label, memory_report(model).total_bytes, decode_all,
                                 repetitions);
}

inline BenchmarkResult benchmark_decode(const QuantizedModel& model,
                                        const std::vector<std::vector<int>>& prompts,
                                        const DecodeConfig& dcfg, size_t repetitions,
                                        const std::string& label = "quantized") {
    if (prompts.empty()) {
        throw std::invalid_argument("benchmark_decode: empty prompts");
    }
    const auto decode_all = [&]() {
        size_t tokens = 0;
        for (const auto& prompt : prompts) {
            tokens += quantized_generate(model, prompt, dcfg).size();
        }
        return tokens;
    };
    return detail::run_benchmark(label, memory_report(model).total_bytes, decode_all,
                                 repetitions);
}

// ------------------------------- reporting ---------------------------------

struct ReportRow {
    std::string label;
    size_t layers = 0;
    double chrf_pp = 0.0;
    double bleu = 0.0;
    double semantic = 0.0;
    size_t params = 0;
    bool kd = false;
    bool quantized = false;
    size_t memory_bytes = 0;
    bool benchmarked = false;
    double speed_seconds = 0.0;
    double throughput = 0.0;
};

struct ExperimentReport {
    std::vector<ReportRow> main_rows;   // baseline + each pruned size
    std::vector<ReportRow> kd_rows;     // per layer count, KD off/on
    std::vector<ReportRow> quant_rows;  // per model, full precision vs quantized
};

// Markdown rendering: a quality/size table, then optional KD and quantization
// comparisons. chrF++ to 2 decimals, params exact plus millions, speed mm:ss.
inline std::string render_report_markdown(const ExperimentReport& report) {
    if (report.main_rows.empty()) {
        throw std::invalid_argument("render_report: no result rows");
    }
    std::ostringstream out;
    const auto emit_rows = [&out](const std::vector<ReportRow>& rows, bool kd_column) {
        out << "| model | layers |" << (kd_column ? " kd |" : "")
            << " chrF++ | BLEU | semantic | params | params (M) | speed | tokens/s |\n";
        out << "|-------|--------|" << (kd_column ? "----|" : "")
            << "--------|------|----------|--------|------------|-------|----------|\n";
        for (const ReportRow& row : rows) {
            out << "| " << row.label << " | " << row.layers << " | ";
            if (kd_column) {
                out << (row.kd ? "on" : "off") << " | ";
            }
            out << format_double(row.chrf_pp, 2) << " | " << format_double(row.bleu, 2) << " | "
                << format_double(row.semantic, 2) << " | " << row.params << " | "
                << format_double(static_cast<double>(row.params) / 1e6, 3) << " | ";
            if (row.benchmarked) {
                out << format_mmss(row.speed_seconds) << " | " << format_double(row.throughput, 1)
                    << " |\n";
            } else {
                out << "- | - |\n";
            }
        }
    };
    out << "## Quality and size\n\n";
    emit_rows(report.main_rows, false);
    if (!report.kd_rows.empty()) {
        out << "\n## Knowledge distillation\n\n";
        emit_rows(report.kd_rows, true);
    }
    if (!report.quant_rows.empty()) {
        out << "\n## Quantization\n\n";
        out << "| model | layers | memory (MiB) | memory ratio | speed | tokens/s |\n";
        out << "|-------|--------|--------------|--------------|-------|----------|\n";
        const auto fp32_bytes = [&](const ReportRow& row) {
            for (const ReportRow& other : report.quant_rows) {
                if (other.layers == row.layers && !other.quantized) {
                    return other.memory_bytes;
                }
            }
            return row.memory_bytes;
        };
        for (const ReportRow& row : report.quant_rows) {
            out << "| " << row.label << " | " << row.layers << " | "
                << format_double(static_cast<double>(row.memory_bytes) / (1024.0 * 1024.0), 3)
                << " | "
                << format_double(static_cast<double>(row.memory_bytes) /
                                     static_cast<double>(fp32_bytes(row)),
                                 3)
                << " | ";
            if (row.benchmarked) {
                out << format_mmss(row.speed_seconds) << " | " << format_double(row.throughput, 1)
                    << " |\n";
            } else {
                out << "- | - |\n";
            }
        }
    }
    return out.str();
}

// CSV rendering: one flat table, same numeric values as the Markdown report
// plus raw seconds.
inline std::string render_report_csv(const ExperimentReport& report) {
    if (report.main_rows.empty()) {
        throw std::invalid_argument("render_report: no result rows");
    }
    std::ostringstream out;
    out << "section,model,layers,kd,quantized,chrf_pp,bleu,semantic,params,params_millions,"
           "memory_bytes,speed_seconds,speed_mmss,tokens_per_second\n";
    const auto emit = [&out](const char* section, const ReportRow& row) {
        out << section << "," << row.label << "," << row.layers << "," << (row.kd ? 1 : 0) << ","
            << (row.quantized ? 1 : 0) << "," << format_double(row.chrf_pp, 2) << ","
            << format_double(row.bleu, 2) << "," << format_double(row.semantic, 2) << ","
            << row.params << "," << format_double(static_cast<double>(row.params) / 1e6, 3) << ","
            << row.memory_bytes << ",";
        if (row.benchmarked) {
            out << format_double(row.speed_seconds, 3) << "," << format_mmss(row.speed_seconds)
                << "," << format_double(row.throughput, 1) << "\n";
        } else {
            out << ",,\n";
        }
    };
    for (const ReportRow& row : report.main_rows) {
        emit("main", row);
    }
    for (const ReportRow& row : report.kd_rows) {
        emit("kd", row);
    }
    for (const ReportRow& row : report.quant_rows) {
        emit("quant", row);
    }
    return out.str();
}

// ------------------------------- pipeline ----------------------------------

struct PipelineResult {
    ExperimentReport report;
    FilterStats filter_stats;
    std::map<std::string, TransformerModel> models;  // label -> weights
    std::vector<std::string> artifacts;              // files written, in order
    std::string report_markdown;
    std::string report_csv;
};

namespace detail {

class ArtifactWriter {
  public:
    explicit ArtifactWriter(std::string dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    std::string path(const std::string& name) const { return dir_ + "/" + name; }

    void write(const std::string& name, std::string_view content) {
        write_text_file(path(name), content);
        names_.push_back(name);
    }

    void note(const std::string& name) { names_.push_back(name); }

    // Manifest of every artifact with a content checksum; written last.
    void write_manifest() {
        std::ostringstream out;
        for (const std::string& name : names_) {
            char hex[17];
            std::snprintf(hex, sizeof(hex), "%016llx",
                          static_cast<unsigned long long>(fnv1a(read_text_file(path(name)))));
            out << hex << "  " << name << "\n";
        }
        write_text_file(path("manifest.txt"), out.str());
        names_.push_back("manifest.txt");
    }

    const std::vector<std::string>& names() const { return names_; }

  private:
    std::string dir_;
    std::vector<std::string> names_;
};

template <typename Fn>
auto pipeline_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("[stage: ") + stage + "] " + e.what());
    }
}

}  // namespace detail

// Full experiment: corpus -> filter -> split -> train -> prune -> fine-tune ->
// optional KD -> optional quantization -> evaluation + benchmarks -> report.
// Artifacts are persisted as soon as each stage completes; a failure aborts
// with the stage name after flushing the manifest for completed files.
inline PipelineResult run_pipeline(const ExperimentConfig& cfg) {
    cfg.validate();
    PipelineResult result;
    detail::ArtifactWriter artifacts(cfg.output_dir);
    const PromptSpec spec{source_language(), target_language(cfg.task)};
    const CorpusScorer chrf_scorer = make_chrf_scorer();
    const SemanticScorer semantic = default_semantic_scorer(cfg.task);
    DecodeConfig eval_decode;
    eval_decode.max_new_tokens = cfg.train.eval_decode.max_new_tokens;

    const auto finish_on_error = [&artifacts]() { artifacts.write_manifest(); };

    try {
        // ---- data stages ----
        const std::vector<SegmentPair> raw = detail::pipeline_stage("corpus", [&] {
            auto pairs = generate_synthetic_corpus(cfg.corpus_seed, cfg.corpus_size, cfg.task);
            return pairs;
        });
        write_jsonl(artifacts.path("corpus.jsonl"), raw);
        artifacts.note("corpus.jsonl");

        auto [filtered, fstats] = detail::pipeline_stage("filter", [&] {
            return filter_corpus(raw, cfg.filter, default_language_classifier(cfg.task), semantic,
                                 source_language(), target_language(cfg.task));
        });
        result.filter_stats = fstats;
        artifacts.write("filter_stats.json", fstats.to_json().dump(2) + "\n");

        auto [train_pairs, test_pairs] = detail::pipeline_stage("split", [&] {
            return split_corpus(filtered, cfg.filter);
        });
        write_jsonl(artifacts.path("train.jsonl"), train_pairs);
        artifacts.note("train.jsonl");
        write_jsonl(artifacts.path("test.jsonl"), test_pairs);
        artifacts.note("test.jsonl");
        const std::vector<SegmentPair> dev_pairs(
            test_pairs.begin(),
            test_pairs.begin() +
                static_cast<ptrdiff_t>(std::min(cfg.dev_size, test_pairs.size())));
        write_jsonl(artifacts.path("dev.jsonl"), dev_pairs);
        artifacts.note("dev.jsonl");

        // ---- baseline training ----
        TransformerModel baseline = detail::pipeline_stage("train", [&] {
            std::vector<std::string> texts;
            texts.reserve(2 * train_pairs.size() + 1);
            texts.push_back(spec.render(""));
            for (const SegmentPair& p : train_pairs) {
                texts.push_back(p.source);
                texts.push_back(p.target);
            }
            for (const SegmentPair& p : test_pairs) {
                texts.push_back(p.source);
                texts.push_back(p.target);
            }
            TransformerModel model = init_model<float>(cfg.model, cfg.model_seed);
            model.vocab = Vocab::build(texts, cfg.model.vocab_size);
            auto [trained, log] = train(model, train_pairs, dev_pairs, spec, cfg.train,
                                        chrf_scorer);
            artifacts.write("train_log_baseline.csv", log.to_csv());
            return trained;
        });
        save_model(baseline, artifacts.path("model_baseline.bin"));
        artifacts.note("model_baseline.bin");

        // ---- pruning (one greedy run to the deepest target; prefixes are the
        // shallower targets by the greedy extension property) ----
        std::map<size_t, TransformerModel> pruned_models;  // removals -> model
        std::map<size_t, PruneTrace> traces;
        if (!cfg.prune_targets.empty()) {
            detail::pipeline_stage("prune", [&] {
                PruneConfig pcfg;
                pcfg.target_removals = cfg.prune_targets.back();
                pcfg.dev_pairs = dev_pairs;
                pcfg.parallel_candidates = cfg.prune_parallel;
                pcfg.prompt = spec;
                pcfg.decode = eval_decode;
                TransformerModel current = baseline;
                PruneTrace trace;
                size_t done = 0;
                for (const size_t target : cfg.prune_targets) {
                    PruneConfig step_cfg = pcfg;
                    step_cfg.target_removals = target - done;
                    auto [next, step_trace] = greedy_prune(current, step_cfg, chrf_scorer);
                    current = std::move(next);
                    for (const PruneStep& s : step_trace.steps) {
                        trace.steps.push_back(s);
                    }
                    done = target;
                    pruned_models.emplace(target, current);
                    PruneTrace prefix;
                    prefix.steps = trace.steps;
                    traces.emplace(target, std::move(prefix));
                }
                return 0;
            });
            for (const auto& [target, trace] : traces) {
                nlohmann::json steps = nlohmann::json::array();
                for (const PruneStep& s : trace.steps) {
                    nlohmann::json scores = nlohmann::json::object();
                    for (const auto& [idx, score] : s.candidate_scores) {
                        scores[std::to_string(idx)] = score;
                    }
                    steps.push_back({{"candidate_scores", scores},
                                     {"removed", s.removed},
                                     {"baseline_score", s.baseline_score}});
                }
                artifacts.write("prune_trace_" + std::to_string(target) + ".json",
                                nlohmann::json{{"steps", steps}}.dump(2) + "\n");
            }
        }

        // ---- fine-tuning recovery ----
        std::map<size_t, TransformerModel> finetuned;  // removals -> model
        for (const auto& [target, model] : pruned_models) {
            const std::string tag = std::to_string(model.config.n_layers);
            TransformerModel recovered = detail::pipeline_stage("finetune", [&] {
                auto [out, log] = train(model, train_pairs, dev_pairs, spec, cfg.finetune,
                                        chrf_scorer);
                artifacts.write("train_log_pruned" + tag + ".csv", log.to_csv());
                return out;
            });
            save_model(recovered, artifacts.path("model_pruned" + tag + ".bin"));
            artifacts.note("model_pruned" + tag + ".bin");
            finetuned.emplace(target, std::move(recovered));
        }

        // ---- optional KD round: fine-tune each pruned model on authentic+KD ----
        std::map<size_t, TransformerModel> kd_models;
        if (cfg.kd_enabled && !pruned_models.empty()) {
            const std::vector<SegmentPair> mixed = detail::pipeline_stage("distill", [&] {
                std::vector<std::string> sources;
                sources.reserve(train_pairs.size());
                for (const SegmentPair& p : train_pairs) {
                    sources.push_back(p.source);
                }
                DecodeConfig kd_decode;
                kd_decode.max_new_tokens = cfg.kd.max_new_tokens;
                const KdGeneration gen = generate_kd_data(
                    make_model_translator(baseline, spec, kd_decode), sources, cfg.kd);
                auto [kept, kstats] = filter_kd_data(gen.pairs, train_pairs, semantic, cfg.kd);
                nlohmann::json stats = gen.stats_json();
                stats.update(kstats.to_json());
                artifacts.write("kd_stats.json", stats.dump(2) + "\n");
                write_jsonl(artifacts.path("kd_kept.jsonl"), kept);
                artifacts.note("kd_kept.jsonl");
                return mix_training_data(train_pairs, kept, cfg.kd_mix_seed);
            });
            for (const auto& [target, model] : pruned_models) {
                const std::string tag = std::to_string(model.config.n_layers);
                TransformerModel out = detail::pipeline_stage("distill", [&] {
                    auto [m, log] =
                        train(model, mixed, dev_pairs, spec, cfg.finetune, chrf_scorer);
                    artifacts.write("train_log_pruned" + tag + "_kd.csv", log.to_csv());
                    return m;
                });
                save_model(out, artifacts.path("model_pruned" + tag + "_kd.bin"));
                artifacts.note("model_pruned" + tag + "_kd.bin");
                kd_models.emplace(target, std::move(out));
            }
        }

        // ---- evaluation + benchmarks ----
        std::vector<std::vector<int>> bench_prompts;
        if (cfg.bench_enabled) {
            for (size_t i = 0; i < std::min(cfg.bench_prompts, dev_pairs.size()); ++i) {
                bench_prompts.push_back(encode_context(baseline.vocab, spec,
                                                       dev_pairs[i].source));
            }
        }
        DecodeConfig bench_decode;
        bench_decode.max_new_tokens = cfg.bench_new_tokens;
        bench_decode.ignore_eos = true;  // fixed token count for comparable timings

        std::vector<nlohmann::json> bench_log;
        const auto evaluate_row = [&](const std::string& label, const TransformerModel& model,
                                      bool kd_flag) {
            return detail::pipeline_stage("evaluate", [&] {
                ReportRow row;
                row.label = label;
                row.layers = model.config.n_layers;
                row.kd = kd_flag;
                row.params = param_count(model.config).total;
                row.memory_bytes = memory_report(model).total_bytes;
                std::vector<std::string> hyps, refs, srcs;
                for (const SegmentPair& pair : dev_pairs) {
                    hyps.push_back(translate(model, spec, pair.source, eval_decode).value_or(""));
                    refs.push_back(pair.target);
                    srcs.push_back(pair.source);
                }
                row.chrf_pp = chrf_pp(hyps, refs);
                row.bleu = bleu(hyps, refs);
                double sem = 0.0;
                for (size_t i = 0; i < hyps.size(); ++i) {
                    sem += semantic(srcs[i], hyps[i]);
                }
                row.semantic = hyps.empty() ? 0.0 : sem / static_cast<double>(hyps.size());
                if (cfg.bench_enabled) {
                    const BenchmarkResult bench = benchmark_decode(
                        model, bench_prompts, bench_decode, cfg.bench_repetitions, label);
                    row.benchmarked = true;
                    row.speed_seconds = bench.wall_time_seconds;
                    row.throughput = bench.throughput;
                    bench_log.push_back(bench.to_json());
                }
                return row;
            });
        };

        result.report.main_rows.push_back(evaluate_row("baseline", baseline, false));
        result.models.emplace("baseline", baseline);
        for (const auto& [target, model] : finetuned) {
            const std::string label = "pruned-" + std::to_string(model.config.n_layers);
            result.report.main_rows.push_back(evaluate_row(label, model, false));
            result.models.emplace(label, model);
        }
        if (!kd_models.empty()) {
            for (const auto& [target, model] : finetuned) {
                const ReportRow* base_row = nullptr;
                for (const ReportRow& row : result.report.main_rows) {
                    if (row.layers == model.config.n_layers) {
                        base_row = &row;
                    }
                }
                ReportRow off_row = *base_row;
                off_row.kd = false;
                result.report.kd_rows.push_back(off_row);
                const TransformerModel& kd_model = kd_models.at(target);
                const std::string label =
                    "pruned-" + std::to_string(kd_model.config.n_layers) + "+kd";
                ReportRow on_row = evaluate_row(label, kd_model, true);
                result.report.kd_rows.push_back(on_row);
                result.models.emplace(label, kd_model);
            }
        }

        // ---- optional quantization comparison ----
        if (cfg.quant_enabled) {
            detail::pipeline_stage("quantize", [&] {
                const auto add_pair = [&](const std::string& label,
                                          const TransformerModel& model) {
                    ReportRow fp_row;
                    for (const ReportRow& row : result.report.main_rows) {
                        if (row.label == label) {
                            fp_row = row;
                        }
                    }
                    fp_row.quantized = false;
                    result.report.quant_rows.push_back(fp_row);

                    const QuantizedModel qm = quantize_model(model, cfg.quant);
                    const std::string qlabel = label + "-int" + std::to_string(cfg.quant.bits);
                    save_quantized(qm, artifacts.path("model_" + qlabel + ".bin"));
                    artifacts.note("model_" + qlabel + ".bin");
                    ReportRow qrow;
                    qrow.label = qlabel;
                    qrow.layers = qm.config.n_layers;
                    qrow.quantized = true;
                    qrow.params = param_count(qm.config).total;
                    qrow.memory_bytes = memory_report(qm).total_bytes;
                    std::vector<std::string> hyps, refs, srcs;
                    for (const SegmentPair& pair : dev_pairs) {
                        hyps.push_back(
                            quantized_translate(qm, spec, pair.source, eval_decode).value_or(""));
                        refs.push_back(pair.target);
                        srcs.push_back(pair.source);
                    }
                    qrow.chrf_pp = chrf_pp(hyps, refs);
                    qrow.bleu = bleu(hyps, refs);
                    double sem = 0.0;
                    for (size_t i = 0; i < hyps.size(); ++i) {
                        sem += semantic(srcs[i], hyps[i]);
                    }
                    qrow.semantic = hyps.empty() ? 0.0 : sem / static_cast<double>(hyps.size());
                    if (cfg.bench_enabled) {
                        const BenchmarkResult bench = benchmark_decode(
                            qm, bench_prompts, bench_decode, cfg.bench_repetitions, qlabel);
                        qrow.benchmarked = true;
                        qrow.speed_seconds = bench.wall_time_seconds;
                        qrow.throughput = bench.throughput;
                        bench_log.push_back(bench.to_json());
                    }
                    result.report.quant_rows.push_back(qrow);
                };
                add_pair("baseline", baseline);
                for (const auto& [target, model] : finetuned) {
                    add_pair("pruned-" + std::to_string(model.config.n_layers), model);
                }
                return 0;
            });
        }

        if (cfg.bench_enabled) {
            nlohmann::json blog = nlohmann::json::array();
            for (const auto& entry : bench_log) {
                blog.push_back(entry);
            }
            artifacts.write("benchmarks.json", blog.dump(2) + "\n");
        }

        // ---- report ----
        detail::pipeline_stage("report", [&] {
            result.report_markdown = render_report_markdown(result.report);
            result.report_csv = render_report_csv(result.report);
            artifacts.write("report.md", result.report_markdown);
            artifacts.write("report.csv", result.report_csv);
            return 0;
        });
        artifacts.write_manifest();
        result.artifacts = artifacts.names();
        return result;
    } catch (...) {
        finish_on_error();
        throw;
    }
}

}  // namespace prunelab
