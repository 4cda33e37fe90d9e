// Command-line front end for the pruning workbench. Every subcommand is a thin
// wrapper over the library; failures surface as a nonzero exit code with a
// stage-tagged message on stderr.

#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "prunelab/prunelab.hpp"
#include "prunelab/rewriter_http.hpp"

namespace {

using namespace prunelab;

ExperimentConfig config_from_options(const std::string& config_path,
                                     const std::vector<std::string>& overrides) {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
        cfg = load_experiment_config(config_path);
    }
    for (const std::string& kv : overrides) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("--set expects key=value, got: " + kv);
        }
        apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

PromptSpec spec_for(const ExperimentConfig& cfg) {
    return {source_language(), target_language(cfg.task)};
}

std::vector<std::string> sources_of(const std::vector<SegmentPair>& pairs) {
    std::vector<std::string> out;
    out.reserve(pairs.size());
    for (const SegmentPair& p : pairs) {
        out.push_back(p.source);
    }
    return out;
}

Vocab vocab_from_pairs(const PromptSpec& spec, const std::vector<SegmentPair>& pairs,
                       size_t max_size) {
    std::vector<std::string> texts;
    texts.reserve(2 * pairs.size() + 1);
    texts.push_back(spec.render(""));
    for (const SegmentPair& p : pairs) {
        texts.push_back(p.source);
        texts.push_back(p.target);
    }
    return Vocab::build(texts, max_size);
}

int run(int argc, char** argv) {
    CLI::App app{"prunelab: layer-pruning model compression workbench"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "experiment config file (key = value lines)");
    app.add_option("--set", overrides, "override a config key, e.g. --set model.d_model=64");

    // ---- corpus ----
    auto* corpus_cmd = app.add_subcommand("corpus", "generate, filter, or split corpora");
    corpus_cmd->require_subcommand(1);
    std::string corpus_out, corpus_in, corpus_stats_out, corpus_train_out, corpus_test_out;
    auto* gen_cmd = corpus_cmd->add_subcommand("generate", "emit a synthetic parallel corpus");
    gen_cmd->add_option("--out", corpus_out, "output JSONL path")->required();
    auto* filt_cmd = corpus_cmd->add_subcommand("filter", "apply the filtering pipeline");
    filt_cmd->add_option("--in", corpus_in, "input JSONL path")->required();
    filt_cmd->add_option("--out", corpus_out, "output JSONL path")->required();
    filt_cmd->add_option("--stats-out", corpus_stats_out, "filter stats JSON path");
    auto* split_cmd = corpus_cmd->add_subcommand("split", "split into train and test");
    split_cmd->add_option("--in", corpus_in, "input JSONL path")->required();
    split_cmd->add_option("--train-out", corpus_train_out, "train JSONL path")->required();
    split_cmd->add_option("--test-out", corpus_test_out, "test JSONL path")->required();

    // ---- score ----
    auto* score_cmd = app.add_subcommand("score", "score hypotheses against references");
    std::string hyp_path, ref_path;
    bool score_semantic = false;
    score_cmd->add_option("--hyp", hyp_path, "hypotheses, one per line")->required();
    score_cmd->add_option("--ref", ref_path, "references, one per line")->required();
    score_cmd->add_flag("--semantic", score_semantic,
                        "also report the task semantic score (hyp vs ref source column)");

    // ---- init / train ----
    auto* init_cmd = app.add_subcommand("init", "initialize a model from the config");
    std::string model_out, vocab_from;
    init_cmd->add_option("--out", model_out, "model file path")->required();
    init_cmd->add_option("--vocab-from", vocab_from, "JSONL corpus to build the vocabulary from");

    auto* train_cmd = app.add_subcommand("train", "train or fine-tune a model");
    std::string train_path, dev_path, init_from, log_out;
    bool use_finetune_recipe = false;
    train_cmd->add_option("--train", train_path, "training pairs JSONL")->required();
    train_cmd->add_option("--dev", dev_path, "dev pairs JSONL")->required();
    train_cmd->add_option("--init-from", init_from, "start from an existing model file");
    train_cmd->add_option("--out", model_out, "output model file")->required();
    train_cmd->add_option("--log-out", log_out, "training log CSV path");
    train_cmd->add_flag("--finetune", use_finetune_recipe,
                        "use the finetune.* config section instead of train.*");

    // ---- prune ----
    auto* prune_cmd = app.add_subcommand("prune", "greedy iterative layer pruning");
    std::string prune_model_in, prune_trace_out, prune_report_out;
    size_t removals = 1;
    bool prune_parallel = false;
    prune_cmd->add_option("--model", prune_model_in, "input model file")->required();
    prune_cmd->add_option("--dev", dev_path, "dev pairs JSONL")->required();
    prune_cmd->add_option("--removals", removals, "number of layers to remove")->required();
    prune_cmd->add_option("--out", model_out, "pruned model file")->required();
    prune_cmd->add_option("--trace-out", prune_trace_out, "prune trace JSON path");
    prune_cmd->add_option("--report-out", prune_report_out, "importance profile table path");
    prune_cmd->add_flag("--parallel", prune_parallel, "evaluate candidates in parallel");

    // ---- distill ----
    auto* distill_cmd = app.add_subcommand("distill", "generate and filter KD data");
    std::string teacher_path, distill_sources, distill_out, distill_stats_out, authentic_path;
    bool oracle_teacher = false;
    distill_cmd->add_option("--teacher", teacher_path, "teacher model file");
    distill_cmd->add_flag("--oracle-teacher", oracle_teacher,
                          "use the exact task transform as the teacher");
    distill_cmd->add_option("--sources", distill_sources, "JSONL whose sources get translated")
        ->required();
    distill_cmd->add_option("--authentic", authentic_path, "authentic pairs JSONL for dedup");
    distill_cmd->add_option("--out", distill_out, "kept KD pairs JSONL")->required();
    distill_cmd->add_option("--stats-out", distill_stats_out, "KD stats JSON path");

    // ---- rewrite ----
    auto* rewrite_cmd = app.add_subcommand("rewrite", "rewrite targets via the rewriter service");
    std::string rewrite_in, rewrite_out, rewrite_template_path, endpoint;
    bool mock_rewriter = false;
    double rewrite_temperature = 0.3, rewrite_top_p = 1.0;
    rewrite_cmd->add_option("--in", rewrite_in, "input pairs JSONL")->required();
    rewrite_cmd->add_option("--out", rewrite_out, "output pairs JSONL")->required();
    rewrite_cmd->add_option("--template", rewrite_template_path,
                            "prompt template file (default: built-in template)");
    rewrite_cmd->add_option("--endpoint", endpoint,
                            "service URL (default: $PRUNELAB_REWRITER_ENDPOINT)");
    rewrite_cmd->add_flag("--mock", mock_rewriter, "use the identity mock client");
    rewrite_cmd->add_option("--temperature", rewrite_temperature, "sampling temperature");
    rewrite_cmd->add_option("--top-p", rewrite_top_p, "nucleus sampling parameter");

    // ---- quantize ----
    auto* quant_cmd = app.add_subcommand("quantize", "group-wise weight quantization");
    std::string quant_model_in;
    quant_cmd->add_option("--model", quant_model_in, "input model file")->required();
    quant_cmd->add_option("--out", model_out, "quantized model file")->required();

    // ---- benchmark ----
    auto* bench_cmd = app.add_subcommand("benchmark", "greedy-decode speed benchmark");
    std::vector<std::string> bench_models;
    std::string bench_prompts_path, bench_json_out;
    bench_cmd->add_option("--model", bench_models, "model file (repeatable)")->required();
    bench_cmd->add_option("--prompts", bench_prompts_path, "JSONL providing prompt sources")
        ->required();
    bench_cmd->add_option("--json-out", bench_json_out, "raw benchmark log path");

    // ---- decode / inspect ----
    auto* decode_cmd = app.add_subcommand("decode", "translate one source segment");
    std::string decode_model, decode_source;
    decode_cmd->add_option("--model", decode_model, "model file")->required();
    decode_cmd->add_option("--source", decode_source, "source text")->required();

    auto* inspect_cmd = app.add_subcommand("inspect", "print model config and accounting");
    std::string inspect_model;
    inspect_cmd->add_option("--model", inspect_model, "model file")->required();

    // ---- pipeline / report ----
    auto* pipeline_cmd = app.add_subcommand("pipeline", "run the full experiment pipeline");
    auto* report_cmd = app.add_subcommand("report", "re-render a report from pipeline CSV");
    std::string report_csv_in, report_md_out;
    report_cmd->add_option("--csv", report_csv_in, "report.csv from a pipeline run")->required();
    report_cmd->add_option("--out", report_md_out, "Markdown output path (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    ExperimentConfig cfg = config_from_options(config_path, overrides);
    const PromptSpec spec = spec_for(cfg);

    if (gen_cmd->parsed()) {
        const auto pairs = generate_synthetic_corpus(cfg.corpus_seed, cfg.corpus_size, cfg.task);
        write_jsonl(corpus_out, pairs);
        std::cout << "wrote " << pairs.size() << " pairs to " << corpus_out << "\n";
    } else if (filt_cmd->parsed()) {
        const auto pairs = read_jsonl(corpus_in);
        auto [kept, stats] =
            filter_corpus(pairs, cfg.filter, default_language_classifier(cfg.task),
                          default_semantic_scorer(cfg.task), source_language(),
                          target_language(cfg.task));
        write_jsonl(corpus_out, kept);
        std::cout << stats.to_table();
        if (!corpus_stats_out.empty()) {
            write_text_file(corpus_stats_out, stats.to_json().dump(2) + "\n");
        }
    } else if (split_cmd->parsed()) {
        const auto pairs = read_jsonl(corpus_in);
        auto [train_pairs, test_pairs] = split_corpus(pairs, cfg.filter);
        write_jsonl(corpus_train_out, train_pairs);
        write_jsonl(corpus_test_out, test_pairs);
        std::cout << "train " << train_pairs.size() << " / test " << test_pairs.size() << "\n";
    } else if (score_cmd->parsed()) {
        const auto hyps = read_lines(hyp_path);
        const auto refs = read_lines(ref_path);
        std::cout << "chrF++ " << format_double(chrf_pp(hyps, refs), 2) << "\n";
        std::cout << "BLEU   " << format_double(bleu(hyps, refs), 2) << "\n";
        if (score_semantic) {
            const SemanticScorer scorer = default_semantic_scorer(cfg.task);
            double total = 0.0;
            for (size_t i = 0; i < hyps.size(); ++i) {
                total += scorer(refs[i], hyps[i]);
            }
            std::cout << "semantic " << format_double(total / static_cast<double>(hyps.size()), 4)
                      << "\n";
        }
    } else if (init_cmd->parsed()) {
        TransformerModel model = init_model<float>(cfg.model, cfg.model_seed);
        if (!vocab_from.empty()) {
            model.vocab = vocab_from_pairs(spec, read_jsonl(vocab_from), cfg.model.vocab_size);
        }
        save_model(model, model_out);
        std::cout << "initialized " << param_count(cfg.model).total << "-parameter model at "
                  << model_out << "\n";
    } else if (train_cmd->parsed()) {
        const auto train_pairs = read_jsonl(train_path);
        const auto dev_pairs = read_jsonl(dev_path);
        TransformerModel model;
        if (!init_from.empty()) {
            model = load_model(init_from);
        } else {
            model = init_model<float>(cfg.model, cfg.model_seed);
            model.vocab = vocab_from_pairs(spec, train_pairs, cfg.model.vocab_size);
        }
        const TrainConfig& tcfg = use_finetune_recipe ? cfg.finetune : cfg.train;
        auto [trained, log] = train(model, train_pairs, dev_pairs, spec, tcfg);
        save_model(trained, model_out);
        if (!log_out.empty()) {
            write_text_file(log_out, log.to_csv());
        }
        std::cout << "stop_reason " << log.stop_reason << ", best dev chrF++ "
                  << format_double(log.best_dev_chrf_pp, 2) << " at step " << log.best_step
                  << "\n";
    } else if (prune_cmd->parsed()) {
        const TransformerModel model = load_model(prune_model_in);
        PruneConfig pcfg;
        pcfg.target_removals = removals;
        pcfg.dev_pairs = read_jsonl(dev_path);
        pcfg.parallel_candidates = prune_parallel;
        pcfg.prompt = spec;
        pcfg.decode.max_new_tokens = cfg.train.eval_decode.max_new_tokens;
        auto [pruned, trace] = greedy_prune(model, pcfg, make_chrf_scorer());
        save_model(pruned, model_out);
        std::cout << importance_profile_report(trace);
        if (!prune_trace_out.empty()) {
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
            write_text_file(prune_trace_out, nlohmann::json{{"steps", steps}}.dump(2) + "\n");
        }
        if (!prune_report_out.empty()) {
            write_text_file(prune_report_out, importance_profile_report(trace));
        }
    } else if (distill_cmd->parsed()) {
        if (teacher_path.empty() == !oracle_teacher) {
            throw std::invalid_argument("distill: pass exactly one of --teacher/--oracle-teacher");
        }
        const auto source_pairs = read_jsonl(distill_sources);
        Translator teacher;
        if (oracle_teacher) {
            teacher = make_oracle_translator(cfg.task);
        } else {
            DecodeConfig dcfg;
            dcfg.max_new_tokens = cfg.kd.max_new_tokens;
            teacher = make_model_translator(load_model(teacher_path), spec, dcfg);
        }
        const KdGeneration gen = generate_kd_data(teacher, sources_of(source_pairs), cfg.kd);
        std::vector<SegmentPair> kept = gen.pairs;
        nlohmann::json stats = gen.stats_json();
        if (!authentic_path.empty()) {
            auto [filtered_kept, kstats] = filter_kd_data(
                gen.pairs, read_jsonl(authentic_path), default_semantic_scorer(cfg.task), cfg.kd);
            kept = std::move(filtered_kept);
            stats.update(kstats.to_json());
        }
        write_jsonl(distill_out, kept);
        std::cout << stats.dump(2) << "\n";
        if (!distill_stats_out.empty()) {
            write_text_file(distill_stats_out, stats.dump(2) + "\n");
        }
    } else if (rewrite_cmd->parsed()) {
        const auto pairs = read_jsonl(rewrite_in);
        const std::string prompt_template = rewrite_template_path.empty()
                                                ? std::string(kDefaultRewriteTemplate)
                                                : read_text_file(rewrite_template_path);
        RewriteResult res;
        if (mock_rewriter) {
            MockRewriter client = MockRewriter::identity();
            res = rewrite_corpus(pairs, client, prompt_template, rewrite_temperature,
                                 rewrite_top_p, cfg.filter);
        } else {
            if (endpoint.empty()) {
                const char* env = std::getenv("PRUNELAB_REWRITER_ENDPOINT");
                if (env == nullptr || *env == '\0') {
                    throw std::invalid_argument(
                        "rewrite: pass --endpoint or set PRUNELAB_REWRITER_ENDPOINT");
                }
                endpoint = env;
            }
            HttpRewriter client(endpoint);
            res = rewrite_corpus(pairs, client, prompt_template, rewrite_temperature,
                                 rewrite_top_p, cfg.filter);
        }
        write_jsonl(rewrite_out, res.pairs);
        std::cout << res.stats_json().dump(2) << "\n";
    } else if (quant_cmd->parsed()) {
        const TransformerModel model = load_model(quant_model_in);
        const QuantizedModel qm = quantize_model(model, cfg.quant);
        save_quantized(qm, model_out);
        std::cout << memory_report(qm).to_string();
    } else if (bench_cmd->parsed()) {
        const auto prompt_pairs = read_jsonl(bench_prompts_path);
        DecodeConfig dcfg;
        dcfg.max_new_tokens = cfg.bench_new_tokens;
        dcfg.ignore_eos = true;
        nlohmann::json log = nlohmann::json::array();
        for (const std::string& path : bench_models) {
            const TransformerModel model = load_model(path);
            std::vector<std::vector<int>> prompts;
            for (size_t i = 0; i < std::min(cfg.bench_prompts, prompt_pairs.size()); ++i) {
                prompts.push_back(encode_context(model.vocab, spec, prompt_pairs[i].source));
            }
            const BenchmarkResult res =
                benchmark_decode(model, prompts, dcfg, cfg.bench_repetitions, path);
            std::cout << path << ": " << format_mmss(res.wall_time_seconds) << " ("
                      << format_double(res.wall_time_seconds, 3) << " s), "
                      << format_double(res.throughput, 1) << " tokens/s\n";
            log.push_back(res.to_json());
        }
        if (!bench_json_out.empty()) {
            write_text_file(bench_json_out, log.dump(2) + "\n");
        }
    } else if (decode_cmd->parsed()) {
        const TransformerModel model = load_model(decode_model);
        DecodeConfig dcfg;
        dcfg.max_new_tokens = cfg.train.eval_decode.max_new_tokens;
        const auto out = translate(model, spec, decode_source, dcfg);
        if (!out) {
            throw std::runtime_error("decode: prompt does not fit the context window");
        }
        std::cout << *out << "\n";
    } else if (inspect_cmd->parsed()) {
        const TransformerModel model = load_model(inspect_model);
        const ParamCount pc = param_count(model.config);
        std::cout << "vocab_size " << model.config.vocab_size << "\n"
                  << "d_model " << model.config.d_model << "\n"
                  << "n_heads " << model.config.n_heads << "\n"
                  << "d_ff " << model.config.d_ff << "\n"
                  << "n_layers " << model.config.n_layers << "\n"
                  << "max_seq_len " << model.config.max_seq_len << "\n";
        std::cout << "layer_ids ";
        for (size_t i = 0; i < model.layer_ids.size(); ++i) {
            std::cout << (i ? "," : "") << model.layer_ids[i];
        }
        std::cout << "\n";
        std::cout << "params total " << pc.total << " (per_layer " << pc.per_layer
                  << ", non_layer " << pc.non_layer << ")\n";
        std::cout << memory_report(model).to_string();
    } else if (pipeline_cmd->parsed()) {
        const PipelineResult result = run_pipeline(cfg);
        std::cout << result.report_markdown;
        std::cout << "\nartifacts in " << cfg.output_dir << ":\n";
        for (const std::string& name : result.artifacts) {
            std::cout << "  " << name << "\n";
        }
    } else if (report_cmd->parsed()) {
        // Rebuild report rows from the CSV emitted by a pipeline run.
        const auto lines = read_lines(report_csv_in);
        if (lines.size() < 2) {
            throw std::runtime_error("report: CSV has no data rows");
        }
        ExperimentReport report;
        for (size_t i = 1; i < lines.size(); ++i) {
            std::stringstream ss(lines[i]);
            std::string field;
            std::vector<std::string> fields;
            while (std::getline(ss, field, ',')) {
                fields.push_back(field);
            }
            if (fields.size() < 11) {
                continue;
            }
            ReportRow row;
            const std::string section = fields[0];
            row.label = fields[1];
            row.layers = std::stoull(fields[2]);
            row.kd = fields[3] == "1";
            row.quantized = fields[4] == "1";
            row.chrf_pp = std::stod(fields[5]);
            row.bleu = std::stod(fields[6]);
            row.semantic = std::stod(fields[7]);
            row.params = std::stoull(fields[8]);
            row.memory_bytes = std::stoull(fields[10]);
            if (fields.size() >= 12 && !fields[11].empty()) {
                row.benchmarked = true;
                row.speed_seconds = std::stod(fields[11]);
                row.throughput = fields.size() >= 14 ? std::stod(fields[13]) : 0.0;
            }
            if (section == "main") {
                report.main_rows.push_back(row);
            } else if (section == "kd") {
                report.kd_rows.push_back(row);
            } else if (section == "quant") {
                report.quant_rows.push_back(row);
            }
        }
        const std::string md = render_report_markdown(report);
        if (report_md_out.empty()) {
            std::cout << md;
        } else {
            write_text_file(report_md_out, md);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
