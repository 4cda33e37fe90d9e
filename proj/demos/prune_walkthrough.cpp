// End-to-end miniature of the compression loop: build a tiny corpus, train a
// small model, prune two layers greedily, fine-tune, and print the before/after
// quality and parameter numbers. Runs in well under a minute on one core.

#include <iostream>

#include "prunelab/prunelab.hpp"

int main() {
    using namespace prunelab;

    const SynthTask task = SynthTask::cipher;
    const PromptSpec spec{source_language(), target_language(task)};

    FilterConfig fcfg;
    fcfg.test_size = 64;
    auto corpus = generate_synthetic_corpus(/*seed=*/7, /*size=*/900, task);
    auto [kept, fstats] = filter_corpus(corpus, fcfg, default_language_classifier(task),
                                        default_semantic_scorer(task), source_language(),
                                        target_language(task));
    auto [train_pairs, test_pairs] = split_corpus(kept, fcfg);
    const std::vector<SegmentPair> dev_pairs(test_pairs.begin(), test_pairs.begin() + 32);
    std::cout << "corpus: " << corpus.size() << " generated, " << kept.size() << " kept, "
              << train_pairs.size() << " train / " << test_pairs.size() << " test\n";

    ModelConfig mcfg;
    mcfg.vocab_size = 256;
    mcfg.d_model = 32;
    mcfg.n_heads = 4;
    mcfg.d_ff = 128;
    mcfg.n_layers = 4;
    TransformerModel model = init_model<float>(mcfg, /*seed=*/0);
    {
        std::vector<std::string> texts{spec.render("")};
        for (const auto& p : train_pairs) {
            texts.push_back(p.source);
            texts.push_back(p.target);
        }
        model.vocab = Vocab::build(texts, mcfg.vocab_size);
    }
    std::cout << "model: " << param_count(mcfg).total << " params in " << mcfg.n_layers
              << " layers\n";

    TrainConfig tcfg;
    tcfg.learning_rate = 1e-3;
    tcfg.epochs = 10;
    tcfg.eval_every = 80;
    auto [trained, log] = train(model, train_pairs, dev_pairs, spec, tcfg);
    std::cout << "trained: dev chrF++ " << format_double(log.best_dev_chrf_pp, 2) << " (stop: "
              << log.stop_reason << ")\n";

    PruneConfig pcfg;
    pcfg.target_removals = 2;
    pcfg.dev_pairs = dev_pairs;
    pcfg.prompt = spec;
    auto [pruned, trace] = greedy_prune(trained, pcfg, make_chrf_scorer());
    std::cout << importance_profile_report(trace) << "\n";

    TrainConfig ft = tcfg;
    ft.epochs = 3;
    auto [recovered, ftlog] = train(pruned, train_pairs, dev_pairs, spec, ft);
    std::cout << "pruned " << pcfg.target_removals << " layers: params "
              << param_count(trained.config).total << " -> " << param_count(recovered.config).total
              << ", dev chrF++ " << format_double(log.best_dev_chrf_pp, 2) << " -> "
              << format_double(ftlog.best_dev_chrf_pp, 2) << " after fine-tuning\n";

    if (log.best_dev_chrf_pp < 50.0) {
        std::cerr << "FAILED: the baseline did not train to a usable quality\n";
        return 1;
    }
    if (recovered.config.n_layers != mcfg.n_layers - pcfg.target_removals) {
        std::cerr << "FAILED: pruning removed the wrong number of layers\n";
        return 1;
    }
    return 0;
}
