#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "prunelab/corpus.hpp"
#include "prunelab/trainer.hpp"

using namespace prunelab;

namespace {

ModelConfig small_config() {
    ModelConfig cfg;
    cfg.vocab_size = 128;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.d_ff = 24;
    cfg.n_layers = 2;
    cfg.max_seq_len = 64;
    return cfg;
}

struct Fixture {
    PromptSpec spec{"English", "Cipher"};
    std::vector<SegmentPair> train_pairs;
    std::vector<SegmentPair> dev_pairs;
    Vocab vocab;
};

Fixture make_fixture(size_t n_train, size_t n_dev, size_t vocab_size, uint64_t seed = 1) {
    Fixture f;
    const auto corpus = generate_synthetic_corpus(seed, n_train + n_dev, SynthTask::cipher);
    f.train_pairs.assign(corpus.begin(), corpus.begin() + static_cast<ptrdiff_t>(n_train));
    f.dev_pairs.assign(corpus.begin() + static_cast<ptrdiff_t>(n_train), corpus.end());
    std::vector<std::string> texts{f.spec.render("")};
    for (const SegmentPair& p : corpus) {
        texts.push_back(p.source);
        texts.push_back(p.target);
    }
    f.vocab = Vocab::build(texts, vocab_size);
    return f;
}

template <typename T>
ModelT<T> fixture_model(const Fixture& f, uint64_t seed = 0) {
    ModelT<T> m = init_model<T>(small_config(), seed);
    m.vocab = f.vocab;
    return m;
}

// A dev scorer that always returns the same value: no eval ever improves on
// the first one, so patience counts up monotonically.
CorpusScorer constant_scorer(double value) {
    return [value](const std::vector<std::string>&, const std::vector<std::string>&) {
        return value;
    };
}

}  // namespace

TEST_CASE("uniform logits give ln(vocab) loss", "[trainer]") {
    const Fixture f = make_fixture(4, 2, 128);
    ModelT<double> m = fixture_model<double>(f);
    m.embedding.fill(0.0);  // zero residual stream end to end -> logits all 0
    const Batch batch = make_batch(m.vocab, f.spec, f.train_pairs, m.config.max_seq_len);
    const auto [loss, grads] = loss_and_gradients(m, batch);
    (void)grads;
    CHECK_THAT(loss, Catch::Matchers::WithinAbs(std::log(128.0), 1e-9));
}

TEST_CASE("loss matches a hand-computed cross-entropy from full forward", "[trainer]") {
    const Fixture f = make_fixture(3, 1, 128);
    const ModelT<double> m = fixture_model<double>(f, 7);
    const SegmentPair& pair = f.train_pairs[0];
    const EncodedExample ex =
        encode_example(m.vocab, f.spec, pair.source, pair.target, m.config.max_seq_len);

    const Mat<double> logits = forward(m, ex.ids);
    double total = 0.0;
    size_t count = 0;
    for (size_t pos = ex.first_target; pos < ex.ids.size(); ++pos) {
        const double* row = logits.data.data() + (pos - 1) * m.config.vocab_size;
        double mx = row[0];
        for (size_t v = 1; v < m.config.vocab_size; ++v) {
            mx = std::max(mx, row[v]);
        }
        double denom = 0.0;
        for (size_t v = 0; v < m.config.vocab_size; ++v) {
            denom += std::exp(row[v] - mx);
        }
        total += mx + std::log(denom) - row[static_cast<size_t>(ex.ids[pos])];
        ++count;
    }
    const double expected = total / static_cast<double>(count);

    const auto [loss, grads] = loss_and_gradients(m, {ex});
    (void)grads;
    CHECK_THAT(loss, Catch::Matchers::WithinRel(expected, 1e-9));
}

TEST_CASE("loss is averaged only over target positions", "[trainer]") {
    const Fixture f = make_fixture(2, 1, 128);
    const ModelT<double> m = fixture_model<double>(f, 11);
    EncodedExample ex = encode_example(m.vocab, f.spec, f.train_pairs[0].source,
                                       f.train_pairs[0].target, m.config.max_seq_len);
    const auto [masked_loss, g1] = loss_and_gradients(m, {ex});
    (void)g1;
    EncodedExample unmasked = ex;
    unmasked.first_target = 1;  // supervise every position including the prompt
    const auto [full_loss, g2] = loss_and_gradients(m, {unmasked});
    (void)g2;
    CHECK(masked_loss != full_loss);

    EncodedExample no_targets = ex;
    no_targets.first_target = no_targets.ids.size();
    CHECK_THROWS_WITH(loss_and_gradients(m, {no_targets}),
                      Catch::Matchers::ContainsSubstring("no target tokens"));
    CHECK_THROWS_AS(loss_and_gradients(m, {}), std::invalid_argument);
    EncodedExample bad = ex;
    bad.first_target = 0;
    CHECK_THROWS_AS(loss_and_gradients(m, {bad}), std::invalid_argument);
}

TEST_CASE("duplicating a batch leaves the mean loss unchanged", "[trainer]") {
    const Fixture f = make_fixture(5, 1, 128);
    const ModelT<double> m = fixture_model<double>(f, 13);
    const Batch batch = make_batch(m.vocab, f.spec, f.train_pairs, m.config.max_seq_len);
    Batch doubled = batch;
    doubled.insert(doubled.end(), batch.begin(), batch.end());
    const auto [single, g1] = loss_and_gradients(m, batch);
    const auto [dup, g2] = loss_and_gradients(m, doubled);
    (void)g1;
    (void)g2;
    CHECK_THAT(dup, Catch::Matchers::WithinRel(single, 1e-12));
}

TEST_CASE("analytic gradients agree with finite differences", "[trainer]") {
    const Fixture f = make_fixture(4, 1, 128);
    ModelT<double> m = fixture_model<double>(f, 19);
    const Batch batch = make_batch(m.vocab, f.spec, f.train_pairs, m.config.max_seq_len);
    auto [loss0, grads] = loss_and_gradients(m, batch);
    (void)loss0;

    const double eps = 1e-6;
    double worst = 0.0;
    size_t probes = 0;
    Rng rng(99);
    const auto probe = [&](std::vector<double>& param, std::vector<double>& grad) {
        for (int rep = 0; rep < 10; ++rep) {
            const size_t idx = rng.next_below(param.size());
            const double saved = param[idx];
            param[idx] = saved + eps;
            const double up = loss_and_gradients(m, batch).first;
            param[idx] = saved - eps;
            const double down = loss_and_gradients(m, batch).first;
            param[idx] = saved;
            const double fd = (up - down) / (2.0 * eps);
            const double g = grad[idx];
            const double rel =
                std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-10});
            worst = std::max(worst, rel);
            ++probes;
        }
    };
    for_each_param(m, grads,
                   [&](std::vector<double>& p, std::vector<double>& g) { probe(p, g); });
    INFO("gradcheck probes=" << probes << " worst rel err=" << worst);
    CHECK(probes >= 100);  // 10 tensors x 10 probes at this size
    CHECK(worst < 1e-4);
}

TEST_CASE("zero learning rate leaves weights bit-identical", "[trainer]") {
    const Fixture f = make_fixture(4, 2, 128);
    ModelT<float> m = fixture_model<float>(f, 23);
    const ModelT<float> before = m;
    const Batch batch = make_batch(m.vocab, f.spec, f.train_pairs, m.config.max_seq_len);
    auto [loss, grads] = loss_and_gradients(m, batch);
    (void)loss;
    AdamState<float> adam(m);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    adam_update(m, grads, adam, cfg);
    CHECK(m.embedding.data == before.embedding.data);
    for (size_t l = 0; l < m.layers.size(); ++l) {
        CHECK(m.layers[l].wq.data == before.layers[l].wq.data);
        CHECK(m.layers[l].wo.data == before.layers[l].wo.data);
        CHECK(m.layers[l].w1.data == before.layers[l].w1.data);
        CHECK(m.layers[l].attn_norm == before.layers[l].attn_norm);
    }
    CHECK(m.final_norm == before.final_norm);

    // Through the full train loop as well: the returned best model is the
    // untouched initialization.
    TrainConfig zero;
    zero.learning_rate = 0.0;
    zero.batch_size = 4;
    zero.epochs = 1;
    zero.eval_every = 2;
    const auto [trained, log] = train(m, f.train_pairs, f.dev_pairs, f.spec, zero);
    CHECK(trained.embedding.data == m.embedding.data);
    CHECK(trained.layers[0].wq.data == m.layers[0].wq.data);
    (void)log;
}

TEST_CASE("patience stops training after exactly patience evals past best", "[trainer]") {
    const Fixture f = make_fixture(40, 8, 128);
    const ModelT<float> m = fixture_model<float>(f, 29);
    TrainConfig cfg;
    cfg.batch_size = 4;       // 10 steps per epoch
    cfg.epochs = 3;           // budget of 30 steps, far beyond patience
    cfg.eval_every = 1;
    cfg.patience = 5;
    const auto [trained, log] = train(m, f.train_pairs, f.dev_pairs, f.spec, cfg,
                                      constant_scorer(42.0));
    (void)trained;
    CHECK(log.stopped_early);
    CHECK(log.stop_reason == "patience");
    CHECK(log.best_step == 0);
    // Evals at steps 0,1,2,3,4,5: the best is step 0, then exactly 5
    // non-improving evaluations trigger the stop.
    REQUIRE(log.records.size() == 6);
    for (size_t i = 0; i < log.records.size(); ++i) {
        CHECK(log.records[i].step == i);
        CHECK(log.records[i].dev_chrf_pp == 42.0);
    }
}

TEST_CASE("budget stop reasons: epochs and max_steps", "[trainer]") {
    const Fixture f = make_fixture(12, 2, 128);
    const ModelT<float> m = fixture_model<float>(f, 31);
    TrainConfig cfg;
    cfg.batch_size = 4;  // 3 steps per epoch
    cfg.epochs = 2;      // 6 planned steps
    cfg.eval_every = 100;

    const auto [m1, log1] = train(m, f.train_pairs, f.dev_pairs, f.spec, cfg);
    (void)m1;
    CHECK_FALSE(log1.stopped_early);
    CHECK(log1.stop_reason == "epochs");
    REQUIRE(log1.records.size() == 2);  // step 0 and the final step
    CHECK(log1.records.back().step == 6);

    TrainConfig capped = cfg;
    capped.max_steps = 4;
    const auto [m2, log2] = train(m, f.train_pairs, f.dev_pairs, f.spec, capped);
    (void)m2;
    CHECK_FALSE(log2.stopped_early);
    CHECK(log2.stop_reason == "max_steps");
    CHECK(log2.records.back().step == 4);
}

TEST_CASE("training reduces the loss on the cipher task", "[trainer]") {
    const Fixture f = make_fixture(60, 8, 128);
    const ModelT<float> m = fixture_model<float>(f, 0);
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;  // hot enough to move a d_model=16 model fast
    cfg.batch_size = 8;
    cfg.epochs = 8;
    cfg.eval_every = 8;
    const auto [trained, log] = train(m, f.train_pairs, f.dev_pairs, f.spec, cfg);
    (void)trained;
    REQUIRE(log.records.size() >= 2);
    CHECK(log.records.back().train_loss < log.records.front().train_loss - 0.5);
}

TEST_CASE("training is deterministic per seed", "[trainer]") {
    const Fixture f = make_fixture(16, 4, 128);
    const ModelT<float> m = fixture_model<float>(f, 3);
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.epochs = 1;
    cfg.eval_every = 2;
    const auto [m1, log1] = train(m, f.train_pairs, f.dev_pairs, f.spec, cfg);
    const auto [m2, log2] = train(m, f.train_pairs, f.dev_pairs, f.spec, cfg);
    CHECK(m1.embedding.data == m2.embedding.data);
    CHECK(m1.layers[1].w2.data == m2.layers[1].w2.data);
    REQUIRE(log1.records.size() == log2.records.size());
    for (size_t i = 0; i < log1.records.size(); ++i) {
        CHECK(log1.records[i].step == log2.records[i].step);
        CHECK(log1.records[i].train_loss == log2.records[i].train_loss);
        CHECK(log1.records[i].dev_chrf_pp == log2.records[i].dev_chrf_pp);
    }

    TrainConfig other = cfg;
    other.seed = 17;
    const auto [m3, log3] = train(m, f.train_pairs, f.dev_pairs, f.spec, other);
    (void)m3;
    bool any_diff = log3.records.size() != log1.records.size();
    for (size_t i = 0; !any_diff && i < log1.records.size(); ++i) {
        any_diff = log3.records[i].train_loss != log1.records[i].train_loss;
    }
    CHECK(any_diff);
}

TEST_CASE("evaluate_model feeds decoded hypotheses to the scorer", "[trainer]") {
    const Fixture f = make_fixture(4, 3, 128);
    const ModelT<float> m = fixture_model<float>(f, 41);
    DecodeConfig dcfg;
    dcfg.max_new_tokens = 8;
    std::vector<std::string> seen_hyps, seen_refs;
    const CorpusScorer spy = [&](const std::vector<std::string>& h,
                                 const std::vector<std::string>& r) {
        seen_hyps = h;
        seen_refs = r;
        return 7.0;
    };
    CHECK(evaluate_model(m, f.dev_pairs, f.spec, dcfg, spy) == 7.0);
    REQUIRE(seen_refs.size() == f.dev_pairs.size());
    for (size_t i = 0; i < f.dev_pairs.size(); ++i) {
        CHECK(seen_refs[i] == f.dev_pairs[i].target);
        CHECK(seen_hyps[i] == translate(m, f.spec, f.dev_pairs[i].source, dcfg).value_or(""));
    }
    CHECK_THROWS_AS(evaluate_model(m, {}, f.spec, dcfg, spy), std::invalid_argument);
}

TEST_CASE("train config validation and recipes", "[trainer]") {
    TrainConfig bad;
    bad.learning_rate = -1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = TrainConfig{};
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = TrainConfig{};
    bad.max_steps = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    const TrainConfig ref = reference_recipe();
    CHECK(ref.learning_rate == 2e-5);
    CHECK(ref.batch_size == 8);
    CHECK(ref.epochs == 1);
    CHECK(ref.patience == 5);

    TrainLog log;
    log.records.push_back({0, 2.5, 10.0});
    log.records.push_back({50, 1.25, 30.5});
    const std::string csv = log.to_csv();
    CHECK(csv.rfind("step,train_loss,dev_chrf_pp\n", 0) == 0);
    CHECK(csv.find("50,1.250000,30.500000") != std::string::npos);

    const Fixture f = make_fixture(4, 2, 128);
    ModelT<float> fresh = init_model<float>(small_config(), 0);  // specials-only vocab
    CHECK_THROWS_WITH(train(fresh, f.train_pairs, f.dev_pairs, f.spec, TrainConfig{}),
                      Catch::Matchers::ContainsSubstring("no vocabulary"));
}
