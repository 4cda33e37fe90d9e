#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "prunelab/corpus.hpp"
#include "prunelab/distill.hpp"
#include "prunelab/rewriter_http.hpp"

using namespace prunelab;

namespace {

std::vector<std::string> sources_of(const std::vector<SegmentPair>& pairs) {
    std::vector<std::string> out;
    for (const SegmentPair& p : pairs) {
        out.push_back(p.source);
    }
    return out;
}

}  // namespace

TEST_CASE("oracle teacher reproduces gold targets exactly", "[distill]") {
    const auto corpus = generate_synthetic_corpus(21, 40, SynthTask::cipher);
    const Translator teacher = make_oracle_translator(SynthTask::cipher);
    const KdGeneration gen = generate_kd_data(teacher, sources_of(corpus), KdConfig{});
    CHECK(gen.skipped == 0);
    REQUIRE(gen.pairs.size() == corpus.size());
    for (size_t i = 0; i < corpus.size(); ++i) {
        CHECK(gen.pairs[i].source == corpus[i].source);
        CHECK(gen.pairs[i].target == corpus[i].target);
        CHECK(gen.pairs[i].origin == Origin::distilled);
    }
    CHECK(gen.stats_json()["generated"] == corpus.size());
}

TEST_CASE("decode failures are skipped and counted", "[distill]") {
    size_t calls = 0;
    const Translator flaky = [&](const std::string& s) -> std::optional<std::string> {
        ++calls;
        if (calls % 3 == 0) {
            return std::nullopt;  // hard failure
        }
        if (calls % 3 == 2) {
            return std::string{};  // empty decode counts as failure too
        }
        return "OK " + s;
    };
    const std::vector<std::string> sources{"a", "b", "c", "d", "e", "f", "g"};
    const KdGeneration gen = generate_kd_data(flaky, sources, KdConfig{});
    CHECK(gen.skipped == 4);  // calls 2,3,5,6
    REQUIRE(gen.pairs.size() == 3);
    CHECK(gen.pairs[0].source == "a");
    CHECK(gen.pairs[1].source == "d");
    CHECK(gen.pairs[2].source == "g");
    CHECK_THROWS_AS(generate_kd_data(flaky, {}, KdConfig{}), std::invalid_argument);
}

TEST_CASE("kd filter threshold boundary keeps 0.70 and drops 0.69", "[distill]") {
    std::map<std::string, double> rigged{{"KEEP", 0.70}, {"DROP", 0.69}, {"HIGH", 0.99}};
    const SemanticScorer scorer = [&](const std::string&, const std::string& target) {
        return rigged.at(target);
    };
    std::vector<SegmentPair> kd;
    for (const char* t : {"KEEP", "DROP", "HIGH"}) {
        SegmentPair p;
        p.source = "src";
        p.target = t;
        p.origin = Origin::distilled;
        kd.push_back(p);
    }
    const auto [kept, stats] = filter_kd_data(kd, {}, scorer, KdConfig{});
    CHECK(stats.input == 3);
    CHECK(stats.dupes == 0);
    CHECK(stats.low_quality == 1);
    CHECK(stats.kept == 2);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].target == "KEEP");
    CHECK(*kept[0].semantic_score == 0.70);
    CHECK(kept[1].target == "HIGH");
}

TEST_CASE("planted kd batch: 3 dupes and 2 low-quality of 10 leaves 5", "[distill]") {
    const SynthTask task = SynthTask::cipher;
    const auto corpus = generate_synthetic_corpus(33, 20, task);
    // Authentic pool: first 10 pairs.
    const std::vector<SegmentPair> authentic(corpus.begin(), corpus.begin() + 10);

    std::vector<SegmentPair> kd;
    const auto add = [&](const std::string& src, const std::string& tgt) {
        SegmentPair p;
        p.source = src;
        p.target = tgt;
        p.origin = Origin::distilled;
        kd.push_back(p);
    };
    // 5 clean novel pairs from the unseen half of the corpus.
    for (size_t i = 10; i < 15; ++i) {
        add(corpus[i].source, corpus[i].target);
    }
    // 3 exact target-side duplicates of authentic data. The third also has a
    // mismatched source (low quality), but dedup is checked first.
    add(authentic[0].source, authentic[0].target);
    add(authentic[1].source, authentic[1].target);
    add(corpus[15].source, authentic[2].target);
    // 2 low-quality pairs: ciphered text of the wrong source.
    add(corpus[16].source, apply_transform(task, "completely unrelated words"));
    add(corpus[17].source, apply_transform(task, "another mismatched sentence"));

    REQUIRE(kd.size() == 10);
    const auto [kept, stats] =
        filter_kd_data(kd, authentic, default_semantic_scorer(task), KdConfig{});
    CHECK(stats.input == 10);
    CHECK(stats.dupes == 3);
    CHECK(stats.low_quality == 2);
    CHECK(stats.kept == 5);
    CHECK(stats.balanced());
    REQUIRE(kept.size() == 5);
    for (const SegmentPair& p : kept) {
        REQUIRE(p.semantic_score.has_value());
        CHECK(*p.semantic_score >= 0.70);
        CHECK(p.origin == Origin::distilled);
    }

    // With dedup disabled the duplicate targets flow through to the quality
    // stage (all three are perfect or near-perfect translations of their
    // stated source except the mismatched one).
    KdConfig no_dedup;
    no_dedup.dedup_against_authentic = false;
    const auto [kept2, stats2] =
        filter_kd_data(kd, authentic, default_semantic_scorer(task), no_dedup);
    CHECK(stats2.dupes == 0);
    CHECK(stats2.kept + stats2.low_quality == 10);
    CHECK(kept2.size() == stats2.kept);
}

TEST_CASE("mixing preserves the multiset and is seed-deterministic", "[distill]") {
    const auto corpus = generate_synthetic_corpus(44, 30, SynthTask::cipher);
    std::vector<SegmentPair> authentic(corpus.begin(), corpus.begin() + 20);
    std::vector<SegmentPair> kd(corpus.begin() + 20, corpus.end());
    for (SegmentPair& p : kd) {
        p.origin = Origin::distilled;
    }

    const auto mixed1 = mix_training_data(authentic, kd, 9);
    const auto mixed2 = mix_training_data(authentic, kd, 9);
    const auto mixed3 = mix_training_data(authentic, kd, 10);
    CHECK(mixed1.size() == 30);
    CHECK(mixed1 == mixed2);
    CHECK(mixed1 != mixed3);

    size_t distilled = 0;
    for (const SegmentPair& p : mixed1) {
        distilled += p.origin == Origin::distilled ? 1 : 0;
    }
    CHECK(distilled == kd.size());

    auto sort_key = [](const SegmentPair& p) { return p.source + "\x1e" + p.target; };
    std::vector<std::string> in_keys, out_keys;
    for (const SegmentPair& p : authentic) in_keys.push_back(sort_key(p));
    for (const SegmentPair& p : kd) in_keys.push_back(sort_key(p));
    for (const SegmentPair& p : mixed1) out_keys.push_back(sort_key(p));
    std::sort(in_keys.begin(), in_keys.end());
    std::sort(out_keys.begin(), out_keys.end());
    CHECK(in_keys == out_keys);

    CHECK_THROWS_AS(mix_training_data({}, kd, 0), std::invalid_argument);
}

TEST_CASE("rewrite prompt template renders with substitutions", "[distill]") {
    const std::string rendered =
        render_rewrite_prompt(kDefaultRewriteTemplate, "SRC-SENTENCE", "DRAFT-TARGET");
    CHECK(rendered.find("SRC-SENTENCE") != std::string::npos);
    CHECK(rendered.find("DRAFT-TARGET") != std::string::npos);
    CHECK(rendered.find("{new_source_text}") == std::string::npos);
    CHECK(rendered.find("{new_target_text}") == std::string::npos);
    // Fixed one-shot example block and instruction phrasing survive rendering.
    CHECK(rendered.find("<english_example>") != std::string::npos);
    CHECK(rendered.find("<standard_arabic_example>") != std::string::npos);
    CHECK(rendered.find("<egyptian_arabic_example>") != std::string::npos);
    CHECK(rendered.find("Do not add any commentary") != std::string::npos);
    CHECK(rendered.rfind("Egyptian Arabic:\n") == rendered.size() - 17);

    CHECK_THROWS_AS(render_rewrite_prompt("no placeholders here", "s", "t"),
                    std::invalid_argument);
    CHECK_THROWS_AS(render_rewrite_prompt("only {new_source_text}", "s", "t"),
                    std::invalid_argument);
}

TEST_CASE("mock rewriter applies its transform through the client contract", "[distill]") {
    MockRewriter upper([](const std::string&, const std::string& draft) {
        std::string out = draft;
        for (char& c : out) {
            c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
        }
        return out;
    });
    CHECK(upper.rewrite("src", "abc", kDefaultRewriteTemplate, 0.3, 1.0) == "ABC");

    MockRewriter id = MockRewriter::identity();
    CHECK(id.rewrite("src", "draft text", kDefaultRewriteTemplate, 0.3, 1.0) == "draft text");
    CHECK_THROWS_AS(id.rewrite("src", "", kDefaultRewriteTemplate, 0.3, 1.0), RewriteError);
    // Template contract enforced even by mocks.
    CHECK_THROWS_AS(id.rewrite("src", "draft", "bad template", 0.3, 1.0),
                    std::invalid_argument);
}

namespace {

// Records every call for argument verification.
class SpyRewriter : public RewriterClient {
  public:
    struct Call {
        std::string source, draft, prompt_template;
        double temperature, top_p;
    };
    std::vector<Call> calls;
    std::string reply = "REWRITTEN";

    std::string rewrite(const std::string& source, const std::string& draft,
                        const std::string& prompt_template, double temperature,
                        double top_p) override {
        calls.push_back({source, draft, prompt_template, temperature, top_p});
        return reply;
    }
};

}  // namespace

TEST_CASE("rewrite_corpus replaces targets and preserves sources", "[distill]") {
    const auto pairs = generate_synthetic_corpus(8, 12, SynthTask::cipher);
    SpyRewriter spy;
    const RewriteResult res = rewrite_corpus(pairs, spy, kDefaultRewriteTemplate);
    CHECK(res.dropped_failures == 0);
    // "REWRITTEN" is 1 word vs 3..8-word sources: every pair violates the
    // 1.5 length-ratio rule except 1-word sources (none exist), so everything
    // lands in the post filter... unless the source itself is 1 word.
    CHECK(res.pairs.size() + res.dropped_filtered == pairs.size());
    REQUIRE(spy.calls.size() == pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        CHECK(spy.calls[i].source == pairs[i].source);
        CHECK(spy.calls[i].draft == pairs[i].target);
        CHECK(spy.calls[i].prompt_template == kDefaultRewriteTemplate);
        CHECK(spy.calls[i].temperature == 0.3);  // documented defaults
        CHECK(spy.calls[i].top_p == 1.0);
    }

    // An echo client that keeps the draft target passes the ratio rules.
    MockRewriter id = MockRewriter::identity();
    const RewriteResult echo = rewrite_corpus(pairs, id, kDefaultRewriteTemplate, 0.3, 1.0);
    CHECK(echo.dropped_failures == 0);
    CHECK(echo.dropped_filtered == 0);
    REQUIRE(echo.pairs.size() == pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        CHECK(echo.pairs[i].source == pairs[i].source);
        CHECK(echo.pairs[i].target == pairs[i].target);
        CHECK(echo.pairs[i].origin == Origin::rewritten);
    }

    CHECK_THROWS_AS(rewrite_corpus(pairs, id, "template without placeholders"),
                    std::invalid_argument);
}

TEST_CASE("rewrite_corpus drops failures and rule violations separately", "[distill]") {
    const auto pairs = generate_synthetic_corpus(14, 9, SynthTask::cipher);
    size_t n = 0;
    MockRewriter picky([&](const std::string&, const std::string& draft) -> std::string {
        ++n;
        if (n % 3 == 1) {
            return std::string{};  // -> RewriteError inside the mock
        }
        if (n % 3 == 2) {
            return draft + " EXTRA EXTRA EXTRA EXTRA EXTRA EXTRA EXTRA EXTRA";  // ratio blown
        }
        return draft;
    });
    const RewriteResult res = rewrite_corpus(pairs, picky, kDefaultRewriteTemplate);
    CHECK(res.dropped_failures == 3);
    CHECK(res.dropped_filtered == 3);
    CHECK(res.pairs.size() == 3);

    FilterConfig tight;
    tight.max_words = 2;  // every 3..8-word rewritten target now fails the cap
    MockRewriter id = MockRewriter::identity();
    const RewriteResult capped =
        rewrite_corpus(pairs, id, kDefaultRewriteTemplate, 0.3, 1.0, tight);
    CHECK(capped.pairs.size() + capped.dropped_filtered == pairs.size());
    CHECK(capped.dropped_filtered > 0);
}

TEST_CASE("http rewriter talks json, retries once, then fails typed", "[distill]") {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::atomic<int> fail_first{0};
    std::string last_body;
    std::mutex body_mutex;

    server.Post("/rewrite", [&](const httplib::Request& req, httplib::Response& res) {
        hits += 1;
        {
            std::lock_guard<std::mutex> lock(body_mutex);
            last_body = req.body;
        }
        if (fail_first > 0) {
            fail_first -= 1;
            res.status = 500;
            return;
        }
        const auto body = nlohmann::json::parse(req.body);
        const nlohmann::json reply = {{"text", "SERVICE SAYS: " + body.at("prompt").get<std::string>().substr(0, 1)}};
        res.set_content(reply.dump(), "application/json");
    });
    server.Post("/empty", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content(nlohmann::json{{"text", ""}}.dump(), "application/json");
    });

    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread server_thread([&]() { server.listen_after_bind(); });
    server.wait_until_ready();

    const std::string base = "http://127.0.0.1:" + std::to_string(port);

    SECTION("success round-trip carries prompt, temperature, top_p") {
        HttpRewriter client(base + "/rewrite", 5.0);
        const std::string out =
            client.rewrite("my source", "my draft", kDefaultRewriteTemplate, 0.25, 0.9);
        CHECK(out.rfind("SERVICE SAYS:", 0) == 0);
        std::lock_guard<std::mutex> lock(body_mutex);
        const auto body = nlohmann::json::parse(last_body);
        const std::string prompt = body.at("prompt").get<std::string>();
        CHECK(prompt == render_rewrite_prompt(kDefaultRewriteTemplate, "my source", "my draft"));
        CHECK(body.at("temperature").get<double>() == 0.25);
        CHECK(body.at("top_p").get<double>() == 0.9);
    }

    SECTION("one retry masks a transient failure") {
        fail_first = 1;
        HttpRewriter client(base + "/rewrite", 5.0);
        CHECK_NOTHROW(client.rewrite("s", "d", kDefaultRewriteTemplate, 0.3, 1.0));
        CHECK(hits == 2);
    }

    SECTION("persistent failure raises RewriteError") {
        fail_first = 99;
        HttpRewriter client(base + "/rewrite", 5.0);
        CHECK_THROWS_AS(client.rewrite("s", "d", kDefaultRewriteTemplate, 0.3, 1.0),
                        RewriteError);
        CHECK(hits == 2);  // exactly one retry
    }

    SECTION("empty text is a protocol failure") {
        HttpRewriter client(base + "/empty", 5.0);
        CHECK_THROWS_AS(client.rewrite("s", "d", kDefaultRewriteTemplate, 0.3, 1.0),
                        RewriteError);
    }

    SECTION("unreachable endpoint raises RewriteError") {
        HttpRewriter client("http://127.0.0.1:1/rewrite", 0.2);
        CHECK_THROWS_AS(client.rewrite("s", "d", kDefaultRewriteTemplate, 0.3, 1.0),
                        RewriteError);
    }

    server.stop();
    server_thread.join();

    CHECK_THROWS_AS(HttpRewriter("no-scheme-here"), std::invalid_argument);
}
