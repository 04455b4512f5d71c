#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "tgls/metrics.hpp"
#include "tgls/text.hpp"

using namespace tgls;

namespace {

Vocabulary fixture_vocab() {
    return Vocabulary::build(
        {"the cat sat on the mat a b c d e f x y z w q r s t dog the"}, 1);
}

Sentence sent(const Vocabulary& vocab, const std::string& text) {
    return tokenize(text, vocab);
}

BleuConfig no_smoothing() {
    BleuConfig cfg;
    cfg.smoothing = false;
    return cfg;
}

}  // namespace

// Five pinned pairs, each checked against a closed form derived from manual
// clipped n-gram counts. Tolerance 1e-9.
TEST_CASE("bleu matches hand-counted oracle values") {
    Vocabulary vocab = fixture_vocab();

    SUBCASE("identity candidate scores exactly one") {
        Sentence c = sent(vocab, "the cat sat");
        CHECK(bleu(c, {c}, no_smoothing()) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(bleu(c, {c}) == doctest::Approx(1.0).epsilon(1e-9));
    }

    SUBCASE("disjoint candidate scores exactly zero without smoothing") {
        Sentence c = sent(vocab, "a b c");
        Sentence r = sent(vocab, "x y z");
        CHECK(bleu(c, {r}, no_smoothing()) == 0.0);
    }

    SUBCASE("five-token prefix against six-token reference") {
        // Counts: 1-gram 5/5, 2-gram 4/4, 3-gram 3/3, 4-gram 2/2; c=5, r=6.
        // Score = exp(1 - 6/5) = e^{-0.2}.
        Sentence c = sent(vocab, "the cat sat on the");
        Sentence r = sent(vocab, "the cat sat on the mat");
        double expected = std::exp(-0.2);
        CHECK(bleu(c, {r}, no_smoothing()) == doctest::Approx(expected).epsilon(1e-9));
        CHECK(std::abs(expected - 0.8187) < 5e-5);
    }

    SUBCASE("smoothed pair with zero bigram and trigram matches") {
        // Counts: 1-gram 3/3, 2-gram 0/2 -> 0.1/2, 3-gram 0/1 -> 0.1/1;
        // order 4 has no candidate n-grams and drops out. c=3, r=6.
        // Score = (1 * 0.05 * 0.1)^{1/3} * exp(1 - 2) = cbrt(0.005) * e^{-1}.
        Sentence c = sent(vocab, "a b c");
        Sentence r = sent(vocab, "a x b y c z");
        double expected = std::cbrt(0.005) * std::exp(-1.0);
        CHECK(bleu(c, {r}) == doctest::Approx(expected).epsilon(1e-9));
    }

    SUBCASE("multi-reference clipping pair") {
        // Candidate "the the the cat": 1-gram clip max(the)=2 over refs plus
        // cat -> 3/4; 2-gram "the the" and "the cat" each clip to 1 -> 2/3;
        // 3-gram 0/2 -> 0.1/2; 4-gram 0/1 -> 0.1/1. c=4, ref lengths {2,3},
        // closest r=3 < c so no penalty.
        // Score = (3/4 * 2/3 * 0.05 * 0.1)^{1/4} = 0.0025^{1/4}.
        Sentence c = sent(vocab, "the the the cat");
        Sentence r1 = sent(vocab, "the cat");
        Sentence r2 = sent(vocab, "the the dog");
        double expected = std::pow(0.0025, 0.25);
        CHECK(bleu(c, {r1, r2}) == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("bleu handles empty candidate as zero, missing references as error") {
    Vocabulary vocab = fixture_vocab();
    Sentence empty;
    Sentence r = sent(vocab, "a b");
    CHECK(bleu(empty, {r}) == 0.0);
    CHECK_THROWS_AS(bleu(r, {}), std::invalid_argument);
}

TEST_CASE("bleu config validation") {
    Vocabulary vocab = fixture_vocab();
    Sentence c = sent(vocab, "a b");
    BleuConfig bad_order;
    bad_order.max_order = 5;
    CHECK_THROWS_AS(bleu(c, {c}, bad_order), std::invalid_argument);
    BleuConfig bad_eps;
    bad_eps.epsilon = 0.0;
    CHECK_THROWS_AS(bleu(c, {c}, bad_eps), std::invalid_argument);
}

TEST_CASE("brevity penalty uses closest reference length with short tie-break") {
    Vocabulary vocab = fixture_vocab();
    Sentence c = sent(vocab, "a b c");
    // Lengths 2 and 4 are both one away from 3: the shorter wins, penalty off.
    Sentence r_short = sent(vocab, "a b");
    Sentence r_long = sent(vocab, "a b c d");
    double with_both = bleu(c, {r_short, r_long});
    double with_short = bleu(c, {r_short, sent(vocab, "a b")});
    CHECK(with_both >= with_short);

    // A single longer reference applies exp(1 - r/c).
    double penalized = bleu(c, {r_long});
    double unpenalized = bleu(c, {sent(vocab, "a b c")});
    CHECK(penalized < unpenalized);
}

TEST_CASE("bleu stays within the unit interval on random inputs") {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<TokenId> tok(6, 15);
    std::uniform_int_distribution<int> len(1, 12);
    for (int trial = 0; trial < 500; ++trial) {
        Sentence c, r;
        for (int i = 0; i < len(rng); ++i) c.ids.push_back(tok(rng));
        for (int i = 0; i < len(rng); ++i) r.ids.push_back(tok(rng));
        double score = bleu(c, {r});
        CHECK(score >= 0.0);
        CHECK(score <= 1.0);
    }
}

TEST_CASE("candidate among the references scores one") {
    std::mt19937_64 rng(13);
    std::uniform_int_distribution<TokenId> tok(6, 12);
    std::uniform_int_distribution<int> len(1, 10);
    for (int trial = 0; trial < 200; ++trial) {
        Sentence c, other;
        for (int i = 0; i < len(rng); ++i) c.ids.push_back(tok(rng));
        for (int i = 0; i < len(rng); ++i) other.ids.push_back(tok(rng));
        CHECK(bleu(c, {other, c}) == doctest::Approx(1.0).epsilon(1e-12));
    }
}

// The clipping maximum over references is monotone: with the effective
// reference length held fixed (all references share one length), one more
// reference can only raise match counts.
TEST_CASE("adding a same-length reference never decreases bleu") {
    std::mt19937_64 rng(21);
    std::uniform_int_distribution<TokenId> tok(6, 12);
    std::uniform_int_distribution<int> len(1, 10);
    for (int trial = 0; trial < 300; ++trial) {
        int ref_len = len(rng);
        auto draw_ref = [&] {
            Sentence s;
            for (int i = 0; i < ref_len; ++i) s.ids.push_back(tok(rng));
            return s;
        };
        Sentence c;
        for (int i = 0; i < len(rng); ++i) c.ids.push_back(tok(rng));
        std::vector<Sentence> refs = {draw_ref()};
        double before = bleu(c, refs);
        refs.push_back(draw_ref());
        double after = bleu(c, refs);
        CHECK(after >= before - 1e-12);
    }
}

TEST_CASE("ibleu formula endpoints") {
    Vocabulary vocab = fixture_vocab();
    Sentence y = sent(vocab, "a b c");
    Sentence x = sent(vocab, "x y z");

    // BLEU(y, refs)=1 and BLEU(y, x)=0: the convex combination peaks.
    CHECK(ibleu(y, {y}, x, 0.9, no_smoothing()) == doctest::Approx(0.9).epsilon(1e-12));
    // y = x = ref: both BLEU terms are one.
    CHECK(ibleu(y, {y}, y, 0.9, no_smoothing()) == doctest::Approx(0.8).epsilon(1e-12));
    CHECK_THROWS_AS(ibleu(y, {y}, x, 1.5), std::invalid_argument);
}

TEST_CASE("ibleu composes two independent bleu calls") {
    Vocabulary vocab = fixture_vocab();
    Sentence y = sent(vocab, "the cat sat on the");
    Sentence ref = sent(vocab, "the cat sat on the mat");
    Sentence x = sent(vocab, "a cat sat on a mat");
    double expected = 0.9 * bleu(y, {ref}) - 0.1 * bleu(y, {x});
    CHECK(ibleu(y, {ref}, x) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ibleu never exceeds its alpha") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<TokenId> tok(6, 12);
    std::uniform_int_distribution<int> len(1, 10);
    for (int trial = 0; trial < 200; ++trial) {
        Sentence y, r, x;
        for (int i = 0; i < len(rng); ++i) y.ids.push_back(tok(rng));
        for (int i = 0; i < len(rng); ++i) r.ids.push_back(tok(rng));
        for (int i = 0; i < len(rng); ++i) x.ids.push_back(tok(rng));
        CHECK(ibleu(y, {r}, x, 0.9) <= 0.9 + 1e-12);
    }
}

TEST_CASE("mean identities and table row") {
    CHECK(h_mean(0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(g_mean(0.5, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(h_mean(0.0, 1.0) == 0.0);
    CHECK(g_mean(0.0, 1.0) == 0.0);
    CHECK(h_mean(0.0, 0.0) == 0.0);

    // Reported scores 60.25 and 75.15 aggregate to 66.88 and 67.29 at two
    // decimal places.
    double h = h_mean(60.25, 75.15);
    double g = g_mean(60.25, 75.15);
    CHECK(std::round(h * 100.0) / 100.0 == doctest::Approx(66.88));
    CHECK(std::round(g * 100.0) / 100.0 == doctest::Approx(67.29));

    CHECK_THROWS_AS(h_mean(-0.1, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(g_mean(0.5, -0.1), std::invalid_argument);
}

TEST_CASE("mean ordering h <= g <= arithmetic for positive inputs") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> val(1e-6, 100.0);
    for (int trial = 0; trial < 1000; ++trial) {
        double a = val(rng);
        double b = val(rng);
        double h = h_mean(a, b);
        double g = g_mean(a, b);
        double am = 0.5 * (a + b);
        CHECK(h <= g + 1e-9);
        CHECK(g <= am + 1e-9);
        if (std::abs(a - b) > 1e-6) {
            CHECK(h < g);
            CHECK(g < am);
        }
    }
    double a = 3.25;
    CHECK(h_mean(a, a) == doctest::Approx(g_mean(a, a)).epsilon(1e-12));
}

TEST_CASE("corpus bleu equals sentence bleu on a single pair") {
    Vocabulary vocab = fixture_vocab();
    Sentence c = sent(vocab, "the cat sat on the");
    Sentence r = sent(vocab, "the cat sat on the mat");
    CHECK(corpus_bleu({c}, {{r}}) == doctest::Approx(bleu(c, {r})).epsilon(1e-12));
}

TEST_CASE("corpus bleu pools counts rather than averaging scores") {
    Vocabulary vocab = fixture_vocab();
    // Pair 1 matches perfectly, pair 2 not at all. Pooled unigrams: 3 matches
    // of 6; averaging sentence scores would give 0.5 with smoothing off.
    Sentence c1 = sent(vocab, "a b c");
    Sentence c2 = sent(vocab, "x y z");
    Sentence r2 = sent(vocab, "q r s");
    double pooled = corpus_bleu({c1, c2}, {{c1}, {r2}}, no_smoothing());
    // Pooled: 1-gram 3/6, 2-gram 2/4, 3-gram 1/2, no 4-grams; BP 1.
    double expected = std::cbrt(0.5 * 0.5 * 0.5);
    CHECK(pooled == doctest::Approx(expected).epsilon(1e-9));
    CHECK_THROWS_AS(corpus_bleu({c1}, {{c1}, {r2}}), std::invalid_argument);
    CHECK_THROWS_AS(corpus_bleu({}, {}), std::invalid_argument);
}

TEST_CASE("metric report serializes as one json object per line") {
    MetricReport report;
    report.task = "paraphrase";
    report.bleu = 0.5;
    SampleMetrics row;
    row.index = 0;
    row.output = "a b";
    row.bleu = 0.5;
    report.rows.push_back(row);

    std::string text = report.to_json_lines();
    size_t newlines = static_cast<size_t>(std::count(text.begin(), text.end(), '\n'));
    CHECK(newlines == 2);
    CHECK(text.find("\"kind\":\"summary\"") != std::string::npos);
    CHECK(text.find("\"kind\":\"sample\"") != std::string::npos);
    CHECK(text.substr(0, 1) == "{");
}
