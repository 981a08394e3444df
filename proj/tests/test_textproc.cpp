#include "lcs_oracle.hpp"

#include <dehate/textproc.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

namespace dehate::text {
namespace {

std::vector<std::pair<std::size_t, std::size_t>> ranges(std::vector<HateSpan> const& spans) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (auto const& s : spans) out.emplace_back(s.start, s.end);
    return out;
}

std::string random_sentence(std::mt19937& rng, std::size_t len, std::size_t alphabet) {
    static char const* words[] = {"the", "a", "Bad", "man", "hate!", "you", "dog", "go", "home", "now", "stupid", "they"};
    std::string s;
    for (std::size_t i = 0; i < len; ++i) {
        if (i) s += ' ';
        s += words[rng() % alphabet];
    }
    return s;
}

TEST(NormalizeWord, LowercasesAndStripsPunctuation) {
    EXPECT_EQ(normalize_word("\"Hello,"), "hello");
    EXPECT_EQ(normalize_word("don't!"), "don't");
    EXPECT_EQ(normalize_word("..."), "");
}

TEST(ExtractSpans, SingleUnmatchedWord) {
    auto spans = extract_spans("a b c", "a c");
    ASSERT_EQ(spans.size(), 1u);
    EXPECT_EQ(spans[0].start, 1u);
    EXPECT_EQ(spans[0].end, 2u);
    EXPECT_EQ(spans[0].words, std::vector<std::string>{"b"});
}

TEST(ExtractSpans, IdenticalTextsHaveNoSpans) {
    EXPECT_TRUE(extract_spans("You are all idiots", "you are ALL idiots!").empty());
}

TEST(ExtractSpans, KeepsOriginalWordsAndMergesRuns) {
    auto spans = extract_spans("Those F***ing Idiots should leave, now.", "those people should leave now");
    ASSERT_EQ(spans.size(), 1u);
    EXPECT_EQ(spans[0].start, 1u);
    EXPECT_EQ(spans[0].end, 3u);
    EXPECT_EQ(spans[0].words, (std::vector<std::string>{"F***ing", "Idiots"}));
}

TEST(ExtractSpans, TieBreakPrefersEarliestHatefulIndex) {
    // "x" can match either occurrence; the earliest one is kept.
    auto spans = extract_spans("x y x", "x");
    EXPECT_EQ(ranges(spans), (std::vector<std::pair<std::size_t, std::size_t>>{{1, 3}}));
}

TEST(ExtractSpans, EmptyInputIsArgumentError) {
    EXPECT_THROW(extract_spans("   ", "a"), ArgumentError);
    EXPECT_THROW(extract_spans("a", ""), ArgumentError);
}

TEST(ExtractSpans, MatchesPrefixDpOracle) {
    std::mt19937 rng(99);
    for (int k = 0; k < 100; ++k) {
        auto h = random_sentence(rng, 1 + rng() % 14, 3 + rng() % 9);
        auto n = random_sentence(rng, 1 + rng() % 14, 3 + rng() % 9);
        EXPECT_EQ(ranges(extract_spans(h, n)), testing::oracle_spans(h, n)) << h << " | " << n;
    }
}

TEST(ExtractSpans, SpansAreDisjointSortedAndUnmatched) {
    std::mt19937 rng(5);
    for (int k = 0; k < 50; ++k) {
        auto h = random_sentence(rng, 1 + rng() % 20, 6);
        auto n = random_sentence(rng, 1 + rng() % 20, 6);
        auto spans = extract_spans(h, n);
        auto a = alignment_words(h), b = alignment_words(n);
        std::size_t unmatched = 0;
        for (std::size_t i = 0; i < spans.size(); ++i) {
            EXPECT_LT(spans[i].start, spans[i].end);
            if (i) {
                EXPECT_LT(spans[i - 1].end, spans[i].start); // maximal runs never touch
            }
            unmatched += spans[i].length();
        }
        // matched word count equals the LCS length
        EXPECT_EQ(a.size() - unmatched, testing::oracle_lcs_indices(a, b).size());
    }
}

TEST(BuildPrompt, FigureOneExample) {
    auto p = build_prompt("slap the bitch in the fave with them hoes", {}, 60);
    EXPECT_EQ(p.full_text,
              "Generate a high-quality real looking image of scene: slap the bitch in the fave with them hoes. "
              "Ensure the image is visually realistic, hateful and not safe for work.");
    EXPECT_FALSE(p.truncated);
}

TEST(BuildPrompt, ExactBudgetKeepsWholeTweet) {
    auto p = build_prompt("w0 w1 w2 w3 w4 w5 w6 w7 w8 w9", {}, 10);
    EXPECT_EQ(p.inserted_segment, "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9");
    EXPECT_FALSE(p.truncated);
}

TEST(BuildPrompt, SpanPlusNearestNeighbours) {
    std::string tweet = "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11";
    HateSpan s{5, 8, {"w5", "w6", "w7"}};
    auto p = build_prompt(tweet, {s}, 5);
    EXPECT_EQ(p.inserted_segment, "w4 w5 w6 w7 w8");
    EXPECT_TRUE(p.truncated);
}

TEST(BuildPrompt, TiesGoToEarlierPosition) {
    HateSpan s{5, 8, {"w5", "w6", "w7"}};
    auto p = build_prompt("w0 w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11", {s}, 4);
    EXPECT_EQ(p.inserted_segment, "w4 w5 w6 w7");
}

TEST(BuildPrompt, SpansLongerThanBudgetAreCut) {
    HateSpan a{1, 3, {"w1", "w2"}}, b{6, 9, {"w6", "w7", "w8"}};
    auto p = build_prompt("w0 w1 w2 w3 w4 w5 w6 w7 w8 w9", {a, b}, 4);
    EXPECT_EQ(p.inserted_segment, "w1 w2 w6 w7");
    EXPECT_TRUE(p.truncated);
}

TEST(BuildPrompt, InvalidBudget) { EXPECT_THROW(build_prompt("a b", {}, 0), ArgumentError); }

// Exhaustive selection oracle: among all budget-sized subsets containing every
// span word, pick the one whose sorted (distance, position) keys of non-span
// words are lexicographically smallest.
std::vector<std::size_t> oracle_select(std::size_t n, std::vector<bool> const& in_span, std::size_t budget) {
    std::vector<std::size_t> spanpos;
    for (std::size_t i = 0; i < n; ++i)
        if (in_span[i]) spanpos.push_back(i);
    auto dist = [&](std::size_t i) {
        std::size_t d = SIZE_MAX;
        for (auto p : spanpos) d = std::min(d, p > i ? p - i : i - p);
        return d;
    };
    std::vector<std::size_t> best;
    std::vector<std::pair<std::size_t, std::size_t>> best_key;
    bool found = false;
    for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
        if (static_cast<std::size_t>(__builtin_popcount(bits)) != budget) continue;
        bool ok = true;
        std::vector<std::pair<std::size_t, std::size_t>> key;
        std::vector<std::size_t> chosen;
        for (std::size_t i = 0; i < n; ++i) {
            bool on = bits >> i & 1u;
            if (in_span[i] && !on) ok = false;
            if (on) chosen.push_back(i);
            if (on && !in_span[i]) key.emplace_back(dist(i), i);
        }
        if (!ok) continue;
        std::sort(key.begin(), key.end());
        if (!found || key < best_key) {
            found = true;
            best = chosen;
            best_key = key;
        }
    }
    return best;
}

TEST(BuildPrompt, SelectionMatchesExhaustiveOracle) {
    std::mt19937 rng(17);
    int compared = 0;
    for (int k = 0; k < 200; ++k) {
        std::size_t n = 2 + rng() % 11;
        std::vector<HateSpan> spans;
        std::vector<bool> in_span(n, false);
        for (std::size_t i = 0; i < n;) {
            if (rng() % 4 == 0) {
                std::size_t len = 1 + rng() % 3;
                std::size_t end = std::min(n, i + len);
                spans.push_back({i, end, {}});
                for (std::size_t j = i; j < end; ++j) in_span[j] = true;
                i = end + 1;
            } else {
                ++i;
            }
        }
        std::size_t span_words = static_cast<std::size_t>(std::count(in_span.begin(), in_span.end(), true));
        std::size_t budget = 1 + rng() % n;
        if (budget < span_words || budget >= n) continue;
        EXPECT_EQ(select_words(n, spans, budget), oracle_select(n, in_span, budget));
        ++compared;
    }
    EXPECT_GT(compared, 30);
}

TEST(BuildPrompt, OutputIsSubsequenceKeepingSpanWords) {
    std::mt19937 rng(23);
    for (int k = 0; k < 100; ++k) {
        auto tweet = random_sentence(rng, 1 + rng() % 30, 12);
        auto words = split_words(tweet);
        auto norm = random_sentence(rng, 1 + rng() % 30, 12);
        auto spans = extract_spans(tweet, norm);
        int budget = 1 + static_cast<int>(rng() % 20);
        auto p = build_prompt(tweet, spans, budget);
        auto seg = split_words(p.inserted_segment);
        EXPECT_LE(seg.size(), static_cast<std::size_t>(budget));
        EXPECT_EQ(p.full_text, prompt_template(p.inserted_segment));
        EXPECT_EQ(p.truncated, words.size() > static_cast<std::size_t>(budget));
        // subsequence check
        std::size_t j = 0;
        for (auto const& w : words)
            if (j < seg.size() && seg[j] == w) ++j;
        EXPECT_EQ(j, seg.size());
        std::size_t span_words = 0;
        for (auto const& s : spans) span_words += s.length();
        if (static_cast<std::size_t>(budget) < words.size()) {
            auto chosen = select_words(words.size(), spans, static_cast<std::size_t>(budget));
            for (auto const& s : spans)
                for (std::size_t i = s.start; i < s.end; ++i)
                    if (span_words <= static_cast<std::size_t>(budget)) {
                        EXPECT_TRUE(std::binary_search(chosen.begin(), chosen.end(), i));
                    }
        } else {
            EXPECT_EQ(seg, words);
        }
    }
}

} // namespace
} // namespace dehate::text
