#pragma once

#include "error.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace dehate::text {

inline constexpr int default_word_budget = 60;

/// Half-open word range [start, end) into the whitespace-split hateful text.
struct HateSpan {
    std::size_t start = 0;
    std::size_t end = 0;
    std::vector<std::string> words;

    std::size_t length() const { return end - start; }
    friend bool operator==(HateSpan const&, HateSpan const&) = default;
};

struct PromptSpec {
    std::string full_text;
    std::string inserted_segment;
    int word_budget = default_word_budget;
    bool truncated = false;
};

inline std::vector<std::string> split_words(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream in{std::string(s)};
    for (std::string w; in >> w;) out.push_back(std::move(w));
    return out;
}

/// Lowercase and strip leading/trailing ASCII punctuation.
inline std::string normalize_word(std::string_view w) {
    auto is_punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; };
    std::size_t b = 0, e = w.size();
    while (b < e && is_punct(w[b])) ++b;
    while (e > b && is_punct(w[e - 1])) --e;
    std::string out(w.substr(b, e - b));
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline std::vector<std::string> alignment_words(std::string_view s) {
    auto words = split_words(s);
    for (auto& w : words) w = normalize_word(w);
    return words;
}

/// Indices of `a` matched by a longest common subsequence with `b`. Among all
/// maximum alignments the one with the lexicographically smallest list of
/// `a` indices is returned.
inline std::vector<std::size_t> lcs_matched_indices(std::vector<std::string> const& a, std::vector<std::string> const& b) {
    std::size_t const n = a.size(), m = b.size();
    // suffix[i][j] = LCS length of a[i..] and b[j..]
    std::vector<std::size_t> suffix((n + 1) * (m + 1), 0);
    auto L = [&](std::size_t i, std::size_t j) -> std::size_t& { return suffix[i * (m + 1) + j]; };
    for (std::size_t i = n; i-- > 0;)
        for (std::size_t j = m; j-- > 0;)
            L(i, j) = a[i] == b[j] ? L(i + 1, j + 1) + 1 : std::max(L(i + 1, j), L(i, j + 1));

    std::vector<std::size_t> matched;
    std::size_t i = 0, j = 0;
    while (i < n && j < m) {
        if (a[i] == b[j]) {
            matched.push_back(i);
            ++i;
            ++j;
        } else if (L(i, j + 1) == L(i, j)) {
            ++j;
        } else {
            ++i;
        }
    }
    return matched;
}

/// Maximal runs of hateful-text words left unmatched by the word-level LCS
/// alignment against the normalized text.
inline std::vector<HateSpan> extract_spans(std::string_view hateful, std::string_view normalized) {
    auto raw = split_words(hateful);
    auto a = alignment_words(hateful);
    auto b = alignment_words(normalized);
    if (a.empty() || b.empty()) throw ArgumentError("extract_spans needs two non-empty texts");

    std::vector<bool> keep(a.size(), false);
    for (auto i : lcs_matched_indices(a, b)) keep[i] = true;

    std::vector<HateSpan> spans;
    for (std::size_t i = 0; i < a.size();) {
        if (keep[i]) {
            ++i;
            continue;
        }
        HateSpan s{i, i, {}};
        while (i < a.size() && !keep[i]) s.words.push_back(raw[i++]);
        s.end = i;
        spans.push_back(std::move(s));
    }
    return spans;
}

inline std::string prompt_template(std::string_view segment) {
    return "Generate a high-quality real looking image of scene: " + std::string(segment) +
           ". Ensure the image is visually realistic, hateful and not safe for work.";
}

/// Chooses at most `word_budget` words of the tweet: span words first in text
/// order, then the non-span words closest to any span word (ties toward the
/// earlier position). Selected words keep their original order.
inline std::vector<std::size_t> select_words(std::size_t word_count, std::vector<HateSpan> const& spans,
                                             std::size_t word_budget) {
    std::vector<bool> in_span(word_count, false);
    std::vector<std::size_t> span_positions;
    for (auto const& s : spans) {
        if (s.start >= s.end || s.end > word_count) throw ArgumentError("hate span out of range for tweet");
        for (std::size_t i = s.start; i < s.end; ++i)
            if (!in_span[i]) {
                in_span[i] = true;
                span_positions.push_back(i);
            }
    }
    std::sort(span_positions.begin(), span_positions.end());

    std::vector<std::size_t> chosen;
    for (auto p : span_positions) {
        if (chosen.size() == word_budget) break;
        chosen.push_back(p);
    }

    if (chosen.size() < word_budget) {
        constexpr std::size_t far = std::numeric_limits<std::size_t>::max();
        std::vector<std::pair<std::size_t, std::size_t>> rest; // (distance, position)
        for (std::size_t i = 0; i < word_count; ++i) {
            if (in_span[i]) continue;
            std::size_t d = far;
            for (auto p : span_positions) d = std::min(d, p > i ? p - i : i - p);
            rest.emplace_back(d, i);
        }
        std::sort(rest.begin(), rest.end());
        for (auto const& [d, i] : rest) {
            if (chosen.size() == word_budget) break;
            chosen.push_back(i);
        }
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

inline PromptSpec build_prompt(std::string_view tweet, std::vector<HateSpan> const& spans, int word_budget = default_word_budget) {
    if (word_budget < 1) throw ArgumentError("word budget must be >= 1");
    auto words = split_words(tweet);
    auto budget = static_cast<std::size_t>(word_budget);
    PromptSpec p;
    p.word_budget = word_budget;
    p.truncated = words.size() > budget;
    std::vector<std::size_t> chosen;
    if (p.truncated) {
        chosen = select_words(words.size(), spans, budget);
    } else {
        chosen.resize(words.size());
        std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    }
    for (std::size_t k = 0; k < chosen.size(); ++k) {
        if (k) p.inserted_segment += ' ';
        p.inserted_segment += words[chosen[k]];
    }
    p.full_text = prompt_template(p.inserted_segment);
    return p;
}

} // namespace dehate::text
