#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace kpig::text {

inline bool is_alnum(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

inline bool is_space(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && is_space(s[b])) {
        ++b;
    }
    while (e > b && is_space(s[e - 1])) {
        --e;
    }
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && is_space(s[i])) {
            ++i;
        }
        std::size_t j = i;
        while (j < s.size() && !is_space(s[j])) {
            ++j;
        }
        if (j > i) {
            out.emplace_back(s.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

/// Splits on a literal separator; pieces are trimmed, empty pieces kept.
inline std::vector<std::string> split_on(std::string_view s, std::string_view sep) {
    std::vector<std::string> out;
    if (sep.empty()) {
        out.push_back(trim(s));
        return out;
    }
    std::size_t start = 0;
    while (true) {
        std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(trim(s.substr(start)));
            break;
        }
        out.push_back(trim(s.substr(start, pos - start)));
        start = pos + sep.size();
    }
    return out;
}

/// Lowercase, whitespace split, edge punctuation stripped, empties dropped.
inline std::vector<std::string> normalize_text(std::string_view s) {
    std::vector<std::string> out;
    for (auto& raw : split_whitespace(s)) {
        std::size_t b = 0;
        std::size_t e = raw.size();
        while (b < e && !is_alnum(raw[b])) {
            ++b;
        }
        while (e > b && !is_alnum(raw[e - 1])) {
            --e;
        }
        if (e > b) {
            out.push_back(to_lower(std::string_view(raw).substr(b, e - b)));
        }
    }
    return out;
}

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            out += sep;
        }
        out += tokens[i];
    }
    return out;
}

/// Normalized tokens re-joined by single spaces.
inline std::string normalized_string(std::string_view s) {
    return join(normalize_text(s));
}

using NgramCounts = std::map<std::vector<std::string>, int>;

inline NgramCounts ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
    NgramCounts counts;
    if (tokens.size() < n || n == 0) {
        return counts;
    }
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[std::vector<std::string>(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                          tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
    }
    return counts;
}

/// Sentence BLEU in [0,1] with uniform weights up to max_order. Orders above
/// one use add-one smoothing on both numerator and denominator; references
/// clip counts jointly and the brevity penalty uses the closest reference length.
inline double sentence_bleu(const std::vector<std::string>& candidate,
                            const std::vector<std::vector<std::string>>& references,
                            std::size_t max_order = 4) {
    if (candidate.empty() || references.empty()) {
        return 0.0;
    }
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_order; ++n) {
        NgramCounts cand = ngram_counts(candidate, n);
        NgramCounts clip;
        for (const auto& ref : references) {
            for (const auto& [gram, c] : ngram_counts(ref, n)) {
                clip[gram] = std::max(clip[gram], c);
            }
        }
        double matches = 0.0;
        double total = 0.0;
        for (const auto& [gram, c] : cand) {
            total += c;
            auto it = clip.find(gram);
            if (it != clip.end()) {
                matches += std::min(c, it->second);
            }
        }
        double precision = 0.0;
        if (n == 1) {
            if (matches == 0.0) {
                return 0.0;
            }
            precision = matches / total;
        } else {
            precision = (matches + 1.0) / (total + 1.0);
        }
        log_sum += std::log(precision) / static_cast<double>(max_order);
    }
    const double c = static_cast<double>(candidate.size());
    double best_ref = -1.0;
    for (const auto& ref : references) {
        const double r = static_cast<double>(ref.size());
        if (best_ref < 0.0 || std::abs(r - c) < std::abs(best_ref - c) ||
            (std::abs(r - c) == std::abs(best_ref - c) && r < best_ref)) {
            best_ref = r;
        }
    }
    const double bp = c >= best_ref ? 1.0 : std::exp(1.0 - best_ref / c);
    return bp * std::exp(log_sum);
}

/// Mean sentence BLEU of each item against all other items.
inline double self_bleu(const std::vector<std::vector<std::string>>& items, std::size_t max_order = 4) {
    if (items.size() < 2) {
        return 0.0;
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        std::vector<std::vector<std::string>> refs;
        refs.reserve(items.size() - 1);
        for (std::size_t j = 0; j < items.size(); ++j) {
            if (j != i) {
                refs.push_back(items[j]);
            }
        }
        sum += sentence_bleu(items[i], refs, max_order);
    }
    return sum / static_cast<double>(items.size());
}

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0);
    std::vector<std::size_t> cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j) {
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

/// ROUGE-L F1 in [0,1].
inline double rouge_l(const std::vector<std::string>& prediction, const std::vector<std::string>& reference) {
    if (prediction.empty() && reference.empty()) {
        return 1.0;
    }
    if (prediction.empty() || reference.empty()) {
        return 0.0;
    }
    const double lcs = static_cast<double>(lcs_length(prediction, reference));
    if (lcs == 0.0) {
        return 0.0;
    }
    const double p = lcs / static_cast<double>(prediction.size());
    const double r = lcs / static_cast<double>(reference.size());
    return 2.0 * p * r / (p + r);
}

/// ROUGE-1 F1 in [0,1] over clipped unigram overlap.
inline double rouge_1(const std::vector<std::string>& prediction, const std::vector<std::string>& reference) {
    if (prediction.empty() && reference.empty()) {
        return 1.0;
    }
    if (prediction.empty() || reference.empty()) {
        return 0.0;
    }
    auto pc = ngram_counts(prediction, 1);
    auto rc = ngram_counts(reference, 1);
    double overlap = 0.0;
    for (const auto& [gram, c] : pc) {
        auto it = rc.find(gram);
        if (it != rc.end()) {
            overlap += std::min(c, it->second);
        }
    }
    if (overlap == 0.0) {
        return 0.0;
    }
    const double p = overlap / static_cast<double>(prediction.size());
    const double r = overlap / static_cast<double>(reference.size());
    return 2.0 * p * r / (p + r);
}

}  // namespace kpig::text
