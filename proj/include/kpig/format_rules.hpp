#pragma once

#include <algorithm>
#include <array>
#include <regex>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/text.hpp"

namespace kpig {

/// A named output-format constraint with its parameters, e.g.
/// {"name": "delimiter", "params": {"sep": ", "}}.
struct FormatRule {
    std::string name;
    nlohmann::ordered_json params = nlohmann::ordered_json::object();

    bool operator==(const FormatRule&) const = default;
};

namespace format {

inline constexpr std::array<std::string_view, 8> kRegisteredRules = {
    "one_dim_list", "two_dim_list", "json_object",    "delimiter",
    "max_token_length", "contains", "prefix_pattern", "legal_sql"};

inline bool is_registered(std::string_view name) {
    return std::find(kRegisteredRules.begin(), kRegisteredRules.end(), name) != kRegisteredRules.end();
}

inline bool is_stub(std::string_view name) {
    return name == "legal_sql";
}

inline std::string string_param(const FormatRule& rule, const char* key) {
    auto it = rule.params.find(key);
    if (it == rule.params.end() || !it->is_string()) {
        throw ParseError("format rule '" + rule.name + "' needs string parameter '" + key + "'");
    }
    return it->get<std::string>();
}

inline long long int_param(const FormatRule& rule, const char* key) {
    auto it = rule.params.find(key);
    if (it == rule.params.end() || !it->is_number_integer()) {
        throw ParseError("format rule '" + rule.name + "' needs integer parameter '" + key + "'");
    }
    return it->get<long long>();
}

/// Throws ParseError for unknown names or missing/invalid parameters.
inline void validate(const FormatRule& rule) {
    if (!is_registered(rule.name)) {
        throw ParseError("unknown format rule '" + rule.name + "'");
    }
    if (rule.name == "delimiter") {
        if (string_param(rule, "sep").empty()) {
            throw ParseError("format rule 'delimiter' has empty 'sep'");
        }
    } else if (rule.name == "max_token_length") {
        if (int_param(rule, "n") <= 0) {
            throw ParseError("format rule 'max_token_length' needs n > 0");
        }
    } else if (rule.name == "contains") {
        string_param(rule, "word");
    } else if (rule.name == "prefix_pattern") {
        try {
            std::regex probe(string_param(rule, "pattern"));
        } catch (const std::regex_error& e) {
            throw ParseError(std::string("format rule 'prefix_pattern' has invalid regex: ") + e.what());
        }
    }
}

/// "[a, b, c]" with no nested brackets or braces; "[]" is allowed.
inline bool is_one_dim_list(std::string_view raw) {
    const std::string s = text::trim(raw);
    if (s.size() < 2 || s.front() != '[' || s.back() != ']') {
        return false;
    }
    const std::string_view inner = std::string_view(s).substr(1, s.size() - 2);
    if (inner.find_first_of("[]{}") != std::string_view::npos) {
        return false;
    }
    if (text::trim(inner).empty()) {
        return true;
    }
    for (const auto& item : text::split_on(inner, ",")) {
        if (item.empty()) {
            return false;
        }
    }
    return true;
}

/// "[[a, b], [c]]": an outer list whose elements are all one-dimensional lists.
inline bool is_two_dim_list(std::string_view raw) {
    const std::string s = text::trim(raw);
    if (s.size() < 2 || s.front() != '[' || s.back() != ']') {
        return false;
    }
    const std::string inner = text::trim(std::string_view(s).substr(1, s.size() - 2));
    if (inner.empty()) {
        return true;
    }
    std::size_t i = 0;
    while (i < inner.size()) {
        if (inner[i] != '[') {
            return false;
        }
        std::size_t close = inner.find(']', i);
        if (close == std::string::npos) {
            return false;
        }
        if (!is_one_dim_list(std::string_view(inner).substr(i, close - i + 1))) {
            return false;
        }
        i = close + 1;
        while (i < inner.size() && text::is_space(inner[i])) {
            ++i;
        }
        if (i == inner.size()) {
            return true;
        }
        if (inner[i] != ',') {
            return false;
        }
        ++i;
        while (i < inner.size() && text::is_space(inner[i])) {
            ++i;
        }
        if (i == inner.size()) {
            return false;
        }
    }
    return true;
}

/// Items separated by sep, none empty, none carrying a foreign delimiter.
inline bool uses_delimiter(std::string_view raw, std::string_view sep) {
    static constexpr std::array<std::string_view, 5> kForeign = {",", ";", "|", "\n", "\t"};
    const std::string s = text::trim(raw);
    if (s.empty()) {
        return false;
    }
    const std::string trimmed_sep = text::trim(sep);
    for (const auto& item : text::split_on(s, sep)) {
        if (item.empty()) {
            return false;
        }
        for (auto foreign : kForeign) {
            if (!trimmed_sep.empty() && trimmed_sep.find(foreign) != std::string::npos) {
                continue;
            }
            if (item.find(foreign) != std::string::npos) {
                return false;
            }
        }
    }
    return true;
}

/// True when the prediction satisfies the rule. legal_sql is not checked.
inline bool passes(const FormatRule& rule, std::string_view prediction) {
    const std::string& n = rule.name;
    if (n == "one_dim_list") {
        return is_one_dim_list(prediction);
    }
    if (n == "two_dim_list") {
        return is_two_dim_list(prediction);
    }
    if (n == "json_object") {
        auto parsed = nlohmann::json::parse(prediction, nullptr, false);
        return !parsed.is_discarded() && parsed.is_object();
    }
    if (n == "delimiter") {
        return uses_delimiter(prediction, string_param(rule, "sep"));
    }
    if (n == "max_token_length") {
        return static_cast<long long>(text::normalize_text(prediction).size()) <= int_param(rule, "n");
    }
    if (n == "contains") {
        return prediction.find(string_param(rule, "word")) != std::string_view::npos;
    }
    if (n == "prefix_pattern") {
        const std::regex re(string_param(rule, "pattern"));
        const std::string s = text::trim(prediction);
        return std::regex_search(s, re, std::regex_constants::match_continuous);
    }
    if (n == "legal_sql") {
        logger()->warn("format rule 'legal_sql' is not checked; counted as passing");
        return true;
    }
    throw ContractError("unknown format rule '" + n + "'");
}

}  // namespace format
}  // namespace kpig
