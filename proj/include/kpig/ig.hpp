#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/lm/model.hpp"
#include "kpig/lm/prompt.hpp"
#include "kpig/lm/vocabulary.hpp"
#include "kpig/task_model.hpp"

namespace kpig::ig {

/// Instance whose instruction had its key parts replaced by "[MASK]".
struct MaskedInstance {
    Instance original;
    std::string masked_instruction;
    std::size_t mask_count = 0;
};

struct MaskResult {
    std::string text;
    std::size_t mask_count = 0;
};

struct MaskOptions {
    /// Mask a key part that is not found verbatim at its longest common
    /// substring with the instruction, if that covers >= fuzzy_ratio of it.
    bool fuzzy = false;
    double fuzzy_ratio = 0.8;
};

namespace detail {

/// Longest common substring of needle within hay: (start in hay, length).
inline std::pair<std::size_t, std::size_t> longest_common_substring(const std::string& hay, const std::string& needle) {
    std::vector<std::size_t> prev(needle.size() + 1, 0);
    std::vector<std::size_t> cur(needle.size() + 1, 0);
    std::size_t best_len = 0;
    std::size_t best_end = 0;
    for (std::size_t i = 1; i <= hay.size(); ++i) {
        for (std::size_t j = 1; j <= needle.size(); ++j) {
            cur[j] = hay[i - 1] == needle[j - 1] ? prev[j - 1] + 1 : 0;
            if (cur[j] > best_len) {
                best_len = cur[j];
                best_end = i;
            }
        }
        std::swap(prev, cur);
    }
    return {best_end - best_len, best_len};
}

}  // namespace detail

/// Replaces each resolvable key part's first occurrence with "[MASK]".
/// Spans are located longest-first on the original text; overlapping or
/// touching spans collapse into a single mask. Unresolvable parts are skipped.
inline MaskResult mask_instruction(const KeyedInstruction& keyed, const MaskOptions& options = {}) {
    std::vector<std::string> parts = keyed.key_parts;
    std::stable_sort(parts.begin(), parts.end(),
                     [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    for (const auto& part : parts) {
        if (part.empty()) {
            continue;
        }
        std::size_t pos = keyed.text.find(part);
        if (pos != std::string::npos) {
            spans.emplace_back(pos, pos + part.size());
            continue;
        }
        if (options.fuzzy) {
            auto [start, len] = detail::longest_common_substring(keyed.text, part);
            if (len > 0 && static_cast<double>(len) >= options.fuzzy_ratio * static_cast<double>(part.size())) {
                spans.emplace_back(start, start + len);
            }
        }
    }
    if (spans.empty()) {
        return {keyed.text, 0};
    }
    std::sort(spans.begin(), spans.end());
    std::vector<std::pair<std::size_t, std::size_t>> merged;
    for (const auto& s : spans) {
        if (!merged.empty() && s.first <= merged.back().second) {
            merged.back().second = std::max(merged.back().second, s.second);
        } else {
            merged.push_back(s);
        }
    }
    MaskResult out;
    std::size_t at = 0;
    for (const auto& [b, e] : merged) {
        out.text += keyed.text.substr(at, b - at);
        out.text += lm::kMaskLiteral;
        at = e;
    }
    out.text += keyed.text.substr(at);
    out.mask_count = merged.size();
    return out;
}

inline MaskedInstance mask_instance(const Instance& instance, const KeyedInstruction& keyed,
                                    const MaskOptions& options = {}) {
    auto m = mask_instruction(keyed, options);
    return MaskedInstance{instance, std::move(m.text), m.mask_count};
}

inline void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) {
        throw ContractError("alpha must lie in (0, 1], got " + std::to_string(alpha));
    }
}

/// Decayed information: sum over k = 1..K of alpha^k * p(t_k).
inline double sequence_info(std::span<const double> gold_probs, double alpha) {
    check_alpha(alpha);
    if (gold_probs.empty()) {
        throw ContractError("sequence_info: empty scored output");
    }
    double weight = 1.0;
    double sum = 0.0;
    for (double p : gold_probs) {
        weight *= alpha;
        sum += weight * p;
    }
    return sum;
}

inline double sequence_info(const lm::ScoredOutput& scored, double alpha) {
    return sequence_info(scored.gold_probs, alpha);
}

/// 2 - min(gain, 1), optionally capped at beta_max.
inline double dynamic_temperature(double gain, std::optional<double> beta_max = std::nullopt) {
    if (!std::isfinite(gain)) {
        throw ContractError("dynamic_temperature: gain must be finite");
    }
    const double beta = 2.0 - std::min(gain, 1.0);
    if (beta_max && beta > *beta_max) {
        logger()->debug("beta {} capped at beta_max {}", beta, *beta_max);
        return *beta_max;
    }
    return beta;
}

struct IGRecord {
    std::string instance_id;
    double info_complete = 0.0;
    double info_masked = 0.0;
    double gain = 0.0;
    double beta = 2.0;
};

inline IGRecord make_record(double info_complete, double info_masked, std::optional<double> beta_max = std::nullopt) {
    IGRecord r;
    r.info_complete = info_complete;
    r.info_masked = info_masked;
    r.gain = info_complete - info_masked;
    r.beta = dynamic_temperature(r.gain, beta_max);
    return r;
}

/// Scored complete and masked views of one instance under one model.
struct ScoredPair {
    lm::ScoredOutput complete;
    lm::ScoredOutput masked;
    bool mask_is_identity = false;
};

/// Teacher-forced scoring of (i, c) -> y and (i^m, c) -> y. When masking is
/// the identity the masked view is a copy of the complete one.
inline ScoredPair score_pair(const lm::LanguageModel& model, const lm::Vocabulary& vocab, const Instance& instance,
                             const KeyedInstruction& keyed, const MaskOptions& options = {}) {
    if (instance.instruction_text != keyed.text) {
        throw ContractError("information_gain: instance '" + instance.instance_id +
                            "' does not use the keyed instruction");
    }
    const auto masked = mask_instruction(keyed, options);
    const auto y = lm::output_tokens(vocab, instance.output);
    const auto x = lm::input_tokens(vocab, keyed.text, {}, instance.context);
    ScoredPair out;
    out.complete = lm::teacher_forced_distributions(model, x, y);
    if (masked.mask_count == 0) {
        out.masked = out.complete;
        out.mask_is_identity = true;
    } else {
        const auto xm = lm::input_tokens(vocab, masked.text, {}, instance.context);
        out.masked = lm::teacher_forced_distributions(model, xm, y);
    }
    return out;
}

/// G = Info(y | i, c) - Info(y | i^m, c) together with its temperature.
inline IGRecord information_gain(const lm::LanguageModel& model, const lm::Vocabulary& vocab,
                                 const Instance& instance, const KeyedInstruction& keyed, double alpha,
                                 const MaskOptions& options = {}, std::optional<double> beta_max = std::nullopt) {
    check_alpha(alpha);
    const auto pair = score_pair(model, vocab, instance, keyed, options);
    IGRecord r = pair.mask_is_identity
                     ? make_record(sequence_info(pair.complete, alpha), sequence_info(pair.complete, alpha), beta_max)
                     : make_record(sequence_info(pair.complete, alpha), sequence_info(pair.masked, alpha), beta_max);
    r.instance_id = instance.instance_id;
    return r;
}

// ---------------------------------------------------------------------------
// Jensen-Shannon divergence with temperature

/// softmax(log_probs / beta); -inf entries map to zero probability.
inline std::vector<double> soften(std::span<const double> log_probs, double beta) {
    std::vector<double> out(log_probs.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : log_probs) {
        mx = std::max(mx, v / beta);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < log_probs.size(); ++i) {
        out[i] = std::exp(log_probs[i] / beta - mx);
        sum += out[i];
    }
    for (double& v : out) {
        v /= sum;
    }
    return out;
}

/// Base-2 JSD of two probability vectors, clamped to [0, 1].
inline double jsd_probs(std::span<const double> p, std::span<const double> q) {
    double total = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        double term = 0.0;
        if (p[i] > 0.0) {
            term += p[i] * std::log2(p[i] / m);
        }
        if (q[i] > 0.0) {
            term += q[i] * std::log2(q[i] / m);
        }
        total += 0.5 * term;
    }
    return std::clamp(total, 0.0, 1.0);
}

inline void check_beta(double beta) {
    if (!(beta >= 1.0) || !std::isfinite(beta)) {
        throw ContractError("beta must be finite and >= 1, got " + std::to_string(beta));
    }
}

/// Mean over output positions of JSD between the two temperature-softened
/// distributions.
inline double jsd_divergence(const lm::ScoredOutput& current, const lm::ScoredOutput& frozen, double beta) {
    check_beta(beta);
    if (current.length() != frozen.length()) {
        throw ContractError("jsd_divergence: length mismatch " + std::to_string(current.length()) + " vs " +
                            std::to_string(frozen.length()));
    }
    if (current.vocab_size() != frozen.vocab_size()) {
        throw ContractError("jsd_divergence: vocabulary size mismatch");
    }
    if (current.length() == 0) {
        throw ContractError("jsd_divergence: empty outputs");
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < current.length(); ++k) {
        const auto p = soften(current.log_probs.row(k), beta);
        const auto q = soften(frozen.log_probs.row(k), beta);
        sum += jsd_probs(p, q);
    }
    return sum / static_cast<double>(current.length());
}

/// d JSD(softmax(z/beta), Q) / d z for one position, where z are the current
/// model's logits (equivalently its log-probabilities) and Q is the softened
/// frozen distribution. Accumulates scale * gradient into dlogits.
inline void jsd_logit_gradient(std::span<const double> current_log_probs, std::span<const double> frozen_log_probs,
                               double beta, double scale, std::span<double> dlogits) {
    const auto p = soften(current_log_probs, beta);
    const auto q = soften(frozen_log_probs, beta);
    const double inv_ln2 = 1.0 / std::log(2.0);
    std::vector<double> g(p.size(), 0.0);
    double mean_g = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            g[i] = 0.5 * std::log(p[i] / (0.5 * (p[i] + q[i]))) * inv_ln2;
            mean_g += p[i] * g[i];
        }
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            dlogits[i] += scale * p[i] * (g[i] - mean_g) / beta;
        }
    }
}

// ---------------------------------------------------------------------------
// Report file

inline nlohmann::ordered_json to_json(const IGRecord& r) {
    return {{"instance_id", r.instance_id},
            {"info_complete", r.info_complete},
            {"info_masked", r.info_masked},
            {"gain", r.gain},
            {"beta", r.beta}};
}

inline IGRecord record_from_json(const nlohmann::json& j) {
    IGRecord r;
    r.instance_id = j.at("instance_id").get<std::string>();
    r.info_complete = j.at("info_complete").get<double>();
    r.info_masked = j.at("info_masked").get<double>();
    r.gain = j.at("gain").get<double>();
    r.beta = j.at("beta").get<double>();
    return r;
}

inline void write_ig_report(const std::string& path, const std::vector<IGRecord>& records) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write IG report '" + path + "'");
    }
    for (const auto& r : records) {
        out << to_json(r).dump() << '\n';
    }
}

inline std::vector<IGRecord> read_ig_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open IG report '" + path + "'");
    }
    std::vector<IGRecord> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (text::trim(line).empty()) {
            continue;
        }
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace kpig::ig
