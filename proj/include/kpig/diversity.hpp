#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/http_client.hpp"
#include "kpig/task_model.hpp"
#include "kpig/text.hpp"

namespace kpig::diversity {

enum class EvolutionStrategy { Concretizing, Reasoning, Constraint, Breadth };

inline constexpr std::array<EvolutionStrategy, 4> kAllStrategies = {
    EvolutionStrategy::Concretizing, EvolutionStrategy::Reasoning, EvolutionStrategy::Constraint,
    EvolutionStrategy::Breadth};

inline std::string to_string(EvolutionStrategy s) {
    switch (s) {
        case EvolutionStrategy::Concretizing: return "CONCRETIZING";
        case EvolutionStrategy::Reasoning: return "REASONING";
        case EvolutionStrategy::Constraint: return "CONSTRAINT";
        case EvolutionStrategy::Breadth: return "BREADTH";
    }
    return "?";
}

/// Extracts key parts and evolves instructions. Implementations must be
/// callable concurrently or be wrapped in SerializingRewriter.
class RewriterClient {
public:
    virtual ~RewriterClient() = default;

    virtual std::vector<std::string> extract(const std::string& instruction, const Instance* example) = 0;

    /// attempt distinguishes retries so deterministic clients can vary output.
    virtual KeyedInstruction evolve(const KeyedInstruction& seed, EvolutionStrategy strategy, const Instance* example,
                                    int attempt) = 0;
};

/// Serializes calls into a client that is not safe for concurrent use.
class SerializingRewriter final : public RewriterClient {
public:
    explicit SerializingRewriter(std::shared_ptr<RewriterClient> inner) : inner_(std::move(inner)) {}

    std::vector<std::string> extract(const std::string& instruction, const Instance* example) override {
        std::lock_guard lock(mutex_);
        return inner_->extract(instruction, example);
    }
    KeyedInstruction evolve(const KeyedInstruction& seed, EvolutionStrategy strategy, const Instance* example,
                            int attempt) override {
        std::lock_guard lock(mutex_);
        return inner_->evolve(seed, strategy, example, attempt);
    }

private:
    std::shared_ptr<RewriterClient> inner_;
    std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Prompt templates for the remote rewriter

namespace templates {

inline constexpr std::string_view kExtract =
    "What is the #key part# in the #instruction#?\n"
    "The #key part# refers to the consecutive span in the #instruction# that has guiding significance for the "
    "format, length, content, and rationality of the ground truth when bridging #input# to #output#.\n"
    "Please return key parts as a list.\n"
    "#instruction#:\n{instruction}\n"
    "#input#:\n{input}\n"
    "#output#:\n{output}";

inline constexpr std::string_view kDepthHead =
    "I want you act as an Instruction Creator.\n"
    "Your goal is to draw inspiration from the #Given Instruction# and #Key Part# to create a brand new "
    "instruction #Created Instruction#.\n"
    "The #Created Instruction# must be reasonable and must be understood and responded by humans.\n"
    "And this #Created Instruction# can guide the #Input# to give the #Output#.\n"
    "Your #Created Instruction# cannot omit the non-text parts such as the table and code in the #Given "
    "Instruction#.\n"
    "You should complicate the #Given Instruction# using the following method:\n";

inline constexpr std::string_view kConcretizingLine =
    "Please replaces general concepts in #Key Part# with more specific concepts.";
inline constexpr std::string_view kReasoningLine =
    "If #Key Part# can be organized into a few simple thinking processes, you can rewrite it to explicitly "
    "request multiple-step reasoning.";
inline constexpr std::string_view kConstraintLine = "Please add one more constraints/requirements into #Given Instruction#.";

inline constexpr std::string_view kDepthTail =
    "You should try your best not to make the #Created Instruction# become verbose, #Created Instruction# can "
    "only add 10 to 20 words into the #Given Instruction#.\n"
    "'#Given Instruction#', '#Created Instruction#', 'given instruction' and 'created instruction' are not "
    "allowed to appear in #Created Instruction#.\n"
    "#Given Instruction#:\n{instruction}\n"
    "#Key Part#:\n{key_parts}\n"
    "#Input#:\n{input}\n"
    "#Output#:\n{output}\n"
    "#Created Instruction#:";

inline constexpr std::string_view kBreadth =
    "I want you act as a Instruction Rewriter.\n"
    "Your goal is to draw inspiration from the #Given Instruction# and #Key Part# to rewrite a brand new "
    "instruction #Rewritten Instruction#.\n"
    "This #Rewritten Instruction# should belong to the same domain as the #Given Instruction# but be even more "
    "rare.\n"
    "And this #Rewritten Instruction# can guide the #Input# to give the #Output#.\n"
    "#Key Part# in the #Given Instruction# should be unchanged.\n"
    "The LENGTH and complexity of the #Rewritten Instruction# should be similar to that of the #Given "
    "Instruction#.\n"
    "The #Rewritten Instruction# must be reasonable and must be understood and responded by humans.\n"
    "'#Given Instruction#', '#Rewritten Instruction#', 'given instruction' and 'rewritten instruction' are not "
    "allowed to appear in #Rewritten Instruction#.\n"
    "#Given Instruction#:\n{instruction}\n"
    "#Key Part#:\n{key_parts}\n"
    "#Input#:\n{input}\n"
    "#Output#:\n{output}\n"
    "#Rewritten Instruction#:";

inline constexpr std::string_view kUnchecked = "☐";
inline constexpr std::string_view kChecked = "☑";

inline std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& slots) {
    std::string out(tmpl);
    for (const auto& [name, value] : slots) {
        const std::string key = "{" + name + "}";
        std::size_t pos = 0;
        while ((pos = out.find(key, pos)) != std::string::npos) {
            out.replace(pos, key.size(), value);
            pos += value.size();
        }
    }
    return out;
}

/// Depth template with exactly one strategy line checked.
inline std::string depth(EvolutionStrategy strategy, const std::map<std::string, std::string>& slots) {
    auto line = [strategy](EvolutionStrategy s, std::string_view body) {
        return std::string(s == strategy ? kChecked : kUnchecked) + std::string(body) + "\n";
    };
    std::string t(kDepthHead);
    t += line(EvolutionStrategy::Concretizing, kConcretizingLine);
    t += line(EvolutionStrategy::Reasoning, kReasoningLine);
    t += line(EvolutionStrategy::Constraint, kConstraintLine);
    t += kDepthTail;
    return fill(t, slots);
}

}  // namespace templates

/// Parses a rewriter's key-part payload: a JSON array of strings, or one
/// item per line (leading "-", "*" or "1." markers stripped).
inline std::vector<std::string> parse_key_part_list(const std::string& payload) {
    auto parsed = nlohmann::json::parse(payload, nullptr, false);
    if (!parsed.is_discarded()) {
        if (!parsed.is_array()) {
            throw ClientError("key-part payload is JSON but not a list");
        }
        std::vector<std::string> out;
        for (const auto& item : parsed) {
            if (!item.is_string()) {
                throw ClientError("key-part list contains a non-string entry");
            }
            out.push_back(item.get<std::string>());
        }
        return out;
    }
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= payload.size()) {
        std::size_t end = payload.find('\n', start);
        if (end == std::string::npos) {
            end = payload.size();
        }
        std::string line = text::trim(std::string_view(payload).substr(start, end - start));
        if (!line.empty()) {
            if (line[0] == '-' || line[0] == '*') {
                line = text::trim(line.substr(1));
            } else {
                std::size_t digits = 0;
                while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) {
                    ++digits;
                }
                if (digits > 0 && digits < line.size() && (line[digits] == '.' || line[digits] == ')')) {
                    line = text::trim(line.substr(digits + 1));
                }
            }
            if (!line.empty()) {
                out.push_back(line);
            }
        }
        start = end + 1;
    }
    if (out.empty() && !text::trim(payload).empty()) {
        throw ClientError("unparseable key-part payload");
    }
    return out;
}

/// Rewriter backed by a JSON transport speaking {template_id, slots, prompt} -> {text}.
class RemoteRewriter final : public RewriterClient {
public:
    explicit RemoteRewriter(net::Transport transport) : transport_(std::move(transport)) {}

    std::vector<std::string> extract(const std::string& instruction, const Instance* example) override {
        auto slots = base_slots(instruction, example);
        auto response = call("extract_key_parts", slots, templates::fill(templates::kExtract, slots));
        return parse_key_part_list(response);
    }

    KeyedInstruction evolve(const KeyedInstruction& seed, EvolutionStrategy strategy, const Instance* example,
                            int attempt) override {
        auto slots = base_slots(seed.text, example);
        slots["key_parts"] = nlohmann::json(seed.key_parts).dump();
        slots["strategy"] = to_string(strategy);
        slots["attempt"] = std::to_string(attempt);
        const bool breadth = strategy == EvolutionStrategy::Breadth;
        const std::string prompt =
            breadth ? templates::fill(templates::kBreadth, slots) : templates::depth(strategy, slots);
        KeyedInstruction out;
        out.text = text::trim(call(breadth ? "evolve_breadth" : "evolve_depth", slots, prompt));
        if (out.text.empty()) {
            throw ClientError("rewriter returned an empty instruction");
        }
        for (auto& kp : extract(out.text, example)) {
            out.key_parts.push_back(text::trim(kp));
        }
        return out;
    }

private:
    static std::map<std::string, std::string> base_slots(const std::string& instruction, const Instance* example) {
        std::map<std::string, std::string> slots;
        slots["instruction"] = instruction;
        slots["input"] = example && example->context ? *example->context : "";
        slots["output"] = example ? example->output : "";
        return slots;
    }

    std::string call(const std::string& template_id, const std::map<std::string, std::string>& slots,
                     const std::string& prompt) {
        nlohmann::json request{{"template_id", template_id}, {"slots", slots}, {"prompt", prompt}};
        nlohmann::json response = transport_(request);
        if (!response.is_object() || !response.contains("text") || !response["text"].is_string()) {
            throw ClientError("rewriter response lacks a string 'text' field");
        }
        return response["text"].get<std::string>();
    }

    net::Transport transport_;
};

/// Network-free rewriter. Each output is a pure function of (input,
/// strategy, seed, attempt).
class OfflineRewriter final : public RewriterClient {
public:
    explicit OfflineRewriter(std::uint64_t seed = 0) : seed_(seed) {}

    /// Sentences (or quoted-choice clauses) carrying directive verbs.
    std::vector<std::string> extract(const std::string& instruction, const Instance* /*example*/) override {
        static constexpr std::array<std::string_view, 14> kDirectives = {
            "respond", "answer", "list", "separate", "return", "output", "identify",
            "extract", "copy", "write", "classify", "choose", "give", "use"};
        std::vector<std::string> out;
        for (const auto& sentence : sentences(instruction)) {
            const auto words = text::normalize_text(sentence);
            const bool directive = std::any_of(words.begin(), words.end(), [](const std::string& w) {
                return std::find(kDirectives.begin(), kDirectives.end(), w) != kDirectives.end();
            });
            if (directive || sentence.find('"') != std::string::npos) {
                std::string s = text::trim(sentence);
                if (!s.empty() && s.back() == '.') {
                    s.pop_back();
                }
                out.push_back(s);
            }
        }
        return out;
    }

    KeyedInstruction evolve(const KeyedInstruction& seed, EvolutionStrategy strategy, const Instance* /*example*/,
                            int attempt) override {
        Rng rng = derive_rng(seed_, "offline-rewriter:" + to_string(strategy) + ":" + seed.text,
                             static_cast<std::uint64_t>(attempt));
        switch (strategy) {
            case EvolutionStrategy::Breadth: return breadth(seed, rng);
            case EvolutionStrategy::Concretizing: return concretize(seed, rng);
            case EvolutionStrategy::Reasoning: return reason(seed, rng);
            case EvolutionStrategy::Constraint: return constrain(seed, rng);
        }
        throw ContractError("unknown strategy");
    }

private:
    static std::vector<std::string> sentences(const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (std::size_t i = 0; i < s.size(); ++i) {
            cur += s[i];
            const bool end = (s[i] == '.' || s[i] == '?' || s[i] == '!') && (i + 1 == s.size() || s[i + 1] == ' ');
            if (end) {
                out.push_back(text::trim(cur));
                cur.clear();
            }
        }
        if (!text::trim(cur).empty()) {
            out.push_back(text::trim(cur));
        }
        return out;
    }

    static const std::map<std::string, std::vector<std::string>>& synonyms() {
        static const std::map<std::string, std::vector<std::string>> table = {
            {"task", {"assignment", "activity", "exercise"}},
            {"given", {"provided", "supplied"}},
            {"read", {"examine", "review", "study"}},
            {"text", {"passage", "snippet"}},
            {"presented", {"shown", "provided"}},
            {"carefully", {"attentively", "closely"}},
            {"following", {"next", "subsequent"}},
            {"determine", {"decide", "establish"}},
            {"please", {"kindly"}},
            {"each", {"every"}},
            {"sentence", {"statement", "line"}},
            {"short", {"brief", "concise"}},
            {"look", {"glance"}},
            {"consider", {"examine", "inspect"}},
            {"this", {"the"}},
            {"in", {"within"}},
            {"will", {"shall"}},
            {"see", {"observe", "notice"}},
            {"job", {"duty", "role"}},
            {"here", {"below"}},
        };
        return table;
    }

    /// Marks which characters belong to a key-part occurrence.
    static std::vector<bool> protected_chars(const KeyedInstruction& k) {
        std::vector<bool> mask(k.text.size(), false);
        for (const auto& kp : k.key_parts) {
            if (kp.empty()) {
                continue;
            }
            std::size_t pos = 0;
            while ((pos = k.text.find(kp, pos)) != std::string::npos) {
                std::fill(mask.begin() + static_cast<std::ptrdiff_t>(pos),
                          mask.begin() + static_cast<std::ptrdiff_t>(pos + kp.size()), true);
                pos += kp.size();
            }
        }
        return mask;
    }

    static KeyedInstruction breadth(const KeyedInstruction& seed, Rng& rng) {
        const auto guard = protected_chars(seed);
        std::string out;
        std::size_t i = 0;
        bool changed = false;
        const std::string& s = seed.text;
        while (i < s.size()) {
            if (!text::is_alnum(s[i])) {
                out += s[i++];
                continue;
            }
            std::size_t j = i;
            while (j < s.size() && text::is_alnum(s[j])) {
                ++j;
            }
            std::string word = s.substr(i, j - i);
            const bool is_protected = std::any_of(guard.begin() + static_cast<std::ptrdiff_t>(i),
                                                  guard.begin() + static_cast<std::ptrdiff_t>(j),
                                                  [](bool b) { return b; });
            const std::string lower = text::to_lower(word);
            auto it = synonyms().find(lower);
            if (!is_protected && it != synonyms().end() && uniform_real(rng) < 0.6) {
                std::string repl = it->second[uniform_index(rng, it->second.size())];
                if (std::isupper(static_cast<unsigned char>(word[0]))) {
                    repl[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(repl[0])));
                }
                word = repl;
                changed = true;
            }
            out += word;
            i = j;
        }
        // Swap two adjacent sentences that hold no key part.
        auto parts = sentences(out);
        std::vector<std::size_t> free_idx;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const bool has_key = std::any_of(seed.key_parts.begin(), seed.key_parts.end(), [&](const std::string& kp) {
                return !kp.empty() && parts[p].find(kp) != std::string::npos;
            });
            if (!has_key) {
                free_idx.push_back(p);
            }
        }
        std::vector<std::size_t> adjacent;
        for (std::size_t f = 0; f + 1 < free_idx.size(); ++f) {
            if (free_idx[f + 1] == free_idx[f] + 1) {
                adjacent.push_back(free_idx[f]);
            }
        }
        if (!adjacent.empty() && uniform_real(rng) < 0.5) {
            const std::size_t a = adjacent[uniform_index(rng, adjacent.size())];
            std::swap(parts[a], parts[a + 1]);
            out = text::join(parts);
            changed = true;
        }
        if (!changed) {
            static constexpr std::array<std::string_view, 3> kOpeners = {"Here is the task.", "Read on.",
                                                                          "Note the following."};
            out = std::string(kOpeners[uniform_index(rng, kOpeners.size())]) + " " + s;
        }
        return KeyedInstruction{out, seed.key_parts};
    }

    static KeyedInstruction concretize(const KeyedInstruction& seed, Rng& rng) {
        static const std::map<std::string, std::vector<std::string>> concepts = {
            {"words", {"content words", "nouns"}},
            {"items", {"listed entities", "named items"}},
            {"text", {"short passage", "input statement"}},
            {"speaker", {"person who is talking", "dialogue participant"}},
            {"sentence", {"single statement", "input sentence"}},
            {"answer", {"final label", "single answer"}},
            {"list", {"bracketed list", "comma separated list"}},
            {"number", {"integer count", "digit"}},
            {"label", {"category name", "class label"}},
            {"input", {"given context", "provided input"}},
        };
        KeyedInstruction out = seed;
        std::string clause;
        for (const auto& kp : seed.key_parts) {
            for (const auto& w : text::normalize_text(kp)) {
                auto it = concepts.find(w);
                if (it != concepts.end()) {
                    const auto& spec = it->second[uniform_index(rng, it->second.size())];
                    clause = "Here the " + w + " means the " + spec + ".";
                    break;
                }
            }
            if (!clause.empty()) {
                break;
            }
        }
        if (clause.empty()) {
            clause = "Be specific and precise in the response.";
        }
        out.text = text::trim(seed.text) + " " + clause;
        std::string kp = clause;
        kp.pop_back();
        out.key_parts.push_back(kp);
        return out;
    }

    static KeyedInstruction reason(const KeyedInstruction& seed, Rng& rng) {
        if (seed.text.rfind("First, ", 0) == 0) {
            return seed;  // already scaffolded; rejected as a no-op rewrite
        }
        static constexpr std::array<std::string_view, 3> kOpeners = {"read the input carefully",
                                                                      "look at the input closely",
                                                                      "study the input"};
        const std::string first(kOpeners[uniform_index(rng, kOpeners.size())]);
        std::string middle = "recall the goal of the task";
        if (!seed.key_parts.empty()) {
            middle = "keep in mind the key requirement";
        }
        const std::string scaffold = "First, " + first + ", then " + middle + ", finally give the answer.";
        KeyedInstruction out = seed;
        out.text = scaffold + " " + text::trim(seed.text);
        return out;
    }

    static KeyedInstruction constrain(const KeyedInstruction& seed, Rng& rng) {
        static constexpr std::array<std::string_view, 6> kConstraints = {
            "Do not add any explanation.",       "Keep the response short.",
            "Do not repeat the instruction.",    "Give only the final answer.",
            "Avoid any extra words.",            "Do not include a preamble."};
        const std::string c(kConstraints[uniform_index(rng, kConstraints.size())]);
        KeyedInstruction out = seed;
        out.text = text::trim(seed.text) + " " + c;
        std::string kp = c;
        kp.pop_back();
        out.key_parts.push_back(kp);
        return out;
    }

    std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Operations

struct KeyPart {
    std::string text;
    bool resolvable = false;
};

/// Asks the client for key parts. Entries are trimmed; those not found
/// verbatim in the instruction stay in the list but are flagged unresolvable.
inline std::vector<KeyPart> extract_key_parts(const std::string& instruction, RewriterClient& client,
                                              const Instance* example = nullptr) {
    if (instruction.empty()) {
        throw ContractError("extract_key_parts: empty instruction");
    }
    std::vector<KeyPart> out;
    for (const auto& raw : client.extract(instruction, example)) {
        KeyPart kp;
        kp.text = text::trim(raw);
        kp.resolvable = !kp.text.empty() && instruction.find(kp.text) != std::string::npos;
        if (!kp.resolvable) {
            logger()->warn("key part '{}' does not occur in the instruction; it will not be masked", kp.text);
        }
        out.push_back(std::move(kp));
    }
    return out;
}

inline std::size_t word_length(const std::string& s) {
    return text::split_whitespace(s).size();
}

/// Empty string when the result honours the strategy's contract, otherwise why not.
inline std::string postcondition_failure(const KeyedInstruction& seed, EvolutionStrategy strategy,
                                         const KeyedInstruction& result) {
    if (result.text.empty()) {
        return "empty result";
    }
    if (result.text == seed.text) {
        return "instruction left unchanged";
    }
    if (strategy == EvolutionStrategy::Breadth) {
        for (const auto& kp : seed.key_parts) {
            if (result.text.find(kp) == std::string::npos) {
                return "key part '" + kp + "' was not preserved";
            }
        }
        const double a = static_cast<double>(word_length(seed.text));
        const double b = static_cast<double>(word_length(result.text));
        if (b < 0.75 * a || b > 1.25 * a) {
            return "length " + std::to_string(word_length(result.text)) + " is not within 25% of " +
                   std::to_string(word_length(seed.text));
        }
    }
    if (strategy == EvolutionStrategy::Constraint && word_length(result.text) <= word_length(seed.text)) {
        return "constraint did not lengthen the instruction";
    }
    return {};
}

/// Evolves seed with one strategy, retrying up to retry_budget times when the
/// strategy's contract is violated.
inline KeyedInstruction evolve_instruction(const KeyedInstruction& seed, EvolutionStrategy strategy,
                                           RewriterClient& client, const Instance* example = nullptr,
                                           int retry_budget = 3) {
    if (seed.text.empty()) {
        throw ContractError("evolve_instruction: seed has no text");
    }
    if (strategy == EvolutionStrategy::Breadth && seed.key_parts.empty()) {
        throw ContractError("evolve_instruction: BREADTH needs key parts");
    }
    std::string last_failure;
    for (int attempt = 0; attempt <= retry_budget; ++attempt) {
        KeyedInstruction result = client.evolve(seed, strategy, example, attempt);
        for (auto& kp : result.key_parts) {
            kp = text::trim(kp);
        }
        last_failure = postcondition_failure(seed, strategy, result);
        if (last_failure.empty()) {
            return result;
        }
        logger()->debug("{} attempt {} rejected: {}", to_string(strategy), attempt, last_failure);
    }
    throw Error("evolve_instruction: " + to_string(strategy) + " failed after retries: " + last_failure);
}

/// Pool of instruction variants for one task. entries[0] is the seed.
struct InstructionPool {
    std::vector<KeyedInstruction> entries;
    std::size_t target_size = 31;
};

/// Grows a pool from the task's seed instruction: each round evolves a
/// uniformly chosen member with a uniformly chosen strategy. Failed rounds are
/// logged and skipped.
inline InstructionPool build_instruction_pool(const Task& task, RewriterClient& client, int rounds,
                                              std::uint64_t rng_seed, std::size_t target_size = 31) {
    if (task.instruction_pool.empty()) {
        throw ContractError("build_instruction_pool: task '" + task.task_id + "' has no seed instruction");
    }
    const Instance* example = task.train_instances.empty() ? nullptr : &task.train_instances.front();
    InstructionPool pool;
    pool.target_size = target_size;
    KeyedInstruction seed = task.seed_instruction();
    if (seed.key_parts.empty()) {
        for (const auto& kp : extract_key_parts(seed.text, client, example)) {
            if (kp.resolvable) {
                seed.key_parts.push_back(kp.text);
            }
        }
    }
    pool.entries.push_back(seed);
    Rng rng = derive_rng(rng_seed, "instruction-pool:" + task.task_id);
    for (int round = 0; round < rounds && pool.entries.size() < target_size; ++round) {
        const KeyedInstruction parent = pool.entries[uniform_index(rng, pool.entries.size())];
        const EvolutionStrategy strategy = kAllStrategies[uniform_index(rng, kAllStrategies.size())];
        try {
            pool.entries.push_back(evolve_instruction(parent, strategy, client, example));
        } catch (const Error& e) {
            logger()->warn("task '{}' evolution round {} skipped: {}", task.task_id, round, e.what());
        }
    }
    return pool;
}

/// Uniform draw from the pool.
inline const KeyedInstruction& sample_instruction(const InstructionPool& pool, Rng& rng) {
    if (pool.entries.empty()) {
        throw ContractError("sample_instruction: empty pool");
    }
    return pool.entries[uniform_index(rng, pool.entries.size())];
}

inline const KeyedInstruction& sample_instruction(const std::vector<KeyedInstruction>& entries, Rng& rng) {
    if (entries.empty()) {
        throw ContractError("sample_instruction: empty pool");
    }
    return entries[uniform_index(rng, entries.size())];
}

/// Copy of task with its pool replaced.
inline Task with_pool(const Task& task, const InstructionPool& pool) {
    Task out = task;
    out.instruction_pool = pool.entries;
    return out;
}

}  // namespace kpig::diversity
