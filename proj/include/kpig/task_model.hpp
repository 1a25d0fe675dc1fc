#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/format_rules.hpp"
#include "kpig/text.hpp"

namespace kpig {

/// One (instruction, optional context, expected output) triple.
struct Instance {
    std::string instruction_text;
    std::optional<std::string> context;
    std::string output;
    std::string task_id;
    std::string instance_id;

    bool operator==(const Instance&) const = default;
};

/// An instruction plus the spans in it that carry task-aware guidance.
struct KeyedInstruction {
    std::string text;
    std::vector<std::string> key_parts;

    bool operator==(const KeyedInstruction&) const = default;
};

/// A key part can be masked only if it occurs verbatim in the instruction.
inline bool is_resolvable(const KeyedInstruction& keyed, const std::string& key_part) {
    return !key_part.empty() && keyed.text.find(key_part) != std::string::npos;
}

enum class MetricKind { F1, ACC, ROUGE, BLEU, MATCH, JUDGE };

inline std::string to_string(MetricKind kind) {
    switch (kind) {
        case MetricKind::F1: return "F1";
        case MetricKind::ACC: return "ACC";
        case MetricKind::ROUGE: return "ROUGE";
        case MetricKind::BLEU: return "BLEU";
        case MetricKind::MATCH: return "MATCH";
        case MetricKind::JUDGE: return "JUDGE";
    }
    return "?";
}

inline MetricKind metric_kind_from_string(const std::string& s) {
    static const std::map<std::string, MetricKind> kinds = {
        {"F1", MetricKind::F1},       {"ACC", MetricKind::ACC},     {"ROUGE", MetricKind::ROUGE},
        {"BLEU", MetricKind::BLEU},   {"MATCH", MetricKind::MATCH}, {"JUDGE", MetricKind::JUDGE}};
    auto it = kinds.find(s);
    if (it == kinds.end()) {
        throw ParseError("unknown metric_kind '" + s + "'");
    }
    return it->second;
}

/// Allowed output range: either an explicit choice list or "in-context".
struct ScopeConstraint {
    std::vector<std::string> choices;
    bool in_context = false;
    bool case_sensitive = true;

    bool operator==(const ScopeConstraint&) const = default;
};

/// Wordy-rate threshold. automatic means "2x the longest normalized gold in train".
struct WordyThreshold {
    bool automatic = false;
    int tokens = 0;

    bool operator==(const WordyThreshold&) const = default;
};

struct MetricAnnotation {
    MetricKind metric_kind = MetricKind::ROUGE;
    std::optional<ScopeConstraint> scope;
    std::vector<FormatRule> format_rules;
    std::optional<WordyThreshold> wordy_threshold;

    bool operator==(const MetricAnnotation&) const = default;

    bool is_classification() const {
        return metric_kind == MetricKind::ACC && scope.has_value() && !scope->choices.empty();
    }

    /// Separator used to split list-like outputs into items.
    std::string item_delimiter() const {
        for (const auto& rule : format_rules) {
            if (rule.name == "delimiter") {
                return format::string_param(rule, "sep");
            }
        }
        return ",";
    }
};

enum class Split { Seen, Heldout };

struct Task {
    std::string task_id;
    std::string category;
    Split split = Split::Seen;
    std::vector<KeyedInstruction> instruction_pool;
    std::vector<Instance> train_instances;
    std::vector<Instance> test_instances;
    std::vector<Instance> demonstrations;
    MetricAnnotation annotation;

    const KeyedInstruction& seed_instruction() const { return instruction_pool.front(); }

    bool operator==(const Task&) const = default;
};

enum class StreamMode { ST, SC };

inline std::string to_string(StreamMode mode) {
    return mode == StreamMode::ST ? "ST" : "SC";
}

/// Ordered time steps of task ids plus the seen/held-out split.
struct TaskStream {
    std::vector<std::vector<std::string>> steps;
    StreamMode mode = StreamMode::ST;
    std::set<std::string> seen_ids;
    std::set<std::string> heldout_ids;
};

// ---------------------------------------------------------------------------
// Task file (one JSON record per line)

namespace detail {

inline std::optional<std::string> optional_string(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return std::nullopt;
    }
    return it->get<std::string>();
}

inline MetricAnnotation parse_annotation(const nlohmann::json& j) {
    MetricAnnotation a;
    a.metric_kind = metric_kind_from_string(j.at("metric_kind").get<std::string>());
    if (auto it = j.find("scope"); it != j.end() && !it->is_null()) {
        ScopeConstraint scope;
        if (auto ch = it->find("choices"); ch != it->end()) {
            if (ch->is_string()) {
                if (ch->get<std::string>() != "in-context") {
                    throw ParseError("scope.choices must be a list or \"in-context\"");
                }
                scope.in_context = true;
            } else {
                scope.choices = ch->get<std::vector<std::string>>();
            }
        }
        if (auto ic = it->find("in_context"); ic != it->end()) {
            scope.in_context = ic->get<bool>();
        }
        scope.case_sensitive = it->value("case_sensitive", true);
        if (scope.choices.empty() && !scope.in_context) {
            throw ParseError("scope needs choices or in-context");
        }
        a.scope = scope;
    }
    if (auto it = j.find("format_rules"); it != j.end()) {
        for (const auto& r : *it) {
            FormatRule rule;
            rule.name = r.at("name").get<std::string>();
            if (auto p = r.find("params"); p != r.end() && !p->is_null()) {
                rule.params = nlohmann::ordered_json::parse(p->dump());
            }
            format::validate(rule);
            if (format::is_stub(rule.name)) {
                logger()->warn("format rule '{}' is a stub and always passes", rule.name);
            }
            a.format_rules.push_back(std::move(rule));
        }
    }
    if (auto it = j.find("wordy_threshold"); it != j.end() && !it->is_null()) {
        WordyThreshold w;
        if (it->is_string()) {
            if (it->get<std::string>() != "auto") {
                throw ParseError("wordy_threshold must be a positive integer or \"auto\"");
            }
            w.automatic = true;
        } else {
            w.tokens = it->get<int>();
            if (w.tokens <= 0) {
                throw ParseError("wordy_threshold must be positive");
            }
        }
        a.wordy_threshold = w;
    }
    return a;
}

inline nlohmann::ordered_json annotation_to_json(const MetricAnnotation& a) {
    nlohmann::ordered_json j;
    j["metric_kind"] = to_string(a.metric_kind);
    if (a.scope) {
        nlohmann::ordered_json s;
        if (a.scope->in_context) {
            s["choices"] = "in-context";
        } else {
            s["choices"] = a.scope->choices;
        }
        s["case_sensitive"] = a.scope->case_sensitive;
        j["scope"] = s;
    } else {
        j["scope"] = nullptr;
    }
    j["format_rules"] = nlohmann::ordered_json::array();
    for (const auto& r : a.format_rules) {
        j["format_rules"].push_back({{"name", r.name}, {"params", r.params}});
    }
    if (!a.wordy_threshold) {
        j["wordy_threshold"] = nullptr;
    } else if (a.wordy_threshold->automatic) {
        j["wordy_threshold"] = "auto";
    } else {
        j["wordy_threshold"] = a.wordy_threshold->tokens;
    }
    return j;
}

inline std::vector<Instance> parse_instances(const nlohmann::json& arr, const std::string& task_id,
                                             const std::string& instruction) {
    std::vector<Instance> out;
    for (const auto& r : arr) {
        Instance inst;
        inst.instance_id = r.at("instance_id").get<std::string>();
        inst.context = optional_string(r, "context");
        inst.output = r.at("output").get<std::string>();
        inst.task_id = task_id;
        inst.instruction_text = instruction;
        if (inst.output.empty()) {
            throw ParseError("instance '" + inst.instance_id + "' has empty output");
        }
        out.push_back(std::move(inst));
    }
    return out;
}

inline nlohmann::ordered_json instances_to_json(const std::vector<Instance>& items) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& inst : items) {
        nlohmann::ordered_json r;
        r["instance_id"] = inst.instance_id;
        r["context"] = inst.context ? nlohmann::ordered_json(*inst.context) : nlohmann::ordered_json(nullptr);
        r["output"] = inst.output;
        arr.push_back(r);
    }
    return arr;
}

}  // namespace detail

/// Parses and validates one task record.
inline Task task_from_json(const nlohmann::json& j) {
    Task t;
    t.task_id = j.at("task_id").get<std::string>();
    if (t.task_id.empty()) {
        throw ParseError("empty task_id");
    }
    t.category = j.value("category", std::string{});
    const std::string split = j.at("split").get<std::string>();
    if (split == "seen") {
        t.split = Split::Seen;
    } else if (split == "heldout") {
        t.split = Split::Heldout;
    } else {
        throw ParseError("split must be \"seen\" or \"heldout\", got '" + split + "'");
    }
    for (const auto& e : j.at("instruction_pool")) {
        KeyedInstruction k;
        k.text = e.at("text").get<std::string>();
        if (auto kp = e.find("key_parts"); kp != e.end()) {
            k.key_parts = kp->get<std::vector<std::string>>();
        }
        if (k.text.empty()) {
            throw ParseError("task '" + t.task_id + "' has an empty instruction");
        }
        t.instruction_pool.push_back(std::move(k));
    }
    if (t.instruction_pool.empty()) {
        throw ParseError("task '" + t.task_id + "' has an empty instruction_pool");
    }
    const std::string& seed = t.instruction_pool.front().text;
    t.train_instances = detail::parse_instances(j.at("train"), t.task_id, seed);
    t.test_instances = detail::parse_instances(j.at("test"), t.task_id, seed);
    if (auto d = j.find("demonstrations"); d != j.end()) {
        t.demonstrations = detail::parse_instances(*d, t.task_id, seed);
    }
    t.annotation = detail::parse_annotation(j.at("annotation"));

    std::set<std::string> train_ids;
    for (const auto& inst : t.train_instances) {
        if (!train_ids.insert(inst.instance_id).second) {
            throw ParseError("task '" + t.task_id + "' repeats train instance '" + inst.instance_id + "'");
        }
    }
    std::set<std::string> test_ids;
    for (const auto& inst : t.test_instances) {
        if (train_ids.count(inst.instance_id) != 0) {
            throw ParseError("task '" + t.task_id + "' has instance '" + inst.instance_id +
                             "' in both train and test");
        }
        if (!test_ids.insert(inst.instance_id).second) {
            throw ParseError("task '" + t.task_id + "' repeats test instance '" + inst.instance_id + "'");
        }
    }
    return t;
}

inline nlohmann::ordered_json task_to_json(const Task& t) {
    nlohmann::ordered_json j;
    j["task_id"] = t.task_id;
    j["category"] = t.category;
    j["split"] = t.split == Split::Seen ? "seen" : "heldout";
    j["instruction_pool"] = nlohmann::ordered_json::array();
    for (const auto& k : t.instruction_pool) {
        j["instruction_pool"].push_back({{"text", k.text}, {"key_parts", k.key_parts}});
    }
    j["train"] = detail::instances_to_json(t.train_instances);
    j["test"] = detail::instances_to_json(t.test_instances);
    j["demonstrations"] = detail::instances_to_json(t.demonstrations);
    j["annotation"] = detail::annotation_to_json(t.annotation);
    return j;
}

/// Loads a line-delimited task file. Errors carry the 1-based line number.
inline std::vector<Task> load_task_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open task file '" + path + "'");
    }
    std::vector<Task> tasks;
    std::set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (text::trim(line).empty()) {
            continue;
        }
        Task task;
        try {
            task = task_from_json(nlohmann::json::parse(line));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        } catch (const ParseError& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (!ids.insert(task.task_id).second) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": duplicate task_id '" + task.task_id + "'");
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

inline void write_task_file(const std::string& path, const std::vector<Task>& tasks) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write task file '" + path + "'");
    }
    for (const auto& t : tasks) {
        out << task_to_json(t).dump() << '\n';
    }
}

inline const Task& find_task(const std::vector<Task>& tasks, const std::string& id) {
    for (const auto& t : tasks) {
        if (t.task_id == id) {
            return t;
        }
    }
    throw ContractError("unknown task_id '" + id + "'");
}

// ---------------------------------------------------------------------------
// Streams

/// Builds an ST or SC stream over the non-held-out tasks. Step order is a
/// deterministic shuffle under order_seed.
inline TaskStream build_stream(const std::vector<Task>& tasks, StreamMode mode,
                               const std::set<std::string>& heldout_ids, std::uint64_t order_seed) {
    std::set<std::string> all_ids;
    for (const auto& t : tasks) {
        all_ids.insert(t.task_id);
    }
    for (const auto& id : heldout_ids) {
        if (all_ids.count(id) == 0) {
            throw ContractError("held-out id '" + id + "' is not a loaded task");
        }
    }
    TaskStream stream;
    stream.mode = mode;
    stream.heldout_ids = heldout_ids;
    for (const auto& id : all_ids) {
        if (heldout_ids.count(id) == 0) {
            stream.seen_ids.insert(id);
        }
    }
    Rng rng = derive_rng(order_seed, "stream-order");
    if (mode == StreamMode::ST) {
        for (const auto& id : stream.seen_ids) {
            stream.steps.push_back({id});
        }
    } else {
        std::map<std::string, std::vector<std::string>> by_category;
        for (const auto& t : tasks) {
            if (stream.seen_ids.count(t.task_id) == 0) {
                continue;
            }
            if (t.category.empty()) {
                throw ContractError("SC stream requested but task '" + t.task_id + "' has no category");
            }
            by_category[t.category].push_back(t.task_id);
        }
        for (auto& [cat, ids] : by_category) {
            std::sort(ids.begin(), ids.end());
            stream.steps.push_back(ids);
        }
    }
    shuffle(stream.steps, rng);
    return stream;
}

/// Held-out ids as recorded by each task's split field.
inline std::set<std::string> heldout_ids_of(const std::vector<Task>& tasks) {
    std::set<std::string> ids;
    for (const auto& t : tasks) {
        if (t.split == Split::Heldout) {
            ids.insert(t.task_id);
        }
    }
    return ids;
}

// ---------------------------------------------------------------------------
// Test subset sampling

namespace detail {

/// Per-label bounds [floor, ceil] of k times the label's pool share.
inline std::map<std::string, std::pair<std::size_t, std::size_t>> label_quotas(
    const std::map<std::string, std::size_t>& histogram, std::size_t pool, std::size_t k) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> q;
    for (const auto& [label, n] : histogram) {
        const double share = static_cast<double>(k) * static_cast<double>(n) / static_cast<double>(pool);
        q[label] = {static_cast<std::size_t>(std::floor(share + 1e-12)),
                    static_cast<std::size_t>(std::ceil(share - 1e-12))};
    }
    return q;
}

}  // namespace detail

/// Picks min(k, |test|) instances greedily minimizing Self-BLEU of the chosen
/// set, subject (for classification tasks) to each label's count staying
/// within one instance of its proportional share. Ties go to the lowest
/// instance_id. rng_seed only matters for large pools, where each greedy round
/// scores a seeded random sample of candidates.
inline std::vector<Instance> sample_test_subset(const Task& task, std::size_t k, std::uint64_t rng_seed,
                                                std::size_t candidates_per_round = 64) {
    if (k == 0) {
        throw ContractError("sample_test_subset: k must be >= 1");
    }
    if (task.test_instances.empty()) {
        throw ContractError("sample_test_subset: task '" + task.task_id + "' has an empty test pool");
    }
    std::vector<Instance> pool = task.test_instances;
    std::sort(pool.begin(), pool.end(),
              [](const Instance& a, const Instance& b) { return a.instance_id < b.instance_id; });
    if (k >= pool.size()) {
        return pool;
    }
    const bool use_labels = task.annotation.is_classification();
    std::vector<std::string> labels(pool.size());
    std::vector<std::vector<std::string>> tokens(pool.size());
    std::map<std::string, std::size_t> histogram;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        tokens[i] = text::normalize_text(pool[i].output);
        if (use_labels) {
            labels[i] = text::join(tokens[i]);
            ++histogram[labels[i]];
        }
    }
    const auto quotas = detail::label_quotas(histogram, pool.size(), k);
    std::map<std::string, std::size_t> counts;

    auto feasible = [&](std::size_t idx, std::size_t chosen_size) {
        if (!use_labels) {
            return true;
        }
        const auto& label = labels[idx];
        if (counts[label] + 1 > quotas.at(label).second) {
            return false;
        }
        std::size_t still_needed = 0;
        for (const auto& [l, q] : quotas) {
            const std::size_t have = counts[l] + (l == label ? 1 : 0);
            if (have < q.first) {
                still_needed += q.first - have;
            }
        }
        return still_needed <= k - (chosen_size + 1);
    };

    Rng rng = derive_rng(rng_seed, "test-subset");
    std::vector<bool> taken(pool.size(), false);
    std::vector<std::size_t> chosen;
    std::vector<std::vector<std::string>> chosen_tokens;
    while (chosen.size() < k) {
        std::vector<std::size_t> candidates;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            if (!taken[i] && feasible(i, chosen.size())) {
                candidates.push_back(i);
            }
        }
        if (candidates.empty()) {
            // label bounds unsatisfiable; fall back to any remaining instance
            for (std::size_t i = 0; i < pool.size(); ++i) {
                if (!taken[i]) {
                    candidates.push_back(i);
                }
            }
        }
        if (candidates.size() > candidates_per_round) {
            shuffle(candidates, rng);
            candidates.resize(candidates_per_round);
            std::sort(candidates.begin(), candidates.end());
        }
        std::size_t best = candidates.front();
        double best_score = 0.0;
        bool have_best = false;
        for (std::size_t c : candidates) {
            chosen_tokens.push_back(tokens[c]);
            const double score = text::self_bleu(chosen_tokens);
            chosen_tokens.pop_back();
            if (!have_best || score < best_score) {
                best = c;
                best_score = score;
                have_best = true;
            }
        }
        taken[best] = true;
        chosen.push_back(best);
        chosen_tokens.push_back(tokens[best]);
        if (use_labels) {
            ++counts[labels[best]];
        }
    }
    std::sort(chosen.begin(), chosen.end());
    std::vector<Instance> out;
    out.reserve(chosen.size());
    for (std::size_t i : chosen) {
        out.push_back(pool[i]);
    }
    return out;
}

}  // namespace kpig
