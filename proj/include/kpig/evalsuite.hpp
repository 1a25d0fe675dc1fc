#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/format_rules.hpp"
#include "kpig/http_client.hpp"
#include "kpig/ig.hpp"
#include "kpig/lm/model.hpp"
#include "kpig/lm/prompt.hpp"
#include "kpig/task_model.hpp"
#include "kpig/text.hpp"

namespace kpig::eval {

using text::normalize_text;

// ---------------------------------------------------------------------------
// Judge

class JudgeClient {
public:
    virtual ~JudgeClient() = default;
    virtual std::string kind() const = 0;
    /// 1 when the prediction is an acceptable response, else 0.
    virtual int judge(const std::string& instruction, const std::optional<std::string>& context,
                      const std::string& prediction, const std::vector<std::string>& golds) = 0;
};

/// Accepts a prediction whose normalized form contains any normalized gold.
class ContainmentJudge final : public JudgeClient {
public:
    std::string kind() const override { return "containment"; }
    int judge(const std::string&, const std::optional<std::string>&, const std::string& prediction,
              const std::vector<std::string>& golds) override {
        const std::string p = " " + text::normalized_string(prediction) + " ";
        for (const auto& g : golds) {
            const std::string ng = text::normalized_string(g);
            if (ng.empty() ? text::trim(p).empty() : p.find(" " + ng + " ") != std::string::npos) {
                return 1;
            }
        }
        return 0;
    }
};

/// Judge over the shared JSON transport: {template_id: "judge", slots} -> {text: "0"|"1"}.
class RemoteJudge final : public JudgeClient {
public:
    explicit RemoteJudge(net::Transport transport) : transport_(std::move(transport)) {}
    std::string kind() const override { return "remote"; }
    int judge(const std::string& instruction, const std::optional<std::string>& context,
              const std::string& prediction, const std::vector<std::string>& golds) override {
        nlohmann::json request{{"template_id", "judge"},
                               {"slots",
                                {{"instruction", instruction},
                                 {"input", context.value_or("")},
                                 {"prediction", prediction},
                                 {"references", golds}}}};
        auto response = transport_(request);
        if (!response.is_object() || !response.contains("text") || !response["text"].is_string()) {
            throw ClientError("judge response lacks a string 'text' field");
        }
        const std::string verdict = text::trim(response["text"].get<std::string>());
        if (verdict == "1") {
            return 1;
        }
        if (verdict == "0") {
            return 0;
        }
        throw ClientError("judge verdict '" + verdict + "' is not 0 or 1");
    }

private:
    net::Transport transport_;
};

// ---------------------------------------------------------------------------
// Metrics

namespace detail {

/// Splits a list-like output into normalized items: surrounding brackets are
/// dropped, then the text is cut on the delimiter.
inline std::vector<std::string> items_of(const std::string& s, const std::string& delimiter) {
    std::string body = text::trim(s);
    while (body.size() >= 2 && ((body.front() == '[' && body.back() == ']') || (body.front() == '{' && body.back() == '}'))) {
        body = text::trim(std::string_view(body).substr(1, body.size() - 2));
    }
    std::vector<std::string> out;
    for (const auto& piece : text::split_on(body, delimiter)) {
        std::string n = text::normalized_string(piece);
        if (!n.empty()) {
            out.push_back(std::move(n));
        }
    }
    return out;
}

inline double f1_from_counts(double overlap, double predicted, double gold) {
    if (predicted == 0.0 && gold == 0.0) {
        return 1.0;
    }
    if (overlap == 0.0) {
        return 0.0;
    }
    const double p = overlap / predicted;
    const double r = overlap / gold;
    return 2.0 * p * r / (p + r);
}

inline double set_f1(const std::vector<std::string>& pred, const std::vector<std::string>& gold) {
    const std::set<std::string> a(pred.begin(), pred.end());
    const std::set<std::string> b(gold.begin(), gold.end());
    double overlap = 0.0;
    for (const auto& x : a) {
        overlap += static_cast<double>(b.count(x));
    }
    return f1_from_counts(overlap, static_cast<double>(a.size()), static_cast<double>(b.size()));
}

}  // namespace detail

struct MetricContext {
    std::string instruction;
    std::optional<std::string> context;
    JudgeClient* judge = nullptr;
};

/// Score in [0, 100] of a prediction against one or more golds.
inline double compute_metric(MetricKind kind, const std::string& prediction, const std::vector<std::string>& golds,
                             const MetricAnnotation& annotation, const MetricContext& ctx = {}) {
    if (golds.empty()) {
        throw ContractError("compute_metric: no gold references");
    }
    const auto pred = normalize_text(prediction);
    double best = 0.0;
    switch (kind) {
        case MetricKind::ACC:
            for (const auto& g : golds) {
                if (pred == normalize_text(g)) {
                    return 100.0;
                }
            }
            return 0.0;
        case MetricKind::ROUGE:
            for (const auto& g : golds) {
                best = std::max(best, text::rouge_l(pred, normalize_text(g)));
            }
            return 100.0 * best;
        case MetricKind::BLEU: {
            std::vector<std::vector<std::string>> refs;
            for (const auto& g : golds) {
                refs.push_back(normalize_text(g));
                if (refs.back() == pred) {
                    return 100.0;
                }
            }
            return 100.0 * text::sentence_bleu(pred, refs);
        }
        case MetricKind::MATCH:
        case MetricKind::F1: {
            // Both are set-F1 over delimiter-split items.
            const std::string delim = annotation.item_delimiter();
            const auto items = detail::items_of(prediction, delim);
            for (const auto& g : golds) {
                best = std::max(best, detail::set_f1(items, detail::items_of(g, delim)));
            }
            return 100.0 * best;
        }
        case MetricKind::JUDGE: {
            ContainmentJudge fallback;
            JudgeClient& judge = ctx.judge ? *ctx.judge : fallback;
            return 100.0 * judge.judge(ctx.instruction, ctx.context, prediction, golds);
        }
    }
    throw ContractError("compute_metric: unknown metric kind");
}

// ---------------------------------------------------------------------------
// Violations

/// Present only for constraints the annotation defines; true means violated.
struct ViolationFlags {
    std::optional<bool> format;
    std::optional<bool> scope;
    std::optional<bool> wordy;

    bool operator==(const ViolationFlags&) const = default;
};

/// Output items considered by the scope check.
inline std::vector<std::string> scope_items(const std::string& prediction, const MetricAnnotation& annotation) {
    bool listy = false;
    for (const auto& r : annotation.format_rules) {
        if (r.name == "one_dim_list" || r.name == "two_dim_list" || r.name == "delimiter") {
            listy = true;
        }
    }
    if (!listy) {
        std::string t = text::trim(prediction);
        return t.empty() ? std::vector<std::string>{} : std::vector<std::string>{t};
    }
    std::string body = text::trim(prediction);
    body.erase(std::remove_if(body.begin(), body.end(), [](char c) { return c == '[' || c == ']'; }), body.end());
    std::vector<std::string> out;
    for (auto& piece : text::split_on(body, annotation.item_delimiter())) {
        if (!piece.empty()) {
            out.push_back(piece);
        }
    }
    return out;
}

/// Length limit for the wordy check: the annotation's fixed threshold, or
/// twice the longest normalized gold over the task's training outputs.
inline std::optional<int> resolve_wordy_threshold(const Task& task) {
    const auto& w = task.annotation.wordy_threshold;
    if (!w) {
        return std::nullopt;
    }
    if (!w->automatic) {
        return w->tokens;
    }
    std::size_t longest = 0;
    for (const auto& inst : task.train_instances) {
        longest = std::max(longest, normalize_text(inst.output).size());
    }
    return static_cast<int>(std::max<std::size_t>(1, 2 * longest));
}

inline ViolationFlags check_violations(const std::string& prediction, const MetricAnnotation& annotation,
                                       const std::optional<std::string>& context = std::nullopt,
                                       std::optional<int> wordy_threshold = std::nullopt) {
    ViolationFlags flags;
    if (!annotation.format_rules.empty()) {
        bool violated = false;
        for (const auto& rule : annotation.format_rules) {
            if (!format::passes(rule, prediction)) {
                violated = true;
            }
        }
        flags.format = violated;
    }
    if (annotation.scope) {
        const auto& scope = *annotation.scope;
        const auto items = scope_items(prediction, annotation);
        auto fold = [&scope](const std::string& s) { return scope.case_sensitive ? s : text::to_lower(s); };
        bool violated = false;
        if (scope.in_context) {
            const std::string ctx = fold(context.value_or(""));
            for (const auto& item : items) {
                if (ctx.find(fold(item)) == std::string::npos) {
                    violated = true;
                }
            }
        } else {
            if (items.empty()) {
                violated = true;
            }
            for (const auto& item : items) {
                const bool found = std::any_of(scope.choices.begin(), scope.choices.end(),
                                               [&](const std::string& c) { return fold(c) == fold(item); });
                if (!found) {
                    violated = true;
                }
            }
        }
        flags.scope = violated;
    }
    if (annotation.wordy_threshold) {
        int threshold = 0;
        if (wordy_threshold) {
            threshold = *wordy_threshold;
        } else if (!annotation.wordy_threshold->automatic) {
            threshold = annotation.wordy_threshold->tokens;
        } else {
            throw ContractError("check_violations: automatic wordy threshold needs the task's resolved value");
        }
        flags.wordy = static_cast<int>(normalize_text(prediction).size()) > threshold;
    }
    return flags;
}

// ---------------------------------------------------------------------------
// Task evaluation

struct Prediction {
    std::string instance_id;
    std::string text;
    bool failed = false;
};

struct TaskResult {
    std::string task_id;
    MetricKind metric_kind = MetricKind::ROUGE;
    double performance = 0.0;
    std::optional<double> wfr;
    std::optional<double> oos;
    std::optional<double> wr;
    std::vector<Prediction> predictions;
};

struct EvalOptions {
    std::size_t max_new_tokens = 24;
    /// Evaluate a Self-BLEU/label-balanced subset of this size instead of the full test split.
    std::optional<std::size_t> subset_k;
    std::uint64_t subset_seed = 0;
    JudgeClient* judge = nullptr;
    /// Replaces the task's seed instruction (held-out instruction probes).
    std::optional<KeyedInstruction> instruction;
};

inline std::vector<Instance> evaluation_instances(const Task& task, const EvalOptions& options) {
    if (options.subset_k) {
        return sample_test_subset(task, *options.subset_k, options.subset_seed);
    }
    return task.test_instances;
}

/// The exact token input evaluate_task feeds the model for one instance.
inline std::vector<lm::TokenId> evaluation_input(const lm::Vocabulary& vocab, const Task& task, const Instance& inst,
                                                 std::size_t demos, const EvalOptions& options = {}) {
    const std::string& instruction = options.instruction ? options.instruction->text : task.seed_instruction().text;
    const std::vector<Instance> shown(task.demonstrations.begin(),
                                      task.demonstrations.begin() + static_cast<std::ptrdiff_t>(demos));
    return lm::input_tokens(vocab, instruction, shown, inst.context);
}

/// Greedy-decodes every test instance and scores performance and violation rates.
inline TaskResult evaluate_task(const lm::LanguageModel& model, const lm::Vocabulary& vocab, const Task& task,
                                std::size_t demos, const EvalOptions& options = {}) {
    if (task.test_instances.empty()) {
        throw ContractError("evaluate_task: task '" + task.task_id + "' has no test instances");
    }
    if (demos > task.demonstrations.size()) {
        throw ContractError("evaluate_task: task '" + task.task_id + "' has only " +
                            std::to_string(task.demonstrations.size()) + " demonstrations");
    }
    const auto instances = evaluation_instances(task, options);
    const auto wordy = resolve_wordy_threshold(task);
    const std::string& instruction = options.instruction ? options.instruction->text : task.seed_instruction().text;
    TaskResult result;
    result.task_id = task.task_id;
    result.metric_kind = task.annotation.metric_kind;
    double perf = 0.0;
    double n_format = 0.0;
    double n_scope = 0.0;
    double n_wordy = 0.0;
    for (const auto& inst : instances) {
        const auto x = evaluation_input(vocab, task, inst, demos, options);
        Prediction pred{inst.instance_id, {}, false};
        const std::size_t room = x.size() < model.max_context() ? model.max_context() - x.size() : 0;
        const std::size_t max_new = std::min(options.max_new_tokens, room);
        if (max_new == 0) {
            pred.failed = true;
            logger()->warn("task '{}' instance '{}': input of {} tokens leaves no room to generate", task.task_id,
                           inst.instance_id, x.size());
        } else {
            pred.text = vocab.decode(lm::generate_greedy(model, x, max_new));
        }
        if (pred.failed) {
            n_format += 1.0;
            n_scope += 1.0;
            n_wordy += 1.0;
        } else {
            MetricContext mctx{instruction, inst.context, options.judge};
            perf += compute_metric(task.annotation.metric_kind, pred.text, {inst.output}, task.annotation, mctx);
            const auto flags = check_violations(pred.text, task.annotation, inst.context, wordy);
            n_format += flags.format.value_or(false) ? 1.0 : 0.0;
            n_scope += flags.scope.value_or(false) ? 1.0 : 0.0;
            n_wordy += flags.wordy.value_or(false) ? 1.0 : 0.0;
        }
        result.predictions.push_back(std::move(pred));
    }
    const double n = static_cast<double>(instances.size());
    result.performance = perf / n;
    if (!task.annotation.format_rules.empty()) {
        result.wfr = 100.0 * n_format / n;
    }
    if (task.annotation.scope) {
        result.oos = 100.0 * n_scope / n;
    }
    if (task.annotation.wordy_threshold) {
        result.wr = 100.0 * n_wordy / n;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Aggregation

struct AggregateScores {
    double p_score = 0.0;
    double v_score = 0.0;
    std::size_t n_tasks = 0;
};

/// P-score: mean task performance. V-score: mean of every present violation rate.
inline AggregateScores aggregate(const std::vector<TaskResult>& results) {
    if (results.empty()) {
        throw ContractError("aggregate: no task results");
    }
    AggregateScores out;
    out.n_tasks = results.size();
    double violations = 0.0;
    std::size_t n_violations = 0;
    for (const auto& r : results) {
        out.p_score += r.performance;
        for (const auto* rate : {&r.wfr, &r.oos, &r.wr}) {
            if (*rate) {
                violations += **rate;
                ++n_violations;
            }
        }
    }
    out.p_score /= static_cast<double>(results.size());
    if (n_violations == 0) {
        logger()->info("no task defines a violation constraint; V-score reported as 0");
    } else {
        out.v_score = violations / static_cast<double>(n_violations);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Report file

inline nlohmann::ordered_json to_json(const TaskResult& r) {
    nlohmann::ordered_json j;
    j["task_id"] = r.task_id;
    j["metric_kind"] = to_string(r.metric_kind);
    j["performance"] = r.performance;
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    j["wfr"] = opt(r.wfr);
    j["oos"] = opt(r.oos);
    j["wr"] = opt(r.wr);
    j["predictions"] = nlohmann::ordered_json::array();
    for (const auto& p : r.predictions) {
        j["predictions"].push_back({{"instance_id", p.instance_id}, {"text", p.text}, {"failed", p.failed}});
    }
    return j;
}

/// One line per task, then one aggregate line.
inline void write_report(const std::string& path, const std::vector<TaskResult>& results, const std::string& judge_kind) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write report '" + path + "'");
    }
    std::vector<const TaskResult*> sorted;
    for (const auto& r : results) {
        sorted.push_back(&r);
    }
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->task_id < b->task_id; });
    for (const auto* r : sorted) {
        out << to_json(*r).dump() << '\n';
    }
    const auto agg = aggregate(results);
    nlohmann::ordered_json a;
    a["aggregate"] = {{"p_score", agg.p_score}, {"v_score", agg.v_score}, {"n_tasks", agg.n_tasks},
                      {"judge_kind", judge_kind}};
    out << a.dump() << '\n';
}

inline AggregateScores read_report_aggregate(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError("cannot open report '" + path + "'");
    }
    std::string line;
    while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.contains("aggregate")) {
            const auto& a = j["aggregate"];
            return {a.at("p_score").get<double>(), a.at("v_score").get<double>(), a.at("n_tasks").get<std::size_t>()};
        }
    }
    throw ParseError("report '" + path + "' has no aggregate line");
}

// ---------------------------------------------------------------------------
// Probes

/// Response key used by the probes: whitespace-normalized, edge punctuation
/// stripped, case preserved (case is what the misleading-constraint probe measures).
inline std::string response_key(const std::string& prediction) {
    std::vector<std::string> words;
    for (auto& w : text::split_whitespace(prediction)) {
        std::size_t b = 0;
        std::size_t e = w.size();
        while (b < e && !text::is_alnum(w[b])) {
            ++b;
        }
        while (e > b && !text::is_alnum(w[e - 1])) {
            --e;
        }
        if (e > b) {
            words.push_back(w.substr(b, e - b));
        }
    }
    return text::join(words);
}

/// Maps a response key onto one of the given buckets, else "other".
inline std::string bucket_response(const std::string& key, const std::vector<std::string>& buckets) {
    for (const auto& b : buckets) {
        if (key == b) {
            return b;
        }
    }
    return "other";
}

struct ProbeResult {
    std::map<std::string, std::size_t> histogram;
    double mean_gain = 0.0;
    TaskResult result;

    /// Percentage of responses per key.
    std::map<std::string, double> percentages() const {
        std::size_t total = 0;
        for (const auto& [k, n] : histogram) {
            total += n;
        }
        std::map<std::string, double> out;
        for (const auto& [k, n] : histogram) {
            out[k] = total ? 100.0 * static_cast<double>(n) / static_cast<double>(total) : 0.0;
        }
        return out;
    }
};

/// Evaluates task under a replacement instruction; returns the response
/// histogram and the mean information gain of that instruction.
inline ProbeResult probe_instruction(const lm::LanguageModel& model, const lm::Vocabulary& vocab, const Task& task,
                                     const KeyedInstruction& instruction, double alpha, std::size_t demos = 0,
                                     EvalOptions options = {}) {
    options.instruction = instruction;
    ProbeResult out;
    out.result = evaluate_task(model, vocab, task, demos, options);
    for (const auto& p : out.result.predictions) {
        ++out.histogram[response_key(p.text)];
    }
    const auto instances = evaluation_instances(task, options);
    double gain = 0.0;
    for (auto inst : instances) {
        inst.instruction_text = instruction.text;
        gain += ig::information_gain(model, vocab, inst, instruction, alpha).gain;
    }
    out.mean_gain = gain / static_cast<double>(instances.size());
    return out;
}

inline ProbeResult probe_misleading(const lm::LanguageModel& model, const lm::Vocabulary& vocab, const Task& task,
                                    const KeyedInstruction& modified_instruction, double alpha,
                                    const EvalOptions& options = {}) {
    return probe_instruction(model, vocab, task, modified_instruction, alpha, 0, options);
}

}  // namespace kpig::eval
