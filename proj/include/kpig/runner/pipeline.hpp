#pragma once

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/diversity.hpp"
#include "kpig/evalsuite.hpp"
#include "kpig/http_client.hpp"
#include "kpig/lm/checkpoint.hpp"
#include "kpig/lm/prompt.hpp"
#include "kpig/runner/config.hpp"
#include "kpig/runner/plot.hpp"
#include "kpig/task_model.hpp"
#include "kpig/trainer.hpp"

namespace kpig::runner {

namespace fs = std::filesystem;

/// Layout of one run directory.
struct RunPaths {
    fs::path dir;

    fs::path config() const { return dir / "config.json"; }
    fs::path steps() const { return dir / "steps.jsonl"; }
    fs::path checkpoints() const { return dir / "checkpoints"; }
    fs::path checkpoint(std::size_t t) const { return checkpoints() / ("step_" + std::to_string(t) + ".ckpt"); }
    fs::path reports() const { return dir / "reports"; }
    fs::path plots() const { return dir / "plots"; }
    fs::path probes() const { return dir / "probes"; }
    fs::path manifest() const { return dir / "manifest.json"; }
};

/// <output_dir>/<mode>-seed<seed>, so runs differing in mode or seed never collide.
inline RunPaths run_paths(const ExperimentConfig& c) {
    std::string mode = train::to_string(c.mode);
    std::transform(mode.begin(), mode.end(), mode.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return RunPaths{fs::path(c.output_dir) / (mode + "-seed" + std::to_string(c.seed))};
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw Error("cannot read '" + p.string() + "'");
    }
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

// ---------------------------------------------------------------------------
// Clients

inline std::unique_ptr<diversity::RewriterClient> make_rewriter(const ClientConfig& c, std::uint64_t seed) {
    if (c.kind == "remote") {
        return std::make_unique<diversity::RemoteRewriter>(net::make_transport(remote_config(c)));
    }
    return std::make_unique<diversity::OfflineRewriter>(seed);
}

inline std::unique_ptr<eval::JudgeClient> make_judge(const ClientConfig& c) {
    if (c.kind == "remote") {
        return std::make_unique<eval::RemoteJudge>(net::make_transport(remote_config(c)));
    }
    return std::make_unique<eval::ContainmentJudge>();
}

// ---------------------------------------------------------------------------
// diversify

/// Replaces every seen task's pool with one grown from its seed instruction.
/// Held-out tasks keep their single instruction.
inline std::vector<Task> diversify_tasks(const std::vector<Task>& tasks, diversity::RewriterClient& client, int rounds,
                                         std::uint64_t seed) {
    std::vector<Task> out;
    out.reserve(tasks.size());
    for (const auto& t : tasks) {
        if (t.split == Split::Heldout) {
            out.push_back(t);
            continue;
        }
        const auto pool = diversity::build_instruction_pool(t, client, rounds, seed);
        logger()->info("task '{}': pool of {} instructions", t.task_id, pool.entries.size());
        out.push_back(diversity::with_pool(t, pool));
    }
    return out;
}

// ---------------------------------------------------------------------------
// train

struct TrainOutcome {
    RunPaths paths;
    std::size_t steps = 0;
};

inline lm::Vocabulary build_vocabulary(const std::vector<Task>& tasks) {
    return lm::Vocabulary::build(lm::corpus_texts(tasks));
}

/// Trains one configuration from scratch into its run directory.
inline TrainOutcome run_training(const ExperimentConfig& config) {
    validate(config);
    if (config.tasks_path.empty()) {
        throw ContractError("config field 'paths.tasks' is required for training");
    }
    const auto tasks = load_task_file(config.tasks_path);
    const RunPaths paths = run_paths(config);
    fs::create_directories(paths.dir);
    fs::remove_all(paths.checkpoints());
    fs::remove_all(paths.reports());
    fs::remove(paths.steps());
    fs::remove(paths.manifest());
    save_config(paths.config().string(), config);

    const auto stream = build_stream(tasks, config.stream_mode, heldout_ids_of(tasks), config.order_seed);
    auto vocab = build_vocabulary(tasks);
    lm::Transformer model(model_config(config, vocab.size()));
    train::TrainState state(vocab, model,
                            train_config(config, paths.checkpoints().string(), paths.steps().string()));
    logger()->info("training {} on {} steps ({} parameters, vocabulary {})", train::to_string(config.mode),
                   stream.steps.size(), state.live.parameter_count(), vocab.size());
    state = train::run_stream(stream, tasks, config.mode, std::move(state));
    return {paths, state.logs.size()};
}

// ---------------------------------------------------------------------------
// Persisted run access

inline ExperimentConfig load_run_config(const RunPaths& paths) {
    return load_config(paths.config().string());
}

inline std::vector<nlohmann::json> read_step_logs(const RunPaths& paths) {
    std::ifstream in(paths.steps());
    if (!in) {
        throw Error("run '" + paths.dir.string() + "' has no step log");
    }
    std::vector<nlohmann::json> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!text::trim(line).empty()) {
            out.push_back(nlohmann::json::parse(line));
        }
    }
    return out;
}

inline lm::Checkpoint load_step(const RunPaths& paths, std::size_t t) {
    const auto p = paths.checkpoint(t);
    if (!fs::exists(p)) {
        throw Error("checkpoint for step " + std::to_string(t) + " is missing (" + p.string() + ")");
    }
    return lm::load_checkpoint(p.string());
}

inline std::size_t final_step(const RunPaths& paths) {
    const auto logs = read_step_logs(paths);
    if (logs.empty()) {
        throw Error("run '" + paths.dir.string() + "' has no completed steps");
    }
    return logs.back().at("t").get<std::size_t>();
}

// ---------------------------------------------------------------------------
// eval

enum class EvalSplit { Seen, Heldout };

inline std::string to_string(EvalSplit s) {
    return s == EvalSplit::Seen ? "seen" : "heldout";
}

inline EvalSplit eval_split_from_string(const std::string& s) {
    if (s == "seen") return EvalSplit::Seen;
    if (s == "heldout") return EvalSplit::Heldout;
    throw ContractError("split must be seen or heldout, got '" + s + "'");
}

/// Evaluates a model on one split. Held-out tasks get `demos` demonstrations;
/// seen tasks are evaluated zero-shot.
inline std::vector<eval::TaskResult> evaluate_split(const lm::LanguageModel& model, const lm::Vocabulary& vocab,
                                                    const std::vector<Task>& tasks, EvalSplit split, std::size_t demos,
                                                    const ExperimentConfig& config, eval::JudgeClient& judge) {
    eval::EvalOptions opt;
    opt.max_new_tokens = config.max_new_tokens;
    opt.subset_k = config.test_subset;
    opt.subset_seed = config.seed;
    opt.judge = &judge;
    std::vector<eval::TaskResult> results;
    for (const auto& t : tasks) {
        const bool heldout = t.split == Split::Heldout;
        if (heldout != (split == EvalSplit::Heldout)) {
            continue;
        }
        results.push_back(eval::evaluate_task(model, vocab, t, heldout ? demos : 0, opt));
    }
    return results;
}

inline fs::path eval_report_path(const RunPaths& paths, EvalSplit split, std::optional<std::size_t> step = {}) {
    if (step) {
        return paths.reports() / ("step_" + std::to_string(*step) + "_" + to_string(split) + ".jsonl");
    }
    return paths.reports() / ("eval_" + to_string(split) + ".jsonl");
}

/// Evaluates the final checkpoint of a run and writes the split's report.
inline eval::AggregateScores run_eval(const RunPaths& paths, EvalSplit split, std::optional<std::size_t> demos = {}) {
    const auto config = load_run_config(paths);
    const auto tasks = load_task_file(config.tasks_path);
    const auto ckpt = load_step(paths, final_step(paths));
    auto judge = make_judge(config.judge);
    const auto results = evaluate_split(ckpt.model, ckpt.vocab, tasks, split,
                                        demos.value_or(config.demos_for_heldout), config, *judge);
    fs::create_directories(paths.reports());
    eval::write_report(eval_report_path(paths, split).string(), results, judge->kind());
    return eval::aggregate(results);
}

// ---------------------------------------------------------------------------
// probe

/// For a seen task: its general description with a different format key part.
/// On the synthetic benchmark the seed is "<description> <key part>.".
inline std::optional<KeyedInstruction> misleading_instruction(const Task& task, const std::vector<Task>& tasks) {
    const auto& seed = task.seed_instruction();
    if (seed.key_parts.empty()) {
        return std::nullopt;
    }
    const std::string& own = seed.key_parts.front();
    const auto pos = seed.text.find(own);
    if (pos == std::string::npos) {
        return std::nullopt;
    }
    for (const auto& other : tasks) {
        if (other.task_id == task.task_id || other.instruction_pool.empty() ||
            other.seed_instruction().key_parts.empty()) {
            continue;
        }
        const std::string& kp = other.seed_instruction().key_parts.front();
        if (kp == own) {
            continue;
        }
        KeyedInstruction out;
        out.text = seed.text.substr(0, pos) + kp + seed.text.substr(pos + own.size());
        out.key_parts = {kp};
        return out;
    }
    return std::nullopt;
}

/// Writes one probe file per seen task: response histogram and mean IG
/// under a misleading key part, plus results under the held-out instruction.
inline std::vector<fs::path> run_probes(const RunPaths& paths, const std::optional<std::string>& task_filter = {},
                                        const std::optional<KeyedInstruction>& custom = {}) {
    const auto config = load_run_config(paths);
    const auto tasks = load_task_file(config.tasks_path);
    const auto ckpt = load_step(paths, final_step(paths));
    fs::create_directories(paths.probes());
    eval::EvalOptions opt;
    opt.max_new_tokens = config.max_new_tokens;
    opt.subset_k = config.test_subset;
    opt.subset_seed = config.seed;
    std::vector<fs::path> written;
    for (const auto& t : tasks) {
        if (t.split != Split::Seen || (task_filter && t.task_id != *task_filter)) {
            continue;
        }
        const auto instruction = custom ? custom : misleading_instruction(t, tasks);
        if (!instruction) {
            continue;
        }
        const auto probe = eval::probe_misleading(ckpt.model, ckpt.vocab, t, *instruction, config.alpha, opt);
        const auto seed_probe =
            eval::probe_instruction(ckpt.model, ckpt.vocab, t, t.seed_instruction(), config.alpha, 0, opt);
        nlohmann::ordered_json j;
        j["task_id"] = t.task_id;
        j["instruction"] = instruction->text;
        j["key_parts"] = instruction->key_parts;
        j["histogram"] = probe.histogram;
        j["percentages"] = probe.percentages();
        j["mean_gain"] = probe.mean_gain;
        j["performance"] = probe.result.performance;
        j["seed_instruction_mean_gain"] = seed_probe.mean_gain;
        j["seed_instruction_performance"] = seed_probe.result.performance;
        const auto out = paths.probes() / (t.task_id + ".json");
        std::ofstream f(out);
        f << j.dump(2) << '\n';
        written.push_back(out);
    }
    return written;
}

// ---------------------------------------------------------------------------
// manifest

struct ManifestResult {
    nlohmann::ordered_json manifest;
    std::vector<std::string> missing;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Lists config hash, seeds, checkpoints and reports of a run. Missing
/// artifacts are collected; if any, an Error naming all of them is thrown
/// after the manifest is written with a "missing" section.
inline nlohmann::ordered_json persist_results(const RunPaths& paths) {
    std::vector<std::string> missing;
    if (!fs::exists(paths.config())) {
        throw Error("run '" + paths.dir.string() + "' has no config snapshot");
    }
    const auto config = load_run_config(paths);
    nlohmann::ordered_json m;
    m["config_hash"] = config_hash(config);
    m["seeds"] = {{"seed", config.seed}, {"order_seed", config.order_seed}};
    m["mode"] = train::to_string(config.mode);
    m["step_log"] = fs::relative(paths.steps(), paths.dir).string();
    m["checkpoints"] = nlohmann::ordered_json::array();
    const auto logs = read_step_logs(paths);
    for (const auto& log : logs) {
        const auto t = log.at("t").get<std::size_t>();
        const auto p = paths.checkpoint(t);
        if (!fs::exists(p)) {
            missing.push_back("checkpoint for step " + std::to_string(t));
            continue;
        }
        m["checkpoints"].push_back(
            {{"t", t}, {"path", fs::relative(p, paths.dir).string()}, {"fnv1a", fnv1a_hex(read_file(p))}});
    }
    m["reports"] = nlohmann::ordered_json::array();
    if (fs::exists(paths.reports())) {
        std::vector<fs::path> reports;
        for (const auto& e : fs::directory_iterator(paths.reports())) {
            reports.push_back(e.path());
        }
        std::sort(reports.begin(), reports.end());
        for (const auto& p : reports) {
            m["reports"].push_back({{"path", fs::relative(p, paths.dir).string()}, {"fnv1a", fnv1a_hex(read_file(p))}});
        }
    }
    m["missing"] = missing;
    m["created_at"] = utc_timestamp();
    std::ofstream out(paths.manifest());
    out << m.dump(2) << '\n';
    if (!missing.empty()) {
        std::string msg = "run '" + paths.dir.string() + "' is incomplete:";
        for (const auto& s : missing) {
            msg += " " + s + ";";
        }
        throw Error(msg);
    }
    return m;
}

// ---------------------------------------------------------------------------
// report

/// Per-step curves (mean IG of replayed tasks, batch losses, P-score and
/// V-score of each checkpoint), a summary table, and the manifest.
inline nlohmann::ordered_json run_report(const RunPaths& paths) {
    const auto config = load_run_config(paths);
    const auto tasks = load_task_file(config.tasks_path);
    const auto logs = read_step_logs(paths);
    fs::create_directories(paths.reports());
    fs::create_directories(paths.plots());
    auto judge = make_judge(config.judge);

    Series ig{"mean IG of replayed tasks", {}};
    Series total{"total", {}}, ce{"CE", {}}, jsd{"JSD", {}};
    Series p_seen{"seen", {}}, p_held{"held-out", {}}, v_seen{"seen", {}}, v_held{"held-out", {}};
    std::size_t batch = 0;
    std::string table = "| step | tasks | replayed | mean IG | P seen | V seen | P held-out | V held-out |\n"
                        "|---|---|---|---|---|---|---|---|\n";
    for (const auto& log : logs) {
        const auto t = log.at("t").get<std::size_t>();
        double gain_sum = 0.0;
        const auto& gains = log.at("mean_gain_per_replayed_task");
        for (const auto& [id, g] : gains.items()) {
            gain_sum += g.get<double>();
        }
        const std::optional<double> mean_gain =
            gains.empty() ? std::nullopt : std::optional<double>(gain_sum / static_cast<double>(gains.size()));
        if (mean_gain) {
            ig.points.emplace_back(static_cast<double>(t), *mean_gain);
        }
        for (const auto& l : log.at("losses")) {
            const double x = static_cast<double>(++batch);
            total.points.emplace_back(x, l.at("total").get<double>());
            ce.points.emplace_back(x, l.at("ce").get<double>());
            jsd.points.emplace_back(x, l.at("jsd").get<double>());
        }
        std::map<EvalSplit, eval::AggregateScores> scores;
        for (EvalSplit split : {EvalSplit::Seen, EvalSplit::Heldout}) {
            const auto path = eval_report_path(paths, split, t);
            if (!fs::exists(path)) {
                const auto ckpt = load_step(paths, t);
                const auto results = evaluate_split(ckpt.model, ckpt.vocab, tasks, split, config.demos_for_heldout,
                                                    config, *judge);
                eval::write_report(path.string(), results, judge->kind());
            }
            scores[split] = eval::read_report_aggregate(path.string());
        }
        const double x = static_cast<double>(t);
        p_seen.points.emplace_back(x, scores[EvalSplit::Seen].p_score);
        v_seen.points.emplace_back(x, scores[EvalSplit::Seen].v_score);
        p_held.points.emplace_back(x, scores[EvalSplit::Heldout].p_score);
        v_held.points.emplace_back(x, scores[EvalSplit::Heldout].v_score);
        std::string task_ids;
        for (const auto& id : log.at("task_ids")) {
            task_ids += (task_ids.empty() ? "" : ", ") + id.get<std::string>();
        }
        table += fmt::format("| {} | {} | {} | {} | {:.2f} | {:.2f} | {:.2f} | {:.2f} |\n", t, task_ids,
                             log.at("replayed_task_ids").size(), mean_gain ? fmt::format("{:.4f}", *mean_gain) : "-",
                             scores[EvalSplit::Seen].p_score, scores[EvalSplit::Seen].v_score,
                             scores[EvalSplit::Heldout].p_score, scores[EvalSplit::Heldout].v_score);
    }
    write_line_chart((paths.plots() / "ig.svg").string(), "Information gain", "time step", "mean IG", {ig});
    write_line_chart((paths.plots() / "loss.svg").string(), "Training loss", "batch", "loss", {total, ce, jsd});
    write_line_chart((paths.plots() / "p_score.svg").string(), "P-score", "time step", "P-score", {p_seen, p_held});
    write_line_chart((paths.plots() / "v_score.svg").string(), "V-score", "time step", "V-score", {v_seen, v_held});
    std::ofstream summary(paths.dir / "summary.md");
    summary << "# " << train::to_string(config.mode) << " run, seed " << config.seed << "\n\n" << table;
    summary.close();
    return persist_results(paths);
}

}  // namespace kpig::runner
