#pragma once

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/diversity.hpp"
#include "kpig/ig.hpp"
#include "kpig/lm/checkpoint.hpp"
#include "kpig/lm/model.hpp"
#include "kpig/lm/optimizer.hpp"
#include "kpig/lm/prompt.hpp"
#include "kpig/lm/transformer.hpp"
#include "kpig/task_model.hpp"

namespace kpig::train {

enum class Mode { KPIG, SFT, MULTI };

inline std::string to_string(Mode m) {
    switch (m) {
        case Mode::KPIG: return "KPIG";
        case Mode::SFT: return "SFT";
        case Mode::MULTI: return "MULTI";
    }
    return "?";
}

inline Mode mode_from_string(const std::string& s) {
    if (s == "KPIG") return Mode::KPIG;
    if (s == "SFT") return Mode::SFT;
    if (s == "MULTI") return Mode::MULTI;
    throw ContractError("unknown training mode '" + s + "' (expected KPIG, SFT or MULTI)");
}

/// One training instance paired with the instruction it is trained under.
/// instance.instruction_text always equals keyed.text.
struct Example {
    Instance instance;
    KeyedInstruction keyed;
};

inline Example make_example(const Instance& instance, const KeyedInstruction& keyed) {
    Example e{instance, keyed};
    e.instance.instruction_text = keyed.text;
    return e;
}

/// Frozen-side scoring computed while estimating IG, reused during fine-tuning.
/// Keyed by (instance_id, instruction text); valid for one snapshot only.
class FrozenCache {
public:
    using Key = std::pair<std::string, std::string>;

    void clear() {
        masked_.clear();
        records_.clear();
    }
    const lm::ScoredOutput* masked(const Example& e) const {
        auto it = masked_.find(key(e));
        return it == masked_.end() ? nullptr : &it->second;
    }
    const ig::IGRecord* record(const Example& e) const {
        auto it = records_.find(key(e));
        return it == records_.end() ? nullptr : &it->second;
    }
    void put(const Example& e, lm::ScoredOutput masked, ig::IGRecord record) {
        masked_[key(e)] = std::move(masked);
        records_[key(e)] = std::move(record);
    }
    void merge(FrozenCache&& other) {
        masked_.merge(other.masked_);
        records_.merge(other.records_);
    }
    std::size_t size() const { return masked_.size(); }

private:
    static Key key(const Example& e) { return {e.instance.instance_id, e.keyed.text}; }
    std::map<Key, lm::ScoredOutput> masked_;
    std::map<Key, ig::IGRecord> records_;
};

// ---------------------------------------------------------------------------
// Replay selection

struct ReplayPlan {
    std::vector<std::string> selected_task_ids;
    std::map<std::string, std::vector<Example>> sampled_instances;
    std::map<std::string, double> ig_by_task;
};

/// Draws min(n, |train|) distinct training instances, each under an
/// instruction drawn from the task's pool.
inline std::vector<Example> sample_examples(const Task& task, std::size_t n, Rng& rng) {
    if (task.train_instances.empty()) {
        throw ContractError("task '" + task.task_id + "' has no training instances");
    }
    std::vector<std::size_t> idx(task.train_instances.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    const std::size_t take = std::min(n, idx.size());
    // Partial Fisher-Yates: the first `take` slots are a uniform sample.
    for (std::size_t i = 0; i < take; ++i) {
        std::swap(idx[i], idx[i + uniform_index(rng, idx.size() - i)]);
    }
    std::vector<Example> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
        const auto& keyed = diversity::sample_instruction(task.instruction_pool, rng);
        out.push_back(make_example(task.train_instances[idx[i]], keyed));
    }
    return out;
}

struct TaskEstimate {
    double mean_gain = 0.0;
    std::vector<Example> sampled;
    std::vector<ig::IGRecord> records;
};

/// Mean IG under the frozen model over min(n, |train|) sampled instances.
/// When cache is given, the frozen masked distributions are stored in it.
inline TaskEstimate estimate_task_ig_detailed(const lm::LanguageModel& frozen, const lm::Vocabulary& vocab,
                                              const Task& task, std::size_t n, double alpha, Rng& rng,
                                              FrozenCache* cache = nullptr, const ig::MaskOptions& mask = {},
                                              std::optional<double> beta_max = std::nullopt) {
    ig::check_alpha(alpha);
    if (n == 0) {
        throw ContractError("estimate_task_ig: N must be >= 1");
    }
    TaskEstimate out;
    out.sampled = sample_examples(task, n, rng);
    double sum = 0.0;
    for (const auto& e : out.sampled) {
        const auto pair = ig::score_pair(frozen, vocab, e.instance, e.keyed, mask);
        auto rec = ig::make_record(ig::sequence_info(pair.complete, alpha), ig::sequence_info(pair.masked, alpha),
                                   beta_max);
        rec.instance_id = e.instance.instance_id;
        sum += rec.gain;
        if (cache) {
            cache->put(e, pair.masked, rec);
        }
        out.records.push_back(rec);
    }
    out.mean_gain = sum / static_cast<double>(out.sampled.size());
    return out;
}

inline double estimate_task_ig(const lm::LanguageModel& frozen, const lm::Vocabulary& vocab, const Task& task,
                               std::size_t n, double alpha, Rng& rng, FrozenCache* cache = nullptr) {
    return estimate_task_ig_detailed(frozen, vocab, task, n, alpha, rng, cache).mean_gain;
}

/// The m tasks with the lowest mean gain, ascending, ties by task_id.
inline ReplayPlan select_replay_tasks(const std::map<std::string, double>& ig_by_task, std::size_t m) {
    std::vector<std::pair<double, std::string>> order;
    for (const auto& [id, g] : ig_by_task) {
        order.emplace_back(g, id);
    }
    std::sort(order.begin(), order.end());
    ReplayPlan plan;
    plan.ig_by_task = ig_by_task;
    for (std::size_t i = 0; i < std::min(m, order.size()); ++i) {
        plan.selected_task_ids.push_back(order[i].second);
    }
    return plan;
}

// ---------------------------------------------------------------------------
// Objective

struct LossBreakdown {
    double ce = 0.0;
    double jsd = 0.0;
    double lambda = 0.0;
    double beta = 1.0;
    double total = 0.0;
};

struct LossOptions {
    double alpha = 0.3;
    double lambda = 0.02;
    /// Replaces the IG-derived temperature (gradient checks, ablations).
    std::optional<double> beta_override;
    std::optional<double> beta_max;
    ig::MaskOptions mask;
    /// Skip the masked forward pass entirely; the objective is then plain CE.
    bool ce_only = false;
};

namespace detail {

struct Encoded {
    std::vector<lm::TokenId> seq;
    std::vector<lm::TokenId> gold;
    std::size_t first_row = 0;
};

inline Encoded encode(const lm::Vocabulary& vocab, const std::string& instruction, const Instance& inst) {
    Encoded e;
    const auto x = lm::input_tokens(vocab, instruction, {}, inst.context);
    e.gold = lm::output_tokens(vocab, inst.output);
    e.seq = x;
    e.seq.insert(e.seq.end(), e.gold.begin(), e.gold.end() - 1);
    e.first_row = x.size() - 1;
    return e;
}

inline double decayed_info(const lm::Matrix& lp, const std::vector<lm::TokenId>& gold, double alpha) {
    std::vector<double> probs(gold.size());
    for (std::size_t k = 0; k < gold.size(); ++k) {
        probs[k] = std::exp(lp(k, static_cast<std::size_t>(gold[k])));
    }
    return ig::sequence_info(probs, alpha);
}

}  // namespace detail

/// CE + lambda * JSD for one example, accumulating scale * d(total)/d(params)
/// into grad when it is non-empty. frozen == nullptr means no snapshot yet
/// (first time step): the JSD term is 0. The temperature is treated as a
/// constant of the step (no gradient flows through the IG that sets it).
inline LossBreakdown kpig_loss_and_gradient(const lm::Transformer& live, const lm::LanguageModel* frozen,
                                            const lm::Vocabulary& vocab, const Example& ex,
                                            const LossOptions& opt, std::span<double> grad = {},
                                            double scale = 1.0, const FrozenCache* cache = nullptr) {
    if (ex.instance.instruction_text != ex.keyed.text) {
        throw ContractError("kpig_loss: instance '" + ex.instance.instance_id + "' does not use the keyed instruction");
    }
    if (opt.lambda < 0.0) {
        throw ContractError("kpig_loss: lambda must be >= 0");
    }
    const bool want_grad = !grad.empty();
    const auto complete = detail::encode(vocab, ex.keyed.text, ex.instance);
    const std::size_t K = complete.gold.size();
    const double invK = 1.0 / static_cast<double>(K);

    LossBreakdown out;
    out.lambda = opt.lambda;

    lm::Transformer::Cache cc;
    const lm::Matrix lp = live.forward(complete.seq, complete.first_row, cc);
    for (std::size_t k = 0; k < K; ++k) {
        out.ce -= lp(k, static_cast<std::size_t>(complete.gold[k])) * invK;
    }
    if (want_grad) {
        lm::Matrix d(K, lp.cols);
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t v = 0; v < lp.cols; ++v) {
                d(k, v) = std::exp(lp(k, v)) * invK * scale;
            }
            d(k, static_cast<std::size_t>(complete.gold[k])) -= invK * scale;
        }
        live.backward(cc, d, grad);
    }

    if (opt.ce_only) {
        out.beta = opt.beta_override.value_or(1.0);
        out.total = out.ce;
        return out;
    }

    const auto masked = ig::mask_instruction(ex.keyed, opt.mask);
    const auto mencoded = detail::encode(vocab, masked.text, ex.instance);
    lm::Transformer::Cache mc;
    const lm::Matrix mlp = masked.mask_count == 0 ? lp : live.forward(mencoded.seq, mencoded.first_row, mc);
    if (opt.beta_override) {
        ig::check_beta(*opt.beta_override);
        out.beta = *opt.beta_override;
    } else {
        const double gain = masked.mask_count == 0 ? 0.0
                                                   : detail::decayed_info(lp, complete.gold, opt.alpha) -
                                                         detail::decayed_info(mlp, complete.gold, opt.alpha);
        out.beta = ig::dynamic_temperature(gain, opt.beta_max);
    }

    if (frozen != nullptr) {
        const lm::ScoredOutput* fm = cache ? cache->masked(ex) : nullptr;
        lm::ScoredOutput computed;
        if (fm == nullptr) {
            const auto xm = lm::input_tokens(vocab, masked.text, {}, ex.instance.context);
            computed = lm::teacher_forced_distributions(*frozen, xm, complete.gold);
            fm = &computed;
        }
        double sum = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            sum += ig::jsd_probs(ig::soften(mlp.row(k), out.beta), ig::soften(fm->log_probs.row(k), out.beta));
        }
        out.jsd = sum * invK;
        if (want_grad && opt.lambda > 0.0) {
            lm::Matrix d(K, mlp.cols);
            for (std::size_t k = 0; k < K; ++k) {
                ig::jsd_logit_gradient(mlp.row(k), fm->log_probs.row(k), out.beta, opt.lambda * invK * scale,
                                       d.row(k));
            }
            if (masked.mask_count == 0) {
                live.backward(cc, d, grad);
            } else {
                live.backward(mc, d, grad);
            }
        }
    }
    out.total = out.ce + opt.lambda * out.jsd;
    return out;
}

inline LossBreakdown kpig_loss(const lm::Transformer& live, const lm::LanguageModel* frozen,
                               const lm::Vocabulary& vocab, const Example& ex, const LossOptions& opt) {
    return kpig_loss_and_gradient(live, frozen, vocab, ex, opt);
}

/// Loss assembled from precomputed distributions (one position per row).
/// Useful where the model is not a Transformer.
inline LossBreakdown loss_from_distributions(const lm::ScoredOutput& live_complete, const lm::ScoredOutput& live_masked,
                                             const lm::ScoredOutput* frozen_masked, double alpha, double lambda,
                                             std::optional<double> beta_max = std::nullopt) {
    LossBreakdown out;
    out.lambda = lambda;
    const std::size_t K = live_complete.length();
    for (std::size_t k = 0; k < K; ++k) {
        out.ce -= std::log(live_complete.gold_probs[k]) / static_cast<double>(K);
    }
    const double gain = ig::sequence_info(live_complete, alpha) - ig::sequence_info(live_masked, alpha);
    out.beta = ig::dynamic_temperature(gain, beta_max);
    if (frozen_masked) {
        out.jsd = ig::jsd_divergence(live_masked, *frozen_masked, out.beta);
    }
    out.total = out.ce + lambda * out.jsd;
    return out;
}

// ---------------------------------------------------------------------------
// Training state

struct TrainConfig {
    double alpha = 0.3;
    double lambda = 0.02;
    std::size_t replay_tasks = 10;      ///< M
    std::size_t replay_instances = 10;  ///< N
    std::size_t epochs = 1;
    std::size_t batch_size = 4;
    lm::AdamConfig optimizer;
    std::uint64_t seed = 0;
    std::optional<double> beta_max;
    ig::MaskOptions mask;
    std::size_t threads = 1;
    std::string checkpoint_dir;  ///< empty: no checkpoints
    std::string log_path;        ///< empty: no step log file
};

struct StepLog {
    std::size_t t = 0;
    Mode mode = Mode::KPIG;
    std::vector<std::string> task_ids;
    std::vector<std::string> replayed_task_ids;
    std::map<std::string, double> mean_gain_per_replayed_task;
    std::size_t n_examples = 0;
    std::vector<LossBreakdown> losses;
    double wall_time = 0.0;
    std::string checkpoint;
};

struct TrainState {
    lm::Vocabulary vocab;
    lm::Transformer live;
    std::optional<lm::FrozenModel> frozen;
    std::size_t t = 0;
    lm::AdamState optimizer;
    TrainConfig config;
    std::vector<std::string> history;  ///< seen task ids, in training order
    std::vector<StepLog> logs;
    FrozenCache cache;

    TrainState(lm::Vocabulary v, lm::Transformer model, TrainConfig cfg)
        : vocab(std::move(v)), live(std::move(model)), config(std::move(cfg)) {
        optimizer.config = config.optimizer;
    }
};

inline nlohmann::ordered_json to_json(const LossBreakdown& l) {
    return {{"ce", l.ce}, {"jsd", l.jsd}, {"beta", l.beta}, {"total", l.total}};
}

inline nlohmann::ordered_json to_json(const StepLog& s, const TrainConfig& c) {
    nlohmann::ordered_json j;
    j["t"] = s.t;
    j["mode"] = to_string(s.mode);
    j["task_ids"] = s.task_ids;
    j["replayed_task_ids"] = s.replayed_task_ids;
    j["mean_gain_per_replayed_task"] = s.mean_gain_per_replayed_task;
    j["hyperparameters"] = {{"alpha", c.alpha},          {"lambda", c.lambda},
                            {"M", c.replay_tasks},       {"N", c.replay_instances},
                            {"epochs", c.epochs},        {"learning_rate", c.optimizer.lr},
                            {"batch_size", c.batch_size}};
    j["n_examples"] = s.n_examples;
    j["losses"] = nlohmann::ordered_json::array();
    for (const auto& l : s.losses) {
        j["losses"].push_back(to_json(l));
    }
    j["wall_time"] = s.wall_time;
    j["checkpoint"] = s.checkpoint;
    return j;
}

namespace detail {

inline LossBreakdown mean_of(const std::vector<LossBreakdown>& items) {
    LossBreakdown m;
    for (const auto& l : items) {
        m.ce += l.ce;
        m.jsd += l.jsd;
        m.beta += l.beta;
        m.total += l.total;
        m.lambda = l.lambda;
    }
    const double n = static_cast<double>(items.size());
    m.ce /= n;
    m.jsd /= n;
    m.beta = (m.beta - 1.0) / n;  // m.beta started at 1
    m.total /= n;
    return m;
}

/// Optimizes the examples for the configured epochs; returns per-batch means.
inline std::vector<LossBreakdown> optimize(TrainState& state, std::vector<Example>& examples,
                                           const lm::LanguageModel* frozen, const LossOptions& loss_opt,
                                           std::string_view order_purpose) {
    std::vector<LossBreakdown> batches;
    if (examples.empty()) {
        return batches;
    }
    const std::size_t bs = std::max<std::size_t>(1, state.config.batch_size);
    std::vector<double> grad(state.live.parameter_count());
    for (std::size_t epoch = 0; epoch < state.config.epochs; ++epoch) {
        Rng order_rng = derive_rng(state.config.seed, order_purpose, epoch);
        std::vector<std::size_t> order(examples.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
            order[i] = i;
        }
        shuffle(order, order_rng);
        for (std::size_t b = 0; b < order.size(); b += bs) {
            const std::size_t end = std::min(order.size(), b + bs);
            const double scale = 1.0 / static_cast<double>(end - b);
            std::fill(grad.begin(), grad.end(), 0.0);
            std::vector<LossBreakdown> items;
            for (std::size_t i = b; i < end; ++i) {
                items.push_back(kpig_loss_and_gradient(state.live, frozen, state.vocab, examples[order[i]], loss_opt,
                                                       grad, scale, &state.cache));
            }
            const auto mean = mean_of(items);
            lm::train_step(state.live, mean.total, grad, state.optimizer);
            batches.push_back(mean);
        }
    }
    return batches;
}

inline void append_log(const TrainState& state, const StepLog& log) {
    if (state.config.log_path.empty()) {
        return;
    }
    std::ofstream out(state.config.log_path, std::ios::app);
    if (!out) {
        throw Error("cannot append to step log '" + state.config.log_path + "'");
    }
    out << to_json(log, state.config).dump() << '\n';
}

inline std::string write_step_checkpoint(const TrainState& state, std::size_t t) {
    if (state.config.checkpoint_dir.empty()) {
        return {};
    }
    std::filesystem::create_directories(state.config.checkpoint_dir);
    const std::string path = (std::filesystem::path(state.config.checkpoint_dir) / ("step_" + std::to_string(t) + ".ckpt")).string();
    lm::save_checkpoint(path, state.vocab, state.live, state.optimizer, t);
    return path;
}

inline double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace detail

/// Builds the replay plan for step state.t + 1 from the history tasks,
/// scoring them with the frozen snapshot and filling state.cache.
inline ReplayPlan build_replay_plan(TrainState& state, const std::vector<Task>& tasks, std::size_t t) {
    ReplayPlan plan;
    if (state.history.empty() || state.config.replay_tasks == 0 || !state.frozen) {
        return plan;
    }
    const lm::LanguageModel& frozen = *state.frozen;
    std::vector<const Task*> seen;
    for (const auto& id : state.history) {
        const Task& task = find_task(tasks, id);
        if (task.split != Split::Seen) {
            throw ContractError("replay history contains held-out task '" + id + "'");
        }
        seen.push_back(&task);
    }
    std::vector<TaskEstimate> estimates(seen.size());
    std::vector<FrozenCache> caches(seen.size());
    auto work = [&](std::size_t i) {
        Rng rng = derive_rng(state.config.seed, "replay-sample-" + std::to_string(t), i);
        estimates[i] = estimate_task_ig_detailed(frozen, state.vocab, *seen[i], state.config.replay_instances,
                                                 state.config.alpha, rng, &caches[i], state.config.mask,
                                                 state.config.beta_max);
    };
    const std::size_t threads = std::max<std::size_t>(1, state.config.threads);
    if (threads == 1) {
        for (std::size_t i = 0; i < seen.size(); ++i) {
            work(i);
        }
    } else {
        for (std::size_t start = 0; start < seen.size(); start += threads) {
            std::vector<std::future<void>> jobs;
            for (std::size_t i = start; i < std::min(seen.size(), start + threads); ++i) {
                jobs.push_back(std::async(std::launch::async, work, i));
            }
            for (auto& j : jobs) {
                j.get();
            }
        }
    }
    std::map<std::string, double> gains;
    for (std::size_t i = 0; i < seen.size(); ++i) {
        gains[seen[i]->task_id] = estimates[i].mean_gain;
    }
    plan = select_replay_tasks(gains, state.config.replay_tasks);
    for (std::size_t i = 0; i < seen.size(); ++i) {
        const auto& id = seen[i]->task_id;
        if (std::find(plan.selected_task_ids.begin(), plan.selected_task_ids.end(), id) !=
            plan.selected_task_ids.end()) {
            plan.sampled_instances[id] = estimates[i].sampled;
            state.cache.merge(std::move(caches[i]));
        }
    }
    return plan;
}

/// One time step of the stream. KPIG: snapshot, replay by lowest IG, CE+JSD
/// over current and replayed instances. SFT: CE on the current tasks only.
inline void run_time_step(TrainState& state, const std::vector<Task>& tasks, const std::vector<std::string>& step_ids,
                          Mode mode) {
    if (mode == Mode::MULTI) {
        throw ContractError("run_time_step: MULTI trains without a stream; use run_stream");
    }
    const auto start = std::chrono::steady_clock::now();
    const std::size_t t = state.t + 1;
    StepLog log;
    log.t = t;
    log.mode = mode;
    log.task_ids = step_ids;

    ReplayPlan plan;
    state.cache.clear();
    if (mode == Mode::KPIG) {
        state.frozen.reset();
        if (t >= 2) {
            state.frozen.emplace(lm::freeze_snapshot(state.live));
        }
        plan = build_replay_plan(state, tasks, t);
    }

    std::vector<Example> examples;
    Rng instr_rng = derive_rng(state.config.seed, "instruction", t);
    for (const auto& id : step_ids) {
        const Task& task = find_task(tasks, id);
        if (task.split != Split::Seen) {
            throw ContractError("step " + std::to_string(t) + " includes held-out task '" + id + "'");
        }
        for (const auto& inst : task.train_instances) {
            examples.push_back(make_example(inst, diversity::sample_instruction(task.instruction_pool, instr_rng)));
        }
    }
    for (const auto& id : plan.selected_task_ids) {
        const auto& sampled = plan.sampled_instances.at(id);
        examples.insert(examples.end(), sampled.begin(), sampled.end());
        log.replayed_task_ids.push_back(id);
        log.mean_gain_per_replayed_task[id] = plan.ig_by_task.at(id);
    }
    log.n_examples = examples.size();

    LossOptions loss_opt;
    loss_opt.alpha = state.config.alpha;
    loss_opt.beta_max = state.config.beta_max;
    loss_opt.mask = state.config.mask;
    if (mode == Mode::KPIG) {
        loss_opt.lambda = state.config.lambda;
    } else {
        loss_opt.lambda = 0.0;
        loss_opt.ce_only = true;
    }
    const lm::LanguageModel* frozen = state.frozen ? &*state.frozen : nullptr;
    log.losses = detail::optimize(state, examples, frozen, loss_opt, "order-" + std::to_string(t));

    for (const auto& id : step_ids) {
        if (std::find(state.history.begin(), state.history.end(), id) == state.history.end()) {
            state.history.push_back(id);
        }
    }
    state.t = t;
    log.checkpoint = detail::write_step_checkpoint(state, t);
    log.wall_time = detail::seconds_since(start);
    detail::append_log(state, log);
    logger()->info("step {} [{}]: {} examples, {} replayed tasks, {:.1f}s", t, to_string(mode), log.n_examples,
                   log.replayed_task_ids.size(), log.wall_time);
    state.logs.push_back(std::move(log));
}

/// Trains over a whole stream. MULTI ignores the step structure and makes one
/// shuffled CE pass (per epoch) over every seen task's training instances.
inline TrainState run_stream(const TaskStream& stream, const std::vector<Task>& tasks, Mode mode,
                             TrainState state) {
    if (mode == Mode::MULTI) {
        std::set<std::string> ids;
        for (const auto& step : stream.steps) {
            ids.insert(step.begin(), step.end());
        }
        if (ids.empty()) {
            return state;
        }
        const auto start = std::chrono::steady_clock::now();
        StepLog log;
        log.t = 1;
        log.mode = Mode::MULTI;
        log.task_ids.assign(ids.begin(), ids.end());
        std::vector<Example> examples;
        Rng instr_rng = derive_rng(state.config.seed, "instruction", 1);
        for (const auto& id : ids) {
            const Task& task = find_task(tasks, id);
            for (const auto& inst : task.train_instances) {
                examples.push_back(make_example(inst, diversity::sample_instruction(task.instruction_pool, instr_rng)));
            }
        }
        log.n_examples = examples.size();
        LossOptions loss_opt;
        loss_opt.lambda = 0.0;
        loss_opt.ce_only = true;
        log.losses = detail::optimize(state, examples, nullptr, loss_opt, "order-multi");
        state.history.assign(ids.begin(), ids.end());
        state.t = 1;
        log.checkpoint = detail::write_step_checkpoint(state, 1);
        log.wall_time = detail::seconds_since(start);
        detail::append_log(state, log);
        state.logs.push_back(std::move(log));
        return state;
    }
    for (std::size_t i = 0; i < stream.steps.size(); ++i) {
        try {
            run_time_step(state, tasks, stream.steps[i], mode);
        } catch (const Error& e) {
            throw Error("time step " + std::to_string(i + 1) + " failed: " + e.what());
        }
    }
    return state;
}

}  // namespace kpig::train
