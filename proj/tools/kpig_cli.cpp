// kpig: command-line front end for benchmark generation, instruction
// diversification, continual training, evaluation, probing and reporting.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "kpig/runner/benchmark.hpp"
#include "kpig/runner/config.hpp"
#include "kpig/runner/pipeline.hpp"

namespace {

using namespace kpig;
using namespace kpig::runner;

struct ConfigArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string tasks;
    std::string out;
    std::string mode;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* app) {
        app->add_option("-c,--config", config_path, "experiment config (JSON)");
        app->add_option("-s,--set", overrides, "override a config field, e.g. hyperparameters.lambda=0.05");
        app->add_option("--tasks", tasks, "task file (overrides paths.tasks)");
        app->add_option("--out", out, "output directory (overrides paths.output_dir)");
        app->add_option("--mode", mode, "kpig, sft or multi (overrides mode)");
        app->add_option("--seed", seed, "training seed (overrides hyperparameters.seed)");
    }

    ExperimentConfig load() const {
        std::vector<std::string> all = overrides;
        if (!tasks.empty()) all.push_back("paths.tasks=\"" + tasks + "\"");
        if (!out.empty()) all.push_back("paths.output_dir=\"" + out + "\"");
        if (!mode.empty()) all.push_back("mode=\"" + mode + "\"");
        if (seed) all.push_back("hyperparameters.seed=" + std::to_string(*seed));
        return load_config(config_path, all);
    }
};

RunPaths resolve_run(const std::string& run_dir, const ConfigArgs& args) {
    if (!run_dir.empty()) {
        return RunPaths{run_dir};
    }
    return run_paths(args.load());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Key-part information gain continual instruction tuning"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "debug logging");

    BenchmarkSpec bench;
    std::string bench_out = "tasks.jsonl";
    auto* gen = app.add_subcommand("gen-bench", "write the synthetic half-listening benchmark");
    gen->add_option("--out", bench_out, "output task file");
    gen->add_option("--seed", bench.seed, "generator seed");
    gen->add_option("--n-train", bench.n_train, "training instances per seen task")->check(CLI::PositiveNumber);
    gen->add_option("--n-test", bench.n_test, "test instances per task")->check(CLI::PositiveNumber);
    gen->add_option("--n-demos", bench.n_demos, "demonstrations per task");
    gen->add_option("--words", bench.words_per_category, "distinct words per category (2-12)")
        ->check(CLI::Range(2, 12));

    ConfigArgs div_args;
    std::string div_out;
    auto* div = app.add_subcommand("diversify", "grow instruction pools for seen tasks");
    div_args.attach(div);
    div->add_option("--write", div_out, "diversified task file to write")->required();

    ConfigArgs train_args;
    auto* trn = app.add_subcommand("train", "train over the task stream");
    train_args.attach(trn);

    ConfigArgs eval_args;
    std::string eval_run;
    std::string split = "seen";
    std::optional<std::size_t> demos;
    auto* evl = app.add_subcommand("eval", "evaluate the final checkpoint of a run");
    eval_args.attach(evl);
    evl->add_option("--run", eval_run, "run directory (default: derived from the config)");
    evl->add_option("--split", split, "seen or heldout")->check(CLI::IsMember({"seen", "heldout"}));
    evl->add_option("--demos", demos, "demonstrations for held-out tasks");

    ConfigArgs probe_args;
    std::string probe_run;
    std::optional<std::string> probe_task;
    std::string probe_instruction;
    std::vector<std::string> probe_key_parts;
    auto* prb = app.add_subcommand("probe", "held-out and misleading instruction probes");
    probe_args.attach(prb);
    prb->add_option("--run", probe_run, "run directory (default: derived from the config)");
    prb->add_option("--task", probe_task, "restrict to one seen task");
    prb->add_option("--instruction", probe_instruction, "custom probe instruction");
    prb->add_option("--key-part", probe_key_parts, "key part of the custom instruction");

    ConfigArgs report_args;
    std::string report_run;
    auto* rep = app.add_subcommand("report", "curves, summary table and manifest of a run");
    report_args.attach(rep);
    rep->add_option("--run", report_run, "run directory (default: derived from the config)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (gen->parsed()) {
            const auto tasks = generate_benchmark(bench);
            write_task_file(bench_out, tasks);
            load_task_file(bench_out);
            std::cout << "wrote " << tasks.size() << " tasks to " << bench_out << '\n';
        } else if (div->parsed()) {
            const auto config = div_args.load();
            if (config.tasks_path.empty()) {
                throw ContractError("config field 'paths.tasks' is required");
            }
            auto client = make_rewriter(config.rewriter, config.seed);
            const auto tasks = diversify_tasks(load_task_file(config.tasks_path), *client, config.pool_rounds,
                                               config.seed);
            write_task_file(div_out, tasks);
            std::cout << "wrote " << tasks.size() << " tasks to " << div_out << '\n';
        } else if (trn->parsed()) {
            const auto outcome = run_training(train_args.load());
            std::cout << "trained " << outcome.steps << " steps into " << outcome.paths.dir.string() << '\n';
        } else if (evl->parsed()) {
            const auto paths = resolve_run(eval_run, eval_args);
            const auto agg = run_eval(paths, eval_split_from_string(split), demos);
            std::cout << split << ": P-score " << agg.p_score << ", V-score " << agg.v_score << " over "
                      << agg.n_tasks << " tasks\n";
        } else if (prb->parsed()) {
            const auto paths = resolve_run(probe_run, probe_args);
            std::optional<KeyedInstruction> custom;
            if (!probe_instruction.empty()) {
                custom = KeyedInstruction{probe_instruction, probe_key_parts};
            }
            for (const auto& p : run_probes(paths, probe_task, custom)) {
                std::cout << "wrote " << p.string() << '\n';
            }
        } else if (rep->parsed()) {
            const auto paths = resolve_run(report_run, report_args);
            run_report(paths);
            std::cout << "report written under " << paths.dir.string() << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
