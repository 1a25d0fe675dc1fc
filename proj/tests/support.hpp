#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/sinks/ostream_sink.h>

#include "kpig/common.hpp"
#include "kpig/lm/model.hpp"
#include "kpig/task_model.hpp"

namespace kpig::fixtures {

/// Model whose next-token logits are an arbitrary function of the prefix.
class FunctionModel final : public lm::LanguageModel {
public:
    using Fn = std::function<std::vector<double>(std::span<const lm::TokenId> prefix)>;

    FunctionModel(std::size_t vocab, Fn fn, std::size_t context = 4096)
        : vocab_(vocab), context_(context), fn_(std::move(fn)) {}

    std::size_t vocab_size() const override { return vocab_; }
    std::size_t max_context() const override { return context_; }

    lm::Matrix next_token_log_probs(std::span<const lm::TokenId> tokens, std::size_t first_row) const override {
        lm::Matrix out(tokens.size() - first_row, vocab_);
        for (std::size_t r = first_row; r < tokens.size(); ++r) {
            auto logits = fn_(tokens.subspan(0, r + 1));
            auto row = out.row(r - first_row);
            std::copy(logits.begin(), logits.end(), row.begin());
            lm::log_softmax_inplace(row);
        }
        return out;
    }

    std::unique_ptr<lm::LanguageModel> clone() const override { return std::make_unique<FunctionModel>(*this); }

private:
    std::size_t vocab_;
    std::size_t context_;
    Fn fn_;
};

/// Same distribution after every prefix.
inline FunctionModel constant_model(std::vector<double> logits, std::size_t context = 4096) {
    const std::size_t v = logits.size();
    return FunctionModel(v, [logits](std::span<const lm::TokenId>) { return logits; }, context);
}

/// Copies library log lines while alive.
class LogCapture {
public:
    LogCapture() : sink_(std::make_shared<spdlog::sinks::ostream_sink_mt>(stream_)) {
        sink_->set_pattern("%l %v");
        logger()->sinks().push_back(sink_);
    }
    ~LogCapture() {
        auto& sinks = logger()->sinks();
        sinks.erase(std::remove(sinks.begin(), sinks.end(), sink_), sinks.end());
    }
    LogCapture(const LogCapture&) = delete;
    LogCapture& operator=(const LogCapture&) = delete;

    std::string text() const { return stream_.str(); }
    bool contains(const std::string& needle) const { return text().find(needle) != std::string::npos; }

private:
    std::ostringstream stream_;
    std::shared_ptr<spdlog::sinks::ostream_sink_mt> sink_;
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        path_ = std::filesystem::temp_directory_path() /
                ("kpig-" + tag + "-" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline Instance instance(const std::string& task_id, const std::string& id, const std::string& instruction,
                         std::optional<std::string> context, const std::string& output) {
    return Instance{instruction, std::move(context), output, task_id, id};
}

/// Small seen task: "copy" outputs drawn from the context.
inline Task simple_task(const std::string& id, const std::string& category, std::size_t n_train,
                        std::size_t n_test = 2, Split split = Split::Seen) {
    Task t;
    t.task_id = id;
    t.category = category;
    t.split = split;
    const std::string instr = "Copy the word . Answer in lowercase";
    t.instruction_pool.push_back(KeyedInstruction{instr, {"Answer in lowercase"}});
    static const std::vector<std::string> words = {"red", "blue", "cat", "dog", "fig", "sun"};
    for (std::size_t i = 0; i < n_train; ++i) {
        const auto& w = words[i % words.size()];
        t.train_instances.push_back(instance(id, id + "-train-" + std::to_string(i), instr, "word " + w, w));
    }
    for (std::size_t i = 0; i < n_test; ++i) {
        const auto& w = words[(i + 3) % words.size()];
        t.test_instances.push_back(instance(id, id + "-test-" + std::to_string(i), instr, "word " + w, w));
    }
    t.demonstrations.push_back(instance(id, id + "-demo-0", instr, "word sun", "sun"));
    t.annotation.metric_kind = MetricKind::ROUGE;
    return t;
}

}  // namespace kpig::fixtures
