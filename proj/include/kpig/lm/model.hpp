#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "kpig/common.hpp"
#include "kpig/lm/vocabulary.hpp"

namespace kpig::lm {

/// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    bool operator==(const Matrix&) const = default;
};

/// In-place log-softmax of one row. -inf entries stay -inf.
inline void log_softmax_inplace(std::span<double> row) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) {
        mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (double v : row) {
        sum += std::exp(v - mx);
    }
    const double lse = mx + std::log(sum);
    for (double& v : row) {
        v -= lse;
    }
}

/// An autoregressive model over a fixed vocabulary.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;

    virtual std::size_t vocab_size() const = 0;
    virtual std::size_t max_context() const = 0;

    /// Log-probabilities of the next token for each prefix tokens[0..r],
    /// for r = first_row .. |tokens|-1. Row i of the result is prefix first_row+i.
    virtual Matrix next_token_log_probs(std::span<const TokenId> tokens, std::size_t first_row) const = 0;

    virtual std::unique_ptr<LanguageModel> clone() const = 0;
};

/// Teacher-forced output scoring: one distribution per gold position.
struct ScoredOutput {
    std::vector<TokenId> gold_token_ids;
    Matrix log_probs;  ///< K x V
    std::vector<double> gold_probs;

    std::size_t length() const { return gold_token_ids.size(); }
    std::size_t vocab_size() const { return log_probs.cols; }

    /// Probability vector at gold position k.
    std::vector<double> distribution(std::size_t k) const {
        std::vector<double> p(log_probs.cols);
        auto row = log_probs.row(k);
        std::transform(row.begin(), row.end(), p.begin(), [](double v) { return std::exp(v); });
        return p;
    }
};

inline void check_context(const LanguageModel& model, std::size_t needed, const char* op) {
    if (needed > model.max_context()) {
        throw ContractError(std::string(op) + ": context overflow, need " + std::to_string(needed) +
                            " tokens but the model holds " + std::to_string(model.max_context()));
    }
}

/// Distribution k is conditioned on x followed by the gold prefix y[0..k-1].
inline ScoredOutput teacher_forced_distributions(const LanguageModel& model, std::span<const TokenId> x,
                                                 std::span<const TokenId> y) {
    if (y.empty()) {
        throw ContractError("teacher_forced_distributions: gold output is empty");
    }
    if (x.empty()) {
        throw ContractError("teacher_forced_distributions: input is empty");
    }
    check_context(model, x.size() + y.size(), "teacher_forced_distributions");
    std::vector<TokenId> seq(x.begin(), x.end());
    seq.insert(seq.end(), y.begin(), y.end() - 1);
    ScoredOutput out;
    out.gold_token_ids.assign(y.begin(), y.end());
    out.log_probs = model.next_token_log_probs(seq, x.size() - 1);
    out.gold_probs.resize(y.size());
    for (std::size_t k = 0; k < y.size(); ++k) {
        out.gold_probs[k] = std::exp(out.log_probs(k, static_cast<std::size_t>(y[k])));
    }
    return out;
}

/// Argmax decoding until EOS or max_new tokens; ties go to the lowest id.
inline std::vector<TokenId> generate_greedy(const LanguageModel& model, std::span<const TokenId> x,
                                            std::size_t max_new, TokenId eos = Vocabulary::kEos) {
    if (max_new == 0) {
        throw ContractError("generate_greedy: max_new must be >= 1");
    }
    if (x.empty()) {
        throw ContractError("generate_greedy: input is empty");
    }
    check_context(model, x.size() + max_new, "generate_greedy");
    std::vector<TokenId> seq(x.begin(), x.end());
    std::vector<TokenId> out;
    for (std::size_t step = 0; step < max_new; ++step) {
        Matrix lp = model.next_token_log_probs(seq, seq.size() - 1);
        auto row = lp.row(0);
        std::size_t best = 0;
        for (std::size_t v = 1; v < row.size(); ++v) {
            if (row[v] > row[best]) {
                best = v;
            }
        }
        const auto next = static_cast<TokenId>(best);
        if (next == eos) {
            break;
        }
        out.push_back(next);
        seq.push_back(next);
    }
    return out;
}

/// Immutable snapshot of a model. Only const scoring is available, so no
/// training routine can take one.
class FrozenModel final : public LanguageModel {
public:
    explicit FrozenModel(const LanguageModel& live) : inner_(live.clone()) {}

    std::size_t vocab_size() const override { return inner_->vocab_size(); }
    std::size_t max_context() const override { return inner_->max_context(); }
    Matrix next_token_log_probs(std::span<const TokenId> tokens, std::size_t first_row) const override {
        return inner_->next_token_log_probs(tokens, first_row);
    }
    std::unique_ptr<LanguageModel> clone() const override { return std::make_unique<FrozenModel>(*inner_); }

private:
    std::shared_ptr<const LanguageModel> inner_;
};

inline FrozenModel freeze_snapshot(const LanguageModel& model) {
    return FrozenModel(model);
}

}  // namespace kpig::lm
