#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kpig/common.hpp"
#include "kpig/task_model.hpp"
#include "kpig/text.hpp"

namespace kpig::runner {

/// Size knobs of the synthetic half-listening benchmark.
struct BenchmarkSpec {
    std::uint64_t seed = 0;
    std::size_t n_train = 40;
    std::size_t n_test = 12;
    std::size_t n_demos = 2;
    std::size_t n_heldout_train = 8;  ///< only used to resolve automatic wordy thresholds
    std::size_t words_per_category = 8;
};

namespace bench {

/// What to read out of the sentence.
struct Content {
    std::string_view name;
    std::string_view description;
    MetricKind metric;
};

/// How to write it; the sentence is the task's key part.
struct Format {
    std::string_view name;
    std::string_view key_part;
};

inline constexpr std::array<Content, 4> kContents = {{
    {"colors", "Find the colors mentioned in the sentence.", MetricKind::MATCH},
    {"animals", "Find the animals mentioned in the sentence.", MetricKind::F1},
    {"fruits", "Find the fruits mentioned in the sentence.", MetricKind::ROUGE},
    {"mood", "Decide whether the sentence sounds positive or negative.", MetricKind::ACC},
}};

inline constexpr std::array<Format, 4> kFormats = {{
    {"semicolon", "Separate the answers with a semicolon"},
    {"brackets", "Return the answers as a list in square brackets"},
    {"prefix", "Start the reply with Answer:"},
    {"single", "Reply with one word only"},
}};

inline constexpr std::array<std::string_view, 12> kColors = {"red",   "blue",  "green", "yellow", "purple", "orange",
                                                             "black", "white", "pink",  "brown",  "gray",   "gold"};
inline constexpr std::array<std::string_view, 12> kAnimals = {"cat",   "dog",  "fox",  "horse", "bird", "fish",
                                                              "mouse", "goat", "frog", "duck",  "bear", "wolf"};
inline constexpr std::array<std::string_view, 12> kFruits = {"apple", "pear",  "plum", "grape", "lemon", "mango",
                                                             "peach", "cherry", "lime", "melon", "kiwi", "fig"};
inline constexpr std::array<std::string_view, 6> kPositive = {"happy", "lovely", "great", "calm", "bright", "kind"};
inline constexpr std::array<std::string_view, 6> kNegative = {"sad", "awful", "grim", "angry", "gloomy", "cruel"};
inline constexpr std::array<std::string_view, 10> kFiller = {"the", "a",    "near", "with", "under",
                                                             "saw", "and",  "by",   "over", "ate"};

/// Seen pairs: content i with formats i and i+1. Held-out: content i with format i+2.
inline std::size_t seen_format(std::size_t content, std::size_t which) {
    return (content + which) % kFormats.size();
}
inline std::size_t heldout_format(std::size_t content) {
    return (content + 2) % kFormats.size();
}

struct Sentence {
    std::string text;
    std::vector<std::string> colors, animals, fruits;
    std::string mood;
};

inline Sentence make_sentence(Rng& rng, std::size_t vocab_per_category) {
    const std::size_t v = std::min<std::size_t>(vocab_per_category, kColors.size());
    Sentence s;
    std::vector<std::pair<std::string, int>> words;  // (word, category) with category -1 for filler
    auto pick = [&](const auto& pool, std::size_t limit, std::size_t count, int cat) {
        std::vector<std::size_t> idx(limit);
        for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
        shuffle(idx, rng);
        for (std::size_t i = 0; i < count; ++i) words.emplace_back(std::string(pool[idx[i]]), cat);
    };
    pick(kColors, v, 1 + uniform_index(rng, 2), 0);
    pick(kAnimals, v, 1 + uniform_index(rng, 2), 1);
    pick(kFruits, v, 1 + uniform_index(rng, 2), 2);
    if (uniform_index(rng, 2) == 0) {
        pick(kPositive, kPositive.size(), 1, 3);
        s.mood = "positive";
    } else {
        pick(kNegative, kNegative.size(), 1, 3);
        s.mood = "negative";
    }
    for (std::size_t i = 0, n = 2 + uniform_index(rng, 3); i < n; ++i) {
        words.emplace_back(std::string(kFiller[uniform_index(rng, kFiller.size())]), -1);
    }
    shuffle(words, rng);
    std::vector<std::string> tokens;
    for (const auto& [w, cat] : words) {
        tokens.push_back(w);
        if (cat == 0) s.colors.push_back(w);
        if (cat == 1) s.animals.push_back(w);
        if (cat == 2) s.fruits.push_back(w);
    }
    s.text = text::join(tokens) + " .";
    return s;
}

inline std::vector<std::string> answer_items(const Sentence& s, std::size_t content) {
    switch (content) {
        case 0: return s.colors;
        case 1: return s.animals;
        case 2: return s.fruits;
        default: return {s.mood};
    }
}

inline std::string render(const std::vector<std::string>& items, std::size_t format) {
    switch (format) {
        case 0: return text::join(items, "; ");
        case 1: return "[" + text::join(items, ", ") + "]";
        case 2: return "Answer: " + text::join(items, ", ");
        default: return items.front();
    }
}

inline MetricAnnotation annotation_for(std::size_t content, std::size_t format) {
    MetricAnnotation a;
    a.metric_kind = kContents[content].metric;
    switch (format) {
        case 0: a.format_rules.push_back({"delimiter", {{"sep", ";"}}}); break;
        case 1: a.format_rules.push_back({"one_dim_list", nlohmann::ordered_json::object()}); break;
        case 2: a.format_rules.push_back({"prefix_pattern", {{"pattern", "Answer:"}}}); break;
        default: a.format_rules.push_back({"max_token_length", {{"n", 1}}}); break;
    }
    if (content == 3) {
        if (format != 2) {
            a.scope = ScopeConstraint{{"positive", "negative"}, false, true};
        }
    } else if (format != 2) {
        a.scope = ScopeConstraint{{}, true, true};
    }
    a.wordy_threshold = WordyThreshold{true, 0};
    return a;
}

}  // namespace bench

/// Generates 8 seen and 4 held-out tasks. Every task reads the same kind of
/// sentence; the instruction's general description picks what to extract and
/// its key part picks the output format. Held-out tasks pair a seen task's
/// description with the format key part of a different seen task, so a model
/// that ignores key parts answers them in the wrong format.
inline std::vector<Task> generate_benchmark(const BenchmarkSpec& spec) {
    if (spec.n_train == 0 || spec.n_test == 0) {
        throw ContractError("generate_benchmark: n_train and n_test must be >= 1");
    }
    if (spec.words_per_category < 2) {
        throw ContractError("generate_benchmark: words_per_category must be >= 2");
    }
    std::vector<Task> tasks;
    auto make = [&](std::size_t content, std::size_t format, Split split, std::size_t n_train) {
        Task t;
        t.task_id = std::string(bench::kContents[content].name) + "_" + std::string(bench::kFormats[format].name);
        t.category = std::string(bench::kContents[content].name);
        t.split = split;
        const std::string key_part(bench::kFormats[format].key_part);
        const std::string instruction = std::string(bench::kContents[content].description) + " " + key_part + ".";
        t.instruction_pool.push_back(KeyedInstruction{instruction, {key_part}});
        t.annotation = bench::annotation_for(content, format);
        Rng rng = derive_rng(spec.seed, "benchmark:" + t.task_id);
        auto fill = [&](std::vector<Instance>& out, std::size_t n, const char* tag) {
            for (std::size_t i = 0; i < n; ++i) {
                const auto s = bench::make_sentence(rng, spec.words_per_category);
                Instance inst;
                inst.instance_id = t.task_id + "-" + tag + "-" + std::to_string(i);
                inst.context = s.text;
                inst.output = bench::render(bench::answer_items(s, content), format);
                inst.task_id = t.task_id;
                inst.instruction_text = instruction;
                out.push_back(std::move(inst));
            }
        };
        fill(t.train_instances, n_train, "train");
        fill(t.test_instances, spec.n_test, "test");
        fill(t.demonstrations, spec.n_demos, "demo");
        tasks.push_back(std::move(t));
    };
    for (std::size_t c = 0; c < bench::kContents.size(); ++c) {
        for (std::size_t which = 0; which < 2; ++which) {
            make(c, bench::seen_format(c, which), Split::Seen, spec.n_train);
        }
    }
    for (std::size_t c = 0; c < bench::kContents.size(); ++c) {
        make(c, bench::heldout_format(c), Split::Heldout, std::max<std::size_t>(1, spec.n_heldout_train));
    }
    return tasks;
}

}  // namespace kpig::runner
