#pragma once

#include <optional>
#include <string>
#include <vector>

#include "kpig/lm/vocabulary.hpp"
#include "kpig/task_model.hpp"

namespace kpig::lm {

/// Text form of a model input: instruction, optional demonstrations
/// (context and output each), optional context, separated by "[SEP]".
inline std::string render_input(const std::string& instruction, const std::vector<Instance>& demos,
                                const std::optional<std::string>& context) {
    std::string s = instruction;
    s += " [SEP]";
    for (const auto& d : demos) {
        if (d.context) {
            s += " " + *d.context;
        }
        s += " [SEP] " + d.output + " [SEP]";
    }
    if (context) {
        s += " " + *context + " [SEP]";
    }
    return s;
}

inline std::vector<TokenId> input_tokens(const Vocabulary& vocab, const std::string& instruction,
                                         const std::vector<Instance>& demos,
                                         const std::optional<std::string>& context) {
    std::vector<TokenId> ids{Vocabulary::kBos};
    auto body = vocab.encode(render_input(instruction, demos, context));
    ids.insert(ids.end(), body.begin(), body.end());
    return ids;
}

/// Gold output tokens: the encoded output followed by EOS.
inline std::vector<TokenId> output_tokens(const Vocabulary& vocab, const std::string& output) {
    auto ids = vocab.encode(output);
    ids.push_back(Vocabulary::kEos);
    return ids;
}

/// Every string a task file can feed to the model, for vocabulary building.
inline std::vector<std::string> corpus_texts(const std::vector<Task>& tasks) {
    std::vector<std::string> texts;
    for (const auto& t : tasks) {
        for (const auto& k : t.instruction_pool) {
            texts.push_back(k.text);
        }
        for (const auto* group : {&t.train_instances, &t.test_instances, &t.demonstrations}) {
            for (const auto& inst : *group) {
                if (inst.context) {
                    texts.push_back(*inst.context);
                }
                texts.push_back(inst.output);
            }
        }
        if (t.annotation.scope) {
            for (const auto& c : t.annotation.scope->choices) {
                texts.push_back(c);
            }
        }
    }
    return texts;
}

}  // namespace kpig::lm
