#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/http_client.hpp"
#include "kpig/lm/optimizer.hpp"
#include "kpig/lm/transformer.hpp"
#include "kpig/task_model.hpp"
#include "kpig/trainer.hpp"

namespace kpig::runner {

struct ClientConfig {
    std::string kind = "offline";  ///< offline | remote
    std::string endpoint;
    std::string model;
    std::string token_env;
    double timeout = 60.0;
    std::string transcript;
};

struct ExperimentConfig {
    std::string tasks_path;
    std::string output_dir = "run";
    train::Mode mode = train::Mode::KPIG;
    StreamMode stream_mode = StreamMode::ST;

    double alpha = 0.3;
    double lambda = 0.02;
    std::size_t M = 10;
    std::size_t N = 10;
    std::size_t epochs = 1;
    double lr = 3e-3;
    std::size_t batch_size = 4;
    double grad_clip = 1.0;
    std::uint64_t seed = 0;
    std::uint64_t order_seed = 0;
    std::size_t demos_for_heldout = 2;
    int pool_rounds = 30;
    std::optional<double> beta_max;
    std::size_t threads = 1;

    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t context = 256;

    std::size_t max_new_tokens = 24;
    std::optional<std::size_t> test_subset;

    ClientConfig rewriter;
    ClientConfig judge;
};

namespace detail {

inline nlohmann::ordered_json client_to_json(const ClientConfig& c) {
    return {{"kind", c.kind},         {"endpoint", c.endpoint}, {"model", c.model},
            {"token_env", c.token_env}, {"timeout", c.timeout},   {"transcript", c.transcript}};
}

inline void client_from_json(const nlohmann::json& j, ClientConfig& c) {
    c.kind = j.value("kind", c.kind);
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model = j.value("model", c.model);
    c.token_env = j.value("token_env", c.token_env);
    c.timeout = j.value("timeout", c.timeout);
    c.transcript = j.value("transcript", c.transcript);
}

/// Reads a field, reporting the dotted path on a type mismatch.
template <typename T>
void read(const nlohmann::json& obj, const char* key, const std::string& path, T& out) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return;
    }
    try {
        out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError("config field '" + path + "." + key + "' has the wrong type");
    }
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const ExperimentConfig& c) {
    nlohmann::ordered_json j;
    j["paths"] = {{"tasks", c.tasks_path}, {"output_dir", c.output_dir}};
    j["mode"] = train::to_string(c.mode);
    j["stream_mode"] = to_string(c.stream_mode);
    j["hyperparameters"] = {{"alpha", c.alpha},
                            {"lambda", c.lambda},
                            {"M", c.M},
                            {"N", c.N},
                            {"epochs", c.epochs},
                            {"lr", c.lr},
                            {"batch_size", c.batch_size},
                            {"grad_clip", c.grad_clip},
                            {"seed", c.seed},
                            {"order_seed", c.order_seed},
                            {"demos_for_heldout", c.demos_for_heldout},
                            {"pool_rounds", c.pool_rounds},
                            {"beta_max", c.beta_max ? nlohmann::ordered_json(*c.beta_max) : nlohmann::ordered_json()},
                            {"threads", c.threads}};
    j["model"] = {{"d_model", c.d_model}, {"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"context", c.context}};
    j["eval"] = {{"max_new_tokens", c.max_new_tokens},
                 {"test_subset", c.test_subset ? nlohmann::ordered_json(*c.test_subset) : nlohmann::ordered_json()}};
    j["clients"] = {{"rewriter", detail::client_to_json(c.rewriter)}, {"judge", detail::client_to_json(c.judge)}};
    return j;
}

/// Throws ContractError naming the first out-of-range field.
inline void validate(const ExperimentConfig& c) {
    auto fail = [](const std::string& field, const std::string& why) {
        throw ContractError("config field '" + field + "' " + why);
    };
    if (!(c.alpha > 0.0 && c.alpha <= 1.0)) fail("hyperparameters.alpha", "must lie in (0, 1]");
    if (!(c.lambda >= 0.0)) fail("hyperparameters.lambda", "must be >= 0");
    if (c.N < 1) fail("hyperparameters.N", "must be >= 1");
    if (c.epochs < 1) fail("hyperparameters.epochs", "must be >= 1");
    if (!(c.lr > 0.0)) fail("hyperparameters.lr", "must be > 0");
    if (c.batch_size < 1) fail("hyperparameters.batch_size", "must be >= 1");
    if (c.pool_rounds < 0) fail("hyperparameters.pool_rounds", "must be >= 0");
    if (c.beta_max && !(*c.beta_max >= 1.0)) fail("hyperparameters.beta_max", "must be >= 1");
    if (c.threads < 1) fail("hyperparameters.threads", "must be >= 1");
    if (c.d_model < 1 || c.n_heads < 1 || c.d_model % c.n_heads != 0) {
        fail("model.d_model", "must be a positive multiple of model.n_heads");
    }
    if (c.n_layers < 1) fail("model.n_layers", "must be >= 1");
    if (c.context < 8) fail("model.context", "must be >= 8");
    if (c.max_new_tokens < 1) fail("eval.max_new_tokens", "must be >= 1");
    if (c.test_subset && *c.test_subset < 1) fail("eval.test_subset", "must be >= 1");
    for (const auto& [name, client] : {std::pair{"clients.rewriter", &c.rewriter}, std::pair{"clients.judge", &c.judge}}) {
        if (client->kind != "offline" && client->kind != "remote") {
            fail(std::string(name) + ".kind", "must be offline or remote");
        }
        if (client->kind == "remote" && client->endpoint.empty()) {
            fail(std::string(name) + ".endpoint", "is required for a remote client");
        }
        if (!(client->timeout > 0.0)) fail(std::string(name) + ".timeout", "must be > 0");
    }
}

/// Parses a config document over the defaults. Unknown top-level keys are rejected.
inline ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig c = {}) {
    if (!j.is_object()) {
        throw ParseError("config must be a JSON object");
    }
    for (const auto& [key, _] : j.items()) {
        static const std::set<std::string> known{"paths", "mode", "stream_mode", "hyperparameters",
                                                 "model", "eval", "clients"};
        if (known.count(key) == 0) {
            throw ParseError("config field '" + key + "' is not recognized");
        }
    }
    if (auto p = j.find("paths"); p != j.end()) {
        detail::read(*p, "tasks", "paths", c.tasks_path);
        detail::read(*p, "output_dir", "paths", c.output_dir);
    }
    if (auto m = j.find("mode"); m != j.end()) {
        std::string s = text::trim(m->get<std::string>());
        for (auto& ch : s) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        c.mode = train::mode_from_string(s);
    }
    if (auto m = j.find("stream_mode"); m != j.end()) {
        const std::string s = m->get<std::string>();
        if (s == "ST" || s == "st") {
            c.stream_mode = StreamMode::ST;
        } else if (s == "SC" || s == "sc") {
            c.stream_mode = StreamMode::SC;
        } else {
            throw ParseError("config field 'stream_mode' must be ST or SC");
        }
    }
    if (auto h = j.find("hyperparameters"); h != j.end()) {
        const std::string path = "hyperparameters";
        detail::read(*h, "alpha", path, c.alpha);
        detail::read(*h, "lambda", path, c.lambda);
        detail::read(*h, "M", path, c.M);
        detail::read(*h, "N", path, c.N);
        detail::read(*h, "epochs", path, c.epochs);
        detail::read(*h, "lr", path, c.lr);
        detail::read(*h, "batch_size", path, c.batch_size);
        detail::read(*h, "grad_clip", path, c.grad_clip);
        detail::read(*h, "seed", path, c.seed);
        detail::read(*h, "order_seed", path, c.order_seed);
        detail::read(*h, "demos_for_heldout", path, c.demos_for_heldout);
        detail::read(*h, "pool_rounds", path, c.pool_rounds);
        detail::read(*h, "threads", path, c.threads);
        if (auto b = h->find("beta_max"); b != h->end()) {
            c.beta_max = b->is_null() ? std::nullopt : std::optional<double>(b->get<double>());
        }
    }
    if (auto m = j.find("model"); m != j.end()) {
        detail::read(*m, "d_model", "model", c.d_model);
        detail::read(*m, "n_layers", "model", c.n_layers);
        detail::read(*m, "n_heads", "model", c.n_heads);
        detail::read(*m, "context", "model", c.context);
    }
    if (auto e = j.find("eval"); e != j.end()) {
        detail::read(*e, "max_new_tokens", "eval", c.max_new_tokens);
        if (auto k = e->find("test_subset"); k != e->end()) {
            c.test_subset = k->is_null() ? std::nullopt : std::optional<std::size_t>(k->get<std::size_t>());
        }
    }
    if (auto cl = j.find("clients"); cl != j.end()) {
        if (auto r = cl->find("rewriter"); r != cl->end()) detail::client_from_json(*r, c.rewriter);
        if (auto r = cl->find("judge"); r != cl->end()) detail::client_from_json(*r, c.judge);
    }
    return c;
}

/// Applies "a.b=value" overrides to a config document. Values parse as JSON
/// when possible, otherwise as plain strings.
inline void apply_override(nlohmann::json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ParseError("override '" + assignment + "' is not of the form key=value");
    }
    const std::string key = text::trim(std::string_view(assignment).substr(0, eq));
    const std::string raw = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) {
        value = raw;
    }
    nlohmann::json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) {
            throw ParseError("override key '" + key + "' has an empty component");
        }
        if (dot == std::string::npos) {
            (*node)[part] = value;
            break;
        }
        node = &(*node)[part];
        if (!node->is_object()) {
            *node = nlohmann::json::object();
        }
        start = dot + 1;
    }
}

/// Defaults, then the file (if any), then each override in order.
inline ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    nlohmann::json doc = nlohmann::json::object();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) {
            throw ParseError("cannot open config '" + path + "'");
        }
        doc = nlohmann::json::parse(in, nullptr, false);
        if (doc.is_discarded()) {
            throw ParseError("config '" + path + "' is not valid JSON");
        }
    }
    for (const auto& o : overrides) {
        apply_override(doc, o);
    }
    ExperimentConfig c = config_from_json(doc);
    validate(c);
    return c;
}

inline void save_config(const std::string& path, const ExperimentConfig& c) {
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write config '" + path + "'");
    }
    out << to_json(c).dump(2) << '\n';
}

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : bytes) {
        h = (h ^ ch) * 0x100000001b3ULL;
    }
    std::ostringstream s;
    s << std::hex;
    s.width(16);
    s.fill('0');
    s << h;
    return s.str();
}

inline std::string config_hash(const ExperimentConfig& c) {
    return fnv1a_hex(to_json(c).dump());
}

inline train::TrainConfig train_config(const ExperimentConfig& c, const std::string& checkpoint_dir,
                                       const std::string& log_path) {
    train::TrainConfig t;
    t.alpha = c.alpha;
    t.lambda = c.lambda;
    t.replay_tasks = c.M;
    t.replay_instances = c.N;
    t.epochs = c.epochs;
    t.batch_size = c.batch_size;
    t.optimizer.lr = c.lr;
    t.optimizer.grad_clip = c.grad_clip;
    t.seed = c.seed;
    t.beta_max = c.beta_max;
    t.threads = c.threads;
    t.checkpoint_dir = checkpoint_dir;
    t.log_path = log_path;
    return t;
}

inline lm::TransformerConfig model_config(const ExperimentConfig& c, std::size_t vocab_size) {
    lm::TransformerConfig m;
    m.vocab_size = vocab_size;
    m.d_model = c.d_model;
    m.n_layers = c.n_layers;
    m.n_heads = c.n_heads;
    m.context = c.context;
    m.init_seed = c.seed;
    return m;
}

inline net::RemoteConfig remote_config(const ClientConfig& c) {
    return {c.endpoint, c.model, c.token_env, c.timeout, c.transcript};
}

}  // namespace kpig::runner
