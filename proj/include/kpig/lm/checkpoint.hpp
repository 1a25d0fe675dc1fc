#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "kpig/common.hpp"
#include "kpig/lm/optimizer.hpp"
#include "kpig/lm/transformer.hpp"
#include "kpig/lm/vocabulary.hpp"

namespace kpig::lm {

// Layout: 8-byte magic, u32 version, u64 header length, JSON header, then the
// raw little-endian double blobs named in header["blobs"], in order.
inline constexpr char kCheckpointMagic[8] = {'K', 'P', 'I', 'G', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    Vocabulary vocab;
    Transformer model;
    AdamState optimizer;
    std::size_t time_step = 0;
};

inline nlohmann::ordered_json config_to_json(const TransformerConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model}, {"n_layers", c.n_layers},
            {"n_heads", c.n_heads},       {"context", c.context}, {"init_seed", c.init_seed},
            {"init_std", c.init_std}};
}

inline TransformerConfig config_from_json(const nlohmann::json& j) {
    TransformerConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.context = j.at("context").get<std::size_t>();
    c.init_seed = j.value("init_seed", std::uint64_t{0});
    c.init_std = j.value("init_std", 0.02);
    return c;
}

inline void save_checkpoint(const std::string& path, const Vocabulary& vocab, const Transformer& model,
                            const AdamState& opt, std::size_t time_step) {
    const auto params = model.parameters();
    nlohmann::ordered_json header;
    header["time_step"] = time_step;
    header["vocabulary"] = vocab.tokens();
    header["architecture"] = config_to_json(model.config());
    header["optimizer"] = {{"kind", "adam"},
                           {"lr", opt.config.lr},
                           {"beta1", opt.config.beta1},
                           {"beta2", opt.config.beta2},
                           {"eps", opt.config.eps},
                           {"weight_decay", opt.config.weight_decay},
                           {"grad_clip", opt.config.grad_clip},
                           {"step", opt.step}};
    header["blobs"] = nlohmann::ordered_json::array(
        {{{"name", "parameters"}, {"count", params.size()}},
         {{"name", "adam_m"}, {"count", opt.m.size()}},
         {{"name", "adam_v"}, {"count", opt.v.size()}}});
    const std::string h = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write checkpoint '" + path + "'");
    }
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t hlen = h.size();
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    auto blob = [&out](std::span<const double> data) {
        out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    };
    blob(params);
    blob(opt.m);
    blob(opt.v);
    if (!out) {
        throw Error("failed writing checkpoint '" + path + "'");
    }
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError("cannot open checkpoint '" + path + "'");
    }
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t hlen = 0;
    in.read(magic, sizeof(magic));
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw ParseError("'" + path + "' is not a checkpoint");
    }
    if (version != kCheckpointVersion) {
        throw ParseError("checkpoint '" + path + "' has version " + std::to_string(version) + ", expected " +
                         std::to_string(kCheckpointVersion));
    }
    if (hlen > (1ULL << 30)) {
        throw ParseError("checkpoint header too large");
    }
    std::string h(hlen, '\0');
    in.read(h.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(h);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("corrupt checkpoint header: ") + e.what());
    }
    Vocabulary vocab = Vocabulary::from_tokens(header.at("vocabulary").get<std::vector<std::string>>());
    Transformer model(config_from_json(header.at("architecture")));
    AdamState opt;
    const auto& o = header.at("optimizer");
    opt.config.lr = o.at("lr").get<double>();
    opt.config.beta1 = o.at("beta1").get<double>();
    opt.config.beta2 = o.at("beta2").get<double>();
    opt.config.eps = o.at("eps").get<double>();
    opt.config.weight_decay = o.at("weight_decay").get<double>();
    opt.config.grad_clip = o.at("grad_clip").get<double>();
    opt.step = o.at("step").get<std::uint64_t>();

    auto read_blob = [&in, &path](std::size_t count, std::span<double> dest) {
        if (dest.size() != count) {
            throw ParseError("checkpoint '" + path + "' blob size does not match architecture");
        }
        in.read(reinterpret_cast<char*>(dest.data()), static_cast<std::streamsize>(dest.size_bytes()));
        if (!in) {
            throw ParseError("checkpoint '" + path + "' is truncated");
        }
    };
    const auto& blobs = header.at("blobs");
    if (blobs.size() != 3) {
        throw ParseError("checkpoint '" + path + "' has unexpected blob list");
    }
    read_blob(blobs[0].at("count").get<std::size_t>(), model.parameters());
    opt.m.resize(blobs[1].at("count").get<std::size_t>());
    read_blob(opt.m.size(), opt.m);
    opt.v.resize(blobs[2].at("count").get<std::size_t>());
    read_blob(opt.v.size(), opt.v);
    return Checkpoint{std::move(vocab), std::move(model), std::move(opt), header.at("time_step").get<std::size_t>()};
}

}  // namespace kpig::lm
