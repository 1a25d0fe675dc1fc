#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "kpig/common.hpp"

namespace kpig::net {

/// Sends one JSON request and returns the JSON response.
using Transport = std::function<nlohmann::json(const nlohmann::json& request)>;

struct RemoteConfig {
    std::string endpoint;         ///< http://host[:port]/path
    std::string model;            ///< forwarded in every request
    std::string token_env;        ///< environment variable holding the bearer token
    double timeout_seconds = 60.0;
    std::string transcript_path;  ///< empty: no transcript
};

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ContractError("endpoint '" + url + "' lacks a scheme");
    }
    const std::string scheme = url.substr(0, scheme_end);
    if (scheme != "http") {
        throw ContractError("endpoint scheme '" + scheme + "' is not supported (http only)");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    ParsedUrl out;
    out.scheme_host_port = path_start == std::string::npos ? url : url.substr(0, path_start);
    out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
    return out;
}

/// POSTs JSON to the configured endpoint.
inline Transport http_transport(const RemoteConfig& config) {
    const ParsedUrl url = parse_url(config.endpoint);
    std::string token;
    if (!config.token_env.empty()) {
        if (const char* v = std::getenv(config.token_env.c_str())) {
            token = v;
        }
    }
    auto client = std::make_shared<httplib::Client>(url.scheme_host_port);
    const auto secs = static_cast<time_t>(config.timeout_seconds);
    const auto usecs = static_cast<time_t>((config.timeout_seconds - static_cast<double>(secs)) * 1e6);
    client->set_connection_timeout(secs, usecs);
    client->set_read_timeout(secs, usecs);
    client->set_write_timeout(secs, usecs);
    auto mutex = std::make_shared<std::mutex>();
    return [client, mutex, path = url.path, token, model = config.model](const nlohmann::json& request) {
        nlohmann::json body = request;
        if (!model.empty()) {
            body["model"] = model;
        }
        httplib::Headers headers;
        if (!token.empty()) {
            headers.emplace("Authorization", "Bearer " + token);
        }
        std::lock_guard lock(*mutex);
        auto res = client->Post(path, headers, body.dump(), "application/json");
        if (!res) {
            throw ClientError("request to " + path + " failed: " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw ClientError("request to " + path + " returned HTTP " + std::to_string(res->status));
        }
        auto parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded()) {
            throw ClientError("response from " + path + " is not JSON");
        }
        return parsed;
    };
}

/// Appends every request/response pair to a line-delimited transcript.
inline Transport recording(Transport inner, const std::string& transcript_path) {
    auto mutex = std::make_shared<std::mutex>();
    return [inner = std::move(inner), transcript_path, mutex](const nlohmann::json& request) {
        nlohmann::json response = inner(request);
        std::lock_guard lock(*mutex);
        std::ofstream out(transcript_path, std::ios::app);
        if (!out) {
            throw ClientError("cannot append to transcript '" + transcript_path + "'");
        }
        out << nlohmann::json{{"request", request}, {"response", response}}.dump() << '\n';
        return response;
    };
}

/// Answers requests from a recorded transcript, matching the request exactly.
inline Transport replay(const std::string& transcript_path) {
    std::ifstream in(transcript_path);
    if (!in) {
        throw ClientError("cannot open transcript '" + transcript_path + "'");
    }
    auto table = std::make_shared<std::map<std::string, nlohmann::json>>();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        auto entry = nlohmann::json::parse(line, nullptr, false);
        if (entry.is_discarded() || !entry.contains("request") || !entry.contains("response")) {
            throw ClientError("malformed transcript line in '" + transcript_path + "'");
        }
        nlohmann::json request = entry["request"];
        request.erase("model");
        (*table)[request.dump()] = entry["response"];
    }
    return [table](const nlohmann::json& request) {
        nlohmann::json key = request;
        key.erase("model");
        auto it = table->find(key.dump());
        if (it == table->end()) {
            throw ClientError("request not found in transcript");
        }
        return it->second;
    };
}

inline Transport make_transport(const RemoteConfig& config) {
    Transport t = http_transport(config);
    if (!config.transcript_path.empty()) {
        t = recording(std::move(t), config.transcript_path);
    }
    return t;
}

}  // namespace kpig::net
