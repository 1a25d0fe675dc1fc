#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <spdlog/spdlog.h>

namespace kpig {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or payload.
class ParseError : public Error {
public:
    using Error::Error;
};

/// A caller violated an operation's precondition.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Failure talking to an external rewriter or judge.
class ClientError : public Error {
public:
    using Error::Error;
};

/// Named library logger. Tests may swap its sinks to capture warnings.
inline std::shared_ptr<spdlog::logger> logger() {
    static std::shared_ptr<spdlog::logger> instance = [] {
        auto existing = spdlog::get("kpig");
        if (existing) {
            return existing;
        }
        auto made = spdlog::default_logger()->clone("kpig");
        spdlog::register_logger(made);
        return made;
    }();
    return instance;
}

using Rng = std::mt19937_64;

/// Independent RNG stream for (seed, purpose, index). Separate streams keep
/// e.g. replay sampling from perturbing the training shuffle.
inline Rng derive_rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : purpose) {
        h = (h ^ c) * 1099511628211ULL;
    }
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    return Rng(seq);
}

/// Uniform index in [0, n) that does not depend on the standard library's
/// distribution implementation, so draws are portable across toolchains.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
    if (n == 0) {
        throw ContractError("uniform_index: empty range");
    }
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t draw = rng();
    while (draw >= limit) {
        draw = rng();
    }
    return static_cast<std::size_t>(draw % n);
}

/// Uniform real in [0, 1) with 53 random bits.
inline double uniform_real(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Fisher-Yates shuffle built on uniform_index.
template <typename Container>
void shuffle(Container& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::size_t j = uniform_index(rng, i);
        using std::swap;
        swap(items[i - 1], items[j]);
    }
}

}  // namespace kpig
