#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fvae {

// Error taxonomy mirrors CLI exit codes: usage/config -> 1, data -> 2,
// numerical failure -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when an aggregation contribution violates the federation contract
// (incompatible parameter sets, foreign branch deltas).
struct ProtocolError : UsageError {
    explicit ProtocolError(const std::string& msg) : UsageError(msg) {}
};

inline int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const DataError*>(&e) != nullptr) return 2;
    if (dynamic_cast<const NumericError*>(&e) != nullptr) return 3;
    return 1;
}

// FNV-1a: stable string hash used for config fingerprints and seed
// derivation tags.
inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace fvae
