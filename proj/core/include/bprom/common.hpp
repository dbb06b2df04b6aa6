#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace bprom {

// Failure taxonomy; the CLI maps categories to distinct exit codes.
enum class ErrorCategory {
    Config,
    Data,
    Geometry,
    Training,
    Endpoint,
    Budget,
    Internal,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}

    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

inline const char* to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::Config: return "config";
        case ErrorCategory::Data: return "data";
        case ErrorCategory::Geometry: return "geometry";
        case ErrorCategory::Training: return "training";
        case ErrorCategory::Endpoint: return "endpoint";
        case ErrorCategory::Budget: return "budget";
        case ErrorCategory::Internal: return "internal";
    }
    return "unknown";
}

// Deterministic 64-bit stream hash (FNV-1a). Used to pin artifacts
// (query-set manifests, model parameters) across stages.
class Fnv1a {
public:
    void update(const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ull;
        }
    }

    template <typename T>
    void update_value(const T& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        update(&v, sizeof(T));
    }

    uint64_t digest() const { return state_; }

private:
    uint64_t state_ = 0xcbf29ce484222325ull;
};

uint64_t fnv1a(const void* data, size_t n);
std::string hash_hex(uint64_t h);

// SplitMix64, used to derive independent sub-seeds from one master seed.
uint64_t mix_seed(uint64_t seed, uint64_t stream);

}  // namespace bprom
