#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccp {

// Violation of an algorithmic precondition (e.g. a batch missing class mass).
// The CLI maps this to exit code 1, as opposed to bad input/usage (exit 2).
class ContractError : public std::runtime_error {
public:
    explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

// Bad user input: missing files, malformed configs, invalid flag values.
// The CLI maps this to exit code 2.
class InputError : public std::runtime_error {
public:
    explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
} // namespace detail

// Derives an independent RNG stream from a master seed and a purpose tag.
// Keeps phases (dataset, warmup, iteration m, ...) decoupled so that e.g.
// early stopping in one phase cannot shift the random draws of the next.
inline Rng make_stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t sub = 0) {
    std::uint64_t s = detail::splitmix64(seed ^ detail::splitmix64(tag + 0x632be59bd9b4e019ull));
    return Rng(detail::splitmix64(s ^ detail::splitmix64(sub)));
}

namespace stream_tag {
constexpr std::uint64_t dataset    = 0x01;
constexpr std::uint64_t init       = 0x02;
constexpr std::uint64_t warmup     = 0x03;
constexpr std::uint64_t iteration  = 0x04;
constexpr std::uint64_t classifier = 0x05;
constexpr std::uint64_t baseline   = 0x06;
constexpr std::uint64_t replicate  = 0x07;
} // namespace stream_tag

} // namespace ccp
