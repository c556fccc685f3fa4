#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace skillmoo {

// Whitespace-delimited tokens, as views into `text`.
std::vector<std::string_view> split_tokens(std::string_view text);
std::size_t count_tokens(std::string_view text);

// Lowercase and strip leading/trailing punctuation; empty if nothing is left.
std::string normalize_word(std::string_view token);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);

// Counter-based derivation: the same (master, stream, counter) always yields the same seed.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t counter);

// Maps a 64-bit value to [-1, 1].
double unit_interval_signed(std::uint64_t bits);

std::string hex64(std::uint64_t value);

// UTC wall clock as ISO-8601 with millisecond precision.
std::string utc_timestamp();

}  // namespace skillmoo
