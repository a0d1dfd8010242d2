#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kteval {

// Deterministic hashing. All sampling in the harness is derived from these
// so results are identical across platforms and standard libraries.

std::uint64_t fnv1a64(std::string_view text);

std::uint64_t splitmix64(std::uint64_t state);

// Mixes an arbitrary list of 64-bit words into one draw.
std::uint64_t mix_hash(std::initializer_list<std::uint64_t> words);

// Uniform double in [0, 1) from a 64-bit word.
double unit_interval(std::uint64_t word);

// Unbiased bounded draw via rejection sampling; `bound` must be > 0.
std::uint64_t bounded_rand(std::uint64_t& state, std::uint64_t bound);

// Fisher-Yates permutation of {0..n-1}, deterministic in `seed`.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

// Hex SHA-256 digest; backs content-addressed cache keys and fingerprints.
std::string sha256_hex(std::string_view data);

// String helpers.
std::string to_lower(std::string_view text);
std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);
bool starts_with_icase(std::string_view text, std::string_view prefix);

// Whitespace-delimited word count, the documented token approximation.
std::size_t approx_token_count(std::string_view text);

// Keeps the first `limit` whitespace tokens, joined by single spaces.
std::string truncate_tokens(std::string_view text, std::size_t limit);

// File IO. Writes go through a temp file + rename so readers never observe
// partial content.
std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::string_view content);
void append_line(const std::filesystem::path& path, std::string_view line);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace kteval
