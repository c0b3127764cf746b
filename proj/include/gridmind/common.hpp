#ifndef GRIDMIND_COMMON_HPP_
#define GRIDMIND_COMMON_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace gridmind {

using Json = nlohmann::json;
using Rng = std::mt19937_64;

// Malformed input: bad text, schema violations, inconsistent files.
// The CLI maps this to exit code 1; every other exception maps to 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Derives an independent stream seed from a base seed and a stream index
// (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// Stable 64-bit FNV-1a over bytes, with the seed folded into the basis.
std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed = 0);

double uniform01(Rng& rng);
// Uniform integer in [0, n).
std::size_t uniform_index(Rng& rng, std::size_t n);

// Reads a JSONL file, calling `fn(line_json, line_number)` for every
// non-blank line. Parse failures raise ValidationError naming the line.
void read_jsonl(const std::filesystem::path& path,
                const std::function<void(const Json&, std::size_t)>& fn);

void write_jsonl(const std::filesystem::path& path,
                 const std::vector<Json>& lines);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

}  // namespace gridmind

#endif  // GRIDMIND_COMMON_HPP_
