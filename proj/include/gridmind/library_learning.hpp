#ifndef GRIDMIND_LIBRARY_LEARNING_HPP_
#define GRIDMIND_LIBRARY_LEARNING_HPP_

#include <string>
#include <vector>

#include "gridmind/dsl.hpp"

// Greedy MDL compression over a corpus of programs. Abstractions are closed
// instruction subsequences; each adopted one becomes a library function and
// every non-overlapping leftmost-first occurrence is rewritten as a call.
namespace gridmind::abstraction {

using dsl::Library;
using dsl::Program;

struct Abstraction {
  int id = -1;
  Program body;
  int occurrences = 0;
};

struct CompressionRound {
  std::string candidate;
  double mdl_delta = 0.0;  // reduction (positive = smaller)
  int occurrences = 0;
};

struct CompressionResult {
  Library library;
  std::vector<Program> rewritten;
  std::vector<Abstraction> adopted;
  std::vector<CompressionRound> rounds;
  double mdl_before = 0.0;
  double mdl_after = 0.0;
  double lambda = 1.5;
  int n_refactor = 1;

  // {lambda, rounds: [{candidate, mdl_delta}], mdl_before, mdl_after}
  Json report() const;
};

// sum(program sizes) + lambda * sum(library body sizes).
double mdl(const std::vector<Program>& programs, const Library& library,
           double lambda);

// Non-overlapping leftmost-first occurrences of `candidate` in `seq` and,
// where no match starts, recursively inside fork bodies.
int count_occurrences(const Program& seq, const Program& candidate);
int count_occurrences(const std::vector<Program>& corpus,
                      const Program& candidate);

// Rewrites occurrences (same matching rule) as Call(fn).
Program rewrite(const Program& seq, const Program& candidate, int fn);

// Subsequences of length >= 2 and whole fork bodies of size >= 2 that occur at
// least twice across the corpus; deduplicated, sorted by printed form.
std::vector<Program> candidates(const std::vector<Program>& programs);

struct CompressOptions {
  double lambda = 1.5;
  int max_new_functions = 16;
};

CompressionResult compress(const std::vector<Program>& programs,
                           const CompressOptions& options,
                           const Library& base = {});

inline CompressionResult compress(const std::vector<Program>& programs,
                                  double lambda, int max_new_functions) {
  return compress(programs, CompressOptions{lambda, max_new_functions});
}

}  // namespace gridmind::abstraction

#endif  // GRIDMIND_LIBRARY_LEARNING_HPP_
