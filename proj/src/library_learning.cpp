#include "gridmind/library_learning.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <unordered_map>

namespace gridmind::abstraction {

namespace {

using dsl::Instruction;
using dsl::Op;

bool matches_at(const Program& seq, std::size_t pos, const Program& cand) {
  if (pos + cand.size() > seq.size()) return false;
  for (std::size_t k = 0; k < cand.size(); ++k) {
    if (!(seq[pos + k] == cand[k])) return false;
  }
  return true;
}

struct Tally {
  Program body;
  int positions = 0;  // overlapping count, an upper bound on real occurrences
};

void collect(const Program& seq, std::unordered_map<std::string, Tally>& out) {
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::string key = dsl::to_string(seq[i]);
    for (std::size_t j = i + 1; j < seq.size(); ++j) {
      key += ' ';
      key += dsl::to_string(seq[j]);
      auto& t = out[key];
      if (t.positions == 0) t.body.assign(seq.begin() + i, seq.begin() + j + 1);
      ++t.positions;
    }
    if (seq[i].op == Op::Fork) {
      const Program& body = seq[i].body;
      if (body.size() == 1 && dsl::program_size(body) >= 2) {
        auto& t = out[dsl::to_string(body)];
        if (t.positions == 0) t.body = body;
        ++t.positions;
      }
      collect(body, out);
    }
  }
}

double delta_for(int occurrences, int size, double lambda) {
  return occurrences * (size - 1.0) - lambda * size;
}

}  // namespace

Json CompressionResult::report() const {
  Json rs = Json::array();
  for (const auto& r : rounds) {
    rs.push_back({{"candidate", r.candidate},
                  {"mdl_delta", r.mdl_delta},
                  {"occurrences", r.occurrences}});
  }
  return {{"lambda", lambda},
          {"n_refactor", n_refactor},
          {"rounds", rs},
          {"mdl_before", mdl_before},
          {"mdl_after", mdl_after}};
}

double mdl(const std::vector<Program>& programs, const Library& library,
           double lambda) {
  double total = 0.0;
  for (const auto& p : programs) total += dsl::program_size(p);
  double lib = 0.0;
  for (const auto& f : library.functions()) lib += dsl::program_size(f);
  return total + lambda * lib;
}

int count_occurrences(const Program& seq, const Program& candidate) {
  if (candidate.empty()) return 0;
  int count = 0;
  std::size_t i = 0;
  while (i < seq.size()) {
    if (matches_at(seq, i, candidate)) {
      ++count;
      i += candidate.size();
      continue;
    }
    if (seq[i].op == Op::Fork) count += count_occurrences(seq[i].body, candidate);
    ++i;
  }
  return count;
}

int count_occurrences(const std::vector<Program>& corpus,
                      const Program& candidate) {
  int total = 0;
  for (const auto& p : corpus) total += count_occurrences(p, candidate);
  return total;
}

Program rewrite(const Program& seq, const Program& candidate, int fn) {
  Program out;
  std::size_t i = 0;
  while (i < seq.size()) {
    if (!candidate.empty() && matches_at(seq, i, candidate)) {
      out.push_back(Instruction::call(fn));
      i += candidate.size();
      continue;
    }
    if (seq[i].op == Op::Fork) {
      out.push_back(Instruction::fork(rewrite(seq[i].body, candidate, fn)));
    } else {
      out.push_back(seq[i]);
    }
    ++i;
  }
  return out;
}

std::vector<Program> candidates(const std::vector<Program>& programs) {
  std::unordered_map<std::string, Tally> tallies;
  for (const auto& p : programs) collect(p, tallies);
  std::vector<std::pair<std::string, Program>> keep;
  for (auto& [key, t] : tallies) {
    if (t.positions >= 2 && count_occurrences(programs, t.body) >= 2) {
      keep.emplace_back(key, std::move(t.body));
    }
  }
  std::sort(keep.begin(), keep.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Program> out;
  out.reserve(keep.size());
  for (auto& [k, p] : keep) out.push_back(std::move(p));
  return out;
}

CompressionResult compress(const std::vector<Program>& programs,
                           const CompressOptions& options,
                           const Library& base) {
  CompressionResult res;
  res.lambda = options.lambda;
  res.library = base;
  res.rewritten = programs;
  res.mdl_before = mdl(programs, base, options.lambda);

  for (int round = 0; round < options.max_new_functions; ++round) {
    std::unordered_map<std::string, Tally> tallies;
    for (const auto& p : res.rewritten) collect(p, tallies);

    struct Scored {
      std::string key;
      const Program* body;
      int size;
      double bound;
    };
    std::vector<Scored> pool;
    for (const auto& [key, t] : tallies) {
      if (t.positions < 2) continue;
      const int size = dsl::program_size(t.body);
      pool.push_back({key, &t.body, size,
                      delta_for(t.positions, size, options.lambda)});
    }
    // Visit in order of the optimistic bound so exact counting can stop once
    // no remaining candidate can reach the incumbent.
    std::sort(pool.begin(), pool.end(),
              [](const Scored& a, const Scored& b) { return a.bound > b.bound; });

    const Scored* best = nullptr;
    double best_delta = 0.0;
    int best_count = 0;
    for (const auto& s : pool) {
      if (s.bound <= 0.0 || (best && s.bound < best_delta)) break;
      const int count = count_occurrences(res.rewritten, *s.body);
      if (count < 2) continue;
      const double d = delta_for(count, s.size, options.lambda);
      if (d <= 0.0) continue;
      bool better = !best || d > best_delta;
      if (best && d == best_delta) {
        better = s.size < best->size ||
                 (s.size == best->size && s.key < best->key);
      }
      if (better) {
        best = &s;
        best_delta = d;
        best_count = count;
      }
    }
    if (!best) break;

    const Program body = *best->body;
    const double before = mdl(res.rewritten, res.library, options.lambda);
    const int fn = res.library.add(body);
    for (auto& p : res.rewritten) p = rewrite(p, body, fn);
    const double after = mdl(res.rewritten, res.library, options.lambda);
    assert(std::abs((before - after) - best_delta) < 1e-9);
    (void)before;
    (void)after;
    res.adopted.push_back({fn, body, best_count});
    res.rounds.push_back({best->key, best_delta, best_count});
  }
  res.mdl_after = mdl(res.rewritten, res.library, options.lambda);
  return res;
}

}  // namespace gridmind::abstraction
