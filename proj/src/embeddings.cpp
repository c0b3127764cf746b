#include "gridmind/embeddings.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>

namespace gridmind::embeddings {

std::string to_string(ProviderKind k) {
  switch (k) {
    case ProviderKind::Ingested: return "ingested";
    case ProviderKind::SyntheticFeaturized: return "synthetic-featurized";
    case ProviderKind::ProgramRecognition: return "program-recognition";
    case ProviderKind::BoardAutoencoder: return "board-autoencoder-target";
  }
  return "?";
}

ProviderKind parse_provider_kind(const std::string& name) {
  for (auto k : {ProviderKind::Ingested, ProviderKind::SyntheticFeaturized,
                 ProviderKind::ProgramRecognition, ProviderKind::BoardAutoencoder}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown provider kind '" + name + "'");
}

EmbeddingProvider::EmbeddingProvider(ProviderKind kind, std::size_t dim)
    : kind_(kind), dim_(dim) {
  if (dim == 0) throw ValidationError("embedding dim must be positive");
}

void EmbeddingProvider::add(const std::string& board_id, std::vector<double> v) {
  if (v.size() != dim_) {
    throw ValidationError("vector for '" + board_id + "' has dim " +
                          std::to_string(v.size()) + ", expected " +
                          std::to_string(dim_));
  }
  table_[board_id].push_back(std::move(v));
}

bool EmbeddingProvider::contains(const std::string& id) const {
  return table_.count(id) > 0;
}

const std::vector<std::vector<double>>& EmbeddingProvider::vectors(
    const std::string& id) const {
  auto it = table_.find(id);
  if (it == table_.end()) {
    throw ValidationError("embedding provider has no vector for board '" + id + "'");
  }
  return it->second;
}

const std::vector<double>& EmbeddingProvider::query(const std::string& id,
                                                    Rng& rng) const {
  const auto& vs = vectors(id);
  return vs.size() == 1 ? vs.front() : vs[uniform_index(rng, vs.size())];
}

std::vector<double> EmbeddingProvider::mean(const std::string& id) const {
  const auto& vs = vectors(id);
  std::vector<double> m(dim_, 0.0);
  for (const auto& v : vs) {
    for (std::size_t i = 0; i < dim_; ++i) m[i] += v[i];
  }
  for (double& x : m) x /= static_cast<double>(vs.size());
  return m;
}

std::vector<std::string> EmbeddingProvider::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, v] : table_) out.push_back(id);
  return out;
}

EmbeddingProvider EmbeddingProvider::shuffled(std::uint64_t seed) const {
  std::vector<std::string> keys = ids();
  std::vector<std::string> perm = keys;
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  EmbeddingProvider out(kind_, dim_);
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (const auto& v : table_.at(perm[i])) out.add(keys[i], v);
  }
  return out;
}

std::vector<Json> EmbeddingProvider::to_jsonl() const {
  std::vector<Json> lines;
  for (const auto& [id, vs] : table_) {
    for (const auto& v : vs) lines.push_back({{"board_id", id}, {"vector", v}});
  }
  return lines;
}

void EmbeddingProvider::export_jsonl(const std::filesystem::path& path) const {
  write_jsonl(path, to_jsonl());
}

EmbeddingProvider ingest_embeddings(const std::filesystem::path& path,
                                    ProviderKind kind) {
  std::optional<EmbeddingProvider> out;
  read_jsonl(path, [&](const Json& j, std::size_t line) {
    const std::string where = path.string() + ":" + std::to_string(line) + ": ";
    if (!j.is_object() || !j.contains("board_id") || !j.contains("vector") ||
        !j.at("board_id").is_string() || !j.at("vector").is_array()) {
      throw ValidationError(where + "expected {board_id, vector}");
    }
    std::vector<double> v;
    for (const auto& x : j.at("vector")) {
      if (!x.is_number()) throw ValidationError(where + "non-numeric vector entry");
      v.push_back(x.get<double>());
    }
    if (!out) {
      if (v.empty()) throw ValidationError(where + "empty vector");
      out.emplace(kind, v.size());
    }
    if (v.size() != out->dim()) {
      throw ValidationError(where + "dim " + std::to_string(v.size()) +
                            " differs from " + std::to_string(out->dim()));
    }
    out->add(j.at("board_id").get<std::string>(), std::move(v));
  });
  if (!out) throw ValidationError(path.string() + ": no embeddings");
  return std::move(*out);
}

std::string synth_describe(const Board& board, std::uint64_t permutation_seed) {
  std::vector<Cell> reds;
  for (int i = 0; i < board.area(); ++i) {
    if (board.red(i)) reds.push_back(board.cell(i));
  }
  if (reds.empty()) throw ValidationError("cannot describe an all-white board");
  Rng rng(permutation_seed);
  std::shuffle(reds.begin(), reds.end(), rng);
  std::string s = "The reds are in:";
  for (std::size_t k = 0; k < reds.size(); ++k) {
    s += " row " + std::to_string(reds[k].row + 1) + " and column " +
         std::to_string(reds[k].col + 1);
    s += k + 1 == reds.size() ? "." : ",";
  }
  return s;
}

std::vector<std::string> text_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u) || std::ispunct(u)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(u));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<double> featurize_text(std::string_view text, std::size_t dim,
                                   std::uint64_t hash_seed) {
  if (dim == 0) throw ValidationError("feature dim must be positive");
  const auto tokens = text_tokens(text);
  if (tokens.empty()) throw ValidationError("text has no tokens");
  std::vector<double> v(dim, 0.0);
  for (const auto& t : tokens) v[stable_hash(t, hash_seed) % dim] += 1.0;
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

int description_length(std::string_view text) {
  std::istringstream in{std::string(text)};
  int count = 0;
  std::string tok;
  while (in >> tok) ++count;
  return count;
}

std::vector<double> board_autoencoder_target(const Board& board) {
  std::vector<double> v(static_cast<std::size_t>(board.area()));
  for (int i = 0; i < board.area(); ++i) v[static_cast<std::size_t>(i)] = board.red(i);
  return v;
}

void DescriptionCorpus::add(Description d) {
  if (d.text.empty() || description_length(d.text) == 0) {
    throw ValidationError("empty description for board '" + d.board_id + "'");
  }
  if (d.source != "human" && d.source != "synthetic") {
    throw ValidationError("description source must be human or synthetic");
  }
  by_board_[d.board_id].push_back(std::move(d));
}

const std::vector<Description>& DescriptionCorpus::of(const std::string& id) const {
  auto it = by_board_.find(id);
  if (it == by_board_.end()) {
    throw ValidationError("no descriptions for board '" + id + "'");
  }
  return it->second;
}

std::size_t DescriptionCorpus::size() const {
  std::size_t n = 0;
  for (const auto& [id, ds] : by_board_) n += ds.size();
  return n;
}

DescriptionCorpus DescriptionCorpus::load_jsonl(const std::filesystem::path& path) {
  DescriptionCorpus c;
  read_jsonl(path, [&](const Json& j, std::size_t line) {
    try {
      c.add({j.at("board_id").get<std::string>(), j.at("text").get<std::string>(),
             j.at("source").get<std::string>()});
    } catch (const Json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return c;
}

void DescriptionCorpus::save_jsonl(const std::filesystem::path& path) const {
  std::vector<Json> lines;
  for (const auto& [id, ds] : by_board_) {
    for (const auto& d : ds) {
      lines.push_back({{"board_id", d.board_id}, {"text", d.text}, {"source", d.source}});
    }
  }
  write_jsonl(path, lines);
}

DescriptionCorpus synth_corpus(const BoardDataset& dataset, int per_board,
                               std::uint64_t seed) {
  if (per_board < 1) throw ValidationError("per_board must be at least 1");
  DescriptionCorpus c;
  for (const auto& e : dataset.entries()) {
    if (e.board.red_count() == 0) continue;
    for (int k = 0; k < per_board; ++k) {
      const auto s = derive_seed(derive_seed(seed, stable_hash(e.id)),
                                 static_cast<std::uint64_t>(k));
      c.add({e.id, synth_describe(e.board, s), "synthetic"});
    }
  }
  return c;
}

std::map<std::string, double> mean_description_lengths(
    const DescriptionCorpus& corpus) {
  std::map<std::string, double> out;
  for (const auto& [id, ds] : corpus.by_board()) {
    double s = 0.0;
    for (const auto& d : ds) s += description_length(d.text);
    out[id] = s / static_cast<double>(ds.size());
  }
  return out;
}

EmbeddingProvider featurized_provider(const DescriptionCorpus& corpus,
                                      std::size_t dim, std::uint64_t hash_seed) {
  EmbeddingProvider p(ProviderKind::SyntheticFeaturized, dim);
  for (const auto& [id, ds] : corpus.by_board()) {
    for (const auto& d : ds) p.add(id, featurize_text(d.text, dim, hash_seed));
  }
  return p;
}

EmbeddingProvider recognition_provider(const synthesis::RecognitionNet& net,
                                       const BoardDataset& dataset) {
  EmbeddingProvider p(ProviderKind::ProgramRecognition,
                      synthesis::RecognitionNet::kHidden);
  for (const auto& e : dataset.entries()) p.add(e.id, net.embed(e.board));
  return p;
}

EmbeddingProvider autoencoder_provider(const BoardDataset& dataset) {
  if (dataset.empty()) throw ValidationError("empty dataset");
  EmbeddingProvider p(ProviderKind::BoardAutoencoder,
                      static_cast<std::size_t>(dataset.at(0).board.area()));
  for (const auto& e : dataset.entries()) p.add(e.id, board_autoencoder_target(e.board));
  return p;
}

}  // namespace gridmind::embeddings
