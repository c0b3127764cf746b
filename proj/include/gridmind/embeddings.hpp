#ifndef GRIDMIND_EMBEDDINGS_HPP_
#define GRIDMIND_EMBEDDINGS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "gridmind/board.hpp"
#include "gridmind/synthesis.hpp"

// Task-attribute vectors for boards: ingested sentence embeddings, hashed
// text features of synthetic descriptions, recognition-model embeddings,
// and flattened boards.
namespace gridmind::embeddings {

enum class ProviderKind {
  Ingested,
  SyntheticFeaturized,
  ProgramRecognition,
  BoardAutoencoder,
};

std::string to_string(ProviderKind k);
ProviderKind parse_provider_kind(const std::string& name);

class EmbeddingProvider {
 public:
  EmbeddingProvider(ProviderKind kind, std::size_t dim);

  ProviderKind kind() const { return kind_; }
  std::size_t dim() const { return dim_; }

  // Boards may hold several alternative vectors.
  void add(const std::string& board_id, std::vector<double> vector);
  bool contains(const std::string& board_id) const;
  const std::vector<std::vector<double>>& vectors(const std::string& board_id) const;
  // One alternative, uniformly at random.
  const std::vector<double>& query(const std::string& board_id, Rng& rng) const;
  std::vector<double> mean(const std::string& board_id) const;
  std::vector<std::string> ids() const;
  std::size_t size() const { return table_.size(); }

  // Same vectors with the board assignment permuted among ids.
  EmbeddingProvider shuffled(std::uint64_t seed) const;

  // JSONL {board_id, vector}, one line per alternative.
  void export_jsonl(const std::filesystem::path& path) const;
  std::vector<Json> to_jsonl() const;

  bool operator==(const EmbeddingProvider&) const = default;

 private:
  ProviderKind kind_;
  std::size_t dim_;
  std::map<std::string, std::vector<std::vector<double>>> table_;
};

// Rejects malformed lines and inconsistent dimensions, naming the line.
EmbeddingProvider ingest_embeddings(const std::filesystem::path& path,
                                    ProviderKind kind = ProviderKind::Ingested);

// "The reds are in: row R1 and column C1, ..., row Rk and column Ck." with
// 1-indexed coordinates in a seed-determined order.
std::string synth_describe(const Board& board, std::uint64_t permutation_seed);

// Lowercased tokens split on whitespace and punctuation.
std::vector<std::string> text_tokens(std::string_view text);

// Hashed bag of words, L2-normalized.
std::vector<double> featurize_text(std::string_view text, std::size_t dim = 768,
                                   std::uint64_t hash_seed = 0);

// Whitespace token count after trimming.
int description_length(std::string_view text);

// Row-major cells as 0.0 / 1.0.
std::vector<double> board_autoencoder_target(const Board& board);

struct Description {
  std::string board_id;
  std::string text;
  std::string source;  // "human" or "synthetic"

  bool operator==(const Description&) const = default;
};

class DescriptionCorpus {
 public:
  void add(Description d);
  const std::map<std::string, std::vector<Description>>& by_board() const {
    return by_board_;
  }
  const std::vector<Description>& of(const std::string& board_id) const;
  std::size_t size() const;
  bool contains(const std::string& board_id) const {
    return by_board_.count(board_id) > 0;
  }

  static DescriptionCorpus load_jsonl(const std::filesystem::path& path);
  void save_jsonl(const std::filesystem::path& path) const;

  bool operator==(const DescriptionCorpus&) const = default;

 private:
  std::map<std::string, std::vector<Description>> by_board_;
};

// `per_board` synthetic descriptions for every playable board.
DescriptionCorpus synth_corpus(const BoardDataset& dataset, int per_board,
                               std::uint64_t seed);

// Mean description length per board.
std::map<std::string, double> mean_description_lengths(
    const DescriptionCorpus& corpus);

EmbeddingProvider featurized_provider(const DescriptionCorpus& corpus,
                                      std::size_t dim, std::uint64_t hash_seed);
EmbeddingProvider recognition_provider(const synthesis::RecognitionNet& net,
                                       const BoardDataset& dataset);
EmbeddingProvider autoencoder_provider(const BoardDataset& dataset);

}  // namespace gridmind::embeddings

#endif  // GRIDMIND_EMBEDDINGS_HPP_
