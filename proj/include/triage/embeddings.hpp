#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "triage/models.hpp"
#include "triage/text.hpp"

namespace triage::reason {

inline constexpr std::size_t kDefaultTruncation = 64;

/// Dense vectors keyed by ticket id.
///
/// Binary layout (little-endian):
///   "TEMB" | u32 version = 1 | u64 count | u32 dimension
///   count x ( u32 id_length | id bytes | dimension x f32 )
/// Text debug layout: a "count dimension" header line, then
///   "id<TAB>v1 v2 ... vD" per row.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dimension = 0) : dimension_(dimension) {}

  std::size_t dimension() const { return dimension_; }
  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  /// Throws dimension_mismatch on a wrong-length vector, invalid_argument on a duplicate id.
  void add(std::string id, std::span<const float> vector);
  /// nullptr when absent.
  const float* find(std::string_view id) const;
  std::span<const float> row(std::size_t i) const { return {values_.data() + i * dimension_, dimension_}; }

  void save_binary(const std::filesystem::path& path) const;
  void save_text(const std::filesystem::path& path) const;
  static EmbeddingTable load_binary(const std::filesystem::path& path);
  static EmbeddingTable load_text(const std::filesystem::path& path);
  /// Picks the format from the leading magic bytes.
  static EmbeddingTable load(const std::filesystem::path& path);

  bool operator==(const EmbeddingTable& other) const {
    return dimension_ == other.dimension_ && ids_ == other.ids_ && values_ == other.values_;
  }

 private:
  std::size_t dimension_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct TextInput {
  std::string id;
  std::string text;
};

/// Source of the text half of the fused feature vector.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t dimension() const = 0;
  /// Every returned row has `dimension()` columns.
  virtual ml::FeatureRow embed(const TextInput& input) const = 0;
  /// Everything needed to rebuild the provider, relative to an artifact directory.
  virtual nlohmann::json config() const = 0;
  /// Writes any side files the config refers to.
  virtual void save_assets(const std::filesystem::path& dir) const { (void)dir; }
};

/// Unigram bag of words over the first `truncation` preprocessed tokens.
class BowProvider final : public EmbeddingProvider {
 public:
  BowProvider(text::Vocabulary vocabulary, text::StopwordSet stopwords, std::size_t truncation = kDefaultTruncation,
              bool binary = false);

  /// Builds the vocabulary from training texts.
  static BowProvider fit(std::span<const std::string> texts, text::StopwordSet stopwords, std::size_t max_size = 5000,
                         std::size_t truncation = kDefaultTruncation, bool binary = false);

  std::string kind() const override { return "bow"; }
  std::size_t dimension() const override { return vocabulary_.size(); }
  ml::FeatureRow embed(const TextInput& input) const override;
  nlohmann::json config() const override;
  void save_assets(const std::filesystem::path& dir) const override;

  const text::Vocabulary& vocabulary() const { return vocabulary_; }
  text::TokenSeq tokens(std::string_view text) const;

 private:
  text::Vocabulary vocabulary_;
  text::StopwordSet stopwords_;
  std::size_t truncation_;
  bool binary_;
};

/// Precomputed vectors looked up by ticket id.
class FileProvider final : public EmbeddingProvider {
 public:
  FileProvider(std::shared_ptr<const EmbeddingTable> table, std::filesystem::path source);

  std::string kind() const override { return "file"; }
  std::size_t dimension() const override { return table_->dimension(); }
  ml::FeatureRow embed(const TextInput& input) const override;
  nlohmann::json config() const override;

 private:
  std::shared_ptr<const EmbeddingTable> table_;
  std::filesystem::path source_;
};

/// POSTs {"id", "text"} as JSON to http://host:port/path and expects {"vector": [...]}.
/// A missing or late reply is a hard error.
class RemoteProvider final : public EmbeddingProvider {
 public:
  RemoteProvider(std::string host, int port, std::string path, std::size_t dimension,
                 std::chrono::milliseconds timeout = std::chrono::milliseconds(2000),
                 std::size_t truncation = kDefaultTruncation);

  std::string kind() const override { return "remote"; }
  std::size_t dimension() const override { return dimension_; }
  ml::FeatureRow embed(const TextInput& input) const override;
  nlohmann::json config() const override;

 private:
  std::string host_;
  int port_;
  std::string path_;
  std::size_t dimension_;
  std::chrono::milliseconds timeout_;
  std::size_t truncation_;
};

/// First `limit` whitespace-separated words of `text`.
std::string truncate_words(std::string_view text, std::size_t limit);

/// Rebuilds a provider from `config()`; relative paths resolve against `dir`.
std::unique_ptr<EmbeddingProvider> make_provider(const nlohmann::json& config, const std::filesystem::path& dir);

}  // namespace triage::reason
