#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace triage::text {

/// Lowercase, accent-free tokens drawn from [a-z0-9].
using TokenSeq = std::vector<std::string>;
using StopwordSet = std::unordered_set<std::string>;

/// Folds text to lowercase ASCII: Latin letters lose their diacritics,
/// combining marks are dropped, anything else non-alphanumeric becomes a space.
std::string fold(std::string_view text);

TokenSeq preprocess(std::string_view text, const StopwordSet& stopwords = {});

std::string join(const TokenSeq& tokens);

/// One token per line; entries are folded the same way as message text.
StopwordSet load_stopwords(const std::filesystem::path& path);
StopwordSet parse_stopwords(std::string_view content);

/// Contiguous word n-grams of lengths 1..n_max joined with '_', shorter first.
std::vector<std::string> extract_ngrams(const TokenSeq& tokens, int n_max);

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> ngrams, int n_max, std::size_t max_size);

  std::size_t size() const { return ngrams_.size(); }
  int n_max() const { return n_max_; }
  std::size_t max_size() const { return max_size_; }

  /// Column index of an n-gram, or -1.
  std::int64_t find(std::string_view ngram) const;
  const std::string& ngram(std::size_t index) const { return ngrams_.at(index); }
  const std::vector<std::string>& ngrams() const { return ngrams_; }

  /// "ngram<TAB>index" lines after a "#vocab n_max=<n> max_size=<m>" header.
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view content);

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const {
    return ngrams_ == other.ngrams_ && n_max_ == other.n_max_ && max_size_ == other.max_size_;
  }

 private:
  std::vector<std::string> ngrams_;
  std::unordered_map<std::string, std::uint32_t> index_;
  int n_max_ = 1;
  std::size_t max_size_ = 0;
};

/// Keeps the max_size n-grams with the highest document frequency; ties go to
/// the lexicographically smaller n-gram.
Vocabulary build_vocabulary(const std::vector<TokenSeq>& corpus, int n_max, std::size_t max_size);

struct SparseVector {
  std::size_t dimension = 0;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;  // (index, count)

  bool operator==(const SparseVector&) const = default;
};

/// Counts of in-vocabulary n-grams. With `binary` every present n-gram counts once.
SparseVector vectorize(const TokenSeq& tokens, const Vocabulary& vocab, bool binary = false);

}  // namespace triage::text
