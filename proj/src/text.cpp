#include "triage/text.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "triage/error.hpp"

namespace triage::text {

namespace {

// ASCII folding of U+00C0..U+024F (canonical decomposition with marks removed,
// plus ligatures and stroked letters that have no decomposition).
constexpr char32_t kFoldFirst = 0xC0;
constexpr std::array<const char*, 0x250 - 0xC0> kFoldTable = {
    "a", "a", "a", "a", "a", "a", "ae", "c",
    "e", "e", "e", "e", "i", "i", "i", "i",
    "d", "n", "o", "o", "o", "o", "o", "",
    "o", "u", "u", "u", "u", "y", "th", "ss",
    "a", "a", "a", "a", "a", "a", "ae", "c",
    "e", "e", "e", "e", "i", "i", "i", "i",
    "d", "n", "o", "o", "o", "o", "o", "",
    "o", "u", "u", "u", "u", "y", "th", "y",
    "a", "a", "a", "a", "a", "a", "c", "c",
    "c", "c", "c", "c", "c", "c", "d", "d",
    "d", "d", "e", "e", "e", "e", "e", "e",
    "e", "e", "e", "e", "g", "g", "g", "g",
    "g", "g", "g", "g", "h", "h", "h", "h",
    "i", "i", "i", "i", "i", "i", "i", "i",
    "i", "i", "ij", "ij", "j", "j", "k", "k",
    "k", "l", "l", "l", "l", "l", "l", "l",
    "l", "l", "l", "n", "n", "n", "n", "n",
    "n", "n", "n", "n", "o", "o", "o", "o",
    "o", "o", "oe", "oe", "r", "r", "r", "r",
    "r", "r", "s", "s", "s", "s", "s", "s",
    "s", "s", "t", "t", "t", "t", "t", "t",
    "u", "u", "u", "u", "u", "u", "u", "u",
    "u", "u", "u", "u", "w", "w", "y", "y",
    "y", "z", "z", "z", "z", "z", "z", "s",
    "b", "", "", "", "", "", "", "",
    "", "", "", "", "", "", "", "",
    "", "", "", "", "", "", "", "i",
    "", "", "", "", "", "", "", "",
    "o", "o", "", "", "", "", "", "",
    "", "", "", "", "", "", "", "u",
    "u", "", "", "", "", "z", "z", "",
    "", "", "", "", "", "", "", "",
    "", "", "", "", "dz", "dz", "dz", "lj",
    "lj", "lj", "nj", "nj", "nj", "a", "a", "i",
    "i", "o", "o", "u", "u", "u", "u", "u",
    "u", "u", "u", "u", "u", "", "a", "a",
    "a", "a", "", "", "", "", "g", "g",
    "k", "k", "o", "o", "o", "o", "", "",
    "j", "dz", "dz", "dz", "g", "g", "", "",
    "n", "n", "a", "a", "", "", "", "",
    "a", "a", "a", "a", "e", "e", "e", "e",
    "i", "i", "i", "i", "o", "o", "o", "o",
    "r", "r", "r", "r", "u", "u", "u", "u",
    "s", "s", "t", "t", "", "", "h", "h",
    "", "", "", "", "", "", "a", "a",
    "e", "e", "o", "o", "o", "o", "o", "o",
    "o", "o", "y", "y", "", "", "", "",
    "", "", "", "", "", "", "", "",
    "", "", "", "", "", "", "", "",
    "", "", "", "", "", "", "", "",
};

bool is_combining_mark(char32_t cp) {
  return (cp >= 0x0300 && cp <= 0x036F) || (cp >= 0x1AB0 && cp <= 0x1AFF) ||
         (cp >= 0x1DC0 && cp <= 0x1DFF) || (cp >= 0x20D0 && cp <= 0x20FF) ||
         (cp >= 0xFE20 && cp <= 0xFE2F);
}

// Decodes one code point; malformed sequences yield U+FFFD and consume one byte.
char32_t decode_utf8(std::string_view s, std::size_t& pos) {
  const auto byte = [&](std::size_t i) { return static_cast<unsigned char>(s[i]); };
  const unsigned char lead = byte(pos);
  if (lead < 0x80) {
    ++pos;
    return lead;
  }
  std::size_t length = 0;
  char32_t cp = 0;
  if ((lead & 0xE0) == 0xC0) {
    length = 2;
    cp = lead & 0x1F;
  } else if ((lead & 0xF0) == 0xE0) {
    length = 3;
    cp = lead & 0x0F;
  } else if ((lead & 0xF8) == 0xF0) {
    length = 4;
    cp = lead & 0x07;
  } else {
    ++pos;
    return 0xFFFD;
  }
  if (pos + length > s.size()) {
    ++pos;
    return 0xFFFD;
  }
  for (std::size_t i = 1; i < length; ++i) {
    const unsigned char cont = byte(pos + i);
    if ((cont & 0xC0) != 0x80) {
      ++pos;
      return 0xFFFD;
    }
    cp = (cp << 6) | (cont & 0x3F);
  }
  pos += length;
  return cp;
}

}  // namespace

std::string fold(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const char32_t cp = decode_utf8(text, pos);
    if (cp < 0x80) {
      const char c = static_cast<char>(cp);
      if (c >= 'A' && c <= 'Z') {
        out.push_back(static_cast<char>(c - 'A' + 'a'));
      } else if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) {
        out.push_back(c);
      } else {
        out.push_back(' ');
      }
    } else if (is_combining_mark(cp)) {
      continue;
    } else if (cp >= kFoldFirst && cp < kFoldFirst + kFoldTable.size()) {
      const char* folded = kFoldTable[cp - kFoldFirst];
      out += (*folded != '\0') ? folded : " ";
    } else {
      out.push_back(' ');
    }
  }
  return out;
}

TokenSeq preprocess(std::string_view text, const StopwordSet& stopwords) {
  TokenSeq tokens;
  const std::string folded = fold(text);
  std::size_t start = 0;
  while (start < folded.size()) {
    while (start < folded.size() && folded[start] == ' ') ++start;
    std::size_t end = start;
    while (end < folded.size() && folded[end] != ' ') ++end;
    if (end > start) {
      std::string token = folded.substr(start, end - start);
      if (!stopwords.contains(token)) tokens.push_back(std::move(token));
    }
    start = end;
  }
  return tokens;
}

std::string join(const TokenSeq& tokens) {
  std::string out;
  for (const auto& token : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += token;
  }
  return out;
}

StopwordSet parse_stopwords(std::string_view content) {
  StopwordSet words;
  std::size_t start = 0;
  while (start <= content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    for (auto& token : preprocess(content.substr(start, end - start))) {
      words.insert(std::move(token));
    }
    start = end + 1;
  }
  return words;
}

StopwordSet load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open stopword list " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_stopwords(buffer.str());
}

std::vector<std::string> extract_ngrams(const TokenSeq& tokens, int n_max) {
  if (n_max < 1 || n_max > 3) {
    throw Error(ErrorCode::invalid_argument, "n_max must be in [1, 3], got " + std::to_string(n_max));
  }
  std::vector<std::string> ngrams;
  for (int n = 1; n <= n_max; ++n) {
    const auto width = static_cast<std::size_t>(n);
    if (tokens.size() < width) break;
    for (std::size_t i = 0; i + width <= tokens.size(); ++i) {
      std::string gram = tokens[i];
      for (std::size_t j = 1; j < width; ++j) {
        gram.push_back('_');
        gram += tokens[i + j];
      }
      ngrams.push_back(std::move(gram));
    }
  }
  return ngrams;
}

Vocabulary::Vocabulary(std::vector<std::string> ngrams, int n_max, std::size_t max_size)
    : ngrams_(std::move(ngrams)), n_max_(n_max), max_size_(max_size) {
  if (n_max_ < 1 || n_max_ > 3) throw Error(ErrorCode::invalid_argument, "vocabulary n_max out of range");
  if (ngrams_.size() > max_size_) throw Error(ErrorCode::invalid_argument, "vocabulary exceeds max_size");
  index_.reserve(ngrams_.size());
  for (std::size_t i = 0; i < ngrams_.size(); ++i) {
    if (!index_.emplace(ngrams_[i], static_cast<std::uint32_t>(i)).second) {
      throw Error(ErrorCode::invalid_argument, "duplicate vocabulary entry '" + ngrams_[i] + "'");
    }
  }
}

std::int64_t Vocabulary::find(std::string_view ngram) const {
  const auto it = index_.find(std::string(ngram));
  return it == index_.end() ? -1 : static_cast<std::int64_t>(it->second);
}

std::string Vocabulary::serialize() const {
  std::string out = "#vocab n_max=" + std::to_string(n_max_) + " max_size=" + std::to_string(max_size_) + "\n";
  for (std::size_t i = 0; i < ngrams_.size(); ++i) {
    out += ngrams_[i];
    out.push_back('\t');
    out += std::to_string(i);
    out.push_back('\n');
  }
  return out;
}

Vocabulary Vocabulary::deserialize(std::string_view content) {
  std::istringstream in{std::string(content)};
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::parse_error, "empty vocabulary");
  int n_max = 0;
  std::size_t max_size = 0;
  if (std::sscanf(line.c_str(), "#vocab n_max=%d max_size=%zu", &n_max, &max_size) != 2) {
    throw Error(ErrorCode::parse_error, "bad vocabulary header: " + line);
  }
  std::map<std::size_t, std::string> by_index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCode::parse_error, "vocabulary line " + std::to_string(line_no) + " lacks a tab");
    }
    std::size_t index = 0;
    try {
      index = std::stoull(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw Error(ErrorCode::parse_error, "vocabulary line " + std::to_string(line_no) + " has a bad index");
    }
    if (!by_index.emplace(index, line.substr(0, tab)).second) {
      throw Error(ErrorCode::parse_error, "duplicate vocabulary index " + std::to_string(index));
    }
  }
  std::vector<std::string> ngrams;
  ngrams.reserve(by_index.size());
  for (auto& [index, gram] : by_index) {
    if (index != ngrams.size()) throw Error(ErrorCode::parse_error, "vocabulary indices are not dense");
    ngrams.push_back(std::move(gram));
  }
  return Vocabulary(std::move(ngrams), n_max, max_size);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  out << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return deserialize(buffer.str());
}

Vocabulary build_vocabulary(const std::vector<TokenSeq>& corpus, int n_max, std::size_t max_size) {
  if (corpus.empty()) throw Error(ErrorCode::empty_input, "cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::size_t> doc_freq;
  for (const auto& doc : corpus) {
    auto grams = extract_ngrams(doc, n_max);
    std::sort(grams.begin(), grams.end());
    grams.erase(std::unique(grams.begin(), grams.end()), grams.end());
    for (auto& gram : grams) ++doc_freq[std::move(gram)];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(doc_freq.begin(), doc_freq.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  if (ranked.size() > max_size) ranked.resize(max_size);
  std::vector<std::string> ngrams;
  ngrams.reserve(ranked.size());
  for (auto& entry : ranked) ngrams.push_back(std::move(entry.first));
  return Vocabulary(std::move(ngrams), n_max, max_size);
}

SparseVector vectorize(const TokenSeq& tokens, const Vocabulary& vocab, bool binary) {
  std::map<std::uint32_t, std::uint32_t> counts;
  for (const auto& gram : extract_ngrams(tokens, vocab.n_max())) {
    const auto index = vocab.find(gram);
    if (index < 0) continue;
    auto& count = counts[static_cast<std::uint32_t>(index)];
    count = binary ? 1 : count + 1;
  }
  SparseVector vec;
  vec.dimension = vocab.size();
  vec.pairs.assign(counts.begin(), counts.end());
  return vec;
}

}  // namespace triage::text
