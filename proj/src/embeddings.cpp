#include "triage/embeddings.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include <httplib.h>

#include "triage/error.hpp"
#include "triage/io.hpp"

namespace triage::reason {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'T', 'E', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff));
}

class Cursor {
 public:
  Cursor(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::corrupt_file, source_ + ": unexpected end of embedding file");
  }

  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

void EmbeddingTable::add(std::string id, std::span<const float> vector) {
  if (vector.size() != dimension_) {
    throw Error(ErrorCode::dimension_mismatch, "embedding for '" + id + "' has " + std::to_string(vector.size()) +
                                                   " values, expected " + std::to_string(dimension_));
  }
  if (index_.contains(id)) throw Error(ErrorCode::invalid_argument, "duplicate embedding id '" + id + "'");
  index_.emplace(id, ids_.size());
  ids_.push_back(std::move(id));
  values_.insert(values_.end(), vector.begin(), vector.end());
}

const float* EmbeddingTable::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : values_.data() + it->second * dimension_;
}

void EmbeddingTable::save_binary(const std::filesystem::path& path) const {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint64_t>(out, ids_.size());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dimension_));
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ids_[i].size()));
    out += ids_[i];
    for (float f : row(i)) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      put<std::uint32_t>(out, bits);
    }
  }
  io::write_file(path, out);
}

EmbeddingTable EmbeddingTable::load_binary(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  Cursor in(bytes, path.string());
  if (in.take(4) != std::string_view(kMagic, 4)) throw Error(ErrorCode::corrupt_file, path.string() + ": bad magic");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) {
    throw Error(ErrorCode::version_mismatch, path.string() + ": embedding format version " + std::to_string(version));
  }
  const auto count = in.get<std::uint64_t>();
  EmbeddingTable table(in.get<std::uint32_t>());
  std::vector<float> vec(table.dimension_);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto len = in.get<std::uint32_t>();
    std::string id(in.take(len));
    for (auto& f : vec) {
      const auto bits = in.get<std::uint32_t>();
      std::memcpy(&f, &bits, sizeof f);
    }
    table.add(std::move(id), vec);
  }
  if (!in.done()) throw Error(ErrorCode::corrupt_file, path.string() + ": trailing bytes after last row");
  return table;
}

void EmbeddingTable::save_text(const std::filesystem::path& path) const {
  std::ostringstream out;
  out.precision(9);
  out << ids_.size() << ' ' << dimension_ << '\n';
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    out << ids_[i] << '\t';
    const auto r = row(i);
    for (std::size_t d = 0; d < r.size(); ++d) out << (d ? " " : "") << r[d];
    out << '\n';
  }
  io::write_file(path, out.str());
}

EmbeddingTable EmbeddingTable::load_text(const std::filesystem::path& path) {
  io::LineReader reader(path);
  std::string line;
  std::size_t count = 0, dim = 0;
  if (!reader.next(line) || !(std::istringstream(line) >> count >> dim)) {
    throw Error(ErrorCode::parse_error, path.string() + ": line 1: expected 'count dimension'");
  }
  EmbeddingTable table(dim);
  std::vector<float> vec(dim);
  while (reader.next(line)) {
    if (line.empty()) continue;
    const auto where = path.string() + ": line " + std::to_string(reader.line_number());
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw Error(ErrorCode::parse_error, where + ": missing tab after id");
    std::istringstream values(line.substr(tab + 1));
    for (auto& f : vec) {
      if (!(values >> f)) throw Error(ErrorCode::dimension_mismatch, where + ": expected " + std::to_string(dim) + " values");
    }
    float extra;
    if (values >> extra) throw Error(ErrorCode::dimension_mismatch, where + ": more than " + std::to_string(dim) + " values");
    table.add(line.substr(0, tab), vec);
  }
  if (table.size() != count) {
    throw Error(ErrorCode::parse_error, path.string() + ": header announces " + std::to_string(count) + " rows, found " +
                                            std::to_string(table.size()));
  }
  return table;
}

EmbeddingTable EmbeddingTable::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  char head[4] = {};
  in.read(head, 4);
  return std::string_view(head, static_cast<std::size_t>(in.gcount())) == std::string_view(kMagic, 4) ? load_binary(path)
                                                                                                  : load_text(path);
}

// ---------------------------------------------------------------------------

BowProvider::BowProvider(text::Vocabulary vocabulary, text::StopwordSet stopwords, std::size_t truncation, bool binary)
    : vocabulary_(std::move(vocabulary)), stopwords_(std::move(stopwords)), truncation_(truncation), binary_(binary) {
  if (vocabulary_.n_max() != 1) throw Error(ErrorCode::invalid_argument, "bag-of-words provider expects a unigram vocabulary");
  if (truncation_ == 0) throw Error(ErrorCode::invalid_argument, "truncation limit must be positive");
}

BowProvider BowProvider::fit(std::span<const std::string> texts, text::StopwordSet stopwords, std::size_t max_size,
                             std::size_t truncation, bool binary) {
  BowProvider probe(text::Vocabulary({}, 1, max_size), stopwords, truncation, binary);
  std::vector<text::TokenSeq> docs;
  docs.reserve(texts.size());
  for (const auto& t : texts) docs.push_back(probe.tokens(t));
  return BowProvider(text::build_vocabulary(docs, 1, max_size), std::move(stopwords), truncation, binary);
}

text::TokenSeq BowProvider::tokens(std::string_view text) const {
  auto tokens = text::preprocess(text, stopwords_);
  if (tokens.size() > truncation_) tokens.resize(truncation_);
  return tokens;
}

ml::FeatureRow BowProvider::embed(const TextInput& input) const {
  return ml::FeatureRow::from_sparse(text::vectorize(tokens(input.text), vocabulary_, binary_));
}

json BowProvider::config() const {
  return {{"kind", "bow"}, {"vocabulary", "bow_vocabulary.txt"}, {"stopwords", "bow_stopwords.txt"},
          {"truncation", truncation_}, {"binary", binary_}};
}

void BowProvider::save_assets(const std::filesystem::path& dir) const {
  vocabulary_.save(dir / "bow_vocabulary.txt");
  std::vector<std::string> words(stopwords_.begin(), stopwords_.end());
  std::sort(words.begin(), words.end());
  std::string content;
  for (const auto& w : words) content += w + '\n';
  io::write_file(dir / "bow_stopwords.txt", content);
}

FileProvider::FileProvider(std::shared_ptr<const EmbeddingTable> table, std::filesystem::path source)
    : table_(std::move(table)), source_(std::move(source)) {
  if (!table_ || table_->dimension() == 0) throw Error(ErrorCode::invalid_argument, "file provider needs a non-empty table");
}

ml::FeatureRow FileProvider::embed(const TextInput& input) const {
  const float* v = table_->find(input.id);
  if (!v) throw Error(ErrorCode::missing_embedding, "no embedding for id '" + input.id + "'");
  std::vector<double> dense(v, v + table_->dimension());
  for (double x : dense) {
    if (!std::isfinite(x)) throw Error(ErrorCode::non_finite, "embedding for '" + input.id + "' is not finite");
  }
  return ml::FeatureRow::from_dense(dense);
}

json FileProvider::config() const {
  return {{"kind", "file"}, {"path", source_.string()}, {"dimension", table_->dimension()}};
}

RemoteProvider::RemoteProvider(std::string host, int port, std::string path, std::size_t dimension,
                               std::chrono::milliseconds timeout, std::size_t truncation)
    : host_(std::move(host)), port_(port), path_(std::move(path)), dimension_(dimension), timeout_(timeout),
      truncation_(truncation) {
  if (dimension_ == 0) throw Error(ErrorCode::invalid_argument, "remote provider dimension must be positive");
  if (timeout_.count() <= 0) throw Error(ErrorCode::invalid_argument, "remote provider timeout must be positive");
}

ml::FeatureRow RemoteProvider::embed(const TextInput& input) const {
  // one client per request keeps concurrent calls independent
  httplib::Client client(host_, port_);
  const auto sec = std::chrono::duration_cast<std::chrono::seconds>(timeout_);
  const auto usec = std::chrono::duration_cast<std::chrono::microseconds>(timeout_ - sec);
  client.set_connection_timeout(sec.count(), usec.count());
  client.set_read_timeout(sec.count(), usec.count());
  client.set_write_timeout(sec.count(), usec.count());
  const json request{{"id", input.id}, {"text", truncate_words(input.text, truncation_)}};
  const auto start = std::chrono::steady_clock::now();
  const auto res = client.Post(path_, request.dump(), "application/json");
  const auto where = "embedding service " + host_ + ":" + std::to_string(port_) + path_;
  if (!res) {
    const bool late = res.error() == httplib::Error::ConnectionTimeout ||
                      std::chrono::steady_clock::now() - start >= timeout_;
    throw Error(late ? ErrorCode::remote_timeout : ErrorCode::remote_failure,
                where + ": " + httplib::to_string(res.error()));
  }
  if (res->status != 200) throw Error(ErrorCode::remote_failure, where + ": HTTP " + std::to_string(res->status));
  std::vector<double> vec;
  try {
    vec = json::parse(res->body).at("vector").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::remote_failure, where + ": bad response: " + e.what());
  }
  if (vec.size() != dimension_) {
    throw Error(ErrorCode::dimension_mismatch, where + ": returned " + std::to_string(vec.size()) + " values, expected " +
                                                   std::to_string(dimension_));
  }
  for (double x : vec) {
    if (!std::isfinite(x)) throw Error(ErrorCode::non_finite, where + ": returned a non-finite value");
  }
  return ml::FeatureRow::from_dense(vec);
}

json RemoteProvider::config() const {
  return {{"kind", "remote"},        {"host", host_},     {"port", port_},
          {"path", path_},           {"dimension", dimension_}, {"timeout_ms", timeout_.count()},
          {"truncation", truncation_}};
}

std::string truncate_words(std::string_view text, std::size_t limit) {
  std::string out;
  std::size_t words = 0, i = 0;
  while (i < text.size() && words < limit) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const auto start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i == start) break;
    if (!out.empty()) out += ' ';
    out.append(text.substr(start, i - start));
    ++words;
  }
  return out;
}

std::unique_ptr<EmbeddingProvider> make_provider(const json& config, const std::filesystem::path& dir) {
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : dir / path;
  };
  try {
    const auto kind = config.at("kind").get<std::string>();
    if (kind == "bow") {
      auto vocab = text::Vocabulary::load(resolve(config.at("vocabulary").get<std::string>()));
      text::StopwordSet stopwords;
      if (config.contains("stopwords")) stopwords = text::load_stopwords(resolve(config.at("stopwords").get<std::string>()));
      return std::make_unique<BowProvider>(std::move(vocab), std::move(stopwords),
                                           config.value("truncation", kDefaultTruncation), config.value("binary", false));
    }
    if (kind == "file") {
      const auto path = resolve(config.at("path").get<std::string>());
      auto table = std::make_shared<const EmbeddingTable>(EmbeddingTable::load(path));
      if (config.contains("dimension") && config.at("dimension").get<std::size_t>() != table->dimension()) {
        throw Error(ErrorCode::dimension_mismatch, path.string() + " does not have the configured dimension");
      }
      return std::make_unique<FileProvider>(std::move(table), config.at("path").get<std::string>());
    }
    if (kind == "remote") {
      return std::make_unique<RemoteProvider>(
          config.at("host").get<std::string>(), config.at("port").get<int>(), config.value("path", std::string("/embed")),
          config.at("dimension").get<std::size_t>(), std::chrono::milliseconds(config.value("timeout_ms", 2000)),
          config.value("truncation", kDefaultTruncation));
    }
    throw Error(ErrorCode::invalid_argument, "unknown embedding provider kind '" + kind + "'");
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("embedding provider config: ") + e.what());
  }
}

}  // namespace triage::reason
