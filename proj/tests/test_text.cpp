#include "doctest.h"

#include <algorithm>
#include <map>
#include <set>

#include "triage/error.hpp"
#include "triage/rng.hpp"
#include "triage/text.hpp"

using namespace triage;
using namespace triage::text;

namespace {

std::string random_text(Rng& rng, std::size_t length) {
  static const std::vector<std::string> pieces = {"a", "B", "ç", "ã", "É", " ", "  ", "!", "9", "_", "-", "ü",
                                                  "\xcc\x81", "\xff", "o", "Não", "\t", "\xe2\x82\xac", "x", "Z"};
  std::string out;
  for (std::size_t i = 0; i < length; ++i) out += rng.pick(pieces);
  return out;
}

// Independent count of an n-gram in a token sequence.
std::size_t brute_count(const TokenSeq& tokens, const std::string& gram) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto pos = gram.find('_', start);
    parts.push_back(gram.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  std::size_t count = 0;
  for (std::size_t i = 0; i + parts.size() <= tokens.size(); ++i) {
    if (std::equal(parts.begin(), parts.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) ++count;
  }
  return count;
}

}  // namespace

TEST_CASE("preprocess strips accents, case and stopwords") {
  CHECK(preprocess("Preciso de ajuda com o contrato!", {"de", "com", "o"}) ==
        TokenSeq{"preciso", "ajuda", "contrato"});
  CHECK(preprocess("Visita de amanhã") == TokenSeq{"visita", "de", "amanha"});
  CHECK(preprocess("").empty());
  CHECK(preprocess("Ação nº 123-456, São Paulo") == TokenSeq{"acao", "n", "123", "456", "sao", "paulo"});
  // decomposed input: 'a' followed by a combining tilde
  CHECK(preprocess("amanha\xcc\x83") == TokenSeq{"amanha"});
  CHECK(preprocess("snake_case") == TokenSeq{"snake", "case"});
}

TEST_CASE("preprocess is total and idempotent on arbitrary bytes") {
  Rng rng(7);
  const StopwordSet stop = {"a", "o", "nao"};
  for (int trial = 0; trial < 500; ++trial) {
    const auto text = random_text(rng, rng.below(40));
    const auto tokens = preprocess(text, stop);
    for (const auto& token : tokens) {
      REQUIRE_FALSE(token.empty());
      for (char c : token) REQUIRE(((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')));
    }
    CHECK(preprocess(join(tokens), stop) == tokens);
  }
}

TEST_CASE("stopword list folds entries") {
  const auto words = parse_stopwords("de\nCOM\n\né\n");
  CHECK(words == StopwordSet{"de", "com", "e"});
}

TEST_CASE("shipped stopword list keeps negations") {
  const auto words = load_stopwords(std::string(TRIAGE_SOURCE_DIR) + "/config/stopwords_pt.txt");
  CHECK(words.contains("de"));
  CHECK_FALSE(words.contains("nao"));
  CHECK_FALSE(words.contains("nem"));
}

TEST_CASE("extract_ngrams orders shorter n-grams first") {
  CHECK(extract_ngrams({"a", "b", "c"}, 3) == std::vector<std::string>{"a", "b", "c", "a_b", "b_c", "a_b_c"});
  CHECK(extract_ngrams({"a"}, 3) == std::vector<std::string>{"a"});
  CHECK(extract_ngrams({}, 2).empty());
  CHECK_THROWS_AS(extract_ngrams({"a"}, 0), Error);
  CHECK_THROWS_AS(extract_ngrams({"a"}, 4), Error);
}

TEST_CASE("build_vocabulary ranks by document frequency") {
  std::vector<TokenSeq> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back({"visita", "visita"});
  for (int i = 0; i < 3; ++i) corpus.push_back({"foto", "foto", "foto", "foto"});
  const auto vocab = build_vocabulary(corpus, 1, 1);
  CHECK(vocab.size() == 1);
  CHECK(vocab.find("visita") == 0);

  const auto tie = build_vocabulary({{"zeta"}, {"alfa"}}, 1, 1);
  CHECK(tie.ngrams() == std::vector<std::string>{"alfa"});

  CHECK_THROWS_AS(build_vocabulary({}, 1, 10), Error);
}

TEST_CASE("build_vocabulary matches brute-force frequency count and ignores order") {
  Rng rng(42);
  const std::vector<std::string> words = {"a", "b", "c", "d", "e", "f", "g"};
  std::vector<TokenSeq> corpus;
  for (int i = 0; i < 200; ++i) {
    TokenSeq doc;
    for (std::size_t j = 0, n = rng.below(8); j < n; ++j) doc.push_back(rng.pick(words));
    corpus.push_back(doc);
  }
  // Oracle: document frequency via explicit set membership per document.
  std::map<std::string, std::size_t> df;
  for (const auto& doc : corpus) {
    std::set<std::string> seen;
    for (std::size_t n = 1; n <= 3; ++n) {
      for (std::size_t i = 0; i + n <= doc.size(); ++i) {
        std::string gram = doc[i];
        for (std::size_t k = 1; k < n; ++k) gram += "_" + doc[i + k];
        seen.insert(gram);
      }
    }
    for (const auto& g : seen) ++df[g];
  }
  std::vector<std::pair<std::string, std::size_t>> expected(df.begin(), df.end());
  std::stable_sort(expected.begin(), expected.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t cap = 60;
  expected.resize(std::min(cap, expected.size()));

  const auto vocab = build_vocabulary(corpus, 3, cap);
  REQUIRE(vocab.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) CHECK(vocab.ngram(i) == expected[i].first);

  auto shuffled = corpus;
  rng.shuffle(shuffled);
  CHECK(build_vocabulary(shuffled, 3, cap) == vocab);

  const auto everything = build_vocabulary(corpus, 3, 100000);
  CHECK(everything.size() == df.size());
}

TEST_CASE("vectorize counts in-vocabulary n-grams") {
  const Vocabulary vocab({"a", "b"}, 1, 10);
  const auto vec = vectorize({"a", "a", "b"}, vocab);
  CHECK(vec.dimension == 2);
  CHECK(vec.pairs == std::vector<std::pair<std::uint32_t, std::uint32_t>>{{0, 2}, {1, 1}});
  CHECK(vectorize({"x", "y"}, vocab).pairs.empty());
  CHECK(vectorize({"x", "y"}, vocab).dimension == 2);
  CHECK(vectorize({"a", "a", "b"}, vocab, true).pairs == std::vector<std::pair<std::uint32_t, std::uint32_t>>{{0, 1}, {1, 1}});
  const auto text = "Preciso cancelar a visita de amanhã";
  CHECK(vectorize(preprocess(text), vocab) == vectorize(preprocess(text), vocab));
}

TEST_CASE("vectorize agrees with brute-force n-gram counts") {
  Rng rng(3);
  const std::vector<std::string> words = {"p", "q", "r", "s"};
  std::vector<TokenSeq> corpus;
  for (int i = 0; i < 50; ++i) {
    TokenSeq doc;
    for (std::size_t j = 0, n = 1 + rng.below(10); j < n; ++j) doc.push_back(rng.pick(words));
    corpus.push_back(doc);
  }
  const auto vocab = build_vocabulary(corpus, 3, 40);
  for (const auto& doc : corpus) {
    const auto vec = vectorize(doc, vocab);
    std::uint32_t previous = 0;
    for (std::size_t i = 0; i < vec.pairs.size(); ++i) {
      const auto [index, count] = vec.pairs[i];
      REQUIRE(index < vocab.size());
      if (i > 0) REQUIRE(index > previous);
      previous = index;
      CHECK(count == brute_count(doc, vocab.ngram(index)));
    }
  }
}

TEST_CASE("vocabulary serialization is line oriented") {
  const Vocabulary vocab({"visita", "visita_amanha"}, 2, 5000);
  const auto text = vocab.serialize();
  CHECK(text == "#vocab n_max=2 max_size=5000\nvisita\t0\nvisita_amanha\t1\n");
  CHECK(Vocabulary::deserialize(text) == vocab);
  CHECK_THROWS_AS(Vocabulary::deserialize("#vocab n_max=2 max_size=5\nfoo\t1\n"), Error);
  CHECK_THROWS_AS(Vocabulary::deserialize("garbage"), Error);
}
