#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "triage/embeddings.hpp"
#include "triage/error.hpp"
#include "triage/io.hpp"

using namespace triage;
using namespace triage::reason;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "triage_test_embeddings";
  fs::create_directories(dir);
  return dir / name;
}

EmbeddingTable sample_table() {
  EmbeddingTable table(3);
  const std::vector<float> a{0.5f, -1.25f, 3.0f}, b{1e-7f, 0.0f, -2.5e6f};
  table.add("t-1", a);
  table.add("t-2", b);
  return table;
}

/// Embedding service on a random local port; replies with a fixed-size vector
/// derived from the text length, or stalls when the text says so.
class FakeService {
 public:
  explicit FakeService(std::size_t dimension) {
    server_.Post("/embed", [dimension](const httplib::Request& req, httplib::Response& res) {
      const auto body = json::parse(req.body);
      const auto text = body.at("text").get<std::string>();
      if (text == "stall") std::this_thread::sleep_for(std::chrono::milliseconds(600));
      const std::size_t dim = text == "short" ? dimension - 1 : dimension;
      std::vector<double> v(dim, static_cast<double>(text.size()));
      if (!v.empty()) v[0] = static_cast<double>(body.value("id", std::string()).size());
      res.set_content(json{{"vector", v}}.dump(), "application/json");
    });
    server_.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeService() {
    server_.stop();
    thread_.join();
  }
  int port() const { return port_; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace

TEST_CASE("embedding table formats round trip") {
  const auto table = sample_table();
  table.save_binary(scratch("t.bin"));
  table.save_text(scratch("t.txt"));
  CHECK(EmbeddingTable::load_binary(scratch("t.bin")) == table);
  CHECK(EmbeddingTable::load_text(scratch("t.txt")) == table);
  CHECK(EmbeddingTable::load(scratch("t.bin")) == table);
  CHECK(EmbeddingTable::load(scratch("t.txt")) == table);
  CHECK(table.find("t-3") == nullptr);
  CHECK(table.find("t-2")[2] == -2.5e6f);
}

TEST_CASE("embedding table rejects bad input") {
  auto table = sample_table();
  const std::vector<float> wrong{1.0f};
  CHECK_THROWS_WITH_AS(table.add("t-9", wrong), doctest::Contains("dimension_mismatch"), Error);
  const std::vector<float> ok{1.0f, 2.0f, 3.0f};
  CHECK_THROWS_AS(table.add("t-1", ok), Error);

  table.save_binary(scratch("c.bin"));
  auto bytes = io::read_file(scratch("c.bin"));
  io::write_file(scratch("c.bin"), bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_WITH_AS(EmbeddingTable::load_binary(scratch("c.bin")), doctest::Contains("corrupt_file"), Error);
  bytes[4] = 9;
  io::write_file(scratch("c.bin"), bytes);
  CHECK_THROWS_WITH_AS(EmbeddingTable::load_binary(scratch("c.bin")), doctest::Contains("version_mismatch"), Error);

  io::write_file(scratch("c.txt"), "1 3\nt-1\t1 2\n");
  CHECK_THROWS_WITH_AS(EmbeddingTable::load_text(scratch("c.txt")), doctest::Contains("line 2"), Error);
  io::write_file(scratch("c.txt"), "2 3\nt-1\t1 2 3\n");
  CHECK_THROWS_AS(EmbeddingTable::load_text(scratch("c.txt")), Error);
}

TEST_CASE("bag-of-words provider truncates before counting") {
  std::vector<std::string> texts{"um dois tres quatro cinco"};
  std::string long_text;
  for (int i = 0; i < 70; ++i) long_text += "w" + std::to_string(i) + " ";
  texts.push_back(long_text);
  const auto provider = BowProvider::fit(texts, {});
  CHECK(provider.dimension() == 69);  // the fit sees truncated text too
  const auto row = provider.embed({"t", long_text});
  CHECK(row.nnz() == 64);
  for (std::size_t i = 0; i < row.nnz(); ++i) {
    const auto& gram = provider.vocabulary().ngram(row.index[i]);
    CHECK(std::stoi(gram.substr(1)) < 64);
  }
  const auto counts = provider.embed({"t", "dois dois cinco seis"});
  CHECK(counts.nnz() == 2);
  double total = 0.0;
  for (double v : counts.value) total += v;
  CHECK(total == 3.0);
}

TEST_CASE("bag-of-words provider persists") {
  const auto dir = scratch("bow");
  fs::create_directories(dir);
  const std::vector<std::string> texts{"o pagamento não caiu", "quero cancelar a visita"};
  const auto provider = BowProvider::fit(texts, {"o", "a"});
  provider.save_assets(dir);
  const auto rebuilt = make_provider(provider.config(), dir);
  CHECK(rebuilt->kind() == "bow");
  CHECK(rebuilt->dimension() == provider.dimension());
  const auto a = provider.embed({"x", "o pagamento da visita"});
  const auto b = rebuilt->embed({"x", "o pagamento da visita"});
  CHECK(a.index == b.index);
  CHECK(a.value == b.value);
}

TEST_CASE("file provider looks up ids") {
  auto table = std::make_shared<const EmbeddingTable>(sample_table());
  const FileProvider provider(table, "t.bin");
  const auto row = provider.embed({"t-1", "ignored"});
  CHECK(row.to_dense(3) == std::vector<double>{0.5, -1.25, 3.0});
  CHECK_THROWS_WITH_AS(provider.embed({"t-99", "x"}), doctest::Contains("missing_embedding"), Error);

  sample_table().save_binary(scratch("f.bin"));
  const auto rebuilt = make_provider(json{{"kind", "file"}, {"path", "f.bin"}, {"dimension", 3}}, scratch(""));
  CHECK(rebuilt->embed({"t-2", ""}).to_dense(3) == provider.embed({"t-2", ""}).to_dense(3));
  CHECK_THROWS_AS(make_provider(json{{"kind", "file"}, {"path", "f.bin"}, {"dimension", 4}}, scratch("")), Error);
  CHECK_THROWS_AS(make_provider(json{{"kind", "bert"}}, scratch("")), Error);
}

TEST_CASE("truncate_words") {
  CHECK(truncate_words("  a b\tc\n d ", 3) == "a b c");
  CHECK(truncate_words("a b", 10) == "a b");
  CHECK(truncate_words("", 4).empty());
}

TEST_CASE("remote provider") {
  FakeService service(4);
  const RemoteProvider provider("127.0.0.1", service.port(), "/embed", 4, std::chrono::milliseconds(300));
  const auto row = provider.embed({"abc", "hello"});
  CHECK(row.to_dense(4) == std::vector<double>{3.0, 5.0, 5.0, 5.0});

  std::string long_text;
  for (int i = 0; i < 80; ++i) long_text += "x ";
  CHECK(provider.embed({"", long_text}).to_dense(4)[1] == 127.0);  // 64 words joined by spaces

  CHECK_THROWS_WITH_AS(provider.embed({"a", "stall"}), doctest::Contains("remote_timeout"), Error);
  CHECK_THROWS_WITH_AS(provider.embed({"a", "short"}), doctest::Contains("dimension_mismatch"), Error);
  const RemoteProvider broken("127.0.0.1", service.port(), "/broken", 4);
  CHECK_THROWS_WITH_AS(broken.embed({"a", "b"}), doctest::Contains("remote_failure"), Error);

  const auto rebuilt = make_provider(provider.config(), ".");
  CHECK(rebuilt->embed({"abc", "hello"}).to_dense(4) == row.to_dense(4));
}

TEST_CASE("remote provider handles concurrent requests") {
  FakeService service(2);
  const RemoteProvider provider("127.0.0.1", service.port(), "/embed", 2, std::chrono::milliseconds(2000));
  std::atomic<int> good{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&, t] {
      const std::string text(static_cast<std::size_t>(t + 1), 'a');
      if (provider.embed({"id", text}).to_dense(2)[1] == static_cast<double>(t + 1)) ++good;
    });
  }
  for (auto& th : threads) th.join();
  CHECK(good == 8);
}

TEST_CASE("unreachable service is a remote failure") {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  const RemoteProvider provider("127.0.0.1", port, "/embed", 2, std::chrono::milliseconds(300));
  CHECK_THROWS_AS(provider.embed({"a", "b"}), Error);
}
