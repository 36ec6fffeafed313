#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "xicl/embedding.hpp"

using namespace xicl;
namespace fs = std::filesystem;

namespace {

// Independent retrieval oracle: recompute every cosine with its own loop,
// full-sort all entries, take a prefix. Shares no selection code with
// EmbeddingIndex.
double oracle_cosine(const Vector& a, const Vector& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  double s = dot / (std::sqrt(na) * std::sqrt(nb));
  if (s > 1.0) s = 1.0;
  if (s < -1.0) s = -1.0;
  return s;
}

std::vector<SimilarityHit> oracle_rank(const EmbeddingIndex& index,
                                       const Vector& query, std::size_t k,
                                       bool descending) {
  std::vector<SimilarityHit> all;
  for (const auto& e : index.entries())
    all.push_back({e.example_id, oracle_cosine(query, e.vec)});
  std::sort(all.begin(), all.end(),
            [descending](const SimilarityHit& a, const SimilarityHit& b) {
              if (a.score != b.score)
                return descending ? a.score > b.score : a.score < b.score;
              return a.example_id < b.example_id;
            });
  all.resize(k);
  return all;
}

Vector random_vector(std::mt19937_64& rng, std::size_t dim) {
  // uniform in [-1, 1); mapping hand-rolled to stay platform-stable
  Vector v(dim);
  for (auto& c : v)
    c = static_cast<float>(
        static_cast<double>(rng()) / 9223372036854775808.0 - 1.0);
  return v;
}

EmbeddingIndex random_index(std::mt19937_64& rng, std::size_t n,
                            std::size_t dim) {
  std::vector<EmbeddingIndex::Entry> entries;
  for (std::size_t i = 0; i < n; ++i)
    entries.push_back({static_cast<std::int64_t>(i), random_vector(rng, dim)});
  return EmbeddingIndex::from_entries(std::move(entries), "random-test");
}

}  // namespace

TEST_CASE("cosine_similarity analytic cases") {
  CHECK(cosine_similarity(Vector{1, 0}, Vector{1, 0}) == 1.0);
  CHECK(cosine_similarity(Vector{1, 0}, Vector{0, 1}) == 0.0);
  CHECK_THAT(cosine_similarity(Vector{1, 1}, Vector{1, 0}),
             Catch::Matchers::WithinAbs(0.70710678, 1e-9));
  CHECK_THROWS_AS(cosine_similarity(Vector{0, 0}, Vector{1, 0}),
                  ValidationError);
  CHECK_THROWS_AS(cosine_similarity(Vector{1, 0}, Vector{1, 0, 0}),
                  ValidationError);
}

TEST_CASE("cosine_similarity is symmetric and scale-invariant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Vector a = random_vector(rng, 16);
    Vector b = random_vector(rng, 16);
    double ab = cosine_similarity(a, b);
    CHECK(cosine_similarity(b, a) == ab);
    double c = 0.001 + static_cast<double>(rng() % 10000) / 100.0;
    Vector ca(a);
    for (auto& x : ca) x = static_cast<float>(x * c);
    CHECK_THAT(cosine_similarity(ca, b), Catch::Matchers::WithinAbs(ab, 1e-6));
  }
}

TEST_CASE("test embedder is deterministic and batch-invariant") {
  TestEmbedder embedder;

  SECTION("identical strings embed identically") {
    auto vs = embed_batch(embedder, {"abc", "abc"});
    REQUIRE(vs.size() == 2);
    CHECK(vs[0] == vs[1]);
    CHECK(cosine_similarity(vs[0], vs[1]) == 1.0);
  }

  SECTION("empty batch gives empty result") {
    CHECK(embed_batch(embedder, {}).empty());
  }

  SECTION("a 3-text batch equals three 1-text calls") {
    std::vector<std::string> texts = {"first text", "second one", "third"};
    auto batch = embed_batch(embedder, texts);
    for (std::size_t i = 0; i < texts.size(); ++i)
      CHECK(batch[i] == embed_batch(embedder, {texts[i]})[0]);
  }

  SECTION("short and empty strings still embed to unit vectors") {
    for (const std::string& t :
         {std::string{}, std::string{"a"}, std::string{"ab"}}) {
      auto v = TestEmbedder::embed_one(t);
      double norm = 0.0;
      for (float c : v) norm += static_cast<double>(c) * c;
      CHECK_THAT(norm, Catch::Matchers::WithinAbs(1.0, 1e-6));
    }
  }
}

TEST_CASE("build_index normalizes, sorts by id, and fingerprints") {
  TestEmbedder embedder;
  std::vector<LabeledExample> examples = {
      {2, "third text", "good", LanguageCode("en")},
      {0, "some text here", "good", LanguageCode("en")},
      {1, "another line of text", "bad", LanguageCode("en")},
  };
  auto index = EmbeddingIndex::build(examples, embedder);
  CHECK(index.size() == 3);
  CHECK(index.dim() == TestEmbedder::kDim);
  CHECK(index.fingerprint() == "char3gram-256/v1");
  std::int64_t prev = -1;
  for (const auto& e : index.entries()) {
    CHECK(e.example_id > prev);
    prev = e.example_id;
    double norm = 0.0;
    for (float c : e.vec) norm += static_cast<double>(c) * c;
    CHECK_THAT(std::sqrt(norm), Catch::Matchers::WithinAbs(1.0, 1e-6));
  }

  SECTION("single example index") {
    auto one = EmbeddingIndex::build({examples[0]}, embedder);
    CHECK(one.size() == 1);
    double norm = 0.0;
    for (float c : one.entries()[0].vec) norm += static_cast<double>(c) * c;
    CHECK_THAT(std::sqrt(norm), Catch::Matchers::WithinAbs(1.0, 1e-6));
  }

  SECTION("1000 random-text vectors all normalize within 1e-6") {
    std::vector<LabeledExample> many;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 1000; ++i) {
      std::string text;
      std::size_t len = 1 + rng() % 40;
      for (std::size_t c = 0; c < len; ++c)
        text += static_cast<char>('a' + rng() % 26);
      many.push_back({i, text, "good", LanguageCode("en")});
    }
    auto big = EmbeddingIndex::build(many, embedder);
    for (const auto& e : big.entries()) {
      double norm = 0.0;
      for (float c : e.vec) norm += static_cast<double>(c) * c;
      CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("top_k and bottom_k: hand-built three-vector index") {
  auto index = EmbeddingIndex::from_entries(
      {{1, {1.0f, 0.0f}}, {2, {0.0f, 1.0f}}, {3, {0.6f, 0.8f}}}, "hand");
  Vector query{1.0f, 0.0f};

  auto top = index.top_k(query, 2);
  REQUIRE(top.size() == 2);
  CHECK(top[0].example_id == 1);
  CHECK_THAT(top[0].score, Catch::Matchers::WithinAbs(1.0, 1e-9));
  CHECK(top[1].example_id == 3);
  CHECK_THAT(top[1].score, Catch::Matchers::WithinAbs(0.6, 1e-6));
  CHECK(top == oracle_rank(index, query, 2, true));

  auto bottom = index.bottom_k(query, 1);
  REQUIRE(bottom.size() == 1);
  CHECK(bottom[0].example_id == 2);
  CHECK(bottom[0].score == 0.0);

  SECTION("k = index size gives the full ranking, and bottom reverses top") {
    auto full_top = index.top_k(query, 3);
    auto full_bottom = index.bottom_k(query, 3);
    CHECK(full_top == oracle_rank(index, query, 3, true));
    CHECK(full_bottom == oracle_rank(index, query, 3, false));
    for (std::size_t i = 0; i + 1 < full_top.size(); ++i)
      CHECK(full_top[i].score >= full_top[i + 1].score);
  }

  SECTION("k out of range") {
    CHECK_THROWS_AS(index.top_k(query, 0), ValidationError);
    CHECK_THROWS_AS(index.top_k(query, 4), ValidationError);
    CHECK_THROWS_AS(index.bottom_k(query, 4), ValidationError);
  }

  SECTION("query dimension mismatch") {
    CHECK_THROWS_AS(index.top_k(Vector{1.0f, 0.0f, 0.0f}, 1), ValidationError);
  }
}

TEST_CASE("retrieval equals the brute-force oracle on random corpora") {
  std::mt19937_64 rng(1234);
  for (int corpus = 0; corpus < 10; ++corpus) {
    auto index = random_index(rng, 500, 32);
    Vector query = random_vector(rng, 32);
    for (std::size_t k : {std::size_t{1}, std::size_t{4}, std::size_t{16}}) {
      CHECK(index.top_k(query, k) == oracle_rank(index, query, k, true));
      CHECK(index.bottom_k(query, k) == oracle_rank(index, query, k, false));
    }
  }
}

TEST_CASE("tie order is by ascending example id") {
  // duplicate vectors force exact score ties
  auto index = EmbeddingIndex::from_entries(
      {{7, {1.0f, 0.0f}}, {3, {1.0f, 0.0f}}, {5, {0.0f, 1.0f}}}, "ties");
  auto top = index.top_k(Vector{1.0f, 0.0f}, 2);
  CHECK(top[0].example_id == 3);
  CHECK(top[1].example_id == 7);
  CHECK(top == oracle_rank(index, Vector{1.0f, 0.0f}, 2, true));
}

TEST_CASE("top_k(k) is a prefix of top_k(k+1)") {
  std::mt19937_64 rng(99);
  auto index = random_index(rng, 64, 8);
  Vector query = random_vector(rng, 8);
  auto prev = index.top_k(query, 1);
  for (std::size_t k = 2; k <= index.size(); ++k) {
    auto cur = index.top_k(query, k);
    REQUIRE(cur.size() == k);
    for (std::size_t i = 0; i < prev.size(); ++i) CHECK(cur[i] == prev[i]);
    prev = cur;
  }
}

TEST_CASE("self-retrieval: top_1 of a stored vector is itself") {
  std::mt19937_64 rng(5);
  auto index = random_index(rng, 100, 16);
  for (const auto& e : index.entries()) {
    auto hit = index.top_k(e.vec, 1);
    REQUIRE(hit.size() == 1);
    CHECK(hit[0].example_id == e.example_id);
    CHECK_THAT(hit[0].score, Catch::Matchers::WithinAbs(1.0, 1e-6));
  }
}

TEST_CASE("index persistence round-trips bit-exactly") {
  auto dir = fs::temp_directory_path() / "xicl_index_test";
  fs::create_directories(dir);
  std::mt19937_64 rng(77);
  auto index = random_index(rng, 50, 24);

  auto path1 = dir / "a.idx";
  auto path2 = dir / "b.idx";
  index.save(path1);
  index.save(path2);

  auto read_bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(read_bytes(path1) == read_bytes(path2));

  auto loaded = EmbeddingIndex::load(path1);
  CHECK(loaded.size() == index.size());
  CHECK(loaded.dim() == index.dim());
  CHECK(loaded.fingerprint() == index.fingerprint());
  for (std::size_t i = 0; i < index.size(); ++i) {
    CHECK(loaded.entries()[i].example_id == index.entries()[i].example_id);
    CHECK(loaded.entries()[i].vec == index.entries()[i].vec);  // bit exact
  }

  auto path3 = dir / "c.idx";
  loaded.save(path3);
  CHECK(read_bytes(path3) == read_bytes(path1));

  SECTION("header peek matches") {
    auto [dim, count, fp] = EmbeddingIndex::peek_header(path1);
    CHECK(dim == 24);
    CHECK(count == 50);
    CHECK(fp == "random-test");
  }

  SECTION("garbage file rejected") {
    auto bad = dir / "bad.idx";
    std::ofstream(bad) << "not an index";
    CHECK_THROWS_AS(EmbeddingIndex::load(bad), ValidationError);
  }
}

TEST_CASE("rebuilding with the same provider and inputs is byte-identical") {
  TestEmbedder embedder;
  std::vector<LabeledExample> examples;
  for (int i = 0; i < 20; ++i)
    examples.push_back(
        {i, "text number " + std::to_string(i), "good", LanguageCode("en")});
  auto dir = fs::temp_directory_path() / "xicl_index_rebuild";
  fs::create_directories(dir);
  EmbeddingIndex::build(examples, embedder).save(dir / "r1.idx");
  EmbeddingIndex::build(examples, embedder).save(dir / "r2.idx");
  auto read_bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(read_bytes(dir / "r1.idx") == read_bytes(dir / "r2.idx"));
}

TEST_CASE("index construction rejects bad input") {
  CHECK_THROWS_AS(EmbeddingIndex::from_entries({}, "x"), ValidationError);
  CHECK_THROWS_WITH(EmbeddingIndex::from_entries({{42, {0.0f, 0.0f}}}, "x"),
                    Catch::Matchers::ContainsSubstring("42"));  // zero vector
  CHECK_THROWS_AS(EmbeddingIndex::from_entries(
                      {{0, {1.0f, 0.0f}}, {0, {0.0f, 1.0f}}}, "x"),
                  ValidationError);  // duplicate id
  CHECK_THROWS_AS(EmbeddingIndex::from_entries(
                      {{0, {1.0f, 0.0f}}, {1, {1.0f, 0.0f, 0.0f}}}, "x"),
                  ValidationError);  // mixed dims
}
