#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "xicl/corpus.hpp"
#include "xicl/errors.hpp"
#include "xicl/util.hpp"

namespace xicl {

using Vector = std::vector<float>;

/// Cosine similarity dot(a,b)/(|a||b|), accumulated in double and clamped
/// to [-1, 1] to absorb rounding.
inline double cosine_similarity(std::span<const float> a,
                                std::span<const float> b) {
  if (a.size() != b.size())
    throw ValidationError("cosine: dimension mismatch (" +
                          std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()) + ")");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
    nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
  }
  if (na <= 0.0 || nb <= 0.0) throw ValidationError("cosine: zero-norm vector");
  double score = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(score, -1.0, 1.0);
}

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::vector<Vector> embed(const std::vector<std::string>& texts) = 0;
  virtual std::string fingerprint() const = 0;
};

// Dependency-free deterministic embedder for tests and offline mode:
// character 3-gram counts hashed into a fixed number of buckets, then
// L2-normalized. The text is padded with sentinel bytes so even one-byte
// inputs produce a nonzero vector. Identical strings embed identically.
class TestEmbedder final : public EmbeddingProvider {
 public:
  static constexpr std::size_t kDim = 256;

  std::vector<Vector> embed(const std::vector<std::string>& texts) override {
    std::vector<Vector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed_one(t));
    return out;
  }

  std::string fingerprint() const override { return "char3gram-256/v1"; }

  static Vector embed_one(std::string_view text) {
    std::string padded;
    padded.reserve(text.size() + 4);
    padded += "\x01\x01";
    padded += text;
    padded += "\x02\x02";
    std::vector<double> counts(kDim, 0.0);
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i) {
      std::uint64_t h = fnv1a64(std::string_view(padded).substr(i, 3));
      counts[h % kDim] += 1.0;
    }
    double norm = 0.0;
    for (double c : counts) norm += c * c;
    norm = std::sqrt(norm);
    Vector v(kDim);
    for (std::size_t i = 0; i < kDim; ++i)
      v[i] = static_cast<float>(counts[i] / norm);
    return v;
  }
};

/// One vector per text, in input order, all the same dimension and finite.
inline std::vector<Vector> embed_batch(EmbeddingProvider& provider,
                                       const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  auto vectors = provider.embed(texts);
  if (vectors.size() != texts.size())
    throw ProtocolError("embedder returned " + std::to_string(vectors.size()) +
                        " vectors for " + std::to_string(texts.size()) +
                        " texts");
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != dim)
      throw ProtocolError("embedder returned mixed dimensions in one batch");
    for (float c : v)
      if (!std::isfinite(c))
        throw ProtocolError("embedder returned a non-finite component");
  }
  return vectors;
}

struct SimilarityHit {
  std::int64_t example_id = 0;
  double score = 0.0;

  bool operator==(const SimilarityHit&) const = default;
};

/// Immutable store of unit-normalized vectors keyed to example ids,
/// answering exact top-k / bottom-k cosine queries. Queries are pure and
/// safe under concurrent readers.
class EmbeddingIndex {
 public:
  struct Entry {
    std::int64_t example_id;
    Vector vec;
  };

  EmbeddingIndex() = default;

  static EmbeddingIndex from_entries(std::vector<Entry> entries,
                                     std::string fingerprint) {
    EmbeddingIndex index;
    index.fingerprint_ = std::move(fingerprint);
    if (entries.empty()) throw ValidationError("cannot build an empty index");
    index.dim_ = entries.front().vec.size();
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) {
                return a.example_id < b.example_id;
              });
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& e = entries[i];
      if (i > 0 && e.example_id == entries[i - 1].example_id)
        throw ValidationError("duplicate example id " +
                              std::to_string(e.example_id) + " in index");
      if (e.vec.size() != index.dim_)
        throw ValidationError("dimension mismatch for example id " +
                              std::to_string(e.example_id));
      double norm = 0.0;
      for (float c : e.vec) {
        if (!std::isfinite(c))
          throw ValidationError("non-finite component for example id " +
                                std::to_string(e.example_id));
        norm += static_cast<double>(c) * static_cast<double>(c);
      }
      norm = std::sqrt(norm);
      if (norm <= 0.0)
        throw ValidationError("zero vector for example id " +
                              std::to_string(e.example_id));
      for (auto& c : e.vec) c = static_cast<float>(c / norm);
    }
    index.entries_ = std::move(entries);
    return index;
  }

  static EmbeddingIndex build(const std::vector<LabeledExample>& examples,
                              EmbeddingProvider& provider,
                              std::size_t batch_size = 64) {
    if (examples.empty()) throw ValidationError("cannot build an empty index");
    std::vector<Entry> entries;
    entries.reserve(examples.size());
    for (std::size_t start = 0; start < examples.size(); start += batch_size) {
      std::size_t end = std::min(start + batch_size, examples.size());
      std::vector<std::string> texts;
      texts.reserve(end - start);
      for (std::size_t i = start; i < end; ++i)
        texts.push_back(examples[i].text);
      std::vector<Vector> vectors;
      try {
        vectors = embed_batch(provider, texts);
      } catch (const Error& e) {
        throw ValidationError(
            "embedding failed for example ids " +
            std::to_string(examples[start].id) + ".." +
            std::to_string(examples[end - 1].id) + ": " + e.what());
      }
      for (std::size_t i = start; i < end; ++i)
        entries.push_back({examples[i].id, std::move(vectors[i - start])});
    }
    return from_entries(std::move(entries), provider.fingerprint());
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t dim() const { return dim_; }
  const std::string& fingerprint() const { return fingerprint_; }
  const std::vector<Entry>& entries() const { return entries_; }

  const Vector* find(std::int64_t example_id) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), example_id,
                               [](const Entry& e, std::int64_t id) {
                                 return e.example_id < id;
                               });
    if (it == entries_.end() || it->example_id != example_id) return nullptr;
    return &it->vec;
  }

  /// k highest-cosine entries, descending score, ties by ascending id.
  /// Exact: identical to a brute-force full sort.
  std::vector<SimilarityHit> top_k(std::span<const float> query,
                                   std::size_t k) const {
    return select(query, k, /*descending=*/true);
  }

  /// k lowest-cosine entries, ascending score, ties by ascending id.
  std::vector<SimilarityHit> bottom_k(std::span<const float> query,
                                      std::size_t k) const {
    return select(query, k, /*descending=*/false);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write index file: " + path.string());
    out.write(kMagic, 8);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(dim_));
    write_u64(out, entries_.size());
    write_u32(out, static_cast<std::uint32_t>(fingerprint_.size()));
    out.write(fingerprint_.data(),
              static_cast<std::streamsize>(fingerprint_.size()));
    for (const auto& e : entries_) {
      write_u64(out, static_cast<std::uint64_t>(e.example_id));
      for (float c : e.vec) {
        std::uint32_t bits;
        std::memcpy(&bits, &c, 4);
        write_u32(out, bits);
      }
    }
    if (!out) throw ValidationError("short write to index file: " + path.string());
  }

  static EmbeddingIndex load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open index file: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
      throw ValidationError("not an index file: " + path.string());
    std::uint32_t version = read_u32(in);
    if (version != kVersion)
      throw ValidationError("unsupported index version " +
                            std::to_string(version));
    std::uint32_t dim = read_u32(in);
    std::uint64_t count = read_u64(in);
    std::uint32_t fp_len = read_u32(in);
    std::string fp(fp_len, '\0');
    in.read(fp.data(), fp_len);
    std::vector<Entry> entries;
    entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      Entry e;
      e.example_id = static_cast<std::int64_t>(read_u64(in));
      e.vec.resize(dim);
      for (std::uint32_t d = 0; d < dim; ++d) {
        std::uint32_t bits = read_u32(in);
        std::memcpy(&e.vec[d], &bits, 4);
      }
      entries.push_back(std::move(e));
    }
    if (!in) throw ValidationError("truncated index file: " + path.string());
    return from_entries(std::move(entries), std::move(fp));
  }

  /// Reads (dim, count, fingerprint) without loading vectors.
  static std::tuple<std::size_t, std::size_t, std::string> peek_header(
      const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open index file: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
      throw ValidationError("not an index file: " + path.string());
    std::uint32_t version = read_u32(in);
    if (version != kVersion)
      throw ValidationError("unsupported index version " +
                            std::to_string(version));
    std::uint32_t dim = read_u32(in);
    std::uint64_t count = read_u64(in);
    std::uint32_t fp_len = read_u32(in);
    std::string fp(fp_len, '\0');
    in.read(fp.data(), fp_len);
    if (!in) throw ValidationError("truncated index file: " + path.string());
    return {dim, count, fp};
  }

 private:
  static constexpr char kMagic[9] = "XICLVIDX";
  static constexpr std::uint32_t kVersion = 1;

  std::vector<SimilarityHit> select(std::span<const float> query, std::size_t k,
                                    bool descending) const {
    if (k < 1 || k > entries_.size())
      throw ValidationError("k=" + std::to_string(k) +
                            " out of range for index of size " +
                            std::to_string(entries_.size()));
    if (query.size() != dim_)
      throw ValidationError("query dimension " + std::to_string(query.size()) +
                            " does not match index dimension " +
                            std::to_string(dim_));
    std::vector<SimilarityHit> hits;
    hits.reserve(entries_.size());
    for (const auto& e : entries_)
      hits.push_back({e.example_id, cosine_similarity(query, e.vec)});
    auto better = [descending](const SimilarityHit& a, const SimilarityHit& b) {
      if (a.score != b.score)
        return descending ? a.score > b.score : a.score < b.score;
      return a.example_id < b.example_id;
    };
    std::partial_sort(hits.begin(), hits.begin() + static_cast<long>(k),
                      hits.end(), better);
    hits.resize(k);
    return hits;
  }

  static void write_u32(std::ostream& out, std::uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                 static_cast<char>((v >> 16) & 0xFF),
                 static_cast<char>((v >> 24) & 0xFF)};
    out.write(b, 4);
  }
  static void write_u64(std::ostream& out, std::uint64_t v) {
    write_u32(out, static_cast<std::uint32_t>(v & 0xFFFFFFFFULL));
    write_u32(out, static_cast<std::uint32_t>(v >> 32));
  }
  static std::uint32_t read_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) |
           (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
  }
  static std::uint64_t read_u64(std::istream& in) {
    std::uint64_t lo = read_u32(in);
    std::uint64_t hi = read_u32(in);
    return lo | (hi << 32);
  }

  std::vector<Entry> entries_;
  std::size_t dim_ = 0;
  std::string fingerprint_;
};

}  // namespace xicl
