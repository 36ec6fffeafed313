#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "xicl/eval.hpp"
#include "xicl/net.hpp"

namespace xicl {

/// Owns everything an experiment run needs, resolved from an
/// ExperimentConfig: dataset, catalogs, client objects, per-source indexes.
class ExperimentRuntime {
 public:
  explicit ExperimentRuntime(const ExperimentConfig& config) : config_(config) {
    auto descriptor = DatasetDescriptor::load(config.descriptor_path);
    dataset_ = load_dataset(config.dataset_dir, descriptor, &warnings_);
    verbalizers_ = VerbalizerRegistry::load(config.verbalizers_path);
    if (!config.catalog_path.empty()) {
      catalog_ = AlignerCatalog::load(config.catalog_path);
      has_catalog_ = true;
    }
    if (!config.cache_path.empty()) cache_ = ReplayCache::open(config.cache_path);

    embedder_ = make_embedder(config);
    scorer_ = make_scorer(config);
    if (!config.spanfill.is_null()) spanfill_ = make_spanfill(config);

    bool needs_index = false;
    for (const auto& s : config.strategies)
      if (strategy_uses_index(s.strategy)) needs_index = true;
    if (needs_index && config.k > 0) {
      for (const auto& src : config.sources) {
        if (indexes_.count(src)) continue;
        const auto& train = dataset_.split(src, Split::train);
        indexes_.emplace(src, EmbeddingIndex::build(train, *embedder_));
      }
    }
  }

  EvalDeps deps() {
    EvalDeps d;
    d.dataset = &dataset_;
    d.verbalizers = &verbalizers_;
    d.catalog = has_catalog_ ? &catalog_ : nullptr;
    for (const auto& [lang, index] : indexes_) d.indexes[lang] = &index;
    d.embedder = embedder_.get();
    d.scorer = scorer_.get();
    d.spanfill = spanfill_.get();
    return d;
  }

  RunOutput run() { return run_experiment(config_, deps()); }

  const Dataset& dataset() const { return dataset_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::shared_ptr<ReplayCache> cache() const { return cache_; }

 private:
  std::shared_ptr<HttpTransport> make_transport(const nlohmann::json& j) {
    if (config_.offline) return std::make_shared<DisabledTransport>();
    std::string host = j.value("host", std::string("127.0.0.1"));
    int port = j.value("port", 80);
    int timeout_ms = j.value("timeout_ms", 5000);
    return std::make_shared<HttplibTransport>(host, port, timeout_ms);
  }

  static RetryPolicy retry_policy(const nlohmann::json& j) {
    RetryPolicy p;
    p.max_attempts = j.value("max_attempts", 3);
    return p;
  }

  std::shared_ptr<EmbeddingProvider> make_embedder(
      const ExperimentConfig& config) {
    std::string mode = config.embedder.value("mode", std::string("test"));
    if (mode == "test") return std::make_shared<TestEmbedder>();
    if (mode == "http")
      return std::make_shared<HttpEmbedder>(make_transport(config.embedder),
                                            retry_policy(config.embedder),
                                            cache_);
    throw ValidationError("unknown embedder mode '" + mode + "'");
  }

  std::shared_ptr<ScorerClient> make_scorer(const ExperimentConfig& config) {
    std::string mode = config.scorer.value("mode", std::string("hash"));
    if (mode == "hash")
      return std::make_shared<HashMockScorer>(
          config.scorer.value("key", std::uint64_t{0}));
    if (mode == "keyword") {
      if (!config.scorer.contains("lexicon"))
        throw ValidationError("keyword scorer needs a 'lexicon'");
      auto lexicon = KeywordLexicon::from_json(config.scorer.at("lexicon"));
      std::string scope_name =
          config.scorer.value("scope", std::string("test_segment"));
      KeywordScope scope;
      if (scope_name == "test_segment")
        scope = KeywordScope::test_segment;
      else if (scope_name == "full_prompt")
        scope = KeywordScope::full_prompt;
      else
        throw ValidationError("unknown keyword scope '" + scope_name + "'");
      return std::make_shared<KeywordMockScorer>(std::move(lexicon), scope,
                                                 config.sep);
    }
    if (mode == "http")
      return std::make_shared<HttpScorer>(make_transport(config.scorer),
                                          retry_policy(config.scorer), cache_);
    throw ValidationError("unknown scorer mode '" + mode + "'");
  }

  std::shared_ptr<SpanFillClient> make_spanfill(
      const ExperimentConfig& config) {
    std::string mode = config.spanfill.value("mode", std::string("fixed"));
    if (mode == "fixed")
      return std::make_shared<FixedSpanFill>(
          config.spanfill.value("span", std::string("that is to say")));
    if (mode == "http")
      return std::make_shared<HttpSpanFill>(make_transport(config.spanfill),
                                            retry_policy(config.spanfill),
                                            cache_);
    throw ValidationError("unknown spanfill mode '" + mode + "'");
  }

  ExperimentConfig config_;
  Dataset dataset_;
  VerbalizerRegistry verbalizers_;
  AlignerCatalog catalog_;
  bool has_catalog_ = false;
  std::shared_ptr<ReplayCache> cache_;
  std::shared_ptr<EmbeddingProvider> embedder_;
  std::shared_ptr<ScorerClient> scorer_;
  std::shared_ptr<SpanFillClient> spanfill_;
  std::map<LanguageCode, EmbeddingIndex> indexes_;
  std::vector<std::string> warnings_;
};

/// Applies `--set dotted.key=value` style overrides onto raw config JSON,
/// last one wins. Values parse as JSON when possible, else as strings.
inline void apply_override(nlohmann::json& config, const std::string& key,
                           const std::string& value) {
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;
  }
  nlohmann::json* node = &config;
  std::size_t start = 0;
  for (;;) {
    auto dot = key.find('.', start);
    std::string part = key.substr(start, dot - start);
    if (part.empty()) throw ValidationError("bad override key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline nlohmann::json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return j;
}

}  // namespace xicl
