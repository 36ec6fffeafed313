#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xicl/aligner.hpp"
#include "xicl/corpus.hpp"
#include "xicl/embedding.hpp"
#include "xicl/errors.hpp"
#include "xicl/util.hpp"

namespace xicl {

/// Per-(task, language) prefixes wrapping inputs and labels, e.g.
/// "Review:" / "Rating:".
struct VerbalizerTemplate {
  LanguageCode lang;
  std::string input_prefix;
  std::string label_prefix;
};

class VerbalizerRegistry {
 public:
  void add(const std::string& task, VerbalizerTemplate tmpl) {
    if (tmpl.input_prefix.empty() || tmpl.label_prefix.empty())
      throw ValidationError("verbalizer prefixes must be non-empty (" + task +
                            ", " + tmpl.lang.str() + ")");
    templates_[{task, tmpl.lang}] = std::move(tmpl);
  }

  const VerbalizerTemplate& require(const std::string& task,
                                    const LanguageCode& lang) const {
    auto it = templates_.find({task, lang});
    if (it == templates_.end())
      throw ValidationError("no verbalizer registered for (" + task + ", " +
                            lang.str() + ")");
    return it->second;
  }

  static VerbalizerRegistry from_json(const nlohmann::json& j) {
    VerbalizerRegistry r;
    for (const auto& [task, by_lang] : j.items()) {
      for (const auto& [code, t] : by_lang.items()) {
        VerbalizerTemplate tmpl;
        tmpl.lang = LanguageCode(code);
        tmpl.input_prefix = t.at("input_prefix").get<std::string>();
        tmpl.label_prefix = t.at("label_prefix").get<std::string>();
        r.add(task, std::move(tmpl));
      }
    }
    return r;
  }

  static VerbalizerRegistry load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open verbalizers: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("verbalizers " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  std::map<std::pair<std::string, LanguageCode>, VerbalizerTemplate> templates_;
};

/// "{input_prefix} {text} {label_prefix} {verbalization}", single spaces,
/// no trailing space.
inline std::string format_demonstration(const LabeledExample& example,
                                        const VerbalizerTemplate& tmpl,
                                        const LabelSpace& space) {
  if (example.lang != tmpl.lang)
    throw ValidationError("example language '" + example.lang.str() +
                          "' does not match template language '" +
                          tmpl.lang.str() + "'");
  const std::string& verbalization = space.verbalization_of(example.label);
  return tmpl.input_prefix + " " + example.text + " " + tmpl.label_prefix +
         " " + verbalization;
}

/// Unlabeled rendering of a test input; ends at the label prefix, which is
/// the model's continuation point.
inline std::string format_test_input(const LabeledExample& example,
                                     const VerbalizerTemplate& tmpl) {
  if (example.lang != tmpl.lang)
    throw ValidationError("example language '" + example.lang.str() +
                          "' does not match template language '" +
                          tmpl.lang.str() + "'");
  return tmpl.input_prefix + " " + example.text + " " + tmpl.label_prefix;
}

/// Ordered demonstration blocks plus the separator policy. Rendered form:
/// every block is preceded by the separator token and a single space, the
/// leading separator included.
struct Context {
  std::vector<std::string> blocks;
  std::string sep;

  std::string text() const {
    std::string out;
    for (const auto& b : blocks) {
      out += sep;
      out += ' ';
      out += b;
    }
    return out;
  }
};

inline Context assemble_context(std::vector<std::string> demo_blocks,
                                std::string sep) {
  if (sep.empty()) throw ValidationError("separator token must be non-empty");
  return Context{std::move(demo_blocks), std::move(sep)};
}

enum class Strategy {
  random,
  semantic,
  dissimilar,
  task_aligned,
  x_insta,
  auto_aligner,
};

inline std::string_view strategy_name(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::semantic: return "semantic";
    case Strategy::dissimilar: return "dissimilar";
    case Strategy::task_aligned: return "task_aligned";
    case Strategy::x_insta: return "x_insta";
    case Strategy::auto_aligner: return "auto_aligner";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  for (Strategy st : {Strategy::random, Strategy::semantic,
                      Strategy::dissimilar, Strategy::task_aligned,
                      Strategy::x_insta, Strategy::auto_aligner}) {
    if (strategy_name(st) == s) return st;
  }
  throw ValidationError(
      "unknown strategy '" + std::string(s) +
      "' (valid: random, semantic, dissimilar, task_aligned, x_insta, "
      "auto_aligner)");
}

inline bool strategy_uses_index(Strategy s) {
  return s == Strategy::semantic || s == Strategy::dissimilar ||
         s == Strategy::x_insta;
}

inline bool strategy_uses_catalog(Strategy s, const AlignerVariant& v) {
  if (s != Strategy::task_aligned && s != Strategy::x_insta) return false;
  return v.kind != AlignerKind::none &&
         v.kind != AlignerKind::uniform_label_space;
}

// Pluggable token counter. The default approximates subword counts as
// ceil(whitespace-delimited words * 1.3); exact counters can be attached
// when a tokenizer endpoint is available.
using TokenCounter = std::function<int(std::string_view)>;

inline int approx_token_count(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return static_cast<int>(std::ceil(static_cast<double>(words) * 1.3));
}

inline TokenCounter default_token_counter() {
  return [](std::string_view t) { return approx_token_count(t); };
}

struct DemonstrationRef {
  std::int64_t id = 0;
  std::optional<double> score;  // similarity, when selection was score-based
  std::string rendered;
};

/// A fully resolved prompt: demonstrations in order, optional aligner, test
/// rendering, separator policy, and the assembled final text.
struct PromptPlan {
  Strategy strategy = Strategy::random;
  AlignerVariant variant;
  std::string task;
  LanguageCode src;
  LanguageCode tgt;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<DemonstrationRef> demonstrations;
  std::optional<AlignerText> aligner;
  std::int64_t test_id = 0;
  std::string test_rendered;
  std::string sep = "</s>";
  bool sep_after_aligner = true;
  std::string final_text;
  int token_count = 0;
  int dropped = 0;

  std::uint64_t digest() const { return fnv1a64(final_text); }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["strategy"] = std::string(strategy_name(strategy));
    j["variant"] = std::string(aligner_kind_name(variant.kind));
    if (variant.third) j["third_language"] = variant.third->str();
    j["task"] = task;
    j["src"] = src.str();
    j["tgt"] = tgt.str();
    j["k"] = k;
    j["seed"] = seed;
    auto demos = nlohmann::ordered_json::array();
    for (const auto& d : demonstrations) {
      nlohmann::ordered_json dj;
      dj["id"] = d.id;
      if (d.score) dj["score"] = *d.score;
      dj["rendered"] = d.rendered;
      demos.push_back(std::move(dj));
    }
    j["demonstrations"] = std::move(demos);
    if (aligner) {
      j["aligner"] = {
          {"text", aligner->text},
          {"provenance",
           aligner->provenance == AlignerText::Provenance::catalog
               ? "catalog"
               : "generated"}};
    }
    j["test_id"] = test_id;
    j["test_rendered"] = test_rendered;
    j["sep"] = sep;
    j["sep_after_aligner"] = sep_after_aligner;
    j["final_text"] = final_text;
    j["token_count"] = token_count;
    j["dropped"] = dropped;
    return j;
  }

  static PromptPlan from_json(const nlohmann::json& j) {
    PromptPlan p;
    p.strategy = parse_strategy(j.at("strategy").get<std::string>());
    p.variant.kind = parse_aligner_kind(j.at("variant").get<std::string>());
    if (j.contains("third_language"))
      p.variant.third = LanguageCode(j.at("third_language").get<std::string>());
    p.task = j.at("task").get<std::string>();
    p.src = LanguageCode(j.at("src").get<std::string>());
    p.tgt = LanguageCode(j.at("tgt").get<std::string>());
    p.k = j.at("k").get<std::size_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& dj : j.at("demonstrations")) {
      DemonstrationRef d;
      d.id = dj.at("id").get<std::int64_t>();
      if (dj.contains("score")) d.score = dj.at("score").get<double>();
      d.rendered = dj.at("rendered").get<std::string>();
      p.demonstrations.push_back(std::move(d));
    }
    if (j.contains("aligner")) {
      AlignerText a;
      a.text = j.at("aligner").at("text").get<std::string>();
      a.provenance =
          j.at("aligner").at("provenance").get<std::string>() == "generated"
              ? AlignerText::Provenance::generated
              : AlignerText::Provenance::catalog;
      a.variant = p.variant;
      p.aligner = std::move(a);
    }
    p.test_id = j.at("test_id").get<std::int64_t>();
    p.test_rendered = j.at("test_rendered").get<std::string>();
    p.sep = j.at("sep").get<std::string>();
    p.sep_after_aligner = j.at("sep_after_aligner").get<bool>();
    p.final_text = j.at("final_text").get<std::string>();
    p.token_count = j.at("token_count").get<int>();
    p.dropped = j.at("dropped").get<int>();
    return p;
  }
};

namespace detail {

// Final text layout (one line, spaces explicit):
//   [sep] demo1[sep] demo2...[sep] aligner[sep] test
// Every segment is introduced by the separator plus one space. With
// sep_after_aligner=false the test input follows the aligner after a plain
// space instead of a separator.
inline std::string assemble_final_text(
    const std::vector<DemonstrationRef>& demos,
    const std::optional<AlignerText>& aligner, const std::string& test_rendered,
    const std::string& sep, bool sep_after_aligner) {
  std::string out;
  for (const auto& d : demos) {
    out += sep;
    out += ' ';
    out += d.rendered;
  }
  if (aligner) {
    out += sep;
    out += ' ';
    out += aligner->text;
    if (!sep_after_aligner) {
      out += ' ';
      out += test_rendered;
      return out;
    }
  }
  out += sep;
  out += ' ';
  out += test_rendered;
  return out;
}

}  // namespace detail

/// Recomputes final_text from a plan's recorded parts; used to verify that
/// serialized plans reproduce their prompt byte-exactly.
inline std::string reassemble_final_text(const PromptPlan& plan) {
  return detail::assemble_final_text(plan.demonstrations, plan.aligner,
                                     plan.test_rendered, plan.sep,
                                     plan.sep_after_aligner);
}

/// Everything build_prompt may need; only the pieces the chosen strategy
/// uses must be non-null.
struct PromptDeps {
  const Dataset* dataset = nullptr;
  const VerbalizerRegistry* verbalizers = nullptr;
  const EmbeddingIndex* index = nullptr;        // semantic / dissimilar / x_insta
  EmbeddingProvider* embedder = nullptr;        // semantic / dissimilar / x_insta
  const AlignerCatalog* catalog = nullptr;      // task_aligned / x_insta
  SpanFillClient* spanfill = nullptr;           // auto_aligner
};

struct PromptOptions {
  LanguageCode src;
  LanguageCode tgt;
  std::size_t k = 4;
  std::uint64_t seed = 0;
  std::string sep = "</s>";
  bool sep_after_aligner = true;
  std::string mask_token = "[MASK]";
};

/// Builds the fully resolved prompt for one test input.
///  - random / task_aligned / auto_aligner: k seeded random demonstrations;
///  - semantic / x_insta: top-k by cosine, descending similarity;
///  - dissimilar: bottom-k, ascending similarity;
///  - aligner (when the variant yields one) goes after the last
///    demonstration and before the test input.
inline PromptPlan build_prompt(Strategy strategy, const AlignerVariant& variant,
                               const LabeledExample& test_input,
                               const PromptDeps& deps,
                               const PromptOptions& options) {
  if (!deps.dataset) throw ValidationError("build_prompt: dataset missing");
  if (!deps.verbalizers)
    throw ValidationError("build_prompt: verbalizer registry missing");
  const Dataset& dataset = *deps.dataset;
  const std::string& task = dataset.task();

  PromptPlan plan;
  plan.strategy = strategy;
  plan.variant = variant;
  plan.task = task;
  plan.src = options.src;
  plan.tgt = options.tgt;
  plan.k = options.k;
  plan.seed = options.seed;
  plan.test_id = test_input.id;
  plan.sep = options.sep;
  plan.sep_after_aligner = options.sep_after_aligner;

  const auto& src_tmpl = deps.verbalizers->require(task, options.src);
  const auto& tgt_tmpl = deps.verbalizers->require(task, options.tgt);
  const auto& src_space = dataset.label_space(options.src);
  plan.test_rendered = format_test_input(test_input, tgt_tmpl);

  // Demonstration selection. k == 0 is the zero-shot degenerate case.
  std::vector<LabeledExample> selected;
  std::vector<std::optional<double>> scores;
  if (options.k == 0) {
    // nothing to select
  } else if (strategy_uses_index(strategy)) {
    if (!deps.index || !deps.embedder)
      throw ValidationError("strategy '" +
                            std::string(strategy_name(strategy)) +
                            "' needs an embedding index and provider");
    auto queries = embed_batch(*deps.embedder, {test_input.text});
    const Vector& query = queries.front();
    auto hits = strategy == Strategy::dissimilar
                    ? deps.index->bottom_k(query, options.k)
                    : deps.index->top_k(query, options.k);
    const auto& pool = dataset.split(options.src, Split::train);
    for (const auto& hit : hits) {
      if (hit.example_id < 0 ||
          static_cast<std::size_t>(hit.example_id) >= pool.size() ||
          pool[static_cast<std::size_t>(hit.example_id)].id != hit.example_id)
        throw ValidationError("index entry id " +
                              std::to_string(hit.example_id) +
                              " not found in source train split");
      selected.push_back(pool[static_cast<std::size_t>(hit.example_id)]);
      scores.emplace_back(hit.score);
    }
  } else {
    selected = sample_random(dataset, options.src, Split::train, options.k,
                             options.seed);
    scores.assign(selected.size(), std::nullopt);
  }

  for (std::size_t i = 0; i < selected.size(); ++i) {
    DemonstrationRef d;
    d.id = selected[i].id;
    d.score = scores[i];
    d.rendered = format_demonstration(selected[i], src_tmpl, src_space);
    plan.demonstrations.push_back(std::move(d));
  }

  // Aligner.
  if (strategy == Strategy::task_aligned || strategy == Strategy::x_insta) {
    if (strategy_uses_catalog(strategy, variant) && !deps.catalog)
      throw ValidationError("strategy '" +
                            std::string(strategy_name(strategy)) +
                            "' needs an aligner catalog");
    if (deps.catalog) {
      plan.aligner = deps.catalog->render_variant(
          variant, task, options.src, options.tgt, dataset.label_spaces());
    }
  } else if (strategy == Strategy::auto_aligner) {
    if (!deps.spanfill)
      throw ValidationError("strategy 'auto_aligner' needs a span-fill client");
    std::vector<std::string> blocks;
    for (const auto& d : plan.demonstrations) blocks.push_back(d.rendered);
    Context context = assemble_context(std::move(blocks), options.sep);
    plan.aligner = generate_auto_aligner(*deps.spanfill, context.text(),
                                         plan.test_rendered,
                                         options.mask_token);
  }

  plan.final_text = detail::assemble_final_text(
      plan.demonstrations, plan.aligner, plan.test_rendered, plan.sep,
      plan.sep_after_aligner);
  plan.token_count = approx_token_count(plan.final_text);
  return plan;
}

/// Trims a plan into the token budget by dropping demonstrations from the
/// tail (lowest similarity for descending-ordered strategies, last-sampled
/// for random ones), never the aligner or the test input. Throws
/// BudgetError when even the zero-demonstration prompt is over budget.
inline PromptPlan enforce_budget(PromptPlan plan, int max_tokens,
                                 const TokenCounter& counter) {
  if (max_tokens <= 0) throw ValidationError("max_tokens must be positive");
  plan.token_count = counter(plan.final_text);
  while (plan.token_count > max_tokens) {
    if (plan.demonstrations.empty()) {
      throw BudgetError("prompt for test example " +
                            std::to_string(plan.test_id) +
                            " exceeds budget of " + std::to_string(max_tokens) +
                            " tokens even with zero demonstrations (" +
                            std::to_string(plan.token_count) + " tokens)",
                        plan.test_id, plan.token_count);
    }
    plan.demonstrations.pop_back();
    plan.dropped += 1;
    plan.final_text = reassemble_final_text(plan);
    plan.token_count = counter(plan.final_text);
  }
  return plan;
}

}  // namespace xicl
