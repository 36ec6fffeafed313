#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "xicl/aligner.hpp"
#include "xicl/corpus.hpp"
#include "xicl/embedding.hpp"
#include "xicl/errors.hpp"
#include "xicl/inference.hpp"
#include "xicl/prompt.hpp"
#include "xicl/rng.hpp"
#include "xicl/util.hpp"

namespace xicl {

/// Unweighted mean of per-label F1 over the labels that occur in golds or
/// predictions. A label with predictions but no golds (or vice versa)
/// contributes its zero-ish F1; labels absent from both sides are left out
/// of the mean entirely, so degenerate all-one-class binary runs land near
/// 1/3 rather than being inflated.
inline double macro_f1(const std::vector<std::string>& predictions,
                       const std::vector<std::string>& golds,
                       const LabelSpace& space) {
  if (predictions.size() != golds.size())
    throw ValidationError("macro_f1: " + std::to_string(predictions.size()) +
                          " predictions vs " + std::to_string(golds.size()) +
                          " golds");
  if (predictions.empty()) throw ValidationError("macro_f1: empty input");
  const std::size_t n_labels = space.size();
  std::vector<std::int64_t> tp(n_labels, 0), fp(n_labels, 0), fn(n_labels, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    std::size_t p = space.require_index(predictions[i]);
    std::size_t g = space.require_index(golds[i]);
    if (p == g) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double sum = 0.0;
  std::size_t contributing = 0;
  for (std::size_t l = 0; l < n_labels; ++l) {
    std::int64_t support = tp[l] + fp[l] + fn[l];
    if (support == 0) continue;  // label absent from both sides
    ++contributing;
    sum += 2.0 * static_cast<double>(tp[l]) /
           static_cast<double>(2 * tp[l] + fp[l] + fn[l]);
  }
  if (contributing == 0) throw ValidationError("macro_f1: no labels present");
  return sum / static_cast<double>(contributing);
}

/// One prompting setup to evaluate: the selection strategy plus, for
/// aligner-bearing strategies, the perturbation variant.
struct StrategySpec {
  Strategy strategy = Strategy::random;
  AlignerVariant variant = AlignerVariant::canonical();

  std::string name() const {
    std::string n{strategy_name(strategy)};
    bool carries_aligner =
        strategy == Strategy::task_aligned || strategy == Strategy::x_insta;
    if (carries_aligner && !(variant.kind == AlignerKind::canonical))
      n += "/" + variant.name();
    return n;
  }

  static StrategySpec from_json(const nlohmann::json& j) {
    StrategySpec s;
    s.strategy = parse_strategy(j.at("name").get<std::string>());
    if (j.contains("variant"))
      s.variant.kind = parse_aligner_kind(j.at("variant").get<std::string>());
    if (j.contains("third_language"))
      s.variant.third =
          LanguageCode(j.at("third_language").get<std::string>());
    if (s.variant.kind == AlignerKind::third_language && !s.variant.third)
      throw ValidationError(
          "strategy with third_language variant needs a 'third_language' "
          "field");
    return s;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["name"] = std::string(strategy_name(strategy));
    j["variant"] = std::string(aligner_kind_name(variant.kind));
    if (variant.third) j["third_language"] = variant.third->str();
    return j;
  }
};

struct SubsetConfig {
  std::size_t size = 0;  // 0 = full test split
  std::uint64_t seed = 0;
};

/// The experiment grid: strategies x sources x targets x seeds, with the
/// prompt constants and client modes the run needs.
struct ExperimentConfig {
  std::string dataset_dir;
  std::string descriptor_path;
  std::string catalog_path;      // optional unless an aligner strategy runs
  std::string verbalizers_path;
  std::vector<StrategySpec> strategies;
  std::vector<LanguageCode> sources;
  std::vector<LanguageCode> targets;
  std::size_t k = 4;
  std::vector<std::uint64_t> seeds = {32, 5, 232, 100, 42};
  int max_tokens = 1024;
  std::string sep = "</s>";
  bool sep_after_aligner = true;
  std::string mask_token = "[MASK]";
  nlohmann::json scorer = {{"mode", "hash"}};
  nlohmann::json embedder = {{"mode", "test"}};
  nlohmann::json spanfill;
  std::optional<SubsetConfig> subset;
  std::string cache_path;
  bool offline = false;
  int workers = 4;
  std::string out_dir = "out";

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.dataset_dir = j.at("dataset_dir").get<std::string>();
    c.descriptor_path = j.at("descriptor").get<std::string>();
    c.catalog_path = j.value("catalog", std::string{});
    c.verbalizers_path = j.at("verbalizers").get<std::string>();
    for (const auto& sj : j.at("strategies"))
      c.strategies.push_back(StrategySpec::from_json(sj));
    for (const auto& s : j.at("sources"))
      c.sources.emplace_back(s.get<std::string>());
    for (const auto& t : j.at("targets"))
      c.targets.emplace_back(t.get<std::string>());
    c.k = j.value("k", std::size_t{4});
    if (j.contains("seeds")) {
      c.seeds.clear();
      for (const auto& s : j.at("seeds"))
        c.seeds.push_back(s.get<std::uint64_t>());
    }
    if (c.seeds.empty()) throw ValidationError("config: seeds must be non-empty");
    if (c.strategies.empty())
      throw ValidationError("config: strategies must be non-empty");
    c.max_tokens = j.value("max_tokens", 1024);
    c.sep = j.value("sep", std::string("</s>"));
    c.sep_after_aligner = j.value("sep_after_aligner", true);
    c.mask_token = j.value("mask_token", std::string("[MASK]"));
    if (j.contains("scorer")) c.scorer = j.at("scorer");
    if (j.contains("embedder")) c.embedder = j.at("embedder");
    if (j.contains("spanfill")) c.spanfill = j.at("spanfill");
    if (j.contains("test_subset")) {
      SubsetConfig sc;
      sc.size = j.at("test_subset").at("size").get<std::size_t>();
      sc.seed = j.at("test_subset").value("seed", std::uint64_t{0});
      c.subset = sc;
    }
    if (j.contains("cache")) {
      c.cache_path = j.at("cache").value("path", std::string{});
      c.offline = j.at("cache").value("offline", false);
    }
    c.workers = j.value("workers", 4);
    c.out_dir = j.value("out_dir", std::string("out"));
    return c;
  }
};

struct CellResult {
  std::string strategy;
  LanguageCode src;
  LanguageCode tgt;
  std::vector<double> per_seed_f1;
  double mean_f1 = 0.0;
  bool failed = false;
  std::string error;
  std::string audit_path;

  bool operator==(const CellResult&) const = default;
};

struct ExperimentReport {
  std::string task;
  std::vector<std::string> strategy_names;
  std::vector<LanguageCode> sources;
  std::vector<LanguageCode> targets;
  std::vector<std::uint64_t> seeds;
  std::vector<CellResult> cells;  // strategy-major, then source, then target

  bool operator==(const ExperimentReport&) const = default;

  const CellResult* find_cell(const std::string& strategy,
                              const LanguageCode& src,
                              const LanguageCode& tgt) const {
    for (const auto& c : cells)
      if (c.strategy == strategy && c.src == src && c.tgt == tgt) return &c;
    return nullptr;
  }

  /// Mean over sources of a target column; failed and diagonal cells are
  /// left out.
  std::optional<double> column_average(const std::string& strategy,
                                       const LanguageCode& tgt) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& c : cells) {
      if (c.strategy != strategy || c.tgt != tgt || c.failed) continue;
      sum += c.mean_f1;
      ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = task;
    j["strategies"] = strategy_names;
    auto langs = [](const std::vector<LanguageCode>& v) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& l : v) arr.push_back(l.str());
      return arr;
    };
    j["sources"] = langs(sources);
    j["targets"] = langs(targets);
    j["seeds"] = seeds;
    auto cells_json = nlohmann::ordered_json::array();
    for (const auto& c : cells) {
      nlohmann::ordered_json cj;
      cj["strategy"] = c.strategy;
      cj["src"] = c.src.str();
      cj["tgt"] = c.tgt.str();
      cj["per_seed_f1"] = c.per_seed_f1;
      cj["mean_f1"] = c.mean_f1;
      cj["failed"] = c.failed;
      if (c.failed) cj["error"] = c.error;
      if (!c.audit_path.empty()) cj["audit_path"] = c.audit_path;
      cells_json.push_back(std::move(cj));
    }
    j["cells"] = std::move(cells_json);
    return j;
  }

  static ExperimentReport from_json(const nlohmann::json& j) {
    ExperimentReport r;
    r.task = j.at("task").get<std::string>();
    for (const auto& s : j.at("strategies"))
      r.strategy_names.push_back(s.get<std::string>());
    for (const auto& s : j.at("sources"))
      r.sources.emplace_back(s.get<std::string>());
    for (const auto& t : j.at("targets"))
      r.targets.emplace_back(t.get<std::string>());
    for (const auto& s : j.at("seeds"))
      r.seeds.push_back(s.get<std::uint64_t>());
    for (const auto& cj : j.at("cells")) {
      CellResult c;
      c.strategy = cj.at("strategy").get<std::string>();
      c.src = LanguageCode(cj.at("src").get<std::string>());
      c.tgt = LanguageCode(cj.at("tgt").get<std::string>());
      for (const auto& f : cj.at("per_seed_f1"))
        c.per_seed_f1.push_back(f.get<double>());
      c.mean_f1 = cj.at("mean_f1").get<double>();
      c.failed = cj.at("failed").get<bool>();
      if (cj.contains("error")) c.error = cj.at("error").get<std::string>();
      if (cj.contains("audit_path"))
        c.audit_path = cj.at("audit_path").get<std::string>();
      r.cells.push_back(std::move(c));
    }
    return r;
  }
};

/// Deterministic stratified-by-label subsample, sorted by id. Quotas are
/// proportional to label frequency; remainders go to labels in space order.
inline std::vector<LabeledExample> stratified_subset(
    const std::vector<LabeledExample>& examples, const LabelSpace& space,
    std::size_t size, std::uint64_t seed) {
  if (size == 0 || size >= examples.size()) return examples;
  std::vector<std::vector<std::size_t>> groups(space.size());
  for (std::size_t i = 0; i < examples.size(); ++i)
    groups[space.require_index(examples[i].label)].push_back(i);
  std::vector<std::size_t> quotas(space.size(), 0);
  std::size_t assigned = 0;
  for (std::size_t l = 0; l < groups.size(); ++l) {
    quotas[l] = size * groups[l].size() / examples.size();
    assigned += quotas[l];
  }
  for (std::size_t l = 0; assigned < size; l = (l + 1) % groups.size()) {
    if (quotas[l] < groups[l].size()) {
      ++quotas[l];
      ++assigned;
    }
  }
  std::vector<std::size_t> chosen;
  for (std::size_t l = 0; l < groups.size(); ++l) {
    auto order =
        sample_indices(groups[l].size(), quotas[l], mix64(seed, l + 1));
    for (auto o : order) chosen.push_back(groups[l][o]);
  }
  std::sort(chosen.begin(), chosen.end());
  std::vector<LabeledExample> out;
  out.reserve(chosen.size());
  for (auto i : chosen) out.push_back(examples[i]);
  return out;
}

/// Resolved collaborators for a run; the runner builds these from config.
struct EvalDeps {
  const Dataset* dataset = nullptr;
  const VerbalizerRegistry* verbalizers = nullptr;
  const AlignerCatalog* catalog = nullptr;
  std::map<LanguageCode, const EmbeddingIndex*> indexes;  // per source lang
  EmbeddingProvider* embedder = nullptr;
  ScorerClient* scorer = nullptr;
  SpanFillClient* spanfill = nullptr;
  TokenCounter token_counter = default_token_counter();
};

struct RunOutput {
  ExperimentReport report;
  std::vector<std::string> audit_lines;  // one JSON record per prediction
};

namespace detail {

struct CellWork {
  StrategySpec spec;
  LanguageCode src;
  LanguageCode tgt;
};

inline PromptDeps prompt_deps_for(const EvalDeps& deps,
                                  const CellWork& work) {
  PromptDeps pd;
  pd.dataset = deps.dataset;
  pd.verbalizers = deps.verbalizers;
  pd.catalog = deps.catalog;
  pd.embedder = deps.embedder;
  pd.spanfill = deps.spanfill;
  auto it = deps.indexes.find(work.src);
  if (it != deps.indexes.end()) pd.index = it->second;
  return pd;
}

// Fails fast, before any scoring: every cell must be able to resolve its
// dependencies (index, catalog entry, splits, k vs pool size).
inline void validate_cell(const ExperimentConfig& config, const EvalDeps& deps,
                          const CellWork& work) {
  const Dataset& dataset = *deps.dataset;
  const auto& train = dataset.split(work.src, Split::train);
  if (config.k > train.size())
    throw ValidationError("cell (" + work.spec.name() + ", " +
                          work.src.str() + " -> " + work.tgt.str() +
                          "): k=" + std::to_string(config.k) +
                          " exceeds train split size " +
                          std::to_string(train.size()));
  dataset.split(work.tgt, Split::test);
  deps.verbalizers->require(dataset.task(), work.src);
  deps.verbalizers->require(dataset.task(), work.tgt);
  if (strategy_uses_index(work.spec.strategy) && config.k > 0 &&
      !deps.indexes.count(work.src))
    throw ValidationError("cell (" + work.spec.name() + ", " +
                          work.src.str() + " -> " + work.tgt.str() +
                          "): no embedding index for source language");
  if (strategy_uses_catalog(work.spec.strategy, work.spec.variant)) {
    if (!deps.catalog)
      throw ValidationError("cell (" + work.spec.name() + ", " +
                            work.src.str() + " -> " + work.tgt.str() +
                            "): no aligner catalog configured");
    // Render once and discard; rendering is pure, and this surfaces missing
    // entries and unresolved placeholders at plan time.
    deps.catalog->render_variant(work.spec.variant, dataset.task(), work.src,
                                 work.tgt, dataset.label_spaces());
  }
  if (work.spec.strategy == Strategy::auto_aligner && !deps.spanfill)
    throw ValidationError("cell (" + work.spec.name() + ", " +
                          work.src.str() + " -> " + work.tgt.str() +
                          "): no span-fill client configured");
}

struct CellOutput {
  CellResult result;
  std::vector<std::string> audit_lines;
};

inline CellOutput run_cell(const ExperimentConfig& config, const EvalDeps& deps,
                           const CellWork& work) {
  const Dataset& dataset = *deps.dataset;
  CellOutput out;
  out.result.strategy = work.spec.name();
  out.result.src = work.src;
  out.result.tgt = work.tgt;

  const auto& src_space = dataset.label_space(work.src);
  const auto& tgt_space = dataset.label_space(work.tgt);
  const bool uniform =
      work.spec.variant.kind == AlignerKind::uniform_label_space &&
      (work.spec.strategy == Strategy::task_aligned ||
       work.spec.strategy == Strategy::x_insta);
  const LabelSpace& prediction_space = uniform ? src_space : tgt_space;

  const auto& full_test = dataset.split(work.tgt, Split::test);
  std::vector<LabeledExample> test_pool =
      config.subset ? stratified_subset(full_test, tgt_space,
                                        config.subset->size,
                                        config.subset->seed)
                    : full_test;
  if (test_pool.empty())
    throw ValidationError("empty test pool for target '" + work.tgt.str() +
                          "'");

  PromptDeps pd = prompt_deps_for(deps, work);
  for (std::uint64_t seed : config.seeds) {
    std::vector<std::string> predictions, golds;
    predictions.reserve(test_pool.size());
    golds.reserve(test_pool.size());
    for (const auto& example : test_pool) {
      PromptOptions options;
      options.src = work.src;
      options.tgt = work.tgt;
      options.k = config.k;
      // Demonstrations are re-sampled per test input; the run seed is mixed
      // with the example id so selections stay reproducible per example.
      options.seed = mix64(seed, static_cast<std::uint64_t>(example.id));
      options.sep = config.sep;
      options.sep_after_aligner = config.sep_after_aligner;
      options.mask_token = config.mask_token;

      PromptPlan plan = build_prompt(work.spec.strategy, work.spec.variant,
                                     example, pd, options);
      plan = enforce_budget(std::move(plan), config.max_tokens,
                            deps.token_counter);
      Prediction prediction =
          predict_label(*deps.scorer, plan, prediction_space);
      std::string scored_label =
          uniform ? map_label(prediction.label_id, src_space, tgt_space)
                  : prediction.label_id;
      predictions.push_back(scored_label);
      golds.push_back(example.label);

      nlohmann::ordered_json audit;
      audit["task"] = dataset.task();
      audit["strategy"] = work.spec.name();
      audit["src"] = work.src.str();
      audit["tgt"] = work.tgt.str();
      audit["seed"] = seed;
      audit["example_id"] = example.id;
      audit["prompt_digest"] = to_hex(plan.digest());
      audit["token_count"] = plan.token_count;
      audit["dropped"] = plan.dropped;
      audit["candidates"] = prediction_space.verbalizations();
      audit["log_probs"] = prediction.all_scores;
      audit["predicted"] = prediction.label_id;
      audit["scored_label"] = scored_label;
      audit["gold"] = example.label;
      audit["scorer"] = prediction.scorer_fingerprint;
      out.audit_lines.push_back(audit.dump());
    }
    out.result.per_seed_f1.push_back(macro_f1(predictions, golds, tgt_space));
  }
  double sum = 0.0;
  for (double f : out.result.per_seed_f1) sum += f;
  out.result.mean_f1 = sum / static_cast<double>(out.result.per_seed_f1.size());
  return out;
}

}  // namespace detail

/// Runs the grid. Cells are independent and execute on a bounded worker
/// pool; a failing cell is marked failed and the run continues. Output
/// ordering is canonical (strategy-major, then source, then target)
/// regardless of scheduling, so identical configs give identical bytes.
inline RunOutput run_experiment(const ExperimentConfig& config,
                                const EvalDeps& deps) {
  if (!deps.dataset || !deps.verbalizers || !deps.scorer)
    throw ValidationError("run_experiment: dataset/verbalizers/scorer are "
                          "required dependencies");
  std::vector<detail::CellWork> cells;
  for (const auto& spec : config.strategies)
    for (const auto& src : config.sources)
      for (const auto& tgt : config.targets) {
        if (src == tgt) continue;
        cells.push_back({spec, src, tgt});
      }
  if (cells.empty()) throw ValidationError("empty experiment grid");

  for (const auto& cell : cells) detail::validate_cell(config, deps, cell);

  std::vector<detail::CellOutput> outputs(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
      try {
        outputs[i] = detail::run_cell(config, deps, cells[i]);
      } catch (const Error& e) {
        outputs[i].result.strategy = cells[i].spec.name();
        outputs[i].result.src = cells[i].src;
        outputs[i].result.tgt = cells[i].tgt;
        outputs[i].result.failed = true;
        outputs[i].result.error = e.what();
        outputs[i].audit_lines.clear();
      }
    }
  };
  std::size_t n_workers = std::max(1, config.workers);
  n_workers = std::min(n_workers, cells.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  RunOutput run;
  run.report.task = deps.dataset->task();
  for (const auto& spec : config.strategies)
    run.report.strategy_names.push_back(spec.name());
  run.report.sources = config.sources;
  run.report.targets = config.targets;
  run.report.seeds = config.seeds;
  for (auto& o : outputs) {
    run.report.cells.push_back(std::move(o.result));
    for (auto& line : o.audit_lines)
      run.audit_lines.push_back(std::move(line));
  }
  return run;
}

/// Text table per strategy: source rows x target columns, AVG row appended,
/// three decimal places, deterministic ordering. Failed cells render as an
/// em dash with a footnote.
inline void emit_report_text(const ExperimentReport& report,
                             std::ostream& out) {
  constexpr int kColWidth = 10;
  auto pad = [&](const std::string& s) {
    if (s.size() >= kColWidth) return " " + s;
    return std::string(kColWidth - s.size(), ' ') + s;
  };
  std::vector<std::string> footnotes;
  out << "task: " << report.task << "\n";
  for (const auto& strategy : report.strategy_names) {
    out << "\n== " << strategy << " ==\n";
    out << pad("SRC\\TGT");
    for (const auto& tgt : report.targets) out << pad(tgt.str());
    out << "\n";
    for (const auto& src : report.sources) {
      out << pad(src.str());
      for (const auto& tgt : report.targets) {
        if (src == tgt) {
          out << pad("-");
          continue;
        }
        const CellResult* cell = report.find_cell(strategy, src, tgt);
        if (!cell) {
          out << pad("-");
        } else if (cell->failed) {
          out << pad("—");
          footnotes.push_back(strategy + " " + src.str() + "->" + tgt.str() +
                              ": " + cell->error);
        } else {
          out << pad(format_fixed(cell->mean_f1, 3));
        }
      }
      out << "\n";
    }
    out << pad("AVG");
    for (const auto& tgt : report.targets) {
      auto avg = report.column_average(strategy, tgt);
      out << pad(avg ? format_fixed(*avg, 3) : "—");
    }
    out << "\n";
  }
  if (!footnotes.empty()) {
    out << "\nfailed cells:\n";
    for (const auto& f : footnotes) out << "  — " << f << "\n";
  }
}

/// Tab-separated cells, one row per (strategy, src, tgt), per-seed values
/// joined by ';'.
inline void emit_report_delimited(const ExperimentReport& report,
                                  std::ostream& out) {
  out << "strategy\tsrc\ttgt\tmean_f1\tper_seed_f1\n";
  for (const auto& c : report.cells) {
    out << c.strategy << '\t' << c.src.str() << '\t' << c.tgt.str() << '\t';
    if (c.failed) {
      out << "failed\t" << c.error << "\n";
      continue;
    }
    out << format_fixed(c.mean_f1, 3) << '\t';
    for (std::size_t i = 0; i < c.per_seed_f1.size(); ++i) {
      if (i) out << ';';
      out << format_fixed(c.per_seed_f1[i], 3);
    }
    out << "\n";
  }
}

inline void emit_report_json(const ExperimentReport& report,
                             std::ostream& out) {
  out << report.to_json().dump(2) << "\n";
}

}  // namespace xicl
