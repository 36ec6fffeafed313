#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xicl/errors.hpp"
#include "xicl/lang.hpp"
#include "xicl/rng.hpp"
#include "xicl/util.hpp"

namespace xicl {

struct LabeledExample {
  std::int64_t id = 0;  // stable index within its split, file order from 0
  std::string text;
  std::string label;
  LanguageCode lang;

  bool operator==(const LabeledExample&) const = default;
};

/// Ordered label verbalizations for one language. The order is fixed and
/// identical across the languages of a task; position defines the
/// cross-language mapping.
class LabelSpace {
 public:
  LabelSpace() = default;
  LabelSpace(LanguageCode lang,
             std::vector<std::pair<std::string, std::string>> labels)
      : lang_(std::move(lang)), labels_(std::move(labels)) {
    if (labels_.empty()) throw ValidationError("empty label space");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      const auto& [id, verbalization] = labels_[i];
      if (verbalization.empty())
        throw ValidationError("empty verbalization for label '" + id + "'");
      for (std::size_t j = 0; j < i; ++j) {
        if (labels_[j].first == id)
          throw ValidationError("duplicate label id '" + id + "'");
        if (labels_[j].second == verbalization)
          throw ValidationError("duplicate verbalization '" + verbalization +
                                "'");
      }
    }
  }

  const LanguageCode& lang() const { return lang_; }
  std::size_t size() const { return labels_.size(); }

  const std::string& id_at(std::size_t i) const { return labels_.at(i).first; }
  const std::string& verbalization_at(std::size_t i) const {
    return labels_.at(i).second;
  }

  std::optional<std::size_t> index_of(std::string_view label_id) const {
    for (std::size_t i = 0; i < labels_.size(); ++i)
      if (labels_[i].first == label_id) return i;
    return std::nullopt;
  }

  std::size_t require_index(std::string_view label_id) const {
    auto idx = index_of(label_id);
    if (!idx)
      throw ValidationError("label '" + std::string(label_id) +
                            "' not in label space for '" + lang_.str() + "'");
    return *idx;
  }

  const std::string& verbalization_of(std::string_view label_id) const {
    return labels_[require_index(label_id)].second;
  }

  std::vector<std::string> verbalizations() const {
    std::vector<std::string> out;
    out.reserve(labels_.size());
    for (const auto& [id, v] : labels_) out.push_back(v);
    return out;
  }

  bool operator==(const LabelSpace&) const = default;

 private:
  LanguageCode lang_;
  std::vector<std::pair<std::string, std::string>> labels_;
};

/// Positional label mapping between two spaces of the same task. Bijective;
/// src->tgt->src is the identity.
inline const std::string& map_label(std::string_view label_id,
                                    const LabelSpace& src_space,
                                    const LabelSpace& tgt_space) {
  if (src_space.size() != tgt_space.size())
    throw ValidationError("label spaces of different cardinality (" +
                          std::to_string(src_space.size()) + " vs " +
                          std::to_string(tgt_space.size()) + ")");
  return tgt_space.id_at(src_space.require_index(label_id));
}

enum class Split { train, test };

inline std::string_view split_name(Split s) {
  return s == Split::train ? "train" : "test";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

/// Declares a task: its languages, ordered verbalizations per language, and
/// optional expected record counts per (language, split).
struct DatasetDescriptor {
  std::string task;
  LanguageRegistry registry;
  std::map<LanguageCode, LabelSpace> label_spaces;
  std::map<LanguageCode, std::map<std::string, std::size_t>> expected_counts;

  static DatasetDescriptor from_json(const nlohmann::json& j) {
    DatasetDescriptor d;
    d.task = j.at("task").get<std::string>();
    for (const auto& lj : j.at("languages")) {
      LanguageInfo info;
      info.code = LanguageCode(lj.at("code").get<std::string>());
      info.family = lj.value("family", std::string{});
      d.registry.add(std::move(info));
    }
    for (const auto& [code_str, pairs] : j.at("label_spaces").items()) {
      LanguageCode code(code_str);
      d.registry.require(code);
      std::vector<std::pair<std::string, std::string>> labels;
      for (const auto& p : pairs)
        labels.emplace_back(p.at(0).get<std::string>(),
                            p.at(1).get<std::string>());
      d.label_spaces.emplace(code, LabelSpace(code, std::move(labels)));
    }
    for (const auto& [code, _] : d.registry.all()) {
      if (!d.label_spaces.count(code))
        throw ValidationError("no label space declared for language '" +
                              code.str() + "'");
    }
    std::size_t cardinality = d.label_spaces.begin()->second.size();
    for (const auto& [code, space] : d.label_spaces) {
      if (space.size() != cardinality)
        throw ValidationError("label space cardinality mismatch for '" +
                              code.str() + "'");
    }
    if (j.contains("expected_counts")) {
      for (const auto& [code_str, by_split] : j.at("expected_counts").items()) {
        LanguageCode code(code_str);
        d.registry.require(code);
        for (const auto& [split, count] : by_split.items())
          d.expected_counts[code][split] = count.get<std::size_t>();
      }
    }
    return d;
  }

  static DatasetDescriptor load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
      throw ValidationError("cannot open descriptor: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("descriptor " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

/// One validated record collection per (language, split), immutable after
/// load. Safe for concurrent reads.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(DatasetDescriptor descriptor)
      : descriptor_(std::move(descriptor)) {}

  const std::string& task() const { return descriptor_.task; }
  const DatasetDescriptor& descriptor() const { return descriptor_; }
  const LanguageRegistry& registry() const { return descriptor_.registry; }

  const LabelSpace& label_space(const LanguageCode& lang) const {
    auto it = descriptor_.label_spaces.find(lang);
    if (it == descriptor_.label_spaces.end())
      throw ValidationError("no label space for language '" + lang.str() + "'");
    return it->second;
  }

  const std::map<LanguageCode, LabelSpace>& label_spaces() const {
    return descriptor_.label_spaces;
  }

  void set_split(const LanguageCode& lang, Split split,
                 std::vector<LabeledExample> examples) {
    splits_[{lang, split}] = std::move(examples);
  }

  bool has_split(const LanguageCode& lang, Split split) const {
    return splits_.count({lang, split}) > 0;
  }

  const std::vector<LabeledExample>& split(const LanguageCode& lang,
                                           Split split) const {
    auto it = splits_.find({lang, split});
    if (it == splits_.end())
      throw ValidationError("no " + std::string(split_name(split)) +
                            " split loaded for language '" + lang.str() + "'");
    return it->second;
  }

 private:
  DatasetDescriptor descriptor_;
  std::map<std::pair<LanguageCode, Split>, std::vector<LabeledExample>> splits_;
};

namespace detail {

inline LabeledExample parse_record(const std::string& line, std::size_t lineno,
                                   const DatasetDescriptor& descriptor,
                                   std::int64_t id) {
  if (!is_valid_utf8(line))
    throw ValidationError("line " + std::to_string(lineno) +
                          ": invalid UTF-8");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("line " + std::to_string(lineno) +
                          ": malformed record: " + e.what());
  }
  if (!j.is_object() || !j.contains("text") || !j.contains("label") ||
      !j.contains("lang"))
    throw ValidationError("line " + std::to_string(lineno) +
                          ": record must have text/label/lang fields");
  LabeledExample ex;
  ex.id = id;
  ex.text = j.at("text").get<std::string>();
  ex.label = j.at("label").get<std::string>();
  LanguageCode lang;
  try {
    lang = LanguageCode(j.at("lang").get<std::string>());
  } catch (const ValidationError& e) {
    throw ValidationError("line " + std::to_string(lineno) + ": " + e.what());
  }
  ex.lang = lang;
  if (ex.text.empty())
    throw ValidationError("line " + std::to_string(lineno) + ": empty text");
  if (!descriptor.registry.contains(lang))
    throw ValidationError("line " + std::to_string(lineno) +
                          ": unknown language code '" + lang.str() + "'");
  const auto& space = descriptor.label_spaces.at(lang);
  if (!space.index_of(ex.label))
    throw ValidationError("line " + std::to_string(lineno) + ": label '" +
                          ex.label + "' not in label space for '" +
                          lang.str() + "'");
  return ex;
}

}  // namespace detail

/// Reads one newline-delimited JSON file. Ids are assigned in file order
/// starting at 0. Every record is validated against the descriptor; errors
/// carry the 1-based line number.
inline std::vector<LabeledExample> load_split_file(
    const std::filesystem::path& path, const DatasetDescriptor& descriptor) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open dataset file: " + path.string());
  std::vector<LabeledExample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(detail::parse_record(line, lineno, descriptor,
                                       static_cast<std::int64_t>(out.size())));
  }
  return out;
}

/// Writes records in the canonical on-disk form: UTF-8, one compact JSON
/// object per line with fields text/label/lang in that order.
inline void save_split_file(const std::filesystem::path& path,
                            const std::vector<LabeledExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write dataset file: " + path.string());
  for (const auto& ex : examples) {
    nlohmann::ordered_json j;
    j["text"] = ex.text;
    j["label"] = ex.label;
    j["lang"] = ex.lang.str();
    out << j.dump() << '\n';
  }
}

/// Loads every (language, split) file found under `dir` as
/// `<code>_<split>.jsonl`. Missing files leave the split absent. Declared
/// count mismatches produce warnings, not errors.
inline Dataset load_dataset(const std::filesystem::path& dir,
                            const DatasetDescriptor& descriptor,
                            std::vector<std::string>* warnings = nullptr) {
  Dataset dataset(descriptor);
  for (const auto& [code, info] : descriptor.registry.all()) {
    for (Split split : {Split::train, Split::test}) {
      auto path = dir / (code.str() + "_" + std::string(split_name(split)) +
                         ".jsonl");
      if (!std::filesystem::exists(path)) continue;
      auto examples = load_split_file(path, descriptor);
      for (const auto& ex : examples) {
        if (ex.lang != code)
          throw ValidationError(path.string() + ": record id " +
                                std::to_string(ex.id) + " has lang '" +
                                ex.lang.str() + "', expected '" + code.str() +
                                "'");
      }
      auto lang_counts = descriptor.expected_counts.find(code);
      if (lang_counts != descriptor.expected_counts.end()) {
        auto want = lang_counts->second.find(std::string(split_name(split)));
        if (want != lang_counts->second.end() &&
            want->second != examples.size() && warnings) {
          warnings->push_back("size mismatch for " + code.str() + "/" +
                              std::string(split_name(split)) + ": declared " +
                              std::to_string(want->second) + ", loaded " +
                              std::to_string(examples.size()));
        }
      }
      dataset.set_split(code, split, std::move(examples));
    }
  }
  return dataset;
}

/// k distinct examples drawn without replacement, in selection order.
/// Deterministic: the only source of randomness is `seed` (see SeededRng).
inline std::vector<LabeledExample> sample_random(const Dataset& dataset,
                                                 const LanguageCode& lang,
                                                 Split split, std::size_t k,
                                                 std::uint64_t seed) {
  const auto& pool = dataset.split(lang, split);
  if (k > pool.size())
    throw ValidationError("cannot sample " + std::to_string(k) +
                          " examples from split of size " +
                          std::to_string(pool.size()));
  auto indices = sample_indices(pool.size(), k, seed);
  std::vector<LabeledExample> out;
  out.reserve(k);
  for (auto i : indices) out.push_back(pool[i]);
  return out;
}

}  // namespace xicl
