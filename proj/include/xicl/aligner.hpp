#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "xicl/corpus.hpp"
#include "xicl/errors.hpp"
#include "xicl/lang.hpp"

namespace xicl {

enum class AlignerKind {
  canonical,
  none,
  uniform_label_space,
  language_only,
  third_language,
  incorrect,
};

inline std::string_view aligner_kind_name(AlignerKind k) {
  switch (k) {
    case AlignerKind::canonical: return "canonical";
    case AlignerKind::none: return "none";
    case AlignerKind::uniform_label_space: return "uniform_label_space";
    case AlignerKind::language_only: return "language_only";
    case AlignerKind::third_language: return "third_language";
    case AlignerKind::incorrect: return "incorrect";
  }
  return "?";
}

inline AlignerKind parse_aligner_kind(std::string_view s) {
  for (AlignerKind k :
       {AlignerKind::canonical, AlignerKind::none,
        AlignerKind::uniform_label_space, AlignerKind::language_only,
        AlignerKind::third_language, AlignerKind::incorrect}) {
    if (aligner_kind_name(k) == s) return k;
  }
  throw ValidationError("unknown aligner variant '" + std::string(s) + "'");
}

/// A closed set of aligner perturbations. `third` is set only for
/// third_language and must differ from both source and target.
struct AlignerVariant {
  AlignerKind kind = AlignerKind::canonical;
  std::optional<LanguageCode> third;

  static AlignerVariant canonical() { return {AlignerKind::canonical, {}}; }
  static AlignerVariant none() { return {AlignerKind::none, {}}; }
  static AlignerVariant uniform() {
    return {AlignerKind::uniform_label_space, {}};
  }
  static AlignerVariant language_only() {
    return {AlignerKind::language_only, {}};
  }
  static AlignerVariant third_language(LanguageCode lang) {
    return {AlignerKind::third_language, std::move(lang)};
  }
  static AlignerVariant incorrect() { return {AlignerKind::incorrect, {}}; }

  std::string name() const {
    std::string n{aligner_kind_name(kind)};
    if (third) n += "(" + third->str() + ")";
    return n;
  }

  bool operator==(const AlignerVariant&) const = default;
};

struct AlignerText {
  enum class Provenance { catalog, generated };

  std::string text;
  Provenance provenance = Provenance::catalog;
  AlignerVariant variant;
};

// Template substitution. Allowed placeholders: {TGT_NAME}, {SRC_LABEL_i},
// {TGT_LABEL_i}. A template may use any subset of them (including none);
// anything else is rejected by name.
namespace detail {

inline std::string render_template(
    const std::string& tmpl,
    const std::map<std::string, std::string>& substitutions) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] != '{') {
      out += tmpl[i++];
      continue;
    }
    auto close = tmpl.find('}', i);
    if (close == std::string::npos)
      throw ValidationError("unterminated placeholder in template: " + tmpl);
    std::string name = tmpl.substr(i + 1, close - i - 1);
    auto it = substitutions.find(name);
    if (it == substitutions.end())
      throw ValidationError("unresolved placeholder {" + name + "}");
    out += it->second;
    i = close + 1;
  }
  return out;
}

}  // namespace detail

/// Catalog of task-aligner templates keyed by (task, source, target), plus
/// a display-name table. Immutable after load; rendering is pure, so the
/// same inputs always produce identical bytes.
class AlignerCatalog {
 public:
  struct Key {
    std::string task;
    LanguageCode src;
    LanguageCode tgt;
    auto operator<=>(const Key&) const = default;
  };

  void set_display_name(const LanguageCode& lang, std::string name) {
    display_names_[lang] = std::move(name);
  }

  void add_entry(AlignerKind kind, Key key, std::string tmpl) {
    entry_map(kind)[std::move(key)] = std::move(tmpl);
  }

  bool has_canonical(const std::string& task, const LanguageCode& src,
                     const LanguageCode& tgt) const {
    return canonical_.count({task, src, tgt}) > 0;
  }

  const std::string& display_name(const LanguageCode& lang) const {
    auto it = display_names_.find(lang);
    if (it == display_names_.end())
      throw ValidationError("no display name for language '" + lang.str() +
                            "'");
    return it->second;
  }

  /// Canonical aligner: target display name plus the positional label
  /// mapping rendered into the (task, src, tgt) template.
  AlignerText render_aligner(const std::string& task, const LanguageCode& src,
                             const LanguageCode& tgt,
                             const LabelSpace& src_space,
                             const LabelSpace& tgt_space) const {
    return render_from(canonical_, task, src, tgt, src_space, tgt_space,
                       /*swap_targets=*/false, AlignerVariant::canonical());
  }

  /// Renders any variant. Returns nullopt for variants that produce no
  /// aligner text (none, uniform_label_space; the latter additionally
  /// switches the prediction label space, which is enforced at inference).
  std::optional<AlignerText> render_variant(
      const AlignerVariant& variant, const std::string& task,
      const LanguageCode& src, const LanguageCode& tgt,
      const std::map<LanguageCode, LabelSpace>& spaces) const {
    const LabelSpace& src_space = space_of(spaces, src);
    switch (variant.kind) {
      case AlignerKind::none:
      case AlignerKind::uniform_label_space:
        return std::nullopt;
      case AlignerKind::canonical: {
        auto text =
            render_aligner(task, src, tgt, src_space, space_of(spaces, tgt));
        text.variant = variant;
        return text;
      }
      case AlignerKind::incorrect: {
        auto text = render_from(canonical_, task, src, tgt, src_space,
                                space_of(spaces, tgt), /*swap_targets=*/true,
                                variant);
        return text;
      }
      case AlignerKind::language_only: {
        return render_from(language_only_, task, src, tgt, src_space,
                           space_of(spaces, tgt), /*swap_targets=*/false,
                           variant);
      }
      case AlignerKind::third_language: {
        if (!variant.third)
          throw ValidationError("third_language variant without a language");
        const LanguageCode& third = *variant.third;
        if (third == src || third == tgt)
          throw ValidationError(
              "third language '" + third.str() +
              "' must differ from source and target languages");
        // Prefer a dedicated third-language template; otherwise reuse the
        // canonical entry for (task, src, third).
        const auto& table =
            third_language_.count({task, src, third}) ? third_language_
                                                      : canonical_;
        return render_from(table, task, src, third, src_space,
                           space_of(spaces, third), /*swap_targets=*/false,
                           variant);
      }
    }
    throw ValidationError("unhandled aligner variant");
  }

  static AlignerCatalog from_json(const nlohmann::json& j) {
    AlignerCatalog c;
    if (j.contains("display_names")) {
      for (const auto& [code, name] : j.at("display_names").items())
        c.set_display_name(LanguageCode(code), name.get<std::string>());
    }
    for (const auto& e : j.at("entries")) {
      AlignerKind kind = parse_aligner_kind(e.value("kind", "canonical"));
      if (kind != AlignerKind::canonical &&
          kind != AlignerKind::language_only &&
          kind != AlignerKind::third_language)
        throw ValidationError("catalog entries may only declare "
                              "canonical/language_only/third_language kinds");
      Key key{e.at("task").get<std::string>(),
              LanguageCode(e.at("src").get<std::string>()),
              LanguageCode(e.at("tgt").get<std::string>())};
      c.add_entry(kind, std::move(key), e.at("template").get<std::string>());
    }
    return c;
  }

  static AlignerCatalog load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open catalog: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("catalog " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }

 private:
  std::map<Key, std::string>& entry_map(AlignerKind kind) {
    switch (kind) {
      case AlignerKind::canonical: return canonical_;
      case AlignerKind::language_only: return language_only_;
      case AlignerKind::third_language: return third_language_;
      default:
        throw ValidationError("no catalog table for variant '" +
                              std::string(aligner_kind_name(kind)) + "'");
    }
  }

  static const LabelSpace& space_of(
      const std::map<LanguageCode, LabelSpace>& spaces,
      const LanguageCode& lang) {
    auto it = spaces.find(lang);
    if (it == spaces.end())
      throw ValidationError("no label space for language '" + lang.str() + "'");
    return it->second;
  }

  AlignerText render_from(const std::map<Key, std::string>& table,
                          const std::string& task, const LanguageCode& src,
                          const LanguageCode& tgt, const LabelSpace& src_space,
                          const LabelSpace& tgt_space, bool swap_targets,
                          AlignerVariant variant) const {
    auto it = table.find({task, src, tgt});
    if (it == table.end())
      throw ValidationError("no aligner catalog entry for (" + task + ", " +
                            src.str() + " -> " + tgt.str() + ", " +
                            variant.name() + ")");
    if (src_space.size() != tgt_space.size())
      throw ValidationError("label spaces of different cardinality");
    std::map<std::string, std::string> subs;
    auto dn = display_names_.find(tgt);
    if (dn != display_names_.end()) subs["TGT_NAME"] = dn->second;
    const std::size_t n = tgt_space.size();
    for (std::size_t i = 0; i < n; ++i) {
      subs["SRC_LABEL_" + std::to_string(i)] = src_space.verbalization_at(i);
      // The incorrect variant permutes target verbalizations: swapped for
      // two-label tasks, rotated by one position otherwise.
      std::size_t j = swap_targets ? (i + 1) % n : i;
      subs["TGT_LABEL_" + std::to_string(i)] = tgt_space.verbalization_at(j);
    }
    AlignerText out;
    out.text = detail::render_template(it->second, subs);
    if (out.text.empty())
      throw ValidationError("catalog entry for (" + task + ", " + src.str() +
                            " -> " + tgt.str() + ") rendered empty");
    out.provenance = AlignerText::Provenance::catalog;
    out.variant = variant;
    return out;
  }

  std::map<LanguageCode, std::string> display_names_;
  std::map<Key, std::string> canonical_;
  std::map<Key, std::string> language_only_;
  std::map<Key, std::string> third_language_;
};

/// Fills the gap between a prompt context and a test input with a generated
/// span (the mask token marks the gap).
class SpanFillClient {
 public:
  virtual ~SpanFillClient() = default;
  virtual std::string fill(const std::string& text,
                           const std::string& mask_token) = 0;
  virtual std::string fingerprint() const = 0;
};

/// Span-fill stub returning a fixed span; for tests and offline demos.
class FixedSpanFill final : public SpanFillClient {
 public:
  explicit FixedSpanFill(std::string span) : span_(std::move(span)) {}
  std::string fill(const std::string&, const std::string&) override {
    return span_;
  }
  std::string fingerprint() const override { return "spanfill-fixed/v1"; }

 private:
  std::string span_;
};

/// Builds "context [mask] test_input" (empty parts dropped), asks the
/// span-fill client to bridge the gap, and wraps the generated span as an
/// aligner. An empty span is a degenerate-span error.
inline AlignerText generate_auto_aligner(SpanFillClient& spanfill,
                                         const std::string& context_text,
                                         const std::string& test_input,
                                         const std::string& mask_token) {
  std::string request;
  for (const std::string* part : {&context_text, &mask_token, &test_input}) {
    if (part->empty()) continue;
    if (!request.empty()) request += ' ';
    request += *part;
  }
  std::string span = spanfill.fill(request, mask_token);
  if (span.empty())
    throw ProtocolError("span-fill client generated a degenerate empty span");
  AlignerText out;
  out.text = std::move(span);
  out.provenance = AlignerText::Provenance::generated;
  out.variant = AlignerVariant::canonical();
  return out;
}

}  // namespace xicl
