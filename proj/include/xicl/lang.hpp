#pragma once

#include <cctype>
#include <compare>
#include <map>
#include <string>
#include <string_view>

#include "xicl/errors.hpp"

namespace xicl {

/// Two-letter ISO 639-1 identifier. Lowercased on construction.
class LanguageCode {
 public:
  LanguageCode() = default;
  explicit LanguageCode(std::string_view code) {
    if (code.size() != 2 || !std::isalpha(static_cast<unsigned char>(code[0])) ||
        !std::isalpha(static_cast<unsigned char>(code[1]))) {
      throw ValidationError("language code must be two letters, got '" +
                            std::string(code) + "'");
    }
    code_ = {static_cast<char>(std::tolower(static_cast<unsigned char>(code[0]))),
             static_cast<char>(std::tolower(static_cast<unsigned char>(code[1])))};
  }

  const std::string& str() const { return code_; }
  bool empty() const { return code_.empty(); }

  auto operator<=>(const LanguageCode&) const = default;

 private:
  std::string code_;
};

struct LanguageInfo {
  LanguageCode code;
  std::string family;
};

// Closed set of languages for one run. Anything outside the registered set
// is rejected when data referencing it is loaded.
class LanguageRegistry {
 public:
  void add(LanguageInfo info) {
    auto code = info.code;
    if (!languages_.emplace(code, std::move(info)).second)
      throw ValidationError("language '" + code.str() + "' registered twice");
  }

  bool contains(const LanguageCode& code) const {
    return languages_.count(code) > 0;
  }

  const LanguageInfo& require(const LanguageCode& code) const {
    auto it = languages_.find(code);
    if (it == languages_.end())
      throw ValidationError("unregistered language code '" + code.str() + "'");
    return it->second;
  }

  const std::map<LanguageCode, LanguageInfo>& all() const { return languages_; }

 private:
  std::map<LanguageCode, LanguageInfo> languages_;
};

}  // namespace xicl
