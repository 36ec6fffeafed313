#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xicl/corpus.hpp"
#include "xicl/errors.hpp"
#include "xicl/prompt.hpp"
#include "xicl/util.hpp"

namespace xicl {

struct ScoreRequest {
  std::string prompt_text;
  std::vector<std::string> candidates;  // non-empty, unique, order matters

  void validate() const {
    if (candidates.empty())
      throw ValidationError("score request with no candidates");
    for (std::size_t i = 0; i < candidates.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (candidates[i] == candidates[j])
          throw ValidationError("duplicate candidate '" + candidates[i] + "'");
  }

  nlohmann::json to_json() const {
    return {{"prompt", prompt_text}, {"candidates", candidates}};
  }
};

struct ScoreResponse {
  std::vector<double> log_probs;  // same length and order as candidates
  std::string scorer_fingerprint;
};

class ScorerClient {
 public:
  virtual ~ScorerClient() = default;
  virtual ScoreResponse score(const ScoreRequest& request) = 0;
  virtual std::string fingerprint() const = 0;
};

inline void validate_response(const ScoreRequest& request,
                              const ScoreResponse& response) {
  if (response.log_probs.size() != request.candidates.size())
    throw ProtocolError("scorer returned " +
                        std::to_string(response.log_probs.size()) +
                        " scores for " +
                        std::to_string(request.candidates.size()) +
                        " candidates");
  for (double lp : response.log_probs)
    if (!std::isfinite(lp))
      throw ProtocolError("scorer returned a non-finite score");
}

/// Deterministic stand-in scorer: each (prompt, candidate) pair hashes to a
/// pseudo log-prob in [-10, 0). Replays identically across runs/platforms.
class HashMockScorer final : public ScorerClient {
 public:
  explicit HashMockScorer(std::uint64_t key = 0) : key_(key) {}

  ScoreResponse score(const ScoreRequest& request) override {
    request.validate();
    ScoreResponse response;
    response.scorer_fingerprint = fingerprint();
    response.log_probs.reserve(request.candidates.size());
    for (const auto& c : request.candidates)
      response.log_probs.push_back(log_prob(request.prompt_text, c, key_));
    return response;
  }

  std::string fingerprint() const override {
    return "mock-hash/v1(key=" + std::to_string(key_) + ")";
  }

  static double log_prob(std::string_view prompt, std::string_view candidate,
                         std::uint64_t key) {
    std::uint64_t h = fnv1a64(candidate, fnv1a64("\x1f", fnv1a64(prompt)));
    h = mix64(h, key);
    return -static_cast<double>(h % 100000) / 10000.0;
  }

 private:
  std::uint64_t key_;
};

enum class KeywordScope { test_segment, full_prompt };

/// Per-candidate lexicons for the keyword mock scorer.
struct KeywordLexicon {
  std::map<std::string, std::set<std::string>> terms;  // candidate -> words

  static KeywordLexicon from_json(const nlohmann::json& j) {
    KeywordLexicon lex;
    for (const auto& [candidate, words] : j.items()) {
      auto& set = lex.terms[candidate];
      for (const auto& w : words) set.insert(ascii_lower(w.get<std::string>()));
    }
    return lex;
  }
};

// Keyword mock scoring rule (the independent test oracle re-implements it):
//   segment  = text after the last separator occurrence (test_segment
//              scope) or the whole prompt (full_prompt scope);
//   tokens   = whitespace-split words, ASCII-lowercased, leading/trailing
//              non-alphanumeric ASCII stripped;
//   overlap  = number of token occurrences found in the candidate's lexicon;
//   log_prob = overlap plus a deterministic hash jitter of at most 1e-9,
//              which breaks exact ties reproducibly.
class KeywordMockScorer final : public ScorerClient {
 public:
  KeywordMockScorer(KeywordLexicon lexicon, KeywordScope scope,
                    std::string sep = "</s>")
      : lexicon_(std::move(lexicon)), scope_(scope), sep_(std::move(sep)) {}

  ScoreResponse score(const ScoreRequest& request) override {
    request.validate();
    ScoreResponse response;
    response.scorer_fingerprint = fingerprint();
    std::string_view segment = scored_segment(request.prompt_text);
    for (const auto& candidate : request.candidates) {
      int overlap = overlap_count(segment, candidate);
      double jitter =
          static_cast<double>(
              fnv1a64(candidate, fnv1a64(request.prompt_text)) % 997) *
          1e-12;
      response.log_probs.push_back(static_cast<double>(overlap) + jitter);
    }
    return response;
  }

  std::string fingerprint() const override {
    return std::string("mock-keyword/v1(scope=") +
           (scope_ == KeywordScope::test_segment ? "test_segment"
                                                 : "full_prompt") +
           ")";
  }

  int overlap_count(std::string_view segment,
                    const std::string& candidate) const {
    auto it = lexicon_.terms.find(candidate);
    if (it == lexicon_.terms.end()) return 0;
    int overlap = 0;
    for (const auto& raw : split_whitespace(segment)) {
      auto word = ascii_lower(trim_punct(raw));
      if (!word.empty() && it->second.count(word)) ++overlap;
    }
    return overlap;
  }

 private:
  std::string_view scored_segment(std::string_view prompt) const {
    if (scope_ == KeywordScope::full_prompt) return prompt;
    auto pos = prompt.rfind(sep_);
    if (pos == std::string_view::npos) return prompt;
    return prompt.substr(pos + sep_.size());
  }

  KeywordLexicon lexicon_;
  KeywordScope scope_;
  std::string sep_;
};

/// The argmax label with its full score vector retained for audit. Exact
/// ties resolve to the lowest label-space index.
struct Prediction {
  std::string label_id;
  std::string verbalization;
  double log_prob = 0.0;
  std::vector<double> all_scores;
  std::string scorer_fingerprint;
};

/// Pure argmax over a recorded response; replaying a response reproduces
/// the label.
inline Prediction select_prediction(const ScoreResponse& response,
                                    const LabelSpace& prediction_space) {
  if (response.log_probs.size() != prediction_space.size())
    throw ValidationError("score vector length " +
                          std::to_string(response.log_probs.size()) +
                          " does not match label space size " +
                          std::to_string(prediction_space.size()));
  std::size_t best = 0;
  for (std::size_t i = 1; i < response.log_probs.size(); ++i)
    if (response.log_probs[i] > response.log_probs[best]) best = i;
  Prediction p;
  p.label_id = prediction_space.id_at(best);
  p.verbalization = prediction_space.verbalization_at(best);
  p.log_prob = response.log_probs[best];
  p.all_scores = response.log_probs;
  p.scorer_fingerprint = response.scorer_fingerprint;
  return p;
}

/// Scores the prediction space's verbalizations as continuations of the
/// plan's final text and picks the argmax. The prediction space is the
/// target space, except under the uniform_label_space variant where the
/// caller passes the source space instead.
inline Prediction predict_label(ScorerClient& scorer, const PromptPlan& plan,
                                const LabelSpace& prediction_space) {
  ScoreRequest request;
  request.prompt_text = plan.final_text;
  request.candidates = prediction_space.verbalizations();
  request.validate();
  ScoreResponse response = scorer.score(request);
  validate_response(request, response);
  return select_prediction(response, prediction_space);
}

}  // namespace xicl
