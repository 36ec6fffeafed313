#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <set>

#include "xicl/corpus.hpp"

using namespace xicl;
namespace fs = std::filesystem;

namespace {

nlohmann::json marc_descriptor_json() {
  return nlohmann::json::parse(R"({
    "task": "marc",
    "languages": [
      {"code": "en", "family": "IE: GERMANIC"},
      {"code": "es", "family": "IE: ITALIC"},
      {"code": "fr", "family": "IE: ITALIC"}
    ],
    "label_spaces": {
      "en": [["bad", "bad"], ["good", "good"]],
      "es": [["malo", "malo"], ["bueno", "bueno"]],
      "fr": [["mal", "mal"], ["bien", "bien"]]
    }
  })");
}

DatasetDescriptor marc_descriptor() {
  return DatasetDescriptor::from_json(marc_descriptor_json());
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("xicl_corpus_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

}  // namespace

TEST_CASE("label space rejects duplicates and empties") {
  LanguageCode en("en");
  CHECK_THROWS_AS(LabelSpace(en, {{"a", "x"}, {"a", "y"}}), ValidationError);
  CHECK_THROWS_AS(LabelSpace(en, {{"a", "x"}, {"b", "x"}}), ValidationError);
  CHECK_THROWS_AS(LabelSpace(en, {{"a", ""}}), ValidationError);
  CHECK_THROWS_AS(LabelSpace(en, {}), ValidationError);
}

TEST_CASE("map_label follows position") {
  auto d = marc_descriptor();
  const auto& en = d.label_spaces.at(LanguageCode("en"));
  const auto& es = d.label_spaces.at(LanguageCode("es"));
  const auto& fr = d.label_spaces.at(LanguageCode("fr"));

  CHECK(map_label("bad", en, es) == "malo");
  CHECK(map_label("good", en, es) == "bueno");

  SECTION("identity on the same space") {
    CHECK(map_label("bad", en, en) == "bad");
    CHECK(map_label("good", en, en) == "good");
  }

  SECTION("round trip is the identity for every label and pair") {
    const LabelSpace* spaces[] = {&en, &es, &fr};
    for (const auto* a : spaces)
      for (const auto* b : spaces)
        for (std::size_t i = 0; i < a->size(); ++i) {
          const auto& label = a->id_at(i);
          CHECK(map_label(map_label(label, *a, *b), *b, *a) == label);
        }
  }

  SECTION("bijection: distinct labels map to distinct labels") {
    std::set<std::string> images;
    for (std::size_t i = 0; i < en.size(); ++i)
      images.insert(map_label(en.id_at(i), en, es));
    CHECK(images.size() == en.size());
  }

  SECTION("cardinality mismatch rejected") {
    LabelSpace three(LanguageCode("de"),
                     {{"a", "x"}, {"b", "y"}, {"c", "z"}});
    CHECK_THROWS_AS(map_label("bad", en, three), ValidationError);
  }
}

TEST_CASE("load_split_file assigns ids in file order and validates") {
  auto dir = temp_dir("load");
  auto d = marc_descriptor();

  SECTION("well-formed file") {
    write_file(dir / "ok.jsonl",
               R"({"text": "great product", "label": "good", "lang": "en"})"
               "\n"
               R"({"text": "broke right away", "label": "bad", "lang": "en"})"
               "\n");
    auto examples = load_split_file(dir / "ok.jsonl", d);
    REQUIRE(examples.size() == 2);
    CHECK(examples[0].id == 0);
    CHECK(examples[1].id == 1);
    CHECK(examples[0].text == "great product");
    CHECK(examples[1].label == "bad");
    CHECK(examples[0].lang == LanguageCode("en"));
  }

  SECTION("empty file loads as empty, no error") {
    write_file(dir / "empty.jsonl", "");
    CHECK(load_split_file(dir / "empty.jsonl", d).empty());
  }

  SECTION("bad label names the line") {
    write_file(dir / "bad.jsonl",
               R"({"text": "a", "label": "good", "lang": "en"})"
               "\n"
               R"({"text": "b", "label": "regular", "lang": "en"})"
               "\n"
               R"({"text": "c", "label": "bad", "lang": "en"})"
               "\n");
    CHECK_THROWS_WITH(load_split_file(dir / "bad.jsonl", d),
                      Catch::Matchers::ContainsSubstring("line 2"));
  }

  SECTION("unknown language code rejected") {
    write_file(dir / "lang.jsonl",
               R"({"text": "a", "label": "good", "lang": "xx"})"
               "\n");
    CHECK_THROWS_WITH(load_split_file(dir / "lang.jsonl", d),
                      Catch::Matchers::ContainsSubstring("xx"));
  }

  SECTION("empty text rejected with line number") {
    write_file(dir / "text.jsonl",
               R"({"text": "", "label": "good", "lang": "en"})"
               "\n");
    CHECK_THROWS_WITH(load_split_file(dir / "text.jsonl", d),
                      Catch::Matchers::ContainsSubstring("line 1"));
  }

  SECTION("malformed JSON names the line") {
    write_file(dir / "mal.jsonl", "{not json}\n");
    CHECK_THROWS_WITH(load_split_file(dir / "mal.jsonl", d),
                      Catch::Matchers::ContainsSubstring("line 1"));
  }

  SECTION("invalid UTF-8 rejected") {
    write_file(dir / "utf8.jsonl",
               std::string(R"({"text": "a)") + "\xC3\x28" +
                   R"(", "label": "good", "lang": "en"})" + "\n");
    CHECK_THROWS_WITH(load_split_file(dir / "utf8.jsonl", d),
                      Catch::Matchers::ContainsSubstring("UTF-8"));
  }
}

TEST_CASE("load_dataset checks declared counts as warnings") {
  auto dir = temp_dir("counts");
  auto j = marc_descriptor_json();
  j["expected_counts"] = {{"en", {{"train", 3}}}};
  auto d = DatasetDescriptor::from_json(j);
  write_file(dir / "en_train.jsonl",
             R"({"text": "a", "label": "good", "lang": "en"})"
             "\n");
  std::vector<std::string> warnings;
  auto dataset = load_dataset(dir, d, &warnings);
  CHECK(dataset.split(LanguageCode("en"), Split::train).size() == 1);
  REQUIRE(warnings.size() == 1);
  CHECK_THAT(warnings[0], Catch::Matchers::ContainsSubstring("declared 3"));

  SECTION("matching counts warn nothing") {
    auto j2 = marc_descriptor_json();
    j2["expected_counts"] = {{"en", {{"train", 1}}}};
    std::vector<std::string> none;
    load_dataset(dir, DatasetDescriptor::from_json(j2), &none);
    CHECK(none.empty());
  }
}

TEST_CASE("save then load is lossless") {
  auto dir = temp_dir("roundtrip");
  auto d = marc_descriptor();
  std::vector<LabeledExample> examples = {
      {0, "they were nice but too big.", "good", LanguageCode("en")},
      {1, "no me llegó el artículo", "bad", LanguageCode("en")},
      {2, "日本語のテキスト", "good", LanguageCode("en")},
  };
  save_split_file(dir / "en_train.jsonl", examples);
  auto loaded = load_split_file(dir / "en_train.jsonl", d);
  CHECK(loaded == examples);
}

TEST_CASE("sample_random is deterministic and without replacement") {
  auto dir = temp_dir("sample");
  auto d = marc_descriptor();
  std::string file;
  for (int i = 0; i < 20; ++i)
    file += R"({"text": "example number )" + std::to_string(i) +
            R"(", "label": "good", "lang": "en"})" + "\n";
  write_file(dir / "en_train.jsonl", file);
  auto dataset = load_dataset(dir, d);
  LanguageCode en("en");

  SECTION("same seed, same selection") {
    auto a = sample_random(dataset, en, Split::train, 4, 42);
    auto b = sample_random(dataset, en, Split::train, 4, 42);
    CHECK(a == b);
    REQUIRE(a.size() == 4);
    std::set<std::int64_t> ids;
    for (const auto& ex : a) ids.insert(ex.id);
    CHECK(ids.size() == 4);
  }

  SECTION("k = 0 gives an empty list") {
    CHECK(sample_random(dataset, en, Split::train, 0, 42).empty());
  }

  SECTION("k = split size covers the whole split") {
    auto all = sample_random(dataset, en, Split::train, 20, 7);
    std::set<std::int64_t> ids;
    for (const auto& ex : all) ids.insert(ex.id);
    std::set<std::int64_t> expected;
    for (const auto& ex : dataset.split(en, Split::train))
      expected.insert(ex.id);
    CHECK(ids == expected);
  }

  SECTION("k beyond split size is an error") {
    CHECK_THROWS_AS(sample_random(dataset, en, Split::train, 21, 42),
                    ValidationError);
  }

  SECTION("the recorded seed list replays to frozen selections") {
    // Frozen outputs of the documented sampler (mt19937_64 + rejection
    // bounded draws + partial Fisher-Yates) for the run seed list. Any
    // change to the sampling path must show up here.
    std::map<std::uint64_t, std::vector<std::int64_t>> recorded = {
        {32, {15, 3, 14, 13}},
        {5, {2, 0, 4, 16}},
        {232, {2, 14, 13, 19}},
        {100, {18, 13, 10, 9}},
        {42, {6, 0, 1, 2}},
    };
    for (const auto& [seed, expected] : recorded) {
      auto sel = sample_random(dataset, en, Split::train, 4, seed);
      std::vector<std::int64_t> got;
      for (const auto& ex : sel) got.push_back(ex.id);
      INFO("seed " << seed);
      CHECK(got == expected);
    }
  }
}

TEST_CASE("descriptor validation") {
  SECTION("label space cardinality must match across languages") {
    auto j = marc_descriptor_json();
    j["label_spaces"]["es"] = {{"malo", "malo"}};
    CHECK_THROWS_AS(DatasetDescriptor::from_json(j), ValidationError);
  }
  SECTION("every language needs a label space") {
    auto j = marc_descriptor_json();
    j["label_spaces"].erase("fr");
    CHECK_THROWS_AS(DatasetDescriptor::from_json(j), ValidationError);
  }
}
