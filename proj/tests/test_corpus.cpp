#include <doctest.h>

#include <set>
#include <string>

#include "cpoforge/corpus.hpp"
#include "cpoforge/errors.hpp"
#include "support/test_util.hpp"

using namespace cpoforge;
using cpoforge::testing::TempDir;
using cpoforge::testing::spit;

namespace {

Corpus numbered_corpus(std::size_t n) {
  Corpus corpus;
  corpus.name = "numbered";
  for (std::size_t i = 0; i < n; ++i) {
    corpus.pairs.push_back({"source " + std::to_string(i),
                            "target " + std::to_string(i),
                            static_cast<std::int64_t>(i)});
  }
  return corpus;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("load_tm reads source/target records in order") {
  TempDir dir("corpus");
  spit(dir.file("tm.jsonl"),
       R"({"source": "Press the Save button to store changes.", "target": "Pressione o botão Salvar para armazenar as alterações."})"
       "\n"
       R"({"source": "b", "target": "c", "note": "unknown fields ignored"})"
       "\n");
  const Corpus corpus = load_tm(dir.file("tm.jsonl"));
  REQUIRE(corpus.pairs.size() == 2);
  CHECK(corpus.pairs[0].source == "Press the Save button to store changes.");
  CHECK(corpus.pairs[0].chosen ==
        "Pressione o botão Salvar para armazenar as alterações.");
  CHECK(corpus.pairs[0].id == 0);
  CHECK(corpus.pairs[1].id == 1);
}

TEST_CASE("load_tm rejects an empty file") {
  TempDir dir("corpus");
  spit(dir.file("empty.jsonl"), "");
  CHECK_THROWS_WITH_AS(load_tm(dir.file("empty.jsonl")),
                       doctest::Contains("corpus empty"), UserError);
}

TEST_CASE("load_tm reports the line of a blank target") {
  TempDir dir("corpus");
  spit(dir.file("tm.jsonl"),
       R"({"source": "a", "target": "x"})" "\n"
       R"({"source": "b", "target": "   "})" "\n"
       R"({"source": "c", "target": "z"})" "\n");
  CHECK_THROWS_WITH_AS(load_tm(dir.file("tm.jsonl")), doctest::Contains(":2:"),
                       UserError);
  try {
    load_tm(dir.file("tm.jsonl"));
  } catch (const UserError& e) {
    CHECK(std::string(e.what()).find("target") != std::string::npos);
    CHECK(std::string(e.what()).find("id 1") != std::string::npos);
  }
}

TEST_CASE("load_tm reports malformed JSON with its line number") {
  TempDir dir("corpus");
  spit(dir.file("tm.jsonl"),
       R"({"source": "a", "target": "x"})" "\n"
       "{not json\n");
  CHECK_THROWS_WITH_AS(load_tm(dir.file("tm.jsonl")), doctest::Contains(":2:"),
                       UserError);
}

TEST_CASE("load_tm errors on a missing file") {
  CHECK_THROWS_WITH_AS(load_tm("/nonexistent/tm.jsonl"),
                       doctest::Contains("/nonexistent/tm.jsonl"), UserError);
}

TEST_CASE("save then load preserves ids sources and targets") {
  TempDir dir("corpus");
  Corpus corpus = numbered_corpus(7);
  corpus.pairs[3].chosen = "저장 버튼을 누르세요";  // UTF-8 survives
  save_tm(corpus, dir.file("out.jsonl"));
  const Corpus loaded = load_tm(dir.file("out.jsonl"));
  REQUIRE(loaded.pairs.size() == corpus.pairs.size());
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    CHECK(loaded.pairs[i].id == corpus.pairs[i].id);
    CHECK(loaded.pairs[i].source == corpus.pairs[i].source);
    CHECK(loaded.pairs[i].chosen == corpus.pairs[i].chosen);
  }
}

TEST_CASE("subset takes a prefix and subsets nest") {
  const Corpus corpus = numbered_corpus(50);
  const Corpus first = subset(corpus, 10);
  REQUIRE(first.pairs.size() == 10);
  CHECK(first.pairs[9].id == 9);

  const Corpus identical = subset(corpus, 50);
  CHECK(identical.pairs.size() == corpus.pairs.size());

  const Corpus bigger = subset(corpus, 20);
  for (std::size_t i = 0; i < first.pairs.size(); ++i) {
    CHECK(first.pairs[i].id == bigger.pairs[i].id);
  }
}

TEST_CASE("subset rejects zero and oversize") {
  const Corpus corpus = numbered_corpus(5);
  CHECK_THROWS_AS(subset(corpus, 0), UserError);
  CHECK_THROWS_AS(subset(corpus, 6), UserError);
}

TEST_CASE("split partitions deterministically") {
  const Corpus corpus = numbered_corpus(100);
  const SplitResult a = split(corpus, 0.1, 0.1, 42);
  const SplitResult b = split(corpus, 0.1, 0.1, 42);
  CHECK(a.train.pairs.size() == 80);
  CHECK(a.dev.pairs.size() == 10);
  CHECK(a.test.pairs.size() == 10);

  auto ids = [](const Corpus& c) {
    std::vector<std::int64_t> out;
    for (const auto& p : c.pairs) out.push_back(p.id);
    return out;
  };
  CHECK(ids(a.train) == ids(b.train));
  CHECK(ids(a.dev) == ids(b.dev));
  CHECK(ids(a.test) == ids(b.test));

  // partition: union of ids is the corpus, intersections empty
  std::set<std::int64_t> all;
  for (const Corpus* part : {&a.train, &a.dev, &a.test}) {
    for (const auto& p : part->pairs) {
      CHECK(all.insert(p.id).second);  // no duplicates across parts
    }
  }
  CHECK(all.size() == corpus.pairs.size());

  const SplitResult c = split(corpus, 0.1, 0.1, 43);
  CHECK(ids(a.dev) != ids(c.dev));  // different seed moves membership
}

TEST_CASE("split with zero fractions keeps everything in train") {
  const Corpus corpus = numbered_corpus(10);
  const SplitResult r = split(corpus, 0.0, 0.0, 1);
  CHECK(r.train.pairs.size() == 10);
  CHECK(r.dev.pairs.empty());
  CHECK(r.test.pairs.empty());
}

TEST_CASE("split rejects fractions summing to one") {
  const Corpus corpus = numbered_corpus(10);
  CHECK_THROWS_AS(split(corpus, 0.5, 0.5, 1), UserError);
  CHECK_THROWS_AS(split(corpus, -0.1, 0.2, 1), UserError);
}

TEST_CASE("subset schedule validation") {
  SubsetSchedule schedule{{1000, 2000, 5000}};
  schedule.validate(5000);
  CHECK_THROWS_AS(schedule.validate(4999), UserError);
  CHECK_THROWS_AS((SubsetSchedule{{1000, 1000}}).validate(5000), UserError);
  CHECK_THROWS_AS((SubsetSchedule{{0, 10}}).validate(100), UserError);
  CHECK_THROWS_AS((SubsetSchedule{{}}).validate(100), UserError);
}

}  // TEST_SUITE
