#include <doctest.h>

#include <numeric>

#include "krone/decompose.hpp"
#include "krone/error.hpp"
#include "krone/knowledge.hpp"
#include "test_support.hpp"

using namespace krone;
using namespace krone::testing;

namespace {

DecompositionResult toy() { return top_down_decompose(toy_keys(), toy_tree()); }

KroneSeq entity_seq(std::vector<std::string> names, KeyList chunk = {"k1"}) {
  KroneSeq s;
  s.level = Level::entity;
  s.parent_names = {"root"};
  s.node_names = std::move(names);
  s.chunk = std::move(chunk);
  s.signature = seq_signature(s);
  return s;
}

KroneSeq status_seq(const std::string& parent, std::vector<std::string> names, KeyList chunk) {
  KroneSeq s;
  s.level = Level::status;
  s.parent_names = {"root", "P", parent};
  s.node_names = std::move(names);
  s.chunk = std::move(chunk);
  s.signature = seq_signature(s);
  return s;
}

}  // namespace

TEST_CASE("insert counts occurrences") {
  TrainKnowledgeBase kb(Level::entity);
  CHECK(kb.empty());
  kb.insert(toy().e_seq);
  CHECK(kb.size() == 1);
  kb.insert(toy().e_seq);
  CHECK(kb.size() == 1);
  CHECK(kb.get("root|Session>Auth>Comm")->occurrence_count == 2);
  CHECK(kb.get("root|Session>Auth>Comm")->example_chunk == toy_keys());
}

TEST_CASE("insert rejects a level mismatch") {
  TrainKnowledgeBase kb(Level::action);
  CHECK_THROWS_AS(kb.insert(toy().e_seq), ContractError);
}

TEST_CASE("transitions follow adjacency enumeration") {
  TrainKnowledgeBase kb(Level::entity);
  const auto e = toy().e_seq;
  kb.insert(e);
  std::set<Transition> want;
  std::optional<std::string> prev;
  for (const auto& n : e.node_names) {
    want.insert({prev, n});
    prev = n;
  }
  want.insert({prev, std::nullopt});
  CHECK(kb.transitions("root") == want);
  CHECK(want.size() == 4);
}

TEST_CASE("membership") {
  TrainKnowledgeBase kb(Level::entity);
  CHECK_FALSE(kb.contains("root|Session>Auth>Comm"));
  kb.insert(toy().e_seq);
  CHECK(kb.contains("root|Session>Auth>Comm"));
  CHECK_FALSE(kb.contains("root|Session>Comm"));
  CHECK(kb_contains(kb, "root|Session>Auth>Comm"));
}

TEST_CASE("automaton acceptance") {
  TrainKnowledgeBase kb(Level::entity);
  kb.insert(entity_seq({"A", "B"}));
  kb.insert(entity_seq({"B", "C"}));
  const std::vector<std::string> abc{"A", "B", "C"};
  const std::vector<std::string> ac{"A", "C"};
  CHECK(kb.accepts("root", abc));
  CHECK_FALSE(kb.accepts("root", ac));
  CHECK_FALSE(kb.accepts("other", abc));
}

TEST_CASE("retrieval") {
  TrainKnowledgeBase kb(Level::status);
  kb.insert(status_seq("x", {"a"}, {"k1"}));
  kb.insert(status_seq("x", {"b"}, {"k2"}));
  kb.insert(status_seq("y", {"c"}, {"k3"}));
  const Embedding ea{1, 0, 0}, eb{0, 1, 0}, ec{0, 0, 1};
  kb.set_embedding("root/P/x|a", ea);
  kb.set_embedding("root/P/x|b", eb);
  kb.set_embedding("root/P/y|c", ec);

  SUBCASE("self-similarity ranks first") {
    const auto got = kb.retrieve_similar("root/P/x", eb, 1);
    REQUIRE(got.size() == 1);
    CHECK(got[0].signature == "root/P/x|b");
  }
  SUBCASE("m above the sibling count returns every sibling") {
    CHECK(kb.retrieve_similar("root/P/x", ea, 5).size() == 2);
  }
  SUBCASE("unknown parent gives nothing") { CHECK(kb.retrieve_similar("root/P/z", ea, 5).empty()); }
  SUBCASE("free wrapper takes a parent path") {
    const std::vector<std::string> path{"root", "P", "y"};
    CHECK(kb_retrieve_similar(kb, path, ec, 3).at(0).signature == "root/P/y|c");
  }
}

TEST_CASE("retrieval without embeddings is an error") {
  TrainKnowledgeBase kb(Level::status);
  kb.insert(status_seq("x", {"a"}, {"k1"}));
  const Embedding q{1.0};
  CHECK_THROWS_AS(kb.retrieve_similar("root/P/x", q, 1), RetrievalError);
}

TEST_CASE("property: retrieval matches exhaustive cosine ranking") {
  Rng rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int round = 0; round < 50; ++round) {
    TrainKnowledgeBase kb(Level::status);
    std::vector<std::pair<std::string, Embedding>> all;
    for (int i = 0; i < 10; ++i) {
      const auto s = status_seq("x", {"n" + std::to_string(i)}, {"k"});
      kb.insert(s);
      Embedding e(8);
      for (auto& v : e) v = u(rng);
      kb.set_embedding(s.signature, e);
      all.push_back({s.signature, e});
    }
    Embedding q(8);
    for (auto& v : q) v = u(rng);
    auto cos = [](const Embedding& a, const Embedding& b) {
      double dot = 0, na = 0, nb = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
      }
      return dot / std::sqrt(na * nb);
    };
    std::sort(all.begin(), all.end(), [&](const auto& a, const auto& b) { return cos(a.second, q) > cos(b.second, q); });
    const auto got = kb.retrieve_similar("root/P/x", q, 3);
    REQUIRE(got.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(got[i].signature == all[i].first);
  }
}

TEST_CASE("cosine similarity") {
  const std::vector<double> a{1, 2, 3}, b{2, 4, 6}, c{-1, -2, -3}, z{0, 0, 0};
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, c) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(a, z) == 0.0);
}

TEST_CASE("test KB is chunk keyed") {
  TestKnowledgeBase kb(Level::status);
  CHECK_FALSE(kb.lookup(chunk_key(KeyList{"k1"})));
  TestEntry e;
  e.signature = "root/P/x|a";
  e.chunk_key = chunk_key(KeyList{"k1"});
  e.verdict = Verdict::abnormal;
  e.source = VerdictSource::llm;
  e.explanation = "odd";
  test_kb_store(kb, e);
  const auto hit = test_kb_lookup(kb, chunk_key(KeyList{"k1"}));
  REQUIRE(hit);
  CHECK(*hit == e);
  CHECK_FALSE(kb.lookup(chunk_key(KeyList{"k2"})));
  e.verdict = Verdict::normal;
  kb.store(e);
  CHECK(kb.size() == 1);
  CHECK(kb.lookup(e.chunk_key)->verdict == Verdict::normal);
  kb.clear();
  CHECK(kb.size() == 0);
}

TEST_CASE("chunk keys are injective on separator-bearing keys") {
  CHECK(chunk_key(KeyList{"a,b"}) != chunk_key(KeyList{"a", "b"}));
  CHECK(chunk_key(KeyList{"a\\", "b"}) != chunk_key(KeyList{"a", "\\b"}));
  CHECK(chunk_key(KeyList{}).empty());
}

TEST_CASE("train KB persistence round-trip with 100 entries") {
  TempDir dir;
  TrainKnowledgeBase kb(Level::status);
  for (int i = 0; i < 100; ++i) {
    const auto s = status_seq("p" + std::to_string(i % 7), {"n" + std::to_string(i), "m"}, {"k1", "k2"});
    kb.insert(s);
    if (i % 3 == 0) kb.set_summary(s.signature, "summary " + std::to_string(i));
    if (i % 2 == 0) kb.set_embedding(s.signature, Embedding{0.25, -1.0 / 3.0, 1e-17});
  }
  kb.save(dir / "kb.json");
  const auto back = TrainKnowledgeBase::load(dir / "kb.json");
  CHECK(back == kb);
  CHECK(back.size() == 100);
  CHECK(back.transitions("root/P/p0") == kb.transitions("root/P/p0"));
}

TEST_CASE("truncated KB file is a format error") {
  TempDir dir;
  TrainKnowledgeBase kb(Level::entity);
  kb.insert(toy().e_seq);
  kb.save(dir / "kb.json");
  const auto text = slurp(dir / "kb.json");
  spit(dir / "cut.json", text.substr(0, text.size() / 2));
  CHECK_THROWS_AS(TrainKnowledgeBase::load(dir / "cut.json"), FormatError);
  CHECK_THROWS_AS(TestKnowledgeBase::load(dir / "cut.json"), FormatError);
}

TEST_CASE("empty KB persists") {
  TempDir dir;
  TrainKnowledgeBase kb(Level::action);
  kb.save(dir / "kb.json");
  const auto back = TrainKnowledgeBase::load(dir / "kb.json");
  CHECK(back.empty());
  CHECK(back.level() == Level::action);
}

TEST_CASE("KB set save and load") {
  TempDir dir;
  KbSet set;
  set.insert(toy());
  CHECK(set.train_kb(Level::entity).size() == 1);
  CHECK(set.train_kb(Level::action).size() == 3);
  CHECK(set.train_kb(Level::status).size() == 5);
  TestEntry e;
  e.signature = "root|X";
  e.chunk_key = chunk_key(KeyList{"k9"});
  set.test_kb(Level::entity).store(e);
  set.save(dir.path());
  CHECK(std::filesystem::exists(kb_file(dir.path(), "train", Level::status)));
  const auto back = KbSet::load(dir.path());
  CHECK(back == set);
  std::filesystem::remove(kb_file(dir.path(), "test", Level::entity));
  CHECK(KbSet::load(dir.path()).test_kb(Level::entity).size() == 0);
}
