#include <doctest.h>

#include <cmath>

#include "krone/decompose.hpp"
#include "krone/error.hpp"
#include "krone/knowledge.hpp"
#include "krone/provider.hpp"
#include "krone/semantics.hpp"
#include "test_support.hpp"

using namespace krone;
using namespace krone::testing;

namespace {

TemplateCatalog toy_catalog() {
  TemplateCatalog c;
  c.add({"k1", "Open session started"});
  c.add({"k2", "Open session successful"});
  c.add({"k3", "Authentication starts"});
  c.add({"k4", "Authentication succeeded"});
  c.add({"k5", "Connection sent GET request to <*>"});
  c.add({"k6", "Connection received GET response from <*>"});
  return c;
}

// Expected embedding computed directly: FNV-1a 64 bucket counts, unit norm.
Embedding oracle_embedding(const KeyList& chunk, std::size_t dim) {
  Embedding v(dim, 0.0);
  for (const auto& k : chunk) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : k) {
      h ^= c;
      h *= 1099511628211ull;
    }
    v[h % dim] += 1.0;
  }
  double n = 0;
  for (double x : v) n += x * x;
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

}  // namespace

TEST_CASE("embedding determinism and direct computation") {
  const KeyList a{"k1", "k2", "k2"};
  CHECK(embed_chunk(a) == embed_chunk(a));
  const auto got = embed_chunk(a, 64);
  const auto want = oracle_embedding(a, 64);
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]));
}

TEST_CASE("distinct single keys are not identical unless they collide") {
  const KeyList k1{"k1"}, k2{"k2"};
  const auto e1 = embed_chunk(k1), e2 = embed_chunk(k2);
  const auto o1 = oracle_embedding(k1, kDefaultEmbeddingDim), o2 = oracle_embedding(k2, kDefaultEmbeddingDim);
  const bool collide = o1 == o2;
  if (collide) {
    CHECK(cosine_similarity(e1, e2) == doctest::Approx(1.0));
  } else {
    CHECK(cosine_similarity(e1, e2) < 1.0);
  }
}

TEST_CASE("self-concatenation keeps the direction") {
  const KeyList a{"k1", "k5", "k9"};
  KeyList aa = a;
  aa.insert(aa.end(), a.begin(), a.end());
  CHECK(cosine_similarity(embed_chunk(a), embed_chunk(aa)) == doctest::Approx(1.0));
}

TEST_CASE("embedding contract") {
  CHECK_THROWS_AS(embed_chunk({}), ContractError);
  const KeyList a{"k1"};
  CHECK_THROWS_AS(embed_chunk(a, 0), ContractError);
}

TEST_CASE("status summaries through the mock") {
  MockProvider mock;
  const auto catalog = toy_catalog();
  Summarizer sum(mock, &catalog);
  const auto r = top_down_decompose(toy_keys(), toy_tree());
  CHECK(sum.summarize_s_seq(r.s_seqs[0]) == "S:started>succf");
  const auto req = mock.last_request();
  REQUIRE(req);
  CHECK(req->task == PromptTask::summarize);
  CHECK(req->prompt.find("Open session started") != std::string::npos);
  CHECK(req->prompt.find("Open session successful") != std::string::npos);

  SUBCASE("empty-status Seq summarises its single template") {
    CHECK(sum.summarize_s_seq(r.s_seqs[1]) == "S:none");
    CHECK(mock.last_request()->prompt.find("Authentication starts") != std::string::npos);
  }
  SUBCASE("a repeated Seq costs one call") {
    const auto before = mock.call_count();
    sum.summarize_s_seq(r.s_seqs[0]);
    CHECK(mock.call_count() == before);
  }
}

TEST_CASE("parent summaries") {
  MockProvider mock;
  Summarizer sum(mock);
  const auto r = top_down_decompose(toy_keys(), toy_tree());
  const std::vector<std::string> kids{"S:none", "S:none"};
  CHECK(sum.summarize_parent(r.a_seqs[1], kids) == "A:start>succd[S:none;S:none]");
  const auto req = mock.last_request();
  CHECK(req->prompt.find("S:none") != std::string::npos);

  const std::vector<std::string> one{"S:started>succf"};
  CHECK(sum.summarize_parent(r.a_seqs[0], one) == "A:open[S:started>succf]");

  const auto before = mock.call_count();
  const std::vector<std::string> three{"x", "y", "z"};
  sum.summarize_parent(r.e_seq, three);
  CHECK(mock.call_count() == before + 1);
  CHECK(mock.last_request()->prompt.find("x") != std::string::npos);

  const std::vector<std::string> missing{"x", "", "z"};
  CHECK_THROWS_AS(sum.summarize_parent(r.e_seq, missing), ContractError);
}

TEST_CASE("summarize_all covers every Seq with one call per unique input") {
  MockProvider mock;
  Summarizer sum(mock);
  const auto r = top_down_decompose(toy_keys(), toy_tree());
  const auto s = sum.summarize_all(r);
  CHECK(s.s_seqs.size() == 5);
  CHECK(s.a_seqs.size() == 3);
  CHECK(s.e_seq ==
        "E:Session>Auth>Comm[A:open[S:started>succf];A:start>succd[S:none;S:none];A:GET_req>GET_res[S:none;S:none]]");
  // S:none under Auth/start, Auth/succd, Comm/GET_req and Comm/GET_res differ by signature.
  CHECK(mock.call_count() == 9);
  CHECK(sum.summarize(r.a_seqs[2], r) == s.a_seqs[2]);
  CHECK(mock.call_count() == 9);
}

TEST_CASE("provider failure during summarisation names the Seq") {
  MockProvider mock(0);
  mock.queue_failure("down");
  Summarizer sum(mock);
  const auto r = top_down_decompose(toy_keys(), toy_tree());
  try {
    sum.summarize_s_seq(r.s_seqs[0]);
    FAIL("expected ProviderError");
  } catch (const ProviderError& e) {
    CHECK(std::string(e.what()).find("root/Session/open|started>succf") != std::string::npos);
  }
}

TEST_CASE("detection response parsing") {
  auto p = parse_detection_response("abnormal: missing response");
  REQUIRE(p);
  CHECK(p->verdict == Verdict::abnormal);
  CHECK(p->explanation == "missing response");
  p = parse_detection_response("Thinking...\nverdict: Normal\nroutine refresh");
  REQUIRE(p);
  CHECK(p->verdict == Verdict::normal);
  CHECK(p->explanation.find("routine refresh") != std::string::npos);
  CHECK_FALSE(parse_detection_response("I am not sure"));
  CHECK_FALSE(parse_detection_response("VERDICT: MAYBE"));
}

TEST_CASE("llm_detect") {
  DetectionPrompt prompt{"S:x", {"S:a", "S:b"}, "root/P/x", Level::status, "root/P/x|x", "k1"};
  SUBCASE("scripted verdict") {
    MockProvider mock;
    mock.script(PromptTask::detect, "root/P/x|x", "abnormal: missing response");
    const auto v = llm_detect(prompt, mock);
    CHECK(v.verdict == Verdict::abnormal);
    CHECK(v.explanation == "missing response");
    CHECK_FALSE(v.low_confidence);
    CHECK(mock.last_request()->prompt.find("S:a") != std::string::npos);
  }
  SUBCASE("unparseable answers retry then fall back to low-confidence abnormal") {
    MockProvider mock;
    mock.set_default_detect("no idea");
    const auto v = llm_detect(prompt, mock, 2);
    CHECK(v.verdict == Verdict::abnormal);
    CHECK(v.low_confidence);
    CHECK(mock.call_count() == 3);
  }
  SUBCASE("a later parseable answer wins") {
    MockProvider mock;
    mock.queue_response("hmm");
    mock.queue_response("VERDICT: NORMAL\nfine");
    const auto v = llm_detect(prompt, mock, 2);
    CHECK(v.verdict == Verdict::normal);
    CHECK(mock.call_count() == 2);
  }
  SUBCASE("transport failure escapes") {
    MockProvider mock(0);
    mock.queue_failure("down");
    CHECK_THROWS_AS(llm_detect(prompt, mock), ProviderError);
  }
}

TEST_CASE("recorded replay gives identical verdicts") {
  TempDir dir;
  DetectionPrompt prompt{"S:x", {}, "root/P/x", Level::status, "sig", "k1"};
  std::string first;
  {
    auto inner = std::make_unique<MockProvider>();
    inner->script(PromptTask::detect, "sig", "VERDICT: NORMAL\nseen before");
    RecordedProvider rec(dir / "rec.jsonl", std::move(inner));
    first = llm_detect(prompt, rec).explanation;
  }
  for (int run = 0; run < 2; ++run) {
    RecordedProvider replay(dir / "rec.jsonl");
    const auto v = llm_detect(prompt, replay);
    CHECK(v.verdict == Verdict::normal);
    CHECK(v.explanation == first);
    CHECK(replay.misses() == 0);
  }
}
