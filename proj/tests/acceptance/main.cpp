// Acceptance harness: one PASS/FAIL line per criterion. Every expected value
// comes from a test-side oracle or a hand-written constant, never from the
// code under test.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "compare.hpp"
#include "krone/decompose.hpp"
#include "krone/detect.hpp"
#include "krone/eval.hpp"
#include "krone/pipeline.hpp"
#include "krone/provider.hpp"
#include "krone/synth.hpp"
#include "test_support.hpp"

using namespace krone;
using namespace krone::testing;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

LogSequence seq_of(const std::string& id, const KeyList& keys) {
  LogSequence s{id, {}, std::nullopt};
  for (const auto& k : keys) s.events.push_back({k, ""});
  return s;
}

// ---------------------------------------------------------------- 1

Outcome golden_decomposition() {
  const auto t0 = Clock::now();
  const auto tree = toy_tree();
  const auto r = top_down_decompose(toy_keys(), tree);
  const double dt = seconds_since(t0);

  using Names = std::vector<std::string>;
  using Chunks = std::vector<KeyList>;
  struct Row {
    Level level;
    Names parents;
    Names nodes;
    Chunks node_chunks;
  };
  // Rows 1 to 9 of the reference table, written out by hand.
  const std::vector<Row> want{
      {Level::entity, {"root"}, {"Session", "Auth", "Comm"}, {{"k1", "k2"}, {"k3", "k4"}, {"k5", "k6"}}},
      {Level::action, {"root", "Session"}, {"open"}, {{"k1", "k2"}}},
      {Level::action, {"root", "Auth"}, {"start", "succd"}, {{"k3"}, {"k4"}}},
      {Level::action, {"root", "Comm"}, {"GET_req", "GET_res"}, {{"k5"}, {"k6"}}},
      {Level::status, {"root", "Session", "open"}, {"started", "succf"}, {{"k1"}, {"k2"}}},
      {Level::status, {"root", "Auth", "start"}, {"none"}, {{"k3"}}},
      {Level::status, {"root", "Auth", "succd"}, {"none"}, {{"k4"}}},
      {Level::status, {"root", "Comm", "GET_req"}, {"none"}, {{"k5"}}},
      {Level::status, {"root", "Comm", "GET_res"}, {"none"}, {{"k6"}}},
  };
  std::vector<const KroneSeq*> got{&r.e_seq};
  for (const auto& a : r.a_seqs) got.push_back(&a);
  for (const auto& s : r.s_seqs) got.push_back(&s);
  if (got.size() != want.size()) return {false, fmt("%zu Seqs, want 9", got.size())};
  for (std::size_t i = 0; i < want.size(); ++i) {
    const auto& g = *got[i];
    KeyList flat;
    for (const auto& c : want[i].node_chunks) flat.insert(flat.end(), c.begin(), c.end());
    if (g.level != want[i].level || g.parent_names != want[i].parents || g.node_names != want[i].nodes ||
        g.node_chunks != want[i].node_chunks || g.chunk != flat)
      return {false, fmt("row %zu differs", i + 1)};
  }
  if (r.e_seq.children != std::vector<std::size_t>{0, 1, 2} || r.a_seqs[0].children != std::vector<std::size_t>{0} ||
      r.a_seqs[1].children != std::vector<std::size_t>{1, 2} || r.a_seqs[2].children != std::vector<std::size_t>{3, 4})
    return {false, "child links differ"};
  return {dt < 1.0, fmt("9 Seqs exact, %.3f ms", dt * 1e3)};
}

// ---------------------------------------------------------------- 2

Outcome reconstruction() {
  Rng rng(20240601);
  std::size_t violations = 0, total_keys = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto n_templates = uniform(rng, 1, 50);
    const auto triples = random_triples(rng, n_templates);
    const auto tree = KroneTree::build(triples);
    const auto keys = random_keys(rng, uniform(rng, 0, 500), n_templates);
    total_keys += keys.size();
    const auto r = top_down_decompose(keys, tree);
    KeyList flat;
    for (const auto& s : r.s_seqs) flat.insert(flat.end(), s.chunk.begin(), s.chunk.end());
    bool ok = flat == keys;
    auto no_adjacent_dup = [](const KroneSeq& s) {
      return std::adjacent_find(s.nodes.begin(), s.nodes.end()) == s.nodes.end();
    };
    ok = ok && (keys.empty() || no_adjacent_dup(r.e_seq));
    for (const auto& a : r.a_seqs) ok = ok && no_adjacent_dup(a);
    if (!ok) ++violations;
  }
  return {violations == 0, fmt("10000 sequences, %zu keys, %zu violations", total_keys, violations)};
}

// ---------------------------------------------------------------- 3

Outcome oracle_equivalence() {
  // Two entities, an action name shared across them, a two-status action.
  const std::vector<TopicTriple> triples{{"k0", "E1", "a1", "s0"}, {"k1", "E1", "a1", "s1"},
                                         {"k2", "E1", "a2", "s2"}, {"k3", "E2", "a1", "s3"}};
  const auto tree = KroneTree::build(triples);
  const auto t0 = Clock::now();
  std::size_t checked = 0, mismatches = 0;
  std::string first;
  for (std::size_t len = 0; len <= 10; ++len) {
    std::vector<std::size_t> digits(len, 0);
    KeyList keys(len);
    while (true) {
      for (std::size_t i = 0; i < len; ++i) keys[i] = triples[digits[i]].key;
      const auto d = diff_decomposition(top_down_decompose(keys, tree), oracle_decompose(keys, triples));
      ++checked;
      if (!d.empty()) {
        if (first.empty()) first = d;
        ++mismatches;
      }
      std::size_t i = 0;
      while (i < len && ++digits[i] == 4) digits[i++] = 0;
      if (i == len) break;
    }
  }
  const double dt = seconds_since(t0);
  return {mismatches == 0 && dt < 30.0 && checked == 1398101,
          fmt("%zu sequences, %zu mismatches, %.1f s%s", checked, mismatches, dt, first.empty() ? "" : (" " + first).c_str())};
}

// ---------------------------------------------------------------- 4

Outcome linearity() {
  Rng rng(4);
  const auto triples = random_triples(rng, 50);
  const auto tree = KroneTree::build(triples);
  auto median_time = [&](std::size_t n) {
    const auto keys = random_keys(rng, n, 50);
    std::vector<double> ts;
    for (int rep = 0; rep < 9; ++rep) {
      const auto t0 = Clock::now();
      const auto r = top_down_decompose(keys, tree);
      ts.push_back(seconds_since(t0));
      if (r.s_seqs.empty()) return -1.0;
    }
    std::nth_element(ts.begin(), ts.begin() + 4, ts.end());
    return ts[4];
  };
  median_time(10000);  // warm-up
  const double small = median_time(10000);
  const double large = median_time(100000);
  const double ratio = large / small;
  return {ratio >= 10.0 / 3.0 && ratio <= 30.0,
          fmt("1e4: %.2f ms, 1e5: %.2f ms, ratio %.2f (allowed 3.33-30)", small * 1e3, large * 1e3, ratio)};
}

// ---------------------------------------------------------------- 5

Outcome hierarchy_benefit() {
  const auto t0 = Clock::now();
  const auto corpus = generate_corpus(SynthConfig{});
  const auto tree = KroneTree::build(corpus.triples);
  DetectConfig cfg;
  auto kbs = train(corpus.train, tree, cfg);
  Detector det(tree, kbs, cfg);
  const auto reports = det.detect_all(corpus.test);
  const auto krone = compute_metrics(reports);

  std::set<KeyList> seen;
  for (const auto& s : corpus.train) seen.insert(s.keys());
  std::vector<char> preds, labels;
  for (const auto& s : corpus.test) {
    preds.push_back(!seen.count(s.keys()));
    labels.push_back(*s.label);
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    tp += preds[i] && labels[i];
    fp += preds[i] && !labels[i];
    fn += !preds[i] && labels[i];
  }
  const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
  const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
  const double flat_f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  const double dt = seconds_since(t0);
  const bool ok = krone.f1 >= 0.95 && flat_f1 <= 0.7 && krone.f1 - flat_f1 >= 0.2 && dt < 60.0;
  return {ok, fmt("SAE-P F1 %.4f, flat F1 %.4f, margin %.4f, %.2f s", krone.f1, flat_f1, krone.f1 - flat_f1, dt)};
}

// ---------------------------------------------------------------- 6

std::unique_ptr<MockProvider> benign_mock(const Corpus& corpus) {
  auto mock = std::make_unique<MockProvider>();
  for (const auto& sig : corpus.benign_signatures)
    mock->script(PromptTask::detect, sig, "VERDICT: NORMAL\nRoutine variant of a known pattern.");
  return mock;
}

Corpus benign_corpus() {
  SynthConfig cfg;
  cfg.benign_rate = 0.1;
  return generate_corpus(cfg);
}

Outcome hybrid_precision() {
  const auto corpus = benign_corpus();
  const auto tree = KroneTree::build(corpus.triples);
  DetectConfig p_cfg;
  auto kb_p = train(corpus.train, tree, p_cfg);
  const auto m_p = compute_metrics(Detector(tree, kb_p, p_cfg).detect_all(corpus.test));

  DetectConfig pl_cfg;
  pl_cfg.llm_enabled = true;
  auto kb_pl = train(corpus.train, tree, pl_cfg);
  auto mock = benign_mock(corpus);
  Detector pl(tree, kb_pl, pl_cfg, mock.get());
  const auto m_pl = compute_metrics(pl.detect_all(corpus.test));
  const bool ok = m_pl.precision > m_p.precision && m_pl.recall == m_p.recall;
  return {ok, fmt("SAE-P P %.4f R %.4f | SAE-PL P %.4f R %.4f, %zu LLM detections", m_p.precision, m_p.recall,
                  m_pl.precision, m_pl.recall, pl.llm_calls())};
}

// ---------------------------------------------------------------- 7

Outcome cache_and_early_exit() {
  const auto corpus = benign_corpus();
  const auto tree = KroneTree::build(corpus.triples);
  DetectConfig on;
  on.llm_enabled = true;
  on.early_exit = true;
  DetectConfig off = on;
  off.early_exit = false;

  // (a) rerun on a warm test KB
  auto kbs = train(corpus.train, tree, on);
  auto mock = benign_mock(corpus);
  const auto first = Detector(tree, kbs, on, mock.get()).detect_all(corpus.test);
  const auto first_calls = mock->call_count();
  mock->reset_counters();
  const auto rerun = Detector(tree, kbs, on, mock.get()).detect_all(corpus.test);
  const auto rerun_calls = mock->call_count();
  bool same_rerun = first.size() == rerun.size();
  for (std::size_t i = 0; same_rerun && i < first.size(); ++i)
    same_rerun = first[i].final_verdict == rerun[i].final_verdict;

  // (b) status-level exits skip the higher levels
  std::size_t status_exits = 0, leaks = 0;
  for (const auto& r : first) {
    if (r.first_abnormal_level != Level::status) continue;
    ++status_exits;
    if (r.counters.seqs_evaluated[level_slot(Level::action)] || r.counters.seqs_evaluated[level_slot(Level::entity)])
      ++leaks;
  }

  // (c) same verdicts with early exit off, from cold caches
  auto kbs_off = train(corpus.train, tree, off);
  auto mock_off = benign_mock(corpus);
  const auto full = Detector(tree, kbs_off, off, mock_off.get()).detect_all(corpus.test);
  auto kbs_on = train(corpus.train, tree, on);
  auto mock_on = benign_mock(corpus);
  const auto fast = Detector(tree, kbs_on, on, mock_on.get()).detect_all(corpus.test);
  std::size_t diffs = 0;
  for (std::size_t i = 0; i < full.size(); ++i) diffs += full[i].final_verdict != fast[i].final_verdict;

  const bool ok = first_calls > 0 && rerun_calls == 0 && same_rerun && status_exits > 0 && leaks == 0 && diffs == 0;
  return {ok, fmt("(a) %zu calls then %zu; (b) %zu status exits, %zu with higher-level work; (c) %zu verdict diffs",
                  first_calls, rerun_calls, status_exits, leaks, diffs)};
}

// ---------------------------------------------------------------- 8

Outcome reuse_and_resources() {
  SynthConfig cfg;
  cfg.train = 1000;
  const auto corpus = generate_corpus(cfg);
  const auto tree = KroneTree::build(corpus.triples);
  DetectConfig dc;
  auto kbs = train(corpus.train, tree, dc);
  Detector det(tree, kbs, dc);
  const auto reports = det.detect_all(corpus.test);
  std::vector<DecompositionResult> decomps;
  for (const auto& s : corpus.test) decomps.push_back(top_down_decompose(s.keys(), tree));
  const auto rep = structure_report(kbs, tree, decomps, reports);

  // Harness tallies from the generator's triples and the run-labeling oracle.
  std::set<std::string> ents;
  std::set<std::pair<std::string, std::string>> acts;
  for (const auto& t : corpus.triples) {
    ents.insert(t.entity);
    acts.insert({t.entity, t.action});
  }
  std::size_t s_occ = 0;
  std::set<std::pair<std::vector<std::string>, std::vector<std::string>>> s_unique;
  for (const auto& s : corpus.train) {
    for (const auto& x : oracle_decompose(s.keys(), corpus.triples).s) {
      ++s_occ;
      s_unique.insert({x.parent_names, x.node_names});
    }
  }
  std::array<std::size_t, 3> keys{}, ukeys{}, ekeys{};
  std::array<std::set<std::pair<std::vector<std::string>, KeyList>>, 3> seen;
  std::size_t raw = 0;
  auto chunk_of = [](const OracleSeq& s) {
    KeyList k;
    for (const auto& c : s.node_chunks) k.insert(k.end(), c.begin(), c.end());
    return k;
  };
  for (const auto& s : corpus.test) {
    const auto o = oracle_decompose(s.keys(), corpus.triples);
    raw += s.events.size();
    const std::array<const std::vector<OracleSeq>*, 3> by_level{&o.s, &o.a, &o.e};
    for (std::size_t l = 0; l < 3; ++l)
      for (const auto& x : *by_level[l]) {
        const auto c = chunk_of(x);
        keys[l] += c.size();
        std::vector<std::string> sig = x.parent_names;
        sig.insert(sig.end(), x.node_names.begin(), x.node_names.end());
        if (seen[l].insert({sig, c}).second) ukeys[l] += c.size();
      }
  }
  for (const auto& r : reports)
    for (std::size_t l = 0; l < 3; ++l) ekeys[l] += r.counters.keys_processed[l];
  for (std::size_t l = 1; l < 3; ++l) {
    keys[l] += keys[l - 1];
    ukeys[l] += ukeys[l - 1];
    ekeys[l] += ekeys[l - 1];
  }

  const auto& st = rep.levels[level_slot(Level::status)];
  const double reuse = double(s_occ) / double(s_unique.size());
  auto monotone = [&](const std::array<std::size_t, 3>& k) { return k[0] <= k[1] && k[1] <= k[2] && k[2] <= 3 * raw; };
  std::vector<std::string> bad;
  if (corpus.atomic_patterns.size() != 20) bad.push_back("pattern count");
  if (rep.levels[level_slot(Level::entity)].nodes != ents.size()) bad.push_back("entity nodes");
  if (rep.levels[level_slot(Level::action)].nodes != acts.size()) bad.push_back("action nodes");
  if (st.nodes != corpus.triples.size()) bad.push_back("status nodes");
  if (st.occurrences != s_occ || st.unique_seqs != s_unique.size()) bad.push_back("S tallies");
  if (std::abs(st.reuse - reuse) > 1e-12 || st.reuse < 10.0) bad.push_back("reuse");
  if (rep.raw_test_keys != raw) bad.push_back("raw keys");
  if (rep.key_counts != keys || rep.unique_key_counts != ukeys || rep.evaluated_key_counts != ekeys)
    bad.push_back("key counts");
  if (!monotone(rep.key_counts) || !monotone(rep.unique_key_counts) || !monotone(rep.evaluated_key_counts))
    bad.push_back("monotonicity");
  std::string why;
  for (const auto& b : bad) why += " " + b;
  return {bad.empty(), fmt("reuse %.2f (%zu/%zu); keys S %zu SA %zu SAE %zu; evaluated S %zu SA %zu SAE %zu%s%s", st.reuse,
                           st.occurrences, st.unique_seqs, rep.key_counts[0], rep.key_counts[1], rep.key_counts[2],
                           rep.evaluated_key_counts[0], rep.evaluated_key_counts[1], rep.evaluated_key_counts[2],
                           bad.empty() ? "" : "; mismatched:", why.c_str())};
}

// ---------------------------------------------------------------- 9

Outcome metrics_correctness() {
  Rng rng(9);
  std::size_t bad = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t tp = uniform(rng, 0, 60), fp = uniform(rng, 0, 60), tn = uniform(rng, 0, 60),
                      fn = uniform(rng, 0, 60);
    std::vector<char> pv, lv;
    auto push = [&](std::size_t n, bool p, bool l) {
      for (std::size_t j = 0; j < n; ++j) {
        pv.push_back(p);
        lv.push_back(l);
      }
    };
    push(tp, true, true);
    push(fp, true, false);
    push(tn, false, false);
    push(fn, false, true);
    for (std::size_t j = pv.size(); j > 1; --j) {
      const auto k = uniform(rng, 0, j - 1);
      std::swap(pv[j - 1], pv[k]);
      std::swap(lv[j - 1], lv[k]);
    }
    std::unique_ptr<bool[]> pb(new bool[pv.size() + 1]), lb(new bool[lv.size() + 1]);
    for (std::size_t j = 0; j < pv.size(); ++j) {
      pb[j] = pv[j];
      lb[j] = lv[j];
    }
    const auto m = compute_metrics(std::span<const bool>(pb.get(), pv.size()), std::span<const bool>(lb.get(), lv.size()));
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    if (m.tp != tp || m.fp != fp || m.tn != tn || m.fn != fn || std::abs(m.precision - p) > 1e-9 ||
        std::abs(m.recall - r) > 1e-9 || std::abs(m.f1 - f) > 1e-9)
      ++bad;
  }
  // Reported IaaS row 87.13 / 99.33 / 92.83 implies tp=298, fp=44, fn=2.
  const auto iaas = MetricsReport::from_counts(298, 44, 0, 2);
  auto pct2 = [](double x) { return std::round(x * 10000.0) / 100.0; };
  const bool row = pct2(iaas.precision) == 87.13 && pct2(iaas.recall) == 99.33 && pct2(iaas.f1) == 92.83;
  return {bad == 0 && row, fmt("1000 configurations, %zu mismatches; cross-check P %.2f R %.2f F1 %.2f", bad,
                               iaas.precision * 100, iaas.recall * 100, iaas.f1 * 100)};
}

// ---------------------------------------------------------------- 10

Outcome determinism() {
  TempDir dir("krone-accept");
  SynthConfig sc;
  sc.train = 60;
  sc.test = 160;
  sc.benign_rate = 0.1;
  const auto corpus = generate_corpus(sc);
  write_corpus(corpus, dir.path());
  json detect;
  for (const auto& sig : corpus.benign_signatures) detect[sig] = "VERDICT: NORMAL\nbenign";
  spit(dir / "mock.json", json{{"detect", detect}}.dump());

  auto config = [&](const std::string& workdir, const json& provider) {
    json doc{{"workdir", workdir},
             {"ingest", {{"templates", "templates.csv"}, {"train_logs", "train_logs.jsonl"}, {"test_logs", "test_logs.jsonl"}}},
             {"hierarchy", {{"extractor", "fixture"}, {"fixture", "triples.jsonl"}}},
             {"detect", {{"levels", "SAE"}, {"llm", true}, {"provider", provider}}}};
    return PipelineConfig::from_json(doc, dir.path());
  };
  const json record{{"kind", "recorded"}, {"mode", "record"}, {"fixture", "session.jsonl"},
                    {"inner", {{"kind", "mock"}, {"fixture", "mock.json"}}}};
  const json replay{{"kind", "recorded"}, {"mode", "replay"}, {"fixture", "session.jsonl"}};
  run_pipeline(config("record", record));
  const auto a = run_pipeline(config("run_a", replay));
  const auto b = run_pipeline(config("run_b", replay));

  std::vector<std::string> files{"triples.jsonl", "tree.json", "decompositions.jsonl", "metrics.json",
                                 "structure.json", "attribution.json"};
  for (const auto& e : std::filesystem::directory_iterator(dir / "run_a" / "kb"))
    files.push_back("kb/" + e.path().filename().string());
  std::size_t differing = 0;
  std::string which;
  for (const auto& f : files) {
    if (slurp(dir / "run_a" / f) != slurp(dir / "run_b" / f)) {
      ++differing;
      which += " " + f;
    }
  }
  auto body = [](const std::string& text) { return text.substr(text.find('\n') + 1); };
  const auto ra = slurp(dir / "run_a" / "report.jsonl");
  const auto rb = slurp(dir / "run_b" / "report.jsonl");
  if (body(ra) != body(rb)) {
    ++differing;
    which += " report.jsonl";
  }
  std::size_t provider_errors = 0;
  for (const auto& r : read_reports(dir / "run_a" / "report.jsonl")) provider_errors += r.counters.provider_errors;
  const bool ok = differing == 0 && a.llm_calls > 0 && a.llm_calls == b.llm_calls && provider_errors == 0 && !body(ra).empty();
  return {ok, fmt("%zu files compared, %zu differ%s; %zu LLM detections per run, %zu replay errors", files.size() + 1,
                  differing, which.c_str(), a.llm_calls, provider_errors)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"golden decomposition", golden_decomposition},
      {"reconstruction property", reconstruction},
      {"oracle equivalence", oracle_equivalence},
      {"linearity", linearity},
      {"hierarchy benefit", hierarchy_benefit},
      {"hybrid precision lift", hybrid_precision},
      {"cache and early-exit accounting", cache_and_early_exit},
      {"reuse and resource reports", reuse_and_resources},
      {"metrics correctness", metrics_correctness},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << " [PRIMARY]: " << o.detail
              << std::endl;
  }
  std::cout << (criteria.size() - failures) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
