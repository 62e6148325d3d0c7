#include "krone/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>

#include "io_util.hpp"
#include "krone/decompose.hpp"
#include "krone/error.hpp"

namespace krone {

using json = nlohmann::json;

std::string_view to_string(Injection injection) noexcept {
  switch (injection) {
    case Injection::none: return "none";
    case Injection::status: return "status";
    case Injection::action: return "action";
    case Injection::entity: return "entity";
    case Injection::benign: return "benign";
  }
  return "?";
}

namespace {

struct TemplateRow {
  const char* key;
  const char* text;
  const char* entity;
  const char* action;
  const char* status;
};

// k1..k6 are the running example; k22..k26 only ever appear in anomalies.
constexpr TemplateRow kTemplates[] = {
    {"k1", "Open session started", "Session", "open", "started"},
    {"k2", "Open session successful", "Session", "open", "succf"},
    {"k3", "Authentication starts", "Auth", "start", "none"},
    {"k4", "Authentication succeeded", "Auth", "succd", "none"},
    {"k5", "Connection sent GET request to <*>", "Comm", "GET_req", "none"},
    {"k6", "Connection received GET response from <*>", "Comm", "GET_res", "none"},
    {"k7", "Session closed for user <*>", "Session", "close", "none"},
    {"k8", "Auth token issued for <*>", "Auth", "token", "issued"},
    {"k9", "Auth token refreshed for <*>", "Auth", "token", "refreshed"},
    {"k10", "Connection sent POST request to <*>", "Comm", "POST_req", "none"},
    {"k11", "Connection received POST response from <*>", "Comm", "POST_res", "none"},
    {"k12", "Cache lookup hit for <*>", "Cache", "lookup", "hit"},
    {"k13", "Cache lookup miss for <*>", "Cache", "lookup", "miss"},
    {"k14", "Cache updated entry <*>", "Cache", "update", "none"},
    {"k15", "Database query started <*>", "DB", "query", "started"},
    {"k16", "Database query completed in <*> ms", "DB", "query", "completed"},
    {"k17", "Database transaction committed", "DB", "commit", "none"},
    {"k18", "Storage wrote block <*> of size <*>", "Storage", "write", "none"},
    {"k19", "Storage read block <*>", "Storage", "read", "none"},
    {"k20", "Audit record written for <*>", "Audit", "log", "none"},
    {"k21", "Audit log flushed <*> records", "Audit", "flush", "none"},
    {"k22", "Open session failed", "Session", "open", "failed"},
    {"k23", "Auth token revoked for <*>", "Auth", "token", "revoked"},
    {"k24", "Database query aborted <*>", "DB", "query", "aborted"},
    {"k25", "Storage write rejected for block <*>", "Storage", "write", "rejected"},
    {"k26", "Cache lookup error for <*>", "Cache", "lookup", "error"},
};

struct ActionDef {
  std::string entity;
  std::string name;
  std::vector<KeyList> patterns;
  std::optional<LogKey> abnormal_key;
  std::vector<KeyList> benign;
};

struct EntityDef {
  std::string name;
  std::vector<std::vector<std::string>> a_patterns;
};

const std::vector<ActionDef>& actions() {
  static const std::vector<ActionDef> defs = {
      {"Session", "open", {{"k1", "k2"}}, "k22", {}},
      {"Session", "close", {{"k7"}}, std::nullopt, {}},
      {"Auth", "start", {{"k3"}}, std::nullopt, {}},
      {"Auth", "succd", {{"k4"}}, std::nullopt, {}},
      {"Auth", "token", {{"k8"}, {"k9"}, {"k8", "k9"}}, "k23", {{"k9", "k8"}}},
      {"Comm", "GET_req", {{"k5"}}, std::nullopt, {}},
      {"Comm", "GET_res", {{"k6"}}, std::nullopt, {}},
      {"Comm", "POST_req", {{"k10"}}, std::nullopt, {}},
      {"Comm", "POST_res", {{"k11"}}, std::nullopt, {}},
      {"Cache", "lookup", {{"k12"}, {"k13"}}, "k26", {{"k13", "k12"}}},
      {"Cache", "update", {{"k14"}}, std::nullopt, {}},
      {"DB", "query", {{"k15", "k16"}}, "k24", {}},
      {"DB", "commit", {{"k17"}}, std::nullopt, {}},
      {"Storage", "write", {{"k18"}}, "k25", {}},
      {"Storage", "read", {{"k19"}}, std::nullopt, {}},
      {"Audit", "log", {{"k20"}}, std::nullopt, {}},
      {"Audit", "flush", {{"k21"}}, std::nullopt, {}},
  };
  return defs;
}

const std::vector<EntityDef>& entities() {
  static const std::vector<EntityDef> defs = {
      {"Session", {{"open"}, {"open", "close"}}},
      {"Auth", {{"start", "succd"}, {"start", "succd", "token"}, {"token"}}},
      {"Comm", {{"GET_req", "GET_res"}, {"POST_req", "POST_res"}, {"GET_req", "GET_res", "POST_req", "POST_res"}}},
      {"Cache", {{"lookup"}, {"lookup", "update"}}},
      {"DB", {{"query"}, {"query", "commit"}}},
      {"Storage", {{"write"}, {"read"}, {"read", "write"}}},
      {"Audit", {{"log"}, {"log", "flush"}}},
  };
  return defs;
}

const std::vector<std::vector<std::string>>& workflows() {
  static const std::vector<std::vector<std::string>> defs = {
      {"Session", "Auth", "Comm"},
      {"Session", "Auth", "Cache", "DB", "Comm"},
      {"Session", "Auth", "Comm", "Storage", "Audit"},
      {"Session", "Auth", "DB", "Storage", "Audit"},
      {"Session", "Auth", "Cache", "Comm", "Audit"},
  };
  return defs;
}

const ActionDef& action_def(const std::string& entity, const std::string& action) {
  for (const auto& a : actions())
    if (a.entity == entity && a.name == action) return a;
  throw ContractError("no action " + entity + "/" + action);
}

const EntityDef& entity_def(const std::string& entity) {
  for (const auto& e : entities())
    if (e.name == entity) return e;
  throw ContractError("no entity " + entity);
}

struct ActionRun {
  std::string action;
  KeyList keys;
};

struct EntityRun {
  std::string entity;
  std::vector<ActionRun> actions;
};

using Draft = std::vector<EntityRun>;

template <class T>
bool contains(const std::vector<T>& v, const T& x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

class Generator {
 public:
  explicit Generator(std::uint64_t seed) : rng_(seed) {}

  std::size_t uniform(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

  // Training draws cycle through every option at each choice point before
  // sampling, so every atomic pattern is covered.
  std::size_t pick(const std::string& point, std::size_t n, bool cover) {
    if (cover) {
      auto& used = counters_[point];
      if (used < n) return used++;
    }
    return uniform(n);
  }

  Draft normal(bool cover) {
    Draft draft;
    const auto& flow = workflows()[pick("W", workflows().size(), cover)];
    for (const auto& entity : flow) {
      const auto& def = entity_def(entity);
      const auto& a_pattern = def.a_patterns[pick("A:" + entity, def.a_patterns.size(), cover)];
      EntityRun run{entity, {}};
      for (const auto& action : a_pattern) {
        const auto& adef = action_def(entity, action);
        run.actions.push_back({action, adef.patterns[pick("S:" + entity + "/" + action, adef.patterns.size(), cover)]});
      }
      draft.push_back(std::move(run));
    }
    return draft;
  }

  bool inject_status(Draft& draft) {
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t r = 0; r < draft.size(); ++r)
      for (std::size_t a = 0; a < draft[r].actions.size(); ++a) slots.emplace_back(r, a);
    const auto [r, a] = slots[uniform(slots.size())];
    auto& run = draft[r].actions[a];
    const auto& def = action_def(draft[r].entity, run.action);
    KeyList keys = run.keys;
    const auto pos = uniform(keys.size());
    if (def.abnormal_key && uniform(2) == 0) {
      keys[pos] = *def.abnormal_key;
    } else {
      keys.insert(keys.begin() + static_cast<std::ptrdiff_t>(pos), keys[pos]);
    }
    if (contains(def.patterns, keys) || contains(def.benign, keys)) return false;
    run.keys = std::move(keys);
    return true;
  }

  bool inject_action(Draft& draft) {
    std::vector<std::size_t> candidates;
    for (std::size_t r = 0; r < draft.size(); ++r)
      if (draft[r].actions.size() >= 2) candidates.push_back(r);
    if (candidates.empty()) return false;
    auto& run = draft[candidates[uniform(candidates.size())]];
    auto actions_now = run.actions;
    if (uniform(2) == 0) {
      std::reverse(actions_now.begin(), actions_now.end());
    } else {
      actions_now.erase(actions_now.begin() + static_cast<std::ptrdiff_t>(uniform(actions_now.size())));
    }
    std::vector<std::string> names;
    for (const auto& a : actions_now) names.push_back(a.action);
    if (contains(entity_def(run.entity).a_patterns, names)) return false;
    run.actions = std::move(actions_now);
    return true;
  }

  bool inject_entity(Draft& draft) {
    Draft changed = draft;
    if (uniform(2) == 0 && changed.size() >= 3) {
      changed.erase(changed.begin() + static_cast<std::ptrdiff_t>(1 + uniform(changed.size() - 2)));
    } else {
      const auto i = uniform(changed.size() - 1);
      std::swap(changed[i], changed[i + 1]);
    }
    std::vector<std::string> names;
    for (const auto& r : changed) names.push_back(r.entity);
    if (contains(workflows(), names)) return false;
    for (std::size_t i = 1; i < names.size(); ++i)
      if (names[i] == names[i - 1]) return false;
    draft = std::move(changed);
    return true;
  }

  std::optional<std::string> inject_benign(Draft& draft) {
    std::vector<std::pair<std::size_t, std::size_t>> slots;
    for (std::size_t r = 0; r < draft.size(); ++r)
      for (std::size_t a = 0; a < draft[r].actions.size(); ++a)
        if (!action_def(draft[r].entity, draft[r].actions[a].action).benign.empty()) slots.emplace_back(r, a);
    if (slots.empty()) return std::nullopt;
    const auto [r, a] = slots[uniform(slots.size())];
    auto& run = draft[r].actions[a];
    const auto& def = action_def(draft[r].entity, run.action);
    run.keys = def.benign[uniform(def.benign.size())];
    return draft[r].entity + "/" + run.action;
  }

 private:
  std::mt19937_64 rng_;
  std::map<std::string, std::size_t> counters_;
};

LogSequence to_sequence(const Draft& draft, std::string id, bool abnormal, const TemplateCatalog& catalog) {
  LogSequence seq{std::move(id), {}, abnormal};
  for (const auto& run : draft)
    for (const auto& a : run.actions)
      for (const auto& k : a.keys) seq.events.push_back({k, catalog.at(k).text});
  return seq;
}

std::string numbered(std::string_view prefix, std::size_t i, std::size_t total) {
  auto digits = std::to_string(std::max<std::size_t>(total, 1)).size();
  auto n = std::to_string(i);
  return std::string(prefix) + std::string(digits > n.size() ? digits - n.size() : 0, '0') + n;
}

std::size_t share(double rate, std::size_t n) {
  if (rate < 0 || rate > 1) throw ContractError("injection rates must lie in [0,1]");
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(n)));
}

}  // namespace

Corpus generate_corpus(const SynthConfig& config) {
  Corpus corpus;
  for (const auto& row : kTemplates) {
    corpus.catalog.add({row.key, row.text});
    corpus.triples.push_back({row.key, row.entity, row.action, row.status});
  }
  for (const auto& a : actions())
    for (const auto& p : a.patterns) corpus.atomic_patterns.push_back({a.entity, a.name, p});

  Generator gen(config.seed);
  for (std::size_t i = 0; i < config.train; ++i)
    corpus.train.push_back(to_sequence(gen.normal(true), numbered("train-", i, config.train), false, corpus.catalog));

  const auto n_status = share(config.status_rate, config.test);
  const auto n_action = share(config.action_rate, config.test);
  const auto n_entity = share(config.entity_rate, config.test);
  const auto n_benign = share(config.benign_rate, config.test);
  if (n_status + n_action + n_entity + n_benign > config.test) throw ContractError("injection rates exceed 1 in total");
  std::vector<Injection> plan(config.test, Injection::none);
  std::fill_n(plan.begin(), n_status, Injection::status);
  std::fill_n(plan.begin() + static_cast<std::ptrdiff_t>(n_status), n_action, Injection::action);
  std::fill_n(plan.begin() + static_cast<std::ptrdiff_t>(n_status + n_action), n_entity, Injection::entity);
  std::fill_n(plan.begin() + static_cast<std::ptrdiff_t>(n_status + n_action + n_entity), n_benign, Injection::benign);
  for (std::size_t i = plan.size(); i > 1; --i) std::swap(plan[i - 1], plan[gen.uniform(i)]);

  std::set<std::string> benign_sigs;
  for (std::size_t i = 0; i < config.test; ++i) {
    const auto kind = plan[i];
    Draft draft;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 1000) throw Error("anomaly injection did not converge");
      draft = gen.normal(false);
      bool ok = true;
      switch (kind) {
        case Injection::none: break;
        case Injection::status: ok = gen.inject_status(draft); break;
        case Injection::action: ok = gen.inject_action(draft); break;
        case Injection::entity: ok = gen.inject_entity(draft); break;
        case Injection::benign: ok = gen.inject_benign(draft).has_value(); break;
      }
      if (ok) break;
    }
    const bool abnormal = kind == Injection::status || kind == Injection::action || kind == Injection::entity;
    corpus.test.push_back(to_sequence(draft, numbered("test-", i, config.test), abnormal, corpus.catalog));
    corpus.test_injection.push_back(kind);
  }

  // Benign variants are scripted by their status-level signature.
  const auto tree = KroneTree::build(corpus.triples);
  for (const auto& a : actions()) {
    for (const auto& b : a.benign) {
      const auto d = top_down_decompose(b, tree);
      benign_sigs.insert(d.s_seqs.at(0).signature);
    }
  }
  corpus.benign_signatures.assign(benign_sigs.begin(), benign_sigs.end());
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir, std::uint64_t seed) {
  save_template_catalog(corpus.catalog, dir / "templates.csv");
  save_triples(corpus.triples, dir / "triples.jsonl");
  save_sequences(corpus.train, dir / "train.jsonl");
  save_sequences(corpus.test, dir / "test.jsonl");

  std::mt19937_64 rng(seed);
  auto raw = [&](const std::vector<LogSequence>& seqs, const std::filesystem::path& path) {
    std::ostringstream out;
    std::int64_t ts = 1700000000;
    for (const auto& seq : seqs) {
      for (const auto& ev : seq.events) {
        std::string msg;
        for (const auto& tok : tokenize(ev.template_text)) {
          if (!msg.empty()) msg.push_back(' ');
          msg += tok == kWildcard ? "v" + std::to_string(rng() % 10000) : tok;
        }
        json row{{"timestamp", ts++}, {"group_id", seq.id}, {"message", msg}};
        if (seq.label) row["label"] = *seq.label;
        out << row.dump() << '\n';
      }
    }
    write_file_atomic(path, out.str());
  };
  raw(corpus.train, dir / "train_logs.jsonl");
  raw(corpus.test, dir / "test_logs.jsonl");
}

}  // namespace krone
