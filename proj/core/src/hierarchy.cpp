#include "krone/hierarchy.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <sstream>
#include <thread>

#include "io_util.hpp"
#include "krone/error.hpp"
#include "krone/prompts.hpp"
#include "krone/provider.hpp"

namespace krone {

using json = nlohmann::json;

namespace {

constexpr int kTreeFormatVersion = 1;

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

// ---------------------------------------------------------------- triples io

std::vector<TopicTriple> load_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open triples file " + path.string());
  std::vector<TopicTriple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      auto row = json::parse(line);
      TopicTriple t;
      t.key = json_scalar_to_string(row.at("key"));
      t.entity = row.at("entity").get<std::string>();
      t.action = row.at("action").get<std::string>();
      if (auto it = row.find("status"); it != row.end() && !it->is_null()) t.status = it->get<std::string>();
      if (t.status.empty()) t.status = kNoneStatus;
      out.push_back(std::move(t));
    } catch (const json::exception& e) {
      throw ParseError(std::string("bad triple: ") + e.what(), line_no);
    }
  }
  return out;
}

void save_triples(std::span<const TopicTriple> triples, const std::filesystem::path& path) {
  std::ostringstream out;
  for (const auto& t : triples) {
    out << json{{"key", t.key}, {"entity", t.entity}, {"action", t.action}, {"status", t.status}}.dump()
        << '\n';
  }
  write_file_atomic(path, out.str());
}

// ---------------------------------------------------------------- tree

KroneTree::KroneTree() { nodes_.push_back({kRootId, Level::root, "root", std::nullopt, std::nullopt, {}}); }

std::string KroneTree::index_key(Level level, NodeId parent, std::string_view name) {
  std::string k;
  k.reserve(name.size() + 12);
  k += std::to_string(static_cast<int>(level));
  k += '|';
  k += std::to_string(to_index(parent));
  k += '|';
  k += name;
  return k;
}

NodeId KroneTree::add_node(Level level, std::string name, NodeId parent, std::optional<LogKey> key) {
  const NodeId id{static_cast<std::uint32_t>(nodes_.size())};
  name_index_.emplace(index_key(level, parent, name), id);
  if (key) key_index_.emplace(*key, id);
  nodes_[to_index(parent)].children.push_back(id);
  nodes_.push_back({id, level, std::move(name), parent, std::move(key), {}});
  return id;
}

KroneTree KroneTree::build(std::span<const TopicTriple> triples) {
  // Keys sharing a full triple would collide on the status name.
  std::unordered_map<std::string, std::size_t> triple_uses;
  std::unordered_map<std::string_view, bool> seen_keys;
  auto triple_id = [](const TopicTriple& t) { return t.entity + '\x1f' + t.action + '\x1f' + t.status; };
  for (const auto& t : triples) {
    if (t.entity.empty() || t.action.empty())
      throw ContractError("triple for key " + t.key + " has an empty entity or action");
    if (!seen_keys.emplace(t.key, true).second) throw DuplicateKeyError(t.key);
    ++triple_uses[triple_id(t)];
  }

  KroneTree tree;
  tree.nodes_.reserve(1 + 3 * triples.size());
  for (const auto& t : triples) {
    const NodeId entity = [&] {
      if (const auto* n = tree.find(Level::entity, kRootId, t.entity)) return n->id;
      return tree.add_node(Level::entity, t.entity, kRootId, std::nullopt);
    }();
    const NodeId action = [&] {
      if (const auto* n = tree.find(Level::action, entity, t.action)) return n->id;
      return tree.add_node(Level::action, t.action, entity, std::nullopt);
    }();
    std::string status = t.status.empty() ? std::string(kNoneStatus) : t.status;
    if (triple_uses[triple_id(t)] > 1) status += "_" + t.key;
    if (tree.find(Level::status, action, status))
      throw IntegrityError("status name collision for key " + t.key + ": " + status);
    tree.add_node(Level::status, std::move(status), action, t.key);
  }
  return tree;
}

const KroneNode& KroneTree::node(NodeId id) const {
  if (to_index(id) >= nodes_.size()) throw IntegrityError("node id out of range: " + std::to_string(to_index(id)));
  return nodes_[to_index(id)];
}

std::size_t KroneTree::count(Level level) const {
  return static_cast<std::size_t>(
      std::count_if(nodes_.begin(), nodes_.end(), [level](const KroneNode& n) { return n.level == level; }));
}

bool KroneTree::contains_key(std::string_view key) const { return key_index_.contains(std::string(key)); }

const KroneNode& KroneTree::lookup(std::string_view key, Level level) const {
  auto it = key_index_.find(std::string(key));
  if (it == key_index_.end()) throw LookupError(std::string(key), "not in tree");
  const KroneNode* n = &nodes_[to_index(it->second)];
  switch (level) {
    case Level::status: return *n;
    case Level::action: return nodes_[to_index(*n->parent)];
    case Level::entity: return nodes_[to_index(*nodes_[to_index(*n->parent)].parent)];
    case Level::root: return nodes_.front();
  }
  return *n;
}

const KroneNode* KroneTree::find(Level level, NodeId parent, std::string_view name) const {
  auto it = name_index_.find(index_key(level, parent, name));
  return it == name_index_.end() ? nullptr : &nodes_[to_index(it->second)];
}

std::vector<std::string> KroneTree::path_names(NodeId id) const {
  std::vector<std::string> names;
  for (const KroneNode* n = &node(id);; n = &node(*n->parent)) {
    names.push_back(n->name);
    if (!n->parent) break;
  }
  std::reverse(names.begin(), names.end());
  return names;
}

void KroneTree::validate() const {
  if (nodes_.empty() || nodes_.front().level != Level::root || nodes_.front().parent)
    throw IntegrityError("tree has no root at id 0");
  std::size_t statuses = 0;
  for (std::size_t i = 1; i < nodes_.size(); ++i) {
    const auto& n = nodes_[i];
    if (to_index(n.id) != i) throw IntegrityError("node id mismatch at " + std::to_string(i));
    if (n.level == Level::root) throw IntegrityError("second root at " + std::to_string(i));
    if (!n.parent || to_index(*n.parent) >= nodes_.size())
      throw IntegrityError("dangling parent for node " + std::to_string(i));
    const auto& p = nodes_[to_index(*n.parent)];
    if (static_cast<int>(p.level) + 1 != static_cast<int>(n.level))
      throw IntegrityError("node " + std::to_string(i) + " is not one level below its parent");
    if (n.level == Level::status) {
      ++statuses;
      if (!n.key) throw IntegrityError("status node " + std::to_string(i) + " has no key");
      auto it = key_index_.find(*n.key);
      if (it == key_index_.end() || it->second != n.id)
        throw IntegrityError("key index disagrees for key " + *n.key);
    } else if (n.key) {
      throw IntegrityError("non-status node " + std::to_string(i) + " carries a key");
    }
    if (std::find(p.children.begin(), p.children.end(), n.id) == p.children.end())
      throw IntegrityError("parent of node " + std::to_string(i) + " does not list it");
  }
  if (statuses != key_index_.size()) throw IntegrityError("key index size mismatch");
}

std::vector<TopicTriple> KroneTree::triples() const {
  std::vector<TopicTriple> out;
  for (const auto& n : nodes_) {
    if (n.level != Level::status) continue;
    const auto& action = node(*n.parent);
    const auto& entity = node(*action.parent);
    out.push_back({*n.key, entity.name, action.name, n.name});
  }
  return out;
}

void KroneTree::save(const std::filesystem::path& path) const {
  json nodes = json::array();
  for (const auto& n : nodes_) {
    json row{{"id", to_index(n.id)}, {"level", to_string(n.level)}, {"name", n.name}};
    row["parent"] = n.parent ? json(to_index(*n.parent)) : json(nullptr);
    if (n.key) row["key"] = *n.key;
    nodes.push_back(std::move(row));
  }
  json doc{{"format_version", kTreeFormatVersion}, {"nodes", std::move(nodes)}};
  write_file_atomic(path, doc.dump(1) + "\n");
}

KroneTree KroneTree::load(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw FormatError("tree file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (doc.value("format_version", -1) != kTreeFormatVersion)
    throw FormatError("tree file " + path.string() + " has unsupported format_version");

  KroneTree tree;
  try {
    const auto& rows = doc.at("nodes");
    if (rows.empty() || rows.at(0).at("level") != "root") throw FormatError("tree file has no root");
    tree.nodes_.front().name = rows.at(0).at("name").get<std::string>();
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.at("id").get<std::size_t>() != i) throw FormatError("tree node ids must be dense and ordered");
      const NodeId parent{r.at("parent").get<std::uint32_t>()};
      if (to_index(parent) >= i) throw FormatError("tree node " + std::to_string(i) + " precedes its parent");
      std::optional<LogKey> key;
      if (r.contains("key")) key = json_scalar_to_string(r.at("key"));
      const auto level = parse_level(r.at("level").get<std::string>());
      auto name = r.at("name").get<std::string>();
      if (tree.find(level, parent, name)) throw FormatError("duplicate sibling name " + name);
      if (key && tree.key_index_.contains(*key)) throw DuplicateKeyError(*key);
      tree.add_node(level, std::move(name), parent, std::move(key));
    }
  } catch (const json::exception& e) {
    throw FormatError("tree file " + path.string() + ": " + e.what());
  }
  try {
    tree.validate();
  } catch (const IntegrityError& e) {
    throw FormatError(std::string("tree file is inconsistent: ") + e.what());
  }
  return tree;
}

// ---------------------------------------------------------------- extraction

Lexicon Lexicon::load(const std::filesystem::path& path) {
  Lexicon lex;
  try {
    auto doc = json::parse(read_file(path));
    auto read_map = [&](const char* name, std::map<std::string, std::string>& dst) {
      if (!doc.contains(name)) return;
      for (const auto& [k, v] : doc.at(name).items()) dst[lowercase(k)] = v.get<std::string>();
    };
    read_map("entities", lex.entities);
    read_map("actions", lex.actions);
    read_map("statuses", lex.statuses);
    read_map("synonyms", lex.synonyms);
    if (doc.contains("stopwords"))
      for (const auto& w : doc.at("stopwords")) lex.stopwords.insert(lowercase(w.get<std::string>()));
    lex.default_entity = doc.value("default_entity", lex.default_entity);
    lex.trailing_status = doc.value("trailing_status", lex.trailing_status);
  } catch (const json::exception& e) {
    throw ParseError("bad lexicon " + path.string() + ": " + e.what());
  }
  return lex;
}

ExtractorConfig::Kind ExtractorConfig::parse_kind(std::string_view text) {
  if (text == "fixture") return Kind::fixture;
  if (text == "lexicon") return Kind::lexicon;
  if (text == "llm") return Kind::llm;
  throw ContractError("unknown extractor kind: " + std::string(text));
}

namespace {

std::string strip_punct(std::string_view tok) {
  std::size_t b = 0;
  std::size_t e = tok.size();
  auto punct = [](char c) { return std::ispunct(static_cast<unsigned char>(c)) && c != '_' && c != '<' && c != '>'; };
  while (b < e && punct(tok[b])) ++b;
  while (e > b && punct(tok[e - 1])) --e;
  return std::string(tok.substr(b, e - b));
}

struct Hit {
  std::size_t pos = 0;
  std::size_t len = 0;
  std::string canonical;
};

// Longest phrase (up to three tokens) from `table`, scanning left to right,
// skipping consumed positions.
std::optional<Hit> find_phrase(const std::vector<std::string>& words, const std::vector<bool>& used,
                               const std::map<std::string, std::string>& table) {
  for (std::size_t i = 0; i < words.size(); ++i) {
    for (std::size_t len = std::min<std::size_t>(3, words.size() - i); len >= 1; --len) {
      bool free = true;
      std::string phrase;
      for (std::size_t j = i; j < i + len; ++j) {
        free = free && !used[j] && !words[j].empty();
        if (j > i) phrase += ' ';
        phrase += words[j];
      }
      if (!free) continue;
      if (auto it = table.find(phrase); it != table.end()) return Hit{i, len, it->second};
    }
  }
  return std::nullopt;
}

void mark(std::vector<bool>& used, const Hit& h) {
  for (std::size_t j = h.pos; j < h.pos + h.len; ++j) used[j] = true;
}

bool is_word(const std::string& w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isalpha(c) || c == '_' || c == '-'; });
}

}  // namespace

TopicTriple extract_with_lexicon(const LogTemplate& tmpl, const Lexicon& lexicon) {
  std::vector<std::string> words;
  for (const auto& tok : tokenize(tmpl.text)) {
    words.push_back(tok == kWildcard ? std::string() : lowercase(strip_punct(tok)));
  }
  std::vector<bool> used(words.size(), false);

  TopicTriple triple{tmpl.key, lexicon.default_entity, std::string(kNoneStatus), std::string(kNoneStatus)};
  if (auto e = find_phrase(words, used, lexicon.entities)) {
    triple.entity = e->canonical;
    mark(used, *e);
  }
  if (auto a = find_phrase(words, used, lexicon.actions)) {
    triple.action = a->canonical;
    mark(used, *a);
  } else {
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (!used[i] && is_word(words[i]) && !lexicon.stopwords.contains(words[i])) {
        triple.action = words[i];
        used[i] = true;
        break;
      }
    }
  }
  if (auto s = find_phrase(words, used, lexicon.statuses)) {
    triple.status = s->canonical;
  } else if (lexicon.trailing_status) {
    for (std::size_t i = words.size(); i-- > 0;) {
      if (words[i].empty()) continue;
      if (!used[i] && is_word(words[i]) && !lexicon.stopwords.contains(words[i])) triple.status = words[i];
      break;
    }
  }
  return triple;
}

namespace {

std::string first_json_object(const std::string& text) {
  const auto b = text.find('{');
  const auto e = text.rfind('}');
  if (b == std::string::npos || e == std::string::npos || e < b) throw ProviderError("no JSON object in answer");
  return text.substr(b, e - b + 1);
}

TopicTriple parse_llm_triple(const LogKey& key, const std::string& answer) {
  json obj;
  try {
    obj = json::parse(first_json_object(answer));
  } catch (const json::exception& e) {
    throw ProviderError(std::string("unparseable extraction answer: ") + e.what());
  }
  TopicTriple t{key, obj.value("entity", ""), obj.value("action", ""), std::string(kNoneStatus)};
  if (auto it = obj.find("status"); it != obj.end() && it->is_string()) {
    auto s = trim(it->get<std::string>());
    if (!s.empty() && s != "-" && lowercase(s) != "none" && lowercase(s) != "null") t.status = s;
  }
  t.entity = trim(t.entity);
  t.action = trim(t.action);
  if (t.entity.empty() || t.action.empty()) throw ProviderError("extraction answer lacks entity or action");
  return t;
}

std::string clean_name_answer(const std::string& answer) {
  auto line = trim(answer.substr(0, answer.find('\n')));
  while (!line.empty() && (line.front() == '"' || line.front() == '\'')) line.erase(line.begin());
  while (!line.empty() && (line.back() == '"' || line.back() == '\'' || line.back() == '.')) line.pop_back();
  return trim(line);
}

std::vector<TopicTriple> extract_llm(const TemplateCatalog& catalog, const ExtractorConfig& config,
                                     LlmProvider& provider) {
  PromptLibrary prompts;
  if (!config.prompt_dir.empty()) prompts.load_overrides(config.prompt_dir);
  const auto& templates = catalog.templates();
  std::vector<std::optional<TopicTriple>> results(templates.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < templates.size(); i = next++) {
      const auto& t = templates[i];
      ChatRequest req{PromptTask::extract, prompts.get("system"),
                      prompts.render("extract", {{"template_text", t.text},
                                                 {"examples", prompts.get("extract_examples")}}),
                      {{"key", t.key}}};
      // Transport retries happen inside the provider; answers that do not
      // parse get the same number of extra attempts here.
      for (int attempt = 0; attempt <= provider.retry_limit(); ++attempt) {
        try {
          results[i] = parse_llm_triple(t.key, provider.complete(req));
          break;
        } catch (const ProviderError&) {
        }
      }
    }
  };
  const auto n_threads = std::max<std::size_t>(1, std::min(config.parallelism, templates.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t i = 1; i < n_threads; ++i) pool.emplace_back(worker);
    worker();
  }
  std::vector<TopicTriple> out;
  std::vector<std::string> failed;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i]) {
      out.push_back(std::move(*results[i]));
    } else {
      failed.push_back(templates[i].key);
    }
  }
  if (!failed.empty()) throw ExtractionError("llm extraction failed for " + std::to_string(failed.size()) + " templates", failed);
  return out;
}

}  // namespace

std::vector<TopicTriple> extract_topics(const TemplateCatalog& catalog, const ExtractorConfig& config,
                                        LlmProvider* provider) {
  if (catalog.empty()) throw ContractError("extract_topics needs a non-empty catalog");
  std::vector<TopicTriple> out;
  switch (config.kind) {
    case ExtractorConfig::Kind::fixture: {
      std::unordered_map<std::string, TopicTriple> by_key;
      for (auto& t : load_triples(config.fixture_path)) {
        auto k = t.key;
        if (!by_key.emplace(k, std::move(t)).second) throw DuplicateKeyError(k);
      }
      std::vector<std::string> failed;
      for (const auto& tmpl : catalog.templates()) {
        auto it = by_key.find(tmpl.key);
        if (it == by_key.end()) {
          failed.push_back(tmpl.key);
        } else {
          out.push_back(it->second);
        }
      }
      if (!failed.empty()) throw ExtractionError("fixture has no triple for " + std::to_string(failed.size()) + " templates", failed);
      break;
    }
    case ExtractorConfig::Kind::lexicon: {
      const auto lexicon = Lexicon::load(config.lexicon_path);
      for (const auto& tmpl : catalog.templates()) out.push_back(extract_with_lexicon(tmpl, lexicon));
      break;
    }
    case ExtractorConfig::Kind::llm:
      if (!provider) throw ContractError("llm extractor requires a provider");
      out = extract_llm(catalog, config, *provider);
      break;
  }
  return out;
}

// ---------------------------------------------------------------- refinement

namespace {

// Picks the most frequent spelling per case-folded group.
std::unordered_map<std::string, std::string> canonical_names(const std::vector<std::string>& names,
                                                             const std::map<std::string, std::string>& synonyms) {
  auto fold = [&](const std::string& n) {
    auto l = lowercase(n);
    if (auto it = synonyms.find(l); it != synonyms.end()) return lowercase(it->second);
    return l;
  };
  std::map<std::string, std::map<std::string, std::size_t>> groups;
  for (const auto& n : names) ++groups[fold(n)][n];
  std::unordered_map<std::string, std::string> out;
  for (const auto& [folded, spellings] : groups) {
    std::string best;
    std::size_t best_count = 0;
    for (const auto& [spelling, count] : spellings) {
      if (count > best_count) {  // map order gives the smallest spelling on ties
        best = spelling;
        best_count = count;
      }
    }
    // An explicit synonym target wins over observed spellings.
    for (const auto& [from, to] : synonyms) {
      if (lowercase(to) == folded) {
        best = to;
        break;
      }
    }
    for (const auto& [spelling, _] : spellings) out[spelling] = best;
  }
  return out;
}

std::string join_pool(const std::set<std::string>& pool) {
  std::string out;
  for (const auto& p : pool) {
    if (!out.empty()) out += ", ";
    out += p;
  }
  return out;
}

}  // namespace

std::vector<TopicTriple> refine_topics(std::vector<TopicTriple> triples,
                                       const std::map<std::string, std::string>& synonyms,
                                       LlmProvider* provider, const TemplateCatalog* catalog,
                                       const PromptLibrary* prompts) {
  if (triples.empty()) return triples;

  if (!provider) {
    std::vector<std::string> entities;
    for (const auto& t : triples) entities.push_back(t.entity);
    const auto entity_map = canonical_names(entities, synonyms);
    for (auto& t : triples) t.entity = entity_map.at(t.entity);

    std::map<std::string, std::vector<std::string>> actions_by_entity;
    for (const auto& t : triples) actions_by_entity[t.entity].push_back(t.action);
    std::map<std::string, std::unordered_map<std::string, std::string>> action_maps;
    for (const auto& [entity, actions] : actions_by_entity) action_maps[entity] = canonical_names(actions, synonyms);
    for (auto& t : triples) t.action = action_maps[t.entity].at(t.action);
    return triples;
  }

  const PromptLibrary& lib = prompts ? *prompts : PromptLibrary::defaults();
  auto text_of = [&](const TopicTriple& t) -> std::string {
    if (catalog) {
      if (const auto* tmpl = catalog->find(t.key)) return tmpl->text;
    }
    return t.entity + " " + t.action + " " + t.status;
  };
  auto ask = [&](const std::string& prompt, const TopicTriple& t, const std::string& fallback) {
    ChatRequest req{PromptTask::refine, lib.get("system"), prompt, {{"key", t.key}, {"expected", fallback}}};
    std::string answer;
    try {
      answer = clean_name_answer(provider->complete(req));
    } catch (const ProviderError& e) {
      throw ExtractionError(std::string("refinement failed: ") + e.what(), {t.key});
    }
    return answer.empty() ? fallback : answer;
  };

  std::set<std::string> entity_pool;
  for (const auto& t : triples) entity_pool.insert(t.entity);
  for (auto& t : triples) {
    t.entity = ask(lib.render("refine_entity", {{"template_text", text_of(t)},
                                                {"entity", t.entity},
                                                {"entity_pool", join_pool(entity_pool)}}),
                   t, t.entity);
  }
  std::map<std::string, std::set<std::string>> action_pools;
  for (const auto& t : triples) action_pools[t.entity].insert(t.action);
  for (auto& t : triples) {
    t.action = ask(lib.render("refine_action", {{"template_text", text_of(t)},
                                                {"entity", t.entity},
                                                {"action", t.action},
                                                {"action_pool", join_pool(action_pools[t.entity])}}),
                   t, t.action);
  }
  return triples;
}

}  // namespace krone
