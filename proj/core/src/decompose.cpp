#include "krone/decompose.hpp"

#include <nlohmann/json.hpp>
#include <sstream>

#include "io_util.hpp"
#include "krone/error.hpp"

namespace krone {

GeneratedSeq generate_krone_seq(std::span<const LogKey> keys, const KroneTree& tree, Level level) {
  GeneratedSeq out;
  const bool collapse = level != Level::status;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const KroneNode* node = nullptr;
    try {
      node = &tree.lookup(keys[i], level);
    } catch (const LookupError&) {
      throw LookupError(keys[i], "position " + std::to_string(i));
    }
    if (collapse && !out.seq.empty() && out.seq.back() == node->id) {
      out.chunks.back().push_back(keys[i]);
    } else {
      out.seq.push_back(node->id);
      out.chunks.push_back({keys[i]});
    }
  }
  return out;
}

std::string parent_key(std::span<const std::string> parent_names) {
  std::string out;
  for (std::size_t i = 0; i < parent_names.size(); ++i) {
    if (i) out.push_back('/');
    out += escape_name(parent_names[i]);
  }
  return out;
}

std::string seq_signature(std::span<const std::string> parent_names, std::span<const std::string> node_names) {
  std::string out = parent_key(parent_names);
  out.push_back('|');
  for (std::size_t i = 0; i < node_names.size(); ++i) {
    if (i) out.push_back('>');
    out += escape_name(node_names[i]);
  }
  return out;
}

std::string seq_signature(const KroneSeq& seq) { return seq_signature(seq.parent_names, seq.node_names); }

namespace {

KroneSeq make_seq(Level level, std::vector<NodeId> parent_path, std::span<const LogKey> chunk,
                  GeneratedSeq generated, const KroneTree& tree) {
  KroneSeq seq;
  seq.level = level;
  seq.parent_path = std::move(parent_path);
  seq.parent_names.reserve(seq.parent_path.size());
  for (auto id : seq.parent_path) seq.parent_names.push_back(tree.node(id).name);
  seq.nodes = std::move(generated.seq);
  seq.node_names.reserve(seq.nodes.size());
  for (auto id : seq.nodes) seq.node_names.push_back(tree.node(id).name);
  seq.chunk.assign(chunk.begin(), chunk.end());
  seq.node_chunks = std::move(generated.chunks);
  seq.signature = seq_signature(seq);
  return seq;
}

}  // namespace

DecompositionResult top_down_decompose(std::span<const LogKey> keys, const KroneTree& tree) {
  DecompositionResult result;
  if (keys.empty()) return result;

  result.e_seq = make_seq(Level::entity, {kRootId}, keys, generate_krone_seq(keys, tree, Level::entity), tree);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < result.e_seq.nodes.size(); ++i) {
    const auto entity = result.e_seq.nodes[i];
    const auto entity_chunk = keys.subspan(offset, result.e_seq.node_chunks[i].size());
    offset += entity_chunk.size();

    result.e_seq.children.push_back(result.a_seqs.size());
    auto a_seq = make_seq(Level::action, {kRootId, entity}, entity_chunk,
                          generate_krone_seq(entity_chunk, tree, Level::action), tree);
    std::size_t a_offset = 0;
    for (std::size_t j = 0; j < a_seq.nodes.size(); ++j) {
      const auto action_chunk = entity_chunk.subspan(a_offset, a_seq.node_chunks[j].size());
      a_offset += action_chunk.size();
      a_seq.children.push_back(result.s_seqs.size());
      result.s_seqs.push_back(make_seq(Level::status, {kRootId, entity, a_seq.nodes[j]}, action_chunk,
                                       generate_krone_seq(action_chunk, tree, Level::status), tree));
    }
    result.a_seqs.push_back(std::move(a_seq));
  }
  return result;
}

NestedSeq nested_format(const KroneSeq& seq, const DecompositionResult& result) {
  NestedSeq nested{seq.level, seq.node_names, {}};
  if (seq.level == Level::status) return nested;
  const auto& lower = seq.level == Level::entity ? result.a_seqs : result.s_seqs;
  if (seq.children.size() != seq.nodes.size())
    throw IntegrityError("seq " + seq.signature + " has " + std::to_string(seq.children.size()) +
                         " children for " + std::to_string(seq.nodes.size()) + " nodes");
  for (auto idx : seq.children) {
    if (idx >= lower.size()) throw IntegrityError("dangling child index " + std::to_string(idx) + " in " + seq.signature);
    nested.children.push_back(nested_format(lower[idx], result));
  }
  return nested;
}

std::string to_string(const NestedSeq& nested) {
  std::string out = "[";
  if (nested.level == Level::status) {
    for (std::size_t i = 0; i < nested.nodes.size(); ++i) {
      if (i) out.push_back(',');
      out += nested.nodes[i];
    }
  } else {
    for (std::size_t i = 0; i < nested.children.size(); ++i) {
      if (i) out.push_back(',');
      out += to_string(nested.children[i]);
    }
  }
  out.push_back(']');
  return out;
}

std::vector<const KroneSeq*> bottom_up(const DecompositionResult& result) {
  std::vector<const KroneSeq*> out;
  if (result.empty()) return out;
  out.reserve(result.seq_count());
  for (const auto& s : result.s_seqs) out.push_back(&s);
  for (const auto& a : result.a_seqs) out.push_back(&a);
  out.push_back(&result.e_seq);
  return out;
}

void dump_decompositions(std::span<const std::string> sequence_ids, std::span<const DecompositionResult> results,
                         const std::filesystem::path& path) {
  if (sequence_ids.size() != results.size()) throw ContractError("sequence id count does not match results");
  std::ostringstream out;
  auto emit = [&](const std::string& id, const KroneSeq& seq) {
    nlohmann::json row{{"sequence_id", id},
                       {"level", to_string(seq.level)},
                       {"parent_path", seq.parent_names},
                       {"nodes", seq.node_names},
                       {"chunk", seq.chunk},
                       {"children", seq.children}};
    out << row.dump() << '\n';
  };
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (results[i].empty()) continue;
    emit(sequence_ids[i], results[i].e_seq);
    for (const auto& a : results[i].a_seqs) emit(sequence_ids[i], a);
    for (const auto& s : results[i].s_seqs) emit(sequence_ids[i], s);
  }
  write_file_atomic(path, out.str());
}

}  // namespace krone
