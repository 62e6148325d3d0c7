#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "krone/hierarchy.hpp"
#include "krone/types.hpp"

namespace krone {

/// Sibling nodes under one parent covering a contiguous chunk of a sequence.
///
/// `node_chunks[i]` is the slice mapped to `nodes[i]`; `children[i]` indexes
/// the next level down in the owning DecompositionResult (A-seqs for the
/// E-seq, S-seqs for an A-seq). Status-level Seqs have no children.
struct KroneSeq {
  Level level = Level::entity;
  std::vector<NodeId> parent_path;
  std::vector<std::string> parent_names;
  std::vector<NodeId> nodes;
  std::vector<std::string> node_names;
  KeyList chunk;
  std::vector<KeyList> node_chunks;
  std::vector<std::size_t> children;
  std::string signature;

  friend bool operator==(const KroneSeq&, const KroneSeq&) = default;
};

struct DecompositionResult {
  KroneSeq e_seq;
  std::vector<KroneSeq> a_seqs;
  std::vector<KroneSeq> s_seqs;

  bool empty() const noexcept { return e_seq.nodes.empty(); }
  std::size_t seq_count() const noexcept { return (empty() ? 0 : 1) + a_seqs.size() + s_seqs.size(); }

  friend bool operator==(const DecompositionResult&, const DecompositionResult&) = default;
};

struct GeneratedSeq {
  std::vector<KeyList> chunks;
  std::vector<NodeId> seq;
};

/// Maps each key to its node at `level`. Entity and action levels merge runs
/// of the same node into one chunk; at status level every key is its own
/// chunk. Throws LookupError naming the key and its position.
GeneratedSeq generate_krone_seq(std::span<const LogKey> keys, const KroneTree& tree, Level level);

/// One E-seq over the whole sequence, one A-seq per entity chunk, one S-seq per
/// action chunk. Empty input gives an empty result.
DecompositionResult top_down_decompose(std::span<const LogKey> keys, const KroneTree& tree);

/// "<parent names joined by '/'>|<node names joined by '>'>", names escaped.
std::string seq_signature(std::span<const std::string> parent_names, std::span<const std::string> node_names);
std::string seq_signature(const KroneSeq& seq);

/// Escaped parent names joined by '/'; the per-parent grouping key of the KBs.
std::string parent_key(std::span<const std::string> parent_names);

struct NestedSeq {
  Level level = Level::status;
  std::vector<std::string> nodes;
  std::vector<NestedSeq> children;  // empty at status level

  friend bool operator==(const NestedSeq&, const NestedSeq&) = default;
};

/// Status-level Seqs are their own node list; higher levels expand into their
/// children. Throws IntegrityError on a dangling child index.
NestedSeq nested_format(const KroneSeq& seq, const DecompositionResult& result);

/// "[started,succf]" for a status Seq, "[[...],[...]]" above it.
std::string to_string(const NestedSeq& nested);

/// Every Seq in bottom-up evaluation order: S-seqs, A-seqs, then the E-seq.
std::vector<const KroneSeq*> bottom_up(const DecompositionResult& result);

/// One JSON object per Seq: sequence_id, level, parent_path, nodes, chunk,
/// children (indices into the next level of the same sequence).
void dump_decompositions(std::span<const std::string> sequence_ids,
                         std::span<const DecompositionResult> results, const std::filesystem::path& path);

}  // namespace krone
