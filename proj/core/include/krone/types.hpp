#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace krone {

using LogKey = std::string;
using KeyList = std::vector<LogKey>;

/// Index of a node inside a KroneTree. The root is always node 0.
enum class NodeId : std::uint32_t {};

constexpr std::uint32_t to_index(NodeId id) noexcept { return static_cast<std::uint32_t>(id); }
constexpr NodeId kRootId{0};

enum class Level : std::uint8_t { root, entity, action, status };

/// Detection levels in bottom-up evaluation order.
constexpr std::array<Level, 3> kBottomUpLevels{Level::status, Level::action, Level::entity};

std::string_view to_string(Level level) noexcept;
Level parse_level(std::string_view text);

/// 0-based slot of a non-root level (status=0, action=1, entity=2).
std::size_t level_slot(Level level);

enum class Verdict : std::uint8_t { normal, abnormal };

std::string_view to_string(Verdict v) noexcept;
Verdict parse_verdict(std::string_view text);

/// Status name used when a template carries no separable status.
inline constexpr std::string_view kNoneStatus = "none";

/// Canonical, injective encoding of a key chunk (test-cache key).
std::string chunk_key(std::span<const LogKey> chunk);

/// Escapes the separator characters used in signatures and chunk keys.
std::string escape_name(std::string_view name);

}  // namespace krone
