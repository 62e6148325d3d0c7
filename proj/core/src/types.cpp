#include "krone/types.hpp"

#include "krone/error.hpp"

namespace krone {

std::string_view to_string(Level level) noexcept {
  switch (level) {
    case Level::root: return "root";
    case Level::entity: return "entity";
    case Level::action: return "action";
    case Level::status: return "status";
  }
  return "?";
}

Level parse_level(std::string_view text) {
  if (text == "root") return Level::root;
  if (text == "entity" || text == "E") return Level::entity;
  if (text == "action" || text == "A") return Level::action;
  if (text == "status" || text == "S") return Level::status;
  throw ContractError("unknown level: " + std::string(text));
}

std::size_t level_slot(Level level) {
  switch (level) {
    case Level::status: return 0;
    case Level::action: return 1;
    case Level::entity: return 2;
    case Level::root: break;
  }
  throw ContractError("root has no detection slot");
}

std::string_view to_string(Verdict v) noexcept {
  return v == Verdict::normal ? "normal" : "abnormal";
}

Verdict parse_verdict(std::string_view text) {
  if (text == "normal") return Verdict::normal;
  if (text == "abnormal") return Verdict::abnormal;
  throw ContractError("unknown verdict: " + std::string(text));
}

std::string escape_name(std::string_view name) {
  std::string out;
  out.reserve(name.size());
  for (char c : name) {
    if (c == '\\' || c == '/' || c == '|' || c == '>' || c == ',') out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

std::string chunk_key(std::span<const LogKey> chunk) {
  std::string out;
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    if (i) out.push_back(',');
    out += escape_name(chunk[i]);
  }
  return out;
}

}  // namespace krone
