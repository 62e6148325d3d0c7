#include "krone/prompts.hpp"

#include <filesystem>

#include "io_util.hpp"
#include "krone/error.hpp"

namespace krone {

// Generated at configure time from prompts/*.txt.
const std::map<std::string, std::string>& embedded_prompts();

PromptLibrary::PromptLibrary() {
  for (const auto& [name, text] : embedded_prompts()) templates_.emplace(name, text);
}

void PromptLibrary::load_overrides(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ContractError("prompt directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".txt") continue;
    templates_[entry.path().stem().string()] = read_file(entry.path());
  }
}

void PromptLibrary::set(std::string name, std::string text) { templates_[std::move(name)] = std::move(text); }

const std::string& PromptLibrary::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) throw ContractError("unknown prompt: " + std::string(name));
  return it->second;
}

std::string PromptLibrary::render(std::string_view name,
                                  const std::map<std::string, std::string>& values) const {
  return render_template(get(name), values);
}

const PromptLibrary& PromptLibrary::defaults() {
  static const PromptLibrary lib;
  return lib;
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto open = text.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    const auto close = text.find("}}", open + 2);
    if (close == std::string_view::npos) throw ContractError("unterminated placeholder in prompt");
    out.append(text.substr(pos, open - pos));
    const std::string name(text.substr(open + 2, close - open - 2));
    auto it = values.find(name);
    if (it == values.end()) throw ContractError("prompt placeholder has no value: " + name);
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

}  // namespace krone
