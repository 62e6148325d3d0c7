#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace krone {

/// Editable prompt templates with `{{name}}` placeholders.
///
/// Built-in defaults cover every prompt; `load_overrides` replaces any of them
/// from `<dir>/<name>.txt` files (extract, refine_entity, refine_action,
/// summarize_status, summarize_parent, detect, system).
class PromptLibrary {
 public:
  PromptLibrary();

  void load_overrides(const std::filesystem::path& dir);
  void set(std::string name, std::string text);
  const std::string& get(std::string_view name) const;

  /// Substitutes every `{{placeholder}}`; throws ContractError when a
  /// placeholder has no value.
  std::string render(std::string_view name, const std::map<std::string, std::string>& values) const;

  static const PromptLibrary& defaults();

 private:
  std::map<std::string, std::string, std::less<>> templates_;
};

std::string render_template(std::string_view text, const std::map<std::string, std::string>& values);

}  // namespace krone
