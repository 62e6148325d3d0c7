#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace krone {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

class DuplicateKeyError : public Error {
 public:
  explicit DuplicateKeyError(std::string key)
      : Error("duplicate key: " + key), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// A log key could not be resolved in the tree or catalog.
class LookupError : public Error {
 public:
  explicit LookupError(std::string key, std::string detail = {})
      : Error("unknown log key: " + key + (detail.empty() ? "" : " (" + detail + ")")),
        key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Persisted artifact has the wrong version or is corrupt.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Structural invariant broken inside a decomposition or tree.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

class ProviderError : public Error {
 public:
  using Error::Error;
};

class RetrievalError : public Error {
 public:
  using Error::Error;
};

/// Topic extraction failed for one or more templates.
class ExtractionError : public Error {
 public:
  ExtractionError(const std::string& what, std::vector<std::string> failed_keys)
      : Error(what), failed_keys_(std::move(failed_keys)) {}

  const std::vector<std::string>& failed_keys() const noexcept { return failed_keys_; }

 private:
  std::vector<std::string> failed_keys_;
};

/// Pipeline failure tagged with the stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace krone
