#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace galore {

// Every failure raised by the toolkit derives from Error so callers can catch
// one type; the subclasses let tests and the CLI tell the cases apart.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class SizeLimit : public Error {
 public:
  using Error::Error;
};

class UndefinedStableRank : public Error {
 public:
  using Error::Error;
};

class UninitializedProjector : public Error {
 public:
  using Error::Error;
};

class UnsupportedConfiguration : public Error {
 public:
  using Error::Error;
};

class UnstableStepSize : public Error {
 public:
  using Error::Error;
};

class UndefinedBound : public Error {
 public:
  using Error::Error;
};

/// Configuration rejected; `path()` names the offending field, e.g. "grid.rank[2]".
class ConfigError : public Error {
 public:
  ConfigError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(long last_valid_step, const std::string& what)
      : Error(what), last_valid_step_(last_valid_step) {}
  long last_valid_step() const noexcept { return last_valid_step_; }

 private:
  long last_valid_step_;
};

}  // namespace galore
