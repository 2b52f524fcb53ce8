#pragma once

#include <stdexcept>
#include <string>

namespace nkf {

// Base of every error raised by the library. `kind()` is a stable tag used in
// the CLI's machine-readable error record.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct BlowupError : Error {
  explicit BlowupError(const std::string& what) : Error("integration_blowup", what) {}
};

struct RankDeficiencyError : Error {
  explicit RankDeficiencyError(const std::string& what) : Error("rank_deficiency", what) {}
};

struct FactorizationError : Error {
  explicit FactorizationError(const std::string& what) : Error("factorization_failure", what) {}
};

struct SingularTransformError : Error {
  explicit SingularTransformError(const std::string& what) : Error("singular_transform", what) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error("dimension_mismatch", what) {}
};

struct AlignmentError : Error {
  explicit AlignmentError(const std::string& what) : Error("alignment", what) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

}  // namespace nkf
