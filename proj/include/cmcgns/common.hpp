#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cmcgns {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Every failure the library reports derives from Error. The kind string is
// stable and is what the CLI prints in its machine-parsable error line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error("config", w) {}
};
struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error("dimension", w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error("io", w) {}
};
struct VersionMismatch : Error {
  explicit VersionMismatch(const std::string& w) : Error("version", w) {}
};
struct ChecksumMismatch : Error {
  explicit ChecksumMismatch(const std::string& w) : Error("checksum", w) {}
};
struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& w) : Error("non_finite", w) {}
};
struct DegenerateError : Error {
  explicit DegenerateError(const std::string& w) : Error("degenerate", w) {}
};
struct BatchTooSmall : Error {
  explicit BatchTooSmall(const std::string& w) : Error("batch_too_small", w) {}
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

inline void require_finite(const Matrix& m, const std::string& what) {
  if (!m.allFinite()) throw NonFiniteError(what + " contains non-finite values");
}

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace cmcgns
