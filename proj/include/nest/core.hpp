#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace nest {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Real-valued activations laid out as [timestep * rows_per_step, features].
using Currents = RowMatrix<double>;
/// Binary activations with the same layout as Currents.
using SpikeMatrix = RowMatrix<std::uint8_t>;

inline constexpr int kDefaultGranularities = 4;

// Error taxonomy. The CLI maps each family onto a distinct exit code.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct StructuralError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};
struct ContractViolation : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VersionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const char* what) {
  if (!ok) throw StructuralError(what);
}

}  // namespace nest
