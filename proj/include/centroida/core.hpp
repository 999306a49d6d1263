#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace centroida {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;

enum class Domain { source, target };

inline const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

// Error hierarchy. Everything thrown by the library derives from Error so callers
// can separate library failures from std::bad_alloc and friends.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A configuration or specification value outside its domain.
struct InvalidSpec : Error {
  using Error::Error;
};

/// Malformed input data (CSV rows, JSON documents, shapes).
struct InvalidInput : Error {
  using Error::Error;
};

struct ParseError : InvalidInput {
  ParseError(std::size_t row, const std::string& what)
      : InvalidInput("row " + std::to_string(row) + ": " + what), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

struct NumericError : Error {
  using Error::Error;
};

/// A query that needs state which has not been accumulated yet.
struct NotReady : Error {
  using Error::Error;
};

/// Training cannot continue (non-finite loss or gradient).
struct TrainingAbort : Error {
  using Error::Error;
};

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline int argmax_row(const Matrix& m, Eigen::Index row) {
  Eigen::Index best = 0;
  m.row(row).maxCoeff(&best);
  return static_cast<int>(best);
}

inline Labels argmax_rows(const Matrix& m) {
  Labels out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out[static_cast<std::size_t>(i)] = argmax_row(m, i);
  return out;
}

}  // namespace centroida
