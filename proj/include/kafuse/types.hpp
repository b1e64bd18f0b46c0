#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace kafuse {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using LabelVector = Eigen::VectorXi;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing file or directory.
class NotFound : public Error {
 public:
  using Error::Error;
};

// Shape or manifest disagreement.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Malformed or non-finite values.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

// Non-finite objective or similar breakdown during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace kafuse
