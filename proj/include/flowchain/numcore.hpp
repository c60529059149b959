#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace flowchain {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Vec2 = Eigen::Vector2d;
using Rng = std::mt19937_64;
using ParamId = std::size_t;

/// Shape or precondition violation on the caller's side.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation produced NaN/Inf, or inputs that must be finite were not.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file, wrong version, truncated container.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::string shape_string(const Matrix& m);

/// Named, ordered collection of dense parameters. Layers refer to entries by id.
class ParameterSet {
public:
    ParamId add(std::string name, Matrix value);

    Matrix& operator[](ParamId id) { return values_[id]; }
    const Matrix& operator[](ParamId id) const { return values_[id]; }
    const std::string& name(ParamId id) const { return names_[id]; }
    std::size_t size() const { return values_.size(); }

    /// Throws FormatError if absent.
    ParamId find(const std::string& name) const;
    std::size_t scalar_count() const;

private:
    std::vector<Matrix> values_;
    std::vector<std::string> names_;
};

/// Plain evaluation context: values are Eigen matrices, nothing is recorded.
class Eval {
public:
    using Value = Matrix;

    explicit Eval(const ParameterSet& params) : params_(&params) {}

    const Matrix& param(ParamId id) const { return (*params_)[id]; }
    Matrix constant(Matrix value) const { return value; }

private:
    const ParameterSet* params_;
};

// Elementwise and linear-algebra primitives on plain matrices. Binary elementwise
// ops broadcast an operand with a single row across the other's rows.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix mul(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double factor);
Matrix shift(const Matrix& a, double offset);
Matrix neg(const Matrix& a);
Matrix tanh(const Matrix& a);
Matrix sigmoid(const Matrix& a);
Matrix exp(const Matrix& a);
Matrix square(const Matrix& a);
/// alpha * tanh(a / alpha): smooth clamp to (-alpha, alpha).
Matrix soft_clamp(const Matrix& a, double alpha);
Matrix cols(const Matrix& a, Index start, Index count);
Matrix col(const Matrix& a, Index j);
Matrix row_block(const Matrix& a, Index start, Index count);
Matrix hcat(const Matrix& a, const Matrix& b);
/// Sum across columns: N x k -> N x 1.
Matrix row_sum(const Matrix& a);
/// Sum of all entries as a 1 x 1 matrix.
Matrix sum(const Matrix& a);

/// Vectorized hyperbolic tangent, 1 - 2 / (exp(2x) + 1).
template <typename Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x)
{
    return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

bool all_finite(const Matrix& m);

/// Keeps freed activation buffers on the heap instead of returning them to the
/// OS (glibc only; no-op elsewhere). Batched passes allocate many short-lived
/// buffers of a few hundred KB, and mmap/munmap churn dominates otherwise.
void tune_allocator();

/// i.i.d. standard normal draws, row-major fill order.
Matrix standard_normal(Rng& rng, Index rows, Index cols);

}  // namespace flowchain
