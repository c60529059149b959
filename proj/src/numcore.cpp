#include "flowchain/numcore.hpp"

#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace flowchain {

std::string shape_string(const Matrix& m)
{
    std::ostringstream os;
    os << "[" << m.rows() << ", " << m.cols() << "]";
    return os.str();
}

ParamId ParameterSet::add(std::string name, Matrix value)
{
    values_.push_back(std::move(value));
    names_.push_back(std::move(name));
    return values_.size() - 1;
}

ParamId ParameterSet::find(const std::string& name) const
{
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return i;
    }
    throw FormatError("unknown parameter '" + name + "'");
}

std::size_t ParameterSet::scalar_count() const
{
    std::size_t n = 0;
    for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
    return n;
}

namespace {

void check_broadcast(const Matrix& a, const Matrix& b, const char* op)
{
    if (a.cols() != b.cols() || (a.rows() != b.rows() && a.rows() != 1 && b.rows() != 1)) {
        throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                         shape_string(b));
    }
}

template <typename F>
Matrix broadcast_binary(const Matrix& a, const Matrix& b, const char* op, F f)
{
    check_broadcast(a, b, op);
    if (a.rows() == b.rows()) return f(a.array(), b.array()).matrix();
    if (b.rows() == 1) {
        Matrix out(a.rows(), a.cols());
        for (Index i = 0; i < a.rows(); ++i) out.row(i) = f(a.row(i).array(), b.row(0).array()).matrix();
        return out;
    }
    Matrix out(b.rows(), b.cols());
    for (Index i = 0; i < b.rows(); ++i) out.row(i) = f(a.row(0).array(), b.row(i).array()).matrix();
    return out;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b)
{
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + shape_string(a) + " and " + shape_string(b));
    }
    Matrix out(a.rows(), b.cols());
    out.noalias() = a * b;
    return out;
}

Matrix add(const Matrix& a, const Matrix& b)
{
    return broadcast_binary(a, b, "add", [](const auto& x, const auto& y) { return x + y; });
}

Matrix sub(const Matrix& a, const Matrix& b)
{
    return broadcast_binary(a, b, "sub", [](const auto& x, const auto& y) { return x - y; });
}

Matrix mul(const Matrix& a, const Matrix& b)
{
    return broadcast_binary(a, b, "mul", [](const auto& x, const auto& y) { return x * y; });
}

Matrix scale(const Matrix& a, double factor) { return a * factor; }
Matrix shift(const Matrix& a, double offset) { return (a.array() + offset).matrix(); }
Matrix neg(const Matrix& a) { return -a; }
Matrix tanh(const Matrix& a) { return fast_tanh(a.array()).matrix(); }
Matrix sigmoid(const Matrix& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }
Matrix exp(const Matrix& a) { return a.array().exp().matrix(); }
Matrix square(const Matrix& a) { return a.array().square().matrix(); }

Matrix soft_clamp(const Matrix& a, double alpha)
{
    return (alpha * fast_tanh(a.array() / alpha)).matrix();
}

Matrix cols(const Matrix& a, Index start, Index count)
{
    if (start < 0 || start + count > a.cols()) throw ShapeError("cols: range out of bounds");
    return a.middleCols(start, count);
}

Matrix col(const Matrix& a, Index j) { return cols(a, j, 1); }

Matrix row_block(const Matrix& a, Index start, Index count)
{
    if (start < 0 || start + count > a.rows()) throw ShapeError("row_block: range out of bounds");
    return a.middleRows(start, count);
}

Matrix hcat(const Matrix& a, const Matrix& b)
{
    if (a.rows() != b.rows()) {
        throw ShapeError("hcat: row mismatch " + shape_string(a) + " and " + shape_string(b));
    }
    Matrix out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

Matrix row_sum(const Matrix& a) { return a.rowwise().sum(); }

Matrix sum(const Matrix& a)
{
    Matrix out(1, 1);
    out(0, 0) = a.sum();
    return out;
}

void tune_allocator()
{
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 256 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TOP_PAD, 64 * 1024 * 1024);
#endif
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Matrix standard_normal(Rng& rng, Index rows, Index cols)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(rows, cols);
    for (Index i = 0; i < out.size(); ++i) out.data()[i] = normal(rng);
    return out;
}

}  // namespace flowchain
