#include "flowchain/tape.hpp"

namespace flowchain {

const Matrix& Var::value() const { return tape->value(id); }

void Gradients::accumulate(const Gradients& other)
{
    if (params.size() < other.params.size()) params.resize(other.params.size());
    for (std::size_t i = 0; i < other.params.size(); ++i) {
        const Matrix& g = other.params[i];
        if (g.size() == 0) continue;
        if (params[i].size() == 0) params[i] = g;
        else params[i] += g;
    }
}

Tape::Tape(const ParameterSet& params) : params_(&params) {}

Var Tape::param(ParamId id)
{
    Node n;
    n.value = (*params_)[id];
    if (!(frozen_ && frozen_(id))) {
        n.requires_grad = true;
        n.param = static_cast<long>(id);
    }
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::constant(Matrix value)
{
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::variable(Matrix value)
{
    Node n;
    n.value = std::move(value);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn)
{
    Node n;
    n.value = std::move(value);
    for (const Var& p : parents) {
        if (p.tape != this) throw ShapeError("tape: operand recorded on a different tape");
        n.requires_grad = n.requires_grad || nodes_[p.id].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

void Tape::accumulate(const Var& v, const Matrix& g) { accumulate_expr(v, g); }

void Tape::clear() { nodes_.clear(); }

Gradients Tape::backward(const Var& output, const Matrix& adjoint, std::span<const Var> watch)
{
    if (nodes_.empty()) throw ShapeError("backward: tape is empty");
    if (output.tape != this || output.id >= nodes_.size()) {
        throw ShapeError("backward: output is not recorded on this tape");
    }
    const Matrix& out = nodes_[output.id].value;
    if (adjoint.rows() != out.rows() || adjoint.cols() != out.cols()) {
        throw ShapeError("backward: adjoint shape " + shape_string(adjoint) +
                         " does not match output shape " + shape_string(out));
    }

    Gradients result(params_->size());
    if (nodes_[output.id].requires_grad) {
        nodes_[output.id].grad = adjoint;
        for (std::size_t i = output.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.size() == 0) continue;
            if (n.backward) n.backward(*this, n.grad);
            if (n.param >= 0) {
                Matrix& slot = result.params[static_cast<std::size_t>(n.param)];
                if (slot.size() == 0) slot = n.grad;
                else slot += n.grad;
            }
        }
    }
    result.watched.reserve(watch.size());
    for (const Var& w : watch) {
        const Node& n = nodes_[w.id];
        result.watched.push_back(n.grad.size() ? n.grad : Matrix::Zero(n.value.rows(), n.value.cols()));
    }
    clear();
    return result;
}

namespace {

// Reduce a broadcast adjoint back to the operand's shape.
Matrix reduce_to(const Matrix& g, Index rows)
{
    if (g.rows() == rows) return g;
    return g.colwise().sum();
}

}  // namespace

Var matmul(const Var& a, const Var& b)
{
    Tape& t = *a.tape;
    Matrix v = matmul(a.value(), b.value());
    return t.record(std::move(v), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate_expr(a, g * b.value().transpose());
        if (t.requires_grad(b)) t.accumulate_expr(b, a.value().transpose() * g);
    });
}

Var add(const Var& a, const Var& b)
{
    Tape& t = *a.tape;
    return t.record(add(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, reduce_to(g, a.rows()));
        if (t.requires_grad(b)) t.accumulate(b, reduce_to(g, b.rows()));
    });
}

Var sub(const Var& a, const Var& b)
{
    Tape& t = *a.tape;
    return t.record(sub(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, reduce_to(g, a.rows()));
        if (t.requires_grad(b)) t.accumulate(b, -reduce_to(g, b.rows()));
    });
}

Var mul(const Var& a, const Var& b)
{
    Tape& t = *a.tape;
    return t.record(mul(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate(a, reduce_to(mul(g, b.value()), a.rows()));
        if (t.requires_grad(b)) t.accumulate(b, reduce_to(mul(g, a.value()), b.rows()));
    });
}

Var scale(const Var& a, double factor)
{
    return a.tape->record(scale(a.value(), factor), {a},
                          [a, factor](Tape& t, const Matrix& g) { t.accumulate_expr(a, g * factor); });
}

Var shift(const Var& a, double offset)
{
    return a.tape->record(shift(a.value(), offset), {a},
                          [a](Tape& t, const Matrix& g) { t.accumulate(a, g); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var tanh(const Var& a)
{
    Tape& t = *a.tape;
    const std::size_t self = t.size();
    return t.record(tanh(a.value()), {a}, [a, self](Tape& t, const Matrix& g) {
        t.accumulate_expr(a, (g.array() * (1.0 - t.value(self).array().square())).matrix());
    });
}

Var sigmoid(const Var& a)
{
    Tape& t = *a.tape;
    const std::size_t self = t.size();
    return t.record(sigmoid(a.value()), {a}, [a, self](Tape& t, const Matrix& g) {
        const auto s = t.value(self).array();
        t.accumulate_expr(a, (g.array() * s * (1.0 - s)).matrix());
    });
}

Var exp(const Var& a)
{
    Tape& t = *a.tape;
    const std::size_t self = t.size();
    return t.record(exp(a.value()), {a}, [a, self](Tape& t, const Matrix& g) {
        t.accumulate_expr(a, (g.array() * t.value(self).array()).matrix());
    });
}

Var square(const Var& a)
{
    return a.tape->record(square(a.value()), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate_expr(a, (2.0 * g.array() * a.value().array()).matrix());
    });
}

Var soft_clamp(const Var& a, double alpha)
{
    Tape& t = *a.tape;
    const std::size_t self = t.size();
    return t.record(soft_clamp(a.value(), alpha), {a}, [a, self, alpha](Tape& t, const Matrix& g) {
        const auto r = t.value(self).array() / alpha;
        t.accumulate_expr(a, (g.array() * (1.0 - r.square())).matrix());
    });
}

Var cols(const Var& a, Index start, Index count)
{
    return a.tape->record(cols(a.value(), start, count), {a}, [a, start, count](Tape& t, const Matrix& g) {
        Matrix full = Matrix::Zero(a.rows(), a.cols());
        full.middleCols(start, count) = g;
        t.accumulate(a, full);
    });
}

Var col(const Var& a, Index j) { return cols(a, j, 1); }

Var row_block(const Var& a, Index start, Index count)
{
    return a.tape->record(row_block(a.value(), start, count), {a},
                          [a, start, count](Tape& t, const Matrix& g) {
                              Matrix full = Matrix::Zero(a.rows(), a.cols());
                              full.middleRows(start, count) = g;
                              t.accumulate(a, full);
                          });
}

Var hcat(const Var& a, const Var& b)
{
    return a.tape->record(hcat(a.value(), b.value()), {a, b}, [a, b](Tape& t, const Matrix& g) {
        if (t.requires_grad(a)) t.accumulate_expr(a, g.leftCols(a.cols()));
        if (t.requires_grad(b)) t.accumulate_expr(b, g.rightCols(b.cols()));
    });
}

Var row_sum(const Var& a)
{
    return a.tape->record(row_sum(a.value()), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate_expr(a, g.replicate(1, a.cols()));
    });
}

Var sum(const Var& a)
{
    return a.tape->record(sum(a.value()), {a}, [a](Tape& t, const Matrix& g) {
        t.accumulate_expr(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

}  // namespace flowchain
