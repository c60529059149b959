#pragma once

#include <functional>
#include <span>
#include <vector>

#include "flowchain/numcore.hpp"

namespace flowchain {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Matrix& value() const;
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
};

/// Gradients produced by one backward pass. `params[i]` is empty when parameter i
/// was not reachable (or was frozen); `watched[k]` is the adjoint of the k-th
/// watched variable.
struct Gradients {
    std::vector<Matrix> params;
    std::vector<Matrix> watched;

    explicit Gradients(std::size_t n = 0) : params(n) {}
    /// this += other, parameter-wise; empty entries count as zero.
    void accumulate(const Gradients& other);
};

/// Reverse-mode tape over dense matrices. Single owner; replays adjoints in exact
/// reverse recording order and clears itself after each backward pass.
class Tape {
public:
    using Value = Var;
    using BackwardFn = std::function<void(Tape&, const Matrix& grad)>;

    explicit Tape(const ParameterSet& params);
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf for parameter `id`. Frozen parameters become constants.
    Var param(ParamId id);
    Var constant(Matrix value);
    /// Leaf that requires a gradient; pass it to backward() as a watched var.
    Var variable(Matrix value);

    /// Parameters for which the predicate returns true are recorded as constants.
    void set_frozen(std::function<bool(ParamId)> frozen) { frozen_ = std::move(frozen); }

    Gradients backward(const Var& output, const Matrix& adjoint, std::span<const Var> watch = {});

    std::size_t size() const { return nodes_.size(); }
    bool empty() const { return nodes_.empty(); }
    void clear();

    const Matrix& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(const Var& v) const { return nodes_[v.id].requires_grad; }

    /// Records a node. The node requires a gradient iff any parent does.
    Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn fn);
    /// Adds `g` into the adjoint of `v` (no-op when `v` needs no gradient).
    void accumulate(const Var& v, const Matrix& g);
    template <typename Expr>
    void accumulate_expr(const Var& v, const Expr& g)
    {
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) n.grad = g;
        else n.grad += g;
    }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        BackwardFn backward;
        bool requires_grad = false;
        long param = -1;
    };

    const ParameterSet* params_;
    std::vector<Node> nodes_;
    std::function<bool(ParamId)> frozen_;
};

Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var shift(const Var& a, double offset);
Var neg(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);
Var soft_clamp(const Var& a, double alpha);
Var cols(const Var& a, Index start, Index count);
Var col(const Var& a, Index j);
Var row_block(const Var& a, Index start, Index count);
Var hcat(const Var& a, const Var& b);
Var row_sum(const Var& a);
Var sum(const Var& a);

}  // namespace flowchain
