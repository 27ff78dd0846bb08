#pragma once

#include "graphdps/common.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

// Reverse-mode differentiation over dense row-major matrices. Rows index graph nodes or edges,
// columns index features.
namespace graphdps::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using IndexList = std::shared_ptr<const std::vector<int>>;

inline constexpr double kSeluScale = 1.0507009873554805;
inline constexpr double kSeluAlpha = 1.6732632423543772;

class Tape;

class Var {
public:
    Var() = default;

    bool valid() const { return tape_ != nullptr; }
    Tape& tape() const { return *tape_; }
    int id() const { return id_; }
    const Matrix& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    /// Value of a 1x1 variable.
    double scalar() const;

private:
    friend class Tape;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    /// Receives the tape, the output gradient and the output value.
    using Backward = std::function<void(Tape&, const Matrix& grad_out, const Matrix& out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input (parameters, states).
    Var leaf(Matrix value);
    /// Input that never receives a gradient.
    Var constant(Matrix value);

    /// Records a node. `backward` must call accumulate() for its inputs. Used by the primitives below and by custom operators.
    Var record(Matrix value, std::span<const Var> inputs, Backward backward);

    /// Reverse sweep from a 1x1 loss. Clears previous gradients first, so repeated calls agree.
    void backward(const Var& loss);

    /// Gradient of the last backward() loss; zero for nodes the loss does not depend on.
    Matrix grad(const Var& v) const;

    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    const Matrix& value(int id) const { return nodes_[id].value; }

    template <class Derived>
    void accumulate(int id, const Eigen::MatrixBase<Derived>& g)
    {
        Node& n = nodes_[id];
        if (!n.requires_grad) {
            return;
        }
        if (n.grad.size() == 0) {
            n.grad = g;
        } else {
            n.grad += g;
        }
    }

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Backward backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
};

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  ///< elementwise
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
/// Scales every entry of `a` by the 1x1 variable `s`.
Var mul_scalar(const Var& a, const Var& s);
Var matmul(const Var& a, const Var& b);
/// x * w^T: applies a weight stored as (out x in) to row features.
Var matmul_t(const Var& x, const Var& w);
/// x + 1 * b with b a 1 x cols row.
Var add_row(const Var& x, const Var& b);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
/// out.row(r) = x.row(index[r]).
Var gather_rows(const Var& x, IndexList index);
/// out.row(index[r]) += x.row(r), out has `rows` rows.
Var scatter_add_rows(const Var& x, IndexList index, Eigen::Index rows);
/// out.row(i) = weights[i] * x.row(i).
Var scale_rows(const Var& x, std::shared_ptr<const Eigen::VectorXd> weights);
/// Per-row standardization (population variance), no affine terms.
Var layer_norm_rows(const Var& x, double eps = 1e-8);
Var selu(const Var& x);
Var square(const Var& x);
/// sqrt(x^2 + delta^2).
Var abs_smooth(const Var& x, double delta);
Var sum(const Var& x);
Var mean(const Var& x);
Var column(const Var& x, Eigen::Index c);

/// Custom differentiable map of a single input. `vjp(input_value, grad_out)` returns the input gradient.
Var custom_unary(const Var& x, Matrix value, std::function<Matrix(const Matrix& input, const Matrix& grad_out)> vjp);

double selu_value(double x);

/// Convenience conversions between NodeField and n x 1 matrices.
inline Matrix as_column(const NodeField& v) { return Matrix(v); }
inline NodeField as_field(const Matrix& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

}  // namespace graphdps::ad
