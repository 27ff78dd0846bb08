#include "graphdps/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace graphdps::ad {

namespace {

std::string shape(const Matrix& m)
{
    std::ostringstream s;
    s << m.rows() << 'x' << m.cols();
    return s.str();
}

void same_shape(const Var& a, const Var& b, const char* op)
{
    if (!a.valid() || !b.valid()) {
        throw Error("autodiff", std::string(op) + ": invalid variable");
    }
    if (&a.tape() != &b.tape()) {
        throw Error("autodiff", std::string(op) + ": variables live on different tapes");
    }
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw Error("autodiff",
                    std::string(op) + ": shape mismatch " + shape(a.value()) + " vs " + shape(b.value()));
    }
}

void check_valid(const Var& a, const char* op)
{
    if (!a.valid()) {
        throw Error("autodiff", std::string(op) + ": invalid variable");
    }
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

double Var::scalar() const
{
    const Matrix& v = value();
    if (v.size() != 1) {
        throw Error("autodiff", "scalar(): variable is " + shape(v));
    }
    return v(0, 0);
}

Var Tape::leaf(Matrix value)
{
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::constant(Matrix value)
{
    nodes_.push_back(Node{std::move(value), Matrix(), nullptr, false});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, Backward backward)
{
    bool needs = false;
    for (const Var& in : inputs) {
        if (&in.tape() != this) {
            throw Error("autodiff", "record: input from a different tape");
        }
        needs = needs || nodes_[in.id()].requires_grad;
    }
    nodes_.push_back(Node{std::move(value), Matrix(), needs ? std::move(backward) : nullptr, needs});
    return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(const Var& loss)
{
    if (&loss.tape() != this) {
        throw Error("autodiff", "backward: loss from a different tape");
    }
    if (loss.value().size() != 1) {
        throw Error("autodiff", "backward: loss must be scalar, got " + shape(loss.value()));
    }
    for (auto& n : nodes_) {
        n.grad.resize(0, 0);
    }
    if (!nodes_[loss.id()].requires_grad) {
        return;
    }
    nodes_[loss.id()].grad = Matrix::Ones(1, 1);
    for (int id = loss.id(); id >= 0; --id) {
        Node& n = nodes_[id];
        if (!n.backward || n.grad.size() == 0) {
            continue;
        }
        // accumulate() only touches inputs, which have smaller ids, so n stays valid.
        n.backward(*this, n.grad, n.value);
    }
}

Matrix Tape::grad(const Var& v) const
{
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) {
        return Matrix::Zero(n.value.rows(), n.value.cols());
    }
    return n.grad;
}

Var add(const Var& a, const Var& b)
{
    same_shape(a, b, "add");
    const int ia = a.id();
    const int ib = b.id();
    const Var in[] = {a, b};
    return a.tape().record(a.value() + b.value(), in, [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(const Var& a, const Var& b)
{
    same_shape(a, b, "sub");
    const int ia = a.id();
    const int ib = b.id();
    const Var in[] = {a, b};
    return a.tape().record(a.value() - b.value(), in, [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
    });
}

Var mul(const Var& a, const Var& b)
{
    same_shape(a, b, "mul");
    const int ia = a.id();
    const int ib = b.id();
    const Var in[] = {a, b};
    return a.tape().record(a.value().cwiseProduct(b.value()), in, [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
        if (t.requires_grad(ia)) {
            t.accumulate(ia, g.cwiseProduct(t.value(ib)));
        }
        if (t.requires_grad(ib)) {
            t.accumulate(ib, g.cwiseProduct(t.value(ia)));
        }
    });
}

Var scale(const Var& a, double c)
{
    check_valid(a, "scale");
    const int ia = a.id();
    const Var in[] = {a};
    return a.tape().record(c * a.value(), in, [ia, c](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(ia, c * g); });
}

Var add_scalar(const Var& a, double c)
{
    check_valid(a, "add_scalar");
    const int ia = a.id();
    const Var in[] = {a};
    return a.tape().record(a.value().array() + c, in, [ia](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(ia, g); });
}

Var mul_scalar(const Var& a, const Var& s)
{
    check_valid(a, "mul_scalar");
    check_valid(s, "mul_scalar");
    if (s.value().size() != 1) {
        throw Error("autodiff", "mul_scalar: scale must be 1x1, got " + shape(s.value()));
    }
    const int ia = a.id();
    const int is = s.id();
    const Var in[] = {a, s};
    return a.tape().record(s.scalar() * a.value(), in, [ia, is](Tape& t, const Matrix& g, const Matrix&) {
        if (t.requires_grad(ia)) {
            t.accumulate(ia, t.value(is)(0, 0) * g);
        }
        if (t.requires_grad(is)) {
            t.accumulate(is, Matrix::Constant(1, 1, g.cwiseProduct(t.value(ia)).sum()));
        }
    });
}

Var matmul(const Var& a, const Var& b)
{
    check_valid(a, "matmul");
    check_valid(b, "matmul");
    if (a.cols() != b.rows()) {
        throw Error("autodiff", "matmul: inner dimensions differ, " + shape(a.value()) + " * " + shape(b.value()));
    }
    const int ia = a.id();
    const int ib = b.id();
    const Var in[] = {a, b};
    return a.tape().record(a.value() * b.value(), in, [ia, ib](Tape& t, const Matrix& g, const Matrix&) {
        if (t.requires_grad(ia)) {
            t.accumulate(ia, g * t.value(ib).transpose());
        }
        if (t.requires_grad(ib)) {
            t.accumulate(ib, t.value(ia).transpose() * g);
        }
    });
}

Var matmul_t(const Var& x, const Var& w)
{
    check_valid(x, "matmul_t");
    check_valid(w, "matmul_t");
    if (x.cols() != w.cols()) {
        throw Error("autodiff",
                    "matmul_t: feature width " + shape(x.value()) + " does not match weight " + shape(w.value()));
    }
    const int ix = x.id();
    const int iw = w.id();
    const Var in[] = {x, w};
    return x.tape().record(x.value() * w.value().transpose(), in, [ix, iw](Tape& t, const Matrix& g, const Matrix&) {
        if (t.requires_grad(ix)) {
            t.accumulate(ix, g * t.value(iw));
        }
        if (t.requires_grad(iw)) {
            t.accumulate(iw, g.transpose() * t.value(ix));
        }
    });
}

Var add_row(const Var& x, const Var& b)
{
    check_valid(x, "add_row");
    check_valid(b, "add_row");
    if (b.rows() != 1 || b.cols() != x.cols()) {
        throw Error("autodiff", "add_row: row " + shape(b.value()) + " does not fit " + shape(x.value()));
    }
    const int ix = x.id();
    const int ib = b.id();
    const Var in[] = {x, b};
    Matrix out = x.value();
    out.rowwise() += b.value().row(0);
    return x.tape().record(std::move(out), in, [ix, ib](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(ix, g);
        if (t.requires_grad(ib)) {
            t.accumulate(ib, g.colwise().sum());
        }
    });
}

Var concat_cols(std::span<const Var> parts)
{
    if (parts.empty()) {
        throw Error("autodiff", "concat_cols: no inputs");
    }
    const Eigen::Index rows = parts[0].rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        check_valid(p, "concat_cols");
        if (p.rows() != rows) {
            throw Error("autodiff", "concat_cols: row counts differ, " + shape(parts[0].value()) + " vs " +
                                        shape(p.value()));
        }
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<std::pair<int, Eigen::Index>> layout;  // id, width
    Eigen::Index offset = 0;
    for (const Var& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        layout.emplace_back(p.id(), p.cols());
        offset += p.cols();
    }
    return parts[0].tape().record(std::move(out), parts, [layout = std::move(layout)](Tape& t, const Matrix& g, const Matrix&) {
        Eigen::Index off = 0;
        for (const auto& [id, width] : layout) {
            if (t.requires_grad(id)) {
                t.accumulate(id, g.middleCols(off, width));
            }
            off += width;
        }
    });
}

Var concat_cols(std::initializer_list<Var> parts) { return concat_cols(std::span<const Var>(parts.begin(), parts.size())); }

Var gather_rows(const Var& x, IndexList index)
{
    check_valid(x, "gather_rows");
    const Matrix& xv = x.value();
    Matrix out(static_cast<Eigen::Index>(index->size()), xv.cols());
    for (std::size_t r = 0; r < index->size(); ++r) {
        const int src = (*index)[r];
        if (src < 0 || src >= xv.rows()) {
            throw Error("autodiff", "gather_rows: index " + std::to_string(src) + " out of range for " + shape(xv));
        }
        out.row(static_cast<Eigen::Index>(r)) = xv.row(src);
    }
    const int ix = x.id();
    const Eigen::Index rows = xv.rows();
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [ix, rows, index](Tape& t, const Matrix& g, const Matrix&) {
        Matrix gx = Matrix::Zero(rows, g.cols());
        for (std::size_t r = 0; r < index->size(); ++r) {
            gx.row((*index)[r]) += g.row(static_cast<Eigen::Index>(r));
        }
        t.accumulate(ix, gx);
    });
}

Var scatter_add_rows(const Var& x, IndexList index, Eigen::Index rows)
{
    check_valid(x, "scatter_add_rows");
    const Matrix& xv = x.value();
    if (static_cast<Eigen::Index>(index->size()) != xv.rows()) {
        throw Error("autodiff", "scatter_add_rows: index length does not match " + shape(xv));
    }
    Matrix out = Matrix::Zero(rows, xv.cols());
    for (std::size_t r = 0; r < index->size(); ++r) {
        const int dst = (*index)[r];
        if (dst < 0 || dst >= rows) {
            throw Error("autodiff", "scatter_add_rows: index " + std::to_string(dst) + " out of range");
        }
        out.row(dst) += xv.row(static_cast<Eigen::Index>(r));
    }
    const int ix = x.id();
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [ix, index](Tape& t, const Matrix& g, const Matrix&) {
        Matrix gx(static_cast<Eigen::Index>(index->size()), g.cols());
        for (std::size_t r = 0; r < index->size(); ++r) {
            gx.row(static_cast<Eigen::Index>(r)) = g.row((*index)[r]);
        }
        t.accumulate(ix, gx);
    });
}

Var scale_rows(const Var& x, std::shared_ptr<const Eigen::VectorXd> weights)
{
    check_valid(x, "scale_rows");
    if (weights->size() != x.rows()) {
        throw Error("autodiff", "scale_rows: weight length does not match " + shape(x.value()));
    }
    Matrix out = weights->asDiagonal() * x.value();
    const int ix = x.id();
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [ix, weights](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(ix, weights->asDiagonal() * g);
    });
}

Var layer_norm_rows(const Var& x, double eps)
{
    check_valid(x, "layer_norm_rows");
    const Matrix& xv = x.value();
    const Eigen::Index n = xv.cols();
    if (n == 0) {
        throw Error("autodiff", "layer_norm_rows: zero-width input");
    }
    Matrix out(xv.rows(), n);
    auto inv_std = std::make_shared<Eigen::VectorXd>(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        const double s = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = s;
        out.row(r) = (xv.row(r).array() - mu) * s;
    }
    const int ix = x.id();
    const Var in[] = {x};
    return x.tape().record(std::move(out), in, [ix, inv_std](Tape& t, const Matrix& g, const Matrix& y) {
        const double inv_n = 1.0 / static_cast<double>(g.cols());
        Matrix gx(g.rows(), g.cols());
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
            const double gm = g.row(r).sum() * inv_n;
            const double gy = g.row(r).dot(y.row(r)) * inv_n;
            gx.row(r) = (*inv_std)[r] * (g.row(r).array() - gm - y.row(r).array() * gy);
        }
        t.accumulate(ix, gx);
    });
}

double selu_value(double x) { return x > 0.0 ? kSeluScale * x : kSeluScale * kSeluAlpha * std::expm1(x); }

Var selu(const Var& x)
{
    check_valid(x, "selu");
    const int ix = x.id();
    const Var in[] = {x};
    return x.tape().record(x.value().unaryExpr(&selu_value), in, [ix](Tape& t, const Matrix& g, const Matrix& y) {
        // For x <= 0, d/dx = scale * alpha * e^x = y + scale * alpha.
        const Matrix& xv = t.value(ix);
        Matrix d(g.rows(), g.cols());
        for (Eigen::Index k = 0; k < g.size(); ++k) {
            const double slope = xv.data()[k] > 0.0 ? kSeluScale : y.data()[k] + kSeluScale * kSeluAlpha;
            d.data()[k] = g.data()[k] * slope;
        }
        t.accumulate(ix, d);
    });
}

Var square(const Var& x)
{
    check_valid(x, "square");
    const int ix = x.id();
    const Var in[] = {x};
    return x.tape().record(x.value().array().square(), in, [ix](Tape& t, const Matrix& g, const Matrix&) {
        t.accumulate(ix, 2.0 * g.cwiseProduct(t.value(ix)));
    });
}

Var abs_smooth(const Var& x, double delta)
{
    check_valid(x, "abs_smooth");
    if (!(delta > 0.0)) {
        throw Error("autodiff", "abs_smooth: delta must be positive");
    }
    const int ix = x.id();
    const Var in[] = {x};
    Matrix out = (x.value().array().square() + delta * delta).sqrt();
    return x.tape().record(std::move(out), in, [ix](Tape& t, const Matrix& g, const Matrix& y) {
        t.accumulate(ix, g.cwiseProduct(t.value(ix)).cwiseQuotient(y));
    });
}

Var sum(const Var& x)
{
    check_valid(x, "sum");
    const int ix = x.id();
    const Eigen::Index r = x.rows();
    const Eigen::Index c = x.cols();
    const Var in[] = {x};
    return x.tape().record(Matrix::Constant(1, 1, x.value().sum()), in,
                           [ix, r, c](Tape& t, const Matrix& g, const Matrix&) {
                               t.accumulate(ix, Matrix::Constant(r, c, g(0, 0)));
                           });
}

Var mean(const Var& x)
{
    check_valid(x, "mean");
    if (x.value().size() == 0) {
        throw Error("autodiff", "mean: empty input");
    }
    return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var column(const Var& x, Eigen::Index c)
{
    check_valid(x, "column");
    if (c < 0 || c >= x.cols()) {
        throw Error("autodiff", "column: index out of range for " + shape(x.value()));
    }
    const int ix = x.id();
    const Eigen::Index cols = x.cols();
    const Var in[] = {x};
    return x.tape().record(x.value().col(c), in, [ix, c, cols](Tape& t, const Matrix& g, const Matrix&) {
        Matrix gx = Matrix::Zero(g.rows(), cols);
        gx.col(c) = g.col(0);
        t.accumulate(ix, gx);
    });
}

Var custom_unary(const Var& x, Matrix value, std::function<Matrix(const Matrix& input, const Matrix& grad_out)> vjp)
{
    check_valid(x, "custom_unary");
    const int ix = x.id();
    const Var in[] = {x};
    return x.tape().record(std::move(value), in, [ix, vjp = std::move(vjp)](Tape& t, const Matrix& g, const Matrix&) {
        Matrix gx = vjp(t.value(ix), g);
        if (gx.rows() != t.value(ix).rows() || gx.cols() != t.value(ix).cols()) {
            throw Error("autodiff", "custom_unary: vjp returned " + shape(gx) + " for input " + shape(t.value(ix)));
        }
        t.accumulate(ix, gx);
    });
}

}  // namespace graphdps::ad
