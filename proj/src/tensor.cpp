#include "camp/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "camp/error.hpp"
#include "camp/log.hpp"

namespace camp {

namespace {

thread_local GradTape* g_active_tape = nullptr;
std::atomic<std::uint64_t> g_next_tape_id{1};

// Additive surrogate for -infinity used by masked softmax.
constexpr double kMaskedLogit = -1e30;

std::size_t product(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void check_shape(const Shape& shape) {
    if (shape.empty() || shape.size() > 2) {
        throw DimensionError("tensor rank must be 1 or 2, got shape " + shape_str(shape));
    }
    for (auto e : shape) {
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
}

std::size_t rows_of(const Shape& s) { return s[0]; }
std::size_t cols_of(const Shape& s) { return s.size() == 2 ? s[1] : 1; }

bool tracking(std::initializer_list<const Tensor*> inputs) {
    if (g_active_tape == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

bool tracking(std::span<const Tensor> inputs) {
    if (g_active_tape == nullptr) return false;
    for (const Tensor& t : inputs) {
        if (t.requires_grad()) return true;
    }
    return false;
}

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> value, bool track) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->requires_grad = track;
    node->tape_id = track ? g_active_tape->id() : 0;
    return node;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void require_defined(const char* op, const Tensor& a) {
    if (!a.defined()) throw DimensionError(std::string(op) + ": undefined tensor");
}

// Accumulates `g` into `t` if `t` participates in differentiation.
inline void send(const std::shared_ptr<detail::Node>& t, std::span<const double> g) {
    if (t->requires_grad) t->accumulate(g);
}

double stable_sigmoid(double x) {
    double s;
    if (x >= 0.0) {
        s = 1.0 / (1.0 + std::exp(-x));
    } else {
        const double e = std::exp(x);
        s = e / (1.0 + e);
    }
    // Keep the open interval (0, 1) even where double rounding saturates.
    constexpr double lo = std::numeric_limits<double>::min();
    constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
    return std::clamp(s, lo, hi);
}

}  // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

double order_invariant_sum(std::span<double> values) {
    std::sort(values.begin(), values.end());
    double s = 0.0;
    for (double v : values) s += v;
    return s;
}

// ---- Node ------------------------------------------------------------------

void detail::Node::accumulate(std::span<const double> g) {
    auto& buf = grad_buffer();
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    const auto n = product(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (product(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_str(shape) + " needs " + std::to_string(product(shape)) +
                             " values, got " + std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values, bool requires_grad) {
    return from({rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const auto n = values.size();
    return from({n}, std::move(values), requires_grad);
}

Tensor Tensor::column(std::vector<double> values, bool requires_grad) {
    const auto n = values.size();
    return from({n, 1}, std::move(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
    std::vector<double> v(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return from({n, n}, std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }
std::size_t Tensor::rows() const { return rows_of(node_->shape); }
std::size_t Tensor::cols() const { return cols_of(node_->shape); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }

double Tensor::at(std::size_t r, std::size_t c) const {
    if (r >= rows() || c >= cols()) {
        throw DimensionError("index (" + std::to_string(r) + "," + std::to_string(c) + ") outside " +
                             shape_str(shape()));
    }
    return node_->value[r * cols() + c];
}

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() {
    node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::clear_grad() { node_->grad.clear(); }
std::span<double> Tensor::mutable_grad() { return node_->grad_buffer(); }

Tensor Tensor::clone(bool requires_grad) const {
    return from(shape(), node_->value, requires_grad);
}

bool Tensor::is_leaf() const { return node_->tape_id == 0; }

// ---- tape ------------------------------------------------------------------

GradTape::GradTape() : id_(g_next_tape_id.fetch_add(1)) {}

void GradTape::record(std::shared_ptr<detail::Node> output, BackwardFn backward_fn) {
    entries_.push_back({std::move(output), std::move(backward_fn)});
}

void GradTape::backward(const Tensor& loss) {
    if (!loss.defined()) throw TapeError("backward on an undefined tensor");
    if (loss.size() != 1) throw TapeError("backward needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad()) return;
    if (loss.node()->tape_id != id_) throw TapeError("loss tensor was not recorded on this tape");

    for (auto& e : entries_) e.output->grad.clear();
    loss.node()->grad.assign(1, 1.0);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->output->grad.empty()) continue;
        it->backward_fn(it->output->grad);
    }
}

TapeScope::TapeScope(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }
NoGradScope::~NoGradScope() { g_active_tape = previous_; }

GradTape* active_tape() { return g_active_tape; }

// ---- operations ------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, Accumulation acc) {
    require_defined("matmul", a);
    require_defined("matmul", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const auto A = a.data();
    const auto B = b.data();
    std::vector<double> out(m * n, 0.0);
    if (acc == Accumulation::sequential) {
        for (std::size_t i = 0; i < m; ++i) {
            double* row = out.data() + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                const double aip = A[i * k + p];
                const double* brow = B.data() + p * n;
                for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
            }
        }
    } else {
        std::vector<double> terms(k);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t p = 0; p < k; ++p) terms[p] = A[i * k + p] * B[p * n + j];
                out[i * n + j] = order_invariant_sum(terms);
            }
        }
    }

    const bool track = tracking({&a, &b});
    auto node = new_node({m, n}, std::move(out), track);
    if (track) {
        g_active_tape->record(node, [an = a.shared_node(), bn = b.shared_node(), m, k, n](std::span<const double> g) {
            if (an->requires_grad) {
                std::vector<double> ga(m * k, 0.0);
                const auto& Bv = bn->value;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * Bv[p * n + j];
                        ga[i * k + p] = s;
                    }
                an->accumulate(ga);
            }
            if (bn->requires_grad) {
                std::vector<double> gb(k * n, 0.0);
                const auto& Av = an->value;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double aip = Av[i * k + p];
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
                    }
                bn->accumulate(gb);
            }
        });
    }
    return Tensor::from_node(node);
}

Tensor transpose(const Tensor& a) {
    require_defined("transpose", a);
    const std::size_t r = a.rows(), c = a.cols();
    const auto A = a.data();
    std::vector<double> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = A[i * c + j];
    const bool track = tracking({&a});
    auto node = new_node({c, r}, std::move(out), track);
    if (track) {
        g_active_tape->record(node, [an = a.shared_node(), r, c](std::span<const double> g) {
            std::vector<double> ga(r * c);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) ga[i * c + j] = g[j * r + i];
            an->accumulate(ga);
        });
    }
    return Tensor::from_node(node);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_defined("linear", x);
    require_defined("linear", w);
    require_defined("linear", b);
    const std::size_t d_in = x.rows(), n = x.cols(), d_out = w.rows();
    if (w.cols() != d_in || b.size() != d_out || b.cols() != 1) {
        throw DimensionError("linear: weight " + shape_str(w.shape()) + ", bias " + shape_str(b.shape()) +
                             " incompatible with input " + shape_str(x.shape()));
    }
    const auto X = x.data(), W = w.data(), Bv = b.data();
    std::vector<double> out(d_out * n);
    for (std::size_t o = 0; o < d_out; ++o) {
        double* row = out.data() + o * n;
        std::fill(row, row + n, Bv[o]);
        for (std::size_t p = 0; p < d_in; ++p) {
            const double wop = W[o * d_in + p];
            const double* xrow = X.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += wop * xrow[j];
        }
    }
    const bool track = tracking({&x, &w, &b});
    auto node = new_node({d_out, n}, std::move(out), track);
    if (track) {
        g_active_tape->record(node, [xn = x.shared_node(), wn = w.shared_node(), bn = b.shared_node(), d_in, d_out,
                                     n](std::span<const double> g) {
            if (xn->requires_grad) {
                std::vector<double> gx(d_in * n, 0.0);
                for (std::size_t o = 0; o < d_out; ++o)
                    for (std::size_t p = 0; p < d_in; ++p) {
                        const double wop = wn->value[o * d_in + p];
                        for (std::size_t j = 0; j < n; ++j) gx[p * n + j] += wop * g[o * n + j];
                    }
                xn->accumulate(gx);
            }
            if (wn->requires_grad) {
                std::vector<double> gw(d_out * d_in, 0.0);
                for (std::size_t o = 0; o < d_out; ++o)
                    for (std::size_t p = 0; p < d_in; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[o * n + j] * xn->value[p * n + j];
                        gw[o * d_in + p] = s;
                    }
                wn->accumulate(gw);
            }
            if (bn->requires_grad) {
                std::vector<double> gb(d_out, 0.0);
                for (std::size_t o = 0; o < d_out; ++o)
                    for (std::size_t j = 0; j < n; ++j) gb[o] += g[o * n + j];
                bn->accumulate(gb);
            }
        });
    }
    return Tensor::from_node(node);
}

Tensor scaled_softmax(const Tensor& m, double scale, const Mask* mask) {
    require_defined("scaled_softmax", m);
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw DomainError("scaled_softmax: scale must be positive and finite, got " + std::to_string(scale));
    }
    const std::size_t r = m.rows(), c = m.cols();
    if (mask != nullptr && mask->size() != r * c) {
        throw DimensionError("scaled_softmax: mask has " + std::to_string(mask->size()) + " entries for input " +
                             shape_str(m.shape()));
    }
    const auto M = m.data();
    std::vector<double> out(r * c);
    std::vector<double> z(c);
    for (std::size_t i = 0; i < r; ++i) {
        bool any = false;
        for (std::size_t j = 0; j < c; ++j) {
            z[j] = M[i * c + j] / scale;
            if (mask != nullptr && (*mask)[i * c + j] == 0) {
                z[j] += kMaskedLogit;
            } else {
                any = true;
            }
        }
        if (!any) throw DomainError("scaled_softmax: row " + std::to_string(i) + " is fully masked");
        const double mx = *std::max_element(z.begin(), z.end());
        for (std::size_t j = 0; j < c; ++j) z[j] = std::exp(z[j] - mx);
        std::vector<double> terms(z);
        const double denom = order_invariant_sum(terms);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = z[j] / denom;
    }
    const bool track = tracking({&m});
    auto node = new_node(m.shape(), std::move(out), track);
    if (track) {
        g_active_tape->record(node, [mn = m.shared_node(), self = node.get(), r, c, scale](std::span<const double> g) {
            std::vector<double> gm(r * c);
            const auto& p = self->value;
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * p[i * c + j];
                for (std::size_t j = 0; j < c; ++j) gm[i * c + j] = p[i * c + j] * (g[i * c + j] - dot) / scale;
            }
            mn->accumulate(gm);
        });
    }
    return Tensor::from_node(node);
}

namespace {

template <typename Fwd, typename Deriv>
Tensor unary(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
    require_defined(name, a);
    const auto A = a.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < A.size(); ++i) out[i] = fwd(A[i]);
    const bool track = tracking({&a});
    auto node = new_node(a.shape(), std::move(out), track);
    if (track) {
        // deriv(x, y) gives dy/dx from the input and the output value.
        g_active_tape->record(node, [an = a.shared_node(), self = node.get(), deriv](std::span<const double> g) {
            std::vector<double> ga(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * deriv(an->value[i], self->value[i]);
            an->accumulate(ga);
        });
    }
    return Tensor::from_node(node);
}

enum class BinaryKind { add, sub, mul };

Tensor binary(BinaryKind kind, const char* name, const Tensor& a, const Tensor& b) {
    require_defined(name, a);
    require_defined(name, b);
    require_same_shape(name, a, b);
    const auto A = a.data(), B = b.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < A.size(); ++i) {
        switch (kind) {
            case BinaryKind::add: out[i] = A[i] + B[i]; break;
            case BinaryKind::sub: out[i] = A[i] - B[i]; break;
            case BinaryKind::mul: out[i] = A[i] * B[i]; break;
        }
    }
    const bool track = tracking({&a, &b});
    auto node = new_node(a.shape(), std::move(out), track);
    if (track) {
        g_active_tape->record(node, [an = a.shared_node(), bn = b.shared_node(), kind](std::span<const double> g) {
            const std::size_t n = g.size();
            switch (kind) {
                case BinaryKind::add:
                    send(an, g);
                    send(bn, g);
                    break;
                case BinaryKind::sub: {
                    send(an, g);
                    if (bn->requires_grad) {
                        std::vector<double> gb(n);
                        for (std::size_t i = 0; i < n; ++i) gb[i] = -g[i];
                        bn->accumulate(gb);
                    }
                    break;
                }
                case BinaryKind::mul: {
                    if (an->requires_grad) {
                        std::vector<double> ga(n);
                        for (std::size_t i = 0; i < n; ++i) ga[i] = g[i] * bn->value[i];
                        an->accumulate(ga);
                    }
                    if (bn->requires_grad) {
                        std::vector<double> gb(n);
                        for (std::size_t i = 0; i < n; ++i) gb[i] = g[i] * an->value[i];
                        bn->accumulate(gb);
                    }
                    break;
                }
            }
        });
    }
    return Tensor::from_node(node);
}

}  // namespace

Tensor pointwise(Pointwise kind, const Tensor& a, const Tensor* b) {
    switch (kind) {
        case Pointwise::sigmoid: return sigmoid(a);
        case Pointwise::tanh: return tanh(a);
        case Pointwise::relu: return relu(a);
        case Pointwise::add:
        case Pointwise::mul:
            if (b == nullptr) throw DimensionError("pointwise: binary kind needs a second operand");
            return kind == Pointwise::add ? add(a, *b) : mul(a, *b);
    }
    throw DimensionError("pointwise: unknown kind");
}

Tensor sigmoid(const Tensor& a) {
    return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
    return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
    return unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryKind::add, "add", a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryKind::sub, "sub", a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryKind::mul, "mul", a, b); }

Tensor affine(const Tensor& a, double scale, double shift) {
    return unary("affine", a, [scale, shift](double x) { return scale * x + shift; },
                 [scale](double, double) { return scale; });
}

Tensor log(const Tensor& a) {
    for (double v : a.data()) {
        if (!(v > 0.0)) throw DomainError("log: non-positive argument " + std::to_string(v));
    }
    return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    return unary("clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                 [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
    require_defined("sum", a);
    double s = 0.0;
    for (double v : a.data()) s += v;
    const bool track = tracking({&a});
    auto node = new_node({1}, {s}, track);
    if (track) {
        g_active_tape->record(node, [an = a.shared_node()](std::span<const double> g) {
            std::vector<double> ga(an->value.size(), g[0]);
            an->accumulate(ga);
        });
    }
    return Tensor::from_node(node);
}

Tensor mean(const Tensor& a) { return affine(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor element(const Tensor& a, std::size_t r, std::size_t c) {
    require_defined("element", a);
    const double v = a.at(r, c);
    const std::size_t idx = r * a.cols() + c;
    const bool track = tracking({&a});
    auto node = new_node({1}, {v}, track);
    if (track) {
        g_active_tape->record(node, [an = a.shared_node(), idx](std::span<const double> g) {
            an->grad_buffer()[idx] += g[0];
        });
    }
    return Tensor::from_node(node);
}

Tensor stack(std::span<const Tensor> scalars, std::size_t rows, std::size_t cols) {
    if (scalars.size() != rows * cols) {
        throw DimensionError("stack: " + std::to_string(scalars.size()) + " scalars for a " + std::to_string(rows) +
                             "x" + std::to_string(cols) + " matrix");
    }
    std::vector<double> out(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        require_defined("stack", scalars[i]);
        if (scalars[i].size() != 1) throw DimensionError("stack: element " + std::to_string(i) + " is not a scalar");
        out[i] = scalars[i].data()[0];
    }
    const bool track = tracking(scalars);
    auto node = new_node({rows, cols}, std::move(out), track);
    if (track) {
        std::vector<std::shared_ptr<detail::Node>> ins;
        ins.reserve(scalars.size());
        for (const auto& s : scalars) ins.push_back(s.shared_node());
        g_active_tape->record(node, [ins = std::move(ins)](std::span<const double> g) {
            for (std::size_t i = 0; i < ins.size(); ++i) {
                if (ins[i]->requires_grad) ins[i]->grad_buffer()[0] += g[i];
            }
        });
    }
    return Tensor::from_node(node);
}

Tensor slice_column(const Tensor& a, std::size_t c) {
    const std::size_t idx[1] = {c};
    return gather_columns(a, idx);
}

Tensor gather_columns(const Tensor& a, std::span<const std::size_t> cols) {
    require_defined("gather_columns", a);
    const std::size_t r = a.rows(), c = a.cols(), n = cols.size();
    if (n == 0) throw DimensionError("gather_columns: empty column list");
    for (auto j : cols) {
        if (j >= c) {
            throw DimensionError("gather_columns: column " + std::to_string(j) + " outside " + shape_str(a.shape()));
        }
    }
    const auto A = a.data();
    std::vector<double> out(r * n);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < n; ++k) out[i * n + k] = A[i * c + cols[k]];
    const bool track = tracking({&a});
    auto node = new_node({r, n}, std::move(out), track);
    if (track) {
        g_active_tape->record(node, [an = a.shared_node(), idx = std::vector<std::size_t>(cols.begin(), cols.end()),
                                     r, c](std::span<const double> g) {
            auto& buf = an->grad_buffer();
            const std::size_t n = idx.size();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t k = 0; k < n; ++k) buf[i * c + idx[k]] += g[i * n + k];
        });
    }
    return Tensor::from_node(node);
}

Tensor concat_columns(std::span<const Tensor> columns) {
    if (columns.empty()) throw DimensionError("concat_columns: no columns");
    const std::size_t r = columns[0].rows(), n = columns.size();
    for (const auto& col : columns) {
        require_defined("concat_columns", col);
        if (col.cols() != 1 || col.rows() != r) {
            throw DimensionError("concat_columns: expected " + std::to_string(r) + "x1 columns, got " +
                                 shape_str(col.shape()));
        }
    }
    std::vector<double> out(r * n);
    for (std::size_t k = 0; k < n; ++k) {
        const auto C = columns[k].data();
        for (std::size_t i = 0; i < r; ++i) out[i * n + k] = C[i];
    }
    const bool track = tracking(columns);
    auto node = new_node({r, n}, std::move(out), track);
    if (track) {
        std::vector<std::shared_ptr<detail::Node>> ins;
        for (const auto& col : columns) ins.push_back(col.shared_node());
        g_active_tape->record(node, [ins = std::move(ins), r](std::span<const double> g) {
            const std::size_t n = ins.size();
            std::vector<double> gc(r);
            for (std::size_t k = 0; k < n; ++k) {
                if (!ins[k]->requires_grad) continue;
                for (std::size_t i = 0; i < r; ++i) gc[i] = g[i * n + k];
                ins[k]->accumulate(gc);
            }
        });
    }
    return Tensor::from_node(node);
}

Tensor concat_rows(const Tensor& top, const Tensor& bottom) {
    require_defined("concat_rows", top);
    require_defined("concat_rows", bottom);
    if (top.cols() != bottom.cols()) {
        throw DimensionError("concat_rows: column counts differ: " + shape_str(top.shape()) + " vs " +
                             shape_str(bottom.shape()));
    }
    const std::size_t c = top.cols(), rt = top.rows(), rb = bottom.rows();
    std::vector<double> out;
    out.reserve((rt + rb) * c);
    out.insert(out.end(), top.data().begin(), top.data().end());
    out.insert(out.end(), bottom.data().begin(), bottom.data().end());
    const bool track = tracking({&top, &bottom});
    auto node = new_node({rt + rb, c}, std::move(out), track);
    if (track) {
        g_active_tape->record(node, [tn = top.shared_node(), bn = bottom.shared_node(), split = rt * c](
                                        std::span<const double> g) {
            send(tn, g.subspan(0, split));
            send(bn, g.subspan(split));
        });
    }
    return Tensor::from_node(node);
}

Tensor repeat_column(const Tensor& column, std::size_t count) {
    require_defined("repeat_column", column);
    if (column.cols() != 1) throw DimensionError("repeat_column: expected a column, got " + shape_str(column.shape()));
    if (count == 0) throw DimensionError("repeat_column: count must be positive");
    const std::size_t r = column.rows();
    const auto C = column.data();
    std::vector<double> out(r * count);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t k = 0; k < count; ++k) out[i * count + k] = C[i];
    const bool track = tracking({&column});
    auto node = new_node({r, count}, std::move(out), track);
    if (track) {
        g_active_tape->record(node, [cn = column.shared_node(), r, count](std::span<const double> g) {
            std::vector<double> gc(r, 0.0);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t k = 0; k < count; ++k) gc[i] += g[i * count + k];
            cn->accumulate(gc);
        });
    }
    return Tensor::from_node(node);
}

Tensor reshape(const Tensor& a, Shape shape) {
    require_defined("reshape", a);
    check_shape(shape);
    if (product(shape) != a.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.data().begin(), a.data().end());
    const bool track = tracking({&a});
    auto node = new_node(std::move(shape), std::move(out), track);
    if (track) {
        g_active_tape->record(node, [an = a.shared_node()](std::span<const double> g) { an->accumulate(g); });
    }
    return Tensor::from_node(node);
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b) {
    require_defined("cosine_similarity", a);
    require_defined("cosine_similarity", b);
    require_same_shape("cosine_similarity", a, b);
    const auto A = a.data(), B = b.data();
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < A.size(); ++i) {
        dot += A[i] * B[i];
        na2 += A[i] * A[i];
        nb2 += B[i] * B[i];
    }
    if (na2 == 0.0 || nb2 == 0.0) {
        warn_once("cosine-zero", "cosine_similarity: zero-norm input, similarity defined as 0");
        return Tensor::scalar(0.0);
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double cs = dot / (na * nb);
    const bool track = tracking({&a, &b});
    auto node = new_node({1}, {cs}, track);
    if (track) {
        g_active_tape->record(node, [an = a.shared_node(), bn = b.shared_node(), na, nb, cs](std::span<const double> g) {
            const auto& Av = an->value;
            const auto& Bv = bn->value;
            const std::size_t n = Av.size();
            if (an->requires_grad) {
                std::vector<double> ga(n);
                for (std::size_t i = 0; i < n; ++i) ga[i] = g[0] * (Bv[i] / (na * nb) - cs * Av[i] / (na * na));
                an->accumulate(ga);
            }
            if (bn->requires_grad) {
                std::vector<double> gb(n);
                for (std::size_t i = 0; i < n; ++i) gb[i] = g[0] * (Av[i] / (na * nb) - cs * Bv[i] / (nb * nb));
                bn->accumulate(gb);
            }
        });
    }
    return Tensor::from_node(node);
}

// ---- grad_check ------------------------------------------------------------

GradCheckResult grad_check(const ScalarFunction& f, std::span<const Tensor> inputs, double eps, double floor) {
    std::vector<Tensor> xs(inputs.begin(), inputs.end());
    std::vector<bool> saved_flags;
    std::vector<std::vector<double>> saved_grads;
    for (auto& x : xs) {
        saved_flags.push_back(x.requires_grad());
        saved_grads.emplace_back(x.grad().begin(), x.grad().end());
        x.set_requires_grad(true);
        x.clear_grad();
    }

    std::vector<std::vector<double>> analytic;
    {
        GradTape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            loss = f(xs);
        }
        tape.backward(loss);
        for (auto& x : xs) {
            if (x.has_grad()) {
                analytic.emplace_back(x.grad().begin(), x.grad().end());
            } else {
                analytic.emplace_back(x.size(), 0.0);
            }
        }
    }

    GradCheckResult result;
    NoGradScope no_grad;
    for (std::size_t t = 0; t < xs.size(); ++t) {
        auto values = xs[t].mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + eps;
            const double fp = f(xs).item();
            values[i] = orig - eps;
            const double fm = f(xs).item();
            values[i] = orig;
            const double numeric = (fp - fm) / (2.0 * eps);
            const double a = analytic[t][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            const double err = std::abs(a - numeric) / denom;
            ++result.coordinates;
            if (err > result.max_relative_error || !std::isfinite(err)) {
                result.max_relative_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
                result.worst_input = t;
                result.worst_index = i;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }

    for (std::size_t t = 0; t < xs.size(); ++t) {
        xs[t].set_requires_grad(saved_flags[t]);
        if (saved_grads[t].empty()) {
            xs[t].clear_grad();
        } else {
            auto g = xs[t].mutable_grad();
            std::copy(saved_grads[t].begin(), saved_grads[t].end(), g.begin());
        }
    }
    return result;
}

}  // namespace camp
