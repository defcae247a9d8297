#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace camp {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

// Row-major boolean mask. 1 = keep, 0 = masked out.
using Mask = std::vector<std::uint8_t>;

namespace detail {
struct Node;
}

class GradTape;

// Dense real array of rank 1 or 2, stored row-major in double precision.
//
// A Tensor is a cheap handle: copies share storage. Values produced by an
// operation are never modified afterwards; only parameters (leaves) are
// mutated, and only by the optimizer or by explicit initialisation.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor column(std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor identity(std::size_t n, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }

    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t size() const;
    // Matrix view: rank-1 tensors of length n are treated as n x 1.
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> data() const;
    // Direct write access; only for leaves (parameters, inputs under construction).
    std::span<double> mutable_data();

    double operator[](std::size_t i) const { return data()[i]; }
    double at(std::size_t r, std::size_t c) const;
    double item() const;

    bool requires_grad() const;
    void set_requires_grad(bool on);

    bool has_grad() const;
    std::span<const double> grad() const;
    // Allocates (if needed) and zeroes the gradient buffer.
    void zero_grad();
    void clear_grad();
    std::span<double> mutable_grad();

    // Deep copy with no tape history.
    Tensor clone(bool requires_grad = false) const;
    Tensor detach() const { return clone(false); }

    bool is_leaf() const;

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& shared_node() const { return node_; }
    static Tensor from_node(std::shared_ptr<detail::Node> node) { return Tensor(std::move(node)); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty means "no gradient yet"
    bool requires_grad = false;
    std::uint64_t tape_id = 0;  // 0 for leaves

    void accumulate(std::span<const double> g);
    std::vector<double>& grad_buffer();
};

}  // namespace detail

// Ordered record of executed operations. Backward replays the record in
// reverse, visiting each entry once.
class GradTape {
public:
    GradTape();
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    // Populates grad on every requires_grad ancestor of `loss`. A loss that
    // does not require grad is a no-op; a loss recorded on another tape is
    // an error.
    void backward(const Tensor& loss);

    std::size_t size() const { return entries_.size(); }
    std::uint64_t id() const { return id_; }
    void clear() { entries_.clear(); }

    // Used by operations; not part of the everyday API.
    using BackwardFn = std::function<void(std::span<const double> output_grad)>;
    void record(std::shared_ptr<detail::Node> output, BackwardFn backward_fn);

private:
    struct Entry {
        std::shared_ptr<detail::Node> output;
        BackwardFn backward_fn;
    };
    std::uint64_t id_;
    std::vector<Entry> entries_;
};

// Makes `tape` the active tape on the current thread for the scope's
// lifetime. Operations run with no active tape record nothing.
class TapeScope {
public:
    explicit TapeScope(GradTape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape* previous_;
};

// Temporarily disables recording on the current thread.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    GradTape* previous_;
};

GradTape* active_tape();

// Summation order for reductions. `order_invariant` sums each dot product's
// terms in ascending value order, so permuting the reduced axis gives a
// bit-identical result.
enum class Accumulation { sequential, order_invariant };

// ---- operations -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, Accumulation acc = Accumulation::sequential);
Tensor transpose(const Tensor& a);

// w * x + b, with b (length d_out) added to every column.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Row-wise softmax of m / scale. Where `mask` is given (row-major, same
// shape as m), zero entries get exactly zero weight.
Tensor scaled_softmax(const Tensor& m, double scale, const Mask* mask = nullptr);

enum class Pointwise { sigmoid, tanh, relu, add, mul };
Tensor pointwise(Pointwise kind, const Tensor& a, const Tensor* b = nullptr);

Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// scale * a + shift
Tensor affine(const Tensor& a, double scale, double shift = 0.0);
Tensor log(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Single element as a scalar tensor.
Tensor element(const Tensor& a, std::size_t r, std::size_t c);
// Builds a rows x cols matrix from scalar tensors given row-major.
Tensor stack(std::span<const Tensor> scalars, std::size_t rows, std::size_t cols);

Tensor slice_column(const Tensor& a, std::size_t c);
Tensor gather_columns(const Tensor& a, std::span<const std::size_t> cols);
// Column vectors (each n x 1) side by side.
Tensor concat_columns(std::span<const Tensor> columns);
// Vertical concatenation of two matrices with equal column counts.
Tensor concat_rows(const Tensor& top, const Tensor& bottom);
// Explicit copy of an n x 1 column into n x count.
Tensor repeat_column(const Tensor& column, std::size_t count);
// Copy of `a` reshaped; sizes must agree.
Tensor reshape(const Tensor& a, Shape shape);

// Cosine similarity of two equal-shape tensors as a scalar. A zero-norm
// input yields 0 (with a one-time warning) and no gradient.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

// ---- verification ----------------------------------------------------

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coordinates = 0;
};

using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

// Compares analytic gradients with central differences on every coordinate
// of every input. Relative error is |a - n| / max(|a|, |n|, floor); the
// floor keeps coordinates with near-zero gradients from dominating through
// rounding noise. Inputs are restored on return.
GradCheckResult grad_check(const ScalarFunction& f, std::span<const Tensor> inputs,
                           double eps = 1e-5, double floor = 1e-3);

// Sum of values in ascending order; the result depends only on the multiset.
double order_invariant_sum(std::span<double> values);

}  // namespace camp
