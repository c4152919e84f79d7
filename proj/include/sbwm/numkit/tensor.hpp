#pragma once

#include "sbwm/error.hpp"

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace sbwm::nk {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Raised when operand shapes do not conform. The message names the op and
/// both shapes.
class ShapeError : public Error {
public:
    ShapeError(std::string_view op, const Shape& a, const Shape& b);
    ShapeError(std::string_view op, const Shape& a, std::string_view detail);
};

/// Storage behind a Tensor handle. Values are row-major float64.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // empty means "no gradient"
    bool requires_grad = false;

    std::span<double> grad_buffer(); // allocates zeros on first use
};

/// Shared handle to a dense real tensor of rank 0, 1 or 2.
///
/// Copies alias the same storage. Values of tensors produced by ops are never
/// modified after creation; leaves (parameters, inputs) may be written
/// through `mutable_data()` between tapes.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    static Tensor row(std::vector<double> values); // shape {1, n}

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t last_dim() const;

    std::span<const double> data() const { return node_->value; }
    std::span<double> mutable_data() { return node_->value; }
    std::vector<double> to_vector() const { return node_->value; }
    double item() const;
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad_buffer(); }
    void zero_grad();
    void clear_grad() { node_->grad.clear(); }

    /// Same values, cut from the graph.
    Tensor detach() const;

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Recorded operations for one forward pass (define-by-run).
///
/// Ops record onto the tape that is active on the calling thread; with no
/// active tape nothing is recorded and no gradients flow.
class Tape {
public:
    struct Entry {
        const char* op;
        std::vector<std::shared_ptr<Node>> inputs;
        std::shared_ptr<Node> output;
        std::function<void()> backward;
    };

    void record(Entry entry);
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<Entry>& entries() const { return entries_; }
    void clear() { entries_.clear(); }

    /// Seeds d(loss)/d(loss) = 1 and runs every entry once, newest first.
    /// The tape is cleared afterwards.
    void backward(const Tensor& loss);

    static Tape* active();

private:
    friend class TapeScope;
    std::vector<Entry> entries_;
};

/// Makes `tape` the active tape of this thread for the scope's lifetime.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Suspends recording for the scope (inference).
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

/// Backward on the active tape.
void backward(const Tensor& loss);

} // namespace sbwm::nk
