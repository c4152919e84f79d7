#include "sbwm/numkit/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace sbwm {

std::string_view to_string(ErrorCategory category)
{
    switch (category) {
    case ErrorCategory::bad_input:
        return "bad-input";
    case ErrorCategory::not_found:
        return "not-found";
    case ErrorCategory::io:
        return "io";
    case ErrorCategory::numerical:
        return "numerical";
    case ErrorCategory::internal:
        return "internal";
    }
    return "internal";
}

} // namespace sbwm

namespace sbwm::nk {

namespace {

thread_local Tape* active_tape = nullptr;

} // namespace

std::size_t element_count(const Shape& shape)
{
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string to_string(const Shape& shape)
{
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != 0) {
            out << ", ";
        }
        out << shape[i];
    }
    out << ']';
    return out.str();
}

ShapeError::ShapeError(std::string_view op, const Shape& a, const Shape& b)
    : Error(ErrorCategory::bad_input,
            std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b))
{
}

ShapeError::ShapeError(std::string_view op, const Shape& a, std::string_view detail)
    : Error(ErrorCategory::bad_input,
            std::string(op) + ": invalid shape " + to_string(a) + " (" + std::string(detail) + ")")
{
}

std::span<double> Node::grad_buffer()
{
    if (grad.empty()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    auto n = element_count(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad)
{
    if (shape.size() > 2) {
        throw ShapeError("tensor", shape, "rank > 2 unsupported");
    }
    if (element_count(shape) != values.size()) {
        throw ShapeError("tensor", shape, "holds " + std::to_string(values.size()) + " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad)
{
    return from({}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad)
{
    Shape shape{values.size()};
    return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::row(std::vector<double> values)
{
    Shape shape{1, values.size()};
    return from(std::move(shape), std::move(values));
}

std::size_t Tensor::last_dim() const
{
    return rank() == 0 ? 1 : shape().back();
}

double Tensor::item() const
{
    if (size() != 1) {
        throw ShapeError("item", shape(), "not a single element");
    }
    return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const
{
    return node_->value.at(r * last_dim() + c);
}

void Tensor::zero_grad()
{
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const
{
    return from(shape(), node_->value, false);
}

void Tape::record(Entry entry)
{
    entries_.push_back(std::move(entry));
}

void Tape::backward(const Tensor& loss)
{
    if (loss.size() != 1) {
        throw ShapeError("backward", loss.shape(), "loss must be scalar");
    }
    if (entries_.empty()) {
        throw bad_input("backward: tape is empty");
    }
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (!it->output->grad.empty()) {
            it->backward();
        }
    }
    entries_.clear();
}

Tape* Tape::active()
{
    return active_tape;
}

TapeScope::TapeScope(Tape& tape) : previous_(active_tape)
{
    active_tape = &tape;
}

TapeScope::~TapeScope()
{
    active_tape = previous_;
}

NoGradScope::NoGradScope() : previous_(active_tape)
{
    active_tape = nullptr;
}

NoGradScope::~NoGradScope()
{
    active_tape = previous_;
}

void backward(const Tensor& loss)
{
    auto* tape = Tape::active();
    if (tape == nullptr) {
        throw bad_input("backward: no active tape");
    }
    tape->backward(loss);
}

} // namespace sbwm::nk
