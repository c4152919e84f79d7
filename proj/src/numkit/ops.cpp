#include "sbwm/numkit/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace sbwm::nk {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

bool any_requires_grad(std::initializer_list<const Tensor*> inputs)
{
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
}

// Tape to record on, or nullptr when the op is not differentiated.
Tape* recording(std::initializer_list<const Tensor*> inputs)
{
    auto* tape = Tape::active();
    return tape != nullptr && any_requires_grad(inputs) ? tape : nullptr;
}

Tensor make_output(Shape shape, std::vector<double> values, bool requires_grad)
{
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Shape drop_leading(const Shape& s)
{
    return Shape(s.begin() + 1, s.end());
}

struct Broadcast {
    Shape out;
    bool a_small = false;
    bool b_small = false;
};

Broadcast broadcast(const char* op, const Tensor& a, const Tensor& b)
{
    if (a.shape() == b.shape()) {
        return {a.shape()};
    }
    if (a.rank() == b.rank() + 1 && drop_leading(a.shape()) == b.shape()) {
        return {a.shape(), false, true};
    }
    if (b.rank() == a.rank() + 1 && drop_leading(b.shape()) == a.shape()) {
        return {b.shape(), true, false};
    }
    throw ShapeError(op, a.shape(), b.shape());
}

// f(x, y) -> out; dfa/dfb(x, y, out) -> partial derivatives.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb)
{
    auto bc = broadcast(op, a, b);
    const auto n = element_count(bc.out);
    const auto na = a.size();
    const auto nb = b.size();
    const auto& av = a.node()->value;
    const auto& bv = b.node()->value;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(av[i % na], bv[i % nb]);
    }
    auto* tape = recording({&a, &b});
    auto result = make_output(bc.out, std::move(out), tape != nullptr);
    if (tape != nullptr) {
        auto an = a.node();
        auto bn = b.node();
        auto on = result.node();
        tape->record({op, {an, bn}, on, [an = an.get(), bn = bn.get(), on = on.get(), n, dfa, dfb]() {
                          const auto& g = on->grad;
                          const auto& x = an->value;
                          const auto& y = bn->value;
                          const auto& o = on->value;
                          const auto nx = x.size();
                          const auto ny = y.size();
                          if (an->requires_grad) {
                              auto ga = an->grad_buffer();
                              for (std::size_t i = 0; i < n; ++i) {
                                  ga[i % nx] += g[i] * dfa(x[i % nx], y[i % ny], o[i]);
                              }
                          }
                          if (bn->requires_grad) {
                              auto gb = bn->grad_buffer();
                              for (std::size_t i = 0; i < n; ++i) {
                                  gb[i % ny] += g[i] * dfb(x[i % nx], y[i % ny], o[i]);
                              }
                          }
                      }});
    }
    return result;
}

// f(x) -> y; df(x, y) -> dy/dx.
template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df)
{
    const auto& av = a.node()->value;
    std::vector<double> out(av.size());
    std::transform(av.begin(), av.end(), out.begin(), f);
    auto* tape = recording({&a});
    auto result = make_output(a.shape(), std::move(out), tape != nullptr);
    if (tape != nullptr) {
        auto an = a.node();
        auto on = result.node();
        tape->record({op, {an}, on, [an = an.get(), on = on.get(), df]() {
                          auto ga = an->grad_buffer();
                          const auto& g = on->grad;
                          const auto& x = an->value;
                          const auto& y = on->value;
                          for (std::size_t i = 0; i < x.size(); ++i) {
                              ga[i] += g[i] * df(x[i], y[i]);
                          }
                      }});
    }
    return result;
}

double stable_softplus(double x)
{
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double stable_sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b)
{
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul", a.shape(), b.shape());
    }
    const auto m = a.dim(0);
    const auto k = a.dim(1);
    const auto n = b.dim(1);
    std::vector<double> out(m * n);
    MutMap(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
        ConstMap(a.data().data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
        ConstMap(b.data().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    auto* tape = recording({&a, &b});
    auto result = make_output({m, n}, std::move(out), tape != nullptr);
    if (tape != nullptr) {
        auto an = a.node();
        auto bn = b.node();
        auto on = result.node();
        tape->record({"matmul", {an, bn}, on, [an = an.get(), bn = bn.get(), on = on.get(), m, k, n]() {
                          const auto rm = static_cast<Eigen::Index>(m);
                          const auto rk = static_cast<Eigen::Index>(k);
                          const auto rn = static_cast<Eigen::Index>(n);
                          ConstMap g(on->grad.data(), rm, rn);
                          if (an->requires_grad) {
                              MutMap(an->grad_buffer().data(), rm, rk).noalias() +=
                                  g * ConstMap(bn->value.data(), rk, rn).transpose();
                          }
                          if (bn->requires_grad) {
                              MutMap(bn->grad_buffer().data(), rk, rn).noalias() +=
                                  ConstMap(an->value.data(), rm, rk).transpose() * g;
                          }
                      }});
    }
    return result;
}

Tensor add(const Tensor& a, const Tensor& b)
{
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b)
{
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b)
{
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b)
{
    return binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double o) { return -o / y; });
}

Tensor scale(const Tensor& a, double factor)
{
    return unary(
        "scale", a, [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double offset)
{
    return unary(
        "add_scalar", a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Tensor concat(const std::vector<Tensor>& parts)
{
    if (parts.empty()) {
        throw bad_input("concat: no inputs");
    }
    const auto& first = parts.front();
    if (first.rank() == 0) {
        throw ShapeError("concat", first.shape(), "rank 0");
    }
    const std::size_t rows = first.rank() == 2 ? first.dim(0) : 1;
    std::size_t width = 0;
    for (const auto& p : parts) {
        if (p.rank() != first.rank() || (p.rank() == 2 && p.dim(0) != rows)) {
            throw ShapeError("concat", first.shape(), p.shape());
        }
        width += p.last_dim();
    }
    std::vector<double> out(rows * width);
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto w = p.last_dim();
        const auto& v = p.node()->value;
        for (std::size_t r = 0; r < rows; ++r) {
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * w), w,
                        out.begin() + static_cast<std::ptrdiff_t>(r * width + offset));
        }
        offset += w;
    }
    Shape shape = first.rank() == 2 ? Shape{rows, width} : Shape{width};
    auto* tape = Tape::active();
    const bool grads = tape != nullptr && std::any_of(parts.begin(), parts.end(),
                                                      [](const Tensor& t) { return t.requires_grad(); });
    auto result = make_output(std::move(shape), std::move(out), grads);
    if (grads) {
        std::vector<std::shared_ptr<Node>> inputs;
        inputs.reserve(parts.size());
        for (const auto& p : parts) {
            inputs.push_back(p.node());
        }
        auto on = result.node();
        std::vector<Node*> raw;
        raw.reserve(inputs.size());
        for (const auto& in : inputs) {
            raw.push_back(in.get());
        }
        tape->record({"concat", std::move(inputs), on, [raw = std::move(raw), on = on.get(), rows, width]() {
                          std::size_t off = 0;
                          for (auto* in : raw) {
                              const auto w = in->shape.empty() ? 1 : in->shape.back();
                              if (in->requires_grad) {
                                  auto gi = in->grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r) {
                                      for (std::size_t c = 0; c < w; ++c) {
                                          gi[r * w + c] += on->grad[r * width + off + c];
                                      }
                                  }
                              }
                              off += w;
                          }
                      }});
    }
    return result;
}

Tensor slice(const Tensor& a, std::size_t begin, std::size_t end)
{
    if (a.rank() == 0 || begin >= end || end > a.last_dim()) {
        throw ShapeError("slice", a.shape(),
                         "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on last axis");
    }
    const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
    const std::size_t width = a.last_dim();
    const std::size_t w = end - begin;
    std::vector<double> out(rows * w);
    const auto& v = a.node()->value;
    for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * width + begin), w,
                    out.begin() + static_cast<std::ptrdiff_t>(r * w));
    }
    Shape shape = a.rank() == 2 ? Shape{rows, w} : Shape{w};
    auto* tape = recording({&a});
    auto result = make_output(std::move(shape), std::move(out), tape != nullptr);
    if (tape != nullptr) {
        auto an = a.node();
        auto on = result.node();
        tape->record({"slice", {an}, on, [an = an.get(), on = on.get(), rows, width, w, begin]() {
                          auto ga = an->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < w; ++c) {
                                  ga[r * width + begin + c] += on->grad[r * w + c];
                              }
                          }
                      }});
    }
    return result;
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end)
{
    if (a.rank() != 2 || begin >= end || end > a.dim(0)) {
        throw ShapeError("slice_rows", a.shape(),
                         "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") on first axis");
    }
    const std::size_t width = a.dim(1);
    const auto& v = a.node()->value;
    std::vector<double> out(v.begin() + static_cast<std::ptrdiff_t>(begin * width),
                            v.begin() + static_cast<std::ptrdiff_t>(end * width));
    auto* tape = recording({&a});
    auto result = make_output({end - begin, width}, std::move(out), tape != nullptr);
    if (tape != nullptr) {
        auto an = a.node();
        auto on = result.node();
        tape->record({"slice_rows", {an}, on, [an = an.get(), on = on.get(), offset = begin * width]() {
                          auto ga = an->grad_buffer();
                          for (std::size_t i = 0; i < on->grad.size(); ++i) {
                              ga[offset + i] += on->grad[i];
                          }
                      }});
    }
    return result;
}

Tensor tanh(const Tensor& a)
{
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a)
{
    return unary("sigmoid", a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a)
{
    return unary("softplus", a, stable_softplus, [](double x, double) { return stable_sigmoid(x); });
}

Tensor exp(const Tensor& a)
{
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a)
{
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a)
{
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp_min(const Tensor& a, double floor)
{
    return unary(
        "clamp_min", a, [floor](double x) { return std::max(x, floor); },
        [floor](double x, double) { return x >= floor ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a)
{
    double total = 0.0;
    for (double v : a.data()) {
        total += v;
    }
    auto* tape = recording({&a});
    auto result = make_output({}, {total}, tape != nullptr);
    if (tape != nullptr) {
        auto an = a.node();
        auto on = result.node();
        tape->record({"sum", {an}, on, [an = an.get(), on = on.get()]() {
                          auto ga = an->grad_buffer();
                          const double g = on->grad[0];
                          for (auto& v : ga) {
                              v += g;
                          }
                      }});
    }
    return result;
}

Tensor mean(const Tensor& a)
{
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor sum_last(const Tensor& a)
{
    if (a.rank() == 0) {
        throw ShapeError("sum_last", a.shape(), "rank 0");
    }
    const std::size_t width = a.last_dim();
    const std::size_t rows = a.size() / std::max<std::size_t>(width, 1);
    std::vector<double> out(rows, 0.0);
    const auto& v = a.node()->value;
    for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < width; ++c) {
            s += v[r * width + c];
        }
        out[r] = s;
    }
    Shape shape = a.rank() == 2 ? Shape{rows} : Shape{};
    auto* tape = recording({&a});
    auto result = make_output(std::move(shape), std::move(out), tape != nullptr);
    if (tape != nullptr) {
        auto an = a.node();
        auto on = result.node();
        tape->record({"sum_last", {an}, on, [an = an.get(), on = on.get(), rows, width]() {
                          auto ga = an->grad_buffer();
                          for (std::size_t r = 0; r < rows; ++r) {
                              const double g = on->grad[r];
                              for (std::size_t c = 0; c < width; ++c) {
                                  ga[r * width + c] += g;
                              }
                          }
                      }});
    }
    return result;
}

Tensor mean_last(const Tensor& a)
{
    return scale(sum_last(a), 1.0 / static_cast<double>(a.last_dim()));
}

} // namespace sbwm::nk
