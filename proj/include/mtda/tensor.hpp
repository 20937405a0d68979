#pragma once

// Minimal reverse-mode automatic differentiation: dense row-major tensors, a
// per-step tape of backward closures, and exactly the operations the
// segmentation model needs. Pass tape == nullptr for inference-only forwards.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "mtda/errors.hpp"

namespace mtda {

template <typename Real>
struct Tensor {
    std::vector<int> shape;
    std::vector<Real> data;
    std::vector<Real> grad;  // same size as data once requires_grad is set
    bool requires_grad = false;

    int size() const { return static_cast<int>(data.size()); }

    // Rows/cols view: a 1-D tensor is treated as a single row.
    int rows() const { return shape.size() >= 2 ? shape[0] : 1; }
    int cols() const { return shape.empty() ? 0 : shape.back(); }

    void zero_grad() { std::fill(grad.begin(), grad.end(), Real(0)); }

    void set_requires_grad() {
        requires_grad = true;
        grad.assign(data.size(), Real(0));
    }
};

template <typename Real>
using TensorPtr = std::shared_ptr<Tensor<Real>>;

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    return shape.empty() ? std::string("scalar") : os.str();
}

inline long long shape_numel(const std::vector<int>& shape) {
    long long n = 1;
    for (int d : shape) n *= d;
    return n;
}

template <typename Real>
TensorPtr<Real> make_tensor(std::vector<int> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<Real>>();
    for (int d : shape) {
        if (d <= 0) throw ContractError("make_tensor: non-positive dimension in shape " + shape_str(shape));
    }
    t->shape = std::move(shape);
    t->data.assign(static_cast<std::size_t>(shape_numel(t->shape)), Real(0));
    if (requires_grad) t->set_requires_grad();
    return t;
}

template <typename Real>
TensorPtr<Real> make_tensor(std::vector<int> shape, std::vector<Real> values, bool requires_grad = false) {
    auto t = make_tensor<Real>(std::move(shape), false);
    if (static_cast<long long>(values.size()) != shape_numel(t->shape)) {
        throw ContractError("make_tensor: " + std::to_string(values.size()) + " values for shape " +
                            shape_str(t->shape));
    }
    t->data = std::move(values);
    if (requires_grad) t->set_requires_grad();
    return t;
}

template <typename Real>
TensorPtr<Real> make_scalar(Real value, bool requires_grad = false) {
    return make_tensor<Real>({1}, std::vector<Real>{value}, requires_grad);
}

// Ordered record of executed ops. Backward replays the closures in reverse;
// gradients accumulate additively until reset() starts the next step.
template <typename Real>
class Tape {
  public:
    void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }

    std::size_t node_count() const { return nodes_.size(); }

    void reset() { nodes_.clear(); }

    void backward(const TensorPtr<Real>& loss) {
        if (!loss || loss->size() != 1) {
            throw ContractError("backward: loss must be a scalar, got shape " +
                                (loss ? shape_str(loss->shape) : std::string("null")));
        }
        if (loss->requires_grad) loss->grad[0] += Real(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    }

  private:
    std::vector<std::function<void()>> nodes_;
};

namespace detail {

template <typename Real>
bool tape_wants_grad(Tape<Real>* tape, std::initializer_list<const TensorPtr<Real>*> inputs) {
    if (!tape) return false;
    for (const auto* in : inputs) {
        if ((*in)->requires_grad) return true;
    }
    return false;
}

template <typename Real>
void mark_output(Tape<Real>* tape, const TensorPtr<Real>& out,
                 std::initializer_list<const TensorPtr<Real>*> inputs, std::function<void()> backward) {
    if (tape_wants_grad(tape, inputs)) {
        out->set_requires_grad();
        tape->record(std::move(backward));
    }
}

}  // namespace detail

// out[t,k] = sum_d x[t,d] * w[d,k] + b[k]. A 1-D x is treated as one row and
// yields a 1-D output. Also serves as the 1x1 temporal convolution.
template <typename Real>
TensorPtr<Real> linear(Tape<Real>* tape, const TensorPtr<Real>& x, const TensorPtr<Real>& w,
                       const TensorPtr<Real>& b) {
    if (x->shape.size() > 2 || x->shape.empty()) {
        throw ShapeError("linear: input must be 1-D or 2-D, got " + shape_str(x->shape));
    }
    if (w->shape.size() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(w->shape));
    const bool vec = x->shape.size() == 1;
    const int t_len = vec ? 1 : x->shape[0];
    const int d_in = vec ? x->shape[0] : x->shape[1];
    if (d_in != w->shape[0]) {
        throw ShapeError("linear: input " + shape_str(x->shape) + " incompatible with weight " +
                         shape_str(w->shape));
    }
    const int k_out = w->shape[1];
    if (b->shape.size() != 1 || b->shape[0] != k_out) {
        throw ShapeError("linear: bias " + shape_str(b->shape) + " incompatible with weight " +
                         shape_str(w->shape));
    }

    auto out = make_tensor<Real>(vec ? std::vector<int>{k_out} : std::vector<int>{t_len, k_out});
    const Real* xd = x->data.data();
    const Real* wd = w->data.data();
    const Real* bd = b->data.data();
    Real* od = out->data.data();
    for (int t = 0; t < t_len; ++t) {
        Real* orow = od + static_cast<std::size_t>(t) * k_out;
        for (int k = 0; k < k_out; ++k) orow[k] = bd[k];
        const Real* xrow = xd + static_cast<std::size_t>(t) * d_in;
        for (int d = 0; d < d_in; ++d) {
            const Real xv = xrow[d];
            const Real* wrow = wd + static_cast<std::size_t>(d) * k_out;
            for (int k = 0; k < k_out; ++k) orow[k] += xv * wrow[k];
        }
    }

    detail::mark_output<Real>(tape, out, {&x, &w, &b}, [x, w, b, out, t_len, d_in, k_out]() {
        const Real* g = out->grad.data();
        const Real* xd = x->data.data();
        const Real* wd = w->data.data();
        if (x->requires_grad) {
            Real* gx = x->grad.data();
            for (int t = 0; t < t_len; ++t) {
                const Real* grow = g + static_cast<std::size_t>(t) * k_out;
                Real* gxrow = gx + static_cast<std::size_t>(t) * d_in;
                for (int d = 0; d < d_in; ++d) {
                    const Real* wrow = wd + static_cast<std::size_t>(d) * k_out;
                    Real acc = 0;
                    for (int k = 0; k < k_out; ++k) acc += grow[k] * wrow[k];
                    gxrow[d] += acc;
                }
            }
        }
        if (w->requires_grad) {
            Real* gw = w->grad.data();
            for (int t = 0; t < t_len; ++t) {
                const Real* grow = g + static_cast<std::size_t>(t) * k_out;
                const Real* xrow = xd + static_cast<std::size_t>(t) * d_in;
                for (int d = 0; d < d_in; ++d) {
                    const Real xv = xrow[d];
                    Real* gwrow = gw + static_cast<std::size_t>(d) * k_out;
                    for (int k = 0; k < k_out; ++k) gwrow[k] += xv * grow[k];
                }
            }
        }
        if (b->requires_grad) {
            Real* gb = b->grad.data();
            for (int t = 0; t < t_len; ++t) {
                const Real* grow = g + static_cast<std::size_t>(t) * k_out;
                for (int k = 0; k < k_out; ++k) gb[k] += grow[k];
            }
        }
    });
    return out;
}

// Acausal dilated 1-D convolution over a T x C_in sequence with a
// k x C_in x C_out kernel. The window is centered; sequence length is
// preserved via symmetric zero padding of dilation*(k-1)/2 frames.
template <typename Real>
TensorPtr<Real> dilated_conv1d(Tape<Real>* tape, const TensorPtr<Real>& x, const TensorPtr<Real>& kernel,
                               const TensorPtr<Real>& bias, int dilation) {
    if (kernel->shape.size() != 3) {
        throw ShapeError("dilated_conv1d: kernel must be k x C_in x C_out, got " + shape_str(kernel->shape));
    }
    const int k_taps = kernel->shape[0];
    const int c_in = kernel->shape[1];
    const int c_out = kernel->shape[2];
    if (k_taps % 2 == 0) {
        throw ConfigError("dilated_conv1d: kernel size must be odd, got " + std::to_string(k_taps));
    }
    if (dilation < 1) throw ConfigError("dilated_conv1d: dilation must be >= 1, got " + std::to_string(dilation));
    if (x->shape.size() != 2 || x->shape[1] != c_in) {
        throw ShapeError("dilated_conv1d: input " + shape_str(x->shape) + " incompatible with kernel " +
                         shape_str(kernel->shape));
    }
    if (bias->shape.size() != 1 || bias->shape[0] != c_out) {
        throw ShapeError("dilated_conv1d: bias " + shape_str(bias->shape) + " incompatible with kernel " +
                         shape_str(kernel->shape));
    }
    const int t_len = x->shape[0];
    const int center = (k_taps - 1) / 2;

    auto out = make_tensor<Real>({t_len, c_out});
    {
        const Real* xd = x->data.data();
        const Real* kd = kernel->data.data();
        const Real* bd = bias->data.data();
        Real* od = out->data.data();
        for (int t = 0; t < t_len; ++t) {
            Real* orow = od + static_cast<std::size_t>(t) * c_out;
            for (int c = 0; c < c_out; ++c) orow[c] = bd[c];
            for (int tap = 0; tap < k_taps; ++tap) {
                const int src = t + (tap - center) * dilation;
                if (src < 0 || src >= t_len) continue;
                const Real* xrow = xd + static_cast<std::size_t>(src) * c_in;
                const Real* ktap = kd + static_cast<std::size_t>(tap) * c_in * c_out;
                for (int ci = 0; ci < c_in; ++ci) {
                    const Real xv = xrow[ci];
                    const Real* krow = ktap + static_cast<std::size_t>(ci) * c_out;
                    for (int c = 0; c < c_out; ++c) orow[c] += xv * krow[c];
                }
            }
        }
    }

    detail::mark_output<Real>(tape, out, {&x, &kernel, &bias},
                              [x, kernel, bias, out, t_len, k_taps, c_in, c_out, center, dilation]() {
        const Real* g = out->grad.data();
        const Real* xd = x->data.data();
        const Real* kd = kernel->data.data();
        for (int t = 0; t < t_len; ++t) {
            const Real* grow = g + static_cast<std::size_t>(t) * c_out;
            for (int tap = 0; tap < k_taps; ++tap) {
                const int src = t + (tap - center) * dilation;
                if (src < 0 || src >= t_len) continue;
                const Real* xrow = xd + static_cast<std::size_t>(src) * c_in;
                const Real* ktap = kd + static_cast<std::size_t>(tap) * c_in * c_out;
                if (x->requires_grad) {
                    Real* gxrow = x->grad.data() + static_cast<std::size_t>(src) * c_in;
                    for (int ci = 0; ci < c_in; ++ci) {
                        const Real* krow = ktap + static_cast<std::size_t>(ci) * c_out;
                        Real acc = 0;
                        for (int c = 0; c < c_out; ++c) acc += grow[c] * krow[c];
                        gxrow[ci] += acc;
                    }
                }
                if (kernel->requires_grad) {
                    Real* gtap = kernel->grad.data() + static_cast<std::size_t>(tap) * c_in * c_out;
                    for (int ci = 0; ci < c_in; ++ci) {
                        const Real xv = xrow[ci];
                        Real* gkrow = gtap + static_cast<std::size_t>(ci) * c_out;
                        for (int c = 0; c < c_out; ++c) gkrow[c] += xv * grow[c];
                    }
                }
            }
            if (bias->requires_grad) {
                Real* gb = bias->grad.data();
                for (int c = 0; c < c_out; ++c) gb[c] += grow[c];
            }
        }
    });
    return out;
}

template <typename Real>
TensorPtr<Real> relu(Tape<Real>* tape, const TensorPtr<Real>& x) {
    auto out = make_tensor<Real>(x->shape);
    const int n = x->size();
    for (int i = 0; i < n; ++i) out->data[i] = x->data[i] > Real(0) ? x->data[i] : Real(0);
    detail::mark_output<Real>(tape, out, {&x}, [x, out, n]() {
        if (!x->requires_grad) return;
        // subgradient at 0 is 0
        for (int i = 0; i < n; ++i) {
            if (x->data[i] > Real(0)) x->grad[i] += out->grad[i];
        }
    });
    return out;
}

namespace detail {

template <typename Real>
void check_rowwise_input(const TensorPtr<Real>& x, const char* op) {
    if (x->shape.empty() || x->shape.size() > 2) {
        throw ShapeError(std::string(op) + ": input must be 1-D or 2-D, got " + shape_str(x->shape));
    }
}

}  // namespace detail

// Row-wise softmax with max-subtraction stabilization.
template <typename Real>
TensorPtr<Real> softmax_rows(Tape<Real>* tape, const TensorPtr<Real>& x) {
    detail::check_rowwise_input(x, "softmax_rows");
    const int rows = x->rows();
    const int cols = x->cols();
    auto out = make_tensor<Real>(x->shape);
    for (int r = 0; r < rows; ++r) {
        const Real* xrow = x->data.data() + static_cast<std::size_t>(r) * cols;
        Real* orow = out->data.data() + static_cast<std::size_t>(r) * cols;
        Real mx = xrow[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xrow[c]);
        Real sum = 0;
        for (int c = 0; c < cols; ++c) {
            orow[c] = std::exp(xrow[c] - mx);
            sum += orow[c];
        }
        const Real inv = Real(1) / sum;
        for (int c = 0; c < cols; ++c) orow[c] *= inv;
    }
    detail::mark_output<Real>(tape, out, {&x}, [x, out, rows, cols]() {
        if (!x->requires_grad) return;
        for (int r = 0; r < rows; ++r) {
            const Real* s = out->data.data() + static_cast<std::size_t>(r) * cols;
            const Real* g = out->grad.data() + static_cast<std::size_t>(r) * cols;
            Real* gx = x->grad.data() + static_cast<std::size_t>(r) * cols;
            Real dot = 0;
            for (int c = 0; c < cols; ++c) dot += g[c] * s[c];
            for (int c = 0; c < cols; ++c) gx[c] += s[c] * (g[c] - dot);
        }
    });
    return out;
}

template <typename Real>
TensorPtr<Real> log_softmax_rows(Tape<Real>* tape, const TensorPtr<Real>& x) {
    detail::check_rowwise_input(x, "log_softmax_rows");
    const int rows = x->rows();
    const int cols = x->cols();
    auto out = make_tensor<Real>(x->shape);
    for (int r = 0; r < rows; ++r) {
        const Real* xrow = x->data.data() + static_cast<std::size_t>(r) * cols;
        Real* orow = out->data.data() + static_cast<std::size_t>(r) * cols;
        Real mx = xrow[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xrow[c]);
        Real sum = 0;
        for (int c = 0; c < cols; ++c) sum += std::exp(xrow[c] - mx);
        const Real lse = mx + std::log(sum);
        for (int c = 0; c < cols; ++c) orow[c] = xrow[c] - lse;
    }
    detail::mark_output<Real>(tape, out, {&x}, [x, out, rows, cols]() {
        if (!x->requires_grad) return;
        for (int r = 0; r < rows; ++r) {
            const Real* ls = out->data.data() + static_cast<std::size_t>(r) * cols;
            const Real* g = out->grad.data() + static_cast<std::size_t>(r) * cols;
            Real* gx = x->grad.data() + static_cast<std::size_t>(r) * cols;
            Real gsum = 0;
            for (int c = 0; c < cols; ++c) gsum += g[c];
            for (int c = 0; c < cols; ++c) gx[c] += g[c] - std::exp(ls[c]) * gsum;
        }
    });
    return out;
}

// Gradient reversal: forward is the identity, backward multiplies the
// upstream gradient by -lambda.
template <typename Real>
TensorPtr<Real> grl(Tape<Real>* tape, const TensorPtr<Real>& x, Real lambda) {
    if (lambda < Real(0)) {
        throw ConfigError("grl: lambda must be non-negative, got " + std::to_string(lambda));
    }
    auto out = make_tensor<Real>(x->shape, x->data);
    detail::mark_output<Real>(tape, out, {&x}, [x, out, lambda]() {
        if (!x->requires_grad) return;
        const Real factor = -lambda;
        const int n = x->size();
        for (int i = 0; i < n; ++i) x->grad[i] += factor * out->grad[i];
    });
    return out;
}

// out[d] = (1/T) * sum_j w[j] * f[j,d]. The caller supplies the full weight
// vector, including any residual offset.
template <typename Real>
TensorPtr<Real> weighted_temporal_pool(Tape<Real>* tape, const TensorPtr<Real>& f, const TensorPtr<Real>& w) {
    if (f->shape.size() != 2) {
        throw ShapeError("weighted_temporal_pool: features must be 2-D, got " + shape_str(f->shape));
    }
    const int t_len = f->shape[0];
    const int dim = f->shape[1];
    if (t_len < 1) throw DataError("weighted_temporal_pool: empty sequence");
    if (w->shape.size() != 1 || w->shape[0] != t_len) {
        throw ShapeError("weighted_temporal_pool: weights " + shape_str(w->shape) +
                         " incompatible with features " + shape_str(f->shape));
    }
    auto out = make_tensor<Real>({dim});
    const Real inv_t = Real(1) / static_cast<Real>(t_len);
    for (int j = 0; j < t_len; ++j) {
        const Real wj = w->data[j] * inv_t;
        const Real* frow = f->data.data() + static_cast<std::size_t>(j) * dim;
        for (int d = 0; d < dim; ++d) out->data[d] += wj * frow[d];
    }
    detail::mark_output<Real>(tape, out, {&f, &w}, [f, w, out, t_len, dim, inv_t]() {
        const Real* g = out->grad.data();
        for (int j = 0; j < t_len; ++j) {
            const Real* frow = f->data.data() + static_cast<std::size_t>(j) * dim;
            if (f->requires_grad) {
                const Real wj = w->data[j] * inv_t;
                Real* gfrow = f->grad.data() + static_cast<std::size_t>(j) * dim;
                for (int d = 0; d < dim; ++d) gfrow[d] += wj * g[d];
            }
            if (w->requires_grad) {
                Real acc = 0;
                for (int d = 0; d < dim; ++d) acc += g[d] * frow[d];
                w->grad[j] += acc * inv_t;
            }
        }
    });
    return out;
}

template <typename Real>
TensorPtr<Real> add(Tape<Real>* tape, const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    if (a->shape != b->shape) {
        throw ShapeError("add: shapes " + shape_str(a->shape) + " and " + shape_str(b->shape) + " differ");
    }
    auto out = make_tensor<Real>(a->shape);
    const int n = a->size();
    for (int i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
    detail::mark_output<Real>(tape, out, {&a, &b}, [a, b, out, n]() {
        if (a->requires_grad) {
            for (int i = 0; i < n; ++i) a->grad[i] += out->grad[i];
        }
        if (b->requires_grad) {
            for (int i = 0; i < n; ++i) b->grad[i] += out->grad[i];
        }
    });
    return out;
}

template <typename Real>
TensorPtr<Real> mul(Tape<Real>* tape, const TensorPtr<Real>& a, const TensorPtr<Real>& b) {
    if (a->shape != b->shape) {
        throw ShapeError("mul: shapes " + shape_str(a->shape) + " and " + shape_str(b->shape) + " differ");
    }
    auto out = make_tensor<Real>(a->shape);
    const int n = a->size();
    for (int i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
    detail::mark_output<Real>(tape, out, {&a, &b}, [a, b, out, n]() {
        if (a->requires_grad) {
            for (int i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->data[i];
        }
        if (b->requires_grad) {
            for (int i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->data[i];
        }
    });
    return out;
}

template <typename Real>
TensorPtr<Real> scale(Tape<Real>* tape, const TensorPtr<Real>& x, Real c) {
    auto out = make_tensor<Real>(x->shape);
    const int n = x->size();
    for (int i = 0; i < n; ++i) out->data[i] = x->data[i] * c;
    detail::mark_output<Real>(tape, out, {&x}, [x, out, c, n]() {
        if (!x->requires_grad) return;
        for (int i = 0; i < n; ++i) x->grad[i] += c * out->grad[i];
    });
    return out;
}

template <typename Real>
TensorPtr<Real> add_const(Tape<Real>* tape, const TensorPtr<Real>& x, Real c) {
    auto out = make_tensor<Real>(x->shape);
    const int n = x->size();
    for (int i = 0; i < n; ++i) out->data[i] = x->data[i] + c;
    detail::mark_output<Real>(tape, out, {&x}, [x, out, n]() {
        if (!x->requires_grad) return;
        for (int i = 0; i < n; ++i) x->grad[i] += out->grad[i];
    });
    return out;
}

template <typename Real>
TensorPtr<Real> sum(Tape<Real>* tape, const TensorPtr<Real>& x) {
    auto out = make_tensor<Real>({1});
    Real acc = 0;
    const int n = x->size();
    for (int i = 0; i < n; ++i) acc += x->data[i];
    out->data[0] = acc;
    detail::mark_output<Real>(tape, out, {&x}, [x, out, n]() {
        if (!x->requires_grad) return;
        const Real g = out->grad[0];
        for (int i = 0; i < n; ++i) x->grad[i] += g;
    });
    return out;
}

template <typename Real>
TensorPtr<Real> mean_all(Tape<Real>* tape, const TensorPtr<Real>& x) {
    return scale(tape, sum(tape, x), Real(1) / static_cast<Real>(x->size()));
}

// Per-row Shannon entropy (natural log) of a matrix of distributions, with
// the 0*log(0) = 0 convention. Output has one entry per row.
template <typename Real>
TensorPtr<Real> row_entropy(Tape<Real>* tape, const TensorPtr<Real>& p) {
    if (p->shape.size() != 2) {
        throw ShapeError("row_entropy: input must be 2-D, got " + shape_str(p->shape));
    }
    const int rows = p->shape[0];
    const int cols = p->shape[1];
    auto out = make_tensor<Real>({rows});
    for (int r = 0; r < rows; ++r) {
        const Real* prow = p->data.data() + static_cast<std::size_t>(r) * cols;
        Real h = 0;
        for (int c = 0; c < cols; ++c) {
            if (prow[c] > Real(0)) h -= prow[c] * std::log(prow[c]);
        }
        out->data[r] = h;
    }
    detail::mark_output<Real>(tape, out, {&p}, [p, out, rows, cols]() {
        if (!p->requires_grad) return;
        for (int r = 0; r < rows; ++r) {
            const Real g = out->grad[r];
            const Real* prow = p->data.data() + static_cast<std::size_t>(r) * cols;
            Real* grow = p->grad.data() + static_cast<std::size_t>(r) * cols;
            for (int c = 0; c < cols; ++c) {
                if (prow[c] > Real(0)) grow[c] -= g * (std::log(prow[c]) + Real(1));
            }
        }
    });
    return out;
}

// Mean negative log-likelihood over rows of a log-probability matrix.
template <typename Real>
TensorPtr<Real> nll_rows(Tape<Real>* tape, const TensorPtr<Real>& log_probs, const std::vector<int>& labels) {
    detail::check_rowwise_input(log_probs, "nll_rows");
    const int rows = log_probs->rows();
    const int cols = log_probs->cols();
    if (static_cast<int>(labels.size()) != rows) {
        throw ShapeError("nll_rows: " + std::to_string(labels.size()) + " labels for " + std::to_string(rows) +
                         " rows");
    }
    for (int r = 0; r < rows; ++r) {
        if (labels[r] < 0 || labels[r] >= cols) {
            throw DataError("nll_rows: label " + std::to_string(labels[r]) + " out of range [0, " +
                            std::to_string(cols) + ") at frame " + std::to_string(r));
        }
    }
    auto out = make_tensor<Real>({1});
    Real acc = 0;
    for (int r = 0; r < rows; ++r) acc -= log_probs->data[static_cast<std::size_t>(r) * cols + labels[r]];
    out->data[0] = acc / static_cast<Real>(rows);
    detail::mark_output<Real>(tape, out, {&log_probs}, [log_probs, out, labels, rows, cols]() {
        if (!log_probs->requires_grad) return;
        const Real g = out->grad[0] / static_cast<Real>(rows);
        for (int r = 0; r < rows; ++r) {
            log_probs->grad[static_cast<std::size_t>(r) * cols + labels[r]] -= g;
        }
    });
    return out;
}

// Truncated MSE over adjacent-frame log-probability differences:
// mean over (t >= 1, c) of min(|lp[t,c] - lp[t-1,c]|, clamp)^2.
// Saturated differences contribute a constant, so their gradient is zero.
template <typename Real>
TensorPtr<Real> tmse(Tape<Real>* tape, const TensorPtr<Real>& log_probs, Real clamp) {
    if (log_probs->shape.size() != 2) {
        throw ShapeError("tmse: input must be 2-D, got " + shape_str(log_probs->shape));
    }
    if (clamp < Real(0)) throw ConfigError("tmse: clamp must be non-negative, got " + std::to_string(clamp));
    const int rows = log_probs->shape[0];
    const int cols = log_probs->shape[1];
    if (rows == 1) return make_scalar<Real>(0);

    auto out = make_tensor<Real>({1});
    const Real inv_n = Real(1) / (static_cast<Real>(rows - 1) * static_cast<Real>(cols));
    Real acc = 0;
    for (int t = 1; t < rows; ++t) {
        const Real* cur = log_probs->data.data() + static_cast<std::size_t>(t) * cols;
        const Real* prev = cur - cols;
        for (int c = 0; c < cols; ++c) {
            const Real d = std::min(std::abs(cur[c] - prev[c]), clamp);
            acc += d * d;
        }
    }
    out->data[0] = acc * inv_n;
    detail::mark_output<Real>(tape, out, {&log_probs}, [log_probs, out, rows, cols, clamp, inv_n]() {
        if (!log_probs->requires_grad) return;
        const Real g = out->grad[0] * inv_n;
        for (int t = 1; t < rows; ++t) {
            const Real* cur = log_probs->data.data() + static_cast<std::size_t>(t) * cols;
            const Real* prev = cur - cols;
            Real* gcur = log_probs->grad.data() + static_cast<std::size_t>(t) * cols;
            Real* gprev = gcur - cols;
            for (int c = 0; c < cols; ++c) {
                const Real d = cur[c] - prev[c];
                if (std::abs(d) < clamp) {
                    const Real coef = Real(2) * d * g;
                    gcur[c] += coef;
                    gprev[c] -= coef;
                }
            }
        }
    });
    return out;
}

// Row-wise argmax with ties broken toward the lowest column index.
template <typename Real>
std::vector<int> argmax_rows(const TensorPtr<Real>& x) {
    detail::check_rowwise_input(x, "argmax_rows");
    const int rows = x->rows();
    const int cols = x->cols();
    std::vector<int> out(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) {
        const Real* xrow = x->data.data() + static_cast<std::size_t>(r) * cols;
        int best = 0;
        for (int c = 1; c < cols; ++c) {
            if (xrow[c] > xrow[best]) best = c;
        }
        out[static_cast<std::size_t>(r)] = best;
    }
    return out;
}

template <typename Real>
bool all_finite(const TensorPtr<Real>& x) {
    for (Real v : x->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace mtda
