#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "relume/common.hpp"
#include "relume/image.hpp"

namespace relume {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

inline thread_local int no_grad_depth = 0;

inline bool grad_enabled() { return no_grad_depth == 0; }

} // namespace detail

/// RAII switch that disables graph recording in its scope (inference paths).
struct NoGradGuard {
    NoGradGuard() { ++detail::no_grad_depth; }
    ~NoGradGuard() { --detail::no_grad_depth; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// Reference-counted N-d float tensor participating in a dynamic reverse-mode
/// autodiff graph. Copies share storage; detach() drops graph edges.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& s, bool requires_grad = false) {
        return filled(s, 0.0f, requires_grad);
    }

    static Tensor filled(const Shape& s, float v, bool requires_grad = false) {
        auto node = std::make_shared<detail::Node>();
        node->shape = s;
        node->value.assign(static_cast<std::size_t>(shape_numel(s)), v);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor from_vector(const Shape& s, std::vector<float> v, bool requires_grad = false) {
        require(static_cast<std::int64_t>(v.size()) == shape_numel(s),
                "Tensor::from_vector: size does not match shape " + shape_str(s));
        auto node = std::make_shared<detail::Node>();
        node->shape = s;
        node->value = std::move(v);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
    int ndim() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t numel() const { return node_->numel(); }

    float* data() { return node_->value.data(); }
    const float* data() const { return node_->value.data(); }
    std::vector<float>& values() { return node_->value; }
    const std::vector<float>& values() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    float* grad() {
        node_->ensure_grad();
        return node_->grad.data();
    }
    const std::vector<float>& grad_values() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
    }

    float item() const {
        require(numel() == 1, "item: tensor is not scalar");
        return node_->value[0];
    }

    /// Same storage, no graph edges, no grad requirement.
    Tensor detach() const {
        auto node = std::make_shared<detail::Node>();
        node->shape = node_->shape;
        node->value = node_->value; // copy keeps the detached view immutable
        node->requires_grad = false;
        return Tensor(std::move(node));
    }

    std::shared_ptr<detail::Node> node() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

namespace detail {

/// Builds the result node of an op; wires parents and the backward closure
/// only if recording is active and some parent needs gradients.
inline Tensor make_op_result(Shape shape, std::vector<float> value,
                             std::vector<std::shared_ptr<Node>> parents,
                             const std::function<std::function<void()>(Node*)>& make_backward) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    if (grad_enabled())
        for (const auto& p : parents)
            if (p->requires_grad) { needs = true; break; }
    if (needs) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = make_backward(node.get());
    }
    return Tensor(std::move(node));
}

} // namespace detail

/// Reverse-mode sweep from a scalar root. Gradients accumulate into every
/// node on a requires_grad path; leaves keep theirs for the optimizer.
inline void backward(const Tensor& root) {
    require(root.numel() == 1, "backward: root must be scalar");
    auto* start = root.node().get();
    if (!start->requires_grad) return;

    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(start, 0);
    seen.insert(start);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    start->ensure_grad();
    start->grad[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<float> out(a.values());
    const float* bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result(a.shape(), std::move(out), {pa, pb}, [pa, pb](detail::Node* self) {
        return [self, pa, pb]() {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i) pa->grad[i] += self->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i) pb->grad[i] += self->grad[i];
            }
        };
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<float> out(a.values());
    const float* bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result(a.shape(), std::move(out), {pa, pb}, [pa, pb](detail::Node* self) {
        return [self, pa, pb]() {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i) pa->grad[i] += self->grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i) pb->grad[i] -= self->grad[i];
            }
        };
    });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<float> out(a.values());
    const float* bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
    auto pa = a.node(), pb = b.node();
    return detail::make_op_result(a.shape(), std::move(out), {pa, pb}, [pa, pb](detail::Node* self) {
        return [self, pa, pb]() {
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i)
                    pa->grad[i] += self->grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self->grad.size(); ++i)
                    pb->grad[i] += self->grad[i] * pa->value[i];
            }
        };
    });
}

/// y = scale * x + shift. Covers the [0,1] <-> [-1,1] domain maps.
inline Tensor affine(const Tensor& x, float scale, float shift) {
    std::vector<float> out(x.values());
    for (float& v : out) v = scale * v + shift;
    auto px = x.node();
    return detail::make_op_result(x.shape(), std::move(out), {px}, [px, scale](detail::Node* self) {
        return [self, px, scale]() {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) px->grad[i] += scale * self->grad[i];
        };
    });
}

inline Tensor mul_scalar(const Tensor& x, float s) { return affine(x, s, 0.0f); }
inline Tensor to_network(const Tensor& x01) { return affine(x01, 2.0f, -1.0f); }
inline Tensor from_network(const Tensor& xnet) { return affine(xnet, 0.5f, 0.5f); }

inline Tensor abs_op(const Tensor& x) {
    std::vector<float> out(x.values());
    for (float& v : out) v = std::fabs(v);
    auto px = x.node();
    return detail::make_op_result(x.shape(), std::move(out), {px}, [px](detail::Node* self) {
        return [self, px]() {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                float xv = px->value[i];
                float s = xv > 0.0f ? 1.0f : (xv < 0.0f ? -1.0f : 0.0f);
                px->grad[i] += s * self->grad[i];
            }
        };
    });
}

inline Tensor relu(const Tensor& x) {
    std::vector<float> out(x.values());
    for (float& v : out) v = v > 0.0f ? v : 0.0f;
    auto px = x.node();
    return detail::make_op_result(x.shape(), std::move(out), {px}, [px](detail::Node* self) {
        return [self, px]() {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                if (px->value[i] > 0.0f) px->grad[i] += self->grad[i];
        };
    });
}

inline Tensor leaky_relu(const Tensor& x, float slope = 0.2f) {
    std::vector<float> out(x.values());
    for (float& v : out) v = v > 0.0f ? v : slope * v;
    auto px = x.node();
    return detail::make_op_result(x.shape(), std::move(out), {px}, [px, slope](detail::Node* self) {
        return [self, px, slope]() {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i)
                px->grad[i] += (px->value[i] > 0.0f ? 1.0f : slope) * self->grad[i];
        };
    });
}

inline Tensor tanh_act(const Tensor& x) {
    std::vector<float> out(x.values());
    for (float& v : out) v = std::tanh(v);
    auto px = x.node();
    return detail::make_op_result(x.shape(), std::move(out), {px}, [px](detail::Node* self) {
        return [self, px]() {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                float y = self->value[i];
                px->grad[i] += (1.0f - y * y) * self->grad[i];
            }
        };
    });
}

inline Tensor sigmoid_act(const Tensor& x) {
    std::vector<float> out(x.values());
    for (float& v : out) v = 1.0f / (1.0f + std::exp(-v));
    auto px = x.node();
    return detail::make_op_result(x.shape(), std::move(out), {px}, [px](detail::Node* self) {
        return [self, px]() {
            if (!px->requires_grad) return;
            px->ensure_grad();
            for (std::size_t i = 0; i < self->grad.size(); ++i) {
                float y = self->value[i];
                px->grad[i] += y * (1.0f - y) * self->grad[i];
            }
        };
    });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

/// Mean over all elements; accumulates in double for stable small losses.
inline Tensor mean_all(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.values()) acc += v;
    double n = static_cast<double>(x.numel());
    std::vector<float> out{static_cast<float>(acc / n)};
    auto px = x.node();
    return detail::make_op_result({1}, std::move(out), {px}, [px, n](detail::Node* self) {
        return [self, px, n]() {
            if (!px->requires_grad) return;
            px->ensure_grad();
            float g = self->grad[0] / static_cast<float>(n);
            for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += g;
        };
    });
}

inline Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.values()) acc += v;
    std::vector<float> out{static_cast<float>(acc)};
    auto px = x.node();
    return detail::make_op_result({1}, std::move(out), {px}, [px](detail::Node* self) {
        return [self, px]() {
            if (!px->requires_grad) return;
            px->ensure_grad();
            float g = self->grad[0];
            for (std::size_t i = 0; i < px->grad.size(); ++i) px->grad[i] += g;
        };
    });
}

// common loss building blocks

inline Tensor l1_distance(const Tensor& a, const Tensor& b) {
    return mean_all(abs_op(sub(a, b)));
}

inline Tensor mse_distance(const Tensor& a, const Tensor& b) {
    Tensor d = sub(a, b);
    return mean_all(mul(d, d));
}

/// Mean of (x - target)^2 against a constant target, the LSGAN objective.
inline Tensor mse_to_value(const Tensor& x, float target) {
    Tensor d = affine(x, 1.0f, -target);
    return mean_all(mul(d, d));
}

// ---------------------------------------------------------------------------
// image <-> tensor bridges (no gradient tracking at the boundary)
// ---------------------------------------------------------------------------

/// Channels-last Image to a [1,C,H,W] tensor.
inline Tensor image_to_tensor(const Image& img) {
    Shape s{1, img.channels, img.height, img.width};
    std::vector<float> v(static_cast<std::size_t>(shape_numel(s)));
    std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                v[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * img.width + x] =
                    img.at(y, x, c);
    return Tensor::from_vector(s, std::move(v));
}

/// Stacks equally shaped images into an [N,C,H,W] batch.
inline Tensor images_to_batch(const std::vector<Image>& images) {
    require(!images.empty(), "images_to_batch: empty batch");
    const Image& first = images[0];
    for (const Image& im : images)
        require(im.same_shape(first), "images_to_batch: inconsistent shapes");
    Shape s{static_cast<int>(images.size()), first.channels, first.height, first.width};
    std::vector<float> v(static_cast<std::size_t>(shape_numel(s)));
    std::size_t per = static_cast<std::size_t>(first.channels) * first.height * first.width;
    std::size_t plane = static_cast<std::size_t>(first.height) * first.width;
    for (std::size_t n = 0; n < images.size(); ++n)
        for (int y = 0; y < first.height; ++y)
            for (int x = 0; x < first.width; ++x)
                for (int c = 0; c < first.channels; ++c)
                    v[n * per + static_cast<std::size_t>(c) * plane +
                      static_cast<std::size_t>(y) * first.width + x] = images[n].at(y, x, c);
    return Tensor::from_vector(s, std::move(v));
}

/// Extracts batch element n as a channels-last Image.
inline Image tensor_to_image(const Tensor& t, int n = 0) {
    require(t.ndim() == 4, "tensor_to_image: expected NCHW tensor");
    require(n >= 0 && n < t.dim(0), "tensor_to_image: batch index out of range");
    int C = t.dim(1), H = t.dim(2), W = t.dim(3);
    Image img(H, W, C);
    std::size_t per = static_cast<std::size_t>(C) * H * W;
    std::size_t plane = static_cast<std::size_t>(H) * W;
    const float* d = t.data() + static_cast<std::size_t>(n) * per;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < C; ++c)
                img.at(y, x, c) = d[static_cast<std::size_t>(c) * plane +
                                    static_cast<std::size_t>(y) * W + x];
    return img;
}

inline bool all_finite(const Tensor& t) {
    for (float v : t.values())
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace relume
