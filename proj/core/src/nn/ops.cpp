#include "thz/nn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace thz::nn {

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

template <typename T>
std::vector<Node<T>*> topo_order(const Var<T>& root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // children before parents
}

template <typename T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (!g_grad_enabled) return node;
  for (const auto& in : inputs) {
    if (in && in->requires_grad) node->requires_grad = true;
  }
  if (node->requires_grad) node->inputs.assign(inputs.begin(), inputs.end());
  return node;
}

template <typename T>
bool wants(const Var<T>& v) {
  return v && v->requires_grad;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* col) {
  const long lh = static_cast<long>(h), lw = static_cast<long>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = x + c * h * w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
          T* dst = row + oh * wo;
          if (ih < 0 || ih >= lh) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + ih * lw;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
            dst[ow] = (iw < 0 || iw >= lw) ? T(0) : src[iw];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t ho, std::size_t wo, T* x) {
  const long lh = static_cast<long>(h), lw = static_cast<long>(w);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = x + c * h * w;
    for (std::size_t ki = 0; ki < k; ++ki) {
      for (std::size_t kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * ho * wo;
        for (std::size_t oh = 0; oh < ho; ++oh) {
          const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
          if (ih < 0 || ih >= lh) continue;
          T* dst = plane + ih * lw;
          const T* src = row + oh * wo;
          for (std::size_t ow = 0; ow < wo; ++ow) {
            const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
            if (iw >= 0 && iw < lw) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

struct Bilinear1D {
  std::vector<std::size_t> i0, i1;
  std::vector<double> w0, w1;
};

Bilinear1D bilinear_table(std::size_t in, std::size_t out) {
  Bilinear1D t;
  t.i0.resize(out);
  t.i1.resize(out);
  t.w0.resize(out);
  t.w1.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = std::max(0.0, (static_cast<double>(o) + 0.5) * scale - 0.5);
    const auto a = std::min(static_cast<std::size_t>(src), in - 1);
    const double frac = src - static_cast<double>(a);
    t.i0[o] = a;
    t.i1[o] = std::min(a + 1, in - 1);
    t.w1[o] = frac;
    t.w0[o] = 1.0 - frac;
  }
  return t;
}

}  // namespace

template <typename T>
void backward(const Var<T>& root) {
  if (!root->requires_grad) throw DomainError("backward: output does not depend on any parameter");
  if (root->value.numel() != 1) throw ShapeError("backward: output must be a scalar");
  const auto order = topo_order(root);
  root->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (!node->backward_fn || !node->has_grad()) continue;
    node->backward_fn();
    // Interior gradients are no longer needed once propagated.
    if (node != root.get()) std::vector<T>().swap(node->grad);
  }
}

template <typename T>
void release_graph(const Var<T>& root) {
  // Owning references: clearing a node's inputs may drop the last other owner.
  std::vector<Var<T>> stack{root};
  while (!stack.empty()) {
    Var<T> node = std::move(stack.back());
    stack.pop_back();
    for (auto& in : node->inputs) {
      if (in && !in->inputs.empty()) stack.push_back(in);
    }
    node->inputs.clear();
    node->backward_fn = nullptr;
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, std::size_t stride, std::size_t pad) {
  const Shape4 xs = x->value.shape;
  const Shape4 ws = w->value.shape;
  require(ws.c == xs.c, "conv2d: input has " + std::to_string(xs.c) + " channels, kernel expects " +
                            std::to_string(ws.c));
  require(ws.h == ws.w, "conv2d: kernel must be square");
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(xs.h + 2 * pad >= ws.h && xs.w + 2 * pad >= ws.w, "conv2d: kernel larger than padded input");
  if (bias) require(bias->value.numel() == ws.n, "conv2d: bias length must equal output channels");
  const std::size_t k = ws.h, out_c = ws.n, in_c = xs.c;
  const std::size_t ho = (xs.h + 2 * pad - k) / stride + 1;
  const std::size_t wo = (xs.w + 2 * pad - k) / stride + 1;
  const std::size_t p = ho * wo, r = in_c * k * k;
  const bool direct = k == 1 && stride == 1 && pad == 0;

  Tensor<T> out(Shape4{xs.n, out_c, ho, wo});
  std::vector<T> col(direct ? 0 : r * p);
  Eigen::Map<const RowMat<T>> wm(w->value.data.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(r));
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* src = x->value.sample(n);
    if (!direct) {
      im2col(src, in_c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
      src = col.data();
    }
    Eigen::Map<const RowMat<T>> cm(src, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p));
    Eigen::Map<RowMat<T>> om(out.sample(n), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(p));
    om.noalias() = wm * cm;
    if (bias) {
      for (std::size_t o = 0; o < out_c; ++o) om.row(static_cast<Eigen::Index>(o)).array() += bias->value.data[o];
    }
  }

  auto res = make_result(std::move(out), {x, w, bias});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, x, w, bias, stride, pad, k, ho, wo, p, r, out_c, in_c, direct]() {
    const Shape4 xs = x->value.shape;
    Eigen::Map<const RowMat<T>> wm(w->value.data.data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(r));
    std::vector<T> col(direct ? 0 : r * p);
    std::vector<T> dcol(direct ? 0 : r * p);
    for (std::size_t n = 0; n < xs.n; ++n) {
      Eigen::Map<const RowMat<T>> gm(self->grad.data() + n * out_c * p, static_cast<Eigen::Index>(out_c),
                                     static_cast<Eigen::Index>(p));
      if (wants(w)) {
        const T* src = x->value.sample(n);
        if (!direct) {
          im2col(src, in_c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
          src = col.data();
        }
        Eigen::Map<const RowMat<T>> cm(src, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p));
        Eigen::Map<RowMat<T>> dw(w->grad_buffer().data(), static_cast<Eigen::Index>(out_c), static_cast<Eigen::Index>(r));
        dw.noalias() += gm * cm.transpose();
      }
      if (wants(bias)) {
        auto& db = bias->grad_buffer();
        // Plain loop: Eigen's vectorised sum peels by pointer alignment, which breaks bitwise reproducibility.
        for (std::size_t o = 0; o < out_c; ++o) {
          const T* g = self->grad.data() + (n * out_c + o) * p;
          T s = T(0);
          for (std::size_t i = 0; i < p; ++i) s += g[i];
          db[o] += s;
        }
      }
      if (wants(x)) {
        T* dx = x->grad_buffer().data() + n * in_c * xs.plane();
        if (direct) {
          Eigen::Map<RowMat<T>> dxm(dx, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p));
          dxm.noalias() += wm.transpose() * gm;
        } else {
          Eigen::Map<RowMat<T>> dcm(dcol.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(p));
          dcm.noalias() = wm.transpose() * gm;
          col2im(dcol.data(), in_c, xs.h, xs.w, k, stride, pad, ho, wo, dx);
        }
      }
    }
  };
  return res;
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, const BatchNormState<T>& state,
                  bool training) {
  const Shape4 s = x->value.shape;
  require(gamma->value.numel() == s.c && beta->value.numel() == s.c,
          "batch_norm: parameters must have one entry per channel (" + std::to_string(s.c) + ")");
  const std::size_t m = s.n * s.plane();
  auto xhat = std::make_shared<std::vector<T>>(x->value.numel());
  std::vector<T> inv_std(s.c);
  Tensor<T> out(s);
  for (std::size_t c = 0; c < s.c; ++c) {
    double mean = 0.0, var = 0.0;
    if (training) {
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x->value.channel(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) mean += p[i];
      }
      mean /= static_cast<double>(m);
      for (std::size_t n = 0; n < s.n; ++n) {
        const T* p = x->value.channel(n, c);
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= static_cast<double>(m);
      if (state.running_mean && state.running_var && grad_enabled()) {
        const double unbiased = m > 1 ? var * static_cast<double>(m) / static_cast<double>(m - 1) : var;
        auto& rm = state.running_mean->data[c];
        auto& rv = state.running_var->data[c];
        rm = static_cast<T>((1.0 - state.momentum) * rm + state.momentum * mean);
        rv = static_cast<T>((1.0 - state.momentum) * rv + state.momentum * unbiased);
      }
    } else {
      if (!state.running_mean || !state.running_var) throw ConfigError("batch_norm: eval mode needs running statistics");
      mean = state.running_mean->data[c];
      var = state.running_var->data[c];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + state.eps));
    inv_std[c] = inv;
    const T g = gamma->value.data[c], b = beta->value.data[c];
    const T mu = static_cast<T>(mean);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* p = x->value.channel(n, c);
      T* xh = xhat->data() + (n * s.c + c) * s.plane();
      T* o = out.channel(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        xh[i] = (p[i] - mu) * inv;
        o[i] = g * xh[i] + b;
      }
    }
  }
  auto res = make_result(std::move(out), {x, gamma, beta});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, x, gamma, beta, xhat, inv_std, training, s, m]() {
    for (std::size_t c = 0; c < s.c; ++c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t off = (n * s.c + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) {
          sum_dy += self->grad[off + i];
          sum_dy_xhat += self->grad[off + i] * (*xhat)[off + i];
        }
      }
      if (wants(gamma)) gamma->grad_buffer()[c] += sum_dy_xhat;
      if (wants(beta)) beta->grad_buffer()[c] += sum_dy;
      if (!wants(x)) continue;
      auto& dx = x->grad_buffer();
      const T g = gamma->value.data[c];
      const T scale = g * inv_std[c];
      const T mf = static_cast<T>(m);
      for (std::size_t n = 0; n < s.n; ++n) {
        const std::size_t off = (n * s.c + c) * s.plane();
        for (std::size_t i = 0; i < s.plane(); ++i) {
          if (training) {
            dx[off + i] += scale / mf * (mf * self->grad[off + i] - sum_dy - (*xhat)[off + i] * sum_dy_xhat);
          } else {
            dx[off + i] += scale * self->grad[off + i];
          }
        }
      }
    }
  };
  return res;
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out(x->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::max(T(0), x->value.data[i]);
  auto res = make_result(std::move(out), {x});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, x]() {
    auto& dx = x->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      if (self->value.data[i] > T(0)) dx[i] += self->grad[i];
    }
  };
  return res;
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out(x->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = T(1) / (T(1) + std::exp(-x->value.data[i]));
  auto res = make_result(std::move(out), {x});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, x]() {
    auto& dx = x->grad_buffer();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T y = self->value.data[i];
      dx[i] += self->grad[i] * y * (T(1) - y);
    }
  };
  return res;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require(a->value.shape == b->value.shape,
          "add: shape mismatch " + a->value.shape.str() + " vs " + b->value.shape.str());
  Tensor<T> out(a->value.shape);
  for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = a->value.data[i] + b->value.data[i];
  auto res = make_result(std::move(out), {a, b});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, a, b]() {
    for (const auto* v : {&a, &b}) {
      if (!wants(*v)) continue;
      auto& d = (*v)->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += self->grad[i];
    }
  };
  return res;
}

template <typename T>
Var<T> channel_scale(const Var<T>& x, const Var<T>& w) {
  const Shape4 s = x->value.shape;
  require(w->value.shape == (Shape4{s.n, s.c, 1, 1}), "channel_scale: weights must be " + Shape4{s.n, s.c, 1, 1}.str());
  Tensor<T> out(s);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T g = w->value.data[n * s.c + c];
      const T* p = x->value.channel(n, c);
      T* o = out.channel(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) o[i] = g * p[i];
    }
  }
  auto res = make_result(std::move(out), {x, w});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, x, w, s]() {
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const std::size_t off = (n * s.c + c) * s.plane();
        const T* g = self->grad.data() + off;
        if (wants(w)) {
          T acc = 0;
          const T* p = x->value.data.data() + off;
          for (std::size_t i = 0; i < s.plane(); ++i) acc += g[i] * p[i];
          w->grad_buffer()[n * s.c + c] += acc;
        }
        if (wants(x)) {
          const T wc = w->value.data[n * s.c + c];
          T* dx = x->grad_buffer().data() + off;
          for (std::size_t i = 0; i < s.plane(); ++i) dx[i] += wc * g[i];
        }
      }
    }
  };
  return res;
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  const Shape4 s = x->value.shape;
  Tensor<T> out(Shape4{s.n, s.c, 1, 1});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      // Accumulate offsets from the first element so a constant plane is exact.
      const T* p = x->value.channel(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += static_cast<double>(p[i]) - static_cast<double>(p[0]);
      out.data[n * s.c + c] = static_cast<T>(static_cast<double>(p[0]) + acc / static_cast<double>(s.plane()));
    }
  }
  auto res = make_result(std::move(out), {x});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, x, s]() {
    auto& dx = x->grad_buffer();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      const T g = self->grad[nc] / static_cast<T>(s.plane());
      for (std::size_t i = 0; i < s.plane(); ++i) dx[nc * s.plane() + i] += g;
    }
  };
  return res;
}

template <typename T>
Var<T> avg_pool2(const Var<T>& x) {
  const Shape4 s = x->value.shape;
  require(s.h % 2 == 0 && s.w % 2 == 0, "avg_pool2: spatial size " + s.str() + " must be even");
  const std::size_t ho = s.h / 2, wo = s.w / 2;
  Tensor<T> out(Shape4{s.n, s.c, ho, wo});
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = x->value.data.data() + nc * s.plane();
    T* o = out.data.data() + nc * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      for (std::size_t j = 0; j < wo; ++j) {
        o[i * wo + j] = T(0.25) * (p[2 * i * s.w + 2 * j] + p[2 * i * s.w + 2 * j + 1] + p[(2 * i + 1) * s.w + 2 * j] +
                                   p[(2 * i + 1) * s.w + 2 * j + 1]);
      }
    }
  }
  auto res = make_result(std::move(out), {x});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, x, s, ho, wo]() {
    auto& dx = x->grad_buffer();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      T* d = dx.data() + nc * s.plane();
      const T* g = self->grad.data() + nc * ho * wo;
      for (std::size_t i = 0; i < ho; ++i) {
        for (std::size_t j = 0; j < wo; ++j) {
          const T v = T(0.25) * g[i * wo + j];
          d[2 * i * s.w + 2 * j] += v;
          d[2 * i * s.w + 2 * j + 1] += v;
          d[(2 * i + 1) * s.w + 2 * j] += v;
          d[(2 * i + 1) * s.w + 2 * j + 1] += v;
        }
      }
    }
  };
  return res;
}

template <typename T>
Var<T> upsample_bilinear2(const Var<T>& x) {
  const Shape4 s = x->value.shape;
  const std::size_t ho = 2 * s.h, wo = 2 * s.w;
  const auto rt = bilinear_table(s.h, ho);
  const auto ct = bilinear_table(s.w, wo);
  Tensor<T> out(Shape4{s.n, s.c, ho, wo});
  for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = x->value.data.data() + nc * s.plane();
    T* o = out.data.data() + nc * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      const T* r0 = p + rt.i0[i] * s.w;
      const T* r1 = p + rt.i1[i] * s.w;
      const T a0 = static_cast<T>(rt.w0[i]), a1 = static_cast<T>(rt.w1[i]);
      for (std::size_t j = 0; j < wo; ++j) {
        const T b0 = static_cast<T>(ct.w0[j]), b1 = static_cast<T>(ct.w1[j]);
        o[i * wo + j] = a0 * (b0 * r0[ct.i0[j]] + b1 * r0[ct.i1[j]]) + a1 * (b0 * r1[ct.i0[j]] + b1 * r1[ct.i1[j]]);
      }
    }
  }
  auto res = make_result(std::move(out), {x});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, x, s, ho, wo, rt, ct]() {
    auto& dx = x->grad_buffer();
    for (std::size_t nc = 0; nc < s.n * s.c; ++nc) {
      T* d = dx.data() + nc * s.plane();
      const T* g = self->grad.data() + nc * ho * wo;
      for (std::size_t i = 0; i < ho; ++i) {
        T* r0 = d + rt.i0[i] * s.w;
        T* r1 = d + rt.i1[i] * s.w;
        const T a0 = static_cast<T>(rt.w0[i]), a1 = static_cast<T>(rt.w1[i]);
        for (std::size_t j = 0; j < wo; ++j) {
          const T b0 = static_cast<T>(ct.w0[j]), b1 = static_cast<T>(ct.w1[j]);
          const T v = g[i * wo + j];
          r0[ct.i0[j]] += a0 * b0 * v;
          r0[ct.i1[j]] += a0 * b1 * v;
          r1[ct.i0[j]] += a1 * b0 * v;
          r1[ct.i1[j]] += a1 * b1 * v;
        }
      }
    }
  };
  return res;
}

template <typename T>
Var<T> concat_channels(std::span<const Var<T>> parts) {
  require(!parts.empty(), "concat_channels: nothing to concatenate");
  const Shape4 s0 = parts[0]->value.shape;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape4 s = p->value.shape;
    require(s.n == s0.n && s.h == s0.h && s.w == s0.w,
            "concat_channels: shape mismatch " + s.str() + " vs " + s0.str());
    total += s.c;
  }
  Tensor<T> out(Shape4{s0.n, total, s0.h, s0.w});
  for (std::size_t n = 0; n < s0.n; ++n) {
    T* dst = out.sample(n);
    for (const auto& p : parts) {
      const std::size_t len = p->value.shape.c * s0.plane();
      std::copy(p->value.sample(n), p->value.sample(n) + len, dst);
      dst += len;
    }
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(out);
  if (!grad_enabled()) return node;
  for (const auto& p : parts) node->requires_grad = node->requires_grad || p->requires_grad;
  if (!node->requires_grad) return node;
  node->inputs.assign(parts.begin(), parts.end());
  Node<T>* self = node.get();
  std::vector<Var<T>> inputs(parts.begin(), parts.end());
  node->backward_fn = [self, inputs, s0, total]() {
    for (std::size_t n = 0; n < s0.n; ++n) {
      const T* src = self->grad.data() + n * total * s0.plane();
      for (const auto& p : inputs) {
        const std::size_t len = p->value.shape.c * s0.plane();
        if (p->requires_grad) {
          T* d = p->grad_buffer().data() + n * len;
          for (std::size_t i = 0; i < len; ++i) d[i] += src[i];
        }
        src += len;
      }
    }
  };
  return node;
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, std::size_t start, std::size_t count) {
  const Shape4 s = x->value.shape;
  require(start + count <= s.c && count > 0, "slice_channels: range exceeds " + std::to_string(s.c) + " channels");
  Tensor<T> out(Shape4{s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy(x->value.channel(n, start), x->value.channel(n, start) + count * s.plane(), out.sample(n));
  }
  auto res = make_result(std::move(out), {x});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, x, s, start, count]() {
    auto& dx = x->grad_buffer();
    for (std::size_t n = 0; n < s.n; ++n) {
      T* d = dx.data() + (n * s.c + start) * s.plane();
      const T* g = self->grad.data() + n * count * s.plane();
      for (std::size_t i = 0; i < count * s.plane(); ++i) d[i] += g[i];
    }
  };
  return res;
}

// ---------------------------------------------------------------------------
// Subspace projection and attention

template <typename T>
Var<T> orth_project(const Var<T>& basis, const Var<T>& x) {
  const Shape4 vs = basis->value.shape;
  const Shape4 xs = x->value.shape;
  require(vs.n == xs.n && vs.h == xs.h && vs.w == xs.w,
          "orth_project: basis " + vs.str() + " and input " + xs.str() + " disagree");
  const auto N = static_cast<Eigen::Index>(vs.plane());
  const auto K = static_cast<Eigen::Index>(vs.c);
  const auto C = static_cast<Eigen::Index>(xs.c);
  const double alpha = 1e-6 / static_cast<double>(vs.c);
  Tensor<T> out(xs);
  // The K x K algebra runs in double whatever T is: the relative regulariser
  // is below single-precision resolution.
  auto gram = std::make_shared<std::vector<ColMat<double>>>(vs.n);
  auto zs = std::make_shared<std::vector<ColMat<double>>>(vs.n);
  for (std::size_t n = 0; n < vs.n; ++n) {
    const ColMat<double> V = Eigen::Map<const ColMat<T>>(basis->value.sample(n), N, K).template cast<double>();
    const ColMat<double> X = Eigen::Map<const ColMat<T>>(x->value.sample(n), N, C).template cast<double>();
    ColMat<double> A = V.transpose() * V;
    const double tr = A.trace();
    if (!std::isfinite(tr)) throw NumericalError("orth_project: non-finite basis");
    if (tr == 0.0) continue;  // zero basis: projection onto {0}
    A.diagonal().array() += alpha * tr;
    Eigen::LLT<ColMat<double>> llt(A);
    if (llt.info() != Eigen::Success) throw NumericalError("orth_project: V^T V is not positive definite");
    ColMat<double> z = llt.solve(V.transpose() * X);
    if (!z.allFinite()) throw NumericalError("orth_project: projection is not finite");
    Eigen::Map<ColMat<T>> Y(out.sample(n), N, C);
    Y = (V * z).template cast<T>();
    (*gram)[n] = std::move(A);
    (*zs)[n] = std::move(z);
  }
  auto res = make_result(std::move(out), {basis, x});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, basis, x, gram, zs, N, K, C, alpha]() {
    for (std::size_t n = 0; n < basis->value.shape.n; ++n) {
      const ColMat<double>& A = (*gram)[n];
      if (A.size() == 0) continue;
      const ColMat<double>& z = (*zs)[n];
      const ColMat<double> V = Eigen::Map<const ColMat<T>>(basis->value.sample(n), N, K).template cast<double>();
      const ColMat<double> dY =
          Eigen::Map<const ColMat<T>>(self->grad.data() + n * static_cast<std::size_t>(N * C), N, C).template cast<double>();
      Eigen::LLT<ColMat<double>> llt(A);
      const ColMat<double> u = llt.solve(V.transpose() * dY);
      if (wants(x)) {
        Eigen::Map<ColMat<T>> dX(x->grad_buffer().data() + n * static_cast<std::size_t>(N * C), N, C);
        dX += (V * u).template cast<T>();
      }
      if (wants(basis)) {
        const ColMat<double> X = Eigen::Map<const ColMat<T>>(x->value.sample(n), N, C).template cast<double>();
        const ColMat<double> dA = -u * z.transpose();
        const double deps = dA.trace();
        ColMat<double> dV = dY * z.transpose();
        dV.noalias() += X * u.transpose();
        dV.noalias() += V * (dA + dA.transpose());
        dV += 2.0 * alpha * deps * V;
        Eigen::Map<ColMat<T>> g(basis->grad_buffer().data() + n * static_cast<std::size_t>(N * K), N, K);
        g += dV.template cast<T>();
      }
    }
  };
  return res;
}

namespace {
constexpr Eigen::Index kAttentionBlock = 256;

template <typename T>
void softmax_rows(ColMat<T>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const T mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}
}  // namespace

template <typename T>
Var<T> attention_apply(const Var<T>& basis, const Var<T>& values) {
  const Shape4 vs = basis->value.shape;
  const Shape4 ss = values->value.shape;
  require(vs.n == ss.n && vs.h == ss.h && vs.w == ss.w,
          "attention_apply: basis " + vs.str() + " and values " + ss.str() + " disagree");
  const auto N = static_cast<Eigen::Index>(vs.plane());
  const auto K = static_cast<Eigen::Index>(vs.c);
  const auto C = static_cast<Eigen::Index>(ss.c);
  Tensor<T> out(ss);
  for (std::size_t n = 0; n < vs.n; ++n) {
    Eigen::Map<const ColMat<T>> V(basis->value.sample(n), N, K);
    Eigen::Map<const ColMat<T>> S(values->value.sample(n), N, C);
    Eigen::Map<ColMat<T>> O(out.sample(n), N, C);
    for (Eigen::Index r0 = 0; r0 < N; r0 += kAttentionBlock) {
      const Eigen::Index b = std::min(kAttentionBlock, N - r0);
      ColMat<T> beta = V.middleRows(r0, b) * V.transpose();
      softmax_rows(beta);
      O.middleRows(r0, b).noalias() = beta * S;
    }
  }
  auto res = make_result(std::move(out), {basis, values});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, basis, values, N, K, C]() {
    for (std::size_t n = 0; n < basis->value.shape.n; ++n) {
      Eigen::Map<const ColMat<T>> V(basis->value.sample(n), N, K);
      Eigen::Map<const ColMat<T>> S(values->value.sample(n), N, C);
      Eigen::Map<const ColMat<T>> dO(self->grad.data() + n * static_cast<std::size_t>(N * C), N, C);
      ColMat<T> dV = ColMat<T>::Zero(N, K);
      ColMat<T> dS = ColMat<T>::Zero(N, C);
      for (Eigen::Index r0 = 0; r0 < N; r0 += kAttentionBlock) {
        const Eigen::Index b = std::min(kAttentionBlock, N - r0);
        ColMat<T> beta = V.middleRows(r0, b) * V.transpose();
        softmax_rows(beta);
        const ColMat<T> dO_blk = dO.middleRows(r0, b);
        dS.noalias() += beta.transpose() * dO_blk;
        ColMat<T> dbeta = dO_blk * S.transpose();
        const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (beta.array() * dbeta.array()).rowwise().sum();
        dbeta = beta.array() * (dbeta.colwise() - rowdot).array();
        // scores = V_blk V^T: gradient flows to both the block rows and all rows.
        dV.middleRows(r0, b).noalias() += dbeta * V;
        dV.noalias() += dbeta.transpose() * V.middleRows(r0, b);
      }
      if (wants(basis)) {
        Eigen::Map<ColMat<T>> g(basis->grad_buffer().data() + n * static_cast<std::size_t>(N * K), N, K);
        g += dV;
      }
      if (wants(values)) {
        Eigen::Map<ColMat<T>> g(values->grad_buffer().data() + n * static_cast<std::size_t>(N * C), N, C);
        g += dS;
      }
    }
  };
  return res;
}

template <typename T>
std::vector<T> attention_matrix(std::span<const T> v, std::size_t n, std::size_t k) {
  if (v.size() != n * k) throw ShapeError("attention_matrix: basis size must be N*K");
  std::vector<T> beta(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      T s = 0;
      for (std::size_t q = 0; q < k; ++q) s += v[j * k + q] * v[i * k + q];
      beta[j * n + i] = s;
      mx = std::max(mx, s);
    }
    T sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      beta[j * n + i] = std::exp(beta[j * n + i] - mx);
      sum += beta[j * n + i];
    }
    for (std::size_t i = 0; i < n; ++i) beta[j * n + i] /= sum;
  }
  return beta;
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Var<T>& target) {
  require(pred->value.shape == target->value.shape,
          "mse_loss: shape mismatch " + pred->value.shape.str() + " vs " + target->value.shape.str());
  const std::size_t m = pred->value.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = static_cast<double>(pred->value.data[i]) - static_cast<double>(target->value.data[i]);
    acc += d * d;
  }
  Tensor<T> out(Shape4{1, 1, 1, 1});
  out.data[0] = static_cast<T>(acc / static_cast<double>(m));
  auto res = make_result(std::move(out), {pred, target});
  if (!res->requires_grad) return res;
  Node<T>* self = res.get();
  res->backward_fn = [self, pred, target, m]() {
    const T scale = T(2) * self->grad[0] / static_cast<T>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const T d = scale * (pred->value.data[i] - target->value.data[i]);
      if (wants(pred)) pred->grad_buffer()[i] += d;
      if (wants(target)) target->grad_buffer()[i] -= d;
    }
  };
  return res;
}

#define THZ_NN_INSTANTIATE(T)                                                                              \
  template void backward<T>(const Var<T>&);                                                                \
  template void release_graph<T>(const Var<T>&);                                                           \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);        \
  template Var<T> batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&, const BatchNormState<T>&, bool); \
  template Var<T> relu<T>(const Var<T>&);                                                                  \
  template Var<T> sigmoid<T>(const Var<T>&);                                                               \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                    \
  template Var<T> channel_scale<T>(const Var<T>&, const Var<T>&);                                          \
  template Var<T> global_avg_pool<T>(const Var<T>&);                                                       \
  template Var<T> avg_pool2<T>(const Var<T>&);                                                             \
  template Var<T> upsample_bilinear2<T>(const Var<T>&);                                                    \
  template Var<T> concat_channels<T>(std::span<const Var<T>>);                                             \
  template Var<T> slice_channels<T>(const Var<T>&, std::size_t, std::size_t);                              \
  template Var<T> orth_project<T>(const Var<T>&, const Var<T>&);                                           \
  template Var<T> attention_apply<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> mse_loss<T>(const Var<T>&, const Var<T>&);                                               \
  template std::vector<T> attention_matrix<T>(std::span<const T>, std::size_t, std::size_t);

THZ_NN_INSTANTIATE(float)
THZ_NN_INSTANTIATE(double)

#undef THZ_NN_INSTANTIATE

}  // namespace thz::nn
