#include "gsal/graph.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "gsal/errors.hpp"

namespace gsal {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InputShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw InputShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                          shape_string(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t batch, in_ch, out_ch, height, width, kernel, pad;
  std::size_t patch() const { return in_ch * kernel * kernel; }
  std::size_t pixels() const { return height * width; }
};

// cols[(c*k + ky)*k + kx][y*w + x] = in[c][y + ky - pad][x + kx - pad], zero outside.
void im2col(const double* in, const ConvGeometry& g, double* cols) {
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  const auto pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    const double* plane = in + c * g.pixels();
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * g.pixels();
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        for (long y = 0; y < h; ++y) {
          const long sy = y + dy;
          double* dst = row + y * w;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, 0.0);
            continue;
          }
          const double* src = plane + sy * w;
          for (long x = 0; x < w; ++x) {
            const long sx = x + dx;
            dst[x] = (sx >= 0 && sx < w) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* out) {
  const auto h = static_cast<long>(g.height), w = static_cast<long>(g.width);
  const auto pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    double* plane = out + c * g.pixels();
    for (std::size_t ky = 0; ky < g.kernel; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel; ++kx) {
        const double* row = cols + ((c * g.kernel + ky) * g.kernel + kx) * g.pixels();
        const long dy = static_cast<long>(ky) - pad, dx = static_cast<long>(kx) - pad;
        for (long y = 0; y < h; ++y) {
          const long sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          const double* src = row + y * w;
          double* dst = plane + sy * w;
          for (long x = 0; x < w; ++x) {
            const long sx = x + dx;
            if (sx >= 0 && sx < w) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

Var Graph::push(Tensor value, bool requires_grad, std::string op, BackwardFn backward) {
  if (consumed_) throw std::logic_error("graph already consumed by backward()");
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(op), std::move(backward)});
  return Var{nodes_.size() - 1};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.id >= nodes_.size()) throw IndexError("unknown graph node " + std::to_string(v.id));
  return nodes_[v.id];
}

Tensor& Graph::adjoint(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Var Graph::input(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad, requires_grad ? "variable" : "constant", nullptr);
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var root) {
  if (node(root).value.size() != 1) {
    throw InputShapeError("backward() without a seed needs a single-element root");
  }
  backward(root, Tensor(node(root).value.shape(), 1.0));
}

void Graph::backward(Var root, const Tensor& seed) {
  if (consumed_) throw std::logic_error("backward() may only run once per graph");
  require_same_shape(node(root).value, seed, "backward");
  consumed_ = true;
  adjoint(root.id) = seed;
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

Var Graph::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "add");
  Tensor out = av + bv;
  return push(std::move(out), needs(a) || needs(b), "add", [a, b](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    if (g.needs(a)) g.adjoint(a.id) += dy;
    if (g.needs(b)) g.adjoint(b.id) += dy;
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "mul");
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return push(std::move(out), needs(a) || needs(b), "mul", [a, b](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    if (g.needs(a)) {
      Tensor& da = g.adjoint(a.id);
      const Tensor& bv = g.nodes_[b.id].value;
      for (std::size_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * bv[i];
    }
    if (g.needs(b)) {
      Tensor& db = g.adjoint(b.id);
      const Tensor& av = g.nodes_[a.id].value;
      for (std::size_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * av[i];
    }
  });
}

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_rank(av, 2, "matmul");
  require_rank(bv, 2, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k) {
    throw InputShapeError("matmul: inner dimensions differ " + shape_string(av.shape()) + " x " +
                          shape_string(bv.shape()));
  }
  Tensor out({m, n});
  MapMat(out.data().data(), m, n).noalias() = ConstMapMat(av.data().data(), m, k) * ConstMapMat(bv.data().data(), k, n);
  return push(std::move(out), needs(a) || needs(b), "matmul", [a, b, m, k, n](Graph& g, std::size_t self) {
    ConstMapMat dy(g.nodes_[self].grad.data().data(), m, n);
    if (g.needs(a)) {
      ConstMapMat bm(g.nodes_[b.id].value.data().data(), k, n);
      MapMat(g.adjoint(a.id).data().data(), m, k).noalias() += dy * bm.transpose();
    }
    if (g.needs(b)) {
      ConstMapMat am(g.nodes_[a.id].value.data().data(), m, k);
      MapMat(g.adjoint(b.id).data().data(), k, n).noalias() += am.transpose() * dy;
    }
  });
}

Var Graph::add_bias(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  require_rank(xv, 2, "add_bias");
  if (bv.size() != xv.dim(1)) throw InputShapeError("add_bias: bias length does not match columns");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bv[c];
  return push(std::move(out), needs(x) || needs(bias), "add_bias", [x, bias, rows, cols](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    if (g.needs(x)) g.adjoint(x.id) += dy;
    if (g.needs(bias)) {
      Tensor& db = g.adjoint(bias.id);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
    }
  });
}

Var Graph::conv2d(Var x, Var weight, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(weight);
  const Tensor& bv = value(bias);
  require_rank(xv, 4, "conv2d");
  require_rank(wv, 4, "conv2d");
  if (wv.dim(1) != xv.dim(1)) throw InputShapeError("conv2d: input channels do not match weight");
  if (wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0) throw InputShapeError("conv2d: kernel must be square and odd");
  if (bv.size() != wv.dim(0)) throw InputShapeError("conv2d: bias length does not match output channels");

  const ConvGeometry geo{xv.dim(0), xv.dim(1), wv.dim(0), xv.dim(2), xv.dim(3), wv.dim(2), wv.dim(2) / 2};
  const std::size_t patch = geo.patch(), pixels = geo.pixels();

  auto cols = std::make_shared<Buffer>(geo.batch * patch * pixels);
  Tensor out({geo.batch, geo.out_ch, geo.height, geo.width});
  ConstMapMat wm(wv.data().data(), geo.out_ch, patch);
  for (std::size_t n = 0; n < geo.batch; ++n) {
    double* col = cols->data() + n * patch * pixels;
    im2col(xv.data().data() + n * geo.in_ch * pixels, geo, col);
    MapMat om(out.data().data() + n * geo.out_ch * pixels, geo.out_ch, pixels);
    om.noalias() = wm * ConstMapMat(col, patch, pixels);
    for (std::size_t o = 0; o < geo.out_ch; ++o) om.row(o).array() += bv[o];
  }

  const bool grad_needed = needs(x) || needs(weight) || needs(bias);
  return push(std::move(out), grad_needed, "conv2d", [x, weight, bias, geo, cols](Graph& g, std::size_t self) {
    const std::size_t patch = geo.patch(), pixels = geo.pixels();
    const Tensor& dy = g.nodes_[self].grad;
    const bool dw_needed = g.needs(weight), db_needed = g.needs(bias), dx_needed = g.needs(x);
    double* dw = dw_needed ? g.adjoint(weight.id).data().data() : nullptr;
    double* db = db_needed ? g.adjoint(bias.id).data().data() : nullptr;
    double* dx = dx_needed ? g.adjoint(x.id).data().data() : nullptr;
    ConstMapMat wm(g.nodes_[weight.id].value.data().data(), geo.out_ch, patch);
    Buffer dcol(dx_needed ? patch * pixels : 0);
    for (std::size_t n = 0; n < geo.batch; ++n) {
      ConstMapMat dym(dy.data().data() + n * geo.out_ch * pixels, geo.out_ch, pixels);
      if (dw_needed) {
        MapMat(dw, geo.out_ch, patch).noalias() +=
            dym * ConstMapMat(cols->data() + n * patch * pixels, patch, pixels).transpose();
      }
      if (db_needed) {
        for (std::size_t o = 0; o < geo.out_ch; ++o) {
          const double* row = dy.data().data() + (n * geo.out_ch + o) * pixels;
          double acc = 0.0;
          for (std::size_t i = 0; i < pixels; ++i) acc += row[i];
          db[o] += acc;
        }
      }
      if (dx_needed) {
        MapMat dcm(dcol.data(), patch, pixels);
        dcm.noalias() = wm.transpose() * dym;
        col2im_add(dcol.data(), geo, dx + n * geo.in_ch * pixels);
      }
    }
  });
}

Var Graph::avgpool2(Var x) {
  const Tensor& xv = value(x);
  require_rank(xv, 4, "avgpool2");
  const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (h % 2 || w % 2) throw InputShapeError("avgpool2: spatial dimensions must be even, got " + shape_string(xv.shape()));
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* in = xv.data().data() + p * h * w;
    double* o = out.data().data() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* r0 = in + (2 * y) * w + 2 * xx;
        const double* r1 = r0 + w;
        o[y * ow + xx] = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
      }
  }
  return push(std::move(out), needs(x), "avgpool2", [x, n, c, h, w, oh, ow](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    Tensor& dx = g.adjoint(x.id);
    for (std::size_t p = 0; p < n * c; ++p) {
      const double* d = dy.data().data() + p * oh * ow;
      double* o = dx.data().data() + p * h * w;
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * d[y * ow + xx];
          double* r0 = o + (2 * y) * w + 2 * xx;
          double* r1 = r0 + w;
          r0[0] += v;
          r0[1] += v;
          r1[0] += v;
          r1[1] += v;
        }
    }
  });
}

Var Graph::relu(Var x) {
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return push(std::move(out), needs(x), "relu", [x](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    const Tensor& xv = g.nodes_[x.id].value;
    Tensor& dx = g.adjoint(x.id);
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (xv[i] > 0.0) dx[i] += dy[i];
  });
}

Var Graph::softmax(Var x) {
  const Tensor& xv = value(x);
  require_rank(xv, 2, "softmax");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data().data() + r * cols;
    double* o = out.data().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) o[c] /= total;
  }
  return push(std::move(out), needs(x), "softmax", [x, rows, cols](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    const Tensor& y = g.nodes_[self].value;
    Tensor& dx = g.adjoint(x.id);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += dy[r * cols + c] * y[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) dx[r * cols + c] += y[r * cols + c] * (dy[r * cols + c] - dot);
    }
  });
}

Var Graph::cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& xv = value(logits);
  require_rank(xv, 2, "cross_entropy");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (labels.size() != rows) throw InputShapeError("cross_entropy: one label per row required");
  auto probs = std::make_shared<std::vector<double>>(rows * cols);
  std::vector<std::size_t> owned(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (owned[r] >= cols) throw IndexError("cross_entropy: label " + std::to_string(owned[r]) + " out of range");
    const double* in = xv.data().data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += ((*probs)[r * cols + c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) (*probs)[r * cols + c] /= total;
    loss -= in[owned[r]] - mx - std::log(total);
  }
  loss /= static_cast<double>(rows);
  return push(Tensor::scalar(loss), needs(logits), "cross_entropy",
              [logits, probs, owned = std::move(owned), rows, cols](Graph& g, std::size_t self) {
                const double scale = g.nodes_[self].grad[0] / static_cast<double>(rows);
                Tensor& dx = g.adjoint(logits.id);
                for (std::size_t r = 0; r < rows; ++r)
                  for (std::size_t c = 0; c < cols; ++c) {
                    const double target = c == owned[r] ? 1.0 : 0.0;
                    dx[r * cols + c] += scale * ((*probs)[r * cols + c] - target);
                  }
              });
}

Var Graph::reshape(Var x, Shape shape) {
  Tensor out = value(x).reshaped(std::move(shape));
  return push(std::move(out), needs(x), "reshape", [x](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    Tensor& dx = g.adjoint(x.id);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
  });
}

Var Graph::pick(Var x, std::span<const std::size_t> columns) {
  const Tensor& xv = value(x);
  require_rank(xv, 2, "pick");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  if (columns.size() != rows) throw InputShapeError("pick: one column per row required");
  std::vector<std::size_t> owned(columns.begin(), columns.end());
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (owned[r] >= cols) throw IndexError("pick: column " + std::to_string(owned[r]) + " out of range");
    out[r] = xv[r * cols + owned[r]];
  }
  return push(std::move(out), needs(x), "pick", [x, owned = std::move(owned), cols](Graph& g, std::size_t self) {
    const Tensor& dy = g.nodes_[self].grad;
    Tensor& dx = g.adjoint(x.id);
    for (std::size_t r = 0; r < owned.size(); ++r) dx[r * cols + owned[r]] += dy[r];
  });
}

Var Graph::sum(Var x) {
  const Tensor& xv = value(x);
  double total = 0.0;
  for (double v : xv.data()) total += v;
  return push(Tensor::scalar(total), needs(x), "sum", [x](Graph& g, std::size_t self) {
    const double d = g.nodes_[self].grad[0];
    Tensor& dx = g.adjoint(x.id);
    for (auto& v : dx.data()) v += d;
  });
}

Var Graph::group_broadcast(Var gv, std::span<const int> labels, std::size_t height, std::size_t width) {
  const Tensor& groups = value(gv);
  require_rank(groups, 2, "group_broadcast");
  const std::size_t channels = groups.dim(0), p = groups.dim(1), pixels = height * width;
  if (labels.size() != pixels) throw InputShapeError("group_broadcast: label map does not match image size");
  std::vector<int> owned(labels.begin(), labels.end());
  std::vector<double> counts(p, 0.0);
  for (int l : owned) {
    if (l < 0 || static_cast<std::size_t>(l) >= p) throw IndexError("group_broadcast: label out of range");
    counts[static_cast<std::size_t>(l)] += 1.0;
  }
  for (double c : counts)
    if (c == 0.0) throw ArgumentError("group_broadcast: empty group");
  Tensor out({1, channels, height, width});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < pixels; ++i) {
      const auto k = static_cast<std::size_t>(owned[i]);
      out[c * pixels + i] = groups[c * p + k] / counts[k];
    }
  return push(std::move(out), needs(gv), "group_broadcast",
              [gv, owned = std::move(owned), counts = std::move(counts), channels, p, pixels](Graph& g, std::size_t self) {
                const Tensor& dy = g.nodes_[self].grad;
                Tensor& dg = g.adjoint(gv.id);
                for (std::size_t c = 0; c < channels; ++c) {
                  std::vector<double> acc(p, 0.0);
                  for (std::size_t i = 0; i < pixels; ++i) acc[static_cast<std::size_t>(owned[i])] += dy[c * pixels + i];
                  for (std::size_t k = 0; k < p; ++k) dg[c * p + k] += acc[k] / counts[k];
                }
              });
}

}  // namespace gsal
