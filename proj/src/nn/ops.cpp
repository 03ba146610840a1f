#include "ecgdk/nn/ops.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <new>

#include <Eigen/Dense>

#include "ecgdk/common.h"

namespace ecgdk::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

using detail::Node;

[[noreturn]] void shape_error(const std::string& op, const std::string& detail) {
  throw ContractError(op + ": " + detail);
}

void require_rank(const std::string& op, const Tensor& t, std::size_t rank, const char* name) {
  if (!t.defined()) shape_error(op, std::string(name) + " is undefined");
  if (t.rank() != rank)
    shape_error(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " + shape_string(t.shape()));
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

void im2col(const double* x, std::size_t c_in, std::size_t len, std::size_t kernel, std::size_t stride,
            std::size_t padding, std::size_t len_out, RowMat& cols) {
  cols.resize(static_cast<Eigen::Index>(c_in * kernel), static_cast<Eigen::Index>(len_out));
  for (std::size_t c = 0; c < c_in; ++c) {
    const double* row_in = x + c * len;
    for (std::size_t k = 0; k < kernel; ++k) {
      double* row = cols.data() + (c * kernel + k) * len_out;
      for (std::size_t t = 0; t < len_out; ++t) {
        const auto pos = static_cast<long long>(t * stride + k) - static_cast<long long>(padding);
        row[t] = (pos >= 0 && pos < static_cast<long long>(len)) ? row_in[pos] : 0.0;
      }
    }
  }
}

void col2im_add(const RowMat& cols, std::size_t c_in, std::size_t len, std::size_t kernel, std::size_t stride,
                std::size_t padding, std::size_t len_out, double* dx) {
  for (std::size_t c = 0; c < c_in; ++c) {
    double* row_out = dx + c * len;
    for (std::size_t k = 0; k < kernel; ++k) {
      const double* row = cols.data() + (c * kernel + k) * len_out;
      for (std::size_t t = 0; t < len_out; ++t) {
        const auto pos = static_cast<long long>(t * stride + k) - static_cast<long long>(padding);
        if (pos >= 0 && pos < static_cast<long long>(len)) row_out[pos] += row[t];
      }
    }
  }
}

// Recycles the large attention probability blocks. Fresh blocks of this size come from mmap and
// fault in page by page on every step.
class BlockPool {
 public:
  static BlockPool& instance() {
    static BlockPool pool;
    return pool;
  }

  template <typename T>
  std::shared_ptr<T[]> acquire(std::size_t count) {
    const std::size_t bytes = std::max<std::size_t>((count * sizeof(T) + 63) / 64 * 64, 64);
    void* block = nullptr;
    {
      std::lock_guard lock(mutex_);
      auto it = free_.find(bytes);
      if (it != free_.end()) {
        block = it->second;
        free_.erase(it);
        cached_ -= bytes;
      }
    }
    if (!block) block = std::aligned_alloc(64, bytes);
    if (!block) throw std::bad_alloc();
    return std::shared_ptr<T[]>(static_cast<T*>(block), [this, bytes](T* b) { release(b, bytes); });
  }

 private:
  void release(void* block, std::size_t bytes) {
    std::lock_guard lock(mutex_);
    if (cached_ + bytes > kMaxCached) {
      std::free(block);
      return;
    }
    free_.emplace(bytes, block);
    cached_ += bytes;
  }

  static constexpr std::size_t kMaxCached = std::size_t{1} << 30;
  std::mutex mutex_;
  std::multimap<std::size_t, void*> free_;
  std::size_t cached_ = 0;
};

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin()))
    shape_error("add", "cannot broadcast " + shape_string(sb) + " onto " + shape_string(sa));
  const std::size_t inner = b.numel();
  const std::size_t outer = inner == 0 ? 0 : a.numel() / inner;
  Buffer out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += bv[i];
  return Tensor::make_result(sa, std::move(out), {a, b}, [outer, inner](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    if (pb.requires_grad)
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) pb.grad[i] += self.grad[o * inner + i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    shape_error("mul", "shapes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  Buffer out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (pa.requires_grad) pa.grad[i] += self.grad[i] * pb.value[i];
      if (pb.requires_grad) pb.grad[i] += self.grad[i] * pa.value[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  Buffer out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return Tensor::make_result({1}, {s}, {x}, [](Node& self) {
    Node& p = *self.parents[0];
    for (double& g : p.grad) g += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) shape_error("mean", "empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor relu(const Tensor& x) {
  Buffer out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return Tensor::make_result(x.shape(), std::move(out), {x}, [](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (p.value[i] > 0.0) p.grad[i] += self.grad[i];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", weight, 2, "weight");
  require_rank("linear", bias, 1, "bias");
  if (x.rank() < 1) shape_error("linear", "input must have rank >= 1");
  const std::size_t in = weight.dim(1);
  const std::size_t out_dim = weight.dim(0);
  if (last_dim(x) != in)
    shape_error("linear", "input " + shape_string(x.shape()) + " does not match weight " + shape_string(weight.shape()));
  if (bias.dim(0) != out_dim)
    shape_error("linear", "bias " + shape_string(bias.shape()) + " does not match weight " + shape_string(weight.shape()));
  const std::size_t rows = x.numel() / in;
  Shape out_shape = x.shape();
  out_shape.back() = out_dim;

  Buffer out(rows * out_dim);
  const auto ri = static_cast<Eigen::Index>(rows);
  const auto ii = static_cast<Eigen::Index>(in);
  const auto oi = static_cast<Eigen::Index>(out_dim);
  {
    CMatMap X(x.values().data(), ri, ii);
    CMatMap W(weight.values().data(), oi, ii);
    Eigen::Map<const Eigen::RowVectorXd> b(bias.values().data(), oi);
    MatMap Y(out.data(), ri, oi);
    Y.noalias() = X * W.transpose();
    Y.rowwise() += b;
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {x, weight, bias}, [ri, ii, oi](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    CMatMap G(self.grad.data(), ri, oi);
    if (px.requires_grad) {
      MatMap dX(px.grad.data(), ri, ii);
      dX.noalias() += G * CMatMap(pw.value.data(), oi, ii);
    }
    if (pw.requires_grad) {
      MatMap dW(pw.grad.data(), oi, ii);
      dW.noalias() += G.transpose() * CMatMap(px.value.data(), ri, ii);
    }
    if (pb.requires_grad) {
      Eigen::Map<Eigen::RowVectorXd> db(pb.grad.data(), oi);
      db += G.colwise().sum();
    }
  });
}

std::size_t conv1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ContractError("conv1d: stride must be >= 1");
  if (kernel == 0 || kernel > length + 2 * padding)
    throw ContractError("conv1d: kernel " + std::to_string(kernel) + " exceeds padded length " +
                        std::to_string(length + 2 * padding));
  return (length + 2 * padding - kernel) / stride + 1;
}

std::size_t maxpool1d_output_length(std::size_t length, std::size_t kernel, std::size_t stride) {
  if (stride == 0 || kernel == 0) throw ContractError("maxpool1d: kernel and stride must be >= 1");
  if (kernel > length) throw ContractError("maxpool1d: kernel exceeds length");
  return (length - kernel) / stride + 1;
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require_rank("conv1d", x, 3, "input");
  require_rank("conv1d", weight, 3, "weight");
  require_rank("conv1d", bias, 1, "bias");
  const std::size_t batch = x.dim(0), c_in = x.dim(1), len = x.dim(2);
  const std::size_t c_out = weight.dim(0), kernel = weight.dim(2);
  if (weight.dim(1) != c_in)
    shape_error("conv1d", "input " + shape_string(x.shape()) + " does not match weight " + shape_string(weight.shape()));
  if (bias.dim(0) != c_out)
    shape_error("conv1d", "bias " + shape_string(bias.shape()) + " does not match weight " + shape_string(weight.shape()));
  const std::size_t len_out = conv1d_output_length(len, kernel, stride, padding);

  Buffer out(batch * c_out * len_out);
  const auto co = static_cast<Eigen::Index>(c_out);
  const auto ck = static_cast<Eigen::Index>(c_in * kernel);
  const auto lo = static_cast<Eigen::Index>(len_out);
  {
    CMatMap W(weight.values().data(), co, ck);
    Eigen::Map<const Eigen::VectorXd> b(bias.values().data(), co);
    RowMat cols;
    for (std::size_t n = 0; n < batch; ++n) {
      im2col(x.values().data() + n * c_in * len, c_in, len, kernel, stride, padding, len_out, cols);
      MatMap Y(out.data() + n * c_out * len_out, co, lo);
      Y.noalias() = W * cols;
      Y.colwise() += b;
    }
  }
  return Tensor::make_result(
      {batch, c_out, len_out}, std::move(out), {x, weight, bias},
      [=](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];
        CMatMap W(pw.value.data(), co, ck);
        RowMat cols;
        RowMat dcols;
        for (std::size_t n = 0; n < batch; ++n) {
          CMatMap G(self.grad.data() + n * c_out * len_out, co, lo);
          if (pw.requires_grad) {
            im2col(px.value.data() + n * c_in * len, c_in, len, kernel, stride, padding, len_out, cols);
            MatMap dW(pw.grad.data(), co, ck);
            dW.noalias() += G * cols.transpose();
          }
          if (pb.requires_grad) {
            Eigen::Map<Eigen::VectorXd> db(pb.grad.data(), co);
            db += G.rowwise().sum();
          }
          if (px.requires_grad) {
            dcols.noalias() = W.transpose() * G;
            col2im_add(dcols, c_in, len, kernel, stride, padding, len_out, px.grad.data() + n * c_in * len);
          }
        }
      });
}

Tensor maxpool1d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank("maxpool1d", x, 3, "input");
  const std::size_t rows = x.dim(0) * x.dim(1), len = x.dim(2);
  const std::size_t len_out = maxpool1d_output_length(len, kernel, stride);
  Buffer out(rows * len_out);
  std::vector<std::size_t> argmax(rows * len_out);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < len_out; ++t) {
      std::size_t best = r * len + t * stride;
      for (std::size_t k = 1; k < kernel; ++k) {
        const std::size_t idx = r * len + t * stride + k;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[r * len_out + t] = xv[best];
      argmax[r * len_out + t] = best;
    }
  }
  return Tensor::make_result({x.dim(0), x.dim(1), len_out}, std::move(out), {x},
                             [argmax = std::move(argmax)](Node& self) {
                               Node& p = *self.parents[0];
                               for (std::size_t i = 0; i < argmax.size(); ++i) p.grad[argmax[i]] += self.grad[i];
                             });
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) shape_error("transpose_last2", "rank must be >= 2, got " + shape_string(x.shape()));
  const std::size_t rows = x.shape()[x.rank() - 2];
  const std::size_t cols = x.shape()[x.rank() - 1];
  const std::size_t mats = rows * cols == 0 ? 0 : x.numel() / (rows * cols);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  Buffer out(x.numel());
  const auto xv = x.values();
  for (std::size_t m = 0; m < mats; ++m)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[m * rows * cols + c * rows + r] = xv[m * rows * cols + r * cols + c];
  return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [mats, rows, cols](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t m = 0; m < mats; ++m)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          p.grad[m * rows * cols + r * cols + c] += self.grad[m * rows * cols + c * rows + r];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank("layer_norm", gain, 1, "gain");
  require_rank("layer_norm", bias, 1, "bias");
  const std::size_t d = last_dim(x);
  if (gain.dim(0) != d || bias.dim(0) != d)
    shape_error("layer_norm", "gain/bias " + shape_string(gain.shape()) + " do not match input " + shape_string(x.shape()));
  const std::size_t rows = x.numel() / d;
  Buffer out(x.numel());
  Buffer xhat(x.numel());
  Buffer inv_std(rows);
  const auto xv = x.values();
  const auto g = gain.values();
  const auto b = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (row[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * g[j] + b[j];
    }
  }
  return Tensor::make_result(x.shape(), std::move(out), {x, gain, bias},
                             [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                               Node& px = *self.parents[0];
                               Node& pg = *self.parents[1];
                               Node& pb = *self.parents[2];
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* gy = self.grad.data() + r * d;
                                 const double* xh = xhat.data() + r * d;
                                 if (pg.requires_grad)
                                   for (std::size_t j = 0; j < d; ++j) pg.grad[j] += gy[j] * xh[j];
                                 if (pb.requires_grad)
                                   for (std::size_t j = 0; j < d; ++j) pb.grad[j] += gy[j];
                                 if (!px.requires_grad) continue;
                                 double mean_dxh = 0.0;
                                 double mean_dxh_xh = 0.0;
                                 for (std::size_t j = 0; j < d; ++j) {
                                   const double dxh = gy[j] * pg.value[j];
                                   mean_dxh += dxh;
                                   mean_dxh_xh += dxh * xh[j];
                                 }
                                 mean_dxh /= static_cast<double>(d);
                                 mean_dxh_xh /= static_cast<double>(d);
                                 for (std::size_t j = 0; j < d; ++j) {
                                   const double dxh = gy[j] * pg.value[j];
                                   px.grad[r * d + j] += inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                                 }
                               }
                             });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) shape_error("softmax", "axis out of range for " + shape_string(x.shape()));
  const Shape& s = x.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Buffer out(x.numel());
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < len; ++k) m = std::max(m, xv[base + k * inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        out[base + k * inner] = std::exp(xv[base + k * inner] - m);
        z += out[base + k * inner];
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= z;
    }
  }
  return Tensor::make_result(s, std::move(out), {x}, [outer, inner, len](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < len; ++k) dot += self.grad[base + k * inner] * self.value[base + k * inner];
        for (std::size_t k = 0; k < len; ++k)
          p.grad[base + k * inner] += self.value[base + k * inner] * (self.grad[base + k * inner] - dot);
      }
    }
  });
}

Tensor softmax(const Tensor& x) {
  if (x.rank() == 0) shape_error("softmax", "scalar input");
  return softmax(x, x.rank() - 1);
}

Tensor dropout(const Tensor& x, double p, Rng* rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: p must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout: training mode needs an Rng");
  const double keep_scale = 1.0 / (1.0 - p);
  Buffer mask(x.numel());
  for (double& m : mask) m = rng->uniform() >= p ? keep_scale : 0.0;
  Buffer out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * mask[i];
  return Tensor::make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](Node& self) {
    Node& px = *self.parents[0];
    for (std::size_t i = 0; i < mask.size(); ++i) px.grad[i] += self.grad[i] * mask[i];
  });
}

Tensor mean_over_axis1(const Tensor& x) {
  require_rank("mean_over_axis1", x, 3, "input");
  const std::size_t batch = x.dim(0), seq = x.dim(1), d = x.dim(2);
  if (seq == 0) shape_error("mean_over_axis1", "empty sequence");
  Buffer out(batch * d, 0.0);
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s)
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += xv[(b * seq + s) * d + j];
  const double inv = 1.0 / static_cast<double>(seq);
  for (double& v : out) v *= inv;
  return Tensor::make_result({batch, d}, std::move(out), {x}, [batch, seq, d, inv](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t j = 0; j < d; ++j) p.grad[(b * seq + s) * d + j] += self.grad[b * d + j] * inv;
  });
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() == 0 ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin()))
    shape_error("concat_last", "leading axes differ: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  const std::size_t da = last_dim(a), db = last_dim(b);
  const std::size_t rows = da == 0 ? b.numel() / db : a.numel() / da;
  Shape out_shape = a.shape();
  out_shape.back() = da + db;
  Buffer out(rows * (da + db));
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(a.values().data() + r * da, da, out.data() + r * (da + db));
    std::copy_n(b.values().data() + r * db, db, out.data() + r * (da + db) + da);
  }
  return Tensor::make_result(std::move(out_shape), std::move(out), {a, b}, [rows, da, db](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t r = 0; r < rows; ++r) {
      if (pa.requires_grad)
        for (std::size_t j = 0; j < da; ++j) pa.grad[r * da + j] += self.grad[r * (da + db) + j];
      if (pb.requires_grad)
        for (std::size_t j = 0; j < db; ++j) pb.grad[r * db + j] += self.grad[r * (da + db) + da + j];
    }
  });
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank("select_rows", x, 2, "input");
  const std::size_t n = x.dim(0), d = x.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  Buffer out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw ContractError("select_rows: row " + std::to_string(idx[r]) + " out of range");
    std::copy_n(x.values().data() + idx[r] * d, d, out.data() + r * d);
  }
  const std::size_t m = idx.size();
  return Tensor::make_result({m, d}, std::move(out), {x}, [d, idx = std::move(idx)](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) p.grad[idx[r] * d + j] += self.grad[r * d + j];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  require_rank("cross_entropy", logits, 2, "logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (targets.size() != batch)
    shape_error("cross_entropy", std::to_string(targets.size()) + " targets for logits " + shape_string(logits.shape()));
  if (batch == 0) shape_error("cross_entropy", "empty batch");
  Buffer probs(batch * classes);
  std::vector<int> tgt(targets.begin(), targets.end());
  double loss = 0.0;
  const auto lv = logits.values();
  for (std::size_t b = 0; b < batch; ++b) {
    if (tgt[b] < 0 || static_cast<std::size_t>(tgt[b]) >= classes)
      throw ContractError("cross_entropy: target " + std::to_string(tgt[b]) + " out of range");
    const double* row = lv.data() + b * classes;
    const double m = *std::max_element(row, row + classes);
    double z = 0.0;
    for (std::size_t c = 0; c < classes; ++c) z += std::exp(row[c] - m);
    const double log_z = m + std::log(z);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - log_z);
    loss += log_z - row[tgt[b]];
  }
  loss /= static_cast<double>(batch);
  return Tensor::make_result({1}, {loss}, {logits},
                             [batch, classes, probs = std::move(probs), tgt = std::move(tgt)](Node& self) {
                               Node& p = *self.parents[0];
                               const double g = self.grad[0] / static_cast<double>(batch);
                               for (std::size_t b = 0; b < batch; ++b)
                                 for (std::size_t c = 0; c < classes; ++c) {
                                   const double onehot = static_cast<int>(c) == tgt[b] ? 1.0 : 0.0;
                                   p.grad[b * classes + c] += g * (probs[b * classes + c] - onehot);
                                 }
                             });
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  require_rank("split_heads", x, 3, "input");
  const std::size_t batch = x.dim(0), seq = x.dim(1), d = x.dim(2);
  if (heads == 0 || d % heads != 0)
    throw ContractError("split_heads: d_model " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  Buffer out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(xv.data() + (b * seq + s) * d + h * dh, dh, out.data() + ((b * heads + h) * seq + s) * dh);
  return Tensor::make_result({batch * heads, seq, dh}, std::move(out), {x}, [=](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < dh; ++j)
            p.grad[(b * seq + s) * d + h * dh + j] += self.grad[((b * heads + h) * seq + s) * dh + j];
  });
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  require_rank("merge_heads", x, 3, "input");
  if (heads == 0 || x.dim(0) % heads != 0) throw ContractError("merge_heads: leading axis not divisible by heads");
  const std::size_t batch = x.dim(0) / heads, seq = x.dim(1), dh = x.dim(2), d = dh * heads;
  Buffer out(x.numel());
  const auto xv = x.values();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t s = 0; s < seq; ++s)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(xv.data() + ((b * heads + h) * seq + s) * dh, dh, out.data() + (b * seq + s) * d + h * dh);
  return Tensor::make_result({batch, seq, d}, std::move(out), {x}, [=](Node& self) {
    Node& p = *self.parents[0];
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t s = 0; s < seq; ++s)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t j = 0; j < dh; ++j)
            p.grad[((b * heads + h) * seq + s) * dh + j] += self.grad[(b * seq + s) * d + h * dh + j];
  });
}

namespace {

// Per-head attention in scalar type S. Inputs and gradients stay float64 at the op boundary.
template <typename S>
Tensor attention_impl(const Tensor& q, const Tensor& k, const Tensor& v) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<Mat>;
  using CMap = Eigen::Map<const Mat>;
  const std::size_t n = q.dim(0), sq = q.dim(1), dh = q.dim(2);
  const std::size_t sk = k.dim(1), dv = v.dim(2);
  const S sc = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  const auto isq = static_cast<Eigen::Index>(sq), isk = static_cast<Eigen::Index>(sk);
  const auto idh = static_cast<Eigen::Index>(dh), idv = static_cast<Eigen::Index>(dv);

  // Left uninitialized; every entry is written below.
  std::shared_ptr<S[]> probs = BlockPool::instance().acquire<S>(n * sq * sk);
  Buffer out(n * sq * dv);
  Mat Q, K, V, O;
  for (std::size_t i = 0; i < n; ++i) {
    Q = CMatMap(q.values().data() + i * sq * dh, isq, idh).template cast<S>() * sc;
    K = CMatMap(k.values().data() + i * sk * dh, isk, idh).template cast<S>();
    V = CMatMap(v.values().data() + i * sk * dv, isk, idv).template cast<S>();
    Map P(probs.get() + i * sq * sk, isq, isk);
    P.noalias() = Q * K.transpose();
    for (Eigen::Index r = 0; r < isq; ++r) {
      auto row = P.row(r).array();
      row = (row - row.maxCoeff()).exp();
      row *= static_cast<S>(1.0 / static_cast<double>(row.template cast<double>().sum()));
    }
    O.noalias() = P * V;
    MatMap(out.data() + i * sq * dv, isq, idv) = O.template cast<double>();
  }
  return Tensor::make_result({n, sq, dv}, std::move(out), {q, k, v}, [=](Node& self) {
    Node& pq = *self.parents[0];
    Node& pk = *self.parents[1];
    Node& pv = *self.parents[2];
    Mat dS(isq, isk), G, Qm, Km, Vm, tmp;
    for (std::size_t i = 0; i < n; ++i) {
      CMap P(probs.get() + i * sq * sk, isq, isk);
      G = CMatMap(self.grad.data() + i * sq * dv, isq, idv).template cast<S>();
      if (pv.requires_grad) {
        tmp.noalias() = P.transpose() * G;
        MatMap(pv.grad.data() + i * sk * dv, isk, idv) += tmp.template cast<double>();
      }
      if (!pq.requires_grad && !pk.requires_grad) continue;
      Vm = CMatMap(pv.value.data() + i * sk * dv, isk, idv).template cast<S>();
      dS.noalias() = G * Vm.transpose();
      for (Eigen::Index r = 0; r < isq; ++r) {
        auto d = dS.row(r).array();
        const auto p = P.row(r).array();
        const auto dot = static_cast<S>((d.template cast<double>() * p.template cast<double>()).sum());
        d = sc * p * (d - dot);
      }
      if (pq.requires_grad) {
        Km = CMatMap(pk.value.data() + i * sk * dh, isk, idh).template cast<S>();
        tmp.noalias() = dS * Km;
        MatMap(pq.grad.data() + i * sq * dh, isq, idh) += tmp.template cast<double>();
      }
      if (pk.requires_grad) {
        Qm = CMatMap(pq.value.data() + i * sq * dh, isq, idh).template cast<S>();
        tmp.noalias() = dS.transpose() * Qm;
        MatMap(pk.grad.data() + i * sk * dh, isk, idh) += tmp.template cast<double>();
      }
    }
  });
}

std::atomic<bool> g_attention_float32{true};

}  // namespace

bool attention_float32() { return g_attention_float32.load(); }
void set_attention_float32(bool enabled) { g_attention_float32.store(enabled); }

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  require_rank("attention", q, 3, "q");
  require_rank("attention", k, 3, "k");
  require_rank("attention", v, 3, "v");
  const std::size_t n = q.dim(0), dh = q.dim(2), sk = k.dim(1);
  if (k.dim(0) != n || v.dim(0) != n || k.dim(2) != dh || v.dim(1) != sk)
    shape_error("attention", "incompatible q " + shape_string(q.shape()) + ", k " + shape_string(k.shape()) + ", v " +
                                 shape_string(v.shape()));
  return attention_float32() ? attention_impl<float>(q, k, v) : attention_impl<double>(q, k, v);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionWeights& w,
                            std::size_t heads) {
  require_rank("multi_head_attention", q, 3, "q");
  const std::size_t d = q.dim(2);
  if (heads == 0 || d % heads != 0)
    throw ContractError("multi_head_attention: d_model " + std::to_string(d) + " not divisible by " +
                        std::to_string(heads) + " heads");
  const Tensor qh = split_heads(linear(q, w.wq, w.bq), heads);
  const Tensor kh = split_heads(linear(k, w.wk, w.bk), heads);
  const Tensor vh = split_heads(linear(v, w.wv, w.bv), heads);
  return linear(merge_heads(scaled_dot_attention(qh, kh, vh), heads), w.wo, w.bo);
}

Tensor positional_encoding(std::size_t seq, std::size_t d_model) {
  std::vector<double> pe(seq * d_model);
  for (std::size_t pos = 0; pos < seq; ++pos) {
    for (std::size_t j = 0; j < d_model; ++j) {
      const double pair = static_cast<double>(j - j % 2);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, pair / static_cast<double>(d_model));
      pe[pos * d_model + j] = j % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({seq, d_model}, std::move(pe));
}

}  // namespace ecgdk::nn
