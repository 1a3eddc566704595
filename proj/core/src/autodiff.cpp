#include "lipsync/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace lipsync::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

bool in_parallel() {
#ifdef _OPENMP
  return omp_in_parallel() != 0;
#else
  return false;
#endif
}

// C[m,n] (+)= A[m,k] * B[k,n], all row-major. Row-chunked across threads;
// each output element keeps one sequential accumulation order, so results
// are identical for any thread count.
void pgemm(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  const int64_t flops = static_cast<int64_t>(m) * k * n;
  if (in_parallel() || flops < (1 << 16)) {
    CMap Am(A, m, k);
    CMap Bm(B, k, n);
    MMap Cm(C, m, n);
    if (acc)
      Cm.noalias() += Am * Bm;
    else
      Cm.noalias() = Am * Bm;
    return;
  }
#pragma omp parallel for schedule(static)
  for (int r0 = 0; r0 < m; r0 += std::max(1, (m + 1) / 2)) {
    int rows = std::min(m - r0, std::max(1, (m + 1) / 2));
    CMap Am(A + static_cast<int64_t>(r0) * k, rows, k);
    CMap Bm(B, k, n);
    MMap Cm(C + static_cast<int64_t>(r0) * n, rows, n);
    if (acc)
      Cm.noalias() += Am * Bm;
    else
      Cm.noalias() = Am * Bm;
  }
}

// C[m,n] (+)= A[m,k] * B[n,k]^T
void pgemm_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  CMap Am(A, m, k);
  CMap Bm(B, n, k);
  MMap Cm(C, m, n);
  if (acc)
    Cm.noalias() += Am * Bm.transpose();
  else
    Cm.noalias() = Am * Bm.transpose();
}

// C[m,n] (+)= A[k,m]^T * B[k,n]
void pgemm_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
  CMap Am(A, k, m);
  CMap Bm(B, k, n);
  MMap Cm(C, m, n);
  if (acc)
    Cm.noalias() += Am.transpose() * Bm;
  else
    Cm.noalias() = Am.transpose() * Bm;
}

Tensor* sink(Tape& t, int id) { return t.grad_sink(id); }

void check_same_shape(const Var& a, const Var& b, const char* op) {
  require(a.val().same_shape(b.val()), ErrorCode::InvalidArgument, std::string(op) + ": shape mismatch");
}

// Odometer iteration for two-sided numpy-style broadcasting: ranks must
// match and each dim pair must be equal or contain a 1.
struct BcastIter {
  std::vector<int> shape;  // output shape (elementwise max)
  std::vector<int64_t> astride, bstride;
  int64_t total = 1;

  BcastIter(const std::vector<int>& a, const std::vector<int>& b) {
    require(a.size() == b.size(), ErrorCode::InvalidArgument, "broadcast: rank mismatch");
    shape.resize(a.size());
    astride.assign(a.size(), 0);
    bstride.assign(a.size(), 0);
    int64_t sa = 1, sb = 1;
    for (int i = static_cast<int>(a.size()) - 1; i >= 0; --i) {
      size_t ui = static_cast<size_t>(i);
      require(a[ui] == b[ui] || a[ui] == 1 || b[ui] == 1, ErrorCode::InvalidArgument,
              "broadcast: incompatible dims");
      shape[ui] = std::max(a[ui], b[ui]);
      if (a[ui] != 1) astride[ui] = sa;
      if (b[ui] != 1) bstride[ui] = sb;
      sa *= a[ui];
      sb *= b[ui];
    }
    for (int d : shape) total *= d;
  }

  // fn(flat_out, flat_a, flat_b) over out elements [i0, i1).
  template <typename F>
  void run_range(int64_t i0, int64_t i1, F&& fn) const {
    int rank = static_cast<int>(shape.size());
    if (rank == 0) {
      if (i0 == 0 && i1 > 0) fn(0, 0, 0);
      return;
    }
    std::vector<int> idx(static_cast<size_t>(rank), 0);
    int64_t rem = i0, ai = 0, bi = 0;
    for (int d = rank - 1; d >= 0; --d) {
      size_t ud = static_cast<size_t>(d);
      idx[ud] = static_cast<int>(rem % shape[ud]);
      rem /= shape[ud];
      ai += idx[ud] * astride[ud];
      bi += idx[ud] * bstride[ud];
    }
    for (int64_t oi = i0; oi < i1; ++oi) {
      fn(oi, ai, bi);
      for (int d = rank - 1; d >= 0; --d) {
        size_t ud = static_cast<size_t>(d);
        if (++idx[ud] < shape[ud]) {
          ai += astride[ud];
          bi += bstride[ud];
          break;
        }
        ai -= astride[ud] * (shape[ud] - 1);
        bi -= bstride[ud] * (shape[ud] - 1);
        idx[ud] = 0;
      }
    }
  }

  template <typename F>
  void run(F&& fn) const {
    run_range(0, total, std::forward<F>(fn));
  }

  // Parallel over out elements; every write target must be disjoint per out
  // element (deterministic for any thread count).
  template <typename F>
  void run_parallel(F&& fn) const {
    if (in_parallel() || total < (1 << 15)) {
      run_range(0, total, std::forward<F>(fn));
      return;
    }
    const int64_t chunk = (total + 3) / 4;
#pragma omp parallel for schedule(static)
    for (int64_t c0 = 0; c0 < total; c0 += chunk) {
      run_range(c0, std::min(total, c0 + chunk), fn);
    }
  }
};

// Accumulates into the reduced side of a broadcast op: for every element of
// `x` (one of the two operands), walks its preimage fiber in the output in a
// fixed order. Parallel over x elements, so writes never collide.
// fn(acc, out_index, other_index) adds one contribution.
template <typename F>
void bcast_accumulate_reduced(const std::vector<int>& out_shape,
                              const std::vector<int64_t>& out_of_x_stride_src_shape_unused,
                              const std::vector<int>& x_shape, const std::vector<int>& other_shape,
                              double* gx, F&& fn) {
  (void)out_of_x_stride_src_shape_unused;
  const int rank = static_cast<int>(out_shape.size());
  std::vector<int64_t> out_stride(static_cast<size_t>(rank), 0), x_stride(static_cast<size_t>(rank), 0),
      other_stride(static_cast<size_t>(rank), 0);
  int64_t so = 1, sx = 1, st = 1;
  for (int d = rank - 1; d >= 0; --d) {
    size_t ud = static_cast<size_t>(d);
    out_stride[ud] = so;
    so *= out_shape[ud];
    if (x_shape[ud] != 1) x_stride[ud] = sx;
    sx *= x_shape[ud];
    if (other_shape[ud] != 1) other_stride[ud] = st;
    st *= other_shape[ud];
  }
  int64_t x_total = 1;
  for (int d : x_shape) x_total *= d;

  // Free dims: where x is broadcast over the output.
  std::vector<int> free_dims;
  for (int d = 0; d < rank; ++d)
    if (x_shape[static_cast<size_t>(d)] == 1 && out_shape[static_cast<size_t>(d)] > 1)
      free_dims.push_back(d);

  const bool parallel_ok = !in_parallel() && x_total >= 64;
#pragma omp parallel for schedule(static) if (parallel_ok)
  for (int64_t k = 0; k < x_total; ++k) {
    // Decompose k into x coordinates; fixed dims give base offsets.
    int64_t rem = k, base_out = 0, base_other = 0;
    for (int d = rank - 1; d >= 0; --d) {
      size_t ud = static_cast<size_t>(d);
      if (x_shape[ud] == 1) continue;
      int64_t coord = rem % x_shape[ud];
      rem /= x_shape[ud];
      base_out += coord * out_stride[ud];
      base_other += coord * other_stride[ud];
    }
    double acc = 0.0;
    // Odometer over the free dims.
    std::vector<int> idx(free_dims.size(), 0);
    int64_t oi = base_out, oti = base_other;
    while (true) {
      acc += fn(oi, oti);
      int d = static_cast<int>(free_dims.size()) - 1;
      for (; d >= 0; --d) {
        size_t ud = static_cast<size_t>(d);
        int dim = free_dims[ud];
        size_t udim = static_cast<size_t>(dim);
        if (++idx[ud] < out_shape[udim]) {
          oi += out_stride[udim];
          oti += other_stride[udim];
          break;
        }
        oi -= out_stride[udim] * (out_shape[udim] - 1);
        oti -= other_stride[udim] * (out_shape[udim] - 1);
        idx[ud] = 0;
      }
      if (d < 0) break;
    }
    gx[k] += acc;
  }
}

struct ConvDims {
  int N, C, H, W, O, kh, kw, Hout, Wout;
};

ConvDims conv_dims(const Tensor& x, const std::vector<int>& wshape, ConvSpec spec, bool multiweight) {
  require(x.rank() == 4, ErrorCode::InvalidArgument, "conv2d: input must be [N,C,H,W]");
  ConvDims d{};
  d.N = x.dim(0);
  d.C = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  int base = multiweight ? 1 : 0;
  require(static_cast<int>(wshape.size()) == 4 + base, ErrorCode::InvalidArgument, "conv2d: bad weight rank");
  if (multiweight)
    require(wshape[0] == d.N, ErrorCode::InvalidArgument, "conv2d: weight batch mismatch");
  d.O = wshape[static_cast<size_t>(base)];
  require(wshape[static_cast<size_t>(base + 1)] == d.C, ErrorCode::InvalidArgument,
          "conv2d: channel mismatch");
  d.kh = wshape[static_cast<size_t>(base + 2)];
  d.kw = wshape[static_cast<size_t>(base + 3)];
  d.Hout = (d.H + 2 * spec.pad - d.kh) / spec.stride + 1;
  d.Wout = (d.W + 2 * spec.pad - d.kw) / spec.stride + 1;
  require(d.Hout > 0 && d.Wout > 0, ErrorCode::InvalidArgument, "conv2d: empty output");
  return d;
}

// COL[K = C*kh*kw][M = Hout*Wout] for one sample; the GEMM engine (Eigen)
// is far faster than direct taps on this class of hardware, and the col
// buffer stays small enough to stream.
void im2col(const double* x, const ConvDims& d, ConvSpec spec, double* col) {
  const int M = d.Hout * d.Wout;
  for (int c = 0; c < d.C; ++c) {
    const double* xc = x + static_cast<int64_t>(c) * d.H * d.W;
    for (int dy = 0; dy < d.kh; ++dy) {
      for (int dx = 0; dx < d.kw; ++dx) {
        double* row = col + (static_cast<int64_t>(c) * d.kh * d.kw + dy * d.kw + dx) * M;
        for (int oy = 0; oy < d.Hout; ++oy) {
          int iy = oy * spec.stride - spec.pad + dy;
          double* dst = row + static_cast<int64_t>(oy) * d.Wout;
          if (iy < 0 || iy >= d.H) {
            std::memset(dst, 0, sizeof(double) * static_cast<size_t>(d.Wout));
            continue;
          }
          const double* src = xc + static_cast<int64_t>(iy) * d.W;
          if (spec.stride == 1 && spec.pad <= dx && dx - spec.pad + d.Wout <= d.W) {
            std::memcpy(dst, src + dx - spec.pad, sizeof(double) * static_cast<size_t>(d.Wout));
            continue;
          }
          for (int ox = 0; ox < d.Wout; ++ox) {
            int ix = ox * spec.stride - spec.pad + dx;
            dst[ox] = (ix < 0 || ix >= d.W) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvDims& d, ConvSpec spec, double* gx) {
  const int M = d.Hout * d.Wout;
  for (int c = 0; c < d.C; ++c) {
    double* gc = gx + static_cast<int64_t>(c) * d.H * d.W;
    for (int dy = 0; dy < d.kh; ++dy) {
      for (int dx = 0; dx < d.kw; ++dx) {
        const double* row = col + (static_cast<int64_t>(c) * d.kh * d.kw + dy * d.kw + dx) * M;
        for (int oy = 0; oy < d.Hout; ++oy) {
          int iy = oy * spec.stride - spec.pad + dy;
          if (iy < 0 || iy >= d.H) continue;
          const double* src = row + static_cast<int64_t>(oy) * d.Wout;
          double* dst = gc + static_cast<int64_t>(iy) * d.W;
          for (int ox = 0; ox < d.Wout; ++ox) {
            int ix = ox * spec.stride - spec.pad + dx;
            if (ix >= 0 && ix < d.W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

thread_local std::vector<double> tl_col;
thread_local std::vector<double> tl_col2;

double* scratch(std::vector<double>& buf, int64_t n) {
  if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
  return buf.data();
}

// Shared implementation: optional per-sample weights, optional fused bias and
// leaky-rectifier epilogue.
Var conv2d_full(Var x, Var w, Var* bias, double act_slope, bool has_act, ConvSpec spec,
                bool multiweight) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  ConvDims d = conv_dims(xv, wv.shape(), spec, multiweight);
  const int K = d.C * d.kh * d.kw;
  const int M = d.Hout * d.Wout;
  Tensor out({d.N, d.O, d.Hout, d.Wout});

  const int64_t xstride = static_cast<int64_t>(d.C) * d.H * d.W;
  const int64_t ostride = static_cast<int64_t>(d.O) * M;
  const int64_t wstride = multiweight ? static_cast<int64_t>(d.O) * K : 0;

  const Tensor* bv = nullptr;
  if (bias) {
    require(bias->val().size() == d.O, ErrorCode::InvalidArgument, "conv bias size mismatch");
    bv = &bias->val();
  }

#pragma omp parallel for schedule(static) if (!in_parallel() && d.N >= 2)
  for (int n = 0; n < d.N; ++n) {
    double* col = scratch(tl_col, static_cast<int64_t>(K) * M);
    im2col(xv.data() + n * xstride, d, spec, col);
    pgemm(wv.data() + n * wstride, col, out.data() + n * ostride, d.O, K, M, false);
    if (bv || has_act) {
      for (int o = 0; o < d.O; ++o) {
        double* op = out.data() + n * ostride + static_cast<int64_t>(o) * M;
        double bb = bv ? (*bv)[o] : 0.0;
        for (int i = 0; i < M; ++i) {
          double v = op[i] + bb;
          op[i] = has_act && v < 0.0 ? act_slope * v : v;
        }
      }
    }
  }

  bool rg = t.requires_grad(x.id()) || t.requires_grad(w.id()) ||
            (bias && t.requires_grad(bias->id()));
  std::vector<int> parents{x.id(), w.id()};
  int bias_id = -1;
  if (bias) {
    bias_id = bias->id();
    parents.push_back(bias_id);
  }
  int xid = x.id(), wid = w.id();
  auto back = [xid, wid, bias_id, has_act, act_slope, spec, d, multiweight](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& yv = tp.value(self);
    const Tensor& xval = tp.value(xid);
    const Tensor& wval = tp.value(wid);
    const int K = d.C * d.kh * d.kw;
    const int M = d.Hout * d.Wout;
    const int64_t xstride = static_cast<int64_t>(d.C) * d.H * d.W;
    const int64_t ostride = static_cast<int64_t>(d.O) * M;
    const int64_t wstride = multiweight ? static_cast<int64_t>(d.O) * K : 0;
    Tensor* gx = sink(tp, xid);
    Tensor* gw = sink(tp, wid);
    Tensor* gb = bias_id >= 0 ? sink(tp, bias_id) : nullptr;

    // Pre-activation gradient for the fused epilogue.
    const Tensor* gpre = &g;
    Tensor gpre_store;
    if (has_act) {
      gpre_store = Tensor(g.shape());
      const int64_t total = g.size();
#pragma omp parallel for schedule(static) if (total >= (1 << 15) && !in_parallel())
      for (int64_t i = 0; i < total; ++i)
        gpre_store[i] = yv[i] >= 0.0 ? g[i] : act_slope * g[i];
      gpre = &gpre_store;
    }
    if (gb) {
#pragma omp parallel for schedule(static) if (!in_parallel() && d.O >= 2)
      for (int o = 0; o < d.O; ++o) {
        double acc[4] = {0, 0, 0, 0};
        for (int n = 0; n < d.N; ++n) {
          const double* gp = gpre->data() + n * ostride + static_cast<int64_t>(o) * M;
          int i = 0;
          for (; i + 4 <= M; i += 4) {
            acc[0] += gp[i];
            acc[1] += gp[i + 1];
            acc[2] += gp[i + 2];
            acc[3] += gp[i + 3];
          }
          for (; i < M; ++i) acc[0] += gp[i];
        }
        (*gb)[o] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
      }
    }

    std::vector<double> gw_slab;
    if (gw && !multiweight) gw_slab.assign(static_cast<size_t>(d.N) * d.O * K, 0.0);

#pragma omp parallel for schedule(static) if (!in_parallel() && d.N >= 2)
    for (int n = 0; n < d.N; ++n) {
      if (gx) {
        double* dcol = scratch(tl_col, static_cast<int64_t>(K) * M);
        pgemm_tn(wval.data() + n * wstride, gpre->data() + n * ostride, dcol, K, d.O, M, false);
        col2im_add(dcol, d, spec, gx->data() + n * xstride);
      }
      if (gw) {
        double* col = scratch(tl_col2, static_cast<int64_t>(K) * M);
        im2col(xval.data() + n * xstride, d, spec, col);
        double* dst = multiweight ? gw->data() + n * wstride
                                  : gw_slab.data() + static_cast<int64_t>(n) * d.O * K;
        pgemm_nt(gpre->data() + n * ostride, col, dst, d.O, M, K, multiweight);
      }
    }
    if (gw && !multiweight) {
      for (int n = 0; n < d.N; ++n) {
        const double* src = gw_slab.data() + static_cast<int64_t>(n) * d.O * K;
        double* dst = gw->data();
        for (int64_t i = 0; i < static_cast<int64_t>(d.O) * K; ++i) dst[i] += src[i];
      }
    }
  };
  return t.make(std::move(out), rg, std::move(parents), rg ? back : std::function<void(Tape&, int)>());
}

Var conv2d_impl(Var x, Var w, ConvSpec spec, bool multiweight) {
  return conv2d_full(x, w, nullptr, 0.0, false, spec, multiweight);
}

}  // namespace

void Tape::backward(const Var& loss) {
  require(loss.val().size() == 1, ErrorCode::InvalidArgument, "backward: loss must be scalar");
  Node& ln = nodes_[static_cast<size_t>(loss.id())];
  require(ln.requires_grad, ErrorCode::InvalidArgument, "backward: loss does not require grad");
  if (ln.grad.size() == 0) ln.grad = Tensor(ln.value.shape());
  ln.grad[0] = 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || n.grad.size() == 0 || !n.back) continue;
    n.back(*this, id);
  }
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

Var binary_same(Var a, Var b, const char* name, double (*fwd)(double, double), int mode) {
  // mode 0: add, 1: sub, 2: mul
  check_same_shape(a, b, name);
  Tape& t = *a.tape();
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  Tensor out(av.shape());
  const int64_t n = av.size();
#pragma omp parallel for schedule(static) if (n >= (1 << 15) && !in_parallel())
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[i]);
  bool rg = t.requires_grad(a.id()) || t.requires_grad(b.id());
  int aid = a.id(), bid = b.id();
  auto back = [aid, bid, mode](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* ga = sink(tp, aid);
    Tensor* gb = sink(tp, bid);
    const Tensor& av = tp.value(aid);
    const Tensor& bv = tp.value(bid);
    const int64_t n = g.size();
#pragma omp parallel for schedule(static) if (n >= (1 << 15) && !in_parallel())
    for (int64_t i = 0; i < n; ++i) {
      double gi = g[i];
      if (ga) (*ga)[i] += mode == 2 ? gi * bv[i] : gi;
      if (gb) (*gb)[i] += mode == 0 ? gi : (mode == 1 ? -gi : gi * av[i]);
    }
  };
  return t.make(std::move(out), rg, {a.id(), b.id()}, rg ? back : std::function<void(Tape&, int)>());
}

}  // namespace

Var add(Var a, Var b) {
  return binary_same(a, b, "add", [](double x, double y) { return x + y; }, 0);
}
Var sub(Var a, Var b) {
  return binary_same(a, b, "sub", [](double x, double y) { return x - y; }, 1);
}
Var mul(Var a, Var b) {
  return binary_same(a, b, "mul", [](double x, double y) { return x * y; }, 2);
}

namespace {

Var bcast_binary(Var a, Var b, bool is_mul) {
  Tape& t = *a.tape();
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  BcastIter it(av.shape(), bv.shape());
  Tensor out(it.shape);
  if (is_mul) {
    it.run_parallel([&](int64_t oi, int64_t ai, int64_t bi) { out[oi] = av[ai] * bv[bi]; });
  } else {
    it.run_parallel([&](int64_t oi, int64_t ai, int64_t bi) { out[oi] = av[ai] + bv[bi]; });
  }
  bool rg = t.requires_grad(a.id()) || t.requires_grad(b.id());
  int aid = a.id(), bid = b.id();
  auto back = [aid, bid, is_mul](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& av = tp.value(aid);
    const Tensor& bv = tp.value(bid);
    const std::vector<int>& oshape = g.shape();
    BcastIter it(av.shape(), bv.shape());
    Tensor* ga = sink(tp, aid);
    Tensor* gb = sink(tp, bid);
    if (ga) {
      if (av.shape() == oshape) {
        it.run_parallel([&](int64_t oi, int64_t ai, int64_t bi) {
          (*ga)[ai] += is_mul ? g[oi] * bv[bi] : g[oi];
        });
      } else {
        bcast_accumulate_reduced(oshape, {}, av.shape(), bv.shape(), ga->data(),
                                 [&](int64_t oi, int64_t bi) {
                                   return is_mul ? g[oi] * bv[bi] : g[oi];
                                 });
      }
    }
    if (gb) {
      if (bv.shape() == oshape) {
        it.run_parallel([&](int64_t oi, int64_t ai, int64_t bi) {
          (*gb)[bi] += is_mul ? g[oi] * av[ai] : g[oi];
        });
      } else {
        bcast_accumulate_reduced(oshape, {}, bv.shape(), av.shape(), gb->data(),
                                 [&](int64_t oi, int64_t ai) {
                                   return is_mul ? g[oi] * av[ai] : g[oi];
                                 });
      }
    }
  };
  return t.make(std::move(out), rg, {a.id(), b.id()}, rg ? back : std::function<void(Tape&, int)>());
}

}  // namespace

Var add_b(Var a, Var b) { return bcast_binary(a, b, false); }
Var mul_b(Var a, Var b) { return bcast_binary(a, b, true); }

namespace {

Var unary(Var x, double (*fwd)(double, double), double (*bwd_from_out)(double, double), double c) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  Tensor out(xv.shape());
  const int64_t n = xv.size();
#pragma omp parallel for schedule(static) if (n >= (1 << 15) && !in_parallel())
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(xv[i], c);
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, bwd_from_out, c](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    const int64_t n = g.size();
#pragma omp parallel for schedule(static) if (n >= (1 << 15) && !in_parallel())
    for (int64_t i = 0; i < n; ++i) (*gx)[i] += g[i] * bwd_from_out(y[i], c);
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

}  // namespace

Var scale(Var a, double s) {
  return unary(a, [](double x, double c) { return x * c; }, [](double, double c) { return c; }, s);
}

Var add_const(Var a, double c) {
  return unary(a, [](double x, double c0) { return x + c0; }, [](double, double) { return 1.0; }, c);
}

Var leaky_relu(Var x, double slope) {
  return unary(
      x, [](double v, double a) { return v >= 0.0 ? v : a * v; },
      [](double y, double a) { return y >= 0.0 ? 1.0 : a; }, slope);
}

Var sigmoid(Var x) {
  return unary(
      x, [](double v, double) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double y, double) { return y * (1.0 - y); }, 0.0);
}

Var sqrt0(Var x) {
  return unary(
      x, [](double v, double) { return std::sqrt(v); },
      [](double y, double) { return y > 0.0 ? 0.5 / y : 0.0; }, 0.0);
}

Var powc(Var x, double p) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  Tensor out(xv.shape());
  for (int64_t i = 0; i < xv.size(); ++i) out[i] = std::pow(xv[i], p);
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, p](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xval = tp.value(xid);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    for (int64_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * p * std::pow(xval[i], p - 1.0);
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i];
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid](Tape& tp, int self) {
    double g = tp.grad(self)[0];
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    const int64_t n = gx->size();
#pragma omp parallel for schedule(static) if (n >= (1 << 15) && !in_parallel())
    for (int64_t i = 0; i < n; ++i) (*gx)[i] += g;
  };
  return t.make(Tensor::scalar(s), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.val().size())); }

Var sum_sq(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  double s = 0.0;
  for (int64_t i = 0; i < xv.size(); ++i) s += xv[i] * xv[i];
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid](Tape& tp, int self) {
    double g = tp.grad(self)[0];
    const Tensor& xval = tp.value(xid);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    const int64_t n = gx->size();
#pragma omp parallel for schedule(static) if (n >= (1 << 15) && !in_parallel())
    for (int64_t i = 0; i < n; ++i) (*gx)[i] += 2.0 * g * xval[i];
  };
  return t.make(Tensor::scalar(s), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

namespace {

Var reduce_keep(Var x, int keep, bool squared) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  require(keep >= 1 && keep <= xv.rank(), ErrorCode::InvalidArgument, "reduce_keep: bad keep count");
  std::vector<int> oshape(xv.shape().begin(), xv.shape().begin() + keep);
  int64_t rows = Tensor::count(oshape);
  int64_t inner = xv.size() / std::max<int64_t>(rows, 1);
  Tensor out(oshape);
#pragma omp parallel for schedule(static) if (rows >= 8 && inner >= 4096 && !in_parallel())
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* p = xv.data() + r * inner;
    for (int64_t i = 0; i < inner; ++i) s += squared ? p[i] * p[i] : p[i];
    out[r] = s;
  }
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, rows, inner, squared](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& xval = tp.value(xid);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
#pragma omp parallel for schedule(static) if (rows >= 8 && inner >= 4096 && !in_parallel())
    for (int64_t r = 0; r < rows; ++r) {
      double gr = g[r];
      const double* p = xval.data() + r * inner;
      double* q = gx->data() + r * inner;
      for (int64_t i = 0; i < inner; ++i) q[i] += squared ? 2.0 * gr * p[i] : gr;
    }
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

}  // namespace

Var sumsq_keep(Var x, int keep) { return reduce_keep(x, keep, true); }
Var sum_keep(Var x, int keep) { return reduce_keep(x, keep, false); }
Var rowwise_sumsq(Var x) { return reduce_keep(x, 1, true); }

Var logsumexp_rows(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  require(xv.rank() == 2, ErrorCode::InvalidArgument, "logsumexp_rows: need [n,m]");
  int n = xv.dim(0), m = xv.dim(1);
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    const double* row = xv.data() + static_cast<int64_t>(i) * m;
    double mx = row[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < m; ++j) s += std::exp(row[j] - mx);
    out[i] = mx + std::log(s);
  }
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, n, m](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    const Tensor& y = tp.value(self);
    const Tensor& xval = tp.value(xid);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    for (int i = 0; i < n; ++i) {
      double gi = g[i];
      double yi = y[i];
      const double* row = xval.data() + static_cast<int64_t>(i) * m;
      double* grow = gx->data() + static_cast<int64_t>(i) * m;
      for (int j = 0; j < m; ++j) grow[j] += gi * std::exp(row[j] - yi);
    }
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

Var take_cols(Var x, std::vector<int> cols) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  require(xv.rank() == 2, ErrorCode::InvalidArgument, "take_cols: need [n,m]");
  int n = xv.dim(0), m = xv.dim(1);
  require(static_cast<int>(cols.size()) == n, ErrorCode::InvalidArgument, "take_cols: one column per row");
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    require(cols[static_cast<size_t>(i)] >= 0 && cols[static_cast<size_t>(i)] < m,
            ErrorCode::InvalidArgument, "take_cols: column out of range");
    out[i] = xv[static_cast<int64_t>(i) * m + cols[static_cast<size_t>(i)]];
  }
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, m, cols](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    for (size_t i = 0; i < cols.size(); ++i)
      (*gx)[static_cast<int64_t>(i) * m + cols[i]] += g[static_cast<int64_t>(i)];
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(Var a, Var b) {
  Tape& t = *a.tape();
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0), ErrorCode::InvalidArgument,
          "matmul: shape mismatch");
  int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  pgemm(av.data(), bv.data(), out.data(), m, k, n, false);
  bool rg = t.requires_grad(a.id()) || t.requires_grad(b.id());
  int aid = a.id(), bid = b.id();
  auto back = [aid, bid, m, k, n](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* ga = sink(tp, aid);
    Tensor* gb = sink(tp, bid);
    if (ga) pgemm_nt(g.data(), tp.value(bid).data(), ga->data(), m, n, k, true);
    if (gb) pgemm_tn(tp.value(aid).data(), g.data(), gb->data(), k, m, n, true);
  };
  return t.make(std::move(out), rg, {a.id(), b.id()}, rg ? back : std::function<void(Tape&, int)>());
}

Var matmul_nt(Var a, Var b) {
  Tape& t = *a.tape();
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1), ErrorCode::InvalidArgument,
          "matmul_nt: shape mismatch");
  int m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor out({m, n});
  pgemm_nt(av.data(), bv.data(), out.data(), m, k, n, false);
  bool rg = t.requires_grad(a.id()) || t.requires_grad(b.id());
  int aid = a.id(), bid = b.id();
  auto back = [aid, bid, m, k, n](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* ga = sink(tp, aid);
    Tensor* gb = sink(tp, bid);
    if (ga) pgemm(g.data(), tp.value(bid).data(), ga->data(), m, n, k, true);
    if (gb) pgemm_tn(g.data(), tp.value(aid).data(), gb->data(), n, m, k, true);
  };
  return t.make(std::move(out), rg, {a.id(), b.id()}, rg ? back : std::function<void(Tape&, int)>());
}

Var linear(Var x, Var w, Var b) {
  Var y = matmul_nt(x, w);
  int n = y.val().dim(0);
  (void)n;
  return add_b(y, reshape(b, {1, b.val().dim(0)}));
}

// ---------------------------------------------------------------------------
// Shape ops

Var reshape(Var x, std::vector<int> shape) {
  Tape& t = *x.tape();
  Tensor out = x.val().reshaped(shape);
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    for (int64_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

namespace {

struct SliceDims {
  int64_t outer, mid_in, mid_out, inner;
  int start;
};

SliceDims slice_dims(const std::vector<int>& shape, int axis, int start, int len) {
  require(axis >= 0 && axis < static_cast<int>(shape.size()), ErrorCode::InvalidArgument,
          "slice: bad axis");
  require(start >= 0 && len > 0 && start + len <= shape[static_cast<size_t>(axis)],
          ErrorCode::InvalidArgument, "slice: range out of bounds");
  SliceDims d{1, shape[static_cast<size_t>(axis)], len, 1, start};
  for (int i = 0; i < axis; ++i) d.outer *= shape[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i)
    d.inner *= shape[i];
  return d;
}

}  // namespace

Var slice(Var x, int axis, int start, int len) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  SliceDims d = slice_dims(xv.shape(), axis, start, len);
  std::vector<int> oshape = xv.shape();
  oshape[static_cast<size_t>(axis)] = len;
  Tensor out(oshape);
  for (int64_t o = 0; o < d.outer; ++o) {
    const double* src = xv.data() + (o * d.mid_in + d.start) * d.inner;
    double* dst = out.data() + o * d.mid_out * d.inner;
    std::memcpy(dst, src, sizeof(double) * static_cast<size_t>(d.mid_out * d.inner));
  }
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, d](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    for (int64_t o = 0; o < d.outer; ++o) {
      const double* src = g.data() + o * d.mid_out * d.inner;
      double* dst = gx->data() + (o * d.mid_in + d.start) * d.inner;
      for (int64_t i = 0; i < d.mid_out * d.inner; ++i) dst[i] += src[i];
    }
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

Var concat(const std::vector<Var>& xs, int axis) {
  require(!xs.empty(), ErrorCode::InvalidArgument, "concat: empty list");
  Tape& t = *xs[0].tape();
  const std::vector<int>& s0 = xs[0].val().shape();
  require(axis >= 0 && axis < static_cast<int>(s0.size()), ErrorCode::InvalidArgument,
          "concat: bad axis");
  std::vector<int> oshape = s0;
  int total = 0;
  for (const Var& v : xs) {
    const std::vector<int>& s = v.val().shape();
    require(s.size() == s0.size(), ErrorCode::InvalidArgument, "concat: rank mismatch");
    for (size_t i = 0; i < s.size(); ++i)
      require(static_cast<int>(i) == axis || s[i] == s0[i], ErrorCode::InvalidArgument,
              "concat: dim mismatch");
    total += s[static_cast<size_t>(axis)];
  }
  oshape[static_cast<size_t>(axis)] = total;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < s0.size(); ++i) inner *= s0[i];

  Tensor out(oshape);
  bool rg = false;
  std::vector<int> ids;
  std::vector<int> widths;
  for (const Var& v : xs) {
    rg = rg || t.requires_grad(v.id());
    ids.push_back(v.id());
    widths.push_back(v.val().shape()[static_cast<size_t>(axis)]);
  }
  int64_t off = 0;
  for (size_t p = 0; p < xs.size(); ++p) {
    const Tensor& xv = xs[p].val();
    int64_t w = static_cast<int64_t>(widths[p]) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + o * total * inner + off, xv.data() + o * w,
                  sizeof(double) * static_cast<size_t>(w));
    }
    off += w;
  }
  auto back = [ids, widths, outer, inner, total](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    int64_t off = 0;
    for (size_t p = 0; p < ids.size(); ++p) {
      int64_t w = static_cast<int64_t>(widths[p]) * inner;
      Tensor* gx = sink(tp, ids[p]);
      if (gx) {
        for (int64_t o = 0; o < outer; ++o) {
          const double* src = g.data() + o * total * inner + off;
          double* dst = gx->data() + o * w;
          for (int64_t i = 0; i < w; ++i) dst[i] += src[i];
        }
      }
      off += w;
    }
  };
  return t.make(std::move(out), rg, ids, rg ? back : std::function<void(Tape&, int)>());
}

// ---------------------------------------------------------------------------
// Spatial

Var conv2d(Var x, Var w, ConvSpec spec) { return conv2d_impl(x, w, spec, false); }
Var conv2d_mw(Var x, Var w, ConvSpec spec) { return conv2d_impl(x, w, spec, true); }

Var conv2d_bias_act(Var x, Var w, Var bias, ConvSpec spec, double slope) {
  return conv2d_full(x, w, &bias, slope, true, spec, false);
}

Var conv2d_mw_bias(Var x, Var w, Var bias, ConvSpec spec) {
  return conv2d_full(x, w, &bias, 0.0, false, spec, true);
}

Var conv2d_mw_bias_act(Var x, Var w, Var bias, ConvSpec spec, double slope) {
  return conv2d_full(x, w, &bias, slope, true, spec, true);
}

Var upsample2(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  require(xv.rank() == 4, ErrorCode::InvalidArgument, "upsample2: need [N,C,H,W]");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C, 2 * H, 2 * W});
  const int64_t planes = static_cast<int64_t>(N) * C;
#pragma omp parallel for schedule(static)
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * H * W;
    double* dst = out.data() + p * 4 * H * W;
    for (int y = 0; y < H; ++y) {
      for (int xq = 0; xq < W; ++xq) {
        double v = src[y * W + xq];
        double* d0 = dst + (2 * y) * 2 * W + 2 * xq;
        d0[0] = v;
        d0[1] = v;
        d0[2 * W] = v;
        d0[2 * W + 1] = v;
      }
    }
  }
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, planes, H, W](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
#pragma omp parallel for schedule(static)
    for (int64_t p = 0; p < planes; ++p) {
      const double* src = g.data() + p * 4 * H * W;
      double* dst = gx->data() + p * H * W;
      for (int y = 0; y < H; ++y) {
        for (int xq = 0; xq < W; ++xq) {
          const double* s0 = src + (2 * y) * 2 * W + 2 * xq;
          dst[y * W + xq] += s0[0] + s0[1] + s0[2 * W] + s0[2 * W + 1];
        }
      }
    }
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

Var avgpool2(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  require(xv.rank() == 4, ErrorCode::InvalidArgument, "avgpool2: need [N,C,H,W]");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  require(H % 2 == 0 && W % 2 == 0, ErrorCode::InvalidArgument, "avgpool2: odd spatial dims");
  Tensor out({N, C, H / 2, W / 2});
  const int64_t planes = static_cast<int64_t>(N) * C;
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = xv.data() + p * H * W;
    double* dst = out.data() + p * (H / 2) * (W / 2);
    for (int y = 0; y < H / 2; ++y) {
      for (int xq = 0; xq < W / 2; ++xq) {
        const double* s0 = src + (2 * y) * W + 2 * xq;
        dst[y * (W / 2) + xq] = 0.25 * (s0[0] + s0[1] + s0[W] + s0[W + 1]);
      }
    }
  }
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, planes, H, W](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    for (int64_t p = 0; p < planes; ++p) {
      const double* src = g.data() + p * (H / 2) * (W / 2);
      double* dst = gx->data() + p * H * W;
      for (int y = 0; y < H / 2; ++y) {
        for (int xq = 0; xq < W / 2; ++xq) {
          double v = 0.25 * src[y * (W / 2) + xq];
          double* d0 = dst + (2 * y) * W + 2 * xq;
          d0[0] += v;
          d0[1] += v;
          d0[W] += v;
          d0[W + 1] += v;
        }
      }
    }
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

Var global_avgpool(Var x) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  require(xv.rank() == 4, ErrorCode::InvalidArgument, "global_avgpool: need [N,C,H,W]");
  int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  Tensor out({N, C});
  const double inv = 1.0 / (static_cast<double>(H) * W);
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const double* src = xv.data() + (static_cast<int64_t>(n) * C + c) * H * W;
      double s = 0.0;
      for (int i = 0; i < H * W; ++i) s += src[i];
      out[static_cast<int64_t>(n) * C + c] = s * inv;
    }
  }
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, N, C, H, W, inv](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        double gv = g[static_cast<int64_t>(n) * C + c] * inv;
        double* dst = gx->data() + (static_cast<int64_t>(n) * C + c) * H * W;
        for (int i = 0; i < H * W; ++i) dst[i] += gv;
      }
    }
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

Var smooth3_time(Var x, std::array<double, 3> alpha) {
  Tape& t = *x.tape();
  const Tensor& xv = x.val();
  require(xv.rank() == 4, ErrorCode::InvalidArgument, "smooth3_time: need [B,T,R,D]");
  int B = xv.dim(0), T = xv.dim(1);
  int64_t inner = static_cast<int64_t>(xv.dim(2)) * xv.dim(3);
  Tensor out(xv.shape());
  auto clampi = [T](int i) { return i < 0 ? 0 : (i >= T ? T - 1 : i); };
  for (int b = 0; b < B; ++b) {
    for (int tt = 0; tt < T; ++tt) {
      double* dst = out.data() + (static_cast<int64_t>(b) * T + tt) * inner;
      for (int k = 0; k < 3; ++k) {
        const double* src = xv.data() + (static_cast<int64_t>(b) * T + clampi(tt - 1 + k)) * inner;
        double a = alpha[static_cast<size_t>(k)];
        if (k == 0) {
          for (int64_t i = 0; i < inner; ++i) dst[i] = a * src[i];
        } else {
          for (int64_t i = 0; i < inner; ++i) dst[i] += a * src[i];
        }
      }
    }
  }
  bool rg = t.requires_grad(x.id());
  int xid = x.id();
  auto back = [xid, B, T, inner, alpha](Tape& tp, int self) {
    const Tensor& g = tp.grad(self);
    Tensor* gx = sink(tp, xid);
    if (!gx) return;
    auto clampi = [T](int i) { return i < 0 ? 0 : (i >= T ? T - 1 : i); };
#pragma omp parallel for schedule(static) if (B >= 2 && !in_parallel())
    for (int b = 0; b < B; ++b) {
      for (int tt = 0; tt < T; ++tt) {
        const double* src = g.data() + (static_cast<int64_t>(b) * T + tt) * inner;
        for (int k = 0; k < 3; ++k) {
          double* dst = gx->data() + (static_cast<int64_t>(b) * T + clampi(tt - 1 + k)) * inner;
          double a = alpha[static_cast<size_t>(k)];
          for (int64_t i = 0; i < inner; ++i) dst[i] += a * src[i];
        }
      }
    }
  };
  return t.make(std::move(out), rg, {x.id()}, rg ? back : std::function<void(Tape&, int)>());
}

// ---------------------------------------------------------------------------
// Composites

Var mse(Var a, Var b) {
  Var d = sub(a, b);
  return scale(sum_sq(d), 1.0 / static_cast<double>(d.val().size()));
}

Var l2_normalize_rows(Var x) {
  require(x.val().rank() == 2, ErrorCode::InvalidArgument, "l2_normalize_rows: need [n,d]");
  const int rows = x.val().dim(0);  // note: tape growth invalidates value references
  Var ss = rowwise_sumsq(x);
  for (int64_t i = 0; i < ss.val().size(); ++i)
    require(ss.val()[i] > 1e-24, ErrorCode::InvalidArgument, "l2_normalize_rows: zero row");
  Var inv = powc(ss, -0.5);
  return mul_b(x, reshape(inv, {rows, 1}));
}

}  // namespace lipsync::ad
