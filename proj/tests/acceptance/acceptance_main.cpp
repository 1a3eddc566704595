// Acceptance suite: runs every gate criterion end to end on a shared
// workspace, printing one PASS/FAIL line per criterion. Heavy artifacts
// (corpus, sync expert, trained generators) are produced once and reused;
// an existing workspace with matching artifacts is reused across runs.
//
// Usage: acceptance [--workspace DIR] [--only N[,M...]]

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "lipsync/adaptation.hpp"
#include "lipsync/cli.hpp"
#include "lipsync/metrics.hpp"
#include "lipsync/training.hpp"

using namespace lipsync;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Gate {
  int passed = 0;
  int failed = 0;
  std::vector<std::string> lines;

  void check(int criterion, const std::string& what, bool ok, const std::string& detail = "") {
    std::ostringstream os;
    os << (ok ? "[PASS]" : "[FAIL]") << " criterion " << criterion << ": " << what;
    if (!detail.empty()) os << " (" << detail << ")";
    std::cout << os.str() << std::endl;
    lines.push_back(os.str());
    ok ? ++passed : ++failed;
  }

  void note(const std::string& what, bool ok, const std::string& detail = "") {
    std::ostringstream os;
    os << (ok ? "[PASS]" : "[FAIL]") << " check: " << what;
    if (!detail.empty()) os << " (" << detail << ")";
    std::cout << os.str() << std::endl;
    lines.push_back(os.str());
    ok ? ++passed : ++failed;
  }
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo, double hi) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// ---------------------------------------------------------------------------
// Configurations

cfg::GlobalConfig full_config() {
  cfg::GlobalConfig c;  // defaults ARE the full configuration
  c.validate();
  return c;
}

cfg::GlobalConfig gradcheck_config() {
  cfg::GlobalConfig c;
  c.resolution = 16;
  c.levels = 3;
  c.style_dim = 8;
  c.model.decoder_channels = {8, 8, 6, 6};
  c.mals.hidden = 8;
  c.loss.perceptual_channels = 4;
  c.sync.embed_dim = 16;
  c.validate();
  return c;
}

cfg::GlobalConfig tiny_config() {
  cfg::GlobalConfig c = gradcheck_config();
  c.resolution = 32;
  c.train.batch_clips = 2;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Independent oracles (acceptance-side reimplementations)

geom::LipMask raster_oracle(const geom::FaceMesh& mesh, int H, int W) {
  geom::LipMask mask;
  mask.h = H;
  mask.w = W;
  mask.grid.assign(static_cast<size_t>(H) * W, 0);
  for (int row = 0; row < H; ++row) {
    for (int col = 0; col < W; ++col) {
      double px = col + 0.5, py = row + 0.5;
      for (const geom::Tri& t : mesh.triangles) {
        double vx[3], vy[3];
        for (int k = 0; k < 3; ++k) {
          vx[k] = (mesh.vertices[static_cast<size_t>(t[static_cast<size_t>(k)])][0] + 0.5) * W;
          vy[k] = (mesh.vertices[static_cast<size_t>(t[static_cast<size_t>(k)])][1] + 0.5) * H;
        }
        double area2 = (vx[1] - vx[0]) * (vy[2] - vy[0]) - (vy[1] - vy[0]) * (vx[2] - vx[0]);
        if (area2 == 0.0) continue;
        int i1 = 1, i2 = 2;
        if (area2 < 0.0) std::swap(i1, i2);
        auto edge_ok = [&](int a, int b) {
          double e = (vx[b] - vx[a]) * (py - vy[a]) - (vy[b] - vy[a]) * (px - vx[a]);
          if (e != 0.0) return e > 0.0;
          double dx = vx[b] - vx[a], dy = vy[b] - vy[a];
          return dy < 0.0 || (dy == 0.0 && dx > 0.0);
        };
        if (edge_ok(0, i1) && edge_ok(i1, i2) && edge_ok(i2, 0)) {
          mask.at(row, col) = 1;
          break;
        }
      }
    }
  }
  return mask;
}

double ssim_oracle(const Tensor& a, const Tensor& b) {
  int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  double g[11], gs = 0;
  for (int i = 0; i < 11; ++i) {
    double x = i - 5.0;
    g[i] = std::exp(-x * x / (2.0 * 2.25));
    gs += g[i];
  }
  for (double& v : g) v /= gs;
  double acc = 0;
  int64_t cnt = 0;
  for (int ch = 0; ch < C; ++ch)
    for (int y = 0; y + 11 <= H; ++y)
      for (int x = 0; x + 11 <= W; ++x) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            double w = g[i] * g[j];
            double va = a.at({ch, y + i, x + j}), vb = b.at({ch, y + i, x + j});
            ma += w * va;
            mb += w * vb;
            aa += w * va * va;
            bb += w * vb * vb;
            ab += w * va * vb;
          }
        acc += ((2 * ma * mb + 1e-4) * (2 * (ab - ma * mb) + 9e-4)) /
               ((ma * ma + mb * mb + 1e-4) * ((aa - ma * ma) + (bb - mb * mb) + 9e-4));
        ++cnt;
      }
  return acc / static_cast<double>(cnt);
}

// ---------------------------------------------------------------------------
// Criteria 1-4: algebraic identities, oracles, gradients, invariants

void criterion_1(Gate& gate) {
  bool eq2_ok = true;
  {
    Rng rng(11);
    ad::Tape tape;
    Tensor enc = random_tensor(rng, {2, 6, 8, 8}, -2, 2);
    Tensor gen = random_tensor(rng, {2, 6, 8, 8}, -2, 2);
    ad::Var e = tape.input(enc), gvar = tape.input(gen);
    ad::Var s0 = tape.input(Tensor({2, 1, 8, 8}));
    ad::Var s1 = tape.input(Tensor::full({2, 1, 8, 8}, 1.0));
    const Tensor& f0 = models::fuse(s0, e, gvar).val();
    const Tensor& f1v = models::fuse(s1, e, gvar).val();
    for (int64_t i = 0; i < enc.size(); ++i) {
      eq2_ok = eq2_ok && f0[i] == gen[i] && f1v[i] == enc[i];
    }
  }
  gate.check(1, "masked-fusion boundaries reproduce each path at machine precision", eq2_ok);

  bool eq3_ok = true;
  {
    Rng rng(12);
    ad::Tape tape;
    Tensor w = random_tensor(rng, {8, 16}, -1, 1);
    const Tensor& out = models::compose_style(tape.input(w), tape.input(Tensor({8, 16}))).val();
    for (int64_t i = 0; i < w.size(); ++i) eq3_ok = eq3_ok && out[i] == w[i];
  }
  gate.check(1, "additive style composition identity", eq3_ok);

  double worst = 0.0;
  {
    cfg::GlobalConfig c = gradcheck_config();
    models::Generator g(c, 3);
    Rng rng(13);
    const int B = 2, T = 6, R = 2 * c.levels, D = c.style_dim;
    Tensor a = random_tensor(rng, {B, T, R, D}, -1, 1);
    Tensor wref = random_tensor(rng, {B, R, D}, -1, 1);
    Tensor wavg = random_tensor(rng, {R, D}, -1, 1);
    ad::Tape tape;
    nn::Binder bind(tape, true);
    const Tensor& out =
        g.smoother().apply(bind, tape.input(a), tape.input(wref), tape.input(wavg)).val();
    for (int b = 0; b < B; ++b)
      for (int t = 0; t < T; ++t)
        for (int r = 0; r < R; ++r)
          for (int d = 0; d < D; ++d) {
            int tm = std::max(0, t - 1), tp = std::min(T - 1, t + 1);
            double sm = 0.25 * a.at({b, tm, r, d}) + 0.5 * a.at({b, t, r, d}) +
                        0.25 * a.at({b, tp, r, d});
            double want = wref.at({b, r, d}) + sm + wavg.at({r, d});
            worst = std::max(worst, std::fabs(out.at({b, t, r, d}) - want));
          }
  }
  gate.check(1, "latent smoothing at init equals the 3-tap convolution oracle", worst <= 1e-6,
             "max err " + fmt(worst));

  Tensor u({3}, {1, 0, 0}), v({3}, {0, 1, 0}), nu({3}, {-1, 0, 0});
  bool ends = sync::sync_distance(u, u) == 0.0 && sync::sync_distance(u, v) == 1.0 &&
              sync::sync_distance(u, nu) == 2.0;
  gate.check(1, "cosine distance endpoints {0, 1, 2}", ends);
}

void criterion_2(Gate& gate) {
  // Rasterizer vs brute-force point-in-polygon, bit identical, 20 meshes.
  bool raster_ok = true;
  {
    Rng rng(21);
    for (int it = 0; it < 20; ++it) {
      geom::FaceMesh mesh;
      int tris = 4 + static_cast<int>(rng.below(5));
      for (int t = 0; t < tris; ++t) {
        int base = static_cast<int>(mesh.vertices.size());
        for (int k = 0; k < 3; ++k) {
          mesh.vertices.push_back({rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), 0.1});
          mesh.labels.push_back(geom::VertexLabel::LipLower);
        }
        mesh.triangles.push_back({base, base + 1, base + 2});
      }
      int res = 24 + static_cast<int>(rng.below(3)) * 8;
      geom::LipMask fast = geom::rasterize_mask(mesh, res, res);
      geom::LipMask slow = raster_oracle(mesh, res, res);
      raster_ok = raster_ok && fast.grid == slow.grid;
    }
  }
  gate.check(2, "mask rasterizer bit-identical to point-in-polygon oracle on 20 meshes", raster_ok);

  // Modulated convolution vs dense scale->demodulate->convolve oracle.
  double conv_err = 0.0;
  {
    nn::ParamStore store;
    Rng rng(22);
    models::ModulatedConv2d conv(store, "m", rng, 6, 4, 5, 3, true);
    Rng drng(23);
    Tensor x = random_tensor(drng, {2, 4, 6, 6}, -1, 1);
    Tensor styles = random_tensor(drng, {2, 6}, -1, 1);
    ad::Tape tape;
    nn::Binder bind(tape, true);
    const Tensor& y = conv.apply(bind, tape.input(x), tape.input(styles)).val();
    for (int n = 0; n < 2; ++n) {
      double s[4];
      for (int c = 0; c < 4; ++c) {
        s[c] = conv.affine_b->value[c];
        for (int d = 0; d < 6; ++d) s[c] += conv.affine_w->value.at({c, d}) * styles.at({n, d});
      }
      Tensor wm({5, 4, 3, 3});
      for (int o = 0; o < 5; ++o)
        for (int c = 0; c < 4; ++c)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
              wm.at({o, c, i, j}) = conv.weight->value.at({o, c, i, j}) * s[c];
      for (int o = 0; o < 5; ++o) {
        double ss = 0;
        for (int c = 0; c < 4; ++c)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) ss += wm.at({o, c, i, j}) * wm.at({o, c, i, j});
        double dmod = 1.0 / std::sqrt(ss + 1e-8);
        for (int c = 0; c < 4; ++c)
          for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) wm.at({o, c, i, j}) *= dmod;
      }
      for (int o = 0; o < 5; ++o)
        for (int r = 0; r < 6; ++r)
          for (int col = 0; col < 6; ++col) {
            double acc = 0;
            for (int c = 0; c < 4; ++c)
              for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                  int rr = r - 1 + i, cc = col - 1 + j;
                  if (rr < 0 || rr >= 6 || cc < 0 || cc >= 6) continue;
                  acc += x.at({n, c, rr, cc}) * wm.at({o, c, i, j});
                }
            conv_err = std::max(conv_err, std::fabs(y.at({n, o, r, col}) - acc));
          }
    }
  }
  gate.check(2, "modulated convolution matches the dense oracle", conv_err <= 1e-5,
             "max err " + fmt(conv_err));

  // Perceptual loss vs layer-by-layer oracle on a 4x4 pair.
  double perc_err = 0.0;
  {
    cfg::GlobalConfig c = gradcheck_config();
    models::Generator gen(c, 5);
    Rng rng(24);
    Tensor x = random_tensor(rng, {2, 3, 4, 4}, 0, 1);
    Tensor y = random_tensor(rng, {2, 3, 4, 4}, 0, 1);
    double got;
    {
      ad::Tape tape;
      nn::Binder bind(tape, true);
      got = gen.perceptual().loss(bind, tape.input(x), tape.input(y)).val()[0];
    }
    auto conv_lrelu = [&](const Tensor& in, const Tensor& w, const Tensor& bias) {
      int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3), O = w.dim(0);
      Tensor out({N, O, H, W});
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o)
          for (int r = 0; r < H; ++r)
            for (int col = 0; col < W; ++col) {
              double acc = bias[o];
              for (int ic = 0; ic < C; ++ic)
                for (int i = 0; i < 3; ++i)
                  for (int j = 0; j < 3; ++j) {
                    int rr = r - 1 + i, cc = col - 1 + j;
                    if (rr < 0 || rr >= H || cc < 0 || cc >= W) continue;
                    acc += in.at({n, ic, rr, cc}) * w.at({o, ic, i, j});
                  }
              out.at({n, o, r, col}) = acc >= 0 ? acc : 0.2 * acc;
            }
      return out;
    };
    auto pool2 = [](const Tensor& in) {
      int N = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
      Tensor out({N, C, H / 2, W / 2});
      for (int n = 0; n < N; ++n)
        for (int ch = 0; ch < C; ++ch)
          for (int r = 0; r < H / 2; ++r)
            for (int col = 0; col < W / 2; ++col)
              out.at({n, ch, r, col}) =
                  0.25 * (in.at({n, ch, 2 * r, 2 * col}) + in.at({n, ch, 2 * r, 2 * col + 1}) +
                          in.at({n, ch, 2 * r + 1, 2 * col}) + in.at({n, ch, 2 * r + 1, 2 * col + 1}));
      return out;
    };
    double oracle = 0.0;
    Tensor xs = x, ys = y;
    for (int sidx = 0; sidx < 3; ++sidx) {
      if (sidx > 0) {
        xs = pool2(xs);
        ys = pool2(ys);
      }
      Tensor fx = xs, fy = ys;
      for (int l = 0; l < 4; ++l) {
        const nn::Param* w = gen.params().find("perc.conv" + std::to_string(l) + ".weight");
        const nn::Param* b = gen.params().find("perc.conv" + std::to_string(l) + ".bias");
        fx = conv_lrelu(fx, w->value, b->value);
        fy = conv_lrelu(fy, w->value, b->value);
        for (int n = 0; n < 2; ++n) {
          double ss = 0;
          int64_t per = fx.size() / 2;
          for (int64_t i = 0; i < per; ++i) {
            double dd = fx[n * per + i] - fy[n * per + i];
            ss += dd * dd;
          }
          oracle += std::sqrt(ss) / 2.0;
        }
      }
    }
    perc_err = std::fabs(got - oracle);
  }
  gate.check(2, "perceptual loss matches the direct feature-distance oracle", perc_err <= 1e-5,
             "err " + fmt(perc_err));

  // PSNR / SSIM / LMD direct-formula oracles, 100 random pairs.
  double psnr_err = 0, ssim_err = 0, lmd_err = 0;
  {
    Rng rng(25);
    for (int it = 0; it < 100; ++it) {
      Tensor a = random_tensor(rng, {3, 16, 16}, 0, 1);
      Tensor b = random_tensor(rng, {3, 16, 16}, 0, 1);
      double mse = 0;
      for (int64_t i = 0; i < a.size(); ++i) mse += (a[i] - b[i]) * (a[i] - b[i]);
      mse /= static_cast<double>(a.size());
      psnr_err = std::max(psnr_err, std::fabs(metrics::psnr(a, b) + 10.0 * std::log10(mse)));

      std::vector<std::array<double, 2>> p, q;
      double want = 0;
      for (int k = 0; k < 8; ++k) {
        p.push_back({rng.uniform(0, 64), rng.uniform(0, 64)});
        q.push_back({rng.uniform(0, 64), rng.uniform(0, 64)});
        want += std::hypot(p.back()[0] - q.back()[0], p.back()[1] - q.back()[1]) / 8.0;
      }
      lmd_err = std::max(lmd_err, std::fabs(metrics::lmd(p, q) - want));
    }
    for (int it = 0; it < 100; ++it) {
      Tensor a = random_tensor(rng, {1, 16, 16}, 0, 1);
      Tensor b = random_tensor(rng, {1, 16, 16}, 0, 1);
      ssim_err = std::max(ssim_err, std::fabs(metrics::ssim(a, b) - ssim_oracle(a, b)));
    }
  }
  gate.check(2, "PSNR matches its direct formula on 100 pairs", psnr_err <= 1e-6, "err " + fmt(psnr_err));
  gate.check(2, "SSIM matches its direct formula on 100 pairs", ssim_err <= 1e-6, "err " + fmt(ssim_err));
  gate.check(2, "LMD matches its direct formula", lmd_err <= 1e-9, "err " + fmt(lmd_err));
}

void criterion_3(Gate& gate) {
  train::GradCheckResult r = train::gradient_check(gradcheck_config(), 50, 20260810);
  gate.check(3, "analytic vs central-difference gradients of the combined objective",
             r.checked == 50 && r.max_rel_err < 1e-3,
             "50 params, max rel err " + fmt(r.max_rel_err));
}

void criterion_4(Gate& gate, const std::string& workspace) {
  // TV contraction at init over 100 random trajectories.
  bool tv_ok = true;
  {
    cfg::GlobalConfig c = gradcheck_config();
    models::Generator g(c, 7);
    Rng rng(41);
    const int R = 2 * c.levels, D = c.style_dim;
    for (int trial = 0; trial < 100; ++trial) {
      Tensor traj = random_tensor(rng, {1, 7, R, D}, -2, 2);
      ad::Tape tape;
      nn::Binder bind(tape, true);
      const Tensor& sm = g.smoother()
                             .apply(bind, tape.input(traj), tape.input(Tensor({1, R, D})),
                                    tape.input(Tensor({R, D})))
                             .val();
      double tv_in = 0, tv_out = 0;
      for (int t = 0; t + 1 < 7; ++t)
        for (int r = 0; r < R; ++r)
          for (int d = 0; d < D; ++d) {
            tv_in += std::fabs(traj.at({0, t + 1, r, d}) - traj.at({0, t, r, d}));
            tv_out += std::fabs(sm.at({0, t + 1, r, d}) - sm.at({0, t, r, d}));
          }
      tv_ok = tv_ok && tv_out <= tv_in + 1e-9;
    }
  }
  gate.check(4, "temporal smoothing contracts total variation at init (100 trajectories)", tv_ok);

  bool alpha_ok = false;
  try {
    cfg::GlobalConfig bad = full_config();
    bad.mals.alpha = {0.4, 0.4, 0.4};
    bad.validate();
  } catch (const Error& e) {
    alpha_ok = e.code() == ErrorCode::InvalidConfig;
  }
  gate.check(4, "moving-average weights must sum to 1 (hard config invariant)", alpha_ok);

  bool convex_ok = true;
  {
    Rng rng(42);
    ad::Tape tape;
    Tensor enc = random_tensor(rng, {2, 5, 6, 6}, -3, 3);
    Tensor gen = random_tensor(rng, {2, 5, 6, 6}, -3, 3);
    Tensor s = random_tensor(rng, {2, 1, 6, 6}, 0.001, 0.999);
    const Tensor& f = models::fuse(tape.input(s), tape.input(enc), tape.input(gen)).val();
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 5; ++c)
        for (int i = 0; i < 6; ++i)
          for (int j = 0; j < 6; ++j) {
            double lo = std::min(enc.at({n, c, i, j}), gen.at({n, c, i, j}));
            double hi = std::max(enc.at({n, c, i, j}), gen.at({n, c, i, j}));
            double v = f.at({n, c, i, j});
            convex_ok = convex_ok && v >= lo - 1e-12 && v <= hi + 1e-12;
          }
  }
  gate.check(4, "fusion stays within the encoded/generated envelope", convex_ok);

  bool agree_ok = true;
  try {
    models::Generator g(full_config(), 1);  // ctor asserts the agreement
    const auto& res = g.face_encoder().level_resolutions();
    agree_ok = res.size() == 4 && res[0] == 8 && res[3] == 64;
  } catch (const Error&) {
    agree_ok = false;
  }
  gate.check(4, "pyramid/decoder resolution agreement holds at construction", agree_ok);

  // Frozen-parameter invariants on a tiny corpus.
  bool frozen_ok = true;
  {
    cfg::GlobalConfig c = tiny_config();
    fs::path dir = fs::path(workspace) / "tiny_corpus";
    if (!fs::exists(dir / "corpus.json")) synth::generate_corpus(dir.string(), 4, 99, 1.2, 2, 32);
    data::ClipCache cache(dir.string(), c);
    sync::SyncExpert expert(c, 3);
    auto expert_state = [&]() {
      std::vector<Tensor> v;
      for (nn::Param* p : expert.params().all()) v.push_back(p->value);
      return v;
    };
    std::vector<Tensor> before = expert_state();
    models::Generator gen(c, 9);
    train::Trainer trainer(gen, &expert, cache, nullptr);
    trainer.run(2);
    std::vector<Tensor> after = expert_state();
    for (size_t i = 0; i < before.size(); ++i)
      for (int64_t k = 0; k < before[i].size(); ++k)
        frozen_ok = frozen_ok && before[i][k] == after[i][k];

    // Adaptation freezes encoders, smoother, expert, w_avg.
    adapt::TargetClip target(synth::render_clip(synth::sample_identity(7), 5.0, 13, 32), c);
    uint64_t fp = adapt::frozen_fingerprint(gen);
    adapt::AdaptOptions opts;
    opts.steps = 2;
    opts.batch_windows = 2;
    adapt::adapt(gen, expert, target, cache, cache.split("train"), opts, nullptr);
    frozen_ok = frozen_ok && adapt::frozen_fingerprint(gen) == fp;
    std::vector<Tensor> after2 = expert_state();
    for (size_t i = 0; i < before.size(); ++i)
      for (int64_t k = 0; k < before[i].size(); ++k)
        frozen_ok = frozen_ok && before[i][k] == after2[i][k];
  }
  gate.check(4, "frozen parameters stay bit-identical through training and adaptation", frozen_ok);
}

}  // namespace

// Criteria 5-9 live in acceptance_heavy.inc to keep this file navigable.
#include "acceptance_heavy.inc"

int main(int argc, char** argv) {
  std::string workspace = (fs::temp_directory_path() / "lipsync_acceptance").string();
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    std::string a = argv[i];
    if (a == "--workspace" && i + 1 < argc) workspace = argv[++i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    }
  }
  fs::create_directories(workspace);
  std::cout << "acceptance workspace: " << workspace << std::endl;

  Gate gate;
  auto want = [&](int n) { return only.empty() || only.count(n) > 0; };

  try {
    if (want(1)) criterion_1(gate);
    if (want(2)) criterion_2(gate);
    if (want(3)) criterion_3(gate);
    if (want(4)) criterion_4(gate, workspace);
    Artifacts art;
    if (want(5) || want(6) || want(7) || want(8)) art = prepare_corpus(workspace);
    if (want(5)) criterion_5(gate, art);
    if (want(6)) criterion_6(gate, art);
    if (want(7)) criterion_7(gate, art);
    if (want(8)) criterion_8(gate, art);
    if (want(9)) criterion_9(gate, workspace);
  } catch (const std::exception& e) {
    std::cout << "[FAIL] acceptance aborted: " << e.what() << std::endl;
    return 1;
  }

  std::cout << "\n" << gate.passed << " passed, " << gate.failed << " failed" << std::endl;
  return gate.failed == 0 ? 0 : 1;
}
