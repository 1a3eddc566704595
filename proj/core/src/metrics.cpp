#include "lipsync/metrics.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>

#include "lipsync/mel.hpp"
#include "lipsync/training.hpp"

namespace lipsync::metrics {

using nlohmann::json;

double psnr(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), ErrorCode::InvalidArgument, "psnr: shape mismatch");
  double mse = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, -10.0 * std::log10(mse));
}

namespace {

// 11x11 Gaussian, sigma 1.5, normalized to sum 1.
std::array<double, 11> gaussian_taps() {
  std::array<double, 11> w{};
  double s = 0.0;
  for (int i = 0; i < 11; ++i) {
    double x = i - 5.0;
    w[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * 1.5 * 1.5));
    s += w[static_cast<size_t>(i)];
  }
  for (double& v : w) v /= s;
  return w;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b) && a.rank() == 3, ErrorCode::InvalidArgument, "ssim: shape mismatch");
  const int C = a.dim(0), H = a.dim(1), W = a.dim(2);
  require(H >= 11 && W >= 11, ErrorCode::InvalidArgument, "ssim: frame smaller than the window");
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  std::array<double, 11> g = gaussian_taps();

  double acc = 0.0;
  int64_t count = 0;
  std::vector<double> row_ax(static_cast<size_t>(W)), row_bx(static_cast<size_t>(W)),
      row_aa(static_cast<size_t>(W)), row_bb(static_cast<size_t>(W)), row_ab(static_cast<size_t>(W));
  for (int ch = 0; ch < C; ++ch) {
    const double* pa = a.data() + static_cast<int64_t>(ch) * H * W;
    const double* pb = b.data() + static_cast<int64_t>(ch) * H * W;
    for (int y = 0; y + 11 <= H; ++y) {
      // Vertical pass for this window row band.
      for (int x = 0; x < W; ++x) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int k = 0; k < 11; ++k) {
          double va = pa[(y + k) * W + x], vb = pb[(y + k) * W + x];
          double gk = g[static_cast<size_t>(k)];
          sa += gk * va;
          sb += gk * vb;
          saa += gk * va * va;
          sbb += gk * vb * vb;
          sab += gk * va * vb;
        }
        row_ax[static_cast<size_t>(x)] = sa;
        row_bx[static_cast<size_t>(x)] = sb;
        row_aa[static_cast<size_t>(x)] = saa;
        row_bb[static_cast<size_t>(x)] = sbb;
        row_ab[static_cast<size_t>(x)] = sab;
      }
      for (int x = 0; x + 11 <= W; ++x) {
        double mu_a = 0, mu_b = 0, raa = 0, rbb = 0, rab = 0;
        for (int k = 0; k < 11; ++k) {
          double gk = g[static_cast<size_t>(k)];
          mu_a += gk * row_ax[static_cast<size_t>(x + k)];
          mu_b += gk * row_bx[static_cast<size_t>(x + k)];
          raa += gk * row_aa[static_cast<size_t>(x + k)];
          rbb += gk * row_bb[static_cast<size_t>(x + k)];
          rab += gk * row_ab[static_cast<size_t>(x + k)];
        }
        double var_a = raa - mu_a * mu_a;
        double var_b = rbb - mu_b * mu_b;
        double cov = rab - mu_a * mu_b;
        double v = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) /
                   ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        acc += v;
        ++count;
      }
    }
  }
  return acc / static_cast<double>(count);
}

double lmd(const std::vector<std::array<double, 2>>& pred,
           const std::vector<std::array<double, 2>>& truth) {
  require(pred.size() == truth.size() && !pred.empty(), ErrorCode::InvalidArgument,
          "lmd: keypoint count mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i)
    acc += std::hypot(pred[i][0] - truth[i][0], pred[i][1] - truth[i][1]);
  return acc / static_cast<double>(pred.size());
}

LseScores lse_scores(const std::vector<Tensor>& frames, const Tensor& mel,
                     const sync::SyncExpert& expert, int stride) {
  const int T = 5;
  require(static_cast<int>(frames.size()) >= T, ErrorCode::InvalidArgument,
          "lse_scores: clip shorter than one window");
  const cfg::GlobalConfig& cfg = expert.config();
  LseScores out;
  int count = 0;
  for (int t0 = 0; t0 + T <= static_cast<int>(frames.size()); t0 += stride) {
    std::vector<Tensor> window(frames.begin() + t0, frames.begin() + t0 + T);
    Tensor fv = expert.embed_video_value(window);
    Tensor fa = expert.embed_audio_value(audio::audio_segment(mel, t0 + T / 2, cfg.mel));
    double d_true = sync::sync_distance(fv, fa);
    out.lse_d += d_true;

    std::vector<double> cosines;
    for (int off = -15; off <= 15; ++off) {
      int center = t0 + T / 2 + off;
      if (center < 0) continue;
      Tensor fo = expert.embed_audio_value(audio::audio_segment(mel, center, cfg.mel));
      cosines.push_back(1.0 - sync::sync_distance(fv, fo));
    }
    std::nth_element(cosines.begin(), cosines.begin() + cosines.size() / 2, cosines.end());
    double median = cosines[cosines.size() / 2];
    out.lse_c += (1.0 - d_true) - median;
    ++count;
  }
  out.lse_d /= count;
  out.lse_c /= count;
  return out;
}

std::string MetricReport::to_json_text() const {
  json j;
  j["checkpoint"] = checkpoint_id;
  j["split"] = split;
  auto clip_json = [](const ClipMetrics& m) {
    return json{{"clip", m.clip},   {"psnr", m.psnr},   {"ssim", m.ssim},
                {"lmd", m.lmd},     {"lse_d", m.lse_d}, {"lse_c", m.lse_c},
                {"id_consistency", m.id_consistency}};
  };
  j["clips"] = json::array();
  for (const ClipMetrics& m : clips) j["clips"].push_back(clip_json(m));
  json mean_j = clip_json(mean);
  mean_j.erase("clip");
  j["psnr"] = mean.psnr;
  j["ssim"] = mean.ssim;
  j["lmd"] = mean.lmd;
  j["lse_d"] = mean.lse_d;
  j["lse_c"] = mean.lse_c;
  j["id_consistency"] = mean.id_consistency;
  return j.dump(1);
}

MetricReport evaluate(models::Generator& gen, const sync::SyncExpert& expert,
                      data::ClipCache& cache, const std::string& split, const EvalOptions& opts) {
  std::vector<int> pool = cache.split(split);
  require(!pool.empty(), ErrorCode::InvalidArgument, "evaluate: empty split " + split);
  if (opts.max_clips > 0 && static_cast<int>(pool.size()) > opts.max_clips)
    pool.resize(static_cast<size_t>(opts.max_clips));

  MetricReport report;
  report.split = split;

  for (int idx : pool) {
    const synth::VideoClip& clip = cache.clip(idx);
    std::vector<Tensor> generated =
        train::generate_sequence(gen, nullptr, cache, idx, cache.mel(idx));
    const int F = static_cast<int>(generated.size());

    ClipMetrics m;
    m.clip = cache.manifest().entries[static_cast<size_t>(idx)].dir;
    for (int t = 0; t < F; ++t) {
      Tensor truth = cache.frame_tensor(idx, t);
      m.psnr += psnr(generated[static_cast<size_t>(t)], truth);
      m.ssim += ssim(generated[static_cast<size_t>(t)], truth);
      synth::MouthFit fit = synth::fit_mouth(generated[static_cast<size_t>(t)], clip.identity,
                                             clip.meta[static_cast<size_t>(t)].pose, false);
      auto pred = synth::mouth_keypoints_px(clip.identity, clip.meta[static_cast<size_t>(t)].pose,
                                            fit.openness, clip.height, clip.width);
      m.lmd += lmd(pred, clip.meta[static_cast<size_t>(t)].mouth_keypoints);
    }
    m.psnr /= F;
    m.ssim /= F;
    m.lmd /= F;

    LseScores lse = lse_scores(generated, cache.mel(idx), expert);
    m.lse_d = lse.lse_d;
    m.lse_c = lse.lse_c;

    double hue_err = 0.0, width_err = 0.0;
    int id_samples = 0;
    for (int t = 0; t < F; t += opts.id_sample_stride) {
      const auto& meta = clip.meta[static_cast<size_t>(t)];
      double hue = synth::recover_skin_hue(generated[static_cast<size_t>(t)], clip.identity, meta.pose);
      synth::MouthFit fit =
          synth::fit_mouth(generated[static_cast<size_t>(t)], clip.identity, meta.pose, true);
      hue_err += std::fabs(hue - clip.identity.skin_hue);
      width_err += std::fabs(fit.mouth_width - clip.identity.mouth_width);
      ++id_samples;
    }
    m.id_consistency = 0.5 * (hue_err + width_err) / std::max(1, id_samples);

    report.clips.push_back(m);
  }

  ClipMetrics& mean = report.mean;
  for (const ClipMetrics& m : report.clips) {
    mean.psnr += m.psnr;
    mean.ssim += m.ssim;
    mean.lmd += m.lmd;
    mean.lse_d += m.lse_d;
    mean.lse_c += m.lse_c;
    mean.id_consistency += m.id_consistency;
  }
  double n = static_cast<double>(report.clips.size());
  mean.psnr /= n;
  mean.ssim /= n;
  mean.lmd /= n;
  mean.lse_d /= n;
  mean.lse_c /= n;
  mean.id_consistency /= n;
  return report;
}

}  // namespace lipsync::metrics
