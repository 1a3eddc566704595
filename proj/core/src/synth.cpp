#include "lipsync/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace lipsync::synth {

namespace fs = std::filesystem;
using nlohmann::json;
using geom::PoseParams;
using geom::Vec2;
using geom::Vec3;

namespace {

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  auto spl = [](uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  };
  return spl(spl(a ^ spl(b)) ^ spl(c));
}

// Canonical face layout in dome coordinates (u,v in the unit disk, y down).
struct FaceLayout {
  double ax, ay, az;       // dome semi-axes in canonical frame units
  double vm = 0.42;        // mouth center (v)
  double lv = 0.16;        // outer lip half-height (v)
  double lu;               // outer lip half-width (u)
  double ou;               // cavity half-width (u)
  double max_open = 0.13;  // cavity half-height at openness 1 (v)
  double eu;               // eye center offset (u)
  double ev = -0.35;       // eye center (v)

  FaceLayout(const IdentityParams& id, double mouth_width_override = -1.0) {
    ax = 0.34 * id.face_aspect;
    ay = 0.38;
    az = 0.18;
    double mw = mouth_width_override > 0.0 ? mouth_width_override : id.mouth_width;
    lu = mw / (2.0 * ax);
    ou = 0.78 * lu;
    eu = id.eye_spacing / (2.0 * ax);
  }

  double cavity_half_height(double openness) const {
    return std::max(0.015, openness * max_open);
  }

  Vec3 dome_point(double u, double v) const {
    double r2 = u * u + v * v;
    double z = r2 >= 1.0 ? 0.0 : az * std::sqrt(1.0 - r2);
    return {ax * u, ay * v, z};
  }
};

struct Rgb {
  double r, g, b;
};

constexpr Rgb kSkinA{0.95, 0.82, 0.70};
constexpr Rgb kSkinB{0.52, 0.34, 0.22};
constexpr Rgb kLip{0.65, 0.33, 0.30};
constexpr Rgb kCavity{0.07, 0.05, 0.05};
constexpr Rgb kEye{0.10, 0.12, 0.14};
constexpr Rgb kBackground{0.13, 0.15, 0.17};

double shade_of(double z, double az) { return 0.78 + 0.22 * (z / az); }

Rgb skin_color(double hue) {
  return {kSkinA.r + hue * (kSkinB.r - kSkinA.r), kSkinA.g + hue * (kSkinB.g - kSkinA.g),
          kSkinA.b + hue * (kSkinB.b - kSkinA.b)};
}

// Face texture over dome coordinates. Crisp analytic shapes; the cavity is
// unshaded so openness recovery is not confounded by pose shading.
Rgb face_texture(const FaceLayout& L, double hue, double openness, double u, double v) {
  double du = u, dv = v - L.vm;
  double ov = L.cavity_half_height(openness);
  double cav = (du / L.ou) * (du / L.ou) + (dv / ov) * (dv / ov);
  if (cav <= 1.0) return kCavity;
  double lip = (du / L.lu) * (du / L.lu) + (dv / L.lv) * (dv / L.lv);
  if (lip <= 1.0) return kLip;
  for (double s : {-1.0, 1.0}) {
    double eu = (u - s * L.eu) / 0.11, ev = (v - L.ev) / 0.09;
    if (eu * eu + ev * ev <= 1.0) return kEye;
  }
  if (v >= -0.02 && v <= 0.14 && std::fabs(u) <= 0.10 * (v + 0.02) / 0.16) {
    Rgb c = skin_color(hue);
    return {c.r * 0.85, c.g * 0.85, c.b * 0.85};
  }
  return skin_color(hue);
}

struct DomeVertex {
  double u, v;  // dome coordinates (rim-clamped)
  Vec3 p;       // canonical position
};

struct DomeMesh {
  std::vector<DomeVertex> vertices;
  std::vector<geom::Tri> triangles;
};

DomeMesh build_dome(const FaceLayout& L, int grid = 32) {
  DomeMesh m;
  int n = grid + 1;
  std::vector<bool> inside(static_cast<size_t>(n) * n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) {
      double u = 2.0 * i / grid - 1.0;
      double v = 2.0 * j / grid - 1.0;
      double r = std::hypot(u, v);
      inside[static_cast<size_t>(j) * n + i] = r < 1.0;
      if (r > 1.0) {
        u /= r;
        v /= r;
      }
      m.vertices.push_back({u, v, L.dome_point(u, v)});
    }
  }
  for (int j = 0; j < grid; ++j) {
    for (int i = 0; i < grid; ++i) {
      int a = j * n + i, b = a + 1, c = a + n, d = c + 1;
      int in_count = inside[static_cast<size_t>(a)] + inside[static_cast<size_t>(b)] +
                     inside[static_cast<size_t>(c)] + inside[static_cast<size_t>(d)];
      if (in_count == 0) continue;
      m.triangles.push_back({a, b, d});
      m.triangles.push_back({a, d, c});
    }
  }
  return m;
}

struct ProjectedVertex {
  Vec2 px;
  double u, v, z;
};

Vec2 to_px(double x, double y, int H, int W) {
  return {(x + 0.5) * W, (y + 0.5) * H};
}

// Gouraud-free textured rasterization with a z-buffer; interpolates dome
// coordinates per pixel and evaluates the analytic texture there.
void raster_face(const FaceLayout& L, double hue, double openness, const DomeMesh& dome,
                 const PoseParams& pose, Tensor& frame) {
  int H = frame.dim(1), W = frame.dim(2);
  int64_t plane = static_cast<int64_t>(H) * W;
  for (int64_t i = 0; i < plane; ++i) {
    frame[i] = kBackground.r;
    frame[plane + i] = kBackground.g;
    frame[2 * plane + i] = kBackground.b;
  }
  std::vector<double> zbuf(static_cast<size_t>(plane), -1e9);

  std::array<double, 9> R = geom::rotation_matrix(pose.euler);
  std::vector<ProjectedVertex> pv(dome.vertices.size());
  for (size_t i = 0; i < dome.vertices.size(); ++i) {
    const Vec3& p = dome.vertices[i].p;
    double x = R[0] * p[0] + R[1] * p[1] + R[2] * p[2] + pose.translation[0];
    double y = R[3] * p[0] + R[4] * p[1] + R[5] * p[2] + pose.translation[1];
    double z = R[6] * p[0] + R[7] * p[1] + R[8] * p[2] + pose.translation[2];
    pv[i] = {to_px(x, y, H, W), dome.vertices[i].u, dome.vertices[i].v, z};
  }

  for (const geom::Tri& t : dome.triangles) {
    ProjectedVertex a = pv[static_cast<size_t>(t[0])];
    ProjectedVertex b = pv[static_cast<size_t>(t[1])];
    ProjectedVertex c = pv[static_cast<size_t>(t[2])];
    double area2 = geom::edge_cross(a.px, b.px, c.px);
    if (area2 == 0.0) continue;
    if (area2 < 0.0) {
      std::swap(b, c);
      area2 = -area2;
    }
    int c0 = std::max(0, static_cast<int>(std::floor(std::min({a.px.x, b.px.x, c.px.x}) - 0.5)));
    int c1 = std::min(W - 1, static_cast<int>(std::ceil(std::max({a.px.x, b.px.x, c.px.x}))));
    int r0 = std::max(0, static_cast<int>(std::floor(std::min({a.px.y, b.px.y, c.px.y}) - 0.5)));
    int r1 = std::min(H - 1, static_cast<int>(std::ceil(std::max({a.px.y, b.px.y, c.px.y}))));
    bool iab = geom::edge_includes_boundary(a.px, b.px);
    bool ibc = geom::edge_includes_boundary(b.px, c.px);
    bool ica = geom::edge_includes_boundary(c.px, a.px);
    for (int row = r0; row <= r1; ++row) {
      for (int col = c0; col <= c1; ++col) {
        Vec2 p{col + 0.5, row + 0.5};
        double e_ab = geom::edge_cross(a.px, b.px, p);
        double e_bc = geom::edge_cross(b.px, c.px, p);
        double e_ca = geom::edge_cross(c.px, a.px, p);
        bool in = (e_ab > 0.0 || (e_ab == 0.0 && iab)) && (e_bc > 0.0 || (e_bc == 0.0 && ibc)) &&
                  (e_ca > 0.0 || (e_ca == 0.0 && ica));
        if (!in) continue;
        double wa = e_bc / area2, wb = e_ca / area2, wc = e_ab / area2;
        double z = wa * a.z + wb * b.z + wc * c.z;
        int64_t idx = static_cast<int64_t>(row) * W + col;
        if (z <= zbuf[static_cast<size_t>(idx)]) continue;
        zbuf[static_cast<size_t>(idx)] = z;
        double u = wa * a.u + wb * b.u + wc * c.u;
        double v = wa * a.v + wb * b.v + wc * c.v;
        Rgb color = face_texture(L, hue, openness, u, v);
        double r2 = u * u + v * v;
        double zdome = r2 >= 1.0 ? 0.0 : L.az * std::sqrt(1.0 - r2);
        double s = shade_of(zdome, L.az);
        bool in_cavity = color.r == kCavity.r && color.g == kCavity.g && color.b == kCavity.b;
        if (!in_cavity) {
          color = {color.r * s, color.g * s, color.b * s};
        }
        frame[idx] = color.r;
        frame[plane + idx] = color.g;
        frame[2 * plane + idx] = color.b;
      }
    }
  }
}

Vec2 canonical_to_px(const FaceLayout& L, const PoseParams& pose, double u, double v, int H, int W) {
  Vec3 p = L.dome_point(u, v);
  std::array<double, 9> R = geom::rotation_matrix(pose.euler);
  double x = R[0] * p[0] + R[1] * p[1] + R[2] * p[2] + pose.translation[0];
  double y = R[3] * p[0] + R[4] * p[1] + R[5] * p[2] + pose.translation[1];
  return to_px(x, y, H, W);
}

}  // namespace

void IdentityParams::validate() const {
  require(skin_hue >= 0.0 && skin_hue <= 1.0, ErrorCode::InvalidArgument, "identity: skin_hue range");
  require(face_aspect >= 0.7 && face_aspect <= 1.3, ErrorCode::InvalidArgument,
          "identity: face_aspect range");
  require(mouth_width >= 0.15 && mouth_width <= 0.35, ErrorCode::InvalidArgument,
          "identity: mouth_width range");
  require(eye_spacing >= 0.2 && eye_spacing <= 0.4, ErrorCode::InvalidArgument,
          "identity: eye_spacing range");
}

IdentityParams sample_identity(int64_t seed) {
  Rng rng(static_cast<uint64_t>(seed));
  IdentityParams id;
  id.skin_hue = rng.uniform();
  id.face_aspect = rng.uniform(0.7, 1.3);
  id.mouth_width = rng.uniform(0.15, 0.35);
  id.eye_spacing = rng.uniform(0.2, 0.4);
  id.seed = seed;
  return id;
}

Tensor render_frame(const IdentityParams& identity, const PoseParams& pose, double openness,
                    int height, int width) {
  identity.validate();
  FaceLayout L(identity);
  DomeMesh dome = build_dome(L);
  Tensor frame({3, height, width});
  raster_face(L, identity.skin_hue, clamp01(openness), dome, pose, frame);
  return frame;
}

std::vector<std::array<double, 2>> mouth_keypoints_px(const IdentityParams& identity,
                                                      const PoseParams& pose, double openness,
                                                      int height, int width) {
  FaceLayout L(identity);
  double ov = L.cavity_half_height(clamp01(openness));
  std::array<std::array<double, 2>, kMouthKeypoints> canon = {{
      {-L.ou, L.vm},
      {L.ou, L.vm},
      {0.0, L.vm - ov},
      {0.0, L.vm + ov},
      {-L.lu, L.vm},
      {L.lu, L.vm},
      {0.0, L.vm - L.lv},
      {0.0, L.vm + L.lv},
  }};
  std::vector<std::array<double, 2>> out;
  out.reserve(kMouthKeypoints);
  for (const auto& c : canon) {
    Vec2 p = canonical_to_px(L, pose, c[0], c[1], height, width);
    out.push_back({p.x, p.y});
  }
  return out;
}

std::array<double, 2> nose_px(const IdentityParams& identity, const PoseParams& pose, int height,
                              int width) {
  FaceLayout L(identity);
  Vec2 p = canonical_to_px(L, pose, 0.0, 0.06, height, width);
  return {p.x, p.y};
}

geom::MeshTemplate build_mask_template(const IdentityParams& identity, int expression_dim) {
  require(expression_dim >= 1, ErrorCode::InvalidArgument, "expression_dim must be >= 1");
  FaceLayout L(identity);

  // Inner box covers the mouth with margin; the outer ring is cheek /
  // upper-face padding that normalize_and_select must discard.
  const double u_half = L.lu + 0.10;
  const double v_top = L.vm - (L.lv + 0.06);
  const double v_bot = L.vm + L.lv + 0.14;
  const double ring = 0.06;
  const int nu = 13, nv = 11;  // inner grid
  const int gu = nu + 2, gv = nv + 2;

  geom::MeshTemplate tmpl;
  auto u_of = [&](int i) {
    double t = (static_cast<double>(i - 1)) / (nu - 1);
    return -u_half + t * 2.0 * u_half + (i == 0 ? -ring : (i == gu - 1 ? ring : 0.0));
  };
  auto v_of = [&](int j) {
    double t = (static_cast<double>(j - 1)) / (nv - 1);
    return v_top + t * (v_bot - v_top) + (j == 0 ? -ring : (j == gv - 1 ? ring : 0.0));
  };

  for (int j = 0; j < gv; ++j) {
    for (int i = 0; i < gu; ++i) {
      double u = u_of(i), v = v_of(j);
      double r = std::hypot(u, v);
      if (r > 0.995) {
        u *= 0.995 / r;
        v *= 0.995 / r;
      }
      tmpl.base.vertices.push_back(L.dome_point(u, v));
      geom::VertexLabel label;
      bool on_ring = i == 0 || j == 0 || i == gu - 1 || j == gv - 1;
      if (on_ring) {
        label = j == 0 ? geom::VertexLabel::UpperFace : geom::VertexLabel::Cheek;
      } else if (v < L.vm - 0.2 * L.lv) {
        label = geom::VertexLabel::LipUpper;
      } else if (v <= L.vm + 0.5 * L.lv) {
        label = geom::VertexLabel::LipLower;
      } else {
        label = geom::VertexLabel::Jaw;
      }
      tmpl.base.labels.push_back(label);
    }
  }
  for (int j = 0; j + 1 < gv; ++j) {
    for (int i = 0; i + 1 < gu; ++i) {
      int a = j * gu + i, b = a + 1, c = a + gu, d = c + 1;
      tmpl.base.triangles.push_back({a, b, d});
      tmpl.base.triangles.push_back({a, d, c});
    }
  }

  // Blendshape 0: jaw-open. Lower-lip and jaw vertices travel down with the
  // opening; +1 is fully open, -1 fully closed.
  std::vector<Vec3> jaw_open(tmpl.base.vertices.size(), Vec3{0, 0, 0});
  for (int j = 0; j < gv; ++j) {
    for (int i = 0; i < gu; ++i) {
      double v = v_of(j);
      size_t idx = static_cast<size_t>(j) * gu + i;
      if (v > L.vm) {
        double ramp = std::min(1.0, (v - L.vm) / (L.lv + 0.10));
        jaw_open[idx][1] = L.ay * 0.10 * ramp;
      }
    }
  }
  tmpl.bases.push_back(std::move(jaw_open));

  // Remaining axes: small deterministic displacement fields (kept for
  // contract coverage; the renderer drives only the jaw axis).
  for (int e = 1; e < expression_dim; ++e) {
    std::vector<Vec3> basis(tmpl.base.vertices.size());
    for (size_t vtx = 0; vtx < basis.size(); ++vtx) {
      const Vec3& p = tmpl.base.vertices[vtx];
      basis[vtx] = {0.004 * std::sin(3.0 * p[0] / L.ax + e), 0.004 * std::cos(2.0 * p[1] / L.ay + e),
                    0.0};
    }
    tmpl.bases.push_back(std::move(basis));
  }
  return tmpl;
}

std::vector<double> openness_from_waveform(const std::vector<double>& waveform, int frame_count,
                                           int samples_per_frame) {
  std::vector<double> rms(static_cast<size_t>(frame_count), 0.0);
  for (int t = 0; t < frame_count; ++t) {
    int64_t start = static_cast<int64_t>(t) * samples_per_frame;
    int64_t stop = std::min<int64_t>(start + samples_per_frame, static_cast<int64_t>(waveform.size()));
    double acc = 0.0;
    for (int64_t i = start; i < stop; ++i) acc += waveform[static_cast<size_t>(i)] * waveform[static_cast<size_t>(i)];
    int64_t n = std::max<int64_t>(1, stop - start);
    rms[static_cast<size_t>(t)] = std::sqrt(acc / static_cast<double>(n));
  }
  std::vector<double> smooth(rms.size());
  for (int t = 0; t < frame_count; ++t) {
    int tm = std::max(0, t - 1), tp = std::min(frame_count - 1, t + 1);
    smooth[static_cast<size_t>(t)] =
        0.25 * rms[static_cast<size_t>(tm)] + 0.5 * rms[static_cast<size_t>(t)] + 0.25 * rms[static_cast<size_t>(tp)];
  }
  double mx = 0.0;
  for (double v : smooth) mx = std::max(mx, v);
  if (mx <= 1e-12) return std::vector<double>(static_cast<size_t>(frame_count), 0.0);
  for (double& v : smooth) v /= mx;
  return smooth;
}

VideoClip render_clip(const IdentityParams& identity, double duration_s, int64_t seed,
                      int resolution, int expression_dim) {
  require(duration_s >= 1.0 && duration_s <= 60.0, ErrorCode::InvalidArgument,
          "duration must be in [1, 60] s");
  identity.validate();

  VideoClip clip;
  clip.width = resolution;
  clip.height = resolution;
  clip.duration = duration_s;
  clip.identity = identity;

  const int frames = static_cast<int>(std::lround(duration_s * clip.fps));
  const int64_t samples = static_cast<int64_t>(std::lround(duration_s * clip.sample_rate));
  const int spf = clip.sample_rate / clip.fps;  // 640

  // Waveform: 2-4 sinusoids under a slow random amplitude envelope that
  // regularly touches silence, so openness has real dynamic range.
  Rng audio_rng(mix_seed(static_cast<uint64_t>(seed), 0xa0d10, 1));
  int voices = 2 + static_cast<int>(audio_rng.below(3));
  std::vector<double> freq(static_cast<size_t>(voices)), amp(static_cast<size_t>(voices)),
      phase(static_cast<size_t>(voices));
  for (int v = 0; v < voices; ++v) {
    freq[static_cast<size_t>(v)] = audio_rng.uniform(120.0, 900.0);
    amp[static_cast<size_t>(v)] = audio_rng.uniform(0.5, 1.0);
    phase[static_cast<size_t>(v)] = audio_rng.uniform(0.0, 2.0 * kPi);
  }
  std::array<double, 3> ef{}, ep{}, ec{};
  for (int k = 0; k < 3; ++k) {
    ef[static_cast<size_t>(k)] = audio_rng.uniform(0.3, 1.5);
    ep[static_cast<size_t>(k)] = audio_rng.uniform(0.0, 2.0 * kPi);
  }
  ec[0] = audio_rng.uniform(0.3, 0.6);
  ec[1] = audio_rng.uniform(0.2, 0.4);
  ec[2] = audio_rng.uniform(0.1, 0.3);

  clip.waveform.resize(static_cast<size_t>(samples));
  double peak = 0.0;
  for (int64_t i = 0; i < samples; ++i) {
    double t = static_cast<double>(i) / clip.sample_rate;
    double env = 0.45;
    for (int k = 0; k < 3; ++k)
      env += ec[static_cast<size_t>(k)] * std::cos(2.0 * kPi * ef[static_cast<size_t>(k)] * t + ep[static_cast<size_t>(k)]);
    env = std::pow(clamp01(env), 1.3);
    double s = 0.0;
    for (int v = 0; v < voices; ++v)
      s += amp[static_cast<size_t>(v)] * std::sin(2.0 * kPi * freq[static_cast<size_t>(v)] * t + phase[static_cast<size_t>(v)]);
    double w = env * s;
    clip.waveform[static_cast<size_t>(i)] = w;
    peak = std::max(peak, std::fabs(w));
  }
  if (peak > 0.0) {
    for (double& w : clip.waveform) w *= 0.95 / peak;
  }

  std::vector<double> openness = openness_from_waveform(clip.waveform, frames, spf);

  // Smooth bounded pose walk.
  Rng pose_rng(mix_seed(static_cast<uint64_t>(seed), 0x905e, 2));
  const double max_angle = 30.0 / 180.0 * kPi * 0.95;
  std::array<double, 3> ang{pose_rng.normal(0.0, 0.15), pose_rng.normal(0.0, 0.15),
                            pose_rng.normal(0.0, 0.10)};
  std::array<double, 2> tr{pose_rng.normal(0.0, 0.03), pose_rng.normal(0.0, 0.03)};
  double tz = pose_rng.normal(0.0, 0.015);
  auto clampd = [](double v, double m) { return v < -m ? -m : (v > m ? m : v); };

  FaceLayout L(identity);
  DomeMesh dome = build_dome(L);

  clip.frames.resize(static_cast<size_t>(frames));
  clip.meta.resize(static_cast<size_t>(frames));
  Tensor frame({3, clip.height, clip.width});
  for (int t = 0; t < frames; ++t) {
    for (int k = 0; k < 3; ++k)
      ang[static_cast<size_t>(k)] = clampd(0.92 * ang[static_cast<size_t>(k)] + pose_rng.normal(0.0, 0.035), max_angle);
    for (int k = 0; k < 2; ++k)
      tr[static_cast<size_t>(k)] = clampd(0.92 * tr[static_cast<size_t>(k)] + pose_rng.normal(0.0, 0.008), 0.1);
    tz = clampd(0.92 * tz + pose_rng.normal(0.0, 0.004), 0.05);

    PoseParams pose;
    pose.euler = ang;
    pose.translation = {tr[0], tr[1], tz};
    pose.expression.assign(static_cast<size_t>(expression_dim), 0.0);
    pose.expression[0] = 2.0 * openness[static_cast<size_t>(t)] - 1.0;

    raster_face(L, identity.skin_hue, openness[static_cast<size_t>(t)], dome, pose, frame);
    clip.frames[static_cast<size_t>(t)] = io::frame_to_image(frame);

    FrameMeta& m = clip.meta[static_cast<size_t>(t)];
    m.pose = pose;
    m.openness = openness[static_cast<size_t>(t)];
    m.mouth_keypoints =
        mouth_keypoints_px(identity, pose, openness[static_cast<size_t>(t)], clip.height, clip.width);
    m.nose = nose_px(identity, pose, clip.height, clip.width);
  }
  return clip;
}

MouthFit fit_mouth(const Tensor& frame, const IdentityParams& identity, const PoseParams& pose,
                   bool fit_width) {
  int H = frame.dim(1), W = frame.dim(2);
  int64_t plane = static_cast<int64_t>(H) * W;

  // Score candidates only over the mouth region of the posed face.
  geom::LipMask region = geom::pose_aware_mask(build_mask_template(identity,
                                               static_cast<int>(pose.expression.size())),
                                               pose, H, W);
  std::vector<int64_t> px;
  for (int64_t i = 0; i < plane; ++i)
    if (region.grid[static_cast<size_t>(i)]) px.push_back(i);
  require(!px.empty(), ErrorCode::RuntimeFailure, "fit_mouth: empty mouth region");

  auto ssd_for = [&](double width_cand, double open_cand) {
    IdentityParams id2 = identity;
    id2.mouth_width = width_cand;
    Tensor ref = render_frame(id2, pose, open_cand, H, W);
    double acc = 0.0;
    for (int64_t i : px) {
      for (int c = 0; c < 3; ++c) {
        double d = frame[c * plane + i] - ref[c * plane + i];
        acc += d * d;
      }
    }
    return acc;
  };

  double best_w = identity.mouth_width;
  if (fit_width) {
    double best_score = 1e300;
    for (int wi = 0; wi <= 16; ++wi) {
      double wcand = 0.15 + 0.20 * wi / 16.0;
      double score = 1e300;
      for (int oi = 0; oi <= 16; ++oi) score = std::min(score, ssd_for(wcand, oi / 16.0));
      if (score < best_score) {
        best_score = score;
        best_w = wcand;
      }
    }
  }

  double best_o = 0.0, best_score = 1e300;
  for (int oi = 0; oi <= 32; ++oi) {
    double o = oi / 32.0;
    double score = ssd_for(best_w, o);
    if (score < best_score) {
      best_score = score;
      best_o = o;
    }
  }
  return {best_o, best_w};
}

double recover_skin_hue(const Tensor& frame, const IdentityParams& identity,
                        const PoseParams& pose) {
  FaceLayout L(identity);
  int H = frame.dim(1), W = frame.dim(2);
  int64_t plane = static_cast<int64_t>(H) * W;
  const std::array<std::array<double, 2>, 6> samples = {{
      {0.50, 0.00}, {-0.50, 0.00}, {0.38, -0.15}, {-0.38, -0.15}, {0.45, 0.25}, {-0.45, 0.25},
  }};
  double dr = kSkinB.r - kSkinA.r, dg = kSkinB.g - kSkinA.g, db = kSkinB.b - kSkinA.b;
  double denom = dr * dr + dg * dg + db * db;
  double acc = 0.0;
  int used = 0;
  for (const auto& s : samples) {
    double r2 = s[0] * s[0] + s[1] * s[1];
    double z = L.az * std::sqrt(std::max(0.0, 1.0 - r2));
    double shade = shade_of(z, L.az);
    Vec2 p = canonical_to_px(L, pose, s[0], s[1], H, W);
    int col = static_cast<int>(std::floor(p.x));
    int row = static_cast<int>(std::floor(p.y));
    if (col < 0 || col >= W || row < 0 || row >= H) continue;
    int64_t idx = static_cast<int64_t>(row) * W + col;
    double cr = frame[idx] / shade - kSkinA.r;
    double cg = frame[plane + idx] / shade - kSkinA.g;
    double cb = frame[2 * plane + idx] / shade - kSkinA.b;
    acc += (cr * dr + cg * dg + cb * db) / denom;
    ++used;
  }
  require(used > 0, ErrorCode::RuntimeFailure, "recover_skin_hue: no sample hit the frame");
  return clamp01(acc / used);
}

// ---------------------------------------------------------------------------
// Clip persistence

namespace {

json pose_to_json(const PoseParams& p) {
  return json{{"translation", p.translation},
              {"euler", p.euler},
              {"expression", p.expression}};
}

PoseParams pose_from_json(const json& j) {
  PoseParams p;
  auto tr = j.at("translation");
  auto eu = j.at("euler");
  for (int i = 0; i < 3; ++i) {
    p.translation[static_cast<size_t>(i)] = tr.at(static_cast<size_t>(i)).get<double>();
    p.euler[static_cast<size_t>(i)] = eu.at(static_cast<size_t>(i)).get<double>();
  }
  p.expression = j.at("expression").get<std::vector<double>>();
  return p;
}

std::string frame_name(int t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05d.png", t);
  return buf;
}

}  // namespace

void write_clip(const VideoClip& clip, const std::string& dir) {
  fs::create_directories(fs::path(dir) / "frames");
  fs::create_directories(fs::path(dir) / "masks");

  geom::MeshTemplate tmpl = build_mask_template(
      clip.identity,
      clip.meta.empty() ? 8 : static_cast<int>(clip.meta[0].pose.expression.size()));
  for (int t = 0; t < clip.frame_count(); ++t) {
    io::write_png_rgb8((fs::path(dir) / "frames" / frame_name(t)).string(),
                       clip.frames[static_cast<size_t>(t)]);
    geom::LipMask mask =
        geom::pose_aware_mask(tmpl, clip.meta[static_cast<size_t>(t)].pose, clip.height, clip.width);
    io::write_png_mask((fs::path(dir) / "masks" / frame_name(t)).string(), mask);
  }
  io::write_wav_mono16((fs::path(dir) / "audio.wav").string(), clip.waveform, clip.sample_rate);

  json meta;
  meta["format"] = 1;
  meta["fps"] = clip.fps;
  meta["sample_rate"] = clip.sample_rate;
  meta["duration"] = clip.duration;
  meta["width"] = clip.width;
  meta["height"] = clip.height;
  meta["identity"] = json{{"skin_hue", clip.identity.skin_hue},
                          {"face_aspect", clip.identity.face_aspect},
                          {"mouth_width", clip.identity.mouth_width},
                          {"eye_spacing", clip.identity.eye_spacing},
                          {"seed", clip.identity.seed}};
  meta["frames"] = json::array();
  for (const FrameMeta& m : clip.meta) {
    json jf;
    jf["pose"] = pose_to_json(m.pose);
    jf["mouth_keypoints"] = m.mouth_keypoints;
    jf["nose"] = m.nose;
    jf["openness"] = m.openness;
    meta["frames"].push_back(std::move(jf));
  }
  std::ofstream out(fs::path(dir) / "meta.json");
  require(out.good(), ErrorCode::RuntimeFailure, "cannot write meta.json in " + dir);
  out << meta.dump(1) << "\n";
}

VideoClip read_clip(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "meta.json");
  require(in.good(), ErrorCode::CorruptClip, "missing meta.json in " + dir);
  json meta;
  try {
    in >> meta;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptClip, std::string("meta.json parse error: ") + e.what());
  }

  VideoClip clip;
  try {
    require(meta.at("format").get<int>() == 1, ErrorCode::CorruptClip, "unknown clip format");
    clip.fps = meta.at("fps").get<int>();
    clip.sample_rate = meta.at("sample_rate").get<int>();
    clip.duration = meta.at("duration").get<double>();
    clip.width = meta.at("width").get<int>();
    clip.height = meta.at("height").get<int>();
    const json& id = meta.at("identity");
    clip.identity.skin_hue = id.at("skin_hue").get<double>();
    clip.identity.face_aspect = id.at("face_aspect").get<double>();
    clip.identity.mouth_width = id.at("mouth_width").get<double>();
    clip.identity.eye_spacing = id.at("eye_spacing").get<double>();
    clip.identity.seed = id.at("seed").get<int64_t>();
    for (const json& jf : meta.at("frames")) {
      FrameMeta m;
      m.pose = pose_from_json(jf.at("pose"));
      for (const json& kp : jf.at("mouth_keypoints"))
        m.mouth_keypoints.push_back({kp.at(0).get<double>(), kp.at(1).get<double>()});
      m.nose = {jf.at("nose").at(0).get<double>(), jf.at("nose").at(1).get<double>()};
      m.openness = jf.at("openness").get<double>();
      clip.meta.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptClip, std::string("meta.json schema error: ") + e.what());
  }

  int expected = static_cast<int>(std::lround(clip.duration * clip.fps));
  require(static_cast<int>(clip.meta.size()) == expected, ErrorCode::CorruptClip,
          "frame count in meta.json does not match duration");

  for (int t = 0; t < expected; ++t) {
    fs::path p = fs::path(dir) / "frames" / frame_name(t);
    require(fs::exists(p), ErrorCode::CorruptClip, "missing frame file: " + p.string());
    clip.frames.push_back(io::read_png_rgb8(p.string()));
    require(clip.frames.back().w == clip.width && clip.frames.back().h == clip.height,
            ErrorCode::CorruptClip, "frame resolution mismatch: " + p.string());
  }
  clip.waveform = io::read_wav_mono16((fs::path(dir) / "audio.wav").string(), clip.sample_rate);
  int64_t expected_samples = static_cast<int64_t>(std::lround(clip.duration * clip.sample_rate));
  require(static_cast<int64_t>(clip.waveform.size()) == expected_samples, ErrorCode::CorruptClip,
          "audio length does not match duration");
  return clip;
}

// ---------------------------------------------------------------------------
// Corpus

std::vector<int> CorpusManifest::split_indices(const std::string& split) const {
  std::vector<int> out;
  for (size_t i = 0; i < entries.size(); ++i)
    if (entries[i].split == split) out.push_back(static_cast<int>(i));
  return out;
}

CorpusManifest generate_corpus(const std::string& out_dir, int clips, int64_t seed, double duration,
                               int identities, int resolution, int expression_dim) {
  require(clips >= 1, ErrorCode::InvalidArgument, "corpus needs at least one clip");
  require(identities >= 2, ErrorCode::InvalidArgument, "corpus needs at least two identities");
  fs::create_directories(out_dir);

  CorpusManifest man;
  man.seed = seed;
  man.identities = identities;
  man.duration = duration;
  man.resolution = resolution;

  int test_identities = std::max(1, identities / 8);
  for (int i = 0; i < clips; ++i) {
    CorpusEntry e;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%05d", i);
    e.dir = buf;
    e.identity_index = i % identities;
    e.clip_seed = static_cast<int64_t>(mix_seed(static_cast<uint64_t>(seed), 0xc11b, static_cast<uint64_t>(i)));
    e.split = e.identity_index < identities - test_identities ? "train" : "test";
    man.entries.push_back(e);
  }

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < clips; ++i) {
    const CorpusEntry& e = man.entries[static_cast<size_t>(i)];
    IdentityParams id = sample_identity(static_cast<int64_t>(
        mix_seed(static_cast<uint64_t>(seed), 0x1de4, static_cast<uint64_t>(e.identity_index))));
    VideoClip clip = render_clip(id, duration, e.clip_seed, resolution, expression_dim);
    write_clip(clip, (fs::path(out_dir) / e.dir).string());
  }

  json j;
  j["seed"] = man.seed;
  j["identities"] = man.identities;
  j["duration"] = man.duration;
  j["resolution"] = man.resolution;
  j["clips"] = json::array();
  for (const CorpusEntry& e : man.entries)
    j["clips"].push_back(json{{"dir", e.dir},
                              {"seed", e.clip_seed},
                              {"identity_index", e.identity_index},
                              {"split", e.split}});
  std::ofstream out(fs::path(out_dir) / "corpus.json");
  require(out.good(), ErrorCode::RuntimeFailure, "cannot write corpus.json");
  out << j.dump(1) << "\n";
  return man;
}

CorpusManifest load_corpus(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "corpus.json");
  require(in.good(), ErrorCode::CorruptClip, "missing corpus.json in " + dir);
  json j;
  try {
    in >> j;
    CorpusManifest man;
    man.seed = j.at("seed").get<int64_t>();
    man.identities = j.at("identities").get<int>();
    man.duration = j.at("duration").get<double>();
    man.resolution = j.at("resolution").get<int>();
    for (const json& je : j.at("clips")) {
      CorpusEntry e;
      e.dir = je.at("dir").get<std::string>();
      e.clip_seed = je.at("seed").get<int64_t>();
      e.identity_index = je.at("identity_index").get<int>();
      e.split = je.at("split").get<std::string>();
      man.entries.push_back(std::move(e));
    }
    return man;
  } catch (const json::exception& e) {
    fail(ErrorCode::CorruptClip, std::string("corpus.json schema error: ") + e.what());
  }
}

}  // namespace lipsync::synth
