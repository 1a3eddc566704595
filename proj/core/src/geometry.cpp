#include "lipsync/geometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace lipsync::geom {

using nlohmann::json;

void PoseParams::validate(int expected_expression_dim) const {
  for (double v : translation)
    require(std::isfinite(v), ErrorCode::InvalidArgument, "pose: non-finite translation");
  for (double a : euler) {
    require(std::isfinite(a), ErrorCode::InvalidArgument, "pose: non-finite euler angle");
    require(a >= -kPi && a < kPi, ErrorCode::InvalidArgument, "pose: euler angle outside [-pi, pi)");
  }
  for (double d : expression) {
    require(std::isfinite(d), ErrorCode::InvalidArgument, "pose: NaN expression weight");
    require(d >= -1.0 && d <= 1.0, ErrorCode::InvalidArgument, "pose: expression weight outside [-1,1]");
  }
  if (expected_expression_dim >= 0)
    require(static_cast<int>(expression.size()) == expected_expression_dim,
            ErrorCode::InvalidArgument, "pose: expression dimension mismatch");
  // Orthogonality check mandated by the type invariant.
  std::array<double, 9> r = rotation_matrix(euler);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += r[static_cast<size_t>(k * 3 + i)] * r[static_cast<size_t>(k * 3 + j)];
      double want = i == j ? 1.0 : 0.0;
      require(std::fabs(dot - want) < 1e-6, ErrorCode::InvalidArgument, "pose: rotation not orthogonal");
    }
  }
}

std::array<double, 9> rotation_matrix(const std::array<double, 3>& euler) {
  double cx = std::cos(euler[0]), sx = std::sin(euler[0]);
  double cy = std::cos(euler[1]), sy = std::sin(euler[1]);
  double cz = std::cos(euler[2]), sz = std::sin(euler[2]);
  // R = Rz * Ry * Rx
  return {cz * cy, cz * sy * sx - sz * cx, cz * sy * cx + sz * sx,
          sz * cy, sz * sy * sx + cz * cx, sz * sy * cx - cz * sx,
          -sy,     cy * sx,                cy * cx};
}

void FaceMesh::validate() const {
  require(labels.size() == vertices.size(), ErrorCode::InvalidArgument, "mesh: label/vertex count mismatch");
  int v = static_cast<int>(vertices.size());
  for (const Vec3& p : vertices)
    for (double c : p) require(std::isfinite(c), ErrorCode::InvalidArgument, "mesh: NaN vertex");
  for (const Tri& t : triangles)
    for (int i : t)
      require(i >= 0 && i < v, ErrorCode::InvalidArgument, "mesh: triangle index out of range");
}

void MeshTemplate::validate() const {
  base.validate();
  for (const auto& b : bases)
    require(b.size() == base.vertices.size(), ErrorCode::InvalidArgument,
            "template: basis size mismatch");
}

namespace {

json vec3_to_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
Vec3 vec3_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

const char* label_name(VertexLabel l) {
  switch (l) {
    case VertexLabel::LipUpper: return "lip-upper";
    case VertexLabel::LipLower: return "lip-lower";
    case VertexLabel::Jaw: return "jaw";
    case VertexLabel::Cheek: return "cheek";
    case VertexLabel::UpperFace: return "upper-face";
  }
  return "upper-face";
}

VertexLabel label_from_name(const std::string& s) {
  if (s == "lip-upper") return VertexLabel::LipUpper;
  if (s == "lip-lower") return VertexLabel::LipLower;
  if (s == "jaw") return VertexLabel::Jaw;
  if (s == "cheek") return VertexLabel::Cheek;
  if (s == "upper-face") return VertexLabel::UpperFace;
  fail(ErrorCode::InvalidArgument, "unknown vertex label: " + s);
}

}  // namespace

void save_mesh_template(const MeshTemplate& tmpl, const std::string& path) {
  tmpl.validate();
  json j;
  j["vertices"] = json::array();
  for (const Vec3& v : tmpl.base.vertices) j["vertices"].push_back(vec3_to_json(v));
  j["triangles"] = json::array();
  for (const Tri& t : tmpl.base.triangles) j["triangles"].push_back(json::array({t[0], t[1], t[2]}));
  j["labels"] = json::array();
  for (VertexLabel l : tmpl.base.labels) j["labels"].push_back(label_name(l));
  j["blendshapes"] = json::array();
  for (const auto& b : tmpl.bases) {
    json jb = json::array();
    for (const Vec3& v : b) jb.push_back(vec3_to_json(v));
    j["blendshapes"].push_back(std::move(jb));
  }
  std::ofstream out(path);
  require(out.good(), ErrorCode::RuntimeFailure, "cannot write mesh template: " + path);
  out << j.dump(1) << "\n";
}

MeshTemplate load_mesh_template(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::InvalidArgument, "cannot read mesh template: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("mesh template parse error: ") + e.what());
  }
  MeshTemplate t;
  for (const json& v : j.at("vertices")) t.base.vertices.push_back(vec3_from_json(v));
  for (const json& tr : j.at("triangles"))
    t.base.triangles.push_back({tr.at(0).get<int>(), tr.at(1).get<int>(), tr.at(2).get<int>()});
  for (const json& l : j.at("labels")) t.base.labels.push_back(label_from_name(l.get<std::string>()));
  for (const json& b : j.at("blendshapes")) {
    std::vector<Vec3> basis;
    for (const json& v : b) basis.push_back(vec3_from_json(v));
    t.bases.push_back(std::move(basis));
  }
  t.validate();
  return t;
}

FaceMesh apply_expression(const MeshTemplate& tmpl, const std::vector<double>& delta) {
  require(static_cast<int>(delta.size()) == tmpl.expression_dim(), ErrorCode::InvalidArgument,
          "expression dimension mismatch");
  for (double d : delta)
    require(std::isfinite(d), ErrorCode::InvalidArgument, "NaN expression weight");
  FaceMesh out = tmpl.base;
  for (size_t e = 0; e < tmpl.bases.size(); ++e) {
    double w = delta[e];
    if (w == 0.0) continue;
    const auto& basis = tmpl.bases[e];
    for (size_t v = 0; v < out.vertices.size(); ++v) {
      out.vertices[v][0] += w * basis[v][0];
      out.vertices[v][1] += w * basis[v][1];
      out.vertices[v][2] += w * basis[v][2];
    }
  }
  return out;
}

FaceMesh build_lip_mesh(const MeshTemplate& tmpl, const std::vector<double>& delta) {
  require(tmpl.expression_dim() >= 1, ErrorCode::InvalidArgument,
          "template has no jaw-open blendshape");
  std::vector<double> opened = delta, closed = delta;
  require(static_cast<int>(delta.size()) == tmpl.expression_dim(), ErrorCode::InvalidArgument,
          "expression dimension mismatch");
  opened[0] = 1.0;
  closed[0] = -1.0;
  FaceMesh a = apply_expression(tmpl, opened);
  FaceMesh b = apply_expression(tmpl, closed);
  int off = static_cast<int>(a.vertices.size());
  a.vertices.insert(a.vertices.end(), b.vertices.begin(), b.vertices.end());
  a.labels.insert(a.labels.end(), b.labels.begin(), b.labels.end());
  for (const Tri& t : b.triangles) a.triangles.push_back({t[0] + off, t[1] + off, t[2] + off});
  return a;
}

FaceMesh normalize_and_select(const FaceMesh& mesh, const PoseParams& pose, double z_front) {
  require(mesh.vertices.size() >= 4, ErrorCode::InvalidArgument, "mesh too small");
  pose.validate();
  std::array<double, 9> r = rotation_matrix(pose.euler);

  FaceMesh out;
  std::vector<int> remap(mesh.vertices.size(), -1);
  for (size_t v = 0; v < mesh.vertices.size(); ++v) {
    double px = mesh.vertices[v][0] - pose.translation[0];
    double py = mesh.vertices[v][1] - pose.translation[1];
    double pz = mesh.vertices[v][2] - pose.translation[2];
    // R^-1 = R^T for a rotation matrix.
    Vec3 c = {r[0] * px + r[3] * py + r[6] * pz,
              r[1] * px + r[4] * py + r[7] * pz,
              r[2] * px + r[5] * py + r[8] * pz};
    VertexLabel l = mesh.labels[v];
    bool lip_region = l == VertexLabel::LipUpper || l == VertexLabel::LipLower || l == VertexLabel::Jaw;
    if (lip_region && c[2] >= z_front) {
      remap[v] = static_cast<int>(out.vertices.size());
      out.vertices.push_back(c);
      out.labels.push_back(l);
    }
  }
  for (const Tri& t : mesh.triangles) {
    int a = remap[static_cast<size_t>(t[0])];
    int b = remap[static_cast<size_t>(t[1])];
    int c = remap[static_cast<size_t>(t[2])];
    if (a >= 0 && b >= 0 && c >= 0) out.triangles.push_back({a, b, c});
  }
  require(!out.vertices.empty() && !out.triangles.empty(), ErrorCode::DegeneratePose,
          "no lower-frontal lip vertices survive this pose");
  return out;
}

FaceMesh transform_mesh(const FaceMesh& mesh, const PoseParams& pose) {
  std::array<double, 9> r = rotation_matrix(pose.euler);
  FaceMesh out = mesh;
  for (Vec3& v : out.vertices) {
    Vec3 p = v;
    v = {r[0] * p[0] + r[1] * p[1] + r[2] * p[2] + pose.translation[0],
         r[3] * p[0] + r[4] * p[1] + r[5] * p[2] + pose.translation[1],
         r[6] * p[0] + r[7] * p[1] + r[8] * p[2] + pose.translation[2]};
  }
  return out;
}

LipMask rasterize_mask(const FaceMesh& mesh, int height, int width) {
  require(!mesh.vertices.empty(), ErrorCode::InvalidArgument, "rasterize: empty mesh");
  require(height >= 8 && width >= 8, ErrorCode::InvalidArgument, "rasterize: resolution below 8x8");
  LipMask mask;
  mask.h = height;
  mask.w = width;
  mask.grid.assign(static_cast<size_t>(height) * width, 0);

  for (const Tri& t : mesh.triangles) {
    Vec2 a{(mesh.vertices[static_cast<size_t>(t[0])][0] + 0.5) * width,
           (mesh.vertices[static_cast<size_t>(t[0])][1] + 0.5) * height};
    Vec2 b{(mesh.vertices[static_cast<size_t>(t[1])][0] + 0.5) * width,
           (mesh.vertices[static_cast<size_t>(t[1])][1] + 0.5) * height};
    Vec2 c{(mesh.vertices[static_cast<size_t>(t[2])][0] + 0.5) * width,
           (mesh.vertices[static_cast<size_t>(t[2])][1] + 0.5) * height};
    double area2 = edge_cross(a, b, c);
    if (area2 == 0.0) continue;  // degenerate triangles contribute nothing
    if (area2 < 0.0) std::swap(b, c);

    int c0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}) - 0.5)));
    int c1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
    int r0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}) - 0.5)));
    int r1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));

    bool incl_ab = edge_includes_boundary(a, b);
    bool incl_bc = edge_includes_boundary(b, c);
    bool incl_ca = edge_includes_boundary(c, a);

    for (int row = r0; row <= r1; ++row) {
      for (int col = c0; col <= c1; ++col) {
        Vec2 p{col + 0.5, row + 0.5};
        double e0 = edge_cross(a, b, p);
        double e1 = edge_cross(b, c, p);
        double e2 = edge_cross(c, a, p);
        bool in = (e0 > 0.0 || (e0 == 0.0 && incl_ab)) && (e1 > 0.0 || (e1 == 0.0 && incl_bc)) &&
                  (e2 > 0.0 || (e2 == 0.0 && incl_ca));
        if (in) mask.at(row, col) = 1;
      }
    }
  }
  return mask;
}

LipMask pose_aware_mask(const MeshTemplate& tmpl, const PoseParams& pose, int height, int width) {
  FaceMesh lip = build_lip_mesh(tmpl, pose.expression);
  FaceMesh canonical = normalize_and_select(lip, pose);
  FaceMesh posed = transform_mesh(canonical, pose);
  return rasterize_mask(posed, height, width);
}

LipMask rectangular_mask(int height, int width) {
  LipMask mask;
  mask.h = height;
  mask.w = width;
  mask.grid.assign(static_cast<size_t>(height) * width, 0);
  for (int r = height / 2; r < height; ++r)
    for (int c = 0; c < width; ++c) mask.at(r, c) = 1;
  return mask;
}

Tensor apply_mask(const Tensor& frame, const LipMask& mask) {
  require(frame.rank() == 3, ErrorCode::InvalidArgument, "apply_mask: frame must be [C,H,W]");
  require(frame.dim(1) == mask.h && frame.dim(2) == mask.w, ErrorCode::InvalidArgument,
          "apply_mask: shape mismatch");
  Tensor out = frame;
  int C = frame.dim(0);
  int64_t plane = static_cast<int64_t>(mask.h) * mask.w;
  for (int c = 0; c < C; ++c) {
    double* p = out.data() + c * plane;
    for (int64_t i = 0; i < plane; ++i)
      if (mask.grid[static_cast<size_t>(i)]) p[i] = 0.0;
  }
  return out;
}

}  // namespace lipsync::geom
