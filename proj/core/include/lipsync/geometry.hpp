#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lipsync/tensor.hpp"

namespace lipsync::geom {

// Coordinate conventions used throughout:
//   * world/canonical space: image plane spans x,y in [-0.5, 0.5], y points
//     down (toward larger pixel rows), z points out of the screen toward the
//     viewer; the frame center is the origin.
//   * projection is orthographic: drop z, map x,y onto the pixel grid with
//     half-pixel centers (pixel (r,c) center = ((c+0.5)/W - 0.5, (r+0.5)/H - 0.5)).

enum class VertexLabel : uint8_t { LipUpper = 0, LipLower = 1, Jaw = 2, Cheek = 3, UpperFace = 4 };

struct PoseParams {
  std::array<double, 3> translation{0, 0, 0};  // tau
  std::array<double, 3> euler{0, 0, 0};        // (rx, ry, rz), Z-Y-X composition
  std::vector<double> expression;              // blendshape weights in [-1, 1]

  void validate(int expected_expression_dim = -1) const;
};

// R = Rz(rz) * Ry(ry) * Rx(rx); row-major 3x3.
std::array<double, 9> rotation_matrix(const std::array<double, 3>& euler);

using Vec3 = std::array<double, 3>;
using Tri = std::array<int, 3>;

struct FaceMesh {
  std::vector<Vec3> vertices;
  std::vector<Tri> triangles;
  std::vector<VertexLabel> labels;  // one per vertex

  void validate() const;
};

// Template with linear blendshape bases. Blendshape 0 is the jaw-open axis:
// weight +1 is the fully opened mouth, -1 fully closed.
struct MeshTemplate {
  FaceMesh base;
  std::vector<std::vector<Vec3>> bases;  // E x V displacement fields

  int expression_dim() const { return static_cast<int>(bases.size()); }
  void validate() const;
};

void save_mesh_template(const MeshTemplate& tmpl, const std::string& path);
MeshTemplate load_mesh_template(const std::string& path);

struct LipMask {
  int h = 0, w = 0;
  std::vector<uint8_t> grid;  // 0/1, row-major

  uint8_t at(int r, int c) const { return grid[static_cast<size_t>(r) * w + c]; }
  uint8_t& at(int r, int c) { return grid[static_cast<size_t>(r) * w + c]; }
  int64_t count() const {
    int64_t n = 0;
    for (uint8_t v : grid) n += v;
    return n;
  }
};

// base + sum_e delta_e * basis_e
FaceMesh apply_expression(const MeshTemplate& tmpl, const std::vector<double>& delta);

// Union of the expression mesh evaluated at the fully-open and fully-closed
// jaw extremes (delta with component 0 clamped to +1 and -1), so the mask
// covers every mouth state the clip can reach.
FaceMesh build_lip_mesh(const MeshTemplate& tmpl, const std::vector<double>& delta);

// v' = R(euler)^-1 (v - tau); keeps lip/jaw vertices with canonical z >= z_front.
FaceMesh normalize_and_select(const FaceMesh& mesh, const PoseParams& pose, double z_front = 0.0);

// v' = R(euler) v + tau (the renderer's forward transform).
FaceMesh transform_mesh(const FaceMesh& mesh, const PoseParams& pose);

// Binary coverage of the orthographically projected triangles; a pixel is set
// iff its center is inside a triangle, with ties included on top/left edges.
LipMask rasterize_mask(const FaceMesh& mesh, int height, int width);

// The full pipeline: expression adjustment, pose normalization, lower-frontal
// selection, re-posing, 2D projection.
LipMask pose_aware_mask(const MeshTemplate& tmpl, const PoseParams& pose, int height, int width);

// Fixed lower-half box (rows >= H/2), the ablation baseline mask.
LipMask rectangular_mask(int height, int width);

// frame (*) (1 - mask); masked pixels are filled with 0. frame is [C,H,W].
Tensor apply_mask(const Tensor& frame, const LipMask& mask);

// Shared rasterization primitives (also used by the synthetic renderer and
// by test oracles that need the exact tie-breaking convention).
struct Vec2 {
  double x, y;
};

inline double edge_cross(const Vec2& v0, const Vec2& v1, const Vec2& p) {
  return (v1.x - v0.x) * (p.y - v0.y) - (v1.y - v0.y) * (p.x - v0.x);
}

// Boundary inclusion for a positively oriented triangle (top-left rule).
inline bool edge_includes_boundary(const Vec2& v0, const Vec2& v1) {
  double dx = v1.x - v0.x, dy = v1.y - v0.y;
  return dy < 0.0 || (dy == 0.0 && dx > 0.0);
}

}  // namespace lipsync::geom
