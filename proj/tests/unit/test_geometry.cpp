#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "lipsync/geometry.hpp"
#include "lipsync/image_io.hpp"

using namespace lipsync;
using namespace lipsync::geom;

namespace {

// Small lip/jaw template used across tests: a 3x3 vertex patch plus one cheek
// vertex, with a jaw-open blendshape that moves the bottom row down.
MeshTemplate tiny_template() {
  MeshTemplate t;
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < 3; ++i) {
      double u = -0.2 + 0.2 * i;
      double v = 0.1 + 0.1 * j;
      t.base.vertices.push_back({u, v, 0.05});
      t.base.labels.push_back(j == 0 ? VertexLabel::LipUpper
                                     : (j == 1 ? VertexLabel::LipLower : VertexLabel::Jaw));
    }
  }
  t.base.vertices.push_back({0.5, 0.0, 0.05});
  t.base.labels.push_back(VertexLabel::Cheek);
  for (int j = 0; j < 2; ++j) {
    for (int i = 0; i < 2; ++i) {
      int a = j * 3 + i;
      t.base.triangles.push_back({a, a + 1, a + 4});
      t.base.triangles.push_back({a, a + 4, a + 3});
    }
  }
  std::vector<Vec3> jaw(t.base.vertices.size(), Vec3{0, 0, 0});
  for (int i = 6; i < 9; ++i) jaw[static_cast<size_t>(i)] = {0.0, 0.05, 0.0};
  t.bases.push_back(jaw);
  std::vector<Vec3> other(t.base.vertices.size(), Vec3{0, 0, 0});
  other[0] = {0.01, 0.0, 0.0};
  t.bases.push_back(other);
  return t;
}

// Brute-force point-in-polygon oracle: every pixel against every triangle,
// no bounding boxes, no shortcuts. Same top/left tie rule as the contract.
LipMask raster_oracle(const FaceMesh& mesh, int H, int W) {
  LipMask mask;
  mask.h = H;
  mask.w = W;
  mask.grid.assign(static_cast<size_t>(H) * W, 0);
  for (int row = 0; row < H; ++row) {
    for (int col = 0; col < W; ++col) {
      double px = col + 0.5, py = row + 0.5;
      bool covered = false;
      for (const Tri& t : mesh.triangles) {
        double x0 = (mesh.vertices[static_cast<size_t>(t[0])][0] + 0.5) * W;
        double y0 = (mesh.vertices[static_cast<size_t>(t[0])][1] + 0.5) * H;
        double x1 = (mesh.vertices[static_cast<size_t>(t[1])][0] + 0.5) * W;
        double y1 = (mesh.vertices[static_cast<size_t>(t[1])][1] + 0.5) * H;
        double x2 = (mesh.vertices[static_cast<size_t>(t[2])][0] + 0.5) * W;
        double y2 = (mesh.vertices[static_cast<size_t>(t[2])][1] + 0.5) * H;
        double area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0);
        if (area2 == 0.0) continue;
        if (area2 < 0.0) {
          std::swap(x1, x2);
          std::swap(y1, y2);
        }
        auto edge = [&](double ax, double ay, double bx, double by) {
          double e = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
          if (e > 0.0) return true;
          if (e < 0.0) return false;
          double dx = bx - ax, dy = by - ay;
          return dy < 0.0 || (dy == 0.0 && dx > 0.0);
        };
        if (edge(x0, y0, x1, y1) && edge(x1, y1, x2, y2) && edge(x2, y2, x0, y0)) {
          covered = true;
          break;
        }
      }
      if (covered) mask.at(row, col) = 1;
    }
  }
  return mask;
}

FaceMesh random_lip_mesh(Rng& rng, int tris) {
  FaceMesh m;
  for (int t = 0; t < tris; ++t) {
    int base = static_cast<int>(m.vertices.size());
    for (int k = 0; k < 3; ++k) {
      m.vertices.push_back({rng.uniform(-0.45, 0.45), rng.uniform(-0.45, 0.45), rng.uniform(0.01, 0.3)});
      m.labels.push_back(VertexLabel::LipLower);
    }
    m.triangles.push_back({base, base + 1, base + 2});
  }
  return m;
}

}  // namespace

TEST_CASE("rotation matrix: Z-Y-X composition, orthogonal") {
  Rng rng(5);
  for (int it = 0; it < 20; ++it) {
    std::array<double, 3> e{rng.uniform(-3.0, 3.0), rng.uniform(-1.5, 1.5), rng.uniform(-3.0, 3.0)};
    auto r = rotation_matrix(e);
    // R^T R = I
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double dot = 0.0;
        for (int k = 0; k < 3; ++k) dot += r[static_cast<size_t>(3 * k + i)] * r[static_cast<size_t>(3 * k + j)];
        CHECK(std::fabs(dot - (i == j ? 1.0 : 0.0)) < 1e-12);
      }
    // det +1
    double det = r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
                 r[2] * (r[3] * r[7] - r[4] * r[6]);
    CHECK(std::fabs(det - 1.0) < 1e-12);
  }
}

TEST_CASE("apply_expression matches dense blendshape oracle") {
  Rng rng(7);
  MeshTemplate t;
  const int V = 24, E = 5;
  for (int v = 0; v < V; ++v) {
    t.base.vertices.push_back({rng.normal(), rng.normal(), rng.normal()});
    t.base.labels.push_back(VertexLabel::LipLower);
  }
  t.base.triangles.push_back({0, 1, 2});
  for (int e = 0; e < E; ++e) {
    std::vector<Vec3> basis;
    for (int v = 0; v < V; ++v) basis.push_back({rng.normal(), rng.normal(), rng.normal()});
    t.bases.push_back(basis);
  }
  std::vector<double> delta;
  for (int e = 0; e < E; ++e) delta.push_back(rng.uniform(-1.0, 1.0));

  FaceMesh out = apply_expression(t, delta);
  // Independent dense matrix-product evaluation.
  for (int v = 0; v < V; ++v) {
    for (int c = 0; c < 3; ++c) {
      double want = t.base.vertices[static_cast<size_t>(v)][static_cast<size_t>(c)];
      for (int e = 0; e < E; ++e)
        want += delta[static_cast<size_t>(e)] * t.bases[static_cast<size_t>(e)][static_cast<size_t>(v)][static_cast<size_t>(c)];
      CHECK(std::fabs(out.vertices[static_cast<size_t>(v)][static_cast<size_t>(c)] - want) < 1e-6);
    }
  }
}

TEST_CASE("build_lip_mesh: union of jaw extremes") {
  MeshTemplate t = tiny_template();
  int V = static_cast<int>(t.base.vertices.size());

  // Zero delta: union of the template's open/closed extreme shapes.
  std::vector<double> zero(2, 0.0);
  FaceMesh u = build_lip_mesh(t, zero);
  REQUIRE(static_cast<int>(u.vertices.size()) == 2 * V);
  FaceMesh open_mesh = apply_expression(t, {1.0, 0.0});
  FaceMesh closed_mesh = apply_expression(t, {-1.0, 0.0});
  for (int v = 0; v < V; ++v)
    for (int c = 0; c < 3; ++c) {
      CHECK(u.vertices[static_cast<size_t>(v)][static_cast<size_t>(c)] ==
            open_mesh.vertices[static_cast<size_t>(v)][static_cast<size_t>(c)]);
      CHECK(u.vertices[static_cast<size_t>(V + v)][static_cast<size_t>(c)] ==
            closed_mesh.vertices[static_cast<size_t>(v)][static_cast<size_t>(c)]);
    }

  // Unit weight on a non-jaw blendshape shifts exactly by that basis before merging.
  FaceMesh shifted = apply_expression(t, {0.0, 1.0});
  CHECK(shifted.vertices[0][0] == doctest::Approx(t.base.vertices[0][0] + 0.01).epsilon(1e-12));

  CHECK_THROWS_AS((void)build_lip_mesh(t, {0.0}), Error);  // dimension mismatch
  std::vector<double> with_nan{0.0, std::nan("")};
  CHECK_THROWS_AS((void)apply_expression(t, with_nan), Error);
}

TEST_CASE("normalize_and_select: transforms and filters") {
  MeshTemplate t = tiny_template();
  FaceMesh mesh = t.base;

  PoseParams identity_pose;
  identity_pose.expression = {0.0, 0.0};
  FaceMesh same = normalize_and_select(mesh, identity_pose);
  CHECK(same.vertices.size() == 9);  // cheek vertex dropped
  for (size_t v = 0; v < same.vertices.size(); ++v)
    for (int c = 0; c < 3; ++c)
      CHECK(same.vertices[v][static_cast<size_t>(c)] == mesh.vertices[v][static_cast<size_t>(c)]);

  PoseParams shift;
  shift.translation = {1.0, 2.0, 3.0};
  shift.expression = {0.0, 0.0};
  // Keep z in front: translate z by something small instead.
  shift.translation[2] = 0.0;
  FaceMesh moved = normalize_and_select(mesh, shift);
  for (size_t v = 0; v < moved.vertices.size(); ++v) {
    CHECK(moved.vertices[v][0] == doctest::Approx(mesh.vertices[v][0] - 1.0).epsilon(1e-12));
    CHECK(moved.vertices[v][1] == doctest::Approx(mesh.vertices[v][1] - 2.0).epsilon(1e-12));
  }

  // Explicit rotation-matrix oracle: gamma = (pi/2, 0, 0) on vertex (1,0,0).
  FaceMesh single;
  single.vertices = {{1.0, 0.0, 0.0}, {0.9, 0.0, 0.1}, {0.8, 0.0, 0.1}, {0.7, 0.0, 0.1}};
  single.labels.assign(4, VertexLabel::LipLower);
  single.triangles.push_back({0, 1, 2});
  PoseParams rot;
  rot.euler = {kPi / 2.0, 0.0, 0.0};
  rot.expression = {};
  FaceMesh canon = normalize_and_select(single, rot);
  // Oracle: R = Rx(pi/2); canonical = R^T v.
  // Rx(pi/2) = [[1,0,0],[0,0,-1],[0,1,0]]; R^T (1,0,0) = (1,0,0).
  CHECK(canon.vertices[0][0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::fabs(canon.vertices[0][1]) < 1e-6);
  CHECK(std::fabs(canon.vertices[0][2]) < 1e-6);

  // Degenerate pose: rotate the patch so every z goes negative.
  PoseParams flip;
  flip.euler = {3.0, 0.0, 0.0};
  flip.expression = {0.0, 0.0};
  CHECK_THROWS_AS((void)normalize_and_select(mesh, flip), Error);
}

TEST_CASE("pose covariance: normalize(transform(mesh, pose), pose) == mesh") {
  Rng rng(11);
  for (int it = 0; it < 10; ++it) {
    FaceMesh mesh = random_lip_mesh(rng, 5);
    PoseParams pose;
    pose.euler = {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    pose.translation = {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)};
    FaceMesh posed = transform_mesh(mesh, pose);
    FaceMesh canon = normalize_and_select(posed, pose);
    PoseParams none;
    FaceMesh direct = normalize_and_select(mesh, none);
    REQUIRE(canon.vertices.size() == direct.vertices.size());
    for (size_t v = 0; v < canon.vertices.size(); ++v)
      for (int c = 0; c < 3; ++c)
        CHECK(std::fabs(canon.vertices[v][static_cast<size_t>(c)] -
                        direct.vertices[v][static_cast<size_t>(c)]) < 1e-5);
  }
}

TEST_CASE("rasterize_mask: full-cover quad, degenerate triangle") {
  FaceMesh quad;
  quad.vertices = {{-0.5, -0.5, 0.1}, {0.5, -0.5, 0.1}, {0.5, 0.5, 0.1}, {-0.5, 0.5, 0.1}};
  quad.labels.assign(4, VertexLabel::LipLower);
  quad.triangles = {{0, 1, 2}, {0, 2, 3}};
  LipMask full = rasterize_mask(quad, 8, 8);
  CHECK(full.count() == 64);

  FaceMesh degen;
  degen.vertices = {{-0.2, -0.2, 0.0}, {0.0, 0.0, 0.0}, {0.2, 0.2, 0.0}};
  degen.labels.assign(3, VertexLabel::LipLower);
  degen.triangles = {{0, 1, 2}};
  CHECK(rasterize_mask(degen, 16, 16).count() == 0);

  CHECK_THROWS_AS((void)rasterize_mask(quad, 4, 4), Error);
}

TEST_CASE("rasterize_mask bit-identical to brute-force oracle") {
  Rng rng(13);
  for (int it = 0; it < 20; ++it) {
    FaceMesh mesh = random_lip_mesh(rng, 6);
    int res = it % 2 == 0 ? 32 : 48;
    LipMask fast = rasterize_mask(mesh, res, res);
    LipMask slow = raster_oracle(mesh, res, res);
    REQUIRE(fast.grid.size() == slow.grid.size());
    bool identical = fast.grid == slow.grid;
    CHECK(identical);
  }
}

TEST_CASE("monotone coverage: union-extreme mask is a superset") {
  MeshTemplate t = tiny_template();
  Rng rng(17);
  for (int it = 0; it < 5; ++it) {
    PoseParams pose;
    pose.euler = {rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)};
    pose.translation = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), 0.0};
    pose.expression = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    LipMask union_mask = pose_aware_mask(t, pose, 32, 32);
    for (double extreme : {1.0, -1.0}) {
      std::vector<double> d = pose.expression;
      d[0] = extreme;
      FaceMesh one = apply_expression(t, d);
      FaceMesh canon = normalize_and_select(one, pose);
      FaceMesh posed = transform_mesh(canon, pose);
      LipMask m = rasterize_mask(posed, 32, 32);
      for (size_t i = 0; i < m.grid.size(); ++i) CHECK(union_mask.grid[i] >= m.grid[i]);
    }
  }
}

TEST_CASE("apply_mask boundary cases") {
  Tensor frame = Tensor::full({3, 8, 8}, 0.5);
  LipMask none;
  none.h = 8;
  none.w = 8;
  none.grid.assign(64, 0);
  Tensor same = apply_mask(frame, none);
  for (int64_t i = 0; i < same.size(); ++i) CHECK(same[i] == 0.5);

  LipMask all = none;
  all.grid.assign(64, 1);
  Tensor zeroed = apply_mask(frame, all);
  for (int64_t i = 0; i < zeroed.size(); ++i) CHECK(zeroed[i] == 0.0);

  LipMask half = none;
  for (int r = 4; r < 8; ++r)
    for (int c = 0; c < 8; ++c) half.at(r, c) = 1;
  Tensor mixed = apply_mask(frame, half);
  CHECK(mixed.at({0, 0, 0}) == 0.5);
  CHECK(mixed.at({2, 7, 7}) == 0.0);

  LipMask wrong;
  wrong.h = 4;
  wrong.w = 4;
  wrong.grid.assign(16, 0);
  CHECK_THROWS_AS((void)apply_mask(frame, wrong), Error);
}

TEST_CASE("mesh template JSON and mask PNG round-trips") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "lipsync_geom_test";
  fs::create_directories(dir);

  MeshTemplate t = tiny_template();
  save_mesh_template(t, (dir / "template.json").string());
  MeshTemplate back = load_mesh_template((dir / "template.json").string());
  REQUIRE(back.base.vertices.size() == t.base.vertices.size());
  REQUIRE(back.bases.size() == t.bases.size());
  for (size_t v = 0; v < t.base.vertices.size(); ++v) {
    CHECK(back.base.labels[v] == t.base.labels[v]);
    for (int c = 0; c < 3; ++c)
      CHECK(back.base.vertices[v][static_cast<size_t>(c)] == t.base.vertices[v][static_cast<size_t>(c)]);
  }

  Rng rng(19);
  FaceMesh mesh = random_lip_mesh(rng, 4);
  LipMask mask = rasterize_mask(mesh, 32, 32);
  io::write_png_mask((dir / "mask.png").string(), mask);
  LipMask loaded = io::read_png_mask((dir / "mask.png").string());
  CHECK(loaded.grid == mask.grid);

  fs::remove_all(dir);
}
