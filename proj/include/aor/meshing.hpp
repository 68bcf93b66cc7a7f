#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "aor/geometry.hpp"
#include "aor/mc_tables.hpp"

namespace aor {

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec3> colors;  // per vertex; empty when uncolored

  bool empty() const { return triangles.empty(); }
};

/// Extracts the iso-surface of the occupancy field over its box with the
/// standard 256-case marching-cubes table. `resolution` is the number of
/// samples per axis. Triangles wind so normals point toward decreasing
/// occupancy (outward); shared edge vertices are deduplicated.
template <class FieldLike>
TriangleMesh marching_cubes(const FieldLike& field, int resolution = 128, double iso = 0.5,
                            bool with_colors = false) {
  if (resolution < 2) throw std::invalid_argument("marching_cubes: resolution must be >= 2");
  const Aabb& box = field.box();
  const Vec3 ext = box.extent();
  const int n = resolution;
  const auto grid_point = [&](int ix, int iy, int iz) {
    return Vec3{box.p_min.x + ext.x * ix / (n - 1), box.p_min.y + ext.y * iy / (n - 1),
                box.p_min.z + ext.z * iz / (n - 1)};
  };

  // Occupancy grid, z-major slabs to keep memory linear in n^3 doubles.
  std::vector<double> values(static_cast<std::size_t>(n) * n * n);
  const auto vidx = [&](int ix, int iy, int iz) {
    return (static_cast<std::size_t>(iz) * n + iy) * n + ix;
  };
  for (int iz = 0; iz < n; ++iz)
    for (int iy = 0; iy < n; ++iy)
      for (int ix = 0; ix < n; ++ix)
        values[vidx(ix, iy, iz)] = field.query(grid_point(ix, iy, iz)).occupancy;

  TriangleMesh mesh;
  std::unordered_map<std::uint64_t, int> edge_vertices;
  const auto edge_key = [&](int ix, int iy, int iz, int edge) {
    const int* c0 = mc::kCornerOffsets[mc::kEdgeCorners[edge][0]];
    const int* c1 = mc::kCornerOffsets[mc::kEdgeCorners[edge][1]];
    const std::uint64_t g0 = vidx(ix + c0[0], iy + c0[1], iz + c0[2]);
    const std::uint64_t g1 = vidx(ix + c1[0], iy + c1[1], iz + c1[2]);
    return g0 < g1 ? (g0 << 32 | g1) : (g1 << 32 | g0);
  };

  for (int iz = 0; iz + 1 < n; ++iz) {
    for (int iy = 0; iy + 1 < n; ++iy) {
      for (int ix = 0; ix + 1 < n; ++ix) {
        double corner_val[8];
        int cube_index = 0;
        for (int c = 0; c < 8; ++c) {
          const int* off = mc::kCornerOffsets[c];
          corner_val[c] = values[vidx(ix + off[0], iy + off[1], iz + off[2])];
          if (corner_val[c] < iso) cube_index |= 1 << c;
        }
        const int* tri = mc::kTriTable[cube_index];
        if (tri[0] < 0) continue;
        int edge_vert[12];
        for (int t = 0; tri[t] >= 0; ++t) {
          const int edge = tri[t];
          // resolve or create the interpolated vertex on this edge
          const std::uint64_t key = edge_key(ix, iy, iz, edge);
          auto it = edge_vertices.find(key);
          if (it == edge_vertices.end()) {
            const int a = mc::kEdgeCorners[edge][0], b = mc::kEdgeCorners[edge][1];
            const int* oa = mc::kCornerOffsets[a];
            const int* ob = mc::kCornerOffsets[b];
            const double va = corner_val[a], vb = corner_val[b];
            const double denom = vb - va;
            const double s = denom != 0.0 ? std::clamp((iso - va) / denom, 0.0, 1.0) : 0.5;
            const Vec3 pa = grid_point(ix + oa[0], iy + oa[1], iz + oa[2]);
            const Vec3 pb = grid_point(ix + ob[0], iy + ob[1], iz + ob[2]);
            const Vec3 p = pa + (pb - pa) * s;
            it = edge_vertices.emplace(key, static_cast<int>(mesh.vertices.size())).first;
            mesh.vertices.push_back(p);
          }
          edge_vert[t % 3 == 0 ? 0 : (t % 3 == 1 ? 1 : 2)] = it->second;
          if (t % 3 == 2) {
            const std::array<int, 3> tri_idx{edge_vert[0], edge_vert[1], edge_vert[2]};
            const Vec3& p0 = mesh.vertices[tri_idx[0]];
            const Vec3 e1 = mesh.vertices[tri_idx[1]] - p0;
            const Vec3 e2 = mesh.vertices[tri_idx[2]] - p0;
            if (e1.cross(e2).squared_norm() > 1e-24) mesh.triangles.push_back(tri_idx);
          }
        }
      }
    }
  }
  if (with_colors) {
    mesh.colors.reserve(mesh.vertices.size());
    for (const Vec3& v : mesh.vertices) mesh.colors.push_back(field.query(v).color);
  }
  return mesh;
}

/// ASCII PLY export; colors are written as 8-bit per channel when present.
inline void export_ply(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("export_ply: cannot open " + path);
  const bool colored = mesh.colors.size() == mesh.vertices.size() && !mesh.vertices.empty();
  f << "ply\nformat ascii 1.0\n";
  f << "element vertex " << mesh.vertices.size() << "\n";
  f << "property float x\nproperty float y\nproperty float z\n";
  if (colored) f << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  f << "element face " << mesh.triangles.size() << "\n";
  f << "property list uchar int vertex_indices\nend_header\n";
  f << std::setprecision(9);
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3& v = mesh.vertices[i];
    f << v.x << " " << v.y << " " << v.z;
    if (colored) {
      const Vec3& c = mesh.colors[i];
      f << " " << static_cast<int>(std::clamp(c.x, 0.0, 1.0) * 255.0 + 0.5) << " "
        << static_cast<int>(std::clamp(c.y, 0.0, 1.0) * 255.0 + 0.5) << " "
        << static_cast<int>(std::clamp(c.z, 0.0, 1.0) * 255.0 + 0.5);
    }
    f << "\n";
  }
  for (const auto& t : mesh.triangles) f << "3 " << t[0] << " " << t[1] << " " << t[2] << "\n";
  if (!f) throw std::runtime_error("export_ply: write failed for " + path);
}

/// Minimal ASCII PLY reader covering the files export_ply writes.
inline TriangleMesh import_ply(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("import_ply: cannot open " + path);
  std::string line;
  std::size_t n_vertices = 0, n_faces = 0;
  bool colored = false;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "element") {
      std::string kind;
      std::size_t count;
      ls >> kind >> count;
      if (kind == "vertex") n_vertices = count;
      if (kind == "face") n_faces = count;
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      if (name == "red") colored = true;
    } else if (word == "end_header") {
      break;
    }
  }
  TriangleMesh mesh;
  mesh.vertices.resize(n_vertices);
  if (colored) mesh.colors.resize(n_vertices);
  for (std::size_t i = 0; i < n_vertices; ++i) {
    std::getline(f, line);
    std::istringstream ls(line);
    ls >> mesh.vertices[i].x >> mesh.vertices[i].y >> mesh.vertices[i].z;
    if (colored) {
      int r, g, b;
      ls >> r >> g >> b;
      mesh.colors[i] = {r / 255.0, g / 255.0, b / 255.0};
    }
  }
  mesh.triangles.resize(n_faces);
  for (std::size_t i = 0; i < n_faces; ++i) {
    std::getline(f, line);
    std::istringstream ls(line);
    int count;
    ls >> count >> mesh.triangles[i][0] >> mesh.triangles[i][1] >> mesh.triangles[i][2];
    if (count != 3) throw std::runtime_error("import_ply: non-triangle face");
  }
  if (!f) throw std::runtime_error("import_ply: truncated file " + path);
  return mesh;
}

}  // namespace aor
