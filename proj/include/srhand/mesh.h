#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "srhand/common.h"
#include "srhand/tensor.h"

namespace srhand::geom {

template <typename S>
using MatX3 = Eigen::Matrix<S, Eigen::Dynamic, 3, Eigen::RowMajor>;
template <typename S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Mat3 = Eigen::Matrix<S, 3, 3, Eigen::RowMajor>;
using FaceMat = Eigen::Matrix<Index, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Undirected edge list with canonical (lo, hi) vertex order, lexicographic.
inline std::vector<std::pair<Index, Index>> mesh_edges(const FaceMat& F) {
  std::vector<std::pair<Index, Index>> edges;
  edges.reserve(static_cast<std::size_t>(F.rows()) * 3);
  for (Index f = 0; f < F.rows(); ++f)
    for (int e = 0; e < 3; ++e) {
      Index a = F(f, e), b = F(f, (e + 1) % 3);
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

// Closed 2-manifold test: every undirected edge is used by exactly two faces,
// once per direction.
inline bool is_closed_manifold(const FaceMat& F, Index num_vertices) {
  std::map<std::pair<Index, Index>, int> directed;
  for (Index f = 0; f < F.rows(); ++f)
    for (int e = 0; e < 3; ++e) {
      Index a = F(f, e), b = F(f, (e + 1) % 3);
      if (a < 0 || b < 0 || a >= num_vertices || b >= num_vertices || a == b) return false;
      if (++directed[{a, b}] > 1) return false;  // duplicate half-edge
    }
  for (const auto& [e, n] : directed) {
    auto rev = directed.find({e.second, e.first});
    if (rev == directed.end()) return false;
  }
  return true;
}

inline Index euler_characteristic(const FaceMat& F, Index num_vertices) {
  return num_vertices - static_cast<Index>(mesh_edges(F).size()) + F.rows();
}

// Where a vertex of a subdivided mesh came from: original vertices keep their
// index, midpoints record the parent edge.
struct VertexProvenance {
  Index parent_a = -1;
  Index parent_b = -1;  // -1 for original vertices
};

// Articulated rest-pose mesh: joint hierarchy, skinning weights, per-vertex
// part labels, optional linear shape basis [B, V*3].
template <typename S>
struct SkinnedTemplate {
  MatX3<S> vertices;
  FaceMat faces;
  std::vector<int> parent;  // per joint, -1 for the root
  MatX3<S> joints;
  MatX<S> weights;          // [V, J], rows sum to 1
  std::vector<int> part;    // per vertex, a joint id
  MatX<S> shape_basis;      // [B, V*3], possibly 0 rows
  std::vector<VertexProvenance> provenance;  // filled by subdivide

  Index num_vertices() const { return vertices.rows(); }
  Index num_faces() const { return faces.rows(); }
  Index num_joints() const { return joints.rows(); }

  void validate() const {
    if (weights.rows() != vertices.rows() || weights.cols() != joints.rows())
      throw ConfigError("skinning weight matrix shape mismatch");
    if (static_cast<Index>(part.size()) != vertices.rows())
      throw ConfigError("part label count mismatch");
    if (static_cast<Index>(parent.size()) != joints.rows())
      throw ConfigError("joint parent count mismatch");
    int roots = 0;
    for (std::size_t j = 0; j < parent.size(); ++j) {
      if (parent[j] == -1) {
        ++roots;
        continue;
      }
      if (parent[j] < 0 || parent[j] >= static_cast<int>(parent.size()))
        throw ConfigError("joint parent index out of range");
      // cycle check: walk up at most J steps
      int cur = static_cast<int>(j), steps = 0;
      while (cur != -1) {
        cur = parent[static_cast<std::size_t>(cur)];
        if (++steps > static_cast<int>(parent.size()))
          throw ConfigError("joint hierarchy contains a cycle");
      }
    }
    if (roots != 1) throw ConfigError("joint hierarchy must have exactly one root");
    if (!is_closed_manifold(faces, num_vertices()))
      throw ConfigError("template mesh is not a closed manifold");
    if ((weights.array() < S(0)).any()) throw ConfigError("negative skinning weight");
    if (((weights.rowwise().sum().array() - S(1)).abs() > S(1e-6)).any())
      throw ConfigError("skinning weight rows must sum to 1");
    if (shape_basis.rows() > 0 && shape_basis.cols() != vertices.rows() * 3)
      throw ConfigError("shape basis column count must be 3V");
  }
};

// One round of midpoint subdivision. New vertices sit at edge midpoints;
// weights and shape basis columns are endpoint averages (weight rows stay
// convex), part label takes the endpoint majority with ties to the lower id.
// Each face (i,j,k) becomes 4: corner triangles plus the center triangle.
template <typename S>
SkinnedTemplate<S> subdivide_once(const SkinnedTemplate<S>& in) {
  auto edges = mesh_edges(in.faces);
  std::map<std::pair<Index, Index>, Index> midpoint;
  Index V = in.num_vertices();
  Index E = static_cast<Index>(edges.size());
  for (Index e = 0; e < E; ++e) midpoint[edges[static_cast<std::size_t>(e)]] = V + e;

  SkinnedTemplate<S> out;
  out.parent = in.parent;
  out.joints = in.joints;
  out.vertices.resize(V + E, 3);
  out.vertices.topRows(V) = in.vertices;
  out.weights.resize(V + E, in.weights.cols());
  out.weights.topRows(V) = in.weights;
  out.part.resize(static_cast<std::size_t>(V + E));
  std::copy(in.part.begin(), in.part.end(), out.part.begin());
  if (in.shape_basis.rows() > 0) {
    out.shape_basis.resize(in.shape_basis.rows(), (V + E) * 3);
    out.shape_basis.leftCols(V * 3) = in.shape_basis;
  }
  out.provenance.resize(static_cast<std::size_t>(V + E));
  for (Index v = 0; v < V; ++v)
    out.provenance[static_cast<std::size_t>(v)] =
        v < static_cast<Index>(in.provenance.size()) ? in.provenance[static_cast<std::size_t>(v)]
                                                     : VertexProvenance{};

  for (Index e = 0; e < E; ++e) {
    auto [a, b] = edges[static_cast<std::size_t>(e)];
    Index m = V + e;
    out.vertices.row(m) = (in.vertices.row(a) + in.vertices.row(b)) * S(0.5);
    out.weights.row(m) = (in.weights.row(a) + in.weights.row(b)) * S(0.5);
    out.part[static_cast<std::size_t>(m)] =
        std::min(in.part[static_cast<std::size_t>(a)], in.part[static_cast<std::size_t>(b)]);
    if (in.part[static_cast<std::size_t>(a)] == in.part[static_cast<std::size_t>(b)])
      out.part[static_cast<std::size_t>(m)] = in.part[static_cast<std::size_t>(a)];
    if (in.shape_basis.rows() > 0)
      out.shape_basis.middleCols(m * 3, 3) =
          (in.shape_basis.middleCols(a * 3, 3) + in.shape_basis.middleCols(b * 3, 3)) * S(0.5);
    out.provenance[static_cast<std::size_t>(m)] = VertexProvenance{a, b};
  }

  out.faces.resize(in.num_faces() * 4, 3);
  for (Index f = 0; f < in.num_faces(); ++f) {
    Index i = in.faces(f, 0), j = in.faces(f, 1), k = in.faces(f, 2);
    Index mij = midpoint[{std::min(i, j), std::max(i, j)}];
    Index mjk = midpoint[{std::min(j, k), std::max(j, k)}];
    Index mki = midpoint[{std::min(k, i), std::max(k, i)}];
    out.faces.row(4 * f + 0) << i, mij, mki;
    out.faces.row(4 * f + 1) << j, mjk, mij;
    out.faces.row(4 * f + 2) << k, mki, mjk;
    out.faces.row(4 * f + 3) << mij, mjk, mki;
  }
  return out;
}

template <typename S>
SkinnedTemplate<S> subdivide(const SkinnedTemplate<S>& mesh, int rounds) {
  mesh.validate();
  SkinnedTemplate<S> out = mesh;
  for (int r = 0; r < rounds; ++r) {
    out = subdivide_once(out);
    out.validate();
  }
  return out;
}

// Rest lengths of all edges of a mesh, in the canonical edge order.
template <typename S>
Eigen::Matrix<S, Eigen::Dynamic, 1> edge_lengths(const MatX3<S>& V, const FaceMat& F) {
  auto edges = mesh_edges(F);
  Eigen::Matrix<S, Eigen::Dynamic, 1> len(static_cast<Index>(edges.size()));
  for (std::size_t e = 0; e < edges.size(); ++e)
    len[static_cast<Index>(e)] = (V.row(edges[e].first) - V.row(edges[e].second)).norm();
  return len;
}

// Plain (non-differentiable) area-weighted unit vertex normals.
template <typename S>
MatX3<S> vertex_normals_plain(const MatX3<S>& V, const FaceMat& F) {
  MatX3<S> n = MatX3<S>::Zero(V.rows(), 3);
  for (Index f = 0; f < F.rows(); ++f) {
    Vec3<S> a = V.row(F(f, 0)), b = V.row(F(f, 1)), c = V.row(F(f, 2));
    Vec3<S> fn = (b - a).cross(c - a);
    n.row(F(f, 0)) += fn.transpose();
    n.row(F(f, 1)) += fn.transpose();
    n.row(F(f, 2)) += fn.transpose();
  }
  for (Index v = 0; v < V.rows(); ++v) {
    S len = n.row(v).norm();
    if (len > S(1e-20)) n.row(v) /= len;
  }
  return n;
}

}  // namespace srhand::geom
