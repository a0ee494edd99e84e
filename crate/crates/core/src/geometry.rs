//! Point-cloud container, neighbor graph, tangent frames and surface projection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use thiserror::Error;

use crate::Vec3;

/// Points closer than this are treated as duplicates and merged at build time.
pub const DUPLICATE_DISTANCE: f64 = 1e-9;

/// Minimum ratio of the second to the largest covariance eigenvalue for a
/// neighborhood to span a plane.
const PLANARITY_RATIO: f64 = 1e-12;

pub type Rgb = [u8; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("point {0} has a non-finite coordinate")]
    NonFiniteCoordinate(usize),
    #[error("k = {k} neighbors need more than {k} distinct points, got {n}")]
    InsufficientPoints { k: usize, n: usize },
    #[error("neighbor count must be at least 1")]
    ZeroNeighbors,
    #[error("{colors} colors given for {points} points")]
    ColorCountMismatch { colors: usize, points: usize },
    #[error("neighborhood of point {0} is degenerate (collinear or coincident neighbors)")]
    DegenerateNeighborhood(usize),
    #[error("tangent frames have not been estimated for this cloud")]
    FramesMissing,
    #[error("{frames} frames given for {points} points")]
    FrameCountMismatch { frames: usize, points: usize },
    #[error("spatial index construction failed: {0}")]
    Index(String),
}

/// One entry of a point's neighbor list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// Euclidean distance in meters.
    pub distance: f64,
}

/// Orthonormal frame at a surface point. `e1 × e2 = normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentFrame {
    pub normal: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
}

impl TangentFrame {
    /// Completes a unit normal into a right-handed frame. The first tangent is
    /// built from the coordinate axis least aligned with the normal.
    pub fn from_normal(normal: Vec3) -> Self {
        let normal = normal.normalize();
        let abs = normal.abs();
        let axis = if abs.x <= abs.y && abs.x <= abs.z {
            Vec3::x()
        } else if abs.y <= abs.z {
            Vec3::y()
        } else {
            Vec3::z()
        };
        let e1 = (axis - normal * axis.dot(&normal)).normalize();
        let e2 = normal.cross(&e1);
        Self { normal, e1, e2 }
    }

    /// Coordinates of `v` in the tangent basis (the normal component is dropped).
    pub fn to_local(&self, v: &Vec3) -> [f64; 2] {
        [v.dot(&self.e1), v.dot(&self.e2)]
    }

    pub fn lift(&self, local: [f64; 2]) -> Vec3 {
        self.e1 * local[0] + self.e2 * local[1]
    }

    /// Removes the normal component of `v`.
    pub fn project(&self, v: &Vec3) -> Vec3 {
        v - self.normal * v.dot(&self.normal)
    }

}

/// Immutable point cloud with its k-nearest-neighbor graph.
pub struct PointCloud {
    positions: Vec<Vec3>,
    colors: Option<Vec<Rgb>>,
    /// `k` entries per point, flattened.
    neighbors: Vec<Neighbor>,
    k: usize,
    mean_spacing: f64,
    source_indices: Vec<usize>,
    frames: Option<Vec<TangentFrame>>,
    tree: ImmutableKdTree<f64, 3>,
}

impl fmt::Debug for PointCloud {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PointCloud")
            .field("point_count", &self.len())
            .field("k", &self.k)
            .field("mean_spacing", &self.mean_spacing)
            .field("has_colors", &self.colors.is_some())
            .field("has_frames", &self.frames.is_some())
            .finish()
    }
}

/// Builds a cloud and its neighbor graph. Duplicate points (closer than
/// [`DUPLICATE_DISTANCE`]) are merged keeping the first occurrence; see
/// [`PointCloud::source_indices`] to map per-point input data.
pub fn build_cloud(
    positions: &[Vec3],
    colors: Option<&[Rgb]>,
    k: usize,
) -> Result<PointCloud, GeometryError> {
    if positions.is_empty() {
        return Err(GeometryError::EmptyCloud);
    }
    if k == 0 {
        return Err(GeometryError::ZeroNeighbors);
    }
    if let Some(i) = positions.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(GeometryError::NonFiniteCoordinate(i));
    }
    if let Some(colors) = colors {
        if colors.len() != positions.len() {
            return Err(GeometryError::ColorCountMismatch {
                colors: colors.len(),
                points: positions.len(),
            });
        }
    }

    let source_indices = deduplicate(positions)?;
    let kept: Vec<Vec3> = source_indices.iter().map(|&i| positions[i]).collect();
    let kept_colors = colors.map(|c| source_indices.iter().map(|&i| c[i]).collect::<Vec<_>>());
    let n = kept.len();
    if k >= n {
        return Err(GeometryError::InsufficientPoints { k, n });
    }

    let tree = make_tree(&kept)?;
    let query_count = NonZero::new(k + 1).expect("k + 1 > 0");
    let neighbors: Vec<Neighbor> = kept
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, p)| {
            let mut found: Vec<Neighbor> = tree
                .query(&[p.x, p.y, p.z])
                .nearest_n::<SquaredEuclidean<f64>>(query_count)
                .execute()
                .into_iter()
                .filter(|r| r.item as usize != i)
                .map(|r| Neighbor {
                    index: r.item as usize,
                    distance: (kept[r.item as usize] - p).norm(),
                })
                .collect();
            found.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
            found.truncate(k);
            found.into_iter()
        })
        .collect();
    debug_assert_eq!(neighbors.len(), n * k);

    let mean_spacing = neighbors.chunks(k).map(|row| row[0].distance).sum::<f64>() / n as f64;

    Ok(PointCloud {
        positions: kept,
        colors: kept_colors,
        neighbors,
        k,
        mean_spacing,
        source_indices,
        frames: None,
        tree,
    })
}

/// [`build_cloud`] followed by [`estimate_frames`].
pub fn build_surface(
    positions: &[Vec3],
    colors: Option<&[Rgb]>,
    k: usize,
) -> Result<PointCloud, GeometryError> {
    let cloud = build_cloud(positions, colors, k)?;
    let frames = estimate_frames(&cloud)?;
    cloud.with_frames(frames)
}

fn make_tree(points: &[Vec3]) -> Result<ImmutableKdTree<f64, 3>, GeometryError> {
    let coords: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    ImmutableKdTree::new_from_slice(&coords).map_err(|e| GeometryError::Index(format!("{e:?}")))
}

fn deduplicate(positions: &[Vec3]) -> Result<Vec<usize>, GeometryError> {
    let tree = make_tree(positions)?;
    let radius = DUPLICATE_DISTANCE * DUPLICATE_DISTANCE;
    let kept = (0..positions.len())
        .filter(|&i| {
            let p = positions[i];
            !tree
                .query(&[p.x, p.y, p.z])
                .within::<SquaredEuclidean<f64>>(radius)
                .execute()
                .into_iter()
                .any(|r| (r.item as usize) < i && (positions[r.item as usize] - p).norm() < DUPLICATE_DISTANCE)
        })
        .collect();
    Ok(kept)
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, i: usize) -> Vec3 {
        self.positions[i]
    }

    pub fn colors(&self) -> Option<&[Rgb]> {
        self.colors.as_deref()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbors of point `i`, sorted by ascending distance, excluding `i`.
    pub fn neighbors(&self, i: usize) -> &[Neighbor] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    /// Mean distance from each point to its nearest neighbor (`h`).
    pub fn mean_spacing(&self) -> f64 {
        self.mean_spacing
    }

    /// For each retained point, its index in the positions passed to
    /// [`build_cloud`].
    pub fn source_indices(&self) -> &[usize] {
        &self.source_indices
    }

    /// Picks the entries of per-input-point data that belong to retained points.
    pub fn select<T: Clone>(&self, per_input_point: &[T]) -> Vec<T> {
        self.source_indices.iter().map(|&i| per_input_point[i].clone()).collect()
    }

    pub fn frames(&self) -> Option<&[TangentFrame]> {
        self.frames.as_deref()
    }

    pub fn frame(&self, i: usize) -> Result<&TangentFrame, GeometryError> {
        self.frames
            .as_ref()
            .map(|f| &f[i])
            .ok_or(GeometryError::FramesMissing)
    }

    pub fn has_frames(&self) -> bool {
        self.frames.is_some()
    }

    /// Attaches tangent frames, usually from [`estimate_frames`].
    pub fn with_frames(mut self, frames: Vec<TangentFrame>) -> Result<Self, GeometryError> {
        if frames.len() != self.len() {
            return Err(GeometryError::FrameCountMismatch {
                frames: frames.len(),
                points: self.len(),
            });
        }
        self.frames = Some(frames);
        Ok(self)
    }

    /// Index and Euclidean distance of the cloud point nearest to `query`.
    pub fn nearest(&self, query: &Vec3) -> (usize, f64) {
        let r = self
            .tree
            .query(&[query.x, query.y, query.z])
            .nearest_one::<SquaredEuclidean<f64>>()
            .execute();
        (r.item as usize, r.distance.sqrt())
    }

    /// Undirected adjacency: `j` is adjacent to `i` if either lists the other.
    /// Lists are sorted by index.
    pub fn symmetric_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::with_capacity(self.k * 2); self.len()];
        for i in 0..self.len() {
            for nb in self.neighbors(i) {
                adjacency[i].push(nb.index);
                adjacency[nb.index].push(i);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        adjacency
    }
}

/// Per-point tangent frames from PCA of each neighborhood, with normals made
/// globally consistent by propagation along a minimum spanning tree.
///
/// The tree is grown by Prim's algorithm over the symmetrized neighbor graph
/// with edge cost `1 - |n_i · n_j|`. Each connected component is seeded at its
/// highest point (max z), whose normal is oriented to `n_z >= 0`.
pub fn estimate_frames(cloud: &PointCloud) -> Result<Vec<TangentFrame>, GeometryError> {
    let normals: Vec<Vec3> = (0..cloud.len())
        .into_par_iter()
        .map(|i| pca_normal(cloud, i))
        .collect::<Result<_, _>>()?;
    let normals = orient_normals(cloud, normals);
    Ok(normals.into_iter().map(TangentFrame::from_normal).collect())
}

fn pca_normal(cloud: &PointCloud, i: usize) -> Result<Vec3, GeometryError> {
    let nbrs = cloud.neighbors(i);
    let count = (nbrs.len() + 1) as f64;
    let origin = cloud.position(i);
    // Offsets relative to the point itself keep the covariance translation
    // invariant in floating point.
    let offsets: Vec<Vec3> = std::iter::once(Vec3::zeros())
        .chain(nbrs.iter().map(|nb| cloud.position(nb.index) - origin))
        .collect();
    let centroid = offsets.iter().sum::<Vec3>() / count;
    let mut covariance = Matrix3::zeros();
    for d in &offsets {
        let c = d - centroid;
        covariance += c * c.transpose();
    }
    covariance /= count;

    let eigen = SymmetricEigen::new(covariance);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eigen.eigenvalues[a].total_cmp(&eigen.eigenvalues[b]));
    let largest = eigen.eigenvalues[order[2]];
    let middle = eigen.eigenvalues[order[1]];
    if !(largest > 0.0 && middle > PLANARITY_RATIO * largest) {
        return Err(GeometryError::DegenerateNeighborhood(i));
    }
    Ok(eigen.eigenvectors.column(order[0]).normalize())
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    node: usize,
    parent: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost, ties broken by lowest node index.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn orient_normals(cloud: &PointCloud, mut normals: Vec<Vec3>) -> Vec<Vec3> {
    let n = cloud.len();
    let adjacency = cloud.symmetric_adjacency();
    let mut visited = vec![false; n];

    // Seeds in order of decreasing height so every component starts at its top.
    let mut by_height: Vec<usize> = (0..n).collect();
    by_height.sort_by(|&a, &b| {
        cloud.positions[b]
            .z
            .total_cmp(&cloud.positions[a].z)
            .then(a.cmp(&b))
    });

    let mut heap = BinaryHeap::new();
    for seed in by_height {
        if visited[seed] {
            continue;
        }
        if normals[seed].z < 0.0 {
            normals[seed] = -normals[seed];
        }
        visited[seed] = true;
        push_edges(seed, &adjacency, &normals, &visited, &mut heap);
        while let Some(Candidate { node, parent, .. }) = heap.pop() {
            if visited[node] {
                continue;
            }
            if normals[node].dot(&normals[parent]) < 0.0 {
                normals[node] = -normals[node];
            }
            visited[node] = true;
            push_edges(node, &adjacency, &normals, &visited, &mut heap);
        }
    }
    normals
}

fn push_edges(
    from: usize,
    adjacency: &[Vec<usize>],
    normals: &[Vec3],
    visited: &[bool],
    heap: &mut BinaryHeap<Candidate>,
) {
    for &to in &adjacency[from] {
        if !visited[to] {
            heap.push(Candidate {
                cost: 1.0 - normals[from].dot(&normals[to]).abs(),
                node: to,
                parent: from,
            });
        }
    }
}

/// Nearest cloud point to `query` and the projection of `query` onto that
/// point's tangent plane.
pub fn project_to_surface(cloud: &PointCloud, query: &Vec3) -> Result<(usize, Vec3), GeometryError> {
    let (i, _) = cloud.nearest(query);
    let frame = cloud.frame(i)?;
    let p = cloud.position(i);
    let foot = query - frame.normal * (query - p).dot(&frame.normal);
    Ok((i, foot))
}
