//! Discrete Laplace-Beltrami operator and tangent-plane gradients.
//!
//! Sign convention: [`SparseOperator`] stores `L_pos = -L`, the positive
//! semidefinite graph Laplacian (`diag = Σ w_ij`, off-diagonals `-w_ij`), so
//! `u̇ = L u` becomes `M u̇ = -L_pos u` and every linear system assembled from
//! it is symmetric positive definite. Keep this in mind when reading signs in
//! the solvers.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{GeometryError, PointCloud};
use crate::Vec3;

/// Largest accepted condition number of the gradient fit's normal matrix.
pub const MAX_GRADIENT_CONDITION: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("neighbor graph has {0} connected components")]
    GraphDisconnected(usize),
    #[error("gradient stencil at point {0} is rank deficient")]
    RankDeficientStencil(usize),
    #[error("field is undefined at point {0}")]
    UndefinedAt(usize),
    #[error("{got} values given for {expected} points")]
    LengthMismatch { got: usize, expected: usize },
    #[error("kernel bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassKind {
    /// `M_ii = h²` for every point.
    #[default]
    Uniform,
    /// `M_ii = h² · mean(d) / d_i` with `d_i = Σ_j w_ij`, so densely sampled
    /// points get smaller area shares.
    DensityCorrected,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LaplacianParams {
    /// Kernel bandwidth `ε` in m². Defaults to `h²`.
    pub bandwidth: Option<f64>,
    pub mass: MassKind,
}

/// Symmetric sparse stiffness `L_pos` (off-diagonal weights in CSR form plus
/// the diagonal) and a diagonal mass matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
    diagonal: Vec<f64>,
    mass: Vec<f64>,
    bandwidth: f64,
    domain: Option<Vec<bool>>,
    fingerprint: u64,
}

/// Connected components of an operator's edge graph restricted to a mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    /// Component id per point, `None` outside the mask.
    pub component_of: Vec<Option<usize>>,
    pub count: usize,
}

/// Assembles the Gaussian-kernel graph Laplacian over the union-symmetrized
/// k-NN graph: `w_ij = exp(-‖p_i - p_j‖² / (4ε))`.
///
/// A disconnected graph is not an error here; call
/// [`SparseOperator::check_connected`] to surface it.
pub fn assemble_laplacian(cloud: &PointCloud, params: &LaplacianParams) -> Result<SparseOperator, OperatorError> {
    let h = cloud.mean_spacing();
    let bandwidth = params.bandwidth.unwrap_or(h * h);
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(OperatorError::InvalidBandwidth(bandwidth));
    }
    let adjacency = cloud.symmetric_adjacency();
    let rows: Vec<Vec<(usize, f64)>> = adjacency
        .par_iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let p = cloud.position(i);
            nbrs.iter()
                .map(|&j| {
                    let d2 = (cloud.position(j) - p).norm_squared();
                    (j, (-d2 / (4.0 * bandwidth)).exp())
                })
                .collect()
        })
        .collect();

    let mut row_ptr = Vec::with_capacity(rows.len() + 1);
    let mut cols = Vec::new();
    let mut weights = Vec::new();
    row_ptr.push(0);
    for row in &rows {
        for &(j, w) in row {
            cols.push(j);
            weights.push(w);
        }
        row_ptr.push(cols.len());
    }
    let diagonal: Vec<f64> = rows.iter().map(|r| r.iter().map(|&(_, w)| w).sum()).collect();

    let area = h * h;
    let mass = match params.mass {
        MassKind::Uniform => vec![area; rows.len()],
        MassKind::DensityCorrected => {
            let mean = diagonal.iter().sum::<f64>() / diagonal.len() as f64;
            diagonal
                .iter()
                .map(|&d| if d > 0.0 { area * mean / d } else { area })
                .collect()
        }
    };

    let op = SparseOperator::from_parts(row_ptr, cols, weights, diagonal, mass, bandwidth, None);
    if let Err(e) = op.check_connected() {
        log::warn!("{e}; solves proceed per component");
    }
    Ok(op)
}

impl SparseOperator {
    fn from_parts(
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        weights: Vec<f64>,
        diagonal: Vec<f64>,
        mass: Vec<f64>,
        bandwidth: f64,
        domain: Option<Vec<bool>>,
    ) -> Self {
        let mut hasher = DefaultHasher::new();
        row_ptr.hash(&mut hasher);
        cols.hash(&mut hasher);
        for v in weights.iter().chain(&mass) {
            v.to_bits().hash(&mut hasher);
        }
        domain.hash(&mut hasher);
        Self {
            row_ptr,
            cols,
            weights,
            diagonal,
            mass,
            bandwidth,
            domain,
            fingerprint: hasher.finish(),
        }
    }

    /// Number of points (rows), including points outside the domain.
    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    /// Off-diagonal entries of row `i` as `(j, w_ij)`; the stiffness entry is `-w_ij`.
    pub fn edges(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()].iter().copied().zip(self.weights[range].iter().copied())
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Points this operator is defined on; `None` means all points.
    pub fn domain(&self) -> Option<&[bool]> {
        self.domain.as_deref()
    }

    pub fn in_domain(&self, i: usize) -> bool {
        self.domain.as_ref().is_none_or(|d| d[i])
    }

    /// Content hash, used to key factorization caches.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn nnz(&self) -> usize {
        self.cols.len() + self.len()
    }

    /// `L_pos · x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                self.diagonal[i] * x[i] - self.edges(i).map(|(j, w)| w * x[j]).sum::<f64>()
            })
            .collect()
    }

    /// `xᵀ L_pos x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.apply(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// Sub-operator on the points of `mask` (intersected with the current
    /// domain). Edges leaving the mask are dropped and the diagonal is
    /// recomputed, so the mask boundary behaves as a zero-flux wall.
    pub fn restrict(&self, mask: &[bool]) -> SparseOperator {
        assert_eq!(mask.len(), self.len(), "mask length must match operator size");
        let keep: Vec<bool> = (0..self.len()).map(|i| mask[i] && self.in_domain(i)).collect();
        let mut row_ptr = Vec::with_capacity(self.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        let mut diagonal = vec![0.0; self.len()];
        row_ptr.push(0);
        for i in 0..self.len() {
            if keep[i] {
                for (j, w) in self.edges(i) {
                    if keep[j] {
                        cols.push(j);
                        weights.push(w);
                        diagonal[i] += w;
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        SparseOperator::from_parts(
            row_ptr,
            cols,
            weights,
            diagonal,
            self.mass.clone(),
            self.bandwidth,
            Some(keep),
        )
    }

    /// Connected components of the domain.
    pub fn components(&self) -> Components {
        let n = self.len();
        let mut component_of = vec![None; n];
        let mut count = 0;
        let mut stack = Vec::new();
        for seed in 0..n {
            if component_of[seed].is_some() || !self.in_domain(seed) {
                continue;
            }
            component_of[seed] = Some(count);
            stack.push(seed);
            while let Some(i) = stack.pop() {
                for (j, _) in self.edges(i) {
                    if component_of[j].is_none() && self.in_domain(j) {
                        component_of[j] = Some(count);
                        stack.push(j);
                    }
                }
            }
            count += 1;
        }
        Components { component_of, count }
    }

    pub fn check_connected(&self) -> Result<(), OperatorError> {
        match self.components().count {
            0 | 1 => Ok(()),
            n => Err(OperatorError::GraphDisconnected(n)),
        }
    }

    /// Dense copy of `L_pos`, for small problems and test oracles.
    pub fn dense_stiffness(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..n {
            dense[(i, i)] = self.diagonal[i];
            for (j, w) in self.edges(i) {
                dense[(i, j)] -= w;
            }
        }
        dense
    }
}

/// One real value per point with a definedness mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
    pub defined: Vec<bool>,
}

impl ScalarField {
    pub fn new(values: Vec<f64>) -> Self {
        let defined = vec![true; values.len()];
        Self { values, defined }
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self::new(vec![value; n])
    }

    pub fn with_mask(values: Vec<f64>, defined: Vec<bool>) -> Self {
        assert_eq!(values.len(), defined.len());
        Self { values, defined }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_defined(&self, i: usize) -> bool {
        self.defined[i]
    }

    pub fn get(&self, i: usize) -> Option<f64> {
        self.defined[i].then(|| self.values[i])
    }

    pub fn undefined_count(&self) -> usize {
        self.defined.iter().filter(|d| !**d).count()
    }

    /// Min and max over defined points.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .zip(&self.defined)
            .filter(|(_, d)| **d)
            .map(|(v, _)| *v)
            .fold(None, |acc, v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// One tangent 3-vector per point with a definedness mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVectorField {
    pub vectors: Vec<Vec3>,
    pub defined: Vec<bool>,
}

impl TangentVectorField {
    pub fn undefined(n: usize) -> Self {
        Self {
            vectors: vec![Vec3::zeros(); n],
            defined: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<Vec3> {
        self.defined[i].then(|| self.vectors[i])
    }

    pub fn set(&mut self, i: usize, v: Vec3) {
        self.vectors[i] = v;
        self.defined[i] = true;
    }

    pub fn unset(&mut self, i: usize) {
        self.vectors[i] = Vec3::zeros();
        self.defined[i] = false;
    }

    pub fn undefined_count(&self) -> usize {
        self.defined.iter().filter(|d| !**d).count()
    }
}

/// Tangent-plane gradient of `field` at point `index`.
///
/// Fits `a + g·(q - p)` by weighted least squares over the point and its
/// defined neighbors, in tangent-plane coordinates scaled by `sqrt(ε)`, with
/// weights `exp(-‖q - p‖² / (4ε))`. Returns `g` lifted to ℝ³.
pub fn gradient(cloud: &PointCloud, field: &ScalarField, index: usize, bandwidth: f64) -> Result<Vec3, OperatorError> {
    if field.len() != cloud.len() {
        return Err(OperatorError::LengthMismatch {
            got: field.len(),
            expected: cloud.len(),
        });
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(OperatorError::InvalidBandwidth(bandwidth));
    }
    if !field.is_defined(index) {
        return Err(OperatorError::UndefinedAt(index));
    }
    let frame = cloud.frame(index)?;
    let p = cloud.position(index);
    let scale = bandwidth.sqrt();
    let center = field.values[index];

    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    let mut accumulate = |x: f64, y: f64, w: f64, u: f64| {
        let row = Vector3::new(1.0, x, y);
        normal += row * row.transpose() * w;
        rhs += row * (w * u);
    };
    accumulate(0.0, 0.0, 1.0, center);
    let mut usable = 0;
    for nb in cloud.neighbors(index) {
        if !field.is_defined(nb.index) {
            continue;
        }
        let offset = cloud.position(nb.index) - p;
        let [x, y] = frame.to_local(&offset);
        let w = (-offset.norm_squared() / (4.0 * bandwidth)).exp();
        accumulate(x / scale, y / scale, w, field.values[nb.index]);
        usable += 1;
    }
    if usable < 3 {
        return Err(OperatorError::RankDeficientStencil(index));
    }
    let eigenvalues = SymmetricEigen::new(normal).eigenvalues;
    let (lo, hi) = eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > 0.0 && hi / lo <= MAX_GRADIENT_CONDITION) {
        return Err(OperatorError::RankDeficientStencil(index));
    }
    let solution = normal
        .cholesky()
        .ok_or(OperatorError::RankDeficientStencil(index))?
        .solve(&rhs);
    Ok(frame.lift([solution[1] / scale, solution[2] / scale]))
}

/// [`gradient`] at every point, in parallel.
pub fn gradient_field(
    cloud: &PointCloud,
    field: &ScalarField,
    bandwidth: f64,
) -> Vec<Result<Vec3, OperatorError>> {
    (0..cloud.len())
        .into_par_iter()
        .map(|i| gradient(cloud, field, i, bandwidth))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_cloud, build_surface};

    #[test]
    fn two_point_kernel() {
        let d = 0.37;
        let pts = [Vec3::zeros(), Vec3::new(d, 0.0, 0.0)];
        let cloud = build_cloud(&pts, None, 1).unwrap();
        let op = assemble_laplacian(
            &cloud,
            &LaplacianParams {
                bandwidth: Some(d * d),
                ..Default::default()
            },
        )
        .unwrap();
        let w = (-0.25f64).exp();
        let dense = op.dense_stiffness();
        assert!((dense[(0, 0)] - w).abs() < 1e-15);
        assert!((dense[(0, 1)] + w).abs() < 1e-15);
        assert!((dense[(1, 0)] + w).abs() < 1e-15);
        assert!((dense[(1, 1)] - w).abs() < 1e-15);
    }

    #[test]
    fn restriction_recomputes_diagonal() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let cloud = build_cloud(&pts, None, 1).unwrap();
        let op = assemble_laplacian(&cloud, &LaplacianParams::default()).unwrap();
        let sub = op.restrict(&[true, true, true, false, false]);
        let ones = [1.0; 5];
        let applied = sub.apply(&ones);
        assert!(applied.iter().all(|v| v.abs() < 1e-15));
        assert!(!sub.in_domain(3));
        assert_eq!(sub.diagonal()[3], 0.0);
        assert_eq!(sub.components().count, 1);
        assert_ne!(sub.fingerprint(), op.fingerprint());
    }

    #[test]
    fn disconnected_graph_is_reported() {
        let mut pts: Vec<Vec3> = (0..4).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        pts.extend((0..4).map(|i| Vec3::new(100.0 + i as f64, 0.0, 0.0)));
        let cloud = build_cloud(&pts, None, 2).unwrap();
        let op = assemble_laplacian(&cloud, &LaplacianParams::default()).unwrap();
        assert_eq!(op.check_connected(), Err(OperatorError::GraphDisconnected(2)));
    }

    #[test]
    fn density_corrected_mass_is_positive() {
        let pts: Vec<Vec3> = (0..30)
            .map(|i| Vec3::new((i as f64).powf(1.3) * 0.1, (i % 3) as f64 * 0.1, 0.0))
            .collect();
        let cloud = build_cloud(&pts, None, 6).unwrap();
        let op = assemble_laplacian(
            &cloud,
            &LaplacianParams {
                mass: MassKind::DensityCorrected,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(op.mass().iter().all(|&m| m > 0.0));
        let h2 = cloud.mean_spacing().powi(2);
        let mean = op.mass().iter().sum::<f64>() / 30.0;
        assert!(mean > 0.5 * h2 && mean < 2.0 * h2);
    }

    #[test]
    fn gradient_error_paths() {
        let mut pts = Vec::new();
        for j in 0..5 {
            for i in 0..5 {
                pts.push(Vec3::new(i as f64, j as f64, 0.0));
            }
        }
        let cloud = build_surface(&pts, None, 8).unwrap();
        let mut field = ScalarField::new(vec![1.0; 25]);
        for nb in cloud.neighbors(12).iter().skip(2) {
            field.defined[nb.index] = false;
        }
        assert_eq!(gradient(&cloud, &field, 12, 1.0), Err(OperatorError::RankDeficientStencil(12)));
        field.defined[12] = false;
        assert_eq!(gradient(&cloud, &field, 12, 1.0), Err(OperatorError::UndefinedAt(12)));
        let bare = build_cloud(&pts, None, 8).unwrap();
        let field = ScalarField::new(vec![1.0; 25]);
        assert_eq!(
            gradient(&bare, &field, 0, 1.0),
            Err(OperatorError::Geometry(GeometryError::FramesMissing))
        );
    }
}
