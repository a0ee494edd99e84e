//! Harmonic interpolation and implicit heat steps with mixed boundary data.
//!
//! Both problems reduce to an SPD system on the free rows of the domain:
//!
//! * Laplace: `L_pos u = 0`, i.e. `A = L_pos`;
//! * heat step (backward Euler, `u̇ = -M⁻¹ L_pos u`): `A = M + t·L_pos`,
//!   right-hand side `M u₀`.
//!
//! Dirichlet rows and columns are eliminated and their values moved to the
//! right-hand side. Zero-Neumann walls need no treatment: restricting the
//! operator to the domain leaves no flux across its boundary.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::Side;
use thiserror::Error;

use crate::operators::{ScalarField, SparseOperator};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("diffusion time must be positive and finite, got {0}")]
    InvalidDiffusionTime(f64),
    #[error("tolerance must lie in (0, 1e-3], got {0}")]
    InvalidTolerance(f64),
    #[error("step count must be at least 1")]
    InvalidSteps,
    #[error("point {0} carries both Dirichlet and Neumann conditions")]
    OverlappingConditions(usize),
    #[error("boundary point {0} lies outside the solve domain")]
    OutsideDomain(usize),
    #[error("Dirichlet value at point {0} is not finite")]
    NonFiniteBoundaryValue(usize),
    #[error("initial field is undefined at point {0}")]
    UndefinedInitial(usize),
    #[error("{got} entries given for {expected} points")]
    LengthMismatch { got: usize, expected: usize },
    #[error("no Dirichlet data on component {0} (nor on any other component)")]
    NoDirichletOnComponent(usize),
    #[error("linear solve did not converge: relative residual {residual:.3e} after {iterations} iterations")]
    SolverDivergence { residual: f64, iterations: usize },
}

/// Dirichlet values `g` and zero-Neumann point sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryConditions {
    pub dirichlet: BTreeMap<usize, f64>,
    pub neumann_zero: BTreeSet<usize>,
}

impl BoundaryConditions {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_dirichlet(mut self, points: impl IntoIterator<Item = usize>, value: f64) -> Self {
        for i in points {
            self.dirichlet.insert(i, value);
        }
        self
    }

    pub fn with_neumann_zero(mut self, points: impl IntoIterator<Item = usize>) -> Self {
        self.neumann_zero.extend(points);
        self
    }

    fn validate(&self, op: &SparseOperator, domain: &[bool]) -> Result<(), SolveError> {
        let inside = |i: usize| i < op.len() && domain[i] && op.in_domain(i);
        for (&i, &g) in &self.dirichlet {
            if !inside(i) {
                return Err(SolveError::OutsideDomain(i));
            }
            if !g.is_finite() {
                return Err(SolveError::NonFiniteBoundaryValue(i));
            }
        }
        for &i in &self.neumann_zero {
            if !inside(i) {
                return Err(SolveError::OutsideDomain(i));
            }
            if self.dirichlet.contains_key(&i) {
                return Err(SolveError::OverlappingConditions(i));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LinearSolver {
    /// Sparse Cholesky, falling back to conjugate gradients if it fails.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned conjugate gradients.
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveParams {
    /// `t_D` in m².
    pub diffusion_time: f64,
    /// Relative residual target for iterative solves.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Number of backward-Euler steps splitting `t_D`.
    pub steps: usize,
    pub solver: LinearSolver,
}

impl SolveParams {
    pub const DEFAULT_TOLERANCE: f64 = 1e-9;
    pub const DEFAULT_MAX_ITERATIONS: usize = 20_000;

    pub fn new(diffusion_time: f64) -> Result<Self, SolveError> {
        let params = Self {
            diffusion_time,
            tolerance: Self::DEFAULT_TOLERANCE,
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
            steps: 1,
            solver: LinearSolver::default(),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.diffusion_time.is_finite() && self.diffusion_time > 0.0) {
            return Err(SolveError::InvalidDiffusionTime(self.diffusion_time));
        }
        if !(self.tolerance > 0.0 && self.tolerance <= 1e-3) {
            return Err(SolveError::InvalidTolerance(self.tolerance));
        }
        if self.steps == 0 {
            return Err(SolveError::InvalidSteps);
        }
        Ok(())
    }
}

/// Linear-solve options for [`solve_laplace`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub solver: LinearSolver,
}

impl Default for LinearOptions {
    fn default() -> Self {
        Self {
            tolerance: SolveParams::DEFAULT_TOLERANCE,
            max_iterations: SolveParams::DEFAULT_MAX_ITERATIONS,
            solver: LinearSolver::default(),
        }
    }
}

impl From<&SolveParams> for LinearOptions {
    fn from(p: &SolveParams) -> Self {
        Self {
            tolerance: p.tolerance,
            max_iterations: p.max_iterations,
            solver: p.solver,
        }
    }
}

/// Result of a solve. Points outside the domain and components that could
/// not be determined are undefined (NaN, mask `false`).
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub field: ScalarField,
    /// Component ids (of the restricted operator) without Dirichlet data.
    pub undefined_components: Vec<usize>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub method: LinearSolver,
    /// CG iterations, 0 for direct solves.
    pub iterations: usize,
    pub relative_residual: f64,
    pub free_rows: usize,
    pub cache_hit: bool,
}

/// Reduced system `A_FF` over the free rows, CSR with explicit diagonal.
struct ReducedMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    diag: Vec<f64>,
}

impl ReducedMatrix {
    fn len(&self) -> usize {
        self.diag.len()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.len() {
            let mut acc = self.diag[i] * x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            out[i] = acc;
        }
    }
}

struct LinearSystem {
    matrix: ReducedMatrix,
    llt: Option<Llt<usize, f64>>,
}

impl LinearSystem {
    fn build(op: &SparseOperator, free: &[usize], local_of: &[usize], mass_coeff: f64, stiff_coeff: f64, method: LinearSolver) -> Self {
        let mut row_ptr = Vec::with_capacity(free.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut diag = Vec::with_capacity(free.len());
        row_ptr.push(0);
        for &i in free {
            diag.push(mass_coeff * op.mass()[i] + stiff_coeff * op.diagonal()[i]);
            for (j, w) in op.edges(i) {
                let lj = local_of[j];
                if lj != usize::MAX {
                    cols.push(lj);
                    vals.push(-stiff_coeff * w);
                }
            }
            row_ptr.push(cols.len());
        }
        let matrix = ReducedMatrix { row_ptr, cols, vals, diag };
        let llt = match method {
            LinearSolver::Cholesky => factorize(&matrix),
            LinearSolver::ConjugateGradient => None,
        };
        Self { matrix, llt }
    }

    fn solve(&self, rhs: &[f64], opts: &LinearOptions) -> Result<(Vec<f64>, SolveStats), SolveError> {
        let n = self.matrix.len();
        let b_norm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if let Some(llt) = &self.llt {
            let x = llt.solve(faer::Col::<f64>::from_fn(n, |i| rhs[i]));
            let x: Vec<f64> = (0..n).map(|i| x[i]).collect();
            if x.iter().all(|v| v.is_finite()) {
                let residual = self.relative_residual(&x, rhs, b_norm);
                return Ok((
                    x,
                    SolveStats {
                        method: LinearSolver::Cholesky,
                        iterations: 0,
                        relative_residual: residual,
                        free_rows: n,
                        cache_hit: false,
                    },
                ));
            }
            log::warn!("direct solve produced non-finite values; retrying with conjugate gradients");
        }
        conjugate_gradient(&self.matrix, rhs, opts.tolerance, opts.max_iterations)
    }

    fn relative_residual(&self, x: &[f64], rhs: &[f64], b_norm: f64) -> f64 {
        let mut ax = vec![0.0; x.len()];
        self.matrix.apply_into(x, &mut ax);
        let r = ax.iter().zip(rhs).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        if b_norm > 0.0 {
            r / b_norm
        } else {
            r
        }
    }
}

fn factorize(matrix: &ReducedMatrix) -> Option<Llt<usize, f64>> {
    let n = matrix.len();
    if n == 0 {
        return None;
    }
    let mut triplets = Vec::with_capacity(matrix.vals.len() / 2 + n);
    for i in 0..n {
        triplets.push(Triplet::new(i, i, matrix.diag[i]));
        for k in matrix.row_ptr[i]..matrix.row_ptr[i + 1] {
            let j = matrix.cols[k];
            if j < i {
                triplets.push(Triplet::new(i, j, matrix.vals[k]));
            }
        }
    }
    let sparse = match SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("sparse matrix assembly failed: {e:?}");
            return None;
        }
    };
    match sparse.sp_cholesky(Side::Lower) {
        Ok(llt) => Some(llt),
        Err(e) => {
            log::warn!("sparse Cholesky failed ({e:?}); using conjugate gradients");
            None
        }
    }
}

fn conjugate_gradient(
    a: &ReducedMatrix,
    b: &[f64],
    tolerance: f64,
    max_iterations: usize,
) -> Result<(Vec<f64>, SolveStats), SolveError> {
    let n = a.len();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    let stats = |iterations, relative_residual| SolveStats {
        method: LinearSolver::ConjugateGradient,
        iterations,
        relative_residual,
        free_rows: n,
        cache_hit: false,
    };
    if b_norm == 0.0 {
        return Ok((x, stats(0, 0.0)));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&a.diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut residual = 1.0;
    for iteration in 1..=max_iterations {
        a.apply_into(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        residual = dot(&r, &r).sqrt() / b_norm;
        if !residual.is_finite() {
            break;
        }
        if residual <= tolerance {
            return Ok((x, stats(iteration, residual)));
        }
        for i in 0..n {
            z[i] = r[i] / a.diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(SolveError::SolverDivergence {
        residual,
        iterations: max_iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct FactorKey {
    operator: u64,
    free_rows: u64,
    mass_coeff: u64,
    stiff_coeff: u64,
    method: LinearSolver,
}

/// Solver with a cache of factorized systems keyed by operator, free-row set
/// and diffusion time. Safe to share between threads.
#[derive(Default)]
pub struct Solver {
    cache: Option<Mutex<HashMap<FactorKey, Arc<LinearSystem>>>>,
}

impl std::fmt::Debug for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let entries = self
            .cache
            .as_ref()
            .map(|c| c.lock().map(|m| m.len()).unwrap_or(0));
        f.debug_struct("Solver").field("cached_factorizations", &entries).finish()
    }
}

impl Solver {
    /// A solver that caches factorizations.
    pub fn cached() -> Self {
        Self {
            cache: Some(Mutex::new(HashMap::new())),
        }
    }

    /// A solver without a cache.
    pub fn uncached() -> Self {
        Self { cache: None }
    }

    pub fn cached_factorizations(&self) -> usize {
        self.cache
            .as_ref()
            .map(|c| c.lock().expect("solver cache poisoned").len())
            .unwrap_or(0)
    }

    fn system(
        &self,
        op: &SparseOperator,
        free: &[usize],
        local_of: &[usize],
        mass_coeff: f64,
        stiff_coeff: f64,
        method: LinearSolver,
    ) -> (Arc<LinearSystem>, bool) {
        let Some(cache) = &self.cache else {
            return (
                Arc::new(LinearSystem::build(op, free, local_of, mass_coeff, stiff_coeff, method)),
                false,
            );
        };
        let mut hasher = DefaultHasher::new();
        free.hash(&mut hasher);
        let key = FactorKey {
            operator: op.fingerprint(),
            free_rows: hasher.finish(),
            mass_coeff: mass_coeff.to_bits(),
            stiff_coeff: stiff_coeff.to_bits(),
            method,
        };
        if let Some(system) = cache.lock().expect("solver cache poisoned").get(&key) {
            return (Arc::clone(system), true);
        }
        let system = Arc::new(LinearSystem::build(op, free, local_of, mass_coeff, stiff_coeff, method));
        cache
            .lock()
            .expect("solver cache poisoned")
            .insert(key, Arc::clone(&system));
        (system, false)
    }

    /// Solves `L_pos u = 0` on `domain` with Dirichlet data eliminated.
    ///
    /// Components of the domain that carry no Dirichlet value are left
    /// undefined; if no component has any, the solve fails with
    /// [`SolveError::NoDirichletOnComponent`].
    pub fn solve_laplace(
        &self,
        op: &SparseOperator,
        bc: &BoundaryConditions,
        domain: &[bool],
        opts: &LinearOptions,
    ) -> Result<Solution, SolveError> {
        check_len(domain.len(), op.len())?;
        bc.validate(op, domain)?;
        let sub = op.restrict(domain);
        let components = sub.components();
        let mut has_dirichlet = vec![false; components.count];
        for &i in bc.dirichlet.keys() {
            if let Some(c) = components.component_of[i] {
                has_dirichlet[c] = true;
            }
        }
        let undefined_components: Vec<usize> = (0..components.count).filter(|&c| !has_dirichlet[c]).collect();
        if components.count > 0 && undefined_components.len() == components.count {
            return Err(SolveError::NoDirichletOnComponent(0));
        }
        let solvable = |i: usize| components.component_of[i].is_some_and(|c| has_dirichlet[c]);

        let (free, local_of) = free_rows(&sub, bc, solvable);
        let mut rhs = vec![0.0; free.len()];
        dirichlet_rhs(&sub, bc, &free, 1.0, &mut rhs);
        let (system, cache_hit) = self.system(&sub, &free, &local_of, 0.0, 1.0, opts.solver);
        let (x, mut stats) = solve_or_empty(&system, &rhs, opts)?;
        stats.cache_hit = cache_hit;
        Ok(Solution {
            field: assemble_field(sub.len(), bc, &free, &x, solvable),
            undefined_components,
            stats,
        })
    }

    /// Backward-Euler heat steps `(M + dt·L_pos) u = M u_prev` on `domain`,
    /// `dt = t_D / steps`, with Dirichlet rows pinned to their values.
    pub fn heat_step(
        &self,
        op: &SparseOperator,
        initial: &ScalarField,
        bc: &BoundaryConditions,
        params: &SolveParams,
        domain: &[bool],
    ) -> Result<Solution, SolveError> {
        params.validate()?;
        check_len(domain.len(), op.len())?;
        check_len(initial.len(), op.len())?;
        bc.validate(op, domain)?;
        let sub = op.restrict(domain);
        let in_domain = |i: usize| sub.in_domain(i);
        let (free, local_of) = free_rows(&sub, bc, in_domain);
        if let Some(&i) = free.iter().find(|&&i| !initial.is_defined(i)) {
            return Err(SolveError::UndefinedInitial(i));
        }
        let dt = params.diffusion_time / params.steps as f64;
        let opts = LinearOptions::from(params);
        let (system, cache_hit) = self.system(&sub, &free, &local_of, 1.0, dt, params.solver);

        let mut current: Vec<f64> = free.iter().map(|&i| initial.values[i]).collect();
        let mut boundary_rhs = vec![0.0; free.len()];
        dirichlet_rhs(&sub, bc, &free, dt, &mut boundary_rhs);
        let mut stats = None;
        for _ in 0..params.steps {
            let rhs: Vec<f64> = free
                .iter()
                .zip(&current)
                .zip(&boundary_rhs)
                .map(|((&i, u), g)| sub.mass()[i] * u + g)
                .collect();
            let (x, s) = solve_or_empty(&system, &rhs, &opts)?;
            current = x;
            stats = Some(s);
        }
        let mut stats = stats.expect("at least one step");
        stats.cache_hit = cache_hit;
        Ok(Solution {
            field: assemble_field(sub.len(), bc, &free, &current, in_domain),
            undefined_components: Vec::new(),
            stats,
        })
    }
}

fn check_len(got: usize, expected: usize) -> Result<(), SolveError> {
    if got != expected {
        return Err(SolveError::LengthMismatch { got, expected });
    }
    Ok(())
}

fn free_rows(op: &SparseOperator, bc: &BoundaryConditions, include: impl Fn(usize) -> bool) -> (Vec<usize>, Vec<usize>) {
    let free: Vec<usize> = (0..op.len())
        .filter(|&i| op.in_domain(i) && include(i) && !bc.dirichlet.contains_key(&i))
        .collect();
    let mut local_of = vec![usize::MAX; op.len()];
    for (l, &i) in free.iter().enumerate() {
        local_of[i] = l;
    }
    (free, local_of)
}

/// Adds `coeff · Σ_{j ∈ D} w_ij g_j` (the eliminated Dirichlet columns) to `rhs`.
fn dirichlet_rhs(op: &SparseOperator, bc: &BoundaryConditions, free: &[usize], coeff: f64, rhs: &mut [f64]) {
    for (l, &i) in free.iter().enumerate() {
        for (j, w) in op.edges(i) {
            if let Some(g) = bc.dirichlet.get(&j) {
                rhs[l] += coeff * w * g;
            }
        }
    }
}

fn solve_or_empty(system: &LinearSystem, rhs: &[f64], opts: &LinearOptions) -> Result<(Vec<f64>, SolveStats), SolveError> {
    if rhs.is_empty() {
        return Ok((
            Vec::new(),
            SolveStats {
                method: opts.solver,
                iterations: 0,
                relative_residual: 0.0,
                free_rows: 0,
                cache_hit: false,
            },
        ));
    }
    system.solve(rhs, opts)
}

fn assemble_field(
    n: usize,
    bc: &BoundaryConditions,
    free: &[usize],
    x: &[f64],
    defined: impl Fn(usize) -> bool,
) -> ScalarField {
    let mut values = vec![f64::NAN; n];
    let mut mask = vec![false; n];
    for (&i, &g) in &bc.dirichlet {
        values[i] = g;
        mask[i] = true;
    }
    for (&i, &v) in free.iter().zip(x) {
        values[i] = v;
        mask[i] = defined(i);
    }
    ScalarField::with_mask(values, mask)
}

/// [`Solver::solve_laplace`] without caching, default linear options.
pub fn solve_laplace(op: &SparseOperator, bc: &BoundaryConditions, domain: &[bool]) -> Result<Solution, SolveError> {
    Solver::uncached().solve_laplace(op, bc, domain, &LinearOptions::default())
}

/// [`Solver::heat_step`] without caching.
pub fn heat_step(
    op: &SparseOperator,
    initial: &ScalarField,
    bc: &BoundaryConditions,
    params: &SolveParams,
    domain: &[bool],
) -> Result<Solution, SolveError> {
    Solver::uncached().heat_step(op, initial, bc, params, domain)
}
