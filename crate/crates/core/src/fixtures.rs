//! Value and guidance fixtures built from annotated regions.
//!
//! A value fixture pins each annotated region to a constant (for instance a
//! contact-force limit) and fills the free region with the harmonic
//! interpolant of those constants.
//!
//! A guidance fixture is the composition of two independent fields:
//!
//! * inside each obstacle, one heat step from `u = 0` with `u = 1` on the
//!   obstacle's boundary; the normalized gradient points out of the obstacle;
//! * on the free region, one heat step on `Ω₀ ∪ ∂Ω_target` with `u = 1` on
//!   the target boundary and zero-Neumann walls everywhere else; the
//!   normalized gradient points toward the targets.
//!
//! Direction convention: fields flow toward increasing `u`, so both the
//! repulsion inside obstacles and the attraction in the free region are `+∇u`.
//! Targets themselves carry no direction.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_to_surface, GeometryError, PointCloud};
use crate::operators::{
    assemble_laplacian, gradient, LaplacianParams, MassKind, OperatorError, ScalarField, SparseOperator,
    TangentVectorField,
};
use crate::segmentation::{direction_toward, RegionId, RegionLabeling, SegmentationError, FREE_REGION};
use crate::solvers::{BoundaryConditions, LinearOptions, LinearSolver, SolveError, SolveParams, Solver};
use crate::Vec3;

/// A gradient is treated as zero when `‖g‖·sqrt(ε)` falls below this fraction
/// of the largest field magnitude in its stencil.
const ZERO_GRADIENT_RELATIVE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("fixture spec names region {0}, which does not occur in the labeling")]
    UnknownRegion(RegionId),
    #[error("region {0} has no role in the fixture spec")]
    MissingRole(RegionId),
    #[error("the free region 0 cannot take role {0}")]
    FreeRegionRole(String),
    #[error("region {region} has role {role}, which a {kind} fixture does not accept")]
    RoleMismatch { region: RegionId, role: String, kind: &'static str },
    #[error("value of region {0} is not finite")]
    InvalidValue(RegionId),
    #[error("guidance fixture needs at least one target region")]
    NoTargetRegion,
    #[error("agent step {step} must lie in (0, {max}] (twice the mean spacing)")]
    InvalidStep { step: f64, max: f64 },
    #[error("{got} labels for {expected} points")]
    LabelCountMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Free,
    /// Dirichlet constant, e.g. a force magnitude in newtons.
    Value(f64),
    Obstacle,
    Target,
}

impl Role {
    fn name(&self) -> String {
        match self {
            Role::Free => "free".into(),
            Role::Value(v) => format!("value({v})"),
            Role::Obstacle => "obstacle".into(),
            Role::Target => "target".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureKind {
    Value,
    Guidance,
}

impl FixtureKind {
    fn name(self) -> &'static str {
        match self {
            FixtureKind::Value => "value",
            FixtureKind::Guidance => "guidance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureParams {
    /// `t_D` in m²; `h²` when unset.
    pub diffusion_time: Option<f64>,
    /// Kernel bandwidth `ε` in m²; `h²` when unset.
    pub bandwidth: Option<f64>,
    pub mass: MassKind,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub steps: usize,
    pub solver: LinearSolver,
}

impl Default for FixtureParams {
    fn default() -> Self {
        Self {
            diffusion_time: None,
            bandwidth: None,
            mass: MassKind::default(),
            tolerance: SolveParams::DEFAULT_TOLERANCE,
            max_iterations: SolveParams::DEFAULT_MAX_ITERATIONS,
            steps: 1,
            solver: LinearSolver::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub region_roles: BTreeMap<RegionId, Role>,
    pub params: FixtureParams,
}

impl FixtureSpec {
    pub fn value(values: impl IntoIterator<Item = (RegionId, f64)>) -> Self {
        Self {
            kind: FixtureKind::Value,
            region_roles: values.into_iter().map(|(r, v)| (r, Role::Value(v))).collect(),
            params: FixtureParams::default(),
        }
    }

    pub fn guidance(roles: impl IntoIterator<Item = (RegionId, Role)>) -> Self {
        Self {
            kind: FixtureKind::Guidance,
            region_roles: roles.into_iter().collect(),
            params: FixtureParams::default(),
        }
    }

    pub fn with_diffusion_time(mut self, t: f64) -> Self {
        self.params.diffusion_time = Some(t);
        self
    }

    /// Role of `region`; region 0 defaults to free.
    pub fn role(&self, region: RegionId) -> Option<Role> {
        match self.region_roles.get(&region) {
            Some(role) => Some(*role),
            None if region == FREE_REGION => Some(Role::Free),
            None => None,
        }
    }

    /// Checks the roles against a labeling: every referenced region exists,
    /// region 0 is free, and every other region has a role the kind accepts.
    pub fn validate(&self, labeling: &RegionLabeling) -> Result<(), FixtureError> {
        for &region in self.region_roles.keys() {
            if region as usize >= labeling.region_count() {
                return Err(FixtureError::UnknownRegion(region));
            }
        }
        if let Some(role) = self.region_roles.get(&FREE_REGION) {
            if *role != Role::Free {
                return Err(FixtureError::FreeRegionRole(role.name()));
            }
        }
        let mut targets = 0;
        for region in 1..labeling.region_count() as RegionId {
            let role = self.role(region).ok_or(FixtureError::MissingRole(region))?;
            let accepted = match (self.kind, role) {
                (_, Role::Free) => true,
                (FixtureKind::Value, Role::Value(v)) => {
                    if !v.is_finite() {
                        return Err(FixtureError::InvalidValue(region));
                    }
                    true
                }
                (FixtureKind::Guidance, Role::Target) => {
                    targets += 1;
                    true
                }
                (FixtureKind::Guidance, Role::Obstacle) => true,
                _ => false,
            };
            if !accepted {
                return Err(FixtureError::RoleMismatch {
                    region,
                    role: role.name(),
                    kind: self.kind.name(),
                });
            }
        }
        if self.kind == FixtureKind::Guidance && targets == 0 {
            return Err(FixtureError::NoTargetRegion);
        }
        Ok(())
    }

    fn roles_per_point(&self, labeling: &RegionLabeling) -> Vec<Role> {
        labeling
            .labels()
            .iter()
            .map(|&r| self.role(r).unwrap_or(Role::Free))
            .collect()
    }
}

/// Harmonic interpolation of annotated constants.
#[derive(Debug, Clone)]
pub struct ValueFixture {
    cloud: Arc<PointCloud>,
    region_of: Vec<RegionId>,
    field: ScalarField,
    undefined_components: Vec<usize>,
}

impl ValueFixture {
    pub fn field(&self) -> &ScalarField {
        &self.field
    }

    pub fn cloud(&self) -> &Arc<PointCloud> {
        &self.cloud
    }

    /// Free-region components that touch no annotated region.
    pub fn undefined_components(&self) -> &[usize] {
        &self.undefined_components
    }
}

/// Piecewise guidance: obstacle push-out fields inside obstacles, target
/// attraction on the free region, nothing inside targets.
#[derive(Debug, Clone)]
pub struct GuidanceFixture {
    cloud: Arc<PointCloud>,
    region_of: Vec<RegionId>,
    roles: Vec<Role>,
    free_field: TangentVectorField,
    obstacle_field: TangentVectorField,
    target_solve: ScalarField,
    obstacle_solves: BTreeMap<RegionId, ScalarField>,
    obstacle_interior: Vec<bool>,
    diffusion_time: f64,
}

impl GuidanceFixture {
    pub fn cloud(&self) -> &Arc<PointCloud> {
        &self.cloud
    }

    /// Unit directions toward targets, defined on reachable free points.
    pub fn free_field(&self) -> &TangentVectorField {
        &self.free_field
    }

    /// Unit outward directions, defined on obstacle points.
    pub fn obstacle_field(&self) -> &TangentVectorField {
        &self.obstacle_field
    }

    /// Raw target-attraction heat solution on `Ω₀ ∪ ∂Ω_target`.
    pub fn target_solve(&self) -> &ScalarField {
        &self.target_solve
    }

    /// Raw per-obstacle heat solutions.
    pub fn obstacle_solves(&self) -> &BTreeMap<RegionId, ScalarField> {
        &self.obstacle_solves
    }

    pub fn diffusion_time(&self) -> f64 {
        self.diffusion_time
    }

    pub fn role_at(&self, i: usize) -> Role {
        self.roles[i]
    }

    /// Obstacle points none of whose neighbors leave the obstacle region.
    pub fn is_obstacle_interior(&self, i: usize) -> bool {
        self.obstacle_interior[i]
    }

    /// The composed direction field: obstacle flow inside obstacles, target
    /// attraction on the free region, undefined on targets.
    pub fn directions(&self) -> TangentVectorField {
        let mut out = TangentVectorField::undefined(self.roles.len());
        for (i, role) in self.roles.iter().enumerate() {
            let v = match role {
                Role::Obstacle => self.obstacle_field.get(i),
                Role::Free => self.free_field.get(i),
                _ => None,
            };
            if let Some(v) = v {
                out.set(i, v);
            }
        }
        out
    }

    fn respond(&self, index: usize, footpoint: Vec3) -> FixtureResponse {
        let (direction, defined) = match self.roles[index] {
            Role::Target => (None, true),
            Role::Obstacle => (self.obstacle_field.get(index), self.obstacle_field.defined[index]),
            _ => (self.free_field.get(index), self.free_field.defined[index]),
        };
        FixtureResponse {
            index,
            region: self.region_of[index],
            value: None,
            direction,
            footpoint,
            defined,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Fixture {
    Value(ValueFixture),
    Guidance(GuidanceFixture),
}

/// Answer to a position query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixtureResponse {
    /// Nearest cloud point.
    pub index: usize,
    pub region: RegionId,
    /// Value-fixture scalar.
    pub value: Option<f64>,
    /// Guidance-fixture unit direction, tangent at the footpoint.
    pub direction: Option<Vec3>,
    pub footpoint: Vec3,
    pub defined: bool,
}

impl Fixture {
    pub fn kind(&self) -> FixtureKind {
        match self {
            Fixture::Value(_) => FixtureKind::Value,
            Fixture::Guidance(_) => FixtureKind::Guidance,
        }
    }

    pub fn cloud(&self) -> &Arc<PointCloud> {
        match self {
            Fixture::Value(f) => &f.cloud,
            Fixture::Guidance(f) => &f.cloud,
        }
    }

    /// Points where the fixture cannot answer.
    pub fn undefined_count(&self) -> usize {
        match self {
            Fixture::Value(f) => f.field.undefined_count(),
            Fixture::Guidance(g) => (0..g.roles.len())
                .filter(|&i| match g.roles[i] {
                    Role::Target => false,
                    Role::Obstacle => !g.obstacle_field.defined[i],
                    _ => !g.free_field.defined[i],
                })
                .count(),
        }
    }

    /// Projects `position` onto the surface and reports the constraint at the
    /// nearest point. Undefined regions are reported through `defined`.
    pub fn query(&self, position: &Vec3) -> FixtureResponse {
        let (index, footpoint) =
            project_to_surface(self.cloud(), position).expect("fixtures are built on clouds with frames");
        match self {
            Fixture::Value(f) => FixtureResponse {
                index,
                region: f.region_of[index],
                value: f.field.get(index),
                direction: None,
                footpoint,
                defined: f.field.is_defined(index),
            },
            Fixture::Guidance(g) => g.respond(index, footpoint),
        }
    }
}

pub fn build_fixture(
    cloud: &Arc<PointCloud>,
    labeling: &RegionLabeling,
    spec: &FixtureSpec,
) -> Result<Fixture, FixtureError> {
    Ok(match spec.kind {
        FixtureKind::Value => Fixture::Value(build_value_fixture(cloud, labeling, spec)?),
        FixtureKind::Guidance => Fixture::Guidance(build_guidance_fixture(cloud, labeling, spec)?),
    })
}

fn check_inputs(cloud: &PointCloud, labeling: &RegionLabeling, spec: &FixtureSpec, kind: FixtureKind) -> Result<(), FixtureError> {
    if labeling.len() != cloud.len() {
        return Err(FixtureError::LabelCountMismatch {
            got: labeling.len(),
            expected: cloud.len(),
        });
    }
    if !cloud.has_frames() {
        return Err(GeometryError::FramesMissing.into());
    }
    if spec.kind != kind {
        return Err(FixtureError::RoleMismatch {
            region: FREE_REGION,
            role: format!("{} spec", spec.kind.name()),
            kind: kind.name(),
        });
    }
    spec.validate(labeling)
}

fn operator_for(cloud: &PointCloud, spec: &FixtureSpec) -> Result<SparseOperator, FixtureError> {
    Ok(assemble_laplacian(
        cloud,
        &LaplacianParams {
            bandwidth: spec.params.bandwidth,
            mass: spec.params.mass,
        },
    )?)
}

/// Solves Laplace's equation on the free region with each annotated constant
/// pinned on the free-side interface of its region. A free point touching
/// several value regions takes the value of its nearest annotated neighbor.
pub fn build_value_fixture(
    cloud: &Arc<PointCloud>,
    labeling: &RegionLabeling,
    spec: &FixtureSpec,
) -> Result<ValueFixture, FixtureError> {
    check_inputs(cloud, labeling, spec, FixtureKind::Value)?;
    let roles = spec.roles_per_point(labeling);
    let free: Vec<bool> = roles.iter().map(|r| *r == Role::Free).collect();
    let n = cloud.len();

    let mut bc = BoundaryConditions::new();
    for i in (0..n).filter(|&i| free[i]) {
        let pinned = cloud.neighbors(i).iter().find_map(|nb| match roles[nb.index] {
            Role::Value(v) => Some(v),
            _ => None,
        });
        if let Some(v) = pinned {
            bc.dirichlet.insert(i, v);
        }
    }

    let mut values = vec![f64::NAN; n];
    let mut defined = vec![false; n];
    let mut undefined_components = Vec::new();
    if free.iter().any(|&f| f) {
        let op = operator_for(cloud, spec)?;
        let opts = LinearOptions {
            tolerance: spec.params.tolerance,
            max_iterations: spec.params.max_iterations,
            solver: spec.params.solver,
        };
        let solution = Solver::uncached().solve_laplace(&op, &bc, &free, &opts)?;
        values = solution.field.values;
        defined = solution.field.defined;
        undefined_components = solution.undefined_components;
    }
    for (i, role) in roles.iter().enumerate() {
        if let Role::Value(v) = role {
            values[i] = *v;
            defined[i] = true;
        }
    }
    Ok(ValueFixture {
        cloud: Arc::clone(cloud),
        region_of: labeling.labels().to_vec(),
        field: ScalarField::with_mask(values, defined),
        undefined_components,
    })
}

/// Unit gradient of `field` at `i`, or `None` where it vanishes or cannot be
/// estimated.
fn unit_gradient(cloud: &PointCloud, field: &ScalarField, i: usize, bandwidth: f64) -> Option<Vec3> {
    let g = gradient(cloud, field, i, bandwidth).ok()?;
    let scale = cloud
        .neighbors(i)
        .iter()
        .filter(|nb| field.is_defined(nb.index))
        .map(|nb| field.values[nb.index].abs())
        .fold(field.values[i].abs(), f64::max);
    let norm = g.norm();
    (norm.is_finite() && norm * bandwidth.sqrt() > ZERO_GRADIENT_RELATIVE * scale).then(|| g / norm)
}

/// Removes the components of `g` pointing along any of `walls` (unit inward
/// directions). Returns `None` if nothing admissible remains.
fn clamp_against_walls(mut g: Vec3, walls: &[Vec3]) -> Option<Vec3> {
    let original = g.norm();
    if walls.iter().all(|w| g.dot(w) <= 0.0) {
        return Some(g);
    }
    for _ in 0..8 {
        let mut changed = false;
        for w in walls {
            let d = g.dot(w);
            if d > 0.0 {
                g -= w * d;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let norm = g.norm();
    let admissible = walls.iter().all(|w| g.dot(w) <= 1e-12 * norm);
    (admissible && norm > 1e-9 * original).then(|| g / norm)
}

pub fn build_guidance_fixture(
    cloud: &Arc<PointCloud>,
    labeling: &RegionLabeling,
    spec: &FixtureSpec,
) -> Result<GuidanceFixture, FixtureError> {
    check_inputs(cloud, labeling, spec, FixtureKind::Guidance)?;
    let n = cloud.len();
    let roles = spec.roles_per_point(labeling);
    let region_of = labeling.labels();
    let op = operator_for(cloud, spec)?;
    let bandwidth = op.bandwidth();
    let h = cloud.mean_spacing();
    let diffusion_time = spec.params.diffusion_time.unwrap_or(h * h);
    let params = SolveParams {
        diffusion_time,
        tolerance: spec.params.tolerance,
        max_iterations: spec.params.max_iterations,
        steps: spec.params.steps,
        solver: spec.params.solver,
    };
    params.validate()?;
    let solver = Solver::uncached();
    let zero = ScalarField::constant(n, 0.0);

    // Obstacles: push out from the interior.
    let mut obstacle_field = TangentVectorField::undefined(n);
    let mut obstacle_solves = BTreeMap::new();
    let mut obstacle_interior = vec![false; n];
    let obstacle_regions: Vec<RegionId> = (1..labeling.region_count() as RegionId)
        .filter(|&r| spec.role(r) == Some(Role::Obstacle))
        .collect();
    for &region in &obstacle_regions {
        let mask = labeling.mask(region);
        let boundary: Vec<usize> = (0..n)
            .filter(|&i| mask[i] && cloud.neighbors(i).iter().any(|nb| !mask[nb.index]))
            .collect();
        for i in (0..n).filter(|&i| mask[i]) {
            obstacle_interior[i] = cloud.neighbors(i).iter().all(|nb| mask[nb.index]);
        }
        if boundary.is_empty() {
            log::warn!("obstacle region {region} has no boundary; its push-out field is undefined");
            continue;
        }
        let bc = BoundaryConditions::new().with_dirichlet(boundary, 1.0);
        let solution = solver.heat_step(&op, &zero, &bc, &params, &mask)?;
        let directions: Vec<(usize, Option<Vec3>)> = (0..n)
            .into_par_iter()
            .filter(|&i| mask[i])
            .map(|i| (i, unit_gradient(cloud, &solution.field, i, bandwidth)))
            .collect();
        for (i, dir) in directions {
            if let Some(d) = dir {
                obstacle_field.set(i, d);
            }
        }
        obstacle_solves.insert(region, solution.field);
    }

    // Targets: attract across the free region.
    let is_free = |i: usize| roles[i] == Role::Free;
    let target_boundary: Vec<usize> = (0..n)
        .filter(|&i| roles[i] == Role::Target && cloud.neighbors(i).iter().any(|nb| is_free(nb.index)))
        .collect();
    let mut domain: Vec<bool> = (0..n).map(is_free).collect();
    for &i in &target_boundary {
        domain[i] = true;
    }
    let bc = BoundaryConditions::new().with_dirichlet(target_boundary.iter().copied(), 1.0);
    let mut target_solve = solver.heat_step(&op, &zero, &bc, &params, &domain)?.field;

    // Components of the free domain that no target touches stay undefined.
    let components = op.restrict(&domain).components();
    let mut reached = vec![false; components.count];
    for &i in &target_boundary {
        if let Some(c) = components.component_of[i] {
            reached[c] = true;
        }
    }
    for i in 0..n {
        if components.component_of[i].is_some_and(|c| !reached[c]) {
            target_solve.defined[i] = false;
            target_solve.values[i] = f64::NAN;
        }
    }

    let free_dirs: Vec<(usize, Option<Vec3>)> = (0..n)
        .into_par_iter()
        .filter(|&i| is_free(i) && target_solve.is_defined(i))
        .map(|i| {
            let dir = unit_gradient(cloud, &target_solve, i, bandwidth).and_then(|g| {
                let walls: Vec<Vec3> = obstacle_regions
                    .iter()
                    .filter_map(|&r| {
                        direction_toward(cloud, i, |j| region_of[j] == r && roles[j] == Role::Obstacle)
                            .ok()
                            .flatten()
                    })
                    .collect();
                if walls.is_empty() {
                    Some(g)
                } else {
                    clamp_against_walls(g, &walls)
                }
            });
            (i, dir)
        })
        .collect();
    let mut free_field = TangentVectorField::undefined(n);
    for (i, dir) in free_dirs {
        if let Some(d) = dir {
            free_field.set(i, d);
        }
    }

    Ok(GuidanceFixture {
        cloud: Arc::clone(cloud),
        region_of: region_of.to_vec(),
        roles,
        free_field,
        obstacle_field,
        target_solve,
        obstacle_solves,
        obstacle_interior,
        diffusion_time,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// Entered a target region.
    Success,
    /// Reached a point without a defined direction.
    Stall,
    /// Ran out of steps.
    Timeout,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Success => "success",
            Outcome::Stall => "stall",
            Outcome::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub agent: usize,
    pub start: usize,
    /// Surface samples, starting at the start point.
    pub points: Vec<Vec3>,
    /// Nearest cloud point of each sample.
    pub nearest: Vec<usize>,
    pub outcome: Outcome,
    /// Euler steps taken.
    pub steps: usize,
}

/// Explicit Euler on the surface: `x ← project(x + step · direction(x))`.
///
/// Agents stop on entering a target (success), on reaching a point without a
/// direction (stall), or after `max_steps` steps (timeout). `step` must not
/// exceed `2h`.
pub fn simulate_agents(
    fixture: &GuidanceFixture,
    starts: &[usize],
    step: f64,
    max_steps: usize,
) -> Result<Vec<Trajectory>, FixtureError> {
    let max = 2.0 * fixture.cloud.mean_spacing();
    if !(step > 0.0 && step <= max) {
        return Err(FixtureError::InvalidStep { step, max });
    }
    Ok(starts
        .par_iter()
        .enumerate()
        .map(|(agent, &start)| run_agent(fixture, agent, start, step, max_steps))
        .collect())
}

fn run_agent(fixture: &GuidanceFixture, agent: usize, start: usize, step: f64, max_steps: usize) -> Trajectory {
    let cloud = &fixture.cloud;
    let mut x = cloud.position(start);
    let mut index = start;
    let mut points = vec![x];
    let mut nearest = vec![start];
    let mut steps = 0;
    let outcome = loop {
        let response = fixture.respond(index, x);
        if fixture.roles[index] == Role::Target {
            break Outcome::Success;
        }
        let Some(direction) = response.direction else {
            break Outcome::Stall;
        };
        if steps == max_steps {
            break Outcome::Timeout;
        }
        let (i, foot) = project_to_surface(cloud, &(x + direction * step)).expect("fixture clouds carry frames");
        x = foot;
        index = i;
        steps += 1;
        points.push(x);
        nearest.push(i);
    };
    Trajectory {
        agent,
        start,
        points,
        nearest,
        outcome,
        steps,
    }
}

/// Step budget of four bounding-box diagonals at one step per `h`.
pub fn default_max_steps(cloud: &PointCloud) -> usize {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in cloud.positions() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (4.0 * (hi - lo).norm() / cloud.mean_spacing()).ceil() as usize
}

/// `count` free-region start points drawn with a seeded ChaCha8 generator,
/// without replacement while enough points exist.
pub fn sample_free_starts(fixture: &GuidanceFixture, count: usize, seed: u64) -> Vec<usize> {
    let pool: Vec<usize> = (0..fixture.roles.len())
        .filter(|&i| fixture.roles[i] == Role::Free)
        .collect();
    if pool.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if count <= pool.len() {
        sample(&mut rng, pool.len(), count).into_iter().map(|k| pool[k]).collect()
    } else {
        (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_surface;
    use crate::segmentation::apply_labels;

    fn strip() -> (Arc<PointCloud>, Vec<RegionId>) {
        let mut pts = Vec::new();
        for j in 0..8 {
            for i in 0..30 {
                pts.push(Vec3::new(i as f64 * 0.1, j as f64 * 0.1, 0.0));
            }
        }
        let labels = pts
            .iter()
            .map(|p| {
                if p.x < 0.25 {
                    1
                } else if p.x > 2.65 {
                    2
                } else {
                    0
                }
            })
            .collect();
        (Arc::new(build_surface(&pts, None, 12).unwrap()), labels)
    }

    #[test]
    fn spec_validation() {
        let (cloud, labels) = strip();
        let labeling = apply_labels(&cloud, &labels).unwrap();
        let spec = FixtureSpec::value([(1, 1.0)]);
        assert!(matches!(spec.validate(&labeling), Err(FixtureError::MissingRole(2))));
        let spec = FixtureSpec::value([(1, 1.0), (2, 2.0), (3, 0.0)]);
        assert!(matches!(spec.validate(&labeling), Err(FixtureError::UnknownRegion(3))));
        let spec = FixtureSpec::value([(1, 1.0), (2, f64::NAN)]);
        assert!(matches!(spec.validate(&labeling), Err(FixtureError::InvalidValue(2))));
        let spec = FixtureSpec::guidance([(1, Role::Obstacle), (2, Role::Obstacle)]);
        assert!(matches!(spec.validate(&labeling), Err(FixtureError::NoTargetRegion)));
        let spec = FixtureSpec::guidance([(1, Role::Value(1.0)), (2, Role::Target)]);
        assert!(matches!(spec.validate(&labeling), Err(FixtureError::RoleMismatch { region: 1, .. })));
        let spec = FixtureSpec::guidance([(0, Role::Target), (1, Role::Obstacle), (2, Role::Target)]);
        assert!(matches!(spec.validate(&labeling), Err(FixtureError::FreeRegionRole(_))));
    }

    #[test]
    fn strip_ramp_midline() {
        let (cloud, labels) = strip();
        let labeling = apply_labels(&cloud, &labels).unwrap();
        let fixture = build_value_fixture(&cloud, &labeling, &FixtureSpec::value([(1, 0.0), (2, 10.0)])).unwrap();
        for i in 0..cloud.len() {
            let x = cloud.position(i).x;
            if (x - 1.45).abs() < 0.06 {
                let v = fixture.field().values[i];
                assert!((v - 5.0).abs() < 0.5, "x={x} v={v}");
            }
        }
    }

    #[test]
    fn kind_mismatch_is_rejected() {
        let (cloud, labels) = strip();
        let labeling = apply_labels(&cloud, &labels).unwrap();
        let spec = FixtureSpec::guidance([(1, Role::Obstacle), (2, Role::Target)]);
        assert!(build_value_fixture(&cloud, &labeling, &spec).is_err());
    }

    #[test]
    fn invalid_step_is_rejected() {
        let (cloud, labels) = strip();
        let labeling = apply_labels(&cloud, &labels).unwrap();
        let spec = FixtureSpec::guidance([(1, Role::Obstacle), (2, Role::Target)]);
        let fixture = build_guidance_fixture(&cloud, &labeling, &spec).unwrap();
        let h = cloud.mean_spacing();
        assert!(matches!(
            simulate_agents(&fixture, &[50], 2.5 * h, 10),
            Err(FixtureError::InvalidStep { .. })
        ));
        assert!(simulate_agents(&fixture, &[50], 0.0, 10).is_err());
    }

    #[test]
    fn wall_clamp() {
        let wall = Vec3::new(1.0, 0.0, 0.0);
        let g = clamp_against_walls(Vec3::new(1.0, 1.0, 0.0).normalize(), &[wall]).unwrap();
        assert!(g.dot(&wall).abs() < 1e-15);
        assert!((g.norm() - 1.0).abs() < 1e-15);
        assert!(clamp_against_walls(wall, &[wall]).is_none());
        let away = Vec3::new(-1.0, 0.2, 0.0).normalize();
        assert_eq!(clamp_against_walls(away, &[wall]), Some(away));
    }

    #[test]
    fn start_sampling_is_seeded() {
        let (cloud, labels) = strip();
        let labeling = apply_labels(&cloud, &labels).unwrap();
        let spec = FixtureSpec::guidance([(1, Role::Obstacle), (2, Role::Target)]);
        let fixture = build_guidance_fixture(&cloud, &labeling, &spec).unwrap();
        let a = sample_free_starts(&fixture, 20, 7);
        assert_eq!(a, sample_free_starts(&fixture, 20, 7));
        assert_ne!(a, sample_free_starts(&fixture, 20, 8));
        assert!(a.iter().all(|&i| fixture.role_at(i) == Role::Free));
        assert_eq!(sample_free_starts(&fixture, 1000, 1).len(), 1000);
    }
}
