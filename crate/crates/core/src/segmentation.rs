//! Region labeling and boundary extraction.
//!
//! Region 0 is the free region; regions `1..=N` carry annotated behaviors.
//! Two kinds of boundaries are tracked:
//!
//! * interface boundaries, `(i, j)`: points of region `i` with at least one
//!   k-NN neighbor in region `j`;
//! * open boundaries: scan edges, detected from the largest angular gap
//!   between a point's neighbors projected onto its tangent plane. Detection
//!   uses all neighbors regardless of label, so it depends on geometry only.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, TAU};

use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{GeometryError, PointCloud};
use crate::Vec3;

pub type RegionId = u32;

pub const FREE_REGION: RegionId = 0;

/// Default angular-gap threshold for open-boundary detection.
pub const DEFAULT_GAP_THRESHOLD: f64 = FRAC_PI_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("{labels} labels given for {points} points")]
    LengthMismatch { labels: usize, points: usize },
    #[error("region ids must be contiguous from 0, found {0:?}")]
    NonContiguousIds(Vec<RegionId>),
    #[error("region {0} does not exist")]
    UnknownRegion(RegionId),
    #[error("interface point {0} has no neighbor outside its region")]
    IsolatedBoundaryPoint(usize),
    #[error("outward direction at point {0} vanishes in the tangent plane")]
    DegenerateOutward(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Per-point region ids with their interface sets.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLabeling {
    region_of: Vec<RegionId>,
    region_count: usize,
    interfaces: BTreeMap<(RegionId, RegionId), Vec<usize>>,
    open_boundaries: Option<OpenBoundaries>,
}

/// Scan-edge points, flagged per point and grouped per region.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenBoundaries {
    pub flagged: Vec<bool>,
    pub by_region: Vec<Vec<usize>>,
}

/// A boundary point with the unit tangent direction leaving its region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFrame {
    pub index: usize,
    pub outward: Vec3,
}

pub fn apply_labels(cloud: &PointCloud, labels: &[RegionId]) -> Result<RegionLabeling, SegmentationError> {
    if labels.len() != cloud.len() {
        return Err(SegmentationError::LengthMismatch {
            labels: labels.len(),
            points: cloud.len(),
        });
    }
    let present: BTreeSet<RegionId> = labels.iter().copied().collect();
    let max = present.iter().next_back().copied().unwrap_or(0);
    if present.len() != max as usize + 1 {
        return Err(SegmentationError::NonContiguousIds(present.into_iter().collect()));
    }

    let mut interfaces: BTreeMap<(RegionId, RegionId), Vec<usize>> = BTreeMap::new();
    for (i, &own) in labels.iter().enumerate() {
        let mut seen = BTreeSet::new();
        for nb in cloud.neighbors(i) {
            let other = labels[nb.index];
            if other != own && seen.insert(other) {
                interfaces.entry((own, other)).or_default().push(i);
            }
        }
    }

    Ok(RegionLabeling {
        region_of: labels.to_vec(),
        region_count: max as usize + 1,
        interfaces,
        open_boundaries: None,
    })
}

impl RegionLabeling {
    pub fn region_of(&self, i: usize) -> RegionId {
        self.region_of[i]
    }

    pub fn labels(&self) -> &[RegionId] {
        &self.region_of
    }

    /// `N + 1`, including the free region.
    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn len(&self) -> usize {
        self.region_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.region_of.is_empty()
    }

    /// Points of `region` (ascending).
    pub fn members(&self, region: RegionId) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.region_of[i] == region).collect()
    }

    pub fn mask(&self, region: RegionId) -> Vec<bool> {
        self.region_of.iter().map(|&r| r == region).collect()
    }

    /// Points of region `i` having a neighbor in region `j` (ascending).
    pub fn interface(&self, i: RegionId, j: RegionId) -> &[usize] {
        self.interfaces.get(&(i, j)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// All non-empty interface sets keyed by `(own region, neighbor region)`.
    pub fn interfaces(&self) -> &BTreeMap<(RegionId, RegionId), Vec<usize>> {
        &self.interfaces
    }

    /// Points of `region` with at least one neighbor in another region.
    pub fn boundary(&self, region: RegionId) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .interfaces
            .range((region, 0)..=(region, RegionId::MAX))
            .flat_map(|(_, pts)| pts.iter().copied())
            .collect();
        set.into_iter().collect()
    }

    /// Points of `region` all of whose neighbors share the region.
    pub fn interior(&self, region: RegionId) -> Vec<usize> {
        let boundary: BTreeSet<usize> = self.boundary(region).into_iter().collect();
        self.members(region)
            .into_iter()
            .filter(|i| !boundary.contains(i))
            .collect()
    }

    pub fn open_boundaries(&self) -> Option<&OpenBoundaries> {
        self.open_boundaries.as_ref()
    }

    pub fn with_open_boundaries(mut self, open: OpenBoundaries) -> Self {
        self.open_boundaries = Some(open);
        self
    }
}

/// Largest angle between consecutive neighbors of point `i` projected onto its
/// tangent plane, in `[0, 2π]`.
pub fn max_angular_gap(cloud: &PointCloud, i: usize) -> Result<f64, GeometryError> {
    let frame = cloud.frame(i)?;
    let p = cloud.position(i);
    let mut angles: Vec<f64> = cloud
        .neighbors(i)
        .iter()
        .filter_map(|nb| {
            let [x, y] = frame.to_local(&(cloud.position(nb.index) - p));
            (x != 0.0 || y != 0.0).then(|| y.atan2(x))
        })
        .collect();
    if angles.is_empty() {
        return Ok(TAU);
    }
    angles.sort_by(f64::total_cmp);
    let wrap = angles[0] + TAU - angles[angles.len() - 1];
    Ok(angles
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(wrap, f64::max))
}

/// Flags points whose maximum angular neighbor gap exceeds `angle_threshold`.
pub fn extract_open_boundary(
    cloud: &PointCloud,
    labeling: &RegionLabeling,
    angle_threshold: f64,
) -> Result<OpenBoundaries, SegmentationError> {
    if !cloud.has_frames() {
        return Err(GeometryError::FramesMissing.into());
    }
    let flagged: Vec<bool> = (0..cloud.len())
        .into_par_iter()
        .map(|i| max_angular_gap(cloud, i).map(|gap| gap > angle_threshold))
        .collect::<Result<_, _>>()?;
    let mut by_region = vec![Vec::new(); labeling.region_count()];
    for (i, _) in flagged.iter().enumerate().filter(|(_, f)| **f) {
        by_region[labeling.region_of(i) as usize].push(i);
    }
    Ok(OpenBoundaries { flagged, by_region })
}

/// Unit tangent direction from point `i` toward its neighbors accepted by
/// `exterior`: the mean neighbor offset projected onto the tangent plane.
pub(crate) fn direction_toward(
    cloud: &PointCloud,
    i: usize,
    mut exterior: impl FnMut(usize) -> bool,
) -> Result<Option<Vec3>, SegmentationError> {
    let frame = cloud.frame(i)?;
    let p = cloud.position(i);
    let mut sum = Vec3::zeros();
    let mut count = 0usize;
    for nb in cloud.neighbors(i) {
        if exterior(nb.index) {
            sum += cloud.position(nb.index) - p;
            count += 1;
        }
    }
    if count == 0 {
        return Ok(None);
    }
    let tangent = frame.project(&(sum / count as f64));
    let norm = tangent.norm();
    if norm <= f64::EPSILON * sum.norm() || norm == 0.0 {
        return Err(SegmentationError::DegenerateOutward(i));
    }
    Ok(Some(tangent / norm))
}

/// Outward tangent directions at every interface point of `region`.
pub fn outward_directions(
    cloud: &PointCloud,
    labeling: &RegionLabeling,
    region: RegionId,
) -> Result<Vec<BoundaryFrame>, SegmentationError> {
    if region as usize >= labeling.region_count() {
        return Err(SegmentationError::UnknownRegion(region));
    }
    labeling
        .boundary(region)
        .into_iter()
        .map(|i| {
            let outward = direction_toward(cloud, i, |j| labeling.region_of(j) != region)?
                .ok_or(SegmentationError::IsolatedBoundaryPoint(i))?;
            Ok(BoundaryFrame { index: i, outward })
        })
        .collect()
}
