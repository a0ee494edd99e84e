//! File formats: PLY clouds and fields, JSON fixture specs, CSV trajectories.

mod ply;
mod spec;
mod trajectory;

use thiserror::Error;

pub use ply::{
    read_cloud, read_cloud_file, read_scalar_field, read_vector_field, read_vertex_table, write_cloud, write_field,
    CloudData, FieldRef, PlyFormat, ScalarType, VertexTable,
};
pub use spec::{RegionEntry, RoleName, SpecFile};
pub use trajectory::write_trajectories;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot open {path}: {source}")]
    Open { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("PLY parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("missing PLY property '{0}'")]
    MissingProperty(String),
    #[error("region label {value} at vertex {index} is out of range")]
    BadLabelRange { index: usize, value: f64 },
    #[error("per-point arrays have different lengths")]
    LengthMismatch,
    #[error("invalid spec at '{location}': {message}")]
    InvalidSpec { location: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Builds the surface for `data` and carries its labels through duplicate
/// removal. File normals are not used; frames are always estimated.
pub fn surface_from(
    data: &CloudData,
    k: usize,
) -> Result<(crate::PointCloud, Vec<crate::RegionId>), crate::GeometryError> {
    let cloud = crate::build_surface(&data.positions, data.colors.as_deref(), k)?;
    let labels = cloud.select(&data.labels);
    Ok((cloud, labels))
}

/// Snapshot of a cloud with estimated normals and the given labels.
pub fn cloud_data(cloud: &crate::PointCloud, labels: &[crate::RegionId]) -> CloudData {
    CloudData {
        positions: cloud.positions().to_vec(),
        normals: cloud.frames().map(|f| f.iter().map(|t| t.normal).collect()),
        colors: cloud.colors().map(<[_]>::to_vec),
        labels: labels.to_vec(),
    }
}
