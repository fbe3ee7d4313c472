//! Point cloud data model and the data plumbing around it.

mod augment;
mod cloud;
mod grid;
pub mod io;
mod neighbors;
mod sphere;

pub use augment::{augment, AugConfig};
pub use cloud::{ClassId, LabeledCloud, Point3, IGNORE_LABEL, NUM_CLASSES};
pub use grid::{cell_key, grid_subsample, GridIndex, LabelMode};
pub use io::{load_cloud, save_cloud, CloudFormat};
pub use neighbors::{nearest_neighbor, radius_search, NeighborTable, DEFAULT_MAX_NEIGHBORS};
pub use sphere::extract_sphere;

/// Squared euclidean distance.
#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
