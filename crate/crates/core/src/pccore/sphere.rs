use super::cloud::{LabeledCloud, Point3};
use super::dist2;
use crate::{Error, Result};

/// Points within distance `radius` of `center` (closed ball), plus their
/// indices in the source cloud.
pub fn extract_sphere(
    cloud: &LabeledCloud,
    center: Point3,
    radius: f64,
) -> Result<(LabeledCloud, Vec<usize>)> {
    if !(radius > 0.0) {
        return Err(Error::Argument(format!(
            "sphere radius must be > 0, got {radius}"
        )));
    }
    let r2 = radius * radius;
    let indices: Vec<usize> = cloud
        .coords
        .iter()
        .enumerate()
        .filter(|(_, p)| dist2(p, &center) <= r2)
        .map(|(i, _)| i)
        .collect();
    Ok((cloud.select(&indices), indices))
}
