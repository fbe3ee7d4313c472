use super::network::Network;
use super::pyramid::build_pyramid;
use super::train::argmax_rows;
use crate::nncore::{softmax_rows, Matrix, Mode};
use crate::pccore::{extract_sphere, grid_subsample, nearest_neighbor, LabelMode, LabeledCloud};
use crate::{Error, Result};

/// Default spacing of the inference tile grid: half the sphere radius.
pub fn default_tile_stride(net: &Network) -> f64 {
    net.config().sphere_radius / 2.0
}

/// Per-point class probabilities averaged over overlapping spheres.
///
/// The cloud is resampled on the layer-0 grid (anchored at its bounding-box
/// minimum), covered with spheres centered on a regular grid of spacing
/// `tile_stride`, and every original point takes the averaged softmax of its
/// nearest resampled point.
pub fn predict_probabilities(
    net: &Network,
    cloud: &LabeledCloud,
    tile_stride: f64,
) -> Result<Matrix> {
    let cfg = net.config();
    let radius = cfg.sphere_radius;
    if !(tile_stride > 0.0) || tile_stride > radius {
        return Err(Error::Argument(format!(
            "tile stride must be in (0, {radius}], got {tile_stride}"
        )));
    }
    let c = cfg.num_classes;
    let Some((lo, hi)) = cloud.bounds() else {
        return Ok(Matrix::zeros(0, c));
    };
    let shifted = cloud.translated([-lo[0], -lo[1], -lo[2]]);
    let mut sub = grid_subsample(&shifted, cfg.cell_sizes[0], LabelMode::None)?;
    sub.labels = None;
    let mut sums = Matrix::zeros(sub.len(), c);
    let mut votes = vec![0u32; sub.len()];
    let steps: Vec<usize> = (0..3)
        .map(|a| ((hi[a] - lo[a]) / tile_stride).ceil() as usize + 1)
        .collect();
    for i in 0..steps[0] {
        for j in 0..steps[1] {
            for k in 0..steps[2] {
                let center = [
                    i as f64 * tile_stride,
                    j as f64 * tile_stride,
                    k as f64 * tile_stride,
                ];
                let (sphere, idx) = extract_sphere(&sub, center, radius)?;
                if sphere.is_empty() {
                    continue;
                }
                let batch = build_pyramid(&sphere, cfg)?;
                let probs = softmax_rows(&net.logits(&batch, Mode::Eval)?);
                for (row, &p) in idx.iter().enumerate() {
                    for (s, v) in sums.row_mut(p).iter_mut().zip(probs.row(row)) {
                        *s += v;
                    }
                    votes[p] += 1;
                }
            }
        }
    }
    for (p, &n) in votes.iter().enumerate() {
        if n == 0 {
            return Err(Error::Data(format!(
                "resampled point {p} is not covered by any sphere"
            )));
        }
        sums.row_mut(p).iter_mut().for_each(|v| *v /= n as f64);
    }
    let nearest = nearest_neighbor(
        &shifted.coords,
        &sub.coords,
        cfg.cell_sizes[0] * 3f64.sqrt(),
    )?;
    let mut out = Matrix::zeros(cloud.len(), c);
    for (m, &i) in nearest.iter().enumerate() {
        out.row_mut(m).copy_from_slice(sums.row(i));
    }
    Ok(out)
}

/// One class label per point of the cloud.
pub fn predict_cloud(net: &Network, cloud: &LabeledCloud, tile_stride: f64) -> Result<Vec<u8>> {
    Ok(argmax_rows(&predict_probabilities(
        net,
        cloud,
        tile_stride,
    )?))
}
