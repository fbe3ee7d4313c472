use super::config::NetworkConfig;
use crate::nncore::Matrix;
use crate::pccore::{
    grid_subsample, nearest_neighbor, radius_search, LabelMode, LabeledCloud, NeighborTable, Point3,
};
use crate::{Error, Result};

/// Point sets and index maps of every network layer for one batch.
///
/// Spheres are processed independently and then stacked: indices of each
/// sphere are offset by the points of the spheres before it, so no
/// neighborhood ever crosses two spheres.
#[derive(Debug, Clone)]
pub struct MultiscaleBatch {
    /// Layer coordinates, each sphere shifted so its bounding box starts at the origin.
    pub points: Vec<Vec<Point3>>,
    /// Layer `l` to layer `l` at the layer's convolution radius.
    pub neighbors: Vec<NeighborTable>,
    /// Layer `l + 1` queries over layer `l` supports at the radius of `l + 1`.
    pub pools: Vec<NeighborTable>,
    /// Nearest layer `l + 1` point of each layer `l` point.
    pub upsamples: Vec<Vec<usize>>,
    /// Layer 0 labels (ignore label where unknown).
    pub labels: Vec<u8>,
    /// Layer 0 input features.
    pub features: Matrix,
    /// Points per sphere per layer.
    pub lengths: Vec<Vec<usize>>,
}

impl MultiscaleBatch {
    pub fn num_layers(&self) -> usize {
        self.points.len()
    }

    pub fn num_points(&self) -> usize {
        self.points[0].len()
    }

    pub fn num_spheres(&self) -> usize {
        self.lengths[0].len()
    }

    /// Concatenates single- or multi-sphere batches.
    pub fn stack(parts: &[MultiscaleBatch]) -> Result<MultiscaleBatch> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("stacking zero batches".into()))?;
        let layers = first.num_layers();
        if parts.iter().any(|p| p.num_layers() != layers) {
            return Err(Error::Shape("stacked batches differ in layer count".into()));
        }
        let mut points = vec![Vec::new(); layers];
        let mut lengths = vec![Vec::new(); layers];
        let mut upsamples = vec![Vec::new(); layers - 1];
        for part in parts {
            for l in 0..layers {
                if l + 1 < layers {
                    let off = points[l + 1].len();
                    upsamples[l].extend(part.upsamples[l].iter().map(|&i| i + off));
                }
            }
            for l in 0..layers {
                points[l].extend_from_slice(&part.points[l]);
                lengths[l].extend_from_slice(&part.lengths[l]);
            }
        }
        let neighbors = (0..layers)
            .map(|l| {
                NeighborTable::concat(&parts.iter().map(|p| &p.neighbors[l]).collect::<Vec<_>>())
            })
            .collect();
        let pools = (0..layers - 1)
            .map(|l| NeighborTable::concat(&parts.iter().map(|p| &p.pools[l]).collect::<Vec<_>>()))
            .collect();
        let cols = first.features.cols();
        let mut feats = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.features.cols() != cols {
                return Err(Error::Shape(
                    "stacked batches differ in feature width".into(),
                ));
            }
            feats.extend_from_slice(p.features.as_slice());
            labels.extend_from_slice(&p.labels);
        }
        let n = points[0].len();
        Ok(MultiscaleBatch {
            points,
            neighbors,
            pools,
            upsamples,
            labels,
            features: Matrix::from_vec(n, cols, feats)?,
            lengths,
        })
    }
}

/// Input features of a cloud: a constant one, plus intensity if configured.
pub fn input_features(cloud: &LabeledCloud, cfg: &NetworkConfig) -> Result<Matrix> {
    let n = cloud.len();
    if !cfg.use_intensity {
        return Ok(Matrix::filled(n, 1, 1.0));
    }
    let intensity = cloud
        .intensity
        .as_ref()
        .ok_or_else(|| Error::Data("network uses intensity but the cloud has none".into()))?;
    let mut m = Matrix::filled(n, 2, 1.0);
    for (i, v) in intensity.iter().enumerate() {
        m[(i, 1)] = *v;
    }
    Ok(m)
}

/// Builds the layer pyramid of one sphere.
///
/// Coordinates are first shifted by the bounding-box minimum, so the grid
/// cells (and with them the whole pyramid) move with the cloud.
pub fn build_pyramid(batch: &LabeledCloud, cfg: &NetworkConfig) -> Result<MultiscaleBatch> {
    let (lo, _) = batch.bounds().ok_or_else(|| {
        Error::Data("layer 0 is empty: cannot build a pyramid for an empty batch".into())
    })?;
    let layers = cfg.num_layers;
    let mut points: Vec<Vec<Point3>> = Vec::with_capacity(layers);
    points.push(
        batch
            .coords
            .iter()
            .map(|p| [p[0] - lo[0], p[1] - lo[1], p[2] - lo[2]])
            .collect(),
    );
    for l in 1..layers {
        let prev = LabeledCloud::from_coords(points[l - 1].clone());
        let next = grid_subsample(&prev, cfg.cell_sizes[l], LabelMode::None)?;
        if next.is_empty() {
            return Err(Error::Data(format!("layer {l} is empty after subsampling")));
        }
        points.push(next.coords);
    }
    let mut neighbors = Vec::with_capacity(layers);
    for (l, pts) in points.iter().enumerate() {
        neighbors.push(radius_search(
            pts,
            pts,
            cfg.conv_radius(l),
            cfg.max_neighbors,
        )?);
    }
    let mut pools = Vec::with_capacity(layers - 1);
    let mut upsamples = Vec::with_capacity(layers - 1);
    for l in 0..layers - 1 {
        pools.push(radius_search(
            &points[l + 1],
            &points[l],
            cfg.conv_radius(l + 1),
            cfg.max_neighbors,
        )?);
        // A barycenter lies inside its cell, so the nearest coarse point is
        // at most one cell diagonal away.
        let hint = cfg.cell_sizes[l + 1] * 3f64.sqrt();
        upsamples.push(nearest_neighbor(&points[l], &points[l + 1], hint)?);
    }
    let labels = batch
        .labels
        .clone()
        .unwrap_or_else(|| vec![crate::pccore::IGNORE_LABEL; batch.len()]);
    let lengths = points.iter().map(|p| vec![p.len()]).collect();
    Ok(MultiscaleBatch {
        features: input_features(batch, cfg)?,
        points,
        neighbors,
        pools,
        upsamples,
        labels,
        lengths,
    })
}

/// Pyramids of several spheres, stacked into one batch.
pub fn build_batch(spheres: &[LabeledCloud], cfg: &NetworkConfig) -> Result<MultiscaleBatch> {
    let parts = spheres
        .iter()
        .map(|s| build_pyramid(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    MultiscaleBatch::stack(&parts)
}
