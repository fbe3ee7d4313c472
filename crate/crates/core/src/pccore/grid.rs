use std::collections::HashMap;

use super::cloud::{LabeledCloud, Point3, IGNORE_LABEL, NUM_CLASSES};
use crate::{Error, Result};

/// Integer cell coordinates of `p` in a grid of the given cell size.
#[inline]
pub fn cell_key(p: &Point3, cell_size: f64) -> [i64; 3] {
    [
        (p[0] / cell_size).floor() as i64,
        (p[1] / cell_size).floor() as i64,
        (p[2] / cell_size).floor() as i64,
    ]
}

/// Uniform spatial hash: every point index lives in exactly one cell.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell_size: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl GridIndex {
    pub fn build(points: &[Point3], cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(Error::Argument(format!(
                "cell size must be > 0, got {cell_size}"
            )));
        }
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_key(p, cell_size)).or_default().push(i);
        }
        Ok(GridIndex { cell_size, cells })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, key: &[i64; 3]) -> &[usize] {
        self.cells.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn key_of(&self, p: &Point3) -> [i64; 3] {
        cell_key(p, self.cell_size)
    }

    /// Candidate indices from the 3×3×3 block of cells around `p`.
    pub fn for_each_near(&self, p: &Point3, mut f: impl FnMut(usize)) {
        let k = self.key_of(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    for &i in self.cell(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        f(i);
                    }
                }
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[i64; 3], &Vec<usize>)> {
        self.cells.iter()
    }
}

/// How labels are carried through [`grid_subsample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Most frequent class in the cell, ties to the smallest class id.
    Majority,
    /// Drop labels.
    None,
}

/// Replaces the points of every occupied cell by their barycenter.
///
/// Output points come in lexicographic cell order. Intensity is averaged.
/// In majority mode unlabeled points only win a cell that holds nothing else.
pub fn grid_subsample(
    cloud: &LabeledCloud,
    cell: f64,
    label_mode: LabelMode,
) -> Result<LabeledCloud> {
    if !(cell > 0.0) || !cell.is_finite() {
        return Err(Error::Argument(format!(
            "cell size must be > 0, got {cell}"
        )));
    }
    let groups = sorted_cells(&cloud.coords, cell);

    let mut coords = Vec::with_capacity(groups.len());
    let mut intensity = cloud
        .intensity
        .as_ref()
        .map(|_| Vec::with_capacity(groups.len()));
    let keep_labels = label_mode == LabelMode::Majority && cloud.labels.is_some();
    let mut labels = keep_labels.then(|| Vec::with_capacity(groups.len()));

    for members in &groups {
        let n = members.len() as f64;
        let mut sum = [0.0; 3];
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in members {
            let p = &cloud.coords[i];
            for d in 0..3 {
                sum[d] += p[d];
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        // Clamping to the member bounds keeps the barycenter in its own cell
        // despite rounding in the mean.
        coords.push([
            (sum[0] / n).clamp(lo[0], hi[0]),
            (sum[1] / n).clamp(lo[1], hi[1]),
            (sum[2] / n).clamp(lo[2], hi[2]),
        ]);
        if let (Some(out), Some(src)) = (intensity.as_mut(), cloud.intensity.as_ref()) {
            out.push(members.iter().map(|&i| src[i]).sum::<f64>() / n);
        }
        if let (Some(out), Some(src)) = (labels.as_mut(), cloud.labels.as_ref()) {
            out.push(majority_label(members.iter().map(|&i| src[i])));
        }
    }
    Ok(LabeledCloud {
        coords,
        intensity,
        labels,
    })
}

/// Groups point indices by cell, cells in lexicographic order, members in input order.
pub(crate) fn sorted_cells(points: &[Point3], cell: f64) -> Vec<Vec<usize>> {
    let mut keyed: Vec<([i64; 3], usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| (cell_key(p, cell), i))
        .collect();
    keyed.sort_unstable();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last: Option<[i64; 3]> = None;
    for (key, i) in keyed {
        if last != Some(key) {
            groups.push(Vec::new());
            last = Some(key);
        }
        groups.last_mut().unwrap().push(i);
    }
    groups
}

fn majority_label(labels: impl Iterator<Item = u8>) -> u8 {
    let mut counts = [0usize; NUM_CLASSES];
    for l in labels {
        if (l as usize) < NUM_CLASSES {
            counts[l as usize] += 1;
        }
    }
    let mut best = IGNORE_LABEL;
    let mut best_count = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > best_count {
            best = c as u8;
            best_count = n;
        }
    }
    best
}
