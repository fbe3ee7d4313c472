use super::cloud::Point3;
use super::dist2;
use super::grid::GridIndex;
use crate::{Error, Result};

/// Default cap on neighbors per query.
pub const DEFAULT_MAX_NEIGHBORS: usize = 40;

/// Fixed-width neighbor lists padded with a shadow index.
///
/// Row `m` holds `width` entries. Real neighbors come first, sorted by
/// distance then index; the rest of the row is filled with `shadow`, which
/// equals the number of supports and addresses a virtual zero-feature point.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    indices: Vec<usize>,
    width: usize,
    num_queries: usize,
    shadow: usize,
    radius: f64,
}

impl NeighborTable {
    /// Builds a table from ragged rows, padding to the longest row.
    pub fn from_rows(rows: &[Vec<usize>], num_supports: usize, radius: f64) -> Self {
        let width = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut indices = vec![num_supports; rows.len() * width];
        for (m, row) in rows.iter().enumerate() {
            indices[m * width..m * width + row.len()].copy_from_slice(row);
        }
        NeighborTable {
            indices,
            width,
            num_queries: rows.len(),
            shadow: num_supports,
            radius,
        }
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Index used for padding, equal to the support count.
    pub fn shadow(&self) -> usize {
        self.shadow
    }

    pub fn num_supports(&self) -> usize {
        self.shadow
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Full padded row.
    pub fn row(&self, m: usize) -> &[usize] {
        &self.indices[m * self.width..(m + 1) * self.width]
    }

    /// Real neighbors of row `m`, without padding.
    pub fn neighbors(&self, m: usize) -> &[usize] {
        let row = self.row(m);
        let n = row
            .iter()
            .position(|&i| i == self.shadow)
            .unwrap_or(row.len());
        &row[..n]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    /// Mutable row access for tests that reorder neighbors.
    pub fn row_mut(&mut self, m: usize) -> &mut [usize] {
        &mut self.indices[m * self.width..(m + 1) * self.width]
    }

    /// Concatenates tables over disjoint point sets.
    ///
    /// Support indices of each part are offset by the supports of the parts
    /// before it; every padding entry is remapped to the new total shadow.
    pub fn concat(parts: &[&NeighborTable]) -> NeighborTable {
        let width = parts.iter().map(|t| t.width).max().unwrap_or(1);
        let total_supports: usize = parts.iter().map(|t| t.shadow).sum();
        let total_queries: usize = parts.iter().map(|t| t.num_queries).sum();
        let radius = parts.first().map(|t| t.radius).unwrap_or(0.0);
        let mut indices = vec![total_supports; total_queries * width];
        let mut q0 = 0;
        let mut s0 = 0;
        for t in parts {
            for m in 0..t.num_queries {
                let dst = &mut indices[(q0 + m) * width..(q0 + m + 1) * width];
                for (slot, &i) in t.neighbors(m).iter().enumerate() {
                    dst[slot] = i + s0;
                }
            }
            q0 += t.num_queries;
            s0 += t.shadow;
        }
        NeighborTable {
            indices,
            width,
            num_queries: total_queries,
            shadow: total_supports,
            radius,
        }
    }
}

/// All supports within `radius` (closed ball) of each query.
///
/// Rows longer than `max_neighbors` keep the nearest ones. Distances are
/// compared squared: a support is inside when `|s - q|² <= radius²`.
pub fn radius_search(
    queries: &[Point3],
    supports: &[Point3],
    radius: f64,
    max_neighbors: usize,
) -> Result<NeighborTable> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Argument(format!("radius must be > 0, got {radius}")));
    }
    if max_neighbors == 0 {
        return Err(Error::Argument("max_neighbors must be >= 1".into()));
    }
    let r2 = radius * radius;
    // Cells slightly larger than the radius so the 27-cell block always
    // covers the ball, even after rounding in the cell computation.
    let grid = GridIndex::build(supports, radius * (1.0 + 1e-6))?;
    let mut rows = Vec::with_capacity(queries.len());
    let mut found: Vec<(f64, usize)> = Vec::new();
    for q in queries {
        found.clear();
        grid.for_each_near(q, |i| {
            let d = dist2(q, &supports[i]);
            if d <= r2 {
                found.push((d, i));
            }
        });
        found.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.truncate(max_neighbors);
        rows.push(found.iter().map(|&(_, i)| i).collect::<Vec<_>>());
    }
    Ok(NeighborTable::from_rows(&rows, supports.len(), radius))
}

/// Index of the nearest support for every query (ties to the smaller index).
///
/// `hint_radius` is a distance within which every query is expected to have
/// a support; queries with none inside it fall back to a full scan.
pub fn nearest_neighbor(
    queries: &[Point3],
    supports: &[Point3],
    hint_radius: f64,
) -> Result<Vec<usize>> {
    if supports.is_empty() {
        return Err(Error::Argument(
            "nearest neighbor over empty supports".into(),
        ));
    }
    let grid = GridIndex::build(supports, hint_radius.max(f64::MIN_POSITIVE) * (1.0 + 1e-6))?;
    let r2 = hint_radius * hint_radius;
    let out = queries
        .iter()
        .map(|q| {
            fn consider(best: &mut Option<(f64, usize)>, d: f64, i: usize) {
                if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                    *best = Some((d, i));
                }
            }
            let mut best: Option<(f64, usize)> = None;
            grid.for_each_near(q, |i| consider(&mut best, dist2(q, &supports[i]), i));
            match best {
                Some((d, i)) if d <= r2 => i,
                _ => {
                    for (i, s) in supports.iter().enumerate() {
                        consider(&mut best, dist2(q, s), i);
                    }
                    best.expect("supports are non-empty").1
                }
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(queries: &[Point3], supports: &[Point3], radius: f64) -> Vec<Vec<usize>> {
        queries
            .iter()
            .map(|q| {
                (0..supports.len())
                    .filter(|&i| dist2(q, &supports[i]) <= radius * radius)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn line_example() {
        let supports = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let t = radius_search(&[[0.0; 3]], &supports, 1.5, 40).unwrap();
        assert_eq!(t.neighbors(0), &[0, 1]);
        assert_eq!(t.shadow(), 3);
    }

    #[test]
    fn self_match_tiny_radius() {
        let supports = [[0.3, 0.2, 0.1], [0.3, 0.2, 0.1 + 1e-6]];
        let t = radius_search(&[[0.3, 0.2, 0.1]], &supports, 1e-9, 40).unwrap();
        assert_eq!(t.neighbors(0), &[0]);
    }

    #[test]
    fn empty_supports_give_shadow_rows() {
        let t = radius_search(&[[0.0; 3], [1.0; 3]], &[], 1.0, 40).unwrap();
        assert_eq!(t.width(), 1);
        assert_eq!(t.row(0), &[0]);
        assert!(t.neighbors(1).is_empty());
    }

    #[test]
    fn cap_keeps_nearest() {
        let supports: Vec<Point3> = (0..10).map(|i| [i as f64 * 0.1, 0.0, 0.0]).collect();
        let t = radius_search(&[[0.42, 0.0, 0.0]], &supports, 10.0, 3).unwrap();
        assert_eq!(t.neighbors(0), &[4, 5, 3]);
    }

    #[test]
    fn closed_ball_boundary() {
        let supports = [[0.5, 0.0, 0.0]];
        let t = radius_search(&[[0.0; 3]], &supports, 0.5, 4).unwrap();
        assert_eq!(t.neighbors(0), &[0]);
    }

    #[test]
    fn bad_arguments() {
        assert!(radius_search(&[], &[], 0.0, 4).is_err());
        assert!(radius_search(&[], &[], 1.0, 0).is_err());
    }

    #[test]
    fn concat_remaps_shadow() {
        let a = NeighborTable::from_rows(&[vec![0, 1], vec![1]], 2, 0.1);
        let b = NeighborTable::from_rows(&[vec![0, 2, 1]], 3, 0.1);
        let c = NeighborTable::concat(&[&a, &b]);
        assert_eq!(c.width(), 3);
        assert_eq!(c.shadow(), 5);
        assert_eq!(c.row(0), &[0, 1, 5]);
        assert_eq!(c.row(1), &[1, 5, 5]);
        assert_eq!(c.row(2), &[2, 4, 3]);
    }

    #[test]
    fn nearest_matches_scan() {
        let supports = [[0.0; 3], [1.0, 0.0, 0.0], [5.0, 5.0, 5.0]];
        let q = [
            [0.4, 0.0, 0.0],
            [0.6, 0.0, 0.0],
            [4.0, 4.0, 4.0],
            [0.5, 0.0, 0.0],
        ];
        assert_eq!(
            nearest_neighbor(&q, &supports, 0.5).unwrap(),
            vec![0, 1, 2, 0]
        );
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn matches_brute_force(seed in 0u64..10_000, n in 1usize..300, radius in 0.02f64..0.5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut pts = || (0..n).map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect::<Vec<_>>();
            let supports = pts();
            let queries = pts();
            let t = radius_search(&queries, &supports, radius, usize::MAX).unwrap();
            let expect = brute(&queries, &supports, radius);
            for (m, e) in expect.iter().enumerate() {
                let mut got = t.neighbors(m).to_vec();
                got.sort_unstable();
                proptest::prop_assert_eq!(&got, e);
            }
        }
    }
}
