use std::fmt;

use crate::{Error, Result};

pub type Point3 = [f64; 3];

/// Number of semantic classes.
pub const NUM_CLASSES: usize = 6;

/// Label value for points that carry no ground truth.
pub const IGNORE_LABEL: u8 = 255;

/// Semantic class of a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub u8);

impl ClassId {
    pub const NATURAL: ClassId = ClassId(0);
    pub const BRIDGE: ClassId = ClassId(1);
    pub const ROAD: ClassId = ClassId(2);
    pub const CAR: ClassId = ClassId(3);
    pub const POLE: ClassId = ClassId(4);
    pub const GUARDRAIL: ClassId = ClassId(5);
    pub const IGNORE: ClassId = ClassId(IGNORE_LABEL);

    pub const NAMES: [&'static str; NUM_CLASSES] =
        ["natural", "bridge", "road", "car", "pole", "guardrail"];

    pub fn all() -> impl Iterator<Item = ClassId> {
        (0..NUM_CLASSES as u8).map(ClassId)
    }

    pub fn is_valid(self) -> bool {
        (self.0 as usize) < NUM_CLASSES || self.0 == IGNORE_LABEL
    }

    pub fn is_ignore(self) -> bool {
        self.0 == IGNORE_LABEL
    }

    pub fn name(self) -> &'static str {
        Self::NAMES
            .get(self.0 as usize)
            .copied()
            .unwrap_or("unlabeled")
    }

    pub fn from_name(name: &str) -> Option<ClassId> {
        Self::NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| ClassId(i as u8))
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A set of points with optional per-point intensity and class labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledCloud {
    pub coords: Vec<Point3>,
    pub intensity: Option<Vec<f64>>,
    pub labels: Option<Vec<u8>>,
}

impl LabeledCloud {
    /// Builds a validated cloud.
    pub fn new(
        coords: Vec<Point3>,
        intensity: Option<Vec<f64>>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        let cloud = LabeledCloud {
            coords,
            intensity,
            labels,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn from_coords(coords: Vec<Point3>) -> Self {
        LabeledCloud {
            coords,
            intensity: None,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.coords.len();
        if let Some(i) = self
            .coords
            .iter()
            .position(|p| !p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::Data(format!("non-finite coordinate at point {i}")));
        }
        if let Some(intensity) = &self.intensity {
            if intensity.len() != n {
                return Err(Error::Data(format!(
                    "intensity length {} does not match {n} points",
                    intensity.len()
                )));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::Data(format!(
                    "label length {} does not match {n} points",
                    labels.len()
                )));
            }
            if let Some(i) = labels.iter().position(|&l| !ClassId(l).is_valid()) {
                return Err(Error::Data(format!(
                    "invalid class id {} at point {i}",
                    labels[i]
                )));
            }
        }
        Ok(())
    }

    /// Sub-cloud made of the given point indices, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledCloud {
        LabeledCloud {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            intensity: self
                .intensity
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
            labels: self
                .labels
                .as_ref()
                .map(|v| indices.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Appends another cloud. Optional channels survive only when both sides have them.
    pub fn extend(&mut self, other: &LabeledCloud) {
        let was_empty = self.is_empty();
        self.coords.extend_from_slice(&other.coords);
        self.intensity = match (self.intensity.take(), &other.intensity) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
        self.labels = match (self.labels.take(), &other.labels) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            (None, Some(b)) if was_empty => Some(b.clone()),
            _ => None,
        };
    }

    /// Per-class point counts; unlabeled points are not counted.
    pub fn class_histogram(&self) -> [usize; NUM_CLASSES] {
        let mut hist = [0; NUM_CLASSES];
        if let Some(labels) = &self.labels {
            for &l in labels {
                if (l as usize) < NUM_CLASSES {
                    hist[l as usize] += 1;
                }
            }
        }
        hist
    }

    pub fn centroid(&self) -> Option<Point3> {
        if self.is_empty() {
            return None;
        }
        let mut c = [0.0; 3];
        for p in &self.coords {
            for d in 0..3 {
                c[d] += p[d];
            }
        }
        let n = self.len() as f64;
        Some([c[0] / n, c[1] / n, c[2] / n])
    }

    /// Componentwise minimum and maximum.
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.coords.first()?;
        Some(
            self.coords
                .iter()
                .fold((first, first), |(mut lo, mut hi), p| {
                    for d in 0..3 {
                        lo[d] = lo[d].min(p[d]);
                        hi[d] = hi[d].max(p[d]);
                    }
                    (lo, hi)
                }),
        )
    }

    pub fn translated(&self, offset: Point3) -> LabeledCloud {
        let mut out = self.clone();
        for p in &mut out.coords {
            for d in 0..3 {
                p[d] += offset[d];
            }
        }
        out
    }
}
