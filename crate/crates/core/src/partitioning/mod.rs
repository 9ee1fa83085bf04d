//! Mutually exclusive, exhaustive region partitions of pixel space.

mod atlas;
mod grid;
mod slic;
mod sobel;

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::npy;

pub use atlas::atlas_partition;
pub use grid::grid_partition;
pub use slic::{slic_partition, SlicParams};
pub use sobel::{average_sobel, EdgeImage};

/// Label carried by pixels that belong to no region.
pub const BACKGROUND: i32 = -1;

/// Region labels over a spatial grid. Every non-background pixel belongs to
/// exactly one of `n_regions` nonempty regions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    shape: Vec<usize>,
    labels: Vec<i32>,
    region_sizes: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    n_regions: usize,
    region_sizes: Vec<usize>,
}

impl Partition {
    /// Builds a partition from raw labels in C order, validating that labels
    /// are `BACKGROUND` or lie in `0..n` with every region nonempty.
    pub fn from_labels(shape: Vec<usize>, labels: Vec<i32>) -> Result<Self> {
        let pixels: usize = shape.iter().product();
        if labels.len() != pixels {
            return Err(Error::LengthMismatch(pixels, labels.len()));
        }
        let max = labels.iter().copied().max().unwrap_or(BACKGROUND);
        if labels.iter().any(|&l| l < BACKGROUND) {
            return Err(Error::BadShape("region labels must be >= -1".into()));
        }
        if max < 0 {
            return Err(Error::NoForeground);
        }
        let mut region_sizes = vec![0usize; max as usize + 1];
        for &l in &labels {
            if l >= 0 {
                region_sizes[l as usize] += 1;
            }
        }
        if let Some(r) = region_sizes.iter().position(|&s| s == 0) {
            return Err(Error::BadShape(format!("region {r} has no pixels")));
        }
        Ok(Partition {
            shape,
            labels,
            region_sizes,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Labels in C order; `BACKGROUND` marks excluded pixels.
    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    pub fn n_regions(&self) -> usize {
        self.region_sizes.len()
    }

    pub fn region_sizes(&self) -> &[usize] {
        &self.region_sizes
    }

    pub fn n_pixels(&self) -> usize {
        self.labels.len()
    }

    pub fn n_foreground(&self) -> usize {
        self.region_sizes.iter().sum()
    }

    pub fn label_array(&self) -> ArrayD<i32> {
        ArrayD::from_shape_vec(IxDyn(&self.shape), self.labels.clone()).unwrap()
    }

    /// Recounts region sizes from the labels and checks them against the
    /// cached sizes.
    pub fn check_invariants(&self) -> Result<()> {
        let recount = Partition::from_labels(self.shape.clone(), self.labels.clone())?;
        if recount.region_sizes != self.region_sizes {
            return Err(Error::BadShape("region sizes disagree with labels".into()));
        }
        Ok(())
    }

    /// Whether every region is 4-connected (2-D) or 6-connected (3-D).
    pub fn regions_connected(&self) -> bool {
        let comps = components(&self.shape, &self.labels);
        let mut seen = vec![false; self.n_regions()];
        let mut owner: Vec<Option<usize>> = vec![None; self.n_regions()];
        for (&l, &c) in self.labels.iter().zip(&comps) {
            if l < 0 {
                continue;
            }
            match owner[l as usize] {
                None => {
                    owner[l as usize] = Some(c);
                    seen[l as usize] = true;
                }
                Some(o) if o != c => return false,
                _ => {}
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Writes the labels as an `int32` array and a `.json` sidecar with
    /// `{n_regions, region_sizes}` next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        npy::write(path, &self.shape, self.labels.iter().copied())?;
        let sidecar = Sidecar {
            n_regions: self.n_regions(),
            region_sizes: self.region_sizes.clone(),
        };
        let side = path.with_extension("json");
        let text = serde_json::to_string_pretty(&sidecar)?;
        fs::write(&side, text + "\n").map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let labels = npy::read_int(path.as_ref())?;
        let shape = labels.shape().to_vec();
        let labels = labels
            .iter()
            .map(|&l| i32::try_from(l).map_err(|_| Error::npy(path.as_ref(), "label overflow")))
            .collect::<Result<Vec<_>>>()?;
        Partition::from_labels(shape, labels)
    }
}

/// Connected-component ids (face adjacency) over a label array; pixels are
/// joined when their labels are equal. Ids are assigned in raster order.
pub(crate) fn components(shape: &[usize], labels: &[i32]) -> Vec<usize> {
    let n = labels.len();
    let strides: Vec<usize> = (0..shape.len()).map(|d| shape[d + 1..].iter().product()).collect();
    let mut comp = vec![usize::MAX; n];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        comp[start] = next;
        stack.push(start);
        while let Some(p) = stack.pop() {
            for (d, &stride) in strides.iter().enumerate() {
                let coord = (p / stride) % shape[d];
                if coord > 0 {
                    let q = p - stride;
                    if comp[q] == usize::MAX && labels[q] == labels[p] {
                        comp[q] = next;
                        stack.push(q);
                    }
                }
                if coord + 1 < shape[d] {
                    let q = p + stride;
                    if comp[q] == usize::MAX && labels[q] == labels[p] {
                        comp[q] = next;
                        stack.push(q);
                    }
                }
            }
        }
        next += 1;
    }
    comp
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_labels_counts_and_validates() {
        let p = Partition::from_labels(vec![2, 2], vec![0, 1, -1, 1]).unwrap();
        assert_eq!(p.n_regions(), 2);
        assert_eq!(p.region_sizes(), &[1, 2]);
        assert_eq!(p.n_foreground(), 3);
        assert!(Partition::from_labels(vec![2, 2], vec![0, 2, 2, 2]).is_err());
        assert!(matches!(
            Partition::from_labels(vec![1, 2], vec![-1, -1]),
            Err(Error::NoForeground)
        ));
    }

    #[test]
    fn connectivity_check() {
        let ok = Partition::from_labels(vec![2, 3], vec![0, 0, 1, 0, 1, 1]).unwrap();
        assert!(ok.regions_connected());
        let split = Partition::from_labels(vec![1, 3], vec![0, 1, 0]).unwrap();
        assert!(!split.regions_connected());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.npy");
        let p = grid_partition(&[4, 6], &[2, 3]).unwrap();
        p.save(&path).unwrap();
        assert_eq!(Partition::load(&path).unwrap(), p);
        let side: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("p.json")).unwrap()).unwrap();
        assert_eq!(side["n_regions"], 4);
        assert_eq!(side["region_sizes"], serde_json::json!([6, 6, 6, 6]));
    }
}
