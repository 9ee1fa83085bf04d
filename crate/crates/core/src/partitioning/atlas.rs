use std::collections::BTreeMap;

use ndarray::ArrayD;

use super::{Partition, BACKGROUND};
use crate::error::{Error, Result};

/// One region per distinct non-background atlas label, numbered in ascending
/// order of the original label values. Background pixels are excluded.
pub fn atlas_partition(labels: &ArrayD<i64>, background: i64) -> Result<Partition> {
    let mut index: BTreeMap<i64, i32> = labels.iter().filter(|&&l| l != background).map(|&l| (l, 0)).collect();
    if index.is_empty() {
        return Err(Error::NoForeground);
    }
    for (i, v) in index.values_mut().enumerate() {
        *v = i as i32;
    }
    let out = labels
        .iter()
        .map(|l| if *l == background { BACKGROUND } else { index[l] })
        .collect();
    Partition::from_labels(labels.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn reindexes_in_ascending_label_order() {
        let a = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![0, 7, 7, 2, 0, 2]).unwrap();
        let p = atlas_partition(&a, 0).unwrap();
        assert_eq!(p.n_regions(), 2);
        assert_eq!(p.labels(), &[-1, 1, 1, 0, -1, 0]);
        assert_eq!(p.n_foreground(), 4);
    }

    #[test]
    fn three_labels_with_background() {
        let a = ArrayD::from_shape_vec(IxDyn(&[3]), vec![0, 1, 2]).unwrap();
        assert_eq!(atlas_partition(&a, 0).unwrap().n_regions(), 2);
    }

    #[test]
    fn ninety_five_region_volume() {
        // labels 1..=95 laid out in slabs of unequal thickness, background 0
        let shape = [20, 24, 20];
        let a = ArrayD::from_shape_fn(IxDyn(&shape), |ix| {
            let flat = (ix[0] * 24 + ix[1]) * 20 + ix[2];
            if flat % 101 == 0 {
                0
            } else {
                1 + (((flat as f64).sqrt() as i64) % 95)
            }
        });
        let p = atlas_partition(&a, 0).unwrap();
        assert_eq!(p.n_regions(), 95);
        let sizes = p.region_sizes();
        assert!(sizes.iter().any(|&s| s != sizes[0]));
        assert_eq!(p.n_foreground() + a.iter().filter(|&&l| l == 0).count(), 9600);
    }

    #[test]
    fn all_background() {
        let a = ArrayD::from_elem(IxDyn(&[4, 4]), 3);
        assert!(matches!(atlas_partition(&a, 3), Err(Error::NoForeground)));
    }
}
