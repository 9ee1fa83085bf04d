use super::Partition;
use crate::error::{Error, Result};

/// Regular grid of equal, axis-aligned blocks, labelled in raster order of
/// the blocks.
pub fn grid_partition(shape: &[usize], block: &[usize]) -> Result<Partition> {
    if shape.len() != block.len() {
        return Err(Error::LengthMismatch(shape.len(), block.len()));
    }
    if shape.is_empty() {
        return Err(Error::EmptyInput("grid shape has no axes"));
    }
    for (&len, &b) in shape.iter().zip(block) {
        if b == 0 || len == 0 || len % b != 0 {
            return Err(Error::NotDivisible { len, block: b });
        }
    }
    let counts: Vec<usize> = shape.iter().zip(block).map(|(l, b)| l / b).collect();
    let pixels: usize = shape.iter().product();
    let mut labels = Vec::with_capacity(pixels);
    let mut coord = vec![0usize; shape.len()];
    for _ in 0..pixels {
        let mut label = 0usize;
        for d in 0..shape.len() {
            label = label * counts[d] + coord[d] / block[d];
        }
        labels.push(label as i32);
        // advance C-order coordinate
        for d in (0..shape.len()).rev() {
            coord[d] += 1;
            if coord[d] < shape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    Partition::from_labels(shape.to_vec(), labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_in_two_by_two_blocks() {
        let p = grid_partition(&[4, 4], &[2, 2]).unwrap();
        assert_eq!(p.n_regions(), 4);
        assert_eq!(p.region_sizes(), &[4, 4, 4, 4]);
        #[rustfmt::skip]
        let expect = [
            0, 0, 1, 1,
            0, 0, 1, 1,
            2, 2, 3, 3,
            2, 2, 3, 3,
        ];
        assert_eq!(p.labels(), &expect);
    }

    #[test]
    fn image_net_resolution_with_16px_blocks() {
        let p = grid_partition(&[224, 224], &[16, 16]).unwrap();
        assert_eq!(p.n_regions(), 196);
        assert!(p.region_sizes().iter().all(|&s| s == 256));
        assert!(p.regions_connected());
    }

    #[test]
    fn non_divisible_axis_is_rejected() {
        assert!(matches!(
            grid_partition(&[5, 4], &[2, 2]),
            Err(Error::NotDivisible { len: 5, block: 2 })
        ));
    }

    #[test]
    fn volumes_are_supported() {
        let p = grid_partition(&[4, 6, 2], &[2, 3, 2]).unwrap();
        assert_eq!(p.n_regions(), 4);
        assert!(p.region_sizes().iter().all(|&s| s == 12));
        assert!(p.regions_connected());
    }

    #[test]
    fn stable_across_calls() {
        assert_eq!(
            grid_partition(&[8, 8], &[4, 2]).unwrap(),
            grid_partition(&[8, 8], &[4, 2]).unwrap()
        );
    }
}
