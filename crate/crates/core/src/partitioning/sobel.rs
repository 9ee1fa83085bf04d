use ndarray::{Array2, ArrayD, Ix2};

use crate::error::{Error, Result};

/// Nonnegative edge-strength image used to drive superpixel clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeImage {
    pub values: Array2<f64>,
}

/// Gradient magnitude with 3x3 Sobel kernels. Borders replicate the edge
/// pixel.
fn sobel_magnitude(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        img[[r, c]]
    };
    Array2::from_shape_fn((h, w), |(r, c)| {
        let (r, c) = (r as isize, c as isize);
        let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
            - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
        let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
            - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
        (gx * gx + gy * gy).sqrt()
    })
}

/// Pixelwise mean of per-image Sobel gradient magnitudes.
pub fn average_sobel(images: &[ArrayD<f64>]) -> Result<EdgeImage> {
    let first = images.first().ok_or(Error::EmptyInput("no images to average"))?;
    if first.ndim() != 2 {
        return Err(Error::Not2D(first.ndim()));
    }
    let shape = first.shape().to_vec();
    let mut acc = Array2::<f64>::zeros((shape[0], shape[1]));
    for img in images {
        if img.ndim() != 2 {
            return Err(Error::Not2D(img.ndim()));
        }
        if img.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: shape.clone(),
                found: img.shape().to_vec(),
            });
        }
        let img = img.view().into_dimensionality::<Ix2>().unwrap().to_owned();
        acc += &sobel_magnitude(&img);
    }
    acc /= images.len() as f64;
    Ok(EdgeImage { values: acc })
}
