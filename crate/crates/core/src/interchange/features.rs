use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array4, Ix1, Ix2, Ix4};
use zip::write::SimpleFileOptions;

use super::manifest::{FeatureRefs, GroupLabels};
use super::npy;
use crate::error::{Error, Result};

/// Penultimate feature maps plus the final linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    /// `B x C x H' x W'`
    pub features: Array4<f64>,
    /// `K x C`
    pub weights: Array2<f64>,
    /// `K`
    pub bias: Array1<f64>,
    pub image_ids: Vec<String>,
}

impl FeatureBundle {
    pub fn new(features: Array4<f64>, weights: Array2<f64>, bias: Array1<f64>, image_ids: Vec<String>) -> Result<Self> {
        let (b, c, _, _) = features.dim();
        if b != image_ids.len() {
            return Err(Error::LengthMismatch(b, image_ids.len()));
        }
        let (k, wc) = weights.dim();
        if k < 2 {
            return Err(Error::BadShape(format!("need at least two classes, got {k}")));
        }
        if wc != c {
            return Err(Error::ShapeMismatch {
                expected: vec![k, c],
                found: vec![k, wc],
            });
        }
        if bias.len() != k {
            return Err(Error::LengthMismatch(k, bias.len()));
        }
        Ok(FeatureBundle {
            features,
            weights,
            bias,
            image_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        let (_, _, h, w) = self.features.dim();
        (h, w)
    }

    /// Loads the arrays referenced by a manifest; ids come from the manifest.
    pub fn load(refs: &FeatureRefs, image_ids: Vec<String>) -> Result<Self> {
        let features = into_dim::<Ix4>(npy::read_f64(&refs.path)?, &refs.path)?;
        let weights = into_dim::<Ix2>(npy::read_f64(&refs.weights)?, &refs.weights)?;
        let bias = into_dim::<Ix1>(npy::read_f64(&refs.bias)?, &refs.bias)?;
        FeatureBundle::new(features, weights, bias, image_ids)
    }

    /// Writes `features.npy`, `weights.npy`, `bias.npy` into `dir`.
    pub fn save_npy(&self, dir: &Path) -> Result<FeatureRefs> {
        let refs = FeatureRefs {
            path: dir.join("features.npy"),
            weights: dir.join("weights.npy"),
            bias: dir.join("bias.npy"),
        };
        npy::write(&refs.path, self.features.shape(), self.features.iter().copied())?;
        npy::write(&refs.weights, self.weights.shape(), self.weights.iter().copied())?;
        npy::write(&refs.bias, self.bias.shape(), self.bias.iter().copied())?;
        Ok(refs)
    }

    /// Writes an `.npz` archive with members `features`, `weights`, `bias`
    /// and, when given, the group labels `y` and `a`.
    pub fn save_npz(&self, path: &Path, labels: Option<&GroupLabels>) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut zip = zip::ZipWriter::new(BufWriter::new(file));
        // fixed timestamps keep archives byte-identical across runs
        let opts = SimpleFileOptions::default()
            .compression_method(zip::CompressionMethod::Stored)
            .last_modified_time(zip::DateTime::default());
        let io = |e| Error::io(path, e);

        zip.start_file("features.npy", opts)?;
        npy::write_to(&mut zip, self.features.shape(), self.features.iter().copied()).map_err(io)?;
        zip.start_file("weights.npy", opts)?;
        npy::write_to(&mut zip, self.weights.shape(), self.weights.iter().copied()).map_err(io)?;
        zip.start_file("bias.npy", opts)?;
        npy::write_to(&mut zip, self.bias.shape(), self.bias.iter().copied()).map_err(io)?;
        if let Some(l) = labels {
            zip.start_file("y.npy", opts)?;
            npy::write_to(&mut zip, &[l.len()], l.y.iter().map(|&v| i64::from(v))).map_err(io)?;
            zip.start_file("a.npy", opts)?;
            npy::write_to(&mut zip, &[l.len()], l.a.iter().map(|&v| i64::from(v))).map_err(io)?;
        }
        zip.finish()?.flush().map_err(io)
    }

    /// Reads an `.npz` written by [`FeatureBundle::save_npz`] (or by numpy's
    /// `savez`). Image ids are the sample indices as strings.
    pub fn load_npz(path: &Path) -> Result<(Self, Option<GroupLabels>)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut zip = zip::ZipArchive::new(BufReader::new(file))?;
        let mut member = |name: &str| -> Result<Option<npy::RawArray>> {
            let mut entry = match zip.by_name(&format!("{name}.npy")) {
                Ok(e) => e,
                Err(zip::result::ZipError::FileNotFound) => return Ok(None),
                Err(e) => return Err(e.into()),
            };
            let mut buf = Vec::with_capacity(entry.size() as usize);
            entry.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
            npy::read_from(&mut buf.as_slice(), path).map(Some)
        };
        let need = |a: Option<npy::RawArray>, name: &str| {
            a.ok_or_else(|| Error::npy(path, format!("archive lacks member {name}.npy")))
        };
        let features = need(member("features")?, "features")?.into_f64();
        let weights = need(member("weights")?, "weights")?.into_f64();
        let bias = need(member("bias")?, "bias")?.into_f64();
        let y = member("y")?;
        let a = member("a")?;

        let features = into_dim::<Ix4>(features, path)?;
        let b = features.dim().0;
        let bundle = FeatureBundle::new(
            features,
            into_dim::<Ix2>(weights, path)?,
            into_dim::<Ix1>(bias, path)?,
            (0..b).map(|i| i.to_string()).collect(),
        )?;
        let labels = match (y, a) {
            (Some(y), Some(a)) => {
                let conv = |v: npy::RawArray| -> Vec<u8> { v.into_f64().iter().map(|&x| x as u8).collect() };
                let labels = GroupLabels::new(conv(y), conv(a))?;
                if labels.len() != b {
                    return Err(Error::LengthMismatch(b, labels.len()));
                }
                Some(labels)
            }
            _ => None,
        };
        Ok((bundle, labels))
    }
}

fn into_dim<D: ndarray::Dimension>(a: ndarray::ArrayD<f64>, path: &Path) -> Result<ndarray::Array<f64, D>> {
    let shape = a.shape().to_vec();
    a.into_dimensionality::<D>().map_err(|_| {
        Error::npy(
            path,
            format!("expected {} dimensions, got shape {shape:?}", D::NDIM.unwrap_or(0)),
        )
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> FeatureBundle {
        let features = Array4::from_shape_fn((3, 2, 2, 2), |(b, c, u, v)| (b * 8 + c * 4 + u * 2 + v) as f64 * 0.5);
        let weights = Array2::from_shape_vec((2, 2), vec![1.0, -1.0, 0.5, 2.0]).unwrap();
        let bias = Array1::from(vec![0.1, -0.1]);
        FeatureBundle::new(features, weights, bias, vec!["0".into(), "1".into(), "2".into()]).unwrap()
    }

    #[test]
    fn npz_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.npz");
        let labels = GroupLabels::new(vec![0, 1, 1], vec![1, 0, 1]).unwrap();
        let fb = tiny();
        fb.save_npz(&p, Some(&labels)).unwrap();
        let (back, back_labels) = FeatureBundle::load_npz(&p).unwrap();
        assert_eq!(back, fb);
        assert_eq!(back_labels.unwrap(), labels);
    }

    #[test]
    fn npz_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let (p, q) = (dir.path().join("a.npz"), dir.path().join("b.npz"));
        tiny().save_npz(&p, None).unwrap();
        tiny().save_npz(&q, None).unwrap();
        assert_eq!(std::fs::read(p).unwrap(), std::fs::read(q).unwrap());
    }

    #[test]
    fn rejects_single_class_head() {
        let f = Array4::zeros((1, 2, 1, 1));
        let w = Array2::zeros((1, 2));
        let err = FeatureBundle::new(f, w, Array1::zeros(1), vec!["x".into()]);
        assert!(matches!(err, Err(Error::BadShape(_))));
    }

    #[test]
    fn rejects_id_count_mismatch() {
        let f = Array4::zeros((2, 2, 1, 1));
        let w = Array2::zeros((2, 2));
        let err = FeatureBundle::new(f, w, Array1::zeros(2), vec!["x".into()]);
        assert!(matches!(err, Err(Error::LengthMismatch(2, 1))));
    }
}
