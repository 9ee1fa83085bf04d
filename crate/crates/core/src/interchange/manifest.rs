use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::ArrayD;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{npy, preprocess_in_place, AttributionMap, ModelTag, PreprocessMode};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// One image as listed on disk. Model paths are optional here so that a
/// missing model can be reported precisely.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawImage {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ba: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ts: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sa: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRefs {
    pub path: PathBuf,
    pub weights: PathBuf,
    pub bias: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawManifest {
    version: u32,
    shape: Vec<usize>,
    images: Vec<RawImage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<FeatureRefs>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEntry {
    pub id: String,
    pub ba: PathBuf,
    pub ts: PathBuf,
    pub sa: PathBuf,
    pub y: Option<u8>,
    pub a: Option<u8>,
    pub raw: Option<PathBuf>,
}

impl ImageEntry {
    pub fn map_path(&self, model: ModelTag) -> &Path {
        match model {
            ModelTag::BA => &self.ba,
            ModelTag::TS => &self.ts,
            ModelTag::SA => &self.sa,
        }
    }
}

/// Per-image target labels and sensitive-attribute values, in manifest order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupLabels {
    pub y: Vec<u8>,
    pub a: Vec<u8>,
}

impl GroupLabels {
    pub fn new(y: Vec<u8>, a: Vec<u8>) -> Result<Self> {
        if y.len() != a.len() {
            return Err(Error::LengthMismatch(y.len(), a.len()));
        }
        if y.iter().chain(&a).any(|&v| v > 1) {
            return Err(Error::BadConfig("group labels must be 0 or 1".into()));
        }
        Ok(GroupLabels { y, a })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Group index `2*y + a` of sample `i`.
    pub fn group(&self, i: usize) -> usize {
        2 * self.y[i] as usize + self.a[i] as usize
    }

    pub fn subset(&self, idx: &[usize]) -> GroupLabels {
        GroupLabels {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            a: idx.iter().map(|&i| self.a[i]).collect(),
        }
    }
}

/// A validated manifest. All relative paths are resolved against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub version: u32,
    pub shape: Vec<usize>,
    pub images: Vec<ImageEntry>,
    pub features: Option<FeatureRefs>,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image_ids(&self) -> Vec<String> {
        self.images.iter().map(|e| e.id.clone()).collect()
    }

    /// Group labels, if every image carries a `(y, a)` pair.
    pub fn labels(&self) -> Option<GroupLabels> {
        let y = self.images.iter().map(|e| e.y).collect::<Option<Vec<_>>>()?;
        let a = self.images.iter().map(|e| e.a).collect::<Option<Vec<_>>>()?;
        Some(GroupLabels { y, a })
    }

    pub fn raw_paths(&self) -> Option<Vec<PathBuf>> {
        self.images.iter().map(|e| e.raw.clone()).collect()
    }

    /// Loads and preprocesses every map of one model, in manifest order.
    pub fn load_maps(&self, model: ModelTag, mode: PreprocessMode) -> Result<Vec<AttributionMap>> {
        self.images
            .par_iter()
            .map(|entry| {
                let path = entry.map_path(model);
                let mut values = npy::read_f64(path)?;
                check_shape(&self.shape, values.shape())?;
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::npy(path, "attribution map has non-finite values"));
                }
                preprocess_in_place(&mut values, mode)?;
                Ok(AttributionMap {
                    image_id: entry.id.clone(),
                    model,
                    values,
                })
            })
            .collect()
    }

    /// Writes the manifest as JSON. Paths under `dir` are stored relative to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let rel = |p: &Path| -> PathBuf { p.strip_prefix(base).unwrap_or(p).to_path_buf() };
        let raw = RawManifest {
            version: self.version,
            shape: self.shape.clone(),
            images: self
                .images
                .iter()
                .map(|e| RawImage {
                    id: e.id.clone(),
                    ba: Some(rel(&e.ba)),
                    ts: Some(rel(&e.ts)),
                    sa: Some(rel(&e.sa)),
                    y: e.y,
                    a: e.a,
                    raw: e.raw.as_deref().map(rel),
                })
                .collect(),
            features: self.features.as_ref().map(|f| FeatureRefs {
                path: rel(&f.path),
                weights: rel(&f.weights),
                bias: rel(&f.bias),
            }),
        };
        let text = serde_json::to_string_pretty(&raw)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn check_shape(expected: &[usize], found: &[usize]) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        });
    }
    Ok(())
}

/// Reads and validates a manifest.
///
/// Every referenced map must exist and declare the manifest's spatial shape;
/// only array headers are read.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: RawManifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let manifest = validate(raw, &base)?;

    let mut files: Vec<&Path> = Vec::new();
    for e in &manifest.images {
        files.extend(ModelTag::ALL.iter().map(|&m| e.map_path(m)));
    }
    files
        .par_iter()
        .try_for_each(|p| check_shape(&manifest.shape, &npy::read_shape(p)?))?;
    if let Some(raws) = manifest.raw_paths() {
        raws.par_iter()
            .try_for_each(|p| check_shape(&manifest.shape, &npy::read_shape(p)?))?;
    }
    if let Some(f) = &manifest.features {
        for p in [&f.path, &f.weights, &f.bias] {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "feature file missing"),
                ));
            }
        }
    }
    Ok(manifest)
}

fn validate(raw: RawManifest, base: &Path) -> Result<Manifest> {
    if raw.version != MANIFEST_VERSION {
        return Err(Error::BadManifest(format!("unsupported version {}", raw.version)));
    }
    if raw.images.is_empty() {
        return Err(Error::EmptyInput("manifest lists no images"));
    }
    if !(2..=3).contains(&raw.shape.len()) || raw.shape.contains(&0) {
        return Err(Error::BadManifest(format!(
            "spatial shape must be 2-D or 3-D and nonempty, got {:?}",
            raw.shape
        )));
    }

    let mut seen = HashSet::new();
    for img in &raw.images {
        if !seen.insert(img.id.as_str()) {
            return Err(Error::IdMismatch(format!("duplicate image id {:?}", img.id)));
        }
    }

    // A model absent for every image is missing; absent for some is an id mismatch.
    for tag in ModelTag::ALL {
        let pick = |img: &RawImage| match tag {
            ModelTag::BA => img.ba.is_some(),
            ModelTag::TS => img.ts.is_some(),
            ModelTag::SA => img.sa.is_some(),
        };
        let present = raw.images.iter().filter(|i| pick(i)).count();
        if present == 0 {
            return Err(Error::MissingModel(tag.to_string()));
        }
        if present != raw.images.len() {
            let missing: Vec<&str> = raw.images.iter().filter(|i| !pick(i)).map(|i| i.id.as_str()).collect();
            return Err(Error::IdMismatch(format!("model {tag} lacks maps for {missing:?}")));
        }
    }

    let labelled = raw.images.iter().filter(|i| i.y.is_some() || i.a.is_some()).count();
    if labelled != 0 && (labelled != raw.images.len() || raw.images.iter().any(|i| i.y.is_none() || i.a.is_none())) {
        return Err(Error::BadManifest(
            "group labels must be given for every image or for none".into(),
        ));
    }
    if raw.images.iter().any(|i| i.y.unwrap_or(0) > 1 || i.a.unwrap_or(0) > 1) {
        return Err(Error::BadManifest("group labels must be 0 or 1".into()));
    }
    let with_raw = raw.images.iter().filter(|i| i.raw.is_some()).count();
    if with_raw != 0 && with_raw != raw.images.len() {
        return Err(Error::BadManifest(
            "raw image paths must be given for every image or for none".into(),
        ));
    }

    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
    let images = raw
        .images
        .into_iter()
        .map(|i| ImageEntry {
            id: i.id,
            ba: resolve(i.ba.unwrap()),
            ts: resolve(i.ts.unwrap()),
            sa: resolve(i.sa.unwrap()),
            y: i.y,
            a: i.a,
            raw: i.raw.map(resolve),
        })
        .collect();
    Ok(Manifest {
        version: raw.version,
        shape: raw.shape,
        images,
        features: raw.features.map(|f| FeatureRefs {
            path: resolve(f.path),
            weights: resolve(f.weights),
            bias: resolve(f.bias),
        }),
    })
}

/// Writes a set of maps and a manifest that references them.
///
/// Maps are stored as `maps/<id>_<model>.npy` under `dir`.
pub fn write_bundle(
    dir: impl AsRef<Path>,
    ids: &[String],
    maps: [&[ArrayD<f64>]; 3],
    labels: Option<&GroupLabels>,
    features: Option<FeatureRefs>,
) -> Result<Manifest> {
    let dir = dir.as_ref();
    let map_dir = dir.join("maps");
    fs::create_dir_all(&map_dir).map_err(|e| Error::io(&map_dir, e))?;
    let shape = maps[0]
        .first()
        .map(|a| a.shape().to_vec())
        .ok_or(Error::EmptyInput("no maps to write"))?;
    let mut images = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let mut paths = Vec::with_capacity(3);
        for (tag, set) in ModelTag::ALL.iter().zip(maps.iter()) {
            let p = map_dir.join(format!("{id}_{tag}.npy"));
            npy::write_array(&p, &set[i])?;
            paths.push(p);
        }
        let mut paths = paths.into_iter();
        images.push(ImageEntry {
            id: id.clone(),
            ba: paths.next().unwrap(),
            ts: paths.next().unwrap(),
            sa: paths.next().unwrap(),
            y: labels.map(|l| l.y[i]),
            a: labels.map(|l| l.a[i]),
            raw: None,
        });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        shape,
        images,
        features,
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}
