//! Report bundle: a JSON summary, `region,value` CSV tables and PNG
//! heatmaps. Output bytes depend only on the values written.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};
use serde::Serialize;

use crate::error::{Error, Result};

/// Colour scheme for a heatmap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Palette {
    /// Minimum black, maximum white.
    Gray,
    /// Blue for negative, white at zero, red for positive; symmetric in
    /// the largest magnitude.
    Diverging,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub name: String,
    /// Row-major `height x width` values.
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub palette: Palette,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub values: Vec<f64>,
}

/// Everything [`write_report`] puts on disk.
#[derive(Clone, Debug, Default)]
pub struct ReportBundle {
    pub summary: serde_json::Value,
    pub tables: Vec<Table>,
    pub heatmaps: Vec<Heatmap>,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_table(path: &Path, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["region", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `region,value` table back.
pub fn read_table(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec.get(1)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::BadConfig(format!("bad row in {}", path.display())))
        })
        .collect()
}

fn diverging(t: f64) -> Rgb<u8> {
    // t in [-1, 1]
    let fade = |x: f64| (255.0 * (1.0 - x)).round() as u8;
    if t < 0.0 {
        let x = -t;
        Rgb([fade(x), fade(x), 255])
    } else {
        Rgb([255, fade(t), fade(t)])
    }
}

pub fn write_heatmap(path: &Path, map: &Heatmap) -> Result<()> {
    if map.values.len() != map.height * map.width || map.values.is_empty() {
        return Err(Error::BadShape(format!(
            "{} values for a {}x{} heatmap",
            map.values.len(),
            map.height,
            map.width
        )));
    }
    let (w, h) = (map.width as u32, map.height as u32);
    let at = |x: u32, y: u32| map.values[y as usize * map.width + x as usize];
    match map.palette {
        Palette::Gray => {
            let lo = map.values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = map.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            let img = GrayImage::from_fn(w, h, |x, y| Luma([(255.0 * (at(x, y) - lo) / span).round() as u8]));
            img.save_with_format(path, ImageFormat::Png)?;
        }
        Palette::Diverging => {
            let scale = map.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = if scale > 0.0 { scale } else { 1.0 };
            let img = RgbImage::from_fn(w, h, |x, y| diverging((at(x, y) / scale).clamp(-1.0, 1.0)));
            img.save_with_format(path, ImageFormat::Png)?;
        }
    }
    Ok(())
}

/// Writes `report.json`, `<name>.csv` per table and `<name>.png` per
/// heatmap into `dir`, creating it if needed. Returns the written paths.
pub fn write_report(dir: &Path, bundle: &ReportBundle) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let json = dir.join("report.json");
    write_json(&json, &bundle.summary)?;
    written.push(json);
    for t in &bundle.tables {
        let p = dir.join(format!("{}.csv", t.name));
        write_table(&p, &t.values)?;
        written.push(p);
    }
    for m in &bundle.heatmaps {
        let p = dir.join(format!("{}.png", m.name));
        write_heatmap(&p, m)?;
        written.push(p);
    }
    Ok(written)
}
