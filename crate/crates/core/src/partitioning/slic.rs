//! SLIC superpixels on a single-channel edge image.
//!
//! Centers start on a regular grid with spacing `S = sqrt(N / k)` and are
//! moved to the lowest-gradient pixel of their 3x3 neighbourhood. Each
//! iteration assigns every pixel inside a `2S x 2S` window around a center to
//! the closest center under
//!
//! ```text
//! D = sqrt(d_edge^2 + (compactness * d_xy / S)^2)
//! ```
//!
//! and then moves centers to the mean position and edge value of their
//! pixels. Afterwards every label keeps only its largest 4-connected
//! component; the remaining components are merged into the largest adjacent
//! region.

use ndarray::Array2;

use super::{components, EdgeImage, Partition};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicParams {
    pub k: usize,
    pub compactness: f64,
    pub iters: usize,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            k: 64,
            compactness: 10.0,
            iters: 10,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Center {
    row: f64,
    col: f64,
    edge: f64,
}

fn seed_centers(edge: &Array2<f64>, k: usize) -> Vec<Center> {
    let (h, w) = edge.dim();
    let ny = ((k as f64 * h as f64 / w as f64).sqrt().round() as usize).clamp(1, h.min(k));
    let nx = (k / ny).clamp(1, w);
    let grad = |r: usize, c: usize| -> f64 {
        let at = |r: isize, c: isize| edge[[r.clamp(0, h as isize - 1) as usize, c.clamp(0, w as isize - 1) as usize]];
        let (r, c) = (r as isize, c as isize);
        (at(r, c + 1) - at(r, c - 1)).powi(2) + (at(r + 1, c) - at(r - 1, c)).powi(2)
    };

    let mut centers = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        // the floor keeps seeds symmetric on even block sizes
        let r0 = (((i as f64 + 0.5) * h as f64 / ny as f64) - 0.5).floor().max(0.0) as usize;
        for j in 0..nx {
            let c0 = (((j as f64 + 0.5) * w as f64 / nx as f64) - 0.5).floor().max(0.0) as usize;
            let (mut best, mut best_g) = ((r0, c0), grad(r0, c0));
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (r, c) = (r0 as isize + dr, c0 as isize + dc);
                    if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                        continue;
                    }
                    let g = grad(r as usize, c as usize);
                    if g < best_g {
                        best = (r as usize, c as usize);
                        best_g = g;
                    }
                }
            }
            centers.push(Center {
                row: best.0 as f64,
                col: best.1 as f64,
                edge: edge[best],
            });
        }
    }
    centers
}

/// Content-aware superpixel partition of a 2-D edge image into at most `k`
/// connected regions. Deterministic in its inputs.
pub fn slic_partition(edge: &EdgeImage, params: SlicParams) -> Result<Partition> {
    let img = &edge.values;
    let (h, w) = img.dim();
    let pixels = h * w;
    if params.k == 0 || params.k > pixels {
        return Err(Error::BadK { k: params.k, pixels });
    }
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::BadConfig("edge image has non-finite values".into()));
    }

    let step = (pixels as f64 / params.k as f64).sqrt();
    let radius = step.ceil() as isize;
    let spatial_weight = params.compactness / step;
    let mut centers = seed_centers(img, params.k);
    let mut labels = vec![-1i32; pixels];
    let mut dist = vec![f64::INFINITY; pixels];

    for _ in 0..params.iters.max(1) {
        dist.fill(f64::INFINITY);
        labels.fill(-1);
        for (ci, c) in centers.iter().enumerate() {
            let (cr, cc) = (c.row.round() as isize, c.col.round() as isize);
            let r_lo = (cr - radius).max(0) as usize;
            let r_hi = ((cr + radius) as usize).min(h - 1);
            let c_lo = (cc - radius).max(0) as usize;
            let c_hi = ((cc + radius) as usize).min(w - 1);
            for r in r_lo..=r_hi {
                for col in c_lo..=c_hi {
                    let de = img[[r, col]] - c.edge;
                    let dy = r as f64 - c.row;
                    let dx = col as f64 - c.col;
                    let d2 = de * de + spatial_weight * spatial_weight * (dy * dy + dx * dx);
                    let p = r * w + col;
                    if d2 < dist[p] {
                        dist[p] = d2;
                        labels[p] = ci as i32;
                    }
                }
            }
        }

        let mut sums = vec![(0.0f64, 0.0f64, 0.0f64, 0usize); centers.len()];
        for (p, &l) in labels.iter().enumerate() {
            if l >= 0 {
                let s = &mut sums[l as usize];
                s.0 += (p / w) as f64;
                s.1 += (p % w) as f64;
                s.2 += img[[p / w, p % w]];
                s.3 += 1;
            }
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.3 > 0 {
                let n = s.3 as f64;
                *c = Center {
                    row: s.0 / n,
                    col: s.1 / n,
                    edge: s.2 / n,
                };
            }
        }
    }

    let labels = enforce_connectivity(h, w, labels);
    Partition::from_labels(vec![h, w], labels)
}

/// Keeps the largest component of every label, merges every other component
/// (including unassigned pixels) into its largest adjacent kept region, and
/// relabels regions `0..n` in raster order of their first pixel.
fn enforce_connectivity(h: usize, w: usize, labels: Vec<i32>) -> Vec<i32> {
    let shape = [h, w];
    let comp = components(&shape, &labels);
    let n_comp = comp.iter().copied().max().map_or(0, |m| m + 1);
    let mut comp_size = vec![0usize; n_comp];
    let mut comp_label = vec![-1i32; n_comp];
    for (p, &c) in comp.iter().enumerate() {
        comp_size[c] += 1;
        comp_label[c] = labels[p];
    }

    // Largest component per label; earlier (raster) components win ties.
    let n_labels = labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize);
    let mut best: Vec<Option<usize>> = vec![None; n_labels];
    for c in 0..n_comp {
        let l = comp_label[c];
        if l < 0 {
            continue;
        }
        match best[l as usize] {
            Some(b) if comp_size[b] >= comp_size[c] => {}
            _ => best[l as usize] = Some(c),
        }
    }

    // Each component maps to a kept component; kept ones map to themselves.
    let mut target: Vec<Option<usize>> = vec![None; n_comp];
    let mut size = comp_size.clone();
    for b in best.iter().flatten() {
        target[*b] = Some(*b);
    }

    let mut neighbours: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            for q in [(c + 1 < w).then(|| p + 1), (r + 1 < h).then(|| p + w)]
                .into_iter()
                .flatten()
            {
                let (a, b) = (comp[p], comp[q]);
                if a != b {
                    neighbours[a].push(b);
                    neighbours[b].push(a);
                }
            }
        }
    }
    for n in &mut neighbours {
        n.sort_unstable();
        n.dedup();
    }

    let resolve = |target: &Vec<Option<usize>>, c: usize| -> Option<usize> {
        let mut c = c;
        loop {
            match target[c] {
                Some(t) if t == c => return Some(c),
                Some(t) => c = t,
                None => return None,
            }
        }
    };

    loop {
        let mut progressed = false;
        let mut pending = false;
        for c in 0..n_comp {
            if target[c].is_some() {
                continue;
            }
            let mut choice: Option<usize> = None;
            for &nb in &neighbours[c] {
                if let Some(root) = resolve(&target, nb) {
                    choice = match choice {
                        Some(cur) if size[cur] > size[root] || (size[cur] == size[root] && cur < root) => Some(cur),
                        _ => Some(root),
                    };
                }
            }
            match choice {
                Some(root) => {
                    target[c] = Some(root);
                    size[root] += comp_size[c];
                    progressed = true;
                }
                None => pending = true,
            }
        }
        if !pending {
            break;
        }
        if !progressed {
            // Only possible if no label was ever assigned; fall back to one region.
            return vec![0; h * w];
        }
    }

    let mut region_of_root = vec![-1i32; n_comp];
    let mut next = 0;
    let mut out = Vec::with_capacity(h * w);
    for &c in &comp {
        let root = resolve(&target, c).unwrap();
        if region_of_root[root] < 0 {
            region_of_root[root] = next;
            next += 1;
        }
        out.push(region_of_root[root]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize) -> SlicParams {
        SlicParams {
            k,
            ..SlicParams::default()
        }
    }

    fn edge(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> EdgeImage {
        EdgeImage {
            values: Array2::from_shape_fn((h, w), |(r, c)| f(r, c)),
        }
    }

    #[test]
    fn single_region_for_k1() {
        let p = slic_partition(&edge(9, 13, |r, c| (r * c) as f64), params(1)).unwrap();
        assert_eq!(p.n_regions(), 1);
        assert_eq!(p.region_sizes(), &[117]);
    }

    #[test]
    fn uniform_edge_image_gives_quadrants() {
        let p = slic_partition(&edge(8, 8, |_, _| 0.3), params(4)).unwrap();
        assert_eq!(p.n_regions(), 4);
        assert_eq!(p.region_sizes(), &[16, 16, 16, 16]);
        assert!(p.regions_connected());
        // spatial-only objective is symmetric under both reflections
        let l = p.labels();
        for r in 0..8 {
            for c in 0..8 {
                let q = l[r * 8 + c];
                assert_eq!(q, (r / 4 * 2 + c / 4) as i32);
            }
        }
    }

    #[test]
    fn bad_k() {
        let e = edge(2, 2, |_, _| 0.0);
        assert!(matches!(slic_partition(&e, params(0)), Err(Error::BadK { .. })));
        assert!(matches!(slic_partition(&e, params(5)), Err(Error::BadK { .. })));
        assert_eq!(slic_partition(&e, params(4)).unwrap().n_regions(), 4);
    }

    #[test]
    fn follows_a_strong_edge() {
        // left half dark, right half bright: no region should straddle the edge
        let e = edge(16, 16, |_, c| if c < 8 { 0.0 } else { 50.0 });
        let p = slic_partition(&e, params(4)).unwrap();
        let l = p.labels();
        for r in 0..16 {
            for c in 0..8 {
                for c2 in 8..16 {
                    assert_ne!(l[r * 16 + c], l[r * 16 + c2]);
                }
            }
        }
    }

    #[test]
    fn merging_conserves_pixels() {
        let labels = vec![0, 1, 0, 1, 1, 1, 0, 1, -1];
        let out = enforce_connectivity(3, 3, labels);
        let p = Partition::from_labels(vec![3, 3], out).unwrap();
        assert_eq!(p.n_foreground(), 9);
        assert!(p.regions_connected());
    }
}
