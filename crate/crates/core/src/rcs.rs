//! Region Contribution Scores.
//!
//! For profiles A and B with reference C, let `e_A`, `e_B` be the residuals
//! after regressing on C and `z` their standardised values (sample standard
//! deviation, `n - 1` denominator). Then `RCS(r) = z_A[r] * z_B[r]` and
//! `sum_r RCS(r) / (n - 1)` is exactly the partial correlation, so each
//! region's share of the statistic can be read off directly.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlations::{partial_corr, residualize, Method, Roles};
use crate::error::{Error, Result};
use crate::partitioning::Partition;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcsMap {
    pub roles: Roles,
    /// `z_A * z_B` per region.
    pub raw: Vec<f64>,
    /// `raw` divided by its l1 norm.
    pub normalised: Vec<f64>,
}

impl RcsMap {
    pub fn n_regions(&self) -> usize {
        self.raw.len()
    }

    /// `sum(raw) / (n - 1)`; equals the partial correlation.
    pub fn implied_rho(&self) -> f64 {
        self.raw.iter().sum::<f64>() / (self.raw.len() - 1) as f64
    }
}

fn standardise(e: &[f64]) -> Vec<f64> {
    let n = e.len() as f64;
    let sd = (e.iter().map(|v| v * v).sum::<f64>() / (n - 1.0)).sqrt();
    e.iter().map(|v| v / sd).collect()
}

/// Signed per-region contributions to the partial correlation of `a` and
/// `b` given `c`.
pub fn compute_rcs(a: &[f64], b: &[f64], c: &[f64], roles: Roles) -> Result<RcsMap> {
    // validates lengths, size and degeneracy
    let rho = partial_corr(a, b, c, Method::Pearson)?;
    let za = standardise(&residualize(a, c)?);
    let zb = standardise(&residualize(b, c)?);
    let raw: Vec<f64> = za.iter().zip(&zb).map(|(x, y)| x * y).collect();
    let l1: f64 = raw.iter().map(|v| v.abs()).sum();
    if l1.is_nan() || l1 <= 0.0 {
        return Err(Error::DegenerateProfile("contributions are all zero"));
    }
    let normalised = raw.iter().map(|v| v / l1).collect();
    let map = RcsMap { roles, raw, normalised };
    debug_assert!(
        (map.implied_rho() - rho).abs() < 1e-10,
        "decomposition off: {} vs {rho}",
        map.implied_rho()
    );
    Ok(map)
}

/// Normalised shortcut-aligned map minus normalised task-aligned map.
/// Positive regions align TS with SA, negative ones with BA.
pub fn compute_rcs_star(ts: &[f64], sa: &[f64], ba: &[f64]) -> Result<Vec<f64>> {
    let shortcut = compute_rcs(ts, sa, ba, Roles::SHORTCUT)?;
    let task = compute_rcs(ts, ba, sa, Roles::TASK)?;
    Ok(shortcut
        .normalised
        .iter()
        .zip(&task.normalised)
        .map(|(s, t)| s - t)
        .collect())
}

/// Wrap-around distance between two positions on an axis of length `len`.
fn wrap(a: usize, b: usize, len: usize) -> usize {
    let d = a.abs_diff(b);
    d.min(len - d)
}

/// Toroidal Chebyshev distance between cells `p` and `q` of an `h x w` grid.
pub fn toroidal_chebyshev(p: usize, q: usize, h: usize, w: usize) -> usize {
    wrap(p / w, q / w, h).max(wrap(p % w, q % w, w))
}

/// Minimum displacement required by [`shuffle_rcs`].
pub fn min_shift(h: usize, w: usize, min_frac: f64) -> usize {
    (min_frac * h.max(w) as f64 - 1e-12).ceil().max(0.0) as usize
}

/// Randomly reassigns the cells of `values` (an `h x w` row-major grid) so
/// that every value lands at toroidal Chebyshev distance at least
/// `ceil(min_frac * max(h, w))` from where it started.
///
/// A uniformly chosen cyclic shift that satisfies the constraint is
/// composed with random swaps that keep it satisfied.
pub fn shuffle_rcs(values: &[f64], h: usize, w: usize, min_frac: f64, seed: u64) -> Result<Vec<f64>> {
    if h * w != values.len() || values.is_empty() {
        return Err(Error::BadShape(format!("{} values for a {h}x{w} map", values.len())));
    }
    if min_frac.is_nan() || min_frac < 0.0 {
        return Err(Error::BadConfig(format!("min_frac {min_frac} is negative")));
    }
    let d = min_shift(h, w, min_frac);
    let shifts: Vec<(usize, usize)> = (0..h)
        .flat_map(|dr| (0..w).map(move |dc| (dr, dc)))
        .filter(|&(dr, dc)| wrap(0, dr, h).max(wrap(0, dc, w)) >= d)
        .collect();
    if shifts.is_empty() {
        return Err(Error::Infeasible {
            rows: h,
            cols: w,
            min_shift: d,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (dr, dc) = shifts[rng.random_range(0..shifts.len())];
    let n = h * w;
    // dest[p] is where the value starting at p ends up
    let mut dest: Vec<usize> = (0..n).map(|p| ((p / w + dr) % h) * w + (p % w + dc) % w).collect();
    for _ in 0..4 * n {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && toroidal_chebyshev(i, dest[j], h, w) >= d && toroidal_chebyshev(j, dest[i], h, w) >= d {
            dest.swap(i, j);
        }
    }

    let mut out = vec![0.0; n];
    for (p, &q) in dest.iter().enumerate() {
        out[q] = values[p];
    }
    Ok(out)
}

/// Paints each pixel with its region's value; background pixels get 0.
pub fn rasterize_rcs(values: &[f64], partition: &Partition) -> Result<Vec<f64>> {
    if values.len() != partition.n_regions() {
        return Err(Error::LengthMismatch(partition.n_regions(), values.len()));
    }
    Ok(partition
        .labels()
        .par_iter()
        .map(|&l| if l < 0 { 0.0 } else { values[l as usize] })
        .collect())
}
