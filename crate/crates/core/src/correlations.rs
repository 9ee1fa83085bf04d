//! Pairwise, partial and deviation correlations between rank profiles.
//!
//! With residuals `e_X = X - fit(X | C)` from a simple least-squares
//! regression with intercept:
//!
//! * pairwise:  `corr(A, B)`
//! * partial:   `corr(e_A, e_B)`
//! * deviation: `corr(e_A, B)`

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interchange::ModelTag;
use crate::rank_profiles::rank_scores;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Pearson,
    Spearman,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Pairwise,
    #[default]
    Partial,
    Deviation,
}

impl Kind {
    pub fn needs_reference(self) -> bool {
        !matches!(self, Kind::Pairwise)
    }

    /// Smallest profile length for which the statistic is defined.
    pub fn min_regions(self) -> usize {
        match self {
            Kind::Pairwise => 3,
            Kind::Partial | Kind::Deviation => 4,
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pearson" => Ok(Method::Pearson),
            "spearman" => Ok(Method::Spearman),
            _ => Err(Error::BadConfig(format!("unknown method {s:?}"))),
        }
    }
}

impl FromStr for Kind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(Kind::Pairwise),
            "partial" => Ok(Kind::Partial),
            "deviation" => Ok(Kind::Deviation),
            _ => Err(Error::BadConfig(format!("unknown correlation kind {s:?}"))),
        }
    }
}

/// Assignment of models to the A, B and (optional) reference C roles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub a: ModelTag,
    pub b: ModelTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<ModelTag>,
}

impl Roles {
    /// (TS, SA | BA), the shortcut hypothesis.
    pub const SHORTCUT: Roles = Roles {
        a: ModelTag::TS,
        b: ModelTag::SA,
        c: Some(ModelTag::BA),
    };
    /// (TS, BA | SA), the task hypothesis.
    pub const TASK: Roles = Roles {
        a: ModelTag::TS,
        b: ModelTag::BA,
        c: Some(ModelTag::SA),
    };
}

impl FromStr for Roles {
    type Err = Error;

    /// Parses `"TS,SA,BA"` or `"TS,SA"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [a, b] => Ok(Roles {
                a: a.parse()?,
                b: b.parse()?,
                c: None,
            }),
            [a, b, c] => Ok(Roles {
                a: a.parse()?,
                b: b.parse()?,
                c: Some(c.parse()?),
            }),
            _ => Err(Error::BadConfig(format!("bad role list {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub kind: Kind,
    pub method: Method,
    pub rho: f64,
    pub roles: Roles,
}

/// Sum of squares below which a centred vector counts as constant, relative
/// to its uncentred sum of squares.
const FLAT_RELATIVE: f64 = 1e-24;

/// Residual variance below this fraction of the input's variance counts as
/// an exact fit.
const DEGENERATE_RELATIVE: f64 = 1e-20;

fn check_len(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn centred(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn is_flat(x: &[f64], centred_ss: f64) -> bool {
    centred_ss <= FLAT_RELATIVE * dot(x, x)
}

/// Pearson product-moment correlation.
fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let (xc, yc) = (centred(x), centred(y));
    let (sxx, syy) = (dot(&xc, &xc), dot(&yc, &yc));
    if is_flat(x, sxx) || is_flat(y, syy) {
        return Err(Error::ZeroVariance);
    }
    Ok((dot(&xc, &yc) / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation coefficient. Spearman is Pearson on average ranks.
pub fn corr(x: &[f64], y: &[f64], method: Method) -> Result<f64> {
    check_len(x, y)?;
    if x.len() < 3 {
        return Err(Error::TooFewRegions { need: 3, got: x.len() });
    }
    match method {
        Method::Pearson => pearson(x, y),
        Method::Spearman => pearson(&rank_scores(x), &rank_scores(y)),
    }
}

/// Residuals of `x` after least-squares regression on `c` with intercept.
///
/// A constant regressor falls back to an intercept-only fit, so the
/// residuals are `x - mean(x)`.
pub fn residualize(x: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    check_len(x, c)?;
    if x.is_empty() {
        return Err(Error::EmptyInput("cannot regress empty vectors"));
    }
    let xc = centred(x);
    let cc = centred(c);
    let scc = dot(&cc, &cc);
    if is_flat(c, scc) {
        return Ok(xc);
    }
    let slope = dot(&cc, &xc) / scc;
    Ok(xc.iter().zip(&cc).map(|(xv, cv)| xv - slope * cv).collect())
}

/// Residuals that must carry variance for the statistic to exist.
fn residual_checked(x: &[f64], c: &[f64], what: &'static str) -> Result<Vec<f64>> {
    let e = residualize(x, c)?;
    let xc = centred(x);
    let see = dot(&e, &e);
    if see == 0.0 || see <= DEGENERATE_RELATIVE * dot(&xc, &xc) {
        return Err(Error::DegenerateProfile(what));
    }
    Ok(e)
}

fn check_min(n: usize, kind: Kind) -> Result<()> {
    if n < kind.min_regions() {
        return Err(Error::TooFewRegions {
            need: kind.min_regions(),
            got: n,
        });
    }
    Ok(())
}

/// Correlation of the residuals of `a` and `b` after regressing each on `c`.
pub fn partial_corr(a: &[f64], b: &[f64], c: &[f64], method: Method) -> Result<f64> {
    check_len(a, b)?;
    check_len(a, c)?;
    check_min(a.len(), Kind::Partial)?;
    let ea = residual_checked(a, c, "A is fully explained by the reference")?;
    let eb = residual_checked(b, c, "B is fully explained by the reference")?;
    corr(&ea, &eb, method).map_err(|_| Error::DegenerateProfile("residuals have zero variance"))
}

/// Correlation between the residual of `a` given `c` and `b` unchanged.
pub fn deviation_corr(a: &[f64], b: &[f64], c: &[f64], method: Method) -> Result<f64> {
    check_len(a, b)?;
    check_len(a, c)?;
    check_min(a.len(), Kind::Deviation)?;
    let ea = residual_checked(a, c, "A is fully explained by the reference")?;
    corr(&ea, b, method).map_err(|e| match e {
        Error::ZeroVariance => Error::DegenerateProfile("B has zero variance"),
        other => other,
    })
}

/// Evaluates the statistic of the given kind. `c` is required for partial
/// and deviation correlations.
pub fn statistic(kind: Kind, method: Method, a: &[f64], b: &[f64], c: Option<&[f64]>) -> Result<f64> {
    match (kind, c) {
        (Kind::Pairwise, _) => corr(a, b, method),
        (Kind::Partial, Some(c)) => partial_corr(a, b, c, method),
        (Kind::Deviation, Some(c)) => deviation_corr(a, b, c, method),
        (_, None) => Err(Error::BadConfig(format!(
            "{kind:?} correlation needs a reference profile"
        ))),
    }
}

impl CorrelationResult {
    /// Computes the statistic for `roles` using `profile(tag)` to look up
    /// each model's rank profile.
    pub fn compute<'p>(
        kind: Kind,
        method: Method,
        roles: Roles,
        profile: impl Fn(ModelTag) -> &'p [f64],
    ) -> Result<Self> {
        let c = if kind.needs_reference() {
            Some(profile(roles.c.ok_or_else(|| {
                Error::BadConfig(format!("{kind:?} correlation needs a reference role"))
            })?))
        } else {
            None
        };
        let rho = statistic(kind, method, profile(roles.a), profile(roles.b), c)?;
        Ok(CorrelationResult {
            kind,
            method,
            rho,
            roles: Roles {
                c: if kind.needs_reference() { roles.c } else { None },
                ..roles
            },
        })
    }
}
