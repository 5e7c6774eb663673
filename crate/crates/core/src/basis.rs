//! Working-model bases `z(r)` for the moderator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::ModeratorPanel;

/// One column of a user-defined basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum ColumnFn {
    /// `r^k`
    Power { k: u32 },
    /// `1{r > threshold}`
    Step { threshold: f64 },
    /// `1{r == value}`
    Indicator { value: f64 },
    /// `log(1 + r)`
    Log1p,
}

impl ColumnFn {
    fn eval(&self, r: f64) -> f64 {
        match *self {
            ColumnFn::Power { k } => r.powi(k as i32),
            ColumnFn::Step { threshold } => f64::from(u8::from(r > threshold)),
            ColumnFn::Indicator { value } => f64::from(u8::from(r == value)),
            ColumnFn::Log1p => r.ln_1p(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisKind {
    /// Single column `r` for a 0/1 moderator.
    Binary,
    /// Natural cubic spline with the given knots (boundary knots included);
    /// `knots.len() - 1` columns, linear beyond the boundary knots.
    NaturalSpline { knots: Vec<f64> },
    /// Spline columns shifted so that `z(0) = 0`, plus `1{r == 0}`.
    SplineZeroIndicator { knots: Vec<f64> },
    Custom { columns: Vec<ColumnFn> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    #[serde(flatten)]
    kind: BasisKind,
    #[serde(default = "default_true")]
    include_intercept: bool,
}

fn default_true() -> bool {
    true
}

impl BasisSpec {
    pub fn new(kind: BasisKind, include_intercept: bool) -> Result<Self> {
        match &kind {
            BasisKind::NaturalSpline { knots } | BasisKind::SplineZeroIndicator { knots } => {
                if knots.len() < 2 {
                    return Err(Error::invalid("a natural spline needs at least two knots"));
                }
                if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::invalid("spline knots must be finite and strictly increasing"));
                }
            }
            BasisKind::Custom { columns } if columns.is_empty() => {
                return Err(Error::invalid("custom basis has no columns"));
            }
            _ => {}
        }
        Ok(Self {
            kind,
            include_intercept,
        })
    }

    pub fn binary() -> Self {
        Self {
            kind: BasisKind::Binary,
            include_intercept: true,
        }
    }

    /// Natural spline with `l` columns and equally spaced knots on `[lo, hi]`.
    pub fn natural_spline(l: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            BasisKind::NaturalSpline {
                knots: equally_spaced(l, lo, hi)?,
            },
            true,
        )
    }

    /// Natural spline whose boundary knots are the range of `values`.
    pub fn natural_spline_from_values(l: usize, values: &[f64]) -> Result<Self> {
        let (lo, hi) = finite_range(values)?;
        Self::natural_spline(l, lo, hi)
    }

    /// Zero-anchored spline with `l` spline columns plus the zero indicator.
    pub fn spline_zero_indicator(l: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            BasisKind::SplineZeroIndicator {
                knots: equally_spaced(l, lo, hi)?,
            },
            true,
        )
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }
    pub fn include_intercept(&self) -> bool {
        self.include_intercept
    }

    /// Number of non-intercept columns `L`.
    pub fn dof(&self) -> usize {
        match &self.kind {
            BasisKind::Binary => 1,
            BasisKind::NaturalSpline { knots } => knots.len() - 1,
            BasisKind::SplineZeroIndicator { knots } => knots.len(),
            BasisKind::Custom { columns } => columns.len(),
        }
    }

    pub fn n_columns(&self) -> usize {
        self.dof() + usize::from(self.include_intercept)
    }

    /// Column indices of the non-intercept block.
    pub fn tested_columns(&self) -> std::ops::Range<usize> {
        let start = usize::from(self.include_intercept);
        start..start + self.dof()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_columns());
        if self.include_intercept {
            names.push("intercept".to_string());
        }
        match &self.kind {
            BasisKind::Binary => names.push("r".into()),
            BasisKind::NaturalSpline { knots } => {
                names.extend((1..knots.len()).map(|j| format!("ns{j}")));
            }
            BasisKind::SplineZeroIndicator { knots } => {
                names.extend((1..knots.len()).map(|j| format!("ns{j}")));
                names.push("is_zero".into());
            }
            BasisKind::Custom { columns } => {
                names.extend((1..=columns.len()).map(|j| format!("z{j}")));
            }
        }
        names
    }

    /// `z(r)` including the intercept column when present.
    pub fn row(&self, r: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_columns());
        self.row_into(r, &mut out);
        out
    }

    pub fn row_into(&self, r: f64, out: &mut Vec<f64>) {
        out.clear();
        if self.include_intercept {
            out.push(1.0);
        }
        match &self.kind {
            BasisKind::Binary => out.push(r),
            BasisKind::NaturalSpline { knots } => natural_spline_row(knots, r, out),
            BasisKind::SplineZeroIndicator { knots } => {
                let start = out.len();
                natural_spline_row(knots, r, out);
                let mut at_zero = Vec::with_capacity(knots.len() - 1);
                natural_spline_row(knots, 0.0, &mut at_zero);
                for (v, z0) in out[start..].iter_mut().zip(at_zero) {
                    *v -= z0;
                }
                out.push(f64::from(u8::from(r == 0.0)));
            }
            BasisKind::Custom { columns } => out.extend(columns.iter().map(|c| c.eval(r))),
        }
    }

    /// Stacks `z(r_i)` for each value into a `p x n_columns` matrix.
    pub fn matrix(&self, values: &[f64]) -> DMatrix<f64> {
        let ncol = self.n_columns();
        let mut z = DMatrix::zeros(values.len(), ncol);
        let mut row = Vec::with_capacity(ncol);
        for (i, &r) in values.iter().enumerate() {
            self.row_into(r, &mut row);
            for (j, v) in row.iter().enumerate() {
                z[(i, j)] = *v;
            }
        }
        z
    }
}

fn equally_spaced(l: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if l == 0 {
        return Err(Error::invalid("spline dimension must be at least 1"));
    }
    if !(lo < hi) {
        return Err(Error::invalid(format!("empty spline range [{lo}, {hi}]")));
    }
    let step = (hi - lo) / l as f64;
    Ok((0..=l).map(|j| if j == l { hi } else { lo + step * j as f64 }).collect())
}

fn finite_range(values: &[f64]) -> Result<(f64, f64)> {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(lo < hi) {
        return Err(Error::invalid("moderator has no spread; cannot place spline knots"));
    }
    Ok((lo, hi))
}

// Truncated-power form: N_1 = x, N_{k+1} = d_k - d_{K-1} with
// d_k = ((x - xi_k)_+^3 - (x - xi_K)_+^3) / (xi_K - xi_k).
fn natural_spline_row(knots: &[f64], x: f64, out: &mut Vec<f64>) {
    let k = knots.len();
    out.push(x);
    if k < 3 {
        return;
    }
    let last = knots[k - 1];
    let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
    let tail = cube(x - last);
    let d = |j: usize| (cube(x - knots[j]) - tail) / (last - knots[j]);
    let d_last = d(k - 2);
    for j in 0..k - 2 {
        out.push(d(j) - d_last);
    }
}

/// Pre-intervention moderator column for period `t`: `R_{., t-M+1}`.
pub fn lagged_moderator(moderator: &ModeratorPanel, t: usize, m: usize) -> Result<&[f64]> {
    if m == 0 || t < m {
        return Err(Error::invalid(format!("period {t} has no lag t-M+1 for M={m}")));
    }
    moderator.column(t + 1 - m)
}

/// `Z_t` with rows `z(R_{i, t-M+1})`.
pub fn build_basis_matrix(
    moderator: &ModeratorPanel,
    t: usize,
    m: usize,
    spec: &BasisSpec,
) -> Result<DMatrix<f64>> {
    let values = lagged_moderator(moderator, t, m)?;
    if let BasisKind::Binary = spec.kind {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("binary basis requires a 0/1 moderator"));
        }
    }
    Ok(spec.matrix(values))
}
