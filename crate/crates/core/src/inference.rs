//! Variance-bound estimation, confidence intervals, the no-heterogeneity test
//! and confidence-set membership.
//!
//! The `A_t` vectors are always assembled on the IPW scale (raw or truncated
//! weights, before stabilization). The Hájek normalization enters through
//! `J` and, in [`QMode::WeightScaled`], through the `Q` scaling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::regression::{evaluate_cate, CateFit, TimeFit};
use crate::weights::WeightSeries;

/// Relative tolerance for negative eigenvalues of a bound before it is
/// treated as a numerical failure.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct AtVector {
    pub t: usize,
    /// `[P Y'_t; P Y''_t; rho'_t; rho''_t]`, length `2L + 2`.
    pub values: DVector<f64>,
}

/// Assembles `A_t` from period fits and the weight series they were built
/// with. Stabilized series are rescaled back by their stabilizing mean.
pub fn build_a_vectors(
    fits: &[TimeFit],
    hp: &WeightSeries,
    hpp: &WeightSeries,
) -> Result<Vec<AtVector>> {
    if hp.periods() != hpp.periods() || hp.len() != fits.len() {
        return Err(Error::invalid("fits and weight series cover different periods"));
    }
    let s1 = hp.stabilizing_mean().unwrap_or(1.0);
    let s2 = hpp.stabilizing_mean().unwrap_or(1.0);
    let (w1, w2) = (hp.weights(), hpp.weights());
    let l = fits.first().map_or(0, |f| f.beta.len());
    fits.iter()
        .enumerate()
        .map(|(j, f)| {
            if f.t != hp.first_t() + j {
                return Err(Error::invalid(format!("fit for period {} out of order", f.t)));
            }
            if f.proj_hp.len() != l || f.proj_hpp.len() != l {
                return Err(Error::invalid("period fits have different dimensions"));
            }
            let mut v = DVector::zeros(2 * l + 2);
            for k in 0..l {
                v[k] = f.proj_hp[k] * s1;
                v[l + k] = f.proj_hpp[k] * s2;
            }
            v[2 * l] = w1[j] * s1;
            v[2 * l + 1] = w2[j] * s2;
            Ok(AtVector { t: f.t, values: v })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QMode {
    Identity,
    /// Pseudo-outcome blocks divided by the mean weights, weight blocks by
    /// `xi^M`, the M-th power of the mean single-period weight.
    #[default]
    WeightScaled,
}

/// Inputs for `Q` beyond the `A_t` list.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QInputs {
    /// Mean single-period weight for each intervention over all periods.
    pub xi_hp: f64,
    pub xi_hpp: f64,
    pub m: usize,
}

impl QInputs {
    pub fn unit(m: usize) -> Self {
        Self {
            xi_hp: 1.0,
            xi_hpp: 1.0,
            m,
        }
    }

    /// Means of `exp(single)` for two single-period log-ratio sequences.
    pub fn from_single_period(hp: &[f64], hpp: &[f64], m: usize) -> Self {
        let mean = |v: &[f64]| v.iter().map(|l| l.exp()).sum::<f64>() / v.len() as f64;
        Self {
            xi_hp: mean(hp),
            xi_hpp: mean(hpp),
            m,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceBound {
    pub v_hat: DMatrix<f64>,
    pub j_hat: Option<DMatrix<f64>>,
    pub q: Option<DMatrix<f64>>,
    /// `L x L` bound on the asymptotic variance of `sqrt(n) beta_bar`.
    pub sigma: DMatrix<f64>,
    pub n_eff: usize,
    pub q_mode: Option<QMode>,
}

/// `Sigma = J Q V Q' J'` for the Hájek estimator.
pub fn estimate_variance_bound(a: &[AtVector], inputs: &QInputs, mode: QMode) -> Result<VarianceBound> {
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid(format!("variance bound needs at least 2 periods, have {n}")));
    }
    let dim = a[0].values.len();
    if dim < 4 || dim % 2 != 0 || a.iter().any(|v| v.values.len() != dim) {
        return Err(Error::invalid("A vectors have inconsistent dimensions"));
    }
    let l = (dim - 2) / 2;
    let nf = n as f64;

    let mut v_hat = DMatrix::zeros(dim, dim);
    let mut mean = DVector::zeros(dim);
    for at in a {
        v_hat.ger(1.0, &at.values, &at.values, 1.0);
        mean += &at.values;
    }
    v_hat /= nf;
    mean /= nf;
    let (rho1, rho2) = (mean[2 * l], mean[2 * l + 1]);
    if !(rho1 > 0.0 && rho2 > 0.0) {
        return Err(Error::Numerical("mean weight is zero; Hájek bound undefined".into()));
    }

    let mut j = DMatrix::zeros(l, dim);
    for k in 0..l {
        j[(k, k)] = 1.0;
        j[(k, l + k)] = -1.0;
        j[(k, 2 * l)] = -mean[k] / rho1;
        j[(k, 2 * l + 1)] = mean[l + k] / rho2;
    }
    let mut q = DMatrix::identity(dim, dim);
    if mode == QMode::WeightScaled {
        let mi = inputs.m as i32;
        let (x1, x2) = (inputs.xi_hp.powi(-mi), inputs.xi_hpp.powi(-mi));
        if !(x1.is_finite() && x2.is_finite()) {
            return Err(Error::Numerical("single-period weight means are degenerate".into()));
        }
        for k in 0..l {
            q[(k, k)] = 1.0 / rho1;
            q[(l + k, l + k)] = 1.0 / rho2;
        }
        q[(2 * l, 2 * l)] = x1;
        q[(2 * l + 1, 2 * l + 1)] = x2;
    }
    let jq = &j * &q;
    let sigma = psd_checked(&jq * &v_hat * jq.transpose())?;
    Ok(VarianceBound {
        v_hat,
        j_hat: Some(j),
        q: Some(q),
        sigma,
        n_eff: n,
        q_mode: Some(mode),
    })
}

/// `V^I = mean beta_t beta_t'` for the IPW estimator.
pub fn estimate_variance_bound_ipw(betas: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let first = betas.first().ok_or_else(|| Error::invalid("no period coefficients"))?;
    let l = first.len();
    let mut v = DMatrix::zeros(l, l);
    for b in betas {
        if b.len() != l {
            return Err(Error::invalid("period coefficients have different dimensions"));
        }
        let b = DVector::from_column_slice(b);
        v.ger(1.0, &b, &b, 1.0);
    }
    Ok(v / betas.len() as f64)
}

impl VarianceBound {
    pub fn ipw(fits: &[TimeFit]) -> Result<Self> {
        let betas: Vec<Vec<f64>> = fits.iter().map(|f| f.beta.clone()).collect();
        let v = estimate_variance_bound_ipw(&betas)?;
        Ok(Self {
            sigma: psd_checked(v.clone())?,
            v_hat: v,
            j_hat: None,
            q: None,
            n_eff: fits.len(),
            q_mode: None,
        })
    }

    /// Standard errors of `beta_bar`: `sqrt(diag(Sigma) / n_eff)`.
    pub fn standard_errors(&self) -> Vec<f64> {
        let n = self.n_eff as f64;
        self.sigma.diagonal().iter().map(|v| (v / n).sqrt()).collect()
    }

    pub fn submatrix(&self, cols: std::ops::Range<usize>) -> DMatrix<f64> {
        let k = cols.len();
        self.sigma.view((cols.start, cols.start), (k, k)).into_owned()
    }
}

/// Symmetrizes and projects onto the PSD cone; fails when an eigenvalue is
/// more negative than the tolerance allows.
fn psd_checked(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("variance bound has non-finite entries".into()));
    }
    let sym = (&m + m.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE * scale.max(1.0) {
        return Err(Error::Numerical(format!(
            "variance bound is not positive semidefinite (eigenvalue {min:e})"
        )));
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose())
}

/// Inverse of a PSD matrix through Cholesky; singular input is an error.
pub fn invert_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = m.diagonal().amax();
    if scale == 0.0 {
        return Err(Error::Singular("variance bound is zero".into()));
    }
    let eig = m.clone().symmetric_eigen();
    if eig.eigenvalues.min() <= 1e-12 * eig.eigenvalues.max() {
        return Err(Error::Singular(format!(
            "variance bound is singular (eigenvalues {:e} .. {:e})",
            eig.eigenvalues.min(),
            eig.eigenvalues.max()
        )));
    }
    m.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular("Cholesky factorization failed".into()))
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

pub fn chi_squared_quantile(p: f64, dof: usize) -> Result<f64> {
    let d = ChiSquared::new(dof as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(d.inverse_cdf(p))
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("confidence level {level} outside (0, 1)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub r: f64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub extrapolated: bool,
}

/// `tau(r) +- z sqrt(z(r)' Sigma z(r) / n_eff)`, district-scaled.
pub fn cate_confidence_interval(
    fit: &CateFit,
    bound: &VarianceBound,
    r: f64,
    level: f64,
) -> Result<Interval> {
    check_level(level)?;
    let z = DVector::from_vec(fit.basis.row(r));
    if z.len() != bound.sigma.nrows() {
        return Err(Error::invalid("bound dimension does not match the basis"));
    }
    let point = evaluate_cate(fit, r);
    let var = (z.transpose() * &bound.sigma * &z)[0].max(0.0);
    let half = normal_quantile(0.5 + level / 2.0) * (var / bound.n_eff as f64).sqrt() * fit.district_scale;
    Ok(Interval {
        r,
        estimate: point.value,
        lo: point.value - half,
        hi: point.value + half,
        extrapolated: point.extrapolated,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityTest {
    pub t_c: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Wald-type statistic `n_eff * b' Sigma^{-1} b` for the tested block.
pub fn test_no_heterogeneity(
    beta: &[f64],
    sigma: &DMatrix<f64>,
    n_eff: usize,
) -> Result<HeterogeneityTest> {
    let l = beta.len();
    if l == 0 || sigma.shape() != (l, l) {
        return Err(Error::invalid("tested block and bound dimensions differ"));
    }
    if beta.iter().all(|&b| b == 0.0) {
        return Ok(HeterogeneityTest {
            t_c: 0.0,
            dof: l,
            p_value: 1.0,
        });
    }
    let t_c = quadratic_statistic(beta, sigma, n_eff)?;
    let chi = ChiSquared::new(l as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(HeterogeneityTest {
        t_c,
        dof: l,
        p_value: chi.sf(t_c).clamp(0.0, 1.0),
    })
}

fn quadratic_statistic(d: &[f64], sigma: &DMatrix<f64>, n_eff: usize) -> Result<f64> {
    let inv = invert_psd(sigma)?;
    let d = DVector::from_column_slice(d);
    Ok((n_eff as f64 * (d.transpose() * inv * &d)[0]).max(0.0))
}

/// Whether `candidate` lies in the level-`level` confidence set for the
/// tested coefficients.
pub fn confidence_set_member(
    candidate: &[f64],
    beta_bar: &[f64],
    sigma: &DMatrix<f64>,
    n_eff: usize,
    level: f64,
) -> Result<bool> {
    check_level(level)?;
    if candidate.len() != beta_bar.len() {
        return Err(Error::invalid("candidate and estimate dimensions differ"));
    }
    let diff: Vec<f64> = beta_bar.iter().zip(candidate).map(|(a, b)| a - b).collect();
    let stat = if diff.iter().all(|&v| v == 0.0) {
        0.0
    } else {
        quadratic_statistic(&diff, sigma, n_eff)?
    };
    Ok(stat < chi_squared_quantile(level, beta_bar.len())?)
}
