//! Per-period least squares of pseudo-effects on the moderator basis, and
//! the time-averaged CATE fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::weights::{quantile_type7, WeightingMode};

/// Relative rank tolerance for `Z_t`.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankPolicy {
    #[default]
    Error,
    /// Pseudo-inverse solution; flagged on every fit that needed it.
    MinimumNorm,
}

/// The least-squares map `D -> (Z'Z)^{-1} Z'D` for one design.
#[derive(Clone, Debug)]
pub struct Projector {
    /// `L x p`
    map: DMatrix<f64>,
    condition: f64,
    min_norm: bool,
}

impl Projector {
    pub fn new(z: &DMatrix<f64>, policy: RankPolicy) -> Result<Self> {
        let (p, l) = z.shape();
        if l == 0 || p == 0 {
            return Err(Error::invalid("empty design matrix"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("design matrix has non-finite entries".into()));
        }
        let norm = z.norm();
        let tol = RANK_TOLERANCE * norm.max(f64::MIN_POSITIVE);
        let deficient = dependent_columns(z, tol);
        let sv = z.clone().svd(false, false).singular_values;
        let condition = sv.max() / sv.min();
        if deficient.is_empty() {
            let qr = z.clone().qr();
            let r = qr.r();
            let qt = qr.q().transpose();
            let map = r
                .solve_upper_triangular(&qt)
                .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
            return Ok(Self {
                map,
                condition,
                min_norm: false,
            });
        }
        match policy {
            RankPolicy::Error => Err(Error::RankDeficient { columns: deficient }),
            RankPolicy::MinimumNorm => {
                let map = z
                    .clone()
                    .pseudo_inverse(tol)
                    .map_err(|e| Error::Numerical(e.to_string()))?;
                Ok(Self {
                    map,
                    condition: f64::INFINITY,
                    min_norm: true,
                })
            }
        }
    }

    pub fn apply(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.map * y
    }

    pub fn apply_slice(&self, y: &[f64]) -> DVector<f64> {
        self.apply(&DVector::from_column_slice(y))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.map
    }
    pub fn condition(&self) -> f64 {
        self.condition
    }
    pub fn min_norm(&self) -> bool {
        self.min_norm
    }
}

/// Columns that lie (numerically) in the span of the columns before them.
fn dependent_columns(z: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..z.ncols() {
        let mut v = z.column(j).into_owned();
        // Two passes of Gram-Schmidt keep the residual honest.
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let n = v.norm();
        if n <= tol {
            out.push(j);
        } else {
            basis.push(v / n);
        }
    }
    out
}

/// Per-period regression output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeFit {
    pub t: usize,
    pub beta: Vec<f64>,
    /// Projection of the `h'` pseudo-outcomes.
    pub proj_hp: Vec<f64>,
    /// Projection of the `h''` pseudo-outcomes.
    pub proj_hpp: Vec<f64>,
    pub condition: f64,
    pub min_norm: bool,
}

/// `beta_t = P (Y'' - Y')`, caching both projections.
pub fn fit_time_beta(
    t: usize,
    projector: &Projector,
    y_hp: &[f64],
    y_hpp: &[f64],
) -> Result<TimeFit> {
    let p = projector.map.ncols();
    if y_hp.len() != p || y_hpp.len() != p {
        return Err(Error::invalid(format!(
            "pseudo-outcome length {} / {} does not match {p} design rows",
            y_hp.len(),
            y_hpp.len()
        )));
    }
    let a = projector.apply_slice(y_hp);
    let b = projector.apply_slice(y_hpp);
    Ok(TimeFit {
        t,
        beta: (&b - &a).iter().copied().collect(),
        proj_hp: a.iter().copied().collect(),
        proj_hpp: b.iter().copied().collect(),
        condition: projector.condition,
        min_norm: projector.min_norm,
    })
}

/// Least squares of a single pseudo-effect column on `z`.
pub fn fit_contrast(z: &DMatrix<f64>, d: &[f64], policy: RankPolicy) -> Result<Vec<f64>> {
    if d.len() != z.nrows() {
        return Err(Error::invalid("response length does not match design rows"));
    }
    Ok(Projector::new(z, policy)?.apply_slice(d).iter().copied().collect())
}

/// Unweighted mean of the per-period coefficients.
pub fn average_beta(fits: &[TimeFit]) -> Result<Vec<f64>> {
    let first = fits.first().ok_or_else(|| Error::invalid("no period fits to average"))?;
    let l = first.beta.len();
    let mut sum = vec![0.0; l];
    for f in fits {
        if f.beta.len() != l {
            return Err(Error::invalid("period fits have different dimensions"));
        }
        for (s, b) in sum.iter_mut().zip(&f.beta) {
            *s += b;
        }
    }
    let n = fits.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Averaged CATE fit for one intervention pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CateFit {
    pub beta_bar: Vec<f64>,
    pub fits: Vec<TimeFit>,
    pub basis: BasisSpec,
    /// Moderator enters at `t - m + 1`.
    pub m: usize,
    pub mode: WeightingMode,
    pub interventions: (String, String),
    /// Central 95% range of the observed moderator values.
    pub support: (f64, f64),
    pub district_scale: f64,
}

impl CateFit {
    pub fn new(
        fits: Vec<TimeFit>,
        basis: BasisSpec,
        m: usize,
        mode: WeightingMode,
        interventions: (String, String),
        moderator_values: &[f64],
    ) -> Result<Self> {
        let beta_bar = average_beta(&fits)?;
        if beta_bar.len() != basis.n_columns() {
            return Err(Error::invalid("coefficient dimension does not match the basis"));
        }
        Ok(Self {
            beta_bar,
            fits,
            basis,
            m,
            mode,
            interventions,
            support: observed_support(moderator_values),
            district_scale: 1.0,
        })
    }

    pub fn with_district_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("district scale must be positive, got {scale}")));
        }
        self.district_scale = scale;
        Ok(self)
    }

    pub fn n_eff(&self) -> usize {
        self.fits.len()
    }

    pub fn min_norm(&self) -> bool {
        self.fits.iter().any(|f| f.min_norm)
    }
}

fn observed_support(values: &[f64]) -> (f64, f64) {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(|a, b| a.total_cmp(b));
    (quantile_type7(&v, 0.025), quantile_type7(&v, 0.975))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CateValue {
    pub r: f64,
    pub value: f64,
    /// `r` lies outside the central 95% of observed moderator values.
    pub extrapolated: bool,
}

/// `tau(r) = z(r)' beta_bar`, times the district scale.
pub fn evaluate_cate(fit: &CateFit, r: f64) -> CateValue {
    let value: f64 = fit
        .basis
        .row(r)
        .iter()
        .zip(&fit.beta_bar)
        .map(|(z, b)| z * b)
        .sum();
    CateValue {
        r,
        value: value * fit.district_scale,
        extrapolated: !(r >= fit.support.0 && r <= fit.support.1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisKind, ColumnFn};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fit_d(z: &DMatrix<f64>, d: &[f64]) -> Vec<f64> {
        fit_contrast(z, d, RankPolicy::Error).unwrap()
    }

    #[test]
    fn zero_response_gives_zero_beta() {
        let z = BasisSpec::natural_spline(3, 0.0, 1.0).unwrap().matrix(&[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
        assert!(fit_d(&z, &[0.0; 6]).iter().all(|&b| b == 0.0));
    }

    #[test]
    fn saturated_binary_design_gives_group_means() {
        let r = [0.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let d = [1.0, 2.0, 5.0, 7.0, 9.0, 6.0];
        let b = fit_d(&BasisSpec::binary().matrix(&r), &d);
        let mean = |g: f64| {
            let xs: Vec<f64> = r.iter().zip(&d).filter(|(ri, _)| **ri == g).map(|(_, di)| *di).collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        assert!((b[0] - mean(0.0)).abs() < 1e-12);
        assert!((b[1] - (mean(1.0) - mean(0.0))).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_design_is_transpose_product() {
        let s = 0.5f64.sqrt();
        let z = DMatrix::from_row_slice(4, 2, &[0.5, s, 0.5, -s, 0.5, 0.0, 0.5, 0.0]);
        let d = [1.0, -2.0, 3.0, 0.5];
        let b = fit_d(&z, &d);
        let expect = z.transpose() * DVector::from_column_slice(&d);
        assert!((b[0] - expect[0]).abs() < 1e-12 && (b[1] - expect[1]).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let spec = BasisSpec::new(
            BasisKind::Custom {
                columns: vec![
                    ColumnFn::Power { k: 1 },
                    ColumnFn::Power { k: 2 },
                    ColumnFn::Power { k: 1 },
                ],
            },
            true,
        )
        .unwrap();
        let z = spec.matrix(&[0.1, 0.5, 0.9, 0.3]);
        match Projector::new(&z, RankPolicy::Error) {
            Err(Error::RankDeficient { columns }) => assert_eq!(columns, vec![3]),
            other => panic!("expected rank error, got {other:?}"),
        }
        let p = Projector::new(&z, RankPolicy::MinimumNorm).unwrap();
        assert!(p.min_norm());
        // Constant moderator: slope column duplicates the intercept.
        let z = BasisSpec::binary().matrix(&[1.0, 1.0, 1.0]);
        assert!(matches!(
            Projector::new(&z, RankPolicy::Error),
            Err(Error::RankDeficient { .. })
        ));
    }

    fn tf(t: usize, beta: Vec<f64>) -> TimeFit {
        TimeFit {
            t,
            proj_hp: vec![0.0; beta.len()],
            proj_hpp: beta.clone(),
            beta,
            condition: 1.0,
            min_norm: false,
        }
    }

    #[test]
    fn averaging() {
        let one = vec![tf(3, vec![1.0, 4.0])];
        assert_eq!(average_beta(&one).unwrap(), vec![1.0, 4.0]);
        let two = vec![tf(1, vec![1.0, 0.0]), tf(2, vec![3.0, 1.0])];
        assert_eq!(average_beta(&two).unwrap(), vec![2.0, 0.5]);
        let rev: Vec<TimeFit> = two.iter().rev().cloned().collect();
        assert_eq!(average_beta(&rev).unwrap(), average_beta(&two).unwrap());
        assert!(average_beta(&[]).is_err());
    }

    fn cate(beta: Vec<f64>, basis: BasisSpec) -> CateFit {
        CateFit::new(
            vec![tf(1, beta)],
            basis,
            1,
            WeightingMode::Hajek,
            ("a".into(), "b".into()),
            &[0.0, 0.5, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn cate_evaluation() {
        let zero = cate(vec![0.0, 0.0], BasisSpec::binary());
        assert_eq!(evaluate_cate(&zero, 0.3).value, 0.0);
        let fit = cate(vec![0.4, -1.5], BasisSpec::binary());
        let diff = evaluate_cate(&fit, 1.0).value - evaluate_cate(&fit, 0.0).value;
        assert!((diff + 1.5).abs() < 1e-15);

        let spec = BasisSpec::natural_spline(4, 0.0, 1.0).unwrap();
        let beta = vec![0.1, -0.2, 0.3, 0.05, -0.4];
        let fit = cate(beta.clone(), spec);
        // Independent evaluation at the knot 0.5: d_j(0.5) uses knots 0, .25, .5, .75, 1.
        let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
        let knots = [0.0, 0.25, 0.5, 0.75, 1.0];
        let d = |j: usize| (cube(0.5 - knots[j]) - cube(0.5 - 1.0)) / (1.0 - knots[j]);
        let z = [1.0, 0.5, d(0) - d(3), d(1) - d(3), d(2) - d(3)];
        let expect: f64 = z.iter().zip(&beta).map(|(a, b)| a * b).sum();
        let got = evaluate_cate(&fit, 0.5);
        assert!((got.value - expect).abs() < 1e-14);
        assert!(!got.extrapolated);
        assert!(evaluate_cate(&fit, 1.5).extrapolated);

        let scaled = fit.clone().with_district_scale(12.0).unwrap();
        assert!((evaluate_cate(&scaled, 0.5).value - 12.0 * expect).abs() < 1e-12);
        assert!(fit.with_district_scale(0.0).is_err());
    }

    #[test]
    fn null_contrast_is_exactly_zero() {
        let z = BasisSpec::natural_spline(6, 0.0, 1.0).unwrap().matrix(
            &(0..40).map(|i| i as f64 / 39.0).collect::<Vec<_>>(),
        );
        let p = Projector::new(&z, RankPolicy::Error).unwrap();
        let y: Vec<f64> = (0..40).map(|i| (i * 7 % 5) as f64 * 1.37).collect();
        let fit = fit_time_beta(4, &p, &y, &y).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0));
        assert!(fit_time_beta(4, &p, &y[1..], &y).is_err());
    }

    proptest! {
        #[test]
        fn residual_orthogonal_and_scale_equivariant(seed in 0u64..500, k in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
            let d: Vec<f64> = (0..60).map(|_| rng.random_range(-3.0..3.0)).collect();
            let z = BasisSpec::natural_spline(5, 0.0, 1.0).unwrap().matrix(&r);
            let b = fit_d(&z, &d);
            let dv = DVector::from_column_slice(&d);
            let resid = &dv - &z * DVector::from_column_slice(&b);
            let ortho = (z.transpose() * resid).amax();
            prop_assert!(ortho <= 1e-8 * dv.norm());
            let dk: Vec<f64> = d.iter().map(|v| v * k).collect();
            let bk = fit_d(&z, &dk);
            for (x, y) in b.iter().zip(&bk) {
                prop_assert!((x * k - y).abs() <= 1e-9 * (1.0 + y.abs()));
            }
        }
    }
}
