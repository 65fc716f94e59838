//! Small dense linear algebra and least-squares solvers.
//!
//! Everything here operates on [`Matrix`] values of modest size (the filter
//! engine never goes beyond 6x6), so the routines favour robustness over
//! asymptotic efficiency.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense row/column matrix of reals.
pub type Matrix = DMatrix<f64>;

/// Upper bound on the matrix dimension accepted by [`mat_exp`].
pub const MAX_DIM: usize = 16;

// Degree-13 Padé coefficients and the matching norm bound (Higham, 2005).
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371_920_351_148_152;

fn check_square(m: &Matrix, what: &str) -> Result<usize> {
    if !m.is_square() {
        return Err(Error::invalid(format!(
            "{what}: expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

/// Matrix exponential by scaling and squaring around a degree-13 Padé
/// approximant.
pub fn mat_exp(m: &Matrix) -> Result<Matrix> {
    let n = check_square(m, "mat_exp")?;
    if n == 0 || n > MAX_DIM {
        return Err(Error::invalid(format!(
            "mat_exp: dimension {n} outside 1..={MAX_DIM}"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("mat_exp: non-finite entry"));
    }

    let norm1 = one_norm(m);
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);

    let ident = Matrix::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &PADE13;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q
        .lu()
        .solve(&p)
        .ok_or_else(|| Error::invalid("mat_exp: singular Padé denominator"))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest eigenvalue magnitude.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    check_square(m, "spectral_radius")?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    Ok(m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// True iff every eigenvalue lies strictly inside the circle of radius
/// `1 - margin`.
pub fn is_schur_stable(m: &Matrix, margin: f64) -> Result<bool> {
    Ok(spectral_radius(m)? < 1.0 - margin)
}

/// Ordinary least-squares line `y = slope * x + intercept`.
pub fn ols_affine(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "ols_affine: length mismatch {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("ols_affine: need at least two samples"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        sxx += dx * dx;
        sxy += dx * (y - my);
    }
    if !(sxx > f64::EPSILON * xs.iter().map(|x| x * x).sum::<f64>()) {
        return Err(Error::SingularFit("predictor has zero variance".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Levenberg-Marquardt settings.
///
/// Damping is multiplied by 10 after a rejected step and divided by 10 after
/// an accepted one. A step is accepted when the ratio of actual to predicted
/// reduction exceeds `acceptance_ratio`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustRegionConfig {
    pub max_iterations: usize,
    /// Relative change in the sum of squared residuals that counts as converged.
    pub tolerance: f64,
    /// Absolute sum of squared residuals below which the fit is considered exact.
    pub absolute_tolerance: f64,
    pub initial_damping: f64,
    pub acceptance_ratio: f64,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            tolerance: 1e-12,
            absolute_tolerance: 1e-28,
            initial_damping: 1e-3,
            acceptance_ratio: 1e-4,
        }
    }
}

impl TrustRegionConfig {
    fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::invalid("max_iterations must be >= 1"));
        }
        if !(self.tolerance > 0.0) || !(self.initial_damping > 0.0) {
            return Err(Error::invalid(
                "tolerance and initial_damping must be positive",
            ));
        }
        Ok(())
    }
}

/// A nonlinear least-squares problem.
pub trait LeastSquaresProblem {
    fn residuals(&self, params: &[f64]) -> DVector<f64>;

    /// Analytic Jacobian (rows: residuals, columns: parameters). Returning
    /// `None` selects central finite differences.
    fn jacobian(&self, _params: &[f64]) -> Option<Matrix> {
        None
    }
}

/// Central-difference Jacobian with relative step `1e-6`.
pub fn finite_difference_jacobian<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    params: &[f64],
) -> Matrix {
    let m = problem.residuals(params).len();
    let mut jac = Matrix::zeros(m, params.len());
    let mut p = params.to_vec();
    for j in 0..params.len() {
        let h = 1e-6 * params[j].abs().max(1.0);
        p[j] = params[j] + h;
        let fwd = problem.residuals(&p);
        p[j] = params[j] - h;
        let bwd = problem.residuals(&p);
        p[j] = params[j];
        jac.set_column(j, &((fwd - bwd) / (2.0 * h)));
    }
    jac
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub initial_ssr: f64,
    pub ssr: f64,
    /// Linear solves performed, accepted or not.
    pub iterations: usize,
    pub converged: bool,
    /// Sum of squared residuals after each accepted step, starting with the
    /// initial value.
    pub ssr_history: Vec<f64>,
}

fn ssr(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Levenberg-Marquardt with gain-ratio step acceptance.
pub fn lm_fit<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    init: &[f64],
    cfg: &TrustRegionConfig,
) -> Result<LmReport> {
    cfg.validate()?;
    let mut params = init.to_vec();
    let mut r = problem.residuals(&params);
    if r.len() < params.len() {
        return Err(Error::invalid(format!(
            "lm_fit: {} residuals for {} parameters",
            r.len(),
            params.len()
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidStart("non-finite residuals at init".into()));
    }

    let mut cost = ssr(&r);
    let mut report = LmReport {
        params: params.clone(),
        initial_ssr: cost,
        ssr: cost,
        iterations: 0,
        converged: cost <= cfg.absolute_tolerance,
        ssr_history: vec![cost],
    };
    if report.converged {
        return Ok(report);
    }

    let n = params.len();
    let mut damping = cfg.initial_damping;
    let mut jac = problem
        .jacobian(&params)
        .unwrap_or_else(|| finite_difference_jacobian(problem, &params));

    while report.iterations < cfg.max_iterations {
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let scale: Vec<f64> = (0..n).map(|i| jtj[(i, i)].max(1e-12)).collect();

        let mut lhs = jtj.clone();
        for i in 0..n {
            lhs[(i, i)] += damping * scale[i];
        }
        report.iterations += 1;

        let step = match lhs.clone().cholesky() {
            Some(ch) => -ch.solve(&grad),
            None => {
                damping *= 10.0;
                continue;
            }
        };

        let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(p, d)| p + d).collect();
        let r_trial = problem.residuals(&trial);
        let cost_trial = ssr(&r_trial);

        // Predicted reduction of the quadratic model, in SSR units.
        let mut predicted = 0.0;
        for i in 0..n {
            predicted += step[i] * (damping * scale[i] * step[i] - grad[i]);
        }
        let actual = cost - cost_trial;
        let ratio = if predicted > 0.0 { actual / predicted } else { -1.0 };

        if cost_trial.is_finite() && actual > 0.0 && ratio > cfg.acceptance_ratio {
            params = trial;
            r = r_trial;
            let prev = cost;
            cost = cost_trial;
            report.ssr_history.push(cost);
            damping = (damping / 10.0).max(1e-15);
            if actual <= cfg.tolerance * prev || cost <= cfg.absolute_tolerance {
                report.converged = true;
                break;
            }
            jac = problem
                .jacobian(&params)
                .unwrap_or_else(|| finite_difference_jacobian(problem, &params));
        } else {
            damping *= 10.0;
            if damping > 1e16 {
                // No descent direction left at machine precision.
                report.converged = true;
                break;
            }
        }
    }

    report.params = params;
    report.ssr = cost;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_rel(a: &Matrix, b: &Matrix) -> f64 {
        (a - b).amax() / b.amax().max(1e-300)
    }

    fn taylor_exp(m: &Matrix, terms: usize) -> Matrix {
        let n = m.nrows();
        let mut sum = Matrix::identity(n, n);
        let mut term = Matrix::identity(n, n);
        for k in 1..terms {
            term = &term * m / k as f64;
            sum += &term;
        }
        sum
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let e = mat_exp(&Matrix::zeros(4, 4)).unwrap();
        assert_eq!(e, Matrix::identity(4, 4));
    }

    #[test]
    fn exp_of_nilpotent() {
        let m = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = mat_exp(&m).unwrap();
        let want = Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!((e - want).amax() < 1e-15);
    }

    #[test]
    fn exp_matches_taylor_series() {
        let vals: Vec<f64> = (0..36).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let mut m = Matrix::from_row_slice(6, 6, &vals);
        m /= m.norm() * 1.05; // Frobenius bounds the spectral norm
        let e = mat_exp(&m).unwrap();
        assert!(max_rel(&e, &taylor_exp(&m, 50)) < 1e-12);
    }

    #[test]
    fn exp_rejects_bad_input() {
        assert!(mat_exp(&Matrix::zeros(2, 3)).is_err());
        let mut m = Matrix::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(mat_exp(&m).is_err());
    }

    #[test]
    fn stiff_exponential_scalar() {
        let m = Matrix::from_element(1, 1, -300.0);
        let e = mat_exp(&m).unwrap();
        assert!((e[(0, 0)] / (-300f64).exp() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schur_examples() {
        assert!(is_schur_stable(&(Matrix::identity(4, 4) * 0.5), 0.0).unwrap());
        let d = Matrix::from_diagonal(&DVector::from_vec(vec![1.1, 0.2]));
        assert!(!is_schur_stable(&d, 0.0).unwrap());
        assert!(is_schur_stable(&Matrix::zeros(2, 3), 0.0).is_err());
    }

    #[test]
    fn ols_examples() {
        assert_eq!(ols_affine(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), (1.0, 0.0));
        let xs = [0.5, 1.0, -2.0, 4.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 2.0).collect();
        let (s, i) = ols_affine(&xs, &ys).unwrap();
        assert!((s - 3.0).abs() < 1e-14 && (i - 2.0).abs() < 1e-14);
        assert!(matches!(
            ols_affine(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(Error::SingularFit(_))
        ));
        assert!(ols_affine(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn ols_matches_normal_equations() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() * 3.0 + i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 1.7 * x - 0.4 + 0.3 * ((i * 7919 % 13) as f64 / 13.0 - 0.5))
            .collect();
        let design = Matrix::from_fn(xs.len(), 2, |r, c| if c == 0 { xs[r] } else { 1.0 });
        let y = DVector::from_vec(ys.clone());
        let beta = (design.transpose() * &design)
            .lu()
            .solve(&(design.transpose() * y))
            .unwrap();
        let (s, i) = ols_affine(&xs, &ys).unwrap();
        assert!((s - beta[0]).abs() < 1e-10 && (i - beta[1]).abs() < 1e-10);
    }

    struct Shift;
    impl LeastSquaresProblem for Shift {
        fn residuals(&self, p: &[f64]) -> DVector<f64> {
            DVector::from_vec(vec![p[0] - 5.0])
        }
    }

    #[test]
    fn lm_scalar_shift() {
        let rep = lm_fit(&Shift, &[0.0], &TrustRegionConfig::default()).unwrap();
        assert!((rep.params[0] - 5.0).abs() < 1e-9);
    }

    struct Line<'a>(&'a [f64], &'a [f64]);
    impl LeastSquaresProblem for Line<'_> {
        fn residuals(&self, p: &[f64]) -> DVector<f64> {
            DVector::from_iterator(self.0.len(), self.0.iter().zip(self.1).map(|(x, y)| p[0] * x + p[1] - y))
        }
        fn jacobian(&self, _p: &[f64]) -> Option<Matrix> {
            Some(Matrix::from_fn(self.0.len(), 2, |r, c| if c == 0 { self.0[r] } else { 1.0 }))
        }
    }

    #[test]
    fn lm_line_matches_ols() {
        let xs = [0.0, 0.5, 1.5, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| -0.75 * x + 4.25).collect();
        let rep = lm_fit(&Line(&xs, &ys), &[0.0, 0.0], &TrustRegionConfig::default()).unwrap();
        let (s, i) = ols_affine(&xs, &ys).unwrap();
        assert!((rep.params[0] - s).abs() < 1e-10 && (rep.params[1] - i).abs() < 1e-10);
    }

    struct Decay {
        t: Vec<f64>,
        y: Vec<f64>,
    }
    impl LeastSquaresProblem for Decay {
        fn residuals(&self, p: &[f64]) -> DVector<f64> {
            DVector::from_iterator(
                self.t.len(),
                self.t.iter().zip(&self.y).map(|(t, y)| p[0] * (-p[1] * t).exp() - y),
            )
        }
    }

    #[test]
    fn lm_exponential_decay_with_finite_differences() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 / 49.0).collect();
        let y = t.iter().map(|t| 2.0 * (-3.0 * t).exp()).collect();
        let rep = lm_fit(&Decay { t, y }, &[1.0, 1.0], &TrustRegionConfig::default()).unwrap();
        assert!((rep.params[0] - 2.0).abs() < 1e-6, "{:?}", rep);
        assert!((rep.params[1] - 3.0).abs() < 1e-6, "{:?}", rep);
    }

    #[test]
    fn lm_rejects_non_finite_start() {
        let rep = lm_fit(&Decay { t: vec![0.0, 1.0], y: vec![f64::NAN, 0.5] }, &[1.0, 1.0], &TrustRegionConfig::default());
        assert!(matches!(rep, Err(Error::InvalidStart(_))));
    }

    proptest! {
        #[test]
        fn exp_inverse_identity(vals in prop::collection::vec(-1.0f64..1.0, 16), scale in 0.1f64..2.0) {
            let mut m = Matrix::from_row_slice(4, 4, &vals);
            let f = m.norm();
            if f > 0.0 { m *= scale / f; }
            let prod = mat_exp(&m).unwrap() * mat_exp(&(-&m)).unwrap();
            prop_assert!((prod - Matrix::identity(4, 4)).amax() < 1e-10);
        }

        #[test]
        fn exp_semigroup(vals in prop::collection::vec(-1.0f64..1.0, 9), scale in 0.1f64..8.0) {
            let mut m = Matrix::from_row_slice(3, 3, &vals);
            let f = m.norm();
            if f > 0.0 { m *= scale / f; }
            let full = mat_exp(&m).unwrap();
            let half = mat_exp(&(&m / 2.0)).unwrap();
            prop_assert!(max_rel(&(&half * &half), &full) < 1e-10);
        }

        #[test]
        fn ols_residuals_orthogonal(pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40)) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            if let Ok((s, i)) = ols_affine(&xs, &ys) {
                let res: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| s * x + i - y).collect();
                let dot_x: f64 = res.iter().zip(&xs).map(|(r, x)| r * x).sum();
                let dot_1: f64 = res.iter().sum();
                prop_assert!(dot_x.abs() < 1e-9 && dot_1.abs() < 1e-9);
            }
        }

        #[test]
        fn lm_accepted_steps_never_increase_ssr(a in 0.5f64..4.0, k in 0.5f64..5.0, a0 in 0.2f64..3.0, k0 in 0.2f64..3.0) {
            let t: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
            let y = t.iter().map(|t| a * (-k * t).exp()).collect();
            let rep = lm_fit(&Decay { t, y }, &[a0, k0], &TrustRegionConfig::default()).unwrap();
            prop_assert!(rep.ssr_history.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(rep.ssr <= rep.initial_ssr);
        }
    }
}
