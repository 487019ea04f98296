//! Numerical building blocks shared by the simulators and estimators.

pub mod lm;
pub mod quad;
pub mod roots;

/// Mean and unbiased sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Linear-interpolated quantile of an already sorted slice, `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Unit-peak Lorentzian with full width at half maximum `fwhm`.
#[inline]
pub fn lorentzian(x: f64, center: f64, fwhm: f64) -> f64 {
    let u = 2.0 * (x - center) / fwhm;
    1.0 / (1.0 + u * u)
}

/// Unit-peak Gaussian with standard deviation `sigma`.
#[inline]
pub fn gaussian(x: f64, center: f64, sigma: f64) -> f64 {
    let u = (x - center) / sigma;
    (-0.5 * u * u).exp()
}

/// Least-squares fit of `y = a·e^{−k t}`; returns `(a, k, σ_k)` with σ_k
/// scaled by the residual standard deviation.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> crate::Result<(f64, f64, f64)> {
    use nalgebra::DVector;

    struct Exp<'a>(&'a [f64], &'a [f64]);
    impl lm::Problem for Exp<'_> {
        fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
            DVector::from_iterator(
                self.0.len(),
                self.0.iter().zip(self.1).map(|(t, y)| p[0] * (-p[1] * t).exp() - y),
            )
        }
        fn jacobian(&self, p: &DVector<f64>) -> nalgebra::DMatrix<f64> {
            let mut j = nalgebra::DMatrix::zeros(self.0.len(), 2);
            for (i, t) in self.0.iter().enumerate() {
                let e = (-p[1] * t).exp();
                j[(i, 0)] = e;
                j[(i, 1)] = -p[0] * t * e;
            }
            j
        }
    }

    if t.len() != y.len() || t.len() < 3 {
        return Err(crate::Error::InsufficientData(
            "exponential fit needs >= 3 points".into(),
        ));
    }
    // Log-linear initial guess from the positive part of the curve.
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, y)| **y > 0.0)
        .map(|(t, y)| (*t, y.ln()))
        .collect();
    let (a0, k0) = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        ((my - slope * mt).exp(), -slope)
    } else {
        (y[0], 0.0)
    };
    let rep = lm::minimize(&Exp(t, y), DVector::from_vec(vec![a0, k0]), lm::LmOptions::default())?;
    let s2 = rep.reduced_chi_squared();
    let err = rep.std_errors()[1] * if s2.is_finite() { s2.sqrt() } else { 0.0 };
    Ok((rep.params[0], rep.params[1], err))
}
