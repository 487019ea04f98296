//! Lorentzian dip fitting of CW-ODMR records and peak tracing across windows.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::lm::{self, LmOptions, Problem};
use crate::numerics::{lorentzian, quantile_sorted};
use crate::protocols::OdmrRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorentzFit {
    /// Off-resonant counts per bin.
    pub base_counts: f64,
    /// Dip parameters sorted by center, MHz / MHz / dimensionless.
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub contrasts: Vec<f64>,
    pub center_errors: Vec<f64>,
    /// Parameter order `[B, (center, width, contrast) per dip]`.
    pub covariance: Vec<Vec<f64>>,
    pub reduced_chi_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum DipFit {
    Fitted(LorentzFit),
    /// Estimated depth below three times the shot-noise floor.
    NoDip {
        depth: f64,
        noise_floor: f64,
    },
}

impl DipFit {
    pub fn fitted(&self) -> Option<&LorentzFit> {
        match self {
            DipFit::Fitted(f) => Some(f),
            DipFit::NoDip { .. } => None,
        }
    }
}

struct DipModel<'a> {
    f: &'a [f64],
    y: &'a [f64],
    sigma: Vec<f64>,
    n: usize,
    f_span: (f64, f64),
}

impl DipModel<'_> {
    fn model(&self, p: &DVector<f64>, f: f64) -> f64 {
        let mut rel = 1.0;
        for k in 0..self.n {
            rel -= p[3 + 3 * k] * lorentzian(f, p[1 + 3 * k], p[2 + 3 * k]);
        }
        p[0] * rel
    }
}

impl Problem for DipModel<'_> {
    fn residuals(&self, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.f.len(),
            self.f
                .iter()
                .zip(self.y)
                .zip(&self.sigma)
                .map(|((&f, &y), s)| (self.model(p, f) - y) / s),
        )
    }

    fn jacobian(&self, p: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.f.len(), p.len());
        for (i, (&f, s)) in self.f.iter().zip(&self.sigma).enumerate() {
            let mut rel = 1.0;
            for k in 0..self.n {
                let (x0, w, c) = (p[1 + 3 * k], p[2 + 3 * k], p[3 + 3 * k]);
                let u = 2.0 * (f - x0) / w;
                let l = 1.0 / (1.0 + u * u);
                rel -= c * l;
                // dL/du = −2u L²
                let dl_du = -2.0 * u * l * l;
                j[(i, 1 + 3 * k)] = -p[0] * c * dl_du * (-2.0 / w) / s;
                j[(i, 2 + 3 * k)] = -p[0] * c * dl_du * (-u / w) / s;
                j[(i, 3 + 3 * k)] = -p[0] * l / s;
            }
            j[(i, 0)] = rel / s;
        }
        j
    }

    fn project(&self, p: &mut DVector<f64>) {
        let span = self.f_span.1 - self.f_span.0;
        p[0] = p[0].max(1e-12);
        for k in 0..self.n {
            p[1 + 3 * k] = p[1 + 3 * k].clamp(self.f_span.0 - span, self.f_span.1 + span);
            p[2 + 3 * k] = p[2 + 3 * k].abs().clamp(1e-6 * span, 10.0 * span);
            p[3 + 3 * k] = p[3 + 3 * k].clamp(0.0, 0.999);
        }
    }
}

/// Damped least-squares fit of `n_dips` Lorentzian dips with Poisson weights.
pub fn fit_lorentzian(record: &OdmrRecord, n_dips: usize) -> Result<DipFit> {
    let f = &record.scan_frequencies;
    let n_par = 1 + 3 * n_dips;
    if n_dips == 0 {
        return Err(Error::InvalidParameter("n_dips must be >= 1".into()));
    }
    if f.len() < 5 * n_par || record.counts.len() != f.len() {
        return Err(Error::InsufficientData(format!(
            "{} points cannot constrain {n_par} parameters (need {})",
            f.len(),
            5 * n_par
        )));
    }
    let y: Vec<f64> = record.counts.iter().map(|&c| c as f64).collect();
    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let base0 = quantile_sorted(&sorted, 0.9);
    if !(base0 > 0.0) {
        return Ok(DipFit::NoDip {
            depth: 0.0,
            noise_floor: f64::INFINITY,
        });
    }
    let noise_floor = 1.0 / base0.sqrt();
    let step = (f[f.len() - 1] - f[0]) / (f.len() - 1) as f64;
    let span = (f[0], f[f.len() - 1]);

    // Greedy initialization: place each dip at the deepest remaining deficit
    // and pick its width/contrast from a coarse grid by linear least squares.
    let mut init = vec![base0];
    let mut rel_model = vec![1.0; f.len()];
    let mut first_depth = 0.0;
    for k in 0..n_dips {
        let deficit: Vec<f64> = (0..f.len())
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(f.len() - 1);
                let avg = (lo..=hi).map(|j| base0 * rel_model[j] - y[j]).sum::<f64>() / (hi - lo + 1) as f64;
                avg / base0
            })
            .collect();
        let (imax, depth) = deficit
            .iter()
            .cloned()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty");
        if k == 0 {
            first_depth = depth;
            if depth < 3.0 * noise_floor {
                return Ok(DipFit::NoDip { depth, noise_floor });
            }
        }
        let x0 = f[imax];
        let mut best = (f64::INFINITY, 2.0 * step, depth.max(1e-3));
        let mut w = 2.0 * step;
        while w < 0.5 * (span.1 - span.0) {
            let l: Vec<f64> = f.iter().map(|&fi| base0 * lorentzian(fi, x0, w)).collect();
            let r: Vec<f64> = (0..f.len()).map(|i| base0 * rel_model[i] - y[i]).collect();
            let ll: f64 = l.iter().map(|v| v * v).sum();
            let c = (l.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / ll).clamp(0.0, 0.999);
            let sse: f64 = l.iter().zip(&r).map(|(a, b)| (c * a - b).powi(2)).sum();
            if sse < best.0 {
                best = (sse, w, c);
            }
            w *= 1.25;
        }
        init.extend([x0, best.1, best.2]);
        for (i, &fi) in f.iter().enumerate() {
            rel_model[i] -= best.2 * lorentzian(fi, x0, best.1);
        }
    }

    let problem = DipModel {
        f,
        y: &y,
        sigma: y.iter().map(|&v| v.max(1.0).sqrt()).collect(),
        n: n_dips,
        f_span: span,
    };
    let rep = lm::minimize(&problem, DVector::from_vec(init), LmOptions::default())?;
    let cov = rep.covariance();
    let p = &rep.params;
    let mut dips: Vec<(f64, f64, f64, f64)> = (0..n_dips)
        .map(|k| {
            (
                p[1 + 3 * k],
                p[2 + 3 * k],
                p[3 + 3 * k],
                cov[(1 + 3 * k, 1 + 3 * k)].max(0.0).sqrt(),
            )
        })
        .collect();
    // A dip must be resolved by the scan and its contrast significant at 3σ.
    let significant = (0..n_dips).any(|k| {
        let c = p[3 + 3 * k];
        c >= 3.0 * cov[(3 + 3 * k, 3 + 3 * k)].max(0.0).sqrt() && p[2 + 3 * k] >= step
    });
    if !significant {
        return Ok(DipFit::NoDip {
            depth: first_depth,
            noise_floor,
        });
    }
    dips.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(DipFit::Fitted(LorentzFit {
        base_counts: p[0],
        centers: dips.iter().map(|d| d.0).collect(),
        widths: dips.iter().map(|d| d.1).collect(),
        contrasts: dips.iter().map(|d| d.2).collect(),
        center_errors: dips.iter().map(|d| d.3).collect(),
        covariance: (0..cov.nrows()).map(|i| cov.row(i).iter().copied().collect()).collect(),
        reduced_chi_squared: rep.reduced_chi_squared(),
    }))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PeakTrace {
    /// Window midpoints, s.
    pub window_times: Vec<f64>,
    pub centers: Vec<f64>,
    pub center_uncertainties: Vec<f64>,
    pub fit_quality: Vec<f64>,
    /// Windows without a usable fit.
    pub dropped: usize,
}

impl PeakTrace {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Fit every record and follow dip number `dip` (ascending in frequency).
/// Windows whose fit fails or places the dip outside the scan are dropped.
pub fn peak_trace(records: &[OdmrRecord], n_dips: usize, dip: usize) -> Result<PeakTrace> {
    if dip >= n_dips {
        return Err(Error::InvalidParameter(format!(
            "dip index {dip} out of range for {n_dips} dips"
        )));
    }
    let fits: Vec<Option<(f64, f64, f64, f64)>> = records
        .par_iter()
        .map(|r| {
            let mid = 0.5 * (r.window_start + r.window_end);
            let (lo, hi) = scan_bounds(&r.scan_frequencies);
            match fit_lorentzian(r, n_dips) {
                Ok(DipFit::Fitted(fit)) if (lo..=hi).contains(&fit.centers[dip]) => {
                    Some((mid, fit.centers[dip], fit.center_errors[dip], fit.reduced_chi_squared))
                }
                _ => None,
            }
        })
        .collect();
    let mut trace = PeakTrace::default();
    for f in fits {
        match f {
            Some((t, c, e, q)) if e > 0.0 && e.is_finite() => {
                trace.window_times.push(t);
                trace.centers.push(c);
                trace.center_uncertainties.push(e);
                trace.fit_quality.push(q);
            }
            _ => trace.dropped += 1,
        }
    }
    Ok(trace)
}

fn scan_bounds(f: &[f64]) -> (f64, f64) {
    f.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{cw_spectrum, OdmrConfig};
    use crate::spin_model::{FieldState, SensorParams};

    fn noiseless(cfg: &OdmrConfig, centers: &[f64], dwell_counts: f64) -> OdmrRecord {
        let counts = cfg
            .scan_frequencies
            .iter()
            .map(|&f| (dwell_counts * cfg.relative_rate(f, centers)).round() as u64)
            .collect();
        OdmrRecord {
            scan_frequencies: cfg.scan_frequencies.clone(),
            window_start: 0.0,
            window_end: 1.0,
            counts,
            contrast: cfg.contrast,
            linewidth: cfg.linewidth,
            base_rate: cfg.base_rate,
        }
    }

    #[test]
    fn noiseless_single_dip_center() {
        let cfg = OdmrConfig::linear_scan(1360.0, 1392.0, 161, 0.1, 5.0, 1.0);
        let rec = noiseless(&cfg, &[1376.0], 1e9);
        let fit = fit_lorentzian(&rec, 1).unwrap();
        let fit = fit.fitted().unwrap();
        assert!((fit.centers[0] - 1376.0).abs() < 1e-3, "{}", fit.centers[0]);
        assert!((fit.widths[0] - 5.0).abs() < 1e-3);
        assert!((fit.contrasts[0] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn flat_spectrum_has_no_dip() {
        let cfg = OdmrConfig::linear_scan(1360.0, 1392.0, 161, 0.0, 5.0, 2.5e5);
        let rec = cw_spectrum(&SensorParams::default(), &FieldState::default(), &cfg, 16.1, 3).unwrap();
        assert!(matches!(fit_lorentzian(&rec, 1).unwrap(), DipFit::NoDip { .. }));
    }

    #[test]
    fn two_dips_at_a_million_counts_per_bin() {
        let p = SensorParams::default();
        let cfg = OdmrConfig::linear_scan(1320.0, 1400.0, 201, 0.1, 5.0, 2.5e5);
        // 1e6 off-resonant counts per bin: 4 s dwell at 250 kcps.
        let mut worst = 0.0f64;
        for seed in 0..20 {
            let rec = cw_spectrum(&p, &FieldState::default(), &cfg, 4.0 * 201.0, seed).unwrap();
            let fit = fit_lorentzian(&rec, 2).unwrap();
            let fit = fit.fitted().unwrap();
            worst = worst
                .max((fit.centers[0] - 1344.0).abs())
                .max((fit.centers[1] - 1376.0).abs());
            // Reported errors track the scatter.
            assert!(
                fit.center_errors[0] > 0.002 && fit.center_errors[0] < 0.02,
                "{}",
                fit.center_errors[0]
            );
        }
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn reported_errors_match_scatter() {
        let p = SensorParams::default();
        let cfg = OdmrConfig::linear_scan(1320.0, 1400.0, 201, 0.1, 5.0, 2.5e5);
        let (mut sq, mut err) = (0.0, 0.0);
        let n = 40;
        for seed in 0..n {
            let rec = cw_spectrum(&p, &FieldState::default(), &cfg, 4.0, seed).unwrap();
            let fit = fit_lorentzian(&rec, 2).unwrap();
            let fit = fit.fitted().unwrap();
            sq += (fit.centers[1] - 1376.0).powi(2);
            err += fit.center_errors[1];
        }
        let ratio = (sq / n as f64).sqrt() / (err / n as f64);
        assert!((0.7..1.4).contains(&ratio), "{ratio}");
    }

    #[test]
    fn too_few_points_rejected() {
        let cfg = OdmrConfig::linear_scan(1360.0, 1392.0, 9, 0.1, 5.0, 1.0);
        let rec = noiseless(&cfg, &[1376.0], 1e6);
        assert!(matches!(fit_lorentzian(&rec, 2), Err(Error::InsufficientData(_))));
    }
}
