//! Discrete spectral states from peak traces, and the σ_f noise metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::PeakTrace;
use crate::numerics::{mean_std, median, quantile_sorted};

/// Minimum expected occupancy (windows) for a mixture component to count.
pub const MIN_WINDOWS_PER_STATE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub n_states: usize,
    /// Ascending state centers, MHz.
    pub means: Vec<f64>,
    pub weights: Vec<f64>,
    /// Standard deviations, MHz.
    pub widths: Vec<f64>,
    /// Most probable state per window.
    pub assignment: Vec<usize>,
    /// `splittings[i][j] = means[j] − means[i]`.
    pub splittings: Vec<Vec<f64>>,
    pub splitting_uncertainties: Vec<Vec<f64>>,
    /// BIC per candidate state count, index 0 ↔ one state.
    pub bic: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Mixture {
    means: Vec<f64>,
    vars: Vec<f64>,
    weights: Vec<f64>,
    log_likelihood: f64,
}

fn log_normal(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((x - m).powi(2) / v + (2.0 * std::f64::consts::PI * v).ln())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn em(x: &[f64], mut means: Vec<f64>, var_floor: f64) -> Mixture {
    let k = means.len();
    let n = x.len() as f64;
    let (_, sd) = mean_std(x);
    let mut vars = vec![(sd * sd / (k * k) as f64).max(var_floor); k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut resp = vec![vec![0.0; k]; x.len()];
    let mut last = f64::NEG_INFINITY;
    let mut ll = last;
    for _ in 0..500 {
        ll = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            let lp: Vec<f64> = (0..k)
                .map(|j| weights[j].ln() + log_normal(xi, means[j], vars[j]))
                .collect();
            let norm = log_sum_exp(&lp);
            ll += norm;
            for j in 0..k {
                resp[i][j] = (lp[j] - norm).exp();
            }
        }
        for j in 0..k {
            let nj: f64 = resp.iter().map(|r| r[j]).sum();
            if nj < 1e-12 {
                weights[j] = 1e-300;
                continue;
            }
            let m = resp.iter().zip(x).map(|(r, xi)| r[j] * xi).sum::<f64>() / nj;
            let v = resp.iter().zip(x).map(|(r, xi)| r[j] * (xi - m).powi(2)).sum::<f64>() / nj;
            means[j] = m;
            vars[j] = v.max(var_floor);
            weights[j] = nj / n;
        }
        if (ll - last).abs() <= 1e-10 * ll.abs().max(1.0) {
            break;
        }
        last = ll;
    }
    Mixture {
        means,
        vars,
        weights,
        log_likelihood: ll,
    }
}

/// Deterministic starting points: sample quantiles, and cuts at the k−1
/// widest gaps of the sorted data.
fn initializations(sorted: &[f64], k: usize) -> Vec<Vec<f64>> {
    let quant = (0..k)
        .map(|j| quantile_sorted(sorted, (j as f64 + 0.5) / k as f64))
        .collect();
    let mut gaps: Vec<(f64, usize)> = sorted
        .windows(2)
        .enumerate()
        .map(|(i, w)| (w[1] - w[0], i + 1))
        .collect();
    gaps.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut cuts: Vec<usize> = gaps.iter().take(k - 1).map(|g| g.1).collect();
    cuts.sort_unstable();
    let mut bounds = vec![0];
    bounds.extend(cuts);
    bounds.push(sorted.len());
    let gap = bounds.windows(2).map(|b| median(&sorted[b[0]..b[1]])).collect();
    vec![quant, gap]
}

/// Gaussian-mixture state detection with BIC model selection.
pub fn detect_states(trace: &PeakTrace, max_states: usize) -> Result<StateModel> {
    let x = &trace.centers;
    let n = x.len();
    if n < 50 {
        return Err(Error::InsufficientData(format!(
            "state detection needs >= 50 windows, got {n}"
        )));
    }
    if max_states == 0 {
        return Err(Error::InvalidParameter("max_states must be >= 1".into()));
    }
    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let floor_sd = 0.25 * median(&trace.center_uncertainties).max(0.0);
    let (_, sd) = mean_std(x);
    let var_floor = (floor_sd * floor_sd).max(1e-12 * (sd * sd).max(1e-12));

    let mut best: Option<(f64, Mixture)> = None;
    let mut bics = Vec::new();
    for k in 1..=max_states.min(n / 2) {
        let candidate = initializations(&sorted, k)
            .into_iter()
            .map(|init| em(x, init, var_floor))
            .max_by(|a, b| a.log_likelihood.total_cmp(&b.log_likelihood))
            .expect("two initializations");
        let n_params = (3 * k - 1) as f64;
        let bic = -2.0 * candidate.log_likelihood + n_params * (n as f64).ln();
        bics.push(bic);
        let degenerate = candidate.weights.iter().any(|w| w * (n as f64) < MIN_WINDOWS_PER_STATE);
        if degenerate {
            continue;
        }
        if best.as_ref().is_none_or(|(b, _)| bic < *b) {
            best = Some((bic, candidate));
        }
    }
    let (_, mix) = best.expect("one-state model is never degenerate");
    let k = mix.means.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| mix.means[a].total_cmp(&mix.means[b]));
    let means: Vec<f64> = order.iter().map(|&j| mix.means[j]).collect();
    let vars: Vec<f64> = order.iter().map(|&j| mix.vars[j]).collect();
    let weights: Vec<f64> = order.iter().map(|&j| mix.weights[j]).collect();
    let assignment = x
        .iter()
        .map(|&xi| {
            (0..k)
                .max_by(|&a, &b| {
                    let la = weights[a].ln() + log_normal(xi, means[a], vars[a]);
                    let lb = weights[b].ln() + log_normal(xi, means[b], vars[b]);
                    la.total_cmp(&lb)
                })
                .expect("k >= 1")
        })
        .collect();
    let sem: Vec<f64> = (0..k).map(|j| vars[j] / (weights[j] * n as f64)).collect();
    let splittings = (0..k).map(|i| (0..k).map(|j| means[j] - means[i]).collect()).collect();
    let splitting_uncertainties = (0..k)
        .map(|i| (0..k).map(|j| (sem[i] + sem[j]).sqrt()).collect())
        .collect();
    Ok(StateModel {
        n_states: k,
        means,
        weights,
        widths: vars.iter().map(|v| v.sqrt()).collect(),
        assignment,
        splittings,
        splitting_uncertainties,
        bic: bics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaF {
    /// Sample standard deviation of the tracked centers, MHz.
    pub sigma_f: f64,
    /// Median per-window center uncertainty, MHz.
    pub shot_noise_floor: f64,
    pub windows: usize,
}

pub fn sigma_f(trace: &PeakTrace) -> Result<SigmaF> {
    if trace.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "σ_f needs >= 10 windows, got {}",
            trace.len()
        )));
    }
    let (_, s) = mean_std(&trace.centers);
    let mut u = trace.center_uncertainties.clone();
    u.sort_by(f64::total_cmp);
    let floor = if u.len() % 2 == 1 {
        u[u.len() / 2]
    } else {
        0.5 * (u[u.len() / 2 - 1] + u[u.len() / 2])
    };
    Ok(SigmaF {
        sigma_f: s,
        shot_noise_floor: floor,
        windows: trace.len(),
    })
}
