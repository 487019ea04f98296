//! Inverse-distance-weighted maps of σ_f across sensor positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IDW_POWER: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub nx: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub ny: usize,
}

impl GridSpec {
    fn axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    pub fn xs(&self) -> Vec<f64> {
        Self::axis(self.x_min, self.x_max, self.nx)
    }

    pub fn ys(&self) -> Vec<f64> {
        Self::axis(self.y_min, self.y_max, self.ny)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMap {
    /// Sensor coordinates, μm.
    pub sensor_positions: Vec<[f64; 2]>,
    pub sigma_f_values: Vec<f64>,
    pub grid_x: Vec<f64>,
    pub grid_y: Vec<f64>,
    /// `grid[iy][ix]`, MHz.
    pub grid: Vec<Vec<f64>>,
}

/// IDW estimate at `q`; returns the sample value exactly at a sample site.
pub fn idw_at(positions: &[[f64; 2]], values: &[f64], q: [f64; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, &v) in positions.iter().zip(values) {
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if d2 == 0.0 {
            return v;
        }
        let w = d2.powf(-0.5 * IDW_POWER);
        num += w * v;
        den += w;
    }
    num / den
}

pub fn interpolate_noise_map(positions: &[[f64; 2]], values: &[f64], grid: &GridSpec) -> Result<NoiseMap> {
    if positions.len() != values.len() {
        return Err(Error::InvalidParameter("positions and values differ in length".into()));
    }
    if positions.iter().flatten().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "sensor positions and values must be finite".into(),
        ));
    }
    if grid.nx == 0 || grid.ny == 0 || grid.x_max < grid.x_min || grid.y_max < grid.y_min {
        return Err(Error::InvalidParameter(
            "grid must have >= 1 point per axis and ordered bounds".into(),
        ));
    }
    // Merge duplicates; conflicting values at one site are an error.
    let mut pos: Vec<[f64; 2]> = Vec::new();
    let mut val: Vec<f64> = Vec::new();
    for (p, &v) in positions.iter().zip(values) {
        match pos.iter().position(|q| q == p) {
            Some(i) if val[i] != v => {
                return Err(Error::InvalidParameter(format!(
                    "sensor position {p:?} has conflicting values {} and {v}",
                    val[i]
                )))
            }
            Some(_) => {}
            None => {
                pos.push(*p);
                val.push(v);
            }
        }
    }
    if pos.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "noise map needs >= 3 distinct sensors, got {}",
            pos.len()
        )));
    }
    let scale = pos
        .iter()
        .flat_map(|a| pos.iter().map(move |b| (a[0] - b[0]).hypot(a[1] - b[1])))
        .fold(0.0, f64::max);
    let spread = pos.iter().skip(1).any(|b| {
        pos.iter().skip(1).any(|c| {
            let cross = (b[0] - pos[0][0]) * (c[1] - pos[0][1]) - (b[1] - pos[0][1]) * (c[0] - pos[0][0]);
            cross.abs() > 1e-9 * scale * scale
        })
    });
    if !spread {
        return Err(Error::InvalidParameter("sensor positions are collinear".into()));
    }
    let xs = grid.xs();
    let ys = grid.ys();
    let grid_vals = ys
        .iter()
        .map(|&y| xs.iter().map(|&x| idw_at(&pos, &val, [x, y])).collect())
        .collect();
    Ok(NoiseMap {
        sensor_positions: positions.to_vec(),
        sigma_f_values: values.to_vec(),
        grid_x: xs,
        grid_y: ys,
        grid: grid_vals,
    })
}
