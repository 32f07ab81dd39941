//! Loss-landscape grid probing along two seeded, filter-normalized
//! directions in parameter space.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{self, LabeledBatch, ModelParams, ModelSpec};
use crate::persist::fmt_f64;
use crate::rng;

/// Losses on a square grid around the current parameters.
#[derive(Debug, Clone)]
pub struct LandscapeGrid {
    pub extent: f64,
    pub resolution: usize,
    pub direction_a: Vec<f64>,
    pub direction_b: Vec<f64>,
    /// Row-major, `losses[i][j]` at coefficients `(a_i, b_j)`.
    pub losses: Vec<Vec<f64>>,
}

impl LandscapeGrid {
    pub fn coefficient(&self, index: usize) -> f64 {
        let half = (self.resolution - 1) / 2;
        (index as f64 - half as f64) * self.extent / half.max(1) as f64
    }

    pub fn center(&self) -> f64 {
        let mid = (self.resolution - 1) / 2;
        self.losses[mid][mid]
    }

    /// Comma-separated export: header `a,b,loss`, row-major, 17 significant
    /// digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("a,b,loss\n");
        for i in 0..self.resolution {
            for j in 0..self.resolution {
                out.push_str(&fmt_f64(self.coefficient(i)));
                out.push(',');
                out.push_str(&fmt_f64(self.coefficient(j)));
                out.push(',');
                out.push_str(&fmt_f64(self.losses[i][j]));
                out.push('\n');
            }
        }
        out
    }
}

/// Rescales each per-layer block of a random direction to that layer's
/// parameter norm, so grids are comparable across scales.
fn filter_normalize(direction: &mut [f64], params: &ModelParams) {
    for block in params.blocks() {
        if block.is_empty() {
            continue;
        }
        let range = block.range();
        let pnorm = crate::sharpness::l2_norm(&params.flat()[range.clone()]);
        let dnorm = crate::sharpness::l2_norm(&direction[range.clone()]);
        let scale = if dnorm == 0.0 { 0.0 } else { pnorm / dnorm };
        for d in &mut direction[range] {
            *d *= scale;
        }
    }
}

/// Probes the training loss at `theta + a * d1 + b * d2` over an odd
/// resolution-squared grid with coefficients in `[-extent, extent]`.
/// Deterministic given the seed; grid cells are evaluated in parallel.
pub fn probe(
    spec: &ModelSpec,
    params: &ModelParams,
    data: &LabeledBatch,
    extent: f64,
    resolution: usize,
    seed: u64,
) -> Result<LandscapeGrid> {
    if resolution == 0 || resolution.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "landscape resolution must be odd, got {resolution}"
        )));
    }
    let n = params.len();
    let mut r = rng::rng_from(seed);
    let mut direction_a = rng::normal_vec(&mut r, n);
    let mut direction_b = rng::normal_vec(&mut r, n);
    filter_normalize(&mut direction_a, params);
    filter_normalize(&mut direction_b, params);

    let half = (resolution - 1) / 2;
    let coeff = |index: usize| (index as f64 - half as f64) * extent / half.max(1) as f64;

    let cells: Vec<(usize, usize)> = (0..resolution)
        .flat_map(|i| (0..resolution).map(move |j| (i, j)))
        .collect();
    let flat: Vec<f64> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (coeff(i), coeff(j));
            let shifted: Vec<f64> = params
                .flat()
                .iter()
                .enumerate()
                .map(|(k, &t)| t + a * direction_a[k] + b * direction_b[k])
                .collect();
            let p = spec.params_from_flat(shifted)?;
            let logits = nn::forward(spec, &p, &data.inputs)?;
            nn::cross_entropy(&logits, &data.labels)
        })
        .collect::<Result<Vec<f64>>>()?;

    let losses = flat.chunks(resolution).map(|row| row.to_vec()).collect();
    Ok(LandscapeGrid {
        extent,
        resolution,
        direction_a,
        direction_b,
        losses,
    })
}
