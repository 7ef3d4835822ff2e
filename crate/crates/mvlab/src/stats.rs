//! Small statistics toolbox: order-independent accumulation, replica
//! summaries, and least-squares slope fits on log-log ladders.

use serde::{Deserialize, Serialize};

/// Sums `values` with a fixed pairwise (binary-tree) reduction.
///
/// The reduction order depends only on the slice layout, never on thread
/// scheduling, so parallel studies that collect per-replica values into an
/// indexed `Vec` and then call this stay bit-identical across runs.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Mean and standard error of a replica sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl Summary {
    pub fn from_sample(values: &[f64]) -> Self {
        let n = values.len();
        assert!(n > 0, "summary of an empty sample");
        let mean = pairwise_sum(values) / n as f64;
        if n == 1 {
            return Summary {
                mean,
                stderr: 0.0,
                count: 1,
            };
        }
        let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        let var = pairwise_sum(&sq) / (n as f64 - 1.0);
        Summary {
            mean,
            stderr: (var / n as f64).sqrt(),
            count: n,
        }
    }
}

/// Ordinary least-squares fit of `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval on the slope.
    pub slope_ci: f64,
    pub r_squared: f64,
}

impl SlopeFit {
    pub fn fit(xs: &[f64], ys: &[f64]) -> Self {
        assert_eq!(xs.len(), ys.len());
        let n = xs.len();
        assert!(n >= 2, "slope fit needs at least two points");
        let nf = n as f64;
        let mx = pairwise_sum(xs) / nf;
        let my = pairwise_sum(ys) / nf;
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
        // Residual-based standard error; with only a handful of ladder
        // points the t-quantile is approximated by 2 throughout.
        let slope_ci = if n > 2 {
            2.0 * (ss_res / (nf - 2.0) / sxx).sqrt()
        } else {
            0.0
        };
        SlopeFit {
            slope,
            intercept,
            slope_ci,
            r_squared,
        }
    }

    /// Fit on `(ln x, ln y)`; `ys` must be positive.
    pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Self {
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
        Self::fit(&lx, &ly)
    }
}
