//! Fourier-side Sobolev norms.
//!
//! Binding convention for the whole crate: the Fourier transform is
//! unitary,
//!
//! ```text
//! (Fu)(xi) = (2*pi)^(-d/2) * integral u(x) exp(-i xi.x) dx,
//! ```
//!
//! so a point mass at `x0` transforms to `(2*pi)^(-d/2) exp(-i xi.x0)` and
//! the norms are
//!
//! ```text
//! ||u||_s^2    = integral (1+|xi|^2)^s  |Fu(xi)|^2  dxi      (s >= 0),
//! ||mu||_-m^2  = integral (1+|xi|^2)^-m |Fmu(xi)|^2 dxi      (m > 0).
//! ```
//!
//! Empirical transforms are evaluated by direct summation over atoms; no
//! binning is ever applied.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Outer-shell mass fraction above which an `H^s` quadrature is rejected.
pub const TRUNCATION_ALARM_FRACTION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SobolevError {
    #[error("frequency cutoff inadequate: outer-shell mass fraction {fraction:.3e} exceeds {limit:.1e}")]
    TruncationAlarm { fraction: f64, limit: f64 },
    #[error("invalid frequency grid: {0}")]
    BadGrid(String),
}

/// Symmetric tensor-product frequency grid on `[-cutoff, cutoff]^d` with
/// trapezoid weights.
#[derive(Debug, Clone)]
pub struct FrequencyGrid {
    pub d: usize,
    pub cutoff: f64,
    pub points_per_axis: usize,
    axis: Vec<f64>,
    axis_weights: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(d: usize, cutoff: f64, points_per_axis: usize) -> Result<Self, SobolevError> {
        if d == 0 || cutoff <= 0.0 {
            return Err(SobolevError::BadGrid(
                "dimension and cutoff must be positive".into(),
            ));
        }
        if points_per_axis < 3 || points_per_axis % 2 == 0 {
            return Err(SobolevError::BadGrid(format!(
                "points_per_axis must be odd and >= 3, got {points_per_axis}"
            )));
        }
        let n = points_per_axis;
        let h = 2.0 * cutoff / (n - 1) as f64;
        let axis: Vec<f64> = (0..n).map(|i| -cutoff + i as f64 * h).collect();
        let axis_weights: Vec<f64> = (0..n)
            .map(|i| if i == 0 || i == n - 1 { h / 2.0 } else { h })
            .collect();
        Ok(FrequencyGrid {
            d,
            cutoff,
            points_per_axis,
            axis,
            axis_weights,
        })
    }

    /// Grid sized for Gaussian-mixture work: cutoff `40 / min(width)`,
    /// spacing tied to the largest center/width scale of the mixtures.
    pub fn for_test_functions(d: usize, fns: &[&TestFunction]) -> Self {
        let mut min_width = f64::INFINITY;
        let mut feature = 1.0f64;
        for f in fns {
            for b in &f.bumps {
                min_width = min_width.min(b.width);
                feature = feature.max(b.width);
                for c in &b.center {
                    feature = feature.max(c.abs());
                }
            }
        }
        assert!(min_width.is_finite(), "empty mixture library");
        let cutoff = 40.0 / min_width;
        let spacing = 1.0 / (4.0 * (feature + 1.0));
        let mut n = (2.0 * cutoff / spacing).ceil() as usize + 1;
        if n % 2 == 0 {
            n += 1;
        }
        FrequencyGrid::new(d, cutoff, n).expect("internally consistent grid")
    }

    /// Grid sized for atomic measures spread over `[-extent, extent]^d`
    /// at the default cutoff 200.
    pub fn for_atoms(d: usize, extent: f64) -> Self {
        Self::for_atoms_with_cutoff(d, extent, 200.0)
    }

    pub fn for_atoms_with_cutoff(d: usize, extent: f64, cutoff: f64) -> Self {
        let spacing = 1.0 / (4.0 * (extent.abs() + 1.0));
        let mut n = (2.0 * cutoff / spacing).ceil() as usize + 1;
        if n % 2 == 0 {
            n += 1;
        }
        FrequencyGrid::new(d, cutoff, n).expect("internally consistent grid")
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    /// Writes the coordinates of flat point `idx` into `out`.
    #[inline]
    pub fn point(&self, mut idx: usize, out: &mut [f64]) {
        for k in 0..self.d {
            out[k] = self.axis[idx % self.points_per_axis];
            idx /= self.points_per_axis;
        }
    }

    #[inline]
    pub fn weight(&self, mut idx: usize) -> f64 {
        let mut w = 1.0;
        for _ in 0..self.d {
            w *= self.axis_weights[idx % self.points_per_axis];
            idx /= self.points_per_axis;
        }
        w
    }

    pub fn total_volume(&self) -> f64 {
        let per_axis: f64 = self.axis_weights.iter().sum();
        per_axis.powi(self.d as i32)
    }

    /// Quadrature of `f` over the grid together with the contribution of
    /// the outer 10% frequency shell (`max_k |xi_k| >= 0.9 cutoff`).
    pub fn integrate_with_shell<F>(&self, f: F) -> (f64, f64)
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let shell = 0.9 * self.cutoff;
        let chunk = 4096;
        let total_len = self.len();
        let n_chunks = total_len.div_ceil(chunk);
        let partials: Vec<(f64, f64)> = (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let mut xi = vec![0.0; self.d];
                let mut tot = 0.0;
                let mut outer = 0.0;
                let hi = ((ci + 1) * chunk).min(total_len);
                for idx in ci * chunk..hi {
                    self.point(idx, &mut xi);
                    let v = self.weight(idx) * f(&xi);
                    tot += v;
                    if xi.iter().any(|x| x.abs() >= shell) {
                        outer += v;
                    }
                }
                (tot, outer)
            })
            .collect();
        let tot: f64 = crate::stats::pairwise_sum(&partials.iter().map(|p| p.0).collect::<Vec<_>>());
        let outer: f64 =
            crate::stats::pairwise_sum(&partials.iter().map(|p| p.1).collect::<Vec<_>>());
        (tot, outer)
    }
}

/// One Gaussian bump `amplitude * exp(-|x-center|^2 / (2 width^2))`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianBump {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub width: f64,
}

/// An `H^m` test function given as a finite Gaussian mixture; value,
/// derivatives up to third order, and the Fourier transform are all in
/// closed form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestFunction {
    pub d: usize,
    pub bumps: Vec<GaussianBump>,
}

impl TestFunction {
    pub fn new(d: usize, bumps: Vec<GaussianBump>) -> Self {
        for b in &bumps {
            assert_eq!(b.center.len(), d, "bump center dimension mismatch");
            assert!(b.width > 0.0, "bump width must be positive");
        }
        TestFunction { d, bumps }
    }

    pub fn single_bump(d: usize, amplitude: f64, center: Vec<f64>, width: f64) -> Self {
        Self::new(
            d,
            vec![GaussianBump {
                amplitude,
                center,
                width,
            }],
        )
    }

    /// The probability density of `N(center, width^2 Id)`.
    pub fn gaussian_density(d: usize, center: Vec<f64>, width: f64) -> Self {
        let amp = (std::f64::consts::TAU * width * width).powf(-(d as f64) / 2.0);
        Self::single_bump(d, amp, center, width)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let bumps = self
            .bumps
            .iter()
            .map(|b| GaussianBump {
                amplitude: factor * b.amplitude,
                center: b.center.clone(),
                width: b.width,
            })
            .collect();
        TestFunction::new(self.d, bumps)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for b in &self.bumps {
            let mut r2 = 0.0;
            for k in 0..self.d {
                let t = x[k] - b.center[k];
                r2 += t * t;
            }
            acc += b.amplitude * (-r2 / (2.0 * b.width * b.width)).exp();
        }
        acc
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[..self.d].fill(0.0);
        for b in &self.bumps {
            let s2 = b.width * b.width;
            let mut r2 = 0.0;
            for k in 0..self.d {
                let t = x[k] - b.center[k];
                r2 += t * t;
            }
            let g = b.amplitude * (-r2 / (2.0 * s2)).exp();
            for k in 0..self.d {
                out[k] -= g * (x[k] - b.center[k]) / s2;
            }
        }
    }

    /// Hessian, row-major `d x d`.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        out[..self.d * self.d].fill(0.0);
        for b in &self.bumps {
            let s2 = b.width * b.width;
            let mut r2 = 0.0;
            for k in 0..self.d {
                let t = x[k] - b.center[k];
                r2 += t * t;
            }
            let g = b.amplitude * (-r2 / (2.0 * s2)).exp();
            for i in 0..self.d {
                let ui = (x[i] - b.center[i]) / s2;
                for j in 0..self.d {
                    let uj = (x[j] - b.center[j]) / s2;
                    let delta = if i == j { 1.0 / s2 } else { 0.0 };
                    out[i * self.d + j] += g * (ui * uj - delta);
                }
            }
        }
    }

    /// Third derivative tensor, row-major `d x d x d`.
    pub fn third(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        out[..d * d * d].fill(0.0);
        for b in &self.bumps {
            let s2 = b.width * b.width;
            let mut r2 = 0.0;
            for k in 0..d {
                let t = x[k] - b.center[k];
                r2 += t * t;
            }
            let g = b.amplitude * (-r2 / (2.0 * s2)).exp();
            let u: Vec<f64> = (0..d).map(|k| (x[k] - b.center[k]) / s2).collect();
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        let mut v = -u[i] * u[j] * u[k];
                        if i == j {
                            v += u[k] / s2;
                        }
                        if i == k {
                            v += u[j] / s2;
                        }
                        if j == k {
                            v += u[i] / s2;
                        }
                        out[(i * d + j) * d + k] += g * v;
                    }
                }
            }
        }
    }

    /// Closed-form unitary Fourier transform.
    pub fn fourier(&self, xi: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for b in &self.bumps {
            let s2 = b.width * b.width;
            let mut xi2 = 0.0;
            let mut phase = 0.0;
            for k in 0..self.d {
                xi2 += xi[k] * xi[k];
                phase -= xi[k] * b.center[k];
            }
            let mag = b.amplitude * b.width.powi(self.d as i32) * (-s2 * xi2 / 2.0).exp();
            acc += Complex64::from_polar(mag, phase);
        }
        acc
    }

    /// Total integral of the mixture.
    pub fn mass(&self) -> f64 {
        let c = std::f64::consts::TAU.powf(self.d as f64 / 2.0);
        self.bumps
            .iter()
            .map(|b| b.amplitude * b.width.powi(self.d as i32) * c)
            .sum()
    }

    fn sampling_windows(&self, margin: f64) -> Vec<(Vec<f64>, f64)> {
        self.bumps
            .iter()
            .map(|b| (b.center.clone(), 8.0 * b.width + margin))
            .collect()
    }

    fn min_width(&self) -> f64 {
        self.bumps.iter().map(|b| b.width).fold(f64::INFINITY, f64::min)
    }

    /// `sup_x |grad f(x)|` by dense sampling near the bumps (d <= 2).
    pub fn sup_gradient_norm(&self) -> f64 {
        self.sup_sampled(|f, x| {
            let mut g = vec![0.0; f.d];
            f.gradient(x, &mut g);
            g.iter().map(|v| v * v).sum::<f64>().sqrt()
        })
    }

    /// `sup_x ||D^2 f(x)||` (spectral norm) by dense sampling (d <= 2).
    pub fn sup_hessian_norm(&self) -> f64 {
        self.sup_sampled(|f, x| {
            let d = f.d;
            let mut h = vec![0.0; d * d];
            f.hessian(x, &mut h);
            match d {
                1 => h[0].abs(),
                2 => {
                    // symmetric 2x2 spectral norm
                    let tr = h[0] + h[3];
                    let det = h[0] * h[3] - h[1] * h[2];
                    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
                    (tr / 2.0 + disc).abs().max((tr / 2.0 - disc).abs())
                }
                _ => unimplemented!("dense sup sampling implemented for d <= 2"),
            }
        })
    }

    /// `sup_x sup_{|u|=1} |D^3 f(x)[u,u,.]|` by dense sampling (d <= 2).
    pub fn sup_third_norm(&self) -> f64 {
        let dirs: Vec<Vec<f64>> = match self.d {
            1 => vec![vec![1.0]],
            2 => (0..64)
                .map(|k| {
                    let th = std::f64::consts::PI * k as f64 / 64.0;
                    vec![th.cos(), th.sin()]
                })
                .collect(),
            _ => unimplemented!("dense sup sampling implemented for d <= 2"),
        };
        self.sup_sampled(move |f, x| {
            let d = f.d;
            let mut t = vec![0.0; d * d * d];
            f.third(x, &mut t);
            let mut best = 0.0f64;
            for u in &dirs {
                let mut norm2 = 0.0;
                for k in 0..d {
                    let mut v = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            v += t[(i * d + j) * d + k] * u[i] * u[j];
                        }
                    }
                    norm2 += v * v;
                }
                best = best.max(norm2.sqrt());
            }
            best
        })
    }

    fn sup_sampled<F>(&self, f: F) -> f64
    where
        F: Fn(&TestFunction, &[f64]) -> f64,
    {
        let step = self.min_width() / 8.0;
        let mut best = 0.0f64;
        for (center, radius) in self.sampling_windows(0.0) {
            let n = (2.0 * radius / step).ceil() as usize + 1;
            match self.d {
                1 => {
                    for i in 0..n {
                        let x = [center[0] - radius + 2.0 * radius * i as f64 / (n - 1) as f64];
                        best = best.max(f(self, &x));
                    }
                }
                2 => {
                    let n = n.min(513);
                    for i in 0..n {
                        for j in 0..n {
                            let x = [
                                center[0] - radius + 2.0 * radius * i as f64 / (n - 1) as f64,
                                center[1] - radius + 2.0 * radius * j as f64 / (n - 1) as f64,
                            ];
                            best = best.max(f(self, &x));
                        }
                    }
                }
                _ => unimplemented!("dense sup sampling implemented for d <= 2"),
            }
        }
        best
    }

    /// The standard study library: a width ladder of single bumps plus a
    /// handful of signed mixtures. 20 functions for `d = 1`.
    pub fn library(d: usize) -> Vec<TestFunction> {
        assert!(d == 1 || d == 2, "library defined for d in {{1, 2}}");
        let mut fns = Vec::new();
        let n_widths = 12;
        for k in 0..n_widths {
            let t = k as f64 / (n_widths - 1) as f64;
            let width = 0.03 * (3.0f64 / 0.03).powf(t);
            fns.push(TestFunction::single_bump(d, 1.0, vec![0.0; d], width));
        }
        let mixtures: [&[(f64, f64, f64)]; 8] = [
            &[(1.0, 0.8, 0.5), (0.7, -1.2, 0.8)],
            &[(1.0, 0.0, 0.4), (-0.5, 1.5, 0.6)],
            &[(0.6, -2.0, 1.0), (0.6, 2.0, 1.0)],
            &[(1.0, 0.5, 0.25), (0.4, -0.5, 0.7), (0.2, 1.8, 1.2)],
            &[(-0.8, 0.0, 0.9), (1.3, 1.0, 0.35)],
            &[(0.9, -1.0, 0.15), (0.9, 1.0, 0.15)],
            &[(1.0, 0.0, 2.0), (-0.3, 0.0, 0.5)],
            &[(0.5, -1.5, 0.45), (-0.5, 1.5, 0.45), (1.0, 0.0, 1.0)],
        ];
        for spec in mixtures {
            let bumps = spec
                .iter()
                .map(|&(a, c, w)| {
                    let mut center = vec![0.0; d];
                    center[0] = c;
                    GaussianBump {
                        amplitude: a,
                        center,
                        width: w,
                    }
                })
                .collect();
            fns.push(TestFunction::new(d, bumps));
        }
        fns
    }
}

/// A finitely supported measure: atoms (flat, row-major `n x d`) with
/// weights. `empirical` gives every atom weight `1/n`.
#[derive(Debug, Clone)]
pub struct EmpiricalMeasureView {
    pub d: usize,
    pub atoms: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EmpiricalMeasureView {
    pub fn empirical(d: usize, atoms: Vec<f64>) -> Self {
        assert!(!atoms.is_empty() && atoms.len() % d == 0);
        let n = atoms.len() / d;
        EmpiricalMeasureView {
            d,
            atoms,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn weighted(d: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Self {
        assert_eq!(atoms.len(), weights.len() * d);
        EmpiricalMeasureView { d, atoms, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        crate::stats::pairwise_sum(&self.weights)
    }

    pub fn scaled(&self, c: f64) -> Self {
        EmpiricalMeasureView {
            d: self.d,
            atoms: self.atoms.clone(),
            weights: self.weights.iter().map(|w| c * w).collect(),
        }
    }

    /// `F mu (xi) = (2 pi)^{-d/2} sum_j w_j exp(-i xi . x_j)`.
    pub fn fourier(&self, xi: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, w) in self.weights.iter().enumerate() {
            let mut phase = 0.0;
            for k in 0..self.d {
                phase -= xi[k] * self.atoms[j * self.d + k];
            }
            acc += Complex64::from_polar(*w, phase);
        }
        acc * std::f64::consts::TAU.powf(-(self.d as f64) / 2.0)
    }
}

/// Anything with a pointwise Fourier transform can be normed.
pub trait FourierRepr: Sync {
    fn fourier_at(&self, xi: &[f64]) -> Complex64;
    /// Whether the representation contains point masses (their transform
    /// does not decay, so `H^{-m}` diverges for `m <= d/2`).
    fn is_atomic(&self) -> bool {
        false
    }
}

impl FourierRepr for TestFunction {
    fn fourier_at(&self, xi: &[f64]) -> Complex64 {
        self.fourier(xi)
    }
}

impl FourierRepr for EmpiricalMeasureView {
    fn fourier_at(&self, xi: &[f64]) -> Complex64 {
        self.fourier(xi)
    }
    fn is_atomic(&self) -> bool {
        true
    }
}

/// `H^s` norm (`s >= 0` intended) of `f` by grid quadrature. Errors with a
/// truncation alarm when the outer 10% frequency shell carries more than
/// `1e-6` of the quadrature mass.
pub fn hs_norm<F: FourierRepr>(f: &F, s: f64, grid: &FrequencyGrid) -> Result<f64, SobolevError> {
    let (total, outer) = grid.integrate_with_shell(|xi| {
        let xi2: f64 = xi.iter().map(|x| x * x).sum();
        (1.0 + xi2).powf(s) * f.fourier_at(xi).norm_sqr()
    });
    let fraction = if total > 0.0 { outer / total } else { 0.0 };
    if fraction > TRUNCATION_ALARM_FRACTION {
        return Err(SobolevError::TruncationAlarm {
            fraction,
            limit: TRUNCATION_ALARM_FRACTION,
        });
    }
    Ok(total.sqrt())
}

/// Result of a dual-norm evaluation. `diverging` marks the `m <= d/2`
/// atomic case, where the truncated value is still returned but does not
/// converge as the cutoff grows.
#[derive(Debug, Clone, Copy)]
pub struct DualNorm {
    pub value: f64,
    pub outer_shell_fraction: f64,
    pub diverging: bool,
}

/// `H^{-m}` norm of a measure by grid quadrature of the weighted squared
/// transform.
pub fn hminus_norm<F: FourierRepr>(mu: &F, m: f64, grid: &FrequencyGrid) -> DualNorm {
    assert!(m > 0.0, "dual norm exponent must be positive");
    let (total, outer) = grid.integrate_with_shell(|xi| {
        let xi2: f64 = xi.iter().map(|x| x * x).sum();
        (1.0 + xi2).powf(-m) * mu.fourier_at(xi).norm_sqr()
    });
    let diverging = mu.is_atomic() && m <= grid.d as f64 / 2.0;
    if diverging {
        log::warn!(
            "H^-m with m = {m} <= d/2 on atomic input: truncated value {:.6e} does not converge",
            total.sqrt()
        );
    }
    DualNorm {
        value: total.sqrt(),
        outer_shell_fraction: if total > 0.0 { outer / total } else { 0.0 },
        diverging,
    }
}

/// `H^{-m}` norm from a precomputed transform on the grid (flat order).
pub fn hminus_from_transform(trans: &[Complex64], m: f64, grid: &FrequencyGrid) -> f64 {
    assert_eq!(trans.len(), grid.len());
    let mut xi = vec![0.0; grid.d];
    let mut acc = 0.0;
    for (idx, t) in trans.iter().enumerate() {
        grid.point(idx, &mut xi);
        let xi2: f64 = xi.iter().map(|x| x * x).sum();
        acc += grid.weight(idx) * (1.0 + xi2).powf(-m) * t.norm_sqr();
    }
    acc.sqrt()
}

/// Fast `d = 1` atom transform on the grid axis: per-atom phase recurrence
/// over the uniformly spaced frequencies, parallel over frequency chunks.
/// Equals `EmpiricalMeasureView::fourier` up to rounding.
pub fn atom_transform_1d(atoms: &[f64], weights: &[f64], grid: &FrequencyGrid) -> Vec<Complex64> {
    assert_eq!(grid.d, 1);
    assert_eq!(atoms.len(), weights.len());
    let axis = grid.axis();
    let dxi = axis[1] - axis[0];
    let scale = std::f64::consts::TAU.powf(-0.5);
    let chunk = 512;
    let mut out = vec![Complex64::new(0.0, 0.0); axis.len()];
    out.par_chunks_mut(chunk)
        .enumerate()
        .for_each(|(ci, slot)| {
            let xi0 = axis[ci * chunk];
            for (&x, &w) in atoms.iter().zip(weights) {
                let mut z = Complex64::from_polar(w, -xi0 * x);
                let step = Complex64::from_polar(1.0, -dxi * x);
                for s in slot.iter_mut() {
                    *s += z;
                    z *= step;
                }
            }
        });
    for v in &mut out {
        *v *= scale;
    }
    out
}

/// Dual pairing `<mu, h>`: exact atom summation.
pub fn dual_pairing(mu: &EmpiricalMeasureView, h: &TestFunction) -> f64 {
    assert_eq!(mu.d, h.d);
    let terms: Vec<f64> = (0..mu.len())
        .map(|j| mu.weights[j] * h.value(&mu.atoms[j * mu.d..(j + 1) * mu.d]))
        .collect();
    crate::stats::pairwise_sum(&terms)
}

/// Norm of the unit point mass on this grid (any center gives the same
/// value; the transform has unit modulus times `(2 pi)^{-d/2}`).
pub fn delta_norm(m: f64, grid: &FrequencyGrid) -> f64 {
    let scale = std::f64::consts::TAU.powf(-(grid.d as f64));
    let (total, _) = grid.integrate_with_shell(|xi| {
        let xi2: f64 = xi.iter().map(|x| x * x).sum();
        (1.0 + xi2).powf(-m) * scale
    });
    total.sqrt()
}

/// Empirical probe of the uniform embedding of probability measures into
/// `H^{-m}`: draws random atomic and absolutely continuous probability
/// measures and returns the largest observed dual norm.
pub fn embedding_constant_probe(m: f64, grid: &FrequencyGrid, trials: usize, seed: u64) -> f64 {
    let field = crate::rng::NoiseField::new(seed, crate::rng::Purpose::Auxiliary, 0);
    let mut best = 0.0f64;
    for trial in 0..trials {
        let mut stream = field.stream(trial as u64);
        let value = if trial % 2 == 0 {
            let n_atoms = 1 + (stream.next().abs() * 20.0) as usize;
            let atoms: Vec<f64> = (0..n_atoms * grid.d).map(|_| 3.0 * stream.next()).collect();
            let mu = EmpiricalMeasureView::empirical(grid.d, atoms);
            hminus_norm(&mu, m, grid).value
        } else {
            let n_bumps = 1 + (stream.next().abs() * 3.0) as usize;
            let mut bumps = Vec::with_capacity(n_bumps);
            let mut raw = Vec::with_capacity(n_bumps);
            for _ in 0..n_bumps {
                let center: Vec<f64> = (0..grid.d).map(|_| 2.0 * stream.next()).collect();
                let width = 0.2 + stream.next().abs();
                let a = stream.next().abs() + 0.1;
                raw.push(a);
                bumps.push(GaussianBump {
                    amplitude: a,
                    center,
                    width,
                });
            }
            let mut density = TestFunction::new(grid.d, bumps);
            let mass = density.mass();
            for b in &mut density.bumps {
                b.amplitude /= mass;
            }
            hminus_norm(&density, m, grid).value
        };
        best = best.max(value);
    }
    best
}
