//! Heat semigroup calculus.
//!
//! The generator is standardized to `Delta/2` everywhere: `S_t` is
//! convolution with the Gaussian kernel of variance `t`, the Fourier
//! multiplier is `exp(-t |xi|^2 / 2)`, and the resolvent
//! `R(lambda, Delta/2)` is the multiplier `1 / (lambda + |xi|^2 / 2)`.
//!
//! On Gaussian mixtures everything is closed form: a bump
//! `(a, c, sigma)` heats to `(a (sigma^2/(sigma^2+t))^{d/2}, c,
//! sqrt(sigma^2+t))`, which makes the semigroup law and `S_0 = Id` exact
//! on parameters. Grid convolution exists only as a cross-check.

use num_complex::Complex64;
use thiserror::Error;

use crate::sobolev::{FrequencyGrid, GaussianBump, SobolevError, TestFunction};
use crate::stats::SlopeFit;

#[derive(Debug, Error)]
pub enum SemigroupError {
    #[error("gradient identity bound violated at t={t:.6e}, x={x:?}: lhs {lhs:.6e} > bound {bound:.6e} ({which})")]
    BoundViolation {
        t: f64,
        x: Vec<f64>,
        lhs: f64,
        bound: f64,
        which: &'static str,
    },
    #[error("resolvent decay slope {slope:.4} exceeds -(1+2eps)+0.1 = {limit:.4}")]
    DecaySlope { slope: f64, limit: f64 },
    #[error(transparent)]
    Sobolev(#[from] SobolevError),
}

/// `S_t h` in closed form on the mixture parameters. `t = 0` is the
/// identity, exactly.
pub fn apply_heat(h: &TestFunction, t: f64) -> TestFunction {
    assert!(t >= 0.0, "heat time must be nonnegative");
    if t == 0.0 {
        return h.clone();
    }
    let d = h.d as f64;
    let bumps = h
        .bumps
        .iter()
        .map(|b| {
            let s2 = b.width * b.width;
            GaussianBump {
                amplitude: b.amplitude * (s2 / (s2 + t)).powf(d / 2.0),
                center: b.center.clone(),
                width: (s2 + t).sqrt(),
            }
        })
        .collect();
    TestFunction::new(h.d, bumps)
}

/// `grad S_t h` evaluated at `x`.
pub fn grad_heat(h: &TestFunction, t: f64, x: &[f64], out: &mut [f64]) {
    apply_heat(h, t).gradient(x, out)
}

/// `D grad S_t h` (the Hessian of the heated function) at `x`, row-major.
pub fn hess_heat(h: &TestFunction, t: f64, x: &[f64], out: &mut [f64]) {
    apply_heat(h, t).hessian(x, out)
}

/// One row of the gradient-identity report.
#[derive(Debug, Clone, Copy)]
pub struct BoundRow {
    pub t: f64,
    /// Dense-sampling sup of `|grad (S_t - Id) h|`.
    pub lhs: f64,
    /// `sqrt(t) ||D^2 h||_inf`.
    pub sqrt_bound: f64,
    /// `(t/2) ||D^3 h||_inf`.
    pub linear_bound: f64,
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    /// max over the grid of lhs / sqrt_bound.
    pub worst_sqrt_ratio: f64,
    /// max over the grid of lhs / linear_bound.
    pub worst_linear_ratio: f64,
}

/// Verifies `||grad (S_t - Id) h||_inf <= sqrt(t) ||D^2 h||_inf` and
/// `<= (t/2) ||D^3 h||_inf` on every `t` of the grid, by dense spatial
/// sampling. A violation is a hard error carrying the witness point.
pub fn check_gradient_identity_bounds(
    h: &TestFunction,
    t_grid: &[f64],
) -> Result<BoundReport, SemigroupError> {
    let d2 = h.sup_hessian_norm();
    let d3 = h.sup_third_norm();
    let t_max = t_grid.iter().cloned().fold(0.0f64, f64::max);
    let mut rows = Vec::with_capacity(t_grid.len());
    let mut worst_sqrt = 0.0f64;
    let mut worst_linear = 0.0f64;
    for &t in t_grid {
        assert!(t >= 0.0);
        let heated = apply_heat(h, t);
        let (lhs, witness) = sup_grad_difference(&heated, h, t_max);
        let sqrt_bound = t.sqrt() * d2;
        let linear_bound = 0.5 * t * d3;
        if lhs > sqrt_bound {
            return Err(SemigroupError::BoundViolation {
                t,
                x: witness,
                lhs,
                bound: sqrt_bound,
                which: "sqrt(t) * sup |D^2 h|",
            });
        }
        if lhs > linear_bound && t > 0.0 {
            return Err(SemigroupError::BoundViolation {
                t,
                x: witness,
                lhs,
                bound: linear_bound,
                which: "(t/2) * sup |D^3 h|",
            });
        }
        if sqrt_bound > 0.0 {
            worst_sqrt = worst_sqrt.max(lhs / sqrt_bound);
        }
        if linear_bound > 0.0 {
            worst_linear = worst_linear.max(lhs / linear_bound);
        }
        rows.push(BoundRow {
            t,
            lhs,
            sqrt_bound,
            linear_bound,
        });
    }
    Ok(BoundReport {
        rows,
        worst_sqrt_ratio: worst_sqrt,
        worst_linear_ratio: worst_linear,
    })
}

fn sup_grad_difference(heated: &TestFunction, h: &TestFunction, t_max: f64) -> (f64, Vec<f64>) {
    assert!(h.d == 1, "bound checks run in d = 1");
    let margin = 8.0 * t_max.sqrt();
    let mut best = 0.0f64;
    let mut witness = vec![0.0];
    let min_width = h
        .bumps
        .iter()
        .map(|b| b.width)
        .fold(f64::INFINITY, f64::min);
    let step = min_width / 8.0;
    let mut ga = [0.0];
    let mut gb = [0.0];
    for b in &h.bumps {
        let radius = 8.0 * b.width + margin;
        let n = (2.0 * radius / step).ceil() as usize + 1;
        for i in 0..n {
            let x = [b.center[0] - radius + 2.0 * radius * i as f64 / (n - 1) as f64];
            heated.gradient(&x, &mut ga);
            h.gradient(&x, &mut gb);
            let v = (ga[0] - gb[0]).abs();
            if v > best {
                best = v;
                witness[0] = x[0];
            }
        }
    }
    (best, witness)
}

/// A point `lambda = rho e^{i eta}` off the spectrum of `Delta/2`,
/// together with the fractional regularity gap used in decay studies.
#[derive(Debug, Clone, Copy)]
pub struct ResolventPoint {
    pub rho: f64,
    pub eta: f64,
    pub epsilon: f64,
}

impl ResolventPoint {
    pub fn new(rho: f64, eta: f64, epsilon: f64) -> Self {
        assert!(rho > 0.0, "resolvent modulus must be positive");
        assert!(
            eta > std::f64::consts::FRAC_PI_2 && eta < std::f64::consts::PI,
            "eta must lie in (pi/2, pi)"
        );
        assert!(epsilon > 0.0 && epsilon < 0.5, "epsilon must lie in (0, 1/2)");
        ResolventPoint { rho, eta, epsilon }
    }

    pub fn lambda(&self) -> Complex64 {
        Complex64::from_polar(self.rho, self.eta)
    }
}

/// Scalar part of the `grad R(lambda, Delta/2)` multiplier: the full
/// multiplier is `i xi / (lambda + |xi|^2 / 2)`.
#[inline]
pub fn resolvent_scalar(lambda: Complex64, xi2: f64) -> Complex64 {
    Complex64::new(1.0, 0.0) / (lambda + xi2 / 2.0)
}

/// `grad R(lambda, Delta/2) h` as a complex vector field sampled at `xs`
/// (inverse transform of the multiplied closed-form transform). Errors
/// with the truncation alarm when the cutoff is inadequate.
pub fn apply_resolvent_gradient(
    h: &TestFunction,
    lambda: Complex64,
    grid: &FrequencyGrid,
    xs: &[f64],
) -> Result<Vec<Vec<Complex64>>, SobolevError> {
    assert_eq!(grid.d, 1, "spatial resolvent fields implemented for d = 1");
    let (total, outer) = grid.integrate_with_shell(|xi| {
        let xi2 = xi[0] * xi[0];
        (xi2.sqrt() * resolvent_scalar(lambda, xi2).norm() * h.fourier(xi).norm()).powi(2)
    });
    let fraction = if total > 0.0 { outer / total } else { 0.0 };
    if fraction > crate::sobolev::TRUNCATION_ALARM_FRACTION {
        return Err(SobolevError::TruncationAlarm {
            fraction,
            limit: crate::sobolev::TRUNCATION_ALARM_FRACTION,
        });
    }
    let scale = std::f64::consts::TAU.powf(-0.5);
    let mut component = Vec::with_capacity(xs.len());
    for &x in xs {
        let mut acc = Complex64::new(0.0, 0.0);
        let mut xi = [0.0];
        for idx in 0..grid.len() {
            grid.point(idx, &mut xi);
            let xi2 = xi[0] * xi[0];
            let mult = Complex64::new(0.0, xi[0]) * resolvent_scalar(lambda, xi2);
            let val = mult * h.fourier(&xi) * Complex64::from_polar(1.0, xi[0] * x);
            acc += grid.weight(idx) * val;
        }
        component.push(acc * scale);
    }
    Ok(vec![component])
}

/// `|| grad R(lambda, Delta/2) h ||_s^2` by quadrature of the multiplied
/// transform.
pub fn resolvent_gradient_norm_sq(
    h: &TestFunction,
    lambda: Complex64,
    s: f64,
    grid: &FrequencyGrid,
) -> f64 {
    let (total, _) = grid.integrate_with_shell(|xi| {
        let xi2: f64 = xi.iter().map(|v| v * v).sum();
        (1.0 + xi2).powf(s)
            * xi2
            * resolvent_scalar(lambda, xi2).norm_sqr()
            * h.fourier(xi).norm_sqr()
    });
    total
}

/// `|| grad S_t h ||_s` via the heat multiplier.
pub fn grad_heat_hs_norm(h: &TestFunction, t: f64, s: f64, grid: &FrequencyGrid) -> f64 {
    let (total, _) = grid.integrate_with_shell(|xi| {
        let xi2: f64 = xi.iter().map(|v| v * v).sum();
        (1.0 + xi2).powf(s) * xi2 * (-t * xi2).exp() * h.fourier(xi).norm_sqr()
    });
    total.sqrt()
}

/// `C_eta = (sup_{x >= 0} (1+x) / |e^{i eta} + x|)^2`; the sup sits at
/// `x = 1`, giving `2 / (1 + cos eta)`.
pub fn resolvent_constant(eta: f64) -> f64 {
    2.0 / (1.0 + eta.cos())
}

#[derive(Debug, Clone, Copy)]
pub struct DecayRow {
    pub rho: f64,
    pub norm_sq: f64,
    /// `C_eta ||h||_m^2 / rho^{1+2 eps}`.
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone)]
pub struct DecayReport {
    pub rows: Vec<DecayRow>,
    pub fit: SlopeFit,
    pub c_eta: f64,
    pub h_norm_m: f64,
    pub epsilon: f64,
}

/// Fits the decay exponent of
/// `||grad R(rho e^{i eta}, Delta/2) h||^2_{m - 2 eps}` along a `rho`
/// ladder and checks it against `-(1 + 2 eps) + 0.1`.
pub fn resolvent_decay_study(
    h: &TestFunction,
    eta: f64,
    epsilon: f64,
    rho_ladder: &[f64],
    m: f64,
    grid: &FrequencyGrid,
) -> Result<DecayReport, SemigroupError> {
    assert!(
        rho_ladder.iter().all(|&r| r > 1.0),
        "rho ladder must sit in (1, inf)"
    );
    let h_norm_m = crate::sobolev::hs_norm(h, m, grid)?;
    let c_eta = resolvent_constant(eta);
    let mut rows = Vec::with_capacity(rho_ladder.len());
    for &rho in rho_ladder {
        let lambda = Complex64::from_polar(rho, eta);
        let norm_sq = resolvent_gradient_norm_sq(h, lambda, m - 2.0 * epsilon, grid);
        let bound = c_eta * h_norm_m * h_norm_m / rho.powf(1.0 + 2.0 * epsilon);
        rows.push(DecayRow {
            rho,
            norm_sq,
            bound,
            ratio: norm_sq / bound,
        });
    }
    let fit = SlopeFit::fit_loglog(
        rho_ladder,
        &rows.iter().map(|r| r.norm_sq).collect::<Vec<_>>(),
    );
    let limit = -(1.0 + 2.0 * epsilon) + 0.1;
    if fit.slope > limit {
        return Err(SemigroupError::DecaySlope {
            slope: fit.slope,
            limit,
        });
    }
    Ok(DecayReport {
        rows,
        fit,
        c_eta,
        h_norm_m,
        epsilon,
    })
}

/// Fitted exponent of `t -> sup_library ||grad S_t h||_m / ||h||_m`.
pub fn smoothing_exponent_study(
    library: &[TestFunction],
    m: f64,
    t_grid: &[f64],
    grid: &FrequencyGrid,
) -> Result<SlopeFit, SemigroupError> {
    let norms: Vec<f64> = library
        .iter()
        .map(|h| crate::sobolev::hs_norm(h, m, grid))
        .collect::<Result<_, _>>()?;
    let mut sups = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut sup = 0.0f64;
        for (h, hn) in library.iter().zip(&norms) {
            sup = sup.max(grad_heat_hs_norm(h, t, m, grid) / hn);
        }
        sups.push(sup);
    }
    Ok(SlopeFit::fit_loglog(t_grid, &sups))
}
