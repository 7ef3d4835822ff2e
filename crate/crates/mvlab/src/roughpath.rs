//! Ito rough-path lifts and sewing for semigroup-convolved integrands.
//!
//! The target object is the pathwise integral
//!
//! ```text
//! I_t(f) = integral_0^t (grad S_{t-u} f)(x_u) . dB_u,
//! ```
//!
//! whose integrand depends on the upper limit, so the classical coboundary
//! `delta` is replaced by `delta_hat = delta - phi`, with
//! `[phi q f]_{ts} = [q (S_{t-s} - Id) f]_s`. The germ is
//!
//! ```text
//! [A f]_{ts} = (grad S_{t-s} f)(x_s) . B_{ts} + (D grad S_{t-s} f)(x_s) : BB_{ts},
//! ```
//!
//! and the integral is the partition limit of `sum [A S_{t-u} f]_{uv}`.
//!
//! Tensor convention: `BB_{ts} = integral_s^t B_{us} (x) dB_u` with
//! `(a (x) b)_{ij} = a_i b_j`, so Chen's relation reads
//! `BB_{ts} = BB_{us} + BB_{tu} + B_{us} (x) B_{tu}` (earlier increment in
//! the first slot). Per-step `BB` comes from Ito local sums over the micro
//! refinement; all coarser pairs are assembled through Chen, which makes
//! the relation exact by construction.

use thiserror::Error;

use crate::particles::BrownianDriver;
use crate::semigroup::apply_heat;
use crate::sobolev::TestFunction;

#[derive(Debug, Error)]
pub enum RoughError {
    #[error("rough lift requires a uniform time grid (offending index {index})")]
    NonUniformGrid { index: usize },
    #[error("sewing partial sums do not decay: worst level {level}, ratios {ratios:?}")]
    NonDecayingLevels { level: usize, ratios: Vec<f64> },
    #[error("{0}")]
    BadInput(String),
}

/// Brownian grid path with per-step increments and iterated integrals.
#[derive(Debug, Clone)]
pub struct RoughLift {
    pub d: usize,
    pub dt: f64,
    /// Holder exponent used by norm estimates, in (1/3, 1/2).
    pub alpha: f64,
    /// flat `steps x d`
    step_increments: Vec<f64>,
    /// flat `steps x d x d`, Ito local sums over the micro refinement
    step_iterated: Vec<f64>,
}

pub const DEFAULT_ALPHA: f64 = 0.4;

impl RoughLift {
    pub fn steps(&self) -> usize {
        self.step_increments.len() / self.d
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| k as f64 * self.dt).collect()
    }

    /// Builds a lift from explicit per-step data on `times`; rejects
    /// non-uniform grids.
    pub fn from_step_data(
        times: &[f64],
        d: usize,
        alpha: f64,
        step_increments: Vec<f64>,
        step_iterated: Vec<f64>,
    ) -> Result<Self, RoughError> {
        if times.len() < 2 {
            return Err(RoughError::BadInput("need at least one step".into()));
        }
        let dt = times[1] - times[0];
        for (i, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-12 * dt.max(1.0) {
                return Err(RoughError::NonUniformGrid { index: i + 1 });
            }
        }
        let steps = times.len() - 1;
        if step_increments.len() != steps * d || step_iterated.len() != steps * d * d {
            return Err(RoughError::BadInput("step data shape mismatch".into()));
        }
        Ok(RoughLift {
            d,
            dt,
            alpha,
            step_increments,
            step_iterated,
        })
    }

    /// `B_{ts}` for grid pair `(lo, hi)`.
    pub fn increment(&self, lo: usize, hi: usize, out: &mut [f64]) {
        let d = self.d;
        out[..d].fill(0.0);
        for k in lo..hi {
            for c in 0..d {
                out[c] += self.step_increments[k * d + c];
            }
        }
    }

    /// `BB_{ts}` for grid pair `(lo, hi)`, assembled through Chen.
    pub fn iterated(&self, lo: usize, hi: usize, out: &mut [f64]) {
        let d = self.d;
        out[..d * d].fill(0.0);
        let mut b_acc = vec![0.0; d];
        for k in lo..hi {
            let inc = &self.step_increments[k * d..(k + 1) * d];
            let it = &self.step_iterated[k * d * d..(k + 1) * d * d];
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] += it[i * d + j] + b_acc[i] * inc[j];
                }
            }
            for c in 0..d {
                b_acc[c] += inc[c];
            }
        }
    }

    /// Chen defect `BB_{ts} - BB_{us} - BB_{tu} - B_{us} (x) B_{tu}`,
    /// max-abs over entries.
    pub fn chen_residual(&self, s: usize, u: usize, t: usize) -> f64 {
        let d = self.d;
        let mut full = vec![0.0; d * d];
        let mut left = vec![0.0; d * d];
        let mut right = vec![0.0; d * d];
        let mut b_left = vec![0.0; d];
        let mut b_right = vec![0.0; d];
        self.iterated(s, t, &mut full);
        self.iterated(s, u, &mut left);
        self.iterated(u, t, &mut right);
        self.increment(s, u, &mut b_left);
        self.increment(u, t, &mut b_right);
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                let r = full[i * d + j]
                    - left[i * d + j]
                    - right[i * d + j]
                    - b_left[i] * b_right[j];
                worst = worst.max(r.abs());
            }
        }
        worst
    }
}

/// Ito lift of one driver substream: per-step `BB` from left-point local
/// sums over the micro refinement, coarser pairs by Chen.
pub fn ito_lift(
    driver: &BrownianDriver,
    stream: u64,
    steps: usize,
    micros_per_step: usize,
    alpha: f64,
) -> RoughLift {
    assert!(alpha > 1.0 / 3.0 && alpha < 0.5, "alpha outside (1/3, 1/2)");
    let d = driver.d;
    let mut step_increments = vec![0.0; steps * d];
    let mut step_iterated = vec![0.0; steps * d * d];
    let mut partial = vec![0.0; d];
    for k in 0..steps {
        let block = driver.micro_block(stream, (k * micros_per_step) as u64, micros_per_step);
        partial.fill(0.0);
        for l in 0..micros_per_step {
            let db = &block[l * d..(l + 1) * d];
            for i in 0..d {
                for j in 0..d {
                    step_iterated[(k * d + i) * d + j] += partial[i] * db[j];
                }
            }
            for c in 0..d {
                partial[c] += db[c];
            }
        }
        step_increments[k * d..(k + 1) * d].copy_from_slice(&partial);
    }
    RoughLift {
        d,
        dt: driver.micro_dt * micros_per_step as f64,
        alpha,
        step_increments,
        step_iterated,
    }
}

/// A grid path controlled by the Brownian driver of `lift`:
/// `x_{ts} = B_{ts} + O(|t-s|)` with the stated speed bound.
#[derive(Debug, Clone)]
pub struct ControlledPath {
    pub d: usize,
    /// flat `(steps+1) x d`
    pub positions: Vec<f64>,
    pub drift_bound: f64,
}

impl ControlledPath {
    pub fn position(&self, step: usize) -> &[f64] {
        &self.positions[step * self.d..(step + 1) * self.d]
    }

    /// Path of the driver itself (`x = B`, drift bound 0).
    pub fn pure_brownian(lift: &RoughLift, start: &[f64]) -> Self {
        let d = lift.d;
        let steps = lift.steps();
        let mut positions = vec![0.0; (steps + 1) * d];
        positions[..d].copy_from_slice(start);
        for k in 0..steps {
            for c in 0..d {
                positions[(k + 1) * d + c] =
                    positions[k * d + c] + lift.step_increments[k * d + c];
            }
        }
        ControlledPath {
            d,
            positions,
            drift_bound: 0.0,
        }
    }

    /// Frozen path `x = x0`.
    pub fn frozen(steps: usize, x0: &[f64]) -> Self {
        let d = x0.len();
        let mut positions = Vec::with_capacity((steps + 1) * d);
        for _ in 0..=steps {
            positions.extend_from_slice(x0);
        }
        ControlledPath {
            d,
            positions,
            drift_bound: 0.0,
        }
    }

    /// Worst violation of `|x_{ts} - B_{ts}| <= drift_bound |t - s|` over
    /// grid pairs (0 when the controlled bound holds everywhere).
    pub fn controlled_defect(&self, lift: &RoughLift) -> f64 {
        let d = self.d;
        let steps = lift.steps();
        let mut worst = 0.0f64;
        let mut b = vec![0.0; d];
        for lo in 0..steps {
            for hi in (lo + 1)..=steps {
                lift.increment(lo, hi, &mut b);
                let mut diff2 = 0.0;
                for c in 0..d {
                    let v = self.positions[hi * d + c] - self.positions[lo * d + c] - b[c];
                    diff2 += v * v;
                }
                let slack = diff2.sqrt() - self.drift_bound * (hi - lo) as f64 * lift.dt;
                worst = worst.max(slack);
            }
        }
        worst
    }
}

/// Cache of `S_{k dt} f` for gaps `k = 0..=max_gap`.
#[derive(Debug, Clone)]
pub struct HeatedTable {
    pub dt: f64,
    heated: Vec<TestFunction>,
}

impl HeatedTable {
    pub fn new(f: &TestFunction, dt: f64, max_gap: usize) -> Self {
        let heated = (0..=max_gap)
            .map(|k| apply_heat(f, k as f64 * dt))
            .collect();
        HeatedTable { dt, heated }
    }

    pub fn get(&self, gap: usize) -> &TestFunction {
        &self.heated[gap]
    }

    pub fn base(&self) -> &TestFunction {
        &self.heated[0]
    }
}

/// The germ `[A f]_{ts}` over a fixed controlled path and lift, with the
/// heated compositions `A(S_{t - u} f)` needed by `delta_hat` and the
/// sewing sums.
pub struct GermA<'a> {
    pub table: &'a HeatedTable,
    pub path: &'a ControlledPath,
    pub lift: &'a RoughLift,
}

impl<'a> GermA<'a> {
    pub fn new(table: &'a HeatedTable, path: &'a ControlledPath, lift: &'a RoughLift) -> Self {
        assert_eq!(path.d, lift.d);
        GermA { table, path, lift }
    }

    fn contract(&self, f: &TestFunction, x: &[f64], lo: usize, hi: usize) -> f64 {
        let d = self.lift.d;
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        f.gradient(x, &mut grad);
        f.hessian(x, &mut hess);
        let mut b = vec![0.0; d];
        let mut bb = vec![0.0; d * d];
        self.lift.increment(lo, hi, &mut b);
        self.lift.iterated(lo, hi, &mut bb);
        let mut acc = 0.0;
        for i in 0..d {
            acc += grad[i] * b[i];
            for j in 0..d {
                acc += hess[i * d + j] * bb[i * d + j];
            }
        }
        acc
    }

    /// `[A f]_{hi, lo}`: the semigroup gap is `hi - lo`.
    pub fn raw(&self, hi: usize, lo: usize) -> f64 {
        debug_assert!(lo <= hi);
        if lo == hi {
            return 0.0;
        }
        self.contract(self.table.get(hi - lo), self.path.position(lo), lo, hi)
    }

    /// `[A S_{t - hi} f]_{hi, lo}` for the sewing sum toward target `t`:
    /// by the semigroup law this is the gap `t - lo` heated function
    /// contracted on `(lo, hi)`.
    pub fn with_target(&self, target: usize, hi: usize, lo: usize) -> f64 {
        debug_assert!(lo <= hi && hi <= target);
        if lo == hi {
            return 0.0;
        }
        self.contract(self.table.get(target - lo), self.path.position(lo), lo, hi)
    }

    /// `[delta_hat A f]_{tus} = [Af]_{ts} - [Af]_{tu} - [A S_{t-u} f]_{us}`.
    pub fn delta_hat(&self, t: usize, u: usize, s: usize) -> f64 {
        debug_assert!(s <= u && u <= t);
        self.raw(t, s) - self.raw(t, u) - self.with_target(t, u, s)
    }

    /// The four-term split of `delta_hat A` used for the factored Holder
    /// estimates (their sum reproduces `delta_hat` identically):
    ///
    /// ```text
    /// A1 = grad (S_{ts} - S_{tu}) f (x_u) . B_{tu}
    /// A2 = D grad (S_{ts} - S_{tu}) f (x_u) : BB_{tu}
    /// A3 = (D grad S_{ts} f (x_s) - D grad S_{ts} f (x_u)) : BB_{tu}
    /// A4 = (grad S_{ts} f (x_s) - grad S_{ts} f (x_u)
    ///        + D grad S_{ts} f (x_s) B_{us}) . B_{tu}
    /// ```
    pub fn a_split(&self, t: usize, u: usize, s: usize) -> [f64; 4] {
        let d = self.lift.d;
        let f_ts = self.table.get(t - s);
        let f_tu = self.table.get(t - u);
        let xs = self.path.position(s);
        let xu = self.path.position(u);
        let mut b_tu = vec![0.0; d];
        let mut b_us = vec![0.0; d];
        let mut bb_tu = vec![0.0; d * d];
        self.lift.increment(u, t, &mut b_tu);
        self.lift.increment(s, u, &mut b_us);
        self.lift.iterated(u, t, &mut bb_tu);

        let mut g_ts_u = vec![0.0; d];
        let mut g_tu_u = vec![0.0; d];
        let mut g_ts_s = vec![0.0; d];
        f_ts.gradient(xu, &mut g_ts_u);
        f_tu.gradient(xu, &mut g_tu_u);
        f_ts.gradient(xs, &mut g_ts_s);
        let mut h_ts_u = vec![0.0; d * d];
        let mut h_tu_u = vec![0.0; d * d];
        let mut h_ts_s = vec![0.0; d * d];
        f_ts.hessian(xu, &mut h_ts_u);
        f_tu.hessian(xu, &mut h_tu_u);
        f_ts.hessian(xs, &mut h_ts_s);

        let mut a1 = 0.0;
        let mut a2 = 0.0;
        let mut a3 = 0.0;
        let mut a4 = 0.0;
        for i in 0..d {
            a1 += (g_ts_u[i] - g_tu_u[i]) * b_tu[i];
            let mut hb = 0.0;
            for j in 0..d {
                a2 += (h_ts_u[i * d + j] - h_tu_u[i * d + j]) * bb_tu[i * d + j];
                a3 += (h_ts_s[i * d + j] - h_ts_u[i * d + j]) * bb_tu[i * d + j];
                hb += h_ts_s[i * d + j] * b_us[j];
            }
            a4 += (g_ts_s[i] - g_ts_u[i] + hb) * b_tu[i];
        }
        [a1, a2, a3, a4]
    }
}

/// One sewing refinement level: the partition of `[0, target]` into
/// `blocks` nearly equal step runs, and its germ sum.
#[derive(Debug, Clone)]
pub struct SewingLevel {
    pub blocks: usize,
    pub partial_sum: f64,
}

#[derive(Debug, Clone)]
pub struct SewingResult {
    /// Full-grid (stride 1) sum, the integral value.
    pub value: f64,
    pub levels: Vec<SewingLevel>,
    /// |level_k - level_{k-1}| for successive levels.
    pub diffs: Vec<f64>,
    /// Geometric mean of successive diff ratios (decay factor per level);
    /// infinite when the diffs vanish.
    pub mean_ratio: f64,
}

/// Germ sum over the partition of `[0, target]` into `blocks` runs.
pub fn sewing_sum(germ: &GermA<'_>, target: usize, blocks: usize) -> f64 {
    assert!(target >= 1 && blocks >= 1);
    let blocks = blocks.min(target);
    let mut acc = 0.0;
    let mut lo = 0usize;
    for b in 0..blocks {
        let hi = ((b + 1) * target + blocks / 2) / blocks;
        let hi = hi.clamp(lo + 1, target);
        acc += germ.with_target(target, hi, lo);
        lo = hi;
        if lo == target {
            break;
        }
    }
    acc
}

/// Sewing construction of `integral_0^t (grad S_{t-u} f)(x_u) . dB_u`
/// with dyadic refinement diagnostics. `levels` runs over block counts
/// `1, 2, 4, ...` up to the full grid. Errors when the level differences
/// genuinely fail to decay.
pub fn sewing_integral(
    germ: &GermA<'_>,
    target: usize,
    min_levels: usize,
) -> Result<SewingResult, RoughError> {
    assert!(target >= 1);
    let mut block_counts = Vec::new();
    let mut b = 1usize;
    while b < target {
        block_counts.push(b);
        b *= 2;
    }
    block_counts.push(target);
    if block_counts.len() < min_levels {
        return Err(RoughError::BadInput(format!(
            "target {target} supports only {} dyadic levels, need {min_levels}",
            block_counts.len()
        )));
    }
    let levels: Vec<SewingLevel> = block_counts
        .iter()
        .map(|&blocks| SewingLevel {
            blocks,
            partial_sum: sewing_sum(germ, target, blocks),
        })
        .collect();
    let value = levels.last().unwrap().partial_sum;
    let diffs: Vec<f64> = levels
        .windows(2)
        .map(|w| (w[1].partial_sum - w[0].partial_sum).abs())
        .collect();
    let floor = 1e-13 * (1.0 + value.abs());
    let mut ratios = Vec::new();
    for w in diffs.windows(2) {
        if w[0] > floor || w[1] > floor {
            ratios.push(w[0].max(floor) / w[1].max(floor));
        }
    }
    let mean_ratio = if ratios.is_empty() {
        f64::INFINITY
    } else {
        let log_mean: f64 = ratios.iter().map(|r| r.ln()).sum::<f64>() / ratios.len() as f64;
        log_mean.exp()
    };
    // Per-level gaps of a single realization fluctuate below their
    // Holder-norm bound (the theoretical contraction is only
    // 2^(3 alpha - 1) per level), so the hard failure is reserved for a
    // finest gap that dwarfs everything before it; study aggregates
    // assert the >= 1.1 mean decay.
    if diffs.len() >= 2 {
        let max_early = diffs[..diffs.len() - 1]
            .iter()
            .cloned()
            .fold(floor, f64::max);
        if *diffs.last().unwrap() > 4.0 * max_early {
            return Err(RoughError::NonDecayingLevels {
                level: diffs.len() - 1,
                ratios,
            });
        }
    }
    Ok(SewingResult {
        value,
        levels,
        diffs,
        mean_ratio,
    })
}

/// Left-point Ito-Riemann sum of the same integral at the grid mesh.
pub fn ito_riemann_sum(germ: &GermA<'_>, target: usize) -> f64 {
    let d = germ.lift.d;
    let mut acc = 0.0;
    let mut b = vec![0.0; d];
    let mut grad = vec![0.0; d];
    for k in 0..target {
        germ.lift.increment(k, k + 1, &mut b);
        germ.table
            .get(target - k)
            .gradient(germ.path.position(k), &mut grad);
        for c in 0..d {
            acc += grad[c] * b[c];
        }
    }
    acc
}

/// Discrete Holder-norm estimates of the germ and of the four-term split
/// of `delta_hat A`. Discrete sups are lower bounds of the continuous
/// ones; the aggregate `3 alpha` bound uses the single-decomposition
/// upper bound assembled from the split.
#[derive(Debug, Clone)]
pub struct GermNorms {
    /// `sup |[Af]_{ts}| / ((t-s)^alpha ||f||_m)`.
    pub a_alpha: f64,
    /// Per-term sups with their natural exponent pairs
    /// `A1: (a, 1), A2: (2a, 1/2), A3: (2a, a), A4: (a, 2a)`.
    pub split: [f64; 4],
    /// Direct sup of `|delta_hat A| / ((t-u)(u-s))^{3a/2}` (reported).
    pub delta_direct: f64,
    /// Single-decomposition upper bound for the `3 alpha` norm:
    /// `A1 T^{1-2a} + A2 T^{1/2-a} + A3 + A4`, normalized by `||f||_m`.
    pub delta_3alpha_bound: f64,
}

pub fn germ_holder_norms(germ: &GermA<'_>, f_norm_m: f64, max_samples: usize) -> GermNorms {
    let steps = germ.lift.steps();
    let dt = germ.lift.dt;
    let alpha = germ.lift.alpha;
    let horizon = steps as f64 * dt;

    let total_pairs = steps * (steps + 1) / 2;
    let pair_stride = total_pairs.div_ceil(max_samples).max(1);
    let mut a_alpha = 0.0f64;
    let mut counter = 0usize;
    for lo in 0..steps {
        for hi in (lo + 1)..=steps {
            counter += 1;
            if counter % pair_stride != 0 && !(lo == 0 && hi == steps) {
                continue;
            }
            let gap = ((hi - lo) as f64 * dt).powf(alpha);
            a_alpha = a_alpha.max(germ.raw(hi, lo).abs() / (gap * f_norm_m));
        }
    }

    let total_triples = steps * steps * steps / 6 + 1;
    let triple_stride = total_triples.div_ceil(max_samples).max(1);
    let mut split = [0.0f64; 4];
    let mut delta_direct = 0.0f64;
    let exps = [
        (alpha, 1.0),
        (2.0 * alpha, 0.5),
        (2.0 * alpha, alpha),
        (alpha, 2.0 * alpha),
    ];
    counter = 0;
    for s in 0..steps {
        for u in (s + 1)..steps {
            for t in (u + 1)..=steps {
                counter += 1;
                if counter % triple_stride != 0 {
                    continue;
                }
                let tu = (t - u) as f64 * dt;
                let us = (u - s) as f64 * dt;
                let terms = germ.a_split(t, u, s);
                for (i, (g, r)) in exps.iter().enumerate() {
                    split[i] =
                        split[i].max(terms[i].abs() / (tu.powf(*g) * us.powf(*r) * f_norm_m));
                }
                let dh: f64 = terms.iter().sum();
                delta_direct =
                    delta_direct.max(dh.abs() / ((tu * us).powf(1.5 * alpha) * f_norm_m));
            }
        }
    }
    let delta_3alpha_bound = split[0] * horizon.powf(1.0 - 2.0 * alpha)
        + split[1] * horizon.powf(0.5 - alpha)
        + split[2]
        + split[3];
    GermNorms {
        a_alpha,
        split,
        delta_direct,
        delta_3alpha_bound,
    }
}

/// Generic 1-increment operator family `[q f]_t`; `delta_hat` lowers it to
/// a 2-increment via `[delta_hat q f]_{ts} = [q f]_t - [q S_{t-s} f]_s`.
pub trait OneIncrement {
    fn eval(&self, f: &TestFunction, t: usize) -> f64;
}

/// Generic 2-increment operator family `[B f]_{ts}` that accepts
/// semigroup-composed arguments.
pub trait TwoIncrement {
    fn eval(&self, f: &TestFunction, hi: usize, lo: usize) -> f64;
}

/// `delta_hat` on 1-increments with an injectable semigroup action (tests
/// freeze it to the identity to recover the classical coboundary).
pub struct DeltaHatOne<'a, Q: OneIncrement> {
    pub q: &'a Q,
    pub dt: f64,
    pub heat: fn(&TestFunction, f64) -> TestFunction,
}

impl<'a, Q: OneIncrement> TwoIncrement for DeltaHatOne<'a, Q> {
    fn eval(&self, f: &TestFunction, hi: usize, lo: usize) -> f64 {
        let heated = (self.heat)(f, (hi - lo) as f64 * self.dt);
        self.q.eval(f, hi) - self.q.eval(&heated, lo)
    }
}

/// `delta_hat` on 2-increments:
/// `[delta_hat B f]_{tus} = [Bf]_{ts} - [Bf]_{tu} - [B S_{t-u} f]_{us}`.
pub fn delta_hat_two<B: TwoIncrement>(
    b: &B,
    dt: f64,
    heat: fn(&TestFunction, f64) -> TestFunction,
    f: &TestFunction,
    t: usize,
    u: usize,
    s: usize,
) -> f64 {
    let heated = heat(f, (t - u) as f64 * dt);
    b.eval(f, t, s) - b.eval(f, t, u) - b.eval(&heated, u, s)
}

pub fn identity_heat(f: &TestFunction, _t: f64) -> TestFunction {
    f.clone()
}
