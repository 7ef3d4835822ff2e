//! Weakly interacting particle ensembles.
//!
//! The system is
//!
//! ```text
//! dx^i = (1/n) sum_{j=1..n} Gamma(x^i, x^j) dt + dB^i,   i = 1..n,
//! ```
//!
//! discretized by Euler-Maruyama (additive noise, strong order 1). The
//! diagonal term `j = i` is kept in the interaction sum. Brownian drivers
//! are counter-based micro-increment streams: each visible step is the sum
//! of `lift_refinement` micro increments, so the rough-path lift, coarser
//! step sizes, and nested particle ladders all consume the same noise
//! realization, and any increment can be replayed exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{NoiseField, Purpose};
use crate::sobolev::TestFunction;

#[derive(Debug, Error)]
pub enum ParticleError {
    #[error("invalid simulation config: {0}")]
    BadConfig(String),
    #[error("save time {time} is not aligned to the step grid")]
    SaveTimeMisaligned { time: f64 },
    #[error("non-finite position for particle {particle} at step {step}")]
    NonFinitePosition { particle: usize, step: usize },
}

type KernelFn = Box<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
type BatchDriftFn = Box<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>;

/// A bounded Lipschitz interaction kernel `Gamma(x, y) in R^d` with its
/// declared bounds. `batch` optionally provides an algebraically
/// equivalent whole-ensemble mean-field evaluation used by the hot loop.
pub struct InteractionKernel {
    pub description: String,
    pub lip_bound: f64,
    pub sup_bound: f64,
    eval: KernelFn,
    batch: Option<BatchDriftFn>,
}

impl std::fmt::Debug for InteractionKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InteractionKernel")
            .field("description", &self.description)
            .field("lip_bound", &self.lip_bound)
            .field("sup_bound", &self.sup_bound)
            .finish()
    }
}

impl InteractionKernel {
    pub fn new(
        description: impl Into<String>,
        lip_bound: f64,
        sup_bound: f64,
        eval: KernelFn,
    ) -> Self {
        InteractionKernel {
            description: description.into(),
            lip_bound,
            sup_bound,
            eval,
            batch: None,
        }
    }

    /// `Gamma = 0`.
    pub fn zero() -> Self {
        Self::new("zero", 0.0, 0.0, Box::new(|_, _, out| out.fill(0.0)))
    }

    /// Attractive kernel `Gamma(x, y)_k = tanh(y_k - x_k)`.
    pub fn tanh_attractive() -> Self {
        let mut k = Self::new(
            "tanh(y - x)",
            1.0,
            1.0,
            Box::new(|x, y, out| {
                for ((o, xv), yv) in out.iter_mut().zip(x).zip(y) {
                    *o = (yv - xv).tanh();
                }
            }),
        );
        // tanh(b - a) = (tanh b - tanh a) / (1 - tanh a tanh b); with the
        // per-particle tanh precomputed the pair loop is a few flops. Near
        // saturation (|tanh x| -> 1) the quotient degenerates and we fall
        // back to the direct form.
        k.batch = Some(Box::new(|d, positions, out| {
            if d != 1 {
                generic_batch_tanh(d, positions, out);
                return;
            }
            let n = positions.len();
            let tanhs: Vec<f64> = positions.iter().map(|x| x.tanh()).collect();
            out.par_chunks_mut(64)
                .enumerate()
                .for_each(|(ci, chunk)| {
                    for (local, o) in chunk.iter_mut().enumerate() {
                        let i = ci * 64 + local;
                        let ti = tanhs[i];
                        let mut acc = 0.0;
                        if ti.abs() < 0.999_999 {
                            for (&tj, &xj) in tanhs.iter().zip(positions) {
                                let denom = 1.0 - tj * ti;
                                if denom > 1e-8 {
                                    acc += (tj - ti) / denom;
                                } else {
                                    acc += (xj - positions[i]).tanh();
                                }
                            }
                        } else {
                            let xi = positions[i];
                            for &xj in positions {
                                acc += (xj - xi).tanh();
                            }
                        }
                        *o = acc / n as f64;
                    }
                });
        }));
        k
    }

    /// Kernel depending only on `y`: `Gamma(x, y) = g(y)`.
    pub fn field_of_y(g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static, sup: f64) -> Self {
        Self::new("g(y)", 0.0, sup, Box::new(move |_x, y, out| g(y, out)))
    }

    pub fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.eval)(x, y, out)
    }

    /// Random probing of the declared bounds; returns the worst observed
    /// `|Gamma|` and Lipschitz quotient.
    pub fn probe_bounds(&self, d: usize, trials: usize, seed: u64) -> (f64, f64) {
        let field = NoiseField::new(seed, Purpose::Auxiliary, 7);
        let mut s = field.stream(0);
        let mut worst_sup = 0.0f64;
        let mut worst_lip = 0.0f64;
        let mut g = vec![0.0; d];
        let mut g2 = vec![0.0; d];
        for _ in 0..trials {
            let x: Vec<f64> = (0..d).map(|_| 3.0 * s.next()).collect();
            let y: Vec<f64> = (0..d).map(|_| 3.0 * s.next()).collect();
            let x2: Vec<f64> = (0..d).map(|k| x[k] + 0.3 * s.next()).collect();
            let y2: Vec<f64> = (0..d).map(|k| y[k] + 0.3 * s.next()).collect();
            self.eval(&x, &y, &mut g);
            worst_sup = worst_sup.max(norm(&g));
            self.eval(&x2, &y2, &mut g2);
            let dist = l2_dist(&x, &x2) + l2_dist(&y, &y2);
            if dist > 1e-12 {
                let diff: f64 = g
                    .iter()
                    .zip(&g2)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                worst_lip = worst_lip.max(diff / dist);
            }
        }
        (worst_sup, worst_lip)
    }
}

fn generic_batch_tanh(d: usize, positions: &[f64], out: &mut [f64]) {
    let n = positions.len() / d;
    out.par_chunks_mut(d).enumerate().for_each(|(i, drift)| {
        drift.fill(0.0);
        let xi = &positions[i * d..(i + 1) * d];
        for j in 0..n {
            let xj = &positions[j * d..(j + 1) * d];
            for k in 0..d {
                drift[k] += (xj[k] - xi[k]).tanh();
            }
        }
        for v in drift.iter_mut() {
            *v /= n as f64;
        }
    });
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Initial condition of the ensemble.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InitialLaw {
    /// Explicit positions, flat `n x d`.
    DeterministicList(Vec<f64>),
    IidGaussian { mean: f64, std: f64 },
    /// No moments; exercises the weak-convergence-only hypothesis.
    IidCauchy { location: f64, scale: f64 },
    /// Random cluster choice `+-offset` plus Gaussian jitter.
    IidTwoCluster { offset: f64, std: f64 },
    /// Alternating `+-offset`, deliberately non-IID and non-random.
    TwoClusterDeterministic { offset: f64 },
}

impl InitialLaw {
    fn sample_particle(
        &self,
        d: usize,
        index: usize,
        stream: &mut crate::rng::NormalStream,
    ) -> Vec<f64> {
        match self {
            InitialLaw::DeterministicList(list) => list[index * d..(index + 1) * d].to_vec(),
            InitialLaw::IidGaussian { mean, std } => {
                (0..d).map(|_| mean + std * stream.next()).collect()
            }
            InitialLaw::IidCauchy { location, scale } => (0..d)
                .map(|_| location + scale * stream.next_cauchy())
                .collect(),
            InitialLaw::IidTwoCluster { offset, std } => {
                let side = if stream.next() >= 0.0 { 1.0 } else { -1.0 };
                let mut x: Vec<f64> = (0..d).map(|_| std * stream.next()).collect();
                x[0] += side * offset;
                x
            }
            InitialLaw::TwoClusterDeterministic { offset } => {
                let mut x = vec![0.0; d];
                x[0] = if index % 2 == 0 { *offset } else { -*offset };
                x
            }
        }
    }
}

/// Simulation parameters. `save_times` must sit on the step grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_horizon: f64,
    pub dt: f64,
    pub n: usize,
    pub d: usize,
    pub save_times: Vec<f64>,
    pub initial: InitialLaw,
    pub seed: u64,
    #[serde(default)]
    pub replica: u64,
    /// Micro sub-steps per visible step (feeds the rough-path lift).
    #[serde(default = "default_lift_refinement")]
    pub lift_refinement: usize,
    /// Optional additive drift `F`, one scalar mixture per coordinate.
    #[serde(default)]
    pub additive_drift: Option<Vec<TestFunction>>,
}

fn default_lift_refinement() -> usize {
    16
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ParticleError> {
        if !(self.dt > 0.0 && self.dt <= self.t_horizon) {
            return Err(ParticleError::BadConfig(format!(
                "need 0 < dt <= T, got dt={} T={}",
                self.dt, self.t_horizon
            )));
        }
        if self.n == 0 || self.d == 0 {
            return Err(ParticleError::BadConfig("n and d must be positive".into()));
        }
        if self.lift_refinement == 0 {
            return Err(ParticleError::BadConfig(
                "lift_refinement must be positive".into(),
            ));
        }
        let steps = (self.t_horizon / self.dt).round();
        if (self.t_horizon - steps * self.dt).abs() > 1e-9 * self.t_horizon.max(1.0) {
            return Err(ParticleError::BadConfig(format!(
                "dt={} does not divide T={}",
                self.dt, self.t_horizon
            )));
        }
        let mut last = -1.0;
        for &s in &self.save_times {
            if !(0.0..=self.t_horizon + 1e-12).contains(&s) || s < last {
                return Err(ParticleError::BadConfig(
                    "save_times must be sorted inside [0, T]".into(),
                ));
            }
            last = s;
        }
        self.save_step_indices()?;
        if let Some(f) = &self.additive_drift {
            if f.len() != self.d {
                return Err(ParticleError::BadConfig(
                    "additive drift needs one component per coordinate".into(),
                ));
            }
        }
        if let InitialLaw::DeterministicList(list) = &self.initial {
            if list.len() != self.n * self.d {
                return Err(ParticleError::BadConfig(format!(
                    "deterministic list length {} != n*d = {}",
                    list.len(),
                    self.n * self.d
                )));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_horizon / self.dt).round() as usize
    }

    pub fn save_step_indices(&self) -> Result<Vec<usize>, ParticleError> {
        let tol = 1e-12 * self.t_horizon.max(1.0);
        self.save_times
            .iter()
            .map(|&s| {
                let k = (s / self.dt).round();
                if (s - k * self.dt).abs() > tol {
                    Err(ParticleError::SaveTimeMisaligned { time: s })
                } else {
                    Ok(k as usize)
                }
            })
            .collect()
    }

    pub fn micro_dt(&self) -> f64 {
        self.dt / self.lift_refinement as f64
    }
}

/// Snapshot of the particle system. `stream_ids[i]` names the noise
/// substream driving particle `i`; it defaults to the particle index and
/// is a pure function of `(seed, index)`.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub d: usize,
    pub positions: Vec<f64>,
    pub t: f64,
    pub seed: u64,
    pub stream_ids: Vec<u64>,
}

impl ParticleEnsemble {
    pub fn n(&self) -> usize {
        self.stream_ids.len()
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.d..(i + 1) * self.d]
    }

    /// Draws the initial ensemble. Particle `i` samples from its own
    /// initial-law substream, so the first `k` particles of any two
    /// ensembles with the same seed coincide.
    pub fn sample(initial: &InitialLaw, n: usize, d: usize, seed: u64) -> Self {
        let field = NoiseField::new(seed, Purpose::InitialLaw, 0);
        let mut positions = Vec::with_capacity(n * d);
        for i in 0..n {
            let mut stream = field.stream(i as u64);
            positions.extend(initial.sample_particle(d, i, &mut stream));
        }
        ParticleEnsemble {
            d,
            positions,
            t: 0.0,
            seed,
            stream_ids: (0..n as u64).collect(),
        }
    }
}

/// Mean-field drift on particle `i`: `(1/n) sum_j Gamma(x_i, x_j)`, the
/// diagonal term included.
pub fn mean_field_drift(ens: &ParticleEnsemble, kernel: &InteractionKernel, i: usize) -> Vec<f64> {
    let d = ens.d;
    let n = ens.n();
    let xi = ens.position(i);
    let mut acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    for j in 0..n {
        kernel.eval(xi, ens.position(j), &mut g);
        for k in 0..d {
            acc[k] += g[k];
        }
    }
    for v in &mut acc {
        *v /= n as f64;
    }
    acc
}

/// Whole-ensemble drift; uses the kernel's batch path when present,
/// otherwise the generic pair loop (parallel over rows, each row summed
/// in index order so results are scheduling-invariant).
pub fn drift_all(ens: &ParticleEnsemble, kernel: &InteractionKernel, out: &mut [f64]) {
    let d = ens.d;
    let n = ens.n();
    assert_eq!(out.len(), n * d);
    if let Some(batch) = &kernel.batch {
        batch(d, &ens.positions, out);
        return;
    }
    let positions = &ens.positions;
    out.par_chunks_mut(d).enumerate().for_each(|(i, drift)| {
        drift.fill(0.0);
        let xi = &positions[i * d..(i + 1) * d];
        let mut g = vec![0.0; d];
        for j in 0..n {
            kernel.eval(xi, &positions[j * d..(j + 1) * d], &mut g);
            for k in 0..d {
                drift[k] += g[k];
            }
        }
        for v in drift.iter_mut() {
            *v /= n as f64;
        }
    });
}

/// One Euler-Maruyama step with caller-supplied Brownian increments
/// (flat `n x d`). Fails hard, naming the particle, if a position leaves
/// the finite range.
pub fn em_step(
    ens: &ParticleEnsemble,
    kernel: &InteractionKernel,
    dt: f64,
    increments: &[f64],
    additive: Option<&[TestFunction]>,
) -> Result<ParticleEnsemble, ParticleError> {
    let d = ens.d;
    let n = ens.n();
    assert_eq!(increments.len(), n * d);
    let mut drift = vec![0.0; n * d];
    drift_all(ens, kernel, &mut drift);
    let mut positions = vec![0.0; n * d];
    let mut extra = vec![0.0; d];
    for i in 0..n {
        let xi = ens.position(i);
        if let Some(f) = additive {
            for (k, comp) in f.iter().enumerate() {
                extra[k] = comp.value(xi);
            }
        }
        for k in 0..d {
            let idx = i * d + k;
            let e = if additive.is_some() { extra[k] } else { 0.0 };
            let v = ens.positions[idx] + (drift[idx] + e) * dt + increments[idx];
            if !v.is_finite() {
                return Err(ParticleError::NonFinitePosition {
                    particle: i,
                    step: (ens.t / dt).round() as usize,
                });
            }
            positions[idx] = v;
        }
    }
    Ok(ParticleEnsemble {
        d,
        positions,
        t: ens.t + dt,
        seed: ens.seed,
        stream_ids: ens.stream_ids.clone(),
    })
}

/// Counter-based Brownian micro-increment source. Purely a view: nothing
/// is stored, any block can be regenerated.
#[derive(Debug, Clone)]
pub struct BrownianDriver {
    field: NoiseField,
    pub d: usize,
    pub micro_dt: f64,
}

impl BrownianDriver {
    pub fn new(seed: u64, replica: u64, d: usize, micro_dt: f64) -> Self {
        assert!(micro_dt > 0.0);
        BrownianDriver {
            field: NoiseField::new(seed, Purpose::Increments, replica),
            d,
            micro_dt,
        }
    }

    /// `count` micro increments starting at `micro_start`, each
    /// `N(0, micro_dt Id)`, flat `count x d`.
    pub fn micro_block(&self, stream: u64, micro_start: u64, count: usize) -> Vec<f64> {
        let mut out = vec![0.0; count * self.d];
        self.field
            .normals_at(stream, micro_start * self.d as u64, &mut out);
        let scale = self.micro_dt.sqrt();
        for v in &mut out {
            *v *= scale;
        }
        out
    }

    /// Increment over the micro window `[micro_start, micro_start + count)`.
    pub fn window_increment(&self, stream: u64, micro_start: u64, count: usize, out: &mut [f64]) {
        let block = self.micro_block(stream, micro_start, count);
        out[..self.d].fill(0.0);
        for c in 0..count {
            for k in 0..self.d {
                out[k] += block[c * self.d + k];
            }
        }
    }
}

/// Full-grid trajectory: positions at every visible step, plus the driver
/// needed to replay or lift the underlying noise.
#[derive(Debug, Clone)]
pub struct GridTrajectory {
    pub times: Vec<f64>,
    /// `times.len()` snapshots, each flat `n x d`.
    pub positions: Vec<Vec<f64>>,
    pub driver: BrownianDriver,
    pub dt: f64,
    pub micros_per_step: usize,
    pub stream_ids: Vec<u64>,
    pub d: usize,
}

impl GridTrajectory {
    pub fn n(&self) -> usize {
        self.stream_ids.len()
    }

    pub fn snapshot(&self, step: usize) -> &[f64] {
        &self.positions[step]
    }

    /// Visible-step increment for particle `i` over `[t_k, t_{k+1}]`.
    pub fn step_increment(&self, i: usize, step: usize, out: &mut [f64]) {
        self.driver.window_increment(
            self.stream_ids[i],
            (step * self.micros_per_step) as u64,
            self.micros_per_step,
            out,
        );
    }
}

/// Runs the ensemble on the full step grid with a caller-supplied driver
/// (the driver's micro mesh must subdivide `cfg.dt`).
pub fn simulate_grid_with_driver(
    cfg: &SimConfig,
    kernel: &InteractionKernel,
    driver: &BrownianDriver,
) -> Result<GridTrajectory, ParticleError> {
    cfg.validate()?;
    let ratio = cfg.dt / driver.micro_dt;
    let micros_per_step = ratio.round() as usize;
    if micros_per_step == 0 || (ratio - micros_per_step as f64).abs() > 1e-9 {
        return Err(ParticleError::BadConfig(format!(
            "driver micro mesh {} does not subdivide dt {}",
            driver.micro_dt, cfg.dt
        )));
    }
    let steps = cfg.steps();
    let n = cfg.n;
    let d = cfg.d;
    let mut ens = ParticleEnsemble::sample(&cfg.initial, n, d, cfg.seed);
    let mut times = Vec::with_capacity(steps + 1);
    let mut positions = Vec::with_capacity(steps + 1);
    times.push(0.0);
    positions.push(ens.positions.clone());

    let mut increments = vec![0.0; n * d];
    for step in 0..steps {
        {
            let stream_ids = &ens.stream_ids;
            increments
                .par_chunks_mut(d)
                .enumerate()
                .for_each(|(i, out)| {
                    driver.window_increment(
                        stream_ids[i],
                        (step * micros_per_step) as u64,
                        micros_per_step,
                        out,
                    );
                });
        }
        ens = em_step(&ens, kernel, cfg.dt, &increments, cfg.additive_drift.as_deref())?;
        ens.t = (step + 1) as f64 * cfg.dt;
        times.push(ens.t);
        positions.push(ens.positions.clone());
    }
    Ok(GridTrajectory {
        times,
        positions,
        driver: driver.clone(),
        dt: cfg.dt,
        micros_per_step,
        stream_ids: ens.stream_ids,
        d,
    })
}

pub fn simulate_grid(
    cfg: &SimConfig,
    kernel: &InteractionKernel,
) -> Result<GridTrajectory, ParticleError> {
    let driver = BrownianDriver::new(cfg.seed, cfg.replica, cfg.d, cfg.micro_dt());
    simulate_grid_with_driver(cfg, kernel, &driver)
}

/// Trajectory record at the configured save times plus the replayable
/// increment record (the driver inside `grid`).
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub save_times: Vec<f64>,
    /// One flat `n x d` snapshot per save time, in time order.
    pub snapshots: Vec<Vec<f64>>,
    pub grid: GridTrajectory,
}

pub fn simulate_paths(
    cfg: &SimConfig,
    kernel: &InteractionKernel,
) -> Result<SimOutput, ParticleError> {
    let indices = cfg.save_step_indices()?;
    let grid = simulate_grid(cfg, kernel)?;
    let snapshots = indices
        .iter()
        .map(|&k| grid.positions[k].clone())
        .collect();
    Ok(SimOutput {
        save_times: cfg.save_times.clone(),
        snapshots,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_cfg(n: usize) -> SimConfig {
        SimConfig {
            t_horizon: 1.0,
            dt: 0.125,
            n,
            d: 1,
            save_times: vec![0.0, 0.5, 1.0],
            initial: InitialLaw::IidGaussian { mean: 0.0, std: 1.0 },
            seed: 42,
            replica: 0,
            lift_refinement: 16,
            additive_drift: None,
        }
    }

    #[test]
    fn zero_kernel_zero_drift() {
        let ens = ParticleEnsemble::sample(
            &InitialLaw::IidGaussian { mean: 0.0, std: 1.0 },
            5,
            2,
            1,
        );
        let drift = mean_field_drift(&ens, &InteractionKernel::zero(), 0);
        assert_eq!(drift, vec![0.0, 0.0]);
    }

    #[test]
    fn tanh_drift_two_particle_hand_value() {
        // positions {0, 2}: drift at particle 1 = (tanh 0 + tanh 2)/2.
        let ens = ParticleEnsemble {
            d: 1,
            positions: vec![0.0, 2.0],
            t: 0.0,
            seed: 0,
            stream_ids: vec![0, 1],
        };
        let drift = mean_field_drift(&ens, &InteractionKernel::tanh_attractive(), 0);
        let oracle = (0.0f64.tanh() + 2.0f64.tanh()) / 2.0;
        assert_relative_eq!(drift[0], oracle, max_relative = 1e-15);
        assert_relative_eq!(oracle, 0.48201, max_relative = 1e-4);
    }

    #[test]
    fn y_only_kernel_gives_common_drift() {
        let kernel = InteractionKernel::field_of_y(|y, out| out[0] = (0.5 * y[0]).sin(), 1.0);
        let ens = ParticleEnsemble {
            d: 1,
            positions: vec![-1.0, 0.3, 2.2, 0.9],
            t: 0.0,
            seed: 0,
            stream_ids: vec![0, 1, 2, 3],
        };
        let expected: f64 = ens.positions.iter().map(|x| (0.5 * x).sin()).sum::<f64>() / 4.0;
        for i in 0..4 {
            let drift = mean_field_drift(&ens, &kernel, i);
            assert_relative_eq!(drift[0], expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn batch_drift_matches_generic_path() {
        let kernel = InteractionKernel::tanh_attractive();
        let generic = InteractionKernel::new(
            "tanh reference",
            1.0,
            1.0,
            Box::new(|x, y, out| out[0] = (y[0] - x[0]).tanh()),
        );
        let mut positions: Vec<f64> = (0..200)
            .map(|i| ((i * i) as f64 * 0.37).sin() * 3.0)
            .collect();
        positions[0] = 25.0; // saturated tanh region
        positions[1] = -40.0;
        let ens = ParticleEnsemble {
            d: 1,
            positions,
            t: 0.0,
            seed: 0,
            stream_ids: (0..200).collect(),
        };
        let mut fast = vec![0.0; 200];
        let mut slow = vec![0.0; 200];
        drift_all(&ens, &kernel, &mut fast);
        drift_all(&ens, &generic, &mut slow);
        for i in 0..200 {
            assert!(
                (fast[i] - slow[i]).abs() <= 1e-12,
                "i={i}: {} vs {}",
                fast[i],
                slow[i]
            );
        }
    }

    #[test]
    fn drift_bounded_by_kernel_sup() {
        let kernel = InteractionKernel::tanh_attractive();
        let ens = ParticleEnsemble::sample(
            &InitialLaw::IidCauchy { location: 0.0, scale: 1.0 },
            64,
            1,
            9,
        );
        for i in 0..ens.n() {
            let drift = mean_field_drift(&ens, &kernel, i);
            assert!(norm(&drift) <= kernel.sup_bound + 1e-12);
        }
    }

    #[test]
    fn kernel_probe_respects_declared_bounds() {
        let kernel = InteractionKernel::tanh_attractive();
        let (sup, lip) = kernel.probe_bounds(1, 500, 3);
        assert!(sup <= kernel.sup_bound + 1e-12);
        assert!(lip <= kernel.lip_bound + 1e-9);
    }

    #[test]
    fn em_step_trivial_cases() {
        let ens = ParticleEnsemble::sample(
            &InitialLaw::IidGaussian { mean: 0.0, std: 1.0 },
            8,
            1,
            5,
        );
        let zero = InteractionKernel::zero();
        let no_noise = vec![0.0; 8];
        let stepped = em_step(&ens, &zero, 0.25, &no_noise, None).unwrap();
        assert_eq!(stepped.positions, ens.positions);
        assert_relative_eq!(stepped.t, 0.25);

        let w: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let moved = em_step(&ens, &zero, 0.25, &w, None).unwrap();
        for i in 0..8 {
            assert_relative_eq!(moved.positions[i], ens.positions[i] + w[i]);
        }
    }

    #[test]
    fn em_step_rejects_nonfinite() {
        let ens = ParticleEnsemble {
            d: 1,
            positions: vec![0.0, 1.0],
            t: 0.0,
            seed: 0,
            stream_ids: vec![0, 1],
        };
        let err = em_step(&ens, &InteractionKernel::zero(), 0.1, &[f64::INFINITY, 0.0], None)
            .unwrap_err();
        match err {
            ParticleError::NonFinitePosition { particle, .. } => assert_eq!(particle, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn single_particle_terminal_variance() {
        // n = 1, tanh kernel: self-interaction tanh(0) = 0, so the path is
        // pure Brownian motion; terminal variance over 10^4 replicas ~ T.
        let kernel = InteractionKernel::tanh_attractive();
        let replicas = 10_000;
        let t_horizon = 1.0;
        let terminal: Vec<f64> = (0..replicas)
            .map(|r| {
                let mut cfg = base_cfg(1);
                cfg.replica = r as u64;
                cfg.initial = InitialLaw::DeterministicList(vec![0.0]);
                let grid = simulate_grid(&cfg, &kernel).unwrap();
                grid.positions.last().unwrap()[0]
            })
            .collect();
        let mean = crate::stats::pairwise_sum(&terminal) / replicas as f64;
        let var = terminal
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / (replicas - 1) as f64;
        // standard error of the variance estimator ~ T sqrt(2/R)
        let se = t_horizon * (2.0 / replicas as f64).sqrt();
        assert!((var - t_horizon).abs() <= 3.0 * se, "var {var}");
        let mean_se = (t_horizon / replicas as f64).sqrt();
        assert!(mean.abs() <= 3.0 * mean_se, "mean {mean}");
    }

    #[test]
    fn same_seed_bitwise_identical() {
        let cfg = base_cfg(16);
        let kernel = InteractionKernel::tanh_attractive();
        let a = simulate_grid(&cfg, &kernel).unwrap();
        let b = simulate_grid(&cfg, &kernel).unwrap();
        for (pa, pb) in a.positions.iter().zip(&b.positions) {
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn replaying_increments_reproduces_trajectory() {
        let cfg = base_cfg(12);
        let kernel = InteractionKernel::tanh_attractive();
        let grid = simulate_grid(&cfg, &kernel).unwrap();
        let mut ens = ParticleEnsemble::sample(&cfg.initial, cfg.n, cfg.d, cfg.seed);
        let mut inc = vec![0.0; cfg.n * cfg.d];
        for step in 0..cfg.steps() {
            for i in 0..cfg.n {
                let mut w = [0.0];
                grid.step_increment(i, step, &mut w);
                inc[i] = w[0];
            }
            ens = em_step(&ens, &kernel, cfg.dt, &inc, None).unwrap();
            assert_eq!(ens.positions, grid.positions[step + 1], "step {step}");
        }
    }

    #[test]
    fn exchangeability_under_permutation() {
        // Permuting initial positions together with their noise substreams
        // permutes trajectories. Exact for the zero kernel; up to summation
        // rounding for an interacting one.
        let kernel = InteractionKernel::zero();
        let n = 6;
        let base = ParticleEnsemble::sample(
            &InitialLaw::IidGaussian { mean: 0.0, std: 1.0 },
            n,
            1,
            77,
        );
        let perm = [3usize, 0, 4, 1, 5, 2];
        let permuted = ParticleEnsemble {
            d: 1,
            positions: perm.iter().map(|&p| base.positions[p]).collect(),
            t: 0.0,
            seed: base.seed,
            stream_ids: perm.iter().map(|&p| base.stream_ids[p]).collect(),
        };
        let driver = BrownianDriver::new(77, 0, 1, 0.125 / 16.0);
        let step_both = |ens: &ParticleEnsemble, k: &InteractionKernel| {
            let mut inc = vec![0.0; n];
            for i in 0..n {
                let mut w = [0.0];
                driver.window_increment(ens.stream_ids[i], 0, 16, &mut w);
                inc[i] = w[0];
            }
            em_step(ens, k, 0.125, &inc, None).unwrap()
        };
        let a = step_both(&base, &kernel);
        let b = step_both(&permuted, &kernel);
        for (slot, &p) in perm.iter().enumerate() {
            assert_eq!(b.positions[slot], a.positions[p]);
        }

        let tanh = InteractionKernel::tanh_attractive();
        let a = step_both(&base, &tanh);
        let b = step_both(&permuted, &tanh);
        for (slot, &p) in perm.iter().enumerate() {
            assert!((b.positions[slot] - a.positions[p]).abs() < 1e-12);
        }
    }

    #[test]
    fn martingale_mean_zero_over_replicas() {
        // Gamma = 0, deterministic start at 0: E[x_T] = 0.
        let replicas = 10_000usize;
        let zero = InteractionKernel::zero();
        let terminal: Vec<f64> = (0..replicas)
            .map(|r| {
                let mut cfg = base_cfg(1);
                cfg.dt = 0.25;
                cfg.replica = r as u64;
                cfg.initial = InitialLaw::DeterministicList(vec![0.0]);
                let grid = simulate_grid(&cfg, &zero).unwrap();
                grid.positions.last().unwrap()[0]
            })
            .collect();
        let s = crate::stats::Summary::from_sample(&terminal);
        assert!(s.mean.abs() <= 3.0 * s.stderr.max(1e-6), "mean {}", s.mean);
    }

    #[test]
    fn attractive_kernel_contracts_two_clusters() {
        // two clusters at +-3, n = 200: the mean gap shrinks by T = 1.
        let kernel = InteractionKernel::tanh_attractive();
        let replicas = 30;
        let mut gaps = Vec::new();
        for r in 0..replicas {
            let mut cfg = base_cfg(200);
            cfg.dt = 1.0 / 32.0;
            cfg.replica = r;
            cfg.initial = InitialLaw::TwoClusterDeterministic { offset: 3.0 };
            let grid = simulate_grid(&cfg, &kernel).unwrap();
            let last = grid.positions.last().unwrap();
            let plus: f64 = last.iter().step_by(2).sum::<f64>() / 100.0;
            let minus: f64 = last.iter().skip(1).step_by(2).sum::<f64>() / 100.0;
            gaps.push(plus - minus);
        }
        let mean_gap = crate::stats::pairwise_sum(&gaps) / replicas as f64;
        assert!(
            mean_gap < 6.0 && mean_gap > 0.0,
            "terminal mean gap {mean_gap}"
        );
    }

    #[test]
    fn nested_ladder_reuses_noise_and_initial_conditions() {
        let kernel = InteractionKernel::zero();
        let small = simulate_grid(&base_cfg(25), &kernel).unwrap();
        let large = simulate_grid(&base_cfg(100), &kernel).unwrap();
        // with Gamma = 0 trajectories of shared particles coincide exactly
        for step in 0..small.positions.len() {
            assert_eq!(
                &large.positions[step][..25],
                &small.positions[step][..],
                "step {step}"
            );
        }
    }

    #[test]
    fn step_refinement_shows_first_order_strong_convergence() {
        // Fixed realization, dt halving: successive terminal differences
        // shrink by ~2 (strong order 1 for additive noise).
        let kernel = InteractionKernel::tanh_attractive();
        let dt_fine = 1.0 / 64.0;
        let driver = BrownianDriver::new(11, 0, 1, dt_fine / 16.0);
        let mut terminals = Vec::new();
        for level in 0..3 {
            let mut cfg = base_cfg(32);
            cfg.dt = dt_fine * (4 >> level) as f64; // dt, dt/2, dt/4
            cfg.save_times = vec![0.0, 1.0];
            cfg.seed = 11;
            let grid = simulate_grid_with_driver(&cfg, &kernel, &driver).unwrap();
            terminals.push(grid.positions.last().unwrap().clone());
        }
        let d01 = l2_dist(&terminals[0], &terminals[1]);
        let d12 = l2_dist(&terminals[1], &terminals[2]);
        let ratio = d01 / d12;
        assert!(
            (1.6..=2.4).contains(&ratio),
            "refinement ratio {ratio} (diffs {d01}, {d12})"
        );
    }

    #[test]
    fn additive_drift_hook_matches_manual_euler() {
        let f = vec![TestFunction::single_bump(1, 0.4, vec![0.0], 1.2)];
        let cfg = {
            let mut cfg = base_cfg(1);
            cfg.initial = InitialLaw::DeterministicList(vec![0.3]);
            cfg.additive_drift = Some(f.clone());
            cfg
        };
        let zero = InteractionKernel::zero();
        // frozen noise: compare against the deterministic Euler iteration
        let ens = ParticleEnsemble::sample(&cfg.initial, 1, 1, cfg.seed);
        let mut manual = 0.3;
        let mut current = ens;
        for _ in 0..4 {
            current = em_step(&current, &zero, cfg.dt, &[0.0], Some(&f)).unwrap();
            manual += cfg.dt * f[0].value(&[manual]);
        }
        assert_relative_eq!(current.positions[0], manual, max_relative = 1e-12);
    }

    #[test]
    fn config_validation_catches_misaligned_saves() {
        let mut cfg = base_cfg(4);
        cfg.save_times = vec![0.3];
        assert!(matches!(
            cfg.validate(),
            Err(ParticleError::SaveTimeMisaligned { .. })
        ));
        let mut cfg = base_cfg(4);
        cfg.dt = 0.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn cauchy_initial_law_has_heavy_tails() {
        let ens = ParticleEnsemble::sample(
            &InitialLaw::IidCauchy { location: 0.0, scale: 1.0 },
            4000,
            1,
            123,
        );
        let far = ens.positions.iter().filter(|x| x.abs() > 20.0).count();
        // P(|X| > 20) ~ 2/(pi*20) ~ 3.2%; demand a nontrivial tail count
        assert!(far > 40, "only {far} far atoms");
        assert!(ens.positions.iter().all(|x| x.is_finite()));
    }
}
