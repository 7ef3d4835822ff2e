//! The averaged noise functional
//!
//! ```text
//! w^n_t(h) = (1/n) sum_j integral_0^t (grad S_{t-s} h)(x^j_s) . dB^j_s
//! ```
//!
//! by two routes (rough-path sewing and left-point Ito sums), together
//! with the statistical studies built on it: the exact Ornstein-Uhlenbeck
//! toy model, the self-normalized maximal-ratio study, and the `O(1/n)`
//! decay of `E sup_t |w^n_t(h)|^2`.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::particles::{GridTrajectory, ParticleError};
use crate::rng::{NoiseField, Purpose};
use crate::roughpath::{
    ito_lift, ito_riemann_sum, sewing_sum, ControlledPath, GermA, HeatedTable, RoughError,
    RoughLift,
};
use crate::sobolev::TestFunction;
use crate::stats::{pairwise_sum, SlopeFit, Summary};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("noise decay slope {slope:.3} shallower than the {limit} failure line")]
    SlopeTooShallow { slope: f64, limit: f64 },
    #[error("{0}")]
    BadConfig(String),
    #[error(transparent)]
    Particle(#[from] ParticleError),
    #[error(transparent)]
    Rough(#[from] RoughError),
}

/// How to evaluate the per-particle integrals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMethod {
    Sewing,
    ItoSum,
}

/// Per-particle lifts, controlled paths, and heated-function cache over
/// one trajectory; everything needed to evaluate `w^n_t(h)` at any grid
/// time by either method.
pub struct NoiseEvaluator<'a> {
    pub traj: &'a GridTrajectory,
    pub table: HeatedTable,
    lifts: Vec<RoughLift>,
    paths: Vec<ControlledPath>,
}

/// Both method values at one time, with the sewing route's own
/// half-partition gap as the agreement yardstick.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CheckedNoise {
    pub t: f64,
    pub sewing: f64,
    pub ito_sum: f64,
    pub self_gap: f64,
    pub flagged: bool,
}

impl<'a> NoiseEvaluator<'a> {
    pub fn new(traj: &'a GridTrajectory, h: &TestFunction, alpha: f64, drift_bound: f64) -> Self {
        let steps = traj.positions.len() - 1;
        let n = traj.n();
        let d = traj.d;
        let table = HeatedTable::new(h, traj.dt, steps);
        let lifts: Vec<RoughLift> = (0..n)
            .into_par_iter()
            .map(|j| {
                ito_lift(
                    &traj.driver,
                    traj.stream_ids[j],
                    steps,
                    traj.micros_per_step,
                    alpha,
                )
            })
            .collect();
        let paths: Vec<ControlledPath> = (0..n)
            .map(|j| {
                let mut positions = Vec::with_capacity((steps + 1) * d);
                for snap in &traj.positions {
                    positions.extend_from_slice(&snap[j * d..(j + 1) * d]);
                }
                ControlledPath {
                    d,
                    positions,
                    drift_bound,
                }
            })
            .collect();
        NoiseEvaluator {
            traj,
            table,
            lifts,
            paths,
        }
    }

    /// Build from explicit parts (tests use this to freeze drivers).
    pub fn from_parts(
        traj: &'a GridTrajectory,
        table: HeatedTable,
        lifts: Vec<RoughLift>,
        paths: Vec<ControlledPath>,
    ) -> Self {
        NoiseEvaluator {
            traj,
            table,
            lifts,
            paths,
        }
    }

    pub fn n(&self) -> usize {
        self.lifts.len()
    }

    /// Per-particle integral `integral_0^t (grad S_{t-s} h)(x^j_s) dB^j_s`.
    pub fn per_particle(&self, j: usize, t_step: usize, method: NoiseMethod) -> f64 {
        if t_step == 0 {
            return 0.0;
        }
        let germ = GermA::new(&self.table, &self.paths[j], &self.lifts[j]);
        match method {
            NoiseMethod::Sewing => sewing_sum(&germ, t_step, t_step),
            NoiseMethod::ItoSum => ito_riemann_sum(&germ, t_step),
        }
    }

    /// `w^n_t(h)` at grid step `t_step`.
    pub fn noise_term(&self, t_step: usize, method: NoiseMethod) -> f64 {
        let per: Vec<f64> = (0..self.n())
            .into_par_iter()
            .map(|j| self.per_particle(j, t_step, method))
            .collect();
        pairwise_sum(&per) / self.n() as f64
    }

    /// Both methods plus the flag demanded when they drift apart by more
    /// than five times the sewing route's own refinement gap.
    pub fn noise_term_checked(&self, t_step: usize) -> CheckedNoise {
        let n = self.n();
        let vals: Vec<(f64, f64, f64)> = (0..n)
            .into_par_iter()
            .map(|j| {
                if t_step == 0 {
                    return (0.0, 0.0, 0.0);
                }
                let germ = GermA::new(&self.table, &self.paths[j], &self.lifts[j]);
                let full = sewing_sum(&germ, t_step, t_step);
                let half = sewing_sum(&germ, t_step, t_step.div_ceil(2));
                let ito = ito_riemann_sum(&germ, t_step);
                (full, half, ito)
            })
            .collect();
        let sewing = pairwise_sum(&vals.iter().map(|v| v.0).collect::<Vec<_>>()) / n as f64;
        let half = pairwise_sum(&vals.iter().map(|v| v.1).collect::<Vec<_>>()) / n as f64;
        let ito_val = pairwise_sum(&vals.iter().map(|v| v.2).collect::<Vec<_>>()) / n as f64;
        let self_gap = (sewing - half).abs();
        let floor = 1e-13 * (1.0 + sewing.abs());
        let flagged = (sewing - ito_val).abs() > 5.0 * self_gap.max(floor);
        CheckedNoise {
            t: t_step as f64 * self.traj.dt,
            sewing,
            ito_sum: ito_val,
            self_gap,
            flagged,
        }
    }

    /// Germ access for audits.
    pub fn germ(&self, j: usize) -> GermA<'_> {
        GermA::new(&self.table, &self.paths[j], &self.lifts[j])
    }
}

/// Implication-chain audit of the pathwise bound: per particle the
/// integral decomposes as `I_j(t) = [A h]_{t,0} - Lambda_j(t)`; the germ
/// part obeys its discrete Holder bound by construction, the sewing
/// remainder is bounded with a fitted constant, and the assembled
/// per-realization constant dominates `|w^n_t(h)|`.
#[derive(Debug, Clone, Serialize)]
pub struct PathwiseAudit {
    /// Fitted sup of `|Lambda| / (||dhA|| t^{3 alpha} ||h||_m)`.
    pub c_fit: f64,
    /// Per-realization constant in `|w| <= C (1+t)^{3 alpha} ||h||_m`.
    pub c_alpha: f64,
    /// Largest audited `|w| / ((1+t)^{3 alpha} ||h||_m)`.
    pub worst_ratio: f64,
    pub ok: bool,
}

pub fn pathwise_bound_audit(
    eval: &NoiseEvaluator<'_>,
    h_norm_m: f64,
    t_steps: &[usize],
    max_samples: usize,
) -> PathwiseAudit {
    let alpha = eval.lifts[0].alpha;
    let dt = eval.traj.dt;
    let n = eval.n();
    let norms: Vec<crate::roughpath::GermNorms> = (0..n)
        .into_par_iter()
        .map(|j| crate::roughpath::germ_holder_norms(&eval.germ(j), h_norm_m, max_samples))
        .collect();
    let mut c_fit = 0.0f64;
    for (j, nj) in norms.iter().enumerate() {
        for &t in t_steps {
            if t == 0 {
                continue;
            }
            let t_phys = t as f64 * dt;
            let germ = eval.germ(j);
            let value = sewing_sum(&germ, t, t);
            let a_part = germ.raw(t, 0);
            let lambda = (a_part - value).abs();
            let denom = nj.delta_3alpha_bound * t_phys.powf(3.0 * alpha) * h_norm_m;
            if denom > 1e-300 {
                c_fit = c_fit.max(lambda / denom);
            }
        }
    }
    let c_alpha = norms
        .iter()
        .map(|nj| nj.a_alpha + c_fit * nj.delta_3alpha_bound)
        .fold(0.0f64, f64::max);
    let mut worst_ratio = 0.0f64;
    let mut ok = true;
    for &t in t_steps {
        if t == 0 {
            continue;
        }
        let t_phys = t as f64 * dt;
        let w = eval.noise_term(t, NoiseMethod::Sewing);
        let budget = c_alpha * (1.0 + t_phys).powf(3.0 * alpha) * h_norm_m;
        let ratio = w.abs() / budget.max(1e-300);
        worst_ratio = worst_ratio.max(ratio);
        if ratio > 1.0 {
            ok = false;
        }
    }
    PathwiseAudit {
        c_fit,
        c_alpha,
        worst_ratio,
        ok,
    }
}

/// Parameters of a decay study over an `n` ladder.
#[derive(Debug, Clone)]
pub struct NoiseStudyConfig {
    pub n_ladder: Vec<usize>,
    pub replicas: usize,
    pub h: TestFunction,
    pub t_horizon: f64,
    pub dt: f64,
    pub m: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl NoiseStudyConfig {
    pub fn validate(&self) -> Result<(), NoiseError> {
        if self.n_ladder.windows(2).any(|w| w[1] <= w[0]) || self.n_ladder.is_empty() {
            return Err(NoiseError::BadConfig(
                "n ladder must be strictly increasing".into(),
            ));
        }
        if self.replicas < 30 {
            return Err(NoiseError::BadConfig(
                "asserted statistics need at least 30 replicas".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub n: usize,
    pub replicas: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// `n * estimate / ||h||_m^2` for the decay study.
    pub c_hat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NoiseDecayReport {
    pub rows: Vec<LadderRow>,
    pub fit: SlopeFit,
    pub h_norm_m: f64,
    /// Times where the two evaluation routes disagreed beyond tolerance.
    pub method_flags: usize,
}

/// `E[sup_{t in grid} |w^n_t(h)|^2]` along the n-ladder with its log-log
/// slope. Fails when the slope is shallower than -0.75 (the expected
/// decay is `1/n`).
pub fn noise_decay_study(
    cfg: &NoiseStudyConfig,
    kernel: &crate::particles::InteractionKernel,
    initial: &crate::particles::InitialLaw,
    h_norm_m: f64,
) -> Result<NoiseDecayReport, NoiseError> {
    cfg.validate()?;
    let steps = (cfg.t_horizon / cfg.dt).round() as usize;
    let mut rows = Vec::with_capacity(cfg.n_ladder.len());
    let mut method_flags = 0usize;
    for &n in &cfg.n_ladder {
        let sim = crate::particles::SimConfig {
            t_horizon: cfg.t_horizon,
            dt: cfg.dt,
            n,
            d: cfg.h.d,
            save_times: vec![0.0, cfg.t_horizon],
            initial: initial.clone(),
            seed: cfg.seed,
            replica: 0,
            lift_refinement: 16,
            additive_drift: None,
        };
        let per_replica: Vec<(f64, usize)> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let mut sim_r = sim.clone();
                sim_r.replica = r as u64;
                let traj = crate::particles::simulate_grid(&sim_r, kernel)
                    .expect("simulation failed inside decay study");
                let eval = NoiseEvaluator::new(&traj, &cfg.h, cfg.alpha, kernel.sup_bound);
                let mut sup = 0.0f64;
                let mut flags = 0usize;
                for t in 1..=steps {
                    let checked = eval.noise_term_checked(t);
                    if checked.flagged {
                        flags += 1;
                    }
                    sup = sup.max(checked.sewing * checked.sewing);
                }
                (sup, flags)
            })
            .collect();
        method_flags += per_replica.iter().map(|p| p.1).sum::<usize>();
        let sups: Vec<f64> = per_replica.iter().map(|p| p.0).collect();
        let s = Summary::from_sample(&sups);
        rows.push(LadderRow {
            n,
            replicas: cfg.replicas,
            estimate: s.mean,
            stderr: s.stderr,
            c_hat: n as f64 * s.mean / (h_norm_m * h_norm_m),
        });
    }
    let fit = SlopeFit::fit_loglog(
        &cfg.n_ladder.iter().map(|&n| n as f64).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.estimate).collect::<Vec<_>>(),
    );
    if fit.slope > -0.75 {
        return Err(NoiseError::SlopeTooShallow {
            slope: fit.slope,
            limit: -0.75,
        });
    }
    Ok(NoiseDecayReport {
        rows,
        fit,
        h_norm_m,
        method_flags,
    })
}

/// Exploratory probe: `E[sup_t max_dict |w^n_t(h)| / ||h||_m]` along the
/// ladder. No pass/fail; the uniform-in-h bound is open.
#[derive(Debug, Clone, Serialize)]
pub struct UniformProbeReport {
    pub rows: Vec<LadderRow>,
    pub fit: SlopeFit,
    pub dictionary_size: usize,
}

pub fn uniform_h_probe(
    cfg: &NoiseStudyConfig,
    kernel: &crate::particles::InteractionKernel,
    initial: &crate::particles::InitialLaw,
    dictionary: &[(TestFunction, f64)],
) -> Result<UniformProbeReport, NoiseError> {
    cfg.validate()?;
    let steps = (cfg.t_horizon / cfg.dt).round() as usize;
    let mut rows = Vec::new();
    for &n in &cfg.n_ladder {
        let sim = crate::particles::SimConfig {
            t_horizon: cfg.t_horizon,
            dt: cfg.dt,
            n,
            d: cfg.h.d,
            save_times: vec![0.0, cfg.t_horizon],
            initial: initial.clone(),
            seed: cfg.seed,
            replica: 0,
            lift_refinement: 16,
            additive_drift: None,
        };
        let sups: Vec<f64> = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let mut sim_r = sim.clone();
                sim_r.replica = r as u64;
                let traj = crate::particles::simulate_grid(&sim_r, kernel)
                    .expect("simulation failed inside probe");
                let mut sup = 0.0f64;
                for (h, h_norm) in dictionary {
                    let eval = NoiseEvaluator::new(&traj, h, cfg.alpha, kernel.sup_bound);
                    for t in 1..=steps {
                        let w = eval.noise_term(t, NoiseMethod::Sewing);
                        sup = sup.max(w.abs() / h_norm);
                    }
                }
                sup
            })
            .collect();
        let s = Summary::from_sample(&sups);
        rows.push(LadderRow {
            n,
            replicas: cfg.replicas,
            estimate: s.mean,
            stderr: s.stderr,
            c_hat: (n as f64).sqrt() * s.mean,
        });
    }
    let fit = SlopeFit::fit_loglog(
        &cfg.n_ladder.iter().map(|&n| n as f64).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.estimate).collect::<Vec<_>>(),
    );
    Ok(UniformProbeReport {
        rows,
        fit,
        dictionary_size: dictionary.len(),
    })
}

/// Ornstein-Uhlenbeck toy model: `v_t = (1/n) sum_j X^j_t` with exact
/// transitions `X_{t+dt} = e^{-a dt} X_t + N(0, (1 - e^{-2 a dt})/(2a))`.
#[derive(Debug, Clone, Serialize)]
pub struct OuToyRow {
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    /// `log(1 + 2 a T) / (2 n a)`.
    pub bound_shape: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OuToyReport {
    pub rows: Vec<OuToyRow>,
    pub fit: SlopeFit,
    /// Single fitted constant: the largest estimate-to-shape ratio.
    pub c_hat: f64,
}

pub fn ou_toy_study(
    a: f64,
    n_ladder: &[usize],
    t_horizon: f64,
    steps: usize,
    replicas: usize,
    seed: u64,
) -> OuToyReport {
    assert!(a > 0.0);
    let dt = t_horizon / steps as f64;
    let decay = (-a * dt).exp();
    let noise_std = ((1.0 - (-2.0 * a * dt).exp()) / (2.0 * a)).sqrt();
    let mut rows = Vec::with_capacity(n_ladder.len());
    for &n in n_ladder {
        let sups: Vec<f64> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let field = NoiseField::new(seed, Purpose::Auxiliary, r as u64);
                let mut xs = vec![0.0f64; n];
                let mut streams: Vec<_> = (0..n).map(|j| field.stream(j as u64)).collect();
                let mut sup = 0.0f64;
                for _ in 0..steps {
                    let mut sum = 0.0;
                    for (x, s) in xs.iter_mut().zip(&mut streams) {
                        *x = decay * *x + noise_std * s.next();
                        sum += *x;
                    }
                    let v = sum / n as f64;
                    sup = sup.max(v * v);
                }
                sup
            })
            .collect();
        let s = Summary::from_sample(&sups);
        let bound_shape = (1.0 + 2.0 * a * t_horizon).ln() / (2.0 * n as f64 * a);
        rows.push(OuToyRow {
            n,
            estimate: s.mean,
            stderr: s.stderr,
            bound_shape,
            ratio: s.mean / bound_shape,
        });
    }
    let fit = SlopeFit::fit_loglog(
        &n_ladder.iter().map(|&n| n as f64).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.estimate).collect::<Vec<_>>(),
    );
    let c_hat = rows.iter().map(|r| r.ratio).fold(0.0f64, f64::max);
    OuToyReport { rows, fit, c_hat }
}

/// Martingales available to the self-normalized ratio study.
#[derive(Debug, Clone, Copy, Serialize)]
pub enum MartingaleKind {
    /// `M = B`, `<M>_t = t`.
    Brownian,
    /// `M_t = sum_j sqrt(2a/n) integral_0^t e^{as} dB^j_s`,
    /// `<M>_t = e^{2at} - 1` (exact Gaussian increments; the law does not
    /// depend on `n`).
    OuDerived { a: f64 },
    /// `M = 0`.
    Zero,
}

#[derive(Debug, Clone, Serialize)]
pub struct GpRow {
    pub t_horizon: f64,
    /// `E[sup_t M_t^2 / (1 + <M>_t)]`.
    pub sup_ratio: f64,
    pub sup_ratio_stderr: f64,
    /// `E[log(1 + log(1 + <M>_T))]`.
    pub log_log: f64,
    pub quotient: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GpReport {
    pub rows: Vec<GpRow>,
    /// Slope of the quotient against `ln T`.
    pub fit: SlopeFit,
}

/// Maximal self-normalized ratio versus the iterated-logarithm envelope
/// across a horizon ladder; the quotient must not grow (slope <= 0.1).
pub fn gp_ratio_study(
    kind: MartingaleKind,
    t_ladder: &[f64],
    steps: usize,
    replicas: usize,
    seed: u64,
) -> Result<GpReport, NoiseError> {
    if replicas < 30 {
        return Err(NoiseError::BadConfig("need at least 30 replicas".into()));
    }
    let mut rows = Vec::with_capacity(t_ladder.len());
    for (ti, &t_horizon) in t_ladder.iter().enumerate() {
        let dt = t_horizon / steps as f64;
        let results: Vec<(f64, f64)> = (0..replicas)
            .into_par_iter()
            .map(|r| {
                let field =
                    NoiseField::new(seed, Purpose::Auxiliary, (ti * replicas + r) as u64);
                let mut s = field.stream(0);
                let mut m = 0.0f64;
                let mut sup = 0.0f64;
                let mut qv_final = 0.0;
                for k in 0..steps {
                    let t0 = k as f64 * dt;
                    let t1 = t0 + dt;
                    let (incr_std, qv) = match kind {
                        MartingaleKind::Brownian => (dt.sqrt(), t1),
                        MartingaleKind::OuDerived { a } => {
                            let var = (2.0 * a * t1).exp() - (2.0 * a * t0).exp();
                            (var.sqrt(), (2.0 * a * t1).exp() - 1.0)
                        }
                        MartingaleKind::Zero => (0.0, 0.0),
                    };
                    m += incr_std * s.next();
                    sup = sup.max(m * m / (1.0 + qv));
                    qv_final = qv;
                }
                (sup, (1.0 + (1.0 + qv_final).ln()).ln())
            })
            .collect();
        let sups = Summary::from_sample(&results.iter().map(|r| r.0).collect::<Vec<_>>());
        let logs = Summary::from_sample(&results.iter().map(|r| r.1).collect::<Vec<_>>());
        rows.push(GpRow {
            t_horizon,
            sup_ratio: sups.mean,
            sup_ratio_stderr: sups.stderr,
            log_log: logs.mean,
            quotient: if logs.mean > 0.0 {
                sups.mean / logs.mean
            } else {
                0.0
            },
        });
    }
    let lx: Vec<f64> = t_ladder.iter().map(|t| t.ln()).collect();
    let qy: Vec<f64> = rows.iter().map(|r| r.quotient).collect();
    let fit = SlopeFit::fit(&lx, &qy);
    Ok(GpReport { rows, fit })
}

/// `E sup_t e^{-2at} M_t^2` for the OU-derived martingale, with the
/// constant against `log(1 + 2aT)` reported.
pub fn ou_derived_sup_constant(
    a: f64,
    t_horizon: f64,
    steps: usize,
    replicas: usize,
    seed: u64,
) -> (f64, f64) {
    let dt = t_horizon / steps as f64;
    let sups: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let field = NoiseField::new(seed, Purpose::Auxiliary, r as u64);
            let mut s = field.stream(1);
            let mut m = 0.0f64;
            let mut sup = 0.0f64;
            for k in 0..steps {
                let t0 = k as f64 * dt;
                let t1 = t0 + dt;
                let var = (2.0 * a * t1).exp() - (2.0 * a * t0).exp();
                m += var.sqrt() * s.next();
                sup = sup.max((-2.0 * a * t1).exp() * m * m);
            }
            sup
        })
        .collect();
    let estimate = pairwise_sum(&sups) / replicas as f64;
    (estimate, estimate / (1.0 + 2.0 * a * t_horizon).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particles::{simulate_grid, InitialLaw, InteractionKernel, SimConfig};
    use approx::assert_relative_eq;

    fn small_traj(n: usize, seed: u64, replica: u64) -> GridTrajectory {
        let cfg = SimConfig {
            t_horizon: 0.5,
            dt: 0.5 / 32.0,
            n,
            d: 1,
            save_times: vec![0.0, 0.5],
            initial: InitialLaw::IidGaussian { mean: 0.0, std: 1.0 },
            seed,
            replica,
            lift_refinement: 16,
            additive_drift: None,
        };
        simulate_grid(&cfg, &InteractionKernel::tanh_attractive()).unwrap()
    }

    #[test]
    fn frozen_drivers_give_zero_noise() {
        let traj = small_traj(4, 1, 0);
        let h = TestFunction::single_bump(1, 1.0, vec![0.0], 0.8);
        let steps = traj.positions.len() - 1;
        let table = HeatedTable::new(&h, traj.dt, steps);
        let times: Vec<f64> = (0..=steps).map(|k| k as f64 * traj.dt).collect();
        let lifts: Vec<RoughLift> = (0..4)
            .map(|_| {
                RoughLift::from_step_data(&times, 1, 0.4, vec![0.0; steps], vec![0.0; steps])
                    .unwrap()
            })
            .collect();
        let paths: Vec<ControlledPath> = (0..4)
            .map(|_| ControlledPath::frozen(steps, &[0.3]))
            .collect();
        let eval = NoiseEvaluator::from_parts(&traj, table, lifts, paths);
        assert_eq!(eval.noise_term(steps, NoiseMethod::Sewing), 0.0);
        assert_eq!(eval.noise_term(steps, NoiseMethod::ItoSum), 0.0);
    }

    #[test]
    fn single_particle_reduces_to_sewing_integral() {
        let traj = small_traj(1, 7, 0);
        let h = TestFunction::single_bump(1, 1.0, vec![0.2], 0.7);
        let eval = NoiseEvaluator::new(&traj, &h, 0.4, 1.0);
        let steps = traj.positions.len() - 1;
        let w = eval.noise_term(steps, NoiseMethod::Sewing);
        let direct = {
            let germ = eval.germ(0);
            crate::roughpath::sewing_integral(&germ, steps, 3)
                .unwrap()
                .value
        };
        assert_relative_eq!(w, direct, max_relative = 1e-14);
    }

    #[test]
    fn noise_is_centered_over_replicas() {
        let h = TestFunction::single_bump(1, 1.0, vec![0.0], 0.8);
        let replicas = 200;
        let values: Vec<f64> = (0..replicas)
            .map(|r| {
                let traj = small_traj(8, 99, r);
                let eval = NoiseEvaluator::new(&traj, &h, 0.4, 1.0);
                eval.noise_term(32, NoiseMethod::Sewing)
            })
            .collect();
        let s = Summary::from_sample(&values);
        assert!(
            s.mean.abs() <= 3.0 * s.stderr,
            "mean {} vs stderr {}",
            s.mean,
            s.stderr
        );
    }

    #[test]
    fn methods_agree_within_tolerance() {
        let h = TestFunction::single_bump(1, 1.0, vec![0.3], 0.9);
        let mut flags = 0;
        for r in 0..10 {
            let traj = small_traj(16, 21, r);
            let eval = NoiseEvaluator::new(&traj, &h, 0.4, 1.0);
            for t in [8, 16, 32] {
                let checked = eval.noise_term_checked(t);
                if checked.flagged {
                    flags += 1;
                }
            }
        }
        assert_eq!(flags, 0, "method disagreement flagged {flags} times");
    }

    #[test]
    fn noise_scales_linearly_in_h() {
        let traj = small_traj(8, 5, 0);
        let h = TestFunction::single_bump(1, 1.0, vec![0.1], 0.8);
        let eval1 = NoiseEvaluator::new(&traj, &h, 0.4, 1.0);
        let eval3 = NoiseEvaluator::new(&traj, &h.scaled(3.0), 0.4, 1.0);
        let w1 = eval1.noise_term(32, NoiseMethod::Sewing);
        let w3 = eval3.noise_term(32, NoiseMethod::Sewing);
        assert_relative_eq!(w3, 3.0 * w1, max_relative = 1e-12);
    }

    #[test]
    fn pathwise_audit_chain_holds() {
        let traj = small_traj(16, 13, 2);
        let h = TestFunction::single_bump(1, 1.0, vec![0.0], 0.8);
        let grid = crate::sobolev::FrequencyGrid::for_test_functions(1, &[&h]);
        let h_norm = crate::sobolev::hs_norm(&h, 1.6, &grid).unwrap();
        let eval = NoiseEvaluator::new(&traj, &h, 0.4, 1.0);
        let audit = pathwise_bound_audit(&eval, h_norm, &[4, 8, 16, 32], 20_000);
        assert!(audit.ok, "audit ratio {}", audit.worst_ratio);
        assert!(audit.c_fit.is_finite() && audit.c_alpha.is_finite());
        assert!(audit.worst_ratio <= 1.0);
    }

    #[test]
    fn ou_exact_transition_variance() {
        // Var X_T = (1 - e^{-2aT}) / (2a) at T = 1, a = 1.3.
        let a = 1.3;
        let steps = 64;
        let dt = 1.0 / steps as f64;
        let decay = (-a * dt).exp();
        let noise_std = ((1.0 - (-2.0 * a * dt).exp()) / (2.0 * a)).sqrt();
        let replicas = 10_000;
        let field = NoiseField::new(31, Purpose::Auxiliary, 0);
        let terminals: Vec<f64> = (0..replicas)
            .map(|r| {
                let mut s = field.stream(r as u64);
                let mut x = 0.0;
                for _ in 0..steps {
                    x = decay * x + noise_std * s.next();
                }
                x
            })
            .collect();
        let mean = pairwise_sum(&terminals) / replicas as f64;
        let var = terminals
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / (replicas - 1) as f64;
        let oracle: f64 = (1.0 - (-2.0f64 * a).exp()) / (2.0 * a);
        let se = oracle * (2.0 / replicas as f64).sqrt();
        assert!((var - oracle).abs() <= 3.0 * se, "var {var} vs {oracle}");
    }

    #[test]
    fn ou_toy_slope_near_minus_one() {
        let report = ou_toy_study(1.0, &[64, 256, 1024], 1.0, 64, 400, 77);
        assert!(
            report.fit.slope >= -1.2 && report.fit.slope <= -0.8,
            "slope {}",
            report.fit.slope
        );
        for row in &report.rows {
            assert!(row.estimate <= report.c_hat * row.bound_shape * (1.0 + 1e-12));
        }
    }

    #[test]
    fn gp_zero_martingale_has_zero_numerator() {
        let report = gp_ratio_study(MartingaleKind::Zero, &[1.0, 4.0], 128, 50, 3).unwrap();
        for row in &report.rows {
            assert_eq!(row.sup_ratio, 0.0);
        }
    }

    #[test]
    fn gp_brownian_quotient_stays_bounded() {
        let report = gp_ratio_study(
            MartingaleKind::Brownian,
            &[1.0, 4.0, 16.0, 64.0],
            1024,
            600,
            5,
        )
        .unwrap();
        assert!(
            report.fit.slope <= 0.1,
            "quotient slope {} (rows {:?})",
            report.fit.slope,
            report.rows
        );
        // quotient bounded within a factor 10 across the ladder
        let max_q = report.rows.iter().map(|r| r.quotient).fold(0.0, f64::max);
        let min_q = report
            .rows
            .iter()
            .map(|r| r.quotient)
            .fold(f64::INFINITY, f64::min);
        assert!(max_q / min_q < 10.0, "quotient spread {min_q}..{max_q}");
    }

    #[test]
    fn ou_derived_constant_reported() {
        let (estimate, c_prime) = ou_derived_sup_constant(1.0, 1.0, 256, 400, 11);
        assert!(estimate.is_finite() && estimate > 0.0);
        assert!(c_prime.is_finite() && c_prime > 0.0);
    }

    #[test]
    fn decay_study_small_ladder() {
        let h = TestFunction::single_bump(1, 1.0, vec![0.0], 0.8);
        let grid = crate::sobolev::FrequencyGrid::for_test_functions(1, &[&h]);
        let h_norm = crate::sobolev::hs_norm(&h, 1.6, &grid).unwrap();
        let cfg = NoiseStudyConfig {
            n_ladder: vec![16, 64, 256],
            replicas: 40,
            h: h.clone(),
            t_horizon: 0.5,
            dt: 0.5 / 32.0,
            m: 1.6,
            alpha: 0.4,
            seed: 2024,
        };
        let report = noise_decay_study(
            &cfg,
            &InteractionKernel::tanh_attractive(),
            &InitialLaw::IidGaussian { mean: 0.0, std: 1.0 },
            h_norm,
        )
        .unwrap();
        assert!(report.fit.slope <= -0.75, "slope {}", report.fit.slope);
        assert!(report.fit.slope >= -1.35, "slope {}", report.fit.slope);
        assert_eq!(report.method_flags, 0);
        // quadratic homogeneity: scaling h by 3 multiplies estimates by 9
        let cfg9 = NoiseStudyConfig {
            h: h.scaled(3.0),
            ..cfg.clone()
        };
        let report9 = noise_decay_study(
            &cfg9,
            &InteractionKernel::tanh_attractive(),
            &InitialLaw::IidGaussian { mean: 0.0, std: 1.0 },
            3.0 * h_norm,
        )
        .unwrap();
        for (a, b) in report.rows.iter().zip(&report9.rows) {
            assert_relative_eq!(b.estimate, 9.0 * a.estimate, max_relative = 1e-10);
        }
        assert_relative_eq!(report.fit.slope, report9.fit.slope, epsilon = 1e-9);
    }

    #[test]
    fn uniform_probe_reports_slope() {
        let h = TestFunction::single_bump(1, 1.0, vec![0.0], 0.8);
        let grid = crate::sobolev::FrequencyGrid::for_test_functions(1, &[&h]);
        let dict: Vec<(TestFunction, f64)> = [0.5, 0.8, 1.3]
            .iter()
            .map(|&w| {
                let f = TestFunction::single_bump(1, 1.0, vec![0.0], w);
                let norm = crate::sobolev::hs_norm(&f, 1.6, &grid).unwrap();
                (f, norm)
            })
            .collect();
        let cfg = NoiseStudyConfig {
            n_ladder: vec![8, 32],
            replicas: 30,
            h,
            t_horizon: 0.5,
            dt: 0.5 / 16.0,
            m: 1.6,
            alpha: 0.4,
            seed: 4,
        };
        let report = uniform_h_probe(
            &cfg,
            &InteractionKernel::tanh_attractive(),
            &InitialLaw::IidGaussian { mean: 0.0, std: 1.0 },
            &dict,
        )
        .unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.fit.slope < 0.0, "slope {}", report.fit.slope);
    }
}
