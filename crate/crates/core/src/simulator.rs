//! Euler-Maruyama integration of the particle system
//!
//! ```text
//! dv_i = (2/N) sum_{j != i} B(v_i - v_j) dt
//!      + sqrt(2/N) sum_{j != i} sqrt(A)(v_i - v_j) dW_{ij}
//!      + sqrt(2 eps_d) dW_i,
//! ```
//!
//! with `W_{ij} = -W_{ji}`. Each unordered pair draws one increment per step
//! and applies it with opposite signs to its two particles, so momentum is
//! conserved to rounding. Since `z . B(z) = -2 a` and `tr A = 2 a`, the
//! expected energy change of one step is exactly `dt^2 sum_i |b_i|^2` plus
//! `6 N eps_d dt` from the heat bath.

use rayon::prelude::*;
use serde::Serialize;

use crate::densities::GaussianMixture;
use crate::error::{config, domain};
use crate::kernels::PotentialSpec;
use crate::rng::{substream, NoiseTag, PairNoise};
use crate::stats::MeanAcc;
use crate::{Error, Result, Vec3};

/// How pair increments are shared between the two particles of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum NoiseMode {
    /// `+dW` on `i` and `-dW` on `j` (the scheme).
    #[default]
    Antisymmetric,
    /// Independent increments on `i` and `j`. Breaks momentum conservation;
    /// negative control only.
    IndependentControl,
}

/// Initial velocities.
#[derive(Debug, Clone)]
pub enum InitialCondition {
    /// i.i.d. draws from a one-particle law on `R^3`.
    Law(GaussianMixture),
    /// The same fixed velocities in every run.
    Fixed(Vec<Vec3>),
}

/// Configuration of an ensemble of particle simulations.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_particles: usize,
    pub potential: PotentialSpec,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub ensemble_size: usize,
    pub eps_diffusion: f64,
    pub energy_projection: bool,
    pub record_every: usize,
    pub initial: InitialCondition,
    pub noise_mode: NoiseMode,
    /// Each step's Brownian increment is the sum of this many base draws.
    /// A run with `(dt, k)` shares its Brownian path with a run at
    /// `(dt / k, 1)`.
    pub noise_substeps: u32,
    pub store_velocities: bool,
    /// Radius and cap of the pair statistic.
    pub pair_radius: f64,
    pub pair_cap: f64,
}

impl SimConfig {
    /// Defaults for everything except the physical parameters.
    pub fn new(n_particles: usize, potential: PotentialSpec, dt: f64, t_end: f64, initial: InitialCondition) -> Self {
        Self {
            n_particles,
            potential,
            dt,
            t_end,
            seed: 0,
            ensemble_size: 1,
            eps_diffusion: 0.0,
            energy_projection: false,
            record_every: 1,
            initial,
            noise_mode: NoiseMode::Antisymmetric,
            noise_substeps: 1,
            store_velocities: false,
            pair_radius: 3.0,
            pair_cap: 100.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(config(format!("need N >= 2 particles, got {}", self.n_particles)));
        }
        if self.n_particles > 1 << 20 {
            return Err(config("too many particles"));
        }
        self.potential.validate_for_simulation()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(config(format!("t_end = {} must be >= 0", self.t_end)));
        }
        if self.ensemble_size == 0 {
            return Err(config("ensemble size must be >= 1"));
        }
        if self.record_every == 0 || self.noise_substeps == 0 {
            return Err(config("record_every and noise_substeps must be >= 1"));
        }
        if !(self.eps_diffusion >= 0.0) || !self.eps_diffusion.is_finite() {
            return Err(config("eps_diffusion must be >= 0"));
        }
        if !(self.pair_radius > 0.0) || !(self.pair_cap > 0.0) {
            return Err(config("pair statistic radius and cap must be positive"));
        }
        match &self.initial {
            InitialCondition::Law(g) if g.dim() != 3 => Err(config("initial law must live on R^3")),
            InitialCondition::Fixed(v) if v.len() != self.n_particles => {
                Err(config("fixed initial data has the wrong number of particles"))
            }
            InitialCondition::Fixed(v) if v.iter().any(|x| !x.iter().all(|c| c.is_finite())) => {
                Err(config("fixed initial data is not finite"))
            }
            _ => Ok(()),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// Velocities of all particles.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityState {
    pub v: Vec<Vec3>,
}

impl VelocityState {
    pub fn momentum(&self) -> Vec3 {
        self.v.iter().fold(Vec3::zeros(), |acc, x| acc + x)
    }

    pub fn energy(&self) -> f64 {
        self.v.iter().map(|x| x.norm_squared()).sum()
    }
}

/// Rescale velocities about their mean so that `sum |v|^2 = target`,
/// keeping the momentum fixed.
pub fn project_energy(state: &mut VelocityState, target: f64) -> Result<()> {
    let n = state.v.len() as f64;
    let p = state.momentum();
    let mean = p / n;
    let floor = p.norm_squared() / n;
    if !(target >= floor) || !target.is_finite() {
        return Err(domain(format!("target energy {target} below momentum floor {floor}")));
    }
    let spread: f64 = state.v.iter().map(|x| (x - mean).norm_squared()).sum();
    if !(spread > 0.0) {
        return Err(domain("all velocities coincide; energy cannot be rescaled"));
    }
    let s = ((target - floor) / spread).sqrt();
    for x in state.v.iter_mut() {
        *x = mean + (*x - mean) * s;
    }
    Ok(())
}

/// `(2 / (N (N-1))) sum_{i<j} min(1/|v_i - v_j|, cap) 1{|v_i|, |v_j| <= radius}`.
pub fn pair_inverse_distance(state: &VelocityState, radius: f64, cap: f64) -> Result<f64> {
    let n = state.v.len();
    if n < 2 || !(radius > 0.0) || !(cap > 0.0) {
        return Err(domain("pair statistic needs N >= 2 and positive radius and cap"));
    }
    let inside: Vec<bool> = state.v.iter().map(|x| x.norm() <= radius).collect();
    let mut sum = 0.0;
    for i in 0..n {
        if !inside[i] {
            continue;
        }
        for j in (i + 1)..n {
            if inside[j] {
                let r = (state.v[i] - state.v[j]).norm();
                sum += if r > 0.0 { (1.0 / r).min(cap) } else { cap };
            }
        }
    }
    Ok(2.0 * sum / (n * (n - 1)) as f64)
}

/// Data handed to a [`StepObserver`] after every step.
pub struct StepData<'a> {
    pub t_before: f64,
    pub dt: f64,
    pub before: &'a [Vec3],
    pub after: &'a [Vec3],
    /// Martingale part of each particle's increment (pair and heat noise),
    /// before any energy projection.
    pub noise: &'a [Vec3],
    /// Whether `after` was moved by the energy projection.
    pub projected: bool,
}

/// Hook called at every step of a run.
pub trait StepObserver {
    fn start(&mut self, _t: f64, _v: &[Vec3]) {}
    fn step(&mut self, data: &StepData<'_>);
}

impl StepObserver for () {
    fn step(&mut self, _data: &StepData<'_>) {}
}

/// One recorded time point of one run.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    /// Particle averages of `v_a^k`, `moments[a][k-1]` for `k = 1..4`.
    pub moments: [[f64; 4]; 3],
    /// Particle average of `v v^T`.
    pub second_moment: [[f64; 3]; 3],
    pub pair_stat: f64,
    /// Running sum of the predicted energy change `dt^2 sum |b_i|^2 (+ 6 N eps_d dt)`.
    pub energy_compensator: f64,
    #[serde(skip)]
    pub velocities: Option<Vec<Vec3>>,
}

impl Snapshot {
    /// Mean over coordinates of the second moment.
    pub fn m2(&self) -> f64 {
        (self.moments[0][1] + self.moments[1][1] + self.moments[2][1]) / 3.0
    }

    /// Mean over coordinates of the fourth moment.
    pub fn m4(&self) -> f64 {
        (self.moments[0][3] + self.moments[1][3] + self.moments[2][3]) / 3.0
    }
}

/// Recorded trajectory of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub snapshots: Vec<Snapshot>,
}

/// Ensemble mean and standard error of one snapshot statistic.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

/// Ensemble aggregate at one record time.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub t: f64,
    pub momentum: [MeanSe; 3],
    pub energy: MeanSe,
    pub m2: MeanSe,
    pub m4: MeanSe,
    pub pair_stat: MeanSe,
}

/// All runs of an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct EnsembleResult {
    pub n_particles: usize,
    pub runs: Vec<RunRecord>,
}

impl EnsembleResult {
    pub fn times(&self) -> Vec<f64> {
        self.runs[0].snapshots.iter().map(|s| s.t).collect()
    }

    /// Mean and standard error across runs of `f(snapshot)` at each record time.
    pub fn across_runs<F: Fn(&Snapshot) -> f64>(&self, f: F) -> Vec<MeanSe> {
        let n_t = self.runs[0].snapshots.len();
        (0..n_t)
            .map(|k| {
                let mut acc = MeanAcc::default();
                for r in &self.runs {
                    acc.push(f(&r.snapshots[k]));
                }
                MeanSe {
                    mean: acc.mean,
                    se: if self.runs.len() > 1 { acc.std_error() } else { 0.0 },
                }
            })
            .collect()
    }

    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let times = self.times();
        let px = self.across_runs(|s| s.momentum[0]);
        let py = self.across_runs(|s| s.momentum[1]);
        let pz = self.across_runs(|s| s.momentum[2]);
        let e = self.across_runs(|s| s.energy);
        let m2 = self.across_runs(|s| s.m2());
        let m4 = self.across_runs(|s| s.m4());
        let ps = self.across_runs(|s| s.pair_stat);
        (0..times.len())
            .map(|k| AggregateRow {
                t: times[k],
                momentum: [px[k], py[k], pz[k]],
                energy: e[k],
                m2: m2[k],
                m4: m4[k],
                pair_stat: ps[k],
            })
            .collect()
    }
}

/// Stateful integrator for one run.
pub struct Stepper {
    n: usize,
    potential: PotentialSpec,
    dt: f64,
    eps_diffusion: f64,
    noise_mode: NoiseMode,
    substeps: u32,
    noise: PairNoise,
    labels: Vec<u32>,
    drift: Vec<Vec3>,
    mart: Vec<Vec3>,
}

impl Stepper {
    pub fn new(cfg: &SimConfig, run: u64) -> Self {
        let n = cfg.n_particles;
        Self {
            n,
            potential: cfg.potential,
            dt: cfg.dt,
            eps_diffusion: cfg.eps_diffusion,
            noise_mode: cfg.noise_mode,
            substeps: cfg.noise_substeps,
            noise: PairNoise::new(cfg.seed, run),
            labels: (0..n as u32).collect(),
            drift: vec![Vec3::zeros(); n],
            mart: vec![Vec3::zeros(); n],
        }
    }

    /// Use `labels[p]` as the noise identity of particle `p`. Relabelled
    /// systems then see the same Brownian motions pair by pair.
    pub fn with_labels(mut self, labels: Vec<u32>) -> Result<Self> {
        let mut sorted = labels.clone();
        sorted.sort_unstable();
        if sorted != (0..self.n as u32).collect::<Vec<_>>() {
            return Err(config("labels must be a permutation of 0..N"));
        }
        self.labels = labels;
        Ok(self)
    }

    /// Martingale part of the last step, per particle.
    pub fn last_noise(&self) -> &[Vec3] {
        &self.mart
    }

    #[inline]
    fn increment(&self, step: u64, a: u32, b: u32, tag: NoiseTag) -> Vec3 {
        let k = self.substeps as u64;
        let mut w = Vec3::zeros();
        for s in 0..k {
            let z = self.noise.normal3(step * k + s, a, b, tag);
            w += Vec3::new(z[0], z[1], z[2]);
        }
        w * (self.dt / k as f64).sqrt()
    }

    /// Advance `v` by one step. Returns `sum_i |b_i|^2` at the start of the step.
    pub fn step(&mut self, v: &mut [Vec3], step: u64) -> Result<f64> {
        let n = self.n;
        let nf = n as f64;
        let c_drift = 2.0 / nf;
        let c_noise = (2.0 / nf).sqrt();
        self.drift.iter_mut().for_each(|x| *x = Vec3::zeros());
        self.mart.iter_mut().for_each(|x| *x = Vec3::zeros());
        for i in 0..n {
            let vi = v[i];
            for j in (i + 1)..n {
                let z = vi - v[j];
                let (a, beta) = self.potential.pair_coefficients(&z)?;
                let bz = z * (-2.0 * beta * c_drift);
                self.drift[i] += bz;
                self.drift[j] -= bz;
                if a == 0.0 {
                    continue;
                }
                let (li, lj) = (self.labels[i], self.labels[j]);
                let (key_a, key_b, sign) = if li < lj { (li, lj, 1.0) } else { (lj, li, -1.0) };
                let dw = self.increment(step, key_a, key_b, NoiseTag::Pair) * sign;
                let r2 = z.norm_squared();
                let sa = a.sqrt() * c_noise;
                // sqrt(a) Pi(z) dW, with Pi dW = dW - z (z . dW) / |z|^2.
                let xi = if r2 > 0.0 {
                    (dw - z * (z.dot(&dw) / r2)) * sa
                } else {
                    dw * sa
                };
                self.mart[i] += xi;
                match self.noise_mode {
                    NoiseMode::Antisymmetric => self.mart[j] -= xi,
                    NoiseMode::IndependentControl => {
                        let dw2 = self.increment(step, key_a, key_b, NoiseTag::PairSecond);
                        let xi2 = if r2 > 0.0 {
                            (dw2 - z * (z.dot(&dw2) / r2)) * sa
                        } else {
                            dw2 * sa
                        };
                        self.mart[j] -= xi2;
                    }
                }
            }
        }
        if self.eps_diffusion > 0.0 {
            let c = (2.0 * self.eps_diffusion).sqrt();
            for i in 0..n {
                let dw = self.increment(step, self.labels[i], u32::MAX, NoiseTag::Heat);
                self.mart[i] += dw * c;
            }
        }
        let mut b2 = 0.0;
        for i in 0..n {
            b2 += self.drift[i].norm_squared();
            v[i] += self.drift[i] * self.dt + self.mart[i];
        }
        if v.iter().any(|x| !x.iter().all(|c| c.is_finite())) {
            return Err(Error::Numerical(format!("non-finite velocity at step {step}")));
        }
        Ok(b2)
    }
}

/// Initial velocities of run `run`.
pub fn initial_state(cfg: &SimConfig, run: u64) -> Result<VelocityState> {
    match &cfg.initial {
        InitialCondition::Fixed(v) => Ok(VelocityState { v: v.clone() }),
        InitialCondition::Law(g) => {
            let mut rng = substream(cfg.seed, "initial", run);
            let mut x = [0.0; 3];
            let v = (0..cfg.n_particles)
                .map(|_| {
                    g.sample_into(&mut rng, &mut x);
                    Vec3::new(x[0], x[1], x[2])
                })
                .collect();
            Ok(VelocityState { v })
        }
    }
}

fn snapshot(cfg: &SimConfig, state: &VelocityState, t: f64, compensator: f64) -> Result<Snapshot> {
    let n = state.v.len() as f64;
    let p = state.momentum();
    let mut moments = [[0.0; 4]; 3];
    let mut second = [[0.0; 3]; 3];
    for x in &state.v {
        for a in 0..3 {
            let mut pw = 1.0;
            for k in 0..4 {
                pw *= x[a];
                moments[a][k] += pw / n;
            }
            for b in 0..3 {
                second[a][b] += x[a] * x[b] / n;
            }
        }
    }
    Ok(Snapshot {
        t,
        momentum: [p[0], p[1], p[2]],
        energy: state.energy(),
        moments,
        second_moment: second,
        pair_stat: pair_inverse_distance(state, cfg.pair_radius, cfg.pair_cap)?,
        energy_compensator: compensator,
        velocities: cfg.store_velocities.then(|| state.v.clone()),
    })
}

/// Simulate one run, calling `observer` at every step.
pub fn run_single<O: StepObserver>(cfg: &SimConfig, run: usize, observer: &mut O) -> Result<RunRecord> {
    cfg.validate()?;
    let mut state = initial_state(cfg, run as u64)?;
    let mut stepper = Stepper::new(cfg, run as u64);
    let target = state.energy();
    let n_steps = cfg.n_steps();
    let heat_rate = 6.0 * cfg.n_particles as f64 * cfg.eps_diffusion * cfg.dt;
    let mut compensator = 0.0;
    let mut snapshots = vec![snapshot(cfg, &state, 0.0, 0.0)?];
    observer.start(0.0, &state.v);
    let mut before = state.v.clone();
    for k in 0..n_steps {
        before.copy_from_slice(&state.v);
        let b2 = stepper.step(&mut state.v, k as u64)?;
        compensator += cfg.dt * cfg.dt * b2 + heat_rate;
        if cfg.energy_projection {
            project_energy(&mut state, target)?;
        }
        let t = (k + 1) as f64 * cfg.dt;
        observer.step(&StepData {
            t_before: k as f64 * cfg.dt,
            dt: cfg.dt,
            before: &before,
            after: &state.v,
            noise: stepper.last_noise(),
            projected: cfg.energy_projection,
        });
        if (k + 1) % cfg.record_every == 0 || k + 1 == n_steps {
            snapshots.push(snapshot(cfg, &state, t, compensator)?);
        }
    }
    Ok(RunRecord { run, snapshots })
}

/// Simulate the ensemble with one observer per run.
pub fn run_observed<O, F>(cfg: &SimConfig, make_observer: F) -> Result<(EnsembleResult, Vec<O>)>
where
    O: StepObserver + Send,
    F: Fn(usize) -> O + Sync,
{
    cfg.validate()?;
    let out: Vec<Result<(RunRecord, O)>> = (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|r| {
            let mut obs = make_observer(r);
            let rec = run_single(cfg, r, &mut obs)?;
            Ok((rec, obs))
        })
        .collect();
    let mut runs = Vec::with_capacity(cfg.ensemble_size);
    let mut observers = Vec::with_capacity(cfg.ensemble_size);
    for item in out {
        let (rec, obs) = item?;
        runs.push(rec);
        observers.push(obs);
    }
    Ok((
        EnsembleResult {
            n_particles: cfg.n_particles,
            runs,
        },
        observers,
    ))
}

/// Simulate the ensemble.
pub fn run(cfg: &SimConfig) -> Result<EnsembleResult> {
    Ok(run_observed(cfg, |_| ())?.0)
}
