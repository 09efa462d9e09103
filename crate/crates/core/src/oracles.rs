//! Closed-form references for the particle simulator.
//!
//! * Two particles: `z = v_1 - v_2` solves `dz = 2 B(z) dt + 2 sqrt(A)(z) dW`.
//!   Because `z . B = -2 a` and `tr A = 2 a`, `|z|` is constant for the exact
//!   dynamics, and `z / |z|` is a Brownian motion on the sphere with
//!   generator `(2 a(r0) / r0^2) Delta_S`. Hence `E[z_t] = exp(-4 a(r0) t / r0^2) z_0`.
//! * Maxwell molecules (`gamma = 0`): `A = |z|^2 I - z z^T`, `B = -2 z`. The
//!   mean-field second moment obeys `dS/dt = 4 tr(S) I - 12 S`. For `N`
//!   particles, with the conserved `E[P P^T] = N S_0`, the same equation holds
//!   for `S - S_0 / N`, so the traceless part relaxes to `D_0 / N`.
//! * The Euler scheme adds `dt^2 E[b b^T] = 16 dt^2 (S - S_0 / N)` per step for
//!   Maxwell molecules, which gives the exact discrete second-moment recursion.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{config, domain};
use crate::estimators::{kde_fisher_marginal, KdeFisher, Samples};
use crate::kernels::{eval_a_mat, eval_b, ChiProfile, PotentialSpec};
use crate::rng::substream;
use crate::simulator::{EnsembleResult, StepData, StepObserver};
use crate::stats::{mean_se, FunctionalEstimate, MeanAcc};
use crate::{Mat3, Result, Vec3};

/// Run groups for the jackknife error of the sphere decay fit.
const JACKKNIFE_GROUPS: usize = 20;

/// Decay rate of `E[z_t]` for two particles at separation `r0`.
pub fn sphere_decay_rate(spec: &PotentialSpec, r0: f64) -> Result<f64> {
    if !(r0 > 0.0) {
        return Err(domain("separation must be positive"));
    }
    require_cutoff_inactive(spec, r0)?;
    Ok(4.0 * spec.eval_a(r0)? / (r0 * r0))
}

/// The cutoff must not reach the sphere `|z| = r0`.
pub fn require_cutoff_inactive(spec: &PotentialSpec, r0: f64) -> Result<()> {
    if spec.epsilon >= r0 / 4.0 {
        return Err(config(format!(
            "cutoff epsilon = {} overlaps the sphere radius {r0}; need epsilon < r0/4",
            spec.epsilon
        )));
    }
    Ok(())
}

/// The same rate obtained numerically: the two-particle generator
/// `2 B . grad f + 2 A : hess f` applied by central differences to
/// `f(z) = (z . e) / |z|` at `z = r0 e`.
pub fn sphere_decay_rate_numeric(spec: &PotentialSpec, r0: f64, e: Vec3) -> Result<f64> {
    let e = e.normalize();
    let f = |z: &Vec3| z.dot(&e) / z.norm();
    let z0 = e * r0;
    let h = 1e-4 * r0;
    let mut grad = Vec3::zeros();
    let mut hess = Mat3::zeros();
    let basis = [Vec3::x(), Vec3::y(), Vec3::z()];
    for a in 0..3 {
        let ea = basis[a] * h;
        grad[a] = (f(&(z0 + ea)) - f(&(z0 - ea))) / (2.0 * h);
        for b in 0..3 {
            let eb = basis[b] * h;
            hess[(a, b)] =
                (f(&(z0 + ea + eb)) - f(&(z0 + ea - eb)) - f(&(z0 - ea + eb)) + f(&(z0 - ea - eb))) / (4.0 * h * h);
        }
    }
    let lf = 2.0 * eval_b(&z0, spec)?.dot(&grad) + 2.0 * eval_a_mat(&z0, spec)?.component_mul(&hess).sum();
    Ok(-lf / f(&z0))
}

/// Decay rate of `E[x_t . x_0]` for a Brownian motion on the unit sphere with
/// generator `D Delta_S`, simulated with small tangent Gaussian steps.
/// Returns the fitted rate (expected `2 D`).
pub fn spherical_bm_decay_rate(
    diffusion: f64,
    t_end: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
) -> Result<FunctionalEstimate> {
    if !(diffusion > 0.0 && t_end > 0.0 && dt > 0.0) || n_paths < 2 {
        return Err(domain("invalid spherical Brownian motion parameters"));
    }
    let steps = (t_end / dt).round() as usize;
    let sd = (2.0 * diffusion * dt).sqrt();
    let mut rng = substream(seed, "spherical-bm", 0);
    let mut acc = MeanAcc::default();
    for _ in 0..n_paths {
        let x0 = Vec3::z();
        let mut x = x0;
        for _ in 0..steps {
            let g = Vec3::new(
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            );
            let tangent = g - x * x.dot(&g);
            x = (x + tangent * sd).normalize();
        }
        acc.push(x.dot(&x0));
    }
    let c = acc.estimate();
    if !(c.value > 0.0) {
        return Err(domain("autocorrelation is not positive; shorten t_end"));
    }
    let t = steps as f64 * dt;
    Ok(FunctionalEstimate::new(
        -c.value.ln() / t,
        c.std_error / (c.value * t),
        n_paths,
    ))
}

/// Two-particle summary of one run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SphereRun {
    /// Largest `|P(t) - P(0)|`.
    pub momentum_drift: f64,
    /// `|z_T|^2 / |z_0|^2 - 1` at the final time.
    pub radius_drift: f64,
    /// `z_t . z_0 / (|z_t| |z_0|)` at each record time, starting with 1.
    pub autocorrelation: Vec<f64>,
}

/// Step observer that builds a [`SphereRun`] without storing velocities.
pub struct SphereObserver {
    record_every: usize,
    steps: usize,
    p0: Vec3,
    z0: Vec3,
    pub run: SphereRun,
}

impl SphereObserver {
    pub fn new(record_every: usize) -> Self {
        Self {
            record_every: record_every.max(1),
            steps: 0,
            p0: Vec3::zeros(),
            z0: Vec3::zeros(),
            run: SphereRun::default(),
        }
    }
}

impl StepObserver for SphereObserver {
    fn start(&mut self, _t: f64, v: &[Vec3]) {
        self.p0 = v[0] + v[1];
        self.z0 = v[0] - v[1];
        self.run.autocorrelation.push(1.0);
    }

    fn step(&mut self, d: &StepData<'_>) {
        let (a, b) = (d.after[0], d.after[1]);
        let z = a - b;
        self.steps += 1;
        self.run.momentum_drift = self.run.momentum_drift.max((a + b - self.p0).norm());
        self.run.radius_drift = z.norm_squared() / self.z0.norm_squared() - 1.0;
        if self.steps % self.record_every == 0 {
            self.run
                .autocorrelation
                .push(z.dot(&self.z0) / (z.norm() * self.z0.norm()));
        }
    }
}

/// Two-particle invariants measured from an ensemble.
#[derive(Debug, Clone, Serialize)]
pub struct SphereReport {
    pub r0: f64,
    pub derived_rate: f64,
    pub fitted_rate: FunctionalEstimate,
    pub max_momentum_drift: f64,
    /// Mean relative change of `|z|^2` at the final time, across runs.
    pub radius_drift: FunctionalEstimate,
    /// `radius_drift / dt`.
    pub radius_drift_constant: FunctionalEstimate,
    /// Leading-order prediction `16 a(r0)^2 T / r0^4` of the relative drift
    /// per unit `dt` from the Euler scheme.
    pub radius_drift_constant_predicted: f64,
    pub times: Vec<f64>,
    pub autocorrelation: Vec<FunctionalEstimate>,
}

impl SphereReport {
    /// `|fitted - derived| <= k * se`.
    pub fn rate_agrees(&self, k: f64) -> bool {
        self.fitted_rate.agrees_with(self.derived_rate, k, 0.0)
    }
}

/// Reduce per-run summaries recorded at `times` (the first being 0).
pub fn sphere_report(
    runs: &[SphereRun],
    times: &[f64],
    spec: &PotentialSpec,
    r0: f64,
    dt: f64,
) -> Result<SphereReport> {
    if runs.len() < 2 {
        return Err(domain("sphere report needs at least two runs"));
    }
    let nt = times.len();
    if runs.iter().any(|r| r.autocorrelation.len() != nt) {
        return Err(domain("runs and record times disagree"));
    }
    require_cutoff_inactive(spec, r0)?;
    let autocorrelation: Vec<FunctionalEstimate> = (0..nt)
        .map(|k| {
            let mut acc = MeanAcc::default();
            runs.iter().for_each(|r| acc.push(r.autocorrelation[k]));
            acc.estimate()
        })
        .collect();
    // Weighted least squares through the origin for -ln c(t) = rate t, with
    // weights from the full ensemble.
    let mut weights = vec![0.0; nt];
    for k in 1..nt {
        let c = autocorrelation[k];
        if c.value >= 0.1 && c.std_error > 0.0 {
            let sy = c.std_error / c.value;
            weights[k] = 1.0 / (sy * sy);
        }
    }
    let fit = |means: &[f64]| -> f64 {
        let (mut swty, mut swtt) = (0.0, 0.0);
        for k in 1..nt {
            if weights[k] > 0.0 && means[k] > 0.0 {
                swty += weights[k] * times[k] * -means[k].ln();
                swtt += weights[k] * times[k] * times[k];
            }
        }
        swty / swtt
    };
    if weights.iter().all(|&w| w == 0.0) {
        return Err(domain("no usable record times for the decay fit"));
    }
    let full: Vec<f64> = autocorrelation.iter().map(|c| c.value).collect();
    let rate = fit(&full);
    // The record times share runs, so the fit error comes from a grouped
    // delete-one jackknife over runs rather than from the pointwise errors.
    let groups = runs.len().min(JACKKNIFE_GROUPS);
    let mut sums = vec![vec![0.0; nt]; groups];
    let mut counts = vec![0usize; groups];
    for (i, r) in runs.iter().enumerate() {
        let g = i * groups / runs.len();
        counts[g] += 1;
        for k in 0..nt {
            sums[g][k] += r.autocorrelation[k];
        }
    }
    let total: Vec<f64> = (0..nt).map(|k| sums.iter().map(|s| s[k]).sum()).collect();
    let loo: Vec<f64> = (0..groups)
        .map(|g| {
            let m = (runs.len() - counts[g]) as f64;
            let means: Vec<f64> = (0..nt).map(|k| (total[k] - sums[g][k]) / m).collect();
            fit(&means)
        })
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / groups as f64;
    let gf = groups as f64;
    let rate_se = ((gf - 1.0) / gf * loo.iter().map(|x| (x - loo_mean).powi(2)).sum::<f64>()).sqrt();
    let drift: Vec<f64> = runs.iter().map(|r| r.radius_drift).collect();
    let radius_drift = mean_se(&drift);
    let a_r0 = spec.eval_a(r0)?;
    Ok(SphereReport {
        r0,
        derived_rate: sphere_decay_rate(spec, r0)?,
        fitted_rate: FunctionalEstimate::new(rate, rate_se, runs.len()),
        max_momentum_drift: runs.iter().map(|r| r.momentum_drift).fold(0.0, f64::max),
        radius_drift,
        radius_drift_constant: radius_drift.scaled(1.0 / dt),
        radius_drift_constant_predicted: 16.0 * a_r0 * a_r0 * times[nt - 1] / r0.powi(4),
        times: times.to_vec(),
        autocorrelation,
    })
}

/// Measure the two-particle invariants from stored velocities. Needs `N = 2`.
pub fn sphere_invariants(ens: &EnsembleResult, spec: &PotentialSpec, dt: f64) -> Result<SphereReport> {
    if ens.n_particles != 2 {
        return Err(domain("sphere invariants need exactly two particles"));
    }
    let vel = |snap: &crate::simulator::Snapshot| -> Result<(Vec3, Vec3)> {
        let v = snap
            .velocities
            .as_ref()
            .ok_or_else(|| domain("velocities were not stored"))?;
        Ok((v[0], v[1]))
    };
    let mut runs = Vec::with_capacity(ens.runs.len());
    for rec in &ens.runs {
        let (a0, b0) = vel(&rec.snapshots[0])?;
        let (p0, z0) = (a0 + b0, a0 - b0);
        let mut run = SphereRun::default();
        for snap in &rec.snapshots {
            let (a, b) = vel(snap)?;
            let z = a - b;
            run.momentum_drift = run.momentum_drift.max((a + b - p0).norm());
            run.autocorrelation.push(z.dot(&z0) / (z.norm() * z0.norm()));
            run.radius_drift = z.norm_squared() / z0.norm_squared() - 1.0;
        }
        runs.push(run);
    }
    let (a0, b0) = vel(&ens.runs[0].snapshots[0])?;
    sphere_report(&runs, &ens.times(), spec, (a0 - b0).norm(), dt)
}

fn traceless(s: &Mat3) -> Mat3 {
    s - Mat3::identity() * (s.trace() / 3.0)
}

/// The closed moment system only holds for the Maxwell kernel `a = r^2`.
pub fn require_maxwell(spec: &PotentialSpec) -> Result<()> {
    let plain = spec.chi == ChiProfile::SoftCore || spec.epsilon == 0.0;
    if spec.gamma != 0.0 || !plain {
        return Err(config(format!(
            "moment reference is only available for Maxwell molecules (gamma = 0), got gamma = {}",
            spec.gamma
        )));
    }
    Ok(())
}

/// Mean-field second moment `E[v v^T]` at time `t` for Maxwell molecules.
pub fn maxwell_moment_reference(sigma0: &Mat3, t: f64) -> Mat3 {
    Mat3::identity() * (sigma0.trace() / 3.0) + traceless(sigma0) * (-12.0 * t).exp()
}

/// One-particle second moment for `N` Maxwell-molecule particles started
/// i.i.d. with mean zero and second moment `sigma0`.
pub fn maxwell_moment_reference_n(sigma0: &Mat3, n: usize, t: f64) -> Mat3 {
    let nf = n as f64;
    let d0 = traceless(sigma0);
    Mat3::identity() * (sigma0.trace() / 3.0) + d0 / nf + d0 * ((1.0 - 1.0 / nf) * (-12.0 * t).exp())
}

/// Exact second moment after `steps` Euler steps for `N` Maxwell particles.
pub fn maxwell_moment_reference_euler(sigma0: &Mat3, n: usize, dt: f64, steps: usize) -> Mat3 {
    let base = sigma0 / n as f64;
    let mut s = sigma0 - base;
    for _ in 0..steps {
        s = s + (Mat3::identity() * (4.0 * s.trace()) - s * 12.0) * dt + s * (16.0 * dt * dt);
    }
    s + base
}

/// `d/dt E[v v^T]` at `t = 0` for the mean-field equation, by tensor
/// Gauss-Hermite cubature over two independent `N(0, sigma0)` velocities,
/// using the kernel routines directly. Exact for Maxwell molecules.
pub fn maxwell_moment_rate_cubature(sigma0: &Mat3, spec: &PotentialSpec) -> Result<Mat3> {
    require_maxwell(spec)?;
    let l = sigma0
        .cholesky()
        .ok_or_else(|| domain("second moment must be positive definite"))?
        .l();
    let s3 = 3f64.sqrt();
    let nodes = [(-s3, 1.0 / 6.0), (0.0, 2.0 / 3.0), (s3, 1.0 / 6.0)];
    let mut out = Mat3::zeros();
    for idx in 0..729usize {
        let mut k = idx;
        let mut x = [0.0; 6];
        let mut w = 1.0;
        for xi in x.iter_mut() {
            let (node, weight) = nodes[k % 3];
            *xi = node;
            w *= weight;
            k /= 3;
        }
        let v = l * Vec3::new(x[0], x[1], x[2]);
        let u = l * Vec3::new(x[3], x[4], x[5]);
        let z = v - u;
        if z.norm() == 0.0 {
            continue; // A and B vanish at z = 0 for Maxwell molecules.
        }
        let a = eval_a_mat(&z, spec)?;
        let b = eval_b(&z, spec)?;
        out += (a * 2.0 + (b * v.transpose() + v * b.transpose()) * 2.0) * w;
    }
    Ok(out)
}

/// Ensemble estimate of the one-particle second moment at each record time.
pub fn ensemble_second_moment(ens: &EnsembleResult) -> Vec<[[FunctionalEstimate; 3]; 3]> {
    let nt = ens.runs[0].snapshots.len();
    (0..nt)
        .map(|k| {
            let mut out = [[FunctionalEstimate::new(0.0, 0.0, 0); 3]; 3];
            for (a, row) in out.iter_mut().enumerate() {
                for (b, cell) in row.iter_mut().enumerate() {
                    let xs: Vec<f64> = ens.runs.iter().map(|r| r.snapshots[k].second_moment[a][b]).collect();
                    *cell = mean_se(&xs);
                }
            }
            out
        })
        .collect()
}

/// Stationarity of the first four one-particle moments from a Maxwellian start.
#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    /// Largest `|mean - gaussian moment| / se` over record times, per order 1..4.
    pub max_z_by_order: [f64; 4],
    pub times: Vec<f64>,
    /// Coordinate-averaged moment of each order at each time.
    pub moments: Vec<[FunctionalEstimate; 4]>,
    /// KDE Fisher information of the one-particle law at each time.
    pub fisher: Vec<KdeFisher>,
    /// Whether every Fisher band overlaps the initial one.
    pub fisher_constant: bool,
}

impl StationarityReport {
    pub fn within(&self, k: f64) -> bool {
        self.max_z_by_order.iter().all(|z| *z <= k) && self.fisher_constant
    }
}

/// Compare the moments of every record time with those of `N(0, I_3)`.
/// The Fisher check needs stored velocities and uses up to `max_eval` KDE
/// evaluation points per record time.
pub fn equilibrium_stationarity(ens: &EnsembleResult, max_eval: usize) -> Result<StationarityReport> {
    if ens.runs.len() < 2 {
        return Err(domain("stationarity needs at least two runs"));
    }
    let target = [0.0, 1.0, 0.0, 3.0];
    let times = ens.times();
    let mut max_z = [0.0f64; 4];
    let mut moments = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let mut row = [FunctionalEstimate::new(0.0, 0.0, 0); 4];
        for order in 0..4 {
            let xs: Vec<f64> = ens
                .runs
                .iter()
                .map(|r| (0..3).map(|a| r.snapshots[k].moments[a][order]).sum::<f64>() / 3.0)
                .collect();
            let e = mean_se(&xs);
            if e.std_error > 0.0 {
                max_z[order] = max_z[order].max((e.value - target[order]).abs() / e.std_error);
            }
            row[order] = e;
        }
        moments.push(row);
    }
    let fisher = (0..times.len())
        .map(|k| kde_fisher_marginal(&Samples::from_ensemble(ens, k, 1)?, max_eval))
        .collect::<Result<Vec<_>>>()?;
    let overlaps = |a: &KdeFisher, b: &KdeFisher| {
        a.band[0] - 3.0 * a.std_error <= b.band[1] + 3.0 * b.std_error
            && b.band[0] - 3.0 * b.std_error <= a.band[1] + 3.0 * a.std_error
    };
    let fisher_constant = fisher.iter().all(|f| overlaps(f, &fisher[0]));
    Ok(StationarityReport {
        max_z_by_order: max_z,
        times,
        moments,
        fisher,
        fisher_constant,
    })
}
