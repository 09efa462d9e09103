//! Weak-form residuals of the particle (BBGKY) hierarchy and of the Landau
//! hierarchy for a product test function `phi(v_1..v_m) = prod_l psi_l(v_l)`.
//!
//! For an `m`-tuple `T` of distinct particles the generator splits as
//!
//! ```text
//! L phi = P + ((N - m) / N) (C_A + C_B),
//! P   = (1/N) sum_{a != b in T} [ A_ab : (d_aa - d_ab) phi + B_ab . (d_a - d_b) phi ],
//! C_A = sum_{a in T} mean_{o not in T} A(v_a - v_o) : d_aa phi,
//! C_B = 2 sum_{a in T} mean_{o not in T} B(v_a - v_o) . d_a phi.
//! ```
//!
//! The BBGKY residual of one run is `phi(V_T) - phi(V_0) - int L phi dt`.
//! The Landau hierarchy keeps only `C_A + C_B` with weight one, so its
//! residual carries an `O(1/N)` gap. Tuples are averaged over the `N` cyclic
//! shifts, which uses exchangeability of the particle system.
//!
//! The online estimator also subtracts zero-mean control variates built from
//! the scheme's noise `xi_n`, which is conditionally Gaussian and symmetric.
//! With the reflected state `V'_{n+1} = V_{n+1} - 2 xi_n`, every quantity `g`
//! evaluated at the end of a step is split into its even part
//! `(g(V_{n+1}) + g(V'_{n+1})) / 2` and its odd part, which has zero
//! conditional mean. The odd part of `phi` is subtracted from the increment
//! and the trapezoid uses the even part of the integrands at the right end.
//! The second-order term `sum_n [xi_n^T hess phi xi_n / 2 - dt L_A phi]`, with
//! `L_A` the diffusion part of the generator, is subtracted as well (exact
//! conditional mean for `eps_diffusion = 0`). What is left is the local weak
//! error of the scheme, so the residual spread no longer hides its O(dt) bias.

use serde::{Deserialize, Serialize};

use crate::error::{config, domain};
use crate::kernels::PotentialSpec;
use crate::simulator::{EnsembleResult, StepData, StepObserver};
use crate::stats::{mean_se, FunctionalEstimate};
use crate::{Mat3, Result, Vec3};

/// Product of smooth bumps `exp(1 - 1 / (1 - |v - c_l|^2 / rho^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub centers: Vec<[f64; 3]>,
    pub radius: f64,
}

/// Value, gradient and Hessian of one bump.
#[derive(Debug, Clone, Copy)]
struct Bump {
    val: f64,
    grad: Vec3,
    hess: Mat3,
}

impl TestFunction {
    pub fn new(centers: Vec<[f64; 3]>, radius: f64) -> Result<Self> {
        let tf = Self { centers, radius };
        tf.validate()?;
        Ok(tf)
    }

    pub fn m(&self) -> usize {
        self.centers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(config("test function needs at least one centre"));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(config("test function radius must be positive"));
        }
        Ok(())
    }

    fn bump(&self, l: usize, v: &Vec3) -> Bump {
        let c = Vec3::from(self.centers[l]);
        let rho2 = self.radius * self.radius;
        let y = v - c;
        let s = y.norm_squared() / rho2;
        if s >= 1.0 {
            return Bump {
                val: 0.0,
                grad: Vec3::zeros(),
                hess: Mat3::zeros(),
            };
        }
        let om = 1.0 - s;
        let h = (1.0 - 1.0 / om).exp();
        let h1 = -h / (om * om);
        let h2 = h * (1.0 / om.powi(4) - 2.0 / om.powi(3));
        Bump {
            val: h,
            grad: y * (2.0 * h1 / rho2),
            hess: y * y.transpose() * (4.0 * h2 / (rho2 * rho2)) + Mat3::identity() * (2.0 * h1 / rho2),
        }
    }

    /// `psi_l(v)`.
    pub fn factor(&self, l: usize, v: &Vec3) -> f64 {
        self.bump(l, v).val
    }

    /// `phi(v_1, .., v_m)`.
    pub fn value(&self, vs: &[Vec3]) -> f64 {
        vs.iter().enumerate().map(|(l, v)| self.bump(l, v).val).product()
    }

    /// Gradient of `phi` in slot `a`.
    pub fn grad(&self, vs: &[Vec3], a: usize) -> Vec3 {
        let mut g = self.bump(a, &vs[a]).grad;
        for (l, v) in vs.iter().enumerate() {
            if l != a {
                g *= self.bump(l, v).val;
            }
        }
        g
    }

    /// Largest distance from the origin reached by the support.
    pub fn support_extent(&self) -> f64 {
        self.centers.iter().map(|c| Vec3::from(*c).norm()).fold(0.0, f64::max) + self.radius
    }
}

/// Per-run accumulators of the weak form.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct HierarchyTally {
    pub n_particles: usize,
    pub m: usize,
    pub phi_start: f64,
    pub phi_end: f64,
    /// `int P dt`.
    pub int_pair: f64,
    /// `int C_A dt`.
    pub int_cross_a: f64,
    /// `int C_B dt`.
    pub int_cross_b: f64,
    /// `int C_B' dt` with the exchanged form of the drift term.
    pub int_cross_b_exchanged: f64,
    /// Odd part of the `phi` increments, `sum_n (phi(V_{n+1}) - phi(V'_{n+1})) / 2`.
    pub martingale: f64,
    /// `sum_n [xi_n^T hess phi(V_n) xi_n / 2 - dt L_A phi(V_n)]`.
    pub martingale_second: f64,
}

impl HierarchyTally {
    pub fn bbgky(&self) -> f64 {
        let w = (self.n_particles - self.m) as f64 / self.n_particles as f64;
        self.increment() - self.int_pair - w * (self.int_cross_a + self.int_cross_b)
    }

    pub fn landau(&self) -> f64 {
        self.increment() - (self.int_cross_a + self.int_cross_b)
    }

    pub fn landau_exchanged(&self) -> f64 {
        self.increment() - (self.int_cross_a + self.int_cross_b_exchanged)
    }

    /// `phi(V_T) - phi(V_0)` minus the control variates.
    fn increment(&self) -> f64 {
        self.phi_end - self.phi_start - self.martingale - self.martingale_second
    }

    /// `landau - bbgky`.
    pub fn gap(&self) -> f64 {
        let w = self.m as f64 / self.n_particles as f64;
        self.int_pair - w * (self.int_cross_a + self.int_cross_b)
    }
}

/// Integrand values averaged over cyclic tuples.
#[derive(Debug, Clone, Copy, Default)]
struct Integrands {
    phi: f64,
    pair: f64,
    /// Diffusion part of `pair`.
    pair_a: f64,
    cross_a: f64,
    cross_b: f64,
    cross_b_ex: f64,
}

/// Evaluate `phi` and the generator pieces at `v`, averaged over cyclic tuples.
fn evaluate(tf: &TestFunction, spec: &PotentialSpec, v: &[Vec3]) -> Result<Integrands> {
    let n = v.len();
    let m = tf.m();
    let nf = n as f64;
    // Bumps of every slot at every particle.
    let bumps: Vec<Vec<Bump>> = (0..m).map(|l| v.iter().map(|x| tf.bump(l, x)).collect()).collect();
    let mut acc = Integrands::default();
    let mut slot_vals = vec![0.0; m];
    for s in 0..n {
        let tuple: Vec<usize> = (0..m).map(|a| (s + a) % n).collect();
        for a in 0..m {
            slot_vals[a] = bumps[a][tuple[a]].val;
        }
        // prod_{l != a} psi_l for each a.
        let others: Vec<f64> = (0..m)
            .map(|a| (0..m).filter(|&l| l != a).map(|l| slot_vals[l]).product())
            .collect();
        if others.iter().all(|&p| p == 0.0) {
            continue;
        }
        let phi: f64 = slot_vals.iter().product();
        acc.phi += phi;
        let grads: Vec<Vec3> = (0..m).map(|a| bumps[a][tuple[a]].grad * others[a]).collect();
        let in_tuple = |o: usize| tuple.contains(&o);
        for a in 0..m {
            if others[a] == 0.0 {
                continue;
            }
            let ba = &bumps[a][tuple[a]];
            let ta = tuple[a];
            let haa = ba.hess * others[a];
            let ga = grads[a];
            let mut ca = 0.0;
            let mut cb = 0.0;
            let mut cbx = 0.0;
            let nonzero_here = ba.val != 0.0 || ga != Vec3::zeros();
            for o in 0..n {
                if in_tuple(o) {
                    continue;
                }
                let bo = &bumps[a][o];
                if !nonzero_here && bo.val == 0.0 && bo.grad == Vec3::zeros() {
                    continue;
                }
                let z = v[ta] - v[o];
                let (av, beta) = spec.pair_coefficients(&z)?;
                let amat = Mat3::identity() * av - z * z.transpose() * beta;
                let b = z * (-2.0 * beta);
                ca += amat.component_mul(&haa).sum();
                cb += 2.0 * b.dot(&ga);
                cbx += b.dot(&(ga - bo.grad * others[a]));
            }
            let denom = (n - m) as f64;
            if denom > 0.0 {
                acc.cross_a += ca / denom;
                acc.cross_b += cb / denom;
                acc.cross_b_ex += cbx / denom;
            }
            for b_slot in 0..m {
                if b_slot == a {
                    continue;
                }
                let tb = tuple[b_slot];
                let z = v[ta] - v[tb];
                let (av, beta) = spec.pair_coefficients(&z)?;
                let amat = Mat3::identity() * av - z * z.transpose() * beta;
                let b = z * (-2.0 * beta);
                // d_ab phi = grad psi_a grad psi_b^T prod_{l != a, b} psi_l.
                let rest: f64 = (0..m)
                    .filter(|&l| l != a && l != b_slot)
                    .map(|l| slot_vals[l])
                    .product();
                let hab = ba.grad * bumps[b_slot][tb].grad.transpose() * rest;
                let pa = amat.component_mul(&(haa - hab)).sum() / nf;
                acc.pair_a += pa;
                acc.pair += pa + b.dot(&(ga - grads[b_slot])) / nf;
            }
        }
    }
    let scale = 1.0 / nf;
    Ok(Integrands {
        phi: acc.phi * scale,
        pair: acc.pair * scale,
        pair_a: acc.pair_a * scale,
        cross_a: acc.cross_a * scale,
        cross_b: acc.cross_b * scale,
        cross_b_ex: acc.cross_b_ex * scale,
    })
}

impl Integrands {
    /// `(self + other) / 2`.
    fn midpoint(&self, other: &Self) -> Self {
        Self {
            phi: 0.5 * (self.phi + other.phi),
            pair: 0.5 * (self.pair + other.pair),
            pair_a: 0.5 * (self.pair_a + other.pair_a),
            cross_a: 0.5 * (self.cross_a + other.cross_a),
            cross_b: 0.5 * (self.cross_b + other.cross_b),
            cross_b_ex: 0.5 * (self.cross_b_ex + other.cross_b_ex),
        }
    }
}

/// Step observer accumulating a [`HierarchyTally`] with the trapezoidal rule
/// in time and the antithetic control variates. Needs runs without energy
/// projection.
pub struct HierarchyObserver {
    tf: TestFunction,
    spec: PotentialSpec,
    last: Integrands,
    reflected: Vec<Vec3>,
    pub tally: HierarchyTally,
    pub error: Option<String>,
}

impl HierarchyObserver {
    pub fn new(tf: TestFunction, spec: PotentialSpec, n_particles: usize) -> Result<Self> {
        tf.validate()?;
        if tf.m() + 1 > n_particles {
            return Err(config(format!(
                "need m + 1 <= N, got m = {} and N = {n_particles}",
                tf.m()
            )));
        }
        let m = tf.m();
        Ok(Self {
            tf,
            spec,
            last: Integrands::default(),
            reflected: Vec::new(),
            tally: HierarchyTally {
                n_particles,
                m,
                ..Default::default()
            },
            error: None,
        })
    }
}

impl StepObserver for HierarchyObserver {
    fn start(&mut self, _t: f64, v: &[Vec3]) {
        match evaluate(&self.tf, &self.spec, v) {
            Ok(i) => {
                self.last = i;
                self.tally.phi_start = i.phi;
                self.tally.phi_end = i.phi;
            }
            Err(e) => self.error = Some(e.to_string()),
        }
    }

    fn step(&mut self, d: &StepData<'_>) {
        if self.error.is_some() {
            return;
        }
        if d.projected {
            self.error = Some("the hierarchy observer needs runs without energy projection".into());
            return;
        }
        self.reflected.clear();
        self.reflected
            .extend(d.after.iter().zip(d.noise).map(|(v, xi)| v - xi * 2.0));
        let quad = second_order_term(&self.tf, d.before, d.noise);
        let evaluated = evaluate(&self.tf, &self.spec, d.after)
            .and_then(|now| Ok((now, evaluate(&self.tf, &self.spec, &self.reflected)?)));
        let (now, mirror) = match evaluated {
            Ok(x) => x,
            Err(e) => {
                self.error = Some(e.to_string());
                return;
            }
        };
        let even = now.midpoint(&mirror);
        let h = 0.5 * d.dt;
        let w = (self.tally.n_particles - self.tally.m) as f64 / self.tally.n_particles as f64;
        let diffusion_part = w * self.last.cross_a + self.last.pair_a;
        let t = &mut self.tally;
        t.martingale += 0.5 * (now.phi - mirror.phi);
        t.martingale_second += 0.5 * quad - d.dt * diffusion_part;
        t.int_pair += h * (self.last.pair + even.pair);
        t.int_cross_a += h * (self.last.cross_a + even.cross_a);
        t.int_cross_b += h * (self.last.cross_b + even.cross_b);
        t.int_cross_b_exchanged += h * (self.last.cross_b_ex + even.cross_b_ex);
        t.phi_end = now.phi;
        self.last = now;
    }
}

/// `xi^T hess phi xi` at `v`, averaged over cyclic tuples.
fn second_order_term(tf: &TestFunction, v: &[Vec3], noise: &[Vec3]) -> f64 {
    let n = v.len();
    let m = tf.m();
    let bumps: Vec<Vec<Bump>> = (0..m).map(|l| v.iter().map(|x| tf.bump(l, x)).collect()).collect();
    let mut second = 0.0;
    let mut slot: Vec<Bump> = Vec::with_capacity(m);
    for s in 0..n {
        slot.clear();
        slot.extend((0..m).map(|a| bumps[a][(s + a) % n]));
        let prod_except =
            |skip: &[usize]| -> f64 { (0..m).filter(|l| !skip.contains(l)).map(|l| slot[l].val).product() };
        for a in 0..m {
            let xa = noise[(s + a) % n];
            let oa = prod_except(&[a]);
            if oa == 0.0 && m > 1 {
                continue;
            }
            second += xa.dot(&(slot[a].hess * xa)) * oa;
            for b in 0..m {
                if b != a {
                    let xb = noise[(s + b) % n];
                    second += slot[a].grad.dot(&xa) * slot[b].grad.dot(&xb) * prod_except(&[a, b]);
                }
            }
        }
    }
    second / n as f64
}

/// Tallies from stored snapshots (trapezoid on the record grid, no control
/// variate). Needs `store_velocities`.
pub fn tallies_from_snapshots(
    ens: &EnsembleResult,
    tf: &TestFunction,
    spec: &PotentialSpec,
) -> Result<Vec<HierarchyTally>> {
    tf.validate()?;
    let n = ens.n_particles;
    let m = tf.m();
    if m + 1 > n {
        return Err(config(format!("need m + 1 <= N, got m = {m} and N = {n}")));
    }
    let mut max_speed: f64 = 0.0;
    let mut out = Vec::with_capacity(ens.runs.len());
    for run in &ens.runs {
        let mut tally = HierarchyTally {
            n_particles: n,
            m,
            ..Default::default()
        };
        let mut prev: Option<(f64, Integrands)> = None;
        for snap in &run.snapshots {
            let v = snap
                .velocities
                .as_ref()
                .ok_or_else(|| domain("velocities were not stored"))?;
            max_speed = v.iter().map(|x| x.norm()).fold(max_speed, f64::max);
            let now = evaluate(tf, spec, v)?;
            match prev {
                None => tally.phi_start = now.phi,
                Some((t0, last)) => {
                    let h = 0.5 * (snap.t - t0);
                    tally.int_pair += h * (last.pair + now.pair);
                    tally.int_cross_a += h * (last.cross_a + now.cross_a);
                    tally.int_cross_b += h * (last.cross_b + now.cross_b);
                    tally.int_cross_b_exchanged += h * (last.cross_b_ex + now.cross_b_ex);
                }
            }
            tally.phi_end = now.phi;
            prev = Some((snap.t, now));
        }
        out.push(tally);
    }
    if tf.support_extent() > max_speed {
        log::warn!(
            "test function support reaches |v| = {:.3}, beyond the recorded data range {:.3}",
            tf.support_extent(),
            max_speed
        );
    }
    Ok(out)
}

fn summarize<F: Fn(&HierarchyTally) -> f64>(tallies: &[HierarchyTally], f: F) -> Result<FunctionalEstimate> {
    if tallies.is_empty() {
        return Err(domain("no runs"));
    }
    let xs: Vec<f64> = tallies.iter().map(f).collect();
    Ok(mean_se(&xs))
}

/// BBGKY weak-form residual: mean and standard error across runs.
pub fn bbgky_residual(tallies: &[HierarchyTally]) -> Result<FunctionalEstimate> {
    summarize(tallies, |t| t.bbgky())
}

/// Landau-hierarchy weak-form residual across runs.
pub fn landau_hierarchy_residual(tallies: &[HierarchyTally]) -> Result<FunctionalEstimate> {
    summarize(tallies, |t| t.landau())
}

/// Difference `landau - bbgky` across runs.
pub fn hierarchy_gap(tallies: &[HierarchyTally]) -> Result<FunctionalEstimate> {
    summarize(tallies, |t| t.gap())
}
