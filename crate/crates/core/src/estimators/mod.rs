//! Statistical estimators on particle data: entropy, Fisher information,
//! chaos distance, mean-field coefficients and hierarchy residuals.

pub mod hierarchy;
mod kdtree;

use rand::Rng;
use serde::Serialize;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::domain;
use crate::kernels::PotentialSpec;
use crate::rng::substream;
use crate::simulator::EnsembleResult;
use crate::stats::{jackknife, FunctionalEstimate};
use crate::{Mat3, Result, Vec3};

pub use hierarchy::{
    bbgky_residual, hierarchy_gap, landau_hierarchy_residual, tallies_from_snapshots, HierarchyObserver,
    HierarchyTally, TestFunction,
};
pub use kdtree::KdTree;

/// Largest number of jackknife blocks.
pub const MAX_JACKKNIFE_BLOCKS: usize = 32;

/// Points in `R^dim` with a group label (usually the run index) per point.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub dim: usize,
    pub data: Vec<f64>,
    pub groups: Vec<usize>,
}

impl Samples {
    pub fn new(dim: usize, data: Vec<f64>, groups: Vec<usize>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 || data.len() / dim != groups.len() {
            return Err(domain("sample data, dimension and groups are inconsistent"));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(domain("samples contain non-finite values"));
        }
        Ok(Self { dim, data, groups })
    }

    /// i.i.d. rows, grouped into contiguous blocks.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        let n = rows.len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().cloned()).collect();
        let groups = (0..n).map(|i| i * MAX_JACKKNIFE_BLOCKS / n.max(1)).collect();
        Self::new(dim, data, groups)
    }

    /// Disjoint `m`-particle tuples from every run at record index `k`,
    /// grouped by run. Needs stored velocities.
    pub fn from_ensemble(ens: &EnsembleResult, k: usize, m: usize) -> Result<Self> {
        if m == 0 || m > ens.n_particles {
            return Err(domain(format!("tuple size {m} not in 1..=N")));
        }
        let mut data = Vec::new();
        let mut groups = Vec::new();
        for run in &ens.runs {
            let snap = run
                .snapshots
                .get(k)
                .ok_or_else(|| domain(format!("record index {k} out of range")))?;
            let v = snap
                .velocities
                .as_ref()
                .ok_or_else(|| domain("velocities were not stored"))?;
            for t in 0..ens.n_particles / m {
                for p in 0..m {
                    data.extend_from_slice(v[t * m + p].as_slice());
                }
                groups.push(run.run);
            }
        }
        Self::new(3 * m, data, groups)
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Jackknife block of each point (at most [`MAX_JACKKNIFE_BLOCKS`]).
    pub fn blocks(&self) -> (Vec<usize>, usize) {
        let mut uniq: Vec<usize> = self.groups.clone();
        uniq.sort_unstable();
        uniq.dedup();
        let g = uniq.len();
        let nb = g.min(MAX_JACKKNIFE_BLOCKS);
        let ids = self
            .groups
            .iter()
            .map(|x| uniq.binary_search(x).unwrap() * nb / g)
            .collect();
        (ids, nb)
    }
}

fn has_duplicates(s: &Samples) -> bool {
    let mut idx: Vec<usize> = (0..s.len()).collect();
    idx.sort_unstable_by(|&a, &b| {
        s.row(a)
            .iter()
            .zip(s.row(b))
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx.windows(2).any(|w| s.row(w[0]) == s.row(w[1]))
}

fn unit_ball_log_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    h * std::f64::consts::PI.ln() - ln_gamma(h + 1.0)
}

fn kl_entropy_subset(s: &Samples, subset: Vec<usize>, k: usize) -> Result<f64> {
    let n = subset.len();
    if n < k + 1 {
        return Err(domain(format!("need more than k = {k} samples, got {n}")));
    }
    let d = s.dim;
    let tree = KdTree::build(&s.data, d, subset.clone());
    let mut sum_log = 0.0;
    for &p in &subset {
        let r = tree.kth_distance(p, k);
        if !(r > 0.0) {
            return Err(domain("duplicate samples give a zero neighbour distance"));
        }
        sum_log += r.ln();
    }
    // Differential entropy h = -int f log f.
    Ok(digamma(n as f64) - digamma(k as f64) + unit_ball_log_volume(d) + d as f64 * sum_log / n as f64)
}

/// Kozachenko-Leonenko estimate of the normalised entropy
/// `(1/m) int f log f` of the law of `m`-particle tuples (`dim = 3m`), with a
/// delete-a-block jackknife standard error.
/// Duplicate points get a deterministic `1e-12` jitter and a warning.
pub fn knn_entropy(samples: &Samples, k: usize) -> Result<FunctionalEstimate> {
    if k == 0 {
        return Err(domain("k must be >= 1"));
    }
    let jittered;
    let samples = if has_duplicates(samples) {
        log::warn!("duplicate samples found; applying 1e-12 jitter before the nearest-neighbour search");
        let mut rng = substream(0, "knn-jitter", samples.len() as u64);
        let data = samples
            .data
            .iter()
            .map(|x| x + 1e-12 * rng.random_range(-1.0..1.0))
            .collect();
        jittered = Samples::new(samples.dim, data, samples.groups.clone())?;
        &jittered
    } else {
        samples
    };
    let n = samples.len();
    let m = samples.dim as f64 / 3.0;
    let full = -kl_entropy_subset(samples, (0..n).collect(), k)? / m;
    let (blocks, nb) = samples.blocks();
    let mut loo = Vec::with_capacity(nb);
    for b in 0..nb {
        let subset: Vec<usize> = (0..n).filter(|&i| blocks[i] != b).collect();
        loo.push(-kl_entropy_subset(samples, subset, k)? / m);
    }
    Ok(jackknife(full, &loo, n))
}

/// KDE plug-in estimate of the Fisher information of a one-particle law.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KdeFisher {
    pub value: f64,
    pub std_error: f64,
    pub bandwidth: f64,
    pub at_half_bandwidth: f64,
    pub at_double_bandwidth: f64,
    /// Smallest and largest of the three bandwidth variants.
    pub band: [f64; 2],
    pub n_samples: usize,
}

impl KdeFisher {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.band[1] - self.band[0])
    }

    pub fn band_contains(&self, x: f64) -> bool {
        self.band[0] <= x && x <= self.band[1]
    }
}

fn kde_scores(s: &Samples, eval: &[usize], h: f64) -> Vec<f64> {
    let n = s.len();
    let inv2h2 = 0.5 / (h * h);
    let mut out = Vec::with_capacity(eval.len());
    let mut d2 = vec![0.0; n];
    for &i in eval {
        let xi = s.row(i);
        let mut dmin = f64::INFINITY;
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = s.row(j);
            let v = (xj[0] - xi[0]).powi(2) + (xj[1] - xi[1]).powi(2) + (xj[2] - xi[2]).powi(2);
            d2[j] = v;
            dmin = dmin.min(v);
        }
        let mut w = 0.0;
        let mut g = [0.0; 3];
        for j in 0..n {
            if j == i {
                continue;
            }
            let e = (-(d2[j] - dmin) * inv2h2).exp();
            let xj = s.row(j);
            w += e;
            for a in 0..3 {
                g[a] += e * (xj[a] - xi[a]);
            }
        }
        let h2 = h * h;
        out.push((g[0] * g[0] + g[1] * g[1] + g[2] * g[2]) / (w * w * h2 * h2));
    }
    out
}

/// Leave-one-out Gaussian KDE plug-in estimate of `int |grad f|^2 / f` for
/// one-particle samples, with Silverman's bandwidth `h` and the sensitivity
/// band from `h/2` and `2h`. The score is evaluated at up to `max_eval`
/// evenly strided sample points; the standard error is a block jackknife over
/// sample groups at fixed kernel centres.
pub fn kde_fisher_marginal(samples: &Samples, max_eval: usize) -> Result<KdeFisher> {
    if samples.dim != 3 {
        return Err(domain("KDE Fisher estimator needs one-particle samples"));
    }
    let n = samples.len();
    if n < 10 || max_eval == 0 {
        return Err(domain("need at least 10 samples and one evaluation point"));
    }
    let mut var = 0.0;
    for a in 0..3 {
        let mean = (0..n).map(|i| samples.row(i)[a]).sum::<f64>() / n as f64;
        var += (0..n).map(|i| (samples.row(i)[a] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    let sigma = (var / 3.0).sqrt();
    if !(sigma > 0.0) {
        return Err(domain("samples have zero spread"));
    }
    let h = sigma * (4.0 / (5.0 * n as f64)).powf(1.0 / 7.0);
    let stride = n.div_ceil(max_eval).max(1);
    let eval: Vec<usize> = (0..n).step_by(stride).collect();
    let contrib = kde_scores(samples, &eval, h);
    let value = contrib.iter().sum::<f64>() / contrib.len() as f64;
    let half = kde_scores(samples, &eval, 0.5 * h).iter().sum::<f64>() / eval.len() as f64;
    let double = kde_scores(samples, &eval, 2.0 * h).iter().sum::<f64>() / eval.len() as f64;
    let (blocks, nb) = samples.blocks();
    let loo: Vec<f64> = (0..nb)
        .map(|b| {
            let kept: Vec<f64> = eval
                .iter()
                .zip(&contrib)
                .filter(|(&i, _)| blocks[i] != b)
                .map(|(_, c)| *c)
                .collect();
            kept.iter().sum::<f64>() / kept.len().max(1) as f64
        })
        .collect();
    let se = jackknife(value, &loo, eval.len()).std_error;
    let lo = value.min(half).min(double);
    let hi = value.max(half).max(double);
    Ok(KdeFisher {
        value,
        std_error: se,
        bandwidth: h,
        at_half_bandwidth: half,
        at_double_bandwidth: double,
        band: [lo, hi],
        n_samples: n,
    })
}

/// Energy distance between the joint law of particle pairs `(v_{2k}, v_{2k+1})`
/// within runs and the product law obtained by taking the second particle
/// from the next run. Unbiased U-statistic over samples built from disjoint
/// runs, zero in expectation under independence; jackknife over runs.
pub fn chaos_distance(runs: &[Vec<Vec3>], max_pairs_per_run: usize) -> Result<FunctionalEstimate> {
    let r = runs.len();
    if r < 3 {
        return Err(domain("chaos distance needs at least three runs"));
    }
    let n_part = runs.iter().map(|v| v.len()).min().unwrap_or(0);
    let pairs = (n_part / 2).min(max_pairs_per_run);
    if pairs == 0 {
        return Err(domain("runs need at least two particles"));
    }
    let mut xs: Vec<[f64; 6]> = Vec::new();
    let mut ys: Vec<[f64; 6]> = Vec::new();
    let mut grp = Vec::new();
    for (ri, run) in runs.iter().enumerate() {
        let next = &runs[(ri + 1) % r];
        for k in 0..pairs {
            let (a, b, c) = (run[2 * k], run[2 * k + 1], next[2 * k + 1]);
            xs.push([a[0], a[1], a[2], b[0], b[1], b[2]]);
            ys.push([a[0], a[1], a[2], c[0], c[1], c[2]]);
            grp.push(ri);
        }
    }
    let nb = r.min(MAX_JACKKNIFE_BLOCKS);
    let blk: Vec<usize> = grp.iter().map(|g| g * nb / r).collect();
    let dist = |p: &[f64; 6], q: &[f64; 6]| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    // An x sample uses run `g`, a y sample runs `g` and `g + 1`. Only pairs
    // built from disjoint runs are independent, so the U-statistic keeps
    // just those and stays unbiased at finite R.
    let next_run = |g: usize| (g + 1) % r;
    let n = xs.len();
    let mut sums = vec![[0.0f64; 3]; nb * nb];
    let mut counts = vec![[0usize; 3]; nb * nb];
    for i in 0..n {
        let gi = grp[i];
        for j in 0..n {
            let gj = grp[j];
            let cell = blk[i] * nb + blk[j];
            if gi != gj && gi != next_run(gj) {
                sums[cell][0] += dist(&xs[i], &ys[j]);
                counts[cell][0] += 1;
            }
            if j > i {
                if gi != gj {
                    sums[cell][1] += dist(&xs[i], &xs[j]);
                    counts[cell][1] += 1;
                }
                if gi != gj && gi != next_run(gj) && gj != next_run(gi) {
                    sums[cell][2] += dist(&ys[i], &ys[j]);
                    counts[cell][2] += 1;
                }
            }
        }
    }
    let stat = |skip: Option<usize>| {
        let keep = |b: usize| Some(b) != skip;
        let mut s = [0.0; 3];
        let mut c = [0usize; 3];
        for b in (0..nb).filter(|&b| keep(b)) {
            for d in (0..nb).filter(|&d| keep(d)) {
                for k in 0..3 {
                    s[k] += sums[b * nb + d][k];
                    c[k] += counts[b * nb + d][k];
                }
            }
        }
        let mean = |k: usize| if c[k] > 0 { s[k] / c[k] as f64 } else { 0.0 };
        2.0 * mean(0) - mean(1) - mean(2)
    };
    let full = stat(None);
    let loo: Vec<f64> = (0..nb).map(|b| stat(Some(b))).collect();
    Ok(jackknife(full, &loo, n))
}

/// Mean-field coefficients `(A * f)(v)` and `(B * f)(v)` of an empirical measure.
pub fn meanfield_coefficients(samples: &[Vec3], spec: &PotentialSpec, query: &[Vec3]) -> Result<Vec<(Mat3, Vec3)>> {
    if samples.is_empty() {
        return Err(domain("empirical measure is empty"));
    }
    spec.validate()?;
    let n = samples.len() as f64;
    query
        .iter()
        .map(|v| {
            let mut a = Mat3::zeros();
            let mut b = Vec3::zeros();
            for w in samples {
                let z = v - w;
                let (av, beta) = spec.pair_coefficients(&z)?;
                a += Mat3::identity() * av - z * z.transpose() * beta;
                b += z * (-2.0 * beta);
            }
            Ok((a / n, b / n))
        })
        .collect()
}
