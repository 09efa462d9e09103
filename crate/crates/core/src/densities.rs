//! Gaussian mixtures on `R^d` (`d = 3N`) with analytic derivatives.
//!
//! Derivatives are returned divided by the density: `s = grad g / g`,
//! `D2 = hess g / g`, and contractions of `D3 = grad^3 g / g`. Working with
//! these ratios keeps everything finite where `g` underflows, and every
//! dissipation integrand is an expectation under `g` of such ratios.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain};
use crate::rng::substream;
use crate::stats::{FunctionalEstimate, MeanAcc};
use crate::{Error, Mat3, Result};

/// Monte Carlo samples are drawn in chunks of this size, one RNG substream
/// per chunk, so results do not depend on the number of threads.
pub const MC_CHUNK: usize = 2048;

/// Plain-data description of a mixture (covariances row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
}

/// Gaussian mixture with precomputed factorisations.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<f64>>,
    precisions: Vec<Vec<f64>>,
    chol: Vec<Vec<f64>>,
    log_norm: Vec<f64>,
    cum_weights: Vec<f64>,
}

/// Pointwise derivative data of a mixture.
#[derive(Debug, Clone)]
pub struct Jet {
    pub dim: usize,
    pub log_g: f64,
    /// `grad g / g`.
    pub s: Vec<f64>,
    /// `hess g / g`, row-major `d x d`.
    pub d2: Vec<f64>,
    /// Posterior component probabilities.
    pub resp: Vec<f64>,
    /// `u_k = P_k (x - mu_k)`, concatenated.
    pub u: Vec<f64>,
    logp: Vec<f64>,
    diff: Vec<f64>,
}

impl Jet {
    pub fn new(dim: usize, n_components: usize) -> Self {
        Self {
            dim,
            log_g: 0.0,
            s: vec![0.0; dim],
            d2: vec![0.0; dim * dim],
            resp: vec![0.0; n_components],
            u: vec![0.0; dim * n_components],
            logp: vec![0.0; n_components],
            diff: vec![0.0; dim],
        }
    }

    #[inline]
    pub fn d2_at(&self, a: usize, b: usize) -> f64 {
        self.d2[a * self.dim + b]
    }

    /// 3x3 block `(p, q)` of `hess g / g` for particles `p` and `q`.
    pub fn d2_block(&self, p: usize, q: usize) -> Mat3 {
        Mat3::from_fn(|a, b| self.d2[(3 * p + a) * self.dim + 3 * q + b])
    }

    /// 3-vector block of `grad g / g` for particle `p`.
    pub fn s_block(&self, p: usize) -> crate::Vec3 {
        crate::Vec3::new(self.s[3 * p], self.s[3 * p + 1], self.s[3 * p + 2])
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GaussianMixture {
    pub fn new(spec: &MixtureSpec) -> Result<Self> {
        let k = spec.weights.len();
        if k == 0 {
            return Err(config("mixture needs at least one component"));
        }
        if spec.means.len() != k || spec.covariances.len() != k {
            return Err(config("weights, means and covariances differ in length"));
        }
        let dim = spec.means[0].len();
        if dim == 0 || dim % 3 != 0 {
            return Err(config(format!("dimension {dim} is not a positive multiple of 3")));
        }
        let wsum: f64 = spec.weights.iter().sum();
        if spec.weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) || (wsum - 1.0).abs() > 1e-9 {
            return Err(config(format!("weights must be positive and sum to 1 (sum = {wsum})")));
        }
        let mut out = Self {
            dim,
            weights: Vec::with_capacity(k),
            means: Vec::with_capacity(k),
            covs: Vec::with_capacity(k),
            precisions: Vec::with_capacity(k),
            chol: Vec::with_capacity(k),
            log_norm: Vec::with_capacity(k),
            cum_weights: Vec::with_capacity(k),
        };
        let mut cum = 0.0;
        for c in 0..k {
            let mean = &spec.means[c];
            let cov = &spec.covariances[c];
            if mean.len() != dim || cov.len() != dim * dim {
                return Err(config(format!("component {c} has mismatched dimensions")));
            }
            if mean.iter().chain(cov.iter()).any(|x| !x.is_finite()) {
                return Err(config(format!("component {c} has non-finite entries")));
            }
            let m = DMatrix::from_row_slice(dim, dim, cov);
            let asym = (&m - m.transpose()).abs().max();
            if asym > 1e-10 * m.abs().max().max(1.0) {
                return Err(config(format!("covariance {c} is not symmetric")));
            }
            let ch = nalgebra::Cholesky::new(m.clone())
                .ok_or_else(|| config(format!("covariance {c} is not positive definite")))?;
            let l = ch.l();
            let logdet: f64 = 2.0 * (0..dim).map(|i| l[(i, i)].ln()).sum::<f64>();
            let prec = ch.inverse();
            let prec = (&prec + prec.transpose()) * 0.5;
            out.weights.push(spec.weights[c] / wsum);
            cum += spec.weights[c] / wsum;
            out.cum_weights.push(cum);
            out.means.push(mean.clone());
            out.covs.push(cov.clone());
            out.precisions.push(prec.transpose().as_slice().to_vec());
            out.chol.push(l.transpose().as_slice().to_vec());
            out.log_norm
                .push((spec.weights[c] / wsum).ln() - 0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + logdet));
        }
        Ok(out)
    }

    /// Single Gaussian `N(mean, cov)`.
    pub fn gaussian(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        Self::new(&MixtureSpec {
            weights: vec![1.0],
            means: vec![mean],
            covariances: vec![cov],
        })
    }

    /// `N(0, sigma^2 I_d)`.
    pub fn isotropic(dim: usize, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(config("variance must be positive"));
        }
        let mut cov = vec![0.0; dim * dim];
        (0..dim).for_each(|i| cov[i * dim + i] = sigma2);
        Self::gaussian(vec![0.0; dim], cov)
    }

    pub fn spec(&self) -> MixtureSpec {
        MixtureSpec {
            weights: self.weights.clone(),
            means: self.means.clone(),
            covariances: self.covs.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.dim / 3
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<f64>] {
        &self.covs
    }

    /// Precision matrix of component `k`, row-major.
    pub fn precision(&self, k: usize) -> &[f64] {
        &self.precisions[k]
    }

    pub fn new_jet(&self) -> Jet {
        Jet::new(self.dim, self.n_components())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(domain(format!(
                "point has dimension {} but mixture has {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(domain("point has non-finite coordinates"));
        }
        Ok(())
    }

    /// `log g(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let d = self.dim;
        let mut logs = Vec::with_capacity(self.n_components());
        for k in 0..self.n_components() {
            let mu = &self.means[k];
            let p = &self.precisions[k];
            let mut q = 0.0;
            for a in 0..d {
                let da = x[a] - mu[a];
                let mut row = 0.0;
                for b in 0..d {
                    row += p[a * d + b] * (x[b] - mu[b]);
                }
                q += da * row;
            }
            logs.push(self.log_norm[k] - 0.5 * q);
        }
        Ok(log_sum_exp(&logs))
    }

    /// Score `grad log g(x)`.
    pub fn score(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut jet = self.new_jet();
        self.eval_jet(x, &mut jet, false)?;
        Ok(jet.s.clone())
    }

    /// Hessian of `log g` at `x`, row-major.
    pub fn hessian_log(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut jet = self.new_jet();
        self.eval_jet(x, &mut jet, true)?;
        let d = self.dim;
        let mut h = jet.d2.clone();
        for a in 0..d {
            for b in 0..d {
                h[a * d + b] -= jet.s[a] * jet.s[b];
            }
        }
        Ok(h)
    }

    /// Fill `jet` at `x`. `with_d2 = false` skips the Hessian ratio.
    pub fn eval_jet(&self, x: &[f64], jet: &mut Jet, with_d2: bool) -> Result<()> {
        self.check_point(x)?;
        let d = self.dim;
        let kc = self.n_components();
        for k in 0..kc {
            let mu = &self.means[k];
            let p = &self.precisions[k];
            for a in 0..d {
                jet.diff[a] = x[a] - mu[a];
            }
            let u = &mut jet.u[k * d..(k + 1) * d];
            let mut q = 0.0;
            for a in 0..d {
                let row = &p[a * d..(a + 1) * d];
                let mut acc = 0.0;
                for b in 0..d {
                    acc += row[b] * jet.diff[b];
                }
                u[a] = acc;
                q += jet.diff[a] * acc;
            }
            jet.logp[k] = self.log_norm[k] - 0.5 * q;
        }
        jet.log_g = log_sum_exp(&jet.logp);
        if !jet.log_g.is_finite() {
            return Err(Error::Numerical("log-density is not finite".into()));
        }
        jet.s.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..kc {
            let r = (jet.logp[k] - jet.log_g).exp();
            jet.resp[k] = r;
            let u = &jet.u[k * d..(k + 1) * d];
            for a in 0..d {
                jet.s[a] -= r * u[a];
            }
        }
        if with_d2 {
            jet.d2.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..kc {
                let r = jet.resp[k];
                if r < 1e-300 {
                    continue;
                }
                let u = &jet.u[k * d..(k + 1) * d];
                let p = &self.precisions[k];
                for a in 0..d {
                    let ra = r * u[a];
                    for b in 0..d {
                        jet.d2[a * d + b] += ra * u[b] - r * p[a * d + b];
                    }
                }
            }
        }
        Ok(())
    }

    /// `D3_{abc} = d^3 g / (dx_a dx_b dx_c) / g` at the point of `jet`.
    pub fn d3_entry(&self, jet: &Jet, a: usize, b: usize, c: usize) -> f64 {
        let d = self.dim;
        let mut out = 0.0;
        for k in 0..self.n_components() {
            let u = &jet.u[k * d..(k + 1) * d];
            let p = &self.precisions[k];
            out +=
                jet.resp[k] * (-u[a] * u[b] * u[c] + p[a * d + b] * u[c] + p[a * d + c] * u[b] + p[b * d + c] * u[a]);
        }
        out
    }

    /// Accumulate `sum_{ab} W_ab D3_{abc}` into `out` for the pair pattern
    /// `W = (e_i - e_j)(e_i - e_j)^T (x) A` with symmetric `A`.
    pub fn d3_contract_pair(&self, jet: &Jet, i: usize, j: usize, amat: &Mat3, out: &mut [f64]) {
        let d = self.dim;
        let (bi, bj) = (3 * i, 3 * j);
        for k in 0..self.n_components() {
            let r = jet.resp[k];
            if r < 1e-300 {
                continue;
            }
            let u = &jet.u[k * d..(k + 1) * d];
            let p = &self.precisions[k];
            let du = [u[bi] - u[bj], u[bi + 1] - u[bj + 1], u[bi + 2] - u[bj + 2]];
            let mut y = [0.0; 3];
            let mut uwu = 0.0;
            let mut wp = 0.0;
            for al in 0..3 {
                for be in 0..3 {
                    let aab = amat[(al, be)];
                    y[al] += aab * du[be];
                    let pblk = p[(bi + al) * d + bi + be] - p[(bi + al) * d + bj + be] - p[(bj + al) * d + bi + be]
                        + p[(bj + al) * d + bj + be];
                    wp += aab * pblk;
                }
                uwu += du[al] * y[al];
            }
            let coef = r * (wp - uwu);
            for c in 0..d {
                let prow = &p[c * d..(c + 1) * d];
                let pwu = prow[bi] * y[0] + prow[bi + 1] * y[1] + prow[bi + 2] * y[2]
                    - prow[bj] * y[0]
                    - prow[bj + 1] * y[1]
                    - prow[bj + 2] * y[2];
                out[c] += coef * u[c] + 2.0 * r * pwu;
            }
        }
    }

    /// Accumulate `sum_{a in block i} D3_{aac}` into `out` (gradient of
    /// `Delta_i g / g`).
    pub fn d3_contract_block_laplacian(&self, jet: &Jet, i: usize, out: &mut [f64]) {
        let d = self.dim;
        let bi = 3 * i;
        for k in 0..self.n_components() {
            let r = jet.resp[k];
            if r < 1e-300 {
                continue;
            }
            let u = &jet.u[k * d..(k + 1) * d];
            let p = &self.precisions[k];
            let uu = u[bi] * u[bi] + u[bi + 1] * u[bi + 1] + u[bi + 2] * u[bi + 2];
            let tp = p[bi * d + bi] + p[(bi + 1) * d + bi + 1] + p[(bi + 2) * d + bi + 2];
            let coef = r * (tp - uu);
            for c in 0..d {
                let prow = &p[c * d..(c + 1) * d];
                let pu = prow[bi] * u[bi] + prow[bi + 1] * u[bi + 1] + prow[bi + 2] * u[bi + 2];
                out[c] += coef * u[c] + 2.0 * r * pu;
            }
        }
    }

    /// Draw one sample into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let d = self.dim;
        let u: f64 = rng.random();
        let k = self
            .cum_weights
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.n_components() - 1);
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let l = &self.chol[k];
        for a in 0..d {
            let mut acc = self.means[k][a];
            for b in 0..=a {
                acc += l[a * d + b] * z[b];
            }
            out[a] = acc;
        }
    }

    /// `n` samples as rows.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let mut x = vec![0.0; self.dim];
                self.sample_into(rng, &mut x);
                x
            })
            .collect()
    }

    /// Draw `n_samples` points from `g` in fixed chunks and accumulate
    /// `n_out` integrands per point. Deterministic for a given seed.
    pub fn mc_accumulate<S, M, F>(
        &self,
        n_samples: usize,
        seed: u64,
        n_out: usize,
        make_scratch: M,
        f: F,
    ) -> Result<Vec<MeanAcc>>
    where
        M: Fn() -> S + Sync,
        F: Fn(&[f64], &mut S, &mut [f64]) -> Result<()> + Sync,
    {
        let n_chunks = n_samples.div_ceil(MC_CHUNK);
        let parts: Vec<Result<Vec<MeanAcc>>> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = substream(seed, "mc-sample", c as u64);
                let mut scratch = make_scratch();
                let mut accs = vec![MeanAcc::default(); n_out];
                let mut x = vec![0.0; self.dim];
                let mut vals = vec![0.0; n_out];
                let count = MC_CHUNK.min(n_samples - c * MC_CHUNK);
                for _ in 0..count {
                    self.sample_into(&mut rng, &mut x);
                    f(&x, &mut scratch, &mut vals)?;
                    for (acc, v) in accs.iter_mut().zip(&vals) {
                        acc.push(*v);
                    }
                }
                Ok(accs)
            })
            .collect();
        let mut total = vec![MeanAcc::default(); n_out];
        for part in parts {
            for (t, p) in total.iter_mut().zip(part?) {
                t.merge(&p);
            }
        }
        Ok(total)
    }

    /// Marginal of the first `m` particles.
    pub fn marginal(&self, m: usize) -> Result<GaussianMixture> {
        let n = self.n_particles();
        if m == 0 || m > n {
            return Err(domain(format!("marginal order {m} not in 1..={n}")));
        }
        let dm = 3 * m;
        let d = self.dim;
        GaussianMixture::new(&MixtureSpec {
            weights: self.weights.clone(),
            means: self.means.iter().map(|mu| mu[..dm].to_vec()).collect(),
            covariances: self
                .covs
                .iter()
                .map(|c| (0..dm).flat_map(|a| (0..dm).map(move |b| c[a * d + b])).collect())
                .collect(),
        })
    }

    /// Push-forward under the linear map `x -> R x`.
    pub fn linear_pushforward(&self, r: &DMatrix<f64>) -> Result<GaussianMixture> {
        let d = self.dim;
        if r.nrows() != d || r.ncols() != d {
            return Err(domain("map dimension mismatch"));
        }
        let spec = MixtureSpec {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|mu| (r * DVector::from_column_slice(mu)).as_slice().to_vec())
                .collect(),
            covariances: self
                .covs
                .iter()
                .map(|c| {
                    let m = r * DMatrix::from_row_slice(d, d, c) * r.transpose();
                    let m = (&m + m.transpose()) * 0.5;
                    m.transpose().as_slice().to_vec()
                })
                .collect(),
        };
        GaussianMixture::new(&spec)
    }

    /// For two particles, the law of `((v1 - v2) / sqrt 2, (v1 + v2) / sqrt 2)`.
    pub fn rotate_pair(&self) -> Result<GaussianMixture> {
        if self.n_particles() != 2 {
            return Err(domain("pair rotation needs exactly two particles"));
        }
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut r = DMatrix::zeros(6, 6);
        for a in 0..3 {
            r[(a, a)] = h;
            r[(a, 3 + a)] = -h;
            r[(3 + a, a)] = h;
            r[(3 + a, 3 + a)] = h;
        }
        self.linear_pushforward(&r)
    }

    /// Average over all permutations of the particle blocks.
    pub fn symmetrize(&self) -> Result<GaussianMixture> {
        let n = self.n_particles();
        let d = self.dim;
        let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
        let nf = perms.len() as f64;
        let mut spec = MixtureSpec {
            weights: vec![],
            means: vec![],
            covariances: vec![],
        };
        for perm in &perms {
            let idx: Vec<usize> = (0..d).map(|a| 3 * perm[a / 3] + a % 3).collect();
            for k in 0..self.n_components() {
                spec.weights.push(self.weights[k] / nf);
                spec.means.push(idx.iter().map(|&a| self.means[k][a]).collect());
                spec.covariances.push(
                    (0..d)
                        .flat_map(|a| {
                            let idx = &idx;
                            let c = &self.covs[k];
                            (0..d).map(move |b| c[idx[a] * d + idx[b]])
                        })
                        .collect(),
                );
            }
        }
        GaussianMixture::new(&spec)
    }

    /// Tensor power `g^{(x) n}` of a one-particle law.
    pub fn tensor_power(&self, n: usize) -> Result<GaussianMixture> {
        if self.dim != 3 {
            return Err(domain("tensor power needs a one-particle law"));
        }
        if n == 0 {
            return Err(domain("tensor power needs n >= 1"));
        }
        let k = self.n_components();
        let d = 3 * n;
        let mut spec = MixtureSpec {
            weights: vec![],
            means: vec![],
            covariances: vec![],
        };
        for combo in (0..n).map(|_| 0..k).multi_cartesian_product() {
            let mut w = 1.0;
            let mut mean = vec![0.0; d];
            let mut cov = vec![0.0; d * d];
            for (p, &c) in combo.iter().enumerate() {
                w *= self.weights[c];
                for a in 0..3 {
                    mean[3 * p + a] = self.means[c][a];
                    for b in 0..3 {
                        cov[(3 * p + a) * d + 3 * p + b] = self.covs[c][3 * a + b];
                    }
                }
            }
            spec.weights.push(w);
            spec.means.push(mean);
            spec.covariances.push(cov);
        }
        GaussianMixture::new(&spec)
    }

    /// Mean vector.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for a in 0..self.dim {
                m[a] += w * mu[a];
            }
        }
        m
    }

    /// Second moment matrix `E[x x^T]`, row-major.
    pub fn second_moment(&self) -> Vec<f64> {
        let d = self.dim;
        let mut s = vec![0.0; d * d];
        for k in 0..self.n_components() {
            let w = self.weights[k];
            for a in 0..d {
                for b in 0..d {
                    s[a * d + b] += w * (self.covs[k][a * d + b] + self.means[k][a] * self.means[k][b]);
                }
            }
        }
        s
    }

    /// Shift and scale a one-particle law to mean zero and `E|v|^2 = 3`.
    pub fn normalize_to_assumption(&self) -> Result<GaussianMixture> {
        if self.dim != 3 {
            return Err(domain("normalisation applies to one-particle laws on R^3"));
        }
        let m = self.mean();
        let mut second = 0.0;
        for k in 0..self.n_components() {
            let c = &self.covs[k];
            let mu = &self.means[k];
            second += self.weights[k] * (c[0] + c[4] + c[8] + (0..3).map(|a| (mu[a] - m[a]).powi(2)).sum::<f64>());
        }
        if !(second > 0.0) || !second.is_finite() {
            return Err(domain("law has zero or infinite second moment"));
        }
        let s = (3.0 / second).sqrt();
        GaussianMixture::new(&MixtureSpec {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|mu| (0..3).map(|a| s * (mu[a] - m[a])).collect())
                .collect(),
            covariances: self
                .covs
                .iter()
                .map(|c| c.iter().map(|v| v * s * s).collect())
                .collect(),
        })
    }

    /// Normalised entropy `(1/M) int g log g` by Monte Carlo.
    pub fn entropy_mc(&self, n_samples: usize, seed: u64) -> Result<FunctionalEstimate> {
        let m = self.n_particles() as f64;
        let acc = self.mc_accumulate(
            n_samples,
            seed,
            1,
            || (),
            |x, _, out| {
                out[0] = self.log_density(x)?;
                Ok(())
            },
        )?;
        Ok(acc[0].estimate().scaled(1.0 / m))
    }

    /// Normalised Fisher information `(1/M) int |grad g|^2 / g` by Monte Carlo.
    pub fn fisher_mc(&self, n_samples: usize, seed: u64) -> Result<FunctionalEstimate> {
        let m = self.n_particles() as f64;
        let acc = self.mc_accumulate(
            n_samples,
            seed,
            1,
            || self.new_jet(),
            |x, jet, out| {
                self.eval_jet(x, jet, false)?;
                out[0] = jet.s.iter().map(|v| v * v).sum();
                Ok(())
            },
        )?;
        Ok(acc[0].estimate().scaled(1.0 / m))
    }
}

/// Random symmetric mixture on `R^{3N}`: `n_base` Gaussians with random
/// means and covariances, averaged over particle permutations.
pub fn random_symmetric_mixture<R: Rng + ?Sized>(
    n_particles: usize,
    n_base: usize,
    rng: &mut R,
) -> Result<GaussianMixture> {
    if n_particles == 0 || n_base == 0 {
        return Err(config("need at least one particle and one component"));
    }
    let d = 3 * n_particles;
    let mut spec = MixtureSpec {
        weights: vec![],
        means: vec![],
        covariances: vec![],
    };
    for _ in 0..n_base {
        spec.weights.push(rng.random_range(0.5..1.5));
        spec.means
            .push((0..d).map(|_| 1.2 * rng.sample::<f64, _>(StandardNormal)).collect());
        let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
        let c = &g * g.transpose() * (0.6 / d as f64) + DMatrix::identity(d, d) * 0.25;
        spec.covariances.push(c.transpose().as_slice().to_vec());
    }
    let total: f64 = spec.weights.iter().sum();
    spec.weights.iter_mut().for_each(|w| *w /= total);
    GaussianMixture::new(&spec)?.symmetrize()
}
