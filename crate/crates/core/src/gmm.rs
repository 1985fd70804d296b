//! One-dimensional Gaussian mixtures: density, bounded sampling and weighted
//! EM fitting, plus the axis-factored action mixture used as a search prior.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::scene::{Action, ActionBounds};

/// Variance floor applied during label fitting (action units squared).
pub const VAR_MIN: f64 = 1e-4;

/// Draws outside the bounds are retried this many times before clamping.
pub const MAX_REJECTIONS: usize = 16;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GmmError {
    #[error("invalid mixture: {0}")]
    Invalid(String),
    #[error("degenerate input: {distinct} distinct values, need at least {needed}")]
    Degenerate { distinct: usize, needed: usize },
    #[error("invalid samples: {0}")]
    InvalidSamples(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmRepr", into = "GmmRepr")]
pub struct Gmm1D {
    phi: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
}

/// Flat serialized form `{K, phi, mu, var}`.
#[derive(Serialize, Deserialize)]
struct GmmRepr {
    #[serde(rename = "K")]
    k: usize,
    phi: Vec<f64>,
    mu: Vec<f64>,
    var: Vec<f64>,
}

impl TryFrom<GmmRepr> for Gmm1D {
    type Error = GmmError;
    fn try_from(r: GmmRepr) -> Result<Self, GmmError> {
        if r.phi.len() != r.k {
            return Err(GmmError::Invalid(format!("K = {} but {} weights", r.k, r.phi.len())));
        }
        Gmm1D::new(r.phi, r.mu, r.var)
    }
}

impl From<Gmm1D> for GmmRepr {
    fn from(g: Gmm1D) -> Self {
        GmmRepr {
            k: g.phi.len(),
            phi: g.phi,
            mu: g.mu,
            var: g.var,
        }
    }
}

#[inline]
fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    (-0.5 * d * d / var).exp() / (2.0 * PI * var).sqrt()
}

#[inline]
fn normal_log_pdf(x: f64, mu: f64, var: f64) -> f64 {
    let d = x - mu;
    -0.5 * d * d / var - 0.5 * (2.0 * PI * var).ln()
}

impl Gmm1D {
    pub fn new(phi: Vec<f64>, mu: Vec<f64>, var: Vec<f64>) -> Result<Self, GmmError> {
        let k = phi.len();
        if k == 0 || mu.len() != k || var.len() != k {
            return Err(GmmError::Invalid(format!(
                "component arrays must share a non-zero length (phi {}, mu {}, var {})",
                k,
                mu.len(),
                var.len()
            )));
        }
        if phi.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(GmmError::Invalid("mixing weights must be finite and >= 0".into()));
        }
        let total: f64 = phi.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(GmmError::Invalid(format!("mixing weights sum to {total}")));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(GmmError::Invalid("means must be finite".into()));
        }
        if var.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(GmmError::Invalid("variances must be finite and > 0".into()));
        }
        Ok(Gmm1D { phi, mu, var })
    }

    pub fn single(mu: f64, var: f64) -> Result<Self, GmmError> {
        Gmm1D::new(vec![1.0], vec![mu], vec![var])
    }

    pub fn k(&self) -> usize {
        self.phi.len()
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.phi
            .iter()
            .zip(&self.mu)
            .zip(&self.var)
            .map(|((&p, &m), &v)| p * normal_pdf(x, m, v))
            .sum()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let mut terms = [0.0f64; 8];
        let mut buf = Vec::new();
        let t: &mut [f64] = if self.k() <= terms.len() {
            &mut terms[..self.k()]
        } else {
            buf.resize(self.k(), 0.0);
            &mut buf
        };
        for (i, slot) in t.iter_mut().enumerate() {
            *slot = self.phi[i].ln() + normal_log_pdf(x, self.mu[i], self.var[i]);
        }
        log_sum_exp(t)
    }

    pub fn mean(&self) -> f64 {
        self.phi.iter().zip(&self.mu).map(|(p, m)| p * m).sum()
    }

    /// Component drawn in proportion to its weight, then a Gaussian draw; draws
    /// outside `[lo, hi]` are retried up to [`MAX_REJECTIONS`] times and the last
    /// one is clamped.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, lo: f64, hi: f64) -> f64 {
        debug_assert!(lo <= hi);
        let mut x = 0.0;
        for _ in 0..=MAX_REJECTIONS {
            let k = self.pick_component(rng);
            let z: f64 = rng.sample(StandardNormal);
            x = self.mu[k] + self.var[k].sqrt() * z;
            if x >= lo && x <= hi {
                return x;
            }
        }
        x.clamp(lo, hi)
    }

    fn pick_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.phi.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.phi.len() - 1
    }

    /// Sorts components by ascending mean.
    pub fn canonicalize(&mut self) {
        let mut idx: Vec<usize> = (0..self.k()).collect();
        idx.sort_by(|&a, &b| self.mu[a].total_cmp(&self.mu[b]));
        self.phi = idx.iter().map(|&i| self.phi[i]).collect();
        self.mu = idx.iter().map(|&i| self.mu[i]).collect();
        self.var = idx.iter().map(|&i| self.var[i]).collect();
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Independent mixtures over the longitudinal and lateral action components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactoredActionGmm {
    pub lon: Gmm1D,
    pub lat: Gmm1D,
}

impl FactoredActionGmm {
    pub fn joint_density(&self, a: &Action) -> f64 {
        self.lon.pdf(a.dv_lon) * self.lat.pdf(a.dy_lat)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, bounds: &ActionBounds) -> Action {
        Action {
            dv_lon: self.lon.sample(rng, bounds.dv_min, bounds.dv_max),
            dy_lat: self.lat.sample(rng, bounds.dy_min, bounds.dy_max),
        }
    }

    /// Largest joint density over all pairs of component means; used to
    /// rescale densities into a bounded prior weight.
    pub fn mode_density_bound(&self) -> f64 {
        let mut best = 0.0f64;
        for &ml in self.lon.mu() {
            for &mt in self.lat.mu() {
                best = best.max(self.lon.pdf(ml) * self.lat.pdf(mt));
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSamples {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedSamples {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self, GmmError> {
        let s = WeightedSamples { values, weights };
        s.validate()?;
        Ok(s)
    }

    pub fn uniform(values: Vec<f64>) -> Self {
        let weights = vec![1.0; values.len()];
        WeightedSamples { values, weights }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn validate(&self) -> Result<(), GmmError> {
        if self.values.is_empty() {
            return Err(GmmError::InvalidSamples("no samples".into()));
        }
        if self.values.len() != self.weights.len() {
            return Err(GmmError::InvalidSamples("values and weights differ in length".into()));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(GmmError::InvalidSamples("weights must be finite and > 0".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::InvalidSamples("values must be finite".into()));
        }
        Ok(())
    }

    pub fn distinct_count(&self) -> usize {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub var_min: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 500,
            tol: 1e-10,
            var_min: VAR_MIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub gmm: Gmm1D,
    /// Weighted mean log-likelihood before each M-step, plus the final value.
    pub log_likelihood: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Weighted k-means++ seeding: the first center is drawn by weight, later ones
/// by weight times squared distance to the nearest chosen center.
fn seed_centers(x: &[f64], w: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let draw = |scores: &[f64], rng: &mut ChaCha8Rng| -> usize {
        let total: f64 = scores.iter().sum();
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (i, s) in scores.iter().enumerate() {
            acc += s;
            if u < acc && *s > 0.0 {
                return i;
            }
        }
        scores.iter().rposition(|&s| s > 0.0).unwrap_or(0)
    };
    let mut centers = vec![x[draw(w, rng)]];
    let mut d2: Vec<f64> = x.iter().map(|&xi| (xi - centers[0]).powi(2)).collect();
    while centers.len() < k {
        let scores: Vec<f64> = w.iter().zip(&d2).map(|(wi, di)| wi * di).collect();
        let c = x[draw(&scores, rng)];
        centers.push(c);
        for (di, &xi) in d2.iter_mut().zip(x) {
            *di = di.min((xi - c).powi(2));
        }
    }
    centers
}

/// Weighted EM for a K-component mixture. Weights are normalized first, so
/// uniformly rescaling them leaves the fit bit-identical.
pub fn fit_em(
    samples: &WeightedSamples,
    k: usize,
    seed: u64,
    opts: &EmOptions,
) -> Result<EmFit, GmmError> {
    samples.validate()?;
    if k == 0 {
        return Err(GmmError::Invalid("K must be >= 1".into()));
    }
    let distinct = samples.distinct_count();
    if distinct < k {
        return Err(GmmError::Degenerate { distinct, needed: k });
    }
    let x = &samples.values;
    let total: f64 = samples.weights.iter().sum();
    let w: Vec<f64> = samples.weights.iter().map(|wi| wi / total).collect();
    let n = x.len();

    let global_mean: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
    let global_var: f64 = w
        .iter()
        .zip(x)
        .map(|(wi, xi)| wi * (xi - global_mean).powi(2))
        .sum::<f64>()
        .max(opts.var_min);

    // Initial parameters from a hard assignment to the seeded centers.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = seed_centers(x, &w, k, &mut rng);
    let mut phi = vec![0.0; k];
    let mut mu = vec![0.0; k];
    let mut var = vec![0.0; k];
    let nearest = |xi: f64| -> usize {
        let mut best = 0;
        for (c, &m) in centers.iter().enumerate() {
            if (xi - m).abs() < (xi - centers[best]).abs() {
                best = c;
            }
        }
        best
    };
    let labels: Vec<usize> = x.iter().map(|&xi| nearest(xi)).collect();
    for (i, &c) in labels.iter().enumerate() {
        phi[c] += w[i];
        mu[c] += w[i] * x[i];
    }
    for c in 0..k {
        mu[c] = if phi[c] > 0.0 { mu[c] / phi[c] } else { centers[c] };
    }
    for (i, &c) in labels.iter().enumerate() {
        var[c] += w[i] * (x[i] - mu[c]).powi(2);
    }
    for c in 0..k {
        var[c] = if phi[c] > 0.0 { var[c] / phi[c] } else { 0.0 };
        if var[c] < opts.var_min {
            var[c] = global_var;
        }
        if phi[c] <= 0.0 {
            phi[c] = 1.0 / n as f64;
        }
    }
    let s: f64 = phi.iter().sum();
    phi.iter_mut().for_each(|p| *p /= s);

    let mut resp = vec![0.0; n * k];
    let mut lls: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut logs = vec![0.0; k];
    for _ in 0..opts.max_iter {
        // E-step
        let mut ll = 0.0;
        for i in 0..n {
            for c in 0..k {
                logs[c] = phi[c].ln() + normal_log_pdf(x[i], mu[c], var[c]);
            }
            let lse = log_sum_exp(&logs);
            ll += w[i] * lse;
            for c in 0..k {
                resp[i * k + c] = (logs[c] - lse).exp();
            }
        }
        if let Some(&prev) = lls.last() {
            if (ll - prev).abs() < opts.tol {
                lls.push(ll);
                converged = true;
                break;
            }
        }
        lls.push(ll);
        iterations += 1;

        // M-step
        for c in 0..k {
            let mut nk = 0.0;
            let mut sx = 0.0;
            for i in 0..n {
                let r = w[i] * resp[i * k + c];
                nk += r;
                sx += r * x[i];
            }
            if nk <= 0.0 {
                continue;
            }
            let m = sx / nk;
            let mut sv = 0.0;
            for i in 0..n {
                sv += w[i] * resp[i * k + c] * (x[i] - m).powi(2);
            }
            phi[c] = nk;
            mu[c] = m;
            var[c] = (sv / nk).max(opts.var_min);
        }
        let s: f64 = phi.iter().sum();
        phi.iter_mut().for_each(|p| *p /= s);
    }
    if !converged {
        let ll: f64 = x
            .iter()
            .zip(&w)
            .map(|(&xi, &wi)| {
                for c in 0..k {
                    logs[c] = phi[c].ln() + normal_log_pdf(xi, mu[c], var[c]);
                }
                wi * log_sum_exp(&logs)
            })
            .sum();
        lls.push(ll);
    }

    let mut gmm = Gmm1D::new(phi, mu, var)?;
    gmm.canonicalize();
    Ok(EmFit {
        gmm,
        log_likelihood: lls,
        iterations,
        converged,
    })
}
