//! Squared-exponential ARD Gaussian-process regression over occupancy grids.
//!
//! Hyperparameters live in log space. Each GP also carries a constant prior
//! mean; with a zero mean the evidence of `y` and `-y` is identical, which
//! would make goals with opposite walking directions indistinguishable.

mod fit;

pub use fit::{fit, fit_detailed, FitOutcome, GpFitConfig};

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;

const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub log_signal: f64,
    pub log_lengthscales: Vec<f64>,
    pub log_noise: f64,
    /// Constant prior mean of the regressed velocity.
    pub prior_mean: f64,
}

impl Hyperparams {
    pub fn new(signal: f64, lengthscales: &[f64], noise: f64) -> Self {
        Hyperparams {
            log_signal: signal.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
            log_noise: noise.ln(),
            prior_mean: 0.0,
        }
    }

    pub fn isotropic(dim: usize, signal: f64, lengthscale: f64, noise: f64) -> Self {
        Hyperparams::new(signal, &vec![lengthscale; dim], noise)
    }

    pub fn with_prior_mean(mut self, mean: f64) -> Self {
        self.prior_mean = mean;
        self
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn signal_variance(&self) -> f64 {
        (2.0 * self.log_signal).exp()
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_noise).exp()
    }

    pub fn lengthscales(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_lengthscales.iter().map(|l| l.exp())
    }

    /// Number of optimised log-parameters (`dim + 2`).
    pub fn n_params(&self) -> usize {
        self.dim() + 2
    }

    /// `[log σ_f, log ℓ_1 .. log ℓ_D, log σ_n]`
    pub fn to_log_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        v.push(self.log_signal);
        v.extend_from_slice(&self.log_lengthscales);
        v.push(self.log_noise);
        v
    }

    pub fn from_log_vec(v: &[f64], prior_mean: f64) -> Self {
        let d = v.len() - 2;
        Hyperparams {
            log_signal: v[0],
            log_lengthscales: v[1..=d].to_vec(),
            log_noise: v[d + 1],
            prior_mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.log_signal.is_finite()
            && self.log_noise.is_finite()
            && self.prior_mean.is_finite()
            && self.log_lengthscales.iter().all(|l| l.is_finite());
        if !finite {
            return Err(Error::validation("hyperparameters must be finite"));
        }
        Ok(())
    }
}

/// SE-ARD covariance, plus the noise variance when the two grids are the same
/// training point.
pub fn kernel(o1: &OccupancyGrid, o2: &OccupancyGrid, hp: &Hyperparams, same_point: bool) -> f64 {
    let signal = signal_cov(o1.values(), o2.values(), &inverse_lengthscales(hp), hp.signal_variance());
    if same_point {
        signal + hp.noise_variance()
    } else {
        signal
    }
}

fn inverse_lengthscales(hp: &Hyperparams) -> Vec<f64> {
    hp.log_lengthscales.iter().map(|l| (-l).exp()).collect()
}

fn signal_cov(a: &[f64], b: &[f64], inv_ell: &[f64], signal_var: f64) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(inv_ell)
        .map(|((a, b), w)| {
            let d = (a - b) * w;
            d * d
        })
        .sum();
    signal_var * (-0.5 * r2).exp()
}

fn check_inputs(hp: &Hyperparams, x: &[OccupancyGrid], y: &[f64]) -> Result<()> {
    if x.is_empty() {
        return Err(Error::validation("GP needs at least one training point"));
    }
    if x.len() != y.len() {
        return Err(Error::validation(format!(
            "{} inputs but {} targets",
            x.len(),
            y.len()
        )));
    }
    if let Some(g) = x.iter().find(|g| g.len() != hp.dim()) {
        return Err(Error::validation(format!(
            "grid of length {} does not match {} lengthscales",
            g.len(),
            hp.dim()
        )));
    }
    Ok(())
}

/// Noise-free covariance matrix between all training inputs.
pub fn signal_matrix(hp: &Hyperparams, x: &[OccupancyGrid]) -> DMatrix<f64> {
    let inv_ell = inverse_lengthscales(hp);
    let sf2 = hp.signal_variance();
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = sf2;
        for j in 0..i {
            let v = signal_cov(x[i].values(), x[j].values(), &inv_ell, sf2);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky factorisation of `K_signal + (σ_n² + jitter)·I`, escalating the
/// jitter tenfold from `1e-8·σ_f²` up to `1e-2·σ_f²`.
struct Factorized {
    signal: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

fn factorize(hp: &Hyperparams, x: &[OccupancyGrid]) -> Result<Factorized> {
    let signal = signal_matrix(hp, x);
    let sf2 = hp.signal_variance();
    let sn2 = hp.noise_variance();
    let mut jitter = JITTER_START * sf2;
    loop {
        let mut k = signal.clone();
        for i in 0..k.nrows() {
            k[(i, i)] += sn2 + jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            return Ok(Factorized { signal, chol, jitter });
        }
        jitter *= 10.0;
        if jitter > JITTER_MAX * sf2 * (1.0 + 1e-9) {
            return Err(Error::Numerical(format!(
                "covariance matrix not positive definite (n = {}, jitter up to {:.1e})",
                x.len(),
                JITTER_MAX * sf2
            )));
        }
    }
}

fn centred(y: &[f64], mean: f64) -> DVector<f64> {
    DVector::from_iterator(y.len(), y.iter().map(|v| v - mean))
}

fn evidence(f: &Factorized, alpha: &DVector<f64>, resid: &DVector<f64>) -> f64 {
    let n = resid.len() as f64;
    let log_det_half: f64 = f.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * resid.dot(alpha) - log_det_half - 0.5 * n * (2.0 * PI).ln()
}

/// Log marginal likelihood of `y` given inputs `x`.
pub fn log_marginal(hp: &Hyperparams, x: &[OccupancyGrid], y: &[f64]) -> Result<f64> {
    check_inputs(hp, x, y)?;
    let f = factorize(hp, x)?;
    let resid = centred(y, hp.prior_mean);
    let alpha = f.chol.solve(&resid);
    Ok(evidence(&f, &alpha, &resid))
}

/// `K⁻¹ = L⁻ᵀ L⁻¹`. The triangular inverse is built column by column,
/// skipping the zeros above the diagonal; the product uses the blocked
/// matrix multiply.
fn inverse_from_factor(chol: &Cholesky<f64, Dyn>) -> DMatrix<f64> {
    // only the lower triangle of `l_dirty` is meaningful
    let l = chol.l_dirty();
    let n = l.nrows();
    let ls = l.as_slice();
    let mut l_inv = DMatrix::<f64>::zeros(n, n);
    let xs = l_inv.as_mut_slice();
    for j in 0..n {
        let col = &mut xs[j * n..(j + 1) * n];
        col[j] = 1.0;
        for k in j..n {
            let v = col[k] / ls[k * n + k];
            col[k] = v;
            if v != 0.0 {
                let lk = &ls[k * n..(k + 1) * n];
                for i in k + 1..n {
                    col[i] -= v * lk[i];
                }
            }
        }
    }
    l_inv.transpose() * l_inv
}

/// Log marginal likelihood with its gradient with respect to
/// `[log σ_f, log ℓ_1 .. log ℓ_D, log σ_n]`.
pub fn log_marginal_and_grad(
    hp: &Hyperparams,
    x: &[OccupancyGrid],
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_inputs(hp, x, y)?;
    let f = factorize(hp, x)?;
    let resid = centred(y, hp.prior_mean);
    let alpha = f.chol.solve(&resid);
    let value = evidence(&f, &alpha, &resid);

    // W = ααᵀ - K⁻¹; dL/dθ = ½ tr(W ∂K/∂θ)
    let mut w = inverse_from_factor(&f.chol);
    w.neg_mut();
    w.ger(1.0, &alpha, &alpha, 1.0);
    let trace_w = w.trace();

    let n = x.len();
    let d = hp.dim();
    let inv_ell2: Vec<f64> = hp.log_lengthscales.iter().map(|l| (-2.0 * l).exp()).collect();
    let mut grad = vec![0.0; d + 2];

    // The jitter scales with σ_f², so it moves with log σ_f as well.
    let mut g_signal = f.jitter * trace_w;
    let mut g_ell = vec![0.0; d];
    for i in 0..n {
        let xi = x[i].values();
        g_signal += w[(i, i)] * f.signal[(i, i)];
        for j in 0..i {
            let wk = w[(i, j)] * f.signal[(i, j)];
            if wk == 0.0 {
                continue;
            }
            g_signal += 2.0 * wk;
            let xj = x[j].values();
            for k in 0..d {
                let diff = xi[k] - xj[k];
                g_ell[k] += wk * diff * diff;
            }
        }
    }
    grad[0] = g_signal;
    for k in 0..d {
        // ½ · 2 (symmetric pairs) · Σ_{i>j} W K (Δ²/ℓ²)
        grad[k + 1] = g_ell[k] * inv_ell2[k];
    }
    grad[d + 1] = hp.noise_variance() * trace_w;
    Ok((value, grad))
}

pub fn log_marginal_grad(hp: &Hyperparams, x: &[OccupancyGrid], y: &[f64]) -> Result<Vec<f64>> {
    log_marginal_and_grad(hp, x, y).map(|(_, g)| g)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1 {
    pub mean: f64,
    pub variance: f64,
}

impl Gaussian1 {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// A GP conditioned on a fixed training set with fixed hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainedGp {
    hyperparams: Hyperparams,
    inputs: Vec<OccupancyGrid>,
    targets: Vec<f64>,
    factor: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    inv_ell: Vec<f64>,
}

pub fn condition(hp: &Hyperparams, x: &[OccupancyGrid], y: &[f64]) -> Result<TrainedGp> {
    check_inputs(hp, x, y)?;
    hp.validate()?;
    let f = factorize(hp, x)?;
    let alpha = f.chol.solve(&centred(y, hp.prior_mean));
    Ok(TrainedGp {
        hyperparams: hp.clone(),
        inputs: x.to_vec(),
        targets: y.to_vec(),
        factor: f.chol.l(),
        alpha,
        jitter: f.jitter,
        inv_ell: inverse_lengthscales(hp),
    })
}

impl TrainedGp {
    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyperparams
    }

    pub fn inputs(&self) -> &[OccupancyGrid] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Lower-triangular Cholesky factor of the training covariance.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Predictive distribution of a noisy observation at `o_star`.
    pub fn predict(&self, o_star: &OccupancyGrid) -> Gaussian1 {
        debug_assert_eq!(o_star.len(), self.hyperparams.dim());
        let sf2 = self.hyperparams.signal_variance();
        let k_star = DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .iter()
                .map(|x| signal_cov(x.values(), o_star.values(), &self.inv_ell, sf2)),
        );
        let mean = self.hyperparams.prior_mean + k_star.dot(&self.alpha);
        let v = self
            .factor
            .solve_lower_triangular(&k_star)
            .expect("Cholesky factor has a positive diagonal");
        let variance = (sf2 + self.hyperparams.noise_variance() - v.norm_squared()).max(0.0);
        Gaussian1 { mean, variance }
    }
}

pub fn predict(gp: &TrainedGp, o_star: &OccupancyGrid) -> Gaussian1 {
    gp.predict(o_star)
}
