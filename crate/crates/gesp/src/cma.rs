//! Covariance matrix adaptation evolution strategy (ask/tell, maximizing).
//!
//! This is the reference search algorithm of the toolkit: small, determinis-
//! tic, and indifferent to *how* fitnesses were produced, so early-stopped
//! partial objectives can be fed straight back as fitness. The update rules
//! are the standard ones: rank-based recombination of the top half, two
//! evolution paths, rank-one plus rank-mu covariance adaptation, and
//! cumulative step-size control.
//!
//! All derived learning constants are computed in `f64` and converted once,
//! so the strategy behaves identically for every scalar instantiation up to
//! that type's precision.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::trace::ParamVector;
use crate::SearchScalar;

/// Condition-number ceiling past which the covariance is re-conditioned.
const MAX_CONDITION: f64 = 1e14;
/// Step-size floor; keeps sigma strictly positive under extreme shrinkage.
const MIN_SIGMA: f64 = 1e-12;
/// Step-size ceiling. The cumulative adaptation factor can spike after a
/// covariance repair (a clamped tiny eigenvalue makes the conjugate path
/// jump); without a ceiling one such spike sends sigma to infinity and the
/// next generation's samples to NaN. Healthy searches never get near it.
const MAX_SIGMA: f64 = 1e12;

/// How to re-condition a covariance whose decomposition was unusable.
enum Repair<S: SearchScalar> {
    /// The spectrum was real but badly conditioned: same matrix with its
    /// eigenvalues clamped into the allowed condition range.
    Clamped(DMatrix<S>),
    /// The spectrum carried no information (overflowed or NaN entries):
    /// restart the shape from the unit covariance and clear the evolution
    /// paths, whose stale values would immediately re-poison it.
    Reset,
}

/// Eigendecomposition of the covariance, cached between ask and tell.
struct Decomposition<S> {
    basis: DMatrix<S>,
    sqrt_eigenvalues: DVector<S>,
    inv_sqrt_eigenvalues: DVector<S>,
}

/// The strategy state. Create with [`CmaEs::new`], then alternate
/// [`CmaEs::ask`] and [`CmaEs::tell`].
pub struct CmaEs<S> {
    dim: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    expected_norm: f64,
    mean: DVector<S>,
    sigma: S,
    covariance: DMatrix<S>,
    path_sigma: DVector<S>,
    path_c: DVector<S>,
    generation: u64,
    sampler: Option<Decomposition<S>>,
    last_asked: Option<Vec<ParamVector<S>>>,
}

impl<S: SearchScalar> CmaEs<S> {
    /// Fresh strategy at mean zero with step size 0.5 and unit covariance.
    pub fn new(dim: usize) -> Self {
        Self::with_start(DVector::zeros(dim), crate::from_f64(0.5))
    }

    /// Strategy starting from an explicit mean and step size.
    pub fn with_start(mean: DVector<S>, sigma: S) -> Self {
        let dim = mean.len();
        assert!(dim >= 1, "the search space needs at least one dimension");
        assert!(sigma > S::zero(), "initial step size must be positive");
        let n = dim as f64;

        let lambda = 4 + (3.0 * n.ln()).floor() as usize;
        let mu = lambda / 2;
        let raw: Vec<f64> = (0..mu).map(|i| ((mu as f64) + 0.5).ln() - ((i + 1) as f64).ln()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
        let c_mu = (1.0 - c_1)
            .min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) * (n + 2.0) + mu_eff));
        let expected_norm = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

        CmaEs {
            dim,
            lambda,
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            expected_norm,
            mean,
            sigma,
            covariance: DMatrix::identity(dim, dim),
            path_sigma: DVector::zeros(dim),
            path_c: DVector::zeros(dim),
            generation: 0,
            sampler: None,
            last_asked: None,
        }
    }

    /// Search-space dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Population size per generation.
    pub fn lambda(&self) -> usize {
        self.lambda
    }

    /// Number of completed generations.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Current distribution mean.
    pub fn mean(&self) -> &DVector<S> {
        &self.mean
    }

    /// Current global step size.
    pub fn sigma(&self) -> S {
        self.sigma
    }

    /// Current covariance (symmetric positive definite).
    pub fn covariance(&self) -> &DMatrix<S> {
        &self.covariance
    }

    /// Decompose the covariance, re-conditioning once if it has drifted
    /// outside the numerically safe cone. Panics if even the re-conditioned
    /// matrix fails to decompose — that indicates corrupted state, not an
    /// unlucky sample.
    fn decompose(&mut self) -> Decomposition<S> {
        match Self::try_decompose(&self.covariance) {
            Ok(parts) => parts,
            Err(repair) => {
                match repair {
                    Repair::Clamped(matrix) => self.covariance = matrix,
                    Repair::Reset => {
                        self.covariance = DMatrix::identity(self.dim, self.dim);
                        self.path_sigma = DVector::zeros(self.dim);
                        self.path_c = DVector::zeros(self.dim);
                    }
                }
                match Self::try_decompose(&self.covariance) {
                    Ok(parts) => parts,
                    Err(_) => panic!("covariance decomposition failed even after re-conditioning"),
                }
            }
        }
    }

    /// Either a usable decomposition, or the repair to apply before retrying.
    fn try_decompose(covariance: &DMatrix<S>) -> Result<Decomposition<S>, Repair<S>> {
        // An eigensolver fed non-finite entries (or overflowed internally)
        // returns garbage in the eigenvectors too, so nothing from it can be
        // reused; only a full reset is trustworthy.
        if covariance.iter().any(|v| !num_traits::Float::is_finite(*v)) {
            return Err(Repair::Reset);
        }
        let eigen = covariance.clone().symmetric_eigen();
        let eigenvalues_f64: Vec<f64> = eigen
            .eigenvalues
            .iter()
            .map(|v| v.to_f64().expect("eigenvalue convertible"))
            .collect();
        let max_ev = eigenvalues_f64.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let healthy = max_ev.is_finite()
            && max_ev > 0.0
            && eigenvalues_f64
                .iter()
                .all(|&v| v.is_finite() && v > 0.0 && max_ev / v <= MAX_CONDITION);

        if healthy {
            let sqrt_eigenvalues =
                DVector::from_iterator(eigenvalues_f64.len(), eigenvalues_f64.iter().map(|&v| crate::from_f64::<S>(v.sqrt())));
            let inv_sqrt_eigenvalues = DVector::from_iterator(
                eigenvalues_f64.len(),
                eigenvalues_f64.iter().map(|&v| crate::from_f64::<S>(1.0 / v.sqrt())),
            );
            return Ok(Decomposition { basis: eigen.eigenvectors, sqrt_eigenvalues, inv_sqrt_eigenvalues });
        }

        if eigenvalues_f64.iter().any(|v| !v.is_finite()) {
            // Finite matrix but the solver overflowed; its output is garbage.
            return Err(Repair::Reset);
        }

        // Real but badly conditioned spectrum: clamp the eigenvalues into a
        // sane band and rebuild the matrix. The band is two orders of
        // magnitude inside the condition ceiling so that eigensolver
        // roundoff on the rebuilt matrix cannot trip the same check again.
        let ceiling = if max_ev.is_finite() && max_ev > 0.0 { max_ev } else { 1.0 };
        let floor = ceiling / (MAX_CONDITION / 1e2);
        let clamped = DVector::from_iterator(
            eigenvalues_f64.len(),
            eigenvalues_f64.iter().map(|&v| crate::from_f64::<S>(v.clamp(floor, ceiling))),
        );
        let rebuilt =
            &eigen.eigenvectors * DMatrix::from_diagonal(&clamped) * eigen.eigenvectors.transpose();
        let symmetrized = (&rebuilt + rebuilt.transpose()).scale(crate::from_f64(0.5));
        if symmetrized.iter().any(|v| !num_traits::Float::is_finite(*v)) {
            return Err(Repair::Reset);
        }
        Err(Repair::Clamped(symmetrized))
    }

    /// Sample one generation of candidates. Deterministic given the RNG
    /// state; draws exactly `lambda * dim` normal variates in a fixed order.
    pub fn ask<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<ParamVector<S>> {
        let parts = self.decompose();
        let mut candidates = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let z = DVector::from_fn(self.dim, |_, _| S::standard_normal(rng));
            let scaled = z.component_mul(&parts.sqrt_eigenvalues);
            let step = &parts.basis * scaled;
            let x = &self.mean + step.scale(self.sigma);
            candidates.push(x.iter().cloned().collect());
        }
        self.sampler = Some(parts);
        self.last_asked = Some(candidates.clone());
        candidates
    }

    /// Update the distribution from one generation's fitnesses (higher is
    /// better). `candidates` must be exactly the vectors from the matching
    /// [`CmaEs::ask`] call, in the same order, with one finite fitness each.
    pub fn tell(&mut self, candidates: &[ParamVector<S>], fitnesses: &[S]) {
        assert_eq!(candidates.len(), self.lambda, "need one candidate per population slot");
        assert_eq!(fitnesses.len(), self.lambda, "need exactly one fitness per candidate");
        for f in fitnesses {
            assert!(num_traits::Float::is_finite(*f), "non-finite fitness {f}; objectives must be finite");
        }
        let asked = self.last_asked.take().expect("tell called before ask");
        assert_eq!(&asked, candidates, "candidates must be the vectors from the matching ask");
        let parts = self.sampler.take().expect("tell called before ask");

        // Rank descending; stable, so equal fitnesses keep ask order.
        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| fitnesses[b].partial_cmp(&fitnesses[a]).expect("finite fitnesses"));

        let old_mean = self.mean.clone();
        let sigma_f64 = self.sigma.to_f64().expect("sigma convertible");

        // Recombine the top half in the sampling frame: y_i = (x_i - m) / sigma.
        let mut y_weighted = DVector::<S>::zeros(self.dim);
        let selected_y: Vec<DVector<S>> = (0..self.mu)
            .map(|rank| {
                let idx = order[rank];
                let x = DVector::from_iterator(self.dim, candidates[idx].iter().cloned());
                (x - &old_mean).scale(crate::from_f64(1.0 / sigma_f64))
            })
            .collect();
        for (rank, y) in selected_y.iter().enumerate() {
            y_weighted += y.scale(crate::from_f64(self.weights[rank]));
        }

        self.mean = &old_mean + y_weighted.scale(self.sigma);

        // Step-size path, measured in the isotropic frame.
        let inv_sqrt_c =
            &parts.basis * DMatrix::from_diagonal(&parts.inv_sqrt_eigenvalues) * parts.basis.transpose();
        let path_coeff = (self.c_sigma * (2.0 - self.c_sigma) * self.mu_eff).sqrt();
        self.path_sigma = self.path_sigma.scale(crate::from_f64(1.0 - self.c_sigma))
            + (&inv_sqrt_c * &y_weighted).scale(crate::from_f64(path_coeff));

        let path_sigma_norm = self.path_sigma.norm().to_f64().expect("norm convertible");
        let unbias = 1.0 - (1.0 - self.c_sigma).powi(2 * (self.generation as i32 + 1));
        let stall_threshold = (1.4 + 2.0 / (self.dim as f64 + 1.0)) * self.expected_norm;
        let h_sigma = if path_sigma_norm / unbias.sqrt() < stall_threshold { 1.0 } else { 0.0 };

        // Covariance path and rank-one / rank-mu update.
        let cc_coeff = (self.c_c * (2.0 - self.c_c) * self.mu_eff).sqrt();
        self.path_c = self.path_c.scale(crate::from_f64(1.0 - self.c_c))
            + y_weighted.scale(crate::from_f64(h_sigma * cc_coeff));

        let delta_h = (1.0 - h_sigma) * self.c_c * (2.0 - self.c_c);
        let decay = 1.0 - self.c_1 - self.c_mu + self.c_1 * delta_h;
        let mut new_cov = self.covariance.scale(crate::from_f64(decay));
        new_cov += (&self.path_c * self.path_c.transpose()).scale(crate::from_f64(self.c_1));
        for (rank, y) in selected_y.iter().enumerate() {
            new_cov += (y * y.transpose()).scale(crate::from_f64(self.c_mu * self.weights[rank]));
        }
        self.covariance = (&new_cov + new_cov.transpose()).scale(crate::from_f64(0.5));

        // Cumulative step-size adaptation. The growth factor is exp() of the
        // path-length surprise and can overflow after a covariance repair
        // leaves a long conjugate path; clamping keeps sigma usable (an
        // infinite sigma would turn the next generation's samples into NaN,
        // and overflow itself only ever means "grow as fast as allowed").
        let factor = ((self.c_sigma / self.d_sigma) * (path_sigma_norm / self.expected_norm - 1.0)).exp();
        let proposed = sigma_f64 * factor;
        let new_sigma = if proposed.is_finite() { proposed.clamp(MIN_SIGMA, MAX_SIGMA) } else { MAX_SIGMA };
        self.sigma = crate::from_f64(new_sigma);

        self.generation += 1;
    }
}
