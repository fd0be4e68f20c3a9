use crate::error::{Error, Result};
use crate::real::{log_sum_exp, safe_ln, Real};

/// Diagonal-covariance Gaussian mixture emission density of one HMM state.
#[derive(Clone, Debug, PartialEq)]
pub struct GmmState<T> {
    dim: usize,
    weights: Vec<T>,
    /// `n_components x dim`, row-major.
    means: Vec<T>,
    variances: Vec<T>,
    log_norms: Vec<T>,
    inv_vars: Vec<T>,
}

impl<T: Real> GmmState<T> {
    pub fn new(dim: usize, weights: Vec<T>, means: Vec<T>, variances: Vec<T>) -> Result<Self> {
        let n = weights.len();
        if n == 0 || dim == 0 {
            return Err(Error::Config("a GMM needs at least one component and one dimension".into()));
        }
        if means.len() != n * dim || variances.len() != n * dim {
            return Err(Error::LengthMismatch {
                expected: n * dim,
                actual: means.len().min(variances.len()),
            });
        }
        let total: T = weights.iter().copied().sum();
        let tol = T::lit(if std::mem::size_of::<T>() >= 8 { 1e-9 } else { 1e-5 });
        if (total - T::one()).abs() > tol || weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
            return Err(Error::Config(format!("GMM weights must be a distribution (sum {total})")));
        }
        if variances.iter().any(|v| !(*v > T::zero()) || !v.is_finite()) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("GMM means must be finite and variances positive".into()));
        }
        let mut g = GmmState {
            dim,
            weights,
            means,
            variances,
            log_norms: Vec::new(),
            inv_vars: Vec::new(),
        };
        g.refresh();
        Ok(g)
    }

    fn refresh(&mut self) {
        let two_pi = T::lit(std::f64::consts::TAU);
        self.inv_vars = self.variances.iter().map(|&v| T::one() / v).collect();
        self.log_norms = (0..self.weights.len())
            .map(|m| {
                let log_det: T = self.variances[m * self.dim..(m + 1) * self.dim]
                    .iter()
                    .map(|&v| (two_pi * v).ln())
                    .sum();
                safe_ln(self.weights[m]) - T::lit(0.5) * log_det
            })
            .collect();
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn mean(&self, m: usize) -> &[T] {
        &self.means[m * self.dim..(m + 1) * self.dim]
    }

    pub fn variance(&self, m: usize) -> &[T] {
        &self.variances[m * self.dim..(m + 1) * self.dim]
    }

    /// `log w_m + log N(x; mu_m, Sigma_m)` for every component.
    pub fn component_log_densities(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.dim);
        let half = T::lit(0.5);
        for (m, o) in out.iter_mut().enumerate().take(self.weights.len()) {
            if self.log_norms[m] == T::neg_infinity() {
                *o = T::neg_infinity();
                continue;
            }
            let mu = &self.means[m * self.dim..(m + 1) * self.dim];
            let iv = &self.inv_vars[m * self.dim..(m + 1) * self.dim];
            let mut s = T::zero();
            for ((&xd, &md), &ivd) in x.iter().zip(mu).zip(iv) {
                let d = xd - md;
                s = s + d * d * ivd;
            }
            *o = self.log_norms[m] - half * s;
        }
    }

    pub fn log_density(&self, x: &[T]) -> T {
        let mut buf = vec![T::zero(); self.weights.len()];
        self.component_log_densities(x, &mut buf);
        log_sum_exp(&buf)
    }

    /// Same density with every component split into two identical halves.
    pub fn with_split_components(&self) -> Self {
        let half = T::lit(0.5);
        let weights = self.weights.iter().flat_map(|&w| [w * half, w * half]).collect();
        let dup = |v: &[T]| -> Vec<T> {
            v.chunks(self.dim)
                .flat_map(|c| c.iter().chain(c.iter()).copied())
                .collect()
        };
        GmmState::new(self.dim, weights, dup(&self.means), dup(&self.variances)).expect("valid split")
    }
}
