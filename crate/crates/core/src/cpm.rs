//! Non-parametric maximum likelihood for the cumulative probability model
//!
//! ```text
//! P(Y <= y | W) = F(H⁻¹(y) - βᵀW)
//! ```
//!
//! Every distinct outcome is its own ordered category, so the intercepts
//! `α₁ < … < α_{K-1}` are the values of the step function `Ĥ⁻¹` at the
//! support points and the likelihood depends on the outcomes only through
//! their ranks.
//!
//! The Newton solver exploits the structure of the Hessian: a row in
//! category `k` touches only `α_{k-1}` and `α_k`, so the intercept block is
//! tridiagonal. Each iteration eliminates that block with a banded
//! factorisation and solves a dense system only in the `p + 3` slopes,
//! costing `O(K (p+3)²)` instead of `O((K+p)³)`.

use serde::{Deserialize, Serialize};

use crate::data::{coefficient_names, design_rows, encode_support, step_position, Dataset, SupportEncoding};
use crate::error::{Error, Result};
use crate::links::Link;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions<T> {
    pub link: Link,
    pub max_iterations: usize,
    /// Relative log-likelihood change that declares convergence.
    pub tolerance: T,
    /// Optional `(L, U)`: outcomes below `L` (above `U`) are collapsed into
    /// the lowest (highest) category before fitting.
    pub censor_bounds: Option<(T, T)>,
}

impl<T: Scalar> FitOptions<T> {
    pub fn new(link: Link) -> Self {
        FitOptions {
            link,
            max_iterations: 100,
            tolerance: T::lit(1e-8),
            censor_bounds: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > T::zero()) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if let Some((l, u)) = self.censor_bounds {
            if !(l < u) {
                return Err(Error::Config(format!("censor bounds need L < U, got ({l}, {u})")));
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        FitOptions::new(Link::Probit)
    }
}

/// Ordinal view of the data: the category of each row plus a row-major
/// design matrix.
#[derive(Debug, Clone)]
pub struct OrdinalData<T> {
    categories: Vec<usize>,
    n_categories: usize,
    design: Vec<T>,
    n_coef: usize,
}

impl<T: Scalar> OrdinalData<T> {
    pub fn new(categories: Vec<usize>, n_categories: usize, rows: &[Vec<T>]) -> Result<Self> {
        if categories.len() != rows.len() {
            return Err(Error::InvalidData("one design row per category index required".into()));
        }
        let n_coef = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_coef) {
            return Err(Error::InvalidData("design rows of unequal length".into()));
        }
        if n_categories < 2 || categories.iter().any(|&c| c >= n_categories) {
            return Err(Error::InvalidData("category index out of range".into()));
        }
        Ok(OrdinalData {
            categories,
            n_categories,
            design: rows.iter().flatten().copied().collect(),
            n_coef,
        })
    }

    pub fn from_encoding(encoding: &SupportEncoding<T>, dataset: &Dataset<T>) -> Result<Self> {
        let rows: Vec<Vec<T>> = design_rows(dataset).into_iter().map(|r| r.0).collect();
        OrdinalData::new(encoding.category_index.clone(), encoding.n_categories(), &rows)
    }

    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn n_coef(&self) -> usize {
        self.n_coef
    }

    #[inline]
    fn row(&self, i: usize) -> &[T] {
        &self.design[i * self.n_coef..(i + 1) * self.n_coef]
    }

    fn check(&self, alphas: &[T], betas: &[T]) -> Result<()> {
        if alphas.len() + 1 != self.n_categories {
            return Err(Error::Domain(format!(
                "expected {} intercepts for {} categories, got {}",
                self.n_categories - 1,
                self.n_categories,
                alphas.len()
            )));
        }
        if betas.len() != self.n_coef {
            return Err(Error::Domain(format!(
                "expected {} slopes, got {}",
                self.n_coef,
                betas.len()
            )));
        }
        if !strictly_increasing(alphas) {
            return Err(Error::Domain("intercepts must be strictly increasing".into()));
        }
        Ok(())
    }
}

fn strictly_increasing<T: Scalar>(v: &[T]) -> bool {
    v.iter().all(|a| a.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Latent interval bounds `(α_{k-1} - η, α_k - η)` for category `k`.
#[inline]
fn bounds<T: Scalar>(alphas: &[T], k: usize, eta: T) -> (Option<T>, Option<T>) {
    let lower = if k == 0 { None } else { Some(alphas[k - 1] - eta) };
    let upper = alphas.get(k).map(|&a| a - eta);
    (lower, upper)
}

/// Non-parametric log-likelihood of the cumulative probability model.
pub fn log_likelihood<T: Scalar>(alphas: &[T], betas: &[T], data: &OrdinalData<T>, link: Link) -> Result<T> {
    data.check(alphas, betas)?;
    Ok(log_likelihood_unchecked(alphas, betas, data, link))
}

fn log_likelihood_unchecked<T: Scalar>(alphas: &[T], betas: &[T], data: &OrdinalData<T>, link: Link) -> T {
    let floor = T::prob_floor();
    let mut ll = T::zero();
    for (i, &k) in data.categories.iter().enumerate() {
        let eta = dot(betas, data.row(i));
        let (lo, hi) = bounds(alphas, k, eta);
        ll += link.interval_probability(lo, hi).max(floor).ln();
    }
    ll
}

/// Hessian of the log-likelihood in block form. The intercept block is
/// tridiagonal; `cross` is `(K-1) × q` row-major and `slopes` is `q × q`
/// row-major, where `q` is the number of slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredHessian<T> {
    pub diag: Vec<T>,
    pub off_diag: Vec<T>,
    pub cross: Vec<T>,
    pub slopes: Vec<T>,
    n_coef: usize,
}

impl<T: Scalar> StructuredHessian<T> {
    fn zeros(n_alpha: usize, n_coef: usize) -> Self {
        StructuredHessian {
            diag: vec![T::zero(); n_alpha],
            off_diag: vec![T::zero(); n_alpha.saturating_sub(1)],
            cross: vec![T::zero(); n_alpha * n_coef],
            slopes: vec![T::zero(); n_coef * n_coef],
            n_coef,
        }
    }

    pub fn n_alpha(&self) -> usize {
        self.diag.len()
    }

    pub fn n_coef(&self) -> usize {
        self.n_coef
    }

    pub fn dim(&self) -> usize {
        self.n_alpha() + self.n_coef
    }

    /// Entry `(i, j)` of the full Hessian over `(α, β)`.
    pub fn entry(&self, i: usize, j: usize) -> T {
        let m = self.n_alpha();
        let q = self.n_coef;
        match (i < m, j < m) {
            (true, true) => {
                if i == j {
                    self.diag[i]
                } else if i.abs_diff(j) == 1 {
                    self.off_diag[i.min(j)]
                } else {
                    T::zero()
                }
            }
            (true, false) => self.cross[i * q + (j - m)],
            (false, true) => self.cross[j * q + (i - m)],
            (false, false) => self.slopes[(i - m) * q + (j - m)],
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let n = self.dim();
        (0..n).map(|i| (0..n).map(|j| self.entry(i, j)).collect()).collect()
    }
}

/// Analytic gradient over `(α, β)` and the structured Hessian.
pub fn score_and_hessian<T: Scalar>(
    alphas: &[T],
    betas: &[T],
    data: &OrdinalData<T>,
    link: Link,
) -> Result<(Vec<T>, StructuredHessian<T>)> {
    data.check(alphas, betas)?;
    Ok(score_and_hessian_unchecked(alphas, betas, data, link))
}

fn score_and_hessian_unchecked<T: Scalar>(
    alphas: &[T],
    betas: &[T],
    data: &OrdinalData<T>,
    link: Link,
) -> (Vec<T>, StructuredHessian<T>) {
    let m = alphas.len();
    let q = data.n_coef;
    let mut grad = vec![T::zero(); m + q];
    let mut h = StructuredHessian::zeros(m, q);
    let floor = T::prob_floor();

    for (i, &k) in data.categories.iter().enumerate() {
        let w = data.row(i);
        let eta = dot(betas, w);
        let (lo, hi) = bounds(alphas, k, eta);
        let p = link.interval_probability(lo, hi).max(floor);
        let (fa, ga) = hi.map_or((T::zero(), T::zero()), |a| (link.density(a), link.density_gradient(a)));
        let (fb, gb) = lo.map_or((T::zero(), T::zero()), |b| (link.density(b), link.density_gradient(b)));
        let inv_p = p.recip();
        let df = fa - fb;

        // d ell / d alpha_k = fa/p, d ell / d alpha_{k-1} = -fb/p,
        // d ell / d beta = -w (fa - fb)/p
        let slope_weight = ((ga - gb) - df * df * inv_p) * inv_p;
        if hi.is_some() {
            grad[k] += fa * inv_p;
            h.diag[k] += (ga - fa * fa * inv_p) * inv_p;
            let c = (fa * df * inv_p - ga) * inv_p;
            for (j, &wj) in w.iter().enumerate() {
                h.cross[k * q + j] += c * wj;
            }
        }
        if lo.is_some() {
            let kl = k - 1;
            grad[kl] -= fb * inv_p;
            h.diag[kl] -= (gb + fb * fb * inv_p) * inv_p;
            let c = (gb - fb * df * inv_p) * inv_p;
            for (j, &wj) in w.iter().enumerate() {
                h.cross[kl * q + j] += c * wj;
            }
        }
        if hi.is_some() && lo.is_some() {
            h.off_diag[k - 1] += fa * fb * inv_p * inv_p;
        }
        let gscale = -df * inv_p;
        for (j, &wj) in w.iter().enumerate() {
            grad[m + j] += gscale * wj;
            let row = &mut h.slopes[j * q..(j + 1) * q];
            let sw = slope_weight * wj;
            for (r, &wl) in row.iter_mut().zip(w) {
                *r += sw * wl;
            }
        }
    }
    (grad, h)
}

/// Outcome of solving the Newton system `(-H) δ = g`.
struct NewtonStep<T> {
    delta: Vec<T>,
}

/// Failure of the slope Schur complement to be positive definite; carries the
/// offending slope index.
struct SchurBreakdown {
    column: usize,
}

/// Solves `(-H) δ = g` by eliminating the tridiagonal intercept block.
fn newton_solve<T: Scalar>(grad: &[T], h: &StructuredHessian<T>) -> std::result::Result<NewtonStep<T>, SolveError> {
    let m = h.n_alpha();
    let q = h.n_coef();
    // M = -H; tridiagonal LDLᵀ of the intercept block.
    let mut d = vec![T::zero(); m];
    let mut l = vec![T::zero(); m.saturating_sub(1)];
    for i in 0..m {
        let mut di = -h.diag[i];
        if i > 0 {
            di -= l[i - 1] * l[i - 1] * d[i - 1];
        }
        if !(di > T::zero()) || !di.is_finite() {
            return Err(SolveError::Intercepts);
        }
        d[i] = di;
        if i + 1 < m {
            l[i] = -h.off_diag[i] / di;
        }
    }
    // Right-hand sides: [g_α | -cross] (the cross block of M is -cross).
    let ncols = q + 1;
    let mut rhs = vec![T::zero(); m * ncols];
    for i in 0..m {
        rhs[i * ncols] = grad[i];
        for j in 0..q {
            rhs[i * ncols + 1 + j] = -h.cross[i * q + j];
        }
    }
    // forward: L z = b
    for i in 1..m {
        let li = l[i - 1];
        for c in 0..ncols {
            let prev = rhs[(i - 1) * ncols + c];
            rhs[i * ncols + c] -= li * prev;
        }
    }
    // diagonal
    for i in 0..m {
        let inv = d[i].recip();
        for c in 0..ncols {
            rhs[i * ncols + c] *= inv;
        }
    }
    // backward: Lᵀ x = z
    for i in (0..m.saturating_sub(1)).rev() {
        let li = l[i];
        for c in 0..ncols {
            let next = rhs[(i + 1) * ncols + c];
            rhs[i * ncols + c] -= li * next;
        }
    }
    // Schur complement S = C' - B'ᵀ A'^{-1} B' with B' = -cross, C' = -slopes.
    let mut s = vec![T::zero(); q * q];
    let mut r = vec![T::zero(); q];
    for a in 0..q {
        for b in 0..q {
            let mut acc = -h.slopes[a * q + b];
            for i in 0..m {
                acc -= (-h.cross[i * q + a]) * rhs[i * ncols + 1 + b];
            }
            s[a * q + b] = acc;
        }
        let mut acc = grad[m + a];
        for i in 0..m {
            acc -= (-h.cross[i * q + a]) * rhs[i * ncols];
        }
        r[a] = acc;
    }
    let scales: Vec<T> = (0..q).map(|a| -h.slopes[a * q + a]).collect();
    let chol = cholesky(&s, q, &scales).map_err(|b| SolveError::Slopes(b.column))?;
    let delta_beta = cholesky_solve(&chol, q, &r);
    let mut delta = vec![T::zero(); m + q];
    for i in 0..m {
        let mut v = rhs[i * ncols];
        for j in 0..q {
            v -= rhs[i * ncols + 1 + j] * delta_beta[j];
        }
        delta[i] = v;
    }
    delta[m..].copy_from_slice(&delta_beta);
    Ok(NewtonStep { delta })
}

enum SolveError {
    Intercepts,
    Slopes(usize),
}

/// Lower Cholesky factor of a symmetric `n × n` matrix. A pivot that falls
/// below `1e-10` of `scales[j]` is reported as rank loss.
fn cholesky<T: Scalar>(a: &[T], n: usize, scales: &[T]) -> std::result::Result<Vec<T>, SchurBreakdown> {
    let mut l = vec![T::zero(); n * n];
    let rel = T::lit(1e-10).max(T::epsilon() * T::lit(64.0));
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        let scale = scales[j].abs().max(T::min_positive_value());
        if !(diag > rel * scale) || !diag.is_finite() {
            return Err(SchurBreakdown { column: j });
        }
        let djj = diag.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / djj;
        }
    }
    Ok(l)
}

fn cholesky_solve<T: Scalar>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            let v = l[i * n + k] * y[k];
            y[i] -= v;
        }
        y[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in (i + 1)..n {
            let v = l[k * n + i] * y[k];
            y[i] -= v;
        }
        y[i] /= l[i * n + i];
    }
    y
}

/// Fitted cumulative probability model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedCpm<T> {
    /// `Ĥ⁻¹` at support points `y₁ … y_{K-1}`; strictly increasing.
    pub alphas: Vec<T>,
    /// Slopes in design order `[D, T, D:T, X…]`.
    pub betas: Vec<T>,
    pub coefficient_names: Vec<String>,
    pub link: Link,
    /// Outcome support (after censoring, if any).
    pub support: Vec<T>,
    pub loglik: T,
    pub converged: bool,
    pub iterations: usize,
    pub n_obs: usize,
    /// Largest absolute score component at the returned estimate.
    pub max_abs_gradient: T,
    /// Log-likelihood after initialisation and after every accepted step.
    /// Non-decreasing up to summation round-off.
    pub loglik_trace: Vec<T>,
    /// Why the solver stopped, when it did not converge.
    pub message: Option<String>,
}

impl<T: Scalar> FittedCpm<T> {
    pub fn n_categories(&self) -> usize {
        self.support.len()
    }

    /// `Ĥ⁻¹(y)` with the step convention; `None` encodes `-∞` (below the
    /// support) and `+∞` (at or above the largest support point) is reported
    /// through [`StepValue`].
    pub fn transform_at(&self, y: T) -> StepValue<T> {
        match step_position(&self.support, y) {
            None => StepValue::NegInfinity,
            Some(i) if i + 1 >= self.support.len() => StepValue::PosInfinity,
            Some(i) => StepValue::Finite(self.alphas[i]),
        }
    }

    /// Slopes for the covariates only (`β₄`).
    pub fn covariate_betas(&self) -> &[T] {
        &self.betas[3..]
    }
}

/// Value of the step-function intercept at an outcome value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepValue<T> {
    NegInfinity,
    Finite(T),
    PosInfinity,
}

/// Model CDF `P(Y <= y | w) = F(Ĥ⁻¹(y) - β̂ᵀw)`: 0 below the support, 1 at
/// or above its maximum.
pub fn conditional_cdf<T: Scalar>(fit: &FittedCpm<T>, w: &[T], y: T) -> T {
    match fit.transform_at(y) {
        StepValue::NegInfinity => T::zero(),
        StepValue::PosInfinity => T::one(),
        StepValue::Finite(a) => fit.link.cdf(a - dot(&fit.betas, w)),
    }
}

/// Starting intercepts: the link applied to the empirical CDF at each
/// cutpoint, clipped into `[1/(2n), 1 - 1/(2n)]`. These are the exact
/// maximisers when all slopes are zero.
pub fn initial_alphas<T: Scalar>(counts: &[usize], link: Link) -> Result<Vec<T>> {
    let n: usize = counts.iter().sum();
    let nf = T::from_count(n);
    let lo = T::one() / (T::lit(2.0) * nf);
    let hi = T::one() - lo;
    let mut cum = 0usize;
    let mut out = Vec::with_capacity(counts.len().saturating_sub(1));
    for &c in &counts[..counts.len() - 1] {
        cum += c;
        let p = (T::from_count(cum) / nf).max(lo).min(hi);
        out.push(link.quantile(p)?);
    }
    Ok(out)
}

const MAX_HALVINGS: usize = 60;
/// Largest Newton step still compatible with a finite maximiser.
const DRIFT_LIMIT: f64 = 1e-3;
const POLISH_STEPS: usize = 8;

/// Fits the model to a dataset.
pub fn fit_cpm<T: Scalar>(dataset: &Dataset<T>, options: &FitOptions<T>) -> Result<FittedCpm<T>> {
    options.validate()?;
    let mut encoding = encode_support(dataset)?;
    if let Some((l, u)) = options.censor_bounds {
        encoding = encoding.censored(l, u)?;
    }
    check_constant_covariates(dataset)?;
    let data = OrdinalData::from_encoding(&encoding, dataset)?;
    let names = coefficient_names(dataset.covariate_names());
    fit_ordinal(&data, &encoding.counts, encoding.support, names, options)
}

fn check_constant_covariates<T: Scalar>(dataset: &Dataset<T>) -> Result<()> {
    let obs = dataset.observations();
    for (j, name) in dataset.covariate_names().iter().enumerate() {
        let first = obs[0].covariates[j];
        if obs.iter().all(|o| o.covariates[j] == first) {
            return Err(Error::DegenerateCovariate {
                column: name.clone(),
                reason: "zero variance".into(),
            });
        }
    }
    Ok(())
}

/// Fits the model on pre-encoded ordinal data. `counts` are the category
/// tallies used for initialisation and `support` the outcome value of each
/// category.
pub fn fit_ordinal<T: Scalar>(
    data: &OrdinalData<T>,
    counts: &[usize],
    support: Vec<T>,
    coefficient_names: Vec<String>,
    options: &FitOptions<T>,
) -> Result<FittedCpm<T>> {
    options.validate()?;
    if counts.len() != data.n_categories() || support.len() != data.n_categories() {
        return Err(Error::InvalidData("support, counts and categories disagree".into()));
    }
    if coefficient_names.len() != data.n_coef() {
        return Err(Error::InvalidData("one name per slope required".into()));
    }
    let link = options.link;
    let m = data.n_categories() - 1;
    let q = data.n_coef();
    let mut alphas = initial_alphas(counts, link)?;
    let mut betas = vec![T::zero(); q];
    let mut ll = log_likelihood_unchecked(&alphas, &betas, data, link);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut message = None;

    // Near the optimum the gain of a step can fall below the rounding noise
    // of the summed log-likelihood; there a smaller score decides instead.
    let noise = |ll: T| T::lit(64.0) * T::epsilon() * ll.abs();
    let take_step = |alphas: &[T], betas: &[T], delta: &[T], ll: T, grad_max: T, scale: T| -> Option<(Vec<T>, Vec<T>, T)> {
        let cand_a: Vec<T> = alphas.iter().zip(&delta[..m]).map(|(&a, &d)| a + scale * d).collect();
        if !strictly_increasing(&cand_a) {
            return None;
        }
        let cand_b: Vec<T> = betas.iter().zip(&delta[m..]).map(|(&b, &d)| b + scale * d).collect();
        let cand_ll = log_likelihood_unchecked(&cand_a, &cand_b, data, link);
        if !cand_ll.is_finite() {
            return None;
        }
        if cand_ll >= ll {
            return Some((cand_a, cand_b, cand_ll));
        }
        if ll - cand_ll <= noise(ll) {
            let g = score_and_hessian_unchecked(&cand_a, &cand_b, data, link).0;
            if max_abs(&g) < grad_max {
                return Some((cand_a, cand_b, cand_ll));
            }
        }
        None
    };

    while iterations < options.max_iterations {
        let (grad, h) = score_and_hessian_unchecked(&alphas, &betas, data, link);
        let step = match newton_solve(&grad, &h) {
            Ok(s) => s,
            Err(SolveError::Slopes(j)) if iterations == 0 => {
                return Err(Error::DegenerateCovariate {
                    column: coefficient_names[j].clone(),
                    reason: "linearly dependent on the other design columns and the intercepts".into(),
                });
            }
            Err(SolveError::Slopes(j)) => {
                message = Some(format!(
                    "information for '{}' became singular; likely separation",
                    coefficient_names[j]
                ));
                break;
            }
            Err(SolveError::Intercepts) => {
                message = Some("intercept information became singular; likely separation".into());
                break;
            }
        };
        iterations += 1;
        let grad_small = max_abs(&grad) < T::lit(1e-6);
        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            if let Some(c) = take_step(&alphas, &betas, &step.delta, ll, max_abs(&grad), scale) {
                accepted = Some(c);
                break;
            }
            scale /= T::lit(2.0);
        }
        let Some((a, b, new_ll)) = accepted else {
            message = Some("no ascent step found after step-halving".into());
            break;
        };
        let rel = (new_ll - ll).abs() / ll.abs().max(T::min_positive_value());
        alphas = a;
        betas = b;
        ll = new_ll;
        trace.push(ll);
        // A step shrunk to nothing is a stall, not convergence.
        if rel < options.tolerance && (scale >= T::lit(1.0 / 1024.0) || grad_small) {
            converged = true;
            break;
        }
    }
    if !converged && message.is_none() {
        message = Some(format!(
            "relative log-likelihood change still above {} after {} iterations",
            options.tolerance, options.max_iterations
        ));
    }

    // Full Newton steps past the stopping rule drive the score to round-off;
    // each is kept only if it does not lower the log-likelihood.
    let grad_target = T::lit(1e-10).max(T::epsilon().sqrt() * T::lit(1e-2));
    let mut grad = score_and_hessian_unchecked(&alphas, &betas, data, link).0;
    if converged {
        for _ in 0..POLISH_STEPS {
            if max_abs(&grad) <= grad_target {
                break;
            }
            let (_, h) = score_and_hessian_unchecked(&alphas, &betas, data, link);
            let Ok(step) = newton_solve(&grad, &h) else { break };
            let Some((a, b, new_ll)) = take_step(&alphas, &betas, &step.delta, ll, max_abs(&grad), T::one()) else {
                break;
            };
            let new_grad = score_and_hessian_unchecked(&a, &b, data, link).0;
            if max_abs(&new_grad) >= max_abs(&grad) {
                break;
            }
            alphas = a;
            betas = b;
            ll = new_ll;
            grad = new_grad;
            trace.push(ll);
        }
    }

    // Under separation the likelihood flattens while a slope drifts off to
    // infinity: the relative change test passes but Newton steps stay large.
    if converged {
        let (_, h) = score_and_hessian_unchecked(&alphas, &betas, data, link);
        if let Ok(step) = newton_solve(&grad, &h) {
            let (j, size) = step
                .delta
                .iter()
                .enumerate()
                .fold((0, T::zero()), |best, (j, d)| if d.abs() > best.1 { (j, d.abs()) } else { best });
            if size > T::lit(DRIFT_LIMIT) {
                converged = false;
                let what = if j < m {
                    "the intercepts".to_string()
                } else {
                    format!("'{}'", coefficient_names[j - m])
                };
                message = Some(format!(
                    "log-likelihood flattened but {what} still moves by {size} per Newton step; likely separation"
                ));
            }
        }
    }

    Ok(FittedCpm {
        alphas,
        betas,
        coefficient_names,
        link,
        support,
        loglik: ll,
        converged,
        iterations,
        n_obs: data.len(),
        max_abs_gradient: max_abs(&grad),
        loglik_trace: trace,
        message,
    })
}

fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn toy_data() -> OrdinalData<f64> {
        // 3 rows, 3 categories, one slope
        OrdinalData::new(vec![0, 1, 2], 3, &[vec![0.5], vec![-1.0], vec![2.0]]).unwrap()
    }

    #[test]
    fn two_rows_two_categories_at_zero() {
        let data = OrdinalData::new(vec![0, 1], 2, &[vec![1.0], vec![0.0]]).unwrap();
        let ll = log_likelihood(&[0.0], &[0.0], &data, Link::Probit).unwrap();
        assert_relative_eq!(ll, 2.0 * 0.5f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn rejects_unordered_alphas() {
        let data = toy_data();
        assert!(matches!(
            log_likelihood(&[0.3, 0.1], &[0.0], &data, Link::Logit),
            Err(Error::Domain(_))
        ));
        assert!(score_and_hessian(&[0.3, 0.3], &[0.0], &data, Link::Logit).is_err());
    }

    #[test]
    fn toy_likelihood_matches_hand_evaluation() {
        let data = toy_data();
        let (a1, a2, b) = (-0.4, 0.7, 0.3);
        // log[Φ(a1 - 0.5b) (Φ(a2 + b) - Φ(a1 + b)) (1 - Φ(a2 - 2b))], 30 digits.
        let expected = -2.9745410349573606968;
        let ll = log_likelihood(&[a1, a2], &[b], &data, Link::Probit).unwrap();
        assert_relative_eq!(ll, expected, max_relative = 1e-13);
    }

    #[test]
    fn hessian_intercept_block_is_tridiagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..12).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        let cats: Vec<usize> = (0..12).map(|i| i % 6).collect();
        let data = OrdinalData::new(cats, 6, &rows).unwrap();
        let alphas = [-1.0, -0.5, 0.0, 0.4, 1.1];
        let (_, h) = score_and_hessian(&alphas, &[0.2, -0.3], &data, Link::Logit).unwrap();
        for i in 0..5usize {
            for j in 0..5 {
                if i.abs_diff(j) >= 2 {
                    assert_eq!(h.entry(i, j), 0.0);
                }
            }
        }
        let dense = h.to_dense();
        for i in 0..7 {
            for j in 0..7 {
                assert_eq!(dense[i][j], dense[j][i]);
            }
        }
    }

    #[test]
    fn hessian_matches_gradient_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random::<f64>() - 0.5, rng.sample(StandardNormal)]).collect();
        let cats: Vec<usize> = (0..20).map(|i| (i * 7) % 5).collect();
        let data = OrdinalData::new(cats, 5, &rows).unwrap();
        let alphas = vec![-1.2, -0.3, 0.2, 0.9];
        let betas = vec![0.4, -0.2];
        for link in Link::ALL {
            let (_, h) = score_and_hessian(&alphas, &betas, &data, link).unwrap();
            let mut theta: Vec<f64> = alphas.iter().chain(&betas).copied().collect();
            let step = 1e-6;
            for j in 0..theta.len() {
                let orig = theta[j];
                theta[j] = orig + step;
                let gp = score_and_hessian(&theta[..4], &theta[4..], &data, link).unwrap().0;
                theta[j] = orig - step;
                let gm = score_and_hessian(&theta[..4], &theta[4..], &data, link).unwrap().0;
                theta[j] = orig;
                for i in 0..theta.len() {
                    let fd = (gp[i] - gm[i]) / (2.0 * step);
                    let an = h.entry(i, j);
                    assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "{link} ({i},{j}): {fd} vs {an}");
                }
            }
        }
    }

    fn simulated(n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let d = i % 2 == 0;
            let t = (i / 2) % 2 == 0;
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let dt = if d && t { 1.0 } else { 0.0 };
            let ystar = 1.0 * d as u8 as f64 + 0.5 * t as u8 as f64 + 0.5 * dt + 0.5 * x + e;
            rows.push(Observation::new(ystar.exp(), d, t, vec![x]));
        }
        Dataset::new(rows, vec!["x".into()]).unwrap()
    }

    #[test]
    fn fit_converges_with_vanishing_score() {
        let ds = simulated(200, 1);
        for link in Link::ALL {
            let fit = fit_cpm(&ds, &FitOptions::new(link)).unwrap();
            assert!(fit.converged, "{link}: {:?}", fit.message);
            assert!(fit.max_abs_gradient < 1e-6, "{link}: {}", fit.max_abs_gradient);
            assert!(strictly_increasing(&fit.alphas));
            assert!(fit
                .loglik_trace
                .windows(2)
                .all(|w| w[1] >= w[0] - 64.0 * f64::EPSILON * w[0].abs()));
            assert_eq!(fit.alphas.len(), fit.support.len() - 1);
        }
    }

    #[test]
    fn fit_recovers_slopes_roughly() {
        let ds = simulated(2000, 5);
        let fit = fit_cpm(&ds, &FitOptions::new(Link::Probit)).unwrap();
        let truth = [1.0, 0.5, 0.5, 0.5];
        for (b, t) in fit.betas.iter().zip(truth) {
            assert!((b - t).abs() < 0.2, "{:?}", fit.betas);
        }
    }

    #[test]
    fn constant_covariate_is_named() {
        let ds = simulated(50, 2);
        let rows = ds
            .observations()
            .iter()
            .map(|o| Observation::new(o.outcome, o.group, o.period, vec![o.covariates[0], 3.0]))
            .collect();
        let ds = Dataset::new(rows, vec!["x".into(), "const".into()]).unwrap();
        match fit_cpm(&ds, &FitOptions::new(Link::Probit)) {
            Err(Error::DegenerateCovariate { column, .. }) => assert_eq!(column, "const"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn collinear_covariate_is_named() {
        let ds = simulated(50, 2);
        let rows = ds
            .observations()
            .iter()
            .map(|o| {
                let x = o.covariates[0];
                Observation::new(o.outcome, o.group, o.period, vec![x, 2.0 * x + 1.0])
            })
            .collect();
        let ds = Dataset::new(rows, vec!["x".into(), "x2".into()]).unwrap();
        match fit_cpm(&ds, &FitOptions::new(Link::Logit)) {
            Err(Error::DegenerateCovariate { column, .. }) => assert_eq!(column, "x2"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn separated_data_reports_non_convergence() {
        // treated-post outcomes all exceed everything else: D:T diverges
        let mut rows = Vec::new();
        for i in 0..40 {
            let d = i % 2 == 0;
            let t = (i / 2) % 2 == 0;
            let y = if d && t { 100.0 + i as f64 } else { i as f64 };
            rows.push(Observation::new(y, d, t, vec![]));
        }
        let ds = Dataset::new(rows, vec![]).unwrap();
        let fit = fit_cpm(&ds, &FitOptions::new(Link::Probit)).unwrap();
        assert!(!fit.converged || fit.betas[2] > 5.0, "{:?}", fit.betas);
    }

    #[test]
    fn conditional_cdf_step_convention() {
        let ds = simulated(100, 4);
        let fit = fit_cpm(&ds, &FitOptions::new(Link::Probit)).unwrap();
        let w = [1.0, 1.0, 1.0, 0.3];
        let ymin = fit.support[0];
        let ymax = *fit.support.last().unwrap();
        assert_eq!(conditional_cdf(&fit, &w, ymin - 1.0), 0.0);
        assert_eq!(conditional_cdf(&fit, &w, ymax), 1.0);
        let mut prev = 0.0;
        for &y in &fit.support {
            let c = conditional_cdf(&fit, &w, y);
            assert!(c >= prev);
            prev = c;
        }
    }

    #[test]
    fn censoring_collapses_tails_before_fitting() {
        let ds = simulated(300, 8);
        let mut ys = ds.outcomes();
        ys.sort_by(f64::total_cmp);
        let (l, u) = (ys[10], ys[289]);
        let opts = FitOptions {
            censor_bounds: Some((l, u)),
            ..FitOptions::new(Link::Probit)
        };
        let fit = fit_cpm(&ds, &opts).unwrap();
        assert!(fit.converged);
        // 10 values below L and 10 above U collapse into one category each.
        assert_eq!(fit.support.len(), 300 - 9 - 9);
        let full = fit_cpm(&ds, &FitOptions::new(Link::Probit)).unwrap();
        for (a, b) in fit.betas.iter().zip(&full.betas) {
            assert!((a - b).abs() < 0.1);
        }
    }

    #[test]
    fn generic_f32_fit() {
        let ds = simulated(200, 1);
        let rows = ds
            .observations()
            .iter()
            .map(|o| Observation::new(o.outcome as f32, o.group, o.period, vec![o.covariates[0] as f32]))
            .collect();
        let ds32 = Dataset::new(rows, vec!["x".into()]).unwrap();
        let opts = FitOptions {
            tolerance: 1e-5f32,
            ..FitOptions::new(Link::Probit)
        };
        let fit32 = fit_cpm(&ds32, &opts).unwrap();
        let fit64 = fit_cpm(&ds, &FitOptions::new(Link::Probit)).unwrap();
        assert!(fit32.converged);
        for (a, b) in fit32.betas.iter().zip(&fit64.betas) {
            assert!((*a as f64 - b).abs() < 1e-3);
        }
    }
}
