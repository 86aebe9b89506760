//! Independent oracles and property checks shared by the model-fit,
//! estimand and acceptance suites. Each check returns the worst deviation
//! it saw so callers can assert or report it.
#![allow(dead_code)]

use cpmdid::cpm::{log_likelihood, score_and_hessian, OrdinalData};
use cpmdid::data::encode_support;
use cpmdid::estimands::EstimandRequest;
use cpmdid::simulation::{generate_dataset, Scenario};
use cpmdid::{att, counterfactual_cdfs, fit_cpm, full_report, mtt, ptt, qtt, CounterfactualPair, DiscreteCdf};
use cpmdid::{Dataset, FitOptions, FittedCpm, Link, Observation};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// `n` rows cycling through the four cells, one covariate, outcome on a
/// half-unit grid so ties occur.
pub fn dataset(n: usize, seed: u64, grid: f64) -> Dataset<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|i| {
            let d = i % 2 == 0;
            let t = (i / 2) % 2 == 0;
            let x: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let y = 0.8 * d as u8 as f64 + 0.4 * t as u8 as f64 + 0.3 * (d && t) as u8 as f64 + 0.6 * x + e;
            let y = if grid > 0.0 { (y / grid).round() * grid } else { y };
            Observation::new(y, d, t, vec![x])
        })
        .collect();
    Dataset::new(rows, vec!["x".into()]).unwrap()
}

pub fn ordinal(ds: &Dataset<f64>) -> OrdinalData<f64> {
    OrdinalData::from_encoding(&encode_support(ds).unwrap(), ds).unwrap()
}

/// Error CDF and density written independently of the library.
pub fn oracle_cdf(link: Link, z: f64) -> f64 {
    match link {
        Link::Probit => Normal::standard().cdf(z),
        Link::Logit => 1.0 / (1.0 + (-z).exp()),
        Link::Cloglog => 1.0 - (-z.exp()).exp(),
    }
}

pub fn oracle_pdf(link: Link, z: f64) -> f64 {
    match link {
        Link::Probit => Normal::standard().pdf(z),
        Link::Logit => {
            let p = oracle_cdf(link, z);
            p * (1.0 - p)
        }
        Link::Cloglog => (z - z.exp()).exp(),
    }
}

pub struct DenseProblem {
    cats: Vec<usize>,
    pub k: usize,
    rows: Vec<Vec<f64>>,
    link: Link,
}

impl DenseProblem {
    pub fn new(ds: &Dataset<f64>, link: Link) -> Self {
        let enc = encode_support(ds).unwrap();
        let rows = ds
            .observations()
            .iter()
            .map(|o| {
                let (d, t) = (o.group as u8 as f64, o.period as u8 as f64);
                let mut w = vec![d, t, d * t];
                w.extend(&o.covariates);
                w
            })
            .collect();
        DenseProblem {
            cats: enc.category_index.clone(),
            k: enc.n_categories(),
            rows,
            link,
        }
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        theta.split_at(self.k - 1)
    }

    fn bounds(&self, theta: &[f64], i: usize) -> (f64, f64) {
        let (a, b) = self.split(theta);
        let eta: f64 = b.iter().zip(&self.rows[i]).map(|(b, w)| b * w).sum();
        let c = self.cats[i];
        let lo = if c == 0 { f64::NEG_INFINITY } else { a[c - 1] - eta };
        let hi = if c == self.k - 1 { f64::INFINITY } else { a[c] - eta };
        (lo, hi)
    }

    pub fn loglik(&self, theta: &[f64]) -> f64 {
        (0..self.rows.len())
            .map(|i| {
                let (lo, hi) = self.bounds(theta, i);
                (oracle_cdf(self.link, hi) - oracle_cdf(self.link, lo)).ln()
            })
            .sum()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let m = self.k - 1;
        let mut g = vec![0.0; theta.len()];
        for i in 0..self.rows.len() {
            let (lo, hi) = self.bounds(theta, i);
            let p = oracle_cdf(self.link, hi) - oracle_cdf(self.link, lo);
            let fh = if hi.is_finite() { oracle_pdf(self.link, hi) } else { 0.0 };
            let fl = if lo.is_finite() { oracle_pdf(self.link, lo) } else { 0.0 };
            let c = self.cats[i];
            if c < m {
                g[c] += fh / p;
            }
            if c > 0 {
                g[c - 1] -= fl / p;
            }
            for (j, w) in self.rows[i].iter().enumerate() {
                g[m + j] -= w * (fh - fl) / p;
            }
        }
        g
    }

    fn hessian_fd(&self, theta: &[f64]) -> DMatrix<f64> {
        let n = theta.len();
        let h = 1e-6;
        let mut hm = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut tp = theta.to_vec();
            let mut tm = theta.to_vec();
            tp[j] += h;
            tm[j] -= h;
            let (gp, gm) = (self.gradient(&tp), self.gradient(&tm));
            for i in 0..n {
                hm[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        (&hm + hm.transpose()) * 0.5
    }

    fn ordered(&self, theta: &[f64]) -> bool {
        self.split(theta).0.windows(2).all(|w| w[0] < w[1])
    }

    /// Damped dense Newton from empirical-CDF intercepts and zero slopes.
    pub fn maximise(&self) -> Vec<f64> {
        let n = self.rows.len() as f64;
        let mut counts = vec![0usize; self.k];
        for &c in &self.cats {
            counts[c] += 1;
        }
        let mut theta: Vec<f64> = Vec::new();
        let mut cum = 0usize;
        for &c in &counts[..self.k - 1] {
            cum += c;
            let p = cum as f64 / n;
            theta.push(match self.link {
                Link::Probit => Normal::standard().inverse_cdf(p),
                Link::Logit => (p / (1.0 - p)).ln(),
                Link::Cloglog => (-(1.0 - p).ln()).ln(),
            });
        }
        theta.extend(std::iter::repeat_n(0.0, self.rows[0].len()));
        let mut ll = self.loglik(&theta);
        for _ in 0..200 {
            let g = DVector::from_vec(self.gradient(&theta));
            if g.amax() < 1e-11 {
                break;
            }
            let hm = -self.hessian_fd(&theta);
            let step = hm.lu().solve(&g).expect("oracle Hessian singular");
            let mut scale = 1.0;
            loop {
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + scale * s).collect();
                if self.ordered(&cand) {
                    let cl = self.loglik(&cand);
                    if cl >= ll - 1e-12 {
                        theta = cand;
                        ll = cl;
                        break;
                    }
                }
                scale /= 2.0;
                assert!(scale > 1e-12, "oracle line search failed");
            }
        }
        theta
    }
}

/// Binary probit by iteratively reweighted least squares on `[1, w]`.
pub fn probit_irls(rows: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    let n = rows.len();
    let k = rows[0].len() + 1;
    let x = DMatrix::from_fn(n, k, |i, j| if j == 0 { 1.0 } else { rows[i][j - 1] });
    let norm = Normal::standard();
    let mut beta = DVector::zeros(k);
    for _ in 0..100 {
        let eta = &x * &beta;
        let mut wts = DVector::zeros(n);
        let mut work = DVector::zeros(n);
        for i in 0..n {
            let mu = norm.cdf(eta[i]).clamp(1e-12, 1.0 - 1e-12);
            let d = norm.pdf(eta[i]);
            wts[i] = d * d / (mu * (1.0 - mu));
            work[i] = eta[i] + (z[i] - mu) / d;
        }
        let xtw = x.transpose() * DMatrix::from_diagonal(&wts);
        let next = (&xtw * &x).lu().solve(&(&xtw * work)).unwrap();
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < 1e-13 {
            break;
        }
    }
    beta.iter().copied().collect()
}


/// Worst |ours − oracle| over all coefficients of an NPMLE fit.
pub fn npmle_vs_dense(seed: u64) -> Result<f64, String> {
    let n = 16 + (seed as usize % 15);
    let link = [Link::Probit, Link::Logit][seed as usize % 2];
    let ds = dataset(n, 100 + seed, 0.5);
    let fit = fit_cpm(&ds, &FitOptions::new(link)).map_err(|e| e.to_string())?;
    if !fit.converged {
        return Err(format!("seed {seed}: {:?}", fit.message));
    }
    let oracle = DenseProblem::new(&ds, link).maximise();
    let ours: Vec<f64> = fit.alphas.iter().chain(&fit.betas).copied().collect();
    if ours.len() != oracle.len() {
        return Err(format!("seed {seed}: {} vs {} coefficients", ours.len(), oracle.len()));
    }
    Ok(ours.iter().zip(&oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Worst relative error of the analytic score against central differences.
/// Perturbations that break the intercept ordering are skipped.
pub fn score_vs_fd(seed: u64, link: Link, n: usize) -> f64 {
    let ds = dataset(n, seed, 0.25);
    let data = ordinal(&ds);
    let m = data.n_categories() - 1;
    let alphas: Vec<f64> = (0..m).map(|i| -1.2 + 2.4 * (i as f64 + 0.5) / m as f64).collect();
    let betas = vec![0.2, -0.1, 0.3, 0.4];
    let (g, _) = score_and_hessian(&alphas, &betas, &data, link).unwrap();
    let h = 1e-6;
    let mut theta: Vec<f64> = alphas.iter().chain(&betas).copied().collect();
    let mut worst = 0.0f64;
    for j in 0..theta.len() {
        let orig = theta[j];
        theta[j] = orig + h;
        let (a, b) = theta.split_at(m);
        let up = log_likelihood(a, b, &data, link);
        theta[j] = orig - h;
        let (a, b) = theta.split_at(m);
        let down = log_likelihood(a, b, &data, link);
        theta[j] = orig;
        if let (Ok(up), Ok(down)) = (up, down) {
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - g[j]).abs() / g[j].abs().max(1.0));
        }
    }
    worst
}

/// Worst coefficient gap between fits to `y` and `exp(y)`.
pub fn rank_invariance_gap(seed: u64) -> f64 {
    let ds = dataset(60, seed, 0.0);
    let shifted = ds.map_outcomes(|y| y.exp()).unwrap();
    let a = fit_cpm(&ds, &FitOptions::new(Link::Probit)).unwrap();
    let b = fit_cpm(&shifted, &FitOptions::new(Link::Probit)).unwrap();
    a.betas
        .iter()
        .zip(&b.betas)
        .chain(a.alphas.iter().zip(&b.alphas))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Worst gap between a two-category probit CPM and binary probit IRLS.
pub fn binary_probit_gap(seed: u64) -> f64 {
    let ds = dataset(400, seed, 0.0);
    let median = {
        let mut y = ds.outcomes();
        y.sort_by(f64::total_cmp);
        y[y.len() / 2]
    };
    let binary = ds.map_outcomes(|y| if y > median { 1.0 } else { 0.0 }).unwrap();
    let fit = fit_cpm(&binary, &FitOptions::new(Link::Probit)).unwrap();
    assert_eq!(fit.alphas.len(), 1);
    let rows: Vec<Vec<f64>> = binary
        .observations()
        .iter()
        .map(|o| {
            let (d, t) = (o.group as u8 as f64, o.period as u8 as f64);
            vec![d, t, d * t, o.covariates[0]]
        })
        .collect();
    let glm = probit_irls(&rows, &binary.outcomes());
    // P(Y = 1) = Φ(βᵀw - α): the GLM intercept is -α.
    let mut worst = (glm[0] + fit.alphas[0]).abs();
    for (a, b) in fit.betas.iter().zip(&glm[1..]) {
        worst = worst.max((a - b).abs());
    }
    worst
}

/// Every bundled scenario at two sizes, fitted with its own link.
pub fn corpus() -> Vec<(String, Dataset<f64>, FittedCpm<f64>)> {
    let mut out = Vec::new();
    for name in Scenario::NAMES {
        for (n, seed) in [(150, 1u64), (400, 2)] {
            let s = Scenario {
                n_subjects: n,
                seed,
                ..Scenario::by_name(name).unwrap()
            };
            let ds = generate_dataset(&s).unwrap();
            let fit = fit_cpm(&ds, &FitOptions::new(s.fit_link)).unwrap();
            assert!(fit.converged, "{name}/{n}: {:?}", fit.message);
            out.push((format!("{name}/{n}"), ds, fit));
        }
    }
    out
}

/// `Σ_i Σ_j h(y_i, y_j) dF̂₁(y_i) dF̂₀(y_j)` written out in full.
pub fn brute_force_mtt(pair: &CounterfactualPair<f64>) -> f64 {
    let s = pair.support();
    let (m1, m0) = (pair.f1.masses(), pair.f0.masses());
    let mut total = 0.0;
    for i in 0..s.len() {
        for j in 0..s.len() {
            let h = if s[i] > s[j] {
                1.0
            } else if s[i] == s[j] {
                0.5
            } else {
                0.0
            };
            total += h * m1[i] * m0[j];
        }
    }
    total
}

/// Worst |fast − brute-force| MTT over the corpus.
pub fn mtt_fast_vs_brute(corpus: &[(String, Dataset<f64>, FittedCpm<f64>)]) -> f64 {
    corpus
        .iter()
        .map(|(_, ds, fit)| {
            let pair = counterfactual_cdfs(fit, ds).unwrap();
            (mtt(&pair) - brute_force_mtt(&pair)).abs()
        })
        .fold(0.0, f64::max)
}

/// Worst departure from the exact nulls after zeroing the interaction.
pub fn zero_interaction_gap(corpus: &[(String, Dataset<f64>, FittedCpm<f64>)]) -> f64 {
    let mut worst = 0.0f64;
    for (_, ds, fit) in corpus {
        let mut fit = fit.clone();
        fit.betas[2] = 0.0;
        let pair = counterfactual_cdfs(&fit, ds).unwrap();
        worst = worst.max(att(&pair).abs()).max((mtt(&pair) - 0.5).abs());
        for &y in pair.support() {
            worst = worst.max(ptt(&pair, y).abs());
        }
        for p in [0.1, 0.25, 0.5, 0.75, 0.9] {
            worst = worst.max(qtt(&pair, p).unwrap().abs());
        }
    }
    worst
}

/// `(ATT, PTT(1), MTT)` on `F₁ = {2, 3}` and `F₀ = {1, 2}` with equal mass.
pub fn two_point_toy() -> (f64, f64, f64) {
    let support = vec![1.0f64, 2.0, 3.0];
    let f1 = DiscreteCdf::from_masses(support.clone(), &[0.0, 0.5, 0.5]).unwrap();
    let f0 = DiscreteCdf::from_masses(support, &[0.5, 0.5, 0.0]).unwrap();
    let pair = CounterfactualPair::new(f1, f0, 1).unwrap();
    let report = full_report(&pair, &EstimandRequest::standard(vec![1.0])).unwrap();
    (report.att.unwrap().value, report.ptt[0].1.value, report.mtt.unwrap().value)
}
