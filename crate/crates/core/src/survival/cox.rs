//! Cox proportional hazards by damped Newton on the partial likelihood.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::CoxDesign;

/// Handling of tied event times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Ties {
    #[default]
    Breslow,
    Efron,
}

impl fmt::Display for Ties {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ties::Breslow => "breslow",
            Ties::Efron => "efron",
        })
    }
}

impl FromStr for Ties {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "breslow" => Ok(Ties::Breslow),
            "efron" => Ok(Ties::Efron),
            other => Err(format!("unknown tie method {other:?} (expected breslow or efron)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoxOptions {
    pub max_iter: usize,
    /// Relative change in the log partial likelihood.
    pub loglik_tol: f64,
    /// Max-norm of the gradient.
    pub grad_tol: f64,
    /// Ridge penalty `ridge / 2 * Σ b_k²` on the functional columns.
    pub ridge: f64,
    pub ties: Ties,
}

impl Default for CoxOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            loglik_tol: 1e-9,
            grad_tol: 1e-6,
            ridge: 0.0,
            ties: Ties::Breslow,
        }
    }
}

/// Log partial likelihood with its gradient and observed information
/// (negative Hessian, row-major `p x p`).
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLikelihood {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub information: Vec<f64>,
}

/// Design rows sorted by descending time, covariates centred. Centring does
/// not change the partial likelihood; it keeps `exp(xβ)` in range.
struct Prepared {
    p: usize,
    x: Vec<f64>,
    events: Vec<bool>,
    /// Half-open row ranges sharing one time, in descending time order.
    groups: Vec<(usize, usize)>,
    n_events: usize,
}

impl Prepared {
    fn new(design: &CoxDesign) -> Self {
        let n = design.n();
        let p = design.p();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| design.times[b].total_cmp(&design.times[a]).then(a.cmp(&b)));
        let means: Vec<f64> = (0..p)
            .map(|j| (0..n).map(|i| design.row(i)[j]).sum::<f64>() / n as f64)
            .collect();
        let mut x = Vec::with_capacity(n * p);
        for &i in &order {
            x.extend(design.row(i).iter().zip(&means).map(|(v, m)| v - m));
        }
        let events: Vec<bool> = order.iter().map(|&i| design.events[i]).collect();
        let mut groups = Vec::new();
        let mut start = 0;
        for r in 1..=n {
            if r == n || design.times[order[r]] != design.times[order[start]] {
                groups.push((start, r));
                start = r;
            }
        }
        Self {
            p,
            x,
            n_events: events.iter().filter(|&&e| e).count(),
            events,
            groups,
        }
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.x[r * self.p..(r + 1) * self.p]
    }

    fn evaluate(&self, beta: &[f64], ties: Ties) -> PartialLikelihood {
        let p = self.p;
        let n = self.events.len();
        let eta: Vec<f64> = (0..n)
            .map(|r| self.row(r).iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut value = 0.0;
        let mut gradient = vec![0.0; p];
        let mut information = vec![0.0; p * p];
        let (mut s0, mut s1, mut s2) = (0.0, vec![0.0; p], vec![0.0; p * p]);
        let (mut d1, mut d2) = (vec![0.0; p], vec![0.0; p * p]);
        let mut m1 = vec![0.0; p];

        for &(start, end) in &self.groups {
            let mut d0 = 0.0;
            let mut n_ev = 0usize;
            d1.iter_mut().for_each(|v| *v = 0.0);
            d2.iter_mut().for_each(|v| *v = 0.0);
            for r in start..end {
                let xr = self.row(r);
                let w = (eta[r] - shift).exp();
                s0 += w;
                add_weighted(&mut s1, &mut s2, xr, w);
                if self.events[r] {
                    n_ev += 1;
                    d0 += w;
                    add_weighted(&mut d1, &mut d2, xr, w);
                    value += eta[r];
                    gradient.iter_mut().zip(xr).for_each(|(g, x)| *g += x);
                }
            }
            if n_ev == 0 {
                continue;
            }
            let breslow_terms = match ties {
                Ties::Breslow => 1,
                Ties::Efron => n_ev,
            };
            let multiplicity = (n_ev / breslow_terms) as f64;
            for l in 0..breslow_terms {
                let a = match ties {
                    Ties::Breslow => 0.0,
                    Ties::Efron => l as f64 / n_ev as f64,
                };
                let r0 = s0 - a * d0;
                value -= multiplicity * (r0.ln() + shift);
                for j in 0..p {
                    m1[j] = (s1[j] - a * d1[j]) / r0;
                    gradient[j] -= multiplicity * m1[j];
                }
                for j in 0..p {
                    for k in j..p {
                        let m2 = (s2[j * p + k] - a * d2[j * p + k]) / r0;
                        information[j * p + k] += multiplicity * (m2 - m1[j] * m1[k]);
                    }
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                information[j * p + k] = information[k * p + j];
            }
        }
        PartialLikelihood {
            value,
            gradient,
            information,
        }
    }
}

/// Adds `w x` to `s1` and `w x xᵀ` (upper triangle) to `s2`.
#[inline]
fn add_weighted(s1: &mut [f64], s2: &mut [f64], x: &[f64], w: f64) {
    let p = x.len();
    for j in 0..p {
        let wx = w * x[j];
        s1[j] += wx;
        let row = &mut s2[j * p..(j + 1) * p];
        for k in j..p {
            row[k] += wx * x[k];
        }
    }
}

/// Log partial likelihood, gradient and information at `beta`.
pub fn partial_likelihood(design: &CoxDesign, beta: &[f64], ties: Ties) -> PartialLikelihood {
    assert_eq!(beta.len(), design.p(), "one coefficient per column");
    Prepared::new(design).evaluate(beta, ties)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub names: Vec<String>,
    /// Log-hazard units, on the design's scale.
    pub coefficients: Vec<f64>,
    /// Inverse of the (penalized) observed information, row-major.
    pub covariance: Vec<f64>,
    pub iterations: usize,
    pub log_partial_likelihood: f64,
    pub gradient_max_norm: f64,
    pub n: usize,
    pub n_events: usize,
    pub ties: Ties,
    pub ridge: f64,
}

impl CoxFit {
    pub fn p(&self) -> usize {
        self.coefficients.len()
    }

    pub fn std_error(&self, j: usize) -> f64 {
        self.covariance[j * self.p() + j].sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NaReason {
    NoEvents,
    NotConverged,
    Singular,
    NonFinite,
}

impl NaReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            NaReason::NoEvents => "no_events",
            NaReason::NotConverged => "not_converged",
            NaReason::Singular => "singular_information",
            NaReason::NonFinite => "non_finite",
        }
    }
}

/// A fit that produced no usable estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaFit {
    pub reason: NaReason,
    pub iterations: usize,
    pub gradient_max_norm: f64,
    pub log_partial_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CoxOutcome {
    Fitted(CoxFit),
    Na(NaFit),
}

impl CoxOutcome {
    pub fn fit(&self) -> Option<&CoxFit> {
        match self {
            CoxOutcome::Fitted(f) => Some(f),
            CoxOutcome::Na(_) => None,
        }
    }

    pub fn is_na(&self) -> bool {
        matches!(self, CoxOutcome::Na(_))
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Cholesky factorization of a symmetric `p x p` matrix, refusing
/// numerically rank-deficient input.
fn factor(info: &[f64], p: usize) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let m = DMatrix::from_row_slice(p, p, info);
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    for j in 0..p {
        let d = m[(j, j)];
        if !(d > 0.0) || l[(j, j)] * l[(j, j)] <= 1e-10 * d {
            return None;
        }
    }
    Some(chol)
}

const DIVERGENCE_BOUND: f64 = 25.0;
const FLAT_SE_BOUND: f64 = 100.0;

fn column_sd(design: &CoxDesign, j: usize) -> f64 {
    let col = design.column(j);
    let n = col.len() as f64;
    let mean = col.iter().sum::<f64>() / n;
    (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn fit_cox(design: &CoxDesign, opts: &CoxOptions) -> CoxOutcome {
    let prep = Prepared::new(design);
    let p = design.p();
    let na = |reason, iterations, grad: f64, ll: f64| {
        CoxOutcome::Na(NaFit {
            reason,
            iterations,
            gradient_max_norm: grad,
            log_partial_likelihood: ll,
        })
    };
    if prep.n_events == 0 {
        return na(NaReason::NoEvents, 0, f64::NAN, f64::NAN);
    }

    let mut penalized = vec![false; p];
    for &j in &design.functional_columns {
        penalized[j] = true;
    }
    let ridge = opts.ridge.max(0.0);
    let objective = |beta: &[f64]| -> (PartialLikelihood, f64) {
        let mut pl = prep.evaluate(beta, opts.ties);
        let mut pen = 0.0;
        if ridge > 0.0 {
            for j in 0..p {
                if penalized[j] {
                    pen += 0.5 * ridge * beta[j] * beta[j];
                    pl.gradient[j] -= ridge * beta[j];
                    pl.information[j * p + j] += ridge;
                }
            }
        }
        let obj = pl.value - pen;
        (pl, obj)
    };

    let mut beta = vec![0.0; p];
    let (mut current, mut obj) = objective(&beta);
    if !obj.is_finite() {
        return na(NaReason::NonFinite, 0, f64::NAN, obj);
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let Some(chol) = factor(&current.information, p) else {
            return na(NaReason::Singular, iterations, max_abs(&current.gradient), current.value);
        };
        let step = chol.solve(&DVector::from_column_slice(&current.gradient));
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let (pl, o) = objective(&trial);
            if o.is_finite() && o >= obj - 1e-12 * obj.abs() {
                accepted = Some((trial, pl, o));
                break;
            }
            scale *= 0.5;
        }
        let Some((trial, pl, o)) = accepted else {
            // No ascent direction left: accept the current point only if it
            // already satisfies the gradient criterion.
            converged = max_abs(&current.gradient) < opts.grad_tol;
            break;
        };
        let rel = (o - obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        beta = trial;
        current = pl;
        obj = o;
        if rel < opts.loglik_tol && max_abs(&current.gradient) < opts.grad_tol {
            converged = true;
            break;
        }
    }
    // A monotone likelihood drifts off to infinity while its value and
    // gradient flatten out; treat a coefficient worth more than e^25 per
    // column sd as divergent.
    if converged && (0..p).any(|j| beta[j].abs() * column_sd(design, j) > DIVERGENCE_BOUND) {
        converged = false;
    }
    if !converged {
        return na(NaReason::NotConverged, iterations, max_abs(&current.gradient), current.value);
    }
    let Some(chol) = factor(&current.information, p) else {
        return na(NaReason::Singular, iterations, max_abs(&current.gradient), current.value);
    };
    let inv = chol.inverse();
    let mut covariance = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            covariance.push(0.5 * (inv[(i, j)] + inv[(j, i)]));
        }
    }
    if covariance.iter().any(|v| !v.is_finite()) || beta.iter().any(|b| !b.is_finite()) {
        return na(NaReason::NonFinite, iterations, max_abs(&current.gradient), current.value);
    }
    // Information that has collapsed along a column also marks a drift to
    // infinity: a well-posed fit has a standard error of order one per sd.
    if (0..p).any(|j| covariance[j * p + j].sqrt() * column_sd(design, j) > FLAT_SE_BOUND) {
        return na(NaReason::NotConverged, iterations, max_abs(&current.gradient), current.value);
    }
    CoxOutcome::Fitted(CoxFit {
        names: design.names.clone(),
        coefficients: beta,
        covariance,
        iterations,
        log_partial_likelihood: current.value,
        gradient_max_norm: max_abs(&current.gradient),
        n: design.n(),
        n_events: prep.n_events,
        ties: opts.ties,
        ridge,
    })
}

/// Normal quantile used for the 95% interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardRatio {
    pub coefficient: f64,
    pub std_error: f64,
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl HazardRatio {
    pub fn from_coefficient(coefficient: f64, std_error: f64) -> Self {
        Self {
            coefficient,
            std_error,
            hr: coefficient.exp(),
            ci_low: (coefficient - Z_95 * std_error).exp(),
            ci_high: (coefficient + Z_95 * std_error).exp(),
        }
    }

    pub fn covers(&self, true_coefficient: f64) -> bool {
        let t = true_coefficient.exp();
        self.ci_low <= t && t <= self.ci_high
    }
}

/// `exp(coef)` with its 95% interval for design column `column`; `None`
/// for an NA fit.
pub fn hazard_ratio(outcome: &CoxOutcome, column: usize) -> Option<HazardRatio> {
    let fit = outcome.fit()?;
    Some(HazardRatio::from_coefficient(fit.coefficients[column], fit.std_error(column)))
}
