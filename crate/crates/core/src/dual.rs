//! Global solve of the one-dimensional trust-region dual.
//!
//! The constrained policy update reduces to minimizing, over the dual variable
//! beta >= 0,
//!
//! ```text
//! l0(beta) = beta * delta + E_s[ beta * log E_a[ exp(A(s, a) / beta) ] ]
//! ```
//!
//! with the state expectation taken over the batch's empirical visit weights
//! and the action expectation over the recorded policy weights. Both the
//! objective and its analytic gradient are evaluated in max-shifted form so
//! that arbitrarily small beta stays finite. The search is basin hopping in
//! log-space: random restarts around the incumbent plus gradient descent with
//! a backtracking line search. The objective is convex in beta (it is a
//! pointwise supremum of affine functions), so the hops serve as a cheap
//! cross-check of the local phase rather than a necessity.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Uniform;

use crate::advantage::{AdvantageBatch, GroupPart};
use crate::error::{Error, Result};

/// Trust-region radius and solver controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegionSpec {
    /// KL radius, > 0.
    pub delta: f64,
    /// Lower clamp for beta; the update is effectively greedy there.
    pub beta_min: f64,
    /// Basin-hop count, >= 1.
    pub hops: usize,
    /// Gradient tolerance of the local minimizer.
    pub local_tol: f64,
    /// Starting point for the first descent.
    pub beta_init: f64,
    /// Seed for the hop perturbations.
    pub seed: u64,
}

impl Default for TrustRegionSpec {
    fn default() -> Self {
        Self {
            delta: 0.05,
            beta_min: 1e-6,
            hops: 3,
            local_tol: 1e-8,
            beta_init: 1.0,
            seed: 0,
        }
    }
}

impl TrustRegionSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::invalid_config("delta", "must be > 0"));
        }
        if !(self.beta_min > 0.0) {
            return Err(Error::invalid_config("beta_min", "must be > 0"));
        }
        if self.hops == 0 {
            return Err(Error::invalid_config("basin_hops", "must be >= 1"));
        }
        if !(self.local_tol > 0.0) {
            return Err(Error::invalid_config("local_tol", "must be > 0"));
        }
        if !(self.beta_init > 0.0) {
            return Err(Error::invalid_config("beta_init", "must be > 0"));
        }
        Ok(())
    }
}

/// Result of the dual solve.
#[derive(Debug, Clone)]
pub struct DualSolution {
    /// Optimal dual variable, >= beta_min.
    pub beta_star: f64,
    /// Dual objective at beta_star.
    pub objective: f64,
    /// Analytic gradient at beta_star. One-sided optimality at the clamp
    /// (grad >= -local_tol); |grad| <= local_tol otherwise.
    pub grad_at_solution: f64,
    /// True when the unconstrained minimizer would sit below beta_min.
    pub clamped: bool,
    /// Expected KL the tilted policy will achieve, equal to delta - gradient.
    pub achieved_kl: f64,
    /// Hops actually run.
    pub hops_run: usize,
    /// Objective/gradient evaluations performed.
    pub evaluations: usize,
}

/// Max-shifted per-part sums: S0 = E[(exp((A - m)/beta))], S1 = E[A exp((A - m)/beta)],
/// both under the part's normalized weights. The shift is the maximum over
/// the support (entries with positive weight), which keeps S0 >= w_max > 0.
fn part_sums(part: &GroupPart, beta: f64) -> (f64, f64, f64) {
    let m = part
        .entries
        .iter()
        .filter(|e| e.weight > 0.0)
        .map(|e| e.advantage)
        .fold(f64::NEG_INFINITY, f64::max);
    let mass: f64 = part.entries.iter().map(|e| e.weight).sum();
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    for entry in &part.entries {
        if entry.weight <= 0.0 {
            continue;
        }
        let w = entry.weight / mass;
        let e = ((entry.advantage - m) / beta).exp();
        s0 += w * e;
        s1 += w * entry.advantage * e;
    }
    (m, s0, s1)
}

fn check_args(beta: f64, batch: &AdvantageBatch, spec: &TrustRegionSpec) -> Result<()> {
    spec.validate()?;
    if !beta.is_finite() || beta < spec.beta_min {
        return Err(Error::InvalidArgument(format!(
            "beta must be finite and >= beta_min ({}), got {beta}",
            spec.beta_min
        )));
    }
    batch.validate()
}

fn objective_unchecked(beta: f64, batch: &AdvantageBatch, delta: f64) -> f64 {
    let mut acc = 0.0;
    let mut total_visits = 0.0;
    for group in batch.groups().values() {
        let mut state_term = 0.0;
        for part in &group.parts {
            let (m, s0, _) = part_sums(part, beta);
            state_term += m + beta * s0.ln();
        }
        acc += group.visits * state_term;
        total_visits += group.visits;
    }
    beta * delta + acc / total_visits
}

fn gradient_unchecked(beta: f64, batch: &AdvantageBatch, delta: f64) -> f64 {
    let mut acc = 0.0;
    let mut total_visits = 0.0;
    for group in batch.groups().values() {
        let mut state_term = 0.0;
        for part in &group.parts {
            let (m, s0, s1) = part_sums(part, beta);
            state_term += m / beta + s0.ln() - s1 / (beta * s0);
        }
        acc += group.visits * state_term;
        total_visits += group.visits;
    }
    delta + acc / total_visits
}

/// Dual objective l0(beta) over the batch.
pub fn dual_objective(beta: f64, batch: &AdvantageBatch, spec: &TrustRegionSpec) -> Result<f64> {
    check_args(beta, batch, spec)?;
    Ok(objective_unchecked(beta, batch, spec.delta))
}

/// Analytic gradient of the dual objective, same stabilization as the
/// objective. Equals delta minus the expected KL of the tilted policy.
pub fn dual_gradient(beta: f64, batch: &AdvantageBatch, spec: &TrustRegionSpec) -> Result<f64> {
    check_args(beta, batch, spec)?;
    Ok(gradient_unchecked(beta, batch, spec.delta))
}

struct LocalOutcome {
    x: f64,
    objective: f64,
    grad: f64,
    converged: bool,
    evals: usize,
}

const X_MAX: f64 = 25.0; // e^25 ~ 7e10; gradient -> delta > 0 long before this

/// Local phase: gradient descent with a backtracking line search on
/// x = ln(beta), clamped to [ln(beta_min), X_MAX]. Stops at the gradient
/// tolerance or when pinned at the lower clamp with a nonnegative gradient.
/// Near the minimizer the objective decrease can fall below floating-point
/// resolution while the gradient is still resolvable, so a stalled search
/// finishes with sign bisection on the gradient (the objective is convex, so
/// a sign change brackets the minimizer).
fn local_minimize(
    x_start: f64,
    batch: &AdvantageBatch,
    spec: &TrustRegionSpec,
    max_iters: usize,
) -> LocalOutcome {
    let x_min = spec.beta_min.ln();
    let clampx = |x: f64| x.clamp(x_min, X_MAX);

    let mut evals = 0usize;
    let mut x = clampx(x_start);
    let mut f = {
        evals += 1;
        objective_unchecked(x.exp(), batch, spec.delta)
    };
    let mut step = 0.5;
    let mut grad_beta = 0.0;
    let mut converged = false;
    let mut stalled = false;

    for _ in 0..max_iters {
        let beta = x.exp();
        grad_beta = gradient_unchecked(beta, batch, spec.delta);
        evals += 1;
        if grad_beta.abs() <= spec.local_tol {
            converged = true;
            break;
        }
        if x <= x_min + 1e-12 && grad_beta >= 0.0 {
            // one-sided optimality at the clamp
            converged = true;
            break;
        }
        // descent on x with d l0 / dx = beta * d l0 / d beta
        let grad_x = grad_beta * beta;
        let mut accepted = false;
        while step > 1e-18 {
            let cand_x = clampx(x - step * grad_x);
            if cand_x == x {
                break;
            }
            let cand_f = objective_unchecked(cand_x.exp(), batch, spec.delta);
            evals += 1;
            if cand_f <= f - 1e-4 * grad_x * (x - cand_x) {
                x = cand_x;
                f = cand_f;
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }
    }

    if !converged && stalled {
        let polished = bisect_gradient_sign(x, grad_beta, batch, spec, &mut evals);
        if let Some((px, pg)) = polished {
            x = px;
            grad_beta = pg;
            f = objective_unchecked(x.exp(), batch, spec.delta);
            evals += 1;
            converged =
                grad_beta.abs() <= spec.local_tol || (x <= x_min + 1e-12 && grad_beta >= 0.0);
        }
    }

    LocalOutcome {
        x,
        objective: f,
        grad: grad_beta,
        converged,
        evals,
    }
}

/// Bracket the gradient's sign change around `x` and bisect it to the
/// tolerance. Returns the refined point, or the clamp when the gradient is
/// nonnegative all the way down to it.
fn bisect_gradient_sign(
    x: f64,
    grad_at_x: f64,
    batch: &AdvantageBatch,
    spec: &TrustRegionSpec,
    evals: &mut usize,
) -> Option<(f64, f64)> {
    let x_min = spec.beta_min.ln();
    let grad_of = |x: f64, evals: &mut usize| {
        *evals += 1;
        gradient_unchecked(x.exp(), batch, spec.delta)
    };

    let (mut lo, mut hi) = if grad_at_x > 0.0 {
        // walk down for a negative gradient
        let mut lo = x;
        let mut width = 0.25;
        loop {
            if lo <= x_min + 1e-12 {
                let g = grad_of(x_min, evals);
                if g >= 0.0 {
                    return Some((x_min, g)); // clamped minimizer
                }
                break;
            }
            lo = (lo - width).max(x_min);
            width *= 2.0;
            if grad_of(lo, evals) < 0.0 {
                break;
            }
        }
        (lo, x)
    } else {
        // walk up for a positive gradient; it tends to delta > 0
        let mut hi = x;
        let mut width = 0.25;
        loop {
            if hi >= X_MAX {
                return None;
            }
            hi = (hi + width).min(X_MAX);
            width *= 2.0;
            if grad_of(hi, evals) > 0.0 {
                break;
            }
        }
        (x, hi)
    };

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let g = grad_of(mid, evals);
        if g.abs() <= spec.local_tol || (hi - lo) < 1e-15 {
            return Some((mid, g));
        }
        if g < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = grad_of(0.5 * (lo + hi), evals);
    Some((0.5 * (lo + hi), g))
}

/// Basin hopping over beta > 0: the first descent starts from `beta_init`,
/// later hops perturb the incumbent's log position by uniform noise. The best
/// converged point, clamped to >= beta_min, is returned with diagnostics.
pub fn solve_beta(batch: &AdvantageBatch, spec: &TrustRegionSpec) -> Result<DualSolution> {
    spec.validate()?;
    batch.validate()?;

    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(spec.seed);
    let hop_noise = Uniform::new(-2.0f64, 2.0);

    let mut evals = 0usize;
    let mut best: Option<LocalOutcome> = None;
    let mut hops_run = 0usize;
    for hop in 0..spec.hops {
        let x_start = if hop == 0 {
            spec.beta_init.max(spec.beta_min).ln()
        } else {
            let center = best.as_ref().map(|b| b.x).unwrap_or(spec.beta_init.ln());
            center + rng.sample(hop_noise)
        };
        let outcome = local_minimize(x_start, batch, spec, 200);
        evals += outcome.evals;
        hops_run += 1;
        let better = match &best {
            None => true,
            Some(b) => {
                (outcome.converged && !b.converged)
                    || (outcome.converged == b.converged && outcome.objective < b.objective)
            }
        };
        if better {
            best = Some(outcome);
        }
    }

    let best = best.expect("hops >= 1");
    if !best.converged {
        return Err(Error::DualNoConvergence {
            grad: best.grad,
            beta: best.x.exp(),
        });
    }

    let mut beta_star = best.x.exp().max(spec.beta_min);
    let clamped = beta_star <= spec.beta_min * (1.0 + 1e-9);
    if clamped {
        beta_star = spec.beta_min;
    }
    let objective = best.objective;
    let grad_at_solution = best.grad;
    if !objective.is_finite() || !grad_at_solution.is_finite() {
        return Err(Error::NonFinite {
            context: "dual solution".into(),
        });
    }
    Ok(DualSolution {
        beta_star,
        objective,
        grad_at_solution,
        clamped,
        achieved_kl: spec.delta - grad_at_solution,
        hops_run,
        evaluations: evals,
    })
}
