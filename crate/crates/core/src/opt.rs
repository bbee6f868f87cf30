//! Full-batch minimizers over the flattened trainable vector: Adam with
//! bias correction, and L-BFGS with two-loop recursion and a strong-Wolfe
//! line search. Both are deterministic given the objective.

use std::collections::VecDeque;
use std::fmt;
use std::time::Instant;

use serde::Serialize;

/// 64-bit machine epsilon, the default `ftol`.
pub const MACHINE_EPS: f64 = f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Adam,
    Lbfgs,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Adam => write!(f, "adam"),
            Phase::Lbfgs => write!(f, "lbfgs"),
        }
    }
}

/// One recorded optimizer iteration.
#[derive(Debug, Clone, Serialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub phase: Phase,
    pub loss: f64,
    pub grad_norm: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GradientConverged,
    ProjGradConverged,
    FtolStagnation,
    MaxIterations,
    MaxFunctionEvals,
    LineSearchFailed,
    NonFiniteLoss,
    Completed,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StopReason::GradientConverged => "gradient-converged",
            StopReason::ProjGradConverged => "pgtol-converged",
            StopReason::FtolStagnation => "ftol-stagnation",
            StopReason::MaxIterations => "max-iterations",
            StopReason::MaxFunctionEvals => "max-function-evals",
            StopReason::LineSearchFailed => "line-search-failed",
            StopReason::NonFiniteLoss => "non-finite-loss",
            StopReason::Completed => "completed",
        };
        write!(f, "{s}")
    }
}

/// Learning-rate schedule for the gradient-descent phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// Base rate on the first third of the budget, a tenth on the second,
    /// a hundredth on the last.
    StepwiseThirds,
}

impl LrSchedule {
    fn rate(&self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::StepwiseThirds => {
                let third = (total / 3).max(1);
                match step / third {
                    0 => base,
                    1 => base * 0.1,
                    _ => base * 0.01,
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(steps: usize, learning_rate: f64) -> Self {
        Self {
            steps,
            learning_rate,
            schedule: LrSchedule::Constant,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub theta: Vec<f64>,
    pub final_loss: f64,
    pub history: Vec<HistoryEntry>,
    pub reason: StopReason,
    pub iterations: usize,
    pub fun_evals: usize,
    pub grad_evals: usize,
}

/// Standard Adam with bias correction. On a non-finite loss or gradient the
/// run aborts and returns the last good parameters.
pub fn adam_run(
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    theta0: &[f64],
    cfg: &AdamConfig,
) -> RunOutcome {
    let start = Instant::now();
    let n = theta0.len();
    let mut theta = theta0.to_vec();
    let mut grad = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut history = Vec::with_capacity(cfg.steps);
    let mut fun_evals = 0;
    let mut last_loss = f64::NAN;

    for step in 0..cfg.steps {
        grad.fill(0.0);
        let loss = f(&theta, &mut grad);
        fun_evals += 1;
        let gnorm = norm2(&grad);
        if !loss.is_finite() || !gnorm.is_finite() {
            return RunOutcome {
                theta,
                final_loss: last_loss,
                history,
                reason: StopReason::NonFiniteLoss,
                iterations: step,
                fun_evals,
                grad_evals: fun_evals,
            };
        }
        last_loss = loss;
        history.push(HistoryEntry {
            iteration: step,
            phase: Phase::Adam,
            loss,
            grad_norm: gnorm,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });

        let lr = cfg.schedule.rate(cfg.learning_rate, step, cfg.steps);
        let t = (step + 1) as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    RunOutcome {
        theta,
        final_loss: last_loss,
        history,
        reason: StopReason::Completed,
        iterations: cfg.steps,
        fun_evals,
        grad_evals: fun_evals,
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    pub maxiter: usize,
    pub maxfun: usize,
    pub maxcor: usize,
    pub maxls: usize,
    /// Relative stagnation test: stop when
    /// `(f_k − f_{k+1}) ≤ ftol · max(|f_k|, |f_{k+1}|, 1)`.
    pub ftol: f64,
    /// Euclidean gradient-norm threshold.
    pub gtol: f64,
    /// Max-norm gradient threshold (the reference implementation's default
    /// stopping test); 0 disables it.
    pub pgtol: f64,
    pub c1: f64,
    pub c2: f64,
}

impl LbfgsConfig {
    pub fn new(maxiter: usize) -> Self {
        Self {
            maxiter,
            maxfun: 500_000,
            maxcor: 50,
            maxls: 50,
            ftol: MACHINE_EPS,
            gtol: 1e-10,
            pgtol: 1e-5,
            c1: 1e-4,
            c2: 0.9,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// L-BFGS with two-loop recursion; pairs are stored only under the positive
/// curvature condition `sᵀy > 0`. Function and gradient evaluations share
/// one objective call and are counted identically.
pub fn lbfgs_run(
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    theta0: &[f64],
    cfg: &LbfgsConfig,
) -> RunOutcome {
    let start = Instant::now();
    let n = theta0.len();
    let mut x = theta0.to_vec();
    let mut g = vec![0.0; n];
    let mut fun_evals = 0usize;
    let mut eval = |x: &[f64], g: &mut [f64], count: &mut usize| -> f64 {
        g.fill(0.0);
        *count += 1;
        f(x, g)
    };
    let mut fx = eval(&x, &mut g, &mut fun_evals);
    let mut history = Vec::new();
    let push_entry = |iter: usize, loss: f64, gnorm: f64, history: &mut Vec<HistoryEntry>| {
        history.push(HistoryEntry {
            iteration: iter,
            phase: Phase::Lbfgs,
            loss,
            grad_norm: gnorm,
            elapsed_secs: start.elapsed().as_secs_f64(),
        });
    };
    push_entry(0, fx, norm2(&g), &mut history);

    let finish = |theta: Vec<f64>,
                  final_loss: f64,
                  history: Vec<HistoryEntry>,
                  reason: StopReason,
                  iterations: usize,
                  fun_evals: usize| RunOutcome {
        theta,
        final_loss,
        history,
        reason,
        iterations,
        fun_evals,
        grad_evals: fun_evals,
    };

    if !fx.is_finite() {
        return finish(x, fx, history, StopReason::NonFiniteLoss, 0, fun_evals);
    }
    if norm2(&g) <= cfg.gtol {
        return finish(x, fx, history, StopReason::GradientConverged, 0, fun_evals);
    }
    if cfg.pgtol > 0.0 && g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= cfg.pgtol {
        return finish(x, fx, history, StopReason::ProjGradConverged, 0, fun_evals);
    }

    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new(); // (s, y, ρ)
    let mut alpha_hist = vec![0.0; cfg.maxcor];

    for iter in 1..=cfg.maxiter {
        // Two-loop recursion for d = −H g.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        if !pairs.is_empty() {
            for (i, (s, y, rho)) in pairs.iter().enumerate().rev() {
                let a = rho * dot(s, &d);
                alpha_hist[i] = a;
                for (dj, yj) in d.iter_mut().zip(y) {
                    *dj -= a * yj;
                }
            }
            let (s_last, y_last, _) = pairs.back().unwrap();
            let gamma = dot(s_last, y_last) / dot(y_last, y_last);
            for dj in d.iter_mut() {
                *dj *= gamma;
            }
            for (i, (s, y, rho)) in pairs.iter().enumerate() {
                let b = rho * dot(y, &d);
                let a = alpha_hist[i];
                for (dj, sj) in d.iter_mut().zip(s) {
                    *dj += (a - b) * sj;
                }
            }
        }
        let mut dphi0 = dot(&g, &d);
        if dphi0 >= 0.0 {
            // Stale curvature produced an ascent direction; restart from
            // steepest descent.
            pairs.clear();
            d = g.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
            if dphi0 == 0.0 {
                return finish(x, fx, history, StopReason::GradientConverged, iter - 1, fun_evals);
            }
        }

        let alpha0 = if pairs.is_empty() {
            (1.0 / norm2(&d)).min(1.0)
        } else {
            1.0
        };
        let ls = strong_wolfe(
            |alpha, gbuf, count| {
                let xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                let fv = eval(&xt, gbuf, count);
                (xt, fv)
            },
            fx,
            dphi0,
            &d,
            alpha0,
            cfg,
            &mut fun_evals,
        );
        let (x_new, f_new, g_new) = match ls {
            Some(v) => v,
            None => {
                return finish(x, fx, history, StopReason::LineSearchFailed, iter - 1, fun_evals)
            }
        };
        if !f_new.is_finite() {
            return finish(x, fx, history, StopReason::NonFiniteLoss, iter - 1, fun_evals);
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm2(&s) * norm2(&y) {
            if pairs.len() == cfg.maxcor {
                pairs.pop_front();
            }
            let rho = 1.0 / sy;
            pairs.push_back((s, y, rho));
        }

        let f_prev = fx;
        x = x_new;
        fx = f_new;
        g = g_new;
        let gnorm = norm2(&g);
        push_entry(iter, fx, gnorm, &mut history);

        if gnorm <= cfg.gtol {
            return finish(x, fx, history, StopReason::GradientConverged, iter, fun_evals);
        }
        if cfg.pgtol > 0.0 {
            let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if gmax <= cfg.pgtol {
                return finish(x, fx, history, StopReason::ProjGradConverged, iter, fun_evals);
            }
        }
        if (f_prev - fx) <= cfg.ftol * f_prev.abs().max(fx.abs()).max(1.0) {
            return finish(x, fx, history, StopReason::FtolStagnation, iter, fun_evals);
        }
        if fun_evals >= cfg.maxfun {
            return finish(x, fx, history, StopReason::MaxFunctionEvals, iter, fun_evals);
        }
    }
    let iterations = cfg.maxiter;
    finish(x, fx, history, StopReason::MaxIterations, iterations, fun_evals)
}

/// Strong-Wolfe line search (bracket + zoom with cubic interpolation).
/// Evaluations are capped at `maxls`; if the cap is reached, the best
/// Armijo-satisfying trial is accepted, otherwise the search fails.
#[allow(clippy::too_many_arguments)]
fn strong_wolfe(
    mut phi: impl FnMut(f64, &mut Vec<f64>, &mut usize) -> (Vec<f64>, f64),
    f0: f64,
    dphi0: f64,
    d: &[f64],
    alpha0: f64,
    cfg: &LbfgsConfig,
    fun_evals: &mut usize,
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    debug_assert!(dphi0 < 0.0);
    let armijo = |alpha: f64, f: f64| f <= f0 + cfg.c1 * alpha * dphi0;
    let mut gbuf = vec![0.0; d.len()];
    let mut evals = 0usize;
    // Best Armijo point seen, as a graceful fallback.
    let mut best: Option<(f64, Vec<f64>, f64, Vec<f64>)> = None;

    let mut eval_at = |alpha: f64,
                       gbuf: &mut Vec<f64>,
                       evals: &mut usize,
                       best: &mut Option<(f64, Vec<f64>, f64, Vec<f64>)>|
     -> (Vec<f64>, f64, f64) {
        let (xt, fv) = phi(alpha, gbuf, fun_evals);
        *evals += 1;
        let dphi = dot(gbuf, d);
        if armijo(alpha, fv) && best.as_ref().map_or(true, |(_, _, bf, _)| fv < *bf) {
            *best = Some((alpha, xt.clone(), fv, gbuf.clone()));
        }
        (xt, fv, dphi)
    };

    let wolfe = |dphi: f64| dphi.abs() <= cfg.c2 * (-dphi0);

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut dphi_prev = dphi0;
    let mut alpha = alpha0.max(1e-20);
    let mut bracket: Option<(f64, f64, f64, f64, f64, f64)> = None; // lo: (a, f, dphi), hi: (a, f, dphi)

    for i in 0..cfg.maxls {
        let (xt, fv, dphi) = eval_at(alpha, &mut gbuf, &mut evals, &mut best);
        if !fv.is_finite() {
            // Step overshot into a non-finite region; shrink.
            alpha *= 0.5;
            continue;
        }
        if !armijo(alpha, fv) || (i > 0 && fv >= f_prev) {
            bracket = Some((alpha_prev, f_prev, dphi_prev, alpha, fv, dphi));
            break;
        }
        if wolfe(dphi) {
            return Some((xt, fv, gbuf));
        }
        if dphi >= 0.0 {
            bracket = Some((alpha, fv, dphi, alpha_prev, f_prev, dphi_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = fv;
        dphi_prev = dphi;
        alpha = (2.0 * alpha).min(1e12);
    }

    let (mut a_lo, mut f_lo, mut d_lo, mut a_hi, mut f_hi, mut d_hi) = bracket?;

    while evals < cfg.maxls {
        let a_j = cubic_min(a_lo, f_lo, d_lo, a_hi, f_hi, d_hi);
        let (xt, fv, dphi) = eval_at(a_j, &mut gbuf, &mut evals, &mut best);
        if !fv.is_finite() {
            a_hi = a_j;
            f_hi = f64::INFINITY;
            d_hi = 0.0;
            continue;
        }
        if !armijo(a_j, fv) || fv >= f_lo {
            a_hi = a_j;
            f_hi = fv;
            d_hi = dphi;
        } else {
            if wolfe(dphi) {
                return Some((xt, fv, gbuf));
            }
            if dphi * (a_hi - a_lo) >= 0.0 {
                a_hi = a_lo;
                f_hi = f_lo;
                d_hi = d_lo;
            }
            a_lo = a_j;
            f_lo = fv;
            d_lo = dphi;
        }
        if (a_hi - a_lo).abs() <= 1e-16 * a_lo.abs().max(1.0) {
            break;
        }
    }
    best.map(|(_, xt, fv, gb)| (xt, fv, gb))
}

/// Minimizer of the cubic Hermite interpolant; falls back to bisection when
/// the interpolation is degenerate or leaves a safeguard band.
fn cubic_min(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let mid = 0.5 * (a + b);
    if !fa.is_finite() || !fb.is_finite() {
        return mid;
    }
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if disc < 0.0 {
        return mid;
    }
    let d2 = disc.sqrt() * (b - a).signum();
    let denom = db - da + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let cand = b - (b - a) * (db + d2 - d1) / denom;
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let width = hi - lo;
    // Keep candidates a safe distance from the bracket ends.
    let (safe_lo, safe_hi) = (lo + 0.05 * width, hi - 0.05 * width);
    if !cand.is_finite() || cand < safe_lo || cand > safe_hi {
        mid
    } else {
        cand
    }
}
