//! Limited-memory BFGS with a strong Wolfe line search, restricted to a
//! mask of free coordinates.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    ConvergedGrad,
    ConvergedStep,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    /// Stop when the largest free gradient component falls below this.
    pub grad_tolerance: f64,
    /// Stop when the largest step component falls below
    /// `param_tolerance * (1 + |x|_inf)`.
    pub param_tolerance: f64,
    pub history: usize,
    /// Largest coordinate change of the very first trial step.
    pub initial_step: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            grad_tolerance: 1e-9,
            param_tolerance: 1e-12,
            history: 10,
            initial_step: 0.05,
            max_line_search: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

/// Returned when the starting point already has a non-finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct NonFiniteStart {
    pub value: f64,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Problem<'a, F> {
    f: F,
    mask: &'a [bool],
    evaluations: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Problem<'_, F> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x, g);
        for (gi, &free) in g.iter_mut().zip(self.mask) {
            if !free {
                *gi = 0.0;
            }
        }
        if v.is_finite() && g.iter().all(|v| v.is_finite()) {
            v
        } else {
            f64::INFINITY
        }
    }
}

struct Trial {
    alpha: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

fn trial<F: FnMut(&[f64], &mut [f64]) -> f64>(
    p: &mut Problem<'_, F>,
    x0: &[f64],
    d: &[f64],
    alpha: f64,
) -> Trial {
    let x: Vec<f64> = x0.iter().zip(d).map(|(a, b)| a + alpha * b).collect();
    let mut g = vec![0.0; x.len()];
    let value = p.eval(&x, &mut g);
    let slope = if value.is_finite() { dot(&g, d) } else { f64::NAN };
    Trial { alpha, value, slope, x, g }
}

/// Minimizer of the cubic interpolating two points with slopes, safeguarded
/// to the interior of the bracket.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let (lo_edge, hi_edge) = (a.min(b), a.max(b));
    let width = hi_edge - lo_edge;
    let bisect = 0.5 * (a + b);
    if !hi.value.is_finite() || !hi.slope.is_finite() {
        return bisect;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    if t.is_finite() && t > lo_edge + 0.1 * width && t < hi_edge - 0.1 * width {
        t
    } else {
        bisect
    }
}

/// Strong Wolfe line search. Falls back to the best Armijo point when the
/// curvature condition cannot be met within the evaluation budget.
fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    p: &mut Problem<'_, F>,
    x0: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    alpha0: f64,
    budget: usize,
) -> Option<Trial> {
    let slope0 = dot(g0, d);
    let start = Trial {
        alpha: 0.0,
        value: f0,
        slope: slope0,
        x: x0.to_vec(),
        g: g0.to_vec(),
    };
    let armijo = |t: &Trial| t.value <= f0 + C1 * t.alpha * slope0;
    let wolfe = |t: &Trial| t.slope.abs() <= -C2 * slope0;
    let mut best: Option<Trial> = None;
    let keep_best = |t: &Trial, best: &mut Option<Trial>| {
        if armijo(t) && t.value < f0 && best.as_ref().map_or(true, |b| t.value < b.value) {
            *best = Some(Trial {
                alpha: t.alpha,
                value: t.value,
                slope: t.slope,
                x: t.x.clone(),
                g: t.g.clone(),
            });
        }
    };

    let mut prev = start;
    let mut alpha = alpha0;
    let mut used = 0;
    let (mut lo, mut hi);
    loop {
        if used >= budget {
            return best;
        }
        let t = trial(p, x0, d, alpha);
        used += 1;
        keep_best(&t, &mut best);
        if !armijo(&t) || (used > 1 && t.value >= prev.value) {
            lo = prev;
            hi = t;
            break;
        }
        if wolfe(&t) {
            return Some(t);
        }
        if t.slope >= 0.0 {
            lo = t;
            hi = prev;
            break;
        }
        alpha = t.alpha * 2.0;
        prev = t;
    }

    while used < budget {
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1e-300) {
            break;
        }
        let a = interpolate(&lo, &hi);
        let t = trial(p, x0, d, a);
        used += 1;
        keep_best(&t, &mut best);
        if !armijo(&t) || t.value >= lo.value {
            hi = t;
        } else {
            if wolfe(&t) {
                return Some(t);
            }
            if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
    }
    best
}

/// Minimizes `f` over the coordinates where `mask` is true. `f` writes the
/// gradient into its second argument and returns the value; non-finite
/// values at trial points are rejected by the line search. `project` is
/// applied after each accepted step and returns true when it changed `x`,
/// which resets the curvature memory.
pub fn minimize<F, P>(
    f: F,
    x0: Vec<f64>,
    mask: &[bool],
    options: &LbfgsOptions,
    mut project: P,
) -> Result<LbfgsReport, NonFiniteStart>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    P: FnMut(&mut [f64]) -> bool,
{
    let n = x0.len();
    assert_eq!(mask.len(), n, "mask length");
    let mut p = Problem {
        f,
        mask,
        evaluations: 0,
    };
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut value = p.eval(&x, &mut g);
    if !value.is_finite() {
        let mut g = vec![0.0; n];
        return Err(NonFiniteStart {
            value: (p.f)(&x, &mut g),
        });
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let report = |x, value, iterations, evaluations, termination| LbfgsReport {
        x,
        value,
        iterations,
        evaluations,
        termination,
    };
    if options.max_iterations == 0 {
        return Ok(report(x, value, 0, p.evaluations, Termination::MaxIter));
    }
    if inf_norm(&g) < options.grad_tolerance {
        return Ok(report(x, value, 0, p.evaluations, Termination::ConvergedGrad));
    }

    loop {
        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        for (di, &free) in d.iter_mut().zip(mask) {
            if !free {
                *di = 0.0;
            }
        }
        let mut steepest = memory.is_empty();
        if dot(&d, &g) >= 0.0 {
            memory.clear();
            steepest = true;
            d = g.iter().map(|v| -v).collect();
        }
        let alpha0 = if steepest {
            (options.initial_step / inf_norm(&d)).min(1.0)
        } else {
            1.0
        };

        let mut found = line_search(&mut p, &x, value, &g, &d, alpha0, options.max_line_search);
        if found.is_none() && !steepest {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            let alpha0 = (options.initial_step / inf_norm(&d)).min(1.0);
            found = line_search(&mut p, &x, value, &g, &d, alpha0, options.max_line_search);
        }
        let Some(t) = found else {
            return Ok(report(x, value, iterations, p.evaluations, Termination::ConvergedStep));
        };
        iterations += 1;

        let s: Vec<f64> = t.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step = inf_norm(&s);
        x = t.x;
        g = t.g;
        value = t.value;
        if project(&mut x) {
            value = p.eval(&x, &mut g);
            memory.clear();
            if !value.is_finite() {
                let mut g = vec![0.0; n];
                return Err(NonFiniteStart {
                    value: (p.f)(&x, &mut g),
                });
            }
        } else {
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                if memory.len() == options.history.max(1) {
                    memory.pop_front();
                }
                memory.push_back((s, y, 1.0 / sy));
            }
        }

        if inf_norm(&g) < options.grad_tolerance {
            return Ok(report(x, value, iterations, p.evaluations, Termination::ConvergedGrad));
        }
        if step < options.param_tolerance * (1.0 + inf_norm(&x)) {
            return Ok(report(x, value, iterations, p.evaluations, Termination::ConvergedStep));
        }
        if iterations >= options.max_iterations {
            return Ok(report(x, value, iterations, p.evaluations, Termination::MaxIter));
        }
    }
}
