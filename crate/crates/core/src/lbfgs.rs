//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Two-loop recursion for the search direction, bracketing/zoom line search
//! with safeguarded cubic interpolation. Iterates are only accepted when the
//! sufficient-decrease condition holds, so the objective never increases.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// A differentiable objective. `evaluate` writes the gradient into `grad`
/// and returns the value.
pub trait Objective {
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Objective for F
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    fn evaluate(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self(x, grad)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_iterations: usize,
    pub history: usize,
    /// Stop once the gradient 2-norm falls to this value.
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search_evals: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            history: 10,
            gradient_tolerance: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_evals: 25,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.history == 0 || self.max_line_search_evals == 0 {
            return Err("history and max_line_search_evals must be positive".into());
        }
        if !(self.gradient_tolerance >= 0.0) {
            return Err("gradient_tolerance must be >= 0".into());
        }
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err("line search needs 0 < c1 < c2 < 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    MaxIterations,
    /// No acceptable step was found; the best iterate is returned.
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn direction(grad: &[f64], history: &VecDeque<Pair>) -> Vec<f64> {
    let mut q: Vec<f64> = grad.iter().map(|g| -g).collect();
    let mut alpha = vec![0.0; history.len()];
    for (k, p) in history.iter().enumerate().rev() {
        alpha[k] = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= alpha[k] * yi;
        }
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, p) in history.iter().enumerate() {
        let beta = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (alpha[k] - beta) * si;
        }
    }
    q
}

struct Point {
    step: f64,
    value: f64,
    slope: f64,
}

struct LineSearch<'a, O: ?Sized> {
    objective: &'a O,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    g0: f64,
    c1: f64,
    c2: f64,
    budget: usize,
    evals: usize,
    trial: Vec<f64>,
    grad: Vec<f64>,
}

impl<O: Objective + ?Sized> LineSearch<'_, O> {
    fn eval(&mut self, step: f64) -> Point {
        self.evals += 1;
        for ((t, x), d) in self.trial.iter_mut().zip(self.x).zip(self.dir) {
            *t = x + step * d;
        }
        let value = self.objective.evaluate(&self.trial, &mut self.grad);
        Point {
            step,
            value,
            slope: dot(&self.grad, self.dir),
        }
    }

    fn armijo(&self, p: &Point) -> bool {
        p.value.is_finite() && p.value <= self.f0 + self.c1 * p.step * self.g0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.slope.abs() <= -self.c2 * self.g0
    }

    /// Returns the accepted point with `trial`/`grad` holding its state.
    fn run(&mut self, initial_step: f64) -> Option<Point> {
        let mut prev = Point {
            step: 0.0,
            value: self.f0,
            slope: self.g0,
        };
        let mut step = initial_step;
        let mut first = true;
        while self.evals < self.budget {
            let cur = self.eval(step);
            if !self.armijo(&cur) || (!first && cur.value >= prev.value) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.slope >= 0.0 {
                return self.zoom(cur, prev);
            }
            first = false;
            prev = cur;
            step *= 2.0;
        }
        None
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Option<Point> {
        while self.evals < self.budget {
            let step = interpolate(&lo, &hi);
            let cur = self.eval(step);
            if !self.armijo(&cur) || cur.value >= lo.value {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if cur.slope * (hi.step - lo.step) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
            if (hi.step - lo.step).abs() < 1e-14 * lo.step.abs().max(1.0) {
                break;
            }
        }
        // Fall back to the best point satisfying sufficient decrease.
        if lo.step > 0.0 && self.armijo(&lo) {
            return Some(self.eval(lo.step));
        }
        None
    }
}

// Minimizer of the cubic through (lo, hi), safeguarded to the inner 80% of the bracket.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.step, hi.step);
    let d1 = lo.slope + hi.slope - 3.0 * (lo.value - hi.value) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    let mid = 0.5 * (a + b);
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let t = b - (b - a) * (hi.slope + d2 - d1) / denom;
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let margin = 0.1 * (right - left);
    if t.is_finite() && t > left + margin && t < right - margin {
        t
    } else {
        mid
    }
}

pub fn minimize<O: Objective + ?Sized>(
    objective: &O,
    x0: &[f64],
    settings: &SolverSettings,
) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; n];
    let mut value = objective.evaluate(&x, &mut grad);
    let initial_value = value;
    let mut evaluations = 1;
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(settings.history);
    let mut iterations = 0;

    let termination = loop {
        let gnorm = norm(&grad);
        if !(gnorm > settings.gradient_tolerance) {
            break Termination::GradientTolerance;
        }
        if iterations >= settings.max_iterations {
            break Termination::MaxIterations;
        }
        let mut dir = direction(&grad, &history);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            // Curvature information went stale; restart from steepest descent.
            history.clear();
            dir = grad.iter().map(|g| -g).collect();
            slope = -gnorm * gnorm;
        }
        let initial_step = if history.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };
        let mut ls = LineSearch {
            objective,
            x: &x,
            dir: &dir,
            f0: value,
            g0: slope,
            c1: settings.c1,
            c2: settings.c2,
            budget: settings.max_line_search_evals,
            evals: 0,
            trial: vec![0.0; n],
            grad: vec![0.0; n],
        };
        let accepted = ls.run(initial_step);
        evaluations += ls.evals;
        let Some(point) = accepted else {
            if history.is_empty() {
                break Termination::LineSearchFailure;
            }
            history.clear();
            continue;
        };
        let (x_new, g_new) = (ls.trial, ls.grad);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == settings.history {
                history.pop_front();
            }
            history.push_back(Pair {
                s,
                y,
                rho: 1.0 / sy,
            });
        }
        x = x_new;
        grad = g_new;
        value = point.value;
        iterations += 1;
    };

    Minimum {
        x,
        value,
        initial_value,
        iterations,
        evaluations,
        termination,
    }
}
