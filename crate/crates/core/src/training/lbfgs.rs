//! Limited-memory BFGS with a strong-Wolfe line search (bracketing phase plus
//! cubic-interpolation zoom).

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub history: usize,
    pub max_iterations: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_evals: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 10,
            max_iterations: 200,
            c1: 1e-4,
            c2: 0.9,
            max_line_evals: 25,
            grad_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    Converged,
    /// No acceptable step even after restarting from steepest descent.
    LineSearchFailed,
}

/// One accepted optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub loss: f64,
    pub initial_loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub history: Vec<IterationRecord>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], t: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + t * b).collect()
}

/// Minimizer of the cubic matching values and slopes at two points, clamped to `[lo, hi]`.
#[allow(clippy::too_many_arguments)]
fn cubic_min(x1: f64, f1: f64, g1: f64, x2: f64, f2: f64, g2: f64, lo: f64, hi: f64) -> f64 {
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2);
    let disc = d1 * d1 - g1 * g2;
    if disc >= 0.0 && disc.is_finite() {
        let d2 = disc.sqrt() * (x2 - x1).signum();
        let t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2));
        if t.is_finite() {
            return t.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

struct Point {
    t: f64,
    f: f64,
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

enum LineResult {
    /// Strong-Wolfe step.
    Wolfe(Point),
    /// Sufficient decrease only; curvature condition never met.
    Decrease(Point),
    Failed,
}

struct Search<'a, F> {
    objective: &'a mut F,
    x0: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    d0: f64,
    c1: f64,
    c2: f64,
    evals: usize,
    max_evals: usize,
}

impl<F> Search<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn eval(&mut self, t: f64) -> Result<Point> {
        self.evals += 1;
        let x = axpy(self.x0, t, self.dir);
        let (f, g) = (self.objective)(&x)?;
        let (f, d) = if f.is_finite() && g.iter().all(|v| v.is_finite()) {
            (f, dot(&g, self.dir))
        } else {
            (f64::INFINITY, f64::NAN)
        };
        Ok(Point { t, f, d, x, g })
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f <= self.f0 + self.c1 * p.t * self.d0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.d.abs() <= -self.c2 * self.d0
    }

    fn run(&mut self, t_init: f64) -> Result<LineResult> {
        let mut prev = Point {
            t: 0.0,
            f: self.f0,
            d: self.d0,
            x: self.x0.to_vec(),
            g: Vec::new(),
        };
        let mut t = t_init;
        let mut first = true;
        while self.evals < self.max_evals {
            let cur = self.eval(t)?;
            if !self.armijo(&cur) || (!first && cur.f >= prev.f) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Ok(LineResult::Wolfe(cur));
            }
            if cur.d >= 0.0 {
                return self.zoom(cur, prev);
            }
            first = false;
            t = cur.t * 4.0;
            prev = cur;
        }
        Ok(if prev.t > 0.0 {
            LineResult::Decrease(prev)
        } else {
            LineResult::Failed
        })
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Result<LineResult> {
        while self.evals < self.max_evals {
            let (a, b) = (lo.t.min(hi.t), lo.t.max(hi.t));
            let width = b - a;
            if width <= 1e-14 * b.max(1e-300) {
                break;
            }
            let t = if hi.f.is_finite() && hi.d.is_finite() {
                cubic_min(
                    lo.t,
                    lo.f,
                    lo.d,
                    hi.t,
                    hi.f,
                    hi.d,
                    a + 0.1 * width,
                    b - 0.1 * width,
                )
            } else {
                0.5 * (a + b)
            };
            let cur = self.eval(t)?;
            if !self.armijo(&cur) || cur.f >= lo.f {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Ok(LineResult::Wolfe(cur));
                }
                if cur.d * (hi.t - lo.t) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
        Ok(if lo.t > 0.0 {
            LineResult::Decrease(lo)
        } else {
            LineResult::Failed
        })
    }
}

/// Minimizes `objective` from `x0`, returning the best iterate seen.
///
/// `on_iteration` is called after every accepted step.
pub fn minimize<F, C>(
    mut objective: F,
    x0: Vec<f64>,
    config: &LbfgsConfig,
    mut on_iteration: C,
) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    C: FnMut(&IterationRecord),
{
    let (mut f, mut g) = objective(&x0)?;
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "objective at the starting point is {f}"
        )));
    }
    let mut x = x0;
    let initial_loss = f;
    let mut evaluations = 1;
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut history = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    while iterations < config.max_iterations {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < config.grad_tol {
            termination = Termination::Converged;
            break;
        }
        // Two-loop recursion.
        let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            let scale = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir = q;
        let mut d0 = dot(&g, &dir);
        if d0.is_nan() || d0 >= 0.0 {
            memory.clear();
            dir = g.iter().map(|v| -v).collect();
            d0 = dot(&g, &dir);
        }
        let t_init = if memory.is_empty() {
            (1.0 / norm(&g)).min(1.0)
        } else {
            1.0
        };

        let mut search = Search {
            objective: &mut objective,
            x0: &x,
            dir: &dir,
            f0: f,
            d0,
            c1: config.c1,
            c2: config.c2,
            evals: 0,
            max_evals: config.max_line_evals,
        };
        let result = search.run(t_init)?;
        let used = search.evals;
        evaluations += used;

        let (point, curvature_ok) = match result {
            LineResult::Wolfe(p) => (p, true),
            LineResult::Decrease(p) => (p, false),
            LineResult::Failed => {
                if memory.is_empty() {
                    termination = Termination::LineSearchFailed;
                    break;
                }
                log::warn!("line search failed; restarting from steepest descent");
                memory.clear();
                continue;
            }
        };

        let s: Vec<f64> = point.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = point.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if curvature_ok && sy > 1e-12 * norm(&s) * norm(&y) {
            if memory.len() == config.history {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = point.x;
        f = point.f;
        g = point.g;
        iterations += 1;
        let record = IterationRecord {
            iteration: iterations,
            loss: f,
            grad_norm: norm(&g),
            step: point.t,
            evaluations: used,
        };
        on_iteration(&record);
        history.push(record);
    }

    Ok(LbfgsReport {
        x,
        loss: f,
        initial_loss,
        iterations,
        evaluations,
        termination,
        history,
    })
}
