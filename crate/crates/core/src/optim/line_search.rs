//! Strong Wolfe line search with cubic interpolation (bracketing, then zoom).

use crate::error::{GrapeError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WolfeParams {
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Objective evaluations allowed per search.
    pub max_evals: usize,
    /// Largest step ever tried.
    pub alpha_max: f64,
}

impl Default for WolfeParams {
    fn default() -> Self {
        WolfeParams {
            c1: 1e-4,
            c2: 0.9,
            max_evals: 20,
            alpha_max: 1e12,
        }
    }
}

impl WolfeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(GrapeError::invalid("wolfe", "need 0 < c1 < c2 < 1"));
        }
        if self.max_evals == 0 {
            return Err(GrapeError::invalid("max_line_evals", "must be at least 1"));
        }
        if !(self.alpha_max > 0.0) {
            return Err(GrapeError::invalid("alpha_max", "must be positive"));
        }
        Ok(())
    }
}

/// One evaluated trial point: `φ(α)`, `φ'(α)` and whatever the objective
/// wants to hand back with them.
#[derive(Debug, Clone)]
pub struct LinePoint<T> {
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
    pub data: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineStatus {
    /// The returned point satisfies the strong Wolfe conditions.
    Wolfe,
    /// No Wolfe point was found; the best decreasing point seen is returned.
    BestSeen,
    /// No trial point decreased the objective.
    NoDecrease,
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome<T> {
    pub point: Option<LinePoint<T>>,
    pub evaluations: usize,
    pub status: LineStatus,
}

#[derive(Clone, Copy)]
struct Knot {
    alpha: f64,
    phi: f64,
    dphi: f64,
}

impl<T> From<&LinePoint<T>> for Knot {
    fn from(p: &LinePoint<T>) -> Self {
        Knot {
            alpha: p.alpha,
            phi: p.phi,
            dphi: p.dphi,
        }
    }
}

/// Minimizer of the cubic matching values and slopes at `a` and `b`.
pub fn cubic_minimizer(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> Option<f64> {
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = db - da + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let t = b - (b - a) * (db + d2 - d1) / denom;
    t.is_finite().then_some(t)
}

struct Search<'a, T, F> {
    params: &'a WolfeParams,
    phi0: f64,
    dphi0: f64,
    eval: F,
    evaluations: usize,
    best: Option<LinePoint<T>>,
}

impl<T: Clone, F: FnMut(f64) -> Result<LinePoint<T>>> Search<'_, T, F> {
    fn probe(&mut self, alpha: f64) -> Result<LinePoint<T>> {
        let p = (self.eval)(alpha)?;
        self.evaluations += 1;
        if p.phi.is_finite() && p.phi < self.best.as_ref().map_or(self.phi0, |b| b.phi) {
            self.best = Some(p.clone());
        }
        Ok(p)
    }

    fn armijo_fails(&self, p: &Knot) -> bool {
        !(p.phi <= self.phi0 + self.params.c1 * p.alpha * self.dphi0)
    }

    fn curvature_holds(&self, p: &Knot) -> bool {
        p.dphi.abs() <= -self.params.c2 * self.dphi0
    }

    fn fallback(self) -> LineSearchOutcome<T> {
        let status = if self.best.is_some() {
            LineStatus::BestSeen
        } else {
            LineStatus::NoDecrease
        };
        LineSearchOutcome {
            point: self.best,
            evaluations: self.evaluations,
            status,
        }
    }

    fn done(self, p: LinePoint<T>) -> LineSearchOutcome<T> {
        LineSearchOutcome {
            point: Some(p),
            evaluations: self.evaluations,
            status: LineStatus::Wolfe,
        }
    }

    fn zoom(mut self, mut lo: Knot, mut hi: Knot) -> Result<LineSearchOutcome<T>> {
        loop {
            if self.evaluations >= self.params.max_evals {
                return Ok(self.fallback());
            }
            let (left, right) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = right - left;
            if !(width > f64::EPSILON * right.max(1e-300)) {
                return Ok(self.fallback());
            }
            let margin = 0.01 * width;
            let alpha = match cubic_minimizer(lo.alpha, lo.phi, lo.dphi, hi.alpha, hi.phi, hi.dphi) {
                Some(t) if t > left + margin && t < right - margin => t,
                _ => 0.5 * (left + right),
            };
            let p = self.probe(alpha)?;
            let k = Knot::from(&p);
            if self.armijo_fails(&k) || k.phi >= lo.phi {
                hi = k;
            } else {
                if self.curvature_holds(&k) {
                    return Ok(self.done(p));
                }
                if k.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = k;
            }
        }
    }
}

/// Searches along a descent direction for a step satisfying
/// `φ(α) ≤ φ(0) + c1 α φ'(0)` and `|φ'(α)| ≤ c2 |φ'(0)|`.
///
/// `phi0` and `dphi0 < 0` describe the start; `eval(α)` returns the trial
/// point. On budget exhaustion the lowest point seen is returned with
/// [`LineStatus::BestSeen`].
pub fn line_search<T, F>(phi0: f64, dphi0: f64, alpha0: f64, params: &WolfeParams, eval: F) -> Result<LineSearchOutcome<T>>
where
    T: Clone,
    F: FnMut(f64) -> Result<LinePoint<T>>,
{
    params.validate()?;
    if !(dphi0 < 0.0) {
        return Err(GrapeError::invalid("direction", "not a descent direction"));
    }
    if !(alpha0 > 0.0 && alpha0.is_finite()) {
        return Err(GrapeError::invalid("alpha0", "must be positive and finite"));
    }
    let mut search = Search {
        params,
        phi0,
        dphi0,
        eval,
        evaluations: 0,
        best: None,
    };
    let mut prev = Knot {
        alpha: 0.0,
        phi: phi0,
        dphi: dphi0,
    };
    let mut alpha = alpha0.min(params.alpha_max);
    loop {
        if search.evaluations >= params.max_evals {
            return Ok(search.fallback());
        }
        let p = search.probe(alpha)?;
        let k = Knot::from(&p);
        if search.armijo_fails(&k) || (search.evaluations > 1 && k.phi >= prev.phi) {
            return search.zoom(prev, k);
        }
        if search.curvature_holds(&k) {
            return Ok(search.done(p));
        }
        if k.dphi >= 0.0 {
            return search.zoom(k, prev);
        }
        if alpha >= params.alpha_max {
            return Ok(search.fallback());
        }
        let lo = 2.0 * alpha;
        let hi = (10.0 * alpha).min(params.alpha_max);
        let next = cubic_minimizer(prev.alpha, prev.phi, prev.dphi, k.alpha, k.phi, k.dphi)
            .filter(|t| *t > alpha)
            .unwrap_or(hi);
        prev = k;
        alpha = next.clamp(lo.min(hi), hi);
    }
}
