//! Exact piecewise-constant rate functions and piecewise-linear cumulative
//! functions with rational breakpoints.
//!
//! `StepFn` is right-continuous: the i-th value holds from the i-th cut up
//! to (excluding) the next one, and the function is 0 before the first cut
//! and from the last cut on. `PwlFn`
//! is continuous piecewise linear, extended beyond its last point with a
//! fixed `final_slope` (0 for cumulative flows, 1 for exit-time functions).

use crate::rational::Rational;
use num_traits::{Signed, Zero};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PwlError {
    #[error("pieces must be sorted, disjoint and nonempty: {0}")]
    BadPieces(String),
    #[error("target {0} is never reached by this function")]
    TargetUnreachable(String),
    #[error("functions with different final slopes have no finite sup distance")]
    DivergingTails,
}

/// Right-continuous step function with bounded support.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepFn {
    cuts: Vec<Rational>,
    vals: Vec<Rational>,
}

impl StepFn {
    pub fn zero() -> Self {
        StepFn::default()
    }

    /// Builds from (start, end, value) pieces; pieces must be sorted by start
    /// and pairwise disjoint. Gaps are filled with value 0.
    pub fn from_pieces(pieces: &[(Rational, Rational, Rational)]) -> Result<Self, PwlError> {
        let mut cuts = Vec::new();
        let mut vals = Vec::new();
        let mut prev_end: Option<Rational> = None;
        for (start, end, val) in pieces {
            if start >= end {
                return Err(PwlError::BadPieces(format!("empty piece at {}", start)));
            }
            if let Some(pe) = &prev_end {
                if start < pe {
                    return Err(PwlError::BadPieces(format!("overlap at {}", start)));
                }
                if start > pe {
                    cuts.push(pe.clone());
                    vals.push(Rational::zero());
                }
            }
            cuts.push(start.clone());
            vals.push(val.clone());
            prev_end = Some(end.clone());
        }
        if let Some(pe) = prev_end {
            cuts.push(pe);
        }
        let mut f = StepFn { cuts, vals };
        f.canonicalize();
        Ok(f)
    }

    fn canonicalize(&mut self) {
        // merge adjacent equal values
        let mut cuts = Vec::with_capacity(self.cuts.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for i in 0..self.vals.len() {
            if vals.last() == Some(&self.vals[i]) {
                continue;
            }
            cuts.push(self.cuts[i].clone());
            vals.push(self.vals[i].clone());
        }
        if !self.cuts.is_empty() {
            cuts.push(self.cuts.last().unwrap().clone());
        }
        // trim zero head and tail
        while !vals.is_empty() && vals[0].is_zero() {
            vals.remove(0);
            cuts.remove(0);
        }
        while !vals.is_empty() && vals.last().unwrap().is_zero() {
            vals.pop();
            cuts.pop();
        }
        if vals.is_empty() {
            cuts.clear();
        }
        self.cuts = cuts;
        self.vals = vals;
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn eval(&self, x: &Rational) -> Rational {
        if self.cuts.is_empty() || x < &self.cuts[0] || x >= self.cuts.last().unwrap() {
            return Rational::zero();
        }
        let idx = match self.cuts.binary_search(x) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        self.vals[idx].clone()
    }

    /// Last time after which the function is identically 0.
    pub fn support_end(&self) -> Rational {
        self.cuts.last().cloned().unwrap_or_else(Rational::zero)
    }

    pub fn mass(&self) -> Rational {
        let mut m = Rational::zero();
        for i in 0..self.vals.len() {
            m += &self.vals[i] * (&self.cuts[i + 1] - &self.cuts[i]);
        }
        m
    }

    pub fn scale(&self, c: &Rational) -> StepFn {
        if c.is_zero() {
            return StepFn::zero();
        }
        let mut f = StepFn {
            cuts: self.cuts.clone(),
            vals: self.vals.iter().map(|v| v * c).collect(),
        };
        f.canonicalize();
        f
    }

    /// x ↦ f(x − delta), delta ≥ 0.
    pub fn shift_right(&self, delta: &Rational) -> StepFn {
        StepFn {
            cuts: self.cuts.iter().map(|c| c + delta).collect(),
            vals: self.vals.clone(),
        }
    }

    /// Keeps values on [a, b), zero elsewhere.
    pub fn restrict(&self, a: &Rational, b: &Rational) -> StepFn {
        if a >= b || self.is_zero() {
            return StepFn::zero();
        }
        let mut pieces = Vec::new();
        for (s, e, v) in self.iter_pieces() {
            let lo = if &s > a { s } else { a.clone() };
            let hi = if &e < b { e } else { b.clone() };
            if lo < hi && !v.is_zero() {
                pieces.push((lo, hi, v));
            }
        }
        StepFn::from_pieces(&pieces).expect("restriction preserves order")
    }

    /// Explicit (start, end, value) pieces including interior zeros.
    pub fn iter_pieces(&self) -> impl Iterator<Item = (Rational, Rational, Rational)> + '_ {
        (0..self.vals.len()).map(|i| {
            (
                self.cuts[i].clone(),
                self.cuts[i + 1].clone(),
                self.vals[i].clone(),
            )
        })
    }

    pub fn cut_points(&self) -> &[Rational] {
        &self.cuts
    }

    fn zip_with(&self, other: &StepFn, op: impl Fn(&Rational, &Rational) -> Rational) -> StepFn {
        let mut cuts: Vec<Rational> = self
            .cuts
            .iter()
            .chain(other.cuts.iter())
            .cloned()
            .collect();
        cuts.sort();
        cuts.dedup();
        if cuts.is_empty() {
            let v = op(&Rational::zero(), &Rational::zero());
            if v.is_zero() {
                return StepFn::zero();
            }
            // both zero everywhere but op produces a constant: not representable
            panic!("zip_with of empty step functions must produce zero");
        }
        let vals: Vec<Rational> = cuts[..cuts.len() - 1]
            .iter()
            .map(|c| op(&self.eval(c), &other.eval(c)))
            .collect();
        let mut f = StepFn {
            cuts,
            vals,
        };
        f.canonicalize();
        f
    }

    pub fn add(&self, other: &StepFn) -> StepFn {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sum<'a>(fns: impl IntoIterator<Item = &'a StepFn>) -> StepFn {
        let mut acc = StepFn::zero();
        for f in fns {
            acc = acc.add(f);
        }
        acc
    }

    /// Exact integral as a continuous piecewise-linear function starting at (0,0).
    pub fn integrate(&self) -> PwlFn {
        let mut points = vec![(Rational::zero(), Rational::zero())];
        let mut acc = Rational::zero();
        for (s, e, v) in self.iter_pieces() {
            if points.last().unwrap().0 < s {
                points.push((s.clone(), acc.clone()));
            }
            acc += &v * (&e - &s);
            points.push((e, acc.clone()));
        }
        PwlFn::new(points, Rational::zero())
    }
}

/// Continuous piecewise-linear function on [0, ∞).
///
/// Constant-extends to the left of its first point and grows with
/// `final_slope` after its last point. A cumulative flow with a step-0 packet
/// atom is represented by a first point (0, v) with v > 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PwlFn {
    points: Vec<(Rational, Rational)>,
    final_slope: Rational,
}

impl PwlFn {
    pub fn new(points: Vec<(Rational, Rational)>, final_slope: Rational) -> Self {
        assert!(!points.is_empty(), "pwl function needs at least one point");
        let mut f = PwlFn {
            points,
            final_slope,
        };
        f.canonicalize();
        f
    }

    pub fn constant(value: Rational) -> Self {
        PwlFn {
            points: vec![(Rational::zero(), value)],
            final_slope: Rational::zero(),
        }
    }

    fn canonicalize(&mut self) {
        for w in self.points.windows(2) {
            assert!(w[0].0 < w[1].0, "pwl breakpoints must be strictly increasing");
        }
        // drop interior collinear points and a last point collinear with final_slope
        let mut out: Vec<(Rational, Rational)> = Vec::with_capacity(self.points.len());
        for p in self.points.drain(..) {
            while out.len() >= 2 {
                let b = &out[out.len() - 1];
                let a = &out[out.len() - 2];
                // collinear iff (b−a) and (p−b) have equal slopes
                let lhs = (&b.1 - &a.1) * (&p.0 - &b.0);
                let rhs = (&p.1 - &b.1) * (&b.0 - &a.0);
                if lhs == rhs {
                    out.pop();
                } else {
                    break;
                }
            }
            out.push(p);
        }
        while out.len() >= 2 {
            let b = &out[out.len() - 1];
            let a = &out[out.len() - 2];
            let tail_slope = (&b.1 - &a.1) / (&b.0 - &a.0);
            if tail_slope == self.final_slope {
                out.pop();
            } else {
                break;
            }
        }
        self.points = out;
    }

    pub fn points(&self) -> &[(Rational, Rational)] {
        &self.points
    }

    pub fn final_slope(&self) -> &Rational {
        &self.final_slope
    }

    pub fn last_point(&self) -> &(Rational, Rational) {
        self.points.last().unwrap()
    }

    pub fn eval(&self, x: &Rational) -> Rational {
        let first = &self.points[0];
        if x <= &first.0 {
            return first.1.clone();
        }
        let last = self.points.last().unwrap();
        if x >= &last.0 {
            return &last.1 + &self.final_slope * (x - &last.0);
        }
        let idx = match self.points.binary_search_by(|(t, _)| t.cmp(x)) {
            Ok(i) => return self.points[i].1.clone(),
            Err(i) => i - 1,
        };
        let (t0, v0) = &self.points[idx];
        let (t1, v1) = &self.points[idx + 1];
        v0 + (v1 - v0) * (x - t0) / (t1 - t0)
    }

    /// min{x ≥ 0 | f(x) ≥ y} for a non-decreasing function.
    pub fn inv_min(&self, y: &Rational) -> Result<Rational, PwlError> {
        if &self.points[0].1 >= y {
            return Ok(self.points[0].0.clone());
        }
        for i in 1..self.points.len() {
            if &self.points[i].1 >= y {
                let (t0, v0) = &self.points[i - 1];
                let (t1, v1) = &self.points[i];
                return Ok(t0 + (y - v0) * (t1 - t0) / (v1 - v0));
            }
        }
        let (tl, vl) = self.points.last().unwrap();
        if self.final_slope.is_positive() {
            return Ok(tl + (y - vl) / &self.final_slope);
        }
        Err(PwlError::TargetUnreachable(crate::rational::format_rational(
            y,
        )))
    }

    pub fn is_non_decreasing(&self) -> bool {
        !self.final_slope.is_negative()
            && self.points.windows(2).all(|w| w[0].1 <= w[1].1)
    }

    fn zip_with(&self, other: &PwlFn, op: impl Fn(&Rational, &Rational) -> Rational) -> PwlFn {
        let mut xs: Vec<Rational> = self
            .points
            .iter()
            .chain(other.points.iter())
            .map(|(t, _)| t.clone())
            .collect();
        xs.sort();
        xs.dedup();
        let points = xs
            .into_iter()
            .map(|t| {
                let v = op(&self.eval(&t), &other.eval(&t));
                (t, v)
            })
            .collect();
        PwlFn::new(points, op(&self.final_slope, &other.final_slope))
    }

    pub fn add(&self, other: &PwlFn) -> PwlFn {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &PwlFn) -> PwlFn {
        self.zip_with(other, |a, b| a - b)
    }

    /// x ↦ f(x − delta) with f ≡ 0 before its first point; requires f(start) = 0.
    pub fn shift_right(&self, delta: &Rational) -> PwlFn {
        assert!(
            self.points[0].1.is_zero(),
            "shift_right needs a function starting at value 0"
        );
        let mut points: Vec<(Rational, Rational)> = self
            .points
            .iter()
            .map(|(t, v)| (t + delta, v.clone()))
            .collect();
        if points[0].0 > Rational::zero() {
            points.insert(0, (Rational::zero(), Rational::zero()));
        }
        PwlFn::new(points, self.final_slope.clone())
    }

    pub fn min_value(&self) -> Rational {
        self.points
            .iter()
            .map(|(_, v)| v.clone())
            .min()
            .unwrap()
    }

    /// Exact sup |f − g| over [0, ∞); both functions must share a final slope.
    pub fn sup_abs_diff(&self, other: &PwlFn) -> Result<Rational, PwlError> {
        if self.final_slope != other.final_slope {
            return Err(PwlError::DivergingTails);
        }
        let diff = self.sub(other);
        Ok(diff
            .points
            .iter()
            .map(|(_, v)| v.abs())
            .max()
            .unwrap())
    }
}
