//! Piecewise-quadratic functions on the real line and the lower-envelope
//! machinery used by the univariate dynamic program.
//!
//! All intervals are closed on the left and open on the right. Infinite
//! endpoints are sentinels and are never evaluated.
//!
//! One DP stage turns `f_k` into `g_k(t) = min_{s <= t} f_k(s) + rho(t - s)`:
//!
//! 1. [`candidates_from`] lists, for every piece of `f_k`, the quadratic
//!    functions (each finite on one interval) that can attain the inner
//!    minimum, together with the linear map recovering the minimiser `s`.
//! 2. [`lower_envelope`] walks the real line from left to right and keeps
//!    whichever candidate is lowest, producing `g_k` on disjoint intervals
//!    and the backpointer `b_k`.
//! 3. [`add_quadratic`] adds the next level's loss term to give `f_{k+1}`.

use std::fmt;

use crate::error::{Error, Result};
use crate::penalty::McpParams;

/// Relative tolerance for value and slope ties between candidates.
const TIE_TOL: f64 = 1e-10;
/// Relative tolerance for curvature ties.
const CURVATURE_TOL: f64 = 1e-12;
/// Pieces narrower than this are folded into their left neighbour.
const MIN_WIDTH: f64 = 1e-12;

/// `a*x^2 + b*x + c` restricted to `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticPiece {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub lo: f64,
    pub hi: f64,
}

impl QuadraticPiece {
    pub fn new(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> Self {
        Self { a, b, c, lo, hi }
    }

    /// Checked constructor: finite coefficients and `lo < hi`.
    pub fn try_new(a: f64, b: f64, c: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::NonFinite(format!("quadratic coefficients ({a}, {b}, {c})")));
        }
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::invalid(format!("empty interval [{lo}, {hi})")));
        }
        Ok(Self::new(a, b, c, lo, hi))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        2.0 * self.a * x + self.b
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x < self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    fn same_coefficients(&self, other: &Self) -> bool {
        self.a == other.a && self.b == other.b && self.c == other.c
    }
}

/// Affine map `x -> slope*x + intercept`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearMap {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearMap {
    pub const IDENTITY: LinearMap = LinearMap { slope: 1.0, intercept: 0.0 };

    pub fn constant(value: f64) -> Self {
        Self { slope: 0.0, intercept: value }
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        if self.slope == 1.0 && self.intercept == 0.0 {
            // keeps fused coefficients bit-identical during backtracking
            return x;
        }
        self.slope * x + self.intercept
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearPiece {
    pub map: LinearMap,
    pub lo: f64,
    pub hi: f64,
}

/// Piecewise-linear function on a partition of the real line.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear {
    pieces: Vec<LinearPiece>,
}

impl PiecewiseLinear {
    pub fn new(pieces: Vec<LinearPiece>) -> Result<Self> {
        check_partition(pieces.iter().map(|p| (p.lo, p.hi)))?;
        Ok(Self { pieces })
    }

    pub fn pieces(&self) -> &[LinearPiece] {
        &self.pieces
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let idx = self.pieces.partition_point(|p| p.lo <= x).saturating_sub(1);
        self.pieces[idx].map.apply(x)
    }
}

/// Continuous piecewise-quadratic function on a partition of the real line.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseQuadratic {
    pieces: Vec<QuadraticPiece>,
}

impl PiecewiseQuadratic {
    /// Validates that the pieces are sorted, contiguous, cover the real line
    /// and have finite coefficients.
    pub fn new(pieces: Vec<QuadraticPiece>) -> Result<Self> {
        check_partition(pieces.iter().map(|p| (p.lo, p.hi)))?;
        for p in &pieces {
            if !(p.a.is_finite() && p.b.is_finite() && p.c.is_finite()) {
                return Err(Error::NonFinite(format!("piece {p:?}")));
            }
        }
        Ok(Self { pieces })
    }

    /// A single quadratic on the whole line.
    pub fn quadratic(a: f64, b: f64, c: f64) -> Self {
        Self {
            pieces: vec![QuadraticPiece::new(a, b, c, f64::NEG_INFINITY, f64::INFINITY)],
        }
    }

    pub fn pieces(&self) -> &[QuadraticPiece] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Index of the piece containing `x`.
    pub fn locate(&self, x: f64) -> usize {
        self.pieces.partition_point(|p| p.lo <= x).saturating_sub(1)
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        self.pieces[self.locate(x)].eval(x)
    }

    /// Finite knots (left endpoints of every piece but the first).
    pub fn knots(&self) -> impl Iterator<Item = f64> + '_ {
        self.pieces.iter().skip(1).map(|p| p.lo)
    }

    /// Largest relative jump between adjacent pieces at their shared knot.
    pub fn continuity_defect(&self) -> f64 {
        self.pieces
            .windows(2)
            .map(|w| {
                let x = w[1].lo;
                let (l, r) = (w[0].eval(x), w[1].eval(x));
                (l - r).abs() / l.abs().max(r.abs()).max(1.0)
            })
            .fold(0.0, f64::max)
    }

    /// One line per piece: `lo hi a b c`.
    pub fn dump(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for PiecewiseQuadratic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.pieces {
            writeln!(f, "{} {} {} {} {}", p.lo, p.hi, p.a, p.b, p.c)?;
        }
        Ok(())
    }
}

fn check_partition(bounds: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut prev_hi = f64::NEG_INFINITY;
    let mut first = true;
    for (lo, hi) in bounds {
        if first {
            if lo != f64::NEG_INFINITY {
                return Err(Error::invalid("first piece must start at -inf"));
            }
            first = false;
        } else if lo != prev_hi {
            return Err(Error::invalid(format!("pieces not contiguous at {lo} (previous ends at {prev_hi})")));
        }
        if !(lo < hi) {
            return Err(Error::invalid(format!("empty interval [{lo}, {hi})")));
        }
        prev_hi = hi;
    }
    if first {
        return Err(Error::invalid("no pieces"));
    }
    if prev_hi != f64::INFINITY {
        return Err(Error::invalid("last piece must end at +inf"));
    }
    Ok(())
}

/// Smallest global minimiser and the minimum value.
pub fn global_minimize(f: &PiecewiseQuadratic) -> Result<(f64, f64)> {
    let first = f.pieces.first().ok_or(Error::NotCoercive)?;
    let last = f.pieces.last().ok_or(Error::NotCoercive)?;
    let rises_left = first.a > 0.0 || (first.a == 0.0 && first.b < 0.0);
    let rises_right = last.a > 0.0 || (last.a == 0.0 && last.b > 0.0);
    if !(rises_left && rises_right) {
        return Err(Error::NotCoercive);
    }

    let mut best = (f64::NAN, f64::INFINITY);
    let mut consider = |x: f64, v: f64| {
        let tol = 1e-12 * v.abs().max(1.0);
        if v < best.1 - tol {
            best = (x, v);
        }
    };
    for p in &f.pieces {
        if p.lo.is_finite() {
            consider(p.lo, p.eval(p.lo));
        }
        if p.a > 0.0 {
            let m = -p.b / (2.0 * p.a);
            if p.contains(m) {
                consider(m, p.eval(m));
            }
        }
    }
    Ok(best)
}

/// Which analytic case produced a candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CandidateKind {
    /// The inner minimiser equals the outer argument.
    Identity,
    /// Interior stationary point with the gap on the concave part of the penalty.
    Interior,
    /// Stationary point of the piece with the penalty saturated; constant in
    /// the outer argument.
    Plateau,
}

/// One interval-restricted quadratic candidate for `g_k` with the linear map
/// returning the inner minimiser as a function of the outer argument.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub quad: QuadraticPiece,
    pub back: LinearMap,
    pub kind: CandidateKind,
}

/// All candidate minimiser functions generated by the pieces of `f`.
pub fn candidates_from(f: &PiecewiseQuadratic, p: &McpParams) -> Vec<Candidate> {
    let gamma = p.gamma();
    let lambda = p.lambda();
    let mut out = Vec::with_capacity(3 * f.len());
    for piece in &f.pieces {
        let QuadraticPiece { a, b, c, lo, hi } = *piece;
        out.push(Candidate {
            quad: *piece,
            back: LinearMap::IDENTITY,
            kind: CandidateKind::Identity,
        });

        if 2.0 * a - 1.0 / gamma > 0.0 {
            let denom = 1.0 - 2.0 * a * gamma;
            let shift = gamma * (lambda - b);
            // Image of [lo, hi) under the inverse backpointer; denom < 0 flips it.
            let img_lo = denom * hi + shift;
            let img_hi = denom * lo + shift;
            // Gap between outer and inner argument in [0, gamma*lambda).
            let gap_lo = (lambda - b) / (2.0 * a);
            let gap_hi = gamma * lambda - b / (2.0 * a);
            let dom_lo = img_lo.max(gap_lo);
            let dom_hi = img_hi.min(gap_hi);
            if dom_lo < dom_hi {
                let bl = b - 2.0 * a * gamma * lambda;
                out.push(Candidate {
                    quad: QuadraticPiece::new(
                        a / denom,
                        bl / denom,
                        gamma * (b - lambda) * (b - lambda) / (2.0 * denom) + c,
                        dom_lo,
                        dom_hi,
                    ),
                    back: LinearMap {
                        slope: 1.0 / denom,
                        intercept: gamma * (b - lambda) / denom,
                    },
                    kind: CandidateKind::Interior,
                });
            }
        }

        if a > 0.0 {
            let m = -b / (2.0 * a);
            if piece.contains(m) {
                let start = m + gamma * lambda;
                out.push(Candidate {
                    quad: QuadraticPiece::new(
                        0.0,
                        0.0,
                        c - b * b / (4.0 * a) + p.saturation(),
                        start,
                        f64::INFINITY,
                    ),
                    back: LinearMap::constant(m),
                    kind: CandidateKind::Plateau,
                });
            }
        }
    }
    out
}

/// `g(x) + w/2 * (ybar - x)^2` on the same intervals.
pub fn add_quadratic(g: &PiecewiseQuadratic, w: f64, ybar: f64) -> Result<PiecewiseQuadratic> {
    if !(w.is_finite() && w > 0.0) {
        return Err(Error::invalid(format!("weight must be positive, got {w}")));
    }
    if !ybar.is_finite() {
        return Err(Error::NonFinite(format!("subaverage {ybar}")));
    }
    let pieces = g
        .pieces
        .iter()
        .map(|p| QuadraticPiece {
            a: p.a + 0.5 * w,
            b: p.b - w * ybar,
            c: p.c + 0.5 * w * ybar * ybar,
            ..*p
        })
        .collect();
    Ok(PiecewiseQuadratic { pieces })
}

/// Keeps, at every point, only the lowest plateau whose domain has started.
/// The result has disjoint domains.
fn reduce_plateaus(mut plateaus: Vec<Candidate>) -> Vec<Candidate> {
    plateaus.sort_by(|x, y| {
        x.quad
            .lo
            .total_cmp(&y.quad.lo)
            .then(x.quad.c.total_cmp(&y.quad.c))
    });
    let mut kept: Vec<Candidate> = Vec::new();
    for cand in plateaus {
        match kept.last_mut() {
            None => kept.push(cand),
            Some(cur) if cand.quad.c < cur.quad.c => {
                if cand.quad.lo <= cur.quad.lo {
                    *cur = cand;
                } else {
                    cur.quad.hi = cand.quad.lo;
                    kept.push(cand);
                }
            }
            Some(_) => {}
        }
    }
    kept
}

/// Winner selection at `x`: lowest value, then lowest slope, then lowest
/// curvature, then lowest index. At `-inf` the asymptotic order is used.
fn choose_function(funcs: &[Candidate], active: &[usize], x: f64) -> usize {
    debug_assert!(!active.is_empty());
    if x == f64::NEG_INFINITY {
        return *active
            .iter()
            .min_by(|&&i, &&j| {
                let (p, q) = (&funcs[i].quad, &funcs[j].quad);
                p.a.total_cmp(&q.a)
                    .then(q.b.total_cmp(&p.b))
                    .then(p.c.total_cmp(&q.c))
                    .then(i.cmp(&j))
            })
            .unwrap();
    }

    let mut set: Vec<usize> = active.to_vec();
    set.sort_unstable();

    let values: Vec<f64> = set.iter().map(|&i| funcs[i].quad.eval(x)).collect();
    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * vmin.abs().max(1.0);
    set = set
        .into_iter()
        .zip(values)
        .filter(|&(_, v)| v <= vmin + tol)
        .map(|(i, _)| i)
        .collect();
    if set.len() == 1 {
        return set[0];
    }

    let slopes: Vec<f64> = set.iter().map(|&i| funcs[i].quad.derivative(x)).collect();
    let dmin = slopes.iter().copied().fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * dmin.abs().max(1.0);
    set = set
        .into_iter()
        .zip(slopes)
        .filter(|&(_, d)| d <= dmin + tol)
        .map(|(i, _)| i)
        .collect();
    if set.len() == 1 {
        return set[0];
    }

    let amin = set.iter().map(|&i| funcs[i].quad.a).fold(f64::INFINITY, f64::min);
    let tol = CURVATURE_TOL * amin.abs().max(1.0);
    set.into_iter()
        .find(|&i| funcs[i].quad.a <= amin + tol)
        .unwrap()
}

/// Smallest positive root of `alpha*h^2 + beta*h + delta`.
fn smallest_positive_root(alpha: f64, beta: f64, delta: f64) -> Option<f64> {
    smallest_root_where(alpha, beta, delta, |h| h > 0.0)
}

fn smallest_root_where(alpha: f64, beta: f64, delta: f64, keep: impl Fn(f64) -> bool) -> Option<f64> {
    if alpha == 0.0 {
        if beta == 0.0 {
            return None;
        }
        let h = -delta / beta;
        return keep(h).then_some(h);
    }
    let disc = beta * beta - 4.0 * alpha * delta;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let q = -0.5 * (beta + if beta >= 0.0 { sq } else { -sq });
    let mut roots = [q / alpha, if q != 0.0 { delta / q } else { q / alpha }];
    roots.sort_by(f64::total_cmp);
    roots.into_iter().find(|&h| h.is_finite() && keep(h))
}

/// First point beyond `x` where candidate `s` may undercut the current
/// winner `r`.
fn first_crossing(funcs: &[Candidate], r: usize, s: usize, x: f64) -> Option<f64> {
    let (pr, ps) = (&funcs[r].quad, &funcs[s].quad);
    let alpha = ps.a - pr.a;
    if x == f64::NEG_INFINITY {
        return smallest_root_where(alpha, ps.b - pr.b, ps.c - pr.c, |_| true);
    }
    let vr = pr.eval(x);
    let delta = ps.eval(x) - vr;
    let beta = ps.derivative(x) - pr.derivative(x);
    let vtol = TIE_TOL * vr.abs().max(1.0);
    let h = if delta <= vtol {
        // Tied at x and r preferred: s only wins later if it bends below.
        let dtol = TIE_TOL * pr.derivative(x).abs().max(1.0);
        if beta > dtol && alpha < 0.0 {
            Some(-beta / alpha)
        } else {
            None
        }
    } else {
        smallest_positive_root(alpha, beta, delta)
    }?;
    let y = x + h;
    (y > x).then_some(y)
}

/// Lower envelope of interval-restricted quadratic candidates.
///
/// Sweeps the line from `-inf`. The change-point set holds every finite
/// endpoint of a candidate domain; between consecutive change points the
/// active set is fixed and the walk jumps from the current winner to its
/// earliest intersection with another active candidate, re-selecting the
/// winner with [`choose_function`] at every intersection and change point.
/// Returns the envelope and the backpointer of the winning candidate on each
/// piece.
pub fn lower_envelope(cands: &[Candidate]) -> Result<(PiecewiseQuadratic, PiecewiseLinear)> {
    if cands.is_empty() {
        return Err(Error::EnvelopeGap(f64::NEG_INFINITY));
    }

    let (plateaus, mut funcs): (Vec<Candidate>, Vec<Candidate>) = cands
        .iter()
        .partition(|c| c.kind == CandidateKind::Plateau);
    funcs.extend(reduce_plateaus(plateaus));

    let mut change_points: Vec<f64> = funcs
        .iter()
        .flat_map(|c| [c.quad.lo, c.quad.hi])
        .filter(|x| x.is_finite())
        .collect();
    change_points.sort_by(f64::total_cmp);
    change_points.dedup();

    let mut by_lo: Vec<usize> = (0..funcs.len()).collect();
    by_lo.sort_by(|&i, &j| funcs[i].quad.lo.total_cmp(&funcs[j].quad.lo));
    let mut next_start = 0;

    let mut active: Vec<usize> = Vec::new();
    // (start, candidate index); piece i spans [start_i, start_{i+1}).
    let mut runs: Vec<(f64, usize)> = Vec::new();

    let segment_starts = std::iter::once(f64::NEG_INFINITY).chain(change_points.iter().copied());
    for (seg, start) in segment_starts.enumerate() {
        let seg_end = change_points.get(seg).copied().unwrap_or(f64::INFINITY);

        active.retain(|&i| funcs[i].quad.hi > start);
        while next_start < by_lo.len() && funcs[by_lo[next_start]].quad.lo <= start {
            let i = by_lo[next_start];
            if funcs[i].quad.hi > start {
                active.push(i);
            }
            next_start += 1;
        }
        if active.is_empty() {
            return Err(Error::EnvelopeGap(start));
        }

        let mut winner = choose_function(&funcs, &active, start);
        if runs.last().map(|r| r.1) != Some(winner) {
            runs.push((start, winner));
        }

        let mut x = start;
        let mut guard = 8 * active.len() * active.len() + 16;
        loop {
            let mut next: Option<f64> = None;
            for &s in &active {
                if s == winner {
                    continue;
                }
                if let Some(y) = first_crossing(&funcs, winner, s, x) {
                    if y < seg_end && next.is_none_or(|n| y < n) {
                        next = Some(y);
                    }
                }
            }
            let Some(y) = next else { break };
            let chosen = choose_function(&funcs, &active, y);
            if chosen != winner {
                winner = chosen;
                runs.push((y, winner));
            }
            x = y;
            guard -= 1;
            if guard == 0 {
                break;
            }
        }
    }

    Ok(assemble(&funcs, &runs))
}

fn assemble(funcs: &[Candidate], runs: &[(f64, usize)]) -> (PiecewiseQuadratic, PiecewiseLinear) {
    let mut quads: Vec<QuadraticPiece> = Vec::with_capacity(runs.len());
    let mut backs: Vec<LinearPiece> = Vec::with_capacity(runs.len());
    for (k, &(lo, idx)) in runs.iter().enumerate() {
        let hi = runs.get(k + 1).map_or(f64::INFINITY, |r| r.0);
        let cand = &funcs[idx];
        let piece = QuadraticPiece { lo, hi, ..cand.quad };
        if let (Some(last_q), Some(last_b)) = (quads.last_mut(), backs.last_mut()) {
            let tiny = hi - lo < MIN_WIDTH * lo.abs().max(1.0);
            let same = last_q.same_coefficients(&piece) && last_b.map == cand.back;
            if tiny || same {
                last_q.hi = hi;
                last_b.hi = hi;
                continue;
            }
        }
        quads.push(piece);
        backs.push(LinearPiece { map: cand.back, lo, hi });
    }
    (PiecewiseQuadratic { pieces: quads }, PiecewiseLinear { pieces: backs })
}
