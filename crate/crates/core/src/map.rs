//! Interval maps with finitely many full branches and neutral (parabolic)
//! fixed points, their inverse branches, potentials, and the empirical
//! validation of the structural axioms the solvers rely on.
//!
//! Branches are closed-form expressions (polynomial, polynomial plus a real
//! power, or Möbius), so forward maps, derivatives, and inverse branches are
//! all available to full double precision.

use serde::{Deserialize, Serialize};

use crate::numerics::{self, Kahan};
use crate::{Error, Result};

/// Closed-form branch expression. Everything the engine needs — values,
/// two derivatives, certified second-derivative enclosures, inverses —
/// derives from these three shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BranchExpr {
    /// `Σ coeffs[k] · x^k`.
    Poly { coeffs: Vec<f64> },
    /// `Σ coeffs[k] · x^k + c · x^p` with real `p > 1` (the neutral-branch
    /// shape `x + x^{1+β}` and its mod-1 siblings).
    PowerShift { coeffs: Vec<f64>, c: f64, p: f64 },
    /// `(a x + b) / (c x + d)`.
    Moebius { a: f64, b: f64, c: f64, d: f64 },
}

impl BranchExpr {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            BranchExpr::Poly { coeffs } => numerics::poly_eval(coeffs, x),
            BranchExpr::PowerShift { coeffs, c, p } => {
                numerics::poly_eval(coeffs, x) + c * x.powf(*p)
            }
            BranchExpr::Moebius { a, b, c, d } => (a * x + b) / (c * x + d),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match self {
            BranchExpr::Poly { coeffs } => numerics::poly_deriv(coeffs, x),
            BranchExpr::PowerShift { coeffs, c, p } => {
                numerics::poly_deriv(coeffs, x) + c * p * x.powf(p - 1.0)
            }
            BranchExpr::Moebius { a, b, c, d } => {
                let den = c * x + d;
                (a * d - b * c) / (den * den)
            }
        }
    }

    pub fn second_deriv(&self, x: f64) -> f64 {
        match self {
            BranchExpr::Poly { coeffs } => {
                let mut acc = 0.0;
                for (k, &ck) in coeffs.iter().enumerate().skip(2).rev() {
                    acc = acc * x + ck * (k * (k - 1)) as f64;
                }
                acc
            }
            BranchExpr::PowerShift { coeffs, c, p } => {
                let mut acc = 0.0;
                for (k, &ck) in coeffs.iter().enumerate().skip(2).rev() {
                    acc = acc * x + ck * (k * (k - 1)) as f64;
                }
                acc + c * p * (p - 1.0) * x.powf(p - 2.0)
            }
            BranchExpr::Moebius { a, b, c, d } => {
                let den = c * x + d;
                -2.0 * c * (a * d - b * c) / (den * den * den)
            }
        }
    }

    /// Certified enclosure of the second derivative over `[lo, hi] ⊆ [0,1]`,
    /// used to decide whether the first derivative is monotone there.
    fn second_deriv_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        match self {
            BranchExpr::Poly { coeffs } => {
                let d2: Vec<f64> = coeffs
                    .iter()
                    .enumerate()
                    .skip(2)
                    .map(|(k, &c)| c * (k * (k - 1)) as f64)
                    .collect();
                numerics::poly_range(&d2, lo, hi)
            }
            BranchExpr::PowerShift { coeffs, c, p } => {
                let d2: Vec<f64> = coeffs
                    .iter()
                    .enumerate()
                    .skip(2)
                    .map(|(k, &ck)| ck * (k * (k - 1)) as f64)
                    .collect();
                let (mut mn, mut mx) = numerics::poly_range(&d2, lo, hi);
                // x ↦ x^{p−2} is monotone on (0, 1], so the power term's
                // extremes sit at the endpoints.
                let term = |x: f64| c * p * (p - 1.0) * x.powf(p - 2.0);
                let (ta, tb) = (term(lo.max(1e-300)), term(hi.max(1e-300)));
                mn += ta.min(tb);
                mx += ta.max(tb);
                (mn, mx)
            }
            BranchExpr::Moebius { .. } => {
                // f'' is monotone between endpoints: it is ±K/(cx+d)³ with
                // cx+d sign-constant on a valid domain.
                let (ta, tb) = (self.second_deriv(lo), self.second_deriv(hi));
                (ta.min(tb), ta.max(tb))
            }
        }
    }
}

/// One monotone full branch of the map: its symbol is its index in
/// [`MapModel::branches`].
#[derive(Debug, Clone)]
pub struct Branch {
    pub domain: (f64, f64),
    pub expr: BranchExpr,
    pub parabolic: bool,
    /// Present iff `parabolic`.
    pub fixed_point: Option<f64>,
    pub increasing: bool,
}

impl Branch {
    pub fn new(domain: (f64, f64), expr: BranchExpr, fixed_point: Option<f64>) -> Result<Self> {
        let (lo, hi) = domain;
        if !(0.0 - 1e-12..=1.0 + 1e-12).contains(&lo) || !(lo < hi) || hi > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "branch domain [{lo}, {hi}] must be a subinterval of [0,1]"
            )));
        }
        if let BranchExpr::Moebius { c, d, .. } = expr {
            if (c * lo + d) * (c * hi + d) <= 0.0 {
                return Err(Error::InvalidParameter(
                    "Möbius branch has a pole inside its domain".into(),
                ));
            }
        }
        let dm = expr.deriv(0.5 * (lo + hi));
        if !dm.is_finite() || dm == 0.0 {
            return Err(Error::InvalidParameter(
                "branch derivative vanishes or is not finite at the domain midpoint".into(),
            ));
        }
        if let Some(x) = fixed_point {
            if !(lo - 1e-12..=hi + 1e-12).contains(&x) {
                return Err(Error::InvalidParameter(format!(
                    "fixed point {x} outside branch domain [{lo}, {hi}]"
                )));
            }
        }
        Ok(Branch { domain, expr, parabolic: fixed_point.is_some(), fixed_point, increasing: dm > 0.0 })
    }

    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        self.expr.eval(x)
    }

    #[inline]
    pub fn df(&self, x: f64) -> f64 {
        self.expr.deriv(x)
    }

    #[inline]
    pub fn d2f(&self, x: f64) -> f64 {
        self.expr.second_deriv(x)
    }

    /// Inverse branch `T: [0,1] → domain`, accurate to ~1e-14.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        if let BranchExpr::Moebius { a, b, c, d } = self.expr {
            let den = a - c * y;
            if den == 0.0 {
                return Err(Error::Domain(format!("Möbius inverse pole at y = {y}")));
            }
            let x = (d * y - b) / den;
            let (lo, hi) = self.domain;
            return Ok(x.clamp(lo, hi));
        }
        let (lo, hi) = self.domain;
        numerics::invert_monotone(y, lo, hi, |x| self.expr.eval(x), |x| self.expr.deriv(x))
    }

    /// Enclosure of `log|f'|` over `[lo, hi]`, splitting until the second
    /// derivative is sign-definite so the extremes sit at interval endpoints.
    pub fn log_deriv_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        fn rec(b: &Branch, lo: f64, hi: f64, depth: usize, out: &mut (f64, f64)) {
            let (s_lo, s_hi) = b.expr.second_deriv_range(lo, hi);
            if s_lo >= 0.0 || s_hi <= 0.0 || depth == 0 || hi - lo < 1e-12 {
                let (a, c) = (b.df(lo).abs().ln(), b.df(hi).abs().ln());
                out.0 = out.0.min(a.min(c));
                out.1 = out.1.max(a.max(c));
                if depth == 0 && !(s_lo >= 0.0 || s_hi <= 0.0) {
                    // Could not certify monotonicity; pad by the worst slope.
                    let pad = (hi - lo) * s_lo.abs().max(s_hi.abs())
                        / b.df(0.5 * (lo + hi)).abs().max(1e-12);
                    out.0 -= pad;
                    out.1 += pad;
                }
            } else {
                let m = 0.5 * (lo + hi);
                rec(b, lo, m, depth - 1, out);
                rec(b, m, hi, depth - 1, out);
            }
        }
        let mut out = (f64::INFINITY, f64::NEG_INFINITY);
        rec(self, lo, hi, 24, &mut out);
        out
    }
}

/// A validated interval map: finitely many full branches, at least one of
/// them neutral.
#[derive(Debug, Clone)]
pub struct MapModel {
    pub name: String,
    pub branches: Vec<Branch>,
    /// Polynomial-escape exponent: near a neutral point the induced branch
    /// derivatives over level-`n` cylinders grow like `n^{1+gamma}`.
    pub gamma: f64,
    /// Distortion constant of that power law (metadata; the validator
    /// reports the empirically observed value).
    pub f1_constant: f64,
    /// Hölder exponent assumed for induced potential increments.
    pub holder_exponent: f64,
    /// A priori bound on `|F''|/|F'|²` over induced branches (metadata).
    pub renyi_bound: f64,
}

impl MapModel {
    pub fn new(name: impl Into<String>, branches: Vec<Branch>, gamma: f64) -> Result<Self> {
        let model = MapModel {
            name: name.into(),
            branches,
            gamma,
            f1_constant: 4.0,
            holder_exponent: 1.0,
            renyi_bound: 64.0,
        };
        model.check_structure()?;
        Ok(model)
    }

    fn check_structure(&self) -> Result<()> {
        if self.branches.len() < 2 {
            return Err(Error::Axiom("a model needs at least two branches".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.parabolic_indices().is_empty() {
            return Err(Error::Axiom("at least one branch must be parabolic".into()));
        }
        Ok(())
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn branch(&self, i: usize) -> &Branch {
        &self.branches[i]
    }

    pub fn parabolic_indices(&self) -> Vec<usize> {
        (0..self.branches.len()).filter(|&i| self.branches[i].parabolic).collect()
    }

    pub fn hyperbolic_indices(&self) -> Vec<usize> {
        (0..self.branches.len()).filter(|&i| !self.branches[i].parabolic).collect()
    }

    /// All builtin branches are orientation-preserving; custom maps may not
    /// be, which routes some solvers onto slower certified paths.
    pub fn all_increasing(&self) -> bool {
        self.branches.iter().all(|b| b.increasing)
    }

    /// Branch containing `x`, preferring the one whose interior holds it.
    pub fn branch_at(&self, x: f64) -> Option<usize> {
        self.branches
            .iter()
            .position(|b| x > b.domain.0 && x < b.domain.1)
            .or_else(|| self.branches.iter().position(|b| x >= b.domain.0 && x <= b.domain.1))
    }
}

/// The intermittent map `x ↦ x + x^{1+β} (mod 1)` with its neutral fixed
/// point at 0. The mod-1 cut sits at the root of `x + x^{1+β} = 1`.
pub fn manneville_pomeau(beta: f64) -> Result<MapModel> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidParameter(format!("beta must be positive, got {beta}")));
    }
    let p = 1.0 + beta;
    let cut = numerics::invert_monotone(
        1.0,
        0.0,
        1.0,
        |x| x + x.powf(p),
        |x| 1.0 + p * x.powf(beta),
    )?;
    let b0 = Branch::new(
        (0.0, cut),
        BranchExpr::PowerShift { coeffs: vec![0.0, 1.0], c: 1.0, p },
        Some(0.0),
    )?;
    let b1 = Branch::new(
        (cut, 1.0),
        BranchExpr::PowerShift { coeffs: vec![-1.0, 1.0], c: 1.0, p },
        None,
    )?;
    MapModel::new(format!("manneville_pomeau(beta={beta})"), vec![b0, b1], 1.0 / beta)
}

/// The Farey-like map `x/(1−x)` on `[0, 1/2]`, `(2x−1)/x` on `[1/2, 1]`,
/// with neutral fixed points at both 0 and 1.
pub fn farey_like() -> MapModel {
    let b0 = Branch::new(
        (0.0, 0.5),
        BranchExpr::Moebius { a: 1.0, b: 0.0, c: -1.0, d: 1.0 },
        Some(0.0),
    )
    .expect("builtin branch");
    let b1 = Branch::new(
        (0.5, 1.0),
        BranchExpr::Moebius { a: 2.0, b: -1.0, c: 1.0, d: 0.0 },
        Some(1.0),
    )
    .expect("builtin branch");
    MapModel::new("farey_like", vec![b0, b1], 1.0).expect("builtin model")
}

// ---------------------------------------------------------------------------
// Potentials
// ---------------------------------------------------------------------------

/// Continuous observable on `[0,1]`. `Geometric` is `log|f'|`, which is
/// branch-dependent pointwise but continuous for the builtin models; all
/// engine paths pass a branch hint so custom maps with jumps stay coherent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    #[default]
    Identity,
    Geometric,
    Polynomial { coeffs: Vec<f64> },
}

impl Potential {
    pub fn value(&self, x: f64, model: &MapModel, branch_hint: Option<usize>) -> f64 {
        match self {
            Potential::Identity => x,
            Potential::Polynomial { coeffs } => numerics::poly_eval(coeffs, x),
            Potential::Geometric => {
                let i = branch_hint
                    .or_else(|| model.branch_at(x))
                    .expect("geometric potential needs a branch containing x");
                model.branches[i].df(x).abs().ln()
            }
        }
    }

    /// Enclosure of the potential over `[lo, hi]` inside one branch.
    pub fn range_on(&self, lo: f64, hi: f64, model: &MapModel, branch: usize) -> (f64, f64) {
        match self {
            Potential::Identity => (lo, hi),
            Potential::Polynomial { coeffs } => numerics::poly_range(coeffs, lo, hi),
            Potential::Geometric => model.branches[branch].log_deriv_range(lo, hi),
        }
    }

    /// `Some(c)` iff the potential is constant.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Potential::Identity | Potential::Geometric => None,
            Potential::Polynomial { coeffs } => {
                if coeffs.iter().skip(1).all(|&c| c == 0.0) {
                    Some(coeffs.first().copied().unwrap_or(0.0))
                } else {
                    None
                }
            }
        }
    }

    /// Values `α_i = φ(x_i)` at the neutral fixed points, in branch order.
    pub fn parabolic_values(&self, model: &MapModel) -> Vec<(usize, f64)> {
        model
            .parabolic_indices()
            .into_iter()
            .map(|i| {
                let x = model.branches[i].fixed_point.expect("parabolic branch has a fixed point");
                (i, self.value(x, model, Some(i)))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Word orbits (shared by the validator and by tests)
// ---------------------------------------------------------------------------

/// Data of one inverse-branch pullback along a symbolic word. The last two
/// letters are lookahead context: a word of `k` letters describes a return
/// block of time `r = k − 2` that lands in the cylinder of the next word.
#[derive(Debug, Clone)]
pub struct WordOrbit {
    /// Return-block points `p_1, …, p_r`; `p_1` is the cylinder point.
    pub points: Vec<f64>,
    /// `log (f^r)'(p_1) = Σ_t log |f'_{ω_t}(p_t)|`.
    pub log_deriv: f64,
    /// `(f^r)''(p_1)`.
    pub second_deriv: f64,
}

/// Pull the image point `z ∈ [0,1]` back through `letters`, producing the
/// return-block orbit, the block derivative, and its second derivative.
pub fn word_orbit(model: &MapModel, letters: &[usize], z: f64) -> Result<WordOrbit> {
    let k = letters.len();
    if k < 3 {
        return Err(Error::InvalidParameter("a word needs at least 3 letters".into()));
    }
    let r = k - 2;
    // Land z inside the two-letter context cylinder, then pull back through
    // the return block in reverse.
    let mut pt = model.branches[letters[k - 1]].inverse(z)?;
    pt = model.branches[letters[k - 2]].inverse(pt)?;
    let mut points = vec![0.0; r];
    for t in (0..r).rev() {
        pt = model.branches[letters[t]].inverse(pt)?;
        points[t] = pt;
    }
    let mut log_deriv = Kahan::new();
    let mut d = 1.0;
    let mut s = 0.0;
    for (t, &p) in points.iter().enumerate() {
        let b = &model.branches[letters[t]];
        let (dp, d2p) = (b.df(p), b.d2f(p));
        if !dp.is_finite() || !d2p.is_finite() {
            return Err(Error::Domain(format!("derivative not finite at x = {p}")));
        }
        log_deriv.add(dp.abs().ln());
        // Chain rule along the orbit: (f∘g)'' = f''(g)·g'² + f'(g)·g''.
        // Here g = f^t evaluated at p_1, so g' and g'' are the running d, s.
        s = d2p * d * d + dp * s;
        d *= dp;
    }
    Ok(WordOrbit { points, log_deriv: log_deriv.value(), second_deriv: s })
}

/// Birkhoff sum of `phi` over one return block.
pub fn word_birkhoff(model: &MapModel, potential: &Potential, orbit: &WordOrbit, letters: &[usize]) -> f64 {
    let mut acc = Kahan::new();
    for (t, &p) in orbit.points.iter().enumerate() {
        acc.add(potential.value(p, model, Some(letters[t])));
    }
    acc.value()
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Sampling plan for the empirical axiom checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingPlan {
    /// Uniform samples per branch domain.
    pub grid: usize,
    /// Extra geometric refinement steps toward each neutral fixed point.
    pub geometric_refine: usize,
    /// Maximum block level for the derivative power-law fit.
    pub f1_levels: usize,
    /// Maximum block level probed for the distortion supremum.
    pub f2_levels: usize,
    /// Point pairs per cylinder for the Hölder seminorm estimate.
    pub pairs_per_cylinder: usize,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            grid: 256,
            geometric_refine: 48,
            f1_levels: 200,
            f2_levels: 48,
            pairs_per_cylinder: 6,
        }
    }
}

/// Outcome of one axiom check.
#[derive(Debug, Clone, Serialize)]
pub struct AxiomCheck {
    pub passed: bool,
    pub detail: String,
}

/// Full validation report; [`ValidationReport::passed`] aggregates.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    /// Branch interiors pairwise disjoint.
    pub nei1: AxiomCheck,
    /// Every branch surjects onto (0,1).
    pub nei2: AxiomCheck,
    /// Expansion away from the neutral points; neutrality at them.
    pub nei3: AxiomCheck,
    /// `max |f_i(T_i(y)) − y|` over the sample.
    pub inverse_max_err: f64,
    /// Fitted exponent of `log|F'|` against `log n` on level-`n` blocks.
    pub f1_slope: f64,
    /// Observed distortion constant: all ratios `|F'| / n^{1+γ}` lie in
    /// `[1/C', C']`.
    pub f1_constant: f64,
    pub f1_pass: bool,
    /// Observed supremum of `|F''| / |F'|²`.
    pub renyi_sup: f64,
    /// Estimated Hölder seminorm of block Birkhoff sums at the model's
    /// Hölder exponent (potential-dependent diagnostic).
    pub holder_seminorm: f64,
    /// Expansion floor over non-parabolic branches.
    pub hyperbolic_floor: f64,
    pub messages: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.nei1.passed && self.nei2.passed && self.nei3.passed && self.f1_pass
    }
}

fn branch_samples(b: &Branch, plan: &SamplingPlan) -> Vec<f64> {
    let (lo, hi) = b.domain;
    let span = hi - lo;
    let mut xs: Vec<f64> = (0..=plan.grid)
        .map(|k| lo + span * k as f64 / plan.grid as f64)
        .collect();
    if let Some(xf) = b.fixed_point {
        // Geometric refinement toward the neutral point.
        for k in 1..=plan.geometric_refine {
            let off = span * 0.5f64.powi(k as i32);
            let x = if (xf - lo).abs() < (hi - xf).abs() { xf + off } else { xf - off };
            if x > lo && x < hi {
                xs.push(x);
            }
        }
    }
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    xs
}

fn finite_or_err(v: f64, what: &str, x: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Domain(format!("{what} returned {v} at x = {x}")))
    }
}

/// Empirically audit NEI1–NEI3, inverse consistency, the induced derivative
/// power law, the distortion supremum, and the Hölder seminorm of block
/// Birkhoff sums for `potential`.
pub fn validate_map(
    model: &MapModel,
    potential: &Potential,
    plan: &SamplingPlan,
) -> Result<ValidationReport> {
    let mut messages = Vec::new();

    // NEI1: pairwise disjoint interiors.
    let mut nei1_ok = true;
    let mut nei1_detail = String::from("branch interiors pairwise disjoint");
    for i in 0..model.branches.len() {
        for j in (i + 1)..model.branches.len() {
            let (a, b) = model.branches[i].domain;
            let (c, d) = model.branches[j].domain;
            if a.max(c) < b.min(d) - 1e-12 {
                nei1_ok = false;
                nei1_detail = format!("branches {i} and {j} overlap on ({}, {})", a.max(c), b.min(d));
            }
        }
    }

    // NEI2: each branch is onto (0,1).
    let mut nei2_ok = true;
    let mut nei2_detail = String::from("every branch covers (0,1)");
    for (i, b) in model.branches.iter().enumerate() {
        let (lo, hi) = b.domain;
        let (ya, yb) = (
            finite_or_err(b.f(lo), "forward map", lo)?,
            finite_or_err(b.f(hi), "forward map", hi)?,
        );
        let (ymin, ymax) = (ya.min(yb), ya.max(yb));
        if ymin > 1e-9 || ymax < 1.0 - 1e-9 {
            nei2_ok = false;
            nei2_detail = format!("branch {i} image [{ymin}, {ymax}] misses (0,1)");
        }
    }

    // NEI3 + inverse consistency + expansion floor, on the sampled grid.
    let mut nei3_ok = true;
    let mut nei3_detail = String::from("neutral points neutral, expansion elsewhere");
    let mut inverse_max_err = 0.0f64;
    let mut hyperbolic_floor = f64::INFINITY;
    for (i, b) in model.branches.iter().enumerate() {
        if let Some(xf) = b.fixed_point {
            let fx = finite_or_err(b.f(xf), "forward map", xf)?;
            let dfx = finite_or_err(b.df(xf), "derivative", xf)?;
            if (fx - xf).abs() > 1e-12 || (dfx.abs() - 1.0).abs() > 1e-9 {
                nei3_ok = false;
                nei3_detail =
                    format!("branch {i}: f(x_i) − x_i = {:e}, |f'(x_i)| − 1 = {:e}", fx - xf, dfx.abs() - 1.0);
            }
        }
        let mut min_away = f64::INFINITY;
        for &x in &branch_samples(b, plan) {
            let d = finite_or_err(b.df(x), "derivative", x)?.abs();
            let near_fixed = b.fixed_point.is_some_and(|xf| (x - xf).abs() < 1e-9);
            if !near_fixed {
                min_away = min_away.min(d);
            }
            // Inverse consistency on the image side.
            let y = finite_or_err(b.f(x), "forward map", x)?.clamp(0.0, 1.0);
            let back = b.inverse(y)?;
            inverse_max_err = inverse_max_err.max((b.f(back) - y).abs());
        }
        if b.parabolic {
            if min_away <= 1.0 {
                nei3_ok = false;
                nei3_detail = format!("branch {i}: |f'| = {min_away} ≤ 1 away from the neutral point");
            }
        } else {
            hyperbolic_floor = hyperbolic_floor.min(min_away);
            if min_away <= 1.0 + 1e-9 {
                nei3_ok = false;
                nei3_detail = format!("branch {i}: expansion floor {min_away} not above 1");
            }
        }
    }
    if model.hyperbolic_indices().is_empty() {
        hyperbolic_floor = f64::NAN;
        messages.push("no non-parabolic branches; expansion floor not applicable".into());
    }

    // Power-law fit of log|F'| on level-n blocks (j, iⁿ, k), per neutral i.
    let mut slope_est = 0.0f64;
    let mut ratio_lo = f64::INFINITY;
    let mut ratio_hi = 0.0f64;
    let mut n_fits = 0usize;
    let mut renyi_sup = 0.0f64;
    let mut holder_seminorm = 0.0f64;
    for i in model.parabolic_indices() {
        let j = (0..model.branches.len()).find(|&j| j != i).expect("#E ≥ 2");
        let k = j;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for n in 1..=plan.f1_levels {
            let mut letters = Vec::with_capacity(n + 2);
            letters.push(j);
            letters.extend(std::iter::repeat_n(i, n));
            letters.push(k);
            let orbit = word_orbit(model, &letters, 0.5)?;
            let logf = orbit.log_deriv;
            let ratio = logf - (1.0 + model.gamma) * (n as f64).ln();
            ratio_lo = ratio_lo.min(ratio);
            ratio_hi = ratio_hi.max(ratio);
            if n >= plan.f1_levels / 2 {
                xs.push((n as f64).ln());
                ys.push(logf);
            }
            // Distortion supremum and Hölder seminorm on the shallow levels.
            if n <= plan.f2_levels {
                for m in 0..plan.pairs_per_cylinder {
                    let z0 = (m as f64 + 0.25) / plan.pairs_per_cylinder as f64;
                    let z1 = (m as f64 + 0.75) / plan.pairs_per_cylinder as f64;
                    let (o0, o1) = (word_orbit(model, &letters, z0)?, word_orbit(model, &letters, z1)?);
                    let fp = o0.log_deriv.exp();
                    renyi_sup = renyi_sup.max(o0.second_deriv.abs() / (fp * fp));
                    let dphi = (word_birkhoff(model, potential, &o0, &letters)
                        - word_birkhoff(model, potential, &o1, &letters))
                    .abs();
                    let dx = (o0.points[0] - o1.points[0]).abs();
                    if dx > 1e-300 {
                        holder_seminorm = holder_seminorm.max(dphi / dx.powf(model.holder_exponent));
                    }
                }
            }
        }
        // Least squares slope of log|F'| against log n on the deep half.
        let m = xs.len() as f64;
        let (mx, my) = (ksum_mean(&xs), ksum_mean(&ys));
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        if m >= 2.0 && sxx > 0.0 {
            slope_est += sxy / sxx;
            n_fits += 1;
        }
    }
    if n_fits > 0 {
        slope_est /= n_fits as f64;
    }
    // All observed ratios |F'|/n^{1+γ} fit inside [1/C', C'].
    let f1_constant = ratio_hi.exp().max((-ratio_lo).exp()).max(1.0);
    let f1_pass = (slope_est - (1.0 + model.gamma)).abs() <= 0.05 && f1_constant.is_finite();
    if !f1_pass {
        messages.push(format!(
            "derivative power-law fit: slope {slope_est:.4} vs expected {:.4}, C' = {f1_constant:.3}",
            1.0 + model.gamma
        ));
    }
    if inverse_max_err > 1e-12 {
        messages.push(format!("inverse consistency at {inverse_max_err:e} exceeds 1e-12"));
    }

    Ok(ValidationReport {
        nei1: AxiomCheck { passed: nei1_ok, detail: nei1_detail },
        nei2: AxiomCheck { passed: nei2_ok, detail: nei2_detail },
        nei3: AxiomCheck { passed: nei3_ok, detail: nei3_detail },
        inverse_max_err,
        f1_slope: slope_est,
        f1_constant,
        f1_pass,
        renyi_sup,
        holder_seminorm,
        hyperbolic_floor,
        messages,
    })
}

fn ksum_mean(xs: &[f64]) -> f64 {
    numerics::ksum(xs.iter().copied()) / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mp_cut_point_golden_ratio_at_beta_one() {
        let m = manneville_pomeau(1.0).unwrap();
        let cut = m.branches[0].domain.1;
        let golden = (5.0f64.sqrt() - 1.0) / 2.0;
        assert!((cut - golden).abs() < 1e-13, "cut = {cut}");
        assert!((m.gamma - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mp_gamma_is_inverse_beta() {
        let m = manneville_pomeau(0.5).unwrap();
        assert!((m.gamma - 2.0).abs() < 1e-15);
        assert_eq!(m.parabolic_indices(), vec![0]);
        assert_eq!(m.hyperbolic_indices(), vec![1]);
    }

    #[test]
    fn mp_rejects_nonpositive_beta() {
        assert!(manneville_pomeau(0.0).is_err());
        assert!(manneville_pomeau(-1.0).is_err());
    }

    #[test]
    fn farey_both_branches_parabolic() {
        let m = farey_like();
        assert_eq!(m.parabolic_indices(), vec![0, 1]);
        assert!(m.hyperbolic_indices().is_empty());
        assert!((m.gamma - 1.0).abs() < 1e-15);
    }

    #[test]
    fn farey_inverse_closed_forms() {
        let m = farey_like();
        for &y in &[0.0, 0.2, 0.5, 0.9, 1.0] {
            let t0 = m.branches[0].inverse(y).unwrap();
            assert!((t0 - y / (1.0 + y)).abs() < 1e-15);
            let t1 = m.branches[1].inverse(y).unwrap();
            assert!((t1 - 1.0 / (2.0 - y)).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_roundtrip_mp() {
        let m = manneville_pomeau(0.7).unwrap();
        for b in &m.branches {
            for k in 0..=40 {
                let y = k as f64 / 40.0;
                let x = b.inverse(y).unwrap();
                assert!((b.f(x) - y).abs() < 1e-12, "branch roundtrip at y = {y}");
                assert!(x >= b.domain.0 - 1e-12 && x <= b.domain.1 + 1e-12);
            }
        }
    }

    #[test]
    fn builtin_models_validate() {
        for (model, pot) in [
            (manneville_pomeau(1.0).unwrap(), Potential::Identity),
            (manneville_pomeau(0.5).unwrap(), Potential::Identity),
            (farey_like(), Potential::Identity),
        ] {
            let report = validate_map(&model, &pot, &SamplingPlan::default()).unwrap();
            assert!(report.passed(), "{} failed: {:?}", model.name, report);
            assert!(report.inverse_max_err <= 1e-12, "{}: {:e}", model.name, report.inverse_max_err);
            assert!(
                (report.f1_slope - (1.0 + model.gamma)).abs() <= 0.05,
                "{}: slope {}",
                model.name,
                report.f1_slope
            );
            assert!(report.renyi_sup.is_finite() && report.renyi_sup > 0.0);
        }
    }

    #[test]
    fn overlapping_branches_fail_disjointness() {
        let b0 = Branch::new((0.0, 0.6), BranchExpr::Poly { coeffs: vec![0.0, 5.0 / 3.0] }, Some(0.0)).unwrap();
        let b1 = Branch::new((0.4, 1.0), BranchExpr::Poly { coeffs: vec![-2.0 / 3.0, 5.0 / 3.0] }, None).unwrap();
        // Fails structural neutrality: branch 0 claims a fixed point where
        // f' ≠ 1, so force the check through validate_map via a parabolic
        // stand-in model built by hand.
        let model = MapModel {
            name: "overlap".into(),
            branches: vec![b0, b1],
            gamma: 1.0,
            f1_constant: 4.0,
            holder_exponent: 1.0,
            renyi_bound: 64.0,
        };
        let report = validate_map(&model, &Potential::Identity, &SamplingPlan {
            f1_levels: 8,
            f2_levels: 2,
            ..Default::default()
        })
        .unwrap();
        assert!(!report.nei1.passed);
    }

    #[test]
    fn geometric_potential_continuous_for_builtins() {
        let m = farey_like();
        let p = Potential::Geometric;
        let left = p.value(0.5, &m, Some(0));
        let right = p.value(0.5, &m, Some(1));
        assert!((left - right).abs() < 1e-12);
        assert!((left - 4.0f64.ln()).abs() < 1e-12);
        // Neutral values are zero.
        for (i, alpha) in p.parabolic_values(&m) {
            assert!(alpha.abs() < 1e-12, "branch {i}: alpha = {alpha}");
        }
    }

    #[test]
    fn potential_ranges_enclose_samples() {
        let m = manneville_pomeau(1.0).unwrap();
        for pot in [
            Potential::Identity,
            Potential::Geometric,
            Potential::Polynomial { coeffs: vec![0.36, -1.2, 1.0] },
        ] {
            for (bi, b) in m.branches.iter().enumerate() {
                let (lo, hi) = b.domain;
                let (mid_lo, mid_hi) = (lo + 0.3 * (hi - lo), lo + 0.8 * (hi - lo));
                let (rlo, rhi) = pot.range_on(mid_lo, mid_hi, &m, bi);
                for k in 0..=50 {
                    let x = mid_lo + (mid_hi - mid_lo) * k as f64 / 50.0;
                    let v = pot.value(x, &m, Some(bi));
                    assert!(v >= rlo - 1e-12 && v <= rhi + 1e-12, "{pot:?} at {x}: {v} ∉ [{rlo}, {rhi}]");
                }
            }
        }
    }

    #[test]
    fn word_orbit_composes_inverses() {
        let m = farey_like();
        // Word (0, 1, 0): r = 1, single point T_0(T_1(T_0(z))).
        let o = word_orbit(&m, &[0, 1, 0], 0.3).unwrap();
        assert_eq!(o.points.len(), 1);
        let z_ctx = m.branches[1].inverse(m.branches[0].inverse(0.3).unwrap()).unwrap();
        let expect = m.branches[0].inverse(z_ctx).unwrap();
        assert!((o.points[0] - expect).abs() < 1e-14);
        let d = m.branches[0].df(o.points[0]);
        assert!((o.log_deriv - d.ln()).abs() < 1e-13);
    }

    #[test]
    fn constant_potential_detected() {
        assert_eq!(Potential::Polynomial { coeffs: vec![0.7] }.constant_value(), Some(0.7));
        assert_eq!(Potential::Polynomial { coeffs: vec![0.7, 0.0] }.constant_value(), Some(0.7));
        assert_eq!(Potential::Polynomial { coeffs: vec![0.7, 0.1] }.constant_value(), None);
        assert_eq!(Potential::Identity.constant_value(), None);
    }

    #[test]
    fn moebius_pole_in_domain_rejected() {
        let r = Branch::new((0.0, 1.0), BranchExpr::Moebius { a: 1.0, b: 0.0, c: -2.0, d: 1.0 }, None);
        assert!(r.is_err());
    }
}
