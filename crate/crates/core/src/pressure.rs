//! The induced pressure `P̃(b,q,s)` as a certified bracket, membership in
//! the finiteness domain, the pressure-equation solver `p(b,q)`, and
//! first/second derivatives of `p`.
//!
//! The truncated successor graph carries weights `exp(−qΦ̄ − b·log|F'| − sR)`
//! per edge, taken at the inf/sup ends of the cylinder brackets. Collatz–
//! Wielandt ratios of the power iterate certify `min ≤ ρ ≤ max` on the
//! truncated matrix even before convergence; the upper end is then extended
//! to the full countable system by a positive test vector whose tail values
//! follow the calibrated per-class decay profiles.

use serde::Serialize;

use crate::gibbs::GibbsApprox;
use crate::induced::{CylinderTable, TailClass};
use crate::numerics::{powexp_tail, richardson_onesided, Kahan};
use crate::oracle::LinearizedModel;
use crate::{Error, Result, Tolerances};

/// One evaluation point of the induced pressure.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PressureQuery {
    pub b: f64,
    pub q: f64,
    pub s: f64,
}

/// Two-sided enclosure of `P̃(b,q,s)` at a given truncation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PressureBracket {
    pub lower: f64,
    pub upper: f64,
    pub n_max: u32,
    pub depth: u32,
    /// Portion of `upper` contributed by return times beyond the cap.
    pub tail_bound: f64,
}

impl PressureBracket {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Result of solving `P̃(b,q,s) = 0` in `s`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DomainFlag {
    /// `true` when the root lies strictly above `Λ_q` by the margin.
    pub in_n: bool,
    /// The computed `p(b,q)`: the root when one exists, else `Λ_q`.
    pub p_value: f64,
    /// `|P̃|` midpoint residual at the returned point.
    pub residual: f64,
    /// Bracket width at the returned point.
    pub width: f64,
    /// Width of the final sign-changing enclosure of the root in value
    /// space: midpoint pressure at the last positive end minus the last
    /// negative end. The residual is bounded by this via the intermediate
    /// value property. Fallback and boundary returns, which enclose no
    /// root, repeat the residual here.
    pub root_enclosure: f64,
    /// `Λ_q` for this `(q, potential)`.
    pub lambda_q: f64,
    /// Set when no root exists above `Λ_q` and the variational fallback
    /// `p = Λ_q` was returned.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FinClass {
    Finite,
    Divergent,
    Inconclusive,
}

/// Outcome of the one-cylinder series finiteness test.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FinReport {
    pub class: FinClass,
    /// Partial sum of the sup-weight one-cylinder series over enumerated words.
    pub partial_sum: f64,
    /// Calibrated upper tail estimate, when the comparison series converges.
    pub tail_upper: Option<f64>,
    /// Worst per-class effective geometric rate of the sup-weight tail.
    pub s_eff_sup: f64,
    /// Same for the inf-weight tail (certifies divergence when negative).
    pub s_eff_inf: f64,
    /// Polynomial comparison exponent `b(1+γ)`.
    pub exponent: f64,
}

/// First-derivative report: Gibbs-statistics values with a finite-difference
/// cross-check.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DerivativeReport {
    pub p: f64,
    pub db: f64,
    pub dq: f64,
    pub db_fd: f64,
    pub dq_fd: f64,
    /// Largest relative discrepancy between the two estimators.
    pub discrepancy: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SecondDerivReport {
    pub d2q: f64,
    /// `σ² = ∂²q p · μ̃(R)`.
    pub sigma2: f64,
    pub r_mean: f64,
    /// `false` when the second difference violates convexity beyond tolerance.
    pub convex_ok: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OneSidedReport {
    pub right: f64,
    pub left: f64,
    pub right_monotone: bool,
    pub left_monotone: bool,
}

/// Inf/sup end picks for a weight term `exp(−coef · value)`: the sup weight
/// takes the bracket end minimizing `coef · value`.
#[inline]
pub(crate) fn pick_sup(bracket: (f64, f64), coef: f64) -> f64 {
    if coef >= 0.0 {
        bracket.0
    } else {
        bracket.1
    }
}

#[inline]
pub(crate) fn pick_inf(bracket: (f64, f64), coef: f64) -> f64 {
    if coef >= 0.0 {
        bracket.1
    } else {
        bracket.0
    }
}

/// One tail class with the `(b,q)`-dependent pieces folded in: the sup
/// weight of level `m > cap` is bounded by `a_sup · m^(−exponent) ·
/// exp(−(s + rate)·m)`.
pub(crate) struct TailTerm {
    pub(crate) a_sup: f64,
    pub(crate) rate: f64,
    pub(crate) cap: u32,
    first2_ctx: usize,
    last2_ctx: usize,
}

pub(crate) fn tail_term(tc: &TailClass, b: f64, q: f64, e: usize) -> TailTerm {
    let phi_dir = pick_sup(tc.phi_cap, q);
    let inc_dir = if q >= 0.0 { tc.inc_lo } else { tc.inc_hi };
    let c_dir = if b >= 0.0 { tc.logd_lo_c } else { tc.logd_hi_c };
    TailTerm {
        a_sup: (-q * phi_dir + q * inc_dir * tc.cap as f64 - b * c_dir).exp(),
        rate: q * inc_dir,
        cap: tc.cap,
        first2_ctx: tc.left as usize * e + tc.mid as usize,
        last2_ctx: tc.mid as usize * e + tc.right as usize,
    }
}

/// A `(b,q)`-specialized weighted successor system on which `s` varies
/// cheaply: edge weights factor as `base · exp(−s·r(source))`.
pub struct QuerySystem {
    pub b: f64,
    pub q: f64,
    pub depth: u32,
    n_max: u32,
    n_states: usize,
    pub(crate) row_ptr: Vec<usize>,
    pub(crate) col: Vec<u32>,
    base_lo: Vec<f64>,
    pub(crate) base_hi: Vec<f64>,
    /// Return time per state, as f64.
    pub(crate) r: Vec<f64>,
    /// Word-level sup weight base per state (bounds any out-edge weight).
    word_sup_base: Vec<f64>,
    first2_ctx: Vec<u32>,
    last2_ctx: Vec<u32>,
    n_ctx: usize,
    tails: Vec<TailTerm>,
    /// Per context: tail classes whose words start with that context.
    ctx_tail: Vec<Vec<usize>>,
    /// Polynomial comparison exponent `b(1+γ)` for the tail series.
    exponent: f64,
}

impl QuerySystem {
    /// Specialize a cylinder table to `(b, q)` at bracket refinement `depth`
    /// (0 = word-level brackets, 1 = edge-resolved brackets).
    pub fn new(table: &CylinderTable, b: f64, q: f64, depth: u32) -> Result<Self> {
        if depth > 1 {
            return Err(Error::InvalidParameter(
                "pressure depth beyond 1 is not supported; refine cylinders instead".into(),
            ));
        }
        let n_states = table.n_states();
        let n_edges = table.n_edges();
        let mut base_lo = vec![0.0; n_edges];
        let mut base_hi = vec![0.0; n_edges];
        for st in 0..n_states {
            for e in table.row_ptr[st]..table.row_ptr[st + 1] {
                let (phi, logd) = if depth == 0 {
                    (table.phi1[st], table.logd1[st])
                } else {
                    (table.e_phi[e], table.e_logd[e])
                };
                base_lo[e] = (-q * pick_inf(phi, q) - b * pick_inf(logd, b)).exp();
                base_hi[e] = (-q * pick_sup(phi, q) - b * pick_sup(logd, b)).exp();
            }
        }
        let word_sup_base: Vec<f64> = (0..n_states)
            .map(|st| (-q * pick_sup(table.phi1[st], q) - b * pick_sup(table.logd1[st], b)).exp())
            .collect();
        let e = table.alphabet.n_branches();
        let n_ctx = e * e;
        let ctx = |pair: (u8, u8)| pair.0 as u32 * e as u32 + pair.1 as u32;
        let first2_ctx: Vec<u32> =
            table.alphabet.words.iter().map(|w| ctx(w.first2())).collect();
        let last2_ctx: Vec<u32> = table.alphabet.words.iter().map(|w| ctx(w.last2())).collect();
        let exponent = b * (1.0 + table.gamma);
        let tails: Vec<TailTerm> = table.tails.iter().map(|tc| tail_term(tc, b, q, e)).collect();
        let mut ctx_tail = vec![Vec::new(); n_ctx];
        for (k, t) in tails.iter().enumerate() {
            ctx_tail[t.first2_ctx].push(k);
        }
        Ok(QuerySystem {
            b,
            q,
            depth,
            n_max: table.alphabet.n_max,
            n_states,
            row_ptr: table.row_ptr.clone(),
            col: table.col.clone(),
            base_lo,
            base_hi,
            r: table.r.iter().map(|&r| r as f64).collect(),
            word_sup_base,
            first2_ctx,
            last2_ctx,
            n_ctx,
            tails,
            ctx_tail,
            exponent,
        })
    }

    /// Exact-weight full-shift system matching the linearized oracle model
    /// at the same truncation: `K` states per level `n ≤ n_max`, every state
    /// reaching every state, weight `c^{−b} n^{−b(1+γ)} e^{−qn}` per source.
    pub fn from_linearized(model: &LinearizedModel, n_max: u32, b: f64, q: f64) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidParameter("n_max must be at least 1".into()));
        }
        let k = model.k_per_level as usize;
        let n_states = k * n_max as usize;
        let mut base = Vec::with_capacity(n_states);
        let mut r = Vec::with_capacity(n_states);
        for n in 1..=n_max {
            let nf = n as f64;
            let w = model.scale.powf(-b) * nf.powf(-b * (1.0 + model.gamma)) * (-q * nf).exp();
            for _ in 0..k {
                base.push(w);
                r.push(nf);
            }
        }
        let mut row_ptr = Vec::with_capacity(n_states + 1);
        let mut col = Vec::with_capacity(n_states * n_states);
        row_ptr.push(0);
        for st in 0..n_states {
            col.extend(0..n_states as u32);
            row_ptr.push((st + 1) * n_states);
        }
        let mut base_lo = vec![0.0; n_states * n_states];
        for st in 0..n_states {
            for e in row_ptr[st]..row_ptr[st + 1] {
                base_lo[e] = base[st];
            }
        }
        Ok(QuerySystem {
            b,
            q,
            depth: 1,
            n_max,
            n_states,
            row_ptr,
            col,
            base_hi: base_lo.clone(),
            base_lo,
            r,
            word_sup_base: base,
            first2_ctx: vec![0; n_states],
            last2_ctx: vec![0; n_states],
            n_ctx: 1,
            tails: Vec::new(),
            ctx_tail: vec![Vec::new()],
            exponent: b * (1.0 + model.gamma),
        })
    }

    /// Word-level sup weight base (without the `exp(−sR)` factor).
    pub(crate) fn word_sup_weight(&self, st: usize) -> f64 {
        self.word_sup_base[st]
    }

    /// Evaluate the pressure bracket at `s`, reusing `warm` eigenvector
    /// guesses across calls.
    pub fn bracket(&self, s: f64, tols: &Tolerances, warm: &mut WarmStart) -> Result<PressureBracket> {
        let sf: Vec<f64> = self.r.iter().map(|&r| (-s * r).exp()).collect();
        let lo = power_iter(
            &self.row_ptr,
            &self.col,
            &self.base_lo,
            &sf,
            warm.lo.take(),
            tols.power_iter,
            tols.power_iter_max,
        )?;
        let hi = power_iter(
            &self.row_ptr,
            &self.col,
            &self.base_hi,
            &sf,
            warm.hi.take(),
            tols.power_iter,
            tols.power_iter_max,
        )?;
        let (upper_rho, trunc_rho) = self.tail_extension(s, &sf, &hi)?;
        let bracket = PressureBracket {
            lower: lo.rho_min.max(0.0).ln(),
            upper: upper_rho.ln(),
            n_max: self.n_max,
            depth: self.depth,
            tail_bound: upper_rho.ln() - trunc_rho.ln(),
        };
        warm.lo = Some(lo.v);
        warm.hi = Some(hi.v);
        Ok(bracket)
    }

    /// Extend the truncated sup-weight Collatz–Wielandt bound to the full
    /// countable system. The test vector keeps the Perron vector on
    /// truncated states and decays along the calibrated class profiles on
    /// tail states; every trial scaling yields a certified bound and the
    /// best is kept.
    fn tail_extension(&self, s: f64, sf: &[f64], hi: &PowerData) -> Result<(f64, f64)> {
        let trunc_rho = hi.rho_max.max(1e-300);
        if self.tails.is_empty() {
            return Ok((trunc_rho, trunc_rho));
        }
        // Per-class tail mass B_c = Σ_{m>cap} sup-weight(m); divergence of
        // any class means the sup series has no finite tail.
        let mut b_mass = Vec::with_capacity(self.tails.len());
        for t in &self.tails {
            match powexp_tail(self.exponent, s + t.rate, t.cap as u64) {
                Ok(v) => b_mass.push(t.a_sup * v),
                Err(_) => return Ok((f64::INFINITY, trunc_rho)),
            }
        }
        // Truncated-state vector mass per starting context.
        let mut s0 = vec![0.0f64; self.n_ctx];
        for st in 0..self.n_states {
            s0[self.first2_ctx[st] as usize] += hi.v[st];
        }
        let mut best = f64::INFINITY;
        // The trial grid spans twelve decades: near the critical line the
        // discarded levels can dominate the truncated radius by orders of
        // magnitude, and only a strongly deflated test vector converges.
        for g in
            [1e-12, 1e-9, 1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0, 3.0, 10.0, 1e3, 1e6, 1e9, 1e12]
        {
            let kappa = 1.0 / (trunc_rho * (1.0 + g));
            // Fixpoint Ŝ = S0 + κ·A·Ŝ for the context sums including tail
            // states; skip scalings where it diverges.
            let mut shat = s0.clone();
            let mut ok = false;
            for _ in 0..500 {
                let mut next = s0.clone();
                for (k, t) in self.tails.iter().enumerate() {
                    next[t.first2_ctx] += kappa * b_mass[k] * shat[t.last2_ctx];
                }
                let mut delta = 0.0f64;
                let mut scale = 1.0f64;
                for (a, b2) in next.iter().zip(&shat) {
                    delta = delta.max((a - b2).abs());
                    scale = scale.max(a.abs());
                }
                shat = next;
                if scale > 1e18 {
                    break;
                }
                if delta <= 1e-14 * scale {
                    ok = true;
                    break;
                }
            }
            if !ok {
                continue;
            }
            // Tail out-mass seen from each truncated state's ending context.
            let mut g_ctx = vec![0.0f64; self.n_ctx];
            for ctx in 0..self.n_ctx {
                for &k in &self.ctx_tail[ctx] {
                    g_ctx[ctx] += b_mass[k] * shat[self.tails[k].last2_ctx];
                }
            }
            let mut t_max = 0.0f64;
            for st in 0..self.n_states {
                let gv = g_ctx[self.last2_ctx[st] as usize];
                if gv > 0.0 {
                    let w = self.word_sup_base[st] * sf[st];
                    t_max = t_max.max(w * gv / hi.v[st].max(1e-300));
                }
            }
            let bound = (trunc_rho + kappa * t_max).max(1.0 / kappa);
            best = best.min(bound);
        }
        // No convergent scaling: the countable extension genuinely dominates
        // every trial vector, so only the (infinite) trivial bound remains.
        Ok((best, trunc_rho))
    }
}

/// Reusable eigenvector guesses for the two weight matrices.
#[derive(Default)]
pub struct WarmStart {
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
}

pub(crate) struct PowerData {
    pub(crate) rho_min: f64,
    pub(crate) rho_max: f64,
    pub(crate) v: Vec<f64>,
}

/// Shifted power iteration with Collatz–Wielandt certification: returns
/// `min_ω (Mv)_ω/v_ω` and `max_ω (Mv)_ω/v_ω` from the final iterate, which
/// enclose the spectral radius of the truncated matrix regardless of
/// convergence state. The diagonal shift `θ = ρ̂/2` makes periodic graphs
/// (the alternating two-block families) converge geometrically.
pub(crate) fn power_iter(
    row_ptr: &[usize],
    col: &[u32],
    base: &[f64],
    sf: &[f64],
    warm: Option<Vec<f64>>,
    tol: f64,
    cap: usize,
) -> Result<PowerData> {
    let n = sf.len();
    let mut x = match warm {
        Some(v) if v.len() == n && v.iter().all(|&t| t.is_finite() && t > 0.0) => v,
        _ => vec![1.0; n],
    };
    let mut y = vec![0.0; n];
    let mut theta = 0.0f64;
    let mut rho_min = 0.0;
    let mut rho_max = f64::INFINITY;
    let mut best_spread = f64::INFINITY;
    let mut stalled = 0usize;
    let cap = cap.max(16);
    for iter in 0..cap {
        matvec(row_ptr, col, base, sf, theta, &x, &mut y);
        let mut mn = f64::INFINITY;
        let mut mx: f64 = 0.0;
        let mut norm: f64 = 0.0;
        for (yi, xi) in y.iter().zip(&x) {
            let ratio = yi / xi;
            mn = mn.min(ratio);
            mx = mx.max(ratio);
            norm = norm.max(*yi);
        }
        rho_min = mn - theta;
        rho_max = mx - theta;
        if norm <= 0.0 || !norm.is_finite() {
            // All rows annihilated (deep underflow): radius is effectively 0.
            return Ok(PowerData { rho_min: 0.0, rho_max: 0.0, v: vec![1.0; n] });
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
        if iter == 0 {
            // Shift scale from the max-norm growth factor, which stays near
            // ρ even when a warm vector's coordinates are skewed (the raw
            // max ratio can be arbitrarily large there and would make the
            // shifted iteration crawl).
            theta = 0.5 * norm;
            continue;
        }
        // Certified window width relative to the unshifted radius.
        let spread = (mx - mn) / (mx - theta).abs().max(1e-300);
        if spread < tol {
            return Ok(PowerData { rho_min, rho_max, v: x });
        }
        if spread < best_spread * (1.0 - 1e-4) {
            best_spread = spread;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > 200 && iter > 500 {
                break;
            }
        }
    }
    let spread = (rho_max - rho_min) / rho_max.abs().max(1e-300);
    if spread > 1e-3 {
        return Err(Error::numeric("power iteration did not converge", spread));
    }
    Ok(PowerData { rho_min, rho_max, v: x })
}

fn matvec(
    row_ptr: &[usize],
    col: &[u32],
    base: &[f64],
    sf: &[f64],
    theta: f64,
    x: &[f64],
    y: &mut [f64],
) {
    let row = |st: usize, xs: &[f64]| -> f64 {
        let mut acc = Kahan::new();
        for e in row_ptr[st]..row_ptr[st + 1] {
            acc.add(base[e] * xs[col[e] as usize]);
        }
        sf[st] * acc.value() + theta * xs[st]
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if y.len() >= 4096 {
            y.par_iter_mut().enumerate().for_each(|(st, yv)| *yv = row(st, x));
            return;
        }
    }
    for (st, yv) in y.iter_mut().enumerate() {
        *yv = row(st, x);
    }
}

/// Certified bracket of the induced pressure at one query point.
///
/// Errors with a domain error when the calibrated tail diverges at this `s`
/// (the sup-weight series has no finite upper bound), and a numeric error
/// when the power iteration stalls.
pub fn induced_pressure(
    table: &CylinderTable,
    query: &PressureQuery,
    depth: u32,
    tols: &Tolerances,
) -> Result<PressureBracket> {
    let sys = QuerySystem::new(table, query.b, query.q, depth)?;
    let mut warm = WarmStart::default();
    let bracket = sys.bracket(query.s, tols, &mut warm)?;
    if !bracket.upper.is_finite() {
        return Err(Error::Domain(format!(
            "tail of the sup-weight series diverges at s = {}; only s above the critical line is representable",
            query.s
        )));
    }
    Ok(bracket)
}

/// Classify `(b,q,s)` against the finiteness domain of the one-cylinder
/// series: partial sums over enumerated words plus calibrated per-class
/// tail comparisons. Near the critical line the verdict is `Inconclusive`
/// rather than a guess.
pub fn is_finite(table: &CylinderTable, query: &PressureQuery, tols: &Tolerances) -> FinReport {
    let (b, q, s) = (query.b, query.q, query.s);
    let exponent = b * (1.0 + table.gamma);
    let mut partial = Kahan::new();
    for st in 0..table.n_states() {
        let w = (-q * pick_sup(table.phi1[st], q)
            - b * pick_sup(table.logd1[st], b)
            - s * table.r[st] as f64)
            .exp();
        partial.add(w);
    }
    let partial_sum = partial.value();
    if table.tails.is_empty() {
        return FinReport {
            class: FinClass::Inconclusive,
            partial_sum,
            tail_upper: None,
            s_eff_sup: f64::NAN,
            s_eff_inf: f64::NAN,
            exponent,
        };
    }
    let mut s_eff_sup = f64::INFINITY;
    let mut s_eff_inf = f64::INFINITY;
    for tc in &table.tails {
        let inc_sup = if q >= 0.0 { tc.inc_lo } else { tc.inc_hi };
        let inc_inf = if q >= 0.0 { tc.inc_hi } else { tc.inc_lo };
        s_eff_sup = s_eff_sup.min(s + q * inc_sup);
        s_eff_inf = s_eff_inf.min(s + q * inc_inf);
    }
    let e = table.alphabet.n_branches();
    let tail_upper = table
        .tails
        .iter()
        .map(|tc| {
            let t = tail_term(tc, b, q, e);
            powexp_tail(exponent, s + t.rate, t.cap as u64).map(|v| t.a_sup * v)
        })
        .try_fold(0.0f64, |acc, r| r.map(|v| acc + v))
        .ok();
    let band = tols.fin_geo_band;
    let class = if s_eff_sup > band && tail_upper.is_some() {
        FinClass::Finite
    } else if s_eff_inf < -band {
        FinClass::Divergent
    } else if exponent > 1.0 + tols.fin_poly_band && s_eff_sup >= -1e-12 && tail_upper.is_some() {
        FinClass::Finite
    } else if exponent < 1.0 - tols.fin_poly_band && s_eff_inf <= 1e-12 {
        FinClass::Divergent
    } else {
        FinClass::Inconclusive
    };
    FinReport { class, partial_sum, tail_upper, s_eff_sup, s_eff_inf, exponent }
}

/// Largest neutral drift `Λ_q = max_i (−q α_i)` reconstructed from the
/// table's recorded parabolic values.
pub fn lambda_q_of(table: &CylinderTable, q: f64) -> f64 {
    table
        .alpha
        .iter()
        .map(|&(_, a)| -q * a)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solve `P̃(b,q,s) = 0` for `s = p(b,q)`.
///
/// Monotone root-finding on the bracket midpoint: doubling to bracket the
/// root from above, then interleaved secant/bisection. Where the root does
/// not exist above `Λ_q` (bracket-certified negative pressure), the
/// variational fallback `p = Λ_q` is returned with `fallback` set.
pub fn solve_p(table: &CylinderTable, b: f64, q: f64, depth: u32, tols: &Tolerances) -> Result<DomainFlag> {
    let lambda = lambda_q_of(table, q);
    let sys = QuerySystem::new(table, b, q, depth)?;
    let mut warm = WarmStart::default();
    let margin = tols.lambda_margin;
    let s_lo = lambda + margin;
    let at = |s: f64, warm: &mut WarmStart| -> Result<PressureBracket> { sys.bracket(s, tols, warm) };
    let first = at(s_lo, &mut warm)?;
    if first.upper < 0.0 {
        // Certified: pressure already negative arbitrarily close to Λ_q.
        return Ok(DomainFlag {
            in_n: false,
            p_value: lambda,
            residual: first.upper.abs(),
            width: first.width(),
            root_enclosure: first.upper.abs(),
            lambda_q: lambda,
            fallback: true,
        });
    }
    if first.mid() <= 0.0 {
        // Straddling zero at the margin: the root is inside the margin band.
        return Ok(DomainFlag {
            in_n: false,
            p_value: s_lo,
            residual: first.mid().abs(),
            width: first.width(),
            root_enclosure: first.mid().abs(),
            lambda_q: lambda,
            fallback: false,
        });
    }
    // Double upward until the midpoint turns negative.
    let mut hi = s_lo + 0.5;
    let mut f_hi = at(hi, &mut warm)?.mid();
    let mut doubles = 0;
    while f_hi > 0.0 {
        doubles += 1;
        if doubles > 64 {
            return Err(Error::numeric("no sign change found while doubling s", f_hi));
        }
        hi = s_lo + 2.0 * (hi - s_lo);
        f_hi = at(hi, &mut warm)?.mid();
    }
    let mut lo = s_lo;
    let mut f_lo = first.mid();
    let xtol = (tols.solve_s * 1e-5).max(5e-14);
    let mut prev: Option<(f64, f64)> = None;
    let mut last = (hi, f_hi);
    for _ in 0..200 {
        if hi - lo <= xtol {
            break;
        }
        let width = hi - lo;
        let mut x = f64::NAN;
        if let Some((xp, fp)) = prev {
            // Secant through the last two finite evaluations, clamped to
            // the shrinking bracket.
            let (xl, fl) = last;
            if fp.is_finite() && fl.is_finite() && (fl - fp).abs() > 1e-300 {
                let cand = xl - fl * (xl - xp) / (fl - fp);
                if cand > lo + 0.05 * width && cand < hi - 0.05 * width {
                    x = cand;
                }
            }
        }
        if !x.is_finite() {
            x = 0.5 * (lo + hi);
        }
        let f = at(x, &mut warm)?.mid();
        prev = Some(last);
        last = (x, f);
        if f > 0.0 {
            lo = x;
            f_lo = f;
        } else {
            hi = x;
            f_hi = f;
        }
    }
    let s_star = 0.5 * (lo + hi);
    let final_bracket = at(s_star, &mut warm)?;
    Ok(DomainFlag {
        in_n: s_star > lambda + margin,
        p_value: s_star,
        residual: final_bracket.mid().abs(),
        width: final_bracket.width(),
        root_enclosure: f_lo - f_hi,
        lambda_q: lambda,
        fallback: false,
    })
}

/// First derivatives of `p(b,q)`: Gibbs-statistics values (the projected
/// Lyapunov exponent and potential mean, with sign) cross-checked against
/// central finite differences of the solver.
pub fn pressure_derivatives(
    table: &CylinderTable,
    b: f64,
    q: f64,
    depth: u32,
    tols: &Tolerances,
) -> Result<DerivativeReport> {
    let sol = solve_p(table, b, q, depth, tols)?;
    if !sol.in_n {
        return Err(Error::Domain(format!(
            "({b}, {q}) is outside the differentiability domain: p = {} at Λ_q = {}",
            sol.p_value, sol.lambda_q
        )));
    }
    let gibbs = GibbsApprox::build(table, b, q, sol.p_value, tols)?;
    let st = gibbs.stats();
    let db = -st.logd_mean / st.r_mean;
    let dq = -st.phi_mean / st.r_mean;
    let h = tols.fd_step;
    let p = |bb: f64, qq: f64| -> Result<f64> { Ok(solve_p(table, bb, qq, depth, tols)?.p_value) };
    let db_fd = (p(b + h, q)? - p(b - h, q)?) / (2.0 * h);
    let dq_fd = (p(b, q + h)? - p(b, q - h)?) / (2.0 * h);
    let rel = |x: f64, y: f64| (x - y).abs() / x.abs().max(y.abs()).max(1e-9);
    Ok(DerivativeReport {
        p: sol.p_value,
        db,
        dq,
        db_fd,
        dq_fd,
        discrepancy: rel(db, db_fd).max(rel(dq, dq_fd)),
    })
}

/// Second derivative of `q ↦ p(b,q)` by central second differences, with
/// the variance reported through `σ² = ∂²q p · μ̃(R)`.
pub fn second_derivative_q(
    table: &CylinderTable,
    b: f64,
    q: f64,
    depth: u32,
    tols: &Tolerances,
) -> Result<SecondDerivReport> {
    let sol = solve_p(table, b, q, depth, tols)?;
    if !sol.in_n {
        return Err(Error::Domain(format!("({b}, {q}) is outside the differentiability domain")));
    }
    let h = tols.fd_step;
    let pm = solve_p(table, b, q - h, depth, tols)?.p_value;
    let pp = solve_p(table, b, q + h, depth, tols)?.p_value;
    let d2q = (pp - 2.0 * sol.p_value + pm) / (h * h);
    let gibbs = GibbsApprox::build(table, b, q, sol.p_value, tols)?;
    let r_mean = gibbs.stats().r_mean;
    Ok(SecondDerivReport {
        d2q,
        sigma2: d2q * r_mean,
        r_mean,
        convex_ok: d2q >= -tols.spectrum_dq.max(1e-6),
    })
}

/// One-sided derivatives of `q ↦ p(b,q)` by shrinking difference quotients
/// with first-order extrapolation; valid on all of the plane, including the
/// boundary of the differentiability domain.
pub fn one_sided_q_derivatives(
    table: &CylinderTable,
    b: f64,
    q: f64,
    depth: u32,
    tols: &Tolerances,
) -> Result<OneSidedReport> {
    let p0 = solve_p(table, b, q, depth, tols)?.p_value;
    let steps: Vec<f64> = (0..5).map(|k| 0.1 / (1 << k) as f64).collect();
    let mut right_q = Vec::with_capacity(steps.len());
    let mut left_q = Vec::with_capacity(steps.len());
    for &h in &steps {
        right_q.push((solve_p(table, b, q + h, depth, tols)?.p_value - p0) / h);
        left_q.push((p0 - solve_p(table, b, q - h, depth, tols)?.p_value) / h);
    }
    let monotone = |qs: &[f64]| -> bool {
        let scale = qs.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-9);
        let up = qs.windows(2).all(|w| w[1] >= w[0] - 1e-6 * scale);
        let down = qs.windows(2).all(|w| w[1] <= w[0] + 1e-6 * scale);
        up || down
    };
    Ok(OneSidedReport {
        right: richardson_onesided(&right_q),
        left: richardson_onesided(&left_q),
        right_monotone: monotone(&right_q),
        left_monotone: monotone(&left_q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::induced::CylinderTable;
    use crate::map::{farey_like, manneville_pomeau, Potential};
    use crate::oracle::{finite_subshift_thermo, LinearizedModel};

    fn tols() -> Tolerances {
        Tolerances::default()
    }

    fn mp_table(n_max: u32) -> CylinderTable {
        let m = manneville_pomeau(1.0).unwrap();
        CylinderTable::build(&m, &Potential::Identity, n_max).unwrap()
    }

    #[test]
    fn linearized_bracket_contains_capped_oracle() {
        let model = LinearizedModel::new(2, 1.0, 1.0);
        let n_max = 200u32;
        for (b, q, s) in [(1.0, 0.0, std::f64::consts::LN_2), (0.8, 0.1, 0.3), (1.2, -0.2, 0.6)] {
            let sys = QuerySystem::from_linearized(&model, n_max, b, q).unwrap();
            let mut warm = WarmStart::default();
            let br = sys.bracket(s, &tols(), &mut warm).unwrap();
            let mut capped = model.clone();
            capped.level_cap = Some(n_max as u64);
            let p = capped.pressure(b, q, s).unwrap();
            assert!(
                br.lower - 1e-9 <= p && p <= br.upper + 1e-9,
                "oracle {p} outside [{}, {}]",
                br.lower,
                br.upper
            );
            let rel = (br.mid() - p).abs() / p.abs().max(1e-9);
            assert!(rel < 1e-9, "midpoint deviates: {rel}");
        }
    }

    #[test]
    fn zero_potential_pressure_ignores_q() {
        let m = manneville_pomeau(1.0).unwrap();
        let zero = Potential::Polynomial { coeffs: vec![0.0] };
        let t = CylinderTable::build(&m, &zero, 16).unwrap();
        let tol = tols();
        let q0 = induced_pressure(&t, &PressureQuery { b: 0.3, q: 0.0, s: 0.4 }, 1, &tol).unwrap();
        let q7 = induced_pressure(&t, &PressureQuery { b: 0.3, q: 7.0, s: 0.4 }, 1, &tol).unwrap();
        assert_eq!(q0.lower, q7.lower);
        // The upper end picks up a ~1e-11 wobble from the padded increment
        // envelopes in the tail calibration (they are floored at 1e-9 even for
        // a potential that is identically zero), so exact equality is too much
        // to ask there.
        assert!((q0.upper - q7.upper).abs() < 1e-9, "{} vs {}", q0.upper, q7.upper);
    }

    #[test]
    fn pressure_strictly_decreasing_in_s_with_unit_gap() {
        let t = mp_table(32);
        let tol = tols();
        let (s1, s2) = (0.3, 0.5);
        let b1 = induced_pressure(&t, &PressureQuery { b: 0.4, q: 0.05, s: s1 }, 1, &tol).unwrap();
        let b2 = induced_pressure(&t, &PressureQuery { b: 0.4, q: 0.05, s: s2 }, 1, &tol).unwrap();
        // Gap at least (s2−s1)·min r = s2−s1 on both ends.
        assert!(b1.lower >= b2.lower + (s2 - s1) - 1e-10);
        assert!(b1.upper >= b2.upper + (s2 - s1) - 1e-10);
    }

    #[test]
    fn lower_end_nondecreasing_in_truncation() {
        let tol = tols();
        let q = PressureQuery { b: 0.4, q: 0.1, s: 0.25 };
        let small = induced_pressure(&mp_table(32), &q, 1, &tol).unwrap();
        let big = induced_pressure(&mp_table(64), &q, 1, &tol).unwrap();
        assert!(big.lower >= small.lower - 1e-12, "{} < {}", big.lower, small.lower);
    }

    #[test]
    fn edge_depth_tightens_bracket() {
        let t = mp_table(32);
        let tol = tols();
        let q = PressureQuery { b: 0.5, q: 0.2, s: 0.3 };
        let d0 = induced_pressure(&t, &q, 0, &tol).unwrap();
        let d1 = induced_pressure(&t, &q, 1, &tol).unwrap();
        assert!(d1.width() <= d0.width() + 1e-12, "{} > {}", d1.width(), d0.width());
        assert!(d1.width() < d0.width(), "edge refinement must make progress");
    }

    #[test]
    fn collatz_wielandt_matches_dense_eigenvalue() {
        // Assemble the sup matrix densely and compare the certified ratio
        // window against an independent eigensolver.
        let t = mp_table(12);
        let (b, q, s) = (0.5, 0.1, 0.35);
        let sys = QuerySystem::new(&t, b, q, 1).unwrap();
        let mut warm = WarmStart::default();
        let br = sys.bracket(s, &tols(), &mut warm).unwrap();
        let n = t.n_states();
        let mut dense = vec![vec![0.0f64; n]; n];
        for st in 0..n {
            for e in t.row_ptr[st]..t.row_ptr[st + 1] {
                dense[st][t.col[e] as usize] =
                    sys.base_hi[e] * (-s * t.r[st] as f64).exp();
            }
        }
        let thermo = finite_subshift_thermo(&dense).unwrap();
        let rho_ln = thermo.rho.ln();
        assert!(
            rho_ln >= br.upper - br.tail_bound - 1e-9 && rho_ln <= br.upper + 1e-9,
            "dense log-rho {rho_ln} vs upper {} (tail {})",
            br.upper,
            br.tail_bound
        );
    }

    #[test]
    fn solve_p_induced_entropy_cross_check() {
        // b = q = 0: the root of P̃(0,0,s) is the truncated coded-system
        // entropy; verify the root by an independent dense eigensolve.
        let t = mp_table(64);
        let sol = solve_p(&t, 0.0, 0.0, 1, &tols()).unwrap();
        assert!(sol.in_n && !sol.fallback);
        assert!(sol.p_value > 0.5, "induced entropy should be sizable: {}", sol.p_value);
        let n = t.n_states();
        let mut dense = vec![vec![0.0f64; n]; n];
        for st in 0..n {
            for e in t.row_ptr[st]..t.row_ptr[st + 1] {
                dense[st][t.col[e] as usize] = (-sol.p_value * t.r[st] as f64).exp();
            }
        }
        let thermo = finite_subshift_thermo(&dense).unwrap();
        assert!(
            thermo.rho.ln().abs() <= sol.width + 1e-6,
            "residual {} vs width {}",
            thermo.rho.ln().abs(),
            sol.width
        );
    }

    #[test]
    fn solve_p_farey_bipartite_graph() {
        let m = farey_like();
        let t = CylinderTable::build(&m, &Potential::Identity, 64).unwrap();
        let sol = solve_p(&t, 0.0, 0.0, 1, &tols()).unwrap();
        assert!(sol.in_n);
        let n = t.n_states();
        let mut dense = vec![vec![0.0f64; n]; n];
        for st in 0..n {
            for e in t.row_ptr[st]..t.row_ptr[st + 1] {
                dense[st][t.col[e] as usize] = (-sol.p_value * t.r[st] as f64).exp();
            }
        }
        let thermo = finite_subshift_thermo(&dense).unwrap();
        assert!(thermo.rho.ln().abs() <= sol.width + 1e-6);
    }

    #[test]
    fn solve_p_zero_potential_is_q_invariant() {
        let m = manneville_pomeau(1.0).unwrap();
        let zero = Potential::Polynomial { coeffs: vec![0.0] };
        let t = CylinderTable::build(&m, &zero, 32).unwrap();
        let a = solve_p(&t, 0.3, -1.0, 1, &tols()).unwrap();
        let b = solve_p(&t, 0.3, 2.0, 1, &tols()).unwrap();
        assert!((a.p_value - b.p_value).abs() < 1e-10);
    }

    #[test]
    fn solve_p_falls_back_beyond_the_root_region() {
        // Far above the dimension no root exists; the variational fallback
        // pins p to Λ_q = 0.
        let t = mp_table(32);
        let sol = solve_p(&t, 2.0, 0.0, 1, &tols()).unwrap();
        assert!(!sol.in_n);
        assert!(sol.fallback);
        assert_eq!(sol.p_value, 0.0);
    }

    #[test]
    fn fin_classification_matches_comparison_series() {
        let t = mp_table(32);
        let tol = tols();
        // Exponent b(1+γ) = 0.5 at the critical point: divergent.
        let div = is_finite(&t, &PressureQuery { b: 0.25, q: 0.0, s: 0.0 }, &tol);
        assert_eq!(div.class, FinClass::Divergent);
        // Safely above the critical line: finite for any (b, q).
        let fin = is_finite(&t, &PressureQuery { b: 0.7, q: 0.3, s: 0.1 }, &tol);
        assert_eq!(fin.class, FinClass::Finite);
        assert!(fin.tail_upper.unwrap() >= 0.0);
        // Exponent 2 at s = 0: finite by polynomial comparison.
        let fin2 = is_finite(&t, &PressureQuery { b: 1.0, q: 0.0, s: 0.0 }, &tol);
        assert_eq!(fin2.class, FinClass::Finite);
    }


    #[test]
    fn one_sided_derivatives_agree_in_the_interior()
    {
        let t = mp_table(48);
        let rep = one_sided_q_derivatives(&t, 0.4, 0.2, 1, &tols()).unwrap();
        assert!(rep.right_monotone && rep.left_monotone);
        assert!(
            (rep.right - rep.left).abs() < 2e-3,
            "interior point should be differentiable: {} vs {}",
            rep.right,
            rep.left
        );
    }
}
