//! Dimension of the limit set, the spectrum plateau, and the Birkhoff
//! spectrum's nested solve.
//!
//! The dimension is the root in `b` of `b ↦ P̃(b, 0, 0)` (the pressure
//! equation of the geometric potential), located by bisection on
//! bracket-certified signs so the answer carries a rigorous error bound.
//! A spectrum point `b(α)` off the plateau solves the Legendre-type system
//! `p_α(b, q) = 0`, `∂q p_α(b, q) = 0` with `p_α(b, q) = p(b, q) + qα`:
//! an inner monotone root-find in `q` (the optimality defect is
//! nondecreasing because `q ↦ p(b, q)` is convex) nested inside an outer
//! strictly-monotone solve in `b`, finished by Newton steps that use the
//! envelope derivative `∂b p_α = −λ`. On the plateau `b(α) = δ` by
//! definition of the interval `A`.

use serde::Serialize;

use crate::error::Error;
use crate::gibbs::{project_measure, GibbsApprox, MeasureStats, ProjectedRecord};
use crate::induced::CylinderTable;
use crate::pressure::{one_sided_q_derivatives, solve_p, QuerySystem, WarmStart};
use crate::{Result, Tolerances};

/// Relative half-width of the `γ` band around `2/δ − 1` inside which the
/// plateau case split is reported as inconclusive.
const CASE_BAND: f64 = 1e-3;

/// Agreement required between one-sided derivatives at the plateau and the
/// negated plateau endpoints before the plateau computation is flagged.
const ENDPOINT_TOL: f64 = 2e-2;

/// Expansion cap for the inner optimality root; beyond this the target
/// average is effectively outside the admissible range.
const Q_CAP: f64 = 256.0;

/// Bowen root of the truncated system with a certified error bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DimensionReport {
    /// Root of the bracket-midpoint pressure curve: the best point estimate
    /// the truncation offers. Truncation bias can place it slightly outside
    /// the certified interval (even above one for a full-branch map); `err`
    /// absorbs that.
    pub delta: f64,
    /// Distance from `delta` to the farther certified bound.
    pub err: f64,
    /// Largest `b` with bracket-certified positive pressure.
    pub certified_below: f64,
    /// Smallest `b` with bracket-certified negative pressure (or the domain
    /// edge `1` when negativity is never certified there).
    pub certified_above: f64,
}

/// Certified sign of the pressure bracket at `s = 0`.
#[derive(Clone, Copy, PartialEq)]
enum BracketSign {
    Positive,
    Negative,
    Straddle,
}

fn pressure_sign_at_zero(
    table: &CylinderTable,
    b: f64,
    tols: &Tolerances,
    warm: &mut WarmStart,
) -> Result<BracketSign> {
    let sys = QuerySystem::new(table, b, 0.0, 1)?;
    let br = sys.bracket(0.0, tols, warm)?;
    if br.lower > 0.0 {
        Ok(BracketSign::Positive)
    } else if br.upper < 0.0 {
        Ok(BracketSign::Negative)
    } else {
        Ok(BracketSign::Straddle)
    }
}

/// Root in `b` of the geometric-potential pressure `b ↦ P̃(b, 0, 0)`,
/// bisected on certified bracket signs over `(1/(1+γ) + margin, 1]`.
///
/// Both edges of the sign-ambiguous zone are located separately, so the
/// returned enclosure `delta ± err` accounts for truncation: everything
/// below `certified_below` has provably positive pressure and everything
/// above `certified_above` provably negative.
pub fn bowen_dimension(table: &CylinderTable, tols: &Tolerances) -> Result<DimensionReport> {
    let floor = 1.0 / (1.0 + table.gamma) + 1e-3;
    if !(floor < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "regularity exponent γ = {} leaves no room for a root in (1/(1+γ), 1]",
            table.gamma
        )));
    }
    let mut warm = WarmStart::default();
    if pressure_sign_at_zero(table, floor, tols, &mut warm)? != BracketSign::Positive {
        return Err(Error::Domain(format!(
            "pressure is not certified positive at the series-convergence edge b = {floor}; \
             the truncated system has no root in (1/(1+γ), 1]"
        )));
    }
    let top = pressure_sign_at_zero(table, 1.0, tols, &mut warm)?;
    if top == BracketSign::Positive {
        return Err(Error::Domain(
            "pressure is still certified positive at b = 1; full-branch systems must have a \
             root with δ ≤ 1, so the model or truncation is inconsistent"
                .into(),
        ));
    }
    // Largest b whose bracket is certified positive.
    let (mut lo, mut hi) = (floor, 1.0);
    for _ in 0..60 {
        if hi - lo <= 1e-6 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if pressure_sign_at_zero(table, mid, tols, &mut warm)? == BracketSign::Positive {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let certified_below = lo;
    // Smallest b whose bracket is certified negative, when one exists in
    // the interval at all.
    let certified_above = if top == BracketSign::Negative {
        let (mut lo, mut hi) = (certified_below, 1.0);
        for _ in 0..60 {
            if hi - lo <= 1e-6 {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if pressure_sign_at_zero(table, mid, tols, &mut warm)? == BracketSign::Negative {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    } else {
        1.0
    };
    // Point estimate: root of the bracket-midpoint curve. The midpoint curve
    // is the best single estimate the truncation offers; biased ends would
    // skew the root by half the bracket width, which the q-derivative checks
    // downstream cannot absorb. Truncation bias can push this root slightly
    // past the certified interval — even past b = 1 for a full-branch map —
    // and we follow it there rather than clamp: every later solve anchored at
    // `delta` (plateau analysis, endpoint derivatives) relies on the pressure
    // vanishing *at* `delta` in the truncated system, and a clamped estimate
    // would leave a residual kink at q = 0.
    let mid_at = |b: f64, warm: &mut WarmStart| -> Result<f64> {
        let sys = QuerySystem::new(table, b, 0.0, 1)?;
        Ok(sys.bracket(0.0, tols, warm)?.mid())
    };
    let (mut lo, mut hi) = (certified_below, certified_above);
    let mut step = 1e-2;
    while mid_at(hi, &mut warm)? > 0.0 {
        if step > 0.3 {
            return Err(Error::numeric(
                "midpoint pressure has no root near the certified interval",
                hi,
            ));
        }
        lo = hi;
        hi += step;
        step *= 2.0;
    }
    for _ in 0..60 {
        if hi - lo <= 1e-9 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid_at(mid, &mut warm)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta = 0.5 * (lo + hi);
    Ok(DimensionReport {
        delta,
        err: (delta - certified_below).max(certified_above - delta).max(0.0),
        certified_below,
        certified_above,
    })
}

/// The plateau interval `A` of the Birkhoff spectrum together with the data
/// that determined it.
#[derive(Debug, Clone, Serialize)]
pub struct PlateauInfo {
    pub delta: f64,
    pub gamma: f64,
    /// Case threshold `2/δ − 1`.
    pub threshold: f64,
    /// `γ > 2/δ − 1`: the measure of maximal dimension exists and its
    /// average joins the parabolic values in the hull.
    pub max_measure_case: bool,
    /// `γ` within the inconclusive band around the threshold; `alt_a`
    /// carries the interval of the opposite case.
    pub boundary_band: bool,
    pub alpha_p_min: f64,
    pub alpha_p_max: f64,
    /// Average of the potential under the dimension-attaining measure
    /// (present whenever the max-measure case is possible).
    pub mu_delta_phi: Option<f64>,
    pub a_lo: f64,
    pub a_hi: f64,
    /// The opposite-case interval, reported only inside the boundary band.
    pub alt_a: Option<(f64, f64)>,
    /// Tail of the return-time mean was not certified geometric/summable.
    pub tail_warning: bool,
}

/// Decide the plateau interval `A` at the given dimension estimate.
pub fn plateau(table: &CylinderTable, delta: f64, tols: &Tolerances) -> Result<PlateauInfo> {
    if table.alpha.is_empty() {
        return Err(Error::Structure(
            "no neutral branches recorded; the spectrum plateau is undefined".into(),
        ));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("nonpositive dimension {delta}")));
    }
    let gamma = table.gamma;
    let threshold = 2.0 / delta - 1.0;
    let diff = gamma - threshold;
    let band = CASE_BAND * (1.0 + threshold.abs());
    let boundary_band = diff.abs() <= band;
    let max_measure_case = diff > 0.0;
    let alpha_p_min =
        table.alpha.iter().map(|&(_, a)| a).fold(f64::INFINITY, f64::min);
    let alpha_p_max =
        table.alpha.iter().map(|&(_, a)| a).fold(f64::NEG_INFINITY, f64::max);

    // μ_δ(φ) is needed whenever the max-measure interval is in play.
    let (mu_delta_phi, tail_warning) = if max_measure_case || boundary_band {
        let sol = solve_p(table, delta, 0.0, 1, tols)?;
        let gb = GibbsApprox::build(table, delta, 0.0, sol.p_value, tols)?;
        let proj = project_measure(gb.stats())?;
        (Some(proj.alpha), proj.tail_warning)
    } else {
        (None, false)
    };

    let parabolic_interval = (alpha_p_min, alpha_p_max);
    let hull_interval = mu_delta_phi
        .map(|mu| (mu.min(alpha_p_min), mu.max(alpha_p_max)))
        .unwrap_or(parabolic_interval);
    let (a_lo, a_hi) = if max_measure_case { hull_interval } else { parabolic_interval };
    let alt_a = if boundary_band {
        Some(if max_measure_case { parabolic_interval } else { hull_interval })
    } else {
        None
    };
    Ok(PlateauInfo {
        delta,
        gamma,
        threshold,
        max_measure_case,
        boundary_band,
        alpha_p_min,
        alpha_p_max,
        mu_delta_phi,
        a_lo,
        a_hi,
        alt_a,
        tail_warning,
    })
}

// ---------------------------------------------------------------------------
// Admissible range of averages: minimum/maximum ratio cycles
// ---------------------------------------------------------------------------

/// Karp's minimum cycle mean over edge weights `w`, all-sources variant:
/// `d_k(v)` is the least weight of a `k`-edge walk ending at `v`.
fn min_cycle_mean(n: usize, row_ptr: &[usize], col: &[u32], w: &[f64]) -> f64 {
    let mut d = vec![f64::INFINITY; (n + 1) * n];
    d[..n].fill(0.0);
    for k in 1..=n {
        let (prev, rest) = d.split_at_mut(k * n);
        let prev = &prev[(k - 1) * n..];
        let cur = &mut rest[..n];
        for u in 0..n {
            let du = prev[u];
            if !du.is_finite() {
                continue;
            }
            for e in row_ptr[u]..row_ptr[u + 1] {
                let v = col[e] as usize;
                let cand = du + w[e];
                if cand < cur[v] {
                    cur[v] = cand;
                }
            }
        }
    }
    let mut best = f64::INFINITY;
    for v in 0..n {
        let dn = d[n * n + v];
        if !dn.is_finite() {
            continue;
        }
        let mut worst = f64::NEG_INFINITY;
        for k in 0..n {
            let dk = d[k * n + v];
            if dk.is_finite() {
                worst = worst.max((dn - dk) / (n - k) as f64);
            }
        }
        if worst.is_finite() {
            best = best.min(worst);
        }
    }
    best
}

/// Minimum over directed cycles of `Σ num / Σ den` (`den > 0`) by parametric
/// search: a cycle with ratio below `t` exists exactly when the weights
/// `num − t·den` admit a negative cycle, which Karp's minimum mean detects.
fn min_ratio_cycle(n: usize, row_ptr: &[usize], col: &[u32], num: &[f64], den: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for e in 0..num.len() {
        let r = num[e] / den[e];
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if !(lo < hi) {
        return lo;
    }
    let mut w = vec![0.0f64; num.len()];
    for _ in 0..60 {
        if hi - lo <= 1e-10 * (1.0 + hi.abs()) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        for e in 0..num.len() {
            w[e] = num[e] - mid * den[e];
        }
        if min_cycle_mean(n, row_ptr, col, &w) < 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Inner estimates of the admissible range of Birkhoff averages: extreme
/// ratio cycles of the truncated successor graph (using the conservative
/// bracket ends), merged with the neutral values, which are attained by the
/// point masses at the neutral fixed points. Truncation only removes
/// measures, so the true range contains the returned one.
pub fn alpha_range(table: &CylinderTable) -> Result<(f64, f64)> {
    if !table.irreducible {
        return Err(Error::Structure(
            "successor graph is reducible; cycle ranges are ill-defined".into(),
        ));
    }
    let n = table.r.len();
    let m = table.col.len();
    let mut num_hi = vec![0.0f64; m];
    let mut num_lo_neg = vec![0.0f64; m];
    let mut den = vec![0.0f64; m];
    for u in 0..n {
        for e in table.row_ptr[u]..table.row_ptr[u + 1] {
            num_hi[e] = table.e_phi[e].1;
            num_lo_neg[e] = -table.e_phi[e].0;
            den[e] = f64::from(table.r[u]);
        }
    }
    let cycles_min = min_ratio_cycle(n, &table.row_ptr, &table.col, &num_hi, &den);
    let cycles_max = -min_ratio_cycle(n, &table.row_ptr, &table.col, &num_lo_neg, &den);
    let mut lo = cycles_min;
    let mut hi = cycles_max;
    for &(_, a) in &table.alpha {
        lo = lo.min(a);
        hi = hi.max(a);
    }
    Ok((lo, hi))
}

// ---------------------------------------------------------------------------
// The nested spectrum solve
// ---------------------------------------------------------------------------

/// One point of the Birkhoff spectrum.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumPoint {
    pub alpha: f64,
    pub b_alpha: f64,
    /// Lagrange parameter of the defining system; absent on the plateau.
    pub q_alpha: Option<f64>,
    pub on_plateau: bool,
    /// The point sat within the membership band around `∂A` and both
    /// candidate answers were computed.
    pub band_flag: bool,
    pub stats: MeasureStats,
    pub projected: ProjectedRecord,
    /// `|p_α|` at the returned point.
    pub res_p: f64,
    /// `|∂q p_α|` at the returned point.
    pub res_dq: f64,
}

/// Value of the active neutral branch at the fallback sheet `p = Λ_q`,
/// i.e. the slope `−∂q Λ_q`.
fn active_parabolic(table: &CylinderTable, q: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0.0;
    for &(_, a) in &table.alpha {
        let v = -q * a;
        if v > best {
            best = v;
            arg = a;
        }
    }
    arg
}

#[derive(Clone)]
struct PointEval {
    /// `p_α(b, q) = p(b, q) + qα`.
    pa: f64,
    /// Optimality defect `∂q p_α = α + ∂q p`, nondecreasing in `q`.
    defect: f64,
    /// Projected Lyapunov exponent (envelope derivative is `−λ`).
    lambda: f64,
    interior: bool,
    gibbs: Option<(MeasureStats, ProjectedRecord)>,
}

fn eval_point(
    table: &CylinderTable,
    alpha: f64,
    b: f64,
    q: f64,
    tols: &Tolerances,
) -> Result<PointEval> {
    let sol = solve_p(table, b, q, 1, tols)?;
    let pa = sol.p_value + q * alpha;
    if sol.in_n {
        let gb = GibbsApprox::build(table, b, q, sol.p_value, tols)?;
        let stats = *gb.stats();
        let proj = project_measure(&stats)?;
        Ok(PointEval {
            pa,
            defect: alpha - proj.alpha,
            lambda: proj.lambda,
            interior: true,
            gibbs: Some((stats, proj)),
        })
    } else {
        // On the fallback sheet p = Λ_q, piecewise linear with slope −α_i of
        // the active neutral branch.
        Ok(PointEval {
            pa,
            defect: alpha - active_parabolic(table, q),
            lambda: f64::NAN,
            interior: false,
            gibbs: None,
        })
    }
}

/// Root of the nondecreasing optimality defect `q ↦ ∂q p_α(b, q)`.
fn inner_root(
    table: &CylinderTable,
    alpha: f64,
    b: f64,
    q_seed: f64,
    tols: &Tolerances,
    defect_goal: f64,
) -> Result<(f64, PointEval)> {
    let mut q0 = q_seed;
    let mut e0 = eval_point(table, alpha, b, q0, tols)?;
    if e0.defect.abs() <= defect_goal && e0.interior {
        return Ok((q0, e0));
    }
    // March against the defect's sign until it flips; convexity makes the
    // defect nondecreasing, so the flip brackets the unique root.
    let dir = if e0.defect > 0.0 { -1.0 } else { 1.0 };
    let mut step = 0.25;
    let (mut qa, mut ea, mut qb, mut eb);
    loop {
        let q1 = q0 + dir * step;
        if q1.abs() > Q_CAP {
            return Err(Error::Domain(format!(
                "optimality defect keeps one sign out to |q| = {Q_CAP}: α = {alpha} is too \
                 close to the edge of the admissible range"
            )));
        }
        let e1 = eval_point(table, alpha, b, q1, tols)?;
        if (e1.defect <= 0.0) != (e0.defect <= 0.0) {
            if e0.defect <= 0.0 {
                (qa, ea, qb, eb) = (q0, e0, q1, e1);
            } else {
                (qa, ea, qb, eb) = (q1, e1, q0, e0);
            }
            break;
        }
        q0 = q1;
        e0 = e1;
        step *= 2.0;
    }
    // qa has defect ≤ 0 ≤ defect at qb; secant where it behaves, bisection
    // otherwise.
    for _ in 0..80 {
        let width = qb - qa;
        let best = ea.defect.abs().min(eb.defect.abs());
        if width <= 1e-12 || best <= defect_goal {
            break;
        }
        let mut x = f64::NAN;
        let (fa, fb) = (ea.defect, eb.defect);
        if (fb - fa).abs() > 1e-300 {
            let cand = qa - fa * width / (fb - fa);
            if cand > qa + 0.05 * width && cand < qb - 0.05 * width {
                x = cand;
            }
        }
        if !x.is_finite() {
            x = qa + 0.5 * width;
        }
        let ex = eval_point(table, alpha, b, x, tols)?;
        if ex.defect <= 0.0 {
            qa = x;
            ea = ex;
        } else {
            qb = x;
            eb = ex;
        }
    }
    if ea.defect.abs() <= eb.defect.abs() {
        Ok((qa, ea))
    } else {
        Ok((qb, eb))
    }
}

/// Off-plateau nested solve for `(b(α), q(α))`. Outer bisection on the
/// strictly decreasing `g(b) = min_q p_α(b, q)` with envelope-Newton
/// acceleration once the root is bracketed.
fn off_plateau_solve(
    table: &CylinderTable,
    alpha: f64,
    info: &PlateauInfo,
    tols: &Tolerances,
    seed: Option<(f64, f64)>,
    coarse: bool,
) -> Result<(f64, f64, PointEval)> {
    let floor = 1.0 / (1.0 + table.gamma) + 1e-3;
    let ceiling = info.delta;
    let (p_goal, d_goal) = if coarse {
        (1e-3, 1e-2)
    } else {
        (0.5 * tols.spectrum_p, 0.5 * tols.spectrum_dq)
    };
    let (b_seed, q_seed) = seed.unwrap_or_else(|| {
        let q0 = if alpha > info.a_hi { -0.5 } else { 0.5 };
        ((ceiling - 0.05).max(floor + 1e-3), q0)
    });

    let b0 = b_seed.clamp(floor + 1e-6, ceiling);
    let (q0, e0) = inner_root(table, alpha, b0, q_seed, tols, d_goal)?;
    // Bracket the outer root: g is strictly decreasing in b.
    let (mut bl, mut bh);
    let (mut ql, mut qh);
    let (mut el, mut eh);
    if e0.pa > 0.0 {
        bl = b0;
        ql = q0;
        el = e0;
        let mut step = 0.02;
        loop {
            let b1 = (bl + step).min(ceiling);
            let (q1, e1) = inner_root(table, alpha, b1, ql, tols, d_goal)?;
            if e1.pa <= 0.0 {
                (bh, qh, eh) = (b1, q1, e1);
                break;
            }
            if b1 >= ceiling {
                return Err(Error::Domain(format!(
                    "p_α stays positive up to b = δ = {ceiling}: α = {alpha} lies inside the \
                     plateau at this tolerance"
                )));
            }
            bl = b1;
            ql = q1;
            el = e1;
            step *= 2.0;
        }
    } else {
        bh = b0;
        qh = q0;
        eh = e0;
        let mut step = 0.02;
        loop {
            let b1 = (bh - step).max(floor);
            let (q1, e1) = inner_root(table, alpha, b1, qh, tols, d_goal)?;
            if e1.pa > 0.0 {
                (bl, ql, el) = (b1, q1, e1);
                break;
            }
            if b1 <= floor {
                return Err(Error::Domain(format!(
                    "p_α is negative down to the series-convergence edge b = {floor}; \
                     α = {alpha} is outside the solvable range"
                )));
            }
            bh = b1;
            qh = q1;
            eh = e1;
            step *= 2.0;
        }
    }
    let _ = (&ql, &qh);

    let mut best: Option<(f64, f64, PointEval)> = None;
    for _ in 0..60 {
        // Envelope Newton from the endpoint with the smaller residual:
        // g'(b) = −λ at the inner optimum.
        let (bx, qx, ex) = if el.pa.abs() <= eh.pa.abs() {
            (bl, ql, &el)
        } else {
            (bh, qh, &eh)
        };
        let mut b1 = f64::NAN;
        if ex.interior && ex.lambda.is_finite() && ex.lambda > 0.0 {
            let cand = bx + ex.pa / ex.lambda;
            let w = bh - bl;
            if cand > bl + 0.02 * w && cand < bh - 0.02 * w {
                b1 = cand;
            }
        }
        if !b1.is_finite() {
            b1 = 0.5 * (bl + bh);
        }
        let (q1, e1) = inner_root(table, alpha, b1, qx, tols, d_goal)?;
        let done = e1.pa.abs() <= p_goal && e1.defect.abs() <= d_goal && e1.interior;
        match &best {
            Some((_, _, eb)) if eb.pa.abs() <= e1.pa.abs() => {}
            _ => best = Some((b1, q1, e1.clone())),
        }
        if done {
            return Ok(best.unwrap());
        }
        if e1.pa > 0.0 {
            bl = b1;
            ql = q1;
            el = e1;
        } else {
            bh = b1;
            qh = q1;
            eh = e1;
        }
        if bh - bl <= 1e-13 {
            break;
        }
    }
    let (b1, q1, e1) = best.ok_or_else(|| Error::numeric("spectrum solve made no progress", alpha))?;
    if coarse || (e1.pa.abs() <= tols.spectrum_p && e1.defect.abs() <= tols.spectrum_dq) {
        Ok((b1, q1, e1))
    } else {
        Err(Error::numeric(
            "spectrum residuals did not reach tolerance (|p_α|, |∂q p_α|) at the best iterate",
            e1.pa.abs().max(e1.defect.abs()),
        ))
    }
}

fn plateau_point(
    table: &CylinderTable,
    alpha: f64,
    info: &PlateauInfo,
    tols: &Tolerances,
    band_flag: bool,
) -> Result<SpectrumPoint> {
    let sol = solve_p(table, info.delta, 0.0, 1, tols)?;
    let gb = GibbsApprox::build(table, info.delta, 0.0, sol.p_value, tols)?;
    let stats = *gb.stats();
    let projected = project_measure(&stats)?;
    Ok(SpectrumPoint {
        alpha,
        b_alpha: info.delta,
        q_alpha: None,
        on_plateau: true,
        band_flag,
        res_p: sol.p_value.abs(),
        res_dq: (alpha - projected.alpha).abs(),
        stats,
        projected,
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Zone {
    Deep,
    Band,
    Off,
}

fn classify(alpha: f64, info: &PlateauInfo, band: f64) -> Zone {
    let near_edge =
        (alpha - info.a_lo).abs() <= band || (alpha - info.a_hi).abs() <= band;
    if near_edge {
        Zone::Band
    } else if alpha > info.a_lo && alpha < info.a_hi {
        Zone::Deep
    } else {
        Zone::Off
    }
}

/// Solve for the spectrum point at one target average `α`.
///
/// Inside the plateau the answer is `b = δ` with the dimension-attaining
/// measure's statistics. Within the membership band around `∂A` both
/// candidates are computed and the larger dimension is reported with
/// [`SpectrumPoint::band_flag`] set (the spectrum is continuous and equals
/// `δ` on `A`, so the band ambiguity is at most the band width). The
/// optional `seed` warm-starts the nested solve at `(b, q)`.
pub fn birkhoff_point(
    table: &CylinderTable,
    alpha: f64,
    info: &PlateauInfo,
    tols: &Tolerances,
    seed: Option<(f64, f64)>,
) -> Result<SpectrumPoint> {
    match classify(alpha, info, tols.plateau_band) {
        Zone::Deep => plateau_point(table, alpha, info, tols, false),
        Zone::Band => {
            let on = plateau_point(table, alpha, info, tols, true)?;
            match off_plateau_solve(table, alpha, info, tols, seed, false) {
                Ok((b, q, e)) if b > on.b_alpha => finish_off_point(alpha, b, q, e, true),
                _ => Ok(on),
            }
        }
        Zone::Off => {
            let (b, q, e) = off_plateau_solve(table, alpha, info, tols, seed, false)?;
            finish_off_point(alpha, b, q, e, false)
        }
    }
}

fn finish_off_point(
    alpha: f64,
    b: f64,
    q: f64,
    e: PointEval,
    band_flag: bool,
) -> Result<SpectrumPoint> {
    let (stats, projected) = e.gibbs.ok_or_else(|| {
        Error::numeric("attaining measure unavailable: the solve ended on the fallback sheet", b)
    })?;
    Ok(SpectrumPoint {
        alpha,
        b_alpha: b,
        q_alpha: Some(q),
        on_plateau: false,
        band_flag,
        res_p: e.pa.abs(),
        res_dq: e.defect.abs(),
        stats,
        projected,
    })
}

/// One grid entry of [`spectrum_curve`]; failures are recorded, not fatal.
#[derive(Debug, Clone, Serialize)]
pub struct CurvePoint {
    pub alpha: f64,
    pub point: Option<SpectrumPoint>,
    pub error: Option<String>,
}

/// Evaluate the spectrum on a grid of averages.
///
/// A sequential coarse pass walks the grid once with loose tolerances,
/// propagating `(b, q)` seeds between neighbours; the full-tolerance solves
/// then run per point from those fixed seeds (in parallel under the
/// `parallel` feature), so results are deterministic and independent of
/// thread count.
pub fn spectrum_curve(
    table: &CylinderTable,
    alphas: &[f64],
    info: &PlateauInfo,
    tols: &Tolerances,
) -> Vec<CurvePoint> {
    let mut seeds: Vec<Option<(f64, f64)>> = vec![None; alphas.len()];
    let mut carry: Option<(f64, f64)> = None;
    for (i, &alpha) in alphas.iter().enumerate() {
        if classify(alpha, info, tols.plateau_band) == Zone::Deep {
            carry = None;
            continue;
        }
        match off_plateau_solve(table, alpha, info, tols, carry, true) {
            Ok((b, q, _)) => {
                seeds[i] = Some((b, q));
                carry = Some((b, q));
            }
            Err(_) => {
                seeds[i] = carry;
            }
        }
    }
    let solve_one = |(&alpha, &seed): (&f64, &Option<(f64, f64)>)| -> CurvePoint {
        match birkhoff_point(table, alpha, info, tols, seed) {
            Ok(p) => CurvePoint { alpha, point: Some(p), error: None },
            Err(e) => CurvePoint { alpha, point: None, error: Some(e.to_string()) },
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        alphas
            .par_iter()
            .zip(seeds.par_iter())
            .map(solve_one)
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        alphas.iter().zip(seeds.iter()).map(solve_one).collect()
    }
}

/// Consistency report for the plateau endpoints against the one-sided
/// derivatives of `p` in `q` at `(δ, 0)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlateauCheck {
    pub right: f64,
    pub left: f64,
    pub expected_right: f64,
    pub expected_left: f64,
    pub mismatch: f64,
    pub consistent: bool,
    /// One-sided difference quotients behaved monotonically; when false the
    /// estimates themselves are suspect.
    pub one_sided_monotone: bool,
}

/// Compare the plateau interval against the one-sided `q`-derivatives of
/// the pressure at `(δ, 0)`: the right derivative must be `−min A` and the
/// left derivative `−max A`.
pub fn plateau_endpoint_check(
    table: &CylinderTable,
    info: &PlateauInfo,
    tols: &Tolerances,
) -> Result<PlateauCheck> {
    let os = one_sided_q_derivatives(table, info.delta, 0.0, 1, tols)?;
    let expected_right = -info.a_lo;
    let expected_left = -info.a_hi;
    let mismatch =
        (os.right - expected_right).abs().max((os.left - expected_left).abs());
    Ok(PlateauCheck {
        right: os.right,
        left: os.left,
        expected_right,
        expected_left,
        mismatch,
        consistent: mismatch <= ENDPOINT_TOL,
        one_sided_monotone: os.right_monotone && os.left_monotone,
    })
}
