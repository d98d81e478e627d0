//! Independent brute-force reference implementations used to certify the
//! main engine on small instances: closed-form pressure for a linearized
//! full-shift model, exact finite-subshift thermodynamics via a dense
//! eigen-solve, exhaustive simple-cycle search, and seeded orbit sampling.
//!
//! Nothing in this module may depend on the engine's truncation or power
//! iteration machinery; agreement between the two sides is the whole point.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numerics::{self, Kahan};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// Linearized full-shift model
// ---------------------------------------------------------------------------

/// Full shift over levels `n = 1, 2, …` with `k_per_level` symbols at each
/// level and per-symbol weight `(scale · n^{1+gamma})^{-b} e^{-(s+q)n}`.
///
/// This idealizes an induced map whose level-`n` branch has derivative
/// exactly `scale · n^{1+gamma}`, return time `n`, and unit per-step
/// potential increment (so `q` simply shifts `s`).
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    pub k_per_level: u32,
    pub scale: f64,
    pub gamma: f64,
    /// `None` sums the full series (with an Euler–Maclaurin tail);
    /// `Some(n)` keeps only levels `1..=n`, matching a truncated engine run.
    pub level_cap: Option<u64>,
}

impl LinearizedModel {
    pub fn new(k_per_level: u32, scale: f64, gamma: f64) -> Self {
        LinearizedModel { k_per_level, scale, gamma, level_cap: None }
    }

    fn validate(&self) -> Result<()> {
        if self.k_per_level == 0 {
            return Err(Error::InvalidParameter("linearized model needs k_per_level ≥ 1".into()));
        }
        if !(self.scale > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "linearized model needs scale > 0 and gamma > 0, got scale = {}, gamma = {}",
                self.scale, self.gamma
            )));
        }
        Ok(())
    }

    /// `log( K · Σ_n (c n^{1+γ})^{-b} e^{-(s+q)n} )`, exact to ~1e-12.
    pub fn pressure(&self, b: f64, q: f64, s: f64) -> Result<f64> {
        self.validate()?;
        let a = b * (1.0 + self.gamma);
        let decay = s + q;
        let series = match self.level_cap {
            None => numerics::powexp_sum(a, decay)?,
            Some(cap) => {
                if decay < 0.0 {
                    return Err(Error::Domain(format!("negative exponential rate {decay}")));
                }
                let mut acc = Kahan::new();
                for n in 1..=cap {
                    let x = n as f64;
                    acc.add((-a * x.ln() - decay * x).exp());
                }
                acc.value()
            }
        };
        let total = self.k_per_level as f64 * self.scale.powf(-b) * series;
        if total <= 0.0 {
            return Err(Error::numeric("linearized weight sum underflow", total));
        }
        Ok(total.ln())
    }

    /// Root in `b` of `b ↦ pressure(b, 0, 0)`, i.e. the `b` with
    /// `K · c^{-b} · Σ n^{-b(1+γ)} = 1`. Requires `scale > 1` so the
    /// pressure eventually goes negative.
    pub fn bowen_root(&self) -> Result<f64> {
        self.validate()?;
        if self.level_cap.is_none() && self.scale <= 1.0 {
            return Err(Error::Domain(
                "linearized pressure stays nonnegative for scale ≤ 1; no root".into(),
            ));
        }
        // The series diverges as b(1+γ) ↓ 1, so pressure → +∞ there.
        let b_lo = 1.0 / (1.0 + self.gamma) + 1e-6;
        let p_lo = self.pressure(b_lo, 0.0, 0.0)?;
        if p_lo <= 0.0 {
            return Err(Error::Domain(format!("pressure already {p_lo} at left edge {b_lo}")));
        }
        let mut b_hi = b_lo + 0.5;
        let mut p_hi = self.pressure(b_hi, 0.0, 0.0)?;
        let mut doublings = 0;
        while p_hi > 0.0 {
            b_hi = b_lo + 2.0 * (b_hi - b_lo);
            p_hi = self.pressure(b_hi, 0.0, 0.0)?;
            doublings += 1;
            if doublings > 60 {
                return Err(Error::numeric("no sign change while expanding b bracket", p_hi));
            }
        }
        numerics::bisect(b_lo, b_hi, p_lo, 1e-12, 200, |b| {
            self.pressure(b, 0.0, 0.0).unwrap_or(f64::INFINITY)
        })
    }
}

// ---------------------------------------------------------------------------
// Exact thermodynamics of a finite weighted subshift
// ---------------------------------------------------------------------------

/// Perron data of a finite nonnegative weight matrix: pressure, both Perron
/// vectors, the induced Markov chain, its stationary law, and its entropy.
#[derive(Debug, Clone)]
pub struct FiniteThermo {
    /// Perron root of the weight matrix.
    pub rho: f64,
    /// `log rho`.
    pub pressure: f64,
    /// Right Perron vector, positive, normalized to unit sum.
    pub right: Vec<f64>,
    /// Left Perron vector, positive, normalized so that `left · right = 1`.
    pub left: Vec<f64>,
    /// Stationary distribution of the chain `P_ij = M_ij v_j / (rho v_i)`.
    pub stationary: Vec<f64>,
    /// Shannon entropy rate `−Σ_i π_i Σ_j P_ij log P_ij` of that chain.
    pub entropy: f64,
    transition: DMatrix<f64>,
}

impl FiniteThermo {
    /// Expectation `Σ_ij π_i P_ij a_ij` of an edge observable under the
    /// stationary chain. Entries of `a` on absent edges are ignored.
    pub fn edge_mean<F: Fn(usize, usize) -> f64>(&self, a: F) -> f64 {
        let n = self.stationary.len();
        let mut acc = Kahan::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.stationary[i] * self.transition[(i, j)];
                if w > 0.0 {
                    acc.add(w * a(i, j));
                }
            }
        }
        acc.value()
    }
}

fn strongly_connected(pattern: &DMatrix<f64>) -> bool {
    let n = pattern.nrows();
    let reach = |transpose: bool| -> usize {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                let w = if transpose { pattern[(j, i)] } else { pattern[(i, j)] };
                if w > 0.0 && !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count
    };
    reach(false) == n && reach(true) == n
}

/// Locate the Perron root of a nonnegative irreducible matrix by bisection
/// on the M-matrix characterization: `t > ρ(M)` exactly when the Z-matrix
/// `tI − M` maps some positive vector onto the positive orthant, which the
/// strictly positive solution of `(tI − M)x = e` certifies. The Frobenius
/// row-sum bounds bracket the root from the start. Deliberately avoids QR
/// eigen-iteration, which can cycle on matrices of period two (eigenvalue
/// pairs `±ρ`), and the engine's own power iteration.
fn perron_root_bisection(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let ones = DVector::<f64>::from_element(n, 1.0);
    let mut hi = (0..n)
        .map(|i| m.row(i).iter().sum::<f64>())
        .fold(0.0f64, f64::max);
    if !(hi > 0.0) {
        return 0.0;
    }
    hi *= 1.0 + 1e-12;
    let above = |t: f64| -> bool {
        let shifted = DMatrix::<f64>::identity(n, n) * t - m;
        match shifted.lu().solve(&ones) {
            Some(x) => x.iter().all(|&v| v > 0.0),
            None => false,
        }
    };
    let mut lo = 0.0f64;
    for _ in 0..200 {
        if hi - lo <= 1e-14 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if above(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Inverse iteration for the eigenvector of the eigenvalue of `m` nearest
/// `sigma`, started from the all-ones vector.
fn inverse_iteration(m: &DMatrix<f64>, sigma: f64) -> Result<DVector<f64>> {
    let n = m.nrows();
    let shifted = m - DMatrix::<f64>::identity(n, n) * sigma;
    let lu = shifted.lu();
    let mut v = DVector::<f64>::from_element(n, 1.0);
    for _ in 0..100 {
        let mut w = lu
            .solve(&v)
            .ok_or_else(|| Error::numeric("singular shift in inverse iteration", sigma))?;
        let norm = w.norm();
        if !(norm > 0.0) {
            return Err(Error::numeric("inverse iteration collapsed", norm));
        }
        w /= norm;
        if (&w - &v).norm() < 1e-15 || (&w + &v).norm() < 1e-15 {
            v = w;
            break;
        }
        v = w;
    }
    // The Perron vector is sign-definite; orient it positive.
    let s: f64 = v.iter().sum();
    if s < 0.0 {
        v = -v;
    }
    if v.iter().any(|&x| x <= 0.0) {
        return Err(Error::numeric(
            "inverse iteration produced a non-positive Perron vector",
            v.min(),
        ));
    }
    Ok(v)
}

/// Exact Perron data for a dense nonnegative weight matrix (`weights[i][j] =
/// 0` means no edge `i → j`). The nonzero pattern must be strongly
/// connected. Pressure comes from M-matrix bisection plus dense inverse
/// iteration, independently of the engine's power iteration.
pub fn finite_subshift_thermo(weights: &[Vec<f64>]) -> Result<FiniteThermo> {
    let n = weights.len();
    if n == 0 || weights.iter().any(|row| row.len() != n) {
        return Err(Error::InvalidParameter("weight matrix must be square and nonempty".into()));
    }
    if weights.iter().flatten().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
    }
    let m = DMatrix::<f64>::from_fn(n, n, |i, j| weights[i][j]);
    if !strongly_connected(&m) {
        return Err(Error::Structure("weight matrix is reducible".into()));
    }
    let rho0 = perron_root_bisection(&m);
    if !(rho0 > 0.0) {
        return Err(Error::numeric("zero spectral radius", rho0));
    }
    let shift = rho0 * (1.0 + 1e-9) + 1e-300;
    let v = inverse_iteration(&m, shift)?;
    let l = inverse_iteration(&m.transpose(), shift)?;
    // Rayleigh polish of the Perron root using both vectors.
    let rho = l.dot(&(&m * &v)) / l.dot(&v);
    let resid = (&m * &v - &v * rho).norm() / (rho * v.norm());
    if resid > 1e-9 {
        return Err(Error::numeric("Perron residual too large", resid));
    }

    let vsum: f64 = v.iter().sum();
    let right: Vec<f64> = v.iter().map(|x| x / vsum).collect();
    let lv: f64 = l.iter().zip(right.iter()).map(|(a, b)| a * b).sum();
    let left: Vec<f64> = l.iter().map(|x| x / lv).collect();

    let mut transition = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if weights[i][j] > 0.0 {
                transition[(i, j)] = weights[i][j] * right[j] / (rho * right[i]);
            }
        }
        let row_sum: f64 = transition.row(i).iter().sum();
        for j in 0..n {
            transition[(i, j)] /= row_sum;
        }
    }
    let stationary: Vec<f64> = (0..n).map(|i| left[i] * right[i]).collect();
    let mut h = Kahan::new();
    for i in 0..n {
        for j in 0..n {
            let p = transition[(i, j)];
            if p > 0.0 {
                h.add(-stationary[i] * p * p.ln());
            }
        }
    }
    Ok(FiniteThermo {
        rho,
        pressure: rho.ln(),
        right,
        left,
        stationary,
        entropy: h.value(),
        transition,
    })
}

/// Dimension at a prescribed Birkhoff average on a finite node-weighted
/// graph, by dense Lagrangian bisections with no reuse of the engine's
/// bracket machinery.
///
/// Node `u` carries the induced-potential value `phi[u]`, the log expansion
/// `logd[u]`, and the positive return weight `r[u]`; every edge out of `u`
/// has weight `exp(−q·phi[u] − b·logd[u] − s·r[u])`. The routine returns
/// the Legendre point `b(α)`: the root in `b` of `min_q [p(b, q) + qα]`,
/// where `p(b, q)` is the value of `s` making the spectral radius one.
/// Every spectral-radius comparison against one is a single LU solve via
/// the M-matrix test, so no eigensolver is involved anywhere.
pub fn constrained_subshift_dimension(
    adj: &[Vec<usize>],
    phi: &[f64],
    logd: &[f64],
    r: &[f64],
    alpha: f64,
) -> Result<f64> {
    let n = adj.len();
    if n == 0 || phi.len() != n || logd.len() != n || r.len() != n {
        return Err(Error::InvalidParameter(
            "adjacency, phi, logd, and r must agree on the number of nodes".into(),
        ));
    }
    if r.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter("return weights must be positive".into()));
    }
    let mut pattern = DMatrix::<f64>::zeros(n, n);
    for (u, outs) in adj.iter().enumerate() {
        for &v in outs {
            if v >= n {
                return Err(Error::InvalidParameter(format!("edge {u} → {v} leaves the graph")));
            }
            pattern[(u, v)] = 1.0;
        }
    }
    if !strongly_connected(&pattern) {
        return Err(Error::Structure("graph is not strongly connected".into()));
    }
    let ones = DVector::<f64>::from_element(n, 1.0);
    // ρ(M) < 1 exactly when (I − M)x = e has a strictly positive solution.
    // Overflowed weights make the solve fail, which correctly lands on the
    // "not contracting" side.
    let contracting = |b: f64, q: f64, s: f64| -> bool {
        let mut m = DMatrix::<f64>::identity(n, n);
        for (u, outs) in adj.iter().enumerate() {
            let w = (-q * phi[u] - b * logd[u] - s * r[u]).exp();
            for &v in outs {
                m[(u, v)] -= w;
            }
        }
        match m.lu().solve(&ones) {
            Some(x) => x.iter().all(|&v| v > 0.0),
            None => false,
        }
    };
    // p(b, q): root in s of ρ = 1. The radius is strictly decreasing in s
    // because every return weight is positive.
    let pressure = |b: f64, q: f64| -> Result<f64> {
        let (mut lo, mut hi) = (-2.0f64, 2.0f64);
        let mut width = 4.0;
        while !contracting(b, q, hi) {
            lo = hi;
            hi += width;
            width *= 2.0;
            if hi > 1e6 {
                return Err(Error::numeric("no contracting s found", hi));
            }
        }
        while contracting(b, q, lo) {
            hi = lo;
            lo -= width;
            width *= 2.0;
            if lo < -1e6 {
                return Err(Error::numeric("system contracts at every s", lo));
            }
        }
        for _ in 0..80 {
            if hi - lo <= 1e-12 * (1.0 + hi.abs()) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if contracting(b, q, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    // g(b) = min_q [p(b, q) + qα]: expansion until the convex objective has
    // an interior minimum, then golden-section.
    let envelope = |b: f64| -> Result<f64> {
        let f = |q: f64| -> Result<f64> { Ok(pressure(b, q)? + q * alpha) };
        let (mut a, mut c) = (-1.0f64, 1.0f64);
        let mut fa = f(a)?;
        let mut fc = f(c)?;
        let mut m = 0.0f64;
        let mut fm = f(m)?;
        let mut step = 2.0f64;
        while fa < fm || fc < fm {
            if fa < fm {
                c = m;
                fc = fm;
                m = a;
                fm = fa;
                a -= step;
                fa = f(a)?;
            } else {
                a = m;
                fa = fm;
                m = c;
                fm = fc;
                c += step;
                fc = f(c)?;
            }
            step *= 2.0;
            if c - a > 300.0 {
                return Err(Error::Domain(format!(
                    "q-minimization diverges: α = {alpha} is outside the admissible range"
                )));
            }
        }
        const INV_PHI: f64 = 0.618_033_988_749_894_9;
        let (mut lo, mut hi) = (a, c);
        let mut x1 = hi - INV_PHI * (hi - lo);
        let mut x2 = lo + INV_PHI * (hi - lo);
        let mut f1 = f(x1)?;
        let mut f2 = f(x2)?;
        for _ in 0..60 {
            if hi - lo <= 1e-5 {
                break;
            }
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - INV_PHI * (hi - lo);
                f1 = f(x1)?;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + INV_PHI * (hi - lo);
                f2 = f(x2)?;
            }
        }
        Ok(f1.min(f2).min(fm))
    };
    // Outer root: g is strictly decreasing in b (heavier geometric damping).
    let (mut lo, mut hi) = (0.2f64, 1.5f64);
    let mut g_lo = envelope(lo)?;
    let mut g_hi = envelope(hi)?;
    let mut guard = 0;
    while g_lo <= 0.0 {
        hi = lo;
        g_hi = g_lo;
        lo *= 0.5;
        g_lo = envelope(lo)?;
        guard += 1;
        if guard > 8 {
            return Err(Error::numeric("constrained envelope never positive", g_lo));
        }
    }
    while g_hi >= 0.0 {
        lo = hi;
        g_lo = g_hi;
        hi *= 2.0;
        g_hi = envelope(hi)?;
        guard += 1;
        if guard > 8 {
            return Err(Error::numeric("constrained envelope never negative", g_hi));
        }
    }
    let _ = (g_lo, g_hi);
    for _ in 0..40 {
        if hi - lo <= 1e-5 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if envelope(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

// ---------------------------------------------------------------------------
// Exhaustive simple-cycle search
// ---------------------------------------------------------------------------

/// Exact min/max over all simple cycles of length `≤ max_len` of the ratio
/// `Σ value / Σ weight`, with per-node values and positive per-node weights.
/// `max_len` is capped at 6 — the search is combinatorial by design.
pub fn exhaustive_cycle_means(
    adj: &[Vec<usize>],
    value: &[f64],
    weight: &[f64],
    max_len: usize,
) -> Result<(f64, f64)> {
    let n = adj.len();
    if value.len() != n || weight.len() != n {
        return Err(Error::InvalidParameter("value/weight length must match node count".into()));
    }
    if max_len == 0 || max_len > 6 {
        return Err(Error::InvalidParameter(format!("max_len must be in 1..=6, got {max_len}")));
    }
    if weight.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::InvalidParameter("cycle weights must be positive".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    let mut record = |ratio: f64| {
        best = Some(match best {
            None => (ratio, ratio),
            Some((lo, hi)) => (lo.min(ratio), hi.max(ratio)),
        });
    };
    // Enumerate each simple cycle once, anchored at its smallest node: from
    // anchor `s`, the walk may only pass through nodes > s and closes on s.
    let mut path: Vec<usize> = Vec::with_capacity(max_len);
    let mut on_path = vec![false; n];
    #[allow(clippy::too_many_arguments)]
    fn dfs(
        u: usize,
        s: usize,
        adj: &[Vec<usize>],
        value: &[f64],
        weight: &[f64],
        max_len: usize,
        path: &mut Vec<usize>,
        on_path: &mut [bool],
        sum_v: f64,
        sum_w: f64,
        record: &mut impl FnMut(f64),
    ) {
        for &w_node in &adj[u] {
            if w_node == s {
                record(sum_v / sum_w);
            } else if w_node > s && !on_path[w_node] && path.len() < max_len {
                path.push(w_node);
                on_path[w_node] = true;
                dfs(
                    w_node,
                    s,
                    adj,
                    value,
                    weight,
                    max_len,
                    path,
                    on_path,
                    sum_v + value[w_node],
                    sum_w + weight[w_node],
                    record,
                );
                on_path[w_node] = false;
                path.pop();
            }
        }
    }
    for s in 0..n {
        path.clear();
        path.push(s);
        on_path[s] = true;
        dfs(s, s, adj, value, weight, max_len, &mut path, &mut on_path, value[s], weight[s], &mut record);
        on_path[s] = false;
    }
    best.ok_or_else(|| Error::Structure(format!("no cycles of length ≤ {max_len}")))
}

// ---------------------------------------------------------------------------
// Seeded orbit sampling
// ---------------------------------------------------------------------------

/// Empirical distribution of Birkhoff averages `(1/n) Σ φ(f^i x)` over
/// uniformly seeded starting points.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub total: u64,
    /// Grand mean of the sampled averages.
    pub mean: f64,
}

impl Histogram {
    /// Center of the most populated bin.
    pub fn mode_center(&self) -> f64 {
        let (k, _) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
            .expect("histogram has at least one bin");
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        self.lo + (k as f64 + 0.5) * w
    }

    /// Fraction of samples landing in `[a, b]`.
    pub fn mass_in(&self, a: f64, b: f64) -> f64 {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        let mut hits = 0u64;
        for (k, &c) in self.counts.iter().enumerate() {
            let center = self.lo + (k as f64 + 0.5) * w;
            if center >= a && center <= b {
                hits += c;
            }
        }
        hits as f64 / self.total as f64
    }
}

/// Iterate `n_points` uniformly seeded starting points `n_iter` steps under
/// `f`, recording each orbit's Birkhoff average of `phi` in a histogram on
/// `[lo, hi]` with `bins` bins. Deterministic for a fixed `seed`; errors if
/// an orbit leaves `[0, 1]`.
#[allow(clippy::too_many_arguments)]
pub fn orbit_birkhoff_histogram<F, P>(
    f: F,
    phi: P,
    n_points: usize,
    n_iter: usize,
    seed: u64,
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<Histogram>
where
    F: Fn(f64) -> f64,
    P: Fn(f64) -> f64,
{
    if n_points == 0 || n_iter == 0 || bins == 0 || !(lo < hi) {
        return Err(Error::InvalidParameter("histogram needs points, iterations, bins, lo < hi".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; bins];
    let mut grand = Kahan::new();
    for _ in 0..n_points {
        let mut x: f64 = rng.gen_range(0.0..1.0);
        let mut acc = Kahan::new();
        for _ in 0..n_iter {
            acc.add(phi(x));
            x = f(x);
            if !(-1e-9..=1.0 + 1e-9).contains(&x) {
                return Err(Error::Domain(format!("orbit escaped the unit interval at x = {x}")));
            }
            x = x.clamp(0.0, 1.0);
        }
        let avg = acc.value() / n_iter as f64;
        grand.add(avg);
        let k = (((avg - lo) / (hi - lo) * bins as f64).floor() as i64).clamp(0, bins as i64 - 1);
        counts[k as usize] += 1;
    }
    Ok(Histogram { lo, hi, counts, total: n_points as u64, mean: grand.value() / n_points as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    #[test]
    fn linearized_pressure_matches_dilog_closed_form() {
        // K=2, c=1, γ=1, b=1, s=log 2: the level series is Σ n^{-2} 2^{-n},
        // whose closed form is π²/12 − (log 2)²/2.
        let model = LinearizedModel::new(2, 1.0, 1.0);
        let p = model.pressure(1.0, 0.0, LN_2).unwrap();
        let closed = (2.0 * (PI * PI / 12.0 - LN_2 * LN_2 / 2.0)).ln();
        let frozen = 0.152_275_539_647_439_92_f64;
        assert!((closed - frozen).abs() < 1e-15, "closed = {closed:.17}");
        assert!((p - frozen).abs() < 1e-12, "pressure = {p:.17}");
    }

    #[test]
    fn linearized_pressure_matches_zeta_closed_form() {
        // b(1+γ) = 2, s = 0, c = 1 → log(K ζ(2)).
        let model = LinearizedModel::new(2, 1.0, 1.0);
        let p = model.pressure(2.0 / (1.0 + 1.0), 0.0, 0.0).unwrap();
        let closed = (2.0 * PI * PI / 6.0).ln();
        assert!((p - closed).abs() < 1e-12, "pressure = {p:.17}, closed = {closed:.17}");
    }

    #[test]
    fn linearized_pressure_monotone_decreasing_in_s() {
        let model = LinearizedModel::new(2, 1.0, 1.0);
        let mut last = f64::INFINITY;
        for &s in &[0.1, 0.5, 1.0, 5.0, 20.0, 200.0] {
            let p = model.pressure(1.0, 0.0, s).unwrap();
            assert!(p < last, "pressure must strictly decrease in s");
            last = p;
        }
        // Deep in the exponential regime the first level dominates:
        // pressure ≈ log(K c^{-b}) − s.
        let p = model.pressure(1.0, 0.0, 200.0).unwrap();
        assert!((p - (2.0f64.ln() - 200.0)).abs() < 1e-6);
    }

    #[test]
    fn linearized_q_shifts_s() {
        let model = LinearizedModel::new(3, 2.0, 1.5);
        let a = model.pressure(0.9, 0.3, 0.4).unwrap();
        let b = model.pressure(0.9, 0.0, 0.7).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn linearized_level_cap_matches_partial_sum() {
        let model = LinearizedModel { level_cap: Some(4), ..LinearizedModel::new(2, 1.0, 1.0) };
        let p = model.pressure(1.0, 0.0, 0.0).unwrap();
        let partial: f64 = (1..=4).map(|n| (n as f64).powi(-2)).sum();
        assert!((p - (2.0 * partial).ln()).abs() < 1e-14);
    }

    #[test]
    fn bowen_root_satisfies_zeta_identity() {
        // Root of 2 · 6^{-b} · ζ(2b) = 1.
        let model = LinearizedModel::new(2, 6.0, 1.0);
        let b = model.bowen_root().unwrap();
        assert!(b > 0.5 && b < 1.0, "root {b} out of expected bracket");
        let residual = 2.0 * 6.0f64.powf(-b) * numerics::zeta(2.0 * b).unwrap() - 1.0;
        assert!(residual.abs() < 1e-9, "identity residual {residual:e}");
        let p = model.pressure(b, 0.0, 0.0).unwrap();
        assert!(p.abs() < 1e-10, "pressure at root {p:e}");
    }

    #[test]
    fn bowen_root_needs_contracting_scale() {
        // scale ≤ 1 keeps the symbol-weight sum above 1 for every b.
        assert!(LinearizedModel::new(2, 1.0, 1.0).bowen_root().is_err());
    }

    #[test]
    fn single_cycle_pressure_is_mean_weight() {
        // 0 → 1 → 2 → 0 with log-weights 0.3, 0.6, 0.9.
        let weights = vec![
            vec![0.0, 0.3f64.exp(), 0.0],
            vec![0.0, 0.0, 0.6f64.exp()],
            vec![0.9f64.exp(), 0.0, 0.0],
        ];
        let t = finite_subshift_thermo(&weights).unwrap();
        assert!((t.pressure - 0.6).abs() < 1e-12, "pressure = {}", t.pressure);
        // A deterministic cycle carries no entropy.
        assert!(t.entropy.abs() < 1e-12);
    }

    #[test]
    fn uniform_full_shift_entropy_is_log_m() {
        let m = 4;
        let weights = vec![vec![1.0; m]; m];
        let t = finite_subshift_thermo(&weights).unwrap();
        assert!((t.pressure - (m as f64).ln()).abs() < 1e-12);
        assert!((t.entropy - (m as f64).ln()).abs() < 1e-12);
        for (&pi, &r) in t.stationary.iter().zip(t.right.iter()) {
            assert!((pi - 1.0 / m as f64).abs() < 1e-12);
            assert!((r - 1.0 / m as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn pressure_identity_links_entropy_and_weight_mean() {
        // log ρ = h + mean(log w) for the stationary Gibbs chain.
        let weights = vec![
            vec![0.5, 1.2, 0.0],
            vec![0.3, 0.0, 2.0],
            vec![1.1, 0.7, 0.4],
        ];
        let t = finite_subshift_thermo(&weights).unwrap();
        let mean_logw = t.edge_mean(|i, j| weights[i][j].ln());
        assert!((t.pressure - (t.entropy + mean_logw)).abs() < 1e-10);
        let pi_sum: f64 = t.stationary.iter().sum();
        assert!((pi_sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reducible_matrix_rejected() {
        let weights = vec![vec![1.0, 1.0], vec![0.0, 1.0]];
        assert!(matches!(finite_subshift_thermo(&weights), Err(Error::Structure(_))));
    }

    #[test]
    fn bipartite_two_cycle_handled_exactly() {
        // Period-2 pattern: eigenvalues ±√(ab); the dense solve and the
        // Rayleigh polish must still pin the Perron root.
        let (a, b) = (2.0, 4.5);
        let weights = vec![vec![0.0, a], vec![b, 0.0]];
        let t = finite_subshift_thermo(&weights).unwrap();
        assert!((t.rho - (a * b).sqrt()).abs() < 1e-11);
    }

    #[test]
    fn cycle_means_on_two_disjoint_loops() {
        // Self-loops at nodes 0 and 1 joined by connector edges; simple
        // cycles: the two loops (means 0.2, 0.7) and the 2-cycle (mean 0.45).
        let adj = vec![vec![0, 1], vec![1, 0]];
        let value = vec![0.2, 0.7];
        let weight = vec![1.0, 1.0];
        let (lo, hi) = exhaustive_cycle_means(&adj, &value, &weight, 4).unwrap();
        assert!((lo - 0.2).abs() < 1e-15);
        assert!((hi - 0.7).abs() < 1e-15);
    }

    #[test]
    fn cycle_means_constant_per_step_collapse() {
        // Values proportional to weights (a constant per-step observable):
        // every cycle ratio equals the constant.
        let adj = vec![vec![1, 2], vec![2], vec![0]];
        let weight = vec![1.0, 2.0, 0.5];
        let value: Vec<f64> = weight.iter().map(|w| 3.5 * w).collect();
        let (lo, hi) = exhaustive_cycle_means(&adj, &value, &weight, 6).unwrap();
        assert!((lo - 3.5).abs() < 1e-12 && (hi - 3.5).abs() < 1e-12);
    }

    #[test]
    fn cycle_means_respects_weights() {
        // One 2-cycle 0↔1: ratio (v0+v1)/(w0+w1) = (1+3)/(1+2) = 4/3.
        let adj = vec![vec![1], vec![0]];
        let (lo, hi) = exhaustive_cycle_means(&adj, &[1.0, 3.0], &[1.0, 2.0], 2).unwrap();
        assert!((lo - 4.0 / 3.0).abs() < 1e-15);
        assert!((hi - lo).abs() < 1e-15);
    }

    #[test]
    fn cycle_means_rejects_long_caps_and_acyclic_graphs() {
        let adj = vec![vec![1], vec![0]];
        assert!(exhaustive_cycle_means(&adj, &[0.0; 2], &[1.0; 2], 7).is_err());
        let dag = vec![vec![1], vec![]];
        assert!(exhaustive_cycle_means(&dag, &[0.0; 2], &[1.0; 2], 3).is_err());
    }

    #[test]
    fn histogram_constant_potential_is_a_point_mass() {
        let h = orbit_birkhoff_histogram(
            |x| (2.0 * x).fract(),
            |_| 0.25,
            500,
            50,
            7,
            40,
            0.0,
            1.0,
        )
        .unwrap();
        assert!((h.mean - 0.25).abs() < 1e-12);
        assert!((h.mode_center() - 0.2625).abs() < 1e-12); // bin containing 0.25
        assert_eq!(h.counts.iter().sum::<u64>(), 500);
        assert!(h.mass_in(0.2, 0.3) == 1.0);
    }

    #[test]
    fn histogram_is_seed_deterministic() {
        let run = || {
            orbit_birkhoff_histogram(|x| (3.0 * x).fract(), |x| x, 200, 200, 42, 30, 0.0, 1.0)
                .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.mean, b.mean);
        // Doubling map Lebesgue-typical average of x is 1/2.
        assert!((a.mean - 0.5).abs() < 0.05, "mean = {}", a.mean);
    }

    #[test]
    fn histogram_rejects_escaping_orbits() {
        let r = orbit_birkhoff_histogram(|x| x + 1.0, |x| x, 10, 5, 1, 10, 0.0, 1.0);
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
