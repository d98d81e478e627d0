//! Small numerical building blocks shared by the solvers: compensated
//! summation, root finding, monotone inversion, interval evaluation of
//! polynomials, and power-times-exponential series with Euler–Maclaurin
//! tails.

use crate::{Error, Result};

/// Kahan–Babuška compensated accumulator. Summation order is always the
/// caller's iteration order, which keeps reductions deterministic.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn new() -> Self {
        Kahan::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Sum an iterator with compensation, in iteration order.
pub fn ksum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut k = Kahan::new();
    for x in xs {
        k.add(x);
    }
    k.value()
}

/// Plain bisection for a sign change of `f` on `[lo, hi]`.
///
/// `flo` and `fhi` are the (already evaluated) endpoint values; they must
/// have opposite signs. Returns the midpoint of the final bracket.
pub fn bisect<F: FnMut(f64) -> f64>(
    mut lo: f64,
    mut hi: f64,
    mut flo: f64,
    tol_x: f64,
    max_iter: usize,
    mut f: F,
) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::InvalidParameter(format!("bisect: empty bracket [{lo}, {hi}]")));
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol_x {
            return Ok(mid);
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Err(Error::numeric("bisection iteration cap", hi - lo))
}

/// Safeguarded secant/bisection hybrid for a root of `f` on `[lo, hi]`.
/// Endpoint values must have opposite signs.
pub fn hybrid_root<F: FnMut(f64) -> f64>(
    mut lo: f64,
    mut hi: f64,
    mut flo: f64,
    mut fhi: f64,
    tol_x: f64,
    max_iter: usize,
    mut f: F,
) -> Result<f64> {
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if (flo > 0.0) == (fhi > 0.0) {
        return Err(Error::InvalidParameter("hybrid_root: endpoints have equal sign".into()));
    }
    let mut last_kind_secant = false;
    for _ in 0..max_iter {
        if hi - lo <= tol_x {
            return Ok(0.5 * (lo + hi));
        }
        // Alternate a secant step (when it lands safely inside) with plain
        // bisection; this keeps worst-case behaviour at bisection speed.
        let mut x = if last_kind_secant {
            0.5 * (lo + hi)
        } else {
            let d = fhi - flo;
            if d.abs() > 0.0 {
                let s = hi - fhi * (hi - lo) / d;
                let margin = 0.01 * (hi - lo);
                if s > lo + margin && s < hi - margin {
                    s
                } else {
                    0.5 * (lo + hi)
                }
            } else {
                0.5 * (lo + hi)
            }
        };
        last_kind_secant = !last_kind_secant;
        if !x.is_finite() {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        if fx == 0.0 {
            return Ok(x);
        }
        if (fx > 0.0) == (flo > 0.0) {
            lo = x;
            flo = fx;
        } else {
            hi = x;
            fhi = fx;
        }
    }
    Err(Error::numeric("hybrid root iteration cap", hi - lo))
}

/// Invert a strictly monotone function on `[lo, hi]` to ~1e-14 accuracy
/// using Newton steps clipped to a shrinking bisection bracket.
pub fn invert_monotone<G, D>(y: f64, lo: f64, hi: f64, g: G, dg: D) -> Result<f64>
where
    G: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let (glo, ghi) = (g(lo), g(hi));
    let increasing = ghi > glo;
    let (mut a, mut b) = (lo, hi);
    // Tolerate tiny round-off overshoot at the ends of the range.
    let span = (ghi - glo).abs().max(1.0);
    let inside = if increasing {
        y >= glo - 1e-12 * span && y <= ghi + 1e-12 * span
    } else {
        y >= ghi - 1e-12 * span && y <= glo + 1e-12 * span
    };
    if !inside {
        return Err(Error::Domain(format!("invert_monotone: {y} outside image [{glo}, {ghi}]")));
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x);
        let err = gx - y;
        if err == 0.0 {
            return Ok(x);
        }
        if (err > 0.0) == increasing {
            b = x;
        } else {
            a = x;
        }
        let d = dg(x);
        let mut next = if d != 0.0 { x - err / d } else { f64::NAN };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x.clamp(lo, hi))
}

/// Evaluate a polynomial (ascending coefficients) at `x`.
#[inline]
pub fn poly_eval(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Derivative of a polynomial (ascending coefficients) at `x`.
#[inline]
pub fn poly_deriv(coeffs: &[f64], x: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &c) in coeffs.iter().enumerate().skip(1).rev() {
        acc = acc * x + c * k as f64;
    }
    acc
}

/// Tight enclosure of a polynomial over `[lo, hi] ⊆ [0, ∞)`, obtained
/// monomial by monomial: each `c·x^k` is monotone on the nonnegative axis,
/// so its extremes sit at the interval endpoints.
pub fn poly_range(coeffs: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    debug_assert!(lo >= -1e-15 && lo <= hi);
    let mut mn = Kahan::new();
    let mut mx = Kahan::new();
    let (mut plo, mut phi) = (1.0f64, 1.0f64);
    for (k, &c) in coeffs.iter().enumerate() {
        if k > 0 {
            plo *= lo;
            phi *= hi;
        }
        let (a, b) = (c * plo, c * phi);
        mn.add(a.min(b));
        mx.add(a.max(b));
    }
    (mn.value(), mx.value())
}

/// One-sided first-derivative estimate from difference quotients at step
/// sizes `h, h/2, h/4, …` (quotients supplied in that order), using the
/// Richardson scheme for a first-order one-sided stencil.
pub fn richardson_onesided(quotients: &[f64]) -> f64 {
    let n = quotients.len();
    assert!(n >= 1);
    let mut row = quotients.to_vec();
    for j in 1..n {
        let w = (1u64 << j) as f64;
        for i in (j..n).rev() {
            row[i] = (w * row[i] - row[i - 1]) / (w - 1.0);
        }
    }
    row[n - 1]
}

// ---------------------------------------------------------------------------
// Power-times-exponential series  Σ n^{-a} e^{-s n}
// ---------------------------------------------------------------------------

/// `∫_N^∞ x^{-a} e^{-s x} dx` for `N > 0`, `s ≥ 0` (requires `a > 1` when
/// `s = 0`). For `s > 0` the substitution `u = s(x-N)` yields a smooth
/// integrand on `[0, ~60]` handled by adaptive Simpson.
fn powexp_integral(a: f64, s: f64, n0: f64) -> f64 {
    if s == 0.0 {
        return n0.powf(1.0 - a) / (a - 1.0);
    }
    let sn = s * n0;
    let h = |u: f64| (1.0 + u / sn).powf(-a) * (-u).exp();
    let j = adaptive_simpson(&h, 0.0, 60.0, 1e-13, 40);
    n0.powf(-a) * (-sn).exp() / s * j
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64, depth: usize) -> f64 {
    fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(a, m, fa, flm, fm);
        let right = simpson(m, b, fm, frm, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    let scale = whole.abs().max(1e-300);
    rec(f, a, b, fa, fm, fb, whole, rel_tol * scale, depth)
}

/// Tail `Σ_{n > n0} n^{-a} e^{-s n}` via Euler–Maclaurin off the partial sum:
/// integral term plus endpoint and Bernoulli corrections. Relative accuracy
/// is ~1e-12 once `n0 ≳ 10^3`; the series must converge (`s > 0` or `a > 1`).
pub fn powexp_tail(a: f64, s: f64, n0: u64) -> Result<f64> {
    if s < 0.0 || (s == 0.0 && a <= 1.0) {
        return Err(Error::Domain(format!("divergent series: a = {a}, s = {s}")));
    }
    let x = n0 as f64;
    let g = x.powf(-a) * (-s * x).exp();
    if g == 0.0 {
        return Ok(0.0);
    }
    // Log-derivatives of g(x) = x^{-a} e^{-sx}.
    let d = a / x + s;
    let g1 = -d * g;
    let g3 = -(d * d * d + 3.0 * a * d / (x * x) + 2.0 * a / (x * x * x)) * g;
    let integral = powexp_integral(a, s, x);
    // Σ_{n>N} g(n) = ∫_N^∞ g − g(N)/2 − g'(N)/12 + g'''(N)/720 + …
    Ok((integral - 0.5 * g - g1 / 12.0 + g3 / 720.0).max(0.0))
}

/// Full series `Σ_{n ≥ 1} n^{-a} e^{-s n}` by direct compensated summation
/// plus the Euler–Maclaurin tail. Converges for `s > 0` or `a > 1`.
pub fn powexp_sum(a: f64, s: f64) -> Result<f64> {
    if s < 0.0 || (s == 0.0 && a <= 1.0) {
        return Err(Error::Domain(format!("divergent series: a = {a}, s = {s}")));
    }
    let cut = if s > 0.0 {
        ((30.0 / s).ceil() as u64).clamp(2_000, 2_000_000)
    } else {
        20_000
    };
    let mut acc = Kahan::new();
    let mut n = 1u64;
    while n <= cut {
        let x = n as f64;
        let term = (-a * x.ln() - s * x).exp();
        acc.add(term);
        if term < 1e-320 {
            // Deep underflow: everything beyond is zero in f64.
            return Ok(acc.value());
        }
        n += 1;
    }
    Ok(acc.value() + powexp_tail(a, s, cut)?)
}

/// Riemann zeta on `(1, ∞)` via the same Euler–Maclaurin machinery.
pub fn zeta(a: f64) -> Result<f64> {
    powexp_sum(a, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zeta_two_matches_closed_form() {
        let z = zeta(2.0).unwrap();
        assert!((z - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-12, "zeta(2) = {z}");
    }

    #[test]
    fn zeta_three_matches_reference() {
        // Apéry's constant, reference value.
        let z = zeta(3.0).unwrap();
        assert!((z - 1.202_056_903_159_594_2).abs() < 1e-12, "zeta(3) = {z}");
    }

    #[test]
    fn dilog_half_identity() {
        // Σ n^{-2} 2^{-n} = π²/12 − ln²2 / 2.
        let s = powexp_sum(2.0, std::f64::consts::LN_2).unwrap();
        let closed = std::f64::consts::PI.powi(2) / 12.0 - std::f64::consts::LN_2.powi(2) / 2.0;
        assert!((s - closed).abs() < 1e-13, "sum = {s}, closed = {closed}");
    }

    #[test]
    fn tail_consistent_with_partial_sums() {
        // Σ_{n>N} must equal the full sum minus the partial sum.
        for &(a, s) in &[(2.0, 0.0), (1.5, 0.1), (3.0, 0.7), (0.5, 0.3)] {
            let full = powexp_sum(a, s).unwrap();
            let n0 = 5_000u64;
            let partial = ksum((1..=n0).map(|n| {
                let x = n as f64;
                (-a * x.ln() - s * x).exp()
            }));
            let tail = powexp_tail(a, s, n0).unwrap();
            let err = (full - (partial + tail)).abs() / full.max(1e-300);
            assert!(err < 1e-11, "a={a} s={s}: rel err {err:e}");
        }
    }

    #[test]
    fn divergent_series_rejected() {
        assert!(powexp_sum(0.5, 0.0).is_err());
        assert!(powexp_sum(1.0, 0.0).is_err());
        assert!(powexp_tail(0.9, 0.0, 100).is_err());
    }

    #[test]
    fn bisect_finds_sqrt2() {
        let r = bisect(0.0, 2.0, -2.0, 1e-12, 200, |x| x * x - 2.0).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-11);
    }

    #[test]
    fn hybrid_root_matches_bisect() {
        let f = |x: f64| x.exp() - 3.0;
        let r = hybrid_root(0.0, 2.0, f(0.0), f(2.0), 1e-13, 200, f).unwrap();
        assert!((r - 3f64.ln()).abs() < 1e-11);
    }

    #[test]
    fn invert_monotone_roundtrip() {
        let g = |x: f64| x + x * x * x;
        let dg = |x: f64| 1.0 + 3.0 * x * x;
        for &y in &[0.0, 0.1, 0.5, 1.3, 1.999] {
            let x = invert_monotone(y, 0.0, 1.0, g, dg).unwrap();
            assert!((g(x) - y).abs() < 1e-12);
        }
        assert!(invert_monotone(5.0, 0.0, 1.0, g, dg).is_err());
    }

    #[test]
    fn poly_range_is_tight_for_monotone() {
        // 1 + 2x − x² on [0, 0.5]: monomial enclosure.
        let (lo, hi) = poly_range(&[1.0, 2.0, -1.0], 0.0, 0.5);
        assert!(lo <= 1.0 && hi >= 1.75);
        assert!((lo - 0.75).abs() < 1e-15); // 1 + 0 − 0.25 at worst corners
        assert!((hi - 2.0).abs() < 1e-15);
    }

    #[test]
    fn richardson_onesided_first_order() {
        // f(x) = e^x at 0: forward quotients (e^h−1)/h for h = 0.2, 0.1, 0.05, 0.025.
        let qs: Vec<f64> = [0.2f64, 0.1, 0.05, 0.025]
            .iter()
            .map(|&h| (h.exp() - 1.0) / h)
            .collect();
        let d = richardson_onesided(&qs);
        assert!((d - 1.0).abs() < 1e-6, "d = {d}");
    }

    #[test]
    fn kahan_beats_naive_on_adversarial_input() {
        // Each 1.0 vanishes against the running 1e16 in a plain fold; the
        // compensated sum recovers every one of them exactly.
        let xs: Vec<f64> = (0..150_000)
            .map(|i| match i % 3 {
                0 => 1e16,
                1 => 1.0,
                _ => -1e16,
            })
            .collect();
        let naive: f64 = xs.iter().sum();
        let k = ksum(xs.iter().copied());
        assert_eq!(k, 50_000.0);
        assert!(naive != k, "naive summation should lose the small terms");
    }
}
