//! The induced first-return system: word grammar over the branch alphabet,
//! successor structure, cylinder geometry from composed inverse branches,
//! and certified per-cylinder brackets for the return time `R`, the induced
//! potential `Φ̄`, and `log|F'|`.
//!
//! Words carry two letters of lookahead: a word of `k` letters is a return
//! block of time `r = k − 2`, and `ω'` may follow `ω` exactly when the first
//! two letters of `ω'` equal the last two letters of `ω`. Brackets are built
//! per term along the pullback orbit — every orbit point is a monotone
//! function of the image coordinate, so endpoint evaluation plus per-branch
//! potential ranges yields true enclosures without Hölder padding.

use std::collections::HashMap;
use std::io::Write as IoWrite;

use sha2::{Digest, Sha256};

use crate::map::{MapModel, Potential};
use crate::numerics::Kahan;
use crate::{Error, Result};

/// One induced word: a short word (return time 1) or a parabolic block
/// `(left, mid^n, right)` with `mid` parabolic and both flanks ≠ `mid`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Word {
    Short([u8; 3]),
    Block { left: u8, mid: u8, n: u32, right: u8 },
}

impl Word {
    pub fn return_time(&self) -> u32 {
        match self {
            Word::Short(_) => 1,
            Word::Block { n, .. } => *n,
        }
    }

    pub fn first2(&self) -> (u8, u8) {
        match self {
            Word::Short([a, b, _]) => (*a, *b),
            Word::Block { left, mid, .. } => (*left, *mid),
        }
    }

    pub fn last2(&self) -> (u8, u8) {
        match self {
            Word::Short([_, b, c]) => (*b, *c),
            Word::Block { mid, right, .. } => (*mid, *right),
        }
    }

    /// Full letter sequence (length `return_time + 2`).
    pub fn letters(&self) -> Vec<u8> {
        match self {
            Word::Short(l) => l.to_vec(),
            Word::Block { left, mid, n, right } => {
                let mut v = Vec::with_capacity(*n as usize + 2);
                v.push(*left);
                v.extend(std::iter::repeat_n(*mid, *n as usize));
                v.push(*right);
                v
            }
        }
    }

    /// Canonical ordering key: by return time, then lexicographically.
    fn sort_key(&self) -> (u32, u8, u8, u8) {
        match self {
            Word::Short([a, b, c]) => (1, *a, *b, *c),
            Word::Block { left, mid, n, right } => (*n, *left, *mid, *right),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Word::Short([a, b, c]) => format!("{a}-{b}-{c}"),
            Word::Block { left, mid, n, right } => format!("{left}-{mid}^{n}-{right}"),
        }
    }
}

/// All grammar-legal words with return time ≤ `n_max`, in canonical order,
/// with the successor structure (`ω → ω'` iff `first2(ω') = last2(ω)`).
#[derive(Debug, Clone)]
pub struct TruncatedAlphabet {
    pub words: Vec<Word>,
    pub n_max: u32,
    n_branches: usize,
    index: HashMap<Word, u32>,
    /// Context `(c1, c2) → c1·E + c2 →` state ids of words starting `(c1,c2)`.
    by_first2: Vec<Vec<u32>>,
    /// Position of each state inside its `by_first2` list.
    pos_in_first2: Vec<u32>,
}

/// Enumerate the truncated word alphabet of `model`.
///
/// Short words `(ω₁, ω₂, ω₃)` require `ω₂ ≠ ω₁` when `ω₁` is parabolic and
/// `ω₃ ≠ ω₂` when `ω₂` is parabolic; blocks `(ω₁, i^n, ω_{n+2})` require `i`
/// parabolic and both flanks ≠ `i`.
pub fn enumerate_words(model: &MapModel, n_max: u32) -> Result<TruncatedAlphabet> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    let e = model.n_branches();
    if e > u8::MAX as usize {
        return Err(Error::InvalidParameter("more than 255 branches are not supported".into()));
    }
    let parabolic: Vec<bool> = (0..e).map(|i| model.branch(i).parabolic).collect();
    let mut words = Vec::new();
    for a in 0..e {
        for b in 0..e {
            if parabolic[a] && b == a {
                continue;
            }
            for c in 0..e {
                if parabolic[b] && c == b {
                    continue;
                }
                words.push(Word::Short([a as u8, b as u8, c as u8]));
            }
        }
    }
    for i in 0..e {
        if !parabolic[i] {
            continue;
        }
        for n in 2..=n_max {
            for a in 0..e {
                if a == i {
                    continue;
                }
                for c in 0..e {
                    if c == i {
                        continue;
                    }
                    words.push(Word::Block { left: a as u8, mid: i as u8, n, right: c as u8 });
                }
            }
        }
    }
    words.sort_by_key(Word::sort_key);
    let index: HashMap<Word, u32> = words.iter().enumerate().map(|(k, &w)| (w, k as u32)).collect();
    let mut by_first2 = vec![Vec::new(); e * e];
    for (k, w) in words.iter().enumerate() {
        let (c1, c2) = w.first2();
        by_first2[c1 as usize * e + c2 as usize].push(k as u32);
    }
    let mut pos_in_first2 = vec![0u32; words.len()];
    for list in &by_first2 {
        for (p, &id) in list.iter().enumerate() {
            pos_in_first2[id as usize] = p as u32;
        }
    }
    Ok(TruncatedAlphabet { words, n_max, n_branches: e, index, by_first2, pos_in_first2 })
}

impl TruncatedAlphabet {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Branch count of the underlying map (the letter alphabet size).
    pub fn n_branches(&self) -> usize {
        self.n_branches
    }

    pub fn id_of(&self, w: &Word) -> Option<u32> {
        self.index.get(w).copied()
    }

    /// States whose words may follow `id`.
    pub fn successors(&self, id: u32) -> &[u32] {
        let (c1, c2) = self.words[id as usize].last2();
        &self.by_first2[c1 as usize * self.n_branches + c2 as usize]
    }

    /// States whose words start with the given two-letter context.
    pub fn starting_with(&self, c1: u8, c2: u8) -> &[u32] {
        &self.by_first2[c1 as usize * self.n_branches + c2 as usize]
    }

    /// Count of words with return time exactly `n`.
    pub fn count_at(&self, n: u32) -> usize {
        self.words.iter().filter(|w| w.return_time() == n).count()
    }
}

/// `Λ_q = max over parabolic i of −q·α_i` — the lower threshold in `s`
/// below which the induced pressure series must diverge.
pub fn lambda_q(model: &MapModel, potential: &Potential, q: f64) -> f64 {
    potential
        .parabolic_values(model)
        .iter()
        .map(|&(_, alpha)| -q * alpha)
        .fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------------------
// Bracket evaluation along pullback orbits
// ---------------------------------------------------------------------------

fn sorted_pair(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn pull(model: &MapModel, branch: usize, u: (f64, f64)) -> Result<(f64, f64)> {
    let b = model.branch(branch);
    Ok(sorted_pair(b.inverse(u.0)?, b.inverse(u.1)?))
}

/// Cylinder interval plus `(Φ̄, log|F'|)` brackets, as produced by
/// [`block_bracket`].
pub type BlockBrackets = ((f64, f64), (f64, f64), (f64, f64));

/// Certified brackets of `Φ̄` and `log|F'|` for one return block of `word`,
/// with the image point ranging over `u`. Also returns the first-point
/// interval (the block's cylinder restricted to image points in `u`).
pub fn block_bracket(
    model: &MapModel,
    potential: &Potential,
    word: &Word,
    u: (f64, f64),
) -> Result<BlockBrackets> {
    let mut phi = (Kahan::new(), Kahan::new());
    let mut logd = (Kahan::new(), Kahan::new());
    let mut add = |interval: (f64, f64), branch: usize| {
        let (plo, phi_r) = potential.range_on(interval.0, interval.1, model, branch);
        phi.0.add(plo);
        phi.1.add(phi_r);
        let (dlo, dhi) = model.branch(branch).log_deriv_range(interval.0, interval.1);
        logd.0.add(dlo);
        logd.1.add(dhi);
    };
    let first = match *word {
        Word::Short([a, _, _]) => {
            let p = pull(model, a as usize, u)?;
            add(p, a as usize);
            p
        }
        Word::Block { left, mid, n, .. } => {
            let mut w = sorted_pair(u.0, u.1);
            for _ in 1..n {
                w = pull(model, mid as usize, w)?;
                add(w, mid as usize);
            }
            let p = pull(model, left as usize, w)?;
            add(p, left as usize);
            p
        }
    };
    Ok((first, (phi.0.value(), phi.1.value()), (logd.0.value(), logd.1.value())))
}

/// Per-word cylinder record with depth-refined brackets.
#[derive(Debug, Clone)]
pub struct Cylinder {
    pub word: Word,
    pub interval: (f64, f64),
    pub r: u32,
    pub phi_bar: (f64, f64),
    pub log_deriv: (f64, f64),
    /// Recorded bound dominating both bracket widths.
    pub distortion: f64,
}

/// Image intervals a depth-`d` admissible continuation of `word` can land
/// in. Depth 0 is the word's full two-letter ending context; depth `d`
/// maps each successor's depth-`(d−1)` images back through the successor's
/// return block, so depth 1 yields exactly the successor cylinders. Each
/// level refines the previous one.
fn chain_images(
    model: &MapModel,
    alphabet: &TruncatedAlphabet,
    id: u32,
    depth: u32,
    contexts: &[(f64, f64)],
) -> Result<Vec<(f64, f64)>> {
    let word = alphabet.words[id as usize];
    if depth == 0 {
        let (d1, d2) = word.last2();
        return Ok(vec![contexts[d1 as usize * alphabet.n_branches + d2 as usize]]);
    }
    let mut out = Vec::new();
    for &succ in alphabet.successors(id) {
        let sw = alphabet.words[succ as usize];
        for sub in chain_images(model, alphabet, succ, depth - 1, contexts)? {
            // Map the image through the successor's return block: its first
            // r letters, applied innermost-last.
            let mut v = sub;
            match sw {
                Word::Short([a, _, _]) => {
                    v = pull(model, a as usize, v)?;
                }
                Word::Block { left, mid, n, .. } => {
                    for _ in 1..n {
                        v = pull(model, mid as usize, v)?;
                    }
                    v = pull(model, left as usize, v)?;
                }
            }
            out.push(v);
        }
    }
    Ok(out)
}

/// Compute one word's cylinder with brackets refined to `depth`: the
/// brackets are the hull over all depth-step admissible continuations, each
/// evaluated on its own (smaller) image interval. Depth 0 uses the full
/// two-letter context cylinder.
pub fn cylinder_data(
    model: &MapModel,
    potential: &Potential,
    alphabet: &TruncatedAlphabet,
    word: &Word,
    depth: u32,
) -> Result<Cylinder> {
    let id = alphabet
        .id_of(word)
        .ok_or_else(|| Error::Structure(format!("word {} not in the alphabet", word.label())))?;
    let e = alphabet.n_branches;
    let mut contexts = vec![(0.0, 0.0); e * e];
    for d1 in 0..e {
        for d2 in 0..e {
            contexts[d1 * e + d2] = pull(model, d1, pull(model, d2, (0.0, 1.0))?)?;
        }
    }
    let images = chain_images(model, alphabet, id, depth, &contexts)?;
    let (d1, d2) = word.last2();
    let base_ctx = contexts[d1 as usize * e + d2 as usize];
    let (interval, _, _) = block_bracket(model, &Potential::Identity, word, base_ctx)?;
    if images.is_empty() {
        return Err(Error::Structure(format!(
            "word {} has no depth-{depth} continuations in the truncated alphabet",
            word.label()
        )));
    }
    let mut phi = (f64::INFINITY, f64::NEG_INFINITY);
    let mut logd = (f64::INFINITY, f64::NEG_INFINITY);
    for u in images {
        let (_, p, l) = block_bracket(model, potential, word, u)?;
        phi = (phi.0.min(p.0), phi.1.max(p.1));
        logd = (logd.0.min(l.0), logd.1.max(l.1));
    }
    if !(interval.0 < interval.1) {
        return Err(Error::Domain(format!("empty cylinder for word {}", word.label())));
    }
    Ok(Cylinder {
        word: *word,
        interval,
        r: word.return_time(),
        phi_bar: phi,
        log_deriv: logd,
        distortion: (phi.1 - phi.0).max(logd.1 - logd.0),
    })
}

// ---------------------------------------------------------------------------
// The full cylinder table
// ---------------------------------------------------------------------------

/// Calibrated extrapolation data for one parabolic block class
/// `(left, mid^n, right)` beyond the truncation cap. The constants are
/// empirical: fitted on the deepest enumerated levels and padded by the
/// observed window spread; every consumer reports them alongside results.
#[derive(Debug, Clone)]
pub struct TailClass {
    pub left: u8,
    pub mid: u8,
    pub right: u8,
    pub cap: u32,
    /// For `m > cap`: `inf log|F'| ≥ (1+γ)·log m + logd_lo_c`.
    pub logd_lo_c: f64,
    /// For `m > cap`: `sup log|F'| ≤ (1+γ)·log m + logd_hi_c`.
    pub logd_hi_c: f64,
    /// Bracket of `Φ̄` at the cap level.
    pub phi_cap: (f64, f64),
    /// Per-level slope bounds for `Φ̄` beyond the cap.
    pub inc_lo: f64,
    pub inc_hi: f64,
    /// `φ` at the class's neutral fixed point.
    pub alpha: f64,
}

/// Complete truncated induced system: canonical word list, cylinder
/// geometry, depth-0 brackets per word, depth-1 brackets per successor edge
/// (CSR by source), tail calibration, and graph structure data.
#[derive(Debug, Clone)]
pub struct CylinderTable {
    pub alphabet: TruncatedAlphabet,
    pub r: Vec<u32>,
    pub intervals: Vec<(f64, f64)>,
    /// Depth-0 brackets of `Φ̄` per word (image over the full context).
    pub phi1: Vec<(f64, f64)>,
    pub logd1: Vec<(f64, f64)>,
    /// CSR successor edges: for edge `ω → ω'`, brackets of the `ω` return
    /// block with the image constrained to `ω'`'s cylinder.
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub e_phi: Vec<(f64, f64)>,
    pub e_logd: Vec<(f64, f64)>,
    /// Neutral values `α_i` in branch order of the parabolic set.
    pub alpha: Vec<(usize, f64)>,
    pub tails: Vec<TailClass>,
    pub irreducible: bool,
    /// Cyclic period of the successor graph (1 = aperiodic).
    pub period: u32,
    /// Regularity exponent of the map the table was built from.
    pub gamma: f64,
    /// Hash of the construction inputs, for caching and provenance.
    pub input_hash: String,
}

struct EdgeDatum {
    slot: usize,
    phi: (f64, f64),
    logd: (f64, f64),
}

impl CylinderTable {
    /// Build the table; uses data parallelism over targets when the
    /// `parallel` feature is enabled.
    pub fn build(model: &MapModel, potential: &Potential, n_max: u32) -> Result<Self> {
        Self::build_impl(model, potential, n_max, cfg!(feature = "parallel"))
    }

    /// Single-threaded build; bit-identical to [`CylinderTable::build`].
    pub fn build_sequential(model: &MapModel, potential: &Potential, n_max: u32) -> Result<Self> {
        Self::build_impl(model, potential, n_max, false)
    }

    fn build_impl(model: &MapModel, potential: &Potential, n_max: u32, par: bool) -> Result<Self> {
        let alphabet = enumerate_words(model, n_max)?;
        let n_states = alphabet.len();
        let e = model.n_branches();

        let r: Vec<u32> = alphabet.words.iter().map(Word::return_time).collect();
        let mut intervals = vec![(0.0f64, 0.0f64); n_states];
        let mut phi1 = vec![(0.0f64, 0.0f64); n_states];
        let mut logd1 = vec![(0.0f64, 0.0f64); n_states];

        // Pass 1: per-word cylinders and depth-0 brackets, streamed per
        // two-letter ending context so each parabolic chain is walked once.
        for d1 in 0..e {
            for d2 in 0..e {
                let ctx = pull(model, d1, pull(model, d2, (0.0, 1.0))?)?;
                // Short words ending (d1, d2).
                for a in 0..e {
                    let w = Word::Short([a as u8, d1 as u8, d2 as u8]);
                    if let Some(id) = alphabet.id_of(&w) {
                        let (first, p, l) = block_bracket(model, potential, &w, ctx)?;
                        intervals[id as usize] = first;
                        phi1[id as usize] = p;
                        logd1[id as usize] = l;
                    }
                }
                // Parabolic blocks ending (d1, d2): mid = d1.
                if model.branch(d1).parabolic && d2 != d1 && n_max >= 2 {
                    stream_blocks(model, potential, d1, d2 as u8, ctx, n_max, |n, a, first, p, l| {
                        let w = Word::Block { left: a, mid: d1 as u8, n, right: d2 as u8 };
                        if let Some(id) = alphabet.id_of(&w) {
                            intervals[id as usize] = first;
                            phi1[id as usize] = p;
                            logd1[id as usize] = l;
                        }
                    })?;
                }
            }
        }

        // CSR skeleton: row ω's columns are exactly the states starting with
        // last2(ω), in canonical order.
        let mut row_ptr = Vec::with_capacity(n_states + 1);
        row_ptr.push(0usize);
        for id in 0..n_states {
            let succ = alphabet.successors(id as u32);
            if succ.is_empty() {
                return Err(Error::Structure(format!(
                    "word {} has no successors in the truncated alphabet",
                    alphabet.words[id].label()
                )));
            }
            row_ptr.push(row_ptr[id] + succ.len());
        }
        let n_edges = row_ptr[n_states];
        let mut col = vec![0u32; n_edges];
        for id in 0..n_states {
            col[row_ptr[id]..row_ptr[id + 1]].copy_from_slice(alphabet.successors(id as u32));
        }

        // Pass 2: depth-1 edge brackets, computed per target (all of a
        // target's in-edges share its pullback chain) and scattered into the
        // CSR slots. Chunked so parallel and sequential runs are
        // bit-identical and the temporary buffers stay small.
        let mut e_phi = vec![(0.0f64, 0.0f64); n_edges];
        let mut e_logd = vec![(0.0f64, 0.0f64); n_edges];
        let per_target = |j: u32| -> Result<Vec<EdgeDatum>> {
            let mut out = Vec::new();
            let (c1, c2) = alphabet.words[j as usize].first2();
            let u = intervals[j as usize];
            let slot = |src: u32| row_ptr[src as usize] + alphabet.pos_in_first2[j as usize] as usize;
            for a in 0..e {
                let w = Word::Short([a as u8, c1, c2]);
                if let Some(src) = alphabet.id_of(&w) {
                    let (_, p, l) = block_bracket(model, potential, &w, u)?;
                    out.push(EdgeDatum { slot: slot(src), phi: p, logd: l });
                }
            }
            if model.branch(c1 as usize).parabolic && n_max >= 2 {
                stream_blocks(model, potential, c1 as usize, c2, u, n_max, |n, a, _, p, l| {
                    let w = Word::Block { left: a, mid: c1, n, right: c2 };
                    if let Some(src) = alphabet.id_of(&w) {
                        out.push(EdgeDatum { slot: slot(src), phi: p, logd: l });
                    }
                })?;
            }
            Ok(out)
        };
        let targets: Vec<u32> = (0..n_states as u32).collect();
        for chunk in targets.chunks(256) {
            let results: Vec<Result<Vec<EdgeDatum>>> = run_chunk(chunk, par, &per_target);
            for res in results {
                for d in res? {
                    e_phi[d.slot] = d.phi;
                    e_logd[d.slot] = d.logd;
                }
            }
        }

        let (irreducible, period) = graph_structure(n_states, &row_ptr, &col);
        let alpha = potential.parabolic_values(model);
        let tails = calibrate_tails(model, &alphabet, &phi1, &logd1, &alpha, n_max);
        let input_hash = hash_inputs(model, potential, n_max);

        Ok(CylinderTable {
            alphabet,
            r,
            intervals,
            phi1,
            logd1,
            row_ptr,
            col,
            e_phi,
            e_logd,
            alpha,
            tails,
            irreducible,
            period,
            gamma: model.gamma,
            input_hash,
        })
    }

    pub fn n_states(&self) -> usize {
        self.alphabet.len()
    }

    pub fn n_edges(&self) -> usize {
        self.col.len()
    }

    /// Export the per-word cylinder table as CSV.
    pub fn write_csv(&self, out: &mut dyn IoWrite) -> std::io::Result<()> {
        writeln!(out, "word,r,lo,hi,phi_lo,phi_hi,logd_lo,logd_hi")?;
        for (k, w) in self.alphabet.words.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                w.label(),
                self.r[k],
                self.intervals[k].0,
                self.intervals[k].1,
                self.phi1[k].0,
                self.phi1[k].1,
                self.logd1[k].0,
                self.logd1[k].1
            )?;
        }
        Ok(())
    }
}

fn run_chunk<F>(chunk: &[u32], par: bool, f: &F) -> Vec<Result<Vec<EdgeDatum>>>
where
    F: Fn(u32) -> Result<Vec<EdgeDatum>> + Sync,
{
    #[cfg(feature = "parallel")]
    if par {
        use rayon::prelude::*;
        return chunk.par_iter().map(|&j| f(j)).collect();
    }
    let _ = par;
    chunk.iter().map(|&j| f(j)).collect()
}

/// Walk the parabolic pullback chain for mid-branch `i` starting from image
/// interval `u`, emitting per level `n = 2..=n_max` and per flank `a ≠ i`
/// the first-point interval and both brackets. One chain serves every flank
/// and every level: the per-level contribution of the chain point is
/// accumulated once.
fn stream_blocks<F>(
    model: &MapModel,
    potential: &Potential,
    i: usize,
    _right: u8,
    u: (f64, f64),
    n_max: u32,
    mut emit: F,
) -> Result<()>
where
    F: FnMut(u32, u8, (f64, f64), (f64, f64), (f64, f64)),
{
    let flanks: Vec<usize> = (0..model.n_branches()).filter(|&a| a != i).collect();
    let mut w = sorted_pair(u.0, u.1);
    let mut cum_phi = (Kahan::new(), Kahan::new());
    let mut cum_logd = (Kahan::new(), Kahan::new());
    for k in 1..n_max {
        w = pull(model, i, w)?;
        let (plo, phi_r) = potential.range_on(w.0, w.1, model, i);
        cum_phi.0.add(plo);
        cum_phi.1.add(phi_r);
        let (dlo, dhi) = model.branch(i).log_deriv_range(w.0, w.1);
        cum_logd.0.add(dlo);
        cum_logd.1.add(dhi);
        let n = k + 1;
        for &a in &flanks {
            let first = pull(model, a, w)?;
            let (fp_lo, fp_hi) = potential.range_on(first.0, first.1, model, a);
            let (fd_lo, fd_hi) = model.branch(a).log_deriv_range(first.0, first.1);
            emit(
                n,
                a as u8,
                first,
                (cum_phi.0.value() + fp_lo, cum_phi.1.value() + fp_hi),
                (cum_logd.0.value() + fd_lo, cum_logd.1.value() + fd_hi),
            );
        }
    }
    Ok(())
}

/// Strong connectivity (Tarjan) and cyclic period (gcd of level mismatches
/// over a BFS forest) of the successor graph.
fn graph_structure(n: usize, row_ptr: &[usize], col: &[u32]) -> (bool, u32) {
    // Tarjan, iterative to keep the stack shallow on big alphabets.
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut on_stack = vec![false; n];
    let mut stack = Vec::new();
    let mut counter = 0usize;
    let mut scc_count = 0usize;
    let mut call: Vec<(usize, usize)> = Vec::new();
    for root in 0..n {
        if index[root] != usize::MAX {
            continue;
        }
        call.push((root, row_ptr[root]));
        index[root] = counter;
        low[root] = counter;
        counter += 1;
        stack.push(root);
        on_stack[root] = true;
        while let Some(&(v, edge)) = call.last() {
            if edge < row_ptr[v + 1] {
                call.last_mut().expect("nonempty").1 += 1;
                let w = col[edge] as usize;
                if index[w] == usize::MAX {
                    index[w] = counter;
                    low[w] = counter;
                    counter += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, row_ptr[w]));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
            } else {
                call.pop();
                if let Some(&(parent, _)) = call.last() {
                    low[parent] = low[parent].min(low[v]);
                }
                if low[v] == index[v] {
                    scc_count += 1;
                    while let Some(w) = stack.pop() {
                        on_stack[w] = false;
                        if w == v {
                            break;
                        }
                    }
                }
            }
        }
    }
    let irreducible = scc_count == 1;
    if !irreducible {
        return (false, 0);
    }
    // Period: gcd over all edges of |level(u) + 1 − level(v)| on a BFS tree.
    let mut level = vec![i64::MIN; n];
    let mut queue = std::collections::VecDeque::new();
    level[0] = 0;
    queue.push_back(0usize);
    let mut g: i64 = 0;
    while let Some(v) = queue.pop_front() {
        for e in row_ptr[v]..row_ptr[v + 1] {
            let w = col[e] as usize;
            if level[w] == i64::MIN {
                level[w] = level[v] + 1;
                queue.push_back(w);
            } else {
                g = gcd(g, (level[v] + 1 - level[w]).abs());
            }
        }
    }
    (true, g.max(1) as u32)
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// One-sided extrapolation bounds for a series `v(n) ≈ v_∞ + K/n` sampled
/// at a few widely spaced levels ending at the cap. Fits the limit twice
/// (first-vs-last and middle-vs-last level), envelopes the samples together
/// with both fitted limits, and pads by the sample spread plus four times
/// the fit disagreement — the disagreement picks up curvature the `1/n`
/// model misses. Returns `(lower, upper)` covering every level past the cap
/// under the padded drift model.
fn drift_envelope(samples: &[(f64, f64)]) -> (f64, f64) {
    let fit = |(n1, v1): (f64, f64), (n2, v2): (f64, f64)| -> f64 {
        if n1 >= n2 {
            return v2;
        }
        let k = (v1 - v2) / (1.0 / n1 - 1.0 / n2);
        v2 - k / n2
    };
    let last = *samples.last().expect("nonempty window");
    let f1 = fit(samples[0], last);
    let f2 = fit(samples[samples.len() / 2], last);
    let model_err = (f1 - f2).abs();
    let mut lo = f1.min(f2);
    let mut hi = f1.max(f2);
    let mut smin = f64::INFINITY;
    let mut smax = f64::NEG_INFINITY;
    for &(_, v) in samples {
        lo = lo.min(v);
        hi = hi.max(v);
        smin = smin.min(v);
        smax = smax.max(v);
    }
    let pad = (smax - smin).abs() + 4.0 * model_err + 1e-9;
    (lo - pad, hi + pad)
}

/// Envelope for the per-level increments of `Φ̄` past the cap. Unlike the
/// generic drift envelope, the limit of this series is known exactly — the
/// increments converge to the neutral value `α_i` — and in the generic case
/// they approach it monotonically from one side, because the deviation is
/// the potential sampled along the monotone parabolic orbit. When the
/// window confirms that shape (one-sided, shrinking deviations), every
/// later increment lies between the last sample and `α_i`, and the envelope
/// is the unpadded hull of the window and `α_i`.
///
/// Padding here is not harmless slack. Any padding below `α_i` turns into
/// a phantom per-level decrease rate of `Φ̄`, which for `q > 0` makes the
/// sup-weight tail look divergent up to `s ≈ q·pad` — a threshold growing
/// linearly in `q` that masquerades as a pressure root and wrecks every
/// positive-`q` query (the mirror statement holds for `q < 0` and padding
/// above `α_i`). A window that is *not* a one-sided monotone approach gets
/// the hull padded by the worst sampled deviation, the best overshoot bound
/// the data offers.
fn increment_envelope(samples: &[(f64, f64)], alpha_i: f64) -> (f64, f64) {
    let devs: Vec<f64> = samples.iter().map(|&(_, v)| v - alpha_i).collect();
    let max_dev = devs.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let one_sided =
        devs.iter().all(|&d| d >= -1e-12) || devs.iter().all(|&d| d <= 1e-12);
    let shrinking = devs
        .windows(2)
        .all(|w| w[1].abs() <= w[0].abs() * (1.0 + 1e-6) + 1e-12);
    let pad = if one_sided && shrinking { 1e-9 } else { max_dev + 1e-9 };
    let mut lo = alpha_i;
    let mut hi = alpha_i;
    for &(_, v) in samples {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo - pad, hi + pad)
}

/// Fit the per-class tail parametrics on the deepest enumerated levels.
/// The drift of each constant toward its limit is modeled as `K/n` and the
/// envelope is padded by the observed window spread; the extrapolation is
/// empirical and every consumer reports it alongside results.
fn calibrate_tails(
    model: &MapModel,
    alphabet: &TruncatedAlphabet,
    phi1: &[(f64, f64)],
    logd1: &[(f64, f64)],
    alpha: &[(usize, f64)],
    n_max: u32,
) -> Vec<TailClass> {
    if n_max < 8 {
        return Vec::new();
    }
    let levels = [n_max / 2, (3 * n_max) / 4, n_max];
    let e = model.n_branches();
    let gamma = model.gamma;
    let mut out = Vec::new();
    for &(i, alpha_i) in alpha {
        for a in 0..e {
            if a == i {
                continue;
            }
            for cright in 0..e {
                if cright == i {
                    continue;
                }
                let id_at = |n: u32| {
                    alphabet.id_of(&Word::Block {
                        left: a as u8,
                        mid: i as u8,
                        n,
                        right: cright as u8,
                    })
                };
                let Some(cap_id) = id_at(n_max) else { continue };
                let mut c_lo = Vec::new();
                let mut c_hi = Vec::new();
                let mut inc_lo = Vec::new();
                let mut inc_hi = Vec::new();
                for &n in &levels {
                    let (Some(id), Some(prev)) = (id_at(n), id_at(n - 1)) else { continue };
                    let (id, prev) = (id as usize, prev as usize);
                    let nf = n as f64;
                    let ln_n = nf.ln();
                    c_lo.push((nf, logd1[id].0 - (1.0 + gamma) * ln_n));
                    c_hi.push((nf, logd1[id].1 - (1.0 + gamma) * ln_n));
                    inc_lo.push((nf, phi1[id].0 - phi1[prev].0));
                    inc_hi.push((nf, phi1[id].1 - phi1[prev].1));
                }
                if c_lo.is_empty() {
                    continue;
                }
                let (il, _) = increment_envelope(&inc_lo, alpha_i);
                let (_, ih) = increment_envelope(&inc_hi, alpha_i);
                out.push(TailClass {
                    left: a as u8,
                    mid: i as u8,
                    right: cright as u8,
                    cap: n_max,
                    logd_lo_c: drift_envelope(&c_lo).0,
                    logd_hi_c: drift_envelope(&c_hi).1,
                    phi_cap: phi1[cap_id as usize],
                    inc_lo: il,
                    inc_hi: ih,
                    alpha: alpha_i,
                });
            }
        }
    }
    out
}

fn hash_inputs(model: &MapModel, potential: &Potential, n_max: u32) -> String {
    let mut h = Sha256::new();
    h.update(model.name.as_bytes());
    h.update(model.gamma.to_le_bytes());
    for b in &model.branches {
        h.update(serde_json::to_vec(&b.expr).expect("branch expression serializes"));
        h.update(b.domain.0.to_le_bytes());
        h.update(b.domain.1.to_le_bytes());
        h.update([b.parabolic as u8]);
    }
    h.update(serde_json::to_vec(potential).expect("potential serializes"));
    h.update(n_max.to_le_bytes());
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::{farey_like, manneville_pomeau};

    fn mp1() -> MapModel {
        manneville_pomeau(1.0).unwrap()
    }

    #[test]
    fn mp_short_words_match_grammar() {
        let a = enumerate_words(&mp1(), 1).unwrap();
        let mut shorts: Vec<[u8; 3]> = a
            .words
            .iter()
            .filter_map(|w| match w {
                Word::Short(l) => Some(*l),
                _ => None,
            })
            .collect();
        shorts.sort();
        assert_eq!(
            shorts,
            vec![[0, 1, 0], [0, 1, 1], [1, 0, 1], [1, 1, 0], [1, 1, 1]],
            "short words must match the grammar exactly"
        );
        assert_eq!(a.len(), 5);
    }

    #[test]
    fn mp_level_two_block_unique() {
        let a = enumerate_words(&mp1(), 2).unwrap();
        let blocks: Vec<Word> =
            a.words.iter().copied().filter(|w| w.return_time() == 2).collect();
        assert_eq!(blocks, vec![Word::Block { left: 1, mid: 0, n: 2, right: 1 }]);
    }

    #[test]
    fn farey_words_and_counts() {
        let m = farey_like();
        let a = enumerate_words(&m, 6).unwrap();
        let mut shorts: Vec<[u8; 3]> = a
            .words
            .iter()
            .filter_map(|w| match w {
                Word::Short(l) => Some(*l),
                _ => None,
            })
            .collect();
        shorts.sort();
        assert_eq!(shorts, vec![[0, 1, 0], [1, 0, 1]]);
        // Two parabolic symbols, one flank choice each: #E_n = Σ_i (#E−1)² = 2.
        for n in 2..=6 {
            assert_eq!(a.count_at(n), 2, "level {n}");
        }
        assert!(a
            .words
            .contains(&Word::Block { left: 1, mid: 0, n: 2, right: 1 }));
        assert!(a
            .words
            .contains(&Word::Block { left: 0, mid: 1, n: 2, right: 0 }));
    }

    #[test]
    fn successors_follow_two_letter_overlap() {
        let a = enumerate_words(&mp1(), 5).unwrap();
        let id = a.id_of(&Word::Block { left: 1, mid: 0, n: 2, right: 1 }).unwrap();
        let succ: Vec<Word> =
            a.successors(id).iter().map(|&s| a.words[s as usize]).collect();
        // Last two letters (0, 1): successors are exactly the words starting (0, 1).
        assert!(succ.contains(&Word::Short([0, 1, 0])));
        assert!(succ.contains(&Word::Short([0, 1, 1])));
        assert_eq!(succ.len(), 2);

        let id = a.id_of(&Word::Short([1, 1, 0])).unwrap();
        let succ: Vec<Word> =
            a.successors(id).iter().map(|&s| a.words[s as usize]).collect();
        assert!(succ.contains(&Word::Short([1, 0, 1])));
        for n in 2..=5 {
            assert!(succ.contains(&Word::Block { left: 1, mid: 0, n, right: 1 }), "level {n}");
        }
        assert_eq!(succ.len(), 5);
    }

    #[test]
    fn lambda_q_examples() {
        let mp = mp1();
        assert_eq!(lambda_q(&mp, &Potential::Identity, 5.0), 0.0);
        assert_eq!(lambda_q(&mp, &Potential::Identity, 0.0), 0.0);
        let f = farey_like();
        assert_eq!(lambda_q(&f, &Potential::Identity, 2.0), 0.0);
        assert_eq!(lambda_q(&f, &Potential::Identity, -2.0), 2.0);
        assert_eq!(lambda_q(&f, &Potential::Identity, 0.0), 0.0);
    }

    #[test]
    fn farey_block_cylinder_closed_form() {
        // For the word (1, 0^n, 1): T_0^m(z) = z/(1+mz) gives the cylinder
        // [(n+2)/(2n+3), (n+1)/(2n+1)] exactly.
        let m = farey_like();
        let t = CylinderTable::build_sequential(&m, &Potential::Identity, 8).unwrap();
        for n in [2u32, 4, 7] {
            let id = t
                .alphabet
                .id_of(&Word::Block { left: 1, mid: 0, n, right: 1 })
                .unwrap() as usize;
            let nf = n as f64;
            let lo = (nf + 2.0) / (2.0 * nf + 3.0);
            let hi = (nf + 1.0) / (2.0 * nf + 1.0);
            assert!((t.intervals[id].0 - lo).abs() < 1e-13, "n={n}: {:?}", t.intervals[id]);
            assert!((t.intervals[id].1 - hi).abs() < 1e-13, "n={n}: {:?}", t.intervals[id]);
        }
    }

    #[test]
    fn farey_block_brackets_closed_form() {
        // Identity potential on (1, 0^n, 1): summing the orbit points at the
        // two context endpoints u = 1/3 and u = 1/2 gives
        //   Φ̄_lo = (n+2)/(2n+3) + Σ_{m=1}^{n−1} 1/(m+3),
        //   Φ̄_hi = (n+1)/(2n+1) + Σ_{m=1}^{n−1} 1/(m+2).
        // The chain part of log|F'| telescopes to 2·log((n+2)/3) at the low
        // endpoint and 2·log((n+1)/2) at the high one, while the first-point
        // term (derivative 1/x², decreasing) attains its minimum at the
        // opposite endpoint: per-term decoupling makes the bracket
        //   [2·log((2n+1)(n+2)/(3(n+1))), 2·log((2n+3)(n+1)/(2(n+2)))].
        let m = farey_like();
        let t = CylinderTable::build_sequential(&m, &Potential::Identity, 8).unwrap();
        for n in [2u32, 4, 8] {
            let id = t
                .alphabet
                .id_of(&Word::Block { left: 1, mid: 0, n, right: 1 })
                .unwrap() as usize;
            let nf = n as f64;
            let phi_lo =
                (nf + 2.0) / (2.0 * nf + 3.0) + (1..n).map(|m| 1.0 / (m as f64 + 3.0)).sum::<f64>();
            let phi_hi =
                (nf + 1.0) / (2.0 * nf + 1.0) + (1..n).map(|m| 1.0 / (m as f64 + 2.0)).sum::<f64>();
            assert!((t.phi1[id].0 - phi_lo).abs() < 1e-12, "n={n}");
            assert!((t.phi1[id].1 - phi_hi).abs() < 1e-12, "n={n}");
            let d_lo = 2.0 * ((2.0 * nf + 1.0) * (nf + 2.0) / (3.0 * (nf + 1.0))).ln();
            let d_hi = 2.0 * ((2.0 * nf + 3.0) * (nf + 1.0) / (2.0 * (nf + 2.0))).ln();
            assert!((t.logd1[id].0 - d_lo).abs() < 1e-11, "n={n}: {:?}", t.logd1[id]);
            assert!((t.logd1[id].1 - d_hi).abs() < 1e-11, "n={n}: {:?}", t.logd1[id]);
        }
    }

    #[test]
    fn constant_potentials_give_exact_brackets() {
        let m = mp1();
        for (pot, scale) in [
            (Potential::Polynomial { coeffs: vec![0.0] }, 0.0),
            (Potential::Polynomial { coeffs: vec![1.0] }, 1.0),
        ] {
            let t = CylinderTable::build_sequential(&m, &pot, 6).unwrap();
            for k in 0..t.n_states() {
                let want = scale * t.r[k] as f64;
                assert_eq!(t.phi1[k], (want, want), "word {}", t.alphabet.words[k].label());
            }
            for e in 0..t.n_edges() {
                // Every edge inherits its source's return time.
                let src = t
                    .row_ptr
                    .iter()
                    .position(|&p| p > e)
                    .map(|row| row - 1)
                    .unwrap();
                let want = scale * t.r[src] as f64;
                assert_eq!(t.e_phi[e], (want, want));
            }
        }
    }

    #[test]
    fn cylinders_nest_and_stay_disjoint() {
        let m = mp1();
        let t = CylinderTable::build_sequential(&m, &Potential::Identity, 6).unwrap();
        // Disjoint interiors at each level.
        for level in 1..=6u32 {
            let mut ivs: Vec<(f64, f64)> = (0..t.n_states())
                .filter(|&k| t.r[k] == level)
                .map(|k| t.intervals[k])
                .collect();
            ivs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for w in ivs.windows(2) {
                assert!(w[0].1 <= w[1].0 + 1e-12, "{:?} overlaps {:?}", w[0], w[1]);
            }
        }
        // Nesting: the return block of ω maps each successor cylinder into ω's.
        for id in 0..t.n_states() {
            let w = t.alphabet.words[id];
            for &s in t.alphabet.successors(id as u32) {
                let (first, _, _) =
                    block_bracket(&m, &Potential::Identity, &w, t.intervals[s as usize]).unwrap();
                assert!(
                    first.0 >= t.intervals[id].0 - 1e-12 && first.1 <= t.intervals[id].1 + 1e-12,
                    "edge {} → {} escapes",
                    w.label(),
                    t.alphabet.words[s as usize].label()
                );
            }
        }
    }

    #[test]
    fn block_derivative_power_law_sandwich() {
        // log|F'| midpoints within log C of (1+γ)·log r.
        let m = mp1();
        let t = CylinderTable::build_sequential(&m, &Potential::Identity, 64).unwrap();
        let log_c = 8.0f64.ln();
        for k in 0..t.n_states() {
            if t.r[k] < 2 {
                continue;
            }
            let mid = 0.5 * (t.logd1[k].0 + t.logd1[k].1);
            let target = (1.0 + m.gamma) * (t.r[k] as f64).ln();
            assert!(
                (mid - target).abs() <= log_c,
                "word {}: mid {mid}, target {target}",
                t.alphabet.words[k].label()
            );
        }
    }

    #[test]
    fn edge_brackets_refine_word_brackets() {
        let m = farey_like();
        let pot = Potential::Identity;
        let t = CylinderTable::build_sequential(&m, &pot, 8).unwrap();
        for id in 0..t.n_states() {
            for e in t.row_ptr[id]..t.row_ptr[id + 1] {
                assert!(t.e_phi[e].0 >= t.phi1[id].0 - 1e-12);
                assert!(t.e_phi[e].1 <= t.phi1[id].1 + 1e-12);
                assert!(t.e_logd[e].0 >= t.logd1[id].0 - 1e-12);
                assert!(t.e_logd[e].1 <= t.logd1[id].1 + 1e-12);
            }
        }
    }

    #[test]
    fn deeper_cylinder_data_shrinks_brackets() {
        let m = mp1();
        let pot = Potential::Identity;
        let a = enumerate_words(&m, 4).unwrap();
        let w = Word::Short([1, 0, 1]);
        let widths: Vec<f64> = (0..=2u32)
            .map(|d| {
                let c = cylinder_data(&m, &pot, &a, &w, d).unwrap();
                c.phi_bar.1 - c.phi_bar.0
            })
            .collect();
        assert!(widths[1] <= widths[0] + 1e-15, "{widths:?}");
        assert!(widths[2] <= widths[1] + 1e-15, "{widths:?}");
        assert!(widths[2] < widths[0], "depth refinement must make progress: {widths:?}");
    }

    #[test]
    fn graph_period_detects_farey_alternation() {
        let t = CylinderTable::build_sequential(&farey_like(), &Potential::Identity, 6).unwrap();
        assert!(t.irreducible);
        assert_eq!(t.period, 2, "the two block families strictly alternate");
        let t = CylinderTable::build_sequential(&mp1(), &Potential::Identity, 6).unwrap();
        assert!(t.irreducible);
        assert_eq!(t.period, 1, "the (1,1,1) self-loop kills periodicity");
    }

    #[test]
    fn tail_calibration_brackets_hold_at_deeper_levels() {
        // Calibrate at n_max = 32, then check the extrapolated inequalities
        // against truth at levels 33..64 from a bigger table.
        let m = mp1();
        let pot = Potential::Identity;
        let small = CylinderTable::build_sequential(&m, &pot, 32).unwrap();
        let big = CylinderTable::build_sequential(&m, &pot, 64).unwrap();
        assert!(!small.tails.is_empty());
        for tc in &small.tails {
            for n in 33..=64u32 {
                let id = big
                    .alphabet
                    .id_of(&Word::Block { left: tc.left, mid: tc.mid, n, right: tc.right })
                    .unwrap() as usize;
                let ln_n = (n as f64).ln();
                assert!(
                    big.logd1[id].0 >= (1.0 + m.gamma) * ln_n + tc.logd_lo_c - 1e-9,
                    "logd lower parametric fails at n={n}"
                );
                assert!(
                    big.logd1[id].1 <= (1.0 + m.gamma) * ln_n + tc.logd_hi_c + 1e-9,
                    "logd upper parametric fails at n={n}"
                );
                let gap = (n - tc.cap) as f64;
                assert!(
                    big.phi1[id].0 >= tc.phi_cap.0 + gap * tc.inc_lo - 1e-9,
                    "phi lower slope fails at n={n}"
                );
                assert!(
                    big.phi1[id].1 <= tc.phi_cap.1 + gap * tc.inc_hi + 1e-9,
                    "phi upper slope fails at n={n}"
                );
            }
        }
    }

    #[test]
    fn csv_export_has_row_per_word() {
        let t = CylinderTable::build_sequential(&mp1(), &Potential::Identity, 4).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "word,r,lo,hi,phi_lo,phi_hi,logd_lo,logd_hi");
        assert_eq!(lines.len(), 1 + t.n_states());
    }

    #[test]
    fn build_is_deterministic_and_hashes_inputs() {
        let m = mp1();
        let pot = Potential::Identity;
        let a = CylinderTable::build(&m, &pot, 16).unwrap();
        let b = CylinderTable::build_sequential(&m, &pot, 16).unwrap();
        assert_eq!(a.e_phi, b.e_phi);
        assert_eq!(a.e_logd, b.e_logd);
        assert_eq!(a.input_hash, b.input_hash);
        let c = CylinderTable::build_sequential(&m, &pot, 17).unwrap();
        assert_ne!(a.input_hash, c.input_hash, "hash must separate truncations");
    }
}
