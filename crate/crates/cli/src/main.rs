//! Command-line front end: loads one TOML run configuration, dispatches to
//! the engine, and emits machine-readable records.
//!
//! Every record — JSON envelope or CSV comment header — carries the engine
//! version, the configuration hash, the truncation, and the tolerances, so
//! emitted files are self-describing. Outputs are byte-identical across
//! reruns and thread counts; when a cache directory is configured the bytes
//! are stored under the content hash of (configuration, engine version,
//! command) and replayed verbatim on a hit.
//!
//! Exit codes: 0 success, 2 configuration error (with location), 3 numeric
//! non-convergence (with diagnostics), 1 anything else.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use parapress::config::RunConfig;
use parapress::gibbs::GibbsApprox;
use parapress::induced::CylinderTable;
use parapress::map::{validate_map, MapModel, SamplingPlan};
use parapress::oracle::{
    exhaustive_cycle_means, finite_subshift_thermo, orbit_birkhoff_histogram, LinearizedModel,
};
use parapress::pressure::{
    pressure_derivatives, second_derivative_q, solve_p, QuerySystem, WarmStart,
};
use parapress::spectrum::{alpha_range, birkhoff_point, bowen_dimension, plateau, spectrum_curve};
use parapress::{Error, Result, ENGINE_VERSION};

#[derive(Parser)]
#[command(
    name = "parapress",
    version,
    about = "Pressure, Gibbs statistics, dimension, and Birkhoff spectra \
             for interval maps with neutral fixed points"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short = 'c', global = true, default_value = "parapress.toml")]
    config: PathBuf,
    /// Override truncation.n_max from the configuration.
    #[arg(long, global = true)]
    n_max: Option<u32>,
    /// Override truncation.depth from the configuration.
    #[arg(long, global = true)]
    depth: Option<u32>,
    /// Override output.path from the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Bypass the result cache for this run.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Serialize)]
enum Cmd {
    /// Parse the configuration, build the map, and audit the model axioms.
    Validate,
    /// Pressure bracket at fixed s, the solved p(b,q), or a grid of solves.
    Pressure(PressureArgs),
    /// Gibbs-measure statistics at (b, q), at the solved s = p(b,q).
    Gibbs(GibbsArgs),
    /// Bowen dimension of the limit set, with certified bounds.
    Dimension,
    /// Birkhoff spectrum b(α): a single α or a grid.
    Spectrum(SpectrumArgs),
    /// Independent brute-force cross-checks for CI.
    #[command(subcommand)]
    Oracle(OracleCmd),
}

#[derive(Args, Serialize)]
struct PressureArgs {
    #[arg(long, allow_negative_numbers = true, requires = "q")]
    b: Option<f64>,
    #[arg(long, allow_negative_numbers = true, requires = "b")]
    q: Option<f64>,
    /// Evaluate the two-sided bracket at this s.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "solve_p", requires = "b")]
    s: Option<f64>,
    /// Solve the pressure equation for s = p(b,q).
    #[arg(long, requires = "b")]
    solve_p: bool,
    /// Grid mode: b over lo:hi:n (emits CSV with derivatives).
    #[arg(long, value_name = "LO:HI:N", conflicts_with_all = ["b", "q", "s", "solve_p"], requires = "grid_q")]
    grid_b: Option<GridSpec>,
    /// Grid mode: q over lo:hi:n.
    #[arg(long, value_name = "LO:HI:N", requires = "grid_b")]
    grid_q: Option<GridSpec>,
}

#[derive(Args, Serialize)]
struct GibbsArgs {
    #[arg(long, allow_negative_numbers = true)]
    b: f64,
    #[arg(long, allow_negative_numbers = true)]
    q: f64,
    /// Also write the 1-cylinder masses as CSV to this path.
    #[arg(long, value_name = "PATH")]
    masses: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SpectrumArgs {
    /// Solve the spectrum at one Birkhoff average.
    #[arg(long, allow_negative_numbers = true, conflicts_with = "grid", required_unless_present = "grid")]
    alpha: Option<f64>,
    /// Solve along an inclusive α-grid lo:hi:n (emits CSV plus a summary).
    #[arg(long, value_name = "LO:HI:N")]
    grid: Option<GridSpec>,
}

#[derive(Subcommand, Serialize)]
enum OracleCmd {
    /// Closed-form dimension of the linearized full-shift model vs the
    /// engine's bracket bisection on the same weights.
    LinearizedRoot {
        #[arg(long, default_value_t = 2)]
        k: u32,
        #[arg(long, default_value_t = 1.7)]
        c: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 400)]
        level_cap: u32,
    },
    /// Dense independent eigensolve of the truncated weight matrices vs the
    /// engine's bracket at (b, q, s).
    PressureCheck {
        #[arg(long, allow_negative_numbers = true)]
        b: f64,
        #[arg(long, allow_negative_numbers = true)]
        q: f64,
        #[arg(long, allow_negative_numbers = true)]
        s: f64,
    },
    /// Exhaustive simple-cycle means of Φ̄/R vs the engine's admissible
    /// α-range.
    CycleMeans {
        #[arg(long, default_value_t = 4)]
        max_len: usize,
    },
    /// Monte-Carlo histogram of Birkhoff averages under the configured map
    /// and potential.
    Histogram {
        #[arg(long, default_value_t = 4000)]
        points: usize,
        #[arg(long, default_value_t = 3000)]
        iters: usize,
        #[arg(long, default_value_t = 60)]
        bins: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, allow_negative_numbers = true, default_value_t = 0.0)]
        lo: f64,
        #[arg(long, allow_negative_numbers = true, default_value_t = 1.0)]
        hi: f64,
    },
}

/// Inclusive grid `lo:hi:n`.
#[derive(Debug, Clone, Copy, Serialize)]
struct GridSpec {
    lo: f64,
    hi: f64,
    n: usize,
}

impl GridSpec {
    fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.lo + step * i as f64).collect()
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected lo:hi:n, got \"{s}\""));
        }
        let lo: f64 = parts[0].parse().map_err(|e| format!("lo: {e}"))?;
        let hi: f64 = parts[1].parse().map_err(|e| format!("hi: {e}"))?;
        let n: usize = parts[2].parse().map_err(|e| format!("n: {e}"))?;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(format!("need finite lo ≤ hi, got {lo}:{hi}"));
        }
        if n == 0 || (n == 1 && lo != hi) {
            return Err(format!("need at least 2 points for a proper range, got {n}"));
        }
        Ok(GridSpec { lo, hi, n })
    }
}

/// Everything one command emits: the primary stream and, for grid spectra,
/// a JSON summary carried alongside.
struct Emission {
    primary: Vec<u8>,
    primary_is_csv: bool,
    summary: Option<Vec<u8>>,
}

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Config(_) => 2,
                Error::Numeric { .. } => 3,
                _ => 1,
            };
            std::process::exit(code);
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = RunConfig::from_path(&cli.config).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", cli.config.display())),
        other => other,
    })?;
    if let Some(n) = cli.n_max {
        cfg.truncation.n_max = n;
    }
    if let Some(d) = cli.depth {
        cfg.truncation.depth = d;
    }
    if let Some(p) = &cli.out {
        cfg.output.path = Some(p.clone());
    }
    cfg.validate()?;

    let cache = cache_dir(cli, &cfg);
    let key = cache_key(&cfg, &cli.cmd);
    if let Some(dir) = &cache {
        if let Some(hit) = cache_read(dir, &key) {
            return emit(&cfg, hit);
        }
    }
    let emission = dispatch(&cli.cmd, &cfg)?;
    if let Some(dir) = &cache {
        // Best effort: a read-only cache directory must not fail the run.
        let _ = cache_write(dir, &key, &emission);
    }
    emit(&cfg, emission)
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

fn dispatch(cmd: &Cmd, cfg: &RunConfig) -> Result<Emission> {
    match cmd {
        Cmd::Validate => cmd_validate(cfg),
        Cmd::Pressure(args) => cmd_pressure(cfg, args),
        Cmd::Gibbs(args) => cmd_gibbs(cfg, args),
        Cmd::Dimension => cmd_dimension(cfg),
        Cmd::Spectrum(args) => cmd_spectrum(cfg, args),
        Cmd::Oracle(which) => cmd_oracle(cfg, which),
    }
}

fn build_table(cfg: &RunConfig) -> Result<CylinderTable> {
    let model = cfg.build_map()?;
    let potential = cfg.build_potential()?;
    CylinderTable::build(&model, &potential, cfg.truncation.n_max)
}

fn json_emission(cfg: &RunConfig, command: &str, result: serde_json::Value) -> Emission {
    let record = json!({
        "engine_version": ENGINE_VERSION,
        "config_hash": cfg.content_hash(),
        "command": command,
        "truncation": cfg.truncation,
        "tolerances": cfg.tolerances,
        "result": result,
    });
    let mut bytes = serde_json::to_vec(&record).expect("record serializes");
    bytes.push(b'\n');
    Emission { primary: bytes, primary_is_csv: false, summary: None }
}

fn csv_header(cfg: &RunConfig, command: &str) -> String {
    let mut head = String::new();
    let _ = writeln!(head, "# engine_version = {ENGINE_VERSION}");
    let _ = writeln!(head, "# config_hash = {}", cfg.content_hash());
    let _ = writeln!(head, "# command = {command}");
    let _ = writeln!(
        head,
        "# truncation = {}",
        serde_json::to_string(&cfg.truncation).expect("truncation serializes")
    );
    let _ = writeln!(
        head,
        "# tolerances = {}",
        serde_json::to_string(&cfg.tolerances).expect("tolerances serializes")
    );
    head
}

fn cmd_validate(cfg: &RunConfig) -> Result<Emission> {
    let model = cfg.build_map()?;
    let potential = cfg.build_potential()?;
    let report = validate_map(&model, &potential, &SamplingPlan::default())?;
    let result = json!({
        "map": model.name,
        "gamma": model.gamma,
        "passed": report.passed(),
        "report": report,
    });
    Ok(json_emission(cfg, "validate", result))
}

fn cmd_pressure(cfg: &RunConfig, args: &PressureArgs) -> Result<Emission> {
    let table = build_table(cfg)?;
    let depth = cfg.truncation.depth;
    if let (Some(gb), Some(gq)) = (&args.grid_b, &args.grid_q) {
        let mut out = csv_header(cfg, "pressure");
        out.push_str("b,q,p,db_p,dq_p,d2q_p\n");
        for &b in &gb.points() {
            for &q in &gq.points() {
                let sol = solve_p(&table, b, q, depth, &cfg.tolerances)?;
                if sol.in_n {
                    let d = pressure_derivatives(&table, b, q, depth, &cfg.tolerances)?;
                    let d2 = second_derivative_q(&table, b, q, depth, &cfg.tolerances)?;
                    let _ = writeln!(out, "{b},{q},{},{},{},{}", sol.p_value, d.db, d.dq, d2.d2q);
                } else {
                    // Outside the differentiability domain the value is the
                    // variational fallback and the derivative cells stay empty.
                    let _ = writeln!(out, "{b},{q},{},,,", sol.p_value);
                }
            }
        }
        return Ok(Emission { primary: out.into_bytes(), primary_is_csv: true, summary: None });
    }
    let (b, q) = match (args.b, args.q) {
        (Some(b), Some(q)) => (b, q),
        _ => {
            return Err(Error::Config(
                "pressure needs --b and --q (with --s or --solve-p), or --grid-b and --grid-q"
                    .into(),
            ))
        }
    };
    let result = if let Some(s) = args.s {
        let sys = QuerySystem::new(&table, b, q, depth)?;
        let mut warm = WarmStart::default();
        let br = sys.bracket(s, &cfg.tolerances, &mut warm)?;
        json!({
            "query": {"b": b, "q": q, "s": s},
            "bracket": br,
            "mid": br.mid(),
            "width": br.width(),
        })
    } else if args.solve_p {
        let sol = solve_p(&table, b, q, depth, &cfg.tolerances)?;
        json!({
            "query": {"b": b, "q": q},
            "solution": sol,
        })
    } else {
        return Err(Error::Config("pressure needs --s <value> or --solve-p".into()));
    };
    Ok(json_emission(cfg, "pressure", result))
}

fn cmd_gibbs(cfg: &RunConfig, args: &GibbsArgs) -> Result<Emission> {
    let table = build_table(cfg)?;
    let sol = solve_p(&table, args.b, args.q, cfg.truncation.depth, &cfg.tolerances)?;
    if !sol.in_n {
        return Err(Error::Domain(format!(
            "({}, {}) lies outside the equilibrium domain: p = Λ_q = {}",
            args.b, args.q, sol.lambda_q
        )));
    }
    let gb = GibbsApprox::build(&table, args.b, args.q, sol.p_value, &cfg.tolerances)?;
    if let Some(path) = &args.masses {
        let mut csv = csv_header(cfg, "gibbs");
        csv.push_str("word,r,mass\n");
        for (k, w) in table.alphabet.words.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{}", w.label(), table.r[k], gb.stationary[k]);
        }
        std::fs::write(path, csv)?;
    }
    let result = json!({
        "query": {"b": args.b, "q": args.q},
        "p": sol.p_value,
        "stats": gb.stats(),
        "gibbs_constant": gb.gibbs_constant,
        "perron_value": gb.perron_value,
    });
    Ok(json_emission(cfg, "gibbs", result))
}

fn cmd_dimension(cfg: &RunConfig) -> Result<Emission> {
    let table = build_table(cfg)?;
    let report = bowen_dimension(&table, &cfg.tolerances)?;
    Ok(json_emission(cfg, "dimension", json!({ "dimension": report })))
}

fn cmd_spectrum(cfg: &RunConfig, args: &SpectrumArgs) -> Result<Emission> {
    let table = build_table(cfg)?;
    let tols = &cfg.tolerances;
    let dim = bowen_dimension(&table, tols)?;
    let info = plateau(&table, dim.delta, tols)?;
    let range = alpha_range(&table)?;
    let summary = json!({
        "delta": info.delta,
        "plateau": [info.a_lo, info.a_hi],
        "alpha_range": [range.0, range.1],
        "boundary_band": info.boundary_band,
    });
    if let Some(alpha) = args.alpha {
        let point = birkhoff_point(&table, alpha, &info, tols, None)?;
        let result = json!({
            "summary": summary,
            "point": point,
        });
        return Ok(json_emission(cfg, "spectrum", result));
    }
    let grid = args.grid.expect("clap enforces --alpha xor --grid");
    let alphas = grid.points();
    let curve = spectrum_curve(&table, &alphas, &info, tols);
    let mut out = csv_header(cfg, "spectrum");
    out.push_str("alpha,b,q,h,lambda,mu_phi,res_p,res_dq,flags\n");
    let mut failed = 0usize;
    for cp in &curve {
        match (&cp.point, &cp.error) {
            (Some(p), _) => {
                let q = p.q_alpha.map(|v| v.to_string()).unwrap_or_default();
                let mut flags = if p.on_plateau {
                    "plateau".to_string()
                } else if p.band_flag {
                    "band".to_string()
                } else {
                    "off".to_string()
                };
                if p.stats.tail_warning {
                    flags.push_str(";tail");
                }
                let _ = writeln!(
                    out,
                    "{},{},{q},{},{},{},{},{},{flags}",
                    cp.alpha, p.b_alpha, p.projected.h, p.projected.lambda, p.projected.alpha,
                    p.res_p, p.res_dq,
                );
            }
            (None, err) => {
                failed += 1;
                let msg = err.as_deref().unwrap_or("unknown").replace([',', '\n'], ";");
                let _ = writeln!(out, "{},,,,,,,,error:{msg}", cp.alpha);
            }
        }
    }
    let summary = json!({
        "engine_version": ENGINE_VERSION,
        "config_hash": cfg.content_hash(),
        "command": "spectrum",
        "truncation": cfg.truncation,
        "tolerances": cfg.tolerances,
        "result": {
            "summary": summary,
            "grid": grid,
            "n_points": alphas.len(),
            "n_failed": failed,
        },
    });
    let mut summary_bytes = serde_json::to_vec(&summary).expect("summary serializes");
    summary_bytes.push(b'\n');
    Ok(Emission {
        primary: out.into_bytes(),
        primary_is_csv: true,
        summary: Some(summary_bytes),
    })
}

fn cmd_oracle(cfg: &RunConfig, which: &OracleCmd) -> Result<Emission> {
    match which {
        OracleCmd::LinearizedRoot { k, c, gamma, level_cap } => {
            let mut model = LinearizedModel::new(*k, *c, *gamma);
            model.level_cap = Some(u64::from(*level_cap));
            let oracle_root = model.bowen_root()?;
            let engine_root = linearized_engine_root(&model, *level_cap, cfg)?;
            let gap = (oracle_root - engine_root).abs();
            let result = json!({
                "model": {"k": k, "c": c, "gamma": gamma, "level_cap": level_cap},
                "oracle_root": oracle_root,
                "engine_root": engine_root,
                "gap": gap,
                "agree": gap < 1e-6,
            });
            Ok(json_emission(cfg, "oracle.linearized-root", result))
        }
        OracleCmd::PressureCheck { b, q, s } => {
            let table = build_table(cfg)?;
            let (w_inf, w_sup) = dense_weights(&table, *b, *q, *s);
            let oracle_inf = finite_subshift_thermo(&w_inf)?.pressure;
            let oracle_sup = finite_subshift_thermo(&w_sup)?.pressure;
            let sys = QuerySystem::new(&table, *b, *q, 1)?;
            let mut warm = WarmStart::default();
            let br = sys.bracket(*s, &cfg.tolerances, &mut warm)?;
            let agree = (oracle_inf - br.lower).abs() < 1e-7
                && oracle_sup <= br.upper + 1e-9
                && br.lower <= oracle_sup + 1e-9;
            let result = json!({
                "query": {"b": b, "q": q, "s": s},
                "bracket": br,
                "oracle_inf": oracle_inf,
                "oracle_sup": oracle_sup,
                "agree": agree,
            });
            Ok(json_emission(cfg, "oracle.pressure-check", result))
        }
        OracleCmd::CycleMeans { max_len } => {
            let table = build_table(cfg)?;
            let n = table.r.len();
            let mut adj = vec![Vec::new(); n];
            for (u, nbrs) in adj.iter_mut().enumerate() {
                for e in table.row_ptr[u]..table.row_ptr[u + 1] {
                    nbrs.push(table.col[e] as usize);
                }
            }
            let value: Vec<f64> =
                table.phi1.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
            let weight: Vec<f64> = table.r.iter().map(|&r| f64::from(r)).collect();
            let (ex_min, ex_max) = exhaustive_cycle_means(&adj, &value, &weight, *max_len)?;
            let (lo, hi) = alpha_range(&table)?;
            let result = json!({
                "max_len": max_len,
                "exhaustive": [ex_min, ex_max],
                "alpha_range": [lo, hi],
                "contained": lo <= ex_min + 1e-9 && ex_max <= hi + 1e-9,
            });
            Ok(json_emission(cfg, "oracle.cycle-means", result))
        }
        OracleCmd::Histogram { points, iters, bins, seed, lo, hi } => {
            let model = cfg.build_map()?;
            let potential = cfg.build_potential()?;
            let hist = orbit_birkhoff_histogram(
                |x| full_map(&model, x),
                |x| potential.value(x, &model, None),
                *points,
                *iters,
                *seed,
                *bins,
                *lo,
                *hi,
            )?;
            let result = json!({
                "lo": hist.lo,
                "hi": hist.hi,
                "counts": hist.counts,
                "total": hist.total,
                "mean": hist.mean,
                "mode_center": hist.mode_center(),
            });
            Ok(json_emission(cfg, "oracle.histogram", result))
        }
    }
}

/// Bisection on the engine's bracket midpoint over the linearized model —
/// the engine side of the linearized-root cross-check.
// The `!(x > 0)` guards reject NaN along with the wrong sign.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn linearized_engine_root(model: &LinearizedModel, n_max: u32, cfg: &RunConfig) -> Result<f64> {
    let mut warm = WarmStart::default();
    let sign = |b: f64, warm: &mut WarmStart| -> Result<f64> {
        let sys = QuerySystem::from_linearized(model, n_max, b, 0.0)?;
        Ok(sys.bracket(0.0, &cfg.tolerances, warm)?.mid())
    };
    let (mut lo, mut hi) = (1.0 / (1.0 + model.gamma) + 1e-3, 4.0);
    if !(sign(lo, &mut warm)? > 0.0) {
        return Err(Error::numeric("linearized pressure not positive at the floor", lo));
    }
    if !(sign(hi, &mut warm)? < 0.0) {
        return Err(Error::numeric("linearized pressure not negative at b = 4", hi));
    }
    for _ in 0..60 {
        if hi - lo <= 1e-9 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if sign(mid, &mut warm)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Dense inf- and sup-weight matrices at `(b, q, s)` over the depth-1 edge
/// brackets — built here, independently of the engine's specialization.
fn dense_weights(table: &CylinderTable, b: f64, q: f64, s: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = table.r.len();
    let pick = |bracket: (f64, f64), coef: f64, sup: bool| -> f64 {
        if (coef >= 0.0) == sup {
            bracket.0
        } else {
            bracket.1
        }
    };
    let mut w_inf = vec![vec![0.0; n]; n];
    let mut w_sup = vec![vec![0.0; n]; n];
    for u in 0..n {
        let su = (-s * f64::from(table.r[u])).exp();
        for e in table.row_ptr[u]..table.row_ptr[u + 1] {
            let v = table.col[e] as usize;
            let phi = table.e_phi[e];
            let logd = table.e_logd[e];
            w_sup[u][v] =
                (-q * pick(phi, q, true) - b * pick(logd, b, true)).exp() * su;
            w_inf[u][v] =
                (-q * pick(phi, q, false) - b * pick(logd, b, false)).exp() * su;
        }
    }
    (w_inf, w_sup)
}

/// The original (non-induced) map as one function on `[0, 1]`.
fn full_map(model: &MapModel, x: f64) -> f64 {
    match model.branch_at(x) {
        Some(i) => model.branch(i).f(x).clamp(0.0, 1.0),
        None => f64::NAN,
    }
}

// ---------------------------------------------------------------------------
// Cache and emission
// ---------------------------------------------------------------------------

fn cache_dir(cli: &Cli, cfg: &RunConfig) -> Option<PathBuf> {
    if cli.no_cache {
        return None;
    }
    match std::env::var_os("PARAPRESS_CACHE_DIR") {
        Some(dir) if !dir.is_empty() => Some(PathBuf::from(dir)),
        _ => cfg.cache.dir.clone(),
    }
}

fn cache_key(cfg: &RunConfig, cmd: &Cmd) -> String {
    let mut h = Sha256::new();
    h.update(cfg.content_hash().as_bytes());
    h.update([0]);
    h.update(ENGINE_VERSION.as_bytes());
    h.update([0]);
    h.update(serde_json::to_vec(cmd).expect("command serializes"));
    hex::encode(h.finalize())
}

fn cache_read(dir: &Path, key: &str) -> Option<Emission> {
    let primary = std::fs::read(dir.join(format!("{key}.out"))).ok()?;
    let summary = std::fs::read(dir.join(format!("{key}.summary"))).ok();
    let primary_is_csv = primary.starts_with(b"#") || !primary.starts_with(b"{");
    Some(Emission { primary, primary_is_csv, summary })
}

fn cache_write(dir: &Path, key: &str, emission: &Emission) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{key}.out")), &emission.primary)?;
    if let Some(summary) = &emission.summary {
        std::fs::write(dir.join(format!("{key}.summary")), summary)?;
    }
    Ok(())
}

fn emit(cfg: &RunConfig, emission: Emission) -> Result<()> {
    match &cfg.output.path {
        Some(path) => {
            std::fs::write(path, &emission.primary)?;
            if let Some(summary) = &emission.summary {
                std::fs::write(path.with_extension("summary.json"), summary)?;
            }
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(&emission.primary)?;
            if let Some(summary) = &emission.summary {
                // Keep the combined stream a valid CSV: the summary rides as
                // a final comment line.
                if emission.primary_is_csv {
                    lock.write_all(b"# summary = ")?;
                }
                lock.write_all(summary)?;
            }
            lock.flush()?;
        }
    }
    Ok(())
}
