//! Command-line interface: `params`, `align` and `validate`.
//!
//! Exit codes: 0 success (verdict pass), 1 error, 2 verdict fail, 3 verdict unresolved.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::align::{self, Sequences};
use crate::conditions::{self, ConditionReport, Verdict};
use crate::error::{Error, Result};
use crate::map_constants::{self, GumbelParams, LadderOptions, LadderStats};
use crate::model::{self, ScoreModel};
use crate::montecarlo::{self, Row};
use crate::spectral::{self, TiltedModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_UNRESOLVED: i32 = 3;

/// Version of the output and cache schemas.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "markalign", version, about = "Gapless local alignment statistics for Markov chains")]
pub struct Cli {
    /// Worker threads; 1 gives the reference single-thread mode.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print θ*, drifts, the tilted chain and the condition report; with --seed also K*.
    Params(ParamsArgs),
    /// Align sequence pairs and report excursions with normalized scores.
    Align(AlignArgs),
    /// Simulate the Poisson and Gumbel limits on a grid of (n, x).
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct LadderArgs {
    /// Ladder cycles for ν and μ₋.
    #[arg(long, default_value_t = 1_000_000)]
    pub cycles: usize,
    /// Tilted walks per start state for e(x, y).
    #[arg(long, default_value_t = 20_000)]
    pub tail_samples: usize,
    /// Maximal relative standard error accepted for K*.
    #[arg(long)]
    pub stderr_cap: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Seed for the K* simulation; K* is skipped without it.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub ladder: LadderArgs,
    /// Compute J₁ and J₂ even when the sufficient test passes.
    #[arg(long)]
    pub full_j: bool,
    /// Write θ*, K* and their provenance to this JSON file.
    #[arg(long)]
    pub params_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    JsonLines,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// File with the X sequences, one per line.
    pub x_seqs: PathBuf,
    /// File with the Y sequences, one per line.
    pub y_seqs: PathBuf,
    /// Cached parameters from `params --params-cache`.
    #[arg(long)]
    pub params_cache: Option<PathBuf>,
    /// Seed for estimating K* when no cache is given.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub ladder: LadderArgs,
    /// Thresholds t for Cₙ(t).
    #[arg(long = "t", allow_hyphen_values = true)]
    pub t: Vec<f64>,
    /// Only list excursions with peak above this.
    #[arg(long, default_value_t = 0.0)]
    pub min_peak: f64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = montecarlo::DEFAULT_REPLICATES)]
    pub replicates: usize,
    /// Sequence lengths (n_x = n_y = n); repeatable.
    #[arg(long = "n")]
    pub n: Vec<usize>,
    /// Unequal lengths; overrides --n.
    #[arg(long, requires = "ny")]
    pub nx: Option<usize>,
    #[arg(long, requires = "nx")]
    pub ny: Option<usize>,
    /// Threshold parameters x; repeatable.
    #[arg(long = "x", allow_hyphen_values = true)]
    pub x: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Run even if the dependence condition is not verified.
    #[arg(long)]
    pub override_conditions: bool,
    #[arg(long)]
    pub params_cache: Option<PathBuf>,
    #[command(flatten)]
    pub ladder: LadderArgs,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Contents of a params cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsCache {
    pub schema: u32,
    pub version: String,
    pub model_hash: String,
    pub theta_star: f64,
    pub k_star: f64,
    pub k_star_stderr: f64,
    pub lattice: bool,
    pub seed: u64,
    pub cycles: usize,
    pub tail_samples: usize,
}

impl ParamsCache {
    pub fn params(&self) -> GumbelParams {
        GumbelParams { theta_star: self.theta_star, k_star: self.k_star, lattice: self.lattice }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// SHA-256 of the validated model's canonical JSON form.
pub fn model_hash(model: &ScoreModel) -> String {
    let json = serde_json::to_string(&model.to_raw()).expect("model serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

/// Short hash over every input that determines a run's output.
pub fn config_hash(parts: &[(&str, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in parts {
        h.update(k.as_bytes());
        h.update([0]);
        h.update(v.as_bytes());
        h.update([0]);
    }
    hex(&h.finalize()[..8])
}

fn header(out: &mut dyn Write, command: &str, seed: Option<u64>, hash: &str) -> std::io::Result<()> {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    writeln!(out, "# markalign {} {command} schema={SCHEMA_VERSION}", env!("CARGO_PKG_VERSION"))?;
    writeln!(out, "# seed={seed} config_hash={hash}")
}

fn ladder_options(args: &LadderArgs, seed: Option<u64>) -> LadderOptions {
    LadderOptions {
        cycles: args.cycles,
        tail_samples: args.tail_samples,
        seed,
        stderr_cap: args.stderr_cap,
        ..Default::default()
    }
}

fn ladder_hash_parts(args: &LadderArgs) -> Vec<(&'static str, String)> {
    vec![
        ("cycles", args.cycles.to_string()),
        ("tail_samples", args.tail_samples.to_string()),
        ("stderr_cap", format!("{:?}", args.stderr_cap)),
    ]
}

pub fn load_params_cache(path: &Path, model: &ScoreModel) -> Result<ParamsCache> {
    let text = std::fs::read_to_string(path)?;
    let cache: ParamsCache = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    if cache.model_hash != model_hash(model) {
        return Err(Error::InvalidArgument(format!("{} was computed for a different model", path.display())));
    }
    Ok(cache)
}

fn cache_from(model: &ScoreModel, tilted: &TiltedModel, ladder: &LadderStats) -> ParamsCache {
    ParamsCache {
        schema: SCHEMA_VERSION,
        version: env!("CARGO_PKG_VERSION").to_string(),
        model_hash: model_hash(model),
        theta_star: tilted.theta_star,
        k_star: ladder.k_star,
        k_star_stderr: ladder.k_star_stderr,
        lattice: model.lattice(),
        seed: ladder.seed,
        cycles: ladder.cycles,
        tail_samples: ladder.tail_samples,
    }
}

/// Gumbel parameters from a cache, or by simulation when a seed is given.
fn resolve_params(
    model: &ScoreModel,
    tilted: &TiltedModel,
    cache: Option<&Path>,
    seed: Option<u64>,
    ladder: &LadderArgs,
) -> Result<(GumbelParams, String)> {
    if let Some(path) = cache {
        let c = load_params_cache(path, model)?;
        return Ok((c.params(), format!("cache:{}:{}", c.k_star, c.seed)));
    }
    let stats = map_constants::simulate_ladder(model, tilted, &ladder_options(ladder, seed))?;
    Ok((map_constants::gumbel_params(model, tilted, &stats), format!("sim:{}", stats.k_star)))
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", items.join(", "))
}

fn verdict_code(v: Verdict) -> i32 {
    match v {
        Verdict::Pass => EXIT_OK,
        Verdict::Fail => EXIT_FAIL,
        Verdict::Unresolved => EXIT_UNRESOLVED,
    }
}

fn write_report(out: &mut dyn Write, model: &ScoreModel, tilted: &TiltedModel, report: &ConditionReport) -> Result<()> {
    let st = model::stationary(model)?;
    writeln!(out, "alphabet = {:?}", model.symbols())?;
    writeln!(out, "lattice = {}", model.lattice())?;
    if model.score_scale() != 1.0 {
        writeln!(out, "score_scale = {}", model.score_scale())?;
    }
    for w in model.warnings() {
        writeln!(out, "warning = {w:?}")?;
    }
    writeln!(out, "pi_P = {}", fmt_vec(&st.pi_p))?;
    writeln!(out, "pi_Q = {}", fmt_vec(&st.pi_q))?;
    writeln!(out, "mu = {}", tilted.mu)?;
    writeln!(out, "theta_star = {}", tilted.theta_star)?;
    writeln!(out, "mu_star = {}", tilted.mu_star)?;
    writeln!(out, "r_star = {}", fmt_vec(&tilted.r_star))?;
    writeln!(out, "pi_star = {}", fmt_vec(&tilted.pi_star))?;
    for (i, row) in tilted.r_matrix.to_rows().iter().enumerate() {
        writeln!(out, "R_star[{i}] = {}", fmt_vec(row))?;
    }
    writeln!(out, "eigen_ratio_bound = {}", tilted.eigen_ratio_bound())?;
    let s = &report.sufficient_test;
    writeln!(out, "sufficient_test = {} (phi1 = {}, phi2 = {})", if s.pass { "pass" } else { "fail" }, s.phi1, s.phi2)?;
    for j in [&report.j1, &report.j2].into_iter().flatten() {
        writeln!(out, "J{} = {} ({:?}, grad = {:e}, iterations = {})", j.which, j.value, j.status, j.grad_norm, j.iterations)?;
    }
    writeln!(out, "threshold_3_theta_mu_star = {}", report.threshold)?;
    if let Some(iid) = &report.iid_closed_form {
        writeln!(out, "iid.H_joint = {}", iid.h_joint)?;
        writeln!(out, "iid.H1 = {}", iid.h1)?;
        writeln!(out, "iid.H2 = {}", iid.h2)?;
        writeln!(out, "iid.J1 = {}", iid.j1)?;
        writeln!(out, "iid.J2 = {}", iid.j2)?;
        writeln!(out, "iid.entropy_condition = {}", iid.holds)?;
    }
    let pos = model::check_positivity_condition(model);
    writeln!(out, "positive_cycle = {}", pos.holds())?;
    let shift = model::check_shift_condition(model, model::DEFAULT_SHIFT_T_MAX);
    let found: Vec<String> = shift
        .per_shift
        .iter()
        .map(|s| if matches!(s, model::ShiftStatus::WitnessFound(_)) { "found" } else { "none" }.to_string())
        .collect();
    writeln!(out, "shift_witnesses = [{}]", found.join(", "))?;
    if let Some(a) = shift.additive_form {
        writeln!(out, "additive_form = {a}")?;
    }
    writeln!(out, "verdict = {:?}", report.condition12)?;
    Ok(())
}

fn cmd_params(args: &ParamsArgs, out: &mut dyn Write) -> Result<i32> {
    let model = model::load_model(&args.model)?;
    let mut parts = vec![("command", "params".to_string()), ("model", model_hash(&model)), ("full_j", args.full_j.to_string())];
    parts.extend(ladder_hash_parts(&args.ladder));
    parts.push(("seed", format!("{:?}", args.seed)));
    header(out, "params", args.seed, &config_hash(&parts))?;
    let tilted = spectral::solve_theta_star(&model)?;
    let report = if args.full_j {
        conditions::condition_report(&model, &tilted)?
    } else {
        conditions::condition_verdict(&model, &tilted)?
    };
    write_report(out, &model, &tilted, &report)?;
    if args.seed.is_some() {
        let stats = map_constants::simulate_ladder(&model, &tilted, &ladder_options(&args.ladder, args.seed))?;
        writeln!(out, "nu = {}", fmt_vec(&stats.nu))?;
        writeln!(out, "mu_minus = {} +- {}", stats.mu_minus, stats.mu_minus_stderr)?;
        writeln!(out, "wald_mu_minus = {} +- {}", stats.wald_mu_minus, stats.wald_stderr)?;
        writeln!(out, "e = {}", fmt_vec(&stats.e_table))?;
        writeln!(out, "e_stderr = {}", fmt_vec(&stats.e_stderr))?;
        writeln!(out, "K_star = {} +- {}", stats.k_star, stats.k_star_stderr)?;
        if let Some(path) = &args.params_cache {
            let cache = cache_from(&model, &tilted, &stats);
            std::fs::write(path, serde_json::to_string_pretty(&cache).expect("cache serializes") + "\n")?;
        }
    } else if args.params_cache.is_some() {
        return Err(Error::SeedRequired);
    }
    Ok(verdict_code(report.condition12))
}

fn cmd_align(args: &AlignArgs, out: &mut dyn Write) -> Result<i32> {
    let model = model::load_model(&args.model)?;
    let xs = align::load_sequences(&model, &args.x_seqs)?;
    let ys = align::load_sequences(&model, &args.y_seqs)?;
    let tilted = spectral::solve_theta_star(&model)?;
    let (params, source) = resolve_params(&model, &tilted, args.params_cache.as_deref(), args.seed, &args.ladder)?;
    let mut parts = vec![
        ("command", "align".to_string()),
        ("model", model_hash(&model)),
        ("params", source),
        ("t", fmt_vec(&args.t)),
        ("min_peak", args.min_peak.to_string()),
    ];
    parts.extend(ladder_hash_parts(&args.ladder));
    header(out, "align", args.seed, &config_hash(&parts))?;
    writeln!(out, "# theta_star={} K_star={} lattice={}", params.theta_star, params.k_star, params.lattice)?;
    if args.format == Format::Csv {
        writeln!(out, "record,pair_x,pair_y,n_x,n_y,i,j,delta,peak,end,s_prime,p_value,t,count")?;
    }
    for (ix, x) in xs.iter().enumerate() {
        for (iy, y) in ys.iter().enumerate() {
            let seqs = Sequences::new(&model, x.clone(), y.clone())?;
            let result = align::score_matrix_scan(&model, &seqs);
            let (nx, ny) = (seqs.n_x().max(1), seqs.n_y().max(1));
            let m_pval = if result.excursions.is_empty() { 1.0 } else { map_constants::p_value(&params, result.m_n, nx, ny) };
            emit(out, args.format, "max", ix, iy, &seqs, None, result.m_n, &params, m_pval)?;
            for &t in &args.t {
                let c = result.c_of_t(t);
                match args.format {
                    Format::Csv => writeln!(out, "count,{ix},{iy},{},{},,,,,,,,{t},{c}", seqs.n_x(), seqs.n_y())?,
                    Format::JsonLines => writeln!(
                        out,
                        "{}",
                        serde_json::json!({"record": "count", "pair_x": ix, "pair_y": iy, "t": t, "count": c})
                    )?,
                }
            }
            for e in result.excursions.iter().filter(|e| e.peak > args.min_peak) {
                let p = map_constants::p_value(&params, e.peak, nx, ny);
                emit(out, args.format, "excursion", ix, iy, &seqs, Some(e), e.peak, &params, p)?;
            }
        }
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn emit(
    out: &mut dyn Write,
    format: Format,
    record: &str,
    ix: usize,
    iy: usize,
    seqs: &Sequences,
    e: Option<&align::Excursion>,
    score: f64,
    params: &GumbelParams,
    p: f64,
) -> Result<()> {
    let (nx, ny) = (seqs.n_x().max(1), seqs.n_y().max(1));
    let (s_prime, _) = map_constants::normalize_score(params, score, nx, ny);
    match format {
        Format::Csv => {
            let (i, j, d, end) = e.map_or((String::new(), String::new(), String::new(), String::new()), |e| {
                (e.i.to_string(), e.j.to_string(), e.delta.to_string(), format!("{:?}", e.end_reason))
            });
            writeln!(out, "{record},{ix},{iy},{},{},{i},{j},{d},{score},{end},{s_prime},{p},,", seqs.n_x(), seqs.n_y())?;
        }
        Format::JsonLines => {
            let mut v = serde_json::json!({
                "record": record, "pair_x": ix, "pair_y": iy, "n_x": seqs.n_x(), "n_y": seqs.n_y(),
                "peak": score, "s_prime": s_prime, "p_value": p,
            });
            if let Some(e) = e {
                v["i"] = e.i.into();
                v["j"] = e.j.into();
                v["delta"] = e.delta.into();
                v["end"] = format!("{:?}", e.end_reason).into();
            }
            writeln!(out, "{v}")?;
        }
    }
    Ok(())
}

fn cmd_validate(args: &ValidateArgs, out: &mut dyn Write, log: &mut dyn Write) -> Result<i32> {
    let seed = args.seed.ok_or(Error::SeedRequired)?;
    let model = model::load_model(&args.model)?;
    let tilted = spectral::solve_theta_star(&model)?;
    let report = conditions::condition_verdict(&model, &tilted)?;
    if report.condition12 != Verdict::Pass {
        if !args.override_conditions {
            return Err(Error::ConditionNotVerified(format!("verdict {:?}", report.condition12)));
        }
        writeln!(log, "warning: dependence condition verdict {:?}; proceeding on override", report.condition12)?;
    }
    let (params, source) =
        resolve_params(&model, &tilted, args.params_cache.as_deref(), Some(seed), &args.ladder)?;
    let sizes: Vec<(usize, usize)> = match (args.nx, args.ny) {
        (Some(a), Some(b)) => vec![(a, b)],
        _ if args.n.is_empty() => montecarlo::DEFAULT_NS.iter().map(|&n| (n, n)).collect(),
        _ => args.n.iter().map(|&n| (n, n)).collect(),
    };
    let xs: Vec<f64> = if args.x.is_empty() { montecarlo::DEFAULT_XS.to_vec() } else { args.x.clone() };
    let mut parts = vec![
        ("command", "validate".to_string()),
        ("model", model_hash(&model)),
        ("params", source),
        ("replicates", args.replicates.to_string()),
        ("sizes", format!("{sizes:?}")),
        ("x", fmt_vec(&xs)),
        ("override", args.override_conditions.to_string()),
    ];
    parts.extend(ladder_hash_parts(&args.ladder));
    let mut buf: Vec<u8> = Vec::new();
    header(&mut buf, "validate", Some(seed), &config_hash(&parts))?;
    writeln!(buf, "# theta_star={} K_star={} lattice={}", params.theta_star, params.k_star, params.lattice)?;
    if args.format == Format::Csv {
        writeln!(buf, "{}", montecarlo::CSV_HEADER)?;
    }
    for &(nx, ny) in &sizes {
        let runs = montecarlo::validate_poisson_grid(
            &model,
            &params,
            report.condition12,
            args.override_conditions,
            nx,
            ny,
            &xs,
            args.replicates,
            seed,
        )?;
        for run in &runs {
            let row = Row::from(run);
            match args.format {
                Format::Csv => writeln!(buf, "{}", row.csv())?,
                Format::JsonLines => writeln!(buf, "{}", row.json())?,
            }
            writeln!(
                log,
                "n=({nx},{ny}) x={} lambda={:.4} tv={:.4} p_hat={:.4} target={:.4} mean={:.4}",
                run.x, run.lambda, run.tv_distance, run.p_hat, run.gumbel_target, run.mean_count
            )?;
        }
    }
    match &args.output {
        Some(path) => std::fs::write(path, &buf)?,
        None => out.write_all(&buf)?,
    }
    Ok(EXIT_OK)
}

/// Run the CLI on `args`, writing results to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(err, "{}", e.render()) } else { write!(out, "{}", e.render()) };
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_ERROR;
        }
    };
    let (mut obuf, mut ebuf) = (Vec::new(), Vec::new());
    let result = pool.install(|| match &cli.command {
        Command::Params(a) => cmd_params(a, &mut obuf),
        Command::Align(a) => cmd_align(a, &mut obuf),
        Command::Validate(a) => cmd_validate(a, &mut obuf, &mut ebuf),
    });
    let _ = out.write_all(&obuf);
    let _ = err.write_all(&ebuf);
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_ERROR
        }
    }
}
