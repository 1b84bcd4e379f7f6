use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use pnc_arq::markov::{hop_by_hop, margin, pnc_viable, Proposition};
use pnc_arq::optimize::{optimize, overhead_e1, OptimizeOptions};
use pnc_arq::sim::run_many;
use pnc_arq::*;

mod manifest;
mod tables;

use manifest::{append_csv, output_path, write_csv, RunManifest};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl ToString) -> CliError {
    CliError::Runtime(e.to_string())
}

type Result<T> = std::result::Result<T, CliError>;

/// ARQ for PNC relay atoms: analysis, simulation, table reproduction and
/// window/ACK-frequency optimization.
#[derive(Debug, Parser)]
#[command(name = "pnc-arq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Idealized throughputs and proposition margins over a p grid.
    Analyze(AnalyzeArgs),
    /// Run the round simulator for one or more link probabilities.
    Simulate(SimulateArgs),
    /// Reproduce a published table next to the reference values.
    Table(TableArgs),
    /// Search W and N under the overhead budget.
    Optimize(OptimizeArgs),
}

#[derive(Debug, Clone, PartialEq)]
enum AtomArg {
    Cross,
    Star,
    File(PathBuf),
}

impl std::fmt::Display for AtomArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AtomArg::Cross => f.write_str("cross"),
            AtomArg::Star => f.write_str("star"),
            AtomArg::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

fn parse_atom(s: &str) -> std::result::Result<AtomArg, String> {
    match s {
        "cross" => Ok(AtomArg::Cross),
        "star" => Ok(AtomArg::Star),
        _ => match s.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(AtomArg::File(PathBuf::from(p))),
            _ => Err(format!("expected cross, star or file:<path>, got '{s}'")),
        },
    }
}

fn parse_seed(s: &str) -> std::result::Result<u64, String> {
    let r = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    r.map_err(|e| format!("bad seed '{s}': {e}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TrackingArg {
    Off,
    Single,
    Multi,
}

impl From<TrackingArg> for Tracking {
    fn from(t: TrackingArg) -> Self {
        match t {
            TrackingArg::Off => Tracking::Off,
            TrackingArg::Single => Tracking::Single,
            TrackingArg::Multi => Tracking::Multi,
        }
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Homogeneous link probabilities, comma separated.
    #[arg(long, value_delimiter = ',')]
    p: Vec<f64>,
    /// Homogeneous grid `from:to:step`; `to` is always included.
    #[arg(long, value_name = "FROM:TO:STEP")]
    range: Option<String>,
    /// Relay-link probabilities for a (p1, p2) grid.
    #[arg(long, value_delimiter = ',', requires = "p2")]
    p1: Vec<f64>,
    /// Overhearing-link probabilities for a (p1, p2) grid.
    #[arg(long, value_delimiter = ',', requires = "p1")]
    p2: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value = "cross", value_parser = parse_atom)]
    atom: AtomArg,
    /// Homogeneous link probability; a comma separated list runs one cell each.
    #[arg(long, value_delimiter = ',')]
    p: Vec<f64>,
    /// Cross atom: relay decode probability.
    #[arg(long)]
    p1: Option<f64>,
    /// Cross atom: R -> C.
    #[arg(long)]
    p2: Option<f64>,
    /// Cross atom: R -> D.
    #[arg(long)]
    p3: Option<f64>,
    /// Cross atom: B -> C overhearing.
    #[arg(long)]
    p4: Option<f64>,
    /// Cross atom: A -> D overhearing.
    #[arg(long)]
    p5: Option<f64>,
    /// Error-free, free feedback every round (default).
    #[arg(long, conflicts_with = "realistic")]
    ideal: bool,
    /// SACK frames every N coded receptions over lossy reverse links.
    #[arg(long)]
    realistic: bool,
    #[arg(long, conflicts_with = "noncoupled")]
    coupled: bool,
    /// Default.
    #[arg(long)]
    noncoupled: bool,
    /// Bare `--tracking` means single.
    #[arg(long, value_enum, num_args = 0..=1, default_value = "single", default_missing_value = "single")]
    tracking: TrackingArg,
    #[arg(long, default_value_t = 1)]
    w: usize,
    #[arg(long, default_value_t = 1)]
    n: u32,
    #[arg(long, default_value_t = 30)]
    k: u32,
    #[arg(long, default_value_t = 600)]
    d: u32,
    #[arg(long, default_value_t = 200_000)]
    rounds: u64,
    #[arg(long, default_value_t = 10_000)]
    warmup: u64,
    /// Decimal or 0x-prefixed hex.
    #[arg(long, default_value = "1", value_parser = parse_seed)]
    seed: u64,
    /// CSV file; rows are appended when it already has the same columns.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TableArgs {
    /// One of 1, 2, 3, 4, 6, 7, 8, 9, 10.
    id: u8,
    #[arg(long, default_value_t = 200_000)]
    rounds: u64,
    #[arg(long, default_value_t = 10_000)]
    warmup: u64,
    #[arg(long, default_value = "1", value_parser = parse_seed)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    k: u32,
    #[arg(long, default_value_t = 600)]
    d: u32,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    #[arg(long, default_value = "cross", value_parser = parse_atom)]
    atom: AtomArg,
    /// Link probability the search is run at.
    #[arg(long, default_value_t = 0.57)]
    p_floor: f64,
    /// Total tolerated throughput loss.
    #[arg(long, default_value_t = 0.05)]
    e0: f64,
    /// Feedback share of e0.
    #[arg(long, default_value_t = 0.025)]
    e1: f64,
    /// Header share of e1; fixes N.
    #[arg(long, default_value_t = 0.0125)]
    e1_header: f64,
    #[arg(long, default_value_t = 30)]
    k: u32,
    #[arg(long, default_value_t = 600)]
    d: u32,
    /// Use this N instead of deriving it from the header budget.
    #[arg(long)]
    n: Option<u32>,
    #[arg(long, default_value_t = 10)]
    step: usize,
    #[arg(long, default_value_t = 2)]
    refine_step: usize,
    #[arg(long, value_enum, default_value = "single")]
    tracking: TrackingArg,
    #[arg(long, default_value_t = 200_000)]
    rounds: u64,
    #[arg(long, default_value_t = 10_000)]
    warmup: u64,
    #[arg(long, default_value = "1", value_parser = parse_seed)]
    seed: u64,
    /// Sweep CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(a) => simulate(a),
        Command::Table(a) => table(a),
        Command::Optimize(a) => cmd_optimize(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let [from, to, step] = parts.as_slice() else {
        return Err(usage(format!("range must be FROM:TO:STEP, got '{s}'")));
    };
    let num = |x: &str| x.parse::<f64>().map_err(|e| usage(format!("bad range value '{x}': {e}")));
    let (from, to, step) = (num(from)?, num(to)?, num(step)?);
    if step.is_nan() || step <= 0.0 {
        return Err(usage("range step must be positive"));
    }
    let dir = if to >= from { 1.0 } else { -1.0 };
    let mut out = Vec::new();
    let mut i = 0.0;
    loop {
        let x = round9(from + dir * step * i);
        if (x - to) * dir > 1e-9 {
            break;
        }
        out.push(x);
        i += 1.0;
    }
    if out.last().is_none_or(|l| (l - to).abs() > 1e-9) {
        out.push(to);
    }
    Ok(out)
}

fn check_p(p: f64) -> Result<f64> {
    if p > 0.0 && p <= 1.0 {
        Ok(p)
    } else {
        Err(usage(format!("probability {p} outside (0, 1]")))
    }
}

const ANALYZE_HEADER: &str = "p1,p2,th1,th2,th3,hop_by_hop_per_slot,th1_per_slot,f_tracking,g_noncoupled,gain_tracking,gain_noncoupled,pnc_viable";

fn analyze_row(p1: f64, p2: f64) -> Result<String> {
    let e = runtime;
    let (t1, t2, t3) = (th1(p1, p2).map_err(e)?, th2(p1, p2).map_err(e)?, th3(p1, p2).map_err(e)?);
    let f = margin(Proposition::TrackingGain, p1, p2).map_err(e)?;
    let g = margin(Proposition::NonCoupledGain, p1, p2).map_err(e)?;
    let viable = if p1 == p2 { pnc_viable(p1).map_err(e)?.to_string() } else { String::new() };
    Ok(format!(
        "{p1},{p2},{t1:.6},{t2:.6},{t3:.6},{:.6},{:.6},{f:.6},{g:.6},{:.6},{:.6},{viable}",
        hop_by_hop(p1).map_err(e)?,
        t1 / 2.0,
        t1 / t3 - 1.0,
        t1 / t2 - 1.0,
    ))
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let started = Instant::now();
    let mut points: Vec<(f64, f64)> = a.p.iter().map(|&p| (p, p)).collect();
    if let Some(r) = &a.range {
        points.extend(parse_range(r)?.into_iter().map(|p| (p, p)));
    }
    for &p1 in &a.p1 {
        for &p2 in &a.p2 {
            points.push((p1, p2));
        }
    }
    if points.is_empty() {
        return Err(usage("give --p, --range or --p1/--p2"));
    }
    for (p1, p2) in &points {
        check_p(*p1)?;
        check_p(*p2)?;
    }
    let rows = points
        .iter()
        .map(|&(p1, p2)| analyze_row(p1, p2))
        .collect::<Result<Vec<_>>>()?;
    println!("{ANALYZE_HEADER}");
    for r in &rows {
        println!("{r}");
    }
    let mut m = RunManifest::new("analyze");
    let grid: Vec<String> = points.iter().map(|(a, b)| format!("{a}/{b}")).collect();
    m.set("points", grid.join(" "));
    finish_csv(m, started, a.out.as_deref(), "analyze.csv", ANALYZE_HEADER, &rows, false)
}

fn finish_csv(
    mut m: RunManifest,
    started: Instant,
    out: Option<&Path>,
    default_name: &str,
    header: &str,
    rows: &[String],
    append: bool,
) -> Result<()> {
    let Some(path) = output_path(out, default_name) else {
        return Ok(());
    };
    m.outputs.push(path.clone());
    m.duration = started.elapsed();
    let r = if append {
        append_csv(&path, &m, header, rows)
    } else {
        write_csv(&path, &m, header, rows)
    };
    r.map_err(|e| runtime(format!("writing {}: {e}", path.display())))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn load_file_atom(path: &Path) -> Result<AtomSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
    load_pattern(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// One atom per requested probability; a single atom when none is given.
fn build_atoms(a: &SimulateArgs) -> Result<Vec<(Option<f64>, AtomSpec)>> {
    let explicit = [a.p1, a.p2, a.p3, a.p4, a.p5];
    let any_explicit = explicit.iter().any(Option::is_some);
    let ps: Vec<Option<f64>> = if a.p.is_empty() { vec![None] } else { a.p.iter().copied().map(Some).collect() };
    let file = match &a.atom {
        AtomArg::File(path) => Some(load_file_atom(path)?),
        _ => None,
    };
    let mut out = Vec::new();
    for p in ps {
        let atom = match &a.atom {
            AtomArg::Cross => {
                let mut lsp = [p; 5];
                for (slot, e) in lsp.iter_mut().zip(explicit) {
                    if e.is_some() {
                        *slot = e;
                    }
                }
                let Some(lsp) = lsp.iter().copied().collect::<Option<Vec<f64>>>() else {
                    return Err(usage("cross atom needs --p or all of --p1..--p5"));
                };
                builtin_cross_atom(CrossLsp::from_array([lsp[0], lsp[1], lsp[2], lsp[3], lsp[4]])).map_err(usage)?
            }
            AtomArg::Star => {
                if any_explicit {
                    return Err(usage("--p1..--p5 only apply to the cross atom"));
                }
                builtin_star_atom(p.ok_or_else(|| usage("star atom needs --p"))?).map_err(usage)?
            }
            AtomArg::File(_) => {
                if any_explicit {
                    return Err(usage("--p1..--p5 only apply to the cross atom"));
                }
                let atom = file.clone().expect("loaded above");
                match p {
                    Some(p) => atom.with_uniform_lsp(p).map_err(usage)?,
                    None => atom,
                }
            }
        };
        out.push((p, atom));
    }
    Ok(out)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let mode = if a.realistic { AckMode::Realistic } else { AckMode::Idealized };
    let coupling = if a.coupled { Coupling::Coupled } else { Coupling::NonCoupled };
    let cfgs: Vec<SimConfig> = build_atoms(&a)?
        .into_iter()
        .map(|(_, atom)| SimConfig {
            mode,
            coupling,
            tracking: a.tracking.into(),
            w: a.w,
            n: a.n,
            k: a.k,
            d: a.d,
            seed: a.seed,
            rounds: a.rounds,
            warmup: a.warmup,
            ..SimConfig::new(atom)
        })
        .collect();
    for c in &cfgs {
        c.validate().map_err(usage)?;
    }
    let stats = run_many(&cfgs)
        .into_iter()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(runtime)?;

    let rows: Vec<String> = cfgs.iter().zip(&stats).map(|(c, s)| s.csv_row(c)).collect();
    println!("{}", SimStats::CSV_HEADER);
    for r in &rows {
        println!("{r}");
    }
    for (c, s) in cfgs.iter().zip(&stats) {
        eprintln!(
            "{} {} {} tracking={} W={} N={}: {:.4} +- {:.4} p/r ({:.4} p/t)",
            c.atom.name, c.mode, c.coupling, c.tracking, c.w, c.n, s.throughput_per_round, s.ci95, s.throughput_per_slot
        );
    }

    let mut m = RunManifest::new("simulate");
    m.seed = Some(a.seed);
    let ps: Vec<String> = a.p.iter().map(f64::to_string).collect();
    m.set("atom", &a.atom)
        .set("p", ps.join(" "))
        .set("mode", mode)
        .set("coupling", coupling)
        .set("tracking", Tracking::from(a.tracking))
        .set("w", a.w)
        .set("n", a.n)
        .set("k", a.k)
        .set("d", a.d)
        .set("rounds", a.rounds)
        .set("warmup", a.warmup);
    for (i, v) in [a.p1, a.p2, a.p3, a.p4, a.p5].iter().enumerate() {
        if let Some(v) = v {
            m.set(&format!("p{}", i + 1), v);
        }
    }
    finish_csv(m, started, a.out.as_deref(), "simulate.csv", SimStats::CSV_HEADER, &rows, true)
}

fn table(a: TableArgs) -> Result<()> {
    let started = Instant::now();
    if !tables::supported(a.id) {
        return Err(usage(format!("no table {}; supported: 1, 2, 3, 4, 6, 7, 8, 9, 10", a.id)));
    }
    let opts = tables::TableOptions {
        rounds: a.rounds,
        warmup: a.warmup,
        seed: a.seed,
        k: a.k,
        d: a.d,
    };
    // Probe one configuration so bad scale flags are a usage error.
    SimConfig {
        rounds: a.rounds,
        warmup: a.warmup,
        k: a.k,
        d: a.d,
        ..SimConfig::new(builtin_cross_atom(CrossLsp::homogeneous(0.9, 0.9)).map_err(usage)?)
    }
    .validate()
    .map_err(usage)?;
    let report = tables::build(a.id, opts)
        .map_err(runtime)?
        .ok_or_else(|| usage(format!("no table {}", a.id)))?;
    print!("{}", report.render());

    let mut m = RunManifest::new(&format!("table {}", a.id));
    m.seed = Some(a.seed);
    m.set("rounds", a.rounds).set("warmup", a.warmup).set("k", a.k).set("d", a.d);
    let rows = report.csv_rows();
    let name = format!("table{}.csv", a.id);
    finish_csv(m, started, a.out.as_deref(), &name, tables::CSV_HEADER, &rows, false)
}

const SWEEP_HEADER: &str = "w,n,throughput,ci95,wasteful_fraction,e1_at_p1,e1_at_floor,chosen";

fn cmd_optimize(a: OptimizeArgs) -> Result<()> {
    let started = Instant::now();
    check_p(a.p_floor)?;
    let atom = match &a.atom {
        AtomArg::Cross => builtin_cross_atom(CrossLsp::homogeneous(a.p_floor, a.p_floor)).map_err(usage)?,
        AtomArg::Star => builtin_star_atom(a.p_floor).map_err(usage)?,
        AtomArg::File(path) => load_file_atom(path)?,
    };
    let budget = OverheadBudget::new(a.e0, a.e1, a.e1_header).map_err(usage)?;
    let opts = OptimizeOptions {
        budget,
        k: a.k,
        d: a.d,
        p_floor: a.p_floor,
        step: a.step,
        refine_step: a.refine_step,
        rounds: a.rounds,
        warmup: a.warmup,
        seed: a.seed,
        tracking: a.tracking.into(),
        n_override: a.n,
    };
    let r = optimize(&atom, &opts).map_err(|e| match e {
        OptimizeError::BadBudget { .. } | OptimizeError::ZeroStep => usage(e),
        OptimizeError::Sim(ref s) if matches!(s, SimError::WarmupTooLong { .. } | SimError::BadBatches { .. }) => {
            usage(e)
        }
        _ => runtime(e),
    })?;

    let e1_floor = overhead_e1(r.w, r.n, a.k, a.d, a.p_floor);
    println!("atom: {}", atom.name);
    println!("chosen: W={} N={} (W_max={})", r.w, r.n, r.w_max);
    println!(
        "throughput at p={}: {:.4} +- {:.4} p/r, benchmark {:.4}, degradation {:.2}%",
        a.p_floor,
        r.throughput,
        r.ci95,
        r.benchmark,
        r.degradation * 100.0
    );
    println!(
        "budget: e0={:.2}% = e1 {:.2}% (header {:.2}%, bitmap {:.2}%) + e2 {:.2}%",
        budget.e0 * 100.0,
        budget.e1 * 100.0,
        budget.e1_header * 100.0,
        budget.e1_bitmap() * 100.0,
        budget.e2() * 100.0
    );
    println!(
        "chosen point: e1 {:.2}% at p=1, {:.2}% at p={}; remaining loss {:.2}%",
        r.e1_at_p1 * 100.0,
        e1_floor * 100.0,
        a.p_floor,
        (r.degradation - e1_floor) * 100.0
    );

    let rows: Vec<String> = r
        .sweep
        .iter()
        .map(|p| {
            format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                p.w,
                r.n,
                p.throughput,
                p.ci95,
                p.wasteful_fraction,
                overhead_e1(p.w, r.n, a.k, a.d, 1.0),
                overhead_e1(p.w, r.n, a.k, a.d, a.p_floor),
                u8::from(p.w == r.w)
            )
        })
        .collect();
    let mut m = RunManifest::new("optimize");
    m.seed = Some(a.seed);
    m.set("atom", &a.atom)
        .set("p_floor", a.p_floor)
        .set("e0", a.e0)
        .set("e1", a.e1)
        .set("e1_header", a.e1_header)
        .set("k", a.k)
        .set("d", a.d)
        .set("n", r.n)
        .set("step", a.step)
        .set("refine_step", a.refine_step)
        .set("tracking", Tracking::from(a.tracking))
        .set("rounds", a.rounds)
        .set("warmup", a.warmup)
        .set("chosen", format!("W={} N={}", r.w, r.n));
    finish_csv(m, started, a.out.as_deref(), "optimize.csv", SWEEP_HEADER, &rows, false)
}
