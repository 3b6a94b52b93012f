//! Experiment runner: generate instances, run one-round schemes over trial
//! batches, sweep message sizes, and drive the set-family lab.  Every
//! subcommand is a pure function of its flags — seeds are always explicit and
//! outputs are CSV (or the generators' text formats), so identical
//! invocations produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sketchlab::hard::{
    sample_block, sample_block_bar, sample_conn, BlockInstance, BlockScale, ConnInstance,
    HardError,
};
use sketchlab::hashing::derive_seed;
use sketchlab::lab::{
    battery, closed_form_holds, conditional_error, estimate_singleton_prob, lemma33_survey,
    message_classes, run_process_with, verify_trace, write_trace, ErrorMode, LabError,
    ProcessContext, SetCollection,
};
use sketchlab::sim::{
    families, run_one_round, sweep_sizes, AgmScheme, Graph, Scheme, SimError,
    DEFAULT_MESSAGE_CAP_BITS,
};
use sketchlab::ur::{sample_urdec, urdec_params, OneWayProtocol, UrError, UrdecParams};

#[derive(Parser)]
#[command(
    name = "sketchlab",
    version,
    about = "Graph sketches, one-round connectivity schemes, and hard instances"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an instance (graph or set puzzle) plus a metadata sidecar
    Gen(GenArgs),
    /// Run a scheme over seeded trials and emit one CSV row per trial
    Run(RunArgs),
    /// Mean message size over a doubling ladder of graph sizes
    Sweep(SweepArgs),
    /// Set-family laboratory
    #[command(subcommand)]
    Lab(LabCmd),
}

// ---------------------------------------------------------------------------
// errors and exit codes: 2 = bad config/input, 3 = a cap was exceeded

enum AppError {
    Config(String),
    Cap(String),
}

impl AppError {
    fn exit(&self) -> ExitCode {
        match self {
            AppError::Config(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            AppError::Cap(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(3)
            }
        }
    }
}

impl From<SimError> for AppError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::MessageCap { .. } => AppError::Cap(e.to_string()),
            other => AppError::Config(other.to_string()),
        }
    }
}

impl From<HardError> for AppError {
    fn from(e: HardError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<UrError> for AppError {
    fn from(e: UrError) -> Self {
        AppError::Config(e.to_string())
    }
}

impl From<LabError> for AppError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::EnumerationCap { .. } | LabError::InfeasibleExact { .. } => {
                AppError::Cap(e.to_string())
            }
            other => AppError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Config(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Gen(args) => cmd_gen(args),
        Cmd::Run(args) => cmd_run(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Lab(cmd) => match cmd {
            LabCmd::ProcessA(args) => cmd_lab_process_a(args),
            LabCmd::Lemma33(args) => cmd_lab_lemma33(args),
            LabCmd::Lemma34(args) => cmd_lab_lemma34(args),
            LabCmd::Conderr(args) => cmd_lab_conderr(args),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.exit(),
    }
}

// ---------------------------------------------------------------------------
// shared flag parsing

/// Accepts "2^-162", "1/64" or a plain float.
fn parse_delta(s: &str) -> Result<f64, AppError> {
    let bad = || AppError::Config(format!("cannot parse delta {s:?}"));
    if let Some(exp) = s.strip_prefix("2^") {
        let e: i32 = exp.parse().map_err(|_| bad())?;
        return Ok(2f64.powi(e));
    }
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num.parse().map_err(|_| bad())?;
        let d: f64 = den.parse().map_err(|_| bad())?;
        if d == 0.0 {
            return Err(bad());
        }
        return Ok(n / d);
    }
    s.parse().map_err(|_| bad())
}

fn parse_u64_list(s: &str) -> Result<Vec<u64>, AppError> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| AppError::Config(format!("cannot parse list entry {p:?}")))
        })
        .collect()
}

fn parse_u32_list(s: &str) -> Result<Vec<u32>, AppError> {
    parse_u64_list(s).map(|v| v.into_iter().map(|x| x as u32).collect())
}

fn schedule_params(universe: u64, delta: f64) -> Result<(UrdecParams, f64), AppError> {
    // The reveal schedule needs a deep delta; when the requested protocol
    // delta is too large to carry any rounds, sample the instance shape at
    // 2^-256 and keep the requested delta as the error budget on record.
    match urdec_params(universe, delta) {
        Ok(p) => Ok((p, delta)),
        Err(UrError::DegenerateR(_)) => {
            let p = urdec_params(universe, 2f64.powi(-256))?;
            Ok((p, delta))
        }
        Err(e) => Err(e.into()),
    }
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), AppError> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn pick_protocol(
    params: &UrdecParams,
    seed: u64,
    name: &str,
) -> Result<Box<dyn OneWayProtocol>, AppError> {
    let mut all = battery(params, seed);
    let names: Vec<String> = all.iter().map(|p| p.name()).collect();
    match all.iter().position(|p| p.name().starts_with(name)) {
        Some(i) => Ok(all.swap_remove(i)),
        None => Err(AppError::Config(format!(
            "unknown protocol {name:?}; the battery has {}",
            names.join(", ")
        ))),
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeKind {
    /// XOR level sketches with a fixed 32-bit fingerprint
    Agm,
    /// Same sketches with a log-scaled fingerprint
    AgmLog,
}

impl SchemeKind {
    fn build(self) -> AgmScheme {
        match self {
            SchemeKind::Agm => AgmScheme::default(),
            SchemeKind::AgmLog => AgmScheme::log_fp(),
        }
    }

    fn label(self) -> &'static str {
        match self {
            SchemeKind::Agm => "agm",
            SchemeKind::AgmLog => "agm-log",
        }
    }
}

// ---------------------------------------------------------------------------
// gen

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    /// Chain of gadget blocks; connectivity is the XOR of the block bits
    Conn,
    /// One gadget block
    Block,
    /// One block from the mimicking mixture
    BlockBar,
    /// A set-membership puzzle instance
    Urdec,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    /// Vertices (conn: must be a perfect square)
    #[arg(long, default_value_t = 1024)]
    n: u32,
    #[arg(long)]
    seed: u64,
    /// Universe size for urdec instances
    #[arg(long, default_value_t = 4096)]
    universe: u64,
    /// Error budget, e.g. "2^-64" or "1/64"
    #[arg(long, default_value = "2^-64")]
    delta: String,
    /// Vertices per block for block/block-bar (desk tiers)
    #[arg(long = "scale-block-n", default_value_t = 32)]
    scale_block_n: u32,
    /// Output base path; writes <out>.graph/.meta or <out>.urdec/.meta
    #[arg(long)]
    out: PathBuf,
}

fn block_sidecar(blk: &BlockInstance) -> String {
    let s = blk.scale;
    let jstar = blk.jstar.map_or("-".to_string(), |j| j.to_string());
    let roles: Vec<String> = (1..=blk.n).map(|v| blk.roles[v as usize].token()).collect();
    let mut out = format!(
        "block n {} proc {} b {} jstar {jstar} scale {}/{}/{}/{}\n",
        blk.n,
        blk.procedure.token(),
        blk.b,
        s.block_n,
        s.m_count,
        s.r_size,
        s.u
    );
    let _ = writeln!(out, "roles {}", roles.join(" "));
    for (j, inst) in blk.embedded.iter().enumerate() {
        let _ = writeln!(out, "set {j} side {:?}", inst.side);
        out.push_str(&inst.write());
    }
    out
}

fn cmd_gen(args: GenArgs) -> Result<(), AppError> {
    let with_ext = |ext: &str| {
        let mut p = args.out.clone().into_os_string();
        p.push(".");
        p.push(ext);
        PathBuf::from(p)
    };
    match args.kind {
        GenKind::Conn => {
            let inst = sample_conn(args.n, args.seed)?;
            fs::write(with_ext("graph"), inst.to_graph().write())?;
            fs::write(with_ext("meta"), conn_meta(&inst, args.seed))?;
        }
        GenKind::Block | GenKind::BlockBar => {
            let scale = BlockScale::desk(args.scale_block_n)?;
            let blk = match args.kind {
                GenKind::Block => sample_block(scale, args.seed)?,
                _ => sample_block_bar(scale, args.seed)?,
            };
            let g = Graph::from_edges(blk.n, &blk.edges)
                .map_err(|e| AppError::Config(e.to_string()))?;
            fs::write(with_ext("graph"), g.write())?;
            fs::write(with_ext("meta"), block_sidecar(&blk))?;
        }
        GenKind::Urdec => {
            let delta = parse_delta(&args.delta)?;
            let (params, requested) = schedule_params(args.universe, delta)?;
            let mut inst = sample_urdec(&params, args.seed);
            inst.delta = requested;
            inst.validate()?;
            fs::write(with_ext("urdec"), inst.write())?;
            let t_list: Vec<String> = params.t.iter().map(|t| t.to_string()).collect();
            fs::write(
                with_ext("meta"),
                format!(
                    "urdec U {} m {} b {} delta {:e} schedule-delta {:e} rounds {} t {} seed {}\n",
                    params.u,
                    params.m,
                    params.b,
                    requested,
                    params.delta,
                    params.rounds,
                    t_list.join(" "),
                    args.seed
                ),
            )?;
        }
    }
    Ok(())
}

fn conn_meta(inst: &ConnInstance, seed: u64) -> String {
    format!("seed {seed}\n{}", inst.write_sidecar())
}

// ---------------------------------------------------------------------------
// run

#[derive(Clone, Copy, ValueEnum)]
enum FamilyKind {
    Er,
    Star,
    Path,
    TwoCliques,
    Conn,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = SchemeKind::Agm)]
    scheme: SchemeKind,
    /// Read the graph from a file (one graph, many seeds)
    #[arg(long, conflicts_with = "family")]
    graph: Option<PathBuf>,
    /// Generate a fresh graph per trial from a family
    #[arg(long, value_enum)]
    family: Option<FamilyKind>,
    #[arg(long, default_value_t = 1024)]
    n: u32,
    #[arg(long, default_value_t = 100)]
    trials: u32,
    #[arg(long)]
    seed: u64,
    /// Per-player message cap in bits
    #[arg(long, default_value_t = DEFAULT_MESSAGE_CAP_BITS)]
    cap_bits: u64,
    /// Record wall-clock millis per trial (off by default so output bytes
    /// are reproducible)
    #[arg(long)]
    timing: bool,
    /// Worker threads for the trial loop
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

struct TrialRow {
    trial: u32,
    verdict: bool,
    truth: bool,
    avg_bits: f64,
    max_bits: u64,
    millis: u64,
}

fn one_trial(
    args: &RunArgs,
    scheme: &dyn Scheme,
    fixed: Option<&Graph>,
    trial: u32,
) -> Result<TrialRow, AppError> {
    let seed = derive_seed(args.seed, "trial", &[trial as u64]);
    let started = Instant::now();
    let (graph, truth_override) = match (&fixed, args.family) {
        (Some(g), _) => ((*g).clone(), None),
        (None, Some(FamilyKind::Er)) => (families::er_above_threshold(args.n, seed), None),
        (None, Some(FamilyKind::Star)) => (families::star(args.n), None),
        (None, Some(FamilyKind::Path)) => (families::path(args.n), None),
        (None, Some(FamilyKind::TwoCliques)) => {
            (families::two_cliques(args.n / 2, args.n - args.n / 2), None)
        }
        (None, Some(FamilyKind::Conn)) => {
            let inst = sample_conn(args.n, seed)?;
            let truth = inst.connected;
            (inst.to_graph(), Some(truth))
        }
        (None, None) => {
            return Err(AppError::Config("need either --graph or --family".into()));
        }
    };
    let report = run_one_round(&graph, scheme, seed, args.cap_bits)?;
    let millis = if args.timing { started.elapsed().as_millis() as u64 } else { 0 };
    Ok(TrialRow {
        trial,
        verdict: report.verdict,
        truth: truth_override.unwrap_or(report.truth),
        avg_bits: report.stats.avg_bits(),
        max_bits: report.stats.max_bits,
        millis,
    })
}

fn cmd_run(args: RunArgs) -> Result<(), AppError> {
    let scheme = args.scheme.build();
    let fixed: Option<Graph> = match &args.graph {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            Some(Graph::parse(&text)?)
        }
        None => None,
    };
    let trial_ids: Vec<u32> = (0..args.trials).collect();
    let work = |ids: &[u32]| -> Result<Vec<TrialRow>, AppError> {
        use rayon::prelude::*;
        ids.par_iter().map(|&t| one_trial(&args, &scheme, fixed.as_ref(), t)).collect()
    };
    let rows = match args.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| AppError::Config(e.to_string()))?
            .install(|| work(&trial_ids)),
        None => work(&trial_ids),
    }?;

    let mut csv = String::from("trial,verdict,truth,correct,avg_bits,max_bits,millis\n");
    let mut correct = 0u32;
    for r in &rows {
        let ok = r.verdict == r.truth;
        correct += ok as u32;
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.3},{},{}",
            r.trial,
            u8::from(r.verdict),
            u8::from(r.truth),
            u8::from(ok),
            r.avg_bits,
            r.max_bits,
            r.millis
        );
    }
    emit(&args.out, &csv)?;
    eprintln!(
        "# scheme {} trials {} success {}/{} = {:.6}",
        args.scheme.label(),
        args.trials,
        correct,
        args.trials,
        correct as f64 / args.trials.max(1) as f64
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum, default_value_t = SchemeKind::Agm)]
    scheme: SchemeKind,
    /// Smallest n of the doubling ladder
    #[arg(long, default_value_t = 64)]
    n_min: u32,
    /// Largest n (inclusive)
    #[arg(long = "n", default_value_t = 4096)]
    n_max: u32,
    #[arg(long, default_value_t = 5)]
    trials: u32,
    #[arg(long)]
    seed: u64,
    /// Record wall-clock millis per row
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_sweep(args: SweepArgs) -> Result<(), AppError> {
    if args.n_min < 2 || args.n_min > args.n_max {
        return Err(AppError::Config(format!(
            "bad ladder {}..{}",
            args.n_min, args.n_max
        )));
    }
    let mut ns = Vec::new();
    let mut n = args.n_min;
    while n <= args.n_max {
        ns.push(n);
        match n.checked_mul(2) {
            Some(next) => n = next,
            None => break,
        }
    }
    let scheme = args.scheme.build();
    let rows = sweep_sizes(&ns, args.trials, &scheme, args.seed)?;
    let mut csv = String::from("n,trials,mean_avg_bits,success_rate,wall_ms\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{:.3},{:.6},{}",
            r.n,
            r.trials,
            r.mean_avg_bits,
            r.success_rate,
            if args.timing { r.wall_ms } else { 0 }
        );
    }
    emit(&args.out, &csv)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// lab

#[derive(Subcommand)]
enum LabCmd {
    /// Run the class-shrinking process over seeds, one CSV row per seed
    ProcessA(ProcessAArgs),
    /// Exact conditional error vs. the intersection inequality, all classes
    Lemma33(Lemma33Args),
    /// Estimate the probability of one anchor outcome under conditioning
    Lemma34(Lemma34Args),
    /// Conditional error of one message class
    Conderr(ConderrArgs),
}

#[derive(Args)]
struct ProcessAArgs {
    #[arg(long, default_value_t = 27)]
    universe: u64,
    #[arg(long, default_value = "2^-162")]
    delta: String,
    #[arg(long, default_value = "constant")]
    protocol: String,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    #[arg(long)]
    seed: u64,
    /// Also dump each trace (to stderr)
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_lab_process_a(args: ProcessAArgs) -> Result<(), AppError> {
    let params = urdec_params(args.universe, parse_delta(&args.delta)?)?;
    let protocol = pick_protocol(&params, args.seed, &args.protocol)?;
    let ctx = ProcessContext::new(protocol.as_ref(), &params, None)?;
    let mut csv =
        String::from("seed,status,rounds,ks,final_members,final_t,thresholds,closed_form\n");
    for s in 0..args.trials {
        let trace = run_process_with(&ctx, derive_seed(args.seed, "process-trial", &[s]));
        if args.trace {
            eprintln!("# seed {s}\n{}", write_trace(&trace).trim_end());
        }
        let ks: Vec<String> = trace.rounds.iter().map(|r| r.k.to_string()).collect();
        let last = trace.final_collection();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            s,
            if trace.failed { "failed" } else { "done" },
            trace.rounds.len(),
            ks.join("+"),
            last.len(),
            last.anchor.len(),
            if verify_trace(&trace).is_ok() { "ok" } else { "violated" },
            match closed_form_holds(&trace) {
                Some(true) => "yes",
                Some(false) => "no",
                None => "-",
            }
        );
    }
    emit(&args.out, &csv)?;
    Ok(())
}

#[derive(Args)]
struct Lemma33Args {
    #[arg(long, default_value_t = 27)]
    universe: u64,
    #[arg(long, default_value = "2^-162")]
    delta: String,
    /// Seeded process runs per protocol feeding extra (S_i, T_i) rows
    #[arg(long, default_value_t = 3)]
    process_seeds: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_lab_lemma33(args: Lemma33Args) -> Result<(), AppError> {
    let params = urdec_params(args.universe, parse_delta(&args.delta)?)?;
    let rows = lemma33_survey(&params, args.seed, args.process_seeds)?;
    let mut csv = String::from(
        "protocol,source,members,t_size,error,lhs,holds,low_error,consistent\n",
    );
    let mut violations = 0u64;
    for r in &rows {
        violations += u64::from(!r.consistent);
        let _ = writeln!(
            csv,
            "{},{},{},{},{:.6},{},{},{},{}",
            r.protocol,
            r.source,
            r.members,
            r.t_size,
            r.error_num as f64 / r.error_den as f64,
            r.lhs,
            u8::from(r.holds),
            u8::from(r.low_error),
            u8::from(r.consistent)
        );
    }
    emit(&args.out, &csv)?;
    eprintln!("# violations {}/{}", violations, rows.len());
    Ok(())
}

#[derive(Args)]
struct Lemma34Args {
    #[arg(long, default_value_t = 64)]
    universe: u64,
    #[arg(long, default_value = "2^-256")]
    delta: String,
    #[arg(long, default_value = "constant")]
    protocol: String,
    /// Conditioned k sequence, comma separated; default: taken from a pilot
    /// run together with --set and --anchor
    #[arg(long)]
    prefix: Option<String>,
    /// Conditioned set index
    #[arg(long)]
    set: Option<u32>,
    /// Target anchor elements, comma separated
    #[arg(long)]
    anchor: Option<String>,
    #[arg(long, default_value_t = 200)]
    runs: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_lab_lemma34(args: Lemma34Args) -> Result<(), AppError> {
    let params = urdec_params(args.universe, parse_delta(&args.delta)?)?;
    let protocol = pick_protocol(&params, args.seed, &args.protocol)?;
    let (prefix, set, anchor) = match (&args.prefix, args.set, &args.anchor) {
        (Some(p), Some(s), Some(a)) => (parse_u32_list(p)?, s, parse_u64_list(a)?),
        (None, None, None) => {
            // pilot = run 0 of the estimate, so the conditioning event is
            // guaranteed to be seen at least once
            let ctx = ProcessContext::new(protocol.as_ref(), &params, None)?;
            let pilot = run_process_with(&ctx, derive_seed(args.seed, "singleton-run", &[0]));
            let i = pilot.rounds.len().min(1);
            let prefix: Vec<u32> = pilot.rounds[..i].iter().map(|r| r.k).collect();
            let snap = &pilot.snapshots[i];
            (prefix, snap.members[0], snap.anchor.clone())
        }
        _ => {
            return Err(AppError::Config(
                "give all of --prefix/--set/--anchor or none".into(),
            ))
        }
    };
    let est = estimate_singleton_prob(
        protocol.as_ref(),
        &params,
        &prefix,
        set,
        &anchor,
        args.runs,
        args.seed,
    )?;
    let join = |xs: &[String]| if xs.is_empty() { "-".to_string() } else { xs.join("+") };
    let prefix_s: Vec<String> = prefix.iter().map(|k| k.to_string()).collect();
    let anchor_s: Vec<String> = anchor.iter().map(|e| e.to_string()).collect();
    let mut csv = String::from(
        "protocol,prefix,set,anchor,runs,included,hits,estimate,std_err,bound\n",
    );
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{},{},{:.6},{:.6},{:.6e}",
        protocol.name(),
        join(&prefix_s),
        set,
        join(&anchor_s),
        est.runs,
        est.included,
        est.hits,
        est.estimate,
        est.std_err,
        est.bound
    );
    emit(&args.out, &csv)?;
    Ok(())
}

#[derive(Args)]
struct ConderrArgs {
    #[arg(long, default_value_t = 27)]
    universe: u64,
    #[arg(long, default_value = "2^-162")]
    delta: String,
    #[arg(long, default_value = "constant")]
    protocol: String,
    /// Which message class, largest first
    #[arg(long, default_value_t = 0)]
    class_rank: usize,
    /// Anchor elements (comma separated); members not containing them drop
    #[arg(long)]
    anchor: Option<String>,
    /// "exact" or "mc"
    #[arg(long, default_value = "exact")]
    mode: String,
    #[arg(long, default_value_t = 10_000)]
    samples: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_lab_conderr(args: ConderrArgs) -> Result<(), AppError> {
    let params = urdec_params(args.universe, parse_delta(&args.delta)?)?;
    let protocol = pick_protocol(&params, args.seed, &args.protocol)?;
    let classes = message_classes(protocol.as_ref(), &params, None)?;
    let Some((_, base)) = classes.into_iter().nth(args.class_rank) else {
        return Err(AppError::Config(format!("no class at rank {}", args.class_rank)));
    };
    let coll = match &args.anchor {
        None => base,
        Some(a) => {
            let anchor = parse_u64_list(a)?;
            let members: Vec<u32> = base
                .members
                .iter()
                .copied()
                .filter(|&s| {
                    anchor.iter().all(|&e| sketchlab::lab::set_contains(s, base.b, e))
                })
                .collect();
            SetCollection::new(base.m, base.b, members, anchor)?
        }
    };
    let mode = match args.mode.as_str() {
        "exact" => ErrorMode::Exact,
        "mc" => ErrorMode::MonteCarlo { samples: args.samples, seed: args.seed },
        other => return Err(AppError::Config(format!("mode {other:?} is not exact|mc"))),
    };
    let err = conditional_error(protocol.as_ref(), &coll, mode)?;
    let mut csv = String::from(
        "protocol,class,members,t_size,mode,samples,error,std_err,error_num,error_den\n",
    );
    let (num, den) = err.fraction.map_or((String::new(), String::new()), |(n, d)| {
        (n.to_string(), d.to_string())
    });
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{},{:.6},{},{},{}",
        protocol.name(),
        args.class_rank,
        coll.len(),
        coll.anchor.len(),
        args.mode,
        err.samples,
        err.value,
        err.std_err.map_or(String::new(), |s| format!("{s:.6}")),
        num,
        den
    );
    emit(&args.out, &csv)?;
    Ok(())
}
