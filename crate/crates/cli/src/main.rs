//! `permcode`: build, check and exercise permutation code sets.
//!
//! Exit status: 0 on success, 2 on invalid input or parameters, 3 when a
//! check (verification or reproduction target) fails.

mod files;
mod reproduce;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use permcode::backend::{engine_metrics, identify_trace, BackendConfig, Decision, MetricsReport, Outcome};
use permcode::construction::{construct, plan_parameters};
use permcode::proper::{
    classify, exhaustive_max_search, upper_bound, Members, ProperSet, SearchOptions, MAX_LISTED,
};
use permcode::scenarios::bundled;
use permcode::sim::{read_jsonl, run_scenario, write_jsonl, Network, PacketEvent, ScenarioConfig, TruthRecord};

const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(name = "permcode", version, about = "Permutation code sets for identifier-free packet numbering")]
struct Cli {
    /// Seed for every random choice; overrides the seed in scenario files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the arithmetic-progression set for prime `p` and gap `l`.
    Construct {
        #[arg(long)]
        p: u64,
        #[arg(long)]
        l: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a set file for properness and report a witness if it fails.
    Verify {
        set: PathBuf,
        /// Check against this gap instead of the one in the file.
        #[arg(long)]
        l: Option<u64>,
    },
    /// Exhaustively search for the largest proper set (small q only).
    Search {
        #[arg(long)]
        q: u64,
        #[arg(long)]
        l: u64,
        #[arg(long)]
        allow_large: bool,
        #[arg(long)]
        size_limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Upper bound on the size of a proper set.
    Bound {
        #[arg(long)]
        q: u64,
        #[arg(long)]
        l: u64,
    },
    /// Size a code number field against an identifier plus counter baseline.
    Plan {
        #[arg(long)]
        cn_bits: u32,
        #[arg(long)]
        l: u64,
        #[arg(long, default_value_t = 12)]
        sn_bits: u32,
        #[arg(long, default_value_t = 32)]
        id_bits: u32,
        #[arg(long)]
        json: bool,
    },
    /// Run a network scenario and write the received trace and ground truth.
    Simulate {
        #[command(flatten)]
        source: ScenarioSource,
        #[arg(long, default_value = "trace.jsonl")]
        trace: PathBuf,
        #[arg(long, default_value = "truth.jsonl")]
        truth: PathBuf,
        #[arg(long, default_value = "network.json")]
        network: PathBuf,
    },
    /// Attribute packets of a trace to devices.
    Identify(Box<IdentifyArgs>),
    /// Re-run one named reference check.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(reproduce::TARGETS))]
        target: String,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ScenarioSource {
    /// Scenario document (JSON or TOML).
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// One of the bundled scenarios.
    #[arg(long)]
    bundled: Option<String>,
}

#[derive(Args)]
struct IdentifyArgs {
    /// Trace to identify (`-` for standard input).
    #[arg(long, requires = "network", conflicts_with_all = ["scenario", "bundled"])]
    trace: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    /// Ground truth; enables metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Simulate this scenario and score it instead of reading a trace.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, conflicts_with = "scenario")]
    bundled: Option<String>,
    /// With a scenario: number of consecutive seeds to run.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Backend settings (JSON or TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Attribution lines; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics as JSON.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Per-seed metrics as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    horizon: Option<u64>,
    #[arg(long)]
    beam_ratio: Option<f64>,
    #[arg(long)]
    max_paths: Option<usize>,
    #[arg(long)]
    dominance_ratio: Option<f64>,
    #[arg(long)]
    delivery_ratio: Option<f64>,
    #[arg(long)]
    t_bits: Option<u32>,
    /// Do not let MAC validity gate decoder transitions.
    #[arg(long)]
    no_hmm_mac: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `Ok(false)` means a check ran and failed.
fn run(cli: Cli) -> Result<bool> {
    let seed = cli.seed;
    match cli.command {
        Command::Construct { p, l, out } => {
            let mut set = construct(p, l)?;
            if set.len() <= MAX_LISTED {
                set.members = Members::Listed(set.members.to_vec()?);
            }
            files::write_json(out.as_deref(), &set)?;
            Ok(true)
        }
        Command::Verify { set, l } => verify(&set, l),
        Command::Search { q, l, allow_large, size_limit, out } => {
            let opts = SearchOptions { allow_large, size_limit, ..SearchOptions::default() };
            let r = exhaustive_max_search(q, l, opts)?;
            let doc = json!({
                "q": q,
                "l": l,
                "max_m": r.max_m,
                "upper_bound": upper_bound(q, l)?,
                "nodes": r.nodes,
                "set": r.set,
                "certificate": r.certificate,
            });
            files::write_json(out.as_deref(), &doc)?;
            Ok(true)
        }
        Command::Bound { q, l } => {
            let bound = upper_bound(q, l)?;
            files::write_json(None, &json!({ "q": q, "l": l, "upper_bound": bound, "perfect_possible": (q - 1) % l == 0 }))?;
            Ok(true)
        }
        Command::Plan { cn_bits, l, sn_bits, id_bits, json } => {
            let r = plan_parameters(cn_bits, l, sn_bits, id_bits)?;
            if json {
                files::write_json(None, &r)?;
            } else {
                println!("{r}");
            }
            Ok(true)
        }
        Command::Simulate { source, trace, truth, network } => {
            let cfg = scenario_config(source.scenario.as_deref(), source.bundled.as_deref(), seed)?;
            let out = run_scenario(&cfg)?;
            write_jsonl(files::writer(Some(&trace))?, &out.trace)?;
            write_jsonl(files::writer(Some(&truth))?, &out.truth)?;
            files::write_json(Some(&network), &out.network)?;
            eprintln!(
                "{} transmissions, {} received, {} devices",
                out.truth.len(),
                out.trace.len(),
                out.network.devices.len()
            );
            Ok(true)
        }
        Command::Identify(args) => identify(*args, seed),
        Command::Reproduce { target } => reproduce::run(&target, seed.unwrap_or(DEFAULT_SEED)),
    }
}

fn verify(path: &Path, l: Option<u64>) -> Result<bool> {
    let mut set: ProperSet = files::load_document(path)?;
    if let Some(l) = l {
        set.l = l;
        if let Members::Progression(_) = set.members {
            set.members = Members::Listed(set.members.to_vec()?);
        }
    }
    let set = set.verified()?;
    let bound = upper_bound(set.q, set.l)?;
    let quality = classify(&set).ok();
    files::write_json(
        None,
        &json!({
            "q": set.q,
            "l": set.l,
            "m": set.len(),
            "upper_bound": bound,
            "classification": set.classification,
            "quality": quality,
        }),
    )?;
    Ok(set.is_proper())
}

fn scenario_config(path: Option<&Path>, name: Option<&str>, seed: Option<u64>) -> Result<ScenarioConfig> {
    let mut cfg = match (path, name) {
        (Some(p), _) => files::load_document(p)?,
        (None, Some(n)) => bundled(n)?.scenario,
        (None, None) => anyhow::bail!(permcode::Error::Validation("a scenario file or bundled name is required".into())),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn backend_config(args: &IdentifyArgs, base: BackendConfig) -> Result<BackendConfig> {
    let mut cfg = match &args.config {
        Some(p) => files::load_document(p)?,
        None => base,
    };
    if let Some(v) = args.epsilon {
        cfg.epsilon = v;
    }
    if let Some(v) = args.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = args.beam_ratio {
        cfg.beam_ratio = Some(v);
    }
    if let Some(v) = args.max_paths {
        cfg.max_paths = Some(v);
    }
    if let Some(v) = args.dominance_ratio {
        cfg.dominance_ratio = v;
    }
    if let Some(v) = args.delivery_ratio {
        cfg.delivery_ratio = v;
    }
    if let Some(v) = args.t_bits {
        cfg.t_bits = v;
    }
    if args.no_hmm_mac {
        cfg.hmm_uses_mac = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn attribution_line(d: &Decision) -> serde_json::Value {
    match d.outcome {
        Outcome::Delivered { device_id, delay } => {
            json!({ "ts": d.ts, "cn": d.cn, "device_id": device_id, "delay_packets": delay })
        }
        Outcome::Dropped(reason) => {
            json!({ "ts": d.ts, "cn": d.cn, "device_id": "dropped", "delay_packets": null, "reason": reason })
        }
    }
}

fn write_attribution(path: Option<&Path>, decisions: &[Decision]) -> Result<()> {
    let mut w = files::writer(path)?;
    for d in decisions {
        serde_json::to_writer(&mut w, &attribution_line(d))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

const CSV_HEADER: &str = "seed,packets,delivered,correct,wrong,dropped,accuracy,misidentification_rate,drop_rate,delay_mean,delay_p95,delay_max";

fn csv_row(seed: u64, r: &MetricsReport) -> String {
    format!(
        "{seed},{},{},{},{},{},{},{},{},{},{},{}",
        r.packets,
        r.delivered,
        r.correct,
        r.wrong,
        r.dropped,
        r.accuracy,
        r.misidentification_rate,
        r.drop_rate,
        r.delay.mean,
        r.delay.p95,
        r.delay.max
    )
}

fn identify(args: IdentifyArgs, seed: Option<u64>) -> Result<bool> {
    if let Some(trace_path) = &args.trace {
        let network: Network = files::load_document(args.network.as_deref().expect("clap enforces --network"))?;
        let trace: Vec<PacketEvent> = read_jsonl(files::reader(trace_path)?)?;
        let base = BackendConfig { t_bits: network.t_bits, ..BackendConfig::default() };
        let cfg = backend_config(&args, base)?;
        let decisions = identify_trace(&network, cfg, &trace)?;
        write_attribution(args.out.as_deref(), &decisions)?;
        if let Some(truth_path) = &args.truth {
            let truth: Vec<TruthRecord> = read_jsonl(files::reader(truth_path)?)?;
            let delivered: Vec<&TruthRecord> = truth.iter().filter(|t| !t.erased).collect();
            let report = engine_metrics(&delivered, &decisions, network.l)?;
            files::write_json(args.metrics.as_deref().or(Some(Path::new("-"))), &report)?;
        }
        return Ok(true);
    }

    let (mut scenario, base) = match (&args.scenario, &args.bundled) {
        (Some(p), _) => (files::load_document::<ScenarioConfig>(p)?, BackendConfig::default()),
        (None, Some(n)) => {
            let b = bundled(n)?;
            (b.scenario, b.backend)
        }
        (None, None) => anyhow::bail!(permcode::Error::Validation(
            "identify needs --trace with --network, or --scenario/--bundled".into()
        )),
    };
    if args.seeds == 0 {
        anyhow::bail!(permcode::Error::Parameter("--seeds must be positive".into()));
    }
    let first = seed.unwrap_or(scenario.seed);
    let base = BackendConfig { t_bits: scenario.t_bits, ..base };
    let cfg = backend_config(&args, base)?;
    let mut rows = vec![CSV_HEADER.to_string()];
    let mut reports = Vec::new();
    for s in first..first + args.seeds {
        scenario.seed = s;
        let out = run_scenario(&scenario)?;
        let decisions = identify_trace(&out.network, cfg.clone(), &out.trace)?;
        if args.seeds == 1 {
            write_attribution(args.out.as_deref(), &decisions)?;
        }
        let report = engine_metrics(&out.delivered_truth(), &decisions, out.network.l)?;
        rows.push(csv_row(s, &report));
        reports.push(json!({ "seed": s, "metrics": report }));
    }
    if let Some(path) = &args.csv {
        let mut w = files::writer(Some(path))?;
        for r in &rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
    }
    let metrics_target = args.metrics.as_deref().or(if args.seeds > 1 && args.csv.is_none() { Some(Path::new("-")) } else { None });
    if let Some(p) = metrics_target {
        files::write_json(Some(p), &reports)?;
    }
    Ok(true)
}
