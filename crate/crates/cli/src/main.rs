//! `nakasim` command-line runner.

mod grid;

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use nakasim::adversary::Strategy;
use nakasim::audit::{run_audits, scheduler_audits};
use nakasim::config::{OutputSection, ScenarioConfig};
use nakasim::experiments::{attack_frontier, GrowthSpec};
use nakasim::parallel::map_runs;
use nakasim::pivots::{analyze, AuditResult, PivotReport, TraceIndex, Verdict, CSV_HEADER};
use nakasim::security_calc::{bounded_delay_reference, region, RegionPoint};
use nakasim::sim::{run, RunConfig, RunResult};
use nakasim::trace::{read_jsonl, write_jsonl, TraceEvent};

#[derive(Parser)]
#[command(name = "nakasim", version, about = "Longest-chain consensus under bounded processing capacity")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario config for one or more seeds and write traces and metrics.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect pivots in a JSONL trace and run the trace audits.
    Analyze {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        nu: u64,
        #[arg(long = "c-tilde")]
        c_tilde: f64,
        /// CP recurrence window; 0 skips the recurrence statistics.
        #[arg(long)]
        kcp: usize,
        /// Output directory (defaults to the trace's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Maximum secure block rate over a grid of adversary fractions.
    Region {
        #[arg(long)]
        capacity: f64,
        #[arg(long = "delta-h", default_value_t = 0.0)]
        delta_h: f64,
        #[arg(long = "beta-grid", default_value = "0:0.5:0.05")]
        beta_grid: String,
        /// Write CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measured growth under an attack and the implied adversary threshold.
    AttackFrontier {
        #[arg(long)]
        attack: String,
        #[arg(long = "capacity-grid")]
        capacity_grid: String,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        #[arg(long, default_value_t = 20)]
        nodes: u32,
        #[arg(long, default_value_t = 2000.0)]
        duration: f64,
        #[arg(long = "lambda-adv", default_value_t = 3.0)]
        lambda_adv: f64,
        #[arg(long = "lambda-spv", default_value_t = 0.5)]
        lambda_spv: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Outcome {
    Pass,
    AuditFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let res = match cli.cmd {
        Cmd::Simulate { config, seed, out } => simulate(&config, seed, &out),
        Cmd::Analyze { trace, nu, c_tilde, kcp, out } => analyze_cmd(&trace, nu, c_tilde, kcp, out),
        Cmd::Region { capacity, delta_h, beta_grid, out } => region_cmd(capacity, delta_h, &beta_grid, out),
        Cmd::AttackFrontier { attack, capacity_grid, seeds, nodes, duration, lambda_adv, lambda_spv, out } => {
            frontier_cmd(&attack, &capacity_grid, seeds, nodes, duration, lambda_adv, lambda_spv, out)
        }
    };
    match res {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::AuditFailed) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    {
        let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        let mut w = io::BufWriter::new(file);
        f(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming {}", tmp.display()))?;
    Ok(())
}

fn ensure_writable_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    let probe = dir.join(".nakasim-write-probe");
    fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
    let _ = fs::remove_file(probe);
    Ok(())
}

fn csv_writer(w: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(w)
}

fn audit_rows(w: &mut csv::Writer<&mut dyn Write>, seed: Option<u64>, audits: &[AuditResult]) -> Result<()> {
    for a in audits {
        let (verdict, detail) = match &a.verdict {
            Verdict::Pass => ("pass", String::new()),
            Verdict::Fail { witnesses } => ("fail", witnesses.first().cloned().unwrap_or_default()),
            Verdict::Inconclusive { reason } => ("inconclusive", reason.clone()),
        };
        let mut rec = Vec::new();
        if let Some(s) = seed {
            rec.push(s.to_string());
        }
        rec.extend([a.name.clone(), verdict.to_string(), a.checked.to_string(), detail]);
        w.write_record(&rec)?;
    }
    Ok(())
}

fn pivot_csv(path: &Path, rep: &PivotReport) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv_writer(w);
        c.write_record(CSV_HEADER)?;
        for row in rep.csv_rows() {
            c.write_record(&row)?;
        }
        c.flush()?;
        Ok(())
    })
}

struct RunOutput {
    seed: u64,
    result: RunResult,
    audits: Vec<AuditResult>,
}

fn run_one(cfg: &RunConfig, output: &OutputSection, k_cp: Option<usize>, out: &Path) -> Result<RunOutput> {
    let seed = cfg.params.seed;
    let mut events: Vec<TraceEvent> = Vec::new();
    let result = run(cfg, &mut events);
    let mut audits = run_audits(&events, &result.metrics, cfg.protocol);
    if output.analyze {
        let ix = TraceIndex::build(&events).map_err(|e| anyhow!("seed {seed}: {e}"))?;
        let rep = analyze(&ix, cfg.params.nu, cfg.params.c_tilde, k_cp);
        pivot_csv(&out.join(format!("pivots-{seed}.csv")), &rep)?;
        audits.extend(rep.audits);
    }
    if output.trace {
        write_atomic(&out.join(format!("trace-{seed}.jsonl")), |w| Ok(write_jsonl(w, &events)?))?;
    }
    let lead: Vec<(u64, i64)> = events
        .iter()
        .filter_map(|e| match e {
            TraceEvent::LeadSample { slot, lead } => Some((*slot, *lead)),
            _ => None,
        })
        .collect();
    if !lead.is_empty() {
        write_atomic(&out.join(format!("lead-{seed}.csv")), |w| {
            let mut c = csv_writer(w);
            c.write_record(["slot", "time", "lead"])?;
            for (s, l) in lead {
                c.write_record([s.to_string(), format!("{}", s as f64 * cfg.params.tau), l.to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
    }
    Ok(RunOutput { seed, result, audits })
}

const METRICS_HEADER: [&str; 26] = [
    "seed",
    "protocol",
    "policy",
    "attack",
    "slots",
    "tau",
    "lambda_hon",
    "growth_rate",
    "growth_normalized",
    "final_l_min",
    "final_l_max",
    "agreed_height",
    "blocks",
    "honest_blocks",
    "utilization",
    "fetched",
    "unavailable_hits",
    "lost_work",
    "adv_blocks",
    "adv_releases",
    "adv_restarts",
    "adv_max_lead",
    "ledger_conflicts",
    "blank_disagreements",
    "txs_confirmed",
    "audits_failed",
];

fn simulate(config: &Path, seed: u64, out: &Path) -> Result<Outcome> {
    let text = fs::read_to_string(config).with_context(|| format!("reading config {}", config.display()))?;
    let sc = ScenarioConfig::from_json(&text).map_err(|e| anyhow!("config {}: {e}", config.display()))?;
    ensure_writable_dir(out)?;
    let cfgs = sc.seeds(seed).into_iter().map(|s| sc.resolve(s)).collect::<Result<Vec<_>, _>>()?;
    let k_cp = sc.sapos.as_ref().map(|s| s.k_cp as usize);
    let runs = map_runs(&cfgs, |cfg| run_one(cfg, &sc.output, k_cp, out)).into_iter().collect::<Result<Vec<_>>>()?;

    write_atomic(&out.join("metrics.csv"), |w| {
        let mut c = csv_writer(w);
        c.write_record(METRICS_HEADER)?;
        for (r, cfg) in runs.iter().zip(&cfgs) {
            let m = &r.result.metrics;
            let failed = r.audits.iter().filter(|a| a.verdict.failed()).count();
            c.write_record([
                m.seed.to_string(),
                cfg.protocol.label().to_string(),
                cfg.policy.label(),
                cfg.attack.strategy.label().to_string(),
                m.slots.to_string(),
                m.tau.to_string(),
                m.lambda_hon.to_string(),
                m.growth_rate.to_string(),
                m.growth_normalized.to_string(),
                m.final_l_min.to_string(),
                m.final_l_max.to_string(),
                m.agreed_height.to_string(),
                m.blocks.to_string(),
                m.honest_blocks.to_string(),
                m.utilization.to_string(),
                m.node_totals.fetched.to_string(),
                m.node_totals.unavailable_hits.to_string(),
                m.node_totals.lost_work.to_string(),
                m.adversary.blocks.to_string(),
                m.adversary.releases.to_string(),
                m.adversary.restarts.to_string(),
                m.adversary.max_lead.to_string(),
                m.ledger_conflicts.to_string(),
                m.blank_disagreements.to_string(),
                m.txs_confirmed.to_string(),
                failed.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    write_atomic(&out.join("nodes.csv"), |w| {
        let mut c = csv_writer(w);
        c.write_record(["seed", "node", "utilization"])?;
        for r in &runs {
            for (i, u) in r.result.node_utilization.iter().enumerate() {
                c.write_record([r.seed.to_string(), i.to_string(), u.to_string()])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    write_atomic(&out.join("audits.csv"), |w| {
        let mut c = csv_writer(w);
        c.write_record(["seed", "audit", "verdict", "checked", "detail"])?;
        for r in &runs {
            audit_rows(&mut c, Some(r.seed), &r.audits)?;
        }
        c.flush()?;
        Ok(())
    })?;

    let mut any_failed = false;
    for r in &runs {
        let m = &r.result.metrics;
        let failed: Vec<&str> = r.audits.iter().filter(|a| a.verdict.failed()).map(|a| a.name.as_str()).collect();
        any_failed |= !failed.is_empty();
        println!(
            "seed {}: growth {:.4} blocks/s, L_min {}, agreed {}, audits {}",
            r.seed,
            m.growth_rate,
            m.final_l_min,
            m.agreed_height,
            if failed.is_empty() { "pass".to_string() } else { format!("FAILED ({})", failed.join(", ")) }
        );
    }
    Ok(if any_failed { Outcome::AuditFailed } else { Outcome::Pass })
}

fn analyze_cmd(trace: &Path, nu: u64, c_tilde: f64, kcp: usize, out: Option<PathBuf>) -> Result<Outcome> {
    if !(c_tilde >= 0.0 && c_tilde.is_finite()) {
        bail!("--c-tilde must be a non-negative number");
    }
    let f = fs::File::open(trace).with_context(|| format!("opening trace {}", trace.display()))?;
    let events = read_jsonl(BufReader::new(f)).with_context(|| format!("parsing trace {}", trace.display()))?;
    let ix = TraceIndex::build(&events).map_err(|e| anyhow!("trace {}: {e}", trace.display()))?;
    let window = ix.delta_h + c_tilde / ix.capacity;
    if ((nu as f64 + 1.0) * ix.tau - window).abs() > ix.tau {
        eprintln!(
            "warning: (nu+1)*tau = {:.4} s differs from delta_h + c_tilde/C = {window:.4} s by more than a slot",
            (nu as f64 + 1.0) * ix.tau
        );
    }
    let rep = analyze(&ix, nu, c_tilde, (kcp > 0).then_some(kcp));
    let mut audits = rep.audits.clone();
    audits.extend(scheduler_audits(&events));

    let dir = out.unwrap_or_else(|| trace.parent().map(Path::to_path_buf).unwrap_or_default());
    let dir = if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir };
    ensure_writable_dir(&dir)?;
    let stem = trace.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    pivot_csv(&dir.join(format!("{stem}.pivots.csv")), &rep)?;
    write_atomic(&dir.join(format!("{stem}.audits.csv")), |w| {
        let mut c = csv_writer(w);
        c.write_record(["audit", "verdict", "checked", "detail"])?;
        audit_rows(&mut c, None, &audits)?;
        c.flush()?;
        Ok(())
    })?;

    let n_pp = rep.pp.iter().filter(|&&x| x).count();
    let n_cp = rep.cp.iter().filter(|&&x| x).count();
    println!("indices {}, PP {n_pp}, CP {n_cp}", rep.series.len());
    if let Some(r) = &rep.recurrence {
        println!(
            "CP recurrence (K_cp = {}): fixed windows {}/{}, sliding 2K windows {}/{}",
            r.k_cp, r.fixed_with_cp, r.fixed_windows, r.sliding_with_cp, r.sliding_windows
        );
    }
    for a in &audits {
        let v = match &a.verdict {
            Verdict::Pass => "pass".to_string(),
            Verdict::Fail { witnesses } => format!("FAIL: {}", witnesses.first().cloned().unwrap_or_default()),
            Verdict::Inconclusive { reason } => format!("inconclusive: {reason}"),
        };
        println!("{:<26} {v}", a.name);
    }
    Ok(if audits.iter().any(|a| a.verdict.failed()) { Outcome::AuditFailed } else { Outcome::Pass })
}

fn region_cmd(capacity: f64, delta_h: f64, beta_grid: &str, out: Option<PathBuf>) -> Result<Outcome> {
    if !(capacity > 0.0 && capacity.is_finite()) {
        bail!("--capacity must be positive");
    }
    if !(delta_h >= 0.0 && delta_h.is_finite()) {
        bail!("--delta-h must be non-negative");
    }
    let betas = grid::parse_grid(beta_grid)?;
    if betas.iter().any(|b| !(0.0..1.0).contains(b)) {
        bail!("--beta-grid values must lie in [0, 1)");
    }
    let mut rows: Vec<RegionPoint> = region(&betas, capacity, delta_h);
    rows.extend(bounded_delay_reference(&betas, capacity));
    let emit = |w: &mut dyn Write| -> Result<()> {
        let mut c = csv_writer(w);
        c.write_record(["beta", "lambda_max", "c_tilde_star", "model", "status"])?;
        for p in &rows {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let status = if p.lambda_max.is_some() { "secure" } else { "insecure" };
            c.write_record([p.beta.to_string(), opt(p.lambda_max), opt(p.c_tilde_star), p.model.label().into(), status.into()])?;
        }
        c.flush()?;
        Ok(())
    };
    match out {
        Some(p) => write_atomic(&p, emit)?,
        None => emit(&mut io::stdout().lock())?,
    }
    Ok(Outcome::Pass)
}

#[allow(clippy::too_many_arguments)]
fn frontier_cmd(
    attack: &str,
    capacity_grid: &str,
    seeds: u64,
    nodes: u32,
    duration: f64,
    lambda_adv: f64,
    lambda_spv: f64,
    out: Option<PathBuf>,
) -> Result<Outcome> {
    let strategy = match attack {
        "private" => Strategy::Private,
        "teaser" => Strategy::Teaser,
        "none" => Strategy::None,
        other => bail!("unknown --attack {other:?} (expected private, teaser or none)"),
    };
    let caps = grid::parse_grid(capacity_grid)?;
    if caps.iter().any(|&c| !(c > 0.0)) {
        bail!("--capacity-grid values must be positive");
    }
    if seeds == 0 || nodes == 0 || !(duration > 0.0) || lambda_adv < 0.0 || lambda_spv < 0.0 {
        bail!("--seeds, --nodes and --duration must be positive and rates non-negative");
    }
    let spec = GrowthSpec { n_nodes: nodes, lambda_adv, duration, seeds: (0..seeds).collect(), ..GrowthSpec::default() };
    let rows = attack_frontier(&spec, strategy, &caps, lambda_spv);
    let emit = |w: &mut dyn Write| -> Result<()> {
        let mut c = csv::Writer::from_writer(w);
        for r in &rows {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    };
    match out {
        Some(p) => write_atomic(&p, emit)?,
        None => emit(&mut io::stdout().lock())?,
    }
    Ok(Outcome::Pass)
}
