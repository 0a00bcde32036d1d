//! Batch front door: subcommands for the relation systems, the blowup
//! tower, the transform pipeline, and the smoothness certificate, with
//! deterministic JSON artifacts and a reproducible run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use plucker_tower::chart::ChartId;
use plucker_tower::gamma::{
    gamma_from_matroid, maximality_audit, run_gamma_pipeline, ChartStatus, GammaOptions, GammaRun,
    GammaScheme, Matroid,
};
use plucker_tower::indices::IndexTuple;
use plucker_tower::model::ModelSystem;
use plucker_tower::poly::VariableId;
use plucker_tower::tower::{
    run_full_tower, GatePolicy, LambdaPolicy, StagePlan, TowerOptions, TowerRun,
};
use plucker_tower::verify::{birational_proxy, certify, Verdict, VerifyOptions};

#[derive(Parser)]
#[command(name = "plucker-tower", version, about = "Blowup tower over a Grassmannian chart with finite-field smoothness certification")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the ordered primary relation family and binomial systems.
    Relations(RelationsArgs),
    /// Run the theta/wp/eth blowup tower and emit the final atlas.
    Tower(TowerArgs),
    /// Transport a coordinate-section scheme through the tower.
    Gamma(GammaArgs),
    /// Certify smoothness of the final transform pointwise over F_p.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Ambient dimension parameter d.
    #[arg(long)]
    d: usize,
    /// Ambient dimension parameter n.
    #[arg(long)]
    n: usize,
    /// Chart index, comma-separated entries, e.g. 1,2.
    #[arg(long, value_name = "TUPLE")]
    m: String,
    /// Degree bound for the quotient binomial search.
    #[arg(long, default_value_t = 3)]
    rho_degree_bound: usize,
}

#[derive(Args, Clone)]
struct TowerFlags {
    /// Base chart policy: all | first | explicit:<i0,i1,...>.
    #[arg(long, default_value = "all")]
    lambda_o: String,
    /// Primes used by the nonemptiness gate.
    #[arg(long, default_value = "3,5,7", value_name = "LIST")]
    primes: String,
    /// Gate policy: nonempty | empty | exact-budget:<N>.
    #[arg(long, default_value = "nonempty")]
    gate: String,
    /// Chart budget; exceeding it produces a partial run.
    #[arg(long, default_value_t = 200_000)]
    max_charts: usize,
    /// Seed for randomized sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Truncate the tower for negative controls: none | theta | wp.
    #[arg(long, default_value = "none")]
    truncate_after: String,
    /// Keep charts whose transform has no finite-field point.
    #[arg(long, default_value_t = false)]
    skip_pruning: bool,
}

#[derive(Args)]
struct RelationsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TowerArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    tower: TowerFlags,
    /// Output directory (falls back to PLUCKER_TOWER_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct GammaSource {
    /// Comma-separated coordinate tuples pinned to zero, e.g. "34" or "3.4".
    #[arg(long)]
    gamma: Option<String>,
    /// Matroid JSON file: {"d":..,"n":..,"dI":{"[1,2]":1,...}}.
    #[arg(long)]
    matroid: Option<PathBuf>,
}

#[derive(Args)]
struct GammaArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    tower: TowerFlags,
    #[command(flatten)]
    source: GammaSource,
    /// Output directory (falls back to PLUCKER_TOWER_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    tower: TowerFlags,
    #[command(flatten)]
    source: GammaSource,
    /// Primes for point enumeration (defaults to the gate primes).
    #[arg(long, value_name = "LIST")]
    verify_primes: Option<String>,
    #[arg(long, default_value_t = 14)]
    exhaustive_threshold: usize,
    #[arg(long, default_value_t = 100_000)]
    sample_budget: usize,
    /// Report file (also echoed into --out when given).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip the birationality proxy check.
    #[arg(long, default_value_t = false)]
    skip_proxy: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn parse_tuple(s: &str) -> Result<IndexTuple, String> {
    let entries: Result<Vec<u8>, _> = s.split(',').map(|x| x.trim().parse::<u8>()).collect();
    let mut entries = entries.map_err(|e| format!("bad tuple {s:?}: {e}"))?;
    entries.sort_unstable();
    entries.dedup();
    Ok(IndexTuple::new(entries))
}

/// One gamma entry: digits ("34") or dot-separated ("3.4") for n >= 10.
fn parse_gamma_entry(s: &str) -> Result<IndexTuple, String> {
    let s = s.trim();
    let entries: Vec<u8> = if s.contains('.') {
        s.split('.')
            .map(|x| x.parse::<u8>().map_err(|e| format!("bad entry {x:?}: {e}")))
            .collect::<Result<_, _>>()?
    } else {
        s.chars()
            .map(|c| {
                c.to_digit(10)
                    .map(|d| d as u8)
                    .ok_or_else(|| format!("bad digit {c:?}"))
            })
            .collect::<Result<_, _>>()?
    };
    let mut entries = entries;
    entries.sort_unstable();
    entries.dedup();
    Ok(IndexTuple::new(entries))
}

fn resolve_out(out: &Option<PathBuf>) -> Result<PathBuf, String> {
    match out {
        Some(p) => Ok(p.clone()),
        None => std::env::var("PLUCKER_TOWER_OUT")
            .map(PathBuf::from)
            .map_err(|_| "give --out or set PLUCKER_TOWER_OUT".to_string()),
    }
}

fn parse_primes(s: &str) -> Result<Vec<u64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<u64>().map_err(|e| format!("bad prime list: {e}")))
        .collect()
}

fn parse_lambda(s: &str) -> Result<LambdaPolicy, String> {
    match s {
        "all" => Ok(LambdaPolicy::All),
        "first" => Ok(LambdaPolicy::First),
        _ => {
            if let Some(rest) = s.strip_prefix("explicit:") {
                let idxs: Result<Vec<usize>, _> =
                    rest.split(',').map(|x| x.trim().parse::<usize>()).collect();
                Ok(LambdaPolicy::Explicit(idxs.map_err(|e| format!("bad lambda-o: {e}"))?))
            } else {
                Err(format!("bad --lambda-o {s:?}"))
            }
        }
    }
}

fn build_tower_options(flags: &TowerFlags) -> Result<TowerOptions, String> {
    let gate_primes = parse_primes(&flags.primes)?;
    let (gate, gate_budget) = match flags.gate.as_str() {
        "nonempty" => (GatePolicy::AssumeNonempty, 100_000),
        "empty" => (GatePolicy::AssumeEmpty, 100_000),
        other => {
            if let Some(rest) = other.strip_prefix("exact-budget:") {
                let b: usize = rest.parse().map_err(|e| format!("bad gate budget: {e}"))?;
                (GatePolicy::AssumeNonempty, b)
            } else {
                return Err(format!("bad --gate {other:?}"));
            }
        }
    };
    let stages = match flags.truncate_after.as_str() {
        "none" => StagePlan::Full,
        "theta" => StagePlan::ThetaOnly,
        "wp" => StagePlan::ThroughWp,
        other => return Err(format!("bad --truncate-after {other:?}")),
    };
    Ok(TowerOptions {
        gate,
        gate_primes,
        gate_budget,
        max_charts: flags.max_charts,
        round_cap: 64,
        seed: flags.seed,
        stages,
        prune_empty: !flags.skip_pruning,
    })
}

fn build_model(common: &CommonArgs) -> Result<Arc<ModelSystem>, String> {
    if common.d == 0 || common.d >= common.n {
        return Err("require 1 <= d < n".to_string());
    }
    let m = parse_tuple(&common.m)?;
    if m.len() != common.d {
        return Err(format!("chart index must have d = {} entries", common.d));
    }
    ModelSystem::build(common.d, common.n, &m, common.rho_degree_bound)
        .map(Arc::new)
        .map_err(|e| e.to_string())
}

fn load_gamma(model: &ModelSystem, source: &GammaSource) -> Result<GammaScheme, String> {
    match (&source.gamma, &source.matroid) {
        (Some(g), None) => {
            let tuples: Result<Vec<IndexTuple>, String> = g
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(parse_gamma_entry)
                .collect();
            GammaScheme::new(model, tuples?).map_err(|e| e.to_string())
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| e.to_string())?;
            let d = value["d"].as_u64().ok_or("matroid file missing d")? as usize;
            let n = value["n"].as_u64().ok_or("matroid file missing n")? as usize;
            if d != model.d || n != model.n {
                return Err("matroid (d,n) does not match the run".to_string());
            }
            let mut overrides: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
            if let Some(map) = value["dI"].as_object() {
                for (key, v) in map {
                    let cleaned = key.replace(['[', ']', ' '], "");
                    let subset: Result<Vec<u8>, _> = cleaned
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|x| x.parse::<u8>())
                        .collect();
                    let subset = subset.map_err(|e| format!("bad dI key {key:?}: {e}"))?;
                    let dv = v.as_u64().ok_or_else(|| format!("bad dI value for {key}"))? as usize;
                    overrides.insert(subset, dv);
                }
            }
            let matroid = Matroid::with_overrides(d, n, &overrides).map_err(|e| e.to_string())?;
            gamma_from_matroid(&matroid, model).map_err(|e| e.to_string())
        }
        (None, None) => Ok(GammaScheme::empty()),
        (Some(_), Some(_)) => Err("give either --gamma or --matroid, not both".to_string()),
    }
}

#[derive(Serialize)]
struct RelationsReport {
    m: Vec<u8>,
    upsilon: usize,
    relations: Vec<RelationEntry>,
    main_binomials: Vec<String>,
    residual_binomials: Vec<String>,
    quotient_binomials: Vec<String>,
    linearized: Vec<String>,
}

#[derive(Serialize)]
struct RelationEntry {
    u: Vec<u8>,
    rank: i64,
    terms: Vec<String>,
    dehomogenized: String,
    linearized: String,
}

fn relations_report(model: &ModelSystem) -> RelationsReport {
    RelationsReport {
        m: model.m.0.clone(),
        upsilon: model.upsilon(),
        relations: model
            .relations
            .iter()
            .map(|r| RelationEntry {
                u: r.relation.leading_u.as_ref().unwrap().0.clone(),
                rank: r.relation.rank(),
                terms: r
                    .relation
                    .terms
                    .iter()
                    .map(|t| {
                        format!(
                            "{}p[{}]p[{}]",
                            if t.sign > 0 { "+" } else { "-" },
                            t.u,
                            t.v
                        )
                    })
                    .collect(),
                dehomogenized: r.dehom.to_string(),
                linearized: r.linear.to_string(),
            })
            .collect(),
        main_binomials: model
            .mains
            .iter()
            .map(|b| format!("B({},{}): {} - {}", b.k, b.tau, b.plus, b.minus))
            .collect(),
        residual_binomials: model
            .residuals
            .iter()
            .map(|r| format!("B({};{},{}): {} - {}", r.k, r.s, r.t, r.lhs, r.rhs))
            .collect(),
        quotient_binomials: model
            .quotients
            .iter()
            .map(|q| format!("{} - {}", q.lhs, q.rhs))
            .collect(),
        linearized: model.relations.iter().map(|r| r.linear.to_string()).collect(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
    std::fs::write(path, text + "\n").map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Manifest {
    config: serde_json::Value,
    config_hash: String,
    upsilon: usize,
    base_charts: usize,
    total_charts: usize,
    final_charts: usize,
    steps: usize,
    rho: BTreeMap<String, usize>,
    kappa: BTreeMap<String, usize>,
    sigma: BTreeMap<String, usize>,
    varsigma: BTreeMap<String, usize>,
    partial: bool,
    warnings: Vec<String>,
}

fn manifest_for(run: &TowerRun, config: serde_json::Value) -> Manifest {
    let mut hasher = Sha256::new();
    hasher.update(config.to_string().as_bytes());
    Manifest {
        config,
        config_hash: format!("{:x}", hasher.finalize()),
        upsilon: run.model.upsilon(),
        base_charts: run.base_live.len(),
        total_charts: run.atlas.charts.len(),
        final_charts: run.final_live.len(),
        steps: run.steps.len(),
        rho: run.tables.rho.clone(),
        kappa: run.tables.kappa.clone(),
        sigma: run.tables.sigma.clone(),
        varsigma: run.tables.varsigma.clone(),
        partial: run.partial,
        warnings: run.warnings.clone(),
    }
}

fn dump_tower(run: &TowerRun, dir: &Path) -> Result<(), String> {
    let charts_dir = dir.join("charts");
    std::fs::create_dir_all(&charts_dir).map_err(|e| e.to_string())?;
    for id in &run.final_live {
        let chart = run.atlas.chart(*id);
        let stage = chart
            .transition
            .as_ref()
            .map(|t| t.step.label())
            .unwrap_or_else(|| "base".to_string());
        write_json(
            &charts_dir.join(format!("chart_{id:06}.json")),
            &chart.dump(&stage),
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct GammaStateDump {
    id: ChartId,
    status: String,
    zero: Vec<String>,
    one: Vec<String>,
    fstar: Vec<bool>,
}

fn dump_gamma(run: &TowerRun, gr: &GammaRun, dir: &Path) -> Result<(), String> {
    let states_dir = dir.join("gamma_states");
    std::fs::create_dir_all(&states_dir).map_err(|e| e.to_string())?;
    for id in &run.final_live {
        let st = gr.state(*id);
        let status = match &st.status {
            ChartStatus::Live => "live".to_string(),
            ChartStatus::Excluded(r) => format!("excluded: {r}"),
            ChartStatus::Undecided(r) => format!("undecided: {r}"),
        };
        let dump = GammaStateDump {
            id: *id,
            status,
            zero: st.zero.iter().map(VariableId::to_string).collect(),
            one: st.one.iter().map(VariableId::to_string).collect(),
            fstar: gr.fstar.clone(),
        };
        write_json(&states_dir.join(format!("state_{id:06}.json")), &dump)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Relations(args) => {
            let model = build_model(&args.common)?;
            let report = relations_report(&model);
            match &args.out {
                Some(path) => write_json(path, &report)?,
                None => println!("{}", serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Tower(args) => {
            let started = Instant::now();
            let model = build_model(&args.common)?;
            let opts = build_tower_options(&args.tower)?;
            let policy = parse_lambda(&args.tower.lambda_o)?;
            let run = run_full_tower(model, &policy, &opts).map_err(|e| e.to_string())?;
            let out = resolve_out(&args.out)?;
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            dump_tower(&run, &out)?;
            let config = serde_json::json!({
                "cmd": "tower",
                "d": args.common.d, "n": args.common.n, "m": args.common.m,
                "rho_degree_bound": args.common.rho_degree_bound,
                "lambda_o": args.tower.lambda_o,
                "primes": args.tower.primes,
                "gate": args.tower.gate,
                "max_charts": args.tower.max_charts,
                "seed": args.tower.seed,
                "truncate_after": args.tower.truncate_after,
                "skip_pruning": args.tower.skip_pruning,
            });
            write_json(&out.join("manifest.json"), &manifest_for(&run, config))?;
            write_json(
                &out.join("timings.json"),
                &serde_json::json!({"elapsed_ms": started.elapsed().as_millis() as u64}),
            )?;
            Ok(if run.partial { ExitCode::from(3) } else { ExitCode::SUCCESS })
        }
        Command::Gamma(args) => {
            let started = Instant::now();
            let model = build_model(&args.common)?;
            let gamma = load_gamma(&model, &args.source)?;
            let opts = build_tower_options(&args.tower)?;
            let policy = parse_lambda(&args.tower.lambda_o)?;
            let run = run_full_tower(model, &policy, &opts).map_err(|e| e.to_string())?;
            let gopts = GammaOptions {
                primes: opts.gate_primes.clone(),
                seed: opts.seed,
                ..Default::default()
            };
            let gr = run_gamma_pipeline(&run, &gamma, &gopts);
            let out = resolve_out(&args.out)?;
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            dump_tower(&run, &out)?;
            dump_gamma(&run, &gr, &out)?;
            let config = serde_json::json!({
                "cmd": "gamma",
                "d": args.common.d, "n": args.common.n, "m": args.common.m,
                "rho_degree_bound": args.common.rho_degree_bound,
                "lambda_o": args.tower.lambda_o,
                "primes": args.tower.primes,
                "gate": args.tower.gate,
                "max_charts": args.tower.max_charts,
                "seed": args.tower.seed,
                "truncate_after": args.tower.truncate_after,
                "gamma": gamma.gamma.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
            });
            write_json(&out.join("manifest.json"), &manifest_for(&run, config))?;
            write_json(
                &out.join("timings.json"),
                &serde_json::json!({"elapsed_ms": started.elapsed().as_millis() as u64}),
            )?;
            let code = if run.partial || gr.has_undecided() {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            };
            Ok(code)
        }
        Command::Verify(args) => {
            let started = Instant::now();
            let model = build_model(&args.common)?;
            let gamma = load_gamma(&model, &args.source)?;
            let mut topts = build_tower_options(&args.tower)?;
            // pruning is exact only for primes the gate searched: make the
            // gate prime list cover the verification primes
            for p in parse_primes(args.verify_primes.as_deref().unwrap_or(&args.tower.primes))? {
                if !topts.gate_primes.contains(&p) {
                    topts.gate_primes.push(p);
                }
            }
            let policy = parse_lambda(&args.tower.lambda_o)?;
            let run = run_full_tower(model, &policy, &topts).map_err(|e| e.to_string())?;
            let gopts = GammaOptions {
                primes: topts.gate_primes.clone(),
                seed: topts.seed,
                ..Default::default()
            };
            let gr = run_gamma_pipeline(&run, &gamma, &gopts);
            let vopts = VerifyOptions {
                primes: parse_primes(
                    args.verify_primes.as_deref().unwrap_or(&args.tower.primes),
                )?,
                exhaustive_threshold: args.exhaustive_threshold,
                sample_budget: args.sample_budget,
                seed: args.tower.seed,
            };
            let mut report = certify(&run, &gr, &vopts);
            report.warnings.extend(maximality_audit(&run, &gr, &gopts));
            // birationality proxy on the first verify prime
            let mut proxy = Vec::new();
            if !args.skip_proxy {
                for &p in &vopts.primes {
                    proxy.push(birational_proxy(&run, &gr, p, &vopts));
                }
                for pr in &proxy {
                    if pr.upstairs_dense != pr.downstairs_images || !pr.images_in_scheme {
                        report.verdict = Verdict::Fail;
                        report.warnings.push(format!(
                            "birationality proxy failed at p={}: {} dense keys over {} images",
                            pr.prime, pr.upstairs_dense, pr.downstairs_images
                        ));
                    }
                }
            }
            let config = serde_json::json!({
                "cmd": "verify",
                "d": args.common.d, "n": args.common.n, "m": args.common.m,
                "rho_degree_bound": args.common.rho_degree_bound,
                "lambda_o": args.tower.lambda_o,
                "gate_primes": args.tower.primes,
                "gate": args.tower.gate,
                "max_charts": args.tower.max_charts,
                "seed": args.tower.seed,
                "truncate_after": args.tower.truncate_after,
                "gamma": gamma.gamma.iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                "verify_primes": args.verify_primes.clone().unwrap_or_else(|| args.tower.primes.clone()),
                "exhaustive_threshold": args.exhaustive_threshold,
                "sample_budget": args.sample_budget,
            });
            let full = serde_json::json!({
                "verdict": match report.verdict {
                    Verdict::Pass => "PASS",
                    Verdict::Fail => "FAIL",
                    Verdict::Partial => "PARTIAL",
                },
                "charts": report.charts,
                "warnings": report.warnings,
                "proxy": proxy,
            });
            if let Some(dir) = &args.out {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
            }
            if let Some(path) = &args.report {
                if let Some(parent) = path.parent() {
                    if !parent.as_os_str().is_empty() {
                        std::fs::create_dir_all(parent).map_err(|e| e.to_string())?;
                    }
                }
                write_json(path, &full)?;
            }
            if let Some(dir) = &args.out {
                dump_tower(&run, dir)?;
                dump_gamma(&run, &gr, dir)?;
                write_json(&dir.join("report.json"), &full)?;
                write_json(&dir.join("manifest.json"), &manifest_for(&run, config))?;
                write_json(
                    &dir.join("timings.json"),
                    &serde_json::json!({"elapsed_ms": started.elapsed().as_millis() as u64}),
                )?;
            }
            if args.report.is_none() && args.out.is_none() {
                println!("{}", serde_json::to_string_pretty(&full).map_err(|e| e.to_string())?);
            }
            let code = match report.verdict {
                Verdict::Pass => {
                    if run.partial {
                        ExitCode::from(3)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Verdict::Fail => ExitCode::from(1),
                Verdict::Partial => ExitCode::from(3),
            };
            Ok(code)
        }
    }
}
