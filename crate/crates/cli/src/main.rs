use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tstsim::analysis::{compare_micro_to_tst, EnsembleSummary, Observation, ProbeObserver};
use tstsim::diploid::{sample_gst_path, GstState};
use tstsim::equilibria::{sample_tst_jumps, TstJump, TstState, MAX_PATH_JUMPS};
use tstsim::ensemble::try_run_replicas;
use tstsim::microsim::{run, GridSampler};
use tstsim::odelimit::{integrate, phase_predictions, OdeSystem, StepControl};
use tstsim::rng::replica_rng;
use tstsim::scenario::{parse_any, Resolved};
use tstsim::trajectory::{
    read_trajectory, trajectory_probe_times, write_gst, write_micro, write_ode, write_tst, Manifest, ReplicaRecord,
    ResolvedParams, Trajectory,
};
use tstsim::traitspace::AssumptionReport;

#[derive(Parser)]
#[command(name = "tstsim", version, about = "Trait-chain population simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exact stochastic simulation, one trajectory per replica.
    RunSsa(RunArgs),
    /// Deterministic large-population limit.
    RunOde(RunArgs),
    /// Trait substitution tree path on the mutation time scale.
    RunTst(RunArgs),
    /// Diploid genotype substitution path.
    RunGst(RunArgs),
    /// Probe hitting times over stored trajectories.
    Analyze(AnalyzeArgs),
    /// Occupied-count distributions of microscopic runs against TST paths.
    Compare(CompareArgs),
    /// Assumption verdicts for a scenario.
    Check(ScenarioArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML, or a run manifest to replay.
    #[arg(long)]
    scenario: PathBuf,
    /// `key=value` applied to the scenario before resolution; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicas: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sc: ScenarioArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Trajectory files, e.g. `out/ssa_*.csv`.
    #[arg(long)]
    input: String,
    /// Scenario holding the probe definitions.
    #[command(flatten)]
    sc: ScenarioArgs,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    micro: String,
    #[arg(long)]
    tst: String,
    /// Scenario giving K, sigma and eta.
    #[command(flatten)]
    sc: ScenarioArgs,
    /// Comma-separated mutation-scale times; defaults to `--points` equispaced times on the horizon.
    #[arg(long, value_delimiter = ',')]
    times: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    points: usize,
    /// Tolerance in standard errors.
    #[arg(long, default_value_t = 3.0)]
    bands: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e.downcast_ref::<tstsim::Error>() {
                Some(tstsim::Error::Scenario(_)) => "scenario",
                Some(tstsim::Error::Trajectory(_)) => "trajectory",
                Some(_) => "model",
                None if e.is::<std::io::Error>() => "io",
                None => "input",
            };
            let chain: Vec<String> = e.chain().map(|c| c.to_string()).collect();
            eprintln!("{}", json!({ "error": { "kind": kind, "message": chain.join(": ") } }));
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::RunSsa(a) => run_ssa(&a),
        Cmd::RunOde(a) => run_ode(&a),
        Cmd::RunTst(a) => run_tst(&a),
        Cmd::RunGst(a) => run_gst(&a),
        Cmd::Analyze(a) => analyze(&a),
        Cmd::Compare(a) => compare(&a),
        Cmd::Check(a) => check(&a),
    }
}

fn load(a: &ScenarioArgs) -> anyhow::Result<Resolved> {
    let src = fs::read_to_string(&a.scenario).with_context(|| format!("reading {}", a.scenario.display()))?;
    let mut ov = Vec::new();
    for o in &a.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("override {o:?} is not key=value"))?;
        ov.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = a.seed {
        ov.push(("seed".into(), s.to_string()));
    }
    if let Some(r) = a.replicas {
        ov.push(("replicas".into(), r.to_string()));
    }
    Ok(parse_any(&src, &ov)?)
}

fn params(r: &Resolved) -> ResolvedParams {
    ResolvedParams {
        k: r.k,
        epsilon: r.epsilon,
        sigma: r.sigma,
        horizon: r.horizon,
        eta: r.eta,
        mode: format!("{:?}", r.scenario.mode),
        seed: r.file.seed,
        replicas: r.file.replicas,
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn finish(out: &Path, kind: &str, r: &Resolved, started: Instant, replicas: Vec<ReplicaRecord>, extra: serde_json::Value) -> anyhow::Result<()> {
    let files = replicas.iter().map(|x| x.file.clone()).collect();
    let m = Manifest {
        tool: "tstsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        kind: kind.into(),
        deterministic: kind == "ode",
        scenario: r.source.clone(),
        resolved: params(r),
        files,
        advisories: r.advisories.clone(),
        wall_time_s: started.elapsed().as_secs_f64(),
        replicas,
        extra,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    for a in &r.advisories {
        eprintln!("warning: {a}");
    }
    println!("{}", path.display());
    Ok(())
}

fn run_ssa(a: &RunArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let r = load(&a.sc)?;
    fs::create_dir_all(&a.out)?;
    let records = try_run_replicas(r.file.replicas, |i| {
        let mut grid = GridSampler::uniform(r.horizon, r.file.output.grid_points);
        let mut probes = ProbeObserver::new(r.k, r.probes.clone())?;
        probes.stop_when_filled = false;
        let outcome = run(&r.scenario, replica_rng(r.file.seed, i), (&mut grid, &mut probes))?;
        let file = format!("ssa_r{i:04}.csv");
        let w = create(&a.out.join(&file)).map_err(|e| tstsim::Error::Trajectory(e.to_string()))?;
        write_micro(w, &grid, r.k)?;
        Ok(ReplicaRecord {
            index: i,
            file,
            end_time: outcome.end_time,
            events: outcome.state.events,
            absorbed: outcome.absorbed,
            probes: probes.times,
            exploded: false,
        })
    })?;
    finish(&a.out, "ssa", &r, started, records, serde_json::Value::Null)
}

fn run_ode(a: &RunArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let r = load(&a.sc)?;
    fs::create_dir_all(&a.out)?;
    let sys = OdeSystem::new(r.scenario.space.clone(), r.epsilon, r.scenario.mode);
    let xi0: Vec<f64> = r.scenario.initial.iter().map(|&c| c as f64 / r.k as f64).collect();
    let traj = integrate(&sys, &xi0, r.horizon, StepControl::default())?;
    let n = r.file.output.grid_points.max(2);
    let times: Vec<f64> = (0..n).map(|i| r.horizon * i as f64 / (n - 1) as f64).collect();
    let file = "ode.csv".to_string();
    write_ode(create(&a.out.join(&file))?, &traj, &r.scenario.space, &times)?;
    let probes = tstsim::analysis::ode_probe_times(&traj, &r.scenario.space, &r.probes)?;
    let extra = match phase_predictions(&sys, Some(r.eta)) {
        Ok(p) => json!({ "phase_predictions": p, "rejected_steps": traj.rejected }),
        Err(e) => json!({ "phase_predictions": null, "note": e.to_string(), "rejected_steps": traj.rejected }),
    };
    let rec = ReplicaRecord {
        index: 0,
        file,
        end_time: traj.end_time(),
        events: 0,
        absorbed: false,
        probes,
        exploded: false,
    };
    finish(&a.out, "ode", &r, started, vec![rec], extra)
}

// Paths are sampled one jump past the cap so that explosion is detectable.
fn path_record(i: u64, file: String, path_len: usize, horizon: f64, last: f64) -> ReplicaRecord {
    let exploded = path_len > MAX_PATH_JUMPS + 1;
    ReplicaRecord {
        index: i,
        file,
        end_time: if exploded { last } else { horizon },
        events: path_len as u64 - 1,
        absorbed: false,
        probes: Vec::new(),
        exploded,
    }
}

fn run_tst(a: &RunArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let r = load(&a.sc)?;
    fs::create_dir_all(&a.out)?;
    let horizon = if r.scenario.space.traits().iter().all(|t| t.mu == 0.0) {
        r.horizon_mutation_scale().unwrap_or(0.0)
    } else {
        r.horizon_mutation_scale()?
    };
    let init = TstState::at_equilibrium(r.scenario.space.clone(), 0.0)?;
    let records = try_run_replicas(r.file.replicas, |i| {
        let path: Vec<TstJump> = match &r.file.mutation {
            Some(law) => sample_tst_jumps(&init, horizon, MAX_PATH_JUMPS + 1, law.as_law(), &mut replica_rng(r.file.seed, i))?,
            None if r.scenario.space.traits().iter().all(|t| t.mu == 0.0) => vec![TstJump {
                time: 0.0,
                source_rank: None,
                state: init.clone(),
            }],
            None => return Err(tstsim::Error::Scenario("run-tst needs a mutation law when some mu > 0".into())),
        };
        let file = format!("tst_r{i:04}.csv");
        let w = create(&a.out.join(&file)).map_err(|e| tstsim::Error::Trajectory(e.to_string()))?;
        write_tst(w, &path)?;
        Ok(path_record(i, file, path.len(), horizon, path.last().map_or(0.0, |j| j.time)))
    })?;
    warn_exploded(&records);
    finish(&a.out, "tst", &r, started, records, serde_json::Value::Null)
}

fn run_gst(a: &RunArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let r = load(&a.sc)?;
    let dip = r.file.diploid.as_ref().ok_or_else(|| anyhow!("run-gst needs a [diploid] section"))?;
    fs::create_dir_all(&a.out)?;
    let horizon = if dip.law.mu == 0.0 { 0.0 } else { r.horizon_mutation_scale()? };
    let space = dip
        .law
        .space(tstsim::diploid::AlleleSpace::numbered(dip.alleles), r.file.kernels)?;
    let init = GstState::at_equilibrium(space, 0.0)?;
    let records = try_run_replicas(r.file.replicas, |i| {
        let path = sample_gst_path(&init, horizon, MAX_PATH_JUMPS + 1, &dip.law, &mut replica_rng(r.file.seed, i))?;
        let file = format!("gst_r{i:04}.csv");
        let w = create(&a.out.join(&file)).map_err(|e| tstsim::Error::Trajectory(e.to_string()))?;
        write_gst(w, &path)?;
        Ok(path_record(i, file, path.len(), horizon, path.last().map_or(0.0, |j| j.time)))
    })?;
    warn_exploded(&records);
    finish(&a.out, "gst", &r, started, records, serde_json::Value::Null)
}

fn warn_exploded(records: &[ReplicaRecord]) {
    let n = records.iter().filter(|r| r.exploded).count();
    if n > 0 {
        eprintln!("warning: {n} of {} paths exceeded {MAX_PATH_JUMPS} jumps and were cut short", records.len());
    }
}

fn expand(pattern: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = glob::glob(pattern)
        .with_context(|| format!("bad pattern {pattern:?}"))?
        .collect::<Result<_, _>>()?;
    files.sort();
    if files.is_empty() {
        bail!("no input: {pattern:?} matches no files");
    }
    Ok(files)
}

fn read_all(pattern: &str) -> anyhow::Result<Vec<(PathBuf, Trajectory)>> {
    let files = expand(pattern)?;
    let mut out = Vec::with_capacity(files.len());
    let mut bad = Vec::new();
    for f in files {
        let res = fs::File::open(&f)
            .map_err(anyhow::Error::from)
            .and_then(|h| Ok(read_trajectory(std::io::BufReader::new(h))?));
        match res {
            Ok(t) => out.push((f, t)),
            Err(e) => bad.push(format!("{}: {e}", f.display())),
        }
    }
    if !bad.is_empty() {
        return Err(tstsim::Error::Trajectory(bad.join("; ")).into());
    }
    Ok(out)
}

fn emit(out: &Option<PathBuf>, v: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> anyhow::Result<()> {
    let trajs = read_all(&a.input)?;
    let r = load(&a.sc)?;
    if r.probes.is_empty() {
        bail!("scenario defines no probes");
    }
    let per: Vec<Vec<Option<f64>>> = trajs.iter().map(|(_, t)| trajectory_probe_times(t, &r.probes)).collect();
    let ids: Vec<String> = r.probes.iter().map(|p| p.id.clone()).collect();
    let ln = if r.epsilon > 0.0 && r.epsilon < 1.0 { Some((1.0 / r.epsilon).ln()) } else { None };
    let files: Vec<_> = trajs
        .iter()
        .zip(&per)
        .map(|((f, _), t)| json!({ "file": f.display().to_string(), "times": t }))
        .collect();
    let summary = if per.len() >= 2 {
        Some(EnsembleSummary::new(&ids, &per)?)
    } else {
        None
    };
    let single: Vec<_> = if per.len() == 1 {
        ids.iter()
            .zip(&per[0])
            .map(|(id, t)| json!({ "id": id, "time": t, "scaled": t.zip(ln).map(|(t, l)| t / l) }))
            .collect()
    } else {
        Vec::new()
    };
    emit(
        &a.out,
        &json!({
            "probes": ids,
            "ln_inv_eps": ln,
            "files": files,
            "summary": summary,
            "single": single,
        }),
    )
}

fn observe(block_masses: Option<Vec<f64>>, eta: f64) -> Observation {
    Observation::from_masses(&block_masses.unwrap_or_default(), eta)
}

fn observe_at(t: &Trajectory, time: f64, eta: f64) -> Observation {
    let idx = t.blocks.partition_point(|b| b.t <= time);
    observe(idx.checked_sub(1).map(|i| t.blocks[i].masses()), eta)
}

fn compare(a: &CompareArgs) -> anyhow::Result<()> {
    let r = load(&a.sc)?;
    let micro = read_all(&a.micro)?;
    let tst = read_all(&a.tst)?;
    let scale = r.k as f64 * r.sigma;
    if scale.is_nan() || scale <= 0.0 {
        bail!("compare needs sigma > 0 to convert natural time to the mutation scale");
    }
    let times: Vec<f64> = if a.times.is_empty() {
        let h = r.horizon_mutation_scale()?;
        let n = a.points.max(2);
        (0..n).map(|i| h * i as f64 / (n - 1) as f64).collect()
    } else {
        a.times.clone()
    };
    let obs_micro: Vec<Vec<Observation>> = micro
        .iter()
        .map(|(_, t)| times.iter().map(|&s| observe_at(t, s / scale, r.eta)).collect())
        .collect();
    let obs_tst: Vec<Vec<Observation>> = tst
        .iter()
        .map(|(_, t)| times.iter().map(|&s| observe_at(t, s, r.eta)).collect())
        .collect();
    let report = compare_micro_to_tst(&times, &obs_micro, &obs_tst, r.scenario.space.len(), a.bands)?;
    emit(&a.out, &serde_json::to_value(report)?)
}

fn check(a: &ScenarioArgs) -> anyhow::Result<()> {
    let r = load(a)?;
    let rep = AssumptionReport::for_space(&r.scenario.space);
    let a2 = rep.a2.iter().all(|p| p.holds);
    let b3 = rep.b3.iter().all(|p| p.holds);
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "verdicts": { "A1": rep.a1, "A2": a2, "B1": rep.b1.is_ok(), "B3": b3, "C1": rep.b1.is_ok() },
            "report": rep,
            "advisories": r.advisories,
        }))?
    );
    Ok(())
}
