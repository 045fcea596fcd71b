#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accredit_core::accreditation::{accredit_many, sweep_load_scale, sweep_step_size, SolverTrace};
use accredit_core::dispatch::{shortfall_surface, Capacities, DispatchPolicy};
use accredit_core::gradient::ipa_gradient;
use accredit_core::metrics::aggregate;
use accredit_core::oracle::{check_regular, oracle_assess, oracle_gradient};
use accredit_core::scenario::STREAM_RULE;
use accredit_core::{
    exact_weight_batch, load_system_spec, sample_batch, AccreditMethod, AccreditationReport, Metric, MethodParams,
    PerturbationDirection, RiskOperator, RngPolicy, ScenarioBatch, Study, StudyOptions, SystemSpec,
};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

/// Raised for bad arguments or config files; maps to exit code 2.
#[derive(Debug)]
struct ConfigError(String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "accredit", version, about = "Resource adequacy assessment and capacity accreditation")]
struct Cli {
    /// Cap on worker threads (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate EUE, LOLH and LOLD with standard errors.
    Assess(StudyArgs),
    /// Accreditation factors for resources by one or more methods.
    Accredit(StudyArgs),
    /// Accreditation factor against perturbation step size.
    SweepStep(StudyArgs),
    /// Accreditation factor against baseline load multiplier.
    SweepLoad(StudyArgs),
    /// Compare Monte Carlo estimates with exact enumeration.
    OracleCheck(StudyArgs),
}

#[derive(Args, Clone, Default)]
struct StudyArgs {
    /// System spec (JSON).
    #[arg(long)]
    system: Option<PathBuf>,
    /// Study config (JSON); command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// ue, lolh or lold.
    #[arg(long)]
    metric: Option<String>,
    /// expectation or cvar:<beta>.
    #[arg(long)]
    risk: Option<String>,
    /// Finite-difference step (MW) for mri_fd.
    #[arg(long)]
    delta: Option<f64>,
    /// Candidate increment (MW) for ELCC.
    #[arg(long = "delta-x")]
    delta_x: Option<f64>,
    #[arg(long = "tolerance-mw")]
    tolerance_mw: Option<f64>,
    /// Comma-separated methods: elcc_bisection, elcc_secant, elcc_newton_ipa, mri_fd, mri_ipa.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated resource ids; `perfect` names the perfect resource.
    #[arg(long, value_delimiter = ',')]
    resources: Option<Vec<String>>,
    /// Comma-separated step sizes (MW) for sweep-step.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    deltas: Option<Vec<f64>>,
    /// Comma-separated load multipliers for sweep-load.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    multipliers: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, env = "ACCREDIT_OUT_DIR")]
    out: Option<PathBuf>,
    /// Use the exact-weight enumeration batch instead of sampling.
    #[arg(long)]
    exact: bool,
    /// Write solver traces for ELCC methods.
    #[arg(long)]
    trace: bool,
    /// Fill the wall_time_s column (makes output timing-dependent).
    #[arg(long = "wall-time")]
    wall_time: bool,
    /// Write the sampled batch to this file.
    #[arg(long = "dump-batch")]
    dump_batch: Option<PathBuf>,
    /// Largest accepted baseline relative standard error.
    #[arg(long = "rse-ceiling")]
    rse_ceiling: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    system: Option<PathBuf>,
    samples: Option<usize>,
    seed: Option<u64>,
    metric: Option<String>,
    risk: Option<String>,
    delta: Option<f64>,
    delta_x: Option<f64>,
    tolerance_mw: Option<f64>,
    methods: Option<Vec<String>>,
    resources: Option<Vec<String>>,
    deltas: Option<Vec<f64>>,
    multipliers: Option<Vec<f64>>,
    out: Option<PathBuf>,
    exact: Option<bool>,
    rse_ceiling: Option<f64>,
}

struct Settings {
    system: SystemSpec,
    samples: usize,
    seed: u64,
    metric: Metric,
    risk: RiskOperator,
    delta: Option<f64>,
    delta_x: Option<f64>,
    tolerance_mw: f64,
    methods: Option<Vec<AccreditMethod>>,
    resources: Option<Vec<String>>,
    deltas: Option<Vec<f64>>,
    multipliers: Option<Vec<f64>>,
    out: PathBuf,
    exact: bool,
    trace: bool,
    wall_time: bool,
    dump_batch: Option<PathBuf>,
    rse_ceiling: f64,
}

impl Settings {
    fn resolve(args: StudyArgs) -> anyhow::Result<Self> {
        let (file, base_dir) = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
                let cfg: ConfigFile =
                    serde_json::from_str(&text).map_err(|e| config_err(format!("config {}: {e}", path.display())))?;
                (cfg, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        let system_path = args
            .system
            .or_else(|| file.system.map(|p| base_dir.join(p)))
            .ok_or_else(|| config_err("system: no --system given"))?;
        let system = load_system_spec(&system_path)?;
        let samples = args.samples.or(file.samples).unwrap_or(10_000);
        if samples == 0 {
            return Err(config_err("samples: must be at least 1"));
        }
        let metric = args.metric.or(file.metric).map(|m| m.parse()).transpose()?.unwrap_or_default();
        let risk = args
            .risk
            .or(file.risk)
            .map(|r| r.parse())
            .transpose()?
            .unwrap_or(RiskOperator::Expectation);
        let methods = args
            .methods
            .or(file.methods)
            .map(|ms| ms.iter().map(|m| m.parse()).collect::<Result<Vec<AccreditMethod>, _>>())
            .transpose()?;
        let tolerance_mw = args.tolerance_mw.or(file.tolerance_mw).unwrap_or(0.01);
        if !(tolerance_mw > 0.0) {
            return Err(config_err("tolerance_mw: must be positive"));
        }
        Ok(Self {
            system,
            samples,
            seed: args.seed.or(file.seed).unwrap_or(7),
            metric,
            risk,
            delta: args.delta.or(file.delta),
            delta_x: args.delta_x.or(file.delta_x),
            tolerance_mw,
            methods,
            resources: args.resources.or(file.resources),
            deltas: args.deltas.or(file.deltas),
            multipliers: args.multipliers.or(file.multipliers),
            out: args
                .out
                .or_else(|| file.out.map(|p| base_dir.join(p)))
                .unwrap_or_else(|| PathBuf::from(".")),
            exact: args.exact || file.exact.unwrap_or(false),
            trace: args.trace,
            wall_time: args.wall_time,
            dump_batch: args.dump_batch,
            rse_ceiling: args.rse_ceiling.or(file.rse_ceiling).unwrap_or(0.05),
        })
    }

    fn batch(&self) -> anyhow::Result<ScenarioBatch> {
        let batch = if self.exact {
            exact_weight_batch(&self.system)?
        } else {
            sample_batch(&self.system, self.samples, &RngPolicy::new(self.seed))?
        };
        if let Some(path) = &self.dump_batch {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(f);
            batch.write_dump(&mut w)?;
            w.flush()?;
        }
        Ok(batch)
    }

    fn study_options(&self) -> StudyOptions {
        StudyOptions {
            metric: self.metric,
            rse_ceiling: self.rse_ceiling,
            ..StudyOptions::default()
        }
    }

    fn require_expectation(&self) -> anyhow::Result<()> {
        if self.risk != RiskOperator::Expectation {
            return Err(config_err(format!("risk: accreditation supports expectation only, got {}", self.risk)));
        }
        Ok(())
    }

    fn header(&self) -> String {
        let samples = if self.exact { "exact".to_string() } else { self.samples.to_string() };
        format!(
            "# accredit {} seed={} samples={samples} rule={STREAM_RULE} metric={} risk={}",
            env!("CARGO_PKG_VERSION"),
            self.seed,
            self.metric,
            self.risk
        )
    }

    fn directions(&self, default: impl FnOnce(&SystemSpec) -> Vec<String>) -> anyhow::Result<Vec<PerturbationDirection>> {
        let ids = self.resources.clone().unwrap_or_else(|| default(&self.system));
        if ids.is_empty() {
            return Err(config_err("resources: empty list"));
        }
        ids.iter().map(|id| parse_direction(&self.system, id)).collect()
    }

    fn single_direction(&self) -> anyhow::Result<PerturbationDirection> {
        match self.resources.as_deref() {
            Some([id]) => parse_direction(&self.system, id),
            _ => Err(config_err("resources: exactly one resource required")),
        }
    }

    fn methods_or(&self, default: &[AccreditMethod]) -> anyhow::Result<Vec<AccreditMethod>> {
        let m = self.methods.clone().unwrap_or_else(|| default.to_vec());
        if m.is_empty() {
            return Err(config_err("methods: empty list"));
        }
        Ok(m)
    }

    fn params_for(&self, direction: &PerturbationDirection) -> MethodParams {
        MethodParams {
            delta_mw: self.delta,
            delta_x_mw: self.delta_x.unwrap_or_else(|| default_delta_x(&self.system, direction)),
            tolerance_mw: self.tolerance_mw,
        }
    }
}

fn parse_direction(system: &SystemSpec, id: &str) -> anyhow::Result<PerturbationDirection> {
    let id = id.trim();
    if id == "perfect" {
        return Ok(PerturbationDirection::Perfect);
    }
    let d = PerturbationDirection::resource(id);
    d.validate(system)?;
    Ok(d)
}

/// 1% of nameplate, and 1 MW for resources smaller than 100 MW (including zero-size candidates).
fn default_delta_x(system: &SystemSpec, direction: &PerturbationDirection) -> f64 {
    let nameplate = match direction {
        PerturbationDirection::Resource { id } => system
            .generator_index(id)
            .map(|g| system.generators[g].nameplate_mw)
            .or_else(|| system.storage_index(id).map(|s| system.storages[s].power_mw))
            .unwrap_or(0.0),
        _ => 0.0,
    };
    (0.01 * nameplate).max(1.0)
}

fn all_resources(system: &SystemSpec) -> Vec<String> {
    system
        .generators
        .iter()
        .map(|g| g.id.clone())
        .chain(system.storages.iter().map(|s| s.id.clone()))
        .collect()
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, header_comment: &str, columns: &[&str]) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        let mut file = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        writeln!(file, "{header_comment}")?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(columns)?;
        Ok(Self { path, writer })
    }

    fn row<I, S>(&mut self, fields: I) -> anyhow::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    fn finish(mut self) -> anyhow::Result<PathBuf> {
        self.writer.flush()?;
        eprintln!("wrote {}", self.path.display());
        Ok(self.path)
    }
}

fn cmd_assess(s: &Settings) -> anyhow::Result<ExitCode> {
    let batch = s.batch()?;
    let surface = shortfall_surface(&s.system, &batch, DispatchPolicy::default())?;
    let metrics = surface.scenario_metrics();
    let mut out = CsvOut::create(
        &s.out,
        "assessment.csv",
        &s.header(),
        &["metric", "risk", "mean", "std_error", "rse", "ci95_halfwidth", "n"],
    )?;
    for metric in [Metric::Ue, Metric::Lolh, Metric::Lold] {
        let values: Vec<f64> = metrics.iter().map(|m| m.get(metric)).collect();
        let est = aggregate(&values, batch.weights(), s.risk)?;
        let rse = est.rse.map(num).unwrap_or_else(|| "undefined".into());
        println!("{metric}: {} ± {} (rse {rse})", est.mean, est.ci95_halfwidth);
        out.row([
            metric.to_string(),
            s.risk.to_string(),
            num(est.mean),
            num(est.std_error),
            rse,
            num(est.ci95_halfwidth),
            est.n.to_string(),
        ])?;
    }
    out.finish()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_accredit(s: &Settings) -> anyhow::Result<ExitCode> {
    s.require_expectation()?;
    let directions = s.directions(all_resources)?;
    let methods = s.methods_or(&AccreditMethod::ALL)?;
    let batch = s.batch()?;
    let study = Study::new(&s.system, &batch, s.study_options())?;
    let items: Vec<_> = directions.iter().map(|d| (d.clone(), s.params_for(d))).collect();

    // outcomes[m][r]
    let mut outcomes = Vec::with_capacity(methods.len());
    for &m in &methods {
        outcomes.push(accredit_many(&study, &items, m)?);
    }
    let mut out = CsvOut::create(
        &s.out,
        "accreditation.csv",
        &s.header(),
        &[
            "resource_id",
            "method",
            "alpha",
            "l_c_mw",
            "delta_x_mw",
            "iterations",
            "simulation_runs",
            "stderr",
            "wall_time_s",
            "alpha_stderr",
            "flags",
        ],
    )?;
    let mut traces: Vec<SolverTrace> = vec![];
    let mut failed = false;
    for (r, d) in directions.iter().enumerate() {
        for (mi, &m) in methods.iter().enumerate() {
            match &outcomes[mi][r] {
                Ok((rep, trace)) => {
                    out.row(report_row(rep, s.wall_time))?;
                    traces.extend(trace.clone());
                }
                Err(e) if e.is_input_error() => return Err(anyhow!(e.to_string()).context(ConfigError(e.to_string()))),
                Err(e) => {
                    failed = true;
                    eprintln!("{} / {m}: {e}", d.label());
                    out.row([
                        d.label(),
                        m.to_string(),
                        num(f64::NAN),
                        String::new(),
                        String::new(),
                        "0".into(),
                        "0".into(),
                        String::new(),
                        String::new(),
                        String::new(),
                        format!("error: {e}"),
                    ])?;
                }
            }
        }
    }
    out.finish()?;
    eprintln!("simulation runs: {}", study.runs());
    if s.trace {
        let mut t = CsvOut::create(
            &s.out,
            "solver_trace.csv",
            &s.header(),
            &["resource_id", "method", "k", "kind", "c_mw", "g", "g_stderr", "lo_mw", "hi_mw", "reason"],
        )?;
        for trace in &traces {
            let reason = serde_json::to_value(trace.reason)?.as_str().unwrap_or_default().to_string();
            for st in &trace.steps {
                let kind = serde_json::to_value(st.kind)?.as_str().unwrap_or_default().to_string();
                t.row([
                    trace.resource_id.clone(),
                    trace.method.to_string(),
                    st.k.to_string(),
                    kind,
                    num(st.c_mw),
                    num(st.g),
                    num(st.g_stderr),
                    num(st.lo_mw),
                    num(st.hi_mw),
                    reason.clone(),
                ])?;
            }
        }
        t.finish()?;
    }
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn report_row(r: &AccreditationReport, wall_time: bool) -> Vec<String> {
    vec![
        r.resource_id.clone(),
        r.method.to_string(),
        num(r.alpha),
        opt(r.l_c_mw),
        opt(r.delta_x_mw),
        r.iterations.to_string(),
        r.simulation_runs.to_string(),
        num(r.gradient_stderr),
        if wall_time { num(r.wall_time_s) } else { String::new() },
        num(r.alpha_stderr),
        r.flags.join(";"),
    ]
}

fn cmd_sweep_step(s: &Settings) -> anyhow::Result<ExitCode> {
    s.require_expectation()?;
    let direction = s.single_direction()?;
    let deltas = s.deltas.clone().ok_or_else(|| config_err("deltas: no --deltas given"))?;
    let methods = s.methods_or(&[AccreditMethod::MriFd])?;
    let batch = s.batch()?;
    let study = Study::new(&s.system, &batch, s.study_options())?;
    let rows = sweep_step_size(&study, &direction, &deltas, &methods, s.tolerance_mw)?;
    let mut out = CsvOut::create(
        &s.out,
        "sweep_step.csv",
        &s.header(),
        &["resource_id", "delta_mw", "method", "alpha", "alpha_stderr", "stderr", "l_c_mw", "iterations", "flags"],
    )?;
    for r in rows {
        out.row([
            direction.label(),
            num(r.delta_mw),
            r.method.to_string(),
            num(r.alpha),
            num(r.alpha_stderr),
            num(r.gradient_stderr),
            opt(r.l_c_mw),
            r.iterations.to_string(),
            r.flags.join(";"),
        ])?;
    }
    out.finish()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep_load(s: &Settings) -> anyhow::Result<ExitCode> {
    s.require_expectation()?;
    let direction = s.single_direction()?;
    let multipliers = s.multipliers.clone().ok_or_else(|| config_err("multipliers: no --multipliers given"))?;
    let methods = s.methods_or(&[AccreditMethod::MriIpa])?;
    let batch = s.batch()?;
    let params = s.params_for(&direction);
    let mut out = CsvOut::create(
        &s.out,
        "sweep_load.csv",
        &s.header(),
        &["resource_id", "multiplier", "method", "baseline_metric", "alpha", "alpha_stderr", "status", "flags"],
    )?;
    for m in methods {
        let rows = sweep_load_scale(&s.system, &batch, &multipliers, &direction, m, &params, s.study_options())?;
        for r in rows {
            out.row([
                direction.label(),
                num(r.multiplier),
                m.to_string(),
                num(r.baseline_metric),
                opt(r.alpha),
                opt(r.alpha_stderr),
                if r.adequate { "adequate" } else { "ok" }.to_string(),
                r.flags.join(";"),
            ])?;
        }
    }
    out.finish()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_oracle_check(s: &Settings) -> anyhow::Result<ExitCode> {
    let exact = oracle_assess(&s.system)?;
    let header = s.header();
    let mut hours = CsvOut::create(&s.out, "oracle_exact.csv", &header, &["hour", "lolp", "eue_mwh"])?;
    for (t, (p, e)) in exact.lolp_per_hour.iter().zip(&exact.eue_per_hour).enumerate() {
        hours.row([t.to_string(), num(*p), num(*e)])?;
    }
    hours.finish()?;
    let mut states = CsvOut::create(&s.out, "oracle_states.csv", &header, &["capacity_mw", "probability"])?;
    for st in &exact.state_table {
        states.row([num(st.capacity_mw), num(st.probability)])?;
    }
    states.finish()?;

    let batch = sample_batch(&s.system, s.samples, &RngPolicy::new(s.seed))?;
    let surface = shortfall_surface(&s.system, &batch, DispatchPolicy::default())?;
    let metrics = surface.scenario_metrics();
    let mut checks: Vec<(String, f64, f64, f64)> = vec![];
    for (name, metric, value) in [("eue", Metric::Ue, exact.eue), ("lolh", Metric::Lolh, exact.lolh)] {
        let v: Vec<f64> = metrics.iter().map(|m| m.get(metric)).collect();
        let est = aggregate(&v, None, RiskOperator::Expectation)?;
        checks.push((name.into(), value, est.mean, est.std_error));
    }

    let irregular = match check_regular(&s.system, &Capacities::baseline(&s.system)) {
        Ok(()) => None,
        Err(e @ accredit_core::Error::IrregularBaseline { .. }) => Some(e),
        Err(e) => return Err(e.into()),
    };
    if irregular.is_none() {
        let thermal = |sys: &SystemSpec| sys.thermal_ids();
        let mut dirs = vec![PerturbationDirection::Perfect];
        dirs.extend(s.directions(thermal)?.into_iter().filter(|d| *d != PerturbationDirection::Perfect));
        for d in dirs {
            let value = oracle_gradient(&s.system, &d)?;
            let est = ipa_gradient(&s.system, &surface, &batch, &d)?;
            checks.push((format!("gradient:{}", d.label()), value, est.value, est.std_error));
        }
    }

    let mut out = CsvOut::create(
        &s.out,
        "oracle_check.csv",
        &header,
        &["quantity", "exact", "mc_mean", "mc_stderr", "abs_error", "limit", "pass"],
    )?;
    let mut all_pass = true;
    println!("quantity,exact,mc_mean,mc_stderr,pass");
    for (name, value, mean, se) in &checks {
        let err = (mean - value).abs();
        let limit = 4.0 * se + 1e-9;
        let pass = err <= limit;
        all_pass &= pass;
        println!("{name},{value},{mean},{se},{}", if pass { "PASS" } else { "FAIL" });
        out.row([name.clone(), num(*value), num(*mean), num(*se), num(err), num(limit), pass.to_string()])?;
    }
    if let Some(e) = &irregular {
        all_pass = false;
        out.row(["gradient".to_string(), String::new(), String::new(), String::new(), String::new(), String::new(), format!("irregular baseline: {e}")])?;
    }
    out.finish()?;
    match irregular {
        Some(e) => {
            println!("FAIL {e}");
            Ok(ExitCode::from(1))
        }
        None if all_pass => {
            println!("PASS");
            Ok(ExitCode::SUCCESS)
        }
        None => {
            println!("FAIL");
            Ok(ExitCode::from(1))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(config_err("threads: must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    let (args, cmd): (StudyArgs, fn(&Settings) -> anyhow::Result<ExitCode>) = match cli.command {
        Command::Assess(a) => (a, cmd_assess),
        Command::Accredit(a) => (a, cmd_accredit),
        Command::SweepStep(a) => (a, cmd_sweep_step),
        Command::SweepLoad(a) => (a, cmd_sweep_load),
        Command::OracleCheck(a) => (a, cmd_oracle_check),
    };
    let settings = Settings::resolve(args)?;
    cmd(&settings)
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<ConfigError>()) {
        return 2;
    }
    match err.downcast_ref::<accredit_core::Error>() {
        Some(e) if e.is_input_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            let _ = writeln!(io::stderr(), "error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
