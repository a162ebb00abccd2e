use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dampsite::action::{action, beta_coefficients, eigen_sensitivity, fd_system_matrix, gamma, total_action, DEFAULT_FD_STEP};
use dampsite::case::{BusId, NetworkCase};
use dampsite::error::{Error, Result};
use dampsite::io::{self, bundled};
use dampsite::modal::{decompose, transform_disturbance};
use dampsite::oracle::{default_horizon, simulate_linear, DEFAULT_DT};
use dampsite::powerflow::solve_power_flow;
use dampsite::siting::{
    baseline, chance_constrained_site, BaselineOptions, BenchmarkMode, DisturbanceSet, Histogram, Method,
    SitingOptions,
};
use dampsite::system::{build_system_matrix, StateKind, DEFAULT_GAIN};
use dampsite::verify::{self, VerifyOptions};
use dampsite::wind::sample_wind_power;

const THREADS_VAR: &str = "DAMPSITE_THREADS";
const BUILTIN: &str = "builtin:";

#[derive(Parser)]
#[command(name = "dampsite", version, about = "Chance-constrained siting of a damping actuator under wind uncertainty")]
struct Cli {
    /// Case file, or builtin:<name> for a bundled case.
    #[arg(long, global = true)]
    case: Option<String>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    /// Output directory; without it the main table goes to stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress informational messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the power flow and print bus voltages.
    Pf {
        /// Wind injection, p.u.; defaults to the case's base wind power.
        #[arg(long)]
        pw: Option<f64>,
    },
    /// Eigenvalues, frequencies and damping ratios.
    Modal {
        #[command(flatten)]
        point: OperatingPoint,
    },
    /// Action, total action and estimator coefficients per disturbance.
    Action {
        #[command(flatten)]
        point: OperatingPoint,
        #[arg(long)]
        disturbance_file: Option<String>,
        /// Finite horizon for the partial action, s.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_FD_STEP)]
        fd_step: f64,
    },
    /// Histogram of sampled wind power.
    Wind {
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
    /// Chance-constrained actuator siting.
    Site {
        #[command(flatten)]
        common: SiteArgs,
        #[arg(long)]
        disturbances: Option<String>,
        #[arg(long, value_enum, default_value_t = MethodArg::Linear)]
        method: MethodArg,
    },
    /// Damping-ratio benchmark siting.
    Baseline {
        #[command(flatten)]
        common: SiteArgs,
        /// Required damping ratio.
        #[arg(long)]
        benchmark: f64,
        #[arg(long, value_enum, default_value_t = ModeArg::Dominant)]
        mode: ModeArg,
        /// Re-solve eigenvalues per sample instead of first-order movement.
        #[arg(long)]
        exact: bool,
    },
    /// Run the oracle suite.
    Verify {
        #[arg(long, default_value_t = DEFAULT_DT)]
        dt: f64,
        #[arg(long, default_value_t = DEFAULT_GAIN)]
        gain: f64,
        /// Also write the first disturbance's RK4 trajectory as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Skip the sampling checks (fidelity, speedup, probabilities).
        #[arg(long)]
        no_sampling: bool,
    },
}

#[derive(Args)]
struct OperatingPoint {
    #[arg(long)]
    pw: Option<f64>,
    /// Actuator bus; no actuator when omitted.
    #[arg(long)]
    bus: Option<BusId>,
    #[arg(long, default_value_t = DEFAULT_GAIN)]
    gain: f64,
}

#[derive(Args)]
struct SiteArgs {
    /// Candidate buses, overriding the case's list.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<BusId>>,
    #[arg(long, default_value_t = DEFAULT_GAIN)]
    gain: f64,
    #[arg(long, default_value_t = DEFAULT_FD_STEP)]
    fd_step: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Linear,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dominant,
    All,
}

struct Context {
    case_arg: Option<String>,
    seed: u64,
    samples: usize,
    out: Option<PathBuf>,
    quiet: bool,
}

impl Context {
    fn case(&self) -> Result<NetworkCase> {
        match self.case_arg.as_deref() {
            None => Err(Error::Validation("--case is required".into())),
            Some(s) => match s.strip_prefix(BUILTIN) {
                Some(name) => bundled::case(name),
                None => io::parse_case(Path::new(s)),
            },
        }
    }

    /// Disturbances from a file, the bundled set of a builtin case, or one
    /// single-generator disturbance per machine.
    fn disturbances(&self, file: Option<&str>, case: &NetworkCase) -> Result<DisturbanceSet> {
        if let Some(f) = file {
            return match f.strip_prefix(BUILTIN) {
                Some(name) => bundled::disturbances(name),
                None => io::parse_disturbances(Path::new(f)),
            };
        }
        if let Some(name) = self.case_arg.as_deref().and_then(|s| s.strip_prefix(BUILTIN)) {
            return bundled::disturbances(name);
        }
        DisturbanceSet::uniform(
            case.generators
                .iter()
                .map(|g| (format!("g{}", g.id), vec![(g.id, io::DEFAULT_MAGNITUDE)]))
                .collect(),
        )
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    /// Writes `text` to `name` under `--out`, or to stdout.
    fn emit(&self, name: &str, text: &str) -> Result<()> {
        match &self.out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(name), text)?;
                Ok(())
            }
            None => {
                std::io::stdout().write_all(text.as_bytes())?;
                Ok(())
            }
        }
    }
}

fn with_candidates(mut case: NetworkCase, candidates: Option<Vec<BusId>>) -> Result<NetworkCase> {
    if let Some(c) = candidates {
        case.candidate_buses = c;
        case.validate()?;
    }
    Ok(case)
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn pf(ctx: &Context, pw: Option<f64>) -> Result<()> {
    let case = ctx.case()?;
    let eq = solve_power_flow(&case, pw.unwrap_or(case.wind.base_power))?;
    ctx.note(format!("converged in {} iterations, mismatch {:.3e}", eq.iterations, eq.mismatch));
    let rows = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| vec![b.id.to_string(), eq.voltage[i].to_string(), eq.angle[i].to_string()]);
    ctx.emit("pf.csv", &csv_text(&["bus", "v", "theta"], rows)?)
}

fn modal(ctx: &Context, point: &OperatingPoint) -> Result<()> {
    let case = ctx.case()?;
    let eq = solve_power_flow(&case, point.pw.unwrap_or(case.wind.base_power))?;
    let dec = decompose(&build_system_matrix(&case, &eq, point.bus, point.gain)?)?;
    let rows = dec.modes().into_iter().map(|m| {
        vec![
            m.index.to_string(),
            m.eigenvalue.re.to_string(),
            m.eigenvalue.im.to_string(),
            m.frequency_hz.to_string(),
            m.damping_ratio.to_string(),
        ]
    });
    ctx.emit("modal.csv", &csv_text(&["index", "re", "im", "freq_hz", "damping"], rows)?)
}

#[derive(Serialize)]
struct ActionReport {
    wind_power: f64,
    bus: Option<BusId>,
    gain: f64,
    #[serde(rename = "disturbance")]
    disturbances: Vec<ActionRow>,
}

#[derive(Serialize)]
struct ActionRow {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    action: Option<f64>,
    total_action: f64,
    gamma: f64,
}

fn action_cmd(
    ctx: &Context,
    point: &OperatingPoint,
    file: Option<&str>,
    tau: Option<f64>,
    h: f64,
) -> Result<()> {
    let case = ctx.case()?;
    let dist = ctx.disturbances(file, &case)?;
    let pw = point.pw.unwrap_or(case.wind.base_power);
    let model = build_system_matrix(&case, &solve_power_flow(&case, pw)?, point.bus, point.gain)?;
    let dec = decompose(&model)?;
    let dl = eigen_sensitivity(&dec, &fd_system_matrix(&case, pw, point.bus, point.gain, h)?)?;

    let mut rows = Vec::new();
    let mut table = Vec::new();
    for d in dist.iter() {
        let z0 = transform_disturbance(&dec, &model.speed_disturbance(&d.speeds)?)?;
        let beta = beta_coefficients(&dec, &z0)?;
        rows.push(ActionRow {
            id: d.id.clone(),
            tau,
            action: tau.map(|t| action(&dec, &z0, t)).transpose()?,
            total_action: total_action(&dec, &z0)?,
            gamma: gamma(&beta, &dl)?,
        });
        for i in 0..dec.n() {
            table.push(vec![
                d.id.clone(),
                i.to_string(),
                dec.eigenvalues[i].re.to_string(),
                dec.eigenvalues[i].im.to_string(),
                beta[i].re.to_string(),
                beta[i].im.to_string(),
                dl[i].re.to_string(),
                dl[i].im.to_string(),
            ]);
        }
    }
    let report = ActionReport {
        wind_power: pw,
        bus: point.bus,
        gain: point.gain,
        disturbances: rows,
    };
    let toml = toml::to_string(&report).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    ctx.emit("action.toml", &toml)?;
    let csv = csv_text(
        &["disturbance", "mode", "re_lambda", "im_lambda", "re_beta", "im_beta", "re_dlambda", "im_dlambda"],
        table,
    )?;
    if ctx.out.is_some() {
        ctx.emit("action.csv", &csv)?;
    }
    Ok(())
}

fn wind_cmd(ctx: &Context, bins: usize) -> Result<()> {
    if bins == 0 {
        return Err(Error::Validation("--bins must be at least 1".into()));
    }
    let case = ctx.case()?;
    let w = &case.wind;
    let p = sample_wind_power(w, ctx.samples, ctx.seed);
    let mut hist = Histogram::empty(0.0, w.rated_power, bins);
    for &x in &p {
        let b = hist.bin(x);
        hist.counts[b] += 1;
    }
    ctx.note(format!(
        "zero-output mass {:.6}, rated-output mass {:.6}",
        w.zero_mass(),
        w.rated_mass()
    ));
    let rows = (0..bins).map(|b| {
        let (lo, hi) = hist.edges(b);
        vec![b.to_string(), lo.to_string(), hi.to_string(), hist.counts[b].to_string()]
    });
    ctx.emit("wind.csv", &csv_text(&["bin", "lower", "upper", "count"], rows)?)
}

fn site(ctx: &Context, args: &SiteArgs, file: Option<&str>, method: MethodArg) -> Result<()> {
    let case = with_candidates(ctx.case()?, args.candidates.clone())?;
    let dist = ctx.disturbances(file, &case)?;
    let opts = SitingOptions {
        gain: args.gain,
        fd_step: args.fd_step,
        method: match method {
            MethodArg::Linear => Method::Linear,
            MethodArg::Exact => Method::Exact,
        },
    };
    let r = chance_constrained_site(&case, &case.candidate_buses, &dist, &case.wind, ctx.samples, ctx.seed, &opts)?;
    ctx.note(format!(
        "winner bus {}; base build {:.3} s, {:.3} us per sample",
        r.winner, r.timing.base_build_seconds, r.timing.per_sample_micros
    ));
    if r.failed_samples > 0 {
        ctx.note(format!("{} samples failed and were skipped", r.failed_samples));
    }
    match &ctx.out {
        Some(dir) => io::emit_results(&r, dir),
        None => ctx.emit(io::SUMMARY_FILE, &io::Summary::from_result(&r).to_toml()),
    }
}

#[derive(Serialize)]
struct BaselineReport {
    mode: BenchmarkMode,
    benchmark: f64,
    exact: bool,
    samples: usize,
    seed: u64,
    winner: BusId,
    #[serde(rename = "candidate")]
    candidates: Vec<BaselineRow>,
}

#[derive(Serialize)]
struct BaselineRow {
    bus: BusId,
    probability: f64,
    dominant_re: f64,
    dominant_im: f64,
    dominant_damping: f64,
}

fn baseline_cmd(ctx: &Context, args: &SiteArgs, benchmark: f64, mode: ModeArg, exact: bool) -> Result<()> {
    let case = with_candidates(ctx.case()?, args.candidates.clone())?;
    let p = sample_wind_power(&case.wind, ctx.samples, ctx.seed);
    let mode = match mode {
        ModeArg::Dominant => BenchmarkMode::Dominant,
        ModeArg::All => BenchmarkMode::All,
    };
    let opts = BaselineOptions {
        gain: args.gain,
        fd_step: args.fd_step,
        exact,
    };
    let r = baseline(&case, &case.candidate_buses, &p, benchmark, mode, &opts)?;
    let report = BaselineReport {
        mode,
        benchmark,
        exact,
        samples: ctx.samples,
        seed: ctx.seed,
        winner: r.winner,
        candidates: r
            .candidates
            .iter()
            .zip(&r.probabilities)
            .zip(&r.dominant)
            .map(|((&bus, &probability), m)| BaselineRow {
                bus,
                probability,
                dominant_re: m.eigenvalue.re,
                dominant_im: m.eigenvalue.im,
                dominant_damping: m.damping_ratio,
            })
            .collect(),
    };
    let toml = toml::to_string(&report).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    ctx.emit("baseline.toml", &toml)
}

fn trajectory_csv(case: &NetworkCase, dist: &DisturbanceSet, gain: f64, dt: f64) -> Result<String> {
    let bus = case.candidate_buses[0];
    let model = build_system_matrix(case, &solve_power_flow(case, case.wind.base_power)?, Some(bus), gain)?;
    let dx0 = model.speed_disturbance(&dist.as_slice()[0].speeds)?;
    let traj = simulate_linear(&model, &dx0, default_horizon(&model), dt)?;
    let mut header = vec!["t".to_string()];
    header.extend(model.labels.iter().map(|l| match l.kind {
        StateKind::Angle => format!("delta_{}", l.generator),
        StateKind::Speed => format!("omega_{}", l.generator),
    }));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = (0..traj.steps()).map(|s| {
        std::iter::once(traj.times[s].to_string())
            .chain(traj.state(s).iter().map(|x| x.to_string()))
            .collect()
    });
    csv_text(&header, rows)
}

fn verify_cmd(ctx: &Context, dt: f64, gain: f64, trajectory: Option<&Path>, no_sampling: bool) -> Result<bool> {
    let opts = VerifyOptions {
        gain,
        dt,
        samples: ctx.samples,
        seed: ctx.seed,
    };
    let cases: Vec<(NetworkCase, DisturbanceSet)> = match ctx.case_arg {
        Some(_) => {
            let case = ctx.case()?;
            let dist = ctx.disturbances(None, &case)?;
            vec![(case, dist)]
        }
        None => bundled::NAMES
            .iter()
            .map(|n| Ok((bundled::case(n)?, bundled::disturbances(n)?)))
            .collect::<Result<_>>()?,
    };

    let start = Instant::now();
    let mut text = String::new();
    let mut passed = true;
    for (case, dist) in &cases {
        let r = verify::case_report(case, dist, &opts);
        passed &= r.passed();
        text.push_str(&format!("[{}]\n{r}\n", case.name));
    }
    if !no_sampling {
        let (case, dist) = cases.last().expect("at least one case");
        let r = verify::sampling_report(case, dist, &opts);
        passed &= r.passed();
        text.push_str(&format!("[{} sampling]\n{r}\n", case.name));
    }
    ctx.note(format!("oracle suite finished in {:.2} s", start.elapsed().as_secs_f64()));
    ctx.emit("verify.txt", &text)?;

    if let Some(path) = trajectory {
        let (case, dist) = &cases[0];
        fs::write(path, trajectory_csv(case, dist, gain, dt)?)?;
    }
    Ok(passed)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::Validation(format!("{THREADS_VAR} must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Validation(format!("cannot configure {n} threads: {e}")))
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    let ctx = Context {
        case_arg: cli.case,
        seed: cli.seed,
        samples: cli.samples as usize,
        out: cli.out,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Pf { pw } => pf(&ctx, *pw)?,
        Command::Modal { point } => modal(&ctx, point)?,
        Command::Action {
            point,
            disturbance_file,
            tau,
            fd_step,
        } => action_cmd(&ctx, point, disturbance_file.as_deref(), *tau, *fd_step)?,
        Command::Wind { bins } => wind_cmd(&ctx, *bins)?,
        Command::Site {
            common,
            disturbances,
            method,
        } => site(&ctx, common, disturbances.as_deref(), *method)?,
        Command::Baseline {
            common,
            benchmark,
            mode,
            exact,
        } => baseline_cmd(&ctx, common, *benchmark, *mode, *exact)?,
        Command::Verify {
            dt,
            gain,
            trajectory,
            no_sampling,
        } => return verify_cmd(&ctx, *dt, *gain, trajectory.as_deref(), *no_sampling),
    }
    Ok(true)
}

/// Exit status for command-line usage errors.
const USAGE_EXIT: u8 = 64;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(USAGE_EXIT);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error[{}]: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
