//! `lie-es`: run, certify and analyze high-order extremum-seeking experiments.
//!
//! Exit codes: 0 success, 1 failed check, 2 usage or config error,
//! 3 unexpected divergence.

mod artifacts;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use lie_es::analysis::{
    compare_models, envelope, envelope_of, fit_polynomial, residual_order, FitOptions,
};
use lie_es::config::{AnalysisSection, Experiment, ExperimentConfig};
use lie_es::cost::{spot_check_minimum, BoxDomain};
use lie_es::integrals::{
    certify_excitation_with, closed_form_i, iterated_integral, IntegralRequest, UnitWave,
};
use lie_es::signal::{
    check_nonresonance_with_cap, design_dithers, SplitRule, DEFAULT_RESONANCE_CAP,
};
use lie_es::sim::{initial_speed, simulate, Preset, Trajectory};
use lie_es::Error;

use artifacts::RunReport;

const EXIT_CHECK: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "lie-es",
    version,
    about = "High-order Lie-bracket extremum seeking experiments"
)]
struct Cli {
    /// TOML experiment file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Named experiment: m4, m6, m8, gradient_m4, gradient_m6, mv4, limitation.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<Preset>,
    /// Output directory (overrides the config's [output] dir).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for randomized spot checks.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N", value_parser = clap::value_parser!(u64).range(16..))]
    steps_per_period: Option<u64>,
    /// Simulation horizon in seconds.
    #[arg(long, global = true, value_name = "SECONDS")]
    horizon: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an experiment and write trajectory, envelope, fits and plots.
    Simulate,
    /// Certify a single-pair design with the iterated-integral oracle.
    Certify(CertifyArgs),
    /// Check frequency multipliers for resonance.
    Resonance(ResonanceArgs),
    /// Fit decay models to a trajectory CSV.
    Fit(FitArgs),
    /// Estimate the order of the one-period residual across epsilons.
    Residual(ResidualArgs),
}

#[derive(Args, Debug)]
struct CertifyArgs {
    /// Bracket order N.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..=5))]
    order: u32,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    kappa: u32,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    /// Quadrature subintervals per period.
    #[arg(long, default_value_t = lie_es::integrals::DEFAULT_GRID)]
    grid: usize,
    /// Longest word to integrate (default N + 1, at most 6).
    #[arg(long)]
    max_len: Option<usize>,
    /// Test hook: set the second channel's frequency multiple to N - 1.
    #[arg(long)]
    break_frequency: bool,
}

#[derive(Args, Debug)]
struct ResonanceArgs {
    /// Comma-separated multipliers, e.g. 1,4.
    #[arg(long, value_delimiter = ',', required = true, value_parser = clap::value_parser!(u32).range(1..))]
    kappa: Vec<u32>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    order: u32,
    /// Maximum number of tuples to enumerate.
    #[arg(long, default_value_t = DEFAULT_RESONANCE_CAP)]
    cap: u128,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Trajectory CSV written by `simulate`.
    #[arg(long, value_name = "PATH")]
    trajectory: PathBuf,
    /// Minimizer, comma separated; defaults to the config's or preset's.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x_star: Option<Vec<f64>>,
    /// Envelope window in seconds.
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    floor_quantile: Option<f64>,
    /// Explicit exponential fit window `START,END`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    fit_window: Option<Vec<f64>>,
    /// Extra power-law fit window `START,END`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    late_window: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct ResidualArgs {
    /// Comma-separated epsilons, each at least 4x from the next.
    #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-4")]
    epsilon: Vec<f64>,
    /// Initial state (defaults to the experiment's).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
}

/// Error carrying its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure {
            code: EXIT_USAGE,
            error: e.into(),
        }
    }
}

type CmdResult = std::result::Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Simulate => run_simulate(cli),
        Command::Certify(a) => run_certify(cli, a),
        Command::Resonance(a) => run_resonance(a),
        Command::Fit(a) => run_fit(cli, a),
        Command::Residual(a) => run_residual(cli, a),
    }
}

fn load_experiment(cli: &Cli) -> anyhow::Result<Experiment> {
    let cfg = match (&cli.config, cli.preset) {
        (Some(_), Some(_)) => bail!("--config and --preset are mutually exclusive"),
        (Some(path), None) => ExperimentConfig::load(path)?,
        (None, Some(p)) => ExperimentConfig::from_preset(p),
        (None, None) => bail!("give --config PATH or --preset NAME"),
    };
    let mut exp = cfg.resolve()?;
    if let Some(spp) = cli.steps_per_period {
        exp.config.steps_per_period = spp as usize;
    }
    if let Some(h) = cli.horizon {
        exp.config.horizon = h;
    }
    if let Some(out) = &cli.out {
        exp.output.dir = out.to_string_lossy().into_owned();
    }
    exp.config.validate()?;
    Ok(exp)
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn run_simulate(cli: &Cli) -> CmdResult {
    let exp = load_experiment(cli)?;
    let dir = PathBuf::from(&exp.output.dir);
    ensure_dir(&dir)?;
    let x_star = exp.config.model.minimizer();
    let seed = cli.seed.unwrap_or(0);
    let many = exp.initial_states.len() > 1;
    let mut unexpected_divergence = false;

    for (j, x0) in exp.initial_states.iter().enumerate() {
        let mut cfg = exp.config.clone();
        cfg.x0 = x0.clone();
        let suffix = if many {
            format!("_{}", j + 1)
        } else {
            String::new()
        };
        let speed = initial_speed(&cfg)?;
        let traj = simulate(&cfg)?;
        if traj.diverged_at.is_some() && !cfg.divergence_expected {
            unexpected_divergence = true;
        }

        let env = envelope(&traj, &x_star, exp.analysis.envelope_window)?;
        let comparison = compare_models(&env, &exp.analysis.fit_options());
        let late = exp
            .analysis
            .late_window
            .map(|w| fit_polynomial(&env, Some(w)));

        // spot check J > J* on a box around the minimizer reaching x0
        let reach = x0
            .iter()
            .zip(&x_star)
            .map(|(a, b)| (a - b).abs())
            .fold(1.0, f64::max);
        let domain = BoxDomain::new(
            x_star.iter().map(|v| v - reach).collect(),
            x_star.iter().map(|v| v + reach).collect(),
        )?;
        let spot_failures = spot_check_minimum(&cfg.model, &domain, 1000, seed).len();

        let report = RunReport {
            exp: &exp,
            cfg: &cfg,
            traj: &traj,
            x_star: &x_star,
            initial_speed: speed,
            env: &env,
            comparison: comparison.as_ref().ok(),
            comparison_error: comparison.as_ref().err().map(|e| e.to_string()),
            late: late.as_ref().and_then(|r| r.as_ref().ok()),
            late_error: late
                .as_ref()
                .and_then(|r| r.as_ref().err())
                .map(|e| e.to_string()),
            seed,
            spot_failures,
        };
        report.write_all(&dir, &suffix)?;
        print!("{}", report.summary());
    }

    if unexpected_divergence {
        return Err(Failure {
            code: EXIT_DIVERGED,
            error: anyhow!("trajectory diverged (|x| > 1e12 or non-finite)"),
        });
    }
    Ok(0)
}

fn run_certify(cli: &Cli, a: &CertifyArgs) -> CmdResult {
    let mut spec = design_dithers(a.order, a.kappa, a.epsilon, SplitRule::EqualMagnitude)?;
    if a.break_frequency {
        let broken = if a.order > 1 { a.order - 1 } else { 2 };
        spec.pairs[0].second.frequency_multiple = broken;
    }
    let max_len = a.max_len.unwrap_or(a.order as usize + 1);
    let cert = certify_excitation_with(&spec, max_len, a.grid)?;

    let pair = &spec.pairs[0];
    let (w1, w2) = (UnitWave::from(&pair.first), UnitWave::from(&pair.second));
    let n = a.order as usize;
    let mut closed_ok = true;
    println!(
        "closed-form I_(k,N+1), N = {}, kappa = {}, eps = {}",
        a.order, a.kappa, a.epsilon
    );
    println!(
        "{:>3} {:>22} {:>22} {:>12}",
        "k", "quadrature", "closed form", "rel error"
    );
    let mut closed_csv = String::from("k,quadrature,closed_form,rel_error,pass\n");
    for k in 0..=n {
        let mut channels = vec![w1; n + 1];
        channels[n - k] = w2;
        let req = IntegralRequest {
            channels,
            epsilon: a.epsilon,
            grid_points: a.grid,
        };
        let q = iterated_integral(&req)?;
        let c = closed_form_i(k, n, a.kappa, a.epsilon)?;
        let rel = ((q - c) / c).abs();
        let pass = rel <= lie_es::integrals::COLLAPSE_RTOL;
        closed_ok &= pass;
        println!(
            "{k:>3} {q:>22.14e} {c:>22.14e} {rel:>12.3e}{}",
            if pass { "" } else { "  FAIL" }
        );
        closed_csv.push_str(&format!("{k},{q:.16e},{c:.16e},{rel:.6e},{pass}\n"));
    }

    let dir = out_dir(cli);
    ensure_dir(&dir)?;
    fs::write(dir.join("certify.csv"), cert.to_csv())?;
    fs::write(dir.join("closed_form.csv"), closed_csv)?;

    let checked = cert
        .rows
        .iter()
        .filter(|r| r.check != lie_es::integrals::CheckKind::Info)
        .count();
    println!(
        "{} words integrated, {checked} checked; certificate written to {}",
        cert.rows.len(),
        dir.join("certify.csv").display()
    );
    if let Some(w) = &cert.worst {
        println!(
            "worst word {} ({:?}): error {:.3e} vs bound {:.1e}",
            w.word, w.check, w.error, w.bound
        );
    }
    if cert.passes && closed_ok {
        println!("certified");
        Ok(0)
    } else {
        let worst = cert.worst.map(|w| w.word).unwrap_or_default();
        Err(Failure {
            code: EXIT_CHECK,
            error: anyhow!("design not certified; worst offending word {worst}"),
        })
    }
}

fn run_resonance(a: &ResonanceArgs) -> CmdResult {
    match check_nonresonance_with_cap(&a.kappa, a.order, a.cap) {
        Ok(report) => {
            println!(
                "kappa = {:?}, N = {}: {} tuples enumerated",
                a.kappa, a.order, report.visited
            );
            match report.witness {
                None => {
                    println!("non-resonant");
                    Ok(0)
                }
                Some(w) => {
                    let mu: Vec<i64> = w.iter().map(|p| p.0).collect();
                    let nu: Vec<i64> = w.iter().map(|p| p.1).collect();
                    println!("resonant: witness mu = {mu:?}, nu = {nu:?}");
                    Ok(EXIT_CHECK)
                }
            }
        }
        Err(e @ Error::Infeasible { .. }) => Err(Failure {
            code: EXIT_USAGE,
            error: e.into(),
        }),
        Err(e) => Err(e.into()),
    }
}

fn window_pair(v: &Option<Vec<f64>>) -> Option<(f64, f64)> {
    v.as_ref().map(|w| (w[0], w[1]))
}

fn run_fit(cli: &Cli, a: &FitArgs) -> CmdResult {
    let file = fs::File::open(&a.trajectory)
        .with_context(|| format!("cannot open {}", a.trajectory.display()))?;
    let exp = if cli.config.is_some() || cli.preset.is_some() {
        Some(load_experiment(cli)?)
    } else {
        None
    };
    let traj = Trajectory::read_csv(BufReader::new(file), 0.0)?;
    if traj.is_empty() {
        return Err(anyhow!("trajectory has no samples").into());
    }
    let x_star = match (&a.x_star, &exp) {
        (Some(x), _) => x.clone(),
        (None, Some(e)) => e.config.model.minimizer(),
        (None, None) => return Err(anyhow!("give --x-star, --config or --preset").into()),
    };
    if x_star.len() != traj.dimension {
        return Err(anyhow!(
            "--x-star has {} entries for a {}-dimensional trajectory",
            x_star.len(),
            traj.dimension
        )
        .into());
    }
    let mut analysis = exp
        .as_ref()
        .map(|e| e.analysis.clone())
        .unwrap_or_else(AnalysisSection::default);
    if let Some(w) = a.window {
        analysis.envelope_window = w;
    }
    if let Some(q) = a.floor_quantile {
        analysis.floor_quantile = q;
    }
    if a.fit_window.is_some() {
        analysis.fit_window = window_pair(&a.fit_window);
    }
    if a.late_window.is_some() {
        analysis.late_window = window_pair(&a.late_window);
    }
    let errors: Vec<f64> = (0..traj.len()).map(|i| traj.distance(i, &x_star)).collect();
    let env = envelope_of(&traj.times, &errors, analysis.envelope_window)?;
    let opts: FitOptions = analysis.fit_options();

    let dir = out_dir(cli);
    ensure_dir(&dir)?;
    fs::write(dir.join("envelope.csv"), artifacts::envelope_csv(&env))?;
    let mut csv = format!("fit,{}\n", lie_es::DecayFit::CSV_HEADER);
    let mut status = 0;
    match compare_models(&env, &opts) {
        Ok(cmp) => {
            print!("{}", lie_es::analysis::fit_summary(&cmp));
            csv.push_str(&format!("exponential,{}\n", cmp.exponential.csv_row()));
            csv.push_str(&format!("polynomial,{}\n", cmp.polynomial.csv_row()));
        }
        Err(e) => {
            println!("exponential fit: {e}");
            status = EXIT_CHECK;
        }
    }
    if let Some(w) = analysis.late_window {
        match fit_polynomial(&env, Some(w)) {
            Ok(f) => {
                println!(
                    "late window [{}, {}]: slope = {:.6}, R^2 = {:.6}",
                    w.0, w.1, f.rate, f.r_squared
                );
                csv.push_str(&format!("late_polynomial,{}\n", f.csv_row()));
            }
            Err(e) => {
                println!("late window fit: {e}");
                status = EXIT_CHECK;
            }
        }
    }
    fs::write(dir.join("fit.csv"), csv)?;
    Ok(status)
}

fn run_residual(cli: &Cli, a: &ResidualArgs) -> CmdResult {
    let exp = load_experiment(cli)?;
    let base = exp.config.clone();
    let x0 = a.x0.clone().unwrap_or_else(|| base.x0.clone());
    let configs: Vec<_> = a
        .epsilon
        .iter()
        .map(|&eps| {
            let mut c = base.clone();
            c.spec.epsilon = eps;
            c.horizon = c.horizon.max(eps);
            c
        })
        .collect();
    let report = match residual_order(&configs, &x0) {
        Ok(r) => r,
        Err(e @ Error::NotMeasurable { .. }) => {
            return Err(Failure {
                code: EXIT_CHECK,
                error: e.into(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let n = base.order();
    let expected = 1.0 + 1.0 / f64::from(n + 1);
    println!("{:>12} {:>22} {:>12}", "epsilon", "residual", "floor");
    for p in &report.points {
        println!(
            "{:>12.3e} {:>22.14e} {:>12.3e}",
            p.epsilon, p.delta, p.floor
        );
    }
    println!(
        "order = {:.4} (bound 1 + 1/(N+1) = {expected:.4}, accepted down to {:.4})",
        report.order,
        expected - 0.15
    );
    let dir = PathBuf::from(&exp.output.dir);
    ensure_dir(&dir)?;
    fs::write(dir.join("residual.csv"), report.to_csv())?;
    if report.order >= expected - 0.15 {
        Ok(0)
    } else {
        Ok(EXIT_CHECK)
    }
}
