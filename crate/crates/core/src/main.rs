use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use radmag::control::{optimize, read_sequence, ControlProblem, Evaluation, OptimizerSettings};
use radmag::dynamics::{conditional_singlet_probability, propagate, IntegratorConfig};
use radmag::metrology::{self, MetrologySettings};
use radmag::model::{ModelConfig, ModulationSpec, PiecewiseTrajectory, RadicalPairModel};
use radmag::sweep::{self, Axis, FilterMode, GridSpec, Sidecar, Sweep, SweepSpec, ORIENTATION_COLUMNS};
use radmag::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "radmag", version, about = "Radical-pair magnetometry under interradical motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Propagate one orientation and print yields and the conservation residual.
    Simulate(SimulateArgs),
    /// Sweep driving frequency and exchange, evaluating an orientation grid per cell.
    Sweep(SweepArgs),
    /// Optimize a piecewise-constant displacement sequence for yield contrast.
    Control(ControlArgs),
    /// Fisher information and QCRB ratio over an orientation grid.
    Metrology(MetrologyArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Model configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override J0/2π in MHz.
    #[arg(long, allow_hyphen_values = true)]
    j0: Option<f64>,
    /// Override the random-field relaxation rate γ (µs⁻¹).
    #[arg(long)]
    rfr_gamma: Option<f64>,
    /// Switch off the dipolar coupling.
    #[arg(long)]
    no_dipolar: bool,
    /// Switch off the exchange coupling.
    #[arg(long)]
    no_exchange: bool,
    /// Worker threads.
    #[arg(long, env = "RADMAG_WORKERS")]
    workers: Option<usize>,
}

#[derive(Args, Debug)]
struct DriveArgs {
    /// Harmonic driving frequency in MHz (0 = undriven). Defaults to the config's [drive].
    #[arg(long)]
    nu: Option<f64>,
    /// Driving amplitude Δ_d in Å.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    drive: DriveArgs,
    /// Polar angle θ in rad.
    #[arg(long, default_value_t = 0.0)]
    theta: f64,
    /// Azimuth φ in rad.
    #[arg(long, default_value_t = 0.0)]
    phi: f64,
    /// Displacement sequence (as written by `control`) instead of a harmonic drive.
    #[arg(long, conflicts_with = "nu")]
    sequence: Option<PathBuf>,
    /// Segment duration in ns for a sequence file without time stamps.
    #[arg(long)]
    segment_ns: Option<f64>,
    /// Write the per-step trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1.0)]
    nu_min: f64,
    #[arg(long, default_value_t = 10.0)]
    nu_max: f64,
    #[arg(long, default_value_t = 10)]
    nu_count: usize,
    /// Logarithmic ν spacing.
    #[arg(long)]
    nu_log: bool,
    /// J0/2π lower bound in MHz.
    #[arg(long, default_value_t = -20.0, allow_hyphen_values = true)]
    j_min: f64,
    #[arg(long, default_value_t = 20.0, allow_hyphen_values = true)]
    j_max: f64,
    #[arg(long, default_value_t = 10)]
    j_count: usize,
    /// Orientation grid NxM (θ points × φ points).
    #[arg(long, default_value = "19x1")]
    grid: GridSpec,
    /// Driving amplitude Δ_d in Å.
    #[arg(long, default_value_t = 3.0)]
    delta: f64,
    /// none | anisotropy-maintained | anisotropy-threshold[:fraction]
    #[arg(long, default_value = "none")]
    filter: FilterMode,
    #[arg(long)]
    out: PathBuf,
    /// Completed-row checkpoint; an existing one is resumed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Reserved; the computation is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ControlArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of control segments M.
    #[arg(long, default_value_t = 1000)]
    segments: usize,
    /// Segment duration δt in ns.
    #[arg(long, default_value_t = 1.0)]
    segment_ns: f64,
    /// Displacement bound in Å.
    #[arg(long, default_value_t = 3.0)]
    u_max: f64,
    /// Smoothness weight λ (Å⁻²).
    #[arg(long, default_value_t = ControlProblem::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Grid whose static-yield extrema define the two target orientations.
    #[arg(long, default_value = "19x1")]
    grid: GridSpec,
    /// Start from the best harmonic shape instead of u = 0.
    #[arg(long)]
    warm_start: bool,
    /// Harmonic comparison scan: lowest ν in MHz.
    #[arg(long, default_value_t = 1.0)]
    nu_min: f64,
    #[arg(long, default_value_t = 10.0)]
    nu_max: f64,
    #[arg(long, default_value_t = 10)]
    nu_count: usize,
    /// Output directory for sequence.csv, history.csv and comparison.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetrologyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    drive: DriveArgs,
    #[arg(long, default_value = "19x1")]
    grid: GridSpec,
    /// Per-orientation results (CSV).
    #[arg(long)]
    out: Option<PathBuf>,
}

struct Loaded {
    config: ModelConfig,
    model: RadicalPairModel,
    integrator: IntegratorConfig,
}

impl ModelArgs {
    fn load(&self) -> radmag::Result<Loaded> {
        let config = ModelConfig::from_path(&self.config)?;
        let mut model = config.to_model()?;
        if let Some(j) = self.j0 {
            model = model.with_j0_mhz(j);
        }
        if let Some(g) = self.rfr_gamma {
            model.relaxation = g;
        }
        model.geometry.dipolar &= !self.no_dipolar;
        model.geometry.exchange &= !self.no_exchange;
        let model = RadicalPairModel::new(model.system, model.geometry, model.rates, model.relaxation, model.b0_ut)?;
        let integrator = match &config.integrator {
            Some(section) => IntegratorConfig::from_section(section)?,
            None => IntegratorConfig::default(),
        };
        Ok(Loaded {
            config,
            model,
            integrator,
        })
    }

    fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    fn init_pool(&self) {
        // Fails only if already initialized, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers())
            .build_global();
    }
}

impl DriveArgs {
    fn modulation(&self, config: &ModelConfig) -> radmag::Result<ModulationSpec> {
        let configured = config.modulation();
        let (nu, delta) = match configured {
            ModulationSpec::Harmonic { nu_mhz, delta_a } => (nu_mhz, delta_a),
            _ => (0.0, 3.0),
        };
        sweep::drive(self.nu.unwrap_or(nu), self.delta.unwrap_or(delta))
    }
}

fn create(path: &Path) -> radmag::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn simulate(args: &SimulateArgs) -> radmag::Result<()> {
    let loaded = args.model.load()?;
    let modulation = match &args.sequence {
        Some(path) => {
            let (u, stamped) = read_sequence(BufReader::new(File::open(path)?))?;
            let segment_us = args
                .segment_ns
                .map(|ns| ns * 1e-3)
                .or(stamped)
                .ok_or_else(|| Error::Config("sequence without time stamps needs --segment-ns".into()))?;
            let bound = u.iter().copied().fold(0.0, f64::max);
            ModulationSpec::Piecewise(PiecewiseTrajectory::new(segment_us, u, bound)?)
        }
        None => args.drive.modulation(&loaded.config)?,
    };
    let field = loaded.model.field(args.theta, args.phi)?;
    let mut integrator = loaded.integrator.clone();
    integrator.record_series = args.trace.is_some();
    let res = propagate(&loaded.model, &field, &modulation, &integrator)?;
    let sigma = res.steady_state()?;
    println!("singlet_yield          {:.8e}", res.singlet_yield);
    println!("singlet_probability    {:.8e}", conditional_singlet_probability(&sigma)?);
    println!("conservation_residual  {:.3e}", res.conservation_residual());
    println!("final_trace            {:.3e}", res.final_trace);
    println!("dt_us                  {:.6e}", res.dt);
    println!("steps                  {}", res.steps);
    if !res.conserves_probability() {
        eprintln!("warning: probability conservation violated");
    }
    if let Some(path) = &args.trace {
        let mut w = create(path)?;
        res.write_trace(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> radmag::Result<()> {
    let loaded = args.model.load()?;
    let spec = SweepSpec {
        nu: Axis::new(args.nu_min, args.nu_max, args.nu_count, args.nu_log)?,
        j: Axis::new(args.j_min, args.j_max, args.j_count, false)?,
        grid: args.grid,
        dipolar: loaded.model.geometry.dipolar,
        exchange: loaded.model.geometry.exchange,
        rfr_gamma: loaded.model.relaxation,
        delta_a: args.delta,
        filter: args.filter,
    };
    let settings = MetrologySettings {
        integrator: loaded.integrator.clone().without_series(),
        ..MetrologySettings::default()
    };
    let sweep = Sweep::new(&loaded.model, spec, settings, loaded.config.hash())?;
    let summary = sweep.run(args.model.workers(), &args.out, args.checkpoint.as_deref())?;
    println!(
        "{} rows written to {} ({} resumed)",
        summary.rows,
        args.out.display(),
        summary.resumed
    );
    if let Some(g) = summary.reference_gamma {
        println!("reference anisotropy   {g:.8e}");
    }
    Ok(())
}

fn write_comparison(path: &Path, rows: &[(&str, Option<f64>, Evaluation)]) -> radmag::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "kind,nu_MHz,phi_max,phi_min,contrast,gamma")?;
    for (kind, nu, e) in rows {
        let nu = nu.map_or_else(|| sweep::ABSENT.to_string(), |v| format!("{v:.8e}"));
        writeln!(
            w,
            "{kind},{nu},{:.8e},{:.8e},{:.8e},{:.8e}",
            e.phi_max,
            e.phi_min,
            e.contrast(),
            e.gamma()
        )?;
    }
    w.flush()?;
    Ok(())
}

fn control(args: &ControlArgs) -> radmag::Result<()> {
    args.model.init_pool();
    let loaded = args.model.load()?;
    let grid = args.grid.grid()?;
    let problem = ControlProblem::from_static_extrema(
        loaded.model.clone(),
        &grid,
        args.segments,
        args.segment_ns * 1e-3,
        args.u_max,
        args.lambda,
    )?
    .with_integrator(loaded.integrator.clone())?;
    let nus = Axis::new(args.nu_min, args.nu_max, args.nu_count, args.nu_min > 0.0)?.values();
    let statics = problem.evaluate(&vec![0.0; args.segments])?;
    let scan = problem.harmonic_scan(&nus)?;
    let (best_nu, best) = scan
        .iter()
        .cloned()
        .reduce(|a, b| if b.1.contrast() > a.1.contrast() { b } else { a })
        .ok_or_else(|| Error::Config("empty harmonic scan".into()))?;
    let initial = if args.warm_start {
        problem.warm_start(&nus)?.displacements
    } else {
        vec![0.0; args.segments]
    };
    let settings = OptimizerSettings {
        max_iters: args.max_iters,
        ..OptimizerSettings::default()
    };
    let result = optimize(&problem, &initial, &settings)?;

    std::fs::create_dir_all(&args.out)?;
    let mut w = create(&args.out.join("sequence.csv"))?;
    result.write_sequence(&mut w)?;
    w.flush()?;
    let mut w = create(&args.out.join("history.csv"))?;
    result.write_history(&mut w)?;
    w.flush()?;
    let comparison = args.out.join("comparison.csv");
    write_comparison(
        &comparison,
        &[
            ("static", None, statics),
            ("driven", Some(best_nu), best),
            ("controlled", None, result.last),
        ],
    )?;
    let meta = serde_json::json!({
        "segments": args.segments,
        "segment_us": problem.segment_us(),
        "u_max": args.u_max,
        "lambda": args.lambda,
        "dt_us": problem.dt(),
        "iterations": result.iterations,
        "converged": result.converged,
        "stagnated": result.stagnated,
        "warm_start": args.warm_start,
    });
    let columns = ["kind", "nu_MHz", "phi_max", "phi_min", "contrast", "gamma"];
    let mut sidecar = Sidecar::new("control", loaded.config.hash(), &columns, 3);
    sidecar.extra = Some(meta);
    sidecar.write(&comparison)?;

    println!("static contrast        {:.8e}", statics.contrast());
    println!("best harmonic contrast {:.8e} (nu = {best_nu} MHz)", best.contrast());
    println!("controlled contrast    {:.8e}", result.contrast());
    println!("controlled anisotropy  {:.8e}", result.gamma());
    println!(
        "iterations {} converged {} stagnated {}",
        result.iterations, result.converged, result.stagnated
    );
    if result.stagnated {
        eprintln!("note: the optimizer found no ascent direction from the initial sequence");
    }
    Ok(())
}

fn run_metrology(args: &MetrologyArgs) -> radmag::Result<()> {
    args.model.init_pool();
    let loaded = args.model.load()?;
    let modulation = args.drive.modulation(&loaded.config)?;
    let settings = MetrologySettings {
        integrator: loaded.integrator.clone().without_series(),
        ..MetrologySettings::default()
    };
    let report = metrology::evaluate(&loaded.model, &modulation, &args.grid.grid()?, &settings)?;
    match report.anisotropy {
        Some(a) => println!("anisotropy             {:.8e}", a.gamma),
        None => println!("anisotropy             {}", sweep::ABSENT),
    }
    match report.max_ratio {
        Some((r, i)) => {
            let p = &report.points[i];
            println!("max ratio              {r:.8e} at theta {:.6} phi {:.6}", p.theta, p.phi);
        }
        None => println!("max ratio              {}", sweep::ABSENT),
    }
    if let Some(m) = report.mean_ratio {
        println!("mean ratio             {m:.8e}");
    }
    println!("max cfi                {:.8e}", report.max_cfi);
    println!("max qfi                {:.8e}", report.max_qfi);
    for (n, dtheta) in &report.precision {
        println!("angular precision      {dtheta:.4} deg at N = {n:.3e}");
    }
    let flagged = report
        .points
        .iter()
        .filter(|p| p.flags.non_conserving || p.flags.non_converged || p.flags.clamped)
        .count();
    if flagged > 0 {
        eprintln!("warning: {flagged} orientation(s) flagged");
    }
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        sweep::write_orientations(&mut w, &report)?;
        w.flush()?;
        Sidecar::new("orientations", loaded.config.hash(), &ORIENTATION_COLUMNS, report.points.len()).write(path)?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::ModelConfig(_)
        | Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidMultiplicity(_)
        | Error::UnsupportedSystem(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Control(a) => control(a),
        Command::Metrology(a) => run_metrology(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
