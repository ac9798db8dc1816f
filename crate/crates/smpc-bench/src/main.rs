//! `smpc` command line: run benchmark scenarios and write result files.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smpc_bench::scenario::{
    fmt_g17, write_outputs, ApproxKind, Benchmark, MethodKind, ReprKind, RunMode, Scenario,
};
use smpc_bench::{chain, cstr, pendulum, watertank, BenchError};

#[derive(Parser)]
#[command(
    name = "smpc",
    about = "Stochastic model predictive control benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one benchmark scenario.
    Run(RunArgs),
    /// Lists the available benchmarks and option values.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// Benchmark to run.
    benchmark: Benchmark,
    /// JSON config file mirroring these flags; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Representation of the stochastic OCP.
    #[arg(long)]
    repr: Option<ReprKind>,
    /// Uncertainty propagation method.
    #[arg(long)]
    method: Option<MethodKind>,
    /// Constraint tightening assumption.
    #[arg(long)]
    approx: Option<ApproxKind>,
    /// Open- or closed-loop evaluation (reactor benchmark).
    #[arg(long)]
    mode: Option<RunMode>,
    /// Base seed for all noise streams.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte-Carlo rollout count.
    #[arg(long)]
    rollouts: Option<usize>,
    /// Output directory for trajectory.csv, rollouts.csv, timing.csv and
    /// meta.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of chain elements (chain benchmark).
    #[arg(long)]
    chain_n: Option<usize>,
    /// GP training points for the closed-loop tank run.
    #[arg(long)]
    gp_points: Option<usize>,
    /// Benchmark-specific noise variance.
    #[arg(long)]
    noise_var: Option<f64>,
    /// Simulation duration in seconds.
    #[arg(long)]
    sim_duration: Option<f64>,
    /// Sampling interval in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Prediction horizon in seconds.
    #[arg(long)]
    horizon: Option<f64>,
    /// OCP grid points.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Monte-Carlo propagation samples.
    #[arg(long)]
    mc_points: Option<usize>,
    /// Quadrature order d.
    #[arg(long)]
    quad_order: Option<usize>,
    /// PCE basis size M.
    #[arg(long)]
    pce_order: Option<usize>,
    /// Timing warm-up steps excluded from averages.
    #[arg(long)]
    warmup_steps: Option<usize>,
}

impl RunArgs {
    /// Scenario from config-file defaults overridden by explicit flags.
    fn resolve(&self) -> Result<Scenario, BenchError> {
        let mut s = match &self.config {
            Some(path) => Scenario::from_json_file(path)?,
            None => Scenario::default_for(self.benchmark),
        };
        s.benchmark = self.benchmark;
        if let Some(v) = self.repr {
            s.repr = v;
        }
        if let Some(v) = self.method {
            s.method = v;
        }
        if let Some(v) = self.approx {
            s.approx = v;
        }
        if let Some(v) = self.mode {
            s.mode = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.rollouts {
            s.rollouts = v;
        }
        if let Some(v) = &self.out {
            s.out = Some(v.clone());
        }
        if let Some(v) = self.chain_n {
            s.chain_n = v;
        }
        if let Some(v) = self.gp_points {
            s.gp_points = v;
        }
        if let Some(v) = self.noise_var {
            s.noise_var = Some(v);
        }
        if let Some(v) = self.sim_duration {
            s.sim_duration = Some(v);
        }
        if let Some(v) = self.dt {
            s.dt = Some(v);
        }
        if let Some(v) = self.horizon {
            s.horizon = Some(v);
        }
        if let Some(v) = self.grid_points {
            s.grid_points = Some(v);
        }
        if let Some(v) = self.mc_points {
            s.mc_points = v;
        }
        if let Some(v) = self.quad_order {
            s.quad_order = v;
        }
        if let Some(v) = self.pce_order {
            s.pce_order = v;
        }
        if let Some(v) = self.warmup_steps {
            s.warmup_steps = v;
        }
        s.validate()?;
        s.representation()?;
        Ok(s)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            list();
            ExitCode::SUCCESS
        }
        Command::Run(args) => {
            let scenario = match args.resolve() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run(&scenario) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}

fn list() {
    println!("benchmarks:");
    println!("  cstr       reactor with uncertain rates; open-loop rollouts or closed loop");
    println!("  chain      scalable spring chain; per-step timing study (--chain-n 2..14)");
    println!("  watertank  learned outflow via GP; two noise cases plus GP timing sweep");
    println!("  pendulum   cart-pendulum setpoint change with Kalman-filtered feedback");
    println!();
    println!("representations: sr | mr-taylor | mr-sampling");
    println!("methods:         taylor | stirling1 | stirling2 | ut | quad | mc | pce");
    println!("tightening:      chebyshev | symmetric | gaussian");
    println!("modes (cstr):    open-loop | closed-loop");
}

fn run(scenario: &Scenario) -> Result<(), BenchError> {
    let meta = serde_json::to_value(scenario)?;
    match scenario.benchmark {
        Benchmark::Cstr => match scenario.mode {
            RunMode::OpenLoop => {
                let out = cstr::run_open_loop(scenario)?;
                println!(
                    "cstr open loop: setpoint cA={} cB={} u={}",
                    fmt_g17(out.x_des[0]),
                    fmt_g17(out.x_des[1]),
                    fmt_g17(out.u_des)
                );
                println!(
                    "q90 peak of c_B over {} rollouts: {}",
                    out.rollouts.states.len(),
                    fmt_g17(out.q90_peak)
                );
                if let Some(dir) = &scenario.out {
                    write_outputs(dir, &meta, Some(&out.prediction), Some(&out.rollouts), None)?;
                    println!("results written to {}", dir.display());
                }
            }
            RunMode::ClosedLoop => {
                let out = cstr::run_closed_loop(scenario)?;
                println!(
                    "cstr closed loop: {} rollouts, min margin to c_B bound {}",
                    out.rollouts.states.len(),
                    fmt_g17(out.min_margin)
                );
                println!("mean step time: {:.3} ms", out.timing.mean_seconds() * 1e3);
                if let Some(dir) = &scenario.out {
                    write_outputs(
                        dir,
                        &meta,
                        Some(&out.trajectory),
                        Some(&out.rollouts),
                        Some(&out.timing),
                    )?;
                    println!("results written to {}", dir.display());
                }
            }
        },
        Benchmark::Chain => match chain::run(scenario)? {
            chain::ChainOutput::Completed {
                trajectory,
                timing,
                nx,
            } => {
                println!(
                    "chain n={} ({nx} states): mean step time {:.3} ms",
                    scenario.chain_n,
                    timing.mean_seconds() * 1e3
                );
                if let Some(dir) = &scenario.out {
                    write_outputs(dir, &meta, Some(&trajectory), None, Some(&timing))?;
                    println!("results written to {}", dir.display());
                }
            }
            chain::ChainOutput::Skipped { reason } => {
                println!("chain n={} skipped: {reason}", scenario.chain_n);
            }
        },
        Benchmark::Watertank => {
            let out = watertank::run(scenario)?;
            for (nv, run) in &out.cases {
                println!(
                    "watertank noise_var={nv:e}: min margin to h_max {}",
                    fmt_g17(run.min_margin)
                );
            }
            println!("gp timing sweep (points, s/step):");
            for (m, secs) in &out.gp_timing {
                println!("  {m:>6}  {secs:.6}");
            }
            if let Some(dir) = &scenario.out {
                let (_, first) = &out.cases[0];
                write_outputs(
                    dir,
                    &meta,
                    Some(&first.trajectory),
                    None,
                    Some(&first.timing),
                )?;
                println!("results written to {}", dir.display());
            }
        }
        Benchmark::Pendulum => {
            let out = pendulum::run(scenario)?;
            println!(
                "pendulum: max x_c {} final x_c {} final alpha {}",
                fmt_g17(out.max_xc),
                fmt_g17(out.final_xc),
                fmt_g17(out.final_alpha)
            );
            println!("mean step time: {:.3} ms", out.timing.mean_seconds() * 1e3);
            if let Some(dir) = &scenario.out {
                write_outputs(dir, &meta, Some(&out.trajectory), None, Some(&out.timing))?;
                println!("results written to {}", dir.display());
            }
        }
    }
    Ok(())
}
