use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amod_core::model::Config;
use amod_core::policy::{
    avg_cost_closed, avg_cost_from_distribution, optimal_battery, plan_rebalancing,
    stationary_distribution, thresholds_general, thresholds_uniform, ChargingPolicy,
    QuadratureOpts,
};
use amod_core::sim::{brute_force_threshold_search, simulate_policy};
use amod_core::{flow, FleetSpec, PriceDistribution, SimConfig};
use amod_xp::experiments::{self, ExperimentConfig, ExperimentId};
use amod_xp::network::{generate_network, DemandOpts};
use amod_xp::plot::emit_plot;
use amod_xp::{fmt_sig, Result};

/// Pricing, routing and smart charging for electric mobility-on-demand fleets.
#[derive(Parser)]
#[command(name = "amod", version)]
struct Cli {
    /// TOML file with optional [network], [fleet], [prices] and [sim] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides [sim].seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = "AMOD_OUT_DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random network as a config file.
    Gen {
        #[arg(long, default_value_t = 10)]
        m: usize,
    },
    /// Solve the pricing and routing problem for the configured network.
    Solve {
        /// Interior-point iteration budget.
        #[arg(long, default_value_t = 200)]
        max_iter: usize,
    },
    /// Charging-policy calculations.
    #[command(subcommand)]
    Policy(PolicyCmd),
    /// Monte Carlo simulation.
    #[command(subcommand)]
    Sim(SimCmd),
    /// Reproduce a result figure.
    #[command(subcommand)]
    Exp(ExpCmd),
    /// Render an SVG from a result CSV.
    Plot {
        csv: PathBuf,
    },
}

#[derive(Subcommand)]
enum PolicyCmd {
    /// Charge thresholds C_0..C_vmax.
    Thresholds,
    /// Average price per unit, closed form and from the stationary density.
    Pavg,
    /// Optimal battery capacity.
    Battery,
    /// Rebalancing cost and optimal share charged at regular nodes.
    Rebalance,
}

#[derive(Subcommand)]
enum SimCmd {
    /// Simulate the threshold policy.
    Policy,
    /// Sweep the rebalancing probability.
    Rebalance,
    /// Exhaustive threshold search (v_max <= 4).
    Brute {
        #[arg(long, default_value_t = 21)]
        grid: usize,
    },
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Number of random networks.
    #[arg(long)]
    networks: Option<usize>,
    /// Nodes per network.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    v_min: Option<u32>,
    #[arg(long)]
    v_max: Option<u32>,
    /// Skip the SVG.
    #[arg(long)]
    no_plot: bool,
}

#[derive(Subcommand)]
enum ExpCmd {
    /// Profit and prices against battery capacity
    FigA(SweepArgs),
    /// Rebalancing vehicles per customer trip against battery capacity
    FigB(SweepArgs),
    /// Average charging cost against rebalancing intensity
    FigC {
        #[arg(long)]
        no_plot: bool,
    },
}

struct Ctx {
    config: Config,
    seed: Option<u64>,
    out: PathBuf,
}

impl Ctx {
    fn fleet(&self) -> FleetSpec {
        self.config.fleet.clone().unwrap_or_else(|| ExperimentConfig::default().fleet)
    }

    fn prices(&self) -> PriceDistribution {
        self.config.prices.clone().unwrap_or(PriceDistribution::uniform(0.8, 3.0))
    }

    fn uniform_support(&self) -> Result<(f64, f64)> {
        match self.prices() {
            PriceDistribution::Uniform { p_min, p_max } => Ok((p_min, p_max)),
            PriceDistribution::Tabulated { .. } => Err(amod_core::Error::Validation(vec![
                "this command needs uniform prices".into(),
            ])
            .into()),
        }
    }

    fn sim(&self) -> SimConfig {
        let fleet = self.fleet();
        let mut sim = self.config.sim.unwrap_or(SimConfig {
            seed: 1,
            horizon: 200_000,
            replicates: 64,
            burn_in: SimConfig::default_burn_in(fleet.tau, fleet.v_max),
        });
        if let Some(seed) = self.seed {
            sim.seed = seed;
        }
        sim
    }

    fn policy(&self) -> Result<ChargingPolicy> {
        let fleet = self.fleet();
        Ok(match self.prices() {
            PriceDistribution::Uniform { p_min, p_max } => {
                thresholds_uniform(p_min, p_max, fleet.v_max, fleet.tau)?
            }
            dist => thresholds_general(&dist, fleet.v_max, fleet.tau, &QuadratureOpts::default())?,
        })
    }

    fn experiment(&self, id: ExperimentId) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig {
            experiment: id,
            out_dir: self.out.clone(),
            fleet: self.fleet(),
            sim: self.sim(),
            ..ExperimentConfig::default()
        };
        if self.config.prices.is_some() {
            cfg.price_support = self.uniform_support()?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        std::fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

fn print_kv(key: &str, value: f64) {
    println!("{key} = {}", fmt_sig(value, 12));
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    config.validate().into_result()?;
    let ctx = Ctx { config, seed: cli.seed, out: cli.out };

    match cli.command {
        Command::Gen { m } => {
            if m < 2 {
                return Err(amod_core::Error::Validation(vec![format!("m = {m} must be at least 2")]).into());
            }
            let (lo, hi) = ctx.uniform_support()?;
            let net = generate_network(m, (lo, hi), &DemandOpts::default(), ctx.seed.unwrap_or(1));
            let cfg = Config { network: Some(net), fleet: Some(ctx.fleet()), ..Config::default() };
            let path = ctx.out_dir()?.join("network.toml");
            std::fs::write(&path, cfg.to_toml_string()?)?;
            println!("{}", path.display());
        }
        Command::Solve { max_iter } => {
            let net = ctx.config.network.clone().ok_or_else(|| {
                amod_core::Error::Validation(vec!["config has no [network] section".into()])
            })?;
            let problem = flow::build_problem(&net, &ctx.fleet())?;
            let tol = flow::SolverTolerances { max_iter, ..Default::default() };
            let sol = flow::solve(&problem, &tol)?;
            flow::export::write_solution(ctx.out_dir()?, &problem, &sol)?;
            print_kv("profit", sol.profit);
            println!("iterations = {}", sol.iterations);
        }
        Command::Policy(cmd) => match cmd {
            PolicyCmd::Thresholds => {
                let policy = ctx.policy()?;
                for (v, c) in policy.thresholds.iter().enumerate() {
                    println!("C_{v} = {}", fmt_sig(*c, 12));
                }
            }
            PolicyCmd::Pavg => {
                let policy = ctx.policy()?;
                print_kv("p_avg", avg_cost_closed(&policy));
                if policy.distribution.is_uniform() {
                    let d = stationary_distribution(&policy)?;
                    print_kv("p_avg_stationary", avg_cost_from_distribution(&d, &policy));
                    print_kv("charging_mass", d.charging_mass());
                    print_kv("total_mass", d.total_mass());
                }
            }
            PolicyCmd::Battery => {
                let (lo, hi) = ctx.uniform_support()?;
                let choice = optimal_battery(ctx.fleet().xi, lo, hi)?;
                println!("v_star = {}", choice.v_star);
                print_kv("p_avg_continuous", choice.p_avg_continuous);
                print_kv("p_avg_integer", choice.p_avg_integer);
                print_kv("marginal_saving", choice.marginal_saving);
                println!("within_bound = {}", choice.within_bound);
            }
            PolicyCmd::Rebalance => {
                let (lo, hi) = ctx.uniform_support()?;
                let plan = plan_rebalancing(&ctx.fleet(), lo, hi)?;
                print_kv("b", plan.b);
                print_kv("p_avg", plan.p_avg);
                print_kv("n_star", plan.n_star);
                print_kv("p_avg_r", plan.p_avg_r);
            }
        },
        Command::Sim(cmd) => {
            let exec = amod_core::Execution::default();
            match cmd {
                SimCmd::Policy => {
                    let policy = ctx.policy()?;
                    let est = simulate_policy(&policy, &ctx.sim(), exec)?;
                    print_kv("p_avg", est.p_avg.mean);
                    print_kv("p_avg_ci_half", est.p_avg.ci_half);
                    print_kv("charging_fraction", est.charging_fraction.mean);
                    experiments::write_json(&ctx.out_dir()?.join("sim_policy.json"), &est)?;
                }
                SimCmd::Rebalance => {
                    let cfg = ctx.experiment(ExperimentId::Custom)?;
                    let sweep = experiments::gamma_sweep(&cfg)?;
                    let path = ctx.out_dir()?.join("sim_rebalance.csv");
                    experiments::write_sim(&path, &sweep)?;
                    println!("{}", path.display());
                }
                SimCmd::Brute { grid } => {
                    let policy = ctx.policy()?;
                    let res = brute_force_threshold_search(
                        &policy.distribution,
                        &policy,
                        grid,
                        &ctx.sim(),
                        exec,
                    )?;
                    let fmt = |v: &[f64]| v.iter().map(|c| fmt_sig(*c, 12)).collect::<Vec<_>>().join(",");
                    println!("best = [{}]", fmt(&res.best));
                    println!("reference = [{}]", fmt(&res.reference));
                    print_kv("best_cost", res.best_cost.mean);
                    print_kv("reference_cost", res.reference_cost.mean);
                    print_kv("advantage", res.advantage.mean);
                    print_kv("advantage_ci_half", res.advantage.ci_half);
                    experiments::write_json(&ctx.out_dir()?.join("sim_brute.json"), &res)?;
                }
            }
        }
        Command::Exp(cmd) => {
            let (id, args, no_plot) = match &cmd {
                ExpCmd::FigA(a) => (ExperimentId::FigA, Some(a.clone()), a.no_plot),
                ExpCmd::FigB(a) => (ExperimentId::FigB, Some(a.clone()), a.no_plot),
                ExpCmd::FigC { no_plot } => (ExperimentId::FigC, None, *no_plot),
            };
            let mut cfg = ctx.experiment(id)?;
            if let Some(a) = args {
                cfg.networks = a.networks.unwrap_or(cfg.networks);
                cfg.m = a.m.unwrap_or(cfg.m);
                cfg.v_max_range = (
                    a.v_min.unwrap_or(cfg.v_max_range.0),
                    a.v_max.unwrap_or(cfg.v_max_range.1),
                );
            }
            let dir = ctx.out_dir()?;
            let csv = match id {
                ExperimentId::FigA => {
                    let path = dir.join("fig_a.csv");
                    experiments::write_fig_a(&path, &experiments::run_fig_a(&cfg)?)?;
                    path
                }
                ExperimentId::FigB => {
                    let path = dir.join("fig_b.csv");
                    experiments::write_fig_b(&path, &experiments::run_fig_b(&cfg)?)?;
                    path
                }
                _ => {
                    let fig = experiments::run_fig_c(&cfg)?;
                    let path = dir.join("fig_c.csv");
                    experiments::write_fig_c(&path, &fig.rows)?;
                    experiments::write_json(&dir.join("fig_c.json"), &fig.plan)?;
                    print_kv("p_avg_r", fig.plan.p_avg_r);
                    print_kv("exact_min", fig.exact_min());
                    path
                }
            };
            println!("{}", csv.display());
            if !no_plot {
                let svg = emit_plot(&csv, &csv.with_extension("svg"), None)?;
                println!("{}", svg.display());
            }
        }
        Command::Plot { csv } => {
            let svg = ctx.out_dir()?.join(csv.with_extension("svg").file_name().unwrap_or_default());
            println!("{}", emit_plot(&csv, &svg, None)?.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
