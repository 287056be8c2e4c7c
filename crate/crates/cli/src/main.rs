use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msk_balance::env::{Method, TrainLogRow};
use msk_balance::Result;
use msk_balance_cli::commands::{self, EXIT_OK, EXIT_PARTIAL};
use msk_balance_cli::{RunConfig, Scenario};

#[derive(Parser)]
#[command(name = "msk-balance", version, about = "Train muscle-driven balance controllers and map their balance regions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a default run configuration.
    Init {
        #[arg(long, value_enum, default_value = "human")]
        preset: Preset,
        #[arg(long, default_value = "config.json")]
        out: PathBuf,
    },
    /// Train a controller.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run test episodes and build balance regions from a checkpoint.
    Region {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Collect successful recoveries from a fixed lean.
    LeanTest {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "forward")]
        lean: Lean,
        /// Lean ankle angle in degrees; overrides the preset.
        #[arg(long, allow_hyphen_values = true)]
        mu_deg: Option<f64>,
        /// Ankle angle spread in degrees (default from the config).
        #[arg(long)]
        sigma_deg: Option<f64>,
    },
    /// Train under a scenario, then build its regions.
    Scenario {
        #[command(flatten)]
        run: RunArgs,
        /// baseline, global:<scale>, unilateral:<left|right>:<scale> or delay:<factor>
        #[arg(long)]
        scenario: Scenario,
    },
    /// Regenerate plot CSVs from a region or training run directory.
    ExportPlots {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Human,
    Toy,
}

#[derive(Clone, Copy, ValueEnum)]
enum Lean {
    Forward,
    Backward,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    method: Option<Method>,
    /// Iterations per training stage.
    #[arg(long)]
    iterations: Option<usize>,
    /// Number of test episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Drop the extrapolated-COM reward term.
    #[arg(long)]
    no_xcom_reward: bool,
    /// Drop the upright reward term.
    #[arg(long)]
    no_upright_reward: bool,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(&self.config)?;
        if let Some(o) = &self.output {
            c.output_dir = o.clone();
        }
        if let Some(s) = self.seed {
            c.train.seed = s;
        }
        if let Some(w) = self.workers {
            c.train.workers = w;
        }
        if let Some(m) = self.method {
            c.train.method = m;
        }
        if let Some(i) = self.iterations {
            c.train.iterations = i;
        }
        if let Some(n) = self.episodes {
            c.test.episodes = n;
        }
        if self.no_xcom_reward {
            c.train.env.weights.xcom = 0.0;
        }
        if self.no_upright_reward {
            c.train.env.weights.upright = 0.0;
        }
        c.validate()?;
        Ok(c)
    }
}

fn progress(stage: usize, row: &TrainLogRow) {
    if row.iteration % 10 == 0 {
        eprintln!(
            "stage {} iter {:>5} reward {:>9.3} smoothed {:>9.3} mcn_loss {:.5}",
            stage + 1,
            row.iteration,
            row.reward,
            row.smoothed_reward_5pt,
            row.mcn_loss
        );
    }
}

fn print_region(out: &commands::RegionOutput) {
    let r = &out.report;
    println!("test episodes: {}", r.n_trials);
    println!("overall success rate: {:.4}", out.overall_rate);
    match (&r.pbr, &r.br) {
        (Some(pbr), Some(br)) => {
            println!(
                "PBR: area {:.5}, internal success rate {:.4} ({} / ({} + {}))",
                pbr.area, pbr.internal_rate, pbr.n_success_inside, pbr.n_success_inside, pbr.n_fail_inside
            );
            println!("BR: area {:.5}, contained fraction {:.4}", br.area, br.contained_fraction);
        }
        _ => println!("regions: degenerate ({})", r.degenerate.as_deref().unwrap_or("no envelope")),
    }
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Init { preset, out } => {
            let c = match preset {
                Preset::Human => RunConfig::default(),
                Preset::Toy => RunConfig::toy(),
            };
            c.save(&out)?;
            println!("wrote {}", out.display());
        }
        Command::Train { run } => {
            let c = run.load()?;
            let s = commands::cmd_train(&c, &mut progress)?;
            for st in &s.stages {
                println!(
                    "{:?}: best reward {:.3} at iteration {} ({})",
                    st.method, st.best_reward, st.best_iteration, st.dir
                );
            }
            for n in &s.notes {
                println!("{n}");
            }
            println!("outputs in {}", c.output_dir.display());
        }
        Command::Region { run, checkpoint } => {
            let c = run.load()?;
            let ck = commands::load_checkpoint(&checkpoint)?;
            let out = commands::cmd_region(&c, &ck)?;
            print_region(&out);
            println!("outputs in {}", c.output_dir.display());
        }
        Command::LeanTest { run, checkpoint, lean, mu_deg, sigma_deg } => {
            let c = run.load()?;
            let ck = commands::load_checkpoint(&checkpoint)?;
            let mu = mu_deg.unwrap_or(match lean {
                Lean::Forward => commands::LEAN_FORWARD_DEG,
                Lean::Backward => commands::LEAN_BACKWARD_DEG,
            });
            let sigma = sigma_deg.unwrap_or(c.lean.sigma_deg);
            let r = commands::cmd_lean_test(&c, &ck, mu, sigma)?;
            println!(
                "lean {:.2} deg: {} of {} successes in {} attempts",
                r.mu_deg, r.collected, r.requested, r.attempted
            );
            if r.partial {
                eprintln!("partial result: fewer successes than requested");
                return Ok(EXIT_PARTIAL);
            }
        }
        Command::Scenario { run, scenario } => {
            let c = run.load()?;
            let out = commands::cmd_scenario(&c, scenario, &mut progress)?;
            println!("scenario {scenario}");
            for n in &out.train.notes {
                println!("{n}");
            }
            print_region(&out.region);
            println!("outputs in {}", c.output_dir.display());
        }
        Command::ExportPlots { run, out } => {
            let out = out.unwrap_or_else(|| run.join("plots"));
            for f in commands::cmd_export_plots(&run, &out)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}

