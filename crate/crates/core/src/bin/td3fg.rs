use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use td3fg::demo::{generate_demo_set, moving_average, policy_architecture, pretrain_generator, DemoSet};
use td3fg::harness::{
    emit_run, emit_svg_curves, evaluate, load_demos, median, parse_csv, prepare_generator, preset,
    svg_string, train, ExperimentConfig, RunLog,
};
use td3fg::nn::MlpNet;
use td3fg::{Error, Result};

#[derive(Parser)]
#[command(name = "td3fg", version, about = "TD3 with a behavior-cloned reference-action generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Stock configuration to start from.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment name override.
    #[arg(long)]
    env: Option<String>,
    /// Total environment steps override.
    #[arg(long)]
    steps: Option<u64>,
    /// Output directory (or file, for gen-demos).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => preset("td3fg")?,
        };
        if let Some(env) = &self.env {
            cfg.env = env.clone();
        }
        if let Some(steps) = self.steps {
            cfg.total_steps = steps;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured demonstration set and write it to a file.
    GenDemos {
        #[command(flatten)]
        common: Common,
        /// Demo generation seed (defaults to the config's).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Behavior-clone the generator and write its checkpoint and loss curve.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train one seed; writes CSV, run log, SVG and the final actor.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate an actor checkpoint with deterministic rollouts.
    Eval {
        /// Actor checkpoint.
        actor: PathBuf,
        #[arg(long, default_value = "corridor-walker")]
        env: String,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render learning curves from CSV files into one SVG.
    Plot {
        /// CSV files written by train or sweep.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "curves.svg")]
        out: PathBuf,
    },
    /// Train every configured seed and report the median final return.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seed: Option<Vec<u64>>,
    },
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn train_seed(cfg: &ExperimentConfig, demos: Option<&DemoSet>, seed: u64) -> Result<RunLog> {
    let generator = match demos {
        Some(d) if cfg.variant().needs_generator() => Some(prepare_generator(cfg, d, seed)?),
        _ => None,
    };
    let start = Instant::now();
    let run = train(cfg, seed, demos, generator)?;
    let secs = start.elapsed().as_secs_f64();
    let stem = format!("seed{seed}");
    mkdir(&cfg.out_dir)?;
    emit_run(&run.log, &cfg.out_dir, &stem)?;
    run.actor.save(cfg.out_dir.join(format!("{stem}.actor")))?;
    // Timing lives outside the CSV and log so those stay reproducible.
    write(&cfg.out_dir.join(format!("{stem}.time")), &format!("{secs:.3}\n"))?;
    let s = &run.log.summary;
    println!(
        "{} seed {seed}: final {:.3}, best {:.3}, {} updates, {secs:.1}s",
        cfg.name, s.final_return, s.best_return, s.updates
    );
    if let Some(a) = &s.aborted {
        println!("  aborted at step {}: {}", a.step, a.reason);
    }
    Ok(run.log)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenDemos { common, seed } => {
            let cfg = common.config()?;
            let seed = seed.unwrap_or(cfg.demos.seed);
            let demos = generate_demo_set(&cfg.env_spec()?, &cfg.demos.mix, seed)?;
            let out = common.out.unwrap_or_else(|| PathBuf::from("demos.txt"));
            demos.save(&out)?;
            let st = demos.stats();
            println!(
                "{} trajectories, {} transitions; return max {:.3} min {:.3} mean {:.3} -> {}",
                demos.len(),
                demos.transition_count(),
                st.max,
                st.min,
                st.mean,
                out.display()
            );
        }
        Command::Pretrain { common, seed } => {
            let cfg = common.config()?;
            let spec = cfg.env_spec()?;
            let demos = load_demos(&cfg)?;
            let arch = policy_architecture(spec.obs_dim, &cfg.hidden, spec.act_dim);
            let p = pretrain_generator(&demos, &cfg.pretrain, &arch, seed)?;
            mkdir(&cfg.out_dir)?;
            p.net.save(cfg.out_dir.join("generator.ckpt"))?;
            let mut csv = String::from("iter,loss\n");
            for (i, l) in p.losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l:?}\n"));
            }
            write(&cfg.out_dir.join("pretrain_loss.csv"), &csv)?;
            let smooth = moving_average(&p.losses, 100.min(p.losses.len()));
            println!(
                "pretrained {} iters; windowed MSE {:.5} -> {:.5}",
                p.losses.len(),
                smooth.first().copied().unwrap_or(f64::NAN),
                smooth.last().copied().unwrap_or(f64::NAN)
            );
        }
        Command::Train { common, seed } => {
            let cfg = common.config()?;
            let demos = if cfg.needs_demos() { Some(load_demos(&cfg)?) } else { None };
            let log = train_seed(&cfg, demos.as_ref(), seed)?;
            emit_svg_curves(&[log], cfg.out_dir.join(format!("seed{seed}.svg")))?;
        }
        Command::Eval {
            actor,
            env,
            episodes,
            seed,
        } => {
            let spec = td3fg::env::EnvSpec::by_name(&env)?;
            let net = MlpNet::load(&actor)?;
            let ev = evaluate(&net, &spec, episodes, seed)?;
            let c = ev.components;
            println!(
                "mean return {:.4} (fr {:.4} hr {:.4} cc {:.4} tc {:.4}) over {episodes} episodes",
                ev.mean_return, c.fr, c.hr, c.cc, c.tc
            );
        }
        Command::Plot { csv, out } => {
            let mut series = Vec::new();
            for path in &csv {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                let label = path.with_extension("").display().to_string();
                series.push((label, parse_csv(&text)?));
            }
            write(&out, &svg_string(&series))?;
            println!("{} series -> {}", series.len(), out.display());
        }
        Command::Sweep { common, seed } => {
            let mut cfg = common.config()?;
            if let Some(seeds) = seed {
                cfg.seeds = seeds;
                cfg.validate()?;
            }
            let demos = if cfg.needs_demos() { Some(load_demos(&cfg)?) } else { None };
            let logs = cfg
                .seeds
                .iter()
                .map(|&s| train_seed(&cfg, demos.as_ref(), s))
                .collect::<Result<Vec<_>>>()?;
            emit_svg_curves(&logs, cfg.out_dir.join("curves.svg"))?;
            let finals: Vec<f64> = logs.iter().map(RunLog::final_return).collect();
            let med = median(&finals).unwrap_or(f64::NAN);
            let mut summary = String::from("seed,final_return,best_return\n");
            for l in &logs {
                summary.push_str(&format!(
                    "{},{:?},{:?}\n",
                    l.seed, l.summary.final_return, l.summary.best_return
                ));
            }
            summary.push_str(&format!("median,{med:?},\n"));
            write(&cfg.out_dir.join("summary.csv"), &summary)?;
            println!("{}: median final return {med:.3} over {} seeds", cfg.name, logs.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
