//! Command-line front end: training, tournaments, sweeps, gradient
//! verification, and a random-action environment demo with an event log.
//!
//! Log verbosity comes from the `RAC_LOG` environment variable
//! (`RAC_LOG=debug`, `RAC_LOG=info`, ...).

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use rac::config::{Config, Variant};
use rac::env::{Environment, Game, GameEnv, GameSpec};
use rac::harness::{
    emit, gradcheck_battery, kl_self_check, sweep, tournament, EmitFormat, SweepAxis, SweepSpec,
    TournamentSpec, GRADCHECK_TOL,
};
use rac::trainer::Trainer;

#[derive(Parser)]
#[command(name = "rac", version, about = "Role-based multi-agent actor-critic on team-competitive board games")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's variant (rac, maac, rac_team, ld, lmi, ld_lmi).
        #[arg(long)]
        variant: Option<String>,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Play two checkpoints against each other and emit per-episode metrics.
    Tournament {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// csv or jsonl.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Which of checkpoint A's teams plays side A.
        #[arg(long, default_value_t = 0)]
        a_team: usize,
        /// Which of checkpoint B's teams plays side B.
        #[arg(long, default_value_t = 1)]
        b_team: usize,
    },
    /// Train one cell per axis value per seed and evaluate against a frozen
    /// pool, emitting one CSV per figure analog.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `lambda=0.1,0.5,0.9` or `variant=rac,maac,rac_team,ld,lmi,ld_lmi`.
        #[arg(long)]
        axis: String,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Directory of frozen opponent checkpoints; trained here if absent.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value = "sweep_out")]
        out: PathBuf,
        /// Evaluation episodes per cell.
        #[arg(long, default_value_t = 100)]
        eval_episodes: usize,
    },
    /// Finite-difference verification of every network and loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
    /// Run random actions through one environment, optionally logging one
    /// JSON event record per step.
    EnvDemo {
        /// touchmark or market.
        #[arg(long, default_value = "touchmark")]
        game: String,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        /// JSON-lines event log path.
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional config file supplying the `[game]` section.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RAC_LOG", "warn")).init();
    match Cli::parse().cmd {
        Cmd::Train {
            config,
            variant,
            seed,
            out,
        } => cmd_train(config, variant, seed, out),
        Cmd::Tournament {
            a,
            b,
            episodes,
            out,
            seed,
            format,
            a_team,
            b_team,
        } => cmd_tournament(a, b, episodes, out, seed, &format, a_team, b_team),
        Cmd::Sweep {
            config,
            axis,
            seeds,
            pool,
            out,
            eval_episodes,
        } => cmd_sweep(config, &axis, seeds, pool, out, eval_episodes),
        Cmd::Gradcheck { seed } => cmd_gradcheck(seed),
        Cmd::EnvDemo {
            game,
            steps,
            events,
            seed,
            config,
        } => cmd_env_demo(&game, steps, events, seed, config),
    }
}

fn cmd_train(
    config: PathBuf,
    variant: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = Config::load(&config)?;
    if let Some(v) = variant {
        cfg.train.variant =
            Variant::parse(&v).with_context(|| format!("unknown variant `{v}`"))?;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(o) = out {
        cfg.train.out_dir = o.to_string_lossy().into_owned();
    }
    let mut trainer = Trainer::new(cfg)?;
    let summary = trainer.run()?;
    println!(
        "trained {} episodes ({}); checkpoint: {}; metrics: {}",
        summary.episodes,
        trainer.cfg.train.variant.name(),
        summary.final_checkpoint.display(),
        summary.metrics_path.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_tournament(
    a: PathBuf,
    b: PathBuf,
    episodes: usize,
    out: PathBuf,
    seed: u64,
    format: &str,
    a_team: usize,
    b_team: usize,
) -> Result<()> {
    let format = EmitFormat::parse(format)
        .with_context(|| format!("unknown format `{format}` (expected csv or jsonl)"))?;
    let spec = TournamentSpec {
        ckpt_a: a,
        ckpt_b: b,
        episodes,
        seed,
        a_team,
        b_team,
    };
    let (rows, summary) = tournament(&spec)?;
    emit(&rows, &out, format).context("writing metric rows")?;
    let summary_path = out.with_extension("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .context("writing summary")?;
    println!("tournament over {} episodes -> {}", rows.len(), out.display());
    for e in &summary.entries {
        println!("  {}: {:.4} +/- {:.4} (n={})", e.name, e.mean, e.se, e.count);
    }
    Ok(())
}

fn cmd_sweep(
    config: PathBuf,
    axis: &str,
    seeds: u64,
    pool: Option<PathBuf>,
    out: PathBuf,
    eval_episodes: usize,
) -> Result<()> {
    let template = Config::load(&config)?;
    let axis = SweepAxis::parse(axis)?;
    let report = sweep(&SweepSpec {
        template,
        axis,
        seeds,
        pool,
        out,
        eval_episodes,
    })?;
    let failed: Vec<_> = report
        .cells
        .iter()
        .filter(|c| c.status != "ok")
        .map(|c| format!("{}-s{}", c.label, c.seed))
        .collect();
    println!("sweep manifest: {}", report.manifest_path.display());
    for p in &report.csv_paths {
        println!("  wrote {}", p.display());
    }
    if !failed.is_empty() {
        println!("  failed cells: {}", failed.join(", "));
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let items = gradcheck_battery(seed);
    let mut all_ok = true;
    for item in &items {
        let ok = item.report.passes(GRADCHECK_TOL);
        all_ok &= ok;
        println!(
            "gradcheck {:28} max rel err {:.3e} over {} elements: {}",
            item.name,
            item.report.max_rel_err,
            item.report.checked,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    let kl = kl_self_check();
    let kl_ok = kl < 1e-12;
    all_ok &= kl_ok;
    println!(
        "gradcheck {:28} |KL(p,p)| = {:.3e}: {}",
        "kl_identity",
        kl,
        if kl_ok { "PASS" } else { "FAIL" }
    );
    if !all_ok {
        bail!("gradient verification failed");
    }
    Ok(())
}

fn cmd_env_demo(
    game: &str,
    steps: usize,
    events: Option<PathBuf>,
    seed: u64,
    config: Option<PathBuf>,
) -> Result<()> {
    let spec: GameSpec = match config {
        Some(path) => Config::load(&path)?.game,
        None => match game {
            "touchmark" | "touch_mark" => GameSpec::touchmark(),
            "market" => GameSpec::market(),
            other => bail!("unknown game `{other}` (expected touchmark or market)"),
        },
    };
    let is_market = spec.game == Game::Market;
    let mut env = GameEnv::new(spec.clone())?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut log = match &events {
        Some(path) => Some(std::io::BufWriter::new(
            std::fs::File::create(path).context("creating event log")?,
        )),
        None => None,
    };
    let mut episode_seed = seed;
    env.reset(episode_seed);
    let mut episodes = 0usize;
    let mut touches = 0usize;
    let mut drops = 0usize;
    for _ in 0..steps {
        let actions: Vec<usize> = (0..spec.n_agents())
            .map(|_| rng.random_range(0..spec.n_actions()))
            .collect();
        let out = env.step(&actions)?;
        if out.events.landmark_touch.is_some() {
            touches += 1;
        }
        drops += out.events.drops.len();
        if let Some(w) = log.as_mut() {
            use std::io::Write;
            writeln!(w, "{}", serde_json::to_string(&out.events)?)?;
        }
        if out.done {
            episodes += 1;
            episode_seed = episode_seed.wrapping_add(1);
            env.reset(episode_seed);
        }
    }
    if let Some(w) = log.as_mut() {
        use std::io::Write;
        w.flush()?;
    }
    print!("{steps} steps over {episodes} finished episodes");
    if is_market {
        println!("; {drops} resource drops");
    } else {
        println!("; {touches} landmark touches");
    }
    if let Some(path) = events {
        println!("event log: {}", path.display());
    }
    Ok(())
}
