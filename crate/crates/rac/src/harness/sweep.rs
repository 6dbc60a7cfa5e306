//! Sweep driver: trains one cell per axis value per seed, evaluates every
//! cell against a fixed pool of frozen baseline checkpoints, and emits one
//! tidy CSV per figure analog. Cell failures are isolated: a failed cell is
//! recorded in the sweep manifest and the remaining cells still run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{Config, Variant};
use crate::env::Game;
use crate::trainer::Trainer;

use super::metrics::{derive_seed, mean_se, MetricRow};
use super::tournament::{tournament, TournamentSpec};

#[derive(Clone, Debug)]
pub enum SweepAxis {
    Lambda(Vec<f64>),
    Variants(Vec<Variant>),
}

impl SweepAxis {
    /// Parse `lambda=0.1,0.5,0.9` or `variant=rac,maac,...`.
    pub fn parse(s: &str) -> Result<SweepAxis> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("axis must look like name=v1,v2,..."))?;
        let values: Vec<&str> = values.split(',').filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            bail!("axis `{name}` has no values");
        }
        match name {
            "lambda" => {
                let parsed: Result<Vec<f64>, _> = values.iter().map(|v| v.parse()).collect();
                let parsed = parsed.with_context(|| format!("parsing lambda values {values:?}"))?;
                for v in &parsed {
                    if !(0.0..=1.0).contains(v) {
                        bail!("lambda {v} outside [0,1]");
                    }
                }
                Ok(SweepAxis::Lambda(parsed))
            }
            "variant" => {
                let parsed: Result<Vec<Variant>> = values
                    .iter()
                    .map(|v| {
                        Variant::parse(v).ok_or_else(|| anyhow::anyhow!("unknown variant `{v}`"))
                    })
                    .collect();
                Ok(SweepAxis::Variants(parsed?))
            }
            other => bail!("unknown sweep axis `{other}` (expected lambda or variant)"),
        }
    }

    fn labels(&self) -> Vec<String> {
        match self {
            SweepAxis::Lambda(vs) => vs.iter().map(|v| format!("lambda{v}")).collect(),
            SweepAxis::Variants(vs) => vs.iter().map(|v| v.name().to_string()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub template: Config,
    pub axis: SweepAxis,
    pub seeds: u64,
    /// Directory of frozen baseline checkpoints; trained on the fly when
    /// absent.
    pub pool: Option<PathBuf>,
    pub out: PathBuf,
    /// Evaluation episodes per cell, split across the pool.
    pub eval_episodes: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellRecord {
    pub label: String,
    pub seed: u64,
    pub status: String,
    pub checkpoint: Option<PathBuf>,
    pub run_dir: PathBuf,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepManifest {
    pub axis: Vec<String>,
    pub seeds: u64,
    pub eval_episodes: usize,
    pub pool: Vec<PoolEntry>,
    pub cells: Vec<CellRecord>,
    pub csv_files: Vec<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PoolEntry {
    pub path: PathBuf,
    pub config_hash: String,
}

pub struct SweepReport {
    pub manifest_path: PathBuf,
    pub csv_paths: Vec<PathBuf>,
    pub cells: Vec<CellRecord>,
}

/// Evaluation statistics of one cell, side A against the whole pool.
struct CellEval {
    mean_reward: f64,
    se_reward: f64,
    objective_rate: f64,
    strategy_rate: f64,
    episodes: usize,
}

fn eval_rows(rows: &[MetricRow], game: Game) -> CellEval {
    let rewards: Vec<f64> = rows.iter().map(|r| r.reward_a).collect();
    let (mean_reward, se_reward) = mean_se(&rewards);
    let objective_rate = match game {
        Game::TouchMark => {
            let hits = rows.iter().filter(|r| r.touch_a == Some(true)).count();
            hits as f64 / rows.len().max(1) as f64
        }
        Game::Market => {
            let total: f64 = rows.iter().filter_map(|r| r.drops_a).map(f64::from).sum();
            total / rows.len().max(1) as f64
        }
    };
    let defined: Vec<&MetricRow> = rows.iter().filter(|r| r.strategy_a.is_some()).collect();
    let strategy_rate = if defined.is_empty() {
        0.0
    } else {
        defined.iter().filter(|r| r.strategy_a == Some(true)).count() as f64 / defined.len() as f64
    };
    CellEval {
        mean_reward,
        se_reward,
        objective_rate,
        strategy_rate,
        episodes: rows.len(),
    }
}

fn train_cell(cfg: Config) -> Result<PathBuf> {
    let mut trainer = Trainer::new(cfg)?;
    let summary = trainer.run()?;
    Ok(summary.final_checkpoint)
}

fn eval_cell_vs_pool(
    cell_ckpt: &Path,
    pool: &[PathBuf],
    eval_episodes: usize,
    seed: u64,
) -> Result<Vec<MetricRow>> {
    let per_member = (eval_episodes / pool.len()).max(1);
    let mut rows = Vec::new();
    for (pi, member) in pool.iter().enumerate() {
        let spec = TournamentSpec {
            ckpt_a: cell_ckpt.to_path_buf(),
            ckpt_b: member.clone(),
            episodes: per_member,
            seed: derive_seed(seed, 0xE7A1, pi as u64),
            a_team: 0,
            b_team: 1,
        };
        let (mut r, _) = tournament(&spec)?;
        rows.append(&mut r);
    }
    Ok(rows)
}

/// Checkpoints below `run_dir`, ordered by episode, final last.
fn list_checkpoints(run_dir: &Path) -> Vec<(String, PathBuf)> {
    let mut interval: Vec<(u64, PathBuf)> = Vec::new();
    if let Ok(entries) = fs::read_dir(run_dir) {
        for e in entries.flatten() {
            let name = e.file_name().to_string_lossy().into_owned();
            if let Some(num) = name.strip_prefix("ckpt_ep") {
                if let Ok(n) = num.parse::<u64>() {
                    if e.path().join("manifest.json").exists() {
                        interval.push((n, e.path()));
                    }
                }
            }
        }
    }
    interval.sort_by_key(|(n, _)| *n);
    let mut out: Vec<(String, PathBuf)> = interval
        .into_iter()
        .map(|(n, p)| (n.to_string(), p))
        .collect();
    let final_dir = run_dir.join("final");
    if final_dir.join("manifest.json").exists() {
        out.push(("final".to_string(), final_dir));
    }
    out
}

pub fn sweep(spec: &SweepSpec) -> Result<SweepReport> {
    let labels = spec.axis.labels();
    if labels.is_empty() || spec.seeds == 0 {
        bail!("sweep needs a non-empty axis and at least one seed");
    }
    fs::create_dir_all(&spec.out).context("creating sweep output dir")?;

    // Fixed opponent pool: either the given frozen directory or a pair of
    // baseline self-play runs trained here.
    let pool: Vec<PathBuf> = match &spec.pool {
        Some(dir) => {
            let mut found = Vec::new();
            for e in fs::read_dir(dir).with_context(|| format!("reading pool {}", dir.display()))? {
                let p = e?.path();
                if p.join("manifest.json").exists() {
                    found.push(p);
                }
            }
            found.sort();
            if found.is_empty() {
                bail!("pool directory {} holds no checkpoints", dir.display());
            }
            found
        }
        None => {
            let mut built = Vec::new();
            for p in 0..2u64 {
                let mut cfg = spec.template.clone();
                cfg.train.variant = Variant::Maac;
                cfg.train.seed = derive_seed(spec.template.train.seed, 0x9001, p);
                cfg.train.out_dir = spec
                    .out
                    .join(format!("pool/maac{p}"))
                    .to_string_lossy()
                    .into_owned();
                cfg.train.checkpoint_interval = 0;
                let ckpt = train_cell(cfg).with_context(|| format!("training pool member {p}"))?;
                built.push(ckpt);
            }
            built
        }
    };
    let pool_entries: Vec<PoolEntry> = pool
        .iter()
        .map(|p| {
            let hash = crate::trainer::CheckpointManifest::load(p)
                .map(|m| m.config_hash)
                .unwrap_or_default();
            PoolEntry {
                path: p.clone(),
                config_hash: hash,
            }
        })
        .collect();

    // Train every cell, isolating failures.
    let mut cells: Vec<CellRecord> = Vec::new();
    for (vi, label) in labels.iter().enumerate() {
        for s in 0..spec.seeds {
            let mut cfg = spec.template.clone();
            cfg.train.seed = derive_seed(spec.template.train.seed, 0x5EED, s);
            match &spec.axis {
                SweepAxis::Lambda(vs) => cfg.loss.lambda = vs[vi],
                SweepAxis::Variants(vs) => cfg.train.variant = vs[vi],
            }
            let run_dir = spec.out.join(format!("cells/{label}-s{s}"));
            cfg.train.out_dir = run_dir.to_string_lossy().into_owned();
            let record = match train_cell(cfg) {
                Ok(ckpt) => CellRecord {
                    label: label.clone(),
                    seed: s,
                    status: "ok".into(),
                    checkpoint: Some(ckpt),
                    run_dir,
                },
                Err(e) => {
                    log::warn!("cell {label}-s{s} failed: {e:#}");
                    CellRecord {
                        label: label.clone(),
                        seed: s,
                        status: format!("failed: {e:#}"),
                        checkpoint: None,
                        run_dir,
                    }
                }
            };
            cells.push(record);
        }
    }

    let game = spec.template.game.game;
    let mut csv_paths = Vec::new();

    // Per-cell evaluation against the pool, shared by several figures.
    let mut cell_evals: Vec<(String, u64, CellEval)> = Vec::new();
    for c in cells.iter().filter(|c| c.checkpoint.is_some()) {
        let rows = eval_cell_vs_pool(
            c.checkpoint.as_ref().unwrap(),
            &pool,
            spec.eval_episodes,
            derive_seed(spec.template.train.seed, 0xEA11, c.seed),
        )?;
        cell_evals.push((c.label.clone(), c.seed, eval_rows(&rows, game)));
    }

    let write_eval_csv = |path: &Path, key: &str, labels: &[String]| -> Result<()> {
        let mut text = format!(
            "{key},seed,episodes,mean_reward,se_reward,objective_rate,strategy_rate\n"
        );
        for (label, seed, ev) in &cell_evals {
            if !labels.contains(label) {
                continue;
            }
            let key_value = label.strip_prefix("lambda").unwrap_or(label);
            text.push_str(&format!(
                "{key_value},{seed},{},{},{},{},{}\n",
                ev.episodes, ev.mean_reward, ev.se_reward, ev.objective_rate, ev.strategy_rate
            ));
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    };

    match &spec.axis {
        SweepAxis::Lambda(_) => {
            let path = spec.out.join("vary_decay.csv");
            write_eval_csv(&path, "lambda", &labels)?;
            csv_paths.push(path);
        }
        SweepAxis::Variants(vs) => {
            let has = |v: Variant| vs.contains(&v);
            if has(Variant::Rac) && has(Variant::RacTeam) {
                let path = spec.out.join("cooperative.csv");
                let wanted: Vec<String> =
                    vec![Variant::Rac.name().into(), Variant::RacTeam.name().into()];
                write_eval_csv(&path, "variant", &wanted)?;
                csv_paths.push(path);
            }
            let ablations = [Variant::AblationD, Variant::AblationMi, Variant::AblationDMi];
            if ablations.iter().any(|&v| has(v)) {
                let path = spec.out.join("ablations.csv");
                let mut wanted: Vec<String> = vec![Variant::Rac.name().into()];
                wanted.extend(ablations.iter().filter(|&&v| has(v)).map(|v| v.name().to_string()));
                write_eval_csv(&path, "variant", &wanted)?;
                csv_paths.push(path);
            }
            if has(Variant::Rac) && has(Variant::Maac) {
                // Direct head-to-head over the training checkpoints, the
                // tournament-figure analog; strategy statistics per variant
                // side feed the role-figure analog.
                let mut tour = String::from(
                    "seed,ckpt_episode,reward_rac,reward_maac,objective_rac,objective_maac\n",
                );
                let mut role = String::from("variant,seed,strategy_rate,objective_rate\n");
                for s in 0..spec.seeds {
                    let find = |label: &str| {
                        cells
                            .iter()
                            .find(|c| c.label == label && c.seed == s && c.checkpoint.is_some())
                    };
                    let (Some(rac), Some(maac)) = (find("rac"), find("maac")) else {
                        continue;
                    };
                    let rac_ckpts = list_checkpoints(&rac.run_dir);
                    let maac_ckpts = list_checkpoints(&maac.run_dir);
                    for (tag, rac_path) in &rac_ckpts {
                        let Some((_, maac_path)) =
                            maac_ckpts.iter().find(|(t, _)| t == tag)
                        else {
                            continue;
                        };
                        let t_spec = TournamentSpec {
                            ckpt_a: rac_path.clone(),
                            ckpt_b: maac_path.clone(),
                            episodes: spec.eval_episodes.max(1),
                            seed: derive_seed(spec.template.train.seed, 0x70FF, s),
                            a_team: 0,
                            b_team: 1,
                        };
                        let (rows, _) = tournament(&t_spec)?;
                        let eval_a = eval_rows(&rows, game);
                        let mirrored: Vec<MetricRow> = rows
                            .iter()
                            .map(|r| MetricRow {
                                episode: r.episode,
                                reward_a: r.reward_b,
                                reward_b: r.reward_a,
                                touch_a: r.touch_b,
                                touch_b: r.touch_a,
                                drops_a: r.drops_b,
                                drops_b: r.drops_a,
                                strategy_a: r.strategy_b,
                                strategy_b: r.strategy_a,
                            })
                            .collect();
                        let eval_b = eval_rows(&mirrored, game);
                        tour.push_str(&format!(
                            "{s},{tag},{},{},{},{}\n",
                            eval_a.mean_reward,
                            eval_b.mean_reward,
                            eval_a.objective_rate,
                            eval_b.objective_rate
                        ));
                        if tag == "final" {
                            role.push_str(&format!(
                                "rac,{s},{},{}\n",
                                eval_a.strategy_rate, eval_a.objective_rate
                            ));
                            role.push_str(&format!(
                                "maac,{s},{},{}\n",
                                eval_b.strategy_rate, eval_b.objective_rate
                            ));
                        }
                    }
                }
                let tour_path = spec.out.join("tournament.csv");
                fs::write(&tour_path, tour).context("writing tournament.csv")?;
                csv_paths.push(tour_path);
                let role_path = spec.out.join("role.csv");
                fs::write(&role_path, role).context("writing role.csv")?;
                csv_paths.push(role_path);
            }
        }
    }

    let manifest = SweepManifest {
        axis: labels,
        seeds: spec.seeds,
        eval_episodes: spec.eval_episodes,
        pool: pool_entries,
        cells: cells.clone(),
        csv_files: csv_paths.clone(),
    };
    let manifest_path = spec.out.join("sweep_manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).context("serializing sweep manifest")?,
    )
    .context("writing sweep manifest")?;

    Ok(SweepReport {
        manifest_path,
        csv_paths,
        cells,
    })
}
