//! Per-episode tournament measurements, strategy flags, aggregation, and
//! file emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Game, GameSpec, StepEvents};

/// One tournament episode, sides A and B. Game-specific fields stay `None`
/// for the other game; a Touch-Mark strategy flag is only defined for the
/// episode's winning team.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub episode: usize,
    /// Cumulative episode reward, averaged over the team's members.
    pub reward_a: f64,
    pub reward_b: f64,
    pub touch_a: Option<bool>,
    pub touch_b: Option<bool>,
    pub drops_a: Option<u32>,
    pub drops_b: Option<u32>,
    /// Touch-Mark: a teammate other than the toucher collided with an
    /// opponent. Market: the team's drops covered both resource types.
    pub strategy_a: Option<bool>,
    pub strategy_b: Option<bool>,
}

pub const METRIC_CSV_HEADER: &str =
    "episode,reward_a,reward_b,touch_a,touch_b,drops_a,drops_b,strategy_a,strategy_b";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitFormat {
    Csv,
    Jsonl,
}

impl EmitFormat {
    pub fn parse(s: &str) -> Option<EmitFormat> {
        match s {
            "csv" => Some(EmitFormat::Csv),
            "jsonl" => Some(EmitFormat::Jsonl),
            _ => None,
        }
    }
}

fn cell_bool(v: Option<bool>) -> String {
    v.map(|b| if b { "1" } else { "0" }.to_string()).unwrap_or_default()
}

fn cell_u32(v: Option<u32>) -> String {
    v.map(|n| n.to_string()).unwrap_or_default()
}

/// Write rows as CSV (documented header, full-precision numbers, trailing
/// newline) or JSON lines. Zero rows still produce the header.
pub fn emit(rows: &[MetricRow], path: &Path, format: EmitFormat) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        EmitFormat::Csv => {
            writeln!(w, "{METRIC_CSV_HEADER}")?;
            for r in rows {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{}",
                    r.episode,
                    r.reward_a,
                    r.reward_b,
                    cell_bool(r.touch_a),
                    cell_bool(r.touch_b),
                    cell_u32(r.drops_a),
                    cell_u32(r.drops_b),
                    cell_bool(r.strategy_a),
                    cell_bool(r.strategy_b),
                )?;
            }
        }
        EmitFormat::Jsonl => {
            for r in rows {
                let line = serde_json::to_string(r)
                    .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                writeln!(w, "{line}")?;
            }
        }
    }
    w.flush()
}

/// Parse rows back out of a CSV produced by [`emit`].
pub fn parse_csv(text: &str) -> Vec<MetricRow> {
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let opt_bool = |s: &str| -> Option<bool> {
            match s {
                "" => None,
                "1" => Some(true),
                _ => Some(false),
            }
        };
        rows.push(MetricRow {
            episode: cells[0].parse().unwrap(),
            reward_a: cells[1].parse().unwrap(),
            reward_b: cells[2].parse().unwrap(),
            touch_a: opt_bool(cells[3]),
            touch_b: opt_bool(cells[4]),
            drops_a: if cells[5].is_empty() { None } else { cells[5].parse().ok() },
            drops_b: if cells[6].is_empty() { None } else { cells[6].parse().ok() },
            strategy_a: opt_bool(cells[7]),
            strategy_b: opt_bool(cells[8]),
        });
    }
    rows
}

/// Mean and standard error of one metric across episodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub name: String,
    pub mean: f64,
    /// Standard error from the unbiased sample variance; zero for a single
    /// observation.
    pub se: f64,
    pub count: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    pub entries: Vec<SummaryEntry>,
}

impl Summary {
    pub fn get(&self, name: &str) -> Option<&SummaryEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

pub(crate) fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Aggregate rows into per-metric means and standard errors. Flag metrics
/// average their 0/1 indicator over the episodes where they are defined.
pub fn summarize(rows: &[MetricRow]) -> Summary {
    let mut entries = Vec::new();
    let mut push = |name: &str, values: Vec<f64>| {
        if values.is_empty() {
            return;
        }
        let (mean, se) = mean_se(&values);
        entries.push(SummaryEntry {
            name: name.to_string(),
            mean,
            se,
            count: values.len(),
        });
    };
    push("reward_a", rows.iter().map(|r| r.reward_a).collect());
    push("reward_b", rows.iter().map(|r| r.reward_b).collect());
    let flags = |f: fn(&MetricRow) -> Option<bool>| -> Vec<f64> {
        rows.iter()
            .filter_map(f)
            .map(|b| if b { 1.0 } else { 0.0 })
            .collect()
    };
    push("touch_a", flags(|r| r.touch_a));
    push("touch_b", flags(|r| r.touch_b));
    push(
        "drops_a",
        rows.iter().filter_map(|r| r.drops_a).map(f64::from).collect(),
    );
    push(
        "drops_b",
        rows.iter().filter_map(|r| r.drops_b).map(f64::from).collect(),
    );
    push("strategy_a", flags(|r| r.strategy_a));
    push("strategy_b", flags(|r| r.strategy_b));
    Summary {
        episodes: rows.len(),
        entries,
    }
}

/// Per-team strategy flags from a full episode event log.
///
/// Touch-Mark: defined only for the winning team, true when a teammate other
/// than the toucher collided with an opponent at least once. Market: true
/// when the team's drops covered both resource types.
pub fn compute_strategy_flags(spec: &GameSpec, events: &[StepEvents]) -> Vec<Option<bool>> {
    match spec.game {
        Game::TouchMark => {
            let toucher = events.iter().find_map(|e| e.landmark_touch);
            let mut flags = vec![None; spec.teams];
            if let Some(toucher) = toucher {
                let team = spec.team_of(toucher);
                let collided = events.iter().any(|e| {
                    e.collisions.iter().any(|&(a, b)| {
                        let involved =
                            |x: usize| x != toucher && spec.team_of(x) == team;
                        involved(a) || involved(b)
                    })
                });
                flags[team] = Some(collided);
            }
            flags
        }
        Game::Market => {
            (0..spec.teams)
                .map(|team| {
                    let mut kinds = [false; 2];
                    for e in events {
                        for &(agent, consumer) in &e.drops {
                            if spec.team_of(agent) == team {
                                kinds[consumer] = true;
                            }
                        }
                    }
                    Some(kinds[0] && kinds[1])
                })
                .collect()
        }
    }
}

/// Deterministic seed derivation for independent streams.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut x = base ^ a.rotate_left(17) ^ b.rotate_left(41);
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}
