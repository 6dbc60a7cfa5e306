//! Full-state checkpoints: parameters, targets, optimizer moments, replay
//! buffer, and RNG state, plus a JSON manifest. A checkpoint restores a
//! trainer exactly, so a resumed single-environment run reproduces the
//! uninterrupted one bit for bit. Save -> load -> save reproduces every file
//! byte for byte; nothing time- or machine-dependent is written.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, ParamSet};
use crate::config::Config;
use crate::env::hex_string;
use crate::losses::LossBundle;
use crate::nets::Model;
use crate::replay::ReplayBuffer;

use super::{io_err, TrainError, Trainer};

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RngState {
    pub seed_hex: String,
    pub stream: u64,
    pub word_pos_hi: u64,
    pub word_pos_lo: u64,
}

impl RngState {
    fn capture(rng: &ChaCha12Rng) -> RngState {
        let pos = rng.get_word_pos();
        RngState {
            seed_hex: hex_string(&rng.get_seed()),
            stream: rng.get_stream(),
            word_pos_hi: (pos >> 64) as u64,
            word_pos_lo: pos as u64,
        }
    }

    fn restore(&self) -> Result<ChaCha12Rng, TrainError> {
        let bytes = parse_hex(&self.seed_hex)
            .ok_or_else(|| TrainError::Checkpoint("bad rng seed hex".into()))?;
        if bytes.len() != 32 {
            return Err(TrainError::Checkpoint("rng seed must be 32 bytes".into()));
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&bytes);
        let mut rng = ChaCha12Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(((self.word_pos_hi as u128) << 64) | self.word_pos_lo as u128);
        Ok(rng)
    }
}

fn parse_hex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len() / 2)
        .map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok())
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub variant: String,
    pub game_hash: String,
    pub config_hash: String,
    pub config: Config,
    pub episodes_done: u64,
    pub t_update: usize,
    pub updates_done: u64,
    pub last_bundle: LossBundle,
    pub adam_t: BTreeMap<String, u64>,
    pub rng: RngState,
}

impl CheckpointManifest {
    pub fn load(dir: &Path) -> Result<CheckpointManifest, TrainError> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(io_err("reading manifest"))?;
        serde_json::from_str(&text)
            .map_err(|e| TrainError::Checkpoint(format!("bad manifest {}: {e}", path.display())))
    }
}

impl Trainer {
    /// Write the complete training state into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), TrainError> {
        fs::create_dir_all(dir).map_err(io_err("creating checkpoint dir"))?;
        let manifest = CheckpointManifest {
            format_version: FORMAT_VERSION,
            variant: self.cfg.train.variant.name().to_string(),
            game_hash: self.cfg.game.hash_hex(),
            config_hash: self.cfg.hash_hex(),
            config: self.cfg.clone(),
            episodes_done: self.episodes_done,
            t_update: self.t_update,
            updates_done: self.updates_done,
            last_bundle: self.last_bundle,
            adam_t: self.opt.step_counts().clone(),
            rng: RngState::capture(&self.rng),
        };
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| TrainError::Checkpoint(e.to_string()))?;
        fs::write(dir.join("manifest.json"), json).map_err(io_err("writing manifest"))?;
        self.params
            .save(dir.join("params.bin"))
            .map_err(io_err("writing params"))?;
        self.targets
            .save(dir.join("targets.bin"))
            .map_err(io_err("writing targets"))?;
        let (m, v) = self.opt.moments();
        m.save(dir.join("opt_m.bin")).map_err(io_err("writing opt_m"))?;
        v.save(dir.join("opt_v.bin")).map_err(io_err("writing opt_v"))?;
        let mut buf_file =
            fs::File::create(dir.join("buffer.bin")).map_err(io_err("creating buffer file"))?;
        self.buffer
            .write_to(&mut buf_file)
            .map_err(io_err("writing buffer"))?;
        Ok(())
    }

    /// Restore a trainer from a checkpoint directory and continue training
    /// exactly where it stopped.
    pub fn from_checkpoint(dir: &Path) -> Result<Trainer, TrainError> {
        let manifest = CheckpointManifest::load(dir)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(TrainError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                manifest.format_version
            )));
        }
        let cfg = manifest.config.clone();
        let mut trainer = Trainer::new(cfg)?;
        trainer.params =
            ParamSet::load(dir.join("params.bin")).map_err(io_err("loading params"))?;
        trainer.targets =
            ParamSet::load(dir.join("targets.bin")).map_err(io_err("loading targets"))?;
        let m = ParamSet::load(dir.join("opt_m.bin")).map_err(io_err("loading opt_m"))?;
        let v = ParamSet::load(dir.join("opt_v.bin")).map_err(io_err("loading opt_v"))?;
        trainer.opt = Adam::from_state(m, v, manifest.adam_t.clone());
        let mut buf_file =
            fs::File::open(dir.join("buffer.bin")).map_err(io_err("opening buffer"))?;
        trainer.buffer = ReplayBuffer::read_from(&mut buf_file).map_err(io_err("loading buffer"))?;
        trainer.rng = manifest.rng.restore()?;
        trainer.episodes_done = manifest.episodes_done;
        trainer.t_update = manifest.t_update;
        trainer.updates_done = manifest.updates_done;
        trainer.last_bundle = manifest.last_bundle;
        Ok(trainer)
    }
}

/// Parameters needed to act with one side of a checkpoint: the manifest plus
/// the full live parameter set.
pub struct LoadedActors {
    pub manifest: CheckpointManifest,
    pub params: ParamSet<f32>,
    pub model: Model,
}

/// Load just what tournament play needs from a checkpoint directory.
pub fn load_actors(dir: &Path) -> Result<LoadedActors, TrainError> {
    let manifest = CheckpointManifest::load(dir)?;
    let params = ParamSet::load(dir.join("params.bin")).map_err(io_err("loading params"))?;
    let cfg = &manifest.config;
    let model = Model::new(
        cfg.game.clone(),
        cfg.nets.clone(),
        cfg.train.variant,
        cfg.loss.std_floor,
    );
    Ok(LoadedActors {
        manifest,
        params,
        model,
    })
}
