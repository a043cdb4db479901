//! Deterministic synthetic chains.
//!
//! Blocks are mined at `genesis midnight + k × interval`. Each block carries
//! one coinbase output worth the block subsidy plus the fees paid by the
//! block's own transactions, so value is conserved block by block. Every output draws its spend block when created, so
//! generation costs O(outputs log outputs) regardless of chain length.
//! Outputs that come due in the same block are shuffled and grouped into
//! transactions of 1..=max_inputs inputs and 1..=max_outputs outputs.

use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{write_raw_inputs, write_raw_outputs, DerivedWriter, RawInput, RawOutput};
use crate::model::{Amount, Calendar, OutputRecord, Timestamp};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("parsing TOML config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("parsing JSON config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid chain config: {0}")]
    Invalid(String),
    #[error("unknown chain preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Btc,
    Bch,
    Ltc,
    Dash,
    Doge,
    Zec,
}

impl Preset {
    pub fn block_interval_secs(self) -> u64 {
        match self {
            Preset::Btc | Preset::Bch => 600,
            Preset::Ltc | Preset::Dash => 150,
            Preset::Doge => 60,
            Preset::Zec => 75,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Btc => "btc",
            Preset::Bch => "bch",
            Preset::Ltc => "ltc",
            Preset::Dash => "dash",
            Preset::Doge => "doge",
            Preset::Zec => "zec",
        }
    }
}

impl FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "btc" => Preset::Btc,
            "bch" => Preset::Bch,
            "ltc" => Preset::Ltc,
            "dash" => Preset::Dash,
            "doge" => Preset::Doge,
            "zec" => Preset::Zec,
            _ => return Err(ConfigError::UnknownPreset(s.into())),
        })
    }
}

/// How long outputs live.
///
/// A fraction `intraday_probability` of outputs is respent later on the
/// day it was created. The rest follow a daily hazard of
/// `daily_probability / (1 + age / age_scale_days)`, so older coins move
/// less often. A zero `daily_probability` disables spending entirely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpendModel {
    pub daily_probability: f64,
    pub age_scale_days: f64,
    pub intraday_probability: f64,
    pub fee_fraction: f64,
    pub max_inputs: u32,
    pub max_outputs: u32,
}

impl Default for SpendModel {
    fn default() -> Self {
        SpendModel {
            daily_probability: 0.05,
            age_scale_days: 30.0,
            intraday_probability: 0.6,
            fee_fraction: 0.0005,
            max_inputs: 3,
            max_outputs: 2,
        }
    }
}

impl SpendModel {
    pub fn never() -> Self {
        SpendModel { daily_probability: 0.0, ..SpendModel::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub name: String,
    pub genesis: NaiveDate,
    /// Seconds after genesis midnight at which the first block is mined.
    pub first_block_offset_secs: u64,
    pub block_interval_secs: u64,
    pub initial_subsidy: Amount,
    pub halving_interval: u64,
    pub total_days: u32,
    pub spend: SpendModel,
    pub seed: u64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            name: "btc".into(),
            genesis: Calendar::bitcoin().genesis(),
            first_block_offset_secs: 0,
            block_interval_secs: 600,
            initial_subsidy: Amount::from_btc(50),
            halving_interval: 210_000,
            total_days: 400,
            spend: SpendModel::default(),
            seed: 0,
        }
    }
}

impl ChainConfig {
    pub fn preset(p: Preset) -> Self {
        ChainConfig { name: p.name().into(), block_interval_secs: p.block_interval_secs(), ..ChainConfig::default() }
    }

    /// Reads a TOML file, or JSON when the extension is `.json`.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let cfg: ChainConfig = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        let s = &self.spend;
        if self.block_interval_secs == 0 || self.halving_interval == 0 || self.total_days == 0 {
            return bad("block interval, halving interval and total days must be positive");
        }
        if self.first_block_offset_secs >= 86_400 {
            return bad("first block must fall on the genesis day");
        }
        if self.initial_subsidy.0 == 0 {
            return bad("initial subsidy must be positive");
        }
        if !(0.0..=1.0).contains(&s.daily_probability) || !(0.0..=1.0).contains(&s.intraday_probability) {
            return bad("spend probabilities must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&s.fee_fraction) {
            return bad("fee fraction must lie in [0, 1)");
        }
        if !(s.age_scale_days > 0.0 && s.age_scale_days.is_finite()) {
            return bad("age scale must be positive");
        }
        if s.max_inputs == 0 || s.max_outputs == 0 {
            return bad("transactions need at least one input and one output");
        }
        if self.block_count() > u64::from(u32::MAX) {
            return bad("too many blocks");
        }
        Ok(())
    }

    pub fn calendar(&self) -> Calendar {
        Calendar::new(self.genesis)
    }

    /// Number of blocks whose timestamp falls inside the simulated days.
    pub fn block_count(&self) -> u64 {
        (u64::from(self.total_days) * 86_400 - self.first_block_offset_secs).div_ceil(self.block_interval_secs)
    }

    pub fn block_time(&self, height: u64) -> Timestamp {
        let offset = self.first_block_offset_secs + height * self.block_interval_secs;
        Timestamp(self.calendar().genesis_midnight().0 + offset as i64)
    }

    pub fn subsidy_at(&self, height: u64) -> Amount {
        let halvings = height / self.halving_interval;
        if halvings >= 64 {
            Amount::ZERO
        } else {
            Amount(self.initial_subsidy.0 >> halvings)
        }
    }
}

const UNSPENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Output {
    value: u64,
    born: u32,
    spent: u32,
    tx: u64,
    vout: u32,
}

/// A generated chain. Outputs are kept in creation order.
#[derive(Debug, Clone)]
pub struct SyntheticChain {
    config: ChainConfig,
    outputs: Vec<Output>,
}

impl SyntheticChain {
    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = OutputRecord> + '_ {
        self.outputs.iter().map(|o| OutputRecord {
            value: Amount(o.value),
            born: self.config.block_time(u64::from(o.born)),
            spent: (o.spent != UNSPENT).then(|| self.config.block_time(u64::from(o.spent))),
        })
    }

    pub fn to_records(&self) -> Vec<OutputRecord> {
        self.records().collect()
    }

    fn tx_id(tx: u64) -> String {
        format!("{tx:064x}")
    }

    pub fn raw_outputs(&self) -> impl Iterator<Item = RawOutput> + '_ {
        self.outputs.iter().map(|o| RawOutput {
            tx_id: Self::tx_id(o.tx),
            output_index: o.vout,
            value: Amount(o.value),
            block_timestamp: self.config.block_time(u64::from(o.born)),
        })
    }

    pub fn raw_inputs(&self) -> impl Iterator<Item = RawInput> + '_ {
        self.outputs.iter().filter(|o| o.spent != UNSPENT).map(|o| RawInput {
            spent_tx_id: Self::tx_id(o.tx),
            spent_output_index: o.vout,
            spent_block_timestamp: self.config.block_time(u64::from(o.spent)),
        })
    }

    pub fn write_derived_csv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut w = DerivedWriter::create(path)?;
        for r in self.records() {
            w.write(&r)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn write_raw(&self, outputs: impl AsRef<Path>, inputs: impl AsRef<Path>) -> io::Result<()> {
        write_raw_outputs(outputs, &self.raw_outputs().collect::<Vec<_>>())?;
        write_raw_inputs(inputs, &self.raw_inputs().collect::<Vec<_>>())
    }
}

struct Sim<'a> {
    cfg: &'a ChainConfig,
    rng: ChaCha8Rng,
    blocks: u32,
    blocks_per_day: f64,
    outputs: Vec<Output>,
    due: Vec<Vec<u32>>,
    next_tx: u64,
}

impl Sim<'_> {
    /// Picks the block at which a new output will be spent.
    fn spend_block(&mut self, born: u32) -> u32 {
        let m = &self.cfg.spend;
        if m.daily_probability == 0.0 {
            return UNSPENT;
        }
        let delay = if self.rng.random::<f64>() < m.intraday_probability {
            let day_start = self.cfg.block_time(u64::from(born)).0.div_euclid(86_400) * 86_400;
            let secs_left = day_start + 86_400 - self.cfg.block_time(u64::from(born)).0;
            let left = (secs_left as u64).div_ceil(self.cfg.block_interval_secs).saturating_sub(1);
            self.rng.random_range(1..=left.max(1))
        } else {
            // inverse of the survival function exp(-p·s·ln(1 + a/s))
            let u: f64 = 1.0 - self.rng.random::<f64>();
            let scale = m.age_scale_days;
            let days = scale * ((-u.ln() / (m.daily_probability * scale)).exp() - 1.0);
            let blocks = (days * self.blocks_per_day).ceil();
            if !blocks.is_finite() || blocks >= f64::from(self.blocks) {
                return UNSPENT;
            }
            (blocks as u64).max(1)
        };
        match u64::from(born) + delay {
            b if b < u64::from(self.blocks) => b as u32,
            _ => UNSPENT,
        }
    }

    fn create(&mut self, value: u64, born: u32, vout: u32) {
        let spent = self.spend_block(born);
        let id = self.outputs.len() as u32;
        self.outputs.push(Output { value, born, spent, tx: self.next_tx, vout });
        if spent != UNSPENT {
            self.due[spent as usize].push(id);
        }
    }

    fn split(&mut self, total: u64, parts: u32) -> Vec<u64> {
        let mut cuts: Vec<u64> = (1..parts).map(|_| self.rng.random_range(0..=total)).collect();
        cuts.sort_unstable();
        let mut out = Vec::with_capacity(parts as usize);
        let mut prev = 0;
        for c in cuts {
            out.push(c - prev);
            prev = c;
        }
        out.push(total - prev);
        out
    }
}

/// Runs the simulation. Deterministic for a given config.
pub fn generate(config: &ChainConfig) -> Result<SyntheticChain, ConfigError> {
    config.validate()?;
    let blocks = config.block_count() as u32;
    let mut sim = Sim {
        cfg: config,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        blocks,
        blocks_per_day: 86_400.0 / config.block_interval_secs as f64,
        outputs: Vec::new(),
        due: vec![Vec::new(); blocks as usize],
        next_tx: 0,
    };
    let m = config.spend.clone();
    for h in 0..blocks {
        let mut due = std::mem::take(&mut sim.due[h as usize]);
        due.shuffle(&mut sim.rng);
        let mut fees = 0u64;
        let mut rest = &due[..];
        while !rest.is_empty() {
            let n = (sim.rng.random_range(1..=m.max_inputs) as usize).min(rest.len());
            let (inputs, tail) = rest.split_at(n);
            rest = tail;
            let total: u64 = inputs.iter().map(|&i| sim.outputs[i as usize].value).sum();
            let fee = (total as f64 * m.fee_fraction).floor() as u64;
            fees += fee;
            let parts = sim.rng.random_range(1..=m.max_outputs);
            for (vout, v) in sim.split(total - fee, parts).into_iter().enumerate() {
                sim.create(v, h, vout as u32);
            }
            sim.next_tx += 1;
        }
        sim.create(config.subsidy_at(u64::from(h)).0 + fees, h, 0);
        sim.next_tx += 1;
    }
    Ok(SyntheticChain { config: config.clone(), outputs: sim.outputs })
}

/// Closed-form subsidy total for the first `blocks` blocks.
pub fn scheduled_supply(config: &ChainConfig, blocks: u64) -> Amount {
    let mut total = 0u64;
    let mut height = 0u64;
    let mut era = 0u32;
    while height < blocks && era < 64 {
        let end = ((u64::from(era) + 1) * config.halving_interval).min(blocks);
        total += (end - height) * (config.initial_subsidy.0 >> era);
        height = end;
        era += 1;
    }
    Amount(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ChainConfig {
        ChainConfig { total_days: 20, block_interval_secs: 3600, seed, ..ChainConfig::default() }
    }

    #[test]
    fn no_spending_means_one_output_per_block() {
        let cfg = ChainConfig { spend: SpendModel::never(), ..small(1) };
        let chain = generate(&cfg).unwrap();
        assert_eq!(chain.len() as u64, cfg.block_count());
        assert!(chain.records().all(|r| r.spent.is_none()));
    }

    #[test]
    fn spends_are_after_birth_and_value_is_conserved() {
        let cfg = small(7);
        let chain = generate(&cfg).unwrap();
        let records = chain.to_records();
        assert!(records.iter().any(|r| r.spent.is_some()));
        assert!(records.iter().all(|r| r.spent.is_none_or(|s| s > r.born)));
        let alive: u64 = records.iter().filter(|r| r.spent.is_none()).map(|r| r.value.0).sum();
        let minted = scheduled_supply(&cfg, cfg.block_count()).0;
        assert_eq!(alive, minted);
    }

    #[test]
    fn raw_outpoints_are_unique() {
        let chain = generate(&small(3)).unwrap();
        let mut keys: Vec<_> = chain.raw_outputs().map(|o| (o.tx_id, o.output_index)).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
        assert_eq!(chain.raw_inputs().count(), chain.records().filter(|r| r.spent.is_some()).count());
    }

    #[test]
    fn offset_first_block_stays_inside_the_horizon() {
        let cfg = ChainConfig { first_block_offset_secs: 65_705, spend: SpendModel::never(), ..small(2) };
        let records = generate(&cfg).unwrap().to_records();
        let end = cfg.calendar().genesis_midnight().0 + 20 * 86_400;
        assert_eq!(records[0].born.0, cfg.calendar().genesis_midnight().0 + 65_705);
        assert!(records.iter().all(|r| r.born.0 < end));
        assert!(records.last().unwrap().born.0 + 3600 >= end);
    }

    #[test]
    fn seeds_are_deterministic() {
        let a = generate(&small(11)).unwrap().to_records();
        let b = generate(&small(11)).unwrap().to_records();
        let c = generate(&small(12)).unwrap().to_records();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scheduled_supply_matches_block_sum() {
        let cfg = ChainConfig { halving_interval: 2100, ..ChainConfig::default() };
        let direct: u64 = (0..10_000).map(|h| cfg.subsidy_at(h).0).sum();
        assert_eq!(scheduled_supply(&cfg, 10_000).0, direct);
        assert_eq!(scheduled_supply(&cfg, 2100 * 64).0, 20_999_999_976_900);
    }

    #[test]
    fn presets_and_validation() {
        assert_eq!(ChainConfig::preset("doge".parse().unwrap()).block_interval_secs, 60);
        assert_eq!(ChainConfig::preset(Preset::Zec).block_interval_secs, 75);
        assert!("eth".parse::<Preset>().is_err());
        let mut cfg = ChainConfig::default();
        cfg.spend.fee_fraction = 1.0;
        assert!(cfg.validate().is_err());
        cfg.spend.fee_fraction = 0.0;
        cfg.spend.daily_probability = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_parses_from_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("chain.toml");
        fs::write(&toml_path, "name = \"ltc\"\nblock_interval_secs = 150\nseed = 9\n[spend]\nfee_fraction = 0.0\n").unwrap();
        let cfg = ChainConfig::from_path(&toml_path).unwrap();
        assert_eq!((cfg.block_interval_secs, cfg.seed, cfg.spend.fee_fraction), (150, 9, 0.0));
        assert_eq!(cfg.spend.daily_probability, 0.05);

        let json_path = dir.path().join("chain.json");
        fs::write(&json_path, serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(ChainConfig::from_path(&json_path).unwrap(), cfg);
    }
}
