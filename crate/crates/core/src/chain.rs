//! Simulated proof-of-stake ledger: stake-weighted validator selection,
//! update validation, canonical block serialization with SHA-256 chaining,
//! reward accounting, and the delay formulas used by the analytics module.
//!
//! Canonical encoding: fixed field order, integers as 8-byte big-endian,
//! reals as IEEE-754 binary64 bit patterns, length-prefixed arrays. Hashes
//! are computed over exactly these bytes, so replays are bit-exact across
//! platforms.

use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Miner id recorded in the genesis block, which no device produced.
pub const GENESIS_MINER: u64 = u64::MAX;

pub type Hash = [u8; 32];

/// Per-device stakes with a cached total, iterated in ascending device id.
#[derive(Debug, Clone, PartialEq)]
pub struct StakeTable {
    stakes: BTreeMap<u64, f64>,
    total: f64,
}

impl StakeTable {
    /// Every listed device starts at `initial` stake.
    pub fn genesis(device_ids: impl IntoIterator<Item = u64>, initial: f64) -> Self {
        let stakes: BTreeMap<u64, f64> = device_ids.into_iter().map(|id| (id, initial)).collect();
        let total = stakes.values().sum();
        StakeTable { stakes, total }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (u64, f64)>) -> Self {
        let stakes: BTreeMap<u64, f64> = entries.into_iter().collect();
        let total = stakes.values().sum();
        StakeTable { stakes, total }
    }

    pub fn stake(&self, device_id: u64) -> f64 {
        self.stakes.get(&device_id).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.stakes.iter().map(|(id, s)| (*id, *s))
    }

    pub fn snapshot(&self) -> Vec<(u64, f64)> {
        self.iter().collect()
    }

    /// Restrict to a subset of devices (e.g. the miners eligible to mine).
    pub fn restricted_to(&self, device_ids: &[u64]) -> StakeTable {
        StakeTable::from_entries(self.iter().filter(|(id, _)| device_ids.contains(id)))
    }

    fn add(&mut self, device_id: u64, amount: f64) {
        *self.stakes.entry(device_id).or_insert(0.0) += amount;
        // Totals are re-derived rather than incrementally updated.
        self.total = self.stakes.values().sum();
    }
}

/// Inverse-CDF sampling over stake intervals laid out in ascending device-id
/// order: the device whose cumulative interval contains `draw * total` wins.
pub fn select_validator(stakes: &StakeTable, rng_draw: f64) -> Result<u64> {
    if stakes.total <= 0.0 {
        return Err(Error::argument(format!(
            "validator selection needs positive total stake, got {}",
            stakes.total
        )));
    }
    if !(0.0..1.0).contains(&rng_draw) {
        return Err(Error::argument(format!(
            "rng draw {rng_draw} outside [0, 1)"
        )));
    }
    let target = rng_draw * stakes.total;
    let mut acc = 0.0;
    let mut last = None;
    for (id, stake) in stakes.iter() {
        acc += stake;
        last = Some(id);
        if target < acc {
            return Ok(id);
        }
    }
    // Rounding can leave acc fractionally below total; the draw belongs to
    // the last interval.
    last.ok_or_else(|| Error::argument("empty stake table".to_string()))
}

/// Time for one block to be created and validated: `max(t, L) + t`.
pub fn block_time(t_create: f64, latency: f64) -> f64 {
    t_create.max(latency) + t_create
}

/// Stake-weighted expected block time, computed exactly as written:
/// `(1 / sum prob_i) * sum prob_i * T_i` (the denominator is identically 1).
pub fn expected_block_time(stakes: &StakeTable, per_node_time: &BTreeMap<u64, f64>) -> Result<f64> {
    if stakes.total <= 0.0 {
        return Err(Error::argument(
            "expected block time needs positive total stake".to_string(),
        ));
    }
    let mut prob_sum = 0.0;
    let mut weighted = 0.0;
    for (id, stake) in stakes.iter() {
        let prob = stake / stakes.total;
        let t = per_node_time
            .get(&id)
            .ok_or_else(|| Error::argument(format!("no block time supplied for device {id}")))?;
        prob_sum += prob;
        weighted += prob * t;
    }
    Ok(weighted / prob_sum)
}

/// Payload a worker's update carries into a block.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdatePayload {
    Params(Vec<f64>),
    Digest(Hash),
}

impl UpdatePayload {
    pub fn params(&self) -> Option<&[f64]> {
        match self {
            UpdatePayload::Params(p) => Some(p),
            UpdatePayload::Digest(_) => None,
        }
    }

    /// Replace full parameters with their canonical SHA-256 digest.
    pub fn digested(&self) -> UpdatePayload {
        match self {
            UpdatePayload::Digest(d) => UpdatePayload::Digest(*d),
            UpdatePayload::Params(p) => {
                let mut enc = Encoder::new();
                enc.f64_array(p);
                let mut hasher = Sha256::new();
                hasher.update(&enc.bytes);
                UpdatePayload::Digest(hasher.finalize().into())
            }
        }
    }
}

/// A worker's signed-by-role training result for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelUpdate {
    pub device_id: u64,
    pub round: u64,
    pub payload: UpdatePayload,
    pub n_samples: u64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub wall_time_s: f64,
}

/// Why a model update was not accepted.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    NonFinite,
    LowAccuracy { accuracy: f64, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// Validate one update: reject non-finite parameters outright, then accept
/// iff the update's model scores at least `tau` on the miner's validation
/// slice. `eval_accuracy` is the miner's evaluation of a parameter vector.
pub fn validate_update(
    update: &ModelUpdate,
    tau: f64,
    eval_accuracy: impl FnOnce(&[f64]) -> Result<f64>,
) -> Result<Verdict> {
    if let Some(params) = update.payload.params() {
        if params.iter().any(|p| !p.is_finite()) {
            return Ok(Verdict::Reject(RejectReason::NonFinite));
        }
        // Accuracy is never negative, so tau <= 0 accepts any finite update.
        if tau <= 0.0 {
            return Ok(Verdict::Accept);
        }
        let accuracy = eval_accuracy(params)?;
        if accuracy >= tau {
            Ok(Verdict::Accept)
        } else {
            Ok(Verdict::Reject(RejectReason::LowAccuracy {
                accuracy,
                threshold: tau,
            }))
        }
    } else {
        Err(Error::argument(
            "cannot validate a digest-only update; validation happens before digestion".to_string(),
        ))
    }
}

/// One block of the simulated ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Hash,
    pub timestamp_s: f64,
    pub miner_id: u64,
    pub updates: Vec<ModelUpdate>,
    pub stake_snapshot: Vec<(u64, f64)>,
    pub block_hash: Hash,
}

struct Encoder {
    bytes: Vec<u8>,
}

impl Encoder {
    fn new() -> Self {
        Encoder { bytes: Vec::new() }
    }

    fn u64(&mut self, v: u64) {
        self.bytes.extend_from_slice(&v.to_be_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_bits().to_be_bytes());
    }

    fn hash(&mut self, h: &Hash) {
        self.bytes.extend_from_slice(h);
    }

    fn f64_array(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.f64(*v);
        }
    }

    fn update(&mut self, u: &ModelUpdate) {
        self.u64(u.device_id);
        self.u64(u.round);
        match &u.payload {
            UpdatePayload::Params(p) => {
                self.bytes.push(0);
                self.f64_array(p);
            }
            UpdatePayload::Digest(d) => {
                self.bytes.push(1);
                self.hash(d);
            }
        }
        self.u64(u.n_samples);
        self.f64(u.train_loss);
        self.f64(u.train_accuracy);
        self.f64(u.wall_time_s);
    }

    fn block_body(&mut self, b: &Block) {
        self.u64(b.index);
        self.hash(&b.prev_hash);
        self.f64(b.timestamp_s);
        self.u64(b.miner_id);
        self.u64(b.updates.len() as u64);
        for u in &b.updates {
            self.update(u);
        }
        self.u64(b.stake_snapshot.len() as u64);
        for (id, stake) in &b.stake_snapshot {
            self.u64(*id);
            self.f64(*stake);
        }
    }
}

struct Decoder<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + len > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.offset,
                what: format!("ledger truncated reading {what}"),
            });
        }
        let slice = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(slice)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    fn len_prefix(&mut self, what: &str) -> Result<usize> {
        let len = self.u64(what)?;
        // Every element is at least one byte, so a length beyond the
        // remaining input is corrupt rather than merely large.
        if len as usize > self.bytes.len() - self.offset {
            return Err(Error::Parse {
                offset: self.offset - 8,
                what: format!("implausible length {len} for {what}"),
            });
        }
        Ok(len as usize)
    }

    fn hash(&mut self, what: &str) -> Result<Hash> {
        let b = self.take(32, what)?;
        Ok(b.try_into().expect("32 bytes"))
    }

    fn update(&mut self) -> Result<ModelUpdate> {
        let device_id = self.u64("update device id")?;
        let round = self.u64("update round")?;
        let tag = self.take(1, "payload tag")?[0];
        let payload = match tag {
            0 => {
                let len = self.len_prefix("params array")?;
                let mut params = Vec::with_capacity(len);
                for _ in 0..len {
                    params.push(self.f64("param")?);
                }
                UpdatePayload::Params(params)
            }
            1 => UpdatePayload::Digest(self.hash("params digest")?),
            other => {
                return Err(Error::Parse {
                    offset: self.offset - 1,
                    what: format!("unknown payload tag {other}"),
                })
            }
        };
        Ok(ModelUpdate {
            device_id,
            round,
            payload,
            n_samples: self.u64("update sample count")?,
            train_loss: self.f64("update train loss")?,
            train_accuracy: self.f64("update train accuracy")?,
            wall_time_s: self.f64("update wall time")?,
        })
    }

    fn block(&mut self) -> Result<Block> {
        let index = self.u64("block index")?;
        let prev_hash = self.hash("prev hash")?;
        let timestamp_s = self.f64("timestamp")?;
        let miner_id = self.u64("miner id")?;
        let n_updates = self.len_prefix("updates array")?;
        let mut updates = Vec::with_capacity(n_updates);
        for _ in 0..n_updates {
            updates.push(self.update()?);
        }
        let n_stakes = self.len_prefix("stake snapshot")?;
        let mut stake_snapshot = Vec::with_capacity(n_stakes);
        for _ in 0..n_stakes {
            let id = self.u64("snapshot device id")?;
            let stake = self.f64("snapshot stake")?;
            stake_snapshot.push((id, stake));
        }
        let block_hash = self.hash("block hash")?;
        Ok(Block {
            index,
            prev_hash,
            timestamp_s,
            miner_id,
            updates,
            stake_snapshot,
            block_hash,
        })
    }
}

/// SHA-256 over the canonical serialization of everything except the stored
/// hash itself.
pub fn block_hash(block: &Block) -> Hash {
    let mut enc = Encoder::new();
    enc.block_body(block);
    let mut hasher = Sha256::new();
    hasher.update(&enc.bytes);
    hasher.finalize().into()
}

/// Append-only chain of blocks starting from a genesis block.
#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    blocks: Vec<Block>,
}

/// Verdict of a full-chain audit.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainCheck {
    Ok,
    BadBlock { index: u64, reason: String },
}

impl Ledger {
    /// Start a chain with an empty genesis block over the given stakes.
    pub fn genesis(stakes: &StakeTable) -> Ledger {
        let mut genesis = Block {
            index: 0,
            prev_hash: [0u8; 32],
            timestamp_s: 0.0,
            miner_id: GENESIS_MINER,
            updates: Vec::new(),
            stake_snapshot: stakes.snapshot(),
            block_hash: [0u8; 32],
        };
        genesis.block_hash = block_hash(&genesis);
        Ledger {
            blocks: vec![genesis],
        }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("ledger always has genesis")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Assemble, hash, and append the next block. The parent is re-hashed
    /// first so appending to a tampered chain fails loudly.
    pub fn append_block(
        &mut self,
        updates: Vec<ModelUpdate>,
        miner_id: u64,
        stake_snapshot: Vec<(u64, f64)>,
        timestamp_s: f64,
    ) -> Result<&Block> {
        let parent = self.tip();
        if block_hash(parent) != parent.block_hash {
            return Err(Error::Integrity(format!(
                "parent block {} hash mismatch; refusing to extend a tampered chain",
                parent.index
            )));
        }
        let mut block = Block {
            index: parent.index + 1,
            prev_hash: parent.block_hash,
            timestamp_s,
            miner_id,
            updates,
            stake_snapshot,
            block_hash: [0u8; 32],
        };
        block.block_hash = block_hash(&block);
        self.blocks.push(block);
        Ok(self.tip())
    }

    /// Recompute every hash and parent link; returns the first violation.
    pub fn validate_chain(&self) -> ChainCheck {
        if self.blocks.is_empty() {
            return ChainCheck::BadBlock {
                index: 0,
                reason: "empty ledger".to_string(),
            };
        }
        for (pos, block) in self.blocks.iter().enumerate() {
            if block.index != pos as u64 {
                return ChainCheck::BadBlock {
                    index: pos as u64,
                    reason: format!("block at position {pos} claims index {}", block.index),
                };
            }
            if pos == 0 {
                if block.prev_hash != [0u8; 32] {
                    return ChainCheck::BadBlock {
                        index: 0,
                        reason: "genesis prev_hash is not zero".to_string(),
                    };
                }
            } else if block.prev_hash != self.blocks[pos - 1].block_hash {
                return ChainCheck::BadBlock {
                    index: pos as u64,
                    reason: "parent hash link broken".to_string(),
                };
            }
            if block_hash(block) != block.block_hash {
                return ChainCheck::BadBlock {
                    index: pos as u64,
                    reason: "stored hash does not match recomputed hash".to_string(),
                };
            }
        }
        ChainCheck::Ok
    }

    /// Canonical persistence format: the blocks back to back, each with its
    /// stored hash appended after the body.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        for block in &self.blocks {
            enc.block_body(block);
            enc.hash(&block.block_hash);
        }
        enc.bytes
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Ledger> {
        let mut dec = Decoder { bytes, offset: 0 };
        let mut blocks = Vec::new();
        while dec.offset < bytes.len() {
            blocks.push(dec.block()?);
        }
        if blocks.is_empty() {
            return Err(Error::Parse {
                offset: 0,
                what: "ledger file contains no blocks".to_string(),
            });
        }
        Ok(Ledger { blocks })
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: &Path) -> Result<Ledger> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ledger::from_bytes(&bytes)
    }
}

/// Reward amounts credited when a block lands.
#[derive(Debug, Clone, Copy)]
pub struct RewardRule {
    pub r_update: f64,
    pub r_block: f64,
}

/// Credit each recorded update's worker with `r_update` and the block's
/// miner with `r_block`; totals are re-derived.
pub fn apply_rewards(stakes: &StakeTable, block: &Block, rule: &RewardRule) -> StakeTable {
    let mut out = stakes.clone();
    if block.miner_id == GENESIS_MINER {
        return out;
    }
    for update in &block.updates {
        out.add(update.device_id, rule.r_update);
    }
    out.add(block.miner_id, rule.r_block);
    out
}
