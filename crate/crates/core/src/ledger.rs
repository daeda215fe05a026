//! Append-only, hash-chained record of token transactions.
//!
//! Canonical block bytes (big-endian):
//!
//! ```text
//! index u64 ‖ prev_hash [32] ‖ tx_count u32 ‖ tx_count × (round u32 ‖ client u32 ‖ kind u8 ‖ amount u64)
//! ```
//!
//! `block_hash = SHA-256(canonical bytes)` is stored right after them. A ledger
//! file is `"FTLG" ‖ version u16 (= 1) ‖ blocks…`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tokenomics::RoundAllocation;

pub const LEDGER_MAGIC: &[u8; 4] = b"FTLG";
pub const LEDGER_VERSION: u16 = 1;
pub const HASH_LEN: usize = 32;
const FILE_HEADER_LEN: usize = 6;
const BLOCK_FIXED_LEN: usize = 8 + HASH_LEN + 4;
const TX_LEN: usize = 4 + 4 + 1 + 8;

pub type Hash = [u8; HASH_LEN];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum TxKind {
    Contribution = 0,
    Participation = 1,
}

impl TxKind {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(TxKind::Contribution),
            1 => Some(TxKind::Participation),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenTransaction {
    pub round: u32,
    pub client_id: u32,
    pub kind: TxKind,
    pub amount_microtokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub index: u64,
    pub prev_hash: Hash,
    pub txs: Vec<TokenTransaction>,
    pub block_hash: Hash,
}

impl Block {
    /// Bytes covered by the hash.
    pub fn canonical_bytes(index: u64, prev_hash: &Hash, txs: &[TokenTransaction]) -> Vec<u8> {
        let mut out = Vec::with_capacity(BLOCK_FIXED_LEN + TX_LEN * txs.len());
        out.extend_from_slice(&index.to_be_bytes());
        out.extend_from_slice(prev_hash);
        out.extend_from_slice(&(txs.len() as u32).to_be_bytes());
        for tx in txs {
            out.extend_from_slice(&tx.round.to_be_bytes());
            out.extend_from_slice(&tx.client_id.to_be_bytes());
            out.push(tx.kind as u8);
            out.extend_from_slice(&tx.amount_microtokens.to_be_bytes());
        }
        out
    }

    pub fn compute_hash(&self) -> Hash {
        sha256(&Self::canonical_bytes(self.index, &self.prev_hash, &self.txs))
    }

    /// Canonical bytes followed by the stored hash.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Self::canonical_bytes(self.index, &self.prev_hash, &self.txs);
        out.extend_from_slice(&self.block_hash);
        out
    }

    /// Round this block records (blocks are one per round, starting at 1).
    pub fn round(&self) -> u32 {
        self.index as u32 + 1
    }
}

fn sha256(bytes: &[u8]) -> Hash {
    let mut out = [0u8; HASH_LEN];
    out.copy_from_slice(&Sha256::digest(bytes));
    out
}

/// Outcome of a chain verification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    Ok { blocks: u64 },
    /// Index of the first block whose hash, link, index or encoding is wrong.
    /// Damage to the file header is reported as block 0.
    Tampered { first_bad_index: u64 },
}

impl Verification {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verification::Ok { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Chain {
    blocks: Vec<Block>,
}

impl Chain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip_hash(&self) -> Hash {
        self.blocks.last().map_or([0u8; HASH_LEN], |b| b.block_hash)
    }

    pub fn next_round(&self) -> u32 {
        self.blocks.len() as u32 + 1
    }

    /// Records one round's allocation as the next block.
    pub fn append_block(&mut self, round: u32, allocation: &RoundAllocation) -> Result<&Block> {
        let expected = self.next_round();
        if round != expected || allocation.round != expected {
            return Err(Error::Sequencing {
                expected,
                got: if round != expected { round } else { allocation.round },
            });
        }
        let mut txs: Vec<TokenTransaction> = allocation
            .contribution_awards
            .iter()
            .map(|(&c, &a)| (c, TxKind::Contribution, a))
            .chain(
                allocation
                    .participation_awards
                    .iter()
                    .map(|(&c, &a)| (c, TxKind::Participation, a)),
            )
            .filter(|&(_, _, a)| a > 0)
            .map(|(client_id, kind, amount_microtokens)| TokenTransaction {
                round,
                client_id,
                kind,
                amount_microtokens,
            })
            .collect();
        txs.sort_by_key(|t| (t.client_id, t.kind));

        let index = self.blocks.len() as u64;
        let prev_hash = self.tip_hash();
        let block_hash = sha256(&Block::canonical_bytes(index, &prev_hash, &txs));
        self.blocks.push(Block {
            index,
            prev_hash,
            txs,
            block_hash,
        });
        Ok(self.blocks.last().expect("just pushed"))
    }

    /// Recomputes every hash and link.
    pub fn verify(&self) -> Verification {
        let mut prev = [0u8; HASH_LEN];
        for (k, b) in self.blocks.iter().enumerate() {
            if b.index != k as u64 || b.prev_hash != prev || b.compute_hash() != b.block_hash {
                return Verification::Tampered {
                    first_bad_index: k as u64,
                };
            }
            prev = b.block_hash;
        }
        Verification::Ok {
            blocks: self.blocks.len() as u64,
        }
    }

    pub fn balance_of(&self, client_id: u32) -> u64 {
        self.blocks
            .iter()
            .flat_map(|b| &b.txs)
            .filter(|t| t.client_id == client_id)
            .map(|t| t.amount_microtokens)
            .sum()
    }

    pub fn balances(&self) -> BTreeMap<u32, u64> {
        let mut out = BTreeMap::new();
        for t in self.blocks.iter().flat_map(|b| &b.txs) {
            *out.entry(t.client_id).or_insert(0) += t.amount_microtokens;
        }
        out
    }

    pub fn total_issued(&self) -> u64 {
        self.blocks
            .iter()
            .flat_map(|b| &b.txs)
            .map(|t| t.amount_microtokens)
            .sum()
    }

    /// The allocation recorded for round `t`.
    pub fn query_round(&self, round: u32) -> Result<RoundAllocation> {
        let block = round
            .checked_sub(1)
            .and_then(|i| self.blocks.get(i as usize))
            .ok_or(Error::RoundNotFound(round))?;
        let mut alloc = RoundAllocation {
            round,
            ..Default::default()
        };
        for t in &block.txs {
            let map = match t.kind {
                TxKind::Contribution => &mut alloc.contribution_awards,
                TxKind::Participation => &mut alloc.participation_awards,
            };
            *map.entry(t.client_id).or_insert(0) += t.amount_microtokens;
            alloc.total_issued += t.amount_microtokens;
        }
        Ok(alloc)
    }

    /// Rounds in which `client_id` was in the cohort but earned nothing.
    /// `cohorts` maps round to cohort, as recorded in the run metrics.
    pub fn missing_contributions(&self, client_id: u32, cohorts: &BTreeMap<u32, Vec<u32>>) -> Vec<u32> {
        cohorts
            .iter()
            .filter(|(_, c)| c.contains(&client_id))
            .filter(|(&t, _)| {
                self.blocks
                    .get(t as usize - 1)
                    .is_some_and(|b| !b.txs.iter().any(|x| x.client_id == client_id))
            })
            .map(|(&t, _)| t)
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = file_header();
        for b in &self.blocks {
            out.extend_from_slice(&b.to_bytes());
        }
        out
    }

    /// Parses a ledger file. Fails on any structural damage; use
    /// [`verify_bytes`] to locate tampering instead.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match parse(bytes) {
            (blocks, None) => Ok(Self { blocks }),
            (_, Some(bad)) => Err(Error::LedgerFormat(format!("block {bad} is damaged"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn file_header() -> Vec<u8> {
    let mut out = LEDGER_MAGIC.to_vec();
    out.extend_from_slice(&LEDGER_VERSION.to_be_bytes());
    out
}

/// Parses as many valid blocks as possible and reports the first bad one.
fn parse(bytes: &[u8]) -> (Vec<Block>, Option<u64>) {
    let mut blocks = Vec::new();
    if bytes.len() < FILE_HEADER_LEN
        || &bytes[..4] != LEDGER_MAGIC
        || u16::from_be_bytes([bytes[4], bytes[5]]) != LEDGER_VERSION
    {
        return (blocks, Some(0));
    }
    let mut pos = FILE_HEADER_LEN;
    let mut prev = [0u8; HASH_LEN];
    while pos < bytes.len() {
        let k = blocks.len() as u64;
        match parse_block(&bytes[pos..]) {
            Some((block, used)) if block.index == k && block.prev_hash == prev && block.compute_hash() == block.block_hash => {
                prev = block.block_hash;
                blocks.push(block);
                pos += used;
            }
            _ => return (blocks, Some(k)),
        }
    }
    (blocks, None)
}

fn parse_block(bytes: &[u8]) -> Option<(Block, usize)> {
    if bytes.len() < BLOCK_FIXED_LEN {
        return None;
    }
    let index = u64::from_be_bytes(bytes[0..8].try_into().ok()?);
    let prev_hash: Hash = bytes[8..40].try_into().ok()?;
    let count = u32::from_be_bytes(bytes[40..44].try_into().ok()?) as usize;
    let body_len = count.checked_mul(TX_LEN)?;
    let total = BLOCK_FIXED_LEN.checked_add(body_len)?.checked_add(HASH_LEN)?;
    if bytes.len() < total {
        return None;
    }
    let mut txs = Vec::with_capacity(count);
    for chunk in bytes[BLOCK_FIXED_LEN..BLOCK_FIXED_LEN + body_len].chunks_exact(TX_LEN) {
        txs.push(TokenTransaction {
            round: u32::from_be_bytes(chunk[0..4].try_into().ok()?),
            client_id: u32::from_be_bytes(chunk[4..8].try_into().ok()?),
            kind: TxKind::from_byte(chunk[8])?,
            amount_microtokens: u64::from_be_bytes(chunk[9..17].try_into().ok()?),
        });
    }
    let block_hash: Hash = bytes[total - HASH_LEN..total].try_into().ok()?;
    Some((
        Block {
            index,
            prev_hash,
            txs,
            block_hash,
        },
        total,
    ))
}

/// Verifies a persisted ledger image.
pub fn verify_bytes(bytes: &[u8]) -> Verification {
    match parse(bytes) {
        (blocks, None) => Verification::Ok {
            blocks: blocks.len() as u64,
        },
        (_, Some(k)) => Verification::Tampered { first_bad_index: k },
    }
}

pub fn verify_file(path: &Path) -> Result<Verification> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(verify_bytes(&bytes))
}

/// Append-only ledger file, written block by block as rounds settle.
pub struct LedgerWriter {
    file: File,
    path: std::path::PathBuf,
}

impl LedgerWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&file_header()).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, block: &Block) -> Result<()> {
        self.file
            .write_all(&block.to_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
