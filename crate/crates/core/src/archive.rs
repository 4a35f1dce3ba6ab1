//! Single-file fit archives.
//!
//! Layout: the 8 bytes `LAGGARD\0`, a little-endian `u32` manifest length,
//! the UTF-8 JSON manifest, then the data blocks back to back. The manifest
//! lists every block with its byte offset (from the end of the manifest),
//! element type and length, plus a SHA-256 of the block region. Numeric
//! blocks are little-endian IEEE-754 `f64`, `u32` or `u8`; JSON blocks hold
//! structured records.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ExposureMatrix, ModifierTable};
use crate::error::{Error, Result};
use crate::mcmc::{DrawMatrix, FitMeta, InteractionBlock, IterationLog, MoveLedger, PosteriorFit};
use crate::tree::MemberRecord;

pub const MAGIC: &[u8; 8] = b"LAGGARD\0";
pub const FORMAT_VERSION: &str = "1.0";
const FORMAT_MAJOR: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F64,
    U32,
    U8,
    Json,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::U32 => 4,
            Dtype::U8 | Dtype::Json => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub dtype: Dtype,
    pub offset: u64,
    /// Element count (bytes for JSON blocks).
    pub len: u64,
    /// Row width for matrices, 1 otherwise.
    pub cols: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: String,
    pub meta: FitMeta,
    pub draws: usize,
    pub violation_count: usize,
    pub invariant_violations: Vec<String>,
    pub blocks: Vec<BlockInfo>,
    pub sha256: String,
}

#[derive(Default)]
struct Writer {
    blocks: Vec<BlockInfo>,
    bytes: Vec<u8>,
}

impl Writer {
    fn push(&mut self, name: &str, dtype: Dtype, len: usize, cols: usize, data: impl FnOnce(&mut Vec<u8>)) {
        let offset = self.bytes.len() as u64;
        data(&mut self.bytes);
        debug_assert_eq!(self.bytes.len() as u64 - offset, (len * dtype.width()) as u64);
        self.blocks.push(BlockInfo {
            name: name.to_string(),
            dtype,
            offset,
            len: len as u64,
            cols: cols as u64,
        });
    }

    fn f64s(&mut self, name: &str, cols: usize, v: &[f64]) {
        self.push(name, Dtype::F64, v.len(), cols, |b| v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes())));
    }

    fn u32s(&mut self, name: &str, cols: usize, v: &[u32]) {
        self.push(name, Dtype::U32, v.len(), cols, |b| v.iter().for_each(|x| b.extend_from_slice(&x.to_le_bytes())));
    }

    fn u8s(&mut self, name: &str, cols: usize, v: &[u8]) {
        self.push(name, Dtype::U8, v.len(), cols, |b| b.extend_from_slice(v));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let s = serde_json::to_vec(value)?;
        self.push(name, Dtype::Json, s.len(), 1, |b| b.extend_from_slice(&s));
        Ok(())
    }
}

fn ledger_words(l: &MoveLedger) -> impl Iterator<Item = u32> + '_ {
    l.proposed.iter().chain(&l.accepted).chain(&l.rejected).copied()
}

/// Serialize a fit. Identical fits give identical bytes.
pub fn to_bytes(fit: &PosteriorFit) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.f64s("gamma", fit.gamma_draws.cols, &fit.gamma_draws.values);
    w.f64s("sigma2", 1, &fit.sigma2_draws);
    w.f64s("tau2", 1, &fit.tau2_draws);
    for (k, th) in fit.theta_draws.iter().enumerate() {
        w.f64s(&format!("theta/{k}"), th.cols, &th.values);
    }
    let mut offsets = Vec::with_capacity(fit.interaction_draws.len() + 1);
    let mut cells = Vec::new();
    let mut values = Vec::new();
    offsets.push(0u32);
    for blocks in &fit.interaction_draws {
        for b in blocks {
            cells.extend([b.pair as u32, b.lags1.0 as u32, b.lags1.1 as u32, b.lags2.0 as u32, b.lags2.1 as u32]);
            values.push(b.value);
        }
        offsets.push(values.len() as u32);
    }
    if !fit.interaction_draws.is_empty() {
        w.u32s("interaction/offsets", 1, &offsets);
        w.u32s("interaction/cells", 5, &cells);
        w.f64s("interaction/values", 1, &values);
    }
    w.u32s("selection_counts", fit.exposure_selection_counts.cols, &fit.exposure_selection_counts.values);
    w.u8s("modifier_usage", fit.modifier_usage.cols, &fit.modifier_usage.values);
    w.f64s("contribution_var", 1, &fit.contribution_var);
    let words: Vec<u32> = fit
        .tree_logs
        .iter()
        .flat_map(|l| ledger_words(&l.dlm).chain(ledger_words(&l.modifier)).collect::<Vec<_>>())
        .collect();
    w.u32s("tree_logs/moves", 18, &words);
    let sizes: Vec<f64> = fit
        .tree_logs
        .iter()
        .flat_map(|l| [l.mean_dlm_leaves, l.mean_modifier_leaves])
        .collect();
    w.f64s("tree_logs/sizes", 2, &sizes);
    if !fit.het_records.is_empty() {
        w.json("het_records", &fit.het_records)?;
    }
    for (k, e) in fit.exposures.iter().enumerate() {
        w.f64s(&format!("exposure/{k}"), e.lags(), e.values());
    }
    w.json("modifiers", &fit.modifiers)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION.to_string(),
        meta: fit.meta.clone(),
        draws: fit.draws(),
        violation_count: fit.violation_count,
        invariant_violations: fit.invariant_violations.clone(),
        blocks: w.blocks,
        sha256: hex(&Sha256::digest(&w.bytes)),
    };
    let m = serde_json::to_vec_pretty(&manifest)?;
    let mut out = Vec::with_capacity(12 + m.len() + w.bytes.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m.len() as u32).to_le_bytes());
    out.extend_from_slice(&m);
    out.extend_from_slice(&w.bytes);
    Ok(out)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Archive(msg.into())
}

fn split_header(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(corrupt("not a laggard archive"));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| corrupt("truncated manifest"))?;
    let value: serde_json::Value = serde_json::from_slice(body).map_err(|e| corrupt(format!("bad manifest: {e}")))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| corrupt("manifest has no format_version"))?;
    let major = version
        .split('.')
        .next()
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| corrupt("bad format version"))?;
    if major != FORMAT_MAJOR {
        return Err(corrupt(format!(
            "unsupported archive format {version} (this build reads {FORMAT_MAJOR}.x)"
        )));
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| corrupt(format!("bad manifest: {e}")))?;
    Ok((manifest, &bytes[12 + len..]))
}

/// Read only the manifest.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    split_header(bytes).map(|(m, _)| m)
}

struct Reader<'a> {
    manifest: &'a Manifest,
    data: &'a [u8],
}

impl<'a> Reader<'a> {
    fn raw(&self, name: &str, dtype: Dtype) -> Result<Option<(&'a [u8], usize)>> {
        let Some(b) = self.manifest.blocks.iter().find(|b| b.name == name) else {
            return Ok(None);
        };
        if b.dtype != dtype {
            return Err(corrupt(format!("block `{name}` has the wrong type")));
        }
        let start = b.offset as usize;
        let end = start + b.len as usize * dtype.width();
        let slice = self.data.get(start..end).ok_or_else(|| corrupt(format!("block `{name}` is truncated")))?;
        Ok(Some((slice, b.cols as usize)))
    }

    fn need(&self, name: &str, dtype: Dtype) -> Result<(&'a [u8], usize)> {
        self.raw(name, dtype)?.ok_or_else(|| corrupt(format!("missing block `{name}`")))
    }

    fn f64s(&self, name: &str) -> Result<DrawMatrix<f64>> {
        let (b, cols) = self.need(name, Dtype::F64)?;
        Ok(DrawMatrix {
            cols,
            values: b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        })
    }

    fn u32s(&self, name: &str) -> Result<DrawMatrix<u32>> {
        let (b, cols) = self.need(name, Dtype::U32)?;
        Ok(DrawMatrix {
            cols,
            values: b.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect(),
        })
    }

    fn json<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<Option<T>> {
        match self.raw(name, Dtype::Json)? {
            Some((b, _)) => Ok(Some(
                serde_json::from_slice(b).map_err(|e| corrupt(format!("block `{name}`: {e}")))?,
            )),
            None => Ok(None),
        }
    }
}

fn ledger(words: &[u32]) -> MoveLedger {
    MoveLedger {
        proposed: [words[0], words[1], words[2]],
        accepted: [words[3], words[4], words[5]],
        rejected: [words[6], words[7], words[8]],
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<PosteriorFit> {
    let (manifest, data) = split_header(bytes)?;
    if hex(&Sha256::digest(data)) != manifest.sha256 {
        return Err(corrupt("checksum mismatch"));
    }
    let r = Reader {
        manifest: &manifest,
        data,
    };
    let meta = manifest.meta.clone();
    let m = meta.exposure_names.len();
    let theta_draws = (0..m).map(|k| r.f64s(&format!("theta/{k}"))).collect::<Result<Vec<_>>>()?;
    let interaction_draws = match r.raw("interaction/offsets", Dtype::U32)? {
        None => Vec::new(),
        Some(_) => {
            let offsets = r.u32s("interaction/offsets")?.values;
            let cells = r.u32s("interaction/cells")?.values;
            let values = r.f64s("interaction/values")?.values;
            if cells.len() != 5 * values.len() || offsets.last().copied() != Some(values.len() as u32) {
                return Err(corrupt("interaction blocks are inconsistent"));
            }
            offsets
                .windows(2)
                .map(|w| {
                    (w[0] as usize..w[1] as usize)
                        .map(|i| {
                            let c = &cells[5 * i..5 * i + 5];
                            InteractionBlock {
                                pair: c[0] as usize,
                                lags1: (c[1] as usize, c[2] as usize),
                                lags2: (c[3] as usize, c[4] as usize),
                                value: values[i],
                            }
                        })
                        .collect()
                })
                .collect()
        }
    };
    let (usage, usage_cols) = r.need("modifier_usage", Dtype::U8)?;
    let moves = r.u32s("tree_logs/moves")?.values;
    let sizes = r.f64s("tree_logs/sizes")?.values;
    if moves.len() / 18 != sizes.len() / 2 {
        return Err(corrupt("tree logs are inconsistent"));
    }
    let tree_logs = moves
        .chunks_exact(18)
        .zip(sizes.chunks_exact(2))
        .map(|(w, s)| IterationLog {
            dlm: ledger(&w[..9]),
            modifier: ledger(&w[9..]),
            mean_dlm_leaves: s[0],
            mean_modifier_leaves: s[1],
        })
        .collect();
    let exposures = (0..m)
        .map(|k| {
            let d = r.f64s(&format!("exposure/{k}"))?;
            let rows = d.rows();
            ExposureMatrix::new(meta.exposure_names[k].clone(), rows, d.cols, d.values)
                .map(|e| e.with_scale(meta.scale_factors[k]))
        })
        .collect::<Result<Vec<_>>>()?;
    let het_records: Vec<Vec<MemberRecord>> = r.json("het_records")?.unwrap_or_default();
    let modifiers: ModifierTable = r.json("modifiers")?.unwrap_or_default();
    let fit = PosteriorFit {
        gamma_draws: r.f64s("gamma")?,
        sigma2_draws: r.f64s("sigma2")?.values,
        tau2_draws: r.f64s("tau2")?.values,
        theta_draws,
        interaction_draws,
        exposure_selection_counts: r.u32s("selection_counts")?,
        modifier_usage: DrawMatrix {
            cols: usage_cols,
            values: usage.to_vec(),
        },
        contribution_var: r.f64s("contribution_var")?.values,
        tree_logs,
        het_records,
        invariant_violations: manifest.invariant_violations.clone(),
        violation_count: manifest.violation_count,
        exposures,
        modifiers,
        meta,
    };
    if fit.draws() != manifest.draws {
        return Err(corrupt("draw count does not match the manifest"));
    }
    Ok(fit)
}

pub fn write_archive(fit: &PosteriorFit, path: &Path) -> Result<()> {
    let bytes = to_bytes(fit)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_archive(path: &Path) -> Result<PosteriorFit> {
    from_bytes(&fs::read(path)?)
}
