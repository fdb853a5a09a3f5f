//! Offline stage: per-patch dictionaries of `(boundary trace, local field)`
//! pairs, their binary file format, and tangent-space diagnostics.
//!
//! File layout: the magic `TSDICT1`, a little-endian `u64` header length,
//! a JSON header, the little-endian `f64` arrays it declares, and a trailing
//! little-endian `u64` FNV-1a checksum of all preceding bytes.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::weighted_distance_sq;
use crate::problem::{Problem, ProblemDescription};
use crate::sampler::{stream_rng, SamplerConfig};

const MAGIC: &[u8; 7] = b"TSDICT1";
const FORMAT_VERSION: u32 = 1;
/// Extra attempts per sample after a failed local solve.
pub const MAX_RETRIES: usize = 3;

/// Samples for one dictionary slot, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    /// Patch the samples were drawn on.
    pub patch: usize,
    pub trace_len: usize,
    pub field_len: usize,
    pub traces: Vec<f64>,
    pub fields: Vec<f64>,
    /// Failed local solves that were replaced by a fresh draw.
    pub retries: usize,
}

impl Dictionary {
    pub fn len(&self) -> usize {
        if self.trace_len > 0 {
            self.traces.len() / self.trace_len
        } else if self.field_len > 0 {
            self.fields.len() / self.field_len
        } else {
            0
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn trace(&self, i: usize) -> &[f64] {
        &self.traces[i * self.trace_len..(i + 1) * self.trace_len]
    }

    #[inline]
    pub fn field(&self, i: usize) -> &[f64] {
        &self.fields[i * self.field_len..(i + 1) * self.field_len]
    }

    pub fn push(&mut self, trace: &[f64], field: &[f64]) -> Result<()> {
        if trace.len() != self.trace_len || field.len() != self.field_len {
            return Err(Error::InvalidInput("entry shape does not match dictionary".into()));
        }
        self.traces.extend_from_slice(trace);
        self.fields.extend_from_slice(field);
        Ok(())
    }
}

/// Provenance shared by all dictionaries of a set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictionaryMeta {
    pub problem: ProblemDescription,
    pub sampler: SamplerConfig,
    pub samples: usize,
    /// Caller-supplied creation stamp; left empty by default so rebuilds
    /// are byte-identical.
    #[serde(default)]
    pub created: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DictionarySet {
    pub meta: DictionaryMeta,
    /// Dictionary used by each patch.
    pub alias: Vec<usize>,
    pub dictionaries: Vec<Dictionary>,
}

impl DictionarySet {
    pub fn num_patches(&self) -> usize {
        self.alias.len()
    }

    pub fn for_patch(&self, m: usize) -> &Dictionary {
        &self.dictionaries[self.alias[m]]
    }

    /// Appends the entries of `other`, which must describe the same problem.
    pub fn merge(&mut self, other: &DictionarySet) -> Result<()> {
        let (a, b) = (&self.meta.problem, &other.meta.problem);
        if a.eps != b.eps {
            return Err(Error::InvalidInput(format!("cannot merge dictionaries built at ε = {} and ε = {}", a.eps, b.eps)));
        }
        if a != b || self.alias != other.alias {
            return Err(Error::InvalidInput("cannot merge dictionaries of different problems or layouts".into()));
        }
        for (d, o) in self.dictionaries.iter_mut().zip(&other.dictionaries) {
            if d.trace_len != o.trace_len || d.field_len != o.field_len || d.patch != o.patch {
                return Err(Error::InvalidInput("dictionary shapes differ".into()));
            }
            d.traces.extend_from_slice(&o.traces);
            d.fields.extend_from_slice(&o.fields);
            d.retries += o.retries;
        }
        self.meta.samples += other.meta.samples;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.dictionaries.len());
        for d in &self.dictionaries {
            let traces = ArrayRef { offset, len: d.traces.len() as u64 };
            offset += 8 * d.traces.len() as u64;
            let fields = ArrayRef { offset, len: d.fields.len() as u64 };
            offset += 8 * d.fields.len() as u64;
            entries.push(HeaderEntry {
                patch: d.patch,
                samples: d.len(),
                trace_len: d.trace_len,
                field_len: d.field_len,
                retries: d.retries,
                traces,
                fields,
            });
        }
        let header = Header {
            version: FORMAT_VERSION,
            meta: self.meta.clone(),
            alias: self.alias.clone(),
            dictionaries: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(MAGIC.len() + 16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for d in &self.dictionaries {
            for v in d.traces.iter().chain(&d.fields) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv1a(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 16 {
            return Err(Error::Format("file too short".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
        let computed = fnv1a(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        if &body[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let hl = u64::from_le_bytes(body[7..15].try_into().expect("8 bytes")) as usize;
        let data_start = 15usize
            .checked_add(hl)
            .filter(|e| *e <= body.len())
            .ok_or_else(|| Error::Format("header length exceeds file".into()))?;
        let header: Header = serde_json::from_slice(&body[15..data_start])?;
        if header.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", header.version)));
        }
        let data = &body[data_start..];
        let read = |a: &ArrayRef| -> Result<Vec<f64>> {
            let start = a.offset as usize;
            let end = start + 8 * a.len as usize;
            if end > data.len() {
                return Err(Error::Format("array extends past end of data".into()));
            }
            Ok(data[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let mut dictionaries = Vec::with_capacity(header.dictionaries.len());
        for e in &header.dictionaries {
            if e.traces.len != (e.samples * e.trace_len) as u64 || e.fields.len != (e.samples * e.field_len) as u64 {
                return Err(Error::Format("array length disagrees with declared shape".into()));
            }
            dictionaries.push(Dictionary {
                patch: e.patch,
                trace_len: e.trace_len,
                field_len: e.field_len,
                traces: read(&e.traces)?,
                fields: read(&e.fields)?,
                retries: e.retries,
            });
        }
        if header.alias.iter().any(|&a| a >= dictionaries.len()) {
            return Err(Error::Format("alias table points past the dictionary list".into()));
        }
        Ok(Self {
            meta: header.meta,
            alias: header.alias,
            dictionaries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct ArrayRef {
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    patch: usize,
    samples: usize,
    trace_len: usize,
    field_len: usize,
    retries: usize,
    traces: ArrayRef,
    fields: ArrayRef,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    meta: DictionaryMeta,
    alias: Vec<usize>,
    dictionaries: Vec<HeaderEntry>,
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Draws `n` samples on the buffered patch `m`. Sample `i` uses its own
/// random stream, so the result does not depend on scheduling.
pub fn build_dictionary(problem: &dyn Problem, m: usize, n: usize, cfg: &SamplerConfig) -> Result<Dictionary> {
    cfg.validate()?;
    let coupling = problem.coupling();
    if m >= coupling.num_patches() {
        return Err(Error::InvalidInput(format!("patch {m} out of range")));
    }
    let entries: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            for attempt in 0..=MAX_RETRIES {
                let mut rng = stream_rng(cfg.seed, m, i, attempt);
                match problem.sample_entry(m, cfg, &mut rng) {
                    Ok((t, f)) => return Ok((t, f, attempt)),
                    Err(e) => {
                        log::warn!("patch {m} sample {i} attempt {attempt} failed: {e}");
                        last = Some(e);
                    }
                }
            }
            Err(Error::SolverFailure {
                context: format!(
                    "patch {m} sample {i}: all {} attempts failed, last error: {}",
                    MAX_RETRIES + 1,
                    last.map(|e| e.to_string()).unwrap_or_default()
                ),
                iterations: MAX_RETRIES + 1,
                residual: f64::NAN,
            })
        })
        .collect::<Result<_>>()?;
    let mut d = Dictionary {
        patch: m,
        trace_len: coupling.trace_len(m),
        field_len: coupling.field_len(m),
        traces: Vec::with_capacity(n * coupling.trace_len(m)),
        fields: Vec::with_capacity(n * coupling.field_len(m)),
        retries: 0,
    };
    for (t, f, r) in entries {
        d.push(&t, &f)?;
        d.retries += r;
    }
    Ok(d)
}

/// One dictionary per distinct slot of the problem, built on the first
/// patch of that slot and shared by the others.
pub fn build_all(problem: &dyn Problem, n: usize, cfg: &SamplerConfig) -> Result<DictionarySet> {
    build_all_timed(problem, n, cfg).map(|(set, _)| set)
}

/// [`build_all`] plus the wall time in seconds spent on each stored dictionary.
pub fn build_all_timed(problem: &dyn Problem, n: usize, cfg: &SamplerConfig) -> Result<(DictionarySet, Vec<f64>)> {
    let slots = problem.dictionary_slots();
    let mut reps: Vec<usize> = Vec::new();
    let mut alias = Vec::with_capacity(slots.len());
    let mut slot_ids: Vec<usize> = Vec::new();
    for (m, &s) in slots.iter().enumerate() {
        match slot_ids.iter().position(|&x| x == s) {
            Some(k) => alias.push(k),
            None => {
                slot_ids.push(s);
                reps.push(m);
                alias.push(reps.len() - 1);
            }
        }
    }
    let dictionaries = reps
        .par_iter()
        .map(|&m| {
            let t0 = std::time::Instant::now();
            let d = build_dictionary(problem, m, n, cfg)?;
            let secs = t0.elapsed().as_secs_f64();
            log::debug!("patch {m}: {n} samples in {secs:.2}s, {} retries", d.retries);
            Ok((d, secs))
        })
        .collect::<Result<Vec<_>>>()?;
    let (dictionaries, seconds): (Vec<_>, Vec<_>) = dictionaries.into_iter().unzip();
    let set = DictionarySet {
        meta: DictionaryMeta {
            problem: problem.describe(),
            sampler: *cfg,
            samples: n,
            created: None,
        },
        alias,
        dictionaries,
    };
    Ok((set, seconds))
}

fn scaled_columns(cols: &[&[f64]], center: &[f64], weights: &[f64]) -> DMatrix<f64> {
    let n = center.len();
    DMatrix::from_fn(n, cols.len(), |i, j| (cols[j][i] - center[i]) * weights[i].sqrt())
}

/// Dictionary entries ordered by weighted distance of their fields to `target`.
pub fn nearest_fields(dict: &Dictionary, target: &[f64], weights: &[f64]) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = (0..dict.len())
        .map(|i| (weighted_distance_sq(dict.field(i), target, weights), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().map(|(_, i)| i).collect()
}

/// Singular values of the field entries centered on the entry nearest
/// `target`, in the weighted field metric, descending.
pub fn tangent_singular_values(dict: &Dictionary, target: &[f64], weights: &[f64]) -> Vec<f64> {
    let order = nearest_fields(dict, target, weights);
    let center = dict.field(order[0]);
    let cols: Vec<&[f64]> = order[1..].iter().map(|&i| dict.field(i)).collect();
    if cols.is_empty() {
        return Vec::new();
    }
    let a = scaled_columns(&cols, center, weights);
    let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Relative weighted error of projecting `target` onto the affine span of
/// its `k` nearest dictionary fields, for each requested `k`.
pub fn projection_errors(dict: &Dictionary, target: &[f64], weights: &[f64], ks: &[usize]) -> Result<Vec<f64>> {
    let order = nearest_fields(dict, target, weights);
    let norm: f64 = target.iter().zip(weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::InvalidInput("projection target is zero".into()));
    }
    ks.iter()
        .map(|&k| {
            if k == 0 || k > dict.len() {
                return Err(Error::InvalidInput(format!("k = {k} outside 1..={}", dict.len())));
            }
            let center = dict.field(order[0]);
            let b = DVector::from_iterator(
                target.len(),
                target.iter().zip(center).zip(weights).map(|((t, c), w)| (t - c) * w.sqrt()),
            );
            if k == 1 {
                return Ok(b.norm() / norm);
            }
            let cols: Vec<&[f64]> = order[1..k].iter().map(|&i| dict.field(i)).collect();
            let a = scaled_columns(&cols, center, weights);
            // thin QR, then the SVD of the small triangular factor
            let qr = a.qr();
            let q = qr.q();
            let svd = qr.r().svd(true, false);
            let u = svd.u.as_ref().expect("requested U");
            let smax = svd.singular_values.max();
            let qb = q.transpose() * &b;
            let mut proj = DVector::zeros(b.len());
            for (j, s) in svd.singular_values.iter().enumerate() {
                if *s > 1e-13 * smax {
                    let col = u.column(j);
                    proj += &q * (col * col.dot(&qb));
                }
            }
            Ok((b - proj).norm() / norm)
        })
        .collect()
}
