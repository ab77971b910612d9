//! Paired boundary/solution records and the MFDS on-disk format.
//!
//! File layout (little-endian):
//! magic "MFDS" | u32 version=1 | u32 m | u64 count, then per record:
//! u64 seed | f64 variance | f64 lengthscale | 4m x f32 boundary |
//! (m+1)^2 x f32 solution (row-major, rows of constant j) | u32 CRC32 of the
//! record payload.

use std::fs;
use std::path::Path;

use super::gp::{sample_gp_curve, GpKernelParams};
use super::sobol::sobol;
use crate::grid::build_grid;
use crate::oracle::solve_dirichlet;
use crate::util::{crc32, push_f32, push_f64, push_u32, push_u64, ByteReader};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"MFDS";
const VERSION: u32 = 1;

/// Hyperparameter ranges mapped over the unit Sobol square.
#[derive(Debug, Clone, Copy)]
pub struct SobolBox {
    pub variance: (f64, f64),
    pub lengthscale: (f64, f64),
}

impl Default for SobolBox {
    /// Produces O(1)-amplitude smooth curves in perimeter-normalized units.
    fn default() -> Self {
        SobolBox {
            variance: (0.1, 1.0),
            lengthscale: (0.1, 0.5),
        }
    }
}

impl SobolBox {
    fn validate(&self) -> Result<()> {
        for (lo, hi) in [self.variance, self.lengthscale] {
            if !lo.is_finite() || !hi.is_finite() || hi < lo {
                return Err(Error::invalid(format!("bad hyperparameter range [{lo}, {hi}]")));
            }
        }
        if self.variance.0 < 0.0 {
            return Err(Error::invalid("variance range must be non-negative".to_string()));
        }
        if self.lengthscale.0 <= 0.0 {
            return Err(Error::invalid(
                "lengthscale range must be strictly positive".to_string(),
            ));
        }
        Ok(())
    }
}

/// One training example: a boundary curve, the solved field on the training
/// subdomain, and the provenance needed to regenerate it.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub seed: u64,
    pub kernel: GpKernelParams,
    /// 4m perimeter values, CCW order.
    pub boundary: Vec<f32>,
    /// (m+1)^2 solution values; index `j * (m+1) + i`.
    pub solution: Vec<f32>,
}

impl DatasetRecord {
    /// Subdomain size in cells, recovered from the boundary length.
    pub fn m(&self) -> usize {
        self.boundary.len() / 4
    }

    pub fn solution_at(&self, i: usize, j: usize) -> f32 {
        self.solution[j * (self.m() + 1) + i]
    }
}

/// Generates `n` records on the training subdomain (`m` cells per side,
/// spatial extent 0.5 x 0.5): record `k` maps Sobol point `k` through
/// `ranges` to kernel hyperparameters, draws the curve with seed
/// `base_seed + k`, and solves for the paired field.
pub fn generate_dataset(
    n: usize,
    m: usize,
    ranges: &SobolBox,
    base_seed: u64,
) -> Result<Vec<DatasetRecord>> {
    if m < 2 {
        return Err(Error::invalid(format!("subdomain size must be >= 2 cells, got {m}")));
    }
    ranges.validate()?;
    if n == 0 {
        return Ok(Vec::new());
    }

    let grid = build_grid(m + 1, m + 1, 0.5 / m as f64, (0.0, 0.0))?;
    let points = sobol(2, n)?;
    let mut records = Vec::with_capacity(n);
    for (k, p) in points.into_iter().enumerate() {
        let variance = ranges.variance.0 + p[0] * (ranges.variance.1 - ranges.variance.0);
        let lengthscale =
            ranges.lengthscale.0 + p[1] * (ranges.lengthscale.1 - ranges.lengthscale.0);
        let kernel = GpKernelParams::new(variance, lengthscale)?;
        let seed = base_seed.wrapping_add(k as u64);
        let curve = sample_gp_curve(&kernel, 4 * m, seed)
            .map_err(|e| Error::Numerical(format!("record {k}: {e}")))?;
        let (field, report) = solve_dirichlet(&grid, &curve, 1e-8, 200)
            .map_err(|e| Error::Numerical(format!("record {k}: {e}")))?;
        if !report.converged {
            return Err(Error::NoConvergence(format!(
                "record {k}: residual {} after {} cycles",
                report.final_residual, report.iterations
            )));
        }
        let mut solution = vec![0.0f32; (m + 1) * (m + 1)];
        for j in 0..=m {
            for i in 0..=m {
                solution[j * (m + 1) + i] = field.values[[i, j]] as f32;
            }
        }
        // Boundary stored through the same f32 rounding so the record's
        // solution perimeter equals its boundary bit-exactly.
        let boundary: Vec<f32> = curve.iter().map(|v| *v as f32).collect();
        records.push(DatasetRecord {
            seed,
            kernel,
            boundary,
            solution,
        });
    }
    Ok(records)
}

fn record_payload(rec: &DatasetRecord) -> Vec<u8> {
    let mut buf = Vec::new();
    push_u64(&mut buf, rec.seed);
    push_f64(&mut buf, rec.kernel.variance);
    push_f64(&mut buf, rec.kernel.lengthscale);
    for v in &rec.boundary {
        push_f32(&mut buf, *v);
    }
    for v in &rec.solution {
        push_f32(&mut buf, *v);
    }
    buf
}

/// Writes records to an MFDS file. All records must share one subdomain
/// size; an empty list produces a valid file with count 0.
pub fn write_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    let m = records.first().map(|r| r.m()).unwrap_or(0);
    for (k, rec) in records.iter().enumerate() {
        if rec.m() != m || rec.boundary.len() != 4 * m || rec.solution.len() != (m + 1) * (m + 1) {
            return Err(Error::shape(format!("record {k} has inconsistent sizes")));
        }
    }
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u32(&mut buf, m as u32);
    push_u64(&mut buf, records.len() as u64);
    for rec in records {
        let payload = record_payload(rec);
        buf.extend_from_slice(&payload);
        push_u32(&mut buf, crc32(&payload));
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads an MFDS file, verifying magic, version, sizes, and per-record
/// checksums.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let bytes = fs::read(&path)?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.take(4).ok_or_else(|| Error::format("truncated header"))?;
    if magic != MAGIC {
        return Err(Error::format(format!("bad magic {magic:?}, expected \"MFDS\"")));
    }
    let version = r.u32().ok_or_else(|| Error::format("truncated header"))?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported version {version}")));
    }
    let m = r.u32().ok_or_else(|| Error::format("truncated header"))? as usize;
    let count = r.u64().ok_or_else(|| Error::format("truncated header"))? as usize;
    let mut records = Vec::with_capacity(count);
    for k in 0..count {
        let start = r.pos();
        let trunc = || Error::format(format!("record {k}: truncated"));
        let seed = r.u64().ok_or_else(trunc)?;
        let variance = r.f64().ok_or_else(trunc)?;
        let lengthscale = r.f64().ok_or_else(trunc)?;
        let mut boundary = Vec::with_capacity(4 * m);
        for _ in 0..4 * m {
            boundary.push(r.f32().ok_or_else(trunc)?);
        }
        let mut solution = Vec::with_capacity((m + 1) * (m + 1));
        for _ in 0..(m + 1) * (m + 1) {
            solution.push(r.f32().ok_or_else(trunc)?);
        }
        let payload_end = r.pos();
        let stored_crc = r.u32().ok_or_else(trunc)?;
        let actual_crc = crc32(&bytes[start..payload_end]);
        if stored_crc != actual_crc {
            return Err(Error::format(format!(
                "record {k}: checksum mismatch (stored {stored_crc:#010x}, computed {actual_crc:#010x})"
            )));
        }
        records.push(DatasetRecord {
            seed,
            kernel: GpKernelParams::new(variance, lengthscale)?,
            boundary,
            solution,
        });
    }
    Ok(records)
}
