//! Versioned binary checkpoint of the forecaster.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "WGCNNCK\0" | u32 version | u64 n + n bytes JSON architecture
//! | u64 step | u64 M | M × f64 params | M × f64 velocity
//! | u64 count | u64 F | F × f64 sums | F × f64 sums of squares
//! ```
//!
//! Floats are stored as raw bits, so a load restores bit-identical behaviour.

use std::fs;
use std::path::Path;

use crate::error::{Result, SimError};
use crate::predictor::{Architecture, Model};
use crate::telemetry::NormStats;

const MAGIC: &[u8; 8] = b"WGCNNCK\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub stats: NormStats,
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(SimError::Checkpoint("truncated file".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| SimError::Checkpoint(format!("implausible length {n}")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| SimError::Checkpoint("overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    out.extend_from_slice(&(vals.len() as u64).to_le_bytes());
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 16 * self.model.param_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let arch = serde_json::to_vec(self.model.arch()).expect("architecture serialises");
        out.extend_from_slice(&(arch.len() as u64).to_le_bytes());
        out.extend_from_slice(&arch);
        out.extend_from_slice(&self.model.step.to_le_bytes());
        put_f64s(&mut out, &self.model.params);
        put_f64s(&mut out, &self.model.velocity);
        out.extend_from_slice(&self.stats.count.to_le_bytes());
        put_f64s(&mut out, &self.stats.sum);
        put_f64s(&mut out, &self.stats.sum_sq);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(SimError::Checkpoint("not a model checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(SimError::Checkpoint(format!("unsupported version {version}")));
        }
        let n = r.len()?;
        let arch: Architecture =
            serde_json::from_slice(r.take(n)?).map_err(|e| SimError::Checkpoint(format!("architecture: {e}")))?;
        let step = r.u64()?;
        let n = r.len()?;
        let params = r.f64s(n)?;
        let n = r.len()?;
        let velocity = r.f64s(n)?;
        let count = r.u64()?;
        let n = r.len()?;
        let sum = r.f64s(n)?;
        let n = r.len()?;
        let sum_sq = r.f64s(n)?;
        if !r.buf.is_empty() {
            return Err(SimError::Checkpoint("trailing bytes".into()));
        }
        if sum.len() != arch.features || sum_sq.len() != arch.features {
            return Err(SimError::Checkpoint("statistics do not match feature count".into()));
        }
        let model = Model::from_parts(arch, params, velocity, step)?;
        Ok(Self {
            model,
            stats: NormStats { count, sum, sum_sq },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Human-readable summary for inspection.
    pub fn summary(&self) -> String {
        use std::fmt::Write;
        let arch = self.model.arch();
        let mut s = String::new();
        let _ = writeln!(s, "format version: {VERSION}");
        let _ = writeln!(
            s,
            "input: {} slots x {} features, output: {} slots",
            arch.input_slots, arch.features, arch.output_slots
        );
        for (i, c) in arch.conv.iter().enumerate() {
            let _ = writeln!(
                s,
                "conv[{i}]: {} filters, kernel {}, stride {}, pool {}",
                c.filters, c.kernel, c.stride, c.pool
            );
        }
        let _ = writeln!(s, "dense: {:?}", arch.dense);
        let _ = writeln!(s, "parameters: {}", self.model.param_count());
        let _ = writeln!(s, "updates applied: {}", self.model.step);
        let _ = writeln!(s, "finite: {}", self.model.is_finite());
        let _ = writeln!(s, "observed tuples: {}", self.stats.count);
        if self.stats.is_ready() {
            let means: Vec<String> = (0..self.stats.features())
                .map(|f| format!("{:.3}", self.stats.mean(f)))
                .collect();
            let _ = writeln!(s, "feature means: [{}]", means.join(", "));
        }
        s
    }
}
