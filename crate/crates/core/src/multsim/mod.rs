//! 8-bit unsigned approximate multipliers modelled as exhaustive lookup
//! tables, and the ordered library the search indexes into.

mod library;
mod lut;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use library::{BuiltinSpec, LibraryEntry, LibrarySpec, MultiplierLibrary, TableSpec, BUILTIN_MULTIPLIERS};
pub use lut::{encode_lut, load_lut_file, parse_lut, write_lut_file, LUT_FILE_LEN, LUT_MAGIC};

/// Number of operand pairs of an 8×8-bit multiplier.
pub const TABLE_LEN: usize = 1 << 16;

/// Tolerance for stored-versus-recomputed error metadata.
pub const METADATA_TOLERANCE: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum MultError {
    #[error("operand truncation width {0} is out of range 0..=7")]
    OperandTruncation(u32),
    #[error("product truncation width {0} is out of range 0..=15")]
    ProductTruncation(u32),
    #[error("energy per operation must be positive and finite, got {0} pJ")]
    Energy(f64),
    #[error("multiplier id must be 1..=31 bytes of UTF-8 without NUL, got {0:?}")]
    Id(String),
    #[error("table must hold {TABLE_LEN} products, got {0}")]
    TableLength(usize),
    #[error("{path}: format error at byte offset {offset}: {reason}")]
    Format { path: PathBuf, offset: u64, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("multiplier `{id}`: stored {metric} {stored} disagrees with recomputed {computed}")]
    Metadata { id: String, metric: &'static str, stored: f64, computed: f64 },
    #[error("invalid multiplier library: {0}")]
    Library(String),
    #[error("unknown multiplier id `{0}`")]
    UnknownId(String),
}

/// How a model's table was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "family")]
pub enum TableSource {
    Exact,
    /// Both operands have their `bits` least-significant bits cleared.
    TruncatedOperands { bits: u32 },
    /// The exact product has its `bits` least-significant bits cleared.
    TruncatedProduct { bits: u32 },
    LutFile { path: PathBuf },
    Custom,
}

impl fmt::Display for TableSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableSource::Exact => write!(f, "exact"),
            TableSource::TruncatedOperands { bits } => write!(f, "truncate-operands:{bits}"),
            TableSource::TruncatedProduct { bits } => write!(f, "truncate-product:{bits}"),
            TableSource::LutFile { path } => write!(f, "lut:{}", path.display()),
            TableSource::Custom => write!(f, "custom"),
        }
    }
}

/// An 8×8-bit unsigned multiplier: a full product table plus energy and
/// error metadata. Immutable once built.
#[derive(Clone, PartialEq)]
pub struct MultiplierModel {
    id: String,
    table: Box<[u16]>,
    energy_pj: f64,
    mae: f64,
    wce: u32,
    is_exact: bool,
    source: TableSource,
}

impl fmt::Debug for MultiplierModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MultiplierModel")
            .field("id", &self.id)
            .field("energy_pj", &self.energy_pj)
            .field("mae", &self.mae)
            .field("wce", &self.wce)
            .field("is_exact", &self.is_exact)
            .field("source", &self.source)
            .finish_non_exhaustive()
    }
}

#[inline]
fn table_index(a: u8, b: u8) -> usize {
    (a as usize) << 8 | b as usize
}

fn check_id(id: &str) -> Result<(), MultError> {
    if id.is_empty() || id.len() > 31 || id.contains('\0') {
        return Err(MultError::Id(id.to_owned()));
    }
    Ok(())
}

fn check_energy(energy_pj: f64) -> Result<(), MultError> {
    if !(energy_pj.is_finite() && energy_pj > 0.0) {
        return Err(MultError::Energy(energy_pj));
    }
    Ok(())
}

impl MultiplierModel {
    /// Builds a model from a raw table ordered by `a·256 + b`; error
    /// metadata and exactness are derived from the table.
    pub fn from_table(
        id: impl Into<String>,
        table: Vec<u16>,
        energy_pj: f64,
        source: TableSource,
    ) -> Result<Self, MultError> {
        let id = id.into();
        check_id(&id)?;
        check_energy(energy_pj)?;
        Self::assemble(id, table, energy_pj, source)
    }

    fn assemble(id: String, table: Vec<u16>, energy_pj: f64, source: TableSource) -> Result<Self, MultError> {
        if table.len() != TABLE_LEN {
            return Err(MultError::TableLength(table.len()));
        }
        let table = table.into_boxed_slice();
        let (mae, wce) = metrics_of(&table);
        Ok(Self { id, table, energy_pj, mae, wce, is_exact: wce == 0, source })
    }

    /// Zero-energy sentinel; exists only for unit tests of energy bookkeeping.
    #[cfg(test)]
    pub(crate) fn zero_energy_sentinel() -> Self {
        let table = (0..TABLE_LEN).map(|i| ((i >> 8) * (i & 0xff)) as u16).collect();
        Self::assemble("zero-energy".into(), table, 0.0, TableSource::Exact).unwrap()
    }

    pub fn build_exact(id: impl Into<String>, energy_pj: f64) -> Result<Self, MultError> {
        let table = (0..TABLE_LEN).map(|i| ((i >> 8) * (i & 0xff)) as u16).collect();
        Self::from_table(id, table, energy_pj, TableSource::Exact)
    }

    /// Clears the `bits` low bits of both operands before multiplying.
    pub fn build_truncated(id: impl Into<String>, bits: u32, energy_pj: f64) -> Result<Self, MultError> {
        if bits > 7 {
            return Err(MultError::OperandTruncation(bits));
        }
        let mask = !((1usize << bits) - 1) & 0xff;
        let table = (0..TABLE_LEN)
            .map(|i| (((i >> 8) & mask) * ((i & 0xff) & mask)) as u16)
            .collect();
        Self::from_table(id, table, energy_pj, TableSource::TruncatedOperands { bits })
    }

    /// Clears the `bits` low bits of the exact product.
    pub fn build_truncated_product(id: impl Into<String>, bits: u32, energy_pj: f64) -> Result<Self, MultError> {
        if bits > 15 {
            return Err(MultError::ProductTruncation(bits));
        }
        let mask = !((1usize << bits) - 1);
        let table = (0..TABLE_LEN)
            .map(|i| (((i >> 8) * (i & 0xff)) & mask) as u16)
            .collect();
        Self::from_table(id, table, energy_pj, TableSource::TruncatedProduct { bits })
    }

    /// Fails if stored metadata disagrees with the table by more than
    /// [`METADATA_TOLERANCE`].
    pub fn verify_metadata(&self, mae: Option<f64>, wce: Option<f64>) -> Result<(), MultError> {
        let checks = [("mae", mae, self.mae), ("wce", wce, self.wce as f64)];
        for (metric, stored, computed) in checks {
            if let Some(stored) = stored {
                if !((stored - computed).abs() <= METADATA_TOLERANCE) {
                    return Err(MultError::Metadata { id: self.id.clone(), metric, stored, computed });
                }
            }
        }
        Ok(())
    }

    /// Table lookup. Never computes the product arithmetically.
    #[inline]
    pub fn multiply(&self, a: u8, b: u8) -> u16 {
        self.table[table_index(a, b)]
    }

    /// The 256 products `a·b'` for all `b'`, for callers that stream one
    /// operand against many.
    #[inline]
    pub fn row(&self, a: u8) -> &[u16] {
        let start = (a as usize) << 8;
        &self.table[start..start + 256]
    }

    pub fn table(&self) -> &[u16] {
        &self.table
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn energy_pj(&self) -> f64 {
        self.energy_pj
    }

    pub fn mae(&self) -> f64 {
        self.mae
    }

    pub fn wce(&self) -> u32 {
        self.wce
    }

    pub fn is_exact(&self) -> bool {
        self.is_exact
    }

    pub fn source(&self) -> &TableSource {
        &self.source
    }

    /// Exhaustive `(mae, wce)` over all operand pairs.
    pub fn error_metrics(&self) -> (f64, u32) {
        metrics_of(&self.table)
    }

    /// Same table and energy, different id.
    pub fn renamed(mut self, id: impl Into<String>) -> Result<Self, MultError> {
        let id = id.into();
        check_id(&id)?;
        self.id = id;
        Ok(self)
    }
}

fn metrics_of(table: &[u16]) -> (f64, u32) {
    let mut sum = 0u64;
    let mut worst = 0u32;
    for (i, &p) in table.iter().enumerate() {
        let exact = ((i >> 8) * (i & 0xff)) as i64;
        let err = (p as i64 - exact).unsigned_abs() as u32;
        sum += err as u64;
        worst = worst.max(err);
    }
    (sum as f64 / table.len() as f64, worst)
}
