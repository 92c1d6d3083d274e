use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_lut_file, MultError, MultiplierModel};

/// One built-in multiplier: a published id and per-operation energy, with a
/// parametric table standing in for the circuit netlist.
#[derive(Clone, Copy, Debug)]
pub struct BuiltinSpec {
    pub id: &'static str,
    pub energy_pj: f64,
    pub table: &'static str,
    pub mae: f64,
    pub wce: f64,
}

/// Ids and energies of the multipliers reported for the evolved networks.
/// Tables are stand-ins ordered so that error grows as energy falls; their
/// metadata was frozen from an exhaustive enumeration.
pub const BUILTIN_MULTIPLIERS: [BuiltinSpec; 9] = [
    BuiltinSpec { id: "mul8u_JFF", energy_pj: 0.56, table: "exact", mae: 0.0, wce: 0.0 },
    BuiltinSpec { id: "mul8u_JD", energy_pj: 0.48, table: "truncate-product:4", mae: 6.5, wce: 15.0 },
    BuiltinSpec { id: "mul8u_C1", energy_pj: 0.45, table: "truncate-product:6", mae: 30.0, wce: 63.0 },
    BuiltinSpec { id: "mul8u_GR", energy_pj: 0.38, table: "truncate-product:8", mae: 125.5, wce: 255.0 },
    BuiltinSpec { id: "mul8u_M1", energy_pj: 0.30, table: "truncate-operands:1", mae: 127.25, wce: 509.0 },
    BuiltinSpec { id: "mul8u_85Q", energy_pj: 0.29, table: "truncate-operands:2", mae: 380.25, wce: 1521.0 },
    BuiltinSpec { id: "mul8u_2N4", energy_pj: 0.15, table: "truncate-operands:3", mae: 880.25, wce: 3521.0 },
    BuiltinSpec { id: "mul8u_8DU", energy_pj: 0.02, table: "truncate-operands:5", mae: 3712.25, wce: 14849.0 },
    BuiltinSpec { id: "mul8u_KX", energy_pj: 0.01, table: "truncate-operands:6", mae: 7040.25, wce: 28161.0 },
];

/// Table family named in a library file.
#[derive(Clone, Debug, PartialEq)]
pub enum TableSpec {
    Exact,
    TruncateOperands(u32),
    TruncateProduct(u32),
    Lut(PathBuf),
}

impl TableSpec {
    pub fn parse(s: &str) -> Result<Self, MultError> {
        let bad = || MultError::Library(format!("unrecognised table spec `{s}`"));
        let (family, arg) = match s.split_once(':') {
            Some((f, a)) => (f, Some(a)),
            None => (s, None),
        };
        match (family, arg) {
            ("exact", None) => Ok(TableSpec::Exact),
            ("truncate-operands", Some(k)) => Ok(TableSpec::TruncateOperands(k.parse().map_err(|_| bad())?)),
            ("truncate-product", Some(k)) => Ok(TableSpec::TruncateProduct(k.parse().map_err(|_| bad())?)),
            ("lut", Some(p)) if !p.is_empty() => Ok(TableSpec::Lut(PathBuf::from(p))),
            _ => Err(bad()),
        }
    }
}

/// One `[[multiplier]]` entry of a library file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryEntry {
    /// Required unless the table comes from a LUT file, whose header id wins.
    pub id: Option<String>,
    pub energy_pj: Option<f64>,
    pub table: String,
    pub mae: Option<f64>,
    pub wce: Option<f64>,
}

/// Library file contents; entry order fixes the multiplier index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibrarySpec {
    #[serde(rename = "multiplier")]
    pub multipliers: Vec<LibraryEntry>,
}

impl LibrarySpec {
    pub fn builtin() -> Self {
        let multipliers = BUILTIN_MULTIPLIERS
            .iter()
            .map(|b| LibraryEntry {
                id: Some(b.id.into()),
                energy_pj: Some(b.energy_pj),
                table: b.table.into(),
                mae: Some(b.mae),
                wce: Some(b.wce),
            })
            .collect();
        Self { multipliers }
    }
}

fn build_entry(entry: &LibraryEntry, base_dir: &Path) -> Result<MultiplierModel, MultError> {
    let spec = TableSpec::parse(&entry.table)?;
    let needs = |field: &str| MultError::Library(format!("entry `{}` lacks `{field}`", entry.table));
    let model = match spec {
        TableSpec::Lut(path) => {
            let path = if path.is_absolute() { path } else { base_dir.join(path) };
            let model = load_lut_file(&path)?;
            if let Some(id) = &entry.id {
                if id != model.id() {
                    return Err(MultError::Library(format!("entry id `{id}` disagrees with LUT header `{}`", model.id())));
                }
            }
            if let Some(e) = entry.energy_pj {
                if e != model.energy_pj() {
                    return Err(MultError::Library(format!(
                        "entry energy {e} pJ disagrees with LUT header {} pJ",
                        model.energy_pj()
                    )));
                }
            }
            model
        }
        other => {
            let id = entry.id.clone().ok_or_else(|| needs("id"))?;
            let energy = entry.energy_pj.ok_or_else(|| needs("energy_pj"))?;
            match other {
                TableSpec::Exact => MultiplierModel::build_exact(id, energy)?,
                TableSpec::TruncateOperands(k) => MultiplierModel::build_truncated(id, k, energy)?,
                TableSpec::TruncateProduct(k) => MultiplierModel::build_truncated_product(id, k, energy)?,
                TableSpec::Lut(_) => unreachable!(),
            }
        }
    };
    model.verify_metadata(entry.mae, entry.wce)?;
    Ok(model)
}

/// Ordered multipliers; a model's position is its index gene value.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiplierLibrary {
    models: Vec<MultiplierModel>,
}

impl MultiplierLibrary {
    pub fn new(models: Vec<MultiplierModel>) -> Result<Self, MultError> {
        if models.is_empty() {
            return Err(MultError::Library("library is empty".into()));
        }
        let mut seen = HashSet::new();
        for m in &models {
            if !seen.insert(m.id()) {
                return Err(MultError::Library(format!("duplicate id `{}`", m.id())));
            }
        }
        if !models.iter().any(MultiplierModel::is_exact) {
            return Err(MultError::Library("library contains no exact multiplier".into()));
        }
        Ok(Self { models })
    }

    pub fn builtin() -> Self {
        Self::from_spec(&LibrarySpec::builtin(), Path::new(".")).expect("built-in library is consistent")
    }

    /// Relative LUT paths resolve against `base_dir`.
    pub fn from_spec(spec: &LibrarySpec, base_dir: &Path) -> Result<Self, MultError> {
        let models = spec
            .multipliers
            .iter()
            .map(|e| build_entry(e, base_dir))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(models)
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, MultError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| MultError::Io { path: path.into(), source })?;
        let spec: LibrarySpec = toml::from_str(&text).map_err(|e| MultError::Library(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_spec(&spec, base)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> Option<&MultiplierModel> {
        self.models.get(index)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.models.iter().position(|m| m.id() == id)
    }

    pub fn by_id(&self, id: &str) -> Result<&MultiplierModel, MultError> {
        self.models.iter().find(|m| m.id() == id).ok_or_else(|| MultError::UnknownId(id.into()))
    }

    /// Index of the first exact model.
    pub fn exact_index(&self) -> usize {
        self.models.iter().position(MultiplierModel::is_exact).expect("checked at construction")
    }

    pub fn iter(&self) -> impl Iterator<Item = &MultiplierModel> {
        self.models.iter()
    }
}
