//! Cartesian genetic programming encoding of CNN architectures.
//!
//! A genotype is an `rows × cols` grid of layer/module nodes. Column 0 holds
//! the single INPUT node, grid nodes occupy columns `1..=cols`, and the output
//! gene selects the node whose tensor becomes the network output. Every
//! connection gene points into one of the `levels_back` preceding columns.

mod active;
mod mutate;
mod template;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use active::{extract_active, ActiveSubgraph};
pub use mutate::{mutate, mutate_with, Mutation, MutationRates};
pub use template::{ColumnPool, MultGenePolicy, ParamPools, Template};

#[derive(Debug, thiserror::Error)]
pub enum CgpError {
    #[error("invalid template: {0}")]
    Template(String),
    #[error("genotype integrity: {0}")]
    Integrity(String),
    #[error("genotype has {} violation(s): {}", .0.len(), .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("genotype document: {0}")]
    Document(#[from] serde_json::Error),
}

/// Grid position; column 0 row 0 is the INPUT node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub col: usize,
    pub row: usize,
}

impl Coord {
    pub const INPUT: Coord = Coord { col: 0, row: 0 };

    pub fn new(col: usize, row: usize) -> Self {
        Self { col, row }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeKind {
    Conv,
    Fc,
    Max,
    Avg,
    Sum,
    Inc,
    Res,
    ResB,
    Input,
    Output,
}

impl NodeKind {
    pub fn arity(self) -> usize {
        match self {
            NodeKind::Input => 0,
            NodeKind::Sum => 2,
            _ => 1,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeKind::Conv => "CONV",
            NodeKind::Fc => "FC",
            NodeKind::Max => "MAX",
            NodeKind::Avg => "AVG",
            NodeKind::Sum => "SUM",
            NodeKind::Inc => "INC",
            NodeKind::Res => "RES",
            NodeKind::ResB => "RES_B",
            NodeKind::Input => "INPUT",
            NodeKind::Output => "OUTPUT",
        }
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Node function with its kind-specific parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeFunction {
    Conv { filters: usize, kernel: usize, stride: usize },
    Fc { units: usize },
    Max { kernel: usize, stride: usize },
    Avg { kernel: usize, stride: usize },
    Sum,
    /// `c*` are the 5×5, 3×3 and 1×1 filter counts; `r1`,`r2` the 1×1
    /// reductions ahead of the 5×5 and 3×3 convs, `r3` the projection after
    /// the pooling branch.
    Inc { c1: usize, c2: usize, c3: usize, r1: usize, r2: usize, r3: usize },
    Res { n: usize, m: usize, stride: usize, filters: usize },
    ResB { n: usize, stride: usize, filters: usize, reduce: usize },
    Input,
    Output,
}

impl NodeFunction {
    pub fn kind(&self) -> NodeKind {
        match self {
            NodeFunction::Conv { .. } => NodeKind::Conv,
            NodeFunction::Fc { .. } => NodeKind::Fc,
            NodeFunction::Max { .. } => NodeKind::Max,
            NodeFunction::Avg { .. } => NodeKind::Avg,
            NodeFunction::Sum => NodeKind::Sum,
            NodeFunction::Inc { .. } => NodeKind::Inc,
            NodeFunction::Res { .. } => NodeKind::Res,
            NodeFunction::ResB { .. } => NodeKind::ResB,
            NodeFunction::Input => NodeKind::Input,
            NodeFunction::Output => NodeKind::Output,
        }
    }

    pub fn arity(&self) -> usize {
        self.kind().arity()
    }
}

impl fmt::Display for NodeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NodeFunction::Conv { filters, kernel, stride } => write!(f, "CONV {kernel}x{kernel}/{stride} f={filters}"),
            NodeFunction::Fc { units } => write!(f, "FC {units}"),
            NodeFunction::Max { kernel, stride } => write!(f, "MAX {kernel}x{kernel}/{stride}"),
            NodeFunction::Avg { kernel, stride } => write!(f, "AVG {kernel}x{kernel}/{stride}"),
            NodeFunction::Sum => write!(f, "SUM"),
            NodeFunction::Inc { c1, c2, c3, r1, r2, r3 } => write!(f, "INC C=({c1},{c2},{c3}) R=({r1},{r2},{r3})"),
            NodeFunction::Res { n, m, stride, filters } => write!(f, "RES {n}x{n},{m}x{m}/{stride} f={filters}"),
            NodeFunction::ResB { n, stride, filters, reduce } => write!(f, "RES_B {n}x{n}/{stride} f={filters} r={reduce}"),
            NodeFunction::Input => write!(f, "INPUT"),
            NodeFunction::Output => write!(f, "OUTPUT"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeGene {
    #[serde(flatten)]
    pub function: NodeFunction,
    pub inputs: Vec<Coord>,
}

impl NodeGene {
    pub fn kind(&self) -> NodeKind {
        self.function.kind()
    }
}

/// One invariant violation found by [`Genotype::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub node: Option<Coord>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node {
            Some(c) => write!(f, "node {c}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// CGP genotype. Column-major grid storage: node `(col, row)` lives at
/// `(col - 1) * rows + row`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genotype {
    pub rows: usize,
    pub cols: usize,
    pub levels_back: usize,
    pub grid: Vec<NodeGene>,
    pub output: Coord,
    pub mult_index: usize,
    /// Seed-lineage tag: the rng draw that produced this genotype.
    pub lineage: u64,
}

impl Genotype {
    pub fn node(&self, c: Coord) -> Option<&NodeGene> {
        if c.col == 0 || c.col > self.cols || c.row >= self.rows {
            return None;
        }
        self.grid.get((c.col - 1) * self.rows + c.row)
    }

    pub fn node_mut(&mut self, c: Coord) -> Option<&mut NodeGene> {
        if c.col == 0 || c.col > self.cols || c.row >= self.rows {
            return None;
        }
        self.grid.get_mut((c.col - 1) * self.rows + c.row)
    }

    pub fn coords(&self) -> impl Iterator<Item = Coord> + '_ {
        (1..=self.cols).flat_map(move |col| (0..self.rows).map(move |row| Coord { col, row }))
    }

    /// Legal connection sources for a node in column `col`.
    pub fn sources_for(&self, col: usize) -> Vec<Coord> {
        sources_for(self.rows, self.levels_back, col)
    }

    /// Last column holding an FC node; the output gene must point into it.
    pub fn last_fc_column(&self) -> Option<usize> {
        self.coords()
            .filter(|&c| self.node(c).is_some_and(|n| n.kind() == NodeKind::Fc))
            .map(|c| c.col)
            .max()
    }

    /// Legal output-gene targets.
    pub fn output_candidates(&self) -> Vec<Coord> {
        match self.last_fc_column() {
            Some(col) => (0..self.rows)
                .map(|row| Coord { col, row })
                .filter(|&c| self.node(c).is_some_and(|n| n.kind() == NodeKind::Fc))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Checks every structural invariant and reports all violations.
    pub fn validate(&self, library_len: usize) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        let mut global = |m: String| out.push(Violation { node: None, message: m });
        if self.rows == 0 || self.cols == 0 {
            global("grid dimensions must be positive".into());
        }
        if self.levels_back == 0 {
            global("levels_back must be at least 1".into());
        }
        if self.grid.len() != self.rows * self.cols {
            global(format!("grid holds {} nodes, expected {}", self.grid.len(), self.rows * self.cols));
        }
        if self.mult_index >= library_len {
            global(format!("mult_index {} out of range for library of {library_len}", self.mult_index));
        }
        if !out.is_empty() && self.grid.len() != self.rows * self.cols {
            return Err(out);
        }

        for c in self.coords() {
            let node = &self.grid[(c.col - 1) * self.rows + c.row];
            let mut bad = |m: String| out.push(Violation { node: Some(c), message: m });
            if matches!(node.kind(), NodeKind::Input | NodeKind::Output) {
                bad(format!("{} node inside the grid", node.kind()));
            }
            if node.inputs.len() != node.function.arity() {
                bad(format!("{} has {} inputs, arity is {}", node.kind(), node.inputs.len(), node.function.arity()));
            }
            let lo = c.col.saturating_sub(self.levels_back);
            for &src in &node.inputs {
                if src.col >= c.col || src.col < lo {
                    bad(format!("input {src} outside columns [{lo}, {}]", c.col - 1));
                } else if (src.col == 0 && src.row != 0) || (src.col > 0 && src.row >= self.rows) {
                    bad(format!("input {src} is not a node"));
                }
            }
        }

        let candidates = self.output_candidates();
        if candidates.is_empty() {
            out.push(Violation { node: None, message: "grid has no FC node for the output gene".into() });
        } else if !candidates.contains(&self.output) {
            out.push(Violation {
                node: Some(self.output),
                message: "output gene must target an FC node of the last FC column".into(),
            });
        }

        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("genotype serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CgpError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub(crate) fn sources_for(rows: usize, levels_back: usize, col: usize) -> Vec<Coord> {
    let lo = col.saturating_sub(levels_back);
    let mut v = Vec::new();
    for c in lo..col {
        if c == 0 {
            v.push(Coord::INPUT);
        } else {
            v.extend((0..rows).map(|row| Coord { col: c, row }));
        }
    }
    v
}
