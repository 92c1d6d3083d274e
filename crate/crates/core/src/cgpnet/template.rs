use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sources_for, CgpError, Coord, Genotype, NodeFunction, NodeGene, NodeKind};

/// Parameter pools sampled when a template cell is instantiated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamPools {
    pub conv_filters: Vec<usize>,
    pub conv_kernels: Vec<usize>,
    pub conv_strides: Vec<usize>,
    pub fc_units: Vec<usize>,
    pub pool_kernels: Vec<usize>,
    pub pool_strides: Vec<usize>,
    pub inception_channels: Vec<usize>,
    pub residual_kernels: Vec<usize>,
    pub residual_strides: Vec<usize>,
    pub residual_filters: Vec<usize>,
    pub bottleneck_reduce: Vec<usize>,
}

impl ParamPools {
    pub fn standard(num_classes: usize) -> Self {
        Self {
            conv_filters: vec![16, 32, 64],
            conv_kernels: vec![1, 3, 5],
            conv_strides: vec![1, 2],
            fc_units: vec![64, 128, 256, num_classes],
            pool_kernels: vec![2],
            pool_strides: vec![2],
            inception_channels: vec![8, 16, 32],
            residual_kernels: vec![3, 5],
            residual_strides: vec![1, 2],
            residual_filters: vec![16, 32, 64],
            bottleneck_reduce: vec![8, 16, 32],
        }
    }

    /// Narrow pools for small images and single-core runs.
    pub fn desk(num_classes: usize) -> Self {
        Self {
            conv_filters: vec![4, 8, 16],
            conv_kernels: vec![1, 3],
            conv_strides: vec![1, 2],
            fc_units: vec![16, 32, num_classes],
            pool_kernels: vec![2],
            pool_strides: vec![2],
            inception_channels: vec![2, 4],
            residual_kernels: vec![3],
            residual_strides: vec![1, 2],
            residual_filters: vec![4, 8],
            bottleneck_reduce: vec![2, 4],
        }
    }

    fn check(&self) -> Result<(), CgpError> {
        let pools: [(&str, &Vec<usize>); 11] = [
            ("conv_filters", &self.conv_filters),
            ("conv_kernels", &self.conv_kernels),
            ("conv_strides", &self.conv_strides),
            ("fc_units", &self.fc_units),
            ("pool_kernels", &self.pool_kernels),
            ("pool_strides", &self.pool_strides),
            ("inception_channels", &self.inception_channels),
            ("residual_kernels", &self.residual_kernels),
            ("residual_strides", &self.residual_strides),
            ("residual_filters", &self.residual_filters),
            ("bottleneck_reduce", &self.bottleneck_reduce),
        ];
        for (name, pool) in pools {
            if pool.is_empty() || pool.contains(&0) {
                return Err(CgpError::Template(format!("pool `{name}` must be non-empty and positive")));
            }
        }
        Ok(())
    }

    fn pick(pool: &[usize], rng: &mut impl Rng) -> usize {
        *pool.choose(rng).expect("pools checked non-empty")
    }

    fn instantiate(&self, kind: NodeKind, rng: &mut impl Rng) -> NodeFunction {
        match kind {
            NodeKind::Conv => NodeFunction::Conv {
                filters: Self::pick(&self.conv_filters, rng),
                kernel: Self::pick(&self.conv_kernels, rng),
                stride: Self::pick(&self.conv_strides, rng),
            },
            NodeKind::Fc => NodeFunction::Fc { units: Self::pick(&self.fc_units, rng) },
            NodeKind::Max => NodeFunction::Max {
                kernel: Self::pick(&self.pool_kernels, rng),
                stride: Self::pick(&self.pool_strides, rng),
            },
            NodeKind::Avg => NodeFunction::Avg {
                kernel: Self::pick(&self.pool_kernels, rng),
                stride: Self::pick(&self.pool_strides, rng),
            },
            NodeKind::Sum => NodeFunction::Sum,
            NodeKind::Inc => {
                let ch = &self.inception_channels;
                NodeFunction::Inc {
                    c1: Self::pick(ch, rng),
                    c2: Self::pick(ch, rng),
                    c3: Self::pick(ch, rng),
                    r1: Self::pick(ch, rng),
                    r2: Self::pick(ch, rng),
                    r3: Self::pick(ch, rng),
                }
            }
            NodeKind::Res => NodeFunction::Res {
                n: Self::pick(&self.residual_kernels, rng),
                m: Self::pick(&self.residual_kernels, rng),
                stride: Self::pick(&self.residual_strides, rng),
                filters: Self::pick(&self.residual_filters, rng),
            },
            NodeKind::ResB => NodeFunction::ResB {
                n: Self::pick(&self.residual_kernels, rng),
                stride: Self::pick(&self.residual_strides, rng),
                filters: Self::pick(&self.residual_filters, rng),
                reduce: Self::pick(&self.bottleneck_reduce, rng),
            },
            NodeKind::Input | NodeKind::Output => unreachable!("rejected by Template::check"),
        }
    }
}

/// Node kinds allowed in one template column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnPool(pub Vec<NodeKind>);

/// How the multiplier-index gene is drawn when seeding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MultGenePolicy {
    Fixed(usize),
    Random { library_len: usize },
}

/// Per-column kind pools plus parameter pools; seeding instantiates one
/// node function per cell and random connection genes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Template {
    pub rows: usize,
    pub levels_back: usize,
    pub columns: Vec<ColumnPool>,
    pub pools: ParamPools,
}

const MIDDLE_BAND: [NodeKind; 7] = [
    NodeKind::Conv,
    NodeKind::Sum,
    NodeKind::Max,
    NodeKind::Avg,
    NodeKind::Res,
    NodeKind::ResB,
    NodeKind::Inc,
];

impl Template {
    /// Convolutions in the first two columns, a mixed middle band and FC
    /// layers in the last two columns.
    pub fn standard(rows: usize, cols: usize, levels_back: usize, num_classes: usize) -> Self {
        Self::with_pools(rows, cols, levels_back, ParamPools::standard(num_classes))
    }

    pub fn desk(rows: usize, cols: usize, levels_back: usize, num_classes: usize) -> Self {
        Self::with_pools(rows, cols, levels_back, ParamPools::desk(num_classes))
    }

    pub fn with_pools(rows: usize, cols: usize, levels_back: usize, pools: ParamPools) -> Self {
        let fc_cols = if cols >= 3 { 2 } else { 1 };
        let conv_cols = 2.min(cols - fc_cols);
        let columns = (0..cols)
            .map(|i| {
                if i >= cols - fc_cols {
                    ColumnPool(vec![NodeKind::Fc])
                } else if i < conv_cols {
                    ColumnPool(vec![NodeKind::Conv])
                } else {
                    ColumnPool(MIDDLE_BAND.to_vec())
                }
            })
            .collect();
        Self { rows, levels_back, columns, pools }
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    /// Rejects templates that cannot seed a valid genotype: empty pools,
    /// INPUT/OUTPUT cells, or a last FC-bearing column that is not FC-only.
    pub fn check(&self) -> Result<(), CgpError> {
        if self.rows == 0 || self.columns.is_empty() {
            return Err(CgpError::Template("grid must have at least one row and column".into()));
        }
        if self.levels_back == 0 {
            return Err(CgpError::Template("levels_back must be at least 1".into()));
        }
        self.pools.check()?;
        for (i, col) in self.columns.iter().enumerate() {
            if col.0.is_empty() {
                return Err(CgpError::Template(format!("column {} has an empty kind pool", i + 1)));
            }
            if col.0.iter().any(|k| matches!(k, NodeKind::Input | NodeKind::Output)) {
                return Err(CgpError::Template(format!("column {} lists INPUT/OUTPUT", i + 1)));
            }
        }
        let last_fc = self.columns.iter().rposition(|c| c.0.contains(&NodeKind::Fc));
        match last_fc {
            None => return Err(CgpError::Template("no column may hold FC layers".into())),
            Some(i) if self.columns[i].0.iter().any(|&k| k != NodeKind::Fc) => {
                return Err(CgpError::Template(format!("last FC column {} must contain only FC", i + 1)));
            }
            Some(_) => {}
        }
        Ok(())
    }

    pub fn seed(&self, rng: &mut impl Rng, mult: MultGenePolicy) -> Result<Genotype, CgpError> {
        self.check()?;
        let rows = self.rows;
        let cols = self.cols();
        let mut grid = Vec::with_capacity(rows * cols);
        for (i, pool) in self.columns.iter().enumerate() {
            let col = i + 1;
            let sources = sources_for(rows, self.levels_back, col);
            for _ in 0..rows {
                let kind = *pool.0.choose(rng).expect("checked above");
                let function = self.pools.instantiate(kind, rng);
                let inputs = (0..kind.arity()).map(|_| *sources.choose(rng).unwrap()).collect();
                grid.push(NodeGene { function, inputs });
            }
        }
        let mult_index = match mult {
            MultGenePolicy::Fixed(i) => i,
            MultGenePolicy::Random { library_len } => rng.gen_range(0..library_len),
        };
        let mut g = Genotype {
            rows,
            cols,
            levels_back: self.levels_back,
            grid,
            output: Coord::INPUT,
            mult_index,
            lineage: 0,
        };
        g.output = *g.output_candidates().choose(rng).expect("template has an FC-only column");
        g.lineage = rng.gen();
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_layout() {
        let t = Template::standard(6, 23, 5, 10);
        assert_eq!(t.cols(), 23);
        assert_eq!(t.columns[0].0, vec![NodeKind::Conv]);
        assert_eq!(t.columns[1].0, vec![NodeKind::Conv]);
        assert_eq!(t.columns[2].0.len(), 7);
        assert_eq!(t.columns[21].0, vec![NodeKind::Fc]);
        assert_eq!(t.columns[22].0, vec![NodeKind::Fc]);
        t.check().unwrap();
    }

    #[test]
    fn seeded_genotypes_validate_and_follow_template() {
        let t = Template::standard(6, 23, 5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sum_from_input = false;
        for _ in 0..1000 {
            let g = t.seed(&mut rng, MultGenePolicy::Random { library_len: 9 }).unwrap();
            g.validate(9).unwrap();
            for c in g.coords() {
                let node = g.node(c).unwrap();
                assert!(t.columns[c.col - 1].0.contains(&node.kind()));
                for src in &node.inputs {
                    assert!(src.col < c.col && src.col + 5 >= c.col, "{src} feeds {c}");
                }
                sum_from_input |= node.kind() == NodeKind::Sum && node.inputs.contains(&Coord::INPUT);
            }
            assert_eq!(g.output.col, 23);
        }
        assert!(sum_from_input);
    }

    #[test]
    fn seeding_is_deterministic() {
        let t = Template::standard(6, 23, 5, 10);
        let a = t.seed(&mut ChaCha8Rng::seed_from_u64(99), MultGenePolicy::Random { library_len: 9 }).unwrap();
        let b = t.seed(&mut ChaCha8Rng::seed_from_u64(99), MultGenePolicy::Random { library_len: 9 }).unwrap();
        assert_eq!(a, b);
        let c = t.seed(&mut ChaCha8Rng::seed_from_u64(100), MultGenePolicy::Random { library_len: 9 }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fixed_mult_policy() {
        let t = Template::desk(2, 5, 2, 10);
        let g = t.seed(&mut ChaCha8Rng::seed_from_u64(0), MultGenePolicy::Fixed(4)).unwrap();
        assert_eq!(g.mult_index, 4);
    }

    #[test]
    fn infeasible_templates_are_rejected() {
        let mut t = Template::standard(2, 6, 2, 10);
        t.columns[5] = ColumnPool(vec![NodeKind::Fc, NodeKind::Conv]);
        assert!(matches!(t.seed(&mut ChaCha8Rng::seed_from_u64(0), MultGenePolicy::Fixed(0)), Err(CgpError::Template(_))));

        let mut t = Template::standard(2, 6, 2, 10);
        for c in &mut t.columns {
            *c = ColumnPool(vec![NodeKind::Conv]);
        }
        assert!(t.check().is_err());

        let mut t = Template::standard(2, 6, 2, 10);
        t.columns[3] = ColumnPool(vec![NodeKind::Input]);
        assert!(t.check().is_err());

        let mut t = Template::standard(2, 6, 0, 10);
        assert!(t.check().is_err());
        t.levels_back = 1;
        t.pools.conv_filters.clear();
        assert!(t.check().is_err());
    }

    #[test]
    fn tiny_grids() {
        for cols in 1..=4 {
            let t = Template::standard(1, cols, 1, 10);
            let g = t.seed(&mut ChaCha8Rng::seed_from_u64(5), MultGenePolicy::Fixed(0)).unwrap();
            g.validate(1).unwrap();
        }
    }
}
