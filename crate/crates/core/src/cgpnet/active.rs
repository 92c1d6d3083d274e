use std::collections::BTreeSet;

use super::{CgpError, Coord, Genotype, NodeFunction, NodeGene};

/// Active nodes in topological order: INPUT first, OUTPUT last.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActiveSubgraph {
    pub nodes: Vec<(Coord, NodeGene)>,
}

impl ActiveSubgraph {
    /// Active grid coordinates, excluding the INPUT and OUTPUT pseudo-nodes.
    pub fn grid_coords(&self) -> BTreeSet<Coord> {
        self.nodes[1..self.nodes.len() - 1].iter().map(|(c, _)| *c).collect()
    }

    /// Active edges as (source, sink) pairs with multiplicity; the OUTPUT
    /// sink is numbered one column past the grid.
    pub fn edges(&self) -> Vec<(Coord, Coord)> {
        let mut e: Vec<_> = self
            .nodes
            .iter()
            .flat_map(|(c, n)| n.inputs.iter().map(move |s| (*s, *c)))
            .collect();
        e.sort();
        e
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn output_source(&self) -> Coord {
        self.nodes.last().expect("OUTPUT is always present").1.inputs[0]
    }
}

/// Backward reachability from the output gene, sorted topologically.
/// Connections only point to earlier columns, so column-major order is a
/// topological order.
pub fn extract_active(g: &Genotype) -> Result<ActiveSubgraph, CgpError> {
    let mut marked = BTreeSet::new();
    let mut stack = vec![g.output];
    let mut reached_input = false;
    while let Some(c) = stack.pop() {
        if c == Coord::INPUT {
            reached_input = true;
            continue;
        }
        if !marked.insert(c) {
            continue;
        }
        let node = g
            .node(c)
            .ok_or_else(|| CgpError::Integrity(format!("connection to {c}, which is not a grid node")))?;
        for &src in &node.inputs {
            if src.col >= c.col {
                return Err(CgpError::Integrity(format!("node {c} reads {src}, which is not an earlier column")));
            }
            stack.push(src);
        }
    }
    if !reached_input {
        return Err(CgpError::Integrity("output does not reach the input".into()));
    }
    let mut nodes = Vec::with_capacity(marked.len() + 2);
    nodes.push((Coord::INPUT, NodeGene { function: NodeFunction::Input, inputs: vec![] }));
    let mut body: Vec<_> = marked.into_iter().collect();
    body.sort_by_key(|c| (c.col, c.row));
    nodes.extend(body.into_iter().map(|c| (c, g.node(c).unwrap().clone())));
    nodes.push((
        Coord::new(g.cols + 1, 0),
        NodeGene { function: NodeFunction::Output, inputs: vec![g.output] },
    ));
    Ok(ActiveSubgraph { nodes })
}
