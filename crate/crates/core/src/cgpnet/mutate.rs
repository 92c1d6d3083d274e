use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{extract_active, sources_for, Coord, Genotype};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MutationRates {
    /// Probability that the architecture is mutated at all.
    pub p_arch: f64,
    /// Probability that the multiplier-index gene is redrawn.
    pub p_mult: f64,
}

impl Default for MutationRates {
    fn default() -> Self {
        Self { p_arch: 1.0, p_mult: 1.0 }
    }
}

/// Result of one mutation.
#[derive(Clone, Debug, PartialEq)]
pub struct Mutation {
    pub genotype: Genotype,
    /// Grid nodes active in the child but not in the parent; their weights
    /// must be freshly initialised.
    pub newly_active: BTreeSet<Coord>,
    /// Number of node rewirings performed, including neutral ones on
    /// inactive nodes.
    pub rewired_nodes: usize,
    pub output_rewired: bool,
    pub mult_redrawn: bool,
}

fn sorted(v: &[Coord]) -> Vec<Coord> {
    let mut v = v.to_vec();
    v.sort();
    v
}

/// Architecture mutation followed by a multiplier-index redraw with
/// probability `p_mult`.
pub fn mutate(g: &Genotype, p_mult: f64, library_len: usize, rng: &mut impl Rng) -> Mutation {
    mutate_with(g, MutationRates { p_arch: 1.0, p_mult }, library_len, rng)
}

/// Picks a node (or the output gene) uniformly and rewires all of its
/// inputs. Hits on inactive nodes are kept and the draw repeats until an
/// active connection actually changes. After `10 · rows · cols` misses the
/// output gene is rewired instead, or, when it has no alternative, one input
/// of an active node is moved.
pub fn mutate_with(g: &Genotype, rates: MutationRates, library_len: usize, rng: &mut impl Rng) -> Mutation {
    let parent_active = extract_active(g).map(|a| a.grid_coords()).unwrap_or_default();
    let mut child = g.clone();
    let mut rewired_nodes = 0;
    let mut output_rewired = false;

    if rng.gen_bool(rates.p_arch.clamp(0.0, 1.0)) {
        let n_nodes = g.rows * g.cols;
        let cap = 10 * n_nodes;
        let mut hit = false;
        for _ in 0..cap {
            let pick = rng.gen_range(0..=n_nodes);
            if pick == n_nodes {
                if rewire_output(&mut child, rng) {
                    output_rewired = true;
                    hit = true;
                    break;
                }
                continue;
            }
            let c = Coord::new(pick / g.rows + 1, pick % g.rows);
            let sources = sources_for(g.rows, g.levels_back, c.col);
            let node = child.node_mut(c).expect("coordinate inside grid");
            let before = sorted(&node.inputs);
            for slot in node.inputs.iter_mut() {
                *slot = *sources.choose(rng).expect("column has sources");
            }
            let changed = sorted(&node.inputs) != before;
            rewired_nodes += 1;
            if changed && parent_active.contains(&c) {
                hit = true;
                break;
            }
        }
        if !hit {
            output_rewired = rewire_output(&mut child, rng);
            if !output_rewired {
                rewired_nodes += force_active_change(&mut child, &parent_active, rng) as usize;
            }
        }
    }

    let mut mult_redrawn = false;
    if library_len > 0 && rng.gen_bool(rates.p_mult.clamp(0.0, 1.0)) {
        child.mult_index = rng.gen_range(0..library_len);
        mult_redrawn = true;
    }
    child.lineage = rng.gen();

    let newly_active = extract_active(&child)
        .map(|a| a.grid_coords())
        .unwrap_or_default()
        .difference(&parent_active)
        .copied()
        .collect();
    Mutation { genotype: child, newly_active, rewired_nodes, output_rewired, mult_redrawn }
}

/// Last resort on tiny grids: moves one input of a random active node to a
/// different source. False if no active node has an alternative.
fn force_active_change(g: &mut Genotype, active: &BTreeSet<Coord>, rng: &mut impl Rng) -> bool {
    let mut nodes: Vec<Coord> = active.iter().copied().collect();
    nodes.shuffle(rng);
    for c in nodes {
        let sources = sources_for(g.rows, g.levels_back, c.col);
        let node = g.node_mut(c).expect("active coordinate inside grid");
        if node.inputs.is_empty() {
            continue;
        }
        let slot = rng.gen_range(0..node.inputs.len());
        let current = node.inputs[slot];
        let options: Vec<Coord> = sources.iter().copied().filter(|&s| s != current).collect();
        if let Some(&s) = options.choose(rng) {
            node.inputs[slot] = s;
            return true;
        }
    }
    false
}

/// Rewires the output gene to a different FC node of the last FC column;
/// false if there is no alternative.
fn rewire_output(g: &mut Genotype, rng: &mut impl Rng) -> bool {
    let current = g.output;
    let options: Vec<_> = g.output_candidates().into_iter().filter(|&c| c != current).collect();
    match options.choose(rng) {
        Some(&c) => {
            g.output = c;
            true
        }
        None => false,
    }
}
