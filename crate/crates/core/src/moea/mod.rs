//! Pareto dominance, non-dominated sorting, crowding-distance reduction,
//! scenario policies and the generational search loop.

mod archive;
mod evolve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cgpnet::{CgpError, Genotype, MultGenePolicy};
use crate::multsim::{MultiplierLibrary, MultiplierModel};
use crate::netir::LayerGraph;

pub use archive::{EvalRecord, FinalEntry, ParetoArchive, PopulationPoint};
pub use evolve::{evolve, EvolveConfig, EvolveData, Evaluation, GenerationSummary};

#[derive(Debug, Error)]
pub enum MoeaError {
    #[error("individual {0} has not been evaluated")]
    Unevaluated(u64),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error(transparent)]
    Cgp(#[from] CgpError),
    #[error("{0}")]
    Data(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// f1, maximized.
    Accuracy,
    /// f2, minimized.
    Params,
    /// f3, minimized.
    Energy,
}

/// `(f1, f2, f3)`: accuracy in `[0, 1]`, parameter count, and convolution
/// energy in µJ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

impl Fitness {
    /// Assigned when a candidate fails to compile or train.
    pub const FAILED: Fitness = Fitness { f1: 0.0, f2: f64::INFINITY, f3: f64::INFINITY };

    /// Value oriented so that smaller is better.
    pub fn cost(&self, o: Objective) -> f64 {
        match o {
            Objective::Accuracy => -self.f1,
            Objective::Params => self.f2,
            Objective::Energy => self.f3,
        }
    }

    pub fn value(&self, o: Objective) -> f64 {
        match o {
            Objective::Accuracy => self.f1,
            Objective::Params => self.f2,
            Objective::Energy => self.f3,
        }
    }

    /// No worse in every objective and strictly better in at least one.
    pub fn dominates(&self, other: &Fitness, objs: &[Objective]) -> bool {
        let mut strictly = false;
        for &o in objs {
            let (a, b) = (self.cost(o), other.cost(o));
            if a > b {
                return false;
            }
            strictly |= a < b;
        }
        strictly
    }
}

/// `N_mult · P_mult` in µJ.
pub fn energy_uj(n_mult: u64, energy_pj: f64) -> f64 {
    n_mult as f64 * energy_pj * 1e-6
}

/// f3 of a compiled network running on `model`: convolution multiplications
/// per inference times the energy per multiplication, in µJ.
pub fn fitness_f3(g: &LayerGraph, model: &MultiplierModel) -> f64 {
    energy_uj(g.mult_count(), model.energy_pj())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    pub generation: usize,
    pub parent: Option<u64>,
    pub genotype: Genotype,
    pub fitness: Option<Fitness>,
    pub n_mult: u64,
    pub rank: Option<usize>,
    pub crowding: Option<f64>,
}

impl Individual {
    pub fn new(id: u64, generation: usize, genotype: Genotype) -> Self {
        Self { id, generation, parent: None, genotype, fitness: None, n_mult: 0, rank: None, crowding: None }
    }

    pub fn is_evaluated(&self) -> bool {
        self.fitness.is_some()
    }
}

/// Dominance between evaluated individuals.
pub fn dominates(a: &Individual, b: &Individual, objs: &[Objective]) -> Result<bool, MoeaError> {
    let fa = a.fitness.ok_or(MoeaError::Unevaluated(a.id))?;
    let fb = b.fitness.ok_or(MoeaError::Unevaluated(b.id))?;
    Ok(fa.dominates(&fb, objs))
}

/// Fronts as index lists; front 0 is non-dominated, each later front is
/// non-dominated once the earlier ones are removed. Indices within a front
/// are ascending.
pub fn non_dominated_sort(pop: &[Fitness], objs: &[Objective]) -> Vec<Vec<usize>> {
    let n = pop.len();
    let mut dominated_by = vec![0usize; n];
    let mut dominates_list: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if pop[i].dominates(&pop[j], objs) {
                dominates_list[i].push(j);
                dominated_by[j] += 1;
            } else if pop[j].dominates(&pop[i], objs) {
                dominates_list[j].push(i);
                dominated_by[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominates_list[i] {
                dominated_by[j] -= 1;
                if dominated_by[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of every member of `front` (indices into `pop`), in
/// front order. Objectives are min-max normalized within the front; the two
/// extremes of an objective get `+∞`. An objective on which the whole front
/// agrees contributes nothing.
pub fn crowding_distance(pop: &[Fitness], front: &[usize], objs: &[Objective]) -> Vec<f64> {
    let m = front.len();
    let mut d = vec![0.0f64; m];
    if m == 0 {
        return d;
    }
    for &o in objs {
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| pop[front[a]].value(o).total_cmp(&pop[front[b]].value(o)).then(a.cmp(&b)));
        let lo = pop[front[order[0]]].value(o);
        let hi = pop[front[order[m - 1]]].value(o);
        let range = hi - lo;
        if !(range > 0.0) {
            continue;
        }
        d[order[0]] = f64::INFINITY;
        d[order[m - 1]] = f64::INFINITY;
        if !range.is_finite() {
            continue;
        }
        for k in 1..m.saturating_sub(1) {
            let gap = pop[front[order[k + 1]]].value(o) - pop[front[order[k - 1]]].value(o);
            d[order[k]] += gap / range;
        }
    }
    d
}

/// Drops the `n_remove` members with the smallest crowding distance, keeping
/// earlier members on ties. Survivors keep their front order.
pub fn crowding_reduce(pop: &[Fitness], front: &[usize], n_remove: usize, objs: &[Objective]) -> Result<Vec<usize>, MoeaError> {
    if n_remove >= front.len() {
        return Err(MoeaError::Parameter(format!("cannot remove {n_remove} of a {}-member front", front.len())));
    }
    let d = crowding_distance(pop, front, objs);
    let mut order: Vec<usize> = (0..front.len()).collect();
    order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(a.cmp(&b)));
    let mut keep = order[..front.len() - n_remove].to_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|k| front[k]).collect())
}

/// Elitist refill of `size` survivors from `pop`, front by front, reducing
/// the front that does not fit by crowding. Returns survivor indices in
/// selection order together with every individual's rank and crowding.
pub fn select(pop: &[Fitness], size: usize, objs: &[Objective]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let fronts = non_dominated_sort(pop, objs);
    let mut rank = vec![0; pop.len()];
    let mut crowd = vec![0.0; pop.len()];
    for (r, f) in fronts.iter().enumerate() {
        for (&i, d) in f.iter().zip(crowding_distance(pop, f, objs)) {
            rank[i] = r;
            crowd[i] = d;
        }
    }
    let mut kept = Vec::with_capacity(size);
    for f in &fronts {
        if kept.len() + f.len() <= size {
            kept.extend_from_slice(f);
        } else {
            let n_remove = kept.len() + f.len() - size;
            if n_remove < f.len() {
                kept.extend(crowding_reduce(pop, f, n_remove, objs).expect("n_remove < front size"));
            }
        }
        if kept.len() == size {
            break;
        }
    }
    (kept, rank, crowd)
}

/// True if no discarded individual dominates a kept one.
pub fn is_elitist(pop: &[Fitness], kept: &[usize], objs: &[Objective]) -> bool {
    let mut is_kept = vec![false; pop.len()];
    for &k in kept {
        is_kept[k] = true;
    }
    (0..pop.len()).filter(|&d| !is_kept[d]).all(|d| kept.iter().all(|&k| !pop[d].dominates(&pop[k], objs)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// f1 and f3, multiplier co-evolved.
    S1,
    /// f1, f2 and f3, multiplier co-evolved.
    S2,
    /// f1 and f3 with one configured multiplier.
    S3,
    /// f1 and f3 with the exact multiplier.
    S4,
}

impl std::str::FromStr for Scenario {
    type Err = MoeaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(Scenario::S1),
            "s2" => Ok(Scenario::S2),
            "s3" => Ok(Scenario::S3),
            "s4" => Ok(Scenario::S4),
            _ => Err(MoeaError::Parameter(format!("unknown scenario {s:?} (expected s1..s4)"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::S3 => "s3",
            Scenario::S4 => "s4",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScenarioPolicy {
    pub scenario: Scenario,
    /// Library index every genotype carries in S3/S4.
    pub fixed_index: Option<usize>,
    pub library_len: usize,
}

impl ScenarioPolicy {
    /// `multiplier` names the model for S3 and is ignored otherwise.
    pub fn new(scenario: Scenario, library: &MultiplierLibrary, multiplier: Option<&str>) -> Result<Self, MoeaError> {
        let fixed_index = match scenario {
            Scenario::S1 | Scenario::S2 => None,
            Scenario::S3 => {
                let id = multiplier.ok_or_else(|| MoeaError::Parameter("scenario s3 needs a multiplier id".into()))?;
                Some(library.index_of(id).ok_or_else(|| MoeaError::Parameter(format!("unknown multiplier {id:?}")))?)
            }
            Scenario::S4 => Some(library.exact_index()),
        };
        Ok(Self { scenario, fixed_index, library_len: library.len() })
    }

    pub fn objectives(&self) -> &'static [Objective] {
        match self.scenario {
            Scenario::S2 => &[Objective::Accuracy, Objective::Params, Objective::Energy],
            _ => &[Objective::Accuracy, Objective::Energy],
        }
    }

    pub fn mult_gene(&self) -> MultGenePolicy {
        match self.fixed_index {
            Some(i) => MultGenePolicy::Fixed(i),
            None => MultGenePolicy::Random { library_len: self.library_len },
        }
    }

    /// Multiplier redraw probability; zero when the multiplier is fixed.
    pub fn p_mult(&self, configured: f64) -> f64 {
        if self.fixed_index.is_some() {
            0.0
        } else {
            configured
        }
    }
}
