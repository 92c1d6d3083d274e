//! The generational loop: seed, evaluate, mutate, merge, select, and finally
//! re-train the surviving non-dominated set.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cgpnet::{extract_active, mutate_with, Coord, Genotype, MutationRates, Template};
use crate::multsim::MultiplierLibrary;
use crate::netir::{compile, LayerGraph};
use crate::qengine::{evaluate_accuracy, train, ConvArithmetic, Samples, TrainConfig, WeightStore};

use super::{
    energy_uj, is_elitist, non_dominated_sort, select, EvalRecord, FinalEntry, Fitness, MoeaError, ParetoArchive,
    PopulationPoint, ScenarioPolicy,
};

#[derive(Clone, Debug)]
pub struct EvolveConfig {
    pub template: Template,
    pub pop_size: usize,
    pub generations: usize,
    /// Training images per generation; a fresh random subset is drawn each
    /// generation when smaller than the training set.
    pub d_train: usize,
    /// Training images for the final re-training.
    pub d_retrain: usize,
    /// Leading test images used for f1.
    pub d_test: usize,
    /// Search-time training; `epochs` is E_train.
    pub train: TrainConfig,
    /// E_retrain; 0 skips re-training.
    pub retrain_epochs: usize,
    pub p_arch: f64,
    pub p_mult: f64,
    pub workers: usize,
    /// Re-train only the `k` most accurate members of the final front.
    pub retrain_top_k: Option<usize>,
}

impl EvolveConfig {
    pub fn validate(&self) -> Result<(), MoeaError> {
        let bad = |m: &str| Err(MoeaError::Parameter(m.into()));
        if self.pop_size == 0 {
            return bad("pop_size must be at least 1");
        }
        if self.d_train == 0 || self.d_test == 0 {
            return bad("D_train and D_test must be positive");
        }
        if self.retrain_epochs > 0 && self.d_retrain == 0 {
            return bad("D_retrain must be positive when re-training");
        }
        for (name, p) in [("p_arch", self.p_arch), ("p_mult", self.p_mult)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(MoeaError::Parameter(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        self.train.validate().map_err(|e| MoeaError::Parameter(e.to_string()))?;
        self.template.check()?;
        Ok(())
    }
}

pub struct EvolveData<'a> {
    pub train: Samples<'a>,
    pub test: Samples<'a>,
}

/// Outcome of training and testing one candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub fitness: Fitness,
    pub n_mult: u64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationSummary {
    pub generation: usize,
    pub evaluated: usize,
    pub best_f1: f64,
    pub front_size: usize,
}

struct Member {
    record: EvalRecord,
    genotype: Genotype,
    fitness: Fitness,
    weights: WeightStore<f32>,
    graph: Option<LayerGraph>,
}

struct Job {
    genotype: Genotype,
    weights: WeightStore<f32>,
    newly_active: BTreeSet<Coord>,
    seed: u64,
}

struct Owned {
    images: Vec<u8>,
    labels: Vec<u8>,
}

fn subset(data: &Samples<'_>, n: usize, rng: &mut ChaCha8Rng) -> Option<Owned> {
    if n >= data.len() {
        return None;
    }
    let mut idx = sample(rng, data.len(), n).into_vec();
    idx.sort_unstable();
    let images = idx.iter().flat_map(|&i| data.image(i).iter().copied()).collect();
    let labels = idx.iter().map(|&i| data.labels[i]).collect();
    Some(Owned { images, labels })
}

fn view<'a>(owned: &'a Option<Owned>, full: &Samples<'a>) -> Samples<'a> {
    match owned {
        Some(o) => Samples { images: &o.images, labels: &o.labels, ..*full },
        None => *full,
    }
}

fn leading<'a>(data: &Samples<'a>, n: usize) -> Samples<'a> {
    let n = n.min(data.len());
    Samples { images: &data.images[..n * data.shape.numel()], labels: &data.labels[..n], ..*data }
}

fn evaluate(
    job: Job,
    cfg: &TrainConfig,
    train_set: &Samples<'_>,
    test: &Samples<'_>,
    library: &MultiplierLibrary,
) -> (Evaluation, WeightStore<f32>, Option<LayerGraph>) {
    let Job { genotype, mut weights, newly_active, seed } = job;
    let fail = |e: String, w| (Evaluation { fitness: Fitness::FAILED, n_mult: 0, error: Some(e) }, w, None);
    let graph = match extract_active(&genotype)
        .map_err(|e| e.to_string())
        .and_then(|a| compile(&a, train_set.shape, train_set.num_classes).map_err(|e| e.to_string()))
    {
        Ok(g) => g,
        Err(e) => return fail(e, weights),
    };
    let Some(model) = library.get(genotype.mult_index) else {
        return fail(format!("multiplier index {} outside the library", genotype.mult_index), weights);
    };
    let arith = ConvArithmetic::Approx(model);
    weights.flag_reinit(newly_active);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if let Err(e) = train(&graph, &mut weights, train_set, cfg, arith, &mut rng) {
        return fail(e.to_string(), weights);
    }
    let f1 = match evaluate_accuracy(&graph, &weights, test, arith, cfg.batch_size) {
        Ok(a) => a,
        Err(e) => return fail(e.to_string(), weights),
    };
    let n_mult = graph.mult_count();
    let fitness = Fitness { f1, f2: graph.param_count() as f64, f3: energy_uj(n_mult, model.energy_pj()) };
    (Evaluation { fitness, n_mult, error: None }, weights, Some(graph))
}

fn run_jobs<J: Send, T: Send, F: Fn(J) -> T + Sync>(jobs: Vec<J>, pool: Option<&rayon::ThreadPool>, f: F) -> Vec<T> {
    match pool {
        Some(p) => p.install(|| jobs.into_par_iter().map(&f).collect()),
        None => jobs.into_iter().map(f).collect(),
    }
}

/// Runs the search. Every candidate is trained for E_train epochs on the
/// generation's training subset and scored on the leading `d_test` test
/// images; failures score [`Fitness::FAILED`] and the search goes on. The
/// result depends only on the arguments, not on the worker count.
pub fn evolve(
    cfg: &EvolveConfig,
    policy: &ScenarioPolicy,
    data: &EvolveData<'_>,
    library: &MultiplierLibrary,
    seed: u64,
    progress: &mut dyn FnMut(&GenerationSummary),
) -> Result<ParetoArchive, MoeaError> {
    cfg.validate()?;
    if data.train.shape != data.test.shape || data.train.num_classes != data.test.num_classes {
        return Err(MoeaError::Data("train and test sets differ in image shape or class count".into()));
    }
    if data.train.is_empty() || data.test.is_empty() {
        return Err(MoeaError::Data("empty dataset".into()));
    }
    let objs = policy.objectives();
    let rates = MutationRates { p_arch: cfg.p_arch, p_mult: policy.p_mult(cfg.p_mult) };
    let pool = if cfg.workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(cfg.workers)
                .build()
                .map_err(|e| MoeaError::Parameter(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };
    let test = leading(&data.test, cfg.d_test);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_id = 0u64;
    let mut records: Vec<EvalRecord> = Vec::new();
    let mut population_log = Vec::new();

    let make_members = |jobs_meta: Vec<(u64, usize, Option<u64>, Genotype)>,
                        results: Vec<(Evaluation, WeightStore<f32>, Option<LayerGraph>)>|
     -> Vec<Member> {
        jobs_meta
            .into_iter()
            .zip(results)
            .map(|((id, generation, parent, genotype), (ev, weights, graph))| {
                let model = library.get(genotype.mult_index);
                let record = EvalRecord {
                    id,
                    generation,
                    parent,
                    f1: ev.fitness.f1,
                    f2: ev.fitness.f2,
                    f3: ev.fitness.f3,
                    mult_id: model.map(|m| m.id().to_string()).unwrap_or_default(),
                    rank: 0,
                    crowding: 0.0,
                    n_mult: ev.n_mult,
                    mult_energy_pj: model.map(|m| m.energy_pj()).unwrap_or(0.0),
                    error: ev.error,
                };
                Member { record, genotype, fitness: ev.fitness, weights, graph }
            })
            .collect()
    };

    // generation 0
    let train0 = subset(&data.train, cfg.d_train, &mut rng);
    let train_view = view(&train0, &data.train);
    let mut meta = Vec::new();
    let mut jobs = Vec::new();
    for _ in 0..cfg.pop_size {
        let genotype = cfg.template.seed(&mut rng, policy.mult_gene())?;
        meta.push((next_id, 0, None, genotype.clone()));
        jobs.push(Job { genotype, weights: WeightStore::new(), newly_active: BTreeSet::new(), seed: rng.gen() });
        next_id += 1;
    }
    let results = run_jobs(jobs, pool.as_ref(), |j| evaluate(j, &cfg.train, &train_view, &test, library));
    let mut pop = make_members(meta, results);
    drop(train0);
    {
        let fits: Vec<Fitness> = pop.iter().map(|m| m.fitness).collect();
        let (_, rank, crowd) = select(&fits, fits.len(), objs);
        for (i, m) in pop.iter_mut().enumerate() {
            m.record.rank = rank[i];
            m.record.crowding = crowd[i];
            records.push(m.record.clone());
        }
        log_population(&mut population_log, 0, &pop, &rank);
        progress(&summary(0, pop.len(), &pop, &rank));
    }

    for generation in 1..=cfg.generations {
        let subset_g = subset(&data.train, cfg.d_train, &mut rng);
        let train_view = view(&subset_g, &data.train);
        let mut meta = Vec::new();
        let mut jobs = Vec::new();
        for parent in &pop {
            let m = mutate_with(&parent.genotype, rates, library.len(), &mut rng);
            if let Some(fixed) = policy.fixed_index {
                debug_assert_eq!(m.genotype.mult_index, fixed);
            }
            meta.push((next_id, generation, Some(parent.record.id), m.genotype.clone()));
            jobs.push(Job { genotype: m.genotype, weights: parent.weights.clone(), newly_active: m.newly_active, seed: rng.gen() });
            next_id += 1;
        }
        let results = run_jobs(jobs, pool.as_ref(), |j| evaluate(j, &cfg.train, &train_view, &test, library));
        let offspring = make_members(meta, results);
        let n_parents = pop.len();
        let mut merged = pop;
        merged.extend(offspring);
        let fits: Vec<Fitness> = merged.iter().map(|m| m.fitness).collect();
        let (kept, rank, crowd) = select(&fits, cfg.pop_size, objs);
        if !is_elitist(&fits, &kept, objs) {
            return Err(MoeaError::Data(format!("generation {generation}: selection discarded a dominating candidate")));
        }
        for (i, m) in merged.iter_mut().enumerate().skip(n_parents) {
            m.record.rank = rank[i];
            m.record.crowding = crowd[i];
            records.push(m.record.clone());
        }
        let kept_rank: Vec<usize> = kept.iter().map(|&i| rank[i]).collect();
        let mut slots: Vec<Option<Member>> = merged.into_iter().map(Some).collect();
        pop = kept.iter().map(|&i| slots[i].take().expect("kept once")).collect();
        log_population(&mut population_log, generation, &pop, &kept_rank);
        progress(&summary(generation, n_parents, &pop, &kept_rank));
    }

    let final_front = retrain_front(cfg, objs, &pop, data, &test, library, &mut rng, pool.as_ref());
    Ok(ParetoArchive { objectives: objs.to_vec(), records, population: population_log, final_front })
}

fn log_population(log: &mut Vec<PopulationPoint>, generation: usize, pop: &[Member], rank: &[usize]) {
    for (m, &r) in pop.iter().zip(rank) {
        log.push(PopulationPoint {
            generation,
            id: m.record.id,
            f1: m.fitness.f1,
            f2: m.fitness.f2,
            f3: m.fitness.f3,
            rank: r,
            mult_id: m.record.mult_id.clone(),
        });
    }
}

fn summary(generation: usize, evaluated: usize, pop: &[Member], rank: &[usize]) -> GenerationSummary {
    GenerationSummary {
        generation,
        evaluated,
        best_f1: pop.iter().map(|m| m.fitness.f1).fold(0.0, f64::max),
        front_size: rank.iter().filter(|&&r| r == 0).count(),
    }
}

#[allow(clippy::too_many_arguments)]
fn retrain_front(
    cfg: &EvolveConfig,
    objs: &[super::Objective],
    pop: &[Member],
    data: &EvolveData<'_>,
    test: &Samples<'_>,
    library: &MultiplierLibrary,
    rng: &mut ChaCha8Rng,
    pool: Option<&rayon::ThreadPool>,
) -> Vec<FinalEntry> {
    let fits: Vec<Fitness> = pop.iter().map(|m| m.fitness).collect();
    let mut front: Vec<usize> = non_dominated_sort(&fits, objs)
        .into_iter()
        .next()
        .unwrap_or_default()
        .into_iter()
        .filter(|&i| pop[i].graph.is_some())
        .collect();
    if let Some(k) = cfg.retrain_top_k {
        let mut by_acc = front.clone();
        by_acc.sort_by(|&a, &b| fits[b].f1.total_cmp(&fits[a].f1).then(a.cmp(&b)));
        by_acc.truncate(k);
        front.retain(|i| by_acc.contains(i));
    }
    let retrain_set = if cfg.retrain_epochs > 0 { subset(&data.train, cfg.d_retrain, rng) } else { None };
    let retrain_view = view(&retrain_set, &data.train);
    let retrain_cfg = TrainConfig { epochs: cfg.retrain_epochs.max(1), ..cfg.train.clone() };
    let jobs: Vec<(usize, u64)> = front.iter().map(|&i| (i, rng.gen())).collect();
    let results: Vec<(f64, Option<String>)> = run_jobs(jobs, pool, |(i, seed)| {
        let m = &pop[i];
        if cfg.retrain_epochs == 0 {
            return (m.fitness.f1, None);
        }
        let graph = m.graph.as_ref().expect("filtered on graph");
        let model = library.get(m.genotype.mult_index).expect("evaluated with this model");
        let arith = ConvArithmetic::Approx(model);
        let mut w = m.weights.clone();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        match train(graph, &mut w, &retrain_view, &retrain_cfg, arith, &mut r)
            .and_then(|_| evaluate_accuracy(graph, &w, test, arith, retrain_cfg.batch_size))
        {
            Ok(a) => (a, None),
            Err(e) => (0.0, Some(e.to_string())),
        }
    });
    front
        .iter()
        .zip(results)
        .map(|(&i, (final_accuracy, retrain_error))| {
            let m = &pop[i];
            let graph = m.graph.as_ref().expect("filtered on graph");
            FinalEntry {
                id: m.record.id,
                generation: m.record.generation,
                estimated_accuracy: m.fitness.f1,
                final_accuracy,
                params: graph.param_count() as u64,
                n_mult: m.record.n_mult,
                mult_id: m.record.mult_id.clone(),
                mult_energy_pj: m.record.mult_energy_pj,
                energy_uj: m.fitness.f3,
                genotype: m.genotype.clone(),
                network: graph.to_string(),
                retrain_error,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moea::Scenario;
    use crate::netir::TensorShape;

    pub(crate) fn toy_data(n: usize, seed: u64) -> (Vec<u8>, Vec<u8>) {
        // class k is a bright band in row block k of a 6x6 image
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::with_capacity(n * 36);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let k = i % 3;
            for y in 0..6 {
                for _ in 0..6 {
                    images.push(if y / 2 == k { rng.gen_range(150..255) } else { rng.gen_range(0..60) });
                }
            }
            labels.push(k as u8);
        }
        (images, labels)
    }

    fn micro_cfg(pop: usize, generations: usize) -> EvolveConfig {
        EvolveConfig {
            template: Template::desk(2, 5, 2, 3),
            pop_size: pop,
            generations,
            d_train: 24,
            d_retrain: 30,
            d_test: 30,
            train: TrainConfig { epochs: 1, batch_size: 8, learning_rate: 0.01, ..TrainConfig::default() },
            retrain_epochs: 1,
            p_arch: 1.0,
            p_mult: 1.0,
            workers: 1,
            retrain_top_k: None,
        }
    }

    fn run(cfg: &EvolveConfig, scenario: Scenario, seed: u64) -> ParetoArchive {
        let (ti, tl) = toy_data(30, 1);
        let (vi, vl) = toy_data(30, 2);
        let shape = TensorShape::new(6, 6, 1);
        let data = EvolveData {
            train: Samples::new(&ti, shape, &tl, 3).unwrap(),
            test: Samples::new(&vi, shape, &vl, 3).unwrap(),
        };
        let lib = MultiplierLibrary::builtin();
        let policy = ScenarioPolicy::new(scenario, &lib, Some("mul8u_JD")).unwrap();
        evolve(cfg, &policy, &data, &lib, seed, &mut |_| {}).unwrap()
    }

    #[test]
    fn evaluation_count_and_final_front() {
        let a = run(&micro_cfg(4, 3), Scenario::S1, 7);
        assert_eq!(a.evaluations(), 4 + 3 * 4);
        assert!(a.final_front_is_sound());
        assert!(!a.final_front.is_empty());
        assert_eq!(a.population.len(), 4 * 4);
        let ids: BTreeSet<u64> = a.records.iter().map(|r| r.id).collect();
        assert_eq!(ids.len(), a.records.len());
        for r in &a.records {
            if r.error.is_none() {
                assert_eq!(r.f3, energy_uj(r.n_mult, r.mult_energy_pj));
            }
        }
    }

    #[test]
    fn zero_generations_keep_initial_front() {
        let mut cfg = micro_cfg(5, 0);
        cfg.retrain_epochs = 0;
        let a = run(&cfg, Scenario::S4, 3);
        assert_eq!(a.evaluations(), 5);
        let fits: Vec<Fitness> = a.records.iter().map(|r| r.fitness()).collect();
        let front: Vec<u64> = non_dominated_sort(&fits, &a.objectives)[0]
            .iter()
            .filter(|&&i| a.records[i].error.is_none())
            .map(|&i| a.records[i].id)
            .collect();
        assert_eq!(a.final_front.iter().map(|f| f.id).collect::<Vec<_>>(), front);
        for f in &a.final_front {
            assert_eq!(f.final_accuracy, f.estimated_accuracy);
        }
    }

    #[test]
    fn fixed_multiplier_scenarios_never_change_it() {
        let a = run(&micro_cfg(3, 2), Scenario::S3, 11);
        assert!(a.records.iter().all(|r| r.mult_id == "mul8u_JD"));
        let b = run(&micro_cfg(3, 2), Scenario::S4, 11);
        assert!(b.records.iter().all(|r| r.mult_id == "mul8u_JFF"));
    }

    #[test]
    fn deterministic_and_independent_of_workers() {
        let cfg = micro_cfg(3, 2);
        let a = run(&cfg, Scenario::S2, 5);
        assert_eq!(a, run(&cfg, Scenario::S2, 5));
        let par = EvolveConfig { workers: 2, ..cfg };
        assert_eq!(a, run(&par, Scenario::S2, 5));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = micro_cfg(0, 1);
        assert!(cfg.validate().is_err());
        cfg.pop_size = 2;
        cfg.p_mult = 1.5;
        assert!(cfg.validate().is_err());
    }
}
