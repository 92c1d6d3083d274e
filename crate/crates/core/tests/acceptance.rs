//! Acceptance suite, run without the libtest harness so its output is never
//! captured. Each criterion prints one PASS/FAIL line; the target exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cgpnas::bench::{self, generate_desk, write_idx, RunConfig, Split, TemplateKind};
use cgpnas::cgpnet::{extract_active, Coord, Genotype, NodeFunction, NodeGene};
use cgpnas::moea::{
    crowding_reduce, energy_uj, fitness_f3, non_dominated_sort, Fitness, Objective, ParetoArchive, Scenario,
};
use cgpnas::multsim::{MultiplierLibrary, MultiplierModel};
use cgpnas::netir::{
    compile, lower_bottleneck, lower_inception, lower_residual, sum_output_shape, BottleneckParams, InceptionParams,
    LayerGraph, Op, PoolMode, ResidualParams, TensorShape,
};
use cgpnas::qengine::{
    conv_forward_approx, conv_forward_float, loss_and_gradients, quantize, ConvArithmetic, ConvGeometry, Tensor,
    WeightStore,
};

fn shape(h: usize, w: usize, c: usize) -> TensorShape {
    TensorShape::new(h, w, c)
}

/// A single-row genotype whose nodes feed each other in order.
fn chain(functions: &[NodeFunction]) -> Genotype {
    let grid = functions
        .iter()
        .enumerate()
        .map(|(i, f)| NodeGene {
            function: *f,
            inputs: (0..f.arity()).map(|_| if i == 0 { Coord::INPUT } else { Coord::new(i, 0) }).collect(),
        })
        .collect();
    Genotype {
        rows: 1,
        cols: functions.len(),
        levels_back: 1,
        grid,
        output: Coord::new(functions.len(), 0),
        mult_index: 0,
        lineage: 0,
    }
}

fn lower(functions: &[NodeFunction], input: TensorShape, classes: usize) -> LayerGraph {
    compile(&extract_active(&chain(functions)).unwrap(), input, classes).unwrap()
}

// ---------------------------------------------------------------- f3

/// (final acc, N_mult in units of 10^5, reported uJ, multiplier id).
const REPORTED: [(f64, u64, f64, &str); 14] = [
    (83.98, 309, 14.88, "mul8u_JD"),
    (83.50, 309, 13.82, "mul8u_C1"),
    (83.18, 285, 10.76, "mul8u_GR"),
    (83.01, 229, 6.79, "mul8u_M1"),
    (82.53, 317, 9.22, "mul8u_85Q"),
    (82.15, 205, 11.48, "mul8u_JFF"),
    (81.03, 77, 2.23, "mul8u_85Q"),
    (79.55, 272, 0.14, "mul8u_KX"),
    (79.20, 68, 1.05, "mul8u_2N4"),
    (78.64, 81, 4.54, "mul8u_JFF"),
    (77.66, 268, 0.14, "mul8u_KX"),
    (77.60, 57, 1.68, "mul8u_M1"),
    (76.73, 49, 0.03, "mul8u_KX"),
    (74.34, 32, 0.05, "mul8u_8DU"),
];

fn f3_regression() -> String {
    let lib = MultiplierLibrary::builtin();
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for &(_, n5, reported, id) in &REPORTED {
        let model = lib.by_id(id).unwrap();
        // a 1x1 single-filter convolution over (n5, 1000, 100) makes n5·10^5 multiplications
        let g = lower(&[NodeFunction::Conv { filters: 1, kernel: 1, stride: 1 }, NodeFunction::Fc { units: 10 }], shape(n5 as usize, 1000, 100), 10);
        assert_eq!(g.mult_count(), n5 * 100_000);
        let f3 = fitness_f3(&g, model);
        assert_eq!(f3, energy_uj(g.mult_count(), model.energy_pj()));
        if id == "mul8u_JFF" && n5 == 205 {
            assert!((f3 - 11.48).abs() < 1e-9, "JFF row gives {f3}");
            assert_eq!(format!("{f3:.2}"), "11.48");
        }
        if model.energy_pj() < 0.1 {
            continue;
        }
        let rel = (f3 - reported).abs() / reported;
        assert!(rel <= 0.03, "{id}: {f3} vs {reported} ({:.2}%)", 100.0 * rel);
        worst = worst.max(rel);
        checked += 1;
    }
    assert_eq!(checked, 10);
    format!("10 rows within {:.2}% (limit 3%), JFF row = 11.48 uJ, 4 low-energy rows excluded", 100.0 * worst)
}

// ---------------------------------------------------------------- run helpers

fn micro_idx_dir(dir: &Path, train: usize, test: usize) {
    write_idx(&generate_desk(train, 101, Split::Train), dir, "train").unwrap();
    write_idx(&generate_desk(test, 102, Split::Test), dir, "test").unwrap();
}

fn evaluation_count() -> String {
    let dir = tempfile::tempdir().unwrap();
    micro_idx_dir(dir.path(), 40, 20);
    let cfg = RunConfig {
        dataset: format!("idx:{}", dir.path().display()),
        output_dir: dir.path().join("out"),
        ..RunConfig::default()
    };
    let out = bench::run(&cfg, &mut |_| {}).unwrap();
    assert_eq!(out.archive.evaluations(), 88);
    assert_eq!(out.manifest.run.evaluations, 88);
    let rows = csv::Reader::from_path(out.dir.join(bench::GENERATIONS_FILE)).unwrap().records().count();
    assert_eq!(rows, 88);
    let per_gen: Vec<usize> = (0..=10).map(|g| out.archive.records.iter().filter(|r| r.generation == g).count()).collect();
    assert!(per_gen.iter().all(|&n| n == 8), "{per_gen:?}");
    "default parameters: 88 evaluations logged (8 per generation, generations 0..=10)".into()
}

// ---------------------------------------------------------------- exact multiplier

fn exact_multiplier() -> String {
    let m = MultiplierModel::build_exact("exact", 0.56).unwrap();
    for a in 0..=255u8 {
        for b in 0..=255u8 {
            assert_eq!(m.multiply(a, b) as u32, a as u32 * b as u32, "{a}·{b}");
        }
    }
    assert_eq!(m.error_metrics(), (0.0, 0));
    "table(a,b) = a·b for all 65536 pairs".into()
}

// ---------------------------------------------------------------- sorting

fn objectives(n: usize) -> Vec<Objective> {
    if n == 2 {
        vec![Objective::Accuracy, Objective::Energy]
    } else {
        vec![Objective::Accuracy, Objective::Params, Objective::Energy]
    }
}

/// Random fitness on a coarse grid so that ties and duplicates occur.
fn random_population(rng: &mut ChaCha8Rng, n: usize) -> Vec<Fitness> {
    let levels = rng.gen_range(2..12);
    (0..n)
        .map(|_| Fitness {
            f1: rng.gen_range(0..levels) as f64 / levels as f64,
            f2: rng.gen_range(0..levels) as f64 * 100.0,
            f3: rng.gen_range(0..levels) as f64 * 0.5,
        })
        .collect()
}

fn no_worse(a: &Fitness, b: &Fitness, objs: &[Objective]) -> (bool, bool) {
    let mut all = true;
    let mut strict = false;
    for &o in objs {
        let (x, y) = match o {
            Objective::Accuracy => (-a.f1, -b.f1),
            Objective::Params => (a.f2, b.f2),
            Objective::Energy => (a.f3, b.f3),
        };
        all &= x <= y;
        strict |= x < y;
    }
    (all, strict)
}

fn oracle_dominates(a: &Fitness, b: &Fitness, objs: &[Objective]) -> bool {
    let (all, strict) = no_worse(a, b, objs);
    all && strict
}

/// Repeatedly peels the members no remaining member dominates.
fn peeling_oracle(pop: &[Fitness], objs: &[Objective]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..pop.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> =
            left.iter().copied().filter(|&i| !left.iter().any(|&j| oracle_dominates(&pop[j], &pop[i], objs))).collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

fn dominance_sort_oracle() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0xd0);
    let mut max_fronts = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(1..=64);
        let objs = objectives(rng.gen_range(2..=3));
        let pop = random_population(&mut rng, n);
        let got = non_dominated_sort(&pop, &objs);
        let want = peeling_oracle(&pop, &objs);
        assert_eq!(got, want, "trial {trial}");
        max_fronts = max_fronts.max(got.len());
    }
    format!("1000 random populations (n <= 64, 2-3 objectives) match the peeling oracle; up to {max_fronts} fronts")
}

// ---------------------------------------------------------------- crowding

fn objective_value(f: &Fitness, o: Objective) -> f64 {
    match o {
        Objective::Accuracy => f.f1,
        Objective::Params => f.f2,
        Objective::Energy => f.f3,
    }
}

/// Crowding distance recomputed member by member: each member finds its
/// neighbours in the (value, position) order by counting.
fn crowding_oracle(pop: &[Fitness], front: &[usize], objs: &[Objective]) -> Vec<f64> {
    let m = front.len();
    let mut d = vec![0.0; m];
    for &o in objs {
        let v: Vec<f64> = front.iter().map(|&i| objective_value(&pop[i], o)).collect();
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            continue;
        }
        let pos: Vec<usize> =
            (0..m).map(|i| (0..m).filter(|&j| v[j] < v[i] || (v[j] == v[i] && j < i)).count()).collect();
        let at = |p: usize| (0..m).find(|&j| pos[j] == p).unwrap();
        for i in 0..m {
            if pos[i] == 0 || pos[i] == m - 1 {
                d[i] = f64::INFINITY;
            } else if d[i].is_finite() {
                d[i] += (v[at(pos[i] + 1)] - v[at(pos[i] - 1)]) / (hi - lo);
            }
        }
    }
    d
}

/// Removes the least crowded member, the latest one on ties, `n` times.
fn reduce_oracle(pop: &[Fitness], front: &[usize], n: usize, objs: &[Objective]) -> Vec<usize> {
    let d = crowding_oracle(pop, front, objs);
    let mut alive: Vec<usize> = (0..front.len()).collect();
    for _ in 0..n {
        let victim = *alive
            .iter()
            .min_by(|&&a, &&b| d[a].partial_cmp(&d[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        alive.retain(|&k| k != victim);
    }
    alive.into_iter().map(|k| front[k]).collect()
}

fn crowding_semantics() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0);
    let mut fronts = 0;
    let mut extreme_checks = 0;
    while fronts < 1000 {
        let objs = objectives(rng.gen_range(2..=3));
        let n = rng.gen_range(2..=64);
        let pop = random_population(&mut rng, n);
        let front = non_dominated_sort(&pop, &objs).swap_remove(0);
        if front.len() < 2 {
            continue;
        }
        fronts += 1;
        let n_remove = rng.gen_range(0..front.len());
        let got = crowding_reduce(&pop, &front, n_remove, &objs).unwrap();
        assert_eq!(got, reduce_oracle(&pop, &front, n_remove, &objs), "front {fronts}");
        assert!(crowding_reduce(&pop, &front, front.len(), &objs).is_err());
        // the extremes of every objective survive whenever there is room
        // for all of them
        let room = front.len() - n_remove;
        if n_remove + 2 <= front.len() && (objs.len() == 2 || room >= 2 * objs.len()) {
            let kept: BTreeSet<usize> = got.iter().copied().collect();
            for &o in &objs {
                let vals: Vec<f64> = front.iter().map(|&i| objective_value(&pop[i], o)).collect();
                let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for target in [lo, hi] {
                    assert!(
                        kept.iter().any(|&i| objective_value(&pop[i], o) == target),
                        "front {fronts}: no survivor attains {target} on {o:?}"
                    );
                }
            }
            extreme_checks += 1;
        }
    }
    // three-point front: the middle point goes first
    let pop = [0.9, 0.5, 0.1].map(|a| Fitness { f1: a, f2: 0.0, f3: a * 10.0 });
    let objs = objectives(2);
    assert_eq!(crowding_reduce(&pop, &[0, 1, 2], 1, &objs).unwrap(), vec![0, 2]);
    format!("1000 random fronts match the reimplemented oracle; extremes survived in {extreme_checks} eligible reductions")
}

// ---------------------------------------------------------------- shapes

fn shape_algebra() -> String {
    let mut pairs = 0;
    for h1 in 1..=8 {
        for w1 in 1..=8 {
            for c1 in 1..=8 {
                for h2 in 1..=8 {
                    for w2 in 1..=8 {
                        for c2 in 1..=8 {
                            let got = sum_output_shape(shape(h1, w1, c1), shape(h2, w2, c2));
                            assert_eq!(got, shape(h1.min(h2), w1.min(w2), c1.max(c2)));
                            pairs += 1;
                        }
                    }
                }
            }
        }
    }
    assert_eq!(sum_output_shape(shape(32, 32, 16), shape(16, 16, 32)), shape(16, 16, 32));
    assert_eq!(sum_output_shape(shape(8, 16, 4), shape(16, 8, 8)), shape(8, 8, 8));

    // single convolution, same padding, and its counts
    let g = lower(&[NodeFunction::Conv { filters: 16, kernel: 3, stride: 1 }, NodeFunction::Fc { units: 10 }], shape(32, 32, 3), 10);
    let conv = g.layers.iter().find(|l| matches!(l.op, Op::Conv { .. })).unwrap();
    assert_eq!(conv.output_shape, shape(32, 32, 16));
    assert_eq!((conv.params, conv.mults), (448, 442_368));
    assert_eq!(g.mult_count(), 442_368);
    // pooling
    let g = lower(&[NodeFunction::Max { kernel: 2, stride: 2 }, NodeFunction::Fc { units: 10 }], shape(32, 32, 3), 10);
    let pool = g.layers.iter().find(|l| matches!(l.op, Op::Pool { .. })).unwrap();
    assert_eq!(pool.output_shape, shape(16, 16, 3));
    // FC 128 -> 10 contributes parameters but no counted multiplications
    let g = lower(&[NodeFunction::Fc { units: 10 }], shape(1, 1, 128), 10);
    assert_eq!(g.param_count(), 1290);
    assert_eq!(g.mult_count(), 0);

    let inc = lower_inception(InceptionParams { c1: 8, c2: 8, c3: 8, r1: 4, r2: 4, r3: 4 }, shape(16, 16, 32));
    assert_eq!(inc.output_shape(), shape(16, 16, 28));
    let inc_mults: u64 = inc
        .layers
        .iter()
        .filter_map(|l| match l.op {
            Op::Conv { kernel, filters, .. } => {
                let i = l.input_shapes[0];
                let o = l.output_shape;
                Some((o.height * o.width * kernel * kernel * i.channels * filters) as u64)
            }
            _ => None,
        })
        .sum();
    assert_eq!(inc.layers.iter().filter(|l| matches!(l.op, Op::Conv { .. })).count(), 6);
    assert_eq!(inc.mult_count(), inc_mults);

    let res = lower_residual(ResidualParams { n: 3, m: 3, stride: 1, filters: 32 }, shape(16, 16, 32));
    assert_eq!(res.output_shape(), shape(16, 16, 32));
    let res = lower_residual(ResidualParams { n: 3, m: 3, stride: 2, filters: 32 }, shape(32, 32, 16));
    assert_eq!(res.output_shape(), shape(16, 16, 32));
    let add = res.layers.iter().find(|l| l.op == Op::Add).unwrap();
    assert_eq!(add.input_shapes[0], add.input_shapes[1]);

    let bot = lower_bottleneck(BottleneckParams { n: 3, stride: 1, filters: 32, reduce: 8 }, shape(16, 16, 64));
    assert_eq!(bot.output_shape(), shape(16, 16, 32));
    let convs: Vec<(usize, usize, usize)> = bot
        .layers
        .iter()
        .filter_map(|l| match l.op {
            Op::Conv { kernel, .. } => Some((kernel, l.input_shapes[0].channels, l.output_shape.channels)),
            _ => None,
        })
        .collect();
    // main path 64 -> 8 -> 8 -> 32, skip 64 -> 32
    for want in [(1, 64, 8), (3, 8, 8), (1, 8, 32), (1, 64, 32)] {
        assert!(convs.contains(&want), "bottleneck convs {convs:?} lack {want:?}");
    }
    assert_eq!(convs.len(), 4);

    // a three-node genotype, lowered by hand
    let g = lower(
        &[
            NodeFunction::Conv { filters: 16, kernel: 3, stride: 1 },
            NodeFunction::Max { kernel: 2, stride: 2 },
            NodeFunction::Fc { units: 10 },
        ],
        shape(32, 32, 3),
        10,
    );
    let got: Vec<(Op, TensorShape)> = g.layers.iter().map(|l| (l.op, l.output_shape)).collect();
    let want = vec![
        (Op::Input, shape(32, 32, 3)),
        (Op::Conv { kernel: 3, stride: 1, filters: 16 }, shape(32, 32, 16)),
        (Op::Relu, shape(32, 32, 16)),
        (Op::Pool { mode: PoolMode::Max, window: (2, 2), stride: (2, 2), padding: cgpnas::netir::Padding::Valid }, shape(16, 16, 16)),
        (Op::Dense { units: 10 }, shape(1, 1, 10)),
        (Op::Softmax, shape(1, 1, 10)),
    ];
    assert_eq!(got, want);
    format!("{pairs} shape pairs follow (min h, min w, max c); all listed lowerings match")
}

// ---------------------------------------------------------------- gradients

fn gradient_check() -> String {
    // conv -> residual module -> classifier
    let g = lower(
        &[
            NodeFunction::Conv { filters: 3, kernel: 3, stride: 1 },
            NodeFunction::Res { n: 3, m: 1, stride: 2, filters: 4 },
            NodeFunction::Fc { units: 3 },
        ],
        shape(5, 5, 2),
        3,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut w = WeightStore::<f64>::init(&g, &mut rng);
    let keys: Vec<_> = w.keys().copied().collect();
    for k in &keys {
        for t in w.get_mut(k).unwrap().tensors.iter_mut().take(2) {
            for v in t.data.iter_mut() {
                *v += rng.gen_range(-0.2..0.2);
            }
        }
    }
    let x = Tensor::from_vec(3, g.input_shape(), (0..150).map(|_| rng.gen_range(0.0..1.0)).collect());
    let labels = [2u8, 0, 1];
    let l2 = 1e-3;
    let arith = ConvArithmetic::Float;
    let (_, grads, _) = loss_and_gradients(&g, &w, &x, &labels, l2, arith).unwrap();
    let loss = |w: &WeightStore<f64>| loss_and_gradients(&g, w, &x, &labels, l2, arith).unwrap().0;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for k in &keys {
        for ti in 0..w.get(k).unwrap().trainable {
            for i in 0..w.get(k).unwrap().tensors[ti].data.len() {
                let mut wp = w.clone();
                wp.get_mut(k).unwrap().tensors[ti].data[i] += h;
                let mut wm = w.clone();
                wm.get_mut(k).unwrap().tensors[ti].data[i] -= h;
                let fd = (loss(&wp) - loss(&wm)) / (2.0 * h);
                let an = grads.layers[k][ti][i];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-4));
                n += 1;
            }
        }
    }
    assert!(worst < 1e-4, "max relative error {worst:e}");
    format!("{n} parameters, max relative error {worst:.2e} (limit 1e-4)")
}

// ---------------------------------------------------------------- quantization

fn quantization_soundness() -> String {
    let exact = MultiplierModel::build_exact("exact", 0.56).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a);
    let mut tightest: f64 = 0.0;
    for trial in 0..1000 {
        let input = shape(rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=4));
        let kernel = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..=2);
        let filters = rng.gen_range(1..=4);
        let batch = rng.gen_range(1..=2);
        let geom = ConvGeometry::same(input, kernel, stride, filters);
        let signed = rng.gen_bool(0.5);
        let x: Vec<f64> =
            (0..batch * input.numel()).map(|_| if signed { rng.gen_range(-3.0..3.0) } else { rng.gen_range(0.0..3.0) }).collect();
        let wts: Vec<f64> = (0..geom.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bias: Vec<f64> = (0..filters).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let qx = quantize(&x, !signed).unwrap();
        let qw = quantize(&wts, false).unwrap();
        let approx = conv_forward_approx(&qx, batch, &qw, &bias, &exact, &geom).unwrap();
        let float = conv_forward_float(&Tensor::from_vec(batch, input, x.clone()), &wts, &bias, &geom).unwrap();
        // per tap |xw - x̂ŵ| <= |x|·sw/2 + |w|·sx/2 + sx·sw/4
        let xmax = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let wmax = wts.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tap = xmax * qw.scale / 2.0 + wmax * qx.scale / 2.0 + qx.scale * qw.scale / 4.0;
        let bound = geom.patch_len() as f64 * tap + 1e-9;
        for (a, f) in approx.data.iter().zip(&float.data) {
            let err = (a - f).abs();
            assert!(err <= bound, "trial {trial}: {err} > {bound}");
            tightest = tightest.max(err / bound);
        }
    }
    format!("1000 random convolutions within the scale bound; worst error used {:.1}% of it", 100.0 * tightest)
}

// ---------------------------------------------------------------- desk run

/// Values frozen from the first run of this configuration.
const PINNED_GEN0_BEST: f64 = 0.775;
const PINNED_FINAL_BEST: f64 = 0.994;

fn desk_config(out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        scenario: Scenario::S4,
        seed: 2024,
        template: TemplateKind::Desk,
        output_dir: out.to_path_buf(),
        augment_shift: 1,
        ..RunConfig::default()
    };
    let p = &mut cfg.parameters;
    (p.n_r, p.n_c, p.levels_back) = (3, 8, 3);
    (p.pop_size, p.generations, p.e_train, p.e_retrain) = (8, 10, 5, 3);
    (p.d_train, p.d_retrain, p.d_test) = (500, 1000, 1000);
    cfg
}

fn desk_learning_signal() -> String {
    let dir = tempfile::tempdir().unwrap();
    let out = bench::run(&desk_config(dir.path()), &mut |_| {}).unwrap();
    let a = &out.archive;
    assert!(a.final_front_is_sound());
    assert!(a.records.iter().all(|r| r.mult_id == "mul8u_JFF"));
    let gen0 = a.records.iter().filter(|r| r.generation == 0).map(|r| r.f1).fold(0.0, f64::max);
    let best = a.final_records().iter().map(|r| r.f1).fold(0.0, f64::max);
    let retrained = a.final_front.iter().map(|e| e.final_accuracy).fold(0.0, f64::max);
    eprintln!("desk run: generation-0 best {gen0}, final front best {best}, after re-training {retrained}");
    assert!(best > 0.10, "best f1 {best} is not above chance");
    assert!(best > gen0, "best f1 {best} does not improve on generation 0 ({gen0})");
    assert_eq!(gen0, PINNED_GEN0_BEST, "generation-0 best drifted");
    assert_eq!(best, PINNED_FINAL_BEST, "final best drifted");
    format!("best f1 {best:.3} > generation-0 best {gen0:.3} > chance 0.10 (re-trained {retrained:.3})")
}

// ---------------------------------------------------------------- determinism

fn determinism() -> String {
    let dir = tempfile::tempdir().unwrap();
    micro_idx_dir(dir.path(), 120, 60);
    let cfg = |out: &str| {
        let mut c = RunConfig {
            scenario: Scenario::S1,
            seed: 7,
            dataset: format!("idx:{}", dir.path().display()),
            template: TemplateKind::Desk,
            output_dir: dir.path().join(out),
            ..RunConfig::default()
        };
        let p = &mut c.parameters;
        (p.n_r, p.n_c, p.levels_back, p.pop_size, p.generations) = (2, 6, 2, 4, 2);
        (p.d_train, p.d_retrain, p.d_test, p.e_train, p.e_retrain) = (60, 120, 60, 2, 1);
        c
    };
    let a = bench::run(&cfg("a"), &mut |_| {}).unwrap();
    let b = bench::run(&RunConfig { workers: 2, ..cfg("b") }, &mut |_| {}).unwrap();
    for f in [bench::GENERATIONS_FILE, bench::PLOT_FILE, bench::ARCHIVE_FILE] {
        assert_eq!(fs::read(a.dir.join(f)).unwrap(), fs::read(b.dir.join(f)).unwrap(), "{f} differs");
    }
    let parsed = ParetoArchive::from_json(&fs::read_to_string(a.dir.join(bench::ARCHIVE_FILE)).unwrap()).unwrap();
    assert_eq!(parsed, a.archive);
    "two seed-7 runs (1 and 2 workers) wrote byte-identical CSV and archive files".into()
}

// ---------------------------------------------------------------- harness

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> String); 10] = [
        ("f3 regression", f3_regression),
        ("evaluation count", evaluation_count),
        ("exact multiplier", exact_multiplier),
        ("dominance-sort oracle", dominance_sort_oracle),
        ("crowding semantics", crowding_semantics),
        ("shape algebra", shape_algebra),
        ("gradient check", gradient_check),
        ("quantization soundness", quantization_soundness),
        ("desk learning signal", desk_learning_signal),
        ("determinism", determinism),
    ];
    // ACCEPTANCE_ONLY=<substring> restricts the run to matching criteria
    let only = std::env::var("ACCEPTANCE_ONLY").ok();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check));
        let secs = t.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS  {name:<24} {secs:>8.1}s  {detail}"),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name:<24} {secs:>8.1}s  {msg}");
                failed.push(name);
            }
        }
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
