//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line with
//! the measured numbers before asserting. The long-running experiments
//! (hierarchy, clustering, multi-task benefit) are serialized through a lock
//! so their wall-clock timings are not distorted by each other.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use common::{all_paths, crf_enumerate, crf_path_score, rng, store_gradcheck, ConstantEnv};
use modpool::architecture::{assemble_baseline, Model, ModelConfig, SharingScheme, TaskNetwork, Topology};
use modpool::autodiff::gradcheck::check_gradients;
use modpool::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use modpool::controller::{ControllerConfig, ControllerPolicy};
use modpool::harness::{
    cmd_train, run_training, Checkpoint, Experiment, ExperimentConfig, SuiteConfig, BEST_CHECKPOINT,
    LAST_CHECKPOINT, METRICS_FILE, RESULTS_FILE,
};
use modpool::layers::{AvgPoolLinearHead, BiLstmModule, CrfLayer, CrossStitchUnit, EmbeddingTable, Linear, LstmCell};
use modpool::tasks::{Batch, Suite, SyntheticSpec};
use modpool::trainer::{algorithm_step, normalize_rewards, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

static HEAVY: Mutex<()> = Mutex::new(());

fn report(criterion: &str, pass: bool, detail: &str) {
    println!("[{}] {criterion}: {detail}", if pass { "PASS" } else { "FAIL" });
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

// ---------------------------------------------------------------------------
// Gradient suite

const CASES: usize = 50;
const GRAD_TOL: f64 = 1e-4;
const EPS: f64 = 1e-6;

fn tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    common::random_matrix(r, rows, cols, scale)
}

fn dim(r: &mut ChaCha8Rng) -> usize {
    r.gen_range(1..=4)
}

/// `sum(x * w)` for a fixed random `w`, turning any output into a scalar
/// whose gradient reaches every element.
fn project(tape: &mut Tape, x: Var, w: &Tensor) -> modpool::Result<Var> {
    let wv = tape.constant(w.clone());
    let p = tape.mul(x, wv)?;
    Ok(tape.sum(p))
}

type Case = (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> modpool::Result<Var>>);

fn op_case(op: &str, r: &mut ChaCha8Rng) -> Case {
    let (m, n) = (dim(r), dim(r));
    let x = tensor(r, m, n, 2.0);
    let y = tensor(r, m, n, 2.0);
    let w = tensor(r, m, n, 1.0);
    match op {
        "add" => (vec![x, y], Box::new(move |t, v| {
            let o = t.add(v[0], v[1])?;
            project(t, o, &w)
        })),
        "sub" => (vec![x, y], Box::new(move |t, v| {
            let o = t.sub(v[0], v[1])?;
            project(t, o, &w)
        })),
        "mul" => (vec![x, y], Box::new(move |t, v| {
            let o = t.mul(v[0], v[1])?;
            project(t, o, &w)
        })),
        "add_row" => {
            let row = tensor(r, 1, n, 2.0);
            (vec![x, row], Box::new(move |t, v| {
                let o = t.add_row(v[0], v[1])?;
                project(t, o, &w)
            }))
        }
        "mul_col" => {
            let col = Tensor::vector(common::uniform_vec(r, m, 2.0)).unwrap();
            (vec![x, col], Box::new(move |t, v| {
                let o = t.mul_col(v[0], v[1])?;
                project(t, o, &w)
            }))
        }
        "scale" => {
            let s = r.gen_range(-3.0..3.0);
            (vec![x], Box::new(move |t, v| {
                let o = t.scale(v[0], s);
                project(t, o, &w)
            }))
        }
        "scale_by" => {
            let k = dim(r);
            let s = tensor(r, 1, k, 2.0);
            let idx = r.gen_range(0..k);
            (vec![x, s], Box::new(move |t, v| {
                let o = t.scale_by(v[0], v[1], idx)?;
                project(t, o, &w)
            }))
        }
        "matmul" => {
            let p = dim(r);
            let b = tensor(r, n, p, 2.0);
            let w = tensor(r, m, p, 1.0);
            (vec![x, b], Box::new(move |t, v| {
                let o = t.matmul(v[0], v[1])?;
                project(t, o, &w)
            }))
        }
        "concat_cols" => {
            let p = dim(r);
            let b = tensor(r, m, p, 2.0);
            let w = tensor(r, m, n + p, 1.0);
            (vec![x, b], Box::new(move |t, v| {
                let o = t.concat_cols(&[v[0], v[1]])?;
                project(t, o, &w)
            }))
        }
        "concat_rows" => {
            let p = dim(r);
            let b = tensor(r, p, n, 2.0);
            let w = tensor(r, m + p, n, 1.0);
            (vec![x, b], Box::new(move |t, v| {
                let o = t.concat_rows(&[v[0], v[1]])?;
                project(t, o, &w)
            }))
        }
        "slice_cols" => {
            let s = r.gen_range(0..n);
            let e = r.gen_range(s + 1..=n);
            let w = tensor(r, m, e - s, 1.0);
            (vec![x], Box::new(move |t, v| {
                let o = t.slice_cols(v[0], s, e)?;
                project(t, o, &w)
            }))
        }
        "slice_rows" => {
            let s = r.gen_range(0..m);
            let e = r.gen_range(s + 1..=m);
            let w = tensor(r, e - s, n, 1.0);
            (vec![x], Box::new(move |t, v| {
                let o = t.slice_rows(v[0], s, e)?;
                project(t, o, &w)
            }))
        }
        "mean" => {
            let axis = r.gen_range(0..2);
            let len = if axis == 0 { n } else { m };
            let w = Tensor::vector(common::uniform_vec(r, len, 1.0)).unwrap();
            (vec![x], Box::new(move |t, v| {
                let o = t.mean(v[0], axis)?;
                project(t, o, &w)
            }))
        }
        "sum" => (vec![x], Box::new(|t, v| Ok(t.sum(v[0])))),
        "sigmoid" => (vec![x], Box::new(move |t, v| {
            let o = t.sigmoid(v[0]);
            project(t, o, &w)
        })),
        "tanh" => (vec![x], Box::new(move |t, v| {
            let o = t.tanh(v[0]);
            project(t, o, &w)
        })),
        "log_softmax" => (vec![x], Box::new(move |t, v| {
            let o = t.log_softmax(v[0]);
            project(t, o, &w)
        })),
        "logsumexp" => {
            let w = Tensor::vector(common::uniform_vec(r, m, 1.0)).unwrap();
            (vec![x], Box::new(move |t, v| {
                let o = t.logsumexp(v[0]);
                project(t, o, &w)
            }))
        }
        "gather" => {
            let k = r.gen_range(1..=5);
            let idx: Vec<usize> = (0..k).map(|_| r.gen_range(0..m)).collect();
            let w = tensor(r, k, n, 1.0);
            (vec![x], Box::new(move |t, v| {
                let o = t.gather(v[0], &idx)?;
                project(t, o, &w)
            }))
        }
        "pick" => {
            let idx: Vec<usize> = (0..m).map(|_| r.gen_range(0..n)).collect();
            let w = Tensor::vector(common::uniform_vec(r, m, 1.0)).unwrap();
            (vec![x], Box::new(move |t, v| {
                let o = t.pick(v[0], &idx)?;
                project(t, o, &w)
            }))
        }
        "crf_log_likelihood" => {
            let k = r.gen_range(1..=3);
            let batch = r.gen_range(1..=3);
            let lens: Vec<usize> = (0..batch).map(|_| r.gen_range(1..=4)).collect();
            let t_max = *lens.iter().max().unwrap();
            let tags: Vec<Vec<usize>> = lens.iter().map(|&l| (0..l).map(|_| r.gen_range(0..k)).collect()).collect();
            let mut inputs: Vec<Tensor> = (0..t_max).map(|_| tensor(r, batch, k, 2.0)).collect();
            inputs.push(tensor(r, k, k, 1.0));
            inputs.push(tensor(r, 1, k, 1.0));
            inputs.push(tensor(r, 1, k, 1.0));
            let w = Tensor::vector(common::uniform_vec(r, batch, 1.0)).unwrap();
            (inputs, Box::new(move |t, v| {
                let refs: Vec<&[usize]> = tags.iter().map(Vec::as_slice).collect();
                let o = t.crf_log_likelihood(&v[..t_max], v[t_max], v[t_max + 1], v[t_max + 2], &refs)?;
                project(t, o, &w)
            }))
        }
        other => panic!("unknown op {other}"),
    }
}

const TAPE_OPS: [&str; 21] = [
    "add", "sub", "mul", "add_row", "mul_col", "scale", "scale_by", "matmul", "concat_cols", "concat_rows",
    "slice_cols", "slice_rows", "mean", "sum", "sigmoid", "tanh", "log_softmax", "logsumexp", "gather", "pick",
    "crf_log_likelihood",
];

/// Store-level checks for the layers and the controller's sequence
/// log-probability.
fn layer_case(name: &str, r: &mut ChaCha8Rng) -> f64 {
    let mut store = ParamStore::new();
    match name {
        "linear" => {
            let (i, o, b) = (dim(r), dim(r), dim(r));
            let lin = Linear::new(&mut store, "lin", i, o, 1.0, r).unwrap();
            let x = tensor(r, b, i, 2.0);
            let w = tensor(r, b, o, 1.0);
            store_gradcheck(&store, &lin.params(), EPS, |t, s| {
                let xv = t.constant(x.clone());
                let y = lin.forward(t, s, xv).unwrap();
                project(t, y, &w).unwrap()
            })
        }
        "embedding" => {
            let (rows, d) = (dim(r), dim(r));
            let emb = EmbeddingTable::new(&mut store, "emb", rows, d, 1.0, r).unwrap();
            let ids: Vec<usize> = (0..r.gen_range(1..=5)).map(|_| r.gen_range(0..rows)).collect();
            let w = tensor(r, ids.len(), d, 1.0);
            store_gradcheck(&store, &[emb.weights], EPS, |t, s| {
                let y = emb.lookup(t, s, &ids).unwrap();
                project(t, y, &w).unwrap()
            })
        }
        "lstm_cell" => {
            let (i, h, b) = (dim(r), dim(r), dim(r));
            let cell = LstmCell::new(&mut store, "cell", i, h, 1.0, r).unwrap();
            let x1 = tensor(r, b, i, 2.0);
            let x2 = tensor(r, b, i, 2.0);
            let w = tensor(r, b, h, 1.0);
            store_gradcheck(&store, &cell.params(), EPS, |t, s| {
                let a = t.constant(x1.clone());
                let st = cell.step(t, s, a, None).unwrap();
                let c = t.constant(x2.clone());
                let (h2, c2) = cell.step(t, s, c, Some(st)).unwrap();
                let both = t.add(h2, c2).unwrap();
                project(t, both, &w).unwrap()
            })
        }
        "bilstm" => {
            let width = 2 * r.gen_range(1..=2);
            let m = BiLstmModule::with_scale(&mut store, "m", 0, width, 1.0, r).unwrap();
            let b = dim(r);
            let t_len = r.gen_range(1..=3);
            let xs: Vec<Tensor> = (0..t_len).map(|_| tensor(r, b, width, 2.0)).collect();
            let masks: Vec<Option<Tensor>> = (0..t_len)
                .map(|_| r.gen_bool(0.5).then(|| Tensor::vector((0..b).map(|_| r.gen_range(0..2) as f64).collect()).unwrap()))
                .collect();
            let ws: Vec<Tensor> = (0..t_len).map(|_| tensor(r, b, width, 1.0)).collect();
            store_gradcheck(&store, &m.params(), EPS, |t, s| {
                let steps: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
                let mv: Vec<Option<Var>> = masks.iter().map(|m| m.as_ref().map(|m| t.constant(m.clone()))).collect();
                let out = m.forward(t, s, &steps, &mv).unwrap();
                let mut total = project(t, out[0], &ws[0]).unwrap();
                for (o, w) in out.iter().zip(&ws).skip(1) {
                    let p = project(t, *o, w).unwrap();
                    total = t.add(total, p).unwrap();
                }
                total
            })
        }
        "head" => {
            let (i, c, b) = (dim(r), r.gen_range(2..=4), dim(r));
            let head = AvgPoolLinearHead::new(&mut store, "head", i, c, 1.0, r).unwrap();
            let t_len = r.gen_range(1..=3);
            let xs: Vec<Tensor> = (0..t_len).map(|_| tensor(r, b, i, 2.0)).collect();
            let inv = Tensor::vector((0..b).map(|_| 1.0 / r.gen_range(1..=t_len) as f64).collect()).unwrap();
            let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..c)).collect();
            store_gradcheck(&store, &head.params(), EPS, |t, s| {
                let steps: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
                let inv = t.constant(inv.clone());
                let lp = head.forward(t, s, &steps, &vec![None; t_len], inv).unwrap();
                let picked = t.pick(lp, &labels).unwrap();
                t.sum(picked)
            })
        }
        "cross_stitch" => {
            let tasks = r.gen_range(2..=3);
            let unit = CrossStitchUnit::new(&mut store, "cs", tasks, 0.5, r).unwrap();
            let (b, d) = (dim(r), dim(r));
            let xs: Vec<Tensor> = (0..tasks).map(|_| tensor(r, b, d, 2.0)).collect();
            let ws: Vec<Tensor> = (0..tasks).map(|_| tensor(r, b, d, 1.0)).collect();
            store_gradcheck(&store, &unit.params(), EPS, |t, s| {
                let inputs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
                let out = unit.mix(t, s, &inputs).unwrap();
                let mut total = project(t, out[0], &ws[0]).unwrap();
                for (o, w) in out.iter().zip(&ws).skip(1) {
                    let p = project(t, *o, w).unwrap();
                    total = t.add(total, p).unwrap();
                }
                total
            })
        }
        "crf_layer" => {
            let k = r.gen_range(1..=3);
            let crf = CrfLayer::new(&mut store, "crf", k, 1.0, r).unwrap();
            let t_len = r.gen_range(1..=4);
            let emit = tensor(r, t_len, k, 2.0);
            let tags: Vec<usize> = (0..t_len).map(|_| r.gen_range(0..k)).collect();
            store_gradcheck(&store, &crf.params(), EPS, |t, s| {
                let e = t.constant(emit.clone());
                crf.log_likelihood_sequence(t, s, e, &tags).unwrap()
            })
        }
        "log_prob_of" => {
            let modules = r.gen_range(1..=3);
            let depth = r.gen_range(1..=3);
            let tasks = r.gen_range(1..=3);
            let cfg = ControllerConfig {
                task_embed_dim: 3,
                hidden: 4,
                init_scale: 1.0,
            };
            let policy = ControllerPolicy::new(&mut store, tasks, modules, depth, &cfg, r).unwrap();
            let len = r.gen_range(0..=depth);
            let actions: Vec<usize> = (0..len).map(|_| r.gen_range(0..modules)).collect();
            let task = r.gen_range(0..tasks);
            store_gradcheck(&store, &policy.params(), EPS, |t, s| {
                policy.log_prob_of(t, s, task, &actions).unwrap()
            })
        }
        other => panic!("unknown layer {other}"),
    }
}

const LAYERS: [&str; 8] = [
    "linear", "embedding", "lstm_cell", "bilstm", "head", "cross_stitch", "crf_layer", "log_prob_of",
];

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut r = rng(1001);
    for op in TAPE_OPS {
        let mut w: f64 = 0.0;
        for _ in 0..CASES {
            let (inputs, f) = op_case(op, &mut r);
            let rep = check_gradients(&inputs, EPS, |t, v| f(t, v)).unwrap();
            w = w.max(rep.max_rel_error);
        }
        worst.push((op.to_string(), w));
    }
    for layer in LAYERS {
        let mut w: f64 = 0.0;
        for _ in 0..CASES {
            w = w.max(layer_case(layer, &mut r));
        }
        worst.push((layer.to_string(), w));
    }
    let elapsed = start.elapsed();
    let failing: Vec<_> = worst.iter().filter(|(_, e)| !(*e <= GRAD_TOL)).collect();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let pass = failing.is_empty() && elapsed < Duration::from_secs(60);
    report(
        "1 gradient suite",
        pass,
        &format!(
            "{} operations x {CASES} cases, max rel err {max:.2e} (tol {GRAD_TOL:.0e}), {:.1}s, failing {failing:?}",
            worst.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// CRF against enumeration

#[test]
fn criterion_2_crf_oracle() {
    let start = Instant::now();
    let mut r = rng(2002);
    let mut worst_z: f64 = 0.0;
    let mut worst_score: f64 = 0.0;
    let mut path_mismatch = 0;
    let mut sets = 0;
    for t_len in 1..=4 {
        for k in 1..=3 {
            for _ in 0..100 {
                let mut store = ParamStore::new();
                let crf = CrfLayer::new(&mut store, "crf", k, 3.0, &mut r).unwrap();
                let emit = tensor(&mut r, t_len, k, 3.0);
                let rows = common::rows(&emit);
                let trans = store.value(crf.transitions).data().to_vec();
                let start_s = store.value(crf.start).data().to_vec();
                let stop_s = store.value(crf.stop).data().to_vec();
                let (log_z, best, best_score) = crf_enumerate(&rows, &trans, &start_s, &stop_s);

                worst_z = worst_z.max((crf.log_partition(&store, &emit) - log_z).abs());
                // The training path reaches log Z through the likelihood.
                let gold: Vec<usize> = (0..t_len).map(|_| r.gen_range(0..k)).collect();
                let mut tape = Tape::inference();
                let e = tape.constant(emit.clone());
                let ll = crf.log_likelihood_sequence(&mut tape, &store, e, &gold).unwrap();
                let via_ll = crf_path_score(&rows, &trans, &start_s, &stop_s, &gold) - tape.value(ll).item();
                worst_z = worst_z.max((via_ll - log_z).abs());

                let (path, score) = crf.viterbi(&store, &emit).unwrap();
                if path != best {
                    path_mismatch += 1;
                }
                worst_score = worst_score.max((score - best_score).abs());
                sets += 1;
            }
        }
    }
    // Exact ties resolve to the lexicographically first path.
    let mut store = ParamStore::new();
    let crf = CrfLayer::new(&mut store, "crf", 3, 0.0, &mut r).unwrap();
    let tied = Tensor::filled(&[4, 3], 1.0);
    let (tie_path, _) = crf.viterbi(&store, &tied).unwrap();
    let (_, tie_best, _) = crf_enumerate(&common::rows(&tied), &[0.0; 9], &[0.0; 3], &[0.0; 3]);
    assert_eq!(all_paths(4, 3)[0], tie_best);

    let elapsed = start.elapsed();
    let pass = worst_z <= 1e-8
        && worst_score <= 1e-8
        && path_mismatch == 0
        && tie_path == tie_best
        && elapsed < Duration::from_secs(10);
    report(
        "2 crf oracle",
        pass,
        &format!(
            "{sets} score sets, max |logZ err| {worst_z:.1e}, max |viterbi score err| {worst_score:.1e}, \
             {path_mismatch} path mismatches, {:.2}s",
            elapsed.as_secs_f64()
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Reward normalization

#[test]
fn criterion_3_reward_normalization() {
    let mut r = rng(3003);
    let (mut sum_err, mut shift_err): (f64, f64) = (0.0, 0.0);
    let mut monotone = true;
    for _ in 0..2000 {
        let n = r.gen_range(1..=8);
        let rewards: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..0.0)).collect();
        let tau = [1.0 / 30.0, 0.1, 1.0, 5.0][r.gen_range(0..4)];
        let w = normalize_rewards(&rewards, tau).unwrap();
        sum_err = sum_err.max((w.iter().sum::<f64>() - 1.0).abs());
        let c = r.gen_range(-10.0..10.0);
        let shifted: Vec<f64> = rewards.iter().map(|x| x + c).collect();
        let ws = normalize_rewards(&shifted, tau).unwrap();
        for (a, b) in w.iter().zip(&ws) {
            shift_err = shift_err.max((a - b).abs());
        }
        for i in 0..n {
            for j in 0..n {
                if rewards[i] > rewards[j] && w[i] < w[j] {
                    monotone = false;
                }
            }
        }
    }
    let ex = normalize_rewards(&[-1.0, -2.0], 1.0).unwrap();
    let rounded: Vec<f64> = ex.iter().map(|v| (v * 1e6).round() / 1e6).collect();
    let example = rounded == [0.731059, 0.268941];
    let pass = sum_err <= 1e-9 && shift_err <= 1e-12 && monotone && example;
    report(
        "3 reward normalization",
        pass,
        &format!("sum err {sum_err:.1e}, shift err {shift_err:.1e}, monotone {monotone}, [-1,-2] at tau=1 -> {rounded:?}"),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Bandit

#[test]
fn criterion_4_bandit_convergence() {
    let start = Instant::now();
    let cfg = TrainConfig {
        samples_per_task: 4,
        epsilon: 0.2,
        max_depth: 1,
        ..TrainConfig::default()
    };
    let mut crossings = Vec::new();
    for seed in 0..10 {
        let mut store = ParamStore::new();
        let policy = ControllerPolicy::new(&mut store, 1, 2, 1, &ControllerConfig::default(), &mut rng(seed)).unwrap();
        let mut env = ConstantEnv::bandit(-0.1, -2.0);
        let mut r = rng(100 + seed);
        let mut hit = None;
        for step in 1..=500 {
            algorithm_step(&mut env, &policy, &mut store, 0, &cfg, &mut r).unwrap();
            let p = policy.action_distribution_trace(&store, 0).unwrap()[0][0];
            if p > 0.9 && policy.greedy_decode(&store, 0).unwrap().actions == [0] {
                hit = Some(step);
                break;
            }
        }
        crossings.push(hit);
    }
    let ok = crossings.iter().filter(|h| h.is_some()).count();
    let elapsed = start.elapsed();
    let pass = ok >= 9 && elapsed < Duration::from_secs(60);
    report(
        "4 bandit convergence",
        pass,
        &format!("{ok}/10 seeds reach P(better) > 0.9; first step per seed {crossings:?}; {:.1}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Search experiments

fn experiment(suite: SyntheticSpec, scheme: SharingScheme, seed: u64, train: TrainConfig) -> ExperimentConfig {
    ExperimentConfig {
        seed,
        out_dir: None,
        suite: SuiteConfig::synthetic(suite),
        model: ModelConfig::new(scheme),
        controller: ControllerConfig::default(),
        train: TrainConfig { seed, ..train },
    }
}

fn greedy_paths(exp: &Experiment) -> Vec<Vec<usize>> {
    let policy = exp.policy.as_ref().unwrap();
    (0..exp.suite.tasks.len())
        .map(|k| policy.greedy_decode(&exp.store, k).unwrap().actions)
        .collect()
}

fn search_train() -> TrainConfig {
    TrainConfig::default()
}

#[test]
fn criterion_5_hierarchy_discovery() {
    let _guard = lock();
    let mut hits = 0;
    let mut strict = 0;
    let mut slowest = Duration::ZERO;
    let mut lines = Vec::new();
    for seed in 0..10 {
        let start = Instant::now();
        let cfg = experiment(SyntheticSpec::hierarchy(2, 5000, seed), SharingScheme::Searched, seed, search_train());
        let mut exp = Experiment::build(cfg, Path::new(".")).unwrap();
        exp.train(None).unwrap();
        exp.restore_best().unwrap();
        let paths = greedy_paths(&exp);
        let (low, mid) = (&paths[0], &paths[1]);
        let prefix = !low.is_empty() && mid.starts_with(low);
        hits += prefix as usize;
        strict += (prefix && mid.len() > low.len()) as usize;
        slowest = slowest.max(start.elapsed());
        lines.push(format!("seed {seed}: LOW {low:?} MID {mid:?}"));
    }
    for l in &lines {
        println!("    {l}");
    }
    let pass = hits >= 7 && slowest < Duration::from_secs(15 * 60);
    report(
        "5 hierarchy discovery",
        pass,
        &format!(
            "LOW path a non-empty prefix of MID in {hits}/10 seeds ({strict} strictly shorter); slowest seed {:.0}s",
            slowest.as_secs_f64()
        ),
    );
    assert!(pass);
}

fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean within-cluster and cross-cluster values of `f` over task pairs.
fn within_cross(clusters: &[usize], f: impl Fn(usize, usize) -> f64) -> (f64, f64) {
    let (mut w, mut wn, mut c, mut cn) = (0.0, 0, 0.0, 0);
    for i in 0..clusters.len() {
        for j in i + 1..clusters.len() {
            if clusters[i] == clusters[j] {
                w += f(i, j);
                wn += 1;
            } else {
                c += f(i, j);
                cn += 1;
            }
        }
    }
    (w / wn as f64, c / cn as f64)
}

#[test]
fn criterion_6_clustering() {
    let _guard = lock();
    let (mut jac_ok, mut dist_ok) = (0, 0);
    let mut slowest = Duration::ZERO;
    for seed in 0..10 {
        let start = Instant::now();
        let spec = SyntheticSpec::cluster(2, 3, 2000, 0.1, seed);
        let cfg = experiment(spec, SharingScheme::Searched, seed, search_train());
        let mut exp = Experiment::build(cfg, Path::new(".")).unwrap();
        exp.train(None).unwrap();
        exp.restore_best().unwrap();
        let paths = greedy_paths(&exp);
        let clusters: Vec<usize> = exp.suite.tasks.iter().map(|t| t.cluster.unwrap()).collect();
        let emb = exp.store.value(exp.policy.as_ref().unwrap().task_embeddings.weights);
        let (jw, jc) = within_cross(&clusters, |i, j| jaccard(&paths[i], &paths[j]));
        let (dw, dc) = within_cross(&clusters, |i, j| euclidean(emb.row(i), emb.row(j)));
        jac_ok += (jw > jc) as usize;
        dist_ok += (dw < dc) as usize;
        slowest = slowest.max(start.elapsed());
        println!("    seed {seed}: jaccard within {jw:.3} cross {jc:.3}; distance within {dw:.4} cross {dc:.4}; paths {paths:?}");
    }
    let pass = jac_ok >= 7 && dist_ok >= 7 && slowest < Duration::from_secs(20 * 60);
    report(
        "6 clustering",
        pass,
        &format!(
            "jaccard within > cross in {jac_ok}/10 seeds, distance within < cross in {dist_ok}/10 seeds; slowest seed {:.0}s",
            slowest.as_secs_f64()
        ),
    );
    assert!(pass);
}

/// Samples per task so that the 70/10/20 split leaves exactly 300 for
/// training.
const SAMPLES_FOR_300_TRAIN: usize = 429;

#[test]
fn criterion_7_multitask_benefit() {
    let _guard = lock();
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut gaps = Vec::new();
    for seed in 0..5 {
        let mut means = Vec::new();
        for scheme in [SharingScheme::Searched, SharingScheme::SingleTask] {
            let spec = SyntheticSpec::cluster(2, 3, SAMPLES_FOR_300_TRAIN, 0.1, seed);
            let cfg = experiment(spec, scheme, seed, search_train());
            let mut exp = Experiment::build(cfg, Path::new(".")).unwrap();
            assert!(exp.suite.tasks.iter().all(|t| t.train.len() == 300));
            let out = dir.path().join(format!("{seed}-{scheme:?}"));
            means.push(run_training(&mut exp, &out).unwrap().mean_test);
        }
        println!("    seed {seed}: searched {:.4} single task {:.4}", means[0], means[1]);
        gaps.push(100.0 * (means[0] - means[1]));
    }
    let gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
    let elapsed = start.elapsed();
    let pass = gap >= 2.0 && elapsed < Duration::from_secs(30 * 60);
    report(
        "7 multi-task benefit",
        pass,
        &format!("searched minus single-task test accuracy {gap:.2} points over 5 seeds; {:.0}s", elapsed.as_secs_f64()),
    );
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Baselines

fn sorted(mut ids: Vec<ParamId>) -> Vec<ParamId> {
    ids.sort();
    ids
}

fn small_model(suite: &Suite, scheme: SharingScheme, seed: u64) -> (ParamStore, Model) {
    let cfg = ModelConfig {
        scheme,
        pool_size: 3,
        width: 6,
        embed_dim: 4,
    };
    let mut store = ParamStore::new();
    let model = Model::build(&mut store, suite, &cfg, &mut rng(seed)).unwrap();
    (store, model)
}

fn features(net: &TaskNetwork, store: &ParamStore, b: &Batch) -> Vec<Vec<f64>> {
    let mut tape = Tape::inference();
    let (f, _) = net.features(&mut tape, store, b).unwrap();
    f.iter().map(|&v| tape.value(v).data().to_vec()).collect()
}

#[test]
fn criterion_8_baseline_fidelity() {
    let suite = SyntheticSpec::cluster(2, 2, 40, 0.1, 8).generate().unwrap();
    let d = 6;
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let (_, fs) = small_model(&suite, SharingScheme::FullyShared, 1);
    let module = sorted(fs.pool.as_ref().unwrap().modules()[0].params());
    let nets = assemble_baseline(&fs).unwrap();
    checks.push((
        "FS one module shared by all",
        nets.iter().all(|n| {
            sorted(n.parameter_partition().0) == module && n.private.is_none() && n.head_input_width() == d
        }),
    ));

    let (_, ssp) = small_model(&suite, SharingScheme::StackSharePrivate, 2);
    let module = sorted(ssp.pool.as_ref().unwrap().modules()[0].params());
    let nets = assemble_baseline(&ssp).unwrap();
    checks.push((
        "SSP shared module feeds private, head width d",
        nets.iter().all(|n| {
            n.topology == Topology::Stacked
                && sorted(n.parameter_partition().0) == module
                && n.private.is_some()
                && n.head_input_width() == d
                && n.head.input_dim() == d
        }),
    ));

    let (_, psp) = small_model(&suite, SharingScheme::ParallelSharePrivate, 3);
    let nets = assemble_baseline(&psp).unwrap();
    checks.push((
        "PSP concatenation, head width 2d",
        nets.iter().all(|n| n.topology == Topology::Parallel && n.head_input_width() == 2 * d && n.head.input_dim() == 2 * d),
    ));

    let (_, st) = small_model(&suite, SharingScheme::SingleTask, 4);
    let nets = assemble_baseline(&st).unwrap();
    let disjoint = nets.iter().enumerate().all(|(i, a)| {
        nets.iter().skip(i + 1).all(|b| a.params().iter().all(|p| !b.params().contains(p)))
    });
    checks.push((
        "SingleTask shares nothing",
        disjoint && nets.iter().all(|n| n.parameter_partition().0.is_empty() && n.head_input_width() == d),
    ));

    let (mut store, cs) = small_model(&suite, SharingScheme::CrossStitch, 5);
    let cols = cs.stitch.as_ref().unwrap();
    let nets = assemble_baseline(&cs).unwrap();
    let partition_ok = nets.iter().all(|n| {
        let (shared, private) = n.parameter_partition();
        sorted(shared.clone()) == sorted(cols.params()) && shared.iter().all(|p| !private.contains(p))
    });
    checks.push(("CS partition covers every column and unit", partition_ok));

    let n = suite.tasks.len();
    for unit in &cols.units {
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        *store.value_mut(unit.alpha) = Tensor::matrix(n, n, eye).unwrap();
    }
    let mut identical = true;
    for (task, net) in nets.iter().enumerate() {
        let alone = TaskNetwork {
            shared: vec![cols.layers[0][task].clone(), cols.layers[1][task].clone()],
            topology: Topology::SharedOnly,
            ..net.clone()
        };
        let samples: Vec<_> = suite.tasks[task].train.iter().take(6).collect();
        let b = Batch::from_samples(&samples).unwrap();
        identical &= features(net, &store, &b) == features(&alone, &store, &b);
        identical &= net.predict(&store, &b).unwrap() == alone.predict(&store, &b).unwrap();
    }
    checks.push(("CS with identity mixing equals independent columns exactly", identical));

    let pass = checks.iter().all(|(_, ok)| *ok);
    let failed: Vec<_> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report("8 baseline fidelity", pass, &format!("{} structural checks, failing {failed:?}", checks.len()));
    assert!(pass);
}

// ---------------------------------------------------------------------------
// Determinism and checkpointing

fn small_run(seed: u64) -> ExperimentConfig {
    let mut spec = SyntheticSpec::cluster(2, 2, 80, 0.1, seed);
    spec.max_len = 8;
    ExperimentConfig {
        seed,
        out_dir: None,
        suite: SuiteConfig::synthetic(spec),
        model: ModelConfig {
            scheme: SharingScheme::Searched,
            pool_size: 3,
            width: 8,
            embed_dim: 6,
        },
        controller: ControllerConfig {
            task_embed_dim: 5,
            hidden: 8,
            ..ControllerConfig::default()
        },
        train: TrainConfig {
            batch_size: 16,
            max_epochs: 4,
            max_depth: 3,
            fine_tune_epochs: 2,
            seed,
            ..TrainConfig::default()
        },
    }
}

const RUN_FILES: [&str; 4] = [METRICS_FILE, RESULTS_FILE, BEST_CHECKPOINT, LAST_CHECKPOINT];

fn same_files(a: &Path, b: &Path) -> bool {
    RUN_FILES.iter().all(|f| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap())
}

#[test]
fn criterion_9_determinism_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    cmd_train(small_run(21), dir.path(), &a).unwrap();
    cmd_train(small_run(21), dir.path(), &b).unwrap();
    let reruns = same_files(&a, &b);

    let mut first = Experiment::build(small_run(21), dir.path()).unwrap();
    first.run_epoch().unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    drop(first);
    let mut resumed = Experiment::from_checkpoint(Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    run_training(&mut resumed, &c).unwrap();
    let resume = same_files(&a, &c);

    let pass = reruns && resume;
    report(
        "9 determinism and checkpointing",
        pass,
        &format!("byte-identical reruns {reruns}; resume after epoch 1 matches uninterrupted run {resume}"),
    );
    assert!(pass);
}
