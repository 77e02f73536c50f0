//! Reference implementations written directly from the definitions, on plain
//! `f64` slices, for checking the tape-based code against.
#![allow(dead_code)]

use modpool::autodiff::{ParamStore, Tensor};
use modpool::layers::{BiLstmModule, LstmCell};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, uniform_vec(rng, rows * cols, scale)).unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(xs);
    xs.iter().map(|x| x - z).collect()
}

/// `x W + b` with `W` stored input-major.
pub fn affine(x: &[f64], w: &Tensor, b: &[f64]) -> Vec<f64> {
    let (rows, cols) = w.dims2();
    assert_eq!(rows, x.len());
    (0..cols)
        .map(|j| b[j] + (0..rows).map(|i| x[i] * w.at(i, j)).sum::<f64>())
        .collect()
}

pub fn lstm_step(store: &ParamStore, cell: &LstmCell, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = cell.hidden;
    let zx = affine(x, store.value(cell.w_input), store.value(cell.bias).data());
    let zh = affine(h, store.value(cell.w_hidden), &vec![0.0; 4 * n]);
    let z: Vec<f64> = zx.iter().zip(&zh).map(|(a, b)| a + b).collect();
    let mut h_new = vec![0.0; n];
    let mut c_new = vec![0.0; n];
    for j in 0..n {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[n + j]);
        let g = z[2 * n + j].tanh();
        let o = sigmoid(z[3 * n + j]);
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

/// One unpadded sequence through a bidirectional module.
pub fn bilstm(store: &ParamStore, module: &BiLstmModule, seq: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = module.width / 2;
    let run = |cell: &LstmCell, order: Vec<usize>| {
        let mut out = vec![Vec::new(); seq.len()];
        let (mut h, mut c) = (vec![0.0; n], vec![0.0; n]);
        for t in order {
            let (h2, c2) = lstm_step(store, cell, &seq[t], &h, &c);
            out[t] = h2.clone();
            h = h2;
            c = c2;
        }
        out
    };
    let fwd = run(&module.forward, (0..seq.len()).collect());
    let bwd = run(&module.backward, (0..seq.len()).rev().collect());
    fwd.into_iter().zip(bwd).map(|(mut f, b)| {
        f.extend(b);
        f
    }).collect()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Every label sequence of length `t` over `k` labels, lexicographic.
pub fn all_paths(t: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |y| {
                    let mut q = p.clone();
                    q.push(y);
                    q
                })
            })
            .collect();
    }
    out
}

/// `start[y0] + sum emit[t][yt] + sum trans[y(t-1)][yt] + stop[yT]`, with
/// `trans` row-major `from x to`.
pub fn crf_path_score(emit: &[Vec<f64>], trans: &[f64], start: &[f64], stop: &[f64], path: &[usize]) -> f64 {
    let k = start.len();
    let mut s = start[path[0]] + stop[path[path.len() - 1]];
    for (t, &y) in path.iter().enumerate() {
        s += emit[t][y];
        if t > 0 {
            s += trans[path[t - 1] * k + y];
        }
    }
    s
}

/// Log-partition and best path (first in lexicographic order among ties)
/// by enumerating all `k^t` paths.
pub fn crf_enumerate(emit: &[Vec<f64>], trans: &[f64], start: &[f64], stop: &[f64]) -> (f64, Vec<usize>, f64) {
    let paths = all_paths(emit.len(), start.len());
    let scores: Vec<f64> = paths.iter().map(|p| crf_path_score(emit, trans, start, stop, p)).collect();
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    (log_sum_exp(&scores), paths[best].clone(), scores[best])
}

/// Softmax at temperature `tau`, computed without a shift.
pub fn softmax_naive(xs: &[f64], tau: f64) -> Vec<f64> {
    let e: Vec<f64> = xs.iter().map(|x| (x / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Largest relative error between reverse-mode gradients of `f` with
/// respect to the stored parameters `ids` and central differences taken by
/// perturbing the store itself.
pub fn store_gradcheck(
    store: &ParamStore,
    ids: &[modpool::autodiff::ParamId],
    eps: f64,
    f: impl Fn(&mut modpool::autodiff::Tape, &ParamStore) -> modpool::autodiff::Var,
) -> f64 {
    use modpool::autodiff::Tape;
    let mut s = store.clone();
    s.zero_all_grads();
    let mut tape = Tape::new();
    let root = f(&mut tape, &s);
    tape.backward(root).unwrap();
    s.absorb(&mut tape);
    let eval = |s: &ParamStore| {
        let mut t = Tape::inference();
        let v = f(&mut t, s);
        t.value(v).item()
    };
    let mut worst: f64 = 0.0;
    let mut work = store.clone();
    for &id in ids {
        let analytic = s.grad(id).to_vec();
        for (j, &a) in analytic.iter().enumerate() {
            let orig = work.value(id).data()[j];
            work.value_mut(id).data_mut()[j] = orig + eps;
            let hi = eval(&work);
            work.value_mut(id).data_mut()[j] = orig - eps;
            let lo = eval(&work);
            work.value_mut(id).data_mut()[j] = orig;
            let n = (hi - lo) / (2.0 * eps);
            worst = worst.max((a - n).abs() / 1f64.max(a.abs()).max(n.abs()));
        }
    }
    worst
}

/// Every action sequence the controller can emit: up to `max_depth` modules
/// out of `modules`.
pub fn all_action_sequences(modules: usize, max_depth: usize) -> Vec<Vec<usize>> {
    (0..=max_depth).flat_map(|d| all_paths(d, modules)).collect()
}

/// Stand-in for the module networks: no training, fixed reward per
/// architecture.
pub struct ConstantEnv {
    pub rewards: Vec<(Vec<usize>, f64)>,
    pub default: f64,
    pub updates: usize,
}

impl ConstantEnv {
    /// Two-armed bandit: module 0 pays `good`, module 1 and Stop pay `bad`.
    pub fn bandit(good: f64, bad: f64) -> Self {
        ConstantEnv {
            rewards: vec![(vec![0], good), (vec![1], bad)],
            default: bad,
            updates: 0,
        }
    }
}

impl modpool::trainer::ArchitectureEnv for ConstantEnv {
    fn update(&mut self, _: &mut ParamStore, _: &[usize]) -> modpool::Result<()> {
        self.updates += 1;
        Ok(())
    }

    fn reward(&mut self, _: &ParamStore, actions: &[usize]) -> modpool::Result<f64> {
        Ok(self
            .rewards
            .iter()
            .find(|(a, _)| a == actions)
            .map_or(self.default, |(_, r)| *r))
    }
}
