//! Forward-backward recursions for a single linear-chain CRF sequence.
//!
//! Scores: `start[y0] + sum_t emit[t][y_t] + sum_t trans[y_{t-1}][y_t] + stop[y_last]`.

use super::tape::logsumexp;

/// Gradient of one sequence's log-likelihood with respect to each input.
#[derive(Debug, Clone)]
pub(crate) struct CrfSequenceGrad {
    /// `len x K`, row-major.
    pub emissions: Vec<f64>,
    pub transitions: Vec<f64>,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

/// Forward log-messages `alpha[t][j]`, row-major `len x K`.
pub(crate) fn forward_messages(emit: &[f64], len: usize, k: usize, trans: &[f64], start: &[f64]) -> Vec<f64> {
    let mut alpha = vec![0.0; len * k];
    for j in 0..k {
        alpha[j] = start[j] + emit[j];
    }
    let mut buf = vec![0.0; k];
    for t in 1..len {
        for j in 0..k {
            for i in 0..k {
                buf[i] = alpha[(t - 1) * k + i] + trans[i * k + j];
            }
            alpha[t * k + j] = logsumexp(&buf) + emit[t * k + j];
        }
    }
    alpha
}

pub(crate) fn log_partition(emit: &[f64], len: usize, k: usize, trans: &[f64], start: &[f64], stop: &[f64]) -> f64 {
    let alpha = forward_messages(emit, len, k, trans, start);
    let last: Vec<f64> = (0..k).map(|j| alpha[(len - 1) * k + j] + stop[j]).collect();
    logsumexp(&last)
}

pub(crate) fn path_score(emit: &[f64], k: usize, trans: &[f64], start: &[f64], stop: &[f64], tags: &[usize]) -> f64 {
    let mut s = start[tags[0]] + stop[tags[tags.len() - 1]];
    for (t, &y) in tags.iter().enumerate() {
        s += emit[t * k + y];
        if t > 0 {
            s += trans[tags[t - 1] * k + y];
        }
    }
    s
}

pub(crate) fn log_likelihood_with_grad(
    emit: &[f64],
    len: usize,
    k: usize,
    trans: &[f64],
    start: &[f64],
    stop: &[f64],
    tags: &[usize],
) -> (f64, CrfSequenceGrad) {
    let alpha = forward_messages(emit, len, k, trans, start);
    let mut beta = vec![0.0; len * k];
    beta[(len - 1) * k..].copy_from_slice(stop);
    let mut buf = vec![0.0; k];
    for t in (0..len - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                buf[j] = trans[i * k + j] + emit[(t + 1) * k + j] + beta[(t + 1) * k + j];
            }
            beta[t * k + i] = logsumexp(&buf);
        }
    }
    let last: Vec<f64> = (0..k).map(|j| alpha[(len - 1) * k + j] + stop[j]).collect();
    let log_z = logsumexp(&last);
    let ll = path_score(emit, k, trans, start, stop, tags) - log_z;

    let mut g_emit = vec![0.0; len * k];
    for t in 0..len {
        for j in 0..k {
            g_emit[t * k + j] = -(alpha[t * k + j] + beta[t * k + j] - log_z).exp();
        }
        g_emit[t * k + tags[t]] += 1.0;
    }
    let mut g_trans = vec![0.0; k * k];
    for t in 1..len {
        for i in 0..k {
            for j in 0..k {
                let lp = alpha[(t - 1) * k + i] + trans[i * k + j] + emit[t * k + j] + beta[t * k + j] - log_z;
                g_trans[i * k + j] -= lp.exp();
            }
        }
        g_trans[tags[t - 1] * k + tags[t]] += 1.0;
    }
    // start/stop see the same indicator-minus-marginal terms as the first and
    // last emission rows.
    let g_start = g_emit[..k].to_vec();
    let g_stop = g_emit[(len - 1) * k..].to_vec();
    (
        ll,
        CrfSequenceGrad {
            emissions: g_emit,
            transitions: g_trans,
            start: g_start,
            stop: g_stop,
        },
    )
}
