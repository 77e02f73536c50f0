use super::{Label, TaskKind, TaskSpec};
use crate::autodiff::logsumexp;
use crate::error::{Error, Result};

/// Test-split token accuracy of a tagger that sees only the current token:
/// multinomial logistic regression over a one-hot token (equivalently a
/// per-token embedding of label logits), fitted by full-batch gradient descent
/// on the training split.
pub fn memoryless_probe(task: &TaskSpec, vocab_size: usize) -> Result<f64> {
    if task.kind != TaskKind::Tagging {
        return Err(Error::Contract(format!("probe needs a tagging task, `{}` is not", task.name)));
    }
    let k = task.label_count();
    let mut counts = vec![0.0; vocab_size * k];
    for s in &task.train {
        let Label::Tags(tags) = &s.label else {
            return Err(Error::Contract("tagging sample without tags".into()));
        };
        for (&tok, &y) in s.tokens.iter().zip(tags) {
            counts[tok * k + y] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        return Err(Error::Contract(format!("task `{}` has no training tokens", task.name)));
    }

    let mut weights = vec![0.0; vocab_size * k];
    let mut bias = vec![0.0; k];
    let lr = 1.0;
    for _ in 0..500 {
        let mut grad_b = vec![0.0; k];
        for tok in 0..vocab_size {
            let row = &counts[tok * k..(tok + 1) * k];
            let n: f64 = row.iter().sum();
            if n == 0.0 {
                continue;
            }
            let logits: Vec<f64> = (0..k).map(|j| weights[tok * k + j] + bias[j]).collect();
            let lse = logsumexp(&logits);
            for j in 0..k {
                let g = n * (logits[j] - lse).exp() - row[j];
                weights[tok * k + j] -= lr * g / n;
                grad_b[j] += g;
            }
        }
        for j in 0..k {
            bias[j] -= lr * grad_b[j] / total;
        }
    }

    let (mut hit, mut seen) = (0usize, 0usize);
    for s in &task.test {
        let Label::Tags(tags) = &s.label else { continue };
        for (&tok, &y) in s.tokens.iter().zip(tags) {
            let pred = (0..k)
                .map(|j| weights[tok * k + j] + bias[j])
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, v)| if v > best.1 { (j, v) } else { best })
                .0;
            hit += usize::from(pred == y);
            seen += 1;
        }
    }
    if seen == 0 {
        return Err(Error::Contract(format!("task `{}` has no test tokens", task.name)));
    }
    Ok(hit as f64 / seen as f64)
}
