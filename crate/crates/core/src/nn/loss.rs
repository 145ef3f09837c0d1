use super::tensor::Tensor;
use super::NnError;

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let k = logits.row_len();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / N`.
pub fn loss_softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor), NnError> {
    let (n, k) = (logits.batch(), logits.row_len());
    if labels.len() != n {
        return Err(NnError::Shape {
            layer: usize::MAX,
            msg: format!("{} labels for {n} logit rows", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(NnError::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        grad.data_mut()[i * k + label] -= 1.0;
    }
    let scale = 1.0 / n.max(1) as f64;
    for g in grad.data_mut() {
        *g *= scale;
    }
    Ok((loss * scale, grad))
}
