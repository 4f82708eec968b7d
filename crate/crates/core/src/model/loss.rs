use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

/// Cross-entropy against a label-smoothed target: the gold token gets
/// `1 - eps` and `eps` is spread evenly over the other tokens (excluding
/// `pad` when given). Rows whose gold token is `pad` are ignored and the
/// result is averaged over the remaining rows.
pub fn label_smoothed_loss(g: &mut Graph<'_>, logits: Var, gold: &[usize], eps: f64, pad: Option<usize>) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let v = *shape.last().unwrap_or(&0);
    let rows = g.value(logits).numel() / v.max(1);
    if gold.len() != rows {
        return Err(Error::shape("label_smoothed_loss", &shape, &[gold.len()]));
    }
    if !(0.0..1.0).contains(&eps) {
        return Err(Error::invalid("label_smoothed_loss", format!("smoothing {eps} outside [0, 1)")));
    }
    let others = v.saturating_sub(1 + usize::from(pad.is_some()));
    if others == 0 && eps > 0.0 {
        return Err(Error::invalid("label_smoothed_loss", "smoothing needs at least two candidate tokens"));
    }
    if let Some(&bad) = gold.iter().find(|&&t| t >= v) {
        return Err(Error::invalid("label_smoothed_loss", format!("gold id {bad} outside vocabulary of {v}")));
    }
    let off = if others == 0 { 0.0 } else { eps / others as f64 };
    let mut q = vec![0.0; rows * v];
    let mut counted = 0usize;
    for (r, &t) in gold.iter().enumerate() {
        if Some(t) == pad {
            continue;
        }
        counted += 1;
        let row = &mut q[r * v..(r + 1) * v];
        row.iter_mut().for_each(|x| *x = off);
        if let Some(p) = pad {
            row[p] = 0.0;
        }
        row[t] = 1.0 - eps;
    }
    if counted == 0 {
        return Err(Error::invalid("label_smoothed_loss", "every target position is padding"));
    }
    let lp = g.log_softmax(logits);
    let q = g.constant(Tensor::new(shape, q)?);
    let prod = g.mul(lp, q)?;
    let total = g.sum(prod);
    Ok(g.scale(total, -1.0 / counted as f64))
}

/// Fraction of non-pad rows whose argmax matches the gold token.
pub fn token_accuracy(logits: &Tensor, gold: &[usize], pad: Option<usize>) -> f64 {
    let v = logits.last_dim();
    let (mut hit, mut n) = (0usize, 0usize);
    for (row, &t) in logits.data().chunks(v).zip(gold) {
        if Some(t) == pad {
            continue;
        }
        n += 1;
        let best = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc })
            .0;
        hit += usize::from(best == t);
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}
