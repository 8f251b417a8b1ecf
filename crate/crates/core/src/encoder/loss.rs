//! In-batch softmax loss and its analytic gradient.
//!
//! For a batch of `B` pairs, `logits[i][j] = q_i · c_j` and the loss is the
//! mean over rows of `-log softmax(logits[i])[i]`: every other target in the
//! batch serves as a negative for query `i`.

use std::collections::HashMap;

use super::model::{dot, Dense, EmbeddingModel, Real, TowerParams};
use super::EncoderError;

/// A pair after vocabulary lookup; out-of-vocabulary features are gone.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EncodedPair {
    pub query: Vec<u32>,
    pub target: Vec<u32>,
}

/// Sparse gradient: only touched table rows are present.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    /// Unique row ids in first-touch order with their gradients.
    pub rows: Vec<(u32, Vec<F>)>,
    pub query_tower: Vec<Dense<F>>,
    pub target_tower: Vec<Dense<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn row(&self, id: u32) -> Option<&[F]> {
        self.rows.iter().find(|(r, _)| *r == id).map(|(_, g)| g.as_slice())
    }
}

struct Encoded<F> {
    out: Vec<F>,
    layer_inputs: Vec<Vec<F>>,
    used: usize,
}

fn encode<F: Real>(model: &EmbeddingModel<F>, tower: &TowerParams<F>, ids: &[u32]) -> Encoded<F> {
    let (pooled, used) = model.pool(ids);
    let (out, layer_inputs) = tower.forward_cached(pooled);
    Encoded { out, layer_inputs, used }
}

/// Per-row losses and the logit-gradient matrix `(softmax - I) / B`.
fn softmax_rows<F: Real>(q: &[Encoded<F>], c: &[Encoded<F>]) -> (Vec<F>, Vec<Vec<F>>) {
    let b = q.len();
    let inv_b = F::one() / F::from(b).unwrap();
    let mut losses = Vec::with_capacity(b);
    let mut grad = Vec::with_capacity(b);
    for (i, qi) in q.iter().enumerate() {
        let logits: Vec<F> = c.iter().map(|cj| dot(&qi.out, &cj.out)).collect();
        let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
        let exps: Vec<F> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: F = exps.iter().copied().sum();
        losses.push(z.ln() + max - logits[i]);
        let row = exps
            .iter()
            .enumerate()
            .map(|(j, &e)| {
                let p = e / z;
                (if j == i { p - F::one() } else { p }) * inv_b
            })
            .collect();
        grad.push(row);
    }
    (losses, grad)
}

/// Backprop through a tower; returns the gradient at the pooled input.
fn backprop_tower<F: Real>(tower: &TowerParams<F>, enc: &Encoded<F>, mut d_out: Vec<F>, acc: &mut [Dense<F>]) -> Vec<F> {
    let dim = d_out.len();
    for (l, layer) in tower.layers.iter().enumerate().rev() {
        let x = &enc.layer_inputs[l];
        let h = if l + 1 < tower.layers.len() { &enc.layer_inputs[l + 1] } else { &enc.out };
        let dz: Vec<F> = d_out.iter().zip(h).map(|(&g, &y)| g * (F::one() - y * y)).collect();
        let g = &mut acc[l];
        for (o, &dzo) in dz.iter().enumerate() {
            g.bias[o] = g.bias[o] + dzo;
            let wrow = &mut g.weight[o * dim..(o + 1) * dim];
            for (w, &xi) in wrow.iter_mut().zip(x) {
                *w = *w + dzo * xi;
            }
        }
        let mut dx = vec![F::zero(); dim];
        for (o, &dzo) in dz.iter().enumerate() {
            let row = &layer.weight[o * dim..(o + 1) * dim];
            for (d, &w) in dx.iter_mut().zip(row) {
                *d = *d + w * dzo;
            }
        }
        d_out = dx;
    }
    d_out
}

struct RowAccumulator<F> {
    slot: HashMap<u32, usize>,
    rows: Vec<(u32, Vec<F>)>,
}

impl<F: Real> RowAccumulator<F> {
    fn add(&mut self, model: &EmbeddingModel<F>, ids: &[u32], used: usize, d_pooled: &[F]) {
        if used == 0 {
            return;
        }
        let scale = match model.config.pooling {
            super::Pooling::Mean => F::one() / F::from(used).unwrap(),
            super::Pooling::Sum => F::one(),
        };
        for &id in ids.iter().filter(|&&id| (id as usize) < model.rows) {
            let idx = *self.slot.entry(id).or_insert_with(|| {
                self.rows.push((id, vec![F::zero(); d_pooled.len()]));
                self.rows.len() - 1
            });
            for (a, &g) in self.rows[idx].1.iter_mut().zip(d_pooled) {
                *a = *a + g * scale;
            }
        }
    }
}

type Sides<F> = (Vec<Encoded<F>>, Vec<Encoded<F>>);

fn forward<F: Real>(model: &EmbeddingModel<F>, batch: &[EncodedPair]) -> Result<Sides<F>, EncoderError> {
    if batch.len() < 2 {
        return Err(EncoderError::BatchTooSmall(batch.len()));
    }
    let q = batch.iter().map(|p| encode(model, &model.query_tower, &p.query)).collect();
    let c = batch.iter().map(|p| encode(model, &model.target_tower, &p.target)).collect();
    Ok((q, c))
}

/// Per-query losses without gradients.
pub fn batch_row_losses<F: Real>(model: &EmbeddingModel<F>, batch: &[EncodedPair]) -> Result<Vec<F>, EncoderError> {
    let (q, c) = forward(model, batch)?;
    Ok(softmax_rows(&q, &c).0)
}

/// Mean in-batch softmax loss and gradients for every touched parameter.
pub fn batch_loss<F: Real>(model: &EmbeddingModel<F>, batch: &[EncodedPair]) -> Result<(F, Gradients<F>), EncoderError> {
    let (q, c) = forward(model, batch)?;
    let (losses, g) = softmax_rows(&q, &c);
    let b = batch.len();
    let dim = model.dim();
    let loss = losses.iter().copied().sum::<F>() / F::from(b).unwrap();

    let zeros = |n: usize| (0..n).map(|_| Dense::zeros(dim)).collect::<Vec<_>>();
    let mut grads = Gradients {
        rows: Vec::new(),
        query_tower: zeros(model.query_tower.layers.len()),
        target_tower: zeros(model.target_tower.layers.len()),
    };
    let mut rows = RowAccumulator { slot: HashMap::new(), rows: Vec::new() };

    for i in 0..b {
        let mut dq = vec![F::zero(); dim];
        for (j, cj) in c.iter().enumerate() {
            let gij = g[i][j];
            for (d, &x) in dq.iter_mut().zip(&cj.out) {
                *d = *d + gij * x;
            }
        }
        let d_pooled = backprop_tower(&model.query_tower, &q[i], dq, &mut grads.query_tower);
        rows.add(model, &batch[i].query, q[i].used, &d_pooled);
    }
    for j in 0..b {
        let mut dc = vec![F::zero(); dim];
        for (i, qi) in q.iter().enumerate() {
            let gij = g[i][j];
            for (d, &x) in dc.iter_mut().zip(&qi.out) {
                *d = *d + gij * x;
            }
        }
        let d_pooled = backprop_tower(&model.target_tower, &c[j], dc, &mut grads.target_tower);
        rows.add(model, &batch[j].target, c[j].used, &d_pooled);
    }
    grads.rows = rows.rows;
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;
    use proptest::prelude::*;

    fn pair(q: &[u32], t: &[u32]) -> EncodedPair {
        EncodedPair { query: q.to_vec(), target: t.to_vec() }
    }

    #[test]
    fn zero_model_gives_log_b() {
        let m = EmbeddingModel::<f64>::zeros(ModelConfig { dim: 4, ..Default::default() }, 10, "h");
        for b in 2..6u32 {
            let batch: Vec<_> = (0..b).map(|i| pair(&[i], &[i + 1])).collect();
            let (loss, _) = batch_loss(&m, &batch).unwrap();
            assert_eq!(loss, (b as f64).ln());
        }
    }

    #[test]
    fn saturated_two_by_two() {
        // rows chosen so that logits are [[10, -10], [-10, 10]]
        let mut m = EmbeddingModel::<f64>::zeros(ModelConfig { dim: 2, ..Default::default() }, 2, "h");
        let s = 10f64.sqrt();
        m.table = vec![s, 0.0, -s, 0.0];
        let batch = vec![pair(&[0], &[0]), pair(&[1], &[1])];
        let (loss, _) = batch_loss(&m, &batch).unwrap();
        let expected = (1.0 + (-20f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-15);
        assert!((loss - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn too_small_batch() {
        let m = EmbeddingModel::<f64>::zeros(ModelConfig::default(), 1, "h");
        assert!(matches!(batch_loss(&m, &[pair(&[0], &[0])]), Err(EncoderError::BatchTooSmall(1))));
    }

    #[test]
    fn shared_row_collects_both_sides() {
        let cfg = ModelConfig { dim: 3, ..Default::default() };
        let m = EmbeddingModel::<f64>::init_uniform(cfg, 5, "h", 1);
        let batch = vec![pair(&[0, 1], &[0, 2]), pair(&[3], &[4])];
        let (_, shared) = batch_loss(&m, &batch).unwrap();

        // Same forward pass with the target-side occurrence moved to a copy of row 0.
        let mut split = EmbeddingModel::<f64>::zeros(cfg, 6, "h");
        split.table[..15].copy_from_slice(&m.table);
        split.table[15..].copy_from_slice(m.row(0));
        let split_batch = vec![pair(&[0, 1], &[5, 2]), pair(&[3], &[4])];
        let (_, parts) = batch_loss(&split, &split_batch).unwrap();

        assert_eq!(shared.rows.iter().filter(|(id, _)| *id == 0).count(), 1);
        let (q, t) = (parts.row(0).unwrap(), parts.row(5).unwrap());
        for ((s, a), b) in shared.row(0).unwrap().iter().zip(q).zip(t) {
            assert!((s - (a + b)).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative_and_permutation_invariant(seed in any::<u64>(), perm_seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let m = EmbeddingModel::<f64>::init_uniform(ModelConfig { dim: 4, ..Default::default() }, 12, "h", seed);
            let mut m = m;
            m.table.iter_mut().for_each(|x| *x *= 40.0);
            let mut rng = crate::seed::rng(seed, &["batch"]);
            let batch: Vec<EncodedPair> = (0..5).map(|_| {
                use rand::Rng;
                let q = (0..3).map(|_| rng.random_range(0..12)).collect::<Vec<u32>>();
                let t = (0..3).map(|_| rng.random_range(0..12)).collect::<Vec<u32>>();
                pair(&q, &t)
            }).collect();
            let rows = batch_row_losses(&m, &batch).unwrap();
            prop_assert!(rows.iter().all(|&l| l >= 0.0));
            let mut order: Vec<usize> = (0..batch.len()).collect();
            order.shuffle(&mut crate::seed::rng(perm_seed, &[]));
            let permuted: Vec<EncodedPair> = order.iter().map(|&i| batch[i].clone()).collect();
            let prow = batch_row_losses(&m, &permuted).unwrap();
            for (k, &i) in order.iter().enumerate() {
                prop_assert!((prow[k] - rows[i]).abs() < 1e-12);
            }
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((mean(&rows) - mean(&prow)).abs() < 1e-12);
        }
    }
}
