//! Multi-layer perceptron classifier built from the fixed primitive set:
//! (matmul -> bias-add -> relu)* -> matmul -> bias-add -> softmax-cross-entropy.

use crate::error::{Error, Result};
use crate::graph::{self, Graph};
use crate::rng::Rng;
use crate::tensor::{self, Tensor};
use serde::{Deserialize, Serialize};

/// Architecture: layer widths from input to output, plus the init seed.
/// Activation is relu on every hidden layer (the only activation primitive).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct MlpSpec {
    /// Widths [input, hidden..., output]; at least one hidden layer.
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::contract(format!(
                "MLP needs input, >=1 hidden, output widths; got {:?}",
                self.widths
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::contract(format!(
                "all layer widths must be positive; got {:?}",
                self.widths
            )));
        }
        Ok(())
    }
}

/// An MLP with owned parameters: weight [in x out] and bias [out] per layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
    names: Vec<String>,
}

impl Mlp {
    /// Initialize weights He-style (normal, std sqrt(2/fan_in)) and biases at
    /// zero, deterministically from `MlpSpec::seed`.
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = Rng::new(spec.seed);
        let mut params = Vec::new();
        let mut names = Vec::new();
        for layer in 0..spec.widths.len() - 1 {
            let (fan_in, fan_out) = (spec.widths[layer], spec.widths[layer + 1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out).map(|_| std * rng.normal()).collect();
            params.push(Tensor::new(&[fan_in, fan_out], w)?);
            names.push(format!("w{}", layer + 1));
            params.push(Tensor::zeros(&[fan_out])?);
            names.push(format!("b{}", layer + 1));
        }
        Ok(Mlp { spec, params, names })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn input_dim(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn class_count(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if !x.is_matrix() || x.cols() != self.input_dim() {
            return Err(Error::contract(format!(
                "batch shape {:?} does not match input width {}",
                x.shape(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass to logits without recording a graph (pure inference).
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.logits_with(&self.params, x)
    }

    fn logits_with(&self, params: &[Tensor], x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        let layers = self.spec.widths.len() - 1;
        let mut h = x.clone();
        for layer in 0..layers {
            h = tensor::bias_add(
                &tensor::matmul(&h, &params[2 * layer])?,
                &params[2 * layer + 1],
            )?;
            if layer + 1 < layers {
                h = tensor::relu(&h);
            }
            if !h.all_finite() {
                return Err(Error::numeric(format!(
                    "non-finite activations after layer {}",
                    layer + 1
                )));
            }
        }
        Ok(h)
    }

    /// Mean cross-entropy of a labeled batch (no gradients).
    pub fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let logits = g.input(self.logits(x)?)?;
        let loss = g.softmax_cross_entropy(logits, labels)?;
        g.value(loss).item()
    }

    /// Build the define-by-run graph for one batch, run forward and backward,
    /// and return (loss, gradient per parameter in `params()` order).
    pub fn loss_and_grads(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        self.loss_and_grads_with(&self.params, x, labels)
    }

    fn loss_and_grads_with(
        &self,
        params: &[Tensor],
        x: &Tensor,
        labels: &[usize],
    ) -> Result<(f64, Vec<Tensor>)> {
        self.check_batch(x)?;
        let layers = self.spec.widths.len() - 1;
        let mut g = Graph::new();
        let param_ids: Vec<_> = params
            .iter()
            .map(|p| g.input(p.clone()))
            .collect::<Result<_>>()?;
        let mut h = g.input(x.clone())?;
        for layer in 0..layers {
            h = g.matmul(h, param_ids[2 * layer])?;
            h = g.bias_add(h, param_ids[2 * layer + 1])?;
            if layer + 1 < layers {
                h = g.relu(h)?;
            }
        }
        let loss = g.softmax_cross_entropy(h, labels)?;
        let adj = g.backward(loss)?;
        let grads = param_ids.iter().map(|&id| adj[id].clone()).collect();
        Ok((g.value(loss).item()?, grads))
    }

    /// Mean cross-entropy and accuracy from a single logits pass; the cheap
    /// way to score a whole split at epoch end.
    pub fn metrics(&self, x: &Tensor, labels: &[usize]) -> Result<(f64, f64)> {
        if labels.len() != x.rows() || labels.is_empty() {
            return Err(Error::contract(format!(
                "{} labels for a batch of {} rows",
                labels.len(),
                x.rows()
            )));
        }
        let logits = self.logits(x)?;
        let c = logits.cols();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            if y >= c {
                return Err(Error::contract(format!(
                    "label {y} out of range for {c} classes"
                )));
            }
            let row = &logits.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|&l| (l - max).exp()).sum();
            loss += max + z.ln() - row[y];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == y {
                correct += 1;
            }
        }
        loss /= labels.len() as f64;
        if !loss.is_finite() {
            return Err(Error::numeric("non-finite evaluation loss".into()));
        }
        Ok((loss, correct as f64 / labels.len() as f64))
    }

    /// Fraction of rows whose argmax logit equals the label. Ties resolve to
    /// the lowest class index.
    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        if labels.len() != x.rows() {
            return Err(Error::contract(format!(
                "{} labels for a batch of {} rows",
                labels.len(),
                x.rows()
            )));
        }
        if labels.is_empty() {
            return Err(Error::contract("accuracy needs a non-empty batch".into()));
        }
        let logits = self.logits(x)?;
        let c = logits.cols();
        let mut correct = 0usize;
        for (i, &y) in labels.iter().enumerate() {
            let row = &logits.data()[i * c..(i + 1) * c];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / labels.len() as f64)
    }

    /// Hex SHA-256 digest over the little-endian bytes of every parameter, in
    /// `params()` order. Pins a trained model for byte-stable run records.
    pub fn params_digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for p in &self.params {
            for &x in p.data() {
                hasher.update(x.to_le_bytes());
            }
        }
        let out = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for b in out {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Central-difference check of `loss_and_grads` on one batch. Returns the max
/// relative error over sampled coordinates; see
/// [`graph::finite_diff_check_fn`] for the h contract ([1e-8, 1e-4]).
pub fn finite_diff_check(model: &Mlp, x: &Tensor, labels: &[usize], h: f64) -> Result<f64> {
    let (_, grads) = model.loss_and_grads(x, labels)?;
    let mut f = |p: &[Tensor]| -> Result<f64> {
        let (loss, _) = model.loss_and_grads_with(p, x, labels)?;
        Ok(loss)
    };
    graph::finite_diff_check_fn(&mut f, model.params(), &grads, h, 24)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(model: &Mlp, n: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = Rng::new(seed);
        let d = model.input_dim();
        let x = Tensor::new(
            &[n, d],
            (0..n * d).map(|_| rng.uniform() * 2.0 - 1.0).collect(),
        )
        .unwrap();
        let labels = (0..n).map(|i| i % model.class_count()).collect();
        (x, labels)
    }

    #[test]
    fn spec_requires_a_hidden_layer_and_positive_widths() {
        assert!(MlpSpec { widths: vec![4, 2], seed: 0 }.validate().is_err());
        assert!(MlpSpec { widths: vec![4, 0, 2], seed: 0 }.validate().is_err());
        assert!(MlpSpec { widths: vec![4, 8, 2], seed: 0 }.validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_per_seed_and_biases_are_zero() {
        let a = Mlp::new(MlpSpec { widths: vec![5, 7, 3], seed: 9 }).unwrap();
        let b = Mlp::new(MlpSpec { widths: vec![5, 7, 3], seed: 9 }).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.params_digest(), b.params_digest());
        let c = Mlp::new(MlpSpec { widths: vec![5, 7, 3], seed: 10 }).unwrap();
        assert_ne!(a.params_digest(), c.params_digest());
        // Biases (odd indices) start at zero.
        assert!(a.params()[1].data().iter().all(|&x| x == 0.0));
        assert!(a.params()[3].data().iter().all(|&x| x == 0.0));
        assert_eq!(a.param_names(), &["w1", "b1", "w2", "b2"]);
    }

    #[test]
    fn gradients_match_finite_differences_on_a_two_layer_mlp() {
        let model = Mlp::new(MlpSpec { widths: vec![6, 8, 3], seed: 4 }).unwrap();
        let (x, y) = batch(&model, 5, 21);
        let err = finite_diff_check(&model, &x, &y, 1e-6).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn graph_and_inference_forward_agree() {
        let model = Mlp::new(MlpSpec { widths: vec![4, 6, 6, 2], seed: 8 }).unwrap();
        let (x, y) = batch(&model, 7, 22);
        let (loss_graph, _) = model.loss_and_grads(&x, &y).unwrap();
        let loss_pure = model.loss(&x, &y).unwrap();
        assert_eq!(loss_graph.to_bits(), loss_pure.to_bits());
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let model = Mlp::new(MlpSpec { widths: vec![2, 4, 2], seed: 1 }).unwrap();
        let (x, _) = batch(&model, 6, 3);
        let logits = model.logits(&x).unwrap();
        // Label every row by its own argmax -> accuracy 1; flip all -> 0.
        let argmax: Vec<usize> = (0..6)
            .map(|i| {
                let row = &logits.data()[i * 2..(i + 1) * 2];
                if row[1] > row[0] {
                    1
                } else {
                    0
                }
            })
            .collect();
        assert_eq!(model.accuracy(&x, &argmax).unwrap(), 1.0);
        let flipped: Vec<usize> = argmax.iter().map(|&y| 1 - y).collect();
        assert_eq!(model.accuracy(&x, &flipped).unwrap(), 0.0);
    }

    #[test]
    fn batch_width_mismatch_is_a_contract_error() {
        let model = Mlp::new(MlpSpec { widths: vec![4, 8, 2], seed: 0 }).unwrap();
        let x = Tensor::zeros(&[3, 5]).unwrap();
        assert!(matches!(
            model.logits(&x).unwrap_err(),
            Error::Contract(_)
        ));
    }

    #[test]
    fn metrics_agrees_with_loss_and_accuracy() {
        let model = Mlp::new(MlpSpec { widths: vec![3, 6, 4], seed: 9 }).unwrap();
        let (x, labels) = batch(&model, 12, 4);
        let (loss, acc) = model.metrics(&x, &labels).unwrap();
        let loss_ref = model.loss(&x, &labels).unwrap();
        let acc_ref = model.accuracy(&x, &labels).unwrap();
        assert!((loss - loss_ref).abs() <= 1e-12 * loss_ref.abs().max(1.0));
        assert_eq!(acc, acc_ref);
    }
}
