//! Define-by-run reverse-mode autodiff over a fixed primitive set:
//! matmul, bias-add, relu, and softmax-cross-entropy.
//!
//! A `Graph` is rebuilt for every forward pass. Ops append nodes, so node ids
//! are already a topological order; backward walks the node list once in
//! reverse. Every op output is checked for finiteness as soon as it is
//! produced — a NaN or Inf is an error with the op named, never a silent
//! value.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub type NodeId = usize;

enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId },
    BiasAdd { x: NodeId, bias: NodeId },
    Relu { x: NodeId },
    /// Mean negative log-likelihood over the batch. `probs` caches the
    /// softmax from the forward pass for the backward formula
    /// (softmax - onehot) / batch.
    SoftmaxXent { logits: NodeId, labels: Vec<usize>, probs: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation. Append-only; every input id refers to an earlier node.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::numeric(format!(
                "non-finite values in {what} output (node {})",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node { value, op });
        Ok(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId, role: &str) -> Result<()> {
        if id >= self.nodes.len() {
            return Err(Error::contract(format!(
                "{role} node id {id} is not in this graph (len {})",
                self.nodes.len()
            )));
        }
        Ok(())
    }

    /// Record a leaf tensor (parameter or data batch).
    pub fn input(&mut self, t: Tensor) -> Result<NodeId> {
        self.push(t, Op::Leaf, "input")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_id(a, "matmul lhs")?;
        self.check_id(b, "matmul rhs")?;
        let value = tensor::matmul(&self.nodes[a].value, &self.nodes[b].value)?;
        self.push(value, Op::MatMul { a, b }, "matmul")
    }

    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        self.check_id(x, "bias_add input")?;
        self.check_id(bias, "bias_add bias")?;
        let value = tensor::bias_add(&self.nodes[x].value, &self.nodes[bias].value)?;
        self.push(value, Op::BiasAdd { x, bias }, "bias_add")
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x, "relu input")?;
        let value = tensor::relu(&self.nodes[x].value);
        self.push(value, Op::Relu { x }, "relu")
    }

    /// Mean cross-entropy between row-wise softmax of `logits` [b x c] and
    /// integer class labels (length b, each in [0, c)).
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check_id(logits, "softmax_cross_entropy logits")?;
        let lv = &self.nodes[logits].value;
        if !lv.is_matrix() {
            return Err(Error::contract(format!(
                "logits must be a matrix, got shape {:?}",
                lv.shape()
            )));
        }
        let (b, c) = (lv.rows(), lv.cols());
        if b == 0 {
            return Err(Error::contract("softmax_cross_entropy needs batch >= 1".into()));
        }
        if labels.len() != b {
            return Err(Error::contract(format!(
                "got {} labels for a batch of {b} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let mut probs = vec![0.0; b * c];
        let mut loss = 0.0;
        for i in 0..b {
            let row = &lv.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (j, &l) in row.iter().enumerate() {
                let e = (l - max).exp();
                probs[i * c + j] = e;
                z += e;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p /= z;
            }
            // loss_i = logsumexp(row) - row[label]
            loss += max + z.ln() - row[labels[i]];
        }
        loss /= b as f64;
        let probs = Tensor::new(&[b, c], probs)?;
        if !probs.all_finite() {
            return Err(Error::numeric("non-finite softmax probabilities".into()));
        }
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxXent { logits, labels: labels.to_vec(), probs },
            "softmax_cross_entropy",
        )
    }

    /// Reverse-mode gradients of a scalar loss node with respect to every
    /// node in the graph. `grads[id]` is zero-shaped-like the node's value if
    /// the loss does not depend on it.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Tensor>> {
        self.backward_weighted(&[(loss, 1.0)])
    }

    /// Gradients of a weighted sum of scalar nodes: d(sum_k w_k * node_k)/d(everything).
    /// This is the mechanism behind the linearity guarantee
    /// backward(a*L1 + b*L2) == a*backward(L1) + b*backward(L2).
    pub fn backward_weighted(&self, seeds: &[(NodeId, f64)]) -> Result<Vec<Tensor>> {
        if seeds.is_empty() {
            return Err(Error::contract("backward needs at least one seed node".into()));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for &(id, w) in seeds {
            self.check_id(id, "backward seed")?;
            let v = &self.nodes[id].value;
            if v.numel() != 1 {
                return Err(Error::contract(format!(
                    "backward seed node {id} must be scalar, shape is {:?}",
                    v.shape()
                )));
            }
            if !w.is_finite() {
                return Err(Error::numeric(format!("non-finite seed weight for node {id}")));
            }
            match &mut adj[id] {
                Some(t) => t.data_mut()[0] += w,
                // Seed with the node's own shape (a scalar may live in a
                // [1] or [1, 1] tensor) so op backward rules see consistent ranks.
                slot => *slot = Some(Tensor::new(v.shape(), vec![w])?),
            }
        }

        // Nodes only ever reference earlier nodes, so one reverse sweep visits
        // every op exactly once after all of its consumers.
        for id in (0..self.nodes.len()).rev() {
            let Some(d_out) = adj[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {
                    adj[id] = Some(d_out); // keep for the caller
                    continue;
                }
                Op::MatMul { a, b } => {
                    let da = tensor::matmul_nt(&d_out, &self.nodes[*b].value)?;
                    let db = tensor::matmul_tn(&self.nodes[*a].value, &d_out)?;
                    accumulate(&mut adj[*a], da)?;
                    accumulate(&mut adj[*b], db)?;
                }
                Op::BiasAdd { x, bias } => {
                    let (m, n) = (d_out.rows(), d_out.cols());
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for (acc, &d) in db.iter_mut().zip(&d_out.data()[i * n..(i + 1) * n]) {
                            *acc += d;
                        }
                    }
                    accumulate(&mut adj[*bias], Tensor::new(&[n], db)?)?;
                    accumulate(&mut adj[*x], d_out.clone())?;
                }
                Op::Relu { x } => {
                    let xv = &self.nodes[*x].value;
                    let mut dx = d_out.clone();
                    for (d, &v) in dx.data_mut().iter_mut().zip(xv.data()) {
                        if v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut adj[*x], dx)?;
                }
                Op::SoftmaxXent { logits, labels, probs } => {
                    let scale = d_out.data()[0] / labels.len() as f64;
                    let c = probs.cols();
                    let mut dl = probs.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        dl.data_mut()[i * c + y] -= 1.0;
                    }
                    for d in dl.data_mut() {
                        *d *= scale;
                    }
                    accumulate(&mut adj[*logits], dl)?;
                }
            }
            adj[id] = Some(d_out);
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (id, slot) in adj.into_iter().enumerate() {
            let g = match slot {
                Some(t) => t,
                None => Tensor::zeros(self.nodes[id].value.shape())?,
            };
            if !g.all_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient at node {id} during backward"
                )));
            }
            out.push(g);
        }
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Tensor>, contribution: Tensor) -> Result<()> {
    match slot {
        Some(t) => {
            if t.shape() != contribution.shape() {
                return Err(Error::contract(format!(
                    "gradient shape mismatch: {:?} vs {:?}",
                    t.shape(),
                    contribution.shape()
                )));
            }
            for (a, b) in t.data_mut().iter_mut().zip(contribution.data()) {
                *a += b;
            }
        }
        None => *slot = Some(contribution),
    }
    Ok(())
}

/// Central-difference gradient check for an arbitrary scalar function of a
/// parameter list. Returns the max over sampled coordinates of
/// |(f(p + h e) - f(p - h e)) / 2h  -  g| / (|g| + 1e-12).
///
/// `h` must lie in [1e-8, 1e-4]. Up to `samples_per_tensor` coordinates of
/// each parameter are probed (all of them when the tensor is small), chosen
/// by a fixed-seed draw so the check is deterministic.
pub fn finite_diff_check_fn(
    f: &mut dyn FnMut(&[Tensor]) -> Result<f64>,
    params: &[Tensor],
    grads: &[Tensor],
    h: f64,
    samples_per_tensor: usize,
) -> Result<f64> {
    if !(1e-8..=1e-4).contains(&h) {
        return Err(Error::contract(format!(
            "finite-difference step h={h} outside [1e-8, 1e-4]"
        )));
    }
    if params.len() != grads.len() {
        return Err(Error::contract(format!(
            "{} parameter tensors but {} gradient tensors",
            params.len(),
            grads.len()
        )));
    }
    if samples_per_tensor == 0 {
        return Err(Error::contract("samples_per_tensor must be >= 1".into()));
    }
    let mut rng = crate::rng::Rng::new(0xF1D0);
    let mut work: Vec<Tensor> = params.to_vec();
    let mut max_rel: f64 = 0.0;
    for (pi, grad) in grads.iter().enumerate() {
        if grad.shape() != params[pi].shape() {
            return Err(Error::contract(format!(
                "gradient {pi} shape {:?} does not match parameter shape {:?}",
                grad.shape(),
                params[pi].shape()
            )));
        }
        let numel = params[pi].numel();
        let coords: Vec<usize> = if numel <= samples_per_tensor {
            (0..numel).collect()
        } else {
            (0..samples_per_tensor).map(|_| rng.below(numel as u64) as usize).collect()
        };
        for ci in coords {
            let orig = work[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + h;
            let f_plus = f(&work)?;
            work[pi].data_mut()[ci] = orig - h;
            let f_minus = f(&work)?;
            work[pi].data_mut()[ci] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss while probing parameter {pi} coordinate {ci}"
                )));
            }
            let fd = (f_plus - f_minus) / (2.0 * h);
            let g = grad.data()[ci];
            let rel = (fd - g).abs() / (g.abs() + 1e-12);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(shape: &[usize], rng: &mut Rng) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.uniform() * 2.0 - 1.0).collect()).unwrap()
    }

    /// loss = ones_row . (A . B) . ones_col, differentiable through two matmuls.
    fn sum_of_product(g: &mut Graph, a: NodeId, b: NodeId) -> NodeId {
        let (m, _) = {
            let v = g.value(a);
            (v.rows(), v.cols())
        };
        let n = g.value(b).cols();
        let ones_row = g.input(Tensor::new(&[1, m], vec![1.0; m]).unwrap()).unwrap();
        let ones_col = g.input(Tensor::new(&[n, 1], vec![1.0; n]).unwrap()).unwrap();
        let prod = g.matmul(a, b).unwrap();
        let left = g.matmul(ones_row, prod).unwrap();
        g.matmul(left, ones_col).unwrap()
    }

    #[test]
    fn matmul_gradients_match_central_differences() {
        let mut rng = Rng::new(11);
        let a0 = random_tensor(&[3, 4], &mut rng);
        let b0 = random_tensor(&[4, 2], &mut rng);

        let mut g = Graph::new();
        let a = g.input(a0.clone()).unwrap();
        let b = g.input(b0.clone()).unwrap();
        let loss = sum_of_product(&mut g, a, b);
        let grads = g.backward(loss).unwrap();

        let mut f = |p: &[Tensor]| -> crate::error::Result<f64> {
            let mut g2 = Graph::new();
            let a = g2.input(p[0].clone())?;
            let b = g2.input(p[1].clone())?;
            let l = sum_of_product(&mut g2, a, b);
            g2.value(l).item()
        };
        let max_rel = finite_diff_check_fn(
            &mut f,
            &[a0, b0],
            &[grads[a].clone(), grads[b].clone()],
            1e-6,
            64,
        )
        .unwrap();
        assert!(max_rel <= 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn xent_uniform_logits_is_ln_c() {
        let mut g = Graph::new();
        let logits = g.input(Tensor::new(&[1, 4], vec![0.7; 4]).unwrap()).unwrap();
        let loss = g.softmax_cross_entropy(logits, &[2]).unwrap();
        let got = g.value(loss).item().unwrap();
        assert!((got - 4.0f64.ln()).abs() < 1e-12, "got {got}");
        assert!((got - 1.3862944).abs() < 1e-6);
    }

    #[test]
    fn xent_confident_correct_logit_matches_logsumexp_oracle() {
        // Scripted oracle: loss = logsumexp([10, -10]) - 10 = ln(1 + e^-20).
        let oracle = {
            let (a, b) = (10.0f64, -10.0f64);
            let m = a.max(b);
            m + ((a - m).exp() + (b - m).exp()).ln() - a
        };
        let mut g = Graph::new();
        let logits = g.input(Tensor::new(&[1, 2], vec![10.0, -10.0]).unwrap()).unwrap();
        let loss = g.softmax_cross_entropy(logits, &[0]).unwrap();
        let got = g.value(loss).item().unwrap();
        let rel = (got - oracle).abs() / oracle;
        assert!(rel < 1e-12, "got {got}, oracle {oracle}");
        assert!((got - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn xent_mean_of_identical_rows_equals_single_row() {
        let row = vec![0.3, -1.2, 0.8];
        let mut g1 = Graph::new();
        let l1 = g1.input(Tensor::new(&[1, 3], row.clone()).unwrap()).unwrap();
        let single = g1.softmax_cross_entropy(l1, &[1]).unwrap();
        let mut g2 = Graph::new();
        let l2 = g2
            .input(Tensor::new(&[2, 3], [row.clone(), row].concat()).unwrap())
            .unwrap();
        let double = g2.softmax_cross_entropy(l2, &[1, 1]).unwrap();
        assert_eq!(
            g1.value(single).item().unwrap(),
            g2.value(double).item().unwrap()
        );
    }

    #[test]
    fn xent_rejects_out_of_range_label() {
        let mut g = Graph::new();
        let logits = g.input(Tensor::zeros(&[1, 3]).unwrap()).unwrap();
        let err = g.softmax_cross_entropy(logits, &[3]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err:?}");
    }

    #[test]
    fn xent_gradients_match_central_differences() {
        let mut rng = Rng::new(12);
        let logits0 = random_tensor(&[3, 5], &mut rng);
        let labels = [0usize, 3, 4];

        let mut g = Graph::new();
        let logits = g.input(logits0.clone()).unwrap();
        let loss = g.softmax_cross_entropy(logits, &labels).unwrap();
        let grads = g.backward(loss).unwrap();

        let mut f = |p: &[Tensor]| -> crate::error::Result<f64> {
            let mut g2 = Graph::new();
            let l = g2.input(p[0].clone())?;
            let loss = g2.softmax_cross_entropy(l, &labels)?;
            g2.value(loss).item()
        };
        let max_rel =
            finite_diff_check_fn(&mut f, &[logits0], &[grads[logits].clone()], 1e-6, 64).unwrap();
        assert!(max_rel <= 1e-6, "max relative error {max_rel}");
    }

    #[test]
    fn backward_of_sum_is_all_ones() {
        // sum(theta) expressed inside the primitive set: [1 x n] theta . ones [n x 1].
        let theta = Tensor::new(&[1, 4], vec![0.5, -2.0, 3.0, 0.0]).unwrap();
        let mut g = Graph::new();
        let t = g.input(theta).unwrap();
        let ones = g.input(Tensor::new(&[4, 1], vec![1.0; 4]).unwrap()).unwrap();
        let s = g.matmul(t, ones).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads[t].data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_half_square_norm_is_theta() {
        // 0.5 * ||theta||^2 = 0.5 * (theta . theta^T); the same leaf feeds both
        // matmul sides via two aliases, and the 0.5 arrives as a seed weight.
        let theta = vec![0.5, -2.0, 3.0];
        let mut g = Graph::new();
        let row = g.input(Tensor::new(&[1, 3], theta.clone()).unwrap()).unwrap();
        let col = g.input(Tensor::new(&[3, 1], theta.clone()).unwrap()).unwrap();
        let sq = g.matmul(row, col).unwrap();
        let grads = g.backward_weighted(&[(sq, 0.5)]).unwrap();
        // d(0.5 theta.theta)/dtheta = theta, split across the two aliases.
        let total: Vec<f64> = grads[row]
            .data()
            .iter()
            .zip(grads[col].data())
            .map(|(a, b)| a + b)
            .collect();
        for (got, want) in total.iter().zip(&theta) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2, 2]).unwrap()).unwrap();
        let err = g.backward(x).unwrap_err();
        assert!(matches!(err, Error::Contract(_)), "got {err:?}");
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        let mut rng = Rng::new(13);
        let x0 = random_tensor(&[2, 3], &mut rng);
        let labels_a = [0usize, 2];
        let labels_b = [1usize, 1];
        let (a, b) = (1.7, -0.4);

        let mut g = Graph::new();
        let x = g.input(x0).unwrap();
        let l1 = g.softmax_cross_entropy(x, &labels_a).unwrap();
        let l2 = g.softmax_cross_entropy(x, &labels_b).unwrap();

        let combined = g.backward_weighted(&[(l1, a), (l2, b)]).unwrap();
        let g1 = g.backward(l1).unwrap();
        let g2 = g.backward(l2).unwrap();
        for i in 0..combined[x].numel() {
            let want = a * g1[x].data()[i] + b * g2[x].data()[i];
            let got = combined[x].data()[i];
            assert!((got - want).abs() <= 1e-12, "coord {i}: {got} vs {want}");
        }
    }

    #[test]
    fn forward_and_backward_are_bitwise_deterministic() {
        let run = || {
            let mut rng = Rng::new(77);
            let x0 = random_tensor(&[4, 3], &mut rng);
            let w0 = random_tensor(&[3, 2], &mut rng);
            let mut g = Graph::new();
            let x = g.input(x0).unwrap();
            let w = g.input(w0).unwrap();
            let h = g.matmul(x, w).unwrap();
            let r = g.relu(h).unwrap();
            let loss = g.softmax_cross_entropy(r, &[0, 1, 0, 1]).unwrap();
            let grads = g.backward(loss).unwrap();
            (g.value(loss).item().unwrap(), grads[w].clone())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn fd_check_rejects_h_zero_and_out_of_range() {
        let p = [Tensor::scalar(1.0)];
        let g = [Tensor::scalar(1.0)];
        let mut f = |t: &[Tensor]| t[0].item();
        for h in [0.0, 1e-9, 1e-3, -1e-6] {
            let err = finite_diff_check_fn(&mut f, &p, &g, h, 4).unwrap_err();
            assert!(matches!(err, Error::Contract(_)), "h={h}: got {err:?}");
        }
    }

    #[test]
    fn fd_check_is_essentially_exact_for_linear_functions() {
        // f(p) = 3 p0 - 2 p1 + 0.25 p2: central differences are exact up to rounding.
        let p = [Tensor::new(&[3], vec![0.4, -1.1, 2.0]).unwrap()];
        let g = [Tensor::new(&[3], vec![3.0, -2.0, 0.25]).unwrap()];
        let mut f = |t: &[Tensor]| -> crate::error::Result<f64> {
            let d = t[0].data();
            Ok(3.0 * d[0] - 2.0 * d[1] + 0.25 * d[2])
        };
        let max_rel = finite_diff_check_fn(&mut f, &p, &g, 1e-6, 8).unwrap();
        assert!(max_rel <= 1e-9, "max relative error {max_rel}");
    }

    #[test]
    fn fd_check_surfaces_non_finite_loss_as_numeric_error() {
        let p = [Tensor::scalar(1.0)];
        let g = [Tensor::scalar(1.0)];
        let mut f = |_: &[Tensor]| -> crate::error::Result<f64> { Ok(f64::NAN) };
        let err = finite_diff_check_fn(&mut f, &p, &g, 1e-6, 1).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got {err:?}");
    }

    #[test]
    fn op_outputs_are_checked_for_finiteness() {
        let mut g = Graph::new();
        let err = g.input(Tensor::new(&[1], vec![f64::NAN]).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got {err:?}");

        // Overflowing matmul: 1e308 * 1e308 -> inf.
        let a = g.input(Tensor::new(&[1, 1], vec![1e308]).unwrap()).unwrap();
        let b = g.input(Tensor::new(&[1, 1], vec![1e308]).unwrap()).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "got {err:?}");
    }
}
