//! Eleven first-order update rules behind one generic state machine:
//! a first-moment map, a denominator accumulator, and an elementwise
//! learning-rate warp. Each rule also exposes the magnitude proxy that its
//! adaptive denominator compares against the immutability constant eps, and
//! the realized per-coordinate learning rate, for diagnostics.

use crate::error::{Error, Result};
use crate::histogram::MagnitudeSnapshot;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// The update rule. `sgd` and `sgd-momentum` have no adaptive denominator;
/// every other rule divides by some accumulator-derived magnitude plus/under
/// an eps safeguard.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "sgd-momentum")]
    SgdMomentum,
    #[serde(rename = "adagrad")]
    AdaGrad,
    #[serde(rename = "rmsprop")]
    RmsProp,
    #[serde(rename = "adam")]
    Adam,
    #[serde(rename = "diffgrad")]
    DiffGrad,
    #[serde(rename = "adamod")]
    AdaMod,
    #[serde(rename = "adabelief")]
    AdaBelief,
    #[serde(rename = "madgrad")]
    Madgrad,
    #[serde(rename = "eadam")]
    EAdam,
    #[serde(rename = "adamomentum")]
    AdaMomentum,
}

impl Rule {
    pub const ALL: [Rule; 11] = [
        Rule::Sgd,
        Rule::SgdMomentum,
        Rule::AdaGrad,
        Rule::RmsProp,
        Rule::Adam,
        Rule::DiffGrad,
        Rule::AdaMod,
        Rule::AdaBelief,
        Rule::Madgrad,
        Rule::EAdam,
        Rule::AdaMomentum,
    ];

    /// Whether the rule has an adaptive denominator (and therefore a
    /// magnitude proxy and an eps-controlled regime).
    pub fn is_adaptive(self) -> bool {
        !matches!(self, Rule::Sgd | Rule::SgdMomentum)
    }

    pub fn name(self) -> &'static str {
        match self {
            Rule::Sgd => "sgd",
            Rule::SgdMomentum => "sgd-momentum",
            Rule::AdaGrad => "adagrad",
            Rule::RmsProp => "rmsprop",
            Rule::Adam => "adam",
            Rule::DiffGrad => "diffgrad",
            Rule::AdaMod => "adamod",
            Rule::AdaBelief => "adabelief",
            Rule::Madgrad => "madgrad",
            Rule::EAdam => "eadam",
            Rule::AdaMomentum => "adamomentum",
        }
    }

    /// Published default hyperparameters, used as probe settings when the
    /// caller does not override them.
    pub fn default_hp(self) -> HyperParams {
        let mut hp = HyperParams::default();
        match self {
            Rule::Sgd => hp.alpha = 1e-2,
            Rule::SgdMomentum => {
                hp.alpha = 1e-2;
                hp.momentum = 0.9;
                hp.dampening = 0.0;
            }
            Rule::AdaGrad => {
                hp.alpha = 1e-2;
                hp.eps = 1e-10;
            }
            Rule::RmsProp => {
                hp.alpha = 1e-2;
                hp.beta2 = 0.9;
                hp.eps = 1e-6;
            }
            Rule::Adam | Rule::DiffGrad | Rule::EAdam | Rule::AdaMomentum => {}
            Rule::AdaMod => hp.beta3 = 0.9999,
            Rule::AdaBelief => hp.eps = 1e-16,
            Rule::Madgrad => {
                hp.alpha = 1e-2;
                hp.eps = 1e-6;
            }
        }
        hp
    }
}

impl std::str::FromStr for Rule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Rule::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Rule::ALL.iter().map(|r| r.name()).collect();
                Error::Config(format!("unknown rule '{s}', expected one of {names:?}"))
            })
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Hyperparameters shared across rules. Fields a rule does not use are
/// ignored by it (but still validated and recorded).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    /// Global learning rate.
    pub alpha: f64,
    /// Immutability safeguard added to (or under) the adaptive denominator.
    pub eps: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment / accumulator decay (also RMSprop's single beta).
    pub beta2: f64,
    /// Learning-rate smoothing decay (AdaMod only).
    pub beta3: f64,
    /// Velocity decay mu (sgd-momentum only).
    pub momentum: f64,
    /// Gradient dampening gamma (sgd-momentum only): b <- mu*b + (1-gamma)*g.
    pub dampening: f64,
    /// Coupled L2 term: g <- g + weight_decay * theta before any moment.
    pub weight_decay: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            alpha: 1e-3,
            eps: 1e-8,
            beta1: 0.9,
            beta2: 0.999,
            beta3: 0.9999,
            momentum: 0.9,
            dampening: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::contract(format!("alpha must be finite and > 0, got {}", self.alpha)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::contract(format!("eps must be finite and >= 0, got {}", self.eps)));
        }
        for (name, x) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("momentum", self.momentum),
            ("dampening", self.dampening),
        ] {
            if !(x >= 0.0 && x < 1.0) {
                return Err(Error::contract(format!("{name} must lie in [0, 1), got {x}")));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::contract(format!(
                "weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Which buffers a rule touches. m doubles as sgd-momentum's velocity.
#[derive(Clone, Copy)]
struct Buffers {
    m: bool,
    v: bool,
    s: bool,
    prev_grad: bool,
    xi: bool,
}

fn buffers_for(rule: Rule) -> Buffers {
    let none = Buffers { m: false, v: false, s: false, prev_grad: false, xi: false };
    match rule {
        Rule::Sgd => none,
        Rule::SgdMomentum => Buffers { m: true, ..none },
        Rule::AdaGrad | Rule::RmsProp => Buffers { v: true, ..none },
        Rule::Adam | Rule::AdaBelief | Rule::Madgrad | Rule::EAdam | Rule::AdaMomentum => {
            Buffers { m: true, v: true, ..none }
        }
        Rule::DiffGrad => Buffers { m: true, v: true, prev_grad: true, xi: true, ..none },
        Rule::AdaMod => Buffers { m: true, v: true, s: true, ..none },
    }
}

/// Per-variable optimizer buffers, flat and shaped like the variable.
/// Unused buffers stay empty.
#[derive(Clone, Debug, Default)]
struct VarState {
    /// First moment (or sgd-momentum velocity).
    m: Vec<f64>,
    /// Squared-magnitude accumulator.
    v: Vec<f64>,
    /// AdaMod's smoothed learning rate.
    s: Vec<f64>,
    /// DiffGrad's previous raw (decayed) gradient.
    prev_grad: Vec<f64>,
    /// DiffGrad's last friction gate, kept for effective_lr diagnostics.
    xi: Vec<f64>,
}

/// One optimizer run's full mutable state: rule, hyperparameters, the step
/// counter t (starts at 0, +1 per step), and per-variable buffers.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    rule: Rule,
    hp: HyperParams,
    t: u64,
    vars: Vec<VarState>,
    shapes: Vec<Vec<usize>>,
    names: Vec<String>,
}

/// Summary statistics of one buffer, for the diagnostic dump.
#[derive(Debug, Serialize)]
pub struct BufferSummary {
    pub buffer: &'static str,
    pub len: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub l2: f64,
}

/// Serializable diagnostic view of the state (t plus per-variable summaries).
#[derive(Debug, Serialize)]
pub struct StateDiagnostics {
    pub rule: Rule,
    pub t: u64,
    pub hyperparams: HyperParams,
    pub variables: Vec<VariableDiagnostics>,
}

#[derive(Debug, Serialize)]
pub struct VariableDiagnostics {
    pub name: String,
    pub shape: Vec<usize>,
    pub buffers: Vec<BufferSummary>,
}

fn summarize(name: &'static str, xs: &[f64]) -> Option<BufferSummary> {
    if xs.is_empty() {
        return None;
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for &x in xs {
        min = min.min(x);
        max = max.max(x);
        sum += x;
        sq += x * x;
    }
    Some(BufferSummary {
        buffer: name,
        len: xs.len(),
        min,
        max,
        mean: sum / xs.len() as f64,
        l2: sq.sqrt(),
    })
}

impl OptimizerState {
    /// Fresh state: every needed buffer zeroed, t = 0. Variables are named
    /// var0, var1, ... until `set_names` supplies real names.
    pub fn new(rule: Rule, params: &[Tensor], hp: HyperParams) -> Result<Self> {
        hp.validate()?;
        if params.is_empty() {
            return Err(Error::contract("optimizer needs at least one variable".into()));
        }
        let need = buffers_for(rule);
        let vars = params
            .iter()
            .map(|p| {
                let n = p.numel();
                let alloc = |on: bool| if on { vec![0.0; n] } else { Vec::new() };
                VarState {
                    m: alloc(need.m),
                    v: alloc(need.v),
                    s: alloc(need.s),
                    prev_grad: alloc(need.prev_grad),
                    xi: alloc(need.xi),
                }
            })
            .collect();
        Ok(OptimizerState {
            rule,
            hp,
            t: 0,
            vars,
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
            names: (0..params.len()).map(|i| format!("var{i}")).collect(),
        })
    }

    pub fn set_names(&mut self, names: &[String]) -> Result<()> {
        if names.len() != self.vars.len() {
            return Err(Error::contract(format!(
                "{} names for {} variables",
                names.len(),
                self.vars.len()
            )));
        }
        self.names = names.to_vec();
        Ok(())
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn hyperparams(&self) -> &HyperParams {
        &self.hp
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn variable_names(&self) -> &[String] {
        &self.names
    }

    fn check_step_inputs(&self, params: &[Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.vars.len() || grads.len() != self.vars.len() {
            return Err(Error::contract(format!(
                "state tracks {} variables, got {} params and {} grads",
                self.vars.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.shapes[i] {
                return Err(Error::contract(format!(
                    "variable {} shape changed: state has {:?}, param has {:?}",
                    self.names[i],
                    self.shapes[i],
                    p.shape()
                )));
            }
            if g.shape() != self.shapes[i] {
                return Err(Error::contract(format!(
                    "gradient for {} has shape {:?}, expected {:?}",
                    self.names[i],
                    g.shape(),
                    self.shapes[i]
                )));
            }
            if !g.all_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient for variable {} at step {}",
                    self.names[i],
                    self.t + 1
                )));
            }
        }
        Ok(())
    }

    /// Apply one update: t advances by exactly 1 and every parameter moves
    /// per the rule's formula. Weight decay (if set) contributes
    /// g <- g + wd * theta before any moment accumulates.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        self.check_step_inputs(params, grads)?;
        let t_next = self.t + 1;
        let hp = self.hp;
        // Bias corrections at the post-increment step count.
        let bc1 = 1.0 - hp.beta1.powi(t_next as i32);
        let bc2 = 1.0 - hp.beta2.powi(t_next as i32);

        for (i, var) in self.vars.iter_mut().enumerate() {
            let p = params[i].data_mut();
            let graw = grads[i].data();
            let n = p.len();
            // Effective gradient with coupled L2.
            let mut g = graw.to_vec();
            if hp.weight_decay > 0.0 {
                for (gk, &pk) in g.iter_mut().zip(p.iter()) {
                    *gk += hp.weight_decay * pk;
                }
            }

            match self.rule {
                Rule::Sgd => {
                    for k in 0..n {
                        p[k] -= hp.alpha * g[k];
                    }
                }
                Rule::SgdMomentum => {
                    // b <- mu*b + (1-gamma)*g; theta <- theta - alpha*b.
                    for k in 0..n {
                        var.m[k] = hp.momentum * var.m[k] + (1.0 - hp.dampening) * g[k];
                        p[k] -= hp.alpha * var.m[k];
                    }
                }
                Rule::AdaGrad => {
                    // v <- v + g^2; theta <- theta - alpha * g / (sqrt(v) + eps).
                    for k in 0..n {
                        var.v[k] += g[k] * g[k];
                        p[k] -= hp.alpha * g[k] / (var.v[k].sqrt() + hp.eps);
                    }
                }
                Rule::RmsProp => {
                    // Single-beta EMA of g^2, raw gradient, no bias correction.
                    for k in 0..n {
                        var.v[k] = hp.beta2 * var.v[k] + (1.0 - hp.beta2) * g[k] * g[k];
                        p[k] -= hp.alpha * g[k] / (var.v[k].sqrt() + hp.eps);
                    }
                }
                Rule::Adam => {
                    for k in 0..n {
                        var.m[k] = hp.beta1 * var.m[k] + (1.0 - hp.beta1) * g[k];
                        var.v[k] = hp.beta2 * var.v[k] + (1.0 - hp.beta2) * g[k] * g[k];
                        let m_hat = var.m[k] / bc1;
                        let v_hat = var.v[k] / bc2;
                        p[k] -= hp.alpha * m_hat / (v_hat.sqrt() + hp.eps);
                    }
                }
                Rule::DiffGrad => {
                    // Adam moments gated by friction xi = sigmoid(|g_prev - g|).
                    for k in 0..n {
                        var.m[k] = hp.beta1 * var.m[k] + (1.0 - hp.beta1) * g[k];
                        var.v[k] = hp.beta2 * var.v[k] + (1.0 - hp.beta2) * g[k] * g[k];
                        let xi = 1.0 / (1.0 + (-(var.prev_grad[k] - g[k]).abs()).exp());
                        var.xi[k] = xi;
                        var.prev_grad[k] = g[k];
                        let m_hat = var.m[k] / bc1;
                        let v_hat = var.v[k] / bc2;
                        p[k] -= hp.alpha * xi * m_hat / (v_hat.sqrt() + hp.eps);
                    }
                }
                Rule::AdaMod => {
                    // Adam moments; per-coordinate rate n is smoothed into s
                    // and the applied rate is min(n, s).
                    for k in 0..n {
                        var.m[k] = hp.beta1 * var.m[k] + (1.0 - hp.beta1) * g[k];
                        var.v[k] = hp.beta2 * var.v[k] + (1.0 - hp.beta2) * g[k] * g[k];
                        let m_hat = var.m[k] / bc1;
                        let v_hat = var.v[k] / bc2;
                        let rate = hp.alpha / (v_hat.sqrt() + hp.eps);
                        var.s[k] = hp.beta3 * var.s[k] + (1.0 - hp.beta3) * rate;
                        p[k] -= rate.min(var.s[k]) * m_hat;
                    }
                }
                Rule::AdaBelief => {
                    // v accumulates the belief residual (g - m)^2 with the
                    // updated m; the shifted form adds eps/(1-beta2) under the
                    // root and keeps a trailing eps.
                    for k in 0..n {
                        var.m[k] = hp.beta1 * var.m[k] + (1.0 - hp.beta1) * g[k];
                        let resid = g[k] - var.m[k];
                        var.v[k] = hp.beta2 * var.v[k] + (1.0 - hp.beta2) * resid * resid;
                        let m_hat = var.m[k] / bc1;
                        let s_hat = var.v[k] / bc2 + hp.eps / (1.0 - hp.beta2);
                        p[k] -= hp.alpha * m_hat / (s_hat.sqrt() + hp.eps);
                    }
                }
                Rule::Madgrad => {
                    // lambda = alpha * sqrt(step) feeds a cumulative v; the
                    // rate 1/(cbrt(v) + eps) multiplies the decayed first
                    // moment (alpha enters only through lambda).
                    let lambda = hp.alpha * (t_next as f64).sqrt();
                    for k in 0..n {
                        var.m[k] = hp.beta1 * var.m[k] + (1.0 - hp.beta1) * g[k];
                        var.v[k] += lambda * g[k] * g[k];
                        p[k] -= var.m[k] / (var.v[k].cbrt() + hp.eps);
                    }
                }
                Rule::EAdam => {
                    // Adam moments with eps/(1-beta2) folded under the root
                    // and no trailing eps.
                    for k in 0..n {
                        var.m[k] = hp.beta1 * var.m[k] + (1.0 - hp.beta1) * g[k];
                        var.v[k] = hp.beta2 * var.v[k] + (1.0 - hp.beta2) * g[k] * g[k];
                        let m_hat = var.m[k] / bc1;
                        let s_hat = var.v[k] / bc2 + hp.eps / (1.0 - hp.beta2);
                        p[k] -= hp.alpha * m_hat / s_hat.sqrt();
                    }
                }
                Rule::AdaMomentum => {
                    // Like EAdam but v accumulates the *updated first moment*
                    // squared instead of the raw gradient squared.
                    for k in 0..n {
                        var.m[k] = hp.beta1 * var.m[k] + (1.0 - hp.beta1) * g[k];
                        var.v[k] = hp.beta2 * var.v[k] + (1.0 - hp.beta2) * var.m[k] * var.m[k];
                        let m_hat = var.m[k] / bc1;
                        let s_hat = var.v[k] / bc2 + hp.eps / (1.0 - hp.beta2);
                        p[k] -= hp.alpha * m_hat / s_hat.sqrt();
                    }
                }
            }

            if !params[i].all_finite() {
                return Err(Error::numeric(format!(
                    "non-finite update for variable {} at step {t_next}",
                    self.names[i]
                )));
            }
        }
        self.t = t_next;
        Ok(())
    }

    /// The adaptive denominator's magnitude proxy, one flat array per
    /// variable: the quantity the immutability constant eps is compared
    /// against. Requires at least one completed step and an adaptive rule.
    pub fn magnitude_snapshots(&self, epoch: u64) -> Result<Vec<MagnitudeSnapshot>> {
        if self.t == 0 {
            return Err(Error::contract(
                "magnitude snapshot requested before any step (t = 0)".into(),
            ));
        }
        if !self.rule.is_adaptive() {
            return Err(Error::contract(format!(
                "rule {} has no adaptive denominator",
                self.rule
            )));
        }
        let bc2 = 1.0 - self.hp.beta2.powi(self.t as i32);
        let snap = |k: usize, values: Vec<f64>| MagnitudeSnapshot {
            variable_id: self.names[k].clone(),
            values,
            iteration: self.t,
            epoch,
        };
        Ok(self
            .vars
            .iter()
            .enumerate()
            .map(|(k, var)| {
                let values: Vec<f64> = match self.rule {
                    // Raw accumulator rules: sqrt(v).
                    Rule::AdaGrad | Rule::RmsProp => {
                        var.v.iter().map(|&v| v.sqrt()).collect()
                    }
                    // Bias-corrected square-root rules: sqrt(v / (1 - beta2^t)).
                    Rule::Adam | Rule::DiffGrad | Rule::AdaMod => {
                        var.v.iter().map(|&v| (v / bc2).sqrt()).collect()
                    }
                    // Shifted-accumulator rules compare eps against
                    // (1 - beta2) * v_hat.
                    Rule::AdaBelief | Rule::EAdam | Rule::AdaMomentum => {
                        var.v.iter().map(|&v| (1.0 - self.hp.beta2) * (v / bc2)).collect()
                    }
                    Rule::Madgrad => var.v.iter().map(|&v| v.cbrt()).collect(),
                    Rule::Sgd | Rule::SgdMomentum => unreachable!("guarded above"),
                };
                snap(k, values)
            })
            .collect())
    }

    /// Realized per-coordinate learning rate after the most recent step, one
    /// tensor per variable.
    pub fn effective_lr(&self) -> Result<Vec<Tensor>> {
        if self.t == 0 {
            return Err(Error::contract(
                "effective learning rate requested before any step (t = 0)".into(),
            ));
        }
        let hp = self.hp;
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        self.vars
            .iter()
            .enumerate()
            .map(|(i, var)| {
                let values: Vec<f64> = match self.rule {
                    Rule::Sgd | Rule::SgdMomentum => {
                        vec![hp.alpha; self.shapes[i].iter().product()]
                    }
                    Rule::AdaGrad | Rule::RmsProp => var
                        .v
                        .iter()
                        .map(|&v| hp.alpha / (v.sqrt() + hp.eps))
                        .collect(),
                    Rule::Adam => var
                        .v
                        .iter()
                        .map(|&v| hp.alpha / ((v / bc2).sqrt() + hp.eps))
                        .collect(),
                    Rule::DiffGrad => var
                        .v
                        .iter()
                        .zip(&var.xi)
                        .map(|(&v, &xi)| hp.alpha * xi / ((v / bc2).sqrt() + hp.eps))
                        .collect(),
                    Rule::AdaMod => var
                        .v
                        .iter()
                        .zip(&var.s)
                        .map(|(&v, &s)| (hp.alpha / ((v / bc2).sqrt() + hp.eps)).min(s))
                        .collect(),
                    Rule::AdaBelief => var
                        .v
                        .iter()
                        .map(|&v| {
                            let s_hat = v / bc2 + hp.eps / (1.0 - hp.beta2);
                            hp.alpha / (s_hat.sqrt() + hp.eps)
                        })
                        .collect(),
                    Rule::Madgrad => var
                        .v
                        .iter()
                        .map(|&v| 1.0 / (v.cbrt() + hp.eps))
                        .collect(),
                    Rule::EAdam | Rule::AdaMomentum => var
                        .v
                        .iter()
                        .map(|&v| {
                            let s_hat = v / bc2 + hp.eps / (1.0 - hp.beta2);
                            hp.alpha / s_hat.sqrt()
                        })
                        .collect(),
                };
                Tensor::new(&self.shapes[i], values)
            })
            .collect()
    }

    /// Diagnostic dump: t plus min/max/mean/l2 of every live buffer.
    pub fn diagnostics(&self) -> StateDiagnostics {
        StateDiagnostics {
            rule: self.rule,
            t: self.t,
            hyperparams: self.hp,
            variables: self
                .vars
                .iter()
                .enumerate()
                .map(|(i, var)| VariableDiagnostics {
                    name: self.names[i].clone(),
                    shape: self.shapes[i].clone(),
                    buffers: [
                        summarize("m", &var.m),
                        summarize("v", &var.v),
                        summarize("s", &var.s),
                        summarize("prev_grad", &var.prev_grad),
                        summarize("xi", &var.xi),
                    ]
                    .into_iter()
                    .flatten()
                    .collect(),
                })
                .collect(),
        }
    }

    /// Test/diagnostic access to the raw v accumulator of one variable.
    pub fn v_accumulator(&self, var: usize) -> &[f64] {
        &self.vars[var].v
    }
}
