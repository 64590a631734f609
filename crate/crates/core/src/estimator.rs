//! Search-range estimation for the immutability constant eps: probe one
//! training epoch, capture each variable's adaptive-denominator magnitudes at
//! the final iteration, and round the extreme percentiles to powers of ten.
//! Also: the minimal beta2 for an epoch-covering EMA window, and
//! classification of a (magnitudes, eps) pair into the adaptive/immutable
//! regimes.

use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::histogram::{fraction_above, percentile, MagnitudeSnapshot};
use crate::model::Mlp;
use crate::optim::{HyperParams, OptimizerState, Rule};
use serde::{Deserialize, Serialize};

/// Overall adaptive fraction at or below this is the fully-immutable regime.
pub const IMMUTABLE_FRACTION_MAX: f64 = 0.02;
/// Overall adaptive fraction at or above this is the fully-adaptive regime.
pub const ADAPTIVE_FRACTION_MIN: f64 = 0.98;

/// Percentiles used for the range bounds: the lower bound collects 2nd
/// percentiles, the upper collects 98th.
pub const LOWER_PERCENTILE: f64 = 2.0;
pub const UPPER_PERCENTILE: f64 = 98.0;

/// How the probe ran: rule, hyperparameters, iterations in the probe epoch
/// (T), how many steps actually executed, and the batch seed.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ProbeMeta {
    pub rule: Rule,
    pub hyperparams: HyperParams,
    pub t_per_epoch: u64,
    pub steps_performed: u64,
    pub seed: u64,
}

/// Raw extreme percentiles of one variable's final-iteration magnitudes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VariablePercentiles {
    pub variable_id: String,
    pub p2: f64,
    pub p98: f64,
}

/// The estimated eps search range: power-of-ten bounds plus the unrounded
/// per-variable percentiles they came from.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpsilonRange {
    pub eps_lower: f64,
    pub eps_upper: f64,
    pub per_variable: Vec<VariablePercentiles>,
    /// Variables whose magnitudes were all zero (dead units), skipped with a
    /// warning instead of dragging the lower bound to zero.
    pub skipped_variables: Vec<String>,
    pub probe: ProbeMeta,
}

/// Which regime a (magnitudes, eps) pair falls into.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "fully-immutable")]
    FullyImmutable,
    #[serde(rename = "partial")]
    Partial,
    #[serde(rename = "fully-adaptive")]
    FullyAdaptive,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::FullyImmutable => "fully-immutable",
            Regime::Partial => "partial",
            Regime::FullyAdaptive => "fully-adaptive",
        })
    }
}

/// Per-variable and pooled adaptive fractions at a given eps, plus the
/// threshold-driven classification.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RegimeReport {
    pub eps: f64,
    pub per_variable: Vec<VariableFraction>,
    /// Pooled across all coordinates of all variables (not a mean of means).
    pub overall_fraction: f64,
    pub classification: Regime,
    pub immutable_threshold: f64,
    pub adaptive_threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VariableFraction {
    pub variable_id: String,
    pub fraction_above: f64,
}

/// beta2 guidance derived from the epoch length, with the separation check
/// against the first-moment decay.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Beta2Advice {
    pub batches_per_epoch: usize,
    pub suggested_beta2: f64,
    pub beta1: f64,
    pub gap: f64,
    pub beta2_exceeds_beta1: bool,
}

/// Round a positive value to the nearest power of ten:
/// 10^round(log10 x), ties away from zero.
pub fn round_pow10(x: f64) -> Result<f64> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::contract(format!(
            "round_pow10 needs a positive finite value, got {x}"
        )));
    }
    Ok(pow10(x.log10().round() as i32))
}

/// 10^k built so that negative powers equal their decimal literals bitwise
/// (one correctly-rounded division instead of drifting multiplications).
fn pow10(k: i32) -> f64 {
    if k >= 0 {
        10f64.powi(k)
    } else {
        1.0 / 10f64.powi(-k)
    }
}

/// The smallest beta2 whose EMA window 1/(1-beta2) covers a whole epoch of N
/// batches: beta2 = 1 - 1/N.
pub fn suggest_beta2(batches_per_epoch: usize) -> Result<f64> {
    if batches_per_epoch == 0 {
        return Err(Error::contract("batches_per_epoch must be >= 1".into()));
    }
    Ok(1.0 - 1.0 / batches_per_epoch as f64)
}

/// `suggest_beta2` plus the separation report against a caller beta1: the
/// second-moment window must outlast the first-moment window, so beta2 has to
/// exceed beta1 (gap reported so callers can judge "sufficiently distant").
pub fn beta2_advice(batches_per_epoch: usize, beta1: f64) -> Result<Beta2Advice> {
    let suggested = suggest_beta2(batches_per_epoch)?;
    Ok(Beta2Advice {
        batches_per_epoch,
        suggested_beta2: suggested,
        beta1,
        gap: suggested - beta1,
        beta2_exceeds_beta1: suggested > beta1,
    })
}

/// Derive the range from already-captured final-iteration snapshots (the
/// injected-snapshot path; also the tail of the live probe). The lower
/// accumulator starts at float32's maximum finite value and the upper at
/// zero, then every usable variable's 2nd/98th percentiles fold in.
pub fn estimate_from_snapshots(
    snapshots: &[MagnitudeSnapshot],
    probe: ProbeMeta,
) -> Result<EpsilonRange> {
    if snapshots.is_empty() {
        return Err(Error::contract("estimation needs at least one snapshot".into()));
    }
    let mut lower_acc = f32::MAX as f64;
    let mut upper_acc = 0.0f64;
    let mut per_variable = Vec::new();
    let mut skipped = Vec::new();
    for snap in snapshots {
        if !snap.values.iter().any(|&x| x > 0.0) {
            skipped.push(snap.variable_id.clone());
            continue;
        }
        let p2 = percentile(&snap.values, LOWER_PERCENTILE)?;
        let p98 = percentile(&snap.values, UPPER_PERCENTILE)?;
        lower_acc = lower_acc.min(p2);
        upper_acc = upper_acc.max(p98);
        per_variable.push(VariablePercentiles {
            variable_id: snap.variable_id.clone(),
            p2,
            p98,
        });
    }
    if per_variable.is_empty() {
        return Err(Error::numeric(
            "estimation failed: every variable's magnitudes are all zero".into(),
        ));
    }
    Ok(EpsilonRange {
        eps_lower: round_pow10(lower_acc)?,
        eps_upper: round_pow10(upper_acc)?,
        per_variable,
        skipped_variables: skipped,
        probe,
    })
}

/// Run exactly one epoch of training with `rule` and `probe_hp`, capture the
/// magnitudes at the final iteration t == T, and derive the range. The model
/// is trained in place (callers that need it pristine should pass a clone).
pub fn estimate_eps_range(
    rule: Rule,
    probe_hp: HyperParams,
    model: &mut Mlp,
    dataset: &Dataset,
    plan: &BatchPlan,
) -> Result<(EpsilonRange, Vec<MagnitudeSnapshot>)> {
    if !rule.is_adaptive() {
        return Err(Error::contract(format!(
            "rule {rule} has no adaptive denominator to estimate eps for"
        )));
    }
    let t_total = plan.batches_per_epoch(dataset.len())?;
    if t_total == 0 {
        return Err(Error::contract(
            "probe epoch has zero batches (drop_last trimmed everything)".into(),
        ));
    }
    let mut state = OptimizerState::new(rule, model.params(), probe_hp)?;
    state.set_names(model.param_names())?;
    for batch in plan.batches(dataset.len(), 0)? {
        let (x, y) = dataset.select(&batch)?;
        let (_, grads) = model.loss_and_grads(&x, &y)?;
        state.step(model.params_mut(), &grads)?;
    }
    debug_assert_eq!(state.t(), t_total as u64);
    let snapshots = state.magnitude_snapshots(0)?;
    let range = estimate_from_snapshots(
        &snapshots,
        ProbeMeta {
            rule,
            hyperparams: probe_hp,
            t_per_epoch: t_total as u64,
            steps_performed: state.t(),
            seed: plan.seed,
        },
    )?;
    Ok((range, snapshots))
}

/// Classify how adaptive the rule is at a given eps: pooled fraction of
/// magnitudes strictly above eps, thresholded at 2% / 98%.
pub fn classify_regime(snapshots: &[MagnitudeSnapshot], eps: f64) -> Result<RegimeReport> {
    if snapshots.is_empty() {
        return Err(Error::contract("regime classification needs snapshots".into()));
    }
    let mut per_variable = Vec::new();
    let mut above = 0usize;
    let mut total = 0usize;
    for snap in snapshots {
        per_variable.push(VariableFraction {
            variable_id: snap.variable_id.clone(),
            fraction_above: fraction_above(&snap.values, eps)?,
        });
        above += snap.values.iter().filter(|&&x| x > eps).count();
        total += snap.values.len();
    }
    let overall = above as f64 / total as f64;
    let classification = if overall <= IMMUTABLE_FRACTION_MAX {
        Regime::FullyImmutable
    } else if overall >= ADAPTIVE_FRACTION_MIN {
        Regime::FullyAdaptive
    } else {
        Regime::Partial
    };
    Ok(RegimeReport {
        eps,
        per_variable,
        overall_fraction: overall,
        classification,
        immutable_threshold: IMMUTABLE_FRACTION_MAX,
        adaptive_threshold: ADAPTIVE_FRACTION_MIN,
    })
}

/// The probe schedule for the estimated range: try both bounds, or just one
/// when the range is a single decade.
pub fn recommend_probe_points(range: &EpsilonRange) -> Vec<f64> {
    if range.eps_lower == range.eps_upper {
        vec![range.eps_lower]
    } else {
        vec![range.eps_lower, range.eps_upper]
    }
}

/// The full estimation artifact the CLI writes: the range, regime
/// classification at both bounds, the probe recommendation, and the beta2
/// guidance for this epoch length.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EstimationReport {
    pub range: EpsilonRange,
    pub regime_at_lower: RegimeReport,
    pub regime_at_upper: RegimeReport,
    pub probe_points: Vec<f64>,
    pub beta2_advice: Beta2Advice,
}

/// Assemble the report from a computed range and the snapshots it came from.
pub fn estimation_report(
    range: EpsilonRange,
    snapshots: &[MagnitudeSnapshot],
) -> Result<EstimationReport> {
    let regime_at_lower = classify_regime(snapshots, range.eps_lower)?;
    let regime_at_upper = classify_regime(snapshots, range.eps_upper)?;
    let probe_points = recommend_probe_points(&range);
    let beta2_advice = beta2_advice(
        range.probe.t_per_epoch.max(1) as usize,
        range.probe.hyperparams.beta1,
    )?;
    Ok(EstimationReport {
        range,
        regime_at_lower,
        regime_at_upper,
        probe_points,
        beta2_advice,
    })
}
