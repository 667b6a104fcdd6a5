//! Temperature scaling: NLL objective, bracketed scalar fit, and logit
//! rescaling.
//!
//! The fit runs a golden-section search on log T over a fixed bracket.
//! The objective is smooth and empirically unimodal; callers wanting a
//! second opinion can cross-check against a plain grid search (the test
//! suites do).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::ResponseRecord;
use crate::util::{log_sum_exp, pairwise_sum, softmax};

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const MAX_ITERATIONS: usize = 200;

/// Result of a temperature fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemperatureFit {
    pub t: f64,
    pub nll_at_t: f64,
    pub iterations: usize,
    pub converged: bool,
    /// The objective was flat across the whole bracket; `t` is the no-op 1.0.
    pub flat: bool,
    pub bracket: (f64, f64),
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub lo: f64,
    pub hi: f64,
    /// Convergence threshold on the log-T bracket width.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { lo: 0.05, hi: 20.0, tol: 1e-4 }
    }
}

fn logits_and_gold(record: &ResponseRecord) -> Result<(&[f64], usize)> {
    let logits = record.option_logits.as_deref().ok_or_else(|| {
        Error::validation("option_logits", format!("record `{}` has no logits", record.id))
    })?;
    let gold = record.gold_index.ok_or_else(|| {
        Error::validation("gold_index", format!("record `{}` has no gold answer", record.id))
    })?;
    Ok((logits, gold))
}

/// Total negative log-likelihood of the gold answers at temperature `t`,
/// computed with log-sum-exp stabilization.
pub fn nll(records: &[ResponseRecord], t: f64) -> Result<f64> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("nll"));
    }
    let mut terms = Vec::with_capacity(records.len());
    for record in records {
        let (logits, gold) = logits_and_gold(record)?;
        let scaled: Vec<f64> = logits.iter().map(|l| l / t).collect();
        terms.push(log_sum_exp(&scaled) - scaled[gold]);
    }
    let total = pairwise_sum(&terms);
    if !total.is_finite() {
        return Err(Error::Numeric(format!("nll is not finite at T={t}")));
    }
    Ok(total)
}

/// Softmax of `logits / t`. Preserves the argmax for every `t > 0`.
pub fn apply_temperature(option_logits: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
    }
    if option_logits.is_empty() {
        return Err(Error::EmptyInput("apply_temperature"));
    }
    if let Some(bad) = option_logits.iter().find(|l| !l.is_finite()) {
        return Err(Error::Domain(format!("non-finite logit {bad}")));
    }
    let scaled: Vec<f64> = option_logits.iter().map(|l| l / t).collect();
    Ok(softmax(&scaled))
}

/// Divide a record's logits by `t` in place, so downstream metrics can be
/// reused unchanged on the rescaled file.
pub fn scale_record(record: &mut ResponseRecord, t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::Domain(format!("temperature must be > 0, got {t}")));
    }
    if let Some(logits) = record.option_logits.as_mut() {
        for l in logits.iter_mut() {
            *l /= t;
        }
    }
    Ok(())
}

/// Fit T by minimizing [`nll`] with a golden-section search on log T.
///
/// A flat objective (all-uniform logits) short-circuits to the no-op T = 1.
pub fn fit_temperature(records: &[ResponseRecord], options: FitOptions) -> Result<TemperatureFit> {
    let FitOptions { lo, hi, tol } = options;
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo < hi) {
        return Err(Error::Domain(format!("invalid bracket ({lo}, {hi})")));
    }
    let objective = |log_t: f64| nll(records, log_t.exp());

    let (log_lo, log_hi) = (lo.ln(), hi.ln());
    let mut evaluations = 0usize;

    // Flatness probe across the bracket.
    let probes = 5;
    let mut probe_min = f64::INFINITY;
    let mut probe_max = f64::NEG_INFINITY;
    for i in 0..probes {
        let log_t = log_lo + (log_hi - log_lo) * i as f64 / (probes - 1) as f64;
        let value = objective(log_t)?;
        evaluations += 1;
        probe_min = probe_min.min(value);
        probe_max = probe_max.max(value);
    }
    if probe_max - probe_min <= tol {
        let t = 1.0f64.clamp(lo, hi);
        return Ok(TemperatureFit {
            t,
            nll_at_t: nll(records, t)?,
            iterations: evaluations,
            converged: true,
            flat: true,
            bracket: (lo, hi),
        });
    }

    let mut a = log_lo;
    let mut b = log_hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = objective(c)?;
    let mut fd = objective(d)?;
    evaluations += 2;

    while b - a > tol && evaluations < MAX_ITERATIONS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = objective(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = objective(d)?;
        }
        evaluations += 1;
    }
    let converged = b - a <= tol;

    // Guard the invariant nll(T) <= nll at both endpoints: pick the best of
    // the interior candidate and the bracket ends.
    let mut t = ((a + b) / 2.0).exp();
    let mut best = nll(records, t)?;
    for candidate in [lo, hi] {
        let value = nll(records, candidate)?;
        if value < best {
            best = value;
            t = candidate;
        }
    }

    Ok(TemperatureFit {
        t,
        nll_at_t: best,
        iterations: evaluations,
        converged,
        flat: false,
        bracket: (lo, hi),
    })
}
