//! Confidence, reliability binning, and the calibration error family
//! (ECE, MCE, ENCE) over logged multiple-choice predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::{ErrorPolicy, ResponseRecord};
use crate::util::{argmax, mean, pairwise_sum, softmax};

/// One prediction: max-softmax confidence plus correctness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionPoint {
    confidence: f64,
    correct: bool,
}

impl PredictionPoint {
    pub fn new(confidence: f64, correct: bool) -> Result<Self> {
        if !(confidence.is_finite() && confidence > 0.0 && confidence <= 1.0) {
            return Err(Error::validation(
                "confidence",
                format!("must be finite and in (0,1], got {confidence}"),
            ));
        }
        Ok(Self { confidence, correct })
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn correct(&self) -> bool {
        self.correct
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinScheme {
    #[default]
    EqualWidth,
    EqualMass,
}

impl BinScheme {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "width" | "equal_width" => Ok(BinScheme::EqualWidth),
            "mass" | "equal_mass" => Ok(BinScheme::EqualMass),
            other => Err(Error::validation(
                "scheme",
                format!("expected `width` or `mass`, got `{other}`"),
            )),
        }
    }
}

/// One confidence bin. Means are `None` for empty bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub count: usize,
    pub conf_mean: Option<f64>,
    pub acc_mean: Option<f64>,
    pub lower: f64,
    pub upper: f64,
}

/// Per-bin counts and means; the substrate for the error metrics and for
/// reliability-diagram CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTable {
    pub bin_count: usize,
    pub scheme: BinScheme,
    pub bins: Vec<ReliabilityBin>,
    pub total: usize,
}

/// The (Acc, Conf, ECE, MCE, ENCE) summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub ece: f64,
    pub mce: f64,
    pub ence: f64,
}

/// Max-softmax confidence and argmax index (lowest index wins ties).
pub fn confidence_of(option_logits: &[f64]) -> Result<(f64, usize)> {
    if option_logits.is_empty() {
        return Err(Error::EmptyInput("confidence_of"));
    }
    if let Some(bad) = option_logits.iter().find(|l| !l.is_finite()) {
        return Err(Error::Domain(format!("non-finite logit {bad}")));
    }
    let probs = softmax(option_logits);
    let idx = argmax(&probs);
    Ok((probs[idx], idx))
}

/// Bin predictions into `m_bins` bins under the given scheme.
///
/// Equal-width bins cover `(i/M, (i+1)/M]`: half-open so confidence 1.0
/// lands in the top bin and softmax outputs (> 0) always land somewhere.
/// Equal-mass bins take ceil/floor(N/M) points each in confidence order;
/// their `lower`/`upper` are the empirical extremes of the bin.
pub fn bin_predictions(
    points: &[PredictionPoint],
    m_bins: usize,
    scheme: BinScheme,
) -> Result<ReliabilityTable> {
    if points.is_empty() {
        return Err(Error::EmptyInput("bin_predictions"));
    }
    if m_bins == 0 {
        return Err(Error::Domain("bin count must be >= 1".into()));
    }

    let mut assigned: Vec<Vec<&PredictionPoint>> = vec![Vec::new(); m_bins];
    let mut bounds: Vec<(f64, f64)> = Vec::with_capacity(m_bins);

    match scheme {
        BinScheme::EqualWidth => {
            let edges: Vec<f64> = (0..=m_bins).map(|i| i as f64 / m_bins as f64).collect();
            for point in points {
                // bin i holds (edges[i], edges[i+1]]
                let idx = edges.partition_point(|&e| e < point.confidence).saturating_sub(1);
                let idx = idx.min(m_bins - 1);
                assigned[idx].push(point);
            }
            for i in 0..m_bins {
                bounds.push((edges[i], edges[i + 1]));
            }
        }
        BinScheme::EqualMass => {
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.sort_by(|&a, &b| {
                points[a]
                    .confidence
                    .partial_cmp(&points[b].confidence)
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let base = points.len() / m_bins;
            let rem = points.len() % m_bins;
            let mut cursor = 0;
            let mut prev_upper = 0.0;
            for bin in 0..m_bins {
                let size = base + usize::from(bin < rem);
                let slice = &order[cursor..cursor + size];
                cursor += size;
                for &i in slice {
                    assigned[bin].push(&points[i]);
                }
                let (lower, upper) = if slice.is_empty() {
                    (prev_upper, prev_upper)
                } else {
                    (
                        points[slice[0]].confidence,
                        points[*slice.last().unwrap()].confidence,
                    )
                };
                prev_upper = upper;
                bounds.push((lower, upper));
            }
        }
    }

    let bins = assigned
        .iter()
        .zip(&bounds)
        .map(|(members, &(lower, upper))| {
            if members.is_empty() {
                ReliabilityBin { count: 0, conf_mean: None, acc_mean: None, lower, upper }
            } else {
                let confs: Vec<f64> = members.iter().map(|p| p.confidence).collect();
                let accs: Vec<f64> = members.iter().map(|p| f64::from(u8::from(p.correct))).collect();
                ReliabilityBin {
                    count: members.len(),
                    conf_mean: Some(mean(&confs)),
                    acc_mean: Some(mean(&accs)),
                    lower,
                    upper,
                }
            }
        })
        .collect();

    Ok(ReliabilityTable { bin_count: m_bins, scheme, bins, total: points.len() })
}

impl ReliabilityTable {
    fn check_total(&self) -> Result<()> {
        if self.total == 0 {
            return Err(Error::EmptyInput("reliability table"));
        }
        Ok(())
    }

    fn occupied(&self) -> impl Iterator<Item = (usize, &ReliabilityBin, f64, f64)> {
        self.bins.iter().enumerate().filter_map(|(i, b)| match (b.conf_mean, b.acc_mean) {
            (Some(conf), Some(acc)) if b.count > 0 => Some((i, b, conf, acc)),
            _ => None,
        })
    }

    /// Expected calibration error: sum of (N_m/N)·|acc − conf| over bins.
    pub fn ece(&self) -> Result<f64> {
        self.check_total()?;
        let terms: Vec<f64> = self
            .occupied()
            .map(|(_, b, conf, acc)| b.count as f64 / self.total as f64 * (acc - conf).abs())
            .collect();
        Ok(pairwise_sum(&terms))
    }

    /// Maximum |acc − conf| over non-empty bins.
    pub fn mce(&self) -> Result<f64> {
        self.check_total()?;
        Ok(self
            .occupied()
            .map(|(_, _, conf, acc)| (acc - conf).abs())
            .fold(0.0, f64::max))
    }

    /// ECE with each bin's gap normalized by its mean confidence.
    pub fn ence(&self) -> Result<f64> {
        self.check_total()?;
        let mut terms = Vec::new();
        for (i, b, conf, acc) in self.occupied() {
            if conf <= 0.0 {
                return Err(Error::DegenerateBin { bin: i });
            }
            terms.push(b.count as f64 / self.total as f64 * (acc - conf).abs() / conf);
        }
        Ok(pairwise_sum(&terms))
    }
}

/// Extract (confidence, correct) points from records carrying logits and
/// gold answers. Under `Skip`, deficient records are silently dropped.
pub fn prediction_points(
    records: &[ResponseRecord],
    policy: ErrorPolicy,
) -> Result<Vec<PredictionPoint>> {
    let mut points = Vec::with_capacity(records.len());
    for record in records {
        match (&record.option_logits, record.gold_index) {
            (Some(logits), Some(gold)) => {
                let (confidence, predicted) = confidence_of(logits)?;
                points.push(PredictionPoint::new(confidence, predicted == gold)?);
            }
            _ if policy == ErrorPolicy::Skip => continue,
            (None, _) => {
                return Err(Error::validation(
                    "option_logits",
                    format!("record `{}` has no logits", record.id),
                ))
            }
            (_, None) => {
                return Err(Error::validation(
                    "gold_index",
                    format!("record `{}` has no gold answer", record.id),
                ))
            }
        }
    }
    Ok(points)
}

/// Accuracy, mean confidence, and the three errors from a set of points.
pub fn summarize_points(
    points: &[PredictionPoint],
    m_bins: usize,
    scheme: BinScheme,
) -> Result<CalibrationSummary> {
    if points.is_empty() {
        return Err(Error::EmptyInput("summarize"));
    }
    let table = bin_predictions(points, m_bins, scheme)?;
    let confs: Vec<f64> = points.iter().map(|p| p.confidence).collect();
    let accs: Vec<f64> = points.iter().map(|p| f64::from(u8::from(p.correct))).collect();
    Ok(CalibrationSummary {
        accuracy: mean(&accs),
        mean_confidence: mean(&confs),
        ece: table.ece()?,
        mce: table.mce()?,
        ence: table.ence()?,
    })
}

/// Full summary straight from records (default: 10 equal-width bins).
pub fn summarize(
    records: &[ResponseRecord],
    m_bins: usize,
    scheme: BinScheme,
    policy: ErrorPolicy,
) -> Result<CalibrationSummary> {
    summarize_points(&prediction_points(records, policy)?, m_bins, scheme)
}
