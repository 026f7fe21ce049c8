use num::{BigInt, BigRational, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::model::MmanModel;
use crate::tape::sigmoid;
use crate::text::{CategorySet, LabeledQuery};

/// Label `c` is predicted iff `σ(logit_c) >= threshold`. An all-negative
/// prediction is allowed.
pub fn decide(logits: &[f64], threshold: f64) -> Vec<bool> {
    logits.iter().map(|&z| sigmoid(z) >= threshold).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// Zero-denominator convention: an undefined ratio is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        ExactPrf::from_counts(tp, fp, fn_).round()
    }
}

/// Scores as exact fractions of the counts, so every reported value is the
/// hand-computed one rounded once.
#[derive(Debug, Clone)]
struct ExactPrf {
    precision: BigRational,
    recall: BigRational,
    f1: BigRational,
}

impl ExactPrf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                BigRational::zero()
            } else {
                BigRational::new(BigInt::from(num), BigInt::from(den))
            }
        };
        ExactPrf {
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            // Harmonic mean of P and R; 0 whenever tp is 0.
            f1: ratio(2 * tp, if tp == 0 { 0 } else { 2 * tp + fp + fn_ }),
        }
    }

    fn round(&self) -> Prf {
        let f = |r: &BigRational| r.to_f64().expect("ratios of counts are finite");
        Prf {
            precision: f(&self.precision),
            recall: f(&self.recall),
            f1: f(&self.f1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CategoryMetrics {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub scores: Prf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub micro: Prf,
    /// Unweighted means of the per-category precision, recall and F1.
    pub macro_: Prf,
    pub per_category: Vec<CategoryMetrics>,
    pub threshold: f64,
    pub examples: usize,
}

/// Micro metrics pool tp/fp/fn over every (example, category) decision;
/// macro metrics average the per-category scores.
pub fn compute_metrics(preds: &[Vec<bool>], golds: &[Vec<bool>], threshold: f64) -> Result<MetricsReport> {
    if preds.len() != golds.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold label sets",
            preds.len(),
            golds.len()
        )));
    }
    let n_cats = golds.first().map_or(0, Vec::len);
    let mut per = vec![(0usize, 0usize, 0usize); n_cats];
    for (p, g) in preds.iter().zip(golds) {
        if p.len() != n_cats || g.len() != n_cats {
            return Err(Error::LabelCount {
                expected: n_cats,
                found: if g.len() != n_cats { g.len() } else { p.len() },
            });
        }
        for c in 0..n_cats {
            match (p[c], g[c]) {
                (true, true) => per[c].0 += 1,
                (true, false) => per[c].1 += 1,
                (false, true) => per[c].2 += 1,
                (false, false) => {}
            }
        }
    }
    let exact: Vec<ExactPrf> = per
        .iter()
        .map(|&(tp, fp, fn_)| ExactPrf::from_counts(tp, fp, fn_))
        .collect();
    let per_category: Vec<CategoryMetrics> = per
        .iter()
        .zip(&exact)
        .map(|(&(tp, fp, fn_), e)| CategoryMetrics {
            tp,
            fp,
            fn_,
            scores: e.round(),
        })
        .collect();
    let (tp, fp, fn_) = per
        .iter()
        .fold((0, 0, 0), |acc, c| (acc.0 + c.0, acc.1 + c.1, acc.2 + c.2));
    let mean = |f: fn(&ExactPrf) -> &BigRational| {
        if n_cats == 0 {
            BigRational::zero()
        } else {
            exact.iter().map(f).sum::<BigRational>() / BigInt::from(n_cats)
        }
    };
    let macro_ = ExactPrf {
        precision: mean(|s| &s.precision),
        recall: mean(|s| &s.recall),
        f1: mean(|s| &s.f1),
    };
    Ok(MetricsReport {
        micro: Prf::from_counts(tp, fp, fn_),
        macro_: macro_.round(),
        per_category,
        threshold,
        examples: preds.len(),
    })
}

/// Logits for every example, sharing one set of category encodings.
pub fn predict_all(model: &MmanModel, cats: &CategorySet, data: &[LabeledQuery]) -> Result<Vec<Vec<f64>>> {
    let mut predictor = model.predictor(cats)?;
    data.iter().map(|ex| predictor.logits(&ex.query)).collect()
}

pub fn evaluate(model: &MmanModel, cats: &CategorySet, data: &[LabeledQuery], threshold: f64) -> Result<MetricsReport> {
    let preds: Vec<Vec<bool>> = predict_all(model, cats, data)?
        .iter()
        .map(|z| decide(z, threshold))
        .collect();
    let golds: Vec<Vec<bool>> = data.iter().map(|ex| ex.labels.clone()).collect();
    compute_metrics(&preds, &golds, threshold)
}
