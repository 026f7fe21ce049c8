use std::fmt::Write;

use super::metrics::{evaluate, MetricsReport};
use crate::config::{RunConfig, Variant};
use crate::error::Result;
use crate::model::MmanModel;
use crate::text::{CategorySet, LabeledQuery};
use crate::train::{train, AdamState, TrainReport};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: MmanModel,
    pub optimizer: AdamState,
    pub train: TrainReport,
    pub metrics: MetricsReport,
}

/// Builds a model from `config`, trains it on `train_data` and evaluates it
/// on `test_data`.
pub fn train_and_evaluate(
    config: &RunConfig,
    cats: &CategorySet,
    train_data: &[LabeledQuery],
    test_data: &[LabeledQuery],
    on_epoch: impl FnMut(usize, f64),
) -> Result<RunOutcome> {
    config.validate()?;
    let mut model = MmanModel::new(config.model.clone(), config.train.seed)?;
    let (optimizer, report) = train(
        &mut model,
        cats,
        train_data,
        &config.train,
        Some((test_data, config.threshold)),
        on_epoch,
    )?;
    let metrics = evaluate(&model, cats, test_data, config.threshold)?;
    Ok(RunOutcome {
        model,
        optimizer,
        train: report,
        metrics,
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub num_parameters: usize,
    pub train: TrainReport,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Percentages with two decimals, laid out as Micro P/R/F1 then Macro
    /// P/R/F1 per variant.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24}| {:^23} | {:^23}", "", "Micro", "Macro");
        let _ = writeln!(
            out,
            "{:<24}| {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7}",
            "Model", "Prec.", "Recall", "F1", "Prec.", "Recall", "F1"
        );
        let _ = writeln!(out, "{}", "-".repeat(24 + 2 + 23 + 3 + 23));
        for row in &self.rows {
            let (mi, ma) = (row.metrics.micro, row.metrics.macro_);
            let _ = writeln!(
                out,
                "{:<24}| {:>7.2} {:>7.2} {:>7.2} | {:>7.2} {:>7.2} {:>7.2}",
                row.variant.display_name(),
                100.0 * mi.precision,
                100.0 * mi.recall,
                100.0 * mi.f1,
                100.0 * ma.precision,
                100.0 * ma.recall,
                100.0 * ma.f1
            );
        }
        out
    }

    /// `variant\tscope\tmetric\tvalue` records for the six headline metrics.
    pub fn render_records(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            for (scope, prf) in [("micro", row.metrics.micro), ("macro", row.metrics.macro_)] {
                for (metric, v) in [("precision", prf.precision), ("recall", prf.recall), ("f1", prf.f1)] {
                    let _ = writeln!(out, "{}\t{scope}\t{metric}\t{v}", row.variant);
                }
            }
        }
        out
    }
}

/// Trains and evaluates the full model and each single-branch ablation under
/// the same seed and settings.
pub fn run_ablation_suite(
    config: &RunConfig,
    cats: &CategorySet,
    train_data: &[LabeledQuery],
    test_data: &[LabeledQuery],
    mut on_epoch: impl FnMut(Variant, usize, f64),
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(Variant::ALL.len());
    for variant in Variant::ALL {
        let mut cfg = config.clone();
        cfg.model.variant = variant;
        let outcome = train_and_evaluate(&cfg, cats, train_data, test_data, |e, l| on_epoch(variant, e, l))?;
        rows.push(AblationRow {
            variant,
            num_parameters: outcome.model.num_parameters(),
            train: outcome.train,
            metrics: outcome.metrics,
        });
    }
    Ok(AblationTable { rows })
}
