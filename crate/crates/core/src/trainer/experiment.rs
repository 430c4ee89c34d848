//! The toy single-source domain-generalisation experiment: train on the
//! source domain, test on a suite of intensity-shifted domains, and report
//! the results as CSV tables.

use std::fmt::Write as _;

use super::data::{generate_dataset, standard_suite, DomainSpec, SyntheticSample};
use super::train::{evaluate_ssdg, train, SsdgReport, TrainConfig, TrainOutcome};
use crate::error::Result;
use crate::monogenic::ChannelMode;

/// Offsets the test-set seed so test images never coincide with training ones.
const TEST_SEED_OFFSET: u64 = 0x7e57;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub train: TrainConfig,
    pub shape: (usize, usize),
    pub train_count: usize,
    pub test_count: usize,
    pub domains: Vec<DomainSpec>,
}

impl ExperimentSpec {
    /// Settings that separate Mono2D from raw input within a minute or two.
    pub fn toy(seed: u64) -> Self {
        Self {
            train: TrainConfig {
                learning_rate: 0.05,
                min_lr: 5e-4,
                epochs: 60,
                seed,
                ..TrainConfig::default()
            },
            shape: (64, 64),
            train_count: 60,
            test_count: 20,
            domains: standard_suite(),
        }
    }

    pub fn test_seed(&self) -> u64 {
        self.train.seed.wrapping_add(TEST_SEED_OFFSET)
    }

    pub fn training_set(&self) -> Result<Vec<SyntheticSample>> {
        generate_dataset(
            self.train_count,
            self.shape,
            &DomainSpec::source(),
            self.train.seed,
        )
    }

    /// Held-out source-domain images, anatomically paired with every shifted set.
    pub fn source_test_set(&self) -> Result<Vec<SyntheticSample>> {
        generate_dataset(
            self.test_count,
            self.shape,
            &DomainSpec::source(),
            self.test_seed(),
        )
    }

    pub fn shifted_test_sets(&self) -> Result<Vec<(String, Vec<SyntheticSample>)>> {
        self.domains
            .iter()
            .map(|d| {
                Ok((
                    d.name.clone(),
                    generate_dataset(self.test_count, self.shape, d, self.test_seed())?,
                ))
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub outcome: TrainOutcome,
    pub report: SsdgReport,
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    let outcome = train(&spec.train, &spec.training_set()?)?;
    let report = evaluate_ssdg(
        &outcome.model,
        &spec.source_test_set()?,
        &spec.shifted_test_sets()?,
    )?;
    Ok(ExperimentResult { outcome, report })
}

/// Per-epoch metrics; the per-domain test Dice columns are filled on the row
/// of the retained (best-validation) epoch.
pub fn metrics_csv(result: &ExperimentResult, seed: u64) -> String {
    let report = &result.report;
    let mut out = String::from("seed,epoch,lr,train_loss,val_dice,test_source");
    for d in &report.domains {
        let _ = write!(out, ",test_{}", d.name);
    }
    out.push('\n');
    for rec in &result.outcome.log {
        let _ = write!(
            out,
            "{seed},{},{:.6e},{:.6},{:.6}",
            rec.epoch, rec.lr, rec.train_loss, rec.val_dice
        );
        if result.outcome.best_epoch == Some(rec.epoch) {
            let _ = write!(out, ",{:.6}", report.source_dice);
            for d in &report.domains {
                let _ = write!(out, ",{:.6}", d.dice);
            }
        } else {
            out.push_str(&",".repeat(report.domains.len() + 1));
        }
        out.push('\n');
    }
    out
}

/// Human-readable per-domain Dice table.
pub fn dice_table(report: &SsdgReport) -> String {
    let mut out = format!("{:<18} {:>8} {:>8}\n", "domain", "dice", "gap");
    let _ = writeln!(
        out,
        "{:<18} {:>8.4} {:>8}",
        "source", report.source_dice, "-"
    );
    for d in &report.domains {
        let _ = writeln!(
            out,
            "{:<18} {:>8.4} {:>8.4}",
            d.name,
            d.dice,
            report.source_dice - d.dice
        );
    }
    let _ = writeln!(out, "{:<18} {:>8.4}", "mean_shifted", report.mean_shifted());
    out
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub mode: ChannelMode,
    pub trainable: bool,
    pub result: ExperimentResult,
}

impl AblationRow {
    /// True when the bank left training bit-identical to its initialisation.
    pub fn bank_unchanged(&self) -> bool {
        match (
            self.result.outcome.model.bank(),
            &self.result.outcome.initial_bank,
        ) {
            (Some(after), Some(before)) => after
                .params()
                .iter()
                .zip(before.params())
                .all(|(a, b)| a.to_bits() == b.to_bits()),
            _ => true,
        }
    }
}

/// The four ablation arms as `(trainable, channels)`: a frozen phase-only
/// layer, then trainable phase, asymmetry, and both.
pub const ABLATION_ARMS: [(bool, ChannelMode); 4] = [
    (false, ChannelMode::Phase),
    (true, ChannelMode::Phase),
    (true, ChannelMode::Asym),
    (true, ChannelMode::Both),
];

/// Trains and evaluates each arm on the same data.
pub fn run_ablation(
    spec: &ExperimentSpec,
    arms: &[(bool, ChannelMode)],
) -> Result<Vec<AblationRow>> {
    arms.iter()
        .map(|&(trainable, mode)| {
            let mut s = spec.clone();
            s.train.use_mono2d = true;
            s.train.freeze_layer = !trainable;
            s.train.mode = mode;
            Ok(AblationRow {
                mode,
                trainable,
                result: run_experiment(&s)?,
            })
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow], seed: u64) -> String {
    let mut out =
        String::from("seed,trainable,mode,best_val_dice,test_source,mean_shifted,bank_unchanged");
    let domains: Vec<&str> = rows
        .first()
        .map(|r| {
            r.result
                .report
                .domains
                .iter()
                .map(|d| d.name.as_str())
                .collect()
        })
        .unwrap_or_default();
    for d in &domains {
        let _ = write!(out, ",test_{d}");
    }
    out.push('\n');
    for row in rows {
        let r = &row.result;
        let _ = write!(
            out,
            "{seed},{},{},{:.6},{:.6},{:.6},{}",
            row.trainable,
            row.mode,
            r.outcome.best_val_dice,
            r.report.source_dice,
            r.report.mean_shifted(),
            row.bank_unchanged()
        );
        for d in &r.report.domains {
            let _ = write!(out, ",{:.6}", d.dice);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentSpec {
        let mut spec = ExperimentSpec::toy(1);
        spec.shape = (32, 32);
        spec.train_count = 8;
        spec.test_count = 3;
        spec.train.epochs = 2;
        spec.train.n_scales = 2;
        spec
    }

    #[test]
    fn csv_has_one_row_per_epoch_and_marks_best() {
        let spec = tiny();
        let result = run_experiment(&spec).unwrap();
        let csv = metrics_csv(&result, 1);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let width = lines[0].split(',').count();
        assert_eq!(width, 6 + spec.domains.len());
        assert!(lines[1..]
            .iter()
            .all(|l| l.split(',').count() == width && l.starts_with("1,")));
        let best = result.outcome.best_epoch.unwrap();
        assert!(!lines[best + 1].ends_with(','));
    }

    #[test]
    fn ablation_covers_requested_modes() {
        let spec = tiny();
        let rows = run_ablation(
            &spec,
            &[(false, ChannelMode::Phase), (true, ChannelMode::Phase)],
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].bank_unchanged());
        assert!(!rows[1].bank_unchanged());
        let csv = ablation_csv(&rows, 1);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,false,phase,"));
    }

    #[test]
    fn test_sets_are_paired_with_source() {
        let spec = tiny();
        let src = spec.source_test_set().unwrap();
        for (_, set) in spec.shifted_test_sets().unwrap() {
            for (a, b) in src.iter().zip(&set) {
                assert_eq!(a.mask, b.mask);
            }
        }
    }
}
