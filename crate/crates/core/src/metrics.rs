//! Confusion-matrix based evaluation with per-class and support-weighted scores.

use serde::{Deserialize, Serialize};

use crate::corpus::SentimentLabel;
use crate::error::{Error, Result};

const K: usize = SentimentLabel::COUNT;

/// Round half up at `decimals` places, for display only.
///
/// A 1e-9 nudge absorbs binary representation error so that values such as
/// `0.665` display as `0.67`.
pub fn round_half_up(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    ((value * scale) + 0.5 + 1e-9).floor() / scale
}

/// `value` at two decimals, round-half-up.
pub fn fmt2(value: f64) -> String {
    format!("{:.2}", round_half_up(value, 2))
}

/// Rows are true labels, columns predicted labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn from_pairs(y_true: &[SentimentLabel], y_pred: &[SentimentLabel]) -> Self {
        let mut counts = [[0u64; K]; K];
        for (t, p) in y_true.iter().zip(y_pred) {
            counts[t.id()][p.id()] += 1;
        }
        ConfusionMatrix { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.counts[c][c]
    }

    /// Row sum: number of samples whose true label is `c`.
    pub fn support(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Column sum: number of samples predicted as `c`.
    pub fn predicted(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: [ClassScores; K],
    pub weighted: WeightedScores,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn evaluate(y_true: &[SentimentLabel], y_pred: &[SentimentLabel]) -> Result<EvalReport> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidInput(format!(
            "label vectors differ in length ({} vs {})",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::InvalidInput(
            "cannot evaluate zero predictions".into(),
        ));
    }
    Ok(report_from_confusion(ConfusionMatrix::from_pairs(
        y_true, y_pred,
    )))
}

pub fn report_from_confusion(confusion: ConfusionMatrix) -> EvalReport {
    let n = confusion.total();
    let per_class: [ClassScores; K] = std::array::from_fn(|c| {
        let tp = confusion.true_positives(c);
        let precision = ratio(tp, confusion.predicted(c));
        let recall = ratio(tp, confusion.support(c));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores {
            precision,
            recall,
            f1,
            support: confusion.support(c),
        }
    });

    let accuracy = ratio((0..K).map(|c| confusion.true_positives(c)).sum(), n);
    let weight = |c: usize| ratio(per_class[c].support, n);
    let weighted = WeightedScores {
        precision: (0..K).map(|c| weight(c) * per_class[c].precision).sum(),
        // support-weighted recall reduces to sum(TP) / N; using the reduced form
        // makes it equal to accuracy bit for bit
        recall: accuracy,
        f1: (0..K).map(|c| weight(c) * per_class[c].f1).sum(),
    };

    EvalReport {
        accuracy,
        per_class,
        weighted,
        confusion,
    }
}

/// Label name and F1 per class at two decimals, ordered by label id.
pub fn per_class_f1_report(report: &EvalReport) -> String {
    let mut s = String::from("Class\tF1\n");
    for label in SentimentLabel::ALL {
        s.push_str(&format!(
            "{}\t{}\n",
            label.name(),
            fmt2(report.per_class[label.id()].f1)
        ));
    }
    s
}

/// Full single-model table: per-class rows, weighted row, accuracy and the confusion matrix.
pub fn format_report(report: &EvalReport) -> String {
    let mut s = String::from("Class\tPrecision\tRecall\tF1\tSupport\n");
    for label in SentimentLabel::ALL {
        let c = &report.per_class[label.id()];
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            label.name(),
            fmt2(c.precision),
            fmt2(c.recall),
            fmt2(c.f1),
            c.support
        ));
    }
    s.push_str(&format!(
        "Weighted\t{}\t{}\t{}\t{}\n",
        fmt2(report.weighted.precision),
        fmt2(report.weighted.recall),
        fmt2(report.weighted.f1),
        report.confusion.total()
    ));
    s.push_str(&format!("Accuracy\t{}\n", fmt2(report.accuracy)));
    s.push_str("Confusion (rows true, cols predicted)\tNegative\tNeutral\tPositive\n");
    for label in SentimentLabel::ALL {
        let row = &report.confusion.counts[label.id()];
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            label.name(),
            row[0],
            row[1],
            row[2]
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Tab-separated table: model, accuracy, weighted precision, recall, F1.
    pub table: String,
    /// `model,weighted_f1` rows for plotting.
    pub csv: String,
}

pub fn compare_models(reports: &[(String, EvalReport)]) -> Result<Comparison> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to compare".into()));
    }
    let mut table = String::from(
        "Model\tAccuracy\tPrecision (Weighted)\tRecall (Weighted)\tF1-Score (Weighted)\n",
    );
    let mut csv = String::from("model,weighted_f1\n");
    for (name, r) in reports {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            name,
            fmt2(r.accuracy),
            fmt2(r.weighted.precision),
            fmt2(r.weighted.recall),
            fmt2(r.weighted.f1)
        ));
        csv.push_str(&format!("{},{}\n", name, r.weighted.f1));
    }
    Ok(Comparison { table, csv })
}
