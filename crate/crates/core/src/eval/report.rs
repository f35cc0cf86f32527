use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{confusion_accuracy, Confusion};
use crate::error::{Error, Result};
use crate::data::MultiViewDataset;
use crate::train::{score, EvalRecord, Trainer};

/// Held-out results of one predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Fusion mode or baseline name.
    pub method: String,
    pub fingerprint: String,
    pub seed: u64,
    pub step: usize,
    pub classes: usize,
    /// Number of evaluated samples.
    pub samples: u64,
    pub view_accuracy: Vec<f64>,
    pub fused_accuracy: f64,
    pub view_confusion: Vec<Confusion>,
    pub fused_confusion: Confusion,
}

impl EvalReport {
    /// Extracts `method` from a training-log record.
    pub fn from_record(rec: &EvalRecord, method: &str, fingerprint: &str, seed: u64) -> Result<Self> {
        let fused_confusion = rec
            .fused_confusion
            .get(method)
            .ok_or_else(|| Error::InvalidArgument(format!("no `{method}` predictor in this run")))?
            .clone();
        let report = Self {
            method: method.to_string(),
            fingerprint: fingerprint.to_string(),
            seed,
            step: rec.step,
            classes: fused_confusion.len(),
            samples: fused_confusion.iter().flatten().sum(),
            view_accuracy: rec.view_accuracy.clone(),
            fused_accuracy: rec.fused_accuracy[method],
            view_confusion: rec.view_confusion.clone(),
            fused_confusion,
        };
        report.validate()?;
        Ok(report)
    }

    /// Every confusion matrix is `K×K`, totals the sample count and agrees with its accuracy.
    pub fn validate(&self) -> Result<()> {
        let check = |m: &Confusion, acc: f64, what: &str| -> Result<()> {
            if m.len() != self.classes || m.iter().any(|r| r.len() != self.classes) {
                return Err(Error::InvalidConfusion(format!("{what} is not {0}×{0}", self.classes)));
            }
            let total: u64 = m.iter().flatten().sum();
            if total != self.samples {
                return Err(Error::InvalidConfusion(format!("{what} totals {total}, expected {}", self.samples)));
            }
            if confusion_accuracy(m)? != acc {
                return Err(Error::InvalidConfusion(format!("{what} disagrees with its accuracy")));
            }
            Ok(())
        };
        if self.view_accuracy.len() != self.view_confusion.len() {
            return Err(Error::InvalidConfusion("one confusion matrix per view required".into()));
        }
        check(&self.fused_confusion, self.fused_accuracy, "fused confusion")?;
        for (v, (m, &a)) in self.view_confusion.iter().zip(&self.view_accuracy).enumerate() {
            check(m, a, &format!("view {v} confusion"))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))
    }

    /// `field,value` lines, then one block per confusion matrix: a
    /// `confusion,<name>` line followed by K rows of K counts.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("field,value\n");
        let mut field = |k: &str, v: String| {
            out.push_str(k);
            out.push(',');
            out.push_str(&v);
            out.push('\n');
        };
        field("method", self.method.clone());
        field("fingerprint", self.fingerprint.clone());
        field("seed", self.seed.to_string());
        field("step", self.step.to_string());
        field("classes", self.classes.to_string());
        field("samples", self.samples.to_string());
        field("views", self.view_accuracy.len().to_string());
        field("fused_accuracy", format!("{:?}", self.fused_accuracy));
        for (v, a) in self.view_accuracy.iter().enumerate() {
            field(&format!("view{v}_accuracy"), format!("{a:?}"));
        }
        let mut block = |name: &str, m: &Confusion| {
            out.push_str(&format!("confusion,{name}\n"));
            for row in m {
                let cells: Vec<String> = row.iter().map(u64::to_string).collect();
                out.push_str(&cells.join(","));
                out.push('\n');
            }
        };
        block("fused", &self.fused_confusion);
        for (v, m) in self.view_confusion.iter().enumerate() {
            block(&format!("view{v}"), m);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Malformed(format!("csv report: {m}"));
        let mut lines = text.lines();
        if lines.next() != Some("field,value") {
            return Err(bad("missing header".into()));
        }
        let mut fields = std::collections::BTreeMap::new();
        let mut blocks: Vec<(String, Confusion)> = Vec::new();
        let mut classes = None;
        while let Some(line) = lines.next() {
            let (k, v) = line.split_once(',').ok_or_else(|| bad(format!("bad line `{line}`")))?;
            if k == "confusion" {
                let k_classes: usize = classes.ok_or_else(|| bad("confusion before classes".into()))?;
                let mut m = Vec::with_capacity(k_classes);
                for _ in 0..k_classes {
                    let row = lines.next().ok_or_else(|| bad("short confusion block".into()))?;
                    let row = row
                        .split(',')
                        .map(|c| c.parse::<u64>().map_err(|e| bad(e.to_string())))
                        .collect::<Result<Vec<_>>>()?;
                    if row.len() != k_classes {
                        return Err(bad(format!("confusion row of {} cells", row.len())));
                    }
                    m.push(row);
                }
                blocks.push((v.to_string(), m));
            } else {
                if k == "classes" {
                    classes = Some(v.parse().map_err(|_| bad("bad classes".into()))?);
                }
                fields.insert(k.to_string(), v.to_string());
            }
        }
        fn get<T: FromStr>(f: &std::collections::BTreeMap<String, String>, k: &str) -> Result<T> {
            f.get(k)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Malformed(format!("csv report: missing or bad `{k}`")))
        }
        let views: usize = get(&fields, "views")?;
        let take = |name: &str| -> Result<Confusion> {
            blocks
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, m)| m.clone())
                .ok_or_else(|| bad(format!("missing confusion `{name}`")))
        };
        let report = Self {
            method: get(&fields, "method")?,
            fingerprint: get(&fields, "fingerprint")?,
            seed: get(&fields, "seed")?,
            step: get(&fields, "step")?,
            classes: get(&fields, "classes")?,
            samples: get(&fields, "samples")?,
            view_accuracy: (0..views)
                .map(|v| get(&fields, &format!("view{v}_accuracy")))
                .collect::<Result<_>>()?,
            fused_accuracy: get(&fields, "fused_accuracy")?,
            view_confusion: (0..views).map(|v| take(&format!("view{v}"))).collect::<Result<_>>()?,
            fused_confusion: take("fused")?,
        };
        Ok(report)
    }
}

/// Evaluates `method` (a trained head or `average`/`max`; the first head when
/// `None`) on the held-out split that training used: the last
/// `test_fraction` of the raw dataset `ds`.
pub fn evaluate_checkpoint(t: &Trainer, ds: &MultiViewDataset, method: Option<&str>) -> Result<EvalReport> {
    let method = method.unwrap_or_else(|| t.model.heads[0].mode().name());
    let (_, test) = ds.split_test_fraction(t.cfg.test_fraction)?;
    let pred = t.model.predict(&test)?;
    if !pred.fused.contains_key(method) {
        return Err(Error::InvalidArgument(format!(
            "checkpoint has no `{method}` predictor (available: {})",
            pred.fused.keys().cloned().collect::<Vec<_>>().join(", ")
        )));
    }
    let (view_accuracy, view_confusion, fused_accuracy, fused_confusion) =
        score(&pred, &test.labels(), t.model.classes)?;
    let rec = EvalRecord {
        step: t.step,
        phase: String::new(),
        view_loss: Vec::new(),
        fusion_loss: Default::default(),
        view_accuracy,
        fused_accuracy,
        view_confusion,
        fused_confusion,
    };
    EvalReport::from_record(&rec, method, &t.cfg.fingerprint(), t.cfg.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            _ => Err(Error::InvalidArgument(format!("unknown report format `{s}`"))),
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        })
    }
}

pub fn emit_report(report: &EvalReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => report.to_csv(),
    };
    fs::write(path, text)?;
    Ok(())
}
