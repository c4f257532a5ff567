use std::collections::BTreeMap;
use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::stats::{benjamini_hochberg, paired_t_test, TestReport};

/// Final accuracies keyed by approach, then by the pairing key (subject, seed).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AccuracyTable {
    entries: IndexMap<String, BTreeMap<(u32, u64), f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    approach: String,
    subject: u32,
    seed: u64,
    accuracy: f64,
}

/// One reference-vs-other comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub reference: String,
    pub compared: String,
    pub report: TestReport,
}

impl AccuracyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, approach: &str, subject: u32, seed: u64, accuracy: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::domain("accuracy table", format!("accuracy {accuracy} outside [0, 1]")));
        }
        let cells = self.entries.entry(approach.to_string()).or_default();
        if cells.insert((subject, seed), accuracy).is_some() {
            return Err(Error::Config(format!("duplicate entry for {approach}, subject {subject}, seed {seed}")));
        }
        Ok(())
    }

    pub fn get(&self, approach: &str, subject: u32, seed: u64) -> Option<f64> {
        self.entries.get(approach)?.get(&(subject, seed)).copied()
    }

    pub fn approaches(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn merge(&mut self, other: &AccuracyTable) -> Result<()> {
        for (approach, cells) in &other.entries {
            for (&(subject, seed), &acc) in cells {
                self.insert(approach, subject, seed, acc)?;
            }
        }
        Ok(())
    }

    /// Matched samples of `a` and `b` ordered by (subject, seed). Both grids
    /// must cover the same keys.
    pub fn paired(&self, a: &str, b: &str) -> Result<(Vec<f64>, Vec<f64>)> {
        let get = |name: &str| {
            self.entries.get(name).ok_or_else(|| Error::Config(format!("no accuracies for approach `{name}`")))
        };
        let (ca, cb) = (get(a)?, get(b)?);
        if ca.len() != cb.len() || ca.keys().any(|k| !cb.contains_key(k)) {
            return Err(Error::Config(format!("`{a}` and `{b}` were run on different (subject, seed) grids")));
        }
        Ok(ca.iter().map(|(k, &v)| (v, cb[k])).unzip())
    }

    /// Mean over seeds for every subject.
    pub fn per_subject_mean(&self, approach: &str) -> BTreeMap<u32, f64> {
        let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
        if let Some(cells) = self.entries.get(approach) {
            for (&(subject, _), &acc) in cells {
                let e = sums.entry(subject).or_default();
                e.0 += acc;
                e.1 += 1;
            }
        }
        sums.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect()
    }

    /// Per-subject means averaged over subjects.
    pub fn mean(&self, approach: &str) -> Option<f64> {
        let per = self.per_subject_mean(approach);
        (!per.is_empty()).then(|| per.values().sum::<f64>() / per.len() as f64)
    }

    /// Paired tests of `reference` against each of `others`, with
    /// Benjamini–Hochberg adjustment across the comparisons.
    pub fn compare(&self, reference: &str, others: &[&str]) -> Result<Vec<Comparison>> {
        let mut out = Vec::with_capacity(others.len());
        for &other in others {
            let (a, b) = self.paired(reference, other)?;
            out.push(Comparison {
                reference: reference.to_string(),
                compared: other.to_string(),
                report: paired_t_test(&a, &b)?,
            });
        }
        let raw: Vec<f64> = out.iter().map(|c| c.report.p_value).collect();
        for (c, p) in out.iter_mut().zip(benjamini_hochberg(&raw)?) {
            c.report.p_adjusted = Some(p);
        }
        Ok(out)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(w);
        for (approach, cells) in &self.entries {
            for (&(subject, seed), &accuracy) in cells {
                writer.serialize(Row { approach: approach.clone(), subject, seed, accuracy })?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut table = AccuracyTable::new();
        for row in csv::Reader::from_reader(r).deserialize() {
            let row: Row = row?;
            table.insert(&row.approach, row.subject, row.seed, row.accuracy)?;
        }
        Ok(table)
    }
}

/// Writes comparisons in the column order of the paired-test tables.
pub fn write_comparisons_csv<W: Write>(model: &str, comparisons: &[Comparison], w: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record([
        "model",
        "reference",
        "compared",
        "mean_reference",
        "se_reference",
        "mean_compared",
        "se_compared",
        "cohen_d",
        "t_value",
        "df",
        "p_value",
        "p_adjusted",
    ])?;
    for c in comparisons {
        let r = &c.report;
        writer.write_record([
            model.to_string(),
            c.reference.clone(),
            c.compared.clone(),
            format!("{:?}", r.mean_a),
            format!("{:?}", r.se_a),
            format!("{:?}", r.mean_b),
            format!("{:?}", r.se_b),
            format!("{:?}", r.cohen_d),
            format!("{:?}", r.t_value),
            r.df.to_string(),
            format!("{:?}", r.p_value),
            r.p_adjusted.map(|p| format!("{p:?}")).unwrap_or_default(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
