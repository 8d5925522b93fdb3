//! Certified-accuracy curves and the summary numbers reported per run.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::certificate::Certificate;
use crate::partitioning::Strategy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Threat {
    /// Insertions and deletions, measured by `|T ⊖ U|`.
    SymmetricDifference,
    LabelFlip,
}

impl From<Strategy> for Threat {
    fn from(s: Strategy) -> Self {
        if s.is_semi_supervised() {
            Threat::LabelFlip
        } else {
            Threat::SymmetricDifference
        }
    }
}

/// One line of the certificate JSON-lines output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub index: usize,
    pub true_label: u32,
    pub predicted: u32,
    pub counts: Vec<u32>,
    pub rho_bar: u32,
}

impl CertificateRecord {
    pub fn new(index: usize, true_label: u32, cert: &Certificate) -> Self {
        CertificateRecord {
            index,
            true_label,
            predicted: cert.predicted,
            counts: cert.counts.clone(),
            rho_bar: cert.rho_bar,
        }
    }

    pub fn is_correct(&self) -> bool {
        self.predicted == self.true_label
    }
}

pub fn to_json_lines(records: &[CertificateRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn from_json_lines(text: &str) -> crate::Result<Vec<CertificateRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rho: u32,
    pub certified_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertifiedCurve {
    pub threat: Threat,
    pub points: Vec<CurvePoint>,
}

impl CertifiedCurve {
    /// Fraction of records that are correct and certified to at least `rho`,
    /// for every `rho` in `0..=rho_max`.
    pub fn from_records(records: &[CertificateRecord], rho_max: u32, threat: Threat) -> Self {
        let n = records.len().max(1) as f64;
        // hist[r] = correct records whose radius is exactly r (clamped).
        let mut hist = vec![0usize; rho_max as usize + 1];
        for r in records.iter().filter(|r| r.is_correct()) {
            hist[r.rho_bar.min(rho_max) as usize] += 1;
        }
        let mut remaining: usize = hist.iter().sum();
        let mut points = Vec::with_capacity(hist.len());
        for (rho, &h) in hist.iter().enumerate() {
            points.push(CurvePoint {
                rho: rho as u32,
                certified_accuracy: remaining as f64 / n,
            });
            remaining -= h;
        }
        CertifiedCurve { threat, points }
    }

    pub fn clean_accuracy(&self) -> f64 {
        self.points.first().map_or(0.0, |p| p.certified_accuracy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho,certified_accuracy\n");
        for p in &self.points {
            writeln!(out, "{},{}", p.rho, p.certified_accuracy).unwrap();
        }
        out
    }
}

/// Largest `rho` whose certified accuracy is at least one half.
pub fn median_certified_robustness(curve: &CertifiedCurve) -> Option<u32> {
    curve
        .points
        .iter()
        .filter(|p| p.certified_accuracy >= 0.5)
        .map(|p| p.rho)
        .max()
}

/// Serializes as an integer, or the string `"N/A"` when undefined.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MedianRobustness(pub Option<u32>);

impl Serialize for MedianRobustness {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_u32(v),
            None => s.serialize_str("N/A"),
        }
    }
}

impl<'de> Deserialize<'de> for MedianRobustness {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => n
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .map(|v| MedianRobustness(Some(v)))
                .ok_or_else(|| serde::de::Error::custom("median robustness out of range")),
            serde_json::Value::String(s) if s == "N/A" => Ok(MedianRobustness(None)),
            other => Err(serde::de::Error::custom(format!("unexpected value {other}"))),
        }
    }
}

/// Columns matching the usual results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub clean_accuracy: f64,
    pub median_certified_robustness: MedianRobustness,
    /// Mean over all k base models of their accuracy on the full test set.
    pub base_classifier_accuracy: f64,
}
