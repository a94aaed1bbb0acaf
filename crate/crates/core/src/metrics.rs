//! Clustering quality (ACC, NMI, ARI) and adversarial equilibrium scores.

use std::collections::{BTreeMap, BTreeSet};

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::real::sigmoid;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelPair {
    y_true: Vec<usize>,
    y_pred: Vec<usize>,
}

impl LabelPair {
    pub fn new(y_true: Vec<usize>, y_pred: Vec<usize>) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::Shape(format!(
                "label vectors differ in length: {} vs {}",
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.is_empty() {
            return Err(Error::Shape("label vectors are empty".into()));
        }
        Ok(Self { y_true, y_pred })
    }

    pub fn len(&self) -> usize {
        self.y_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_true.is_empty()
    }

    pub fn y_true(&self) -> &[usize] {
        &self.y_true
    }

    pub fn y_pred(&self) -> &[usize] {
        &self.y_pred
    }

    pub fn swapped(&self) -> Self {
        Self {
            y_true: self.y_pred.clone(),
            y_pred: self.y_true.clone(),
        }
    }

    /// Dense contingency table over the labels that actually occur:
    /// rows are true classes, columns predicted clusters.
    fn contingency(&self) -> Vec<Vec<u64>> {
        let rows = compact(&self.y_true);
        let cols = compact(&self.y_pred);
        let mut t = vec![vec![0u64; cols.len()]; rows.len()];
        for (a, b) in self.y_true.iter().zip(&self.y_pred) {
            t[rows[a]][cols[b]] += 1;
        }
        t
    }
}

fn compact(labels: &[usize]) -> BTreeMap<usize, usize> {
    let distinct: BTreeSet<usize> = labels.iter().copied().collect();
    distinct.into_iter().enumerate().map(|(i, l)| (l, i)).collect()
}

/// Best one-to-one matching of clusters to classes, exact via Kuhn-Munkres.
pub fn clustering_accuracy(lp: &LabelPair) -> f64 {
    let t = lp.contingency();
    let side = t.len().max(t[0].len());
    let mut w = Matrix::new(side, side, 0i64);
    for (i, row) in t.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            w[(i, j)] = c as i64;
        }
    }
    let (total, _) = kuhn_munkres(&w);
    total as f64 / lp.len() as f64
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// How mutual information is normalized by the two partition entropies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNormalization {
    Geometric,
    Arithmetic,
}

/// Mutual information normalized by the geometric mean of the entropies.
pub fn nmi(lp: &LabelPair) -> f64 {
    nmi_with(lp, NmiNormalization::Geometric)
}

pub fn nmi_with(lp: &LabelPair, norm: NmiNormalization) -> f64 {
    let t = lp.contingency();
    let n = lp.len() as f64;
    let a: Vec<u64> = t.iter().map(|r| r.iter().sum()).collect();
    let b: Vec<u64> = (0..t[0].len()).map(|j| t.iter().map(|r| r[j]).sum()).collect();
    let (ha, hb) = (entropy(a.iter().copied(), n), entropy(b.iter().copied(), n));
    if a.len() == 1 && b.len() == 1 {
        return 1.0;
    }
    if ha == 0.0 || hb == 0.0 {
        return 0.0;
    }
    let mut mi = 0.0;
    for (i, row) in t.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi += c / n * (c * n / (a[i] as f64 * b[j] as f64)).ln();
            }
        }
    }
    let denom = match norm {
        NmiNormalization::Geometric => (ha * hb).sqrt(),
        NmiNormalization::Arithmetic => 0.5 * (ha + hb),
    };
    (mi / denom).clamp(0.0, 1.0)
}

fn choose2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table.
pub fn ari(lp: &LabelPair) -> Result<f64> {
    if lp.len() < 2 {
        return Err(Error::Shape("ARI needs at least two samples".into()));
    }
    let t = lp.contingency();
    let a: Vec<u64> = t.iter().map(|r| r.iter().sum()).collect();
    let b: Vec<u64> = (0..t[0].len()).map(|j| t.iter().map(|r| r[j]).sum()).collect();
    let index: f64 = t.iter().flatten().map(|&c| choose2(c)).sum();
    let sa: f64 = a.iter().map(|&c| choose2(c)).sum();
    let sb: f64 = b.iter().map(|&c| choose2(c)).sum();
    let expected = sa * sb / choose2(lp.len() as u64);
    let max = 0.5 * (sa + sb);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Mean probability that the discriminator labels real and fake inputs
/// correctly.
pub fn discriminator_score(real_logits: &[f64], fake_logits: &[f64]) -> Result<f64> {
    if real_logits.len() != fake_logits.len() || real_logits.is_empty() {
        return Err(Error::Shape(format!(
            "score needs equal nonempty logit vectors, got {} and {}",
            real_logits.len(),
            fake_logits.len()
        )));
    }
    let s: f64 = real_logits
        .iter()
        .zip(fake_logits)
        .map(|(&r, &f)| sigmoid(r) + (1.0 - sigmoid(f)))
        .sum();
    Ok(s / (2 * real_logits.len()) as f64)
}

/// Mean probability that reconstructions pass as real.
pub fn generator_score(fake_logits: &[f64]) -> Result<f64> {
    if fake_logits.is_empty() {
        return Err(Error::Shape("generator score needs at least one logit".into()));
    }
    Ok(fake_logits.iter().map(|&f| sigmoid(f)).sum::<f64>() / fake_logits.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub n: usize,
    pub k_true: usize,
    pub k_pred: usize,
    pub nmi_normalization: NmiNormalization,
    pub nmi_arithmetic: f64,
}

impl MetricReport {
    pub fn compute(lp: &LabelPair) -> Result<Self> {
        let t = lp.contingency();
        Ok(Self {
            acc: clustering_accuracy(lp),
            nmi: nmi(lp),
            ari: ari(lp)?,
            n: lp.len(),
            k_true: t.len(),
            k_pred: t[0].len(),
            nmi_normalization: NmiNormalization::Geometric,
            nmi_arithmetic: nmi_with(lp, NmiNormalization::Arithmetic),
        })
    }

    /// JSON with every real printed to six decimals.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"acc\": {:.6}, \"nmi\": {:.6}, \"ari\": {:.6}, \"n\": {}, \"k_true\": {}, \"k_pred\": {}, \"nmi_normalization\": {}, \"nmi_arithmetic\": {:.6}}}",
            self.acc,
            self.nmi,
            self.ari,
            self.n,
            self.k_true,
            self.k_pred,
            serde_json::to_string(&self.nmi_normalization).expect("enum serializes"),
            self.nmi_arithmetic
        )
    }
}
