use serde::{Deserialize, Serialize};

use crate::scenegraph::RiskLabel;

/// Counts indexed `[true class][predicted class]`, safe = 0, risky = 1.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[usize; 2]; 2]);

impl ConfusionMatrix {
    pub fn add(&mut self, truth: RiskLabel, predicted: RiskLabel) {
        self.0[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        self.0[0][0] + self.0[1][1]
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

/// Area under the ROC curve via the Mann-Whitney rank statistic, with tied
/// scores sharing their average rank. `None` when a class is empty.
pub fn auc_rank(risky: &[f64], safe: &[f64]) -> Option<f64> {
    let (nr, ns) = (risky.len(), safe.len());
    if nr == 0 || ns == 0 {
        return None;
    }
    let mut all: Vec<(f64, bool)> = risky
        .iter()
        .map(|&s| (s, true))
        .chain(safe.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let j = i + all[i..].iter().take_while(|x| x.0 == all[i].0).count();
        // Ranks i+1..=j share their mean.
        let avg = (i + 1 + j) as f64 / 2.0;
        rank_sum += avg * all[i..j].iter().filter(|x| x.1).count() as f64;
        i = j;
    }
    Some((rank_sum - (nr * (nr + 1)) as f64 / 2.0) / (nr * ns) as f64)
}

/// Pairwise definition of the same quantity: wins plus half the ties over
/// every risky×safe pair.
pub fn auc_pairwise(risky: &[f64], safe: &[f64]) -> Option<f64> {
    if risky.is_empty() || safe.is_empty() {
        return None;
    }
    let mut twice = 0usize;
    for &r in risky {
        for &s in safe {
            twice += match r.partial_cmp(&s) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Some(twice as f64 / 2.0 / (risky.len() * safe.len()) as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}
