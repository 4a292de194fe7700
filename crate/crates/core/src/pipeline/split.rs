use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenegraph::RiskLabel;

/// Index partition of a dataset into train and test sides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// How many items of each class go to the first side: `round(ratio·N)` in
/// total, shared out by largest remainder, and at least one item of every
/// class on each side.
fn allocate(counts: [usize; 2], ratio: f64) -> [usize; 2] {
    let total: usize = counts.iter().sum();
    let target = (ratio * total as f64).round() as usize;
    let exact = counts.map(|c| ratio * c as f64);
    let mut take = exact.map(|x| x.floor() as usize);
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = target.saturating_sub(take[0] + take[1]);
    for &c in order.iter().cycle().take(4) {
        if left == 0 {
            break;
        }
        if take[c] < counts[c] {
            take[c] += 1;
            left -= 1;
        }
    }
    for c in 0..2 {
        take[c] = take[c].clamp(1, counts[c] - 1);
    }
    take
}

/// Stratified shuffle split. Each class is shuffled independently and cut
/// so both sides keep the class ratio to within one item.
pub fn stratified_split(labels: &[RiskLabel], ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    for (c, items) in by_class.iter().enumerate() {
        if items.len() < 2 {
            return Err(Error::Dataset(format!(
                "class {:?} has {} clip(s); stratified splitting needs at least 2",
                RiskLabel::from_index(c),
                items.len()
            )));
        }
    }
    let take = allocate([by_class[0].len(), by_class[1].len()], ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, items) in by_class.iter_mut().enumerate() {
        items.shuffle(&mut rng);
        train.extend_from_slice(&items[..take[c]]);
        test.extend_from_slice(&items[take[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Balanced class weights `N / (2·N_c)`.
pub fn class_weights(labels: impl IntoIterator<Item = RiskLabel>) -> Result<[f64; 2]> {
    let mut counts = [0usize; 2];
    for l in labels {
        counts[l.index()] += 1;
    }
    let n = (counts[0] + counts[1]) as f64;
    if counts.contains(&0) {
        return Err(Error::Dataset(format!(
            "training data lacks a class (safe {}, risky {})",
            counts[0], counts[1]
        )));
    }
    Ok(counts.map(|c| n / (2.0 * c as f64)))
}
