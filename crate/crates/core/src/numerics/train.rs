use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::{self, tag};

/// Minibatch ADAM schedule shared by the trainable models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

/// Per-epoch mean KL on the training and validation sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_kl: Vec<f64>,
    pub val_kl: Vec<f64>,
}

impl TrainHistory {
    /// CSV with header `epoch,train_kl,val_kl`, epochs counted from 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_kl,val_kl\n");
        for (i, t) in self.train_kl.iter().enumerate() {
            let v = self.val_kl.get(i).map_or(String::new(), |v| format!("{v:.9}"));
            s.push_str(&format!("{},{t:.9},{v}\n", i + 1));
        }
        s
    }
}

/// Sample indices of every minibatch of `epoch`, from a seeded shuffle.
/// The last batch may be short.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, epoch as u64]));
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_partition_the_dataset() {
        let b = epoch_batches(10, 4, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), [4, 4, 2]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(b, epoch_batches(10, 4, 1, 0));
        assert_ne!(b, epoch_batches(10, 4, 1, 1));
    }
}
