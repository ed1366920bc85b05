use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::{DialogueRecord, Split};
use crate::error::{Error, Result};

/// Assigns whole dialogues to train/valid/test with the given fractions.
///
/// Dialogues are shuffled with `seed`; the first `round(n·train)` go to
/// train, the next `round(n·valid)` to valid, and the remainder to test.
pub fn split_dataset(records: &mut [DialogueRecord], fractions: [f64; 3], seed: u64) -> Result<()> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * fractions[0]).round() as usize;
    let n_valid = (((n as f64) * fractions[1]).round() as usize).min(n - n_train.min(n));
    for (rank, &i) in order.iter().enumerate() {
        records[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_valid {
            Split::Valid
        } else {
            Split::Test
        };
    }
    Ok(())
}
