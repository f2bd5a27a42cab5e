use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetBundle;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Bucket sizes by largest remainder, with every nonzero ratio getting at
/// least one trajectory.
fn bucket_sizes(m: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|&r| !(r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be >= 0 and sum to 1")));
    }
    let nonzero = ratios.iter().filter(|&&r| r > 0.0).count();
    if m < nonzero {
        return Err(Error::invalid(format!("{m} trajectories cannot fill {nonzero} nonempty splits")));
    }
    let exact = ratios.map(|r| r * m as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = m - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    for i in 0..3 {
        if ratios[i] > 0.0 && sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| sizes[j]).unwrap();
            sizes[donor] -= 1;
            sizes[i] = 1;
        }
    }
    Ok(sizes)
}

/// Trajectory-level random partition into train/val/test.
pub fn split_dataset(bundle: &DatasetBundle, ratios: [f64; 3], seed: u64) -> Result<DatasetBundle> {
    let m = bundle.len();
    let sizes = bucket_sizes(m, ratios)?;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Train; m];
    for (rank, &idx) in order.iter().enumerate() {
        splits[idx] = if rank < sizes[0] {
            Split::Train
        } else if rank < sizes[0] + sizes[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(DatasetBundle { splits, ..bundle.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_for_paper_ratio_and_edges() {
        assert_eq!(bucket_sizes(1000, [0.8, 0.1, 0.1]).unwrap(), [800, 100, 100]);
        assert_eq!(bucket_sizes(320, [0.8, 0.1, 0.1]).unwrap(), [256, 32, 32]);
        assert_eq!(bucket_sizes(7, [1.0, 0.0, 0.0]).unwrap(), [7, 0, 0]);
        assert_eq!(bucket_sizes(3, [0.8, 0.1, 0.1]).unwrap(), [1, 1, 1]);
        assert!(bucket_sizes(2, [0.8, 0.1, 0.1]).is_err());
        assert!(bucket_sizes(10, [0.8, 0.1, 0.2]).is_err());
    }
}
