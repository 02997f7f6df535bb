use rand::Rng;

use super::{stage_counts, EpochRecord, Stage};
use crate::error::{Error, Result};

/// Indices into `stages` forming a class-balanced multiset.
///
/// Every index appears at least once (originals first, in input order),
/// followed by duplicates: each class with `n` members and majority count
/// `m` gets `m / n - 1` full extra copies plus `m % n` members drawn
/// uniformly with replacement.
pub fn balanced_indices<R: Rng + ?Sized>(stages: &[Stage], rng: &mut R) -> Result<Vec<usize>> {
    let counts = stage_counts(stages.iter().copied());
    let missing: Vec<&str> = Stage::ALL
        .iter()
        .filter(|s| counts[s.index()] == 0)
        .map(|s| s.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "cannot oversample: no epochs of stage {}",
            missing.join(", ")
        )));
    }
    let target = *counts.iter().max().unwrap_or(&0);
    let mut out: Vec<usize> = (0..stages.len()).collect();
    out.reserve(target * Stage::COUNT - stages.len());
    for stage in Stage::ALL {
        let members: Vec<usize> = (0..stages.len()).filter(|&i| stages[i] == stage).collect();
        let n = members.len();
        for _ in 1..target / n {
            out.extend_from_slice(&members);
        }
        for _ in 0..target % n {
            out.push(members[rng.gen_range(0..n)]);
        }
    }
    Ok(out)
}

/// Duplicates minority-stage epochs until every stage matches the majority.
pub fn oversample<R: Rng + ?Sized>(epochs: &[EpochRecord], rng: &mut R) -> Result<Vec<EpochRecord>> {
    let stages: Vec<Stage> = epochs.iter().map(|e| e.stage).collect();
    Ok(balanced_indices(&stages, rng)?
        .into_iter()
        .map(|i| epochs[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use Stage::*;

    #[test]
    fn worked_example() {
        let stages = [W, W, N1, N2, N2, N2, N2, N3, N3, N3, N3, Rem, Rem, Rem, Rem];
        let idx = balanced_indices(&stages, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(idx.len(), 20);
        let counts = stage_counts(idx.iter().map(|&i| stages[i]));
        assert_eq!(counts, [4; 5]);
        assert_eq!(idx.iter().filter(|&&i| i == 2).count(), 4);
    }

    #[test]
    fn balanced_input_is_permutation() {
        let stages = [Rem, W, N3, N1, N2];
        let mut idx = balanced_indices(&stages, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn missing_class_is_named() {
        let err = balanced_indices(&[W, N2, N3, Rem], &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap_err()
            .to_string();
        assert!(err.contains("N1"), "{err}");
    }
}
