use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One cross-validation split, as indices into the subject list.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Subject-level k-fold split: subjects are dealt into `k` contiguous test
/// groups whose sizes differ by at most one (`n / k` each, the first
/// `n % k` groups get one extra).
pub fn split_folds(n_subjects: usize, k: usize) -> Result<Vec<Fold>> {
    if k == 0 {
        return Err(Error::invalid("split folds", "k must be positive"));
    }
    if k > n_subjects {
        return Err(Error::Data(format!(
            "cannot make {k} folds from {n_subjects} subjects"
        )));
    }
    let (base, extra) = (n_subjects / k, n_subjects % k);
    let mut start = 0;
    Ok((0..k)
        .map(|index| {
            let size = base + usize::from(index < extra);
            let test: Vec<usize> = (start..start + size).collect();
            start += size;
            let train = (0..n_subjects).filter(|i| !test.contains(i)).collect();
            Fold { index, train, test }
        })
        .collect())
}

/// Like [`split_folds`], but recordings that share a group label (e.g. two
/// nights of one person) always land on the same side of every split.
/// Groups are dealt in order of first appearance; indices refer to
/// `groups`.
pub fn split_grouped_folds(groups: &[String], k: usize) -> Result<Vec<Fold>> {
    let mut unique: Vec<&str> = Vec::new();
    for g in groups {
        if !unique.contains(&g.as_str()) {
            unique.push(g);
        }
    }
    let expand = |members: &[usize]| -> Vec<usize> {
        (0..groups.len())
            .filter(|&r| members.iter().any(|&m| unique[m] == groups[r]))
            .collect()
    };
    Ok(split_folds(unique.len(), k)?
        .into_iter()
        .map(|f| Fold {
            index: f.index,
            train: expand(&f.train),
            test: expand(&f.test),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouped_nights_stay_together() {
        let g: Vec<String> = ["a", "a", "b", "c", "c"].iter().map(|s| s.to_string()).collect();
        let folds = split_grouped_folds(&g, 3).unwrap();
        assert_eq!(folds[0].test, vec![0, 1]);
        assert_eq!(folds[1].test, vec![2]);
        assert_eq!(folds[2].test, vec![3, 4]);
        assert_eq!(folds[2].train, vec![0, 1, 2]);
        assert!(split_grouped_folds(&g, 4).is_err());
    }

    #[test]
    fn leave_one_out() {
        let folds = split_folds(20, 20).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 19));
    }

    #[test]
    fn two_per_fold_and_exhaustive() {
        let folds = split_folds(62, 31).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 2));
        let mut tested: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        tested.sort();
        assert_eq!(tested, (0..62).collect::<Vec<_>>());
        for f in &folds {
            assert!(f.test.iter().all(|t| !f.train.contains(t)));
            assert_eq!(f.train.len() + f.test.len(), 62);
        }
    }

    #[test]
    fn uneven_and_invalid() {
        let sizes: Vec<usize> = split_folds(7, 3).unwrap().iter().map(|f| f.test.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
        assert!(split_folds(3, 4).is_err());
        assert!(split_folds(3, 0).is_err());
    }
}
