use serde::{Deserialize, Serialize};

/// Plurality winner; ties go to the smaller class id.
pub fn aggregate(counts: &[u32]) -> u32 {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best as u32
}

/// Predicted class, the vote counts behind it, and the certified radius.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub predicted: u32,
    pub counts: Vec<u32>,
    pub rho_bar: u32,
}

impl Certificate {
    pub fn k(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Certified radius from vote counts:
/// `floor((n_c - max_{c' != c}(n_c' + [c' < c])) / 2)` with `c` the aggregate.
///
/// Every class in `counts` takes part in the challenger max, including
/// classes with no votes. With a single class the max is taken as 0.
pub fn certify(counts: &[u32]) -> Certificate {
    let c = aggregate(counts) as usize;
    let challenger = counts
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != c)
        .map(|(i, &n)| i64::from(n) + i64::from(i < c))
        .max()
        .unwrap_or(0);
    let gap = i64::from(counts.get(c).copied().unwrap_or(0)) - challenger;
    Certificate {
        predicted: c as u32,
        counts: counts.to_vec(),
        rho_bar: gap.div_euclid(2).max(0) as u32,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn aggregate_ties_to_smaller_index() {
        assert_eq!(aggregate(&[3, 3, 1]), 0);
        assert_eq!(aggregate(&[0, 4, 4]), 1);
        assert_eq!(aggregate(&[0, 0, 7]), 2);
    }

    #[test]
    fn certify_examples() {
        let c = certify(&[7, 3, 0]);
        assert_eq!((c.predicted, c.rho_bar), (0, 2));
        let c = certify(&[4, 5]);
        assert_eq!((c.predicted, c.rho_bar), (1, 0));
        let c = certify(&[10]);
        assert_eq!((c.predicted, c.rho_bar), (0, 5));
    }

    #[test]
    fn unvoted_lower_classes_still_challenge() {
        // Class 2 wins unanimously, but class 0 gets the tie-break edge.
        let c = certify(&[0, 0, 6]);
        assert_eq!((c.predicted, c.rho_bar), (2, 2));
        let c = certify(&[6, 0, 0]);
        assert_eq!((c.predicted, c.rho_bar), (0, 3));
    }

    proptest! {
        #[test]
        fn radius_bounds(counts in prop::collection::vec(0u32..20, 1..6)) {
            let k: u32 = counts.iter().sum();
            let cert = certify(&counts);
            prop_assert_eq!(cert.k(), k);
            prop_assert!(cert.rho_bar <= k / 2);
            prop_assert_eq!(cert.predicted, aggregate(&counts));
        }

        #[test]
        fn swapping_two_classes_matters_only_on_ties(a in 0u32..30, b in 0u32..30) {
            let fwd = aggregate(&[a, b]);
            let rev = aggregate(&[b, a]);
            if a == b {
                prop_assert_eq!(fwd, 0);
                prop_assert_eq!(rev, 0);
            } else {
                prop_assert_eq!(fwd, 1 - rev);
            }
        }
    }
}
