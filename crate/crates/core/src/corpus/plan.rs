//! Per-epoch sample order and mix pairing.

use crate::aug::{shuffle_seed, PcgState};

/// Stream selector of the shuffle generator.
pub const PLAN_STREAM: u64 = 0x504C_414E;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochPlan {
    /// Visiting order: a permutation of `0..num_samples`.
    pub order: Vec<u64>,
    /// `partner[id]` is the sample mixed into `id`: the element after `id`
    /// in `order`, wrapping around.
    pub partner: Option<Vec<u64>>,
}

/// Fisher–Yates shuffle driven by PCG seeded with the epoch's shuffle seed.
pub fn epoch_plan(run_seed: u64, epoch: u32, num_samples: usize, mix_enabled: bool) -> EpochPlan {
    let mut rng = PcgState::new(shuffle_seed(run_seed, epoch), PLAN_STREAM);
    let mut order: Vec<u64> = (0..num_samples as u64).collect();
    for i in (1..num_samples).rev() {
        let j = rng.choice(i as u32 + 1).expect("non-empty range") as usize;
        order.swap(i, j);
    }
    let partner = mix_enabled.then(|| {
        let mut p = vec![0u64; num_samples];
        for (pos, &id) in order.iter().enumerate() {
            p[id as usize] = order[(pos + 1) % num_samples];
        }
        p
    });
    EpochPlan { order, partner }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_sample_is_identity() {
        let p = epoch_plan(1, 2, 1, true);
        assert_eq!(p.order, vec![0]);
        assert_eq!(p.partner, Some(vec![0]));
    }

    #[test]
    fn plans_are_pure_and_epoch_dependent() {
        assert_eq!(epoch_plan(5, 0, 100, true), epoch_plan(5, 0, 100, true));
        assert_ne!(epoch_plan(5, 0, 100, false).order, epoch_plan(5, 1, 100, false).order);
    }

    #[test]
    fn large_permutation_is_uncorrelated_with_identity() {
        let n = 10_000;
        let p = epoch_plan(17, 3, n, false);
        let mut seen = vec![false; n];
        p.order.iter().for_each(|&i| seen[i as usize] = true);
        assert!(seen.iter().all(|&s| s));
        // Spearman rank correlation between position and value.
        let nf = n as f64;
        let d2: f64 = p
            .order
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 - v as f64).powi(2))
            .sum();
        let rho = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
        // Null sd is 1/sqrt(n-1) ≈ 0.01.
        assert!(rho.abs() < 0.05, "{rho}");
    }

    proptest! {
        #[test]
        fn plan_is_a_bijection(n in 1usize..600, seed in any::<u64>(), epoch in any::<u32>()) {
            let p = epoch_plan(seed, epoch, n, true);
            let mut sorted = p.order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n as u64).collect::<Vec<_>>());
            let partner = p.partner.unwrap();
            for (pos, &id) in p.order.iter().enumerate() {
                prop_assert_eq!(partner[id as usize], p.order[(pos + 1) % n]);
            }
        }
    }
}
