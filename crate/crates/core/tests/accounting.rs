use proptest::prelude::*;
use sqzgan::analysis::{count_block_params, closed_form_squeeze_kernels};
use sqzgan::synthesis::BlockVariant;

fn divisors(c: usize) -> Vec<usize> {
    (1..=c).filter(|r| c.is_multiple_of(*r)).collect()
}

proptest! {
    #[test]
    fn skip_kernels_ignore_the_ratio(c in 1usize..600, r in 1usize..64) {
        let a = count_block_params(BlockVariant::SkipConnection, c, 1).unwrap();
        let b = count_block_params(BlockVariant::SkipConnection, c, r).unwrap();
        prop_assert_eq!(a.kernel_total, b.kernel_total);
        prop_assert_eq!(a.kernel_total, 18 * c * c);
    }

    #[test]
    fn squeeze_kernels_shrink_with_the_ratio(c in 1usize..600) {
        let mut last = usize::MAX;
        for r in divisors(c) {
            let e = count_block_params(BlockVariant::Squeeze, c, r).unwrap();
            prop_assert_eq!(e.kernel_total, 11 * c * c + 18 * c * c / r);
            prop_assert!(e.kernel_total < last);
            last = e.kernel_total;
        }
    }

    #[test]
    fn closed_form_beats_skip_past_break_even(c in 1usize..600, r in 1usize..64) {
        let closed = closed_form_squeeze_kernels(c, r);
        let skip = (18 * c * c) as f64;
        prop_assert_eq!(closed < skip, r as f64 > 2.25);
    }
}
