use kc_core::cumulant_algebra::{correlations_from_cumulants, cumulants_from_correlations, top_cumulant, top_cumulant_recursive, Family};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;

fn rational(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_round_trip(order in 1usize..=7, nums in prop::collection::vec(-40i64..40, 128), dens in prop::collection::vec(1i64..9, 128)) {
        let g = Family::general(order, |m| rational(nums[m as usize], dens[m as usize])).unwrap();
        let k = cumulants_from_correlations(&g).unwrap();
        let back = correlations_from_cumulants(&k).unwrap();
        prop_assert_eq!(back, g.clone());
        let top = top_cumulant(order, |m| g.get(m).unwrap()).unwrap();
        prop_assert_eq!(top.clone(), k.top().unwrap());
        prop_assert_eq!(top, top_cumulant_recursive(order, |m| g.get(m).unwrap()).unwrap());
    }

    #[test]
    fn independent_blocks_have_vanishing_joint_cumulants(order in 2usize..=8, split in 1u32..255, vals in prop::collection::vec(-9i64..10, 256)) {
        let full = (1u32 << order) - 1;
        let a = split & full;
        prop_assume!(a != 0 && a != full);
        // Product of two families living on complementary index sets.
        let part = |m: u32| if m == 0 { rational(1, 1) } else { rational(vals[m as usize], 3) };
        let g = Family::general(order, |m| part(m & a) * part(m & !a & full)).unwrap();
        let k = cumulants_from_correlations(&g).unwrap();
        for m in 1..=full {
            if m & a != 0 && m & !a != 0 {
                prop_assert_eq!(k.get(m).unwrap(), rational(0, 1));
            }
        }
    }
}
