use fourier_prg::bits::BitString;
use fourier_prg::cli::{seed_from_hex, seed_to_hex};
use fourier_prg::metrics::{d_ft, d_k, d_tv, IntPmf};
use proptest::prelude::*;

fn pmf() -> impl Strategy<Value = IntPmf> {
    (-20i64..20, prop::collection::vec(0u32..100, 1..24)).prop_filter_map("zero mass", |(lo, w)| {
        let total: u32 = w.iter().sum();
        (total > 0).then(|| IntPmf::new(lo, w.iter().map(|&x| x as f64 / total as f64).collect()).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hex_seed_roundtrip(index in any::<u64>(), len in 1usize..80) {
        let s = BitString::from_index(index as u128 & ((1u128 << len) - 1), len);
        prop_assert_eq!(seed_from_hex(&seed_to_hex(&s), len).unwrap(), s);
    }

    #[test]
    fn distance_ordering(p in pmf(), q in pmf()) {
        let tv = d_tv(&p, &q);
        let k = d_k(&p, &q);
        let ft = d_ft(&p, &q, 0.1).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&tv));
        prop_assert!(k <= tv + 1e-12);
        prop_assert!(ft <= 2.0 * tv + 1e-9);
        prop_assert!((tv - d_tv(&q, &p)).abs() < 1e-12);
        prop_assert!(d_ft(&p, &p, 0.1).unwrap() < 1e-12);
    }
}
