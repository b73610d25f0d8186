use atst_core::augment::{
    mask_line, mask_line_with_regions, masking_setting, sample_regions, LineImage, MaskingParams,
    MaskingSetting, LINE_HEIGHT,
};
use atst_core::seed;
use proptest::prelude::*;

#[test]
fn region_count_mean_matches_binomial() {
    let p = masking_setting(MaskingSetting::Base);
    let draws = 10_000;
    let total: usize = (0..draws)
        .map(|i| sample_regions(800, &p, &mut seed::rng(seed::index_seed(5, i))).len())
        .sum();
    let mean = total as f64 / draws as f64;
    assert!((mean - 4.0).abs() / 4.0 <= 0.05, "mean {mean}");
}

#[test]
fn band_widths_and_positions_are_uniform() {
    let p = MaskingParams::new(0.01, 5, 40).unwrap();
    let mut widths = Vec::new();
    let mut lefts = Vec::new();
    for i in 0..3000 {
        for (l, w) in sample_regions(800, &p, &mut seed::rng(i)) {
            assert!((5..=40).contains(&w) && l < 800);
            widths.push(w as f64);
            lefts.push(l as f64);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!((mean(&widths) - 22.5).abs() < 0.5);
    assert!((mean(&lefts) - 399.5).abs() < 10.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_probability_is_identity(width in 1usize..400, seed in any::<u64>(), fill in any::<u8>()) {
        let img = LineImage::filled(LINE_HEIGHT, width, fill);
        let p = MaskingParams::new(0.0, 5, 40).unwrap();
        prop_assert_eq!(mask_line(&img, &p, seed), img);
    }

    #[test]
    fn only_bands_change(width in 1usize..400, seed in any::<u64>()) {
        let img = LineImage::filled(LINE_HEIGHT, width, 7);
        let p = MaskingParams::new(0.05, 1, 30).unwrap();
        let (out, bands) = mask_line_with_regions(&img, &p, seed);
        for col in 0..width {
            if !bands.iter().any(|b| b.contains(&col)) {
                for row in 0..LINE_HEIGHT {
                    prop_assert_eq!(out.get(row, col), 7);
                }
            }
        }
        prop_assert!(bands.iter().all(|b| b.end <= width));
    }
}
