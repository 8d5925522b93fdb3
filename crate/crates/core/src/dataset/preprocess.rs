use super::Sample;

/// Global histogram equalization over 256 bins.
///
/// Each intensity `v` maps to `round(255 * (cdf(v) - cdf_min) / (n - cdf_min))`
/// where `n` is the pixel count and `cdf_min` the smallest non-zero CDF value.
/// Rounding is half-up, done in exact integer arithmetic. Images with a single
/// intensity are returned unchanged.
pub fn histogram_equalize(s: &Sample) -> Sample {
    let px = s.features();
    let n = px.len() as u64;
    let mut hist = [0u64; 256];
    for &v in px {
        hist[v as usize] += 1;
    }
    let mut cdf = [0u64; 256];
    let mut acc = 0;
    for (c, h) in cdf.iter_mut().zip(hist) {
        acc += h;
        *c = acc;
    }
    let cdf_min = cdf.iter().copied().find(|&c| c > 0).unwrap_or(0);
    if n == cdf_min {
        return s.clone();
    }
    let denom = n - cdf_min;
    let mut lut = [0u8; 256];
    for (v, slot) in lut.iter_mut().enumerate() {
        if hist[v] == 0 {
            continue;
        }
        let num = 255 * (cdf[v] - cdf_min);
        *slot = ((2 * num + denom) / (2 * denom)) as u8;
    }
    Sample::new(px.iter().map(|&v| lut[v as usize]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_image_is_unchanged() {
        let s = Sample::new(vec![77; 16]);
        assert_eq!(histogram_equalize(&s), s);
    }

    #[test]
    fn two_pixel_extremes() {
        // cdf(0) = 1, cdf(255) = 2, cdf_min = 1, n = 2:
        // 0 -> round(255 * 0 / 1) = 0, 255 -> round(255 * 1 / 1) = 255.
        let s = Sample::new(vec![0, 255]);
        assert_eq!(histogram_equalize(&s).features(), &[0, 255]);
    }

    #[test]
    fn uniform_image_is_near_identity() {
        let s = Sample::new((0..=255u8).collect());
        let out = histogram_equalize(&s);
        for (a, b) in s.features().iter().zip(out.features()) {
            assert!((i32::from(*a) - i32::from(*b)).abs() <= 1);
        }
    }

    #[test]
    fn stretches_narrow_range() {
        // Four pixels at 10, 10, 20, 30: cdf = 2, 3, 4; cdf_min = 2; denom = 2.
        // 10 -> 0, 20 -> round(127.5) = 128, 30 -> 255.
        let s = Sample::new(vec![10, 10, 20, 30]);
        assert_eq!(histogram_equalize(&s).features(), &[0, 0, 128, 255]);
    }

    proptest! {
        #[test]
        fn preserves_dim_and_order(px in prop::collection::vec(any::<u8>(), 1..64)) {
            let s = Sample::new(px.clone());
            let out = histogram_equalize(&s);
            prop_assert_eq!(out.dim(), s.dim());
            // The remap is monotone non-decreasing in the input intensity.
            for i in 0..px.len() {
                for j in 0..px.len() {
                    if px[i] <= px[j] {
                        prop_assert!(out.features()[i] <= out.features()[j]);
                    }
                }
            }
        }
    }
}
