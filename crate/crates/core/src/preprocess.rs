//! Input-frame preparation: flame thresholding, bounding boxes and the
//! "green image" compositing used for stylization.

use crate::error::{Error, Result};
use crate::image::{FlameMask, Image, Rect};

pub const DEFAULT_THRESHOLD: f32 = 30.0;
pub const DEFAULT_DILATE: u32 = 4;

/// Marks a pixel as flame when its brightest channel exceeds `threshold`
/// and blanks every other pixel to black.
pub fn threshold_mask(img: &Image, threshold: f32) -> (FlameMask, Image) {
    let mut mask = FlameMask::new(img.width, img.height);
    let mut out = img.clone();
    let c = img.channels as usize;
    for (i, px) in out.data.chunks_exact_mut(c).enumerate() {
        let peak = px.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if peak > threshold {
            mask.bits[i] = true;
        } else {
            px.fill(0.0);
        }
    }
    (mask, out)
}

/// Tight box around the set pixels of all masks, grown by `dilate` pixels
/// and clipped to the image.
pub fn bounding_box(masks: &[FlameMask], dilate: u32) -> Result<Rect> {
    let first = masks.first().ok_or_else(|| Error::Usage("no masks".into()))?;
    let (w, h) = (first.width, first.height);
    if masks.iter().any(|m| m.width != w || m.height != h) {
        return Err(Error::Usage("masks differ in size".into()));
    }
    let mut bounds: Option<(u32, u32, u32, u32)> = None;
    for m in masks {
        for y in 0..h {
            let row = &m.bits[(y * w) as usize..((y + 1) * w) as usize];
            let Some(first_x) = row.iter().position(|b| *b) else {
                continue;
            };
            let last_x = row.iter().rposition(|b| *b).unwrap();
            let (fx, lx) = (first_x as u32, last_x as u32);
            bounds = Some(match bounds {
                None => (fx, y, lx, y),
                Some((x0, y0, x1, y1)) => (x0.min(fx), y0.min(y), x1.max(lx), y1.max(y)),
            });
        }
    }
    let (x0, y0, x1, y1) = bounds.ok_or(Error::NoFlame)?;
    Ok(Rect {
        x0: x0.saturating_sub(dilate),
        y0: y0.saturating_sub(dilate),
        x1: (x1 + dilate).min(w - 1),
        y1: (y1 + dilate).min(h - 1),
    })
}

/// Writes an object's gray intensity into the green channel of a flame
/// image, keeping the brighter of the two per pixel.
pub fn stylize_input(object_gray: &Image, flame: &Image) -> Result<Image> {
    if object_gray.width != flame.width || object_gray.height != flame.height {
        return Err(Error::Usage("object and flame images differ in size".into()));
    }
    if object_gray.channels != 1 || flame.channels != 3 {
        return Err(Error::Usage(
            "expected a grayscale object and an RGB flame image".into(),
        ));
    }
    let mut out = flame.clone();
    for (px, &gray) in out.data.chunks_exact_mut(3).zip(&object_gray.data) {
        px[1] = px[1].max(gray);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: u32, h: u32, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 3).map(|_| rng.random_range(0.0f32..60.0)).collect();
        Image::from_data(w, h, 3, data).unwrap()
    }

    #[test]
    fn black_image_has_empty_mask() {
        let img = Image::new(6, 4, 3);
        let (mask, out) = threshold_mask(&img, DEFAULT_THRESHOLD);
        assert!(mask.is_empty());
        assert_eq!(out, img);
    }

    #[test]
    fn strict_threshold() {
        let (mask, _) = threshold_mask(&Image::filled(3, 3, 3, 31.0), 30.0);
        assert_eq!(mask.count(), 9);
        let (mask, _) = threshold_mask(&Image::filled(3, 3, 3, 30.0), 30.0);
        assert!(mask.is_empty());
    }

    #[test]
    fn mask_matches_predicate_and_blanks() {
        let img = random_image(17, 11, 5);
        let (mask, out) = threshold_mask(&img, 30.0);
        for y in 0..11 {
            for x in 0..17 {
                let flame = (0..3).any(|c| img.get(x, y, c) > 30.0);
                assert_eq!(mask.get(x, y), flame);
                for c in 0..3 {
                    let expect = if flame { img.get(x, y, c) } else { 0.0 };
                    assert_eq!(out.get(x, y, c), expect);
                }
            }
        }
    }

    #[test]
    fn single_pixel_box() {
        let mut m = FlameMask::new(32, 32);
        m.set(10, 10, true);
        assert_eq!(
            bounding_box(&[m], 4).unwrap(),
            Rect {
                x0: 6,
                y0: 6,
                x1: 14,
                y1: 14
            }
        );
        assert_eq!(bounding_box(&[FlameMask::full(9, 7)], 4).unwrap(), Rect::full(9, 7));
        assert!(matches!(bounding_box(&[FlameMask::new(4, 4)], 4), Err(Error::NoFlame)));
    }

    fn scan_oracle(masks: &[FlameMask], dilate: u32) -> Option<Rect> {
        let (w, h) = (masks[0].width as i64, masks[0].height as i64);
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, -1, -1);
        for m in masks {
            for y in 0..h {
                for x in 0..w {
                    if m.get(x as u32, y as u32) {
                        x0 = x0.min(x);
                        y0 = y0.min(y);
                        x1 = x1.max(x);
                        y1 = y1.max(y);
                    }
                }
            }
        }
        (x1 >= 0).then(|| Rect {
            x0: (x0 - dilate as i64).max(0) as u32,
            y0: (y0 - dilate as i64).max(0) as u32,
            x1: (x1 + dilate as i64).min(w - 1) as u32,
            y1: (y1 + dilate as i64).min(h - 1) as u32,
        })
    }

    proptest! {
        #[test]
        fn box_matches_scan(seed in any::<u64>(), n in 1usize..4, dilate in 0u32..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let masks: Vec<FlameMask> = (0..n).map(|_| {
                let mut m = FlameMask::new(40, 30);
                let (cx, cy, r) = (rng.random_range(0..40) as f64, rng.random_range(0..30) as f64, rng.random_range(0.0..6.0));
                for y in 0..30 { for x in 0..40 {
                    let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                    m.set(x, y, d <= r);
                }}
                m
            }).collect();
            prop_assert_eq!(bounding_box(&masks, dilate).ok(), scan_oracle(&masks, dilate));
        }

        #[test]
        fn box_is_monotone(seed in any::<u64>(), x in 0u32..40, y in 0u32..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = FlameMask::new(40, 30);
            m.set(rng.random_range(0..40), rng.random_range(0..30), true);
            let before = bounding_box(std::slice::from_ref(&m), 2).unwrap();
            m.set(x, y, true);
            let after = bounding_box(&[m], 2).unwrap();
            prop_assert!(after.x0 <= before.x0 && after.y0 <= before.y0 && after.x1 >= before.x1 && after.y1 >= before.y1);
        }

        #[test]
        fn blanked_exactly_where_clear(seed in any::<u64>()) {
            let img = random_image(9, 9, seed);
            let (mask, out) = threshold_mask(&img, 30.0);
            for (i, px) in out.data.chunks_exact(3).enumerate() {
                prop_assert_eq!(px.iter().all(|v| *v == 0.0), !mask.bits[i] || img.data[3*i..3*i+3].iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn stylize_endpoints_and_overlap() {
        let flame = random_image(5, 5, 9);
        assert_eq!(stylize_input(&Image::new(5, 5, 1), &flame).unwrap(), flame);

        let gray = Image::filled(5, 5, 1, 120.0);
        let out = stylize_input(&gray, &Image::new(5, 5, 3)).unwrap();
        assert!(out.data.chunks_exact(3).all(|p| p == [0.0, 120.0, 0.0]));

        let mut flame = Image::new(1, 1, 3);
        flame.set(0, 0, 1, 100.0);
        let out = stylize_input(&Image::filled(1, 1, 1, 200.0), &flame).unwrap();
        assert_eq!(out.get(0, 0, 1), 200.0);

        assert!(stylize_input(&Image::new(4, 5, 1), &Image::new(5, 5, 3)).is_err());
    }
}
