//! 3x3 binary morphology. Neighbourhoods are clipped at the image border:
//! pixels outside the image simply do not take part.

use super::BinaryMask;

fn neighbourhood_reduce(mask: &BinaryMask, want_any: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let bits = mask.bits();

    // Separable pass: rows first, then columns. Clipped 3x3 max/min is the
    // composition of clipped 1x3 and 3x1 passes.
    let mut horizontal = vec![false; w * h];
    for y in 0..h {
        let row = &bits[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(1);
            let hi = (x + 1).min(w - 1);
            let window = &row[lo..=hi];
            horizontal[y * w + x] = if want_any {
                window.iter().any(|&b| b)
            } else {
                window.iter().all(|&b| b)
            };
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(1);
        let hi = (y + 1).min(h - 1);
        for x in 0..w {
            let mut column = (lo..=hi).map(|yy| horizontal[yy * w + x]);
            out[y * w + x] = if want_any { column.any(|b| b) } else { column.all(|b| b) };
        }
    }
    BinaryMask::from_bits(w, h, out).expect("shape preserved")
}

/// One iteration of dilation with a 3x3 square.
pub fn dilate(mask: &BinaryMask) -> BinaryMask {
    neighbourhood_reduce(mask, true)
}

/// One iteration of erosion with a 3x3 square.
pub fn erode(mask: &BinaryMask) -> BinaryMask {
    neighbourhood_reduce(mask, false)
}

/// Erosion followed by dilation; removes isolated pixels and thin spurs.
pub fn open(mask: &BinaryMask) -> BinaryMask {
    dilate(&erode(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(mask: &BinaryMask, any: bool) -> BinaryMask {
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            let mut acc = !any;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= mask.width() as i64 || ny >= mask.height() as i64 {
                        continue;
                    }
                    let v = mask.get(nx as usize, ny as usize);
                    acc = if any { acc || v } else { acc && v };
                }
            }
            acc
        })
        .unwrap()
    }

    #[test]
    fn centre_pixel_grows_to_block() {
        let m = BinaryMask::from_fn(5, 5, |x, y| (x, y) == (2, 2)).unwrap();
        let d = dilate(&m);
        let expected = BinaryMask::from_fn(5, 5, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y)).unwrap();
        assert_eq!(d, expected);
        let empty = BinaryMask::new(5, 5).unwrap();
        assert_eq!(dilate(&empty), empty);
    }

    #[test]
    fn opening_removes_lone_pixel_keeps_block() {
        let lone = BinaryMask::from_fn(5, 5, |x, y| (x, y) == (2, 2)).unwrap();
        assert!(open(&lone).is_empty());
        let block = BinaryMask::from_fn(7, 7, |x, y| (2..=4).contains(&x) && (2..=4).contains(&y)).unwrap();
        assert_eq!(open(&block), block);
    }

    #[test]
    fn border_is_clipped_not_padded() {
        let full = BinaryMask::filled(3, 3, true).unwrap();
        assert_eq!(erode(&full), full);
    }

    #[test]
    fn matches_naive_scans() {
        let mut state = 12345u64;
        for _ in 0..50 {
            let m = BinaryMask::from_fn(17, 13, |_, _| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (state >> 33).is_multiple_of(3)
            })
            .unwrap();
            assert_eq!(dilate(&m), naive(&m, true));
            assert_eq!(erode(&m), naive(&m, false));
            let o = open(&m);
            assert_eq!(o, naive(&naive(&m, false), true));
            assert!(o.is_subset_of(&m));
            assert_eq!(open(&o), o);
        }
    }
}
