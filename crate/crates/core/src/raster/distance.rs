//! Exact Euclidean distance transform (Felzenszwalb & Huttenlocher lower
//! envelope of parabolas). Squared distances are integers and are carried
//! exactly; only the final square root rounds.

use super::{BinaryMask, MaskError};

/// Per-pixel Euclidean distance to the nearest foreground pixel of the
/// source mask, in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl DistanceField {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Smallest distance over the foreground of `region`.
    pub fn min_over(&self, region: &BinaryMask) -> Option<f64> {
        region.foreground().map(|(x, y)| self.get(x, y)).min_by(f64::total_cmp)
    }
}

pub fn distance_transform(mask: &BinaryMask) -> Result<DistanceField, MaskError> {
    let squared = squared_distance_transform(mask)?;
    Ok(DistanceField {
        width: mask.width(),
        height: mask.height(),
        values: squared.into_iter().map(|d| (d as f64).sqrt()).collect(),
    })
}

/// Integer squared distances, row-major.
pub fn squared_distance_transform(mask: &BinaryMask) -> Result<Vec<u64>, MaskError> {
    if mask.is_empty() {
        return Err(MaskError::EmptySource);
    }
    let (w, h) = (mask.width(), mask.height());

    // Column pass: vertical distance to the nearest foreground pixel in the
    // same column, or None when the column has no foreground.
    let mut column: Vec<Option<u64>> = vec![None; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if mask.get(x, y) {
                last = Some(y);
            }
            column[y * w + x] = last.map(|ly| (y - ly) as u64);
        }
        let mut next: Option<usize> = None;
        for y in (0..h).rev() {
            if mask.get(x, y) {
                next = Some(y);
            }
            if let Some(ny) = next {
                let down = (ny - y) as u64;
                let slot = &mut column[y * w + x];
                *slot = Some(slot.map_or(down, |d| d.min(down)));
            }
        }
    }

    // Row pass: 1-D squared transform of the column distances.
    let mut out = vec![0u64; w * h];
    let mut f = vec![None; w];
    let mut row_out = vec![0u64; w];
    for y in 0..h {
        for x in 0..w {
            f[x] = column[y * w + x].map(|d| d * d);
        }
        lower_envelope(&f, &mut row_out);
        out[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    Ok(out)
}

/// d(q) = min_p (q - p)^2 + f(p) over sites with finite f. Expects at
/// least one finite site.
fn lower_envelope(f: &[Option<u64>], out: &mut [u64]) {
    let n = f.len();
    let sites: Vec<(i64, i64)> = f
        .iter()
        .enumerate()
        .filter_map(|(p, v)| v.map(|v| (p as i64, v as i64)))
        .collect();
    debug_assert!(!sites.is_empty());

    // Intersection abscissa of parabolas rooted at sites a and b (a.0 < b.0),
    // kept as an exact rational numerator/denominator pair.
    let intersect = |a: (i64, i64), b: (i64, i64)| -> (i64, i64) {
        let num = (b.1 + b.0 * b.0) - (a.1 + a.0 * a.0);
        let den = 2 * (b.0 - a.0);
        (num, den)
    };
    // compare num1/den1 <= num2/den2 with positive denominators
    let le = |a: (i64, i64), b: (i64, i64)| -> bool { (a.0 as i128) * (b.1 as i128) <= (b.0 as i128) * (a.1 as i128) };

    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(sites.len());
    let mut starts: Vec<(i64, i64)> = Vec::with_capacity(sites.len());
    for &site in &sites {
        loop {
            match hull.last() {
                None => {
                    hull.push(site);
                    starts.push((i64::MIN / 4, 1));
                    break;
                }
                Some(&top) => {
                    let s = intersect(top, site);
                    let start_top = *starts.last().unwrap();
                    // the first start is effectively -inf, so the hull never empties
                    if hull.len() > 1 && le(s, start_top) {
                        hull.pop();
                        starts.pop();
                    } else {
                        hull.push(site);
                        starts.push(s);
                        break;
                    }
                }
            }
        }
    }

    let mut k = 0;
    for (q, slot) in out.iter_mut().enumerate().take(n) {
        let q = q as i64;
        while k + 1 < hull.len() && le(starts[k + 1], (q, 1)) {
            k += 1;
        }
        let (p, fp) = hull[k];
        *slot = ((q - p) * (q - p) + fp) as u64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(mask: &BinaryMask) -> Vec<f64> {
        let fg: Vec<(usize, usize)> = mask.foreground().collect();
        let mut out = Vec::with_capacity(mask.len());
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                let best = fg
                    .iter()
                    .map(|&(fx, fy)| {
                        let dx = fx as i64 - x as i64;
                        let dy = fy as i64 - y as i64;
                        (dx * dx + dy * dy) as u64
                    })
                    .min()
                    .unwrap();
                out.push((best as f64).sqrt());
            }
        }
        out
    }

    #[test]
    fn unit_and_diagonal_neighbours() {
        let m = BinaryMask::from_fn(3, 3, |x, y| (x, y) == (1, 1)).unwrap();
        let d = distance_transform(&m).unwrap();
        assert_eq!(d.get(1, 1), 0.0);
        assert_eq!(d.get(1, 0), 1.0);
        assert!((d.get(0, 0) - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn empty_source_is_an_error() {
        let m = BinaryMask::new(4, 4).unwrap();
        assert_eq!(distance_transform(&m).unwrap_err(), MaskError::EmptySource);
    }

    #[test]
    fn matches_brute_force() {
        let mut state = 7u64;
        for i in 0..60 {
            let (w, h) = (1 + i % 23, 1 + (i * 7) % 19);
            let density = 1 + i % 9;
            let mut m = BinaryMask::from_fn(w, h, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                (state >> 40) % 40 < density as u64
            })
            .unwrap();
            if m.is_empty() {
                m.set(0, 0, true);
            }
            let d = distance_transform(&m).unwrap();
            for (a, b) in d.values.iter().zip(brute(&m)) {
                assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
            }
        }
    }
}
