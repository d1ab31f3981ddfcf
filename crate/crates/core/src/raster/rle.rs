use serde::{Deserialize, Serialize};

use super::{BinaryMask, MaskError};

/// Run-length form of a [`BinaryMask`].
///
/// Runs alternate background/foreground in row-major scan order and always
/// start with a background run, which is 0 when the first pixel is set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u64>,
}

impl RleMask {
    /// Foreground pixel count without decoding.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }

    pub fn decode(&self) -> Result<BinaryMask, MaskError> {
        rle_decode(self)
    }
}

impl From<&BinaryMask> for RleMask {
    fn from(mask: &BinaryMask) -> Self {
        rle_encode(mask)
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for &bit in mask.bits() {
        if bit != current {
            counts.push(run);
            run = 0;
            current = bit;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        width: mask.width(),
        height: mask.height(),
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask, MaskError> {
    let expected = (rle.width as u64) * (rle.height as u64);
    let sum = rle
        .counts
        .iter()
        .try_fold(0u64, |acc, &c| acc.checked_add(c))
        .unwrap_or(u64::MAX);
    if sum != expected {
        return Err(MaskError::MalformedRle { sum, expected });
    }
    let mut bits = Vec::with_capacity(expected as usize);
    for (i, &run) in rle.counts.iter().enumerate() {
        let value = i % 2 == 1;
        bits.extend(std::iter::repeat_n(value, run as usize));
    }
    BinaryMask::from_bits(rle.width, rle.height, bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_and_full() {
        let empty = BinaryMask::new(4, 4).unwrap();
        assert_eq!(rle_encode(&empty).counts, vec![16]);
        let full = BinaryMask::filled(4, 4, true).unwrap();
        assert_eq!(rle_encode(&full).counts, vec![0, 16]);

        let decoded = rle_decode(&RleMask {
            width: 4,
            height: 4,
            counts: vec![16],
        })
        .unwrap();
        assert_eq!(decoded, empty);
        let decoded = rle_decode(&RleMask {
            width: 4,
            height: 4,
            counts: vec![0, 16],
        })
        .unwrap();
        assert_eq!(decoded, full);
    }

    #[test]
    fn short_counts_are_malformed() {
        let err = rle_decode(&RleMask {
            width: 4,
            height: 4,
            counts: vec![15],
        })
        .unwrap_err();
        assert_eq!(err, MaskError::MalformedRle { sum: 15, expected: 16 });
    }

    #[test]
    fn runs_cross_row_boundaries() {
        let m = BinaryMask::from_ascii(&["..##", "##.."]).unwrap();
        let rle = rle_encode(&m);
        assert_eq!(rle.counts, vec![2, 4, 2]);
        assert_eq!(rle.area(), 4);
    }

    #[test]
    fn json_wire_format() {
        let rle = RleMask {
            width: 2,
            height: 1,
            counts: vec![1, 1],
        };
        let text = serde_json::to_string(&rle).unwrap();
        assert_eq!(text, r#"{"width":2,"height":1,"counts":[1,1]}"#);
    }

    proptest! {
        #[test]
        fn round_trip(w in 1usize..24, h in 1usize..24, seed in any::<u64>()) {
            let mut state = seed | 1;
            let m = BinaryMask::from_fn(w, h, |_, _| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                state & 3 == 0
            }).unwrap();
            let rle = rle_encode(&m);
            prop_assert_eq!(rle.counts.iter().sum::<u64>(), (w * h) as u64);
            prop_assert!(rle.counts.iter().skip(1).all(|&c| c > 0));
            prop_assert_eq!(rle_decode(&rle).unwrap(), m);
        }
    }
}
