use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{stable_hash, BenchError, LETTERS};
use crate::geoquery::{AnswerValue, Region, SpatialAnswer, Units};

/// Multipliers tried first, in a seed-dependent order.
pub const DISTRACTOR_FACTORS: [f64; 4] = [0.5, 0.75, 1.5, 2.0];
/// Fallback multipliers when the first set collides after rounding.
pub const EXTRA_FACTORS: [f64; 8] = [0.25, 1.25, 2.5, 3.0, 0.4, 0.6, 1.75, 4.0];

fn round_sig3(v: f64) -> (f64, usize) {
    if v == 0.0 || !v.is_finite() {
        return (0.0, 0);
    }
    let e = v.abs().log10().floor() as i32;
    let scale = 10f64.powi(e - 2);
    let r = (v / scale).round() * scale;
    (r, (2 - e).max(0) as usize)
}

/// Task-appropriate rounding: percent to 0.1, area to 3 significant figures,
/// meters to the nearest 10, counts to integers.
pub fn render_value(v: f64, units: Units) -> String {
    match units {
        Units::Percent => format!("{v:.1}%"),
        Units::SquareMeters => {
            let (r, decimals) = round_sig3(v);
            format!("{r:.decimals$} m²")
        }
        Units::Meters => format!("{:.0} m", (v / 10.0).round() * 10.0),
        Units::Count => format!("{:.0}", v.round()),
        Units::None => format!("{v}"),
    }
}

fn plausible(v: f64, units: Units) -> bool {
    v > 0.0 && v.is_finite() && !(units == Units::Percent && v > 100.0)
}

fn additive_step(v: f64, units: Units) -> f64 {
    match units {
        Units::Percent => 5.0,
        Units::Meters => 10.0,
        Units::Count => 1.0,
        _ => (v.abs() * 0.1).max(1.0),
    }
}

/// Three rendered distractors for `v`: multiply by `order`, then the extra
/// factors, then step away additively, skipping anything that renders the
/// same as the truth or an earlier distractor.
pub fn numeric_distractors(v: f64, units: Units, order: &[f64]) -> Vec<String> {
    let truth = render_value(v, units);
    let mut out: Vec<String> = Vec::with_capacity(3);
    let offer = |c: f64, out: &mut Vec<String>| {
        if out.len() < 3 && plausible(c, units) {
            let s = render_value(c, units);
            if s != truth && !out.contains(&s) && s != render_value(0.0, units) {
                out.push(s);
            }
        }
    };
    for &f in order.iter().chain(EXTRA_FACTORS.iter()) {
        offer(v * f, &mut out);
    }
    let step = additive_step(v, units);
    let mut k = 1.0;
    while out.len() < 3 && k < 1e6 {
        offer(v + k * step, &mut out);
        offer(v - k * step, &mut out);
        k += 1.0;
    }
    out
}

/// Options and the correct letter for a valid answer. Binary answers give
/// Yes/No; numbers get factor distractors; locations get other regions.
/// Which distractors appear depends only on the answer; the seed only
/// permutes the options.
pub fn make_options(answer: &SpatialAnswer, seed: u64) -> Result<(Vec<String>, char), BenchError> {
    if !answer.valid {
        let why = answer.reject_reason.map(|r| r.describe()).unwrap_or("unspecified");
        return Err(BenchError::InvalidAnswer(why.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (truth, mut options) = match &answer.value {
        AnswerValue::Boolean(b) => {
            let truth = if *b { "Yes" } else { "No" };
            (truth.to_string(), vec!["Yes".to_string(), "No".to_string()])
        }
        AnswerValue::Number(v) => {
            let truth = render_value(*v, answer.units);
            let mut order = DISTRACTOR_FACTORS;
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(stable_hash(&truth)));
            let mut opts = numeric_distractors(*v, answer.units, &order);
            opts.push(truth.clone());
            (truth, opts)
        }
        AnswerValue::Label(label) => {
            let mut others: Vec<&str> = Region::ALL.iter().map(|r| r.phrase()).filter(|p| p != label).collect();
            others.shuffle(&mut ChaCha8Rng::seed_from_u64(stable_hash(label)));
            let mut opts: Vec<String> = others.into_iter().take(3).map(String::from).collect();
            opts.push(label.clone());
            (label.clone(), opts)
        }
        AnswerValue::Ranking(_) | AnswerValue::Undefined => return Err(BenchError::UnsupportedValue),
    };
    options.shuffle(&mut rng);
    let idx = options
        .iter()
        .position(|o| *o == truth)
        .expect("truth is among the options");
    Ok((options, LETTERS[idx]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geoquery::{AnswerKind, RejectReason};

    fn number(v: f64, units: Units) -> SpatialAnswer {
        SpatialAnswer {
            kind: AnswerKind::Coverage,
            value: AnswerValue::Number(v),
            units,
            valid: true,
            reject_reason: None,
        }
    }

    #[test]
    fn rendering() {
        assert_eq!(render_value(34.5, Units::Percent), "34.5%");
        assert_eq!(render_value(12345.0, Units::SquareMeters), "12300 m²");
        assert_eq!(render_value(0.012345, Units::SquareMeters), "0.0123 m²");
        assert_eq!(render_value(204.9, Units::Meters), "200 m");
        assert_eq!(render_value(205.0, Units::Meters), "210 m");
        assert_eq!(render_value(7.5, Units::Count), "8");
    }

    #[test]
    fn stated_factor_rule() {
        let d = numeric_distractors(50.0, Units::Percent, &[0.5, 1.5, 2.0]);
        assert_eq!(d, vec!["25.0%", "75.0%", "100.0%"]);
        let (opts, letter) = make_options(&number(50.0, Units::Percent), 3).unwrap();
        assert_eq!(opts.len(), 4);
        assert_eq!(opts[super::super::letter_index(letter).unwrap()], "50.0%");
        // every distractor is truth * factor for some factor in the set
        for o in opts.iter().filter(|o| *o != "50.0%") {
            assert!(
                DISTRACTOR_FACTORS
                    .iter()
                    .any(|f| render_value(50.0 * f, Units::Percent) == *o),
                "{o}"
            );
        }
    }

    #[test]
    fn percent_never_exceeds_100() {
        let d = numeric_distractors(80.0, Units::Percent, &DISTRACTOR_FACTORS);
        assert_eq!(d, vec!["40.0%", "60.0%", "20.0%"]);
    }

    #[test]
    fn collisions_fall_back() {
        // 1 building: 0.5 -> 1 (round half away) collides, 0.75 -> 1 collides
        let d = numeric_distractors(1.0, Units::Count, &DISTRACTOR_FACTORS);
        assert_eq!(d.len(), 3);
        let mut all = d.clone();
        all.push("1".into());
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 4);
        // meters round to tens, so small factors collide too
        let m = numeric_distractors(110.0, Units::Meters, &[0.75, 1.5, 2.0, 0.5]);
        assert_eq!(m.len(), 3);
        assert!(!m.contains(&"110 m".to_string()));
    }

    #[test]
    fn binary_and_location_options() {
        let yes = SpatialAnswer {
            kind: AnswerKind::Adjacency,
            value: AnswerValue::Boolean(true),
            units: Units::None,
            valid: true,
            reject_reason: None,
        };
        for seed in 0..8 {
            let (opts, letter) = make_options(&yes, seed).unwrap();
            let mut sorted = opts.clone();
            sorted.sort();
            assert_eq!(sorted, vec!["No", "Yes"]);
            assert_eq!(opts[super::super::letter_index(letter).unwrap()], "Yes");
        }
        let loc = SpatialAnswer {
            value: AnswerValue::Label("in the center".into()),
            kind: AnswerKind::Location,
            ..yes.clone()
        };
        let (opts, _) = make_options(&loc, 1).unwrap();
        assert_eq!(opts.len(), 4);
        assert!(opts.contains(&"in the center".to_string()));

        let bad = SpatialAnswer {
            valid: false,
            reject_reason: Some(RejectReason::AmbiguousSizes),
            ..yes
        };
        assert!(matches!(make_options(&bad, 0), Err(BenchError::InvalidAnswer(_))));
    }

    #[test]
    fn seeds_change_order_only() {
        let a = number(37.2, Units::Percent);
        let mut seen = std::collections::BTreeSet::new();
        let mut base = make_options(&a, 0).unwrap().0;
        base.sort();
        for seed in 0..20 {
            let (opts, letter) = make_options(&a, seed).unwrap();
            let mut sorted = opts.clone();
            sorted.sort();
            assert_eq!(sorted, base);
            assert_eq!(opts[super::super::letter_index(letter).unwrap()], "37.2%");
            seen.insert(letter);
            assert_eq!(make_options(&a, seed).unwrap(), (opts, letter));
        }
        assert!(seen.len() > 1);
    }
}
