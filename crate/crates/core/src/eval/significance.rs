//! Paired significance: two-sided exact McNemar test on discordant pairs,
//! switching to the normal approximation (with continuity correction) once
//! the discordant count reaches 25.

use std::collections::BTreeMap;

use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

const EXACT_THRESHOLD: usize = 25;

fn index(records: &[(String, bool)]) -> Result<BTreeMap<&str, bool>, EvalError> {
    let mut map = BTreeMap::new();
    for (id, correct) in records {
        if map.insert(id.as_str(), *correct).is_some() {
            return Err(EvalError::DuplicateQuestion(id.clone()));
        }
    }
    Ok(map)
}

fn exact_binomial_two_sided(k_min: usize, m: usize) -> f64 {
    // 2 * P(X <= k_min) for X ~ Binomial(m, 1/2), capped at 1.
    let mut coefficient = 1.0f64; // C(m, 0)
    let mut tail = 0.0f64;
    for k in 0..=k_min {
        if k > 0 {
            coefficient *= (m - k + 1) as f64 / k as f64;
        }
        tail += coefficient;
    }
    (2.0 * tail * 0.5f64.powi(m as i32)).min(1.0)
}

/// Two-sided McNemar p-value for paired correctness records.
///
/// Both record sets must cover exactly the same question ids; mismatches
/// are an error listing the offending ids.
pub fn paired_significance(
    records_a: &[(String, bool)],
    records_b: &[(String, bool)],
) -> Result<f64, EvalError> {
    let a = index(records_a)?;
    let b = index(records_b)?;
    let mismatched: Vec<String> = a
        .keys()
        .filter(|k| !b.contains_key(*k))
        .chain(b.keys().filter(|k| !a.contains_key(*k)))
        .map(|k| k.to_string())
        .collect();
    if !mismatched.is_empty() {
        return Err(EvalError::Unpaired(mismatched));
    }
    if a.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut a_only = 0usize; // A correct, B incorrect
    let mut b_only = 0usize;
    for (id, &correct_a) in &a {
        let correct_b = b[id];
        match (correct_a, correct_b) {
            (true, false) => a_only += 1,
            (false, true) => b_only += 1,
            _ => {}
        }
    }
    let discordant = a_only + b_only;
    if discordant == 0 {
        return Ok(1.0);
    }
    if discordant < EXACT_THRESHOLD {
        Ok(exact_binomial_two_sided(a_only.min(b_only), discordant))
    } else {
        let diff = a_only.abs_diff(b_only) as f64;
        let z = (diff - 1.0) / (discordant as f64).sqrt();
        if z <= 0.0 {
            return Ok(1.0);
        }
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        Ok((2.0 * (1.0 - normal.cdf(z))).min(1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records(bits: &[bool]) -> Vec<(String, bool)> {
        bits.iter()
            .enumerate()
            .map(|(i, &b)| (format!("q{i}"), b))
            .collect()
    }

    #[test]
    fn identical_vectors_give_p_one() {
        let a = records(&[true, false, true, true]);
        assert_eq!(paired_significance(&a, &a.clone()).unwrap(), 1.0);
    }

    #[test]
    fn fifteen_to_zero_exact_binomial() {
        // 15 questions where only A is correct, plus shared outcomes.
        let mut a = vec![true; 15];
        a.extend([true, false]);
        let mut b = vec![false; 15];
        b.extend([true, false]);
        let p = paired_significance(&records(&a), &records(&b)).unwrap();
        let expected = 2.0 * 0.5f64.powi(15);
        assert!((p - expected).abs() < 1e-15, "p {p} vs {expected}");
        assert!((p - 6.103515625e-5).abs() < 1e-12);
    }

    /// Independent oracle: exhaustive binomial tail in exact rational-ish
    /// arithmetic via f64 on small m.
    fn oracle_exact(k: usize, m: usize) -> f64 {
        fn choose(m: usize, k: usize) -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
        }
        let tail: f64 = (0..=k).map(|j| choose(m, j)).sum();
        (2.0 * tail / 2f64.powi(m as i32)).min(1.0)
    }

    #[test]
    fn exact_branch_matches_the_oracle() {
        for (a_only, b_only) in [(3usize, 8usize), (5, 5), (0, 12), (10, 9)] {
            let m = a_only + b_only;
            let mut a = vec![true; a_only];
            a.extend(vec![false; b_only]);
            let mut b = vec![false; a_only];
            b.extend(vec![true; b_only]);
            let p = paired_significance(&records(&a), &records(&b)).unwrap();
            let expected = oracle_exact(a_only.min(b_only), m);
            assert!((p - expected).abs() < 1e-12, "{a_only}/{b_only}: {p} vs {expected}");
        }
    }

    #[test]
    fn sixty_forty_normal_approximation() {
        let mut a = vec![true; 60];
        a.extend(vec![false; 40]);
        let mut b = vec![false; 60];
        b.extend(vec![true; 40]);
        let p = paired_significance(&records(&a), &records(&b)).unwrap();
        // Normal with continuity correction: z = (20 - 1)/10 = 1.9.
        let normal = Normal::new(0.0, 1.0).unwrap();
        let expected = 2.0 * (1.0 - normal.cdf(1.9));
        assert!((p - expected).abs() < 1e-12);
        assert!((p - 0.057433).abs() < 1e-5, "p {p}");
        // Cross-check against the exact binomial the approximation targets.
        let exact = oracle_exact(40, 100);
        assert!((p - exact).abs() < 2e-3, "normal {p} vs exact {exact}");
    }

    #[test]
    fn symmetric_in_the_two_systems() {
        let a = records(&[true, true, false, true, false, false, true, true]);
        let b = records(&[false, true, true, true, false, true, false, true]);
        let p_ab = paired_significance(&a, &b).unwrap();
        let p_ba = paired_significance(&b, &a).unwrap();
        assert_eq!(p_ab, p_ba);
    }

    #[test]
    fn unpaired_questions_are_listed() {
        let a = records(&[true, false]);
        let mut b = records(&[true, false]);
        b[1].0 = "different".to_string();
        match paired_significance(&a, &b) {
            Err(EvalError::Unpaired(ids)) => {
                assert!(ids.contains(&"q1".to_string()));
                assert!(ids.contains(&"different".to_string()));
            }
            other => panic!("expected unpaired error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_error() {
        let mut a = records(&[true, false]);
        a.push(("q0".to_string(), true));
        let b = records(&[true, false, true]);
        assert!(matches!(
            paired_significance(&a, &b),
            Err(EvalError::DuplicateQuestion(_))
        ));
    }
}
