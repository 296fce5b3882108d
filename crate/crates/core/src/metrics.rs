//! Classification metrics and significance tests.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

fn check_pair(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Contract(
            "metrics need at least one prediction".into(),
        ));
    }
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_pair(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// `c×c` counts, rows indexed by true label, columns by prediction.
pub fn confusion_matrix(preds: &[usize], labels: &[usize], c: usize) -> Result<Vec<Vec<u64>>> {
    check_pair(preds, labels)?;
    let mut m = vec![vec![0u64; c]; c];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= c || l >= c {
            return Err(Error::Index(format!("class {} outside [0, {c})", p.max(l))));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Unweighted mean of per-class F1; a class that is neither predicted nor
/// present scores 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], c: usize) -> Result<f64> {
    let m = confusion_matrix(preds, labels, c)?;
    let mut total = 0.0;
    for i in 0..c {
        let tp = m[i][i] as f64;
        let actual: u64 = m[i].iter().sum();
        let predicted: u64 = m.iter().map(|row| row[i]).sum();
        let denom = (actual + predicted) as f64;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    Ok(total / c as f64)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); 0 for fewer than two
/// values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - mu) * (x - mu)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

/// Two-sided p-value of `t` under Student's t with `df` degrees of freedom.
pub fn two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("df is positive");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Welch's unequal-variance two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract(format!(
            "t-test needs two or more values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_std(a).powi(2) / na, sample_std(b).powi(2) / nb);
    let diff = mean(a) - mean(b);
    if va + vb == 0.0 {
        if diff == 0.0 {
            return Ok(TTest {
                t: 0.0,
                df: na + nb - 2.0,
                p: 1.0,
            });
        }
        return Err(Error::Contract("both samples have zero variance".into()));
    }
    let t = diff / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest {
        t,
        df,
        p: two_sided_p(t, df),
    })
}

/// Paired t-test on per-trial differences `a_i − b_i`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Contract(format!(
            "paired t-test needs equal samples of two or more, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let sd = sample_std(&d);
    let df = n - 1.0;
    if sd == 0.0 {
        if mean(&d) == 0.0 {
            return Ok(TTest { t: 0.0, df, p: 1.0 });
        }
        return Err(Error::Contract(
            "paired differences have zero variance".into(),
        ));
    }
    let t = mean(&d) / (sd / n.sqrt());
    Ok(TTest {
        t,
        df,
        p: two_sided_p(t, df),
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 0, 2], &[1, 0, 2]).unwrap(), 1.0);
        assert!((accuracy(&[0, 1, 1], &[0, 0, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(accuracy(&[], &[]), Err(Error::Contract(_))));
        assert!(matches!(accuracy(&[0], &[0, 1]), Err(Error::Contract(_))));
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap(), 0.5);
        // Class 2 absent from both: contributes 0 to the mean.
        let f = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(macro_f1(&[], &[], 2), Err(Error::Contract(_))));
    }

    #[test]
    fn binary_micro_f1_is_accuracy() {
        let preds = [0, 1, 1, 0, 1, 0, 0];
        let labels = [0, 1, 0, 0, 1, 1, 0];
        let m = confusion_matrix(&preds, &labels, 2).unwrap();
        // Micro-averaged precision and recall both reduce to Σ tp / n.
        let tp: u64 = (0..2).map(|i| m[i][i]).sum();
        let micro = tp as f64 / preds.len() as f64;
        assert_eq!(micro, accuracy(&preds, &labels).unwrap());
    }

    #[test]
    fn t_test_examples() {
        let a = [1.0, 2.0, 3.0];
        let r = welch_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));

        let b = [11.0, 12.0, 13.0];
        let r = welch_t_test(&a, &b).unwrap();
        assert!(r.p < 0.01, "{r:?}");
        let s = welch_t_test(&b, &a).unwrap();
        assert_eq!(s.t, -r.t);
        assert_eq!(s.p, r.p);
        assert!((r.df - 4.0).abs() < 1e-12);

        assert!(matches!(welch_t_test(&[1.0], &b), Err(Error::Contract(_))));
    }

    #[test]
    fn paired_variant() {
        let a = [0.8, 0.82, 0.85, 0.9];
        let b = [0.7, 0.75, 0.73, 0.8];
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.t > 0.0 && r.p < 0.05);
        assert_eq!(r.df, 3.0);
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        assert_eq!(sample_std(&[0.7; 5]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn f1_bounded_and_accuracy_matches_trace(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)
        ) {
            let (p, l): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let f = macro_f1(&p, &l, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&f));
            let m = confusion_matrix(&p, &l, 4).unwrap();
            let trace: u64 = (0..4).map(|i| m[i][i]).sum();
            prop_assert_eq!(accuracy(&p, &l).unwrap(), trace as f64 / p.len() as f64);
        }
    }
}
