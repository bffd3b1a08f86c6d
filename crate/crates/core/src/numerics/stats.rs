use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolated percentile, `p` in [0, 1].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

/// 1-based ranks with ties replaced by their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(u: &[f64], v: &[f64]) -> Option<f64> {
    let mu = mean(u);
    let mv = mean(v);
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    if suu <= 0.0 || svv <= 0.0 {
        return None;
    }
    Some((suv / (suu * svv).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation using midranks. `Ok(None)` is the undefined
/// sentinel returned when either input has constant ranks.
pub fn spearman(u: &[f64], v: &[f64]) -> Result<Option<f64>> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "spearman lengths {} vs {}",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::Empty("spearman needs at least two points"));
    }
    Ok(pearson(&midranks(u), &midranks(v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_examples() {
        let u = [3.0, 1.0, 4.0, 1.5, 9.0];
        assert!((spearman(&u, &u).unwrap().unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        assert!((spearman(&u, &neg).unwrap().unwrap() + 1.0).abs() < 1e-12);
        let a = [1.0, 2.0, 2.0, 4.0];
        let b = [10.0, 20.0, 20.0, 40.0];
        assert!((spearman(&a, &b).unwrap().unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), None);
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn midranks_by_hand() {
        assert_eq!(midranks(&[1.0, 2.0, 2.0, 4.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn percentile_interpolates() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
