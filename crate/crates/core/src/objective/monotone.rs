use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus};

/// Nondecreasing map `m(b) = sum_j softplus(v_j) relu(softplus(w_j) b + c_j) + d`.
///
/// Flat parameter order: `w`, `c`, `v` (each of length `hidden`), then `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneMap {
    pub hidden: usize,
    pub params: Vec<f64>,
}

impl MonotoneMap {
    /// Unit-scale hinges with knots spread over `[0, 1)`.
    pub fn new(hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::config(
                "objective.monotone_hidden",
                "must be positive",
            ));
        }
        let mut params = vec![0.0; 3 * hidden + 1];
        for j in 0..hidden {
            params[hidden + j] = -(j as f64) / hidden as f64;
        }
        Ok(MonotoneMap { hidden, params })
    }

    pub fn from_parts(w: &[f64], c: &[f64], v: &[f64], d: f64) -> Result<Self> {
        let h = w.len();
        if h == 0 || c.len() != h || v.len() != h {
            return Err(Error::Dimension(
                "monotone map parts must share a positive length".into(),
            ));
        }
        let mut params = Vec::with_capacity(3 * h + 1);
        params.extend_from_slice(w);
        params.extend_from_slice(c);
        params.extend_from_slice(v);
        params.push(d);
        Ok(MonotoneMap { hidden: h, params })
    }

    fn eval_unchecked(&self, b: f64) -> f64 {
        let h = self.hidden;
        let p = &self.params;
        let mut m = p[3 * h];
        for j in 0..h {
            let a = softplus(p[j], 1.0) * b + p[h + j];
            if a > 0.0 {
                m += softplus(p[2 * h + j], 1.0) * a;
            }
        }
        m
    }

    /// Value and gradient with respect to `params`.
    pub fn eval_with_grad(&self, b: f64) -> (f64, Vec<f64>) {
        let h = self.hidden;
        let p = &self.params;
        let mut grad = vec![0.0; p.len()];
        let mut m = p[3 * h];
        grad[3 * h] = 1.0;
        for j in 0..h {
            let a = softplus(p[j], 1.0) * b + p[h + j];
            if a > 0.0 {
                let scale = softplus(p[2 * h + j], 1.0);
                m += scale * a;
                grad[j] = scale * b * sigmoid(p[j]);
                grad[h + j] = scale;
                grad[2 * h + j] = a * sigmoid(p[2 * h + j]);
            }
        }
        (m, grad)
    }
}

pub fn monotone_eval(m: &MonotoneMap, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&b) {
        return Err(Error::Domain(format!("prior value {b} outside [0, 1]")));
    }
    Ok(m.eval_unchecked(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, relative_error, RngStream};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_map(seed: u64, h: usize) -> MonotoneMap {
        let mut rng = RngStream::new(seed, 0).rng();
        let params = (0..3 * h + 1)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                2.0 * z
            })
            .collect::<Vec<f64>>();
        MonotoneMap { hidden: h, params }
    }

    #[test]
    fn nondecreasing_for_random_weights() {
        let mut rng = RngStream::new(1, 1).rng();
        for t in 0..1000 {
            let m = random_map(t, 5);
            let (b1, b2) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            assert!(monotone_eval(&m, lo).unwrap() <= monotone_eval(&m, hi).unwrap());
        }
    }

    #[test]
    fn vanishing_output_weights_give_constant() {
        let m =
            MonotoneMap::from_parts(&[0.3, -1.0], &[0.2, 0.1], &[-800.0, -800.0], 0.25).unwrap();
        for b in [0.0, 0.5, 1.0] {
            assert_eq!(monotone_eval(&m, b).unwrap(), 0.25);
        }
    }

    #[test]
    fn hand_evaluated_at_zero() {
        // softplus(0) = ln 2 for every w and v; only positive knots contribute at b = 0.
        let m = MonotoneMap::from_parts(&[0.0, 0.0], &[0.5, -0.3], &[0.0, 0.0], 0.1).unwrap();
        let expected = std::f64::consts::LN_2 * 0.5 + 0.1;
        assert!((monotone_eval(&m, 0.0).unwrap() - expected).abs() < 1e-15);
        // at b = 1 both hinges are active: ln2 (ln2 + 0.5) + ln2 (ln2 - 0.3) + 0.1
        let ln2 = std::f64::consts::LN_2;
        let at_one = ln2 * (ln2 + 0.5) + ln2 * (ln2 - 0.3) + 0.1;
        assert!((monotone_eval(&m, 1.0).unwrap() - at_one).abs() < 1e-15);
    }

    #[test]
    fn default_map_is_zero_at_zero() {
        let m = MonotoneMap::new(8).unwrap();
        assert_eq!(monotone_eval(&m, 0.0).unwrap(), 0.0);
        assert!(monotone_eval(&m, 1.0).unwrap() > 1.0);
        assert!(monotone_eval(&m, 1.5).is_err());
        assert!(MonotoneMap::new(0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(2, 2).rng();
        for t in 0..100 {
            let m = random_map(100 + t, 4);
            let b = rng.random_range(0.0..1.0);
            let f = |p: &[f64]| {
                MonotoneMap {
                    hidden: 4,
                    params: p.to_vec(),
                }
                .eval_unchecked(b)
            };
            let numeric = finite_difference_gradient(f, &m.params, 1e-7).unwrap();
            let (_, g) = m.eval_with_grad(b);
            assert!(relative_error(&g, &numeric, 1e-6) < 1e-4);
        }
    }
}
