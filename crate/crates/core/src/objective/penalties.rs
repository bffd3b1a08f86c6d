use super::{MonotoneMap, Reduction};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, soft_quantile, soft_quantile_weights, softplus};

#[derive(Debug, Clone, PartialEq)]
pub struct PriorPenalty {
    pub value: f64,
    /// Gradient with respect to each node's epistemic variance.
    pub d_u: Vec<f64>,
    /// Gradient with respect to the monotone map parameters.
    pub d_map: Vec<f64>,
}

/// Hinge `max(0, m(b_i) - u_i)` reduced over nodes.
pub fn prior_penalty(
    b: &[f64],
    u: &[f64],
    m: &MonotoneMap,
    reduction: Reduction,
) -> Result<PriorPenalty> {
    if b.len() != u.len() {
        return Err(Error::Dimension(format!(
            "{} priors for {} variances",
            b.len(),
            u.len()
        )));
    }
    if let Some(bad) = b.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("prior value {bad} outside [0, 1]")));
    }
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean if b.is_empty() => 0.0,
        Reduction::Mean => 1.0 / b.len() as f64,
    };
    let mut value = 0.0;
    let mut d_u = vec![0.0; u.len()];
    let mut d_map = vec![0.0; m.params.len()];
    for (i, (&bi, &ui)) in b.iter().zip(u).enumerate() {
        let (mi, gm) = m.eval_with_grad(bi);
        if mi > ui {
            value += mi - ui;
            d_u[i] = -scale;
            for (acc, g) in d_map.iter_mut().zip(gm) {
                *acc += scale * g;
            }
        }
    }
    Ok(PriorPenalty {
        value: scale * value,
        d_u,
        d_map,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftConf {
    pub value: f64,
    pub quantile: f64,
    pub d_scores: Vec<f64>,
}

/// Mean of `softplus((s_i - Q)/kappa)` with `Q` the log-sum-exp soft quantile.
///
/// With `stopgrad`, `Q` is held constant in the gradient.
pub fn soft_conf_loss(scores: &[f64], gamma: f64, kappa: f64, stopgrad: bool) -> Result<SoftConf> {
    if !(kappa > 0.0) {
        return Err(Error::Domain(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Domain(format!("negative or NaN score {bad}")));
    }
    let q = soft_quantile(scores, gamma)?;
    let n = scores.len() as f64;
    let mut value = 0.0;
    let mut d_scores = Vec::with_capacity(scores.len());
    let mut slope_sum = 0.0;
    for &s in scores {
        let t = (s - q) / kappa;
        value += softplus(t, 1.0);
        let slope = sigmoid(t) / (kappa * n);
        slope_sum += slope;
        d_scores.push(slope);
    }
    if !stopgrad {
        for (d, w) in d_scores
            .iter_mut()
            .zip(soft_quantile_weights(scores, gamma))
        {
            *d -= slope_sum * w;
        }
    }
    Ok(SoftConf {
        value: value / n,
        quantile: q,
        d_scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, relative_error, RngStream};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    #[test]
    fn prior_examples() {
        let m = MonotoneMap::from_parts(&[-800.0], &[0.0], &[-800.0], 1.0).unwrap();
        let p = prior_penalty(&[0.5], &[0.4], &m, Reduction::Sum).unwrap();
        assert!((p.value - 0.6).abs() < 1e-15);
        assert_eq!(p.d_u, vec![-1.0]);
        let ok = prior_penalty(&[0.1, 0.9], &[1.0, 3.0], &m, Reduction::Mean).unwrap();
        assert_eq!(ok.value, 0.0);
        assert!(ok.d_u.iter().chain(&ok.d_map).all(|&g| g == 0.0));
        assert!(prior_penalty(&[1.2], &[0.0], &m, Reduction::Sum).is_err());
    }

    #[test]
    fn raising_u_never_raises_penalty() {
        let m = MonotoneMap::new(6).unwrap();
        let mut rng = RngStream::new(4, 0).rng();
        for _ in 0..200 {
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
            let u: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..2.0)).collect();
            let base = prior_penalty(&b, &u, &m, Reduction::Mean).unwrap().value;
            let up: Vec<f64> = u.iter().map(|v| v + rng.random_range(0.0..0.5)).collect();
            assert!(prior_penalty(&b, &up, &m, Reduction::Mean).unwrap().value <= base);
        }
    }

    #[test]
    fn prior_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(5, 0).rng();
        for t in 0..100 {
            let mut m = MonotoneMap::new(4).unwrap();
            m.params
                .iter_mut()
                .for_each(|p| *p += rng.random_range(-0.5..0.5));
            let b: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            let u: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.5)).collect();
            let red = if t % 2 == 0 {
                Reduction::Sum
            } else {
                Reduction::Mean
            };
            let got = prior_penalty(&b, &u, &m, red).unwrap();
            let fu = |v: &[f64]| prior_penalty(&b, v, &m, red).unwrap().value;
            let fm = |p: &[f64]| {
                prior_penalty(
                    &b,
                    &u,
                    &MonotoneMap {
                        hidden: 4,
                        params: p.to_vec(),
                    },
                    red,
                )
                .unwrap()
                .value
            };
            let nu = finite_difference_gradient(fu, &u, 1e-7).unwrap();
            let nm = finite_difference_gradient(fm, &m.params, 1e-7).unwrap();
            assert!(relative_error(&got.d_u, &nu, 1e-6) < 1e-4);
            assert!(relative_error(&got.d_map, &nm, 1e-6) < 1e-4);
        }
    }

    #[test]
    fn equal_scores_give_ln_two() {
        let c = soft_conf_loss(&[0.7; 9], 10.0, 0.1, false).unwrap();
        assert!((c.value - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(soft_conf_loss(&[], 10.0, 0.1, true).is_err());
    }

    #[test]
    fn small_kappa_keeps_only_exceedances() {
        let s = [0.1, 0.5, 2.0, 3.0];
        let q = crate::numerics::soft_quantile(&s, 10.0).unwrap();
        let kappa = 1e-4;
        let got = soft_conf_loss(&s, 10.0, kappa, true).unwrap().value;
        let expected: f64 = s.iter().map(|&v| (v - q).max(0.0) / kappa).sum::<f64>() / 4.0;
        assert!((got - expected).abs() / expected < 1e-6);
    }

    #[test]
    fn conf_gradient_matches_finite_differences() {
        let mut rng = RngStream::new(6, 0).rng();
        for _ in 0..100 {
            let s: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..2.0)).collect();
            let got = soft_conf_loss(&s, 10.0, 0.1, false).unwrap();
            let f = |v: &[f64]| soft_conf_loss(v, 10.0, 0.1, false).unwrap().value;
            let numeric = finite_difference_gradient(f, &s, 1e-6).unwrap();
            assert!(relative_error(&got.d_scores, &numeric, 1e-8) < 1e-4);
        }
    }

    #[test]
    fn stopgrad_drops_quantile_path() {
        let s = [0.2, 0.9, 1.4, 0.05, 2.2];
        let got = soft_conf_loss(&s, 10.0, 0.1, true).unwrap();
        // explicit constant-Q computation
        let q = got.quantile;
        let f = |v: &[f64]| {
            v.iter().map(|&x| softplus((x - q) / 0.1, 1.0)).sum::<f64>() / v.len() as f64
        };
        let numeric = finite_difference_gradient(f, &s, 1e-6).unwrap();
        assert!(relative_error(&got.d_scores, &numeric, 1e-8) < 1e-6);
        let full = soft_conf_loss(&s, 10.0, 0.1, false).unwrap();
        assert_eq!(full.value, got.value);
        assert!(relative_error(&full.d_scores, &got.d_scores, 1e-8) > 1e-3);
    }

    proptest! {
        #[test]
        fn conf_permutation_invariant(seed in 0u64..5000) {
            let mut rng = RngStream::new(seed, 0).rng();
            let s: Vec<f64> = (0..10).map(|_| rng.random_range(0.0..3.0)).collect();
            let mut t = s.clone();
            t.shuffle(&mut rng);
            let a = soft_conf_loss(&s, 10.0, 0.1, false).unwrap().value;
            let b = soft_conf_loss(&t, 10.0, 0.1, false).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
