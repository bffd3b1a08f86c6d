use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{
    build_edges, split, Dataset, DatasetKind, GeneratorConfig, Metadata, Node, Segment, Split,
};
use crate::error::Result;
use crate::numerics::RngStream;

/// Feature layout: 0 noisy target copy, 1-3 segment one-hot, 4 relative
/// position, 5-8 geometry of the predicted chain, the rest nuisance noise.
pub const MIN_FEATURE_DIM: usize = 10;
const GEOMETRY: std::ops::Range<usize> = 5..9;

/// Feature columns recomputed from coordinates whenever they move.
pub fn geometry_feature_range() -> std::ops::Range<usize> {
    GEOMETRY
}

pub(crate) type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a).max(1e-12))
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Rodrigues rotation of `v` about unit `axis` by `angle` radians.
pub(crate) fn rotate(v: Vec3, axis: Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    let kxv = cross(axis, v);
    let kdv = dot(axis, v);
    add(
        add(scale(v, c), scale(kxv, s)),
        scale(axis, kdv * (1.0 - c)),
    )
}

pub(crate) fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    [
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    ]
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    normalize(gaussian3(rng))
}

/// Contiguous segment layout of one chain.
fn segment_layout(len: usize, rng: &mut ChaCha8Rng) -> Vec<(Segment, bool, usize)> {
    let mut out = Vec::new();
    let mut filled = 0;
    while filled < len {
        let u: f64 = rng.random();
        let (seg, lo, hi) = if u < 0.4 {
            (Segment::Helix, 6, 14)
        } else if u < 0.65 {
            (Segment::Sheet, 4, 8)
        } else {
            (Segment::Loop, 3, 10)
        };
        let l = rng.random_range(lo..=hi).min(len - filled);
        let disordered = seg == Segment::Loop && rng.random::<f64>() < 0.6;
        out.push((seg, disordered, l));
        filled += l;
    }
    out
}

fn reference_chain(layout: &[(Segment, bool, usize)], rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let total: usize = layout.iter().map(|s| s.2).sum();
    let mut coords = Vec::with_capacity(total);
    let mut pos = [0.0; 3];
    let mut dir = random_unit(rng);
    for &(seg, _, l) in layout {
        let axis = random_unit(rng);
        for _ in 0..l {
            if !coords.is_empty() {
                dir = match seg {
                    Segment::Helix => rotate(dir, axis, 100f64.to_radians()),
                    Segment::Sheet => normalize(add(dir, scale(gaussian3(rng), 0.1))),
                    Segment::Loop => normalize(add(dir, scale(gaussian3(rng), 0.8))),
                };
                pos = add(pos, dir);
            }
            coords.push(pos);
        }
    }
    coords
}

/// Spatially smooth unit-variance displacement field along a chain
/// (moving sum of i.i.d. normals over five neighbors, renormalized).
fn smooth_field(len: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    const HALF: usize = 2;
    let raw: Vec<Vec3> = (0..len).map(|_| gaussian3(rng)).collect();
    (0..len)
        .map(|i| {
            let lo = i.saturating_sub(HALF);
            let hi = (i + HALF).min(len - 1);
            let sum = raw[lo..=hi].iter().fold([0.0; 3], |acc, v| add(acc, *v));
            scale(sum, 1.0 / ((hi - lo + 1) as f64).sqrt())
        })
        .collect()
}

/// Geometry summaries of the predicted coordinates of one chain, written
/// into feature columns 5..9.
pub(crate) fn write_geometry(nodes: &mut [Node], coords: &[Vec3]) {
    const CONTACT_RADIUS: f64 = 2.5;
    let len = coords.len();
    for i in 0..len {
        let prev = if i > 0 {
            norm(sub(coords[i], coords[i - 1])) - 1.0
        } else {
            0.0
        };
        let next = if i + 1 < len {
            norm(sub(coords[i + 1], coords[i])) - 1.0
        } else {
            0.0
        };
        let span = if i > 0 && i + 1 < len {
            norm(sub(coords[i + 1], coords[i - 1])) / 2.0
        } else {
            0.5
        };
        let contacts = (0..len)
            .filter(|&j| j.abs_diff(i) > 2 && norm(sub(coords[i], coords[j])) <= CONTACT_RADIUS)
            .count();
        let f = &mut nodes[i].features;
        f[GEOMETRY.start] = prev;
        f[GEOMETRY.start + 1] = next;
        f[GEOMETRY.start + 2] = span;
        f[GEOMETRY.start + 3] = contacts as f64 / 10.0;
    }
}

fn blend_prior(cfg: &GeneratorConfig, indicator: f64, rng: &mut ChaCha8Rng) -> f64 {
    let eta = cfg.informativeness_eta;
    let informative = if eta < 1.0 {
        eta * indicator + (1.0 - eta) * rng.random::<f64>()
    } else {
        indicator
    };
    let b = if cfg.prior_noise > 0.0 {
        (1.0 - cfg.prior_noise) * informative + cfg.prior_noise * rng.random::<f64>()
    } else {
        informative
    };
    b.clamp(0.0, 1.0)
}

/// Chains with contiguous ordered/disordered segments. The target is the
/// per-node displacement between a noised "predicted" chain and the
/// reference chain.
pub fn gen_chain_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 0);
    let n = cfg.n_chains * cfg.chain_length;
    let mut nodes = Vec::with_capacity(n);
    let mut reference = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    let mut graphs = Vec::with_capacity(cfg.n_chains);
    let disordered_scale = cfg.effective_disordered_scale();

    for c in 0..cfg.n_chains {
        let mut rng = root.child(c as u64).rng();
        let layout = segment_layout(cfg.chain_length, &mut rng);
        let refc = reference_chain(&layout, &mut rng);
        let field = smooth_field(cfg.chain_length, &mut rng);
        let start = nodes.len();
        let mut chain_nodes = Vec::with_capacity(cfg.chain_length);
        let mut predc = Vec::with_capacity(cfg.chain_length);
        let mut i = 0;
        for &(seg, disordered, l) in &layout {
            for _ in 0..l {
                let sigma = if disordered {
                    disordered_scale
                } else {
                    cfg.ordered_noise_scale
                };
                let disp = scale(field[i], sigma);
                predc.push(add(refc[i], disp));
                let y = norm(disp);
                let mut features = vec![0.0; cfg.feature_dim];
                features[0] = y + cfg.signal_noise * rng.sample::<f64, _>(StandardNormal);
                features[1 + seg.index()] = 1.0;
                features[4] = i as f64 / (cfg.chain_length - 1) as f64;
                for f in features.iter_mut().skip(MIN_FEATURE_DIM - 1) {
                    *f = rng.sample(StandardNormal);
                }
                let prior_b = blend_prior(cfg, if disordered { 1.0 } else { 0.0 }, &mut rng);
                chain_nodes.push(Node {
                    features,
                    prior_b,
                    target_y: y,
                    group_tag: seg,
                    disorder_flag: disordered,
                });
                i += 1;
            }
        }
        write_geometry(&mut chain_nodes, &predc);
        nodes.extend(chain_nodes);
        reference.extend(refc);
        predicted.extend(predc);
        graphs.push((start, cfg.chain_length));
    }

    let ds = Dataset {
        splits: vec![Split::Train; nodes.len()],
        nodes,
        edges: Vec::new(),
        chain_coords: Some(predicted),
        metadata: Metadata {
            kind: DatasetKind::Chain,
            generator: cfg.clone(),
            graphs,
            reference_coords: Some(reference),
            edge_params: None,
            history: vec!["gen_chain".into()],
            provenance: None,
        },
    };
    let ds = build_edges(&ds, cfg.chain_window, cfg.spatial_radius)?;
    split(&ds, cfg.split_fractions, cfg.split_mode, cfg.seed)
}

/// Heteroscedastic tabular regression in blocks of `chain_length` rows.
/// The noise scale grows with `|x_0|`; the prior flags extreme `|x_0|`.
/// Edges join each row to its five nearest neighbors within its block.
pub fn gen_tabular_dataset(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed, 1);
    let mut nodes = Vec::new();
    let mut graphs = Vec::new();
    let mut edges = Vec::new();
    for block in 0..cfg.n_chains {
        let mut rng = root.child(block as u64).rng();
        let start = nodes.len();
        let mut xs = Vec::with_capacity(cfg.chain_length);
        for _ in 0..cfg.chain_length {
            let x: Vec<f64> = (0..cfg.feature_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let extremity = ((x[0].abs() - 0.5) / 1.5).clamp(0.0, 1.0);
            let sigma = cfg.ordered_noise_scale
                + cfg.informativeness_eta
                    * (cfg.disordered_noise_scale - cfg.ordered_noise_scale)
                    * extremity;
            let mean = 3.0 + x[1].sin() + 0.5 * x[2];
            let noise: f64 = rng.sample(StandardNormal);
            let y = (mean + sigma * noise).abs();
            let group_tag = if x[1] < -0.43 {
                Segment::Helix
            } else if x[1] > 0.43 {
                Segment::Loop
            } else {
                Segment::Sheet
            };
            let prior_b = if cfg.prior_noise > 0.0 {
                (1.0 - cfg.prior_noise) * extremity + cfg.prior_noise * rng.random::<f64>()
            } else {
                extremity
            };
            nodes.push(Node {
                features: x.clone(),
                prior_b,
                target_y: y,
                group_tag,
                disorder_flag: x[0].abs() > 1.28,
            });
            xs.push(x);
        }
        edges.extend(
            knn_edges(&xs, 5)
                .into_iter()
                .map(|(i, j)| (start + i, start + j)),
        );
        graphs.push((start, cfg.chain_length));
    }
    edges.sort_unstable();
    edges.dedup();
    let ds = Dataset {
        splits: vec![Split::Train; nodes.len()],
        nodes,
        edges,
        chain_coords: None,
        metadata: Metadata {
            kind: DatasetKind::Tabular,
            generator: cfg.clone(),
            graphs,
            reference_coords: None,
            edge_params: None,
            history: vec!["gen_tabular".into()],
            provenance: None,
        },
    };
    split(&ds, cfg.split_fractions, cfg.split_mode, cfg.seed)
}

fn knn_edges(xs: &[Vec<f64>], k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..xs.len() {
        let mut d: Vec<(f64, usize)> = (0..xs.len())
            .filter(|&j| j != i)
            .map(|j| {
                let dist: f64 = xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b).powi(2)).sum();
                (dist, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in d.iter().take(k) {
            out.push((i.min(j), i.max(j)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{median, spearman};

    fn small(seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_chains: 10,
            chain_length: 40,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn chain_dataset_is_valid() {
        let ds = gen_chain_dataset(&small(1)).unwrap();
        ds.validate().unwrap();
        assert_eq!(ds.len(), 400);
        assert_eq!(ds.n_graphs(), 10);
    }

    #[test]
    fn degenerate_blend_gives_indicator_prior() {
        let ds = gen_chain_dataset(&small(2)).unwrap();
        for n in &ds.nodes {
            assert_eq!(n.prior_b, if n.disorder_flag { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn disordered_mean_exceeds_ordered() {
        let mut wins = 0;
        for seed in 0..100 {
            let ds = gen_chain_dataset(&small(seed)).unwrap();
            let (mut d, mut o) = (Vec::new(), Vec::new());
            for n in &ds.nodes {
                if n.disorder_flag {
                    d.push(n.target_y)
                } else {
                    o.push(n.target_y)
                }
            }
            if !d.is_empty() && crate::numerics::mean(&d) > crate::numerics::mean(&o) {
                wins += 1;
            }
        }
        assert!(wins >= 99, "{wins}");
    }

    fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1
            } else {
                j += 1
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn equal_scales_give_identical_target_distributions() {
        let mut stats = Vec::new();
        for seed in 0..20 {
            let cfg = GeneratorConfig {
                ordered_noise_scale: 0.8,
                disordered_noise_scale: 0.8,
                n_chains: 40,
                seed,
                ..Default::default()
            };
            let ds = gen_chain_dataset(&cfg).unwrap();
            let (mut d, mut o) = (Vec::new(), Vec::new());
            for n in &ds.nodes {
                if n.disorder_flag {
                    d.push(n.target_y)
                } else {
                    o.push(n.target_y)
                }
            }
            stats.push(ks_statistic(&d, &o));
        }
        // two-sample KS critical value at 1% for ~400 vs ~1200 samples is ~0.095
        assert!(median(&stats) < 0.095, "{stats:?}");
    }

    #[test]
    fn ordered_errors_stochastically_dominated() {
        let cfg = GeneratorConfig {
            n_chains: 60,
            ..Default::default()
        };
        let ds = gen_chain_dataset(&cfg).unwrap();
        let (mut d, mut o) = (Vec::new(), Vec::new());
        for n in &ds.nodes {
            if n.disorder_flag {
                d.push(n.target_y)
            } else {
                o.push(n.target_y)
            }
        }
        for k in 1..100 {
            let t = crate::numerics::percentile(&d, k as f64 / 100.0);
            let cdf_o = o.iter().filter(|&&y| y <= t).count() as f64 / o.len() as f64;
            let cdf_d = d.iter().filter(|&&y| y <= t).count() as f64 / d.len() as f64;
            assert!(cdf_o >= cdf_d, "quantile {k}");
        }
    }

    #[test]
    fn tabular_prior_tracks_heteroscedasticity() {
        let residual_corr = |eta: f64, seed: u64| {
            let cfg = GeneratorConfig {
                informativeness_eta: eta,
                seed,
                ..Default::default()
            };
            let ds = gen_tabular_dataset(&cfg).unwrap();
            let resid: Vec<f64> = ds
                .nodes
                .iter()
                .map(|n| (n.target_y - (3.0 + n.features[1].sin() + 0.5 * n.features[2])).abs())
                .collect();
            spearman(&ds.priors(), &resid).unwrap().unwrap()
        };
        let strong: Vec<f64> = (0..10).map(|s| residual_corr(1.0, s)).collect();
        assert!(median(&strong) > 0.3, "{strong:?}");
        let none: Vec<f64> = (0..10).map(|s| residual_corr(0.0, s)).collect();
        // 95% band for a null rank correlation with n = 1200 is about ±0.057
        assert!(median(&none).abs() < 0.057, "{none:?}");
    }

    #[test]
    fn generation_is_deterministic() {
        let a = super::super::to_json_string(&gen_tabular_dataset(&small(5)).unwrap()).unwrap();
        let b = super::super::to_json_string(&gen_tabular_dataset(&small(5)).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = gen_chain_dataset(&small(5)).unwrap();
        assert_eq!(c, gen_chain_dataset(&small(5)).unwrap());
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = GeneratorConfig {
            split_fractions: [0.5, 0.2, 0.2],
            ..Default::default()
        };
        assert!(gen_chain_dataset(&bad).is_err());
        let bad = GeneratorConfig {
            ordered_noise_scale: 2.0,
            ..Default::default()
        };
        assert!(gen_chain_dataset(&bad).is_err());
    }
}
