use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::generate::{
    add, gaussian3, norm, random_unit, rotate, scale, sub, write_geometry, Vec3,
};
use super::{build_edges, Dataset, Segment};
use crate::error::{Error, Result};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// I.i.d. coordinate noise with standard deviation `magnitude`.
    Gaussian,
    /// `ceil(magnitude)` exchanges of the centered conformations of two
    /// equal-length loop windows per chain.
    SegmentSwap,
    /// Rigid rotation by `magnitude` radians of one contiguous block (a
    /// quarter of the chain) about its centroid.
    BlockRotate,
    /// Moving average over `2 * round(magnitude) + 1` positions.
    Blur,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 4] = [
        PerturbationKind::Gaussian,
        PerturbationKind::SegmentSwap,
        PerturbationKind::BlockRotate,
        PerturbationKind::Blur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::Gaussian => "gaussian",
            PerturbationKind::SegmentSwap => "segment_swap",
            PerturbationKind::BlockRotate => "block_rotate",
            PerturbationKind::Blur => "blur",
        }
    }
}

/// Moves the predicted coordinates and recomputes targets and geometry
/// features against the untouched reference coordinates.
pub fn perturb(ds: &Dataset, kind: PerturbationKind, magnitude: f64, seed: u64) -> Result<Dataset> {
    let (Some(pred), Some(reference)) = (&ds.chain_coords, &ds.metadata.reference_coords) else {
        return Err(Error::Domain(
            "perturb requires chain and reference coordinates".into(),
        ));
    };
    if !(magnitude > 0.0 && magnitude.is_finite()) {
        return Err(Error::Domain(format!(
            "perturbation magnitude must be positive, got {magnitude}"
        )));
    }
    let root = RngStream::new(seed, 3);
    let mut coords = pred.clone();
    for g in 0..ds.n_graphs() {
        let range = ds.graph_nodes(g);
        let mut rng = root.child(g as u64).rng();
        let chain = &mut coords[range.clone()];
        match kind {
            PerturbationKind::Gaussian => {
                for c in chain.iter_mut() {
                    *c = add(*c, scale(gaussian3(&mut rng), magnitude));
                }
            }
            PerturbationKind::SegmentSwap => {
                let runs = loop_runs(&ds.nodes[range.clone()]);
                for _ in 0..magnitude.ceil() as usize {
                    swap_windows(chain, &runs, &mut rng);
                }
            }
            PerturbationKind::BlockRotate => {
                let len = chain.len();
                let block = (len / 4).max(3).min(len);
                let start = rng.random_range(0..=len - block);
                let axis = random_unit(&mut rng);
                let part = &mut chain[start..start + block];
                let centroid = scale(
                    part.iter().fold([0.0; 3], |a, c| add(a, *c)),
                    1.0 / block as f64,
                );
                for c in part.iter_mut() {
                    *c = add(centroid, rotate(sub(*c, centroid), axis, magnitude));
                }
            }
            PerturbationKind::Blur => {
                let half = (magnitude.round() as usize).max(1);
                let src = chain.to_vec();
                for (i, c) in chain.iter_mut().enumerate() {
                    let lo = i.saturating_sub(half);
                    let hi = (i + half).min(src.len() - 1);
                    let sum = src[lo..=hi].iter().fold([0.0; 3], |a, v| add(a, *v));
                    *c = scale(sum, 1.0 / (hi - lo + 1) as f64);
                }
            }
        }
    }

    let mut out = ds.clone();
    for (i, node) in out.nodes.iter_mut().enumerate() {
        node.target_y = norm(sub(coords[i], reference[i]));
    }
    for g in 0..ds.n_graphs() {
        let range = ds.graph_nodes(g);
        write_geometry(&mut out.nodes[range.clone()], &coords[range]);
    }
    out.chain_coords = Some(coords);
    out.metadata
        .history
        .push(format!("perturb:{}:{magnitude}:{seed}", kind.name()));
    if let Some(p) = ds.metadata.edge_params {
        let history = out.metadata.history.clone();
        out = build_edges(&out, p.chain_window, p.spatial_radius)?;
        out.metadata.history = history;
    }
    Ok(out)
}

/// Maximal runs of loop-tagged nodes, as local `(start, len)`.
fn loop_runs(nodes: &[super::Node]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < nodes.len() {
        if nodes[i].group_tag == Segment::Loop {
            let start = i;
            while i < nodes.len() && nodes[i].group_tag == Segment::Loop {
                i += 1;
            }
            if i - start >= 3 {
                runs.push((start, i - start));
            }
        } else {
            i += 1;
        }
    }
    runs
}

fn swap_windows(chain: &mut [Vec3], runs: &[(usize, usize)], rng: &mut rand_chacha::ChaCha8Rng) {
    if runs.len() < 2 {
        return;
    }
    let mut picks: Vec<usize> = (0..runs.len()).collect();
    picks.shuffle(rng);
    let (a, b) = (runs[picks[0]], runs[picks[1]]);
    let w = a.1.min(b.1).min(6);
    let sa = a.0 + rng.random_range(0..=a.1 - w);
    let sb = b.0 + rng.random_range(0..=b.1 - w);
    let centroid = |s: usize, chain: &[Vec3]| {
        scale(
            chain[s..s + w].iter().fold([0.0; 3], |acc, c| add(acc, *c)),
            1.0 / w as f64,
        )
    };
    let (ca, cb) = (centroid(sa, chain), centroid(sb, chain));
    for k in 0..w {
        let pa = chain[sa + k];
        let pb = chain[sb + k];
        chain[sa + k] = add(ca, sub(pb, cb));
        chain[sb + k] = add(cb, sub(pa, ca));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionMode {
    Shuffle,
    Invert,
    Noise(f64),
}

impl CorruptionMode {
    pub fn name(&self) -> String {
        match self {
            CorruptionMode::Shuffle => "shuffle".into(),
            CorruptionMode::Invert => "invert".into(),
            CorruptionMode::Noise(s) => format!("noise({s})"),
        }
    }
}

/// Corrupts only `prior_b`; every other field is left untouched.
pub fn corrupt_priors(ds: &Dataset, mode: CorruptionMode, seed: u64) -> Result<Dataset> {
    let mut rng = RngStream::new(seed, 4).rng();
    let mut out = ds.clone();
    match mode {
        CorruptionMode::Shuffle => {
            let mut priors = ds.priors();
            priors.shuffle(&mut rng);
            for (n, b) in out.nodes.iter_mut().zip(priors) {
                n.prior_b = b;
            }
        }
        CorruptionMode::Invert => {
            for n in out.nodes.iter_mut() {
                n.prior_b = 1.0 - n.prior_b;
            }
        }
        CorruptionMode::Noise(sigma) => {
            let dist = Normal::new(0.0, sigma)
                .ok()
                .filter(|_| sigma.is_finite() && sigma >= 0.0)
                .ok_or_else(|| {
                    Error::Domain(format!("noise sigma must be finite and >= 0, got {sigma}"))
                })?;
            for n in out.nodes.iter_mut() {
                n.prior_b = (n.prior_b + dist.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }
    out.metadata
        .history
        .push(format!("corrupt:{}:{seed}", mode.name()));
    Ok(out)
}
