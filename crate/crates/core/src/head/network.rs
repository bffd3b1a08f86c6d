use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{HeadConfig, NigParams};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

const LN_EPS: f64 = 1e-5;
pub const N_OUTPUTS: usize = 5;

/// Node inputs and neighbor lists for one or more graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub dim: usize,
    /// Row-major `n x dim`.
    pub x: Vec<f64>,
    pub neighbors: Vec<Vec<usize>>,
    /// Dataset index of each local node.
    pub node_ids: Vec<usize>,
}

impl GraphInput {
    pub fn new(x: Vec<f64>, dim: usize, neighbors: Vec<Vec<usize>>) -> Result<Self> {
        let n = neighbors.len();
        if dim == 0 || x.len() != n * dim {
            return Err(Error::Dimension(format!(
                "{} inputs for {n} nodes of width {dim}",
                x.len()
            )));
        }
        if let Some(bad) = neighbors.iter().flatten().find(|&&j| j >= n) {
            return Err(Error::Dimension(format!(
                "neighbor index {bad} out of range for {n} nodes"
            )));
        }
        Ok(GraphInput {
            dim,
            x,
            neighbors,
            node_ids: (0..n).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// One input per graph, features followed by the prior channel.
    pub fn per_graph(ds: &Dataset, use_prior: bool) -> Vec<GraphInput> {
        let adj = ds.adjacency();
        let dim = ds.feature_dim() + 1;
        (0..ds.n_graphs())
            .map(|g| {
                let range = ds.graph_nodes(g);
                let start = range.start;
                let mut x = Vec::with_capacity(range.len() * dim);
                let mut neighbors = Vec::with_capacity(range.len());
                for i in range.clone() {
                    let node = &ds.nodes[i];
                    x.extend_from_slice(&node.features);
                    x.push(if use_prior { node.prior_b } else { 0.0 });
                    neighbors.push(adj[i].iter().map(|&j| j - start).collect());
                }
                GraphInput {
                    dim,
                    x,
                    neighbors,
                    node_ids: range.collect(),
                }
            })
            .collect()
    }

    /// Disjoint union of several inputs.
    pub fn concat(parts: &[&GraphInput]) -> Result<GraphInput> {
        let dim = parts.first().map_or(1, |p| p.dim);
        let mut out = GraphInput {
            dim,
            x: Vec::new(),
            neighbors: Vec::new(),
            node_ids: Vec::new(),
        };
        for p in parts {
            if p.dim != dim {
                return Err(Error::Dimension(format!(
                    "input widths {} and {dim}",
                    p.dim
                )));
            }
            let offset = out.len();
            out.x.extend_from_slice(&p.x);
            out.neighbors.extend(
                p.neighbors
                    .iter()
                    .map(|nb| nb.iter().map(|&j| j + offset).collect()),
            );
            out.node_ids.extend_from_slice(&p.node_ids);
        }
        Ok(out)
    }

    pub fn whole(ds: &Dataset, use_prior: bool) -> GraphInput {
        let parts = Self::per_graph(ds, use_prior);
        let refs: Vec<&GraphInput> = parts.iter().collect();
        Self::concat(&refs).expect("uniform widths")
    }
}

/// Offsets of one graph layer inside the flat weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub d_in: usize,
    pub d_out: usize,
    pub w_self: usize,
    pub w_msg: usize,
    pub bias: usize,
    /// Gain and shift offsets when layer normalization is on.
    pub norm: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadParams {
    pub config: HeadConfig,
    pub input_dim: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub nig: Vec<NigParams>,
    pub risk_logit: Vec<f64>,
    pub raw: Vec<[f64; N_OUTPUTS]>,
}

struct LayerCache {
    h_in: Vec<f64>,
    agg: Vec<f64>,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    pre_relu: Vec<f64>,
}

/// Intermediate activations kept for the backward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    hidden: Vec<f64>,
    width: usize,
}

impl ForwardCache {
    /// Final node states, row-major `n x width`.
    pub fn hidden(&self) -> (&[f64], usize) {
        (&self.hidden, self.width)
    }
}

fn layouts(config: &HeadConfig, input_dim: usize) -> (Vec<LayerLayout>, usize, usize) {
    let mut off = 0;
    let mut d_in = input_dim;
    let mut out = Vec::with_capacity(config.widths.len());
    for &d_out in &config.widths {
        let w_self = off;
        let w_msg = w_self + d_out * d_in;
        let bias = w_msg + d_out * d_in;
        off = bias + d_out;
        let norm = if config.layer_norm {
            let g = off;
            off += 2 * d_out;
            Some((g, g + d_out))
        } else {
            None
        };
        out.push(LayerLayout {
            d_in,
            d_out,
            w_self,
            w_msg,
            bias,
            norm,
        });
        d_in = d_out;
    }
    let readout = off;
    let total = readout + N_OUTPUTS * d_in + N_OUTPUTS;
    (out, readout, total)
}

fn mean_aggregate(h: &[f64], d: usize, neighbors: &[Vec<usize>]) -> Vec<f64> {
    let mut agg = vec![0.0; h.len()];
    for (i, nb) in neighbors.iter().enumerate() {
        if nb.is_empty() {
            continue;
        }
        let row = &mut agg[i * d..(i + 1) * d];
        for &j in nb {
            for (a, v) in row.iter_mut().zip(&h[j * d..(j + 1) * d]) {
                *a += v;
            }
        }
        let inv = 1.0 / nb.len() as f64;
        row.iter_mut().for_each(|a| *a *= inv);
    }
    agg
}

impl HeadParams {
    pub fn zeros(config: HeadConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::config("head.input_dim", "must be positive"));
        }
        let (layers, _, total) = layouts(&config, input_dim);
        let mut weights = vec![0.0; total];
        for l in &layers {
            if let Some((g, _)) = l.norm {
                weights[g..g + l.d_out].fill(1.0);
            }
        }
        Ok(HeadParams {
            config,
            input_dim,
            weights,
        })
    }

    /// Uniform `±1/sqrt(fan_in)` weights and biases; unit gains, zero shifts.
    pub fn init(config: HeadConfig, input_dim: usize) -> Result<Self> {
        let mut p = Self::zeros(config, input_dim)?;
        let mut rng = RngStream::new(p.config.init_seed, 0x4845_4144).rng();
        let (layers, readout, total) = p.layout();
        for l in &layers {
            let bound = 1.0 / (l.d_in as f64).sqrt();
            for w in &mut p.weights[l.w_self..l.bias + l.d_out] {
                *w = rng.random_range(-bound..bound);
            }
        }
        let d_last = *p.config.widths.last().expect("validated");
        let bound = 1.0 / (d_last as f64).sqrt();
        for w in &mut p.weights[readout..total] {
            *w = rng.random_range(-bound..bound);
        }
        Ok(p)
    }

    pub fn layout(&self) -> (Vec<LayerLayout>, usize, usize) {
        layouts(&self.config, self.input_dim)
    }

    pub fn n_params(&self) -> usize {
        self.weights.len()
    }

    fn readout_bias_index(&self, channel: usize) -> usize {
        self.weights.len() - N_OUTPUTS + channel
    }

    pub fn set_output_bias(&mut self, channel: usize, value: f64) {
        let i = self.readout_bias_index(channel);
        self.weights[i] = value;
    }

    /// Overwrites the risk-logit readout row.
    pub fn set_risk_readout(&mut self, weights: &[f64], bias: f64) -> Result<()> {
        let (_, readout, _) = self.layout();
        let d = *self.config.widths.last().expect("validated");
        if weights.len() != d {
            return Err(Error::Dimension(format!(
                "risk readout expects {d} weights, got {}",
                weights.len()
            )));
        }
        let row = readout + 4 * d;
        self.weights[row..row + d].copy_from_slice(weights);
        self.set_output_bias(4, bias);
        Ok(())
    }

    pub fn forward(&self, input: &GraphInput) -> Result<HeadOutput> {
        self.forward_cached(input).map(|(out, _)| out)
    }

    pub fn predict(&self, ds: &Dataset) -> Result<HeadOutput> {
        self.forward(&GraphInput::whole(ds, self.config.use_prior_input))
    }

    pub fn forward_cached(&self, input: &GraphInput) -> Result<(HeadOutput, ForwardCache)> {
        if input.dim != self.input_dim {
            return Err(Error::Dimension(format!(
                "head expects input width {}, got {}",
                self.input_dim, input.dim
            )));
        }
        let n = input.len();
        let w = &self.weights;
        let (layers, readout, _) = self.layout();
        let mut h = input.x.clone();
        let mut caches = Vec::with_capacity(layers.len());
        for l in &layers {
            let (di, dout) = (l.d_in, l.d_out);
            let agg = mean_aggregate(&h, di, &input.neighbors);
            let mut z = vec![0.0; n * dout];
            for i in 0..n {
                let hi = &h[i * di..(i + 1) * di];
                let ai = &agg[i * di..(i + 1) * di];
                for o in 0..dout {
                    let ws = &w[l.w_self + o * di..l.w_self + (o + 1) * di];
                    let wm = &w[l.w_msg + o * di..l.w_msg + (o + 1) * di];
                    let mut s = w[l.bias + o];
                    for k in 0..di {
                        s += ws[k] * hi[k] + wm[k] * ai[k];
                    }
                    z[i * dout + o] = s;
                }
            }
            let mut xhat = Vec::new();
            let mut inv_std = Vec::new();
            if let Some((g, sh)) = l.norm {
                xhat = vec![0.0; n * dout];
                inv_std = vec![0.0; n];
                for i in 0..n {
                    let row = &mut z[i * dout..(i + 1) * dout];
                    let m = row.iter().sum::<f64>() / dout as f64;
                    let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / dout as f64;
                    let is = 1.0 / (var + LN_EPS).sqrt();
                    inv_std[i] = is;
                    for o in 0..dout {
                        let xh = (row[o] - m) * is;
                        xhat[i * dout + o] = xh;
                        row[o] = w[g + o] * xh + w[sh + o];
                    }
                }
            }
            let next: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            caches.push(LayerCache {
                h_in: h,
                agg,
                xhat,
                inv_std,
                pre_relu: z,
            });
            h = next;
        }
        let d = layers.last().expect("validated").d_out;
        let bias = readout + N_OUTPUTS * d;
        let mut raw = Vec::with_capacity(n);
        for i in 0..n {
            let hi = &h[i * d..(i + 1) * d];
            let mut r = [0.0; N_OUTPUTS];
            for (c, rc) in r.iter_mut().enumerate() {
                let row = &w[readout + c * d..readout + (c + 1) * d];
                *rc = w[bias + c] + row.iter().zip(hi).map(|(a, b)| a * b).sum::<f64>();
            }
            raw.push(r);
        }
        let out = HeadOutput {
            nig: raw.iter().map(NigParams::from_raw).collect(),
            risk_logit: raw.iter().map(|r| r[4]).collect(),
            raw,
        };
        Ok((
            out,
            ForwardCache {
                layers: caches,
                hidden: h,
                width: d,
            },
        ))
    }

    /// Vector-Jacobian product: gradient of the flat weights given `dL/draw` per node.
    pub fn backward(
        &self,
        input: &GraphInput,
        cache: &ForwardCache,
        d_raw: &[[f64; N_OUTPUTS]],
    ) -> Result<Vec<f64>> {
        let n = input.len();
        if d_raw.len() != n {
            return Err(Error::Dimension(format!(
                "{} output gradients for {n} nodes",
                d_raw.len()
            )));
        }
        let w = &self.weights;
        let mut grad = vec![0.0; w.len()];
        let (layers, readout, _) = self.layout();
        let d = cache.width;
        let bias = readout + N_OUTPUTS * d;
        let mut dh = vec![0.0; n * d];
        for (i, dr) in d_raw.iter().enumerate() {
            let hi = &cache.hidden[i * d..(i + 1) * d];
            let dhi = &mut dh[i * d..(i + 1) * d];
            for (c, &g) in dr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[bias + c] += g;
                let row = readout + c * d;
                for k in 0..d {
                    grad[row + k] += g * hi[k];
                    dhi[k] += g * w[row + k];
                }
            }
        }
        for (l, lc) in layers.iter().zip(&cache.layers).rev() {
            let (di, dout) = (l.d_in, l.d_out);
            let mut dz: Vec<f64> = dh
                .iter()
                .zip(&lc.pre_relu)
                .map(|(g, &a)| if a > 0.0 { *g } else { 0.0 })
                .collect();
            if let Some((g, sh)) = l.norm {
                for i in 0..n {
                    let row = &mut dz[i * dout..(i + 1) * dout];
                    let xh = &lc.xhat[i * dout..(i + 1) * dout];
                    let mut dxhat = vec![0.0; dout];
                    for o in 0..dout {
                        grad[g + o] += row[o] * xh[o];
                        grad[sh + o] += row[o];
                        dxhat[o] = row[o] * w[g + o];
                    }
                    let m1 = dxhat.iter().sum::<f64>() / dout as f64;
                    let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / dout as f64;
                    for o in 0..dout {
                        row[o] = lc.inv_std[i] * (dxhat[o] - m1 - xh[o] * m2);
                    }
                }
            }
            let mut dh_in = vec![0.0; n * di];
            let mut dagg = vec![0.0; n * di];
            for i in 0..n {
                let hi = &lc.h_in[i * di..(i + 1) * di];
                let ai = &lc.agg[i * di..(i + 1) * di];
                for o in 0..dout {
                    let g = dz[i * dout + o];
                    if g == 0.0 {
                        continue;
                    }
                    grad[l.bias + o] += g;
                    let ws = l.w_self + o * di;
                    let wm = l.w_msg + o * di;
                    for k in 0..di {
                        grad[ws + k] += g * hi[k];
                        grad[wm + k] += g * ai[k];
                        dh_in[i * di + k] += g * w[ws + k];
                        dagg[i * di + k] += g * w[wm + k];
                    }
                }
            }
            for (i, nb) in input.neighbors.iter().enumerate() {
                if nb.is_empty() {
                    continue;
                }
                let inv = 1.0 / nb.len() as f64;
                for &j in nb {
                    for k in 0..di {
                        dh_in[j * di + k] += inv * dagg[i * di + k];
                    }
                }
            }
            dh = dh_in;
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_gradient, relative_error};
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_graph(n: usize, dim: usize, seed: u64) -> GraphInput {
        let mut rng = RngStream::new(seed, 1).rng();
        let x: Vec<f64> = (0..n * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.25) {
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        GraphInput::new(x, dim, neighbors).unwrap()
    }

    fn small_config(layer_norm: bool, seed: u64) -> HeadConfig {
        HeadConfig {
            widths: vec![4, 6, 3],
            layer_norm,
            use_prior_input: true,
            init_seed: seed,
        }
    }

    #[test]
    fn zero_weights_give_log_two() {
        let g = random_graph(7, 3, 0);
        let p = HeadParams::zeros(
            HeadConfig {
                layer_norm: false,
                ..small_config(false, 0)
            },
            3,
        )
        .unwrap();
        let out = p.forward(&g).unwrap();
        let ln2 = std::f64::consts::LN_2;
        for q in &out.nig {
            assert_eq!(q.mu, 0.0);
            assert!(
                (q.nu - ln2).abs() < 1e-15
                    && (q.alpha - 1.0 - ln2).abs() < 1e-15
                    && (q.beta - ln2).abs() < 1e-15
            );
        }
    }

    #[test]
    fn isolated_node_ignores_others() {
        let mut g = random_graph(6, 3, 1);
        for nb in &mut g.neighbors {
            nb.retain(|&j| j != 0);
        }
        g.neighbors[0].clear();
        let p = HeadParams::init(small_config(true, 3), 3).unwrap();
        let before = p.forward(&g).unwrap().raw[0];
        for v in &mut g.x[3..] {
            *v += 1.7;
        }
        assert_eq!(p.forward(&g).unwrap().raw[0], before);
    }

    #[test]
    fn dimension_mismatch() {
        let g = random_graph(4, 3, 2);
        let p = HeadParams::init(small_config(true, 0), 5).unwrap();
        assert!(matches!(p.forward(&g), Err(Error::Dimension(_))));
        assert!(GraphInput::new(vec![0.0; 5], 2, vec![vec![]; 3]).is_err());
        assert!(GraphInput::new(vec![0.0; 4], 2, vec![vec![5], vec![]]).is_err());
    }

    #[test]
    fn per_graph_inputs_match_dataset() {
        let ds = crate::data::gen_chain_dataset(&crate::data::GeneratorConfig {
            n_chains: 3,
            chain_length: 10,
            ..Default::default()
        })
        .unwrap();
        let whole = GraphInput::whole(&ds, true);
        assert_eq!(whole.len(), ds.len());
        assert_eq!(whole.neighbors, ds.adjacency());
        assert_eq!(whole.x[ds.feature_dim()], ds.nodes[0].prior_b);
        let masked = GraphInput::whole(&ds, false);
        assert_eq!(masked.x[ds.feature_dim()], 0.0);
    }

    fn check_gradient(layer_norm: bool, seed: u64) {
        let g = random_graph(9, 3, seed);
        let p = HeadParams::init(small_config(layer_norm, seed), 3).unwrap();
        let mut rng = RngStream::new(seed, 2).rng();
        let coef: Vec<[f64; 5]> = (0..g.len())
            .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
            .collect();
        // L = sum c . raw + 0.5 |raw|^2
        let loss = |w: &[f64]| {
            let q = HeadParams {
                weights: w.to_vec(),
                ..p.clone()
            };
            let out = q.forward(&g).unwrap();
            out.raw
                .iter()
                .zip(&coef)
                .map(|(r, c)| (0..5).map(|k| c[k] * r[k] + 0.5 * r[k] * r[k]).sum::<f64>())
                .sum::<f64>()
        };
        let (out, cache) = p.forward_cached(&g).unwrap();
        let d_raw: Vec<[f64; 5]> = out
            .raw
            .iter()
            .zip(&coef)
            .map(|(r, c)| std::array::from_fn(|k| c[k] + r[k]))
            .collect();
        let analytic = p.backward(&g, &cache, &d_raw).unwrap();
        let numeric = finite_difference_gradient(loss, &p.weights, 1e-6).unwrap();
        let err = relative_error(&analytic, &numeric, 1e-8);
        assert!(err < 1e-4, "relative error {err} (layer_norm={layer_norm})");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..4 {
            check_gradient(false, seed);
            check_gradient(true, seed);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn permutation_equivariant(seed in 0u64..10_000, n in 2usize..12) {
            let g = random_graph(n, 3, seed);
            let p = HeadParams::init(small_config(seed % 2 == 0, seed), 3).unwrap();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut RngStream::new(seed, 3).rng());
            // node i of the original becomes node perm[i]
            let mut x = vec![0.0; n * 3];
            let mut neighbors = vec![Vec::new(); n];
            for i in 0..n {
                x[perm[i] * 3..perm[i] * 3 + 3].copy_from_slice(&g.x[i * 3..i * 3 + 3]);
                neighbors[perm[i]] = g.neighbors[i].iter().map(|&j| perm[j]).collect();
            }
            let h = GraphInput::new(x, 3, neighbors).unwrap();
            let a = p.forward(&g).unwrap();
            let b = p.forward(&h).unwrap();
            for (i, &pi) in perm.iter().enumerate() {
                for k in 0..5 {
                    prop_assert!((a.raw[i][k] - b.raw[pi][k]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn outputs_satisfy_constraints(seed in 0u64..10_000, scale in 0.1f64..200.0) {
            let g = random_graph(8, 3, seed);
            let mut p = HeadParams::init(small_config(seed % 2 == 1, seed), 3).unwrap();
            p.weights.iter_mut().for_each(|w| *w *= scale);
            for q in p.forward(&g).unwrap().nig {
                prop_assert!(q.is_valid(), "{:?}", q);
            }
        }
    }
}
