//! Synthetic graph-structured regression corpora.
//!
//! Two generators are provided. Chain data mimics per-residue error
//! prediction: a reference 3D chain, a noised "predicted" copy whose
//! per-node displacement is the regression target, and a disorder prior
//! that flags the noisier segments. Tabular data is heteroscedastic
//! regression with a prior that flags extreme covariates. Both produce a
//! [`Dataset`] whose graphs are contiguous node ranges.

mod edges;
mod generate;
mod io;
mod perturb;
mod split;

pub use edges::build_edges;
pub use generate::{
    gen_chain_dataset, gen_tabular_dataset, geometry_feature_range, MIN_FEATURE_DIM,
};
pub use io::{
    from_json_str, load_dataset, save_dataset, to_json_string, write_nodes_csv, DATASET_VERSION,
};
pub use perturb::{corrupt_priors, perturb, CorruptionMode, PerturbationKind};
pub use split::{split, SplitMode};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Segment type of a node; for tabular data the three tertiles of the
/// second covariate reuse the same labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Helix,
    Sheet,
    Loop,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Helix, Segment::Sheet, Segment::Loop];

    pub fn name(self) -> &'static str {
        match self {
            Segment::Helix => "helix",
            Segment::Sheet => "sheet",
            Segment::Loop => "loop",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Segment::ALL.into_iter().find(|g| g.name() == s)
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Calibration,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub features: Vec<f64>,
    /// Volatility prior in [0, 1].
    pub prior_b: f64,
    /// Nonnegative per-node error.
    pub target_y: f64,
    pub group_tag: Segment,
    pub disorder_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Chain,
    Tabular,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeParams {
    pub chain_window: usize,
    pub spatial_radius: f64,
}

/// Generator parameters. `informativeness_eta` interpolates the disordered
/// noise scale between the ordered and disordered settings and blends the
/// prior between the disorder indicator and uniform noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_chains: usize,
    pub chain_length: usize,
    pub feature_dim: usize,
    pub ordered_noise_scale: f64,
    pub disordered_noise_scale: f64,
    pub informativeness_eta: f64,
    pub prior_noise: f64,
    /// Standard deviation of the noisy target copy carried as feature 0.
    pub signal_noise: f64,
    pub split_fractions: [f64; 3],
    pub split_mode: SplitMode,
    pub chain_window: usize,
    pub spatial_radius: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_chains: 30,
            chain_length: 40,
            feature_dim: 16,
            ordered_noise_scale: 0.3,
            disordered_noise_scale: 1.5,
            informativeness_eta: 1.0,
            prior_noise: 0.0,
            signal_noise: 0.5,
            split_fractions: [0.6, 0.2, 0.2],
            split_mode: SplitMode::FamilyAware,
            chain_window: 5,
            spatial_radius: 2.5,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::config(name, format!("must be positive, got {v}")))
            }
        };
        if self.n_chains == 0 {
            return Err(Error::config("n_chains", "must be at least 1"));
        }
        if self.chain_length < 4 {
            return Err(Error::config("chain_length", "must be at least 4"));
        }
        if self.feature_dim < MIN_FEATURE_DIM {
            return Err(Error::config(
                "feature_dim",
                format!("must be at least {MIN_FEATURE_DIM}"),
            ));
        }
        positive("ordered_noise_scale", self.ordered_noise_scale)?;
        positive("disordered_noise_scale", self.disordered_noise_scale)?;
        if !(0.0..=1.0).contains(&self.informativeness_eta) {
            return Err(Error::config("informativeness_eta", "must lie in [0, 1]"));
        }
        if self.informativeness_eta > 0.0 && self.disordered_noise_scale < self.ordered_noise_scale
        {
            return Err(Error::config(
                "disordered_noise_scale",
                "must be >= ordered_noise_scale when informativeness_eta > 0",
            ));
        }
        if !(0.0..=1.0).contains(&self.prior_noise) {
            return Err(Error::config("prior_noise", "must lie in [0, 1]"));
        }
        if !(self.signal_noise >= 0.0 && self.signal_noise.is_finite()) {
            return Err(Error::config("signal_noise", "must be nonnegative"));
        }
        validate_fractions(&self.split_fractions).map_err(|_| {
            Error::config(
                "split_fractions",
                format!(
                    "must be nonnegative and sum to 1, got {:?}",
                    self.split_fractions
                ),
            )
        })?;
        if self.chain_window == 0 {
            return Err(Error::config("chain_window", "must be at least 1"));
        }
        if !(self.spatial_radius >= 0.0) {
            return Err(Error::config("spatial_radius", "must be nonnegative"));
        }
        Ok(())
    }

    /// Noise scale applied to disordered nodes after the eta interpolation.
    pub fn effective_disordered_scale(&self) -> f64 {
        self.ordered_noise_scale
            + self.informativeness_eta * (self.disordered_noise_scale - self.ordered_noise_scale)
    }
}

pub(crate) fn validate_fractions(f: &[f64; 3]) -> Result<()> {
    let sum: f64 = f.iter().sum();
    if f.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "fractions",
            format!("{f:?} must be nonnegative and sum to 1"),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub kind: DatasetKind,
    pub generator: GeneratorConfig,
    /// `(start, len)` of each graph; graphs tile the node list in order.
    pub graphs: Vec<(usize, usize)>,
    /// Reference coordinates; `chain_coords` holds the predicted ones.
    pub reference_coords: Option<Vec<[f64; 3]>>,
    pub edge_params: Option<EdgeParams>,
    pub history: Vec<String>,
    /// Artifact version, config hash and seed stamped by the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<crate::report::Provenance>,
}

/// A graph-structured regression corpus. Edges are undirected, stored once
/// as `(i, j)` with `i < j`, never crossing graph boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub nodes: Vec<Node>,
    pub edges: Vec<(usize, usize)>,
    pub splits: Vec<Split>,
    pub chain_coords: Option<Vec<[f64; 3]>>,
    pub metadata: Metadata,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.features.len())
    }

    pub fn n_graphs(&self) -> usize {
        self.metadata.graphs.len()
    }

    pub fn graph_nodes(&self, g: usize) -> std::ops::Range<usize> {
        let (start, len) = self.metadata.graphs[g];
        start..start + len
    }

    /// Graph index of every node.
    pub fn graph_of_nodes(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for (g, &(start, len)) in self.metadata.graphs.iter().enumerate() {
            out[start..start + len].fill(g);
        }
        out
    }

    pub fn targets(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.target_y).collect()
    }

    pub fn priors(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.prior_b).collect()
    }

    pub fn nodes_in(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Graphs containing at least one node of the given split.
    pub fn graphs_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_graphs())
            .filter(|&g| self.graph_nodes(g).any(|i| self.splits[i] == split))
            .collect()
    }

    /// Undirected adjacency lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.len()];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.splits.len() != n {
            return Err(Error::Dimension(format!(
                "{} split tags for {n} nodes",
                self.splits.len()
            )));
        }
        let dim = self.feature_dim();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.features.len() != dim || node.features.iter().any(|f| !f.is_finite()) {
                return Err(Error::Domain(format!("node {i} has malformed features")));
            }
            if !(0.0..=1.0).contains(&node.prior_b) {
                return Err(Error::Domain(format!(
                    "node {i} prior_b {} outside [0,1]",
                    node.prior_b
                )));
            }
            if !(node.target_y >= 0.0 && node.target_y.is_finite()) {
                return Err(Error::Domain(format!(
                    "node {i} target_y {} invalid",
                    node.target_y
                )));
            }
        }
        let mut expected_start = 0;
        for &(start, len) in &self.metadata.graphs {
            if start != expected_start || len == 0 {
                return Err(Error::Domain("graphs must tile the node list".into()));
            }
            expected_start += len;
        }
        if expected_start != n {
            return Err(Error::Domain("graphs must tile the node list".into()));
        }
        let graph_of = self.graph_of_nodes();
        let mut prev = None;
        for &(i, j) in &self.edges {
            if i >= j || j >= n {
                return Err(Error::Domain(format!(
                    "edge ({i},{j}) not canonical or out of range"
                )));
            }
            if graph_of[i] != graph_of[j] {
                return Err(Error::Domain(format!("edge ({i},{j}) crosses graphs")));
            }
            if prev.is_some_and(|p| p >= (i, j)) {
                return Err(Error::Domain("edges must be sorted and unique".into()));
            }
            prev = Some((i, j));
        }
        for coords in [&self.chain_coords, &self.metadata.reference_coords]
            .into_iter()
            .flatten()
        {
            if coords.len() != n {
                return Err(Error::Dimension(
                    "coordinate count differs from node count".into(),
                ));
            }
        }
        Ok(())
    }
}
