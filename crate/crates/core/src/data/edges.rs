use super::generate::{norm, sub};
use super::{Dataset, EdgeParams};
use crate::error::{Error, Result};

/// Rebuilds the edge set as sequence neighbors within `chain_window`
/// positions plus spatial neighbors within `spatial_radius`, restricted to
/// pairs inside the same graph.
pub fn build_edges(ds: &Dataset, chain_window: usize, spatial_radius: f64) -> Result<Dataset> {
    if chain_window == 0 {
        return Err(Error::config("chain_window", "must be at least 1"));
    }
    if !(spatial_radius >= 0.0) {
        return Err(Error::config("spatial_radius", "must be nonnegative"));
    }
    let coords = match (&ds.chain_coords, spatial_radius > 0.0) {
        (Some(c), true) => Some(c),
        (None, true) => {
            return Err(Error::Domain(
                "spatial edges require chain coordinates".into(),
            ))
        }
        _ => None,
    };
    let mut edges = Vec::new();
    for g in 0..ds.n_graphs() {
        let range = ds.graph_nodes(g);
        for i in range.clone() {
            for j in i + 1..range.end {
                let seq = j - i <= chain_window;
                let spatial = coords.is_some_and(|c| norm(sub(c[i], c[j])) <= spatial_radius);
                if seq || spatial {
                    edges.push((i, j));
                }
            }
        }
    }
    let mut out = ds.clone();
    out.edges = edges;
    out.metadata.edge_params = Some(EdgeParams {
        chain_window,
        spatial_radius,
    });
    Ok(out)
}
