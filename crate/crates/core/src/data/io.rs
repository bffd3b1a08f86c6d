use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Dataset, Metadata, Node, Segment, Split};
use crate::error::{Error, Result};

pub const DATASET_VERSION: &str = "calpro-dataset/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    version: String,
    /// `[features..., prior_b, target_y, group_tag, disorder_flag]`
    nodes: Vec<Vec<Value>>,
    edges: Vec<(usize, usize)>,
    splits: Vec<Split>,
    chain_coords: Option<Vec<[f64; 3]>>,
    metadata: Metadata,
}

fn node_row(n: &Node) -> Vec<Value> {
    let mut row: Vec<Value> = n.features.iter().map(|&f| Value::from(f)).collect();
    row.push(Value::from(n.prior_b));
    row.push(Value::from(n.target_y));
    row.push(Value::from(n.group_tag.name()));
    row.push(Value::from(n.disorder_flag));
    row
}

fn parse_row(i: usize, row: &[Value]) -> Result<Node> {
    let bad = |what: &str| Error::Parse {
        offset: 0,
        message: format!("node {i}: {what}"),
    };
    if row.len() < 4 {
        return Err(bad("row too short"));
    }
    let num = |v: &Value| v.as_f64().ok_or_else(|| bad("expected number"));
    let k = row.len() - 4;
    let features = row[..k].iter().map(num).collect::<Result<Vec<_>>>()?;
    let group_tag = row[k + 2]
        .as_str()
        .and_then(Segment::from_name)
        .ok_or_else(|| bad("unknown group tag"))?;
    let disorder_flag = row[k + 3]
        .as_bool()
        .ok_or_else(|| bad("expected boolean disorder flag"))?;
    Ok(Node {
        features,
        prior_b: num(&row[k])?,
        target_y: num(&row[k + 1])?,
        group_tag,
        disorder_flag,
    })
}

pub fn to_json_string(ds: &Dataset) -> Result<String> {
    let file = DatasetFile {
        version: DATASET_VERSION.into(),
        nodes: ds.nodes.iter().map(node_row).collect(),
        edges: ds.edges.clone(),
        splits: ds.splits.clone(),
        chain_coords: ds.chain_coords.clone(),
        metadata: ds.metadata.clone(),
    };
    serde_json::to_string(&file).map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })
}

pub fn from_json_str(text: &str) -> Result<Dataset> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
    match value.get("version").and_then(Value::as_str) {
        Some(DATASET_VERSION) => {}
        Some(other) => {
            return Err(Error::Version {
                found: other.into(),
                expected: DATASET_VERSION.into(),
            })
        }
        None => {
            return Err(Error::Parse {
                offset: 0,
                message: "missing `version`".into(),
            })
        }
    }
    let file: DatasetFile = serde_json::from_value(value).map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    let nodes = file
        .nodes
        .iter()
        .enumerate()
        .map(|(i, row)| parse_row(i, row))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset {
        nodes,
        edges: file.edges,
        splits: file.splits,
        chain_coords: file.chain_coords,
        metadata: file.metadata,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let text = to_json_string(ds)?;
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    from_json_str(&text)
}

/// Per-node CSV export for metrics tooling.
pub fn write_nodes_csv(ds: &Dataset, mut w: impl Write) -> std::io::Result<()> {
    writeln!(
        w,
        "node_id,graph,split,group_tag,disorder_flag,prior_b,target_y"
    )?;
    let graph_of = ds.graph_of_nodes();
    for (i, n) in ds.nodes.iter().enumerate() {
        let split = match ds.splits[i] {
            Split::Train => "train",
            Split::Calibration => "calibration",
            Split::Test => "test",
        };
        writeln!(
            w,
            "{i},{},{split},{},{},{},{}",
            graph_of[i],
            n.group_tag.name(),
            n.disorder_flag,
            n.prior_b,
            n.target_y
        )?;
    }
    Ok(())
}
