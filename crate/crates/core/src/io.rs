//! Deterministic JSON dumps of compressed and augmented graphs.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::{AugInstance, AugNode, AugmentedGraph, EdgeRole, PrototypeNode};
use crate::error::{Error, Result};
use crate::model::{FeatureSet, InstanceNode, Interval, Level, LevelKind, StructuralTemporalGraph};
use crate::record::{ingest_all, AnalysisRecordFile};

pub const GRAPH_FORMAT: &str = "stg-graph";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedNodeDoc {
    pub id: String,
    pub level: LevelKind,
    pub chain_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
    pub features: FeatureSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeDoc {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<EdgeRole>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Instance,
    Prototype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedNodeDoc {
    pub id: String,
    pub role: NodeRole,
    pub level: LevelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GraphBody {
    Compressed {
        levels: Vec<LevelKind>,
        nodes: Vec<CompressedNodeDoc>,
        edges: Vec<EdgeDoc>,
    },
    Augmented {
        levels: Vec<LevelKind>,
        nodes: Vec<AugmentedNodeDoc>,
        edges: Vec<EdgeDoc>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub format: String,
    pub version: u32,
    #[serde(default)]
    pub title: String,
    #[serde(flatten)]
    pub body: GraphBody,
}

impl GraphDocument {
    pub fn from_stg(title: &str, g: &StructuralTemporalGraph) -> Self {
        let nodes = g
            .nodes()
            .map(|n| CompressedNodeDoc {
                id: n.id.clone(),
                level: n.level,
                chain_index: n.chain_index,
                start: n.interval.map(|i| i.start),
                end: n.interval.map(|i| i.end),
                features: n.features.clone(),
            })
            .collect();
        let edges = g
            .edges()
            .iter()
            .map(|(a, b)| EdgeDoc {
                source: a.clone(),
                target: b.clone(),
                role: Some(EdgeRole::Hierarchy),
            })
            .collect();
        GraphDocument {
            format: GRAPH_FORMAT.into(),
            version: GRAPH_VERSION,
            title: title.into(),
            body: GraphBody::Compressed {
                levels: g.level_kinds(),
                nodes,
                edges,
            },
        }
    }

    pub fn from_augmented(title: &str, a: &AugmentedGraph) -> Self {
        let ids: Vec<String> = a.nodes().iter().map(AugNode::display_id).collect();
        let nodes = a
            .nodes()
            .iter()
            .zip(&ids)
            .map(|(n, id)| match n {
                AugNode::Instance(i) => AugmentedNodeDoc {
                    id: id.clone(),
                    role: NodeRole::Instance,
                    level: i.level,
                    start: i.interval.map(|v| v.start),
                    end: i.interval.map(|v| v.end),
                    feature_name: None,
                    feature_value: None,
                },
                AugNode::Prototype(p) => AugmentedNodeDoc {
                    id: id.clone(),
                    role: NodeRole::Prototype,
                    level: p.level,
                    start: None,
                    end: None,
                    feature_name: Some(p.feature_name.clone()),
                    feature_value: Some(p.feature_value.clone()),
                },
            })
            .collect();
        let edges = a
            .edges()
            .iter()
            .map(|&(x, y)| EdgeDoc {
                source: ids[x].clone(),
                target: ids[y].clone(),
                role: a.edge_role(x, y),
            })
            .collect();
        GraphDocument {
            format: GRAPH_FORMAT.into(),
            version: GRAPH_VERSION,
            title: title.into(),
            body: GraphBody::Augmented {
                levels: a.levels().to_vec(),
                nodes,
                edges,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        if doc.format != GRAPH_FORMAT || doc.version != GRAPH_VERSION {
            return Err(Error::MalformedGraph(format!(
                "unsupported graph document {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc)
    }

    pub fn to_stg(&self) -> Result<StructuralTemporalGraph> {
        match &self.body {
            GraphBody::Compressed { levels, nodes, edges } => {
                let mut out: Vec<Level> = levels
                    .iter()
                    .map(|&kind| Level {
                        kind,
                        nodes: Vec::new(),
                    })
                    .collect();
                for n in nodes {
                    let li = levels.iter().position(|l| *l == n.level).ok_or_else(|| {
                        Error::MalformedGraph(format!("node {} on unlisted level", n.id))
                    })?;
                    let interval = match (n.start, n.end) {
                        (Some(s), Some(e)) => Some(Interval::new(s, e)),
                        (None, None) => None,
                        _ => {
                            return Err(Error::MalformedGraph(format!(
                                "node {} has a half-open interval",
                                n.id
                            )))
                        }
                    };
                    out[li].nodes.push(InstanceNode {
                        id: n.id.clone(),
                        level: n.level,
                        chain_index: n.chain_index,
                        interval,
                        features: n.features.clone(),
                    });
                }
                for level in &mut out {
                    level.nodes.sort_by_key(|n| n.chain_index);
                }
                StructuralTemporalGraph::new(
                    out,
                    edges.iter().map(|e| (e.source.clone(), e.target.clone())),
                )
            }
            GraphBody::Augmented { .. } => crate::augment::compress(&self.to_augmented()?),
        }
    }

    pub fn to_augmented(&self) -> Result<AugmentedGraph> {
        match &self.body {
            GraphBody::Compressed { .. } => crate::augment::augment(&self.to_stg()?),
            GraphBody::Augmented { levels, nodes, edges } => {
                let mut index = HashMap::new();
                let mut out = Vec::new();
                for n in nodes {
                    if index.insert(n.id.clone(), out.len()).is_some() {
                        return Err(Error::MalformedGraph(format!("duplicate node id {}", n.id)));
                    }
                    out.push(match n.role {
                        NodeRole::Instance => AugNode::Instance(AugInstance {
                            id: n.id.clone(),
                            level: n.level,
                            interval: match (n.start, n.end) {
                                (Some(s), Some(e)) => Some(Interval::new(s, e)),
                                _ => None,
                            },
                        }),
                        NodeRole::Prototype => AugNode::Prototype(PrototypeNode {
                            level: n.level,
                            feature_name: n.feature_name.clone().ok_or_else(|| {
                                Error::MalformedGraph(format!("prototype {} lacks a name", n.id))
                            })?,
                            feature_value: n.feature_value.clone().ok_or_else(|| {
                                Error::MalformedGraph(format!("prototype {} lacks a value", n.id))
                            })?,
                        }),
                    });
                }
                let lookup = |id: &str| {
                    index
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::MalformedGraph(format!("unknown node {id}")))
                };
                let mut es = Vec::new();
                for e in edges {
                    es.push((lookup(&e.source)?, lookup(&e.target)?));
                }
                AugmentedGraph::new(levels.clone(), out, es)
            }
        }
    }
}

/// A loaded input: either an analysis record or a graph document.
#[derive(Debug, Clone)]
pub enum GraphInput {
    Record(AnalysisRecordFile),
    Graph(GraphDocument),
}

impl GraphInput {
    pub fn parse(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("format").is_some() {
            Ok(GraphInput::Graph(GraphDocument::from_json(text)?))
        } else {
            Ok(GraphInput::Record(AnalysisRecordFile::from_json(text)?))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn title(&self) -> String {
        match self {
            GraphInput::Record(r) => r.piece.title.clone(),
            GraphInput::Graph(g) => g.title.clone(),
        }
    }

    pub fn to_stg(&self) -> Result<StructuralTemporalGraph> {
        match self {
            GraphInput::Record(r) => ingest_all(r),
            GraphInput::Graph(g) => g.to_stg(),
        }
    }

    pub fn to_augmented(&self) -> Result<AugmentedGraph> {
        match self {
            GraphInput::Record(r) => crate::augment::augment(&ingest_all(r)?),
            GraphInput::Graph(g) => g.to_augmented(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::augment;
    use crate::fixtures;

    #[test]
    fn compressed_round_trip() {
        let g = fixtures::biamonti_811();
        let doc = GraphDocument::from_stg("811", &g);
        let back = GraphDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back.to_stg().unwrap(), g);
    }

    #[test]
    fn augmented_round_trip() {
        let a = augment(&fixtures::biamonti_461()).unwrap();
        let doc = GraphDocument::from_augmented("461", &a);
        let back = GraphDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back.to_augmented().unwrap(), a);
    }

    #[test]
    fn dump_is_deterministic() {
        let g = fixtures::biamonti_461();
        assert_eq!(
            GraphDocument::from_stg("x", &g).to_json(),
            GraphDocument::from_stg("x", &g).to_json()
        );
    }

    #[test]
    fn input_sniffing() {
        let rec = fixtures::toy_record().to_json();
        assert!(matches!(GraphInput::parse(&rec).unwrap(), GraphInput::Record(_)));
        let doc = GraphDocument::from_stg("toy", &fixtures::toy()).to_json();
        assert!(matches!(GraphInput::parse(&doc).unwrap(), GraphInput::Graph(_)));
    }
}
