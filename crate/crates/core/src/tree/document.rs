//! JSON model document. Nodes are stored as a flat preorder list with child
//! indices, and tests refer to a shared descriptor table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureDescriptor;
use crate::joinpath::JoinPath;

use super::{LearnParams, Route, SplitTest, TestKind, TreeModel, TreeNode};

pub const FORMAT_NAME: &str = "reltree-model";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    version: u32,
    fingerprint: String,
    strip_target_features: bool,
    params: LearnParams,
    classes: Vec<String>,
    descriptors: Vec<DescriptorEntry>,
    nodes: Vec<NodeEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptorEntry {
    name: String,
    descriptor: FeatureDescriptor,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum NodeEntry {
    Inner {
        descriptor: usize,
        test: TestKind,
        undefined_route: Route,
        gain: f64,
        distribution: Vec<u64>,
        left: usize,
        right: usize,
    },
    Leaf {
        distribution: Vec<u64>,
        predicted: u32,
    },
}

/// Pretty-printed JSON; equal models give identical text.
pub fn serialize_model(model: &TreeModel) -> Result<String> {
    let descriptors = model.descriptors();
    let index: BTreeMap<&FeatureDescriptor, usize> =
        descriptors.iter().enumerate().map(|(i, d)| (d, i)).collect();
    let mut nodes = Vec::new();
    flatten(&model.root, &index, &mut nodes);
    let doc = Document {
        format: FORMAT_NAME.to_string(),
        version: FORMAT_VERSION,
        fingerprint: model.fingerprint.clone(),
        strip_target_features: model.strip_target_features,
        params: model.params.clone(),
        classes: model.classes.clone(),
        descriptors: descriptors
            .iter()
            .map(|d| DescriptorEntry {
                name: d.name(),
                descriptor: d.clone(),
            })
            .collect(),
        nodes,
    };
    let mut text = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::ModelFormat(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

fn flatten(node: &TreeNode, index: &BTreeMap<&FeatureDescriptor, usize>, out: &mut Vec<NodeEntry>) {
    match node {
        TreeNode::Leaf {
            distribution,
            predicted,
        } => out.push(NodeEntry::Leaf {
            distribution: distribution.clone(),
            predicted: *predicted,
        }),
        TreeNode::Inner {
            test,
            gain,
            distribution,
            left,
            right,
        } => {
            let at = out.len();
            out.push(NodeEntry::Leaf {
                distribution: Vec::new(),
                predicted: 0,
            });
            flatten(left, index, out);
            let right_at = out.len();
            flatten(right, index, out);
            out[at] = NodeEntry::Inner {
                descriptor: index[&test.descriptor],
                test: test.kind.clone(),
                undefined_route: test.undefined_route,
                gain: *gain,
                distribution: distribution.clone(),
                left: at + 1,
                right: right_at,
            };
        }
    }
}

pub fn deserialize_model(text: &str) -> Result<TreeModel> {
    let probe: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
    if probe.get("format").and_then(|f| f.as_str()) != Some(FORMAT_NAME) {
        return Err(Error::ModelFormat(format!("not a `{FORMAT_NAME}` document")));
    }
    match probe.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == FORMAT_VERSION as u64 => {}
        Some(v) => {
            return Err(Error::ModelVersion {
                found: u32::try_from(v).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            })
        }
        None => return Err(Error::ModelFormat("missing `version`".into())),
    }
    let doc: Document =
        serde_json::from_value(probe).map_err(|e| Error::ModelFormat(e.to_string()))?;
    doc.params.validate()?;
    if doc.classes.is_empty() {
        return Err(Error::ModelFormat("no classes".into()));
    }
    let mut descriptors = Vec::with_capacity(doc.descriptors.len());
    for entry in doc.descriptors {
        let d = entry.descriptor;
        // rebuild to check that the hops chain
        JoinPath::from_hops(d.path.origin(), d.path.hops().to_vec())?;
        if entry.name != d.name() {
            return Err(Error::ModelFormat(format!(
                "descriptor name `{}` does not match its fields (`{}`)",
                entry.name,
                d.name()
            )));
        }
        descriptors.push(d);
    }
    let mut builder = Builder {
        nodes: &doc.nodes,
        descriptors: &descriptors,
        n_classes: doc.classes.len(),
        visited: vec![false; doc.nodes.len()],
    };
    let root = builder.build(0)?;
    if builder.visited.iter().any(|v| !v) {
        return Err(Error::ModelFormat("unreachable nodes".into()));
    }
    Ok(TreeModel {
        fingerprint: doc.fingerprint,
        strip_target_features: doc.strip_target_features,
        params: doc.params,
        classes: doc.classes,
        root,
    })
}

struct Builder<'a> {
    nodes: &'a [NodeEntry],
    descriptors: &'a [FeatureDescriptor],
    n_classes: usize,
    visited: Vec<bool>,
}

impl Builder<'_> {
    fn build(&mut self, at: usize) -> Result<TreeNode> {
        let entry = self
            .nodes
            .get(at)
            .ok_or_else(|| Error::ModelFormat(format!("node index {at} out of range")))?;
        if std::mem::replace(&mut self.visited[at], true) {
            return Err(Error::ModelFormat(format!("node {at} is referenced twice")));
        }
        let check = |distribution: &[u64]| {
            if distribution.len() == self.n_classes {
                Ok(())
            } else {
                Err(Error::ModelFormat(format!(
                    "node {at} has {} class counts, expected {}",
                    distribution.len(),
                    self.n_classes
                )))
            }
        };
        match entry {
            NodeEntry::Leaf {
                distribution,
                predicted,
            } => {
                check(distribution)?;
                if *predicted as usize >= self.n_classes {
                    return Err(Error::ModelFormat(format!("node {at} predicts unknown class {predicted}")));
                }
                Ok(TreeNode::Leaf {
                    distribution: distribution.clone(),
                    predicted: *predicted,
                })
            }
            NodeEntry::Inner {
                descriptor,
                test,
                undefined_route,
                gain,
                distribution,
                left,
                right,
            } => {
                check(distribution)?;
                let descriptor = self.descriptors.get(*descriptor).ok_or_else(|| {
                    Error::ModelFormat(format!("node {at} refers to unknown descriptor {descriptor}"))
                })?;
                if let TestKind::NumericLe { threshold } = test {
                    if !threshold.is_finite() {
                        return Err(Error::ModelFormat(format!("node {at} has a non-finite threshold")));
                    }
                }
                if *left <= at || *right <= at {
                    return Err(Error::ModelFormat(format!("node {at} has a backward child link")));
                }
                Ok(TreeNode::Inner {
                    test: SplitTest {
                        descriptor: descriptor.clone(),
                        kind: test.clone(),
                        undefined_route: *undefined_route,
                    },
                    gain: *gain,
                    distribution: distribution.clone(),
                    left: Box::new(self.build(*left)?),
                    right: Box::new(self.build(*right)?),
                })
            }
        }
    }
}
