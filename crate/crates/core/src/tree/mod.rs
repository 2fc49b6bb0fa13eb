//! Decision-tree growth over local data tables, with lazy extension when no
//! test at a node clears the gain threshold.

mod document;
mod predict;
pub mod split;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureDescriptor, FeatureParams};
use crate::joinpath::{JoinPath, JoinStats};
use crate::ldt::{build_root_ldt, LocalDataTable, Strategy};
use crate::storage::{Database, RowId};

pub use document::{deserialize_model, serialize_model, FORMAT_NAME, FORMAT_VERSION};
pub use predict::{Prediction, Predictor};
pub use split::{
    best_split, class_counts, entropy, gain_with_route, information_gain, Route, SplitTest,
    TestKind, Value,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnParams {
    /// `None` means unbounded.
    pub max_depth: Option<usize>,
    pub min_inst: usize,
    pub min_ig: f64,
    pub strategy: Strategy,
    pub domsize_abs: usize,
    pub domsize_rel: f64,
    pub seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            max_depth: None,
            min_inst: 3,
            min_ig: 0.001,
            strategy: Strategy::Restricted,
            domsize_abs: 40,
            domsize_rel: 0.2,
            seed: 0,
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_inst < 1 {
            return Err(Error::InvalidParams("min_inst must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.domsize_rel) {
            return Err(Error::InvalidParams(format!(
                "domsize_rel must lie in [0, 1], got {}",
                self.domsize_rel
            )));
        }
        if !self.min_ig.is_finite() {
            return Err(Error::InvalidParams("min_ig must be finite".into()));
        }
        Ok(())
    }

    pub fn feature_params(&self) -> FeatureParams {
        FeatureParams {
            domsize_abs: self.domsize_abs,
            domsize_rel: self.domsize_rel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TreeNode {
    Inner {
        test: SplitTest,
        gain: f64,
        /// Class counts of the training rows that reached this node.
        distribution: Vec<u64>,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        distribution: Vec<u64>,
        predicted: u32,
    },
}

impl TreeNode {
    fn leaf(distribution: Vec<u64>) -> TreeNode {
        let predicted = majority(&distribution);
        TreeNode::Leaf {
            distribution,
            predicted,
        }
    }

    pub fn distribution(&self) -> &[u64] {
        match self {
            TreeNode::Inner { distribution, .. } | TreeNode::Leaf { distribution, .. } => distribution,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Inner { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Inner { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }

    /// Inner nodes in preorder.
    pub fn tests(&self) -> Vec<&SplitTest> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            if let TreeNode::Inner {
                test, left, right, ..
            } = node
            {
                out.push(test);
                stack.push(right);
                stack.push(left);
            }
        }
        out
    }
}

/// Most frequent class; the lowest code wins ties.
pub fn majority(distribution: &[u64]) -> u32 {
    let mut best = 0;
    for (i, &c) in distribution.iter().enumerate() {
        if c > distribution[best] {
            best = i;
        }
    }
    best as u32
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeModel {
    pub fingerprint: String,
    pub strip_target_features: bool,
    pub params: LearnParams,
    pub classes: Vec<String>,
    pub root: TreeNode,
}

impl TreeModel {
    /// Descriptors referenced by tests, in descriptor order.
    pub fn descriptors(&self) -> Vec<FeatureDescriptor> {
        let set: BTreeSet<&FeatureDescriptor> =
            self.root.tests().into_iter().map(|t| &t.descriptor).collect();
        set.into_iter().cloned().collect()
    }

    /// Routes one instance to a leaf, asking `value_of` for each tested
    /// feature. Returns the leaf.
    pub fn route<F>(&self, mut value_of: F) -> Result<&TreeNode>
    where
        F: FnMut(&FeatureDescriptor) -> Result<Option<Value>>,
    {
        let mut node = &self.root;
        while let TreeNode::Inner {
            test, left, right, ..
        } = node
        {
            let value = value_of(&test.descriptor)?;
            node = if test.routes_left(value.as_ref()) {
                left
            } else {
                right
            };
        }
        Ok(node)
    }
}

/// What a training run materialized.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GrowReport {
    /// Every path with feature columns in some node, the root path included.
    pub materialized_paths: BTreeSet<JoinPath>,
    pub materialized_features: BTreeSet<FeatureDescriptor>,
    /// Nodes whose table was extended.
    pub extensions: usize,
}

impl GrowReport {
    fn record(&mut self, ldt: &LocalDataTable) {
        self.materialized_paths
            .extend(ldt.registered_paths().iter().cloned());
        self.materialized_features
            .extend(ldt.columns().iter().map(|c| c.descriptor.clone()));
    }

    fn merge(&mut self, other: GrowReport) {
        self.materialized_paths.extend(other.materialized_paths);
        self.materialized_features.extend(other.materialized_features);
        self.extensions += other.extensions;
    }
}

/// Trains on every labeled target row.
pub fn grow_tree(
    db: &Database,
    params: &LearnParams,
    stats: &JoinStats,
) -> Result<(TreeModel, GrowReport)> {
    grow_tree_on(db, &db.labeled_instances(), params, stats)
}

/// Trains on the given target rows (ascending, labeled).
pub fn grow_tree_on(
    db: &Database,
    instances: &[RowId],
    params: &LearnParams,
    stats: &JoinStats,
) -> Result<(TreeModel, GrowReport)> {
    params.validate()?;
    let root = build_root_ldt(db, instances, &params.feature_params(), stats)?;
    grow_tree_from_ldt(db, root, params, stats)
}

/// Trains from a prepared root table.
pub fn grow_tree_from_ldt(
    db: &Database,
    root: LocalDataTable,
    params: &LearnParams,
    stats: &JoinStats,
) -> Result<(TreeModel, GrowReport)> {
    params.validate()?;
    let (_, classes) = db.labels();
    let grower = Grower {
        db,
        params,
        feature_params: params.feature_params(),
        n_classes: classes.len(),
        stats,
    };
    let mut report = GrowReport::default();
    report.record(&root);
    let (node, sub) = grower.grow(root, 0, &BTreeSet::new())?;
    report.merge(sub);
    let model = TreeModel {
        fingerprint: db.catalog().fingerprint(),
        strip_target_features: db.options().strip_target_features,
        params: params.clone(),
        classes: classes.to_vec(),
        root: node,
    };
    Ok((model, report))
}

struct Grower<'a> {
    db: &'a Database,
    params: &'a LearnParams,
    feature_params: FeatureParams,
    n_classes: usize,
    stats: &'a JoinStats,
}

impl Grower<'_> {
    fn grow(
        &self,
        ldt: LocalDataTable,
        depth: usize,
        used: &BTreeSet<JoinPath>,
    ) -> Result<(TreeNode, GrowReport)> {
        let mut report = GrowReport::default();
        let distribution = class_counts(ldt.labels(), self.n_classes);
        let at_max_depth = self.params.max_depth.is_some_and(|m| depth >= m);
        // A pure node cannot yield positive gain, so with a nonnegative
        // threshold extending it would be wasted work.
        let pure = distribution.iter().filter(|&&c| c > 0).count() <= 1;
        if at_max_depth || ldt.len() < self.params.min_inst || (pure && self.params.min_ig >= 0.0) {
            return Ok((TreeNode::leaf(distribution), report));
        }

        let min_ig = self.params.min_ig;
        let mut ldt = ldt;
        let mut found = best_split(&ldt, self.n_classes).filter(|(_, g)| *g > min_ig);
        if found.is_none() {
            let extended = ldt.extend(
                self.db,
                self.params.strategy,
                used,
                &self.feature_params,
                self.stats,
            )?;
            let Some(extended) = extended else {
                return Ok((TreeNode::leaf(distribution), report));
            };
            report.extensions += 1;
            report.record(&extended);
            ldt = extended;
            found = best_split(&ldt, self.n_classes).filter(|(_, g)| *g > min_ig);
        }
        let Some((test, gain)) = found else {
            return Ok((TreeNode::leaf(distribution), report));
        };

        let (left, right) = ldt.partition(&test)?;
        drop(ldt);
        let mut used = used.clone();
        used.insert(test.descriptor.path.clone());
        let (l, r) = rayon::join(
            || self.grow(left, depth + 1, &used),
            || self.grow(right, depth + 1, &used),
        );
        let (l, lr) = l?;
        let (r, rr) = r?;
        report.merge(lr);
        report.merge(rr);
        Ok((
            TreeNode::Inner {
                test,
                gain,
                distribution,
                left: Box::new(l),
                right: Box::new(r),
            },
            report,
        ))
    }
}
