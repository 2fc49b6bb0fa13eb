use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::features::feature_value;
use crate::joinpath::{extend_instantiation, root_instantiation_for, JoinInstantiation, JoinPath, JoinStats};
use crate::storage::{Database, RowId};

use super::{TreeModel, TreeNode};

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class: u32,
    /// Normalized class distribution of the reached leaf.
    pub distribution: Vec<f64>,
}

impl Prediction {
    pub fn confidence(&self) -> f64 {
        self.distribution[self.class as usize]
    }
}

/// Classifies target rows of a database that matches the model's schema.
/// Features are computed per instance, joining only the tested paths.
#[derive(Debug)]
pub struct Predictor<'a> {
    model: &'a TreeModel,
    db: &'a Database,
    stats: JoinStats,
}

impl<'a> Predictor<'a> {
    pub fn new(model: &'a TreeModel, db: &'a Database) -> Result<Self> {
        let found = db.catalog().fingerprint();
        if found != model.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: model.fingerprint.clone(),
                found,
            });
        }
        Ok(Predictor {
            model,
            db,
            stats: JoinStats::new(),
        })
    }

    /// Join probes spent so far.
    pub fn stats(&self) -> &JoinStats {
        &self.stats
    }

    pub fn predict(&self, row: RowId) -> Result<Prediction> {
        let rows = self.db.target().row_count();
        if row as usize >= rows {
            return Err(Error::InvalidParams(format!(
                "target row {row} out of range ({rows} rows)"
            )));
        }
        let mut cache: HashMap<JoinPath, JoinInstantiation> = HashMap::new();
        let root = root_instantiation_for(self.db, &[row]);
        cache.insert(root.path().clone(), root);
        let leaf = self.model.route(|descriptor| {
            let inst = self.single_instance(&mut cache, &descriptor.path)?;
            feature_value(self.db, inst, 0, descriptor)
        })?;
        let TreeNode::Leaf {
            distribution,
            predicted,
        } = leaf
        else {
            unreachable!("route ends at a leaf");
        };
        let total: u64 = distribution.iter().sum();
        let distribution = if total == 0 {
            vec![0.0; distribution.len()]
        } else {
            distribution.iter().map(|&c| c as f64 / total as f64).collect()
        };
        Ok(Prediction {
            class: *predicted,
            distribution,
        })
    }

    /// Extends the longest cached prefix of `path` one hop at a time.
    fn single_instance<'c>(
        &self,
        cache: &'c mut HashMap<JoinPath, JoinInstantiation>,
        path: &JoinPath,
    ) -> Result<&'c JoinInstantiation> {
        let cached = (0..=path.len())
            .rev()
            .find(|&len| cache.contains_key(&path.prefix(len)))
            .expect("the root path is always cached");
        for len in cached..path.len() {
            let next = extend_instantiation(
                self.db,
                &cache[&path.prefix(len)],
                &path.hops()[len],
                None,
                &self.stats,
            )?;
            cache.insert(path.prefix(len + 1), next);
        }
        Ok(&cache[path])
    }
}
