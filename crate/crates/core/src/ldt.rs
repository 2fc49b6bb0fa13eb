//! Local data tables: the per-node instance set with every feature column
//! built on the way down from the root.
//!
//! Each table keeps a frontier of join paths whose extensions have not yet
//! been generated, together with a cached instantiation for each of them.
//! Cached instantiations may cover more instances than the node holds (they
//! are inherited from an ancestor); extension only ever joins the node's own
//! instances.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{features_for_path, FeatureColumn, FeatureDescriptor, FeatureParams};
use crate::joinpath::{
    candidate_extensions, extend_instantiation, initial_paths, root_instantiation_for,
    JoinInstantiation, JoinPath, JoinStats,
};
use crate::storage::{Database, RowId};
use crate::tree::SplitTest;

/// Which frontier paths an extension round may grow.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Only paths whose features were split on by an ancestor, plus the
    /// initial paths.
    #[default]
    Restricted,
    /// Every frontier path.
    Unrestricted,
}

#[derive(Clone, Debug)]
pub struct LocalDataTable {
    instance_ids: Vec<RowId>,
    labels: Vec<u32>,
    columns: Vec<FeatureColumn>,
    registered: BTreeSet<JoinPath>,
    frontier: BTreeSet<JoinPath>,
    instantiations: BTreeMap<JoinPath, Arc<JoinInstantiation>>,
}

impl LocalDataTable {
    /// A table from ready-made columns, with nothing left to extend.
    /// `instance_ids` must be ascending.
    pub fn from_columns(
        instance_ids: Vec<RowId>,
        labels: Vec<u32>,
        mut columns: Vec<FeatureColumn>,
    ) -> Result<Self> {
        if labels.len() != instance_ids.len() || columns.iter().any(|c| c.len() != instance_ids.len()) {
            return Err(Error::InvalidParams(
                "every column needs one cell per instance".to_string(),
            ));
        }
        if !instance_ids.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidParams("instance ids must be ascending".to_string()));
        }
        columns.sort_by(|a, b| a.descriptor.cmp(&b.descriptor));
        let registered = columns.iter().map(|c| c.descriptor.path.clone()).collect();
        Ok(LocalDataTable {
            instance_ids,
            labels,
            columns,
            registered,
            frontier: BTreeSet::new(),
            instantiations: BTreeMap::new(),
        })
    }

    pub fn instance_ids(&self) -> &[RowId] {
        &self.instance_ids
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    /// Feature columns in descriptor order.
    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn column(&self, descriptor: &FeatureDescriptor) -> Option<&FeatureColumn> {
        self.columns
            .binary_search_by(|c| c.descriptor.cmp(descriptor))
            .ok()
            .map(|i| &self.columns[i])
    }

    /// Paths with materialized columns, including the root path.
    pub fn registered_paths(&self) -> &BTreeSet<JoinPath> {
        &self.registered
    }

    pub fn frontier(&self) -> &BTreeSet<JoinPath> {
        &self.frontier
    }

    pub fn instantiation(&self, path: &JoinPath) -> Option<&JoinInstantiation> {
        self.instantiations.get(path).map(Arc::as_ref)
    }

    /// Splits rows by `test`; undefined cells follow its route. Left is the
    /// pass side. Both children inherit columns, frontier and cached joins.
    pub fn partition(&self, test: &SplitTest) -> Result<(LocalDataTable, LocalDataTable)> {
        let column = self.column(&test.descriptor).ok_or_else(|| {
            Error::InvalidSplit(format!("no column `{}` in this table", test.descriptor))
        })?;
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for i in 0..self.len() {
            if test.passes(&column.cells, i) {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        if left.is_empty() || right.is_empty() {
            return Err(Error::InvalidSplit(format!(
                "test on `{}` leaves one side empty",
                test.descriptor
            )));
        }
        Ok((self.select(&left), self.select(&right)))
    }

    fn select(&self, positions: &[usize]) -> LocalDataTable {
        LocalDataTable {
            instance_ids: positions.iter().map(|&p| self.instance_ids[p]).collect(),
            labels: positions.iter().map(|&p| self.labels[p]).collect(),
            columns: self.columns.iter().map(|c| c.select(positions)).collect(),
            registered: self.registered.clone(),
            frontier: self.frontier.clone(),
            instantiations: self.instantiations.clone(),
        }
    }

    /// One extension round. Returns `None` when nothing can be added.
    ///
    /// The restricted strategy grows the initial paths and the paths in
    /// `used_paths`; the unrestricted one grows the whole frontier. Grown
    /// paths leave the frontier and their extensions join it.
    pub fn extend(
        &self,
        db: &Database,
        strategy: Strategy,
        used_paths: &BTreeSet<JoinPath>,
        params: &FeatureParams,
        stats: &JoinStats,
    ) -> Result<Option<LocalDataTable>> {
        let catalog = db.catalog();
        let initial: BTreeSet<JoinPath> = initial_paths(catalog).into_iter().collect();
        let selected: Vec<&JoinPath> = self
            .frontier
            .iter()
            .filter(|p| match strategy {
                Strategy::Unrestricted => true,
                Strategy::Restricted => initial.contains(*p) || used_paths.contains(*p),
            })
            .collect();

        let mut new_paths = Vec::new();
        for base in &selected {
            for path in candidate_extensions(catalog, base) {
                new_paths.push(((*base).clone(), path));
            }
        }
        if new_paths.is_empty() {
            return Ok(None);
        }

        let mut out = self.clone();
        let mut scratch: BTreeMap<JoinPath, Arc<JoinInstantiation>> = BTreeMap::new();
        for (base, path) in new_paths {
            let inst = self.join_from(db, &base, &path, &mut scratch, stats)?;
            out.columns.extend(features_for_path(db, &inst, params)?);
            out.registered.insert(path.clone());
            out.frontier.insert(path.clone());
            out.instantiations.insert(path, inst);
        }
        for base in selected {
            out.frontier.remove(base);
            out.instantiations.remove(base);
        }
        out.columns.sort_by(|a, b| a.descriptor.cmp(&b.descriptor));
        Ok(Some(out))
    }

    /// Instantiation of `path` for this node's instances, starting from the
    /// cached instantiation of its frontier prefix `base`.
    fn join_from(
        &self,
        db: &Database,
        base: &JoinPath,
        path: &JoinPath,
        scratch: &mut BTreeMap<JoinPath, Arc<JoinInstantiation>>,
        stats: &JoinStats,
    ) -> Result<Arc<JoinInstantiation>> {
        let cached = self.instantiations.get(base).ok_or_else(|| {
            Error::InvalidParams(format!("no cached instantiation for `{base}`"))
        })?;
        // The lookahead intermediate (onto an associative table) is shared by
        // sibling extensions, so reuse it when present.
        let mut start = base.len();
        let mut inst = Arc::clone(cached);
        for len in (base.len() + 1..path.len()).rev() {
            if let Some(hit) = scratch.get(&path.prefix(len)) {
                inst = Arc::clone(hit);
                start = len;
                break;
            }
        }
        for (i, hop) in path.hops()[start..].iter().enumerate() {
            let restrict = (start == base.len() && i == 0).then_some(self.instance_ids.as_slice());
            let next = Arc::new(extend_instantiation(db, &inst, hop, restrict, stats)?);
            scratch.insert(next.path().clone(), Arc::clone(&next));
            inst = next;
        }
        Ok(inst)
    }
}

/// Root table over `instances` (ascending, all labeled): retained target
/// attributes plus every feature of the initial paths.
pub fn build_root_ldt(
    db: &Database,
    instances: &[RowId],
    params: &FeatureParams,
    stats: &JoinStats,
) -> Result<LocalDataTable> {
    let catalog = db.catalog();
    if instances.is_empty() {
        return Err(Error::EmptyTargetTable(catalog.target_table().to_string()));
    }
    let (all_labels, _) = db.labels();
    let labels = instances
        .iter()
        .map(|&i| {
            all_labels[i as usize].ok_or_else(|| {
                Error::InvalidParams(format!("instance `{}` has no class label", db.instance_key(i)))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let root = Arc::new(root_instantiation_for(db, instances));
    let mut ldt = LocalDataTable {
        instance_ids: instances.to_vec(),
        labels,
        columns: features_for_path(db, &root, params)?,
        registered: BTreeSet::from([root.path().clone()]),
        frontier: BTreeSet::new(),
        instantiations: BTreeMap::from([(root.path().clone(), Arc::clone(&root))]),
    };
    let root_path = root.path().clone();
    ldt.frontier.insert(root_path.clone());
    let mut scratch = BTreeMap::new();
    let mut cols = Vec::new();
    let paths = initial_paths(catalog);
    for path in &paths {
        let inst = ldt.join_from(db, &root_path, path, &mut scratch, stats)?;
        cols.extend(features_for_path(db, &inst, params)?);
        ldt.registered.insert(path.clone());
        ldt.instantiations.insert(path.clone(), inst);
    }
    ldt.frontier = paths.into_iter().collect();
    ldt.instantiations.remove(&root_path);
    ldt.columns.extend(cols);
    ldt.columns.sort_by(|a, b| a.descriptor.cmp(&b.descriptor));
    Ok(ldt)
}
