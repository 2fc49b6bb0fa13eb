//! Eager propositionalization: every feature of every forward-only path up
//! to a length bound, materialized into one flat table.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::catalog::SchemaCatalog;
use crate::error::{Error, Result};
use crate::features::{features_for_path, FeatureColumn, FeatureDescriptor, FeatureParams};
use crate::joinpath::{
    candidate_extensions, extend_instantiation, root_instantiation_for, JoinInstantiation,
    JoinPath, JoinStats,
};
use crate::storage::{Database, RowId};
use crate::tree::Value;

#[derive(Clone, Debug, PartialEq)]
pub struct FlatTable {
    pub instance_ids: Vec<RowId>,
    pub instance_keys: Vec<String>,
    /// `None` for unlabeled rows.
    pub labels: Vec<Option<u32>>,
    pub classes: Vec<String>,
    /// Sorted by descriptor.
    pub columns: Vec<FeatureColumn>,
    /// Every enumerated path, root included, sorted.
    pub paths: Vec<JoinPath>,
}

impl FlatTable {
    pub fn descriptors(&self) -> impl Iterator<Item = &FeatureDescriptor> {
        self.columns.iter().map(|c| &c.descriptor)
    }

    pub fn column(&self, descriptor: &FeatureDescriptor) -> Option<&FeatureColumn> {
        self.columns
            .binary_search_by(|c| c.descriptor.cmp(descriptor))
            .ok()
            .map(|i| &self.columns[i])
    }

    /// Value of a feature for the row at `position`; `None` when the cell is
    /// undefined or the column does not exist.
    pub fn value(&self, position: usize, descriptor: &FeatureDescriptor) -> Option<Value> {
        self.column(descriptor)?.cells.value(position)
    }

    pub fn position_of(&self, instance: RowId) -> Option<usize> {
        self.instance_ids.binary_search(&instance).ok()
    }
}

/// Root path plus every forward-only path with at most `max_path_len` hops.
/// A lookahead through an associative table counts both of its hops.
pub fn enumerate_paths(catalog: &SchemaCatalog, max_path_len: usize) -> Vec<JoinPath> {
    let root = JoinPath::root(catalog);
    let mut out = vec![root.clone()];
    let mut level = vec![root];
    while !level.is_empty() {
        let next: Vec<JoinPath> = level
            .iter()
            .flat_map(|p| candidate_extensions(catalog, p))
            .filter(|p| p.len() <= max_path_len)
            .collect();
        out.extend(next.iter().cloned());
        level = next;
    }
    out.sort();
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EagerOptions {
    pub max_path_len: usize,
    /// Cap on bag entries plus feature cells held at once.
    pub memory_budget: Option<usize>,
}

impl Default for EagerOptions {
    fn default() -> Self {
        EagerOptions {
            max_path_len: 3,
            memory_budget: None,
        }
    }
}

/// Materializes the flat table for `instances` (ascending).
pub fn propositionalize(
    db: &Database,
    instances: &[RowId],
    options: &EagerOptions,
    params: &FeatureParams,
    stats: &JoinStats,
) -> Result<FlatTable> {
    if options.max_path_len < 1 {
        return Err(Error::InvalidParams("max_path_len must be at least 1".into()));
    }
    if !instances.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParams("instance ids must be ascending".into()));
    }
    let catalog = db.catalog();
    let paths = enumerate_paths(catalog, options.max_path_len);
    let root = Arc::new(root_instantiation_for(db, instances));

    // Instantiations of every prefix built so far, including lookahead
    // intermediates. Paths are processed shortest first so a prefix is
    // always available.
    let mut by_len: Vec<&JoinPath> = paths.iter().collect();
    by_len.sort_by_key(|p| p.len());
    let mut cache: HashMap<JoinPath, Arc<JoinInstantiation>> = HashMap::new();
    cache.insert(root.path().clone(), root);
    let mut held = 0usize;
    let mut built = Vec::with_capacity(by_len.len());
    for path in by_len {
        let start = (0..=path.len())
            .rev()
            .find(|&len| cache.contains_key(&path.prefix(len)))
            .expect("root is cached");
        let mut inst = Arc::clone(&cache[&path.prefix(start)]);
        for len in start..path.len() {
            inst = Arc::new(extend_instantiation(db, &inst, &path.hops()[len], None, stats)?);
            held += inst.entries();
            if let Some(budget) = options.memory_budget {
                if held > budget {
                    return Err(Error::MemoryBudget {
                        path: inst.path().to_string(),
                        budget,
                    });
                }
            }
            cache.insert(inst.path().clone(), Arc::clone(&inst));
        }
        built.push(inst);
    }
    drop(cache);

    let per_path: Vec<Vec<FeatureColumn>> = built
        .par_iter()
        .map(|inst| features_for_path(db, inst, params))
        .collect::<Result<_>>()?;
    let mut columns: Vec<FeatureColumn> = per_path.into_iter().flatten().collect();
    if let Some(budget) = options.memory_budget {
        let cells = held + columns.len() * instances.len();
        if cells > budget {
            return Err(Error::MemoryBudget {
                path: "feature columns".into(),
                budget,
            });
        }
    }
    columns.sort_by(|a, b| a.descriptor.cmp(&b.descriptor));

    let (labels, classes) = db.labels();
    Ok(FlatTable {
        instance_keys: instances.iter().map(|&i| db.instance_key(i).to_string()).collect(),
        labels: instances.iter().map(|&i| labels[i as usize]).collect(),
        classes: classes.to_vec(),
        instance_ids: instances.to_vec(),
        columns,
        paths,
    })
}

/// CSV with an id column, the class label, then one column per feature.
/// Undefined cells and missing labels are written as `missing`.
pub fn write_flat_csv(table: &FlatTable, out: impl Write, missing: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Csv {
        table: "flat table".into(),
        message: e.to_string(),
    };
    let mut header = vec!["instance_id".to_string(), "label".to_string()];
    header.extend(table.descriptors().map(|d| d.name()));
    w.write_record(&header).map_err(csv_err)?;
    for (pos, key) in table.instance_keys.iter().enumerate() {
        let mut record = Vec::with_capacity(header.len());
        record.push(key.clone());
        record.push(
            table.labels[pos].map_or_else(|| missing.to_string(), |l| table.classes[l as usize].clone()),
        );
        record.extend(table.columns.iter().map(|c| c.cells.render(pos, missing)));
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("flat table", e))?;
    Ok(())
}

pub fn export_flat_csv(table: &FlatTable, path: &Path, missing: &str) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_flat_csv(table, std::io::BufWriter::new(file), missing)
}

/// One tab-separated line per column: name, path, attribute, aggregator.
pub fn write_manifest<'a>(
    descriptors: impl IntoIterator<Item = &'a FeatureDescriptor>,
    mut out: impl Write,
) -> std::io::Result<()> {
    for d in descriptors {
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            d.name(),
            d.path,
            d.attribute.as_deref().unwrap_or(""),
            d.aggregator
        )?;
    }
    out.flush()
}
