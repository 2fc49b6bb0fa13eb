//! Forward-only join paths and their cached per-instance instantiations.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::catalog::SchemaCatalog;
use crate::error::{Error, Result};
use crate::storage::{ColumnData, Database, RowId};

/// One equi-join step `from_table.from_column = to_table.to_column`.
/// Hops order by destination first, matching the rendered path text.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hop {
    pub to_table: String,
    pub to_column: String,
    pub from_table: String,
    pub from_column: String,
}

/// A sequence of hops starting at the target table. The empty path stands
/// for the target table itself.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JoinPath {
    origin: String,
    hops: Vec<Hop>,
}

impl JoinPath {
    pub fn root(catalog: &SchemaCatalog) -> Self {
        JoinPath {
            origin: catalog.target_table().to_string(),
            hops: Vec::new(),
        }
    }

    /// Builds a path from explicit hops; checks that consecutive hops chain.
    pub fn from_hops(origin: impl Into<String>, hops: Vec<Hop>) -> Result<Self> {
        let mut path = JoinPath {
            origin: origin.into(),
            hops: Vec::with_capacity(hops.len()),
        };
        for hop in hops {
            if hop.from_table != path.terminal() {
                return Err(Error::TerminalMismatch {
                    expected: path.terminal().to_string(),
                    found: hop.from_table,
                });
            }
            path.hops.push(hop);
        }
        Ok(path)
    }

    pub fn origin(&self) -> &str {
        &self.origin
    }

    pub fn hops(&self) -> &[Hop] {
        &self.hops
    }

    /// Number of hops.
    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> usize {
        self.hops.len()
    }

    pub fn is_root(&self) -> bool {
        self.hops.is_empty()
    }

    pub fn terminal(&self) -> &str {
        self.hops.last().map_or(&self.origin, |h| &h.to_table)
    }

    pub fn tables(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.origin.as_str()).chain(self.hops.iter().map(|h| h.to_table.as_str()))
    }

    pub fn visits(&self, table: &str) -> bool {
        self.tables().any(|t| t == table)
    }

    pub fn extended(&self, hop: Hop) -> JoinPath {
        let mut out = self.clone();
        out.hops.push(hop);
        out
    }

    pub fn prefix(&self, len: usize) -> JoinPath {
        JoinPath {
            origin: self.origin.clone(),
            hops: self.hops[..len].to_vec(),
        }
    }

    /// True iff every hop lands on the referenced table's primary key, so
    /// each instance reaches at most one terminal row.
    pub fn is_determinate(&self, catalog: &SchemaCatalog) -> bool {
        self.hops.iter().all(|h| {
            catalog
                .table(&h.to_table)
                .map(|t| t.primary_key() == h.to_column)
                .unwrap_or(false)
        })
    }
}

impl fmt::Display for JoinPath {
    /// `T0->T1(col)->...`; a hop whose two columns differ renders as
    /// `T(from=to)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.origin)?;
        for h in &self.hops {
            if h.from_column == h.to_column {
                write!(f, "->{}({})", h.to_table, h.to_column)?;
            } else {
                write!(f, "->{}({}={})", h.to_table, h.from_column, h.to_column)?;
            }
        }
        Ok(())
    }
}

/// Hop-join probe counter, bucketed by the length of the path being built.
#[derive(Debug, Default)]
pub struct JoinStats {
    lookups: Mutex<BTreeMap<usize, u64>>,
}

impl JoinStats {
    pub fn new() -> Self {
        Self::default()
    }

    fn record(&self, path_len: usize, probes: u64) {
        if probes > 0 {
            *self.lookups.lock().unwrap().entry(path_len).or_default() += probes;
        }
    }

    pub fn total(&self) -> u64 {
        self.lookups.lock().unwrap().values().sum()
    }

    /// Probes made while building paths of length `>= len`.
    pub fn at_least(&self, len: usize) -> u64 {
        self.lookups.lock().unwrap().range(len..).map(|(_, v)| v).sum()
    }

    pub fn by_length(&self) -> BTreeMap<usize, u64> {
        self.lookups.lock().unwrap().clone()
    }
}

/// Per-instance bags of terminal-table rows for one path, stored flat.
#[derive(Clone, Debug, PartialEq)]
pub struct JoinInstantiation {
    path: JoinPath,
    instances: Vec<RowId>,
    offsets: Vec<usize>,
    rows: Vec<RowId>,
}

impl JoinInstantiation {
    pub fn path(&self) -> &JoinPath {
        &self.path
    }

    /// Target rows covered, ascending.
    pub fn instances(&self) -> &[RowId] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Total number of bag entries.
    pub fn entries(&self) -> usize {
        self.rows.len()
    }

    pub fn bag(&self, position: usize) -> &[RowId] {
        &self.rows[self.offsets[position]..self.offsets[position + 1]]
    }

    pub fn bag_of(&self, instance: RowId) -> Option<&[RowId]> {
        self.instances
            .binary_search(&instance)
            .ok()
            .map(|p| self.bag(p))
    }

    /// Keeps only the listed instances (ascending, each covered).
    pub fn restrict(&self, ids: &[RowId]) -> Result<JoinInstantiation> {
        let mut out = JoinInstantiation {
            path: self.path.clone(),
            instances: Vec::with_capacity(ids.len()),
            offsets: vec![0],
            rows: Vec::new(),
        };
        for &id in ids {
            let bag = self.bag_of(id).ok_or_else(|| {
                Error::InvalidParams(format!("instance {id} is not covered by `{}`", self.path))
            })?;
            out.instances.push(id);
            out.rows.extend_from_slice(bag);
            out.offsets.push(out.rows.len());
        }
        Ok(out)
    }
}

/// Empty path: every target row maps to itself.
pub fn root_instantiation(db: &Database) -> JoinInstantiation {
    let n = db.target().row_count() as RowId;
    let ids: Vec<RowId> = (0..n).collect();
    root_instantiation_for(db, &ids)
}

pub fn root_instantiation_for(db: &Database, ids: &[RowId]) -> JoinInstantiation {
    JoinInstantiation {
        path: JoinPath::root(db.catalog()),
        instances: ids.to_vec(),
        offsets: (0..=ids.len()).collect(),
        rows: ids.to_vec(),
    }
}

/// All forward-only paths of length one from the target table (with
/// associative lookahead).
pub fn initial_paths(catalog: &SchemaCatalog) -> Vec<JoinPath> {
    candidate_extensions(catalog, &JoinPath::root(catalog))
}

/// Paths one table longer than `path`, moving strictly deeper. A hop onto
/// an associative table is continued immediately through that table.
pub fn candidate_extensions(catalog: &SchemaCatalog, path: &JoinPath) -> Vec<JoinPath> {
    let terminal = path.terminal();
    let Some(depth) = catalog.depth(terminal) else {
        return Vec::new();
    };
    let Ok(neighbors) = catalog.neighbors(terminal) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for n in neighbors {
        if path.visits(&n.table) || catalog.depth(&n.table).is_none_or(|d| d <= depth) {
            continue;
        }
        let next = path.extended(Hop {
            from_table: terminal.to_string(),
            from_column: n.local_column,
            to_table: n.table.clone(),
            to_column: n.remote_column,
        });
        if catalog.is_associative(&n.table).unwrap_or(false) {
            out.extend(candidate_extensions(catalog, &next));
        } else {
            out.push(next);
        }
    }
    out.sort();
    out
}

/// Joins one more hop onto a cached instantiation. Bags keep
/// multiplicities. With `restrict_to` (ascending, covered by `inst`) only
/// those instances are extended.
pub fn extend_instantiation(
    db: &Database,
    inst: &JoinInstantiation,
    hop: &Hop,
    restrict_to: Option<&[RowId]>,
    stats: &JoinStats,
) -> Result<JoinInstantiation> {
    if hop.from_table != inst.path.terminal() {
        return Err(Error::TerminalMismatch {
            expected: inst.path.terminal().to_string(),
            found: hop.from_table.clone(),
        });
    }
    let from = db.table(&hop.from_table)?.key_codes(&hop.from_column)?;
    let index = db.table(&hop.to_table)?.index(&hop.to_column)?;
    let path = inst.path.extended(hop.clone());

    let mut out = JoinInstantiation {
        path,
        instances: Vec::new(),
        offsets: vec![0],
        rows: Vec::new(),
    };
    let mut probes = 0u64;
    let mut push_bag = |out: &mut JoinInstantiation, id: RowId, bag: &[RowId]| {
        for &r in bag {
            probes += 1;
            out.rows.extend_from_slice(index.get(from[r as usize]));
        }
        out.instances.push(id);
        out.offsets.push(out.rows.len());
    };
    match restrict_to {
        None => {
            out.instances.reserve(inst.len());
            for (p, &id) in inst.instances.iter().enumerate() {
                push_bag(&mut out, id, inst.bag(p));
            }
        }
        Some(ids) => {
            out.instances.reserve(ids.len());
            for &id in ids {
                let bag = inst.bag_of(id).ok_or_else(|| {
                    Error::InvalidParams(format!("instance {id} is not covered by `{}`", inst.path))
                })?;
                push_bag(&mut out, id, bag);
            }
        }
    }
    stats.record(out.path.len(), probes);
    Ok(out)
}

/// Instantiates `path` hop by hop from the root for the given instances.
pub fn instantiate(
    db: &Database,
    path: &JoinPath,
    ids: &[RowId],
    stats: &JoinStats,
) -> Result<JoinInstantiation> {
    let mut inst = root_instantiation_for(db, ids);
    for hop in path.hops() {
        inst = extend_instantiation(db, &inst, hop, None, stats)?;
    }
    Ok(inst)
}

/// Per-instance multisets of one terminal-table attribute; `None` marks a
/// missing source value.
#[derive(Clone, Debug, PartialEq)]
pub enum Projection<'a> {
    Numeric(Vec<Vec<Option<f64>>>),
    Categorical {
        values: Vec<Vec<Option<u32>>>,
        dictionary: &'a [String],
    },
}

pub fn project_values<'a>(
    db: &'a Database,
    inst: &JoinInstantiation,
    attribute: &str,
) -> Result<Projection<'a>> {
    let table = db.table(inst.path.terminal())?;
    let bags = (0..inst.len()).map(|p| inst.bag(p));
    match table.column(attribute)? {
        ColumnData::Numeric { values, missing } => Ok(Projection::Numeric(
            bags.map(|bag| {
                bag.iter()
                    .map(|&r| (!missing[r as usize]).then(|| values[r as usize]))
                    .collect()
            })
            .collect(),
        )),
        ColumnData::Categorical {
            codes,
            dictionary,
            missing,
        } => Ok(Projection::Categorical {
            values: bags
                .map(|bag| {
                    bag.iter()
                        .map(|&r| (!missing[r as usize]).then(|| codes[r as usize]))
                        .collect()
                })
                .collect(),
            dictionary,
        }),
        ColumnData::Key { .. } => Err(Error::KeyAttribute {
            table: table.name().to_string(),
            column: attribute.to_string(),
        }),
    }
}
