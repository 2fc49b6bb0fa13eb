//! Relational schema: tables, typed columns, and the foreign-key graph.
//!
//! The schema file is TOML:
//!
//! ```toml
//! target = "Professor.popular"
//!
//! [[tables]]
//! name = "Professor"
//! file = "professor.csv"
//! columns = ["PID:pk", "popular:cat", "MID:fk(Movie.MID)"]
//! ```
//!
//! Column types are `pk`, `fk(Table.Column)`, `num` and `cat`. Foreign-key
//! edges are traversed in both directions; depths are shortest hop counts
//! from the target table.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnKind {
    PrimaryKey,
    ForeignKey { table: String, column: String },
    Numeric,
    Categorical,
}

impl ColumnKind {
    pub fn is_key(&self) -> bool {
        matches!(self, ColumnKind::PrimaryKey | ColumnKind::ForeignKey { .. })
    }

    fn parse(text: &str) -> Option<ColumnKind> {
        match text.trim() {
            "pk" => Some(ColumnKind::PrimaryKey),
            "num" => Some(ColumnKind::Numeric),
            "cat" => Some(ColumnKind::Categorical),
            other => {
                let inner = other.strip_prefix("fk(")?.strip_suffix(')')?;
                let (table, column) = inner.split_once('.')?;
                let (table, column) = (table.trim(), column.trim());
                if table.is_empty() || column.is_empty() {
                    return None;
                }
                Some(ColumnKind::ForeignKey {
                    table: table.to_string(),
                    column: column.to_string(),
                })
            }
        }
    }

    fn render(&self) -> String {
        match self {
            ColumnKind::PrimaryKey => "pk".to_string(),
            ColumnKind::ForeignKey { table, column } => format!("fk({table}.{column})"),
            ColumnKind::Numeric => "num".to_string(),
            ColumnKind::Categorical => "cat".to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        ColumnSpec {
            name: name.into(),
            kind,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableSchema {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
    pub source_file: PathBuf,
}

impl TableSchema {
    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn primary_key(&self) -> &str {
        self.columns
            .iter()
            .find(|c| c.kind == ColumnKind::PrimaryKey)
            .map(|c| c.name.as_str())
            .expect("validated table has a primary key")
    }

    /// Non-key columns, in declaration order.
    pub fn attributes(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns.iter().filter(|c| !c.kind.is_key())
    }
}

/// A foreign key `table.column` referencing `ref_table.ref_column`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FkEdge {
    pub table: String,
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

/// One foreign-key edge seen from one of its endpoints.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub table: String,
    pub local_column: String,
    pub remote_column: String,
}

#[derive(Clone, Debug)]
pub struct SchemaCatalog {
    tables: Vec<TableSchema>,
    by_name: HashMap<String, usize>,
    target_table: String,
    target_attribute: String,
    fk_edges: Vec<FkEdge>,
    depths: BTreeMap<String, usize>,
    unreachable: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    target: String,
    tables: Vec<TableDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableDoc {
    name: String,
    file: PathBuf,
    columns: Vec<String>,
}

/// Reads and validates a schema file.
pub fn load_schema(path: impl AsRef<Path>) -> Result<SchemaCatalog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schema(&text)
}

pub fn parse_schema(text: &str) -> Result<SchemaCatalog> {
    let doc: SchemaDoc = toml::from_str(text).map_err(|e| Error::SchemaParse(e.to_string()))?;
    let (target_table, target_attribute) = doc.target.split_once('.').ok_or_else(|| {
        Error::SchemaParse(format!("target `{}` must be written as Table.Column", doc.target))
    })?;
    let mut tables = Vec::with_capacity(doc.tables.len());
    for t in doc.tables {
        let mut columns = Vec::with_capacity(t.columns.len());
        for entry in &t.columns {
            let (name, kind) = entry.split_once(':').ok_or_else(|| {
                Error::SchemaParse(format!("table `{}`: column `{entry}` is not name:type", t.name))
            })?;
            let kind = ColumnKind::parse(kind).ok_or_else(|| {
                Error::SchemaParse(format!(
                    "table `{}`: column `{entry}` has an unknown type (pk, fk(T.C), num, cat)",
                    t.name
                ))
            })?;
            columns.push(ColumnSpec::new(name.trim(), kind));
        }
        tables.push(TableSchema {
            name: t.name,
            columns,
            source_file: t.file,
        });
    }
    SchemaCatalog::new(tables, target_table.trim(), target_attribute.trim())
}

impl SchemaCatalog {
    pub fn new(
        tables: Vec<TableSchema>,
        target_table: impl Into<String>,
        target_attribute: impl Into<String>,
    ) -> Result<Self> {
        let target_table = target_table.into();
        let target_attribute = target_attribute.into();

        let mut by_name = HashMap::new();
        for (i, t) in tables.iter().enumerate() {
            if by_name.insert(t.name.clone(), i).is_some() {
                return Err(Error::Schema(format!("duplicate table `{}`", t.name)));
            }
            let mut seen = HashSet::new();
            for c in &t.columns {
                if !seen.insert(c.name.as_str()) {
                    return Err(Error::Schema(format!(
                        "duplicate column `{}.{}`",
                        t.name, c.name
                    )));
                }
            }
            match t.columns.iter().filter(|c| c.kind == ColumnKind::PrimaryKey).count() {
                1 => {}
                0 => {
                    return Err(Error::Schema(format!("table `{}` has no primary key", t.name)))
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "table `{}` declares several primary key columns; composite keys are not supported",
                        t.name
                    )))
                }
            }
        }

        let mut fk_edges = Vec::new();
        for t in &tables {
            for c in &t.columns {
                let ColumnKind::ForeignKey { table, column } = &c.kind else {
                    continue;
                };
                let referenced = by_name.get(table).map(|&i| &tables[i]).ok_or_else(|| {
                    Error::Schema(format!(
                        "foreign key `{}.{}` references unknown table `{table}`",
                        t.name, c.name
                    ))
                })?;
                match referenced.column(column) {
                    Some(rc) if rc.kind == ColumnKind::PrimaryKey => {}
                    Some(_) => {
                        return Err(Error::Schema(format!(
                            "foreign key `{}.{}` references `{table}.{column}`, which is not a primary key",
                            t.name, c.name
                        )))
                    }
                    None => {
                        return Err(Error::Schema(format!(
                            "foreign key `{}.{}` references unknown column `{table}.{column}`",
                            t.name, c.name
                        )))
                    }
                }
                fk_edges.push(FkEdge {
                    table: t.name.clone(),
                    column: c.name.clone(),
                    ref_table: table.clone(),
                    ref_column: column.clone(),
                });
            }
        }

        let target = by_name
            .get(&target_table)
            .map(|&i| &tables[i])
            .ok_or_else(|| Error::Schema(format!("target table `{target_table}` does not exist")))?;
        match target.column(&target_attribute) {
            Some(c) if c.kind == ColumnKind::Categorical => {}
            Some(_) => {
                return Err(Error::Schema(format!(
                    "target attribute `{target_table}.{target_attribute}` must be categorical"
                )))
            }
            None => {
                return Err(Error::Schema(format!(
                    "target attribute `{target_table}.{target_attribute}` does not exist"
                )))
            }
        }

        let mut catalog = SchemaCatalog {
            tables,
            by_name,
            target_table,
            target_attribute,
            fk_edges,
            depths: BTreeMap::new(),
            unreachable: Vec::new(),
        };
        catalog.depths = catalog.compute_depths();
        catalog.unreachable = catalog
            .tables
            .iter()
            .filter(|t| !catalog.depths.contains_key(&t.name))
            .map(|t| t.name.clone())
            .collect();
        for name in &catalog.unreachable {
            log::warn!("table `{name}` is not reachable from the target table and is ignored");
        }
        Ok(catalog)
    }

    fn compute_depths(&self) -> BTreeMap<String, usize> {
        let mut depths = BTreeMap::new();
        depths.insert(self.target_table.clone(), 0);
        let mut queue = VecDeque::from([self.target_table.as_str()]);
        while let Some(table) = queue.pop_front() {
            let d = depths[table];
            for e in &self.fk_edges {
                let other = if e.table == table {
                    e.ref_table.as_str()
                } else if e.ref_table == table {
                    e.table.as_str()
                } else {
                    continue;
                };
                if !depths.contains_key(other) {
                    depths.insert(other.to_string(), d + 1);
                    queue.push_back(other);
                }
            }
        }
        depths
    }

    pub fn tables(&self) -> &[TableSchema] {
        &self.tables
    }

    pub fn table(&self, name: &str) -> Result<&TableSchema> {
        self.by_name
            .get(name)
            .map(|&i| &self.tables[i])
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    pub fn target_table(&self) -> &str {
        &self.target_table
    }

    pub fn target_attribute(&self) -> &str {
        &self.target_attribute
    }

    pub fn target_schema(&self) -> &TableSchema {
        self.table(&self.target_table).expect("validated target table")
    }

    pub fn fk_edges(&self) -> &[FkEdge] {
        &self.fk_edges
    }

    pub fn unreachable_tables(&self) -> &[String] {
        &self.unreachable
    }

    /// Shortest hop distance from the target table; `None` if unreachable.
    pub fn depth(&self, table: &str) -> Option<usize> {
        self.depths.get(table).copied()
    }

    pub fn table_depths(&self) -> BTreeMap<String, usize> {
        self.depths.clone()
    }

    /// Every foreign-key edge incident to `table`, in edge declaration order.
    pub fn neighbors(&self, table: &str) -> Result<Vec<Neighbor>> {
        self.table(table)?;
        let mut out = Vec::new();
        for e in &self.fk_edges {
            if e.table == table {
                out.push(Neighbor {
                    table: e.ref_table.clone(),
                    local_column: e.column.clone(),
                    remote_column: e.ref_column.clone(),
                });
            }
            if e.ref_table == table && e.table != table {
                out.push(Neighbor {
                    table: e.table.clone(),
                    local_column: e.ref_column.clone(),
                    remote_column: e.column.clone(),
                });
            }
        }
        Ok(out)
    }

    /// A pure link table: only key columns and at least two foreign keys.
    pub fn is_associative(&self, table: &str) -> Result<bool> {
        let t = self.table(table)?;
        let all_keys = t.columns.iter().all(|c| c.kind.is_key());
        let fks = t
            .columns
            .iter()
            .filter(|c| matches!(c.kind, ColumnKind::ForeignKey { .. }))
            .count();
        Ok(all_keys && fks >= 2)
    }

    /// Copy of the catalog with the target table reduced to its keys and
    /// the target attribute.
    pub fn strip_target_features(&self) -> SchemaCatalog {
        let mut out = self.clone();
        let idx = out.by_name[&out.target_table];
        let target_attribute = out.target_attribute.clone();
        out.tables[idx]
            .columns
            .retain(|c| c.kind.is_key() || c.name == target_attribute);
        out
    }

    /// Hash of the structural schema (names, kinds, target); file locations
    /// are not part of it.
    pub fn fingerprint(&self) -> String {
        let mut canon = String::new();
        let _ = writeln!(canon, "target {}.{}", self.target_table, self.target_attribute);
        for t in &self.tables {
            let _ = write!(canon, "table {}", t.name);
            for c in &t.columns {
                let _ = write!(canon, " {}:{}", c.name, c.kind.render());
            }
            canon.push('\n');
        }
        hex::encode(Sha256::digest(canon.as_bytes()))
    }

    /// Renders the catalog back into the schema file format.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "target = \"{}.{}\"", self.target_table, self.target_attribute);
        for t in &self.tables {
            let _ = writeln!(out, "\n[[tables]]");
            let _ = writeln!(out, "name = \"{}\"", t.name);
            let _ = writeln!(out, "file = \"{}\"", t.source_file.display());
            let cols: Vec<String> = t
                .columns
                .iter()
                .map(|c| format!("\"{}:{}\"", c.name, c.kind.render()))
                .collect();
            let _ = writeln!(out, "columns = [{}]", cols.join(", "));
        }
        out
    }
}
