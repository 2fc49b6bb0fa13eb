//! Columnar in-memory tables with hash indexes on every key column.
//!
//! Key values are interned into one database-wide dictionary, so a join is
//! a hash probe on integer codes. Categorical dictionaries are sorted, which
//! makes codes independent of row order.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::catalog::{ColumnKind, SchemaCatalog, TableSchema};
use crate::error::{Error, Result};

pub type RowId = u32;
pub type KeyCode = u64;

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Numeric {
        values: Vec<f64>,
        missing: Vec<bool>,
    },
    Categorical {
        codes: Vec<u32>,
        dictionary: Vec<String>,
        missing: Vec<bool>,
    },
    Key {
        codes: Vec<KeyCode>,
    },
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric { values, .. } => values.len(),
            ColumnData::Categorical { codes, .. } => codes.len(),
            ColumnData::Key { codes } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dictionary(&self) -> Option<&[String]> {
        match self {
            ColumnData::Categorical { dictionary, .. } => Some(dictionary),
            _ => None,
        }
    }
}

/// Rows per key value for one (table, column). Row lists are sorted.
#[derive(Clone, Debug, Default)]
pub struct KeyIndex {
    rows: HashMap<KeyCode, Vec<RowId>>,
}

impl KeyIndex {
    fn build(codes: &[KeyCode]) -> Self {
        let mut rows: HashMap<KeyCode, Vec<RowId>> = HashMap::new();
        for (r, &k) in codes.iter().enumerate() {
            rows.entry(k).or_default().push(r as RowId);
        }
        KeyIndex { rows }
    }

    pub fn get(&self, key: KeyCode) -> &[RowId] {
        self.rows.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    name: String,
    rows: usize,
    columns: Vec<(String, ColumnData)>,
    indexes: HashMap<String, KeyIndex>,
}

impl Table {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn row_count(&self) -> usize {
        self.rows
    }

    pub fn column(&self, name: &str) -> Result<&ColumnData> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, c)| c)
            .ok_or_else(|| Error::UnknownColumn {
                table: self.name.clone(),
                column: name.to_string(),
            })
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &ColumnData)> {
        self.columns.iter().map(|(n, c)| (n.as_str(), c))
    }

    pub fn key_codes(&self, name: &str) -> Result<&[KeyCode]> {
        match self.column(name)? {
            ColumnData::Key { codes } => Ok(codes),
            _ => Err(Error::MissingIndex {
                table: self.name.clone(),
                column: name.to_string(),
            }),
        }
    }

    pub fn index(&self, column: &str) -> Result<&KeyIndex> {
        self.indexes.get(column).ok_or_else(|| Error::MissingIndex {
            table: self.name.clone(),
            column: column.to_string(),
        })
    }
}

/// Tokens read as missing values, plus whether to drop the target table's
/// feature columns.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub missing_tokens: Vec<String>,
    pub strip_target_features: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            missing_tokens: vec![String::new(), "?".to_string()],
            strip_target_features: false,
        }
    }
}

/// A table as header + string cells, before typing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    /// Rows dropped per table because a key cell was missing.
    pub rejected_rows: BTreeMap<String, usize>,
    /// Foreign-key cells that match no primary key, per `Table.column`.
    pub dangling_references: BTreeMap<String, usize>,
}

#[derive(Clone, Debug)]
pub struct Database {
    catalog: SchemaCatalog,
    tables: Vec<Table>,
    by_name: HashMap<String, usize>,
    keys: Vec<String>,
    key_codes: HashMap<String, KeyCode>,
    stats: LoadStats,
    options: LoadOptions,
}

/// Loads every table's CSV file from `data_dir`.
pub fn load_database(
    catalog: &SchemaCatalog,
    data_dir: impl AsRef<Path>,
    options: &LoadOptions,
) -> Result<Database> {
    let data_dir = data_dir.as_ref();
    let mut raw = BTreeMap::new();
    for t in catalog.tables() {
        let path = data_dir.join(&t.source_file);
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        raw.insert(t.name.clone(), read_csv(&t.name, file)?);
    }
    Database::from_raw(catalog, raw, options)
}

pub fn read_csv(table: &str, reader: impl std::io::Read) -> Result<RawTable> {
    let csv_err = |e: csv::Error| Error::Csv {
        table: table.to_string(),
        message: e.to_string(),
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for record in rdr.records() {
        rows.push(record.map_err(csv_err)?.iter().map(str::to_string).collect());
    }
    Ok(RawTable { header, rows })
}

impl Database {
    /// Types and indexes already-parsed tables. `raw` is keyed by table name.
    pub fn from_raw(
        catalog: &SchemaCatalog,
        mut raw: BTreeMap<String, RawTable>,
        options: &LoadOptions,
    ) -> Result<Database> {
        let effective = if options.strip_target_features {
            catalog.strip_target_features()
        } else {
            catalog.clone()
        };
        let mut keys = Vec::new();
        let mut key_codes: HashMap<String, KeyCode> = HashMap::new();
        let mut stats = LoadStats::default();
        let mut tables = Vec::with_capacity(catalog.tables().len());
        let mut by_name = HashMap::new();

        for (schema, full_schema) in effective.tables().iter().zip(catalog.tables()) {
            let raw = raw
                .remove(&schema.name)
                .ok_or_else(|| Error::UnknownTable(schema.name.clone()))?;
            let positions = header_positions(full_schema, &raw)?;
            let is_missing = |s: &str| options.missing_tokens.iter().any(|t| t == s.trim());

            let mut kept = Vec::with_capacity(raw.rows.len());
            for (i, row) in raw.rows.iter().enumerate() {
                if row.len() != raw.header.len() {
                    return Err(Error::Csv {
                        table: schema.name.clone(),
                        message: format!("row {} has {} fields, expected {}", i + 1, row.len(), raw.header.len()),
                    });
                }
                let key_missing = schema
                    .columns
                    .iter()
                    .any(|c| c.kind.is_key() && is_missing(&row[positions[&c.name]]));
                if key_missing {
                    *stats.rejected_rows.entry(schema.name.clone()).or_default() += 1;
                } else {
                    kept.push(i);
                }
            }
            if stats.rejected_rows.get(&schema.name).copied().unwrap_or(0) > 0 {
                log::warn!(
                    "table `{}`: {} rows with missing key values rejected",
                    schema.name,
                    stats.rejected_rows[&schema.name]
                );
            }

            let mut columns = Vec::with_capacity(schema.columns.len());
            for col in &schema.columns {
                let pos = positions[&col.name];
                let cells = kept.iter().map(|&i| raw.rows[i][pos].trim());
                let data = match col.kind {
                    ColumnKind::PrimaryKey | ColumnKind::ForeignKey { .. } => {
                        let codes = cells
                            .map(|s| {
                                *key_codes.entry(s.to_string()).or_insert_with(|| {
                                    keys.push(s.to_string());
                                    (keys.len() - 1) as KeyCode
                                })
                            })
                            .collect();
                        ColumnData::Key { codes }
                    }
                    ColumnKind::Numeric => {
                        let mut values = Vec::with_capacity(kept.len());
                        let mut missing = Vec::with_capacity(kept.len());
                        for (row, s) in cells.enumerate() {
                            if is_missing(s) {
                                values.push(0.0);
                                missing.push(true);
                                continue;
                            }
                            match s.parse::<f64>() {
                                Ok(v) if v.is_finite() => {
                                    values.push(v);
                                    missing.push(false);
                                }
                                _ => {
                                    return Err(Error::BadNumber {
                                        table: schema.name.clone(),
                                        column: col.name.clone(),
                                        row: kept[row] + 1,
                                        token: s.to_string(),
                                    })
                                }
                            }
                        }
                        ColumnData::Numeric { values, missing }
                    }
                    ColumnKind::Categorical => {
                        let strings: Vec<&str> = cells.collect();
                        let mut dictionary: Vec<String> = strings
                            .iter()
                            .filter(|s| !is_missing(s))
                            .map(|s| s.to_string())
                            .collect();
                        dictionary.sort();
                        dictionary.dedup();
                        let lookup: HashMap<&str, u32> = dictionary
                            .iter()
                            .enumerate()
                            .map(|(i, s)| (s.as_str(), i as u32))
                            .collect();
                        let missing: Vec<bool> = strings.iter().map(|s| is_missing(s)).collect();
                        let codes = strings
                            .iter()
                            .map(|s| lookup.get(s).copied().unwrap_or(0))
                            .collect();
                        ColumnData::Categorical {
                            codes,
                            dictionary,
                            missing,
                        }
                    }
                };
                columns.push((col.name.clone(), data));
            }

            let mut indexes = HashMap::new();
            for (name, data) in &columns {
                if let ColumnData::Key { codes } = data {
                    indexes.insert(name.clone(), KeyIndex::build(codes));
                }
            }
            let pk = schema.primary_key();
            let pk_index: &KeyIndex = &indexes[pk];
            if pk_index.len() != kept.len() {
                return Err(Error::Csv {
                    table: schema.name.clone(),
                    message: format!("primary key `{pk}` has duplicate values"),
                });
            }
            by_name.insert(schema.name.clone(), tables.len());
            tables.push(Table {
                name: schema.name.clone(),
                rows: kept.len(),
                columns,
                indexes,
            });
        }

        for e in effective.fk_edges() {
            let t = &tables[by_name[&e.table]];
            let target = &tables[by_name[&e.ref_table]];
            let index = target.index(&e.ref_column)?;
            let dangling = t
                .key_codes(&e.column)?
                .iter()
                .filter(|&&k| index.get(k).is_empty())
                .count();
            if dangling > 0 {
                log::info!("{} values of `{}.{}` reference no `{}` row", dangling, e.table, e.column, e.ref_table);
                stats
                    .dangling_references
                    .insert(format!("{}.{}", e.table, e.column), dangling);
            }
        }

        Ok(Database {
            catalog: effective,
            tables,
            by_name,
            keys,
            key_codes,
            stats,
            options: options.clone(),
        })
    }

    pub fn catalog(&self) -> &SchemaCatalog {
        &self.catalog
    }

    pub fn options(&self) -> &LoadOptions {
        &self.options
    }

    pub fn load_stats(&self) -> &LoadStats {
        &self.stats
    }

    pub fn table(&self, name: &str) -> Result<&Table> {
        self.by_name
            .get(name)
            .map(|&i| &self.tables[i])
            .ok_or_else(|| Error::UnknownTable(name.to_string()))
    }

    pub fn target(&self) -> &Table {
        self.table(self.catalog.target_table())
            .expect("target table is loaded")
    }

    pub fn key_code(&self, value: &str) -> Option<KeyCode> {
        self.key_codes.get(value).copied()
    }

    pub fn key_value(&self, code: KeyCode) -> &str {
        &self.keys[code as usize]
    }

    /// Rows of `table` whose `column` equals `key`; empty when absent.
    pub fn rows_matching(&self, table: &str, column: &str, key: KeyCode) -> Result<&[RowId]> {
        Ok(self.table(table)?.index(column)?.get(key))
    }

    /// Class labels of the target table: code per row (`None` when the
    /// label is missing) and the label dictionary.
    pub fn labels(&self) -> (Vec<Option<u32>>, &[String]) {
        let col = self
            .target()
            .column(self.catalog.target_attribute())
            .expect("target attribute is loaded");
        match col {
            ColumnData::Categorical {
                codes,
                dictionary,
                missing,
            } => (
                codes
                    .iter()
                    .zip(missing)
                    .map(|(&c, &m)| (!m).then_some(c))
                    .collect(),
                dictionary,
            ),
            _ => unreachable!("target attribute is categorical"),
        }
    }

    /// Target rows that carry a class label.
    pub fn labeled_instances(&self) -> Vec<RowId> {
        self.labels()
            .0
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_some())
            .map(|(i, _)| i as RowId)
            .collect()
    }

    /// Primary-key value of a target row.
    pub fn instance_key(&self, row: RowId) -> &str {
        let pk = self.catalog.target_schema().primary_key();
        let codes = self.target().key_codes(pk).expect("primary key column");
        self.key_value(codes[row as usize])
    }

    /// Target row with the given primary-key value.
    pub fn instance_by_key(&self, value: &str) -> Option<RowId> {
        let code = self.key_code(value)?;
        let pk = self.catalog.target_schema().primary_key();
        self.target().index(pk).ok()?.get(code).first().copied()
    }
}

fn header_positions(schema: &TableSchema, raw: &RawTable) -> Result<HashMap<String, usize>> {
    let mut expected: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    let mut found = raw.header.clone();
    expected.sort();
    found.sort();
    if expected != found {
        return Err(Error::HeaderMismatch {
            table: schema.name.clone(),
            expected,
            found: raw.header.clone(),
        });
    }
    Ok(raw
        .header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.clone(), i))
        .collect())
}
