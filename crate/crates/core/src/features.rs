//! Aggregate features over join-path multisets.
//!
//! A determinate path yields one identity feature per attribute of its
//! terminal table. A non-determinate path yields an `is_empty` flag plus,
//! per attribute, the numeric seven-vector or the categorical count,
//! distinct count and (for small domains) one `contains` flag per value.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::ColumnKind;
use crate::error::Result;
use crate::joinpath::{project_values, JoinInstantiation, JoinPath, Projection};
use crate::storage::{ColumnData, Database};
use crate::tree::Value;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Identity,
    Avg,
    Std,
    Var,
    Max,
    Min,
    Sum,
    Count,
    DistinctCount,
    Contains(String),
    IsEmpty,
}

impl fmt::Display for Aggregator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Aggregator::Identity => "identity",
            Aggregator::Avg => "avg",
            Aggregator::Std => "std",
            Aggregator::Var => "var",
            Aggregator::Max => "max",
            Aggregator::Min => "min",
            Aggregator::Sum => "sum",
            Aggregator::Count => "count",
            Aggregator::DistinctCount => "distinct_count",
            Aggregator::Contains(v) => return write!(f, "contains={v}"),
            Aggregator::IsEmpty => "is_empty",
        };
        f.write_str(s)
    }
}

pub const NUMERIC_AGGREGATORS: [Aggregator; 7] = [
    Aggregator::Avg,
    Aggregator::Std,
    Aggregator::Var,
    Aggregator::Max,
    Aggregator::Min,
    Aggregator::Sum,
    Aggregator::Count,
];

/// Path + attribute + aggregator. Ordered by path, then attribute (the
/// attribute-less `is_empty` first), then aggregator.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub path: JoinPath,
    pub attribute: Option<String>,
    pub aggregator: Aggregator,
}

impl FeatureDescriptor {
    pub fn new(path: JoinPath, attribute: Option<&str>, aggregator: Aggregator) -> Self {
        FeatureDescriptor {
            path,
            attribute: attribute.map(str::to_string),
            aggregator,
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}:{}",
            self.path,
            self.attribute.as_deref().unwrap_or(""),
            self.aggregator
        )
    }
}

/// Column cells; `None` is an undefined value.
#[derive(Clone, Debug, PartialEq)]
pub enum Cells {
    Numeric(Vec<Option<f64>>),
    Categorical {
        codes: Vec<Option<u32>>,
        dictionary: Arc<[String]>,
    },
    Boolean(Vec<Option<bool>>),
}

impl Cells {
    pub fn len(&self) -> usize {
        match self {
            Cells::Numeric(v) => v.len(),
            Cells::Categorical { codes, .. } => codes.len(),
            Cells::Boolean(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_defined(&self, i: usize) -> bool {
        match self {
            Cells::Numeric(v) => v[i].is_some(),
            Cells::Categorical { codes, .. } => codes[i].is_some(),
            Cells::Boolean(v) => v[i].is_some(),
        }
    }

    /// Cells at the given positions, in that order.
    pub fn select(&self, positions: &[usize]) -> Cells {
        match self {
            Cells::Numeric(v) => Cells::Numeric(positions.iter().map(|&p| v[p]).collect()),
            Cells::Categorical { codes, dictionary } => Cells::Categorical {
                codes: positions.iter().map(|&p| codes[p]).collect(),
                dictionary: Arc::clone(dictionary),
            },
            Cells::Boolean(v) => Cells::Boolean(positions.iter().map(|&p| v[p]).collect()),
        }
    }

    pub fn value(&self, i: usize) -> Option<Value> {
        match self {
            Cells::Numeric(v) => v[i].map(Value::Num),
            Cells::Categorical { codes, dictionary } => {
                codes[i].map(|c| Value::Cat(dictionary[c as usize].clone()))
            }
            Cells::Boolean(v) => v[i].map(Value::Bool),
        }
    }

    /// Text form of a cell, `missing` when undefined.
    pub fn render(&self, i: usize, missing: &str) -> String {
        match self {
            Cells::Numeric(v) => v[i].map_or_else(|| missing.to_string(), |x| x.to_string()),
            Cells::Categorical { codes, dictionary } => codes[i]
                .map_or_else(|| missing.to_string(), |c| dictionary[c as usize].clone()),
            Cells::Boolean(v) => v[i].map_or_else(|| missing.to_string(), |b| b.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureColumn {
    pub descriptor: FeatureDescriptor,
    pub cells: Cells,
}

impl FeatureColumn {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn select(&self, positions: &[usize]) -> FeatureColumn {
        FeatureColumn {
            descriptor: self.descriptor.clone(),
            cells: self.cells.select(positions),
        }
    }
}

/// Domain-size bounds for `contains` features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub domsize_abs: usize,
    pub domsize_rel: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            domsize_abs: 40,
            domsize_rel: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NumericAggregates {
    pub avg: Option<f64>,
    pub std: Option<f64>,
    pub var: Option<f64>,
    pub max: Option<f64>,
    pub min: Option<f64>,
    pub sum: Option<f64>,
    pub count: Option<f64>,
}

impl NumericAggregates {
    pub fn get(&self, agg: &Aggregator) -> Option<f64> {
        match agg {
            Aggregator::Avg => self.avg,
            Aggregator::Std => self.std,
            Aggregator::Var => self.var,
            Aggregator::Max => self.max,
            Aggregator::Min => self.min,
            Aggregator::Sum => self.sum,
            Aggregator::Count => self.count,
            _ => None,
        }
    }
}

/// `count` covers the whole multiset; the rest use only the non-missing
/// values and are undefined when there are none. Variance divides by n.
pub fn aggregate_numeric(values: &[Option<f64>]) -> NumericAggregates {
    if values.is_empty() {
        return NumericAggregates::default();
    }
    let count = Some(values.len() as f64);
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return NumericAggregates {
            count,
            ..NumericAggregates::default()
        };
    }
    let n = present.len() as f64;
    let sum: f64 = present.iter().sum();
    let avg = sum / n;
    let var = present.iter().map(|x| (x - avg) * (x - avg)).sum::<f64>() / n;
    let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = present.iter().copied().fold(f64::INFINITY, f64::min);
    NumericAggregates {
        avg: Some(avg),
        std: Some(var.sqrt()),
        var: Some(var),
        max: Some(max),
        min: Some(min),
        sum: Some(sum),
        count,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CategoricalAggregates {
    pub count: Option<f64>,
    pub distinct_count: Option<f64>,
    /// Indexed by dictionary code; empty when contains features are off.
    pub contains: Vec<Option<bool>>,
}

pub fn aggregate_categorical(
    values: &[Option<u32>],
    domain_size: usize,
    emit_contains: bool,
) -> CategoricalAggregates {
    let width = if emit_contains { domain_size } else { 0 };
    if values.is_empty() {
        return CategoricalAggregates {
            count: None,
            distinct_count: None,
            contains: vec![None; width],
        };
    }
    let mut seen = vec![false; domain_size];
    for v in values.iter().flatten() {
        seen[*v as usize] = true;
    }
    let distinct = seen.iter().filter(|&&s| s).count();
    CategoricalAggregates {
        count: Some(values.len() as f64),
        distinct_count: Some(distinct as f64),
        contains: seen.into_iter().take(width).map(Some).collect(),
    }
}

/// `contains` features only for domains strictly below both bounds.
pub fn contains_enabled(domain_size: usize, table_rows: usize, params: &FeatureParams) -> bool {
    domain_size < params.domsize_abs && (domain_size as f64) < params.domsize_rel * table_rows as f64
}

/// All feature columns defined by one path, in descriptor order.
pub fn features_for_path(
    db: &Database,
    inst: &JoinInstantiation,
    params: &FeatureParams,
) -> Result<Vec<FeatureColumn>> {
    let catalog = db.catalog();
    let path = inst.path();
    let schema = catalog.table(path.terminal())?;
    let table = db.table(path.terminal())?;
    let determinate = path.is_determinate(catalog);
    let mut out = Vec::new();

    if !determinate {
        out.push(FeatureColumn {
            descriptor: FeatureDescriptor::new(path.clone(), None, Aggregator::IsEmpty),
            cells: Cells::Boolean((0..inst.len()).map(|p| Some(inst.bag(p).is_empty())).collect()),
        });
    }

    for col in schema.attributes() {
        if path.is_root() && col.name == catalog.target_attribute() {
            continue;
        }
        let attr = Some(col.name.as_str());
        let projection = project_values(db, inst, &col.name)?;
        match (projection, determinate) {
            (Projection::Numeric(bags), true) => out.push(FeatureColumn {
                descriptor: FeatureDescriptor::new(path.clone(), attr, Aggregator::Identity),
                cells: Cells::Numeric(bags.iter().map(|b| single(b)).collect()),
            }),
            (Projection::Categorical { values, dictionary }, true) => out.push(FeatureColumn {
                descriptor: FeatureDescriptor::new(path.clone(), attr, Aggregator::Identity),
                cells: Cells::Categorical {
                    codes: values.iter().map(|b| single(b)).collect(),
                    dictionary: dictionary.into(),
                },
            }),
            (Projection::Numeric(bags), false) => {
                let aggs: Vec<NumericAggregates> = bags.iter().map(|b| aggregate_numeric(b)).collect();
                for agg in NUMERIC_AGGREGATORS {
                    out.push(FeatureColumn {
                        cells: Cells::Numeric(aggs.iter().map(|a| a.get(&agg)).collect()),
                        descriptor: FeatureDescriptor::new(path.clone(), attr, agg),
                    });
                }
            }
            (Projection::Categorical { values, dictionary }, false) => {
                debug_assert_eq!(col.kind, ColumnKind::Categorical);
                let emit = contains_enabled(dictionary.len(), table.row_count(), params);
                let aggs: Vec<CategoricalAggregates> = values
                    .iter()
                    .map(|b| aggregate_categorical(b, dictionary.len(), emit))
                    .collect();
                out.push(FeatureColumn {
                    descriptor: FeatureDescriptor::new(path.clone(), attr, Aggregator::Count),
                    cells: Cells::Numeric(aggs.iter().map(|a| a.count).collect()),
                });
                out.push(FeatureColumn {
                    descriptor: FeatureDescriptor::new(path.clone(), attr, Aggregator::DistinctCount),
                    cells: Cells::Numeric(aggs.iter().map(|a| a.distinct_count).collect()),
                });
                if emit {
                    for (code, value) in dictionary.iter().enumerate() {
                        out.push(FeatureColumn {
                            descriptor: FeatureDescriptor::new(
                                path.clone(),
                                attr,
                                Aggregator::Contains(value.clone()),
                            ),
                            cells: Cells::Boolean(aggs.iter().map(|a| a.contains[code]).collect()),
                        });
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.descriptor.cmp(&b.descriptor));
    Ok(out)
}

/// The value of a determinate bag: defined iff it holds exactly one
/// non-missing element.
fn single<T: Copy>(bag: &[Option<T>]) -> Option<T> {
    match bag {
        [Some(v)] => Some(*v),
        _ => None,
    }
}

/// Value of one descriptor for the instance at `position` of `inst`
/// (whose path must be the descriptor's). Agrees cell-for-cell with
/// [`features_for_path`]; `contains` of a value outside the database's
/// dictionary is false whenever the cell is defined.
pub fn feature_value(
    db: &Database,
    inst: &JoinInstantiation,
    position: usize,
    descriptor: &FeatureDescriptor,
) -> Result<Option<Value>> {
    let bag = inst.bag(position);
    let Some(attribute) = descriptor.attribute.as_deref() else {
        return Ok(Some(Value::Bool(bag.is_empty())));
    };
    let table = db.table(inst.path().terminal())?;
    let column = table.column(attribute)?;
    Ok(match (column, &descriptor.aggregator) {
        (ColumnData::Numeric { values, missing }, agg) => {
            let cells: Vec<Option<f64>> = bag
                .iter()
                .map(|&r| (!missing[r as usize]).then(|| values[r as usize]))
                .collect();
            match agg {
                Aggregator::Identity => single(&cells),
                agg => aggregate_numeric(&cells).get(agg),
            }
            .map(Value::Num)
        }
        (
            ColumnData::Categorical {
                codes,
                dictionary,
                missing,
            },
            agg,
        ) => {
            let cells: Vec<Option<u32>> = bag
                .iter()
                .map(|&r| (!missing[r as usize]).then(|| codes[r as usize]))
                .collect();
            match agg {
                Aggregator::Identity => {
                    single(&cells).map(|c| Value::Cat(dictionary[c as usize].clone()))
                }
                Aggregator::Count | Aggregator::DistinctCount => {
                    let a = aggregate_categorical(&cells, dictionary.len(), false);
                    if *agg == Aggregator::Count {
                        a.count.map(Value::Num)
                    } else {
                        a.distinct_count.map(Value::Num)
                    }
                }
                Aggregator::Contains(v) => (!cells.is_empty()).then(|| {
                    let code = dictionary.binary_search(v).ok().map(|c| c as u32);
                    Value::Bool(code.is_some_and(|code| cells.contains(&Some(code))))
                }),
                _ => None,
            }
        }
        (ColumnData::Key { .. }, _) => {
            return Err(crate::error::Error::KeyAttribute {
                table: table.name().to_string(),
                column: attribute.to_string(),
            })
        }
    })
}
