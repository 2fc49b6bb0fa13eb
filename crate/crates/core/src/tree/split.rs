//! Split search by information gain with Pass/Fail/Undefined partitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Cells, FeatureDescriptor};
use crate::ldt::LocalDataTable;

/// Where instances with an undefined feature value go.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Pass,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestKind {
    NumericLe { threshold: f64 },
    CategoricalEq { value: String },
    BooleanTrue,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitTest {
    pub descriptor: FeatureDescriptor,
    pub kind: TestKind,
    pub undefined_route: Route,
}

/// A single feature value, as computed for one instance.
#[derive(Clone, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    Cat(String),
    Bool(bool),
}

impl SplitTest {
    /// `Some(pass)` for a defined value, `None` when untestable.
    pub fn outcome(&self, value: Option<&Value>) -> Option<bool> {
        match (&self.kind, value?) {
            (TestKind::NumericLe { threshold }, Value::Num(v)) => Some(v <= threshold),
            (TestKind::CategoricalEq { value }, Value::Cat(v)) => Some(v == value),
            (TestKind::BooleanTrue, Value::Bool(b)) => Some(*b),
            _ => None,
        }
    }

    pub fn routes_left(&self, value: Option<&Value>) -> bool {
        self.outcome(value)
            .unwrap_or(self.undefined_route == Route::Pass)
    }

    /// Routing of row `i` of a column.
    pub fn passes(&self, cells: &Cells, i: usize) -> bool {
        let outcome = match (&self.kind, cells) {
            (TestKind::NumericLe { threshold }, Cells::Numeric(v)) => v[i].map(|x| x <= *threshold),
            (TestKind::CategoricalEq { value }, Cells::Categorical { codes, dictionary }) => {
                codes[i].map(|c| dictionary[c as usize] == *value)
            }
            (TestKind::BooleanTrue, Cells::Boolean(v)) => v[i],
            _ => None,
        };
        outcome.unwrap_or(self.undefined_route == Route::Pass)
    }
}

/// Shannon entropy in bits.
pub fn entropy(counts: &[u64]) -> Result<f64> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyDistribution);
    }
    Ok(entropy_of(counts, n))
}

fn entropy_of(counts: &[u64], n: u64) -> f64 {
    let n = n as f64;
    -counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.log2()
        })
        .sum::<f64>()
}

/// Gain of a binary partition with the given class counts per side; `None`
/// when a side is empty.
pub fn information_gain(parent_entropy: f64, left: &[u64], right: &[u64]) -> Option<f64> {
    let nl: u64 = left.iter().sum();
    let nr: u64 = right.iter().sum();
    if nl == 0 || nr == 0 {
        return None;
    }
    let n = (nl + nr) as f64;
    Some(
        parent_entropy
            - (nl as f64 / n) * entropy_of(left, nl)
            - (nr as f64 / n) * entropy_of(right, nr),
    )
}

pub fn class_counts(labels: &[u32], n_classes: usize) -> Vec<u64> {
    let mut counts = vec![0u64; n_classes];
    for &l in labels {
        counts[l as usize] += 1;
    }
    counts
}

fn add(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[u64], b: &[u64]) -> Vec<u64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Merges Undefined into the better side; ties go to Fail.
fn best_route(
    parent_entropy: f64,
    pass: &[u64],
    fail: &[u64],
    undefined: &[u64],
) -> Option<(Route, f64)> {
    let via_pass = information_gain(parent_entropy, &add(pass, undefined), fail);
    let via_fail = information_gain(parent_entropy, pass, &add(fail, undefined));
    match (via_pass, via_fail) {
        (Some(p), Some(f)) if p > f => Some((Route::Pass, p)),
        (_, Some(f)) => Some((Route::Fail, f)),
        (Some(p), None) => Some((Route::Pass, p)),
        (None, None) => None,
    }
}

/// Threshold strictly between `a < b` that keeps `a` on the pass side.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    let m = if m.is_finite() { m } else { a / 2.0 + b / 2.0 };
    if m >= b {
        a
    } else {
        m
    }
}

struct Candidate {
    kind: TestKind,
    route: Route,
    gain: f64,
}

fn consider(best: &mut Option<Candidate>, kind: TestKind, found: Option<(Route, f64)>) {
    if let Some((route, gain)) = found {
        if best.as_ref().is_none_or(|b| gain > b.gain) {
            *best = Some(Candidate { kind, route, gain });
        }
    }
}

fn best_for_column(
    cells: &Cells,
    labels: &[u32],
    n_classes: usize,
    total: &[u64],
    parent_entropy: f64,
) -> Option<Candidate> {
    let mut best = None;
    match cells {
        Cells::Numeric(values) => {
            let mut defined: Vec<(f64, u32)> = values
                .iter()
                .zip(labels)
                .filter_map(|(v, &l)| v.map(|v| (v, l)))
                .collect();
            defined.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let defined_counts = class_counts(&defined.iter().map(|d| d.1).collect::<Vec<_>>(), n_classes);
            let undefined = sub(total, &defined_counts);
            let mut pass = vec![0u64; n_classes];
            for i in 0..defined.len() {
                pass[defined[i].1 as usize] += 1;
                if i + 1 < defined.len() && defined[i].0 < defined[i + 1].0 {
                    let fail = sub(&defined_counts, &pass);
                    let threshold = midpoint(defined[i].0, defined[i + 1].0);
                    consider(
                        &mut best,
                        TestKind::NumericLe { threshold },
                        best_route(parent_entropy, &pass, &fail, &undefined),
                    );
                }
            }
        }
        Cells::Categorical { codes, dictionary } => {
            let mut per_value = vec![vec![0u64; n_classes]; dictionary.len()];
            let mut present = vec![false; dictionary.len()];
            for (c, &l) in codes.iter().zip(labels) {
                if let Some(c) = c {
                    per_value[*c as usize][l as usize] += 1;
                    present[*c as usize] = true;
                }
            }
            let defined_counts = per_value
                .iter()
                .fold(vec![0u64; n_classes], |acc, v| add(&acc, v));
            let undefined = sub(total, &defined_counts);
            for (code, pass) in per_value.iter().enumerate() {
                if !present[code] {
                    continue;
                }
                let fail = sub(&defined_counts, pass);
                consider(
                    &mut best,
                    TestKind::CategoricalEq {
                        value: dictionary[code].clone(),
                    },
                    best_route(parent_entropy, pass, &fail, &undefined),
                );
            }
        }
        Cells::Boolean(values) => {
            let mut pass = vec![0u64; n_classes];
            let mut fail = vec![0u64; n_classes];
            for (v, &l) in values.iter().zip(labels) {
                match v {
                    Some(true) => pass[l as usize] += 1,
                    Some(false) => fail[l as usize] += 1,
                    None => {}
                }
            }
            let undefined = sub(&sub(total, &pass), &fail);
            consider(
                &mut best,
                TestKind::BooleanTrue,
                best_route(parent_entropy, &pass, &fail, &undefined),
            );
        }
    }
    best
}

/// Highest-gain test over every column with both sides nonempty. Ties keep
/// the earlier column in descriptor order, then the lower threshold or
/// value.
pub fn best_split(ldt: &LocalDataTable, n_classes: usize) -> Option<(SplitTest, f64)> {
    if ldt.is_empty() {
        return None;
    }
    let total = class_counts(ldt.labels(), n_classes);
    let parent_entropy = entropy_of(&total, ldt.len() as u64);
    let mut best: Option<(SplitTest, f64)> = None;
    for column in ldt.columns() {
        let Some(c) = best_for_column(&column.cells, ldt.labels(), n_classes, &total, parent_entropy)
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(_, g)| c.gain > *g) {
            best = Some((
                SplitTest {
                    descriptor: column.descriptor.clone(),
                    kind: c.kind,
                    undefined_route: c.route,
                },
                c.gain,
            ));
        }
    }
    best
}

/// Gain of `test` on the table when undefined values follow `route`.
pub fn gain_with_route(ldt: &LocalDataTable, test: &SplitTest, route: Route, n_classes: usize) -> Option<f64> {
    let column = ldt.column(&test.descriptor)?;
    let probe = SplitTest {
        undefined_route: route,
        ..test.clone()
    };
    let mut left = vec![0u64; n_classes];
    let mut right = vec![0u64; n_classes];
    for (i, &l) in ldt.labels().iter().enumerate() {
        if probe.passes(&column.cells, i) {
            left[l as usize] += 1;
        } else {
            right[l as usize] += 1;
        }
    }
    let total = class_counts(ldt.labels(), n_classes);
    information_gain(entropy_of(&total, ldt.len() as u64), &left, &right)
}
