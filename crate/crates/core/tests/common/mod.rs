//! Random micro-databases and brute-force reference implementations used by
//! the oracle and acceptance tests. Nothing here calls into the join or
//! aggregation code under test.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use reltree::catalog::{parse_schema, SchemaCatalog};
use reltree::features::{Cells, FeatureColumn, FeatureDescriptor};
use reltree::ldt::LocalDataTable;
use reltree::storage::{Database, LoadOptions, RawTable};
use reltree::tree::{Route, TestKind, Value};

pub const MISSING: &str = "?";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Kind {
    Num,
    Cat,
}

#[derive(Clone, Debug)]
pub struct MicroTable {
    pub name: String,
    /// Attribute columns (no keys), the class column included for the target.
    pub attrs: Vec<(String, Kind)>,
    /// Foreign-key columns and the table they reference.
    pub fks: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl MicroTable {
    fn col(&self, name: &str) -> usize {
        self.header.iter().position(|h| h == name).unwrap()
    }

    /// Rows the loader keeps: those with every key cell present.
    pub fn kept(&self) -> Vec<&Vec<String>> {
        let keys: Vec<usize> = std::iter::once("id")
            .chain(self.fks.iter().map(|(c, _)| c.as_str()))
            .map(|c| self.col(c))
            .collect();
        self.rows
            .iter()
            .filter(|r| keys.iter().all(|&k| !is_missing(&r[k])))
            .collect()
    }

    pub fn is_associative(&self) -> bool {
        self.attrs.is_empty() && self.fks.len() >= 2
    }
}

fn is_missing(s: &str) -> bool {
    s.is_empty() || s == MISSING
}

#[derive(Clone, Debug)]
pub struct MicroDb {
    pub tables: Vec<MicroTable>,
    pub schema_text: String,
}

impl MicroDb {
    pub fn catalog(&self) -> SchemaCatalog {
        parse_schema(&self.schema_text).expect("generated schema is valid")
    }

    pub fn database(&self) -> Database {
        let raw = self
            .tables
            .iter()
            .map(|t| {
                (
                    t.name.clone(),
                    RawTable {
                        header: t.header.clone(),
                        rows: t.rows.clone(),
                    },
                )
            })
            .collect();
        Database::from_raw(&self.catalog(), raw, &LoadOptions::default()).expect("generated data loads")
    }

    pub fn table(&self, name: &str) -> &MicroTable {
        self.tables.iter().find(|t| t.name == name).unwrap()
    }
}

/// Up to six tables of up to 200 rows, with random FK topology (including
/// link tables), missing values, dangling references and rejected rows.
pub fn random_micro_db(seed: u64) -> MicroDb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=6);
    let mut tables: Vec<MicroTable> = (0..n)
        .map(|i| MicroTable {
            name: format!("T{i}"),
            attrs: Vec::new(),
            fks: Vec::new(),
            header: Vec::new(),
            rows: Vec::new(),
        })
        .collect();
    let link = |tables: &mut Vec<MicroTable>, from: usize, to: usize| {
        let col = format!("f{}", tables[from].fks.len());
        let to_name = tables[to].name.clone();
        tables[from].fks.push((col, to_name));
    };
    for i in 1..n {
        let p = rng.gen_range(0..i);
        if rng.gen_bool(0.5) {
            link(&mut tables, i, p);
        } else {
            link(&mut tables, p, i);
        }
    }
    for _ in 0..rng.gen_range(0..=2) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            link(&mut tables, a, b);
        }
    }
    let mut associative = vec![false; n];
    for i in 1..n {
        if rng.gen_bool(0.3) {
            associative[i] = true;
            while tables[i].fks.len() < 2 {
                let other = (rng.gen_range(1..n) + i) % n;
                link(&mut tables, i, other);
            }
        }
    }
    tables[0].attrs.push(("cls".into(), Kind::Cat));
    for (i, t) in tables.iter_mut().enumerate() {
        if associative[i] {
            continue;
        }
        for j in 0..rng.gen_range(0..=3) {
            let kind = if rng.gen_bool(0.5) { Kind::Num } else { Kind::Cat };
            t.attrs.push((format!("a{j}"), kind));
        }
    }

    let counts: Vec<usize> = (0..n)
        .map(|_| {
            let cap = *[5usize, 20, 60, 200].choose(&mut rng).unwrap();
            rng.gen_range(1..=cap)
        })
        .collect();
    let index_of = |name: &str| name[1..].parse::<usize>().unwrap();
    for (i, t) in tables.iter_mut().enumerate() {
        t.header.push("id".into());
        t.header.extend(t.fks.iter().map(|(c, _)| c.clone()));
        t.header.extend(t.attrs.iter().map(|(c, _)| c.clone()));
        let domains: Vec<usize> = t
            .attrs
            .iter()
            .map(|(name, _)| {
                if name == "cls" {
                    3
                } else if rng.gen_bool(0.1) {
                    45
                } else {
                    rng.gen_range(1..=6)
                }
            })
            .collect();
        for r in 0..counts[i] {
            let mut row = vec![format!("t{i}r{r}")];
            for (_, to) in &t.fks {
                let roll: f64 = rng.gen();
                row.push(if roll < 0.05 {
                    String::new()
                } else if roll < 0.15 {
                    format!("nowhere{r}")
                } else {
                    let to = index_of(to);
                    format!("t{to}r{}", rng.gen_range(0..counts[to]))
                });
            }
            for ((_, kind), &d) in t.attrs.iter().zip(&domains) {
                row.push(if rng.gen_bool(0.15) {
                    MISSING.to_string()
                } else {
                    match kind {
                        Kind::Num => rng.gen_range(-20..=20).to_string(),
                        Kind::Cat => format!("v{}", rng.gen_range(0..d)),
                    }
                });
            }
            t.rows.push(row);
        }
    }

    let mut schema_text = String::from("target = \"T0.cls\"\n");
    for t in &tables {
        let mut cols = vec!["\"id:pk\"".to_string()];
        cols.extend(t.fks.iter().map(|(c, to)| format!("\"{c}:fk({to}.id)\"")));
        cols.extend(t.attrs.iter().map(|(c, k)| {
            format!("\"{c}:{}\"", if *k == Kind::Num { "num" } else { "cat" })
        }));
        schema_text.push_str(&format!(
            "\n[[tables]]\nname = \"{0}\"\nfile = \"{0}.csv\"\ncolumns = [{1}]\n",
            t.name,
            cols.join(", ")
        ));
    }
    MicroDb { tables, schema_text }
}

/// One equi-join step, written out by hand.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct RefHop {
    pub from_table: String,
    pub from_col: String,
    pub to_table: String,
    pub to_col: String,
}

pub type RefPath = Vec<RefHop>;

pub fn render_path(origin: &str, path: &RefPath) -> String {
    let mut s = origin.to_string();
    for h in path {
        if h.from_col == h.to_col {
            s.push_str(&format!("->{}({})", h.to_table, h.to_col));
        } else {
            s.push_str(&format!("->{}({}={})", h.to_table, h.from_col, h.to_col));
        }
    }
    s
}

fn depths(db: &MicroDb) -> BTreeMap<String, usize> {
    let mut d = BTreeMap::from([("T0".to_string(), 0usize)]);
    let mut queue = VecDeque::from(["T0".to_string()]);
    while let Some(t) = queue.pop_front() {
        for other in &db.tables {
            for (_, to) in &other.fks {
                let next = if other.name == t {
                    to.clone()
                } else if *to == t {
                    other.name.clone()
                } else {
                    continue;
                };
                if !d.contains_key(&next) {
                    d.insert(next.clone(), d[&t] + 1);
                    queue.push_back(next);
                }
            }
        }
    }
    d
}

fn hops_from(db: &MicroDb, table: &str) -> Vec<RefHop> {
    let mut out = Vec::new();
    for t in &db.tables {
        for (col, to) in &t.fks {
            if t.name == table {
                out.push(RefHop {
                    from_table: table.into(),
                    from_col: col.clone(),
                    to_table: to.clone(),
                    to_col: "id".into(),
                });
            }
            if to == table && t.name != table {
                out.push(RefHop {
                    from_table: table.into(),
                    from_col: "id".into(),
                    to_table: t.name.clone(),
                    to_col: col.clone(),
                });
            }
        }
    }
    out
}

/// Paths that move one table deeper, continuing through link tables.
fn deeper(db: &MicroDb, depth: &BTreeMap<String, usize>, path: &RefPath) -> Vec<RefPath> {
    let at = path.last().map_or("T0", |h| h.to_table.as_str());
    let Some(&d) = depth.get(at) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for hop in hops_from(db, at) {
        if depth.get(&hop.to_table) != Some(&(d + 1)) {
            continue;
        }
        let mut next = path.clone();
        let link = db.table(&hop.to_table).is_associative();
        next.push(hop);
        if link {
            out.extend(deeper(db, depth, &next));
        } else {
            out.push(next);
        }
    }
    out
}

/// All paths of at most `max_len` hops, the empty path included.
pub fn reference_paths(db: &MicroDb, max_len: usize) -> Vec<RefPath> {
    let depth = depths(db);
    let mut all = vec![Vec::new()];
    let mut stack = vec![Vec::new()];
    while let Some(p) = stack.pop() {
        for q in deeper(db, &depth, &p) {
            if q.len() <= max_len {
                all.push(q.clone());
                stack.push(q);
            }
        }
    }
    all
}

/// Bag of rows of the terminal table for each kept target row, by nested
/// loops over the raw cells.
pub fn reference_bags<'a>(db: &'a MicroDb, path: &RefPath) -> Vec<Vec<&'a Vec<String>>> {
    let target = db.table("T0");
    target
        .kept()
        .into_iter()
        .map(|row| {
            let mut bag = vec![row];
            let mut table = target;
            for hop in path {
                let to = db.table(&hop.to_table);
                let from_col = table.col(&hop.from_col);
                let to_col = to.col(&hop.to_col);
                let mut next = Vec::new();
                for x in &bag {
                    for y in to.kept() {
                        if x[from_col] == y[to_col] {
                            next.push(y);
                        }
                    }
                }
                bag = next;
                table = to;
            }
            bag
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Undefined,
    Num(f64),
    Cat(String),
    Bool(bool),
}

impl From<Option<Value>> for Cell {
    fn from(v: Option<Value>) -> Self {
        match v {
            None => Cell::Undefined,
            Some(Value::Num(x)) => Cell::Num(x),
            Some(Value::Cat(s)) => Cell::Cat(s),
            Some(Value::Bool(b)) => Cell::Bool(b),
        }
    }
}

pub fn cells_match(a: &Cell, b: &Cell) -> bool {
    match (a, b) {
        (Cell::Num(x), Cell::Num(y)) => x == y || (x - y).abs() <= 1e-9 * x.abs().max(y.abs()),
        _ => a == b,
    }
}

/// Every feature column of the flat table over paths of at most `max_len`
/// hops, keyed by feature name.
pub fn reference_features(
    db: &MicroDb,
    max_len: usize,
    domsize_abs: usize,
    domsize_rel: f64,
) -> BTreeMap<String, Vec<Cell>> {
    let mut out = BTreeMap::new();
    for path in reference_paths(db, max_len) {
        let name = render_path("T0", &path);
        let terminal = db.table(path.last().map_or("T0", |h| h.to_table.as_str()));
        let determinate = path.iter().all(|h| h.to_col == "id");
        let bags = reference_bags(db, &path);
        if !determinate {
            out.insert(
                format!("{name}.:is_empty"),
                bags.iter().map(|b| Cell::Bool(b.is_empty())).collect(),
            );
        }
        for (attr, kind) in &terminal.attrs {
            if path.is_empty() && attr == "cls" {
                continue;
            }
            let c = terminal.col(attr);
            let values: Vec<Vec<Option<&str>>> = bags
                .iter()
                .map(|b| {
                    b.iter()
                        .map(|r| Some(r[c].as_str()).filter(|s| !is_missing(s)))
                        .collect()
                })
                .collect();
            if determinate {
                let cells = values
                    .iter()
                    .map(|v| match v.as_slice() {
                        [Some(s)] => match kind {
                            Kind::Num => Cell::Num(s.parse().unwrap()),
                            Kind::Cat => Cell::Cat(s.to_string()),
                        },
                        _ => Cell::Undefined,
                    })
                    .collect();
                out.insert(format!("{name}.{attr}:identity"), cells);
                continue;
            }
            match kind {
                Kind::Num => {
                    let aggs = ["avg", "std", "var", "max", "min", "sum", "count"];
                    let mut cols: Vec<Vec<Cell>> = vec![Vec::new(); aggs.len()];
                    for v in &values {
                        let xs: Vec<f64> = v.iter().flatten().map(|s| s.parse().unwrap()).collect();
                        let row = naive_numeric(&xs, v.len());
                        for (col, cell) in cols.iter_mut().zip(row) {
                            col.push(cell);
                        }
                    }
                    for (agg, col) in aggs.iter().zip(cols) {
                        out.insert(format!("{name}.{attr}:{agg}"), col);
                    }
                }
                Kind::Cat => {
                    let kept = terminal.kept();
                    let dictionary: BTreeSet<&str> = kept
                        .iter()
                        .map(|r| r[c].as_str())
                        .filter(|s| !is_missing(s))
                        .collect();
                    let k = dictionary.len();
                    let enabled = k < domsize_abs && (k as f64) < domsize_rel * kept.len() as f64;
                    out.insert(
                        format!("{name}.{attr}:count"),
                        values
                            .iter()
                            .map(|v| if v.is_empty() { Cell::Undefined } else { Cell::Num(v.len() as f64) })
                            .collect(),
                    );
                    out.insert(
                        format!("{name}.{attr}:distinct_count"),
                        values
                            .iter()
                            .map(|v| {
                                if v.is_empty() {
                                    Cell::Undefined
                                } else {
                                    let d: BTreeSet<&str> = v.iter().flatten().copied().collect();
                                    Cell::Num(d.len() as f64)
                                }
                            })
                            .collect(),
                    );
                    if enabled {
                        for value in &dictionary {
                            out.insert(
                                format!("{name}.{attr}:contains={value}"),
                                values
                                    .iter()
                                    .map(|v| {
                                        if v.is_empty() {
                                            Cell::Undefined
                                        } else {
                                            Cell::Bool(v.contains(&Some(*value)))
                                        }
                                    })
                                    .collect(),
                            );
                        }
                    }
                }
            }
        }
    }
    out
}

/// avg, std, var, max, min, sum, count of a bag with `size` elements, of
/// which `xs` are present.
fn naive_numeric(xs: &[f64], size: usize) -> Vec<Cell> {
    if size == 0 {
        return vec![Cell::Undefined; 7];
    }
    let count = Cell::Num(size as f64);
    if xs.is_empty() {
        let mut v = vec![Cell::Undefined; 6];
        v.push(count);
        return v;
    }
    let n = xs.len() as f64;
    let mut sum = 0.0;
    for x in xs {
        sum += x;
    }
    let mean = sum / n;
    let mut sq = 0.0;
    for x in xs {
        sq += (x - mean) * (x - mean);
    }
    let var = sq / n;
    let mut max = xs[0];
    let mut min = xs[0];
    for &x in xs {
        if x > max {
            max = x;
        }
        if x < min {
            min = x;
        }
    }
    vec![
        Cell::Num(mean),
        Cell::Num(var.sqrt()),
        Cell::Num(var),
        Cell::Num(max),
        Cell::Num(min),
        Cell::Num(sum),
        count,
    ]
}

/// A random table of at most 64 rows and 8 feature columns over the root
/// path of `template`'s schema. Numeric values are multiples of 0.25 so
/// midpoints are exact.
pub fn random_ldt(seed: u64, catalog: &SchemaCatalog) -> (LocalDataTable, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.gen_range(1..=64);
    let n_classes = rng.gen_range(2..=3);
    let labels: Vec<u32> = (0..rows).map(|_| rng.gen_range(0..n_classes as u32)).collect();
    let root = reltree::joinpath::JoinPath::root(catalog);
    let n_features = rng.gen_range(1..=8);
    let undefined_rate = *[0.0, 0.2, 0.6].choose(&mut rng).unwrap();
    let columns = (0..n_features)
        .map(|j| {
            let defined = |rng: &mut ChaCha8Rng| !rng.gen_bool(undefined_rate);
            let cells = match rng.gen_range(0..3) {
                0 => {
                    let spread = rng.gen_range(1..=40);
                    Cells::Numeric(
                        (0..rows)
                            .map(|_| defined(&mut rng).then(|| rng.gen_range(0..spread) as f64 * 0.25))
                            .collect(),
                    )
                }
                1 => {
                    let k = rng.gen_range(1..=5);
                    Cells::Categorical {
                        codes: (0..rows)
                            .map(|_| defined(&mut rng).then(|| rng.gen_range(0..k)))
                            .collect(),
                        dictionary: (0..k).map(|c| format!("v{c}")).collect::<Vec<_>>().into(),
                    }
                }
                _ => Cells::Boolean((0..rows).map(|_| defined(&mut rng).then(|| rng.gen_bool(0.5))).collect()),
            };
            FeatureColumn {
                descriptor: FeatureDescriptor::new(
                    root.clone(),
                    Some(&format!("x{j}")),
                    reltree::features::Aggregator::Identity,
                ),
                cells,
            }
        })
        .collect();
    let ids = (0..rows as u32).collect();
    (LocalDataTable::from_columns(ids, labels, columns).unwrap(), n_classes)
}

fn reference_entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let mut h = 0.0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n as f64;
            h -= p * p.log2();
        }
    }
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub column: usize,
    pub kind: TestKind,
    pub route: Route,
    pub gain: f64,
}

/// Gain of routing every row by `goes_left` (an Option for undefined).
fn reference_gain(labels: &[u32], n_classes: usize, outcome: &[Option<bool>], route: Route) -> Option<f64> {
    let mut left = vec![0u64; n_classes];
    let mut right = vec![0u64; n_classes];
    let mut all = vec![0u64; n_classes];
    for (o, &l) in outcome.iter().zip(labels) {
        let pass = o.unwrap_or(route == Route::Pass);
        if pass {
            left[l as usize] += 1;
        } else {
            right[l as usize] += 1;
        }
        all[l as usize] += 1;
    }
    let nl: u64 = left.iter().sum();
    let nr: u64 = right.iter().sum();
    if nl == 0 || nr == 0 {
        return None;
    }
    let n = (nl + nr) as f64;
    Some(
        reference_entropy(&all)
            - nl as f64 / n * reference_entropy(&left)
            - nr as f64 / n * reference_entropy(&right),
    )
}

/// Every test (all thresholds, values, and both routings) with its gain.
pub fn all_candidates(ldt: &LocalDataTable, n_classes: usize) -> Vec<Candidate> {
    let labels = ldt.labels();
    let mut out = Vec::new();
    for (j, col) in ldt.columns().iter().enumerate() {
        let mut tests: Vec<(TestKind, Vec<Option<bool>>)> = Vec::new();
        match &col.cells {
            Cells::Numeric(v) => {
                let mut distinct: Vec<f64> = v.iter().flatten().copied().collect();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                for w in distinct.windows(2) {
                    let t = (w[0] + w[1]) / 2.0;
                    tests.push((TestKind::NumericLe { threshold: t }, v.iter().map(|x| x.map(|x| x <= t)).collect()));
                }
            }
            Cells::Categorical { codes, dictionary } => {
                for (c, value) in dictionary.iter().enumerate() {
                    if codes.contains(&Some(c as u32)) {
                        tests.push((
                            TestKind::CategoricalEq { value: value.clone() },
                            codes.iter().map(|x| x.map(|x| x == c as u32)).collect(),
                        ));
                    }
                }
            }
            Cells::Boolean(v) => tests.push((TestKind::BooleanTrue, v.clone())),
        }
        for (kind, outcome) in tests {
            for route in [Route::Pass, Route::Fail] {
                if let Some(gain) = reference_gain(labels, n_classes, &outcome, route) {
                    out.push(Candidate {
                        column: j,
                        kind: kind.clone(),
                        route,
                        gain,
                    });
                }
            }
        }
    }
    out
}
