//! Stratified cross-validation with join and timing instrumentation, plus
//! synthetic data for planted-concept experiments.

pub mod synth;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eager::{propositionalize, EagerOptions};
use crate::error::{Error, Result};
use crate::joinpath::JoinStats;
use crate::ldt::{LocalDataTable, Strategy};
use crate::storage::{Database, RowId};
use crate::tree::{grow_tree_from_ldt, grow_tree_on, majority, LearnParams, Predictor, TreeNode};

pub use synth::{generate_school_db, PlantedRule, SchoolSpec, SyntheticDb};

/// Splits positions `0..labels.len()` into `k` folds. Each class is shuffled
/// and dealt round-robin, the dealing position carrying over between
/// classes, so per-class and total fold sizes differ by at most one.
pub fn stratified_folds(labels: &[u32], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Folds(format!("k must be at least 2, got {k}")));
    }
    if k > labels.len() {
        return Err(Error::Folds(format!(
            "k = {k} exceeds the {} labeled instances",
            labels.len()
        )));
    }
    let n_classes = labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for mut members in by_class {
        members.shuffle(&mut rng);
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CvMode {
    LazyRestricted,
    LazyUnrestricted,
    /// Flat table up to a path length, then a tree without extension.
    Eager,
}

impl CvMode {
    pub fn strategy(self) -> Option<Strategy> {
        match self {
            CvMode::LazyRestricted => Some(Strategy::Restricted),
            CvMode::LazyUnrestricted => Some(Strategy::Unrestricted),
            CvMode::Eager => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvOptions {
    pub mode: CvMode,
    pub k: usize,
    pub seed: u64,
    /// `strategy` is overridden by the mode.
    pub params: LearnParams,
    /// Path bound for eager mode.
    pub max_path_len: usize,
    pub parallel_folds: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            mode: CvMode::LazyRestricted,
            k: 10,
            seed: 0,
            params: LearnParams::default(),
            max_path_len: 3,
            parallel_folds: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub majority_accuracy: f64,
    /// Training time; for eager mode this includes building the flat table.
    pub wall_time_secs: f64,
    /// Hash probes made while training.
    pub join_lookups: u64,
    /// Probes made for paths of two or more hops.
    pub deep_join_lookups: u64,
    pub materialized_paths: Vec<String>,
    pub materialized_features: usize,
    pub extensions: usize,
    pub tree_nodes: usize,
    pub tree_depth: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub mode: CvMode,
    pub k: usize,
    pub seed: u64,
    pub params: LearnParams,
    pub max_path_len: Option<usize>,
    pub instances: usize,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub majority_accuracy: f64,
    pub total_wall_time_secs: f64,
    pub total_join_lookups: u64,
}

impl CvReport {
    pub fn summary(&self) -> String {
        format!(
            "{}: {}-fold accuracy {:.4} (majority {:.4}), {} join lookups, {:.3}s training",
            serde_json::to_value(self.mode)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            self.k,
            self.mean_accuracy,
            self.majority_accuracy,
            self.total_join_lookups,
            self.total_wall_time_secs
        )
    }

    /// Copy with every timing field zeroed, for comparing runs.
    pub fn without_timings(&self) -> CvReport {
        let mut out = self.clone();
        out.total_wall_time_secs = 0.0;
        for f in &mut out.folds {
            f.wall_time_secs = 0.0;
        }
        out
    }
}

/// k-fold cross-validation over the labeled target rows.
pub fn cross_validate(db: &Database, options: &CvOptions) -> Result<CvReport> {
    options.params.validate()?;
    let instances = db.labeled_instances();
    let (all_labels, _) = db.labels();
    let labels: Vec<u32> = instances
        .iter()
        .map(|&i| all_labels[i as usize].expect("labeled"))
        .collect();
    let folds = stratified_folds(&labels, options.k, options.seed)?;
    let run = |fold: usize| run_fold(db, options, &instances, &labels, &folds, fold);
    let reports: Vec<FoldReport> = if options.parallel_folds {
        (0..folds.len()).into_par_iter().map(run).collect::<Result<_>>()?
    } else {
        (0..folds.len()).map(run).collect::<Result<_>>()?
    };
    let k = reports.len() as f64;
    Ok(CvReport {
        mode: options.mode,
        k: options.k,
        seed: options.seed,
        params: effective_params(options),
        max_path_len: (options.mode == CvMode::Eager).then_some(options.max_path_len),
        instances: instances.len(),
        mean_accuracy: reports.iter().map(|r| r.accuracy).sum::<f64>() / k,
        majority_accuracy: reports.iter().map(|r| r.majority_accuracy).sum::<f64>() / k,
        total_wall_time_secs: reports.iter().map(|r| r.wall_time_secs).sum(),
        total_join_lookups: reports.iter().map(|r| r.join_lookups).sum(),
        folds: reports,
    })
}

fn effective_params(options: &CvOptions) -> LearnParams {
    let mut params = options.params.clone();
    if let Some(s) = options.mode.strategy() {
        params.strategy = s;
    }
    params
}

fn run_fold(
    db: &Database,
    options: &CvOptions,
    instances: &[RowId],
    labels: &[u32],
    folds: &[Vec<usize>],
    fold: usize,
) -> Result<FoldReport> {
    let params = effective_params(options);
    let n_classes = db.labels().1.len();
    let test_pos = &folds[fold];
    let mut in_test = vec![false; instances.len()];
    for &p in test_pos {
        in_test[p] = true;
    }
    let train_pos: Vec<usize> = (0..instances.len()).filter(|&p| !in_test[p]).collect();
    let train_ids: Vec<RowId> = train_pos.iter().map(|&p| instances[p]).collect();
    let test_ids: Vec<RowId> = test_pos.iter().map(|&p| instances[p]).collect();
    let train_labels: Vec<u32> = train_pos.iter().map(|&p| labels[p]).collect();
    let test_labels: Vec<u32> = test_pos.iter().map(|&p| labels[p]).collect();

    let stats = JoinStats::new();
    let started = Instant::now();
    let (model, wall, report, predicted, paths) = match options.mode.strategy() {
        Some(_) => {
            let (model, report) = grow_tree_on(db, &train_ids, &params, &stats)?;
            let wall = started.elapsed();
            let predictor = Predictor::new(&model, db)?;
            let predicted = test_ids
                .iter()
                .map(|&id| predictor.predict(id).map(|p| p.class))
                .collect::<Result<Vec<_>>>()?;
            let paths = report.materialized_paths.iter().map(|p| p.to_string()).collect();
            (model, wall, report, predicted, paths)
        }
        None => {
            let eager = EagerOptions {
                max_path_len: options.max_path_len,
                memory_budget: None,
            };
            let fp = params.feature_params();
            let flat = propositionalize(db, &train_ids, &eager, &fp, &stats)?;
            let paths: Vec<String> = flat.paths.iter().map(|p| p.to_string()).collect();
            let ldt = LocalDataTable::from_columns(train_ids.clone(), train_labels.clone(), flat.columns)?;
            let (model, report) = grow_tree_from_ldt(db, ldt, &params, &stats)?;
            let wall = started.elapsed();
            let test_flat = propositionalize(db, &test_ids, &eager, &fp, &JoinStats::new())?;
            let predicted = (0..test_ids.len())
                .map(|pos| {
                    model.route(|d| Ok(test_flat.value(pos, d))).map(|leaf| match leaf {
                        TreeNode::Leaf { predicted, .. } => *predicted,
                        TreeNode::Inner { .. } => unreachable!("route ends at a leaf"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            (model, wall, report, predicted, paths)
        }
    };

    let correct = predicted.iter().zip(&test_labels).filter(|(p, l)| p == l).count();
    let baseline = majority(&crate::tree::class_counts(&train_labels, n_classes));
    let baseline_correct = test_labels.iter().filter(|&&l| l == baseline).count();
    let n_test = test_labels.len().max(1) as f64;
    Ok(FoldReport {
        fold,
        train_size: train_ids.len(),
        test_size: test_ids.len(),
        accuracy: correct as f64 / n_test,
        majority_accuracy: baseline_correct as f64 / n_test,
        wall_time_secs: wall.as_secs_f64(),
        join_lookups: stats.total(),
        deep_join_lookups: stats.at_least(2),
        materialized_paths: paths,
        materialized_features: report.materialized_features.len(),
        extensions: report.extensions,
        tree_nodes: model.root.node_count(),
        tree_depth: model.root.depth(),
    })
}
