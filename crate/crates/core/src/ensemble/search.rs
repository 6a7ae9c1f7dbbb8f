use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::meta::{MetaLearnerSpec, MetaModel};
use crate::error::{Error, Result};
use crate::metrics::{self, argmax};
use crate::rng;

/// Candidate values for one meta-learner family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpace {
    Knn {
        k: Vec<usize>,
    },
    RandomForest {
        n_trees: Vec<usize>,
        max_depth: Vec<Option<usize>>,
        features_per_split: Vec<Option<usize>>,
    },
    Gbdt {
        depth: Vec<usize>,
        iterations: Vec<usize>,
        learning_rate: Vec<f64>,
    },
}

impl GridSpace {
    pub fn kind(&self) -> &'static str {
        match self {
            GridSpace::Knn { .. } => "knn",
            GridSpace::RandomForest { .. } => "random_forest",
            GridSpace::Gbdt { .. } => "gbdt",
        }
    }

    /// Cartesian product in declared order, last list varying fastest.
    pub fn cells(&self) -> Vec<MetaLearnerSpec> {
        let mut out = Vec::new();
        match self {
            GridSpace::Knn { k } => out.extend(k.iter().map(|&k| MetaLearnerSpec::Knn { k })),
            GridSpace::RandomForest {
                n_trees,
                max_depth,
                features_per_split,
            } => {
                for &n_trees in n_trees {
                    for &max_depth in max_depth {
                        for &features_per_split in features_per_split {
                            out.push(MetaLearnerSpec::RandomForest {
                                n_trees,
                                max_depth,
                                features_per_split,
                            });
                        }
                    }
                }
            }
            GridSpace::Gbdt {
                depth,
                iterations,
                learning_rate,
            } => {
                for &depth in depth {
                    for &iterations in iterations {
                        for &learning_rate in learning_rate {
                            out.push(MetaLearnerSpec::Gbdt {
                                depth,
                                iterations,
                                learning_rate,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SearchMode {
    #[default]
    Exhaustive,
    /// `n_draws` distinct cells drawn uniformly; all cells if the grid is smaller.
    Random { n_draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    Accuracy,
    #[default]
    BalancedAccuracy,
}

impl SelectionMetric {
    pub fn score(self, pred: &[usize], truth: &[usize], n_classes: usize) -> Result<f64> {
        match self {
            SelectionMetric::Accuracy => metrics::accuracy(pred, truth),
            SelectionMetric::BalancedAccuracy => metrics::balanced_accuracy(pred, truth, n_classes),
        }
    }
}

impl fmt::Display for SelectionMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectionMetric::Accuracy => "accuracy",
            SelectionMetric::BalancedAccuracy => "balanced_accuracy",
        })
    }
}

impl FromStr for SelectionMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(SelectionMetric::Accuracy),
            "balanced_accuracy" => Ok(SelectionMetric::BalancedAccuracy),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub space: GridSpace,
    pub folds: usize,
    #[serde(default)]
    pub mode: SearchMode,
    #[serde(default)]
    pub metric: SelectionMetric,
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        let cells = self.space.cells();
        if cells.is_empty() {
            return Err(Error::invalid(format!("empty candidate list in the {} grid", self.space.kind())));
        }
        if self.folds < 2 {
            return Err(Error::invalid(format!("cross-validation needs at least 2 folds, got {}", self.folds)));
        }
        if let SearchMode::Random { n_draws: 0, .. } = self.mode {
            return Err(Error::invalid("random search needs at least one draw"));
        }
        cells.iter().try_for_each(MetaLearnerSpec::validate)
    }

    /// Grid indices visited by the search, ascending.
    pub fn visited(&self) -> Vec<usize> {
        let n = self.space.cells().len();
        match self.mode {
            SearchMode::Exhaustive => (0..n).collect(),
            SearchMode::Random { n_draws, seed } => {
                let mut idx = index::sample(&mut rng::seeded(seed), n, n_draws.min(n)).into_vec();
                idx.sort_unstable();
                idx
            }
        }
    }
}

/// Fold index of every row; each class is shuffled then dealt round-robin.
pub fn stratified_folds(labels: &[usize], n_classes: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::invalid(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    let mut assign = vec![0; labels.len()];
    let mut next = 0;
    for class in 0..n_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < folds {
            return Err(Error::data(format!(
                "{folds}-fold cross-validation needs at least {folds} samples per class; class {class} has {}",
                members.len()
            )));
        }
        members.shuffle(&mut rng::stream(seed, class as u64));
        for i in members {
            assign[i] = next % folds;
            next += 1;
        }
    }
    Ok(assign)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    /// Position in the full grid.
    pub cell: usize,
    pub spec: MetaLearnerSpec,
    pub fold_scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub metric: SelectionMetric,
    pub cells: Vec<CellScore>,
    /// Index into `cells`.
    pub best: usize,
}

impl SearchResult {
    pub fn best_spec(&self) -> &MetaLearnerSpec {
        &self.cells[self.best].spec
    }

    pub fn best_score(&self) -> f64 {
        self.cells[self.best].mean
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let folds = self.cells.first().map_or(0, |c| c.fold_scores.len());
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let mut header = vec!["cell".to_string(), "kind".into(), "params".into()];
        header.extend((0..folds).map(|f| format!("fold_{f}")));
        header.push("mean".into());
        w.write_record(&header)?;
        for c in &self.cells {
            let mut rec = vec![c.cell.to_string(), c.spec.kind().to_string(), c.spec.params_string()];
            rec.extend(c.fold_scores.iter().map(f64::to_string));
            rec.push(c.mean.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Stratified k-fold search over `grid`; the highest mean wins, ties going
/// to the earlier cell.
pub fn cross_val_search(grid: &SearchGrid, rows: &[Vec<f64>], labels: &[usize], n_classes: usize, seed: u64) -> Result<SearchResult> {
    grid.validate()?;
    if rows.len() != labels.len() {
        return Err(Error::invalid(format!("{} rows for {} labels", rows.len(), labels.len())));
    }
    let assign = stratified_folds(labels, n_classes, grid.folds, seed)?;
    let all = grid.space.cells();
    let mut cells = Vec::new();
    for cell in grid.visited() {
        let spec = &all[cell];
        let mut fold_scores = Vec::with_capacity(grid.folds);
        for f in 0..grid.folds {
            let (mut tr_x, mut tr_y, mut va_x, mut va_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..rows.len() {
                if assign[i] == f {
                    va_x.push(rows[i].clone());
                    va_y.push(labels[i]);
                } else {
                    tr_x.push(rows[i].clone());
                    tr_y.push(labels[i]);
                }
            }
            let model = MetaModel::fit(spec, &tr_x, &tr_y, n_classes, rng::derive_seed(seed, f as u64))
                .map_err(|e| Error::invalid(format!("cell {cell} ({spec}), fold {f}: {e}")))?;
            let pred: Vec<usize> = model.predict_proba(&va_x)?.iter().map(|p| argmax(p)).collect();
            fold_scores.push(grid.metric.score(&pred, &va_y, n_classes)?);
        }
        let mean = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
        cells.push(CellScore {
            cell,
            spec: spec.clone(),
            fold_scores,
            mean,
        });
    }
    let mut best = 0;
    for (i, c) in cells.iter().enumerate() {
        if c.mean > cells[best].mean {
            best = i;
        }
    }
    Ok(SearchResult {
        metric: grid.metric,
        cells,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn clusters(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng::seeded(seed);
        let y: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let x = y
            .iter()
            .map(|&c| vec![c as f64 + 0.6 * r.gen::<f64>(), 0.6 * r.gen::<f64>()])
            .collect();
        (x, y)
    }

    fn knn_grid(k: Vec<usize>) -> SearchGrid {
        SearchGrid {
            space: GridSpace::Knn { k },
            folds: 3,
            mode: SearchMode::Exhaustive,
            metric: SelectionMetric::BalancedAccuracy,
        }
    }

    #[test]
    fn folds_are_stratified_and_balanced() {
        let y: Vec<usize> = (0..50).map(|i| usize::from(i % 5 == 0)).collect();
        let a = stratified_folds(&y, 2, 5, 3).unwrap();
        for f in 0..5 {
            let members: Vec<usize> = (0..50).filter(|&i| a[i] == f).collect();
            assert_eq!(members.len(), 10);
            assert_eq!(members.iter().filter(|&&i| y[i] == 1).count(), 2);
        }
        assert!(stratified_folds(&y, 2, 11, 3).is_err());
    }

    #[test]
    fn single_cell_grid_returns_that_cell() {
        let (x, y) = clusters(1);
        let r = cross_val_search(&knn_grid(vec![5]), &x, &y, 3, 0).unwrap();
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.best_spec(), &MetaLearnerSpec::Knn { k: 5 });
    }

    #[test]
    fn duplicate_of_best_loses_to_earlier_occurrence() {
        let (x, y) = clusters(2);
        let base = cross_val_search(&knn_grid(vec![1, 6, 15]), &x, &y, 3, 4).unwrap();
        let best_k = match base.best_spec() {
            MetaLearnerSpec::Knn { k } => *k,
            _ => unreachable!(),
        };
        let dup = cross_val_search(&knn_grid(vec![1, 6, 15, best_k]), &x, &y, 3, 4).unwrap();
        assert_eq!(dup.best, base.best);
        assert_eq!(dup.cells[3].mean, dup.cells[dup.best].mean);
    }

    #[test]
    fn search_is_reproducible() {
        let (x, y) = clusters(3);
        let a = cross_val_search(&knn_grid(vec![1, 6]), &x, &y, 3, 8).unwrap();
        let b = cross_val_search(&knn_grid(vec![1, 6]), &x, &y, 3, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_mode_visits_requested_draws() {
        let g = SearchGrid {
            space: GridSpace::Gbdt {
                depth: vec![1, 2, 3],
                iterations: vec![1, 2],
                learning_rate: vec![0.1, 0.5],
            },
            folds: 2,
            mode: SearchMode::Random { n_draws: 4, seed: 7 },
            metric: SelectionMetric::Accuracy,
        };
        let v = g.visited();
        assert_eq!(v.len(), 4);
        assert!(v.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(v, g.visited());
        let (x, y) = clusters(4);
        let r = cross_val_search(&g, &x, &y, 3, 0).unwrap();
        assert_eq!(r.cells.iter().map(|c| c.cell).collect::<Vec<_>>(), v);
    }

    #[test]
    fn grid_order_is_cartesian() {
        let cells = GridSpace::Gbdt {
            depth: vec![10, 15],
            iterations: vec![100],
            learning_rate: vec![0.1, 0.00005],
        }
        .cells();
        let params: Vec<String> = cells.iter().map(MetaLearnerSpec::params_string).collect();
        assert_eq!(
            params,
            [
                "depth=10;iterations=100;learning_rate=0.1",
                "depth=10;iterations=100;learning_rate=0.00005",
                "depth=15;iterations=100;learning_rate=0.1",
                "depth=15;iterations=100;learning_rate=0.00005",
            ]
        );
    }

    #[test]
    fn invalid_grids_rejected() {
        let (x, y) = clusters(5);
        assert!(cross_val_search(&knn_grid(vec![]), &x, &y, 3, 0).is_err());
        let mut g = knn_grid(vec![1]);
        g.folds = 1;
        assert!(cross_val_search(&g, &x, &y, 3, 0).is_err());
        g.folds = 21;
        assert!(cross_val_search(&g, &x, &y, 3, 0).is_err());
    }
}
