use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::forest::{ForestParams, RandomForest};
use super::gbdt::{Gbdt, GbdtParams};
use super::knn::Knn;
use crate::error::{Error, Result};
use crate::persist::{self, Provenance};

/// Meta-learner family and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetaLearnerSpec {
    Knn {
        k: usize,
    },
    RandomForest {
        n_trees: usize,
        max_depth: Option<usize>,
        features_per_split: Option<usize>,
    },
    Gbdt {
        depth: usize,
        iterations: usize,
        learning_rate: f64,
    },
    /// Returns one base learner's probability block unchanged.
    PassThrough {
        block: usize,
    },
}

impl MetaLearnerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            MetaLearnerSpec::Knn { .. } => "knn",
            MetaLearnerSpec::RandomForest { .. } => "random_forest",
            MetaLearnerSpec::Gbdt { .. } => "gbdt",
            MetaLearnerSpec::PassThrough { .. } => "pass_through",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MetaLearnerSpec::Knn { k } if *k == 0 => Err(Error::invalid("knn k must be at least 1")),
            MetaLearnerSpec::RandomForest { n_trees: 0, .. } => Err(Error::invalid("random forest needs at least one tree")),
            MetaLearnerSpec::RandomForest {
                features_per_split: Some(0),
                ..
            } => Err(Error::invalid("features_per_split must be at least 1")),
            MetaLearnerSpec::Gbdt { learning_rate, .. } if !(*learning_rate > 0.0 && learning_rate.is_finite()) => {
                Err(Error::invalid(format!("gbdt learning_rate must be positive, got {learning_rate}")))
            }
            _ => Ok(()),
        }
    }

    /// `name=value` pairs separated by `;`, as written to search CSVs.
    pub fn params_string(&self) -> String {
        let opt = |v: &Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        match self {
            MetaLearnerSpec::Knn { k } => format!("k={k}"),
            MetaLearnerSpec::RandomForest {
                n_trees,
                max_depth,
                features_per_split,
            } => format!(
                "n_trees={n_trees};max_depth={};features_per_split={}",
                opt(max_depth),
                opt(features_per_split)
            ),
            MetaLearnerSpec::Gbdt {
                depth,
                iterations,
                learning_rate,
            } => format!("depth={depth};iterations={iterations};learning_rate={learning_rate}"),
            MetaLearnerSpec::PassThrough { block } => format!("block={block}"),
        }
    }
}

impl fmt::Display for MetaLearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.kind(), self.params_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
enum Fitted {
    Knn(Knn),
    RandomForest(RandomForest),
    Gbdt(Gbdt),
    PassThrough { block: usize },
}

/// A fitted meta-learner over stacked probability features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaModel {
    spec: MetaLearnerSpec,
    n_classes: usize,
    width: usize,
    fitted: Fitted,
}

const KIND: &str = "meta";

impl MetaModel {
    pub fn fit(spec: &MetaLearnerSpec, rows: &[Vec<f64>], labels: &[usize], n_classes: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let width = rows.first().map_or(0, Vec::len);
        let fitted = match *spec {
            MetaLearnerSpec::Knn { k } => Fitted::Knn(Knn::fit(rows, labels, n_classes, k)?),
            MetaLearnerSpec::RandomForest {
                n_trees,
                max_depth,
                features_per_split,
            } => {
                let p = ForestParams {
                    n_trees,
                    max_depth,
                    features_per_split,
                    bootstrap: true,
                };
                Fitted::RandomForest(RandomForest::fit(rows, labels, n_classes, &p, seed)?)
            }
            MetaLearnerSpec::Gbdt {
                depth,
                iterations,
                learning_rate,
            } => {
                let p = GbdtParams {
                    depth,
                    iterations,
                    learning_rate,
                };
                Fitted::Gbdt(Gbdt::fit(rows, labels, n_classes, &p)?)
            }
            MetaLearnerSpec::PassThrough { block } => {
                if (block + 1) * n_classes > width {
                    return Err(Error::invalid(format!("block {block} outside a {width}-column feature matrix")));
                }
                Fitted::PassThrough { block }
            }
        };
        Ok(MetaModel {
            spec: spec.clone(),
            n_classes,
            width,
            fitted,
        })
    }

    pub fn spec(&self) -> &MetaLearnerSpec {
        &self.spec
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if let Some(r) = rows.iter().find(|r| r.len() != self.width) {
            return Err(Error::shape("meta/input", format!("{} columns", self.width), format!("{} columns", r.len())));
        }
        Ok(match &self.fitted {
            Fitted::Knn(m) => m.predict_proba(rows),
            Fitted::RandomForest(m) => m.predict_proba(rows),
            Fitted::Gbdt(m) => m.predict_proba(rows)?,
            Fitted::PassThrough { block } => {
                let c = self.n_classes;
                rows.iter().map(|r| r[block * c..(block + 1) * c].to_vec()).collect()
            }
        })
    }

    pub fn to_text(&self, provenance: Option<&Provenance>) -> Result<String> {
        persist::to_string(KIND, provenance, self)
    }

    pub fn from_text(text: &str) -> Result<(Self, Option<Provenance>)> {
        persist::from_str(text, KIND)
    }

    pub fn save(&self, path: &Path, provenance: Option<&Provenance>) -> Result<()> {
        persist::save(path, KIND, provenance, self)
    }

    pub fn load(path: &Path) -> Result<(Self, Option<Provenance>)> {
        persist::load(path, KIND)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn data() -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut r = rng::seeded(11);
        let y: Vec<usize> = (0..40).map(|i| i % 3).collect();
        let x = y
            .iter()
            .map(|&c| {
                let mut row = vec![0.0; 6];
                for b in 0..2 {
                    let mut p = [r.gen::<f64>() * 0.2, r.gen::<f64>() * 0.2, r.gen::<f64>() * 0.2];
                    p[c] += 0.8;
                    let s: f64 = p.iter().sum();
                    for j in 0..3 {
                        row[b * 3 + j] = p[j] / s;
                    }
                }
                row
            })
            .collect();
        (x, y)
    }

    fn specs() -> Vec<MetaLearnerSpec> {
        vec![
            MetaLearnerSpec::Knn { k: 3 },
            MetaLearnerSpec::RandomForest {
                n_trees: 7,
                max_depth: Some(4),
                features_per_split: None,
            },
            MetaLearnerSpec::Gbdt {
                depth: 3,
                iterations: 10,
                learning_rate: 0.1,
            },
            MetaLearnerSpec::PassThrough { block: 1 },
        ]
    }

    #[test]
    fn outputs_are_distributions_and_round_trip() {
        let (x, y) = data();
        for spec in specs() {
            let m = MetaModel::fit(&spec, &x, &y, 3, 5).unwrap();
            for row in m.predict_proba(&x).unwrap() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{spec}");
                assert!(row.iter().all(|&v| v >= 0.0));
            }
            let prov = Provenance {
                config_hash: "ab".into(),
                seed: 5,
            };
            let text = m.to_text(Some(&prov)).unwrap();
            let (back, p) = MetaModel::from_text(&text).unwrap();
            assert_eq!(back, m);
            assert_eq!(p, Some(prov.clone()));
            assert_eq!(back.to_text(Some(&prov)).unwrap(), text);
        }
    }

    #[test]
    fn spec_json_is_tagged_by_kind() {
        let s = serde_json::to_string(&MetaLearnerSpec::Knn { k: 6 }).unwrap();
        assert_eq!(s, r#"{"kind":"knn","k":6}"#);
        let g: MetaLearnerSpec = serde_json::from_str(r#"{"kind":"gbdt","depth":10,"iterations":100,"learning_rate":0.1}"#).unwrap();
        assert_eq!(g.params_string(), "depth=10;iterations=100;learning_rate=0.1");
    }

    #[test]
    fn invalid_specs_rejected() {
        let (x, y) = data();
        for bad in [
            MetaLearnerSpec::Knn { k: 0 },
            MetaLearnerSpec::Gbdt {
                depth: 1,
                iterations: 1,
                learning_rate: 0.0,
            },
            MetaLearnerSpec::PassThrough { block: 2 },
        ] {
            assert!(MetaModel::fit(&bad, &x, &y, 3, 0).is_err(), "{bad}");
        }
        let m = MetaModel::fit(&MetaLearnerSpec::Knn { k: 1 }, &x, &y, 3, 0).unwrap();
        assert!(m.predict_proba(&[vec![0.0; 5]]).is_err());
    }
}
