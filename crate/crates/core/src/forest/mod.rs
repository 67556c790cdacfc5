//! Weighted random-forest regression.
//!
//! Each tree is grown on a bootstrap of the rows drawn with probability
//! proportional to row weight; inside a tree the draw multiplicities are the
//! sample weights for split gains and leaf means. With bootstrapping turned
//! off the row weights are used directly. Rows of weight zero never reach a
//! tree.
//!
//! The K per-tree outputs double as K demand scenarios for sample average
//! approximation (see [`DemandModel::predict_samples`]).

mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use tree::{Node, Tree};

use crate::error::{Error, Result};
use crate::model::DemandModel;
use crate::par::{self, Execution};
use crate::table::FeatureTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    #[default]
    SquaredError,
    AbsoluteError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Maximum number of splits on any root-to-leaf path.
    pub max_depth: usize,
    /// Minimum total sample weight on each side of a split.
    pub min_leaf_weight: f64,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub criterion: SplitCriterion,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 12,
            min_leaf_weight: 5.0,
            features_per_split: None,
            criterion: SplitCriterion::SquaredError,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Config("n_trees must be at least 1".into()));
        }
        if !(self.min_leaf_weight.is_finite() && self.min_leaf_weight >= 0.0) {
            return Err(Error::Config(
                "min_leaf_weight must be finite and >= 0".into(),
            ));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::Config(
                "features_per_split must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn features_for(&self, dim: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize)
            .clamp(1, dim.max(1))
    }
}

pub const FORMAT_TAG: &str = "decaware-forest";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    format: String,
    version: u32,
    feature_dim: usize,
    seed: u64,
    params: ForestParams,
    trees: Vec<Tree>,
}

/// Trains with the default execution strategy.
pub fn train_forest(table: &FeatureTable, params: &ForestParams, seed: u64) -> Result<Forest> {
    train_forest_with(table, params, seed, Execution::default())
}

/// Trains `params.n_trees` trees. Tree `t` draws from its own ChaCha stream
/// `(seed, t)`, so the result does not depend on `exec`.
pub fn train_forest_with(
    table: &FeatureTable,
    params: &ForestParams,
    seed: u64,
    exec: Execution,
) -> Result<Forest> {
    params.validate()?;
    let dim = table.dim();
    if dim == 0 {
        return Err(Error::Config("feature dimension must be at least 1".into()));
    }
    let rows: Vec<_> = table.rows().iter().filter(|r| r.weight > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::DegenerateWeights);
    }
    if let Some(bad) = rows.iter().find(|r| r.features.len() != dim) {
        return Err(Error::shape(dim, bad.features.len(), "training row"));
    }
    let x: Vec<&[f64]> = rows.iter().map(|r| r.features.as_slice()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.target).collect();
    let w: Vec<f64> = rows.iter().map(|r| r.weight).collect();
    let cumulative: Vec<f64> = w
        .iter()
        .scan(0.0, |acc, &wi| {
            *acc += wi;
            Some(*acc)
        })
        .collect();
    let features_per_split = params.features_for(dim);

    let trees = par::map_range(exec, params.n_trees, |t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let samples = if params.bootstrap {
            bootstrap(&cumulative, &mut rng)
        } else {
            // mean-one weights so min_leaf_weight counts rows
            let scale = w.len() as f64 / cumulative[w.len() - 1];
            w.iter()
                .enumerate()
                .map(|(row, &weight)| tree::Sample {
                    row,
                    weight: weight * scale,
                })
                .collect()
        };
        tree::Grower {
            x: &x,
            y: &y,
            params,
            dim,
            features_per_split,
            rng: &mut rng,
            nodes: Vec::new(),
        }
        .grow(samples)
    });

    Ok(Forest {
        format: FORMAT_TAG.into(),
        version: FORMAT_VERSION,
        feature_dim: dim,
        seed,
        params: params.clone(),
        trees,
    })
}

/// Draws `n` rows with probability proportional to weight and returns each
/// drawn row once, weighted by its multiplicity.
fn bootstrap(cumulative: &[f64], rng: &mut ChaCha8Rng) -> Vec<tree::Sample> {
    let n = cumulative.len();
    let total = cumulative[n - 1];
    let mut counts = vec![0u32; n];
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let i = cumulative.partition_point(|&c| c <= u).min(n - 1);
        counts[i] += 1;
    }
    counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(row, &c)| tree::Sample {
            row,
            weight: c as f64,
        })
        .collect()
}

impl Forest {
    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.feature_dim {
            return Err(Error::shape(self.feature_dim, x.len(), "forest input"));
        }
        Ok(())
    }

    /// Raw per-tree outputs, unclamped, in tree order.
    pub fn tree_outputs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let forest: Forest = serde_json::from_str(s)?;
        if forest.format != FORMAT_TAG || forest.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT_TAG} v{FORMAT_VERSION}, found {} v{}",
                forest.format, forest.version
            )));
        }
        if forest.trees.is_empty() {
            return Err(Error::Format("forest has no trees".into()));
        }
        for tree in &forest.trees {
            for node in tree.nodes() {
                if let Node::Split { feature, .. } = node {
                    if *feature >= forest.feature_dim {
                        return Err(Error::Format(format!(
                            "split on feature {feature} but dimension is {}",
                            forest.feature_dim
                        )));
                    }
                }
            }
        }
        Ok(forest)
    }
}

impl DemandModel for Forest {
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Mean of the per-tree outputs.
    fn predict_point(&self, x: &[f64]) -> Result<f64> {
        let outs = self.tree_outputs(x)?;
        Ok(outs.iter().sum::<f64>() / outs.len() as f64)
    }

    /// Per-tree outputs clamped at zero, one demand scenario per tree.
    fn predict_samples(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .tree_outputs(x)?
            .into_iter()
            .map(|v| v.max(0.0))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::period::YearMonth;
    use crate::table::FeatureRow;

    fn table(points: &[(Vec<f64>, f64, f64)]) -> FeatureTable {
        let p = YearMonth::new(2021, 1).unwrap();
        let rows = points
            .iter()
            .enumerate()
            .map(|(i, (x, y, w))| {
                let mut r = FeatureRow::new(format!("f{i}"), "p", p, x.clone(), *y);
                r.weight = *w;
                r
            })
            .collect();
        FeatureTable::from_rows(points[0].0.len(), rows).unwrap()
    }

    fn exact_params(depth: usize) -> ForestParams {
        ForestParams {
            n_trees: 1,
            max_depth: depth,
            min_leaf_weight: 1.0,
            features_per_split: None,
            criterion: SplitCriterion::SquaredError,
            bootstrap: false,
        }
    }

    #[test]
    fn constant_target_gives_constant_leaves() {
        let t = table(&[
            (vec![0.0, 1.0], 7.25, 1.0),
            (vec![3.0, 2.0], 7.25, 0.3),
            (vec![5.0, -1.0], 7.25, 9.0),
        ]);
        let f = train_forest(&t, &ForestParams::default(), 1).unwrap();
        for tree in f.trees() {
            for node in tree.nodes() {
                assert!(matches!(node, Node::Leaf { value, .. } if *value == 7.25));
            }
        }
        assert_eq!(f.predict_point(&[100.0, 100.0]).unwrap(), 7.25);
    }

    #[test]
    fn depth_one_split_on_two_clusters() {
        // Candidate thresholds for x in {0,1}: only 0.5, gain 100 (SSE 100 -> 0).
        let t = table(&[
            (vec![0.0], 0.0, 1.0),
            (vec![0.0], 0.0, 1.0),
            (vec![1.0], 10.0, 1.0),
            (vec![1.0], 10.0, 1.0),
        ]);
        let f = train_forest(&t, &exact_params(1), 3).unwrap();
        let nodes = f.trees()[0].nodes();
        assert_eq!(nodes.len(), 3);
        assert!(matches!(nodes[0], Node::Split { feature: 0, threshold, .. } if threshold == 0.5));
        assert_eq!(f.predict_point(&[0.0]).unwrap(), 0.0);
        assert_eq!(f.predict_point(&[1.0]).unwrap(), 10.0);
    }

    #[test]
    fn tie_breaks_by_lowest_feature() {
        // both features separate the targets identically
        let t = table(&[(vec![0.0, 0.0], 0.0, 1.0), (vec![1.0, 1.0], 10.0, 1.0)]);
        let mut p = exact_params(1);
        p.features_per_split = Some(2);
        let f = train_forest(&t, &p, 0).unwrap();
        assert!(matches!(
            f.trees()[0].nodes()[0],
            Node::Split { feature: 0, .. }
        ));
    }

    #[test]
    fn zero_weights_are_degenerate() {
        let t = table(&[(vec![0.0], 1.0, 0.0), (vec![1.0], 2.0, 0.0)]);
        assert!(matches!(
            train_forest(&t, &ForestParams::default(), 0),
            Err(Error::DegenerateWeights)
        ));
    }

    #[test]
    fn point_is_mean_and_samples_clamp() {
        let t = table(&[(vec![0.0], -1.0, 1.0), (vec![1.0], -1.0, 1.0)]);
        let f = train_forest(&t, &exact_params(3), 0).unwrap();
        assert_eq!(f.predict_point(&[0.0]).unwrap(), -1.0);
        assert_eq!(f.predict_samples(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn samples_average_to_point() {
        let pts: Vec<_> = (0..40)
            .map(|i| {
                (
                    vec![i as f64, (i * 7 % 5) as f64],
                    (i % 9) as f64 * 1.5,
                    1.0,
                )
            })
            .collect();
        let f = train_forest(
            &table(&pts),
            &ForestParams {
                n_trees: 17,
                min_leaf_weight: 1.0,
                ..Default::default()
            },
            4,
        )
        .unwrap();
        for x in [[0.0, 0.0], [13.5, 2.0], [39.0, 4.0]] {
            let s = f.predict_samples(&x).unwrap();
            assert_eq!(s.len(), 17);
            let mean = s.iter().sum::<f64>() / 17.0;
            assert!((mean - f.predict_point(&x).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_mismatch_on_predict() {
        let t = table(&[(vec![0.0], 1.0, 1.0)]);
        let f = train_forest(&t, &ForestParams::default(), 0).unwrap();
        assert!(matches!(
            f.predict_point(&[1.0, 2.0]),
            Err(Error::Shape { .. })
        ));
        assert!(matches!(f.predict_samples(&[]), Err(Error::Shape { .. })));
    }

    #[test]
    fn absolute_error_leaves_are_medians() {
        let t = table(&[
            (vec![0.0], 1.0, 1.0),
            (vec![0.0], 2.0, 1.0),
            (vec![0.0], 100.0, 1.0),
        ]);
        let mut p = exact_params(2);
        p.criterion = SplitCriterion::AbsoluteError;
        let f = train_forest(&t, &p, 0).unwrap();
        assert_eq!(f.predict_point(&[0.0]).unwrap(), 2.0);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let pts: Vec<_> = (0..30)
            .map(|i| {
                (
                    vec![i as f64 / 3.0, (i % 4) as f64],
                    (i as f64).sin().abs() * 10.0,
                    1.0,
                )
            })
            .collect();
        let f = train_forest(
            &table(&pts),
            &ForestParams {
                n_trees: 5,
                min_leaf_weight: 1.0,
                ..Default::default()
            },
            9,
        )
        .unwrap();
        let s = f.to_json().unwrap();
        assert!(s.starts_with("{\"format\":\"decaware-forest\",\"version\":1"));
        let back = Forest::from_json(&s).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_json().unwrap(), s);
    }

    #[test]
    fn json_rejects_wrong_tag() {
        let pts = vec![(vec![0.0], 1.0, 1.0)];
        let f = train_forest(
            &table(&pts),
            &ForestParams {
                n_trees: 1,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        let s = f.to_json().unwrap().replace("decaware-forest", "other");
        assert!(matches!(Forest::from_json(&s), Err(Error::Format(_))));
    }
}
