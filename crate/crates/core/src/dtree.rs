//! CART-style classification tree with Gini impurity, plus the registry that
//! expands a terminal class into its (cluster, poison, family) hierarchy.

use thiserror::Error;

use crate::imageio::ManifestEntry;
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("empty label set")]
    EmptySet,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("rows have different lengths ({expected} vs {found})")]
    RaggedRows { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("class index {0} is not in the registry")]
    UnknownClass(usize),
    #[error("invalid tree: {0}")]
    Invalid(String),
}

/// `1 − Σ_c p_c²` over the class labels.
pub fn gini(labels: &[usize]) -> Result<f64, TreeError> {
    if labels.is_empty() {
        return Err(TreeError::EmptySet);
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    Ok(gini_of_counts(&counts, labels.len()))
}

fn gini_of_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    1.0 - counts
        .iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p
        })
        .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node<T> {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        class: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 8,
            min_leaf: 1,
        }
    }
}

impl TreeParams {
    /// No depth limit, single-row leaves.
    pub fn fully_grown() -> Self {
        TreeParams {
            max_depth: usize::MAX,
            min_leaf: 1,
        }
    }
}

/// Nodes stored in pre-order; the root is node 0 and children always follow
/// their parent.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree<T> {
    nodes: Vec<Node<T>>,
    n_features: usize,
    n_classes: usize,
}

struct Builder<'a, T> {
    rows: &'a [(Vec<T>, usize)],
    n_features: usize,
    n_classes: usize,
    params: TreeParams,
    nodes: Vec<Node<T>>,
}

/// Best split found for a node: feature, threshold, weighted child impurity.
type Candidate<T> = (usize, T, f64);

impl<T: Scalar> Builder<'_, T> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &i in idx {
            counts[self.rows[i].1] += 1;
        }
        counts
    }

    fn best_split(&self, idx: &[usize], parent: &[usize]) -> Option<Candidate<T>> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf;
        let mut best: Option<Candidate<T>> = None;
        let mut sorted = idx.to_vec();
        for f in 0..self.n_features {
            sorted.sort_by(|&a, &b| {
                self.rows[a].0[f]
                    .partial_cmp(&self.rows[b].0[f])
                    .expect("finite features")
            });
            let mut left = vec![0usize; self.n_classes];
            let mut right = parent.to_vec();
            for k in 0..n - 1 {
                let class = self.rows[sorted[k]].1;
                left[class] += 1;
                right[class] -= 1;
                let (a, b) = (self.rows[sorted[k]].0[f], self.rows[sorted[k + 1]].0[f]);
                let n_left = k + 1;
                if a == b || n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let score = (n_left as f64 * gini_of_counts(&left, n_left)
                    + (n - n_left) as f64 * gini_of_counts(&right, n - n_left))
                    / n as f64;
                // Strict improvement keeps the earliest feature and lowest threshold on ties.
                if best.as_ref().is_none_or(|&(_, _, s)| score < s) {
                    let mut t = a + (b - a) / T::of(2.0);
                    if t >= b {
                        t = a;
                    }
                    best = Some((f, t, score));
                }
            }
        }
        best
    }

    fn majority(counts: &[usize]) -> usize {
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let me = self.nodes.len();
        let counts = self.counts(&idx);
        self.nodes.push(Node::Leaf {
            class: Self::majority(&counts),
        });
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.params.max_depth || idx.len() < 2 * self.params.min_leaf {
            return me;
        }
        let Some((feature, threshold, _)) = self.best_split(&idx, &counts) else {
            return me;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.rows[i].0[feature] <= threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }
}

impl<T: Scalar> DecisionTree<T> {
    /// Greedy recursive splitting on midpoints between consecutive distinct
    /// feature values, minimizing weighted child Gini.
    pub fn fit(rows: &[(Vec<T>, usize)], params: TreeParams) -> Result<Self, TreeError> {
        let first = rows.first().ok_or(TreeError::EmptyTrainingSet)?;
        let n_features = first.0.len();
        for (x, _) in rows {
            if x.len() != n_features {
                return Err(TreeError::RaggedRows {
                    expected: n_features,
                    found: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(TreeError::Invalid("non-finite feature value".into()));
            }
        }
        if params.max_depth == 0 || params.min_leaf == 0 {
            return Err(TreeError::Invalid(
                "max_depth and min_leaf must be at least 1".into(),
            ));
        }
        let n_classes = rows.iter().map(|r| r.1).max().expect("nonempty") + 1;
        let mut b = Builder {
            rows,
            n_features,
            n_classes,
            params,
            nodes: Vec::new(),
        };
        b.grow((0..rows.len()).collect(), 0);
        Ok(DecisionTree {
            nodes: b.nodes,
            n_features,
            n_classes,
        })
    }

    /// Rebuilds a tree from stored nodes, checking structural invariants.
    pub fn from_nodes(
        nodes: Vec<Node<T>>,
        n_features: usize,
        n_classes: usize,
    ) -> Result<Self, TreeError> {
        if nodes.is_empty() {
            return Err(TreeError::Invalid("no nodes".into()));
        }
        let mut referenced = vec![false; nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            match *n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features {
                        return Err(TreeError::Invalid(format!(
                            "node {i} splits on feature {feature} of {n_features}"
                        )));
                    }
                    if !threshold.is_finite() {
                        return Err(TreeError::Invalid(format!(
                            "node {i} has a non-finite threshold"
                        )));
                    }
                    for child in [left, right] {
                        if child <= i || child >= nodes.len() || referenced[child] {
                            return Err(TreeError::Invalid(format!(
                                "node {i} has bad child {child}"
                            )));
                        }
                        referenced[child] = true;
                    }
                }
                Node::Leaf { class } => {
                    if class >= n_classes {
                        return Err(TreeError::Invalid(format!(
                            "leaf {i} predicts class {class} of {n_classes}"
                        )));
                    }
                }
            }
        }
        if referenced.iter().skip(1).any(|r| !r) {
            return Err(TreeError::Invalid("unreachable node".into()));
        }
        Ok(DecisionTree {
            nodes,
            n_features,
            n_classes,
        })
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn predict_class(&self, x: &[T]) -> Result<usize, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { class } => return Ok(class),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassInfo {
    pub name: String,
    pub cluster: String,
    pub poison: bool,
}

/// Terminal classes in output-neuron order (sorted by name).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelRegistry {
    classes: Vec<ClassInfo>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HierarchicalLabel {
    pub cluster: String,
    pub poison: bool,
    /// Empty for poison classes.
    pub family: String,
}

impl LabelRegistry {
    /// Sorts by name; rejects duplicate names.
    pub fn new(mut classes: Vec<ClassInfo>) -> Result<Self, TreeError> {
        classes.sort_by(|a, b| a.name.cmp(&b.name));
        if let Some(w) = classes.windows(2).find(|w| w[0].name == w[1].name) {
            return Err(TreeError::Invalid(format!(
                "duplicate class {:?}",
                w[0].name
            )));
        }
        Ok(LabelRegistry { classes })
    }

    /// One class per distinct family in the manifest.
    pub fn from_manifest(entries: &[ManifestEntry]) -> Self {
        let mut classes: Vec<ClassInfo> = Vec::new();
        for e in entries {
            if !classes.iter().any(|c| c.name == e.family) {
                classes.push(ClassInfo {
                    name: e.family.clone(),
                    cluster: e.cluster.clone(),
                    poison: e.poison,
                });
            }
        }
        Self::new(classes).expect("names are deduplicated")
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes
            .binary_search_by(|c| c.name.as_str().cmp(name))
            .ok()
    }

    pub fn expand(&self, class: usize) -> Result<HierarchicalLabel, TreeError> {
        let c = self
            .classes
            .get(class)
            .ok_or(TreeError::UnknownClass(class))?;
        Ok(HierarchicalLabel {
            cluster: c.cluster.clone(),
            poison: c.poison,
            family: if c.poison {
                String::new()
            } else {
                c.name.clone()
            },
        })
    }
}

/// Tree prediction expanded through the registry.
pub fn predict_hierarchical<T: Scalar>(
    tree: &DecisionTree<T>,
    registry: &LabelRegistry,
    x: &[T],
) -> Result<HierarchicalLabel, TreeError> {
    registry.expand(tree.predict_class(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_values() {
        assert_eq!(gini(&[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[0, 0, 1, 1]).unwrap(), 0.5);
        assert_eq!(gini(&[0, 0, 0, 1]).unwrap(), 0.375);
        assert_eq!(gini(&[]), Err(TreeError::EmptySet));
    }

    #[test]
    fn separable_in_one_split() {
        let mut rows = vec![(vec![0.9, 0.1], 0); 5];
        rows.extend(vec![(vec![0.1, 0.9], 1); 5]);
        let t = DecisionTree::fit(&rows, TreeParams::default()).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(
            t.nodes()[0],
            Node::Split {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2
            }
        );
        for (x, c) in &rows {
            assert_eq!(t.predict_class(x).unwrap(), *c);
        }
    }

    #[test]
    fn pure_root_is_a_leaf() {
        let rows = vec![(vec![0.3f64], 2), (vec![0.7], 2)];
        let t = DecisionTree::fit(&rows, TreeParams::default()).unwrap();
        assert_eq!(t.nodes(), &[Node::Leaf { class: 2 }]);
        assert_eq!(t.predict_class(&[100.0]).unwrap(), 2);
    }

    #[test]
    fn boundary_goes_left() {
        let t = DecisionTree::from_nodes(
            vec![
                Node::Split {
                    feature: 0,
                    threshold: 0.5,
                    left: 1,
                    right: 2,
                },
                Node::Leaf { class: 0 },
                Node::Leaf { class: 1 },
            ],
            2,
            2,
        )
        .unwrap();
        assert_eq!(t.predict_class(&[0.4, 9.0]).unwrap(), 0);
        assert_eq!(t.predict_class(&[0.5, 9.0]).unwrap(), 0);
        assert_eq!(t.predict_class(&[0.6, 9.0]).unwrap(), 1);
        assert!(matches!(
            t.predict_class(&[0.5]),
            Err(TreeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fit_errors() {
        assert_eq!(
            DecisionTree::<f64>::fit(&[], TreeParams::default()),
            Err(TreeError::EmptyTrainingSet)
        );
        assert_eq!(
            DecisionTree::fit(
                &[(vec![0.0, 1.0], 0), (vec![1.0], 1)],
                TreeParams::default()
            ),
            Err(TreeError::RaggedRows {
                expected: 2,
                found: 1
            })
        );
    }

    #[test]
    fn xor_needs_depth_two() {
        // No single split lowers impurity; the tree must still grow.
        let rows = vec![
            (vec![0.0, 0.0], 0),
            (vec![1.0, 1.0], 0),
            (vec![0.0, 1.0], 1),
            (vec![1.0, 0.0], 1),
        ];
        let t = DecisionTree::fit(&rows, TreeParams::fully_grown()).unwrap();
        for (x, c) in &rows {
            assert_eq!(t.predict_class(x).unwrap(), *c);
        }
    }

    #[test]
    fn depth_and_leaf_limits() {
        let rows: Vec<(Vec<f64>, usize)> = (0..16).map(|i| (vec![i as f64], i % 4)).collect();
        let stump = DecisionTree::fit(
            &rows,
            TreeParams {
                max_depth: 1,
                min_leaf: 1,
            },
        )
        .unwrap();
        assert_eq!(stump.depth(), 1);
        let coarse = DecisionTree::fit(
            &rows,
            TreeParams {
                max_depth: 99,
                min_leaf: 8,
            },
        )
        .unwrap();
        assert_eq!(coarse.depth(), 1);
        let full = DecisionTree::fit(&rows, TreeParams::fully_grown()).unwrap();
        for (x, c) in &rows {
            assert_eq!(full.predict_class(x).unwrap(), *c);
        }
    }

    #[test]
    fn majority_tie_goes_low() {
        let rows = vec![(vec![0.0], 1), (vec![0.0], 0)];
        let t = DecisionTree::fit(&rows, TreeParams::default()).unwrap();
        assert_eq!(t.nodes(), &[Node::Leaf { class: 0 }]);
    }

    #[test]
    fn from_nodes_rejects_bad_structure() {
        let cycle = vec![
            Node::Split {
                feature: 0,
                threshold: 0.5f64,
                left: 0,
                right: 1,
            },
            Node::Leaf { class: 0 },
        ];
        assert!(DecisionTree::from_nodes(cycle, 1, 1).is_err());
        assert!(DecisionTree::<f64>::from_nodes(vec![Node::Leaf { class: 3 }], 1, 2).is_err());
        assert!(DecisionTree::<f64>::from_nodes(vec![], 1, 2).is_err());
    }

    fn registry() -> LabelRegistry {
        LabelRegistry::new(vec![
            ClassInfo {
                name: "Scombridae".into(),
                cluster: "pelagic".into(),
                poison: false,
            },
            ClassInfo {
                name: "Poison".into(),
                cluster: "poison".into(),
                poison: true,
            },
        ])
        .unwrap()
    }

    #[test]
    fn hierarchy_expansion() {
        let r = registry();
        assert_eq!(r.index_of("Poison"), Some(0));
        assert_eq!(
            r.expand(r.index_of("Scombridae").unwrap()).unwrap(),
            HierarchicalLabel {
                cluster: "pelagic".into(),
                poison: false,
                family: "Scombridae".into()
            }
        );
        assert_eq!(
            r.expand(0).unwrap(),
            HierarchicalLabel {
                cluster: "poison".into(),
                poison: true,
                family: String::new()
            }
        );
        assert_eq!(r.expand(2), Err(TreeError::UnknownClass(2)));

        let leaf = DecisionTree::<f64>::from_nodes(vec![Node::Leaf { class: 1 }], 2, 2).unwrap();
        assert_eq!(
            predict_hierarchical(&leaf, &r, &[0.2, 0.8]).unwrap().family,
            "Scombridae"
        );
        let rogue = DecisionTree::<f64>::from_nodes(vec![Node::Leaf { class: 5 }], 2, 6).unwrap();
        assert_eq!(
            predict_hierarchical(&rogue, &r, &[0.2, 0.8]),
            Err(TreeError::UnknownClass(5))
        );
    }

    #[test]
    fn duplicate_class_names() {
        let c = ClassInfo {
            name: "A".into(),
            cluster: "x".into(),
            poison: false,
        };
        assert!(LabelRegistry::new(vec![c.clone(), c]).is_err());
    }
}
