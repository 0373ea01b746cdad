//! End-to-end orchestration: image → features → perceptron → tree →
//! hierarchical label, plus the training/evaluation harness and the model file.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::dtree::{ClassInfo, HierarchicalLabel, LabelRegistry, Node, TreeError, TreeParams};
use crate::features::{
    extract_features, FeatureError, FeatureVector, FEATURE_COUNT, FEATURE_LAYOUT_VERSION,
};
use crate::imageio::{
    decode_image, load_manifest, to_indexed, ImageError, ManifestEntry, ManifestError, RgbImage,
    Split,
};
use crate::mlp::{MlpError, TrainReport, TrainingSample};
use crate::preprocess::{
    median_filter, normalize_rotation, unify_background, PreprocessConfig, PreprocessError,
};
use crate::segment::{
    divide_segments, extract_mask, group_by_color, trace_contour, ColorGroups, Contour, FishMask,
    Segment, SegmentConfig, SegmentError,
};
use crate::{Mlp, Rgb, TrainConfig, Tree};

/// Model file format version written by [`save_bundle`].
pub const MODEL_VERSION: u64 = 1;

/// Processing stage a failure is attributed to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Manifest,
    Decode,
    Preprocess,
    Segment,
    Features,
    Classify,
    Train,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Manifest => "manifest",
            Stage::Decode => "decode",
            Stage::Preprocess => "preprocess",
            Stage::Segment => "segment",
            Stage::Features => "features",
            Stage::Classify => "classify",
            Stage::Train => "train",
        })
    }
}

/// Underlying module error of a stage failure.
#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage} stage failed{}: {source}", .path.as_ref().map(|p| format!(" for {}", p.display())).unwrap_or_default())]
    Stage {
        stage: Stage,
        path: Option<PathBuf>,
        #[source]
        source: StageError,
    },
    #[error("no training rows")]
    EmptyTrainingSet,
    #[error("no test rows")]
    EmptyTestSet,
    #[error("class {0:?} has no training rows")]
    ClassMissing(String),
    #[error("family {0:?} is not known to the model")]
    UnknownFamily(String),
    #[error("model version {found} is not supported (expected {MODEL_VERSION})")]
    VersionMismatch { found: u64 },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("cannot write {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    fn at(stage: Stage, path: Option<&Path>, source: impl Into<StageError>) -> Self {
        PipelineError::Stage {
            stage,
            path: path.map(Path::to_path_buf),
            source: source.into(),
        }
    }

    /// Stage the failure happened in, if it is a stage failure.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

/// Every intermediate of the image-analysis half of the pipeline.
#[derive(Clone, Debug)]
pub struct Analysis {
    /// Filtered, background-unified, rotation-normalized image.
    pub image: RgbImage,
    pub background: Rgb,
    pub mask: FishMask,
    pub contour: Contour,
    pub groups: ColorGroups,
    pub segments: Vec<Segment>,
    pub features: FeatureVector,
}

/// Runs preprocessing, segmentation and feature extraction on a decoded image.
pub fn analyze_image(
    img: &RgbImage,
    pcfg: &PreprocessConfig,
    scfg: &SegmentConfig,
) -> Result<Analysis> {
    analyze(img, pcfg, scfg, None)
}

fn analyze(
    img: &RgbImage,
    pcfg: &PreprocessConfig,
    scfg: &SegmentConfig,
    path: Option<&Path>,
) -> Result<Analysis> {
    let pre = |e: PreprocessError| PipelineError::at(Stage::Preprocess, path, e);
    let seg = |e: SegmentError| PipelineError::at(Stage::Segment, path, e);
    pcfg.validate().map_err(pre)?;
    scfg.validate().map_err(seg)?;

    let filtered = median_filter(img, pcfg.median_radius);
    let (unified, background) = unify_background(&filtered, pcfg).map_err(pre)?;
    // A blank image is reported by segmentation, which owns the foreground test.
    let image = match normalize_rotation(&unified, background) {
        Ok(rotated) => rotated,
        Err(PreprocessError::EmptyForeground) => unified,
        Err(e) => return Err(pre(e)),
    };
    let mask = extract_mask(&image, background, scfg.foreground_tolerance).map_err(seg)?;
    let contour = trace_contour(&mask);
    let groups = group_by_color(&mask, &image, scfg.color_epsilon);
    let segments = divide_segments(&mask, &image, scfg.segments);
    let features = extract_features(&image, &to_indexed(&image), &mask, &contour, &groups)
        .map_err(|e| PipelineError::at(Stage::Features, path, e))?;
    Ok(Analysis {
        image,
        background,
        mask,
        contour,
        groups,
        segments,
        features,
    })
}

/// Decodes an image file (PPM or BMP).
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| PipelineError::at(Stage::Decode, Some(path), e))?;
    decode_image(&bytes).map_err(|e| PipelineError::at(Stage::Decode, Some(path), e))
}

/// Features of an image file.
pub fn extract_file(
    path: &Path,
    pcfg: &PreprocessConfig,
    scfg: &SegmentConfig,
) -> Result<FeatureVector> {
    Ok(analyze(&read_image(path)?, pcfg, scfg, Some(path))?.features)
}

/// Reads a manifest, attributing failures to the manifest stage.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    load_manifest(path).map_err(|e| PipelineError::at(Stage::Manifest, Some(path), e))
}

/// Perceptron, tree and label registry with the image settings they were trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedBundle {
    mlp: Mlp,
    tree: Tree,
    registry: LabelRegistry,
    preprocess: PreprocessConfig,
    segment: SegmentConfig,
}

impl TrainedBundle {
    /// Checks that the parts fit together: 47 inputs, one output per class,
    /// a tree over the perceptron outputs predicting registry classes.
    pub fn new(
        mlp: Mlp,
        tree: Tree,
        registry: LabelRegistry,
        preprocess: PreprocessConfig,
        segment: SegmentConfig,
    ) -> Result<Self> {
        let corrupt = |m: String| Err(PipelineError::CorruptModel(m));
        if mlp.input_size() != FEATURE_COUNT {
            return corrupt(format!(
                "perceptron has {} inputs, expected {FEATURE_COUNT}",
                mlp.input_size()
            ));
        }
        if registry.len() < 2 || mlp.output_size() != registry.len() {
            return corrupt(format!(
                "perceptron has {} outputs for {} classes",
                mlp.output_size(),
                registry.len()
            ));
        }
        if tree.n_features() != mlp.output_size() || tree.n_classes() > registry.len() {
            return corrupt(format!(
                "tree over {} inputs / {} classes does not match the perceptron",
                tree.n_features(),
                tree.n_classes()
            ));
        }
        if preprocess.validate().is_err() || segment.validate().is_err() {
            return corrupt("invalid image configuration".into());
        }
        Ok(TrainedBundle {
            mlp,
            tree,
            registry,
            preprocess,
            segment,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn registry(&self) -> &LabelRegistry {
        &self.registry
    }

    pub fn preprocess(&self) -> &PreprocessConfig {
        &self.preprocess
    }

    pub fn segment(&self) -> &SegmentConfig {
        &self.segment
    }

    pub fn feature_layout_version(&self) -> u32 {
        FEATURE_LAYOUT_VERSION
    }

    /// Perceptron scores, tree class and expanded label for a feature vector.
    pub fn classify(
        &self,
        features: &FeatureVector,
    ) -> Result<(HierarchicalLabel, usize, Vec<f64>)> {
        let cls = |e: StageError| PipelineError::at(Stage::Classify, None, e);
        let scores = self
            .mlp
            .forward(features.values())
            .map_err(|e| cls(e.into()))?;
        let class = self
            .tree
            .predict_class(&scores)
            .map_err(|e| cls(e.into()))?;
        let label = self.registry.expand(class).map_err(|e| cls(e.into()))?;
        Ok((label, class, scores))
    }
}

/// Result of classifying one image.
#[derive(Clone, Debug)]
pub struct Classification {
    pub label: HierarchicalLabel,
    /// Terminal class index into the bundle's registry.
    pub class: usize,
    /// Perceptron outputs, one per class.
    pub scores: Vec<f64>,
    pub features: FeatureVector,
}

/// Classifies one image file with a trained bundle.
pub fn run_pipeline(path: &Path, bundle: &TrainedBundle) -> Result<Classification> {
    let img = read_image(path)?;
    let features = analyze(&img, &bundle.preprocess, &bundle.segment, Some(path))?.features;
    let (label, class, scores) = bundle.classify(&features).map_err(|e| match e {
        PipelineError::Stage { stage, source, .. } => PipelineError::Stage {
            stage,
            path: Some(path.to_path_buf()),
            source,
        },
        other => other,
    })?;
    Ok(Classification {
        label,
        class,
        scores,
        features,
    })
}

/// Everything [`train_bundle`] needs beyond the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainParams {
    pub mlp: TrainConfig,
    pub hidden: usize,
    pub tree: TreeParams,
    pub preprocess: PreprocessConfig,
    pub segment: SegmentConfig,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            mlp: TrainConfig::default(),
            hidden: 24,
            tree: TreeParams::default(),
            preprocess: PreprocessConfig::default(),
            segment: SegmentConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub report: TrainReport<f64>,
    /// Cascade accuracy on the training rows.
    pub train_accuracy: f64,
    pub train_rows: usize,
}

/// Extracts features for the given manifest rows (paths resolved against `base`).
pub fn extract_rows(
    entries: &[&ManifestEntry],
    base: &Path,
    pcfg: &PreprocessConfig,
    scfg: &SegmentConfig,
) -> Result<Vec<FeatureVector>> {
    entries
        .iter()
        .map(|e| extract_file(&e.resolve(base), pcfg, scfg))
        .collect()
}

/// Trains the perceptron on the manifest's training rows, then fits the tree
/// on the perceptron's outputs for those rows.
///
/// Terminal classes are every family named anywhere in the manifest, indexed
/// in sorted name order.
pub fn train_bundle(
    entries: &[ManifestEntry],
    base: &Path,
    params: &TrainParams,
) -> Result<(TrainedBundle, TrainSummary)> {
    let registry = LabelRegistry::from_manifest(entries);
    let train: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == Split::Train).collect();
    if train.is_empty() {
        return Err(PipelineError::EmptyTrainingSet);
    }
    for c in registry.classes() {
        if !train.iter().any(|e| e.family == c.name) {
            return Err(PipelineError::ClassMissing(c.name.clone()));
        }
    }
    let features = extract_rows(&train, base, &params.preprocess, &params.segment)?;
    let labels: Vec<usize> = train
        .iter()
        .map(|e| {
            registry
                .index_of(&e.family)
                .expect("registry built from these rows")
        })
        .collect();
    train_on_features(registry, &features, &labels, params)
}

/// The learning half of [`train_bundle`], on precomputed features.
pub fn train_on_features(
    registry: LabelRegistry,
    features: &[FeatureVector],
    labels: &[usize],
    params: &TrainParams,
) -> Result<(TrainedBundle, TrainSummary)> {
    let fail = |e: StageError| PipelineError::at(Stage::Train, None, e);
    if features.is_empty() {
        return Err(PipelineError::EmptyTrainingSet);
    }
    assert_eq!(features.len(), labels.len(), "one label per feature vector");
    let n_classes = registry.len();
    if n_classes < 2 {
        return Err(fail(
            MlpError::BadArchitecture(format!("need at least 2 classes, found {n_classes}")).into(),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(fail(TreeError::UnknownClass(bad).into()));
    }
    let samples: Vec<TrainingSample<f64>> = features
        .iter()
        .zip(labels)
        .map(|(f, &l)| TrainingSample {
            input: f.values().to_vec(),
            target: (0..n_classes)
                .map(|c| if c == l { 1.0 } else { 0.0 })
                .collect(),
        })
        .collect();

    let mut mlp = Mlp::init(&[FEATURE_COUNT, params.hidden, n_classes], &params.mlp)
        .map_err(|e| fail(e.into()))?;
    let report = mlp
        .train(&samples, &params.mlp)
        .map_err(|e| fail(e.into()))?;
    log::info!(
        "perceptron trained: {} epochs, final mean error {:.3e}",
        report.epochs,
        report.final_error
    );

    let outputs: Vec<(Vec<f64>, usize)> = samples
        .iter()
        .zip(labels)
        .map(|(s, &l)| mlp.forward(&s.input).map(|o| (o, l)))
        .collect::<Result<_, _>>()
        .map_err(|e| fail(e.into()))?;
    let tree = Tree::fit(&outputs, params.tree).map_err(|e| fail(e.into()))?;
    let correct = outputs
        .iter()
        .filter(|(o, l)| tree.predict_class(o) == Ok(*l))
        .count();
    let train_accuracy = correct as f64 / outputs.len() as f64;
    log::info!(
        "tree depth {}, training accuracy {train_accuracy:.4}",
        tree.depth()
    );

    let bundle = TrainedBundle::new(mlp, tree, registry, params.preprocess, params.segment)?;
    Ok((
        bundle,
        TrainSummary {
            report,
            train_accuracy,
            train_rows: outputs.len(),
        },
    ))
}

/// Test-split metrics over terminal classes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Class names, in registry order (rows and columns of `confusion`).
    pub classes: Vec<String>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    /// Per class; 0 when the class was never predicted.
    pub precision: Vec<f64>,
    /// Per class; 0 when the class has no test rows.
    pub recall: Vec<f64>,
    /// Recall of the poison class(es); `None` when no poison rows were tested.
    pub poison_recall: Option<f64>,
    /// Indices of poison classes.
    pub poison_classes: Vec<usize>,
}

impl EvalReport {
    /// Builds the report from (true, predicted) class pairs.
    pub fn from_pairs(registry: &LabelRegistry, pairs: &[(usize, usize)]) -> Self {
        let n = registry.len();
        let mut confusion = vec![vec![0usize; n]; n];
        for &(t, p) in pairs {
            confusion[t][p] += 1;
        }
        let trace: usize = (0..n).map(|i| confusion[i][i]).sum();
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = (0..n)
            .map(|j| ratio(confusion[j][j], (0..n).map(|i| confusion[i][j]).sum()))
            .collect();
        let recall = (0..n)
            .map(|i| ratio(confusion[i][i], confusion[i].iter().sum()))
            .collect();
        let poison_classes: Vec<usize> = (0..n).filter(|&i| registry.classes()[i].poison).collect();
        let (mut poison_total, mut poison_hit) = (0, 0);
        for &(t, p) in pairs {
            if poison_classes.contains(&t) {
                poison_total += 1;
                poison_hit += usize::from(t == p);
            }
        }
        EvalReport {
            classes: registry.classes().iter().map(|c| c.name.clone()).collect(),
            confusion,
            accuracy: ratio(trace, pairs.len()),
            precision,
            recall,
            poison_recall: (poison_total > 0).then(|| ratio(poison_hit, poison_total)),
            poison_classes,
        }
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

impl fmt::Display for EvalReport {
    /// Plain-text summary: accuracy, confusion table, per-class precision/recall.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Row labels are "<index> <name>".
        let width = self
            .classes
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{i} {c}").len())
            .max()
            .unwrap_or(0)
            .max(10);
        writeln!(
            f,
            "accuracy: {:.4} ({} images)",
            self.accuracy,
            self.total()
        )?;
        match self.poison_recall {
            Some(r) => writeln!(f, "poison recall: {r:.4}")?,
            None => writeln!(f, "poison recall: n/a")?,
        }
        writeln!(f, "confusion matrix (rows = true, columns = predicted):")?;
        write!(f, "{:width$}", "")?;
        for j in 0..self.classes.len() {
            write!(f, " {:>5}", j)?;
        }
        writeln!(f, " {:>9} {:>9}", "precision", "recall")?;
        for (i, row) in self.confusion.iter().enumerate() {
            write!(f, "{:width$}", format!("{i} {}", self.classes[i]))?;
            for v in row {
                write!(f, " {v:>5}")?;
            }
            writeln!(f, " {:>9.4} {:>9.4}", self.precision[i], self.recall[i])?;
        }
        Ok(())
    }
}

/// Classifies every test row of the manifest.
pub fn evaluate(
    bundle: &TrainedBundle,
    entries: &[ManifestEntry],
    base: &Path,
) -> Result<EvalReport> {
    let test: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == Split::Test).collect();
    if test.is_empty() {
        return Err(PipelineError::EmptyTestSet);
    }
    let mut pairs = Vec::with_capacity(test.len());
    for e in test {
        let truth = bundle
            .registry
            .index_of(&e.family)
            .ok_or_else(|| PipelineError::UnknownFamily(e.family.clone()))?;
        let c = run_pipeline(&e.resolve(base), bundle)?;
        pairs.push((truth, c.class));
    }
    Ok(EvalReport::from_pairs(&bundle.registry, &pairs))
}

/// Canonical JSON text of a bundle: sorted keys, shortest round-trip floats.
pub fn bundle_to_json(bundle: &TrainedBundle) -> String {
    let classes: Vec<&str> = bundle
        .registry
        .classes()
        .iter()
        .map(|c| c.name.as_str())
        .collect();
    let mut hierarchy = Map::new();
    for (i, c) in bundle.registry.classes().iter().enumerate() {
        let label = bundle.registry.expand(i).expect("index in range");
        hierarchy.insert(
            c.name.clone(),
            json!({"cluster": label.cluster, "poison": label.poison, "family": label.family}),
        );
    }
    let sizes = bundle.mlp.layer_sizes();
    let weights: Vec<Vec<Vec<f64>>> = bundle
        .mlp
        .weights()
        .iter()
        .zip(sizes)
        .map(|(w, &n_in)| w.chunks(n_in + 1).map(<[f64]>::to_vec).collect())
        .collect();
    let nodes: Vec<Value> = bundle
        .tree
        .nodes()
        .iter()
        .map(|n| match *n {
            Node::Split {
                feature,
                threshold,
                left,
                right,
            } => json!({"f": feature, "t": threshold, "l": left, "r": right}),
            Node::Leaf { class } => json!({"leaf": class}),
        })
        .collect();
    let doc = json!({
        "version": MODEL_VERSION,
        "feature_layout_version": FEATURE_LAYOUT_VERSION,
        "classes": classes,
        "hierarchy": hierarchy,
        "mlp": {"layer_sizes": sizes, "weights": weights, "activation": "sigmoid"},
        "tree": {"nodes": nodes},
        "preprocess": {
            "background_tolerance": bundle.preprocess.background_tolerance,
            "median_radius": bundle.preprocess.median_radius,
        },
        "segment": {
            "foreground_tolerance": bundle.segment.foreground_tolerance,
            "color_epsilon": bundle.segment.color_epsilon,
            "segments": bundle.segment.segments,
        },
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("JSON values always serialize");
    text.push('\n');
    text
}

/// Parses a model document written by [`bundle_to_json`], checking every shape invariant.
pub fn bundle_from_json(text: &str) -> Result<TrainedBundle> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| PipelineError::CorruptModel(e.to_string()))?;
    let version = field(&doc, "version")?
        .as_u64()
        .ok_or_else(|| corrupt("version is not an integer"))?;
    if version != MODEL_VERSION {
        return Err(PipelineError::VersionMismatch { found: version });
    }
    let layout = as_usize(field(&doc, "feature_layout_version")?)?;
    if layout != FEATURE_LAYOUT_VERSION as usize {
        return Err(corrupt(&format!(
            "feature layout {layout} is not supported"
        )));
    }

    let classes: Vec<String> = as_array(field(&doc, "classes")?)?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_owned)
                .ok_or_else(|| corrupt("class name is not a string"))
        })
        .collect::<Result<_>>()?;
    let hierarchy = field(&doc, "hierarchy")?
        .as_object()
        .ok_or_else(|| corrupt("hierarchy is not an object"))?;
    if hierarchy.len() != classes.len() || classes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(corrupt(
            "classes must be sorted, unique and match the hierarchy",
        ));
    }
    let mut infos = Vec::with_capacity(classes.len());
    for name in &classes {
        let h = hierarchy
            .get(name)
            .ok_or_else(|| corrupt(&format!("class {name:?} missing from hierarchy")))?;
        let cluster = field(h, "cluster")?
            .as_str()
            .ok_or_else(|| corrupt("cluster is not a string"))?;
        let poison = field(h, "poison")?
            .as_bool()
            .ok_or_else(|| corrupt("poison is not a boolean"))?;
        let family = field(h, "family")?
            .as_str()
            .ok_or_else(|| corrupt("family is not a string"))?;
        if family != if poison { "" } else { name.as_str() } {
            return Err(corrupt(&format!("family of {name:?} is inconsistent")));
        }
        infos.push(ClassInfo {
            name: name.clone(),
            cluster: cluster.to_owned(),
            poison,
        });
    }
    let registry = LabelRegistry::new(infos).map_err(|e| corrupt(&e.to_string()))?;

    let mlp_doc = field(&doc, "mlp")?;
    if field(mlp_doc, "activation")?.as_str() != Some("sigmoid") {
        return Err(corrupt("activation must be \"sigmoid\""));
    }
    let sizes: Vec<usize> = as_array(field(mlp_doc, "layer_sizes")?)?
        .iter()
        .map(as_usize)
        .collect::<Result<_>>()?;
    let weights: Vec<Vec<f64>> = as_array(field(mlp_doc, "weights")?)?
        .iter()
        .map(|layer| {
            let mut flat = Vec::new();
            for row in as_array(layer)? {
                for v in as_array(row)? {
                    flat.push(
                        v.as_f64()
                            .ok_or_else(|| corrupt("weight is not a number"))?,
                    );
                }
            }
            Ok(flat)
        })
        .collect::<Result<_>>()?;
    let mlp = Mlp::from_weights(&sizes, weights).map_err(|e| corrupt(&e.to_string()))?;

    let nodes: Vec<Node<f64>> = as_array(field(field(&doc, "tree")?, "nodes")?)?
        .iter()
        .map(|n| {
            if let Some(leaf) = n.get("leaf") {
                return Ok(Node::Leaf {
                    class: as_usize(leaf)?,
                });
            }
            Ok(Node::Split {
                feature: as_usize(field(n, "f")?)?,
                threshold: field(n, "t")?
                    .as_f64()
                    .ok_or_else(|| corrupt("threshold is not a number"))?,
                left: as_usize(field(n, "l")?)?,
                right: as_usize(field(n, "r")?)?,
            })
        })
        .collect::<Result<_>>()?;
    let tree = Tree::from_nodes(nodes, mlp.output_size(), registry.len())
        .map_err(|e| corrupt(&e.to_string()))?;

    let p = field(&doc, "preprocess")?;
    let preprocess = PreprocessConfig {
        background_tolerance: as_f64(field(p, "background_tolerance")?)?,
        median_radius: as_usize(field(p, "median_radius")?)?,
    };
    let s = field(&doc, "segment")?;
    let segment = SegmentConfig {
        foreground_tolerance: as_f64(field(s, "foreground_tolerance")?)?,
        color_epsilon: as_f64(field(s, "color_epsilon")?)?,
        segments: as_usize(field(s, "segments")?)?,
    };
    TrainedBundle::new(mlp, tree, registry, preprocess, segment)
}

fn corrupt(msg: &str) -> PipelineError {
    PipelineError::CorruptModel(msg.to_owned())
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| corrupt(&format!("missing field {key:?}")))
}

fn as_array(v: &Value) -> Result<&Vec<Value>> {
    v.as_array().ok_or_else(|| corrupt("expected an array"))
}

fn as_usize(v: &Value) -> Result<usize> {
    v.as_u64()
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| corrupt("expected a non-negative integer"))
}

fn as_f64(v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| corrupt("expected a number"))
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| PipelineError::IoFailure {
        path: path.to_path_buf(),
        source,
    };
    let name = path.file_name().ok_or_else(|| {
        io(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "path has no file name",
        ))
    })?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .and_then(|()| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io(e));
    }
    Ok(())
}

pub fn save_bundle(bundle: &TrainedBundle, path: &Path) -> Result<()> {
    write_atomic(path, bundle_to_json(bundle).as_bytes())
}

pub fn load_bundle(path: &Path) -> Result<TrainedBundle> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::IoFailure {
        path: path.to_path_buf(),
        source,
    })?;
    bundle_from_json(&text)
}

/// CSV of feature vectors: `path,family,split,f0..f46`, shortest round-trip floats.
pub fn features_csv(rows: &[(&ManifestEntry, FeatureVector)]) -> String {
    let mut out = String::from("path,family,split");
    for i in 0..FEATURE_COUNT {
        out.push_str(&format!(",f{i}"));
    }
    out.push('\n');
    for (e, f) in rows {
        out.push_str(&format!("{},{},{}", e.path.display(), e.family, e.split));
        for v in f.values() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}
