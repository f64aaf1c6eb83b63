use serde::{Deserialize, Serialize};

use super::GbdtError;

pub const MODEL_FORMAT: &str = "matsim-gbdt";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: u32,
        threshold: f32,
        /// Direction for missing values.
        default_left: bool,
        left: u32,
        right: u32,
    },
}

/// A regression tree stored as a flat node array rooted at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub(crate) nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Self {
        Self { nodes: vec![Node::Leaf { value }] }
    }

    /// One split: `x[feature] <= threshold` goes left.
    pub fn stump(feature: u32, threshold: f32, left: f64, right: f64) -> Self {
        Self {
            nodes: vec![
                Node::Split { feature, threshold, default_left: true, left: 1, right: 2 },
                Node::Leaf { value: left },
                Node::Leaf { value: right },
            ],
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn eval(&self, x: &[f32]) -> f64 {
        let mut idx = 0usize;
        loop {
            match self.nodes[idx] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, default_left, left, right } => {
                    let v = x[feature as usize];
                    let go_left = if v.is_nan() { default_left } else { v <= threshold };
                    idx = if go_left { left } else { right } as usize;
                }
            }
        }
    }

    fn to_nested(&self, idx: usize) -> NestedNode {
        match self.nodes[idx] {
            Node::Leaf { value } => NestedNode::Leaf { value },
            Node::Split { feature, threshold, default_left, left, right } => NestedNode::Split {
                feature,
                threshold: threshold.is_finite().then_some(threshold),
                default_left,
                left: Box::new(self.to_nested(left as usize)),
                right: Box::new(self.to_nested(right as usize)),
            },
        }
    }

    fn from_nested(root: &NestedNode) -> Self {
        fn push(node: &NestedNode, nodes: &mut Vec<Node>) -> u32 {
            let idx = nodes.len();
            match node {
                NestedNode::Leaf { value } => nodes.push(Node::Leaf { value: *value }),
                NestedNode::Split { feature, threshold, default_left, left, right } => {
                    nodes.push(Node::Leaf { value: 0.0 });
                    let l = push(left, nodes);
                    let r = push(right, nodes);
                    nodes[idx] = Node::Split {
                        feature: *feature,
                        threshold: threshold.unwrap_or(f32::INFINITY),
                        default_left: *default_left,
                        left: l,
                        right: r,
                    };
                }
            }
            idx as u32
        }
        let mut nodes = Vec::new();
        push(root, &mut nodes);
        Self { nodes }
    }
}

/// An additive ensemble: `base_score + learning_rate * sum(tree outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub n_features: usize,
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
    /// Training target range; predictions are clamped into it when present.
    pub target_range: Option<(f64, f64)>,
}

impl Model {
    pub fn from_parts(n_features: usize, base_score: f64, learning_rate: f64, trees: Vec<Tree>) -> Self {
        Self { n_features, base_score, learning_rate, trees, target_range: None }
    }

    pub fn predict(&self, x: &[f32]) -> Result<f64, GbdtError> {
        if x.len() != self.n_features {
            return Err(GbdtError::WidthMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f32]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.eval(x)).sum();
        let y = self.base_score + self.learning_rate * sum;
        match self.target_range {
            Some((lo, hi)) => y.clamp(lo, hi),
            None => y,
        }
    }

    pub fn predict_batch<'a, I>(&self, rows: I) -> Result<Vec<f64>, GbdtError>
    where
        I: IntoIterator<Item = &'a [f32]>,
    {
        rows.into_iter().map(|x| self.predict(x)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&ModelDoc::from(self)).expect("model serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, GbdtError> {
        let doc: ModelDoc = serde_json::from_str(s).map_err(|e| GbdtError::Format(e.to_string()))?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
            return Err(GbdtError::Format(format!("unsupported model document {} v{}", doc.format, doc.version)));
        }
        Ok(Self {
            n_features: doc.n_features,
            base_score: doc.base_score,
            learning_rate: doc.learning_rate,
            trees: doc.trees.iter().map(Tree::from_nested).collect(),
            target_range: doc.target_range,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum NestedNode {
    Split {
        feature: u32,
        /// `null` stands for +∞: every present value goes left.
        threshold: Option<f32>,
        default_left: bool,
        left: Box<NestedNode>,
        right: Box<NestedNode>,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    n_features: usize,
    base_score: f64,
    learning_rate: f64,
    target_range: Option<(f64, f64)>,
    trees: Vec<NestedNode>,
}

impl From<&Model> for ModelDoc {
    fn from(m: &Model) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            n_features: m.n_features,
            base_score: m.base_score,
            learning_rate: m.learning_rate,
            target_range: m.target_range,
            trees: m.trees.iter().map(|t| t.to_nested(0)).collect(),
        }
    }
}
