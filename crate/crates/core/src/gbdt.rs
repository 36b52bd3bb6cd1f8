//! First-order gradient boosting with leaf-wise tree growth, used for the
//! per-feature auxiliary learners and as a TSTR predictor.

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{argmax, AuxMatrix, FeatureInfo};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const NO_CHILD: usize = usize::MAX;
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    pub rounds: usize,
    pub num_leaves: usize,
    pub learning_rate: f64,
    pub early_stopping_rounds: usize,
    pub min_data_in_leaf: usize,
    pub validation_fraction: f64,
    pub max_depth: Option<usize>,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            rounds: 150,
            num_leaves: 31,
            learning_rate: 0.1,
            early_stopping_rounds: 10,
            min_data_in_leaf: 20,
            validation_fraction: 0.2,
            max_depth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Split {
    /// Rows with `x <= threshold` go left.
    Numeric { threshold: f64 },
    /// Rows whose category code is in the set go left; all others go right.
    Categorical { left: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: usize,
    pub split: Option<Split>,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

impl TreeNode {
    fn leaf(value: f64) -> Self {
        TreeNode {
            feature: 0,
            split: None,
            left: NO_CHILD,
            right: NO_CHILD,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }
}

/// Compact copy of a tree for batch prediction. Categorical sets become
/// bitsets in a shared word buffer.
#[derive(Default)]
struct FlatTree {
    nodes: Vec<FlatNode>,
    words: Vec<u64>,
}

#[derive(Clone, Copy)]
struct FlatNode {
    /// Feature index, or `u32::MAX` for a leaf.
    feature: u32,
    /// Left child; for categorical splits `right` follows and `words`
    /// locates the bitset.
    left: u32,
    right: u32,
    word_start: u32,
    word_len: u32,
    categorical: bool,
    /// Threshold for numeric splits, value for leaves.
    value: f64,
}

impl FlatTree {
    fn load(&mut self, tree: &Tree) {
        self.nodes.clear();
        self.words.clear();
        for n in &tree.nodes {
            let mut f = FlatNode {
                feature: u32::MAX,
                left: n.left as u32,
                right: n.right as u32,
                word_start: 0,
                word_len: 0,
                categorical: false,
                value: n.value,
            };
            match &n.split {
                None => {}
                Some(Split::Numeric { threshold }) => {
                    f.feature = n.feature as u32;
                    f.value = *threshold;
                }
                Some(Split::Categorical { left }) => {
                    f.feature = n.feature as u32;
                    f.categorical = true;
                    let len = left.last().map_or(0, |&m| m as usize / 64 + 1);
                    f.word_start = self.words.len() as u32;
                    f.word_len = len as u32;
                    self.words.resize(self.words.len() + len, 0);
                    for &code in left {
                        self.words[f.word_start as usize + code as usize / 64] |= 1 << (code % 64);
                    }
                }
            }
            self.nodes.push(f);
        }
    }

    fn predict(&self, row: &[f64]) -> f64 {
        let mut n = self.nodes[0];
        while n.feature != u32::MAX {
            let x = row[n.feature as usize];
            let goes_left = if n.categorical {
                let word = (x / 64.0) as usize;
                x >= 0.0
                    && x.fract() == 0.0
                    && word < n.word_len as usize
                    && self.words[n.word_start as usize + word] & (1 << (x as u64 % 64)) != 0
            } else {
                x <= n.value
            };
            n = self.nodes[if goes_left { n.left } else { n.right } as usize];
        }
        n.value
    }
}

/// Binary regression tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn constant(value: f64) -> Self {
        Tree {
            nodes: vec![TreeNode::leaf(value)],
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match &node.split {
                None => return node.value,
                Some(Split::Numeric { threshold }) => {
                    i = if row[node.feature] <= *threshold { node.left } else { node.right };
                }
                Some(Split::Categorical { left }) => {
                    let code = row[node.feature];
                    let goes_left = code >= 0.0
                        && code.fract() == 0.0
                        && left.binary_search(&(code as u32)).is_ok();
                    i = if goes_left { node.left } else { node.right };
                }
            }
        }
    }

    /// Stable text form, one line per node.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let line = match &n.split {
                None => format!("{i}: leaf value={}\n", n.value),
                Some(Split::Numeric { threshold }) => format!(
                    "{i}: f{} <= {} ? {} : {}\n",
                    n.feature, threshold, n.left, n.right
                ),
                Some(Split::Categorical { left }) => format!(
                    "{i}: f{} in {:?} ? {} : {}\n",
                    n.feature, left, n.left, n.right
                ),
            };
            out.push_str(&line);
        }
        out
    }
}

struct Candidate {
    gain: f64,
    feature: usize,
    split: Split,
}

struct Leaf {
    node: usize,
    depth: usize,
    rows: Vec<usize>,
    /// Per numeric feature, the leaf's rows sorted by that feature.
    sorted: Vec<Vec<usize>>,
    sum: f64,
    best: Option<Candidate>,
}

/// Column-major view of training features with their kinds.
pub struct TreeData<'a> {
    columns: Vec<Vec<f64>>,
    kinds: &'a [FeatureInfo],
    sort_orders: Vec<Vec<usize>>,
}

impl<'a> TreeData<'a> {
    /// `rows` selects the training rows of `x` (row-major, one row per sample).
    pub fn new(x: &Matrix, rows: &[usize], kinds: &'a [FeatureInfo]) -> Self {
        assert_eq!(x.cols(), kinds.len(), "feature kinds do not match matrix width");
        let columns: Vec<Vec<f64>> = (0..x.cols())
            .map(|f| rows.iter().map(|&r| x.get(r, f)).collect())
            .collect();
        let n = rows.len();
        let sort_orders = columns
            .iter()
            .zip(kinds)
            .map(|(col, kind)| match kind {
                FeatureInfo::Numeric => {
                    let mut order: Vec<usize> = (0..n).collect();
                    order.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                    order
                }
                FeatureInfo::Categorical(_) => Vec::new(),
            })
            .collect();
        TreeData {
            columns,
            kinds,
            sort_orders,
        }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub num_leaves: usize,
    pub min_data_in_leaf: usize,
    pub max_depth: Option<usize>,
}

fn best_split(data: &TreeData, leaf: &Leaf, targets: &[f64], p: &TreeParams) -> Option<Candidate> {
    let n = leaf.rows.len();
    let min = p.min_data_in_leaf.max(1);
    if n < 2 * min || p.max_depth.is_some_and(|d| leaf.depth >= d) {
        return None;
    }
    let parent = leaf.sum * leaf.sum / n as f64;
    let mut best: Option<Candidate> = None;
    let mut consider = |gain: f64, feature: usize, split: Split| {
        if gain > MIN_GAIN && best.as_ref().map_or(true, |b| gain > b.gain) {
            best = Some(Candidate {
                gain,
                feature,
                split,
            });
        }
    };
    for (f, kind) in data.kinds.iter().enumerate() {
        let col = &data.columns[f];
        match kind {
            FeatureInfo::Numeric => {
                let order = &leaf.sorted[f];
                let mut left_sum = 0.0;
                for i in 0..n - 1 {
                    let r = order[i];
                    left_sum += targets[r];
                    let nl = i + 1;
                    let (a, b) = (col[r], col[order[i + 1]]);
                    if nl < min || n - nl < min || a == b {
                        continue;
                    }
                    let right_sum = leaf.sum - left_sum;
                    let gain = left_sum * left_sum / nl as f64
                        + right_sum * right_sum / (n - nl) as f64
                        - parent;
                    let mid = a + (b - a) / 2.0;
                    let threshold = if mid < b { mid } else { a };
                    consider(gain, f, Split::Numeric { threshold });
                }
            }
            FeatureInfo::Categorical(c) => {
                let mut sums = vec![0.0; *c];
                let mut counts = vec![0usize; *c];
                for &r in &leaf.rows {
                    let code = col[r] as usize;
                    if code < *c {
                        sums[code] += targets[r];
                        counts[code] += 1;
                    }
                }
                let mut cats: Vec<usize> = (0..*c).filter(|&k| counts[k] > 0).collect();
                if cats.len() < 2 {
                    continue;
                }
                cats.sort_by(|&a, &b| {
                    (sums[a] / counts[a] as f64)
                        .total_cmp(&(sums[b] / counts[b] as f64))
                        .then(a.cmp(&b))
                });
                let mut left_sum = 0.0;
                let mut nl = 0;
                for i in 0..cats.len() - 1 {
                    left_sum += sums[cats[i]];
                    nl += counts[cats[i]];
                    if nl < min || n - nl < min {
                        continue;
                    }
                    let right_sum = leaf.sum - left_sum;
                    let gain = left_sum * left_sum / nl as f64
                        + right_sum * right_sum / (n - nl) as f64
                        - parent;
                    let mut left: Vec<u32> = cats[..=i].iter().map(|&k| k as u32).collect();
                    left.sort_unstable();
                    consider(gain, f, Split::Categorical { left });
                }
            }
        }
    }
    best
}

fn goes_left(split: &Split, value: f64) -> bool {
    match split {
        Split::Numeric { threshold } => value <= *threshold,
        Split::Categorical { left } => left.binary_search(&(value as u32)).is_ok(),
    }
}

/// Grows one tree leaf-wise on `targets` (indexed by local row), with
/// leaf values equal to the mean target of their rows.
pub fn grow_tree(data: &TreeData, targets: &[f64], params: &TreeParams) -> Tree {
    let n = data.rows();
    let mut tree = Tree { nodes: Vec::new() };
    if n == 0 {
        return Tree::constant(0.0);
    }
    let rows: Vec<usize> = (0..n).collect();
    let sum: f64 = targets.iter().sum();
    tree.nodes.push(TreeNode::leaf(sum / n as f64));
    let mut root = Leaf {
        node: 0,
        depth: 0,
        rows,
        sorted: data.sort_orders.clone(),
        sum,
        best: None,
    };
    root.best = best_split(data, &root, targets, params);
    let mut leaves = vec![root];
    let mut side = vec![false; n];

    while tree.leaf_count() < params.num_leaves.max(1) {
        // Highest-gain leaf; earliest wins ties.
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.as_ref().map(|b| (i, b.gain)))
            .fold(None, |acc: Option<(usize, f64)>, cur| match acc {
                Some(a) if a.1 >= cur.1 => Some(a),
                _ => Some(cur),
            });
        let Some((li, _)) = pick else { break };
        let leaf = leaves.swap_remove(li);
        let cand = leaf.best.expect("picked leaf has a split");
        let col = &data.columns[cand.feature];
        for &r in &leaf.rows {
            side[r] = goes_left(&cand.split, col[r]);
        }
        let (lrows, rrows): (Vec<usize>, Vec<usize>) = leaf.rows.iter().partition(|&&r| side[r]);
        let mut lsorted = Vec::with_capacity(leaf.sorted.len());
        let mut rsorted = Vec::with_capacity(leaf.sorted.len());
        for s in &leaf.sorted {
            let (a, b): (Vec<usize>, Vec<usize>) = s.iter().partition(|&&r| side[r]);
            lsorted.push(a);
            rsorted.push(b);
        }
        let lsum: f64 = lrows.iter().map(|&r| targets[r]).sum();
        let rsum: f64 = rrows.iter().map(|&r| targets[r]).sum();
        let li_node = tree.nodes.len();
        tree.nodes.push(TreeNode::leaf(lsum / lrows.len() as f64));
        tree.nodes.push(TreeNode::leaf(rsum / rrows.len() as f64));
        let parent = &mut tree.nodes[leaf.node];
        parent.feature = cand.feature;
        parent.split = Some(cand.split);
        parent.left = li_node;
        parent.right = li_node + 1;
        for (node, rows, sorted, sum) in [
            (li_node, lrows, lsorted, lsum),
            (li_node + 1, rrows, rsorted, rsum),
        ] {
            let mut child = Leaf {
                node,
                depth: leaf.depth + 1,
                rows,
                sorted,
                sum,
                best: None,
            };
            child.best = best_split(data, &child, targets, params);
            leaves.push(child);
        }
    }
    tree
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Value(f64),
    Probabilities(Vec<f64>),
}

/// Boosted ensemble predicting one column from all the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxLearner {
    pub target: usize,
    /// Source column indices in the order the ensemble reads them.
    pub inputs: Vec<usize>,
    pub input_kinds: Vec<FeatureInfo>,
    pub objective: Objective,
    pub num_classes: usize,
    pub learning_rate: f64,
    pub base_scores: Vec<f64>,
    /// `rounds[r][k]` is the tree for class `k` (a single tree for regression).
    pub rounds: Vec<Vec<Tree>>,
    pub best_round: usize,
    pub train_loss: Vec<f64>,
    pub valid_loss: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationConfig {
    pub epsilon: f64,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn none() -> Self {
        PerturbationConfig {
            epsilon: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        Ok(())
    }
}

/// Number of perturbed labels: `round(eps * n)`, halves rounding up.
pub fn perturbed_count(epsilon: f64, n: usize) -> usize {
    ((epsilon * n as f64) + 0.5).floor() as usize
}

/// Perturbs exactly `round(eps * N)` distinct labels. Numeric labels become
/// `x + αx` with `α ~ U[-1, 1]`; categorical labels are redrawn uniformly
/// from all `categories` (possibly the same one). Returns the touched indices.
pub fn perturb_labels<R: Rng + ?Sized>(
    labels: &mut [f64],
    kind: FeatureInfo,
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::Config(format!("epsilon {epsilon} outside [0, 1]")));
    }
    let count = perturbed_count(epsilon, labels.len());
    let mut picked = index::sample(rng, labels.len(), count).into_vec();
    picked.sort_unstable();
    for &i in &picked {
        labels[i] = match kind {
            FeatureInfo::Numeric => {
                let alpha: f64 = rng.gen_range(-1.0..=1.0);
                labels[i] + alpha * labels[i]
            }
            FeatureInfo::Categorical(c) => rng.gen_range(0..c) as f64,
        };
    }
    Ok(picked)
}

fn softmax(scores: &[f64], out: &mut [f64]) {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &x) in out.iter_mut().zip(scores) {
        *o = (x - m).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

fn loss(objective: Objective, scores: &[f64], k: usize, targets: &[f64], rows: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    let mut p = vec![0.0; k];
    for &r in rows {
        match objective {
            Objective::Mse => total += (scores[r] - targets[r]).powi(2),
            Objective::CrossEntropy => {
                softmax(&scores[r * k..(r + 1) * k], &mut p);
                total -= p[targets[r] as usize].max(1e-300).ln();
            }
        }
    }
    total / rows.len() as f64
}

impl AuxLearner {
    /// Trains the learner for column `target` of `matrix`, perturbing the
    /// target labels first when `perturbation.epsilon > 0`.
    pub fn train(
        matrix: &AuxMatrix,
        target: usize,
        params: &GbdtParams,
        perturbation: PerturbationConfig,
    ) -> Result<Self> {
        perturbation.validate()?;
        let n = matrix.rows();
        if n < 20 {
            return Err(Error::InvalidArgument(format!(
                "auxiliary learner needs at least 20 rows, got {n}"
            )));
        }
        if target >= matrix.cols() {
            return Err(Error::InvalidArgument(format!("target column {target} out of range")));
        }
        let kind = matrix.features[target];
        let mut labels: Vec<f64> = (0..n).map(|r| matrix.data.get(r, target)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(
            perturbation.seed ^ (target as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
        );
        if perturbation.epsilon > 0.0 {
            perturb_labels(&mut labels, kind, perturbation.epsilon, &mut rng)?;
        }
        let inputs: Vec<usize> = (0..matrix.cols()).filter(|&c| c != target).collect();
        let input_kinds: Vec<FeatureInfo> = inputs.iter().map(|&c| matrix.features[c]).collect();
        let x = Matrix::from_fn(n, inputs.len(), |r, c| matrix.data.get(r, inputs[c]));
        let (objective, k) = match kind {
            FeatureInfo::Numeric => (Objective::Mse, 1),
            FeatureInfo::Categorical(c) => {
                let mut seen = vec![false; c];
                for &l in &labels {
                    seen[l as usize] = true;
                }
                if seen.iter().filter(|&&s| s).count() < 2 {
                    return Err(Error::InvalidArgument(format!(
                        "classification target column {target} has a single class"
                    )));
                }
                (Objective::CrossEntropy, c)
            }
        };

        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_valid = ((n as f64) * params.validation_fraction).round() as usize;
        let n_valid = n_valid.min(n - 1);
        let (valid, train) = order.split_at(n_valid);
        let mut train = train.to_vec();
        train.sort_unstable();
        let mut valid = valid.to_vec();
        valid.sort_unstable();

        let base_scores = match objective {
            Objective::Mse => vec![train.iter().map(|&r| labels[r]).sum::<f64>() / train.len() as f64],
            Objective::CrossEntropy => {
                let mut counts = vec![0.0; k];
                for &r in &train {
                    counts[labels[r] as usize] += 1.0;
                }
                counts
                    .iter()
                    .map(|c| ((c + 1.0) / (train.len() as f64 + k as f64)).ln())
                    .collect()
            }
        };

        let mut learner = AuxLearner {
            target,
            inputs,
            input_kinds,
            objective,
            num_classes: k,
            learning_rate: params.learning_rate,
            base_scores,
            rounds: Vec::new(),
            best_round: 0,
            train_loss: Vec::new(),
            valid_loss: Vec::new(),
        };
        learner.boost(&x, &labels, &train, &valid, params);
        Ok(learner)
    }

    fn boost(&mut self, x: &Matrix, labels: &[f64], train: &[usize], valid: &[usize], params: &GbdtParams) {
        let k = self.num_classes;
        let n = x.rows();
        let mut scores = vec![0.0; n * k];
        for r in 0..n {
            scores[r * k..(r + 1) * k].copy_from_slice(&self.base_scores);
        }
        let data = TreeData::new(x, train, &self.input_kinds);
        let tparams = TreeParams {
            num_leaves: params.num_leaves,
            min_data_in_leaf: params.min_data_in_leaf,
            max_depth: params.max_depth,
        };
        let mut best_valid = loss(self.objective, &scores, k, labels, valid);
        let mut best_round = 0;
        let mut since_best = 0;
        self.train_loss.push(loss(self.objective, &scores, k, labels, train));
        self.valid_loss.push(best_valid);
        let mut residual = vec![0.0; train.len()];
        let mut p = vec![0.0; k];

        for round in 1..=params.rounds {
            // Negative gradients for every class, evaluated before any update.
            let mut targets: Vec<Vec<f64>> = vec![vec![0.0; train.len()]; k];
            for (i, &r) in train.iter().enumerate() {
                match self.objective {
                    Objective::Mse => targets[0][i] = labels[r] - scores[r],
                    Objective::CrossEntropy => {
                        softmax(&scores[r * k..(r + 1) * k], &mut p);
                        for c in 0..k {
                            let y = if labels[r] as usize == c { 1.0 } else { 0.0 };
                            targets[c][i] = y - p[c];
                        }
                    }
                }
            }
            let mut trees = Vec::with_capacity(k);
            for class_targets in targets.iter().take(k) {
                residual.copy_from_slice(class_targets);
                trees.push(grow_tree(&data, &residual, &tparams));
            }
            for r in 0..n {
                let row = x.row(r);
                for (c, t) in trees.iter().enumerate() {
                    scores[r * k + c] += self.learning_rate * t.predict(row);
                }
            }
            self.rounds.push(trees);
            self.train_loss.push(loss(self.objective, &scores, k, labels, train));
            let v = loss(self.objective, &scores, k, labels, valid);
            self.valid_loss.push(v);
            if v < best_valid {
                best_valid = v;
                best_round = round;
                since_best = 0;
            } else {
                since_best += 1;
                if !valid.is_empty() && since_best >= params.early_stopping_rounds {
                    break;
                }
            }
        }
        if valid.is_empty() {
            best_round = self.rounds.len();
        }
        self.rounds.truncate(best_round);
        self.best_round = best_round;
    }

    /// Raw class scores (or the regression value) for an input row.
    pub fn scores(&self, inputs: &[f64]) -> Vec<f64> {
        let mut s = self.base_scores.clone();
        for trees in &self.rounds {
            for (c, t) in trees.iter().enumerate() {
                s[c] += self.learning_rate * t.predict(inputs);
            }
        }
        s
    }

    pub fn input_width(&self) -> usize {
        self.inputs.len()
    }

    /// Prediction from a row laid out in `self.inputs` order.
    pub fn predict(&self, inputs: &[f64]) -> Result<Prediction> {
        if inputs.len() != self.inputs.len() {
            return Err(Error::Shape(format!(
                "learner expects {} features, got {}",
                self.inputs.len(),
                inputs.len()
            )));
        }
        let s = self.scores(inputs);
        Ok(match self.objective {
            Objective::Mse => Prediction::Value(s[0]),
            Objective::CrossEntropy => {
                let mut p = vec![0.0; s.len()];
                softmax(&s, &mut p);
                Prediction::Probabilities(p)
            }
        })
    }

    /// Prediction from a full-width row; the target cell is ignored.
    pub fn predict_full_row(&self, row: &[f64]) -> Result<Prediction> {
        let inputs: Vec<f64> = self.inputs.iter().map(|&c| row[c]).collect();
        self.predict(&inputs)
    }

    /// Predictions for every row of a full-width matrix: one value column
    /// for regression, class probabilities for classification. Tree-major
    /// order keeps each tree in cache; results match `predict_full_row`.
    pub fn predict_batch(&self, full: &Matrix) -> Result<Matrix> {
        if let Some(&c) = self.inputs.iter().max() {
            if c >= full.cols() {
                return Err(Error::Shape(format!("row width {} lacks input column {c}", full.cols())));
            }
        }
        let n = full.rows();
        let w = self.inputs.len();
        let mut x = Vec::with_capacity(n * w);
        for r in 0..n {
            let row = full.row(r);
            x.extend(self.inputs.iter().map(|&c| row[c]));
        }
        let k = self.base_scores.len();
        let mut s = Matrix::from_fn(n, k, |_, c| self.base_scores[c]);
        let mut flat = FlatTree::default();
        for trees in &self.rounds {
            for (c, t) in trees.iter().enumerate() {
                flat.load(t);
                for r in 0..n {
                    let v = s.get(r, c) + self.learning_rate * flat.predict(&x[r * w..(r + 1) * w]);
                    s.set(r, c, v);
                }
            }
        }
        if self.objective == Objective::CrossEntropy {
            let mut p = vec![0.0; k];
            for r in 0..n {
                softmax(s.row(r), &mut p);
                s.row_mut(r).copy_from_slice(&p);
            }
        }
        Ok(s)
    }

    /// Point prediction: the value for regression, the argmax class index
    /// (lowest on ties) for classification.
    pub fn predict_point(&self, row: &[f64]) -> Result<f64> {
        Ok(match self.predict_full_row(row)? {
            Prediction::Value(v) => v,
            Prediction::Probabilities(p) => argmax(&p) as f64,
        })
    }

    pub fn dump(&self) -> String {
        let mut out = format!(
            "target={} objective={:?} classes={} lr={} base={:?} rounds={}\n",
            self.target,
            self.objective,
            self.num_classes,
            self.learning_rate,
            self.base_scores,
            self.rounds.len()
        );
        for (r, trees) in self.rounds.iter().enumerate() {
            for (c, t) in trees.iter().enumerate() {
                out.push_str(&format!("round {r} class {c}\n"));
                out.push_str(&t.dump());
            }
        }
        out
    }

    pub fn max_leaves(&self) -> usize {
        self.rounds
            .iter()
            .flatten()
            .map(Tree::leaf_count)
            .max()
            .unwrap_or(1)
    }

    /// Inputs of row `r` of a full-width matrix, in `self.inputs` order.
    pub fn row_inputs(&self, full: &Matrix, r: usize) -> Vec<f64> {
        self.inputs.iter().map(|&c| full.get(r, c)).collect()
    }
}

/// Plain gradient-boosted predictor (TSTR) on a feature matrix and a label vector.
pub fn fit_single(
    x: &Matrix,
    kinds: &[FeatureInfo],
    labels: &[f64],
    label_kind: FeatureInfo,
    params: &GbdtParams,
    seed: u64,
) -> Result<AuxLearner> {
    let mut data = Matrix::zeros(x.rows(), x.cols() + 1);
    for r in 0..x.rows() {
        data.row_mut(r)[..x.cols()].copy_from_slice(x.row(r));
        data.set(r, x.cols(), labels[r]);
    }
    let mut features = kinds.to_vec();
    features.push(label_kind);
    let m = AuxMatrix { data, features };
    AuxLearner::train(
        &m,
        x.cols(),
        params,
        PerturbationConfig {
            epsilon: 0.0,
            seed,
        },
    )
}

/// One depth-limited regression tree on `labels` (leaf value = mean label).
pub fn fit_regression_tree(
    x: &Matrix,
    kinds: &[FeatureInfo],
    labels: &[f64],
    max_depth: usize,
    min_data_in_leaf: usize,
) -> Tree {
    let rows: Vec<usize> = (0..x.rows()).collect();
    let data = TreeData::new(x, &rows, kinds);
    grow_tree(
        &data,
        labels,
        &TreeParams {
            num_leaves: usize::MAX,
            min_data_in_leaf,
            max_depth: Some(max_depth),
        },
    )
}

impl TreeData<'_> {
    #[cfg(test)]
    fn local_row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}
