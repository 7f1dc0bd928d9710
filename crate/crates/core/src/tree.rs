//! Boosted-tree training over vertically split features plus the
//! grid-refinement attack that steals victim split thresholds through a
//! leaf-id prediction oracle.
//!
//! Training is plain second-order boosting on squared error. Each round the
//! label holder (the first party) computes per-instance derivative pairs,
//! every party proposes candidate splits over its own features, and the
//! label holder keeps the gain-maximising proposal. An internal node records
//! the party whose feature it tests; only that party knows the feature id
//! and threshold, while everyone sees node ids, tree shape, and leaf
//! weights. [`BoostedEnsemble::tree_info`] produces exactly that redacted
//! view for a chosen attacker.
//!
//! The attack drives a [`PredictionOracle`] that returns the leaf id each
//! submitted record reaches. For one victim node it pins every ancestor
//! decision with values that route the whole batch to that node, sweeps one
//! feature over a uniform grid, and finds the index where returned leaves
//! flip from the node's left subtree to its right subtree. The bracketing
//! subinterval shrinks by the grid factor every round, so
//! `ceil(log_{m-1}(range/epsilon))` rounds pin the threshold to `epsilon`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::protocols::{DesignMatrix, PartyId};

/// Split proposals per feature are capped at this many quantile-spaced
/// midpoints.
const MAX_SPLIT_CANDIDATES: usize = 32;

/// Relative slack on the refinement stop test so that widths which hit
/// epsilon exactly in real arithmetic also stop in floating point.
const WIDTH_STOP_SLACK: f64 = 1e-9;

/// Relative nudge applied to a grid's lower endpoint when the path demands a
/// strictly-greater value there (an exact attacker threshold on a right
/// edge). Thresholds closer than this fraction of the probed interval to the
/// pinned endpoint are not recoverable.
const GRID_STRICT_NUDGE: f64 = 1e-9;

/// First and second derivative of the training loss at one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientPair {
    pub g: f64,
    pub h: f64,
}

impl GradientPair {
    /// Builds a derivative pair, rejecting non-finite values and `h <= 0`
    /// (squared error always yields `h = 1`).
    pub fn new(g: f64, h: f64) -> Result<Self> {
        if !g.is_finite() || !h.is_finite() {
            return Err(Error::arg("derivative pair must be finite"));
        }
        if h <= 0.0 {
            return Err(Error::arg(
                "second derivative must be positive for a convex loss",
            ));
        }
        Ok(GradientPair { g, h })
    }
}

/// Payload of one tree node.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    Internal {
        feature_id: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// One node of a decision tree, owned by the party whose feature it tests
/// (leaves belong to the label holder).
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub node_id: usize,
    pub owner: PartyId,
    pub kind: NodeKind,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// A single regression tree. Node ids equal vector indices and the root is
/// node 0.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<TreeNode>,
}

impl Tree {
    /// Validates and wraps a node list: ids must equal indices, every
    /// internal node needs two in-range children, each node except the root
    /// has exactly one parent, all nodes are reachable from node 0, and all
    /// stored numbers are finite.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::TreeConfig("a tree needs at least one node".into()));
        }
        let mut referenced = vec![false; nodes.len()];
        for (idx, node) in nodes.iter().enumerate() {
            if node.node_id != idx {
                return Err(Error::TreeConfig(format!(
                    "node at index {idx} carries id {}",
                    node.node_id
                )));
            }
            if node.owner.is_arbiter() {
                return Err(Error::TreeConfig(
                    "the arbiter holds keys, not features; it cannot own tree nodes".into(),
                ));
            }
            match node.kind {
                NodeKind::Internal {
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !threshold.is_finite() {
                        return Err(Error::TreeConfig(format!(
                            "node {idx} has a non-finite threshold"
                        )));
                    }
                    for child in [left, right] {
                        if child >= nodes.len() || child == idx {
                            return Err(Error::TreeConfig(format!(
                                "node {idx} references invalid child {child}"
                            )));
                        }
                        if referenced[child] {
                            return Err(Error::TreeConfig(format!(
                                "node {child} has more than one parent"
                            )));
                        }
                        referenced[child] = true;
                    }
                    if left == right {
                        return Err(Error::TreeConfig(format!(
                            "node {idx} uses the same child twice"
                        )));
                    }
                }
                NodeKind::Leaf { weight } => {
                    if !weight.is_finite() {
                        return Err(Error::TreeConfig(format!(
                            "leaf {idx} has a non-finite weight"
                        )));
                    }
                }
            }
        }
        if referenced[0] {
            return Err(Error::TreeConfig("the root must not be a child".into()));
        }
        let mut seen = vec![false; nodes.len()];
        let mut queue = VecDeque::from([0usize]);
        while let Some(id) = queue.pop_front() {
            if seen[id] {
                continue;
            }
            seen[id] = true;
            if let NodeKind::Internal { left, right, .. } = nodes[id].kind {
                queue.push_back(left);
                queue.push_back(right);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::TreeConfig(
                "tree contains nodes unreachable from the root".into(),
            ));
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    /// Routes one record down the tree and returns the leaf node id.
    pub fn predict_leaf(&self, x: ArrayView1<'_, f64>) -> Result<usize> {
        let mut cur = 0usize;
        loop {
            match &self.nodes[cur].kind {
                NodeKind::Leaf { .. } => return Ok(cur),
                NodeKind::Internal {
                    feature_id,
                    threshold,
                    left,
                    right,
                } => {
                    let val = *x.get(*feature_id).ok_or_else(|| {
                        Error::dim(format!(
                            "query has {} features but the tree tests feature {feature_id}",
                            x.len()
                        ))
                    })?;
                    cur = if val <= *threshold { *left } else { *right };
                }
            }
        }
    }

    fn leaf_weight(&self, leaf_id: usize) -> f64 {
        match self.nodes[leaf_id].kind {
            NodeKind::Leaf { weight } => weight,
            NodeKind::Internal { .. } => 0.0,
        }
    }
}

/// One step along a root-to-leaf path: the internal node visited and whether
/// the path takes the left (`value <= threshold`) edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub node_id: usize,
    pub goes_left: bool,
}

/// A root-to-leaf path. A single-leaf tree yields one path with no steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreePath {
    pub steps: Vec<PathStep>,
    pub leaf: usize,
}

/// Lists every root-to-leaf path, left edges first.
pub fn enumerate_paths(tree: &Tree) -> Vec<TreePath> {
    fn walk(tree: &Tree, id: usize, prefix: &mut Vec<PathStep>, out: &mut Vec<TreePath>) {
        match tree.nodes[id].kind {
            NodeKind::Leaf { .. } => out.push(TreePath {
                steps: prefix.clone(),
                leaf: id,
            }),
            NodeKind::Internal { left, right, .. } => {
                prefix.push(PathStep {
                    node_id: id,
                    goes_left: true,
                });
                walk(tree, left, prefix, out);
                prefix.pop();
                prefix.push(PathStep {
                    node_id: id,
                    goes_left: false,
                });
                walk(tree, right, prefix, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(tree, 0, &mut Vec::new(), &mut out);
    out
}

/// A trained boosting ensemble with global feature ids and per-feature
/// owners. Predictions sum leaf weights over all trees (base score 0).
#[derive(Debug, Clone)]
pub struct BoostedEnsemble {
    trees: Vec<Tree>,
    feature_owners: Vec<PartyId>,
    feature_names: Vec<String>,
}

impl BoostedEnsemble {
    /// Assembles an ensemble from already-validated trees, checking that
    /// every tested feature id exists and that name/owner lists agree.
    pub fn from_parts(
        trees: Vec<Tree>,
        feature_owners: Vec<PartyId>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::TreeConfig("an ensemble needs at least one tree".into()));
        }
        if feature_owners.is_empty() {
            return Err(Error::TreeConfig("an ensemble needs at least one feature".into()));
        }
        if feature_owners.len() != feature_names.len() {
            return Err(Error::TreeConfig(format!(
                "{} feature owners but {} feature names",
                feature_owners.len(),
                feature_names.len()
            )));
        }
        if feature_owners.iter().any(PartyId::is_arbiter) {
            return Err(Error::TreeConfig(
                "the arbiter holds keys, not features; it cannot own columns".into(),
            ));
        }
        for tree in &trees {
            for node in tree.nodes() {
                if let NodeKind::Internal { feature_id, .. } = node.kind {
                    if feature_id >= feature_owners.len() {
                        return Err(Error::TreeConfig(format!(
                            "node {} tests feature {feature_id} but only {} features exist",
                            node.node_id,
                            feature_owners.len()
                        )));
                    }
                }
            }
        }
        Ok(BoostedEnsemble {
            trees,
            feature_owners,
            feature_names,
        })
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn feature_count(&self) -> usize {
        self.feature_owners.len()
    }

    pub fn feature_owners(&self) -> &[PartyId] {
        &self.feature_owners
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    fn check_query(&self, x: ArrayView1<'_, f64>) -> Result<()> {
        if x.len() != self.feature_count() {
            return Err(Error::dim(format!(
                "query has {} features, ensemble expects {}",
                x.len(),
                self.feature_count()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("query values must be finite"));
        }
        Ok(())
    }

    /// Regression score for one record: the sum of reached leaf weights.
    pub fn predict(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        self.check_query(x)?;
        let mut score = 0.0;
        for tree in &self.trees {
            score += tree.leaf_weight(tree.predict_leaf(x)?);
        }
        Ok(score)
    }

    /// Leaf id reached in each tree for one record.
    pub fn predict_leaves(&self, x: ArrayView1<'_, f64>) -> Result<Vec<usize>> {
        self.check_query(x)?;
        self.trees.iter().map(|t| t.predict_leaf(x)).collect()
    }

    /// Number of internal nodes owned by parties other than `attacker`.
    pub fn victim_internal_nodes(&self, attacker: &PartyId) -> usize {
        self.trees
            .iter()
            .flat_map(|t| t.nodes())
            .filter(|n| !n.is_leaf() && n.owner != *attacker)
            .count()
    }

    /// The attacker's legitimate view of the ensemble: full structure and
    /// leaf weights, but feature ids and thresholds only on nodes the
    /// attacker owns. `reveal_feature_ids` additionally discloses victim
    /// feature ids (the attack variant where node features are public);
    /// victim thresholds stay hidden either way.
    pub fn tree_info(&self, attacker: &PartyId, reveal_feature_ids: bool) -> TreeInfo {
        let attacker_features = self
            .feature_owners
            .iter()
            .enumerate()
            .filter(|(_, owner)| *owner == attacker)
            .map(|(f, _)| f)
            .collect();
        let trees = self
            .trees
            .iter()
            .map(|tree| {
                tree.nodes()
                    .iter()
                    .map(|node| {
                        let mine = node.owner == *attacker;
                        match node.kind {
                            NodeKind::Internal {
                                feature_id,
                                threshold,
                                left,
                                right,
                            } => NodeInfo {
                                node_id: node.node_id,
                                is_attacker_node: mine,
                                dividing_point_known: mine,
                                feature_id: (mine || reveal_feature_ids).then_some(feature_id),
                                threshold: mine.then_some(threshold),
                                left: Some(left),
                                right: Some(right),
                                weight: None,
                            },
                            NodeKind::Leaf { weight } => NodeInfo {
                                node_id: node.node_id,
                                is_attacker_node: mine,
                                dividing_point_known: true,
                                feature_id: None,
                                threshold: None,
                                left: None,
                                right: None,
                                weight: Some(weight),
                            },
                        }
                    })
                    .collect()
            })
            .collect();
        TreeInfo {
            trees,
            feature_count: self.feature_count(),
            attacker_features,
        }
    }
}

/// One node as seen by the attacker.
#[derive(Debug, Clone)]
pub struct NodeInfo {
    pub node_id: usize,
    pub is_attacker_node: bool,
    pub dividing_point_known: bool,
    pub feature_id: Option<usize>,
    pub threshold: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub weight: Option<f64>,
}

impl NodeInfo {
    pub fn is_internal(&self) -> bool {
        self.left.is_some()
    }
}

/// The attacker's view of a whole ensemble, updated in place as thresholds
/// are recovered.
#[derive(Debug, Clone)]
pub struct TreeInfo {
    trees: Vec<Vec<NodeInfo>>,
    feature_count: usize,
    attacker_features: BTreeSet<usize>,
}

impl TreeInfo {
    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn nodes(&self, tree: usize) -> &[NodeInfo] {
        &self.trees[tree]
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn attacker_features(&self) -> &BTreeSet<usize> {
        &self.attacker_features
    }

    /// Internal nodes whose threshold the attack must recover.
    pub fn victim_internal_count(&self) -> usize {
        self.trees
            .iter()
            .flatten()
            .filter(|n| n.is_internal() && !n.is_attacker_node)
            .count()
    }

    fn node_mut(&mut self, tree: usize, id: usize) -> &mut NodeInfo {
        &mut self.trees[tree][id]
    }
}

/// Boosting hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct BoostParams {
    pub tree_count: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    /// A node splits only if the best gain strictly exceeds this value.
    pub gain_threshold: f64,
}

impl BoostParams {
    pub fn new(
        tree_count: usize,
        max_depth: usize,
        learning_rate: f64,
        lambda: f64,
        gain_threshold: f64,
    ) -> Result<Self> {
        let params = BoostParams {
            tree_count,
            max_depth,
            learning_rate,
            lambda,
            gain_threshold,
        };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        if self.tree_count == 0 {
            return Err(Error::TreeConfig("tree count must be at least 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::TreeConfig("tree depth must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::TreeConfig(
                "learning rate must be positive and finite".into(),
            ));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::TreeConfig(
                "leaf regularization must be non-negative and finite".into(),
            ));
        }
        if self.gain_threshold < 0.0 || !self.gain_threshold.is_finite() {
            return Err(Error::TreeConfig(
                "gain threshold must be non-negative and finite".into(),
            ));
        }
        Ok(())
    }
}

/// Trains a boosting ensemble on a vertical feature split. `parties[0]`
/// holds the labels, computes derivative pairs, and owns every leaf; each
/// internal node is owned by the party whose feature it tests. Global
/// feature ids run over the parties' columns in order.
pub fn secureboost_train(
    parties: &[DesignMatrix],
    y: &Array1<f64>,
    params: &BoostParams,
) -> Result<BoostedEnsemble> {
    params.validate()?;
    if parties.len() < 2 {
        return Err(Error::arg("boosted training needs at least two parties"));
    }
    let mut names_seen = BTreeSet::new();
    for party in parties {
        if !names_seen.insert(party.party().name().to_string()) {
            return Err(Error::arg(format!(
                "duplicate party id {}",
                party.party().name()
            )));
        }
    }
    let rows = parties[0].rows();
    if parties.iter().any(|p| p.rows() != rows) {
        return Err(Error::dim("all parties must hold the same samples"));
    }
    if y.len() != rows {
        return Err(Error::dim(format!(
            "{} labels for {rows} samples",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("labels must be finite"));
    }

    let feature_count: usize = parties.iter().map(DesignMatrix::cols).sum();
    let mut x = Array2::zeros((rows, feature_count));
    let mut owners = Vec::with_capacity(feature_count);
    let mut names = Vec::with_capacity(feature_count);
    let mut offset = 0;
    for party in parties {
        for c in 0..party.cols() {
            x.column_mut(offset + c).assign(&party.values().column(c));
            owners.push(party.party().clone());
            names.push(party.feature_names()[c].clone());
        }
        offset += party.cols();
    }
    let label_party = parties[0].party().clone();

    let mut predictions: Array1<f64> = Array1::zeros(rows);
    let mut trees = Vec::with_capacity(params.tree_count);
    for _ in 0..params.tree_count {
        let pairs = (0..rows)
            .map(|i| GradientPair::new(predictions[i] - y[i], 1.0))
            .collect::<Result<Vec<_>>>()?;
        let tree = grow_tree(&x, &pairs, params, &owners, &label_party)?;
        for i in 0..rows {
            predictions[i] += tree.leaf_weight(tree.predict_leaf(x.row(i))?);
        }
        trees.push(tree);
    }
    BoostedEnsemble::from_parts(trees, owners, names)
}

fn grow_tree(
    x: &Array2<f64>,
    pairs: &[GradientPair],
    params: &BoostParams,
    owners: &[PartyId],
    label_party: &PartyId,
) -> Result<Tree> {
    let mut nodes = Vec::new();
    let instances: Vec<usize> = (0..x.nrows()).collect();
    build_node(&mut nodes, x, pairs, params, owners, label_party, &instances, 0)?;
    Tree::from_nodes(nodes)
}

#[allow(clippy::too_many_arguments)]
fn build_node(
    nodes: &mut Vec<TreeNode>,
    x: &Array2<f64>,
    pairs: &[GradientPair],
    params: &BoostParams,
    owners: &[PartyId],
    label_party: &PartyId,
    instances: &[usize],
    depth: usize,
) -> Result<usize> {
    if instances.is_empty() {
        return Err(Error::TreeConfig(
            "cannot grow a node with no instances".into(),
        ));
    }
    let g_sum: f64 = instances.iter().map(|&i| pairs[i].g).sum();
    let h_sum: f64 = instances.iter().map(|&i| pairs[i].h).sum();
    let id = nodes.len();
    nodes.push(TreeNode {
        node_id: id,
        owner: label_party.clone(),
        kind: NodeKind::Leaf { weight: 0.0 },
    });

    let mut best: Option<(f64, usize, f64)> = None;
    if depth < params.max_depth && instances.len() >= 2 {
        let parent_score = g_sum * g_sum / (h_sum + params.lambda);
        for feature in 0..owners.len() {
            let mut values: Vec<f64> = instances.iter().map(|&i| x[[i, feature]]).collect();
            values.sort_by(|a, b| a.partial_cmp(b).expect("design matrices are finite"));
            values.dedup();
            for threshold in split_candidates(&values) {
                let mut gl = 0.0;
                let mut hl = 0.0;
                let mut nl = 0usize;
                for &i in instances {
                    if x[[i, feature]] <= threshold {
                        gl += pairs[i].g;
                        hl += pairs[i].h;
                        nl += 1;
                    }
                }
                if nl == 0 || nl == instances.len() {
                    continue;
                }
                let gr = g_sum - gl;
                let hr = h_sum - hl;
                let gain = 0.5
                    * (gl * gl / (hl + params.lambda) + gr * gr / (hr + params.lambda)
                        - parent_score);
                if best.map_or(true, |(bg, _, _)| gain > bg) {
                    best = Some((gain, feature, threshold));
                }
            }
        }
    }

    match best.filter(|(gain, _, _)| *gain > params.gain_threshold) {
        Some((_, feature, threshold)) => {
            let (left_set, right_set): (Vec<usize>, Vec<usize>) = instances
                .iter()
                .partition(|&&i| x[[i, feature]] <= threshold);
            let left = build_node(
                nodes,
                x,
                pairs,
                params,
                owners,
                label_party,
                &left_set,
                depth + 1,
            )?;
            let right = build_node(
                nodes,
                x,
                pairs,
                params,
                owners,
                label_party,
                &right_set,
                depth + 1,
            )?;
            nodes[id] = TreeNode {
                node_id: id,
                owner: owners[feature].clone(),
                kind: NodeKind::Internal {
                    feature_id: feature,
                    threshold,
                    left,
                    right,
                },
            };
        }
        None => {
            nodes[id].kind = NodeKind::Leaf {
                weight: -g_sum / (h_sum + params.lambda) * params.learning_rate,
            };
        }
    }
    Ok(id)
}

/// Midpoints between adjacent distinct values, thinned to at most
/// [`MAX_SPLIT_CANDIDATES`] rank-quantile picks.
fn split_candidates(sorted_distinct: &[f64]) -> Vec<f64> {
    if sorted_distinct.len() < 2 {
        return Vec::new();
    }
    let mids: Vec<f64> = sorted_distinct
        .windows(2)
        .map(|w| w[0] + 0.5 * (w[1] - w[0]))
        .collect();
    if mids.len() <= MAX_SPLIT_CANDIDATES {
        return mids;
    }
    let last = mids.len() - 1;
    let mut picked: Vec<f64> = (0..MAX_SPLIT_CANDIDATES)
        .map(|i| mids[i * last / (MAX_SPLIT_CANDIDATES - 1)])
        .collect();
    picked.dedup();
    picked
}

/// Search settings for the threshold theft: target precision, grid size per
/// refinement round, and per-feature query bounds.
#[derive(Debug, Clone)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub grid_points: usize,
    pub bounds: Vec<(f64, f64)>,
}

impl AttackConfig {
    pub fn new(epsilon: f64, grid_points: usize, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if epsilon <= 0.0 || !epsilon.is_finite() {
            return Err(Error::TreeConfig(
                "precision threshold must be positive and finite".into(),
            ));
        }
        if grid_points < 3 {
            return Err(Error::TreeConfig(
                "grid needs at least 3 points so each round shrinks the interval".into(),
            ));
        }
        if bounds.is_empty() {
            return Err(Error::TreeConfig("per-feature bounds are required".into()));
        }
        for (f, (lb, ub)) in bounds.iter().enumerate() {
            if !lb.is_finite() || !ub.is_finite() || ub <= lb {
                return Err(Error::TreeConfig(format!(
                    "feature {f}: bounds must be finite with ub > lb"
                )));
            }
            if epsilon >= ub - lb {
                return Err(Error::TreeConfig(format!(
                    "feature {f}: precision {epsilon} is not below the range {}",
                    ub - lb
                )));
            }
        }
        Ok(AttackConfig {
            epsilon,
            grid_points,
            bounds,
        })
    }

    /// Same bounds for every feature.
    pub fn uniform(
        epsilon: f64,
        grid_points: usize,
        lb: f64,
        ub: f64,
        feature_count: usize,
    ) -> Result<Self> {
        AttackConfig::new(epsilon, grid_points, vec![(lb, ub); feature_count])
    }
}

/// Inference interface the attacker is allowed to use: submit a batch of
/// records against one tree, get back the leaf id each record reaches.
/// Counts batches and records so tests can audit the query budget.
#[derive(Debug)]
pub struct PredictionOracle<'a> {
    ensemble: &'a BoostedEnsemble,
    batches: usize,
    records: usize,
}

impl<'a> PredictionOracle<'a> {
    pub fn new(ensemble: &'a BoostedEnsemble) -> Self {
        PredictionOracle {
            ensemble,
            batches: 0,
            records: 0,
        }
    }

    pub fn feature_count(&self) -> usize {
        self.ensemble.feature_count()
    }

    pub fn tree_count(&self) -> usize {
        self.ensemble.trees().len()
    }

    /// Batches submitted so far (one grid round = one batch).
    pub fn batches(&self) -> usize {
        self.batches
    }

    /// Individual records submitted so far.
    pub fn records(&self) -> usize {
        self.records
    }

    pub fn query(&mut self, tree: usize, queries: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if tree >= self.tree_count() {
            return Err(Error::arg(format!(
                "tree index {tree} out of range ({} trees)",
                self.tree_count()
            )));
        }
        if queries.ncols() != self.feature_count() {
            return Err(Error::dim(format!(
                "queries have {} features, ensemble expects {}",
                queries.ncols(),
                self.feature_count()
            )));
        }
        if queries.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("query values must be finite"));
        }
        self.batches += 1;
        self.records += queries.nrows();
        queries
            .rows()
            .into_iter()
            .map(|row| self.ensemble.trees()[tree].predict_leaf(row))
            .collect()
    }
}

/// One recovered victim split.
#[derive(Debug, Clone)]
pub struct RecoveredSplit {
    pub feature_id: usize,
    /// Midpoint of the final bracketing interval.
    pub threshold: f64,
    /// Final bracketing interval, width at most epsilon.
    pub interval: (f64, f64),
    /// Refinement rounds (grid batches) spent on this node.
    pub rounds: usize,
    /// Failed feature probes before the jump was found (discovery mode).
    pub discovery_probes: usize,
}

/// Everything the theft run produced, keyed by `(tree index, node id)`.
#[derive(Debug, Clone)]
pub struct TheftOutcome {
    pub recovered: BTreeMap<(usize, usize), RecoveredSplit>,
    pub victim_nodes: usize,
    /// Grid batches spent refining intervals. A successful discovery probe
    /// doubles as the first refinement round, so with uniform full-range
    /// bounds this equals victim nodes times the per-node round count.
    pub refinement_batches: usize,
    /// Extra batches spent probing features that produced no jump.
    pub discovery_batches: usize,
    pub records_submitted: usize,
}

/// Which side of the probed node a returned leaf sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
    Outside,
}

/// Allowed values for one feature along a path. `lo_strict` marks a lower
/// endpoint that must be exceeded (exact attacker threshold on a right
/// edge); upper endpoints are always inclusive.
#[derive(Debug, Clone, Copy)]
struct FeatureInterval {
    lo: f64,
    hi: f64,
    lo_strict: bool,
}

/// Recovers the threshold of every victim internal node through leaf-id
/// queries, updating `info` as nodes are solved. Nodes are processed
/// ancestors first, so each probe can pin already-known decisions on the
/// path and route the whole batch to the node under attack.
pub fn steal_thresholds(
    oracle: &mut PredictionOracle<'_>,
    info: &mut TreeInfo,
    config: &AttackConfig,
) -> Result<TheftOutcome> {
    if config.bounds.len() != info.feature_count() {
        return Err(Error::TreeConfig(format!(
            "{} feature bounds for {} features",
            config.bounds.len(),
            info.feature_count()
        )));
    }
    if oracle.feature_count() != info.feature_count()
        || oracle.tree_count() != info.tree_count()
    {
        return Err(Error::TreeConfig(
            "oracle and tree view disagree on model shape".into(),
        ));
    }
    let m = config.grid_points;
    let records_before = oracle.records();
    let mut recovered: BTreeMap<(usize, usize), RecoveredSplit> = BTreeMap::new();
    let mut refinement_batches = 0usize;
    let mut discovery_batches = 0usize;

    for tree_idx in 0..info.tree_count() {
        let parents = parent_map(info.nodes(tree_idx));
        for node_id in breadth_first(info.nodes(tree_idx)) {
            let node = &info.nodes(tree_idx)[node_id];
            let (Some(left), Some(right)) = (node.left, node.right) else {
                continue;
            };
            if node.is_attacker_node {
                continue;
            }
            let known_feature = node.feature_id;
            let left_leaves = leaves_under(info.nodes(tree_idx), left);
            let right_leaves = leaves_under(info.nodes(tree_idx), right);
            let pins = path_pins(
                info.nodes(tree_idx),
                &parents,
                tree_idx,
                node_id,
                &recovered,
                config,
            )?;
            let base = base_record(&pins, config);

            let mut rounds = 0usize;
            let mut discovery_probes = 0usize;
            let (feature, mut lo, mut hi, mut lo_strict) = match known_feature {
                Some(f) => {
                    let pin = pin_of(&pins, f, config);
                    (f, pin.lo, pin.hi, pin.lo_strict)
                }
                None => {
                    // The feature is secret too: probe every non-attacker
                    // feature until one produces a left-to-right flip.
                    let candidates: Vec<usize> = (0..config.bounds.len())
                        .filter(|f| !info.attacker_features().contains(f))
                        .collect();
                    if candidates.is_empty() {
                        return Err(Error::TreeConfig(
                            "victim node present but the attacker owns every feature".into(),
                        ));
                    }
                    let mut found = None;
                    for &f in &candidates {
                        let pin = pin_of(&pins, f, config);
                        let (grid, leaves) = run_grid(
                            oracle, tree_idx, &base, f, pin.lo, pin.hi, pin.lo_strict, m,
                        )?;
                        let classes = classify(&leaves, &left_leaves, &right_leaves);
                        let has_left = classes.contains(&Side::Left);
                        let has_right = classes.contains(&Side::Right);
                        if has_left && has_right {
                            let (blo, bhi) = bracket(&grid, &classes, node_id, f)?;
                            found = Some((f, blo, bhi));
                            rounds = 1;
                            break;
                        }
                        discovery_probes += 1;
                        discovery_batches += 1;
                    }
                    match found {
                        Some((f, blo, bhi)) => (f, blo, bhi, false),
                        None => {
                            return Err(Error::NoJumpFound {
                                node: node_id,
                                feature: *candidates.last().expect("candidates checked non-empty"),
                            })
                        }
                    }
                }
            };

            let stop = config.epsilon * (1.0 + WIDTH_STOP_SLACK);
            while hi - lo > stop {
                let (grid, leaves) =
                    run_grid(oracle, tree_idx, &base, feature, lo, hi, lo_strict, m)?;
                let classes = classify(&leaves, &left_leaves, &right_leaves);
                let (blo, bhi) = bracket(&grid, &classes, node_id, feature)?;
                lo = blo;
                hi = bhi;
                lo_strict = false;
                rounds += 1;
            }
            refinement_batches += rounds;

            let threshold = lo + 0.5 * (hi - lo);
            let entry = info.node_mut(tree_idx, node_id);
            entry.dividing_point_known = true;
            entry.threshold = Some(threshold);
            entry.feature_id = Some(feature);
            recovered.insert(
                (tree_idx, node_id),
                RecoveredSplit {
                    feature_id: feature,
                    threshold,
                    interval: (lo, hi),
                    rounds,
                    discovery_probes,
                },
            );
        }
    }

    Ok(TheftOutcome {
        victim_nodes: recovered.len(),
        recovered,
        refinement_batches,
        discovery_batches,
        records_submitted: oracle.records() - records_before,
    })
}

/// Child-to-parent edges with the direction taken from the parent.
fn parent_map(nodes: &[NodeInfo]) -> BTreeMap<usize, (usize, bool)> {
    let mut parents = BTreeMap::new();
    for node in nodes {
        if let (Some(l), Some(r)) = (node.left, node.right) {
            parents.insert(l, (node.node_id, true));
            parents.insert(r, (node.node_id, false));
        }
    }
    parents
}

/// Node ids in breadth-first order from the root, so ancestors always come
/// before descendants.
fn breadth_first(nodes: &[NodeInfo]) -> Vec<usize> {
    let mut order = Vec::with_capacity(nodes.len());
    let mut queue = VecDeque::from([0usize]);
    while let Some(id) = queue.pop_front() {
        order.push(id);
        if let (Some(l), Some(r)) = (nodes[id].left, nodes[id].right) {
            queue.push_back(l);
            queue.push_back(r);
        }
    }
    order
}

/// Leaf ids in the subtree rooted at `start`.
fn leaves_under(nodes: &[NodeInfo], start: usize) -> BTreeSet<usize> {
    let mut leaves = BTreeSet::new();
    let mut stack = vec![start];
    while let Some(id) = stack.pop() {
        match (nodes[id].left, nodes[id].right) {
            (Some(l), Some(r)) => {
                stack.push(l);
                stack.push(r);
            }
            _ => {
                leaves.insert(id);
            }
        }
    }
    leaves
}

/// Per-feature intervals that route a record from the root to `node_id`.
/// Attacker ancestors pin exactly; solved victim ancestors pin through their
/// recovered bracketing interval, whose endpoints are guaranteed routing
/// values (`lo <= threshold < hi`).
fn path_pins(
    nodes: &[NodeInfo],
    parents: &BTreeMap<usize, (usize, bool)>,
    tree_idx: usize,
    node_id: usize,
    recovered: &BTreeMap<(usize, usize), RecoveredSplit>,
    config: &AttackConfig,
) -> Result<BTreeMap<usize, FeatureInterval>> {
    let mut pins: BTreeMap<usize, FeatureInterval> = BTreeMap::new();
    let mut cur = node_id;
    while let Some(&(parent, went_left)) = parents.get(&cur) {
        let pn = &nodes[parent];
        let (feature, plo, phi, exact) = if pn.is_attacker_node {
            let f = pn
                .feature_id
                .ok_or_else(|| Error::TreeConfig(format!("attacker node {parent} lacks a feature id")))?;
            let th = pn
                .threshold
                .ok_or_else(|| Error::TreeConfig(format!("attacker node {parent} lacks a threshold")))?;
            (f, th, th, true)
        } else {
            let split = recovered.get(&(tree_idx, parent)).ok_or_else(|| {
                Error::TreeConfig(format!(
                    "node {node_id} probed before its ancestor {parent} was solved"
                ))
            })?;
            (split.feature_id, split.interval.0, split.interval.1, false)
        };
        let (lb, ub) = config.bounds[feature];
        let entry = pins.entry(feature).or_insert(FeatureInterval {
            lo: lb,
            hi: ub,
            lo_strict: false,
        });
        if went_left {
            entry.hi = entry.hi.min(plo);
        } else if phi > entry.lo {
            entry.lo = phi;
            entry.lo_strict = exact;
        } else if phi == entry.lo && exact {
            entry.lo_strict = true;
        }
        cur = parent;
    }
    for (feature, pin) in &pins {
        if pin.lo > pin.hi || (pin.lo == pin.hi && pin.lo_strict) {
            return Err(Error::TreeConfig(format!(
                "path to node {node_id} pins feature {feature} to an empty interval"
            )));
        }
    }
    Ok(pins)
}

fn pin_of(
    pins: &BTreeMap<usize, FeatureInterval>,
    feature: usize,
    config: &AttackConfig,
) -> FeatureInterval {
    pins.get(&feature).copied().unwrap_or(FeatureInterval {
        lo: config.bounds[feature].0,
        hi: config.bounds[feature].1,
        lo_strict: false,
    })
}

/// A full record that satisfies every pinned interval; unpinned features sit
/// at the middle of their declared bounds.
fn base_record(pins: &BTreeMap<usize, FeatureInterval>, config: &AttackConfig) -> Vec<f64> {
    (0..config.bounds.len())
        .map(|f| match pins.get(&f) {
            Some(pin) => pin.lo + 0.5 * (pin.hi - pin.lo),
            None => {
                let (lb, ub) = config.bounds[f];
                lb + 0.5 * (ub - lb)
            }
        })
        .collect()
}

/// Submits one uniform grid over `[lo, hi]` for `feature` (other features
/// taken from `base`) and returns the grid values with the reached leaves.
#[allow(clippy::too_many_arguments)]
fn run_grid(
    oracle: &mut PredictionOracle<'_>,
    tree_idx: usize,
    base: &[f64],
    feature: usize,
    lo: f64,
    hi: f64,
    lo_strict: bool,
    m: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let lo_eff = if lo_strict {
        lo + (hi - lo) * GRID_STRICT_NUDGE
    } else {
        lo
    };
    let step = (hi - lo_eff) / (m - 1) as f64;
    let grid: Vec<f64> = (0..m)
        .map(|i| if i == m - 1 { hi } else { lo_eff + step * i as f64 })
        .collect();
    let mut batch = Array2::zeros((m, base.len()));
    for (i, &value) in grid.iter().enumerate() {
        for (j, &b) in base.iter().enumerate() {
            batch[[i, j]] = b;
        }
        batch[[i, feature]] = value;
    }
    let leaves = oracle.query(tree_idx, batch.view())?;
    Ok((grid, leaves))
}

fn classify(leaves: &[usize], left: &BTreeSet<usize>, right: &BTreeSet<usize>) -> Vec<Side> {
    leaves
        .iter()
        .map(|leaf| {
            if left.contains(leaf) {
                Side::Left
            } else if right.contains(leaf) {
                Side::Right
            } else {
                Side::Outside
            }
        })
        .collect()
}

/// Bracketing subinterval around the left-to-right flip. Grid classes are
/// monotone (Left then Right) when the probed feature gates the node, so the
/// flip sits before the first Right. Boundary rules: a flip at index 0 keeps
/// the first subinterval, an all-Left grid keeps the last one, and a grid
/// that never reaches the node at all is a failed probe.
fn bracket(
    grid: &[f64],
    classes: &[Side],
    node_id: usize,
    feature: usize,
) -> Result<(f64, f64)> {
    let m = grid.len();
    if let Some(j) = classes.iter().position(|c| *c == Side::Right) {
        if j == 0 {
            return Ok((grid[0], grid[1]));
        }
        return Ok((grid[j - 1], grid[j]));
    }
    match classes.iter().rposition(|c| *c == Side::Left) {
        Some(l) if l < m - 1 => Ok((grid[l], grid[l + 1])),
        Some(_) => Ok((grid[m - 2], grid[m - 1])),
        None => Err(Error::NoJumpFound {
            node: node_id,
            feature,
        }),
    }
}

/// Refinement rounds needed to pin a threshold in `[lb, ub]` down to
/// `epsilon` with an `m`-point grid: `ceil(log_{m-1}((ub-lb)/epsilon))`.
/// Ratios within 1e-9 of an exact integer power snap down instead of paying
/// a spurious extra round for floating-point drift.
pub fn predict_query_count(lb: f64, ub: f64, epsilon: f64, grid_points: usize) -> Result<usize> {
    if !lb.is_finite() || !ub.is_finite() || ub <= lb {
        return Err(Error::TreeConfig(
            "query bounds must be finite with ub > lb".into(),
        ));
    }
    if epsilon <= 0.0 || !epsilon.is_finite() {
        return Err(Error::TreeConfig(
            "precision threshold must be positive and finite".into(),
        ));
    }
    if grid_points < 3 {
        return Err(Error::TreeConfig(
            "grid needs at least 3 points so each round shrinks the interval".into(),
        ));
    }
    let ratio = (ub - lb) / epsilon;
    if ratio <= 1.0 {
        return Ok(0);
    }
    let raw = ratio.ln() / ((grid_points - 1) as f64).ln();
    let snapped = raw.round();
    let rounds = if (raw - snapped).abs() <= 1e-9 {
        snapped
    } else {
        raw.ceil()
    };
    Ok(rounds.max(0.0) as usize)
}

/// Total refinement batches for an ensemble: victim nodes times rounds per
/// node.
pub fn total_queries(victim_nodes: usize, queries_per_node: usize) -> usize {
    victim_nodes.saturating_mul(queries_per_node)
}
