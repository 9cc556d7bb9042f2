//! Entailment forests: one tree per answer option, scored bottom-up.
//!
//! Every node carries a direct score from the prover. An internal node also
//! has a proof score, the product of its two children's final scores, and its
//! final score is the larger of the two.

mod expand;

pub use expand::{
    build_forest, evaluate_task, expand_node, parse_two_statements, prove_statement, Expansion,
    Reasoner, SessionReasoner, TaskContext, TreeConfig,
};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grounding::{GroundedMoment, GroundingError};
use crate::providers::ProviderError;
use crate::qa::{QuestionType, Violation};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("invalid task: {0:?}")]
    InvalidTask(Vec<Violation>),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("malformed completion after {attempts} attempts: {reason}")]
    MalformedCompletion { attempts: u32, reason: String },
    #[error("node {0} is at max depth and cannot be decomposed")]
    AtMaxDepth(NodeId),
    #[error("structural error at node {node}: {reason}")]
    Structural { node: NodeId, reason: String },
    #[error("forest has no roots")]
    EmptyForest,
    #[error("no ground-truth interval for task {0}")]
    MissingInterval(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementOrigin {
    Root { option_index: usize },
    Decomposed { parent: NodeId, slot: u8 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Statement {
    pub text: String,
    pub depth: u32,
    pub origin: StatementOrigin,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreCard {
    pub direct: f64,
    pub proof: Option<f64>,
    #[serde(rename = "final")]
    pub final_score: f64,
}

impl ScoreCard {
    pub fn leaf(direct: f64) -> Self {
        ScoreCard {
            direct,
            proof: None,
            final_score: direct,
        }
    }

    pub fn with_proof(direct: f64, proof: f64) -> Self {
        ScoreCard {
            direct,
            proof: Some(proof),
            final_score: direct.max(proof),
        }
    }

    /// `final == max(direct, proof)` (or `direct` without a proof), exactly.
    pub fn is_consistent(&self) -> bool {
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        in_unit(self.direct)
            && in_unit(self.final_score)
            && self.proof.is_none_or(in_unit)
            && self.final_score == self.proof.map_or(self.direct, |p| self.direct.max(p))
    }
}

pub fn proof_score(children_finals: (f64, f64)) -> f64 {
    children_finals.0 * children_finals.1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeStatus {
    #[serde(rename = "Leaf_MaxDepth")]
    LeafMaxDepth,
    #[serde(rename = "Leaf_Pruned")]
    LeafPruned,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunedChild {
    pub text: String,
    pub direct: f64,
}

/// Why a node stopped expanding before max depth. Discarded sub-statements are
/// kept here for audit; they are not children.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrunedRecord {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<PrunedChild>,
    /// Product of the discarded children's direct scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proof: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntailmentNode {
    #[serde(flatten)]
    pub statement: Statement,
    #[serde(flatten)]
    pub scores: ScoreCard,
    pub status: NodeStatus,
    pub children: Vec<NodeId>,
    #[serde(default)]
    pub pruned_record: Option<PrunedRecord>,
}

/// A prune decision as it appears in reports: the node and the two scores it
/// compared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub node: NodeId,
    pub text: String,
    pub direct: f64,
    pub proof: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntailmentForest {
    pub task_id: String,
    pub roots: Vec<NodeId>,
    pub nodes: BTreeMap<NodeId, EntailmentNode>,
    pub selected_index: Option<usize>,
    /// Calls per provider role, from the task transcript.
    #[serde(default)]
    pub call_counts: BTreeMap<String, usize>,
    /// Decomposition requests issued while expanding each root.
    #[serde(default)]
    pub decomposition_calls: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_type: Option<QuestionType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moment: Option<GroundedMoment>,
}

impl EntailmentForest {
    pub fn new(task_id: impl Into<String>) -> Self {
        EntailmentForest {
            task_id: task_id.into(),
            ..Default::default()
        }
    }

    pub fn node(&self, id: NodeId) -> &EntailmentNode {
        &self.nodes[&id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut EntailmentNode {
        self.nodes.get_mut(&id).expect("node id from this forest")
    }

    fn next_id(&self) -> NodeId {
        NodeId(self.nodes.keys().next_back().map_or(0, |k| k.0 + 1))
    }

    /// Adds a scored leaf; status starts as `Leaf_MaxDepth` until expansion
    /// decides otherwise.
    pub fn add_node(&mut self, statement: Statement, direct: f64) -> NodeId {
        let id = self.next_id();
        self.nodes.insert(
            id,
            EntailmentNode {
                statement,
                scores: ScoreCard::leaf(direct),
                status: NodeStatus::LeafMaxDepth,
                children: Vec::new(),
                pruned_record: None,
            },
        );
        id
    }

    pub fn add_root(&mut self, option_index: usize, text: impl Into<String>, direct: f64) -> NodeId {
        let id = self.add_node(
            Statement {
                text: text.into(),
                depth: 1,
                origin: StatementOrigin::Root { option_index },
            },
            direct,
        );
        self.roots.push(id);
        id
    }

    pub fn root_finals(&self) -> Vec<f64> {
        self.roots
            .iter()
            .map(|r| self.node(*r).scores.final_score)
            .collect()
    }

    pub fn correct(&self) -> Option<bool> {
        Some(self.selected_index? == self.ground_truth_index?)
    }

    pub fn prune_events(&self) -> Vec<PruneEvent> {
        self.nodes
            .iter()
            .filter_map(|(id, n)| {
                let proof = n.pruned_record.as_ref()?.proof?;
                Some(PruneEvent {
                    node: *id,
                    text: n.statement.text.clone(),
                    direct: n.scores.direct,
                    proof,
                })
            })
            .collect()
    }

    /// Checks the 0-or-2 children rule and that status agrees with it.
    pub fn check_structure(&self) -> Result<(), TreeError> {
        for (id, n) in &self.nodes {
            let bad = |reason: String| TreeError::Structural { node: *id, reason };
            match (n.children.len(), n.status) {
                (2, NodeStatus::Internal) | (0, NodeStatus::LeafMaxDepth | NodeStatus::LeafPruned) => {}
                (k, s) => return Err(bad(format!("{k} children with status {s:?}"))),
            }
            if let Some(c) = n.children.iter().find(|c| !self.nodes.contains_key(c)) {
                return Err(bad(format!("unknown child {c}")));
            }
            if n.status == NodeStatus::LeafPruned && n.pruned_record.is_none() {
                return Err(bad("pruned leaf without a record".into()));
            }
        }
        Ok(())
    }

    /// Every node's final score obeys the max rule and every internal proof is
    /// the product of its children's finals. Returns the offending nodes.
    pub fn score_violations(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|(_, n)| {
                let proof_ok = match n.status {
                    NodeStatus::Internal => {
                        let f = |i: usize| self.nodes.get(&n.children[i]).map(|c| c.scores.final_score);
                        match (f(0), f(1), n.scores.proof) {
                            (Some(a), Some(b), Some(p)) => p == proof_score((a, b)),
                            _ => false,
                        }
                    }
                    _ => n.scores.proof.is_none(),
                };
                !(proof_ok && n.scores.is_consistent())
            })
            .map(|(id, _)| *id)
            .collect()
    }
}

/// Recomputes every reachable node's proof and final score bottom-up.
/// Idempotent.
pub fn backtrace(forest: &mut EntailmentForest) -> Result<(), TreeError> {
    forest.check_structure()?;
    let mut visited = BTreeSet::new();
    for &root in &forest.roots.clone() {
        // iterative post-order: (node, children already pushed)
        let mut stack = vec![(root, false)];
        while let Some((id, ready)) = stack.pop() {
            let Some(node) = forest.nodes.get(&id) else {
                return Err(TreeError::Structural {
                    node: id,
                    reason: "unknown node".into(),
                });
            };
            if !ready {
                if !visited.insert(id) {
                    return Err(TreeError::Structural {
                        node: id,
                        reason: "node reachable twice".into(),
                    });
                }
                stack.push((id, true));
                stack.extend(node.children.iter().map(|c| (*c, false)));
                continue;
            }
            let scores = match node.children.as_slice() {
                [a, b] => ScoreCard::with_proof(
                    node.scores.direct,
                    proof_score((forest.node(*a).scores.final_score, forest.node(*b).scores.final_score)),
                ),
                _ => ScoreCard::leaf(node.scores.direct),
            };
            forest.node_mut(id).scores = scores;
        }
    }
    Ok(())
}

/// Index of the highest root final score; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> Option<usize> {
    scores
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((i, s)),
        })
        .map(|(i, _)| i)
}

pub fn select_answer(forest: &EntailmentForest) -> Result<usize, TreeError> {
    argmax_lowest(&forest.root_finals()).ok_or(TreeError::EmptyForest)
}
