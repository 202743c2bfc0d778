//! The rollout search tree: dense-id nodes, frontier bookkeeping, and
//! root-to-leaf trajectory extraction.
//!
//! Tree mutation is single-writer by construction — strategies own their
//! tree and serialize all `expand` calls; concurrent readers only ever see
//! extracted snapshots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{validate_monotonic, StepRecord, Task, Trajectory};

pub type NodeId = u32;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is not a frontier leaf")]
    NotAFrontierLeaf(NodeId),
    #[error("expansion requires at least one candidate")]
    NoCandidates,
    #[error("frontier pruning must keep a subset of the current frontier (node {0})")]
    NotInFrontier(NodeId),
}

/// A node in the search tree. The root (id 0) carries no step; every other
/// node holds exactly one action step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub node_id: NodeId,
    pub parent_id: Option<NodeId>,
    /// `None` only for the root.
    pub step: Option<StepRecord>,
    pub children: Vec<NodeId>,
    /// Which divided-search subtree this node belongs to, when the run used
    /// more than one. Constant along any root-to-leaf path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtree_tag: Option<u32>,
    /// Derived seed that produced this node's step; 0 for the root.
    pub seed: u64,
}

impl SearchNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn depth_hint(&self) -> u32 {
        self.step.as_ref().map_or(0, |s| s.step_number)
    }
}

/// The rollout tree for one task. Node ids are densely assigned in creation
/// order, so a run with a fixed seed and a fixed expansion order reproduces
/// ids exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchTree {
    pub task: Task,
    pub nodes: Vec<SearchNode>,
    pub frontier: Vec<NodeId>,
    /// Ledger total snapshot stamped by the run; copied into extracted
    /// trajectories.
    pub calls_snapshot: u64,
}

impl SearchTree {
    pub fn new(task: Task) -> Self {
        let root = SearchNode {
            node_id: 0,
            parent_id: None,
            step: None,
            children: Vec::new(),
            subtree_tag: None,
            seed: 0,
        };
        Self {
            task,
            nodes: vec![root],
            frontier: vec![0],
            calls_snapshot: 0,
        }
    }

    pub fn node(&self, id: NodeId) -> Result<&SearchNode, TreeError> {
        self.nodes.get(id as usize).ok_or(TreeError::UnknownNode(id))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a tree always has its root
    }

    /// Append one child per candidate under `node_id`, which must currently
    /// be a frontier leaf. The expanded node leaves the frontier; the new
    /// leaves join it in candidate order, which is also the order of the
    /// returned ids.
    pub fn expand(
        &mut self,
        node_id: NodeId,
        candidates: Vec<(StepRecord, u64)>,
    ) -> Result<Vec<NodeId>, TreeError> {
        if candidates.is_empty() {
            return Err(TreeError::NoCandidates);
        }
        let not_frontier_err = if (node_id as usize) < self.nodes.len() {
            TreeError::NotAFrontierLeaf(node_id)
        } else {
            TreeError::UnknownNode(node_id)
        };
        let position = self
            .frontier
            .iter()
            .position(|&id| id == node_id)
            .ok_or(not_frontier_err)?;
        let subtree_tag = self.nodes[node_id as usize].subtree_tag;

        self.frontier.remove(position);
        let mut new_ids = Vec::with_capacity(candidates.len());
        for (step, seed) in candidates {
            let id = self.nodes.len() as NodeId;
            self.nodes.push(SearchNode {
                node_id: id,
                parent_id: Some(node_id),
                step: Some(step),
                children: Vec::new(),
                subtree_tag,
                seed,
            });
            self.nodes[node_id as usize].children.push(id);
            new_ids.push(id);
        }
        self.frontier.extend(&new_ids);
        Ok(new_ids)
    }

    /// Restrict the frontier to `keep`, preserving `keep`'s order. Dropped
    /// nodes stay in the tree as dead leaves.
    pub fn prune_frontier(&mut self, keep: &[NodeId]) -> Result<(), TreeError> {
        for &id in keep {
            if !self.frontier.contains(&id) {
                return Err(TreeError::NotInFrontier(id));
            }
        }
        self.frontier = keep.to_vec();
        Ok(())
    }

    /// Root-to-node step sequence for any existing node.
    pub fn path_steps(&self, node_id: NodeId) -> Result<Vec<StepRecord>, TreeError> {
        let mut rev = Vec::new();
        let mut cursor = Some(self.node(node_id)?);
        while let Some(node) = cursor {
            if let Some(step) = &node.step {
                rev.push(step.clone());
            }
            cursor = match node.parent_id {
                Some(pid) => Some(self.node(pid)?),
                None => None,
            };
        }
        rev.reverse();
        debug_assert!(validate_monotonic(&rev).is_ok());
        Ok(rev)
    }

    /// Extract the trajectory ending at `leaf_id`. Termination is judged by
    /// the terminal marker alone; callers that know the step cap finalize
    /// cap-bound termination themselves.
    pub fn extract_trajectory(&self, leaf_id: NodeId) -> Result<Trajectory, TreeError> {
        let steps = self.path_steps(leaf_id)?;
        let final_answer = steps
            .last()
            .and_then(|s| s.final_answer())
            .map(str::to_owned);
        Ok(Trajectory {
            task_id: self.task.id.clone(),
            terminated: final_answer.is_some(),
            final_answer,
            steps,
            calls_used: self.calls_snapshot,
        })
    }

    /// Full-traversal structural check: single root, every non-root parent
    /// exists and lists the node as a child, no cycles, and every frontier
    /// id is a leaf.
    pub fn check_invariants(&self) -> Result<(), String> {
        for node in &self.nodes {
            match node.parent_id {
                None => {
                    if node.node_id != 0 {
                        return Err(format!("non-root node {} has no parent", node.node_id));
                    }
                }
                Some(pid) => {
                    let parent = self
                        .nodes
                        .get(pid as usize)
                        .ok_or_else(|| format!("node {} has missing parent {pid}", node.node_id))?;
                    if !parent.children.contains(&node.node_id) {
                        return Err(format!(
                            "parent {pid} does not list node {} as a child",
                            node.node_id
                        ));
                    }
                    if pid >= node.node_id {
                        return Err(format!(
                            "node {} created before its parent {pid}; cycle impossible only with increasing ids",
                            node.node_id
                        ));
                    }
                }
            }
            if let Some(tag) = node.subtree_tag {
                if let Some(pid) = node.parent_id {
                    let parent_tag = self.nodes[pid as usize].subtree_tag;
                    if pid != 0 && parent_tag != Some(tag) {
                        return Err(format!("subtree tag changes along path at node {}", node.node_id));
                    }
                }
            }
        }
        for &id in &self.frontier {
            let node = self
                .nodes
                .get(id as usize)
                .ok_or_else(|| format!("frontier id {id} missing"))?;
            if !node.is_leaf() {
                return Err(format!("frontier id {id} is not a leaf"));
            }
        }
        Ok(())
    }

    pub fn leaves(&self) -> impl Iterator<Item = &SearchNode> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task() -> Task {
        Task::new("t", "q", 1, None).unwrap()
    }

    fn step(n: u32) -> StepRecord {
        StepRecord::new(n, format!("m{n}"), format!("a{n}"), "")
    }

    #[test]
    fn first_expansion_grows_frontier() {
        let mut tree = SearchTree::new(task());
        let ids = tree
            .expand(0, vec![(step(1), 1), (step(1), 2), (step(1), 3)])
            .unwrap();
        assert_eq!(ids, vec![1, 2, 3]);
        assert_eq!(tree.frontier, vec![1, 2, 3]);
        assert_eq!(tree.len(), 4);
        tree.check_invariants().unwrap();
    }

    #[test]
    fn expanding_a_non_leaf_is_rejected() {
        let mut tree = SearchTree::new(task());
        tree.expand(0, vec![(step(1), 1)]).unwrap();
        let err = tree.expand(0, vec![(step(2), 2)]).unwrap_err();
        assert!(matches!(err, TreeError::NotAFrontierLeaf(0)));
        let err = tree.expand(99, vec![(step(2), 2)]).unwrap_err();
        assert!(matches!(err, TreeError::UnknownNode(99)));
    }

    #[test]
    fn two_level_expansion_node_arithmetic() {
        // Depth 1: two leaves. Depth 2: N=4 at each -> 8 new leaves, 11 nodes.
        let mut tree = SearchTree::new(task());
        let level1 = tree.expand(0, vec![(step(1), 1), (step(1), 2)]).unwrap();
        for &leaf in &level1 {
            let candidates = (0..4).map(|i| (step(2), 10 + u64::from(leaf) * 4 + i)).collect();
            tree.expand(leaf, candidates).unwrap();
        }
        assert_eq!(tree.frontier.len(), 8);
        assert_eq!(tree.len(), 11);
        tree.check_invariants().unwrap();
    }

    #[test]
    fn root_only_trajectory_is_empty_and_unterminated() {
        let tree = SearchTree::new(task());
        let t = tree.extract_trajectory(0).unwrap();
        assert!(t.steps.is_empty());
        assert!(!t.terminated);
        assert!(t.final_answer.is_none());
    }

    #[test]
    fn trajectory_reads_back_path_in_depth_order() {
        let mut tree = SearchTree::new(task());
        let l1 = tree.expand(0, vec![(step(1), 1)]).unwrap()[0];
        let l2 = tree.expand(l1, vec![(step(2), 2)]).unwrap()[0];
        let l3 = tree.expand(l2, vec![(step(3), 3)]).unwrap()[0];
        let t = tree.extract_trajectory(l3).unwrap();
        let numbers: Vec<u32> = t.steps.iter().map(|s| s.step_number).collect();
        assert_eq!(numbers, vec![1, 2, 3]);
        assert!(tree.extract_trajectory(99).is_err());
    }

    #[test]
    fn prune_keeps_only_named_leaves() {
        let mut tree = SearchTree::new(task());
        let ids = tree
            .expand(0, vec![(step(1), 1), (step(1), 2), (step(1), 3)])
            .unwrap();
        tree.prune_frontier(&[ids[2], ids[0]]).unwrap();
        assert_eq!(tree.frontier, vec![ids[2], ids[0]]);
        assert!(tree.prune_frontier(&[ids[1], 99]).is_err());
        tree.check_invariants().unwrap();
    }
}
