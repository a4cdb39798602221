//! Hierarchical skill tree: loading, validation, and path queries.
//!
//! The taxonomy document is a nested `{name, children}` JSON object with a
//! single root. Node ids are assigned by depth-first preorder, so they are
//! stable across loads of the same document and independent of node names.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Preorder index of a node within its tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One node of the skill tree. A node with no children is a leaf, and leaves
/// are the only attributable endpoints.
#[derive(Debug, Clone)]
pub struct SkillNode {
    pub id: NodeId,
    pub name: String,
    pub children: Vec<NodeId>,
    parent: Option<NodeId>,
}

impl SkillNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }
}

/// A root-to-leaf path of node names.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkillChain {
    pub path: Vec<String>,
}

impl SkillChain {
    pub fn new(path: Vec<String>) -> Self {
        Self { path }
    }

    /// First element of the path (the root-level skill).
    pub fn root_name(&self) -> &str {
        &self.path[0]
    }

    /// Last element of the path (the leaf skill).
    pub fn leaf_name(&self) -> &str {
        self.path.last().expect("chain path is non-empty")
    }
}

/// Wire shape of the taxonomy document. Unknown fields are rejected.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyDoc {
    name: String,
    #[serde(default)]
    children: Vec<TaxonomyDoc>,
}

/// A validated skill tree. Immutable after load; safe to share across
/// threads by reference.
#[derive(Debug, Clone)]
pub struct SkillTree {
    root: NodeId,
    nodes: Vec<SkillNode>,
    depth: usize,
}

impl SkillTree {
    /// Parse and validate a taxonomy document from JSON text.
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Taxonomy("empty document".into()));
        }
        let doc: TaxonomyDoc = serde_json::from_str(text)
            .map_err(|e| Error::Taxonomy(format!("invalid document: {e}")))?;
        Self::from_doc(doc)
    }

    /// Load a taxonomy document from a file path.
    pub fn from_path(path: &Path) -> Result<Self> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        Self::from_json(&text)
    }

    fn from_doc(doc: TaxonomyDoc) -> Result<Self> {
        let mut nodes: Vec<SkillNode> = Vec::new();
        let mut depth = 0usize;
        // Iterative preorder walk; children are pushed reversed so the first
        // child is popped (and numbered) first.
        let mut stack: Vec<(TaxonomyDoc, Option<NodeId>, usize)> = vec![(doc, None, 0)];
        while let Some((doc, parent, d)) = stack.pop() {
            let id = NodeId(
                u32::try_from(nodes.len())
                    .map_err(|_| Error::Taxonomy("tree exceeds u32::MAX nodes".into()))?,
            );
            validate_name(&doc.name)?;
            let mut sibling_names: HashSet<&str> = HashSet::new();
            for child in &doc.children {
                if !sibling_names.insert(child.name.as_str()) {
                    return Err(Error::Taxonomy(format!(
                        "duplicate sibling name {:?} under {:?}",
                        child.name, doc.name
                    )));
                }
            }
            if doc.children.is_empty() {
                depth = depth.max(d);
            }
            nodes.push(SkillNode {
                id,
                name: doc.name,
                children: Vec::with_capacity(doc.children.len()),
                parent,
            });
            if let Some(parent) = parent {
                nodes[parent.0 as usize].children.push(id);
            }
            for child in doc.children.into_iter().rev() {
                stack.push((child, Some(id), d + 1));
            }
        }
        Ok(Self {
            root: NodeId(0),
            nodes,
            depth,
        })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    /// Maximum root-to-leaf edge count.
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&SkillNode> {
        self.nodes
            .get(id.0 as usize)
            .ok_or_else(|| Error::Taxonomy(format!("unknown node id {id}")))
    }

    pub fn name(&self, id: NodeId) -> Result<&str> {
        Ok(self.node(id)?.name.as_str())
    }

    pub fn is_leaf(&self, id: NodeId) -> Result<bool> {
        Ok(self.node(id)?.is_leaf())
    }

    /// Children of a node as `(id, name)` pairs in stored document order.
    /// This order is canonical: attribution prompts list children verbatim
    /// in this order.
    pub fn children_of(&self, id: NodeId) -> Result<Vec<(NodeId, &str)>> {
        let node = self.node(id)?;
        node.children
            .iter()
            .map(|&c| Ok((c, self.node(c)?.name.as_str())))
            .collect()
    }

    /// All leaf ids in preorder.
    pub fn leaves(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.id)
            .collect()
    }

    /// The unique root-to-leaf name path ending at `leaf_id`.
    pub fn chain_to(&self, leaf_id: NodeId) -> Result<SkillChain> {
        let node = self.node(leaf_id)?;
        if !node.is_leaf() {
            return Err(Error::Taxonomy(format!(
                "node {id} ({name:?}) is not a leaf",
                id = leaf_id,
                name = node.name
            )));
        }
        let mut path = Vec::new();
        let mut cursor = Some(leaf_id);
        while let Some(id) = cursor {
            let n = self.node(id)?;
            path.push(n.name.clone());
            cursor = n.parent;
        }
        path.reverse();
        Ok(SkillChain::new(path))
    }

    /// Resolve a name chain back to its leaf id by walking from the root.
    /// Sibling names are unique, so resolution is unambiguous.
    pub fn resolve_chain(&self, chain: &SkillChain) -> Result<NodeId> {
        let mut cursor = self.root;
        let root_name = self.name(cursor)?;
        let Some((first, rest)) = chain.path.split_first() else {
            return Err(Error::Taxonomy("empty chain".into()));
        };
        if first != root_name {
            return Err(Error::Taxonomy(format!(
                "chain root {first:?} does not match tree root {root_name:?}"
            )));
        }
        for name in rest {
            let next = self
                .node(cursor)?
                .children
                .iter()
                .find(|&&c| self.nodes[c.0 as usize].name == *name)
                .copied();
            match next {
                Some(id) => cursor = id,
                None => {
                    return Err(Error::Taxonomy(format!(
                        "chain step {name:?} is not a child of {:?}",
                        self.name(cursor)?
                    )))
                }
            }
        }
        if !self.node(cursor)?.is_leaf() {
            return Err(Error::Taxonomy(format!(
                "chain ends at internal node {:?}",
                self.name(cursor)?
            )));
        }
        Ok(cursor)
    }

    /// The leaf with the lexicographically smallest name (ties broken by id).
    /// Used as the attribution fallback target.
    pub fn first_leaf_by_name(&self) -> NodeId {
        self.leaves()
            .into_iter()
            .min_by(|&a, &b| {
                let (na, nb) = (
                    &self.nodes[a.0 as usize].name,
                    &self.nodes[b.0 as usize].name,
                );
                na.cmp(nb).then(a.cmp(&b))
            })
            .expect("a validated tree has at least one leaf")
    }
}

fn validate_name(name: &str) -> Result<()> {
    if name.trim().is_empty() {
        return Err(Error::Taxonomy("node name is empty".into()));
    }
    if name.chars().any(|c| c == '\n' || c == '\r') {
        return Err(Error::Taxonomy(format!(
            "node name {name:?} contains a line break"
        )));
    }
    Ok(())
}
