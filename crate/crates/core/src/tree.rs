//! Cluster trees: the shared hierarchy type produced by every clustering
//! routine in this crate.
//!
//! A tree is a binary hierarchy over a dense universe of items `0..N`.
//! Leaves hold single items; `Flat` nodes hold an unresolved set of items
//! (produced when a routine stops refining a cluster); internal nodes cache
//! the number of items beneath them so subtree selection stays O(depth).

use std::collections::BTreeSet;
use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Dense item identifier in `[0, N)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl fmt::Debug for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for ItemId {
    fn from(v: u32) -> Self {
        ItemId(v)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("item {0} appears more than once")]
    DuplicateItem(ItemId),
    #[error("item ids are not the dense range 0..{expected}: missing {missing}")]
    NonDenseIds { expected: usize, missing: u32 },
    #[error("cached subtree size {cached} does not match {actual} items beneath")]
    SizeCacheMismatch { cached: usize, actual: usize },
    #[error("operation requires an internal node")]
    NotInternal,
    #[error("subtree selection requires more than 2 items, tree has {0}")]
    TooSmallForSelection(usize),
    #[error("no admissible subtree: unresolved flat cluster blocks the descent")]
    NoAdmissibleSubtree,
    #[error("trees cover different item universes")]
    UniverseMismatch,
    #[error("flat cluster node may not be empty")]
    EmptyFlatCluster,
    #[error("balance floor must lie in (0, 1/2], got {0}")]
    BadBalanceFloor(f64),
    #[error("need at least 2 items, got {0}")]
    TooFewItems(usize),
}

/// One node of a cluster tree.
#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Leaf(ItemId),
    /// Unresolved cluster: the set is a node of the hierarchy but its
    /// internal structure is unknown. Items are kept in ascending order.
    Flat(Vec<ItemId>),
    Internal {
        /// Number of items beneath this node (cached at construction).
        size: usize,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn leaf(item: impl Into<ItemId>) -> Node {
        Node::Leaf(item.into())
    }

    /// Builds a flat node; items are sorted ascending.
    pub fn flat(mut items: Vec<ItemId>) -> Node {
        items.sort_unstable();
        Node::Flat(items)
    }

    /// Builds an internal node with its size cache filled in.
    pub fn internal(left: Node, right: Node) -> Node {
        let size = left.size() + right.size();
        Node::Internal {
            size,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Number of items beneath this node.
    pub fn size(&self) -> usize {
        match self {
            Node::Leaf(_) => 1,
            Node::Flat(items) => items.len(),
            Node::Internal { size, .. } => *size,
        }
    }

    pub fn children(&self) -> Option<(&Node, &Node)> {
        match self {
            Node::Internal { left, right, .. } => Some((left, right)),
            _ => None,
        }
    }

    /// First item in depth-first order: the leftmost leaf, or the smallest
    /// item of a flat node.
    pub fn leftmost_item(&self) -> ItemId {
        match self {
            Node::Leaf(item) => *item,
            Node::Flat(items) => items[0],
            Node::Internal { left, .. } => left.leftmost_item(),
        }
    }

    /// Items beneath this node in depth-first order (flat nodes ascending).
    pub fn leaf_order(&self) -> Vec<ItemId> {
        let mut out = Vec::with_capacity(self.size());
        self.collect_leaf_order(&mut out);
        out
    }

    fn collect_leaf_order(&self, out: &mut Vec<ItemId>) {
        match self {
            Node::Leaf(item) => out.push(*item),
            Node::Flat(items) => out.extend_from_slice(items),
            Node::Internal { left, right, .. } => {
                left.collect_leaf_order(out);
                right.collect_leaf_order(out);
            }
        }
    }

    /// `min(|left|, |right|) / size` for an internal node.
    pub fn balance_factor(&self) -> Result<f64, TreeError> {
        match self {
            Node::Internal {
                size, left, right, ..
            } => Ok(left.size().min(right.size()) as f64 / *size as f64),
            _ => Err(TreeError::NotInternal),
        }
    }

    /// Descends towards the heavier child (ties left) and returns the first
    /// proper subtree `C` with `n/3 < |C| <= 2n/3`, where `n` is this node's
    /// size. Such a subtree always exists in a binary tree with `n > 2`.
    pub fn select_subtree(&self) -> Result<&Node, TreeError> {
        let n = self.size();
        if n <= 2 {
            return Err(TreeError::TooSmallForSelection(n));
        }
        let mut cur = self;
        loop {
            let (left, right) = cur.children().ok_or(TreeError::NoAdmissibleSubtree)?;
            let bigger = if left.size() >= right.size() { left } else { right };
            if 3 * bigger.size() <= 2 * n {
                debug_assert!(3 * bigger.size() > n);
                return Ok(bigger);
            }
            cur = bigger;
        }
    }

    /// Path form of [`Node::select_subtree`]: the sequence of child moves
    /// (false = left, true = right) from this node to the selected subtree.
    pub(crate) fn select_subtree_path(&self) -> Result<Vec<bool>, TreeError> {
        let n = self.size();
        if n <= 2 {
            return Err(TreeError::TooSmallForSelection(n));
        }
        let mut cur = self;
        let mut path = Vec::new();
        loop {
            let (left, right) = cur.children().ok_or(TreeError::NoAdmissibleSubtree)?;
            let go_right = right.size() > left.size();
            let bigger = if go_right { right } else { left };
            path.push(go_right);
            if 3 * bigger.size() <= 2 * n {
                return Ok(path);
            }
            cur = bigger;
        }
    }

    pub(crate) fn node_at(&self, path: &[bool]) -> &Node {
        let mut cur = self;
        for &go_right in path {
            let (left, right) = cur.children().expect("path descends through internal nodes");
            cur = if go_right { right } else { left };
        }
        cur
    }

    /// Replaces the subtree at `path` with a single leaf and fixes the size
    /// caches along the path. Used by insertion search when a region is known
    /// not to contain the new item and collapses to its representative.
    pub(crate) fn collapse_at(&mut self, path: &[bool], representative: ItemId) {
        let mut removed = 0usize;
        self.collapse_rec(path, representative, &mut removed);
    }

    fn collapse_rec(&mut self, path: &[bool], representative: ItemId, removed: &mut usize) {
        if path.is_empty() {
            *removed = self.size() - 1;
            *self = Node::Leaf(representative);
            return;
        }
        match self {
            Node::Internal { size, left, right } => {
                let child = if path[0] { right } else { left };
                child.collapse_rec(&path[1..], representative, removed);
                *size -= *removed;
            }
            _ => unreachable!("path descends through internal nodes"),
        }
    }

    /// Extracts and returns the subtree at `path`, consuming the tree.
    pub(crate) fn take_subtree(self, path: &[bool]) -> Node {
        let mut cur = self;
        for &go_right in path {
            match cur {
                Node::Internal { left, right, .. } => {
                    cur = if go_right { *right } else { *left };
                }
                _ => unreachable!("path descends through internal nodes"),
            }
        }
        cur
    }

    /// Replaces the subtree at `path` with an internal node whose children
    /// are the old subtree and a fresh leaf, fixing size caches on the way.
    pub(crate) fn wrap_at(&mut self, path: &[bool], item: ItemId) {
        if path.is_empty() {
            let old = std::mem::replace(self, Node::Leaf(item));
            *self = Node::internal(old, Node::Leaf(item));
            return;
        }
        match self {
            Node::Internal { size, left, right } => {
                *size += 1;
                let child = if path[0] { right } else { left };
                child.wrap_at(&path[1..], item);
            }
            _ => unreachable!("path descends through internal nodes"),
        }
    }

    /// Returns the pair of items that only this subtree's root separates:
    /// the leftmost item of each child. No proper subtree contains both.
    pub fn separated_pair(&self) -> Result<(ItemId, ItemId), TreeError> {
        let (left, right) = self.children().ok_or(TreeError::NotInternal)?;
        Ok((left.leftmost_item(), right.leftmost_item()))
    }

    fn collect_clusters(&self, out: &mut BTreeSet<Vec<ItemId>>) -> Vec<ItemId> {
        let items = match self {
            Node::Leaf(item) => vec![*item],
            Node::Flat(items) => items.clone(),
            Node::Internal { left, right, .. } => {
                let mut l = left.collect_clusters(out);
                let r = right.collect_clusters(out);
                l.extend(r);
                l.sort_unstable();
                l
            }
        };
        out.insert(items.clone());
        items
    }

    fn check_sizes(&self) -> Result<usize, TreeError> {
        match self {
            Node::Leaf(_) => Ok(1),
            Node::Flat(items) => {
                if items.is_empty() {
                    Err(TreeError::EmptyFlatCluster)
                } else {
                    Ok(items.len())
                }
            }
            Node::Internal { size, left, right } => {
                let actual = left.check_sizes()? + right.check_sizes()?;
                if actual != *size {
                    Err(TreeError::SizeCacheMismatch {
                        cached: *size,
                        actual,
                    })
                } else {
                    Ok(actual)
                }
            }
        }
    }
}

/// A set of item-sets, as extracted from a tree. Supports equality and
/// subset tests; every inner vector is sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterSet(BTreeSet<Vec<ItemId>>);

impl ClusterSet {
    /// Builds a set from explicit item-sets; each is sorted on the way in.
    pub fn from_sets(sets: impl IntoIterator<Item = Vec<ItemId>>) -> ClusterSet {
        ClusterSet(
            sets.into_iter()
                .map(|mut s| {
                    s.sort_unstable();
                    s
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Membership test; `items` may arrive in any order.
    pub fn contains(&self, items: &[ItemId]) -> bool {
        let mut sorted = items.to_vec();
        sorted.sort_unstable();
        self.0.contains(&sorted)
    }

    pub fn is_subset(&self, other: &ClusterSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Vec<ItemId>> {
        self.0.iter()
    }
}

/// A validated hierarchy over the dense item universe `0..len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTree {
    root: Node,
    n_items: usize,
}

impl ClusterTree {
    /// Validates that every item appears exactly once, ids form the dense
    /// range `0..N`, and cached sizes are consistent.
    pub fn new(root: Node) -> Result<ClusterTree, TreeError> {
        root.check_sizes()?;
        let order = root.leaf_order();
        let n = order.len();
        let mut seen = vec![false; n];
        for item in &order {
            let idx = item.0 as usize;
            if idx >= n {
                // Some id beyond the count means a smaller id is absent.
                let missing = (0..n as u32)
                    .find(|&v| order.iter().all(|it| it.0 != v))
                    .unwrap_or(item.0);
                return Err(TreeError::NonDenseIds {
                    expected: n,
                    missing,
                });
            }
            if seen[idx] {
                return Err(TreeError::DuplicateItem(*item));
            }
            seen[idx] = true;
        }
        Ok(ClusterTree { root, n_items: n })
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.n_items
    }

    pub fn is_empty(&self) -> bool {
        self.n_items == 0
    }

    /// Every node's item-set, singletons and root included.
    pub fn clusters(&self) -> ClusterSet {
        let mut out = BTreeSet::new();
        self.root.collect_clusters(&mut out);
        ClusterSet(out)
    }

    /// Items in depth-first order.
    pub fn leaf_order(&self) -> Vec<ItemId> {
        self.root.leaf_order()
    }

    /// See [`Node::select_subtree`].
    pub fn select_subtree(&self) -> Result<&Node, TreeError> {
        self.root.select_subtree()
    }
}

/// Every node item-set of `tree`, singletons and root included.
pub fn clusters_of(tree: &ClusterTree) -> ClusterSet {
    tree.clusters()
}

/// Structural equality up to child order and flat-cluster item order:
/// two trees are equal iff they induce the same set of clusters.
/// Errors if the trees cover different item universes.
pub fn tree_equal(a: &ClusterTree, b: &ClusterTree) -> Result<bool, TreeError> {
    if a.n_items != b.n_items {
        return Err(TreeError::UniverseMismatch);
    }
    Ok(a.clusters() == b.clusters())
}

/// Upper bound on the depth of a hierarchy over `n_items` items whose every
/// split keeps a `balance_floor` fraction on the lighter side:
/// `ceil(ln n / ln(1/(1 - balance_floor)))`, capped by the depth `n - 1` of
/// a fully lopsided binary tree (the cap is what makes two items report 1
/// for every floor).
pub fn max_depth_bound(n_items: usize, balance_floor: f64) -> Result<usize, TreeError> {
    if n_items < 2 {
        return Err(TreeError::TooFewItems(n_items));
    }
    if !(balance_floor > 0.0 && balance_floor <= 0.5) {
        return Err(TreeError::BadBalanceFloor(balance_floor));
    }
    let raw = (n_items as f64).ln() / (1.0 / (1.0 - balance_floor)).ln();
    // Guard against 9.000000000000002-style float drift on exact powers.
    let bound = (raw - 1e-9).ceil() as usize;
    Ok(bound.max(1).min(n_items - 1))
}

// ---------------------------------------------------------------------------
// JSON format: a leaf is a bare integer, an internal node is {"l":..,"r":..},
// a flat cluster is {"items":[..]}.
// ---------------------------------------------------------------------------

impl Serialize for Node {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            Node::Leaf(item) => serializer.serialize_u32(item.0),
            Node::Flat(items) => {
                let mut map = serializer.serialize_map(Some(1))?;
                map.serialize_entry("items", items)?;
                map.end()
            }
            Node::Internal { left, right, .. } => {
                let mut map = serializer.serialize_map(Some(2))?;
                map.serialize_entry("l", left.as_ref())?;
                map.serialize_entry("r", right.as_ref())?;
                map.end()
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NodeRepr {
    Leaf(u32),
    Internal { l: Box<NodeRepr>, r: Box<NodeRepr> },
    Flat { items: Vec<u32> },
}

impl From<NodeRepr> for Node {
    fn from(repr: NodeRepr) -> Node {
        match repr {
            NodeRepr::Leaf(v) => Node::Leaf(ItemId(v)),
            NodeRepr::Flat { items } => Node::flat(items.into_iter().map(ItemId).collect()),
            NodeRepr::Internal { l, r } => Node::internal(Node::from(*l), Node::from(*r)),
        }
    }
}

impl<'de> Deserialize<'de> for Node {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Node, D::Error> {
        Ok(Node::from(NodeRepr::deserialize(deserializer)?))
    }
}

impl Serialize for ClusterTree {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.root.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ClusterTree {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<ClusterTree, D::Error> {
        let node = Node::deserialize(deserializer)?;
        ClusterTree::new(node).map_err(D::Error::custom)
    }
}
