//! Syntax trees: the external serialized form, a built-in mini-language
//! front-end, and the two-step binarization the tree encoder requires.

pub mod minilang;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Node of an abstract syntax tree as produced by a parser.
///
/// Leaves (no children) may carry a lexeme in `token`; internal nodes never
/// do.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AstNode {
    pub node_type: String,
    pub token: Option<String>,
    pub children: Vec<AstNode>,
}

impl AstNode {
    pub fn internal(node_type: impl Into<String>, children: Vec<AstNode>) -> Self {
        AstNode { node_type: node_type.into(), token: None, children }
    }

    pub fn leaf(node_type: impl Into<String>, token: impl Into<String>) -> Self {
        AstNode { node_type: node_type.into(), token: Some(token.into()), children: Vec::new() }
    }

    /// Leaf that carries no lexeme (e.g. an empty parameter list).
    pub fn empty_leaf(node_type: impl Into<String>) -> Self {
        AstNode { node_type: node_type.into(), token: None, children: Vec::new() }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(AstNode::node_count).sum::<usize>()
    }

    /// Leaf tokens in left-to-right order.
    pub fn leaf_tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaf_tokens(&mut out);
        out
    }

    fn collect_leaf_tokens<'a>(&'a self, out: &mut Vec<&'a str>) {
        if self.is_leaf() {
            if let Some(tok) = &self.token {
                out.push(tok);
            }
        } else {
            for c in &self.children {
                c.collect_leaf_tokens(out);
            }
        }
    }
}

/// Binarized syntax tree: every node has exactly 0 or 2 children.
///
/// Nodes produced by merging unary chains record the chain's labels in
/// `merged_types`; nodes introduced by splitting wide nodes carry the
/// `AUX` node type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryAst {
    pub node_type: String,
    pub token: Option<String>,
    pub children: Vec<BinaryAst>,
    pub merged_types: Vec<String>,
}

/// Node type assigned to the right-spine nodes created when splitting a
/// node with more than two children.
pub const AUX_TYPE: &str = "AUX";

impl BinaryAst {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(BinaryAst::node_count).sum::<usize>()
    }

    pub fn leaf_tokens(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaf_tokens(&mut out);
        out
    }

    fn collect_leaf_tokens<'a>(&'a self, out: &mut Vec<&'a str>) {
        if self.is_leaf() {
            if let Some(tok) = &self.token {
                out.push(tok);
            }
        } else {
            for c in &self.children {
                c.collect_leaf_tokens(out);
            }
        }
    }

    /// The string under which this node is embedded: leaves contribute
    /// their lexeme, internal nodes their (possibly merged) type label.
    pub fn vocab_key(&self) -> String {
        if let Some(tok) = &self.token {
            return tok.clone();
        }
        if self.merged_types.is_empty() {
            self.node_type.clone()
        } else {
            self.merged_types.join("/")
        }
    }

    /// View as a plain tree, folding merged labels into the node type.
    /// Re-binarizing this view is a fixed point of `binarize`.
    pub fn to_ast_node(&self) -> AstNode {
        AstNode {
            node_type: if self.merged_types.is_empty() {
                self.node_type.clone()
            } else {
                self.merged_types.join("/")
            },
            token: self.token.clone(),
            children: self.children.iter().map(BinaryAst::to_ast_node).collect(),
        }
    }

    /// Equality on vocab keys, tokens and shape (ignores how labels are
    /// stored between `node_type` and `merged_types`).
    pub fn structurally_equal(&self, other: &BinaryAst) -> bool {
        self.vocab_key() == other.vocab_key()
            && self.token == other.token
            && self.children.len() == other.children.len()
            && self
                .children
                .iter()
                .zip(&other.children)
                .all(|(a, b)| a.structurally_equal(b))
    }
}

/// Rewrite an arbitrary-arity tree into one where every node has 0 or 2
/// children: first split nodes with more than two children top-down,
/// then merge every single-child node with its child.
pub fn binarize(root: &AstNode) -> BinaryAst {
    merge_unary(split_wide(root))
}

fn split_wide(n: &AstNode) -> BinaryAst {
    let children: Vec<BinaryAst> = n.children.iter().map(split_wide).collect();
    BinaryAst {
        node_type: n.node_type.clone(),
        token: n.token.clone(),
        children: split_children(children),
        merged_types: Vec::new(),
    }
}

/// Keep the leftmost child, push the rest under a fresh AUX right child,
/// repeating until arity is at most 2.
fn split_children(mut cs: Vec<BinaryAst>) -> Vec<BinaryAst> {
    if cs.len() <= 2 {
        return cs;
    }
    let first = cs.remove(0);
    let aux = BinaryAst {
        node_type: AUX_TYPE.to_string(),
        token: None,
        children: split_children(cs),
        merged_types: Vec::new(),
    };
    vec![first, aux]
}

fn labels(n: &BinaryAst) -> Vec<String> {
    if n.merged_types.is_empty() {
        vec![n.node_type.clone()]
    } else {
        n.merged_types.clone()
    }
}

fn merge_unary(mut n: BinaryAst) -> BinaryAst {
    while n.children.len() == 1 {
        let child = n.children.pop().unwrap();
        let mut merged = labels(&n);
        // A leaf child keeps its identity through its token, so only
        // internal children contribute their labels to the merged chain.
        if !child.children.is_empty() {
            merged.extend(labels(&child));
        } else {
            merged.extend(child.merged_types);
        }
        n = BinaryAst {
            node_type: child.node_type,
            token: child.token,
            children: child.children,
            merged_types: merged,
        };
    }
    n.children = n.children.into_iter().map(merge_unary).collect();
    n
}

// ── serialized form ─────────────────────────────────────────────────────

/// On-disk shape: `{"t": <type>, "tok": <lexeme>, "c": [<children>]}`,
/// with `c` omitted on leaves and `tok` omitted on internal nodes.
#[derive(Serialize, Deserialize)]
struct AstJson {
    t: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    tok: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    c: Vec<AstJson>,
}

/// Parse a serialized AST document, enforcing the leaf/internal invariant.
pub fn load_ast(serialized: &str) -> Result<AstNode> {
    let doc: AstJson = serde_json::from_str(serialized)?;
    from_json(&doc)
}

/// Same as [`load_ast`] but from an already-parsed JSON value.
pub fn load_ast_value(value: &serde_json::Value) -> Result<AstNode> {
    let doc: AstJson = serde_json::from_value(value.clone())?;
    from_json(&doc)
}

fn from_json(doc: &AstJson) -> Result<AstNode> {
    if doc.tok.is_some() && !doc.c.is_empty() {
        return Err(Error::InvalidData(format!(
            "ast node {:?} has both a token and children",
            doc.t
        )));
    }
    Ok(AstNode {
        node_type: doc.t.clone(),
        token: doc.tok.clone(),
        children: doc.c.iter().map(from_json).collect::<Result<Vec<_>>>()?,
    })
}

/// Serialize a tree into the on-disk JSON shape.
pub fn ast_to_value(node: &AstNode) -> serde_json::Value {
    let doc = to_json(node);
    serde_json::to_value(doc).expect("ast serialization cannot fail")
}

fn to_json(node: &AstNode) -> AstJson {
    AstJson {
        t: node.node_type.clone(),
        tok: node.token.clone(),
        c: node.children.iter().map(to_json).collect(),
    }
}
