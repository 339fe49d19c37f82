//! Error-tolerant parsing of Java and C# fragments into syntax trees.
//!
//! Corpus fragments are usually bare members ("Java methods consolidated
//! onto a single line"), not compilation units. Parsing is therefore
//! two-stage: the raw text is parsed first, and only if that tree contains
//! errors is the fragment wrapped in a synthetic class and re-parsed. When
//! the wrapped parse is clean the synthetic wrapper is unwrapped again:
//! matching starts at the class-body members, so wrapper nodes never count
//! toward any score. If both parses contain errors the raw tree is kept
//! and scoring degrades gracefully to its error-free subtrees.

use serde::{Deserialize, Serialize};
use tree_sitter::{Node, Parser};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Language {
    Java,
    CSharp,
}

impl Language {
    fn grammar(self) -> tree_sitter::Language {
        match self {
            Language::Java => tree_sitter_java::LANGUAGE.into(),
            Language::CSharp => tree_sitter_c_sharp::LANGUAGE.into(),
        }
    }

    /// Node kind of the synthetic wrapper's member container.
    fn wrapper_body_kind(self) -> &'static str {
        match self {
            Language::Java => "class_body",
            Language::CSharp => "declaration_list",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    Raw,
    Wrapped,
}

/// A parsed fragment. Owns the (possibly wrapped) text backing the tree.
pub struct SyntaxTree {
    pub language: Language,
    pub mode: ParseMode,
    text: String,
    tree: tree_sitter::Tree,
}

const WRAPPER_PREFIX: &str = "class __ScalegradeWrap {\n";
const WRAPPER_SUFFIX: &str = "\n}";

/// Parses a fragment. Never fails: syntax errors surface as error nodes in
/// the returned tree, not as a result.
pub fn parse(source: &str, language: Language) -> SyntaxTree {
    let mut parser = Parser::new();
    parser
        .set_language(&language.grammar())
        .expect("bundled grammar matches the tree-sitter ABI");

    let raw = parser.parse(source, None).expect("no cancellation in use");
    if !raw.root_node().has_error() {
        return SyntaxTree {
            language,
            mode: ParseMode::Raw,
            text: source.to_string(),
            tree: raw,
        };
    }

    let wrapped_text = format!("{WRAPPER_PREFIX}{source}{WRAPPER_SUFFIX}");
    let wrapped = parser
        .parse(&wrapped_text, None)
        .expect("no cancellation in use");
    if !wrapped.root_node().has_error() {
        return SyntaxTree {
            language,
            mode: ParseMode::Wrapped,
            text: wrapped_text,
            tree: wrapped,
        };
    }

    SyntaxTree {
        language,
        mode: ParseMode::Raw,
        text: source.to_string(),
        tree: raw,
    }
}

impl SyntaxTree {
    pub fn root(&self) -> Node<'_> {
        self.tree.root_node()
    }

    pub fn text_of(&self, node: Node<'_>) -> &str {
        &self.text[node.byte_range()]
    }

    /// Number of error or missing nodes in the tree.
    pub fn error_node_count(&self) -> usize {
        let mut count = 0;
        let mut stack = vec![self.root()];
        while let Some(node) = stack.pop() {
            if node.is_error() || node.is_missing() {
                count += 1;
            }
            for i in (0..node.child_count()).rev() {
                stack.push(node.child(i).expect("child within count"));
            }
        }
        count
    }

    /// Nodes where matching starts. For raw parses this is the tree root;
    /// for wrapped parses, the members of the synthetic class body, so the
    /// wrapper itself never participates in scoring.
    pub fn match_roots(&self) -> Vec<Node<'_>> {
        match self.mode {
            ParseMode::Raw => vec![self.root()],
            ParseMode::Wrapped => {
                let mut body = None;
                let mut stack = vec![self.root()];
                while let Some(node) = stack.pop() {
                    if node.kind() == self.language.wrapper_body_kind() {
                        body = Some(node);
                        break;
                    }
                    for i in (0..node.child_count()).rev() {
                        stack.push(node.child(i).expect("child within count"));
                    }
                }
                match body {
                    Some(body) => {
                        let mut cursor = body.walk();
                        body.named_children(&mut cursor).collect()
                    }
                    // The wrapped parse was declared clean, so the body
                    // exists; this branch is unreachable in practice.
                    None => vec![self.root()],
                }
            }
        }
    }

    /// Serializations of every internal, error-free subtree reachable from
    /// the match roots, in document order. An internal node has at least
    /// one named child; leaves contribute to their ancestors'
    /// serializations only. Identifier leaves serialize as their kind, so
    /// the multiset is invariant under renaming and whitespace changes.
    pub fn subtree_serializations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for root in self.match_roots() {
            collect_serializations(root, &mut out);
        }
        out
    }
}

fn collect_serializations(node: Node<'_>, out: &mut Vec<String>) {
    if node.is_error() || node.is_missing() {
        return;
    }
    if !node.has_error() && node.named_child_count() > 0 {
        let mut text = String::new();
        serialize(node, &mut text);
        out.push(text);
    }
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        collect_serializations(child, out);
    }
}

/// Canonical subtree form: `(kind child child ...)` over named nodes.
fn serialize(node: Node<'_>, out: &mut String) {
    out.push('(');
    out.push_str(node.kind());
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        out.push(' ');
        serialize(child, out);
    }
    out.push(')');
}
