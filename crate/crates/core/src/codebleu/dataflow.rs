//! Def-use edge extraction for the dataflow match component.
//!
//! An edge records one assignment or initialized declaration: the target
//! variable and the variables read by its right-hand side, in document
//! order. Variable names are normalized to positional indices (`var_0`,
//! `var_1`, ... by first occurrence across the fragment), so consistently
//! renamed code produces identical edges. Subtrees containing parse errors
//! contribute nothing.

use indexmap::IndexMap;
use tree_sitter::Node;

use super::parser::{Language, SyntaxTree};

/// One def-use edge with normalized variable names.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DataflowEdge {
    pub target: String,
    pub sources: Vec<String>,
}

impl std::fmt::Display for DataflowEdge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} <- [{}]", self.target, self.sources.join(", "))
    }
}

/// Extracts normalized def-use edges from every error-free region of the
/// tree, in document order.
pub fn dataflow_edges(tree: &SyntaxTree) -> Vec<DataflowEdge> {
    let mut raw_edges: Vec<(String, Vec<String>)> = Vec::new();
    for root in tree.match_roots() {
        collect_edges(tree, root, &mut raw_edges);
    }

    // Positional normalization: first occurrence order over targets and
    // sources alike.
    let mut names: IndexMap<String, usize> = IndexMap::new();
    let index_of = |name: &str, names: &mut IndexMap<String, usize>| {
        let next = names.len();
        *names.entry(name.to_string()).or_insert(next)
    };
    raw_edges
        .into_iter()
        .map(|(target, sources)| {
            let target = format!("var_{}", index_of(&target, &mut names));
            let sources = sources
                .into_iter()
                .map(|s| format!("var_{}", index_of(&s, &mut names)))
                .collect();
            DataflowEdge { target, sources }
        })
        .collect()
}

fn collect_edges(tree: &SyntaxTree, node: Node<'_>, out: &mut Vec<(String, Vec<String>)>) {
    if node.is_error() || node.is_missing() {
        return;
    }
    // Recursion continues past error-containing ancestors so clean inner
    // regions still contribute, but no edge is read from a node whose own
    // subtree is broken.
    if node.has_error() {
        let mut cursor = node.walk();
        for child in node.named_children(&mut cursor) {
            collect_edges(tree, child, out);
        }
        return;
    }
    match (tree.language, node.kind()) {
        (Language::Java, "variable_declarator") => {
            // Covers local_variable_declaration and field_declaration.
            if let (Some(name), Some(value)) =
                (node.child_by_field_name("name"), node.child_by_field_name("value"))
            {
                out.push((tree.text_of(name).to_string(), read_variables(tree, value)));
            }
        }
        (Language::CSharp, "variable_declarator") => {
            // The C# grammar keeps the initializer as an unlabeled child
            // after the name.
            if let Some(name) = node.child_by_field_name("name") {
                let mut cursor = node.walk();
                let value = node
                    .named_children(&mut cursor)
                    .find(|c| c.id() != name.id());
                if let Some(value) = value {
                    out.push((tree.text_of(name).to_string(), read_variables(tree, value)));
                }
            }
        }
        (_, "assignment_expression") => {
            if let (Some(left), Some(right)) =
                (node.child_by_field_name("left"), node.child_by_field_name("right"))
            {
                if let Some(target) = assignment_target(tree, left) {
                    out.push((target, read_variables(tree, right)));
                }
            }
        }
        _ => {}
    }
    let mut cursor = node.walk();
    for child in node.named_children(&mut cursor) {
        collect_edges(tree, child, out);
    }
}

/// Target variable of an assignment left-hand side: a plain identifier, or
/// the final member of a field/member access (`this.x = ...` targets `x`).
/// Other lvalue shapes (indexing, calls) produce no edge.
fn assignment_target(tree: &SyntaxTree, left: Node<'_>) -> Option<String> {
    match (tree.language, left.kind()) {
        (_, "identifier") => Some(tree.text_of(left).to_string()),
        (Language::Java, "field_access") => left
            .child_by_field_name("field")
            .map(|f| tree.text_of(f).to_string()),
        (Language::CSharp, "member_access_expression") => left
            .child_by_field_name("name")
            .map(|f| tree.text_of(f).to_string()),
        _ => None,
    }
}

/// Identifiers read by an expression, in document order. Method and member
/// names are not variable reads and are excluded.
fn read_variables(tree: &SyntaxTree, expr: Node<'_>) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![expr];
    while let Some(node) = stack.pop() {
        if node.kind() == "identifier" && !is_callee_or_member_name(tree, node) {
            out.push(tree.text_of(node).to_string());
        }
        for i in (0..node.named_child_count()).rev() {
            stack.push(node.named_child(i).expect("child within count"));
        }
    }
    out
}

fn is_callee_or_member_name(tree: &SyntaxTree, node: Node<'_>) -> bool {
    let Some(parent) = node.parent() else {
        return false;
    };
    let field = parent_field_of(parent, node);
    match (tree.language, parent.kind()) {
        (Language::Java, "method_invocation") => field == Some("name"),
        (Language::Java, "field_access") => field == Some("field"),
        (Language::CSharp, "invocation_expression") => field == Some("function"),
        (Language::CSharp, "member_access_expression") => field == Some("name"),
        _ => false,
    }
}

fn parent_field_of<'a>(parent: Node<'a>, child: Node<'a>) -> Option<&'static str> {
    for i in 0..parent.child_count() {
        if parent.child(i).map(|c| c.id()) == Some(child.id()) {
            return parent.field_name_for_child(i as u32);
        }
    }
    None
}
