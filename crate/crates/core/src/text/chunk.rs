use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::text::pos::PosTag;
use crate::text::tokenize::TokenizedText;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NpNode {
    pub tokens: Range<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
}

/// Nested noun phrases; roots are kept in textual order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NpTree {
    pub nodes: Vec<NpNode>,
    pub roots: Vec<usize>,
}

impl NpTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// One extracted noun phrase.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NpSpan {
    /// Byte span in the raw text.
    pub start: usize,
    pub end: usize,
    /// Token surfaces joined by single spaces.
    pub text: String,
    /// Indices into the full text's token sequence (not encoder rows).
    pub token_rows: Vec<usize>,
    /// 0 for branch-level (topmost) phrases.
    pub depth: usize,
    pub leaf: bool,
}

/// `(DET|NUM)? ADJ* NOUN+` starting at `i`; returns the exclusive end.
fn base_np(tags: &[PosTag], i: usize) -> Option<usize> {
    let mut k = i;
    if matches!(tags.get(k), Some(PosTag::Det | PosTag::Num)) {
        k += 1;
    }
    while tags.get(k) == Some(&PosTag::Adj) {
        k += 1;
    }
    let nouns = k;
    while tags.get(k) == Some(&PosTag::Noun) {
        k += 1;
    }
    (k > nouns).then_some(k)
}

fn push(nodes: &mut Vec<NpNode>, tokens: Range<usize>, children: Vec<usize>) -> usize {
    nodes.push(NpNode {
        tokens,
        parent: None,
        children,
        depth: 0,
    });
    nodes.len() - 1
}

/// Chunks noun phrases. Each `PREP NP` attached to a phrase wraps it in a new
/// parent spanning both, so `A in B to C` nests as `((A in B) to C)`.
/// Anything outside the grammar (verbs, conjunctions, stray adjectives)
/// ends the current phrase.
pub fn chunk_nps(text: &TokenizedText, tags: &[PosTag]) -> NpTree {
    assert_eq!(text.len(), tags.len(), "tags must align with tokens");
    let mut nodes = Vec::new();
    let mut roots = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let Some(end) = base_np(tags, i) else {
            i += 1;
            continue;
        };
        let mut cur = push(&mut nodes, i..end, Vec::new());
        let mut j = end;
        while tags.get(j) == Some(&PosTag::Prep) {
            let Some(e2) = base_np(tags, j + 1) else { break };
            let attached = push(&mut nodes, j + 1..e2, Vec::new());
            let start = nodes[cur].tokens.start;
            cur = push(&mut nodes, start..e2, vec![cur, attached]);
            j = e2;
        }
        roots.push(cur);
        i = j;
    }

    let mut stack: Vec<(usize, Option<usize>, usize)> = roots.iter().map(|&r| (r, None, 0)).collect();
    while let Some((n, parent, depth)) = stack.pop() {
        nodes[n].parent = parent;
        nodes[n].depth = depth;
        for &c in &nodes[n].children {
            stack.push((c, Some(n), depth + 1));
        }
    }
    NpTree { nodes, roots }
}

/// Breadth-first extraction: every depth-0 phrase in textual order, then
/// depth 1, and so on, truncated at `max`. With `leaf_only`, phrases that
/// have children are skipped before truncation.
pub fn extract_nps(tree: &NpTree, text: &TokenizedText, max: usize, leaf_only: bool) -> Vec<NpSpan> {
    let mut out = Vec::new();
    let mut queue: VecDeque<usize> = tree.roots.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        let node = &tree.nodes[n];
        queue.extend(node.children.iter().copied());
        let leaf = node.children.is_empty();
        if leaf_only && !leaf {
            continue;
        }
        out.push(span_of(node, text));
    }
    out.truncate(max);
    out
}

fn span_of(node: &NpNode, text: &TokenizedText) -> NpSpan {
    let toks = &text.tokens[node.tokens.clone()];
    NpSpan {
        start: toks[0].start,
        end: toks[toks.len() - 1].end,
        text: toks.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" "),
        token_rows: node.tokens.clone().collect(),
        depth: node.depth,
        leaf: node.children.is_empty(),
    }
}
