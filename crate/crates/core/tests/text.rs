use cir_core::text::*;
use proptest::prelude::*;

const POOL: &[&str] = &[
    "the",
    "a",
    "an",
    "another",
    "two",
    "red",
    "Large",
    "small",
    "green",
    "ball",
    "box",
    "lamp",
    "table",
    "on",
    "in",
    "under",
    "with",
    "and",
    "or",
    "remove",
    "add",
    "change",
    "walking",
    "painted",
    "lorikeet",
    "dog's",
    "it",
    "them",
    "very",
    "colorful",
    "bedspread",
    "branch",
    "background",
    "3",
    "left",
    "corner",
    ",",
    ".",
    "!",
];

fn sentence() -> impl Strategy<Value = String> {
    proptest::collection::vec(0..POOL.len(), 0..24).prop_map(|ix| {
        let mut s = String::new();
        for i in ix {
            let w = POOL[i];
            if !s.is_empty() && !matches!(w, "," | "." | "!") {
                s.push(' ');
            }
            s.push_str(w);
        }
        s
    })
}

fn tree_of(raw: &str) -> (TokenizedText, NpTree) {
    let lex = Lexicon::builtin();
    let t = tokenize(raw, lex);
    let tags = pos_tag(&t, lex);
    let tree = chunk_nps(&t, &tags);
    (t, tree)
}

fn contains(outer: &[usize], inner: &[usize]) -> bool {
    outer.len() > inner.len() && outer[0] <= inner[0] && inner[inner.len() - 1] <= outer[outer.len() - 1]
}

#[test]
fn figure_examples() {
    let lex = Lexicon::builtin();
    let t = tokenize("Add a red ball", lex);
    let spans: Vec<(usize, usize)> = t.tokens.iter().map(|k| (k.start, k.end)).collect();
    assert_eq!(spans, [(0, 3), (4, 5), (6, 9), (10, 14)]);

    let (_, nps) = noun_phrases("add another lorikeet on the branch", lex, 10, true);
    let texts: Vec<&str> = nps.iter().map(|n| n.text.as_str()).collect();
    assert_eq!(texts, ["another lorikeet", "the branch"]);

    let (_, nps) = noun_phrases("add another lorikeet on the branch", lex, 10, false);
    assert_eq!(nps[0].text, "another lorikeet on the branch");
    assert_eq!(nps[0].depth, 0);
    assert_eq!(nps.len(), 3);

    assert_eq!(tokenize("", lex).encoder_rows(), 2);
    assert!(noun_phrases("very quickly", lex, 10, false).1.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn spans_re_slice_raw(raw in sentence()) {
        let t = tokenize(&raw, Lexicon::builtin());
        let mut last = 0;
        for k in &t.tokens {
            prop_assert!(k.start >= last && k.start < k.end && k.end <= raw.len());
            prop_assert_eq!(raw[k.start..k.end].to_lowercase(), k.surface.clone());
            last = k.end;
        }
    }

    #[test]
    fn tree_nesting_is_well_formed(raw in sentence()) {
        let (_, tree) = tree_of(&raw);
        for n in &tree.nodes {
            if let Some(p) = n.parent {
                let p = &tree.nodes[p];
                prop_assert!(p.tokens.start <= n.tokens.start && n.tokens.end <= p.tokens.end);
                prop_assert!(p.tokens.len() > n.tokens.len());
                prop_assert_eq!(n.depth, p.depth + 1);
            }
            for w in n.children.windows(2) {
                prop_assert!(tree.nodes[w[0]].tokens.end <= tree.nodes[w[1]].tokens.start);
            }
        }
        for w in tree.roots.windows(2) {
            prop_assert!(tree.nodes[w[0]].tokens.end <= tree.nodes[w[1]].tokens.start);
        }
    }

    #[test]
    fn extraction_properties(raw in sentence(), l in 1usize..12, leaf_only in any::<bool>()) {
        let (t, tree) = tree_of(&raw);
        let nps = extract_nps(&tree, &t, l, leaf_only);
        let eligible = tree.nodes.iter().filter(|n| !leaf_only || n.children.is_empty()).count();
        prop_assert_eq!(nps.len(), eligible.min(l));
        for (i, a) in nps.iter().enumerate() {
            prop_assert!(!a.token_rows.is_empty());
            prop_assert!(a.token_rows.windows(2).all(|w| w[1] == w[0] + 1));
            prop_assert!(*a.token_rows.last().unwrap() < t.len());
            let joined: Vec<&str> = a.token_rows.iter().map(|&r| t.tokens[r].surface.as_str()).collect();
            prop_assert_eq!(joined.join(" "), a.text.clone());
            prop_assert_eq!(raw[a.start..a.end].to_lowercase().split(|c: char| !c.is_alphanumeric() && c != '\'')
                .filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" "), a.text.clone());
            for b in &nps[..i] {
                prop_assert!(b.depth <= a.depth);
                prop_assert!(!contains(&a.token_rows, &b.token_rows), "descendant before parent");
            }
            if leaf_only {
                prop_assert!(a.leaf);
            }
        }
    }
}
