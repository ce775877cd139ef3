mod common;

use common::{arb_tree, nonempty_leaf_values, toks};
use proptest::prelude::*;
use turducken_core::checkers::{parallel_check_all, ScriptedChecker};
use turducken_core::decode::{beam, greedy, hashed_distribution, rescore, DecodeOpts, TableScorer};
use turducken_core::metrics::bleu::{bleu, crystal_bleu, weighted_bleu, KeywordWeights, TrivialNGramSet};
use turducken_core::metrics::wilcoxon::{average_ranks, wilcoxon_signed_rank};
use turducken_core::sat::{parse_rendered, render};
use turducken_core::{
    build_prompt, ingest_tree, sat_decode, sat_encode, PromptKind, PromptTemplate, SatToken, SyntaxNode, TagLength,
    TagPolicy, TaskId,
};

fn policy(tl: Option<usize>) -> TagPolicy {
    TagPolicy::default().with_tag_length(match tl {
        Some(n) => TagLength::Prefix(n),
        None => TagLength::Full,
    })
}

fn arb_tokens(alphabet: &'static [&'static str], max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(alphabet), 0..=max)
        .prop_map(|v| v.into_iter().map(str::to_string).collect())
}

const WORDS: &[&str] = &["a", "b", "c", "d", "return", "if", "x", "("];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sat_roundtrip_restores_leaves(tree in arb_tree(), tl in prop::option::of(1usize..6)) {
        let seq = sat_encode(&tree, &policy(tl));
        prop_assert_eq!(sat_decode(&seq).unwrap(), nonempty_leaf_values(&tree));
    }

    #[test]
    fn sat_length_law_and_balance(tree in arb_tree(), tl in prop::option::of(1usize..6)) {
        let seq = sat_encode(&tree, &policy(tl));
        let nonempty = tree.leaves().filter(|l| !l.value().unwrap_or("").is_empty()).count();
        prop_assert_eq!(seq.len(), nonempty + 2 * tree.internal_count());
        prop_assert!(seq.check_balance().is_ok());
        let opens = seq.tokens.iter().filter(|t| matches!(t, SatToken::Open(_))).count();
        prop_assert_eq!(opens, tree.internal_count());
        prop_assert_eq!(seq.placeholder_count(), seq.string_table.len());
    }

    #[test]
    fn sat_sequence_json_roundtrip(tree in arb_tree()) {
        let seq = sat_encode(&tree, &TagPolicy::default());
        let back = serde_json::from_str(&serde_json::to_string(&seq).unwrap()).unwrap();
        prop_assert_eq!(seq, back);
    }

    #[test]
    fn tree_json_bijection(tree in arb_tree()) {
        let doc = tree.to_json();
        let back = ingest_tree(&doc).unwrap();
        prop_assert_eq!(&back, &tree);
        prop_assert_eq!(back.to_json(), doc.clone());
        prop_assert_eq!(SyntaxNode::from_json_str(&doc.to_string()).unwrap(), tree);
    }

    #[test]
    fn rendered_form_roundtrips_for_plain_leaves(
        words in prop::collection::vec(prop::sample::select(&["x", "1", "call", "foo_bar", "=", "."][..]), 1..8),
        kinds in prop::collection::vec(prop::sample::select(common::INTERNAL_KINDS), 1..4),
    ) {
        let mut node = SyntaxNode::internal(
            kinds[0],
            words.iter().map(|w| SyntaxNode::leaf("identifier", *w)).collect(),
        ).unwrap();
        for k in &kinds[1..] {
            node = SyntaxNode::internal(*k, vec![node, SyntaxNode::leaf("integer", "0")]).unwrap();
        }
        let seq = sat_encode(&node, &TagPolicy::default());
        let reparsed = parse_rendered(&render(&seq));
        prop_assert_eq!(reparsed.tokens, seq.tokens);
    }

    #[test]
    fn bleu_in_unit_interval(c in arb_tokens(WORDS, 12), r in arb_tokens(WORDS, 12)) {
        prop_assume!(!r.is_empty());
        let b = bleu(&c, &r);
        prop_assert!((0.0..=1.0).contains(&b), "{b}");
    }

    #[test]
    fn bleu_identity_is_one(r in arb_tokens(WORDS, 12)) {
        prop_assume!(r.len() >= 4);
        prop_assert!((bleu(&r, &r) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_reductions(c in arb_tokens(WORDS, 12), r in arb_tokens(WORDS, 12)) {
        prop_assume!(!r.is_empty());
        let b = bleu(&c, &r);
        prop_assert!((weighted_bleu(&c, &r, &KeywordWeights::uniform()) - b).abs() <= 1e-12);
        prop_assert!((crystal_bleu(&c, &r, &TrivialNGramSet::empty()).score - b).abs() <= 1e-12);
    }

    #[test]
    fn weighted_bleu_in_unit_interval(c in arb_tokens(WORDS, 12), r in arb_tokens(WORDS, 12), w in 1.0f64..10.0) {
        prop_assume!(!r.is_empty());
        let kw = KeywordWeights::from_pairs([("return".to_string(), w), ("if".to_string(), w)]).unwrap();
        let v = weighted_bleu(&c, &r, &kw);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v), "{v}");
    }

    #[test]
    fn crystal_bleu_in_unit_interval(c in arb_tokens(WORDS, 10), r in arb_tokens(WORDS, 10), k in 0usize..6) {
        prop_assume!(!r.is_empty());
        let trivial = TrivialNGramSet::from_corpus(&[r.clone(), c.clone()], k);
        let v = crystal_bleu(&c, &r, &trivial);
        prop_assert!((0.0..=1.0).contains(&v.score));
        if v.degenerate {
            prop_assert_eq!(v.score, 0.0);
        }
    }

    #[test]
    fn trivial_set_is_deterministic(docs in prop::collection::vec(arb_tokens(WORDS, 8), 1..5), k in 0usize..8) {
        let a = TrivialNGramSet::from_corpus(&docs, k);
        let b = TrivialNGramSet::from_corpus(&docs, k);
        prop_assert_eq!(a.hash(), b.hash());
        let again: TrivialNGramSet = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        prop_assert_eq!(again.hash(), a.hash());
    }

    #[test]
    fn beam_output_is_sorted_distinct_and_rescorable(seed in 0u64..10_000, vocab in 3usize..7, k in 1usize..8, max_len in 1usize..6) {
        let eos = (seed % vocab as u64) as u32;
        let s = TableScorer::new(vocab, eos, move |p: &[u32]| hashed_distribution(seed, p, vocab));
        let opts = DecodeOpts { beam_k: k, max_len, ..Default::default() };
        let out = beam(&s, TaskId::Origin, &opts).unwrap();
        prop_assert!(!out.is_empty() && out.len() <= k);
        for w in out.windows(2) {
            prop_assert!(w[0].rank_cmp(&w[1], eos).is_lt());
        }
        let mut ids: Vec<_> = out.iter().map(|c| c.ids.clone()).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), out.len());
        for c in &out {
            prop_assert!(c.tokens(eos).len() <= max_len);
            prop_assert!(c.finished || c.ids.len() == max_len);
            prop_assert!(!c.ids.contains(&eos));
            prop_assert!((rescore(&s, TaskId::Origin, c).unwrap() - c.logprob).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_is_beam_of_one(seed in 0u64..10_000, vocab in 2usize..7, max_len in 1usize..8) {
        let s = TableScorer::new(vocab, 0, move |p: &[u32]| hashed_distribution(seed, p, vocab));
        let opts = DecodeOpts { beam_k: 1, max_len, ..Default::default() };
        prop_assert_eq!(greedy(&s, TaskId::Origin, &opts).unwrap(), beam(&s, TaskId::Origin, &opts).unwrap().remove(0));
    }

    #[test]
    fn beam_ten_not_worse_than_greedy(seed in 0u64..10_000, vocab in 3usize..7, max_len in 1usize..7) {
        let s = TableScorer::new(vocab, 1, move |p: &[u32]| hashed_distribution(seed, p, vocab));
        let at = |k| beam(&s, TaskId::Origin, &DecodeOpts { beam_k: k, max_len, ..Default::default() }).unwrap()[0].logprob;
        prop_assert!(at(10) >= at(1));
    }

    #[test]
    fn wilcoxon_symmetric_and_bounded(
        pairs in prop::collection::vec((0u8..20, 0u8..20), 6..40),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let nonzero = pairs.iter().filter(|p| p.0 != p.1).count();
        match wilcoxon_signed_rank(&a, &b) {
            Ok(w) => {
                prop_assert!((0.0..=1.0).contains(&w.p_value));
                let r = wilcoxon_signed_rank(&b, &a).unwrap();
                prop_assert!((w.p_value - r.p_value).abs() < 1e-12);
                prop_assert_eq!(w.statistic, r.statistic);
                let shifted: Vec<f64> = a.iter().map(|x| x + 3.5).collect();
                let bs: Vec<f64> = b.iter().map(|x| x + 3.5).collect();
                prop_assert!((wilcoxon_signed_rank(&shifted, &bs).unwrap().p_value - w.p_value).abs() < 1e-12);
                prop_assert!(w.degenerate == (nonzero == 0));
            }
            Err(_) => prop_assert!(nonzero > 0 && nonzero < 6),
        }
    }

    #[test]
    fn average_ranks_sum(values in prop::collection::vec(0u8..10, 1..30)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let n = v.len() as f64;
        let r = average_ranks(&v);
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] < v[j] {
                    prop_assert!(r[i] < r[j]);
                } else if v[i] == v[j] {
                    prop_assert_eq!(r[i], r[j]);
                }
            }
        }
    }

    #[test]
    fn parallel_checks_keep_input_order(flags in prop::collection::vec(any::<bool>(), 1..24), pool in 0usize..5) {
        let sources: Vec<String> = flags.iter().enumerate().map(|(i, f)| format!("{i}:{f}")).collect();
        let checker = ScriptedChecker::new(|s: &str| s.ends_with("true"));
        let out = parallel_check_all(&checker, &sources, pool);
        prop_assert_eq!(out.len(), flags.len());
        for (o, f) in out.iter().zip(&flags) {
            prop_assert_eq!(o.as_ref().unwrap().executable, *f);
        }
    }

    #[test]
    fn prompts_separate_tasks(desc in "[a-z ]{0,30}") {
        for kind in [PromptKind::TaskOnly, PromptKind::Standard, PromptKind::Long, PromptKind::Mixed] {
            let tpl = PromptTemplate::new(kind);
            let (o, _) = build_prompt(&tpl, TaskId::Origin, &desc);
            let (s, _) = build_prompt(&tpl, TaskId::Syntax, &desc);
            prop_assert_ne!(o, s);
        }
    }
}

#[test]
fn crystal_degenerate_identity_pair() {
    let r = toks("a b c d");
    let trivial = TrivialNGramSet::from_corpus(std::slice::from_ref(&r), 100);
    let v = crystal_bleu(&r, &r, &trivial);
    assert!(v.degenerate);
    assert_eq!(v.score, 0.0);
}

mod structural {
    use super::common::{real_snippets, toks};
    use proptest::prelude::*;
    use turducken_core::corpus::{make_mtl_pairs, synthetic_corpus};
    use turducken_core::metrics::syntax::{code_bleu, syntax_exact_match, syntax_match, CodeBleuWeights, Style};
    use turducken_core::metrics::wilcoxon::{wilcoxon_signed_rank_using, WilcoxonMethod};
    use turducken_core::metrics::{bleu::bleu, bleu::KeywordWeights, code_tokens};
    use turducken_core::sat::{parse_rendered, strip_tags};
    use turducken_core::{sat_encode, Grammar, PromptTemplate, SatToken, TagLength, TagPolicy};

    const KEYWORDS: &[&str] = &[
        "and", "as", "def", "del", "for", "if", "in", "is", "not", "or", "pass", "print", "return", "while", "with",
        "exec", "len", "range",
    ];

    fn ident() -> impl Strategy<Value = String> {
        "[a-z][a-z0-9_]{0,6}".prop_filter("keyword", |s| !KEYWORDS.contains(&s.as_str()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn tag_length_only_changes_tags(idx in 0usize..52, a in 1usize..6, b in prop::option::of(1usize..6)) {
            let snippets = real_snippets();
            let (g, src) = snippets[idx % snippets.len()];
            let tree = g.parse(src).unwrap();
            let base = TagPolicy::for_grammar(g);
            let x = sat_encode(&tree, &base.clone().with_tag_length(TagLength::Prefix(a)));
            let y = sat_encode(&tree, &base.with_tag_length(b.map_or(TagLength::Full, TagLength::Prefix)));
            prop_assert_eq!(x.len(), y.len());
            prop_assert_eq!(&x.string_table, &y.string_table);
            for (s, t) in x.tokens.iter().zip(&y.tokens) {
                match (s, t) {
                    (SatToken::Leaf(p), SatToken::Leaf(q)) => prop_assert_eq!(p, q),
                    (SatToken::Open(_), SatToken::Open(_)) | (SatToken::Close(_), SatToken::Close(_)) => {}
                    _ => prop_assert!(false, "token classes differ"),
                }
            }
        }

        #[test]
        fn syntax_match_ignores_identifier_names(a in ident(), b in ident(), c in ident(), d in ident()) {
            let tpl = |x: &str, y: &str| format!(
                "def {x}({y}):\n    {x}_rows = {y}.execute(\"SELECT 1\")\n    return [{y} for {y} in {x}_rows]\n"
            );
            let reference = tpl(&a, &b);
            let renamed = tpl(&c, &d);
            prop_assert_eq!(syntax_match(&renamed, &reference, Grammar::Python).unwrap(), 1.0);
        }

        #[test]
        fn syntax_exact_match_ignores_sql_keyword_case(col in "[a-z]{1,6}", table in "[a-z]{1,6}", upper in any::<bool>()) {
            let sql = format!("SELECT {col} FROM {table}");
            let other = if upper { sql.clone() } else { format!("select {col}   from {table}") };
            let r = format!("cur.execute(\"{sql}\")\n");
            let c = format!("cur.execute(\"{other}\")\n");
            prop_assert_eq!(syntax_exact_match(&c, &r, Grammar::Python, Style::NativeSql).unwrap(), 1.0);
        }

        #[test]
        fn code_bleu_bleu_only_reduces(i in 0usize..52, j in 0usize..52) {
            let snippets = real_snippets();
            let (g, r) = snippets[i % snippets.len()];
            let (h, c) = snippets[j % snippets.len()];
            prop_assume!(g == h);
            let w = CodeBleuWeights::new(1.0, 0.0, 0.0, 0.0).unwrap();
            let kw = KeywordWeights::for_language(g, 5.0).unwrap();
            let cb = code_bleu(c, r, g, &w, &kw).unwrap();
            let b = bleu(&code_tokens(c, g).unwrap(), &code_tokens(r, g).unwrap());
            prop_assert!((cb.score - b).abs() <= 1e-12);
            let full = code_bleu(c, r, g, &CodeBleuWeights::default(), &kw).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&full.score));
        }

        #[test]
        fn wilcoxon_exact_and_normal_agree_at_25(diffs in prop::collection::vec((1u32..40, any::<bool>()), 25)) {
            let a: Vec<f64> = diffs.iter().map(|(m, pos)| if *pos { *m as f64 } else { -(*m as f64) }).collect();
            let b = vec![0.0; 25];
            let e = wilcoxon_signed_rank_using(&a, &b, Some(WilcoxonMethod::Exact)).unwrap();
            let n = wilcoxon_signed_rank_using(&a, &b, Some(WilcoxonMethod::Normal)).unwrap();
            prop_assert_eq!(e.method, WilcoxonMethod::Exact);
            prop_assert_eq!(n.method, WilcoxonMethod::Normal);
            prop_assert!((e.p_value - n.p_value).abs() < 0.01, "exact {} normal {}", e.p_value, n.p_value);
            prop_assert!(e.p_value > 0.0 && e.p_value <= 1.0);
        }

        #[test]
        fn auxiliary_targets_strip_to_code_leaves(seed in 0u64..1000, tl in 1usize..6) {
            let tpl = PromptTemplate::default();
            for s in synthetic_corpus(4, seed) {
                let policy = TagPolicy::for_grammar(s.language).with_tag_length(TagLength::Prefix(tl));
                let pair = make_mtl_pairs(&s, &policy, &tpl).unwrap();
                let stripped = strip_tags(&parse_rendered(&pair.auxiliary.target)).unwrap();
                let tree = s.language.parse(&s.code).unwrap();
                let expected: Vec<String> = tree
                    .leaves()
                    .filter(|l| !l.value().unwrap_or("").is_empty())
                    .map(|l| if policy.masks(l) { policy.placeholder.clone() } else { l.value().unwrap().to_string() })
                    .flat_map(|v| toks(&v))
                    .collect();
                prop_assert_eq!(stripped, expected);
            }
        }
    }

    #[test]
    fn every_metric_is_one_on_identity() {
        let kw = KeywordWeights::for_language(Grammar::Python, 5.0).unwrap();
        for (g, src) in real_snippets() {
            let t = code_tokens(src, g).unwrap();
            if t.len() >= 4 {
                assert!((bleu(&t, &t) - 1.0).abs() < 1e-12, "{src}");
            }
            assert_eq!(syntax_match(src, src, g).unwrap(), 1.0, "{src}");
            assert_eq!(syntax_exact_match(src, src, g, Style::NativeSql).unwrap(), 1.0, "{src}");
            if g == Grammar::Python && t.len() >= 4 {
                let cb = code_bleu(src, src, g, &CodeBleuWeights::default(), &kw).unwrap();
                assert!((cb.score - 1.0).abs() < 1e-12, "{src}: {cb:?}");
            }
        }
    }

    #[test]
    fn real_snippets_parse_cleanly_with_ordered_spans() {
        for (g, src) in real_snippets() {
            let tree = g.parse(src).unwrap();
            assert!(!tree.has_error(), "{src}");
            let spans: Vec<_> = tree.leaves().map(|l| l.span()).collect();
            for w in spans.windows(2) {
                assert!(w[0].end <= w[1].start, "{src}: {:?} then {:?}", w[0], w[1]);
            }
        }
        assert!(real_snippets().len() >= 50);
    }
}
