use std::collections::BTreeSet;

use recipegen::corpus::synthetic::{planted, Plan};
use recipegen::corpus::{parse_all, prepare, serialize, PrepOptions, RejectReason};

fn set(ids: &[String]) -> BTreeSet<String> {
    ids.iter().cloned().collect()
}

#[test]
fn planted_defects_are_handled_exactly() {
    for seed in [1, 2, 3] {
        let p = planted(Plan::default(), seed);
        let opts = PrepOptions {
            split_heldout: false,
            ..PrepOptions::default()
        };
        let out = prepare(&p.records, opts).unwrap();

        let rejected = |kind: &str| -> BTreeSet<String> {
            out.clean
                .rejected
                .iter()
                .filter(|(_, r)| match r {
                    RejectReason::Incomplete(_) => kind == "incomplete",
                    _ => kind == "duplicate",
                })
                .map(|(id, _)| id.clone())
                .collect()
        };
        assert_eq!(rejected("incomplete"), set(&p.incomplete), "seed {seed}");
        assert_eq!(rejected("duplicate"), set(&p.duplicates), "seed {seed}");

        let text_of = |id: &String| serialize(p.records.iter().find(|r| &r.id == id).unwrap()).unwrap().text;
        let overlong: BTreeSet<String> = p.overlong.iter().map(text_of).collect();
        let dropped: BTreeSet<String> = prepare_dropped(&p.records, opts);
        assert_eq!(dropped, overlong, "seed {seed}");
        assert_eq!(out.summary.dropped_over_length, p.overlong.len());

        // merging conserves recipes, and every short record ends up merged
        let kept = p.records.len() - p.duplicates.len() - p.incomplete.len() - p.overlong.len();
        assert_eq!(out.docs.iter().map(|d| d.recipes).sum::<usize>(), kept);
        for id in &p.short {
            let t = text_of(id);
            let host = out.docs.iter().find(|d| d.text.contains(&t)).unwrap();
            assert!(host.recipes > 1, "short {id} was not merged");
        }

        for d in &out.docs {
            assert!(d.char_len <= 2000);
            assert_eq!(parse_all(&d.text).unwrap().len(), d.recipes);
            assert!(parse_all(&d.text).unwrap().iter().all(|r| !r.malformed));
        }
    }
}

/// Texts the length window removed, recomputed from the public steps.
fn prepare_dropped(records: &[recipegen::corpus::RecipeRecord], opts: PrepOptions) -> BTreeSet<String> {
    use recipegen::corpus::{clean, length_stats, prep::serialize_all, select_window};
    let docs = serialize_all(&clean(records).kept).unwrap();
    let stats = length_stats(&docs).unwrap();
    select_window(&docs, &stats, opts.hard_cap)
        .dropped
        .into_iter()
        .map(|d| d.text)
        .collect()
}
