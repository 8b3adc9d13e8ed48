//! 1,000 synthetic records with 30 duplicates, 20 incomplete, 10 overlong
//! and 15 short ones: exactly those are rejected, dropped and merged, in
//! under ten seconds.

use std::collections::BTreeSet;
use std::time::Instant;

use recipegen::corpus::synthetic::{planted, Plan};
use recipegen::corpus::{
    clean, length_stats, parse_all, prep::serialize_all, prepare, select_window, serialize, PrepOptions,
    RejectReason,
};

use crate::{ensure, fail, Outcome};

pub fn run() -> Outcome {
    let t = Instant::now();
    let plan = Plan::default();
    ensure!(
        (plan.total, plan.duplicates, plan.incomplete, plan.overlong, plan.short) == (1000, 30, 20, 10, 15),
        "unexpected default plan"
    );
    let p = planted(plan, 1);
    let opts = PrepOptions {
        split_heldout: false,
        ..PrepOptions::default()
    };
    let out = prepare(&p.records, opts).map_err(fail("prepare"))?;
    let ids = |v: &[String]| v.iter().cloned().collect::<BTreeSet<_>>();

    let (mut incomplete, mut redundant) = (BTreeSet::new(), BTreeSet::new());
    for (id, reason) in &out.clean.rejected {
        match reason {
            RejectReason::Incomplete(_) => incomplete.insert(id.clone()),
            _ => redundant.insert(id.clone()),
        };
    }
    ensure!(incomplete == ids(&p.incomplete), "incomplete rejects differ from the planted set");
    ensure!(redundant == ids(&p.duplicates), "duplicate rejects differ from the planted set");

    let text_of = |id: &String| serialize(p.records.iter().find(|r| &r.id == id).unwrap()).unwrap().text;
    let docs = serialize_all(&clean(&p.records).kept).map_err(fail("serialize"))?;
    let stats = length_stats(&docs).map_err(fail("stats"))?;
    let dropped: BTreeSet<String> = select_window(&docs, &stats, opts.hard_cap)
        .dropped
        .into_iter()
        .map(|d| d.text)
        .collect();
    ensure!(
        dropped == p.overlong.iter().map(text_of).collect::<BTreeSet<_>>(),
        "dropped {} documents, not exactly the {} planted overlong ones",
        dropped.len(),
        p.overlong.len()
    );

    let expected = p.records.len() - p.duplicates.len() - p.incomplete.len() - p.overlong.len();
    let recipes: usize = out.docs.iter().map(|d| d.recipes).sum();
    ensure!(recipes == expected, "{recipes} recipes survive, expected {expected}");
    for id in &p.short {
        let text = text_of(id);
        let merged = out.docs.iter().any(|d| d.recipes > 1 && d.text.contains(&text));
        ensure!(merged, "short record {id} was not merged");
    }
    for (i, d) in out.docs.iter().enumerate() {
        ensure!(d.char_len <= 2000, "document {i} has {} chars", d.char_len);
        let parsed = parse_all(&d.text).map_err(fail("parse"))?;
        ensure!(
            parsed.len() == d.recipes && parsed.iter().all(|r| !r.malformed),
            "document {i} does not round-trip"
        );
    }
    let secs = t.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1}s (limit 10s)");
    Ok(format!(
        "{} docs from {} records; rejected {}+{}, dropped {}, {} merged groups",
        out.docs.len(),
        p.records.len(),
        incomplete.len(),
        redundant.len(),
        dropped.len(),
        out.summary.merged_groups
    ))
}
