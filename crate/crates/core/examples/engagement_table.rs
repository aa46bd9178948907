//! Page-level engagement comparison by popularity category, followed by a
//! page report built from a journaled store of posts and snapshots.

use std::path::Path;

use chrono::{DateTime, Duration, Utc};
use petgan::engagement::{NewPost, Store};
use petgan::metrics::{compare_categories, read_page_csv, IiesWindow, Verdict};
use petgan::train::SampleProvenance;

fn main() -> anyhow::Result<()> {
    let csv = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/category_pages.csv"))?;
    let table = compare_categories(&read_page_csv(&csv)?)?;
    println!("{}", table.to_text());

    let dir = tempfile::tempdir()?;
    let mut store = Store::open(dir.path())?;
    let t0: DateTime<Utc> = "2021-03-01T09:00:00Z".parse()?;
    for i in 0..12u8 {
        let prov = SampleProvenance {
            index: i as usize,
            checkpoint_id: "example".into(),
            tau: Some(0.5),
            seed: 0,
        };
        let (sample, _) = store.register_sample(&[i, 1, 2, 3], &prov, t0)?;
        store.record_verdict(&sample.id, Verdict::Fit, "", t0)?;
        let posted_at = t0 + Duration::hours(6 * i as i64);
        let post = store.create_post(
            NewPost {
                post_id: None,
                sample_id: sample.id,
                page: None,
                posted_at,
                relevant: i != 3,
                caption: format!("good dog #{i}"),
            },
            t0,
        )?;
        let snapshots = format!(
            "post_id,observed_at,likes,comments,followers\n{id},{a},{l},{c},{f}\n{id},{b},{l2},{c},{f}\n",
            id = post.post_id,
            a = (posted_at + Duration::minutes(24 * 60 - 20)).to_rfc3339(),
            b = (posted_at + Duration::hours(72)).to_rfc3339(),
            l = 3 + i as u64,
            l2 = 5 + i as u64,
            c = i as u64 % 3,
            f = 50 + i as u64,
        );
        let outcome = store.ingest_snapshots(&snapshots, t0)?;
        assert!(outcome.rejected.is_empty(), "{:?}", outcome.rejected);
    }

    let as_of = t0 + Duration::days(10);
    let report = store.report_page("petgan", as_of, IiesWindow::default())?;
    println!(
        "@{}: {} followers ({}), p-IES {} over {} posts{}",
        report.handle,
        report.followers,
        report.category.name(),
        report.p_ies_display,
        report.p_ies.post_ids.len(),
        if report.p_ies.partial { " (partial)" } else { "" }
    );
    for p in report.posts.iter().take(5) {
        println!("  {} posted {} i-IES {:?}", p.post_id, p.posted_at, p.i_ies.value());
    }
    println!("journal: {} entries at {}", store.journal_len(), store.journal_path().display());
    Ok(())
}
