//! Filters, crops, resizes and mirrors the bundled fixture records into a
//! dataset manifest, then materializes the processed images.
//!
//! `cargo run --example preprocess -- [out-dir]`

use std::path::Path;

use petgan::data::{build_manifest, read_records, ManifestConfig, ProcessedStore};

fn main() -> anyhow::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let out = std::env::args().nth(1).unwrap_or_else(|| "preprocessed".into());

    let records = read_records(&root.join("records.txt"))?;
    let outcome = build_manifest(&records, ManifestConfig::default())?;
    let m = &outcome.manifest;
    println!("{} records → {} entries ({:?})", records.len(), m.len(), m.counts);
    println!("rejections: {}", outcome.filter.summary());
    println!("checksum {}", m.checksum);
    for e in m.entries.iter().take(4) {
        println!("  {} {:?} crop {:?} flip={}", e.source.display(), e.species, e.crop, e.flip);
    }

    let store = ProcessedStore::new(&out);
    let written = store.materialize(m, &root)?;
    m.save(&Path::new(&out).join("manifest.jsonl"))?;
    println!("wrote {written} images under {out}/");
    Ok(())
}
