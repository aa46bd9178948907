use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ies::{classify_popularity, Popularity};
use super::{round_display, MetricsError};

const HEADER: [&str; 2] = ["Page / Page Type", "p-IES"];

/// One page's score. Singled-out pages get their own row and stay out of
/// the category means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageScore {
    pub handle: String,
    pub followers: u64,
    pub p_ies: f64,
    #[serde(default)]
    pub singled_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RowKind {
    Category { category: Popularity, pages: usize },
    Page { followers: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub label: String,
    pub p_ies: f64,
    pub display: String,
    #[serde(flatten)]
    pub kind: RowKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
    pub notices: Vec<String>,
}

/// Category means in the order high, medium, low, followed by singled-out
/// pages in input order. Categories without pages are omitted with a notice.
pub fn compare_categories(pages: &[PageScore]) -> Result<ComparisonTable, MetricsError> {
    if let Some(p) = pages.iter().find(|p| !p.p_ies.is_finite() || p.p_ies < 0.0) {
        return Err(MetricsError::InvalidInput(format!("page {} has p-IES {}", p.handle, p.p_ies)));
    }
    let mut rows = Vec::new();
    let mut notices = Vec::new();
    for cat in Popularity::ORDER {
        let members: Vec<f64> = pages
            .iter()
            .filter(|p| !p.singled_out && classify_popularity(p.followers) == cat)
            .map(|p| p.p_ies)
            .collect();
        if members.is_empty() {
            notices.push(format!("no {}-popularity pages; row omitted", cat.name()));
            continue;
        }
        let mean = members.iter().sum::<f64>() / members.len() as f64;
        rows.push(ComparisonRow {
            label: cat.label().to_string(),
            p_ies: mean,
            display: round_display(mean, 3),
            kind: RowKind::Category {
                category: cat,
                pages: members.len(),
            },
        });
    }
    for p in pages.iter().filter(|p| p.singled_out) {
        rows.push(ComparisonRow {
            label: p.handle.clone(),
            p_ies: p.p_ies,
            display: round_display(p.p_ies, 3),
            kind: RowKind::Page { followers: p.followers },
        });
    }
    if rows.is_empty() {
        return Err(MetricsError::InvalidInput("no pages to compare".into()));
    }
    Ok(ComparisonTable { rows, notices })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory CSV");
        for r in &self.rows {
            w.write_record([r.label.as_str(), r.display.as_str()]).expect("in-memory CSV");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV")).expect("CSV is UTF-8")
    }

    /// Two aligned columns, notices after the table.
    pub fn to_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.chars().count())
            .chain([HEADER[0].len()])
            .max()
            .unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {}", HEADER[0], HEADER[1]);
        let _ = writeln!(out, "{}  {}", "-".repeat(width), "-".repeat(HEADER[1].len()));
        for r in &self.rows {
            let _ = writeln!(out, "{:<width$}  {:>5}", r.label, r.display);
        }
        for n in &self.notices {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

/// Reads `handle,followers,engagements[,singled_out]` rows; p-IES is
/// engagements / followers.
pub fn read_page_csv(text: &str) -> Result<Vec<PageScore>, MetricsError> {
    #[derive(Deserialize)]
    struct Row {
        handle: String,
        followers: u64,
        engagements: u64,
        #[serde(default)]
        singled_out: bool,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| MetricsError::InvalidInput(format!("row {}: {e}", i + 2)))?;
        out.push(PageScore {
            p_ies: super::compute_ies(row.engagements, 0, row.followers)
                .map_err(|e| MetricsError::InvalidInput(format!("row {} ({}): {e}", i + 2, row.handle)))?,
            handle: row.handle,
            followers: row.followers,
            singled_out: row.singled_out,
        });
    }
    Ok(out)
}
