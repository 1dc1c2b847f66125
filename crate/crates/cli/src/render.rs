use std::fmt::Write as _;
use std::io::Write;

use agriqrs::retrieval::RankedAnswers;

use crate::args::Format;

/// Compact JSON (the same bytes the HTTP service returns) or a plain table,
/// newline-terminated.
pub fn render(ranked: &RankedAnswers, format: Format) -> anyhow::Result<String> {
    let mut out = match format {
        Format::Json => serde_json::to_string(ranked)?,
        Format::Table => table(ranked),
    };
    out.push('\n');
    Ok(out)
}

fn table(r: &RankedAnswers) -> String {
    let mut s = format!(
        "query: {}\ncrop: {}\ncluster: {}\n",
        r.query,
        r.crop.as_deref().unwrap_or("-"),
        r.cluster_id
    );
    if r.fallback_unfiltered {
        s.push_str("note: no answer mentions the crop; showing unfiltered answers\n");
    }
    let crop_w = r.answers.iter().map(|a| a.crop.chars().count()).max().unwrap_or(0).max(4);
    let _ = write!(s, "{:>4}  {:>4}  {:<crop_w$}  answer", "rank", "size", "crop");
    for a in &r.answers {
        let _ = write!(s, "\n{:>4}  {:>4}  {:<crop_w$}  {}", a.rank, a.cluster_size, a.crop, a.answer);
    }
    s
}

pub struct QualityRow {
    pub method: &'static str,
    pub clusters: usize,
    pub silhouette: f64,
    pub ch_index: f64,
    pub db_index: f64,
}

pub fn write_quality_csv(rows: &[QualityRow], out: &mut dyn Write) -> anyhow::Result<()> {
    writeln!(out, "method,clusters,silhouette,ch_index,db_index")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.method, r.clusters, r.silhouette, r.ch_index, r.db_index
        )?;
    }
    Ok(())
}
