//! Human-readable summaries of epoch files.

use std::fmt;
use std::path::Path;

use super::file::EpochReader;
use super::header::EpochHeader;
use crate::aug::encode;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct InspectSummary {
    pub header: EpochHeader,
    pub file_size: u64,
    pub record_size: usize,
    pub mean_mass: f64,
    pub min_mass: f64,
    pub max_mass: f64,
    /// Records whose stored seed differs from the encoder's output.
    pub seed_mismatches: u64,
    /// Most frequent rank-1 classes, `(class, count)`, most frequent first.
    pub top_classes: Vec<(u32, u64)>,
}

/// Streams through the file once; memory is independent of record count
/// apart from an `O(C)` histogram.
pub fn inspect(path: &Path) -> Result<InspectSummary> {
    let reader = EpochReader::open(path)?;
    let h = *reader.header();
    let mut hist = vec![0u64; h.num_classes as usize];
    let (mut total, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
    let mut seed_mismatches = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let m = rec.mass();
        total += m;
        lo = lo.min(m);
        hi = hi.max(m);
        hist[rec.top_class() as usize] += 1;
        if encode(h.run_seed, h.epoch, i as u64).d0 != rec.d0 {
            seed_mismatches += 1;
        }
    }
    let mut top: Vec<(u32, u64)> = hist
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(c, &n)| (c as u32, n))
        .collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    top.truncate(10);
    Ok(InspectSummary {
        header: h,
        file_size: h.file_size(),
        record_size: h.record_size(),
        mean_mass: total / h.num_samples as f64,
        min_mass: lo,
        max_mass: hi,
        seed_mismatches,
        top_classes: top,
    })
}

impl fmt::Display for InspectSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = &self.header;
        writeln!(f, "format_version    {}", h.format_version)?;
        writeln!(f, "pipeline_version  {}", h.pipeline_version)?;
        writeln!(f, "epoch             {}", h.epoch)?;
        writeln!(f, "run_seed          {}", h.run_seed)?;
        writeln!(f, "num_samples       {}", h.num_samples)?;
        writeln!(f, "num_classes       {}", h.num_classes)?;
        writeln!(f, "k                 {}", h.k)?;
        writeln!(f, "value_precision   {}", h.value_precision)?;
        writeln!(f, "shuffle_seed      {:#018x}", h.shuffle_seed)?;
        writeln!(f, "record_size       {}", self.record_size)?;
        writeln!(f, "file_size         {}", self.file_size)?;
        writeln!(f, "mean_topk_mass    {:.6}", self.mean_mass)?;
        writeln!(f, "min_topk_mass     {:.6}", self.min_mass)?;
        writeln!(f, "max_topk_mass     {:.6}", self.max_mass)?;
        writeln!(f, "seed_mismatches   {}", self.seed_mismatches)?;
        write!(f, "top_classes      ")?;
        for (c, n) in &self.top_classes {
            write!(f, " {c}:{n}")?;
        }
        writeln!(f)
    }
}
