//! Binned count matrices and experimental designs.
//!
//! A [`CountMatrix`] holds the observed tag counts per bin and data column.
//! Bins are sorted, non-overlapping genomic intervals; runs of coordinate-
//! adjacent bins on one chromosome form the segments that the Markov chain
//! treats as independent. Segments are always derived from coordinates, so
//! removing bins (exclusion filtering) can only ever split segments.

use crate::{Error, Result};
use std::collections::HashMap;
use std::ops::Range;

/// A half-open genomic interval (0-based, BED convention).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenomicInterval {
    pub chrom: String,
    pub start: u64,
    pub end: u64,
}

/// Coordinates of one bin. `chrom` indexes the matrix's chromosome table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinCoord {
    pub chrom: u32,
    pub start: u64,
    pub end: u64,
    pub segment: u32,
}

/// Observed tag counts indexed by bin and data column.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    chroms: Vec<String>,
    bins: Vec<BinCoord>,
    segments: Vec<Range<usize>>,
    columns: Vec<String>,
    /// Column-major: `counts[col][bin]`.
    counts: Vec<Vec<u32>>,
}

impl CountMatrix {
    /// Build a matrix from raw parts, validating ordering and dimensions and
    /// deriving segment structure from bin adjacency.
    pub fn new(
        chroms: Vec<String>,
        bins: Vec<(u32, u64, u64)>,
        columns: Vec<String>,
        counts: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if columns.len() != counts.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} column labels but {} count columns",
                columns.len(),
                counts.len()
            )));
        }
        {
            let mut seen = std::collections::HashSet::new();
            for label in &columns {
                if !seen.insert(label) {
                    return Err(Error::DimensionMismatch(format!(
                        "duplicate column label {label:?}"
                    )));
                }
            }
        }
        for (label, col) in columns.iter().zip(&counts) {
            if col.len() != bins.len() {
                return Err(Error::DimensionMismatch(format!(
                    "column {label:?} has {} rows but there are {} bins",
                    col.len(),
                    bins.len()
                )));
            }
        }
        let mut coords: Vec<BinCoord> = Vec::with_capacity(bins.len());
        for (i, &(chrom, start, end)) in bins.iter().enumerate() {
            if chrom as usize >= chroms.len() {
                return Err(Error::DimensionMismatch(format!(
                    "bin {i} references chromosome id {chrom} outside the table"
                )));
            }
            if end <= start {
                return Err(Error::InvalidParameter(format!(
                    "bin {i} has end {end} <= start {start}"
                )));
            }
            if let Some(prev) = coords.last() {
                let ordered = prev.chrom < chrom || (prev.chrom == chrom && prev.end <= start);
                if !ordered {
                    return Err(Error::InvalidParameter(format!(
                        "bins must be sorted and non-overlapping (violated at bin {i})"
                    )));
                }
            }
            coords.push(BinCoord {
                chrom,
                start,
                end,
                segment: 0,
            });
        }
        let segments = derive_segments(&mut coords);
        Ok(Self {
            chroms,
            bins: coords,
            segments,
            columns,
            counts,
        })
    }

    /// Contiguous fixed-width bins on a single synthetic chromosome; the
    /// shape every simulation uses.
    pub fn synthetic(columns: Vec<String>, counts: Vec<Vec<u32>>, bin_width: u64) -> Result<Self> {
        let m = counts.first().map(|c| c.len()).unwrap_or(0);
        let bins = (0..m as u64)
            .map(|i| (0u32, i * bin_width, (i + 1) * bin_width))
            .collect();
        Self::new(vec!["sim".to_string()], bins, columns, counts)
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column_labels(&self) -> &[String] {
        &self.columns
    }

    pub fn column(&self, idx: usize) -> &[u32] {
        &self.counts[idx]
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == label)
    }

    pub fn bins(&self) -> &[BinCoord] {
        &self.bins
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn chrom_name(&self, id: u32) -> &str {
        &self.chroms[id as usize]
    }

    pub fn chroms(&self) -> &[String] {
        &self.chroms
    }

    /// Remove every bin overlapping any of `excluded` (any overlap drops the
    /// bin) and re-derive segments, so excluded stretches split chains.
    pub fn with_exclusions(&self, excluded: &[GenomicInterval]) -> Result<CountMatrix> {
        let mut by_chrom: HashMap<u32, Vec<(u64, u64)>> = HashMap::new();
        for iv in excluded {
            if iv.end <= iv.start {
                return Err(Error::InvalidParameter(format!(
                    "exclusion interval {}:{}-{} is empty",
                    iv.chrom, iv.start, iv.end
                )));
            }
            if let Some(id) = self.chroms.iter().position(|c| *c == iv.chrom) {
                by_chrom
                    .entry(id as u32)
                    .or_default()
                    .push((iv.start, iv.end));
            }
        }
        for list in by_chrom.values_mut() {
            list.sort_unstable();
        }
        let keep: Vec<bool> = self
            .bins
            .iter()
            .map(|bin| {
                let Some(list) = by_chrom.get(&bin.chrom) else {
                    return true;
                };
                // first interval ending after bin.start; overlap iff it starts before bin.end
                let idx = list.partition_point(|&(_, e)| e <= bin.start);
                list.get(idx).is_none_or(|&(s, _)| s >= bin.end)
            })
            .collect();
        let bins = self
            .bins
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(b, _)| (b.chrom, b.start, b.end))
            .collect();
        let counts = self
            .counts
            .iter()
            .map(|col| {
                col.iter()
                    .zip(&keep)
                    .filter(|(_, &k)| k)
                    .map(|(&v, _)| v)
                    .collect()
            })
            .collect();
        CountMatrix::new(self.chroms.clone(), bins, self.columns.clone(), counts)
    }
}

/// Assign segment ids: a new segment starts at every chromosome change or
/// coordinate gap. Returns the segment ranges.
fn derive_segments(bins: &mut [BinCoord]) -> Vec<Range<usize>> {
    let mut segments = Vec::new();
    let mut start = 0usize;
    for i in 0..bins.len() {
        if i > 0 {
            let prev = bins[i - 1];
            if prev.chrom != bins[i].chrom || prev.end != bins[i].start {
                segments.push(start..i);
                start = i;
            }
        }
        bins[i].segment = segments.len() as u32;
    }
    if start < bins.len() {
        segments.push(start..bins.len());
    }
    segments
}

/// One experimental condition: a protein and/or time point, with the data
/// columns of its replicates. The antibody label is carried through the
/// design; all replicates of a condition are modelled as sharing one latent
/// binding profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    pub label: String,
    pub antibody: String,
    pub replicates: Vec<String>,
}

/// Maps data columns to conditions and replicates.
///
/// Conditions and replicates are kept in sorted label order, so fitted
/// results do not depend on the order columns appear in the input files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentDesign {
    bin_width: u64,
    conditions: Vec<Condition>,
}

impl ExperimentDesign {
    pub fn new(bin_width: u64, mut conditions: Vec<Condition>) -> Result<Self> {
        if bin_width == 0 {
            return Err(Error::InvalidParameter("bin width must be >= 1".into()));
        }
        if conditions.is_empty() {
            return Err(Error::InvalidParameter(
                "design needs at least one condition".into(),
            ));
        }
        for cond in &conditions {
            if cond.replicates.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "condition {:?} has no replicates",
                    cond.label
                )));
            }
            if cond.replicates.iter().any(|r| r.is_empty()) {
                return Err(Error::InvalidParameter(format!(
                    "condition {:?} has an empty replicate label",
                    cond.label
                )));
            }
        }
        // canonical order: conditions by label, replicates by label
        conditions.sort_by(|a, b| a.label.cmp(&b.label));
        for cond in &mut conditions {
            cond.replicates.sort();
        }
        let mut seen = std::collections::HashSet::new();
        for cond in &conditions {
            for r in &cond.replicates {
                if !seen.insert(r.clone()) {
                    return Err(Error::DimensionMismatch(format!(
                        "data column {r:?} mapped more than once"
                    )));
                }
            }
        }
        Ok(Self {
            bin_width,
            conditions,
        })
    }

    /// Single condition wrapping every column of `matrix`, for quick fits
    /// without a design file.
    pub fn single_condition(label: &str, matrix: &CountMatrix) -> Result<Self> {
        Self::new(
            200,
            vec![Condition {
                label: label.to_string(),
                antibody: label.to_string(),
                replicates: matrix.column_labels().to_vec(),
            }],
        )
    }

    pub fn bin_width(&self) -> u64 {
        self.bin_width
    }

    pub fn conditions(&self) -> &[Condition] {
        &self.conditions
    }

    /// Resolve replicate labels against a matrix. Every matrix column must be
    /// claimed by exactly one condition.
    pub fn resolve(&self, matrix: &CountMatrix) -> Result<Vec<Vec<usize>>> {
        let mut claimed = vec![false; matrix.n_columns()];
        let mut resolved = Vec::with_capacity(self.conditions.len());
        for cond in &self.conditions {
            let mut cols = Vec::with_capacity(cond.replicates.len());
            for r in &cond.replicates {
                let idx = matrix.column_index(r).ok_or_else(|| {
                    Error::DimensionMismatch(format!(
                        "design column {r:?} not present in the count matrix"
                    ))
                })?;
                claimed[idx] = true;
                cols.push(idx);
            }
            resolved.push(cols);
        }
        if let Some(unclaimed) = claimed.iter().position(|&c| !c) {
            return Err(Error::DimensionMismatch(format!(
                "count column {:?} is not mapped by the design",
                matrix.column_labels()[unclaimed]
            )));
        }
        Ok(resolved)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten_bin_matrix() -> CountMatrix {
        let bins: Vec<(u32, u64, u64)> = (0..10).map(|i| (0, i * 200, (i + 1) * 200)).collect();
        CountMatrix::new(
            vec!["chr1".into()],
            bins,
            vec!["a".into()],
            vec![(0..10).collect()],
        )
        .unwrap()
    }

    #[test]
    fn contiguous_bins_form_one_segment() {
        let m = ten_bin_matrix();
        assert_eq!(m.segments(), &[0..10]);
        assert!(m.bins().iter().all(|b| b.segment == 0));
    }

    #[test]
    fn gaps_and_chromosome_changes_split_segments() {
        let m = CountMatrix::new(
            vec!["chr1".into(), "chr2".into()],
            vec![(0, 0, 200), (0, 200, 400), (0, 600, 800), (1, 0, 200)],
            vec!["a".into()],
            vec![vec![1, 2, 3, 4]],
        )
        .unwrap();
        assert_eq!(m.segments(), &[0..2, 2..3, 3..4]);
        let segs: Vec<u32> = m.bins().iter().map(|b| b.segment).collect();
        assert_eq!(segs, vec![0, 0, 1, 2]);
    }

    #[test]
    fn unsorted_or_overlapping_bins_rejected() {
        let r = CountMatrix::new(
            vec!["chr1".into()],
            vec![(0, 200, 400), (0, 0, 200)],
            vec!["a".into()],
            vec![vec![1, 2]],
        );
        assert!(r.is_err());
        let r = CountMatrix::new(
            vec!["chr1".into()],
            vec![(0, 0, 300), (0, 200, 400)],
            vec!["a".into()],
            vec![vec![1, 2]],
        );
        assert!(r.is_err());
    }

    #[test]
    fn exclusion_splits_segment() {
        // exclusion covering bins 4..6 (coordinates 800..1400) of a 10-bin segment
        let m = ten_bin_matrix();
        let excl = vec![GenomicInterval {
            chrom: "chr1".into(),
            start: 850,
            end: 1350,
        }];
        let out = m.with_exclusions(&excl).unwrap();
        assert_eq!(out.n_bins(), 7);
        assert_eq!(out.segments(), &[0..4, 4..7]);
        // any overlap drops the bin: 850 clips into bin 4 (800..1000)
        assert_eq!(out.bins()[3].end, 800);
        assert_eq!(out.bins()[4].start, 1400);
    }

    #[test]
    fn partial_overlap_drops_bin() {
        let m = ten_bin_matrix();
        let excl = vec![GenomicInterval {
            chrom: "chr1".into(),
            start: 399,
            end: 400,
        }];
        let out = m.with_exclusions(&excl).unwrap();
        assert_eq!(out.n_bins(), 9);
        assert!(out.bins().iter().all(|b| b.start != 200));
    }

    #[test]
    fn no_exclusions_is_identity() {
        let m = ten_bin_matrix();
        let out = m.with_exclusions(&[]).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn design_canonicalizes_order_and_checks_mapping() {
        let m = CountMatrix::synthetic(
            vec!["r2".into(), "r1".into()],
            vec![vec![0, 1], vec![2, 3]],
            200,
        )
        .unwrap();
        let d = ExperimentDesign::new(
            200,
            vec![Condition {
                label: "c".into(),
                antibody: "ab".into(),
                replicates: vec!["r2".into(), "r1".into()],
            }],
        )
        .unwrap();
        // replicates sorted by label regardless of declared order
        assert_eq!(d.conditions()[0].replicates, vec!["r1", "r2"]);
        let resolved = d.resolve(&m).unwrap();
        assert_eq!(resolved, vec![vec![1, 0]]);

        let bad = ExperimentDesign::new(
            200,
            vec![Condition {
                label: "c".into(),
                antibody: "ab".into(),
                replicates: vec!["r1".into()],
            }],
        )
        .unwrap();
        let err = bad.resolve(&m).unwrap_err();
        assert!(err.to_string().contains("r2"), "{err}");
    }

    #[test]
    fn duplicate_column_mapping_rejected() {
        let r = ExperimentDesign::new(
            200,
            vec![
                Condition {
                    label: "c1".into(),
                    antibody: "ab".into(),
                    replicates: vec!["r1".into()],
                },
                Condition {
                    label: "c2".into(),
                    antibody: "ab".into(),
                    replicates: vec!["r1".into()],
                },
            ],
        );
        assert!(r.is_err());
    }
}
