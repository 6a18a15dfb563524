//! Viewpoint distribution tables per subset, region and source class.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{CurationError, Result};
use crate::record::{BodyView, FaceView, SourceClass, Subset, VideoRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    Face,
    Body,
}

impl Region {
    pub fn labels(self) -> &'static [&'static str] {
        match self {
            Region::Face => &["F", "L", "R", "U", "D"],
            Region::Body => &["F", "S", "B"],
        }
    }

    /// Validates a raw label for this region.
    pub fn check_label(self, id: &str, label: &str) -> Result<()> {
        let known = match self {
            Region::Face => FaceView::parse(label).is_some(),
            Region::Body => BodyView::parse(label).is_some(),
        };
        if known {
            Ok(())
        } else {
            Err(CurationError::Validation {
                id: id.to_string(),
                detail: format!("unknown {self:?} view label {label:?}"),
            })
        }
    }
}

/// One labeled reference image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewSample {
    pub id: String,
    pub subset: Option<Subset>,
    pub region: Region,
    pub source: SourceClass,
    pub label: String,
}

impl ViewSample {
    /// The face and body crops of a source video.
    pub fn from_record(rec: &VideoRecord) -> [ViewSample; 2] {
        let make = |region, label: &str| ViewSample {
            id: rec.id.clone(),
            subset: rec.subset,
            region,
            source: rec.source,
            label: label.to_string(),
        };
        [
            make(Region::Face, rec.face_view.as_str()),
            make(Region::Body, rec.body_view.as_str()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelShare {
    pub label: String,
    pub count: u64,
    /// Percentage rounded to one decimal.
    pub percent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    /// None aggregates every sample.
    pub subset: Option<Subset>,
    pub region: Region,
    pub source: SourceClass,
    pub quantity: u64,
    pub shares: Vec<LabelShare>,
}

impl StatsRow {
    /// Distribution in the form `F:50.0 / S:25.0 / B:25.0`.
    pub fn distribution(&self) -> String {
        self.shares
            .iter()
            .map(|s| format!("{}:{:.1}", s.label, s.percent))
            .collect::<Vec<_>>()
            .join(" / ")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViewpointStats {
    pub rows: Vec<StatsRow>,
}

type Key = (u8, Region, SourceClass);

fn subset_rank(s: Option<Subset>) -> u8 {
    match s {
        Some(Subset::A) => 0,
        Some(Subset::B) => 1,
        Some(Subset::C) => 2,
        None => 3,
    }
}

fn subset_of(rank: u8) -> Option<Subset> {
    [Some(Subset::A), Some(Subset::B), Some(Subset::C), None][rank as usize]
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

impl ViewpointStats {
    pub fn from_records(records: &[VideoRecord]) -> Self {
        let samples: Vec<ViewSample> = records.iter().flat_map(ViewSample::from_record).collect();
        Self::from_samples(&samples).expect("record labels are typed")
    }

    /// Rows for each subset present, then an aggregate over all samples.
    /// Empty groups produce no row.
    pub fn from_samples(samples: &[ViewSample]) -> Result<Self> {
        let mut counts: BTreeMap<Key, BTreeMap<&str, u64>> = BTreeMap::new();
        for s in samples {
            s.region.check_label(&s.id, &s.label)?;
            let mut bump = |rank| {
                *counts
                    .entry((rank, s.region, s.source))
                    .or_default()
                    .entry(s.label.as_str())
                    .or_default() += 1;
            };
            if s.subset.is_some() {
                bump(subset_rank(s.subset));
            }
            bump(subset_rank(None));
        }
        let rows = counts
            .into_iter()
            .map(|((rank, region, source), by_label)| {
                let quantity: u64 = by_label.values().sum();
                let shares = region
                    .labels()
                    .iter()
                    .map(|&label| {
                        let count = by_label.get(label).copied().unwrap_or(0);
                        LabelShare {
                            label: label.to_string(),
                            count,
                            percent: round1(100.0 * count as f64 / quantity as f64),
                        }
                    })
                    .collect();
                StatsRow {
                    subset: subset_of(rank),
                    region,
                    source,
                    quantity,
                    shares,
                }
            })
            .collect();
        Ok(ViewpointStats { rows })
    }

    pub fn row(
        &self,
        subset: Option<Subset>,
        region: Region,
        source: SourceClass,
    ) -> Option<&StatsRow> {
        self.rows
            .iter()
            .find(|r| r.subset == subset && r.region == region && r.source == source)
    }

    /// Plain-text table: Subset, Region, Source, Quantity, distribution.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<7} {:<6} {:<10} {:>9}  Viewpoint Distribution (%)",
            "Subset", "Region", "Source", "Quantity"
        );
        for r in &self.rows {
            let subset = r
                .subset
                .map_or_else(|| "All".to_string(), |s| s.to_string());
            let _ = writeln!(
                out,
                "{:<7} {:<6} {:<10} {:>9}  {}",
                subset,
                format!("{:?}", r.region),
                r.source.to_string(),
                format_quantity(r.quantity),
                r.distribution()
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

/// Compact counts: 149 → "149", 149_000 → "149K", 1_050_000 → "1.05M".
pub fn format_quantity(n: u64) -> String {
    if n < 1_000 {
        n.to_string()
    } else if n < 1_000_000 {
        format!("{:.0}K", n as f64 / 1e3)
    } else {
        format!("{:.2}M", n as f64 / 1e6)
    }
}
