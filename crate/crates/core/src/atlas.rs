//! Labeled region atlases and per-region relevance reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use crate::attribution::{AttributionMap, Method};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Integer label volume; label 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atlas {
    shape: [usize; 3],
    labels: Vec<u32>,
    names: BTreeMap<u32, String>,
}

impl Atlas {
    pub fn new(shape: [usize; 3], labels: Vec<u32>, names: BTreeMap<u32, String>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n == 0 || labels.len() != n {
            return Err(Error::InvalidAtlas(format!(
                "{} labels for shape {shape:?}",
                labels.len()
            )));
        }
        if names.contains_key(&0) {
            return Err(Error::InvalidAtlas("label 0 is reserved for background".into()));
        }
        let mut seen = HashSet::new();
        for name in names.values() {
            if name.trim().is_empty() {
                return Err(Error::InvalidAtlas("empty region name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidAtlas(format!("duplicate region name {name:?}")));
            }
        }
        let mut any = false;
        for &l in &labels {
            if l != 0 {
                any = true;
                if !names.contains_key(&l) {
                    return Err(Error::InvalidAtlas(format!("label {l} has no name")));
                }
            }
        }
        if !any {
            return Err(Error::InvalidAtlas("no non-background voxels".into()));
        }
        Ok(Atlas { shape, labels, names })
    }

    /// Converts a volume of non-negative integral values into an atlas.
    pub fn from_tensor(volume: &Tensor, names: BTreeMap<u32, String>) -> Result<Self> {
        let shape = match volume.shape() {
            [d, h, w] => [*d, *h, *w],
            other => return Err(Error::InvalidAtlas(format!("label volume must be 3D, got {other:?}"))),
        };
        let labels = volume
            .data()
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                    Ok(v as u32)
                } else {
                    Err(Error::InvalidAtlas(format!("label value {v} is not a non-negative integer")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, labels, names)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn names(&self) -> &BTreeMap<u32, String> {
        &self.names
    }

    pub fn name(&self, label: u32) -> Option<&str> {
        self.names.get(&label).map(String::as_str)
    }

    pub fn label_of(&self, name: &str) -> Option<u32> {
        self.names.iter().find(|(_, n)| *n == name).map(|(l, _)| *l)
    }

    /// Labels that occur in the volume, ascending, background excluded.
    pub fn regions(&self) -> Vec<u32> {
        region_masks(self).into_keys().collect()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(self.shape.to_vec(), self.labels.iter().map(|&l| l as f64).collect())
    }
}

/// Voxel indices of every present region; disjoint, background excluded.
pub fn region_masks(atlas: &Atlas) -> BTreeMap<u32, Vec<usize>> {
    let mut masks: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in atlas.labels.iter().enumerate() {
        if l != 0 {
            masks.entry(l).or_default().push(i);
        }
    }
    masks
}

/// Parses a `label<TAB>name` sidecar; blank lines and `#` comments are skipped.
pub fn parse_region_names(text: &str) -> Result<BTreeMap<u32, String>> {
    let mut names = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let perr = |msg: String| Error::Parse { line: n + 1, msg };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (label, name) = line
            .split_once('\t')
            .ok_or_else(|| perr("expected `label<TAB>name`".into()))?;
        let label: u32 = label
            .trim()
            .parse()
            .map_err(|e| perr(format!("bad label {label:?}: {e}")))?;
        let name = name.trim_end_matches('\r');
        if names.insert(label, name.to_string()).is_some() {
            return Err(perr(format!("label {label} listed twice")));
        }
    }
    Ok(names)
}

pub fn format_region_names(names: &BTreeMap<u32, String>) -> String {
    let mut out = String::new();
    for (l, n) in names {
        writeln!(out, "{l}\t{n}").unwrap();
    }
    out
}

/// Transform applied to voxel relevance before summation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    Abs,
    Positive,
    Signed,
}

impl AggregationMode {
    /// Absolute value for gradient maps, positive part for occlusion and LRP.
    pub fn default_for(method: Method) -> Self {
        match method {
            Method::Sensitivity | Method::GuidedBackprop => AggregationMode::Abs,
            Method::Occlusion | Method::RegionOcclusion | Method::Lrp => AggregationMode::Positive,
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            AggregationMode::Abs => v.abs(),
            AggregationMode::Positive => v.max(0.0),
            AggregationMode::Signed => v,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AggregationMode::Abs => "abs",
            AggregationMode::Positive => "positive",
            AggregationMode::Signed => "signed",
        }
    }
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abs" => Ok(AggregationMode::Abs),
            "positive" => Ok(AggregationMode::Positive),
            "signed" => Ok(AggregationMode::Signed),
            _ => Err(Error::InvalidParameter(format!(
                "unknown aggregation mode {s:?} (expected abs, positive or signed)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionEntry {
    pub label: u32,
    pub name: String,
    pub relevance: f64,
    /// Unrounded share of the total, in percent.
    pub percent: f64,
}

impl fmt::Display for RegionEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({}%)", self.name, format_percent(self.percent))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub method: Method,
    pub mode: AggregationMode,
    /// Descending by percentage, ties by name ascending.
    pub entries: Vec<RegionEntry>,
    pub total_relevance: f64,
    /// Number of regions before truncation.
    pub region_count: usize,
    /// Set when the total is zero and all percentages were forced to zero.
    pub degenerate: bool,
}

impl RegionReport {
    pub fn k(&self) -> usize {
        self.entries.len()
    }

    /// One `Name (NN.NN%)` line per retained region.
    pub fn lines(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.to_string()).collect()
    }
}

/// Rounds half-up to two decimals. Values within 1e-9 (relative) below a
/// half are treated as the half, so binary representation error of decimal
/// inputs such as `0.145` does not flip the rounding direction. Negative
/// values (signed mode only) round symmetrically.
pub fn round_half_up_2(value: f64) -> f64 {
    let scaled = value.abs() * 100.0;
    let nudge = 1e-9 * scaled.max(1.0);
    value.signum() * (scaled + 0.5 + nudge).floor() / 100.0 + 0.0
}

pub fn format_percent(value: f64) -> String {
    format!("{:.2}", round_half_up_2(value))
}

fn check_shape(map: &AttributionMap, atlas: &Atlas) -> Result<()> {
    if map.values.shape() != atlas.shape.as_slice() {
        return Err(Error::mismatch(
            "aggregate_relevance",
            "spatial shape",
            format!("{:?}", atlas.shape),
            format!("{:?}", map.values.shape()),
        ));
    }
    Ok(())
}

/// Sums transformed relevance per region and converts to percentages of the total.
pub fn aggregate_relevance(map: &AttributionMap, atlas: &Atlas, mode: AggregationMode) -> Result<RegionReport> {
    check_shape(map, atlas)?;
    let values = map.values.data();
    let mut entries: Vec<RegionEntry> = region_masks(atlas)
        .into_iter()
        .map(|(label, voxels)| RegionEntry {
            label,
            name: atlas.names[&label].clone(),
            relevance: voxels.iter().map(|&i| mode.apply(values[i])).sum(),
            percent: 0.0,
        })
        .collect();
    let total: f64 = entries.iter().map(|e| e.relevance).sum();
    let degenerate = total == 0.0;
    if !degenerate {
        for e in &mut entries {
            e.percent = e.relevance / total * 100.0;
        }
    }
    sort_entries(&mut entries);
    Ok(RegionReport {
        method: map.method,
        mode,
        region_count: entries.len(),
        entries,
        total_relevance: total,
        degenerate,
    })
}

fn sort_entries(entries: &mut [RegionEntry]) {
    entries.sort_by(|a, b| {
        b.percent
            .partial_cmp(&a.percent)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| b.relevance.partial_cmp(&a.relevance).unwrap_or(std::cmp::Ordering::Equal))
            .then_with(|| a.name.cmp(&b.name))
    });
}

/// First `k` entries under the report ordering; `k` past the end keeps all.
pub fn top_k(report: &RegionReport, k: usize) -> Result<RegionReport> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let mut out = report.clone();
    sort_entries(&mut out.entries);
    out.entries.truncate(k);
    Ok(out)
}

/// Side-by-side columns, one per report, headed by the method title.
pub fn format_table(reports: &[RegionReport]) -> String {
    let columns: Vec<(String, Vec<String>)> = reports
        .iter()
        .map(|r| (r.method.title().to_string(), r.lines()))
        .collect();
    let widths: Vec<usize> = columns
        .iter()
        .map(|(h, lines)| lines.iter().map(|l| l.chars().count()).chain([h.chars().count()]).max().unwrap())
        .collect();
    let rows = columns.iter().map(|(_, l)| l.len()).max().unwrap_or(0);
    let mut out = String::new();
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    let header: Vec<String> = columns
        .iter()
        .zip(&widths)
        .map(|((h, _), w)| format!("{h:<w$}"))
        .collect();
    writeln!(out, "| {} |", header.join(" | ")).unwrap();
    writeln!(out, "|-{}-|", rule.join("-|-")).unwrap();
    for r in 0..rows {
        let cells: Vec<String> = columns
            .iter()
            .zip(&widths)
            .map(|((_, lines), w)| format!("{:<w$}", lines.get(r).map(String::as_str).unwrap_or("")))
            .collect();
        writeln!(out, "| {} |", cells.join(" | ")).unwrap();
    }
    out
}
