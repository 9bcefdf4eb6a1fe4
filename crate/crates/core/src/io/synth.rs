//! Planted-signal datasets with a known ground-truth region.
//!
//! The atlas is an axis-aligned grid of boxes. Every volume is a smooth random
//! field (a few low-frequency cosines) plus white noise, both zero-mean;
//! volumes of the second class additionally carry a constant offset inside the
//! planted region.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::atlas::{format_region_names, Atlas};
use crate::error::{Error, Result};
use crate::io::manifest::{split_manifest, write_manifest, Record, SplitFractions};
use crate::io::{write_volume, Dtype, VolumeFormat};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisConfig {
    /// `(depth, height, width)`
    pub extent: [usize; 3],
    pub region_count: usize,
    pub planted_region_label: u32,
    pub class_effect_magnitude: f64,
    pub noise_sigma: f64,
    /// Standard deviation of the smooth background field.
    pub background_amplitude: f64,
    pub samples_per_class: usize,
    /// Exactly two names: the reference class, then the class carrying the effect.
    pub class_names: Vec<String>,
    pub rng_seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            extent: [16; 3],
            region_count: 8,
            planted_region_label: 6,
            class_effect_magnitude: 3.0,
            noise_sigma: 1.0,
            background_amplitude: 0.5,
            samples_per_class: 40,
            class_names: vec!["CN".into(), "AD".into()],
            rng_seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.extent.contains(&0) {
            return bad(format!("extent {:?} must be positive", self.extent));
        }
        if self.region_count == 0 {
            return bad("region_count must be positive".into());
        }
        if self.planted_region_label == 0 || self.planted_region_label as usize > self.region_count {
            return bad(format!(
                "planted region {} outside 1..={}",
                self.planted_region_label, self.region_count
            ));
        }
        if !(self.class_effect_magnitude >= 0.0 && self.class_effect_magnitude.is_finite()) {
            return bad("class effect magnitude must be finite and non-negative".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative".into());
        }
        if !(self.background_amplitude >= 0.0 && self.background_amplitude.is_finite()) {
            return bad("background amplitude must be finite and non-negative".into());
        }
        if self.samples_per_class == 0 {
            return bad("samples_per_class must be positive".into());
        }
        if self.class_names.len() != 2 || self.class_names[0] == self.class_names[1] {
            return bad(format!("need two distinct class names, got {:?}", self.class_names));
        }
        grid_for(self.region_count, self.extent).map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub volumes: Vec<Tensor>,
    /// Class index per volume.
    pub labels: Vec<usize>,
    pub subject_ids: Vec<String>,
    pub atlas: Atlas,
    pub class_names: Vec<String>,
}

/// Most cube-like `(gd, gh, gw)` with `gd·gh·gw = n` that fits the extent.
fn grid_for(n: usize, extent: [usize; 3]) -> Result<[usize; 3]> {
    let mut best: Option<([usize; 3], usize)> = None;
    for a in 1..=n {
        if !n.is_multiple_of(a) {
            continue;
        }
        for b in 1..=n / a {
            if !(n / a).is_multiple_of(b) {
                continue;
            }
            let g = [a, b, n / a / b];
            if g.iter().zip(extent).any(|(g, e)| *g > e) {
                continue;
            }
            let spread = g.iter().max().unwrap() - g.iter().min().unwrap();
            if best.is_none_or(|(_, s)| spread < s) {
                best = Some((g, spread));
            }
        }
    }
    best.map(|(g, _)| g).ok_or_else(|| {
        Error::InvalidParameter(format!("cannot partition extent {extent:?} into {n} boxes"))
    })
}

/// Box-partition atlas with regions `Region_1..Region_n` in row-major grid order.
pub fn box_atlas(extent: [usize; 3], region_count: usize) -> Result<Atlas> {
    let grid = grid_for(region_count, extent)?;
    let cell = |axis: usize, i: usize| i * grid[axis] / extent[axis];
    let [d, h, w] = extent;
    let mut labels = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let idx = (cell(0, z) * grid[1] + cell(1, y)) * grid[2] + cell(2, x);
                labels.push(idx as u32 + 1);
            }
        }
    }
    let names: BTreeMap<u32, String> = (1..=region_count as u32).map(|l| (l, format!("Region_{l}"))).collect();
    Atlas::new(extent, labels, names)
}

fn smooth_field(rng: &mut ChaCha8Rng, extent: [usize; 3], amplitude: f64) -> Vec<f64> {
    const COMPONENTS: usize = 3;
    let [d, h, w] = extent;
    let mut field = vec![0.0; d * h * w];
    if amplitude == 0.0 {
        return field;
    }
    // a cosine with random phase has variance a²/2
    let amp = Normal::new(0.0, amplitude * (2.0 / COMPONENTS as f64).sqrt()).unwrap();
    for _ in 0..COMPONENTS {
        let f: [f64; 3] = std::array::from_fn(|_| rng.random_range(0..=2) as f64);
        let a = amp.sample(rng);
        let phase = rng.random_range(0.0..TAU);
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let t = f[0] * z as f64 / d as f64 + f[1] * y as f64 / h as f64 + f[2] * x as f64 / w as f64;
                    field[(z * h + y) * w + x] += a * (TAU * t + phase).cos();
                }
            }
        }
    }
    field
}

/// Generates `2 · samples_per_class` volumes, alternating between the classes.
pub fn generate_synthetic(cfg: &SynthesisConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let atlas = box_atlas(cfg.extent, cfg.region_count)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).unwrap();
    let n = 2 * cfg.samples_per_class;
    let (mut volumes, mut labels, mut subject_ids) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let label = i % 2;
        let mut v = smooth_field(&mut rng, cfg.extent, cfg.background_amplitude);
        for (x, &region) in v.iter_mut().zip(atlas.labels()) {
            *x += noise.sample(&mut rng);
            if label == 1 && region == cfg.planted_region_label {
                *x += cfg.class_effect_magnitude;
            }
        }
        volumes.push(Tensor::new(cfg.extent.to_vec(), v)?);
        labels.push(label);
        subject_ids.push(format!("sub-{:04}", i + 1));
    }
    Ok(SyntheticDataset {
        volumes,
        labels,
        subject_ids,
        atlas,
        class_names: cfg.class_names.clone(),
    })
}

/// Writes `volumes/<subject>.vvol`, `atlas.vvol`, `atlas_names.tsv` and
/// `manifest.csv` (paths relative to `dir`, split by subject).
pub fn write_synthetic(
    ds: &SyntheticDataset,
    dir: impl AsRef<Path>,
    fractions: SplitFractions,
    split_seed: u64,
) -> Result<Vec<Record>> {
    let dir = dir.as_ref();
    let vol_dir = dir.join("volumes");
    fs::create_dir_all(&vol_dir).map_err(|e| Error::io(&vol_dir, e))?;
    let mut records = Vec::with_capacity(ds.volumes.len());
    for ((v, &label), id) in ds.volumes.iter().zip(&ds.labels).zip(&ds.subject_ids) {
        let rel = format!("volumes/{id}.vvol");
        write_volume(v, dir.join(&rel), VolumeFormat::Vvol, Dtype::F64)?;
        records.push(Record {
            subject_id: id.clone(),
            path: rel,
            label: ds.class_names[label].clone(),
            split: None,
        });
    }
    write_volume(&ds.atlas.to_tensor(), dir.join("atlas.vvol"), VolumeFormat::Vvol, Dtype::I16)?;
    let names_path = dir.join("atlas_names.tsv");
    fs::write(&names_path, format_region_names(ds.atlas.names())).map_err(|e| Error::io(&names_path, e))?;
    let records = split_manifest(&records, fractions, split_seed)?;
    write_manifest(&records, dir.join("manifest.csv"))?;
    Ok(records)
}
