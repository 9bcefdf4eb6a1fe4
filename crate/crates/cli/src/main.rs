//! `voxrel` command-line pipeline.
//!
//! Every command echoes its fully resolved configuration to stderr. Failures
//! print a single `error: <code>: <message>` line and exit with status 1;
//! malformed command lines use the code `usage` and exit with status 2.

mod mapfile;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use voxrel::atlas::{aggregate_relevance, format_table, parse_region_names, top_k, AggregationMode, Atlas};
use voxrel::attribution::{
    average_maps, guided_backprop_map, lrp_map, occlusion_map, region_occlusion_map, sensitivity_map, LrpRule,
    Method, OcclusionConfig, DEFAULT_LRP_EPSILON,
};
use voxrel::io::{
    generate_synthetic, label_indices, normalize, read_manifest, read_volume, render_signed, render_slice,
    write_pgm, write_synthetic, Axis, Record, SliceIndex, Split, SplitFractions, SynthesisConfig,
};
use voxrel::model::{
    evaluate, init_network, load_weights, load_weights_embedded, save_weights, train_with_validation, EpochMetrics,
    Network, NetworkSpec, Sample, TrainConfig,
};
use voxrel::{Error, Result, Tensor};

use mapfile::{read_map, write_map};

#[derive(Parser, Debug)]
#[command(name = "voxrel", version, about = "Volumetric CNN classification and relevance attribution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with a planted class effect.
    Synth(SynthArgs),
    /// Train a network on the train split of a manifest.
    Train(TrainArgs),
    /// Print the predicted class and class probabilities for one volume.
    Classify(ClassifyArgs),
    /// Compute an attribution map for one volume.
    Attribute(AttributeArgs),
    /// Average attribution maps produced with identical parameters.
    Average(AverageArgs),
    /// Rank atlas regions by relevance and print a table.
    Aggregate(AggregateArgs),
    /// Render one slice of a volume or map as a PGM image.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Volume extent, `N` or `DxHxW`.
    #[arg(long, default_value = "16", value_parser = parse_triple)]
    extent: [usize; 3],
    #[arg(long, default_value_t = 8)]
    regions: usize,
    /// Atlas label receiving the class effect.
    #[arg(long, default_value_t = 6)]
    planted_region: u32,
    #[arg(long, default_value_t = 3.0)]
    effect: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Amplitude of the smooth anatomical background field.
    #[arg(long, default_value_t = 0.5)]
    background: f64,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    /// Comma-separated class names; the effect is planted in the second.
    #[arg(long, default_value = "CN,AD", value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
    #[arg(long, default_value_t = 0.1)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Network description in the layer-per-line text format.
    #[arg(long)]
    spec: PathBuf,
    /// Output weight file.
    #[arg(long)]
    out: PathBuf,
    /// Output per-epoch metrics CSV.
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    lr_decay: f64,
    #[arg(long, default_value_t = 7)]
    decay_period: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    /// Shuffling seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Weight initialization seed.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
    /// Z-score each volume over its foreground before use.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args, Debug)]
struct ModelInput {
    #[arg(long)]
    weights: PathBuf,
    /// Optional network description the weight file must match.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    volume: PathBuf,
    /// Z-score the volume over its foreground before use.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args, Debug)]
struct ClassifyArgs {
    #[command(flatten)]
    input: ModelInput,
}

#[derive(Args, Debug)]
struct AttributeArgs {
    #[command(flatten)]
    input: ModelInput,
    /// sensitivity, guided, occlusion, region-occlusion or lrp.
    #[arg(long)]
    method: Method,
    /// Output map (float64 VVOL, with a `.meta` sidecar).
    #[arg(long)]
    out: PathBuf,
    /// Class name or index; defaults to the predicted class.
    #[arg(long)]
    target: Option<String>,
    /// Occlusion patch, `N` or `DxHxW`.
    #[arg(long, default_value = "4", value_parser = parse_triple)]
    patch: [usize; 3],
    /// Occlusion stride, `N` or `DxHxW`.
    #[arg(long, default_value = "2", value_parser = parse_triple)]
    stride: [usize; 3],
    /// Fill value for occluded voxels.
    #[arg(long, default_value_t = 0.0)]
    baseline: f64,
    /// Label volume, required for region-occlusion.
    #[arg(long)]
    atlas: Option<PathBuf>,
    /// `label<TAB>name` region names for --atlas; labels are numbered if absent.
    #[arg(long)]
    names: Option<PathBuf>,
    /// LRP rule: epsilon or zplus.
    #[arg(long, default_value = "epsilon")]
    rule: LrpRule,
    #[arg(long, default_value_t = DEFAULT_LRP_EPSILON)]
    epsilon: f64,
}

#[derive(Args, Debug)]
struct AverageArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(required = true)]
    maps: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct AggregateArgs {
    #[arg(long)]
    atlas: PathBuf,
    /// `label<TAB>name` region names.
    #[arg(long)]
    names: PathBuf,
    /// Regions listed per map.
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    /// abs, positive or signed; defaults per method.
    #[arg(long)]
    mode: Option<AggregationMode>,
    /// One table column per map.
    #[arg(required = true)]
    maps: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    /// Volume or attribution map.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// depth, height or width.
    #[arg(long, default_value = "depth")]
    axis: Axis,
    /// Slice number or `middle`.
    #[arg(long, default_value = "middle")]
    index: SliceIndex,
    /// Symmetric gray scale around zero, for signed maps.
    #[arg(long)]
    signed: bool,
}

fn parse_triple(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts = s
        .split('x')
        .map(|p| p.parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    match parts[..] {
        [n] => Ok([n; 3]),
        [d, h, w] => Ok([d, h, w]),
        _ => Err(format!("expected N or DxHxW, got {s:?}")),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn read_spec(path: &Path) -> Result<NetworkSpec> {
    NetworkSpec::parse(&fs::read_to_string(path).map_err(io_err(path))?)
}

fn load_network(input: &ModelInput) -> Result<Network> {
    match &input.spec {
        Some(spec) => load_weights(&read_spec(spec)?, &input.weights),
        None => load_weights_embedded(&input.weights),
    }
}

fn load_atlas(path: &Path, names: Option<&Path>) -> Result<Atlas> {
    let labels = read_volume(path)?;
    let names = match names {
        Some(n) => parse_region_names(&fs::read_to_string(n).map_err(io_err(n))?)?,
        None => labels
            .data()
            .iter()
            .filter(|&&v| v > 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64)
            .map(|&v| (v as u32, format!("label_{v}")))
            .collect(),
    };
    Atlas::from_tensor(&labels, names)
}

fn load_volume(path: &Path, z_score: bool) -> Result<Tensor> {
    let v = read_volume(path)?;
    if z_score {
        normalize(&v)
    } else {
        Ok(v)
    }
}

/// Reshapes a `(D, H, W)` volume to the network's per-sample input shape.
fn as_input(net: &Network, volume: &Tensor) -> Result<Tensor> {
    let want = &net.spec().input_shape;
    if want.iter().product::<usize>() != volume.len() || (want.len() == 4 && want[1..] != *volume.shape()) {
        return Err(Error::SpecMismatch(format!(
            "volume shape {:?} does not fit network input {:?}",
            volume.shape(),
            want
        )));
    }
    volume.reshape(want)
}

fn command_line() -> String {
    std::iter::once("voxrel".to_string())
        .chain(std::env::args().skip(1))
        .collect::<Vec<_>>()
        .join(" ")
}

fn synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthesisConfig {
        extent: a.extent,
        region_count: a.regions,
        planted_region_label: a.planted_region,
        class_effect_magnitude: a.effect,
        noise_sigma: a.noise,
        background_amplitude: a.background,
        samples_per_class: a.per_class,
        class_names: a.classes.clone(),
        rng_seed: a.seed,
    };
    let ds = generate_synthetic(&cfg)?;
    let fractions = SplitFractions {
        test: a.test_fraction,
        val: a.val_fraction,
    };
    let records = write_synthetic(&ds, &a.out, fractions, a.split_seed)?;
    let names: Vec<&str> = a.classes.iter().map(String::as_str).collect();
    let spec = NetworkSpec::desk_default_for(a.extent, &names)?;
    write_text(&a.out.join("network.cfg"), &spec.to_text())?;
    for split in [Split::Train, Split::Val, Split::Test] {
        let n = records.iter().filter(|r| r.split == Some(split)).count();
        println!("{split}: {n} subjects");
    }
    println!("planted region: {}", ds.atlas.name(a.planted_region).unwrap_or("?"));
    Ok(())
}

fn load_samples(records: &[&Record], labels: &[usize], base: &Path, net: &Network, z: bool) -> Result<Vec<Sample>> {
    records
        .iter()
        .zip(labels)
        .map(|(r, &label)| {
            let volume = as_input(net, &load_volume(&base.join(&r.path), z)?)?;
            Ok(Sample { volume, label })
        })
        .collect()
}

fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,learning_rate,loss,accuracy,val_accuracy\n");
    for m in metrics {
        let val = m.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{val}\n", m.epoch, m.learning_rate, m.loss, m.accuracy));
    }
    out
}

fn train(a: &TrainArgs) -> Result<()> {
    let spec = read_spec(&a.spec)?;
    let records = read_manifest(&a.manifest)?;
    let labels = label_indices(&records, &spec.class_names)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let net = init_network(spec, a.init_seed)?;
    let subset = |want: &[Option<Split>]| -> Result<Vec<Sample>> {
        let (rs, ls): (Vec<&Record>, Vec<usize>) = records
            .iter()
            .zip(&labels)
            .filter(|(r, _)| want.contains(&r.split))
            .unzip();
        load_samples(&rs, &ls, base, &net, a.normalize)
    };
    let train_set = subset(&[Some(Split::Train), None])?;
    let val_set = subset(&[Some(Split::Val)])?;
    let test_set = subset(&[Some(Split::Test)])?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        lr_decay_factor: a.lr_decay,
        decay_period_epochs: a.decay_period,
        batch_size: a.batch_size,
        epochs: a.epochs,
        rng_seed: a.seed,
        l2_weight_decay: a.l2,
    };
    let val = (!val_set.is_empty()).then_some(val_set.as_slice());
    let (trained, metrics) = train_with_validation(&net, &train_set, val, &cfg)?;
    save_weights(&trained, &a.out)?;
    write_text(&a.metrics, &metrics_csv(&metrics))?;
    if let Some(last) = metrics.last() {
        println!("train loss: {:.4}", last.loss);
        println!("train accuracy: {:.4}", last.accuracy);
    }
    if !test_set.is_empty() {
        println!("test accuracy: {:.4}", evaluate(&trained, &test_set)?.accuracy);
    }
    Ok(())
}

fn classify(a: &ClassifyArgs) -> Result<()> {
    let net = load_network(&a.input)?;
    let x = as_input(&net, &load_volume(&a.input.volume, a.input.normalize)?)?;
    let p = net.predict(&x)?;
    println!("class: {}", p.class_name);
    for (name, prob) in net.spec().class_names.iter().zip(&p.probabilities) {
        println!("{name}: {prob:.4}");
    }
    Ok(())
}

fn resolve_target(net: &Network, target: Option<&str>, volume: &Tensor) -> Result<usize> {
    let spec = net.spec();
    match target {
        None => Ok(net.predict(&as_input(net, volume)?)?.class_index),
        Some(t) => spec
            .class_index(t)
            .or_else(|| t.parse().ok().filter(|&i| i < spec.num_classes()))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown target class {t:?} (classes: {})",
                    spec.class_names.join(", ")
                ))
            }),
    }
}

fn attribute(a: &AttributeArgs) -> Result<()> {
    let net = load_network(&a.input)?;
    let volume = load_volume(&a.input.volume, a.input.normalize)?;
    as_input(&net, &volume)?;
    let target = resolve_target(&net, a.target.as_deref(), &volume)?;
    let map = match a.method {
        Method::Sensitivity => sensitivity_map(&net, &volume, target)?,
        Method::GuidedBackprop => guided_backprop_map(&net, &volume, target)?,
        Method::Occlusion => {
            let cfg = OcclusionConfig {
                patch: a.patch,
                stride: a.stride,
                baseline: a.baseline,
            };
            occlusion_map(&net, &volume, target, &cfg)?
        }
        Method::RegionOcclusion => {
            let path = a
                .atlas
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter("region-occlusion needs --atlas".into()))?;
            let atlas = load_atlas(path, a.names.as_deref())?;
            region_occlusion_map(&net, &volume, target, &atlas, a.baseline)?
        }
        Method::Lrp => lrp_map(&net, &volume, target, a.rule, a.epsilon)?,
    };
    let target_name = &net.spec().class_names[target];
    write_map(&map, target_name, &command_line(), &a.out)?;
    println!("{} map for class {target_name} written to {}", map.method, a.out.display());
    Ok(())
}

fn average(a: &AverageArgs) -> Result<()> {
    let stored = a.maps.iter().map(|p| read_map(p)).collect::<Result<Vec<_>>>()?;
    let name = stored[0].target_name.clone();
    let maps: Vec<_> = stored.into_iter().map(|s| s.map).collect();
    let mean = average_maps(&maps)?;
    write_map(&mean, &name, &command_line(), &a.out)?;
    println!("averaged {} maps into {}", mean.count(), a.out.display());
    Ok(())
}

fn aggregate(a: &AggregateArgs) -> Result<()> {
    let atlas = load_atlas(&a.atlas, Some(&a.names))?;
    let mut reports = Vec::with_capacity(a.maps.len());
    for path in &a.maps {
        let map = read_map(path)?.map;
        let mode = a.mode.unwrap_or_else(|| AggregationMode::default_for(map.method));
        reports.push(top_k(&aggregate_relevance(&map, &atlas, mode)?, a.k)?);
    }
    print!("{}", format_table(&reports));
    Ok(())
}

fn render(a: &RenderArgs) -> Result<()> {
    let v = read_volume(&a.input)?;
    let image = if a.signed {
        render_signed(&v, a.axis, a.index)?
    } else {
        render_slice(&v, a.axis, a.index)?
    };
    write_pgm(&image, &a.out)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Classify(a) => classify(a),
        Command::Attribute(a) => attribute(a),
        Command::Average(a) => average(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Render(a) => render(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            let mut lines = text.lines();
            let first = lines.next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            for line in lines.filter(|l| !l.trim().is_empty()) {
                eprintln!("{line}");
            }
            return ExitCode::from(2);
        }
    };
    eprintln!("config: {:?}", cli.command);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.code(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
