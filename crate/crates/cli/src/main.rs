//! `cskd`: carrier generation, watermark embedding, distribution, extraction and
//! authentication from the command line.
//!
//! Exit status is 0 on success, 1 on configuration or contract errors and 2 on
//! transport or parse errors.

use std::io;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use cskd::attacks::{apply_attack, detection_rate, AttackKind, AttackSpec, DetectionScenario};
use cskd::evaluation::{
    attack_table, ber_sweep, poisson_gain_for_mean_count, standard_attacks, AttackScenario, SweepConfig,
};
use cskd::keys::{KeyBundle, KeygenParams};
use cskd::metrics::{self, QualityReport};
use cskd::protocol::{run_pipeline, Channel, Session};
use cskd::reconstruction::{SolverParams, TvNorm};
use cskd::sensing::{generate_phantom, ImageRaster, NoiseModel, PhantomKind};
use cskd::watermark::{HexBits, WatermarkedPayload};
use cskd::{pgm, transport, vectors};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] cskd::Error),
    #[error("cannot access {}: {source}", path.display())]
    File { path: PathBuf, source: io::Error },
    #[error("configuration error: {0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(cskd::Error::Parse { .. } | cskd::Error::Io(_)) => 2,
            _ => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Local file errors are the operator's configuration problem, not a transport failure.
fn local<T>(path: &Path, r: cskd::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        cskd::Error::Io(source) => CliError::File {
            path: path.to_owned(),
            source,
        },
        other => CliError::Core(other),
    })
}

fn read_keys(path: &Path) -> CliResult<Session> {
    let keys = local(path, KeyBundle::read_file(path))?;
    Ok(Session::new(keys)?)
}

fn read_image(path: &Path) -> CliResult<ImageRaster> {
    local(path, pgm::read_file(path))
}

fn read_payload(path: &Path) -> CliResult<WatermarkedPayload> {
    let bytes = std::fs::read(path).map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })?;
    Ok(transport::deserialize(&bytes)?)
}

fn write_payload(path: &Path, payload: &WatermarkedPayload) -> CliResult<()> {
    std::fs::write(path, transport::serialize(payload)?).map_err(|source| CliError::File {
        path: path.to_owned(),
        source,
    })
}

#[derive(Parser, Debug)]
#[command(name = "cskd", version, about = "Watermark-based key distribution over compressive measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a key bundle.
    Keygen(KeygenArgs),
    /// Render a test object as a PGM file.
    Phantom(PhantomArgs),
    /// Measure an object with the bundle's matrix and noise model.
    Sense(SenseArgs),
    /// Hide a watermark in a measurement vector and write the payload frame.
    Embed(EmbedArgs),
    /// Serve a payload frame to every client that connects.
    Serve(ServeArgs),
    /// Download a payload frame from a server.
    Fetch(FetchArgs),
    /// Recover the watermark and the measurements from a payload.
    Extract(ExtractArgs),
    /// Reconstruct the object from recovered measurements.
    Reconstruct(ReconstructArgs),
    /// Tamper with a payload.
    Attack(AttackArgs),
    /// Run the evaluation sweeps.
    Evaluate(EvaluateArgs),
    /// Run the whole protocol once and report its quality.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
struct KeygenArgs {
    /// Master seed all key material is drawn from.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 1280)]
    measurements: usize,
    #[arg(long, default_value_t = 8)]
    watermark_len: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    /// `none`, `poisson:<photons per unit intensity>` or `gaussian:<sigma>`.
    #[arg(long, default_value = "none", conflicts_with = "mean_count")]
    noise: String,
    /// Poisson noise scaled so `--image` yields this many counts per measurement.
    #[arg(long, requires = "image")]
    mean_count: Option<f64>,
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PhantomArgs {
    /// `phantom`, `letter-s` or `constant:<value>`.
    #[arg(long, default_value = "phantom")]
    kind: String,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SenseArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    image: PathBuf,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[arg(long)]
    keys: PathBuf,
    /// Measurement vector, one value per line.
    #[arg(long)]
    measurements: PathBuf,
    /// `<hex>:<bit length>`.
    #[arg(long)]
    watermark: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long)]
    payload: PathBuf,
    #[arg(long)]
    bind: String,
    /// Exit after this many clients.
    #[arg(long)]
    max_clients: Option<usize>,
}

#[derive(Args, Debug)]
struct FetchArgs {
    #[arg(long)]
    connect: String,
    #[arg(long)]
    out: PathBuf,
    /// Seconds.
    #[arg(long, default_value_t = 30)]
    timeout: u64,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    payload: PathBuf,
    /// Where to write the recovered measurements.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference object; prints a quality line when given.
    #[arg(long)]
    image: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct AttackArgs {
    #[arg(long)]
    payload: PathBuf,
    /// `shuffle`, `bit-flip:<value>:<bit>`, `zero:<count>` or `delete-shift:<value>`.
    #[arg(long)]
    attack: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("mode").required(true).args(["sweep_r", "attacks", "detection"])))]
struct EvaluateArgs {
    /// BER against group size for several repeat counts.
    #[arg(long)]
    sweep_r: bool,
    /// The tamper battery against one transmission.
    #[arg(long)]
    attacks: bool,
    /// Flip every bit of one word in turn and count detections.
    #[arg(long)]
    detection: bool,
    #[arg(long, required_unless_present = "sweep_r")]
    keys: Option<PathBuf>,
    /// Object; the sweep defaults to a 64x64 phantom.
    #[arg(long, required_unless_present = "sweep_r")]
    image: Option<PathBuf>,
    #[arg(long, required_unless_present = "sweep_r")]
    watermark: Option<String>,
    /// First seed; trials use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    #[arg(long, default_value_t = 40)]
    watermark_len: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 5])]
    repeats: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    r_min: usize,
    #[arg(long, default_value_t = 32)]
    r_max: usize,
    /// Expected photon count per measurement in the sweep.
    #[arg(long, default_value_t = 20.0)]
    mean_count: f64,
    /// Word whose bits the detection sweep flips.
    #[arg(long, default_value_t = 0)]
    value_index: usize,
    #[arg(long, default_value_t = 3.0)]
    threshold_db: f64,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    watermark: String,
    /// Noise seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Send the payload through a loopback TCP server.
    #[arg(long)]
    loopback: bool,
    /// Where to write the reconstruction.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum NormArg {
    Isotropic,
    Anisotropic,
}

#[derive(Args, Debug)]
struct SolverArgs {
    #[arg(long, default_value_t = SolverParams::default().mu)]
    mu: f64,
    #[arg(long, default_value_t = SolverParams::default().beta)]
    beta: f64,
    #[arg(long, value_enum, default_value = "isotropic")]
    norm: NormArg,
    #[arg(long, default_value_t = SolverParams::default().max_outer)]
    max_outer: usize,
    #[arg(long, default_value_t = SolverParams::default().max_inner)]
    max_inner: usize,
    #[arg(long, default_value_t = SolverParams::default().tolerance)]
    tolerance: f64,
}

impl SolverArgs {
    fn params(&self) -> CliResult<SolverParams> {
        let p = SolverParams {
            mu: self.mu,
            beta: self.beta,
            norm: match self.norm {
                NormArg::Isotropic => TvNorm::Isotropic,
                NormArg::Anisotropic => TvNorm::Anisotropic,
            },
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            tolerance: self.tolerance,
        };
        p.validate()?;
        Ok(p)
    }
}

fn watermark_bits(text: &str) -> CliResult<Vec<u8>> {
    Ok(text.parse::<HexBits>()?.0)
}

fn keygen(a: KeygenArgs) -> CliResult<()> {
    let noise = match a.mean_count {
        Some(count) => {
            let path = a.image.as_deref().expect("clap enforces --image");
            NoiseModel::Poisson {
                lambda: poisson_gain_for_mean_count(&read_image(path)?, count)?,
            }
        }
        None => a.noise.parse()?,
    };
    let keys = KeyBundle::generate(
        a.seed,
        KeygenParams {
            width: a.width,
            height: a.height,
            measurements: a.measurements,
            watermark_len: a.watermark_len,
            repeats: a.repeats,
            noise,
        },
    )?;
    local(&a.out, keys.write_file(&a.out))
}

fn phantom(a: PhantomArgs) -> CliResult<()> {
    let kind: PhantomKind = a.kind.parse()?;
    let image = generate_phantom(a.width, a.height, kind)?;
    local(&a.out, pgm::write_file(&a.out, &image))
}

fn sense(a: SenseArgs) -> CliResult<()> {
    let session = read_keys(&a.keys)?;
    let y = session.carrier(&read_image(&a.image)?, a.seed)?;
    local(&a.out, vectors::write_file(&a.out, &y))
}

fn embed(a: EmbedArgs) -> CliResult<()> {
    let session = read_keys(&a.keys)?;
    let y = local(&a.measurements, vectors::read_file(&a.measurements))?;
    let payload = session.embed(&y, &watermark_bits(&a.watermark)?)?;
    write_payload(&a.out, &payload)
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let payload = read_payload(&a.payload)?;
    eprintln!("serving {} words on {}", payload.len(), a.bind);
    Ok(transport::serve(a.bind.as_str(), &payload, a.max_clients)?)
}

fn fetch(a: FetchArgs) -> CliResult<()> {
    let payload = transport::fetch_with_timeout(a.connect.as_str(), Duration::from_secs(a.timeout))?;
    write_payload(&a.out, &payload)?;
    println!("received={}", payload.len());
    Ok(())
}

fn extract(a: ExtractArgs) -> CliResult<()> {
    let session = read_keys(&a.keys)?;
    let ex = session.extract(&read_payload(&a.payload)?)?;
    if let Some(out) = &a.out {
        local(out, vectors::write_file(out, &ex.measurements))?;
    }
    println!("watermark={}", HexBits(ex.watermark));
    println!(
        "zero_variance_groups={} non_finite_groups={} out_of_range={}",
        ex.zero_variance_groups, ex.non_finite_groups, ex.out_of_range
    );
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> CliResult<()> {
    let session = read_keys(&a.keys)?;
    let b = local(&a.measurements, vectors::read_file(&a.measurements))?;
    let rec = session.reconstruct(&b, &a.solver.params()?)?;
    let image = metrics::rescale_to_display(&rec.image);
    local(&a.out, pgm::write_file(&a.out, &image))?;
    println!(
        "outer_iterations={} inner_iterations={} converged={}",
        rec.outer_iterations, rec.inner_iterations, rec.converged
    );
    if let Some(reference) = &a.image {
        let mse = metrics::mse(&read_image(reference)?, &image)?;
        println!("mse={mse:.6} psnr_db={}", metrics::format_db(metrics::psnr_from_mse(mse)));
    }
    Ok(())
}

fn attack(a: AttackArgs) -> CliResult<()> {
    let kind: AttackKind = a.attack.parse()?;
    let tampered = apply_attack(&read_payload(&a.payload)?, &AttackSpec::new(kind, a.seed))?;
    write_payload(&a.out, &tampered)
}

fn evaluate(a: EvaluateArgs) -> CliResult<()> {
    let params = a.solver.params()?;
    if a.sweep_r {
        let object = match &a.image {
            Some(p) => read_image(p)?,
            None => generate_phantom(64, 64, PhantomKind::Phantom)?,
        };
        if a.r_min < 2 || a.r_max < a.r_min || a.trials == 0 {
            return Err(CliError::Usage("need 2 <= r-min <= r-max and at least one trial".into()));
        }
        let cfg = SweepConfig {
            noise: NoiseModel::Poisson {
                lambda: poisson_gain_for_mean_count(&object, a.mean_count)?,
            },
            object,
            watermark_len: a.watermark_len,
            repeats: a.repeats.clone(),
            group_sizes: (a.r_min..=a.r_max).collect(),
            seeds: (a.seed..a.seed + a.trials).collect(),
        };
        for point in ber_sweep(&cfg)? {
            println!("{point}");
        }
        return Ok(());
    }

    let session = read_keys(a.keys.as_deref().expect("clap enforces --keys"))?;
    let object = read_image(a.image.as_deref().expect("clap enforces --image"))?;
    let bits = watermark_bits(a.watermark.as_deref().expect("clap enforces --watermark"))?;
    if a.attacks {
        let scenario = AttackScenario {
            session: &session,
            object: &object,
            watermark: bits,
            noise_seed: a.seed,
            params,
        };
        let table = attack_table(&scenario, &standard_attacks(session.keys().measurements, a.seed))?;
        println!(
            "scenario=none seed={} psnr_vs_clean_db=inf psnr_vs_object_db={} ber={:.6}",
            a.seed,
            metrics::format_db(table.clean_psnr),
            metrics::ber(&scenario.watermark, &table.clean.extraction.watermark)?
        );
        for row in &table.rows {
            println!("{row}");
        }
    } else {
        let report = detection_rate(&DetectionScenario {
            session: &session,
            object: &object,
            watermark: bits,
            noise_seed: a.seed,
            value_index: a.value_index,
            threshold_db: a.threshold_db,
            params,
        })?;
        for o in &report.outcomes {
            println!(
                "bit={} psnr_db={} watermark_changed={} detected={}",
                o.bit,
                metrics::format_db(o.psnr_db),
                o.watermark_changed,
                o.detected
            );
        }
        let detected = report.outcomes.iter().filter(|o| o.detected).count();
        println!(
            "baseline_psnr_db={} detected={detected}/64 detection_rate={:.6}",
            metrics::format_db(report.baseline_psnr_db),
            report.rate
        );
    }
    Ok(())
}

fn pipeline(a: PipelineArgs) -> CliResult<()> {
    let session = read_keys(&a.keys)?;
    let object = read_image(&a.image)?;
    let bits = watermark_bits(&a.watermark)?;
    let channel = if a.loopback { Channel::Loopback } else { Channel::InProcess };
    let outcome = run_pipeline(&session, &object, &bits, a.seed, &a.solver.params()?, channel)?;
    if let Some(out) = &a.out {
        local(out, pgm::write_file(out, &outcome.received.image))?;
    }
    let report: QualityReport = outcome.report;
    println!("{report}");
    println!("watermark={}", HexBits(outcome.received.extraction.watermark));
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Keygen(a) => keygen(a),
        Command::Phantom(a) => phantom(a),
        Command::Sense(a) => sense(a),
        Command::Embed(a) => embed(a),
        Command::Serve(a) => serve(a),
        Command::Fetch(a) => fetch(a),
        Command::Extract(a) => extract(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Attack(a) => attack(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cskd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
