//! `convbf` command-line front end: enhance, simulate, metrics, bench.

mod args;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use convbf::apa::ApaParams;
use convbf::array::{plane_wave_steering, SPEED_OF_SOUND};
use convbf::bench::{count_apa_update, power_law_exponent, timing_csv_row, wallclock_sweep, CSV_HEADER};
use convbf::dsp::StftConfig;
use convbf::io::{read_wav, resample_check, write_wav, AudioBuffer, SampleFormat};
use convbf::metrics::{evaluate, MetricConfig};
use convbf::pipeline::{enhance_audio, EnhanceConfig, Method};
use convbf::psd::{mask_file_provider, GainProvider, IdentityGain};
use convbf::scene::{exp_decay_rir_scene, mclp_scene, modulated_noise, random_mclp, synthetic_speech, Scene};
use convbf::db_to_linear;

/// Processing sample rate; inputs at other rates are rejected.
const SAMPLE_RATE: u32 = 16000;

#[derive(Parser, Debug)]
#[command(name = "convbf", version, about = "Convolutional beamforming for dereverberation and denoising")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Enhance a multichannel recording into a single channel.
    Enhance(EnhanceArgs),
    /// Generate a synthetic scene with known components.
    Simulate(SimulateArgs),
    /// Compare an estimate against a reference signal.
    Metrics(MetricsArgs),
    /// Operation counts and wall-clock timing per method.
    Bench(BenchArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Float32,
    Pcm16,
}

impl From<OutputFormat> for SampleFormat {
    fn from(f: OutputFormat) -> Self {
        match f {
            OutputFormat::Float32 => SampleFormat::Float32,
            OutputFormat::Pcm16 => SampleFormat::Pcm16,
        }
    }
}

#[derive(clap::Args, Debug)]
struct EnhanceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// ref-mic, delay-sum, sd-mvdr, mpdr-apa, conv-mpdr-apa or conv-sdmvdr.
    #[arg(long, default_value = "conv-mpdr-apa")]
    method: Method,
    /// Geometry file (`x y z` per line) or `circular:M:R`.
    #[arg(long)]
    geometry: String,
    /// `auto` (SRP-PHAT) or azimuth in degrees.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    doa: String,
    /// Prediction delay in frames.
    #[arg(long = "D", default_value_t = 1)]
    delay: usize,
    /// Per-band prediction orders and transition frequencies.
    #[arg(long, default_value = "12,8,6@800,2000")]
    bands: String,
    #[arg(long, default_value_t = -37.0, allow_hyphen_values = true)]
    phi_b: f64,
    #[arg(long, default_value_t = -40.0, allow_hyphen_values = true)]
    phi_r: f64,
    #[arg(long, default_value_t = -120.0, allow_hyphen_values = true)]
    phi_a: f64,
    #[arg(long, default_value_t = -25.0, allow_hyphen_values = true)]
    eta: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha_r: f64,
    #[arg(long, default_value = "true")]
    prior_pass: String,
    /// Per-bin gain mask file applied to the speech PSD.
    #[arg(long)]
    gain_mask: Option<PathBuf>,
    /// Recorded in the summary; enhancement itself draws no random numbers.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (1 = sequential reference, 0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Re-localize every this many frames with `--doa auto`.
    #[arg(long)]
    doa_block: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Float32)]
    output_format: OutputFormat,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SceneKind {
    Mclp,
    Rir,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Source {
    Speech,
    Noise,
}

#[derive(clap::Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    kind: SceneKind,
    /// Directory for mixture.wav, dry.wav, reverb.wav, noise.wav and scene.txt.
    #[arg(long)]
    output_dir: PathBuf,
    #[arg(long, default_value = "circular:4:0.05")]
    geometry: String,
    /// Source azimuth in degrees.
    #[arg(long, default_value_t = 60.0, allow_hyphen_values = true)]
    doa: f64,
    #[arg(long, default_value_t = 30.0, allow_hyphen_values = true)]
    snr: f64,
    /// Decay time of the RIR tail in seconds (rir scenes).
    #[arg(long, default_value_t = 0.5)]
    t60: f64,
    /// Direct-to-reverberant ratio in dB (rir scenes).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    drr: f64,
    /// Prediction order of the generated reverberation (mclp scenes).
    #[arg(long = "L", default_value_t = 6)]
    order: usize,
    #[arg(long = "D", default_value_t = 2)]
    delay: usize,
    /// Gain of the random prediction matrices before stabilization (mclp scenes).
    #[arg(long, default_value_t = 1.0)]
    mclp_gain: f64,
    #[arg(long, default_value_t = 5.0)]
    seconds: f64,
    /// Dry source WAV (first channel used); a synthetic source otherwise.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Source::Speech)]
    source: Source,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Float32)]
    output_format: OutputFormat,
}

#[derive(clap::Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    estimate: PathBuf,
    /// Channel of the reference file to compare against.
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Also write per-segment traces as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 8)]
    mics: usize,
    /// Prediction orders swept for the convolutional methods.
    #[arg(long, default_value = "4,8,12,16")]
    orders: String,
    /// Comma-separated methods (default: all but ref-mic).
    #[arg(long)]
    methods: Option<String>,
    /// Seconds of audio per timing run.
    #[arg(long, default_value_t = 2.0)]
    seconds: f64,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Write the CSV table here as well as to stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Skip wall-clock timing; only operation counts.
    #[arg(long)]
    counts_only: bool,
}

fn db_flag(name: &str, db: f64) -> Result<f64> {
    if !db.is_finite() {
        bail!("--{name} must be a finite dB value, got {db}");
    }
    Ok(db_to_linear(db))
}

fn cmd_enhance(a: EnhanceArgs) -> Result<()> {
    let t0 = Instant::now();
    let geom = args::geometry(&a.geometry)?;
    let doa = args::doa(&a.doa)?;
    let plan = args::bands(&a.bands, a.delay)?;
    let params = ApaParams {
        phi_b: db_flag("phi-b", a.phi_b)?,
        phi_r: db_flag("phi-r", a.phi_r)?,
        phi_a: db_flag("phi-a", a.phi_a)?,
        eta: db_flag("eta", a.eta)?,
        alpha_r: a.alpha_r,
        plan,
        ..ApaParams::default()
    };
    let mut config = EnhanceConfig::new(a.method);
    config.params = params;
    config.prior_pass = args::boolean(&a.prior_pass)?;
    config.threads = a.threads;
    config.doa_block_frames = a.doa_block;
    config.validate()?;

    let input = read_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    resample_check(&input, SAMPLE_RATE)?;
    if input.channels() != geom.num_mics() {
        bail!("{} has {} channels but the geometry has {} mics", a.input.display(), input.channels(), geom.num_mics());
    }
    let stft_cfg = StftConfig { sample_rate: SAMPLE_RATE as f64, ..StftConfig::default() };
    let frames = stft_cfg.num_frames(input.len());
    let mask;
    let gain: &dyn GainProvider = match &a.gain_mask {
        Some(p) => {
            mask = mask_file_provider(p, stft_cfg.num_bins(), frames)
                .with_context(|| format!("loading gain mask {}", p.display()))?;
            &mask
        }
        None => &IdentityGain,
    };
    log::info!("enhancing {} ({} ch, {} samples) with {}", a.input.display(), input.channels(), input.len(), a.method);
    let out = enhance_audio(&input.samples, &geom, doa, &stft_cfg, &config, gain)?;
    let buf = AudioBuffer::new(vec![out.signal], SAMPLE_RATE)?;
    write_wav(&a.output, &buf, a.output_format.into()).with_context(|| format!("writing {}", a.output.display()))?;

    let q: Vec<String> = out.q_per_band.iter().map(usize::to_string).collect();
    let p = &config.params;
    println!(
        "method={} q={} frames={} azimuth_deg={:.1} phi_b={}dB({:.3e}) phi_r={}dB({:.3e}) phi_a={}dB({:.3e}) eta={}dB({:.3e}) alpha_r={} prior_pass={} threads={} seed={} elapsed_s={:.3}",
        a.method,
        q.join(","),
        out.frames,
        out.azimuth.to_degrees(),
        a.phi_b,
        p.phi_b,
        a.phi_r,
        p.phi_r,
        a.phi_a,
        p.phi_a,
        a.eta,
        p.eta,
        p.alpha_r,
        config.prior_pass,
        a.threads,
        a.seed,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

/// Attempts allowed for drawing a usable MCLP scene.
const MCLP_ATTEMPTS: u64 = 10;

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let geom = args::geometry(&a.geometry)?;
    let cfg = StftConfig { sample_rate: SAMPLE_RATE as f64, ..StftConfig::default() };
    let dry = match &a.input {
        Some(p) => {
            let buf = read_wav(p).with_context(|| format!("reading {}", p.display()))?;
            resample_check(&buf, SAMPLE_RATE)?;
            buf.samples.into_iter().next().unwrap_or_default()
        }
        None => match a.source {
            Source::Speech => synthetic_speech(a.seconds, cfg.sample_rate, a.seed),
            Source::Noise => modulated_noise(a.seconds, cfg.sample_rate, a.seed),
        },
    };
    // same level convention as the enhancer
    let g = convbf::pipeline::normalization_gain(&dry);
    let dry: Vec<f64> = dry.iter().map(|v| v * g).collect();
    let az = a.doa.to_radians();

    let scene: Scene = match a.kind {
        SceneKind::Rir => exp_decay_rir_scene(&dry, &geom, az, a.t60, a.drr, a.snr, a.seed, &cfg)?,
        SceneKind::Mclp => {
            let steering = plane_wave_steering(&geom, az, 0.0, &cfg, SPEED_OF_SOUND);
            let mut last_err = None;
            let mut found = None;
            for attempt in 0..MCLP_ATTEMPTS {
                let seed = a.seed.wrapping_add(attempt);
                let drawn = random_mclp(geom.num_mics(), cfg.num_bins(), a.order, a.delay, a.mclp_gain, 0.9, seed)
                    .and_then(|c| mclp_scene(&dry, &steering, &c, &cfg, a.snr, seed));
                match drawn {
                    Ok(mut s) => {
                        s.meta.seed = seed;
                        found = Some(s);
                        break;
                    }
                    Err(e) => {
                        log::warn!("MCLP draw with seed {seed} rejected: {e}");
                        last_err = Some(e);
                    }
                }
            }
            match found {
                Some(s) => s,
                None => bail!(
                    "no usable MCLP draw in {MCLP_ATTEMPTS} seeds starting at {}: {}",
                    a.seed,
                    last_err.map(|e| e.to_string()).unwrap_or_default()
                ),
            }
        }
    };
    let mut scene = scene;
    scene.meta.doa_deg = a.doa;
    scene.export(&a.output_dir, a.output_format.into())?;
    let srr_in = convbf::scene::srr_db(&scene.dry, &scene.mixture.channel(geom.reference_mic))?;
    println!(
        "kind={} mics={} frames={} seed={} doa_deg={} snr_db={} srr_in_db={:.2} dir={}",
        scene.meta.kind,
        geom.num_mics(),
        scene.mixture.frames(),
        scene.meta.seed,
        a.doa,
        a.snr,
        srr_in,
        a.output_dir.display()
    );
    Ok(())
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let r = read_wav(&a.reference).with_context(|| format!("reading {}", a.reference.display()))?;
    let e = read_wav(&a.estimate).with_context(|| format!("reading {}", a.estimate.display()))?;
    if r.sample_rate != e.sample_rate {
        bail!("sample rates differ: {} vs {} Hz", r.sample_rate, e.sample_rate);
    }
    let reference = r.samples.get(a.channel).with_context(|| format!("reference has no channel {}", a.channel))?;
    let estimate = &e.samples[0];
    let report = evaluate(reference, estimate, &MetricConfig::for_rate(r.sample_rate as f64))?;
    print!("{}", report.to_text());
    if let Some(p) = &a.csv {
        std::fs::write(p, report.frames_csv()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

/// `Q` values of the linear-growth check, reached with `M = 2`, `D = 1`.
const FIT_ORDERS: [usize; 4] = [12, 25, 51, 103];

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let orders = args::usize_list(&a.orders)?;
    let methods: Vec<Method> = match &a.methods {
        Some(list) => list.split(',').map(|s| s.trim().parse::<Method>()).collect::<convbf::Result<_>>()?,
        None => Method::ALL.iter().copied().filter(|m| *m != Method::RefMic).collect(),
    };
    let mut csv = String::new();
    csv.push_str(CSV_HEADER);
    csv.push('\n');
    for method in methods {
        let rows = if a.counts_only {
            let d = convbf::dsp::BandPlan::default().delay;
            let ls: Vec<usize> = if method.is_convolutional() { orders.clone() } else { vec![0] };
            ls.into_iter()
                .map(|l| {
                    Ok(convbf::bench::Timing {
                        method,
                        mics: a.mics,
                        order: l,
                        delay: d,
                        q: convbf::bench::filter_len(a.mics, if method.is_convolutional() { l } else { 0 }, d),
                        macs: convbf::bench::method_macs(method, a.mics, l, d)?,
                        seconds_per_audio_second: f64::NAN,
                    })
                })
                .collect::<convbf::Result<Vec<_>>>()?
        } else {
            wallclock_sweep(method, a.mics, &orders, a.seconds, a.runs)?
        };
        for t in rows {
            csv.push_str(&timing_csv_row(&t));
            csv.push('\n');
        }
    }
    print!("{csv}");
    if let Some(p) = &a.csv {
        std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
    }
    let pts: Vec<(f64, f64)> = FIT_ORDERS
        .iter()
        .map(|&l| count_apa_update(2, l, 1).map(|c| ((2 * (l + 1)) as f64, c.macs() as f64)))
        .collect::<convbf::Result<_>>()?;
    let exponent = power_law_exponent(&pts);
    let max_ratio = pts.windows(2).map(|w| w[1].1 / w[0].1).fold(0.0, f64::max);
    println!("# apa_update macs vs Q over 26,52,104,208: exponent={exponent:.4} max_step_ratio={max_ratio:.4}");
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Enhance(a) => cmd_enhance(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

