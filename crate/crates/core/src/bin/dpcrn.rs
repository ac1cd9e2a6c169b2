use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dpcrn::audio::{mix_at_snr, read_wav, write_wav_float, MixSpec, Signal};
use dpcrn::model::{enhance_offline, load_weights, manifest, save_weights, ModelConfig};
use dpcrn::stream::{bench_rtf, enhance_streaming};
use dpcrn::train::{gradcheck, metric_si_snr, metric_snr, train_toy, write_curve_csv, ToyConfig};
use dpcrn::{Error, Result};

#[derive(Parser)]
#[command(name = "dpcrn", version, about = "Dual-path convolution recurrent network speech enhancer")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Enhance a 16 kHz mono WAV file.
    Enhance(EnhanceArgs),
    /// Mix speech and noise at a target SNR.
    Mix {
        #[arg(long)]
        speech: PathBuf,
        #[arg(long)]
        noise: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        snr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print SNR and SI-SNR of an estimate against a reference.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
    },
    /// Train on synthetic tone-in-noise mixtures.
    TrainToy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the streaming path and print a JSON report.
    Bench {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// List the tensors of a weight file.
    Inspect {
        #[arg(long)]
        weights: PathBuf,
    },
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, conflicts_with = "offline")]
    stream: bool,
    #[arg(long)]
    offline: bool,
}

/// `Ok(false)` when a check ran but did not pass.
fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Enhance(a) => {
            let w = load_weights(&a.weights)?;
            let x = read_wav(&a.input)?;
            let y = if a.stream {
                Signal::new(enhance_streaming(&w, x.samples(), 200)?)?
            } else {
                enhance_offline(&w, &x)?
            };
            write_wav_float(&a.out, &y)?;
            Ok(true)
        }
        Cmd::Mix { speech, noise, snr, seed, out } => {
            let (mix, _) = mix_at_snr(&read_wav(speech)?, &read_wav(noise)?, MixSpec { snr_db: snr, seed })?;
            write_wav_float(out, &mix)?;
            Ok(true)
        }
        Cmd::Eval { reference, est } => {
            let (s, y) = (read_wav(reference)?, read_wav(est)?);
            let n = s.len().min(y.len());
            let (s, y) = (&s.samples()[..n], &y.samples()[..n]);
            println!("snr_db={:.4} si_snr_db={:.4}", metric_snr(s, y)?, metric_si_snr(s, y)?);
            Ok(true)
        }
        Cmd::TrainToy { config, steps, seed, out, curve } => {
            let cfg = match config {
                Some(p) => ToyConfig::from_text(&std::fs::read_to_string(p)?)?,
                None => ToyConfig::default(),
            };
            let report = train_toy(&cfg, steps, seed)?;
            save_weights(&report.weights, out)?;
            if let Some(p) = curve {
                write_curve_csv(&report.curve, p)?;
            }
            let last = report.curve.last().map_or(f64::NAN, |r| r.neg_snr);
            println!(
                "steps={} final_neg_snr={last:.4} improvement_db={:.4}{}",
                report.curve.len(),
                report.improvement_db(10),
                report.stopped_at.map_or(String::new(), |s| format!(" early_stop={s}"))
            );
            Ok(true)
        }
        Cmd::Gradcheck { config, seed } => {
            let cfg = match config {
                Some(p) => ModelConfig::from_text(&std::fs::read_to_string(p)?)?,
                None => ModelConfig::gradcheck(),
            };
            let r = gradcheck(&cfg, seed)?;
            println!(
                "max_rel_err={:.3e} max_rel_err_smooth={:.3e} pass_fraction={:.5} coords={} kink_coords={} unexplained={}",
                r.max_rel_err, r.max_rel_err_smooth, r.pass_fraction, r.coords, r.kink_coords, r.unexplained
            );
            if !r.passed() {
                eprintln!("gradient check failed, worst coordinate {}", r.worst);
            }
            Ok(r.passed())
        }
        Cmd::Bench { weights, seconds, threads } => {
            let r = bench_rtf(&load_weights(weights)?, seconds, threads)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
            Ok(true)
        }
        Cmd::Inspect { weights } => {
            let w = load_weights(weights)?;
            print!("{}", w.config().to_text());
            for e in manifest(w.config())? {
                println!("{:<32} {:?}", e.name, e.shape);
            }
            println!("param_count={}", w.param_count());
            println!("checksum={:08x}", w.checksum());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io(_) => 4,
                Error::Diverged(_) => 3,
                _ => 2,
            })
        }
    }
}
