//! Command implementations behind the binary's subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::audio::{read_wav, write_wav, SampleFormat, Waveform};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dsp::{self, SnrConvention};
use crate::error::{Error, Result};
use crate::flow::SampleConfig;
use crate::model::SrModel;
use crate::rng::Rng;
use crate::train::{train_loop, AdamState, LogRow};

fn list_wavs(dir: &Path) -> Result<(Vec<PathBuf>, Vec<PathBuf>)> {
    let mut wavs = Vec::new();
    let mut other = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let is_wav = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("wav"))
            .unwrap_or(false);
        if is_wav {
            wavs.push(path);
        } else {
            other.push(path);
        }
    }
    wavs.sort();
    other.sort();
    Ok((wavs, other))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// `prepare`: resamples every input WAV to the target HR rate, derives the
/// LR side at `hr_rate / ratio`, and writes a `name,hr_len,lr_len` manifest.
/// Non-WAV files are skipped with a warning and listed in the manifest tail.
pub fn cmd_prepare(input: &Path, out: &Path, hr_rate: u32, ratio: usize) -> Result<()> {
    if ratio != 2 && ratio != 4 {
        return Err(Error::Config(format!("ratio must be 2 or 4, got {ratio}")));
    }
    if hr_rate == 0 || hr_rate % ratio as u32 != 0 {
        return Err(Error::Config(format!("hr_rate {hr_rate} must be divisible by {ratio}")));
    }
    let (wavs, skipped) = list_wavs(input)?;
    if wavs.is_empty() {
        return Err(Error::Config(format!("no .wav files found in {}", input.display())));
    }
    let hr_dir = out.join("hr");
    let lr_dir = out.join("lr");
    fs::create_dir_all(&hr_dir).map_err(|e| Error::io(&hr_dir, e))?;
    fs::create_dir_all(&lr_dir).map_err(|e| Error::io(&lr_dir, e))?;

    let mut manifest = String::from("name,hr_len,lr_len\n");
    for path in &wavs {
        let name = file_name(path);
        let loaded = read_wav(path)?;
        if loaded.clamped > 0 {
            eprintln!("warning: {name}: clamped {} samples into [-1, 1]", loaded.clamped);
        }
        let mut hr = if loaded.waveform.sample_rate == hr_rate {
            loaded.waveform
        } else {
            dsp::resample(&loaded.waveform, hr_rate)?
        };
        hr.clamp_unit();
        let mut lr = dsp::resample(&hr, hr_rate / ratio as u32)?;
        lr.clamp_unit();
        write_wav(&hr, &hr_dir.join(&name), SampleFormat::Float32)?;
        write_wav(&lr, &lr_dir.join(&name), SampleFormat::Float32)?;
        manifest.push_str(&format!("{},{},{}\n", name, hr.len(), lr.len()));
    }
    for path in &skipped {
        let name = file_name(path);
        eprintln!("warning: skipping non-wav file {name}");
        manifest.push_str(&format!("# skipped: {name}\n"));
    }
    let manifest_path = out.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    println!("prepared {} files into {}", wavs.len(), out.display());
    Ok(())
}

/// Encoder ablation switches passed on the `train` command line; they
/// override the config file (flags win).
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainOverrides {
    pub no_stft: bool,
    pub no_phase: bool,
    pub no_magnitude: bool,
    pub no_lr_encoder: bool,
    pub iters: Option<u64>,
    pub seed: Option<u64>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if self.no_stft {
            cfg.use_stft = false;
        }
        if self.no_phase {
            cfg.use_phase = false;
        }
        if self.no_magnitude {
            cfg.use_magnitude = false;
        }
        if self.no_lr_encoder {
            cfg.use_lr_encoder = false;
        }
        if let Some(iters) = self.iters {
            cfg.iters = iters;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
    }
}

fn load_dataset(data: &Path, hr_rate: u32) -> Result<Vec<Waveform>> {
    let hr_dir = data.join("hr");
    let dir = if hr_dir.is_dir() { hr_dir } else { data.to_path_buf() };
    let (wavs, _) = list_wavs(&dir)?;
    if wavs.is_empty() {
        return Err(Error::Train(format!("no .wav files found in {}", dir.display())));
    }
    let mut out = Vec::with_capacity(wavs.len());
    for path in &wavs {
        let mut loaded = read_wav(path)?;
        if loaded.waveform.sample_rate != hr_rate {
            return Err(Error::Train(format!(
                "{} is at {} Hz but hr_rate is {hr_rate}; run `prepare` first",
                path.display(),
                loaded.waveform.sample_rate
            )));
        }
        loaded.waveform.clamp_unit();
        out.push(loaded.waveform);
    }
    Ok(out)
}

/// `train`: builds (or resumes) a model and runs the training loop, writing
/// the effective config, a CSV log and periodic checkpoints into `rundir`.
pub fn cmd_train(
    config_path: Option<&Path>,
    data: &Path,
    rundir: &Path,
    overrides: &TrainOverrides,
    resume: Option<&Path>,
) -> Result<()> {
    let (cfg, mut model, mut adam, mut rng, start_iter) = match resume {
        Some(ckpt_path) => {
            if config_path.is_some() {
                eprintln!("warning: --config is ignored when resuming; the checkpoint's config wins");
            }
            let ckpt = load_checkpoint(ckpt_path)?;
            let mut cfg = ckpt.config;
            if let Some(iters) = overrides.iters {
                cfg.iters = iters;
            }
            (cfg, ckpt.model, ckpt.adam, Rng::from_state(ckpt.rng_state), ckpt.iteration)
        }
        None => {
            let mut cfg = match config_path {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    RunConfig::parse(&text)?
                }
                None => RunConfig::default(),
            };
            overrides.apply(&mut cfg);
            cfg.validate()?;
            let mut rng = Rng::from_seed(cfg.seed);
            let model = SrModel::init(&cfg, &mut rng)?;
            (cfg, model, AdamState::new(), rng, 0)
        }
    };
    cfg.validate()?;

    fs::create_dir_all(rundir).map_err(|e| Error::io(rundir, e))?;
    let cfg_echo = rundir.join("config.txt");
    fs::write(&cfg_echo, cfg.to_text()).map_err(|e| Error::io(&cfg_echo, e))?;

    let dataset = load_dataset(data, cfg.hr_rate)?;
    let cond_channels = cfg.encoder_flags().cond_channels();
    let n_params = ndgrad::param_count(&model);
    println!("C_cond = {cond_channels}");
    println!("parameters = {n_params}");
    println!("segment = {} HR samples, batch = {}, iters = {}", cfg.segment_len(), cfg.batch, cfg.iters);

    let log_path = rundir.join("log.csv");
    let mut log = if start_iter > 0 && log_path.exists() {
        fs::OpenOptions::new()
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?
    } else {
        let mut f = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        writeln!(f, "{}", LogRow::csv_header()).map_err(|e| Error::io(&log_path, e))?;
        f
    };

    let outcome = train_loop(
        &dataset,
        &mut model,
        &mut adam,
        &mut rng,
        &cfg,
        Some(rundir),
        start_iter,
        |row| {
            writeln!(log, "{}", row.to_csv()).expect("log write");
            println!("iter {} nll/dim {:.6} grad_norm {:.4}", row.iter, row.nll_per_dim, row.grad_norm);
        },
    )?;

    if outcome.skipped_steps > 0 {
        eprintln!("warning: {} optimizer steps skipped on non-finite gradients", outcome.skipped_steps);
    }
    // A final checkpoint always exists unless zero iterations ran.
    if cfg.iters > start_iter {
        if let Some(p) = &outcome.last_checkpoint {
            println!("final checkpoint: {}", p.display());
        }
    } else {
        let path = rundir.join(format!("ckpt_{:08}.bin", start_iter));
        save_checkpoint(&path, &model, &adam, start_iter, rng.state(), &cfg)?;
        println!("final checkpoint: {}", path.display());
    }
    Ok(())
}

/// `infer`: loads a checkpoint and super-resolves one LR file.
pub fn cmd_infer(
    ckpt: &Path,
    input: &Path,
    out: &Path,
    temperature: f64,
    seed: u64,
    format: SampleFormat,
) -> Result<()> {
    let loaded = load_checkpoint(ckpt)?;
    let lr = read_wav(input)?.waveform;
    let expected = loaded.config.lr_rate();
    if lr.sample_rate != expected {
        return Err(Error::Config(format!(
            "input is at {} Hz but the checkpoint expects {} Hz LR audio (hr_rate {} / ratio {})",
            lr.sample_rate,
            expected,
            loaded.config.hr_rate,
            loaded.config.ratio
        )));
    }
    let hr = loaded.model.synthesize(&lr, &SampleConfig { temperature, seed })?;
    write_wav(&hr, out, format)?;
    println!(
        "wrote {} ({} samples at {} Hz)",
        out.display(),
        hr.len(),
        hr.sample_rate
    );
    Ok(())
}

fn fmt_metric(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

/// `eval`: pairs files by name across two directories and writes per-file
/// SNR/LSD rows plus a mean row. Unmatched or unreadable pairs are listed and
/// skipped; the command fails only if nothing could be evaluated.
pub fn cmd_eval(
    ref_dir: &Path,
    hyp_dir: &Path,
    out_csv: &Path,
    convention: SnrConvention,
) -> Result<()> {
    let (ref_wavs, _) = list_wavs(ref_dir)?;
    let (hyp_wavs, _) = list_wavs(hyp_dir)?;
    let hyp_names: std::collections::HashMap<String, PathBuf> =
        hyp_wavs.iter().map(|p| (file_name(p), p.clone())).collect();
    let ref_names: std::collections::HashSet<String> =
        ref_wavs.iter().map(|p| file_name(p)).collect();

    for h in &hyp_wavs {
        let name = file_name(h);
        if !ref_names.contains(&name) {
            eprintln!("warning: {name} present only under --hyp; skipped");
        }
    }

    struct Row {
        name: String,
        snr: f64,
        lsd: f64,
    }
    let mut rows: Vec<Row> = Vec::new();
    let mut skipped = 0usize;
    for r in &ref_wavs {
        let name = file_name(r);
        let Some(h) = hyp_names.get(&name) else {
            eprintln!("warning: {name} present only under --ref; skipped");
            skipped += 1;
            continue;
        };
        let pair = (|| -> Result<Row> {
            let x = read_wav(r)?.waveform;
            let y = read_wav(h)?.waveform;
            let snr = dsp::snr(&x, &y, convention)?;
            let lsd = dsp::lsd(&dsp::pad_for_lsd(&x), &dsp::pad_for_lsd(&y))?;
            Ok(Row { name: name.clone(), snr, lsd })
        })();
        match pair {
            Ok(row) => rows.push(row),
            Err(e) => {
                eprintln!("warning: {name}: {e}; skipped");
                skipped += 1;
            }
        }
    }

    if rows.is_empty() {
        return Err(Error::Dsp(format!(
            "no evaluable pairs ({} skipped); nothing to write",
            skipped
        )));
    }

    let mut csv = String::from("file,snr_db,lsd\n");
    for row in &rows {
        csv.push_str(&format!("{},{},{}\n", row.name, fmt_metric(row.snr), fmt_metric(row.lsd)));
    }
    // Mean over finite SNRs (identity pairs are +inf); LSD is always finite.
    let finite: Vec<f64> = rows.iter().map(|r| r.snr).filter(|v| v.is_finite()).collect();
    let mean_snr = if finite.is_empty() {
        rows.iter().map(|r| r.snr).fold(f64::NEG_INFINITY, f64::max)
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    let mean_lsd = rows.iter().map(|r| r.lsd).sum::<f64>() / rows.len() as f64;
    csv.push_str(&format!("mean,{},{}\n", fmt_metric(mean_snr), fmt_metric(mean_lsd)));
    fs::write(out_csv, csv).map_err(|e| Error::io(out_csv, e))?;
    println!("evaluated {} pairs ({} skipped) -> {}", rows.len(), skipped, out_csv.display());
    Ok(())
}

/// `selftest`: runs the verification battery and reports pass/fail per check.
/// Returns an error when any check fails, so the process exits nonzero.
pub fn cmd_selftest() -> Result<()> {
    let t0 = std::time::Instant::now();
    let results = crate::selftest::run_all();
    let mut failed = 0;
    for r in &results {
        println!("{:6} {:<24} {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
        if !r.pass {
            failed += 1;
        }
    }
    println!("{} checks, {} failed, {:.1}s", results.len(), failed, t0.elapsed().as_secs_f64());
    if failed > 0 {
        return Err(Error::Train(format!("{failed} self-test checks failed")));
    }
    Ok(())
}

/// `spectrogram`: renders a WAV to a P5 graymap.
pub fn cmd_spectrogram(input: &Path, out: &Path) -> Result<()> {
    let w = read_wav(input)?.waveform;
    let img = dsp::spectrogram_image(&w)?;
    dsp::write_pgm(&img, out)?;
    println!("wrote {} ({}x{})", out.display(), img.width, img.height);
    Ok(())
}
