//! The `robdistill` command line: synthetic corpora, augmentation
//! previews, distillation runs, evaluation and report rendering.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use robdistill_core::audio_io::{read_wav, resample, write_wav, WavEncoding, Waveform};
use robdistill_core::augment::{contaminate_batch, load_manifest, ContaminationAction, ContaminationPolicy, Corpora};
use robdistill_core::distill::{run_distillation, student_gradcheck, TrainingData};
use robdistill_core::eval_harness::{
    build_scenarios, evaluate_conditions, gen_kws_corpus, noise_type_breakdown, parse_csv_report, render_breakdown,
    render_report, room_size_breakdown, train_probe, Condition, FeatureExtractor, LogSpectrogram, ReportFormat,
    ResultsTable,
};
use robdistill_core::models::{load_checkpoint, save_checkpoint, StudentModel, TeacherModel, CHECKPOINT_VERSION};
use robdistill_core::synth::SynthCorpora;
use robdistill_core::tensor::fixtures::op_fixtures;
use serde_json::json;

pub use config::{load_config, parse_config, save_config, ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "robdistill", version, about = "Robust layer-wise distillation of speech encoders")]
pub struct Cli {
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; never changes logged results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (or file, for `report`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config overlaid on the preset defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model preset: tiny, toy or base.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print parameter counts of the preset's teacher and student.
    Params,
    /// Check analytic gradients of every op and of the student loss.
    Gradcheck {
        /// Random seeds per fixture.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
        /// Relative-error bound for single ops.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Relative-error bound for the end-to-end student loss.
        #[arg(long, default_value_t = 1e-3)]
        e2e_tol: f64,
    },
    /// Write the synthetic speech, noise and RIR corpora with manifests.
    SynthCorpus,
    /// Materialize contaminated input/target pairs as WAV files.
    Augment {
        #[arg(long)]
        manifest_speech: Option<PathBuf>,
        #[arg(long)]
        manifest_noise: Option<PathBuf>,
        #[arg(long)]
        manifest_rir: Option<PathBuf>,
        /// JSON contamination policy; overrides the config's policy.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Number of utterances to contaminate.
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Distill a student from a frozen, seeded teacher.
    Distill {
        /// Train without the enhancement head (beta_enh = 0).
        #[arg(long)]
        no_enh_head: bool,
        /// Train on clean inputs only.
        #[arg(long)]
        no_augment: bool,
        /// Override the number of training steps.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Probe a frozen model on keyword spotting under degraded conditions.
    Eval {
        /// Checkpoint path, or `logspec` for the model-free baseline.
        #[arg(long)]
        model: String,
        /// Comma-separated conditions among c, n, r, n+r.
        #[arg(long, default_value = "c,n,r,n+r", value_delimiter = ',')]
        scenarios: Vec<String>,
        /// md, csv or json.
        #[arg(long, default_value = "md")]
        report: String,
        /// noise-type or room-size.
        #[arg(long)]
        breakdown: Option<String>,
        /// Row label; defaults to the checkpoint file stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Merge evaluation results and render them as one table.
    Report {
        /// results.json or CSV reports written by `eval`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// md, csv or json.
        #[arg(long, default_value = "md")]
        format: String,
    },
}

/// Config from the file (if any) and preset, with flag overrides.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p, cli.preset.as_deref())?,
        None => parse_config("", cli.preset.as_deref(), "<defaults>")?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be positive");
        }
        cfg.threads = t;
    }
    Ok(cfg)
}

fn versions_stamp() -> String {
    let v = json!({
        "robdistill": env!("CARGO_PKG_VERSION"),
        "checkpoint_format": CHECKPOINT_VERSION,
    });
    serde_json::to_string_pretty(&v).expect("json serializes") + "\n"
}

/// Creates `dir` and writes the effective config and version stamp.
fn prepare_run_dir(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_config(cfg, dir.join("config.json"))?;
    fs::write(dir.join("versions.json"), versions_stamp())?;
    Ok(())
}

fn require_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().context("this subcommand needs --out DIR")
}

fn load_speech(path: &Path, sample_rate: u32) -> Result<Vec<Waveform>> {
    let m = load_manifest(path)?;
    m.entries
        .iter()
        .map(|e| {
            let w = read_wav(&e.path)?;
            Ok(if w.sample_rate() == sample_rate { w } else { resample(&w, sample_rate)? })
        })
        .collect()
}

/// Speech plus train and test contamination corpora. Anything without a
/// manifest comes from the synthetic generator.
struct Sources {
    speech: Vec<Waveform>,
    train: Corpora,
    test: Corpora,
}

fn load_sources(cfg: &RunConfig, sample_rate: u32) -> Result<Sources> {
    let c = &cfg.corpora;
    let synth = || {
        let mut s = c.synth.clone();
        s.sample_rate = sample_rate;
        SynthCorpora::generate(&s, c.synth_seed)
    };
    let mut generated: Option<SynthCorpora> = None;
    let speech = match &c.speech_manifest {
        Some(p) => load_speech(p, sample_rate)?,
        None => generated.get_or_insert_with(synth).speech.clone(),
    };
    let mut split = |noise: &Option<PathBuf>, rir: &Option<PathBuf>, train: bool| -> Result<Corpora> {
        let corpora = match (noise, rir) {
            (Some(n), Some(r)) => Corpora::from_manifests(&load_manifest(n)?, &load_manifest(r)?, sample_rate, &[])?,
            (None, None) => {
                let g = generated.get_or_insert_with(synth);
                if train {
                    g.train.clone()
                } else {
                    g.test.clone()
                }
            }
            _ => bail!("noise and RIR manifests must be given together"),
        };
        Ok(corpora.excluding(&c.excluded_categories))
    };
    let train = split(&c.noise_train_manifest, &c.rir_train_manifest, true)?;
    let test = split(&c.noise_test_manifest, &c.rir_test_manifest, false)?;
    Ok(Sources { speech, train, test })
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli)?;
    rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global().ok();
    match &cli.command {
        Command::Params => cmd_params(&cfg),
        Command::Gradcheck { seeds, tol, e2e_tol } => cmd_gradcheck(*seeds, *tol, *e2e_tol),
        Command::SynthCorpus => cmd_synth(&cli, &cfg),
        Command::Augment { manifest_speech, manifest_noise, manifest_rir, policy, count } => {
            let mut cfg = cfg.clone();
            if let Some(p) = policy {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                cfg.policy = serde_json::from_str::<ContaminationPolicy>(&text)
                    .with_context(|| format!("parsing policy {}", p.display()))?;
                cfg.policy.validate()?;
            }
            cfg.corpora.speech_manifest = manifest_speech.clone().or(cfg.corpora.speech_manifest);
            if manifest_noise.is_some() || manifest_rir.is_some() {
                cfg.corpora.noise_train_manifest = manifest_noise.clone();
                cfg.corpora.rir_train_manifest = manifest_rir.clone();
            }
            cmd_augment(&cli, &cfg, *count)
        }
        Command::Distill { no_enh_head, no_augment, steps } => {
            let mut cfg = cfg.clone();
            if *no_enh_head {
                cfg.distill.beta_enh = 0.0;
            }
            if *no_augment {
                cfg.distill.augment = false;
            }
            if let Some(s) = steps {
                cfg.distill.total_steps = *s;
            }
            cfg.validate()?;
            cmd_distill(&cli, &cfg)
        }
        Command::Eval { model, scenarios, report, breakdown, name } => {
            let conditions = scenarios
                .iter()
                .filter(|s| !s.trim().is_empty())
                .map(|s| s.parse::<Condition>())
                .collect::<Result<Vec<_>, _>>()?;
            let format: ReportFormat = report.parse()?;
            cmd_eval(&cli, &cfg, model, &conditions, format, breakdown.as_deref(), name.as_deref())
        }
        Command::Report { inputs, format } => cmd_report(&cli, inputs, format.parse()?),
    }
}

fn millions(n: usize) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

fn cmd_params(cfg: &RunConfig) -> Result<()> {
    let preset = cfg.preset()?;
    let teacher = TeacherModel::new(&preset, cfg.seed)?;
    let student = StudentModel::new(&preset, cfg.seed, Some(&teacher))?;
    let (t, s) = (teacher.count_params(), student.count_params());
    println!("preset {}", preset.name);
    println!("teacher {t} ({})", millions(t));
    println!("student {s} ({})", millions(s));
    println!("enhancement_head {}", student.count_enhancement_params());
    println!("student/teacher {:.3}", s as f64 / t as f64);
    Ok(())
}

fn cmd_gradcheck(seeds: u64, tol: f64, e2e_tol: f64) -> Result<()> {
    let mut failures = 0;
    for fx in op_fixtures() {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let r = fx.check(seed, 1e-6, tol)?;
            worst = worst.max(r.max_rel_err);
            if !r.failing.is_empty() {
                failures += 1;
            }
        }
        println!("{:<24} max_rel_err {worst:.3e} {}", fx.name, if worst < tol { "ok" } else { "FAIL" });
    }
    let mut worst = 0.0f64;
    for seed in 0..seeds {
        let r = student_gradcheck(seed, 1e-6, e2e_tol)?;
        worst = worst.max(r.max_rel_err);
        if !r.failing.is_empty() {
            failures += 1;
        }
    }
    println!("{:<24} max_rel_err {worst:.3e} {}", "student_loss", if worst < e2e_tol { "ok" } else { "FAIL" });
    if failures > 0 {
        bail!("{failures} gradient checks exceeded tolerance");
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let out = require_out(cli)?;
    let preset = cfg.preset()?;
    let mut s = cfg.corpora.synth.clone();
    s.sample_rate = preset.sample_rate;
    prepare_run_dir(out, cfg)?;
    SynthCorpora::generate(&s, cfg.corpora.synth_seed).write(out)?;
    println!("wrote synthetic corpora to {}", out.display());
    Ok(())
}

fn cmd_augment(cli: &Cli, cfg: &RunConfig, count: usize) -> Result<()> {
    let out = require_out(cli)?;
    let preset = cfg.preset()?;
    let src = load_sources(cfg, preset.sample_rate)?;
    prepare_run_dir(out, cfg)?;
    let batch: Vec<Waveform> = src.speech.into_iter().take(count).collect();
    let items = contaminate_batch(&batch, &cfg.policy, &src.train, cfg.seed)?;
    let mut log = String::new();
    for (i, it) in items.iter().enumerate() {
        write_wav(&it.input, out.join(format!("input_{i:04}.wav")), WavEncoding::Float32)?;
        write_wav(&it.target, out.join(format!("target_{i:04}.wav")), WavEncoding::Float32)?;
        let (noise, rir) = match it.action {
            ContaminationAction::Clean => (None, None),
            ContaminationAction::Noise { noise, .. } => (Some(noise), None),
            ContaminationAction::Reverb { rir } => (None, Some(rir)),
            ContaminationAction::NoiseReverb { noise, rir, .. } => (Some(noise), Some(rir)),
        };
        let line = json!({
            "index": i,
            "action": it.action.tag_name(),
            "snr_db": it.action.snr_db(),
            "noise_id": noise.map(|n| src.train.noises[n].id.clone()),
            "rir_id": rir.map(|r| src.train.rirs[r].id.clone()),
        });
        log.push_str(&line.to_string());
        log.push('\n');
    }
    fs::write(out.join("actions.jsonl"), log)?;
    println!("wrote {} contaminated pairs to {}", items.len(), out.display());
    Ok(())
}

fn cmd_distill(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    let out = require_out(cli)?;
    let preset = cfg.preset()?;
    let src = load_sources(cfg, preset.sample_rate)?;
    prepare_run_dir(out, cfg)?;
    let teacher = TeacherModel::new(&preset, cfg.seed)?;
    save_checkpoint(&teacher.to_checkpoint(cfg.seed), out.join("teacher.rdck"))?;
    let mut student = StudentModel::new(&preset, cfg.seed, Some(&teacher))?;
    let dcfg = cfg.distill_config();
    log::info!(
        "distilling {} steps (teacher {} params, student {}; augment {}, beta_enh {})",
        dcfg.total_steps,
        teacher.count_params(),
        student.count_params(),
        dcfg.augment,
        dcfg.beta_enh
    );
    let data = TrainingData { speech: &src.speech, corpora: &src.train, policy: &cfg.policy };
    let outcome = run_distillation(&dcfg, &teacher, &mut student, data, Some(out))?;
    save_checkpoint(&student.to_checkpoint(cfg.seed), out.join("student.rdck"))?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "step {} loss_distill {:.5} loss_enh {}",
            last.step,
            last.loss_distill,
            last.loss_enh.map_or("null".to_string(), |l| format!("{l:.5}"))
        );
    }
    println!("student checkpoint: {}", out.join("student.rdck").display());
    Ok(())
}

enum Upstream {
    Student(StudentModel),
    Teacher(TeacherModel),
    LogSpec(LogSpectrogram),
}

impl Upstream {
    fn load(model: &str) -> Result<Self> {
        if model == "logspec" {
            return Ok(Upstream::LogSpec(LogSpectrogram::default()));
        }
        let ckpt = load_checkpoint(model)?;
        let is_teacher = ckpt.params.names().first().is_some_and(|n| n.starts_with("teacher."));
        Ok(if is_teacher {
            Upstream::Teacher(TeacherModel::from_checkpoint(&ckpt)?)
        } else {
            Upstream::Student(StudentModel::from_checkpoint(&ckpt)?)
        })
    }

    fn extractor(&self) -> &dyn FeatureExtractor {
        match self {
            Upstream::Student(m) => m,
            Upstream::Teacher(m) => m,
            Upstream::LogSpec(m) => m,
        }
    }

    fn sample_rate(&self) -> Option<u32> {
        match self {
            Upstream::Student(m) => Some(m.preset.sample_rate),
            Upstream::Teacher(m) => Some(m.preset.sample_rate),
            Upstream::LogSpec(_) => None,
        }
    }
}

fn cmd_eval(
    cli: &Cli,
    cfg: &RunConfig,
    model: &str,
    conditions: &[Condition],
    format: ReportFormat,
    breakdown: Option<&str>,
    name: Option<&str>,
) -> Result<()> {
    let upstream = Upstream::load(model)?;
    let extractor = upstream.extractor();
    let mut kws = cfg.eval.kws.clone();
    if let Some(sr) = upstream.sample_rate() {
        kws.sample_rate = sr;
    }
    let corpus = gen_kws_corpus(&kws, cfg.seed);
    let src = load_sources(cfg, kws.sample_rate)?;
    let probe = train_probe(extractor, &corpus.train, corpus.n_classes, &cfg.eval.probe)?;
    let label = name.map(str::to_string).unwrap_or_else(|| {
        Path::new(model).file_stem().map_or(model.to_string(), |s| s.to_string_lossy().into_owned())
    });

    let mut text = String::new();
    let mut table = ResultsTable::new(vec!["KS".to_string()]);
    if !conditions.is_empty() {
        let snr = (cfg.eval.snr_low_db, cfg.eval.snr_high_db);
        let scen = build_scenarios(&corpus.test.waves, &src.test, conditions, snr, cfg.seed)?;
        let acc = evaluate_conditions(extractor, &probe, &scen, &corpus.test.labels)?;
        let mut cells = [f64::NAN; 4];
        for (c, a) in &acc {
            cells[c.index()] = *a;
        }
        table.push(label, vec![cells])?;
        text.push_str(&render_report(&table, format)?);
    }
    let mut breakdown_json = None;
    if let Some(kind) = breakdown {
        let results = match kind {
            "noise-type" => {
                let snr = (cfg.eval.breakdown_snr_low_db, cfg.eval.breakdown_snr_high_db);
                noise_type_breakdown(extractor, &probe, &corpus.test, &src.test, snr, cfg.seed)?
            }
            "room-size" => room_size_breakdown(extractor, &probe, &corpus.test, &src.test, cfg.seed)?,
            other => bail!("unknown breakdown `{other}` (expected noise-type or room-size)"),
        };
        if !text.is_empty() {
            text.push('\n');
        }
        text.push_str(&render_breakdown(kind, &results, format)?);
        breakdown_json = Some(serde_json::to_string_pretty(&results)? + "\n");
    }
    print!("{text}");
    if let Some(out) = &cli.out {
        prepare_run_dir(out, cfg)?;
        fs::write(out.join("results.json"), serde_json::to_string_pretty(&table)? + "\n")?;
        let ext = match format {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        };
        fs::write(out.join(format!("report.{ext}")), &text)?;
        if let Some(b) = breakdown_json {
            fs::write(out.join("breakdown.json"), b)?;
        }
    }
    Ok(())
}

fn read_results(path: &Path) -> Result<ResultsTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "csv") {
        Ok(parse_csv_report(&text)?)
    } else {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn cmd_report(cli: &Cli, inputs: &[PathBuf], format: ReportFormat) -> Result<()> {
    let mut merged: Option<ResultsTable> = None;
    for p in inputs {
        let t = read_results(p)?;
        match &mut merged {
            None => merged = Some(t),
            Some(m) => {
                if m.tasks != t.tasks {
                    bail!("{} has tasks {:?}, expected {:?}", p.display(), t.tasks, m.tasks);
                }
                m.rows.extend(t.rows);
            }
        }
    }
    let text = render_report(&merged.unwrap_or_default(), format)?;
    match &cli.out {
        Some(out) => fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}
