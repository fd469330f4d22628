// SPDX-License-Identifier: MIT OR Apache-2.0

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use glp::config::RunConfig;
use glp::denoiser::DenoiserModel;
use glp::experiments::criteria::{run_all, summary_csv};
use glp::experiments::steering::{evaluate_steering, steer_csv, steering_setup, SteerMethod};
use glp::experiments::world::{train_glp_on, train_sae_on, train_world_source, World};
use glp::flow::{euler_sample, noisy_reconstruct, SdeditParams, TrainSettings};
use glp::metrics::{delta_lm_loss, frechet_distance, metric_csv, pca_top_k};
use glp::probing::{
    encode_task, probe_csv, run_probe, task_suite, CandidateFilter, Encoder, ProbeMode,
};
use glp::rng::derive_seed;
use glp::sae::SaeModel;
use glp::scaling::{compute_frontier, drop_warmup, ema_smooth, fit_power_law, parse_loss_csv};
use glp::source::{generate_corpus, hook_rows, read_corpus, write_corpus, GrammarSpec, SourceLm};
use glp::store::{read_activations, write_activations, Scaler};
use glp::{GlpError, Result};

#[derive(Parser)]
#[command(name = "glp", version, about = "Generative activation priors on a toy language model")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Size preset: desk or smoke.
    #[arg(long)]
    profile: Option<String>,
    /// Override a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct OutArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory; nothing is written elsewhere.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample training and held-out corpora from the grammar.
    GenCorpus(OutArgs),
    /// Train the source language model.
    TrainSource {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Cache hook activations of a corpus.
    Cache {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
    },
    /// Fit the per-dimension standardizer.
    FitScaler {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        acts: PathBuf,
    },
    /// Train the flow-matching denoiser.
    Train {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        acts: PathBuf,
        #[arg(long)]
        scaler: PathBuf,
    },
    /// Train the top-k sparse autoencoder baseline.
    TrainSae {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        acts: PathBuf,
        #[arg(long)]
        scaler: PathBuf,
    },
    /// Draw activations with the Euler sampler.
    Sample {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scaler: PathBuf,
    },
    /// Frechet distance between two activation files.
    Fd {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top principal components of an activation file.
    Pca {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        acts: PathBuf,
    },
    /// Next-token loss increase under reconstructed hooks.
    DeltaLm {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        scaler: PathBuf,
        #[arg(long)]
        glp: Option<PathBuf>,
        #[arg(long)]
        sae: Option<PathBuf>,
    },
    /// Raw versus projected steering toward the positive regime.
    Steer {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        glp: PathBuf,
        #[arg(long)]
        scaler: PathBuf,
    },
    /// 1-D and dense probes over the synthetic task suite.
    Probe {
        #[command(flatten)]
        o: OutArgs,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        glp: PathBuf,
        #[arg(long)]
        scaler: PathBuf,
        #[arg(long)]
        sae: Option<PathBuf>,
    },
    /// Smoothed frontier and power-law fit of `step,flops,loss` files.
    ScalingFit {
        #[command(flatten)]
        o: OutArgs,
        /// Loss CSV; repeat for several runs.
        #[arg(long, required = true)]
        loss: Vec<PathBuf>,
    },
    /// Run every acceptance check and write a summary table.
    Repro(OutArgs),
}

/// Usage problems (exit 1) versus failures while running (exit 2).
enum Failure {
    Usage(String),
    Runtime(GlpError),
}

impl From<GlpError> for Failure {
    fn from(e: GlpError) -> Self {
        match e {
            GlpError::Config(m) => Failure::Usage(m),
            other => Failure::Runtime(other),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn resolve(c: &Common) -> std::result::Result<RunConfig, Failure> {
    let mut overrides = Vec::new();
    if let Some(p) = &c.profile {
        overrides.push(("profile".to_string(), p.clone()));
    }
    for kv in &c.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = c.seed {
        overrides.push(("seed".to_string(), s.to_string()));
    }
    Ok(RunConfig::load(c.config.as_deref(), &overrides)?)
}

fn prepare(o: &OutArgs) -> std::result::Result<RunConfig, Failure> {
    let cfg = resolve(&o.common)?;
    std::fs::create_dir_all(&o.out).map_err(|e| GlpError::Io {
        path: o.out.clone(),
        source: e,
    })?;
    cfg.write_resolved(&o.out)?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| GlpError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn grammar(cfg: &RunConfig) -> Result<GrammarSpec> {
    GrammarSpec::two_regime(cfg.usize("vocab")?, derive_seed(cfg.seed()?, "grammar"))
}

fn acts_arc(path: &Path) -> Result<Arc<glp::Matrix>> {
    Ok(Arc::new(read_activations(path)?.1))
}

fn run(cmd: Cmd) -> CmdResult {
    match cmd {
        Cmd::GenCorpus(o) => {
            let cfg = prepare(&o)?;
            let s = cfg.sizes()?;
            let seed = cfg.seed()?;
            let spec = grammar(&cfg)?;
            let train = generate_corpus(&spec, s.corpus_docs, s.doc_len, derive_seed(seed, "corpus"))?;
            let held = generate_corpus(&spec, s.heldout_docs, s.doc_len, derive_seed(seed, "heldout"))?;
            write_corpus(&o.out.join("corpus.txt"), &train)?;
            write_corpus(&o.out.join("heldout.txt"), &held)?;
        }
        Cmd::TrainSource { o, corpus } => {
            let cfg = prepare(&o)?;
            let docs = read_corpus(&corpus)?;
            let lm = train_world_source(&docs, &cfg.sizes()?, cfg.seed()?)?;
            lm.save(&o.out.join("source.glpw"))?;
        }
        Cmd::Cache { o, source, corpus } => {
            let cfg = prepare(&o)?;
            let lm = SourceLm::load(&source)?;
            let acts = hook_rows(&lm, &read_corpus(&corpus)?)?;
            write_activations(&o.out.join("acts.glpa"), &acts, cfg.u64("layer_id")? as u32)?;
        }
        Cmd::FitScaler { o, acts } => {
            prepare(&o)?;
            Scaler::fit(&read_activations(&acts)?.1)?.save(&o.out.join("scaler.txt"))?;
        }
        Cmd::Train { o, acts, scaler } => {
            let cfg = prepare(&o)?;
            let (model, curve, _) = train_glp_on(
                acts_arc(&acts)?,
                &Scaler::load(&scaler)?,
                cfg.usize("glp_blocks")?,
                cfg.usize("glp_steps")?,
                cfg.usize("batch")?,
                cfg.f64("lr")?,
                cfg.seed()?,
                &[],
            )?;
            model.save(&o.out.join("glp.glpw"))?;
            write(&o.out.join("loss.csv"), &curve.to_csv())?;
        }
        Cmd::TrainSae { o, acts, scaler } => {
            let cfg = prepare(&o)?;
            let (sae, losses) = train_sae_on(
                acts_arc(&acts)?,
                &Scaler::load(&scaler)?,
                cfg.usize("sae_steps")?,
                cfg.usize("batch")?,
                cfg.seed()?,
            )?;
            sae.save(&o.out.join("sae.glpw"))?;
            let mut csv = String::from("step,loss\n");
            for (i, l) in losses.iter().enumerate() {
                csv.push_str(&format!("{i},{l:?}\n"));
            }
            write(&o.out.join("sae_loss.csv"), &csv)?;
        }
        Cmd::Sample { o, model, scaler } => {
            let cfg = prepare(&o)?;
            let model = DenoiserModel::load(&model)?;
            let samples = euler_sample(
                &model,
                cfg.usize("samples")?,
                cfg.usize("sample_steps")?,
                &Scaler::load(&scaler)?,
                derive_seed(cfg.seed()?, "sample"),
            )?;
            write_activations(&o.out.join("samples.glpa"), &samples, cfg.u64("layer_id")? as u32)?;
        }
        Cmd::Fd { common, a, b, out } => {
            let cfg = resolve(&common)?;
            let fd = frechet_distance(&read_activations(&a)?.1, &read_activations(&b)?.1)?;
            println!("{fd:?}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|e| GlpError::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                cfg.write_resolved(&dir)?;
                write(&dir.join("fd.csv"), &metric_csv(&[("fd".into(), cfg.hash(), fd)]))?;
            }
        }
        Cmd::Pca { o, acts } => {
            let cfg = prepare(&o)?;
            let pca = pca_top_k(&read_activations(&acts)?.1, cfg.usize("pca_k")?)?;
            let mut csv = String::from("component,variance,loadings\n");
            for (i, v) in pca.variances.iter().enumerate() {
                let load: Vec<String> = pca.components.row(i).iter().map(|x| format!("{x:?}")).collect();
                csv.push_str(&format!("{i},{v:?},{}\n", load.join(" ")));
            }
            write(&o.out.join("pca.csv"), &csv)?;
        }
        Cmd::DeltaLm { o, source, corpus, scaler, glp, sae } => {
            let cfg = prepare(&o)?;
            let lm = SourceLm::load(&source)?;
            let docs = read_corpus(&corpus)?;
            let scaler = Scaler::load(&scaler)?;
            let hash = cfg.hash();
            let mut rows = vec![(
                "delta_lm/identity".to_string(),
                hash.clone(),
                delta_lm_loss(&lm, &docs, &mut |h| Ok(h.clone()))?,
            )];
            if let Some(p) = glp {
                let model = DenoiserModel::load(&p)?;
                let params = SdeditParams {
                    t_start: cfg.f64("t_start")?,
                    num_steps: cfg.usize("num_steps")?,
                    seed: derive_seed(cfg.seed()?, "delta/noise"),
                    shared_noise: false,
                };
                let d = delta_lm_loss(&lm, &docs, &mut |h| noisy_reconstruct(&model, h, &params, &scaler))?;
                rows.push(("delta_lm/glp".into(), hash.clone(), d));
            }
            if let Some(p) = sae {
                let sae = SaeModel::load(&p)?;
                let d = delta_lm_loss(&lm, &docs, &mut |h| sae.reconstruct_raw(h, &scaler))?;
                rows.push(("delta_lm/sae".into(), hash.clone(), d));
            }
            write(&o.out.join("delta_lm.csv"), &metric_csv(&rows))?;
        }
        Cmd::Steer { o, source, corpus, glp, scaler } => {
            let cfg = prepare(&o)?;
            let seed = cfg.seed()?;
            let docs = read_corpus(&corpus)?;
            let mut world =
                World::assemble(cfg.sizes()?, seed, grammar(&cfg)?, docs.clone(), docs, SourceLm::load(&source)?)?;
            world.scaler = Scaler::load(&scaler)?;
            let model = DenoiserModel::load(&glp)?;
            let setup = steering_setup(&world, seed)?;
            let projected = SteerMethod::Projected {
                model: &model,
                scaler: &world.scaler,
                params: SdeditParams {
                    t_start: cfg.f64("t_start")?,
                    num_steps: cfg.usize("num_steps")?,
                    seed: derive_seed(seed, "steer/project"),
                    shared_noise: false,
                },
            };
            let mut evals = Vec::new();
            for &r in &world.sizes.steer_coefficients {
                for m in [SteerMethod::Raw, projected] {
                    evals.push((m.name(), evaluate_steering(&world, &setup, m, r, seed)?));
                }
            }
            let rows: Vec<(&str, &_)> = evals.iter().map(|(n, e)| (*n, e)).collect();
            write(&o.out.join("steer.csv"), &steer_csv(&world, &rows))?;
        }
        Cmd::Probe { o, source, glp, scaler, sae } => {
            let cfg = prepare(&o)?;
            let seed = cfg.seed()?;
            let lm = SourceLm::load(&source)?;
            let model = DenoiserModel::load(&glp)?;
            let scaler = Scaler::load(&scaler)?;
            let sae = sae.map(|p| SaeModel::load(&p)).transpose()?;
            let s = cfg.sizes()?;
            let tasks = task_suite(&grammar(&cfg)?, s.probe_sizes, derive_seed(seed, "probe/tasks"))?;
            let mut encoders = vec![
                Encoder::GlpMetaNeurons {
                    model: &model,
                    scaler: &scaler,
                    t: cfg.f64("probe_t")?,
                    seed: derive_seed(seed, "probe/meta"),
                },
                Encoder::RawHook,
                Encoder::RawSourceMlp,
            ];
            if let Some(sae) = &sae {
                encoders.push(Encoder::SaeLatents { sae, scaler: &scaler });
            }
            let filter = CandidateFilter::TopK(cfg.usize("probe_k")?);
            let mut reports = Vec::new();
            for task in &tasks {
                for enc in &encoders {
                    let encoded = encode_task(&lm, task, enc)?;
                    for mode in [ProbeMode::OneD, ProbeMode::Dense] {
                        reports.push(run_probe(task, &encoded, enc, filter, mode)?);
                    }
                }
            }
            write(&o.out.join("probe.csv"), &probe_csv(&reports))?;
        }
        Cmd::ScalingFit { o, loss } => {
            let cfg = prepare(&o)?;
            let half_life = cfg.f64("ema_half_life")?;
            let mut curves = Vec::new();
            for p in &loss {
                let text = std::fs::read_to_string(p).map_err(|e| GlpError::Io {
                    path: p.clone(),
                    source: e,
                })?;
                let pts = parse_loss_csv(&text)?;
                let smooth = ema_smooth(&pts.iter().map(|x| x.1).collect::<Vec<_>>(), half_life);
                let points: Vec<(f64, f64)> = pts.iter().zip(smooth).map(|(x, l)| (x.0, l)).collect();
                curves.push(drop_warmup(&points, TrainSettings::default().warmup_ratio));
            }
            let frontier = compute_frontier(&curves)?;
            let mut csv = String::from("flops,loss\n");
            for (c, l) in &frontier {
                csv.push_str(&format!("{c:?},{l:?}\n"));
            }
            write(&o.out.join("frontier.csv"), &csv)?;
            write(&o.out.join("fit.csv"), &fit_power_law(&frontier)?.to_csv())?;
        }
        Cmd::Repro(o) => {
            let cfg = prepare(&o)?;
            let exe = std::env::current_exe().map_err(|e| GlpError::Io {
                path: PathBuf::from("current executable"),
                source: e,
            })?;
            let scratch = o.out.join("cli_check");
            let mut details = String::new();
            let outcomes = run_all(cfg.sizes()?, cfg.seed()?, Some((&exe, &scratch)), |c| {
                println!("{}", c.line());
                details.push_str(&format!("{}\n", c.line()));
                for d in &c.details {
                    println!("    {d}");
                    details.push_str(&format!("    {d}\n"));
                }
                let _ = std::io::stdout().flush();
            })?;
            write(&o.out.join("summary.csv"), &summary_csv(&outcomes))?;
            write(&o.out.join("details.txt"), &details)?;
            let passed = outcomes.iter().filter(|c| c.passed).count();
            println!("{passed}/{} criteria passed", outcomes.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
