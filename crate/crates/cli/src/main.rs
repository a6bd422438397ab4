use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use metareg::config::{Preset, RunConfig};
use metareg::data::{load_dataset, save_dataset, save_ddf, CasePair};
use metareg::meta::{log_to_csv, meta_train, train_conventional, ImagePair, LogRow};
use metareg::models::RegNet;
use metareg::report::{
    evaluate, register, render_report, save_records, score, summarize, summary_to_csv, Method, MetricsRecord,
    Models,
};
use metareg::seeds::{rng, Stream};

#[derive(Parser)]
#[command(name = "metareg", version, about = "Deformable registration with meta-learning and test-time optimization")]
struct Cli {
    /// TOML run configuration; overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Global seed; overrides the configuration's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic phantom pairs into <out>/train and <out>/test.
    GenData {
        /// Total number of cases; split with the configured train fraction.
        #[arg(long)]
        cases: Option<usize>,
        /// Cubic grid extent in voxels (divisible by 4).
        #[arg(long)]
        extent: Option<usize>,
    },
    /// Conventional training on <data>/train; writes <out>/conventional.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Reptile meta-training on <data>/train; writes <out>/meta.
    MetaTrain {
        #[arg(long)]
        data: PathBuf,
    },
    /// Classical per-pair optimization of a dense field.
    RegisterClassical {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Restrict to these case ids.
        #[arg(long = "pair")]
        pairs: Vec<usize>,
    },
    /// Few-shot test-time optimization from a checkpoint.
    Tto {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long = "pair")]
        pairs: Vec<usize>,
    },
    /// Evaluate methods on <data>/test and write metrics, summary and report.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        conventional: Option<PathBuf>,
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Comma-separated subset of classical, conventional, meta, meta_tto.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
    },
    /// Train both networks (unless given) and compare all four methods.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        conventional: Option<PathBuf>,
        #[arg(long)]
        meta: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let cfg = match (&cli.config, cli.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(PresetArg::Paper)) => RunConfig::preset(Preset::Paper),
        (None, Some(PresetArg::Desk)) | (None, None) => RunConfig::preset(Preset::Desk),
    };
    let cfg = match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    let out = cli.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    match cli.command {
        Command::GenData { cases, extent } => {
            if let Some(n) = cases {
                if n == 0 {
                    bail!("empty dataset: --cases must be positive");
                }
                let train = (n as f64 * cfg.data.train_fraction()).round() as usize;
                cfg.data.train_cases = train;
                cfg.data.test_cases = n.saturating_sub(train);
            }
            if let Some(e) = extent {
                cfg.data.extent = [e; 3];
            }
            cfg.save(&out.join("config.toml"))?;
            gen_data(&cfg, out)
        }
        Command::Train { data } => {
            cfg.save(&out.join("config.toml"))?;
            let pairs = image_pairs(&load_split(&data, Split::Train)?);
            let init = RegNet::init(cfg.network, &mut rng(cfg.seed, Stream::Init, 0))?;
            let total = cfg.conventional.iterations;
            let (net, losses) = train_conventional(&pairs, &cfg.conventional, init, |step, loss| {
                if step % 100 == 0 || step + 1 == total {
                    eprintln!("step {step}/{total} loss {loss:.6}");
                }
            })?;
            net.save(&out.join("conventional"))?;
            let mut log = String::from("step,loss\n");
            for (i, l) in losses.iter().enumerate() {
                log.push_str(&format!("{i},{l}\n"));
            }
            write(&out.join("conventional_log.csv"), &log)?;
            eprintln!("wrote {}", out.join("conventional").display());
            Ok(())
        }
        Command::MetaTrain { data } => {
            cfg.save(&out.join("config.toml"))?;
            let pairs = image_pairs(&load_split(&data, Split::Train)?);
            let net = run_meta(&cfg, &pairs, out)?;
            net.save(&out.join("meta"))?;
            eprintln!("wrote {}", out.join("meta").display());
            Ok(())
        }
        Command::RegisterClassical { data, split, pairs } => {
            cfg.save(&out.join("config.toml"))?;
            let cases = select(load_split(&data, split)?, &pairs)?;
            register_and_save(Method::Classical, &cases, &Models::default(), &cfg, &out.join("classical"))
        }
        Command::Tto {
            data,
            checkpoint,
            split,
            pairs,
        } => {
            cfg.save(&out.join("config.toml"))?;
            let cases = select(load_split(&data, split)?, &pairs)?;
            let models = Models {
                meta: Some(load_net(&checkpoint)?),
                ..Models::default()
            };
            register_and_save(Method::MetaTto, &cases, &models, &cfg, &out.join("tto"))
        }
        Command::Evaluate {
            data,
            conventional,
            meta,
            methods,
        } => {
            let models = Models {
                conventional: conventional.as_deref().map(load_net).transpose()?,
                meta: meta.as_deref().map(load_net).transpose()?,
            };
            let methods = if methods.is_empty() {
                let mut m = vec![Method::Classical];
                if models.conventional.is_some() {
                    m.push(Method::Conventional);
                }
                if models.meta.is_some() {
                    m.extend([Method::Meta, Method::MetaTto]);
                }
                m
            } else {
                methods.iter().map(|s| s.parse()).collect::<metareg::Result<Vec<Method>>>()?
            };
            let cases = load_split(&data, Split::Test)?;
            evaluate_and_report(&cases, &methods, &models, &cfg, out, "metrics.csv")
        }
        Command::Compare {
            data,
            conventional,
            meta,
        } => {
            cfg.save(&out.join("config.toml"))?;
            let train = image_pairs(&load_split(&data, Split::Train)?);
            let conventional = match conventional {
                Some(path) => load_net(&path)?,
                None => {
                    let init = RegNet::init(cfg.network, &mut rng(cfg.seed, Stream::Init, 0))?;
                    let (net, _) = train_conventional(&train, &cfg.conventional, init, |step, loss| {
                        if step % 100 == 0 {
                            eprintln!("conventional step {step} loss {loss:.6}");
                        }
                    })?;
                    net.save(&out.join("conventional"))?;
                    net
                }
            };
            let meta = match meta {
                Some(path) => load_net(&path)?,
                None => {
                    let net = run_meta(&cfg, &train, out)?;
                    net.save(&out.join("meta"))?;
                    net
                }
            };
            let models = Models {
                conventional: Some(conventional),
                meta: Some(meta),
            };
            let cases = load_split(&data, Split::Test)?;
            evaluate_and_report(&cases, &Method::ALL, &models, &cfg, out, "comparison.csv")
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn split_dir(root: &Path, split: Split) -> PathBuf {
    root.join(match split {
        Split::Train => "train",
        Split::Test => "test",
    })
}

fn load_split(root: &Path, split: Split) -> Result<Vec<(usize, CasePair)>> {
    let dir = split_dir(root, split);
    load_dataset(&dir).with_context(|| format!("cannot load dataset from {}", dir.display()))
}

fn load_net(dir: &Path) -> Result<RegNet> {
    RegNet::load(dir).with_context(|| format!("cannot load checkpoint {}", dir.display()))
}

fn image_pairs(cases: &[(usize, CasePair)]) -> Vec<ImagePair> {
    cases.iter().map(|(id, c)| ImagePair::from_case(*id, c)).collect()
}

fn select(cases: Vec<(usize, CasePair)>, ids: &[usize]) -> Result<Vec<(usize, CasePair)>> {
    if ids.is_empty() {
        return Ok(cases);
    }
    for id in ids {
        if !cases.iter().any(|(c, _)| c == id) {
            bail!("no case with id {id}");
        }
    }
    Ok(cases.into_iter().filter(|(id, _)| ids.contains(id)).collect())
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (train, test) = cfg.data.generate(cfg.seed)?;
    save_dataset(&split_dir(out, Split::Train), &train)?;
    save_dataset(&split_dir(out, Split::Test), &test)?;
    eprintln!(
        "wrote {} train and {} test cases under {}",
        train.len(),
        test.len(),
        out.display()
    );
    Ok(())
}

fn run_meta(cfg: &RunConfig, pairs: &[ImagePair], out: &Path) -> Result<RegNet> {
    let init = RegNet::init(cfg.network, &mut rng(cfg.seed, Stream::Init, 0))?;
    let episodes = cfg.meta.episodes();
    let start = Instant::now();
    let (net, log) = meta_train(pairs, &cfg.meta, init, |row: &LogRow| {
        if row.episode.is_multiple_of(10) || row.episode + 1 == episodes {
            eprintln!(
                "episode {}/{episodes} pair {} beta {:.5} loss {:.6} ({:.0} s)",
                row.episode,
                row.pair_id,
                row.beta,
                row.mean_episode_loss,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    write(&out.join("meta_log.csv"), &log_to_csv(&log))?;
    Ok(net)
}

fn register_and_save(
    method: Method,
    cases: &[(usize, CasePair)],
    models: &Models,
    cfg: &RunConfig,
    dir: &Path,
) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut records = Vec::new();
    for (id, case) in cases {
        let pair = ImagePair::from_case(*id, case);
        let (ddf, wall_time_s) = register(method, &pair, models, cfg)?;
        save_ddf(&dir.join(format!("case_{id:03}_ddf.hdr")), &ddf, case.spacing())?;
        let (dsc, tre_mm) = score(case, &ddf)?;
        eprintln!("{method} pair {id}: dsc {dsc:.4} tre {tre_mm:.3} mm ({wall_time_s:.2} s)");
        records.push(MetricsRecord {
            method,
            pair_id: *id,
            dsc,
            tre_mm,
            wall_time_s,
        });
    }
    save_records(&dir.join("metrics.csv"), &records)?;
    Ok(())
}

fn evaluate_and_report(
    cases: &[(usize, CasePair)],
    methods: &[Method],
    models: &Models,
    cfg: &RunConfig,
    out: &Path,
    csv_name: &str,
) -> Result<()> {
    let eval = evaluate(cases, methods, models, cfg, |r| {
        eprintln!(
            "{} pair {}: dsc {:.4} tre {:.3} mm ({:.2} s)",
            r.method, r.pair_id, r.dsc, r.tre_mm, r.wall_time_s
        );
    });
    let summaries = summarize(&eval.records);
    save_records(&out.join(csv_name), &eval.records)?;
    write(&out.join("summary.csv"), &summary_to_csv(&summaries))?;
    let failures: Vec<(Method, String)> = eval.failures.iter().map(|(m, e)| (*m, e.to_string())).collect();
    write(&out.join("report.md"), &render_report(&summaries, &failures, cfg)?)?;
    print!("{}", summary_to_csv(&summaries));
    if !failures.is_empty() {
        let list: Vec<String> = failures.iter().map(|(m, e)| format!("{m}: {e}")).collect();
        bail!("{} method(s) failed: {}", failures.len(), list.join("; "));
    }
    Ok(())
}
