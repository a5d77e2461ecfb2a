use std::path::{Path, PathBuf};

use dnmf_core::bench::{run_bench, BenchConfig};
use dnmf_core::data::catalog::{load_catalog, read_labeled, write_labeled, CatalogFormat, MutationCatalog};
use dnmf_core::data::eval::write_reports_csv;
use dnmf_core::data::split::SplitPlan;
use dnmf_core::data::synth::{generate_synthetic, SynthConfig};
use dnmf_core::data::{evaluate_supervised, evaluate_unsupervised, EvalReport, EvalSettings, Method};
use dnmf_core::matrix::mse_columns;
use dnmf_core::mu::{factorize, infer_h, MuConfig};
use dnmf_core::net::{infer as net_infer, UnrolledModel};
use dnmf_core::nnls::NnlsConfig;
use dnmf_core::train::{load_checkpoint, save_checkpoint, train_supervised, train_unsupervised, AdamState, TrainConfig};
use dnmf_core::{Error, NonNegMatrix, RegParams, Result};
use log::info;

use crate::output::{ensure_dir, save_atomic, write_atomic};
use crate::{BenchArgs, EvalArgs, GenerateArgs, InferArgs, InputArgs, MethodArg, ModeArg, TrainArgs};

fn sidecar(dir: &Path, name: &str, given: &Option<PathBuf>) -> Option<PathBuf> {
    given.clone().or_else(|| Some(dir.join(name)).filter(|p| p.is_file()))
}

fn load_input(args: &InputArgs) -> Result<MutationCatalog> {
    let (path, truth_w, truth_h) = if args.input.is_dir() {
        let dir = &args.input;
        (dir.join("V.csv"), sidecar(dir, "W.csv", &args.truth_w), sidecar(dir, "H.csv", &args.truth_h))
    } else {
        (args.input.clone(), args.truth_w.clone(), args.truth_h.clone())
    };
    let format = CatalogFormat {
        mutation_catalog: args.sbs96,
        truth_w,
        truth_h,
    };
    let catalog = load_catalog(&path, &format)?;
    info!("loaded {} categories x {} samples from {}", catalog.categories(), catalog.samples(), path.display());
    Ok(catalog)
}

fn signature_labels(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("sig{}", i + 1)).collect()
}

fn resolve_rank(requested: Option<usize>, catalog: &MutationCatalog) -> Result<usize> {
    let truth = catalog
        .truth_h
        .as_ref()
        .map(NonNegMatrix::rows)
        .or(catalog.truth_w.as_ref().map(NonNegMatrix::cols));
    match (requested, truth) {
        (Some(k), _) => Ok(k),
        (None, Some(k)) => Ok(k),
        (None, None) => Err(Error::Config("rank unknown: pass --k or a ground-truth sidecar".into())),
    }
}

fn write_matrix(path: &Path, corner: &str, rows: &[String], cols: &[String], m: &NonNegMatrix) -> Result<()> {
    write_atomic(path, |w| write_labeled(w, corner, rows, cols, m))
}

pub fn generate(args: &GenerateArgs) -> Result<()> {
    let cfg = SynthConfig {
        f: args.f,
        mutations_per_sample: args.mutations_per_sample,
        ..SynthConfig::new(args.k, args.n, args.seed).with_noise(args.noise.into())
    };
    let catalog = generate_synthetic(&cfg)?;
    let dir = &args.output_dir;
    ensure_dir(dir)?;
    write_atomic(&dir.join("V.csv"), |w| catalog.write_counts(w))?;
    write_atomic(&dir.join("W.csv"), |w| catalog.write_truth_w(w))?;
    write_atomic(&dir.join("H.csv"), |w| catalog.write_truth_h(w))?;
    write_atomic(&dir.join("metadata.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &catalog.metadata)?;
        Ok(writeln!(w)?)
    })?;
    info!("wrote {} x {} catalog to {}", catalog.categories(), catalog.samples(), dir.display());
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let catalog = load_input(&args.input)?;
    let cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        ..Default::default()
    };
    let resumed = args.resume.as_deref().map(load_checkpoint).transpose()?;
    let f = catalog.categories();
    let dir = &args.output_dir;
    let (model, adam, trace, w) = match args.mode {
        ModeArg::Supervised => {
            let truth = catalog
                .truth_h
                .as_ref()
                .ok_or_else(|| Error::Config("supervised training needs ground-truth H (--truth-h)".into()))?;
            if let Some(k) = args.k.filter(|&k| k != truth.rows()) {
                return Err(Error::Config(format!("--k {k} disagrees with the ground-truth rank {}", truth.rows())));
            }
            let (model, mut adam) = match resumed {
                Some(state) => state,
                None => (UnrolledModel::supervised_init(f, truth.rows(), args.layers)?, AdamState::new(args.lr)),
            };
            let (model, trace) = train_supervised(&catalog.counts, truth, model, &cfg, &mut adam)?;
            (model, adam, trace, None)
        }
        ModeArg::Unsupervised => {
            let (model, mut adam) = match resumed {
                Some(state) => state,
                None => {
                    let k = resolve_rank(args.k, &catalog)?;
                    (UnrolledModel::unsupervised_init(f, k, args.layers, args.lambda)?, AdamState::new(args.lr))
                }
            };
            let fit = train_unsupervised(&catalog.counts, model, &cfg, &mut adam, &NnlsConfig::default())?;
            (fit.model, adam, fit.trace, Some(fit.w))
        }
    };
    ensure_dir(dir)?;
    save_atomic(&dir.join("checkpoint.json"), |p| save_checkpoint(p, &model, &adam))?;
    save_atomic(&dir.join("model.json"), |p| model.save(p))?;
    write_atomic(&dir.join("trace.csv"), |out| trace.write_csv(out))?;
    if let Some(w) = w {
        write_matrix(&dir.join("W.csv"), "category", &catalog.labels, &signature_labels(w.cols()), &w)?;
    }
    if let (Some(first), Some(last)) = (trace.loss.first(), trace.loss.last()) {
        println!("trained {} epochs: loss {first:.6e} -> {last:.6e}", trace.epochs());
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<UnrolledModel> {
    match UnrolledModel::load(path) {
        Ok(model) => Ok(model),
        Err(first) => load_checkpoint(path).map(|(model, _)| model).map_err(|_| first),
    }
}

pub fn infer(args: &InferArgs) -> Result<()> {
    let catalog = load_input(&args.input)?;
    let (h, sig_ids) = match (&args.model, &args.dictionary) {
        (Some(path), _) => {
            let model = load_model(path)?;
            (net_infer(&model, &catalog.counts)?, signature_labels(model.k()))
        }
        (None, Some(path)) => {
            let w = read_labeled(path)?;
            let cfg = MuConfig {
                max_iters: args.iters,
                ..MuConfig::inference()
            }
            .with_reg(RegParams::uniform(args.lambda)?);
            (infer_h(&catalog.counts, &w.values, &cfg)?.h, w.col_labels)
        }
        (None, None) => return Err(Error::Config("pass --model or --dictionary".into())),
    };
    ensure_dir(&args.output_dir)?;
    write_matrix(&args.output_dir.join("H.csv"), "signature", &sig_ids, &catalog.sample_ids, &h)?;
    if let Some(truth) = &catalog.truth_h {
        println!("mse vs ground truth: {:.6e}", mse_columns(&h, truth)?);
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let catalog = load_input(&args.input)?;
    if args.mode == ModeArg::Supervised && catalog.truth_h.is_none() {
        return Err(Error::Config("supervised evaluation needs ground-truth H (--truth-h)".into()));
    }
    if args.restarts == 0 {
        return Err(Error::Config("--restarts must be >= 1".into()));
    }
    for &l in &args.lambdas {
        RegParams::uniform(l)?;
    }
    let plan = SplitPlan::k_fold(catalog.samples(), args.folds, args.seed)?;
    let base = EvalSettings {
        layers: args.layers,
        train: TrainConfig {
            epochs: args.epochs,
            batch_size: args.batch_size,
            seed: args.seed,
            ..Default::default()
        },
        lr: args.lr,
        mu_train: MuConfig {
            restarts: args.restarts,
            seed: args.seed,
            ..MuConfig::training()
        },
        k: args.k,
        ..Default::default()
    };
    let methods: &[Method] = match args.method {
        MethodArg::Dnmf => &[Method::Dnmf],
        MethodArg::Mu => &[Method::Mu],
        MethodArg::Both => &[Method::Dnmf, Method::Mu],
    };
    let mut reports: Vec<EvalReport> = Vec::new();
    for &method in methods {
        match args.mode {
            // the supervised network learns its own penalties
            ModeArg::Supervised if method == Method::Dnmf => {
                reports.push(evaluate_supervised(&catalog, method, &base, &plan)?);
            }
            ModeArg::Supervised => {
                for &l in &args.lambdas {
                    reports.push(evaluate_supervised(&catalog, method, &base.clone().with_lambda(l), &plan)?);
                }
            }
            ModeArg::Unsupervised => {
                for &l in &args.lambdas {
                    reports.push(evaluate_unsupervised(&catalog, method, &base.clone().with_lambda(l), &plan)?);
                }
            }
        }
        info!("finished {method}");
    }
    ensure_dir(&args.output_dir)?;
    write_atomic(&args.output_dir.join("eval.csv"), |w| write_reports_csv(&reports, w))?;
    write_atomic(&args.output_dir.join("eval.jsonl"), |w| {
        for r in &reports {
            writeln!(w, "{}", r.to_json_line()?)?;
        }
        Ok(())
    })?;
    println!("method,mode,lambda,mean_mse,std_mse");
    for r in &reports {
        let lambda = r.lambda.map(|l| l.to_string()).unwrap_or_else(|| "learned".into());
        println!("{},{},{},{:.6e},{:.6e}", r.method, r.mode, lambda, r.mean_mse, r.std_mse);
    }
    Ok(())
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    let catalog = match &args.input {
        Some(path) => load_input(&InputArgs {
            input: path.clone(),
            truth_h: None,
            truth_w: None,
            sbs96: false,
        })?,
        None => generate_synthetic(&SynthConfig::new(args.k, args.n, args.seed))?,
    };
    let w = match (&args.dictionary, &catalog.truth_w) {
        (Some(path), _) => read_labeled(path)?.values,
        (None, Some(w)) => w.clone(),
        (None, None) => {
            let cfg = MuConfig {
                seed: args.seed,
                ..MuConfig::training()
            };
            factorize(&catalog.counts, args.k, &cfg)?.w
        }
    };
    let cfg = BenchConfig {
        layers: args.layers,
        short_iters: args.short_iters,
        long_iters: args.long_iters,
        repeats: args.repeats,
        ..Default::default()
    };
    let report = run_bench(&catalog.counts, &w, &cfg)?;
    report.write_csv(std::io::stdout().lock())?;
    if let Some(dir) = &args.output_dir {
        ensure_dir(dir)?;
        write_atomic(&dir.join("bench.csv"), |out| report.write_csv(out))?;
    }
    Ok(())
}
