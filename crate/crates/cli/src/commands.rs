use std::path::{Path, PathBuf};
use std::time::Instant;

use gamitree::metrics::{auc, log_loss, mse, probabilities};
use gamitree::purify::{pair_name, write_importance_csv};
use gamitree::sim::{split_50_25_25, SimManifest};
use gamitree::{
    assemble_raw_effects, export_effect_grids, fast_filter, filter_interactions, fit_gami_with, importance,
    init_offset, load_csv, load_csv_maybe_labeled, purify_effects, simulate, Dataset, EffectSet, FeatureCache,
    FittedModel, GamiError, SimScenario, Task,
};
use serde::Serialize;

use crate::manifest::{sidecar_path, RunManifest, Timing};
use crate::{CliError, ExportArgs, FilterArgs, FitArgs, ImportanceArgs, PredictArgs, SimulateArgs};

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let scenario = SimScenario::new(a.model, a.n, a.rho, a.task.into(), a.seed);
    scenario.validate()?;
    let mut manifest = RunManifest::new("simulate", &scenario, Some(a.seed))?;
    let t = Instant::now();
    let sim = simulate(&scenario)?;
    manifest.time("simulate", t.elapsed().as_secs_f64());
    let (train, valid, test) = split_50_25_25(&sim.data);
    create_dir(&a.out)?;
    let t = Instant::now();
    for (name, ds) in [("train.csv", &train), ("valid.csv", &valid), ("test.csv", &test)] {
        let path = a.out.join(name);
        ds.write_csv(&path, &a.target)?;
        println!("{}: {} rows", path.display(), ds.n());
        manifest.outputs.push(path);
    }
    manifest.time("write", t.elapsed().as_secs_f64());
    manifest.set_details(SimManifest::new(&scenario, &sim, [train.n(), valid.n(), test.n()])?)?;
    manifest.write(&a.out.join("manifest.json"))
}

#[derive(Serialize)]
struct RoundSummary {
    round: usize,
    main_trees: usize,
    interaction_trees: usize,
    top_pairs: Vec<String>,
}

#[derive(Serialize)]
struct FitDetails {
    task: Task,
    n_train: usize,
    n_valid: usize,
    n_trees: usize,
    final_train_loss: Option<f64>,
    final_valid_loss: Option<f64>,
    rounds: Vec<RoundSummary>,
}

/// Purified effects of `model` on the `train` rows (target optional).
fn purified(model: &FittedModel, train_path: &Path, target: &str) -> Result<(Dataset, EffectSet), CliError> {
    let (train, _) = load_csv_maybe_labeled(train_path, target, model.task)?;
    let train = train.project(&model.feature_names())?;
    let raw = assemble_raw_effects(model)?;
    let effects = purify_effects(&raw, &train, model.config.nknots)?;
    Ok((train, effects))
}

pub fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let config = a.config.config();
    config.validate()?;
    if a.grid_size < 2 {
        return Err(GamiError::InvalidArgument("--grid-size must be at least 2".into()).into());
    }
    let task = Task::from(a.task);
    let mut manifest = RunManifest::new("fit", &config, Some(config.seed))?;
    manifest.add_input("train", &a.train)?;
    manifest.add_input("valid", &a.valid)?;
    let t = Instant::now();
    let train = load_csv(&a.train, &a.target, task)?;
    let valid = load_csv(&a.valid, &a.target, task)?;
    manifest.time("load", t.elapsed().as_secs_f64());

    let mut stages = Vec::new();
    let model = fit_gami_with(&train, &valid, &config, |e| {
        println!(
            "round {} {:<11} {:>5} ({:.2}s)  valid loss {:.6}",
            e.round, e.stage, e.count, e.seconds, e.valid_loss
        );
        stages.push(Timing {
            stage: e.stage.to_string(),
            round: Some(e.round),
            count: Some(e.count),
            seconds: e.seconds,
        });
    })?;
    manifest.timings.extend(stages);

    create_dir(&a.out)?;
    let model_path = a.out.join("model.json");
    model.save(&model_path)?;
    manifest.outputs.push(model_path);

    let t = Instant::now();
    let raw = assemble_raw_effects(&model)?;
    let effects = purify_effects(&raw, &train, config.nknots)?;
    manifest.time("purify", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let table = importance(&effects, &train);
    let imp_path = a.out.join("importance.csv");
    write_importance_csv(&imp_path, &table)?;
    manifest.outputs.push(imp_path);
    let effects_dir = a.out.join("effects");
    export_effect_grids(&effects, &train, a.grid_size, &effects_dir)?;
    manifest.outputs.push(effects_dir);
    for (r, round) in model.rounds.iter().enumerate() {
        let path = a.out.join(format!("pairs_round{}.csv", r + 1));
        round.ranking.write_csv(&path, train.names())?;
        manifest.outputs.push(path);
    }
    manifest.time("export", t.elapsed().as_secs_f64());

    let losses = model.final_losses();
    let details = FitDetails {
        task,
        n_train: train.n(),
        n_valid: valid.n(),
        n_trees: model.n_trees(),
        final_train_loss: losses.map(|l| l.0),
        final_valid_loss: losses.map(|l| l.1),
        rounds: model
            .rounds
            .iter()
            .enumerate()
            .map(|(r, round)| RoundSummary {
                round: r + 1,
                main_trees: round.main.stop_iterations,
                interaction_trees: round.interaction.stop_iterations,
                top_pairs: round.ranking.top_pairs.iter().map(|&p| pair_name(train.names(), p)).collect(),
            })
            .collect(),
    };
    for r in &details.rounds {
        println!(
            "round {}: {} main trees, {} interaction trees",
            r.round, r.main_trees, r.interaction_trees
        );
    }
    if let Some((_, v)) = losses {
        println!("final validation loss: {v}");
    }
    manifest.set_details(details)?;
    manifest.write(&a.out.join("manifest.json"))
}

#[derive(Serialize)]
struct PredictDetails {
    rows: usize,
    target_present: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    mse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    auc: Option<f64>,
}

fn write_predictions(path: &Path, task: Task, link: &[f64]) -> Result<(), CliError> {
    let werr = |e: csv::Error| {
        CliError::Gami(GamiError::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    };
    let mut w = csv::Writer::from_path(path).map_err(werr)?;
    match task {
        Task::Continuous => {
            w.write_record(["link"]).map_err(werr)?;
            for g in link {
                w.write_record([g.to_string()]).map_err(werr)?;
            }
        }
        Task::Binary => {
            w.write_record(["link", "probability"]).map_err(werr)?;
            for (g, p) in link.iter().zip(probabilities(link)) {
                w.write_record([g.to_string(), p.to_string()]).map_err(werr)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = FittedModel::load(&a.model_file)?;
    let mut manifest = RunManifest::new("predict", &model.config, Some(model.config.seed))?;
    manifest.add_input("model", &a.model_file)?;
    manifest.add_input("data", &a.data)?;
    let t = Instant::now();
    let (ds, labeled) = load_csv_maybe_labeled(&a.data, &a.target, model.task)?;
    let link = model.predict(&ds)?;
    manifest.time("predict", t.elapsed().as_secs_f64());
    write_predictions(&a.out, model.task, &link)?;
    manifest.outputs.push(a.out.clone());

    let mut details = PredictDetails {
        rows: ds.n(),
        target_present: labeled,
        mse: None,
        log_loss: None,
        auc: None,
    };
    if labeled {
        match model.task {
            Task::Continuous => {
                let m = mse(ds.target(), &link);
                println!("mse {m}");
                details.mse = Some(m);
            }
            Task::Binary => {
                let l = log_loss(ds.target(), &link);
                println!("log_loss {l}");
                details.log_loss = Some(l);
                details.auc = auc(ds.target(), &link);
                match details.auc {
                    Some(v) => println!("auc {v}"),
                    None => println!("auc undefined (single class)"),
                }
            }
        }
    }
    manifest.set_details(details)?;
    manifest.write(&sidecar_path(&a.out))
}

pub fn cmd_filter(a: &FilterArgs) -> Result<(), CliError> {
    let mut manifest;
    let (ds, g, config) = match &a.model_file {
        Some(path) => {
            let model = FittedModel::load(path)?;
            let mut config = model.config.clone();
            if let Some(q) = a.config.npairs {
                config.npairs = q;
            }
            config.validate()?;
            manifest = RunManifest::new("filter", &config, Some(config.seed))?;
            manifest.add_input("model", path)?;
            let ds = load_csv(&a.data, &a.target, model.task)?.project(&model.feature_names())?;
            let g = model.predict(&ds)?;
            (ds, g, config)
        }
        None => {
            let config = a.config.config();
            config.validate()?;
            manifest = RunManifest::new("filter", &config, Some(config.seed))?;
            let ds = load_csv(&a.data, &a.target, a.task.into())?;
            let g = vec![init_offset(ds.target(), ds.task())?; ds.n()];
            (ds, g, config)
        }
    };
    manifest.add_input("data", &a.data)?;
    let t = Instant::now();
    let cache = FeatureCache::new(&ds, config.max_bins, config.nknots)?;
    let ranking = if a.fast {
        fast_filter(&ds, &cache, &g, config.npairs, config.filter_subsample, config.seed)?
    } else {
        filter_interactions(&ds, &cache, &g, &config.filter_params(0))?
    };
    manifest.time(if a.fast { "fast_filter" } else { "filter" }, t.elapsed().as_secs_f64());
    ranking.write_csv(&a.out, ds.names())?;
    manifest.outputs.push(a.out.clone());
    let top: Vec<String> = ranking.top_pairs.iter().map(|&p| pair_name(ds.names(), p)).collect();
    println!("top pairs: {}", top.join(" "));
    #[derive(Serialize)]
    struct Details {
        scorer: &'static str,
        top_pairs: Vec<String>,
    }
    manifest.set_details(Details {
        scorer: if a.fast { "fast" } else { "model-based" },
        top_pairs: top,
    })?;
    manifest.write(&sidecar_path(&a.out))
}

pub fn cmd_importance(a: &ImportanceArgs) -> Result<(), CliError> {
    let model = FittedModel::load(&a.model_file)?;
    let mut manifest = RunManifest::new("importance", &model.config, Some(model.config.seed))?;
    manifest.add_input("model", &a.model_file)?;
    manifest.add_input("train", &a.train)?;
    let t = Instant::now();
    let (train, effects) = purified(&model, &a.train, &a.target)?;
    let table = importance(&effects, &train);
    manifest.time("purify", t.elapsed().as_secs_f64());
    write_importance_csv(&a.out, &table)?;
    manifest.outputs.push(a.out.clone());
    for r in table.iter().take(10) {
        println!("{:<24} {:.6}", r.name, r.score);
    }
    manifest.write(&sidecar_path(&a.out))
}

pub fn cmd_export_effects(a: &ExportArgs) -> Result<(), CliError> {
    let model = FittedModel::load(&a.model_file)?;
    let mut manifest = RunManifest::new("export-effects", &model.config, Some(model.config.seed))?;
    manifest.add_input("model", &a.model_file)?;
    manifest.add_input("train", &a.train)?;
    let t = Instant::now();
    let (train, effects) = purified(&model, &a.train, &a.target)?;
    let index = export_effect_grids(&effects, &train, a.grid_size, &a.out)?;
    manifest.time("export", t.elapsed().as_secs_f64());
    manifest.outputs = index
        .components
        .iter()
        .flat_map(|c| std::iter::once(&c.file).chain(c.slices_file.as_ref()))
        .map(|f| a.out.join(f))
        .chain(std::iter::once(a.out.join("index.json")))
        .collect::<Vec<PathBuf>>();
    println!("{} components written to {}", index.components.len(), a.out.display());
    manifest.write(&a.out.join("manifest.json"))
}
