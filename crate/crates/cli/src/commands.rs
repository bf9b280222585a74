use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use faecph::data::{load_dataset, make_split, write_dataset, Dataset};
use faecph::eval::{reports_to_csv, reports_to_json, run_cv, select_model, CvConfig, FeatureRef, ModelCandidate};
use faecph::fa::FaConfig;
use faecph::joint::{fit_fast, fit_joint, joint_predict, FitMode, JointConfig, JointModel, MhConfig};
use faecph::model_io::{check_layout, load_model, save_model, write_atomic};
use faecph::sim::{simulate_dataset, SimScenario};
use log::info;
use serde::Serialize;
use serde_json::json;

use crate::{ApplyArgs, CvArgs, FitArgs, FitOptions, Mode};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] faecph::Error),
    #[error("every candidate was excluded; nothing to select")]
    AllExcluded,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use faecph::Error as E;
        match self {
            CliError::AllExcluded => 3,
            CliError::Core(E::ModelMismatch(_)) => 4,
            CliError::Core(
                E::Io { .. } | E::Parse { .. } | E::InvalidArgument(_) | E::DimensionMismatch(_) | E::Serialization(_),
            ) => 2,
            CliError::Core(_) => 1,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| faecph::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

/// Records every effective parameter of a run next to its outputs.
fn echo_config<T: Serialize>(out: &Path, command: &str, params: &T) -> Result<()> {
    let doc = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "parameters": params,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(faecph::Error::from)?;
    write_atomic(&out.join(format!("{command}_config.json")), text.as_bytes())?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path).map_err(|e| faecph::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?)
}

pub fn simulate(scenario_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut scenario = SimScenario::from_json(&read_text(scenario_path)?)?;
    if let Some(s) = seed {
        scenario.seed = s;
    }
    create_out(out)?;
    echo_config(out, "simulate", &json!({ "scenario_file": scenario_path, "scenario": scenario }))?;
    let sim = simulate_dataset(&scenario)?;
    let train = write_dataset(&sim.train, out, "train")?;
    let test = write_dataset(&sim.test, out, "test")?;

    let mut csv = String::from("sample_id,split");
    for j in 0..scenario.d_z {
        let _ = write!(csv, ",z{}", j + 1);
    }
    csv.push('\n');
    for (split, ds, z) in [("train", &sim.train, &sim.z_train), ("test", &sim.test, &sim.z_test)] {
        for (n, id) in ds.sample_ids.iter().enumerate() {
            let _ = write!(csv, "{id},{split}");
            for v in z.column(n).iter() {
                let _ = write!(csv, ",{v}");
            }
            csv.push('\n');
        }
    }
    write_atomic(&out.join("true_latent.csv"), csv.as_bytes())?;
    info!("wrote {} and {}", train.display(), test.display());
    Ok(())
}

fn joint_config(opts: &FitOptions) -> JointConfig {
    JointConfig {
        gem_iters: opts.gem_iters,
        mh: MhConfig {
            burn_in: opts.burn_in,
            n_keep: opts.n_keep,
            retune_each_iter: opts.retune,
            ..MhConfig::default()
        },
        fa: FaConfig {
            max_iters: opts.fa_iters,
            ..FaConfig::default()
        },
        ..JointConfig::default()
    }
}

fn fit_mode(m: Mode) -> FitMode {
    match m {
        Mode::Fast => FitMode::FastDecoupled,
        Mode::Full => FitMode::FullMcem,
    }
}

fn fit_options_json(opts: &FitOptions) -> serde_json::Value {
    json!({
        "fit_mode": fit_mode(opts.fit_mode),
        "seed": opts.seed,
        "joint": {
            "gem_iters": opts.gem_iters,
            "mh": joint_config(opts).mh,
            "fa": joint_config(opts).fa,
        },
    })
}

pub fn cv(args: &CvArgs) -> Result<()> {
    let ds = load_dataset(&args.manifest)?;
    let mut candidates: Vec<ModelCandidate> = args
        .dz
        .iter()
        .map(|&d_z| ModelCandidate::FaEcphC {
            d_z,
            fit_mode: fit_mode(args.fit.fit_mode),
        })
        .collect();
    candidates.extend(args.gamma.iter().map(|&gamma| ModelCandidate::EcphCL1 { gamma }));
    if !args.fixed.is_empty() {
        let features = args
            .fixed
            .iter()
            .map(|s| s.parse::<FeatureRef>())
            .collect::<faecph::Result<Vec<_>>>()?;
        candidates.push(ModelCandidate::EcphCFixed { features });
    }
    if candidates.is_empty() {
        return Err(faecph::Error::InvalidArgument("no candidates to cross-validate".into()).into());
    }
    create_out(&args.out)?;
    echo_config(
        &args.out,
        "cv",
        &json!({
            "manifest": args.manifest,
            "candidates": candidates,
            "folds": args.folds,
            "test_fraction": args.test_fraction,
            "fit": fit_options_json(&args.fit),
        }),
    )?;

    let split = make_split(ds.n_samples(), args.test_fraction, args.folds, args.fit.seed)?;
    write_atomic(
        &args.out.join("split.json"),
        serde_json::to_string_pretty(&split).map_err(faecph::Error::from)?.as_bytes(),
    )?;
    let config = CvConfig {
        joint: joint_config(&args.fit),
        ..CvConfig::default()
    };
    let reports = run_cv(&ds, &candidates, &split, &config, args.fit.seed)?;
    write_atomic(&args.out.join("cv_reports.json"), reports_to_json(&reports)?.as_bytes())?;
    write_atomic(&args.out.join("cv_reports.csv"), reports_to_csv(&reports).as_bytes())?;
    if reports.iter().all(|r| r.excluded()) {
        return Err(CliError::AllExcluded);
    }
    let selected = select_model(&reports)?;
    let chosen = reports.iter().find(|r| r.candidate_id == selected).expect("selected from reports");
    let doc = json!({ "selected": selected, "candidate": chosen.candidate, "mean": chosen.mean, "std": chosen.std });
    write_atomic(
        &args.out.join("selection.json"),
        serde_json::to_string_pretty(&doc).map_err(faecph::Error::from)?.as_bytes(),
    )?;
    println!("{selected}");
    Ok(())
}

fn fit_model(ds: &Dataset, d_z: usize, opts: &FitOptions) -> faecph::Result<JointModel> {
    let config = joint_config(opts);
    match opts.fit_mode {
        Mode::Fast => fit_fast(&ds.blocks, &ds.survival, d_z, config.fa),
        Mode::Full => fit_joint(&ds.blocks, &ds.survival, d_z, &config, opts.seed),
    }
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let ds = load_dataset(&args.manifest)?;
    create_out(&args.out)?;
    echo_config(
        &args.out,
        "fit",
        &json!({ "manifest": args.manifest, "dz": args.dz, "fit": fit_options_json(&args.fit) }),
    )?;
    let model = fit_model(&ds, args.dz, &args.fit)?;
    if model.fa.heywood_flag {
        log::warn!("the fit approached a Heywood case; consider a smaller d_z");
    }
    save_model(&model, &args.out.join("model.json"))?;
    Ok(())
}

fn load_checked(args: &ApplyArgs, command: &str) -> Result<(Dataset, JointModel)> {
    let ds = load_dataset(&args.manifest)?;
    let model = load_model(&args.model)?;
    check_layout(&model, &ds)?;
    create_out(&args.out)?;
    echo_config(&args.out, command, &json!({ "manifest": args.manifest, "model": args.model }))?;
    Ok((ds, model))
}

pub fn predict(args: &ApplyArgs) -> Result<()> {
    let (ds, model) = load_checked(args, "predict")?;
    let pred = joint_predict(&model, &ds.blocks)?;
    let mut csv = String::from("sample_id,t_hat\n");
    for (id, t) in ds.sample_ids.iter().zip(&pred) {
        let _ = writeln!(csv, "{id},{t}");
    }
    write_atomic(&args.out.join("predictions.csv"), csv.as_bytes())?;
    Ok(())
}

pub fn project(args: &ApplyArgs) -> Result<()> {
    let (ds, model) = load_checked(args, "project")?;
    let post = model.fa.project(&ds.blocks)?;
    let mut csv = String::from("sample_id");
    for j in 0..model.d_z() {
        let _ = write!(csv, ",z{}", j + 1);
    }
    csv.push_str(",time,event\n");
    for (n, id) in ds.sample_ids.iter().enumerate() {
        csv.push_str(id);
        for v in post.mean.column(n).iter() {
            let _ = write!(csv, ",{v}");
        }
        let s = &ds.survival[n];
        let _ = writeln!(csv, ",{},{}", s.time, u8::from(s.event));
    }
    write_atomic(&args.out.join("projections.csv"), csv.as_bytes())?;
    Ok(())
}
