use rsdyn::cae::{explained_variance, train, trajectory_stats, CaeConfig};
use rsdyn::export::{self, json_num};
use serde::Serialize;
use serde_json::value::RawValue;

use super::{emit, ensure_dir, read_rsd};
use crate::args::CaeArgs;
use crate::failure::{CliResult, Failure};
use crate::manifest::{ManifestBuilder, MANIFEST_NAME};

#[derive(Serialize)]
struct Summary {
    dims: Vec<usize>,
    parameters: usize,
    epochs_run: usize,
    best_epoch: usize,
    best_val_loss: Box<RawValue>,
    stopped_early: bool,
    test_explained_variance: Option<Box<RawValue>>,
    test_loss: Box<RawValue>,
}

pub fn run(args: &CaeArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start();
    let (train_rs, _) = read_rsd(&args.train)?;
    let (test_rs, _) = read_rsd(&args.test)?;
    manifest.input(&args.train);
    manifest.input(&args.test);
    if test_rs.units() != train_rs.units() {
        return Err(Failure::input(format!(
            "train width {} differs from test width {}",
            train_rs.units(),
            test_rs.units()
        )));
    }
    let cfg = CaeConfig {
        d_in: train_rs.units(),
        d_bottle: args.bottleneck,
        k_layers: args.k_layers,
        lr: args.lr,
        max_epochs: args.max_epochs,
        patience: args.patience,
        batch_size: args.batch_size,
        seed: args.seed,
        validation_fraction: args.validation_fraction,
    };
    ensure_dir(&args.out)?;
    let (model, history) = train(&cfg, &train_rs.rows())?;
    let test_rows = test_rs.rows();
    let ev = explained_variance(&model, &test_rows)?;
    let test_loss = model.loss(&test_rows)?;
    let traj = trajectory_stats(&model, &test_rs)?;

    let ckpt = args.out.join("cae.ckpt");
    model.to_param_file(&cfg).write(&ckpt)?;
    manifest.output(&ckpt);
    let summary = Summary {
        dims: model.dims.clone(),
        parameters: model.parameter_count(),
        epochs_run: history.train_loss.len(),
        best_epoch: history.best_epoch,
        best_val_loss: json_num(history.best_val_loss),
        stopped_early: history.stopped_early,
        test_explained_variance: ev.map(json_num),
        test_loss: json_num(test_loss),
    };
    let mut summary_text = serde_json::to_string_pretty(&summary).map_err(std::io::Error::from)?;
    summary_text.push('\n');
    for (name, text) in [
        ("history.csv", export::history_csv(&history)?),
        ("trajectory.csv", export::cae_trajectory_csv(&traj)?),
        ("summary.json", summary_text),
    ] {
        manifest.output(emit(&args.out, name, &text)?);
    }
    println!(
        "epochs {} (best {}), test explained variance {}",
        history.train_loss.len(),
        history.best_epoch,
        ev.map_or("undefined".to_string(), |v| format!("{v:.6}"))
    );
    manifest.write(&args.out.join(MANIFEST_NAME), "cae", args, Some(args.seed))
}
