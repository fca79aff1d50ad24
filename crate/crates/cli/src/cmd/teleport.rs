use rsdyn::export::teleport_json;
use rsdyn::model::{forward_capture, ToyModel};
use rsdyn::pca::{default_grid_ranges, fit_pca, make_grid, project};
use rsdyn::sequence::tokenize_bytes;
use rsdyn::teleport::{teleport_experiment_with, MseSpace, CONTROL_PROMPT};

use super::{emit, ensure_dir, read_rsd};
use crate::args::{MseSpaceArg, TeleportArgs};
use crate::failure::{CliResult, Failure};
use crate::manifest::{ManifestBuilder, MANIFEST_NAME};

pub fn run(args: &TeleportArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start();
    let model = ToyModel::load(&args.model).map_err(|e| Failure::from(e).context(args.model.display()))?;
    manifest.input(&args.model);
    let (rs, _) = read_rsd(&args.pca_rsd)?;
    manifest.input(&args.pca_rsd);
    if rs.units() != model.config.d_model {
        return Err(Failure::input(format!(
            "PCA data has {} units but the model width is {}",
            rs.units(),
            model.config.d_model
        )));
    }
    let pca = fit_pca(&rs)?;
    let prompt = tokenize_bytes(args.prompt.as_deref().unwrap_or(CONTROL_PROMPT))?;
    // Touch the prompt once so a too-long prompt fails before any output.
    forward_capture(&model, &prompt)?;

    let (default_x, default_y) = default_grid_ranges(&project(&pca, &rs.rows(), 2)?)?;
    let grid = make_grid(
        args.grid_n,
        args.range_x.unwrap_or(default_x),
        args.range_y.unwrap_or(default_y),
    )?;
    let layers: Vec<usize> = match &args.layers {
        Some(l) => l.clone(),
        None => (0..model.config.n_layers).collect(),
    };
    let space = match args.mse_space {
        MseSpaceArg::Pca2 => MseSpace::Pca2,
        MseSpaceArg::Full => MseSpace::Full,
    };
    ensure_dir(&args.out)?;
    for &layer in &layers {
        let result = teleport_experiment_with(&model, &pca, &prompt, layer, &grid, space)?;
        let p = emit(&args.out, &format!("teleport_layer{layer}.json"), &teleport_json(&result)?)?;
        println!("wrote {} ({} runs, horizon {})", p.display(), result.runs.len(), result.horizon);
        manifest.output(p);
    }
    manifest.write(&args.out.join(MANIFEST_NAME), "teleport", args, Some(args.seed))
}
