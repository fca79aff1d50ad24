use rsdyn::export;
use rsdyn::mi::mi_layer_profile;
use rsdyn::pca::{explained_variance_curves, fit_pca, project};
use rsdyn::phase::{rotation_table, NullConfig, NullMode, SampleMode};
use rsdyn::stats::{
    correlation_histogram, cosine_similarity_series, layer_pair_correlations, mean_activations,
    sort_units_by_last_layer, velocity_series, PairMode,
};

use super::{emit, ensure_dir, read_rsd};
use crate::args::{AnalyzeArgs, NullModeArg, PairModeArg, Which};
use crate::failure::CliResult;
use crate::manifest::{ManifestBuilder, MANIFEST_NAME};

pub fn run(args: &AnalyzeArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start();
    let (rs, _meta) = read_rsd(&args.rsd)?;
    manifest.input(&args.rsd);
    ensure_dir(&args.out)?;
    let dir = &args.out;
    let mut files: Vec<(&str, String)> = Vec::new();
    match args.which {
        Which::Stats => {
            let means = mean_activations(&rs);
            let order = sort_units_by_last_layer(&means);
            files.push(("means.csv", export::means_csv(&means, &order)?));
            files.push(("correlations.csv", export::correlations_csv(&layer_pair_correlations(&rs)?)?));
            let mode = match args.pair_mode {
                PairModeArg::Consecutive => PairMode::Consecutive,
                PairModeArg::All => PairMode::AllPairs,
            };
            files.push(("histogram.csv", export::histogram_csv(&correlation_histogram(&rs, mode, args.bins)?)?));
            files.push(("cosine.csv", export::series_csv(&cosine_similarity_series(&rs))?));
            files.push(("velocity.csv", export::series_csv(&velocity_series(&rs))?));
        }
        Which::Mi => {
            let profile = mi_layer_profile(&rs, args.units.as_deref(), args.grid_size)?;
            let flagged = profile.entries.iter().filter(|e| e.is_err()).count();
            if flagged > 0 {
                eprintln!("warning: {flagged} (unit, transition) pairs were degenerate and excluded");
            }
            files.push(("mi.csv", export::mi_csv(&profile)?));
            files.push(("mi_mean.csv", export::mi_mean_csv(&profile)?));
        }
        Which::Phase => {
            let units: Vec<usize> = match &args.units {
                Some(u) => u.clone(),
                None => (0..rs.units()).collect(),
            };
            if let Some(&bad) = units.iter().find(|&&u| u >= rs.units()) {
                return Err(rsdyn::Error::UnitOutOfRange { unit: bad, units: rs.units() }.into());
            }
            let cfg = NullConfig::new(args.n_shuffle, args.seed)
                .with_mode(match args.null_mode {
                    NullModeArg::Pairs => NullMode::PermutePairs,
                    NullModeArg::Recompute => NullMode::RecomputeGradient,
                })
                .with_sample_mode(match args.sample {
                    Some(b) => SampleMode::SingleSample(b),
                    None => SampleMode::BatchMean,
                });
            if cfg.n_shuffle == 0 {
                return Err(rsdyn::Error::Config("--n-shuffle must be at least 1".into()).into());
            }
            let stats = rotation_table(&rs, &units, &cfg);
            // Configuration errors apply to every unit; surface the first one.
            for s in &stats {
                if let Err(e @ (rsdyn::Error::Config(_) | rsdyn::Error::TooShort { .. })) = s {
                    return Err(rsdyn::Error::Config(e.to_string()).into());
                }
            }
            let failed = stats.iter().filter(|s| s.is_err()).count();
            if failed > 0 {
                eprintln!("warning: {failed} units have degenerate trajectories");
            }
            files.push(("rotations.csv", export::rotations_csv(&units, &stats)?));
        }
        Which::Pca => {
            let model = fit_pca(&rs)?;
            let n = args.n_components.min(rs.units());
            let curves = explained_variance_curves(&model, &rs, n)?;
            let ratios = model.explained_variance_ratio();
            files.push(("pca_cumulative.csv", export::pca_cumulative_csv(&ratios, &curves)?));
            files.push(("pca_sublayer_ev.csv", export::pca_sublayer_csv(&curves)?));
            let z = project(&model, &rs.rows(), 2.min(rs.units()))?;
            if rs.units() >= 2 {
                files.push(("pca_projection.csv", export::projection_csv(&z, rs.sublayers())?));
            }
        }
    }
    for (name, text) in &files {
        let p = emit(dir, name, text)?;
        println!("wrote {}", p.display());
        manifest.output(p);
    }
    manifest.write(&dir.join(MANIFEST_NAME), "analyze", args, Some(args.seed))
}
