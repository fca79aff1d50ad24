use std::path::PathBuf;

use rsdyn::corpus::synthetic_corpus;
use rsdyn::model::{generate_dataset, train_lm, LmTrainConfig, ModelConfig, ToyModel};
use rsdyn::rng::derive_seed;
use rsdyn::sequence::{filter_sequences, read_corpus, shuffle_tokens, tokenize_bytes, FilterSpec, BYTE_VOCAB};
use rsdyn::store::{validate, write_rsd};
use rsdyn::{Error, RsdMetadata};

use crate::args::GenerateArgs;
use crate::failure::{CliResult, Failure};
use crate::manifest::ManifestBuilder;

fn manifest_path(out: &std::path::Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn run(args: &GenerateArgs) -> CliResult<()> {
    let mut manifest = ManifestBuilder::start();
    let spec = FilterSpec::new(args.l_min, args.l_max)?;
    let (lines, dataset_name) = match (&args.corpus, args.synthetic) {
        (Some(path), _) => {
            manifest.input(path);
            let lines = read_corpus(path).map_err(|e| Failure::from(e).context(path.display()))?;
            (lines, path.display().to_string())
        }
        (None, Some(n)) => (synthetic_corpus(n, args.seed), format!("synthetic:{n}")),
        (None, None) => return Err(Failure::usage("either --corpus or --synthetic is required")),
    };
    let mut kept = filter_sequences(&lines, &spec);
    if let Some(cap) = args.max_sequences {
        kept.truncate(cap);
    }
    println!("{} of {} sequences pass the {}..{} character filter", kept.len(), lines.len(), args.l_min, args.l_max);

    let mut model = match &args.model {
        Some(path) => {
            manifest.input(path);
            ToyModel::load(path).map_err(|e| Failure::from(e).context(path.display()))?
        }
        None => ToyModel::init(ModelConfig {
            n_layers: args.layers,
            d_model: args.d_model,
            n_heads: args.heads,
            d_mlp: args.d_mlp,
            vocab: BYTE_VOCAB,
            max_seq: args.max_seq,
            seed: args.seed,
        })?,
    };
    let max_seq = model.config.max_seq;
    let mut sequences = Vec::with_capacity(kept.len());
    for (i, line) in kept.iter().enumerate() {
        let seq = tokenize_bytes(line)?;
        if seq.len() > max_seq {
            eprintln!("warning: sequence {i} has {} tokens, above max_seq {max_seq}; skipped", seq.len());
            continue;
        }
        sequences.push(seq);
    }
    if sequences.is_empty() {
        return Err(Failure::from(Error::EmptyInput).context("no sequences left after filtering"));
    }

    if args.train_steps > 0 {
        let report = train_lm(
            &mut model,
            &sequences,
            &LmTrainConfig {
                steps: args.train_steps,
                batch_size: args.train_batch,
                lr: args.train_lr,
                max_tokens: args.train_max_tokens,
                seed: derive_seed(args.seed, 1),
            },
        )?;
        println!(
            "trained {} steps: loss {:.4} -> {:.4}",
            report.losses.len(),
            report.losses[0],
            report.losses[report.losses.len() - 1]
        );
    }
    if let Some(path) = &args.model_out {
        model.save(path).map_err(|e| Failure::from(e).context(path.display()))?;
        manifest.output(path);
    }

    if args.shuffled {
        sequences = sequences
            .iter()
            .enumerate()
            .map(|(i, s)| shuffle_tokens(s, derive_seed(args.seed, 1000 + i as u64)))
            .collect();
    }
    let rs = generate_dataset(&model, &sequences)?;
    let report = validate(&rs);
    if !report.is_valid() {
        return Err(Failure::from(Error::InvariantViolation(report.messages().join("; "))));
    }
    let c = &model.config;
    let meta = RsdMetadata::new(format!("toy-transformer-L{}-D{}", c.n_layers, c.d_model), dataset_name)
        .with_seed(args.seed)
        .with_param("l_min", args.l_min)
        .with_param("l_max", args.l_max)
        .with_param("shuffled", args.shuffled)
        .with_param("train_steps", args.train_steps);
    write_rsd(&rs, &meta, &args.out).map_err(|e| Failure::from(e).context(args.out.display()))?;
    manifest.output(&args.out);
    println!(
        "wrote {} ({} samples x {} sublayers x {} units)",
        args.out.display(),
        rs.samples(),
        rs.sublayers(),
        rs.units()
    );
    manifest.write(&manifest_path(&args.out), "generate", args, Some(args.seed))
}
