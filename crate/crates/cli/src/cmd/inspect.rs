use rsdyn::container::{ParamFile, PARAM_MAGIC};
use rsdyn::store::{decode_rsd, validate, RSD_MAGIC};

use crate::args::InspectArgs;
use crate::failure::{CliResult, Failure};

pub fn run(args: &InspectArgs) -> CliResult<()> {
    let bytes = std::fs::read(&args.path)
        .map_err(|e| Failure::input(format!("{}: {e}", args.path.display())))?;
    let ctx = |e: rsdyn::Error| Failure::from(e).context(args.path.display());
    let doc = if bytes.starts_with(RSD_MAGIC.as_slice()) {
        let (rs, meta) = decode_rsd(&bytes).map_err(ctx)?;
        let report = validate(&rs);
        serde_json::json!({
            "format": "rsd",
            "samples": rs.samples(),
            "sublayers": rs.sublayers(),
            "units": rs.units(),
            "layers": rs.layers(),
            "metadata": meta,
            "valid": report.is_valid(),
            "violations": report.messages(),
        })
    } else if bytes.starts_with(PARAM_MAGIC.as_slice()) {
        let file = ParamFile::decode(&bytes).map_err(ctx)?;
        let tensors: Vec<_> = file
            .tensors
            .iter()
            .map(|t| serde_json::json!({ "name": t.name, "shape": t.shape }))
            .collect();
        serde_json::json!({
            "format": "checkpoint",
            "kind": file.kind,
            "config": file.config,
            "parameters": file.tensors.iter().map(|t| t.data.len()).sum::<usize>(),
            "tensors": tensors,
        })
    } else {
        return Err(Failure::input(format!(
            "{}: neither an RSD file nor a checkpoint",
            args.path.display()
        )));
    };
    println!("{}", serde_json::to_string_pretty(&doc).map_err(std::io::Error::from)?);
    Ok(())
}
