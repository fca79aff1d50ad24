pub mod analyze;
pub mod cae;
pub mod generate;
pub mod inspect;
pub mod teleport;

use std::path::Path;

use crate::failure::{CliResult, Failure};

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::input(format!("cannot create {}: {e}", dir.display())))
}

pub fn read_rsd(path: &Path) -> CliResult<(rsdyn::RsTensor, rsdyn::RsdMetadata)> {
    rsdyn::store::read_rsd(path).map_err(|e| Failure::from(e).context(path.display()))
}

/// Writes `text` to `dir/name` and returns the path.
pub fn emit(dir: &Path, name: &str, text: &str) -> CliResult<std::path::PathBuf> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Failure::input(format!("cannot write {}: {e}", p.display())))?;
    Ok(p)
}
