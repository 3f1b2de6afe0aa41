//! Output directory helpers and the on-disk CSV schemas.

use std::path::Path;

use crate::error::CliError;

/// Package version plus `git describe` of the build tree.
pub fn version() -> String {
    format!("{}+{}", env!("CARGO_PKG_VERSION"), env!("DAFD_GIT_DESCRIBE"))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

pub fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write(dir, name, s)
}

/// Optional values print as an empty field.
pub fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const METRICS_HEADER: &str =
    "epoch,step,loss,loss_s,loss_t,mmd,grad_norm_shared,grad_norm_source,grad_norm_target\n";

pub const EPOCHS_HEADER: &str = "epoch,source_acc,target_acc,eval_mmd\n";
