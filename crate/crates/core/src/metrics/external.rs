use std::path::Path;
use std::process::Command;

use super::report::EvalItem;
use crate::banddata::save_image;

/// A user-supplied metric command run once per image.
///
/// `{pristine}`, `{banded}`, `{restored}` and `{id}` in `command` are
/// replaced by PNG paths (or the image id) before it is passed to `sh -c`.
/// The first line of stdout must parse as a real.
#[derive(Clone, Debug, PartialEq)]
pub struct ExternalMetric {
    pub name: String,
    pub command: String,
}

fn run_one(metric: &ExternalMetric, item: &EvalItem, dir: &Path) -> Result<f64, String> {
    let stem = dir.join(&item.id);
    let path = |tag: &str| format!("{}_{tag}.png", stem.display());
    for (tag, img) in [("pristine", &item.pristine), ("banded", &item.banded), ("restored", &item.restored)] {
        save_image(img, path(tag)).map_err(|e| e.to_string())?;
    }
    let cmd = metric
        .command
        .replace("{pristine}", &path("pristine"))
        .replace("{banded}", &path("banded"))
        .replace("{restored}", &path("restored"))
        .replace("{id}", &item.id);
    let out = Command::new("sh").arg("-c").arg(&cmd).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("exited with {}", out.status));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    line.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| format!("unparsable output {line:?}"))
}

/// Runs `metric` on every item. Failures are logged and yield `None`.
pub fn run_external_metric(metric: &ExternalMetric, items: &[&EvalItem]) -> Vec<Option<f64>> {
    let dir = match tempfile::tempdir() {
        Ok(d) => d,
        Err(e) => {
            log::warn!("external metric {}: no scratch directory: {e}", metric.name);
            return vec![None; items.len()];
        }
    };
    items
        .iter()
        .map(|item| match run_one(metric, item, dir.path()) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("external metric {} on {}: {e}", metric.name, item.id);
                None
            }
        })
        .collect()
}
