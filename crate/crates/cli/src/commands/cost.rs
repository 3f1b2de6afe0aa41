use std::path::Path;

use dafd::cost::{count_costs, vgg16_layers, CostReport, LayerCostSpec};
use dafd::net::{build_network, Arch, NetSpec, Network};

use crate::artifacts;
use crate::config::RunConfig;
use crate::error::CliError;

/// Parses a layer file: one `c_in c_out l width [k]` line per layer, `#`
/// comments, `k` defaulting to `default_k`.
pub fn parse_layer_file(text: &str, default_k: u64) -> Result<Vec<LayerCostSpec>, CliError> {
    let mut layers = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |m: String| CliError::Config(format!("layer file line {}: {m}", i + 1));
        let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if !(4..=5).contains(&fields.len()) {
            return Err(bad(format!("expected 'c_in c_out l width [k]', got '{line}'")));
        }
        let nums = fields
            .iter()
            .map(|f| f.parse::<u64>().map_err(|e| bad(format!("'{f}': {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let spec = LayerCostSpec {
            c_in: nums[0],
            c_out: nums[1],
            l: nums[2],
            width: nums[3],
            k: nums.get(4).copied().unwrap_or(default_k),
        };
        spec.validate().map_err(|e| bad(e.to_string()))?;
        layers.push(spec);
    }
    if layers.is_empty() {
        return Err(CliError::Config("layer file has no layers".into()));
    }
    Ok(layers)
}

/// Branched layers of the toy network at the configured `k`.
fn toy_layers(cfg: &RunConfig) -> Result<Vec<LayerCostSpec>, CliError> {
    let mut spec = NetSpec::toy(Arch::A3).with_k(cfg.cost.k as usize);
    spec.branched = cfg.model.branched;
    let net: Network<f32> = build_network(&spec, 0)?;
    Ok(net.branched_cost_specs())
}

pub fn cost_report(cfg: &RunConfig) -> Result<CostReport, CliError> {
    let c = &cfg.cost;
    let layers = match &c.spec_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            parse_layer_file(&text, c.k)?
        }
        None => match c.preset.as_str() {
            "vgg16" => {
                if c.k == 0 {
                    return Err(CliError::Config("cost.k must be at least 1".into()));
                }
                vgg16_layers(c.k, c.input_size)
            }
            "toy" => toy_layers(cfg)?,
            other => return Err(CliError::Config(format!("unknown preset '{other}' (expected vgg16 or toy)"))),
        },
    };
    Ok(count_costs(&layers, c.domains)?)
}

pub fn run_cost(cfg: &RunConfig, out: Option<&Path>) -> Result<CostReport, CliError> {
    let report = cost_report(cfg)?;
    print!("{}", report.table());
    if let Some(dir) = out {
        artifacts::ensure_dir(dir)?;
        artifacts::write(dir, "config.ini", cfg.to_text())?;
        artifacts::write_json(dir, "cost_report.json", &report)?;
    }
    Ok(report)
}
