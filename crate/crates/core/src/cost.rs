//! Parameter and flop accounting for regular branching versus atom branching.
//!
//! Per layer with `C'` input channels, `C` output channels, `L x L` filters,
//! output resolution `W x W`, `K` atoms and `D` domains:
//!
//! | quantity                         | regular branching      | atom branching        |
//! |----------------------------------|------------------------|-----------------------|
//! | filter parameters                | `D C' C L^2`           | `K (C' C + D L^2)`    |
//! | bias parameters                  | `D C`                  | `C` (shared)          |
//! | flops per domain                 | `W^2 C' C (2L^2 + 1)`  | `W^2 C' 2K (L^2 + C)` |
//! | parameters per additional domain | `C' C L^2 + C`         | `K L^2`               |
//!
//! Flops count a multiply and an add separately, with `+1` per output term
//! for the bias. The published VGG-16 figures correspond to counting one
//! multiply-accumulate as one operation, so the report also carries
//! `macs = flops / 2` for that comparison. A regular branch duplicates the
//! whole convolution including its bias, which is why the per-domain
//! parameter cost includes `C`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCostSpec {
    pub c_in: u64,
    pub c_out: u64,
    pub l: u64,
    /// Output resolution `W` (feature maps are `W x W`).
    pub width: u64,
    pub k: u64,
}

impl LayerCostSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_out == 0 || self.l == 0 || self.width == 0 || self.k == 0 {
            return Err(invalid(format!("all layer cost fields must be positive: {self:?}")));
        }
        if self.l % 2 == 0 {
            return Err(invalid(format!("kernel size must be odd, got {}", self.l)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerCost {
    pub params_regular: u64,
    pub bias_regular: u64,
    pub params_dafd: u64,
    pub bias_dafd: u64,
    pub flops_regular_per_domain: u64,
    pub flops_dafd_per_domain: u64,
    pub extra_params_regular: u64,
    pub extra_params_dafd: u64,
}

impl LayerCost {
    fn of(s: &LayerCostSpec, d: u64) -> Self {
        let w2 = s.width * s.width;
        let l2 = s.l * s.l;
        Self {
            params_regular: d * s.c_in * s.c_out * l2,
            bias_regular: d * s.c_out,
            params_dafd: s.k * (s.c_in * s.c_out + d * l2),
            bias_dafd: s.c_out,
            flops_regular_per_domain: w2 * s.c_in * s.c_out * (2 * l2 + 1),
            flops_dafd_per_domain: w2 * s.c_in * 2 * s.k * (l2 + s.c_out),
            extra_params_regular: s.c_in * s.c_out * l2 + s.c_out,
            extra_params_dafd: s.k * l2,
        }
    }

    fn add(&mut self, o: &LayerCost) {
        self.params_regular += o.params_regular;
        self.bias_regular += o.bias_regular;
        self.params_dafd += o.params_dafd;
        self.bias_dafd += o.bias_dafd;
        self.flops_regular_per_domain += o.flops_regular_per_domain;
        self.flops_dafd_per_domain += o.flops_dafd_per_domain;
        self.extra_params_regular += o.extra_params_regular;
        self.extra_params_dafd += o.extra_params_dafd;
    }

    /// Multiply-accumulate counts `(regular, dafd)` per domain.
    pub fn macs_per_domain(&self) -> (f64, f64) {
        (
            self.flops_regular_per_domain as f64 / 2.0,
            self.flops_dafd_per_domain as f64 / 2.0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCostRow {
    pub spec: LayerCostSpec,
    pub cost: LayerCost,
    /// `2K(L^2 + C) < C(2L^2 + 1)`.
    pub dafd_cheaper: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub domains: u64,
    pub layers: Vec<LayerCostRow>,
    pub total: LayerCost,
    pub flop_convention: String,
}

pub const FLOP_CONVENTION: &str = "flops: multiply and add counted separately, +1 per output for bias \
(W^2 C' C (2L^2+1) regular, W^2 C' 2K (L^2+C) decomposed); macs = flops / 2; \
convolution layers only, pooling and nonlinearities excluded";

pub fn count_costs(layers: &[LayerCostSpec], domains: u64) -> Result<CostReport> {
    if layers.is_empty() {
        return Err(invalid("cost model needs at least one layer"));
    }
    if domains == 0 {
        return Err(invalid("cost model needs at least one domain"));
    }
    let mut total = LayerCost::default();
    let mut rows = Vec::with_capacity(layers.len());
    for s in layers {
        s.validate()?;
        let cost = LayerCost::of(s, domains);
        total.add(&cost);
        let l2 = s.l * s.l;
        rows.push(LayerCostRow {
            spec: *s,
            cost,
            dafd_cheaper: 2 * s.k * (l2 + s.c_out) < s.c_out * (2 * l2 + 1),
        });
    }
    Ok(CostReport {
        domains,
        layers: rows,
        total,
        flop_convention: FLOP_CONVENTION.to_string(),
    })
}

/// Output channels of the 13 VGG-16 convolutions; a 2x pool follows the
/// last layer of each stage.
const VGG16_CHANNELS: [(u64, bool); 13] = [
    (64, false),
    (64, true),
    (128, false),
    (128, true),
    (256, false),
    (256, false),
    (256, true),
    (512, false),
    (512, false),
    (512, true),
    (512, false),
    (512, false),
    (512, true),
];

/// The 13 VGG-16 convolutions as cost specs, 3x3 filters with "same"
/// padding, resolution halving after each pooling stage.
pub fn vgg16_layers(k: u64, input_size: u64) -> Vec<LayerCostSpec> {
    let mut c_in = 3;
    let mut width = input_size;
    let mut out = Vec::with_capacity(13);
    for (c_out, pool_after) in VGG16_CHANNELS {
        out.push(LayerCostSpec {
            c_in,
            c_out,
            l: 3,
            width,
            k,
        });
        c_in = c_out;
        if pool_after {
            width /= 2;
        }
    }
    out
}

pub fn vgg16_report(k: u64, input_size: u64) -> Result<CostReport> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if input_size < 16 {
        return Err(invalid(format!("input size {input_size} too small for VGG-16")));
    }
    count_costs(&vgg16_layers(k, input_size), 2)
}

impl CostReport {
    /// Two-row comparison of what one additional domain costs.
    pub fn table(&self) -> String {
        let t = &self.total;
        let (mac_r, mac_d) = t.macs_per_domain();
        let rows = [
            (
                "Parameters".to_string(),
                t.extra_params_regular.to_string(),
                t.extra_params_dafd.to_string(),
            ),
            (
                String::new(),
                format!("({:.2}M)", t.extra_params_regular as f64 / 1e6),
                format!("({:.4}M)", t.extra_params_dafd as f64 / 1e6),
            ),
            (
                "Flops".to_string(),
                t.flops_regular_per_domain.to_string(),
                t.flops_dafd_per_domain.to_string(),
            ),
            (
                "MACs".to_string(),
                format!("{:.2}G", mac_r / 1e9),
                format!("{:.2}G", mac_d / 1e9),
            ),
        ];
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(10);
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max(7);
        let w2 = rows.iter().map(|r| r.2.len()).max().unwrap_or(0).max(4);
        let mut s = format!(
            "Cost of one additional domain ({} layers, D={})\n",
            self.layers.len(),
            self.domains
        );
        s.push_str(&format!("{:<w0$} | {:>w1$} | {:>w2$}\n", "", "Regular", "DAFD"));
        s.push_str(&format!("{}\n", "-".repeat(w0 + w1 + w2 + 6)));
        for (a, b, c) in rows {
            s.push_str(&format!("{a:<w0$} | {b:>w1$} | {c:>w2$}\n"));
        }
        s.push_str(&format!("convention: {}\n", self.flop_convention));
        s
    }
}
