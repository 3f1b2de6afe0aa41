//! End-to-end check of the stacked bound: an `L`-layer generative net
//! renders source and target images from a common representation `h`, and
//! an `L`-layer feature net with warped (atom-branched) filters maps the
//! target image back to the source features.

use serde::{Deserialize, Serialize};

use super::checks::{activate, activate_field, ensure_support, ensure_zero_baseline, BoundReport};
use super::field::{warp_filter, warped_radius, DisplacementField, FieldKind, WarpDirection, MAX_GRAD};
use super::grid::{convolve, GridFilter, GridSignal};
use super::scenario::{FilterSpec, SignalSpec};
use crate::error::{invalid, Error, Result};
use crate::tensor::Activation;

/// Norm tolerance for filters that should satisfy `||w||_1 <= 1`.
const NORM_TOL: f64 = 1e-12;

/// Layer `-l` of the generative net and layer `l` of the feature net.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerPair {
    pub generative: FilterSpec,
    pub feature: FilterSpec,
    pub generative_bias: f64,
    pub feature_bias: f64,
    pub field: FieldKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackSpec {
    pub n: usize,
    pub h: SignalSpec,
    /// `layers[l - 1]` holds pair `l`; the generative net runs `L, ..., 1`
    /// and the feature net `1, ..., L`.
    pub layers: Vec<LayerPair>,
    pub activation: Activation,
}

impl StackSpec {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn label(&self) -> String {
        let fields: Vec<String> = self.layers.iter().map(|p| p.field.label()).collect();
        format!(
            "L={} h.seed={} N={} [{}]",
            self.depth(),
            self.h.seed,
            self.n,
            fields.join(",")
        )
    }

    /// Assumption checks that do not need sampled data.
    pub fn validate(&self) -> Result<Vec<DisplacementField>> {
        if self.layers.is_empty() {
            return Err(invalid("stack needs at least one layer"));
        }
        self.activation.validate().map_err(|e| Error::Assumption {
            assumption: "A1",
            detail: e.to_string(),
        })?;
        let mut fields = Vec::with_capacity(self.layers.len());
        for (i, pair) in self.layers.iter().enumerate() {
            let field = DisplacementField::new(pair.field).map_err(|e| match e {
                Error::Assumption { detail, .. } => Error::Assumption {
                    assumption: "A2",
                    detail: format!("layer {}: {detail}", i + 1),
                },
                other => other,
            })?;
            if field.odd_defect(super::grid::Lattice::domain(16)) > 1e-12 {
                return Err(Error::Assumption {
                    assumption: "A2",
                    detail: format!("layer {}: displacement is not odd", i + 1),
                });
            }
            if (pair.generative.scale(self.n) - pair.feature.scale(self.n)).abs() > 1e-12 {
                return Err(Error::Assumption {
                    assumption: "A3",
                    detail: format!("layer {}: generative and feature scales differ", i + 1),
                });
            }
            for (which, spec) in [("generative", pair.generative), ("feature", pair.feature)] {
                if spec.l1() > 1.0 + NORM_TOL {
                    return Err(Error::Assumption {
                        assumption: "A3",
                        detail: format!("layer {} {which} filter norm {} exceeds 1", i + 1, spec.l1()),
                    });
                }
            }
            for bias in [pair.generative_bias, pair.feature_bias] {
                ensure_zero_baseline(&field, self.activation, bias)?;
            }
            fields.push(field);
        }
        Ok(fields)
    }
}

/// Per-layer quantities, indexed by pair `l = 1..L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    pub grad_inf: f64,
    pub radius: f64,
    /// `||x_c||_1` of the centered target input to generative layer `-l`.
    pub centered_l1: f64,
    pub centered_tv: f64,
    /// Max difference of source and target zero-input outputs at layer `-l`.
    pub baseline_diff: f64,
    /// `||D_l w||_1` for the generative and feature filters.
    pub warped_generative_l1: f64,
    pub warped_feature_l1: f64,
    pub masked_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Eval {
    pub measured: f64,
    pub control: f64,
    pub bound: f64,
    pub epsilon: f64,
    pub h_l1: f64,
    pub h_tv: f64,
    pub trace: Vec<LayerTrace>,
}

/// Everything the pipeline produces on one grid.
#[derive(Debug, Clone)]
pub struct Theorem1Run {
    pub eval: Theorem1Eval,
    pub x_source: GridSignal,
    pub x_target: GridSignal,
    pub f_source: GridSignal,
    pub f_target: GridSignal,
    pub f_control: GridSignal,
}

fn feature_net(x: &GridSignal, filters: &[GridFilter], biases: &[f64], act: Activation) -> Result<GridSignal> {
    let mut y = x.clone();
    for (w, &b) in filters.iter().zip(biases) {
        y = activate(&convolve(&y, w)?, act, b);
    }
    Ok(y)
}

/// Runs both generative nets, the corrected and uncorrected target feature
/// nets, and the source feature net at resolution `n`.
pub fn theorem1_run(spec: &StackSpec, fields: &[DisplacementField], n: usize) -> Result<Theorem1Run> {
    let act = spec.activation;
    let h = spec.h.sample(n)?;
    let depth = spec.depth();
    let reach: f64 = spec
        .layers
        .iter()
        .zip(fields)
        .map(|(p, f)| 2.0 * warped_radius(p.generative.scale(n).exp2(), f, WarpDirection::Forward))
        .sum();
    ensure_support(&h, reach, "theorem1")?;

    let mut gen_s = Vec::with_capacity(depth);
    let mut gen_t = Vec::with_capacity(depth);
    let mut feat_s = Vec::with_capacity(depth);
    let mut feat_t = Vec::with_capacity(depth);
    let mut masked = Vec::with_capacity(depth);
    for (pair, field) in spec.layers.iter().zip(fields) {
        let ws = pair.generative.sample(n)?;
        let (wt, m1) = warp_filter(&ws, field, WarpDirection::Forward)?;
        let fs = pair.feature.sample(n)?;
        let (ft, m2) = warp_filter(&fs, field, WarpDirection::Forward)?;
        gen_s.push(ws);
        gen_t.push(wt);
        feat_s.push(fs);
        feat_t.push(ft);
        masked.push(m1 + m2);
    }

    // Generative nets, layer -L first. `x0_*` are the zero-input paths.
    let lattice = h.lattice();
    let mut xs = h.clone();
    let mut xt = h.clone();
    let mut x0s = GridSignal::zeros(lattice);
    let mut x0t = GridSignal::zeros(lattice);
    let mut trace: Vec<LayerTrace> = Vec::with_capacity(depth);
    for l in (0..depth).rev() {
        let pair = &spec.layers[l];
        let centered = xt.sub(&x0t)?;
        // b_t = b_s + (x0 * w_s - x0 * w_t), per position.
        let shift = convolve(&x0t, &gen_s[l])?.sub(&convolve(&x0t, &gen_t[l])?)?;
        let bias_t = shift.map(|v| pair.generative_bias + v);
        xs = activate(&convolve(&xs, &gen_s[l])?, act, pair.generative_bias);
        xt = activate_field(&convolve(&xt, &gen_t[l])?, act, &bias_t)?;
        x0s = activate(&convolve(&x0s, &gen_s[l])?, act, pair.generative_bias);
        x0t = activate_field(&convolve(&x0t, &gen_t[l])?, act, &bias_t)?;
        trace.push(LayerTrace {
            layer: l + 1,
            grad_inf: fields[l].grad_inf(),
            radius: gen_s[l].radius(),
            centered_l1: centered.l1_norm(),
            centered_tv: centered.tv_norm(),
            baseline_diff: x0s.max_abs_diff(&x0t)?,
            warped_generative_l1: gen_t[l].l1_norm(),
            warped_feature_l1: feat_t[l].l1_norm(),
            masked_mass: masked[l],
        });
    }
    trace.reverse();

    let feat_bias: Vec<f64> = spec.layers.iter().map(|p| p.feature_bias).collect();
    let f_source = feature_net(&xs, &feat_s, &feat_bias, act)?;
    let f_target = feature_net(&xt, &feat_t, &feat_bias, act)?;
    let f_control = feature_net(&xt, &feat_s, &feat_bias, act)?;

    let epsilon = fields.iter().map(|f| f.grad_inf()).fold(0.0, f64::max);
    let all_rigid = fields.iter().all(|f| f.is_rigid());
    let radii: f64 = gen_s.iter().map(|w| w.radius()).sum();
    let (h_l1, h_tv) = (h.l1_norm(), h.tv_norm());
    let second = if all_rigid {
        0.0
    } else {
        2.0 * depth as f64 * h_l1
    };
    let eval = Theorem1Eval {
        measured: f_source.l1_distance(&f_target)?,
        control: f_source.l1_distance(&f_control)?,
        bound: 4.0 * epsilon * (radii * h_tv + second),
        epsilon,
        h_l1,
        h_tv,
        trace,
    };
    Ok(Theorem1Run {
        eval,
        x_source: xs,
        x_target: xt,
        f_source,
        f_target,
        f_control,
    })
}

/// Theorem check at `spec.n` with slack from `2 * spec.n`.
///
/// Details carry the control error (feature net left uncorrected), the
/// control ratio, the worst zero-input baseline mismatch, and the worst
/// excess of the centered generative activations over `||h||_1` and
/// `||grad h||_1` net of their own refinement slack.
pub fn run_theorem1(spec: &StackSpec) -> Result<(BoundReport, Theorem1Eval)> {
    let fields = spec.validate()?;
    let coarse = theorem1_run(spec, &fields, spec.n)?.eval;
    let fine = theorem1_run(spec, &fields, 2 * spec.n)?.eval;
    let slack = (coarse.measured - fine.measured).abs();
    let ratio = if coarse.measured > 0.0 {
        coarse.control / coarse.measured
    } else if coarse.control > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    let baseline = coarse
        .trace
        .iter()
        .map(|t| t.baseline_diff)
        .fold(0.0, f64::max);
    let mut claim_l1: f64 = f64::NEG_INFINITY;
    let mut claim_tv: f64 = f64::NEG_INFINITY;
    for (c, f) in coarse.trace.iter().zip(&fine.trace) {
        let s1 = (c.centered_l1 - f.centered_l1).abs() + (coarse.h_l1 - fine.h_l1).abs();
        let s2 = (c.centered_tv - f.centered_tv).abs() + (coarse.h_tv - fine.h_tv).abs();
        claim_l1 = claim_l1.max(c.centered_l1 - coarse.h_l1 - s1);
        claim_tv = claim_tv.max(c.centered_tv - coarse.h_tv - s2);
    }
    let report = BoundReport::new(
        "theorem1",
        spec.label(),
        spec.n,
        coarse.measured,
        coarse.bound,
        slack,
    )
    .with("control_error", coarse.control)
    .with("control_ratio", ratio)
    .with("epsilon", coarse.epsilon)
    .with("h_l1", coarse.h_l1)
    .with("h_tv", coarse.h_tv)
    .with("baseline_diff", baseline)
    .with("claim3_l1_excess", claim_l1)
    .with("claim3_tv_excess", claim_tv)
    .with("measured_fine", fine.measured);
    Ok((report, coarse))
}

/// Complementary oriented filter pairs: every generative filter has its
/// long axis at the same angle and every feature filter a quarter turn
/// later, so each pair convolves to a nearly isotropic kernel while the
/// uncorrected feature net sees the full anisotropy. Layer `l` is rotated
/// by `degrees[l - 1]`.
pub fn oriented_stack(n: usize, h: SignalSpec, scale: f64, degrees: &[f64], bias: f64) -> StackSpec {
    let layers = degrees
        .iter()
        .map(|&deg| {
            let generative = FilterSpec::Oriented {
                scale,
                angle: 0.35,
                long: 0.55,
                short: 0.2,
                l1: 1.0,
            };
            LayerPair {
                generative,
                feature: generative.complement(),
                generative_bias: bias,
                feature_bias: bias,
                field: FieldKind::rotation_degrees(deg),
            }
        })
        .collect();
    StackSpec {
        n,
        h,
        layers,
        activation: Activation::Relu,
    }
}

/// `epsilon` for a rotation of `degrees`.
pub fn rotation_epsilon(degrees: f64) -> f64 {
    2.0 * (degrees.to_radians() / 2.0).sin()
}

/// True when a rotation of `degrees` satisfies the displacement gate.
pub fn rotation_admissible(degrees: f64) -> bool {
    rotation_epsilon(degrees) < MAX_GRAD
}
