//! Line-based run configuration.
//!
//! ```text
//! # comment
//! [train]
//! epochs = 3
//! lr = 0.02
//! ```
//!
//! Keys live in `[section]` blocks; every key has a default and unknown
//! sections or keys are errors. [`RunConfig::to_text`] writes the fully
//! resolved configuration back out in the same format.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dafd::data::{ShapeKind, ShiftKind, ShiftSpec};
use dafd::net::{Arch, Mode, TrainConfig};
use dafd::theory::{Check, FieldKind, SweepConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Shapes,
    Idx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub seed: u64,
    pub threads: usize,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSection {
    pub source: DataSource,
    pub shapes: Vec<ShapeKind>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub size: usize,
    pub data_seed: u64,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSection {
    pub arch: Arch,
    pub k: usize,
    pub branched: usize,
    pub precision: Precision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub features: bool,
    pub checkpoint: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostSection {
    pub preset: String,
    pub spec_file: Option<PathBuf>,
    pub k: u64,
    pub domains: u64,
    pub input_size: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSection {
    pub archs: Vec<Arch>,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub shift: ShiftSpec,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub split_seed: Option<u64>,
    pub output: OutputSection,
    pub verify: SweepConfig,
    pub cost: CostSection,
    pub compare: CompareSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run: RunSection {
                seed: 1,
                threads: 1,
                out: None,
            },
            data: DataSection {
                source: DataSource::Shapes,
                shapes: ShapeKind::ALL.to_vec(),
                train_per_class: 800,
                test_per_class: 200,
                size: 18,
                data_seed: 7,
                train_images: None,
                train_labels: None,
                test_images: None,
                test_labels: None,
            },
            shift: ShiftSpec::patch_rotate_negate(),
            model: ModelSection {
                arch: Arch::A3,
                k: 6,
                branched: 2,
                precision: Precision::F32,
            },
            train: TrainConfig {
                mmd_weight: 2.0,
                ..TrainConfig::default()
            },
            split_seed: None,
            output: OutputSection {
                features: true,
                checkpoint: true,
            },
            verify: SweepConfig::default_for(Check::Lemma1),
            cost: CostSection {
                preset: "vgg16".into(),
                spec_file: None,
                k: 6,
                domains: 2,
                input_size: 224,
            },
            compare: CompareSection {
                archs: Arch::ALL.to_vec(),
                fractions: vec![0.005],
                seeds: vec![1, 2, 3],
            },
        }
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got '{v}'")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("'{v}': {e}"))
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| f(s.trim())).collect()
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn path_or_empty(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn shift_kind_name(k: &ShiftKind) -> &'static str {
    match k {
        ShiftKind::PatchRotateNegate => "patch-rotate-negate",
        ShiftKind::PatchRotate => "patch-rotate",
        ShiftKind::NegateOnly => "negate-only",
        ShiftKind::Photometric { .. } => "photometric",
        ShiftKind::CustomWarp { .. } => "warp",
    }
}

fn field_text(f: &FieldKind) -> (String, f64, u64) {
    match *f {
        FieldKind::Zero => ("zero".into(), 0.0, 0),
        FieldKind::Rotation { theta } => ("rotation".into(), theta.to_degrees(), 0),
        FieldKind::Dilation { s } => ("dilation".into(), s, 0),
        FieldKind::SmoothOdd { seed, amplitude } => ("smooth-odd".into(), amplitude, seed),
    }
}

/// Raw shift keys, combined once the whole section is read.
#[derive(Debug, Clone)]
struct ShiftDraft {
    kind: String,
    patch: usize,
    gain: f64,
    offset: f64,
    field: String,
    field_value: f64,
    field_seed: u64,
}

impl ShiftDraft {
    fn from_spec(s: &ShiftSpec) -> Self {
        let (gain, offset) = match s.kind {
            ShiftKind::Photometric { gain, offset } => (gain, offset),
            _ => (1.0, 0.0),
        };
        let (field, field_value, field_seed) = match &s.kind {
            ShiftKind::CustomWarp { field } => field_text(field),
            _ => ("rotation".into(), 5.0, 0),
        };
        Self {
            kind: shift_kind_name(&s.kind).into(),
            patch: s.patch,
            gain,
            offset,
            field,
            field_value,
            field_seed,
        }
    }

    fn build(&self) -> Result<ShiftSpec, String> {
        let kind = match self.kind.as_str() {
            "patch-rotate-negate" => ShiftKind::PatchRotateNegate,
            "patch-rotate" => ShiftKind::PatchRotate,
            "negate-only" => ShiftKind::NegateOnly,
            "photometric" => ShiftKind::Photometric {
                gain: self.gain,
                offset: self.offset,
            },
            "warp" => ShiftKind::CustomWarp {
                field: match self.field.as_str() {
                    "zero" => FieldKind::Zero,
                    "rotation" => FieldKind::rotation_degrees(self.field_value),
                    "dilation" => FieldKind::Dilation { s: self.field_value },
                    "smooth-odd" => FieldKind::SmoothOdd {
                        seed: self.field_seed,
                        amplitude: self.field_value,
                    },
                    other => return Err(format!("unknown field '{other}'")),
                },
            },
            other => {
                return Err(format!(
                    "unknown shift kind '{other}' (expected patch-rotate-negate, patch-rotate, \
                     negate-only, photometric or warp)"
                ))
            }
        };
        Ok(ShiftSpec::new(kind).with_patch(self.patch))
    }
}

pub const SECTIONS: [&str; 9] = [
    "run", "data", "shift", "model", "train", "output", "verify", "cost", "compare",
];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries: Vec<(String, String, String, usize)> = Vec::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(Some(line_no), format!("malformed section header '{line}'")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(Some(line_no), format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(Some(line_no), format!("expected key = value, got '{line}'")))?;
            let sec = section
                .clone()
                .ok_or_else(|| err(Some(line_no), "key outside of any [section]"))?;
            let key = k.trim().to_string();
            if entries.iter().any(|(s, k2, _, _)| *s == sec && *k2 == key) {
                return Err(err(Some(line_no), format!("duplicate key {sec}.{key}")));
            }
            entries.push((sec, key, v.trim().to_string(), line_no));
        }

        let mut cfg = RunConfig::default();
        // A chosen check resets the sweep grid to that check's defaults
        // before the other verify keys apply.
        if let Some((_, _, v, line)) = entries.iter().find(|(s, k, _, _)| s == "verify" && k == "check") {
            let check = Check::parse(v).map_err(|e| err(Some(*line), e.to_string()))?;
            cfg.verify = SweepConfig::default_for(check);
        }
        let mut shift = ShiftDraft::from_spec(&cfg.shift);
        for (sec, key, value, line) in &entries {
            cfg.apply(sec, key, value, &mut shift)
                .map_err(|m| err(Some(*line), format!("{sec}.{key}: {m}")))?;
        }
        cfg.shift = shift.build().map_err(|m| err(None, format!("shift: {m}")))?;
        cfg.validate().map_err(|m| err(None, m))?;
        Ok(cfg)
    }

    fn apply(&mut self, sec: &str, key: &str, v: &str, shift: &mut ShiftDraft) -> Result<(), String> {
        let unknown = || Err(format!("unknown key '{key}' in [{sec}]"));
        match sec {
            "run" => match key {
                "seed" => self.run.seed = parse_num(v)?,
                "threads" => self.run.threads = parse_num(v)?,
                "out" => self.run.out = opt_path(v),
                _ => return unknown(),
            },
            "data" => {
                let d = &mut self.data;
                match key {
                    "source" => {
                        d.source = match v {
                            "shapes" => DataSource::Shapes,
                            "idx" => DataSource::Idx,
                            _ => return Err(format!("expected shapes or idx, got '{v}'")),
                        }
                    }
                    "shapes" => {
                        d.shapes = parse_list(v, |s| ShapeKind::parse(s).map_err(|e| e.to_string()))?
                    }
                    "train_per_class" => d.train_per_class = parse_num(v)?,
                    "test_per_class" => d.test_per_class = parse_num(v)?,
                    "size" => d.size = parse_num(v)?,
                    "data_seed" => d.data_seed = parse_num(v)?,
                    "train_images" => d.train_images = opt_path(v),
                    "train_labels" => d.train_labels = opt_path(v),
                    "test_images" => d.test_images = opt_path(v),
                    "test_labels" => d.test_labels = opt_path(v),
                    _ => return unknown(),
                }
            }
            "shift" => match key {
                "kind" => shift.kind = v.to_string(),
                "patch" => shift.patch = parse_num(v)?,
                "gain" => shift.gain = parse_num(v)?,
                "offset" => shift.offset = parse_num(v)?,
                "field" => shift.field = v.to_string(),
                "field_value" => shift.field_value = parse_num(v)?,
                "field_seed" => shift.field_seed = parse_num(v)?,
                _ => return unknown(),
            },
            "model" => match key {
                "arch" => self.model.arch = Arch::parse(v).map_err(|e| e.to_string())?,
                "k" => self.model.k = parse_num(v)?,
                "branched" => self.model.branched = parse_num(v)?,
                "precision" => {
                    self.model.precision = match v {
                        "f32" => Precision::F32,
                        "f64" => Precision::F64,
                        _ => return Err(format!("expected f32 or f64, got '{v}'")),
                    }
                }
                _ => return unknown(),
            },
            "train" => {
                let t = &mut self.train;
                match key {
                    "epochs" => t.epochs = parse_num(v)?,
                    "batch_size" => t.batch_size = parse_num(v)?,
                    "lr" => t.lr = parse_num(v)?,
                    "momentum" => t.momentum = parse_num(v)?,
                    "target_fraction" => t.target_fraction = parse_num(v)?,
                    "mode" => t.mode = Mode::parse(v).map_err(|e| e.to_string())?,
                    "mmd_weight" => t.mmd_weight = parse_num(v)?,
                    "mmd_bandwidths" => t.mmd_bandwidths = parse_list(v, parse_num)?,
                    "split_seed" => self.split_seed = Some(parse_num(v)?),
                    _ => return unknown(),
                }
            }
            "output" => match key {
                "features" => self.output.features = parse_bool(v)?,
                "checkpoint" => self.output.checkpoint = parse_bool(v)?,
                _ => return unknown(),
            },
            "verify" => {
                let s = &mut self.verify;
                match key {
                    "check" => {}
                    "degrees" => s.degrees = parse_list(v, parse_num)?,
                    "amplitudes" => s.amplitudes = parse_list(v, parse_num)?,
                    "field_seed" => s.field_seed = parse_num(v)?,
                    "dilations" => s.dilations = parse_list(v, parse_num)?,
                    "resolutions" => s.resolutions = parse_list(v, parse_num)?,
                    "seeds" => s.seeds = parse_num(v)?,
                    "depths" => s.depths = parse_list(v, parse_num)?,
                    "atoms" => s.atoms = parse_list(v, parse_num)?,
                    "support" => s.support = parse_num(v)?,
                    "scale" => s.scale = parse_num(v)?,
                    "bias" => s.bias = parse_num(v)?,
                    "control_threshold" => s.control_threshold = parse_num(v)?,
                    _ => return unknown(),
                }
            }
            "cost" => {
                let c = &mut self.cost;
                match key {
                    "preset" => c.preset = v.to_string(),
                    "spec_file" => c.spec_file = opt_path(v),
                    "k" => c.k = parse_num(v)?,
                    "domains" => c.domains = parse_num(v)?,
                    "input_size" => c.input_size = parse_num(v)?,
                    _ => return unknown(),
                }
            }
            "compare" => {
                let c = &mut self.compare;
                match key {
                    "archs" => c.archs = parse_list(v, |s| Arch::parse(s).map_err(|e| e.to_string()))?,
                    "fractions" => c.fractions = parse_list(v, parse_num)?,
                    "seeds" => c.seeds = parse_list(v, parse_num)?,
                    _ => return unknown(),
                }
            }
            _ => return Err(format!("unknown section [{sec}]")),
        }
        Ok(())
    }

    /// Cross-field checks that do not need data.
    pub fn validate(&self) -> Result<(), String> {
        if self.run.threads == 0 {
            return Err("run.threads must be at least 1".into());
        }
        if self.data.shapes.len() < 2 {
            return Err("data.shapes needs at least two classes".into());
        }
        if self.data.source == DataSource::Idx {
            let d = &self.data;
            if [&d.train_images, &d.train_labels, &d.test_images, &d.test_labels]
                .iter()
                .any(|p| p.is_none())
            {
                return Err("idx data needs train_images, train_labels, test_images and test_labels".into());
            }
        }
        self.train.validate().map_err(|e| format!("train: {e}"))?;
        self.verify.validate().map_err(|e| format!("verify: {e}"))?;
        if self.compare.archs.is_empty() || self.compare.fractions.is_empty() || self.compare.seeds.is_empty() {
            return Err("compare needs at least one arch, fraction and seed".into());
        }
        Ok(())
    }

    /// The split seed defaults to the run seed.
    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.run.seed)
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.run.seed,
            ..self.train.clone()
        }
    }

    /// The resolved configuration in the input format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let r = &self.run;
        let _ = writeln!(s, "[run]\nseed = {}\nthreads = {}\nout = {}\n", r.seed, r.threads, path_or_empty(&r.out));
        let d = &self.data;
        let source = match d.source {
            DataSource::Shapes => "shapes",
            DataSource::Idx => "idx",
        };
        let shapes: Vec<&str> = d.shapes.iter().map(|k| k.name()).collect();
        let _ = writeln!(
            s,
            "[data]\nsource = {source}\nshapes = {}\ntrain_per_class = {}\ntest_per_class = {}\nsize = {}\n\
             data_seed = {}\ntrain_images = {}\ntrain_labels = {}\ntest_images = {}\ntest_labels = {}\n",
            shapes.join(","),
            d.train_per_class,
            d.test_per_class,
            d.size,
            d.data_seed,
            path_or_empty(&d.train_images),
            path_or_empty(&d.train_labels),
            path_or_empty(&d.test_images),
            path_or_empty(&d.test_labels),
        );
        let sh = ShiftDraft::from_spec(&self.shift);
        let _ = writeln!(
            s,
            "[shift]\nkind = {}\npatch = {}\ngain = {}\noffset = {}\nfield = {}\nfield_value = {}\nfield_seed = {}\n",
            sh.kind, sh.patch, sh.gain, sh.offset, sh.field, sh.field_value, sh.field_seed
        );
        let m = &self.model;
        let precision = match m.precision {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        };
        let _ = writeln!(
            s,
            "[model]\narch = {}\nk = {}\nbranched = {}\nprecision = {precision}\n",
            m.arch, m.k, m.branched
        );
        let t = &self.train;
        let _ = writeln!(
            s,
            "[train]\nepochs = {}\nbatch_size = {}\nlr = {}\nmomentum = {}\ntarget_fraction = {}\nmode = {}\n\
             mmd_weight = {}\nmmd_bandwidths = {}\nsplit_seed = {}\n",
            t.epochs,
            t.batch_size,
            t.lr,
            t.momentum,
            t.target_fraction,
            t.mode.name(),
            t.mmd_weight,
            join(&t.mmd_bandwidths),
            self.split_seed()
        );
        let o = &self.output;
        let _ = writeln!(s, "[output]\nfeatures = {}\ncheckpoint = {}\n", o.features, o.checkpoint);
        let v = &self.verify;
        let _ = writeln!(
            s,
            "[verify]\ncheck = {}\ndegrees = {}\namplitudes = {}\nfield_seed = {}\ndilations = {}\n\
             resolutions = {}\nseeds = {}\ndepths = {}\natoms = {}\nsupport = {}\nscale = {}\nbias = {}\n\
             control_threshold = {}\n",
            v.check.name(),
            join(&v.degrees),
            join(&v.amplitudes),
            v.field_seed,
            join(&v.dilations),
            join(&v.resolutions),
            v.seeds,
            join(&v.depths),
            join(&v.atoms),
            v.support,
            v.scale,
            v.bias,
            v.control_threshold
        );
        let c = &self.cost;
        let _ = writeln!(
            s,
            "[cost]\npreset = {}\nspec_file = {}\nk = {}\ndomains = {}\ninput_size = {}\n",
            c.preset,
            path_or_empty(&c.spec_file),
            c.k,
            c.domains,
            c.input_size
        );
        let c = &self.compare;
        let _ = write!(
            s,
            "[compare]\narchs = {}\nfractions = {}\nseeds = {}\n",
            join(&c.archs),
            join(&c.fractions),
            join(&c.seeds)
        );
        s
    }
}
