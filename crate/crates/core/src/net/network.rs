use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::{Arch, LayerSpec, NetSpec, Resolved};
use crate::cost::LayerCostSpec;
use crate::domain::DomainId;
use crate::error::{invalid, shape_err, Error, Result};
use crate::layer::{DafdCache, DafdLayer};
use crate::tensor::{conv2d_backward, conv2d_bias, Activation, ConvSpec, Real, Tensor4};

/// Which part of the parameter registry a block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Partition {
    Shared,
    Domain(usize),
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Partition::Shared => write!(f, "shared"),
            Partition::Domain(d) => write!(f, "domain{d}"),
        }
    }
}

/// Name, partition and shape of one parameter block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockInfo {
    pub name: String,
    pub partition: Partition,
    pub shape: Vec<usize>,
}

impl BlockInfo {
    fn new(name: String, partition: Partition, shape: &[usize]) -> Self {
        Self {
            name,
            partition,
            shape: shape.to_vec(),
        }
    }
}

/// Fully connected layer, `w` is `(out, in)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Vec<T>,
    pub b: Vec<T>,
    pub n_in: usize,
    pub n_out: usize,
}

impl<T: Real> Dense<T> {
    fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let n = x.dims()[0];
        if x.sample_len() != self.n_in {
            return Err(shape_err(format!(
                "dense layer expects {} inputs, got {}",
                self.n_in,
                x.sample_len()
            )));
        }
        let mut y = Vec::with_capacity(n * self.n_out);
        for s in 0..n {
            let xs = x.sample(s);
            for o in 0..self.n_out {
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                let mut acc = self.b[o];
                for (wv, &xv) in row.iter().zip(xs) {
                    acc += *wv * xv;
                }
                y.push(acc);
            }
        }
        Tensor4::new([n, self.n_out, 1, 1], y)
    }

    fn backward(&self, x: &Tensor4<T>, dy: &Tensor4<T>, g: &mut Dense<T>) -> Tensor4<T> {
        let n = x.dims()[0];
        let mut dx = Tensor4::zeros(x.dims());
        for s in 0..n {
            let xs = x.sample(s);
            let dys = dy.sample(s);
            let dxs = &mut dx.data_mut()[s * self.n_in..(s + 1) * self.n_in];
            for (o, &d) in dys.iter().enumerate() {
                g.b[o] += d;
                let row = &self.w[o * self.n_in..(o + 1) * self.n_in];
                let grow = &mut g.w[o * self.n_in..(o + 1) * self.n_in];
                for i in 0..self.n_in {
                    grow[i] += d * xs[i];
                    dxs[i] += d * row[i];
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvNode<T> {
    /// One filter set for a shared layer, one per domain for a branched A2 layer.
    Plain {
        w: Vec<Tensor4<T>>,
        b: Vec<Vec<T>>,
        spec: ConvSpec,
    },
    Dafd(DafdLayer<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node<T> {
    Conv(ConvNode<T>),
    Dense(Dense<T>),
    Pool(usize),
    Act(Activation),
}

#[derive(Debug, Clone)]
enum NodeCache<T> {
    Input(Tensor4<T>),
    Dafd(DafdCache<T>),
    Pool { argmax: Vec<usize>, dims: [usize; 4] },
}

/// Activations kept by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    domain: usize,
    nodes: Vec<NodeCache<T>>,
    features: Tensor4<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Output<T> {
    /// Penultimate activations, `(n, d, 1, 1)`.
    pub features: Tensor4<T>,
    /// `(n, classes, 1, 1)`.
    pub logits: Tensor4<T>,
}

/// Totals per registry partition.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartitionCounts {
    pub shared: usize,
    /// Indexed by domain.
    pub per_domain: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetSpec,
    shapes: Vec<Resolved>,
    body: Vec<Node<T>>,
    head: Dense<T>,
    feature_dim: usize,
}

/// Builds a network deterministically from `seed`.
///
/// All three architectures draw the same dense initialization. A2 copies it
/// into every domain branch; A3 factorizes it into atoms and coefficients.
pub fn build_network<T: Real>(spec: &NetSpec, seed: u64) -> Result<Network<T>> {
    let (shapes, feature_dim) = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domains = spec.domains.len();
    let mut body = Vec::with_capacity(spec.layers.len());
    let mut conv_index = 0;
    for (layer, shape) in spec.layers.iter().zip(&shapes) {
        let node = match *layer {
            LayerSpec::Conv {
                c_out,
                l,
                stride,
                padding,
                k,
            } => {
                let c_in = shape.input[0];
                let w = Tensor4::<T>::glorot([c_out, c_in, l, l], &mut rng);
                let b = vec![T::zero(); c_out];
                let cs = ConvSpec::new(stride, padding)?;
                let branched = spec.branches(conv_index);
                conv_index += 1;
                match (spec.arch, branched) {
                    (Arch::A3, true) => {
                        let (layer, _) = DafdLayer::from_dense(&w, b, k.unwrap_or(spec.k), cs, domains)?;
                        ConvNode::Dafd(layer)
                    }
                    (Arch::A2, true) => ConvNode::Plain {
                        w: vec![w; domains],
                        b: vec![b; domains],
                        spec: cs,
                    },
                    _ => ConvNode::Plain {
                        w: vec![w],
                        b: vec![b],
                        spec: cs,
                    },
                }
                .into()
            }
            LayerSpec::Dense { width } => {
                Node::Dense(dense_init(shape.input.iter().product(), width, &mut rng))
            }
            LayerSpec::Pool { size } => Node::Pool(size),
            LayerSpec::Act { kind } => Node::Act(kind),
        };
        body.push(node);
    }
    let head = dense_init(feature_dim, spec.classes, &mut rng);
    Ok(Network {
        spec: spec.clone(),
        shapes,
        body,
        head,
        feature_dim,
    })
}

impl<T> From<ConvNode<T>> for Node<T> {
    fn from(c: ConvNode<T>) -> Self {
        Node::Conv(c)
    }
}

fn dense_init<T: Real>(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Dense<T> {
    let w = Tensor4::<T>::glorot([n_out, n_in, 1, 1], rng).into_data();
    Dense {
        w,
        b: vec![T::zero(); n_out],
        n_in,
        n_out,
    }
}

fn max_pool<T: Real>(x: &Tensor4<T>, s: usize) -> (Tensor4<T>, Vec<usize>) {
    let [n, c, h, w] = x.dims();
    let (oh, ow) = (h / s, w / s);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * s * w + j * s;
                for p in 0..s {
                    for q in 0..s {
                        let at = base + (i * s + p) * w + j * s + q;
                        if data[at] > data[best] {
                            best = at;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    (
        Tensor4::new([n, c, oh, ow], out).expect("pool output shape"),
        argmax,
    )
}

impl<T: Real> Network<T> {
    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn arch(&self) -> Arch {
        self.spec.arch
    }

    pub fn body(&self) -> &[Node<T>] {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut [Node<T>] {
        &mut self.body
    }

    pub fn head(&self) -> &Dense<T> {
        &self.head
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn domains(&self) -> &[DomainId] {
        &self.spec.domains
    }

    /// Resolves a registered domain to its index.
    pub fn domain_index(&self, domain: &DomainId) -> Result<usize> {
        match self.spec.domains.get(domain.index) {
            Some(d) if d == domain => Ok(domain.index),
            _ => Err(Error::UnknownDomain(domain.index)),
        }
    }

    pub fn forward(&self, x: &Tensor4<T>, domain: &DomainId) -> Result<(Output<T>, ForwardCache<T>)> {
        self.forward_index(x, self.domain_index(domain)?)
    }

    pub fn forward_index(&self, x: &Tensor4<T>, domain: usize) -> Result<(Output<T>, ForwardCache<T>)> {
        if domain >= self.spec.domains.len() {
            return Err(Error::UnknownDomain(domain));
        }
        let [n, c, h, w] = x.dims();
        if n == 0 || x.is_empty() {
            return Err(Error::Empty("forward on an empty batch".into()));
        }
        if [c, h, w] != self.spec.input {
            return Err(shape_err(format!(
                "input samples are {:?}, network expects {:?}",
                [c, h, w],
                self.spec.input
            )));
        }
        let mut nodes = Vec::with_capacity(self.body.len());
        let mut a = x.clone();
        for node in &self.body {
            let (next, cache) = match node {
                Node::Conv(ConvNode::Plain { w, b, spec }) => {
                    let slot = if w.len() == 1 { 0 } else { domain };
                    (conv2d_bias(&a, &w[slot], Some(&b[slot]), *spec)?, NodeCache::Input(a))
                }
                Node::Conv(ConvNode::Dafd(layer)) => {
                    let (y, cache) = layer.forward(&a, domain)?;
                    (y, NodeCache::Dafd(cache))
                }
                Node::Dense(d) => (d.forward(&a)?, NodeCache::Input(a)),
                Node::Pool(s) => {
                    let dims = a.dims();
                    let (y, argmax) = max_pool(&a, *s);
                    (y, NodeCache::Pool { argmax, dims })
                }
                Node::Act(kind) => (a.map(|v| kind.apply(v)), NodeCache::Input(a)),
            };
            nodes.push(cache);
            a = next;
        }
        let features = a.reshape([n, self.feature_dim, 1, 1])?;
        let logits = self.head.forward(&features)?;
        Ok((
            Output {
                features: features.clone(),
                logits,
            },
            ForwardCache {
                domain,
                nodes,
                features,
            },
        ))
    }

    /// Applies the shared head to externally supplied features.
    pub fn classify(&self, features: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.head.forward(features)
    }

    /// Accumulates parameter gradients into `grads` (see [`Self::zeros_like`]).
    ///
    /// `dfeatures` is an extra upstream gradient on the features, used by
    /// alignment losses. Returns the input gradient.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        dlogits: Option<&Tensor4<T>>,
        dfeatures: Option<&Tensor4<T>>,
        grads: &mut Network<T>,
    ) -> Result<Tensor4<T>> {
        if grads.body.len() != self.body.len() {
            return Err(shape_err("gradient accumulator does not match network"));
        }
        let domain = cache.domain;
        let mut d = match dlogits {
            Some(dl) => {
                if dl.dims() != [cache.features.dims()[0], self.spec.classes, 1, 1] {
                    return Err(shape_err(format!("logit gradient {:?}", dl.dims())));
                }
                self.head.backward(&cache.features, dl, &mut grads.head)
            }
            None => Tensor4::zeros(cache.features.dims()),
        };
        if let Some(df) = dfeatures {
            d = d.add(df)?;
        }
        let last = self.shapes.last().map_or(self.spec.input, |r| r.output);
        let n = cache.features.dims()[0];
        let mut d = d.reshape([n, last[0], last[1], last[2]])?;
        for (i, node) in self.body.iter().enumerate().rev() {
            d = match (node, &cache.nodes[i], &mut grads.body[i]) {
                (Node::Conv(ConvNode::Plain { w, spec, .. }), NodeCache::Input(x), Node::Conv(ConvNode::Plain { w: gw, b: gb, .. })) => {
                    let slot = if w.len() == 1 { 0 } else { domain };
                    let (dx, dw, db) = conv2d_backward(x, &w[slot], &d, *spec)?;
                    for (g, v) in gw[slot].data_mut().iter_mut().zip(dw.data()) {
                        *g += *v;
                    }
                    for (g, v) in gb[slot].iter_mut().zip(&db) {
                        *g += *v;
                    }
                    dx
                }
                (Node::Conv(ConvNode::Dafd(layer)), NodeCache::Dafd(c), Node::Conv(ConvNode::Dafd(g))) => {
                    layer.backward(c, &d, domain, g)?
                }
                (Node::Dense(layer), NodeCache::Input(x), Node::Dense(g)) => {
                    let dx = layer.backward(x, &d.reshape([n, layer.n_out, 1, 1])?, g);
                    let r = self.shapes[i].input;
                    dx.reshape([n, r[0], r[1], r[2]])?
                }
                (Node::Pool(_), NodeCache::Pool { argmax, dims }, _) => {
                    let mut dx = Tensor4::zeros(*dims);
                    for (&at, &g) in argmax.iter().zip(d.data()) {
                        dx.data_mut()[at] += g;
                    }
                    dx
                }
                (Node::Act(kind), NodeCache::Input(x), _) => d.zip(x, |g, xv| g * kind.derivative(xv))?,
                _ => return Err(invalid(format!("cache mismatch at layer {i}"))),
            };
        }
        Ok(d)
    }

    /// Same structure with every parameter zero; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, v| v.iter_mut().for_each(|x| *x = T::zero()));
        z
    }

    /// Visits every parameter block in a fixed order.
    pub fn visit(&self, mut f: impl FnMut(BlockInfo, &[T])) {
        for (i, node) in self.body.iter().enumerate() {
            match node {
                Node::Conv(ConvNode::Plain { w, b, .. }) => {
                    let shared = w.len() == 1;
                    for (d, (wd, bd)) in w.iter().zip(b).enumerate() {
                        let (suffix, part) = plain_slot(shared, d);
                        f(BlockInfo::new(format!("body.{i}.w{suffix}"), part, &wd.dims()), wd.data());
                        f(BlockInfo::new(format!("body.{i}.b{suffix}"), part, &[bd.len()]), bd);
                    }
                }
                Node::Conv(ConvNode::Dafd(layer)) => {
                    let (k, ci, co) = layer.coeffs().shape();
                    let l = layer.l();
                    f(
                        BlockInfo::new(format!("body.{i}.atoms@0"), Partition::Domain(0), &[k, l, l]),
                        layer.source().values(),
                    );
                    for r in layer.residuals() {
                        let d = r.domain();
                        f(
                            BlockInfo::new(format!("body.{i}.delta@{d}"), Partition::Domain(d), &[k, l, l]),
                            r.values(),
                        );
                    }
                    f(
                        BlockInfo::new(format!("body.{i}.coeffs"), Partition::Shared, &[k, ci, co]),
                        layer.coeffs().values(),
                    );
                    f(BlockInfo::new(format!("body.{i}.b"), Partition::Shared, &[co]), layer.bias());
                }
                Node::Dense(d) => {
                    f(BlockInfo::new(format!("body.{i}.w"), Partition::Shared, &[d.n_out, d.n_in]), &d.w);
                    f(BlockInfo::new(format!("body.{i}.b"), Partition::Shared, &[d.n_out]), &d.b);
                }
                Node::Pool(_) | Node::Act(_) => {}
            }
        }
        let h = &self.head;
        f(BlockInfo::new("head.w".into(), Partition::Shared, &[h.n_out, h.n_in]), &h.w);
        f(BlockInfo::new("head.b".into(), Partition::Shared, &[h.n_out]), &h.b);
    }

    /// Mutable counterpart of [`Self::visit`], same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(BlockInfo, &mut [T])) {
        for (info, v) in self.blocks_mut() {
            f(info, v);
        }
    }

    /// Every parameter block as a disjoint mutable slice, in [`Self::visit`] order.
    pub fn blocks_mut(&mut self) -> Vec<(BlockInfo, &mut [T])> {
        let mut out = Vec::new();
        for (i, node) in self.body.iter_mut().enumerate() {
            match node {
                Node::Conv(ConvNode::Plain { w, b, .. }) => {
                    let shared = w.len() == 1;
                    for (d, (wd, bd)) in w.iter_mut().zip(b.iter_mut()).enumerate() {
                        let (suffix, part) = plain_slot(shared, d);
                        let dims = wd.dims();
                        out.push((BlockInfo::new(format!("body.{i}.w{suffix}"), part, &dims), wd.data_mut()));
                        let len = bd.len();
                        out.push((BlockInfo::new(format!("body.{i}.b{suffix}"), part, &[len]), bd.as_mut_slice()));
                    }
                }
                Node::Conv(ConvNode::Dafd(layer)) => {
                    let (k, ci, co) = layer.coeffs().shape();
                    let l = layer.l();
                    let (atoms, residuals, coeffs, bias) = layer.parts_mut();
                    out.push((
                        BlockInfo::new(format!("body.{i}.atoms@0"), Partition::Domain(0), &[k, l, l]),
                        atoms,
                    ));
                    for (r, v) in residuals.into_iter().enumerate() {
                        let d = r + 1;
                        out.push((
                            BlockInfo::new(format!("body.{i}.delta@{d}"), Partition::Domain(d), &[k, l, l]),
                            v,
                        ));
                    }
                    out.push((BlockInfo::new(format!("body.{i}.coeffs"), Partition::Shared, &[k, ci, co]), coeffs));
                    out.push((BlockInfo::new(format!("body.{i}.b"), Partition::Shared, &[co]), bias));
                }
                Node::Dense(d) => {
                    let (o, n) = (d.n_out, d.n_in);
                    out.push((BlockInfo::new(format!("body.{i}.w"), Partition::Shared, &[o, n]), d.w.as_mut_slice()));
                    out.push((BlockInfo::new(format!("body.{i}.b"), Partition::Shared, &[o]), d.b.as_mut_slice()));
                }
                Node::Pool(_) | Node::Act(_) => {}
            }
        }
        let h = &mut self.head;
        let (o, n) = (h.n_out, h.n_in);
        out.push((BlockInfo::new("head.w".into(), Partition::Shared, &[o, n]), h.w.as_mut_slice()));
        out.push((BlockInfo::new("head.b".into(), Partition::Shared, &[o]), h.b.as_mut_slice()));
        out
    }

    pub fn blocks(&self) -> Vec<(BlockInfo, Vec<T>)> {
        let mut out = Vec::new();
        self.visit(|info, v| out.push((info, v.to_vec())));
        out
    }

    pub fn partition_counts(&self) -> PartitionCounts {
        let mut c = PartitionCounts {
            shared: 0,
            per_domain: vec![0; self.spec.domains.len()],
        };
        self.visit(|info, v| match info.partition {
            Partition::Shared => c.shared += v.len(),
            Partition::Domain(d) => c.per_domain[d] += v.len(),
        });
        c
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, v| n += v.len());
        n
    }

    /// Cost-model specs for the branched conv layers, in order.
    pub fn branched_cost_specs(&self) -> Vec<LayerCostSpec> {
        let mut out = Vec::new();
        let mut conv_index = 0;
        for (layer, shape) in self.spec.layers.iter().zip(&self.shapes) {
            if let LayerSpec::Conv { c_out, l, k, .. } = *layer {
                if self.spec.branches(conv_index) {
                    out.push(LayerCostSpec {
                        c_in: shape.input[0] as u64,
                        c_out: c_out as u64,
                        l: l as u64,
                        width: shape.output[1] as u64,
                        k: k.unwrap_or(self.spec.k) as u64,
                    });
                }
                conv_index += 1;
            }
        }
        out
    }

    /// L2 norm of the blocks in each partition: `(shared, per domain)`.
    pub fn partition_norms(&self) -> (f64, Vec<f64>) {
        let mut shared = 0.0;
        let mut per = vec![0.0; self.spec.domains.len()];
        self.visit(|info, v| {
            let s: f64 = v.iter().map(|x| x.f64() * x.f64()).sum();
            match info.partition {
                Partition::Shared => shared += s,
                Partition::Domain(d) => per[d] += s,
            }
        });
        (shared.sqrt(), per.into_iter().map(f64::sqrt).collect())
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let body = self
            .body
            .iter()
            .map(|node| match node {
                Node::Conv(ConvNode::Plain { w, b, spec }) => Node::Conv(ConvNode::Plain {
                    w: w.iter().map(|t| t.cast()).collect(),
                    b: b.iter().map(|v| v.iter().map(|x| U::of(x.f64())).collect()).collect(),
                    spec: *spec,
                }),
                Node::Conv(ConvNode::Dafd(l)) => Node::Conv(ConvNode::Dafd(l.cast())),
                Node::Dense(d) => Node::Dense(cast_dense(d)),
                Node::Pool(s) => Node::Pool(*s),
                Node::Act(a) => Node::Act(*a),
            })
            .collect();
        Network {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            body,
            head: cast_dense(&self.head),
            feature_dim: self.feature_dim,
        }
    }
}

fn cast_dense<T: Real, U: Real>(d: &Dense<T>) -> Dense<U> {
    Dense {
        w: d.w.iter().map(|x| U::of(x.f64())).collect(),
        b: d.b.iter().map(|x| U::of(x.f64())).collect(),
        n_in: d.n_in,
        n_out: d.n_out,
    }
}

fn plain_slot(shared: bool, d: usize) -> (String, Partition) {
    if shared {
        (String::new(), Partition::Shared)
    } else {
        (format!("@{d}"), Partition::Domain(d))
    }
}

