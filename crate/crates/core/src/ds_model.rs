//! Dynamic-sharing multimodal model.
//!
//! Each modality `i` has its own encoder `f_i` mapping its features into a
//! common width `h`. One shared backbone `T` is applied to every encoded
//! modality separately, `h_i = T(f_i(x_i))`, and the backbone outputs of the
//! *present* modalities are fused (mean by default) and passed to a task
//! head. Absent modalities are never imputed: their encoders are simply not
//! evaluated, so their parameters receive exactly zero gradient.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, GradientVector, Graph, GroupId, LayerSpec, MlpSpec, ParamGroup, Tensor, Var};
use crate::cases::ModalityCase;
use crate::error::{Error, Result};

pub const SHARED_GROUP: &str = "shared";
pub const HEAD_GROUP: &str = "head";

pub fn encoder_group(modality: usize) -> GroupId {
    GroupId::new(format!("enc{modality}"))
}

/// How backbone outputs of the present modalities are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Mean,
    Sum,
}

/// Dataset-independent model shape, as written in run configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Common feature width `h` shared by encoder outputs and backbone input.
    pub hidden_dim: usize,
    /// Encoder layers; the last must have width `hidden_dim`.
    pub encoder: Vec<LayerSpec>,
    /// Backbone layers, starting from width `hidden_dim`.
    pub shared: Vec<LayerSpec>,
    /// Hidden head layers; a final identity layer to the output width is appended.
    #[serde(default)]
    pub head_hidden: Vec<LayerSpec>,
    #[serde(default)]
    pub fusion: Fusion,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden_dim: 16,
            encoder: vec![LayerSpec {
                width: 16,
                activation: Activation::Relu,
            }],
            shared: vec![LayerSpec {
                width: 16,
                activation: Activation::Relu,
            }],
            head_hidden: vec![],
            fusion: Fusion::Mean,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 {
            return Err(Error::invalid("model.hidden_dim must be at least 1"));
        }
        match self.encoder.last() {
            None => return Err(Error::invalid("model.encoder needs at least one layer")),
            Some(l) if l.width != self.hidden_dim => {
                return Err(Error::invalid(format!(
                    "model.encoder output width {} must equal hidden_dim {}",
                    l.width, self.hidden_dim
                )))
            }
            _ => {}
        }
        if self.shared.is_empty() {
            return Err(Error::invalid("model.shared needs at least one layer"));
        }
        let widths = self.encoder.iter().chain(&self.shared).chain(&self.head_hidden);
        if widths.clone().any(|l| l.width == 0) {
            return Err(Error::invalid("model layer widths must be at least 1"));
        }
        Ok(())
    }

    /// Resolves the spec against per-modality input widths and an output width.
    pub fn arch(&self, input_dims: &[usize], output_dim: usize) -> Result<DsArch> {
        self.validate()?;
        if input_dims.is_empty() {
            return Err(Error::invalid("model needs at least one modality"));
        }
        let shared = MlpSpec {
            input_dim: self.hidden_dim,
            layers: self.shared.clone(),
        };
        let mut head_layers = self.head_hidden.clone();
        head_layers.push(LayerSpec {
            width: output_dim,
            activation: Activation::Identity,
        });
        let arch = DsArch {
            encoders: input_dims
                .iter()
                .map(|&d| MlpSpec {
                    input_dim: d,
                    layers: self.encoder.clone(),
                })
                .collect(),
            head: MlpSpec {
                input_dim: shared.output_dim(),
                layers: head_layers,
            },
            shared,
            fusion: self.fusion,
        };
        arch.validate()?;
        Ok(arch)
    }
}

/// Fully resolved architecture of a [`DsModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DsArch {
    pub encoders: Vec<MlpSpec>,
    pub shared: MlpSpec,
    pub head: MlpSpec,
    pub fusion: Fusion,
}

impl DsArch {
    pub fn modalities(&self) -> usize {
        self.encoders.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.shared.input_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoders.is_empty() || self.encoders.len() > crate::cases::MAX_MODALITIES {
            return Err(Error::invalid(format!(
                "model needs 1..={} encoders, got {}",
                crate::cases::MAX_MODALITIES,
                self.encoders.len()
            )));
        }
        for (i, e) in self.encoders.iter().enumerate() {
            e.validate()?;
            if e.output_dim() != self.hidden_dim() {
                return Err(Error::shape(format!(
                    "encoder {i} outputs {} features, backbone expects {}",
                    e.output_dim(),
                    self.hidden_dim()
                )));
            }
        }
        self.shared.validate()?;
        self.head.validate()?;
        if self.head.input_dim != self.shared.output_dim() {
            return Err(Error::shape(format!(
                "head expects {} features, backbone outputs {}",
                self.head.input_dim,
                self.shared.output_dim()
            )));
        }
        Ok(())
    }
}

/// Per-sample targets of a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(t) => t.shape().first().copied().unwrap_or(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Inputs for one batch; `None` marks a modality with no data.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalBatch {
    pub inputs: Vec<Option<Tensor>>,
}

impl MultimodalBatch {
    pub fn new(inputs: Vec<Option<Tensor>>) -> Self {
        MultimodalBatch { inputs }
    }

    pub fn full(inputs: Vec<Tensor>) -> Self {
        MultimodalBatch {
            inputs: inputs.into_iter().map(Some).collect(),
        }
    }
}

/// Mean of the backbone outputs of the case's modalities.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedRepresentation {
    pub values: Tensor,
    pub case: ModalityCase,
}

/// Loss and gradients of one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseGradients {
    pub case: ModalityCase,
    pub loss: f64,
    pub shared: GradientVector,
    pub head: GradientVector,
    /// One per modality; zero for modalities outside the case.
    pub encoders: Vec<GradientVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsModel {
    arch: DsArch,
    encoders: Vec<ParamGroup>,
    shared: ParamGroup,
    head: ParamGroup,
}

struct Recorded {
    graph: Graph,
    prediction: Var,
    fused: Var,
}

impl DsModel {
    /// Fresh model with fan-in scaled uniform weights.
    pub fn init<R: Rng + ?Sized>(arch: DsArch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let encoders = arch
            .encoders
            .iter()
            .enumerate()
            .map(|(i, spec)| spec.init(encoder_group(i), rng))
            .collect::<Result<Vec<_>>>()?;
        let shared = arch.shared.init(SHARED_GROUP, rng)?;
        let head = arch.head.init(HEAD_GROUP, rng)?;
        Ok(DsModel {
            arch,
            encoders,
            shared,
            head,
        })
    }

    pub fn from_parts(arch: DsArch, encoders: Vec<ParamGroup>, shared: ParamGroup, head: ParamGroup) -> Result<Self> {
        arch.validate()?;
        if encoders.len() != arch.modalities() {
            return Err(Error::shape(format!(
                "{} encoder groups for {} modalities",
                encoders.len(),
                arch.modalities()
            )));
        }
        for (i, (spec, g)) in arch.encoders.iter().zip(&encoders).enumerate() {
            if g.id() != &encoder_group(i) {
                return Err(Error::invalid(format!("encoder {i} group is named {}", g.id())));
            }
            spec.check_params(g)?;
        }
        if shared.id().as_str() != SHARED_GROUP || head.id().as_str() != HEAD_GROUP {
            return Err(Error::invalid("shared/head groups must be named 'shared' and 'head'"));
        }
        arch.shared.check_params(&shared)?;
        arch.head.check_params(&head)?;
        Ok(DsModel {
            arch,
            encoders,
            shared,
            head,
        })
    }

    pub fn arch(&self) -> &DsArch {
        &self.arch
    }

    pub fn modalities(&self) -> usize {
        self.arch.modalities()
    }

    pub fn encoders(&self) -> &[ParamGroup] {
        &self.encoders
    }

    pub fn shared(&self) -> &ParamGroup {
        &self.shared
    }

    pub fn head(&self) -> &ParamGroup {
        &self.head
    }

    /// All groups: encoders in modality order, then shared, then head.
    pub fn groups(&self) -> impl Iterator<Item = &ParamGroup> {
        self.encoders.iter().chain([&self.shared, &self.head])
    }

    pub fn groups_mut(&mut self) -> impl Iterator<Item = &mut ParamGroup> {
        self.encoders.iter_mut().chain([&mut self.shared, &mut self.head])
    }

    pub fn param_count(&self) -> usize {
        self.groups().map(ParamGroup::param_count).sum()
    }

    fn record(&self, batch: &MultimodalBatch, case: &ModalityCase) -> Result<Recorded> {
        let m = self.modalities();
        if case.modalities() != m {
            return Err(Error::invalid(format!(
                "case {case} is over {} modalities, model has {m}",
                case.modalities()
            )));
        }
        let mut graph = Graph::new();
        let shared_leaves = graph.register(&self.shared)?;
        let head_leaves = graph.register(&self.head)?;
        let enc_leaves = self
            .encoders
            .iter()
            .map(|e| graph.register(e))
            .collect::<Result<Vec<_>>>()?;

        let mut rows = None;
        let mut hidden = Vec::with_capacity(case.len());
        for i in case.members() {
            let x = batch.inputs.get(i).and_then(Option::as_ref).ok_or_else(|| {
                Error::invalid(format!(
                    "case {case} needs modality {i}, which has no data in the batch"
                ))
            })?;
            let (n, _) = x.dims2()?;
            if *rows.get_or_insert(n) != n {
                return Err(Error::shape(format!(
                    "modality {i} has {n} rows, other modalities have {}",
                    rows.unwrap_or(0)
                )));
            }
            let xv = graph.constant(x.clone())?;
            let z = self.arch.encoders[i].record(&mut graph, &enc_leaves[i], xv)?;
            hidden.push(self.arch.shared.record(&mut graph, &shared_leaves, z)?);
        }
        let fused = match self.arch.fusion {
            Fusion::Mean => graph.mean(&hidden)?,
            Fusion::Sum => graph.sum(&hidden)?,
        };
        let prediction = self.arch.head.record(&mut graph, &head_leaves, fused)?;
        Ok(Recorded {
            graph,
            prediction,
            fused,
        })
    }

    /// Prediction and fused representation for the modalities in `case`.
    /// Inputs of modalities outside the case are ignored entirely.
    pub fn forward_case(&self, batch: &MultimodalBatch, case: &ModalityCase) -> Result<(Tensor, FusedRepresentation)> {
        let r = self.record(batch, case)?;
        Ok((
            r.graph.value(r.prediction).clone(),
            FusedRepresentation {
                values: r.graph.value(r.fused).clone(),
                case: *case,
            },
        ))
    }

    pub fn grad_case(
        &self,
        batch: &MultimodalBatch,
        targets: &Targets,
        case: &ModalityCase,
        loss: LossKind,
    ) -> Result<CaseGradients> {
        let mut r = self.record(batch, case)?;
        let l = match (loss, targets) {
            (LossKind::CrossEntropy, Targets::Classes(c)) => r.graph.cross_entropy(r.prediction, c)?,
            (LossKind::Mse, Targets::Values(t)) => r.graph.mse(r.prediction, t)?,
            (LossKind::Mse, Targets::Classes(_)) => return Err(Error::invalid("mse loss needs real-valued targets")),
            (LossKind::CrossEntropy, Targets::Values(_)) => {
                return Err(Error::invalid("cross_entropy loss needs class labels"))
            }
        };
        let loss_value = r.graph.value(l).data()[0];
        let mut grads: BTreeMap<GroupId, GradientVector> = r.graph.backward(l)?;
        let mut take = |id: &GroupId| grads.remove(id).expect("every model group is registered");
        Ok(CaseGradients {
            case: *case,
            loss: loss_value,
            shared: take(&GroupId::new(SHARED_GROUP)),
            head: take(&GroupId::new(HEAD_GROUP)),
            encoders: (0..self.modalities()).map(|i| take(&encoder_group(i))).collect(),
        })
    }

    pub fn group_mut(&mut self, id: &GroupId) -> Option<&mut ParamGroup> {
        self.groups_mut().find(|g| g.id() == id)
    }

    /// Binary serialization: magic, architecture as JSON, then every
    /// parameter as little-endian `f64` in group order.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let arch = serde_json::to_vec(&self.arch)?;
        let mut out = Vec::with_capacity(12 + arch.len() + 8 * self.param_count());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
        out.extend_from_slice(&arch);
        out.extend_from_slice(&(self.param_count() as u64).to_le_bytes());
        for g in self.groups() {
            for v in g.flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(MODEL_MAGIC.len())? != MODEL_MAGIC {
            return Err(Error::invalid("not a model file (bad magic)"));
        }
        let arch_len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
        let arch: DsArch = serde_json::from_slice(r.take(arch_len)?)?;
        arch.validate()?;
        let n = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")) as usize;
        // Placeholder weights; every value is overwritten below.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = DsModel::init(arch, &mut rng)?;
        if n != model.param_count() {
            return Err(Error::invalid(format!(
                "model file holds {n} parameters, architecture needs {}",
                model.param_count()
            )));
        }
        for g in model.groups_mut() {
            let vals = (0..g.param_count())
                .map(|_| r.take(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect::<Result<Vec<_>>>()?;
            g.assign_flat(&vals)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::invalid("trailing bytes after model parameters"));
        }
        Ok(model)
    }
}

const MODEL_MAGIC: &[u8; 8] = b"GMDMODL1";

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::invalid("model file is truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

/// Mean squared error over all entries.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(pred.clone())?;
    let l = g.mse(p, target)?;
    Ok(g.value(l).data()[0])
}

/// Mean cross-entropy of `[n, classes]` logits against labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let z = g.constant(logits.clone())?;
    let l = g.cross_entropy(z, labels)?;
    Ok(g.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn small_arch(m: usize, act: Activation) -> DsArch {
        let spec = ModelSpec {
            hidden_dim: 4,
            encoder: vec![LayerSpec {
                width: 4,
                activation: act,
            }],
            shared: vec![LayerSpec {
                width: 3,
                activation: act,
            }],
            head_hidden: vec![],
            fusion: Fusion::Mean,
        };
        spec.arch(&vec![3; m], 2).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn case(bits: &str) -> ModalityCase {
        ModalityCase::parse_bits(bits).unwrap()
    }

    #[test]
    fn singleton_fusion_equals_backbone_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = DsModel::init(small_arch(3, Activation::Tanh), &mut rng).unwrap();
        let x = random(&mut rng, &[5, 3]);
        let batch = MultimodalBatch::new(vec![None, Some(x.clone()), None]);
        let (_, fused) = model.forward_case(&batch, &case("010")).unwrap();
        let z = crate::autodiff::forward_mlp(&model.encoders()[1], &x, &model.arch().encoders[1]).unwrap();
        let h = crate::autodiff::forward_mlp(model.shared(), &z, &model.arch().shared).unwrap();
        assert_eq!(fused.values, h);
    }

    #[test]
    fn identical_hidden_states_fuse_to_themselves() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = DsModel::init(small_arch(3, Activation::Tanh), &mut rng).unwrap();
        let enc0 = model.encoders()[0].flatten();
        for g in model.groups_mut().take(3) {
            g.assign_flat(&enc0).unwrap();
        }
        let x = random(&mut rng, &[4, 3]);
        let batch = MultimodalBatch::full(vec![x.clone(), x.clone(), x.clone()]);
        let (_, full) = model.forward_case(&batch, &case("111")).unwrap();
        let (_, single) = model.forward_case(&batch, &case("100")).unwrap();
        for (a, b) in full.values.data().iter().zip(single.values.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn absent_inputs_do_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = DsModel::init(small_arch(3, Activation::Relu), &mut rng).unwrap();
        let xs: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[6, 3])).collect();
        let targets = Targets::Classes(vec![0, 1, 1, 0, 1, 0]);
        let c = case("101");
        let a = MultimodalBatch::full(xs.clone());
        let mut perturbed = xs.clone();
        perturbed[1] = random(&mut rng, &[6, 3]);
        let b = MultimodalBatch::full(perturbed);
        let missing = MultimodalBatch::new(vec![Some(xs[0].clone()), None, Some(xs[2].clone())]);
        let ga = model.grad_case(&a, &targets, &c, LossKind::CrossEntropy).unwrap();
        let gb = model.grad_case(&b, &targets, &c, LossKind::CrossEntropy).unwrap();
        let gm = model.grad_case(&missing, &targets, &c, LossKind::CrossEntropy).unwrap();
        assert_eq!(ga, gb);
        assert_eq!(ga, gm);
        assert!(ga.encoders[1].values().iter().all(|&v| v == 0.0));
        assert!(ga.encoders[0].norm() > 0.0);
    }

    #[test]
    fn missing_data_for_a_present_modality_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = DsModel::init(small_arch(2, Activation::Relu), &mut rng).unwrap();
        let batch = MultimodalBatch::new(vec![Some(random(&mut rng, &[2, 3])), None]);
        let err = model.forward_case(&batch, &case("11")).unwrap_err();
        assert!(err.to_string().contains("modality 1"), "{err}");
    }

    #[test]
    fn mean_fusion_halves_encoder_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = DsModel::init(small_arch(2, Activation::Tanh), &mut rng).unwrap();
        let enc0 = model.encoders()[0].flatten();
        model.group_mut(&encoder_group(1)).unwrap().assign_flat(&enc0).unwrap();
        let x = random(&mut rng, &[5, 3]);
        let batch = MultimodalBatch::full(vec![x.clone(), x]);
        let t = Targets::Classes(vec![0, 1, 0, 0, 1]);
        let full = model
            .grad_case(&batch, &t, &case("11"), LossKind::CrossEntropy)
            .unwrap();
        let single = model
            .grad_case(&batch, &t, &case("10"), LossKind::CrossEntropy)
            .unwrap();
        for i in 0..2 {
            for (a, b) in full.encoders[i].values().iter().zip(single.encoders[0].values()) {
                assert!((a - 0.5 * b).abs() < 1e-15, "{a} vs {b}/2");
            }
        }
        assert_eq!(full.loss, single.loss);
    }

    #[test]
    fn fusion_is_symmetric_in_modality_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = DsModel::init(small_arch(2, Activation::Relu), &mut rng).unwrap();
        let (x0, x1) = (random(&mut rng, &[3, 3]), random(&mut rng, &[3, 3]));
        // Swap both the data and the encoders.
        let mut swapped = model.clone();
        let (e0, e1) = (model.encoders()[0].flatten(), model.encoders()[1].flatten());
        swapped.group_mut(&encoder_group(0)).unwrap().assign_flat(&e1).unwrap();
        swapped.group_mut(&encoder_group(1)).unwrap().assign_flat(&e0).unwrap();
        let (_, a) = model
            .forward_case(&MultimodalBatch::full(vec![x0.clone(), x1.clone()]), &case("11"))
            .unwrap();
        let (_, b) = swapped
            .forward_case(&MultimodalBatch::full(vec![x1, x0]), &case("11"))
            .unwrap();
        for (p, q) in a.values.data().iter().zip(b.values.data()) {
            assert!((p - q).abs() < 1e-15);
        }
    }

    #[test]
    fn param_count_is_per_modality_plus_shared() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let arch = small_arch(4, Activation::Relu);
        let enc = arch.encoders[0].param_count();
        let model = DsModel::init(arch.clone(), &mut rng).unwrap();
        assert_eq!(
            model.param_count(),
            4 * enc + arch.shared.param_count() + arch.head.param_count()
        );
    }

    #[test]
    fn loss_functions() {
        let v = Tensor::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        assert_eq!(mse(&v, &v).unwrap(), 0.0);
        let uniform = Tensor::zeros(&[3, 5]);
        assert!((cross_entropy(&uniform, &[0, 4, 2]).unwrap() - 5f64.ln()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = random(&mut rng, &[4, 3]);
        let labels = [2, 0, 1, 1];
        let expect: f64 = (0..4)
            .map(|i| {
                let row = z.row(i);
                let denom: f64 = row.iter().map(|v| v.exp()).sum();
                -(row[labels[i]].exp() / denom).ln()
            })
            .sum::<f64>()
            / 4.0;
        assert!((cross_entropy(&z, &labels).unwrap() - expect).abs() < 1e-14);
        let t = random(&mut rng, &[4, 3]);
        let expect: f64 = z.data().iter().zip(t.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 12.0;
        assert!((mse(&z, &t).unwrap() - expect).abs() < 1e-15);
        assert!(mse(&z, &Tensor::zeros(&[2, 3])).is_err());
        assert!(cross_entropy(&z, &[0, 1, 2, 3]).is_err());
    }

    #[test]
    fn model_bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = DsModel::init(small_arch(3, Activation::Relu), &mut rng).unwrap();
        let bytes = model.to_bytes().unwrap();
        assert_eq!(DsModel::from_bytes(&bytes).unwrap(), model);
        assert!(DsModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut spec = ModelSpec::default();
        spec.encoder[0].width = 7;
        assert!(spec.arch(&[3, 3], 2).is_err());
        assert!(ModelSpec::default().arch(&[], 2).is_err());
    }
}
