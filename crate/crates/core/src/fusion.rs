//! Rotary linear cross-attention from point tokens to template tokens,
//! discrepancy-gated modulation and the offset/mask prediction head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, Linear, ParamStore, Scalar, Tape, Tensor, Var};
use crate::encoder::FEATURE_DIM;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub const ATTENTION_EPS: f64 = 1e-6;
const GATE_HIDDEN: usize = 16;
const HEAD_HIDDEN: usize = 64;
/// Offset (3) plus mask logit (1).
pub const HEAD_OUTPUTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub dim: usize,
    pub heads: usize,
    pub theta: f64,
}

impl Default for RopeConfig {
    fn default() -> Self {
        Self {
            dim: FEATURE_DIM,
            heads: 4,
            theta: 10000.0,
        }
    }
}

impl RopeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim % 2 != 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "rope dim {} with {} heads",
                self.dim, self.heads
            )));
        }
        if (self.dim / self.heads) % 2 != 0 {
            return Err(Error::InvalidConfig("head width must be even".into()));
        }
        Ok(())
    }

    pub fn pairs(&self) -> usize {
        self.dim / 2
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// ω_k = Θ^(−2k/d).
    pub fn frequency(&self, pair: usize) -> f64 {
        self.theta.powf(-2.0 * pair as f64 / self.dim as f64)
    }

    /// Spatial axis driving rotation pair `pair` (round robin x, y, z).
    pub fn axis(&self, pair: usize) -> usize {
        pair % 3
    }

    /// Rotation angle of every pair for every relative position (N×d/2).
    pub fn angles(&self, relpos: &[Vec3]) -> Tensor<f64> {
        let pairs = self.pairs();
        let mut data = Vec::with_capacity(relpos.len() * pairs);
        for p in relpos {
            for k in 0..pairs {
                data.push(p[self.axis(k)] * self.frequency(k));
            }
        }
        Tensor::new(relpos.len(), pairs, data).expect("sized")
    }
}

/// Rotate a single d-vector by the angles of `relpos`.
pub fn rope_rotate(vec: &[f64], relpos: &Vec3, config: &RopeConfig) -> Vec<f64> {
    let mut out = vec.to_vec();
    for k in 0..config.pairs() {
        let angle = relpos[config.axis(k)] * config.frequency(k);
        let (s, c) = angle.sin_cos();
        let (x0, x1) = (vec[2 * k], vec[2 * k + 1]);
        out[2 * k] = c * x0 - s * x1;
        out[2 * k + 1] = s * x0 + c * x1;
    }
    out
}

/// Δf = 1 − t·p.
pub fn patch_discrepancy(template: &[f64], query: &[f64]) -> f64 {
    1.0 - template.iter().zip(query).map(|(a, b)| a * b).sum::<f64>()
}

/// Kernelized multi-head cross-attention with rotary positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub config: RopeConfig,
}

impl CrossAttention {
    pub fn new(store: &mut ParamStore, config: RopeConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = config.dim;
        Self {
            query: Linear::new(store, "attention.query", FEATURE_DIM, d, rng),
            key: Linear::new(store, "attention.key", FEATURE_DIM, d, rng),
            value: Linear::new(store, "attention.value", FEATURE_DIM, d, rng),
            output: Linear::new(store, "attention.output", d, FEATURE_DIM, rng),
            config,
        }
    }

    /// Attended point tokens ẑ (N×32) from point features (N×32) and
    /// template tokens (M×32) with per-row rotation angles.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        points: Var,
        templates: Var,
        query_angles: &Tensor<f64>,
        key_angles: &Tensor<f64>,
    ) -> Result<Var> {
        if tape.shape(templates).0 == 0 {
            return Err(Error::EmptyTemplates);
        }
        // key sums run in a canonical row order so the output does not
        // depend on how templates were listed
        let order = canonical_order(tape.value(templates), key_angles);
        let templates = tape.gather_rows(templates, &order)?;
        let key_angles = gather(key_angles, &order);
        let key_angles = &key_angles;
        let q = self.query.forward(tape, bound, points)?;
        let k = self.key.forward(tape, bound, templates)?;
        let v = self.value.forward(tape, bound, templates)?;
        let phi_q = tape.elu_plus_one(q)?;
        let phi_k = tape.elu_plus_one(k)?;
        let rot_q = tape.rope(phi_q, query_angles)?;
        let rot_k = tape.rope(phi_k, key_angles)?;
        let hd = self.config.head_dim();
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let start = h * hd;
            let qh = tape.slice_cols(rot_q, start, hd)?;
            let kh = tape.slice_cols(rot_k, start, hd)?;
            let vh = tape.slice_cols(v, start, hd)?;
            let kv = tape.matmul(kh, true, vh, false)?;
            let num = tape.matmul(qh, false, kv, false)?;
            let plain_q = tape.slice_cols(phi_q, start, hd)?;
            let plain_k = tape.slice_cols(phi_k, start, hd)?;
            let k_sum = tape.sum_rows(plain_k)?;
            let den = tape.matmul(plain_q, false, k_sum, true)?;
            let den = tape.affine(den, 1.0, ATTENTION_EPS)?;
            heads.push(tape.div_rows(num, den)?);
        }
        let joined = tape.concat_cols(&heads)?;
        self.output.forward(tape, bound, joined)
    }
}

fn canonical_order<T: Scalar>(templates: &Tensor<T>, angles: &Tensor<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..templates.rows()).collect();
    order.sort_by(|&a, &b| {
        let feature = templates
            .row(a)
            .iter()
            .zip(templates.row(b))
            .map(|(x, y)| x.as_f64().total_cmp(&y.as_f64()))
            .find(|o| o.is_ne());
        let angle = || {
            angles
                .row(a)
                .iter()
                .zip(angles.row(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
        };
        feature
            .or_else(angle)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order
}

fn gather(t: &Tensor<f64>, rows: &[usize]) -> Tensor<f64> {
    let data = rows.iter().flat_map(|&r| t.row(r).iter().copied()).collect();
    Tensor::new(rows.len(), t.cols(), data).expect("sized")
}

/// Gate ρ and affine modulation (γ, β) predicted from Δf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatedModulation {
    pub gate: [Linear; 2],
    pub modulation: [Linear; 2],
}

impl GatedModulation {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let gate = [
            Linear::new(store, "gate.0", 1, GATE_HIDDEN, rng),
            Linear::new(store, "gate.1", GATE_HIDDEN, FEATURE_DIM, rng),
        ];
        let modulation = [
            Linear::new(store, "modulation.0", 1, GATE_HIDDEN, rng),
            Linear::new(store, "modulation.1", GATE_HIDDEN, 2 * FEATURE_DIM, rng),
        ];
        gate[1].center_for_unit_offset(store);
        modulation[1].center_for_unit_offset(store);
        // at Δf = 0 the hidden layer is all ones, so γ = 1 and β = 0 exactly
        let bias = store.tensor_mut(modulation[1].bias);
        for c in 0..FEATURE_DIM {
            let b = bias.get(0, c);
            bias.set(0, c, b + 1.0);
        }
        Self { gate, modulation }
    }

    /// z' = ρ ⊙ (γ ⊙ ẑ + β), with Δf given per point (N×1).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        attended: Var,
        discrepancy: Var,
    ) -> Result<Var> {
        let g = self.gate[0].forward(tape, bound, discrepancy)?;
        let g = tape.elu_plus_one(g)?;
        let g = self.gate[1].forward(tape, bound, g)?;
        let rho = tape.sigmoid(g)?;
        let m = self.modulation[0].forward(tape, bound, discrepancy)?;
        let m = tape.elu_plus_one(m)?;
        let m = self.modulation[1].forward(tape, bound, m)?;
        let gamma = tape.slice_cols(m, 0, FEATURE_DIM)?;
        let beta = tape.slice_cols(m, FEATURE_DIM, FEATURE_DIM)?;
        let scaled = tape.mul(gamma, attended)?;
        let shifted = tape.add(scaled, beta)?;
        tape.mul(rho, shifted)
    }
}

/// Residual MLP over [z', ẑ] followed by the 32→4 projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionHead {
    pub inner: [Linear; 2],
    pub output: Linear,
}

impl PredictionHead {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let inner = [
            Linear::new(store, "head.0", 2 * FEATURE_DIM, HEAD_HIDDEN, rng),
            Linear::new(store, "head.1", HEAD_HIDDEN, FEATURE_DIM, rng),
        ];
        inner[1].center_for_unit_offset(store);
        Self {
            inner,
            output: Linear::new(store, "head.output", FEATURE_DIM, HEAD_OUTPUTS, rng),
        }
    }

    /// Residual features h = MLP([z', ẑ]) + ẑ (N×32).
    pub fn features<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        modulated: Var,
        attended: Var,
    ) -> Result<Var> {
        let x = tape.concat_cols(&[modulated, attended])?;
        let h = self.inner[0].forward(tape, bound, x)?;
        let h = tape.elu_plus_one(h)?;
        let h = self.inner[1].forward(tape, bound, h)?;
        tape.add(h, attended)
    }

    /// Offsets and mask logits (N×4).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bound: &BoundParams,
        modulated: Var,
        attended: Var,
    ) -> Result<Var> {
        let h = self.features(tape, bound, modulated, attended)?;
        self.output.forward(tape, bound, h)
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;
    use crate::autodiff::grad_check;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    fn random_vec3(rng: &mut ChaCha8Rng) -> Vec3 {
        Vec3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    #[test]
    fn axis_assignment_is_six_five_five() {
        let c = RopeConfig::default();
        let mut counts = [0; 3];
        for k in 0..c.pairs() {
            counts[c.axis(k)] += 1;
        }
        assert_eq!(counts, [6, 5, 5]);
        assert_eq!(c.frequency(0), 1.0);
        assert_eq!(c.head_dim(), 8);
    }

    #[test]
    fn rope_zero_offset_is_identity() {
        let c = RopeConfig::default();
        let v: Vec<f64> = (0..32).map(|i| i as f64 - 7.5).collect();
        assert_eq!(rope_rotate(&v, &Vec3::zeros(), &c), v);
    }

    #[test]
    fn rope_quarter_turn_on_first_pair() {
        let c = RopeConfig::default();
        let mut v = vec![0.0; 32];
        v[0] = 1.0;
        let out = rope_rotate(&v, &Vec3::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0), &c);
        assert!(out[0].abs() < 1e-15);
        assert!((out[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rope_preserves_norm_and_relative_angle() {
        let c = RopeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let u: Vec<f64> = (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..32).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p = random_vec3(&mut rng) * 10.0;
            let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((norm(&rope_rotate(&u, &p, &c)) - norm(&u)).abs() < 1e-6);
            // single-axis offsets: ⟨R(a)u, R(b)v⟩ = ⟨u, R(b−a)v⟩
            let (a, b) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let ax = rng.gen_range(0..3);
            let (mut pa, mut pb, mut pd) = (Vec3::zeros(), Vec3::zeros(), Vec3::zeros());
            pa[ax] = a;
            pb[ax] = b;
            pd[ax] = b - a;
            let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
            let lhs = dot(&rope_rotate(&u, &pa, &c), &rope_rotate(&v, &pb, &c));
            let rhs = dot(&u, &rope_rotate(&v, &pd, &c));
            assert!((lhs - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_rope_matches_reference() {
        let c = RopeConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&mut rng, 3, 32);
        let pos: Vec<Vec3> = (0..3).map(|_| random_vec3(&mut rng)).collect();
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone()).unwrap();
        let y = tape.rope(xv, &c.angles(&pos)).unwrap();
        for r in 0..3 {
            let expected = rope_rotate(x.row(r), &pos[r], &c);
            for (a, b) in tape.value(y).row(r).iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn discrepancy_range() {
        let e0 = [1.0, 0.0];
        assert_eq!(patch_discrepancy(&e0, &e0), 0.0);
        assert_eq!(patch_discrepancy(&e0, &[0.0, 1.0]), 1.0);
        assert_eq!(patch_discrepancy(&e0, &[-1.0, 0.0]), 2.0);
    }

    fn unit_rows(mut t: Tensor<f64>) -> Tensor<f64> {
        for r in 0..t.rows() {
            let n = t.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            t.row_mut(r).iter_mut().for_each(|v| *v /= n);
        }
        t
    }

    struct Attn {
        store: ParamStore,
        attn: CrossAttention,
        points: Tensor<f64>,
        templates: Tensor<f64>,
        qp: Vec<Vec3>,
        kp: Vec<Vec3>,
        qa: Tensor<f64>,
        ka: Tensor<f64>,
    }

    fn attention_fixture(seed: u64, m: usize) -> Attn {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let config = RopeConfig::default();
        let attn = CrossAttention::new(&mut store, config, &mut rng);
        let points = unit_rows(random(&mut rng, 6, 32));
        let templates = unit_rows(random(&mut rng, m, 32));
        let qp: Vec<Vec3> = (0..6).map(|_| random_vec3(&mut rng)).collect();
        let kp: Vec<Vec3> = (0..m).map(|_| random_vec3(&mut rng)).collect();
        Attn {
            store,
            attn,
            points,
            templates,
            qa: config.angles(&qp),
            ka: config.angles(&kp),
            qp,
            kp,
        }
    }

    fn run_attention(f: &Attn, templates: &Tensor<f64>, ka: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::<f64>::new();
        let b = f.store.bind(&mut tape).unwrap();
        let p = tape.constant(f.points.clone()).unwrap();
        let t = tape.constant(templates.clone()).unwrap();
        let out = f.attn.forward(&mut tape, &b, p, t, &f.qa, ka).unwrap();
        tape.value(out).clone()
    }

    fn permute_rows(t: &Tensor<f64>, order: &[usize]) -> Tensor<f64> {
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| t.row(i).to_vec()).collect();
        Tensor::from_rows(&rows).unwrap()
    }

    #[test]
    fn attention_key_permutation_and_duplication() {
        let f = attention_fixture(1, 64);
        let base = run_attention(&f, &f.templates, &f.ka);
        let mut order: Vec<usize> = (0..64).collect();
        order.reverse();
        order.swap(3, 40);
        let permuted = run_attention(
            &f,
            &permute_rows(&f.templates, &order),
            &permute_rows(&f.ka, &order),
        );
        assert_eq!(base, permuted);
        let twice: Vec<usize> = (0..128).map(|i| i % 64).collect();
        let doubled = run_attention(
            &f,
            &permute_rows(&f.templates, &twice),
            &permute_rows(&f.ka, &twice),
        );
        for (a, b) in base.data().iter().zip(doubled.data()) {
            assert!((a - b).abs() < 1e-9, "{a} {b}");
        }
    }

    #[test]
    fn single_template_gives_scaled_value() {
        let f = attention_fixture(2, 1);
        let mut tape = Tape::<f64>::new();
        let b = f.store.bind(&mut tape).unwrap();
        let t = tape.constant(f.templates.clone()).unwrap();
        let v = f.attn.value.forward(&mut tape, &b, t).unwrap();
        let v = tape.value(v).clone();
        let out = run_attention(&f, &f.templates, &f.ka);
        let w = f.store.tensor(f.attn.output.weight);
        let bias = f.store.tensor(f.attn.output.bias);
        // one key: each head returns v scaled by a rotated/unrotated kernel ratio
        let mut tape = Tape::<f64>::new();
        let bd = f.store.bind(&mut tape).unwrap();
        let p = tape.constant(f.points.clone()).unwrap();
        let t = tape.constant(f.templates.clone()).unwrap();
        let q = f.attn.query.forward(&mut tape, &bd, p).unwrap();
        let k = f.attn.key.forward(&mut tape, &bd, t).unwrap();
        let (q, k) = (tape.value(q).clone(), tape.value(k).clone());
        let c = RopeConfig::default();
        let elu = |x: f64| if x >= 0.0 { x + 1.0 } else { x.exp() };
        for i in 0..6 {
            let pq: Vec<f64> = q.row(i).iter().map(|&x| elu(x)).collect();
            let pk: Vec<f64> = k.row(0).iter().map(|&x| elu(x)).collect();
            let rq = rope_rotate(&pq, &f.qp[i], &c);
            let rk = rope_rotate(&pk, &f.kp[0], &c);
            let mut pre = vec![0.0; 32];
            for h in 0..4 {
                let s = h * 8..h * 8 + 8;
                let num: f64 = rq[s.clone()].iter().zip(&rk[s.clone()]).map(|(a, b)| a * b).sum();
                let den: f64 =
                    pq[s.clone()].iter().zip(&pk[s.clone()]).map(|(a, b)| a * b).sum::<f64>() + 1e-6;
                for j in s {
                    pre[j] = num / den * v.get(0, j);
                }
            }
            for col in 0..32 {
                let expected: f64 =
                    (0..32).map(|j| pre[j] * w.get(j, col)).sum::<f64>() + bias.get(0, col);
                assert!((out.get(i, col) - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn attention_rejects_empty_templates() {
        let f = attention_fixture(3, 2);
        let mut tape = Tape::<f64>::new();
        let b = f.store.bind(&mut tape).unwrap();
        let p = tape.constant(f.points.clone()).unwrap();
        let t = tape.constant(Tensor::zeros(0, 32)).unwrap();
        let none = Tensor::zeros(0, 16);
        assert!(matches!(
            f.attn.forward(&mut tape, &b, p, t, &f.qa, &none),
            Err(Error::EmptyTemplates)
        ));
    }

    fn modulation_fixture() -> (ParamStore, GatedModulation, PredictionHead) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let m = GatedModulation::new(&mut store, &mut rng);
        let h = PredictionHead::new(&mut store, &mut rng);
        (store, m, h)
    }

    fn modulate(store: &ParamStore, m: &GatedModulation, z: &Tensor<f64>, df: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::<f64>::new();
        let b = store.bind(&mut tape).unwrap();
        let zv = tape.constant(z.clone()).unwrap();
        let dv = tape.constant(df.clone()).unwrap();
        let out = m.forward(&mut tape, &b, zv, dv).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn neutral_and_closed_gates() {
        let (mut store, m, _) = modulation_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = random(&mut rng, 4, 32);
        let df = Tensor::from_rows(&[[0.0], [0.5], [1.0], [2.0]]).unwrap();
        // γ = 1, β = 0, ρ → 1
        store.tensor_mut(m.modulation[1].weight).data_mut().fill(0.0);
        let bias = store.tensor_mut(m.modulation[1].bias);
        for c in 0..2 * FEATURE_DIM {
            bias.set(0, c, if c < FEATURE_DIM { 1.0 } else { 0.0 });
        }
        store.tensor_mut(m.gate[1].weight).data_mut().fill(0.0);
        store.tensor_mut(m.gate[1].bias).data_mut().fill(40.0);
        let out = modulate(&store, &m, &z, &df);
        for (a, b) in out.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        store.tensor_mut(m.gate[1].bias).data_mut().fill(-40.0);
        let out = modulate(&store, &m, &z, &df);
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn discrepancy_path_gradient() {
        let (store, m, _) = modulation_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = random(&mut rng, 3, 32);
        let lo = modulate(&store, &m, &z, &Tensor::from_rows(&[[0.0]; 3]).unwrap());
        let hi = modulate(&store, &m, &z, &Tensor::from_rows(&[[2.0]; 3]).unwrap());
        assert_ne!(lo, hi);
        // treat Δf itself as the parameter; Δf = 0 would sit on the elu kink
        let mut p = store.clone();
        let idx = p.insert("delta_f", Tensor::from_rows(&[[0.1], [2.0], [0.7]]).unwrap());
        let weights = random(&mut rng, 3, 32);
        let report = grad_check(&p, 1e-5, |tape, b| {
            let zv = tape.constant(z.clone())?;
            let out = m.forward(tape, b, zv, b.var(idx))?;
            let w = tape.constant(weights.clone())?;
            let prod = tape.mul(out, w)?;
            tape.sum_all(prod)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn head_degenerate_and_residual() {
        let (mut store, _, h) = modulation_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zp = random(&mut rng, 5, 32);
        let zh = random(&mut rng, 5, 32);
        let run = |store: &ParamStore, features: bool| {
            let mut tape = Tape::<f64>::new();
            let b = store.bind(&mut tape).unwrap();
            let a = tape.constant(zp.clone()).unwrap();
            let c = tape.constant(zh.clone()).unwrap();
            let out = if features {
                h.features(&mut tape, &b, a, c).unwrap()
            } else {
                h.forward(&mut tape, &b, a, c).unwrap()
            };
            tape.value(out).clone()
        };
        store.tensor_mut(h.inner[1].weight).data_mut().fill(0.0);
        store.tensor_mut(h.inner[1].bias).data_mut().fill(0.0);
        assert_eq!(run(&store, true), zh);
        store.tensor_mut(h.output.weight).data_mut().fill(0.0);
        store
            .tensor_mut(h.output.bias)
            .data_mut()
            .copy_from_slice(&[0.1, -0.2, 0.3, 0.0]);
        let out = run(&store, false);
        for r in 0..5 {
            assert_eq!(&out.row(r)[..3], &[0.1, -0.2, 0.3]);
        }
    }

    #[test]
    fn head_gradient_check() {
        let (store, _, h) = modulation_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let zp = random(&mut rng, 4, 32);
        let zh = random(&mut rng, 4, 32);
        let weights = random(&mut rng, 4, 4);
        let report = grad_check(&store, 1e-5, |tape, b| {
            let a = tape.constant(zp.clone())?;
            let c = tape.constant(zh.clone())?;
            let out = h.forward(tape, b, a, c)?;
            let w = tape.constant(weights.clone())?;
            let prod = tape.mul(out, w)?;
            tape.sum_all(prod)
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }
}
