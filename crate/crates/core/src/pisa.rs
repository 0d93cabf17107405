//! Permutation-invariant set autoencoder.
//!
//! Encodes a variable-cardinality set of observation vectors into one
//! fixed-size latent vector and decodes it back. Permutation invariance is
//! structural, not learned: elements are sorted into a canonical
//! (lexicographic) order, the element at sorted rank i is paired with a
//! fixed sinusoidal key for rank i, and the encoder sums key/value products
//! over ranks. Any input ordering therefore produces a bit-identical latent.
//!
//!   encode:  z = sum_i psi_key(k_i) * psi_val(x_i) + card_embed(n)
//!   decode:  n_hat = argmax card_logits(z);  x_hat_i = phi_dec(phi_key(k_i) * z)
//!
//! (`*` is elementwise.) Training minimizes reconstruction MSE over elements
//! (with the true cardinality teacher-forced) plus cross-entropy on the
//! cardinality head. The loss is self-supervised; no reward or task signal
//! enters anywhere.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{push_mlp, read_mlp, Checkpoint};
use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, FlatReader, Mlp, MlpGrad, MlpTape};
use crate::util::{all_finite, derive_seed};

/// A multiset of same-dimension observation vectors. Order of insertion is
/// irrelevant to every consumer in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    dim: usize,
    elements: Vec<Vec<f64>>,
}

impl ObservationSet {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            elements: Vec::new(),
        }
    }

    pub fn from_elements(dim: usize, elements: Vec<Vec<f64>>) -> Result<Self> {
        let mut set = Self::empty(dim);
        for e in elements {
            set.push(e)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, element: Vec<f64>) -> Result<()> {
        if element.len() != self.dim {
            return Err(Error::Shape(format!(
                "set holds {}-dim elements, got {}",
                self.dim,
                element.len()
            )));
        }
        if !all_finite(&element) {
            return Err(Error::Numerical(
                "set element contains a non-finite value".to_string(),
            ));
        }
        self.elements.push(element);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &[Vec<f64>] {
        &self.elements
    }
}

/// Fixed-size latent representation of an observation set.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub values: Vec<f64>,
}

impl LatentState {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Indices of a set's elements in canonical order: lexicographic over the
/// element vectors (total order over f64, so ties and signed zeros are
/// deterministic). Duplicates keep their insertion order.
pub fn canonical_order(set: &ObservationSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&set.elements()[a], &set.elements()[b]);
        for (x, y) in ea.iter().zip(eb) {
            match x.total_cmp(y) {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
    order
}

/// Sinusoidal positional encoding of a canonical rank.
///
/// Component 2j holds sin(rank / 10000^(2j/d)), component 2j+1 the matching
/// cosine. Distinct ranks map to distinct keys for every rank this crate
/// ever uses, and the encoding needs no learned parameters.
pub fn positional_key(rank: usize, d_key: usize) -> Vec<f64> {
    let mut key = Vec::with_capacity(d_key);
    for j in 0..d_key {
        let pair = (j / 2) as f64;
        let angle = rank as f64 / 10000f64.powf(2.0 * pair / d_key as f64);
        key.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
    }
    key
}

/// Architecture hyperparameters for the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PisaConfig {
    /// Dimension of each set element.
    pub d_obs: usize,
    /// Latent dimension.
    pub d_z: usize,
    /// Positional key dimension.
    pub d_key: usize,
    /// Hidden width of all five MLPs.
    pub hidden: usize,
    /// Largest representable cardinality; the cardinality head has
    /// n_max + 1 classes (0 through n_max).
    pub n_max: usize,
}

impl PisaConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_obs", self.d_obs),
            ("d_z", self.d_z),
            ("d_key", self.d_key),
            ("hidden", self.hidden),
            ("n_max", self.n_max),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("autoencoder {name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// All learnable parameters of the set autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SetAutoencoderParams {
    cfg: PisaConfig,
    psi_key: Mlp,
    psi_val: Mlp,
    /// Cardinality embedding, row-major (n_max + 1) x d_z; row n is added
    /// to the sum when encoding a set of cardinality n.
    card_embed: Vec<f64>,
    card_head: Mlp,
    phi_key: Mlp,
    phi_dec: Mlp,
}

/// Gradients for every parameter, same shapes as `SetAutoencoderParams`.
#[derive(Debug, Clone)]
pub struct PisaGrad {
    pub psi_key: MlpGrad,
    pub psi_val: MlpGrad,
    pub card_embed: Vec<f64>,
    pub card_head: MlpGrad,
    pub phi_key: MlpGrad,
    pub phi_dec: MlpGrad,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub element: f64,
    pub cardinality: f64,
}

/// Three-layer MLP whose output layer uses the same fan-in uniform init as
/// the hidden layers. The autoencoder's networks feed elementwise products,
/// so near-zero heads would stall learning (both product factors start at
/// zero and neither receives gradient).
fn uniform_net(in_dim: usize, hidden: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Mlp {
    use crate::nn::DenseParams;
    let layers = vec![
        DenseParams::init_uniform(in_dim, hidden, rng),
        DenseParams::init_uniform(hidden, hidden, rng),
        DenseParams::init_uniform(hidden, out_dim, rng),
    ];
    Mlp::new(
        layers,
        vec![Activation::Tanh, Activation::Tanh, Activation::Identity],
    )
    .expect("consistent construction")
}

impl SetAutoencoderParams {
    pub fn new(cfg: PisaConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi_key = uniform_net(cfg.d_key, cfg.hidden, cfg.d_z, &mut rng);
        let psi_val = uniform_net(cfg.d_obs, cfg.hidden, cfg.d_z, &mut rng);
        let card_embed = (0..(cfg.n_max + 1) * cfg.d_z)
            .map(|_| rng.gen_range(-0.1..0.1))
            .collect();
        let card_head = uniform_net(cfg.d_z, cfg.hidden, cfg.n_max + 1, &mut rng);
        let phi_key = uniform_net(cfg.d_key, cfg.hidden, cfg.d_z, &mut rng);
        let phi_dec = uniform_net(cfg.d_z, cfg.hidden, cfg.d_obs, &mut rng);
        Ok(Self {
            cfg,
            psi_key,
            psi_val,
            card_embed,
            card_head,
            phi_key,
            phi_dec,
        })
    }

    pub fn config(&self) -> &PisaConfig {
        &self.cfg
    }

    pub fn latent_dim(&self) -> usize {
        self.cfg.d_z
    }

    pub fn obs_dim(&self) -> usize {
        self.cfg.d_obs
    }

    pub fn max_cardinality(&self) -> usize {
        self.cfg.n_max
    }

    fn check_set(&self, set: &ObservationSet) -> Result<()> {
        if set.dim() != self.cfg.d_obs {
            return Err(Error::Shape(format!(
                "autoencoder expects {}-dim elements, set holds {}-dim",
                self.cfg.d_obs,
                set.dim()
            )));
        }
        if set.len() > self.cfg.n_max {
            return Err(Error::Capacity {
                got: set.len(),
                max: self.cfg.n_max,
            });
        }
        Ok(())
    }

    fn card_embed_row(&self, n: usize) -> &[f64] {
        &self.card_embed[n * self.cfg.d_z..(n + 1) * self.cfg.d_z]
    }

    /// z = sum over canonical ranks of psi_key(k_i) * psi_val(x_i), plus the
    /// cardinality embedding row. Iteration follows canonical rank order, so
    /// permuted inputs give bit-identical latents.
    pub fn encode(&self, set: &ObservationSet) -> Result<LatentState> {
        self.check_set(set)?;
        let order = canonical_order(set);
        let mut z = self.card_embed_row(set.len()).to_vec();
        for (rank, &ei) in order.iter().enumerate() {
            let key = positional_key(rank, self.cfg.d_key);
            let a = self.psi_key.forward(&key)?;
            let b = self.psi_val.forward(&set.elements()[ei])?;
            for ((zv, av), bv) in z.iter_mut().zip(&a).zip(&b) {
                *zv += av * bv;
            }
        }
        Ok(LatentState { values: z })
    }

    pub fn cardinality_logits(&self, z: &LatentState) -> Result<Vec<f64>> {
        self.card_head.forward(&z.values)
    }

    /// Reconstructs a set of the given cardinality from a latent.
    pub fn decode_with_cardinality(&self, z: &LatentState, n: usize) -> Result<ObservationSet> {
        if z.dim() != self.cfg.d_z {
            return Err(Error::Shape(format!(
                "latent dim {} but autoencoder uses {}",
                z.dim(),
                self.cfg.d_z
            )));
        }
        if n > self.cfg.n_max {
            return Err(Error::Capacity {
                got: n,
                max: self.cfg.n_max,
            });
        }
        let mut set = ObservationSet::empty(self.cfg.d_obs);
        for rank in 0..n {
            let key = positional_key(rank, self.cfg.d_key);
            let q = self.phi_key.forward(&key)?;
            let e: Vec<f64> = q.iter().zip(&z.values).map(|(a, b)| a * b).collect();
            set.push(self.phi_dec.forward(&e)?)?;
        }
        Ok(set)
    }

    /// Full decode: cardinality from the argmax of the cardinality head,
    /// then that many elements.
    pub fn decode(&self, z: &LatentState) -> Result<ObservationSet> {
        let logits = self.cardinality_logits(z)?;
        let n_hat = argmax(&logits);
        self.decode_with_cardinality(z, n_hat)
    }

    /// Self-supervised reconstruction loss with the true cardinality
    /// teacher-forced into the decoder:
    ///   element term:  mean squared residual over n * d_obs entries
    ///                  (elements paired by canonical rank; zero when n = 0)
    ///   cardinality term: cross-entropy of the cardinality head at n
    pub fn reconstruction_loss(&self, set: &ObservationSet) -> Result<LossBreakdown> {
        Ok(self.reconstruction_loss_with_latent(set)?.0)
    }

    pub fn reconstruction_loss_with_latent(
        &self,
        set: &ObservationSet,
    ) -> Result<(LossBreakdown, LatentState)> {
        self.check_set(set)?;
        let n = set.len();
        let z = self.encode(set)?;
        let logits = self.cardinality_logits(&z)?;
        let cardinality = cross_entropy(&logits, n);

        let mut element = 0.0;
        if n > 0 {
            let order = canonical_order(set);
            let decoded = self.decode_with_cardinality(&z, n)?;
            let mut sq = 0.0;
            for (rank, &ei) in order.iter().enumerate() {
                let x = &set.elements()[ei];
                let y = &decoded.elements()[rank];
                for (xv, yv) in x.iter().zip(y) {
                    let d = yv - xv;
                    sq += d * d;
                }
            }
            element = sq / (n * self.cfg.d_obs) as f64;
        }
        let breakdown = LossBreakdown {
            total: element + cardinality,
            element,
            cardinality,
        };
        Ok((breakdown, z))
    }

    /// Loss plus exact gradients for every parameter.
    pub fn loss_backward(&self, set: &ObservationSet) -> Result<(LossBreakdown, PisaGrad)> {
        self.check_set(set)?;
        let n = set.len();
        let d_z = self.cfg.d_z;
        let order = canonical_order(set);

        // Forward with tapes.
        let mut enc = Vec::with_capacity(n);
        let mut z = self.card_embed_row(n).to_vec();
        for (rank, &ei) in order.iter().enumerate() {
            let key = positional_key(rank, self.cfg.d_key);
            let (a, ta) = self.psi_key.forward_recorded(&key)?;
            let (b, tb) = self.psi_val.forward_recorded(&set.elements()[ei])?;
            for i in 0..d_z {
                z[i] += a[i] * b[i];
            }
            enc.push(EncoderElemTape { a, b, ta, tb });
        }

        let zl = LatentState { values: z.clone() };
        let (logits, t_card) = self.card_head.forward_recorded(&z)?;
        let cardinality = cross_entropy(&logits, n);

        struct DecTape {
            q: Vec<f64>,
            y: Vec<f64>,
            tq: MlpTape,
            ty: MlpTape,
        }
        let mut dec = Vec::with_capacity(n);
        let mut sq = 0.0;
        for (rank, &ei) in order.iter().enumerate() {
            let key = positional_key(rank, self.cfg.d_key);
            let (q, tq) = self.phi_key.forward_recorded(&key)?;
            let e: Vec<f64> = q.iter().zip(&zl.values).map(|(a, b)| a * b).collect();
            let (y, ty) = self.phi_dec.forward_recorded(&e)?;
            for (yv, xv) in y.iter().zip(&set.elements()[ei]) {
                let d = yv - xv;
                sq += d * d;
            }
            dec.push(DecTape { q, y, tq, ty });
        }
        let element = if n > 0 {
            sq / (n * self.cfg.d_obs) as f64
        } else {
            0.0
        };

        // Backward.
        let mut grad = PisaGrad::zeros_like(self);
        let mut d_latent = vec![0.0; d_z];

        // Element term: dL/dy = 2 (y - x) / (n * d_obs); back through
        // phi_dec, then split the product e = q * z into both factors.
        if n > 0 {
            let scale = 2.0 / (n * self.cfg.d_obs) as f64;
            for (rank, &ei) in order.iter().enumerate() {
                let t = &dec[rank];
                let dy: Vec<f64> = t
                    .y
                    .iter()
                    .zip(&set.elements()[ei])
                    .map(|(yv, xv)| scale * (yv - xv))
                    .collect();
                let (g_dec, de) = self.phi_dec.backward(&t.ty, &dy)?;
                grad.phi_dec.accumulate(&g_dec);
                let dq: Vec<f64> = de.iter().zip(&zl.values).map(|(d, zv)| d * zv).collect();
                for i in 0..d_z {
                    d_latent[i] += de[i] * t.q[i];
                }
                let (g_key, _) = self.phi_key.backward(&t.tq, &dq)?;
                grad.phi_key.accumulate(&g_key);
            }
        }

        // Cardinality term: dCE/dlogits = softmax(logits) - onehot(n).
        let mut d_logits = softmax(&logits);
        d_logits[n] -= 1.0;
        let (g_card, dz_card) = self.card_head.backward(&t_card, &d_logits)?;
        grad.card_head.accumulate(&g_card);
        for i in 0..d_z {
            d_latent[i] += dz_card[i];
        }

        // Encoder: z = sum a_i * b_i + embed[n].
        self.backprop_encoder(&enc, n, &d_latent, &mut grad)?;

        let breakdown = LossBreakdown {
            total: element + cardinality,
            element,
            cardinality,
        };
        Ok((breakdown, grad))
    }

    /// Gradients of an arbitrary scalar through the encoder alone, given
    /// dL/dz. Decoder gradients stay zero. Used when a policy objective is
    /// differentiated end-to-end through the latent.
    pub fn encode_backward(&self, set: &ObservationSet, d_latent: &[f64]) -> Result<PisaGrad> {
        self.check_set(set)?;
        if d_latent.len() != self.cfg.d_z {
            return Err(Error::Shape(format!(
                "latent gradient dim {} but latent dim {}",
                d_latent.len(),
                self.cfg.d_z
            )));
        }
        let order = canonical_order(set);
        let mut enc = Vec::with_capacity(set.len());
        for (rank, &ei) in order.iter().enumerate() {
            let key = positional_key(rank, self.cfg.d_key);
            let (a, ta) = self.psi_key.forward_recorded(&key)?;
            let (b, tb) = self.psi_val.forward_recorded(&set.elements()[ei])?;
            enc.push(EncoderElemTape { a, b, ta, tb });
        }
        let mut grad = PisaGrad::zeros_like(self);
        self.backprop_encoder(&enc, set.len(), d_latent, &mut grad)?;
        Ok(grad)
    }

    fn backprop_encoder(
        &self,
        enc: &[EncoderElemTape],
        n: usize,
        d_latent: &[f64],
        grad: &mut PisaGrad,
    ) -> Result<()> {
        let d_z = self.cfg.d_z;
        // Embedding row n receives dL/dz directly.
        let row = &mut grad.card_embed[n * d_z..(n + 1) * d_z];
        for i in 0..d_z {
            row[i] += d_latent[i];
        }
        // Product rule on a_i * b_i, then back through both networks.
        for t in enc {
            let da: Vec<f64> = d_latent.iter().zip(&t.b).map(|(d, b)| d * b).collect();
            let db: Vec<f64> = d_latent.iter().zip(&t.a).map(|(d, a)| d * a).collect();
            let (g_key, _) = self.psi_key.backward(&t.ta, &da)?;
            let (g_val, _) = self.psi_val.backward(&t.tb, &db)?;
            grad.psi_key.accumulate(&g_key);
            grad.psi_val.accumulate(&g_val);
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.psi_key.param_count()
            + self.psi_val.param_count()
            + self.card_embed.len()
            + self.card_head.param_count()
            + self.phi_key.param_count()
            + self.phi_dec.param_count()
    }

    /// Flat parameter order: psi_key, psi_val, card_embed, card_head,
    /// phi_key, phi_dec. `PisaGrad::write_flat` matches.
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.psi_key.write_flat(out);
        self.psi_val.write_flat(out);
        out.extend_from_slice(&self.card_embed);
        self.card_head.write_flat(out);
        self.phi_key.write_flat(out);
        self.phi_dec.write_flat(out);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_flat(&mut out);
        out
    }

    pub fn read_flat(&mut self, reader: &mut FlatReader) -> Result<()> {
        self.psi_key.read_flat(reader)?;
        self.psi_val.read_flat(reader)?;
        let n = self.card_embed.len();
        self.card_embed.copy_from_slice(reader.take(n)?);
        self.card_head.read_flat(reader)?;
        self.phi_key.read_flat(reader)?;
        self.phi_dec.read_flat(reader)
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut copy = self.clone();
        let mut reader = FlatReader::new(flat);
        copy.read_flat(&mut reader)?;
        reader.finish()?;
        Ok(copy)
    }

    /// SHA-256 over the flat parameter image; equal iff bit-identical.
    pub fn checksum(&self) -> String {
        crate::util::param_checksum(&self.to_flat())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::new();
        ckpt.push(
            "meta.shape",
            vec![5],
            vec![
                self.cfg.d_obs as f64,
                self.cfg.d_z as f64,
                self.cfg.d_key as f64,
                self.cfg.hidden as f64,
                self.cfg.n_max as f64,
            ],
        )?;
        push_mlp(&mut ckpt, "psi_key", &self.psi_key)?;
        push_mlp(&mut ckpt, "psi_val", &self.psi_val)?;
        ckpt.push(
            "card_embed",
            vec![self.cfg.n_max + 1, self.cfg.d_z],
            self.card_embed.clone(),
        )?;
        push_mlp(&mut ckpt, "card_head", &self.card_head)?;
        push_mlp(&mut ckpt, "phi_key", &self.phi_key)?;
        push_mlp(&mut ckpt, "phi_dec", &self.phi_dec)?;
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let meta = ckpt.require("meta.shape")?;
        if meta.data.len() != 5 {
            return Err(Error::Format("meta.shape must hold 5 values".to_string()));
        }
        let cfg = PisaConfig {
            d_obs: meta.data[0] as usize,
            d_z: meta.data[1] as usize,
            d_key: meta.data[2] as usize,
            hidden: meta.data[3] as usize,
            n_max: meta.data[4] as usize,
        };
        cfg.validate()?;
        let psi_key = read_mlp(ckpt, "psi_key")?;
        let psi_val = read_mlp(ckpt, "psi_val")?;
        let embed = ckpt.require("card_embed")?;
        if embed.dims != vec![cfg.n_max + 1, cfg.d_z] {
            return Err(Error::Format(format!(
                "card_embed dims {:?} do not match meta {:?}",
                embed.dims,
                [cfg.n_max + 1, cfg.d_z]
            )));
        }
        let card_head = read_mlp(ckpt, "card_head")?;
        let phi_key = read_mlp(ckpt, "phi_key")?;
        let phi_dec = read_mlp(ckpt, "phi_dec")?;
        let params = Self {
            cfg,
            psi_key,
            psi_val,
            card_embed: embed.data.clone(),
            card_head,
            phi_key,
            phi_dec,
        };
        // Cross-check component shapes against meta.
        if params.psi_key.in_dim() != cfg.d_key
            || params.psi_val.in_dim() != cfg.d_obs
            || params.psi_key.out_dim() != cfg.d_z
            || params.psi_val.out_dim() != cfg.d_z
            || params.card_head.in_dim() != cfg.d_z
            || params.card_head.out_dim() != cfg.n_max + 1
            || params.phi_key.in_dim() != cfg.d_key
            || params.phi_key.out_dim() != cfg.d_z
            || params.phi_dec.in_dim() != cfg.d_z
            || params.phi_dec.out_dim() != cfg.d_obs
        {
            return Err(Error::Format(
                "network shapes do not match meta.shape".to_string(),
            ));
        }
        Ok(params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Recorded psi_key / psi_val evaluation for one element, kept per
/// canonical rank so the encoder sum can be backpropagated.
struct EncoderElemTape {
    a: Vec<f64>,
    b: Vec<f64>,
    ta: MlpTape,
    tb: MlpTape,
}

impl PisaGrad {
    pub fn zeros_like(params: &SetAutoencoderParams) -> Self {
        Self {
            psi_key: MlpGrad::zeros_like(&params.psi_key),
            psi_val: MlpGrad::zeros_like(&params.psi_val),
            card_embed: vec![0.0; params.card_embed.len()],
            card_head: MlpGrad::zeros_like(&params.card_head),
            phi_key: MlpGrad::zeros_like(&params.phi_key),
            phi_dec: MlpGrad::zeros_like(&params.phi_dec),
        }
    }

    pub fn accumulate(&mut self, other: &PisaGrad) {
        self.psi_key.accumulate(&other.psi_key);
        self.psi_val.accumulate(&other.psi_val);
        for (a, b) in self.card_embed.iter_mut().zip(&other.card_embed) {
            *a += b;
        }
        self.card_head.accumulate(&other.card_head);
        self.phi_key.accumulate(&other.phi_key);
        self.phi_dec.accumulate(&other.phi_dec);
    }

    pub fn scale(&mut self, factor: f64) {
        self.psi_key.scale(factor);
        self.psi_val.scale(factor);
        for v in &mut self.card_embed {
            *v *= factor;
        }
        self.card_head.scale(factor);
        self.phi_key.scale(factor);
        self.phi_dec.scale(factor);
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.psi_key.write_flat(out);
        self.psi_val.write_flat(out);
        out.extend_from_slice(&self.card_embed);
        self.card_head.write_flat(out);
        self.phi_key.write_flat(out);
        self.phi_dec.write_flat(out);
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// -log softmax(logits)[target], computed stably.
fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

/// Minibatch training settings for the autoencoder.
#[derive(Debug, Clone, Copy)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
}

/// One iteration's batch-mean losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub total: f64,
    pub element: f64,
    pub cardinality: f64,
}

/// Minibatch Adam trainer that can run in segments (the iteration counter,
/// optimizer moments, and sampling stream persist across `run` calls).
pub struct PisaTrainer {
    adam: AdamState,
    rng: ChaCha8Rng,
    batch_size: usize,
    iteration: usize,
}

impl PisaTrainer {
    pub fn new(params: &SetAutoencoderParams, settings: &TrainSettings) -> Result<Self> {
        if settings.batch_size == 0 {
            return Err(Error::Config("batch_size must be > 0".to_string()));
        }
        Ok(Self {
            adam: AdamState::new(params.param_count(), AdamConfig::with_lr(settings.lr)),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, 0xAE)),
            batch_size: settings.batch_size,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Runs `iterations` more minibatch steps, mutating `params` in place.
    /// Returns one trace row per iteration.
    pub fn run(
        &mut self,
        params: &mut SetAutoencoderParams,
        dataset: &[ObservationSet],
        iterations: usize,
    ) -> Result<Vec<TraceRow>> {
        if dataset.is_empty() {
            return Err(Error::Usage("cannot train on an empty dataset".to_string()));
        }
        for set in dataset {
            params.check_set(set)?;
        }
        let mut trace = Vec::with_capacity(iterations);
        let mut flat = params.to_flat();
        for _ in 0..iterations {
            let mut grad = PisaGrad::zeros_like(params);
            let mut sums = (0.0, 0.0, 0.0);
            for _ in 0..self.batch_size {
                let idx = self.rng.gen_range(0..dataset.len());
                let (loss, g) = params.loss_backward(&dataset[idx])?;
                grad.accumulate(&g);
                sums.0 += loss.total;
                sums.1 += loss.element;
                sums.2 += loss.cardinality;
            }
            grad.scale(1.0 / self.batch_size as f64);
            let mut flat_grad = Vec::with_capacity(flat.len());
            grad.write_flat(&mut flat_grad);
            self.adam.step(&mut flat, &flat_grad)?;
            let mut reader = FlatReader::new(&flat);
            params.read_flat(&mut reader)?;
            reader.finish()?;
            trace.push(TraceRow {
                iteration: self.iteration,
                total: sums.0 / self.batch_size as f64,
                element: sums.1 / self.batch_size as f64,
                cardinality: sums.2 / self.batch_size as f64,
            });
            self.iteration += 1;
        }
        Ok(trace)
    }
}

/// Convenience wrapper: fresh trainer, fixed number of iterations.
pub fn train(
    params: &mut SetAutoencoderParams,
    dataset: &[ObservationSet],
    settings: &TrainSettings,
) -> Result<Vec<TraceRow>> {
    let mut trainer = PisaTrainer::new(params, settings)?;
    trainer.run(params, dataset, settings.iterations)
}

/// Teacher-forced evaluation over a dataset: per-entry RMSE of element
/// reconstruction plus cardinality-head accuracy.
#[derive(Debug, Clone, Copy)]
pub struct EvalStats {
    pub rmse: f64,
    pub cardinality_accuracy: f64,
    pub mean_total_loss: f64,
}

pub fn evaluate(params: &SetAutoencoderParams, dataset: &[ObservationSet]) -> Result<EvalStats> {
    if dataset.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".to_string()));
    }
    let mut sq_sum = 0.0;
    let mut entries = 0usize;
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for set in dataset {
        let (loss, z) = params.reconstruction_loss_with_latent(set)?;
        loss_sum += loss.total;
        let logits = params.cardinality_logits(&z)?;
        if argmax(&logits) == set.len() {
            correct += 1;
        }
        if !set.is_empty() {
            // element term is already the mean squared residual
            sq_sum += loss.element * (set.len() * set.dim()) as f64;
            entries += set.len() * set.dim();
        }
    }
    Ok(EvalStats {
        rmse: if entries > 0 {
            (sq_sum / entries as f64).sqrt()
        } else {
            0.0
        },
        cardinality_accuracy: correct as f64 / dataset.len() as f64,
        mean_total_loss: loss_sum / dataset.len() as f64,
    })
}
