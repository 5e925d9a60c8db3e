use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::Array;
use crate::textprep::PAD_ID;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub max_positions: usize,
    pub dropout: f64,
}

/// Convolution width used by every layer.
pub const KERNEL_WIDTH: usize = 3;

impl ModelConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            embed_dim: 500,
            hidden_dim: 1024,
            layers: 7,
            src_vocab,
            tgt_vocab,
            max_positions: 1024,
            dropout: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(
                "layers, embed_dim and hidden_dim must all be positive".into(),
            ));
        }
        if self.src_vocab == 0 || self.tgt_vocab == 0 || self.max_positions == 0 {
            return Err(Error::Config("vocabulary sizes and max_positions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "embed_dim={} hidden_dim={} layers={} src_vocab={} tgt_vocab={} max_positions={} dropout={}",
            self.embed_dim,
            self.hidden_dim,
            self.layers,
            self.src_vocab,
            self.tgt_vocab,
            self.max_positions,
            self.dropout
        )
    }

    pub fn from_kv(line: &str) -> Result<Self> {
        let mut cfg = ModelConfig::new(0, 0);
        for item in line.split_whitespace() {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("bad config item {item:?}")))?;
            let uint = || {
                v.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad value for {k}: {v}")))
            };
            match k {
                "embed_dim" => cfg.embed_dim = uint()?,
                "hidden_dim" => cfg.hidden_dim = uint()?,
                "layers" => cfg.layers = uint()?,
                "src_vocab" => cfg.src_vocab = uint()?,
                "tgt_vocab" => cfg.tgt_vocab = uint()?,
                "max_positions" => cfg.max_positions = uint()?,
                "dropout" => {
                    cfg.dropout = v
                        .parse()
                        .map_err(|_| Error::Config(format!("bad dropout {v}")))?
                }
                _ => return Err(Error::Config(format!("unknown model config key {k}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub conv_w: T,
    pub conv_b: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer<T> {
    pub conv_w: T,
    pub conv_b: T,
    /// Decoder state to attention query (`d × h`).
    pub att_w: T,
    pub att_b: T,
    /// Source context back to layer width (`h × d`).
    pub ctx_w: T,
    pub ctx_b: T,
}

/// Every trainable array of the encoder-decoder. `T` is [`Array`] for
/// stored values and gradients, or a tape handle during a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub src_embed: T,
    pub src_pos: T,
    pub tgt_embed: T,
    pub tgt_pos: T,
    pub enc_in_w: T,
    pub enc_in_b: T,
    pub enc_layers: Vec<EncoderLayer<T>>,
    pub enc_out_w: T,
    pub enc_out_b: T,
    pub dec_in_w: T,
    pub dec_in_b: T,
    pub dec_layers: Vec<DecoderLayer<T>>,
    pub dec_out_w: T,
    pub dec_out_b: T,
    pub out_w: T,
    pub out_b: T,
}

impl<T> Weights<T> {
    /// Visits every array with its stable name, in checkpoint order.
    pub fn for_each<'a>(&'a self, mut f: impl FnMut(&str, &'a T)) {
        f("src_embed", &self.src_embed);
        f("src_pos", &self.src_pos);
        f("tgt_embed", &self.tgt_embed);
        f("tgt_pos", &self.tgt_pos);
        f("enc_in_w", &self.enc_in_w);
        f("enc_in_b", &self.enc_in_b);
        for (i, l) in self.enc_layers.iter().enumerate() {
            f(&format!("enc.{i}.conv_w"), &l.conv_w);
            f(&format!("enc.{i}.conv_b"), &l.conv_b);
        }
        f("enc_out_w", &self.enc_out_w);
        f("enc_out_b", &self.enc_out_b);
        f("dec_in_w", &self.dec_in_w);
        f("dec_in_b", &self.dec_in_b);
        for (i, l) in self.dec_layers.iter().enumerate() {
            f(&format!("dec.{i}.conv_w"), &l.conv_w);
            f(&format!("dec.{i}.conv_b"), &l.conv_b);
            f(&format!("dec.{i}.att_w"), &l.att_w);
            f(&format!("dec.{i}.att_b"), &l.att_b);
            f(&format!("dec.{i}.ctx_w"), &l.ctx_w);
            f(&format!("dec.{i}.ctx_b"), &l.ctx_b);
        }
        f("dec_out_w", &self.dec_out_w);
        f("dec_out_b", &self.dec_out_b);
        f("out_w", &self.out_w);
        f("out_b", &self.out_b);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&str, &mut T)) {
        f("src_embed", &mut self.src_embed);
        f("src_pos", &mut self.src_pos);
        f("tgt_embed", &mut self.tgt_embed);
        f("tgt_pos", &mut self.tgt_pos);
        f("enc_in_w", &mut self.enc_in_w);
        f("enc_in_b", &mut self.enc_in_b);
        for (i, l) in self.enc_layers.iter_mut().enumerate() {
            f(&format!("enc.{i}.conv_w"), &mut l.conv_w);
            f(&format!("enc.{i}.conv_b"), &mut l.conv_b);
        }
        f("enc_out_w", &mut self.enc_out_w);
        f("enc_out_b", &mut self.enc_out_b);
        f("dec_in_w", &mut self.dec_in_w);
        f("dec_in_b", &mut self.dec_in_b);
        for (i, l) in self.dec_layers.iter_mut().enumerate() {
            f(&format!("dec.{i}.conv_w"), &mut l.conv_w);
            f(&format!("dec.{i}.conv_b"), &mut l.conv_b);
            f(&format!("dec.{i}.att_w"), &mut l.att_w);
            f(&format!("dec.{i}.att_b"), &mut l.att_b);
            f(&format!("dec.{i}.ctx_w"), &mut l.ctx_w);
            f(&format!("dec.{i}.ctx_b"), &mut l.ctx_b);
        }
        f("dec_out_w", &mut self.dec_out_w);
        f("dec_out_b", &mut self.dec_out_b);
        f("out_w", &mut self.out_w);
        f("out_b", &mut self.out_b);
    }

    /// Structure-preserving conversion.
    pub fn map<U>(&self, mut f: impl FnMut(&str, &T) -> U) -> Weights<U> {
        let src_embed = f("src_embed", &self.src_embed);
        let src_pos = f("src_pos", &self.src_pos);
        let tgt_embed = f("tgt_embed", &self.tgt_embed);
        let tgt_pos = f("tgt_pos", &self.tgt_pos);
        let enc_in_w = f("enc_in_w", &self.enc_in_w);
        let enc_in_b = f("enc_in_b", &self.enc_in_b);
        let enc_layers = self
            .enc_layers
            .iter()
            .enumerate()
            .map(|(i, l)| EncoderLayer {
                conv_w: f(&format!("enc.{i}.conv_w"), &l.conv_w),
                conv_b: f(&format!("enc.{i}.conv_b"), &l.conv_b),
            })
            .collect::<Vec<_>>();
        let enc_out_w = f("enc_out_w", &self.enc_out_w);
        let enc_out_b = f("enc_out_b", &self.enc_out_b);
        let dec_in_w = f("dec_in_w", &self.dec_in_w);
        let dec_in_b = f("dec_in_b", &self.dec_in_b);
        let dec_layers = self
            .dec_layers
            .iter()
            .enumerate()
            .map(|(i, l)| DecoderLayer {
                conv_w: f(&format!("dec.{i}.conv_w"), &l.conv_w),
                conv_b: f(&format!("dec.{i}.conv_b"), &l.conv_b),
                att_w: f(&format!("dec.{i}.att_w"), &l.att_w),
                att_b: f(&format!("dec.{i}.att_b"), &l.att_b),
                ctx_w: f(&format!("dec.{i}.ctx_w"), &l.ctx_w),
                ctx_b: f(&format!("dec.{i}.ctx_b"), &l.ctx_b),
            })
            .collect();
        let dec_out_w = f("dec_out_w", &self.dec_out_w);
        let dec_out_b = f("dec_out_b", &self.dec_out_b);
        let out_w = f("out_w", &self.out_w);
        let out_b = f("out_b", &self.out_b);
        Weights {
            src_embed,
            src_pos,
            tgt_embed,
            tgt_pos,
            enc_in_w,
            enc_in_b,
            enc_layers,
            enc_out_w,
            enc_out_b,
            dec_in_w,
            dec_in_b,
            dec_layers,
            dec_out_w,
            dec_out_b,
            out_w,
            out_b,
        }
    }

    /// References to every array in checkpoint order.
    pub fn arrays(&self) -> Vec<&T> {
        let mut out = Vec::new();
        self.for_each(|_, a| out.push(a));
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each(|n, _| names.push(n.to_string()));
        names
    }
}

/// Stored parameter values together with the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights<Array>,
}

/// Shapes of every array for a configuration.
pub fn shapes(cfg: &ModelConfig) -> Weights<Vec<usize>> {
    let (d, h, k) = (cfg.embed_dim, cfg.hidden_dim, KERNEL_WIDTH);
    Weights {
        src_embed: vec![cfg.src_vocab, d],
        src_pos: vec![cfg.max_positions, d],
        tgt_embed: vec![cfg.tgt_vocab, d],
        tgt_pos: vec![cfg.max_positions, d],
        enc_in_w: vec![h, d],
        enc_in_b: vec![h],
        enc_layers: (0..cfg.layers)
            .map(|_| EncoderLayer {
                conv_w: vec![2 * h, k, h],
                conv_b: vec![2 * h],
            })
            .collect(),
        enc_out_w: vec![d, h],
        enc_out_b: vec![d],
        dec_in_w: vec![h, d],
        dec_in_b: vec![h],
        dec_layers: (0..cfg.layers)
            .map(|_| DecoderLayer {
                conv_w: vec![2 * h, k, h],
                conv_b: vec![2 * h],
                att_w: vec![d, h],
                att_b: vec![d],
                ctx_w: vec![h, d],
                ctx_b: vec![h],
            })
            .collect(),
        dec_out_w: vec![d, h],
        dec_out_b: vec![d],
        out_w: vec![cfg.tgt_vocab, d],
        out_b: vec![cfg.tgt_vocab],
    }
}

impl ModelParams {
    /// Random initialization: embeddings uniform in ±0.1, weight matrices
    /// and filters normal with variance 1/fan-in, biases zero.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let weights = shapes(&config).map(|name, shape| {
            if name.ends_with("embed") || name.ends_with("pos") {
                let mut a = Array::uniform(shape, -0.1, 0.1, rng);
                if name.ends_with("embed") {
                    a.row_mut(PAD_ID).fill(0.0);
                }
                a
            } else if shape.len() == 1 {
                Array::zeros(shape)
            } else {
                let fan_in: usize = shape[1..].iter().product();
                Array::normal(shape, (1.0 / fan_in as f64).sqrt(), rng)
            }
        });
        Ok(Self { config, weights })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let weights = shapes(&config).map(|_, s| Array::zeros(s));
        Ok(Self { config, weights })
    }

    pub fn zeros_like(&self) -> Weights<Array> {
        self.weights.map(|_, a| Array::zeros(a.shape()))
    }

    pub fn num_parameters(&self) -> usize {
        let mut n = 0;
        self.weights.for_each(|_, a| n += a.len());
        n
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.weights.for_each(|_, a| ok &= a.is_finite());
        ok
    }

    /// Copies pretrained rows into the word-embedding tables. `lookup` maps
    /// a token to its vector; rows for missing tokens are left untouched.
    /// Returns the number of rows replaced on each side.
    pub fn load_embeddings<'a>(
        &mut self,
        src_tokens: &[String],
        tgt_tokens: &[String],
        lookup: impl Fn(&str) -> Option<&'a [f64]>,
    ) -> Result<(usize, usize)> {
        let d = self.config.embed_dim;
        let fill = |table: &mut Array, tokens: &[String]| -> Result<usize> {
            let mut n = 0;
            for (i, t) in tokens.iter().enumerate().skip(PAD_ID + 1) {
                if let Some(v) = lookup(t) {
                    if v.len() != d {
                        return Err(Error::dim("load_embeddings", &[d], &[v.len()]));
                    }
                    table.row_mut(i).copy_from_slice(v);
                    n += 1;
                }
            }
            Ok(n)
        };
        let a = fill(&mut self.weights.src_embed, src_tokens)?;
        let b = fill(&mut self.weights.tgt_embed, tgt_tokens)?;
        Ok((a, b))
    }
}
