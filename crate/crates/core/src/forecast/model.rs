//! Encoder-decoder forecaster with ProbSparse self-attention and distilling.

use std::collections::BTreeMap;
use std::path::Path;

use gridpatch_autodiff::nn::{LayerNorm, Linear};
use gridpatch_autodiff::{Binding, Checkpoint, Graph, NodeId, ParamId, ParamSet, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{full_attention, probsparse, query_budget, sample_keys};
use crate::data::{time_codes, RenewableSeries, WindowSample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    pub input_len: usize,
    pub decoder_len: usize,
    pub horizon: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub ffn_dim: usize,
    /// `u = ⌈factor · ln L⌉`; the key sample uses the same size.
    pub factor: f64,
    pub sample_seed: u64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            input_len: 56,
            decoder_len: 28,
            horizon: 15,
            d_model: 32,
            heads: 2,
            encoder_blocks: 2,
            decoder_blocks: 1,
            ffn_dim: 64,
            factor: 5.0,
            sample_seed: 17,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("forecast: {m}")));
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.heads
            ));
        }
        if self.input_len == 0 || self.decoder_len == 0 || self.decoder_len > self.input_len {
            return bad(format!(
                "decoder history {} must be a suffix of input {}",
                self.decoder_len, self.input_len
            ));
        }
        if self.horizon == 0 || self.ffn_dim == 0 || self.decoder_blocks == 0 {
            return bad("horizon, ffn_dim and decoder_blocks must be positive".into());
        }
        if !(self.factor > 0.0) {
            return bad("factor must be positive".into());
        }
        Ok(())
    }

    /// Rows fed to the decoder: known history plus zero placeholders.
    pub fn decoder_rows(&self) -> usize {
        self.decoder_len + self.horizon
    }

    /// Time length after the distilling stack.
    pub fn encoder_output_len(&self) -> usize {
        (0..self.encoder_blocks).fold(self.input_len, |l, _| l.div_ceil(2))
    }
}

/// A forecast issued on day `issue_time` for the following `values.rows()` days.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSnapshot {
    pub issue_time: usize,
    pub values: Tensor,
}

impl PredictionSnapshot {
    pub fn new(issue_time: usize, values: Tensor) -> Result<Self> {
        if values.rank() != 2 || values.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(
                "snapshot values must be a finite non-negative matrix",
            ));
        }
        Ok(Self { issue_time, values })
    }

    pub fn horizon(&self) -> usize {
        self.values.rows()
    }

    /// Forecast for absolute `day`, if covered.
    pub fn row_for_day(&self, day: usize) -> Option<&[f64]> {
        let offset = day.checked_sub(self.issue_time + 1)?;
        (offset < self.horizon()).then(|| self.values.row(offset))
    }
}

#[derive(Clone, Debug)]
struct AttentionIds {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Clone, Debug)]
struct EncoderIds {
    attn: AttentionIds,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
    conv_w: ParamId,
    conv_b: ParamId,
}

#[derive(Clone, Debug)]
struct DecoderIds {
    self_attn: AttentionIds,
    ln1: LayerNorm,
    cross: AttentionIds,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln3: LayerNorm,
}

#[derive(Clone, Debug)]
struct EmbedIds {
    value: Linear,
    time: Linear,
}

#[derive(Clone, Debug)]
struct Layout {
    enc_embed: EmbedIds,
    encoder: Vec<EncoderIds>,
    enc_norm: LayerNorm,
    dec_embed: EmbedIds,
    decoder: Vec<DecoderIds>,
    proj: Linear,
}

/// The forecaster. Inputs and outputs are in MW; internally each unit is
/// standardized with statistics fitted on training data.
#[derive(Clone, Debug)]
pub struct ForecastModel {
    config: ForecastConfig,
    num_units: usize,
    params: ParamSet,
    layout: Layout,
    scaler_mean: Vec<f64>,
    scaler_std: Vec<f64>,
    trained: bool,
}

fn attention_ids(p: &mut ParamSet, name: &str, d: usize, rng: &mut ChaCha8Rng) -> AttentionIds {
    AttentionIds {
        q: Linear::new(p, &format!("{name}.q"), d, d, rng),
        k: Linear::new(p, &format!("{name}.k"), d, d, rng),
        v: Linear::new(p, &format!("{name}.v"), d, d, rng),
        o: Linear::new(p, &format!("{name}.o"), d, d, rng),
    }
}

fn embed_ids(
    p: &mut ParamSet,
    name: &str,
    units: usize,
    d: usize,
    rng: &mut ChaCha8Rng,
) -> EmbedIds {
    EmbedIds {
        value: Linear::new(p, &format!("{name}.value"), units, d, rng),
        time: Linear::new(p, &format!("{name}.time"), 4, d, rng),
    }
}

/// Sinusoidal position table, `len × d`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, d]);
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            t.data_mut()[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// Additive mask hiding later positions, `len × len`.
fn causal_mask(len: usize) -> Tensor {
    let mut t = Tensor::zeros(&[len, len]);
    for i in 0..len {
        for j in i + 1..len {
            t.data_mut()[i * len + j] = -1e9;
        }
    }
    t
}

impl ForecastModel {
    pub fn new(config: ForecastConfig, num_units: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_units == 0 {
            return Err(Error::invalid("forecaster needs at least one unit"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let d = config.d_model;
        let enc_embed = embed_ids(&mut p, "enc.embed", num_units, d, &mut rng);
        let encoder = (0..config.encoder_blocks)
            .map(|b| {
                let name = format!("enc.{b}");
                let bound = 1.0 / ((3 * d) as f64).sqrt();
                EncoderIds {
                    attn: attention_ids(&mut p, &format!("{name}.attn"), d, &mut rng),
                    ln1: LayerNorm::new(&mut p, &format!("{name}.ln1"), d),
                    ff1: Linear::new(&mut p, &format!("{name}.ff1"), d, config.ffn_dim, &mut rng),
                    ff2: Linear::new(&mut p, &format!("{name}.ff2"), config.ffn_dim, d, &mut rng),
                    ln2: LayerNorm::new(&mut p, &format!("{name}.ln2"), d),
                    conv_w: p.add(
                        format!("{name}.distil.weight"),
                        Tensor::uniform(&[3, d, d], -bound, bound, &mut rng),
                    ),
                    conv_b: p.add(format!("{name}.distil.bias"), Tensor::zeros(&[d])),
                }
            })
            .collect();
        let enc_norm = LayerNorm::new(&mut p, "enc.norm", d);
        let dec_embed = embed_ids(&mut p, "dec.embed", num_units, d, &mut rng);
        let decoder = (0..config.decoder_blocks)
            .map(|b| {
                let name = format!("dec.{b}");
                DecoderIds {
                    self_attn: attention_ids(&mut p, &format!("{name}.self"), d, &mut rng),
                    ln1: LayerNorm::new(&mut p, &format!("{name}.ln1"), d),
                    cross: attention_ids(&mut p, &format!("{name}.cross"), d, &mut rng),
                    ln2: LayerNorm::new(&mut p, &format!("{name}.ln2"), d),
                    ff1: Linear::new(&mut p, &format!("{name}.ff1"), d, config.ffn_dim, &mut rng),
                    ff2: Linear::new(&mut p, &format!("{name}.ff2"), config.ffn_dim, d, &mut rng),
                    ln3: LayerNorm::new(&mut p, &format!("{name}.ln3"), d),
                }
            })
            .collect();
        let proj = Linear::new(&mut p, "proj", d, num_units, &mut rng);
        Ok(Self {
            config,
            num_units,
            params: p,
            layout: Layout {
                enc_embed,
                encoder,
                enc_norm,
                dec_embed,
                decoder,
                proj,
            },
            scaler_mean: vec![0.0; num_units],
            scaler_std: vec![1.0; num_units],
            trained: false,
        })
    }

    pub fn config(&self) -> &ForecastConfig {
        &self.config
    }

    pub fn num_units(&self) -> usize {
        self.num_units
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn scaler(&self) -> (&[f64], &[f64]) {
        (&self.scaler_mean, &self.scaler_std)
    }

    pub fn set_scaler(&mut self, mean: Vec<f64>, std: Vec<f64>) -> Result<()> {
        if mean.len() != self.num_units
            || std.len() != self.num_units
            || std.iter().any(|s| !(*s > 0.0))
        {
            return Err(Error::invalid(
                "scaler needs one mean and one positive std per unit",
            ));
        }
        self.scaler_mean = mean;
        self.scaler_std = std;
        Ok(())
    }

    /// Standardizes an MW matrix per unit.
    pub fn normalize(&self, x: &Tensor) -> Tensor {
        let n = self.num_units;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let u = i % n;
            *v = (*v - self.scaler_mean[u]) / self.scaler_std[u];
        }
        out
    }

    fn denormalize(&self, x: &Tensor) -> Tensor {
        let n = self.num_units;
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let u = i % n;
            *v = *v * self.scaler_std[u] + self.scaler_mean[u];
        }
        out
    }

    fn check_input(&self, what: &'static str, x: &Tensor, rows: usize, cols: usize) -> Result<()> {
        if x.rank() != 2 || x.rows() != rows || x.cols() != cols {
            return Err(Error::Shape {
                op: what,
                detail: format!("expected {rows}×{cols}, got {:?}", x.shape()),
            });
        }
        Ok(())
    }

    fn embed(
        &self,
        g: &mut Graph,
        b: &Binding,
        ids: &EmbedIds,
        x: NodeId,
        time: NodeId,
    ) -> Result<NodeId> {
        let len = g.value(x).rows();
        let xv = ids.value.forward(g, b, x)?;
        let tv = ids.time.forward(g, b, time)?;
        let pe = g.input(positional_encoding(len, self.config.d_model));
        let s = g.add(xv, tv)?;
        Ok(g.add(s, pe)?)
    }

    /// Multi-head attention. `budget` selects ProbSparse self-attention with
    /// the given site seed; otherwise full attention with an optional mask.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        b: &Binding,
        ids: &AttentionIds,
        x: NodeId,
        memory: NodeId,
        sparse_site: Option<u64>,
        mask: Option<NodeId>,
    ) -> Result<NodeId> {
        let q = ids.q.forward(g, b, x)?;
        let k = ids.k.forward(g, b, memory)?;
        let v = ids.v.forward(g, b, memory)?;
        let dh = self.config.d_model / self.config.heads;
        let (lq, lk) = (g.value(q).rows(), g.value(k).rows());
        let mut heads = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let out = match sparse_site {
                Some(site) => {
                    let u = query_budget(self.config.factor, lq);
                    let size = query_budget(self.config.factor, lk);
                    let seed = self
                        .config
                        .sample_seed
                        .wrapping_mul(1_000_003)
                        .wrapping_add(site * 97 + h as u64);
                    let sample = sample_keys(lk, size, seed)?;
                    probsparse(g, qh, kh, vh, u, &sample)?
                }
                None => full_attention(g, qh, kh, vh, mask)?,
            };
            heads.push(out);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        Ok(ids.o.forward(g, b, cat)?)
    }

    fn feed_forward(
        &self,
        g: &mut Graph,
        b: &Binding,
        ff1: &Linear,
        ff2: &Linear,
        x: NodeId,
    ) -> Result<NodeId> {
        let h = ff1.forward(g, b, x)?;
        let h = g.gelu(h)?;
        Ok(ff2.forward(g, b, h)?)
    }

    /// Encoder on standardized inputs; returns the distilled feature node.
    pub fn encode(&self, g: &mut Graph, b: &Binding, x: NodeId, time: NodeId) -> Result<NodeId> {
        let mut h = self.embed(g, b, &self.layout.enc_embed, x, time)?;
        for (blk, ids) in self.layout.encoder.iter().enumerate() {
            let a = self.attention(g, b, &ids.attn, h, h, Some(blk as u64), None)?;
            let r = g.add(h, a)?;
            h = ids.ln1.forward(g, b, r)?;
            let f = self.feed_forward(g, b, &ids.ff1, &ids.ff2, h)?;
            let r = g.add(h, f)?;
            h = ids.ln2.forward(g, b, r)?;
            let c = g.conv1d(h, b.node(ids.conv_w))?;
            let c = g.add(c, b.node(ids.conv_b))?;
            let c = g.gelu(c)?;
            let r = g.add(h, c)?;
            h = g.maxpool(r)?;
        }
        Ok(self.layout.enc_norm.forward(g, b, h)?)
    }

    /// Decoder on a standardized, zero-padded input; returns the standardized
    /// forecast rows.
    pub fn decode(
        &self,
        g: &mut Graph,
        b: &Binding,
        x: NodeId,
        time: NodeId,
        memory: NodeId,
    ) -> Result<NodeId> {
        let len = g.value(x).rows();
        let mut h = self.embed(g, b, &self.layout.dec_embed, x, time)?;
        let mask = g.input(causal_mask(len));
        for ids in &self.layout.decoder {
            let a = self.attention(g, b, &ids.self_attn, h, h, None, Some(mask))?;
            let r = g.add(h, a)?;
            h = ids.ln1.forward(g, b, r)?;
            let c = self.attention(g, b, &ids.cross, h, memory, None, None)?;
            let r = g.add(h, c)?;
            h = ids.ln2.forward(g, b, r)?;
            let f = self.feed_forward(g, b, &ids.ff1, &ids.ff2, h)?;
            let r = g.add(h, f)?;
            h = ids.ln3.forward(g, b, r)?;
        }
        let out = self.layout.proj.forward(g, b, h)?;
        Ok(g.slice_rows(out, self.config.decoder_len, self.config.horizon)?)
    }

    /// Encoder features for an MW history (`input_len × units`) and its time codes.
    pub fn encoder_forward(&self, encoder_input: &Tensor, time_codes: &Tensor) -> Result<Tensor> {
        self.check_input(
            "encoder input",
            encoder_input,
            self.config.input_len,
            self.num_units,
        )?;
        self.check_input("encoder time codes", time_codes, self.config.input_len, 4)?;
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.input(self.normalize(encoder_input));
        let t = g.input(time_codes.clone());
        let out = self.encode(&mut g, &b, x, t)?;
        Ok(g.value(out).clone())
    }

    /// One-shot forecast from the zero-padded decoder input (MW) and encoder
    /// features. Outputs are clipped at 0 MW.
    pub fn decoder_predict(
        &self,
        decoder_input: &Tensor,
        time_codes: &Tensor,
        features: &Tensor,
        issue_time: usize,
    ) -> Result<PredictionSnapshot> {
        let rows = self.config.decoder_rows();
        self.check_input("decoder input", decoder_input, rows, self.num_units)?;
        self.check_input("decoder time codes", time_codes, rows, 4)?;
        self.check_input(
            "encoder features",
            features,
            self.config.encoder_output_len(),
            self.config.d_model,
        )?;
        let pad_start = self.config.decoder_len * self.num_units;
        if decoder_input.data()[pad_start..].iter().any(|v| *v != 0.0) {
            return Err(Error::invalid(format!(
                "decoder rows {}..{rows} are placeholders and must be exactly zero",
                self.config.decoder_len
            )));
        }
        let mut g = Graph::new();
        let b = self.params.bind(&mut g, false);
        let x = g.input(self.decoder_normalized(decoder_input));
        let t = g.input(time_codes.clone());
        let m = g.input(features.clone());
        let out = self.decode(&mut g, &b, x, t, m)?;
        let values = self.denormalize(g.value(out)).map(|v| v.max(0.0));
        PredictionSnapshot::new(issue_time, values)
    }

    /// Standardizes the known rows and keeps the placeholders at zero.
    fn decoder_normalized(&self, decoder_input: &Tensor) -> Tensor {
        let mut x = self.normalize(decoder_input);
        let start = self.config.decoder_len * self.num_units;
        x.data_mut()[start..].iter_mut().for_each(|v| *v = 0.0);
        x
    }

    /// Decoder input for a known-history matrix: history rows then zeros.
    pub fn pad_decoder_input(&self, known: &Tensor) -> Result<Tensor> {
        self.check_input(
            "decoder history",
            known,
            self.config.decoder_len,
            self.num_units,
        )?;
        let mut data = known.data().to_vec();
        data.resize(self.config.decoder_rows() * self.num_units, 0.0);
        Ok(Tensor::matrix(
            self.config.decoder_rows(),
            self.num_units,
            data,
        )?)
    }

    /// Forecast issued on day `t0` from the history ending on `t0` inclusive.
    pub fn predict(&self, series: &RenewableSeries, t0: usize) -> Result<PredictionSnapshot> {
        let cfg = &self.config;
        if t0 + 1 < cfg.input_len || t0 >= series.num_days() {
            return Err(Error::invalid(format!(
                "forecast on day {t0} needs days {}..={t0} of a {}-day series",
                (t0 + 1).saturating_sub(cfg.input_len),
                series.num_days()
            )));
        }
        if series.num_units() != self.num_units {
            return Err(Error::invalid(format!(
                "model has {} units, series {}",
                self.num_units,
                series.num_units()
            )));
        }
        let start = t0 + 1 - cfg.input_len;
        let enc = series.slice_days(start, cfg.input_len)?;
        let features = self.encoder_forward(&enc, &time_codes(start, cfg.input_len))?;
        let known = series.slice_days(t0 + 1 - cfg.decoder_len, cfg.decoder_len)?;
        let dec = self.pad_decoder_input(&known)?;
        let dec_time = time_codes(t0 + 1 - cfg.decoder_len, cfg.decoder_rows());
        self.decoder_predict(&dec, &dec_time, &features, t0)
    }

    /// Standardized squared-error loss of one window on graph `g`.
    pub fn window_loss(&self, g: &mut Graph, b: &Binding, w: &WindowSample) -> Result<NodeId> {
        let cfg = &self.config;
        if w.input_len() != cfg.input_len
            || w.horizon() != cfg.horizon
            || w.decoder_known.rows() != cfg.decoder_len
        {
            return Err(Error::Shape {
                op: "window loss",
                detail: format!(
                    "window {}+{} (decoder {}) for a {}+{} model",
                    w.input_len(),
                    w.horizon(),
                    w.decoder_known.rows(),
                    cfg.input_len,
                    cfg.horizon
                ),
            });
        }
        let x = g.input(self.normalize(&w.encoder_input));
        let enc_time = g.input(slice_rows(&w.time_codes, 0, cfg.input_len));
        let memory = self.encode(g, b, x, enc_time)?;
        let dec = self.pad_decoder_input(&w.decoder_known)?;
        let dx = g.input(self.decoder_normalized(&dec));
        let dec_time = g.input(slice_rows(
            &w.time_codes,
            cfg.input_len - cfg.decoder_len,
            cfg.decoder_rows(),
        ));
        let pred = self.decode(g, b, dx, dec_time, memory)?;
        let target = g.input(self.normalize(&w.target));
        Ok(g.mse(pred, target)?)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut meta = BTreeMap::new();
        meta.insert("kind".into(), "forecaster".into());
        meta.insert("config".into(), serde_json::to_string(&self.config)?);
        meta.insert("num_units".into(), self.num_units.to_string());
        meta.insert(
            "scaler_mean".into(),
            serde_json::to_string(&self.scaler_mean)?,
        );
        meta.insert(
            "scaler_std".into(),
            serde_json::to_string(&self.scaler_std)?,
        );
        meta.insert("trained".into(), self.trained.to_string());
        Ok(Checkpoint {
            meta,
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ckpt.meta
                .get(k)
                .ok_or_else(|| Error::invalid(format!("forecaster checkpoint lacks `{k}`")))
        };
        if get("kind")? != "forecaster" {
            return Err(Error::invalid("checkpoint does not hold a forecaster"));
        }
        let config: ForecastConfig = serde_json::from_str(get("config")?)?;
        let num_units: usize = get("num_units")?
            .parse()
            .map_err(|_| Error::invalid("bad num_units in checkpoint"))?;
        let mut model = Self::new(config, num_units, 0)?;
        model.params.check_compatible(&ckpt.params)?;
        model.params = ckpt.params.clone();
        model.set_scaler(
            serde_json::from_str(get("scaler_mean")?)?,
            serde_json::from_str(get("scaler_std")?)?,
        )?;
        model.trained = get("trained")? == "true";
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path).map_err(|e| match e {
            gridpatch_autodiff::AutodiffError::Io(io) => Error::io(path, io),
            other => other.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let ckpt = Checkpoint::load(path).map_err(|e| match e {
            gridpatch_autodiff::AutodiffError::Io(io) => Error::io(path, io),
            other => other.into(),
        })?;
        Self::from_checkpoint(&ckpt)
    }
}

fn slice_rows(t: &Tensor, start: usize, len: usize) -> Tensor {
    let c = t.cols();
    Tensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec()).expect("in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_lengths() {
        let cfg = ForecastConfig::default();
        assert_eq!(cfg.encoder_output_len(), 14);
        assert_eq!(cfg.decoder_rows(), 43);
        let three = ForecastConfig {
            encoder_blocks: 3,
            ..cfg.clone()
        };
        assert_eq!(three.encoder_output_len(), 7);
        assert!(ForecastConfig { heads: 3, ..cfg }.validate().is_err());
    }

    #[test]
    fn mask_hides_future() {
        let m = causal_mask(3);
        assert_eq!(m.row(0), &[0.0, -1e9, -1e9]);
        assert_eq!(m.row(2), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn snapshot_day_lookup() {
        let s = PredictionSnapshot::new(10, Tensor::from_rows(&[vec![1.0], vec![2.0]]).unwrap())
            .unwrap();
        assert_eq!(s.row_for_day(11), Some(&[1.0][..]));
        assert_eq!(s.row_for_day(12), Some(&[2.0][..]));
        assert_eq!(s.row_for_day(10), None);
        assert_eq!(s.row_for_day(13), None);
    }
}
