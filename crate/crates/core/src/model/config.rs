use std::fmt::Write as _;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::ConvGeom;

/// The three evaluated model variants. DPCRN-1 and DPCRN-2 share the
/// architecture and differ in loss; DPCRN-3 halves the DPRNN frequency
/// resolution and doubles the intra-frame hidden width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Dpcrn1,
    Dpcrn2,
    Dpcrn3,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Dpcrn1 => "DPCRN-1",
            Variant::Dpcrn2 => "DPCRN-2",
            Variant::Dpcrn3 => "DPCRN-3",
        }
    }

    /// Whether training adds the log spectral MSE term to the negative SNR.
    pub fn uses_log_mse(self) -> bool {
        self == Variant::Dpcrn2
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "DPCRN-1" | "1" => Ok(Variant::Dpcrn1),
            "DPCRN-2" | "2" => Ok(Variant::Dpcrn2),
            "DPCRN-3" | "3" => Ok(Variant::Dpcrn3),
            _ => Err(Error::InvalidConfig(format!("unknown variant {s:?}"))),
        }
    }
}

/// Architecture hyperparameters.
///
/// Kernels and strides are given as `(frequency, time)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub n_bins: usize,
    pub enc_channels: Vec<usize>,
    pub kernels: Vec<(usize, usize)>,
    pub strides: Vec<(usize, usize)>,
    pub n_dprnn: usize,
    /// Per-direction width of the intra-frame BiLSTM.
    pub intra_hidden: usize,
    pub inter_hidden: usize,
}

/// Geometry of one encoder layer and its mirrored decoder layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerPlan {
    pub c_in: usize,
    pub c_out: usize,
    pub f_in: usize,
    pub f_out: usize,
    /// `(k_t, k_f)`
    pub kernel: (usize, usize),
    /// `(s_t, s_f)`
    pub stride: (usize, usize),
    pub freq_pad: (usize, usize),
}

impl LayerPlan {
    /// Causal forward convolution of the encoder layer.
    pub fn enc_geom(&self) -> ConvGeom {
        ConvGeom::causal(self.kernel, self.stride, self.freq_pad)
    }

    /// Forward geometry whose adjoint is the decoder's transposed convolution.
    pub fn dec_geom(&self) -> ConvGeom {
        ConvGeom::anticausal(self.kernel, self.stride, self.freq_pad)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset(Variant::Dpcrn1)
    }
}

impl ModelConfig {
    pub fn preset(variant: Variant) -> Self {
        let mut cfg = Self {
            variant,
            n_bins: 201,
            enc_channels: vec![32, 32, 32, 64, 128],
            kernels: vec![(5, 2), (3, 2), (3, 2), (3, 2), (3, 2)],
            strides: vec![(2, 1), (2, 1), (1, 1), (1, 1), (1, 1)],
            n_dprnn: 2,
            intra_hidden: 64,
            inter_hidden: 128,
        };
        if variant == Variant::Dpcrn3 {
            cfg.strides[2] = (2, 1);
            cfg.intra_hidden *= 2;
        }
        cfg
    }

    /// DPCRN-1 with 128 units per intra direction instead of 64.
    pub fn wide_intra() -> Self {
        Self {
            intra_hidden: 128,
            ..Self::default()
        }
    }

    /// Small model for the toy trainer.
    pub fn micro() -> Self {
        Self {
            variant: Variant::Dpcrn1,
            n_bins: 201,
            enc_channels: vec![8, 8, 16],
            kernels: vec![(5, 2), (3, 2), (3, 2)],
            strides: vec![(2, 1), (2, 1), (2, 1)],
            n_dprnn: 1,
            intra_hidden: 8,
            inter_hidden: 16,
        }
    }

    /// Model under 2000 trainable parameters for end-to-end gradient checks.
    pub fn gradcheck() -> Self {
        Self {
            variant: Variant::Dpcrn2,
            n_bins: 201,
            enc_channels: vec![3, 3, 3, 3],
            kernels: vec![(5, 2), (3, 2), (3, 2), (3, 2)],
            strides: vec![(2, 1), (2, 1), (2, 1), (2, 1)],
            n_dprnn: 1,
            intra_hidden: 2,
            inter_hidden: 3,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.enc_channels.len()
    }

    /// Channel count at the DPRNN.
    pub fn bottleneck_channels(&self) -> usize {
        *self.enc_channels.last().unwrap_or(&2)
    }

    /// Per-layer shapes. Each encoder layer maps `f_in` bins to
    /// `f_in / s_f` bins, padding frequency by the total needed for that size
    /// with the odd sample on the low side.
    pub fn plan(&self) -> Result<Vec<LayerPlan>> {
        let n = self.enc_channels.len();
        if n == 0 {
            return Err(Error::InvalidConfig("at least one encoder layer is required".into()));
        }
        if self.kernels.len() != n || self.strides.len() != n {
            return Err(Error::InvalidConfig(format!(
                "{} channels, {} kernels and {} strides",
                n,
                self.kernels.len(),
                self.strides.len()
            )));
        }
        let mut plans = Vec::with_capacity(n);
        let mut f = self.n_bins;
        let mut c = 2;
        for i in 0..n {
            let (kf, kt) = self.kernels[i];
            let (sf, st) = self.strides[i];
            let c_out = self.enc_channels[i];
            if kf == 0 || kt == 0 || sf == 0 || c_out == 0 {
                return Err(Error::InvalidConfig(format!("layer {i}: zero-sized kernel, stride or channels")));
            }
            if st != 1 {
                return Err(Error::InvalidConfig(format!("layer {i}: time stride must be 1 for frame streaming")));
            }
            let f_out = f / sf;
            if f_out == 0 {
                return Err(Error::InvalidConfig(format!("layer {i}: {f} bins cannot be strided by {sf}")));
            }
            let need = ((f_out - 1) * sf + kf) as isize - f as isize;
            if need < 0 {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: kernel {kf} narrower than stride {sf} drops input bins"
                )));
            }
            let need = need as usize;
            let lo = need.div_ceil(2);
            plans.push(LayerPlan {
                c_in: c,
                c_out,
                f_in: f,
                f_out,
                kernel: (kt, kf),
                stride: (st, sf),
                freq_pad: (lo, need - lo),
            });
            f = f_out;
            c = c_out;
        }
        Ok(plans)
    }

    /// Frequency length seen by the DPRNN modules.
    pub fn dprnn_freq(&self) -> Result<usize> {
        Ok(self.plan()?.last().map(|p| p.f_out).unwrap_or(self.n_bins))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_bins < 2 {
            return Err(Error::InvalidConfig("n_bins must be at least 2".into()));
        }
        if self.n_dprnn > 0 && (self.intra_hidden == 0 || self.inter_hidden == 0) {
            return Err(Error::InvalidConfig("DPRNN hidden widths must be positive".into()));
        }
        self.plan().map(|_| ())
    }

    /// Canonical `key=value` text, one key per line.
    pub fn to_text(&self) -> String {
        let pairs = |v: &[(usize, usize)]| v.iter().map(|(a, b)| format!("{a}x{b}")).collect::<Vec<_>>().join(",");
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant.name());
        let _ = writeln!(s, "n_bins={}", self.n_bins);
        let _ = writeln!(s, "enc_channels={}", list(&self.enc_channels));
        let _ = writeln!(s, "kernels={}", pairs(&self.kernels));
        let _ = writeln!(s, "strides={}", pairs(&self.strides));
        let _ = writeln!(s, "n_dprnn={}", self.n_dprnn);
        let _ = writeln!(s, "intra_hidden={}", self.intra_hidden);
        let _ = writeln!(s, "inter_hidden={}", self.inter_hidden);
        s
    }

    /// Parses [`ModelConfig::to_text`] output. Keys that are absent take the
    /// value of the variant's preset; `preset=micro` and `preset=gradcheck`
    /// select the small configurations instead.
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = parse_kv(text)?;
        Self::from_kv(&kv)
    }

    pub fn from_kv(kv: &IndexMap<String, String>) -> Result<Self> {
        let mut cfg = match kv.get("preset").map(String::as_str) {
            None => Self::preset(kv.get("variant").map(|v| v.parse()).transpose()?.unwrap_or(Variant::Dpcrn1)),
            Some("micro") => Self::micro(),
            Some("gradcheck") => Self::gradcheck(),
            Some("wide") => Self::wide_intra(),
            Some(p) => Self::preset(p.parse()?),
        };
        for (k, v) in kv {
            match k.as_str() {
                "preset" => {}
                "variant" => cfg.variant = v.parse()?,
                "n_bins" => cfg.n_bins = parse_num(k, v)?,
                "enc_channels" => cfg.enc_channels = parse_list(k, v)?,
                "kernels" => cfg.kernels = parse_pairs(k, v)?,
                "strides" => cfg.strides = parse_pairs(k, v)?,
                "n_dprnn" => cfg.n_dprnn = parse_num(k, v)?,
                "intra_hidden" => cfg.intra_hidden = parse_num(k, v)?,
                "inter_hidden" => cfg.inter_hidden = parse_num(k, v)?,
                _ => return Err(Error::InvalidConfig(format!("unknown model key {k:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<IndexMap<String, String>> {
    let mut out = IndexMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", n + 1)))?;
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::InvalidConfig(format!("duplicate key {:?}", k.trim())));
        }
    }
    Ok(out)
}

pub(crate) fn parse_num<N: std::str::FromStr>(k: &str, v: &str) -> Result<N> {
    v.parse().map_err(|_| Error::InvalidConfig(format!("{k}: cannot parse {v:?}")))
}

fn parse_list(k: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(k, x.trim())).collect()
}

fn parse_pairs(k: &str, v: &str) -> Result<Vec<(usize, usize)>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|p| {
            let (a, b) = p
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::InvalidConfig(format!("{k}: expected AxB, got {p:?}")))?;
            Ok((parse_num(k, a)?, parse_num(k, b)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_shape_algebra() {
        let plan = ModelConfig::default().plan().unwrap();
        let f: Vec<usize> = std::iter::once(plan[0].f_in).chain(plan.iter().map(|p| p.f_out)).collect();
        assert_eq!(f, [201, 100, 50, 50, 50, 50]);
        let pads: Vec<_> = plan.iter().map(|p| p.freq_pad).collect();
        assert_eq!(pads, [(1, 1), (1, 0), (1, 1), (1, 1), (1, 1)]);
        for p in &plan {
            let g = p.enc_geom();
            assert_eq!(g.out_dims(7, p.f_in), Some((7, p.f_out)));
            assert_eq!(p.dec_geom().transposed_dims(7, p.f_out), Some((7, p.f_in)));
        }
    }

    #[test]
    fn dpcrn3_halves_frequency_and_doubles_intra() {
        let c1 = ModelConfig::preset(Variant::Dpcrn1);
        let c3 = ModelConfig::preset(Variant::Dpcrn3);
        assert_eq!(c1.dprnn_freq().unwrap(), 50);
        assert_eq!(c3.dprnn_freq().unwrap(), 25);
        assert_eq!(c3.intra_hidden, 2 * c1.intra_hidden);
        assert_eq!(ModelConfig::preset(Variant::Dpcrn2).plan().unwrap(), c1.plan().unwrap());
    }

    #[test]
    fn text_round_trip() {
        for cfg in [
            ModelConfig::default(),
            ModelConfig::preset(Variant::Dpcrn3),
            ModelConfig::micro(),
            ModelConfig::gradcheck(),
        ] {
            assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
        let cfg = ModelConfig::from_text("preset=micro\nintra_hidden=4 # narrower\n").unwrap();
        assert_eq!(cfg.intra_hidden, 4);
        assert_eq!(cfg.enc_channels, ModelConfig::micro().enc_channels);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ModelConfig::from_text("bogus=1").is_err());
        assert!(ModelConfig::from_text("kernels=5x2").is_err());
        assert!(ModelConfig::from_text("strides=2x2,2x1,1x1,1x1,1x1").is_err());
        assert!(ModelConfig::from_text("enc_channels=\nkernels=\nstrides=").is_err());
        assert!(ModelConfig::from_text("kernels=1x2,3x2,3x2,3x2,3x2\nstrides=3x1,2x1,1x1,1x1,1x1").is_err());
        assert!(parse_kv("a=1\na=2").is_err());
        assert!(parse_kv("novalue").is_err());
    }
}
