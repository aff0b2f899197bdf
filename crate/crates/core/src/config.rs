//! Pipeline configuration: every tunable with its default, plus the flat
//! `key = value` config-file format. Loading then re-emitting a config is
//! idempotent, which keeps configs diffable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Which columns cepstral mean subtraction touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmsMode {
    /// Every feature dimension (default).
    All,
    /// Only MFCCs and their derivatives.
    Cepstral,
    Off,
}

impl CmsMode {
    pub fn name(self) -> &'static str {
        match self {
            CmsMode::All => "all",
            CmsMode::Cepstral => "cepstral",
            CmsMode::Off => "off",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "all" => Some(CmsMode::All),
            "cepstral" => Some(CmsMode::Cepstral),
            "off" => Some(CmsMode::Off),
            _ => None,
        }
    }
}

/// How the reduced dimensionality is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PcaSelection {
    /// Smallest d retaining this eigenvalue mass fraction.
    Retention(f64),
    Fixed(usize),
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    /// 1 / feature-dimension at training time.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub preemph_a: f64,
    pub frame_ms: f64,
    pub hop_ms: f64,
    pub n_cepstra: usize,
    pub n_filters: usize,
    pub fft_size: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
    pub lpc_order: usize,
    pub delta_window: usize,
    pub vad_dynamic_range_db: f64,
    pub vad_floor_db: f64,
    /// Compute the VAD on the clean signal when mixing noise at test time.
    pub vad_on_clean: bool,
    pub cms: CmsMode,
    pub pca: PcaSelection,
    pub svm_c: f64,
    pub svm_gamma: GammaSpec,
    pub svm_tol: f64,
    pub svm_neg_ratio: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            preemph_a: 0.97,
            frame_ms: 25.0,
            hop_ms: 10.0,
            n_cepstra: 12,
            n_filters: 26,
            fft_size: 512,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-10,
            lpc_order: 12,
            delta_window: 2,
            vad_dynamic_range_db: 30.0,
            vad_floor_db: -60.0,
            vad_on_clean: true,
            cms: CmsMode::All,
            pca: PcaSelection::Retention(0.95),
            svm_c: 10.0,
            svm_gamma: GammaSpec::Auto,
            svm_tol: 1e-3,
            svm_neg_ratio: 20,
            seed: 42,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..1.0).contains(&self.preemph_a) {
            return fail(format!("preemph_a {} outside [0, 1)", self.preemph_a));
        }
        if self.frame_ms <= 0.0 || self.hop_ms <= 0.0 {
            return fail("frame_ms and hop_ms must be positive".into());
        }
        if self.hop_ms > self.frame_ms {
            return fail(format!(
                "hop_ms {} exceeds frame_ms {}",
                self.hop_ms, self.frame_ms
            ));
        }
        if self.n_cepstra < 1 || self.n_cepstra > self.n_filters {
            return fail(format!(
                "n_cepstra {} outside 1..={}",
                self.n_cepstra, self.n_filters
            ));
        }
        if !self.fft_size.is_power_of_two() {
            return fail(format!("fft_size {} is not a power of two", self.fft_size));
        }
        if self.fmin_hz < 0.0 || self.fmax_hz <= self.fmin_hz {
            return fail("need 0 <= fmin_hz < fmax_hz".into());
        }
        if self.log_floor <= 0.0 {
            return fail("log_floor must be positive".into());
        }
        if self.lpc_order == 0 || self.lpc_order % 2 != 0 {
            return fail(format!("lpc_order {} must be even and positive", self.lpc_order));
        }
        if self.delta_window == 0 {
            return fail("delta_window must be >= 1".into());
        }
        if self.vad_dynamic_range_db <= 0.0 {
            return fail("vad_dynamic_range_db must be positive".into());
        }
        match self.pca {
            PcaSelection::Retention(r) if !(r > 0.0 && r <= 1.0) => {
                return fail(format!("pca_retention {r} outside (0, 1]"));
            }
            PcaSelection::Fixed(0) => return fail("pca_fixed_d must be >= 1".into()),
            _ => {}
        }
        if self.svm_c <= 0.0 {
            return fail("svm_c must be positive".into());
        }
        if let GammaSpec::Fixed(g) = self.svm_gamma {
            if g <= 0.0 || !g.is_finite() {
                return fail(format!("svm_gamma {g} must be positive and finite"));
            }
        }
        if self.svm_tol <= 0.0 {
            return fail("svm_tol must be positive".into());
        }
        if self.svm_neg_ratio < 1 {
            return fail("svm_neg_ratio must be >= 1".into());
        }
        Ok(())
    }

    /// Emit the effective configuration in the config-file format.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        kv("preemph_a", self.preemph_a.to_string());
        kv("frame_ms", self.frame_ms.to_string());
        kv("hop_ms", self.hop_ms.to_string());
        kv("n_cepstra", self.n_cepstra.to_string());
        kv("n_filters", self.n_filters.to_string());
        kv("fft_size", self.fft_size.to_string());
        kv("fmin_hz", self.fmin_hz.to_string());
        kv("fmax_hz", self.fmax_hz.to_string());
        kv("log_floor", format!("{:e}", self.log_floor));
        kv("lpc_order", self.lpc_order.to_string());
        kv("delta_window", self.delta_window.to_string());
        kv("vad_dynamic_range_db", self.vad_dynamic_range_db.to_string());
        kv("vad_floor_db", self.vad_floor_db.to_string());
        kv("vad_on_clean", self.vad_on_clean.to_string());
        kv("cms", self.cms.name().to_string());
        match self.pca {
            PcaSelection::Retention(r) => {
                kv("pca", "retention".to_string());
                kv("pca_retention", r.to_string());
            }
            PcaSelection::Fixed(d) => {
                kv("pca", "fixed".to_string());
                kv("pca_fixed_d", d.to_string());
            }
            PcaSelection::Off => kv("pca", "off".to_string()),
        }
        kv("svm_c", self.svm_c.to_string());
        match self.svm_gamma {
            GammaSpec::Auto => kv("svm_gamma", "auto".to_string()),
            GammaSpec::Fixed(g) => kv("svm_gamma", g.to_string()),
        }
        kv("svm_tol", format!("{:e}", self.svm_tol));
        kv("svm_neg_ratio", self.svm_neg_ratio.to_string());
        kv("seed", self.seed.to_string());
        out
    }

    /// Parse the flat key = value format; unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", idx + 1))
            })?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        Self::from_pairs(kv)
    }

    fn from_pairs(mut kv: BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        fn take<T: std::str::FromStr>(
            kv: &mut BTreeMap<String, String>,
            key: &str,
            slot: &mut T,
        ) -> Result<()> {
            if let Some(v) = kv.remove(key) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: `{v}`")))?;
            }
            Ok(())
        }
        take(&mut kv, "preemph_a", &mut cfg.preemph_a)?;
        take(&mut kv, "frame_ms", &mut cfg.frame_ms)?;
        take(&mut kv, "hop_ms", &mut cfg.hop_ms)?;
        take(&mut kv, "n_cepstra", &mut cfg.n_cepstra)?;
        take(&mut kv, "n_filters", &mut cfg.n_filters)?;
        take(&mut kv, "fft_size", &mut cfg.fft_size)?;
        take(&mut kv, "fmin_hz", &mut cfg.fmin_hz)?;
        take(&mut kv, "fmax_hz", &mut cfg.fmax_hz)?;
        take(&mut kv, "log_floor", &mut cfg.log_floor)?;
        take(&mut kv, "lpc_order", &mut cfg.lpc_order)?;
        take(&mut kv, "delta_window", &mut cfg.delta_window)?;
        take(&mut kv, "vad_dynamic_range_db", &mut cfg.vad_dynamic_range_db)?;
        take(&mut kv, "vad_floor_db", &mut cfg.vad_floor_db)?;
        take(&mut kv, "vad_on_clean", &mut cfg.vad_on_clean)?;
        if let Some(v) = kv.remove("cms") {
            cfg.cms = CmsMode::from_name(&v)
                .ok_or_else(|| Error::InvalidConfig(format!("bad cms mode `{v}`")))?;
        }
        let pca_kind = kv.remove("pca");
        let pca_retention = kv.remove("pca_retention");
        let pca_fixed = kv.remove("pca_fixed_d");
        cfg.pca = match pca_kind.as_deref() {
            None => cfg.pca,
            Some("retention") => {
                let r = match pca_retention {
                    Some(v) => v
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad pca_retention `{v}`")))?,
                    None => 0.95,
                };
                PcaSelection::Retention(r)
            }
            Some("fixed") => {
                let v = pca_fixed.ok_or_else(|| {
                    Error::InvalidConfig("pca = fixed requires pca_fixed_d".into())
                })?;
                PcaSelection::Fixed(
                    v.parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad pca_fixed_d `{v}`")))?,
                )
            }
            Some("off") => PcaSelection::Off,
            Some(other) => {
                return Err(Error::InvalidConfig(format!("bad pca mode `{other}`")));
            }
        };
        take(&mut kv, "svm_c", &mut cfg.svm_c)?;
        if let Some(v) = kv.remove("svm_gamma") {
            cfg.svm_gamma = if v == "auto" {
                GammaSpec::Auto
            } else {
                GammaSpec::Fixed(
                    v.parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad svm_gamma `{v}`")))?,
                )
            };
        }
        take(&mut kv, "svm_tol", &mut cfg.svm_tol)?;
        take(&mut kv, "svm_neg_ratio", &mut cfg.svm_neg_ratio)?;
        take(&mut kv, "seed", &mut cfg.seed)?;

        if let Some(key) = kv.keys().next() {
            return Err(Error::InvalidConfig(format!("unknown key `{key}`")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}
