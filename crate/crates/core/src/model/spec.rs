use crate::compute::UpsampleMode;
use crate::error::{Error, Result};
use crate::kv::{format_list, parse_list, KvDoc};

/// Square input sizes of each scale, coarsest first; each doubles the previous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleConfig {
    sizes: Vec<usize>,
}

impl ScaleConfig {
    /// `count` scales ending at `top`, e.g. `new(32, 4)` gives 4, 8, 16, 32.
    pub fn new(top: usize, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("at least one scale is required".into()));
        }
        let factor = 1usize << (count - 1);
        if top == 0 || !top.is_multiple_of(factor) {
            return Err(Error::Shape(format!(
                "size {top} is not divisible by 2^{} = {factor} for {count} scales",
                count - 1
            )));
        }
        let base = top / factor;
        Ok(Self {
            sizes: (0..count).map(|k| base << k).collect(),
        })
    }

    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        if sizes[0] == 0 || sizes.windows(2).any(|w| w[1] != 2 * w[0]) {
            return Err(Error::Config(format!(
                "scale sizes {sizes:?} must double at every step"
            )));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn top(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn size(&self, k: usize) -> usize {
        self.sizes[k]
    }

    /// Same number of scales, rescaled to a different top size.
    pub fn with_top(&self, top: usize) -> Result<Self> {
        Self::new(top, self.count())
    }
}

/// Convolution stack of one generator scale: `in -> maps[0] -> ... -> out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvStack {
    pub maps: Vec<usize>,
    pub kernels: Vec<usize>,
}

impl ConvStack {
    pub fn new(maps: &[usize], kernels: &[usize]) -> Self {
        Self {
            maps: maps.to_vec(),
            kernels: kernels.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub frames_in: usize,
    pub frames_out: usize,
    pub channels: usize,
    pub upsample: UpsampleMode,
    /// One stack per scale, coarsest first.
    pub scales: Vec<ConvStack>,
}

impl GeneratorSpec {
    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn in_channels(&self) -> usize {
        self.frames_in * self.channels
    }

    pub fn out_channels(&self) -> usize {
        self.frames_out * self.channels
    }

    /// Input channels seen by the stack of scale `k` (0-based).
    pub fn stack_in_channels(&self, k: usize) -> usize {
        if k == 0 {
            self.in_channels()
        } else {
            self.in_channels() + self.out_channels()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames_in == 0 || self.frames_out == 0 || self.channels == 0 {
            return Err(Error::Config(
                "frame and channel counts must be positive".into(),
            ));
        }
        if self.scales.is_empty() {
            return Err(Error::Config("generator needs at least one scale".into()));
        }
        for (k, s) in self.scales.iter().enumerate() {
            if s.kernels.len() != s.maps.len() + 1 {
                return Err(Error::Config(format!(
                    "generator scale {}: {} kernel sizes for {} feature-map layers (need {})",
                    k + 1,
                    s.kernels.len(),
                    s.maps.len(),
                    s.maps.len() + 1
                )));
            }
            if let Some(&bad) = s.kernels.iter().find(|&&k| k % 2 == 0) {
                return Err(Error::Config(format!(
                    "generator scale {}: kernel size {bad} is not odd",
                    k + 1
                )));
            }
            if s.maps.contains(&0) {
                return Err(Error::Config(format!(
                    "generator scale {}: zero feature maps",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// One discriminator scale: unpadded convolutions, optional 2x2 max
/// pooling, then fully connected layers and a single sigmoid unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscScale {
    pub maps: Vec<usize>,
    pub kernels: Vec<usize>,
    pub pool: bool,
    pub fc: Vec<usize>,
}

impl DiscScale {
    pub fn new(maps: &[usize], kernels: &[usize], pool: bool, fc: &[usize]) -> Self {
        Self {
            maps: maps.to_vec(),
            kernels: kernels.to_vec(),
            pool,
            fc: fc.to_vec(),
        }
    }

    /// Spatial size after the convolutions and pooling, for input size `s`.
    pub fn feature_size(&self, s: usize) -> Result<usize> {
        let mut size = s;
        for &k in &self.kernels {
            if k > size {
                return Err(Error::Shape(format!(
                    "kernel {k} larger than feature map {size}"
                )));
            }
            size = size - k + 1;
        }
        if self.pool {
            if !size.is_multiple_of(2) {
                return Err(Error::Shape(format!(
                    "pooling needs an even feature map, got {size}"
                )));
            }
            size /= 2;
        }
        Ok(size)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscriminatorSpec {
    pub frames_in: usize,
    pub frames_out: usize,
    pub channels: usize,
    pub scales: Vec<DiscScale>,
}

impl DiscriminatorSpec {
    pub fn in_channels(&self) -> usize {
        (self.frames_in + self.frames_out) * self.channels
    }

    pub fn validate(&self, sizes: &ScaleConfig) -> Result<()> {
        if self.scales.len() != sizes.count() {
            return Err(Error::Config(format!(
                "discriminator has {} scales, model has {}",
                self.scales.len(),
                sizes.count()
            )));
        }
        for (k, s) in self.scales.iter().enumerate() {
            if s.kernels.len() != s.maps.len() {
                return Err(Error::Config(format!(
                    "discriminator scale {}: {} kernels for {} conv layers",
                    k + 1,
                    s.kernels.len(),
                    s.maps.len()
                )));
            }
            if s.maps.contains(&0) || s.fc.contains(&0) {
                return Err(Error::Config(format!(
                    "discriminator scale {}: zero-width layer",
                    k + 1
                )));
            }
            s.feature_size(sizes.size(k))
                .map_err(|e| Error::Config(format!("discriminator scale {}: {e}", k + 1)))?;
        }
        Ok(())
    }
}

/// Complete architecture: training scales, generator, optional discriminator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub scales: ScaleConfig,
    pub generator: GeneratorSpec,
    pub discriminator: Option<DiscriminatorSpec>,
}

pub const PRESETS: &[&str] = &["table1-4to1", "table3-8to8", "desk-4to1", "desk-bimodal"];

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.generator.num_scales() != self.scales.count() {
            return Err(Error::Config(format!(
                "generator has {} scales, scale config has {}",
                self.generator.num_scales(),
                self.scales.count()
            )));
        }
        if let Some(d) = &self.discriminator {
            if (d.frames_in, d.frames_out, d.channels)
                != (
                    self.generator.frames_in,
                    self.generator.frames_out,
                    self.generator.channels,
                )
            {
                return Err(Error::Config(
                    "generator and discriminator disagree on frame layout".into(),
                ));
            }
            d.validate(&self.scales)?;
        }
        Ok(())
    }

    /// Named architectures. The two `table*` presets reproduce the published
    /// layer lists (with a 3x3 layer added to the third generator scale of
    /// the 4-to-1 model, whose kernel list is one entry short); the `desk*`
    /// presets are small enough to train on a CPU in minutes.
    pub fn preset(name: &str) -> Result<Self> {
        let spec = match name {
            "table1-4to1" => {
                let g = vec![
                    ConvStack::new(&[128, 256, 128], &[3, 3, 3, 3]),
                    ConvStack::new(&[128, 256, 128], &[5, 3, 3, 5]),
                    ConvStack::new(&[128, 256, 512, 256, 128], &[5, 3, 3, 3, 3, 5]),
                    ConvStack::new(&[128, 256, 512, 256, 128], &[7, 5, 5, 5, 5, 7]),
                ];
                let d = vec![
                    DiscScale::new(&[64], &[3], false, &[512, 256]),
                    DiscScale::new(&[64, 128, 128], &[3, 3, 3], false, &[1024, 512]),
                    DiscScale::new(&[128, 256, 256], &[5, 5, 5], false, &[1024, 512]),
                    DiscScale::new(&[128, 256, 512, 128], &[7, 7, 5, 5], true, &[1024, 512]),
                ];
                Self::assemble(32, 4, 1, 3, g, Some(d))
            }
            "table3-8to8" => {
                let g = vec![
                    ConvStack::new(&[16, 32, 64], &[3, 3, 3, 3]),
                    ConvStack::new(&[16, 32, 64], &[5, 3, 3, 3]),
                    ConvStack::new(&[32, 64, 128], &[5, 5, 5, 5]),
                    ConvStack::new(&[32, 64, 128, 128], &[7, 5, 5, 5, 5]),
                ];
                let d = vec![
                    DiscScale::new(&[16], &[3], false, &[128, 64]),
                    DiscScale::new(&[16, 32, 32], &[3, 3, 3], false, &[256, 128]),
                    DiscScale::new(&[32, 64, 64], &[5, 5, 5], false, &[256, 128]),
                    DiscScale::new(&[32, 64, 128, 128], &[7, 7, 5, 5], true, &[256, 128]),
                ];
                Self::assemble(32, 8, 8, 3, g, Some(d))
            }
            "desk-4to1" => {
                let g = vec![
                    ConvStack::new(&[16, 32, 16], &[3, 3, 3, 3]),
                    ConvStack::new(&[16, 32, 16], &[5, 3, 3, 5]),
                ];
                let d = vec![
                    DiscScale::new(&[8], &[3], false, &[32]),
                    DiscScale::new(&[8, 16], &[3, 3], false, &[32]),
                ];
                Self::assemble(16, 4, 1, 1, g, Some(d))
            }
            "desk-bimodal" => {
                let g = vec![
                    ConvStack::new(&[8, 8], &[3, 3, 3]),
                    ConvStack::new(&[8, 8], &[3, 3, 3]),
                ];
                let d = vec![
                    DiscScale::new(&[8], &[3], false, &[16]),
                    DiscScale::new(&[8, 8], &[3, 3], false, &[16]),
                ];
                Self::assemble(8, 3, 1, 1, g, Some(d))
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown model preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        }?;
        Ok(spec)
    }

    fn assemble(
        top: usize,
        frames_in: usize,
        frames_out: usize,
        channels: usize,
        g: Vec<ConvStack>,
        d: Option<Vec<DiscScale>>,
    ) -> Result<Self> {
        let scales = ScaleConfig::new(top, g.len())?;
        let spec = Self {
            scales,
            generator: GeneratorSpec {
                frames_in,
                frames_out,
                channels,
                upsample: UpsampleMode::Bilinear,
                scales: g,
            },
            discriminator: d.map(|scales| DiscriminatorSpec {
                frames_in,
                frames_out,
                channels,
                scales,
            }),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Overrides the per-frame channel count of both networks.
    pub fn with_channels(mut self, channels: usize) -> Result<Self> {
        self.generator.channels = channels;
        if let Some(d) = self.discriminator.as_mut() {
            d.channels = channels;
        }
        self.validate()?;
        Ok(self)
    }

    /// Writes every architectural field into `section` of `doc`.
    pub fn write_kv(&self, doc: &mut KvDoc, section: &str) {
        let g = &self.generator;
        doc.set(section, "frames_in", g.frames_in);
        doc.set(section, "frames_out", g.frames_out);
        doc.set(section, "channels", g.channels);
        doc.set(section, "scale_top", self.scales.top());
        doc.set(section, "scale_count", self.scales.count());
        doc.set(section, "upsample", g.upsample.as_str());
        for (k, s) in g.scales.iter().enumerate() {
            doc.set(section, &format!("g{}.maps", k + 1), format_list(&s.maps));
            doc.set(
                section,
                &format!("g{}.kernels", k + 1),
                format_list(&s.kernels),
            );
        }
        doc.set(section, "discriminator", self.discriminator.is_some());
        if let Some(d) = &self.discriminator {
            for (k, s) in d.scales.iter().enumerate() {
                doc.set(section, &format!("d{}.maps", k + 1), format_list(&s.maps));
                doc.set(
                    section,
                    &format!("d{}.kernels", k + 1),
                    format_list(&s.kernels),
                );
                doc.set(section, &format!("d{}.pool", k + 1), s.pool);
                doc.set(section, &format!("d{}.fc", k + 1), format_list(&s.fc));
            }
        }
    }

    /// Canonical text form, used inside checkpoints and by spec dumps.
    pub fn to_canonical_text(&self) -> String {
        let mut doc = KvDoc::new();
        self.write_kv(&mut doc, "model");
        doc.to_string()
    }

    pub fn from_canonical_text(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text)?;
        Self::from_kv(&doc, "model")
    }

    /// Keys a `[model]` section may contain.
    pub fn allowed_keys(doc: &KvDoc, section: &str) -> Vec<String> {
        let mut keys: Vec<String> = [
            "preset",
            "frames_in",
            "frames_out",
            "channels",
            "scale_top",
            "scale_count",
            "upsample",
            "discriminator",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let count = doc
            .get(section, "scale_count")
            .and_then(|v| v.parse::<usize>().ok())
            .unwrap_or(4)
            .max(4);
        for k in 1..=count {
            for f in ["maps", "kernels"] {
                keys.push(format!("g{k}.{f}"));
            }
            for f in ["maps", "kernels", "pool", "fc"] {
                keys.push(format!("d{k}.{f}"));
            }
        }
        keys
    }

    /// Builds a spec from `section`: an optional `preset` supplies defaults and
    /// any explicit key overrides it.
    pub fn from_kv(doc: &KvDoc, section: &str) -> Result<Self> {
        let allowed = Self::allowed_keys(doc, section);
        let allowed: Vec<&str> = allowed.iter().map(String::as_str).collect();
        doc.check_keys(section, &allowed)?;

        let mut base = KvDoc::new();
        if let Some(name) = doc.get(section, "preset") {
            Self::preset(name)?.write_kv(&mut base, section);
        }
        if let Some(entries) = doc.section(section) {
            for (k, v) in entries {
                if k != "preset" {
                    base.set(section, k, v);
                }
            }
        }
        let req = |key: &str| -> Result<&str> {
            base.get(section, key).ok_or_else(|| {
                Error::Config(format!("[{section}] missing `{key}` (and no preset given)"))
            })
        };
        let num = |key: &str| -> Result<usize> {
            req(key)?
                .parse()
                .map_err(|_| Error::Config(format!("[{section}] {key}: expected an integer")))
        };
        let frames_in = num("frames_in")?;
        let frames_out = num("frames_out")?;
        let channels = num("channels")?;
        let scales = ScaleConfig::new(num("scale_top")?, num("scale_count")?)?;
        let upsample = UpsampleMode::parse(base.get(section, "upsample").unwrap_or("bilinear"))
            .ok_or_else(|| {
                Error::Config(format!("[{section}] upsample must be bilinear or nearest"))
            })?;
        let mut g = Vec::new();
        for k in 1..=scales.count() {
            g.push(ConvStack {
                maps: parse_list(req(&format!("g{k}.maps"))?)?,
                kernels: parse_list(req(&format!("g{k}.kernels"))?)?,
            });
        }
        let with_d: bool = base
            .get(section, "discriminator")
            .unwrap_or("false")
            .parse()
            .map_err(|_| {
                Error::Config(format!("[{section}] discriminator must be true or false"))
            })?;
        let discriminator = if with_d {
            let mut d = Vec::new();
            for k in 1..=scales.count() {
                d.push(DiscScale {
                    maps: parse_list(req(&format!("d{k}.maps"))?)?,
                    kernels: parse_list(req(&format!("d{k}.kernels"))?)?,
                    pool: req(&format!("d{k}.pool"))?.parse().map_err(|_| {
                        Error::Config(format!("[{section}] d{k}.pool must be true or false"))
                    })?,
                    fc: parse_list(req(&format!("d{k}.fc"))?)?,
                });
            }
            Some(DiscriminatorSpec {
                frames_in,
                frames_out,
                channels,
                scales: d,
            })
        } else {
            None
        };
        let spec = Self {
            scales,
            generator: GeneratorSpec {
                frames_in,
                frames_out,
                channels,
                upsample,
                scales: g,
            },
            discriminator,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_config_sizes() {
        assert_eq!(ScaleConfig::new(32, 4).unwrap().sizes(), &[4, 8, 16, 32]);
        assert_eq!(ScaleConfig::new(64, 4).unwrap().sizes(), &[8, 16, 32, 64]);
        assert_eq!(ScaleConfig::new(7, 1).unwrap().sizes(), &[7]);
        assert!(ScaleConfig::new(36, 4).is_err());
        assert!(ScaleConfig::new(32, 0).is_err());
        assert!(ScaleConfig::from_sizes(vec![4, 8, 12]).is_err());
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for name in PRESETS {
            let spec = ModelSpec::preset(name).unwrap();
            let again = ModelSpec::from_canonical_text(&spec.to_canonical_text()).unwrap();
            assert_eq!(again, spec, "{name}");
        }
        assert!(ModelSpec::preset("nope").is_err());
    }

    #[test]
    fn mismatched_kernel_list_rejected() {
        let mut spec = ModelSpec::preset("desk-4to1").unwrap();
        spec.generator.scales[0].kernels.pop();
        assert!(spec.validate().is_err());
        let mut spec = ModelSpec::preset("desk-4to1").unwrap();
        spec.generator.scales[1].kernels[0] = 4;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn kv_overrides_preset_and_rejects_unknown_keys() {
        let doc = KvDoc::parse("[model]\npreset = table1-4to1\nchannels = 1\n").unwrap();
        let spec = ModelSpec::from_kv(&doc, "model").unwrap();
        assert_eq!(spec.generator.channels, 1);
        assert_eq!(spec.discriminator.unwrap().channels, 1);
        let doc = KvDoc::parse("[model]\npreset = table1-4to1\nwidth = 3\n").unwrap();
        assert!(ModelSpec::from_kv(&doc, "model").is_err());
    }
}
