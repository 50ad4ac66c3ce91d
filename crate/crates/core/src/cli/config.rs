//! Flat `key = value` experiment configuration with environment overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Disc, PatientSizes, PlantedLabel, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{Depth, Freeze, ModelConfig, Variant};
use crate::train::TrainPlan;

/// Environment variables `CXRAY_<KEY>` override file values; the key is
/// upper-cased with `.` replaced by `_` (e.g. `CXRAY_TRAIN_LR`).
pub const ENV_PREFIX: &str = "CXRAY_";

/// Every recognised key with its meaning, as printed by `cxray keys`.
pub const KEYS: &[(&str, &str)] = &[
    ("run.tag", "run name; defaults to the model tag"),
    ("run.out", "output root directory (default `runs`)"),
    ("run.seed", "seed for every random stream (default 0)"),
    ("data.csv", "Data_Entry CSV"),
    ("data.images", "image directory (default `<csv dir>/images`)"),
    ("data.train_val_list", "official train/val image list"),
    ("data.test_list", "official test image list"),
    ("split.path", "split plan JSON (default `<run.out>/split.json`)"),
    ("model.variant", "ots | ft | 1channel | large (default 1channel)"),
    ("model.depth", "38 | 50 | 101 (default 50)"),
    ("model.meta", "fuse age, gender and view position (default false)"),
    ("model.input_size", "override the variant's input size"),
    ("model.channels", "override the variant's input channels (1 or 3)"),
    ("model.extra_pool", "override the extra pooling after conv2_x"),
    ("model.width_divisor", "divide all channel widths (default 1)"),
    ("model.freeze", "override the variant's freeze policy: none | ots | ft"),
    ("model.pretrained", "checkpoint whose backbone initializes OTS/FT runs"),
    ("train.batch_size", "mini-batch size (default from the protocol)"),
    ("train.lr", "initial learning rate (default from the protocol)"),
    ("train.factor", "plateau decay factor (default 0.5)"),
    ("train.patience", "plateau patience in epochs (default 1)"),
    ("train.min_lr", "learning-rate floor (default 1e-6)"),
    ("train.max_epochs", "epoch cap (default 50)"),
    ("train.eval_batch_size", "batch size of evaluation passes (default 32)"),
    ("train.augment", "random rotation/crop/flip (default true)"),
    ("synth.patients", "synthetic patients (default 32)"),
    ("synth.images_per_patient", "fixed images per patient (default 1)"),
    ("synth.skewed_max", "heavy-tailed images per patient capped at this value"),
    ("synth.image_size", "synthetic image side length (default 64)"),
    ("synth.motif_label", "label drawn as a disc (default 0)"),
    ("synth.motif_radius", "disc radius in pixels (default 8)"),
    ("synth.prevalence", "positive rate of the motif label (default 0.5)"),
    ("synth.view_label", "label copied from the view bit"),
    ("synth.view_in_pixels", "mark AP images with a bright band"),
    ("synth.age_in_pixels", "brighten background with age"),
    ("synth.noise", "pixel noise standard deviation (default 8)"),
];

#[derive(Clone, Debug, Default)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<ConfigMap> {
        let mut values = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = k.trim().to_string();
            check_key(&key)?;
            values.insert(key, v.trim().to_string());
        }
        Ok(ConfigMap { values })
    }

    pub fn load(path: &Path) -> Result<ConfigMap> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ConfigMap::parse(&text)
    }

    /// Applies `CXRAY_*` variables from `vars`.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) {
        for (name, value) in vars {
            if let Some(rest) = name.strip_prefix(ENV_PREFIX) {
                if let Some((key, _)) = KEYS.iter().find(|(k, _)| env_name(k) == rest) {
                    self.values.insert(key.to_string(), value);
                }
            }
        }
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<()> {
        check_key(key)?;
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.values
            .get(key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`"))))
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        self.values
            .get(key)
            .map(|v| match v.to_ascii_lowercase().as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(Error::Config(format!("invalid boolean `{v}` for `{key}`"))),
            })
            .transpose()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.get_str(key).map(PathBuf::from)
    }
}

fn env_name(key: &str) -> String {
    key.to_ascii_uppercase().replace('.', "_")
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown configuration key `{key}`")))
    }
}

/// Typed view of a [`ConfigMap`].
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub map: ConfigMap,
    pub seed: u64,
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn new(map: ConfigMap) -> Result<ExperimentConfig> {
        Ok(ExperimentConfig {
            seed: map.get("run.seed")?.unwrap_or(0),
            out: map.path("run.out").unwrap_or_else(|| PathBuf::from("runs")),
            map,
        })
    }

    pub fn csv(&self) -> Result<PathBuf> {
        let p = self
            .map
            .path("data.csv")
            .ok_or_else(|| Error::Config("`data.csv` is required".into()))?;
        if !p.is_file() {
            return Err(Error::Config(format!("data.csv `{}` does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn images(&self) -> Result<PathBuf> {
        match self.map.path("data.images") {
            Some(p) => Ok(p),
            None => Ok(self.csv()?.parent().unwrap_or(Path::new(".")).join("images")),
        }
    }

    pub fn split_path(&self) -> PathBuf {
        self.map.path("split.path").unwrap_or_else(|| self.out.join("split.json"))
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let m = &self.map;
        let variant: Variant = m.get("model.variant")?.unwrap_or(Variant::OneChannel);
        let mut c = ModelConfig::variant(variant, m.get_bool("model.meta")?.unwrap_or(false));
        if let Some(d) = m.get::<Depth>("model.depth")? {
            c.depth = d;
        }
        if let Some(s) = m.get("model.input_size")? {
            c.input_size = s;
        }
        if let Some(ch) = m.get("model.channels")? {
            c.input_channels = ch;
        }
        if let Some(p) = m.get_bool("model.extra_pool")? {
            c.extra_pool_after_conv2 = p;
        }
        if let Some(w) = m.get("model.width_divisor")? {
            c.width_divisor = w;
        }
        if let Some(f) = m.get::<Freeze>("model.freeze")? {
            c.freeze = f;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn tag(&self) -> Result<String> {
        match self.map.get_str("run.tag") {
            Some(t) => Ok(t.to_string()),
            None => Ok(self.model()?.tag()),
        }
    }

    /// Protocol defaults for `base`, then any `train.*` overrides.
    pub fn plan(&self, base: TrainPlan) -> Result<TrainPlan> {
        let m = &self.map;
        let mut p = base;
        p.seed = self.seed;
        if let Some(v) = m.get("train.batch_size")? {
            p.batch_size = v;
        }
        if let Some(v) = m.get("train.lr")? {
            p.initial_lr = v;
        }
        if let Some(v) = m.get("train.factor")? {
            p.plateau_factor = v;
        }
        if let Some(v) = m.get("train.patience")? {
            p.patience = v;
        }
        if let Some(v) = m.get("train.min_lr")? {
            p.min_lr = v;
        }
        if let Some(v) = m.get("train.max_epochs")? {
            p.max_epochs = v;
        }
        if let Some(v) = m.get("train.eval_batch_size")? {
            p.eval_batch_size = v;
        }
        if let Some(v) = m.get_bool("train.augment")? {
            p.augment = v;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn synth(&self) -> Result<SynthSpec> {
        let m = &self.map;
        let mut s = SynthSpec::default();
        if let Some(v) = m.get("synth.patients")? {
            s.patients = v;
        }
        if let Some(v) = m.get("synth.images_per_patient")? {
            s.images_per_patient = PatientSizes::Fixed(v);
        }
        if let Some(v) = m.get("synth.skewed_max")? {
            s.images_per_patient = PatientSizes::Skewed { max: v };
        }
        if let Some(v) = m.get("synth.image_size")? {
            s.image_size = v;
        }
        let label = m.get("synth.motif_label")?.unwrap_or(0);
        let radius = m.get("synth.motif_radius")?.unwrap_or(8);
        let prevalence = m.get("synth.prevalence")?.unwrap_or(0.5);
        s.labels = vec![PlantedLabel {
            label,
            prevalence,
            motif: Some(Disc {
                radius,
                intensity: 240.0,
            }),
        }];
        s.view_label = m.get("synth.view_label")?;
        s.view_in_pixels = m.get_bool("synth.view_in_pixels")?.unwrap_or(false);
        s.age_in_pixels = m.get_bool("synth.age_in_pixels")?.unwrap_or(false);
        if let Some(v) = m.get("synth.noise")? {
            s.noise = v;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut m = ConfigMap::parse("# comment\nmodel.depth = 38\ntrain.lr=0.5 # inline\n\nrun.seed = 4\n").unwrap();
        m.apply_env(vec![
            ("CXRAY_TRAIN_LR".to_string(), "0.25".to_string()),
            ("OTHER_TRAIN_LR".to_string(), "9".to_string()),
        ]);
        let c = ExperimentConfig::new(m).unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.model().unwrap().depth, Depth::D38);
        let p = c.plan(TrainPlan::default()).unwrap();
        assert_eq!(p.initial_lr, 0.25);
        assert_eq!(p.seed, 4);
    }

    #[test]
    fn unknown_key_and_bad_value() {
        assert!(matches!(ConfigMap::parse("model.dpth = 38"), Err(Error::Config(_))));
        assert!(matches!(ConfigMap::parse("no equals sign"), Err(Error::Config(_))));
        let c = ExperimentConfig::new(ConfigMap::parse("model.depth = 42").unwrap()).unwrap();
        assert!(matches!(c.model(), Err(Error::Config(_))));
    }

    #[test]
    fn variant_defaults() {
        let c = ExperimentConfig::new(ConfigMap::parse("model.variant = large\nmodel.meta = true").unwrap()).unwrap();
        assert_eq!(c.tag().unwrap(), "ResNet-50-large-meta");
        assert_eq!(c.model().unwrap().input_size, 448);
    }
}
