use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A latent attribute dimension with `num_values` discrete values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentAttribute {
    pub name: String,
    pub num_values: usize,
}

impl LatentAttribute {
    pub fn new(name: &str, num_values: usize) -> Self {
        Self {
            name: name.to_string(),
            num_values,
        }
    }
}

/// Description of one synthetic classification task.
///
/// Structure (attribute vectors, class signatures, offsets) is drawn from
/// `world_seed`; sample noise is drawn from `seed`. Several runs can thus
/// share one class universe, and one pretrained encoder, while resampling
/// their data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskSpec {
    pub num_classes: usize,
    pub raw_feature_dim: usize,
    pub latent_attributes: Vec<LatentAttribute>,
    /// Attributes whose values tell classes apart. All others take one
    /// shared value across the task's classes.
    pub informative_attributes: Vec<String>,
    /// Training samples per class.
    pub samples_per_class: usize,
    pub val_samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub noise_std: f64,
    /// Weight `s` of the attribute component in each prototype; the
    /// class-specific offset gets `1 - s`.
    pub attribute_signal: f64,
    pub seed: u64,
    pub world_seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            num_classes: 16,
            raw_feature_dim: 32,
            latent_attributes: ["color", "size", "shape", "habitat", "behavior"]
                .iter()
                .map(|n| LatentAttribute::new(n, 4))
                .collect(),
            informative_attributes: vec!["color".into(), "shape".into()],
            samples_per_class: 16,
            val_samples_per_class: 4,
            test_samples_per_class: 20,
            noise_std: 0.1,
            attribute_signal: 0.8,
            seed: 0,
            world_seed: 0,
        }
    }
}

impl TaskSpec {
    pub fn attribute_names(&self) -> Vec<String> {
        self.latent_attributes.iter().map(|a| a.name.clone()).collect()
    }

    /// Index of each informative attribute in `latent_attributes`.
    pub fn informative_indices(&self) -> Result<Vec<usize>> {
        self.informative_attributes
            .iter()
            .map(|name| {
                self.latent_attributes
                    .iter()
                    .position(|a| &a.name == name)
                    .ok_or_else(|| Error::Spec(format!("informative attribute `{name}` is not a latent attribute")))
            })
            .collect()
    }

    /// Number of distinct informative signatures.
    pub fn signature_capacity(&self) -> Result<usize> {
        let mut cap: usize = 1;
        for i in self.informative_indices()? {
            cap = cap.saturating_mul(self.latent_attributes[i].num_values);
        }
        Ok(cap)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 1 {
            return Err(Error::Spec("num_classes must be at least 1".into()));
        }
        if self.raw_feature_dim == 0 {
            return Err(Error::Spec("raw_feature_dim must be positive".into()));
        }
        if self.latent_attributes.is_empty() {
            return Err(Error::Spec("at least one latent attribute is required".into()));
        }
        let mut names: Vec<&str> = self.latent_attributes.iter().map(|a| a.name.as_str()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Spec("latent attribute names must be unique".into()));
        }
        if let Some(a) = self.latent_attributes.iter().find(|a| a.num_values == 0) {
            return Err(Error::Spec(format!("attribute `{}` has no values", a.name)));
        }
        if let Some(a) = self
            .latent_attributes
            .iter()
            .find(|a| a.name.split_whitespace().count() == 0)
        {
            return Err(Error::Spec(format!("attribute name `{}` is blank", a.name)));
        }
        let mut inf = self.informative_indices()?;
        inf.sort();
        if inf.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Spec("informative attributes must be unique".into()));
        }
        if inf.is_empty() && self.num_classes > 1 {
            return Err(Error::Spec("classes need at least one informative attribute".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Spec(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !(0.0..=1.0).contains(&self.attribute_signal) {
            return Err(Error::Spec(format!(
                "attribute_signal must lie in [0, 1], got {}",
                self.attribute_signal
            )));
        }
        let cap = self.signature_capacity()?;
        if self.num_classes > cap {
            return Err(Error::Spec(format!(
                "{} classes need distinct informative signatures but only {cap} exist",
                self.num_classes
            )));
        }
        Ok(())
    }
}
