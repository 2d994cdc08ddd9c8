use std::path::Path;

use super::{FitResult, GbmLccmParams, LccmParams, ModelKind, ModelParams, RestartRecord};
use crate::data::{ChoiceDataset, Schema, StandardizationRecord};
use crate::error::{Error, Result};
use crate::kv::KvDoc;
use crate::mixture::GbmMembershipParams;
use crate::mnl::MnlParams;

const FORMAT: &str = "lccm-model 1";

/// Everything needed to reuse an estimate: parameters, how the data was
/// read and transformed, and the fit statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub params: ModelParams,
    pub schema: Schema,
    pub standardization: StandardizationRecord,
    pub alt_ids: Vec<String>,
    pub attr_names: Vec<String>,
    pub cont_names: Vec<String>,
    pub bin_names: Vec<String>,
    pub n_persons: usize,
    /// Number of choice situations.
    pub n_obs: usize,
    pub marginal_ll: f64,
    pub joint_ll: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub ll_trace: Vec<f64>,
    pub ll_variance: f64,
    pub restarts: Vec<RestartRecord>,
}

impl FittedModel {
    pub fn new(fit: &FitResult, ds: &ChoiceDataset, schema: Schema, standardization: StandardizationRecord) -> Self {
        Self {
            params: fit.params.clone(),
            schema,
            standardization,
            alt_ids: ds.alt_ids().to_vec(),
            attr_names: ds.attr_names().to_vec(),
            cont_names: ds.cont_names().to_vec(),
            bin_names: ds.bin_names().to_vec(),
            n_persons: ds.n_persons(),
            n_obs: ds.n_situations(),
            marginal_ll: fit.marginal_ll,
            joint_ll: fit.joint_ll,
            iterations: fit.iterations,
            converged: fit.converged,
            ll_trace: fit.ll_trace.clone(),
            ll_variance: fit.ll_variance,
            restarts: fit.restarts.clone(),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.push("format", FORMAT);
        doc.push("kind", self.kind().tag());
        doc.push("classes", self.params.class_count());
        doc.push_list("names.alternatives", &self.alt_ids);
        doc.push_list("names.attributes", &self.attr_names);
        doc.push_list("names.continuous", &self.cont_names);
        doc.push_list("names.binary", &self.bin_names);
        for (k, b) in self.params.betas().iter().enumerate() {
            doc.push_floats(format!("beta.{k}"), &b.beta);
        }
        match &self.params {
            ModelParams::Mnl(_) => {}
            ModelParams::Lccm(p) => {
                for (k, g) in p.gamma.iter().enumerate() {
                    doc.push_floats(format!("gamma.{k}"), g);
                }
            }
            ModelParams::Gbm(p) => doc.extend(p.membership.to_kv().prefixed("membership")),
        }
        doc.extend(self.schema.to_kv().prefixed("schema"));
        doc.extend(self.standardization.to_kv().prefixed("standardization"));
        doc.push("fit.persons", self.n_persons);
        doc.push("fit.observations", self.n_obs);
        doc.push_floats("fit.marginal_ll", &[self.marginal_ll]);
        if let Some(j) = self.joint_ll {
            doc.push_floats("fit.joint_ll", &[j]);
        }
        doc.push("fit.iterations", self.iterations);
        doc.push("fit.converged", self.converged);
        doc.push_floats("fit.ll_variance", &[self.ll_variance]);
        doc.push_floats("fit.ll_trace", &self.ll_trace);
        doc.push("restart.count", self.restarts.len());
        for (i, r) in self.restarts.iter().enumerate() {
            doc.push(format!("restart.{i}.label"), &r.label);
            doc.push(format!("restart.{i}.stream"), r.stream);
            if let Some(v) = r.marginal_ll {
                doc.push_floats(format!("restart.{i}.marginal_ll"), &[v]);
            }
            if let Some(v) = r.joint_ll {
                doc.push_floats(format!("restart.{i}.joint_ll"), &[v]);
            }
            doc.push(format!("restart.{i}.iterations"), r.iterations);
            doc.push(format!("restart.{i}.converged"), r.converged);
            if let Some(e) = &r.error {
                doc.push(format!("restart.{i}.error"), e.replace(['\n', '\r'], " "));
            }
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let format = doc.require("format")?;
        if format != FORMAT {
            return Err(Error::Parse(format!("unsupported model format `{format}`")));
        }
        let k: usize = doc.parse_value("classes")?;
        if k == 0 {
            return Err(Error::Parse("model has no classes".into()));
        }
        let betas = (0..k)
            .map(|c| MnlParams::new(doc.floats(&format!("beta.{c}"))?))
            .collect::<Result<Vec<_>>>()?;
        let params = match doc.require("kind")? {
            "mnl" if k == 1 => ModelParams::Mnl(betas.into_iter().next().unwrap()),
            "lccm" => ModelParams::Lccm(LccmParams {
                gamma: (0..k - 1).map(|c| doc.floats(&format!("gamma.{c}"))).collect::<Result<_>>()?,
                betas,
            }),
            "gbm-lccm" => ModelParams::Gbm(GbmLccmParams {
                membership: GbmMembershipParams::from_kv(&doc.section("membership"))?,
                betas,
            }),
            other => return Err(Error::Parse(format!("unknown model kind `{other}` with {k} classes"))),
        };
        match &params {
            ModelParams::Lccm(p) => p.validate()?,
            ModelParams::Gbm(p) => p.validate()?,
            ModelParams::Mnl(_) => {}
        }
        let opt_float = |key: &str| -> Result<Option<f64>> {
            match doc.get(key) {
                None => Ok(None),
                Some(_) => Ok(Some(doc.parse_value(key)?)),
            }
        };
        let count: usize = doc.parse_value("restart.count")?;
        let restarts = (0..count)
            .map(|i| {
                Ok(RestartRecord {
                    label: doc.require(&format!("restart.{i}.label"))?.to_string(),
                    stream: doc.parse_value(&format!("restart.{i}.stream"))?,
                    marginal_ll: opt_float(&format!("restart.{i}.marginal_ll"))?,
                    joint_ll: opt_float(&format!("restart.{i}.joint_ll"))?,
                    iterations: doc.parse_value(&format!("restart.{i}.iterations"))?,
                    converged: doc.parse_value(&format!("restart.{i}.converged"))?,
                    error: doc.get(&format!("restart.{i}.error")).map(str::to_string),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self {
            params,
            schema: Schema::from_kv(&doc.section("schema"))?,
            standardization: StandardizationRecord::from_kv(&doc.section("standardization"))?,
            alt_ids: doc.list("names.alternatives")?,
            attr_names: doc.list("names.attributes")?,
            cont_names: doc.list("names.continuous")?,
            bin_names: doc.list("names.binary")?,
            n_persons: doc.parse_value("fit.persons")?,
            n_obs: doc.parse_value("fit.observations")?,
            marginal_ll: doc.parse_value("fit.marginal_ll")?,
            joint_ll: opt_float("fit.joint_ll")?,
            iterations: doc.parse_value("fit.iterations")?,
            converged: doc.parse_value("fit.converged")?,
            ll_trace: doc.floats("fit.ll_trace")?,
            ll_variance: doc.parse_value("fit.ll_variance")?,
            restarts,
        };
        if model.attr_names.len() != model.params.betas()[0].beta.len() {
            return Err(Error::Parse("attribute names do not match coefficients".into()));
        }
        Ok(model)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_kv(&KvDoc::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_kv().write(path)
    }
}
